//! Synthetic source/target domain pairs and the i.i.d. target batch stream.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{rng_for, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// Samples plus optional class labels.
///
/// Target labels exist only so that evaluation can score predictions; the
/// adaptation routines take bare sample matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    domain: Domain,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        domain: Domain,
    ) -> Result<Self> {
        if let Some(y) = &labels {
            if y.len() != x.rows() {
                return Err(Error::shape("Dataset::new", x.rows(), y.len()));
            }
            if let Some(&bad) = y.iter().find(|&&v| v >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    classes: num_classes,
                });
            }
        }
        Ok(Self {
            x,
            labels,
            num_classes,
            domain,
        })
    }

    pub fn samples(&self) -> &Matrix {
        &self.x
    }

    /// Ground truth, for evaluation and source training only.
    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn class_counts(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|y| {
            let mut c = vec![0; self.num_classes];
            for &v in y {
                c[v] += 1;
            }
            c
        })
    }

    /// Writes `x0,..,x{d-1},label`; the label column is blank when unlabeled.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let header: Vec<String> = (0..self.input_dim()).map(|j| format!("x{j}")).collect();
        let _ = writeln!(s, "{},label", header.join(","));
        for i in 0..self.len() {
            for v in self.x.row(i) {
                let _ = write!(s, "{v:.16e},");
            }
            if let Some(y) = &self.labels {
                let _ = write!(s, "{}", y[i]);
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Moons,
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainPairConfig {
    pub family: Family,
    /// Ignored for moons, which always has two classes.
    pub num_classes: usize,
    pub n_per_class: usize,
    pub noise_sd: f64,
    /// Blob centers sit on a circle of this radius.
    pub blob_radius: f64,
    /// Target rotation about the family's nominal center, in degrees.
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub seed: u64,
}

impl Default for DomainPairConfig {
    fn default() -> Self {
        Self::moons_rot30()
    }
}

impl DomainPairConfig {
    /// Two moons, 500 points per class and domain, target rotated by 30°.
    pub fn moons_rot30() -> Self {
        Self {
            family: Family::Moons,
            num_classes: 2,
            n_per_class: 500,
            noise_sd: 0.1,
            blob_radius: 0.0,
            rotation_deg: 30.0,
            translation: [0.0, 0.0],
            seed: 0,
        }
    }

    /// Five unit-variance blobs, 250 points per class, target rotated by 25°
    /// and translated.
    pub fn blobs_5c() -> Self {
        Self {
            family: Family::Blobs,
            num_classes: 5,
            n_per_class: 250,
            noise_sd: 1.0,
            blob_radius: 4.0,
            rotation_deg: 25.0,
            translation: [0.5, -0.5],
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "moons-rot30" => Some(Self::moons_rot30()),
            "blobs-5c" => Some(Self::blobs_5c()),
            _ => None,
        }
    }

    pub fn classes(&self) -> usize {
        match self.family {
            Family::Moons => 2,
            Family::Blobs => self.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::Config("n_per_class must be positive".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be >= 0".into()));
        }
        if self.family == Family::Blobs && self.num_classes < 2 {
            return Err(Error::Config("blobs needs at least 2 classes".into()));
        }
        Ok(())
    }

    fn center(&self) -> [f64; 2] {
        match self.family {
            Family::Moons => [0.5, 0.25],
            Family::Blobs => [0.0, 0.0],
        }
    }

    /// Nominal class means before any shift (blobs only).
    pub fn blob_means(&self) -> Vec<[f64; 2]> {
        (0..self.num_classes)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / self.num_classes as f64;
                [self.blob_radius * a.cos(), self.blob_radius * a.sin()]
            })
            .collect()
    }

    /// Applies the configured rotation about the family center, then the translation.
    pub fn shift_point(&self, p: [f64; 2]) -> [f64; 2] {
        let [cx, cy] = self.center();
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        [
            cx + c * dx - s * dy + self.translation[0],
            cy + s * dx + c * dy + self.translation[1],
        ]
    }
}

fn sample_family<R: Rng + ?Sized>(
    cfg: &DomainPairConfig,
    rng: &mut R,
) -> (Vec<[f64; 2]>, Vec<usize>) {
    let noise = Normal::new(0.0, cfg.noise_sd).expect("noise_sd validated");
    let mut pts = Vec::with_capacity(cfg.n_per_class * cfg.classes());
    let mut labels = Vec::with_capacity(pts.capacity());
    match cfg.family {
        Family::Moons => {
            let t = Uniform::new_inclusive(0.0, PI).expect("finite range");
            for k in 0..2 {
                for _ in 0..cfg.n_per_class {
                    let a = t.sample(rng);
                    let base = if k == 0 {
                        [a.cos(), a.sin()]
                    } else {
                        [1.0 - a.cos(), 0.5 - a.sin()]
                    };
                    pts.push([base[0] + noise.sample(rng), base[1] + noise.sample(rng)]);
                    labels.push(k);
                }
            }
        }
        Family::Blobs => {
            for (k, m) in cfg.blob_means().into_iter().enumerate() {
                for _ in 0..cfg.n_per_class {
                    pts.push([m[0] + noise.sample(rng), m[1] + noise.sample(rng)]);
                    labels.push(k);
                }
            }
        }
    }
    (pts, labels)
}

fn to_matrix(pts: &[[f64; 2]]) -> Matrix {
    Matrix::from_rows(pts).expect("fixed width")
}

/// Labeled source domain and a target domain drawn independently from the same
/// family and then shifted.
pub fn make_domain_pair(cfg: &DomainPairConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let classes = cfg.classes();
    let (src_pts, src_y) = sample_family(cfg, &mut rng_for(cfg.seed, Purpose::SourceData));
    let (tgt_pts, tgt_y) = sample_family(cfg, &mut rng_for(cfg.seed, Purpose::TargetData));
    let tgt_pts: Vec<[f64; 2]> = tgt_pts.into_iter().map(|p| cfg.shift_point(p)).collect();
    let source = Dataset::new(to_matrix(&src_pts), Some(src_y), classes, Domain::Source)?;
    let target = Dataset::new(to_matrix(&tgt_pts), Some(tgt_y), classes, Domain::Target)?;
    Ok((source, target))
}

/// An ordered partition of target indices into arrival batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchStream {
    pub batches: Vec<Vec<usize>>,
    pub batch_size: usize,
}

impl BatchStream {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.batches.iter().map(Vec::as_slice)
    }
}

/// One seeded shuffle of `0..n`, then contiguous chunks of `batch_size`.
/// A batch size larger than `n` yields a single batch.
pub fn stream_batches(n: usize, batch_size: usize, seed: u64) -> Result<BatchStream> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, Purpose::BatchStream));
    Ok(BatchStream {
        batches: order.chunks(batch_size).map(<[usize]>::to_vec).collect(),
        batch_size,
    })
}
