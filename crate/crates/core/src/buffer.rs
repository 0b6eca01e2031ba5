//! Class-balanced replay buffer and its manager.
//!
//! Every class owns `floor(capacity / C)` slots. After a batch has been used for
//! adaptation, the manager keeps the most confident incoming samples per
//! predicted class and backfills any free slots with random survivors from the
//! previous state, grouped by their labels under the current model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::netcore::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    /// Raw input sample.
    pub sample: Vec<f64>,
    pub predicted_label: usize,
    /// Max softmax probability when the sample was admitted.
    pub confidence: f64,
    /// Index of the incoming batch the sample arrived with.
    pub inserted_at: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    capacity: usize,
    num_classes: usize,
    input_dim: usize,
    slots_per_class: usize,
    classes: Vec<Vec<BufferEntry>>,
    state_index: usize,
}

/// Labels and confidences of the stored samples under the current model,
/// in [`Buffer::entries`] order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relabel {
    pub labels: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl Buffer {
    /// A capacity of 0 disables replay. Any other capacity below the class
    /// count would leave zero slots per class and is rejected.
    pub fn new(capacity: usize, num_classes: usize, input_dim: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("buffer needs at least one class".into()));
        }
        if capacity > 0 && capacity < num_classes {
            return Err(Error::Config(format!(
                "buffer capacity {capacity} gives zero slots for {num_classes} classes"
            )));
        }
        Ok(Self {
            capacity,
            num_classes,
            input_dim,
            slots_per_class: capacity / num_classes,
            classes: vec![Vec::new(); num_classes],
            state_index: 0,
        })
    }

    pub fn with_slots(
        slots_per_class: usize,
        num_classes: usize,
        input_dim: usize,
    ) -> Result<Self> {
        Self::new(slots_per_class * num_classes, num_classes, input_dim)
    }

    /// Rebuilds a buffer from stored per-class entry lists.
    pub fn from_parts(
        capacity: usize,
        num_classes: usize,
        input_dim: usize,
        classes: Vec<Vec<BufferEntry>>,
        state_index: usize,
    ) -> Result<Self> {
        let mut b = Self::new(capacity, num_classes, input_dim)?;
        if classes.len() != num_classes {
            return Err(Error::shape(
                "Buffer::from_parts",
                num_classes,
                classes.len(),
            ));
        }
        for (k, list) in classes.iter().enumerate() {
            if list.len() > b.slots_per_class {
                return Err(Error::Config(format!("class {k} exceeds its slots")));
            }
            if list.iter().any(|e| e.sample.len() != input_dim) {
                return Err(Error::shape(
                    "Buffer::from_parts",
                    input_dim,
                    "ragged sample",
                ));
            }
        }
        b.classes = classes;
        b.state_index = state_index;
        Ok(b)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn slots_per_class(&self) -> usize {
        self.slots_per_class
    }

    pub fn state_index(&self) -> usize {
        self.state_index
    }

    pub fn class_entries(&self, k: usize) -> &[BufferEntry] {
        &self.classes[k]
    }

    pub fn classes(&self) -> &[Vec<BufferEntry>] {
        &self.classes
    }

    /// All entries, class 0 first.
    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.classes.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stored samples only, with no label information.
    pub fn samples(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.input_dim);
        for e in self.entries() {
            data.extend_from_slice(&e.sample);
        }
        Matrix::from_vec(self.len(), self.input_dim, data).expect("entries share input_dim")
    }
}

/// Current-model labels and confidences for every stored sample.
pub fn relabel_buffer(model: &Model, buffer: &Buffer) -> Result<Relabel> {
    if buffer.is_empty() {
        return Ok(Relabel::default());
    }
    let (labels, confidences) = model.predict(&buffer.samples())?;
    Ok(Relabel {
        labels,
        confidences,
    })
}

/// `X* = batch ∪ buffer`, batch rows first.
pub fn merged_set(buffer: &Buffer, batch: &Matrix) -> Result<Matrix> {
    batch.vstack(&buffer.samples())
}

/// Produces the next buffer state from the incoming batch, its predictions
/// and confidences, and the previous state relabeled by the current model.
pub fn update_buffer<R: Rng + ?Sized>(
    buffer: &Buffer,
    batch: &Matrix,
    predictions: &[usize],
    confidences: &[f64],
    relabel: &Relabel,
    rng: &mut R,
) -> Result<Buffer> {
    let n = batch.rows();
    if predictions.len() != n || confidences.len() != n {
        return Err(Error::shape(
            "update_buffer",
            n,
            format!(
                "{} predictions, {} confidences",
                predictions.len(),
                confidences.len()
            ),
        ));
    }
    if n > 0 && batch.cols() != buffer.input_dim {
        return Err(Error::shape(
            "update_buffer",
            buffer.input_dim,
            batch.cols(),
        ));
    }
    if relabel.labels.len() != buffer.len() {
        return Err(Error::shape(
            "update_buffer relabel",
            buffer.len(),
            relabel.labels.len(),
        ));
    }
    let c = buffer.num_classes;
    if let Some(&bad) = predictions.iter().chain(&relabel.labels).find(|&&y| y >= c) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: c,
        });
    }

    let slots = buffer.slots_per_class;
    let next_index = buffer.state_index + 1;
    let previous: Vec<&BufferEntry> = buffer.entries().collect();
    let mut classes = vec![Vec::new(); c];

    for (k, out) in classes.iter_mut().enumerate() {
        if slots == 0 {
            break;
        }
        let mut incoming: Vec<usize> = (0..n).filter(|&i| predictions[i] == k).collect();
        // stable: equal confidences keep batch order
        incoming.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
        incoming.truncate(slots);
        out.extend(incoming.into_iter().map(|i| BufferEntry {
            sample: batch.row(i).to_vec(),
            predicted_label: k,
            confidence: confidences[i],
            inserted_at: next_index,
        }));

        let need = slots - out.len();
        if need == 0 {
            continue;
        }
        let candidates: Vec<usize> = (0..previous.len())
            .filter(|&i| relabel.labels[i] == k)
            .collect();
        let chosen: Vec<usize> = if candidates.len() <= need {
            candidates
        } else {
            let mut picks = rand::seq::index::sample(rng, candidates.len(), need).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|p| candidates[p]).collect()
        };
        out.extend(chosen.into_iter().map(|i| BufferEntry {
            predicted_label: k,
            ..previous[i].clone()
        }));
    }

    Ok(Buffer {
        classes,
        state_index: next_index,
        ..buffer.clone_empty()
    })
}

impl Buffer {
    fn clone_empty(&self) -> Buffer {
        Buffer {
            capacity: self.capacity,
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            slots_per_class: self.slots_per_class,
            classes: vec![Vec::new(); self.num_classes],
            state_index: self.state_index,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(x: f64, label: usize, conf: f64) -> BufferEntry {
        BufferEntry {
            sample: vec![x],
            predicted_label: label,
            confidence: conf,
            inserted_at: 0,
        }
    }

    #[test]
    fn capacity_below_class_count_is_rejected() {
        assert!(Buffer::new(1, 2, 3).is_err());
        assert!(Buffer::new(0, 2, 3).is_ok());
        assert_eq!(Buffer::new(7, 3, 1).unwrap().slots_per_class(), 2);
    }

    #[test]
    fn overflow_keeps_top_confidence_and_backfills_one() {
        let prev = Buffer::from_parts(
            4,
            2,
            1,
            vec![vec![], vec![entry(10.0, 1, 0.6), entry(11.0, 1, 0.5)]],
            0,
        )
        .unwrap();
        let batch = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let preds = [0, 0, 0, 1];
        let confs = [0.9, 0.8, 0.2, 0.7];
        let relabel = Relabel {
            labels: vec![1, 1],
            confidences: vec![0.6, 0.5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let next = update_buffer(&prev, &batch, &preds, &confs, &relabel, &mut rng).unwrap();

        let c0: Vec<f64> = next.class_entries(0).iter().map(|e| e.confidence).collect();
        assert_eq!(c0, vec![0.9, 0.8]);
        let c1 = next.class_entries(1);
        assert_eq!(c1.len(), 2);
        assert_eq!(c1[0].sample, vec![3.0]);
        assert_eq!(c1[0].inserted_at, 1);
        assert!(c1[1].sample == vec![10.0] || c1[1].sample == vec![11.0]);
        assert_eq!(next.state_index(), 1);
    }

    #[test]
    fn empty_previous_keeps_all_incoming() {
        let prev = Buffer::new(6, 3, 1).unwrap();
        let batch = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = update_buffer(
            &prev,
            &batch,
            &[2, 0, 2],
            &[0.5, 0.5, 0.9],
            &Relabel::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.len(), 3);
        let c2: Vec<f64> = next.class_entries(2).iter().map(|e| e.sample[0]).collect();
        assert_eq!(c2, vec![2.0, 0.0]);
    }

    #[test]
    fn merged_set_concatenates() {
        let buf = Buffer::from_parts(2, 2, 1, vec![vec![entry(5.0, 0, 0.9)], vec![]], 1).unwrap();
        let batch = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let x = merged_set(&buf, &batch).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 5.0]);
        let empty_batch = Matrix::zeros(0, 1);
        assert_eq!(merged_set(&buf, &empty_batch).unwrap().as_slice(), &[5.0]);
        let empty_buf = Buffer::new(2, 2, 1).unwrap();
        assert_eq!(merged_set(&empty_buf, &batch).unwrap(), batch);
    }
}
