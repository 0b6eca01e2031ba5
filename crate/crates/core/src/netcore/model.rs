use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::layers::{BatchNorm, Hypothesis, Linear};
use super::{softmax, Mode, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the ReLU backbone layers; may be empty.
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden: vec![64, 64],
            feature_dim: 16,
            num_classes: 2,
            bn_eps: BatchNorm::DEFAULT_EPS,
            bn_momentum: BatchNorm::DEFAULT_MOMENTUM,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(
                "bn_eps must be > 0, bn_momentum in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Which learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    /// Everything after the backbone: bottleneck, batch-norm, classifier.
    Head,
}

/// Whether the hypothesis receives parameter gradients during backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Trainable,
    Frozen,
}

/// Backbone MLP, bottleneck projection and batch-norm.
#[derive(Debug, Clone)]
pub struct FeatureGenerator {
    pub hidden: Vec<Linear>,
    pub bottleneck: Linear,
    pub bn: BatchNorm,
    relu_out: Option<Vec<Matrix>>,
    features: Option<Matrix>,
}

impl FeatureGenerator {
    pub fn new(hidden: Vec<Linear>, bottleneck: Linear, bn: BatchNorm) -> Result<Self> {
        let mut dim = hidden.first().map_or(bottleneck.in_dim(), Linear::in_dim);
        for l in hidden.iter().chain(std::iter::once(&bottleneck)) {
            if l.in_dim() != dim {
                return Err(Error::shape("FeatureGenerator::new", dim, l.in_dim()));
            }
            dim = l.out_dim();
        }
        if bn.dim() != dim {
            return Err(Error::shape("FeatureGenerator::new", dim, bn.dim()));
        }
        Ok(Self {
            hidden,
            bottleneck,
            bn,
            relu_out: None,
            features: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.bottleneck.in_dim(), Linear::in_dim)
    }

    pub fn feature_dim(&self) -> usize {
        self.bn.dim()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() == 0 {
            return Err(Error::EmptyInput("forward_features"));
        }
        if x.cols() != self.input_dim() {
            return Err(Error::shape("forward_features", self.input_dim(), x.cols()));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("forward_features input".into()));
        }
        Ok(())
    }

    /// Eval-mode features; a pure function of parameters, running stats and input.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.hidden {
            h = layer.forward(&h)?.map(relu);
        }
        let z = self.bottleneck.forward(&h)?;
        self.bn.forward_eval(&z)
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        if x.rows() < 2 {
            return Err(Error::DegenerateBatch(x.rows()));
        }
        self.clear_cache();
        let mut h = x.clone();
        let mut relu_out = Vec::with_capacity(self.hidden.len());
        for layer in &mut self.hidden {
            h = layer.forward_train(&h)?.map(relu);
            relu_out.push(h.clone());
        }
        let z = self.bottleneck.forward_train(&h)?;
        let f = self.bn.forward_train(&z)?;
        self.relu_out = Some(relu_out);
        self.features = Some(f.clone());
        Ok(f)
    }

    /// Backpropagates `dL/dfeatures` through batch-norm, bottleneck and backbone,
    /// accumulating into every generator `Param::grad`.
    pub fn backward(&mut self, dfeatures: &Matrix) -> Result<()> {
        let relu_out = self.relu_out.take().ok_or(Error::StaleCache)?;
        self.features = None;
        let dz = self.bn.backward(dfeatures)?;
        let mut dh = self.bottleneck.backward(&dz)?;
        for (layer, out) in self.hidden.iter_mut().zip(&relu_out).rev() {
            for (g, &o) in dh.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
            dh = layer.backward(&dh)?;
        }
        Ok(())
    }

    fn clear_cache(&mut self) {
        self.relu_out = None;
        self.features = None;
        for l in &mut self.hidden {
            l.clear_cache();
        }
        self.bottleneck.clear_cache();
        self.bn.clear_cache();
    }

    pub fn params(&self) -> Vec<(String, ParamGroup, &Param)> {
        let mut out = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            out.push((
                format!("hidden.{i}.weight"),
                ParamGroup::Backbone,
                &l.weight,
            ));
            out.push((format!("hidden.{i}.bias"), ParamGroup::Backbone, &l.bias));
        }
        out.push((
            "bottleneck.weight".into(),
            ParamGroup::Head,
            &self.bottleneck.weight,
        ));
        out.push((
            "bottleneck.bias".into(),
            ParamGroup::Head,
            &self.bottleneck.bias,
        ));
        out.push(("bn.gamma".into(), ParamGroup::Head, &self.bn.gamma));
        out.push(("bn.beta".into(), ParamGroup::Head, &self.bn.beta));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(ParamGroup, &mut Param)> {
        let mut out = Vec::new();
        for l in &mut self.hidden {
            out.push((ParamGroup::Backbone, &mut l.weight));
            out.push((ParamGroup::Backbone, &mut l.bias));
        }
        out.push((ParamGroup::Head, &mut self.bottleneck.weight));
        out.push((ParamGroup::Head, &mut self.bottleneck.bias));
        out.push((ParamGroup::Head, &mut self.bn.gamma));
        out.push((ParamGroup::Head, &mut self.bn.beta));
        out
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Classifier `f = h ∘ g`.
#[derive(Debug, Clone)]
pub struct Model {
    pub generator: FeatureGenerator,
    pub hypothesis: Hypothesis,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut dim = config.input_dim;
        let mut hidden = Vec::with_capacity(config.hidden.len());
        for &w in &config.hidden {
            hidden.push(Linear::init(dim, w, true, rng));
            dim = w;
        }
        let bottleneck = Linear::init(dim, config.feature_dim, false, rng);
        let bn = BatchNorm::new(config.feature_dim, config.bn_eps, config.bn_momentum);
        let generator = FeatureGenerator::new(hidden, bottleneck, bn)?;
        let hypothesis = Hypothesis::init(config.feature_dim, config.num_classes, rng);
        Self::from_parts(generator, hypothesis)
    }

    pub fn from_parts(generator: FeatureGenerator, hypothesis: Hypothesis) -> Result<Self> {
        if generator.feature_dim() != hypothesis.feature_dim() {
            return Err(Error::shape(
                "Model::from_parts",
                generator.feature_dim(),
                hypothesis.feature_dim(),
            ));
        }
        Ok(Self {
            generator,
            hypothesis,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.generator.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.generator.feature_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.hypothesis.num_classes()
    }

    /// Bottleneck features after batch-norm. Train mode caches intermediates
    /// for [`Model::backward`] and updates running statistics.
    pub fn forward_features(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        match mode {
            Mode::Train => self.generator.forward_train(x),
            Mode::Eval => self.generator.forward_eval(x),
        }
    }

    pub fn forward_logits(&self, features: &Matrix) -> Result<Matrix> {
        self.hypothesis.forward(features)
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.generator.forward_eval(x)
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_logits(&self.features(x)?)
    }

    pub fn predict_probs(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Argmax label and max-probability confidence per row, eval mode.
    pub fn predict(&self, x: &Matrix) -> Result<(Vec<usize>, Vec<f64>)> {
        let p = self.predict_probs(x)?;
        let labels = p.argmax_rows();
        let conf = labels.iter().enumerate().map(|(i, &k)| p[(i, k)]).collect();
        Ok((labels, conf))
    }

    /// Backpropagates `dL/dlogits` from the last train-mode forward pass.
    pub fn backward(&mut self, dlogits: &Matrix, head: HeadMode) -> Result<()> {
        let features = self.generator.features.take().ok_or(Error::StaleCache)?;
        let dfeat = self
            .hypothesis
            .backward(&features, dlogits, head == HeadMode::Trainable)?;
        self.generator.backward(&dfeat)
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.generator.params_mut() {
            p.zero_grad();
        }
        self.hypothesis.directions.zero_grad();
        self.hypothesis.scales.zero_grad();
    }

    /// All trainable parameters in a fixed order, hypothesis last.
    pub fn params(&self) -> Vec<(String, ParamGroup, &Param)> {
        let mut out = self.generator.params();
        out.push((
            "head.directions".into(),
            ParamGroup::Head,
            &self.hypothesis.directions,
        ));
        out.push((
            "head.scales".into(),
            ParamGroup::Head,
            &self.hypothesis.scales,
        ));
        out
    }

    pub fn params_mut(&mut self, head: HeadMode) -> Vec<(ParamGroup, &mut Param)> {
        let mut out = self.generator.params_mut();
        if head == HeadMode::Trainable {
            out.push((ParamGroup::Head, &mut self.hypothesis.directions));
            out.push((ParamGroup::Head, &mut self.hypothesis.scales));
        }
        out
    }

    /// Architecture derived from the current parameters.
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.input_dim(),
            hidden: self.generator.hidden.iter().map(Linear::out_dim).collect(),
            feature_dim: self.feature_dim(),
            num_classes: self.num_classes(),
            bn_eps: self.generator.bn.eps,
            bn_momentum: self.generator.bn.momentum,
        }
    }
}
