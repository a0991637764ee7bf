use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel_size::{eca_kernel_size, EcaHyper};
use super::operators::{Operator, OperatorSet};
use crate::autodiff::{Graph, Var};
use crate::error::{Result, SemError};
use crate::kernels::Activation;
use crate::rng::RngState;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_REDUCTION: usize = 16;
pub const IE_GAMMA_INIT: f64 = 0.0;
pub const IE_BETA_INIT: f64 = -1.0;

/// Where the per-operator weights of the switch come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionMode {
    /// Per-layer decision network `w = σ(W_d·m)`.
    Learned,
    /// No decision network; every operator weight is exactly 1.
    Fixed,
}

/// Static configuration of one switchable-excitation layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemConfig {
    pub ops: OperatorSet,
    pub reduction: usize,
    pub activation: Activation,
    pub decision: DecisionMode,
    /// Adds a bias to the decision network. Off by default.
    pub decision_bias: bool,
    pub eca: EcaHyper,
    /// Forces the 1-D kernel length instead of deriving it from C.
    pub kernel_override: Option<usize>,
}

impl Default for SemConfig {
    fn default() -> Self {
        Self {
            ops: OperatorSet::full(),
            reduction: DEFAULT_REDUCTION,
            activation: Activation::Sigmoid,
            decision: DecisionMode::Learned,
            decision_bias: false,
            eca: EcaHyper::default(),
            kernel_override: None,
        }
    }
}

impl SemConfig {
    pub fn with_ops(ops: OperatorSet) -> Self {
        Self {
            ops,
            ..Self::default()
        }
    }

    pub fn hidden_width(&self, channels: usize) -> usize {
        (channels / self.reduction.max(1)).max(1)
    }

    pub fn kernel_size(&self, channels: usize) -> Result<usize> {
        match self.kernel_override {
            Some(k) if k % 2 == 1 => Ok(k),
            Some(k) => Err(SemError::domain(format!("kernel override {k} must be odd"))),
            None => eca_kernel_size(channels, self.eca),
        }
    }
}

/// Learnable tensors of one layer. Members of disabled operators are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemParams<T> {
    pub channels: usize,
    /// `(N, C)` decision weights.
    pub w_d: Option<Tensor<T>>,
    /// `(N)` decision bias, only with `decision_bias`.
    pub d_bias: Option<Tensor<T>>,
    /// `(C/r, C)` bottleneck reduction.
    pub w1: Option<Tensor<T>>,
    /// `(C, C/r)` bottleneck expansion.
    pub w2: Option<Tensor<T>>,
    /// `(k)` shared channel-axis kernel.
    pub eca_kernel: Option<Tensor<T>>,
    /// `(1,1)` scale and shift of instance enhance.
    pub ie_gamma: Option<Tensor<T>>,
    pub ie_beta: Option<Tensor<T>>,
}

fn fan_in_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl<T: Element> SemParams<T> {
    pub fn init(channels: usize, cfg: &SemConfig, rng: RngState) -> Result<Self> {
        if channels == 0 {
            return Err(SemError::domain(
                "attention layer needs at least one channel",
            ));
        }
        let mut rng = rng.rng();
        let n = cfg.ops.len();
        let learned = cfg.decision == DecisionMode::Learned;
        let hidden = cfg.hidden_width(channels);
        let w_d = learned.then(|| fan_in_uniform(&[n, channels], channels, &mut rng));
        let d_bias = (learned && cfg.decision_bias).then(|| Tensor::zeros([n]));
        let (w1, w2) = if cfg.ops.contains(Operator::Fc) {
            (
                Some(fan_in_uniform(&[hidden, channels], channels, &mut rng)),
                Some(fan_in_uniform(&[channels, hidden], hidden, &mut rng)),
            )
        } else {
            (None, None)
        };
        let eca_kernel = if cfg.ops.contains(Operator::Cnn) {
            let k = cfg.kernel_size(channels)?;
            Some(fan_in_uniform(&[k], k, &mut rng))
        } else {
            None
        };
        let ie = cfg.ops.contains(Operator::Ie);
        Ok(Self {
            channels,
            w_d,
            d_bias,
            w1,
            w2,
            eca_kernel,
            ie_gamma: ie.then(|| Tensor::full([1, 1], T::from_f64(IE_GAMMA_INIT))),
            ie_beta: ie.then(|| Tensor::full([1, 1], T::from_f64(IE_BETA_INIT))),
        })
    }

    /// Present tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, &Tensor<T>)> {
        [
            ("w_d", &self.w_d),
            ("d_bias", &self.d_bias),
            ("fc.w1", &self.w1),
            ("fc.w2", &self.w2),
            ("eca.kernel", &self.eca_kernel),
            ("ie.gamma", &self.ie_gamma),
            ("ie.beta", &self.ie_beta),
        ]
        .into_iter()
        .filter_map(|(name, t)| t.as_ref().map(|t| (name, t)))
        .collect()
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        [
            ("w_d", &mut self.w_d),
            ("d_bias", &mut self.d_bias),
            ("fc.w1", &mut self.w1),
            ("fc.w2", &mut self.w2),
            ("eca.kernel", &mut self.eca_kernel),
            ("ie.gamma", &mut self.ie_gamma),
            ("ie.beta", &mut self.ie_beta),
        ]
        .into_iter()
        .filter_map(|(name, t)| t.as_mut().map(|t| (name, t)))
        .collect()
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Record every tensor on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> SemVars {
        let mut leaf = |t: &Option<Tensor<T>>| t.as_ref().map(|t| g.leaf(t.clone(), requires_grad));
        SemVars {
            w_d: leaf(&self.w_d),
            d_bias: leaf(&self.d_bias),
            w1: leaf(&self.w1),
            w2: leaf(&self.w2),
            eca_kernel: leaf(&self.eca_kernel),
            ie_gamma: leaf(&self.ie_gamma),
            ie_beta: leaf(&self.ie_beta),
        }
    }
}

/// [`SemParams`] recorded on a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SemVars {
    pub w_d: Option<Var>,
    pub d_bias: Option<Var>,
    pub w1: Option<Var>,
    pub w2: Option<Var>,
    pub eca_kernel: Option<Var>,
    pub ie_gamma: Option<Var>,
    pub ie_beta: Option<Var>,
}

impl SemVars {
    /// Same order as [`SemParams::named`].
    pub fn present(&self) -> Vec<Var> {
        [
            self.w_d,
            self.d_bias,
            self.w1,
            self.w2,
            self.eca_kernel,
            self.ie_gamma,
            self.ie_beta,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}
