//! Switchable channel excitation.
//!
//! A layer squeezes its input `x: (B,C,H,W)` to a channel descriptor
//! `m: (B,C)`, runs each enabled excitation operator on `m`, gates each
//! branch by a per-sample decision weight, and multiplies the activated
//! branches into an attention map `v: (B,C)` that rescales `x` per channel:
//!
//! ```text
//! m = GAP(x)
//! w = σ(W_d · m)                         (B,N)
//! v = Π_i act(branch_i(m) · w_i)         (B,C)
//! x_att = x ⊙ v
//! ```
//!
//! Branch outputs are left unactivated; the only nonlinearity after them is
//! the one inside [`switch`].

pub mod export;
mod kernel_size;
mod operators;
mod params;

pub use kernel_size::{eca_kernel_size, EcaHyper};
pub use operators::{Operator, OperatorSet};
pub use params::{
    DecisionMode, SemConfig, SemParams, SemVars, DEFAULT_REDUCTION, IE_BETA_INIT, IE_GAMMA_INIT,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Result, SemError};
use crate::kernels::Activation;
use crate::tensor::{Element, Tensor};

/// `(B,C,H,W) -> (B,C)` channel descriptor by global average pooling.
pub fn squeeze<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let pooled = g.global_avg_pool(x)?;
    let (b, c) = (g.shape(x)[0], g.shape(x)[1]);
    g.reshape(pooled, [b, c])
}

/// Decision vector `w = σ(m·W_dᵀ (+ bias))`, shape `(B,N)`.
pub fn decide<T: Element>(g: &mut Graph<T>, m: Var, w_d: Var, bias: Option<Var>) -> Result<Var> {
    let logits = g.affine(m, w_d, bias)?;
    Ok(g.sigmoid(logits))
}

/// Bottleneck branch `W_2 · relu(W_1 · m)`, no output activation.
pub fn excite_fc<T: Element>(g: &mut Graph<T>, m: Var, w1: Var, w2: Var) -> Result<Var> {
    let hidden = g.affine(m, w1, None)?;
    let hidden = g.relu(hidden);
    g.affine(hidden, w2, None)
}

/// Channel-axis 1-D convolution with a shared odd-length kernel and zero padding.
pub fn excite_cnn<T: Element>(g: &mut Graph<T>, m: Var, kernel: Var) -> Result<Var> {
    g.conv1d_channel(m, kernel)
}

/// Instance enhance `m·γ + β` with scalar `γ`, `β` of shape `(1,1)`.
pub fn excite_ie<T: Element>(g: &mut Graph<T>, m: Var, gamma: Var, beta: Var) -> Result<Var> {
    let scaled = g.mul(m, gamma)?;
    g.add(scaled, beta)
}

/// Operator weights fed to [`switch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionWeights {
    /// Decision vector of shape `(B,N)`; column `i` gates branch `i`.
    Learned(Var),
    /// Every weight is exactly 1 and no multiplication is recorded.
    Ones,
}

/// `v = Π_i act(branches[i] · w_i)`, multiplied left to right.
pub fn switch<T: Element>(
    g: &mut Graph<T>,
    branches: &[Var],
    weights: DecisionWeights,
    activation: Activation,
) -> Result<Var> {
    if branches.is_empty() {
        return Err(SemError::domain("switch needs at least one branch"));
    }
    if let DecisionWeights::Learned(w) = weights {
        let n = g.shape(w).get(1).copied().unwrap_or(0);
        if n != branches.len() {
            return Err(SemError::domain(format!(
                "switch got {} branches but a decision vector of width {n}",
                branches.len()
            )));
        }
    }
    let mut v: Option<Var> = None;
    for (i, &branch) in branches.iter().enumerate() {
        let gated = match weights {
            DecisionWeights::Learned(w) => {
                let wi = g.column(w, i)?;
                g.mul(branch, wi)?
            }
            DecisionWeights::Ones => branch,
        };
        let act = g.activation(gated, activation);
        v = Some(match v {
            Some(acc) => g.mul(acc, act)?,
            None => act,
        });
    }
    Ok(v.expect("non-empty"))
}

/// `x_att[b,c,h,w] = x[b,c,h,w] · v[b,c]`.
pub fn recalibrate<T: Element>(g: &mut Graph<T>, x: Var, v: Var) -> Result<Var> {
    let (xs, vs) = (g.shape(x).to_vec(), g.shape(v).to_vec());
    match (xs.as_slice(), vs.as_slice()) {
        (&[b, c, _, _], &[vb, vc]) if b == vb && c == vc => {
            let v4 = g.reshape(v, [b, c, 1, 1])?;
            g.mul(x, v4)
        }
        _ => Err(SemError::domain(format!(
            "attention map {vs:?} does not match feature map {xs:?}"
        ))),
    }
}

/// Replaces parts of the computation, for ablations and equivalence checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionOverride {
    #[default]
    None,
    /// Use weight 1 for every operator regardless of the decision network.
    UnitDecision,
    /// Skip attention altogether: `v ≡ 1`, so `x_att = x`.
    UnitAttention,
}

/// Graph handles produced by one [`sem_forward`] call.
#[derive(Debug, Clone)]
pub struct SemOutput {
    pub x_att: Var,
    pub m: Var,
    /// Decision vector, when a decision network ran.
    pub w: Option<Var>,
    pub branches: Vec<(Operator, Var)>,
    pub v: Var,
}

fn need(var: Option<Var>, what: &str) -> Result<Var> {
    var.ok_or_else(|| SemError::domain(format!("missing attention parameter {what}")))
}

/// Evaluate one branch on the channel descriptor.
pub fn excite<T: Element>(g: &mut Graph<T>, op: Operator, m: Var, vars: &SemVars) -> Result<Var> {
    match op {
        Operator::Fc => excite_fc(g, m, need(vars.w1, "fc.w1")?, need(vars.w2, "fc.w2")?),
        Operator::Cnn => excite_cnn(g, m, need(vars.eca_kernel, "eca.kernel")?),
        Operator::Ie => excite_ie(
            g,
            m,
            need(vars.ie_gamma, "ie.gamma")?,
            need(vars.ie_beta, "ie.beta")?,
        ),
    }
}

/// Full layer: squeeze, decide, excite every enabled operator, switch, recalibrate.
pub fn sem_forward<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    vars: &SemVars,
    cfg: &SemConfig,
    overrides: AttentionOverride,
) -> Result<SemOutput> {
    let m = squeeze(g, x)?;
    let w = match (cfg.decision, overrides) {
        (DecisionMode::Learned, AttentionOverride::None) => {
            Some(decide(g, m, need(vars.w_d, "w_d")?, vars.d_bias)?)
        }
        _ => None,
    };
    let mut branches = Vec::with_capacity(cfg.ops.len());
    for &op in cfg.ops.members() {
        branches.push((op, excite(g, op, m, vars)?));
    }
    if overrides == AttentionOverride::UnitAttention {
        let (b, c) = (g.shape(m)[0], g.shape(m)[1]);
        let v = g.constant(Tensor::ones([b, c]));
        let x_att = recalibrate(g, x, v)?;
        return Ok(SemOutput {
            x_att,
            m,
            w,
            branches,
            v,
        });
    }
    let weights = w.map_or(DecisionWeights::Ones, DecisionWeights::Learned);
    let outs: Vec<Var> = branches.iter().map(|&(_, v)| v).collect();
    let v = switch(g, &outs, weights, cfg.activation)?;
    let x_att = recalibrate(g, x, v)?;
    Ok(SemOutput {
        x_att,
        m,
        w,
        branches,
        v,
    })
}

/// Conventional single-operator modules: `x ⊙ σ(branch(m))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Baseline {
    Se,
    Eca,
    Ie,
}

impl Baseline {
    pub fn operator(self) -> Operator {
        match self {
            Baseline::Se => Operator::Fc,
            Baseline::Eca => Operator::Cnn,
            Baseline::Ie => Operator::Ie,
        }
    }

    /// Layer configuration that allocates this baseline's parameters.
    pub fn config(self, reduction: usize, eca: EcaHyper) -> SemConfig {
        SemConfig {
            ops: OperatorSet::single(self.operator()),
            reduction,
            activation: Activation::Sigmoid,
            decision: DecisionMode::Fixed,
            decision_bias: false,
            eca,
            kernel_override: None,
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Se => "se",
            Baseline::Eca => "eca",
            Baseline::Ie => "ie",
        })
    }
}

impl FromStr for Baseline {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se" => Ok(Baseline::Se),
            "eca" => Ok(Baseline::Eca),
            "ie" => Ok(Baseline::Ie),
            other => Err(SemError::usage(format!("unknown baseline '{other}'"))),
        }
    }
}

/// Standalone SE / ECA / IE module with the sigmoid applied directly to the branch.
pub fn baseline_forward<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    kind: Baseline,
    vars: &SemVars,
) -> Result<Var> {
    let m = squeeze(g, x)?;
    let branch = excite(g, kind.operator(), m, vars)?;
    let v = g.sigmoid(branch);
    recalibrate(g, x, v)
}

/// Read-out of a decision vector with per-operator access.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector {
    pub ops: OperatorSet,
    /// `(B,N)` weights, each strictly inside (0,1).
    pub weights: Tensor<f64>,
}

impl DecisionVector {
    pub fn from_graph<T: Element>(g: &Graph<T>, w: Var, ops: &OperatorSet) -> Self {
        Self {
            ops: ops.clone(),
            weights: g.value(w).cast(),
        }
    }

    /// Per-sample weight of `op`, or `None` when it is not enabled.
    pub fn component(&self, op: Operator) -> Option<Vec<f64>> {
        let i = self.ops.index_of(op)?;
        let n = self.ops.len();
        Some(
            self.weights
                .data()
                .iter()
                .skip(i)
                .step_by(n)
                .copied()
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::activation::sigmoid;
    use crate::rng::RngState;

    #[test]
    fn zero_weights_give_half_decisions() {
        let mut g = Graph::<f64>::new();
        let m = g.constant(Tensor::from_f64([2, 3], &[1.0, -2.0, 3.0, 0.1, 0.2, 0.3]).unwrap());
        let wd = g.constant(Tensor::zeros([3, 3]));
        let w = decide(&mut g, m, wd, None).unwrap();
        assert_eq!(g.value(w).data(), &[0.5; 6]);
    }

    #[test]
    fn ie_at_init_is_constant_minus_one() {
        let mut g = Graph::<f64>::new();
        let m = g.constant(Tensor::from_f64([1, 4], &[3.0, -1.0, 0.0, 7.5]).unwrap());
        let gamma = g.constant(Tensor::full([1, 1], IE_GAMMA_INIT));
        let beta = g.constant(Tensor::full([1, 1], IE_BETA_INIT));
        let v = excite_ie(&mut g, m, gamma, beta).unwrap();
        assert_eq!(g.value(v).data(), &[-1.0; 4]);
    }

    #[test]
    fn ie_linear_arithmetic() {
        let mut g = Graph::<f64>::new();
        let m = g.constant(Tensor::from_f64([1, 2], &[1.0, -1.0]).unwrap());
        let gamma = g.constant(Tensor::full([1, 1], 2.0));
        let beta = g.constant(Tensor::full([1, 1], 0.5));
        let v = excite_ie(&mut g, m, gamma, beta).unwrap();
        assert_eq!(g.value(v).data(), &[2.5, -1.5]);
    }

    #[test]
    fn zero_branches_switch_to_one_eighth() {
        let mut g = Graph::<f64>::new();
        let zero = g.constant(Tensor::zeros([2, 5]));
        let w = g.constant(Tensor::from_f64([2, 3], &[0.1, 0.7, 0.3, 0.9, 0.2, 0.5]).unwrap());
        let v = switch(
            &mut g,
            &[zero, zero, zero],
            DecisionWeights::Learned(w),
            Activation::Sigmoid,
        )
        .unwrap();
        assert_eq!(g.value(v).data(), &[0.125; 10]);
    }

    #[test]
    fn switch_width_mismatch() {
        let mut g = Graph::<f64>::new();
        let b = g.constant(Tensor::zeros([1, 4]));
        let w = g.constant(Tensor::zeros([1, 3]));
        assert!(switch(
            &mut g,
            &[b, b],
            DecisionWeights::Learned(w),
            Activation::Sigmoid
        )
        .is_err());
        assert!(switch(&mut g, &[], DecisionWeights::Ones, Activation::Sigmoid).is_err());
    }

    #[test]
    fn recalibrate_checks_channels() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones([1, 3, 2, 2]));
        let v = g.constant(Tensor::zeros([1, 4]));
        assert!(recalibrate(&mut g, x, v).is_err());
        let v = g.constant(Tensor::zeros([1, 3]));
        let y = recalibrate(&mut g, x, v).unwrap();
        assert!(g.value(y).data().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn zero_input_with_ie_at_init() {
        // m = 0 → w = 0.5 for every operator; the IE branch is −1 → σ(−0.5)
        let cfg = SemConfig::with_ops(OperatorSet::single(Operator::Ie));
        let params = SemParams::<f64>::init(4, &cfg, RngState::new(3, 0)).unwrap();
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let x = g.constant(Tensor::zeros([1, 4, 3, 3]));
        let out = sem_forward(&mut g, x, &vars, &cfg, AttentionOverride::None).unwrap();
        assert_eq!(g.value(out.w.unwrap()).data(), &[0.5]);
        for &v in g.value(out.v).data() {
            assert_eq!(v, sigmoid(-0.5));
        }
    }

    #[test]
    fn baseline_se_with_zero_w1_halves_input() {
        let cfg = Baseline::Se.config(2, EcaHyper::default());
        let mut params = SemParams::<f64>::init(4, &cfg, RngState::new(1, 0)).unwrap();
        params.w1 = Some(Tensor::zeros([2, 4]));
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let xt = Tensor::from_f64([1, 4, 1, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let x = g.constant(xt.clone());
        let y = baseline_forward(&mut g, x, Baseline::Se, &vars).unwrap();
        assert_eq!(g.value(y), &xt.map(|v| 0.5 * v));
    }

    #[test]
    fn baseline_ie_at_init_scales_by_sigmoid_minus_one() {
        let cfg = Baseline::Ie.config(16, EcaHyper::default());
        let params = SemParams::<f64>::init(3, &cfg, RngState::new(1, 0)).unwrap();
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let x = g.constant(Tensor::full([2, 3, 2, 2], 2.0));
        let y = baseline_forward(&mut g, x, Baseline::Ie, &vars).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 2.0 * 0.2689414213699951).abs() < 1e-15);
        }
    }

    #[test]
    fn decision_vector_components() {
        let dv = DecisionVector {
            ops: OperatorSet::new(&[Operator::Fc, Operator::Ie]).unwrap(),
            weights: Tensor::from_f64([2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap(),
        };
        assert_eq!(dv.component(Operator::Ie).unwrap(), vec![0.2, 0.4]);
        assert!(dv.component(Operator::Cnn).is_none());
    }
}
