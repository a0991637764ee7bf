//! Named finite-difference checks over individual ops, a full attention
//! layer and a full residual block.

use rand::Rng;

use crate::attention::{
    decide, excite_cnn, excite_fc, excite_ie, recalibrate, sem_forward, squeeze, switch,
    AttentionOverride, DecisionWeights, SemConfig, SemParams, SemVars,
};
use crate::autodiff::{Graph, Var};
use crate::error::{Result, SemError};
use crate::gradcheck::{check_gradients, GradcheckReport, DEFAULT_EPS};
use crate::kernels::{Activation, BinaryOp};
use crate::rng::RngState;
use crate::tensor::Tensor;

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;
type Inputs = Vec<(String, Tensor<f64>)>;

pub const OP_SCOPES: &[&str] = &[
    "squeeze",
    "affine",
    "conv2d",
    "conv2d_stride2",
    "conv1d_channel",
    "sigmoid",
    "tanh",
    "relu",
    "leaky_relu",
    "add",
    "mul",
    "batch_norm",
    "batch_norm_eval",
    "softmax_cross_entropy",
    "decide",
    "excite_fc",
    "excite_cnn",
    "excite_ie",
    "switch",
    "recalibrate",
];

pub const COMPOSITE_SCOPES: &[&str] = &["sem-layer", "full-block"];

pub fn all_scopes() -> impl Iterator<Item = &'static str> {
    OP_SCOPES.iter().chain(COMPOSITE_SCOPES).copied()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("shape")
}

/// Scalar `Σ y ⊙ R` with a fixed random `R`, so that every output element
/// contributes a distinct weight.
fn probe(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = uniform(
        &shape,
        -1.0,
        1.0,
        &mut RngState::new(0x9_0BE, shape.len() as u64).rng(),
    );
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn unary(kind: Activation) -> Build {
    Box::new(move |g, v| {
        let y = g.activation(v[0], kind);
        probe(g, y)
    })
}

fn sem_inputs(channels: usize, rng: RngState) -> Result<(Inputs, SemConfig)> {
    let cfg = SemConfig {
        reduction: 4,
        ..SemConfig::default()
    };
    let mut params = SemParams::<f64>::init(channels, &cfg, rng)?;
    let mut r = rng.derive(1).rng();
    // move the instance-enhance scalars off their initial values
    params.ie_gamma = Some(uniform(&[1, 1], 0.2, 0.8, &mut r));
    params.ie_beta = Some(uniform(&[1, 1], -0.8, -0.2, &mut r));
    Ok((
        params
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect(),
        cfg,
    ))
}

fn sem_vars(names: &[String], vars: &[Var]) -> SemVars {
    let mut sv = SemVars::default();
    for (n, &v) in names.iter().zip(vars) {
        match n.as_str() {
            "w_d" => sv.w_d = Some(v),
            "d_bias" => sv.d_bias = Some(v),
            "fc.w1" => sv.w1 = Some(v),
            "fc.w2" => sv.w2 = Some(v),
            "eca.kernel" => sv.eca_kernel = Some(v),
            "ie.gamma" => sv.ie_gamma = Some(v),
            "ie.beta" => sv.ie_beta = Some(v),
            _ => {}
        }
    }
    sv
}

fn scope(name: &str, seed: u64) -> Result<(Inputs, Build)> {
    let state = RngState::new(seed, 0x6_C4EC);
    let mut rng = state.rng();
    let mut u = |shape: &[usize]| uniform(shape, -1.0, 1.0, &mut rng);
    let named = |items: Vec<(&str, Tensor<f64>)>| -> Inputs {
        items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    };
    Ok(match name {
        "squeeze" => (
            named(vec![("x", u(&[2, 3, 4, 4]))]),
            Box::new(|g, v| {
                let y = squeeze(g, v[0])?;
                probe(g, y)
            }),
        ),
        "affine" => (
            named(vec![
                ("x", u(&[3, 5])),
                ("weight", u(&[4, 5])),
                ("bias", u(&[4])),
            ]),
            Box::new(|g, v| {
                let y = g.affine(v[0], v[1], Some(v[2]))?;
                probe(g, y)
            }),
        ),
        "conv2d" | "conv2d_stride2" => {
            let stride = if name == "conv2d" { 1 } else { 2 };
            (
                named(vec![("x", u(&[2, 3, 5, 5])), ("kernel", u(&[4, 3, 3, 3]))]),
                Box::new(move |g, v| {
                    let y = g.conv2d(v[0], v[1], stride, 1)?;
                    probe(g, y)
                }),
            )
        }
        "conv1d_channel" | "excite_cnn" => (
            named(vec![("m", u(&[2, 8])), ("kernel", u(&[3]))]),
            Box::new(|g, v| {
                let y = excite_cnn(g, v[0], v[1])?;
                probe(g, y)
            }),
        ),
        "sigmoid" => (named(vec![("x", u(&[3, 4]))]), unary(Activation::Sigmoid)),
        "tanh" => (named(vec![("x", u(&[3, 4]))]), unary(Activation::Tanh)),
        "relu" => (named(vec![("x", u(&[3, 4]))]), unary(Activation::Relu)),
        "leaky_relu" => (
            named(vec![("x", u(&[3, 4]))]),
            unary(Activation::LeakyRelu(0.01)),
        ),
        "add" | "mul" => {
            let op = if name == "add" {
                BinaryOp::Add
            } else {
                BinaryOp::Mul
            };
            (
                named(vec![("a", u(&[2, 3, 4, 4])), ("b", u(&[1, 3, 1, 1]))]),
                Box::new(move |g, v| {
                    let y = g.binary(v[0], v[1], op)?;
                    probe(g, y)
                }),
            )
        }
        "batch_norm" => (
            named(vec![
                ("x", u(&[4, 3, 2, 2])),
                ("gamma", u(&[3])),
                ("beta", u(&[3])),
            ]),
            Box::new(|g, v| {
                let y = g.batch_norm_train(v[0], v[1], v[2])?;
                probe(g, y)
            }),
        ),
        "batch_norm_eval" => {
            let mean = u(&[3]);
            let var = u(&[3]).map(|v| v.abs() + 0.5);
            (
                named(vec![
                    ("x", u(&[4, 3, 2, 2])),
                    ("gamma", u(&[3])),
                    ("beta", u(&[3])),
                ]),
                Box::new(move |g, v| {
                    let y = g.batch_norm_eval(v[0], v[1], v[2], &mean, &var)?;
                    probe(g, y)
                }),
            )
        }
        "softmax_cross_entropy" => (
            named(vec![("logits", u(&[4, 5]).map(|v| 3.0 * v))]),
            Box::new(|g, v| g.softmax_cross_entropy(v[0], &[0, 3, 4, 1])),
        ),
        "decide" => (
            named(vec![("m", u(&[2, 8])), ("w_d", u(&[3, 8]))]),
            Box::new(|g, v| {
                let y = decide(g, v[0], v[1], None)?;
                probe(g, y)
            }),
        ),
        "excite_fc" => (
            named(vec![
                ("m", u(&[2, 8])),
                ("w1", u(&[2, 8])),
                ("w2", u(&[8, 2])),
            ]),
            Box::new(|g, v| {
                let y = excite_fc(g, v[0], v[1], v[2])?;
                probe(g, y)
            }),
        ),
        "excite_ie" => (
            named(vec![
                ("m", u(&[2, 8])),
                ("gamma", u(&[1, 1])),
                ("beta", u(&[1, 1])),
            ]),
            Box::new(|g, v| {
                let y = excite_ie(g, v[0], v[1], v[2])?;
                probe(g, y)
            }),
        ),
        "switch" => (
            named(vec![
                ("fc", u(&[2, 8])),
                ("cnn", u(&[2, 8])),
                ("ie", u(&[2, 8])),
                ("w", u(&[2, 3]).map(|v| 0.5 + 0.45 * v)),
            ]),
            Box::new(|g, v| {
                let y = switch(
                    g,
                    &v[..3],
                    DecisionWeights::Learned(v[3]),
                    Activation::Sigmoid,
                )?;
                probe(g, y)
            }),
        ),
        "recalibrate" => (
            named(vec![("x", u(&[2, 8, 3, 3])), ("v", u(&[2, 8]))]),
            Box::new(|g, v| {
                let y = recalibrate(g, v[0], v[1])?;
                probe(g, y)
            }),
        ),
        "sem-layer" => {
            let (params, cfg) = sem_inputs(8, state.derive(2))?;
            let mut inputs = vec![("x".to_string(), u(&[2, 8, 4, 4]))];
            inputs.extend(params);
            let names: Vec<String> = inputs.iter().map(|(n, _)| n.clone()).collect();
            (
                inputs,
                Box::new(move |g, v| {
                    let out =
                        sem_forward(g, v[0], &sem_vars(&names, v), &cfg, AttentionOverride::None)?;
                    probe(g, out.x_att)
                }),
            )
        }
        "full-block" => {
            // pre-activation bottleneck, 16 -> 4 -> 4 -> 16 channels, SEM on the residual
            let (params, cfg) = sem_inputs(16, state.derive(3))?;
            let mut inputs = named(vec![
                ("x", u(&[2, 16, 2, 2])),
                ("bn1.gamma", u(&[16])),
                ("bn1.beta", u(&[16])),
                ("conv1", u(&[4, 16, 1, 1])),
                ("bn2.gamma", u(&[4])),
                ("bn2.beta", u(&[4])),
                ("conv2", u(&[4, 4, 3, 3])),
                ("bn3.gamma", u(&[4])),
                ("bn3.beta", u(&[4])),
                ("conv3", u(&[16, 4, 1, 1])),
            ]);
            let base = inputs.len();
            inputs.extend(params.into_iter().map(|(n, t)| (format!("attn.{n}"), t)));
            let names: Vec<String> = inputs[base..]
                .iter()
                .map(|(n, _)| n.trim_start_matches("attn.").to_string())
                .collect();
            (
                inputs,
                Box::new(move |g, v| {
                    let mut h = g.batch_norm_train(v[0], v[1], v[2])?;
                    h = g.relu(h);
                    h = g.conv2d(h, v[3], 1, 0)?;
                    h = g.batch_norm_train(h, v[4], v[5])?;
                    h = g.relu(h);
                    h = g.conv2d(h, v[6], 1, 1)?;
                    h = g.batch_norm_train(h, v[7], v[8])?;
                    h = g.relu(h);
                    h = g.conv2d(h, v[9], 1, 0)?;
                    let out = sem_forward(
                        g,
                        h,
                        &sem_vars(&names, &v[base..]),
                        &cfg,
                        AttentionOverride::None,
                    )?;
                    let y = g.add(out.x_att, v[0])?;
                    probe(g, y)
                }),
            )
        }
        other => {
            return Err(SemError::usage(format!(
                "unknown gradcheck scope '{other}'; expected one of: {}",
                all_scopes().collect::<Vec<_>>().join(", ")
            )))
        }
    })
}

/// Finite-difference check of one named scope in `f64`.
pub fn cmd_gradcheck(name: &str, seed: u64) -> Result<GradcheckReport> {
    let (inputs, build) = scope(name, seed)?;
    let borrowed: Vec<(&str, Tensor<f64>)> = inputs
        .iter()
        .map(|(n, t)| (n.as_str(), t.clone()))
        .collect();
    let groups = check_gradients(&borrowed, DEFAULT_EPS, build)?;
    Ok(GradcheckReport {
        scope: name.to_string(),
        groups,
    })
}
