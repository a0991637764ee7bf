//! Central finite differences and comparison against the tape's gradients.

use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;
/// Entries this far below the largest numeric gradient of their group are
/// compared against that scale instead of their own; central differences
/// carry roundoff of roughly `ε_mach·|f| / ε` there.
pub const GROUP_SCALE_FLOOR: f64 = 1e-3;

/// `(f(x + ε·e_i) − f(x − ε·e_i)) / 2ε` for every element `i`.
pub fn finite_difference_grad(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    eps: f64,
) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, τ)` with
/// `τ = max(REL_ERR_FLOOR, GROUP_SCALE_FLOOR·max_j |n_j|)`.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let scale = numeric.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = REL_ERR_FLOOR.max(GROUP_SCALE_FLOOR * scale);
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub scope: String,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_err <= tolerance)
    }
}

/// Compare backward() against finite differences for every named input.
///
/// `build` records a scalar loss from leaves bound to `inputs` (in order).
/// It is re-run from scratch for every perturbation, so it must be
/// deterministic.
pub fn check_gradients<F>(
    inputs: &[(&str, Tensor<f64>)],
    eps: f64,
    build: F,
) -> Result<Vec<GroupReport>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;

    let mut reports = Vec::with_capacity(inputs.len());
    for (i, (name, value)) in inputs.iter().enumerate() {
        let analytic = g
            .grad(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(value));
        let mut err = None;
        let numeric = finite_difference_grad(
            |probe| {
                let mut h = Graph::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, (_, t))| h.constant(if j == i { probe.clone() } else { t.clone() }))
                    .collect();
                match build(&mut h, &vs) {
                    Ok(l) => h.value(l).data()[0],
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            value,
            eps,
        );
        if let Some(e) = err {
            return Err(e);
        }
        reports.push(GroupReport {
            name: name.to_string(),
            numel: value.numel(),
            max_rel_err: max_relative_error(&analytic, &numeric),
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_f64([4], &[0.3, -1.0, 2.0, 5.0]).unwrap();
        let g = finite_difference_grad(|t| t.sum(), &x, DEFAULT_EPS);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let x = Tensor::from_f64([5], &[0.3, -1.0, 2.0, 5.0, -0.01]).unwrap();
        let g = finite_difference_grad(
            |t| 0.5 * t.data().iter().map(|v| v * v).sum::<f64>(),
            &x,
            DEFAULT_EPS,
        );
        assert!(g.max_abs_diff(&x).unwrap() < 1e-7);
    }

    #[test]
    fn relative_error_floor() {
        // all entries tiny: only the absolute floor applies
        let a = Tensor::from_f64([2], &[0.0, 0.0]).unwrap();
        let n = Tensor::from_f64([2], &[1e-9, 0.0]).unwrap();
        let e = max_relative_error(&a, &n);
        assert!(e < 1.1e-3 && e > 9e-4, "{e}");
    }

    #[test]
    fn small_entries_measured_against_group_scale() {
        let a = Tensor::from_f64([2], &[1.0, 1e-6]).unwrap();
        let n = Tensor::from_f64([2], &[1.0, 1e-6 + 1e-10]).unwrap();
        assert!(max_relative_error(&a, &n) < 1e-6);
        // a wrong large entry is still caught
        let bad = Tensor::from_f64([2], &[1.001, 1e-6]).unwrap();
        assert!(max_relative_error(&bad, &n) > 9e-4);
    }
}
