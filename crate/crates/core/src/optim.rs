//! SGD with momentum and L2 weight decay, plus a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemError};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Momentum SGD. One velocity buffer per parameter, created zeroed on first use.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    /// `v ← μ·v + (g + λ·p)`, `p ← p − lr·v` for every parameter with a gradient.
    ///
    /// `params[i]` pairs with `grads[i]`; a `None` gradient leaves the
    /// parameter and its velocity untouched.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Option<&Tensor<T>>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(SemError::domain(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        let mu = T::from_f64(self.config.momentum);
        let wd = T::from_f64(self.config.weight_decay);
        let lr = T::from_f64(lr);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(g) = g else { continue };
            if g.shape() != p.shape() {
                return Err(SemError::domain(format!(
                    "gradient {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let v = v.get_or_insert_with(|| Tensor::zeros_like(p));
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = mu * *vv + (gv + wd * *pv);
                *pv = *pv - lr * *vv;
            }
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate: `initial · gamma^(milestones passed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl StepSchedule {
    pub fn new(initial: f64, mut milestones: Vec<usize>, gamma: f64) -> Self {
        milestones.sort_unstable();
        Self {
            initial,
            milestones,
            gamma,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.initial * self.gamma.powi(passed as i32)
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self::new(0.1, vec![81, 122], 0.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_f64([1], &[v]).unwrap()
    }

    #[test]
    fn plain_gradient_descent_without_momentum_or_decay() {
        let mut opt = Sgd::new(SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
        });
        let mut p = scalar(1.0);
        let g = scalar(0.5);
        opt.step(&mut [&mut p], &[Some(&g)], 0.1).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_parameter() {
        let mut opt = Sgd::new(SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        });
        let mut p = scalar(3.0);
        opt.step(&mut [&mut p], &[Some(&scalar(0.0))], 0.1).unwrap();
        assert_eq!(p.data()[0], 3.0);
    }

    #[test]
    fn two_steps_on_quadratic_match_scalar_recurrence() {
        // f(p) = 0.5·a·p², g = a·p
        let (a, lr, mu, wd) = (2.0, 0.1, 0.9, 1e-4);
        let (mut p_ref, mut v_ref) = (1.5f64, 0.0f64);
        let mut expected = Vec::new();
        for _ in 0..2 {
            v_ref = mu * v_ref + (a * p_ref + wd * p_ref);
            p_ref -= lr * v_ref;
            expected.push(p_ref);
        }
        let mut opt = Sgd::new(SgdConfig {
            momentum: mu,
            weight_decay: wd,
        });
        let mut p = scalar(1.5);
        for want in expected {
            let g = scalar(a * p.data()[0]);
            opt.step(&mut [&mut p], &[Some(&g)], lr).unwrap();
            assert_eq!(p.data()[0], want);
        }
    }

    #[test]
    fn missing_gradient_is_skipped() {
        let mut opt = Sgd::new(SgdConfig::default());
        let mut p = scalar(2.0);
        opt.step(&mut [&mut p], &[None], 0.1).unwrap();
        assert_eq!(p.data()[0], 2.0);
        assert!(opt.step(&mut [&mut p], &[], 0.1).is_err());
    }

    #[test]
    fn default_schedule_milestones() {
        let s = StepSchedule::default();
        for (epoch, want) in [
            (0, 0.1),
            (80, 0.1),
            (81, 0.01),
            (121, 0.01),
            (122, 0.001),
            (163, 0.001),
        ] {
            assert!((s.lr_at(epoch) - want).abs() < 1e-15, "epoch {epoch}");
        }
    }
}
