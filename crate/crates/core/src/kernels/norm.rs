//! Per-channel batch normalization over `(B,C,...)` tensors.

use crate::error::{Result, SemError};
use crate::tensor::{Element, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by the running statistics on every update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Statistics produced by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Normalized input, kept for the backward pass.
    pub xhat: Tensor<T>,
}

fn dims<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(SemError::domain(format!(
            "batch_norm expects (B,C,...), got {s:?}"
        )));
    }
    let (b, c) = (s[0], s[1]);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(SemError::domain(format!(
            "batch_norm parameters {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok((b, c, s[2..].iter().product()))
}

/// Visit every `(channel, contiguous span)` of a `(B,C,inner)` layout.
fn for_spans<T>(data: &[T], c: usize, inner: usize, mut f: impl FnMut(usize, &[T])) {
    for (i, span) in data.chunks_exact(inner.max(1)).enumerate() {
        f(i % c, span);
    }
}

pub fn batch_norm_train<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BatchNormStats<T>)> {
    let (b, c, inner) = dims(x, gamma, beta)?;
    let count = b * inner;
    if count == 0 {
        return Err(SemError::domain("batch_norm over an empty batch"));
    }
    let n = T::from_f64(count as f64);
    let mut mean = vec![T::zero(); c];
    for_spans(x.data(), c, inner, |ch, span| {
        mean[ch] = mean[ch] + span.iter().copied().sum::<T>();
    });
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); c];
    for_spans(x.data(), c, inner, |ch, span| {
        let mu = mean[ch];
        var[ch] = var[ch] + span.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
    });
    var.iter_mut().for_each(|v| *v = *v / n);
    let eps = T::from_f64(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = Vec::with_capacity(x.numel());
    let mut y = Vec::with_capacity(x.numel());
    for_spans(x.data(), c, inner, |ch, span| {
        let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
        for &v in span {
            let h = (v - mu) * is;
            xhat.push(h);
            y.push(g * h + bt);
        }
    });
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), y)?,
        BatchNormStats {
            mean,
            var,
            inv_std,
            xhat: Tensor::new(shape, xhat)?,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_train_backward<T: Element>(
    gamma: &Tensor<T>,
    stats: &BatchNormStats<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = dy.shape();
    let (b, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let n = T::from_f64((b * inner) as f64);
    let xhat = stats.xhat.data();
    let g = dy.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, (gs, hs)) in g
        .chunks_exact(inner.max(1))
        .zip(xhat.chunks_exact(inner.max(1)))
        .enumerate()
    {
        let ch = i % c;
        for (&gv, &hv) in gs.iter().zip(hs) {
            dbeta[ch] = dbeta[ch] + gv;
            dgamma[ch] = dgamma[ch] + gv * hv;
        }
    }
    // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
    let mut dx = Vec::with_capacity(dy.numel());
    for (i, (gs, hs)) in g
        .chunks_exact(inner.max(1))
        .zip(xhat.chunks_exact(inner.max(1)))
        .enumerate()
    {
        let ch = i % c;
        let scale = gamma.data()[ch] * stats.inv_std[ch] / n;
        for (&gv, &hv) in gs.iter().zip(hs) {
            dx.push(scale * (n * gv - dbeta[ch] - hv * dgamma[ch]));
        }
    }
    (
        Tensor::new(s.to_vec(), dx).expect("dx"),
        Tensor::new([c], dgamma).expect("dgamma"),
        Tensor::new([c], dbeta).expect("dbeta"),
    )
}

/// Inference-mode normalization with fixed statistics. Returns `(y, xhat)`.
pub fn batch_norm_eval<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, c, inner) = dims(x, gamma, beta)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(SemError::domain(
            "batch_norm running statistics do not match channels",
        ));
    }
    let eps = T::from_f64(BN_EPS);
    let mut y = Vec::with_capacity(x.numel());
    let mut xhat = Vec::with_capacity(x.numel());
    for_spans(x.data(), c, inner, |ch, span| {
        let mu = running_mean.data()[ch];
        let is = T::one() / (running_var.data()[ch] + eps).sqrt();
        let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
        for &v in span {
            let h = (v - mu) * is;
            xhat.push(h);
            y.push(g * h + bt);
        }
    });
    Ok((
        Tensor::new(x.shape().to_vec(), y)?,
        Tensor::new(x.shape().to_vec(), xhat)?,
    ))
}

/// Returns `(dx, dgamma, dbeta)` for the inference-mode transform.
pub fn batch_norm_eval_backward<T: Element>(
    gamma: &Tensor<T>,
    running_var: &Tensor<T>,
    xhat: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = dy.shape();
    let c = s[1];
    let inner: usize = s[2..].iter().product::<usize>().max(1);
    let eps = T::from_f64(BN_EPS);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = Vec::with_capacity(dy.numel());
    for (i, (gs, hs)) in dy
        .data()
        .chunks_exact(inner)
        .zip(xhat.data().chunks_exact(inner))
        .enumerate()
    {
        let ch = i % c;
        let scale = gamma.data()[ch] / (running_var.data()[ch] + eps).sqrt();
        for (&gv, &hv) in gs.iter().zip(hs) {
            dbeta[ch] = dbeta[ch] + gv;
            dgamma[ch] = dgamma[ch] + gv * hv;
            dx.push(gv * scale);
        }
    }
    (
        Tensor::new(s.to_vec(), dx).expect("dx"),
        Tensor::new([c], dgamma).expect("dgamma"),
        Tensor::new([c], dbeta).expect("dbeta"),
    )
}

/// Blend batch statistics into running statistics. The running variance
/// tracks the unbiased batch variance.
pub fn update_running_stats<T: Element>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    stats: &BatchNormStats<T>,
    count: usize,
) {
    let keep = T::from_f64(BN_MOMENTUM);
    let take = T::one() - keep;
    let unbias = if count > 1 {
        T::from_f64(count as f64 / (count - 1) as f64)
    } else {
        T::one()
    };
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = keep * *r + take * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&stats.var) {
        *r = keep * *r + take * v * unbias;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use rand::Rng;

    #[test]
    fn train_mode_output_statistics_follow_affine_params() {
        let (b, c, inner) = (64, 3, 16);
        let mut rng = RngState::new(11, 0).rng();
        let data: Vec<f64> = (0..b * c * inner)
            .map(|_| rng.random_range(-3.0..5.0))
            .collect();
        let x = Tensor::new([b, c, 4, 4], data).unwrap();
        let gamma = Tensor::from_f64([c], &[2.0, -0.5, 1.0]).unwrap();
        let beta = Tensor::from_f64([c], &[0.3, 1.0, -2.0]).unwrap();
        let (y, _) = batch_norm_train(&x, &gamma, &beta).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = y
                .data()
                .chunks_exact(inner)
                .enumerate()
                .filter(|(i, _)| i % c == ch)
                .flat_map(|(_, s)| s.iter().copied())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!((mean - beta.data()[ch]).abs() < 1e-5, "mean {mean}");
            // ε=1e-5 shrinks the std by about ε/(2·var)
            assert!((std - gamma.data()[ch].abs()).abs() < 1e-5, "std {std}");
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        let x = Tensor::<f64>::from_f64([4, 1], &[1.0, -1.0, 1.0, -1.0]).unwrap();
        let (y, _) = batch_norm_train(&x, &Tensor::ones([1]), &Tensor::zeros([1])).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::<f64>::zeros([2, 3, 2, 2]);
        assert!(batch_norm_train(&x, &Tensor::ones([2]), &Tensor::zeros([2])).is_err());
    }

    #[test]
    fn running_stats_momentum() {
        let x = Tensor::<f64>::from_f64([2, 1], &[1.0, 3.0]).unwrap();
        let (_, stats) = batch_norm_train(&x, &Tensor::ones([1]), &Tensor::zeros([1])).unwrap();
        let mut rm = Tensor::zeros([1]);
        let mut rv = Tensor::ones([1]);
        update_running_stats(&mut rm, &mut rv, &stats, 2);
        assert!((rm.data()[0] - 0.2).abs() < 1e-12);
        // unbiased var of {1,3} is 2
        assert!((rv.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
