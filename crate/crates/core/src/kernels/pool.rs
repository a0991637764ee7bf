use crate::error::{Result, SemError};
use crate::tensor::{Element, Tensor};

fn dims4<T: Element>(x: &Tensor<T>, op: &str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(SemError::domain(format!(
            "{op} expects (B,C,H,W), got {s:?}"
        ))),
    }
}

/// Mean over the spatial extent: (B,C,H,W) -> (B,C,1,1).
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x, "global_avg_pool")?;
    if h == 0 || w == 0 {
        return Err(SemError::domain(format!(
            "global_avg_pool needs non-empty spatial dims, got {h}x{w}"
        )));
    }
    let area = h * w;
    let inv = T::from_f64(1.0 / area as f64);
    let out = x
        .data()
        .chunks_exact(area)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new([b, c, 1, 1], out)
}

pub fn global_avg_pool_backward<T: Element>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let area = x_shape[2] * x_shape[3];
    let inv = T::from_f64(1.0 / area as f64);
    let mut dx = Vec::with_capacity(dy.numel() * area);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g * inv, area));
    }
    Tensor::new(x_shape.to_vec(), dx).expect("pool grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_pools_to_constant() {
        let x = Tensor::<f64>::ones([1, 2, 2, 2]);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[1.0, 1.0]);
    }

    #[test]
    fn mean_of_small_plane() {
        let x = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn empty_spatial_extent_is_rejected() {
        let x = Tensor::<f64>::zeros([1, 2, 0, 3]);
        assert!(matches!(global_avg_pool(&x), Err(SemError::Domain(_))));
        assert!(global_avg_pool(&Tensor::<f64>::zeros([2, 3])).is_err());
    }

    #[test]
    fn backward_spreads_evenly() {
        let dy = Tensor::<f64>::from_f64([1, 2, 1, 1], &[4.0, 8.0]).unwrap();
        let dx = global_avg_pool_backward(&[1, 2, 2, 2], &dy);
        assert_eq!(dx.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
