use crate::error::{Result, SemError};
use crate::tensor::{Element, Tensor};

/// `y = x·Wᵀ (+ bias)` for `x: (B,Cin)`, `W: (Cout,Cin)`, `bias: (Cout)`.
pub fn affine<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (batch, cin, cout) = match (x.shape(), w.shape()) {
        (&[b, ci], &[co, wi]) if ci == wi => (b, ci, co),
        (xs, ws) => {
            return Err(SemError::domain(format!(
                "affine: input {xs:?} incompatible with weight {ws:?}"
            )))
        }
    };
    let mut y = match bias {
        Some(bias) => {
            if bias.shape() != [cout] {
                return Err(SemError::domain(format!(
                    "affine: bias {:?} does not match {cout} outputs",
                    bias.shape()
                )));
            }
            let mut y = Vec::with_capacity(batch * cout);
            for _ in 0..batch {
                y.extend_from_slice(bias.data());
            }
            y
        }
        None => vec![T::zero(); batch * cout],
    };
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        batch,
        cin,
        cout,
        T::one(),
        x.data(),
        (cin as isize, 1),
        w.data(),
        (1, cin as isize),
        beta,
        &mut y,
        (cout as isize, 1),
    );
    Tensor::new([batch, cout], y)
}

pub struct AffineGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub dbias: Tensor<T>,
}

pub fn affine_backward<T: Element>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> AffineGrads<T> {
    let (batch, cin) = (x.shape()[0], x.shape()[1]);
    let cout = w.shape()[0];
    let mut dx = vec![T::zero(); batch * cin];
    T::gemm(
        batch,
        cout,
        cin,
        T::one(),
        dy.data(),
        (cout as isize, 1),
        w.data(),
        (cin as isize, 1),
        T::zero(),
        &mut dx,
        (cin as isize, 1),
    );
    let mut dw = vec![T::zero(); cout * cin];
    T::gemm(
        cout,
        batch,
        cin,
        T::one(),
        dy.data(),
        (1, cout as isize),
        x.data(),
        (cin as isize, 1),
        T::zero(),
        &mut dw,
        (cin as isize, 1),
    );
    let mut dbias = vec![T::zero(); cout];
    for row in dy.data().chunks_exact(cout) {
        for (acc, &g) in dbias.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    AffineGrads {
        dx: Tensor::new([batch, cin], dx).expect("dx"),
        dw: Tensor::new([cout, cin], dw).expect("dw"),
        dbias: Tensor::new([cout], dbias).expect("dbias"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_through() {
        let x = Tensor::<f64>::from_f64([2, 3], &[1.0, 2.0, 3.0, -4.0, 5.0, -6.0]).unwrap();
        let mut eye = Tensor::<f64>::zeros([3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        assert_eq!(affine(&x, &eye, None).unwrap(), x);
    }

    #[test]
    fn zero_input_yields_bias() {
        let x = Tensor::<f64>::zeros([2, 3]);
        let w = Tensor::<f64>::ones([2, 3]);
        let b = Tensor::<f64>::from_f64([2], &[0.5, -1.0]).unwrap();
        assert_eq!(
            affine(&x, &w, Some(&b)).unwrap().data(),
            &[0.5, -1.0, 0.5, -1.0]
        );
        assert_eq!(affine(&x, &w, None).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::<f64>::zeros([2, 3]);
        assert!(affine(&x, &Tensor::zeros([2, 4]), None).is_err());
        assert!(affine(&x, &Tensor::zeros([2, 3]), Some(&Tensor::zeros([3]))).is_err());
    }
}
