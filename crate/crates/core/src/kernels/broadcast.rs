//! Binary elementwise ops where the right operand broadcasts into the left.
//!
//! Both operands have the same rank; every extent of `b` either equals the
//! matching extent of `a` or is 1. The output always has `a`'s shape.

use crate::error::{Result, SemError};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

/// How flat indices of the output map onto flat indices of `b`.
#[derive(Debug, Clone)]
pub(crate) enum Layout {
    /// `b` matches `a` on a prefix and is 1 on the remaining suffix:
    /// `b_index = out_index / block`.
    Blocked { block: usize },
    /// Anything else: per-axis strides with 0 on broadcast axes.
    Strided {
        shape: Vec<usize>,
        b_strides: Vec<usize>,
    },
}

pub(crate) fn layout(a: &[usize], b: &[usize]) -> Result<Layout> {
    if a.len() != b.len() || a.iter().zip(b).any(|(&x, &y)| y != x && y != 1) {
        return Err(SemError::domain(format!(
            "shape {b:?} does not broadcast into {a:?}"
        )));
    }
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    if b[prefix..].iter().all(|&d| d == 1) {
        return Ok(Layout::Blocked {
            block: a[prefix..].iter().product(),
        });
    }
    let mut b_strides = vec![0; b.len()];
    let mut acc = 1;
    for i in (0..b.len()).rev() {
        if b[i] != 1 {
            b_strides[i] = acc;
        }
        acc *= b[i];
    }
    Ok(Layout::Strided {
        shape: a.to_vec(),
        b_strides,
    })
}

impl Layout {
    /// Calls `f(out_index, b_index)` for every output element in order.
    fn for_each(&self, numel: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Layout::Blocked { block } => {
                if *block == 0 {
                    return;
                }
                for i in 0..numel {
                    f(i, i / block);
                }
            }
            Layout::Strided { shape, b_strides } => {
                let mut idx = vec![0usize; shape.len()];
                let mut bi = 0usize;
                for i in 0..numel {
                    f(i, bi);
                    for ax in (0..shape.len()).rev() {
                        idx[ax] += 1;
                        bi += b_strides[ax];
                        if idx[ax] < shape[ax] {
                            break;
                        }
                        bi -= b_strides[ax] * shape[ax];
                        idx[ax] = 0;
                    }
                }
            }
        }
    }
}

pub fn binary<T: Element>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let lay = layout(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); a.numel()];
    match op {
        BinaryOp::Add => lay.for_each(a.numel(), |i, j| out[i] = ad[i] + bd[j]),
        BinaryOp::Mul => lay.for_each(a.numel(), |i, j| out[i] = ad[i] * bd[j]),
    }
    Tensor::new(a.shape().to_vec(), out)
}

/// Gradients of `binary(op, a, b)` with respect to `a` and `b`.
pub fn binary_backward<T: Element>(
    op: BinaryOp,
    a: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let lay = layout(a.shape(), b.shape()).expect("validated in forward");
    let (ad, bd, g) = (a.data(), b.data(), dy.data());
    let mut da = vec![T::zero(); a.numel()];
    let mut db = vec![T::zero(); b.numel()];
    match op {
        BinaryOp::Add => lay.for_each(a.numel(), |i, j| {
            da[i] = g[i];
            db[j] = db[j] + g[i];
        }),
        BinaryOp::Mul => lay.for_each(a.numel(), |i, j| {
            da[i] = g[i] * bd[j];
            db[j] = db[j] + g[i] * ad[i];
        }),
    }
    (
        Tensor::new(a.shape().to_vec(), da).expect("grad a"),
        Tensor::new(b.shape().to_vec(), db).expect("grad b"),
    )
}
