//! 2-D cross-correlation via im2col + GEMM, and the channel-axis 1-D
//! convolution used by the ECA-style excitation.

use crate::error::{Result, SemError};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeom {
    pub fn new(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (batch, in_ch, height, width) = match *x {
            [b, c, h, w] => (b, c, h, w),
            _ => {
                return Err(SemError::domain(format!(
                    "conv2d expects (B,C,H,W) input, got {x:?}"
                )))
            }
        };
        let (out_ch, kernel) = match *k {
            [co, ci, kh, kw] if ci == in_ch && kh == kw => (co, kh),
            _ => {
                return Err(SemError::domain(format!(
                    "conv2d kernel {k:?} incompatible with input {x:?}"
                )))
            }
        };
        if stride == 0 {
            return Err(SemError::domain("conv2d stride must be >= 1"));
        }
        let extent = |n: usize| (n + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1);
        match (extent(height), extent(width)) {
            (Some(out_h), Some(out_w)) if out_h >= 1 && out_w >= 1 => Ok(Self {
                batch,
                in_ch,
                out_ch,
                height,
                width,
                kernel,
                stride,
                pad,
                out_h,
                out_w,
            }),
            _ => Err(SemError::domain(format!(
                "conv2d output extent < 1 for input {height}x{width}, kernel {kernel}, pad {pad}"
            ))),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_ch, self.out_h, self.out_w]
    }

    /// Unfold one sample `(C,H,W)` into `(C·k·k, out_h·out_w)`.
    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let k = self.kernel;
        let area = self.out_area();
        for c in 0..self.in_ch {
            let plane = &x[c * self.height * self.width..][..self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * area..][..area];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.out_w..][..self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..][..self.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: accumulate columns back into a sample.
    fn col2im<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let k = self.kernel;
        let area = self.out_area();
        for c in 0..self.in_ch {
            let plane = &mut dx[c * self.height * self.width..][..self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * area..][..area];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..][..self.width];
                        for (ox, &v) in row[oy * self.out_w..][..self.out_w].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. `x: (B,Cin,H,W)`, `k: (Cout,Cin,kh,kw)`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Conv2dGeom::new(x.shape(), k.shape(), stride, pad)?;
    let (patch, area) = (g.patch(), g.out_area());
    let in_len = g.in_ch * g.height * g.width;
    let mut out = vec![T::zero(); g.batch * g.out_ch * area];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * area]
    };
    for (xb, yb) in x
        .data()
        .chunks_exact(in_len)
        .zip(out.chunks_exact_mut(g.out_ch * area))
    {
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            g.im2col(xb, &mut cols);
            &cols
        };
        T::gemm(
            g.out_ch,
            patch,
            area,
            T::one(),
            k.data(),
            (patch as isize, 1),
            src,
            (area as isize, 1),
            T::zero(),
            yb,
            (area as isize, 1),
        );
    }
    Tensor::new(g.output_shape().to_vec(), out)
}

/// Returns `(dx, dk)`.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let g = Conv2dGeom::new(x.shape(), k.shape(), stride, pad).expect("validated in forward");
    let (patch, area) = (g.patch(), g.out_area());
    let in_len = g.in_ch * g.height * g.width;
    let mut dx = vec![T::zero(); x.numel()];
    let mut dk = vec![T::zero(); k.numel()];
    let mut cols = vec![T::zero(); patch * area];
    let mut dcols = vec![T::zero(); patch * area];
    let samples = x
        .data()
        .chunks_exact(in_len)
        .zip(dy.data().chunks_exact(g.out_ch * area))
        .zip(dx.chunks_exact_mut(in_len));
    for ((xb, gb), dxb) in samples {
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            g.im2col(xb, &mut cols);
            &cols
        };
        // dK += dY · colsᵀ
        T::gemm(
            g.out_ch,
            area,
            patch,
            T::one(),
            gb,
            (area as isize, 1),
            src,
            (1, area as isize),
            T::one(),
            &mut dk,
            (patch as isize, 1),
        );
        // dcols = Kᵀ · dY
        let target: &mut [T] = if g.is_pointwise() { dxb } else { &mut dcols };
        T::gemm(
            patch,
            g.out_ch,
            area,
            T::one(),
            k.data(),
            (1, patch as isize),
            gb,
            (area as isize, 1),
            T::zero(),
            target,
            (area as isize, 1),
        );
        if !g.is_pointwise() {
            g.col2im(&dcols, dxb);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx"),
        Tensor::new(k.shape().to_vec(), dk).expect("dk"),
    )
}

fn conv1d_dims<T: Element>(m: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (b, c) = match *m.shape() {
        [b, c] => (b, c),
        ref s => {
            return Err(SemError::domain(format!(
                "conv1d_channel expects (B,C), got {s:?}"
            )))
        }
    };
    let k = match *kernel.shape() {
        [k] => k,
        ref s => {
            return Err(SemError::domain(format!(
                "conv1d_channel kernel must be 1-D, got {s:?}"
            )))
        }
    };
    if k % 2 == 0 {
        return Err(SemError::domain(format!(
            "conv1d_channel kernel length must be odd, got {k}"
        )));
    }
    Ok((b, c, k))
}

/// `out[b,c] = Σ_p kernel[p] · m[b, c + p - (k-1)/2]`, zero outside `[0, C)`.
pub fn conv1d_channel<T: Element>(m: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, k) = conv1d_dims(m, kernel)?;
    let half = (k / 2) as isize;
    let w = kernel.data();
    let mut out = vec![T::zero(); b * c];
    for (row, dst) in m.data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for (ci, d) in dst.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (p, &wp) in w.iter().enumerate() {
                let src = ci as isize + p as isize - half;
                if src >= 0 && (src as usize) < c {
                    acc = acc + wp * row[src as usize];
                }
            }
            *d = acc;
        }
    }
    Tensor::new([b, c], out)
}

/// Returns `(dm, dkernel)`.
pub fn conv1d_channel_backward<T: Element>(
    m: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (_, c, k) = conv1d_dims(m, kernel).expect("validated in forward");
    let half = (k / 2) as isize;
    let w = kernel.data();
    let mut dm = vec![T::zero(); m.numel()];
    let mut dk = vec![T::zero(); k];
    let rows = m
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dm.chunks_exact_mut(c));
    for ((row, grow), drow) in rows {
        for (ci, &g) in grow.iter().enumerate() {
            for (p, &wp) in w.iter().enumerate() {
                let src = ci as isize + p as isize - half;
                if src >= 0 && (src as usize) < c {
                    let s = src as usize;
                    drow[s] = drow[s] + g * wp;
                    dk[p] = dk[p] + g * row[s];
                }
            }
        }
    }
    (
        Tensor::new(m.shape().to_vec(), dm).expect("dm"),
        Tensor::new([k], dk).expect("dk"),
    )
}
