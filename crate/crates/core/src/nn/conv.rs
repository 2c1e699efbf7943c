//! Strided 2-D cross-correlation and its transpose (up-convolution).
//!
//! Both go through im2col/col2im and one GEMM over a group of samples. Convolution
//! weights are `(C_out, C_in, K, K)`; up-convolution weights are
//! `(C_in, C_out, K, K)`, so one tensor serves as a convolution and as its
//! adjoint.

use super::gemm::{gemm, Op};
use super::{NnError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(K - stride) / 2` on every side: a convolution maps `H` to
    /// `H / stride` and an up-convolution maps `H` to `H * stride`.
    SameHalving,
    Explicit(usize),
}

impl Padding {
    pub fn resolve(self, kernel: usize, stride: usize) -> Result<usize, NnError> {
        match self {
            Padding::Explicit(p) => Ok(p),
            Padding::SameHalving => {
                if kernel < stride || (kernel - stride) % 2 != 0 {
                    return Err(NnError::Config(format!(
                        "same-halving padding needs kernel - stride even and >= 0 (kernel {kernel}, stride {stride})"
                    )));
                }
                Ok((kernel - stride) / 2)
            }
        }
    }
}

/// Gradients of a (up-)convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Geometry of a convolution from `(c, h, w)` to `(oh, ow)`.
#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_out(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    (len + 2 * p).checked_sub(k).map(|v| v / s + 1)
}

/// Writes the patches of one sample into columns `off..off + cols` of a
/// column matrix whose rows are `ld` long.
fn im2col<T: Real>(g: &Geom, x: &[T], col: &mut [T], ld: usize, off: usize) {
    for c in 0..g.c {
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let dst = &mut col[row * ld + off..][..g.cols()];
                for oy in 0..g.oh {
                    let iy = (oy * g.s + kh) as isize - g.p as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.s + kw) as isize - g.p as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
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

/// Adjoint of [`im2col`]: scatter-adds columns `off..off + cols` into `x`
/// (which is zeroed first).
fn col2im<T: Real>(g: &Geom, col: &[T], ld: usize, off: usize, x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..g.c {
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let src = &col[row * ld + off..][..g.cols()];
                for oy in 0..g.oh {
                    let iy = (oy * g.s + kh) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + iy as usize) * g.w..][..g.w];
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = (ox * g.s + kw) as isize - g.p as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Upper bound on column-matrix elements; larger batches are processed in
/// groups of samples. The grouping depends only on shapes.
const COL_BUDGET: usize = 1 << 24;

fn group_size(n: usize, per_sample: usize) -> usize {
    (COL_BUDGET / per_sample.max(1)).clamp(1, n.max(1))
}

/// Copies samples `s0..s0 + gn` of an `(N, C, P)` buffer into a
/// channel-major `(C, gn·P)` matrix.
fn gather<T: Real>(x: &[T], c: usize, plane: usize, s0: usize, gn: usize, out: &mut [T]) {
    let ld = gn * plane;
    for s in 0..gn {
        let src = &x[(s0 + s) * c * plane..][..c * plane];
        for ch in 0..c {
            out[ch * ld + s * plane..][..plane].copy_from_slice(&src[ch * plane..][..plane]);
        }
    }
}

/// Inverse of [`gather`].
fn scatter<T: Real>(m: &[T], c: usize, plane: usize, s0: usize, gn: usize, x: &mut [T]) {
    let ld = gn * plane;
    for s in 0..gn {
        let dst = &mut x[(s0 + s) * c * plane..][..c * plane];
        for ch in 0..c {
            dst[ch * plane..][..plane].copy_from_slice(&m[ch * ld + s * plane..][..plane]);
        }
    }
}

fn check_bias<T: Real>(bias: &Tensor<T>, channels: usize) -> Result<(), NnError> {
    if bias.len() != channels {
        return Err(NnError::ShapeMismatch {
            op: "bias",
            left: bias.shape().to_vec(),
            right: vec![channels],
        });
    }
    Ok(())
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = *v + *b);
    }
}

fn accumulate_bias_grad<T: Real>(dy: &[T], plane: usize, db: &mut [T]) {
    for (c, acc) in db.iter_mut().enumerate() {
        let s: T = dy[c * plane..(c + 1) * plane].iter().copied().sum();
        *acc = *acc + s;
    }
}

fn conv_geom<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Geom, usize), NnError> {
    let (_, cin, h, w) = x.dims4()?;
    let (cout, wcin, k, k2) = weight.dims4()?;
    if wcin != cin || k != k2 {
        return Err(NnError::ShapeMismatch {
            op: "conv2d",
            left: x.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    let p = padding.resolve(k, stride)?;
    let (oh, ow) = match (conv_out(h, k, stride, p), conv_out(w, k, stride, p)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                left: x.shape().to_vec(),
                right: weight.shape().to_vec(),
            })
        }
    };
    Ok((
        Geom {
            c: cin,
            h,
            w,
            k,
            s: stride,
            p,
            oh,
            ow,
        },
        cout,
    ))
}

pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let (g, cout) = conv_geom(x, weight, stride, padding)?;
    check_bias(bias, cout)?;
    let n = x.shape()[0];
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(&[n, cout, g.oh, g.ow]);
    let group = group_size(n, rows * cols);
    let mut col = vec![T::zero(); rows * cols * group];
    let mut y = vec![T::zero(); cout * cols * group];
    for s0 in (0..n).step_by(group) {
        let gn = group.min(n - s0);
        let ld = gn * cols;
        for s in 0..gn {
            im2col(&g, x.sample(s0 + s), &mut col, ld, s * cols);
        }
        let y = &mut y[..cout * ld];
        gemm(cout, rows, ld, weight.data(), Op::N, &col[..rows * ld], Op::N, T::zero(), y);
        scatter(y, cout, cols, s0, gn, out.data_mut());
    }
    for s in 0..n {
        let per = cout * cols;
        add_bias(&mut out.data_mut()[s * per..(s + 1) * per], bias.data(), cols);
    }
    out.debug_check_finite("conv2d");
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    let (g, cout) = conv_geom(x, weight, stride, padding)?;
    let n = x.shape()[0];
    if dy.shape() != [n, cout, g.oh, g.ow] {
        return Err(NnError::ShapeMismatch {
            op: "conv2d_backward",
            left: dy.shape().to_vec(),
            right: vec![n, cout, g.oh, g.ow],
        });
    }
    let (rows, cols) = (g.rows(), g.cols());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[cout]);
    for s in 0..n {
        accumulate_bias_grad(dy.sample(s), cols, db.data_mut());
    }
    let group = group_size(n, rows * cols);
    let mut col = vec![T::zero(); rows * cols * group];
    let mut dym = vec![T::zero(); cout * cols * group];
    let per_in = g.c * g.h * g.w;
    for s0 in (0..n).step_by(group) {
        let gn = group.min(n - s0);
        let ld = gn * cols;
        let col = &mut col[..rows * ld];
        let dym = &mut dym[..cout * ld];
        gather(dy.data(), cout, cols, s0, gn, dym);
        for s in 0..gn {
            im2col(&g, x.sample(s0 + s), col, ld, s * cols);
        }
        gemm(cout, ld, rows, dym, Op::N, col, Op::T, T::one(), dw.data_mut());
        gemm(rows, cout, ld, weight.data(), Op::T, dym, Op::N, T::zero(), col);
        for s in 0..gn {
            let dxs = &mut dx.data_mut()[(s0 + s) * per_in..][..per_in];
            col2im(&g, col, ld, s * cols, dxs);
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// Geometry of the convolution that an up-convolution is the transpose of.
fn upconv_geom<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Geom, usize), NnError> {
    let (_, cin, h, w) = x.dims4()?;
    let (wcin, cout, k, k2) = weight.dims4()?;
    if wcin != cin || k != k2 {
        return Err(NnError::ShapeMismatch {
            op: "upconv2d",
            left: x.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    let p = padding.resolve(k, stride)?;
    let oh = ((h - 1) * stride + k).checked_sub(2 * p);
    let ow = ((w - 1) * stride + k).checked_sub(2 * p);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((
            Geom {
                c: cout,
                h: oh,
                w: ow,
                k,
                s: stride,
                p,
                oh: h,
                ow: w,
            },
            cin,
        )),
        _ => Err(NnError::ShapeMismatch {
            op: "upconv2d",
            left: x.shape().to_vec(),
            right: weight.shape().to_vec(),
        }),
    }
}

pub fn upconv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let (g, cin) = upconv_geom(x, weight, stride, padding)?;
    check_bias(bias, g.c)?;
    let n = x.shape()[0];
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(&[n, g.c, g.h, g.w]);
    let group = group_size(n, rows * cols);
    let mut col = vec![T::zero(); rows * cols * group];
    let mut xm = vec![T::zero(); cin * cols * group];
    let per_out = g.c * g.h * g.w;
    for s0 in (0..n).step_by(group) {
        let gn = group.min(n - s0);
        let ld = gn * cols;
        let xm = &mut xm[..cin * ld];
        gather(x.data(), cin, cols, s0, gn, xm);
        gemm(rows, cin, ld, weight.data(), Op::T, xm, Op::N, T::zero(), &mut col[..rows * ld]);
        for s in 0..gn {
            let y = &mut out.data_mut()[(s0 + s) * per_out..][..per_out];
            col2im(&g, &col, ld, s * cols, y);
            add_bias(y, bias.data(), g.h * g.w);
        }
    }
    out.debug_check_finite("upconv2d");
    Ok(out)
}

pub fn upconv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    let (g, cin) = upconv_geom(x, weight, stride, padding)?;
    let n = x.shape()[0];
    if dy.shape() != [n, g.c, g.h, g.w] {
        return Err(NnError::ShapeMismatch {
            op: "upconv2d_backward",
            left: dy.shape().to_vec(),
            right: vec![n, g.c, g.h, g.w],
        });
    }
    let (rows, cols) = (g.rows(), g.cols());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[g.c]);
    for s in 0..n {
        accumulate_bias_grad(dy.sample(s), g.h * g.w, db.data_mut());
    }
    let group = group_size(n, rows * cols);
    let mut col = vec![T::zero(); rows * cols * group];
    let mut xm = vec![T::zero(); cin * cols * group];
    let mut dxm = vec![T::zero(); cin * cols * group];
    for s0 in (0..n).step_by(group) {
        let gn = group.min(n - s0);
        let ld = gn * cols;
        let col = &mut col[..rows * ld];
        for s in 0..gn {
            im2col(&g, dy.sample(s0 + s), col, ld, s * cols);
        }
        let xm = &mut xm[..cin * ld];
        gather(x.data(), cin, cols, s0, gn, xm);
        gemm(cin, ld, rows, xm, Op::N, col, Op::T, T::one(), dw.data_mut());
        let dxm = &mut dxm[..cin * ld];
        gemm(cin, rows, ld, weight.data(), Op::N, col, Op::N, T::zero(), dxm);
        scatter(dxm, cin, cols, s0, gn, dx.data_mut());
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
