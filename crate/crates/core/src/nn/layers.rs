//! Batch normalization, activations, dropout and channel concatenation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NnError, Real, Tensor};

pub const BN_EPS: f64 = 1e-5;

/// Saved values for [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache<T = f32> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel normalization with the statistics of the current batch,
/// taken over `(N, H, W)`, followed by the affine `scale * xhat + shift`.
/// The same rule applies in training and in inference.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    let (n, c, h, w) = x.dims4()?;
    if scale.len() != c || shift.len() != c {
        return Err(NnError::ShapeMismatch {
            op: "batchnorm",
            left: x.shape().to_vec(),
            right: scale.shape().to_vec(),
        });
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(c);
    let xd = x.data();
    for ch in 0..c {
        let slices = (0..n).map(|s| &xd[(s * c + ch) * plane..][..plane]);
        let mean = slices.clone().flatten().map(|v| v.to_f64().unwrap()).sum::<f64>() / count;
        let var = slices
            .flatten()
            .map(|v| {
                let d = v.to_f64().unwrap() - mean;
                d * d
            })
            .sum::<f64>()
            / count;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        let g = scale.data()[ch];
        let b = shift.data()[ch];
        let (istd_t, mean_t) = (T::from_f64(istd), T::from_f64(mean));
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                let xh = (xd[i] - mean_t) * istd_t;
                xhat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + b;
            }
        }
        inv_std.push(istd_t);
    }
    y.debug_check_finite("batchnorm");
    Ok((y, BnCache { xhat, inv_std }))
}

/// Returns `(dx, dscale, dshift)`.
pub fn batchnorm_backward<T: Real>(
    cache: &BnCache<T>,
    scale: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, c, h, w) = dy.dims4()?;
    if cache.xhat.shape() != dy.shape() {
        return Err(NnError::ShapeMismatch {
            op: "batchnorm_backward",
            left: dy.shape().to_vec(),
            right: cache.xhat.shape().to_vec(),
        });
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dscale = Tensor::zeros(&[c]);
    let mut dshift = Tensor::zeros(&[c]);
    let (xh, g) = (cache.xhat.data(), dy.data());
    for ch in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xh = 0.0f64;
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                let d = g[i].to_f64().unwrap();
                sum_dy += d;
                sum_dy_xh += d * xh[i].to_f64().unwrap();
            }
        }
        dshift.data_mut()[ch] = T::from_f64(sum_dy);
        dscale.data_mut()[ch] = T::from_f64(sum_dy_xh);
        let gamma = scale.data()[ch].to_f64().unwrap();
        let istd = cache.inv_std[ch].to_f64().unwrap();
        let k = gamma * istd / m;
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                let v = k
                    * (m * g[i].to_f64().unwrap() - sum_dy - xh[i].to_f64().unwrap() * sum_dy_xh);
                dx.data_mut()[i] = T::from_f64(v);
            }
        }
    }
    Ok((dx, dscale, dshift))
}

/// `max(x, slope * x)` elementwise; `slope = 0` is a plain ReLU.
pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    leaky_relu(x, T::zero())
}

pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, slope: T, dy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &d)| if v > T::zero() { d } else { d * slope })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Inverted dropout. In training each element is zeroed with probability
/// `p` and survivors are scaled by `1 / (1 - p)`; the returned mask holds
/// the per-element multiplier. Outside training, and for `p = 0`, the
/// input is returned unchanged with no mask.
pub fn dropout<T: Real>(
    x: &Tensor<T>,
    p: f64,
    training: bool,
    seed: u64,
) -> Result<(Tensor<T>, Option<Vec<T>>), NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::from_f64(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::from_vec(x.shape(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Real>(dy: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let data = dy.data().iter().zip(m).map(|(&d, &k)| d * k).collect();
            Tensor::from_vec(dy.shape(), data).expect("same shape")
        }
    }
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(NnError::ShapeMismatch {
            op: "concat_channels",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], data)
}

/// Inverse of [`concat_channels`]: the first `ca` channels, then the rest.
pub fn split_channels<T: Real>(x: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    let (n, c, h, w) = x.dims4()?;
    if ca > c {
        return Err(NnError::Config(format!("cannot split {ca} channels from {c}")));
    }
    let cb = c - ca;
    let plane = h * w;
    let mut a = Vec::with_capacity(n * ca * plane);
    let mut b = Vec::with_capacity(n * cb * plane);
    for s in 0..n {
        let base = s * c * plane;
        a.extend_from_slice(&x.data()[base..base + ca * plane]);
        b.extend_from_slice(&x.data()[base + ca * plane..base + c * plane]);
    }
    Ok((
        Tensor::from_vec(&[n, ca, h, w], a)?,
        Tensor::from_vec(&[n, cb, h, w], b)?,
    ))
}
