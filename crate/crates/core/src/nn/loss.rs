use super::{NnError, Real, Tensor};

/// Summed per-pixel cross-entropy and its gradient w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct LossValue<T = f32> {
    pub loss: f64,
    pub grad: Tensor<T>,
}

/// Softmax over the k channels of every pixel of `(N, k, H, W)` logits.
pub fn softmax_channels<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, k, h, w) = logits.dims4()?;
    let plane = h * w;
    let mut out = Tensor::zeros(logits.shape());
    let src = logits.data();
    let dst = out.data_mut();
    let mut buf = vec![0.0f64; k];
    for s in 0..n {
        let base = s * k * plane;
        for i in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for c in 0..k {
                buf[c] = src[base + c * plane + i].to_f64().unwrap();
                m = m.max(buf[c]);
            }
            let mut z = 0.0;
            for v in buf.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for c in 0..k {
                dst[base + c * plane + i] = T::from_f64(buf[c] / z);
            }
        }
    }
    Ok(out)
}

/// `L = Σ_pixels −log softmax(logits)[target]`, every pixel counted
/// (background included). The gradient is `softmax − one_hot`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    target: &[u8],
) -> Result<LossValue<T>, NnError> {
    let (n, k, h, w) = logits.dims4()?;
    let plane = h * w;
    if target.len() != n * plane {
        return Err(NnError::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![target.len()],
        });
    }
    if let Some(&bad) = target.iter().find(|&&t| t as usize >= k) {
        return Err(NnError::LabelOutOfRange { label: bad as usize, k });
    }
    let mut grad = Tensor::zeros(logits.shape());
    let src = logits.data();
    let g = grad.data_mut();
    let mut loss = 0.0f64;
    let mut buf = vec![0.0f64; k];
    for s in 0..n {
        let base = s * k * plane;
        for i in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for c in 0..k {
                buf[c] = src[base + c * plane + i].to_f64().unwrap();
                m = m.max(buf[c]);
            }
            let z: f64 = buf.iter().map(|v| (v - m).exp()).sum();
            let log_z = m + z.ln();
            let t = target[s * plane + i] as usize;
            loss += log_z - buf[t];
            for c in 0..k {
                let p = (buf[c] - log_z).exp();
                let onehot = if c == t { 1.0 } else { 0.0 };
                g[base + c * plane + i] = T::from_f64(p - onehot);
            }
        }
    }
    Ok(LossValue { loss, grad })
}
