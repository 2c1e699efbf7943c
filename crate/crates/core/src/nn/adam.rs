use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update. `step` is the 1-based step number.
pub fn adam_step(
    params: &mut [f32],
    grads: &[f32],
    moments: &mut AdamMoments,
    step: u64,
    cfg: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.m.len());
    assert!(step >= 1, "adam step numbers start at 1");
    let t = step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = AdamConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.eps), (1e-4, 0.9, 0.999, 1e-8));
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let grads = [1e-3f32, -0.5, 3.0, -1e-3, 20.0];
        let mut p = [0.0f32; 5];
        let mut mom = AdamMoments::zeros(5);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &grads, &mut mom, 1, &cfg);
        for (pi, g) in p.iter().zip(grads) {
            assert!((pi + cfg.lr * g.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = [1.5f32, -2.0];
        let mut mom = AdamMoments::zeros(2);
        for t in 1..=50 {
            adam_step(&mut p, &[0.0, 0.0], &mut mom, t, &AdamConfig::default());
        }
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn quadratic_decreases() {
        let cfg = AdamConfig::default();
        let mut w = [1.0f32];
        let mut mom = AdamMoments::zeros(1);
        let mut prev = 1.0f32;
        for t in 1..=100 {
            let g = [2.0 * w[0]];
            adam_step(&mut w, &g, &mut mom, t, &cfg);
            assert!(w[0].abs() < prev, "step {t}: {} !< {prev}", w[0].abs());
            prev = w[0].abs();
        }
    }
}
