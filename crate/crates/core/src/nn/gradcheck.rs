//! Finite-difference verification of the backward kernels.
//!
//! Every kernel is run in `f64`; a random projection `r` turns its output
//! into the scalar `L = <r, f(inputs)>` (the loss kernel is already a
//! scalar). Analytic gradients from the backward pass are compared to
//! central differences with step `1e-4`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, leaky_relu, leaky_relu_backward,
    softmax_cross_entropy, upconv2d, upconv2d_backward, NnError, Padding, Tensor,
};

pub const FD_STEP: f64 = 1e-4;

/// Denominator floor of the relative error, so that gradients that are
/// zero up to round-off are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Inputs closer than this to the leaky-ReLU kink are resampled.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheckCase {
    Conv2d {
        n: usize,
        cin: usize,
        cout: usize,
        size: usize,
        kernel: usize,
        stride: usize,
    },
    UpConv2d {
        n: usize,
        cin: usize,
        cout: usize,
        size: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        n: usize,
        c: usize,
        size: usize,
    },
    LeakyRelu {
        len: usize,
        slope: f64,
    },
    SoftmaxCrossEntropy {
        n: usize,
        k: usize,
        size: usize,
    },
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-2.0..2.0)).collect())
        .expect("shape")
}

type Scalar<'a> = Box<dyn Fn(&[Tensor<f64>]) -> Result<f64, NnError> + 'a>;
type Grads<'a> = Box<dyn Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>, NnError> + 'a>;

fn compare(inputs: &mut [Tensor<f64>], f: Scalar<'_>, grads: Grads<'_>) -> Result<f64, NnError> {
    let analytic = grads(inputs)?;
    let mut worst = 0.0f64;
    for t in 0..inputs.len() {
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            inputs[t].data_mut()[i] = orig + FD_STEP;
            let plus = f(inputs)?;
            inputs[t].data_mut()[i] = orig - FD_STEP;
            let minus = f(inputs)?;
            inputs[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[t].data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Max relative error between analytic and finite-difference gradients over
/// every input and parameter element of the case.
pub fn grad_check(case: GradCheckCase, seed: u64) -> Result<f64, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match case {
        GradCheckCase::Conv2d {
            n,
            cin,
            cout,
            size,
            kernel,
            stride,
        } => {
            let pad = Padding::SameHalving;
            let mut inputs = vec![
                uniform(&[n, cin, size, size], &mut rng),
                uniform(&[cout, cin, kernel, kernel], &mut rng),
                uniform(&[cout], &mut rng),
            ];
            let out_shape = conv2d(&inputs[0], &inputs[1], &inputs[2], stride, pad)?
                .shape()
                .to_vec();
            let r = uniform(&out_shape, &mut rng);
            let f: Scalar = Box::new(|x| Ok(conv2d(&x[0], &x[1], &x[2], stride, pad)?.dot(&r)));
            let g: Grads = Box::new(|x| {
                let g = conv2d_backward(&x[0], &x[1], stride, pad, &r)?;
                Ok(vec![g.input, g.weight, g.bias])
            });
            compare(&mut inputs, f, g)
        }
        GradCheckCase::UpConv2d {
            n,
            cin,
            cout,
            size,
            kernel,
            stride,
        } => {
            let pad = Padding::SameHalving;
            let mut inputs = vec![
                uniform(&[n, cin, size, size], &mut rng),
                uniform(&[cin, cout, kernel, kernel], &mut rng),
                uniform(&[cout], &mut rng),
            ];
            let out_shape = upconv2d(&inputs[0], &inputs[1], &inputs[2], stride, pad)?
                .shape()
                .to_vec();
            let r = uniform(&out_shape, &mut rng);
            let f: Scalar = Box::new(|x| Ok(upconv2d(&x[0], &x[1], &x[2], stride, pad)?.dot(&r)));
            let g: Grads = Box::new(|x| {
                let g = upconv2d_backward(&x[0], &x[1], stride, pad, &r)?;
                Ok(vec![g.input, g.weight, g.bias])
            });
            compare(&mut inputs, f, g)
        }
        GradCheckCase::BatchNorm { n, c, size } => {
            let mut inputs = vec![
                uniform(&[n, c, size, size], &mut rng),
                uniform(&[c], &mut rng),
                uniform(&[c], &mut rng),
            ];
            let r = uniform(&[n, c, size, size], &mut rng);
            let f: Scalar = Box::new(|x| Ok(batchnorm(&x[0], &x[1], &x[2])?.0.dot(&r)));
            let g: Grads = Box::new(|x| {
                let (_, cache) = batchnorm(&x[0], &x[1], &x[2])?;
                let (dx, ds, db) = batchnorm_backward(&cache, &x[1], &r)?;
                Ok(vec![dx, ds, db])
            });
            compare(&mut inputs, f, g)
        }
        GradCheckCase::LeakyRelu { len, slope } => {
            let data = (0..len)
                .map(|_| loop {
                    let v: f64 = rng.random_range(-2.0..2.0);
                    if v.abs() >= KINK_MARGIN {
                        break v;
                    }
                })
                .collect();
            let mut inputs = vec![Tensor::from_vec(&[len], data)?];
            let r = uniform(&[len], &mut rng);
            let f: Scalar = Box::new(|x| Ok(leaky_relu(&x[0], slope).dot(&r)));
            let g: Grads = Box::new(|x| Ok(vec![leaky_relu_backward(&x[0], slope, &r)]));
            compare(&mut inputs, f, g)
        }
        GradCheckCase::SoftmaxCrossEntropy { n, k, size } => {
            let mut inputs = vec![uniform(&[n, k, size, size], &mut rng)];
            let target: Vec<u8> = (0..n * size * size)
                .map(|_| rng.random_range(0..k) as u8)
                .collect();
            let f: Scalar = Box::new(|x| Ok(softmax_cross_entropy(&x[0], &target)?.loss));
            let g: Grads = Box::new(|x| Ok(vec![softmax_cross_entropy(&x[0], &target)?.grad]));
            compare(&mut inputs, f, g)
        }
    }
}
