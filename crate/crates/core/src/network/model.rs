use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{Activation, LayerDesc, LayerKind, NetworkSpec, LEAKY_SLOPE};
use super::NetworkError;
use crate::nn::{
    batchnorm, batchnorm_backward, concat_channels, conv2d, conv2d_backward, dropout,
    dropout_backward, leaky_relu, leaky_relu_backward, split_channels, upconv2d,
    upconv2d_backward, BnCache, Padding, Tensor,
};
use crate::sketch::{LabelSet, RasterImage, SegMap};

/// Forward-pass behavior. Batch normalization uses the statistics of the
/// current batch in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks derived from `seed`.
    Train { seed: u64 },
    Infer,
}

/// Positions of one block's tensors inside [`Model::params`].
#[derive(Debug, Clone, Copy)]
struct Slots {
    weight: usize,
    bias: usize,
    bn: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    desc: LayerDesc,
    slots: Slots,
    /// Salt mixed into the step seed for this block's dropout mask.
    salt: u64,
}

/// Everything the backward pass of one block needs.
struct BlockCache {
    input: Tensor,
    bn: Option<BnCache>,
    pre_act: Tensor,
    mask: Option<Vec<f32>>,
}

/// Saved activations of a full forward pass.
pub struct ForwardCache {
    encoder: Vec<BlockCache>,
    bottlenecks: Vec<Option<BlockCache>>,
    decoder: Vec<BlockCache>,
    /// Channels of the previous decoder output inside each concatenation.
    split_at: Vec<usize>,
}

/// A network plus its trained parameters and label names.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub labels: LabelSet,
    names: Vec<String>,
    params: Vec<Tensor>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix(seed ^ splitmix(salt))
}

impl Model {
    /// He fan-in initialization of every kernel; biases and batch-norm shifts
    /// start at zero, batch-norm scales at one.
    pub fn init(spec: NetworkSpec, labels: LabelSet, seed: u64) -> Result<Self, NetworkError> {
        spec.validate()?;
        if labels.k() != spec.k {
            return Err(NetworkError::Inconsistent(format!(
                "{} label names for a network with k = {}",
                labels.k(),
                spec.k
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in spec.param_shapes() {
            let t = if name.ends_with(".weight") {
                let fan_in = match shape[..] {
                    // Each up-convolution output sees cin·K²/S² inputs.
                    [cin, _, k, _] if is_upconv(&name) => (cin * k * k / 4).max(1),
                    [_, cin, k, _] => cin * k * k,
                    _ => unreachable!("kernels are rank 4"),
                };
                let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("std > 0");
                let len = shape.iter().product();
                Tensor::from_vec(&shape, (0..len).map(|_| normal.sample(&mut rng)).collect())?
            } else if name.ends_with(".bn_scale") {
                Tensor::filled(&shape, 1.0)
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            spec,
            labels,
            names,
            params,
        })
    }

    /// Builds a model from named tensors, checking them against the spec.
    pub fn from_params(
        spec: NetworkSpec,
        labels: LabelSet,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self, NetworkError> {
        spec.validate()?;
        if labels.k() != spec.k {
            return Err(NetworkError::Inconsistent(format!(
                "{} label names for a network with k = {}",
                labels.k(),
                spec.k
            )));
        }
        let shapes = spec.param_shapes();
        if shapes.len() != named.len() {
            return Err(NetworkError::Inconsistent(format!(
                "spec needs {} parameter tensors, got {}",
                shapes.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((want_name, want_shape), (name, t)) in shapes.into_iter().zip(named) {
            if want_name != name || want_shape != t.shape() {
                return Err(NetworkError::Inconsistent(format!(
                    "parameter {name} {:?}, expected {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            spec,
            labels,
            names,
            params,
        })
    }

    pub fn category(&self) -> &str {
        &self.labels.category
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    fn blocks(&self) -> (Vec<Block>, Vec<Option<Block>>, Vec<Block>) {
        let mut next = 0usize;
        let mut take = |desc: &LayerDesc, salt: u64| {
            let slots = Slots {
                weight: next,
                bias: next + 1,
                bn: desc.batch_norm.then_some(next + 2),
            };
            next += if desc.batch_norm { 4 } else { 2 };
            Block {
                desc: *desc,
                slots,
                salt,
            }
        };
        let enc: Vec<Block> = self
            .spec
            .encoder
            .iter()
            .enumerate()
            .map(|(i, d)| take(d, i as u64))
            .collect();
        let mut bn = Vec::new();
        let mut dec = Vec::new();
        for (i, d) in self.spec.decoder.iter().enumerate() {
            bn.push(self.spec.bottlenecks[i].as_ref().map(|b| take(b, 1000 + i as u64)));
            dec.push(take(d, 100 + i as u64));
        }
        (enc, bn, dec)
    }

    fn block_forward(
        &self,
        b: &Block,
        x: Tensor,
        mode: Mode,
    ) -> Result<(Tensor, BlockCache), NetworkError> {
        let w = &self.params[b.slots.weight];
        let bias = &self.params[b.slots.bias];
        let z = match b.desc.kind {
            LayerKind::Conv => conv2d(&x, w, bias, b.desc.stride, Padding::SameHalving)?,
            LayerKind::Bottleneck => conv2d(&x, w, bias, 1, Padding::Explicit(0))?,
            LayerKind::UpConv => upconv2d(&x, w, bias, b.desc.stride, Padding::SameHalving)?,
        };
        let (pre_act, bn) = match b.slots.bn {
            Some(i) => {
                let (y, c) = batchnorm(&z, &self.params[i], &self.params[i + 1])?;
                (y, Some(c))
            }
            None => (z, None),
        };
        let act = match b.desc.activation {
            Activation::None => pre_act.clone(),
            Activation::Relu => leaky_relu(&pre_act, 0.0),
            Activation::LeakyRelu => leaky_relu(&pre_act, LEAKY_SLOPE),
        };
        let (out, mask) = match mode {
            Mode::Train { seed } => dropout(&act, b.desc.dropout_p(), true, mix_seed(seed, b.salt))?,
            Mode::Infer => (act, None),
        };
        Ok((
            out,
            BlockCache {
                input: x,
                bn,
                pre_act,
                mask,
            },
        ))
    }

    /// Returns the gradient w.r.t. the block input and accumulates parameter
    /// gradients into `grads`.
    fn block_backward(
        &self,
        b: &Block,
        cache: BlockCache,
        dy: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor, NetworkError> {
        let d = dropout_backward(dy, cache.mask.as_deref());
        let d = match b.desc.activation {
            Activation::None => d,
            Activation::Relu => leaky_relu_backward(&cache.pre_act, 0.0, &d),
            Activation::LeakyRelu => leaky_relu_backward(&cache.pre_act, LEAKY_SLOPE, &d),
        };
        let d = match (b.slots.bn, &cache.bn) {
            (Some(i), Some(c)) => {
                let (dx, dscale, dshift) = batchnorm_backward(c, &self.params[i], &d)?;
                add_into(&mut grads[i], &dscale);
                add_into(&mut grads[i + 1], &dshift);
                dx
            }
            _ => d,
        };
        let w = &self.params[b.slots.weight];
        let g = match b.desc.kind {
            LayerKind::Conv => conv2d_backward(&cache.input, w, b.desc.stride, Padding::SameHalving, &d)?,
            LayerKind::Bottleneck => conv2d_backward(&cache.input, w, 1, Padding::Explicit(0), &d)?,
            LayerKind::UpConv => {
                upconv2d_backward(&cache.input, w, b.desc.stride, Padding::SameHalving, &d)?
            }
        };
        add_into(&mut grads[b.slots.weight], &g.weight);
        add_into(&mut grads[b.slots.bias], &g.bias);
        Ok(g.input)
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NetworkError> {
        let (_, c, h, w) = x.dims4()?;
        let side = self.spec.input_side;
        if c != self.spec.input_channels || h != side || w != side {
            return Err(NetworkError::ImageSize {
                got: (w, h),
                want: side,
            });
        }
        Ok(())
    }

    /// Full forward pass over an `(N, 1, side, side)` batch; returns the
    /// `(N, k, side, side)` logits and the activations for [`Model::backward`].
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache), NetworkError> {
        self.check_input(x)?;
        let (enc, bns, dec) = self.blocks();
        let levels = enc.len();
        let mut enc_cache = Vec::with_capacity(levels);
        let mut enc_out: Vec<Tensor> = Vec::with_capacity(levels);
        let mut h = x.clone();
        for b in &enc {
            let (y, c) = self.block_forward(b, h, mode)?;
            enc_cache.push(c);
            enc_out.push(y.clone());
            h = y;
        }
        let mut dec_cache = Vec::with_capacity(levels);
        let mut bn_cache = Vec::with_capacity(levels);
        let mut split_at = Vec::with_capacity(levels);
        for i in 0..levels {
            let input = if i == 0 {
                split_at.push(0);
                bn_cache.push(None);
                h
            } else {
                split_at.push(h.shape()[1]);
                let cat = concat_channels(&h, &enc_out[levels - 1 - i])?;
                match &bns[i] {
                    Some(b) => {
                        let (y, c) = self.block_forward(b, cat, mode)?;
                        bn_cache.push(Some(c));
                        y
                    }
                    None => {
                        bn_cache.push(None);
                        cat
                    }
                }
            };
            let (y, c) = self.block_forward(&dec[i], input, mode)?;
            dec_cache.push(c);
            h = y;
        }
        Ok((
            h,
            ForwardCache {
                encoder: enc_cache,
                bottlenecks: bn_cache,
                decoder: dec_cache,
                split_at,
            },
        ))
    }

    /// Parameter gradients for upstream gradient `dlogits`, in the order of
    /// [`Model::params`].
    pub fn backward(&self, cache: ForwardCache, dlogits: &Tensor) -> Result<Vec<Tensor>, NetworkError> {
        let (enc, bns, dec) = self.blocks();
        let levels = enc.len();
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut enc_grad: Vec<Option<Tensor>> = vec![None; levels];
        let ForwardCache {
            encoder: enc_cache,
            bottlenecks: mut bn_cache,
            decoder: dec_cache,
            split_at,
        } = cache;
        let mut d = dlogits.clone();
        for (i, c) in dec_cache.into_iter().enumerate().rev() {
            let dx = self.block_backward(&dec[i], c, &d, &mut grads)?;
            if i == 0 {
                d = dx;
                break;
            }
            let dcat = match (&bns[i], bn_cache[i].take()) {
                (Some(b), Some(c)) => self.block_backward(b, c, &dx, &mut grads)?,
                _ => dx,
            };
            let (dprev, dskip) = split_channels(&dcat, split_at[i])?;
            accumulate(&mut enc_grad[levels - 1 - i], dskip);
            d = dprev;
        }
        // `d` is now the gradient w.r.t. the innermost encoder output.
        for (i, c) in enc_cache.into_iter().enumerate().rev() {
            let mut dy = d;
            if let Some(extra) = enc_grad[i].take() {
                add_into(&mut dy, &extra);
            }
            d = self.block_backward(&enc[i], c, &dy, &mut grads)?;
        }
        Ok(grads)
    }

    /// Encoder-only forward pass in inference mode.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, NetworkError> {
        self.check_input(x)?;
        let (enc, _, _) = self.blocks();
        let mut h = x.clone();
        for b in &enc {
            h = self.block_forward(b, h, Mode::Infer)?.0;
        }
        Ok(h)
    }

    /// Segments a batch of rasters jointly: dropout off, batch-norm
    /// statistics taken over this batch. Outputs follow input order.
    pub fn infer_batch(&self, images: &[RasterImage]) -> Result<Vec<SegMap>, NetworkError> {
        if images.is_empty() {
            return Err(NetworkError::EmptyBatch);
        }
        let x = images_to_tensor(images, self.spec.input_side)?;
        let (logits, _) = self.forward(&x, Mode::Infer)?;
        let side = self.spec.input_side;
        let per = self.k() * side * side;
        let data = logits.into_data();
        Ok(data
            .chunks_exact(per)
            .map(|c| SegMap::new(self.k(), side, side, c.to_vec()))
            .collect())
    }

    /// Innermost encoder features of one image (batch of one), flattened in
    /// `(H, W, C)` order.
    pub fn extract_features(&self, image: &RasterImage) -> Result<Vec<f32>, NetworkError> {
        let x = images_to_tensor(std::slice::from_ref(image), self.spec.input_side)?;
        let f = self.encode(&x)?;
        let (_, c, h, w) = f.dims4()?;
        let d = f.data();
        let mut out = Vec::with_capacity(c * h * w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out.push(d[(ch * h + y) * w + x]);
                }
            }
        }
        Ok(out)
    }
}

fn is_upconv(name: &str) -> bool {
    name.starts_with("dec")
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => add_into(acc, &g),
        None => *slot = Some(g),
    }
}

/// Stacks binary rasters into an `(N, 1, side, side)` tensor of 0/1 values.
pub fn images_to_tensor(images: &[RasterImage], side: usize) -> Result<Tensor, NetworkError> {
    let mut data = Vec::with_capacity(images.len() * side * side);
    for img in images {
        if img.width != side || img.height != side {
            return Err(NetworkError::ImageSize {
                got: (img.width, img.height),
                want: side,
            });
        }
        data.extend(img.values.iter().map(|&v| if v != 0 { 1.0f32 } else { 0.0 }));
    }
    Ok(Tensor::from_vec(&[images.len(), 1, side, side], data)?)
}

/// Same as [`images_to_tensor`] for raw 0/1 pixel buffers.
pub fn pixels_to_tensor(images: &[&[u8]], side: usize) -> Result<Tensor, NetworkError> {
    let mut data = Vec::with_capacity(images.len() * side * side);
    for img in images {
        if img.len() != side * side {
            return Err(NetworkError::ImageSize {
                got: (img.len(), 1),
                want: side,
            });
        }
        data.extend(img.iter().map(|&v| if v != 0 { 1.0f32 } else { 0.0 }));
    }
    Ok(Tensor::from_vec(&[images.len(), 1, side, side], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::Profile;
    use crate::nn::softmax_cross_entropy;
    use rand::Rng;

    fn labels(k: usize) -> LabelSet {
        let mut names = vec!["background".to_string()];
        names.extend((1..k).map(|i| format!("part{i}")));
        LabelSet::new("toy", names).unwrap()
    }

    fn tiny_spec(k: usize) -> NetworkSpec {
        NetworkSpec::from_plan(k, 16, &[3, 4, 5], true).unwrap()
    }

    fn random_images(n: usize, side: usize, seed: u64) -> Vec<RasterImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut img = RasterImage::empty(side, side);
                for v in img.values.iter_mut() {
                    *v = u8::from(rng.random::<f32>() < 0.2);
                }
                img
            })
            .collect()
    }

    #[test]
    fn canonical_encoder_output_is_2x2x512() {
        let m = Model::init(build(11), labels(11), 0).unwrap();
        let img = RasterImage::empty(256, 256);
        let x = images_to_tensor(&[img.clone()], 256).unwrap();
        assert_eq!(m.encode(&x).unwrap().shape(), [1, 512, 2, 2]);
        assert_eq!(m.extract_features(&img).unwrap().len(), 2048);
    }

    fn build(k: usize) -> NetworkSpec {
        crate::network::build_network(k).unwrap()
    }

    #[test]
    fn reduced_forward_shape_and_finite() {
        let spec = NetworkSpec::for_profile(Profile::Reduced, 4).unwrap();
        let m = Model::init(spec, labels(4), 1).unwrap();
        let maps = m.infer_batch(&[RasterImage::empty(64, 64)]).unwrap();
        assert_eq!((maps[0].k, maps[0].width, maps[0].height), (4, 64, 64));
        assert!(maps[0].data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_image_size() {
        let m = Model::init(tiny_spec(3), labels(3), 1).unwrap();
        assert!(matches!(
            m.infer_batch(&[RasterImage::empty(8, 8)]),
            Err(NetworkError::ImageSize { .. })
        ));
        assert!(matches!(m.infer_batch(&[]), Err(NetworkError::EmptyBatch)));
    }

    #[test]
    fn label_count_must_match() {
        assert!(Model::init(tiny_spec(3), labels(4), 0).is_err());
    }

    #[test]
    fn duplicate_batch_matches_single() {
        let m = Model::init(tiny_spec(3), labels(3), 4).unwrap();
        let img = random_images(1, 16, 9).pop().unwrap();
        let one = m.infer_batch(std::slice::from_ref(&img)).unwrap();
        let many = m.infer_batch(&vec![img; 4]).unwrap();
        for s in &many {
            let diff = s
                .data
                .iter()
                .zip(&one[0].data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(diff <= 1e-5, "{diff}");
        }
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        // Probe a handful of parameters of every tensor on a tiny network;
        // f32 compute, so the tolerance is loose but still catches wiring bugs.
        let k = 3;
        let mut m = Model::init(tiny_spec(k), labels(k), 5).unwrap();
        let x = images_to_tensor(&random_images(2, 16, 6), 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target: Vec<u8> = (0..2 * 256).map(|_| rng.random_range(0..k as u8)).collect();
        let loss = |m: &Model| {
            let (y, _) = m.forward(&x, Mode::Train { seed: 11 }).unwrap();
            softmax_cross_entropy(&y, &target).unwrap().loss
        };
        let (y, cache) = m.forward(&x, Mode::Train { seed: 11 }).unwrap();
        let lv = softmax_cross_entropy(&y, &target).unwrap();
        let grads = m.backward(cache, &lv.grad).unwrap();
        let h = 1e-3f32;
        let mut checked = 0;
        for t in 0..m.params.len() {
            for _ in 0..3 {
                let i = rng.random_range(0..m.params[t].len());
                let orig = m.params[t].data()[i];
                m.params[t].data_mut()[i] = orig + h;
                let plus = loss(&m);
                m.params[t].data_mut()[i] = orig - h;
                let minus = loss(&m);
                m.params[t].data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * h as f64);
                let analytic = grads[t].data()[i] as f64;
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1.0);
                assert!(err < 2e-2, "{} [{i}]: {analytic} vs {numeric}", m.names[t]);
                checked += 1;
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn dropout_masks_depend_on_seed() {
        let m = Model::init(tiny_spec(3), labels(3), 2).unwrap();
        let x = images_to_tensor(&random_images(1, 16, 3), 16).unwrap();
        let a = m.forward(&x, Mode::Train { seed: 1 }).unwrap().0;
        let b = m.forward(&x, Mode::Train { seed: 1 }).unwrap().0;
        let c = m.forward(&x, Mode::Train { seed: 2 }).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_statistics() {
        let m = Model::init(build(5), labels(5), 3).unwrap();
        for (name, t) in m.named_params() {
            if name.ends_with(".bn_scale") {
                assert!(t.data().iter().all(|&v| v == 1.0));
            } else if name.ends_with(".bias") || name.ends_with(".bn_shift") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
        let w = &m.params[0];
        let var = w.data().iter().map(|v| (v * v) as f64).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 64.0).abs() < 0.2 * 2.0 / 64.0, "{var}");
    }
}
