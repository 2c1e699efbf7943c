use serde::{Deserialize, Serialize};

use super::NetworkError;

/// Dropout probability of the layers flagged for dropout.
pub const DROPOUT_P: f64 = 0.5;
/// Negative slope of the encoder activations.
pub const LEAKY_SLOPE: f32 = 0.2;

pub const CANONICAL_SIDE: usize = 256;
pub const CANONICAL_ENCODER: [usize; 7] = [32, 64, 128, 256, 256, 256, 512];
pub const REDUCED_SIDE: usize = 64;
pub const REDUCED_ENCODER: [usize; 5] = [32, 64, 128, 256, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv = 0,
    UpConv = 1,
    Bottleneck = 2,
}

impl LayerKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(LayerKind::Conv),
            1 => Some(LayerKind::UpConv),
            2 => Some(LayerKind::Bottleneck),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    None,
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub batch_norm: bool,
    pub activation: Activation,
    pub dropout: bool,
}

const FLAG_BN: u8 = 1;
const FLAG_RELU: u8 = 2;
const FLAG_LEAKY: u8 = 4;
const FLAG_DROPOUT: u8 = 8;

impl LayerDesc {
    pub fn flags(&self) -> u8 {
        let mut f = 0;
        if self.batch_norm {
            f |= FLAG_BN;
        }
        match self.activation {
            Activation::None => {}
            Activation::Relu => f |= FLAG_RELU,
            Activation::LeakyRelu => f |= FLAG_LEAKY,
        }
        if self.dropout {
            f |= FLAG_DROPOUT;
        }
        f
    }

    pub fn from_record(
        kind: LayerKind,
        kernel: usize,
        stride: usize,
        out_channels: usize,
        flags: u8,
    ) -> Result<Self, NetworkError> {
        let activation = match (flags & FLAG_RELU != 0, flags & FLAG_LEAKY != 0) {
            (false, false) => Activation::None,
            (true, false) => Activation::Relu,
            (false, true) => Activation::LeakyRelu,
            (true, true) => {
                return Err(NetworkError::InvalidSpec(format!(
                    "layer flags {flags:#x} set two activations"
                )))
            }
        };
        Ok(Self {
            kind,
            kernel,
            stride,
            out_channels,
            batch_norm: flags & FLAG_BN != 0,
            activation,
            dropout: flags & FLAG_DROPOUT != 0,
        })
    }

    pub fn dropout_p(&self) -> f64 {
        if self.dropout {
            DROPOUT_P
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// 256×256 input, seven levels.
    Canonical,
    /// 64×64 input, five levels, for desk-scale training.
    Reduced,
}

impl std::str::FromStr for Profile {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(Profile::Canonical),
            "reduced" => Ok(Profile::Reduced),
            other => Err(NetworkError::InvalidSpec(format!("unknown profile {other:?}"))),
        }
    }
}

/// Declarative description of the hourglass network.
///
/// Decoder level `i >= 1` consumes the concatenation of decoder level
/// `i - 1` and the encoder level at the same resolution; when present, the
/// bottleneck at index `i` squeezes that concatenation to half its channels
/// before the up-convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub k: usize,
    pub input_side: usize,
    pub input_channels: usize,
    pub encoder: Vec<LayerDesc>,
    pub decoder: Vec<LayerDesc>,
    pub bottlenecks: Vec<Option<LayerDesc>>,
}

/// Parameter totals split by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    /// Kernel weights, `K·K·C_in·C_out` per layer.
    pub weights: usize,
    pub biases: usize,
    /// Batch-norm scale and shift.
    pub bn_affine: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.weights + self.biases + self.bn_affine
    }

    fn add_layer(&mut self, desc: &LayerDesc, cin: usize) {
        self.weights += desc.kernel * desc.kernel * cin * desc.out_channels;
        self.biases += desc.out_channels;
        if desc.batch_norm {
            self.bn_affine += 2 * desc.out_channels;
        }
    }
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;

    fn add(self, o: ParamCount) -> ParamCount {
        ParamCount {
            weights: self.weights + o.weights,
            biases: self.biases + o.biases,
            bn_affine: self.bn_affine + o.bn_affine,
        }
    }
}

/// The canonical 256×256 network for `k` labels (background included).
pub fn build_network(k: usize) -> Result<NetworkSpec, NetworkError> {
    NetworkSpec::for_profile(Profile::Canonical, k)
}

impl NetworkSpec {
    pub fn for_profile(profile: Profile, k: usize) -> Result<Self, NetworkError> {
        match profile {
            Profile::Canonical => Self::from_plan(k, CANONICAL_SIDE, &CANONICAL_ENCODER, true),
            Profile::Reduced => Self::from_plan(k, REDUCED_SIDE, &REDUCED_ENCODER, true),
        }
    }

    /// Builds an hourglass with the given encoder channel plan. The decoder
    /// mirrors it and ends in `k` channels. The first encoder and last
    /// decoder layers use 8×8 kernels, all others 4×4, all with stride 2.
    pub fn from_plan(
        k: usize,
        input_side: usize,
        encoder_channels: &[usize],
        with_bottlenecks: bool,
    ) -> Result<Self, NetworkError> {
        if k < 2 {
            return Err(NetworkError::InvalidSpec(format!("k must be >= 2, got {k}")));
        }
        let levels = encoder_channels.len();
        if levels < 2 {
            return Err(NetworkError::InvalidSpec("need at least two levels".into()));
        }
        if input_side == 0 || input_side % (1 << levels) != 0 {
            return Err(NetworkError::InvalidSpec(format!(
                "input side {input_side} is not divisible by 2^{levels}"
            )));
        }
        let encoder = encoder_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| LayerDesc {
                kind: LayerKind::Conv,
                kernel: if i == 0 { 8 } else { 4 },
                stride: 2,
                out_channels: c,
                batch_norm: i != 0,
                activation: Activation::LeakyRelu,
                dropout: i < 3,
            })
            .collect();
        let mut decoder_channels: Vec<usize> = encoder_channels[..levels - 1].to_vec();
        decoder_channels.reverse();
        decoder_channels.push(k);
        let decoder = decoder_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let last = i == levels - 1;
                LayerDesc {
                    kind: LayerKind::UpConv,
                    kernel: if last { 8 } else { 4 },
                    stride: 2,
                    out_channels: c,
                    batch_norm: !last,
                    activation: if last { Activation::None } else { Activation::Relu },
                    dropout: i < 3,
                }
            })
            .collect::<Vec<_>>();
        let mut spec = Self {
            k,
            input_side,
            input_channels: 1,
            encoder,
            decoder,
            bottlenecks: vec![None; levels],
        };
        if with_bottlenecks {
            for i in 1..levels {
                let cat = spec.concat_channels(i);
                spec.bottlenecks[i] = Some(LayerDesc {
                    kind: LayerKind::Bottleneck,
                    kernel: 1,
                    stride: 1,
                    out_channels: cat / 2,
                    batch_norm: true,
                    activation: Activation::Relu,
                    dropout: false,
                });
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn levels(&self) -> usize {
        self.encoder.len()
    }

    /// Channels of the concatenation feeding decoder level `i >= 1`.
    pub fn concat_channels(&self, i: usize) -> usize {
        let l = self.levels();
        self.decoder[i - 1].out_channels + self.encoder[l - 1 - i].out_channels
    }

    pub fn encoder_input_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.input_channels
        } else {
            self.encoder[i - 1].out_channels
        }
    }

    /// Channels entering the up-convolution of decoder level `i`.
    pub fn decoder_input_channels(&self, i: usize) -> usize {
        if i == 0 {
            return self.encoder[self.levels() - 1].out_channels;
        }
        match &self.bottlenecks[i] {
            Some(b) => b.out_channels,
            None => self.concat_channels(i),
        }
    }

    /// Same network with the channel-halving modules removed.
    pub fn without_bottlenecks(&self) -> Self {
        let mut s = self.clone();
        s.bottlenecks = vec![None; s.levels()];
        s
    }

    /// `(H, W, C)` of the innermost encoder features.
    pub fn encoder_output_shape(&self) -> (usize, usize, usize) {
        let side = self.input_side >> self.levels();
        (side, side, self.encoder[self.levels() - 1].out_channels)
    }

    pub fn feature_len(&self) -> usize {
        let (h, w, c) = self.encoder_output_shape();
        h * w * c
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let l = self.levels();
        let bad = |m: String| Err(NetworkError::InvalidSpec(m));
        if self.decoder.len() != l || self.bottlenecks.len() != l {
            return bad(format!(
                "{l} encoder levels but {} decoder levels and {} bottleneck slots",
                self.decoder.len(),
                self.bottlenecks.len()
            ));
        }
        if self.decoder[l - 1].out_channels != self.k {
            return bad(format!(
                "last decoder layer has {} channels, k = {}",
                self.decoder[l - 1].out_channels,
                self.k
            ));
        }
        for (i, d) in self.encoder.iter().enumerate() {
            if d.kind != LayerKind::Conv || d.stride != 2 || (d.kernel - d.stride) % 2 != 0 {
                return bad(format!("encoder layer {} is not a stride-2 convolution", i + 1));
            }
        }
        for (i, d) in self.decoder.iter().enumerate() {
            if d.kind != LayerKind::UpConv || d.stride != 2 || (d.kernel - d.stride) % 2 != 0 {
                return bad(format!("decoder layer {} is not a stride-2 up-convolution", i + 1));
            }
        }
        if self.bottlenecks[0].is_some() {
            return bad("decoder level 1 has no concatenation to squeeze".into());
        }
        for (i, b) in self.bottlenecks.iter().enumerate().skip(1) {
            if let Some(b) = b {
                if b.kind != LayerKind::Bottleneck || b.kernel != 1 || b.stride != 1 {
                    return bad(format!("bottleneck {} is not a 1x1 convolution", i + 1));
                }
            }
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut push = |prefix: String, d: &LayerDesc, cin: usize| {
            let w = match d.kind {
                LayerKind::UpConv => vec![cin, d.out_channels, d.kernel, d.kernel],
                _ => vec![d.out_channels, cin, d.kernel, d.kernel],
            };
            out.push((format!("{prefix}.weight"), w));
            out.push((format!("{prefix}.bias"), vec![d.out_channels]));
            if d.batch_norm {
                out.push((format!("{prefix}.bn_scale"), vec![d.out_channels]));
                out.push((format!("{prefix}.bn_shift"), vec![d.out_channels]));
            }
        };
        for (i, d) in self.encoder.iter().enumerate() {
            push(format!("enc{}", i + 1), d, self.encoder_input_channels(i));
        }
        for (i, d) in self.decoder.iter().enumerate() {
            if let Some(b) = &self.bottlenecks[i] {
                push(format!("bneck{}", i + 1), b, self.concat_channels(i));
            }
            push(format!("dec{}", i + 1), d, self.decoder_input_channels(i));
        }
        out
    }

    pub fn encoder_param_count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for (i, d) in self.encoder.iter().enumerate() {
            c.add_layer(d, self.encoder_input_channels(i));
        }
        c
    }

    /// Decoder parameters, bottleneck modules included.
    pub fn decoder_param_count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for (i, d) in self.decoder.iter().enumerate() {
            if let Some(b) = &self.bottlenecks[i] {
                c.add_layer(b, self.concat_channels(i));
            }
            c.add_layer(d, self.decoder_input_channels(i));
        }
        c
    }

    pub fn param_count(&self) -> ParamCount {
        self.encoder_param_count() + self.decoder_param_count()
    }
}
