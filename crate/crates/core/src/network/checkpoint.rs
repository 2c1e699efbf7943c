//! Binary checkpoint: magic `SKSG`, little-endian throughout.
//!
//! ```text
//! u32 version
//! str category, u32 k, u32 n, n × str label
//! u32 input_side, u32 input_channels, u32 n_encoder, u32 n_decoder
//! layer records: encoder layers, then per decoder level an optional
//!   bottleneck record followed by the up-convolution record
//!   (u8 kind, u32 kernel, u32 stride, u32 out_channels, u8 flags)
//! u32 n_params, per parameter: str name, u8 dtype (0 = f32), u32 rank,
//!   rank × u32 dims, raw data
//! ```
//! Strings are a u32 byte length followed by UTF-8.

use std::io::{Read, Write};
use std::path::Path;

use super::model::Model;
use super::spec::{LayerDesc, LayerKind, NetworkSpec};
use super::NetworkError;
use crate::nn::Tensor;
use crate::sketch::LabelSet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SKSG";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
/// Guards allocations when reading a corrupt file.
const MAX_LEN: usize = 1 << 28;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn layer(&mut self, d: &LayerDesc) {
        self.u8(d.kind as u8);
        self.u32(d.kernel);
        self.u32(d.stride);
        self.u32(d.out_channels);
        self.u8(d.flags());
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(NetworkError::Truncated { offset: self.pos })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub(crate) fn u8(&mut self) -> Result<u8, NetworkError> {
        Ok(self.bytes(1)?[0])
    }
    pub(crate) fn u32(&mut self) -> Result<usize, NetworkError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
    pub(crate) fn len(&mut self) -> Result<usize, NetworkError> {
        let at = self.pos;
        let n = self.u32()?;
        if n > MAX_LEN {
            return Err(NetworkError::Inconsistent(format!("length {n} at offset {at}")));
        }
        Ok(n)
    }
    pub(crate) fn str(&mut self) -> Result<String, NetworkError> {
        let n = self.len()?;
        let at = self.pos;
        String::from_utf8(self.bytes(n)?.to_vec())
            .map_err(|_| NetworkError::Inconsistent(format!("invalid UTF-8 at offset {at}")))
    }
    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, NetworkError> {
        let bytes = self.bytes(n.checked_mul(4).ok_or(NetworkError::Truncated { offset: self.pos })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NetworkError> {
        let bytes = self.bytes(n.checked_mul(8).ok_or(NetworkError::Truncated { offset: self.pos })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
    fn layer(&mut self) -> Result<LayerDesc, NetworkError> {
        let at = self.pos;
        let kind = self.u8()?;
        let kind = LayerKind::from_u8(kind).ok_or_else(|| {
            NetworkError::Inconsistent(format!("unknown layer kind {kind} at offset {at}"))
        })?;
        let kernel = self.u32()?;
        let stride = self.u32()?;
        let out = self.u32()?;
        let flags = self.u8()?;
        LayerDesc::from_record(kind, kernel, stride, out, flags)
    }
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(CHECKPOINT_MAGIC.to_vec());
    w.u32(CHECKPOINT_VERSION as usize);
    w.str(&model.labels.category);
    w.u32(model.spec.k);
    w.u32(model.labels.names.len());
    for n in &model.labels.names {
        w.str(n);
    }
    let spec = &model.spec;
    w.u32(spec.input_side);
    w.u32(spec.input_channels);
    w.u32(spec.encoder.len());
    w.u32(spec.decoder.len());
    for d in &spec.encoder {
        w.layer(d);
    }
    for (i, d) in spec.decoder.iter().enumerate() {
        match &spec.bottlenecks[i] {
            Some(b) => {
                w.u8(1);
                w.layer(b);
            }
            None => w.u8(0),
        }
        w.layer(d);
    }
    let named: Vec<_> = model.named_params().collect();
    w.u32(named.len());
    for (name, t) in named {
        w.str(name);
        w.u8(DTYPE_F32);
        w.u32(t.shape().len());
        for &d in t.shape() {
            w.u32(d);
        }
        for v in t.data() {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.0
}

pub fn model_from_bytes(buf: &[u8]) -> Result<Model, NetworkError> {
    if buf.len() < 4 || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(NetworkError::BadMagic);
    }
    let mut r = Reader::new(&buf[4..]);
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(NetworkError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let category = r.str()?;
    let k = r.u32()?;
    let n_names = r.len()?;
    let names = (0..n_names).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    if names.len() != k {
        return Err(NetworkError::Inconsistent(format!(
            "k = {k} but {} label names",
            names.len()
        )));
    }
    let labels = LabelSet::new(category, names)
        .map_err(|e| NetworkError::Inconsistent(e.to_string()))?;
    let input_side = r.u32()?;
    let input_channels = r.u32()?;
    let n_enc = r.len()?;
    let n_dec = r.len()?;
    let encoder = (0..n_enc).map(|_| r.layer()).collect::<Result<Vec<_>, _>>()?;
    let mut decoder = Vec::with_capacity(n_dec);
    let mut bottlenecks = Vec::with_capacity(n_dec);
    for _ in 0..n_dec {
        bottlenecks.push(match r.u8()? {
            0 => None,
            1 => Some(r.layer()?),
            t => return Err(NetworkError::Inconsistent(format!("bottleneck tag {t}"))),
        });
        decoder.push(r.layer()?);
    }
    let spec = NetworkSpec {
        k,
        input_side,
        input_channels,
        encoder,
        decoder,
        bottlenecks,
    };
    spec.validate()
        .map_err(|e| NetworkError::Inconsistent(e.to_string()))?;
    let n_params = r.len()?;
    let mut named = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(NetworkError::Inconsistent(format!("{name}: dtype {dtype}")));
        }
        let rank = r.len()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l <= MAX_LEN)
            .ok_or_else(|| NetworkError::Inconsistent(format!("{name}: dims {dims:?}")))?;
        let data = r.f32s(len)?;
        named.push((name, Tensor::from_vec(&dims, data)?));
    }
    if !r.at_end() {
        return Err(NetworkError::Inconsistent("trailing bytes".into()));
    }
    Model::from_params(spec, labels, named)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, NetworkError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    model_from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkSpec, Profile};

    fn model() -> Model {
        let spec = NetworkSpec::for_profile(Profile::Reduced, 3).unwrap();
        let labels = LabelSet::new("lamp", vec!["bg".into(), "a".into(), "b".into()]).unwrap();
        Model::init(spec, labels, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.sksg");
        save_checkpoint(&m, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.spec, m.spec);
        assert_eq!(back.labels, m.labels);
        for (a, b) in back.params().iter().zip(m.params()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&m));
    }

    #[test]
    fn without_bottlenecks_round_trips() {
        let m = model();
        let spec = m.spec.without_bottlenecks();
        let m = Model::init(spec, m.labels.clone(), 1).unwrap();
        assert_eq!(model_from_bytes(&checkpoint_bytes(&m)).unwrap(), m);
    }

    #[test]
    fn bad_magic() {
        let mut b = checkpoint_bytes(&model());
        b[0] = b'X';
        assert!(matches!(model_from_bytes(&b), Err(NetworkError::BadMagic)));
    }

    #[test]
    fn version_mismatch() {
        let mut b = checkpoint_bytes(&model());
        b[4] = 9;
        assert!(matches!(
            model_from_bytes(&b),
            Err(NetworkError::Version { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn truncated() {
        let b = checkpoint_bytes(&model());
        for cut in [5, 20, b.len() / 2, b.len() - 1] {
            assert!(matches!(
                model_from_bytes(&b[..cut]),
                Err(NetworkError::Truncated { .. })
            ));
        }
    }

    #[test]
    fn k_vs_label_names() {
        let b = checkpoint_bytes(&model());
        // The u32 k follows the magic, version and the 4+4 byte category.
        let at = 4 + 4 + 4 + 4;
        assert_eq!(u32::from_le_bytes(b[at..at + 4].try_into().unwrap()), 3);
        let mut bad = b.clone();
        bad[at] = 4;
        assert!(matches!(model_from_bytes(&bad), Err(NetworkError::Inconsistent(_))));
    }
}
