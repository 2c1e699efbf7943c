//! Dataset files: binary PGM pairs plus a line-based manifest.
//!
//! ```text
//! category lamp
//! k 4
//! labels background,base,pole,shade
//! sample 0000_img.pgm 0000_lbl.pgm [0000.json]
//! ```
//! Blank lines and `#` comments are ignored; sample paths are relative to
//! the manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{EdgeMapSample, Provenance, RenderError};
use crate::sketch::{parse_sketch, serialize_sketch, LabelSet, Sketch};

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Writes an 8-bit binary (P5) greymap.
pub fn write_pgm(path: impl AsRef<Path>, w: usize, h: usize, data: &[u8]) -> Result<(), RenderError> {
    if data.len() != w * h {
        return Err(RenderError::Pgm(format!("{} bytes for {w}x{h}", data.len())));
    }
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend_from_slice(data);
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads an 8-bit binary greymap as `(width, height, pixels)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>), RenderError> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RenderError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P5" {
        return Err(RenderError::Pgm(format!("unsupported magic {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| RenderError::Pgm(format!("bad number {s:?}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(RenderError::Pgm(format!("maxval {max} is not 8-bit")));
    }
    let n = w.checked_mul(h).ok_or_else(|| RenderError::Pgm("size overflow".into()))?;
    if bytes.len() < pos + n {
        return Err(RenderError::Pgm(format!("expected {n} pixels, found {}", bytes.len().saturating_sub(pos))));
    }
    Ok((w, h, bytes[pos..pos + n].to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub sketch: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub labels: LabelSet,
    pub entries: Vec<ManifestEntry>,
}

/// A loaded dataset: samples in manifest order with their optional sketches.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: LabelSet,
    pub samples: Vec<EdgeMapSample>,
    pub sketches: Vec<Option<Sketch>>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, RenderError> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, m: String| RenderError::Manifest { line, message: m };
    let (mut category, mut k, mut names) = (None, None, None);
    let mut entries = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let (key, rest) = raw.split_once(char::is_whitespace).unwrap_or((raw, ""));
        let rest = rest.trim();
        match key {
            "category" => category = Some(rest.to_string()),
            "k" => k = Some(rest.parse::<usize>().map_err(|_| bad(line, format!("bad k {rest:?}")))?),
            "labels" => names = Some(rest.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
            "sample" => {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if !(2..=3).contains(&f.len()) {
                    return Err(bad(line, "sample needs an image, a label image and an optional sketch".into()));
                }
                entries.push(ManifestEntry {
                    image: dir.join(f[0]),
                    labels: dir.join(f[1]),
                    sketch: f.get(2).map(|s| dir.join(s)),
                });
            }
            other => return Err(bad(line, format!("unknown key {other:?}"))),
        }
    }
    let category = category.ok_or_else(|| bad(0, "missing category".into()))?;
    let names = names.ok_or_else(|| bad(0, "missing labels".into()))?;
    if let Some(k) = k {
        if k != names.len() {
            return Err(bad(0, format!("k = {k} but {} label names", names.len())));
        }
    }
    let labels = LabelSet::new(category, names)?;
    Ok(Manifest { labels, entries })
}

/// Writes `NNNN_img.pgm` (0/255), `NNNN_lbl.pgm` (label index) and, when
/// given, `NNNN.json` per sample, then the manifest. Returns its path.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    labels: &LabelSet,
    samples: &[EdgeMapSample],
    sketches: Option<&[Sketch]>,
) -> Result<PathBuf, RenderError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut m = String::new();
    let _ = writeln!(m, "category {}", labels.category);
    let _ = writeln!(m, "k {}", labels.k());
    let _ = writeln!(m, "labels {}", labels.names.join(","));
    for (i, s) in samples.iter().enumerate() {
        s.validate()?;
        let img: Vec<u8> = s.image.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        let (img_name, lbl_name) = (format!("{i:04}_img.pgm"), format!("{i:04}_lbl.pgm"));
        write_pgm(dir.join(&img_name), s.side, s.side, &img)?;
        write_pgm(dir.join(&lbl_name), s.side, s.side, &s.labels)?;
        let _ = write!(m, "sample {img_name} {lbl_name}");
        if let Some(sk) = sketches.and_then(|all| all.get(i)) {
            let name = format!("{i:04}.json");
            std::fs::write(dir.join(&name), serialize_sketch(sk))?;
            let _ = write!(m, " {name}");
        }
        m.push('\n');
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, m)?;
    Ok(path)
}

/// Reads a manifest and every file it lists.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, RenderError> {
    let manifest = read_manifest(path)?;
    let k = manifest.labels.k();
    let mut samples = Vec::with_capacity(manifest.entries.len());
    let mut sketches = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let (w, h, img) = read_pgm(&e.image)?;
        let (lw, lh, lbl) = read_pgm(&e.labels)?;
        if w != h || (lw, lh) != (w, h) {
            return Err(RenderError::InvalidSample(format!(
                "{}: images must be square and equal in size",
                e.image.display()
            )));
        }
        if let Some(&l) = lbl.iter().find(|&&l| l as usize >= k) {
            return Err(RenderError::InvalidSample(format!("{}: label {l} >= k = {k}", e.labels.display())));
        }
        let sample = EdgeMapSample {
            side: w,
            image: img.iter().map(|&v| u8::from(v != 0)).collect(),
            labels: lbl,
            provenance: Provenance {
                source: e.image.display().to_string(),
                camera: None,
                depth_tested: false,
            },
        };
        sample.validate()?;
        samples.push(sample);
        sketches.push(match &e.sketch {
            Some(p) => Some(parse_sketch(&std::fs::read(p)?)?),
            None => None,
        });
    }
    Ok(Dataset {
        labels: manifest.labels,
        samples,
        sketches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{synth_sketch_dataset, CategorySpec};

    #[test]
    fn pgm_round_trip_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let data: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_pgm(&p, 4, 3, &data).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), (4, 3, data.clone()));
        let mut commented = b"P5\n# made by hand\n4 3\n255\n".to_vec();
        commented.extend_from_slice(&data);
        std::fs::write(&p, commented).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), (4, 3, data));
        std::fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        assert!(read_pgm(&p).is_err());
        std::fs::write(&p, b"P5\n4 4\n255\nab").unwrap();
        assert!(read_pgm(&p).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let spec = CategorySpec::lamp();
        let synth = synth_sketch_dataset(&spec, 5, 3, 32).unwrap();
        let samples: Vec<_> = synth.iter().map(|s| s.sample.clone()).collect();
        let sketches: Vec<_> = synth.iter().map(|s| s.sketch.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &spec.labels(), &samples, Some(&sketches)).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.labels, spec.labels());
        assert_eq!(ds.samples.len(), 5);
        for (a, b) in ds.samples.iter().zip(&samples) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.labels, b.labels);
        }
        assert_eq!(ds.sketches, sketches.into_iter().map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_NAME);
        std::fs::write(&p, "category c\nk 3\nlabels bg,a\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(RenderError::Manifest { .. })));
        std::fs::write(&p, "category c\nlabels bg,a\nsample x.pgm\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(RenderError::Manifest { line: 3, .. })));
        std::fs::write(&p, "category c\nlabels bg,a\nfoo 1\n").unwrap();
        assert!(read_manifest(&p).is_err());
        std::fs::write(&p, "# ok\ncategory c\nlabels bg,a\n\nsample x.pgm y.pgm\n").unwrap();
        let m = read_manifest(&p).unwrap();
        assert_eq!(m.entries[0].image, dir.path().join("x.pgm"));
        assert_eq!(m.entries[0].sketch, None);
    }
}
