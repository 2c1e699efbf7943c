use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sketchseg_core::refine::EnergyParams;

use crate::ServiceError;

/// Environment variable that overrides the configuration path.
pub const CONFIG_ENV: &str = "SKSEG_CONFIG";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryConfig {
    pub checkpoint: PathBuf,
    pub featuredb: Option<PathBuf>,
}

/// Flat `key = value` configuration:
///
/// ```text
/// listen = 127.0.0.1:8080
/// cd = 1
/// cs = 88
/// category.lamp.checkpoint = lamp.sksg
/// category.lamp.featuredb = lamp.skfd
/// ```
/// Relative paths are taken from the configuration file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub listen: String,
    pub params: EnergyParams,
    pub categories: BTreeMap<String, CategoryConfig>,
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ServiceError> {
        let mut listen = DEFAULT_LISTEN.to_string();
        let mut params = EnergyParams::default();
        let mut checkpoints = BTreeMap::new();
        let mut dbs = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| ServiceError::Config(format!("line {}: {m}", ln + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let number = || value.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0);
            match key {
                "listen" => listen = value.to_string(),
                "cd" => params.c_d = number().ok_or_else(|| bad("cd must be a non-negative number"))?,
                "cs" => params.c_s = number().ok_or_else(|| bad("cs must be a non-negative number"))?,
                _ => {
                    let rest = key.strip_prefix("category.").ok_or_else(|| bad(&format!("unknown key {key:?}")))?;
                    let (name, field) = rest.rsplit_once('.').ok_or_else(|| bad(&format!("unknown key {key:?}")))?;
                    let path = base.join(value);
                    match field {
                        "checkpoint" => checkpoints.insert(name.to_string(), path),
                        "featuredb" => dbs.insert(name.to_string(), path),
                        _ => return Err(bad(&format!("unknown key {key:?}"))),
                    };
                }
            }
        }
        if let Some(name) = dbs.keys().find(|n| !checkpoints.contains_key(*n)) {
            return Err(ServiceError::Config(format!("category {name:?} has a featuredb but no checkpoint")));
        }
        let categories = checkpoints
            .into_iter()
            .map(|(name, checkpoint)| {
                let featuredb = dbs.remove(&name);
                (name, CategoryConfig { checkpoint, featuredb })
            })
            .collect();
        Ok(Self {
            listen,
            params,
            categories,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// The configuration path: `SKSEG_CONFIG` when set, else `fallback`.
pub fn config_path(fallback: impl Into<PathBuf>) -> PathBuf {
    match std::env::var_os(CONFIG_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => fallback.into(),
    }
}
