//! Checkpoint files.
//!
//! Layout: a UTF-8 manifest of `key = value` lines, a line holding only
//! `---`, then the payload. The manifest starts with the magic line
//! `snca-checkpoint` and `version = N`, and ends with `sha256 = <hex>`, the
//! digest of every manifest byte before that line followed by the payload.
//! The embedded run configuration appears as `config.<key>` lines. Each
//! `array = <name> <b> <h> <w> <c>` line declares one payload array; arrays
//! are stored in declaration order as little-endian IEEE-754 `f32`.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use snca_core::model::ModelParams;
use snca_core::optim::{Adam, AdamConfig};
use snca_core::rng::RngState;
use snca_core::train::Trainer;
use snca_core::{Shape, Tensor};

use crate::config::RunConfig;

pub const MAGIC: &str = "snca-checkpoint";
pub const VERSION: u32 = 1;
const SEPARATOR: &[u8] = b"\n---\n";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint version {found} (this build reads version {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint does not match its configuration: {0}")]
    Mismatch(String),
}

fn format_err(m: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(m.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Grid `(height, width)` the model was trained on.
    pub grid: (usize, usize),
    pub params: ModelParams<f32>,
    pub adam: Adam<f32>,
    pub step: u64,
    pub rng: RngState,
}

const ARRAY_NAMES: [&str; 3] = ["w0", "b0", "w1"];

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<f32>, config: &RunConfig) -> Self {
        Checkpoint {
            config: config.clone(),
            grid: (trainer.target.height(), trainer.target.width()),
            params: trainer.params.clone(),
            adam: trainer.adam.clone(),
            step: trainer.step,
            rng: trainer.rng_state(),
        }
    }

    fn arrays(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        for (name, t) in ARRAY_NAMES.iter().zip(self.params.arrays()) {
            out.push((name.to_string(), t));
        }
        for (name, t) in ARRAY_NAMES.iter().zip(&self.adam.m) {
            out.push((format!("adam_m.{name}"), t));
        }
        for (name, t) in ARRAY_NAMES.iter().zip(&self.adam.v) {
            out.push((format!("adam_v.{name}"), t));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut m = String::new();
        let cfg_text = self.config.to_text();
        let _ = writeln!(m, "{MAGIC}");
        let _ = writeln!(m, "version = {VERSION}");
        let _ = writeln!(m, "grid = {} {}", self.grid.0, self.grid.1);
        let _ = writeln!(m, "config_digest = {}", hex(&Sha256::digest(cfg_text.as_bytes())));
        let _ = writeln!(m, "step = {}", self.step);
        let _ = writeln!(m, "adam_t = {}", self.adam.t);
        let _ = writeln!(m, "rng_seed = {}", hex(&self.rng.seed));
        let _ = writeln!(m, "rng_stream = {}", self.rng.stream);
        let _ = writeln!(m, "rng_word_pos = {}", self.rng.word_pos);
        for line in cfg_text.lines() {
            let _ = writeln!(m, "config.{line}");
        }
        let mut payload = Vec::new();
        for (name, t) in self.arrays() {
            let s = t.shape();
            let _ = writeln!(m, "array = {name} {} {} {} {}", s.batch, s.height, s.width, s.channels);
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let _ = writeln!(m, "payload_bytes = {}", payload.len());
        let mut h = Sha256::new();
        h.update(m.as_bytes());
        h.update(&payload);
        let _ = write!(m, "sha256 = {}", hex(&h.finalize()));
        let mut out = m.into_bytes();
        out.extend_from_slice(SEPARATOR);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let sep = bytes
            .windows(SEPARATOR.len())
            .position(|w| w == SEPARATOR)
            .ok_or_else(|| CheckpointError::Integrity("manifest terminator not found (truncated file?)".into()))?;
        let manifest = std::str::from_utf8(&bytes[..sep]).map_err(|_| format_err("manifest is not UTF-8"))?;
        let payload = &bytes[sep + SEPARATOR.len()..];

        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(format_err("missing magic line"));
        }
        let version = lines
            .next()
            .and_then(|l| l.strip_prefix("version = "))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| format_err("missing version line"))?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }

        let sha_at = manifest
            .rfind("sha256 = ")
            .ok_or_else(|| CheckpointError::Integrity("missing checksum".into()))?;
        let mut h = Sha256::new();
        h.update(&manifest.as_bytes()[..sha_at]);
        h.update(payload);
        if hex(&h.finalize()) != manifest[sha_at + "sha256 = ".len()..].trim() {
            return Err(CheckpointError::Integrity("sha256 mismatch".into()));
        }

        let mut fields = std::collections::BTreeMap::new();
        let mut config_text = String::new();
        let mut arrays = Vec::new();
        for line in manifest[..sha_at].lines().skip(2) {
            if let Some(c) = line.strip_prefix("config.") {
                config_text.push_str(c);
                config_text.push('\n');
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| format_err(format!("bad manifest line `{line}`")))?;
            if k == "array" {
                let parts: Vec<&str> = v.split_whitespace().collect();
                let dims: Option<Vec<usize>> = parts.get(1..5).and_then(|d| d.iter().map(|x| x.parse().ok()).collect());
                match (parts.len(), dims) {
                    (5, Some(d)) => arrays.push((parts[0].to_string(), Shape::new(d[0], d[1], d[2], d[3]))),
                    _ => return Err(format_err(format!("bad array line `{line}`"))),
                }
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let field = |k: &str| fields.get(k).ok_or_else(|| format_err(format!("missing `{k}`")));
        let num = |k: &str| -> Result<u128, CheckpointError> {
            field(k)?.parse().map_err(|_| format_err(format!("bad `{k}`")))
        };

        let config = RunConfig::parse(&config_text, "checkpoint config").map_err(|e| format_err(e.to_string()))?;
        if hex(&Sha256::digest(config.to_text().as_bytes())) != *field("config_digest")? {
            return Err(CheckpointError::Integrity("config digest mismatch".into()));
        }
        let grid: Vec<usize> = field("grid")?.split_whitespace().filter_map(|v| v.parse().ok()).collect();
        if grid.len() != 2 {
            return Err(format_err("bad `grid`"));
        }
        if num("payload_bytes")? != payload.len() as u128 {
            return Err(CheckpointError::Integrity("payload length mismatch".into()));
        }

        let expected: Vec<String> = ["", "adam_m.", "adam_v."]
            .iter()
            .flat_map(|p| ARRAY_NAMES.iter().map(move |n| format!("{p}{n}")))
            .collect();
        let names: Vec<String> = arrays.iter().map(|a| a.0.clone()).collect();
        if names != expected {
            return Err(format_err(format!("unexpected arrays {names:?}")));
        }
        let total: usize = arrays.iter().map(|a| a.1.len()).sum();
        if total * 4 != payload.len() {
            return Err(CheckpointError::Integrity("array shapes disagree with payload size".into()));
        }
        let mut tensors = Vec::with_capacity(arrays.len());
        let mut off = 0;
        for (_, shape) in &arrays {
            let n = shape.len();
            let data = payload[off..off + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            off += 4 * n;
            tensors.push(Tensor::from_vec(*shape, data).map_err(|e| format_err(e.to_string()))?);
        }
        let v = tensors.split_off(6);
        let m = tensors.split_off(3);
        let params = ModelParams::from_arrays(tensors).map_err(|e| format_err(e.to_string()))?;
        params
            .check(&config.train.model)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;

        let seed: [u8; 32] = unhex(field("rng_seed")?)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| format_err("bad `rng_seed`"))?;
        Ok(Checkpoint {
            grid: (grid[0], grid[1]),
            params,
            adam: Adam {
                cfg: AdamConfig::default(),
                m,
                v,
                t: num("adam_t")? as u64,
            },
            step: num("step")? as u64,
            rng: RngState {
                seed,
                stream: num("rng_stream")? as u64,
                word_pos: num("rng_word_pos")?,
            },
            config,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use snca_core::rng::seeded;

    fn sample() -> Checkpoint {
        let mut config = RunConfig::parse("target = builtin:toy\nchannels = 6\nhidden = 5\n", "t").unwrap();
        config.seed_center = Some((10.0, 11.0));
        config.train.seed.center = (10.0, 11.0);
        let mut rng = seeded(3);
        let mut params = ModelParams::<f64>::init(&config.train.model, &mut rng).cast::<f32>();
        params.w1.data_mut()[2] = -0.25;
        let mut adam = Adam::new(AdamConfig::default(), &params.arrays());
        adam.m[1].data_mut()[0] = 1e-7;
        adam.t = 17;
        use rand::Rng;
        let _: u64 = rng.gen();
        Checkpoint {
            config,
            grid: (20, 22),
            params,
            adam,
            step: 17,
            rng: RngState::capture(&rng),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::Integrity(_))));
    }

    #[test]
    fn old_version_is_rejected() {
        let text = String::from_utf8_lossy(&sample().to_bytes()).replacen("version = 1", "version = 0", 1);
        assert!(matches!(
            Checkpoint::from_bytes(text.as_bytes()),
            Err(CheckpointError::UnsupportedVersion { found: 0 })
        ));
    }
}
