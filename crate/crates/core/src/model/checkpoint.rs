//! Binary checkpoint format.
//!
//! ```text
//! offset      size        field
//! 0           8           magic  b"VLNCKPT\0"
//! 8           4           format version, u32 little-endian (currently 1)
//! 12          4           header length H, u32 little-endian
//! 16          H           header: UTF-8 lines "key=value\n"
//! 16+H        8           d, u64 little-endian
//! 24+H        8·d         θ as little-endian IEEE-754 f64
//! ```
//!
//! Required header keys: `layers d_model heads d_ff vocab context embed_bound
//! weight_decay layer_norm_eps seed step`. Any other keys are preserved in
//! [`Checkpoint::extra`]. Floats are written with Rust's shortest round-trip
//! formatting, so the header echoes the configuration exactly.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::ModelConfig;
use super::params::ParamLayout;
use crate::engine::LAYER_NORM_EPS;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VLNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub extra: BTreeMap<String, String>,
    pub theta: Vec<f64>,
}

const REQUIRED: [&str; 11] = [
    "layers",
    "d_model",
    "heads",
    "d_ff",
    "vocab",
    "context",
    "embed_bound",
    "weight_decay",
    "layer_norm_eps",
    "seed",
    "step",
];

impl Checkpoint {
    pub fn new(config: ModelConfig, seed: u64, step: u64, theta: Vec<f64>) -> Self {
        Checkpoint {
            config,
            seed,
            step,
            extra: BTreeMap::new(),
            theta,
        }
    }

    fn header(&self) -> String {
        let c = &self.config;
        let mut h = format!(
            "layers={}\nd_model={}\nheads={}\nd_ff={}\nvocab={}\ncontext={}\n\
             embed_bound={:?}\nweight_decay={:?}\nlayer_norm_eps={:?}\nseed={}\nstep={}\n",
            c.layers,
            c.d_model,
            c.heads,
            c.d_ff,
            c.vocab,
            c.context,
            c.embed_bound,
            c.weight_decay,
            LAYER_NORM_EPS,
            self.seed,
            self.step
        );
        for (k, v) in &self.extra {
            h.push_str(&format!("{k}={v}\n"));
        }
        h
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        for (k, v) in &self.extra {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') || REQUIRED.contains(&k.as_str()) {
                return Err(Error::Checkpoint(format!("invalid extra header entry {k:?}")));
            }
        }
        let header = self.header();
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.theta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for x in &self.theta {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 {
            return Err(err("truncated preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        if hlen > MAX_HEADER || bytes.len() < 16 + hlen + 8 {
            return Err(err("truncated header"));
        }
        let header = std::str::from_utf8(&bytes[16..16 + hlen]).map_err(|_| err("header is not UTF-8"))?;
        let mut fields = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed header line {line:?}")))?;
            if fields.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Checkpoint(format!("duplicate header key {k:?}")));
            }
        }
        let mut take = |k: &str| {
            fields
                .remove(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing header key {k:?}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {k:?}")))
        }
        let config = ModelConfig {
            layers: num("layers", take("layers")?)?,
            d_model: num("d_model", take("d_model")?)?,
            heads: num("heads", take("heads")?)?,
            d_ff: num("d_ff", take("d_ff")?)?,
            vocab: num("vocab", take("vocab")?)?,
            context: num("context", take("context")?)?,
            embed_bound: num("embed_bound", take("embed_bound")?)?,
            weight_decay: num("weight_decay", take("weight_decay")?)?,
        };
        let eps: f64 = num("layer_norm_eps", take("layer_norm_eps")?)?;
        if eps != LAYER_NORM_EPS {
            return Err(Error::Checkpoint(format!("layer_norm_eps {eps} differs from {LAYER_NORM_EPS}")));
        }
        let seed = num("seed", take("seed")?)?;
        let step = num("step", take("step")?)?;
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;

        let body = &bytes[16 + hlen..];
        let d = u64::from_le_bytes(body[..8].try_into().expect("8 bytes"));
        let payload = &body[8..];
        if (payload.len() as u64) != d.saturating_mul(8) {
            return Err(err("parameter payload length does not match d"));
        }
        let expected = checked_dim(&config)?;
        if d as usize != expected {
            return Err(Error::Checkpoint(format!(
                "d = {d} does not match the {expected} parameters of the configured model"
            )));
        }
        let theta: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(err("non-finite parameter"));
        }
        Ok(Checkpoint {
            config,
            seed,
            step,
            extra: fields,
            theta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Parameter count of a config, refusing configs too large to be sensible
/// (guards decoding of hostile headers).
fn checked_dim(cfg: &ModelConfig) -> Result<usize> {
    let dims = [cfg.layers, cfg.d_model, cfg.d_ff, cfg.vocab, cfg.context];
    if dims.iter().any(|&x| x > 1 << 16) {
        return Err(Error::Checkpoint("model dimensions too large".into()));
    }
    Ok(ParamLayout::for_config(cfg).dim())
}
