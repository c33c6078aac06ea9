//! Line-oriented text records for checkpoints.
//!
//! A record is a header line, a SHA-256 line covering the body, a `---`
//! separator and then `key = value` lines. Floats are written as the 16 hex
//! digits of their IEEE-754 bit pattern, so a save/load round trip is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{Activation, AdamConfig, AdamState, LayerSpec, MlpNetwork};

const SEPARATOR: &str = "---";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    entries: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn push_u64(&mut self, key: impl Into<String>, value: u64) {
        self.push(key, value.to_string());
    }

    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, format!("{:016x}", value.to_bits()));
    }

    pub fn push_f64s(&mut self, key: impl Into<String>, values: &[f64]) {
        let mut s = String::with_capacity(values.len() * 17 + 8);
        let _ = write!(s, "{}", values.len());
        for v in values {
            let _ = write!(s, " {:016x}", v.to_bits());
        }
        self.push(key, s);
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Usage(format!("record is missing `{key}`")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .parse()
            .map_err(|e| Error::Usage(format!("`{key}`: {e}")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        parse_hex_f64(self.get(key)?).map_err(|e| Error::Usage(format!("`{key}`: {e}")))
    }

    pub fn get_f64s(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.get(key)?;
        let mut parts = raw.split_ascii_whitespace();
        let len: usize = parts
            .next()
            .ok_or_else(|| Error::Usage(format!("`{key}`: empty array")))?
            .parse()
            .map_err(|e| Error::Usage(format!("`{key}` length: {e}")))?;
        let values = parts
            .map(parse_hex_f64)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Usage(format!("`{key}`: {e}")))?;
        if values.len() != len {
            return Err(Error::Usage(format!(
                "`{key}` declares {len} values but holds {}",
                values.len()
            )));
        }
        Ok(values)
    }

    /// Serializes with the given header line and a checksum of the body.
    pub fn to_text(&self, header: &str) -> String {
        let mut body = String::new();
        for (k, v) in &self.entries {
            body.push_str(k);
            body.push_str(" = ");
            body.push_str(v);
            body.push('\n');
        }
        let digest = hex_digest(body.as_bytes());
        format!("{header}\nsha256 {digest}\n{SEPARATOR}\n{body}")
    }

    /// Parses text produced by [`Record::to_text`], verifying header and
    /// checksum. `origin` only labels errors.
    pub fn from_text(text: &str, header: &str, origin: &Path) -> Result<Self> {
        let integrity = |reason: String| Error::Integrity {
            path: origin.to_path_buf(),
            reason,
        };
        let mut rest = text;
        let mut next_line = |what: &str| -> Result<&str> {
            let (line, tail) = rest
                .split_once('\n')
                .ok_or_else(|| integrity(format!("truncated before {what}")))?;
            rest = tail;
            Ok(line)
        };
        let found = next_line("header")?;
        if found != header {
            return Err(integrity(format!(
                "expected header `{header}`, found `{found}`"
            )));
        }
        let sum_line = next_line("checksum")?;
        let expected = sum_line
            .strip_prefix("sha256 ")
            .ok_or_else(|| integrity("missing sha256 line".into()))?
            .to_string();
        if next_line("separator")? != SEPARATOR {
            return Err(integrity("missing separator".into()));
        }
        let body = rest;
        if hex_digest(body.as_bytes()) != expected {
            return Err(integrity("checksum mismatch".into()));
        }
        let mut entries = Vec::new();
        for line in body.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| integrity(format!("malformed line `{}`", truncate(line))))?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }
}

fn truncate(line: &str) -> &str {
    let end = line.char_indices().nth(40).map_or(line.len(), |(i, _)| i);
    &line[..end]
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn parse_hex_f64(s: &str) -> std::result::Result<f64, String> {
    if s.len() != 16 {
        return Err(format!("`{s}` is not a 16-digit hex float"));
    }
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| format!("`{s}`: {e}"))
}

pub fn encode_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| format!("{}x{}:{}", l.in_dim, l.out_dim, l.activation.tag()))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn decode_layers(s: &str) -> Result<Vec<LayerSpec>> {
    s.split(',')
        .map(|part| {
            let bad = || Error::Config(format!("bad layer spec `{part}`"));
            let (dims, tag) = part.split_once(':').ok_or_else(bad)?;
            let (i, o) = dims.split_once('x').ok_or_else(bad)?;
            Ok(LayerSpec::new(
                i.parse().map_err(|_| bad())?,
                o.parse().map_err(|_| bad())?,
                Activation::from_tag(tag)?,
            ))
        })
        .collect()
}

pub fn encode_network(rec: &mut Record, prefix: &str, net: &MlpNetwork) {
    rec.push(format!("{prefix}.layers"), encode_layers(net.layers()));
    rec.push_f64s(format!("{prefix}.params"), net.params());
}

pub fn decode_network(rec: &Record, prefix: &str) -> Result<MlpNetwork> {
    let layers = decode_layers(rec.get(&format!("{prefix}.layers"))?)?;
    let params = rec.get_f64s(&format!("{prefix}.params"))?;
    MlpNetwork::from_params(&layers, params)
}

pub fn encode_adam(rec: &mut Record, prefix: &str, state: &AdamState) {
    let c = &state.config;
    rec.push_f64(format!("{prefix}.learning_rate"), c.learning_rate);
    rec.push_f64(format!("{prefix}.beta1"), c.beta1);
    rec.push_f64(format!("{prefix}.beta2"), c.beta2);
    rec.push_f64(format!("{prefix}.epsilon"), c.epsilon);
    rec.push_f64(format!("{prefix}.weight_decay"), c.weight_decay);
    rec.push_u64(format!("{prefix}.step_count"), state.step_count);
    rec.push_f64s(format!("{prefix}.first_moment"), &state.first_moment);
    rec.push_f64s(format!("{prefix}.second_moment"), &state.second_moment);
}

pub fn decode_adam(rec: &Record, prefix: &str) -> Result<AdamState> {
    let config = AdamConfig {
        learning_rate: rec.get_f64(&format!("{prefix}.learning_rate"))?,
        beta1: rec.get_f64(&format!("{prefix}.beta1"))?,
        beta2: rec.get_f64(&format!("{prefix}.beta2"))?,
        epsilon: rec.get_f64(&format!("{prefix}.epsilon"))?,
        weight_decay: rec.get_f64(&format!("{prefix}.weight_decay"))?,
    };
    Ok(AdamState {
        config,
        step_count: rec.get_u64(&format!("{prefix}.step_count"))?,
        first_moment: rec.get_f64s(&format!("{prefix}.first_moment"))?,
        second_moment: rec.get_f64s(&format!("{prefix}.second_moment"))?,
    })
}

/// A single network with its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCheckpoint {
    pub network: MlpNetwork,
    pub seed: u64,
    pub adam: AdamState,
}

impl NetworkCheckpoint {
    pub const HEADER: &'static str = "umbrella-network 1";

    pub fn to_text(&self) -> String {
        let mut rec = Record::new();
        rec.push_u64("seed", self.seed);
        encode_network(&mut rec, "net", &self.network);
        encode_adam(&mut rec, "adam", &self.adam);
        rec.to_text(Self::HEADER)
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let rec = Record::from_text(text, Self::HEADER, origin)?;
        let network = decode_network(&rec, "net")?;
        let adam = decode_adam(&rec, "adam")?;
        if adam.first_moment.len() != network.num_params()
            || adam.second_moment.len() != network.num_params()
        {
            return Err(Error::Integrity {
                path: origin.to_path_buf(),
                reason: "optimizer moments do not match the parameter count".into(),
            });
        }
        Ok(Self {
            network,
            seed: rec.get_u64("seed")?,
            adam,
        })
    }
}
