//! Binary model file.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"TRLSTM\r\n"
//! 8       4     version, u32 little-endian
//! 12      4     header length H, u32 little-endian
//! 16      H     header: UTF-8 `key=value` lines (config, ids, prior, rounds)
//! 16+H    8     parameter count P, u64 little-endian
//! 24+H    8P    parameters, f64 little-endian, in layout order
//! 24+H+8P 32    SHA-256 of every preceding byte
//! ```

use std::fmt::Write as _;
use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::{Layout, LstmModel, NetworkConfig, Parameters};
use crate::error::{Error, Result};
use crate::trace::{Dictionary, EventId};

pub const MODEL_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TRLSTM\r\n";
const CHECKSUM_LEN: usize = 32;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

impl LstmModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut header = String::new();
        writeln!(header, "vocab={}", c.vocab).unwrap();
        writeln!(header, "dense_width={}", c.dense_width).unwrap();
        writeln!(header, "lstm_width={}", c.lstm_width).unwrap();
        writeln!(header, "unroll_steps={}", c.unroll_steps).unwrap();
        writeln!(header, "input_dropout={}", c.input_dropout).unwrap();
        writeln!(header, "hidden_dropout={}", c.hidden_dropout).unwrap();
        writeln!(header, "recurrent_dropout={}", c.recurrent_dropout).unwrap();
        writeln!(header, "direct_horizon={}", c.direct_horizon).unwrap();
        writeln!(header, "rounds_trained={}", self.rounds_trained).unwrap();
        let ids: Vec<&str> = self.dict.ids().iter().map(EventId::as_str).collect();
        writeln!(header, "ids={}", ids.join(",")).unwrap();
        let prior: Vec<String> = self.prior.iter().map(u64::to_string).collect();
        writeln!(header, "prior={}", prior.join(",")).unwrap();

        let values = self.params.as_slice();
        let mut out = Vec::with_capacity(24 + header.len() + 8 * values.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing LSTM model magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        if bytes.len() < 16 + 8 + CHECKSUM_LEN {
            return Err(corrupt("truncated"));
        }
        let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != stored {
            return Err(corrupt("checksum mismatch"));
        }

        let header_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e + 8 <= body.len())
            .ok_or_else(|| corrupt("header length out of range"))?;
        let header = std::str::from_utf8(&body[16..header_end]).map_err(|_| corrupt("header is not UTF-8"))?;
        let count = u64::from_le_bytes(body[header_end..header_end + 8].try_into().unwrap()) as usize;
        let data = &body[header_end + 8..];
        if data.len() != count.checked_mul(8).ok_or_else(|| corrupt("bad count"))? {
            return Err(corrupt("parameter block length mismatch"));
        }

        let field = |key: &str| -> Result<&str> {
            header
                .lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| corrupt(format!("missing header field {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            field(key)?.parse().map_err(|_| corrupt(format!("bad {key}")))
        };
        let real = |key: &str| -> Result<f64> {
            field(key)?.parse().map_err(|_| corrupt(format!("bad {key}")))
        };
        let config = NetworkConfig {
            vocab: num("vocab")?,
            dense_width: num("dense_width")?,
            lstm_width: num("lstm_width")?,
            unroll_steps: num("unroll_steps")?,
            input_dropout: real("input_dropout")?,
            hidden_dropout: real("hidden_dropout")?,
            recurrent_dropout: real("recurrent_dropout")?,
            direct_horizon: num("direct_horizon")?,
        };
        config.validate().map_err(|e| corrupt(e.to_string()))?;
        let ids_field = field("ids")?;
        let ids = if ids_field.is_empty() {
            Vec::new()
        } else {
            ids_field
                .split(',')
                .map(|s| EventId::new(s).ok_or_else(|| corrupt("bad id")))
                .collect::<Result<Vec<_>>>()?
        };
        let dict = Dictionary::from_ids(ids).map_err(|e| corrupt(e.to_string()))?;
        let prior = field("prior")?
            .split(',')
            .map(|s| s.parse::<u64>().map_err(|_| corrupt("bad prior")))
            .collect::<Result<Vec<_>>>()?;
        if dict.vocab_size() != config.vocab || prior.len() != config.vocab {
            return Err(corrupt("dictionary does not match vocabulary"));
        }

        let layout = Layout::new(&config);
        if layout.total != count {
            return Err(corrupt("parameter count does not match configuration"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = Parameters { values };
        if !params.all_finite() {
            return Err(corrupt("non-finite parameter"));
        }
        Ok(LstmModel {
            rounds_trained: num("rounds_trained")?,
            config,
            layout,
            dict,
            params,
            prior,
        })
    }
}
