//! Token dataset files and the plain-text debug form of an encoder sequence.
//!
//! Binary layout: `PZTK`, `u32` version, `u64` header length, JSON header,
//! then one record per puzzle made of unsigned LEB128 varints:
//! id length + UTF-8 id bytes, encoder id count + ids, then `n` labels,
//! `n` shuffled-order indices and `n` missing flags (0/1), where `n` comes
//! from the header.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncodedPuzzle, SpecialIds};
use crate::error::{Error, Result};
use crate::puzzle::PermutationLabel;

pub const TOKENS_FORMAT: &str = "jigsaw-seq/tokens/1";
const MAGIC: &[u8; 4] = b"PZTK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDatasetHeader {
    pub format: String,
    pub split: String,
    pub codebook_digest: String,
    pub manifest_digest: String,
    pub grid_side: usize,
    pub n_pieces: usize,
    pub tau: usize,
    pub separated: bool,
    pub vocab_size: usize,
    pub specials: SpecialIds,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub id: String,
    pub encoded: EncodedPuzzle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDataset {
    pub header: TokenDatasetHeader,
    pub records: Vec<TokenRecord>,
}

fn put(out: &mut Vec<u8>, v: u64) {
    leb128::write::unsigned(out, v).expect("writing to a Vec cannot fail");
}

fn get(cursor: &mut &[u8]) -> Result<u64> {
    leb128::read::unsigned(cursor).map_err(|e| Error::format("token dataset", e.to_string()))
}

impl TokenDataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for rec in &self.records {
            let e = &rec.encoded;
            put(&mut out, rec.id.len() as u64);
            out.extend_from_slice(rec.id.as_bytes());
            put(&mut out, e.encoder_ids.len() as u64);
            for &id in &e.encoder_ids {
                put(&mut out, id as u64);
            }
            for &l in e.labels.as_slice() {
                put(&mut out, l as u64);
            }
            for &o in &e.piece_order {
                put(&mut out, o as u64);
            }
            for &m in &e.missing {
                put(&mut out, m as u64);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::format("token dataset", "bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::format("token dataset", format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + len {
            return Err(Error::format("token dataset", "truncated header"));
        }
        let header: TokenDatasetHeader = serde_json::from_slice(&bytes[16..16 + len])?;
        if header.format != TOKENS_FORMAT {
            return Err(Error::format("token dataset", format!("unknown format {}", header.format)));
        }
        let mut cursor = &bytes[16 + len..];
        let n = header.n_pieces;
        let mut records = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let id_len = get(&mut cursor)? as usize;
            let mut id = vec![0u8; id_len];
            cursor
                .read_exact(&mut id)
                .map_err(|_| Error::format("token dataset", "truncated record id"))?;
            let id = String::from_utf8(id).map_err(|e| Error::format("token dataset", e.to_string()))?;
            let n_ids = get(&mut cursor)? as usize;
            let encoder_ids = (0..n_ids)
                .map(|_| get(&mut cursor).map(|v| v as u32))
                .collect::<Result<Vec<_>>>()?;
            let mut take_n = || (0..n).map(|_| get(&mut cursor).map(|v| v as usize)).collect::<Result<Vec<_>>>();
            let labels = PermutationLabel::new(take_n()?)?;
            let piece_order = take_n()?;
            let missing = take_n()?.into_iter().map(|m| m != 0).collect();
            records.push(TokenRecord {
                id,
                encoded: EncodedPuzzle {
                    encoder_ids,
                    labels,
                    piece_order,
                    missing,
                    tau: header.tau,
                    separated: header.separated,
                },
            });
        }
        if !cursor.is_empty() {
            return Err(Error::format("token dataset", "trailing bytes"));
        }
        Ok(TokenDataset { header, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn digest(&self) -> String {
        crate::sha256_hex(&self.to_bytes())
    }
}

/// Space-separated ids with `|` standing in for the separator id.
pub fn to_debug_text(ids: &[u32], specials: &SpecialIds) -> String {
    ids.iter()
        .map(|&id| {
            if id == specials.sep {
                "|".to_string()
            } else {
                id.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn from_debug_text(text: &str, specials: &SpecialIds) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|tok| match tok {
            "|" => Ok(specials.sep),
            _ => tok
                .parse()
                .map_err(|_| Error::format("debug token text", format!("bad token {tok:?}"))),
        })
        .collect()
}
