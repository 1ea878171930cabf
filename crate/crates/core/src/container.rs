//! Binary container shared by codebooks and checkpoints: a 4-byte magic, a
//! little-endian `u32` version, a little-endian `u64` header length, a UTF-8
//! JSON header, then raw little-endian `f64` arrays in header order.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub(crate) const VERSION: u32 = 1;

pub(crate) fn encode<H: Serialize>(magic: &[u8; 4], header: &H, blobs: &[&[f64]]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("header serializes");
    let payload: usize = blobs.iter().map(|b| b.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + header.len() + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for blob in blobs {
        for v in blob.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) struct Blobs<'a> {
    what: &'static str,
    rest: &'a [u8],
}

impl Blobs<'_> {
    pub(crate) fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n * 8;
        if self.rest.len() < bytes {
            return Err(Error::format(self.what, "truncated array payload"));
        }
        let (head, tail) = self.rest.split_at(bytes);
        self.rest = tail;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(Error::format(self.what, "trailing bytes after payload"))
        }
    }
}

pub(crate) fn decode<'a, H: DeserializeOwned>(
    what: &'static str,
    magic: &[u8; 4],
    bytes: &'a [u8],
) -> Result<(H, Blobs<'a>)> {
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(Error::format(what, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(what, format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + len {
        return Err(Error::format(what, "truncated header"));
    }
    let header = serde_json::from_slice(&bytes[16..16 + len])?;
    Ok((
        header,
        Blobs {
            what,
            rest: &bytes[16 + len..],
        },
    ))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
