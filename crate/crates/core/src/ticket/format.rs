//! The `.eltk` container.
//!
//! ```text
//! "ELTK" | u32 version | u64 header length | JSON header | payload | u32 CRC32(payload)
//! ```
//!
//! Integers are little-endian. The header holds the architecture, rewind
//! step, provenance, creation time and a tensor index; each index entry gives
//! a name, kind (`f32` or `mask-u8`), shape, and byte offset and length
//! within the payload. Parameters come first in canonical order, then masks
//! (one byte per entry, 0 or 1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Provenance, SparseTicket};
use crate::arch::{ArchDescriptor, ParamSet};
use crate::error::{Error, Result, TicketFormatError};
use crate::nn::{Mask, MaskSet};
use crate::tensor::{numel, Tensor};

pub const MAGIC: [u8; 4] = *b"ELTK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum Kind {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "mask-u8")]
    MaskU8,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    kind: Kind,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchDescriptor,
    rewind_step: usize,
    provenance: Provenance,
    created_at: Option<String>,
    tensors: Vec<Entry>,
}

pub fn encode(ticket: &SparseTicket) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in ticket.rewind_weights.iter() {
        let offset = payload.len() as u64;
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(Entry {
            name: name.into(),
            kind: Kind::F32,
            shape: t.shape().to_vec(),
            offset,
            length: payload.len() as u64 - offset,
        });
    }
    for (name, m) in ticket.mask.iter() {
        let offset = payload.len() as u64;
        payload.extend(m.bits().iter().map(|&k| k as u8));
        tensors.push(Entry {
            name: name.into(),
            kind: Kind::MaskU8,
            shape: m.shape().to_vec(),
            offset,
            length: m.len() as u64,
        });
    }
    let header = serde_json::to_vec(&Header {
        arch: ticket.arch.clone(),
        rewind_step: ticket.rewind_step,
        provenance: ticket.provenance.clone(),
        created_at: ticket.created_at.clone(),
        tensors,
    })?;

    let mut out = Vec::with_capacity(16 + header.len() + payload.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

fn truncated(what: impl Into<String>) -> Error {
    TicketFormatError::Truncated(what.into()).into()
}

fn header_err(what: impl Into<String>) -> Error {
    TicketFormatError::Header(what.into()).into()
}

pub fn decode(bytes: &[u8]) -> Result<SparseTicket> {
    if bytes.len() < 4 {
        return Err(truncated(format!("{} bytes, too short for the magic", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TicketFormatError::BadMagic { found: magic }.into());
    }
    if bytes.len() < 16 {
        return Err(truncated(format!("{} bytes, too short for the fixed header", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(TicketFormatError::UnsupportedVersion(version).into());
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if header_len > body.len() as u64 || body.len() as u64 - header_len < 4 {
        return Err(truncated(format!(
            "header claims {header_len} bytes but only {} follow the fixed header",
            body.len()
        )));
    }
    let header_len = header_len as usize;
    let payload = &body[header_len..body.len() - 4];
    let stored = u32::from_le_bytes(body[body.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(TicketFormatError::ChecksumMismatch { stored, computed }.into());
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| header_err(format!("invalid JSON: {e}")))?;

    let mut params = ParamSet::new();
    let mut mask = MaskSet::new();
    let mut end = 0u64;
    for e in &header.tensors {
        let elems = numel(&e.shape) as u64;
        let width = match e.kind {
            Kind::F32 => 4,
            Kind::MaskU8 => 1,
        };
        if e.length != elems * width {
            return Err(header_err(format!(
                "{}: length {} does not fit shape {:?}",
                e.name, e.length, e.shape
            )));
        }
        if e.offset != end {
            return Err(header_err(format!("{}: offset {} where {end} was expected", e.name, e.offset)));
        }
        end = e.offset + e.length;
        if end > payload.len() as u64 {
            return Err(truncated(format!(
                "{} ends at payload byte {end}, payload has {}",
                e.name,
                payload.len()
            )));
        }
        let raw = &payload[e.offset as usize..end as usize];
        match e.kind {
            Kind::F32 => {
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
            }
            Kind::MaskU8 => {
                let bits = raw
                    .iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(header_err(format!("{}: mask byte {other} is not 0 or 1", e.name))),
                    })
                    .collect::<Result<Vec<bool>>>()?;
                mask.insert(e.name.clone(), Mask::new(e.shape.clone(), bits)?);
            }
        }
    }
    if end != payload.len() as u64 {
        return Err(header_err(format!(
            "tensor index covers {end} bytes, payload has {}",
            payload.len()
        )));
    }
    let ticket = SparseTicket {
        arch: header.arch,
        rewind_weights: params,
        mask,
        rewind_step: header.rewind_step,
        provenance: header.provenance,
        created_at: header.created_at,
    };
    ticket.validate()?;
    Ok(ticket)
}

pub fn save_ticket(ticket: &SparseTicket, path: &Path) -> Result<()> {
    let bytes = encode(ticket)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_ticket(path: &Path) -> Result<SparseTicket> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
