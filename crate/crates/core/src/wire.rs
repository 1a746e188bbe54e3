//! Frame format shared by every transport.
//!
//! ```text
//! offset  size  field
//! 0       4     session id        u32 LE
//! 4       4     layer id          u32 LE
//! 8       1     message kind      u8
//! 9       4     element count     u32 LE
//! 13      8·n   payload           u64 LE each
//! 13+8n   4     CRC-32 of payload u32 LE
//! ```

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 13;
pub const TRAILER_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 0,
    /// `X − A`, opened during a Beaver multiplication.
    E = 1,
    /// `Y − B`, opened during a Beaver multiplication.
    Urev = 2,
    /// Masked correction P2 → P3 in the three-party multiplication.
    Vmsg = 3,
    /// Masked correction P3 → P2 in the three-party multiplication.
    Wmsg = 4,
    /// Opening of the masked value during truncation.
    SOpen = 5,
    /// Opening performed by the insecure debug ReLU.
    Debug = 6,
    /// Three-party re-masking after truncation.
    Remask = 7,
}

impl MessageKind {
    pub fn from_u8(v: u8) -> Result<Self> {
        use MessageKind::*;
        Ok(match v {
            0 => Hello,
            1 => E,
            2 => Urev,
            3 => Vmsg,
            4 => Wmsg,
            5 => SOpen,
            6 => Debug,
            7 => Remask,
            _ => return Err(Error::Frame(format!("unknown message kind {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub session: u32,
    pub layer: u32,
    pub kind: MessageKind,
    pub payload: Vec<u64>,
}

impl Frame {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.payload.len() + TRAILER_LEN
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&self.layer.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        let mut crc = crc32fast::Hasher::new();
        for v in &self.payload {
            let b = v.to_le_bytes();
            crc.update(&b);
            out.extend_from_slice(&b);
        }
        out.extend_from_slice(&crc.finalize().to_le_bytes());
        out
    }

    /// Total frame length announced by a header.
    pub fn frame_len(header: &[u8]) -> Result<usize> {
        if header.len() < HEADER_LEN {
            return Err(Error::Frame(format!("short header ({} bytes)", header.len())));
        }
        let count = u32::from_le_bytes(header[9..13].try_into().unwrap()) as usize;
        Ok(HEADER_LEN + 8 * count + TRAILER_LEN)
    }

    /// Decodes one frame from the front of `buf`, returning it and the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize)> {
        let total = Self::frame_len(buf)?;
        if buf.len() < total {
            return Err(Error::Frame(format!("truncated frame: have {} of {total} bytes", buf.len())));
        }
        let session = u32::from_le_bytes(buf[0..4].try_into().unwrap());
        let layer = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        let kind = MessageKind::from_u8(buf[8])?;
        let body = &buf[HEADER_LEN..total - TRAILER_LEN];
        let want = u32::from_le_bytes(buf[total - TRAILER_LEN..total].try_into().unwrap());
        if crc32fast::hash(body) != want {
            return Err(Error::Frame("payload checksum mismatch".into()));
        }
        let payload = body.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((Frame { session, layer, kind, payload }, total))
    }
}
