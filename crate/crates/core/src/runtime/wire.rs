//! Edge/cloud wire protocol. See `docs/protocol.md` for the byte layout.

use std::io::{self, Read, Write};

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ECWP";
pub const VERSION: u16 = 1;
/// Frames larger than this are refused before allocation.
pub const MAX_FRAME: usize = 1 << 28;

const HEADER: usize = 7;
const VARIANT_REQUEST: u8 = 0;
const VARIANT_RESPONSE: u8 = 1;
const VARIANT_SHUTDOWN: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    InferRequest {
        request_id: u64,
        dims: Vec<u32>,
        payload: Vec<f32>,
    },
    InferResponse {
        request_id: u64,
        predicted_class: u32,
    },
    Shutdown,
}

impl WireMessage {
    /// Bit-exact equality: distinguishes `-0.0` from `0.0` and compares NaN
    /// payloads by bits.
    pub fn bit_eq(&self, other: &WireMessage) -> bool {
        match (self, other) {
            (
                WireMessage::InferRequest {
                    request_id: a,
                    dims: da,
                    payload: pa,
                },
                WireMessage::InferRequest {
                    request_id: b,
                    dims: db,
                    payload: pb,
                },
            ) => a == b && da == db && pa.len() == pb.len() && pa.iter().zip(pb).all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => self == other,
        }
    }
}

pub fn encode_message(m: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 16);
    out.extend_from_slice(MAGIC);
    out.write_u16::<LittleEndian>(VERSION).unwrap();
    match m {
        WireMessage::InferRequest {
            request_id,
            dims,
            payload,
        } => {
            out.push(VARIANT_REQUEST);
            out.write_u64::<LittleEndian>(*request_id).unwrap();
            out.push(dims.len() as u8);
            for &d in dims {
                out.write_u32::<LittleEndian>(d).unwrap();
            }
            out.reserve(payload.len() * 4);
            for &v in payload {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        WireMessage::InferResponse {
            request_id,
            predicted_class,
        } => {
            out.push(VARIANT_RESPONSE);
            out.write_u64::<LittleEndian>(*request_id).unwrap();
            out.write_u32::<LittleEndian>(*predicted_class).unwrap();
        }
        WireMessage::Shutdown => out.push(VARIANT_SHUTDOWN),
    }
    out
}

fn need(bytes: &[u8], at: usize, n: usize, what: &str) -> Result<()> {
    if bytes.len() < at + n {
        Err(Error::protocol(bytes.len() as u64, format!("truncated frame: missing {what}")))
    } else {
        Ok(())
    }
}

pub fn decode_message(bytes: &[u8]) -> Result<WireMessage> {
    need(bytes, 0, 4, "magic")?;
    if &bytes[..4] != MAGIC {
        return Err(Error::protocol(0, format!("bad magic {:?}", &bytes[..4])));
    }
    need(bytes, 4, 2, "version")?;
    let version = LittleEndian::read_u16(&bytes[4..6]);
    if version != VERSION {
        return Err(Error::protocol(4, format!("unsupported version {version}")));
    }
    need(bytes, 6, 1, "variant")?;
    let mut at = HEADER;
    let msg = match bytes[6] {
        VARIANT_REQUEST => {
            need(bytes, at, 9, "request header")?;
            let request_id = LittleEndian::read_u64(&bytes[at..]);
            let rank = bytes[at + 8] as usize;
            at += 9;
            need(bytes, at, rank * 4, "dims")?;
            let dims: Vec<u32> = (0..rank).map(|i| LittleEndian::read_u32(&bytes[at + 4 * i..])).collect();
            at += rank * 4;
            let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let count = match count {
                Some(c) if c <= MAX_FRAME / 4 => c,
                _ => return Err(Error::protocol(HEADER as u64 + 9, "payload dims too large")),
            };
            need(bytes, at, count * 4, "payload")?;
            let mut payload = vec![0.0f32; count];
            LittleEndian::read_f32_into(&bytes[at..at + count * 4], &mut payload);
            at += count * 4;
            WireMessage::InferRequest {
                request_id,
                dims,
                payload,
            }
        }
        VARIANT_RESPONSE => {
            need(bytes, at, 12, "response body")?;
            let request_id = LittleEndian::read_u64(&bytes[at..]);
            let predicted_class = LittleEndian::read_u32(&bytes[at + 8..]);
            at += 12;
            WireMessage::InferResponse {
                request_id,
                predicted_class,
            }
        }
        VARIANT_SHUTDOWN => WireMessage::Shutdown,
        v => return Err(Error::protocol(6, format!("unknown variant {v}"))),
    };
    if at != bytes.len() {
        return Err(Error::protocol(at as u64, "trailing bytes in frame"));
    }
    Ok(msg)
}

/// Write `m` as a `u32` little-endian length followed by the frame.
/// Returns the number of bytes put on the stream.
pub fn write_frame<W: Write>(w: &mut W, m: &WireMessage) -> Result<usize> {
    let frame = encode_message(m);
    w.write_u32::<LittleEndian>(frame.len() as u32)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame.len() + 4)
}

/// Read one length-prefixed frame. `Ok(None)` on a clean end of stream
/// before the length prefix.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(WireMessage, usize)>> {
    let len = match r.read_u32::<LittleEndian>() {
        Ok(n) => n as usize,
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if len > MAX_FRAME {
        return Err(Error::protocol(0, format!("frame length {len} exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some((decode_message(&buf)?, len + 4)))
}

/// Encoded size of a message including its length prefix.
pub fn framed_len(m: &WireMessage) -> usize {
    4 + match m {
        WireMessage::InferRequest { dims, payload, .. } => HEADER + 9 + dims.len() * 4 + payload.len() * 4,
        WireMessage::InferResponse { .. } => HEADER + 12,
        WireMessage::Shutdown => HEADER,
    }
}
