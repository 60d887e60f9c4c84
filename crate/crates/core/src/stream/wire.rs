//! Wire messages.
//!
//! Every message is `length u32 | type u8 | body`, little-endian, where `length`
//! counts the type byte and the body.
//!
//! | type | body |
//! |------|------|
//! | 0 capture | frame u32, capture_ts f64, sensor_count u8, point_count u32, 16-byte points |
//! | 1 tile-metadata | frame u32, capture_ts f64, TileMetadata wire form |
//! | 2 request | frame u32, tile_id u8 (255 = full cloud), quality_index u8 |
//! | 3 payload | codec bitstream |
//! | 4 control | code u8, frame u32 |

use std::io::{Read, Write};

use crate::adaptation::{MetadataError, TileMetadata};
use crate::pccore::UNCOMPRESSED_POINT_BYTES;

/// Tile id that requests the whole-cloud representation.
pub const FULL_CLOUD: u8 = 255;
/// Refuse messages larger than this when reading from a stream.
pub const MAX_MESSAGE_LEN: u32 = 256 << 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WireError {
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("message body truncated")]
    Truncated,
    #[error("{0} trailing bytes in message")]
    TrailingBytes(usize),
    #[error("message length {0} exceeds limit")]
    TooLong(u32),
    #[error("empty message")]
    Empty,
    #[error("unknown control code {0}")]
    UnknownControl(u8),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCode {
    EndOfSession = 0,
    /// All requests for a frame have been sent.
    RequestsComplete = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Capture {
        frame_index: u32,
        capture_ts_ms: f64,
        sensor_count: u8,
        /// Serialized points, 16 bytes each.
        points: Vec<u8>,
    },
    TileMetadata {
        frame_index: u32,
        capture_ts_ms: f64,
        metadata: TileMetadata<f64>,
    },
    Request {
        frame_index: u32,
        tile_id: u8,
        quality_index: u8,
    },
    Payload {
        bitstream: Vec<u8>,
    },
    Control {
        code: ControlCode,
        frame_index: u32,
    },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or(WireError::Truncated)?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Self::Capture { .. } => 0,
            Self::TileMetadata { .. } => 1,
            Self::Request { .. } => 2,
            Self::Payload { .. } => 3,
            Self::Control { .. } => 4,
        }
    }

    /// Type byte plus body.
    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = vec![self.type_code()];
        match self {
            Self::Capture {
                frame_index,
                capture_ts_ms,
                sensor_count,
                points,
            } => {
                out.extend_from_slice(&frame_index.to_le_bytes());
                out.extend_from_slice(&capture_ts_ms.to_le_bytes());
                out.push(*sensor_count);
                out.extend_from_slice(&((points.len() / UNCOMPRESSED_POINT_BYTES) as u32).to_le_bytes());
                out.extend_from_slice(points);
            }
            Self::TileMetadata {
                frame_index,
                capture_ts_ms,
                metadata,
            } => {
                out.extend_from_slice(&frame_index.to_le_bytes());
                out.extend_from_slice(&capture_ts_ms.to_le_bytes());
                metadata.write_wire(&mut out);
            }
            Self::Request {
                frame_index,
                tile_id,
                quality_index,
            } => {
                out.extend_from_slice(&frame_index.to_le_bytes());
                out.push(*tile_id);
                out.push(*quality_index);
            }
            Self::Payload { bitstream } => out.extend_from_slice(bitstream),
            Self::Control { code, frame_index } => {
                out.push(*code as u8);
                out.extend_from_slice(&frame_index.to_le_bytes());
            }
        }
        out
    }

    /// Length prefix, type byte and body.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.encode_body();
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    /// Size on the wire, including the length prefix.
    pub fn wire_len(&self) -> usize {
        4 + 1
            + match self {
                Self::Capture { points, .. } => 4 + 8 + 1 + 4 + points.len(),
                Self::TileMetadata { metadata, .. } => {
                    4 + 8
                        + 1
                        + metadata
                            .tiles()
                            .iter()
                            .map(|t| 1 + 24 + 1 + 6 * t.levels.len())
                            .sum::<usize>()
                }
                Self::Request { .. } => 6,
                Self::Payload { bitstream } => bitstream.len(),
                Self::Control { .. } => 5,
            }
    }

    /// Parses a type byte plus body (no length prefix).
    pub fn decode_body(bytes: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor { bytes, pos: 0 };
        let ty = c.u8().map_err(|_| WireError::Empty)?;
        let msg = match ty {
            0 => {
                let frame_index = c.u32()?;
                let capture_ts_ms = c.f64()?;
                let sensor_count = c.u8()?;
                let count = c.u32()? as usize;
                let points = c.take(count * UNCOMPRESSED_POINT_BYTES)?.to_vec();
                Self::Capture {
                    frame_index,
                    capture_ts_ms,
                    sensor_count,
                    points,
                }
            }
            1 => {
                let frame_index = c.u32()?;
                let capture_ts_ms = c.f64()?;
                let (metadata, used) = TileMetadata::read_wire(&bytes[c.pos..]).map_err(|e| match e {
                    MetadataError::Truncated => WireError::Truncated,
                    other => other.into(),
                })?;
                c.pos += used;
                Self::TileMetadata {
                    frame_index,
                    capture_ts_ms,
                    metadata,
                }
            }
            2 => Self::Request {
                frame_index: c.u32()?,
                tile_id: c.u8()?,
                quality_index: c.u8()?,
            },
            3 => Self::Payload {
                bitstream: c.rest().to_vec(),
            },
            4 => {
                let code = match c.u8()? {
                    0 => ControlCode::EndOfSession,
                    1 => ControlCode::RequestsComplete,
                    other => return Err(WireError::UnknownControl(other)),
                };
                Self::Control {
                    code,
                    frame_index: c.u32()?,
                }
            }
            other => return Err(WireError::UnknownType(other)),
        };
        if c.pos != bytes.len() {
            return Err(WireError::TrailingBytes(bytes.len() - c.pos));
        }
        Ok(msg)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.encode())
    }

    /// Reads one length-prefixed message; `Ok(None)` on a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>, super::StreamError> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len);
        if len > MAX_MESSAGE_LEN {
            return Err(WireError::TooLong(len).into());
        }
        let mut body = vec![0u8; len as usize];
        r.read_exact(&mut body)?;
        Ok(Some(Self::decode_body(&body)?))
    }
}
