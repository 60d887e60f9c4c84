//! Bitstream container and bit-level helpers.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "PCT1" | version u8 | attr_mode u8 | frame_index u32 | tile_id u8
//! | octree_depth u8 | qp u8 | reserved u8 | cube_origin 3×f32 | cube_edge f32
//! | occupancy_len u32 | attr_len u32 | point_count u32
//! | occupancy bytes | attribute bytes
//! ```

use super::CodecError;

pub const MAGIC: [u8; 4] = *b"PCT1";
pub const VERSION: u8 = 1;
/// Leaf-order scan with per-channel uniform quantization, bit-packed.
pub const ATTR_MODE_QUANTIZED_RAW: u8 = 0;
pub const HEADER_LEN: usize = 42;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub version: u8,
    pub attr_mode: u8,
    pub frame_index: u32,
    pub tile_id: u8,
    pub octree_depth: u8,
    pub qp: u8,
    pub cube_origin: [f32; 3],
    pub cube_edge: f32,
    pub occupancy_len: u32,
    pub attr_len: u32,
    pub point_count: u32,
}

impl Header {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(self.attr_mode);
        out.extend_from_slice(&self.frame_index.to_le_bytes());
        out.push(self.tile_id);
        out.push(self.octree_depth);
        out.push(self.qp);
        out.push(0);
        for v in self.cube_origin {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.cube_edge.to_le_bytes());
        out.extend_from_slice(&self.occupancy_len.to_le_bytes());
        out.extend_from_slice(&self.attr_len.to_le_bytes());
        out.extend_from_slice(&self.point_count.to_le_bytes());
    }

    /// Parses and checks magic, version and attribute mode.
    pub fn read(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(CodecError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated(super::Section::Header));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let header = Self {
            version: bytes[4],
            attr_mode: bytes[5],
            frame_index: u32_at(6),
            tile_id: bytes[10],
            octree_depth: bytes[11],
            qp: bytes[12],
            cube_origin: [f32_at(14), f32_at(18), f32_at(22)],
            cube_edge: f32_at(26),
            occupancy_len: u32_at(30),
            attr_len: u32_at(34),
            point_count: u32_at(38),
        };
        if header.version != VERSION {
            return Err(CodecError::UnsupportedVersion(header.version));
        }
        if header.attr_mode != ATTR_MODE_QUANTIZED_RAW {
            return Err(CodecError::UnsupportedAttrMode(header.attr_mode));
        }
        Ok(header)
    }
}

/// MSB-first bit packer.
#[derive(Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    pub fn with_capacity(bytes: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bytes),
            ..Self::default()
        }
    }

    /// Appends the low `width` bits of `value` (width ≤ 8).
    pub fn put(&mut self, value: u8, width: u32) {
        debug_assert!(width <= 8);
        if width == 0 {
            return;
        }
        self.acc = (self.acc << width) | (u32::from(value) & ((1 << width) - 1));
        self.nbits += width;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.bytes.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1 << self.nbits) - 1;
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.bytes.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u32,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            acc: 0,
            nbits: 0,
        }
    }

    pub fn get(&mut self, width: u32) -> Option<u8> {
        if width == 0 {
            return Some(0);
        }
        while self.nbits < width {
            let b = *self.bytes.get(self.pos)?;
            self.pos += 1;
            self.acc = (self.acc << 8) | u32::from(b);
            self.nbits += 8;
        }
        self.nbits -= width;
        let v = (self.acc >> self.nbits) & ((1 << width) - 1);
        self.acc &= (1 << self.nbits) - 1;
        Some(v as u8)
    }
}
