//! Octree-occupancy point cloud codec and adaptation sets.
//!
//! Geometry is coded as breadth-first occupancy bytes over the cubified bounding
//! box of the input, one byte per occupied internal node. Points sharing a leaf
//! voxel merge into one decoded point carrying their mean color. Leaf colors are
//! scanned in occupancy order and uniformly quantized per channel; the number of
//! dropped low bits is derived from the quality's `qp`.

pub mod bitstream;

use rayon::prelude::*;

use crate::adaptation::{LevelInfo, MetadataError, TileInfo, TileMetadata};
use crate::pccore::{Point, PointCloudFrame};
use crate::tiling::TileSet;
use crate::{Real, Vec3};
use bitstream::{BitReader, BitWriter, Header, ATTR_MODE_QUANTIZED_RAW, HEADER_LEN, VERSION};

pub const MAX_DEPTH: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Header,
    Occupancy,
    Attributes,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CodecError {
    #[error("cannot encode an empty point set")]
    EmptyInput,
    #[error("octree depth {0} outside 1..=16")]
    DepthOutOfRange(u8),
    #[error("qp {0} outside 1..=100")]
    QpOutOfRange(u8),
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("frame index {0} does not fit the bitstream")]
    FrameIndexOverflow(u64),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported bitstream version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported attribute mode {0}")]
    UnsupportedAttrMode(u8),
    #[error("truncated {0:?} section")]
    Truncated(Section),
    #[error("{0} trailing bytes after the attribute section")]
    TrailingBytes(usize),
    #[error("occupancy stream inconsistent: {0}")]
    OccupancyMismatch(&'static str),
    #[error("leaf count {found} does not match point count {expected}")]
    LeafCountMismatch { expected: u32, found: usize },
    #[error("attribute section is {found} bytes, expected {expected}")]
    AttributeLengthMismatch { expected: usize, found: usize },
}

/// Octree depth plus attribute quantization parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QualityLevel {
    pub octree_depth: u8,
    pub qp: u8,
}

impl QualityLevel {
    pub fn new(octree_depth: u8, qp: u8) -> Result<Self, CodecError> {
        if !(1..=MAX_DEPTH).contains(&octree_depth) {
            return Err(CodecError::DepthOutOfRange(octree_depth));
        }
        if !(1..=100).contains(&qp) {
            return Err(CodecError::QpOutOfRange(qp));
        }
        Ok(Self { octree_depth, qp })
    }

    /// The three configurations used by default: depths 6, 7 and 9 at qp 75.
    pub fn default_ladder() -> Vec<Self> {
        [6, 7, 9]
            .into_iter()
            .map(|d| Self::new(d, 75).expect("static ladder"))
            .collect()
    }

    /// Low bits dropped per color channel: 0 at qp 100, 2 at qp 75, at most 7.
    pub fn dropped_bits(&self) -> u32 {
        let steps = ((100.0 - f64::from(self.qp)) / 12.5).round() as u32;
        steps.min(7)
    }

    fn validate(&self) -> Result<(), CodecError> {
        Self::new(self.octree_depth, self.qp).map(|_| ())
    }
}

/// One encoding of one tile (or of the whole cloud) at one quality.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRepresentation {
    pub frame_index: u64,
    /// 0 for whole-cloud encodes.
    pub tile_id: u8,
    pub quality: QualityLevel,
    /// Number of decoded voxels.
    pub point_count: u32,
    /// Input points that went into the encode.
    pub source_points: u32,
    pub payload: Vec<u8>,
}

impl EncodedRepresentation {
    pub fn size_bytes(&self) -> usize {
        self.payload.len()
    }
}

/// Decoded points plus the header they came with.
#[derive(Debug, Clone)]
pub struct DecodedCloud {
    pub header: Header,
    pub points: Vec<Point>,
}

impl DecodedCloud {
    /// Edge length of one leaf voxel.
    pub fn voxel_edge(&self) -> f64 {
        f64::from(self.header.cube_edge) / f64::from(1u32 << self.header.octree_depth)
    }
}

/// Interleaves the per-axis voxel indices; the child code at every level is `x<<2 | y<<1 | z`.
fn morton_encode(ix: u32, iy: u32, iz: u32, depth: u32) -> u64 {
    let mut key = 0u64;
    for b in 0..depth {
        let child = (((ix >> b) & 1) << 2) | (((iy >> b) & 1) << 1) | ((iz >> b) & 1);
        key |= u64::from(child) << (3 * b);
    }
    key
}

fn morton_decode(key: u64, depth: u32) -> [u32; 3] {
    let mut idx = [0u32; 3];
    for b in 0..depth {
        let child = (key >> (3 * b)) & 7;
        idx[0] |= (((child >> 2) & 1) as u32) << b;
        idx[1] |= (((child >> 1) & 1) as u32) << b;
        idx[2] |= ((child & 1) as u32) << b;
    }
    idx
}

/// Cube enclosing the points: origin at the bbox minimum, edge the largest extent,
/// rounded up so that the f32 edge never undercuts the true extent.
fn enclosing_cube(points: &[Point]) -> ([f32; 3], f32) {
    let mut lo = points[0].position;
    let mut hi = lo;
    for p in &points[1..] {
        lo = lo.min(p.position);
        hi = hi.max(p.position);
    }
    let extent = [
        f64::from(hi.x) - f64::from(lo.x),
        f64::from(hi.y) - f64::from(lo.y),
        f64::from(hi.z) - f64::from(lo.z),
    ];
    let edge64 = extent.iter().cloned().fold(0.0, f64::max);
    let mut edge = edge64 as f32;
    if f64::from(edge) < edge64 {
        edge = f32::from_bits(edge.to_bits() + 1);
    }
    (lo.to_array(), edge)
}

fn voxel_index(coord: f32, origin: f32, edge: f32, cells: u32) -> u32 {
    if edge <= 0.0 {
        return 0;
    }
    let rel = (f64::from(coord) - f64::from(origin)) / f64::from(edge) * f64::from(cells);
    (rel.floor().max(0.0) as u64).min(u64::from(cells - 1)) as u32
}

fn voxel_center(index: u32, origin: f32, edge: f32, cells: u32) -> f32 {
    (f64::from(origin) + (f64::from(index) + 0.5) * f64::from(edge) / f64::from(cells)) as f32
}

/// Encodes `points` at `quality`. Output bytes depend only on the inputs.
pub fn encode_tile(
    points: &[Point],
    quality: QualityLevel,
    frame_index: u64,
    tile_id: u8,
) -> Result<EncodedRepresentation, CodecError> {
    quality.validate()?;
    if points.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    if let Some(i) = points.iter().position(|p| !p.position.is_finite()) {
        return Err(CodecError::NonFinite(i));
    }
    let frame_u32 = u32::try_from(frame_index).map_err(|_| CodecError::FrameIndexOverflow(frame_index))?;
    let depth = u32::from(quality.octree_depth);
    let cells = 1u32 << depth;
    let (origin, edge) = enclosing_cube(points);

    let mut keyed: Vec<(u64, u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ix = voxel_index(p.position.x, origin[0], edge, cells);
            let iy = voxel_index(p.position.y, origin[1], edge, cells);
            let iz = voxel_index(p.position.z, origin[2], edge, cells);
            (morton_encode(ix, iy, iz, depth), i as u32)
        })
        .collect();
    keyed.sort_unstable();

    // Merge points per leaf; color is the rounded mean.
    let mut leaves: Vec<u64> = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let key = keyed[i].0;
        let mut sum = [0u64; 3];
        let mut n = 0u64;
        while i < keyed.len() && keyed[i].0 == key {
            let c = points[keyed[i].1 as usize].color;
            for ch in 0..3 {
                sum[ch] += u64::from(c[ch]);
            }
            n += 1;
            i += 1;
        }
        leaves.push(key);
        colors.push(sum.map(|s| ((s + n / 2) / n) as u8));
    }

    // Occupancy, built bottom-up then emitted top-down (breadth-first).
    let mut levels: Vec<Vec<u8>> = Vec::with_capacity(depth as usize);
    let mut children = leaves.clone();
    for _ in 0..depth {
        let mut parents: Vec<u64> = Vec::with_capacity(children.len() / 2 + 1);
        let mut bytes: Vec<u8> = Vec::with_capacity(children.len() / 2 + 1);
        for &c in &children {
            let parent = c >> 3;
            if parents.last() != Some(&parent) {
                parents.push(parent);
                bytes.push(0);
            }
            *bytes.last_mut().unwrap() |= 1 << (c & 7);
        }
        levels.push(bytes);
        children = parents;
    }
    let occupancy: Vec<u8> = levels.into_iter().rev().flatten().collect();

    let drop = quality.dropped_bits();
    let width = 8 - drop;
    let mut writer = BitWriter::with_capacity(colors.len() * 3);
    for c in &colors {
        for &ch in c {
            writer.put(ch >> drop, width);
        }
    }
    let attributes = writer.finish();

    let header = Header {
        version: VERSION,
        attr_mode: ATTR_MODE_QUANTIZED_RAW,
        frame_index: frame_u32,
        tile_id,
        octree_depth: quality.octree_depth,
        qp: quality.qp,
        cube_origin: origin,
        cube_edge: edge,
        occupancy_len: occupancy.len() as u32,
        attr_len: attributes.len() as u32,
        point_count: leaves.len() as u32,
    };
    let mut payload = Vec::with_capacity(HEADER_LEN + occupancy.len() + attributes.len());
    header.write(&mut payload);
    payload.extend_from_slice(&occupancy);
    payload.extend_from_slice(&attributes);
    Ok(EncodedRepresentation {
        frame_index,
        tile_id,
        quality,
        point_count: leaves.len() as u32,
        source_points: points.len() as u32,
        payload,
    })
}

fn dequantize(q: u8, drop: u32) -> u8 {
    if drop == 0 {
        q
    } else {
        (((u32::from(q) << drop) | (1 << (drop - 1))).min(255)) as u8
    }
}

/// Decodes a bitstream on its own; no external state is needed.
pub fn decode_payload(payload: &[u8]) -> Result<DecodedCloud, CodecError> {
    let header = Header::read(payload)?;
    if !(1..=MAX_DEPTH).contains(&header.octree_depth) {
        return Err(CodecError::DepthOutOfRange(header.octree_depth));
    }
    if !(1..=100).contains(&header.qp) {
        return Err(CodecError::QpOutOfRange(header.qp));
    }
    let occ_end = HEADER_LEN + header.occupancy_len as usize;
    if payload.len() < occ_end {
        return Err(CodecError::Truncated(Section::Occupancy));
    }
    let attr_end = occ_end + header.attr_len as usize;
    if payload.len() < attr_end {
        return Err(CodecError::Truncated(Section::Attributes));
    }
    if payload.len() > attr_end {
        return Err(CodecError::TrailingBytes(payload.len() - attr_end));
    }
    let occupancy = &payload[HEADER_LEN..occ_end];
    let attributes = &payload[occ_end..attr_end];

    let depth = u32::from(header.octree_depth);
    let mut nodes: Vec<u64> = if header.point_count == 0 && occupancy.is_empty() {
        Vec::new()
    } else {
        vec![0]
    };
    let mut pos = 0usize;
    for _ in 0..depth {
        if nodes.is_empty() {
            break;
        }
        let mut next = Vec::with_capacity(nodes.len() * 4);
        for &node in &nodes {
            let byte = *occupancy
                .get(pos)
                .ok_or(CodecError::OccupancyMismatch("occupancy ends before the deepest level"))?;
            pos += 1;
            if byte == 0 {
                return Err(CodecError::OccupancyMismatch("occupied node without children"));
            }
            for k in 0..8u64 {
                if byte & (1 << k) != 0 {
                    next.push((node << 3) | k);
                }
            }
        }
        nodes = next;
    }
    if pos != occupancy.len() {
        return Err(CodecError::OccupancyMismatch("unused occupancy bytes"));
    }
    if nodes.len() != header.point_count as usize {
        return Err(CodecError::LeafCountMismatch {
            expected: header.point_count,
            found: nodes.len(),
        });
    }
    let q = QualityLevel {
        octree_depth: header.octree_depth,
        qp: header.qp,
    };
    let drop = q.dropped_bits();
    let width = 8 - drop;
    let expected_attr = (nodes.len() * 3 * width as usize).div_ceil(8);
    if attributes.len() != expected_attr {
        return Err(CodecError::AttributeLengthMismatch {
            expected: expected_attr,
            found: attributes.len(),
        });
    }

    let cells = 1u32 << depth;
    let o = header.cube_origin;
    let e = header.cube_edge;
    let mut reader = BitReader::new(attributes);
    let mut points = Vec::with_capacity(nodes.len());
    for key in nodes {
        let [ix, iy, iz] = morton_decode(key, depth);
        let mut color = [0u8; 3];
        for ch in &mut color {
            let v = reader
                .get(width)
                .ok_or(CodecError::Truncated(Section::Attributes))?;
            *ch = dequantize(v, drop);
        }
        points.push(Point::new(
            Vec3::new(
                voxel_center(ix, o[0], e, cells),
                voxel_center(iy, o[1], e, cells),
                voxel_center(iz, o[2], e, cells),
            ),
            color,
            header.tile_id,
        ));
    }
    Ok(DecodedCloud { header, points })
}

/// Decoded points of a representation; sensor ids are set to its tile id.
pub fn decode_tile(rep: &EncodedRepresentation) -> Result<Vec<Point>, CodecError> {
    Ok(decode_payload(&rep.payload)?.points)
}

/// Whole-cloud encode (tile id 0) used by network-adaptive streaming.
pub fn encode_full(
    frame: &PointCloudFrame,
    quality: QualityLevel,
) -> Result<EncodedRepresentation, CodecError> {
    encode_tile(&frame.points, quality, frame.frame_index, 0)
}

pub fn decode_full(rep: &EncodedRepresentation) -> Result<Vec<Point>, CodecError> {
    decode_tile(rep)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdaptationSetError {
    #[error("at least one quality level is required")]
    NoQualities,
    #[error("quality levels must be strictly increasing in octree depth")]
    QualitiesNotIncreasing,
    #[error("encoding tile {tile_id} at depth {depth} failed: {source}")]
    Encode {
        tile_id: u8,
        depth: u8,
        #[source]
        source: CodecError,
    },
    #[error(transparent)]
    Metadata(#[from] MetadataError),
}

fn check_ladder(qualities: &[QualityLevel]) -> Result<(), AdaptationSetError> {
    if qualities.is_empty() {
        return Err(AdaptationSetError::NoQualities);
    }
    if qualities
        .windows(2)
        .any(|w| w[0].octree_depth >= w[1].octree_depth)
    {
        return Err(AdaptationSetError::QualitiesNotIncreasing);
    }
    Ok(())
}

/// All representations of one tile, ascending in quality.
#[derive(Debug, Clone, PartialEq)]
pub struct TileRepresentations<T> {
    pub tile_id: u8,
    pub orientation: Vec3<T>,
    pub bbox_centroid: Vec3<T>,
    pub point_count: usize,
    pub representations: Vec<EncodedRepresentation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationSet<T> {
    pub frame_index: u64,
    pub tiles: Vec<TileRepresentations<T>>,
    metadata: TileMetadata<T>,
}

impl<T: Real> AdaptationSet<T> {
    pub fn metadata(&self) -> &TileMetadata<T> {
        &self.metadata
    }

    pub fn representation(&self, tile_id: u8, quality_index: usize) -> Option<&EncodedRepresentation> {
        self.tiles
            .iter()
            .find(|t| t.tile_id == tile_id)
            .and_then(|t| t.representations.get(quality_index))
    }

    pub fn representation_count(&self) -> usize {
        self.tiles.iter().map(|t| t.representations.len()).sum()
    }
}

/// Encodes every tile at every quality. Encodes run concurrently; the result is
/// identical to sequential encoding.
pub fn build_adaptation_set<T: Real>(
    tiles: &TileSet<T>,
    qualities: &[QualityLevel],
) -> Result<AdaptationSet<T>, AdaptationSetError> {
    check_ladder(qualities)?;
    let jobs: Vec<(usize, QualityLevel)> = (0..tiles.tiles.len())
        .flat_map(|t| qualities.iter().map(move |q| (t, *q)))
        .collect();
    let encoded: Vec<Result<EncodedRepresentation, AdaptationSetError>> = jobs
        .par_iter()
        .map(|&(t, q)| {
            let tile = &tiles.tiles[t];
            encode_tile(&tile.points, q, tiles.frame_index, tile.tile_id).map_err(|source| {
                AdaptationSetError::Encode {
                    tile_id: tile.tile_id,
                    depth: q.octree_depth,
                    source,
                }
            })
        })
        .collect();
    let mut encoded = encoded.into_iter();
    let mut out = Vec::with_capacity(tiles.tiles.len());
    for tile in &tiles.tiles {
        let representations = encoded
            .by_ref()
            .take(qualities.len())
            .collect::<Result<Vec<_>, _>>()?;
        out.push(TileRepresentations {
            tile_id: tile.tile_id,
            orientation: tile.orientation,
            bbox_centroid: tile.bbox_centroid,
            point_count: tile.points.len(),
            representations,
        });
    }
    let metadata = TileMetadata::new(
        out.iter()
            .map(|t| TileInfo {
                tile_id: t.tile_id,
                orientation: t.orientation,
                bbox_centroid: t.bbox_centroid,
                levels: level_infos(&t.representations),
            })
            .collect(),
    )?;
    Ok(AdaptationSet {
        frame_index: tiles.frame_index,
        tiles: out,
        metadata,
    })
}

fn level_infos(reps: &[EncodedRepresentation]) -> Vec<LevelInfo> {
    reps.iter()
        .map(|r| LevelInfo {
            quality: r.quality,
            size_bytes: r.size_bytes() as u32,
        })
        .collect()
}

/// Whole-cloud representations at every quality (network-adaptive path).
pub fn build_full_representations(
    frame: &PointCloudFrame,
    qualities: &[QualityLevel],
) -> Result<Vec<EncodedRepresentation>, AdaptationSetError> {
    check_ladder(qualities)?;
    qualities
        .par_iter()
        .map(|&q| {
            encode_full(frame, q).map_err(|source| AdaptationSetError::Encode {
                tile_id: 0,
                depth: q.octree_depth,
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
