//! Adaptation engine: tile utility, ranking and per-frame quality selection.
//!
//! The utility of a tile is the absolute cosine between its orientation and the
//! viewing direction. Its sign is positive for the two tiles whose bounding-box
//! centroids are nearest the viewer and negative for the rest, so nearby tiles
//! always rank above distant ones that happen to face the viewer.

use std::cmp::Ordering;

use crate::codec::QualityLevel;
use crate::{Real, Vec3};

/// Tolerance on the unit length of orientation vectors.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Number of nearest tiles that always get a positive utility.
pub const NEAR_TILE_COUNT: usize = 2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ViewportError {
    #[error("viewport orientation must be a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("viewport direction is zero or non-finite")]
    ZeroDirection,
}

/// The receiver's position and view direction at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport<T> {
    pub position: Vec3<T>,
    orientation: Vec3<T>,
    pub timestamp_ms: f64,
}

impl<T: Real> Viewport<T> {
    pub fn new(position: Vec3<T>, orientation: Vec3<T>, timestamp_ms: f64) -> Result<Self, ViewportError> {
        let n = orientation.norm().to_f64_lossy();
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(ViewportError::NotUnit(n));
        }
        Ok(Self {
            position,
            orientation,
            timestamp_ms,
        })
    }

    /// Normalizes `direction` first.
    pub fn looking(position: Vec3<T>, direction: Vec3<T>, timestamp_ms: f64) -> Result<Self, ViewportError> {
        let orientation = direction.normalized().ok_or(ViewportError::ZeroDirection)?;
        Ok(Self {
            position,
            orientation,
            timestamp_ms,
        })
    }

    pub fn orientation(&self) -> Vec3<T> {
        self.orientation
    }
}

/// Source of viewports indexed by stream time.
pub trait ViewportProvider {
    fn viewport_at(&self, time_ms: f64) -> Viewport<f64>;
}

impl ViewportProvider for Viewport<f64> {
    fn viewport_at(&self, time_ms: f64) -> Viewport<f64> {
        Viewport {
            timestamp_ms: time_ms,
            ..*self
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetadataError {
    #[error("tile {tile_id}: sizes must strictly increase with quality")]
    SizesNotIncreasing { tile_id: u8 },
    #[error("tile {tile_id} has no quality levels")]
    NoLevels { tile_id: u8 },
    #[error("duplicate tile id {0}")]
    DuplicateTile(u8),
    #[error("at most 255 tiles and 255 levels per tile fit the wire format")]
    TooMany,
    #[error("tile {tile_id}: orientation is not a unit vector")]
    NotUnit { tile_id: u8 },
    #[error("metadata message truncated")]
    Truncated,
    #[error("invalid quality level in metadata: {0}")]
    BadQuality(#[from] crate::codec::CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelInfo {
    pub quality: QualityLevel,
    pub size_bytes: u32,
}

/// Metadata the sender publishes for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileInfo<T> {
    pub tile_id: u8,
    pub orientation: Vec3<T>,
    pub bbox_centroid: Vec3<T>,
    /// Ascending in quality and size.
    pub levels: Vec<LevelInfo>,
}

impl<T> TileInfo<T> {
    pub fn size(&self, level: usize) -> u64 {
        u64::from(self.levels[level].size_bytes)
    }
}

/// Per-frame description of the adaptation set: tiles, their levels and sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct TileMetadata<T> {
    tiles: Vec<TileInfo<T>>,
}

impl<T: Real> TileMetadata<T> {
    pub fn new(tiles: Vec<TileInfo<T>>) -> Result<Self, MetadataError> {
        if tiles.len() > 255 {
            return Err(MetadataError::TooMany);
        }
        for (i, t) in tiles.iter().enumerate() {
            if tiles[..i].iter().any(|o| o.tile_id == t.tile_id) {
                return Err(MetadataError::DuplicateTile(t.tile_id));
            }
            if t.levels.is_empty() {
                return Err(MetadataError::NoLevels { tile_id: t.tile_id });
            }
            if t.levels.len() > 255 {
                return Err(MetadataError::TooMany);
            }
            if t.levels.windows(2).any(|w| w[0].size_bytes >= w[1].size_bytes) {
                return Err(MetadataError::SizesNotIncreasing { tile_id: t.tile_id });
            }
        }
        Ok(Self { tiles })
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn tiles(&self) -> &[TileInfo<T>] {
        &self.tiles
    }

    pub fn position_of(&self, tile_id: u8) -> Option<usize> {
        self.tiles.iter().position(|t| t.tile_id == tile_id)
    }

    /// count u8, then per tile: tile_id u8, orientation 3×f32, centroid 3×f32,
    /// level_count u8, then per level: octree_depth u8, qp u8, size_bytes u32.
    pub fn write_wire(&self, out: &mut Vec<u8>) {
        out.push(self.tiles.len() as u8);
        for t in &self.tiles {
            out.push(t.tile_id);
            for v in t.orientation.to_array().into_iter().chain(t.bbox_centroid.to_array()) {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
            out.push(t.levels.len() as u8);
            for l in &t.levels {
                out.push(l.quality.octree_depth);
                out.push(l.quality.qp);
                out.extend_from_slice(&l.size_bytes.to_le_bytes());
            }
        }
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_wire(&mut out);
        out
    }

    /// Parses the wire form; returns the metadata and the number of bytes consumed.
    pub fn read_wire(bytes: &[u8]) -> Result<(Self, usize), MetadataError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], MetadataError> {
            let s = bytes.get(pos..pos + n).ok_or(MetadataError::Truncated)?;
            pos += n;
            Ok(s)
        };
        let count = take(1)?[0];
        let mut tiles = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let tile_id = take(1)?[0];
            let mut f = [0f32; 6];
            for v in &mut f {
                *v = f32::from_le_bytes(take(4)?.try_into().unwrap());
            }
            let level_count = take(1)?[0];
            let mut levels = Vec::with_capacity(level_count as usize);
            for _ in 0..level_count {
                let b = take(6)?;
                levels.push(LevelInfo {
                    quality: QualityLevel::new(b[0], b[1])?,
                    size_bytes: u32::from_le_bytes(b[2..6].try_into().unwrap()),
                });
            }
            let conv = |a: &[f32]| {
                Vec3::new(
                    T::from_f64_lossy(f64::from(a[0])),
                    T::from_f64_lossy(f64::from(a[1])),
                    T::from_f64_lossy(f64::from(a[2])),
                )
            };
            tiles.push(TileInfo {
                tile_id,
                orientation: conv(&f[..3]),
                bbox_centroid: conv(&f[3..]),
                levels,
            });
        }
        Ok((Self::new(tiles)?, pos))
    }
}

/// Signed utility of one tile for the current viewport.
///
/// `all_centroids` holds the centroids of every tile of the frame (including this
/// one). The tile is positive when fewer than two other centroids are strictly
/// closer to the viewer; tiles tied at the same distance share the sign.
pub fn tile_utility<T: Real>(viewport: &Viewport<T>, tile: &TileInfo<T>, all_centroids: &[Vec3<T>]) -> T {
    let magnitude = tile.orientation.dot(viewport.orientation()).abs();
    if magnitude == T::zero() {
        return T::zero();
    }
    let own = viewport.position.distance_squared(tile.bbox_centroid);
    let closer = all_centroids
        .iter()
        .filter(|c| viewport.position.distance_squared(**c) < own)
        .count();
    if closer < NEAR_TILE_COUNT {
        magnitude
    } else {
        -magnitude
    }
}

/// Utility and viewer distance of one tile; input to [`rank_tiles`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileScore<T> {
    pub tile_id: u8,
    pub utility: T,
    pub distance: T,
}

/// Scores every tile in `metadata` order.
pub fn score_tiles<T: Real>(viewport: &Viewport<T>, metadata: &TileMetadata<T>) -> Vec<TileScore<T>> {
    let centroids: Vec<Vec3<T>> = metadata.tiles().iter().map(|t| t.bbox_centroid).collect();
    metadata
        .tiles()
        .iter()
        .map(|t| TileScore {
            tile_id: t.tile_id,
            utility: tile_utility(viewport, t, &centroids),
            distance: viewport.position.distance(t.bbox_centroid),
        })
        .collect()
}

/// Tile ids by descending utility; ties go to the nearer tile, then the smaller id.
pub fn rank_tiles<T: Real>(scores: &[TileScore<T>]) -> Vec<u8> {
    let mut sorted: Vec<&TileScore<T>> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        b.utility
            .partial_cmp(&a.utility)
            .unwrap_or(Ordering::Equal)
            .then(a.distance.partial_cmp(&b.distance).unwrap_or(Ordering::Equal))
            .then(a.tile_id.cmp(&b.tile_id))
    });
    sorted.into_iter().map(|s| s.tile_id).collect()
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AllocationError {
    #[error("no tiles to allocate")]
    EmptyMetadata,
    #[error("ranking must list every tile exactly once")]
    RankingMismatch,
    #[error("no quality sizes to select from")]
    NoSizes,
}

/// Chosen quality per tile for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Tile ids in metadata order.
    pub tile_ids: Vec<u8>,
    /// Quality index per tile, parallel to `tile_ids`.
    pub qualities: Vec<usize>,
    pub total_bytes: u64,
    pub budget_bytes: u64,
    pub budget_violated: bool,
}

impl Selection {
    pub fn quality_of(&self, tile_id: u8) -> Option<usize> {
        self.tile_ids
            .iter()
            .position(|&t| t == tile_id)
            .map(|i| self.qualities[i])
    }
}

/// Allocation strategy over a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Allocator {
    /// Raise every tile one level per sweep in ranking order.
    #[default]
    UniformStepwise,
    /// Give each tile, in ranking order, the best level the remaining budget allows.
    GreedyRanked,
}

impl Allocator {
    pub fn allocate<T: Real>(
        self,
        ranking: &[u8],
        metadata: &TileMetadata<T>,
        budget_bytes: u64,
    ) -> Result<Selection, AllocationError> {
        match self {
            Self::UniformStepwise => allocate_uniform_stepwise(ranking, metadata, budget_bytes),
            Self::GreedyRanked => allocate_greedy_ranked(ranking, metadata, budget_bytes),
        }
    }
}

/// Positions in metadata order of the ranked tiles, plus the all-lowest selection.
fn floor_selection<T: Real>(
    ranking: &[u8],
    metadata: &TileMetadata<T>,
    budget_bytes: u64,
) -> Result<(Vec<usize>, Selection), AllocationError> {
    if metadata.tile_count() == 0 {
        return Err(AllocationError::EmptyMetadata);
    }
    if ranking.len() != metadata.tile_count() {
        return Err(AllocationError::RankingMismatch);
    }
    let mut order = Vec::with_capacity(ranking.len());
    for &id in ranking {
        let pos = metadata.position_of(id).ok_or(AllocationError::RankingMismatch)?;
        if order.contains(&pos) {
            return Err(AllocationError::RankingMismatch);
        }
        order.push(pos);
    }
    let tiles = metadata.tiles();
    let total_bytes: u64 = tiles.iter().map(|t| t.size(0)).sum();
    Ok((
        order,
        Selection {
            tile_ids: tiles.iter().map(|t| t.tile_id).collect(),
            qualities: vec![0; tiles.len()],
            total_bytes,
            budget_bytes,
            budget_violated: total_bytes > budget_bytes,
        },
    ))
}

/// Starts every tile at its lowest level, then sweeps the ranking repeatedly,
/// raising each tile by one level when the step fits the remaining budget.
/// Unaffordable steps are skipped; allocation ends after a sweep with no upgrade.
pub fn allocate_uniform_stepwise<T: Real>(
    ranking: &[u8],
    metadata: &TileMetadata<T>,
    budget_bytes: u64,
) -> Result<Selection, AllocationError> {
    let (order, mut sel) = floor_selection(ranking, metadata, budget_bytes)?;
    if sel.budget_violated {
        return Ok(sel);
    }
    let tiles = metadata.tiles();
    loop {
        let mut upgraded = false;
        for &pos in &order {
            let level = sel.qualities[pos];
            let tile = &tiles[pos];
            if level + 1 < tile.levels.len() {
                let step = tile.size(level + 1) - tile.size(level);
                if sel.total_bytes + step <= budget_bytes {
                    sel.qualities[pos] += 1;
                    sel.total_bytes += step;
                    upgraded = true;
                }
            }
        }
        if !upgraded {
            return Ok(sel);
        }
    }
}

/// Starts every tile at its lowest level, then raises each tile in ranking order
/// straight to the highest level the remaining budget can pay for.
pub fn allocate_greedy_ranked<T: Real>(
    ranking: &[u8],
    metadata: &TileMetadata<T>,
    budget_bytes: u64,
) -> Result<Selection, AllocationError> {
    let (order, mut sel) = floor_selection(ranking, metadata, budget_bytes)?;
    if sel.budget_violated {
        return Ok(sel);
    }
    let tiles = metadata.tiles();
    for &pos in &order {
        let tile = &tiles[pos];
        let base = tile.size(0);
        if let Some(level) = (1..tile.levels.len())
            .rev()
            .find(|&l| sel.total_bytes + (tile.size(l) - base) <= budget_bytes)
        {
            sel.total_bytes += tile.size(level) - base;
            sel.qualities[pos] = level;
        }
    }
    Ok(sel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSelection {
    pub quality_index: usize,
    pub size_bytes: u64,
    pub budget_violated: bool,
}

/// Highest quality whose whole-cloud size fits the budget; the lowest one, flagged, if none fits.
pub fn select_network_adaptive(sizes: &[u64], budget_bytes: u64) -> Result<NetworkSelection, AllocationError> {
    if sizes.is_empty() {
        return Err(AllocationError::NoSizes);
    }
    Ok(match sizes.iter().rposition(|&s| s <= budget_bytes) {
        Some(i) => NetworkSelection {
            quality_index: i,
            size_bytes: sizes[i],
            budget_violated: false,
        },
        None => NetworkSelection {
            quality_index: 0,
            size_bytes: sizes[0],
            budget_violated: true,
        },
    })
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BudgetError {
    #[error("frame rate must be positive, got {0}")]
    NonPositiveFps(f64),
    #[error("target bitrate must be positive, got {0}")]
    NonPositiveBitrate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBudget {
    pub bits: f64,
    /// `floor(bits / 8)`.
    pub bytes: u64,
}

/// Per-frame allowance for a target bitrate at a capture frame rate.
pub fn frame_budget(target_bitrate_bps: f64, fps: f64) -> Result<FrameBudget, BudgetError> {
    if !(fps > 0.0) {
        return Err(BudgetError::NonPositiveFps(fps));
    }
    if !(target_bitrate_bps > 0.0) {
        return Err(BudgetError::NonPositiveBitrate(target_bitrate_bps));
    }
    let bits = target_bitrate_bps / fps;
    Ok(FrameBudget {
        bits,
        bytes: (bits / 8.0).floor() as u64,
    })
}
