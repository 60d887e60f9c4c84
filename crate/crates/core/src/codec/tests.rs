use super::*;
use crate::pccore::synth::{synth_frame, SynthConfig};
use crate::tiling::tile_frame;
use crate::Vec3f;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(depth: u8, qp: u8) -> QualityLevel {
    QualityLevel::new(depth, qp).unwrap()
}

fn point(x: f32, y: f32, z: f32, c: [u8; 3]) -> Point {
    Point::new(Vec3f::new(x, y, z), c, 0)
}

/// Brute-force directed Hausdorff distance max_a min_b |a - b|, in f64.
fn directed_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .map(|p| {
            let p = p.position.cast::<f64>();
            b.iter()
                .map(|r| p.distance_squared(r.position.cast::<f64>()))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .fold(0.0, f64::max)
}

fn symmetric_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<Point> {
    (0..n)
        .map(|_| {
            Point::new(
                Vec3f::new(
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale) * 0.5,
                    rng.gen_range(0.0..scale),
                ),
                [rng.gen(), rng.gen(), rng.gen()],
                0,
            )
        })
        .collect()
}

fn half_diagonal(payload: &[u8]) -> f64 {
    let h = bitstream::Header::read(payload).unwrap();
    f64::from(h.cube_edge) / f64::from(1u32 << h.octree_depth) * 3f64.sqrt() / 2.0
}

#[test]
fn dropped_bits_mapping() {
    assert_eq!(q(9, 100).dropped_bits(), 0);
    assert_eq!(q(9, 75).dropped_bits(), 2);
    assert_eq!(q(9, 50).dropped_bits(), 4);
    assert_eq!(q(9, 1).dropped_bits(), 7);
}

#[test]
fn quality_validation() {
    assert_eq!(QualityLevel::new(0, 75), Err(CodecError::DepthOutOfRange(0)));
    assert_eq!(QualityLevel::new(17, 75), Err(CodecError::DepthOutOfRange(17)));
    assert_eq!(QualityLevel::new(5, 0), Err(CodecError::QpOutOfRange(0)));
    assert_eq!(QualityLevel::default_ladder().len(), 3);
}

#[test]
fn single_point_depth_one() {
    let rep = encode_tile(&[point(0.5, 0.5, 0.5, [10, 20, 30])], q(1, 100), 0, 0).unwrap();
    let h = bitstream::Header::read(&rep.payload).unwrap();
    assert_eq!(h.occupancy_len, 1);
    let occ = rep.payload[HEADER_LEN];
    assert_eq!(occ.count_ones(), 1);
    assert_eq!(h.point_count, 1);
    assert_eq!(h.attr_len, 3);
    let out = decode_tile(&rep).unwrap();
    assert_eq!(out, vec![point(0.5, 0.5, 0.5, [10, 20, 30])]);
}

#[test]
fn eight_octants_fill_root() {
    let mut pts = Vec::new();
    for x in [0.0f32, 1.0] {
        for y in [0.0f32, 1.0] {
            for z in [0.0f32, 1.0] {
                pts.push(point(x, y, z, [x as u8 * 200, y as u8 * 200, z as u8 * 200]));
            }
        }
    }
    let rep = encode_tile(&pts, q(1, 100), 0, 0).unwrap();
    assert_eq!(rep.payload[HEADER_LEN], 0xFF);
    assert_eq!(rep.point_count, 8);
    let out = decode_tile(&rep).unwrap();
    assert_eq!(out.len(), 8);
    // Child 7 is the (+x, +y, +z) octant; centers sit at a quarter of the edge.
    assert_eq!(out[7].position, Vec3f::new(0.75, 0.75, 0.75));
    assert_eq!(out[7].color, [200, 200, 200]);
    assert_eq!(out[0].position, Vec3f::new(0.25, 0.25, 0.25));
}

#[test]
fn depth_ten_error_within_half_diagonal() {
    let pts = vec![
        point(0.0, 0.0, 0.0, [0; 3]),
        point(1.0, 1.0, 1.0, [0; 3]),
        point(0.3137, 0.77, 0.0123, [9; 3]),
    ];
    let rep = encode_tile(&pts, q(10, 75), 0, 0).unwrap();
    let h = bitstream::Header::read(&rep.payload).unwrap();
    assert_eq!(h.cube_edge, 1.0);
    let out = decode_tile(&rep).unwrap();
    let bound = 3f64.sqrt() / 2048.0;
    assert!(symmetric_hausdorff(&pts, &out) <= bound);
}

#[test]
fn lossless_qp_reproduces_voxel_means() {
    // Two points share a voxel, one is alone.
    let pts = vec![
        point(0.0, 0.0, 0.0, [10, 100, 255]),
        point(0.01, 0.0, 0.0, [21, 0, 254]),
        point(1.0, 1.0, 1.0, [7, 8, 9]),
    ];
    let out = decode_tile(&encode_tile(&pts, q(3, 100), 0, 0).unwrap()).unwrap();
    assert_eq!(out.len(), 2);
    // (10+21+1)/2 = 16 with round-half-up, (100+0+1)/2 = 50, (255+254+1)/2 = 255.
    assert_eq!(out[0].color, [16, 50, 255]);
    assert_eq!(out[1].color, [7, 8, 9]);
}

#[test]
fn quantized_colors_stay_within_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = random_cloud(&mut rng, 500, 1.0);
    let lossless = decode_tile(&encode_tile(&pts, q(12, 100), 0, 0).unwrap()).unwrap();
    let lossy = decode_tile(&encode_tile(&pts, q(12, 75), 0, 0).unwrap()).unwrap();
    assert_eq!(lossless.len(), lossy.len());
    for (a, b) in lossless.iter().zip(&lossy) {
        assert_eq!(a.position, b.position);
        for ch in 0..3 {
            assert!((i32::from(a.color[ch]) - i32::from(b.color[ch])).abs() <= 2);
        }
    }
}

#[test]
fn random_cloud_hausdorff_depth_seven() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let pts = random_cloud(&mut rng, 10_000, 1.5);
    let rep = encode_tile(&pts, q(7, 75), 0, 0).unwrap();
    let out = decode_tile(&rep).unwrap();
    assert_eq!(out.len(), rep.point_count as usize);
    assert!(symmetric_hausdorff(&pts, &out) <= half_diagonal(&rep.payload));
}

#[test]
fn deterministic_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = random_cloud(&mut rng, 2_000, 1.0);
    let a = encode_tile(&pts, q(9, 75), 3, 1).unwrap();
    let b = encode_tile(&pts, q(9, 75), 3, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn encode_errors() {
    assert_eq!(encode_tile(&[], q(6, 75), 0, 0), Err(CodecError::EmptyInput));
    let bad = [point(f32::INFINITY, 0.0, 0.0, [0; 3])];
    assert_eq!(encode_tile(&bad, q(6, 75), 0, 0), Err(CodecError::NonFinite(0)));
    let bad_q = QualityLevel {
        octree_depth: 20,
        qp: 75,
    };
    assert_eq!(
        encode_tile(&[point(0.0, 0.0, 0.0, [0; 3])], bad_q, 0, 0),
        Err(CodecError::DepthOutOfRange(20))
    );
}

#[test]
fn decode_errors_are_distinct() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts = random_cloud(&mut rng, 300, 1.0);
    let good = encode_tile(&pts, q(6, 75), 0, 0).unwrap().payload;
    let h = bitstream::Header::read(&good).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(decode_payload(&bad).unwrap_err(), CodecError::BadMagic);

    let mut bad = good.clone();
    bad[4] = 2;
    assert_eq!(decode_payload(&bad).unwrap_err(), CodecError::UnsupportedVersion(2));

    let mut bad = good.clone();
    bad[5] = 1;
    assert_eq!(decode_payload(&bad).unwrap_err(), CodecError::UnsupportedAttrMode(1));

    assert_eq!(
        decode_payload(&good[..20]).unwrap_err(),
        CodecError::Truncated(Section::Header)
    );
    let occ_end = HEADER_LEN + h.occupancy_len as usize;
    assert_eq!(
        decode_payload(&good[..occ_end - 1]).unwrap_err(),
        CodecError::Truncated(Section::Occupancy)
    );
    assert_eq!(
        decode_payload(&good[..good.len() - 1]).unwrap_err(),
        CodecError::Truncated(Section::Attributes)
    );

    let mut bad = good.clone();
    bad.push(0);
    assert_eq!(decode_payload(&bad).unwrap_err(), CodecError::TrailingBytes(1));

    // Declared point count disagrees with the leaves in the occupancy stream.
    let mut bad = good.clone();
    bad[38..42].copy_from_slice(&(h.point_count + 1).to_le_bytes());
    assert!(matches!(
        decode_payload(&bad).unwrap_err(),
        CodecError::LeafCountMismatch { .. }
    ));

    // A node with no children.
    let mut bad = good.clone();
    bad[HEADER_LEN + 1] = 0;
    assert!(matches!(
        decode_payload(&bad).unwrap_err(),
        CodecError::OccupancyMismatch(_) | CodecError::LeafCountMismatch { .. }
    ));
    let mut bad = good.clone();
    bad[HEADER_LEN] = 0;
    assert_eq!(
        decode_payload(&bad).unwrap_err(),
        CodecError::OccupancyMismatch("occupied node without children")
    );
}

fn synth_tiles(points: usize) -> TileSet<f64> {
    let cfg = SynthConfig {
        point_count: points,
        frame_count: 1,
        ..SynthConfig::default()
    };
    let frame = synth_frame(&cfg, 0).unwrap();
    tile_frame(&frame, &cfg.sensor_poses).unwrap()
}

#[test]
fn size_grows_with_depth_on_synthetic_tile() {
    let tiles = synth_tiles(130_000);
    for tile in &tiles.tiles {
        let sizes: Vec<usize> = [6u8, 7, 9]
            .iter()
            .map(|&d| encode_tile(&tile.points, q(d, 75), 0, tile.tile_id).unwrap().size_bytes())
            .collect();
        assert!(sizes[0] < sizes[1] && sizes[1] < sizes[2], "{sizes:?}");
    }
}

#[test]
fn adaptation_set_shape_and_metadata() {
    let tiles = synth_tiles(6_000);
    let set = build_adaptation_set(&tiles, &QualityLevel::default_ladder()).unwrap();
    assert_eq!(set.representation_count(), 9);
    let meta = set.metadata();
    assert_eq!(meta.tile_count(), 3);
    for (tile, info) in set.tiles.iter().zip(meta.tiles()) {
        assert_eq!(tile.tile_id, info.tile_id);
        assert_eq!(info.levels.len(), 3);
        for (rep, level) in tile.representations.iter().zip(&info.levels) {
            assert_eq!(level.size_bytes as usize, rep.size_bytes());
            assert_eq!(level.quality, rep.quality);
        }
    }
    // Concurrent build equals sequential encodes.
    for tile in &set.tiles {
        for rep in &tile.representations {
            let seq = encode_tile(&tiles.tile(tile.tile_id).unwrap().points, rep.quality, 0, tile.tile_id).unwrap();
            assert_eq!(&seq, rep);
        }
    }
}

#[test]
fn adaptation_set_single_representation() {
    let frame = PointCloudFrame::from_points(0, 0.0, vec![point(0.0, 0.0, 0.0, [1, 2, 3])]).unwrap();
    let tiles = tile_frame(&frame, &[crate::pccore::SensorPose::<f64>::identity(0)]).unwrap();
    let set = build_adaptation_set(&tiles, &[q(6, 75)]).unwrap();
    assert_eq!(set.representation_count(), 1);
    assert_eq!(set.metadata().tile_count(), 1);
}

#[test]
fn adaptation_set_rejects_bad_ladders() {
    let tiles = synth_tiles(500);
    assert_eq!(
        build_adaptation_set(&tiles, &[]).unwrap_err(),
        AdaptationSetError::NoQualities
    );
    assert_eq!(
        build_adaptation_set(&tiles, &[q(7, 75), q(6, 75)]).unwrap_err(),
        AdaptationSetError::QualitiesNotIncreasing
    );
}

#[test]
fn full_encode_matches_tile_encode_for_one_sensor() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frame = PointCloudFrame::from_points(2, 0.0, random_cloud(&mut rng, 1_000, 1.0)).unwrap();
    assert_eq!(
        encode_full(&frame, q(7, 75)).unwrap(),
        encode_tile(&frame.points, q(7, 75), 2, 0).unwrap()
    );
}

#[test]
fn full_cloud_bound_and_tiling_overhead() {
    let cfg = SynthConfig {
        point_count: 30_000,
        frame_count: 1,
        ..SynthConfig::default()
    };
    let frame = synth_frame(&cfg, 0).unwrap();
    let full = encode_full(&frame, q(9, 75)).unwrap();
    let decoded = decode_full(&full).unwrap();
    assert_eq!(decoded.len(), full.point_count as usize);
    // Subsample the input for the quadratic oracle; the decoded set stays complete.
    let sample: Vec<Point> = frame.points.iter().step_by(15).copied().collect();
    assert!(directed_hausdorff(&sample, &decoded) <= half_diagonal(&full.payload));

    let tiles = tile_frame(&frame, &cfg.sensor_poses).unwrap();
    for depth in [6u8, 7, 9] {
        let full = encode_full(&frame, q(depth, 75)).unwrap().size_bytes() as f64;
        let tiled: usize = tiles
            .tiles
            .iter()
            .map(|t| encode_tile(&t.points, q(depth, 75), 0, t.tile_id).unwrap().size_bytes())
            .sum();
        let ratio = tiled as f64 / full;
        assert!((0.85..=1.15).contains(&ratio), "depth {depth}: ratio {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn roundtrip_bound_all_depths(seed in any::<u64>(), n in 1usize..200, depth in 1u8..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_cloud(&mut rng, n, 2.0);
        let rep = encode_tile(&pts, q(depth, 75), 0, 0).unwrap();
        let out = decode_tile(&rep).unwrap();
        prop_assert_eq!(out.len(), rep.point_count as usize);
        prop_assert!(symmetric_hausdorff(&pts, &out) <= half_diagonal(&rep.payload));
    }

    #[test]
    fn size_monotone_in_depth(seed in any::<u64>(), n in 1usize..400) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_cloud(&mut rng, n, 1.0);
        let sizes: Vec<usize> = (1..=12)
            .map(|d| encode_tile(&pts, q(d, 75), 0, 0).unwrap().size_bytes())
            .collect();
        prop_assert!(sizes.windows(2).all(|w| w[0] < w[1]));
    }
}
