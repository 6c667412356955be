//! Cross-cutting property tests: serde round-trips, similarity bounds,
//! keyframe threshold monotonicity, and grid inversion.

use diffsw_core::embed::{cosine_similarity, EmbeddingVector, ScriptedImageEmbedder};
use diffsw_core::keyframe::{compose_grid, crop_cell, extract_keyframes, GridSpec};
use diffsw_core::model::{
    BundleStatus, CaptionBundle, DifferentialCaption, FrameRef, FrameSequence, PixelSource,
    RgbBuffer, Timestamp, UsageStats,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn timestamp_strategy() -> impl Strategy<Value = u64> {
    0u64..600_000
}

fn bundle_strategy() -> impl Strategy<Value = CaptionBundle> {
    (
        1usize..12,
        "[a-z0-9-]{1,16}",
        any::<bool>(),
        timestamp_strategy(),
        1u64..5_000,
    )
        .prop_flat_map(|(n, video_id, complete, t0, step)| {
            let texts = proptest::collection::vec("[ -~]{1,40}", n);
            (
                Just(n),
                Just(video_id),
                Just(complete),
                Just(t0),
                Just(step),
                texts,
            )
        })
        .prop_map(|(n, video_id, complete, t0, step, texts)| {
            let timestamps: Vec<Timestamp> = (0..n as u64)
                .map(|i| Timestamp::from_millis(t0 + i * step))
                .collect();
            let captions: Vec<DifferentialCaption> = texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| DifferentialCaption {
                    keyframe_index: i,
                    timestamp_s: timestamps[i],
                    text: format!("c{text}"),
                    is_initial: i == 0,
                })
                .collect();
            CaptionBundle {
                video_id,
                keyframe_timestamps: timestamps,
                differential_captions: captions,
                summary: complete.then(|| "a summary of the video".to_string()),
                status: if complete {
                    BundleStatus::Complete
                } else {
                    BundleStatus::DiffsComplete
                },
                usage: UsageStats::default(),
                schema_version: 1,
                source_tag: None,
            }
        })
}

proptest! {
    /// Any valid bundle serializes to one JSONL line and parses back
    /// structurally equal.
    #[test]
    fn bundle_round_trips_through_jsonl(bundle in bundle_strategy()) {
        prop_assert!(diffsw_core::model::validate_bundle(&bundle).is_empty());
        let line = serde_json::to_string(&bundle).unwrap();
        prop_assert!(!line.contains('\n'));
        let back: CaptionBundle = serde_json::from_str(&line).unwrap();
        prop_assert_eq!(back, bundle);
    }

    /// |cos(a, b)| <= 1 + 1e-9 over arbitrary non-degenerate vectors.
    #[test]
    fn cosine_stays_within_unit_bounds(
        a in proptest::collection::vec(-1e6f64..1e6, 2..16),
        b in proptest::collection::vec(-1e6f64..1e6, 2..16),
    ) {
        let dim = a.len().min(b.len());
        let va = EmbeddingVector::new(a[..dim].to_vec());
        let vb = EmbeddingVector::new(b[..dim].to_vec());
        if va.l2_norm() == 0.0 || vb.l2_norm() == 0.0 {
            return Ok(());
        }
        let sim = cosine_similarity(&va, &vb).unwrap();
        prop_assert!(sim.abs() <= 1.0 + 1e-9);
        let reversed = cosine_similarity(&vb, &va).unwrap();
        prop_assert!((sim - reversed).abs() < 1e-12, "symmetry");
    }

    /// Positive scaling never changes direction.
    #[test]
    fn cosine_is_scale_invariant(
        v in proptest::collection::vec(-1e3f64..1e3, 2..16),
        c in 1e-3f64..1e3,
    ) {
        let a = EmbeddingVector::new(v.clone());
        if a.l2_norm() == 0.0 {
            return Ok(());
        }
        let scaled = EmbeddingVector::new(v.iter().map(|x| x * c).collect());
        let sim = cosine_similarity(&a, &scaled).unwrap();
        prop_assert!((sim - 1.0).abs() < 1e-9);
    }
}

fn random_unit_vectors(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<EmbeddingVector> {
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            EmbeddingVector::new(v).normalized().unwrap()
        })
        .collect()
}

fn synthetic_sequence(rng: &mut ChaCha8Rng, t: usize) -> (FrameSequence, ScriptedImageEmbedder) {
    // Mix of fresh vectors and near-copies of the previous frame so both
    // branches of the extractor fire.
    let dim = 8;
    let mut vectors: Vec<EmbeddingVector> = Vec::with_capacity(t);
    for i in 0..t {
        if i > 0 && rng.random_bool(0.4) {
            vectors.push(vectors[i - 1].clone());
        } else {
            vectors.push(random_unit_vectors(rng, 1, dim).pop().unwrap());
        }
    }
    let frames: Vec<FrameRef> = (0..t)
        .map(|i| {
            FrameRef::new(
                "v",
                i,
                Timestamp::from_secs(2 * i as u64),
                Some(PixelSource::Buffer(RgbBuffer::solid(1, 1, [i as u8, 0, 0]))),
            )
        })
        .collect();
    let duration = frames.last().unwrap().timestamp_s;
    (
        FrameSequence::new("v", duration, frames).unwrap(),
        ScriptedImageEmbedder { vectors },
    )
}

/// Keyframe count shrinks (weakly) as the threshold tightens, over seeded
/// random embedding sequences — lower thresholds admit fewer frames.
#[test]
fn keyframe_count_is_weakly_monotone_in_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(90210);
    let thresholds = [0.99, 0.9, 0.7, 0.5];
    for _ in 0..60 {
        let t = rng.random_range(2..40);
        let (frames, embedder) = synthetic_sequence(&mut rng, t);
        let counts: Vec<usize> = thresholds
            .iter()
            .map(|&th| extract_keyframes(&frames, &embedder, th).unwrap().len())
            .collect();
        for pair in counts.windows(2) {
            assert!(
                pair[1] <= pair[0],
                "tightening the threshold grew the keyframe set: {counts:?}"
            );
        }
    }
}

/// Cropping each grid cell recovers its source frame byte-exactly.
#[test]
fn grid_compose_then_crop_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    for _ in 0..25 {
        let rows = rng.random_range(1..5u32);
        let cols = rng.random_range(1..5u32);
        let w = rng.random_range(1..6u32);
        let h = rng.random_range(1..6u32);
        let count = rng.random_range(1..=(rows * cols) as usize);
        let frames: Vec<FrameRef> = (0..count)
            .map(|i| {
                let mut data = vec![0u8; (w * h * 3) as usize];
                rng.fill(&mut data[..]);
                FrameRef::new(
                    "v",
                    i,
                    Timestamp::from_secs(i as u64),
                    Some(PixelSource::Buffer(RgbBuffer::new(w, h, data).unwrap())),
                )
            })
            .collect();
        let spec = GridSpec::new(rows, cols, [9, 9, 9]);
        let grid = compose_grid(&frames, &spec).unwrap();
        assert_eq!((grid.width, grid.height), (cols * w, rows * h));
        for (i, frame) in frames.iter().enumerate() {
            let cell = crop_cell(&grid, &spec, i, w, h);
            let Some(PixelSource::Buffer(expected)) = &frame.pixels else {
                unreachable!()
            };
            assert_eq!(&cell, expected, "cell {i}");
        }
    }
}
