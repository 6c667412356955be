//! Synthetic corpus generation: procedurally colored frame images plus the
//! matching manifests. Exists so the whole pipeline can be exercised with
//! mock backends and no real video data — in tests, in the acceptance
//! suite, and for trying the CLI out locally.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curate::Candidate;
use crate::keyframe::DirFrameSource;
use crate::model::{RgbBuffer, SourceTag, Timestamp};
use crate::pipeline::VideoManifestEntry;

/// A generated corpus: frames on disk plus a caption manifest.
pub struct SyntheticCorpus {
    pub manifest_path: PathBuf,
    pub entries: Vec<VideoManifestEntry>,
}

/// Deterministic solid color for a (video, scene) pair.
fn scene_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()]
}

/// Generate `video_count` videos under `dir`. Each video is a handful of
/// solid-color scenes: frames within a scene are byte-identical (redundant
/// for the keyframe extractor), scene changes force new keyframes. Frames
/// land in `<dir>/frames/<video_id>/<ms>.png`; the manifest JSONL lands in
/// `<dir>/manifest.jsonl`.
pub fn generate_corpus(
    dir: &Path,
    video_count: usize,
    seed: u64,
) -> std::io::Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(video_count);

    for v in 0..video_count {
        let video_id = format!("synth-{v:04}");
        let duration_secs = rng.random_range(5..=21);
        let duration = Timestamp::from_secs(duration_secs);
        let frames_dir = dir.join("frames").join(&video_id);
        fs::create_dir_all(&frames_dir)?;

        // 2..=4 scenes split across the duration.
        let scene_count = rng.random_range(2..=4usize);
        let mut colors = Vec::with_capacity(scene_count);
        for _ in 0..scene_count {
            colors.push(scene_color(&mut rng));
        }
        let scene_len_ms = (duration.as_millis() / scene_count as u64).max(1);

        let mut t = 0u64;
        while t <= duration.as_millis() {
            let scene = ((t / scene_len_ms) as usize).min(scene_count - 1);
            let buf = RgbBuffer::solid(8, 8, colors[scene]);
            let path = frames_dir.join(DirFrameSource::frame_file_name(Timestamp::from_millis(t)));
            crate::keyframe::write_png(&buf, &path)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            t += 1000;
        }
        // Exact final frame so sampling's endpoint rule always resolves.
        if !duration.as_millis().is_multiple_of(1000) {
            let buf = RgbBuffer::solid(8, 8, colors[scene_count - 1]);
            let path = frames_dir.join(DirFrameSource::frame_file_name(duration));
            crate::keyframe::write_png(&buf, &path)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
        }

        entries.push(VideoManifestEntry {
            video_id,
            duration_s: duration,
            frames_dir,
            source_tag: Some(match v % 3 {
                0 => SourceTag::Pexels,
                1 => SourceTag::Pixabay,
                _ => SourceTag::Mixkit,
            }),
        });
    }

    let manifest_path = dir.join("manifest.jsonl");
    let mut file = fs::File::create(&manifest_path)?;
    for entry in &entries {
        writeln!(file, "{}", serde_json::to_string(entry)?)?;
    }
    Ok(SyntheticCorpus {
        manifest_path,
        entries,
    })
}

/// Generate a candidate manifest for curation tests: short captions drawn
/// from a small topic pool so some candidates collide semantically.
pub fn generate_candidates(count: usize, seed: u64) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = [
        "a dog",
        "a kite",
        "two hikers",
        "a barista",
        "a tram",
        "waves",
        "a violinist",
    ];
    let actions = [
        "drifts past",
        "circles",
        "rests near",
        "crosses",
        "works beside",
        "leans on",
    ];
    let places = [
        "the harbor",
        "a market",
        "tall grass",
        "the old bridge",
        "a rooftop",
        "the shore",
    ];
    (0..count)
        .map(|i| {
            let caption = format!(
                "{} {} {}",
                subjects[rng.random_range(0..subjects.len())],
                actions[rng.random_range(0..actions.len())],
                places[rng.random_range(0..places.len())]
            );
            Candidate {
                video_id: format!("cand-{i:04}"),
                duration_s: Timestamp::from_secs(rng.random_range(3..=180)),
                short_caption: caption,
                source_tag: SourceTag::Panda,
            }
        })
        .collect()
}
