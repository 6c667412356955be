//! Fixed-interval temporal sampling, semantic-aware keyframe extraction,
//! and frame-grid composition.
//!
//! Extraction keeps the first frame, then scans forward comparing each
//! frame's embedding against the latest kept keyframe; a frame is kept only
//! when the similarity drops below the threshold. Skipped frames change no
//! state. The final frame is always kept so the set covers the whole clip.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embed::{cosine_similarity, resolve_pixels, EmbedError, ImageEmbedder};
use crate::model::{FrameRef, FrameSequence, KeyframeSet, PixelSource, RgbBuffer, Timestamp};

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("embedding failed at frame {frame_index}: {source}")]
    Embed {
        frame_index: usize,
        #[source]
        source: EmbedError,
    },
    #[error("frame source failed at {timestamp}: {message}")]
    FrameSource {
        timestamp: Timestamp,
        message: String,
    },
    #[error("invalid keyframe threshold {0}; must be in (0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid sample interval; must be > 0")]
    InvalidInterval,
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    HeterogeneousDimensions {
        index: usize,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("{count} frames exceed the {rows}x{cols} grid capacity")]
    TooManyFrames { count: usize, rows: u32, cols: u32 },
    #[error("cannot compose a grid from zero frames")]
    EmptyGrid,
    #[error("pixels unavailable for frame {index}: {source}")]
    Pixels {
        index: usize,
        #[source]
        source: EmbedError,
    },
    #[error("invalid frame sequence: {0}")]
    InvalidSequence(String),
}

/// Montage layout: frames fill row-major, unfilled cells take `pad_color`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    pub pad_color: [u8; 3],
}

impl GridSpec {
    pub fn new(rows: u32, cols: u32, pad_color: [u8; 3]) -> Self {
        GridSpec {
            rows,
            cols,
            pad_color,
        }
    }

    /// Single-column layout used for fast captioning montages.
    pub fn vertical(rows: u32) -> Self {
        GridSpec {
            rows,
            cols: 1,
            pad_color: [0, 0, 0],
        }
    }

    pub fn capacity(&self) -> usize {
        self.rows as usize * self.cols as usize
    }
}

/// Resolves a requested timestamp to frame pixels for one video.
pub trait FrameSource {
    fn frame_at(&self, timestamp: Timestamp) -> Result<PixelSource, String>;
}

/// Frame source over a directory of pre-extracted images named
/// `<millis>.png` with the millisecond timestamp zero-padded to eight
/// digits. A request resolves to the newest frame at or before the
/// requested time, clamping to the earliest frame.
pub struct DirFrameSource {
    frames: BTreeMap<u64, PathBuf>,
}

impl DirFrameSource {
    pub fn open(dir: &Path) -> Result<Self, KeyframeError> {
        let mut frames = BTreeMap::new();
        let entries = fs::read_dir(dir).map_err(|e| KeyframeError::FrameSource {
            timestamp: Timestamp::ZERO,
            message: format!("{}: {e}", dir.display()),
        })?;
        for entry in entries {
            let entry = entry.map_err(|e| KeyframeError::FrameSource {
                timestamp: Timestamp::ZERO,
                message: e.to_string(),
            })?;
            let path = entry.path();
            let stem = path.file_stem().and_then(|s| s.to_str());
            if path.extension().and_then(|e| e.to_str()) == Some("png") {
                if let Some(ms) = stem.and_then(|s| s.parse::<u64>().ok()) {
                    frames.insert(ms, path);
                }
            }
        }
        if frames.is_empty() {
            return Err(KeyframeError::FrameSource {
                timestamp: Timestamp::ZERO,
                message: format!("no frame images in {}", dir.display()),
            });
        }
        Ok(DirFrameSource { frames })
    }

    pub fn frame_file_name(timestamp: Timestamp) -> String {
        format!("{:08}.png", timestamp.as_millis())
    }
}

impl FrameSource for DirFrameSource {
    fn frame_at(&self, timestamp: Timestamp) -> Result<PixelSource, String> {
        let at_or_before = self
            .frames
            .range(..=timestamp.as_millis())
            .next_back()
            .or_else(|| self.frames.iter().next());
        match at_or_before {
            Some((_, path)) => Ok(PixelSource::Path(path.clone())),
            None => Err("empty frame source".into()),
        }
    }
}

/// Sample frames at `0, interval, 2*interval, ...` up to the duration,
/// appending the frame at the exact duration when it is not already the
/// last sample. Indices are contiguous from 0.
pub fn sample_frames(
    video_id: &str,
    duration: Timestamp,
    source: &dyn FrameSource,
    interval: Timestamp,
) -> Result<FrameSequence, KeyframeError> {
    if interval.as_millis() == 0 {
        return Err(KeyframeError::InvalidInterval);
    }
    let mut timestamps = Vec::new();
    let mut t = 0u64;
    while t <= duration.as_millis() {
        timestamps.push(Timestamp::from_millis(t));
        t += interval.as_millis();
    }
    if timestamps.last().copied() != Some(duration) {
        timestamps.push(duration);
    }

    let mut frames = Vec::with_capacity(timestamps.len());
    for (index, &timestamp) in timestamps.iter().enumerate() {
        let pixels = source
            .frame_at(timestamp)
            .map_err(|message| KeyframeError::FrameSource { timestamp, message })?;
        frames.push(FrameRef::new(video_id, index, timestamp, Some(pixels)));
    }
    FrameSequence::new(video_id, duration, frames).map_err(KeyframeError::InvalidSequence)
}

/// Semantic-aware keyframe extraction.
///
/// Starts from the first frame; a scanned frame joins the set iff its
/// similarity to the latest keyframe is strictly below the threshold. The
/// last frame is appended unconditionally if not already present.
/// Embeddings are computed at most once per frame.
pub fn extract_keyframes(
    frames: &FrameSequence,
    embedder: &dyn ImageEmbedder,
    threshold: f64,
) -> Result<KeyframeSet, KeyframeError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(KeyframeError::InvalidThreshold(threshold));
    }
    let embed = |frame: &FrameRef| {
        embedder
            .embed_image(frame)
            .map_err(|source| KeyframeError::Embed {
                frame_index: frame.index,
                source,
            })
    };

    let mut keyframes = vec![frames.frames[0].clone()];
    let mut latest_embedding = embed(&frames.frames[0])?;
    for frame in &frames.frames[1..] {
        let candidate = embed(frame)?;
        let similarity = cosine_similarity(&candidate, &latest_embedding).map_err(|source| {
            KeyframeError::Embed {
                frame_index: frame.index,
                source,
            }
        })?;
        if similarity < threshold {
            keyframes.push(frame.clone());
            latest_embedding = candidate;
        }
        // Skipped frames leave the latest keyframe untouched.
    }
    let last = frames.frames.last().unwrap();
    if keyframes.last().unwrap().index != last.index {
        keyframes.push(last.clone());
    }

    Ok(KeyframeSet {
        video_id: frames.video_id.clone(),
        keyframes,
        source_count: frames.len(),
    })
}

/// Compose frames into a row-major grid, byte-copying each frame into its
/// cell and filling unused cells with the pad color. All frames must share
/// one dimension.
pub fn compose_grid(frames: &[FrameRef], spec: &GridSpec) -> Result<RgbBuffer, KeyframeError> {
    if frames.is_empty() {
        return Err(KeyframeError::EmptyGrid);
    }
    if frames.len() > spec.capacity() {
        return Err(KeyframeError::TooManyFrames {
            count: frames.len(),
            rows: spec.rows,
            cols: spec.cols,
        });
    }

    let mut buffers = Vec::with_capacity(frames.len());
    for frame in frames {
        let pixels = resolve_pixels(frame).map_err(|source| KeyframeError::Pixels {
            index: frame.index,
            source,
        })?;
        buffers.push(pixels);
    }
    let (w, h) = (buffers[0].width, buffers[0].height);
    for (i, buf) in buffers.iter().enumerate() {
        if buf.width != w || buf.height != h {
            return Err(KeyframeError::HeterogeneousDimensions {
                index: frames[i].index,
                got_w: buf.width,
                got_h: buf.height,
                want_w: w,
                want_h: h,
            });
        }
    }

    let out_w = spec.cols * w;
    let out_h = spec.rows * h;
    let mut data = Vec::with_capacity(out_w as usize * out_h as usize * 3);
    for _ in 0..out_w as usize * out_h as usize {
        data.extend_from_slice(&spec.pad_color);
    }
    let row_bytes = w as usize * 3;
    let out_row_bytes = out_w as usize * 3;
    for (cell, buf) in buffers.iter().enumerate() {
        let cell_row = cell / spec.cols as usize;
        let cell_col = cell % spec.cols as usize;
        for y in 0..h as usize {
            let src = y * row_bytes;
            let dst = (cell_row * h as usize + y) * out_row_bytes + cell_col * row_bytes;
            data[dst..dst + row_bytes].copy_from_slice(&buf.data[src..src + row_bytes]);
        }
    }
    RgbBuffer::new(out_w, out_h, data).map_err(KeyframeError::InvalidSequence)
}

/// Crop one grid cell back out of a composed grid. Inverse of
/// [`compose_grid`] for filled cells.
pub fn crop_cell(grid: &RgbBuffer, spec: &GridSpec, cell: usize, w: u32, h: u32) -> RgbBuffer {
    let cell_row = cell / spec.cols as usize;
    let cell_col = cell % spec.cols as usize;
    let row_bytes = w as usize * 3;
    let grid_row_bytes = grid.width as usize * 3;
    let mut data = Vec::with_capacity(row_bytes * h as usize);
    for y in 0..h as usize {
        let src = (cell_row * h as usize + y) * grid_row_bytes + cell_col * row_bytes;
        data.extend_from_slice(&grid.data[src..src + row_bytes]);
    }
    RgbBuffer {
        width: w,
        height: h,
        data,
    }
}

/// Evenly spaced frame picks: indices `round(j * (T-1) / (n-1))` for
/// `j = 0..n`. A single pick takes index 0; short sequences repeat frames.
pub fn uniform_sample(frames: &FrameSequence, n: usize) -> Vec<FrameRef> {
    assert!(n > 0, "uniform_sample requires n > 0");
    let t = frames.len();
    (0..n)
        .map(|j| {
            let index = if n == 1 {
                0
            } else {
                ((j as f64) * ((t - 1) as f64) / ((n - 1) as f64)).round() as usize
            };
            frames.frames[index.min(t - 1)].clone()
        })
        .collect()
}

/// Write a composed grid as a PNG file.
pub fn write_png(buf: &RgbBuffer, path: &Path) -> Result<(), KeyframeError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| KeyframeError::FrameSource {
            timestamp: Timestamp::ZERO,
            message: e.to_string(),
        })?;
    }
    image::save_buffer_with_format(
        path,
        &buf.data,
        buf.width,
        buf.height,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| KeyframeError::FrameSource {
        timestamp: Timestamp::ZERO,
        message: format!("{}: {e}", path.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::MockImageEmbedder;

    struct SolidSource;

    impl FrameSource for SolidSource {
        fn frame_at(&self, timestamp: Timestamp) -> Result<PixelSource, String> {
            let shade = (timestamp.as_millis() / 1000 % 256) as u8;
            Ok(PixelSource::Buffer(RgbBuffer::solid(
                2,
                2,
                [shade, shade, shade],
            )))
        }
    }

    fn secs(frames: &FrameSequence) -> Vec<f64> {
        frames
            .frames
            .iter()
            .map(|f| f.timestamp_s.as_secs_f64())
            .collect()
    }

    #[test]
    fn sampling_hits_exact_multiples_and_keeps_endpoint() {
        let seq = sample_frames(
            "v",
            Timestamp::from_secs(10),
            &SolidSource,
            Timestamp::from_secs(2),
        )
        .unwrap();
        assert_eq!(secs(&seq), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn sampling_appends_forced_final_frame() {
        let seq = sample_frames(
            "v",
            Timestamp::from_secs(9),
            &SolidSource,
            Timestamp::from_secs(2),
        )
        .unwrap();
        assert_eq!(secs(&seq), vec![0.0, 2.0, 4.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn sampling_degenerate_short_video() {
        let seq = sample_frames(
            "v",
            Timestamp::from_secs(1),
            &SolidSource,
            Timestamp::from_secs(2),
        )
        .unwrap();
        assert_eq!(secs(&seq), vec![0.0, 1.0]);
    }

    fn sequence_of_buffers(buffers: Vec<RgbBuffer>) -> FrameSequence {
        let frames: Vec<FrameRef> = buffers
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                FrameRef::new(
                    "v",
                    i,
                    Timestamp::from_secs(2 * i as u64),
                    Some(PixelSource::Buffer(b)),
                )
            })
            .collect();
        let duration = frames.last().unwrap().timestamp_s;
        FrameSequence::new("v", duration, frames).unwrap()
    }

    #[test]
    fn single_frame_sequence_yields_itself() {
        let seq = sequence_of_buffers(vec![RgbBuffer::solid(2, 2, [1, 2, 3])]);
        let set = extract_keyframes(&seq, &MockImageEmbedder::new(8, 1), 0.85).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.keyframes[0].index, 0);
        assert_eq!(set.source_count, 1);
    }

    #[test]
    fn identical_frames_collapse_to_first_and_forced_last() {
        let seq = sequence_of_buffers(vec![RgbBuffer::solid(2, 2, [9, 9, 9]); 6]);
        let set = extract_keyframes(&seq, &MockImageEmbedder::new(8, 1), 0.85).unwrap();
        let indices: Vec<usize> = set.keyframes.iter().map(|f| f.index).collect();
        assert_eq!(indices, vec![0, 5]);
    }

    #[test]
    fn first_and_last_always_present() {
        let buffers: Vec<RgbBuffer> = (0..10)
            .map(|i| RgbBuffer::solid(2, 2, [i as u8 * 20, 0, 0]))
            .collect();
        let seq = sequence_of_buffers(buffers);
        for threshold in [0.5, 0.7, 0.85, 0.99] {
            let set = extract_keyframes(&seq, &MockImageEmbedder::new(8, 1), threshold).unwrap();
            assert_eq!(set.keyframes.first().unwrap().index, 0);
            assert_eq!(set.keyframes.last().unwrap().index, 9);
        }
    }

    #[test]
    fn grid_identity_for_single_cell() {
        let buf = RgbBuffer::solid(3, 2, [7, 8, 9]);
        let frame = FrameRef::new(
            "v",
            0,
            Timestamp::ZERO,
            Some(PixelSource::Buffer(buf.clone())),
        );
        let grid = compose_grid(&[frame], &GridSpec::new(1, 1, [0, 0, 0])).unwrap();
        assert_eq!(grid, buf);
    }

    #[test]
    fn vertical_grid_pads_the_unfilled_cell() {
        let frames: Vec<FrameRef> = (0..3)
            .map(|i| {
                FrameRef::new(
                    "v",
                    i,
                    Timestamp::from_secs(i as u64),
                    Some(PixelSource::Buffer(RgbBuffer::solid(
                        2,
                        2,
                        [i as u8 + 1, 0, 0],
                    ))),
                )
            })
            .collect();
        let spec = GridSpec::new(4, 1, [50, 60, 70]);
        let grid = compose_grid(&frames, &spec).unwrap();
        assert_eq!(grid.width, 2);
        assert_eq!(grid.height, 8);
        let pad_cell = crop_cell(&grid, &spec, 3, 2, 2);
        assert_eq!(pad_cell, RgbBuffer::solid(2, 2, [50, 60, 70]));
    }

    #[test]
    fn grid_rejects_heterogeneous_and_overflow_inputs() {
        let small = FrameRef::new(
            "v",
            0,
            Timestamp::ZERO,
            Some(PixelSource::Buffer(RgbBuffer::solid(2, 2, [1, 1, 1]))),
        );
        let big = FrameRef::new(
            "v",
            1,
            Timestamp::from_secs(1),
            Some(PixelSource::Buffer(RgbBuffer::solid(3, 2, [1, 1, 1]))),
        );
        assert!(matches!(
            compose_grid(&[small.clone(), big], &GridSpec::new(2, 1, [0, 0, 0])),
            Err(KeyframeError::HeterogeneousDimensions { .. })
        ));
        assert!(matches!(
            compose_grid(
                &[small.clone(), small.clone(), small],
                &GridSpec::new(1, 2, [0, 0, 0])
            ),
            Err(KeyframeError::TooManyFrames { .. })
        ));
    }

    fn sequence_of_len(t: usize) -> FrameSequence {
        sequence_of_buffers(
            (0..t)
                .map(|i| RgbBuffer::solid(1, 1, [i as u8, 0, 0]))
                .collect(),
        )
    }

    #[test]
    fn uniform_sample_identity_when_counts_match() {
        let seq = sequence_of_len(16);
        let picks = uniform_sample(&seq, 16);
        let indices: Vec<usize> = picks.iter().map(|f| f.index).collect();
        assert_eq!(indices, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_sample_spreads_evenly() {
        // round(j * 30 / 15) = 2j
        let seq = sequence_of_len(31);
        let picks = uniform_sample(&seq, 16);
        let indices: Vec<usize> = picks.iter().map(|f| f.index).collect();
        assert_eq!(indices, (0..16).map(|j| 2 * j).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_sample_repeats_short_sequences() {
        let seq = sequence_of_len(1);
        let picks = uniform_sample(&seq, 4);
        let indices: Vec<usize> = picks.iter().map(|f| f.index).collect();
        assert_eq!(indices, vec![0, 0, 0, 0]);
    }
}
