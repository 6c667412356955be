//! Shared domain types: frames, keyframe sets, differential captions, and
//! the persistent per-video annotation bundle.
//!
//! Timestamps are stored as integer milliseconds so that dedup and resume
//! logic never depends on float equality; they serialize as seconds (the
//! on-disk field stays `timestamp_s`) and render as seconds with exactly
//! three decimals inside prompts.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Current persistent record schema. Parsers reject anything newer.
pub const SCHEMA_VERSION: u32 = 1;

/// A point in time within a video, millisecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    /// Nearest millisecond; callers hand us second-granularity JSON values.
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1000.0).round().max(0.0) as u64)
    }

    pub fn from_secs(secs: u64) -> Self {
        Timestamp(secs * 1000)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Prompt-facing rendering: seconds with exactly three decimals.
    pub fn render_seconds(self) -> String {
        format!("{}.{:03}", self.0 / 1000, self.0 % 1000)
    }

    pub fn saturating_sub(self, other: Timestamp) -> Timestamp {
        Timestamp(self.0.saturating_sub(other.0))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_seconds())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_secs_f64())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let secs = f64::deserialize(deserializer)?;
        if !secs.is_finite() || secs < 0.0 {
            return Err(serde::de::Error::custom(
                "timestamp must be finite and >= 0",
            ));
        }
        Ok(Timestamp::from_secs_f64(secs))
    }
}

/// Raw interleaved RGB pixels. `data.len() == width * height * 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbBuffer {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, String> {
        if width == 0 || height == 0 {
            return Err(format!("invalid frame dimensions {width}x{height}"));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(format!(
                "pixel buffer length {} does not match {width}x{height} rgb8 ({expected})",
                data.len()
            ));
        }
        Ok(RgbBuffer {
            width,
            height,
            data,
        })
    }

    pub fn solid(width: u32, height: u32, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&color);
        }
        RgbBuffer {
            width,
            height,
            data,
        }
    }
}

/// Where a frame's pixels live: inline, or a lazily resolved image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PixelSource {
    Buffer(RgbBuffer),
    Path(PathBuf),
}

/// One timestamped frame of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRef {
    pub video_id: String,
    pub index: usize,
    pub timestamp_s: Timestamp,
    pub pixels: Option<PixelSource>,
}

impl FrameRef {
    pub fn new(
        video_id: impl Into<String>,
        index: usize,
        timestamp_s: Timestamp,
        pixels: Option<PixelSource>,
    ) -> Self {
        FrameRef {
            video_id: video_id.into(),
            index,
            timestamp_s,
            pixels,
        }
    }
}

/// Ordered, timestamped frames of one video.
///
/// Invariants: non-empty, indices contiguous from 0, timestamps strictly
/// increasing, last timestamp within the duration.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub video_id: String,
    pub duration_s: Timestamp,
    pub frames: Vec<FrameRef>,
}

impl FrameSequence {
    pub fn new(
        video_id: impl Into<String>,
        duration_s: Timestamp,
        frames: Vec<FrameRef>,
    ) -> Result<Self, String> {
        let video_id = video_id.into();
        if frames.is_empty() {
            return Err("frame sequence must not be empty".into());
        }
        for (i, frame) in frames.iter().enumerate() {
            if frame.index != i {
                return Err(format!(
                    "frame index {} at position {i} is not contiguous",
                    frame.index
                ));
            }
            if i > 0 && frame.timestamp_s <= frames[i - 1].timestamp_s {
                return Err(format!("timestamps not strictly increasing at index {i}"));
            }
        }
        if frames.last().unwrap().timestamp_s > duration_s {
            return Err("last frame timestamp exceeds duration".into());
        }
        Ok(FrameSequence {
            video_id,
            duration_s,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Sparse subset of a frame sequence that preserves semantic transitions.
///
/// Always contains the source's first and last frames and keeps source
/// frame order.
#[derive(Debug, Clone)]
pub struct KeyframeSet {
    pub video_id: String,
    pub keyframes: Vec<FrameRef>,
    /// Size of the originating frame sequence.
    pub source_count: usize,
}

impl KeyframeSet {
    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn timestamps(&self) -> Vec<Timestamp> {
        self.keyframes.iter().map(|f| f.timestamp_s).collect()
    }
}

/// Per-keyframe text describing the change since the previous keyframe.
/// Position 0 carries a standalone description instead (`is_initial`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialCaption {
    pub keyframe_index: usize,
    pub timestamp_s: Timestamp,
    pub text: String,
    pub is_initial: bool,
}

/// Lifecycle of a caption bundle in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleStatus {
    Pending,
    DiffsComplete,
    Complete,
}

impl fmt::Display for BundleStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BundleStatus::Pending => f.write_str("pending"),
            BundleStatus::DiffsComplete => f.write_str("diffs_complete"),
            BundleStatus::Complete => f.write_str("complete"),
        }
    }
}

/// Backend usage counters for one bundle. Monotone non-decreasing over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageStats {
    pub vlm_calls: u64,
    pub llm_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub retries: u64,
}

impl UsageStats {
    pub fn merge(&mut self, other: &UsageStats) {
        self.vlm_calls += other.vlm_calls;
        self.llm_calls += other.llm_calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.retries += other.retries;
    }
}

/// Video source provenance, carried from curation into the stored bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Panda,
    Pexels,
    Pixabay,
    Mixkit,
    Ego4d,
    Bdd100k,
    Other,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Panda => "panda",
            SourceTag::Pexels => "pexels",
            SourceTag::Pixabay => "pixabay",
            SourceTag::Mixkit => "mixkit",
            SourceTag::Ego4d => "ego4d",
            SourceTag::Bdd100k => "bdd100k",
            SourceTag::Other => "other",
        }
    }
}

/// The complete annotation record for one video: keyframe timestamps,
/// ordered differential captions, the summary caption, provenance, and
/// usage counters. This is the unit persisted to the store and the input
/// to sub-clip re-captioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionBundle {
    pub video_id: String,
    pub keyframe_timestamps: Vec<Timestamp>,
    pub differential_captions: Vec<DifferentialCaption>,
    pub summary: Option<String>,
    pub status: BundleStatus,
    pub usage: UsageStats,
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<SourceTag>,
}

impl CaptionBundle {
    /// Fresh pending bundle for a known keyframe layout.
    pub fn new_pending(video_id: impl Into<String>, keyframe_timestamps: Vec<Timestamp>) -> Self {
        CaptionBundle {
            video_id: video_id.into(),
            keyframe_timestamps,
            differential_captions: Vec::new(),
            summary: None,
            status: BundleStatus::Pending,
            usage: UsageStats::default(),
            schema_version: SCHEMA_VERSION,
            source_tag: None,
        }
    }
}

/// Check every bundle invariant. Returns an empty list iff the bundle is
/// consistent; each entry names one failed invariant. Total function.
pub fn validate_bundle(bundle: &CaptionBundle) -> Vec<String> {
    let mut violations = Vec::new();

    if bundle.status >= BundleStatus::DiffsComplete
        && bundle.differential_captions.len() != bundle.keyframe_timestamps.len()
    {
        violations.push(format!(
            "differential caption count {} does not match keyframe count {} for status {}",
            bundle.differential_captions.len(),
            bundle.keyframe_timestamps.len(),
            bundle.status
        ));
    }

    match (bundle.status, &bundle.summary) {
        (BundleStatus::Complete, None) => {
            violations.push("summary missing for status complete".into());
        }
        (BundleStatus::Pending | BundleStatus::DiffsComplete, Some(_)) => {
            violations.push(format!("summary present for status {}", bundle.status));
        }
        _ => {}
    }

    let mut sorted = true;
    let mut gap = false;
    for (pos, caption) in bundle.differential_captions.iter().enumerate() {
        if caption.keyframe_index != pos {
            if pos > 0
                && caption.keyframe_index < bundle.differential_captions[pos - 1].keyframe_index
            {
                sorted = false;
            } else {
                gap = true;
            }
        }
        if caption.is_initial != (caption.keyframe_index == 0) {
            violations.push(format!(
                "is_initial flag mismatch at keyframe_index {}",
                caption.keyframe_index
            ));
        }
        if caption.text.is_empty() {
            violations.push(format!(
                "empty caption text at keyframe_index {}",
                caption.keyframe_index
            ));
        }
    }
    if !sorted {
        violations.push("differential captions not sorted by keyframe_index".into());
    } else if gap {
        violations.push("gap in differential caption indices".into());
    }

    if !bundle
        .keyframe_timestamps
        .windows(2)
        .all(|pair| pair[0] < pair[1])
    {
        violations.push("keyframe timestamps not strictly increasing".into());
    }

    if bundle.differential_captions.len() > bundle.keyframe_timestamps.len() {
        violations.push(format!(
            "more differential captions ({}) than keyframes ({})",
            bundle.differential_captions.len(),
            bundle.keyframe_timestamps.len()
        ));
    }

    violations
}
