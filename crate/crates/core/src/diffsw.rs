//! The differential sliding-window captioning engine and the derived
//! operating modes: sub-clip re-captioning, fast montage captioning, and
//! summarize-only.
//!
//! Within one video the loop is strictly sequential: each window consumes
//! the previous window's caption. The engine checkpoints to the store after
//! every vision call, so an interrupted run resumes at the last durable
//! caption instead of re-billing completed work.

use thiserror::Error;

use crate::backends::{BackendClient, BackendError, BackendKind, LlmRequest, VlmRequest};
use crate::embed::{resolve_pixels, EmbedError};
use crate::keyframe::{compose_grid, GridSpec, KeyframeError};
use crate::model::{
    BundleStatus, CaptionBundle, DifferentialCaption, KeyframeSet, RgbBuffer, SourceTag, Timestamp,
};
use crate::promptkit::{
    render_differential_prompt, render_fast_prompt, render_first_frame_prompt,
    render_summary_prompt, DiffPromptContext, PromptError, SummaryPromptContext, TemplateSet,
};
use crate::store::{CaptionStore, StoreError};

#[derive(Debug, Error)]
pub enum DiffswError {
    #[error("backend failure for video {video_id} at keyframe {keyframe_index}: {source}")]
    Backend {
        video_id: String,
        keyframe_index: usize,
        #[source]
        source: BackendError,
    },
    #[error("summary backend failure for video {video_id}: {source}")]
    SummaryBackend {
        video_id: String,
        #[source]
        source: BackendError,
    },
    #[error("keyframe pixels missing for video {video_id} at keyframe {keyframe_index}: {source}")]
    FrameMissing {
        video_id: String,
        keyframe_index: usize,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Grid(#[from] KeyframeError),
    #[error("clip range [{start}, {end}] out of bounds for {len} keyframes")]
    RangeOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("bundle for video {0} has no differential captions yet")]
    BundleIncomplete(String),
    #[error("differential captions must be non-empty, sorted, and gap-free: {0}")]
    UnorderedCaptions(String),
    #[error("empty keyframe set for video {0}")]
    EmptyKeyframes(String),
}

/// Generation knobs for the two caption stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptionOptions {
    pub temperature: f64,
    pub diff_max_tokens: u32,
    pub summary_max_tokens: u32,
}

impl Default for CaptionOptions {
    fn default() -> Self {
        CaptionOptions {
            temperature: 0.2,
            diff_max_tokens: 1024,
            summary_max_tokens: 2048,
        }
    }
}

/// Whether sub-clip summary prompts carry original timestamps or timestamps
/// shifted so the clip starts at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampMode {
    Absolute,
    ClipRelative,
}

/// Inclusive keyframe index range within a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipRange {
    pub start: usize,
    pub end: usize,
}

impl ClipRange {
    pub fn new(start: usize, end: usize) -> Self {
        ClipRange { start, end }
    }
}

/// Run the differential sliding-window pipeline over one keyframe set.
///
/// Produces one differential caption per keyframe: position 0 from a
/// single-image standalone prompt, every later position from a two-image
/// window (previous keyframe, current keyframe) plus the previous caption
/// text, then one LLM call over all timestamped captions for the summary.
/// A bundle already complete in the store returns immediately with zero
/// backend calls; a partial bundle resumes at its first missing caption.
pub fn run_diffsw(
    keyframes: &KeyframeSet,
    backend: &BackendClient,
    templates: &TemplateSet,
    store: &CaptionStore,
    options: &CaptionOptions,
    source_tag: Option<SourceTag>,
) -> Result<CaptionBundle, DiffswError> {
    if keyframes.is_empty() {
        return Err(DiffswError::EmptyKeyframes(keyframes.video_id.clone()));
    }
    let video_id = keyframes.video_id.clone();
    let timestamps = keyframes.timestamps();

    let mut bundle = match store.load_bundle(&video_id)? {
        Some(existing) if existing.keyframe_timestamps == timestamps => {
            if existing.status == BundleStatus::Complete {
                return Ok(existing);
            }
            existing
        }
        // No usable record (absent, or stale keyframe layout): start fresh
        // and make the keyframe layout durable before the first call.
        _ => {
            let mut fresh = CaptionBundle::new_pending(&video_id, timestamps.clone());
            fresh.source_tag = source_tag;
            store.put_bundle(&fresh)?;
            fresh
        }
    };
    if bundle.source_tag.is_none() {
        bundle.source_tag = source_tag;
    }

    let n = keyframes.len();
    let mut prev_pixels: Option<RgbBuffer> = None;
    for index in bundle.differential_captions.len()..n {
        let frame = &keyframes.keyframes[index];
        let pixels = resolve_pixels(frame).map_err(|source| DiffswError::FrameMissing {
            video_id: video_id.clone(),
            keyframe_index: index,
            source,
        })?;

        let (prompt, images) = if index == 0 {
            let prompt = render_first_frame_prompt(0, frame.timestamp_s, &templates.first_frame)?;
            (prompt, vec![pixels.clone()])
        } else {
            let prev_frame = &keyframes.keyframes[index - 1];
            let prev = match prev_pixels.take() {
                Some(cached) => cached,
                None => resolve_pixels(prev_frame).map_err(|source| DiffswError::FrameMissing {
                    video_id: video_id.clone(),
                    keyframe_index: index - 1,
                    source,
                })?,
            };
            let ctx = DiffPromptContext {
                prev_frame_index: index - 1,
                cur_frame_index: index,
                prev_timestamp: prev_frame.timestamp_s,
                cur_timestamp: frame.timestamp_s,
                prev_differential_caption: bundle.differential_captions[index - 1].text.clone(),
            };
            let prompt = render_differential_prompt(&ctx, &templates.differential)?;
            (prompt, vec![prev, pixels.clone()])
        };
        prev_pixels = Some(pixels);

        let request = VlmRequest {
            images,
            prompt,
            max_tokens: options.diff_max_tokens,
            temperature: options.temperature,
        };
        let completion = backend
            .vlm_complete(&request)
            .map_err(|source| DiffswError::Backend {
                video_id: video_id.clone(),
                keyframe_index: index,
                source,
            })?;
        completion.record(&mut bundle.usage, BackendKind::Vlm);
        bundle.differential_captions.push(DifferentialCaption {
            keyframe_index: index,
            timestamp_s: frame.timestamp_s,
            text: completion.text,
            is_initial: index == 0,
        });
        if index == n - 1 {
            bundle.status = BundleStatus::DiffsComplete;
        }
        store.put_bundle(&bundle)?;
    }

    let entries: Vec<(Timestamp, String)> = bundle
        .differential_captions
        .iter()
        .map(|c| (c.timestamp_s, c.text.clone()))
        .collect();
    let summary = summarize(&entries, backend, templates, options, &video_id)?;
    summary.record(&mut bundle.usage, BackendKind::Llm);
    bundle.summary = Some(summary.text);
    bundle.status = BundleStatus::Complete;
    store.put_bundle(&bundle)?;
    Ok(bundle)
}

fn summarize(
    entries: &[(Timestamp, String)],
    backend: &BackendClient,
    templates: &TemplateSet,
    options: &CaptionOptions,
    video_id: &str,
) -> Result<crate::backends::Completion, DiffswError> {
    let ctx = SummaryPromptContext::new(entries.to_vec())?;
    let prompt = render_summary_prompt(&ctx, &templates.summary)?;
    backend
        .llm_complete(&LlmRequest {
            prompt,
            max_tokens: options.summary_max_tokens,
            temperature: options.temperature,
        })
        .map_err(|source| DiffswError::SummaryBackend {
            video_id: video_id.to_string(),
            source,
        })
}

/// Re-caption a keyframe range by re-summarizing its stored differential
/// captions: zero vision calls, exactly one LLM call. The caption at the
/// range start is reused verbatim; the summary template treats it as
/// scene-setting. Under [`TimestampMode::ClipRelative`] the entry
/// timestamps shift so the clip starts at zero.
pub fn recaption_clip(
    bundle: &CaptionBundle,
    range: ClipRange,
    backend: &BackendClient,
    templates: &TemplateSet,
    mode: TimestampMode,
    options: &CaptionOptions,
) -> Result<String, DiffswError> {
    if bundle.status < BundleStatus::DiffsComplete {
        return Err(DiffswError::BundleIncomplete(bundle.video_id.clone()));
    }
    let len = bundle.differential_captions.len();
    if range.start > range.end || range.end >= len {
        return Err(DiffswError::RangeOutOfBounds {
            start: range.start,
            end: range.end,
            len,
        });
    }
    let base = bundle.differential_captions[range.start].timestamp_s;
    let entries: Vec<(Timestamp, String)> = bundle.differential_captions[range.start..=range.end]
        .iter()
        .map(|c| {
            let timestamp = match mode {
                TimestampMode::Absolute => c.timestamp_s,
                TimestampMode::ClipRelative => c.timestamp_s.saturating_sub(base),
            };
            (timestamp, c.text.clone())
        })
        .collect();
    let summary = summarize(&entries, backend, templates, options, &bundle.video_id)?;
    Ok(summary.text)
}

/// One-shot captioning of the whole keyframe set: all keyframes stacked
/// into a single vertical montage, one vision call.
pub fn fast_caption(
    keyframes: &KeyframeSet,
    backend: &BackendClient,
    templates: &TemplateSet,
    options: &CaptionOptions,
) -> Result<String, DiffswError> {
    if keyframes.is_empty() {
        return Err(DiffswError::EmptyKeyframes(keyframes.video_id.clone()));
    }
    let spec = GridSpec::vertical(keyframes.len() as u32);
    let grid = compose_grid(&keyframes.keyframes, &spec)?;
    let prompt = render_fast_prompt(keyframes.len(), &templates.fast)?;
    let completion = backend
        .vlm_complete(&VlmRequest {
            images: vec![grid],
            prompt,
            max_tokens: options.summary_max_tokens,
            temperature: options.temperature,
        })
        .map_err(|source| DiffswError::Backend {
            video_id: keyframes.video_id.clone(),
            keyframe_index: 0,
            source,
        })?;
    Ok(completion.text)
}

/// Summarize an explicit list of differential captions (clip-summarizing
/// mode): the captions must be non-empty, sorted by keyframe index, and
/// gap-free. One LLM call.
pub fn summarize_only(
    diffs: &[DifferentialCaption],
    backend: &BackendClient,
    templates: &TemplateSet,
    options: &CaptionOptions,
) -> Result<String, DiffswError> {
    if diffs.is_empty() {
        return Err(DiffswError::UnorderedCaptions("empty input".into()));
    }
    for (pos, pair) in diffs.windows(2).enumerate() {
        if pair[1].keyframe_index != pair[0].keyframe_index + 1 {
            return Err(DiffswError::UnorderedCaptions(format!(
                "keyframe_index {} follows {} at position {}",
                pair[1].keyframe_index,
                pair[0].keyframe_index,
                pos + 1
            )));
        }
    }
    let entries: Vec<(Timestamp, String)> = diffs
        .iter()
        .map(|c| (c.timestamp_s, c.text.clone()))
        .collect();
    let summary = summarize(&entries, backend, templates, options, "(standalone)")?;
    Ok(summary.text)
}
