//! Batch video-caption annotation pipeline built around differential
//! sliding-window captioning.
//!
//! The pipeline turns a corpus of pre-extracted video frames into dense,
//! temporally precise captions: candidates are deduplicated by short-caption
//! semantics, each video is sampled at a fixed interval, semantically
//! redundant frames are dropped, and a vision-language backend describes the
//! first keyframe standalone and every later keyframe as a delta from its
//! predecessor. A language backend then fuses the timestamped deltas into one
//! summary caption. Stored deltas can be re-summarized for any sub-clip
//! without touching the vision backend again.
//!
//! All embedding/VLM/LLM access goes through pluggable backends, so the whole
//! system runs deterministically against the bundled mocks.

pub mod backends;
pub mod config;
pub mod curate;
pub mod diffsw;
pub mod embed;
pub mod keyframe;
pub mod model;
pub mod pipeline;
pub mod promptkit;
pub mod store;
pub mod synth;
pub(crate) mod util;
