//! Corpus curation: the duration gate and the pool-based semantic dedup
//! filter.
//!
//! The filter is order-sensitive by design: each candidate is compared
//! against the embeddings of everything accepted before it, and accepted
//! embeddings join the pool in arrival order. Decisions are therefore only
//! reproducible for a deterministic input order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine_similarity, EmbedError, EmbeddingVector, TextEmbedder};
use crate::model::{SourceTag, Timestamp};

#[derive(Debug, Error)]
pub enum CurateError {
    #[error("embedding failed for video {video_id}: {source}")]
    Embed {
        video_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("invalid dedup threshold {0}; must be in (0, 1]")]
    InvalidThreshold(f64),
}

/// One raw corpus candidate: a video plus its one-sentence short caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub video_id: String,
    pub duration_s: Timestamp,
    pub short_caption: String,
    pub source_tag: SourceTag,
}

/// Accepted-video embedding pool the dedup filter compares against.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub entries: Vec<(String, EmbeddingVector)>,
    pub threshold: f64,
}

impl CandidatePool {
    pub fn new(threshold: f64) -> Result<Self, CurateError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(CurateError::InvalidThreshold(threshold));
        }
        Ok(CandidatePool {
            entries: Vec::new(),
            threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Max similarity of `vector` against the current pool; `None` while
    /// the pool is empty.
    pub fn max_similarity(&self, vector: &EmbeddingVector) -> Result<Option<f64>, EmbedError> {
        let mut max: Option<f64> = None;
        for (_, pooled) in &self.entries {
            let sim = cosine_similarity(vector, pooled)?;
            max = Some(max.map_or(sim, |m| m.max(sim)));
        }
        Ok(max)
    }
}

/// Per-candidate outcome of the semantic filter, in processing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub video_id: String,
    pub accepted: bool,
    pub max_similarity: Option<f64>,
}

/// Keep candidates whose duration does not exceed `max_duration`
/// (inclusive boundary), order preserved.
pub fn duration_gate(candidates: &[Candidate], max_duration: Timestamp) -> Vec<Candidate> {
    candidates
        .iter()
        .filter(|c| c.duration_s <= max_duration)
        .cloned()
        .collect()
}

/// Pool-based semantic dedup over an ordered candidate stream.
///
/// A candidate is accepted iff the pool is empty at its arrival or its
/// short-caption embedding's maximum similarity to the pool is strictly
/// below the threshold. Accepted embeddings join the pool immediately, so
/// later candidates see them.
pub fn semantic_filter(
    candidates: &[Candidate],
    embedder: &dyn TextEmbedder,
    threshold: f64,
) -> Result<(Vec<FilterDecision>, CandidatePool), CurateError> {
    let mut pool = CandidatePool::new(threshold)?;
    let mut decisions = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let tag_err = |source| CurateError::Embed {
            video_id: candidate.video_id.clone(),
            source,
        };
        let vector = embedder
            .embed_text(&candidate.short_caption)
            .map_err(tag_err)?;
        let max_similarity = pool.max_similarity(&vector).map_err(tag_err)?;
        let accepted = match max_similarity {
            None => true,
            Some(max) => max < threshold,
        };
        if accepted {
            pool.entries.push((candidate.video_id.clone(), vector));
        }
        decisions.push(FilterDecision {
            video_id: candidate.video_id.clone(),
            accepted,
            max_similarity,
        });
    }
    Ok((decisions, pool))
}
