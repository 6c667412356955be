//! Embedding backends (image and text) and similarity math.
//!
//! Real CLS-token services and the deterministic mocks are interchangeable
//! behind [`ImageEmbedder`] / [`TextEmbedder`]. Similarity is fixed to
//! cosine over L2-normalized vectors so thresholds stay scale-free.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FrameRef, PixelSource, RgbBuffer};
use crate::util::fnv1a64_parts;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("frame has no resolvable pixels: {0}")]
    MissingPixels(String),
}

/// A fixed-length embedding. The dimension is the vector length; one
/// backend always produces one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scale to unit length. Errors on the zero vector.
    pub fn normalized(mut self) -> Result<Self, EmbedError> {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        for v in &mut self.values {
            *v /= norm;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    Image,
    Text,
}

impl fmt::Display for EmbedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedKind::Image => f.write_str("image"),
            EmbedKind::Text => f.write_str("text"),
        }
    }
}

/// What a backend produces: kind, dimension, identity, and whether its
/// outputs are already unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderDescriptor {
    pub kind: EmbedKind,
    pub dim: usize,
    pub backend_id: String,
    pub normalizes: bool,
}

pub trait ImageEmbedder: Send + Sync {
    fn descriptor(&self) -> EmbedderDescriptor;
    fn embed_image(&self, frame: &FrameRef) -> Result<EmbeddingVector, EmbedError>;
}

pub trait TextEmbedder: Send + Sync {
    fn descriptor(&self) -> EmbedderDescriptor;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Cosine similarity in [-1, 1]. Symmetric; `cos(v, v) == 1` within 1e-9.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let norm_a = a.l2_norm();
    let norm_b = b.l2_norm();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Load a frame's pixels, decoding the referenced image file if needed.
pub fn resolve_pixels(frame: &FrameRef) -> Result<RgbBuffer, EmbedError> {
    match &frame.pixels {
        Some(PixelSource::Buffer(buf)) => Ok(buf.clone()),
        Some(PixelSource::Path(path)) => load_rgb(path),
        None => Err(EmbedError::MissingPixels(format!(
            "{} frame {} has no pixel source",
            frame.video_id, frame.index
        ))),
    }
}

pub(crate) fn load_rgb(path: &Path) -> Result<RgbBuffer, EmbedError> {
    let img = image::open(path)
        .map_err(|e| EmbedError::MissingPixels(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (width, height) = (img.width(), img.height());
    RgbBuffer::new(width, height, img.into_raw()).map_err(EmbedError::MalformedResponse)
}

fn hashed_projection(seed: u64, dim: usize, payload: &[u8]) -> Result<EmbeddingVector, EmbedError> {
    let mut values = Vec::with_capacity(dim);
    for d in 0..dim {
        let h = fnv1a64_parts(&[&seed.to_le_bytes(), &(d as u64).to_le_bytes(), payload]);
        // Top 53 bits -> [0,1) -> [-1,1); keeps the value exactly
        // representable and platform independent.
        let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
        values.push(unit * 2.0 - 1.0);
    }
    EmbeddingVector::new(values).normalized()
}

/// Deterministic image embedder: per-dimension seeded hash of the raw pixel
/// buffer, L2-normalized. Pure function of the pixel bytes.
#[derive(Debug, Clone)]
pub struct MockImageEmbedder {
    dim: usize,
    seed: u64,
}

impl MockImageEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        MockImageEmbedder { dim, seed }
    }
}

impl ImageEmbedder for MockImageEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            kind: EmbedKind::Image,
            dim: self.dim,
            backend_id: format!("mock-image-{}", self.seed),
            normalizes: true,
        }
    }

    fn embed_image(&self, frame: &FrameRef) -> Result<EmbeddingVector, EmbedError> {
        let pixels = resolve_pixels(frame)?;
        hashed_projection(self.seed, self.dim, &pixels.data)
    }
}

/// Deterministic text embedder over UTF-8 bytes. No input normalization:
/// byte-different strings may embed differently.
#[derive(Debug, Clone)]
pub struct MockTextEmbedder {
    dim: usize,
    seed: u64,
}

impl MockTextEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        MockTextEmbedder { dim, seed }
    }
}

impl TextEmbedder for MockTextEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            kind: EmbedKind::Text,
            dim: self.dim,
            backend_id: format!("mock-text-{}", self.seed),
            normalizes: true,
        }
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        hashed_projection(self.seed.wrapping_add(1), self.dim, text.as_bytes())
    }
}

/// Image embedder with preset vectors, keyed by frame index. For replaying
/// scripted similarity patterns in tests and oracles.
#[derive(Debug, Clone)]
pub struct ScriptedImageEmbedder {
    pub vectors: Vec<EmbeddingVector>,
}

impl ImageEmbedder for ScriptedImageEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            kind: EmbedKind::Image,
            dim: self.vectors.first().map_or(0, EmbeddingVector::dim),
            backend_id: "scripted-image".into(),
            normalizes: false,
        }
    }

    fn embed_image(&self, frame: &FrameRef) -> Result<EmbeddingVector, EmbedError> {
        self.vectors.get(frame.index).cloned().ok_or_else(|| {
            EmbedError::MalformedResponse(format!("no scripted vector for frame {}", frame.index))
        })
    }
}

#[derive(Serialize)]
struct EmbedRequestBody<'a> {
    kind: EmbedKind,
    data: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponseBody {
    values: Vec<f64>,
}

/// HTTP embedding client speaking the minimal wire protocol:
/// `POST /embed {kind, data}` -> `{values: [..]}`. Images travel as
/// base64-encoded PNG; text as the raw string. Any non-2xx status is
/// backend-unreachable.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, dim: usize) -> Self {
        HttpEmbedder {
            client: reqwest::blocking::Client::new(),
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            dim,
        }
    }

    fn request(&self, kind: EmbedKind, data: &str) -> Result<EmbeddingVector, EmbedError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequestBody { kind, data })
            .send()
            .map_err(|e| EmbedError::BackendUnreachable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbedError::BackendUnreachable(format!(
                "{} returned {}",
                self.endpoint,
                response.status()
            )));
        }
        let body: EmbedResponseBody = response
            .json()
            .map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        if body.values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: body.values.len(),
            });
        }
        EmbeddingVector::new(body.values).normalized()
    }
}

impl ImageEmbedder for HttpEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            kind: EmbedKind::Image,
            dim: self.dim,
            backend_id: self.endpoint.clone(),
            normalizes: true,
        }
    }

    fn embed_image(&self, frame: &FrameRef) -> Result<EmbeddingVector, EmbedError> {
        let pixels = resolve_pixels(frame)?;
        let png = encode_png(&pixels).map_err(EmbedError::MalformedResponse)?;
        use base64::Engine as _;
        let b64 = base64::engine::general_purpose::STANDARD.encode(png);
        self.request(EmbedKind::Image, &b64)
    }
}

impl TextEmbedder for HttpEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            kind: EmbedKind::Text,
            dim: self.dim,
            backend_id: self.endpoint.clone(),
            normalizes: true,
        }
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        self.request(EmbedKind::Text, text)
    }
}

/// PNG-encode a raw RGB buffer into memory.
pub(crate) fn encode_png(buf: &RgbBuffer) -> Result<Vec<u8>, String> {
    let mut out = std::io::Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        &buf.data,
        buf.width,
        buf.height,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| e.to_string())?;
    Ok(out.into_inner())
}
