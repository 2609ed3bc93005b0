//! Image embedding providers used for the semantic loss and the metrics.

mod remote;
mod stub;

use thiserror::Error;

use crate::image_buf::{ColorImage, ImageError};
use crate::mesh::Vec3;

pub use remote::{resolve_endpoint, RemoteOptions, RemoteProvider, ENDPOINT_ENV};
pub use stub::{StubProvider, STUB_DIMENSION, STUB_GRID};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("image is empty")]
    EmptyImage,
    #[error("request timed out")]
    Timeout,
    #[error("server answered HTTP {status}")]
    HttpStatus { status: u16 },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("encoding image: {0}")]
    Encode(#[from] ImageError),
    #[error("view {index}: {source}")]
    View {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
}

impl EmbedError {
    pub fn for_view(self, index: usize) -> Self {
        EmbedError::View { index, source: Box::new(self) }
    }

    /// Whether a retry could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            EmbedError::Timeout | EmbedError::Transport(_) => true,
            EmbedError::HttpStatus { status } => *status == 429 || *status >= 500,
            EmbedError::View { source, .. } => source.is_retryable(),
            _ => false,
        }
    }
}

/// Unit-norm feature vector tagged with the provider that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_id: String,
}

impl EmbeddingVector {
    /// Normalizes `values`; a zero vector maps to the first basis vector.
    pub fn normalized(mut values: Vec<f64>, provider_id: impl Into<String>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
            if let Some(first) = values.first_mut() {
                *first = 1.0;
            }
        }
        Self { values, provider_id: provider_id.into() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Maps an image to a unit vector. Implementations must be safe to call concurrently.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    fn embed(&self, image: &ColorImage) -> Result<EmbeddingVector, EmbedError>;

    /// Vector-Jacobian product `(∂e/∂image)ᵀ grad` for differentiable providers.
    fn embed_vjp(&self, _image: &ColorImage, _grad: &[f64]) -> Option<Result<Vec<Vec3>, EmbedError>> {
        None
    }

    fn is_differentiable(&self) -> bool {
        false
    }
}

/// Embeds a batch, tagging failures with the view index.
pub fn embed_all(provider: &dyn EmbeddingProvider, images: &[ColorImage]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    images.iter().enumerate().map(|(i, img)| provider.embed(img).map_err(|e| e.for_view(i))).collect()
}
