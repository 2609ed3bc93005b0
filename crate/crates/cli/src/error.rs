use garment_core::body::BodyError;
use garment_core::image_buf::ImageError;
use garment_core::losses::LossError;
use garment_core::mesh::MeshError;
use garment_core::metrics::MetricsError;
use garment_core::optim::OptError;
use garment_core::texture::TextureError;
use thiserror::Error;

use crate::manifest::StageName;

/// Process exit status by failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Validation = 2,
    StageFailure = 3,
    ProviderFailure = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Optimizer(#[from] OptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Texture(#[from] TextureError),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing upstream output {0}")]
    MissingInput(String),
}

impl StageFailure {
    /// Whether the embedding service caused the failure.
    pub fn is_provider(&self) -> bool {
        match self {
            StageFailure::Optimizer(OptError::Loss(LossError::Provider(_))) => true,
            StageFailure::Optimizer(OptError::Diverged { source: LossError::Provider(_), .. }) => true,
            StageFailure::Metrics(MetricsError::Provider(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: StageName,
        #[source]
        source: StageFailure,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl PipelineError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            PipelineError::Validation(_) => ExitStatus::Validation,
            PipelineError::Stage { source, .. } if source.is_provider() => ExitStatus::ProviderFailure,
            PipelineError::Stage { .. } | PipelineError::Manifest(_) => ExitStatus::StageFailure,
        }
    }
}
