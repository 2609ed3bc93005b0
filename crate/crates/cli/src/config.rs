//! Pipeline configuration file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use garment_core::body::FitConfig;
use garment_core::embed::{resolve_endpoint, EmbeddingProvider, RemoteOptions, RemoteProvider, StubProvider};
use garment_core::metrics::EvalOptions;
use garment_core::optim::OptConfig;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub base_mesh: PathBuf,
    pub guide_mesh: PathBuf,
    pub guidance_image: PathBuf,
    /// Body model in the binary body format; the fit stage is skipped without it.
    #[serde(default)]
    pub body_file: Option<PathBuf>,
    /// View-set index (`views.json`); the texture stage is skipped without it.
    #[serde(default)]
    pub views: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub timeout_seconds: f64,
    pub retries: u32,
    pub expected_dimension: Option<usize>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { kind: ProviderKind::Stub, endpoint: None, timeout_seconds: 30.0, retries: 3, expected_dimension: None, cache_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureConfig {
    /// Atlas edge length in texels.
    pub size: usize,
    /// Rings of nearest-filled dilation before the gray fill.
    pub dilation: usize,
    /// Directory for cached texel maps, relative to the output directory.
    pub cache_dir: PathBuf,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self { size: 1024, dilation: 8, cache_dir: PathBuf::from("cache") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    /// Match the guide's centroid and bounding radius to the base.
    pub enabled: bool,
    /// Also try quarter turns about +y.
    pub search_yaw: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self { enabled: true, search_yaw: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub optimization: OptConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub texture: TextureConfig,
    #[serde(default)]
    pub evaluation: EvalOptions,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub alignment: AlignmentConfig,
    /// Copied into every stage's seed before anything runs.
    #[serde(default)]
    pub seed: u64,
    /// Endpoint given on the command line; beats the environment and the file.
    #[serde(skip)]
    pub endpoint_override: Option<String>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub provider: Option<ProviderKind>,
    pub endpoint: Option<String>,
}

impl PipelineConfig {
    /// Reads the file, resolves relative paths against its directory and
    /// applies the overrides and seed.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Validation(format!("reading {}: {e}", path.display())))?;
        let mut config: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Validation(format!("parsing {}: {e}", path.display())))?;
        config.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        config.apply(overrides);
        Ok(config)
    }

    pub fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.base_mesh);
        fix(&mut paths.guide_mesh);
        fix(&mut paths.guidance_image);
        fix(&mut paths.output_dir);
        paths.body_file.iter_mut().for_each(fix);
        paths.views.iter_mut().for_each(fix);
        self.provider.cache_dir.iter_mut().for_each(fix);
        self.evaluation.dump_dir.iter_mut().for_each(fix);
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(kind) = overrides.provider {
            self.provider.kind = kind;
        }
        if overrides.endpoint.is_some() {
            self.endpoint_override.clone_from(&overrides.endpoint);
        }
        self.optimization.seed = self.seed;
        self.evaluation.seed = self.seed;
        self.fit.seed = self.seed;
    }

    /// Checks every referenced input exists and every section is well formed.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let p = &self.paths;
        let required = [("base_mesh", Some(&p.base_mesh)), ("guide_mesh", Some(&p.guide_mesh)), ("guidance_image", Some(&p.guidance_image)), ("body_file", p.body_file.as_ref()), ("views", p.views.as_ref())];
        for (name, path) in required {
            if let Some(path) = path {
                if !path.is_file() {
                    return Err(PipelineError::Validation(format!("{name}: {} does not exist", path.display())));
                }
            }
        }
        self.optimization.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
        self.fit.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
        let e = &self.evaluation;
        if e.views == 0 || e.resolution == 0 || e.chamfer_samples == 0 || !(e.softness >= 0.0 && e.softness.is_finite()) {
            return Err(PipelineError::Validation("evaluation: views, resolution and chamfer_samples must be positive and softness finite".into()));
        }
        if self.texture.size == 0 {
            return Err(PipelineError::Validation("texture.size must be positive".into()));
        }
        if !(self.provider.timeout_seconds > 0.0 && self.provider.timeout_seconds.is_finite()) {
            return Err(PipelineError::Validation("provider.timeout_seconds must be positive".into()));
        }
        if self.provider.kind == ProviderKind::Remote && self.endpoint().is_none() {
            return Err(PipelineError::Validation("remote provider selected but no endpoint is configured".into()));
        }
        Ok(())
    }

    /// Remote endpoint after command-line and environment precedence.
    pub fn endpoint(&self) -> Option<String> {
        resolve_endpoint(self.endpoint_override.as_deref(), self.provider.endpoint.as_deref())
    }

    /// Label recorded in stage input hashes; changes whenever the provider would.
    pub fn provider_label(&self) -> String {
        match self.provider.kind {
            ProviderKind::Stub => "stub".to_string(),
            ProviderKind::Remote => format!("remote:{}", self.endpoint().unwrap_or_default()),
        }
    }

    pub fn build_provider(&self) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
        Ok(match self.provider.kind {
            ProviderKind::Stub => Box::new(StubProvider),
            ProviderKind::Remote => {
                let endpoint = self.endpoint().ok_or_else(|| PipelineError::Validation("remote provider selected but no endpoint is configured".into()))?;
                let mut options = RemoteOptions::new(endpoint);
                options.timeout = Duration::from_secs_f64(self.provider.timeout_seconds);
                options.retries = self.provider.retries;
                options.expected_dimension = self.provider.expected_dimension;
                options.cache_dir.clone_from(&self.provider.cache_dir);
                Box::new(RemoteProvider::new(options))
            }
        })
    }
}
