//! Self-contained example inputs: a T-shirt template, a loosened guide, a
//! guidance render, textured views of the guide and the capsule test body.

use std::path::{Path, PathBuf};

use garment_core::body::{save_body, FitConfig, ParametricBody, StageConfig};
use garment_core::image_buf::ColorImage;
use garment_core::mesh::{save_obj, TriMesh, Vec3};
use garment_core::metrics::EvalOptions;
use garment_core::optim::OptConfig;
use garment_core::primitives::{inflate, tshirt};
use garment_core::render::{render, stratified_cameras, RigOptions};
use garment_core::texture::{default_texture_cameras, render_textured, save_view_set, ViewImage};
use nalgebra::Matrix3;

use crate::config::{AlignmentConfig, Paths, PipelineConfig, ProviderConfig, TextureConfig};
use crate::error::{PipelineError, StageFailure};
use crate::manifest::StageName;

/// Problem sizes of the generated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoScale {
    /// Full default budgets.
    Full,
    /// Small budgets that finish in seconds; for tests and smoke runs.
    Quick,
}

pub const DEMO_CONFIG: &str = "config.json";

/// Stripes in u and v, so texture transfer errors are visible.
fn stripe_texture(size: usize) -> ColorImage {
    ColorImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        Vec3::new(0.2 + 0.6 * u, if (x / 16 + y / 16) % 2 == 0 { 0.8 } else { 0.3 }, 0.2 + 0.6 * v)
    })
}

fn quick_config(paths: Paths) -> PipelineConfig {
    let mut fit = FitConfig::default();
    fit.stages = [StageConfig { iterations: 30, learning_rate: 1e-2 }, StageConfig { iterations: 30, learning_rate: 5e-3 }, StageConfig { iterations: 20, learning_rate: 2e-3 }];
    fit.garment_samples = 500;
    PipelineConfig {
        paths,
        optimization: OptConfig { iterations: 40, resolution: 64, cameras_per_iter: 2, surface_samples: 1000, ..OptConfig::default() },
        provider: ProviderConfig::default(),
        texture: TextureConfig { size: 128, dilation: 4, ..TextureConfig::default() },
        evaluation: EvalOptions { resolution: 64, chamfer_samples: 2000, ..EvalOptions::default() },
        fit,
        alignment: AlignmentConfig::default(),
        seed: 0,
        endpoint_override: None,
    }
}

fn stage_error(e: impl Into<StageFailure>) -> PipelineError {
    PipelineError::Stage { stage: StageName::Align, source: e.into() }
}

/// Writes the example inputs and a configuration into `dir`; returns the
/// configuration path. Outputs go to `dir/out`.
pub fn write_demo(dir: &Path, scale: DemoScale) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(dir).map_err(stage_error)?;
    let base: TriMesh = tshirt(1);
    let guide = inflate(&base, 0.015).transformed(1.05, &Matrix3::identity(), &Vec3::new(0.0, 0.01, 0.0));
    save_obj(&base, dir.join("base.obj")).map_err(stage_error)?;
    save_obj(&guide, dir.join("guide.obj")).map_err(stage_error)?;

    let view_res = if scale == DemoScale::Quick { 128 } else { 512 };
    let rig = RigOptions::default().with_resolution(view_res);
    render(&guide, &stratified_cameras(1, &guide, &rig)[0], 1.0).shaded().save_png(dir.join("guidance.png")).map_err(stage_error)?;

    let texture = stripe_texture(256);
    let views = default_texture_cameras(&guide, view_res)
        .into_iter()
        .map(|(tag, camera)| ViewImage::new(render_textured(&guide, &texture, &camera)?, camera, tag))
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage_error)?;
    save_view_set(&views, dir.join("views")).map_err(stage_error)?;
    save_body(&ParametricBody::test_body(), dir.join("body.gbdy")).map_err(stage_error)?;

    let paths = Paths {
        base_mesh: "base.obj".into(),
        guide_mesh: "guide.obj".into(),
        guidance_image: "guidance.png".into(),
        body_file: Some("body.gbdy".into()),
        views: Some("views/views.json".into()),
        output_dir: "out".into(),
    };
    let config = match scale {
        DemoScale::Quick => quick_config(paths),
        DemoScale::Full => PipelineConfig {
            paths,
            optimization: OptConfig::default(),
            provider: ProviderConfig::default(),
            texture: TextureConfig::default(),
            evaluation: EvalOptions::default(),
            fit: FitConfig::default(),
            alignment: AlignmentConfig::default(),
            seed: 0,
            endpoint_override: None,
        },
    };
    let path = dir.join(DEMO_CONFIG);
    std::fs::write(&path, serde_json::to_string_pretty(&config).map_err(stage_error)?).map_err(stage_error)?;
    Ok(path)
}
