//! Evaluation protocol: a ring of untextured renders scored against a guidance
//! image, silhouette agreement with the guide, and surface distance.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingProvider};
use crate::image_buf::{ColorImage, ImageError};
use crate::losses::sample_surface;
use crate::mesh::{quality_report, MeshQualityReport, TriMesh};
use crate::render::{render, stratified_cameras, RenderBuffers, RigOptions};
use crate::spatial::TriangleBvh;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} mesh has no surface")]
    EmptyMesh(&'static str),
    #[error("embedding provider: {0}")]
    Provider(#[from] EmbedError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub views: usize,
    pub resolution: usize,
    pub softness: f64,
    pub chamfer_samples: usize,
    pub seed: u64,
    /// Writes each view's render as `view_NN.png` here when set.
    pub dump_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { views: 36, resolution: 512, softness: 1.0, chamfer_samples: 20_000, seed: 0, dump_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub azimuth_degrees: f64,
    pub clip_sim: f64,
    pub silhouette_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provider: String,
    /// Mean cosine similarity between render and guidance-image embeddings.
    pub clip_sim: f64,
    pub silhouette_iou: f64,
    /// Mean squared distance from deformed-surface samples to the guide surface.
    pub chamfer_to_guide: f64,
    pub quality: MeshQualityReport,
    pub views: Vec<ViewMetrics>,
}

impl EvalReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Intersection over union of hard coverage masks; 1 when both are empty.
pub fn silhouette_iou(a: &RenderBuffers, b: &RenderBuffers) -> f64 {
    let (ma, mb) = (a.mask(), b.mask());
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean squared distance from `samples` fixed-seed points on `source` to the
/// closest point of the `target` surface.
pub fn surface_chamfer(source: &TriMesh, target: &TriMesh, samples: usize, seed: u64) -> Result<f64, MetricsError> {
    if target.face_count() == 0 {
        return Err(MetricsError::EmptyMesh("target"));
    }
    let points = sample_surface(source, samples, seed).points;
    if points.is_empty() {
        return Err(MetricsError::EmptyMesh("source"));
    }
    let bvh = TriangleBvh::new(target);
    let sum: f64 = points.par_iter().map(|p| bvh.closest_point(p).expect("target has faces").dist_sq).collect::<Vec<_>>().iter().sum();
    Ok(sum / points.len() as f64)
}

/// Renders `deformed` and `guide` from evenly spaced azimuths at zero
/// elevation, framed on the guide, and scores them.
pub fn evaluate(deformed: &TriMesh, guide: &TriMesh, guidance: &ColorImage, provider: &dyn EmbeddingProvider, options: &EvalOptions) -> Result<EvalReport, MetricsError> {
    let target = provider.embed(guidance)?;
    let rig = RigOptions::default().with_resolution(options.resolution);
    let cameras = stratified_cameras(options.views, guide, &rig);
    let views = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let def = render(deformed, cam, options.softness);
            let gd = render(guide, cam, options.softness);
            let image = def.shaded();
            let emb = provider.embed(&image).map_err(|e| e.for_view(i))?;
            if let Some(dir) = &options.dump_dir {
                image.save_png(dir.join(format!("view_{i:02}.png")))?;
            }
            Ok(ViewMetrics { view: i, azimuth_degrees: 360.0 * i as f64 / options.views as f64, clip_sim: emb.cosine(&target), silhouette_iou: silhouette_iou(&def, &gd) })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let n = views.len().max(1) as f64;
    Ok(EvalReport {
        provider: provider.id().to_string(),
        clip_sim: views.iter().map(|v| v.clip_sim).sum::<f64>() / n,
        silhouette_iou: views.iter().map(|v| v.silhouette_iou).sum::<f64>() / n,
        chamfer_to_guide: surface_chamfer(deformed, guide, options.chamfer_samples, options.seed)?,
        quality: quality_report(deformed),
        views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::StubProvider;
    use crate::mesh::Vec3;
    use crate::primitives;
    use nalgebra::Matrix3;

    fn small() -> EvalOptions {
        EvalOptions { resolution: 64, chamfer_samples: 2000, ..EvalOptions::default() }
    }

    #[test]
    fn identical_meshes_score_perfectly() {
        let m = primitives::icosphere(2, 1.0);
        let guidance = render(&m, &stratified_cameras(1, &m, &RigOptions::default().with_resolution(64))[0], 1.0).shaded();
        let r = evaluate(&m, &m, &guidance, &StubProvider, &small()).unwrap();
        assert_eq!(r.views.len(), 36);
        assert_eq!(r.silhouette_iou, 1.0);
        assert!(r.chamfer_to_guide < 1e-28);
    }

    #[test]
    fn disjoint_silhouettes_have_zero_iou() {
        let guide = primitives::icosphere(1, 0.2);
        // a ring of spheres far outside the view frustum of every camera
        let far = guide.transformed(1.0, &Matrix3::identity(), &Vec3::new(0.0, 50.0, 0.0));
        let r = evaluate(&far, &guide, &ColorImage::filled(8, 8, Vec3::repeat(0.5)), &StubProvider, &small()).unwrap();
        assert!(r.views.iter().all(|v| v.silhouette_iou == 0.0));
    }

    #[test]
    fn aggregates_are_per_view_means() {
        let base = primitives::icosphere(2, 1.0);
        let guide = base.transformed(1.1, &Matrix3::identity(), &Vec3::new(0.1, 0.0, 0.0));
        let guidance = ColorImage::from_fn(40, 40, |x, y| Vec3::new(x as f64 / 40.0, y as f64 / 40.0, 0.5));
        let opts = small();
        let r = evaluate(&base, &guide, &guidance, &StubProvider, &opts).unwrap();
        let target = StubProvider.embed(&guidance).unwrap();
        let cams = stratified_cameras(36, &guide, &RigOptions::default().with_resolution(64));
        let by_hand: f64 = cams.iter().map(|c| StubProvider.embed(&render(&base, c, 1.0).shaded()).unwrap().cosine(&target)).sum::<f64>() / 36.0;
        assert!((r.clip_sim - by_hand).abs() < 1e-10);
        let iou_mean = r.views.iter().map(|v| v.silhouette_iou).sum::<f64>() / 36.0;
        assert!((r.silhouette_iou - iou_mean).abs() < 1e-10);
        assert_eq!(r, evaluate(&base, &guide, &guidance, &StubProvider, &opts).unwrap());
    }

    #[test]
    fn brightness_offset_does_not_change_similarity() {
        let m = primitives::icosphere(2, 1.0);
        let guidance = ColorImage::from_fn(32, 32, |x, y| Vec3::repeat(0.2 + 0.5 * ((x * y) % 7) as f64 / 7.0));
        let brighter = ColorImage::from_fn(32, 32, |x, y| guidance.get(x, y) + Vec3::repeat(0.15));
        let a = evaluate(&m, &m, &guidance, &StubProvider, &small()).unwrap();
        let b = evaluate(&m, &m, &brighter, &StubProvider, &small()).unwrap();
        assert!((a.clip_sim - b.clip_sim).abs() < 1e-12);
    }

    #[test]
    fn dump_writes_one_image_per_view() {
        let m = primitives::icosphere(1, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let opts = EvalOptions { views: 36, resolution: 16, chamfer_samples: 100, dump_dir: Some(dir.path().to_path_buf()), ..EvalOptions::default() };
        evaluate(&m, &m, &ColorImage::filled(4, 4, Vec3::repeat(0.3)), &StubProvider, &opts).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 36);
    }
}
