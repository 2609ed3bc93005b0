//! Software rasterization of silhouettes, normals and depth with analytic
//! vertex gradients.

mod camera;
mod raster;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image_buf::{save_gray_png, ColorImage, ImageError};
use crate::mesh::Vec3;

pub use camera::{orbit_camera, sample_cameras, sample_cameras_with, stratified_cameras, Camera, RigOptions};
pub use raster::{render, render_backward, BufferGrads, Rasterizer, RenderBuffers, RenderTape};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("gradient buffers are {got:?}, render was {expected:?}")]
    ResolutionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Value range of an exported depth image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

/// Writes `<stem>_silhouette.png`, `<stem>_normals.png`, `<stem>_depth.png`
/// and `<stem>_depth.json` holding the depth range mapped to black..white.
pub fn export_buffers(buffers: &RenderBuffers, dir: impl AsRef<Path>, stem: &str) -> Result<DepthRange, RenderError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (w, h) = (buffers.width, buffers.height);
    save_gray_png(dir.join(format!("{stem}_silhouette.png")), w, h, &buffers.silhouette, 0.0, 1.0)?;
    let normals: Vec<Vec3> = buffers
        .normals
        .iter()
        .map(|n| if *n == Vec3::zeros() { Vec3::zeros() } else { Vec3::repeat(0.5) + 0.5 * n })
        .collect();
    ColorImage::from_pixels(w, h, normals)?.save_png(dir.join(format!("{stem}_normals.png")))?;
    let finite = buffers.depth.iter().copied().filter(|d| d.is_finite());
    let (min, max) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let range = if min.is_finite() { DepthRange { min, max } } else { DepthRange { min: 0.0, max: 0.0 } };
    save_gray_png(dir.join(format!("{stem}_depth.png")), w, h, &buffers.depth, range.min, range.max)?;
    let json = serde_json::to_string_pretty(&range).expect("range serializes");
    std::fs::write(dir.join(format!("{stem}_depth.json")), json)?;
    Ok(range)
}
