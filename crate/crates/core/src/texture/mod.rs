//! Multi-view texture backprojection into a UV atlas.

mod atlas;
mod io;
mod project;

use thiserror::Error;

use crate::image_buf::ImageError;
use crate::render::RenderError;

pub use atlas::{finalize_texture, rasterize_uv_points, TexelMap, TexelSample, TextureAtlas, TextureCoverage, texel_uv, GRAY};
pub use io::{default_texture_cameras, load_view_set, save_view_set, write_texture_outputs, CameraSpec, TextureOutputs, ViewSetFile};
pub use project::{
    backproject_view, backproject_views_jointly, render_textured, select_views, texture_from_views, visible_texels, TextureResult,
    ViewImage, VisibleTexel, DEPTH_TOLERANCE, FACING_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum TextureError {
    #[error("mesh has no UV coordinates; texturing needs a UV atlas")]
    MissingUvs,
    #[error("texture size must be positive")]
    InvalidSize,
    #[error("view {tag}: image is {got:?} pixels but the camera expects {expected:?}")]
    ViewResolution { tag: String, expected: (usize, usize), got: (usize, usize) },
    #[error("view {tag}: pixel values must lie in [0, 1]")]
    PixelRange { tag: String },
    #[error("no candidate views")]
    NoViews,
    #[error("atlas is {got}² texels but the texel map is {expected}²")]
    SizeMismatch { expected: usize, got: usize },
    #[error("corrupt texel cache: {0}")]
    CorruptCache(&'static str),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
