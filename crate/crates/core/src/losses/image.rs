use rayon::prelude::*;

use super::LossError;
use crate::embed::{EmbeddingProvider, EmbeddingVector};
use crate::image_buf::ColorImage;
use crate::mesh::{TriMesh, Vec3};
use crate::render::{BufferGrads, Camera, Rasterizer, RenderBuffers};

/// Channels compared per pixel: soft coverage plus three normal components.
const CHANNELS: f64 = 4.0;

/// Guide render for one camera, with its embedding when a provider is in use.
#[derive(Debug, Clone)]
pub struct GuideView {
    pub camera: Camera,
    pub buffers: RenderBuffers,
    pub embedding: Option<EmbeddingVector>,
}

impl GuideView {
    pub fn capture(
        guide: &Rasterizer,
        vertices: &[Vec3],
        camera: Camera,
        softness: f64,
        provider: Option<&dyn EmbeddingProvider>,
    ) -> Result<Self, LossError> {
        let (buffers, _) = guide.forward(vertices, &camera, softness);
        let embedding = provider.map(|p| p.embed(&buffers.shaded())).transpose()?;
        Ok(Self { camera, buffers, embedding })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weight of the normal channel at soft coverage `s`: zero on the outline,
/// one a softness width inside it, so the normal term stays continuous where
/// pixels enter or leave the hard footprint.
fn normal_weight(s: f64) -> (f64, f64) {
    let w = 2.0 * s - 1.0;
    if w <= 0.0 {
        (0.0, 0.0)
    } else if w >= 1.0 {
        (1.0, 0.0)
    } else {
        (w, 2.0)
    }
}

/// Mean absolute difference over the silhouette and the coverage-weighted
/// normal channels, with the gradient with respect to `def` scaled by `scale`.
pub fn render_l1_buffers(def: &RenderBuffers, guide: &RenderBuffers, scale: f64) -> Result<(f64, BufferGrads), LossError> {
    if def.pixel_count() != guide.pixel_count() {
        return Err(LossError::LengthMismatch { what: "guide pixels", expected: def.pixel_count(), got: guide.pixel_count() });
    }
    let count = CHANNELS * def.pixel_count().max(1) as f64;
    let unit = scale / count;
    let mut grads = BufferGrads::zeros(def.width, def.height);
    let mut sum = 0.0;
    for i in 0..def.pixel_count() {
        let ds = def.silhouette[i] - guide.silhouette[i];
        sum += ds.abs();
        let (wd, wd_slope) = normal_weight(def.silhouette[i]);
        let (wg, _) = normal_weight(guide.silhouette[i]);
        let dn = def.normals[i] * wd - guide.normals[i] * wg;
        sum += dn.abs().sum();
        let sn = dn.map(sign);
        grads.normals[i] = sn * (wd * unit);
        grads.silhouette[i] = (sign(ds) + wd_slope * sn.dot(&def.normals[i])) * unit;
    }
    Ok((sum / count, grads))
}

/// Render loss averaged over cameras, with vertex gradients for `def_mesh`.
pub fn render_l1(def_mesh: &TriMesh, guide_mesh: &TriMesh, cameras: &[Camera], softness: f64) -> Result<(f64, Vec<Vec3>), LossError> {
    let def = Rasterizer::new(def_mesh);
    let guide = Rasterizer::new(guide_mesh);
    let k = cameras.len().max(1) as f64;
    let per_view: Vec<Result<(f64, Vec<Vec3>), LossError>> = cameras
        .par_iter()
        .map(|cam| {
            let (target, _) = guide.forward(guide_mesh.vertices(), cam, softness);
            let (buffers, tape) = def.forward(def_mesh.vertices(), cam, softness);
            let (value, grads) = render_l1_buffers(&buffers, &target, 1.0 / k)?;
            Ok((value / k, def.backward(cam, &tape, &grads)?))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![Vec3::zeros(); def_mesh.vertex_count()];
    for r in per_view {
        let (v, g) = r?;
        total += v;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok((total, grad))
}

/// `1 − cos(E(image), guide)` and, for differentiable providers, its image
/// gradient scaled by `scale`.
pub(crate) fn embedding_term(
    provider: &dyn EmbeddingProvider,
    image: &ColorImage,
    guide: &EmbeddingVector,
    scale: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<Vec3>>), LossError> {
    let e = provider.embed(image)?;
    if e.dimension() != guide.dimension() {
        return Err(LossError::LengthMismatch { what: "embedding dimension", expected: guide.dimension(), got: e.dimension() });
    }
    let value = 1.0 - e.cosine(guide);
    if !want_grad {
        return Ok((value, None));
    }
    let upstream: Vec<f64> = guide.values().iter().map(|g| -g * scale).collect();
    let grad = provider.embed_vjp(image, &upstream).transpose()?;
    Ok((value, grad))
}

/// Mean of `1 − cos` between paired embeddings.
pub fn embedding_loss(def_images: &[ColorImage], guide_images: &[ColorImage], provider: &dyn EmbeddingProvider) -> Result<f64, LossError> {
    if def_images.len() != guide_images.len() {
        return Err(LossError::LengthMismatch { what: "guide images", expected: def_images.len(), got: guide_images.len() });
    }
    if def_images.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (d, g)) in def_images.iter().zip(guide_images).enumerate() {
        let a = provider.embed(d).map_err(|e| e.for_view(i))?;
        let b = provider.embed(g).map_err(|e| e.for_view(i))?;
        total += 1.0 - a.cosine(&b);
    }
    Ok(total / def_images.len() as f64)
}
