use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::image_buf::ColorImage;
use crate::mesh::Vec3;

/// Side of the downsampled grid.
pub const STUB_GRID: usize = 32;
pub const STUB_DIMENSION: usize = STUB_GRID * STUB_GRID;

/// Deterministic local provider: mean-centered 32×32 grayscale thumbnail,
/// L2-normalized. Linear up to the normalization, hence differentiable.
#[derive(Debug, Clone, Default)]
pub struct StubProvider;

fn cell_range(i: usize, n: usize) -> (usize, usize) {
    let start = i * n / STUB_GRID;
    let end = ((i + 1) * n / STUB_GRID).max(start + 1).min(n.max(1));
    (start.min(n - 1), end)
}

impl StubProvider {
    fn centered_features(image: &ColorImage) -> Result<Vec<f64>, EmbedError> {
        if image.is_empty() {
            return Err(EmbedError::EmptyImage);
        }
        let (w, h) = (image.width(), image.height());
        let mut feats = Vec::with_capacity(STUB_DIMENSION);
        for cy in 0..STUB_GRID {
            let (y0, y1) = cell_range(cy, h);
            for cx in 0..STUB_GRID {
                let (x0, x1) = cell_range(cx, w);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.get(x, y);
                        sum += (p.x + p.y + p.z) / 3.0;
                    }
                }
                feats.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
        let mean = feats.iter().sum::<f64>() / STUB_DIMENSION as f64;
        feats.iter_mut().for_each(|f| *f -= mean);
        Ok(feats)
    }
}

impl EmbeddingProvider for StubProvider {
    fn id(&self) -> &str {
        "stub-gray32"
    }

    fn embed(&self, image: &ColorImage) -> Result<EmbeddingVector, EmbedError> {
        Ok(EmbeddingVector::normalized(Self::centered_features(image)?, self.id()))
    }

    fn embed_vjp(&self, image: &ColorImage, grad: &[f64]) -> Option<Result<Vec<Vec3>, EmbedError>> {
        Some((|| {
            let u = Self::centered_features(image)?;
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (w, h) = (image.width(), image.height());
            let mut out = vec![Vec3::zeros(); w * h];
            if !(norm > 1e-12) {
                return Ok(out);
            }
            let e: Vec<f64> = u.iter().map(|v| v / norm).collect();
            let eg: f64 = e.iter().zip(grad).map(|(a, b)| a * b).sum();
            let mut gu: Vec<f64> = grad.iter().zip(&e).map(|(g, ei)| (g - ei * eg) / norm).collect();
            let mean = gu.iter().sum::<f64>() / STUB_DIMENSION as f64;
            gu.iter_mut().for_each(|g| *g -= mean);
            for cy in 0..STUB_GRID {
                let (y0, y1) = cell_range(cy, h);
                for cx in 0..STUB_GRID {
                    let (x0, x1) = cell_range(cx, w);
                    let share = gu[cy * STUB_GRID + cx] / ((y1 - y0) * (x1 - x0)) as f64 / 3.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            out[y * w + x] += Vec3::repeat(share);
                        }
                    }
                }
            }
            Ok(out)
        })())
    }

    fn is_differentiable(&self) -> bool {
        true
    }
}
