use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::LossError;
use crate::mesh::{TriMesh, Vec3};
use crate::spatial::KdTree;

/// Surface points with the face and barycentric weights that produced them,
/// so gradients on the points can be scattered back to vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub faces: Vec<usize>,
    pub barycentric: Vec<[f64; 3]>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Re-evaluates the sample points on moved vertices with the same provenance.
    pub fn reposition(&self, faces: &[[usize; 3]], positions: &[Vec3]) -> Vec<Vec3> {
        self.faces
            .iter()
            .zip(&self.barycentric)
            .map(|(&f, b)| {
                let t = faces[f];
                positions[t[0]] * b[0] + positions[t[1]] * b[1] + positions[t[2]] * b[2]
            })
            .collect()
    }

    /// Accumulates per-point gradients onto vertices.
    pub fn scatter(&self, faces: &[[usize; 3]], point_grads: &[Vec3], vertex_count: usize) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); vertex_count];
        for ((&f, b), g) in self.faces.iter().zip(&self.barycentric).zip(point_grads) {
            let t = faces[f];
            for k in 0..3 {
                out[t[k]] += g * b[k];
            }
        }
        out
    }
}

/// Area-weighted uniform samples on the surface spanned by `positions`.
pub fn sample_positions<R: Rng>(faces: &[[usize; 3]], positions: &[Vec3], count: usize, rng: &mut R) -> SurfaceSamples {
    let mut cdf = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for t in faces {
        total += 0.5 * (positions[t[1]] - positions[t[0]]).cross(&(positions[t[2]] - positions[t[0]])).norm();
        cdf.push(total);
    }
    let mut samples = SurfaceSamples { points: Vec::with_capacity(count), faces: Vec::with_capacity(count), barycentric: Vec::with_capacity(count) };
    if faces.is_empty() || !(total > 0.0) {
        return samples;
    }
    for _ in 0..count {
        let u = rng.random::<f64>() * total;
        let f = cdf.partition_point(|&c| c <= u).min(faces.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let b = [1.0 - s, s * (1.0 - r2), s * r2];
        let t = faces[f];
        samples.points.push(positions[t[0]] * b[0] + positions[t[1]] * b[1] + positions[t[2]] * b[2]);
        samples.faces.push(f);
        samples.barycentric.push(b);
    }
    samples
}

pub fn sample_surface(mesh: &TriMesh, count: usize, seed: u64) -> SurfaceSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_positions(mesh.faces(), mesh.vertices(), count, &mut rng)
}

/// Mean squared distance from each source point to its nearest target, and its gradient.
pub fn chamfer_one_directional(src: &[Vec3], tgt: &[Vec3]) -> Result<(f64, Vec<Vec3>), LossError> {
    if tgt.is_empty() {
        return Err(LossError::EmptyPointSet("target"));
    }
    chamfer_to_tree(src, &KdTree::new(tgt))
}

pub fn chamfer_to_tree(src: &[Vec3], tree: &KdTree) -> Result<(f64, Vec<Vec3>), LossError> {
    if src.is_empty() {
        return Err(LossError::EmptyPointSet("source"));
    }
    if tree.is_empty() {
        return Err(LossError::EmptyPointSet("target"));
    }
    let n = src.len() as f64;
    let hits: Vec<(f64, Vec3)> = src
        .par_iter()
        .map(|p| {
            let nn = tree.nearest(p).expect("tree is not empty");
            (nn.dist_sq, 2.0 * (p - tree.points()[nn.index]) / n)
        })
        .collect();
    let value = hits.iter().map(|h| h.0).sum::<f64>() / n;
    Ok((value, hits.into_iter().map(|h| h.1).collect()))
}
