use super::LossError;
use crate::mesh::{EdgeTopology, TriMesh, Vec3};

/// Relative size of the area floor: `ε_A = (AREA_FLOOR · mean edge)⁴`.
const AREA_FLOOR: f64 = 1e-3;

/// Connectivity-only data for the smoothness and triangle-shape terms.
#[derive(Debug, Clone)]
pub struct Regularizers {
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    neighbors: Vec<Vec<usize>>,
    isolated: Vec<usize>,
}

impl Regularizers {
    pub fn new(mesh: &TriMesh) -> Self {
        let topo = EdgeTopology::of(mesh);
        let neighbors = topo.vertex_neighbors();
        let isolated = neighbors.iter().enumerate().filter(|(_, n)| n.is_empty()).map(|(v, _)| v).collect();
        Self { faces: mesh.faces().to_vec(), edges: topo.edges, neighbors, isolated }
    }

    /// `(1/V) Σ_v ‖v − mean(one-ring)‖²` with its gradient.
    pub fn laplacian(&self, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>), LossError> {
        if !self.isolated.is_empty() {
            return Err(LossError::IsolatedVertices(self.isolated.clone()));
        }
        let n = positions.len() as f64;
        let deltas: Vec<Vec3> = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(v, nb)| positions[v] - nb.iter().map(|&u| positions[u]).sum::<Vec3>() / nb.len() as f64)
            .collect();
        let value = deltas.iter().map(|d| d.norm_squared()).sum::<f64>() / n;
        let mut grad: Vec<Vec3> = deltas.iter().map(|d| d * (2.0 / n)).collect();
        for (w, nb) in self.neighbors.iter().enumerate() {
            let share = deltas[w] * (2.0 / n / nb.len() as f64);
            for &u in nb {
                grad[u] -= share;
            }
        }
        Ok((value, grad))
    }

    /// Area floor plus edge-length uniformity, with the full gradient
    /// (including the dependence of the floor on the mean edge length).
    pub fn triangle_quality(&self, positions: &[Vec3]) -> (f64, Vec<Vec3>) {
        let mut grad = vec![Vec3::zeros(); positions.len()];
        if self.edges.is_empty() {
            return (0.0, grad);
        }
        let e_count = self.edges.len() as f64;
        let f_count = self.faces.len().max(1) as f64;
        let dirs: Vec<(Vec3, f64)> = self
            .edges
            .iter()
            .map(|&[a, b]| {
                let d = positions[b] - positions[a];
                let l = d.norm();
                (if l > 0.0 { d / l } else { Vec3::zeros() }, l)
            })
            .collect();
        let mean = dirs.iter().map(|d| d.1).sum::<f64>() / e_count;
        let eps = (AREA_FLOOR * mean).powi(4);

        let mut d_mean = 0.0;
        let mut area_term = 0.0;
        for t in &self.faces {
            let (a, b, c) = (positions[t[0]], positions[t[1]], positions[t[2]]);
            let n = (b - a).cross(&(c - a));
            let twice = n.norm();
            let area = 0.5 * twice;
            let denom = area * area + eps;
            area_term += eps / denom;
            let d_area = -2.0 * eps * area / (denom * denom) / f_count;
            d_mean += (area * area / (denom * denom)) * 4.0 * eps / mean / f_count;
            if twice > 0.0 {
                let nh = n / twice;
                grad[t[0]] += nh.cross(&(c - b)) * (0.5 * d_area);
                grad[t[1]] += nh.cross(&(a - c)) * (0.5 * d_area);
                grad[t[2]] += nh.cross(&(b - a)) * (0.5 * d_area);
            }
        }
        area_term /= f_count;

        let mut edge_term = 0.0;
        let mut d_len: Vec<f64> = Vec::with_capacity(self.edges.len());
        for &(_, l) in &dirs {
            let r = l / mean - 1.0;
            edge_term += r * r;
            d_len.push(2.0 * r / mean / e_count);
            d_mean += -2.0 * r * l / (mean * mean) / e_count;
        }
        edge_term /= e_count;

        for ((&[a, b], (dir, _)), dl) in self.edges.iter().zip(&dirs).zip(&d_len) {
            let g = dl + d_mean / e_count;
            grad[b] += dir * g;
            grad[a] -= dir * g;
        }
        (area_term + edge_term, grad)
    }
}

pub fn laplacian_loss(mesh: &TriMesh) -> Result<(f64, Vec<Vec3>), LossError> {
    Regularizers::new(mesh).laplacian(mesh.vertices())
}

pub fn triangle_quality_loss(mesh: &TriMesh) -> (f64, Vec<Vec3>) {
    Regularizers::new(mesh).triangle_quality(mesh.vertices())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(seed: u64) -> TriMesh {
        let g = primitives::grid(14, 13, 1.0, 1.0);
        assert!(g.vertex_count() >= 200);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = g
            .vertices()
            .iter()
            .map(|p| p + Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.05..0.05)))
            .collect();
        g.with_vertices(v).unwrap()
    }

    fn check_gradient(f: impl Fn(&[Vec3]) -> f64, grad: &[Vec3], x: &[Vec3], rel: f64) {
        let h = 1e-6;
        for v in (0..x.len()).step_by(7) {
            for c in 0..3 {
                let mut p = x.to_vec();
                p[v][c] += h;
                let mut q = x.to_vec();
                q[v][c] -= h;
                let fd = (f(&p) - f(&q)) / (2.0 * h);
                let scale = fd.abs().max(grad[v][c].abs()).max(1e-6);
                assert!((fd - grad[v][c]).abs() <= rel * scale, "vertex {v} coord {c}: fd {fd} analytic {}", grad[v][c]);
            }
        }
    }

    #[test]
    fn planar_grid_interior_is_flat() {
        let g = primitives::grid(5, 5, 1.0, 1.0);
        let r = Regularizers::new(&g);
        let (_, grad) = r.laplacian(g.vertices()).unwrap();
        let neighbors = EdgeTopology::of(&g).vertex_neighbors();
        // interior vertices of the split grid sit at the mean of their six neighbors
        for (v, nb) in neighbors.iter().enumerate() {
            if nb.len() == 6 {
                let mean = nb.iter().map(|&u| g.vertices()[u]).sum::<Vec3>() / 6.0;
                assert!((g.vertices()[v] - mean).norm() < 1e-12);
            }
        }
        assert!(grad.iter().all(|g| g.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn displaced_vertex_contribution() {
        let g = primitives::grid(4, 4, 1.0, 1.0);
        let base = laplacian_loss(&g).unwrap().0;
        let center = 12;
        let mut v = g.vertices().to_vec();
        let d = Vec3::new(0.0, 0.0, 0.3);
        v[center] += d;
        let moved = g.with_vertices(v).unwrap();
        let r = Regularizers::new(&moved);
        let deltas_center: f64 = {
            let nb = &EdgeTopology::of(&moved).vertex_neighbors()[center];
            let mean = nb.iter().map(|&u| moved.vertices()[u]).sum::<Vec3>() / nb.len() as f64;
            (moved.vertices()[center] - mean).norm_squared()
        };
        assert!((deltas_center - d.norm_squared()).abs() < 1e-12);
        assert!(r.laplacian(moved.vertices()).unwrap().0 > base);
    }

    #[test]
    fn isolated_vertex_rejected() {
        let m = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(laplacian_loss(&m), Err(LossError::IsolatedVertices(v)) if v == vec![3]));
    }

    #[test]
    fn laplacian_gradient_matches_finite_differences() {
        let m = random_patch(1);
        let r = Regularizers::new(&m);
        let (_, grad) = r.laplacian(m.vertices()).unwrap();
        check_gradient(|x| r.laplacian(x).unwrap().0, &grad, m.vertices(), 1e-6);
    }

    #[test]
    fn triangle_gradient_matches_finite_differences() {
        let m = random_patch(2);
        let r = Regularizers::new(&m);
        let (_, grad) = r.triangle_quality(m.vertices());
        check_gradient(|x| r.triangle_quality(x).0, &grad, m.vertices(), 1e-5);
    }

    #[test]
    fn equilateral_mesh_has_no_edge_penalty() {
        let s = 3f64.sqrt() / 2.0;
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::new(0.5, s, 0.0), Vec3::new(1.5, s, 0.0)];
        let m = TriMesh::new(v, vec![[0, 1, 2], [1, 3, 2]]).unwrap();
        let (value, _) = triangle_quality_loss(&m);
        let area = s / 2.0;
        let eps = (1e-3f64).powi(4);
        assert!((value - eps / (area * area + eps)).abs() < 1e-15);
    }

    #[test]
    fn shrinking_triangle_area_term_rises_to_one() {
        let mut last = 0.0;
        for k in 0..12 {
            let h = 10f64.powi(-k);
            let m = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::new(0.5, h, 0.0)], vec![[0, 1, 2]]).unwrap();
            let lens = [1.0, (0.25 + h * h).sqrt(), (0.25 + h * h).sqrt()];
            let mean = lens.iter().sum::<f64>() / 3.0;
            let edge: f64 = lens.iter().map(|l| (l / mean - 1.0).powi(2)).sum::<f64>() / 3.0;
            let term = triangle_quality_loss(&m).0 - edge;
            assert!(term >= last);
            last = term;
        }
        assert!(last > 0.99);
    }
}
