//! Per-face Jacobian parameterization of a deformation and the Poisson solve
//! that integrates it back into vertex positions.
//!
//! The deformation gradient of a face is `D = Σ_k v_k g_kᵀ`, where `g_k` is
//! the rest-space gradient of the hat function of corner `k`. Positions are
//! recovered from target Jacobians `J` by minimizing `Σ_f A_f ‖D_f − J_f‖²`,
//! which splits into one sparse normal-equation solve per coordinate.

use std::ops::{Index, IndexMut};

use nalgebra::Matrix3;
use sprs::{CsMat, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};
use thiserror::Error;

use crate::mesh::{EdgeTopology, MeshError, TriMesh, Vec3, MIN_FACE_AREA};

#[derive(Debug, Error)]
pub enum DeformError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("factorization failed: {0}")]
    FactorizationFailed(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One 3×3 deformation gradient per face. Row `c` maps rest-space
/// directions to output coordinate `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField(Vec<Matrix3<f64>>);

impl JacobianField {
    pub fn identity(face_count: usize) -> Self {
        Self(vec![Matrix3::identity(); face_count])
    }

    pub fn uniform(face_count: usize, m: Matrix3<f64>) -> Self {
        Self(vec![m; face_count])
    }

    pub fn zeros(face_count: usize) -> Self {
        Self(vec![Matrix3::zeros(); face_count])
    }

    pub fn from_matrices(m: Vec<Matrix3<f64>>) -> Self {
        Self(m)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Matrix3<f64>] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Matrix3<f64>] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Frobenius inner product summed over faces.
    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|m| m * s).collect())
    }

    /// Entries in face-major, row-major order.
    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|m| (0..9).map(move |i| m[(i / 3, i % 3)])).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        Self(values.chunks_exact(9).map(|c| Matrix3::from_row_slice(c)).collect())
    }
}

impl Index<usize> for JacobianField {
    type Output = Matrix3<f64>;
    fn index(&self, i: usize) -> &Matrix3<f64> {
        &self.0[i]
    }
}

impl IndexMut<usize> for JacobianField {
    fn index_mut(&mut self, i: usize) -> &mut Matrix3<f64> {
        &mut self.0[i]
    }
}

/// Hat-function gradients of the rest mesh, one triple per face.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    faces: Vec<[usize; 3]>,
    grads: Vec<[Vec3; 3]>,
    areas: Vec<f64>,
    vertex_count: usize,
}

impl GradientOperator {
    pub fn new(rest: &TriMesh) -> Result<Self, DeformError> {
        let mut grads = Vec::with_capacity(rest.face_count());
        let mut areas = Vec::with_capacity(rest.face_count());
        let mut degenerate = Vec::new();
        for f in 0..rest.face_count() {
            let [a, b, c] = rest.face_corners(f);
            let n = (b - a).cross(&(c - a));
            let twice_area = n.norm();
            if twice_area * 0.5 <= MIN_FACE_AREA {
                degenerate.push(f);
                grads.push([Vec3::zeros(); 3]);
                areas.push(0.0);
                continue;
            }
            let nh = n / twice_area;
            // gradient of corner k's hat function: rotate the opposite edge in-plane
            let g = |p: &Vec3, q: &Vec3| nh.cross(&(q - p)) / twice_area;
            grads.push([g(&b, &c), g(&c, &a), g(&a, &b)]);
            areas.push(0.5 * twice_area);
        }
        if !degenerate.is_empty() {
            return Err(MeshError::DegenerateFaces { faces: degenerate }.into());
        }
        Ok(Self { faces: rest.faces().to_vec(), grads, areas, vertex_count: rest.vertex_count() })
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn corner_gradients(&self, face: usize) -> &[Vec3; 3] {
        &self.grads[face]
    }

    /// Per-face gradient of a per-vertex scalar function.
    pub fn apply(&self, values: &[f64]) -> Vec<Vec3> {
        self.faces
            .iter()
            .zip(&self.grads)
            .map(|(f, g)| g[0] * values[f[0]] + g[1] * values[f[1]] + g[2] * values[f[2]])
            .collect()
    }

    /// Deformation gradients of the map taking rest vertices to `positions`.
    pub fn face_jacobians(&self, positions: &[Vec3]) -> JacobianField {
        JacobianField(
            self.faces
                .iter()
                .zip(&self.grads)
                .map(|(f, g)| (0..3).map(|k| positions[f[k]] * g[k].transpose()).sum())
                .collect(),
        )
    }

    /// Sparse `Gᵀ M G`, assembled from the per-face 3×3 blocks.
    pub fn normal_matrix(&self) -> CsMat<f64> {
        let mut tri = TriMat::with_capacity((self.vertex_count, self.vertex_count), 9 * self.faces.len());
        for ((f, g), &a) in self.faces.iter().zip(&self.grads).zip(&self.areas) {
            for i in 0..3 {
                for j in 0..3 {
                    tri.add_triplet(f[i], f[j], a * g[i].dot(&g[j]));
                }
            }
        }
        tri.to_csc()
    }

    /// `Gᵀ M j` for one output coordinate, where `j` holds row `coord` of each face's matrix.
    fn weighted_divergence(&self, jac: &JacobianField, coord: usize) -> Vec<f64> {
        let mut rhs = vec![0.0; self.vertex_count];
        for (((f, g), &a), m) in self.faces.iter().zip(&self.grads).zip(&self.areas).zip(&jac.0) {
            let row = Vec3::new(m[(coord, 0)], m[(coord, 1)], m[(coord, 2)]);
            for k in 0..3 {
                rhs[f[k]] += a * g[k].dot(&row);
            }
        }
        rhs
    }
}

/// Prefactorized normal equations with a fixed set of pinned vertices.
pub struct PoissonSystem {
    matrix: CsMat<f64>,
    reduced: CsMat<f64>,
    factor: LdlNumeric<f64, usize>,
    pins: Vec<(usize, Vec3)>,
    // position of each vertex in the reduced system, `None` when pinned
    free_index: Vec<Option<usize>>,
    free_vertices: Vec<usize>,
}

impl std::fmt::Debug for PoissonSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonSystem")
            .field("size", &self.matrix.rows())
            .field("nnz", &self.matrix.nnz())
            .field("pins", &self.pins)
            .finish()
    }
}

/// Builds the operator and a system pinned at the lowest-index vertex.
pub fn build_system(rest: &TriMesh) -> Result<(GradientOperator, PoissonSystem), DeformError> {
    let op = GradientOperator::new(rest)?;
    let sys = PoissonSystem::new(&op, rest, &[0])?;
    Ok((op, sys))
}

impl PoissonSystem {
    /// Pins the listed vertices at their rest positions. Every connected
    /// component needs at least one pin.
    pub fn new(op: &GradientOperator, rest: &TriMesh, pins: &[usize]) -> Result<Self, DeformError> {
        let n = op.vertex_count;
        let mut pins: Vec<usize> = pins.to_vec();
        pins.sort_unstable();
        pins.dedup();
        if pins.is_empty() || pins.iter().any(|&p| p >= n) {
            return Err(DeformError::FactorizationFailed("pin indices missing or out of range".into()));
        }
        let topo = EdgeTopology::new(&op.faces, n);
        let unpinned_components = count_components_without(&topo, &pins);
        if unpinned_components > 0 {
            return Err(DeformError::FactorizationFailed(format!(
                "{unpinned_components} connected component(s) have no pinned vertex"
            )));
        }
        let mut free_index = vec![None; n];
        let mut free_vertices = Vec::with_capacity(n);
        for (v, slot) in free_index.iter_mut().enumerate() {
            if pins.binary_search(&v).is_err() {
                *slot = Some(free_vertices.len());
                free_vertices.push(v);
            }
        }
        if free_vertices.is_empty() {
            return Err(DeformError::FactorizationFailed("every vertex is pinned".into()));
        }
        let matrix = op.normal_matrix();
        let mut tri = TriMat::new((free_vertices.len(), free_vertices.len()));
        for (val, (r, c)) in matrix.iter() {
            if let (Some(i), Some(j)) = (free_index[r], free_index[c]) {
                tri.add_triplet(i, j, *val);
            }
        }
        let reduced: CsMat<f64> = tri.to_csc();
        let factor = Ldl::new()
            .fill_in_reduction(sprs::FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
            .numeric(reduced.view())
            .map_err(|e| DeformError::FactorizationFailed(e.to_string()))?;
        let dmax = factor.d().iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if factor.d().iter().any(|&d| !(d > 1e-12 * dmax)) {
            return Err(DeformError::FactorizationFailed("matrix is not positive definite".into()));
        }
        let pins = pins.into_iter().map(|p| (p, rest.vertices()[p])).collect();
        Ok(Self { matrix, reduced, factor, pins, free_index, free_vertices })
    }

    pub fn matrix(&self) -> &CsMat<f64> {
        &self.matrix
    }

    pub fn pins(&self) -> &[(usize, Vec3)] {
        &self.pins
    }

    pub fn vertex_count(&self) -> usize {
        self.free_index.len()
    }

    fn solve_reduced(&self, rhs: &[f64]) -> Vec<f64> {
        let rhs = rhs.to_vec();
        self.factor.solve(&rhs)
    }

    /// Vertex positions whose face Jacobians best match `jac` in the area-weighted least-squares sense.
    pub fn solve_positions(&self, op: &GradientOperator, jac: &JacobianField) -> Result<Vec<Vec3>, DeformError> {
        if jac.len() != op.face_count() {
            return Err(DeformError::LengthMismatch { expected: op.face_count(), got: jac.len() });
        }
        if !jac.is_finite() {
            return Err(DeformError::NonFinite("jacobian field"));
        }
        let mut out = vec![Vec3::zeros(); self.vertex_count()];
        for &(p, pos) in &self.pins {
            out[p] = pos;
        }
        for c in 0..3 {
            let full = op.weighted_divergence(jac, c);
            let mut rhs: Vec<f64> = self.free_vertices.iter().map(|&v| full[v]).collect();
            // move the pinned columns to the right-hand side
            for &(p, pos) in &self.pins {
                let col = self.matrix.outer_view(p).expect("pin column");
                for (r, &val) in col.iter() {
                    if let Some(i) = self.free_index[r] {
                        rhs[i] -= val * pos[c];
                    }
                }
            }
            let x = self.solve_reduced(&rhs);
            for (i, &v) in self.free_vertices.iter().enumerate() {
                out[v][c] = x[i];
            }
        }
        Ok(out)
    }

    /// Pulls a vertex-position gradient back to the Jacobian field with one
    /// solve per coordinate on the same factorization.
    pub fn adjoint_gradient(&self, op: &GradientOperator, grad_vertices: &[Vec3]) -> Result<JacobianField, DeformError> {
        if grad_vertices.len() != self.vertex_count() {
            return Err(DeformError::LengthMismatch { expected: self.vertex_count(), got: grad_vertices.len() });
        }
        if grad_vertices.iter().any(|g| !g.iter().all(|x| x.is_finite())) {
            return Err(DeformError::NonFinite("vertex gradient"));
        }
        let mut lambda = vec![Vec3::zeros(); self.vertex_count()];
        for c in 0..3 {
            let rhs: Vec<f64> = self.free_vertices.iter().map(|&v| grad_vertices[v][c]).collect();
            let x = self.solve_reduced(&rhs);
            for (i, &v) in self.free_vertices.iter().enumerate() {
                lambda[v][c] = x[i];
            }
        }
        Ok(JacobianField(
            op.faces
                .iter()
                .zip(&op.grads)
                .zip(&op.areas)
                .map(|((f, g), &a)| (0..3).map(|k| lambda[f[k]] * g[k].transpose()).sum::<Matrix3<f64>>() * a)
                .collect(),
        ))
    }

    /// Relative residual `‖L_ff x − b‖ / ‖b‖` of the reduced system for a given right-hand side.
    pub fn reduced_residual(&self, rhs: &[f64]) -> f64 {
        let x = self.solve_reduced(rhs);
        let mut ax = vec![0.0; rhs.len()];
        for (val, (r, c)) in self.reduced.iter() {
            ax[r] += val * x[c];
        }
        let num: f64 = ax.iter().zip(rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        num / den.max(f64::MIN_POSITIVE)
    }

    pub fn free_count(&self) -> usize {
        self.free_vertices.len()
    }
}

/// Number of face-connected components that contain none of `pins`.
fn count_components_without(topo: &EdgeTopology, pins: &[usize]) -> usize {
    let n = topo.vertex_count;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut used = vec![false; n];
    for &[a, b] in &topo.edges {
        used[a] = true;
        used[b] = true;
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut pinned_roots: Vec<usize> = pins.iter().map(|&p| find(&mut parent, p)).collect();
    pinned_roots.sort_unstable();
    (0..n)
        .filter(|&v| used[v] && find(&mut parent, v) == v)
        .filter(|r| pinned_roots.binary_search(r).is_err())
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;
    use nalgebra::{DMatrix, Rotation3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bumpy_patch(nx: usize, ny: usize) -> TriMesh {
        let g = primitives::grid(nx, ny, 1.0, 0.6);
        let v = g
            .vertices()
            .iter()
            .map(|p| Vec3::new(p.x + 0.05 * (3.0 * p.y).sin(), p.y, 0.2 * (2.0 * p.x).sin() * (3.0 * p.y).cos()))
            .collect();
        g.with_vertices(v).unwrap()
    }

    fn random_field(n: usize, rng: &mut ChaCha8Rng, spread: f64) -> JacobianField {
        JacobianField::from_matrices(
            (0..n)
                .map(|_| Matrix3::identity() + Matrix3::from_fn(|_, _| rng.random_range(-spread..spread)))
                .collect(),
        )
    }

    #[test]
    fn right_triangle_gradient_of_x() {
        let m = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let op = GradientOperator::new(&m).unwrap();
        let g = op.apply(&[0.0, 1.0, 0.0]);
        assert!((g[0] - Vec3::x()).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn gradient_reproduces_affine_functions(ax in -3.0..3.0f64, ay in -3.0..3.0f64, az in -3.0..3.0f64, c in -5.0..5.0f64) {
            let mesh = primitives::icosphere(1, 1.3);
            let op = GradientOperator::new(&mesh).unwrap();
            let a = Vec3::new(ax, ay, az);
            let vals: Vec<f64> = mesh.vertices().iter().map(|p| a.dot(p) + c).collect();
            let consts = vec![c; mesh.vertex_count()];
            for (f, (g, z)) in op.apply(&vals).iter().zip(op.apply(&consts)).enumerate() {
                prop_assert!(z.norm() < 1e-10);
                // only the tangential part of `a` is recoverable on a face
                let n = mesh.face_normal(f);
                let tangential = a - n * n.dot(&a);
                prop_assert!((g - tangential).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn planar_gradient_recovers_full_vector() {
        let mesh = primitives::grid(4, 3, 1.0, 1.0);
        let op = GradientOperator::new(&mesh).unwrap();
        let a = Vec3::new(0.7, -1.3, 0.0);
        let vals: Vec<f64> = mesh.vertices().iter().map(|p| a.dot(p)).collect();
        for g in op.apply(&vals) {
            assert!((g - a).norm() < 1e-8);
        }
    }

    #[test]
    fn two_components_need_two_pins() {
        let a = primitives::tetrahedron();
        let mut v = a.vertices().to_vec();
        v.extend(a.vertices().iter().map(|p| p + Vec3::new(4.0, 0.0, 0.0)));
        let mut f = a.faces().to_vec();
        f.extend(a.faces().iter().map(|t| [t[0] + 4, t[1] + 4, t[2] + 4]));
        let mesh = TriMesh::new(v, f).unwrap();
        assert!(matches!(build_system(&mesh), Err(DeformError::FactorizationFailed(_))));
        let op = GradientOperator::new(&mesh).unwrap();
        let sys = PoissonSystem::new(&op, &mesh, &[0, 4]).unwrap();
        let x = sys.solve_positions(&op, &JacobianField::identity(mesh.face_count())).unwrap();
        for (p, q) in x.iter().zip(mesh.vertices()) {
            assert!((p - q).norm() < 1e-8);
        }
    }

    #[test]
    fn normal_matrix_matches_dense_assembly() {
        let mesh = bumpy_patch(10, 10);
        let op = GradientOperator::new(&mesh).unwrap();
        let n = mesh.vertex_count();
        // independent gradient: G_f = E (EᵀE)⁻¹ selects the rows of the edge basis
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for f in 0..mesh.face_count() {
            let [a, b, c] = mesh.face_corners(f);
            let e = nalgebra::Matrix3x2::from_columns(&[b - a, c - a]);
            let pinv = e * (e.transpose() * e).try_inverse().unwrap();
            // hat gradients: corner 1 -> column 0, corner 2 -> column 1, corner 0 -> minus their sum
            let g1 = pinv.column(0).into_owned();
            let g2 = pinv.column(1).into_owned();
            let g = [-(g1 + g2), g1, g2];
            let area = mesh.face_area(f);
            let idx = mesh.faces()[f];
            for i in 0..3 {
                for j in 0..3 {
                    dense[(idx[i], idx[j])] += area * g[i].dot(&g[j]);
                }
            }
        }
        let sparse = op.normal_matrix();
        let mut max_err: f64 = 0.0;
        let mut asym: f64 = 0.0;
        let mut full = DMatrix::<f64>::zeros(n, n);
        for (val, (r, c)) in sparse.iter() {
            full[(r, c)] = *val;
        }
        for r in 0..n {
            for c in 0..n {
                max_err = max_err.max((full[(r, c)] - dense[(r, c)]).abs());
                asym = asym.max((full[(r, c)] - full[(c, r)]).abs());
            }
        }
        assert!(max_err < 1e-10, "{max_err}");
        assert!(asym < 1e-12);
    }

    #[test]
    fn identity_scale_and_rotation_are_reproduced() {
        let mesh = bumpy_patch(6, 5);
        let (op, sys) = build_system(&mesh).unwrap();
        let rest = mesh.vertices();
        let pin = rest[0];
        let id = sys.solve_positions(&op, &JacobianField::identity(mesh.face_count())).unwrap();
        let twice = sys.solve_positions(&op, &JacobianField::uniform(mesh.face_count(), Matrix3::identity() * 2.0)).unwrap();
        let rot = Rotation3::from_euler_angles(0.3, -0.5, 1.1).into_inner();
        let rotated = sys.solve_positions(&op, &JacobianField::uniform(mesh.face_count(), rot)).unwrap();
        for i in 0..mesh.vertex_count() {
            assert!((id[i] - rest[i]).norm() < 1e-8);
            assert!((twice[i] - (pin + 2.0 * (rest[i] - pin))).norm() < 1e-8);
            assert!((rotated[i] - (pin + rot * (rest[i] - pin))).norm() < 1e-8);
        }
        assert_eq!(twice[0], pin);
    }

    #[test]
    fn projection_is_idempotent_and_pin_fixed() {
        let mesh = bumpy_patch(6, 6);
        let (op, sys) = build_system(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let jac = random_field(mesh.face_count(), &mut rng, 0.4);
        let x1 = sys.solve_positions(&op, &jac).unwrap();
        assert_eq!(x1[0], mesh.vertices()[0]);
        let x2 = sys.solve_positions(&op, &op.face_jacobians(&x1)).unwrap();
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).norm() < 1e-8);
        }
        let rhs: Vec<f64> = (0..sys.free_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(sys.reduced_residual(&rhs) < 1e-8);
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let mesh = bumpy_patch(5, 2);
        assert_eq!(mesh.face_count(), 20);
        let (op, sys) = build_system(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target: Vec<Vec3> = mesh.vertices().iter().map(|p| p + Vec3::new(rng.random_range(-0.1..0.1), 0.05, 0.0)).collect();
        let loss = |j: &JacobianField| -> f64 {
            let x = sys.solve_positions(&op, j).unwrap();
            x.iter().zip(&target).map(|(a, b)| (a - b).norm_squared()).sum()
        };
        let jac = random_field(mesh.face_count(), &mut rng, 0.2);
        let x = sys.solve_positions(&op, &jac).unwrap();
        let dv: Vec<Vec3> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        let grad = sys.adjoint_gradient(&op, &dv).unwrap();
        let flat = jac.flat();
        let gflat = grad.flat();
        let h = 1e-5;
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += h;
            let mut m = flat.clone();
            m[i] -= h;
            let fd = (loss(&JacobianField::from_flat(&p)) - loss(&JacobianField::from_flat(&m))) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(gflat[i].abs()).max(1e-6);
            assert!((fd - gflat[i]).abs() <= tol, "entry {i}: fd {fd} vs {}", gflat[i]);
        }
    }

    #[test]
    fn adjoint_is_linear_and_consistent() {
        let mesh = bumpy_patch(4, 4);
        let (op, sys) = build_system(&mesh).unwrap();
        let zero = sys.adjoint_gradient(&op, &vec![Vec3::zeros(); mesh.vertex_count()]).unwrap();
        assert!(zero.flat().iter().all(|&x| x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dv: Vec<Vec3> = (0..mesh.vertex_count())
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let g1 = sys.adjoint_gradient(&op, &dv).unwrap();
        let dv2: Vec<Vec3> = dv.iter().map(|g| g * 2.0).collect();
        let g2 = sys.adjoint_gradient(&op, &dv2).unwrap();
        assert_eq!(g2, g1.scaled(2.0));
        // <dL/dJ, δJ> = <dL/dV, δV> where δV is the (linear) response to δJ with pins fixed
        for _ in 0..5 {
            let dj = random_field(mesh.face_count(), &mut rng, 1.0);
            let dj = JacobianField::from_matrices(dj.as_slice().iter().map(|m| m - Matrix3::identity()).collect());
            let base = sys.solve_positions(&op, &JacobianField::zeros(mesh.face_count())).unwrap();
            let resp = sys.solve_positions(&op, &dj).unwrap();
            let lhs = g1.dot(&dj);
            let rhs: f64 = dv.iter().zip(resp.iter().zip(&base)).map(|(g, (a, b))| g.dot(&(a - b))).sum();
            assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mesh = bumpy_patch(2, 2);
        let (op, sys) = build_system(&mesh).unwrap();
        let mut j = JacobianField::identity(mesh.face_count());
        j[0][(1, 1)] = f64::NAN;
        assert!(matches!(sys.solve_positions(&op, &j), Err(DeformError::NonFinite(_))));
        assert!(matches!(sys.solve_positions(&op, &JacobianField::identity(1)), Err(DeformError::LengthMismatch { .. })));
        let mut g = vec![Vec3::zeros(); mesh.vertex_count()];
        g[1].x = f64::INFINITY;
        assert!(matches!(sys.adjoint_gradient(&op, &g), Err(DeformError::NonFinite(_))));
    }
}
