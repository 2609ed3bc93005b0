use nalgebra::{DMatrix, Matrix3, Rotation3};
use rayon::prelude::*;

use super::{FitParams, ParametricBody};
use crate::mesh::{TriMesh, Vec3};

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `∂(R(ω) p) / ∂ω` for the exponential map `R(ω) = exp([ω]×)`.
pub fn rotation_action_jacobian(omega: &Vec3, p: &Vec3) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let r = *Rotation3::new(*omega).matrix();
    if theta2 < 1e-16 {
        return -skew(&(r * p));
    }
    -r * skew(p) * (omega * omega.transpose() + (r.transpose() - Matrix3::identity()) * skew(omega)) / theta2
}

/// Affine map `x -> m x + b`.
#[derive(Debug, Clone, Copy)]
struct Affine {
    m: Matrix3<f64>,
    b: Vec3,
}

impl Affine {
    const IDENTITY: Self = Self { m: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0), b: Vec3::new(0.0, 0.0, 0.0) };

    fn apply(&self, x: &Vec3) -> Vec3 {
        self.m * x + self.b
    }

    fn then(&self, inner: &Affine) -> Affine {
        Affine { m: self.m * inner.m, b: self.m * inner.b + self.b }
    }
}

struct Skinning {
    /// Rotation about each joint center in its parent's frame.
    local: Vec<Affine>,
    global: Vec<Affine>,
}

impl Skinning {
    fn new(body: &ParametricBody, params: &FitParams) -> Self {
        let local: Vec<Affine> = body
            .joints()
            .iter()
            .zip(&params.pose)
            .map(|(j, theta)| {
                let r = *Rotation3::new(*theta).matrix();
                Affine { m: r, b: j.rest_position - r * j.rest_position }
            })
            .collect();
        let mut global: Vec<Affine> = Vec::with_capacity(local.len());
        for (k, j) in body.joints().iter().enumerate() {
            let parent = j.parent.map_or(Affine::IDENTITY, |p| global[p]);
            global.push(parent.then(&local[k]));
        }
        Self { local, global }
    }

    /// Composition of the local maps strictly below `ancestor` down to `joint`.
    fn below(&self, body: &ParametricBody, ancestor: usize, mut joint: usize) -> Affine {
        let mut acc = Affine::IDENTITY;
        while joint != ancestor {
            acc = self.local[joint].then(&acc);
            joint = body.joints()[joint].parent.expect("ancestor lies on the path");
        }
        acc
    }
}

fn shaped_vertex(body: &ParametricBody, params: &FitParams, v: usize) -> Vec3 {
    body.shape_basis().iter().zip(&params.shape_coeffs).fold(body.template().vertices()[v], |acc, (s, beta)| acc + s[v] * *beta)
}

fn skinned(body: &ParametricBody, sk: &Skinning, x: &Vec3, v: usize) -> Vec3 {
    // displacement form keeps identity transforms exact
    x + body.vertex_weights(v).iter().zip(&sk.global).filter(|(w, _)| **w != 0.0).map(|(w, a)| (a.apply(x) - x) * *w).sum::<Vec3>()
}

/// Blendshapes, then skinning, then `scale · R · x + t`.
pub fn pose_body(body: &ParametricBody, params: &FitParams) -> TriMesh {
    let sk = Skinning::new(body, params);
    let r = params.rotation_matrix();
    let positions = (0..body.template().vertex_count())
        .into_par_iter()
        .map(|v| {
            let x = skinned(body, &sk, &shaped_vertex(body, params, v), v);
            params.scale * (r * x) + params.translation
        })
        .collect();
    body.template().with_vertices(positions).expect("template vertex count")
}

/// Posed positions with `∂position / ∂parameter` in [`FitParams::to_vector`] order.
#[derive(Debug, Clone)]
pub struct PoseJacobian {
    pub mesh: TriMesh,
    /// `3V × P`, rows `3v..3v+3` belong to vertex `v`.
    pub matrix: DMatrix<f64>,
}

impl PoseJacobian {
    /// `Jᵀ g` for per-vertex gradients `g`.
    pub fn pull_back(&self, grad: &[Vec3]) -> Vec<f64> {
        let g = nalgebra::DVector::from_iterator(3 * grad.len(), grad.iter().flat_map(|v| v.iter().copied()));
        (self.matrix.transpose() * g).iter().copied().collect()
    }
}

pub fn pose_jacobian(body: &ParametricBody, params: &FitParams) -> PoseJacobian {
    let sk = Skinning::new(body, params);
    let r = params.rotation_matrix();
    let s = params.scale;
    let shapes = body.shape_count();
    let joints = body.joint_count();
    let dim = params.dimension();
    let n = body.template().vertex_count();
    let rows: Vec<(Vec3, Vec<Vec3>)> = (0..n)
        .into_par_iter()
        .map(|v| {
            let xs = shaped_vertex(body, params, v);
            let x = skinned(body, &sk, &xs, v);
            let mut cols = vec![Vec3::zeros(); dim];
            for c in 0..3 {
                cols[c][c] = 1.0;
            }
            let dr = rotation_action_jacobian(&params.rotation, &x) * s;
            for c in 0..3 {
                cols[3 + c] = dr.column(c).into();
            }
            cols[6] = r * x;
            let weights = body.vertex_weights(v);
            let blend_m: Matrix3<f64> = weights.iter().zip(&sk.global).map(|(w, a)| a.m * *w).sum();
            for (i, basis) in body.shape_basis().iter().enumerate() {
                cols[7 + i] = s * (r * (blend_m * basis[v]));
            }
            for j in 0..joints {
                let parent_m = body.joints()[j].parent.map_or(Matrix3::identity(), |p| sk.global[p].m);
                let center = body.joints()[j].rest_position;
                let mut d = Matrix3::zeros();
                for (k, &w) in weights.iter().enumerate() {
                    if w == 0.0 || !body.is_ancestor(j, k) {
                        continue;
                    }
                    let q = sk.below(body, j, k).apply(&xs) - center;
                    d += parent_m * rotation_action_jacobian(&params.pose[j], &q) * w;
                }
                let d = (r * d) * s;
                for c in 0..3 {
                    cols[7 + shapes + 3 * j + c] = d.column(c).into();
                }
            }
            (s * (r * x) + params.translation, cols)
        })
        .collect();
    let mut matrix = DMatrix::zeros(3 * n, dim);
    let mut positions = Vec::with_capacity(n);
    for (v, (p, cols)) in rows.into_iter().enumerate() {
        positions.push(p);
        for (c, col) in cols.iter().enumerate() {
            for a in 0..3 {
                matrix[(3 * v + a, c)] = col[a];
            }
        }
    }
    PoseJacobian { mesh: body.template().with_vertices(positions).expect("template vertex count"), matrix }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn identity_params_give_template() {
        let body = ParametricBody::test_body();
        let m = pose_body(&body, &FitParams::identity(&body));
        assert_eq!(m.vertices(), body.template().vertices());
        assert_eq!(m.faces(), body.template().faces());
    }

    #[test]
    fn translation_only_shifts() {
        let body = ParametricBody::test_body();
        let t = Vec3::new(0.1, -0.2, 0.3);
        let m = pose_body(&body, &FitParams { translation: t, ..FitParams::identity(&body) });
        for (p, q) in m.vertices().iter().zip(body.template().vertices()) {
            assert_eq!(*p, q + t);
        }
    }

    #[test]
    fn knee_bend_matches_closed_form_skinning() {
        let body = ParametricBody::test_body();
        let mut params = FitParams::identity(&body);
        params.pose[1] = Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let m = pose_body(&body, &params);
        for (v, (p, q)) in m.vertices().iter().zip(body.template().vertices()).enumerate() {
            let w1 = body.vertex_weights(v)[1];
            // 90° about +z through the origin: (x, y, z) -> (−y, x, z)
            let bent = Vec3::new(-q.y, q.x, q.z);
            let expected = q * (1.0 - w1) + bent * w1;
            assert!((p - expected).norm() < 1e-8, "vertex {v}");
        }
    }

    #[test]
    fn rotation_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for scale in [0.0, 1e-9, 0.3, 2.5] {
            let omega = random_vec(&mut rng, 1.0).normalize() * scale;
            let p = random_vec(&mut rng, 1.0);
            let j = rotation_action_jacobian(&omega, &p);
            let h = 1e-6;
            for c in 0..3 {
                let mut a = omega;
                a[c] += h;
                let mut b = omega;
                b[c] -= h;
                let fd = (Rotation3::new(a) * p - Rotation3::new(b) * p) / (2.0 * h);
                assert!((fd - j.column(c)).norm() < 1e-8, "scale {scale} col {c}");
            }
        }
    }

    #[test]
    fn parameter_jacobian_matches_finite_differences() {
        let body = ParametricBody::test_body();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = FitParams {
            translation: random_vec(&mut rng, 0.1),
            rotation: random_vec(&mut rng, 0.5),
            scale: 1.1,
            shape_coeffs: vec![0.7, -1.2],
            pose: vec![random_vec(&mut rng, 0.4), random_vec(&mut rng, 0.6)],
        };
        let jac = pose_jacobian(&body, &params);
        assert_eq!(jac.mesh.vertices(), pose_body(&body, &params).vertices());
        let x0 = params.to_vector();
        let h = 1e-6;
        for c in 0..x0.len() {
            let mut a = x0.clone();
            a[c] += h;
            let mut b = x0.clone();
            b[c] -= h;
            let pa = pose_body(&body, &FitParams::from_vector(&a, 2, 2));
            let pb = pose_body(&body, &FitParams::from_vector(&b, 2, 2));
            for v in (0..pa.vertex_count()).step_by(13) {
                let fd = (pa.vertices()[v] - pb.vertices()[v]) / (2.0 * h);
                let an = Vec3::new(jac.matrix[(3 * v, c)], jac.matrix[(3 * v + 1, c)], jac.matrix[(3 * v + 2, c)]);
                let scale = fd.norm().max(an.norm()).max(1e-3);
                assert!((fd - an).norm() <= 1e-4 * scale, "param {c} vertex {v}: fd {fd:?} analytic {an:?}");
            }
        }
    }
}
