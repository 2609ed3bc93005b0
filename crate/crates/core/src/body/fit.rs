use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pose::pose_jacobian;
use super::{BodyError, FitParams, ParametricBody};
use crate::losses::sample_surface;
use crate::mesh::{TriMesh, Vec3};
use crate::spatial::{SurfaceHit, TriangleBvh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub iterations: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Rigid and scale; then shape and pose; then collision resolution.
    pub stages: [StageConfig; 3],
    /// Learning rates decay by cosine to this fraction of each stage's rate.
    pub final_rate_fraction: f64,
    /// Learning-rate multiplier for shape coefficients.
    pub shape_rate_scale: f64,
    /// m
    pub margin: f64,
    pub collision_weight: f64,
    pub garment_samples: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            stages: [
                StageConfig { iterations: 300, learning_rate: 1e-2 },
                StageConfig { iterations: 500, learning_rate: 5e-3 },
                StageConfig { iterations: 200, learning_rate: 2e-3 },
            ],
            final_rate_fraction: 0.05,
            shape_rate_scale: 10.0,
            margin: 0.003,
            collision_weight: 1e4,
            garment_samples: 4000,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), BodyError> {
        let bad = |m: String| Err(BodyError::InvalidParams(m));
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
                return bad(format!("stage {} learning rate must be positive", i + 1));
            }
        }
        if !(self.final_rate_fraction > 0.0 && self.final_rate_fraction <= 1.0) {
            return bad("final_rate_fraction must lie in (0, 1]".into());
        }
        if !(self.shape_rate_scale > 0.0 && self.shape_rate_scale.is_finite()) {
            return bad("shape_rate_scale must be positive".into());
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) || !(self.collision_weight >= 0.0 && self.collision_weight.is_finite()) {
            return bad("margin and collision_weight must be non-negative".into());
        }
        if self.garment_samples == 0 {
            return bad("garment_samples must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: FitParams,
    /// Best parameters at the end of each stage.
    pub stage_params: Vec<FitParams>,
    /// Objective per iteration of each stage.
    pub histories: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionPenalty {
    pub value: f64,
    /// Gradient with respect to the body mesh vertices.
    pub vertex_gradient: Vec<Vec3>,
    /// Garment vertices with positive depth.
    pub penetrating: usize,
}

/// Depth of `g` below the `margin` shell of the body face `hit.face`.
fn depth(body: &TriMesh, hit: &SurfaceHit, g: &Vec3, margin: f64) -> f64 {
    (margin - (g - hit.point).dot(&body.face_normal(hit.face))).max(0.0)
}

fn closest_hits(bvh: &TriangleBvh, points: &[Vec3]) -> Vec<SurfaceHit> {
    points.par_iter().map(|p| bvh.closest_point(p).expect("body has faces")).collect()
}

/// Mean squared depth of garment vertices inside the body's `margin` shell,
/// with its gradient on body vertices. Depth is measured along the normal of
/// the face holding each vertex's closest body point.
pub fn collision_penalty(body: &TriMesh, garment: &TriMesh, margin: f64) -> CollisionPenalty {
    let bvh = TriangleBvh::new(body);
    penalty_with(body, &bvh, garment.vertices(), margin)
}

fn penalty_with(body: &TriMesh, bvh: &TriangleBvh, garment: &[Vec3], margin: f64) -> CollisionPenalty {
    let hits = closest_hits(bvh, garment);
    let n = garment.len().max(1) as f64;
    let mut value = 0.0;
    let mut penetrating = 0;
    let mut vertex_gradient = vec![Vec3::zeros(); body.vertex_count()];
    for (g, hit) in garment.iter().zip(&hits) {
        let d = depth(body, hit, g, margin);
        if d <= 0.0 {
            continue;
        }
        value += d * d;
        penetrating += 1;
        let [y0, y1, y2] = body.face_corners(hit.face);
        let (e1, e2) = (y1 - y0, y2 - y0);
        let normal = e1.cross(&e2);
        let len = normal.norm();
        if len == 0.0 {
            continue;
        }
        let unit = normal / len;
        let u = g - hit.point;
        // d(unit·u)/d(normal), then through normal = e1 × e2
        let w = (u - unit * unit.dot(&u)) / len;
        let dn = [-(e2.cross(&w) + w.cross(&e1)), e2.cross(&w), w.cross(&e1)];
        let scale = 2.0 * d / n;
        for k in 0..3 {
            let v = body.faces()[hit.face][k];
            // d = margin − (g − Σ b y)·unit
            vertex_gradient[v] += (unit * hit.barycentric[k] - dn[k]) * scale;
        }
    }
    CollisionPenalty { value: value / n, vertex_gradient, penetrating }
}

/// Fraction of garment vertices inside the body's `margin` shell.
pub fn penetration_fraction(body: &TriMesh, garment: &TriMesh, margin: f64) -> f64 {
    if garment.vertex_count() == 0 {
        return 0.0;
    }
    let bvh = TriangleBvh::new(body);
    let hits = closest_hits(&bvh, garment.vertices());
    let inside = garment.vertices().iter().zip(&hits).filter(|(g, h)| depth(body, h, g, margin) > 0.0).count();
    inside as f64 / garment.vertex_count() as f64
}

/// Mean squared point-to-surface distance from `points` to the body and its
/// gradient on body vertices.
fn chamfer_to_body(body: &TriMesh, bvh: &TriangleBvh, points: &[Vec3]) -> (f64, Vec<Vec3>) {
    let hits = closest_hits(bvh, points);
    let n = points.len() as f64;
    let mut grad = vec![Vec3::zeros(); body.vertex_count()];
    let mut value = 0.0;
    for (p, hit) in points.iter().zip(&hits) {
        value += hit.dist_sq;
        let r = (p - hit.point) * (-2.0 / n);
        for k in 0..3 {
            grad[body.faces()[hit.face][k]] += r * hit.barycentric[k];
        }
    }
    (value / n, grad)
}

/// Optimization variables: translation, rotation, log scale, shape, and the
/// pose of every non-root joint. The root's pose duplicates the global
/// rotation and stays at its initial value.
struct Layout {
    shapes: usize,
    joints: usize,
}

impl Layout {
    fn dimension(&self) -> usize {
        7 + self.shapes + 3 * (self.joints - 1)
    }

    fn encode(&self, p: &FitParams) -> Vec<f64> {
        let mut x = p.to_vector();
        x[6] = p.scale.ln();
        x.drain(7 + self.shapes..10 + self.shapes);
        x
    }

    fn decode(&self, x: &[f64], root_pose: Vec3) -> FitParams {
        let mut full = x.to_vec();
        full[6] = x[6].exp();
        full.splice(7 + self.shapes..7 + self.shapes, root_pose.iter().copied());
        FitParams::from_vector(&full, self.shapes, self.joints)
    }

    /// Gradient in variable space from a gradient over [`FitParams::to_vector`].
    fn reduce(&self, full: &[f64], scale: f64) -> Vec<f64> {
        let mut g = full.to_vec();
        g[6] *= scale;
        g.drain(7 + self.shapes..10 + self.shapes);
        g
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETAS: (f64, f64) = (0.9, 0.999);
    const EPSILON: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], rates: &[f64]) {
        let (b1, b2) = Self::BETAS;
        self.t += 1;
        let (c1, c2) = (1.0 - b1.powi(self.t), 1.0 - b2.powi(self.t));
        for i in 0..x.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= rates[i] * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPSILON);
        }
    }
}

/// Fits the body under a fixed garment in three stages and returns the best
/// parameters of each. The garment is only read.
pub fn fit_body_to_garment(body: &ParametricBody, garment: &TriMesh, initial: &FitParams, config: &FitConfig) -> Result<FitReport, BodyError> {
    config.validate()?;
    initial.validate(body)?;
    if garment.face_count() == 0 {
        return Err(BodyError::InvalidParams("garment has no faces".into()));
    }
    let samples = sample_surface(garment, config.garment_samples, config.seed).points;
    if samples.is_empty() {
        return Err(BodyError::InvalidParams("garment has no surface area".into()));
    }
    let layout = Layout { shapes: body.shape_count(), joints: body.joint_count() };
    let root_pose = initial.pose[0];
    let mut x = layout.encode(initial);
    let mut stage_params = Vec::with_capacity(3);
    let mut histories = Vec::with_capacity(3);

    for (stage, sc) in config.stages.iter().enumerate() {
        let free = if stage == 0 { 7 } else { layout.dimension() };
        let collisions = stage == 2;
        let mut adam = Adam::new(x.len());
        let mut history = Vec::with_capacity(sc.iterations);
        let mut best = (f64::INFINITY, x.clone());
        for it in 0..sc.iterations {
            let params = layout.decode(&x, root_pose);
            let jac = pose_jacobian(body, &params);
            let bvh = TriangleBvh::new(&jac.mesh);
            let (mut loss, mut grad) = chamfer_to_body(&jac.mesh, &bvh, &samples);
            if collisions && config.collision_weight > 0.0 {
                let pen = penalty_with(&jac.mesh, &bvh, garment.vertices(), config.margin);
                loss += config.collision_weight * pen.value;
                for (g, p) in grad.iter_mut().zip(&pen.vertex_gradient) {
                    *g += p * config.collision_weight;
                }
            }
            let g = layout.reduce(&jac.pull_back(&grad), params.scale);
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(BodyError::Diverged { stage: stage + 1, iteration: it });
            }
            history.push(loss);
            if loss < best.0 {
                best = (loss, x.clone());
            }
            let progress = it as f64 / sc.iterations.max(1) as f64;
            let floor = sc.learning_rate * config.final_rate_fraction;
            let lr = floor + 0.5 * (sc.learning_rate - floor) * (1.0 + (std::f64::consts::PI * progress).cos());
            let rates: Vec<f64> = (0..x.len())
                .map(|i| match i {
                    i if i >= free => 0.0,
                    i if (7..7 + layout.shapes).contains(&i) => lr * config.shape_rate_scale,
                    _ => lr,
                })
                .collect();
            adam.step(&mut x, &g, &rates);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(BodyError::Diverged { stage: stage + 1, iteration: it });
            }
        }
        if best.0.is_finite() {
            x = best.1;
        }
        stage_params.push(layout.decode(&x, root_pose));
        histories.push(history);
    }
    let params = stage_params.last().cloned().expect("three stages");
    Ok(FitReport { params, stage_params, histories })
}
