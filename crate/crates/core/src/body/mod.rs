//! Parametric body: blendshapes, linear blend skinning and a rigid similarity,
//! fitted under a fixed garment.

mod file;
mod fit;
mod pose;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{MeshError, TriMesh, Vec3};

pub use file::{decode_body, encode_body, load_body, save_body, BODY_MAGIC, BODY_VERSION};
pub use fit::{collision_penalty, fit_body_to_garment, penetration_fraction, CollisionPenalty, FitConfig, FitReport, StageConfig};
pub use pose::{pose_body, pose_jacobian, rotation_action_jacobian, PoseJacobian};

#[derive(Debug, Error)]
pub enum BodyError {
    #[error("invalid body: {0}")]
    Invalid(String),
    #[error("invalid fit parameters: {0}")]
    InvalidParams(String),
    #[error("body fit diverged in stage {stage} at iteration {iteration}")]
    Diverged { stage: usize, iteration: usize },
    #[error("corrupt body file: {0}")]
    Corrupt(&'static str),
    #[error("body file version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Skeleton joint; the rest transform is a translation to `rest_position`.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub parent: Option<usize>,
    pub rest_position: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricBody {
    template: TriMesh,
    /// `shape_basis[i][v]` is the offset of vertex `v` per unit of coefficient `i`.
    shape_basis: Vec<Vec<Vec3>>,
    joints: Vec<Joint>,
    /// Row-major `V × J` skinning weights.
    weights: Vec<f64>,
}

impl ParametricBody {
    pub fn new(template: TriMesh, shape_basis: Vec<Vec<Vec3>>, joints: Vec<Joint>, weights: Vec<f64>) -> Result<Self, BodyError> {
        let v = template.vertex_count();
        let j = joints.len();
        if j == 0 {
            return Err(BodyError::Invalid("no joints".into()));
        }
        if let Some(i) = shape_basis.iter().position(|s| s.len() != v) {
            return Err(BodyError::Invalid(format!("blendshape {i} has the wrong vertex count")));
        }
        if shape_basis.iter().flatten().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(BodyError::Invalid("non-finite blendshape".into()));
        }
        let roots = joints.iter().filter(|jt| jt.parent.is_none()).count();
        if roots != 1 || joints[0].parent.is_some() {
            return Err(BodyError::Invalid("skeleton must have exactly one root, joint 0".into()));
        }
        if let Some(k) = joints.iter().enumerate().position(|(k, jt)| jt.parent.is_some_and(|p| p >= k)) {
            return Err(BodyError::Invalid(format!("joint {k} must come after its parent")));
        }
        if weights.len() != v * j {
            return Err(BodyError::Invalid(format!("expected {} skinning weights, got {}", v * j, weights.len())));
        }
        for (vi, row) in weights.chunks_exact(j).enumerate() {
            if row.iter().any(|w| !(*w >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(BodyError::Invalid(format!("skinning weights of vertex {vi} are not a distribution")));
            }
        }
        Ok(Self { template, shape_basis, joints, weights })
    }

    pub fn renamed(mut self, name: &str) -> Self {
        self.template = self.template.named(name);
        self
    }

    pub fn template(&self) -> &TriMesh {
        &self.template
    }

    pub fn shape_basis(&self) -> &[Vec<Vec3>] {
        &self.shape_basis
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shape_count(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn vertex_weights(&self, v: usize) -> &[f64] {
        &self.weights[v * self.joints.len()..(v + 1) * self.joints.len()]
    }

    /// Whether joint `ancestor` lies on the path from `joint` to the root (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, mut joint: usize) -> bool {
        loop {
            if joint == ancestor {
                return true;
            }
            match self.joints[joint].parent {
                Some(p) => joint = p,
                None => return false,
            }
        }
    }

    /// Two-bone capsule with an elliptic cross-section, standing on the y axis
    /// from −0.5 m to 0.5 m. Joint 0 sits at the bottom, joint 1 at the
    /// middle. Blendshape 0 tapers both radii linearly in height, blendshape 1
    /// tapers them in opposite directions; both vanish at the middle.
    pub fn test_body() -> Self {
        const SEGMENTS: usize = 32;
        const SHAFT_RINGS: usize = 16;
        const CAP_RINGS: usize = 6;
        const HALF_HEIGHT: f64 = 0.5;
        const CAP_HEIGHT: f64 = 0.12;
        let (rx, rz) = (0.16, 0.11);
        let shaft = HALF_HEIGHT - CAP_HEIGHT;

        let mut profile: Vec<(f64, f64)> = Vec::new();
        for i in 1..=CAP_RINGS {
            let phi = std::f64::consts::FRAC_PI_2 * (1.0 - i as f64 / CAP_RINGS as f64);
            profile.push((-shaft - CAP_HEIGHT * phi.sin(), phi.cos()));
        }
        for i in 1..SHAFT_RINGS {
            profile.push((-shaft + 2.0 * shaft * i as f64 / SHAFT_RINGS as f64, 1.0));
        }
        for i in 0..CAP_RINGS {
            let phi = std::f64::consts::FRAC_PI_2 * i as f64 / CAP_RINGS as f64;
            profile.push((shaft + CAP_HEIGHT * phi.sin(), phi.cos()));
        }

        let mut vertices = vec![Vec3::new(0.0, -HALF_HEIGHT, 0.0)];
        for &(y, f) in &profile {
            for s in 0..SEGMENTS {
                let t = std::f64::consts::TAU * s as f64 / SEGMENTS as f64;
                vertices.push(Vec3::new(rx * f * t.sin(), y, rz * f * t.cos()));
            }
        }
        let top = vertices.len();
        vertices.push(Vec3::new(0.0, HALF_HEIGHT, 0.0));
        let id = |ring: usize, s: usize| 1 + ring * SEGMENTS + s % SEGMENTS;
        let mut faces = Vec::new();
        for s in 0..SEGMENTS {
            faces.push([0, id(0, s + 1), id(0, s)]);
        }
        for ring in 0..profile.len() - 1 {
            for s in 0..SEGMENTS {
                faces.push([id(ring, s), id(ring, s + 1), id(ring + 1, s + 1)]);
                faces.push([id(ring, s), id(ring + 1, s + 1), id(ring + 1, s)]);
            }
        }
        let last = profile.len() - 1;
        for s in 0..SEGMENTS {
            faces.push([id(last, s), id(last, s + 1), top]);
        }
        let template = TriMesh::new(vertices, faces).expect("capsule is valid").named("test_body");

        let taper = |p: &Vec3, sign: f64| Vec3::new(0.1 * p.x * p.y / HALF_HEIGHT, 0.0, sign * 0.1 * p.z * p.y / HALF_HEIGHT);
        let shape_basis = vec![
            template.vertices().iter().map(|p| taper(p, 1.0)).collect(),
            template.vertices().iter().map(|p| taper(p, -1.0)).collect(),
        ];
        let joints = vec![
            Joint { parent: None, rest_position: Vec3::new(0.0, -HALF_HEIGHT, 0.0) },
            Joint { parent: Some(0), rest_position: Vec3::zeros() },
        ];
        let blend = |y: f64| {
            let t = ((y + 0.08) / 0.16).clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        };
        let weights = template.vertices().iter().flat_map(|p| [1.0 - blend(p.y), blend(p.y)]).collect();
        Self::new(template, shape_basis, joints, weights).expect("test body is valid")
    }
}

/// Similarity, shape and articulation of a posed body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// m
    pub translation: Vec3,
    /// Axis-angle, radians.
    pub rotation: Vec3,
    pub scale: f64,
    pub shape_coeffs: Vec<f64>,
    /// Axis-angle per joint, radians.
    pub pose: Vec<Vec3>,
}

impl FitParams {
    pub fn identity(body: &ParametricBody) -> Self {
        Self { translation: Vec3::zeros(), rotation: Vec3::zeros(), scale: 1.0, shape_coeffs: vec![0.0; body.shape_count()], pose: vec![Vec3::zeros(); body.joint_count()] }
    }

    pub fn validate(&self, body: &ParametricBody) -> Result<(), BodyError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(BodyError::InvalidParams(format!("scale {} must be positive", self.scale)));
        }
        if self.shape_coeffs.len() != body.shape_count() || self.pose.len() != body.joint_count() {
            return Err(BodyError::InvalidParams("coefficient counts do not match the body".into()));
        }
        let finite = self.translation.iter().chain(self.rotation.iter()).chain(self.shape_coeffs.iter()).chain(self.pose.iter().flat_map(|p| p.iter())).all(|x| x.is_finite());
        if !finite {
            return Err(BodyError::InvalidParams("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Number of scalar parameters: translation, rotation, scale, shape, pose.
    pub fn dimension(&self) -> usize {
        7 + self.shape_coeffs.len() + 3 * self.pose.len()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *nalgebra::Rotation3::new(self.rotation).matrix()
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dimension());
        v.extend(self.translation.iter());
        v.extend(self.rotation.iter());
        v.push(self.scale);
        v.extend(self.shape_coeffs.iter());
        v.extend(self.pose.iter().flat_map(|p| p.iter().copied()));
        v
    }

    pub fn from_vector(values: &[f64], shapes: usize, joints: usize) -> Self {
        let at = |i: usize| Vec3::new(values[i], values[i + 1], values[i + 2]);
        Self {
            translation: at(0),
            rotation: at(3),
            scale: values[6],
            shape_coeffs: values[7..7 + shapes].to_vec(),
            pose: (0..joints).map(|j| at(7 + shapes + 3 * j)).collect(),
        }
    }
}
