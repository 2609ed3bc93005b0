use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::mesh::{TriMesh, Vec3};

/// Pinhole camera. Camera space looks down −z with +y up; depth is −z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    /// `(width, height)` in pixels.
    pub resolution: (usize, usize),
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(position: Vec3, look_at: Vec3, up: Vec3, vertical_fov: f64, resolution: (usize, usize)) -> Result<Self, RenderError> {
        let dist = (look_at - position).norm();
        let cam = Self { position, look_at, up, vertical_fov, resolution, near: 0.05 * dist, far: 10.0 * dist.max(1e-9) };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_clip(mut self, near: f64, far: f64) -> Result<Self, RenderError> {
        self.near = near;
        self.far = far;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(RenderError::InvalidCamera(format!("field of view {} outside (0, 180)", self.vertical_fov)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(RenderError::InvalidCamera(format!("clip range [{}, {}] invalid", self.near, self.far)));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(RenderError::InvalidCamera("zero resolution".into()));
        }
        let dir = self.look_at - self.position;
        if !(dir.norm() > 0.0) || !(self.up.cross(&dir).norm() > 1e-12 * dir.norm() * self.up.norm()) {
            return Err(RenderError::InvalidCamera("up vector parallel to view direction".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.resolution.0
    }

    pub fn height(&self) -> usize {
        self.resolution.1
    }

    /// World-to-camera rotation; rows are right, up and backward.
    pub fn rotation(&self) -> Matrix3<f64> {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        Matrix3::from_rows(&[right.transpose(), up.transpose(), (-forward).transpose()])
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.height() as f64 / (0.5 * self.vertical_fov.to_radians()).tan()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * (p - self.position)
    }

    /// Screen position `(x, y)` in pixels and depth of a world point; `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        let depth = -c.z;
        if depth <= 0.0 {
            return None;
        }
        let f = self.focal();
        Some((0.5 * self.width() as f64 + f * c.x / depth, 0.5 * self.height() as f64 - f * c.y / depth, depth))
    }

    /// Camera-space direction through a screen position, scaled so its depth is 1.
    pub fn ray_direction(&self, px: f64, py: f64) -> Vec3 {
        let f = self.focal();
        Vec3::new((px - 0.5 * self.width() as f64) / f, -(py - 0.5 * self.height() as f64) / f, -1.0)
    }
}

/// Placement rules for generated camera sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigOptions {
    pub resolution: usize,
    pub vertical_fov: f64,
    /// Orbit radius as a multiple of the mesh bounding radius.
    pub radius_factor: f64,
    /// Elevation range in degrees for random sampling.
    pub elevation_range: (f64, f64),
}

impl Default for RigOptions {
    fn default() -> Self {
        Self { resolution: 256, vertical_fov: 60.0, radius_factor: 2.2, elevation_range: (-20.0, 40.0) }
    }
}

impl RigOptions {
    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution;
        self
    }
}

/// Camera on a sphere around `center`; azimuth 0 looks at the +z side.
pub fn orbit_camera(center: Vec3, radius: f64, azimuth_deg: f64, elevation_deg: f64, options: &RigOptions) -> Camera {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let offset = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * radius;
    Camera::new(center + offset, center, Vec3::y(), options.vertical_fov, (options.resolution, options.resolution))
        .expect("orbit camera with |elevation| < 90 is valid")
}

fn orbit_radius(mesh: &TriMesh, options: &RigOptions) -> f64 {
    (options.radius_factor * mesh.bounding_radius()).max(1e-9)
}

/// Random views looking at the mesh centroid; deterministic per seed.
pub fn sample_cameras(seed: u64, count: usize, mesh: &TriMesh, options: &RigOptions) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_cameras_with(&mut rng, count, mesh, options)
}

pub fn sample_cameras_with<R: Rng>(rng: &mut R, count: usize, mesh: &TriMesh, options: &RigOptions) -> Vec<Camera> {
    let center = mesh.centroid();
    let radius = orbit_radius(mesh, options);
    let (lo, hi) = options.elevation_range;
    (0..count)
        .map(|_| {
            let az = rng.random_range(0.0..360.0);
            let el = rng.random_range(lo..=hi);
            orbit_camera(center, radius, az, el, options)
        })
        .collect()
}

/// Evenly spaced azimuths at zero elevation.
pub fn stratified_cameras(count: usize, mesh: &TriMesh, options: &RigOptions) -> Vec<Camera> {
    let center = mesh.centroid();
    let radius = orbit_radius(mesh, options);
    (0..count).map(|i| orbit_camera(center, radius, 360.0 * i as f64 / count as f64, 0.0, options)).collect()
}
