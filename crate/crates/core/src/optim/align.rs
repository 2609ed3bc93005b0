use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::losses::{chamfer_one_directional, sample_surface};
use crate::mesh::{TriMesh, Vec3};

const ALIGN_SAMPLES: usize = 2000;
const ALIGN_SEED: u64 = 0x616c_6967;

/// Similarity applied to the guide: `p -> scale · R_y(yaw) (p − guide_centroid) + base_centroid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideAlignment {
    pub scale: f64,
    pub yaw_degrees: f64,
    pub guide_centroid: Vec3,
    pub base_centroid: Vec3,
}

impl GuideAlignment {
    pub fn rotation(&self) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vec3::y_axis(), self.yaw_degrees.to_radians()).matrix()
    }

    pub fn apply(&self, mesh: &TriMesh) -> TriMesh {
        let r = self.rotation();
        let v = mesh.vertices().iter().map(|p| self.scale * (r * (p - self.guide_centroid)) + self.base_centroid).collect();
        mesh.with_vertices(v).expect("same vertex count")
    }
}

/// Matches the guide's centroid and bounding radius to the base, then, when
/// `search_yaw` is set, keeps the quarter-turn about +y with the lowest
/// symmetric sampled Chamfer distance (earliest candidate on ties).
pub fn align_guide(base: &TriMesh, guide: &TriMesh, search_yaw: bool) -> (TriMesh, GuideAlignment) {
    let guide_radius = guide.bounding_radius();
    let scale = if guide_radius > 0.0 { base.bounding_radius() / guide_radius } else { 1.0 };
    let mut best = GuideAlignment { scale, yaw_degrees: 0.0, guide_centroid: guide.centroid(), base_centroid: base.centroid() };
    let mut best_mesh = best.apply(guide);
    if !search_yaw || base.face_count() == 0 || guide.face_count() == 0 {
        return (best_mesh, best);
    }
    let base_points = sample_surface(base, ALIGN_SAMPLES, ALIGN_SEED).points;
    let score = |m: &TriMesh| {
        let pts = sample_surface(m, ALIGN_SAMPLES, ALIGN_SEED).points;
        let forward = chamfer_one_directional(&base_points, &pts).map(|r| r.0).unwrap_or(f64::INFINITY);
        let backward = chamfer_one_directional(&pts, &base_points).map(|r| r.0).unwrap_or(f64::INFINITY);
        forward + backward
    };
    let mut best_score = score(&best_mesh);
    for yaw in [90.0, 180.0, 270.0] {
        let candidate = GuideAlignment { yaw_degrees: yaw, ..best };
        let mesh = candidate.apply(guide);
        let s = score(&mesh);
        if s < best_score {
            best_score = s;
            best = candidate;
            best_mesh = mesh;
        }
    }
    (best_mesh, best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;

    fn lopsided() -> TriMesh {
        let s = primitives::icosphere(2, 1.0);
        let v = s
            .vertices()
            .iter()
            .map(|p| if p.x > 0.2 && p.z > 0.0 { Vec3::new(p.x * 1.8, p.y, p.z * 1.4) } else { *p })
            .collect();
        s.with_vertices(v).unwrap()
    }

    #[test]
    fn aligned_guide_keeps_identity() {
        let m = lopsided();
        let (out, a) = align_guide(&m, &m, true);
        assert_eq!(a.scale, 1.0);
        assert_eq!(a.yaw_degrees, 0.0);
        for (p, q) in out.vertices().iter().zip(m.vertices()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn scaled_guide_matches_radius() {
        let m = lopsided();
        let big = m.transformed(2.0, &Matrix3::identity(), &Vec3::new(3.0, -1.0, 0.5));
        let (out, _) = align_guide(&m, &big, false);
        assert!((out.bounding_radius() - m.bounding_radius()).abs() < 1e-9);
        assert!((out.centroid() - m.centroid()).norm() < 1e-9);
    }

    #[test]
    fn half_turn_is_undone() {
        let m = lopsided();
        let turned = m.transformed(1.0, Rotation3::from_axis_angle(&Vec3::y_axis(), std::f64::consts::PI).matrix(), &Vec3::zeros());
        let (out, a) = align_guide(&m, &turned, true);
        assert_eq!(a.yaw_degrees, 180.0);
        let worst = out.vertices().iter().zip(m.vertices()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }
}
