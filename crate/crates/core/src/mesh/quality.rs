use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::topology::{trace_loops, EdgeTopology};
use super::{TriMesh, Vec3, MIN_FACE_AREA};

/// Aggregate shape statistics of a triangle mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshQualityReport {
    pub face_count: usize,
    pub vertex_count: usize,
    /// m²
    pub min_triangle_area: f64,
    /// degrees
    pub min_interior_angle: f64,
    /// Circumradius over twice the inradius; 1 for an equilateral triangle.
    /// Degenerate triangles are excluded and counted separately.
    pub max_aspect_ratio: f64,
    pub edge_length_mean: f64,
    pub edge_length_std: f64,
    pub boundary_loop_count: usize,
    pub self_intersection_count: usize,
    pub degenerate_face_count: usize,
}

fn angle_between(u: &Vec3, v: &Vec3) -> f64 {
    let d = u.norm() * v.norm();
    if d == 0.0 {
        return 0.0;
    }
    (u.dot(v) / d).clamp(-1.0, 1.0).acos()
}

pub fn quality_report(mesh: &TriMesh) -> MeshQualityReport {
    let v = mesh.vertices();
    let mut min_area = f64::INFINITY;
    let mut min_angle = f64::INFINITY;
    let mut max_aspect: f64 = 0.0;
    let mut degenerate = 0;
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.face_corners(f);
        let area = super::triangle_area(&a, &b, &c);
        min_area = min_area.min(area);
        let angles = [angle_between(&(b - a), &(c - a)), angle_between(&(a - b), &(c - b)), angle_between(&(a - c), &(b - c))];
        for ang in angles {
            min_angle = min_angle.min(ang.to_degrees());
        }
        if area <= MIN_FACE_AREA {
            degenerate += 1;
            continue;
        }
        let (la, lb, lc) = ((b - c).norm(), (c - a).norm(), (a - b).norm());
        let s = 0.5 * (la + lb + lc);
        let inradius = area / s;
        let circumradius = la * lb * lc / (4.0 * area);
        max_aspect = max_aspect.max(circumradius / (2.0 * inradius));
    }
    if mesh.face_count() == 0 {
        min_area = 0.0;
        min_angle = 0.0;
    }

    let topo = EdgeTopology::of(mesh);
    let lengths: Vec<f64> = topo.edges.iter().map(|&[a, b]| (v[a] - v[b]).norm()).collect();
    let n = lengths.len().max(1) as f64;
    let mean = lengths.iter().sum::<f64>() / n;
    let var = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;

    MeshQualityReport {
        face_count: mesh.face_count(),
        vertex_count: mesh.vertex_count(),
        min_triangle_area: min_area,
        min_interior_angle: min_angle,
        max_aspect_ratio: max_aspect,
        edge_length_mean: mean,
        edge_length_std: var.sqrt(),
        boundary_loop_count: trace_loops(&topo, mesh.faces()).len(),
        self_intersection_count: count_self_intersections(mesh),
        degenerate_face_count: degenerate,
    }
}

/// Counts intersecting pairs among triangles that share no vertex.
fn count_self_intersections(mesh: &TriMesh) -> usize {
    let faces = mesh.faces();
    let boxes: Vec<(Vec3, Vec3)> = (0..faces.len())
        .map(|f| {
            let [a, b, c] = mesh.face_corners(f);
            (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
        })
        .collect();
    let mut order: Vec<usize> = (0..faces.len()).collect();
    order.sort_by(|&i, &j| boxes[i].0.x.total_cmp(&boxes[j].0.x).then(i.cmp(&j)));

    order
        .par_iter()
        .enumerate()
        .map(|(pos, &i)| {
            let (lo_i, hi_i) = boxes[i];
            let mut count = 0;
            for &j in &order[pos + 1..] {
                let (lo_j, hi_j) = boxes[j];
                if lo_j.x > hi_i.x {
                    break;
                }
                if lo_j.y > hi_i.y || hi_j.y < lo_i.y || lo_j.z > hi_i.z || hi_j.z < lo_i.z {
                    continue;
                }
                if faces[i].iter().any(|a| faces[j].contains(a)) {
                    continue;
                }
                if triangles_intersect(&mesh.face_corners(i), &mesh.face_corners(j)) {
                    count += 1;
                }
            }
            count
        })
        .sum()
}

/// Signed volume, snapped to zero when it is round-off relative to the edge lengths.
fn orient3d(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    let (u, v, w) = (b - a, c - a, d - a);
    let vol = u.cross(&v).dot(&w);
    if vol.abs() <= 1e-12 * u.norm() * v.norm() * w.norm() {
        0.0
    } else {
        vol
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Exact-sign triangle/triangle overlap test (closed triangles).
pub fn triangles_intersect(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> bool {
    let s2: Vec<i8> = t2.iter().map(|p| sign(orient3d(&t1[0], &t1[1], &t1[2], p))).collect();
    if s2.iter().all(|&s| s > 0) || s2.iter().all(|&s| s < 0) {
        return false;
    }
    let s1: Vec<i8> = t1.iter().map(|p| sign(orient3d(&t2[0], &t2[1], &t2[2], p))).collect();
    if s1.iter().all(|&s| s > 0) || s1.iter().all(|&s| s < 0) {
        return false;
    }
    if s2.iter().all(|&s| s == 0) {
        return coplanar_overlap(t1, t2);
    }
    (0..3).any(|k| segment_hits_triangle(&t1[k], &t1[(k + 1) % 3], t2))
        || (0..3).any(|k| segment_hits_triangle(&t2[k], &t2[(k + 1) % 3], t1))
}

fn segment_hits_triangle(p: &Vec3, q: &Vec3, t: &[Vec3; 3]) -> bool {
    let op = sign(orient3d(&t[0], &t[1], &t[2], p));
    let oq = sign(orient3d(&t[0], &t[1], &t[2], q));
    if op == oq {
        // same side, or both in-plane (handled by the other segments)
        return false;
    }
    let e = [
        sign(orient3d(p, q, &t[0], &t[1])),
        sign(orient3d(p, q, &t[1], &t[2])),
        sign(orient3d(p, q, &t[2], &t[0])),
    ];
    e.iter().all(|&s| s >= 0) || e.iter().all(|&s| s <= 0)
}

fn coplanar_overlap(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> bool {
    let n = (t1[1] - t1[0]).cross(&(t1[2] - t1[0]));
    let drop = n.iamax();
    let proj = |p: &Vec3| -> [f64; 2] {
        match drop {
            0 => [p.y, p.z],
            1 => [p.z, p.x],
            _ => [p.x, p.y],
        }
    };
    let a: Vec<[f64; 2]> = t1.iter().map(proj).collect();
    let b: Vec<[f64; 2]> = t2.iter().map(proj).collect();
    let orient2 = |p: &[f64; 2], q: &[f64; 2], r: &[f64; 2]| sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]));
    let seg = |p: &[f64; 2], q: &[f64; 2], r: &[f64; 2], s: &[f64; 2]| {
        let (d1, d2) = (orient2(p, q, r), orient2(p, q, s));
        let (d3, d4) = (orient2(r, s, p), orient2(r, s, q));
        d1 * d2 <= 0 && d3 * d4 <= 0 && !(d1 == 0 && d2 == 0 && d3 == 0 && d4 == 0)
    };
    let inside = |p: &[f64; 2], t: &[[f64; 2]]| {
        let s = [orient2(&t[0], &t[1], p), orient2(&t[1], &t[2], p), orient2(&t[2], &t[0], p)];
        s.iter().all(|&x| x >= 0) || s.iter().all(|&x| x <= 0)
    };
    for i in 0..3 {
        for j in 0..3 {
            if seg(&a[i], &a[(i + 1) % 3], &b[j], &b[(j + 1) % 3]) {
                return true;
            }
        }
    }
    inside(&a[0], &b) || inside(&b[0], &a)
}
