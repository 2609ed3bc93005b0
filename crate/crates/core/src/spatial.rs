//! Nearest-neighbor acceleration: a k-d tree over points and a bounding
//! volume hierarchy over triangles.
//!
//! Both structures break distance ties toward the lowest index so results
//! match a brute-force scan exactly.

use crate::mesh::{TriMesh, Vec3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

/// Result of a nearest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub dist_sq: f64,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = Self { points: points.to_vec(), order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = KdNode::Split { axis, value, left, right };
        id
    }

    /// Nearest stored point; `None` on an empty tree.
    pub fn nearest(&self, query: &Vec3) -> Option<Nearest> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Nearest { index: usize::MAX, dist_sq: f64::INFINITY };
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Vec3, best: &mut Nearest) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.dist_sq || (d == best.dist_sq && i < best.index) {
                        *best = Nearest { index: i, dist_sq: d };
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // equality keeps tied candidates reachable
                if diff * diff <= best.dist_sq {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Closest point on a triangle, with barycentric coordinates of that point.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Closest surface point of a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub face: usize,
    pub point: Vec3,
    pub barycentric: [f64; 3],
    pub dist_sq: f64,
}

#[derive(Debug, Clone)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    // leaf when count > 0: faces order[first..first + count]; else children first, first + 1
    first: usize,
    count: usize,
}

/// Bounding volume hierarchy over the faces of a mesh snapshot.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    corners: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

impl TriangleBvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let corners: Vec<[Vec3; 3]> = (0..mesh.face_count()).map(|f| mesh.face_corners(f)).collect();
        Self::from_triangles(corners)
    }

    pub fn from_triangles(corners: Vec<[Vec3; 3]>) -> Self {
        let n = corners.len();
        let mut bvh = Self { corners, order: (0..n).collect(), nodes: Vec::with_capacity(2 * n / 4 + 1) };
        if n > 0 {
            let centers: Vec<Vec3> = bvh.corners.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
            bvh.nodes.push(BvhNode { lo: Vec3::zeros(), hi: Vec3::zeros(), first: 0, count: 0 });
            bvh.build(0, 0, n, &centers);
        }
        bvh
    }

    fn bounds(&self, start: usize, end: usize) -> (Vec3, Vec3) {
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &f in &self.order[start..end] {
            for p in &self.corners[f] {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
        }
        (lo, hi)
    }

    fn build(&mut self, node: usize, start: usize, end: usize, centers: &[Vec3]) {
        let (lo, hi) = self.bounds(start, end);
        self.nodes[node].lo = lo;
        self.nodes[node].hi = hi;
        if end - start <= 4 {
            self.nodes[node].first = start;
            self.nodes[node].count = end - start;
            return;
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| centers[a][axis].total_cmp(&centers[b][axis]));
        let left = self.nodes.len();
        self.nodes.push(BvhNode { lo: Vec3::zeros(), hi: Vec3::zeros(), first: 0, count: 0 });
        self.nodes.push(BvhNode { lo: Vec3::zeros(), hi: Vec3::zeros(), first: 0, count: 0 });
        self.nodes[node].first = left;
        self.nodes[node].count = 0;
        self.build(left, start, mid, centers);
        self.build(left + 1, mid, end, centers);
    }

    fn box_dist_sq(node: &BvhNode, p: &Vec3) -> f64 {
        let d = (node.lo - p).sup(&(p - node.hi)).sup(&Vec3::zeros());
        d.norm_squared()
    }

    pub fn closest_point(&self, p: &Vec3) -> Option<SurfaceHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = SurfaceHit { face: usize::MAX, point: Vec3::zeros(), barycentric: [0.0; 3], dist_sq: f64::INFINITY };
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if Self::box_dist_sq(node, p) > best.dist_sq {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.first..node.first + node.count] {
                    let [a, b, c] = &self.corners[f];
                    let (q, bary) = closest_point_on_triangle(p, a, b, c);
                    let d = (q - p).norm_squared();
                    if d < best.dist_sq || (d == best.dist_sq && f < best.face) {
                        best = SurfaceHit { face: f, point: q, barycentric: bary, dist_sq: d };
                    }
                }
            } else {
                let (l, r) = (node.first, node.first + 1);
                let (dl, dr) = (Self::box_dist_sq(&self.nodes[l], p), Self::box_dist_sq(&self.nodes[r], p));
                // push the farther child first so the nearer one is visited next
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Some(best)
    }
}
