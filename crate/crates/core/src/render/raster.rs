use rayon::prelude::*;

use super::{Camera, RenderError};
use crate::image_buf::ColorImage;
use crate::mesh::{EdgeTopology, TriMesh, Vec3};

const NO_FACE: u32 = u32::MAX;
const NO_EDGE: u8 = u8::MAX;

/// Per-pixel outputs of one render, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    /// Soft coverage in [0, 1].
    pub silhouette: Vec<f64>,
    /// Camera-space unit normals interpolated from area-weighted vertex normals,
    /// turned toward the viewer; zero where nothing is visible.
    pub normals: Vec<Vec3>,
    /// Distance along the view axis; `+∞` where nothing is visible.
    pub depth: Vec<f64>,
}

impl RenderBuffers {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, silhouette: vec![0.0; n], normals: vec![Vec3::zeros(); n], depth: vec![f64::INFINITY; n] }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Hard coverage: pixel centers inside some visible face.
    pub fn mask(&self) -> Vec<bool> {
        self.depth.iter().map(|d| d.is_finite()).collect()
    }

    /// Normal-shaded grayscale-on-color image: `silhouette · (0.5 + 0.5 n)` per channel.
    pub fn shaded(&self) -> ColorImage {
        let pixels = self
            .silhouette
            .iter()
            .zip(&self.normals)
            .map(|(&s, n)| (Vec3::repeat(0.5) + 0.5 * n) * s)
            .collect();
        ColorImage::from_pixels(self.width, self.height, pixels).expect("buffer sizes agree")
    }
}

/// Loss gradients with respect to each buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferGrads {
    pub width: usize,
    pub height: usize,
    pub silhouette: Vec<f64>,
    pub normals: Vec<Vec3>,
    pub depth: Vec<f64>,
}

impl BufferGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, silhouette: vec![0.0; n], normals: vec![Vec3::zeros(); n], depth: vec![0.0; n] }
    }

    /// Chains an image-space gradient through [`RenderBuffers::shaded`].
    pub fn from_shaded(buffers: &RenderBuffers, grad: &[Vec3]) -> Self {
        let mut g = Self::zeros(buffers.width, buffers.height);
        for i in 0..grad.len() {
            let s = buffers.silhouette[i];
            let n = buffers.normals[i];
            g.silhouette[i] = grad[i].dot(&(Vec3::repeat(0.5) + 0.5 * n));
            g.normals[i] = grad[i] * (0.5 * s);
        }
        g
    }
}

/// Compactly supported smooth step on [−1, 1].
fn smoothstep(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        0.5 + 0.75 * t - 0.25 * t * t * t
    }
}

fn smoothstep_slope(t: f64) -> f64 {
    if t <= -1.0 || t >= 1.0 {
        0.0
    } else {
        0.75 * (1.0 - t * t)
    }
}

#[derive(Debug, Clone, Copy)]
enum Neighbor {
    Boundary,
    Shared { opposite: usize, face: usize },
    NonManifold,
}

#[derive(Debug, Clone)]
struct FaceProjection {
    valid: bool,
    screen: [[f64; 2]; 3],
    /// Signed distance `a x + b y + c` to each edge, positive inside.
    lines: [[f64; 3]; 3],
    orient: f64,
    contour: [bool; 3],
    any_contour: bool,
    bbox: [f64; 4],
    plane_normal: Vec3,
    plane_offset: f64,
    /// Unit face normal turned toward the viewer.
    normal: Vec3,
    /// +1 when the winding normal faces the viewer, −1 otherwise.
    facing: f64,
}

impl FaceProjection {
    fn invalid() -> Self {
        Self {
            valid: false,
            screen: [[0.0; 2]; 3],
            lines: [[0.0; 3]; 3],
            orient: 1.0,
            contour: [false; 3],
            any_contour: false,
            bbox: [0.0; 4],
            plane_normal: Vec3::zeros(),
            plane_offset: 0.0,
            normal: Vec3::zeros(),
            facing: 1.0,
        }
    }
}

/// Distance from a pixel outside the face to its closest contour feature.
/// The code is the edge index for a segment interior or `3 + corner` for a corner.
fn nearest_contour_feature(fp: &FaceProjection, px: f64, py: f64) -> (f64, u8) {
    let mut best = (f64::INFINITY, NO_EDGE);
    for k in 0..3 {
        if !fp.contour[k] {
            continue;
        }
        let (a, b) = (fp.screen[k], fp.screen[(k + 1) % 3]);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let t = ((px - a[0]) * ex + (py - a[1]) * ey) / (ex * ex + ey * ey);
        let cand = if t <= 0.0 {
            (((px - a[0]).powi(2) + (py - a[1]).powi(2)).sqrt(), 3 + k as u8)
        } else if t >= 1.0 {
            (((px - b[0]).powi(2) + (py - b[1]).powi(2)).sqrt(), 3 + ((k + 1) % 3) as u8)
        } else {
            let l = &fp.lines[k];
            ((l[0] * px + l[1] * py + l[2]).abs(), k as u8)
        };
        if cand.0 < best.0 {
            best = cand;
        }
    }
    best
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Screen-space barycentric coordinates of `p` and the signed doubled area.
fn barycentric(s: &[[f64; 2]; 3], p: [f64; 2]) -> ([f64; 3], f64) {
    let r = |i: usize| [s[i][0] - p[0], s[i][1] - p[1]];
    let c = [cross2(r(1), r(2)), cross2(r(2), r(0)), cross2(r(0), r(1))];
    let area = c[0] + c[1] + c[2];
    ([c[0] / area, c[1] / area, c[2] / area], area)
}

/// Area-weighted unit vertex normals in camera space, with the pre-normalization lengths.
fn vertex_normals(faces: &[[usize; 3]], cam_pts: &[Vec3]) -> (Vec<Vec3>, Vec<f64>) {
    let mut sum = vec![Vec3::zeros(); cam_pts.len()];
    for t in faces {
        let n = (cam_pts[t[1]] - cam_pts[t[0]]).cross(&(cam_pts[t[2]] - cam_pts[t[0]]));
        for &v in t {
            sum[v] += n;
        }
    }
    let lengths: Vec<f64> = sum.iter().map(|m| m.norm()).collect();
    let units = sum.iter().zip(&lengths).map(|(m, &l)| if l > 0.0 { m / l } else { Vec3::zeros() }).collect();
    (units, lengths)
}

/// Forward state needed by the backward pass.
#[derive(Debug, Clone)]
pub struct RenderTape {
    width: usize,
    height: usize,
    softness: f64,
    faces: Vec<FaceProjection>,
    camera_points: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    vertex_normal_lengths: Vec<f64>,
    sil_face: Vec<u32>,
    sil_edge: Vec<u8>,
    visible_face: Vec<u32>,
}

impl RenderTape {
    /// Face visible at each pixel center, if any.
    pub fn visible_face(&self, pixel: usize) -> Option<usize> {
        let f = self.visible_face[pixel];
        (f != NO_FACE).then_some(f as usize)
    }
}

/// Soft rasterizer bound to a fixed connectivity; positions vary per call.
#[derive(Debug, Clone)]
pub struct Rasterizer {
    faces: Vec<[usize; 3]>,
    neighbors: Vec<[Neighbor; 3]>,
    vertex_count: usize,
}

struct Band {
    silhouette: Vec<f64>,
    normals: Vec<Vec3>,
    depth: Vec<f64>,
    sil_face: Vec<u32>,
    sil_edge: Vec<u8>,
    visible_face: Vec<u32>,
}

struct BandGrads {
    screen: Vec<[f64; 2]>,
    camera: Vec<Vec3>,
    vertex_normal: Vec<Vec3>,
}

impl BandGrads {
    fn zeros(n: usize) -> Self {
        Self { screen: vec![[0.0; 2]; n], camera: vec![Vec3::zeros(); n], vertex_normal: vec![Vec3::zeros(); n] }
    }
}

fn band_rows(height: usize) -> Vec<(usize, usize)> {
    let bands = rayon::current_num_threads().clamp(1, height.max(1));
    (0..bands).map(|b| (b * height / bands, (b + 1) * height / bands)).collect()
}

impl Rasterizer {
    pub fn new(mesh: &TriMesh) -> Self {
        let topo = EdgeTopology::of(mesh);
        let faces = mesh.faces().to_vec();
        let neighbors = faces
            .iter()
            .enumerate()
            .map(|(fi, _)| {
                let mut out = [Neighbor::Boundary; 3];
                for (k, slot) in out.iter_mut().enumerate() {
                    let e = topo.face_edges[fi][k];
                    let inc = &topo.edge_faces[e];
                    *slot = match inc.len() {
                        1 => Neighbor::Boundary,
                        2 => {
                            let g = if inc[0] == fi { inc[1] } else { inc[0] };
                            let [a, b] = topo.edges[e];
                            let opposite = *faces[g].iter().find(|&&v| v != a && v != b).expect("triangle has a third vertex");
                            Neighbor::Shared { opposite, face: g }
                        }
                        _ => Neighbor::NonManifold,
                    };
                }
                out
            })
            .collect();
        Self { faces, neighbors, vertex_count: mesh.vertex_count() }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    fn project_faces(&self, cam_pts: &[Vec3], camera: &Camera) -> Vec<FaceProjection> {
        let f = camera.focal();
        let (cx, cy) = (0.5 * camera.width() as f64, 0.5 * camera.height() as f64);
        let screen: Vec<[f64; 2]> = cam_pts
            .iter()
            .map(|c| {
                let d = -c.z;
                [cx + f * c.x / d, cy - f * c.y / d]
            })
            .collect();
        let in_range = |c: &Vec3| -c.z >= camera.near && -c.z <= camera.far;

        let mut projections: Vec<FaceProjection> = self
            .faces
            .iter()
            .map(|t| {
                if !t.iter().all(|&v| in_range(&cam_pts[v])) {
                    return FaceProjection::invalid();
                }
                let s = [screen[t[0]], screen[t[1]], screen[t[2]]];
                let area2 = (s[1][0] - s[0][0]) * (s[2][1] - s[0][1]) - (s[1][1] - s[0][1]) * (s[2][0] - s[0][0]);
                if !(area2.abs() > 1e-12) {
                    return FaceProjection::invalid();
                }
                let orient = area2.signum();
                let mut lines = [[0.0; 3]; 3];
                for k in 0..3 {
                    let (a, b) = (s[k], s[(k + 1) % 3]);
                    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                    let len = (ex * ex + ey * ey).sqrt();
                    lines[k] = [-orient * ey / len, orient * ex / len, orient * (ey * a[0] - ex * a[1]) / len];
                }
                let (x0, x1, x2) = (cam_pts[t[0]], cam_pts[t[1]], cam_pts[t[2]]);
                let n = (x1 - x0).cross(&(x2 - x0));
                let offset = n.dot(&x0);
                let flip = if offset > 0.0 { -1.0 } else { 1.0 };
                let bbox = [
                    s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
                    s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
                    s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
                    s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
                ];
                FaceProjection {
                    valid: true,
                    screen: s,
                    lines,
                    orient,
                    contour: [false; 3],
                    any_contour: false,
                    bbox,
                    plane_normal: n,
                    plane_offset: offset,
                    normal: n.normalize() * flip,
                    facing: flip,
                }
            })
            .collect();

        // contour edges: open, non-manifold, bordering a hidden face, or folds in screen space
        for fi in 0..self.faces.len() {
            if !projections[fi].valid {
                continue;
            }
            let mut contour = [false; 3];
            for (k, c) in contour.iter_mut().enumerate() {
                *c = match self.neighbors[fi][k] {
                    Neighbor::Boundary | Neighbor::NonManifold => true,
                    Neighbor::Shared { opposite, face } => {
                        if !projections[face].valid {
                            true
                        } else {
                            let s = &projections[fi].screen;
                            let (a, b, own) = (s[k], s[(k + 1) % 3], s[(k + 2) % 3]);
                            let other = screen[opposite];
                            let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                            side(own) * side(other) >= 0.0
                        }
                    }
                };
            }
            projections[fi].contour = contour;
            projections[fi].any_contour = contour.iter().any(|&c| c);
        }
        projections
    }

    /// Vertex normals interpolated at a pixel of face `fi`, turned toward the
    /// viewer; the flat normal where the interpolant vanishes.
    fn shade_normal(&self, fi: usize, fp: &FaceProjection, units: &[Vec3], p: [f64; 2]) -> Vec3 {
        let t = self.faces[fi];
        let (l, _) = barycentric(&fp.screen, p);
        let q = l[0] * units[t[0]] + l[1] * units[t[1]] + l[2] * units[t[2]];
        let len = q.norm();
        if len > 1e-12 {
            q * (fp.facing / len)
        } else {
            fp.normal
        }
    }

    fn rasterize_band(&self, rows: (usize, usize), width: usize, camera: &Camera, softness: f64, projections: &[FaceProjection], units: &[Vec3]) -> Band {
        let n = (rows.1 - rows.0) * width;
        let mut band = Band {
            silhouette: vec![0.0; n],
            normals: vec![Vec3::zeros(); n],
            depth: vec![f64::INFINITY; n],
            sil_face: vec![NO_FACE; n],
            sil_edge: vec![NO_EDGE; n],
            visible_face: vec![NO_FACE; n],
        };
        for (fi, fp) in projections.iter().enumerate() {
            if !fp.valid {
                continue;
            }
            let pad = if fp.any_contour { softness } else { 0.0 };
            let y_lo = ((fp.bbox[2] - pad - 0.5).ceil().max(rows.0 as f64)) as usize;
            let y_hi = (fp.bbox[3] + pad - 0.5).floor().min(rows.1 as f64 - 1.0);
            let x_lo = ((fp.bbox[0] - pad - 0.5).ceil().max(0.0)) as usize;
            let x_hi = (fp.bbox[1] + pad - 0.5).floor().min(width as f64 - 1.0);
            if y_hi < y_lo as f64 || x_hi < x_lo as f64 {
                continue;
            }
            let (y_hi, x_hi) = (y_hi as usize, x_hi as usize);
            for y in y_lo..=y_hi {
                let py = y as f64 + 0.5;
                for x in x_lo..=x_hi {
                    let px = x as f64 + 0.5;
                    let d = [
                        fp.lines[0][0] * px + fp.lines[0][1] * py + fp.lines[0][2],
                        fp.lines[1][0] * px + fp.lines[1][1] * py + fp.lines[1][2],
                        fp.lines[2][0] * px + fp.lines[2][1] * py + fp.lines[2][2],
                    ];
                    let inside = d[0] >= 0.0 && d[1] >= 0.0 && d[2] >= 0.0;
                    let idx = (y - rows.0) * width + x;
                    if inside {
                        let dir = camera.ray_direction(px, py);
                        let depth = fp.plane_offset / fp.plane_normal.dot(&dir);
                        if depth < band.depth[idx] {
                            band.depth[idx] = depth;
                            band.visible_face[idx] = fi as u32;
                        }
                    }
                    let (cov, edge) = if softness <= 0.0 || !fp.any_contour {
                        (if inside { 1.0 } else { 0.0 }, NO_EDGE)
                    } else {
                        let mut blocked = false;
                        let mut best = f64::INFINITY;
                        let mut best_k = NO_EDGE;
                        for k in 0..3 {
                            if fp.contour[k] {
                                if d[k] < best {
                                    best = d[k];
                                    best_k = k as u8;
                                }
                            } else if d[k] < 0.0 {
                                blocked = true;
                            }
                        }
                        if blocked {
                            (0.0, NO_EDGE)
                        } else if best >= 0.0 {
                            (smoothstep(best / softness), best_k)
                        } else {
                            // outside: true distance to the nearest contour segment or corner
                            let (dist, code) = nearest_contour_feature(fp, px, py);
                            if dist >= softness {
                                (0.0, NO_EDGE)
                            } else {
                                (smoothstep(-dist / softness), code)
                            }
                        }
                    };
                    if cov > band.silhouette[idx] {
                        band.silhouette[idx] = cov;
                        band.sil_face[idx] = fi as u32;
                        band.sil_edge[idx] = edge;
                    }
                }
            }
        }
        for (i, &vf) in band.visible_face.iter().enumerate() {
            if vf != NO_FACE {
                let p = [(i % width) as f64 + 0.5, (rows.0 + i / width) as f64 + 0.5];
                band.normals[i] = self.shade_normal(vf as usize, &projections[vf as usize], units, p);
            }
        }
        band
    }

    /// Renders positions `vertices` (same connectivity as construction).
    pub fn forward(&self, vertices: &[Vec3], camera: &Camera, softness: f64) -> (RenderBuffers, RenderTape) {
        let rot = camera.rotation();
        let cam_pts: Vec<Vec3> = vertices.iter().map(|p| rot * (p - camera.position)).collect();
        let projections = self.project_faces(&cam_pts, camera);
        let (units, lengths) = vertex_normals(&self.faces, &cam_pts);
        let (w, h) = (camera.width(), camera.height());
        let softness = softness.max(0.0);
        let bands: Vec<Band> = band_rows(h)
            .into_par_iter()
            .map(|rows| self.rasterize_band(rows, w, camera, softness, &projections, &units))
            .collect();
        let mut buffers = RenderBuffers::empty(w, h);
        let mut tape = RenderTape {
            width: w,
            height: h,
            softness,
            faces: projections,
            camera_points: cam_pts,
            vertex_normals: units,
            vertex_normal_lengths: lengths,
            sil_face: Vec::with_capacity(w * h),
            sil_edge: Vec::with_capacity(w * h),
            visible_face: Vec::with_capacity(w * h),
        };
        let mut offset = 0;
        for b in bands {
            let n = b.silhouette.len();
            buffers.silhouette[offset..offset + n].copy_from_slice(&b.silhouette);
            buffers.normals[offset..offset + n].copy_from_slice(&b.normals);
            buffers.depth[offset..offset + n].copy_from_slice(&b.depth);
            tape.sil_face.extend(b.sil_face);
            tape.sil_edge.extend(b.sil_edge);
            tape.visible_face.extend(b.visible_face);
            offset += n;
        }
        (buffers, tape)
    }

    /// Gradient of a scalar image loss with respect to world-space vertex positions.
    pub fn backward(&self, camera: &Camera, tape: &RenderTape, grads: &BufferGrads) -> Result<Vec<Vec3>, RenderError> {
        if (grads.width, grads.height) != (tape.width, tape.height)
            || grads.silhouette.len() != tape.width * tape.height
            || grads.normals.len() != tape.width * tape.height
            || grads.depth.len() != tape.width * tape.height
        {
            return Err(RenderError::ResolutionMismatch { expected: (tape.width, tape.height), got: (grads.width, grads.height) });
        }
        let w = tape.width;
        let partials: Vec<BandGrads> = band_rows(tape.height)
            .into_par_iter()
            .map(|rows| self.backward_band(rows, w, camera, tape, grads))
            .collect();
        let mut acc = BandGrads::zeros(self.vertex_count);
        for part in partials {
            for v in 0..self.vertex_count {
                acc.screen[v][0] += part.screen[v][0];
                acc.screen[v][1] += part.screen[v][1];
                acc.camera[v] += part.camera[v];
                acc.vertex_normal[v] += part.vertex_normal[v];
            }
        }
        let BandGrads { screen: screen_grad, camera: mut cam_grad, vertex_normal } = acc;
        // unit vertex normals -> summed face normals -> camera-space positions
        let normal_sum_grad: Vec<Vec3> = vertex_normal
            .iter()
            .enumerate()
            .map(|(v, g)| {
                let (u, len) = (tape.vertex_normals[v], tape.vertex_normal_lengths[v]);
                if len > 0.0 { (g - u * u.dot(g)) / len } else { Vec3::zeros() }
            })
            .collect();
        if normal_sum_grad.iter().any(|g| *g != Vec3::zeros()) {
            for t in &self.faces {
                let grad_n = normal_sum_grad[t[0]] + normal_sum_grad[t[1]] + normal_sum_grad[t[2]];
                if grad_n == Vec3::zeros() {
                    continue;
                }
                let (x0, x1, x2) = (tape.camera_points[t[0]], tape.camera_points[t[1]], tape.camera_points[t[2]]);
                let g1 = (x2 - x0).cross(&grad_n);
                let g2 = grad_n.cross(&(x1 - x0));
                cam_grad[t[1]] += g1;
                cam_grad[t[2]] += g2;
                cam_grad[t[0]] -= g1 + g2;
            }
        }
        let f = camera.focal();
        let rot_t = camera.rotation().transpose();
        Ok((0..self.vertex_count)
            .map(|v| {
                let c = tape.camera_points[v];
                let mut g = cam_grad[v];
                let [gx, gy] = screen_grad[v];
                if gx != 0.0 || gy != 0.0 {
                    let d = -c.z;
                    g += Vec3::new(gx * f / d, -gy * f / d, gx * f * c.x / (d * d) - gy * f * c.y / (d * d));
                }
                rot_t * g
            })
            .collect())
    }

    fn backward_band(&self, rows: (usize, usize), w: usize, camera: &Camera, tape: &RenderTape, grads: &BufferGrads) -> BandGrads {
        let mut out = BandGrads::zeros(self.vertex_count);
        let BandGrads { screen: screen_grad, camera: cam_grad, vertex_normal: unit_grad } = &mut out;
        for y in rows.0..rows.1 {
            let py = y as f64 + 0.5;
            for x in 0..w {
                let idx = y * w + x;
                let px = x as f64 + 0.5;

                let gs = grads.silhouette[idx];
                let sf = tape.sil_face[idx];
                let se = tape.sil_edge[idx];
                if gs != 0.0 && sf != NO_FACE && se >= 3 && se != NO_EDGE && tape.softness > 0.0 {
                    // nearest feature is a corner: coverage depends on −|p − a|
                    let fp = &tape.faces[sf as usize];
                    let corner = (se - 3) as usize;
                    let a = fp.screen[corner];
                    let (wx, wy) = (px - a[0], py - a[1]);
                    let dist = (wx * wx + wy * wy).sqrt();
                    let slope = smoothstep_slope(-dist / tape.softness) / tape.softness;
                    if slope != 0.0 && dist > 0.0 {
                        let v = self.faces[sf as usize][corner];
                        screen_grad[v][0] += gs * slope * wx / dist;
                        screen_grad[v][1] += gs * slope * wy / dist;
                    }
                } else if gs != 0.0 && sf != NO_FACE && se != NO_EDGE && tape.softness > 0.0 {
                    let fp = &tape.faces[sf as usize];
                    let k = se as usize;
                    let l = &fp.lines[k];
                    let dist = l[0] * px + l[1] * py + l[2];
                    let slope = smoothstep_slope(dist / tape.softness) / tape.softness;
                    if slope != 0.0 {
                        let g = gs * slope;
                        let (a, b) = (fp.screen[k], fp.screen[(k + 1) % 3]);
                        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                        let (wx, wy) = (px - a[0], py - a[1]);
                        let len = (ex * ex + ey * ey).sqrt();
                        let c = ex * wy - ey * wx;
                        let s = fp.orient;
                        let de = [s * (wy / len - c * ex / len.powi(3)), s * (-wx / len - c * ey / len.powi(3))];
                        let dw = [s * (-ey) / len, s * ex / len];
                        let t = self.faces[sf as usize];
                        let (va, vb) = (t[k], t[(k + 1) % 3]);
                        screen_grad[vb][0] += g * de[0];
                        screen_grad[vb][1] += g * de[1];
                        screen_grad[va][0] -= g * (de[0] + dw[0]);
                        screen_grad[va][1] -= g * (de[1] + dw[1]);
                    }
                }

                let vf = tape.visible_face[idx];
                if vf == NO_FACE {
                    continue;
                }
                let gd = grads.depth[idx];
                let gn = grads.normals[idx];
                if gd == 0.0 && gn == Vec3::zeros() {
                    continue;
                }
                let fp = &tape.faces[vf as usize];
                let t = self.faces[vf as usize];
                let (x0, x1, x2) = (tape.camera_points[t[0]], tape.camera_points[t[1]], tape.camera_points[t[2]]);
                let (e1, e2) = (x1 - x0, x2 - x0);
                let n = fp.plane_normal;
                let mut grad_n = Vec3::zeros();
                let mut grad_x0 = Vec3::zeros();
                if gd != 0.0 {
                    let dir = camera.ray_direction(px, py);
                    let denom = n.dot(&dir);
                    let depth = fp.plane_offset / denom;
                    grad_n += gd * (x0 - depth * dir) / denom;
                    grad_x0 += gd * n / denom;
                }
                if gn != Vec3::zeros() {
                    let units = &tape.vertex_normals;
                    let (l, area) = barycentric(&fp.screen, [px, py]);
                    let q = l[0] * units[t[0]] + l[1] * units[t[1]] + l[2] * units[t[2]];
                    let len = q.norm();
                    if len > 1e-12 {
                        let m = q / len;
                        let dq = fp.facing * (gn - m * m.dot(&gn)) / len;
                        let gl = [dq.dot(&units[t[0]]), dq.dot(&units[t[1]]), dq.dot(&units[t[2]])];
                        let mean = l[0] * gl[0] + l[1] * gl[1] + l[2] * gl[2];
                        for i in 0..3 {
                            unit_grad[t[i]] += l[i] * dq;
                            // l_i = cross2(s_j − p, s_k − p) / area
                            let c = (gl[i] - mean) / area;
                            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                            let a = [fp.screen[j][0] - px, fp.screen[j][1] - py];
                            let b = [fp.screen[k][0] - px, fp.screen[k][1] - py];
                            screen_grad[t[j]][0] += c * b[1];
                            screen_grad[t[j]][1] -= c * b[0];
                            screen_grad[t[k]][0] -= c * a[1];
                            screen_grad[t[k]][1] += c * a[0];
                        }
                    } else {
                        let len = n.norm();
                        let m = n / len;
                        grad_n += fp.facing * (gn - m * m.dot(&gn)) / len;
                    }
                }
                let g1 = e2.cross(&grad_n);
                let g2 = grad_n.cross(&e1);
                cam_grad[t[1]] += g1;
                cam_grad[t[2]] += g2;
                cam_grad[t[0]] += grad_x0 - g1 - g2;
            }
        }
        out
    }
}

pub fn render(mesh: &TriMesh, camera: &Camera, softness: f64) -> RenderBuffers {
    Rasterizer::new(mesh).forward(mesh.vertices(), camera, softness).0
}

/// Recomputes the forward pass and returns vertex gradients.
pub fn render_backward(mesh: &TriMesh, camera: &Camera, softness: f64, grads: &BufferGrads) -> Result<Vec<Vec3>, RenderError> {
    let r = Rasterizer::new(mesh);
    let (_, tape) = r.forward(mesh.vertices(), camera, softness);
    r.backward(camera, &tape, grads)
}
