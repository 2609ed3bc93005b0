//! Indexed triangle meshes.
//!
//! A [`TriMesh`] carries positions, triangle connectivity and an optional UV
//! layout with its own per-corner index triples (the OBJ `v/vt` model). The
//! connectivity is fixed at construction; deformation only ever swaps the
//! position array through [`TriMesh::with_vertices`].

mod obj;
mod quality;
mod topology;

pub use obj::{load_obj, parse_obj, save_obj, write_obj, ObjOptions};
pub use quality::{quality_report, triangles_intersect, MeshQualityReport};
pub use topology::{boundary_loops, BoundaryLoops, EdgeTopology};

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Faces with a rest area at or below this are rejected as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {face} references uv {index} but the mesh has {count} uvs")]
    UvIndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("degenerate faces (area <= {MIN_FACE_AREA:e}): {faces:?}")]
    DegenerateFaces { faces: Vec<usize> },
    #[error("non-manifold edges (shared by more than two faces): {edges:?}")]
    NonManifoldEdges { edges: Vec<(usize, usize)> },
    #[error("mesh has zero spatial extent")]
    ZeroExtent,
    #[error("mesh is empty")]
    Empty,
    #[error("vertex count mismatch: expected {expected}, got {got}")]
    VertexCountMismatch { expected: usize, got: usize },
    #[error("uv layout has {uv_faces} faces but the mesh has {faces}")]
    UvFaceCountMismatch { faces: usize, uv_faces: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Texture coordinates with their own corner indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct UvLayout {
    pub coords: Vec<Vec2>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    uvs: Option<UvLayout>,
    name: String,
}

impl TriMesh {
    /// Builds a mesh, checking indices and rejecting faces with zero area.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        Self::with_uvs(vertices, faces, None)
    }

    pub fn with_uvs(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        uvs: Option<UvLayout>,
    ) -> Result<Self, MeshError> {
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange { face: fi, index: i, count: vertices.len() });
                }
            }
        }
        if let Some(uv) = &uvs {
            if uv.faces.len() != faces.len() {
                return Err(MeshError::UvFaceCountMismatch { faces: faces.len(), uv_faces: uv.faces.len() });
            }
            for (fi, f) in uv.faces.iter().enumerate() {
                for &i in f {
                    if i >= uv.coords.len() {
                        return Err(MeshError::UvIndexOutOfRange { face: fi, index: i, count: uv.coords.len() });
                    }
                }
            }
        }
        let degenerate: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]) <= MIN_FACE_AREA)
            .map(|(i, _)| i)
            .collect();
        if !degenerate.is_empty() {
            return Err(MeshError::DegenerateFaces { faces: degenerate });
        }
        Ok(Self { vertices, faces, uvs, name: String::new() })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn uvs(&self) -> Option<&UvLayout> {
        self.uvs.as_ref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, UVs and name with new positions.
    ///
    /// No area check is made: a deformed mesh may legitimately pass through
    /// near-degenerate states, which the quality report measures instead.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self, MeshError> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::VertexCountMismatch { expected: self.vertices.len(), got: vertices.len() });
        }
        Ok(Self { vertices, faces: self.faces.clone(), uvs: self.uvs.clone(), name: self.name.clone() })
    }

    pub fn without_uvs(&self) -> Self {
        Self { uvs: None, ..self.clone() }
    }

    pub fn face_corners(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_corners(f);
        triangle_area(&a, &b, &c)
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|f| self.face_area(f)).collect()
    }

    pub fn surface_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    /// Unit face normal following the counter-clockwise winding.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_corners(f);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Area-weighted vertex normals. Vertices with no incident area get zero.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]];
            let w = (b - a).cross(&(c - a));
            for &i in f {
                n[i] += w;
            }
        }
        for v in &mut n {
            let len = v.norm();
            if len > 0.0 {
                *v /= len;
            }
        }
        n
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    /// Radius of the centroid-centered sphere enclosing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        let c = self.centroid();
        self.vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max)
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Applies `v -> scale * R v + translation` to every vertex.
    pub fn transformed(&self, scale: f64, rotation: &nalgebra::Matrix3<f64>, translation: &Vec3) -> Self {
        let vertices = self.vertices.iter().map(|v| scale * (rotation * v) + translation).collect();
        Self { vertices, ..self.clone() }
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Similarity that maps a mesh into the unit bounding sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    /// Multiplier applied after translation.
    pub scale: f64,
    /// Offset applied before scaling (the negated centroid).
    pub translation: Vec3,
}

impl Normalization {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (p + self.translation)
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale - self.translation
    }

    pub fn invert_mesh(&self, mesh: &TriMesh) -> TriMesh {
        let vertices = mesh.vertices.iter().map(|p| self.invert(p)).collect();
        TriMesh { vertices, ..mesh.clone() }
    }
}

/// Centers the mesh at its vertex centroid and scales its bounding sphere to
/// radius one. Returns the normalized mesh and the forward transform.
pub fn normalize_to_unit(mesh: &TriMesh) -> Result<(TriMesh, Normalization), MeshError> {
    if mesh.vertices.is_empty() {
        return Err(MeshError::Empty);
    }
    let radius = mesh.bounding_radius();
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(MeshError::ZeroExtent);
    }
    let norm = Normalization { scale: 1.0 / radius, translation: -mesh.centroid() };
    let vertices = mesh.vertices.iter().map(|p| norm.apply(p)).collect();
    Ok((TriMesh { vertices, ..mesh.clone() }, norm))
}
