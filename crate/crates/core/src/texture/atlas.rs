use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TextureError;
use crate::image_buf::ColorImage;
use crate::mesh::{TriMesh, Vec2, Vec3};

/// Color of texels no view reached.
pub const GRAY: f64 = 0.5;

/// Surface point behind one texel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelSample {
    pub point: Vec3,
    /// Interpolated vertex normal, unit length.
    pub normal: Vec3,
    pub face: usize,
    pub barycentric: [f64; 3],
}

/// Row-major `size × size` texel grid; row 0 is the top of the image (v = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TexelMap {
    pub size: usize,
    pub texels: Vec<Option<TexelSample>>,
    /// Texel centers strictly inside more than one UV triangle.
    pub overlap_texels: usize,
}

/// Texel center in UV coordinates.
pub fn texel_uv(size: usize, index: usize) -> Vec2 {
    let (row, col) = (index / size, index % size);
    Vec2::new((col as f64 + 0.5) / size as f64, 1.0 - (row as f64 + 0.5) / size as f64)
}

fn sample_at(mesh: &TriMesh, normals: &[Vec3], face: usize, b: [f64; 3]) -> TexelSample {
    let f = mesh.faces()[face];
    let point = mesh.vertices()[f[0]] * b[0] + mesh.vertices()[f[1]] * b[1] + mesh.vertices()[f[2]] * b[2];
    let n = normals[f[0]] * b[0] + normals[f[1]] * b[1] + normals[f[2]] * b[2];
    let normal = if n.norm() > 0.0 { n.normalize() } else { mesh.face_normal(face) };
    TexelSample { point, normal, face, barycentric: b }
}

/// Maps every texel whose center lies in a UV triangle to its surface point.
/// The lowest face index wins where charts overlap; overlaps are counted and logged.
pub fn rasterize_uv_points(mesh: &TriMesh, size: usize) -> Result<TexelMap, TextureError> {
    let uvs = mesh.uvs().ok_or(TextureError::MissingUvs)?;
    if size == 0 {
        return Err(TextureError::InvalidSize);
    }
    let s = size as f64;
    // texel-space corners: x right, y down
    let corners: Vec<[[f64; 2]; 3]> = uvs.faces.iter().map(|t| t.map(|i| [uvs.coords[i].x * s, (1.0 - uvs.coords[i].y) * s])).collect();
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); size];
    for (fi, c) in corners.iter().enumerate() {
        let lo = c.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let hi = c.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let r0 = (lo - 0.5).ceil().max(0.0);
        let r1 = (hi - 0.5).floor().min(s - 1.0);
        if r1 < r0 {
            continue;
        }
        for r in r0 as usize..=r1 as usize {
            rows[r].push(fi as u32);
        }
    }
    let normals = mesh.vertex_normals();
    let mut texels = vec![None; size * size];
    let overlap_texels: usize = texels
        .par_chunks_mut(size)
        .enumerate()
        .map(|(r, row)| {
            let py = r as f64 + 0.5;
            let mut overlaps = 0;
            let mut strict = vec![0u8; size];
            for &fi in &rows[r] {
                let [a, b, c] = corners[fi as usize];
                let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                if area.abs() < 1e-18 {
                    continue;
                }
                let lo = a[0].min(b[0]).min(c[0]);
                let hi = a[0].max(b[0]).max(c[0]);
                let c0 = (lo - 0.5).ceil().max(0.0) as usize;
                let c1 = (hi - 0.5).floor().min(s - 1.0);
                if c1 < c0 as f64 {
                    continue;
                }
                for col in c0..=c1 as usize {
                    let px = col as f64 + 0.5;
                    let w0 = ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) / area;
                    let w1 = ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) / area;
                    let w2 = 1.0 - w0 - w1;
                    let eps = 1e-12;
                    if w0 < -eps || w1 < -eps || w2 < -eps {
                        continue;
                    }
                    if w0 > 1e-9 && w1 > 1e-9 && w2 > 1e-9 {
                        strict[col] = strict[col].saturating_add(1);
                    }
                    if row[col].is_none() {
                        row[col] = Some(sample_at(mesh, &normals, fi as usize, [w0.max(0.0), w1.max(0.0), w2.max(0.0)]));
                    }
                }
            }
            overlaps += strict.iter().filter(|&&k| k > 1).count();
            overlaps
        })
        .sum();
    if overlap_texels > 0 {
        log::warn!("UV charts overlap on {overlap_texels} texels; the lowest face index wins");
    }
    Ok(TexelMap { size, texels, overlap_texels })
}

const CACHE_MAGIC: &[u8; 4] = b"GTXM";

impl TexelMap {
    pub fn covered(&self) -> usize {
        self.texels.iter().filter(|t| t.is_some()).count()
    }

    /// Key over geometry, UVs and size.
    pub fn cache_key(mesh: &TriMesh, size: usize) -> String {
        let mut h = Sha256::new();
        h.update((size as u64).to_le_bytes());
        for p in mesh.vertices() {
            p.iter().for_each(|x| h.update(x.to_le_bytes()));
        }
        for f in mesh.faces() {
            f.iter().for_each(|&i| h.update((i as u64).to_le_bytes()));
        }
        if let Some(uv) = mesh.uvs() {
            uv.coords.iter().for_each(|c| c.iter().for_each(|x| h.update(x.to_le_bytes())));
            uv.faces.iter().flatten().for_each(|&i| h.update((i as u64).to_le_bytes()));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Loads the map from `dir` when a cache entry for this mesh exists, else builds and stores it.
    pub fn cached(mesh: &TriMesh, size: usize, dir: impl AsRef<Path>) -> Result<Self, TextureError> {
        let path = dir.as_ref().join(format!("texels-{}.bin", Self::cache_key(mesh, size)));
        if let Ok(bytes) = std::fs::read(&path) {
            match Self::decode(mesh, &bytes) {
                Ok(map) if map.size == size => return Ok(map),
                _ => log::warn!("ignoring unreadable texel cache {}", path.display()),
            }
        }
        let map = rasterize_uv_points(mesh, size)?;
        std::fs::create_dir_all(dir.as_ref())?;
        std::fs::write(&path, map.encode())?;
        Ok(map)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.texels.len() * 28);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(self.size as u64).to_le_bytes());
        out.extend_from_slice(&(self.overlap_texels as u64).to_le_bytes());
        for t in &self.texels {
            match t {
                None => out.extend_from_slice(&u32::MAX.to_le_bytes()),
                Some(s) => {
                    out.extend_from_slice(&(s.face as u32).to_le_bytes());
                    s.barycentric.iter().for_each(|b| out.extend_from_slice(&b.to_le_bytes()));
                }
            }
        }
        out
    }

    fn decode(mesh: &TriMesh, bytes: &[u8]) -> Result<Self, TextureError> {
        let corrupt = TextureError::CorruptCache;
        if bytes.len() < 20 || &bytes[..4] != CACHE_MAGIC {
            return Err(corrupt("header"));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let size = usize::try_from(word(4)).map_err(|_| corrupt("size"))?;
        let overlap_texels = usize::try_from(word(12)).map_err(|_| corrupt("overlap count"))?;
        let normals = mesh.vertex_normals();
        let mut pos = 20;
        let count = size.checked_mul(size).ok_or(corrupt("size"))?;
        let mut texels = Vec::with_capacity(count);
        for _ in 0..count {
            let face = u32::from_le_bytes(bytes.get(pos..pos + 4).ok_or(corrupt("truncated"))?.try_into().expect("4 bytes"));
            pos += 4;
            if face == u32::MAX {
                texels.push(None);
                continue;
            }
            let chunk = bytes.get(pos..pos + 24).ok_or(corrupt("truncated"))?;
            pos += 24;
            let b = [0, 1, 2].map(|k| f64::from_le_bytes(chunk[8 * k..8 * k + 8].try_into().expect("8 bytes")));
            if face as usize >= mesh.face_count() {
                return Err(corrupt("face index"));
            }
            texels.push(Some(sample_at(mesh, &normals, face as usize, b)));
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { size, texels, overlap_texels })
    }
}

/// UV texture under construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    pub size: usize,
    pub color: Vec<Vec3>,
    pub fill_mask: Vec<bool>,
    /// Summed facing weights of the views that wrote each texel; 0 where unfilled.
    pub weight: Vec<f64>,
    /// View that contributed the largest weight to each filled texel.
    pub origin: Vec<Option<usize>>,
}

impl TextureAtlas {
    pub fn new(size: usize) -> Self {
        let n = size * size;
        Self { size, color: vec![Vec3::zeros(); n], fill_mask: vec![false; n], weight: vec![0.0; n], origin: vec![None; n] }
    }

    pub fn filled(&self) -> usize {
        self.fill_mask.iter().filter(|&&f| f).count()
    }

    pub fn image(&self) -> ColorImage {
        ColorImage::from_pixels(self.size, self.size, self.color.clone()).expect("atlas is square")
    }
}

/// Texel accounting after finalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureCoverage {
    pub total_texels: usize,
    pub filled_texels: usize,
    /// Unfilled texels that took a neighbor's color.
    pub dilated_texels: usize,
    /// Unfilled texels left neutral gray.
    pub gray_texels: usize,
    /// Filled fraction of all texels.
    pub coverage: f64,
}

/// Bleeds filled colors into unfilled texels up to `dilation` 4-neighbor
/// steps away and paints the rest gray. Fill mask and weights are unchanged.
pub fn finalize_texture(atlas: &TextureAtlas, dilation: usize) -> (TextureAtlas, TextureCoverage) {
    let size = atlas.size;
    let mut out = atlas.clone();
    let mut reached: Vec<bool> = atlas.fill_mask.clone();
    let mut frontier: VecDeque<(usize, usize)> = (0..size * size).filter(|&i| reached[i]).map(|i| (i, 0)).collect();
    let mut dilated = 0;
    while let Some((i, depth)) = frontier.pop_front() {
        if depth == dilation {
            continue;
        }
        let (r, c) = (i / size, i % size);
        let neighbors = [(c > 0).then(|| i - 1), (c + 1 < size).then(|| i + 1), (r > 0).then(|| i - size), (r + 1 < size).then(|| i + size)];
        for j in neighbors.into_iter().flatten() {
            if !reached[j] {
                reached[j] = true;
                out.color[j] = out.color[i];
                dilated += 1;
                frontier.push_back((j, depth + 1));
            }
        }
    }
    let mut gray = 0;
    for (i, r) in reached.iter().enumerate() {
        if !r {
            out.color[i] = Vec3::repeat(GRAY);
            gray += 1;
        }
    }
    let total = size * size;
    let filled = atlas.filled();
    let coverage = if total == 0 { 0.0 } else { filled as f64 / total as f64 };
    (out, TextureCoverage { total_texels: total, filled_texels: filled, dilated_texels: dilated, gray_texels: gray, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::UvLayout;
    use crate::primitives;

    fn full_square_triangle() -> TriMesh {
        let v = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 1.0)];
        let uv = UvLayout { coords: vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 2.0)], faces: vec![[0, 1, 2]] };
        TriMesh::with_uvs(v, vec![[0, 1, 2]], Some(uv)).unwrap()
    }

    #[test]
    fn triangle_spanning_the_square_covers_all_texels_affinely() {
        let map = rasterize_uv_points(&full_square_triangle(), 16).unwrap();
        assert_eq!(map.covered(), 256);
        for (i, t) in map.texels.iter().enumerate() {
            let uv = texel_uv(16, i);
            let p = t.unwrap().point;
            assert!((p - Vec3::new(uv.x, uv.y, 0.5 * uv.y)).norm() < 1e-12);
        }
        assert_eq!(map.overlap_texels, 0);
    }

    #[test]
    fn missing_uvs_is_an_error() {
        assert!(matches!(rasterize_uv_points(&primitives::icosphere(1, 1.0), 8), Err(TextureError::MissingUvs)));
    }

    #[test]
    fn cube_texels_lie_on_the_surface() {
        let cube = primitives::cube_atlas(1.0);
        let map = rasterize_uv_points(&cube, 96).unwrap();
        assert!(map.covered() > 96 * 96 / 2);
        for t in map.texels.iter().flatten() {
            let p = t.point;
            let m = p.x.abs().max(p.y.abs()).max(p.z.abs());
            assert!((m - 0.5).abs() < 1e-6 && p.iter().all(|x| x.abs() <= 0.5 + 1e-6));
        }
    }

    #[test]
    fn overlapping_charts_are_counted() {
        let v = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
        let uv = UvLayout { coords: vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)], faces: vec![[0, 1, 2], [0, 1, 2]] };
        let m = TriMesh::with_uvs(v, vec![[0, 1, 2], [0, 1, 3]], Some(uv)).unwrap();
        let map = rasterize_uv_points(&m, 8).unwrap();
        assert!(map.overlap_texels > 0);
        assert!(map.texels.iter().flatten().all(|t| t.face == 0));
    }

    #[test]
    fn cache_round_trips_bit_exactly() {
        let mesh = primitives::uv_sphere(16, 8, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let built = TexelMap::cached(&mesh, 64, dir.path()).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let loaded = TexelMap::cached(&mesh, 64, dir.path()).unwrap();
        assert_eq!(built, loaded);
        assert_eq!(built, rasterize_uv_points(&mesh, 64).unwrap());
    }

    #[test]
    fn finalize_keeps_full_atlas() {
        let mut atlas = TextureAtlas::new(4);
        for i in 0..16 {
            atlas.color[i] = Vec3::new(i as f64 / 16.0, 0.2, 0.3);
            atlas.fill_mask[i] = true;
            atlas.weight[i] = 1.0;
        }
        let (out, cov) = finalize_texture(&atlas, 2);
        assert_eq!(out, atlas);
        assert_eq!(cov.coverage, 1.0);
        assert_eq!(cov.gray_texels, 0);
    }

    #[test]
    fn single_hole_takes_a_neighbor_color() {
        let mut atlas = TextureAtlas::new(5);
        for i in 0..25 {
            atlas.color[i] = Vec3::new(0.1 * (i % 5) as f64, 0.0, 0.0);
            atlas.fill_mask[i] = i != 12;
            atlas.weight[i] = if i == 12 { 0.0 } else { 1.0 };
        }
        let (out, cov) = finalize_texture(&atlas, 1);
        let neighbors = [7, 11, 13, 17].map(|j| atlas.color[j]);
        assert!(neighbors.contains(&out.color[12]));
        assert_eq!(cov.dilated_texels, 1);
        assert!(!out.fill_mask[12] && out.weight[12] == 0.0);
    }

    #[test]
    fn coverage_matches_counting() {
        let mut atlas = TextureAtlas::new(10);
        let filled: Vec<usize> = (0..100).filter(|i| (i * 37) % 11 < 4).collect();
        for &i in &filled {
            atlas.fill_mask[i] = true;
            atlas.weight[i] = 0.5;
        }
        let (out, cov) = finalize_texture(&atlas, 0);
        let unfilled = atlas.fill_mask.iter().filter(|f| !**f).count();
        assert_eq!(cov.gray_texels, unfilled);
        assert!((1.0 - cov.coverage - unfilled as f64 / 100.0).abs() < 1e-15);
        assert!(out.color.iter().zip(&atlas.fill_mask).all(|(c, f)| *f || *c == Vec3::repeat(GRAY)));
    }

    #[test]
    fn dilation_is_bounded() {
        let mut atlas = TextureAtlas::new(9);
        atlas.fill_mask[40] = true;
        atlas.weight[40] = 1.0;
        atlas.color[40] = Vec3::new(1.0, 0.0, 0.0);
        let (out, cov) = finalize_texture(&atlas, 2);
        // diamond of radius 2 around the center
        assert_eq!(cov.dilated_texels, 12);
        assert_eq!(out.color[40 + 2], Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(out.color[40 + 3], Vec3::repeat(GRAY));
    }
}
