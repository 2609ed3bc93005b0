use rayon::prelude::*;

use super::atlas::{finalize_texture, TexelMap, TextureAtlas, TextureCoverage};
use super::TextureError;
use crate::image_buf::ColorImage;
use crate::mesh::{TriMesh, Vec3};
use crate::render::{Camera, Rasterizer, RenderTape};

/// Minimum cosine between a texel normal and the direction to the camera.
pub const FACING_THRESHOLD: f64 = 0.2;
/// Depth tolerance as a fraction of the mesh bounding radius.
pub const DEPTH_TOLERANCE: f64 = 1e-3;

/// Appearance image of the mesh seen through `camera`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub rgb: ColorImage,
    pub camera: Camera,
    /// Role of the view, e.g. `front`, `back`, `aux-3`.
    pub tag: String,
}

impl ViewImage {
    pub fn new(rgb: ColorImage, camera: Camera, tag: impl Into<String>) -> Result<Self, TextureError> {
        let tag = tag.into();
        camera.validate()?;
        if (rgb.width(), rgb.height()) != camera.resolution {
            return Err(TextureError::ViewResolution { tag, expected: camera.resolution, got: (rgb.width(), rgb.height()) });
        }
        if rgb.pixels().iter().flat_map(|p| p.iter()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(TextureError::PixelRange { tag });
        }
        Ok(Self { rgb, camera, tag })
    }

    fn is_front_or_back(&self) -> bool {
        self.tag == "front" || self.tag == "back"
    }
}

/// A texel that passes the projection, depth and facing tests of one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibleTexel {
    pub texel: usize,
    pub color: Vec3,
    /// Cosine between the texel normal and the direction to the camera.
    pub weight: f64,
}

/// Depth along the view axis of face `face`'s plane under screen position `(px, py)`.
fn plane_depth(mesh: &TriMesh, camera: &Camera, face: usize, px: f64, py: f64) -> f64 {
    let rot = camera.rotation();
    let [a, b, c] = mesh.face_corners(face).map(|p| rot * (p - camera.position));
    let n = (b - a).cross(&(c - a));
    n.dot(&a) / n.dot(&camera.ray_direction(px, py))
}

fn render_tape(mesh: &TriMesh, camera: &Camera) -> RenderTape {
    Rasterizer::new(mesh).forward(mesh.vertices(), camera, 0.0).1
}

/// Texels of `map` that `view` sees: the surface point projects inside the
/// image, matches the rendered depth under it within the tolerance, and its
/// normal faces the camera.
pub fn visible_texels(mesh: &TriMesh, map: &TexelMap, view: &ViewImage) -> Result<Vec<VisibleTexel>, TextureError> {
    let camera = &view.camera;
    let tape = render_tape(mesh, camera);
    let tolerance = DEPTH_TOLERANCE * mesh.bounding_radius();
    let (w, h) = (camera.width() as f64, camera.height() as f64);
    Ok(map
        .texels
        .par_iter()
        .enumerate()
        .filter_map(|(texel, sample)| {
            let s = sample.as_ref()?;
            let to_camera = camera.position - s.point;
            let cos = s.normal.dot(&to_camera) / to_camera.norm();
            if !(cos > FACING_THRESHOLD) {
                return None;
            }
            let (px, py, depth) = camera.project(&s.point)?;
            if !(px >= 0.0 && px < w && py >= 0.0 && py < h) {
                return None;
            }
            let pixel = py as usize * camera.width() + px as usize;
            let face = tape.visible_face(pixel)?;
            let rendered = if face == s.face { depth } else { plane_depth(mesh, camera, face, px, py) };
            if !((depth - rendered).abs() < tolerance) {
                return None;
            }
            Some(VisibleTexel { texel, color: view.rgb.sample_bilinear(px, py), weight: cos })
        })
        .collect())
}

fn check_size(atlas: &TextureAtlas, map: &TexelMap) -> Result<(), TextureError> {
    if atlas.size != map.size {
        return Err(TextureError::SizeMismatch { expected: map.size, got: atlas.size });
    }
    Ok(())
}

/// Writes the weighted mean of all listed views into texels that were
/// unfilled before the pass. Returns the number of texels written.
fn apply(atlas: &mut TextureAtlas, passes: &[(usize, &[VisibleTexel])]) -> usize {
    let n = atlas.size * atlas.size;
    let mut sum = vec![Vec3::zeros(); n];
    let mut weight = vec![0.0; n];
    let mut best: Vec<Option<(usize, f64)>> = vec![None; n];
    for &(view, texels) in passes {
        for t in texels {
            if atlas.fill_mask[t.texel] {
                continue;
            }
            sum[t.texel] += t.color * t.weight;
            weight[t.texel] += t.weight;
            if best[t.texel].is_none_or(|(_, w)| t.weight > w) {
                best[t.texel] = Some((view, t.weight));
            }
        }
    }
    let mut written = 0;
    for i in 0..n {
        if weight[i] > 0.0 {
            atlas.color[i] = sum[i] / weight[i];
            atlas.weight[i] = weight[i];
            atlas.fill_mask[i] = true;
            atlas.origin[i] = best[i].map(|(v, _)| v);
            written += 1;
        }
    }
    written
}

/// Backprojects one view into unfilled texels; `index` is recorded as the origin.
pub fn backproject_view(atlas: &mut TextureAtlas, map: &TexelMap, mesh: &TriMesh, view: &ViewImage, index: usize) -> Result<usize, TextureError> {
    check_size(atlas, map)?;
    let texels = visible_texels(mesh, map, view)?;
    Ok(apply(atlas, &[(index, &texels)]))
}

/// Backprojects several views in one pass; texels seen by more than one are
/// blended by facing weight.
pub fn backproject_views_jointly(atlas: &mut TextureAtlas, map: &TexelMap, mesh: &TriMesh, views: &[(usize, &ViewImage)]) -> Result<usize, TextureError> {
    check_size(atlas, map)?;
    let visible = views.iter().map(|(_, v)| visible_texels(mesh, map, v)).collect::<Result<Vec<_>, _>>()?;
    let passes: Vec<(usize, &[VisibleTexel])> = views.iter().zip(&visible).map(|((i, _), t)| (*i, t.as_slice())).collect();
    Ok(apply(atlas, &passes))
}

/// Applies the `front` and `back` views together, then repeatedly the view
/// with the most visible unfilled texels (lowest index on ties) until no view
/// adds texels. Returns the application order.
pub fn select_views(atlas: &mut TextureAtlas, map: &TexelMap, mesh: &TriMesh, views: &[ViewImage]) -> Result<Vec<usize>, TextureError> {
    if views.is_empty() {
        return Err(TextureError::NoViews);
    }
    check_size(atlas, map)?;
    let visible = views.iter().map(|v| visible_texels(mesh, map, v)).collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..views.len()).filter(|&i| views[i].is_front_or_back()).collect();
    let first: Vec<(usize, &[VisibleTexel])> = order.iter().map(|&i| (i, visible[i].as_slice())).collect();
    apply(atlas, &first);
    let mut remaining: Vec<usize> = (0..views.len()).filter(|i| !order.contains(i)).collect();
    loop {
        let unfilled = |i: usize| visible[i].iter().filter(|t| !atlas.fill_mask[t.texel]).count();
        let Some((pos, count)) = remaining.iter().enumerate().map(|(p, &i)| (p, unfilled(i))).fold(None, |acc: Option<(usize, usize)>, cur| match acc {
            Some(a) if a.1 >= cur.1 => Some(a),
            _ => Some(cur),
        }) else {
            break;
        };
        if count == 0 {
            break;
        }
        let view = remaining.remove(pos);
        apply(atlas, &[(view, &visible[view])]);
        order.push(view);
    }
    Ok(order)
}

/// Finished texture with its accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureResult {
    /// Backprojected atlas before dilation and gray fill.
    pub raw: TextureAtlas,
    pub atlas: TextureAtlas,
    pub coverage: TextureCoverage,
    pub order: Vec<usize>,
}

pub fn texture_from_views(mesh: &TriMesh, map: &TexelMap, views: &[ViewImage], dilation: usize) -> Result<TextureResult, TextureError> {
    let mut raw = TextureAtlas::new(map.size);
    let order = select_views(&mut raw, map, mesh, views)?;
    let (atlas, coverage) = finalize_texture(&raw, dilation);
    Ok(TextureResult { raw, atlas, coverage, order })
}

/// Renders the mesh with a UV texture, unlit; background is black.
pub fn render_textured(mesh: &TriMesh, texture: &ColorImage, camera: &Camera) -> Result<ColorImage, TextureError> {
    let uvs = mesh.uvs().ok_or(TextureError::MissingUvs)?;
    camera.validate()?;
    let tape = render_tape(mesh, camera);
    let rot_t = camera.rotation().transpose();
    let (tw, th) = (texture.width() as f64, texture.height() as f64);
    let w = camera.width();
    let pixels = (0..w * camera.height())
        .into_par_iter()
        .map(|i| {
            let Some(face) = tape.visible_face(i) else {
                return Vec3::zeros();
            };
            let (px, py) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let depth = plane_depth(mesh, camera, face, px, py);
            let point = camera.position + rot_t * camera.ray_direction(px, py) * depth;
            let [a, b, c] = mesh.face_corners(face);
            let n = (b - a).cross(&(c - a));
            let nn = n.norm_squared();
            let b1 = (point - a).cross(&(c - a)).dot(&n) / nn;
            let b2 = (b - a).cross(&(point - a)).dot(&n) / nn;
            let t = uvs.faces[face];
            let uv = uvs.coords[t[0]] * (1.0 - b1 - b2) + uvs.coords[t[1]] * b1 + uvs.coords[t[2]] * b2;
            texture.sample_bilinear(uv.x * tw, (1.0 - uv.y) * th)
        })
        .collect();
    Ok(ColorImage::from_pixels(w, camera.height(), pixels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{UvLayout, Vec2};
    use crate::texture::rasterize_uv_points;

    fn quad(z: f64, uv_offset: f64) -> (Vec<Vec3>, Vec<[usize; 3]>, Vec<Vec2>) {
        let v = vec![Vec3::new(-1.0, -1.0, z), Vec3::new(1.0, -1.0, z), Vec3::new(1.0, 1.0, z), Vec3::new(-1.0, 1.0, z)];
        let uv = vec![Vec2::new(uv_offset, 0.0), Vec2::new(uv_offset + 0.5, 0.0), Vec2::new(uv_offset + 0.5, 1.0), Vec2::new(uv_offset, 1.0)];
        (v, vec![[0, 1, 2], [0, 2, 3]], uv)
    }

    fn head_on(res: usize) -> Camera {
        Camera::new(Vec3::new(0.0, 0.0, 4.0), Vec3::zeros(), Vec3::y(), 40.0, (res, res)).unwrap()
    }

    #[test]
    fn constant_view_transfers_exactly() {
        let (v, f, uv) = quad(0.0, 0.0);
        let mesh = TriMesh::with_uvs(v, f.clone(), Some(UvLayout { coords: uv, faces: f })).unwrap();
        let map = rasterize_uv_points(&mesh, 32).unwrap();
        let green = Vec3::new(0.0, 1.0, 0.0);
        let view = ViewImage::new(ColorImage::filled(128, 128, green), head_on(128), "front").unwrap();
        let mut atlas = TextureAtlas::new(32);
        let written = backproject_view(&mut atlas, &map, &mesh, &view, 0).unwrap();
        assert_eq!(written, map.covered());
        for (t, s) in map.texels.iter().enumerate() {
            if s.is_some() {
                assert_eq!(atlas.color[t], green);
                assert!(atlas.weight[t] > 0.0);
            }
        }
    }

    #[test]
    fn occluded_texels_are_not_written() {
        // back quad at z = −1 charted on the left half, front quad at z = 0 on the right
        let (mut v, mut f, mut uv) = quad(-1.0, 0.0);
        let (v2, f2, uv2) = quad(0.0, 0.5);
        v.extend(v2);
        uv.extend(uv2);
        f.extend(f2.iter().map(|t| t.map(|i| i + 4)));
        let mesh = TriMesh::with_uvs(v, f.clone(), Some(UvLayout { coords: uv, faces: f })).unwrap();
        let map = rasterize_uv_points(&mesh, 32).unwrap();
        let view = ViewImage::new(ColorImage::filled(128, 128, Vec3::new(1.0, 0.0, 0.0)), head_on(128), "aux-1").unwrap();
        let seen = visible_texels(&mesh, &map, &view).unwrap();
        assert!(!seen.is_empty());
        assert!(seen.iter().all(|t| map.texels[t.texel].unwrap().face >= 2));
    }

    #[test]
    fn mismatched_view_is_rejected() {
        let err = ViewImage::new(ColorImage::filled(10, 12, Vec3::zeros()), head_on(10), "front").unwrap_err();
        assert!(matches!(err, TextureError::ViewResolution { .. }));
        let err = ViewImage::new(ColorImage::filled(10, 10, Vec3::repeat(1.5)), head_on(10), "front").unwrap_err();
        assert!(matches!(err, TextureError::PixelRange { .. }));
    }
}
