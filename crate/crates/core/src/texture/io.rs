use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::atlas::{TextureAtlas, TextureCoverage};
use super::project::ViewImage;
use super::TextureError;
use crate::image_buf::ColorImage;
use crate::mesh::{write_obj, ObjOptions, TriMesh};
use crate::render::{orbit_camera, Camera, RigOptions};

/// One entry of a view-set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub tag: String,
    /// PNG path, relative to the view-set file.
    pub image: PathBuf,
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view, degrees.
    pub fov: f64,
    /// `[width, height]`
    pub resolution: [usize; 2],
}

impl CameraSpec {
    pub fn camera(&self) -> Result<Camera, TextureError> {
        Ok(Camera::new(self.position.into(), self.look_at.into(), self.up.into(), self.fov, (self.resolution[0], self.resolution[1]))?)
    }

    pub fn from_camera(camera: &Camera, tag: &str, image: impl Into<PathBuf>) -> Self {
        Self {
            tag: tag.to_string(),
            image: image.into(),
            position: camera.position.into(),
            look_at: camera.look_at.into(),
            up: camera.up.into(),
            fov: camera.vertical_fov,
            resolution: [camera.width(), camera.height()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSetFile {
    pub views: Vec<CameraSpec>,
}

pub fn load_view_set(path: impl AsRef<Path>) -> Result<Vec<ViewImage>, TextureError> {
    let path = path.as_ref();
    let set: ViewSetFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    set.views.iter().map(|s| ViewImage::new(ColorImage::load(dir.join(&s.image))?, s.camera()?, s.tag.clone())).collect()
}

/// Writes each view's image as `<tag>.png` next to a `views.json` index.
pub fn save_view_set(views: &[ViewImage], dir: impl AsRef<Path>) -> Result<PathBuf, TextureError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut specs = Vec::with_capacity(views.len());
    for v in views {
        let name = format!("{}.png", v.tag);
        v.rgb.save_png(dir.join(&name))?;
        specs.push(CameraSpec::from_camera(&v.camera, &v.tag, name));
    }
    let path = dir.join("views.json");
    std::fs::write(&path, serde_json::to_string_pretty(&ViewSetFile { views: specs })?)?;
    Ok(path)
}

/// Front, back and four views at 45°, 135°, 225° and 315° azimuth, all at
/// zero elevation around the mesh centroid.
pub fn default_texture_cameras(mesh: &TriMesh, resolution: usize) -> Vec<(String, Camera)> {
    let options = RigOptions::default().with_resolution(resolution);
    let center = mesh.centroid();
    let radius = (options.radius_factor * mesh.bounding_radius()).max(1e-9);
    let mut out = vec![("front".to_string(), orbit_camera(center, radius, 0.0, 0.0, &options)), ("back".to_string(), orbit_camera(center, radius, 180.0, 0.0, &options))];
    for (k, az) in [45.0, 135.0, 225.0, 315.0].into_iter().enumerate() {
        out.push((format!("aux-{}", k + 1), orbit_camera(center, radius, az, 0.0, &options)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureOutputs {
    pub texture: PathBuf,
    pub material: PathBuf,
    pub mesh: PathBuf,
    pub coverage: PathBuf,
}

/// Writes `<stem>.png`, `<stem>.mtl`, `<stem>.obj` referencing the material,
/// and `<stem>_coverage.json`.
pub fn write_texture_outputs(dir: impl AsRef<Path>, stem: &str, mesh: &TriMesh, atlas: &TextureAtlas, coverage: &TextureCoverage) -> Result<TextureOutputs, TextureError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let texture = dir.join(format!("{stem}.png"));
    atlas.image().save_png(&texture)?;
    let material = dir.join(format!("{stem}.mtl"));
    let mtl = format!("newmtl {stem}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {stem}.png\n");
    std::fs::write(&material, mtl)?;
    let obj = dir.join(format!("{stem}.obj"));
    std::fs::write(&obj, write_obj(mesh, &ObjOptions { material_library: Some((format!("{stem}.mtl"), stem.to_string())) }))?;
    let coverage_path = dir.join(format!("{stem}_coverage.json"));
    std::fs::write(&coverage_path, serde_json::to_string_pretty(coverage)?)?;
    Ok(TextureOutputs { texture, material, mesh: obj, coverage: coverage_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;
    use crate::primitives;

    #[test]
    fn view_set_round_trips() {
        let mesh = primitives::uv_sphere(8, 4, 1.0);
        let views: Vec<ViewImage> = default_texture_cameras(&mesh, 16)
            .into_iter()
            .map(|(tag, cam)| ViewImage::new(ColorImage::from_fn(16, 16, |x, y| Vec3::new(x as f64 / 15.0, y as f64 / 15.0, 0.2)), cam, tag).unwrap())
            .collect();
        assert_eq!(views.len(), 6);
        assert_eq!(views[0].tag, "front");
        assert_eq!(views[1].tag, "back");
        let dir = tempfile::tempdir().unwrap();
        let index = save_view_set(&views, dir.path()).unwrap();
        let back = load_view_set(index).unwrap();
        assert_eq!(back.len(), 6);
        for (a, b) in views.iter().zip(&back) {
            assert_eq!(a.tag, b.tag);
            assert_eq!(a.camera.resolution, b.camera.resolution);
            assert!((a.camera.position - b.camera.position).norm() < 1e-12);
            let err = a.rgb.pixels().iter().zip(b.rgb.pixels()).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max);
            assert!(err <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn outputs_reference_each_other() {
        let mesh = primitives::cube_atlas(1.0);
        let atlas = TextureAtlas::new(8);
        let (atlas, cov) = crate::texture::finalize_texture(&atlas, 0);
        let dir = tempfile::tempdir().unwrap();
        let out = write_texture_outputs(dir.path(), "garment", &mesh, &atlas, &cov).unwrap();
        let obj = std::fs::read_to_string(&out.mesh).unwrap();
        assert!(obj.starts_with("mtllib garment.mtl"));
        assert!(std::fs::read_to_string(&out.material).unwrap().contains("map_Kd garment.png"));
        let parsed: TextureCoverage = serde_json::from_str(&std::fs::read_to_string(&out.coverage).unwrap()).unwrap();
        assert_eq!(parsed, cov);
        assert_eq!(ColorImage::load(&out.texture).unwrap().width(), 8);
    }
}
