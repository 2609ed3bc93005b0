use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MeshError, TriMesh, UvLayout, Vec2, Vec3};

/// Extra records to emit when writing an OBJ.
#[derive(Debug, Clone, Default)]
pub struct ObjOptions {
    /// Emitted as `mtllib <name>` followed by `usemtl <material>`.
    pub material_library: Option<(String, String)>,
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh, MeshError> {
    let text = fs::read_to_string(path.as_ref())?;
    let mesh = parse_obj(&text)?;
    if mesh.name().is_empty() {
        let stem = path.as_ref().file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        return Ok(mesh.named(stem));
    }
    Ok(mesh)
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { line, message: message.into() }
}

fn parse_floats<const N: usize>(line: usize, fields: &[&str]) -> Result<[f64; N], MeshError> {
    if fields.len() < N {
        return Err(parse_err(line, format!("expected {N} coordinates, found {}", fields.len())));
    }
    let mut out = [0.0f64; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().map_err(|_| parse_err(line, format!("invalid number `{f}`")))?;
        if !o.is_finite() {
            return Err(parse_err(line, format!("non-finite coordinate `{f}`")));
        }
    }
    Ok(out)
}

/// Parses a 1-based OBJ index. Negative (relative) indices are not accepted.
fn parse_index(line: usize, s: &str) -> Result<usize, MeshError> {
    let i: i64 = s.parse().map_err(|_| parse_err(line, format!("invalid index `{s}`")))?;
    if i < 0 {
        return Err(parse_err(line, format!("negative index `{s}` is not supported")));
    }
    if i == 0 {
        return Err(parse_err(line, "index 0 is invalid (OBJ indices are 1-based)"));
    }
    Ok(i as usize - 1)
}

pub fn parse_obj(text: &str) -> Result<TriMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut coords = Vec::new();
    let mut faces = Vec::new();
    let mut uv_faces = Vec::new();
    let mut name = String::new();
    // Some(true) once a face with texture indices is seen, Some(false) for one without.
    let mut faces_have_uv: Option<bool> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let fields: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                let [x, y, z] = parse_floats::<3>(line, &fields)?;
                vertices.push(Vec3::new(x, y, z));
            }
            "vt" => {
                let [u, v] = parse_floats::<2>(line, &fields)?;
                coords.push(Vec2::new(u, v));
            }
            "f" => {
                if fields.len() < 3 {
                    return Err(parse_err(line, "face needs at least three corners"));
                }
                let mut corners = Vec::with_capacity(fields.len());
                for field in &fields {
                    let mut it = field.split('/');
                    let v = parse_index(line, it.next().unwrap_or_default())?;
                    if v >= vertices.len() {
                        return Err(parse_err(
                            line,
                            format!("vertex index {} out of range ({} vertices)", v + 1, vertices.len()),
                        ));
                    }
                    let vt = match it.next() {
                        Some(s) if !s.is_empty() => {
                            let t = parse_index(line, s)?;
                            if t >= coords.len() {
                                return Err(parse_err(
                                    line,
                                    format!("uv index {} out of range ({} uvs)", t + 1, coords.len()),
                                ));
                            }
                            Some(t)
                        }
                        _ => None,
                    };
                    corners.push((v, vt));
                }
                let has_uv = corners.iter().all(|c| c.1.is_some());
                if !has_uv && corners.iter().any(|c| c.1.is_some()) {
                    return Err(parse_err(line, "face mixes corners with and without uv indices"));
                }
                match faces_have_uv {
                    None => faces_have_uv = Some(has_uv),
                    Some(prev) if prev != has_uv => {
                        return Err(parse_err(line, "faces mix records with and without uv indices"));
                    }
                    _ => {}
                }
                // fan triangulation around the first corner
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0].0, corners[k].0, corners[k + 1].0]);
                    if has_uv {
                        uv_faces.push([
                            corners[0].1.unwrap(),
                            corners[k].1.unwrap(),
                            corners[k + 1].1.unwrap(),
                        ]);
                    }
                }
            }
            "o" | "g" if name.is_empty() => {
                name = fields.join(" ");
            }
            _ => {}
        }
    }

    let uvs = (faces_have_uv == Some(true)).then_some(UvLayout { coords, faces: uv_faces });
    Ok(TriMesh::with_uvs(vertices, faces, uvs)?.named(name))
}

/// Serializes with round-trip float formatting; vertex and uv order is kept.
pub fn write_obj(mesh: &TriMesh, options: &ObjOptions) -> String {
    let mut out = String::new();
    if let Some((lib, _)) = &options.material_library {
        let _ = writeln!(out, "mtllib {lib}");
    }
    if !mesh.name().is_empty() {
        let _ = writeln!(out, "o {}", mesh.name());
    }
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    if let Some(uv) = mesh.uvs() {
        for t in &uv.coords {
            let _ = writeln!(out, "vt {} {}", t.x, t.y);
        }
    }
    if let Some((_, mat)) = &options.material_library {
        let _ = writeln!(out, "usemtl {mat}");
    }
    match mesh.uvs() {
        Some(uv) => {
            for (f, t) in mesh.faces().iter().zip(&uv.faces) {
                let _ = writeln!(out, "f {}/{} {}/{} {}/{}", f[0] + 1, t[0] + 1, f[1] + 1, t[1] + 1, f[2] + 1, t[2] + 1);
            }
        }
        None => {
            for f in mesh.faces() {
                let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
    }
    out
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    fs::write(path, write_obj(mesh, &ObjOptions::default()))?;
    Ok(())
}
