//! Procedural meshes used as fixtures and demo inputs.

use std::collections::HashMap;

use crate::mesh::{TriMesh, UvLayout, Vec2, Vec3};

/// Flips faces whose normal points toward `center` (for star-shaped solids).
fn orient_outward(vertices: &[Vec3], faces: &mut [[usize; 3]], uv_faces: Option<&mut [[usize; 3]]>, center: Vec3) {
    let mut flips = Vec::new();
    for (i, f) in faces.iter_mut().enumerate() {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let n = (b - a).cross(&(c - a));
        if n.dot(&((a + b + c) / 3.0 - center)) < 0.0 {
            f.swap(1, 2);
            flips.push(i);
        }
    }
    if let Some(uv) = uv_faces {
        for i in flips {
            uv[i].swap(1, 2);
        }
    }
}

pub fn tetrahedron() -> TriMesh {
    let v = vec![
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, -1.0),
        Vec3::new(-1.0, 1.0, -1.0),
        Vec3::new(-1.0, -1.0, 1.0),
    ];
    let mut f = vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    orient_outward(&v, &mut f, None, Vec3::zeros());
    TriMesh::new(v, f).unwrap().named("tetrahedron")
}

/// Regular planar grid in the xy-plane with `nx * ny` quads split along one diagonal.
pub fn grid(nx: usize, ny: usize, width: f64, height: f64) -> TriMesh {
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push(Vec3::new(width * i as f64 / nx as f64, height * j as f64 / ny as f64, 0.0));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut f = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new(v, f).unwrap().named("grid")
}

/// Open cylinder around the y axis, centered at the origin, with two rims.
pub fn open_cylinder(segments: usize, rings: usize, radius: f64, height: f64) -> TriMesh {
    let mut v = Vec::with_capacity(segments * (rings + 1));
    for i in 0..=rings {
        let y = -0.5 * height + height * i as f64 / rings as f64;
        for j in 0..segments {
            let t = std::f64::consts::TAU * j as f64 / segments as f64;
            v.push(Vec3::new(radius * t.sin(), y, radius * t.cos()));
        }
    }
    let id = |i: usize, j: usize| i * segments + (j % segments);
    let mut f = Vec::with_capacity(2 * segments * rings);
    for i in 0..rings {
        for j in 0..segments {
            f.push([id(i, j), id(i, j + 1), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i + 1, j)]);
        }
    }
    TriMesh::new(v, f).unwrap().named("open_cylinder")
}

/// Subdivided icosahedron projected onto a sphere.
pub fn icosphere(subdivisions: usize, radius: f64) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| -> usize {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for &[a, b, c] in &f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    for p in &mut v {
        *p *= radius;
    }
    orient_outward(&v, &mut f, None, Vec3::zeros());
    TriMesh::new(v, f).unwrap().named("icosphere")
}

/// Latitude/longitude sphere around the y axis with an equirectangular UV
/// atlas. Seam vertices are shared in 3D and split in UV space.
pub fn uv_sphere(segments: usize, rings: usize, radius: f64) -> TriMesh {
    use std::f64::consts::{PI, TAU};
    let pos = |i: usize, j: usize| {
        let theta = PI * i as f64 / rings as f64;
        let phi = TAU * j as f64 / segments as f64;
        Vec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos()) * radius
    };
    let mut v = vec![Vec3::new(0.0, radius, 0.0)];
    for i in 1..rings {
        for j in 0..segments {
            v.push(pos(i, j));
        }
    }
    v.push(Vec3::new(0.0, -radius, 0.0));
    let south = v.len() - 1;
    let vid = |i: usize, j: usize| -> usize {
        if i == 0 {
            0
        } else if i == rings {
            south
        } else {
            1 + (i - 1) * segments + (j % segments)
        }
    };
    let mut coords = Vec::new();
    for i in 0..=rings {
        for j in 0..=segments {
            coords.push(Vec2::new(j as f64 / segments as f64, 1.0 - i as f64 / rings as f64));
        }
    }
    // pole corners use the middle of their segment
    let pole_uv_base = coords.len();
    for j in 0..segments {
        coords.push(Vec2::new((j as f64 + 0.5) / segments as f64, 1.0));
    }
    for j in 0..segments {
        coords.push(Vec2::new((j as f64 + 0.5) / segments as f64, 0.0));
    }
    let tid = |i: usize, j: usize| i * (segments + 1) + j;
    let mut f = Vec::new();
    let mut uf = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            if i == 0 {
                f.push([0, vid(1, j), vid(1, j + 1)]);
                uf.push([pole_uv_base + j, tid(1, j), tid(1, j + 1)]);
            } else if i == rings - 1 {
                f.push([vid(i, j), south, vid(i, j + 1)]);
                uf.push([tid(i, j), pole_uv_base + segments + j, tid(i, j + 1)]);
            } else {
                f.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
                uf.push([tid(i, j), tid(i + 1, j), tid(i + 1, j + 1)]);
                f.push([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
                uf.push([tid(i, j), tid(i + 1, j + 1), tid(i, j + 1)]);
            }
        }
    }
    orient_outward(&v, &mut f, Some(&mut uf), Vec3::zeros());
    TriMesh::with_uvs(v, f, Some(UvLayout { coords, faces: uf })).unwrap().named("uv_sphere")
}

/// Axis-aligned cube of the given edge length centered at the origin, with
/// one UV chart per side laid out on a 3x2 grid.
pub fn cube_atlas(edge: f64) -> TriMesh {
    let h = 0.5 * edge;
    let mut v = Vec::new();
    for &x in &[-h, h] {
        for &y in &[-h, h] {
            for &z in &[-h, h] {
                v.push(Vec3::new(x, y, z));
            }
        }
    }
    let id = |x: usize, y: usize, z: usize| x * 4 + y * 2 + z;
    // each side as a quad (a, b, c, d)
    let sides = [
        [id(1, 0, 0), id(1, 1, 0), id(1, 1, 1), id(1, 0, 1)],
        [id(0, 0, 0), id(0, 0, 1), id(0, 1, 1), id(0, 1, 0)],
        [id(0, 1, 0), id(0, 1, 1), id(1, 1, 1), id(1, 1, 0)],
        [id(0, 0, 0), id(1, 0, 0), id(1, 0, 1), id(0, 0, 1)],
        [id(0, 0, 1), id(1, 0, 1), id(1, 1, 1), id(0, 1, 1)],
        [id(0, 0, 0), id(0, 1, 0), id(1, 1, 0), id(1, 0, 0)],
    ];
    let pad = 0.02;
    let mut coords = Vec::new();
    let mut f = Vec::new();
    let mut uf = Vec::new();
    for (s, q) in sides.iter().enumerate() {
        let (cx, cy) = ((s % 3) as f64 / 3.0, (s / 3) as f64 / 2.0);
        let (w, hh) = (1.0 / 3.0, 0.5);
        let base = coords.len();
        coords.push(Vec2::new(cx + pad, cy + pad));
        coords.push(Vec2::new(cx + w - pad, cy + pad));
        coords.push(Vec2::new(cx + w - pad, cy + hh - pad));
        coords.push(Vec2::new(cx + pad, cy + hh - pad));
        f.push([q[0], q[1], q[2]]);
        uf.push([base, base + 1, base + 2]);
        f.push([q[0], q[2], q[3]]);
        uf.push([base, base + 2, base + 3]);
    }
    orient_outward(&v, &mut f, Some(&mut uf), Vec3::zeros());
    TriMesh::with_uvs(v, f, Some(UvLayout { coords, faces: uf })).unwrap().named("cube")
}

/// Two T-shaped panels stitched along shoulders, sleeves and sides, leaving
/// the neck, waist and both cuffs open (four boundary loops).
///
/// `resolution` subdivides the base 0.05 m cell; faces = 688 * resolution².
pub fn tshirt(resolution: usize) -> TriMesh {
    let r = resolution.max(1) as i64;
    let cell = 0.05 / r as f64;
    // extents in grid units
    let (torso_w, sleeve_w, sleeve_h, height, neck_w) = (5 * r, 9 * r, 4 * r, 14 * r, 2 * r);
    let inside_cell = |x: i64, y: i64| -> bool {
        // cell with lower-left corner (x, y); y runs downward from 0 as negative
        let torso = x >= -torso_w && x < torso_w && y >= -height && y < 0;
        let sleeves = x >= -sleeve_w && x < sleeve_w && y >= -sleeve_h && y < 0;
        torso || sleeves
    };
    let in_domain = |x: i64, y: i64| -> bool {
        (-1..=0).any(|dx| (-1..=0).any(|dy| inside_cell(x + dx, y + dy)))
    };
    let on_boundary = |x: i64, y: i64| -> bool {
        in_domain(x, y) && (-1..=0).any(|dx| (-1..=0).any(|dy| !inside_cell(x + dx, y + dy)))
    };
    let is_open = |x: i64, y: i64| -> bool {
        let neck = y == 0 && x > -neck_w && x < neck_w;
        let waist = y == -height && x > -torso_w && x < torso_w;
        let cuff = (x == -sleeve_w || x == sleeve_w) && y > -sleeve_h && y < 0;
        neck || waist || cuff
    };
    let stitched = |x: i64, y: i64| on_boundary(x, y) && !is_open(x, y);

    let mut points = Vec::new();
    for y in -height..=0 {
        for x in -sleeve_w..=sleeve_w {
            if in_domain(x, y) {
                points.push((x, y));
            }
        }
    }
    let seam: Vec<(i64, i64)> = points.iter().copied().filter(|&(x, y)| stitched(x, y)).collect();
    let bulge = |x: i64, y: i64| -> f64 {
        let d = seam
            .iter()
            .map(|&(sx, sy)| (((sx - x).pow(2) + (sy - y).pow(2)) as f64).sqrt())
            .fold(f64::INFINITY, f64::min);
        1.6 * r as f64 * (d / (3.0 * r as f64)).tanh()
    };

    let mut v = Vec::new();
    let mut front = HashMap::new();
    let mut back = HashMap::new();
    for &(x, y) in &points {
        let z = bulge(x, y) * cell;
        let p = Vec3::new(x as f64 * cell, y as f64 * cell, 0.0);
        if stitched(x, y) {
            front.insert((x, y), v.len());
            back.insert((x, y), v.len());
            v.push(p);
        } else {
            front.insert((x, y), v.len());
            v.push(p + Vec3::new(0.0, 0.0, z));
            back.insert((x, y), v.len());
            v.push(p - Vec3::new(0.0, 0.0, z));
        }
    }

    let span_x = (2 * sleeve_w) as f64;
    let span_y = height as f64;
    let mut coords = Vec::new();
    let mut front_uv = HashMap::new();
    let mut back_uv = HashMap::new();
    for &(x, y) in &points {
        let u = (x + sleeve_w) as f64 / span_x * 0.48 + 0.01;
        let w = (y + height) as f64 / span_y * 0.96 + 0.02;
        front_uv.insert((x, y), coords.len());
        coords.push(Vec2::new(u, w));
        back_uv.insert((x, y), coords.len());
        coords.push(Vec2::new(u + 0.5, w));
    }

    let mut f = Vec::new();
    let mut uf = Vec::new();
    for y in -height..0 {
        for x in -sleeve_w..sleeve_w {
            if !inside_cell(x, y) {
                continue;
            }
            let q = [(x, y), (x + 1, y), (x + 1, y + 1), (x, y + 1)];
            let fr: Vec<usize> = q.iter().map(|k| front[k]).collect();
            let fu: Vec<usize> = q.iter().map(|k| front_uv[k]).collect();
            f.push([fr[0], fr[1], fr[2]]);
            uf.push([fu[0], fu[1], fu[2]]);
            f.push([fr[0], fr[2], fr[3]]);
            uf.push([fu[0], fu[2], fu[3]]);
            let bk: Vec<usize> = q.iter().map(|k| back[k]).collect();
            let bu: Vec<usize> = q.iter().map(|k| back_uv[k]).collect();
            f.push([bk[0], bk[2], bk[1]]);
            uf.push([bu[0], bu[2], bu[1]]);
            f.push([bk[0], bk[3], bk[2]]);
            uf.push([bu[0], bu[3], bu[2]]);
        }
    }
    TriMesh::with_uvs(v, f, Some(UvLayout { coords, faces: uf })).unwrap().named("tshirt")
}

/// Offsets every vertex along its area-weighted normal.
pub fn inflate(mesh: &TriMesh, offset: f64) -> TriMesh {
    let normals = mesh.vertex_normals();
    let v = mesh.vertices().iter().zip(&normals).map(|(p, n)| p + offset * n).collect();
    mesh.with_vertices(v).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{boundary_loops, quality_report};

    #[test]
    fn tshirt_has_four_openings() {
        let m = tshirt(1);
        assert_eq!(m.face_count(), 688);
        let loops = boundary_loops(&m).unwrap();
        assert_eq!(loops.len(), 4);
        let q = quality_report(&m);
        assert_eq!(q.self_intersection_count, 0);
        assert!(q.min_interior_angle > 15.0, "{q:?}");
    }

    #[test]
    fn face_counts() {
        assert_eq!(tshirt(3).face_count(), 688 * 9);
        assert_eq!(icosphere(2, 1.0).face_count(), 320);
        assert_eq!(uv_sphere(12, 6, 1.0).face_count(), 12 * 2 + 12 * 4 * 2);
    }

    #[test]
    fn closed_primitives_have_no_holes() {
        for m in [icosphere(1, 1.0), uv_sphere(16, 8, 1.0), cube_atlas(1.0), tetrahedron()] {
            assert!(boundary_loops(&m).unwrap().is_empty(), "{}", m.name());
            let outward = (0..m.face_count()).all(|f| {
                let [a, b, c] = m.face_corners(f);
                m.face_normal(f).dot(&((a + b + c) / 3.0)) > 0.0
            });
            assert!(outward, "{}", m.name());
        }
    }
}
