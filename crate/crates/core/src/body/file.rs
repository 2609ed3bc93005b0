//! Binary body container.
//!
//! Layout, little-endian throughout:
//!
//! | field            | type                           |
//! |------------------|--------------------------------|
//! | magic            | `b"GBDY"`                      |
//! | version          | u32                            |
//! | vertex count V   | u64                            |
//! | face count F     | u64                            |
//! | shape count S    | u64                            |
//! | joint count J    | u64                            |
//! | template         | V × 3 × f64                    |
//! | faces            | F × 3 × u32                    |
//! | blendshapes      | S × V × 3 × f64                |
//! | joints           | J × (i64 parent or −1, 3 × f64)|
//! | skinning weights | V × J × f64, row-major         |
//! | SHA-256 digest   | 32 bytes over all above        |

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{BodyError, Joint, ParametricBody};
use crate::mesh::{TriMesh, Vec3};

pub const BODY_MAGIC: &[u8; 4] = b"GBDY";
pub const BODY_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_body(body: &ParametricBody) -> Vec<u8> {
    let mut out = Vec::new();
    let put_f = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(BODY_MAGIC);
    out.extend_from_slice(&BODY_VERSION.to_le_bytes());
    let t = body.template();
    for n in [t.vertex_count(), t.face_count(), body.shape_count(), body.joint_count()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for p in t.vertices() {
        p.iter().for_each(|&x| put_f(&mut out, x));
    }
    for f in t.faces() {
        for &i in f {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    for shape in body.shape_basis() {
        for p in shape {
            p.iter().for_each(|&x| put_f(&mut out, x));
        }
    }
    for j in body.joints() {
        out.extend_from_slice(&j.parent.map_or(-1i64, |p| p as i64).to_le_bytes());
        j.rest_position.iter().for_each(|&x| put_f(&mut out, x));
    }
    body.weights().iter().for_each(|&w| put_f(&mut out, w));
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], BodyError> {
        let end = self.pos + N;
        let out = self.bytes.get(self.pos..end).ok_or(BodyError::Corrupt("truncated"))?;
        self.pos = end;
        Ok(out.try_into().expect("slice of length N"))
    }

    fn count(&mut self) -> Result<usize, BodyError> {
        usize::try_from(u64::from_le_bytes(self.take()?)).map_err(|_| BodyError::Corrupt("count overflows"))
    }

    fn f64(&mut self) -> Result<f64, BodyError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn vec3(&mut self) -> Result<Vec3, BodyError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_body(bytes: &[u8]) -> Result<ParametricBody, BodyError> {
    if bytes.len() < 8 + DIGEST_LEN || &bytes[..4] != BODY_MAGIC {
        return Err(BodyError::Corrupt("missing header"));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if found != BODY_VERSION {
        return Err(BodyError::VersionMismatch { found, expected: BODY_VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(BodyError::Corrupt("digest mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let (v, f, s, j) = (r.count()?, r.count()?, r.count()?, r.count()?);
    let needed = v
        .checked_mul(24)
        .and_then(|a| f.checked_mul(12).and_then(|b| a.checked_add(b)))
        .and_then(|a| s.checked_mul(v).and_then(|n| n.checked_mul(24)).and_then(|b| a.checked_add(b)))
        .and_then(|a| j.checked_mul(32).and_then(|b| a.checked_add(b)))
        .and_then(|a| v.checked_mul(j).and_then(|n| n.checked_mul(8)).and_then(|b| a.checked_add(b)))
        .ok_or(BodyError::Corrupt("count overflows"))?;
    if needed != r.remaining() {
        return Err(BodyError::Corrupt("size does not match counts"));
    }
    let vertices = (0..v).map(|_| r.vec3()).collect::<Result<Vec<_>, _>>()?;
    let mut faces = Vec::with_capacity(f);
    for _ in 0..f {
        let mut t = [0usize; 3];
        for k in &mut t {
            *k = u32::from_le_bytes(r.take()?) as usize;
        }
        faces.push(t);
    }
    let shapes = (0..s).map(|_| (0..v).map(|_| r.vec3()).collect::<Result<Vec<_>, _>>()).collect::<Result<Vec<_>, _>>()?;
    let mut joints = Vec::with_capacity(j);
    for _ in 0..j {
        let parent = i64::from_le_bytes(r.take()?);
        let parent = if parent < 0 { None } else { Some(usize::try_from(parent).map_err(|_| BodyError::Corrupt("parent index"))?) };
        joints.push(Joint { parent, rest_position: r.vec3()? });
    }
    let weights = (0..v * j).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let template = TriMesh::new(vertices, faces)?;
    ParametricBody::new(template, shapes, joints, weights)
}

pub fn save_body(body: &ParametricBody, path: impl AsRef<Path>) -> Result<(), BodyError> {
    std::fs::write(path, encode_body(body))?;
    Ok(())
}

pub fn load_body(path: impl AsRef<Path>) -> Result<ParametricBody, BodyError> {
    decode_body(&std::fs::read(path)?)
}
