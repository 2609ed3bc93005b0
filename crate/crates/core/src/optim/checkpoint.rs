//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field            | type                    |
//! |------------------|-------------------------|
//! | magic            | `b"G3DG"`               |
//! | version          | u32                     |
//! | seed             | u64                     |
//! | iteration        | u64                     |
//! | face count F     | u64                     |
//! | jacobians        | 9F × f64, row-major     |
//! | translation      | 3 × f64                 |
//! | first moment     | (9F + 3) × f64          |
//! | second moment    | (9F + 3) × f64          |
//! | best loss        | f64                     |
//! | best iteration   | u64                     |
//! | best jacobians   | 9F × f64                |
//! | best translation | 3 × f64                 |
//! | history length H | u64                     |
//! | history          | H × 6 × f64             |
//! | SHA-256 digest   | 32 bytes over all above |

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::OptState;
use crate::jacobian::JacobianField;
use crate::losses::LossBreakdown;
use crate::mesh::Vec3;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"G3DG";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
    #[error("checkpoint version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Corrupt("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Corrupt("count overflows"))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Corrupt("count overflows"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn vec3(&mut self) -> Result<Vec3, CheckpointError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn encode_state(state: &OptState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.u64(state.seed);
    w.u64(state.iteration as u64);
    w.u64(state.jacobians.len() as u64);
    w.f64s(state.jacobians.flat());
    w.f64s(state.translation.iter().copied());
    w.f64s(state.first_moment.iter().copied());
    w.f64s(state.second_moment.iter().copied());
    w.f64s([state.best_loss]);
    w.u64(state.best_iteration as u64);
    w.f64s(state.best_jacobians.flat());
    w.f64s(state.best_translation.iter().copied());
    w.u64(state.history.len() as u64);
    for b in &state.history {
        w.f64s([b.cd, b.lap, b.triag, b.render2d, b.embed, b.total]);
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode_state(bytes: &[u8]) -> Result<OptState, CheckpointError> {
    if bytes.len() < 8 + DIGEST_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Corrupt("missing header"));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if found != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch { found, expected: CHECKPOINT_VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Corrupt("digest mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let seed = r.u64()?;
    let iteration = r.count()?;
    let faces = r.count()?;
    let params = faces.checked_mul(9).and_then(|n| n.checked_add(3)).ok_or(CheckpointError::Corrupt("count overflows"))?;
    let jacobians = JacobianField::from_flat(&r.f64s(9 * faces)?);
    let translation = r.vec3()?;
    let first_moment = r.f64s(params)?;
    let second_moment = r.f64s(params)?;
    let best_loss = r.f64()?;
    let best_iteration = r.count()?;
    let best_jacobians = JacobianField::from_flat(&r.f64s(9 * faces)?);
    let best_translation = r.vec3()?;
    let history_len = r.count()?;
    let mut history = Vec::with_capacity(history_len.min(body.len() / 48));
    for _ in 0..history_len {
        let v = r.f64s(6)?;
        history.push(LossBreakdown { cd: v[0], lap: v[1], triag: v[2], render2d: v[3], embed: v[4], total: v[5] });
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt("trailing bytes"));
    }
    if history.len() != iteration {
        return Err(CheckpointError::Corrupt("history length differs from iteration"));
    }
    Ok(OptState {
        seed,
        iteration,
        jacobians,
        translation,
        first_moment,
        second_moment,
        best_loss,
        best_iteration,
        best_jacobians,
        best_translation,
        history,
    })
}

pub fn save_checkpoint(state: &OptState, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_state(state))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<OptState, CheckpointError> {
    decode_state(&std::fs::read(path)?)
}
