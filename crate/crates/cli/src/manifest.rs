//! Per-stage provenance: content hashes of inputs and outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Align,
    Deform,
    Evaluate,
    Texture,
    Fit,
}

impl StageName {
    /// Execution order.
    pub const ALL: [StageName; 5] = [StageName::Align, StageName::Deform, StageName::Evaluate, StageName::Texture, StageName::Fit];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Align => "align",
            StageName::Deform => "deform",
            StageName::Evaluate => "evaluate",
            StageName::Texture => "texture",
            StageName::Fit => "fit",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn dependencies(self) -> &'static [StageName] {
        match self {
            StageName::Align => &[],
            StageName::Deform => &[StageName::Align],
            StageName::Evaluate => &[StageName::Align, StageName::Deform],
            StageName::Texture | StageName::Fit => &[StageName::Deform],
        }
    }

    /// `self` plus everything it transitively depends on, in execution order.
    pub fn closure(self) -> Vec<StageName> {
        let mut needed = vec![self];
        let mut i = 0;
        while i < needed.len() {
            for d in needed[i].dependencies() {
                if !needed.contains(d) {
                    needed.push(*d);
                }
            }
            i += 1;
        }
        StageName::ALL.into_iter().filter(|s| needed.contains(s)).collect()
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    /// Ran in this invocation.
    Completed,
    /// Inputs and outputs matched the previous record; nothing recomputed.
    Reused,
    /// Not applicable to this configuration (no views, no body).
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageName,
    pub status: StageStatus,
    /// Input label to SHA-256 of its content.
    pub input_hashes: BTreeMap<String, String>,
    /// Output path relative to the output directory to SHA-256 of its content.
    pub output_hashes: BTreeMap<String, String>,
    pub wall_time_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageRecord {
    /// Whether this record can stand in for a run with `inputs`: same input
    /// hashes and every output still present with its recorded hash.
    pub fn reusable_for(&self, inputs: &BTreeMap<String, String>, output_dir: &Path) -> bool {
        matches!(self.status, StageStatus::Completed | StageStatus::Reused | StageStatus::Skipped)
            && &self.input_hashes == inputs
            && self.output_hashes.iter().all(|(rel, hash)| hash_file(output_dir.join(rel)).is_ok_and(|h| &h == hash))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub stages: Vec<StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self { format_version: MANIFEST_VERSION, stages: Vec::new() }
    }
}

impl Manifest {
    /// The manifest in `output_dir`, or an empty one when absent or unreadable
    /// (an unreadable manifest only costs recomputation).
    pub fn load_or_default(output_dir: &Path) -> Self {
        std::fs::read_to_string(output_dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
            .filter(|m| m.format_version == MANIFEST_VERSION)
            .unwrap_or_default()
    }

    pub fn save(&self, output_dir: &Path) -> Result<(), PipelineError> {
        let fail = |e: &dyn fmt::Display| PipelineError::Manifest(e.to_string());
        std::fs::create_dir_all(output_dir).map_err(|e| fail(&e))?;
        let tmp = output_dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self).map_err(|e| fail(&e))?).map_err(|e| fail(&e))?;
        std::fs::rename(&tmp, output_dir.join(MANIFEST_FILE)).map_err(|e| fail(&e))
    }

    pub fn get(&self, stage: StageName) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Replaces the record for its stage, keeping execution order.
    pub fn put(&mut self, record: StageRecord) {
        self.stages.retain(|r| r.stage != record.stage);
        self.stages.push(record);
        self.stages.sort_by_key(|r| r.stage);
    }

    /// Drops the records of `stages`.
    pub fn forget(&mut self, stages: &[StageName]) {
        self.stages.retain(|r| !stages.contains(&r.stage));
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: impl AsRef<Path>) -> std::io::Result<String> {
    Ok(hash_bytes(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closure_lists_dependencies_in_order() {
        assert_eq!(StageName::Align.closure(), vec![StageName::Align]);
        assert_eq!(StageName::Fit.closure(), vec![StageName::Align, StageName::Deform, StageName::Fit]);
        assert_eq!(StageName::Evaluate.closure(), vec![StageName::Align, StageName::Deform, StageName::Evaluate]);
    }

    #[test]
    fn reuse_needs_matching_inputs_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"alpha").unwrap();
        let inputs = BTreeMap::from([("x".to_string(), hash_bytes(b"in"))]);
        let record = StageRecord {
            stage: StageName::Align,
            status: StageStatus::Completed,
            input_hashes: inputs.clone(),
            output_hashes: BTreeMap::from([("a.txt".to_string(), hash_bytes(b"alpha"))]),
            wall_time_seconds: 0.1,
            error: None,
        };
        assert!(record.reusable_for(&inputs, dir.path()));
        let other = BTreeMap::from([("x".to_string(), hash_bytes(b"changed"))]);
        assert!(!record.reusable_for(&other, dir.path()));
        std::fs::write(dir.path().join("a.txt"), b"tampered").unwrap();
        assert!(!record.reusable_for(&inputs, dir.path()));
        std::fs::remove_file(dir.path().join("a.txt")).unwrap();
        assert!(!record.reusable_for(&inputs, dir.path()));
        let failed = StageRecord { status: StageStatus::Failed, output_hashes: BTreeMap::new(), ..record };
        assert!(!failed.reusable_for(&inputs, dir.path()));
    }

    #[test]
    fn manifest_round_trips_and_keeps_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::default();
        for stage in [StageName::Fit, StageName::Align] {
            m.put(StageRecord { stage, status: StageStatus::Completed, input_hashes: BTreeMap::new(), output_hashes: BTreeMap::new(), wall_time_seconds: 0.0, error: None });
        }
        assert_eq!(m.stages[0].stage, StageName::Align);
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load_or_default(dir.path()), m);
        std::fs::write(dir.path().join(MANIFEST_FILE), "not json").unwrap();
        assert_eq!(Manifest::load_or_default(dir.path()), Manifest::default());
    }
}
