//! Loss terms with vertex-space gradients and the weighted objective.

mod chamfer;
mod image;
mod objective;
mod regularizers;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbedError;
use crate::jacobian::DeformError;
use crate::render::RenderError;

pub use chamfer::{chamfer_one_directional, chamfer_to_tree, sample_positions, sample_surface, SurfaceSamples};
pub use image::{embedding_loss, render_l1, render_l1_buffers, GuideView};
pub use objective::{Evaluation, LossBatch, Objective};
pub use regularizers::{laplacian_loss, triangle_quality_loss, Regularizers};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{0} point set is empty")]
    EmptyPointSet(&'static str),
    #[error("vertices without neighbors: {0:?}")]
    IsolatedVertices(Vec<usize>),
    #[error("loss term {term} is not finite")]
    NonFinite { term: &'static str },
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Provider(#[from] EmbedError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Deform(#[from] DeformError),
}

/// Weights of the five objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cd: f64,
    pub lap: f64,
    pub triag: f64,
    pub render2d: f64,
    pub embed: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cd: 1.0, lap: 0.05, triag: 0.01, render2d: 0.5, embed: 0.1 }
    }
}

impl LossWeights {
    pub const ZERO: Self = Self { cd: 0.0, lap: 0.0, triag: 0.0, render2d: 0.0, embed: 0.0 };

    pub fn as_array(&self) -> [f64; 5] {
        [self.cd, self.lap, self.triag, self.render2d, self.embed]
    }

    pub fn validate(&self) -> Result<(), LossError> {
        const NAMES: [&str; 5] = ["cd", "lap", "triag", "render2d", "embed"];
        for (name, w) in NAMES.iter().zip(self.as_array()) {
            if !(w.is_finite() && w >= 0.0) {
                return Err(LossError::InvalidWeights(format!("{name} = {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted term values and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cd: f64,
    pub lap: f64,
    pub triag: f64,
    pub render2d: f64,
    pub embed: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "iteration,cd,lap,triag,render2d,embed,total";

    pub fn weighted(cd: f64, lap: f64, triag: f64, render2d: f64, embed: f64, w: &LossWeights) -> Self {
        let total = w.cd * cd + w.lap * lap + w.triag * triag + w.render2d * render2d + w.embed * embed;
        Self { cd, lap, triag, render2d, embed, total }
    }

    pub fn csv_row(&self, iteration: usize) -> String {
        format!("{iteration},{:e},{:e},{:e},{:e},{:e},{:e}", self.cd, self.lap, self.triag, self.render2d, self.embed, self.total)
    }

    pub fn check_finite(&self) -> Result<(), LossError> {
        let terms = [("cd", self.cd), ("lap", self.lap), ("triag", self.triag), ("render2d", self.render2d), ("embed", self.embed)];
        for (term, v) in terms {
            if !v.is_finite() {
                return Err(LossError::NonFinite { term });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { lap: -1.0, ..LossWeights::default() }.validate().is_err());
        assert!(LossWeights { embed: f64::NAN, ..LossWeights::default() }.validate().is_err());
    }

    #[test]
    fn csv_row_round_trips() {
        let b = LossBreakdown::weighted(0.1, 0.2, 0.3, 0.4, 0.5, &LossWeights::default());
        let row = b.csv_row(7);
        let fields: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(fields.len(), LossBreakdown::CSV_HEADER.split(',').count());
        assert_eq!(fields[0], 7.0);
        assert_eq!(fields[6], b.total);
    }

    #[test]
    fn non_finite_term_is_named() {
        let b = LossBreakdown { triag: f64::INFINITY, ..Default::default() };
        assert!(matches!(b.check_finite(), Err(LossError::NonFinite { term: "triag" })));
    }
}
