//! Adam optimization of per-face Jacobians toward a guide surface.

mod align;
mod checkpoint;

use std::io::Write;
use std::path::PathBuf;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingProvider;
use crate::jacobian::JacobianField;
use crate::losses::{sample_positions, GuideView, LossBatch, LossBreakdown, LossError, LossWeights, Objective};
use crate::mesh::{EdgeTopology, MeshError, TriMesh, Vec3};
use crate::render::{sample_cameras_with, Rasterizer, RigOptions};
use crate::spatial::KdTree;

pub use align::{align_guide, GuideAlignment};
pub use checkpoint::{decode_state, encode_state, load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum OptError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("base mesh has {0} non-manifold edges")]
    NonManifoldBase(usize),
    #[error("loss diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: usize,
        #[source]
        source: LossError,
    },
    #[error("state does not match this problem: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the last iteration of the cosine schedule.
    pub final_learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_epsilon: f64,
    pub weights: LossWeights,
    pub cameras_per_iter: usize,
    pub surface_samples: usize,
    pub seed: u64,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub early_stop_patience: usize,
    pub resolution: usize,
    pub softness: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-3,
            final_learning_rate: 1e-4,
            adam_betas: (0.9, 0.999),
            adam_epsilon: 1e-8,
            weights: LossWeights::default(),
            cameras_per_iter: 4,
            surface_samples: 5000,
            seed: 0,
            checkpoint_every: 0,
            early_stop_patience: 300,
            resolution: 256,
            softness: 1.0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        let bad = |m: &str| Err(OptError::InvalidConfig(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.final_learning_rate > 0.0 && self.final_learning_rate <= self.learning_rate) {
            return bad("final_learning_rate must be in (0, learning_rate]");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        if self.cameras_per_iter == 0 {
            return bad("cameras_per_iter must be at least 1");
        }
        if self.surface_samples == 0 {
            return bad("surface_samples must be at least 1");
        }
        if self.resolution == 0 {
            return bad("resolution must be at least 1");
        }
        if !(self.softness >= 0.0 && self.softness.is_finite()) {
            return bad("softness must be finite and non-negative");
        }
        self.weights.validate()?;
        Ok(())
    }

    /// Cosine decay from `learning_rate` to `final_learning_rate`.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let t = (iteration as f64 / self.iterations.max(1) as f64).min(1.0);
        self.final_learning_rate + 0.5 * (self.learning_rate - self.final_learning_rate) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    fn rig(&self) -> RigOptions {
        RigOptions::default().with_resolution(self.resolution)
    }
}

/// Everything needed to continue an optimization exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub seed: u64,
    pub iteration: usize,
    pub jacobians: JacobianField,
    pub translation: Vec3,
    /// Adam moments over the Jacobian entries followed by the translation.
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub best_loss: f64,
    pub best_iteration: usize,
    pub best_jacobians: JacobianField,
    pub best_translation: Vec3,
    pub history: Vec<LossBreakdown>,
}

impl OptState {
    /// Identity Jacobians: the base mesh itself.
    pub fn new(face_count: usize, seed: u64) -> Self {
        let params = 9 * face_count + 3;
        Self {
            seed,
            iteration: 0,
            jacobians: JacobianField::identity(face_count),
            translation: Vec3::zeros(),
            first_moment: vec![0.0; params],
            second_moment: vec![0.0; params],
            best_loss: f64::INFINITY,
            best_iteration: 0,
            best_jacobians: JacobianField::identity(face_count),
            best_translation: Vec3::zeros(),
            history: Vec::new(),
        }
    }
}

/// Side outputs of a run.
#[derive(Default)]
pub struct RunHooks<'a> {
    pub checkpoint_path: Option<PathBuf>,
    /// Receives the CSV header on the first iteration and one row per iteration.
    pub log: Option<&'a mut dyn Write>,
}

#[derive(Debug, Clone)]
pub struct DeformOutput {
    pub mesh: TriMesh,
    pub state: OptState,
    pub stopped_early: bool,
}

/// A deformation problem: base connectivity, fixed guide and configuration.
pub struct Deformer<'p> {
    base: TriMesh,
    guide: TriMesh,
    guide_raster: Rasterizer,
    objective: Objective,
    config: OptConfig,
    provider: Option<&'p dyn EmbeddingProvider>,
}

impl<'p> Deformer<'p> {
    pub fn new(base: &TriMesh, guide: &TriMesh, config: OptConfig, provider: Option<&'p dyn EmbeddingProvider>) -> Result<Self, OptError> {
        config.validate()?;
        if guide.face_count() == 0 {
            return Err(MeshError::Empty.into());
        }
        let non_manifold = EdgeTopology::of(base).non_manifold_edges().len();
        if non_manifold > 0 {
            return Err(OptError::NonManifoldBase(non_manifold));
        }
        let objective = Objective::new(base, config.weights, config.softness)?;
        Ok(Self { base: base.clone(), guide: guide.clone(), guide_raster: Rasterizer::new(guide), objective, config, provider })
    }

    pub fn config(&self) -> &OptConfig {
        &self.config
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn initial_state(&self) -> OptState {
        OptState::new(self.base.face_count(), self.config.seed)
    }

    fn check_state(&self, state: &OptState) -> Result<(), OptError> {
        let params = 9 * self.base.face_count() + 3;
        if state.jacobians.len() != self.base.face_count() || state.first_moment.len() != params || state.second_moment.len() != params {
            return Err(OptError::StateMismatch(format!("state has {} faces, base has {}", state.jacobians.len(), self.base.face_count())));
        }
        if state.seed != self.config.seed {
            return Err(OptError::StateMismatch(format!("state seed {} differs from config seed {}", state.seed, self.config.seed)));
        }
        Ok(())
    }

    /// The deformed mesh for a Jacobian field and translation.
    pub fn mesh_for(&self, jacobians: &JacobianField, translation: &Vec3) -> Result<TriMesh, OptError> {
        let positions = self.objective.positions(jacobians, translation)?;
        Ok(self.base.with_vertices(positions)?)
    }

    /// Samples and guide renders for one iteration; the stream depends only on seed and iteration.
    fn batch(&self, iteration: usize, positions: &[Vec3]) -> Result<LossBatch, LossError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(iteration as u64);
        let n = self.config.surface_samples;
        let def_samples = sample_positions(self.objective.faces(), positions, n, &mut rng);
        let guide_samples = sample_positions(self.guide.faces(), self.guide.vertices(), n, &mut rng);
        let w = &self.config.weights;
        let provider = self.provider.filter(|_| w.embed > 0.0);
        let views = if w.render2d > 0.0 || provider.is_some() {
            let cameras = sample_cameras_with(&mut rng, self.config.cameras_per_iter, &self.guide, &self.config.rig());
            cameras
                .into_par_iter()
                .enumerate()
                .map(|(i, cam)| {
                    GuideView::capture(&self.guide_raster, self.guide.vertices(), cam, self.config.softness, provider).map_err(|e| match e {
                        LossError::Provider(p) => LossError::Provider(p.for_view(i)),
                        other => other,
                    })
                })
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        if def_samples.is_empty() {
            return Err(LossError::NonFinite { term: "surface area" });
        }
        Ok(LossBatch { def_samples, guide_points: KdTree::new(&guide_samples.points), views })
    }

    /// One evaluation and Adam update.
    pub fn step(&self, state: &mut OptState) -> Result<LossBreakdown, OptError> {
        let it = state.iteration;
        let diverged = |source: LossError| OptError::Diverged { iteration: it, source };
        let positions = self.objective.positions(&state.jacobians, &state.translation).map_err(diverged)?;
        if positions.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(diverged(LossError::NonFinite { term: "positions" }));
        }
        let batch = match self.batch(it, &positions) {
            Err(e @ LossError::NonFinite { .. }) => return Err(diverged(e)),
            other => other?,
        };
        let (breakdown, grad) = match self.objective.evaluate_positions(&positions, &batch, self.provider) {
            Err(e @ LossError::NonFinite { .. }) => return Err(diverged(e)),
            other => other?,
        };
        let grad_translation: Vec3 = grad.iter().sum();
        let grad_jacobians = self.objective.system().adjoint_gradient(self.objective.operator(), &grad).map_err(|e| diverged(e.into()))?;

        if breakdown.total < state.best_loss {
            state.best_loss = breakdown.total;
            state.best_iteration = it;
            state.best_jacobians = state.jacobians.clone();
            state.best_translation = state.translation;
        }

        let mut g = grad_jacobians.flat();
        g.extend(grad_translation.iter());
        let mut params = state.jacobians.flat();
        params.extend(state.translation.iter());
        let (b1, b2) = self.config.adam_betas;
        let t = (it + 1) as i32;
        let lr = self.config.learning_rate_at(it);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (((p, gi), m), v) in params.iter_mut().zip(&g).zip(&mut state.first_moment).zip(&mut state.second_moment) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.config.adam_epsilon);
        }
        let split = params.len() - 3;
        state.translation = Vec3::new(params[split], params[split + 1], params[split + 2]);
        state.jacobians = JacobianField::from_flat(&params[..split]);
        if !state.jacobians.is_finite() {
            return Err(diverged(LossError::NonFinite { term: "jacobians" }));
        }
        state.iteration += 1;
        state.history.push(breakdown);
        Ok(breakdown)
    }

    /// Runs until the iteration budget or early stopping, starting from `state`.
    pub fn run(&self, mut state: OptState, hooks: RunHooks<'_>) -> Result<DeformOutput, OptError> {
        self.run_until(&mut state, self.config.iterations, hooks).and_then(|stopped_early| self.finish(state, stopped_early))
    }

    /// Advances `state` up to iteration `stop_at`; returns whether early stopping fired.
    pub fn run_until(&self, state: &mut OptState, stop_at: usize, mut hooks: RunHooks<'_>) -> Result<bool, OptError> {
        self.check_state(state)?;
        let stop_at = stop_at.min(self.config.iterations);
        if let Some(log) = hooks.log.as_deref_mut() {
            if state.iteration == 0 {
                writeln!(log, "{}", LossBreakdown::CSV_HEADER)?;
            }
        }
        while state.iteration < stop_at {
            if state.iteration > 0 && state.iteration - state.best_iteration > self.config.early_stop_patience {
                info!("early stop at iteration {} (best {} at {})", state.iteration, state.best_loss, state.best_iteration);
                return Ok(true);
            }
            let it = state.iteration;
            let b = self.step(state)?;
            if let Some(log) = hooks.log.as_deref_mut() {
                writeln!(log, "{}", b.csv_row(it))?;
            }
            if it % 100 == 0 {
                debug!("iteration {it}: total {:.6e} cd {:.3e}", b.total, b.cd);
            }
            let every = self.config.checkpoint_every;
            if let (Some(path), true) = (&hooks.checkpoint_path, every > 0 && state.iteration % every == 0) {
                save_checkpoint(state, path)?;
            }
        }
        Ok(false)
    }

    /// The best iterate as a mesh with the base connectivity.
    pub fn finish(&self, state: OptState, stopped_early: bool) -> Result<DeformOutput, OptError> {
        let mesh = self.mesh_for(&state.best_jacobians, &state.best_translation)?;
        Ok(DeformOutput { mesh, state, stopped_early })
    }
}

impl std::fmt::Debug for RunHooks<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunHooks").field("checkpoint_path", &self.checkpoint_path).field("log", &self.log.is_some()).finish()
    }
}

/// Deforms `base` toward `guide` from the identity field.
pub fn deform(base: &TriMesh, guide: &TriMesh, config: &OptConfig, provider: Option<&dyn EmbeddingProvider>) -> Result<DeformOutput, OptError> {
    let deformer = Deformer::new(base, guide, config.clone(), provider)?;
    deformer.run(deformer.initial_state(), RunHooks::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;

    #[test]
    fn schedule_runs_from_initial_to_final_rate() {
        let c = OptConfig::default();
        assert_eq!(c.learning_rate_at(0), 1e-3);
        assert!((c.learning_rate_at(c.iterations) - 1e-4).abs() < 1e-18);
        assert!((c.learning_rate_at(c.iterations / 2) - 5.5e-4).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            OptConfig { iterations: 0, ..Default::default() },
            OptConfig { learning_rate: 0.0, ..Default::default() },
            OptConfig { cameras_per_iter: 0, ..Default::default() },
            OptConfig { adam_betas: (1.0, 0.9), ..Default::default() },
            OptConfig { weights: LossWeights { cd: -1.0, ..Default::default() }, ..Default::default() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(OptConfig::default().validate().is_ok());
    }

    #[test]
    fn config_reads_partial_json() {
        let c: OptConfig = serde_json::from_str(r#"{"iterations": 10, "weights": {"embed": 0.0}}"#).unwrap();
        assert_eq!(c.iterations, 10);
        assert_eq!(c.weights.embed, 0.0);
        assert_eq!(c.weights.cd, 1.0);
        assert_eq!(c.cameras_per_iter, 4);
    }

    #[test]
    fn non_manifold_base_is_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z(), -Vec3::z()];
        let m = TriMesh::new(v, vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]]).unwrap();
        let guide = primitives::tetrahedron();
        assert!(matches!(Deformer::new(&m, &guide, OptConfig::default(), None), Err(OptError::NonManifoldBase(1))));
    }

    #[test]
    fn foreign_state_is_rejected() {
        let base = primitives::grid(3, 3, 1.0, 1.0);
        let d = Deformer::new(&base, &base, OptConfig { iterations: 2, ..Default::default() }, None).unwrap();
        let mut other = OptState::new(5, 0);
        assert!(matches!(d.run_until(&mut other, 1, RunHooks::default()), Err(OptError::StateMismatch(_))));
        let mut reseeded = OptState::new(base.face_count(), 9);
        assert!(matches!(d.run_until(&mut reseeded, 1, RunHooks::default()), Err(OptError::StateMismatch(_))));
    }
}
