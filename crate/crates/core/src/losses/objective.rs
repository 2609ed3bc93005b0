use rayon::prelude::*;

use super::image::{embedding_term, render_l1_buffers, GuideView};
use super::{chamfer_to_tree, LossBreakdown, LossError, LossWeights, Regularizers, SurfaceSamples};
use crate::embed::EmbeddingProvider;
use crate::jacobian::{build_system, GradientOperator, JacobianField, PoissonSystem};
use crate::mesh::{TriMesh, Vec3};
use crate::render::{BufferGrads, Rasterizer};
use crate::spatial::KdTree;

/// Stochastic inputs of one objective evaluation.
#[derive(Debug, Clone)]
pub struct LossBatch {
    /// Sample provenance on the deformed surface; points are re-evaluated on the current positions.
    pub def_samples: SurfaceSamples,
    /// Points sampled on the guide surface.
    pub guide_points: KdTree,
    pub views: Vec<GuideView>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub positions: Vec<Vec3>,
    pub grad_jacobians: JacobianField,
    pub grad_translation: Vec3,
}

/// The weighted objective over a Jacobian field plus a global translation.
pub struct Objective {
    operator: GradientOperator,
    system: PoissonSystem,
    faces: Vec<[usize; 3]>,
    regularizers: Regularizers,
    rasterizer: Rasterizer,
    weights: LossWeights,
    softness: f64,
}

struct ViewTerms {
    render2d: f64,
    embed: f64,
    grad: Option<Vec<Vec3>>,
}

impl Objective {
    pub fn new(base: &TriMesh, weights: LossWeights, softness: f64) -> Result<Self, LossError> {
        weights.validate()?;
        let (operator, system) = build_system(base)?;
        Ok(Self {
            operator,
            system,
            faces: base.faces().to_vec(),
            regularizers: Regularizers::new(base),
            rasterizer: Rasterizer::new(base),
            weights,
            softness,
        })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn softness(&self) -> f64 {
        self.softness
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn operator(&self) -> &GradientOperator {
        &self.operator
    }

    pub fn system(&self) -> &PoissonSystem {
        &self.system
    }

    pub fn positions(&self, jacobians: &JacobianField, translation: &Vec3) -> Result<Vec<Vec3>, LossError> {
        let mut p = self.system.solve_positions(&self.operator, jacobians)?;
        p.iter_mut().for_each(|v| *v += translation);
        Ok(p)
    }

    /// Term values and the gradient of the weighted total with respect to vertex positions.
    pub fn evaluate_positions(
        &self,
        positions: &[Vec3],
        batch: &LossBatch,
        provider: Option<&dyn EmbeddingProvider>,
    ) -> Result<(LossBreakdown, Vec<Vec3>), LossError> {
        let w = &self.weights;
        let n = positions.len();
        let mut grad = vec![Vec3::zeros(); n];
        let mut add = |g: &[Vec3], s: f64| {
            if s != 0.0 {
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b * s);
            }
        };

        let points = batch.def_samples.reposition(&self.faces, positions);
        let (cd, cd_points) = chamfer_to_tree(&points, &batch.guide_points)?;
        add(&batch.def_samples.scatter(&self.faces, &cd_points, n), w.cd);

        let (lap, g) = self.regularizers.laplacian(positions)?;
        add(&g, w.lap);
        let (triag, g) = self.regularizers.triangle_quality(positions);
        add(&g, w.triag);

        let k = batch.views.len().max(1) as f64;
        let views: Vec<ViewTerms> = batch
            .views
            .par_iter()
            .enumerate()
            .map(|(i, view)| self.view_terms(positions, view, provider, k).map_err(|e| tag_view(e, i)))
            .collect::<Result<_, _>>()?;
        let mut render2d = 0.0;
        let mut embed = 0.0;
        for v in views {
            render2d += v.render2d / k;
            embed += v.embed / k;
            if let Some(g) = v.grad {
                add(&g, 1.0);
            }
        }

        let breakdown = LossBreakdown::weighted(cd, lap, triag, render2d, embed, w);
        breakdown.check_finite()?;
        Ok((breakdown, grad))
    }

    fn view_terms(&self, positions: &[Vec3], view: &GuideView, provider: Option<&dyn EmbeddingProvider>, k: f64) -> Result<ViewTerms, LossError> {
        let w = &self.weights;
        let (buffers, tape) = self.rasterizer.forward(positions, &view.camera, self.softness);
        let (render2d, mut grads) = render_l1_buffers(&buffers, &view.buffers, w.render2d / k)?;
        let mut needs_backward = w.render2d > 0.0;
        let mut embed = 0.0;
        if let (Some(p), Some(target)) = (provider, &view.embedding) {
            let want = w.embed > 0.0 && p.is_differentiable();
            let (value, image_grad) = embedding_term(p, &buffers.shaded(), target, w.embed / k, want)?;
            embed = value;
            if let Some(ig) = image_grad {
                let eg = BufferGrads::from_shaded(&buffers, &ig);
                grads.silhouette.iter_mut().zip(&eg.silhouette).for_each(|(a, b)| *a += b);
                grads.normals.iter_mut().zip(&eg.normals).for_each(|(a, b)| *a += b);
                needs_backward = true;
            }
        }
        let grad = if needs_backward { Some(self.rasterizer.backward(&view.camera, &tape, &grads)?) } else { None };
        Ok(ViewTerms { render2d, embed, grad })
    }

    /// Full evaluation: solve for positions, evaluate, pull the gradient back
    /// to the Jacobians and the translation.
    pub fn evaluate(
        &self,
        jacobians: &JacobianField,
        translation: &Vec3,
        batch: &LossBatch,
        provider: Option<&dyn EmbeddingProvider>,
    ) -> Result<Evaluation, LossError> {
        let positions = self.positions(jacobians, translation)?;
        let (breakdown, grad) = self.evaluate_positions(&positions, batch, provider)?;
        let grad_translation = grad.iter().sum();
        let grad_jacobians = self.system.adjoint_gradient(&self.operator, &grad)?;
        Ok(Evaluation { breakdown, positions, grad_jacobians, grad_translation })
    }
}

fn tag_view(e: LossError, index: usize) -> LossError {
    match e {
        LossError::Provider(p) => LossError::Provider(p.for_view(index)),
        other => other,
    }
}
