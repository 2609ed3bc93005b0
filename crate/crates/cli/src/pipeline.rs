//! Stage execution with file boundaries and hash-based reuse.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use garment_core::body::{fit_body_to_garment, load_body, penetration_fraction, pose_body, FitParams};
use garment_core::embed::EmbeddingProvider;
use garment_core::image_buf::ColorImage;
use garment_core::losses::LossBreakdown;
use garment_core::mesh::{load_obj, normalize_to_unit, quality_report, save_obj, MeshQualityReport, Normalization, TriMesh, Vec3};
use garment_core::metrics::evaluate;
use garment_core::optim::{align_guide, load_checkpoint, Deformer, GuideAlignment, RunHooks};
use garment_core::texture::{load_view_set, texture_from_views, write_texture_outputs, TexelMap, ViewSetFile};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, StageFailure};
use crate::manifest::{hash_bytes, hash_file, Manifest, StageName, StageRecord, StageStatus};

pub const BASE_NORMALIZED: &str = "align/base_normalized.obj";
pub const GUIDE_ALIGNED: &str = "align/guide_aligned.obj";
pub const ALIGNMENT: &str = "align/alignment.json";
pub const DEFORMED_NORMALIZED: &str = "deform/deformed_normalized.obj";
pub const DEFORMED: &str = "deform/deformed.obj";
pub const LOSS_LOG: &str = "deform/loss.csv";
pub const DEFORM_SUMMARY: &str = "deform/summary.json";
pub const EVAL_REPORT: &str = "evaluate/report.json";
pub const TEXTURE_STEM: &str = "garment_textured";
pub const TEXTURE_SELECTION: &str = "texture/selection.json";
pub const FIT_PARAMS: &str = "fit/fit_params.json";
pub const BODY_POSED: &str = "fit/body_posed.obj";
pub const FIT_REPORT: &str = "fit/report.json";

/// Maps the base mesh into the unit frame the optimizer works in, and
/// records how the guide was brought into that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    /// Multiplier applied after `translation`.
    pub scale: f64,
    pub translation: Vec3,
    /// Similarity applied to the guide after normalization, when enabled.
    pub guide: Option<GuideAlignment>,
}

impl AlignmentRecord {
    pub fn normalization(&self) -> Normalization {
        Normalization { scale: self.scale, translation: self.translation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformSummary {
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub best_iteration: usize,
    pub best: LossBreakdown,
    pub faces_unchanged: bool,
    pub quality_before: MeshQualityReport,
    pub quality_after: MeshQualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSelection {
    /// View tags in application order.
    pub order: Vec<String>,
    /// Texels claimed by more than one chart; the lowest face index wins.
    pub overlap_texels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub initial: FitParams,
    pub stage_params: Vec<FitParams>,
    /// Final objective value of each stage.
    pub stage_final_loss: Vec<f64>,
    /// Fraction of garment vertices inside the body margin after fitting.
    pub penetration_fraction: f64,
    pub histories: Vec<Vec<f64>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StageFailure> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), StageFailure> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_upstream(out: &Path, rel: &str) -> Result<TriMesh, StageFailure> {
    let path = out.join(rel);
    if !path.is_file() {
        return Err(StageFailure::MissingInput(rel.to_string()));
    }
    Ok(load_obj(path)?)
}

/// One pipeline invocation over a validated configuration.
pub struct Pipeline<'a> {
    config: &'a PipelineConfig,
    out: PathBuf,
    provider: Box<dyn EmbeddingProvider>,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let provider = config.build_provider()?;
        Ok(Self { config, out: config.paths.output_dir.clone(), provider })
    }

    fn applicable(&self, stage: StageName) -> bool {
        match stage {
            StageName::Texture => self.config.paths.views.is_some(),
            StageName::Fit => self.config.paths.body_file.is_some(),
            _ => true,
        }
    }

    fn upstream_hash(&self, inputs: &mut BTreeMap<String, String>, rel: &str) -> Result<(), StageFailure> {
        let hash = hash_file(self.out.join(rel)).map_err(|_| StageFailure::MissingInput(rel.to_string()))?;
        inputs.insert(rel.to_string(), hash);
        Ok(())
    }

    fn external_hash(inputs: &mut BTreeMap<String, String>, label: &str, path: &Path) -> Result<(), StageFailure> {
        inputs.insert(label.to_string(), hash_file(path)?);
        Ok(())
    }

    fn setting_hash(inputs: &mut BTreeMap<String, String>, label: &str, value: &impl Serialize) -> Result<(), StageFailure> {
        inputs.insert(label.to_string(), hash_bytes(&serde_json::to_vec(value)?));
        Ok(())
    }

    /// Content hashes of everything the stage reads.
    pub fn stage_inputs(&self, stage: StageName) -> Result<BTreeMap<String, String>, StageFailure> {
        let c = self.config;
        let mut m = BTreeMap::new();
        match stage {
            StageName::Align => {
                Self::external_hash(&mut m, "base_mesh", &c.paths.base_mesh)?;
                Self::external_hash(&mut m, "guide_mesh", &c.paths.guide_mesh)?;
                Self::setting_hash(&mut m, "alignment", &c.alignment)?;
            }
            StageName::Deform => {
                self.upstream_hash(&mut m, BASE_NORMALIZED)?;
                self.upstream_hash(&mut m, GUIDE_ALIGNED)?;
                self.upstream_hash(&mut m, ALIGNMENT)?;
                Self::setting_hash(&mut m, "optimization", &c.optimization)?;
                Self::setting_hash(&mut m, "provider", &c.provider_label())?;
            }
            StageName::Evaluate => {
                self.upstream_hash(&mut m, DEFORMED)?;
                self.upstream_hash(&mut m, GUIDE_ALIGNED)?;
                self.upstream_hash(&mut m, ALIGNMENT)?;
                Self::external_hash(&mut m, "guidance_image", &c.paths.guidance_image)?;
                Self::setting_hash(&mut m, "evaluation", &c.evaluation)?;
                Self::setting_hash(&mut m, "provider", &c.provider_label())?;
            }
            StageName::Texture => {
                self.upstream_hash(&mut m, DEFORMED)?;
                Self::setting_hash(&mut m, "texture", &(c.texture.size, c.texture.dilation))?;
                if let Some(views) = &c.paths.views {
                    Self::external_hash(&mut m, "views", views)?;
                    let set: ViewSetFile = read_json(views)?;
                    let dir = views.parent().unwrap_or(Path::new("."));
                    for spec in &set.views {
                        Self::external_hash(&mut m, &format!("view:{}", spec.tag), &dir.join(&spec.image))?;
                    }
                }
            }
            StageName::Fit => {
                self.upstream_hash(&mut m, DEFORMED)?;
                Self::setting_hash(&mut m, "fit", &c.fit)?;
                if let Some(body) = &c.paths.body_file {
                    Self::external_hash(&mut m, "body_file", body)?;
                }
            }
        }
        Ok(m)
    }

    /// Runs `target` and its dependencies, or every stage when `None`.
    /// Stages whose inputs and outputs match the manifest are reused unless
    /// an upstream stage ran in this invocation.
    pub fn run(&self, target: Option<StageName>) -> Result<Manifest, PipelineError> {
        std::fs::create_dir_all(&self.out).map_err(|e| PipelineError::Manifest(format!("creating {}: {e}", self.out.display())))?;
        let mut manifest = Manifest::load_or_default(&self.out);
        let stages = target.map_or_else(|| StageName::ALL.to_vec(), StageName::closure);
        let mut ran: Vec<StageName> = Vec::new();
        for stage in stages {
            let start = Instant::now();
            let outcome = self.stage_inputs(stage).and_then(|inputs| {
                let upstream_ran = stage.dependencies().iter().any(|d| ran.contains(d));
                if !upstream_ran && manifest.get(stage).is_some_and(|r| r.reusable_for(&inputs, &self.out)) {
                    let previous = manifest.get(stage).expect("checked above");
                    let status = if previous.status == StageStatus::Skipped { StageStatus::Skipped } else { StageStatus::Reused };
                    return Ok((inputs, previous.output_hashes.clone(), status));
                }
                if !self.applicable(stage) {
                    return Ok((inputs, BTreeMap::new(), StageStatus::Skipped));
                }
                let outputs = self.execute(stage, &inputs)?;
                let mut hashes = BTreeMap::new();
                for rel in outputs {
                    hashes.insert(rel.clone(), hash_file(self.out.join(&rel))?);
                }
                Ok((inputs, hashes, StageStatus::Completed))
            });
            let wall_time_seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok((input_hashes, output_hashes, status)) => {
                    info!("{stage}: {status:?} in {wall_time_seconds:.2}s");
                    if status == StageStatus::Completed {
                        ran.push(stage);
                    }
                    manifest.put(StageRecord { stage, status, input_hashes, output_hashes, wall_time_seconds, error: None });
                    manifest.save(&self.out)?;
                }
                Err(source) => {
                    let later: Vec<StageName> = StageName::ALL.into_iter().filter(|s| *s > stage).collect();
                    manifest.forget(&later);
                    manifest.put(StageRecord {
                        stage,
                        status: StageStatus::Failed,
                        input_hashes: BTreeMap::new(),
                        output_hashes: BTreeMap::new(),
                        wall_time_seconds,
                        error: Some(source.to_string()),
                    });
                    manifest.save(&self.out)?;
                    return Err(PipelineError::Stage { stage, source });
                }
            }
        }
        Ok(manifest)
    }

    /// Runs one stage and returns its output paths relative to the output directory.
    fn execute(&self, stage: StageName, inputs: &BTreeMap<String, String>) -> Result<Vec<String>, StageFailure> {
        std::fs::create_dir_all(self.out.join(stage.as_str()))?;
        match stage {
            StageName::Align => self.align(),
            StageName::Deform => self.deform(inputs),
            StageName::Evaluate => self.evaluate(),
            StageName::Texture => self.texture(),
            StageName::Fit => self.fit(),
        }
    }

    /// Deformation checkpoint location; keyed by the stage inputs, so a
    /// checkpoint is only resumed by the exact problem that wrote it.
    pub fn checkpoint_path(&self, inputs: &BTreeMap<String, String>) -> Result<PathBuf, StageFailure> {
        let key = hash_bytes(&serde_json::to_vec(inputs)?);
        Ok(self.out.join(format!("deform/checkpoint-{}.bin", &key[..16])))
    }

    fn align(&self) -> Result<Vec<String>, StageFailure> {
        let base = load_obj(&self.config.paths.base_mesh)?;
        let guide = load_obj(&self.config.paths.guide_mesh)?;
        let (base_n, norm) = normalize_to_unit(&base)?;
        let guide_n = guide.with_vertices(guide.vertices().iter().map(|p| norm.apply(p)).collect())?;
        let (aligned, guide_alignment) = if self.config.alignment.enabled {
            let (m, a) = align_guide(&base_n, &guide_n, self.config.alignment.search_yaw);
            (m, Some(a))
        } else {
            (guide_n, None)
        };
        save_obj(&base_n, self.out.join(BASE_NORMALIZED))?;
        save_obj(&aligned, self.out.join(GUIDE_ALIGNED))?;
        write_json(&self.out.join(ALIGNMENT), &AlignmentRecord { scale: norm.scale, translation: norm.translation, guide: guide_alignment })?;
        Ok(vec![BASE_NORMALIZED.into(), GUIDE_ALIGNED.into(), ALIGNMENT.into()])
    }

    fn deform(&self, inputs: &BTreeMap<String, String>) -> Result<Vec<String>, StageFailure> {
        let base = load_upstream(&self.out, BASE_NORMALIZED)?;
        let guide = load_upstream(&self.out, GUIDE_ALIGNED)?;
        let alignment: AlignmentRecord = read_json(&self.out.join(ALIGNMENT))?;
        let deformer = Deformer::new(&base, &guide, self.config.optimization.clone(), Some(self.provider.as_ref()))?;
        let checkpoint = self.checkpoint_path(inputs)?;
        let mut state = match load_checkpoint(&checkpoint) {
            Ok(s) => {
                info!("resuming deformation from iteration {}", s.iteration);
                s
            }
            Err(e) => {
                if checkpoint.exists() {
                    warn!("ignoring unreadable checkpoint {}: {e}", checkpoint.display());
                }
                deformer.initial_state()
            }
        };
        let hooks = RunHooks { checkpoint_path: Some(checkpoint.clone()), log: None };
        let stopped_early = match deformer.run_until(&mut state, self.config.optimization.iterations, hooks) {
            Ok(s) => s,
            Err(e) if checkpoint.exists() && matches!(e, garment_core::optim::OptError::StateMismatch(_)) => {
                warn!("checkpoint does not match the problem; starting over");
                state = deformer.initial_state();
                deformer.run_until(&mut state, self.config.optimization.iterations, RunHooks { checkpoint_path: Some(checkpoint.clone()), log: None })?
            }
            Err(e) => return Err(e.into()),
        };
        let output = deformer.finish(state, stopped_early)?;
        let st = &output.state;

        let mut csv = String::from(LossBreakdown::CSV_HEADER);
        csv.push('\n');
        for (i, b) in st.history.iter().enumerate() {
            csv.push_str(&b.csv_row(i));
            csv.push('\n');
        }
        std::fs::write(self.out.join(LOSS_LOG), csv)?;
        save_obj(&output.mesh, self.out.join(DEFORMED_NORMALIZED))?;
        save_obj(&alignment.normalization().invert_mesh(&output.mesh), self.out.join(DEFORMED))?;
        let summary = DeformSummary {
            iterations_run: st.iteration,
            stopped_early,
            best_iteration: st.best_iteration,
            best: st.history.get(st.best_iteration).copied().unwrap_or_default(),
            faces_unchanged: output.mesh.faces() == base.faces(),
            quality_before: quality_report(&base),
            quality_after: quality_report(&output.mesh),
        };
        write_json(&self.out.join(DEFORM_SUMMARY), &summary)?;
        if checkpoint.exists() {
            std::fs::remove_file(&checkpoint)?;
        }
        Ok(vec![DEFORMED_NORMALIZED.into(), DEFORMED.into(), LOSS_LOG.into(), DEFORM_SUMMARY.into()])
    }

    fn evaluate(&self) -> Result<Vec<String>, StageFailure> {
        let deformed = load_upstream(&self.out, DEFORMED)?;
        let alignment: AlignmentRecord = read_json(&self.out.join(ALIGNMENT))?;
        let guide = alignment.normalization().invert_mesh(&load_upstream(&self.out, GUIDE_ALIGNED)?);
        let guidance = ColorImage::load(&self.config.paths.guidance_image)?;
        let report = evaluate(&deformed, &guide, &guidance, self.provider.as_ref(), &self.config.evaluation)?;
        report.save_json(self.out.join(EVAL_REPORT))?;
        Ok(vec![EVAL_REPORT.into()])
    }

    fn texture(&self) -> Result<Vec<String>, StageFailure> {
        let views_path = self.config.paths.views.as_ref().expect("texture runs only with views");
        let mesh = load_upstream(&self.out, DEFORMED)?;
        let views = load_view_set(views_path)?;
        let tex = &self.config.texture;
        let map = TexelMap::cached(&mesh, tex.size, self.out.join(&tex.cache_dir))?;
        if map.overlap_texels > 0 {
            warn!("{} texels are claimed by more than one UV chart", map.overlap_texels);
        }
        let result = texture_from_views(&mesh, &map, &views, tex.dilation)?;
        let written = write_texture_outputs(self.out.join("texture"), TEXTURE_STEM, &mesh, &result.atlas, &result.coverage)?;
        let selection = TextureSelection { order: result.order.iter().map(|&i| views[i].tag.clone()).collect(), overlap_texels: map.overlap_texels };
        write_json(&self.out.join(TEXTURE_SELECTION), &selection)?;
        let rel = |p: &Path| p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().replace('\\', "/");
        Ok(vec![rel(&written.texture), rel(&written.material), rel(&written.mesh), rel(&written.coverage), TEXTURE_SELECTION.into()])
    }

    fn fit(&self) -> Result<Vec<String>, StageFailure> {
        let body = load_body(self.config.paths.body_file.as_ref().expect("fit runs only with a body"))?;
        let garment = load_upstream(&self.out, DEFORMED)?;
        let mut initial = FitParams::identity(&body);
        initial.translation = garment.centroid() - pose_body(&body, &initial).centroid();
        let report = fit_body_to_garment(&body, &garment, &initial, &self.config.fit)?;
        let posed = pose_body(&body, &report.params);
        save_obj(&posed, self.out.join(BODY_POSED))?;
        write_json(&self.out.join(FIT_PARAMS), &report.params)?;
        let summary = FitSummary {
            initial,
            stage_params: report.stage_params.clone(),
            stage_final_loss: report.histories.iter().map(|h| h.last().copied().unwrap_or(f64::NAN)).collect(),
            penetration_fraction: penetration_fraction(&posed, &garment, self.config.fit.margin),
            histories: report.histories,
        };
        write_json(&self.out.join(FIT_REPORT), &summary)?;
        Ok(vec![FIT_PARAMS.into(), BODY_POSED.into(), FIT_REPORT.into()])
    }
}

/// Validates the configuration and runs the requested stages.
pub fn run_pipeline(config: &PipelineConfig, target: Option<StageName>) -> Result<Manifest, PipelineError> {
    Pipeline::new(config)?.run(target)
}
