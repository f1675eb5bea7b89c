//! Inversion-based editing: invert with the empty condition, optionally
//! optimize a null schedule, then resample the recovered noise latent under
//! the edit condition.

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::dataset::ModeId;
use crate::error::{Error, Result};
use crate::field::{Latent, EMPTY_TOKEN};
use crate::metrics::l1_reconstruction;
use crate::nti::{nti_optimize, NtiConfig, NullSchedule};
use crate::sampler::{invert, sample, GuidanceConfig, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub source: Latent,
    pub edit_token: u32,
    pub use_nti: bool,
    pub guidance: GuidanceConfig,
    /// Inner-loop settings; its guidance scale is overridden by `guidance`.
    pub nti: NtiConfig,
    /// Seed the source latent was drawn with; echoed in reports.
    pub seed: u64,
}

impl EditRequest {
    pub fn new(source: Latent, edit_token: u32, use_nti: bool, seed: u64) -> Self {
        EditRequest {
            source,
            edit_token,
            use_nti,
            guidance: GuidanceConfig::default(),
            nti: NtiConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditResult {
    pub edited: Latent,
    pub reconstruction: Latent,
    pub inversion: Trajectory,
    pub edit_trajectory: Trajectory,
    pub reconstruction_trajectory: Trajectory,
    pub schedule: Option<NullSchedule>,
    /// L1 between the empty-condition resample and the source.
    pub reconstruction_l1: f64,
    /// L1 between the edit output and the source.
    pub edit_l1: f64,
    pub source_mode: ModeId,
    pub edited_mode: ModeId,
    /// Mode the edit token was trained on, if any.
    pub target_mode: Option<ModeId>,
    /// Distance between edit output and source after removing the component
    /// along the source-to-target mode offset.
    pub structure_distance: f64,
    /// The edit output landed on neither the source's nor the target's mode.
    pub implausible: bool,
    /// The edit token is the empty token, so the edit is a reconstruction.
    pub degenerate: bool,
}

/// Runs the full edit pipeline against a trained checkpoint.
pub fn edit(ckpt: &Checkpoint, request: &EditRequest) -> Result<EditResult> {
    let field = &ckpt.field;
    let dataset = &ckpt.dataset;
    if request.source.dim() != field.latent_dim() {
        return Err(Error::shape(
            "source latent",
            field.latent_dim(),
            request.source.dim(),
        ));
    }
    let cfg = request.guidance;
    let empty = field.empty_condition();
    let edit_cond = field.embed_condition(request.edit_token)?;

    let inversion =
        invert(field, &request.source, &empty, &cfg).map_err(|e| e.in_stage("inversion"))?;
    let schedule = if request.use_nti {
        let nti = NtiConfig {
            guidance: cfg.guidance,
            ..request.nti
        };
        Some(
            nti_optimize(field, &inversion, &empty, &nti)
                .map_err(|e| e.in_stage("null optimization"))?
                .schedule,
        )
    } else {
        None
    };
    let reconstruction_trajectory =
        sample(field, inversion.last(), &empty, &cfg, schedule.as_ref())
            .map_err(|e| e.in_stage("reconstruction"))?;
    let edit_trajectory = sample(field, inversion.last(), &edit_cond, &cfg, schedule.as_ref())
        .map_err(|e| e.in_stage("edit sampling"))?;

    let edited = edit_trajectory.last().clone();
    let reconstruction = reconstruction_trajectory.last().clone();
    let source_mode = dataset.nearest_mode(&request.source);
    let edited_mode = dataset.nearest_mode(&edited);
    let target_mode = dataset.mode_id(request.edit_token);
    let offset = target_mode.map(|t| {
        let (a, b) = (dataset.mode(source_mode), dataset.mode(t));
        b.mean
            .iter()
            .zip(&a.mean)
            .map(|(x, y)| x - y)
            .collect::<Vec<_>>()
    });
    let structure_distance =
        orthogonal_distance(&edited, &request.source, offset.as_deref().unwrap_or(&[]));
    let implausible = edited_mode != source_mode && Some(edited_mode) != target_mode;

    Ok(EditResult {
        reconstruction_l1: l1_reconstruction(&reconstruction, &request.source)?,
        edit_l1: l1_reconstruction(&edited, &request.source)?,
        edited,
        reconstruction,
        inversion,
        edit_trajectory,
        reconstruction_trajectory,
        schedule,
        source_mode,
        edited_mode,
        target_mode,
        structure_distance,
        implausible,
        degenerate: request.edit_token == EMPTY_TOKEN,
    })
}

/// L2 norm of `a - b` with its component along `direction` removed. An empty
/// or zero direction leaves the difference untouched.
pub fn orthogonal_distance(a: &Latent, b: &Latent, direction: &[f64]) -> f64 {
    let mut diff: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x - y)
        .collect();
    let nn: f64 = direction.iter().map(|x| x * x).sum();
    if nn > 0.0 {
        let proj = diff.iter().zip(direction).map(|(x, y)| x * y).sum::<f64>() / nn;
        diff.iter_mut()
            .zip(direction)
            .for_each(|(x, y)| *x -= proj * y);
    }
    diff.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// JSON-serializable summary of an edit.
#[derive(Debug, Clone, Serialize)]
pub struct EditReport {
    pub request: RequestEcho,
    pub reconstruction_l1: f64,
    pub edit_l1: f64,
    pub source_mode: ModeId,
    pub edited_mode: ModeId,
    pub target_mode: Option<ModeId>,
    pub edit_hit_target: bool,
    pub structure_distance: f64,
    pub flags: EditFlags,
    pub edited: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RequestEcho {
    pub source: Vec<f64>,
    pub edit_token: u32,
    pub use_nti: bool,
    pub guidance: f64,
    pub steps: usize,
    pub nti_lr: f64,
    pub nti_inner_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EditFlags {
    pub implausible: bool,
    pub degenerate: bool,
}

impl EditResult {
    pub fn report(&self, request: &EditRequest) -> EditReport {
        EditReport {
            request: RequestEcho {
                source: request.source.as_slice().to_vec(),
                edit_token: request.edit_token,
                use_nti: request.use_nti,
                guidance: request.guidance.guidance,
                steps: request.guidance.steps,
                nti_lr: request.nti.lr,
                nti_inner_steps: request.nti.inner_steps,
                seed: request.seed,
            },
            reconstruction_l1: self.reconstruction_l1,
            edit_l1: self.edit_l1,
            source_mode: self.source_mode,
            edited_mode: self.edited_mode,
            target_mode: self.target_mode,
            edit_hit_target: Some(self.edited_mode) == self.target_mode,
            structure_distance: self.structure_distance,
            flags: EditFlags {
                implausible: self.implausible,
                degenerate: self.degenerate,
            },
            edited: self.edited.as_slice().to_vec(),
            reconstruction: self.reconstruction.as_slice().to_vec(),
        }
    }
}
