//! Seeded experiment runners: sink-trap diversity, prompt-type inversion
//! quality, the four-way reconstruction comparison and an edit benchmark.
//!
//! Every trial draws from its own random stream, so results do not depend on
//! how many trials run or in which order.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::dataset::Anchor;
use crate::editing::{edit, EditRequest};
use crate::error::{Error, Result};
use crate::field::{standard_normal_latent, Condition, ConditionKind, Latent};
use crate::metrics::{
    diversity_ratio, l1_reconstruction, mean_std, norm_trace_stats, DiversityReport, NormTraceStats,
};
use crate::nti::{nti_optimize, NtiConfig};
use crate::rng::{stream, Stream};
use crate::sampler::{invert, sample, GuidanceConfig, Trajectory};

/// Width of the fixed random projection standing in for an output encoder.
pub const VIS_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub guidance: GuidanceConfig,
    /// Inner-loop settings; its guidance scale is overridden by `guidance`.
    pub nti: NtiConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        ExperimentConfig {
            guidance: GuidanceConfig::default(),
            nti: NtiConfig::default(),
            seed,
        }
    }

    fn nti_config(&self) -> NtiConfig {
        NtiConfig {
            guidance: self.guidance.guidance,
            ..self.nti
        }
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Seeded Gaussian `VIS_DIM x d` projection followed by L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct VisProjection {
    rows: Vec<Vec<f64>>,
}

impl VisProjection {
    pub fn new(latent_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Projection, 0);
        let rows = (0..VIS_DIM)
            .map(|_| {
                (0..latent_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        VisProjection { rows }
    }

    pub fn embed(&self, z: &Latent) -> Vec<f64> {
        let raw: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.iter().zip(z.as_slice()).map(|(a, b)| a * b).sum())
            .collect();
        unit(&raw)
    }
}

/// One diversity report per anchor. Each token gets `samples_per_token`
/// generations from seeded noise.
pub fn run_sink_experiment(
    ckpt: &Checkpoint,
    anchors: &[Anchor],
    samples_per_token: usize,
    cfg: &ExperimentConfig,
) -> Result<Vec<DiversityReport>> {
    let field = &ckpt.field;
    let projection = VisProjection::new(field.latent_dim(), cfg.seed);
    anchors
        .iter()
        .map(|anchor| {
            if anchor.tokens.len() < 2 {
                return Err(Error::Metric(format!(
                    "anchor '{}' needs at least 2 tokens, has {}",
                    anchor.name,
                    anchor.tokens.len()
                )));
            }
            let mut vis = Vec::new();
            let mut txt = Vec::new();
            for &token in &anchor.tokens {
                let cond = field.embed_condition(token)?;
                for s in 0..samples_per_token {
                    let index = (u64::from(token) << 24) | s as u64;
                    let z1 = noise_latent(field.latent_dim(), cfg.seed, index);
                    let out = sample(field, &z1, &cond, &cfg.guidance, None)?;
                    vis.push(projection.embed(out.last()));
                    txt.push(unit(&cond.embedding));
                }
            }
            diversity_ratio(&anchor.name, &vis, &txt)
        })
        .collect()
}

pub fn write_sink_csv(path: &Path, reports: &[DiversityReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["anchor", "delta_vis", "delta_txt", "R", "n"])?;
    for r in reports {
        w.write_record([
            r.anchor.clone(),
            r.delta_vis.to_string(),
            r.delta_txt.to_string(),
            r.ratio.map_or_else(String::new, |x| x.to_string()),
            r.n.to_string(),
        ])?;
    }
    flush(w, path)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stream index offset keeping command-line source draws apart from the
/// edit benchmark's per-request streams.
const SOURCE_OFFSET: u64 = 1 << 40;

/// A data latent drawn from `token`'s mode, fixed by `(seed, token)`.
pub fn source_latent(ckpt: &Checkpoint, token: u32, seed: u64) -> Result<Latent> {
    let mut rng = stream(seed, Stream::Source, SOURCE_OFFSET | u64::from(token));
    ckpt.dataset.sample_from_token(token, &mut rng)
}

/// Standard-normal noise latent number `index` for `seed`.
pub fn noise_latent(dim: usize, seed: u64, index: u64) -> Latent {
    standard_normal_latent(dim, &mut stream(seed, Stream::Noise, index))
}

/// A data sample drawn from a known mode plus the tokens used to condition it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDraw {
    pub token: u32,
    pub approximate: u32,
    pub ood: Option<u32>,
    pub x0: Latent,
}

/// The draw for trial `k`: true token, its data sample, an approximate token
/// and an OOD token, in that order from the trial's stream.
pub fn trial_draw(ckpt: &Checkpoint, seed: u64, k: u64) -> Result<TrialDraw> {
    let ds = &ckpt.dataset;
    let mut rng = stream(seed, Stream::Trial, k);
    let tokens = ds.trained_tokens();
    let token = *tokens
        .choose(&mut rng)
        .ok_or_else(|| Error::Config("dataset has no trained tokens".into()))?;
    let x0 = ds.sample_from_token(token, &mut rng)?;
    let approximate = ds.approximate_token(token, &mut rng)?;
    let ood = ds.ood_tokens.choose(&mut rng).copied();
    Ok(TrialDraw {
        token,
        approximate,
        ood,
        x0,
    })
}

/// Per-kind outcome of the prompt-type experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptTypeRow {
    pub kind: ConditionKind,
    pub l1_mean: f64,
    pub l1_std: f64,
    pub fail_rate: f64,
    /// Mean normalized inversion velocity norm over successful trials.
    pub norm_mean: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct PromptTypeTable {
    pub rows: Vec<PromptTypeRow>,
    /// `None` when no trial produced an inversion.
    pub norms: Option<NormTraceStats>,
    /// Per-step mean inversion velocity norm for each kind.
    pub traces: Vec<(ConditionKind, Vec<f64>)>,
}

impl PromptTypeTable {
    pub fn row(&self, kind: ConditionKind) -> Option<&PromptTypeRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }
}

pub const PROMPT_KINDS: [ConditionKind; 4] = [
    ConditionKind::True,
    ConditionKind::Approximate,
    ConditionKind::Empty,
    ConditionKind::Ood,
];

fn condition_for(
    ckpt: &Checkpoint,
    draw: &TrialDraw,
    kind: ConditionKind,
) -> Result<Option<Condition>> {
    let field = &ckpt.field;
    let token = match kind {
        ConditionKind::True => draw.token,
        ConditionKind::Approximate => draw.approximate,
        ConditionKind::Empty => 0,
        ConditionKind::Ood => match draw.ood {
            Some(t) => t,
            None => return Ok(None),
        },
        ConditionKind::Raw => return Ok(None),
    };
    Ok(Some(field.embed_condition(token)?.with_kind(kind)))
}

/// Inverts and resamples each trial's sample under the true, approximate,
/// empty and OOD conditions. Numeric failures count against the fail rate
/// instead of aborting.
pub fn run_prompt_type_experiment(
    ckpt: &Checkpoint,
    trials: usize,
    cfg: &ExperimentConfig,
) -> Result<PromptTypeTable> {
    let field = &ckpt.field;
    let mut l1: Vec<Vec<f64>> = vec![Vec::new(); PROMPT_KINDS.len()];
    let mut failures = vec![0usize; PROMPT_KINDS.len()];
    let mut attempts = vec![0usize; PROMPT_KINDS.len()];
    let mut inversions: Vec<Vec<Trajectory>> = vec![Vec::new(); PROMPT_KINDS.len()];
    for k in 0..trials {
        let draw = trial_draw(ckpt, cfg.seed, k as u64)?;
        for (slot, &kind) in PROMPT_KINDS.iter().enumerate() {
            let Some(cond) = condition_for(ckpt, &draw, kind)? else {
                continue;
            };
            attempts[slot] += 1;
            let run = invert(field, &draw.x0, &cond, &cfg.guidance).and_then(|inv| {
                let rec = sample(field, inv.last(), &cond, &cfg.guidance, None)?;
                Ok((inv, rec))
            });
            match run {
                Ok((inv, rec)) => {
                    l1[slot].push(l1_reconstruction(rec.last(), &draw.x0)?);
                    inversions[slot].push(inv);
                }
                Err(e) if e.is_numeric() => failures[slot] += 1,
                Err(e) => return Err(e),
            }
        }
    }

    let groups: Vec<(ConditionKind, Vec<&Trajectory>)> = PROMPT_KINDS
        .iter()
        .zip(&inversions)
        .filter(|(_, inv)| !inv.is_empty())
        .map(|(&kind, inv)| (kind, inv.iter().collect()))
        .collect();
    let norms = if groups.is_empty() {
        None
    } else {
        Some(norm_trace_stats(&groups)?)
    };
    let traces = groups
        .iter()
        .map(|(kind, trajs)| (*kind, mean_trace(trajs)))
        .collect();
    let rows = PROMPT_KINDS
        .iter()
        .enumerate()
        .filter(|&(slot, _)| attempts[slot] > 0)
        .map(|(slot, &kind)| {
            let (l1_mean, l1_std) = mean_std(&l1[slot]);
            PromptTypeRow {
                kind,
                l1_mean,
                l1_std,
                fail_rate: failures[slot] as f64 / attempts[slot] as f64,
                norm_mean: norms
                    .as_ref()
                    .and_then(|n| n.get(kind))
                    .map_or(f64::NAN, |s| s.mean),
                trials: attempts[slot],
                failures: failures[slot],
            }
        })
        .collect();
    Ok(PromptTypeTable {
        rows,
        norms,
        traces,
    })
}

fn mean_trace(trajectories: &[&Trajectory]) -> Vec<f64> {
    let steps = trajectories[0].steps();
    let mut acc = vec![0.0; steps];
    for t in trajectories {
        for (a, v) in acc.iter_mut().zip(t.velocity_norms()) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / trajectories.len() as f64).collect()
}

pub fn write_prompt_type_csv(path: &Path, table: &PromptTypeTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["kind", "l1_mean", "l1_std", "fail_rate", "norm_mean"])?;
    for r in &table.rows {
        w.write_record([
            r.kind.as_str().to_string(),
            r.l1_mean.to_string(),
            r.l1_std.to_string(),
            r.fail_rate.to_string(),
            r.norm_mean.to_string(),
        ])?;
    }
    flush(w, path)
}

/// Per-step mean inversion velocity norms, one row per (kind, step).
pub fn write_norm_traces_csv(path: &Path, table: &PromptTypeTable, steps: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["kind", "step", "t", "velocity_norm"])?;
    for (kind, trace) in &table.traces {
        for (i, v) in trace.iter().enumerate() {
            w.write_record([
                kind.as_str().to_string(),
                i.to_string(),
                (i as f64 / steps as f64).to_string(),
                v.to_string(),
            ])?;
        }
    }
    flush(w, path)
}

/// The four inversion configurations compared in the reconstruction table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReconConfig {
    EulerApproximate,
    NtiApproximate,
    EulerEmpty,
    NtiEmpty,
}

impl ReconConfig {
    pub const ALL: [ReconConfig; 4] = [
        ReconConfig::EulerApproximate,
        ReconConfig::NtiApproximate,
        ReconConfig::EulerEmpty,
        ReconConfig::NtiEmpty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReconConfig::EulerApproximate => "euler+approximate",
            ReconConfig::NtiApproximate => "nti+approximate",
            ReconConfig::EulerEmpty => "euler+empty",
            ReconConfig::NtiEmpty => "nti+empty",
        }
    }

    fn uses_nti(self) -> bool {
        matches!(self, ReconConfig::NtiApproximate | ReconConfig::NtiEmpty)
    }

    fn uses_empty(self) -> bool {
        matches!(self, ReconConfig::EulerEmpty | ReconConfig::NtiEmpty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconRow {
    pub config: ReconConfig,
    pub l1_mean: f64,
    pub l1_std: f64,
    pub trials: usize,
    pub failures: usize,
    /// Mean per-step NTI loss before and after the inner loop (NTI rows).
    pub nti_initial_loss: Option<f64>,
    pub nti_final_loss: Option<f64>,
}

/// Reconstructs each trial's sample with every [`ReconConfig`]. The
/// conditioning used for both inversion and resampling is either the trial's
/// approximate token or the empty token.
pub fn run_reconstruction_table(
    ckpt: &Checkpoint,
    trials: usize,
    cfg: &ExperimentConfig,
) -> Result<Vec<ReconRow>> {
    let field = &ckpt.field;
    let nti = cfg.nti_config();
    let n = ReconConfig::ALL.len();
    let mut l1: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut failures = vec![0usize; n];
    let mut losses: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
    for k in 0..trials {
        let draw = trial_draw(ckpt, cfg.seed, k as u64)?;
        let approx = field
            .embed_condition(draw.approximate)?
            .with_kind(ConditionKind::Approximate);
        let empty = field.empty_condition();
        for (slot, &config) in ReconConfig::ALL.iter().enumerate() {
            let cond = if config.uses_empty() { &empty } else { &approx };
            let run = invert(field, &draw.x0, cond, &cfg.guidance).and_then(|inv| {
                if config.uses_nti() {
                    let out = nti_optimize(field, &inv, cond, &nti)?;
                    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                    let stats = (
                        mean(&out.schedule.initial_losses),
                        mean(&out.schedule.final_losses),
                    );
                    Ok((out.reconstruction, Some(stats)))
                } else {
                    let rec = sample(field, inv.last(), cond, &cfg.guidance, None)?;
                    Ok((rec.last().clone(), None))
                }
            });
            match run {
                Ok((rec, stats)) => {
                    l1[slot].push(l1_reconstruction(&rec, &draw.x0)?);
                    if let Some((a, b)) = stats {
                        losses[slot].0.push(a);
                        losses[slot].1.push(b);
                    }
                }
                Err(e) if e.is_numeric() => failures[slot] += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ReconConfig::ALL
        .iter()
        .enumerate()
        .map(|(slot, &config)| {
            let (l1_mean, l1_std) = mean_std(&l1[slot]);
            let avg = |v: &[f64]| (!v.is_empty()).then(|| mean_std(v).0);
            ReconRow {
                config,
                l1_mean,
                l1_std,
                trials,
                failures: failures[slot],
                nti_initial_loss: avg(&losses[slot].0),
                nti_final_loss: avg(&losses[slot].1),
            }
        })
        .collect())
}

pub fn write_recon_csv(path: &Path, rows: &[ReconRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["config", "l1_mean", "l1_std"])?;
    for r in rows {
        w.write_record([
            r.config.as_str().to_string(),
            r.l1_mean.to_string(),
            r.l1_std.to_string(),
        ])?;
    }
    flush(w, path)
}

/// One paired edit: the same request run with and without NTI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditTrial {
    pub anchor: String,
    pub source_token: u32,
    pub edit_token: u32,
    /// The NTI edit's output is closest to the edit token's mode.
    pub hit_target: bool,
    pub implausible: bool,
    pub nti_reconstruction_l1: f64,
    pub plain_reconstruction_l1: f64,
    pub structure_distance: f64,
}

/// Retargeting edits inside diverse anchors: the source comes from one mode
/// and the edit token maps to a different mode of the same anchor.
pub fn run_edit_benchmark(
    ckpt: &Checkpoint,
    requests: usize,
    cfg: &ExperimentConfig,
) -> Result<Vec<EditTrial>> {
    let ds = &ckpt.dataset;
    let diverse: Vec<&Anchor> = ds.anchors.iter().filter(|a| !a.sink).collect();
    if diverse.is_empty() {
        return Err(Error::Config(
            "edit benchmark needs a diverse anchor".into(),
        ));
    }
    (0..requests)
        .map(|k| {
            let mut rng = stream(cfg.seed, Stream::Source, k as u64);
            let anchor = diverse[rng.random_range(0..diverse.len())];
            let source_token = *anchor.tokens.choose(&mut rng).expect("validated anchor");
            let source_mode = ds.mode_id(source_token).expect("anchor token");
            let targets: Vec<u32> = anchor
                .tokens
                .iter()
                .copied()
                .filter(|&t| ds.mode_id(t) != Some(source_mode))
                .collect();
            let edit_token = *targets.choose(&mut rng).ok_or_else(|| {
                Error::Config(format!("anchor '{}' has a single mode", anchor.name))
            })?;
            let source = ds.sample_from_token(source_token, &mut rng)?;
            let mut request = EditRequest::new(source, edit_token, true, cfg.seed);
            request.guidance = cfg.guidance;
            request.nti = cfg.nti;
            let with_nti = edit(ckpt, &request)?;
            request.use_nti = false;
            let plain = edit(ckpt, &request)?;
            Ok(EditTrial {
                anchor: anchor.name.clone(),
                source_token,
                edit_token,
                hit_target: Some(with_nti.edited_mode) == with_nti.target_mode,
                implausible: with_nti.implausible,
                nti_reconstruction_l1: with_nti.reconstruction_l1,
                plain_reconstruction_l1: plain.reconstruction_l1,
                structure_distance: with_nti.structure_distance,
            })
        })
        .collect()
}

pub fn write_edit_benchmark_csv(path: &Path, trials: &[EditTrial]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "anchor",
        "source_token",
        "edit_token",
        "hit_target",
        "implausible",
        "nti_recon_l1",
        "plain_recon_l1",
        "structure_distance",
    ])?;
    for t in trials {
        w.write_record([
            t.anchor.clone(),
            t.source_token.to_string(),
            t.edit_token.to_string(),
            t.hit_target.to_string(),
            t.implausible.to_string(),
            t.nti_reconstruction_l1.to_string(),
            t.plain_reconstruction_l1.to_string(),
            t.structure_distance.to_string(),
        ])?;
    }
    flush(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetSpec;
    use crate::field::{FieldSpec, InitOptions, VelocityField};
    use crate::train::TrainConfig;

    fn checkpoint() -> Checkpoint {
        let dataset = DatasetSpec::default_toy(8, 4);
        let mut field = VelocityField::init(
            FieldSpec {
                vocab: dataset.vocab,
                hidden: vec![12],
                ..FieldSpec::default()
            },
            5,
            InitOptions::default(),
        )
        .unwrap();
        field.registry = dataset.registry();
        Checkpoint {
            field,
            dataset,
            train: TrainConfig::default(),
        }
    }

    fn quick(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(seed);
        cfg.guidance.steps = 5;
        cfg.nti.inner_steps = 2;
        cfg
    }

    #[test]
    fn projection_output_is_unit_length() {
        let p = VisProjection::new(8, 3);
        let z = Latent::new((0..8).map(|i| i as f64 - 3.5).collect()).unwrap();
        let e = p.embed(&z);
        assert_eq!(e.len(), VIS_DIM);
        assert!((e.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(e, VisProjection::new(8, 3).embed(&z));
    }

    #[test]
    fn single_token_anchor_is_rejected() {
        let ckpt = checkpoint();
        let mut anchor = ckpt.dataset.anchors[0].clone();
        anchor.tokens.truncate(1);
        anchor.mode_of.truncate(1);
        let err = run_sink_experiment(&ckpt, &[anchor], 1, &quick(0)).unwrap_err();
        assert!(matches!(err, Error::Metric(_)));
    }

    #[test]
    fn sink_reports_are_deterministic() {
        let ckpt = checkpoint();
        let anchors = &ckpt.dataset.anchors[..2];
        let a = run_sink_experiment(&ckpt, anchors, 2, &quick(1)).unwrap();
        let b = run_sink_experiment(&ckpt, anchors, 2, &quick(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].n, 16);
    }

    #[test]
    fn zero_trials_give_empty_tables() {
        let ckpt = checkpoint();
        let table = run_prompt_type_experiment(&ckpt, 0, &quick(0)).unwrap();
        assert!(table.rows.is_empty());
        assert!(table.norms.is_none());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompt_type.csv");
        write_prompt_type_csv(&path, &table).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "kind,l1_mean,l1_std,fail_rate,norm_mean\n"
        );
    }

    #[test]
    fn prompt_type_rows_cover_all_kinds() {
        let ckpt = checkpoint();
        let table = run_prompt_type_experiment(&ckpt, 3, &quick(2)).unwrap();
        let kinds: Vec<_> = table.rows.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, PROMPT_KINDS.to_vec());
        for r in &table.rows {
            assert_eq!(r.trials, 3);
            assert!(r.l1_mean >= 0.0 && r.norm_mean >= 0.0);
        }
    }

    #[test]
    fn recon_table_has_four_rows_and_is_deterministic() {
        let ckpt = checkpoint();
        let a = run_reconstruction_table(&ckpt, 2, &quick(3)).unwrap();
        let b = run_reconstruction_table(&ckpt, 2, &quick(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a[1].nti_final_loss.is_some() && a[0].nti_final_loss.is_none());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recon_table.csv");
        write_recon_csv(&path, &a).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn trial_draws_respect_dataset() {
        let ckpt = checkpoint();
        for k in 0..20 {
            let d = trial_draw(&ckpt, 9, k).unwrap();
            assert!(ckpt.dataset.trained_tokens().contains(&d.token));
            assert!(ckpt.dataset.trained_tokens().contains(&d.approximate));
            assert_ne!(
                ckpt.dataset.mode_id(d.token),
                ckpt.dataset.mode_id(d.approximate)
            );
            assert!(ckpt.dataset.ood_tokens.contains(&d.ood.unwrap()));
            assert_eq!(d, trial_draw(&ckpt, 9, k).unwrap());
        }
    }

    #[test]
    fn edit_benchmark_targets_other_modes() {
        let ckpt = checkpoint();
        let trials = run_edit_benchmark(&ckpt, 3, &quick(4)).unwrap();
        for t in &trials {
            assert_ne!(
                ckpt.dataset.mode_id(t.source_token),
                ckpt.dataset.mode_id(t.edit_token)
            );
            assert_eq!(
                ckpt.dataset.anchor_of(t.source_token),
                ckpt.dataset.anchor_of(t.edit_token)
            );
        }
    }
}
