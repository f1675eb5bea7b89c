mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use flowinv::editing::{edit, EditRequest};
use flowinv::experiments::{
    noise_latent, run_edit_benchmark, run_prompt_type_experiment, run_reconstruction_table,
    run_sink_experiment, source_latent, write_edit_benchmark_csv, write_norm_traces_csv,
    write_prompt_type_csv, write_recon_csv, write_sink_csv, ExperimentConfig,
};
use flowinv::metrics::l1_reconstruction;
use flowinv::nti::nti_optimize;
use flowinv::sampler::{invert, sample, write_latent_dump, write_trajectory_csv};
use flowinv::train::{train_with_progress, TrainConfig};
use flowinv::{Checkpoint, DatasetSpec, GuidanceConfig, NtiConfig, Trajectory};

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "flowinv",
    version,
    about = "Inversion, null-embedding optimization and editing for toy rectified-flow models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a velocity field on the default synthetic dataset.
    Train(TrainArgs),
    /// Sample data latents for a token from seeded noise.
    Generate(GenerateArgs),
    /// Invert a data latent drawn from a token's mode.
    Invert(InvertArgs),
    /// Invert and resample a data latent, optionally with null optimization.
    Reconstruct(ReconstructArgs),
    /// Retarget a data latent to another token.
    Edit(EditArgs),
    /// Run one of the diagnostic experiments.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
    /// Print a checkpoint summary as JSON.
    Inspect {
        /// Checkpoint to read.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Output-vs-prompt diversity per anchor (writes sink_experiment.csv).
    Sink(SinkArgs),
    /// Inversion quality per prompt kind (writes prompt_type.csv, norm_traces.csv).
    PromptType(TrialArgs),
    /// Four-way reconstruction comparison (writes recon_table.csv).
    ReconTable(TrialArgs),
    /// Paired retargeting edits with and without null optimization (writes edit_benchmark.csv).
    EditBench(TrialArgs),
}

#[derive(Args)]
struct Common {
    /// Root random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if absent [default: runs/default].
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file supplying defaults for any flag.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Model {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Guidance scale [default: 5].
    #[arg(long, allow_negative_numbers = true)]
    guidance: Option<f64>,
    /// Euler steps [default: 50].
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct NtiArgs {
    /// Adam learning rate for null optimization [default: 0.0001].
    #[arg(long)]
    nti_lr: Option<f64>,
    /// Inner Adam iterations per sampling step [default: 10].
    #[arg(long)]
    inner_steps: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training iterations [default: 20000].
    #[arg(long)]
    iterations: Option<usize>,
    /// Minibatch size [default: 128].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak Adam learning rate [default: 0.002].
    #[arg(long)]
    lr: Option<f64>,
    /// Latent dimension [default: 8].
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Seed for the dataset layout [default: same as --seed].
    #[arg(long)]
    dataset_seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: Model,
    /// Conditioning token.
    #[arg(long)]
    token: u32,
    /// Number of samples [default: 1].
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct InvertArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: Model,
    /// Token whose mode supplies the data latent.
    #[arg(long)]
    source_token: u32,
    /// Conditioning token used for inversion (0 is empty).
    #[arg(long, default_value_t = 0)]
    token: u32,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    inner: InvertArgs,
    #[command(flatten)]
    nti: NtiArgs,
    /// Replace plain resampling with null optimization.
    #[arg(long = "nti")]
    nti_enabled: bool,
}

#[derive(Args)]
struct EditArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: Model,
    #[command(flatten)]
    nti_args: NtiArgs,
    /// Token whose mode supplies the source latent.
    #[arg(long)]
    source_token: u32,
    /// Edit token (must not be 0).
    #[arg(long)]
    edit_token: u32,
    /// Optimize the null schedule before editing (default).
    #[arg(long, overrides_with = "no_nti")]
    nti: bool,
    /// Edit with the default null embedding.
    #[arg(long)]
    no_nti: bool,
}

#[derive(Args)]
struct TrialArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: Model,
    #[command(flatten)]
    nti: NtiArgs,
    /// Number of trials [default: 64].
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct SinkArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: Model,
    /// Generations per token [default: 8].
    #[arg(long)]
    samples_per_token: Option<usize>,
}

enum CliError {
    Usage(String),
    Runtime(flowinv::Error),
}

impl From<flowinv::Error> for CliError {
    fn from(e: flowinv::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: kind=usage msg={}", one_line(&msg));
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(2)
        }
    }
}

/// Flag values layered over the optional config file.
struct Resolved {
    file: FileConfig,
}

impl Resolved {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let file = match path {
            Some(p) => FileConfig::load(p).map_err(CliError::Usage)?,
            None => FileConfig::default(),
        };
        Ok(Resolved { file })
    }

    fn seed(&self, flag: Option<u64>) -> CliResult<u64> {
        flag.or(self.file.seed)
            .ok_or_else(|| CliError::Usage("--seed is required (flag or config file)".into()))
    }

    fn out(&self, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        let dir = flag
            .or_else(|| self.file.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs/default"));
        std::fs::create_dir_all(&dir).map_err(|e| flowinv::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        Ok(dir)
    }

    fn checkpoint(&self, flag: Option<PathBuf>) -> CliResult<Checkpoint> {
        let path = flag
            .or_else(|| self.file.ckpt.clone())
            .ok_or_else(|| CliError::Usage("--ckpt is required (flag or config file)".into()))?;
        Ok(Checkpoint::load(&path)?)
    }

    fn guidance(&self, m: &Model) -> GuidanceConfig {
        let d = GuidanceConfig::default();
        GuidanceConfig {
            guidance: m.guidance.or(self.file.guidance).unwrap_or(d.guidance),
            steps: m.steps.or(self.file.steps).unwrap_or(d.steps),
        }
    }

    fn nti(&self, a: &NtiArgs, guidance: &GuidanceConfig) -> NtiConfig {
        let d = NtiConfig::default();
        NtiConfig {
            inner_steps: a
                .inner_steps
                .or(self.file.inner_steps)
                .unwrap_or(d.inner_steps),
            lr: a.nti_lr.or(self.file.nti_lr).unwrap_or(d.lr),
            guidance: guidance.guidance,
        }
    }

    fn trials(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.trials).unwrap_or(64)
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Invert(a) => cmd_invert(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Experiment { kind } => cmd_experiment(kind),
        Command::Inspect { ckpt, config } => cmd_inspect(ckpt, config),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(flowinv::Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| flowinv::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_trajectories(out: &Path, runs: &[(&str, &Trajectory)]) -> CliResult {
    write_trajectory_csv(&out.join("trajectories.csv"), runs)?;
    write_latent_dump(&out.join("latents.json"), runs)?;
    Ok(())
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let r = Resolved::load(a.common.config.as_deref())?;
    let f = &r.file;
    let seed = r.seed(a.common.seed)?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
        iterations: a.iterations.or(f.iterations).unwrap_or(d.iterations),
        lr: a.lr.or(f.lr).unwrap_or(d.lr),
        seed,
        latent_dim: a.latent_dim.or(f.latent_dim).unwrap_or(d.latent_dim),
        cond_dim: f.cond_dim.unwrap_or(d.cond_dim),
        hidden: f.hidden.clone().unwrap_or(d.hidden),
    };
    let mut spec = DatasetSpec::default_toy(
        config.latent_dim,
        a.dataset_seed.or(f.dataset_seed).unwrap_or(seed),
    );
    if let Some(p) = f.p_uncond {
        spec.p_uncond = p;
    }
    let out = r.out(a.common.out)?;
    let every = (config.iterations / 10).max(1);
    let outcome = train_with_progress(&spec, &config, |i, loss| {
        if (i + 1) % every == 0 {
            eprintln!("iteration {} loss {loss:.6}", i + 1);
        }
    })?;
    let model = out.join("model.finv");
    outcome.checkpoint.save(&model)?;
    report(&model);
    let loss = out.join("loss.csv");
    outcome.write_loss_csv(&loss)?;
    report(&loss);
    Ok(())
}

#[derive(Serialize)]
struct GeneratedSample<'a> {
    index: usize,
    token: u32,
    noise: &'a [f64],
    sample: &'a [f64],
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let r = Resolved::load(a.common.config.as_deref())?;
    let seed = r.seed(a.common.seed)?;
    let ckpt = r.checkpoint(a.model.ckpt.clone())?;
    let cfg = r.guidance(&a.model);
    let cond = ckpt.field.embed_condition(a.token)?;
    let n = a.samples.unwrap_or(1);
    let trajectories = (0..n)
        .map(|i| {
            let z1 = noise_latent(ckpt.field.latent_dim(), seed, i as u64);
            sample(&ckpt.field, &z1, &cond, &cfg, None)
        })
        .collect::<flowinv::Result<Vec<_>>>()?;
    let out = r.out(a.common.out)?;
    let ids: Vec<String> = (0..n).map(|i| format!("sample-{i}")).collect();
    let runs: Vec<(&str, &Trajectory)> =
        ids.iter().map(String::as_str).zip(&trajectories).collect();
    write_trajectories(&out, &runs)?;
    let records: Vec<GeneratedSample<'_>> = trajectories
        .iter()
        .enumerate()
        .map(|(index, t)| GeneratedSample {
            index,
            token: a.token,
            noise: t.first().as_slice(),
            sample: t.last().as_slice(),
        })
        .collect();
    let path = out.join("samples.json");
    write_json(&path, &records)?;
    report(&path);
    Ok(())
}

#[derive(Serialize)]
struct InversionRecord<'a> {
    source_token: u32,
    condition_token: u32,
    guidance: f64,
    steps: usize,
    source: &'a [f64],
    noise: &'a [f64],
}

fn cmd_invert(a: InvertArgs) -> CliResult {
    let r = Resolved::load(a.common.config.as_deref())?;
    let seed = r.seed(a.common.seed)?;
    let ckpt = r.checkpoint(a.model.ckpt.clone())?;
    let cfg = r.guidance(&a.model);
    let source = source_latent(&ckpt, a.source_token, seed)?;
    let cond = ckpt.field.embed_condition(a.token)?;
    let inv = invert(&ckpt.field, &source, &cond, &cfg)?;
    let out = r.out(a.common.out)?;
    write_trajectories(&out, &[("inversion", &inv)])?;
    let path = out.join("inversion.json");
    write_json(
        &path,
        &InversionRecord {
            source_token: a.source_token,
            condition_token: a.token,
            guidance: cfg.guidance,
            steps: cfg.steps,
            source: source.as_slice(),
            noise: inv.last().as_slice(),
        },
    )?;
    report(&path);
    Ok(())
}

#[derive(Serialize)]
struct ReconstructionRecord<'a> {
    source_token: u32,
    condition_token: u32,
    use_nti: bool,
    l1: f64,
    source: &'a [f64],
    reconstruction: &'a [f64],
}

fn cmd_reconstruct(a: ReconstructArgs) -> CliResult {
    let inner = a.inner;
    let r = Resolved::load(inner.common.config.as_deref())?;
    let seed = r.seed(inner.common.seed)?;
    let ckpt = r.checkpoint(inner.model.ckpt.clone())?;
    let cfg = r.guidance(&inner.model);
    let nti = r.nti(&a.nti, &cfg);
    let field = &ckpt.field;
    let source = source_latent(&ckpt, inner.source_token, seed)?;
    let cond = field.embed_condition(inner.token)?;
    let inv = invert(field, &source, &cond, &cfg)?;
    let out = r.out(inner.common.out)?;
    let rec = if a.nti_enabled {
        let result = nti_optimize(field, &inv, &cond, &nti)?;
        let path = out.join("null_schedule.finv");
        result.schedule.save(&path)?;
        report(&path);
        result.trajectory
    } else {
        sample(field, inv.last(), &cond, &cfg, None)?
    };
    write_trajectories(&out, &[("inversion", &inv), ("reconstruction", &rec)])?;
    let path = out.join("reconstruction.json");
    write_json(
        &path,
        &ReconstructionRecord {
            source_token: inner.source_token,
            condition_token: inner.token,
            use_nti: a.nti_enabled,
            l1: l1_reconstruction(rec.last(), &source)?,
            source: source.as_slice(),
            reconstruction: rec.last().as_slice(),
        },
    )?;
    report(&path);
    Ok(())
}

fn cmd_edit(a: EditArgs) -> CliResult {
    if a.edit_token == 0 {
        return Err(CliError::Usage(
            "--edit-token 0 is the empty token; use `reconstruct` instead".into(),
        ));
    }
    let r = Resolved::load(a.common.config.as_deref())?;
    let seed = r.seed(a.common.seed)?;
    let ckpt = r.checkpoint(a.model.ckpt.clone())?;
    let cfg = r.guidance(&a.model);
    let source = source_latent(&ckpt, a.source_token, seed)?;
    let mut request = EditRequest::new(source, a.edit_token, !a.no_nti, seed);
    request.guidance = cfg;
    request.nti = r.nti(&a.nti_args, &cfg);
    let result = edit(&ckpt, &request)?;
    let out = r.out(a.common.out)?;
    if let Some(schedule) = &result.schedule {
        let path = out.join("null_schedule.finv");
        schedule.save(&path)?;
        report(&path);
    }
    write_trajectories(
        &out,
        &[
            ("inversion", &result.inversion),
            ("reconstruction", &result.reconstruction_trajectory),
            ("edit", &result.edit_trajectory),
        ],
    )?;
    let path = out.join("edit.json");
    write_json(&path, &result.report(&request))?;
    report(&path);
    Ok(())
}

fn experiment_config(
    r: &Resolved,
    common: &Common,
    model: &Model,
    nti: Option<&NtiArgs>,
) -> CliResult<ExperimentConfig> {
    let guidance = r.guidance(model);
    let nti = match nti {
        Some(n) => r.nti(n, &guidance),
        None => NtiConfig {
            guidance: guidance.guidance,
            ..NtiConfig::default()
        },
    };
    Ok(ExperimentConfig {
        guidance,
        nti,
        seed: r.seed(common.seed)?,
    })
}

fn cmd_experiment(kind: ExperimentKind) -> CliResult {
    match kind {
        ExperimentKind::Sink(a) => {
            let r = Resolved::load(a.common.config.as_deref())?;
            let cfg = experiment_config(&r, &a.common, &a.model, None)?;
            let ckpt = r.checkpoint(a.model.ckpt.clone())?;
            let per_token = a
                .samples_per_token
                .or(r.file.samples_per_token)
                .unwrap_or(8);
            let reports = run_sink_experiment(&ckpt, &ckpt.dataset.anchors, per_token, &cfg)?;
            let path = r.out(a.common.out)?.join("sink_experiment.csv");
            write_sink_csv(&path, &reports)?;
            report(&path);
        }
        ExperimentKind::PromptType(a) => {
            let r = Resolved::load(a.common.config.as_deref())?;
            let cfg = experiment_config(&r, &a.common, &a.model, Some(&a.nti))?;
            let ckpt = r.checkpoint(a.model.ckpt.clone())?;
            let table = run_prompt_type_experiment(&ckpt, r.trials(a.trials), &cfg)?;
            let out = r.out(a.common.out)?;
            let path = out.join("prompt_type.csv");
            write_prompt_type_csv(&path, &table)?;
            report(&path);
            let path = out.join("norm_traces.csv");
            write_norm_traces_csv(&path, &table, cfg.guidance.steps)?;
            report(&path);
        }
        ExperimentKind::ReconTable(a) => {
            let r = Resolved::load(a.common.config.as_deref())?;
            let cfg = experiment_config(&r, &a.common, &a.model, Some(&a.nti))?;
            let ckpt = r.checkpoint(a.model.ckpt.clone())?;
            let rows = run_reconstruction_table(&ckpt, r.trials(a.trials), &cfg)?;
            let path = r.out(a.common.out)?.join("recon_table.csv");
            write_recon_csv(&path, &rows)?;
            report(&path);
        }
        ExperimentKind::EditBench(a) => {
            let r = Resolved::load(a.common.config.as_deref())?;
            let cfg = experiment_config(&r, &a.common, &a.model, Some(&a.nti))?;
            let ckpt = r.checkpoint(a.model.ckpt.clone())?;
            let trials = run_edit_benchmark(&ckpt, r.trials(a.trials), &cfg)?;
            let path = r.out(a.common.out)?.join("edit_benchmark.csv");
            write_edit_benchmark_csv(&path, &trials)?;
            report(&path);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    latent_dim: usize,
    cond_dim: usize,
    vocab: usize,
    hidden: &'a [usize],
    parameters: usize,
    anchors: Vec<AnchorSummary<'a>>,
    ood_tokens: &'a [u32],
    p_uncond: f64,
    dataset_seed: u64,
    train: &'a TrainConfig,
}

#[derive(Serialize)]
struct AnchorSummary<'a> {
    name: &'a str,
    sink: bool,
    tokens: &'a [u32],
    modes: usize,
}

fn cmd_inspect(ckpt: Option<PathBuf>, config: Option<PathBuf>) -> CliResult {
    let r = Resolved::load(config.as_deref())?;
    let ckpt = r.checkpoint(ckpt)?;
    let spec = &ckpt.field.spec;
    let summary = Summary {
        latent_dim: spec.latent_dim,
        cond_dim: spec.cond_dim,
        vocab: spec.vocab,
        hidden: &spec.hidden,
        parameters: ckpt.field.parameter_count(),
        anchors: ckpt
            .dataset
            .anchors
            .iter()
            .map(|a| AnchorSummary {
                name: &a.name,
                sink: a.sink,
                tokens: &a.tokens,
                modes: a.modes.len(),
            })
            .collect(),
        ood_tokens: &ckpt.dataset.ood_tokens,
        p_uncond: ckpt.dataset.p_uncond,
        dataset_seed: ckpt.dataset.seed,
        train: &ckpt.train,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(flowinv::Error::from)?;
    println!("{text}");
    Ok(())
}
