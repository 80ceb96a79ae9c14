//! Command-line front end wiring the library into runnable workflows: the two
//! training stages, evaluation, policy rollout dumps, retargeting, and
//! synthetic clip generation.
//!
//! Conventions shared by every subcommand:
//! - settings come from an optional TOML file plus `--set key=value`
//!   overrides (flags win); the fully resolved config is written next to the
//!   other artifacts and its fingerprint is embedded in each of them;
//! - exit code 1 marks input/validation problems, 2 marks runtime failures;
//!   either way a machine-readable JSON record goes to stderr;
//! - artifact files are written atomically (temp + rename), so a failed run
//!   never leaves partial files behind.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use remimic::config::{write_atomic, RunConfig};
use remimic::eval::{evaluate_policy, evaluate_replay, low_pass_filter, AggregateReport};
use remimic::geom::HandModel;
use remimic::policy::{load_checkpoint, CheckpointMeta, PolicyParams};
use remimic::retarget::{build_joint_cache, FitSettings};
use remimic::rng::stream;
use remimic::sched::Stage;
use remimic::traj::ReferenceClip;
use remimic::trainer::{
    gen_synthetic, rollout_clip, states_to_clip, train_imitation, train_residual, ClipRuntime,
    ObservationLayout, PolicyBundle, TrainOutcome, TrainRun, TrainerError,
};

#[derive(Parser)]
#[command(
    name = "remimic",
    version,
    about = "Transfer reference hand-object manipulation onto simulated dexterous hands"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the first-stage trajectory-tracking policy.
    Pretrain(TrainArgs),
    /// Train the interaction correction head on top of a frozen first stage.
    TrainResidual(ResidualArgs),
    /// Score a policy (or a recorded motion) against its reference clips.
    Evaluate(EvaluateArgs),
    /// Roll a policy over the clips and dump raw + filtered motion files.
    Rollout(RolloutArgs),
    /// Fit joint tracks to clips and write cached sidecar copies.
    Retarget(RetargetArgs),
    /// Generate smooth synthetic reference clips for the hand model.
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one resolved key, e.g. --set ppo.lr=3e-4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set seed=N; wins over --set.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Base name for the checkpoint/log/config artifacts.
    #[arg(long, default_value = "imitation")]
    label: String,
}

#[derive(Args)]
struct ResidualArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// First-stage checkpoint to freeze and correct.
    #[arg(long)]
    base: PathBuf,
    #[arg(long, default_value = "residual")]
    label: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Policy checkpoint to roll out (first stage alone, or a correction
    /// head together with --base).
    #[arg(long, required_unless_present = "replay", conflicts_with = "replay")]
    checkpoint: Option<PathBuf>,
    /// First-stage checkpoint backing a correction-head checkpoint.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Score a recorded motion file instead of rolling a policy.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    label: String,
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// First-stage checkpoint backing a correction-head checkpoint.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Low-pass coefficient for the filtered dump; 1.0 is a passthrough.
    /// Defaults to eval.filter_alpha from the config.
    #[arg(long)]
    filter_alpha: Option<f64>,
    #[arg(long, default_value = "rollout")]
    label: String,
}

#[derive(Args)]
struct RetargetArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Re-fit clips even when they already carry a joint track.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of clips to generate.
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Frames per clip.
    #[arg(long, default_value_t = 120)]
    frames: usize,
    #[arg(long, default_value_t = 60.0)]
    fps: f64,
}

// ---------------------------------------------------------------------------
// Error plumbing
// ---------------------------------------------------------------------------

enum CmdError {
    /// Bad inputs: config, files, incompatible artifacts. Exit code 1.
    Validation(String),
    /// The run itself failed (training abort, I/O mid-run). Exit code 2.
    Runtime(String),
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    message: &'a str,
}

impl CmdError {
    fn report(&self) -> ExitCode {
        let (kind, message, code) = match self {
            CmdError::Validation(m) => ("validation", m, 1),
            CmdError::Runtime(m) => ("runtime", m, 2),
        };
        let record = ErrorRecord { kind, message };
        eprintln!(
            "{}",
            serde_json::to_string(&record)
                .unwrap_or_else(|_| format!("{{\"kind\":\"{kind}\"}}"))
        );
        ExitCode::from(code)
    }
}

fn validation(e: impl std::fmt::Display) -> CmdError {
    CmdError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CmdError {
    CmdError::Runtime(e.to_string())
}

/// Training errors split by blame: anything caught while checking inputs is
/// the caller's problem, the rest happened mid-run.
fn trainer_err(e: TrainerError) -> CmdError {
    match e {
        TrainerError::Config(_)
        | TrainerError::Clip(_)
        | TrainerError::Layout(_)
        | TrainerError::IncompatibleCheckpoint(_) => validation(e),
        _ => runtime(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return validation(e).report(),
    };
    let result = match cli.command {
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::TrainResidual(args) => cmd_train_residual(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Rollout(args) => cmd_rollout(args),
        Command::Retarget(args) => cmd_retarget(args),
        Command::GenSynthetic(args) => cmd_gen_synthetic(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

// ---------------------------------------------------------------------------
// Shared loading steps
// ---------------------------------------------------------------------------

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, CmdError> {
    let base = match &args.config {
        Some(path) => RunConfig::load(path).map_err(validation)?,
        None => RunConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    for item in &args.set {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            CmdError::Validation(format!("--set expects key=value, got `{item}`"))
        })?;
        overrides.push((key.to_string(), value.to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    base.with_overrides(&overrides).map_err(validation)
}

fn load_model(cfg: &RunConfig) -> Result<HandModel, CmdError> {
    if cfg.paths.hand_model.as_os_str().is_empty() {
        return Err(CmdError::Validation(
            "paths.hand_model is not set".to_string(),
        ));
    }
    HandModel::load(&cfg.paths.hand_model)
        .map_err(|e| validation(format!("paths.hand_model: {e}")))
}

fn load_clips(cfg: &RunConfig) -> Result<Vec<(String, ReferenceClip)>, CmdError> {
    if cfg.paths.clips.is_empty() {
        return Err(CmdError::Validation(
            "paths.clips is empty; list at least one reference clip".to_string(),
        ));
    }
    cfg.paths
        .clips
        .iter()
        .map(|path| {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let clip = ReferenceClip::load(path)
                .map_err(|e| validation(format!("paths.clips: {}: {e}", path.display())))?;
            Ok((name, clip))
        })
        .collect()
}

/// Prepares every configured clip (and, when asked, a mirrored copy of each)
/// against the run's hand model.
fn prepare_runtimes(
    cfg: &RunConfig,
    model: &HandModel,
    mirror: bool,
) -> Result<Vec<ClipRuntime>, CmdError> {
    let mut runtimes = Vec::new();
    for (name, clip) in load_clips(cfg)? {
        let models = vec![model.clone(); clip.hands.len()];
        let radius = cfg.physics.fingertip_radius;
        if mirror {
            let mirrored = clip.mirrored();
            runtimes.push(
                ClipRuntime::prepare(
                    mirrored,
                    &models,
                    &format!("{name}_mirror"),
                    &FitSettings::default(),
                    radius,
                )
                .map_err(trainer_err)?,
            );
        }
        runtimes.push(
            ClipRuntime::prepare(clip, &models, &name, &FitSettings::default(), radius)
                .map_err(trainer_err)?,
        );
    }
    Ok(runtimes)
}

/// Writes the fully resolved config (defaults materialized) with its own
/// fingerprint in a header comment.
fn persist_config(cfg: &RunConfig, out_dir: &Path, label: &str) -> Result<(), CmdError> {
    let text = format!(
        "# resolved config, fingerprint {:016x}\n{}",
        cfg.hash(),
        cfg.to_toml_string()
    );
    write_atomic(&out_dir.join(format!("{label}_config.toml")), text.as_bytes())
        .map_err(runtime)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CmdError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    write_atomic(path, &bytes).map_err(runtime)
}

struct LoadedPolicy {
    params: PolicyParams,
    meta: CheckpointMeta,
    stage: Stage,
}

fn load_policy(path: &Path) -> Result<LoadedPolicy, CmdError> {
    let (params, meta) =
        load_checkpoint(path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let stage = match meta.stage.as_str() {
        "imitation" => Stage::Imitation,
        "residual" => Stage::Residual,
        other => {
            return Err(CmdError::Validation(format!(
                "{}: unrecognized checkpoint stage `{other}`",
                path.display()
            )))
        }
    };
    Ok(LoadedPolicy {
        params,
        meta,
        stage,
    })
}

/// Resolves the (base, optional correction head) pair from `--checkpoint` /
/// `--base` flags and verifies that each checkpoint's stored observation
/// layout matches what the loaded clips would produce.
fn resolve_policy_pair(
    checkpoint: &Path,
    base: Option<&Path>,
    runtimes: &[ClipRuntime],
    lookahead: usize,
) -> Result<(PolicyParams, Option<PolicyParams>), CmdError> {
    let main = load_policy(checkpoint)?;
    let first = runtimes
        .first()
        .ok_or_else(|| CmdError::Validation("no clips to evaluate".to_string()))?;
    let proto = &first.models[0];
    let objects = first.clip.objects.len();
    let articulated = first.clip.objects.iter().any(|o| o.articulation.is_some());
    let check_layout = |meta: &CheckpointMeta, stage: Stage, path: &Path| -> Result<(), CmdError> {
        let expected = ObservationLayout::build(stage, proto, objects, articulated, lookahead);
        let stored = ObservationLayout::from_json(&meta.layout)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
        if stored != expected {
            return Err(CmdError::Validation(format!(
                "{}: checkpoint observation layout ({} dims) does not match these \
                 clips and settings ({} dims); it was trained on different inputs",
                path.display(),
                stored.total,
                expected.total
            )));
        }
        Ok(())
    };
    match main.stage {
        Stage::Imitation => {
            if base.is_some() {
                return Err(CmdError::Validation(
                    "--base only applies when --checkpoint is a correction head".to_string(),
                ));
            }
            check_layout(&main.meta, Stage::Imitation, checkpoint)?;
            Ok((main.params, None))
        }
        Stage::Residual => {
            let base_path = base.ok_or_else(|| {
                CmdError::Validation(
                    "--checkpoint is a correction head; pass its first stage via --base"
                        .to_string(),
                )
            })?;
            let base_policy = load_policy(base_path)?;
            if base_policy.stage != Stage::Imitation {
                return Err(CmdError::Validation(format!(
                    "{}: --base must be a first-stage checkpoint, found `{}`",
                    base_path.display(),
                    base_policy.meta.stage
                )));
            }
            check_layout(&main.meta, Stage::Residual, checkpoint)?;
            check_layout(&base_policy.meta, Stage::Imitation, base_path)?;
            Ok((base_policy.params, Some(main.params)))
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn report_training(outcome: &TrainOutcome) {
    let last = outcome.records.last();
    println!(
        "trained {} updates; final mean reward {:.4}",
        outcome.records.len(),
        last.map_or(f64::NAN, |r| r.reward_mean)
    );
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    println!("log:        {}", outcome.log_path.display());
}

fn cmd_pretrain(args: TrainArgs) -> Result<(), CmdError> {
    let cfg = resolve_config(&args.config)?;
    let model = load_model(&cfg)?;
    let clips = prepare_runtimes(&cfg, &model, cfg.train.mirror_clips)?;
    let out_dir = cfg.paths.out_dir.clone();
    persist_config(&cfg, &out_dir, &args.label)?;
    let run = TrainRun {
        config: cfg,
        clips,
        out_dir,
        label: args.label,
    };
    let outcome = train_imitation(&run).map_err(trainer_err)?;
    report_training(&outcome);
    Ok(())
}

fn cmd_train_residual(args: ResidualArgs) -> Result<(), CmdError> {
    let cfg = resolve_config(&args.config)?;
    let model = load_model(&cfg)?;
    let clips = prepare_runtimes(&cfg, &model, cfg.train.mirror_clips)?;
    let base = load_policy(&args.base)?;
    let out_dir = cfg.paths.out_dir.clone();
    persist_config(&cfg, &out_dir, &args.label)?;
    let run = TrainRun {
        config: cfg,
        clips,
        out_dir,
        label: args.label,
    };
    let outcome = train_residual(&run, &base.params, &base.meta).map_err(trainer_err)?;
    report_training(&outcome);
    Ok(())
}

#[derive(Serialize)]
struct EvalArtifact<'a> {
    config_hash: String,
    checkpoint: Option<String>,
    base: Option<String>,
    replay: Option<String>,
    aggregate: Option<&'a AggregateReport>,
    episode: Option<&'a remimic::eval::EpisodeReport>,
}

fn print_aggregate(report: &AggregateReport) {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.3}"),
        None => "n/a".to_string(),
    };
    let n = report.episodes.len();
    let wins = report.episodes.iter().filter(|e| e.success).count();
    println!("episodes      {n}");
    println!(
        "success rate  {:.1}%  ({wins}/{n})",
        100.0 * report.success_rate
    );
    println!("E_r (deg)     {}", fmt(report.mean_e_r_deg));
    println!("E_t (cm)      {}", fmt(report.mean_e_t_cm));
    println!("E_j (cm)      {}", fmt(report.mean_e_j_cm));
    println!("E_ft (cm)     {}", fmt(report.mean_e_ft_cm));
    println!("blowups       {}", report.blowups);
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CmdError> {
    let cfg = resolve_config(&args.config)?;
    let model = load_model(&cfg)?;
    let out_dir = cfg.paths.out_dir.clone();
    let report_path = out_dir.join(format!("{}_report.json", args.label));
    let hash = format!("{:016x}", cfg.hash());

    if let Some(replay_path) = &args.replay {
        let replay = ReferenceClip::load(replay_path)
            .map_err(|e| validation(format!("{}: {e}", replay_path.display())))?;
        let clips = load_clips(&cfg)?;
        if clips.len() != 1 {
            return Err(CmdError::Validation(format!(
                "--replay compares against exactly one reference clip, config lists {}",
                clips.len()
            )));
        }
        let (_, reference) = clips.into_iter().next().expect("length checked");
        let models: Vec<HandModel> = reference
            .hands
            .iter()
            .map(|track| {
                if track.side == model.side {
                    model.clone()
                } else {
                    model.mirrored()
                }
            })
            .collect();
        let episode = evaluate_replay(&replay, &reference, &models).map_err(validation)?;
        println!(
            "replay {}: success {}",
            replay_path.display(),
            if episode.success { "yes" } else { "no" }
        );
        write_json(
            &report_path,
            &EvalArtifact {
                config_hash: hash,
                checkpoint: None,
                base: None,
                replay: Some(replay_path.display().to_string()),
                aggregate: None,
                episode: Some(&episode),
            },
        )?;
        println!("report: {}", report_path.display());
        return Ok(());
    }

    let checkpoint = args.checkpoint.as_deref().expect("enforced by clap");
    let runtimes = prepare_runtimes(&cfg, &model, false)?;
    let (base, residual) = resolve_policy_pair(
        checkpoint,
        args.base.as_deref(),
        &runtimes,
        cfg.observation.lookahead,
    )?;
    let report = evaluate_policy(
        &runtimes,
        &base,
        residual.as_ref(),
        cfg.observation.lookahead,
        &cfg.physics,
        cfg.eval.rollouts,
        cfg.eval.deterministic,
        cfg.seed,
    )
    .map_err(runtime)?;
    print_aggregate(&report);
    write_json(
        &report_path,
        &EvalArtifact {
            config_hash: hash,
            checkpoint: Some(checkpoint.display().to_string()),
            base: args.base.as_ref().map(|p| p.display().to_string()),
            replay: None,
            aggregate: Some(&report),
            episode: None,
        },
    )?;
    println!("report: {}", report_path.display());
    Ok(())
}

#[derive(Serialize)]
struct RolloutEntry {
    clip: String,
    raw: Option<String>,
    filtered: Option<String>,
    frames: usize,
    blowup: bool,
}

#[derive(Serialize)]
struct RolloutManifest {
    config_hash: String,
    checkpoint: String,
    filter_alpha: f64,
    entries: Vec<RolloutEntry>,
}

fn cmd_rollout(args: RolloutArgs) -> Result<(), CmdError> {
    let cfg = resolve_config(&args.config)?;
    let alpha = args.filter_alpha.unwrap_or(cfg.eval.filter_alpha);
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CmdError::Validation(format!(
            "--filter-alpha {alpha} outside (0, 1]"
        )));
    }
    let model = load_model(&cfg)?;
    let runtimes = prepare_runtimes(&cfg, &model, false)?;
    let (base, residual) = resolve_policy_pair(
        &args.checkpoint,
        args.base.as_deref(),
        &runtimes,
        cfg.observation.lookahead,
    )?;

    let first = &runtimes[0];
    let proto = &first.models[0];
    let objects = first.clip.objects.len();
    let articulated = first.clip.objects.iter().any(|o| o.articulation.is_some());
    let base_layout = ObservationLayout::build(
        Stage::Imitation,
        proto,
        objects,
        articulated,
        cfg.observation.lookahead,
    );
    let res_layout = ObservationLayout::build(
        Stage::Residual,
        proto,
        objects,
        articulated,
        cfg.observation.lookahead,
    );
    let bundle = match residual.as_ref() {
        None => PolicyBundle {
            stage: Stage::Imitation,
            layout: &base_layout,
            params: &base,
            base_layout: None,
            base: None,
            warmup: 1.0,
        },
        Some(res) => PolicyBundle {
            stage: Stage::Residual,
            layout: &res_layout,
            params: res,
            base_layout: Some(&base_layout),
            base: Some(&base),
            warmup: 1.0,
        },
    };

    let out_dir = cfg.paths.out_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(runtime)?;
    let mut entries = Vec::new();
    for (i, rt) in runtimes.iter().enumerate() {
        let mut rng = stream(cfg.seed, "rollout", i as u64);
        let rollout = rollout_clip(rt, &bundle, &cfg.physics, cfg.eval.deterministic, &mut rng)
            .map_err(runtime)?;
        let frames = rollout.states.len();
        if frames < 2 {
            entries.push(RolloutEntry {
                clip: rt.name.clone(),
                raw: None,
                filtered: None,
                frames,
                blowup: rollout.blowup,
            });
            continue;
        }
        let clip = states_to_clip(&rollout.states, &rt.models, &rt.clip.shapes, rt.clip.fps);
        let raw_path = out_dir.join(format!("{}_{}.json", args.label, rt.name));
        clip.save(&raw_path).map_err(runtime)?;
        let filtered = low_pass_filter(&clip, alpha).map_err(runtime)?;
        let filtered_path = out_dir.join(format!("{}_{}_filtered.json", args.label, rt.name));
        filtered.save(&filtered_path).map_err(runtime)?;
        entries.push(RolloutEntry {
            clip: rt.name.clone(),
            raw: Some(raw_path.display().to_string()),
            filtered: Some(filtered_path.display().to_string()),
            frames,
            blowup: rollout.blowup,
        });
    }
    let manifest = RolloutManifest {
        config_hash: format!("{:016x}", cfg.hash()),
        checkpoint: args.checkpoint.display().to_string(),
        filter_alpha: alpha,
        entries,
    };
    let manifest_path = out_dir.join(format!("{}_manifest.json", args.label));
    write_json(&manifest_path, &manifest)?;
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

#[derive(Serialize)]
struct RetargetEntry {
    clip: String,
    output: String,
    refit: bool,
}

fn cmd_retarget(args: RetargetArgs) -> Result<(), CmdError> {
    let cfg = resolve_config(&args.config)?;
    let model = load_model(&cfg)?;
    let out_dir = cfg.paths.out_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(runtime)?;
    let mut entries = Vec::new();
    for (name, mut clip) in load_clips(&cfg)? {
        let had_cache = clip.hands.iter().all(|h| h.joints.is_some());
        let refit = args.force || !had_cache;
        if refit {
            if args.force {
                for hand in &mut clip.hands {
                    hand.joints = None;
                }
            }
            let models: Vec<HandModel> = clip
                .hands
                .iter()
                .map(|track| {
                    if track.side == model.side {
                        model.clone()
                    } else {
                        model.mirrored()
                    }
                })
                .collect();
            build_joint_cache(&mut clip, &models, &FitSettings::default())
                .map_err(|e| validation(format!("{name}: {e}")))?;
        }
        let output = out_dir.join(format!("{name}_retargeted.json"));
        clip.save(&output).map_err(runtime)?;
        println!(
            "{name}: {} -> {}",
            if refit { "fitted joint track" } else { "cache kept" },
            output.display()
        );
        entries.push(RetargetEntry {
            clip: name,
            output: output.display().to_string(),
            refit,
        });
    }
    #[derive(Serialize)]
    struct Manifest {
        config_hash: String,
        entries: Vec<RetargetEntry>,
    }
    write_json(
        &out_dir.join("retarget_manifest.json"),
        &Manifest {
            config_hash: format!("{:016x}", cfg.hash()),
            entries,
        },
    )
}

fn cmd_gen_synthetic(args: GenArgs) -> Result<(), CmdError> {
    if args.frames < 2 {
        return Err(CmdError::Validation(
            "--frames must be at least 2".to_string(),
        ));
    }
    if args.count == 0 {
        return Err(CmdError::Validation("--count must be at least 1".to_string()));
    }
    if !(args.fps > 0.0) {
        return Err(CmdError::Validation("--fps must be positive".to_string()));
    }
    let cfg = resolve_config(&args.config)?;
    let model = load_model(&cfg)?;
    let out_dir = cfg.paths.out_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(runtime)?;
    let clips = gen_synthetic(&model, args.count, args.frames, args.fps, cfg.seed);
    let mut files = Vec::new();
    for (i, clip) in clips.iter().enumerate() {
        let path = out_dir.join(format!("synthetic_{i:03}.json"));
        clip.save(&path).map_err(runtime)?;
        files.push(path.display().to_string());
    }
    #[derive(Serialize)]
    struct Manifest {
        config_hash: String,
        files: Vec<String>,
    }
    write_json(
        &out_dir.join("synthetic_manifest.json"),
        &Manifest {
            config_hash: format!("{:016x}", cfg.hash()),
            files,
        },
    )?;
    println!("wrote {} clips to {}", clips.len(), out_dir.display());
    Ok(())
}
