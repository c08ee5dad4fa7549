use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use abr_vtrace::config::{Settings, TraceSets};
use abr_vtrace::harness::{
    evaluate, train, Algorithm, ControllerSpec, EvalResult, EvalSettings, TrainOutcome,
};
use abr_vtrace::neural::Checkpoint;
use abr_vtrace::qoe::QoeVariant;
use abr_vtrace::report::{
    emit_compare, emit_report, read_eval_csv, write_eval_csv, write_train_epochs,
    write_train_validations, CompareCell, ReportFormat,
};
use abr_vtrace::trace_store::{
    generate_synthetic, load_trace_dir, write_trace_dir, LossModel, NetworkTrace,
};

const LOG_ENV: &str = "ABR_VTRACE_LOG";

/// Trace-driven adaptive bitrate streaming simulator and RL trainer.
///
/// Settings are layered: built-in defaults, then --config, then --set,
/// then dedicated flags. Progress goes to stderr (level from ABR_VTRACE_LOG:
/// error, warn, info or debug); data goes to files only.
#[derive(Debug, Parser)]
#[command(name = "abr-vtrace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic bandwidth traces.
    GenTraces(GenTracesArgs),
    /// Train a policy (alisa or a3c) and write checkpoints and logs.
    Train(TrainArgs),
    /// Evaluate one algorithm on a trace set and write per-trace QoE.
    Eval(EvalArgs),
    /// Evaluate several algorithms over loss levels and QoE variants.
    Compare(CompareArgs),
    /// Turn per-trace QoE files into csv, cdf or components reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file with [video], [train], [qoe], [baselines], [traces] and
    /// [eval] sections of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Seed of every random choice made by the command.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GenTracesArgs {
    #[command(flatten)]
    common: Common,
    /// Number of traces.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Directory to write `<id>.trace` files into.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Learner: alisa (V-trace) or a3c (one-step advantages).
    #[arg(long, default_value = "alisa")]
    algo: Algorithm,
    /// Reward variant: lin, log or hd.
    #[arg(long)]
    qoe: Option<QoeVariant>,
    /// Packet-loss probability during training.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// Number of actors generating episodes.
    #[arg(long)]
    actors: Option<usize>,
    /// Run actors on OS threads when greater than 1 (not reproducible).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for checkpoints and training logs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Algorithm: alisa, a3c, bb, rb, bola or mpc.
    #[arg(long)]
    algo: Algorithm,
    /// Checkpoint of a learned policy (required for alisa and a3c).
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Directory of traces; defaults to the configured test set.
    #[arg(long, value_name = "DIR")]
    traces: Option<PathBuf>,
    /// QoE variant: lin, log or hd.
    #[arg(long)]
    qoe: Option<QoeVariant>,
    /// Packet-loss probability.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// Evaluation worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; receives `<algo>.csv`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated algorithms.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "alisa,a3c,bb,rb,bola,mpc"
    )]
    algos: Vec<Algorithm>,
    /// Comma-separated packet-loss probabilities.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    loss: Vec<f64>,
    /// Comma-separated QoE variants.
    #[arg(long, value_delimiter = ',', default_value = "lin,log,hd")]
    qoe: Vec<QoeVariant>,
    /// Directory of test traces; defaults to the configured test set.
    #[arg(long, value_name = "DIR")]
    traces: Option<PathBuf>,
    /// Where learned checkpoints `<algo>-<variant>.ckpt` are read from;
    /// missing ones are trained and saved there. Defaults to OUT/checkpoints.
    #[arg(long, value_name = "DIR")]
    checkpoint_dir: Option<PathBuf>,
    /// Number of training actors for missing checkpoints.
    #[arg(long)]
    actors: Option<usize>,
    /// Evaluation worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for summary.csv and one grid per QoE variant.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Per-trace QoE files written by `eval`, or directories of them.
    #[arg(long, value_name = "PATH", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// csv, cdf or components.
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

impl Common {
    /// Defaults, then the config file, then `--set`, then `flags`.
    fn settings(&self, flags: &[String]) -> anyhow::Result<Settings> {
        let mut settings = Settings::default();
        if let Some(path) = &self.config {
            settings.merge_file(path)?;
        }
        for assignment in self.set.iter().chain(flags) {
            settings.apply_override(assignment)?;
        }
        settings.validate()?;
        Ok(settings)
    }

    fn seed_flags(&self, keys: &[&str]) -> Vec<String> {
        self.seed
            .map(|seed| keys.iter().map(|k| format!("{k}={seed}")).collect())
            .unwrap_or_default()
    }
}

fn create(path: &Path) -> anyhow::Result<fs::File> {
    fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn out_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn test_traces(settings: &Settings, dir: &Option<PathBuf>) -> anyhow::Result<Vec<NetworkTrace>> {
    Ok(match dir {
        Some(dir) => load_trace_dir(dir)?,
        None => settings.traces.load()?.test,
    })
}

fn gen_traces(args: GenTracesArgs) -> anyhow::Result<()> {
    let settings = args
        .common
        .settings(&args.common.seed_flags(&["traces.seed"]))?;
    let spec = settings.traces.synthetic_spec(args.n);
    let traces = generate_synthetic(&spec)?;
    write_trace_dir(&traces, &args.out)?;
    info!("wrote {} traces to {}", traces.len(), args.out.display());
    Ok(())
}

fn save_training(outcome: &TrainOutcome, dir: &Path) -> anyhow::Result<()> {
    outcome.best.save(dir.join("best.ckpt"))?;
    outcome.last.save(dir.join("final.ckpt"))?;
    write_train_epochs(&outcome.report, create(&dir.join("epochs.csv"))?)?;
    write_train_validations(&outcome.report, create(&dir.join("validation.csv"))?)?;
    let mut timings = create(&dir.join("timings.csv"))?;
    writeln!(timings, "epoch,seconds")?;
    for (epoch, secs) in outcome.timings.epoch_seconds.iter().enumerate() {
        writeln!(timings, "{epoch},{secs:?}")?;
    }
    Ok(())
}

fn run_training(
    settings: &Settings,
    sets: &TraceSets,
    variant: QoeVariant,
    algo: Algorithm,
    loss: LossModel,
) -> anyhow::Result<TrainOutcome> {
    let Some(mode) = algo.train_mode() else {
        bail!("{algo} is not a learned algorithm");
    };
    let mut cfg = settings.train_config(sets, settings.qoe_config_for(variant)?)?;
    cfg.loss = loss;
    info!("training {algo} on {variant} QoE");
    Ok(train(&cfg, mode)?)
}

fn train_cmd(args: TrainArgs) -> anyhow::Result<()> {
    let mut flags = args.common.seed_flags(&["train.seed"]);
    if let Some(q) = args.qoe {
        flags.push(format!("qoe.variant={q}"));
    }
    if let Some(n) = args.actors {
        flags.push(format!("train.actors={n}"));
    }
    if let Some(n) = args.threads {
        flags.push(format!("train.threaded={}", n > 1));
    }
    let settings = args.common.settings(&flags)?;
    let sets = settings.traces.load()?;
    out_dir(&args.out)?;
    let outcome = run_training(
        &settings,
        &sets,
        settings.qoe.variant,
        args.algo,
        LossModel::new(args.loss)?,
    )?;
    save_training(&outcome, &args.out)?;
    fs::write(args.out.join("settings.cfg"), settings.to_string())?;
    info!(
        "best checkpoint {} (validation QoE {:?})",
        outcome.report.best_checkpoint, outcome.report.best_validation_qoe
    );
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> anyhow::Result<()> {
    let mut flags = args.common.seed_flags(&["eval.seed"]);
    if let Some(q) = args.qoe {
        flags.push(format!("qoe.variant={q}"));
    }
    if let Some(n) = args.threads {
        flags.push(format!("eval.threads={n}"));
    }
    let settings = args.common.settings(&flags)?;
    let spec = match (args.algo.is_learned(), &args.checkpoint) {
        (true, Some(path)) => ControllerSpec::Learned(Checkpoint::load(path)?.actor),
        (true, None) => bail!("--checkpoint is required for {}", args.algo),
        (false, Some(_)) => bail!("--checkpoint only applies to learned algorithms"),
        (false, None) => ControllerSpec::Baseline(args.algo, settings.baselines.clone()),
    };
    let traces = test_traces(&settings, &args.traces)?;
    let video = settings.video_spec()?;
    let qoe = settings.qoe_config()?;
    let eval = EvalSettings {
        video: &video,
        qoe: &qoe,
        loss: LossModel::new(args.loss)?,
        seed: settings.eval.seed,
        threads: settings.eval.threads,
    };
    let result = evaluate(args.algo.as_str(), &spec, &traces, &eval)?;
    out_dir(&args.out)?;
    write_eval_csv(
        &result,
        create(&args.out.join(format!("{}.csv", args.algo)))?,
    )?;
    info!(
        "{}: mean QoE {:.3}, median {:.3} over {} traces",
        args.algo, result.summary.mean, result.summary.median, result.summary.count
    );
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> anyhow::Result<()> {
    let mut flags = args.common.seed_flags(&["train.seed", "eval.seed"]);
    if let Some(n) = args.actors {
        flags.push(format!("train.actors={n}"));
    }
    if let Some(n) = args.threads {
        flags.push(format!("eval.threads={n}"));
    }
    let settings = args.common.settings(&flags)?;
    if args.algos.is_empty() || args.loss.is_empty() || args.qoe.is_empty() {
        bail!("--algos, --loss and --qoe must be non-empty");
    }
    let losses = args
        .loss
        .iter()
        .map(|&p| LossModel::new(p))
        .collect::<Result<Vec<_>, _>>()?;
    let sets = settings.traces.load()?;
    let traces = test_traces(&settings, &args.traces)?;
    let video = settings.video_spec()?;
    let ckpt_dir = args
        .checkpoint_dir
        .clone()
        .unwrap_or_else(|| args.out.join("checkpoints"));

    let mut cells = Vec::new();
    for &variant in &args.qoe {
        let qoe = settings.qoe_config_for(variant)?;
        for &algo in &args.algos {
            let spec = if algo.is_learned() {
                let path = ckpt_dir.join(format!("{algo}-{variant}.ckpt"));
                let ckpt = if path.exists() {
                    Checkpoint::load(&path)?
                } else {
                    out_dir(&ckpt_dir)?;
                    let outcome =
                        run_training(&settings, &sets, variant, algo, LossModel::lossless())?;
                    outcome.best.save(&path)?;
                    outcome.best
                };
                ControllerSpec::Learned(ckpt.actor)
            } else {
                ControllerSpec::Baseline(algo, settings.baselines.clone())
            };
            for (&p, &loss) in args.loss.iter().zip(&losses) {
                let eval = EvalSettings {
                    video: &video,
                    qoe: &qoe,
                    loss,
                    seed: settings.eval.seed,
                    threads: settings.eval.threads,
                };
                let result = evaluate(algo.as_str(), &spec, &traces, &eval)?;
                info!(
                    "{variant} loss {p}: {algo} mean QoE {:.3}",
                    result.summary.mean
                );
                cells.push(CompareCell {
                    algorithm: algo.to_string(),
                    variant: variant.to_string(),
                    loss: p,
                    result,
                });
            }
        }
    }
    for path in emit_compare(&cells, &args.out)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn report_cmd(args: ReportArgs) -> anyhow::Result<()> {
    let mut files = Vec::new();
    for input in &args.input {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("cannot read {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!("no result files found");
    }
    let results = files
        .iter()
        .map(|path| {
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let file =
                fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            Ok(read_eval_csv(&label, file)?)
        })
        .collect::<anyhow::Result<Vec<EvalResult>>>()?;
    for path in emit_report(&results, args.format, &args.out)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<abr_vtrace::Error>())
        .map(abr_vtrace::Error::kind)
        .unwrap_or(if err.chain().any(|e| e.is::<std::io::Error>()) {
            "io"
        } else {
            "invalid-argument"
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error kind=usage message={first:?}");
            return ExitCode::from(2);
        }
    };

    let result = match cli.command {
        Command::GenTraces(args) => gen_traces(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Compare(args) => compare_cmd(args),
        Command::Report(args) => report_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = err
                .chain()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(": ");
            eprintln!("error kind={} message={message:?}", error_kind(&err));
            ExitCode::FAILURE
        }
    }
}
