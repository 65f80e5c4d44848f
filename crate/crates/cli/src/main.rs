use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use socialfusion_core::analysis::{conflict_matrix, probe_workspace, synergy_sweep, FeatureSource};
use socialfusion_core::data::fixtures::FixtureConfig;
use socialfusion_core::{Error, MetricsTable, Regime, RunConfig, SocialTask, Split, TransferReport, Workspace};

const AFTER_HELP: &str = "\
Tasks:
  HAGRIDV2    gesture classification
  PISC        social relation (domain and relation heads)
  LAM         looking-at-me
  GAZEFOLLOW  gaze target heatmap
  AFFECTNET   facial expression

Regimes:
  single:<task>        one task, e.g. single:LAM
  pair:<task>,<task>   two tasks, e.g. pair:LAM,GAZEFOLLOW
  joint                all five tasks

Exit codes: 0 ok, 1 runtime failure, 2 configuration or usage error.
SOCIALFUSION_OUTPUT_DIR overrides the configured output directory.";

#[derive(Parser)]
#[command(name = "socialfusion", version, about = "Train and analyse social-perception fusion models", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one regime and evaluate the best-validation weights.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print its metrics as JSON.
    Eval(EvalArgs),
    /// Fit linear probes on frozen encoder features.
    Probe(ProbeArgs),
    /// Gradient conflict between task pairs.
    Gcd(GcdArgs),
    /// Train all sixteen single, pair and joint regimes and tabulate them.
    Synergy(SynergyArgs),
    /// Compare single-task and joint metrics.
    Report(ReportArgs),
    /// Write the synthetic desk-scale dataset and a matching config.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "SOCIALFUSION_OUTPUT_DIR", hide_env_values = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// single:<task>, pair:<t1>,<t2> or joint. Defaults to the config's regime.
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
    /// Run directory. Defaults to <output_dir>/<regime>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Replace an existing run in the target directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    /// Comma-separated tasks. Defaults to the config's regime, else all configured tasks.
    #[arg(long, value_delimiter = ',', value_parser = parse_task)]
    tasks: Option<Vec<SocialTask>>,
    /// Also write the metrics to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeaturesArg {
    Flatten,
    MeanPool,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides `probe.features`.
    #[arg(long, value_enum)]
    features: Option<FeaturesArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GcdArgs {
    #[command(flatten)]
    common: Common,
    /// Take gradients at these weights instead of the initialization.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_task)]
    tasks: Option<Vec<SocialTask>>,
    /// Directory for gcd.csv and gcd.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynergyArgs {
    #[command(flatten)]
    common: Common,
    /// Parallel training runs (overrides `synergy.jobs`).
    #[arg(long)]
    jobs: Option<usize>,
    /// Epochs per run (overrides `synergy.epochs`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Sweep directory. Defaults to <output_dir>/synergy; reruns resume from its ledger.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Single-task run directories or metrics JSON files (merged).
    #[arg(long, num_args = 1.., required = true)]
    single: Vec<PathBuf>,
    /// Joint run directory or metrics JSON file.
    #[arg(long)]
    joint: PathBuf,
    /// Directory for transfer.csv, transfer.json and transfer.svg.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Args)]
struct FixturesArgs {
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    val: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    #[arg(long, default_value_t = 48)]
    image_size: u32,
    #[arg(long, default_value_t = 4)]
    hagrid_classes: usize,
    /// Comma-separated subset of tasks.
    #[arg(long, value_delimiter = ',', value_parser = parse_task)]
    tasks: Option<Vec<SocialTask>>,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> Result<SocialTask, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(dir) = &common.output_dir {
        // an explicit path is taken relative to the working directory
        cfg.output_dir = std::path::absolute(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let cfg = load_config(&a.common)?;
    let regime = a
        .regime
        .or_else(|| cfg.regime.clone())
        .ok_or_else(|| Failure::Config("no regime: pass --regime or set `regime` in the config".into()))?;
    let dir = a.out.unwrap_or_else(|| cfg.output_dir().join(regime.slug()));
    if dir.join("run.json").exists() && !a.force {
        return Err(Failure::Config(format!(
            "{} already holds a run; pass --force or choose another --out",
            dir.display()
        )));
    }
    let tasks = regime.tasks();
    let ws = Workspace::open(cfg, Some(&tasks))?;
    log::info!("training {regime} into {}", dir.display());
    let outcome = ws.run_with_epochs(&regime, &dir, a.epochs)?;
    println!("{}", outcome.dir.display());
    println!("{}", outcome.metrics.to_json()?);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let cfg = load_config(&a.common)?;
    let tasks = match (&a.tasks, &cfg.regime) {
        (Some(t), _) => t.clone(),
        (None, Some(r)) => r.tasks(),
        (None, None) => cfg.tasks(),
    };
    let ws = Workspace::open(cfg, Some(&tasks))?;
    let model = ws.load_checkpoint(&a.checkpoint)?;
    let metrics = ws.evaluate(&model, &tasks, a.split.into())?;
    let json = metrics.to_json()?;
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_probe(a: ProbeArgs) -> CliResult {
    let cfg = load_config(&a.common)?;
    let mut probe = cfg.probe.clone();
    if let Some(f) = a.features {
        probe.features = match f {
            FeaturesArg::Flatten => FeatureSource::Flatten,
            FeaturesArg::MeanPool => FeatureSource::MeanPool,
        };
    }
    if let Some(s) = cfg.seed {
        probe.seed = s;
    }
    let ws = Workspace::open(cfg, None)?;
    let report = probe_workspace(&ws, &probe)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_gcd(a: GcdArgs) -> CliResult {
    let cfg = load_config(&a.common)?;
    let tasks = a.tasks.clone().unwrap_or_else(|| cfg.tasks());
    if tasks.len() < 2 {
        return Err(Failure::Config("gradient conflict needs at least two tasks".into()));
    }
    let gcd_cfg = cfg.gcd.clone();
    let ws = Workspace::open(cfg, Some(&tasks))?;
    let model = match &a.checkpoint {
        Some(p) => ws.load_checkpoint(p)?,
        None => ws.model(),
    };
    let (_, matrix) = conflict_matrix(&model, &ws.store, &ws.datasets, &tasks, &gcd_cfg)?;
    let csv = matrix.to_csv();
    if let Some(out) = &a.out {
        write_file(&out.join("gcd.csv"), &csv)?;
        write_file(
            &out.join("gcd.json"),
            &serde_json::to_string_pretty(&matrix).map_err(Error::from)?,
        )?;
    }
    print!("{csv}");
    Ok(())
}

fn cmd_synergy(a: SynergyArgs) -> CliResult {
    let cfg = load_config(&a.common)?;
    let jobs = a.jobs.unwrap_or(cfg.synergy.jobs);
    if jobs == 0 {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let epochs = a.epochs.or(cfg.synergy.epochs);
    let out = a.out.unwrap_or_else(|| cfg.output_dir().join("synergy"));
    let ws = Workspace::open(cfg, None)?;
    let grid = synergy_sweep(&ws, &out, jobs, epochs)?;
    print!("{}", grid.to_csv());
    Ok(())
}

/// A run directory's `metrics.json`, or a metrics file given directly.
fn load_metrics(path: &Path) -> CliResult<MetricsTable> {
    let file = if path.is_dir() {
        path.join("metrics.json")
    } else {
        path.to_path_buf()
    };
    Ok(MetricsTable::load(&file)?)
}

fn cmd_report(a: ReportArgs) -> CliResult {
    let mut single = MetricsTable::default();
    for p in &a.single {
        single.merge(&load_metrics(p)?);
    }
    let joint = load_metrics(&a.joint)?;
    let report = TransferReport::build(&single, &joint);
    if report.total == 0 {
        return Err(Failure::Config(
            "no metric appears in both the single and joint tables".into(),
        ));
    }
    write_file(&a.out.join("transfer.csv"), &report.to_csv())?;
    write_file(&a.out.join("transfer.json"), &report.to_json()?)?;
    write_file(&a.out.join("transfer.svg"), &report.to_svg())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_fixtures(a: FixturesArgs) -> CliResult {
    let fc = FixtureConfig {
        image_size: a.image_size,
        train: a.train,
        val: a.val,
        test: a.test,
        hagrid_classes: a.hagrid_classes,
        seed: a.seed,
        tasks: a.tasks.unwrap_or_else(|| SocialTask::ALL.to_vec()),
    };
    let cfg = RunConfig::write_desk(&a.out, &fc)?;
    println!("{}", cfg.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Gcd(a) => cmd_gcd(a),
        Command::Synergy(a) => cmd_synergy(a),
        Command::Report(a) => cmd_report(a),
        Command::Fixtures(a) => cmd_fixtures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
