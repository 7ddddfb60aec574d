use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use haft_core::data_io::{load_config, load_table, split, RunConfig, TaskKind, Variant};
use haft_core::feature_space::ProvenanceFile;
use haft_core::harness::{emit_reports, replay, run_baseline_on_split, run_on_split, BaselineKind};
use haft_core::{agents, nn};
use log::info;

#[derive(Parser)]
#[command(name = "haft", version, about = "Multi-agent automated feature transformation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Cls,
    Reg,
}

impl From<Task> for TaskKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Cls => TaskKind::Classification,
            Task::Reg => TaskKind::Regression,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    NoSharedCritic,
    NoDecomp,
    StatsOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoSharedCritic => Variant::NoSharedCritic,
            VariantArg::NoDecomp => Variant::NoDecomp,
            VariantArg::StatsOnly => Variant::StatsOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Rdg,
    Erg,
}

#[derive(clap::Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, value_enum)]
    task: Task,
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config file and HAFT_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the agents (or run a baseline) and write reports to --out.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Run a baseline instead of the learner.
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer and network.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild an exported feature set on a dataset and score it.
    Replay {
        #[command(flatten)]
        data: DataArgs,
        /// provenance.json written by `run`.
        #[arg(long)]
        provenance: PathBuf,
    },
}

fn config(args: &DataArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env_overrides()?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(data: &DataArgs, variant: Option<VariantArg>, baseline: Option<BaselineArg>, out: &Path) -> anyhow::Result<()> {
    let mut cfg = config(data)?;
    if let Some(v) = variant {
        cfg.variant = v.into();
    }
    cfg.validate()?;
    let ds = load_table(&data.data, &data.target, data.task.into())?;
    let (train, test) = split(&ds, cfg.train_fraction, cfg.seed)?;
    info!("{} train rows, {} test rows, {} features", train.n_rows(), test.n_rows(), ds.n_features());

    let report = match baseline {
        Some(b) => {
            let kind = match b {
                BaselineArg::Rdg => BaselineKind::Rdg,
                BaselineArg::Erg => BaselineKind::Erg,
            };
            run_baseline_on_split(kind, &cfg, &train, &test)?
        }
        None => {
            let (report, mut agents) = run_on_split(&cfg, &train, &test)?;
            agents
                .save_snapshot(&out.join("checkpoints"), report.episodes_run)
                .context("saving agent checkpoints")?;
            report
        }
    };
    emit_reports(&report, out)?;
    println!(
        "{}",
        serde_json::json!({
            "method": report.method,
            "original_score": report.original_score,
            "best_score": report.best_score,
            "test_score_topk": report.test_score_topk,
            "eval_calls": report.eval_calls,
            "out": out,
        })
    );
    Ok(())
}

fn gradcheck(instances: usize, seed: u64) -> anyhow::Result<()> {
    let mut reports = nn::gradcheck::kernel_suite(instances, seed);
    reports.extend(agents::network_suite(instances, seed)?);
    for r in &reports {
        println!("{}", serde_json::to_string(r)?);
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}

fn replay_cmd(data: &DataArgs, provenance: &Path) -> anyhow::Result<()> {
    let cfg = config(data)?;
    let ds = load_table(&data.data, &data.target, data.task.into())?;
    let prov = ProvenanceFile::read(provenance)?;
    let r = replay(&prov, &ds, &cfg)?;
    println!("{}", serde_json::to_string(&r)?);
    Ok(())
}

fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<haft_core::Error>())
        .map_or("runtime", |e| e.kind());
    serde_json::json!({ "error": { "kind": kind, "message": format!("{err:#}") } })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rec = serde_json::json!({ "error": { "kind": "usage", "message": e.to_string().trim_end() } });
            eprintln!("{rec}");
            return ExitCode::from(2);
        }
    };
    let res = match &cli.cmd {
        Command::Run { data, variant, baseline, out } => run(data, *variant, *baseline, out),
        Command::Gradcheck { instances, seed } => gradcheck(*instances, *seed),
        Command::Replay { data, provenance } => replay_cmd(data, provenance),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
