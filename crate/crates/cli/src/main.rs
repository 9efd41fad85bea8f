//! `opl`: command-line front end for off-policy learning experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use opl_core::bench::chart::{emit_chart, ChartKind, Series};
use opl_core::bench::config::{ExperimentConfig, Setup};
use opl_core::bench::evaluate::{evaluate_policy, write_eval_csv};
use opl_core::bench::sweep::{execute_single, run_sweep, write_runs_csv};
use opl_core::bench::{run_landscape, run_mse, run_params};
use opl_core::error::{Error, Result};
use opl_core::oracle::matching_oracle;
use opl_core::policy::SoftmaxPolicy;

#[derive(Parser)]
#[command(name = "opl", version, about = "Off-policy learning experiments on logged bandit data")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid points and restarts.
    #[arg(long, global = true, default_value_t = default_workers())]
    workers: usize,
    /// Exit with code 3 when any run fails.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Subcommand)]
enum Command {
    /// Build the environment and logged dataset; write them with each method's oracle.
    Generate,
    /// Train every configured method at the first train-grid point.
    Train,
    /// Score a saved policy with every configured estimator.
    Evaluate {
        /// Policy JSON written by `train`.
        #[arg(long)]
        policy: PathBuf,
    },
    /// Run the full method × train-grid sweep.
    Sweep,
    /// Estimator MSE against exact values over dataset seeds.
    Mse,
    /// Plateau and basin-census probes.
    Landscape,
    /// Light versus heavy policy parametrization.
    ParamsReport,
    /// Chart columns of a CSV file as an SVG.
    Chart {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        y: String,
        /// Column whose values name the series.
        #[arg(long)]
        series: Option<String>,
        #[arg(long, value_enum, default_value_t = Kind::Line)]
        kind: Kind,
        #[arg(long, default_value = "")]
        title: String,
        /// Output file; defaults to `<out>/chart.svg`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Line,
    Bar,
}

enum Failure {
    Error(Error),
    FailedRuns(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out.clone());
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let setup = cfg.prepare()?;
    let env = setup.env.as_ref().ok_or_else(|| Error::Config("generate needs an `environment`".into()))?;
    write_json(&out.join("environment.json"), env)?;
    setup.ds.save_csv(out.join("dataset.csv"))?;
    std::fs::create_dir_all(out.join("oracles"))?;
    for (i, v) in cfg.variants()?.iter().enumerate() {
        let oracle = matching_oracle(env, &v.objective(&setup, cfg.seed)?)?;
        oracle.save_csv(out.join(format!("oracles/oracle_{i:02}.csv")))?;
        println!("oracle_{i:02}: {} -> {} oracle", v.label, oracle.method);
    }
    println!("wrote {} rows, m={} K={}", setup.ds.len(), env.num_contexts(), env.num_actions());
    Ok(())
}

fn train_cmd(cfg: &ExperimentConfig, out: &Path) -> std::result::Result<(), Failure> {
    let setup = cfg.prepare()?;
    let variants = cfg.variants()?;
    let point = cfg.train.points()[0];
    std::fs::create_dir_all(out.join("traces"))?;
    std::fs::create_dir_all(out.join("policies"))?;
    let mut records = Vec::new();
    for (i, v) in variants.iter().enumerate() {
        let (rec, policy) = execute_single(i, &setup, v, cfg.seed, &cfg.policy, &cfg.train, &point, Some(out));
        if let Some(p) = policy {
            write_json(&out.join(format!("policies/policy_{i:02}.json")), &p)?;
        }
        println!(
            "{}: true_value={} error={}",
            rec.method,
            rec.true_value.map_or("-".into(), |v| format!("{v:.6}")),
            rec.error.as_deref().unwrap_or("-")
        );
        records.push(rec);
    }
    write_runs_csv(&records, std::fs::File::create(out.join("train.csv"))?)?;
    check_failures(records.iter().filter(|r| r.failed()).count())
}

fn check_failures(failed: usize) -> std::result::Result<(), Failure> {
    if failed > 0 {
        Err(Failure::FailedRuns(failed))
    } else {
        Ok(())
    }
}

fn evaluate(cfg: &ExperimentConfig, out: &Path, policy_path: &Path) -> Result<()> {
    let setup: Setup = cfg.prepare()?;
    let policy: SoftmaxPolicy = serde_json::from_str(&std::fs::read_to_string(policy_path)?)?;
    let rows = evaluate_policy(&setup, &cfg.variants()?, &policy, cfg.seed)?;
    for r in &rows {
        println!("{}: estimate={:.6} true_value={}", r.method, r.estimate, r.true_value.map_or("-".into(), |v| format!("{v:.6}")));
    }
    write_eval_csv(&rows, std::fs::File::create(out.join("evaluate.csv"))?)
}

fn sweep(cfg: &ExperimentConfig, out: &Path, workers: usize) -> std::result::Result<(), Failure> {
    let res = run_sweep(cfg, Some(out), workers)?;
    println!("method -> oracle");
    for s in &res.summary {
        println!(
            "{} -> {}: mean={} robustness={} failed={}/{}",
            s.method,
            s.oracle,
            s.mean.map_or("-".into(), |v| format!("{v:.6}")),
            s.robustness.map_or("-".into(), |v| format!("{v:.4}")),
            s.failed,
            s.runs
        );
    }
    check_failures(res.records.iter().filter(|r| r.failed()).count())
}

fn chart_cmd(
    input: &Path,
    x: Option<&str>,
    y: &str,
    series_col: Option<&str>,
    kind: Kind,
    title: &str,
    output: &Path,
) -> Result<()> {
    let mut rdr = csv::Reader::from_path(input)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` not in {}", input.display())))
    };
    let yi = col(y)?;
    let xi = x.map(col).transpose()?;
    let si = series_col.map(col).transpose()?;
    let mut series: Vec<Series> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i].parse::<f64>().map_err(|_| Error::Parse {
                line: row as u64 + 2,
                msg: format!("`{}` is not a number", &rec[i]),
            })
        };
        if rec[yi].is_empty() {
            continue;
        }
        let yv = parse(yi)?;
        let xv = match xi {
            Some(i) => parse(i)?,
            None => row as f64,
        };
        let name = si.map_or(y.to_string(), |i| rec[i].to_string());
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((xv, yv)),
            None => series.push(Series::new(name, vec![(xv, yv)])),
        }
    }
    let kind = match kind {
        Kind::Line => ChartKind::Line,
        Kind::Bar => ChartKind::Bar,
    };
    emit_chart(&series, kind, title, output)
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    if let Command::Chart {
        input,
        x,
        y,
        series,
        kind,
        title,
        output,
    } = &cli.command
    {
        let output = match output {
            Some(o) => o.clone(),
            None => {
                let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
                std::fs::create_dir_all(&dir)?;
                dir.join("chart.svg")
            }
        };
        return Ok(chart_cmd(input, x.as_deref(), y, series.as_deref(), *kind, title, &output)?);
    }
    let (cfg, out) = load_config(cli)?;
    match &cli.command {
        Command::Generate => generate(&cfg, &out)?,
        Command::Train => train_cmd(&cfg, &out)?,
        Command::Evaluate { policy } => evaluate(&cfg, &out, policy)?,
        Command::Sweep => sweep(&cfg, &out, cli.workers)?,
        Command::Mse => {
            let rows = run_mse(&cfg, Some(&out), cli.workers)?;
            for r in &rows {
                println!("[{}] {} @ {}: mse={:.3e}", r.section, r.method, r.target, r.mse);
            }
        }
        Command::Landscape => {
            let res = run_landscape(&cfg, Some(&out), cli.workers)?;
            for r in &res.plateau {
                println!("plateau K={} {}: {}{}", r.k, r.method, r.iterations, if r.unescaped { " (unescaped)" } else { "" });
            }
            for (m, rep) in &res.census {
                println!("census {m}: {} basins over {} restarts", rep.num_basins(), rep.restarts);
            }
        }
        Command::ParamsReport => {
            let rep = run_params(&cfg, Some(&out), cli.workers)?;
            for s in &rep.summary {
                println!(
                    "{} {} ({}, {} params): epochs-to-90% {:.2} [{:.2}, {:.2}], true_value {:.6} [{:.6}, {:.6}]",
                    s.method, s.variant, s.policy, s.num_params, s.epochs_mean, s.epochs_min, s.epochs_max, s.value_mean, s.value_min, s.value_max
                );
            }
        }
        Command::Chart { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::FailedRuns(n)) => {
            eprintln!("{n} run(s) failed");
            if cli.strict {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
