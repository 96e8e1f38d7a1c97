use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dtzo::cuts::Layer;
use dtzo::diagnostics::{test_containment, ContainmentOptions, ContainmentReport};
use dtzo::error::{DtzoError, Result};
use dtzo::experiments::baselines::Method;
use dtzo::experiments::config::{run_experiment, ExperimentConfig, ProblemSpec};
use dtzo::experiments::quadratic::gen_quadratic;
use dtzo::experiments::sweep::{sweep, write_csv, SweepParam, SweepRow};
use dtzo::problem::Dims;
use dtzo::rng::{Purpose, RngStream, Role};
use dtzo::runtime::RunConfig;

/// Distributed trilevel zeroth-order learning.
///
/// Worker parallelism is capped by the DTZO_THREADS environment variable.
#[derive(Parser)]
#[command(name = "dtzo", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// CSV output path (stdout if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, conflicts_with = "robust_ho")]
    quadratic: bool,
    #[arg(long = "robust-ho", global = true)]
    robust_ho: bool,
    /// none | single | bilevel
    #[arg(long, global = true)]
    baseline: Option<Method>,
}

#[derive(Subcommand)]
enum Cmd {
    /// One experiment, from a JSON config or from the flags.
    Run { config: Option<PathBuf> },
    /// One CSV row per (value, seed).
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Seeds 0..N, offset by --seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write wall_ms = 0 for reproducible output.
        #[arg(long)]
        deterministic: bool,
    },
    /// Cut containment check on quadratic instances.
    Containment {
        #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
    },
    /// Ledger counts against the closed-form communication cost.
    BenchComm {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.cmd {
        Cmd::Run { config } => {
            let cfg = experiment(c, config.as_ref())?;
            let out = run_experiment(&cfg)?;
            let r = &out.report;
            eprintln!(
                "t={} final_F={:.6e} gap={:?} up={} down={} pool={}/{} {} ms",
                r.t_reached,
                r.final_f.total,
                r.final_gap(),
                r.ledger.up_scalars,
                r.ledger.down_scalars,
                r.final_pool.inner.len(),
                r.final_pool.outer.len(),
                out.wall_ms
            );
            let row = SweepRow {
                method: cfg.method.name().into(),
                seed: cfg.run.seed,
                param: "none".into(),
                value: 0.0,
                clean_acc: out.metric.map(|m| m.clean_acc),
                adv_acc: out.metric.map(|m| m.adv_acc),
                avg: out.metric.map(|m| m.avg),
                final_f: r.final_f.total,
                t_eps: r.t_eps,
                up_scalars: r.ledger.up_scalars,
                down_scalars: r.ledger.down_scalars,
                wall_ms: out.wall_ms,
            };
            emit(c, &[row])
        }
        Cmd::Sweep {
            param,
            values,
            seeds,
            config,
            deterministic,
        } => {
            let mut cfg = experiment(c, config.as_ref())?;
            cfg.deterministic_time |= *deterministic;
            let first = c.seed.unwrap_or(0);
            let seeds: Vec<u64> = (first..first + seeds).collect();
            emit(c, &sweep(*param, values, &cfg, &seeds)?)
        }
        Cmd::Containment {
            dims,
            trials,
            batch,
        } => {
            let [d1, d2, d3] = dims[..] else {
                return Err(DtzoError::Config("--dims takes three values".into()));
            };
            let seed = c.seed.unwrap_or(0);
            let d = Dims::new(d1, d2, d3, c.workers.unwrap_or(1))?;
            let problem = gen_quadratic(d, seed)?.problem()?;
            let stream = RngStream::new(seed, Role::Diagnostics, 0, Purpose::Trial);
            let mut text = format!("{}\n", ContainmentReport::CSV_HEADER);
            for layer in [Layer::Inner, Layer::Outer] {
                let r = test_containment(
                    &problem,
                    layer,
                    *trials,
                    *batch,
                    &stream,
                    ContainmentOptions::default(),
                )?;
                eprintln!(
                    "{layer}: {}/{} satisfied, pass={}",
                    r.n_satisfied,
                    r.n_cuts,
                    r.passes()
                );
                text.push_str(&r.csv_row());
                text.push('\n');
            }
            write_out(c, text.as_bytes())
        }
        Cmd::BenchComm { config } => {
            let cfg = experiment(c, config.as_ref())?;
            let r = run_experiment(&cfg)?.report;
            let l = &r.ledger;
            let text = format!(
                "quantity,ledger,expected\n\
                 iteration,{},{}\n\
                 cut_update,{},{}\n\
                 total,{},{}\n\
                 up_scalars,{},\n\
                 down_scalars,{},\n\
                 messages,{},\n",
                l.iteration.total(),
                r.expected.c1,
                l.cut_update.total(),
                r.expected.c2,
                l.total(),
                r.expected.total,
                l.up_scalars,
                l.down_scalars,
                l.messages
            );
            write_out(c, text.as_bytes())?;
            if l.total() != r.expected.total {
                return Err(DtzoError::Protocol(
                    "ledger does not match the closed form".into(),
                ));
            }
            Ok(())
        }
    }
}

/// Config file if given, otherwise defaults for the chosen instance; flags
/// override either.
fn experiment(c: &Common, path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_json(&std::fs::read_to_string(p)?)?,
        None if c.quadratic => {
            let n = c.workers.unwrap_or(1);
            ExperimentConfig::quadratic(Dims::new(1, 1, 1, n)?, RunConfig::new(0, 1000, 100, 10))
        }
        None => {
            let mut run = RunConfig::new(0, 500, 200, 5);
            run.trace_every = 0;
            ExperimentConfig::robust_ho(c.workers.unwrap_or(3), run)
        }
    };
    if let Some(s) = c.seed {
        cfg.run.seed = s;
    }
    if let Some(m) = c.baseline {
        cfg.method = m;
    }
    if let Some(n) = c.workers {
        match &mut cfg.problem {
            ProblemSpec::Quadratic { dims, .. } => dims.n_workers = n,
            ProblemSpec::RobustHo { workers, .. } => *workers = n,
        }
        cfg.run.dims = None;
    }
    Ok(cfg)
}

fn emit(c: &Common, rows: &[SweepRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    write_out(c, &buf)
}

fn write_out(c: &Common, bytes: &[u8]) -> Result<()> {
    match &c.out {
        Some(p) => File::create(p)?.write_all(bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}
