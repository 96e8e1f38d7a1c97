//! Parameter sweeps over seeds, one CSV row per run.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DtzoError, Result};

use super::config::{run_experiment, ExperimentConfig};

/// Frozen CSV header.
pub const CSV_COLUMNS: [&str; 12] = [
    "method",
    "seed",
    "param",
    "value",
    "clean_acc",
    "adv_acc",
    "avg",
    "final_F",
    "T_eps",
    "up_scalars",
    "down_scalars",
    "wall_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    T1,
    Mu,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::T1 => "t1",
            SweepParam::Mu => "mu",
        }
    }

    /// Writes `value` into the config. `mu` sets both the worker smoothing
    /// and the smoothing of the `phi` rounds.
    pub fn apply(self, value: f64, cfg: &mut ExperimentConfig) -> Result<()> {
        match self {
            SweepParam::T1 => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(DtzoError::Config(format!(
                        "t1 must be a non-negative integer, got {value}"
                    )));
                }
                cfg.run.t1 = value as usize;
            }
            SweepParam::Mu => {
                cfg.run.smoothing.mu = value;
                cfg.run.phi.mu = value;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = DtzoError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(SweepParam::T1),
            "mu" => Ok(SweepParam::Mu),
            _ => Err(DtzoError::Config(format!("unknown sweep parameter {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub seed: u64,
    pub param: String,
    pub value: f64,
    pub clean_acc: Option<f64>,
    pub adv_acc: Option<f64>,
    pub avg: Option<f64>,
    #[serde(rename = "final_F")]
    pub final_f: f64,
    #[serde(rename = "T_eps")]
    pub t_eps: Option<usize>,
    pub up_scalars: u64,
    pub down_scalars: u64,
    pub wall_ms: u64,
}

/// Runs every `(value, seed)` pair in parallel. Rows come back ordered by
/// value, then seed. Fails if any run's ledger disagrees with the
/// closed-form communication count.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(DtzoError::Config(
            "sweep needs at least one value and one seed".into(),
        ));
    }
    let jobs: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    jobs.par_iter()
        .map(|&(value, seed)| {
            let mut cfg = base.clone();
            cfg.run.seed = seed;
            param.apply(value, &mut cfg)?;
            let out = run_experiment(&cfg)?;
            let r = &out.report;
            if r.ledger.total() != r.expected.total {
                return Err(DtzoError::Protocol(format!(
                    "ledger {} != expected {} for {}={value}, seed {seed}",
                    r.ledger.total(),
                    r.expected.total,
                    param.name()
                )));
            }
            Ok(SweepRow {
                method: cfg.method.name().to_string(),
                seed,
                param: param.name().to_string(),
                value,
                clean_acc: out.metric.map(|m| m.clean_acc),
                adv_acc: out.metric.map(|m| m.adv_acc),
                avg: out.metric.map(|m| m.avg),
                final_f: r.final_f.total,
                t_eps: r.t_eps,
                up_scalars: r.ledger.up_scalars,
                down_scalars: r.ledger.down_scalars,
                wall_ms: out.wall_ms,
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Dims;
    use crate::runtime::RunConfig;

    fn base() -> ExperimentConfig {
        let mut c = ExperimentConfig::quadratic(
            Dims::new(1, 1, 1, 2).unwrap(),
            RunConfig::new(0, 12, 4, 2),
        );
        c.deterministic_time = true;
        c
    }

    #[test]
    fn one_value_one_seed_is_one_row() {
        let rows = sweep(SweepParam::T1, &[2.0], &base(), &[7]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].seed, 7);
        assert_eq!(rows[0].wall_ms, 0);
    }

    #[test]
    fn csv_header_is_frozen() {
        let rows = sweep(SweepParam::Mu, &[1e-2, 1e-3], &base(), &[0, 1]).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.count(), 4);
        // quadratic rows leave the accuracy columns empty
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("dtzo,0,mu,0.01,,,,"));
    }

    #[test]
    fn rejects_fractional_t1() {
        assert!(sweep(SweepParam::T1, &[1.5], &base(), &[0]).is_err());
        assert!(sweep(SweepParam::T1, &[], &base(), &[0]).is_err());
    }
}
