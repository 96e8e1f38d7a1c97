//! JSON experiment description and a single-run driver.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DtzoError, Result};
use crate::problem::Dims;
use crate::runtime::{run_algorithm, RunConfig, RunReport};

use super::baselines::{run_baseline, trained_model, Method};
use super::quadratic::{gen_quadratic_with, QuadraticOptions};
use super::robust_ho::{
    evaluate_metric, gen_robust_ho_with, Metric, RobustHOInstance, RobustHoConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic {
        dims: Dims,
        #[serde(default)]
        consistent: bool,
        #[serde(default)]
        init_scale: f64,
    },
    RobustHo {
        workers: usize,
        #[serde(default)]
        data: RobustHoConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub method: Method,
    /// Algorithm settings; `run.seed` also seeds the instance.
    pub run: RunConfig,
    /// Report `wall_ms = 0` so repeated runs give identical rows.
    #[serde(default)]
    pub deterministic_time: bool,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn robust_ho(workers: usize, run: RunConfig) -> Self {
        ExperimentConfig {
            problem: ProblemSpec::RobustHo {
                workers,
                data: RobustHoConfig::default(),
            },
            method: Method::Dtzo,
            run,
            deterministic_time: false,
        }
    }

    pub fn quadratic(dims: Dims, run: RunConfig) -> Self {
        ExperimentConfig {
            problem: ProblemSpec::Quadratic {
                dims,
                consistent: false,
                init_scale: 0.0,
            },
            method: Method::Dtzo,
            run,
            deterministic_time: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    /// Classification metrics; `None` for the quadratic instance.
    pub metric: Option<Metric>,
    pub wall_ms: u64,
}

/// Builds the instance from `run.seed` and runs the configured method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.run.seed;
    let start = Instant::now();
    let (report, metric) = match &cfg.problem {
        ProblemSpec::Quadratic {
            dims,
            consistent,
            init_scale,
        } => {
            if cfg.method != Method::Dtzo {
                return Err(DtzoError::Config(format!(
                    "method {} needs the robust hyperparameter instance",
                    cfg.method.name()
                )));
            }
            let inst = gen_quadratic_with(
                *dims,
                seed,
                QuadraticOptions {
                    consistent: *consistent,
                    init_scale: *init_scale,
                },
            )?;
            (run_algorithm(&inst.problem()?, &cfg.run)?, None)
        }
        ProblemSpec::RobustHo { workers, data } => {
            let inst = gen_robust_ho_with(*workers, seed, *data)?;
            let report = run_method(cfg.method, &inst, &cfg.run)?;
            let metric = metric_for(cfg.method, &inst, &report)?;
            (report, Some(metric))
        }
    };
    let wall_ms = if cfg.deterministic_time {
        0
    } else {
        start.elapsed().as_millis() as u64
    };
    Ok(Outcome {
        report,
        metric,
        wall_ms,
    })
}

pub fn run_method(method: Method, inst: &RobustHOInstance, run: &RunConfig) -> Result<RunReport> {
    match method.baseline() {
        None => run_algorithm(&inst.problem()?, run),
        Some(kind) => run_baseline(kind, inst, run),
    }
}

/// Evaluates the worker-averaged model on every worker's test split.
pub fn metric_for(method: Method, inst: &RobustHOInstance, report: &RunReport) -> Result<Metric> {
    let w = trained_model(method, &report.final_state);
    evaluate_metric(&vec![w; inst.workers.len()], inst)
}
