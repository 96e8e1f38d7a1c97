//! Single-level and bilevel zeroth-order baselines on the robust
//! hyperparameter instance, run through the same distributed machinery and
//! ledger as the trilevel method.

use serde::{Deserialize, Serialize};

use crate::error::{DtzoError, Result};
use crate::problem::SystemState;
use crate::runtime::{run_algorithm, RunConfig, RunReport};

use super::robust_ho::RobustHOInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Consensus descent on the clean training loss.
    SingleLevelZo,
    /// Hyperparameter over clean regularized training.
    BilevelZo,
}

/// Trilevel method or one of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Dtzo,
    Single,
    Bilevel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dtzo => "dtzo",
            Method::Single => "single",
            Method::Bilevel => "bilevel",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Method::Dtzo => None,
            Method::Single => Some(BaselineKind::SingleLevelZo),
            Method::Bilevel => Some(BaselineKind::BilevelZo),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = DtzoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "dtzo" => Ok(Method::Dtzo),
            "single" => Ok(Method::Single),
            "bilevel" => Ok(Method::Bilevel),
            _ => Err(DtzoError::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// Runs a baseline. The single-level run has no regularizer and no cuts.
pub fn run_baseline(
    kind: BaselineKind,
    instance: &RobustHOInstance,
    cfg: &RunConfig,
) -> Result<RunReport> {
    run_baseline_with(kind, instance, cfg, None)
}

/// Like [`run_baseline`]; `fixed_regularizer` pins the regularization weight.
/// With the weight pinned the bilevel upper level has nothing left to choose,
/// so the run is the single-level run with that weight.
pub fn run_baseline_with(
    kind: BaselineKind,
    instance: &RobustHOInstance,
    cfg: &RunConfig,
    fixed_regularizer: Option<f64>,
) -> Result<RunReport> {
    let problem = match (kind, fixed_regularizer) {
        (BaselineKind::SingleLevelZo, r) | (BaselineKind::BilevelZo, r @ Some(_)) => {
            let mut c = cfg.clone();
            c.t1 = 0;
            return run_algorithm(&instance.single_level_problem(r.unwrap_or(0.0))?, &c);
        }
        (BaselineKind::BilevelZo, None) => instance.bilevel_problem()?,
    };
    run_algorithm(&problem, cfg)
}

/// The model each method trains, averaged over workers.
pub fn trained_model(method: Method, state: &SystemState) -> Vec<f64> {
    let blocks = match method {
        Method::Single => &state.x1,
        Method::Dtzo | Method::Bilevel => &state.x2,
    };
    let n = blocks.len() as f64;
    (0..blocks[0].len())
        .map(|k| blocks.iter().map(|b| b[k]).sum::<f64>() / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::robust_ho::gen_robust_ho;

    fn cfg() -> RunConfig {
        let mut c = RunConfig::new(5, 30, 10, 5);
        c.smoothing.batch = 4;
        c
    }

    #[test]
    fn single_level_ignores_perturbations() {
        let inst = gen_robust_ho(2, 0).unwrap();
        let p = inst.single_level_problem(0.0).unwrap();
        let w = vec![0.3; inst.n_params()];
        for f in p.f1.iter().chain(&p.f2).chain(&p.f3) {
            assert_eq!(
                f.eval(&w, &[0.0], &[0.0]).unwrap(),
                f.eval(&w, &[0.0], &[7.0]).unwrap()
            );
        }
    }

    #[test]
    fn fixed_regularizer_collapses_to_single_level() {
        let inst = gen_robust_ho(2, 1).unwrap();
        let a = run_baseline(BaselineKind::SingleLevelZo, &inst, &cfg()).unwrap();
        let b = run_baseline_with(BaselineKind::BilevelZo, &inst, &cfg(), Some(0.0)).unwrap();
        assert_eq!(a.f_trace, b.f_trace);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn ledgers_share_format() {
        let inst = gen_robust_ho(2, 2).unwrap();
        let b = run_baseline(BaselineKind::BilevelZo, &inst, &cfg()).unwrap();
        assert_eq!(b.ledger.total(), b.expected.total);
        assert!(b.ledger.cut_update.total() > 0);
        let s = run_baseline(BaselineKind::SingleLevelZo, &inst, &cfg()).unwrap();
        assert_eq!(s.ledger.total(), s.expected.total);
        assert_eq!(s.ledger.cut_update.total(), 0);
    }

    #[test]
    fn method_names() {
        assert_eq!("none".parse::<Method>().unwrap(), Method::Dtzo);
        assert_eq!(
            "bilevel".parse::<Method>().unwrap().baseline(),
            Some(BaselineKind::BilevelZo)
        );
        assert!("x".parse::<Method>().is_err());
    }
}
