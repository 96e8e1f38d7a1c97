//! Run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{DtzoError, Result};
use crate::penalty::{default_step_sizes, PenaltyConfig, StepSizes};
use crate::phi::PhiConfig;
use crate::problem::Dims;
use crate::runtime::ledger::{expected_comm_raw, ExpectedComm};
use crate::runtime::transport::TransportKind;
use crate::zo::SmoothingConfig;

/// Step sizes: the convergence-theory schedule, or explicit values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    #[default]
    Auto,
    Fixed(StepSizes),
}

/// First-order cuts for a level whose residual gradient is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoCuts {
    pub rho: f64,
    /// Radii `[a1, a2, a3]` bounding the three block norms.
    pub radii: [f64; 3],
    pub inner: bool,
    pub outer: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GreyBox {
    /// Workers take exact gradient steps on `f1` instead of ZO steps.
    #[serde(default)]
    pub level1_gradients: bool,
    #[serde(default)]
    pub rho_cuts: Option<RhoCuts>,
}

/// Where cut generation gets its residual values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSource {
    /// Distributed `K`-round procedure, exchanged over the transport.
    #[default]
    KStep,
    /// Closed-form residual of a structured instance (no exchange).
    Exact,
}

/// How the stationarity gap is tracked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// White-box every iteration when `f1` has gradients; otherwise the
    /// zeroth-order estimate every 10 iterations, and only if a stop
    /// threshold is set.
    #[default]
    Auto,
    WhiteBox,
    ZerothOrder {
        every: usize,
        batch: usize,
    },
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CutSource {
    KStep,
    Exact,
    Rho,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Optional consistency check against the problem's dimensions.
    #[serde(default)]
    pub dims: Option<Dims>,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub steps: StepRule,
    /// Cut-refresh horizon `T1`.
    pub t1: usize,
    /// Refresh cadence.
    pub cadence: usize,
    pub t_max: usize,
    #[serde(default)]
    pub eps_stop: Option<f64>,
    #[serde(default)]
    pub phi: PhiConfig,
    #[serde(default)]
    pub phi_source: PhiSource,
    /// Directions per block in the worker estimates.
    #[serde(default = "one")]
    pub worker_batch: usize,
    #[serde(default = "yes")]
    pub prune: bool,
    #[serde(default)]
    pub greybox: GreyBox,
    #[serde(default)]
    pub gap: GapMode,
    /// Record `F` every this many iterations; 0 disables the trace.
    #[serde(default = "one")]
    pub trace_every: usize,
    #[serde(default)]
    pub transport: TransportKind,
}

impl RunConfig {
    /// Defaults with the given horizon, refresh schedule and seed.
    pub fn new(seed: u64, t_max: usize, t1: usize, cadence: usize) -> Self {
        RunConfig {
            seed,
            dims: None,
            smoothing: SmoothingConfig::default(),
            penalty: PenaltyConfig::default(),
            steps: StepRule::Auto,
            t1,
            cadence,
            t_max,
            eps_stop: None,
            phi: PhiConfig::default(),
            phi_source: PhiSource::KStep,
            worker_batch: 1,
            prune: true,
            greybox: GreyBox::default(),
            gap: GapMode::Auto,
            trace_every: 1,
            transport: TransportKind::InProcess,
        }
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        dims.validate()?;
        if let Some(d) = self.dims {
            if d != *dims {
                return Err(DtzoError::Config(format!(
                    "config dims {d:?} do not match the problem's {dims:?}"
                )));
            }
        }
        if self.cadence == 0 {
            return Err(DtzoError::Config("cadence must be >= 1".into()));
        }
        if self.t_max == 0 {
            return Err(DtzoError::Config("t_max must be >= 1".into()));
        }
        if self.worker_batch == 0 {
            return Err(DtzoError::Config("worker_batch must be >= 1".into()));
        }
        if let Some(e) = self.eps_stop {
            if !(e >= 0.0) {
                return Err(DtzoError::Config(format!("eps_stop must be >= 0, got {e}")));
            }
        }
        if let GapMode::ZerothOrder { every, batch } = self.gap {
            if every == 0 || batch == 0 {
                return Err(DtzoError::Config("gap every/batch must be >= 1".into()));
            }
        }
        if let Some(r) = self.greybox.rho_cuts {
            if !(r.rho > 0.0) || r.radii.iter().any(|a| !(*a >= 0.0)) {
                return Err(DtzoError::Config("rho must be > 0 and radii >= 0".into()));
            }
        }
        self.smoothing.validate()?;
        self.penalty.validate(dims.n_workers)?;
        self.phi.validate(dims.n_workers)?;
        self.step_sizes(dims)?;
        Ok(())
    }

    pub fn step_sizes(&self, dims: &Dims) -> Result<StepSizes> {
        match self.steps {
            StepRule::Auto => {
                default_step_sizes(self.smoothing.lipschitz, dims, self.t_max, self.t1)
            }
            StepRule::Fixed(s) => {
                s.validate()?;
                Ok(s)
            }
        }
    }

    /// Lower-level rounds per refresh event.
    pub fn phi_rounds(&self) -> usize {
        self.phi.resolve_rounds(self.cadence)
    }

    pub(crate) fn cut_source(&self, inner: bool) -> CutSource {
        match self.greybox.rho_cuts {
            Some(r) if (inner && r.inner) || (!inner && r.outer) => CutSource::Rho,
            _ => match self.phi_source {
                PhiSource::KStep => CutSource::KStep,
                PhiSource::Exact => CutSource::Exact,
            },
        }
    }
}

/// Predicted communication for a run that executed `t_reached` iterations
/// under `cfg`. Only layers whose residual is exchanged contribute to `C2`.
pub fn expected_comm(cfg: &RunConfig, dims: &Dims, t_reached: usize) -> ExpectedComm {
    expected_comm_raw(
        dims,
        t_reached,
        cfg.t1,
        cfg.cadence,
        cfg.phi_rounds(),
        cfg.cut_source(true) == CutSource::KStep,
        cfg.cut_source(false) == CutSource::KStep,
    )
}
