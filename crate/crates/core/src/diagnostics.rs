//! Verification utilities: cut containment, the smoothing identity, `T(eps)`
//! detection, pool tightening and a Lipschitz probe.

use serde::{Deserialize, Serialize};

use crate::cuts::{generate_cut_at, Layer, QuadraticCut};
use crate::error::{DtzoError, Result};
use crate::phi::ExactPhi;
use crate::problem::Problem;
use crate::rng::RngStream;
use crate::runtime::algorithm::GapPoint;
use crate::zo::{smoothed_value_mc, SmoothingConfig};

/// Acceptance constants of the containment harness.
pub const CONTAINMENT_TRIALS: usize = 100;
pub const CONTAINMENT_BATCH: usize = 256;
pub const CONTAINMENT_RATE: f64 = 0.95;
pub const CONTAINMENT_REL_EXCESS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub layer: Layer,
    pub n_cuts: usize,
    pub n_satisfied: usize,
    /// Largest `h(v*) - eps` over violating cuts (0 if none).
    pub worst_violation: f64,
    /// Mean of `(h(v*) - eps) / (1 + |phi(v_t)|)` over violating cuts.
    pub mean_rel_excess: f64,
    pub seed: u64,
    pub batch: usize,
}

impl ContainmentReport {
    pub fn rate(&self) -> f64 {
        if self.n_cuts == 0 {
            1.0
        } else {
            self.n_satisfied as f64 / self.n_cuts as f64
        }
    }

    pub fn passes(&self) -> bool {
        self.rate() >= CONTAINMENT_RATE && self.mean_rel_excess <= CONTAINMENT_REL_EXCESS
    }

    pub const CSV_HEADER: &'static str =
        "layer,n_cuts,n_satisfied,rate,worst_violation,mean_rel_excess,seed,batch";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.layer,
            self.n_cuts,
            self.n_satisfied,
            self.rate(),
            self.worst_violation,
            self.mean_rel_excess,
            self.seed,
            self.batch
        )
    }
}

/// Knobs of [`test_containment`] besides the trial count and batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainmentOptions {
    pub mu: f64,
    /// Cut constant; `None` uses the structure's residual Lipschitz bound.
    pub lipschitz: Option<f64>,
    /// Slack stored in every generated cut.
    pub eps: f64,
    /// Standard deviation of the random cut points.
    pub scale: f64,
}

impl Default for ContainmentOptions {
    fn default() -> Self {
        ContainmentOptions {
            mu: 1e-3,
            lipschitz: None,
            eps: 1e-3,
            scale: 1.0,
        }
    }
}

/// Generates `n_trials` cuts from the exact residual at random points of the
/// layer's cut space and checks each against the exact feasible point sharing
/// the cut point's upper-level coordinates. Trial `i` draws its point and
/// directions from substreams of `stream`.
pub fn test_containment(
    problem: &Problem,
    layer: Layer,
    n_trials: usize,
    batch: usize,
    stream: &RngStream,
    opts: ContainmentOptions,
) -> Result<ContainmentReport> {
    let structure = problem.structure()?.clone();
    let dims = problem.dims;
    let lip = opts.lipschitz.unwrap_or_else(|| {
        let (a, b) = structure.phi_lipschitz();
        match layer {
            Layer::Inner => a,
            Layer::Outer => b,
        }
    });
    let smoothing = SmoothingConfig {
        mu: opts.mu,
        batch,
        lipschitz: lip,
    };
    smoothing.validate()?;
    let est = ExactPhi {
        structure: structure.clone(),
        layer,
    };
    let mut report = ContainmentReport {
        layer,
        n_cuts: 0,
        n_satisfied: 0,
        worst_violation: 0.0,
        mean_rel_excess: 0.0,
        seed: stream.seed(),
        batch,
    };
    let mut rel_sum = 0.0;
    for i in 0..n_trials {
        let mut ps = stream.substream(2 * i as u64);
        let v: Vec<f64> = ps
            .gaussian(layer.dim(&dims))?
            .iter()
            .map(|x| x * opts.scale)
            .collect();
        let mut dirs = stream.substream(2 * i as u64 + 1);
        let g = generate_cut_at(&dims, layer, &v, &est, &smoothing, opts.eps, &mut dirs)?;
        let star = match layer {
            Layer::Inner => structure.inner_feasible_point(&v)?,
            Layer::Outer => structure.outer_feasible_point(&v)?,
        };
        let excess = g.cut.eval(&star)? - g.cut.eps;
        report.n_cuts += 1;
        if excess <= 0.0 {
            report.n_satisfied += 1;
        } else {
            report.worst_violation = report.worst_violation.max(excess);
            rel_sum += excess / (1.0 + g.phi_val.abs());
        }
    }
    let violating = report.n_cuts - report.n_satisfied;
    if violating > 0 {
        report.mean_rel_excess = rel_sum / violating as f64;
    }
    Ok(report)
}

/// Monte-Carlo `F_mu(x)` next to its closed form `f(x) + mu^2 tr(H) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingCheck {
    pub estimate: f64,
    pub exact: f64,
    pub stderr: f64,
}

impl SmoothingCheck {
    /// `|estimate - exact|` in standard errors.
    pub fn z_score(&self) -> f64 {
        if self.stderr == 0.0 {
            if self.estimate == self.exact {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.estimate - self.exact).abs() / self.stderr
        }
    }
}

/// For a quadratic `f` with Hessian trace `hessian_trace`.
pub fn test_smoothing_identity<F>(
    mut f: F,
    hessian_trace: f64,
    x: &[f64],
    mu: f64,
    samples: usize,
    stream: &mut RngStream,
) -> Result<SmoothingCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let exact = f(x)? + 0.5 * mu * mu * hessian_trace;
    let mc = smoothed_value_mc(f, x, mu, samples, stream)?;
    Ok(SmoothingCheck {
        estimate: mc.mean,
        exact,
        stderr: mc.stderr.unwrap_or(0.0),
    })
}

/// First index whose gap is at most `eps`.
pub fn detect_t_eps(trace: &[f64], eps: f64) -> Option<usize> {
    trace.iter().position(|g| *g <= eps)
}

/// As [`detect_t_eps`] on a run's gap trace, returning the iteration.
pub fn detect_t_eps_points(trace: &[GapPoint], eps: f64) -> Option<usize> {
    trace.iter().find(|g| g.gap <= eps).map(|g| g.t)
}

/// Probe points with i.i.d. `N(0, scale^2)` coordinates.
pub fn random_probes(
    dim: usize,
    count: usize,
    scale: f64,
    stream: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .map(|_| {
            Ok(stream
                .gaussian(dim)?
                .into_iter()
                .map(|x| x * scale)
                .collect())
        })
        .collect()
}

/// For `k = 0..=n` (cuts of `layer` in history order), how many probes satisfy
/// the first `k` cuts. Non-increasing in `k` by construction of the sets.
pub fn membership_trace(
    history: &[QuadraticCut],
    layer: Layer,
    probes: &[Vec<f64>],
) -> Result<Vec<usize>> {
    let cuts: Vec<&QuadraticCut> = history.iter().filter(|c| c.layer == layer).collect();
    let mut alive = vec![true; probes.len()];
    let mut out = Vec::with_capacity(cuts.len() + 1);
    out.push(probes.len());
    for c in cuts {
        for (a, p) in alive.iter_mut().zip(probes) {
            if *a && !c.satisfied(p)? {
                *a = false;
            }
        }
        out.push(alive.iter().filter(|a| **a).count());
    }
    Ok(out)
}

/// Largest second difference `|f(x+hu) - 2f(x) + f(x-hu)| / (h^2 |u|^2)` over
/// `samples` random points within `radius` of `x` and random directions. A
/// lower estimate of the smoothness constant; never applied automatically.
pub fn probe_lipschitz<F>(
    mut f: F,
    x: &[f64],
    radius: f64,
    h: f64,
    samples: usize,
    stream: &mut RngStream,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(DtzoError::Config("probe step must be > 0".into()));
    }
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let off = stream.gaussian(x.len())?;
        let u = stream.gaussian(x.len())?;
        let p: Vec<f64> = x.iter().zip(&off).map(|(a, b)| a + radius * b).collect();
        let plus: Vec<f64> = p.iter().zip(&u).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = p.iter().zip(&u).map(|(a, b)| a - h * b).collect();
        let uu: f64 = u.iter().map(|v| v * v).sum();
        let sd = (f(&plus)? - 2.0 * f(&p)? + f(&minus)?).abs() / (h * h * uu);
        best = best.max(sd);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::quadratic::gen_quadratic;
    use crate::problem::Dims;
    use crate::rng::{Purpose, Role};

    #[test]
    fn t_eps_examples() {
        assert_eq!(detect_t_eps(&[4.0, 3.0, 0.5], 1.0), Some(2));
        assert_eq!(detect_t_eps(&[4.0, 3.0], 1.0), None);
        assert_eq!(detect_t_eps(&[1.0, 0.0, 2.0], 0.0), Some(1));
    }

    #[test]
    fn smoothing_identity_linear_and_square() {
        let mut s = RngStream::new(0, Role::Diagnostics, 0, Purpose::Trial);
        let lin = test_smoothing_identity(
            |x: &[f64]| Ok(2.0 * x[0] - x[1]),
            0.0,
            &[1.0, 1.0],
            0.1,
            10,
            &mut s,
        )
        .unwrap();
        assert_eq!(lin.exact, 1.0);
        let sq = test_smoothing_identity(
            |x: &[f64]| Ok(x.iter().map(|v| v * v).sum()),
            6.0,
            &[0.0; 3],
            0.1,
            10_000,
            &mut s,
        )
        .unwrap();
        assert!((sq.exact - 0.03).abs() < 1e-15);
        assert!(sq.z_score() < 4.0);
    }

    #[test]
    fn empty_containment_and_slack_monotonicity() {
        let p = gen_quadratic(Dims::new(1, 1, 1, 1).unwrap(), 3)
            .unwrap()
            .problem()
            .unwrap();
        let s = RngStream::new(4, Role::Diagnostics, 0, Purpose::Trial);
        let r =
            test_containment(&p, Layer::Inner, 0, 8, &s, ContainmentOptions::default()).unwrap();
        assert_eq!((r.n_cuts, r.n_satisfied), (0, 0));
        for layer in [Layer::Inner, Layer::Outer] {
            let tight =
                test_containment(&p, layer, 20, 1, &s, ContainmentOptions::default()).unwrap();
            let loose = test_containment(
                &p,
                layer,
                20,
                1,
                &s,
                ContainmentOptions {
                    eps: 1.001,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(loose.n_satisfied >= tight.n_satisfied);
        }
    }

    #[test]
    fn containment_needs_structure() {
        use crate::problem::{FnObjective, Objective, SystemState};
        use std::sync::Arc;
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let z: Arc<dyn Objective> = Arc::new(FnObjective(|_: &[f64], _: &[f64], _: &[f64]| 0.0));
        let p = Problem::new(
            d,
            vec![z.clone()],
            vec![z.clone()],
            vec![z],
            SystemState::zeros(&d),
        )
        .unwrap();
        let s = RngStream::new(0, Role::Diagnostics, 0, Purpose::Trial);
        assert!(matches!(
            test_containment(&p, Layer::Inner, 1, 1, &s, ContainmentOptions::default()),
            Err(DtzoError::Mode(_))
        ));
    }

    #[test]
    fn lipschitz_probe_on_quadratic() {
        let mut s = RngStream::new(0, Role::Diagnostics, 0, Purpose::Trial);
        let l = probe_lipschitz(
            |x: &[f64]| Ok(1.5 * x[0] * x[0] + 0.5 * x[1] * x[1]),
            &[0.0, 0.0],
            1.0,
            1e-3,
            200,
            &mut s,
        )
        .unwrap();
        assert!(l <= 3.0 + 1e-6 && l > 1.0);
    }
}
