//! Gaussian-smoothing estimators.
//!
//! `F_mu(x) = E_u[F(x + mu u)]` with `u ~ N(0, I)`. The two-point estimator
//! `(F(x + mu u) - F(x)) / mu * u` is unbiased for `grad F_mu(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, DtzoError, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub mu: f64,
    /// Perturbation batch; 1 means the plain two-point rule.
    pub batch: usize,
    /// Smoothness constant shared by cuts and step sizes.
    pub lipschitz: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            mu: 1e-3,
            batch: 64,
            lipschitz: 1.0,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(DtzoError::Config(format!(
                "mu must be > 0, got {}",
                self.mu
            )));
        }
        if self.batch == 0 {
            return Err(DtzoError::Config("batch must be >= 1".into()));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(DtzoError::Config(format!(
                "lipschitz constant must be > 0, got {}",
                self.lipschitz
            )));
        }
        Ok(())
    }
}

/// A gradient estimate with an optional per-coordinate standard error of the
/// batch mean (present when the batch has at least two samples).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    /// `f(x)`, shared by all samples.
    pub base: f64,
}

/// Monte-Carlo mean with its standard error (`None` when `M = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: Option<f64>,
    pub samples: usize,
}

fn finite(v: f64, point: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DtzoError::Evaluation {
            value: v,
            point: point.to_vec(),
        })
    }
}

fn shifted(x: &[f64], mu: f64, u: &[f64]) -> Vec<f64> {
    x.iter().zip(u).map(|(a, b)| a + mu * b).collect()
}

/// `((f(x + mu u) - fx) / mu) u` given an already computed `fx = f(x)`.
/// One evaluation.
pub fn two_point_with_base<F>(f: &mut F, x: &[f64], fx: f64, mu: f64, u: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_len("perturbation direction", x.len(), u.len())?;
    let xp = shifted(x, mu, u);
    let fp = finite(f(&xp)?, &xp)?;
    let s = (fp - fx) / mu;
    Ok(u.iter().map(|ui| s * ui).collect())
}

/// Two-point estimate along `u`: exactly two evaluations of `f`.
pub fn two_point_estimate<F>(
    mut f: F,
    x: &[f64],
    cfg: &SmoothingConfig,
    u: &[f64],
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_len("perturbation direction", x.len(), u.len())?;
    let fx = finite(f(x)?, x)?;
    two_point_with_base(&mut f, x, fx, cfg.mu, u)
}

/// Mean of `cfg.batch` two-point estimates sharing one base evaluation:
/// `batch + 1` evaluations. Directions are drawn from `stream`, one counter
/// step each.
pub fn multi_point_estimate<F>(
    mut f: F,
    x: &[f64],
    cfg: &SmoothingConfig,
    stream: &mut RngStream,
) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let fx = finite(f(x)?, x)?;
    multi_point_with_base(&mut f, x, fx, cfg.mu, cfg.batch, stream)
}

/// As [`multi_point_estimate`] with the base value supplied by the caller.
pub fn multi_point_with_base<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    mu: f64,
    batch: usize,
    stream: &mut RngStream,
) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if batch == 0 {
        return Err(DtzoError::Config("batch must be >= 1".into()));
    }
    let d = x.len();
    let mut sum = vec![0.0; d];
    let mut sumsq = vec![0.0; d];
    for _ in 0..batch {
        let u = stream.gaussian(d)?;
        let g = two_point_with_base(f, x, fx, mu, &u)?;
        for k in 0..d {
            sum[k] += g[k];
            sumsq[k] += g[k] * g[k];
        }
    }
    let b = batch as f64;
    let grad: Vec<f64> = sum.iter().map(|s| s / b).collect();
    let stderr = (batch > 1).then(|| {
        (0..d)
            .map(|k| {
                let var = (sumsq[k] - b * grad[k] * grad[k]).max(0.0) / (b - 1.0);
                (var / b).sqrt()
            })
            .collect()
    });
    Ok(GradientEstimate {
        grad,
        stderr,
        base: fx,
    })
}

/// Monte-Carlo estimate of `F_mu(x)` from `samples` draws.
pub fn smoothed_value_mc<F>(
    mut f: F,
    x: &[f64],
    mu: f64,
    samples: usize,
    stream: &mut RngStream,
) -> Result<McEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if samples == 0 {
        return Err(DtzoError::Config(
            "Monte-Carlo sample count must be >= 1".into(),
        ));
    }
    // Welford keeps the variance accurate when the mean is large.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..samples {
        let u = stream.gaussian(x.len())?;
        let xp = shifted(x, mu, &u);
        let v = finite(f(&xp)?, &xp)?;
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let stderr = (samples > 1).then(|| (m2 / (samples - 1) as f64 / samples as f64).sqrt());
    Ok(McEstimate {
        mean,
        stderr,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Role};
    use std::cell::Cell;

    fn cfg(mu: f64, batch: usize) -> SmoothingConfig {
        SmoothingConfig {
            mu,
            batch,
            lipschitz: 1.0,
        }
    }

    fn stream(i: u64) -> RngStream {
        RngStream::new(99, Role::Diagnostics, i, Purpose::Trial)
    }

    #[test]
    fn constant_gives_zero() {
        let g = two_point_estimate(|_| Ok(3.0), &[1.0, 2.0], &cfg(0.1, 1), &[0.3, -1.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let m =
            multi_point_estimate(|_| Ok(3.0), &[1.0, 2.0], &cfg(0.1, 7), &mut stream(0)).unwrap();
        assert_eq!(m.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_example() {
        let f = |x: &[f64]| Ok(x[0] + 2.0 * x[1]);
        let g = two_point_estimate(f, &[0.0, 0.0], &cfg(0.5, 1), &[1.0, 0.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15 && g[1] == 0.0);
    }

    #[test]
    fn square_example() {
        let g = two_point_estimate(|x| Ok(x[0] * x[0]), &[1.0], &cfg(0.1, 1), &[1.0]).unwrap();
        assert!((g[0] - 2.1).abs() < 1e-12, "{}", g[0]);
    }

    #[test]
    fn exact_eval_counts() {
        let n = Cell::new(0);
        let f = |x: &[f64]| {
            n.set(n.get() + 1);
            Ok(x.iter().sum::<f64>())
        };
        two_point_estimate(f, &[0.0; 3], &cfg(0.1, 1), &[1.0; 3]).unwrap();
        assert_eq!(n.get(), 2);
        n.set(0);
        let f = |x: &[f64]| {
            n.set(n.get() + 1);
            Ok(x.iter().sum::<f64>())
        };
        multi_point_estimate(f, &[0.0; 3], &cfg(0.1, 9), &mut stream(1)).unwrap();
        assert_eq!(n.get(), 10);
    }

    #[test]
    fn batch_of_one_matches_two_point() {
        let f = |x: &[f64]| Ok(x[0].sin() + x[1] * x[1]);
        let x = [0.3, -0.7];
        let mut s = stream(2);
        let mut probe = s.clone();
        let u = probe.gaussian(2).unwrap();
        let m = multi_point_estimate(f, &x, &cfg(0.01, 1), &mut s).unwrap();
        let t = two_point_estimate(f, &x, &cfg(0.01, 1), &u).unwrap();
        assert_eq!(m.grad, t);
        assert!(m.stderr.is_none());
    }

    #[test]
    fn linear_batch_is_mean_of_closed_forms() {
        let w = [0.5, -1.5, 2.0];
        let f = |x: &[f64]| Ok(w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        let mut s = stream(3);
        let mut probe = s.clone();
        let b = 5;
        let m = multi_point_estimate(f, &[0.1, 0.2, 0.3], &cfg(1e-3, b), &mut s).unwrap();
        let mut expect = [0.0; 3];
        for _ in 0..b {
            let u = probe.gaussian(3).unwrap();
            let wu: f64 = w.iter().zip(&u).map(|(a, c)| a * c).sum();
            for k in 0..3 {
                expect[k] += wu * u[k] / b as f64;
            }
        }
        for k in 0..3 {
            assert!(
                (m.grad[k] - expect[k]).abs() < 1e-9,
                "{k}: {} vs {}",
                m.grad[k],
                expect[k]
            );
        }
    }

    #[test]
    fn non_finite_carries_point() {
        let f = |x: &[f64]| Ok(if x[0] > 0.5 { f64::INFINITY } else { 0.0 });
        match two_point_estimate(f, &[0.0], &cfg(1.0, 1), &[1.0]) {
            Err(DtzoError::Evaluation { point, .. }) => assert_eq!(point, vec![1.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn smoothing_linear_and_square() {
        let f = |x: &[f64]| Ok(2.0 * x[0] - x[1] + 1.0);
        let e = smoothed_value_mc(f, &[1.0, 1.0], 0.3, 4000, &mut stream(4)).unwrap();
        assert!((e.mean - 2.0).abs() <= 3.0 * e.stderr.unwrap());

        let e =
            smoothed_value_mc(|x| Ok(x[0] * x[0]), &[0.0], 0.2, 20_000, &mut stream(5)).unwrap();
        assert!((e.mean - 0.04).abs() <= 3.0 * e.stderr.unwrap(), "{e:?}");
    }

    #[test]
    fn single_sample_has_no_stderr() {
        let mut s = stream(6);
        let mut probe = s.clone();
        let e = smoothed_value_mc(|x| Ok(x[0]), &[0.0], 0.5, 1, &mut s).unwrap();
        assert!(e.stderr.is_none());
        assert_eq!(e.mean, 0.5 * probe.gaussian(1).unwrap()[0]);
    }

    #[test]
    fn variance_scales_inverse_batch() {
        // Fit the slope of log Var[g_0] against log b for a linear function.
        let w = [1.0, -2.0, 0.5, 3.0];
        let f = |x: &[f64]| Ok(w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        let batches = [1usize, 2, 4, 8, 16, 32];
        let reps = 2000;
        let mut pts = Vec::new();
        for (i, &b) in batches.iter().enumerate() {
            let mut s = stream(100 + i as u64);
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..reps {
                let g = multi_point_estimate(f, &[0.0; 4], &cfg(1e-4, b), &mut s).unwrap();
                sum += g.grad[0];
                sq += g.grad[0] * g.grad[0];
            }
            let m = sum / reps as f64;
            let var = sq / reps as f64 - m * m;
            pts.push(((b as f64).ln(), var.ln()));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0).abs() < 0.15, "slope {slope}");
    }
}
