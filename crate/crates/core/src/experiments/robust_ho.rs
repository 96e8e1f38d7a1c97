//! Robust hyperparameter optimization on synthetic two-class blobs.
//!
//! Level 1 picks a regularization weight `x1` (penalty `x1^2 |w|^2`) to
//! minimize validation loss; level 2 trains the model `x2` on perturbed
//! training data; level 3 picks a universal perturbation `x3` (clipped to the
//! attack radius) that maximizes the training loss, written as minimizing
//! its negation.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DtzoError, Result};
use crate::problem::{BlockGradient, Dims, Objective, Problem, SystemState};
use crate::rng::{Purpose, RngStream, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Not differentiable at 0.
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp {
        hidden: usize,
        activation: Activation,
    },
}

impl ModelKind {
    pub fn n_params(&self, features: usize) -> usize {
        match *self {
            ModelKind::Logistic => features + 1,
            ModelKind::Mlp { hidden, .. } => hidden * features + 2 * hidden + 1,
        }
    }

    /// `true` for coordinates that the regularizer penalizes (non-bias).
    fn is_weight(&self, features: usize, k: usize) -> bool {
        match *self {
            ModelKind::Logistic => k < features,
            ModelKind::Mlp { hidden, .. } => {
                let w1 = hidden * features;
                k < w1 || (k >= w1 + hidden && k < w1 + 2 * hidden)
            }
        }
    }

    pub fn weight_sq_norm(&self, features: usize, p: &[f64]) -> f64 {
        p.iter()
            .enumerate()
            .filter(|(k, _)| self.is_weight(features, *k))
            .map(|(_, v)| v * v)
            .sum()
    }

    pub fn logit(&self, p: &[f64], x: &[f64]) -> f64 {
        match *self {
            ModelKind::Logistic => {
                let f = x.len();
                p[..f].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[f]
            }
            ModelKind::Mlp { hidden, activation } => {
                let f = x.len();
                let (w1, rest) = p.split_at(hidden * f);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut z = b2[0];
                for h in 0..hidden {
                    let a = w1[h * f..(h + 1) * f]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + b1[h];
                    z += w2[h] * act(activation, a);
                }
                z
            }
        }
    }

    /// Per-sample loss with optional parameter- and input-gradients added
    /// into `gp` / `gx` (scaled by `scale`).
    fn loss_grad(
        &self,
        p: &[f64],
        x: &[f64],
        y: f64,
        scale: f64,
        gp: Option<&mut [f64]>,
        gx: Option<&mut [f64]>,
    ) -> f64 {
        let z = self.logit(p, x);
        let loss = bce(z, y);
        if gp.is_none() && gx.is_none() {
            return loss;
        }
        let dz = scale * (sigmoid(z) - y);
        let f = x.len();
        match *self {
            ModelKind::Logistic => {
                if let Some(gp) = gp {
                    for k in 0..f {
                        gp[k] += dz * x[k];
                    }
                    gp[f] += dz;
                }
                if let Some(gx) = gx {
                    for k in 0..f {
                        gx[k] += dz * p[k];
                    }
                }
            }
            ModelKind::Mlp { hidden, activation } => {
                let w1 = &p[..hidden * f];
                let b1 = &p[hidden * f..hidden * f + hidden];
                let w2 = &p[hidden * f + hidden..hidden * f + 2 * hidden];
                let mut gp = gp;
                let mut gx = gx;
                for h in 0..hidden {
                    let a = w1[h * f..(h + 1) * f]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + b1[h];
                    let da = dz * w2[h] * act_prime(activation, a);
                    if let Some(gp) = gp.as_deref_mut() {
                        for k in 0..f {
                            gp[h * f + k] += da * x[k];
                        }
                        gp[hidden * f + h] += da;
                        gp[hidden * f + hidden + h] += dz * act(activation, a);
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        for k in 0..f {
                            gx[k] += da * w1[h * f + k];
                        }
                    }
                }
                if let Some(gp) = gp {
                    gp[hidden * f + 2 * hidden] += dz;
                }
            }
        }
        loss
    }
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
    }
}

fn act_prime(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => {
            if v > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - v.tanh().powi(2),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, computed stably.
fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// Row-major features with labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    /// Mean loss, with `shift` (if any) added to every row.
    pub fn mean_loss(&self, model: &ModelKind, p: &[f64], shift: Option<&[f64]>) -> f64 {
        let mut buf = vec![0.0; self.features];
        let mut sum = 0.0;
        for i in 0..self.len() {
            let x = match shift {
                Some(s) => {
                    for (b, (a, d)) in buf.iter_mut().zip(self.row(i).iter().zip(s)) {
                        *b = a + d;
                    }
                    &buf[..]
                }
                None => self.row(i),
            };
            sum += model.loss_grad(p, x, self.y[i], 0.0, None, None);
        }
        sum / self.len() as f64
    }

    /// Mean loss and its gradients in the parameters and in `shift`.
    pub fn mean_loss_grad(
        &self,
        model: &ModelKind,
        p: &[f64],
        shift: Option<&[f64]>,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.len() as f64;
        let mut gp = vec![0.0; p.len()];
        let mut gx = vec![0.0; self.features];
        let mut buf = vec![0.0; self.features];
        let mut sum = 0.0;
        for i in 0..self.len() {
            buf.copy_from_slice(self.row(i));
            if let Some(s) = shift {
                buf.iter_mut().zip(s).for_each(|(b, d)| *b += d);
            }
            sum += model.loss_grad(p, &buf, self.y[i], 1.0 / n, Some(&mut gp), Some(&mut gx));
        }
        (sum / n, gp, gx)
    }

    pub fn accuracy(&self, model: &ModelKind, p: &[f64]) -> f64 {
        let correct = (0..self.len())
            .filter(|&i| predict(model, p, self.row(i)) == self.y[i])
            .count();
        correct as f64 / self.len() as f64
    }
}

fn predict(model: &ModelKind, p: &[f64], x: &[f64]) -> f64 {
    if model.logit(p, x) > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Per-sample `l_inf` projected sign-gradient attack. Returns the
/// perturbation, whose entries lie in `[-eps, eps]` exactly.
pub fn pgd_attack(
    model: &ModelKind,
    p: &[f64],
    x: &[f64],
    y: f64,
    eps: f64,
    steps: usize,
) -> Vec<f64> {
    let alpha = 2.5 * eps / steps.max(1) as f64;
    let mut delta = vec![0.0; x.len()];
    let mut xa = x.to_vec();
    for _ in 0..steps {
        let mut gx = vec![0.0; x.len()];
        model.loss_grad(p, &xa, y, 1.0, None, Some(&mut gx));
        for k in 0..x.len() {
            let s = if gx[k] > 0.0 {
                1.0
            } else if gx[k] < 0.0 {
                -1.0
            } else {
                0.0
            };
            delta[k] = (delta[k] + alpha * s).clamp(-eps, eps);
            xa[k] = x[k] + delta[k];
        }
    }
    delta
}

/// Clean accuracy, robust accuracy and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub clean_acc: f64,
    pub adv_acc: f64,
    pub avg: f64,
}

impl Metric {
    pub fn new(clean_acc: f64, adv_acc: f64) -> Self {
        Metric {
            clean_acc,
            adv_acc,
            avg: 0.5 * (clean_acc + adv_acc),
        }
    }
}

/// Counts `(clean correct, robust correct)`; a sample is robustly correct if
/// it is classified correctly both clean and under the attack.
fn correct_counts(
    model: &ModelKind,
    p: &[f64],
    data: &Dataset,
    eps: f64,
    steps: usize,
) -> (usize, usize) {
    let mut clean = 0;
    let mut robust = 0;
    for i in 0..data.len() {
        let x = data.row(i);
        let y = data.y[i];
        if predict(model, p, x) != y {
            continue;
        }
        clean += 1;
        let d = pgd_attack(model, p, x, y, eps, steps);
        let xa: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        if predict(model, p, &xa) == y {
            robust += 1;
        }
    }
    (clean, robust)
}

/// Metric of one model on one dataset under a white-box attack.
pub fn evaluate_model(
    model: &ModelKind,
    p: &[f64],
    data: &Dataset,
    eps: f64,
    steps: usize,
) -> Metric {
    let (c, r) = correct_counts(model, p, data, eps, steps);
    let n = data.len() as f64;
    Metric::new(c as f64 / n, r as f64 / n)
}

/// Each worker's model on its own held-out test split, pooled over workers.
pub fn evaluate_metric(models: &[Vec<f64>], instance: &RobustHOInstance) -> Result<Metric> {
    if models.len() != instance.workers.len() {
        return Err(DtzoError::dim(
            "models",
            instance.workers.len(),
            models.len(),
        ));
    }
    let cfg = &instance.cfg;
    let (mut c, mut r, mut n) = (0, 0, 0);
    for (p, w) in models.iter().zip(&instance.workers) {
        let (a, b) = correct_counts(&cfg.model, p, &w.test, cfg.attack_eps, cfg.attack_steps);
        c += a;
        r += b;
        n += w.test.len();
    }
    Ok(Metric::new(c as f64 / n as f64, r as f64 / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustHoConfig {
    pub features: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Distance between the two class means.
    pub separation: f64,
    /// Standard deviation of each worker's mean shift.
    pub heterogeneity: f64,
    pub label_noise: f64,
    pub model: ModelKind,
    pub attack_eps: f64,
    pub attack_steps: usize,
    /// Initial regularization hyperparameter `x1`.
    pub init_reg: f64,
    /// Standard deviation of the initial model parameters. A ReLU network
    /// started at zero sits on a saddle where every smoothed derivative is
    /// of order `mu`.
    pub init_scale: f64,
}

impl Default for RobustHoConfig {
    fn default() -> Self {
        RobustHoConfig {
            features: 10,
            n_train: 200,
            n_val: 100,
            n_test: 100,
            separation: 2.0,
            heterogeneity: 0.3,
            label_noise: 0.05,
            model: ModelKind::Logistic,
            attack_eps: 0.05,
            attack_steps: 7,
            init_reg: 0.1,
            init_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustHOInstance {
    pub seed: u64,
    pub cfg: RobustHoConfig,
    pub workers: Vec<WorkerData>,
}

pub fn gen_robust_ho(n_workers: usize, seed: u64) -> Result<RobustHOInstance> {
    gen_robust_ho_with(n_workers, seed, RobustHoConfig::default())
}

pub fn gen_robust_ho_with(
    n_workers: usize,
    seed: u64,
    cfg: RobustHoConfig,
) -> Result<RobustHOInstance> {
    if n_workers == 0 {
        return Err(DtzoError::Config("n_workers must be >= 1".into()));
    }
    if cfg.features == 0 || cfg.n_train < 2 || cfg.n_val < 2 || cfg.n_test < 2 {
        return Err(DtzoError::Config(
            "need features >= 1 and >= 2 samples per split".into(),
        ));
    }
    if let ModelKind::Mlp { hidden: 0, .. } = cfg.model {
        return Err(DtzoError::Config("hidden width must be >= 1".into()));
    }
    let f = cfg.features;
    let mut shared = RngStream::new(seed, Role::Experiment, 0, Purpose::Data).next_rng();
    let mut u: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut shared)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    let workers = (0..n_workers)
        .map(|j| {
            let mut rng =
                RngStream::new(seed, Role::Experiment, j as u64 + 1, Purpose::Data).next_rng();
            let shift: Vec<f64> = (0..f)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    cfg.heterogeneity * e
                })
                .collect();
            let mut draw = |n: usize| -> Dataset {
                let mut x = Vec::with_capacity(n * f);
                let mut y = Vec::with_capacity(n);
                for i in 0..n {
                    // balanced classes: even rows positive
                    let label = (i % 2 == 0) as u8 as f64;
                    let sign = if label == 1.0 { 0.5 } else { -0.5 };
                    for k in 0..f {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x.push(sign * cfg.separation * u[k] + shift[k] + e);
                    }
                    let flip = rng.random::<f64>() < cfg.label_noise;
                    y.push(if flip { 1.0 - label } else { label });
                }
                Dataset { features: f, x, y }
            };
            let mut train = draw(cfg.n_train);
            let mut val = draw(cfg.n_val);
            let mut test = draw(cfg.n_test);
            standardize(&mut train, &mut [&mut val, &mut test]);
            WorkerData { train, val, test }
        })
        .collect();
    Ok(RobustHOInstance { seed, cfg, workers })
}

/// Standardizes every split with the training split's statistics.
fn standardize(train: &mut Dataset, others: &mut [&mut Dataset]) {
    let f = train.features;
    let n = train.len() as f64;
    for k in 0..f {
        let col = (0..train.len()).map(|i| train.x[i * f + k]);
        let mean = col.clone().sum::<f64>() / n;
        let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-12);
        for d in std::iter::once(&mut *train).chain(others.iter_mut().map(|d| &mut **d)) {
            for i in 0..d.len() {
                d.x[i * f + k] = (d.x[i * f + k] - mean) / sd;
            }
        }
    }
}

/// Which argument block carries a quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    One,
    Two,
}

/// Regularizer of a training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reg {
    None,
    /// `x1^2 |w|^2` with `x1` the first coordinate of block 1.
    FromX1,
    Fixed(f64),
}

/// A data-fitting objective over one worker's split.
pub struct HoObjective {
    pub model: ModelKind,
    pub data: Arc<Dataset>,
    /// Block holding the model parameters.
    pub params: Block,
    pub reg: Reg,
    /// Add `clip(x3, -eps, eps)` to every row.
    pub perturb: Option<f64>,
    /// Negate the data loss (maximization as minimization).
    pub negate: bool,
}

impl HoObjective {
    fn split<'a>(&self, x1: &'a [f64], x2: &'a [f64]) -> &'a [f64] {
        match self.params {
            Block::One => x1,
            Block::Two => x2,
        }
    }

    fn shift(&self, x3: &[f64]) -> Option<Vec<f64>> {
        self.perturb
            .map(|e| x3.iter().map(|v| v.clamp(-e, e)).collect())
    }

    fn reg_weight(&self, x1: &[f64]) -> f64 {
        match self.reg {
            Reg::None => 0.0,
            Reg::FromX1 => x1[0] * x1[0],
            Reg::Fixed(r) => r,
        }
    }
}

impl Objective for HoObjective {
    fn value(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> f64 {
        let p = self.split(x1, x2);
        let shift = self.shift(x3);
        let loss = self.data.mean_loss(&self.model, p, shift.as_deref());
        let sign = if self.negate { -1.0 } else { 1.0 };
        let reg = self.reg_weight(x1);
        let r = if reg == 0.0 {
            0.0
        } else {
            reg * self.model.weight_sq_norm(self.data.features, p)
        };
        sign * loss + r
    }

    fn gradient(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> Option<BlockGradient> {
        let p = self.split(x1, x2);
        let shift = self.shift(x3);
        let (_, mut gp, gx) = self.data.mean_loss_grad(&self.model, p, shift.as_deref());
        let sign = if self.negate { -1.0 } else { 1.0 };
        gp.iter_mut().for_each(|g| *g *= sign);
        let reg = self.reg_weight(x1);
        let f = self.data.features;
        for (k, g) in gp.iter_mut().enumerate() {
            if self.model.is_weight(f, k) {
                *g += 2.0 * reg * p[k];
            }
        }
        let mut g1 = vec![0.0; x1.len()];
        let mut g2 = vec![0.0; x2.len()];
        if let Reg::FromX1 = self.reg {
            g1[0] += 2.0 * x1[0] * self.model.weight_sq_norm(f, p);
        }
        match self.params {
            Block::One => g1.iter_mut().zip(&gp).for_each(|(a, b)| *a += b),
            Block::Two => g2.copy_from_slice(&gp),
        }
        let g3 = match self.perturb {
            Some(e) => x3
                .iter()
                .zip(&gx)
                .map(|(v, g)| if v.abs() < e { sign * g } else { 0.0 })
                .collect(),
            None => vec![0.0; x3.len()],
        };
        Some(BlockGradient { g1, g2, g3 })
    }
}

impl RobustHOInstance {
    pub fn n_params(&self) -> usize {
        self.cfg.model.n_params(self.cfg.features)
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::new(1, self.n_params(), self.cfg.features, self.workers.len())
    }

    fn obj(
        &self,
        data: &Dataset,
        params: Block,
        reg: Reg,
        perturb: bool,
        negate: bool,
    ) -> Arc<dyn Objective> {
        Arc::new(HoObjective {
            model: self.cfg.model,
            data: Arc::new(data.clone()),
            params,
            reg,
            perturb: perturb.then_some(self.cfg.attack_eps),
            negate,
        })
    }

    /// Shared initial model, drawn from the instance seed.
    pub fn init_params(&self) -> Result<Vec<f64>> {
        let n = self.n_params();
        if self.cfg.init_scale == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut s = RngStream::new(self.seed, Role::Experiment, 0, Purpose::Init);
        Ok(s.gaussian(n)?
            .into_iter()
            .map(|v| v * self.cfg.init_scale)
            .collect())
    }

    /// The trilevel problem. Starts from `x1 = init_reg`, the initial model
    /// and zero perturbation. With `init_scale = 0` the untrained model
    /// predicts one class.
    pub fn problem(&self) -> Result<Problem> {
        let dims = self.dims()?;
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        let mut f3 = Vec::new();
        for w in &self.workers {
            f1.push(self.obj(&w.val, Block::Two, Reg::None, false, false));
            f2.push(self.obj(&w.train, Block::Two, Reg::FromX1, true, false));
            f3.push(self.obj(&w.train, Block::Two, Reg::None, true, true));
        }
        let init = SystemState::consensus(
            &dims,
            &[self.cfg.init_reg],
            &self.init_params()?,
            &vec![0.0; dims.d3],
        )?;
        Problem::new(dims, f1, f2, f3, init)
    }

    /// Single-level problem: consensus training of the model in block 1 on
    /// the clean training loss with a fixed regularization weight.
    pub fn single_level_problem(&self, reg: f64) -> Result<Problem> {
        let n = self.workers.len();
        let dims = Dims::new(self.n_params(), 1, 1, n)?;
        let f: Vec<Arc<dyn Objective>> = self
            .workers
            .iter()
            .map(|w| self.obj(&w.train, Block::One, Reg::Fixed(reg), false, false))
            .collect();
        let init = SystemState::consensus(&dims, &self.init_params()?, &[0.0], &[0.0])?;
        Problem::new(dims, f.clone(), f.clone(), f, init)
    }

    /// Bilevel problem: hyperparameter over clean regularized training; the
    /// third level is a constant.
    pub fn bilevel_problem(&self) -> Result<Problem> {
        let n = self.workers.len();
        let dims = Dims::new(1, self.n_params(), 1, n)?;
        let zero: Arc<dyn Objective> = Arc::new(crate::problem::FnObjective(
            |_: &[f64], _: &[f64], _: &[f64]| 0.0,
        ));
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        for w in &self.workers {
            f1.push(self.obj(&w.val, Block::Two, Reg::None, false, false));
            f2.push(self.obj(&w.train, Block::Two, Reg::FromX1, false, false));
        }
        let init =
            SystemState::consensus(&dims, &[self.cfg.init_reg], &self.init_params()?, &[0.0])?;
        Problem::new(dims, f1, f2, vec![zero; n], init)
    }

    /// Plain regularized training loss on clean data, computed without the
    /// perturbation path.
    pub fn regularized_train_loss(&self, j: usize, x1: f64, p: &[f64]) -> f64 {
        let d = &self.workers[j].train;
        d.mean_loss(&self.cfg.model, p, None)
            + x1 * x1 * self.cfg.model.weight_sq_norm(d.features, p)
    }
}
