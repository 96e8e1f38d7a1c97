//! Coordinate-wise quadratic cuts `h(v) = a.(v*v) + b.v + e <= eps`.
//!
//! Zeroth-order cuts come from a smoothed linearization of a residual `phi`
//! at `v_t` with curvature `c = (L+1)/2` and constant offset
//! `m = mu^2 L^2 P / 8` (`P` is the layer's dimension factor):
//!
//! `phi(v_t) + G.(v - v_t) - c |v - v_t|^2 - m <= eps`
//!
//! Expanding gives `a = -c`, `b = G + 2c v_t`, `e = phi(v_t) - G.v_t - c |v_t|^2 - m`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, DtzoError, Result};
use crate::layout::{flatten_inner, flatten_outer};
use crate::phi::PhiEstimator;
use crate::problem::{Dims, LowerLevelStructure, SystemState};
use crate::rng::RngStream;
use crate::zo::{multi_point_with_base, SmoothingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Inner,
    Outer,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Inner => "inner",
            Layer::Outer => "outer",
        })
    }
}

impl FromStr for Layer {
    type Err = DtzoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inner" => Ok(Layer::Inner),
            "outer" => Ok(Layer::Outer),
            other => Err(DtzoError::Parse(format!("unknown cut layer {other:?}"))),
        }
    }
}

impl Layer {
    pub fn dim(self, dims: &Dims) -> usize {
        match self {
            Layer::Inner => dims.inner_dim(),
            Layer::Outer => dims.outer_dim(),
        }
    }

    pub fn poly_dim(self, dims: &Dims) -> f64 {
        match self {
            Layer::Inner => dims.inner_poly_dim(),
            Layer::Outer => dims.outer_poly_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCut {
    pub layer: Layer,
    pub id: u64,
    pub birth_t: usize,
    pub eps: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub e: f64,
}

impl QuadraticCut {
    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `h(v)`.
    pub fn eval(&self, v: &[f64]) -> Result<f64> {
        eval_cut(self, v)
    }

    pub fn satisfied(&self, v: &[f64]) -> Result<bool> {
        Ok(self.eval(v)? <= self.eps)
    }

    /// `dh/dv_k = 2 a_k v_k + b_k`.
    pub fn gradient(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("cut gradient point", self.dim(), v.len())?;
        Ok(v.iter()
            .zip(self.a.iter().zip(&self.b))
            .map(|(x, (a, b))| 2.0 * a * x + b)
            .collect())
    }
}

/// `a.(v*v) + b.v + e`.
pub fn eval_cut(cut: &QuadraticCut, v: &[f64]) -> Result<f64> {
    check_len("cut evaluation point", cut.dim(), v.len())?;
    let mut h = cut.e;
    for ((x, a), b) in v.iter().zip(&cut.a).zip(&cut.b) {
        h += a * x * x + b * x;
    }
    Ok(h)
}

/// Expands the smoothed linearization into coefficient form. The returned cut
/// has id 0 and birth 0; [`CutPool::add`] assigns both.
#[allow(clippy::too_many_arguments)]
pub fn build_cut_from_linearization(
    phi_val: f64,
    g: &[f64],
    v_t: &[f64],
    lipschitz: f64,
    mu: f64,
    poly_dim: f64,
    eps: f64,
    layer: Layer,
) -> Result<QuadraticCut> {
    check_len("linearization gradient", v_t.len(), g.len())?;
    if !(lipschitz > 0.0) {
        return Err(DtzoError::Config(format!("L must be > 0, got {lipschitz}")));
    }
    if eps < 0.0 {
        return Err(DtzoError::Config(format!(
            "cut slack must be >= 0, got {eps}"
        )));
    }
    let c = (lipschitz + 1.0) / 2.0;
    let m = mu * mu * lipschitz * lipschitz * poly_dim / 8.0;
    let gv: f64 = g.iter().zip(v_t).map(|(a, b)| a * b).sum();
    let vv: f64 = v_t.iter().map(|x| x * x).sum();
    Ok(QuadraticCut {
        layer,
        id: 0,
        birth_t: 0,
        eps,
        a: vec![-c; v_t.len()],
        b: g.iter()
            .zip(v_t)
            .map(|(gk, vk)| gk + 2.0 * c * vk)
            .collect(),
        e: phi_val - gv - c * vv - m,
    })
}

/// A freshly generated zeroth-order cut with the quantities it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCut {
    pub cut: QuadraticCut,
    pub phi_val: f64,
    pub point: Vec<f64>,
    pub g: Vec<f64>,
    pub g_stderr: Option<Vec<f64>>,
}

/// Builds a cut for `layer` at `v_t` from `batch` smoothed directional
/// differences of `phi` (one base evaluation plus `batch` perturbed ones).
pub fn generate_cut_at(
    dims: &Dims,
    layer: Layer,
    v_t: &[f64],
    phi: &dyn PhiEstimator,
    smoothing: &SmoothingConfig,
    eps: f64,
    stream: &mut RngStream,
) -> Result<GeneratedCut> {
    check_len("cut base point", layer.dim(dims), v_t.len())?;
    let phi_val = phi.eval(v_t)?;
    generate_cut_with_base(dims, layer, v_t, phi_val, phi, smoothing, eps, stream)
}

/// As [`generate_cut_at`] with `phi(v_t)` supplied by the caller, e.g. from a
/// transported evaluation.
#[allow(clippy::too_many_arguments)]
pub fn generate_cut_with_base(
    dims: &Dims,
    layer: Layer,
    v_t: &[f64],
    phi_val: f64,
    phi: &dyn PhiEstimator,
    smoothing: &SmoothingConfig,
    eps: f64,
    stream: &mut RngStream,
) -> Result<GeneratedCut> {
    check_len("cut base point", layer.dim(dims), v_t.len())?;
    if !phi_val.is_finite() {
        return Err(DtzoError::Evaluation {
            value: phi_val,
            point: v_t.to_vec(),
        });
    }
    let mut f = |v: &[f64]| phi.eval(v);
    let est = multi_point_with_base(&mut f, v_t, phi_val, smoothing.mu, smoothing.batch, stream)?;
    let cut = build_cut_from_linearization(
        phi_val,
        &est.grad,
        v_t,
        smoothing.lipschitz,
        smoothing.mu,
        layer.poly_dim(dims),
        eps,
        layer,
    )?;
    Ok(GeneratedCut {
        cut,
        phi_val,
        point: v_t.to_vec(),
        g: est.grad,
        g_stderr: est.stderr,
    })
}

/// Inner cut at `flatten_inner(state, z2)`.
pub fn generate_inner_cut(
    dims: &Dims,
    state: &SystemState,
    phi_in: &dyn PhiEstimator,
    smoothing: &SmoothingConfig,
    eps_in: f64,
    stream: &mut RngStream,
) -> Result<GeneratedCut> {
    let v = flatten_inner(dims, state, &state.z2)?;
    generate_cut_at(dims, Layer::Inner, &v, phi_in, smoothing, eps_in, stream)
}

/// Outer cut at `flatten_outer(state)`.
pub fn generate_outer_cut(
    dims: &Dims,
    state: &SystemState,
    phi_out: &dyn PhiEstimator,
    smoothing: &SmoothingConfig,
    eps_out: f64,
    stream: &mut RngStream,
) -> Result<GeneratedCut> {
    let v = flatten_outer(dims, state)?;
    generate_cut_at(dims, Layer::Outer, &v, phi_out, smoothing, eps_out, stream)
}

/// First-order cut for grey-box levels:
/// `a = 0`, `b = grad`, `e = phi - grad.v_t - rho (sum(bounds) + |v_t|^2)`.
pub fn generate_rho_cut(
    layer: Layer,
    phi_val: f64,
    grad_phi: &[f64],
    v_t: &[f64],
    rho: f64,
    bounds: &[f64],
    eps: f64,
) -> Result<QuadraticCut> {
    check_len("rho-cut gradient", v_t.len(), grad_phi.len())?;
    if !(rho > 0.0) {
        return Err(DtzoError::Config(format!("rho must be > 0, got {rho}")));
    }
    let gv: f64 = grad_phi.iter().zip(v_t).map(|(a, b)| a * b).sum();
    let vv: f64 = v_t.iter().map(|x| x * x).sum();
    let sb: f64 = bounds.iter().sum();
    Ok(QuadraticCut {
        layer,
        id: 0,
        birth_t: 0,
        eps,
        a: vec![0.0; v_t.len()],
        b: grad_phi.to_vec(),
        e: phi_val - gv - rho * (sb + vv),
    })
}

/// Block bound terms of the grey-box cut for radii `a = [a1, a2, a3]`:
/// outer `[a1, (N+1) a2, (N+1) a3]`, inner `[(N+1) a1, a2, a3]`.
pub fn rho_bounds(layer: Layer, dims: &Dims, a: [f64; 3]) -> Vec<f64> {
    let n1 = dims.n_workers as f64 + 1.0;
    match layer {
        Layer::Outer => vec![a[0], n1 * a[1], n1 * a[2]],
        Layer::Inner => vec![n1 * a[0], a[1], a[2]],
    }
}

/// ρ-cut at `v_t` using the exact residual and gradient of a structured
/// problem. Without structure this is a mode error.
pub fn generate_rho_cut_from_structure(
    structure: Option<&dyn LowerLevelStructure>,
    layer: Layer,
    v_t: &[f64],
    rho: f64,
    bounds: &[f64],
    eps: f64,
) -> Result<QuadraticCut> {
    let s = structure
        .ok_or_else(|| DtzoError::Mode("rho-cuts need a white-box residual gradient".into()))?;
    let (phi, grad) = match layer {
        Layer::Inner => (s.phi_in(v_t)?, s.grad_phi_in(v_t)?),
        Layer::Outer => (s.phi_out(v_t)?, s.grad_phi_out(v_t)?),
    };
    generate_rho_cut(layer, phi, &grad, v_t, rho, bounds, eps)
}

/// Ids removed by one pruning pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub inner: Vec<u64>,
    pub outer: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CutPool {
    pub inner: Vec<QuadraticCut>,
    pub outer: Vec<QuadraticCut>,
    pub next_id: u64,
}

impl CutPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.len() + self.outer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer(&self, layer: Layer) -> &[QuadraticCut] {
        match layer {
            Layer::Inner => &self.inner,
            Layer::Outer => &self.outer,
        }
    }

    /// Adds a cut, assigning a fresh id and the birth iteration. Returns the id.
    pub fn add(&mut self, mut cut: QuadraticCut, birth_t: usize) -> u64 {
        cut.id = self.next_id;
        cut.birth_t = birth_t;
        self.next_id += 1;
        let id = cut.id;
        match cut.layer {
            Layer::Inner => self.inner.push(cut),
            Layer::Outer => self.outer.push(cut),
        }
        id
    }

    /// True iff every cut of `layer` satisfies `h(v) <= eps`.
    pub fn feasible(&self, layer: Layer, v: &[f64]) -> Result<bool> {
        for c in self.layer(layer) {
            if !c.satisfied(v)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Removes every cut with `h(v) < eps` at the given points (strict).
    pub fn prune_inactive(&mut self, v_inner: &[f64], v_outer: &[f64]) -> Result<PruneOutcome> {
        fn sweep(cuts: &mut Vec<QuadraticCut>, v: &[f64]) -> Result<Vec<u64>> {
            let mut removed = Vec::new();
            let mut kept = Vec::with_capacity(cuts.len());
            for c in cuts.drain(..) {
                if eval_cut(&c, v)? < c.eps {
                    removed.push(c.id);
                } else {
                    kept.push(c);
                }
            }
            *cuts = kept;
            Ok(removed)
        }
        Ok(PruneOutcome {
            inner: sweep(&mut self.inner, v_inner)?,
            outer: sweep(&mut self.outer, v_outer)?,
        })
    }

    /// One line per cut: `layer id birth_t eps a.. b.. e`. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# layer id birth_t eps a[..] b[..] e\n");
        for c in self.inner.iter().chain(&self.outer) {
            out.push_str(&format!("{} {} {} {}", c.layer, c.id, c.birth_t, c.eps));
            for x in c.a.iter().chain(&c.b) {
                out.push_str(&format!(" {x}"));
            }
            out.push_str(&format!(" {}\n", c.e));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pool = CutPool::new();
        let mut max_id = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| DtzoError::Parse(format!("line {}: {what}", lineno + 1));
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() < 5 || (tok.len() - 5) % 2 != 0 {
                return Err(bad("expected `layer id birth_t eps a.. b.. e`"));
            }
            let d = (tok.len() - 5) / 2;
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(&format!("bad float {s:?}")))
            };
            let layer: Layer = tok[0].parse()?;
            let id: u64 = tok[1].parse().map_err(|_| bad("bad id"))?;
            let birth_t: usize = tok[2].parse().map_err(|_| bad("bad birth_t"))?;
            let eps = num(tok[3])?;
            let a = tok[4..4 + d]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            let b = tok[4 + d..4 + 2 * d]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            let e = num(tok[4 + 2 * d])?;
            if pool.inner.iter().chain(&pool.outer).any(|c| c.id == id) {
                return Err(bad(&format!("duplicate id {id}")));
            }
            max_id = Some(max_id.map_or(id, |m: u64| m.max(id)));
            let cut = QuadraticCut {
                layer,
                id,
                birth_t,
                eps,
                a,
                b,
                e,
            };
            match layer {
                Layer::Inner => pool.inner.push(cut),
                Layer::Outer => pool.outer.push(cut),
            }
        }
        pool.next_id = max_id.map_or(0, |m| m + 1);
        Ok(pool)
    }
}
