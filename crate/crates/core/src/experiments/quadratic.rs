//! Closed-form trilevel test bed.
//!
//! Every level objective is a weighted least-squares residual
//! `1/2 sum_k h_k (S x - c)_k^2` in the stacked argument `x = [x1; x2; x3]`:
//!
//! * level 3: `x3 - A3_j x1 - B3_j x2 - r3_j`,
//! * level 2: `x2 - A2_j x1 - C2_j x3 - r2_j`,
//! * level 1: `[x1; x2; x3] - tau_j` with per-block weights.
//!
//! Lower-level argmins are weighted means, affine in the upper variables, so
//! the trilevel solution follows by back-substitution.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_len, DtzoError, Result};
use crate::layout::{unflatten_inner, unflatten_outer, InnerLayout, OuterLayout};
use crate::problem::{BlockGradient, Dims, LowerLevelStructure, Objective, Problem, SystemState};
use crate::rng::{Purpose, RngStream, Role};

/// `1/2 sum_k h_k (S x - c)_k^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualQuadratic {
    pub dims: Dims,
    pub s: DMatrix<f64>,
    pub c: DVector<f64>,
    pub h: DVector<f64>,
}

impl ResidualQuadratic {
    fn residual(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> DVector<f64> {
        let x = DVector::from_iterator(
            x1.len() + x2.len() + x3.len(),
            x1.iter().chain(x2).chain(x3).copied(),
        );
        &self.s * x - &self.c
    }
}

impl Objective for ResidualQuadratic {
    fn value(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> f64 {
        let r = self.residual(x1, x2, x3);
        0.5 * r
            .iter()
            .zip(self.h.iter())
            .map(|(r, h)| h * r * r)
            .sum::<f64>()
    }

    fn gradient(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> Option<BlockGradient> {
        let r = self.residual(x1, x2, x3).component_mul(&self.h);
        let g = self.s.transpose() * r;
        let (d1, d2) = (self.dims.d1, self.dims.d2);
        Some(BlockGradient {
            g1: g.rows(0, d1).iter().copied().collect(),
            g2: g.rows(d1, d2).iter().copied().collect(),
            g3: g.rows(d1 + d2, self.dims.d3).iter().copied().collect(),
        })
    }
}

/// Generator options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticOptions {
    /// Put every worker's upper-level target on the lower-level solution
    /// manifold, so the trilevel solution is the shared target itself.
    pub consistent: bool,
    /// Scale of the random initial consensus point (0 starts at the origin).
    pub init_scale: f64,
}

impl Default for QuadraticOptions {
    fn default() -> Self {
        QuadraticOptions {
            consistent: false,
            init_scale: 0.0,
        }
    }
}

/// Per-worker coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerCoefficients {
    pub a3: DMatrix<f64>,
    pub b3: DMatrix<f64>,
    pub r3: DVector<f64>,
    pub h3: DVector<f64>,
    pub a2: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub r2: DVector<f64>,
    pub h2: DVector<f64>,
    /// Level-1 targets `[tau1; tau2; tau3]` and weights.
    pub tau: DVector<f64>,
    pub h1: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticInstance {
    pub dims: Dims,
    pub seed: u64,
    pub workers: Vec<WorkerCoefficients>,
    /// `z3*(z1, z2) = p3 z1 + q3 z2 + s3`.
    pub p3: DMatrix<f64>,
    pub q3: DMatrix<f64>,
    pub s3: DVector<f64>,
    /// Trilevel second-level solution `z2*(z1) = p2 z1 + s2`.
    pub p2: DMatrix<f64>,
    pub s2: DVector<f64>,
    /// Closed-form trilevel solution.
    pub solution: (Vec<f64>, Vec<f64>, Vec<f64>),
    pub init: SystemState,
}

fn uniform_matrix(rng: &mut impl Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn uniform_vector(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

fn solve_spd(m: DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    m.cholesky()
        .ok_or_else(|| DtzoError::Config(format!("{what}: normal matrix is not positive definite")))
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Random instance with the default options.
pub fn gen_quadratic(dims: Dims, seed: u64) -> Result<QuadraticInstance> {
    gen_quadratic_with(dims, seed, QuadraticOptions::default())
}

pub fn gen_quadratic_with(
    dims: Dims,
    seed: u64,
    opts: QuadraticOptions,
) -> Result<QuadraticInstance> {
    dims.validate()?;
    let (d1, d2, d3, n) = (dims.d1, dims.d2, dims.d3, dims.n_workers);
    let mut rng = RngStream::new(seed, Role::Experiment, 0, Purpose::Data).next_rng();
    // couplings shrink with the block size so lower levels stay well posed
    let k = 0.5 / (d1.max(d2).max(d3) as f64);
    let mut workers: Vec<WorkerCoefficients> = (0..n)
        .map(|_| WorkerCoefficients {
            a3: uniform_matrix(&mut rng, d3, d1, -k, k),
            b3: uniform_matrix(&mut rng, d3, d2, -k, k),
            r3: uniform_vector(&mut rng, d3, -0.5, 0.5),
            h3: uniform_vector(&mut rng, d3, 0.5, 1.5),
            a2: uniform_matrix(&mut rng, d2, d1, -k, k),
            c2: uniform_matrix(&mut rng, d2, d3, -k, k),
            r2: uniform_vector(&mut rng, d2, -0.5, 0.5),
            h2: uniform_vector(&mut rng, d2, 0.5, 1.5),
            tau: uniform_vector(&mut rng, d1 + d2 + d3, -1.0, 1.0),
            h1: uniform_vector(&mut rng, d1 + d2 + d3, 0.5, 1.5),
        })
        .collect();

    // third level: weighted mean of A3 z1 + B3 z2 + r3
    let h3_sum = workers
        .iter()
        .fold(DVector::zeros(d3), |acc, w| acc + &w.h3);
    let mut p3 = DMatrix::zeros(d3, d1);
    let mut q3 = DMatrix::zeros(d3, d2);
    let mut s3 = DVector::zeros(d3);
    for w in &workers {
        let wt = DMatrix::from_diagonal(&w.h3.component_div(&h3_sum));
        p3 += &wt * &w.a3;
        q3 += &wt * &w.b3;
        s3 += &wt * &w.r3;
    }

    // second level with the third level substituted
    let eye2 = DMatrix::<f64>::identity(d2, d2);
    let mut normal = DMatrix::zeros(d2, d2);
    let mut rhs_z1 = DMatrix::zeros(d2, d1);
    let mut rhs_c = DVector::zeros(d2);
    for w in &workers {
        let m = &eye2 - &w.c2 * &q3;
        let kz = &w.a2 + &w.c2 * &p3;
        let c = &w.c2 * &s3 + &w.r2;
        let mth = m.transpose() * DMatrix::from_diagonal(&w.h2);
        normal += &mth * &m;
        rhs_z1 += &mth * kz;
        rhs_c += &mth * c;
    }
    let chol = solve_spd(normal, "second level")?;
    let p2 = chol.solve(&rhs_z1);
    let s2 = chol.solve(&rhs_c);
    // z3 as a function of z1 alone
    let p3t = &p3 + &q3 * &p2;
    let s3t = &s3 + &q3 * &s2;

    if opts.consistent {
        let tau1 = workers[0].tau.rows(0, d1).into_owned();
        let tau2 = &p2 * &tau1 + &s2;
        let tau3 = &p3t * &tau1 + &s3t;
        let mut tau = DVector::zeros(d1 + d2 + d3);
        tau.rows_mut(0, d1).copy_from(&tau1);
        tau.rows_mut(d1, d2).copy_from(&tau2);
        tau.rows_mut(d1 + d2, d3).copy_from(&tau3);
        for w in &mut workers {
            w.tau = tau.clone();
        }
    }

    // first level: quadratic in z1 after substitution
    let mut normal = DMatrix::zeros(d1, d1);
    let mut rhs = DVector::zeros(d1);
    for w in &workers {
        let blocks = [
            (DMatrix::identity(d1, d1), DVector::zeros(d1), 0, d1),
            (p2.clone(), s2.clone(), d1, d2),
            (p3t.clone(), s3t.clone(), d1 + d2, d3),
        ];
        for (p, s, off, len) in blocks {
            let h = DMatrix::from_diagonal(&w.h1.rows(off, len).into_owned());
            let tau = w.tau.rows(off, len).into_owned();
            let pth = p.transpose() * h;
            normal += &pth * &p;
            rhs += &pth * (tau - s);
        }
    }
    let z1 = solve_spd(normal, "first level")?.solve(&rhs);
    let z2 = &p2 * &z1 + &s2;
    let z3 = &p3t * &z1 + &s3t;

    let mut init = SystemState::zeros(&dims);
    if opts.init_scale > 0.0 {
        let mut s = RngStream::new(seed, Role::Experiment, 0, Purpose::Init);
        let z1 = s
            .gaussian(d1)?
            .iter()
            .map(|v| v * opts.init_scale)
            .collect::<Vec<_>>();
        let z2 = s
            .gaussian(d2)?
            .iter()
            .map(|v| v * opts.init_scale)
            .collect::<Vec<_>>();
        let z3 = s
            .gaussian(d3)?
            .iter()
            .map(|v| v * opts.init_scale)
            .collect::<Vec<_>>();
        init = SystemState::consensus(&dims, &z1, &z2, &z3)?;
    }

    let inst = QuadraticInstance {
        dims,
        seed,
        workers,
        p3,
        q3,
        s3,
        p2,
        s2,
        solution: (to_vec(&z1), to_vec(&z2), to_vec(&z3)),
        init,
    };
    let worst = inst.self_check()?;
    if worst > 1e-10 {
        return Err(DtzoError::Config(format!(
            "closed-form solution fails its optimality conditions by {worst:e}"
        )));
    }
    Ok(inst)
}

impl QuadraticInstance {
    fn objective(&self, s: DMatrix<f64>, c: DVector<f64>, h: DVector<f64>) -> Arc<dyn Objective> {
        Arc::new(ResidualQuadratic {
            dims: self.dims,
            s,
            c,
            h,
        })
    }

    /// Level objectives of worker `j` as `(f1, f2, f3)`.
    pub fn objectives(
        &self,
        j: usize,
    ) -> (Arc<dyn Objective>, Arc<dyn Objective>, Arc<dyn Objective>) {
        let (d1, d2, d3) = (self.dims.d1, self.dims.d2, self.dims.d3);
        let w = &self.workers[j];
        let dd = d1 + d2 + d3;
        let f1 = self.objective(DMatrix::identity(dd, dd), w.tau.clone(), w.h1.clone());
        let mut s2 = DMatrix::zeros(d2, dd);
        s2.view_mut((0, 0), (d2, d1)).copy_from(&(-&w.a2));
        s2.view_mut((0, d1), (d2, d2)).fill_with_identity();
        s2.view_mut((0, d1 + d2), (d2, d3)).copy_from(&(-&w.c2));
        let f2 = self.objective(s2, w.r2.clone(), w.h2.clone());
        let mut s3 = DMatrix::zeros(d3, dd);
        s3.view_mut((0, 0), (d3, d1)).copy_from(&(-&w.a3));
        s3.view_mut((0, d1), (d3, d2)).copy_from(&(-&w.b3));
        s3.view_mut((0, d1 + d2), (d3, d3)).fill_with_identity();
        let f3 = self.objective(s3, w.r3.clone(), w.h3.clone());
        (f1, f2, f3)
    }

    /// The instance as a [`Problem`] with its closed-form structure attached.
    pub fn problem(&self) -> Result<Problem> {
        let n = self.dims.n_workers;
        let (mut f1, mut f2, mut f3) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for j in 0..n {
            let (a, b, c) = self.objectives(j);
            f1.push(a);
            f2.push(b);
            f3.push(c);
        }
        let p = Problem::new(self.dims, f1, f2, f3, self.init.clone())?;
        Ok(p.with_structure(Arc::new(self.clone())))
    }

    /// `z3*(z1, z2)`.
    pub fn z3_star(&self, z1: &[f64], z2: &[f64]) -> Vec<f64> {
        let z1 = DVector::from_column_slice(z1);
        let z2 = DVector::from_column_slice(z2);
        to_vec(&(&self.p3 * z1 + &self.q3 * z2 + &self.s3))
    }

    /// Second-level argmin with `z1` and each worker's `x3_j` held fixed:
    /// the `h2`-weighted mean of `A2_j z1 + C2_j x3_j + r2_j`.
    pub fn z2_star_given(&self, z1: &[f64], x3: &[Vec<f64>]) -> Vec<f64> {
        let d2 = self.dims.d2;
        let z1 = DVector::from_column_slice(z1);
        let mut num = DVector::zeros(d2);
        let mut den = DVector::zeros(d2);
        for (w, x3j) in self.workers.iter().zip(x3) {
            let m = &w.a2 * &z1 + &w.c2 * DVector::from_column_slice(x3j) + &w.r2;
            num += m.component_mul(&w.h2);
            den += &w.h2;
        }
        to_vec(&num.component_div(&den))
    }

    /// Largest violation of the three levels' first-order conditions at the
    /// stored solution.
    pub fn self_check(&self) -> Result<f64> {
        let (z1, z2, z3) = &self.solution;
        let n = self.dims.n_workers;
        let mut worst: f64 = 0.0;
        // third level: sum_j d f3_j / d x3 = 0
        let mut g3 = vec![0.0; self.dims.d3];
        let mut g2 = DVector::zeros(self.dims.d2);
        let mut g1 = DVector::zeros(self.dims.d1);
        let p3t = &self.p3 + &self.q3 * &self.p2;
        for j in 0..n {
            let (f1, f2, f3) = self.objectives(j);
            let g = f3.gradient(z1, z2, z3).expect("quadratic has gradients");
            g3.iter_mut().zip(g.g3).for_each(|(a, b)| *a += b);
            // second level, total derivative through z3*(z1, z2)
            let g = f2.gradient(z1, z2, z3).expect("quadratic has gradients");
            let (gz2, gz3) = (DVector::from_vec(g.g2), DVector::from_vec(g.g3));
            g2 += gz2 + self.q3.transpose() * gz3;
            // first level, total derivative through z2*(z1) and z3*(z1)
            let g = f1.gradient(z1, z2, z3).expect("quadratic has gradients");
            g1 += DVector::from_vec(g.g1)
                + self.p2.transpose() * DVector::from_vec(g.g2)
                + p3t.transpose() * DVector::from_vec(g.g3);
        }
        for v in g3.iter().chain(g2.iter()).chain(g1.iter()) {
            worst = worst.max(v.abs());
        }
        Ok(worst)
    }

    /// Nested brute-force solve on a `points^d` grid over `[-r, r]` per
    /// coordinate. Only meaningful for blocks of size at most 2.
    pub fn grid_solution(
        &self,
        points: usize,
        radius: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (d1, d2, d3) = (self.dims.d1, self.dims.d2, self.dims.d3);
        if d1 > 2 || d2 > 2 || d3 > 2 || points < 2 {
            return Err(DtzoError::Mode(
                "grid check supports blocks of size <= 2".into(),
            ));
        }
        let axis: Vec<f64> = (0..points)
            .map(|i| -radius + 2.0 * radius * i as f64 / (points - 1) as f64)
            .collect();
        let grid = |d: usize| -> Vec<Vec<f64>> {
            let mut out = vec![vec![]];
            for _ in 0..d {
                out = out
                    .into_iter()
                    .flat_map(|p| axis.iter().map(move |a| [p.clone(), vec![*a]].concat()))
                    .collect();
            }
            out
        };
        let (g1, g2, g3) = (grid(d1), grid(d2), grid(d3));
        let objs: Vec<_> = (0..self.dims.n_workers)
            .map(|j| self.objectives(j))
            .collect();
        let argmin = |cands: &[Vec<f64>], f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
            let mut best = (f64::INFINITY, &cands[0]);
            for c in cands {
                let v = f(c);
                if v < best.0 {
                    best = (v, c);
                }
            }
            best.1.clone()
        };
        let z3_of = |z1: &[f64], z2: &[f64]| {
            argmin(&g3, &|z3| objs.iter().map(|o| o.2.value(z1, z2, z3)).sum())
        };
        let z2_of = |z1: &[f64]| {
            argmin(&g2, &|z2| {
                let z3 = z3_of(z1, z2);
                objs.iter().map(|o| o.1.value(z1, z2, &z3)).sum()
            })
        };
        let z1 = argmin(&g1, &|z1| {
            let z2 = z2_of(z1);
            let z3 = z3_of(z1, &z2);
            objs.iter().map(|o| o.0.value(z1, &z2, &z3)).sum()
        });
        let z2 = z2_of(&z1);
        let z3 = z3_of(&z1, &z2);
        Ok((z1, z2, z3))
    }

    /// Euclidean distance of `(z1, z2, z3)` to the closed-form solution.
    pub fn distance_to_solution(&self, z1: &[f64], z2: &[f64], z3: &[f64]) -> f64 {
        let (a, b, c) = &self.solution;
        let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        (d(z1, a) + d(z2, b) + d(z3, c)).sqrt()
    }
}

/// Solution estimate of a run: `z1` and the worker means of `x2`, `x3`.
pub fn solution_estimate(state: &SystemState) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = state.x2.len() as f64;
    let mean = |blocks: &[Vec<f64>]| -> Vec<f64> {
        let mut m = vec![0.0; blocks[0].len()];
        for b in blocks {
            m.iter_mut().zip(b).for_each(|(a, v)| *a += v / n);
        }
        m
    };
    (state.z1.clone(), mean(&state.x2), mean(&state.x3))
}

fn sq(v: &[f64], c: &[f64]) -> f64 {
    v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

impl LowerLevelStructure for QuadraticInstance {
    fn phi_in(&self, v: &[f64]) -> Result<f64> {
        let b = unflatten_inner(&self.dims, v)?;
        let star = self.z3_star(&b.z1, &b.z2);
        Ok(b.x3.iter().map(|x| sq(x, &star)).sum::<f64>() + sq(&b.z3, &star))
    }

    fn phi_out(&self, v: &[f64]) -> Result<f64> {
        let b = unflatten_outer(&self.dims, v)?;
        let star = self.z2_star_given(&b.z1, &b.x3);
        Ok(b.x2.iter().map(|x| sq(x, &star)).sum::<f64>() + sq(&b.z2, &star))
    }

    fn grad_phi_in(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dims = self.dims;
        let b = unflatten_inner(&dims, v)?;
        let l = InnerLayout::new(dims);
        let star = self.z3_star(&b.z1, &b.z2);
        let mut g = vec![0.0; v.len()];
        // d phi / d star
        let mut gs = DVector::zeros(dims.d3);
        for (j, x) in b.x3.iter().enumerate() {
            for k in 0..dims.d3 {
                let r = x[k] - star[k];
                g[l.x3(j)][k] = 2.0 * r;
                gs[k] -= 2.0 * r;
            }
        }
        for k in 0..dims.d3 {
            let r = b.z3[k] - star[k];
            g[l.z3()][k] = 2.0 * r;
            gs[k] -= 2.0 * r;
        }
        let gz1 = self.p3.transpose() * &gs;
        let gz2 = self.q3.transpose() * &gs;
        g[l.z1()].copy_from_slice(gz1.as_slice());
        g[l.z2()].copy_from_slice(gz2.as_slice());
        Ok(g)
    }

    fn grad_phi_out(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dims = self.dims;
        let b = unflatten_outer(&dims, v)?;
        let l = OuterLayout::new(dims);
        let star = self.z2_star_given(&b.z1, &b.x3);
        let mut g = vec![0.0; v.len()];
        let mut gs = DVector::zeros(dims.d2);
        for (j, x) in b.x2.iter().enumerate() {
            for k in 0..dims.d2 {
                let r = x[k] - star[k];
                g[l.x2(j)][k] = 2.0 * r;
                gs[k] -= 2.0 * r;
            }
        }
        for k in 0..dims.d2 {
            let r = b.z2[k] - star[k];
            g[l.z2()][k] = 2.0 * r;
            gs[k] -= 2.0 * r;
        }
        let den = self
            .workers
            .iter()
            .fold(DVector::zeros(dims.d2), |acc, w| acc + &w.h2);
        let mut gz1 = DVector::zeros(dims.d1);
        for (j, w) in self.workers.iter().enumerate() {
            let wg = DMatrix::from_diagonal(&w.h2.component_div(&den)) * &gs;
            gz1 += w.a2.transpose() * &wg;
            let gx3 = w.c2.transpose() * &wg;
            g[l.x3(j)].copy_from_slice(gx3.as_slice());
        }
        g[l.z1()].copy_from_slice(gz1.as_slice());
        Ok(g)
    }

    fn inner_feasible_point(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dims = self.dims;
        check_len("inner point", dims.inner_dim(), v.len())?;
        let b = unflatten_inner(&dims, v)?;
        let l = InnerLayout::new(dims);
        let star = self.z3_star(&b.z1, &b.z2);
        let mut out = v.to_vec();
        for j in 0..dims.n_workers {
            out[l.x3(j)].copy_from_slice(&star);
        }
        out[l.z3()].copy_from_slice(&star);
        Ok(out)
    }

    fn outer_feasible_point(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dims = self.dims;
        let b = unflatten_outer(&dims, v)?;
        let l = OuterLayout::new(dims);
        let star = self.z2_star_given(&b.z1, &b.x3);
        let mut out = v.to_vec();
        for j in 0..dims.n_workers {
            out[l.x2(j)].copy_from_slice(&star);
        }
        out[l.z2()].copy_from_slice(&star);
        Ok(out)
    }

    fn phi_lipschitz(&self) -> (f64, f64) {
        let dims = self.dims;
        let hess_norm = |len: usize, grad: &dyn Fn(&[f64]) -> Result<Vec<f64>>| -> f64 {
            let g0 = grad(&vec![0.0; len]).expect("dimension matches");
            let h = DMatrix::from_fn(len, len, |r, c| {
                let mut e = vec![0.0; len];
                e[c] = 1.0;
                grad(&e).expect("dimension matches")[r] - g0[r]
            });
            let sym = (&h + h.transpose()) * 0.5;
            sym.symmetric_eigenvalues()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        };
        (
            hess_norm(dims.inner_dim(), &|v| self.grad_phi_in(v)),
            hess_norm(dims.outer_dim(), &|v| self.grad_phi_out(v)),
        )
    }
}
