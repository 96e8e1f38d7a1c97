//! Canonical coordinate orders of the two cut spaces.
//!
//! Inner: `[x3_1, .., x3_N, z1, z2', z3]`.
//! Outer: `[x2_1, .., x2_N, x3_1, .., x3_N, z1, z2, z3]`.

use std::ops::Range;

use crate::error::{check_len, Result};
use crate::problem::{Dims, SystemState};

/// Block offsets inside the inner cut space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnerLayout {
    dims: Dims,
}

impl InnerLayout {
    pub fn new(dims: Dims) -> Self {
        InnerLayout { dims }
    }

    pub fn len(&self) -> usize {
        self.dims.inner_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x3(&self, j: usize) -> Range<usize> {
        let d3 = self.dims.d3;
        j * d3..(j + 1) * d3
    }

    pub fn z1(&self) -> Range<usize> {
        let s = self.dims.n_workers * self.dims.d3;
        s..s + self.dims.d1
    }

    pub fn z2(&self) -> Range<usize> {
        let s = self.z1().end;
        s..s + self.dims.d2
    }

    pub fn z3(&self) -> Range<usize> {
        let s = self.z2().end;
        s..s + self.dims.d3
    }
}

/// Block offsets inside the outer cut space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OuterLayout {
    dims: Dims,
}

impl OuterLayout {
    pub fn new(dims: Dims) -> Self {
        OuterLayout { dims }
    }

    pub fn len(&self) -> usize {
        self.dims.outer_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x2(&self, j: usize) -> Range<usize> {
        let d2 = self.dims.d2;
        j * d2..(j + 1) * d2
    }

    pub fn x3(&self, j: usize) -> Range<usize> {
        let s = self.dims.n_workers * self.dims.d2;
        let d3 = self.dims.d3;
        s + j * d3..s + (j + 1) * d3
    }

    pub fn z1(&self) -> Range<usize> {
        let s = self.dims.n_workers * (self.dims.d2 + self.dims.d3);
        s..s + self.dims.d1
    }

    pub fn z2(&self) -> Range<usize> {
        let s = self.z1().end;
        s..s + self.dims.d2
    }

    pub fn z3(&self) -> Range<usize> {
        let s = self.z2().end;
        s..s + self.dims.d3
    }
}

/// Unflattened inner-space point.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerBlocks {
    pub x3: Vec<Vec<f64>>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
}

/// Unflattened outer-space point.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterBlocks {
    pub x2: Vec<Vec<f64>>,
    pub x3: Vec<Vec<f64>>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
}

pub fn flatten_inner(dims: &Dims, state: &SystemState, z2_prime: &[f64]) -> Result<Vec<f64>> {
    state.check(dims)?;
    check_len("z2'", dims.d2, z2_prime.len())?;
    let mut v = Vec::with_capacity(dims.inner_dim());
    for x3 in &state.x3 {
        v.extend_from_slice(x3);
    }
    v.extend_from_slice(&state.z1);
    v.extend_from_slice(z2_prime);
    v.extend_from_slice(&state.z3);
    Ok(v)
}

pub fn unflatten_inner(dims: &Dims, v: &[f64]) -> Result<InnerBlocks> {
    check_len("inner cut-space point", dims.inner_dim(), v.len())?;
    let l = InnerLayout::new(*dims);
    Ok(InnerBlocks {
        x3: (0..dims.n_workers).map(|j| v[l.x3(j)].to_vec()).collect(),
        z1: v[l.z1()].to_vec(),
        z2: v[l.z2()].to_vec(),
        z3: v[l.z3()].to_vec(),
    })
}

pub fn flatten_outer(dims: &Dims, state: &SystemState) -> Result<Vec<f64>> {
    state.check(dims)?;
    let mut v = Vec::with_capacity(dims.outer_dim());
    for x2 in &state.x2 {
        v.extend_from_slice(x2);
    }
    for x3 in &state.x3 {
        v.extend_from_slice(x3);
    }
    v.extend_from_slice(&state.z1);
    v.extend_from_slice(&state.z2);
    v.extend_from_slice(&state.z3);
    Ok(v)
}

pub fn unflatten_outer(dims: &Dims, v: &[f64]) -> Result<OuterBlocks> {
    check_len("outer cut-space point", dims.outer_dim(), v.len())?;
    let l = OuterLayout::new(*dims);
    Ok(OuterBlocks {
        x2: (0..dims.n_workers).map(|j| v[l.x2(j)].to_vec()).collect(),
        x3: (0..dims.n_workers).map(|j| v[l.x3(j)].to_vec()).collect(),
        z1: v[l.z1()].to_vec(),
        z2: v[l.z2()].to_vec(),
        z3: v[l.z3()].to_vec(),
    })
}

impl OuterBlocks {
    /// Writes the blocks back into a state, keeping its `x1` blocks and `t`.
    pub fn into_state(self, base: &SystemState) -> SystemState {
        SystemState {
            x1: base.x1.clone(),
            x2: self.x2,
            x3: self.x3,
            z1: self.z1,
            z2: self.z2,
            z3: self.z3,
            t: base.t,
        }
    }
}
