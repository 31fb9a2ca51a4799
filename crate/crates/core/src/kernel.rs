//! Block kernels coupling position and velocity through finite differences
//! of a scalar kernel.
//!
//! A state at time `t` is laid out as `[q_1..q_O, qdot_1..qdot_O]`. The block
//! between times `ti` and `tj` is
//!
//! ```text
//! [ k_tt I   k_td I ]
//! [ k_dt I   k_dd I ]
//! ```
//!
//! where the `d` sub-blocks are forward differences with step `delta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait ScalarKernel {
    fn value(&self, ti: f64, tj: f64) -> f64;
}

/// `exp(-k_h (ti - tj)^2)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianKernel {
    pub k_h: f64,
}

impl ScalarKernel for GaussianKernel {
    fn value(&self, ti: f64, tj: f64) -> f64 {
        let d = ti - tj;
        (-self.k_h * d * d).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub k_h: f64,
    pub delta: f64,
    pub dof: usize,
}

pub const DEFAULT_DELTA: f64 = 1e-3;

/// The four scalar sub-blocks of one block kernel entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockScalars {
    pub tt: f64,
    pub td: f64,
    pub dt: f64,
    pub dd: f64,
}

pub fn block_scalars_with<K: ScalarKernel>(k: &K, delta: f64, ti: f64, tj: f64) -> BlockScalars {
    let k00 = k.value(ti, tj);
    let k01 = k.value(ti, tj + delta);
    let k10 = k.value(ti + delta, tj);
    let k11 = k.value(ti + delta, tj + delta);
    BlockScalars {
        tt: k00,
        td: (k01 - k00) / delta,
        dt: (k10 - k00) / delta,
        dd: (k11 - k10 - k01 + k00) / (delta * delta),
    }
}

impl KernelConfig {
    pub fn new(k_h: f64, delta: f64, dof: usize) -> Result<Self> {
        let cfg = Self { k_h, delta, dof };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_h > 0.0 && self.k_h.is_finite()) {
            return Err(Error::invalid("k_h", format!("must be > 0, got {}", self.k_h)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", format!("must be > 0, got {}", self.delta)));
        }
        if self.dof == 0 {
            return Err(Error::invalid("dof", "must be positive"));
        }
        Ok(())
    }

    /// State dimension `2 * dof`.
    pub fn state_dim(&self) -> usize {
        2 * self.dof
    }

    fn kernel(&self) -> GaussianKernel {
        GaussianKernel { k_h: self.k_h }
    }

    pub fn scalar(&self, ti: f64, tj: f64) -> f64 {
        self.kernel().value(ti, tj)
    }

    pub fn block_scalars(&self, ti: f64, tj: f64) -> BlockScalars {
        block_scalars_with(&self.kernel(), self.delta, ti, tj)
    }

    /// The `2O x 2O` block kernel between two times.
    pub fn block(&self, ti: f64, tj: f64) -> DMatrix<f64> {
        let s = self.block_scalars(ti, tj);
        let o = self.dof;
        let mut m = DMatrix::zeros(2 * o, 2 * o);
        for a in 0..o {
            m[(a, a)] = s.tt;
            m[(a, o + a)] = s.td;
            m[(o + a, a)] = s.dt;
            m[(o + a, o + a)] = s.dd;
        }
        m
    }
}

pub fn scalar_kernel(cfg: &KernelConfig, ti: f64, tj: f64) -> f64 {
    cfg.scalar(ti, tj)
}

pub fn block_kernel(cfg: &KernelConfig, ti: f64, tj: f64) -> DMatrix<f64> {
    cfg.block(ti, tj)
}

/// Dense block Gram matrix between two time lists.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockKernelMatrix {
    pub row_times: Vec<f64>,
    pub col_times: Vec<f64>,
    pub dof: usize,
    pub matrix: DMatrix<f64>,
}

impl BlockKernelMatrix {
    pub fn rows(&self) -> usize {
        self.row_times.len()
    }

    pub fn cols(&self) -> usize {
        self.col_times.len()
    }

    /// Block `(i, j)` as a `2O x 2O` view copy.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let s = 2 * self.dof;
        self.matrix.view((i * s, j * s), (s, s)).into_owned()
    }
}

pub fn assemble_gram(cfg: &KernelConfig, row_times: &[f64], col_times: &[f64]) -> Result<BlockKernelMatrix> {
    if row_times.is_empty() || col_times.is_empty() {
        return Err(Error::invalid("times", "gram assembly needs non-empty time lists"));
    }
    let o = cfg.dof;
    let s = 2 * o;
    let mut m = DMatrix::zeros(s * row_times.len(), s * col_times.len());
    for (i, &ti) in row_times.iter().enumerate() {
        for (j, &tj) in col_times.iter().enumerate() {
            let b = cfg.block_scalars(ti, tj);
            let (r0, c0) = (i * s, j * s);
            for a in 0..o {
                m[(r0 + a, c0 + a)] = b.tt;
                m[(r0 + a, c0 + o + a)] = b.td;
                m[(r0 + o + a, c0 + a)] = b.dt;
                m[(r0 + o + a, c0 + o + a)] = b.dd;
            }
        }
    }
    Ok(BlockKernelMatrix {
        row_times: row_times.to_vec(),
        col_times: col_times.to_vec(),
        dof: o,
        matrix: m,
    })
}

/// Kernel row `k(t)` against `times` applied to a coefficient vector:
/// returns `sum_j block(t, t_j) * coeffs_j`.
pub fn apply_row(cfg: &KernelConfig, t: f64, times: &[f64], coeffs: &DVector<f64>) -> DVector<f64> {
    let o = cfg.dof;
    let s = 2 * o;
    let mut out = DVector::zeros(s);
    for (j, &tj) in times.iter().enumerate() {
        let b = cfg.block_scalars(t, tj);
        let c = coeffs.rows(j * s, s);
        for a in 0..o {
            out[a] += b.tt * c[a] + b.td * c[o + a];
            out[o + a] += b.dt * c[a] + b.dd * c[o + a];
        }
    }
    out
}
