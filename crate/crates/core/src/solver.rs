//! Iterative kernelized trajectory optimization.
//!
//! The trajectory is kept as `xi(t) = k(t) gamma - k~(t) rho`, where `k(t)`
//! is the block kernel row against the support grid and `k~(t)` the row
//! against the obstacle grid. Each iteration linearizes the constraints and
//! obstacle cost at the current trajectory, solves a small dual QP and
//! updates the two coefficient vectors.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{linearize, ConstraintSet, LinearizedConstraints};
use crate::dual_qp::{build_dual, solve_nonneg_qp, DualInputs, QpOptions};
use crate::error::{Error, Result};
use crate::gmm::ReferenceTrajectory;
use crate::kernel::{apply_row, assemble_gram, KernelConfig};
use crate::kinematics::KinematicModel;
use crate::obstacle::{assemble_h, Obstacle};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
const POWER_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub beta: f64,
    pub lambda_obs: f64,
    pub kernel: KernelConfig,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub support_times: Vec<f64>,
    pub obstacle_times: Vec<f64>,
    pub qp: QpOptions,
}

fn check_grid(name: &'static str, times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid(name, "grid is empty"));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(name, "grid must be finite and strictly increasing"));
    }
    Ok(())
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda", format!("must be > 0, got {}", self.lambda)));
        }
        if !(self.beta > self.lambda) {
            return Err(Error::invalid(
                "beta",
                format!("must exceed lambda ({}), got {}", self.lambda, self.beta),
            ));
        }
        if !(self.lambda_obs >= 0.0) {
            return Err(Error::invalid(
                "lambda_obs",
                format!("must be >= 0, got {}", self.lambda_obs),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be > 0"));
        }
        self.kernel.validate()?;
        check_grid("support_times", &self.support_times)?;
        check_grid("obstacle_times", &self.obstacle_times)
    }

    /// `1 - lambda / beta`
    pub fn decay(&self) -> f64 {
        1.0 - self.lambda / self.beta
    }
}

/// `N` evenly spaced times covering `[start, end]`.
pub fn uniform_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    end
                } else {
                    start + (end - start) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFunction {
    pub kernel: KernelConfig,
    pub support_times: Vec<f64>,
    pub obstacle_times: Vec<f64>,
    pub gamma: DVector<f64>,
    pub rho: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrajectoryDocument {
    kernel: KernelConfig,
    support_times: Vec<f64>,
    obstacle_times: Vec<f64>,
    gamma: Vec<f64>,
    rho: Vec<f64>,
}

impl TrajectoryFunction {
    pub fn new(
        kernel: KernelConfig,
        support_times: Vec<f64>,
        obstacle_times: Vec<f64>,
        gamma: DVector<f64>,
        rho: DVector<f64>,
    ) -> Result<Self> {
        kernel.validate()?;
        let s = kernel.state_dim();
        if gamma.len() != s * support_times.len() || rho.len() != s * obstacle_times.len() {
            return Err(Error::Shape(format!(
                "gamma/rho have {}/{} entries for {} support and {} obstacle times of dimension {s}",
                gamma.len(),
                rho.len(),
                support_times.len(),
                obstacle_times.len()
            )));
        }
        Ok(Self {
            kernel,
            support_times,
            obstacle_times,
            gamma,
            rho,
        })
    }

    pub fn dof(&self) -> usize {
        self.kernel.dof
    }

    /// `[q(t), qdot(t)]`
    pub fn predict(&self, t: f64) -> DVector<f64> {
        let mut xi = apply_row(&self.kernel, t, &self.support_times, &self.gamma);
        if self.rho.iter().any(|v| *v != 0.0) {
            xi -= apply_row(&self.kernel, t, &self.obstacle_times, &self.rho);
        }
        xi
    }

    pub fn predict_many(&self, times: &[f64]) -> Vec<DVector<f64>> {
        times.iter().map(|&t| self.predict(t)).collect()
    }

    pub fn position(&self, t: f64) -> Vec<f64> {
        self.predict(t).rows(0, self.dof()).iter().copied().collect()
    }

    /// `samples` evenly spaced states over the support-grid span.
    pub fn densify(&self, samples: usize) -> (Vec<f64>, Vec<DVector<f64>>) {
        let times = uniform_grid(self.support_times[0], *self.support_times.last().unwrap(), samples);
        let states = self.predict_many(&times);
        (times, states)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TrajectoryDocument {
            kernel: self.kernel,
            support_times: self.support_times.clone(),
            obstacle_times: self.obstacle_times.clone(),
            gamma: self.gamma.iter().copied().collect(),
            rho: self.rho.iter().copied().collect(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TrajectoryDocument = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        Self::new(
            doc.kernel,
            doc.support_times,
            doc.obstacle_times,
            DVector::from_vec(doc.gamma),
            DVector::from_vec(doc.rho),
        )
    }
}

/// What the trajectory has to respect besides the reference.
#[derive(Clone, Copy, Debug)]
pub struct Environment<'a> {
    pub constraints: &'a ConstraintSet,
    pub model: &'a KinematicModel,
    pub obstacles: &'a [Obstacle],
}

/// Scalar health of one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Obstacle cost summed over the obstacle grid.
    pub u_obs: f64,
    /// `max(-g, 0)` over all constraints at support times.
    pub max_violation: f64,
    /// Smallest constraint value (`+inf` without constraints).
    pub min_constraint: f64,
    /// Closest body point to any obstacle center over the obstacle grid.
    pub min_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Metrics of the trajectory produced by this iteration.
    pub metrics: Metrics,
    pub delta_gamma: f64,
    pub delta_rho: f64,
    pub kkt_residual: f64,
    pub qp_iterations: usize,
    pub qp_converged: bool,
    /// Number of multipliers with `alpha > 0`.
    pub active: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub initial: Metrics,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn final_metrics(&self) -> Metrics {
        self.records.last().map_or(self.initial, |r| r.metrics)
    }
}

/// Linearization of one trajectory on the solver grids.
#[derive(Clone, Debug)]
pub struct Linearization {
    /// Stacked states at support times.
    pub xi: DVector<f64>,
    /// Stacked states at obstacle times.
    pub xi_obstacle: DVector<f64>,
    pub h: DVector<f64>,
    pub u_obs: f64,
    pub min_distance: f64,
    pub constraints: LinearizedConstraints,
}

#[derive(Clone, Debug)]
pub struct Step {
    pub next: TrajectoryFunction,
    pub alpha: DVector<f64>,
    pub record: IterationRecord,
}

/// Solver state with the Gram matrices and reference precomputed.
#[derive(Clone, Debug)]
pub struct Ekmp {
    cfg: SolverConfig,
    k: DMatrix<f64>,
    k_so: DMatrix<f64>,
    k_os: DMatrix<f64>,
    k_oo: DMatrix<f64>,
    mu: DVector<f64>,
    sigma: Vec<DMatrix<f64>>,
    sigma_inv: Vec<DMatrix<f64>>,
    /// `L^-1` with `Sigma_n = L L^T`.
    sigma_inv_chol: Vec<DMatrix<f64>>,
}

impl Ekmp {
    pub fn new(cfg: SolverConfig, reference: &ReferenceTrajectory) -> Result<Self> {
        cfg.validate()?;
        let dof = cfg.kernel.dof;
        if reference.dof() != dof {
            return Err(Error::Shape(format!(
                "reference has {} dof, kernel has {dof}",
                reference.dof()
            )));
        }
        let times = reference.times();
        if times.len() != cfg.support_times.len()
            || times
                .iter()
                .zip(&cfg.support_times)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
        {
            return Err(Error::InconsistentDemos(
                "reference times must equal the support grid".into(),
            ));
        }
        let k = assemble_gram(&cfg.kernel, &cfg.support_times, &cfg.support_times)?.matrix;
        let k_so = assemble_gram(&cfg.kernel, &cfg.support_times, &cfg.obstacle_times)?.matrix;
        let k_os = assemble_gram(&cfg.kernel, &cfg.obstacle_times, &cfg.support_times)?.matrix;
        let k_oo = assemble_gram(&cfg.kernel, &cfg.obstacle_times, &cfg.obstacle_times)?.matrix;
        let s = 2 * dof;
        let mut mu = DVector::zeros(s * times.len());
        let mut sigma = Vec::with_capacity(times.len());
        let mut sigma_inv = Vec::with_capacity(times.len());
        let mut sigma_inv_chol = Vec::with_capacity(times.len());
        for (n, p) in reference.points().iter().enumerate() {
            mu.rows_mut(n * s, s).copy_from(&p.mean);
            let chol = p
                .covariance
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite(format!("reference covariance at t = {}", p.t)))?;
            sigma.push(p.covariance.clone());
            sigma_inv.push(chol.inverse());
            let l_inv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(s, s))
                .ok_or_else(|| Error::Singular(format!("covariance factor at t = {}", p.t)))?;
            sigma_inv_chol.push(l_inv);
        }
        Ok(Self {
            cfg,
            k,
            k_so,
            k_os,
            k_oo,
            mu,
            sigma,
            sigma_inv,
            sigma_inv_chol,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Support x obstacle Gram matrix.
    pub fn cross_gram(&self) -> &DMatrix<f64> {
        &self.k_so
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    fn state_dim(&self) -> usize {
        self.cfg.kernel.state_dim()
    }

    fn wrap(&self, gamma: DVector<f64>, rho: DVector<f64>) -> TrajectoryFunction {
        TrajectoryFunction {
            kernel: self.cfg.kernel,
            support_times: self.cfg.support_times.clone(),
            obstacle_times: self.cfg.obstacle_times.clone(),
            gamma,
            rho,
        }
    }

    /// Largest eigenvalue of `Sigma^-1/2 K Sigma^-1/2` by power iteration.
    /// Iterations stay stable on the imitation term only while this is below
    /// `2 beta - lambda`; obstacle and constraint terms tighten the bound.
    pub fn imitation_curvature(&self) -> f64 {
        let s = self.state_dim();
        let blocks = &self.sigma_inv_chol;
        let apply = |v: &DVector<f64>| {
            let mut u = DVector::zeros(v.len());
            for (n, l) in blocks.iter().enumerate() {
                u.rows_mut(n * s, s).copy_from(&(l.transpose() * v.rows(n * s, s)));
            }
            let w = &self.k * u;
            let mut y = DVector::zeros(v.len());
            for (n, l) in blocks.iter().enumerate() {
                y.rows_mut(n * s, s).copy_from(&(l * w.rows(n * s, s)));
            }
            y
        };
        let mut v = DVector::from_fn(self.mu.len(), |i, _| 1.0 + (i % 7) as f64 * 0.1);
        v.normalize_mut();
        let mut estimate = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let y = apply(&v);
            estimate = v.dot(&y);
            let norm = y.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = y / norm;
        }
        estimate
    }

    /// `gamma = (K + lambda Sigma)^-1 mu`, `rho = 0`.
    pub fn kmp_init(&self) -> Result<TrajectoryFunction> {
        let s = self.state_dim();
        let mut m = self.k.clone();
        for (n, sig) in self.sigma.iter().enumerate() {
            let mut block = m.view_mut((n * s, n * s), (s, s));
            block += sig * self.cfg.lambda;
        }
        let m = (&m + m.transpose()) * 0.5;
        let gamma = match m.clone().cholesky() {
            Some(chol) => chol.solve(&self.mu),
            None => m
                .clone()
                .lu()
                .solve(&self.mu)
                .ok_or_else(|| Error::Singular("K + lambda Sigma".into()))?,
        };
        let residual = (&m * &gamma - &self.mu).norm();
        if !(residual <= 1e-6 * self.mu.norm().max(f64::MIN_POSITIVE)) {
            return Err(Error::Singular(format!("K + lambda Sigma solve residual {residual:e}")));
        }
        let rho = DVector::zeros(s * self.cfg.obstacle_times.len());
        Ok(self.wrap(gamma, rho))
    }

    fn check_environment(&self, env: &Environment) -> Result<()> {
        let dof = self.cfg.kernel.dof;
        if env.constraints.n_points() != self.cfg.support_times.len() || env.constraints.dof() != dof {
            return Err(Error::Shape(format!(
                "constraint set is for {} points / {} dof, solver has {} / {dof}",
                env.constraints.n_points(),
                env.constraints.dof(),
                self.cfg.support_times.len()
            )));
        }
        if !env.obstacles.is_empty() && env.model.dof() != dof {
            return Err(Error::Shape(format!(
                "kinematic model has {} dof, trajectory has {dof}",
                env.model.dof()
            )));
        }
        for o in env.obstacles {
            o.validate()?;
        }
        Ok(())
    }

    /// States, obstacle gradients and linearized constraints at `tf`.
    pub fn linearize(&self, tf: &TrajectoryFunction, env: &Environment) -> Result<Linearization> {
        let s = self.state_dim();
        let dof = self.cfg.kernel.dof;
        let xi = &self.k * &tf.gamma - &self.k_so * &tf.rho;
        let xi_obstacle = &self.k_os * &tf.gamma - &self.k_oo * &tf.rho;
        let m = self.cfg.obstacle_times.len();
        let (h, u_obs, min_distance) = if env.obstacles.is_empty() {
            (DVector::zeros(s * m), 0.0, f64::INFINITY)
        } else {
            let positions: Vec<Vec<f64>> = (0..m)
                .map(|j| xi_obstacle.rows(j * s, dof).iter().copied().collect())
                .collect();
            let stack = assemble_h(env.model, env.obstacles, &positions)?;
            let min_d = stack.min_distance.iter().copied().fold(f64::INFINITY, f64::min);
            (stack.h, stack.cost, min_d)
        };
        let states: Vec<DVector<f64>> = (0..self.cfg.support_times.len())
            .map(|n| xi.rows(n * s, s).into_owned())
            .collect();
        let constraints = linearize(env.constraints, &states)?;
        Ok(Linearization {
            xi,
            xi_obstacle,
            h,
            u_obs,
            min_distance,
            constraints,
        })
    }

    pub fn metrics(&self, tf: &TrajectoryFunction, env: &Environment) -> Result<Metrics> {
        let lin = self.linearize(tf, env)?;
        Ok(metrics_of(&lin))
    }

    /// `Sigma^-1 (xi - mu)`
    pub fn weighted_residual(&self, xi: &DVector<f64>) -> DVector<f64> {
        let s = self.state_dim();
        let mut out = DVector::zeros(xi.len());
        for (n, inv) in self.sigma_inv.iter().enumerate() {
            let r = xi.rows(n * s, s) - self.mu.rows(n * s, s);
            out.rows_mut(n * s, s).copy_from(&(inv * r));
        }
        out
    }

    /// One update of `(gamma, rho)`; `warm` seeds the dual solve.
    pub fn iterate_once(
        &self,
        tf: &TrajectoryFunction,
        env: &Environment,
        warm: Option<&DVector<f64>>,
        iteration: usize,
    ) -> Result<Step> {
        self.check_environment(env)?;
        let started = Instant::now();
        let lin = self.linearize(tf, env)?;
        let wr = self.weighted_residual(&lin.xi);

        let (alpha, kkt_residual, qp_iterations, qp_converged) = if lin.constraints.is_empty() {
            (DVector::zeros(0), 0.0, 0, true)
        } else {
            let dual = build_dual(&DualInputs {
                k: &self.k,
                k_tilde: &self.k_so,
                weighted_residual: &wr,
                xi: &lin.xi,
                h: &lin.h,
                lambda: self.cfg.lambda,
                beta: self.cfg.beta,
                lambda_obs: self.cfg.lambda_obs,
                constraints: &lin.constraints,
            })?;
            let sol = solve_nonneg_qp(&dual, self.cfg.qp, warm)?;
            (sol.alpha, sol.kkt_residual, sol.iterations, sol.converged)
        };

        let e = if alpha.is_empty() {
            wr
        } else {
            wr - lin.constraints.g_mul(&alpha)
        };
        let decay = self.cfg.decay();
        let beta = self.cfg.beta;
        let gamma = &tf.gamma * decay - e / beta;
        let rho = &tf.rho * decay + &lin.h * (self.cfg.lambda_obs / beta);
        let delta_gamma = (&gamma - &tf.gamma).norm();
        let delta_rho = (&rho - &tf.rho).norm();
        let next = self.wrap(gamma, rho);
        let metrics = self.metrics(&next, env)?;
        let active = alpha.iter().filter(|a| **a > 0.0).count();
        Ok(Step {
            next,
            alpha,
            record: IterationRecord {
                iteration,
                metrics,
                delta_gamma,
                delta_rho,
                kkt_residual,
                qp_iterations,
                qp_converged,
                active,
                wall_time: started.elapsed().as_secs_f64(),
            },
        })
    }

    pub fn solve(&self, env: &Environment) -> Result<(TrajectoryFunction, IterationTrace)> {
        self.solve_with(env, |_, _| {})
    }

    /// Like [`Ekmp::solve`], calling `observe(iteration, tf)` after every update.
    pub fn solve_with(
        &self,
        env: &Environment,
        mut observe: impl FnMut(usize, &TrajectoryFunction),
    ) -> Result<(TrajectoryFunction, IterationTrace)> {
        self.check_environment(env)?;
        let mut tf = self.kmp_init()?;
        let initial = self.metrics(&tf, env)?;
        let mut records = Vec::new();
        let mut warm: Option<DVector<f64>> = None;
        let mut converged = false;
        for it in 1..=self.cfg.max_iterations {
            let step = self.iterate_once(&tf, env, warm.as_ref(), it)?;
            let done = step.record.delta_gamma < self.cfg.tolerance && step.record.delta_rho < self.cfg.tolerance;
            records.push(step.record);
            tf = step.next;
            warm = Some(step.alpha);
            observe(it, &tf);
            if done {
                converged = true;
                break;
            }
        }
        Ok((
            tf,
            IterationTrace {
                initial,
                records,
                converged,
            },
        ))
    }
}

fn metrics_of(lin: &Linearization) -> Metrics {
    Metrics {
        u_obs: lin.u_obs,
        max_violation: lin.constraints.max_violation(),
        min_constraint: lin.constraints.values.iter().copied().fold(f64::INFINITY, f64::min),
        min_distance: lin.min_distance,
    }
}

pub fn kmp_init(reference: &ReferenceTrajectory, cfg: &SolverConfig) -> Result<TrajectoryFunction> {
    Ekmp::new(cfg.clone(), reference)?.kmp_init()
}

pub fn solve(
    reference: &ReferenceTrajectory,
    cfg: &SolverConfig,
    env: &Environment,
) -> Result<(TrajectoryFunction, IterationTrace)> {
    Ekmp::new(cfg.clone(), reference)?.solve(env)
}
