//! The per-iteration dual: maximize `-1/2 a^T A a + c^T a` over `a >= 0`.

use nalgebra::{DMatrix, DVector};

use crate::constraints::LinearizedConstraints;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;
const RIDGE_SCALE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DualProblem {
    /// Ridged quadratic term.
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub ridge: f64,
}

impl DualProblem {
    /// Wraps `(A, c)`, symmetrizing `A` and adding a relative ridge.
    pub fn new(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != c.len() {
            return Err(Error::Shape(format!(
                "dual quadratic is {}x{}, linear term has {}",
                a.nrows(),
                a.ncols(),
                c.len()
            )));
        }
        let mut a = (&a + a.transpose()) * 0.5;
        let dim = a.nrows();
        let ridge = if dim == 0 {
            0.0
        } else {
            RIDGE_SCALE * a.trace().max(0.0) / dim as f64
        };
        for i in 0..dim {
            a[(i, i)] += ridge;
        }
        Ok(Self { a, c, ridge })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, alpha: &DVector<f64>) -> f64 {
        -0.5 * alpha.dot(&(&self.a * alpha)) + self.c.dot(alpha)
    }

    /// `A a - c`; nonnegative at a dual-feasible point.
    pub fn slack(&self, alpha: &DVector<f64>) -> DVector<f64> {
        &self.a * alpha - &self.c
    }

    /// Largest violation of `slack >= 0` and of `a_i slack_i = 0`.
    pub fn kkt_residual(&self, alpha: &DVector<f64>) -> f64 {
        let s = self.slack(alpha);
        let mut r: f64 = 0.0;
        for i in 0..self.dim() {
            r = r.max(-s[i]).max((alpha[i] * s[i]).abs() / (1.0 + self.c[i].abs()));
        }
        r
    }
}

/// Terms of the dual at the current trajectory. Vectors are stacked over the
/// support grid (`k`, `weighted_residual`, `xi`) or the obstacle grid (`h`).
#[derive(Clone, Copy, Debug)]
pub struct DualInputs<'a> {
    pub k: &'a DMatrix<f64>,
    /// Support x obstacle cross Gram matrix.
    pub k_tilde: &'a DMatrix<f64>,
    /// `Sigma^-1 (xi - mu)`
    pub weighted_residual: &'a DVector<f64>,
    pub xi: &'a DVector<f64>,
    pub h: &'a DVector<f64>,
    pub lambda: f64,
    pub beta: f64,
    pub lambda_obs: f64,
    pub constraints: &'a LinearizedConstraints,
}

pub fn build_dual(inp: &DualInputs) -> Result<DualProblem> {
    if !(inp.beta > 0.0) {
        return Err(Error::invalid("beta", "must be > 0"));
    }
    let n = inp.k.nrows();
    let g = inp.constraints;
    let shapes_ok = inp.k.ncols() == n
        && inp.weighted_residual.len() == n
        && inp.xi.len() == n
        && inp.k_tilde.nrows() == n
        && inp.k_tilde.ncols() == inp.h.len()
        && g.state_dim * g.blocks.len() == n;
    if !shapes_ok {
        return Err(Error::Shape(
            "dual inputs disagree on the support/obstacle grid sizes".into(),
        ));
    }
    let a = g.congruence(inp.k) / inp.beta;
    let mut drive = inp.k * inp.weighted_residual + inp.xi * inp.lambda;
    if inp.lambda_obs != 0.0 {
        drive += inp.k_tilde * inp.h * inp.lambda_obs;
    }
    let c = g.gt_mul(&drive) / inp.beta - &g.values;
    DualProblem::new(a, c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub alpha: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration, starting with the initial point.
    pub objective: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

const NEWTON_STEPS: usize = 8;
const BACKTRACKS: usize = 30;

/// Backtracking along the projection arc `P(a - tau g)`; `None` if no trial
/// decreases the objective.
fn projected_search(
    p: &DualProblem,
    alpha: &DVector<f64>,
    g: &DVector<f64>,
    mut tau: f64,
    f: f64,
) -> Option<(DVector<f64>, f64)> {
    if !tau.is_finite() {
        return None;
    }
    for _ in 0..BACKTRACKS {
        let trial = (alpha - g * tau).map(|v| v.max(0.0));
        let ft = -p.objective(&trial);
        if ft < f {
            return Some((trial, ft));
        }
        tau *= 0.5;
    }
    None
}

fn projected_gradient(alpha: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(g.len(), |i, _| if alpha[i] <= 0.0 && g[i] > 0.0 { 0.0 } else { g[i] })
}

/// Projected gradient with exact line search plus a Newton step on the free
/// set. `warm` is projected onto `a >= 0` and ignored on size mismatch.
pub fn solve_nonneg_qp(p: &DualProblem, opts: QpOptions, warm: Option<&DVector<f64>>) -> Result<DualSolution> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::invalid("qp options", "tol must be > 0 and max_iter positive"));
    }
    let dim = p.dim();
    let mut alpha = match warm {
        Some(w) if w.len() == dim => w.map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 }),
        _ => DVector::zeros(dim),
    };
    let mut f = -p.objective(&alpha);
    let mut history = vec![-f];
    let mut iterations = 0;
    loop {
        let residual = p.kkt_residual(&alpha);
        if residual <= opts.tol {
            return Ok(DualSolution {
                alpha,
                kkt_residual: residual,
                iterations,
                converged: true,
                objective: history,
            });
        }
        if iterations == opts.max_iter {
            return Ok(DualSolution {
                alpha,
                kkt_residual: residual,
                iterations,
                converged: false,
                objective: history,
            });
        }
        iterations += 1;

        // gradient of the minimization form 1/2 a^T A a - c^T a
        let g = p.slack(&alpha);
        let pg = projected_gradient(&alpha, &g);
        let pg2 = pg.norm_squared();
        if pg2 > 0.0 {
            let curv = pg.dot(&(&p.a * &pg));
            let step_max = (0..dim)
                .filter(|&i| pg[i] > 0.0)
                .map(|i| alpha[i] / pg[i])
                .fold(f64::INFINITY, f64::min);
            if curv <= 0.0 && step_max.is_infinite() {
                let i = (0..dim).find(|&i| pg[i] < 0.0).unwrap_or(0);
                return Err(Error::UnboundedDual(i));
            }
            let tau = if curv > 0.0 { pg2 / curv } else { step_max };
            if let Some((next, fnext)) = projected_search(p, &alpha, &g, tau, f) {
                alpha = next;
                f = fnext;
            } else {
                let t = tau.min(step_max);
                let mut next = &alpha - &pg * t;
                next.apply(|v| *v = v.max(0.0));
                let fc = -p.objective(&next);
                if fc <= f {
                    alpha = next;
                    f = fc;
                }
            }
        }

        // Newton steps on the free set: projected first, capped as fallback
        for _ in 0..NEWTON_STEPS {
            let free: Vec<usize> = (0..dim).filter(|&i| alpha[i] > 0.0).collect();
            if free.is_empty() {
                break;
            }
            let g = p.slack(&alpha);
            let aff = p.a.select_rows(&free).select_columns(&free);
            let gf = DVector::from_fn(free.len(), |k, _| g[free[k]]);
            let Some(chol) = aff.cholesky() else { break };
            let d = chol.solve(&gf);
            let mut projected = alpha.clone();
            for (k, &i) in free.iter().enumerate() {
                projected[i] = (alpha[i] - d[k]).max(0.0);
            }
            let fp = -p.objective(&projected);
            if fp <= f {
                let shrank = free.iter().any(|&i| projected[i] == 0.0);
                alpha = projected;
                f = fp;
                if !shrank {
                    break;
                }
                continue;
            }
            let mut t: f64 = 1.0;
            for (k, &i) in free.iter().enumerate() {
                if d[k] > 0.0 {
                    t = t.min(alpha[i] / d[k]);
                }
            }
            let mut capped = alpha.clone();
            for (k, &i) in free.iter().enumerate() {
                capped[i] = (alpha[i] - t * d[k]).max(0.0);
            }
            let fc = -p.objective(&capped);
            if fc <= f {
                alpha = capped;
                f = fc;
            }
            break;
        }
        history.push(-f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{linear_constraint, linearize, ConstraintSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(rank, n, |_, _| rng.gen_range(-1.0..1.0));
        b.transpose() * b
    }

    #[test]
    fn scalar_closed_form() {
        for (a, c) in [(2.0, 3.0), (0.5, -1.0), (4.0, 0.0)] {
            let p = DualProblem::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, c)).unwrap();
            let s = solve_nonneg_qp(&p, QpOptions::default(), None).unwrap();
            assert!(s.converged);
            assert!((s.alpha[0] - (c / p.a[(0, 0)]).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_quadratic() {
        let p = DualProblem::new(DMatrix::zeros(3, 3), DVector::from_vec(vec![-1.0, 0.0, -2.0])).unwrap();
        let s = solve_nonneg_qp(&p, QpOptions::default(), None).unwrap();
        assert_eq!(s.alpha, DVector::zeros(3));

        let p = DualProblem::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![-1.0, 0.5])).unwrap();
        assert!(matches!(
            solve_nonneg_qp(&p, QpOptions::default(), None),
            Err(Error::UnboundedDual(1))
        ));
    }

    #[test]
    fn monotone_and_warm_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_psd(&mut rng, 30, 20);
            let c = DVector::from_fn(30, |_, _| rng.gen_range(-1.0..1.0));
            let p = DualProblem::new(a, c).unwrap();
            let cold = solve_nonneg_qp(&p, QpOptions::default(), None).unwrap();
            assert!(cold.converged);
            assert!(cold.alpha.iter().all(|v| *v >= 0.0));
            for w in cold.objective.windows(2) {
                assert!(w[1] >= w[0]);
            }
            let warm = solve_nonneg_qp(&p, QpOptions::default(), Some(&cold.alpha)).unwrap();
            assert!(warm.iterations <= 1);
        }
    }

    #[test]
    fn iteration_cap_returns_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = DualProblem::new(
            random_psd(&mut rng, 40, 40),
            DVector::from_fn(40, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let s = solve_nonneg_qp(
            &p,
            QpOptions {
                tol: 1e-30,
                max_iter: 1,
            },
            None,
        )
        .unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 1);
        assert!(s.objective[1] >= s.objective[0]);
    }

    fn single_point_inputs() -> (DMatrix<f64>, LinearizedConstraints, DVector<f64>, DVector<f64>) {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 8.0]);
        let mut set = ConstraintSet::new(1, 1);
        set.add(linear_constraint(0, DVector::from_vec(vec![0.7, -0.3]), 0.1))
            .unwrap();
        let xi = DVector::from_vec(vec![0.4, 1.5]);
        let lin = linearize(&set, std::slice::from_ref(&xi)).unwrap();
        let wr = DVector::from_vec(vec![-2.0, 0.5]);
        (k, lin, xi, wr)
    }

    #[test]
    fn one_point_hand_expansion() {
        let beta = 5.0;
        let (k, lin, xi, wr) = single_point_inputs();
        let kt = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.1, 7.0]);
        let h = DVector::from_vec(vec![-1.0, 0.0]);
        let (lambda, lambda_obs) = (0.01, 3.0);
        let p = build_dual(&DualInputs {
            k: &k,
            k_tilde: &kt,
            weighted_residual: &wr,
            xi: &xi,
            h: &h,
            lambda,
            beta,
            lambda_obs,
            constraints: &lin,
        })
        .unwrap();
        // theta = (0.7, -0.3): A = theta^T K theta / beta
        let (t0, t1) = (0.7, -0.3);
        let a = (t0 * t0 * 1.0 + 2.0 * t0 * t1 * 0.2 + t1 * t1 * 8.0) / beta;
        assert!((p.a[(0, 0)] - a * (1.0 + 1e-10)).abs() < 1e-15);
        // K wr = (-2 + 0.1, -0.4 + 4) ; lambda xi ; lambda_obs Kt h = 3 * (-0.9, 0.1)
        let drive0 = -1.9 + lambda * 0.4 + lambda_obs * -0.9;
        let drive1 = 3.6 + lambda * 1.5 + lambda_obs * 0.1;
        let q = t0 * 0.4 + t1 * 1.5 + 0.1;
        let c = -q + (t0 * drive0 + t1 * drive1) / beta;
        assert!((p.c[0] - c).abs() < 1e-14);

        let p2 = build_dual(&DualInputs {
            beta: 2.0 * beta,
            k: &k,
            k_tilde: &kt,
            weighted_residual: &wr,
            xi: &xi,
            h: &h,
            lambda,
            lambda_obs,
            constraints: &lin,
        })
        .unwrap();
        assert!((&p2.a * 2.0 - &p.a).amax() < 1e-15);
        assert!(((&p2.c + &lin.values) * 2.0 - (&p.c + &lin.values)).amax() < 1e-15);
    }

    #[test]
    fn vanishing_gradients() {
        let mut set = ConstraintSet::new(1, 1);
        set.add(linear_constraint(0, DVector::zeros(2), 0.3)).unwrap();
        let xi = DVector::from_vec(vec![1.0, 1.0]);
        let lin = linearize(&set, std::slice::from_ref(&xi)).unwrap();
        let k = DMatrix::identity(2, 2);
        let kt = DMatrix::zeros(2, 0);
        let p = build_dual(&DualInputs {
            k: &k,
            k_tilde: &kt,
            weighted_residual: &xi,
            xi: &xi,
            h: &DVector::zeros(0),
            lambda: 0.1,
            beta: 1.0,
            lambda_obs: 0.0,
            constraints: &lin,
        })
        .unwrap();
        assert_eq!(p.a, DMatrix::zeros(1, 1));
        assert_eq!(p.c[0], -0.3);
    }
}
