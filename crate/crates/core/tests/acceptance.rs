//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ekmp::constraints::{
    ball_constraint, box_constraint, desired_point, equality_constraint, linear_constraint, plane_constraint,
    task_halfspace_constraint, task_position_constraint, ConstraintSet, DifferentiableConstraint, PointConstraint,
    Sense,
};
use ekmp::dual_qp::{solve_nonneg_qp, DualProblem, QpOptions};
use ekmp::gmm::{ReferencePoint, ReferenceTrajectory};
use ekmp::kernel::KernelConfig;
use ekmp::kinematics::{KinematicModel, SerialChain};
use ekmp::obstacle::{assemble_h, assemble_h_frozen, Obstacle};
use ekmp::pipeline::{self, RunOptions, RunResult};
use ekmp::scenario::{ConstraintDecl, Scenario};
use ekmp::solver::{uniform_grid, Ekmp, Environment, SolverConfig};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).unwrap_or_else(|v| panic!("{name}: {v:?}"))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() * 0.1 + DMatrix::identity(n, n) * floor
}

/// Gaussian block kernel written out directly from the forward-difference scheme.
fn oracle_block(k_h: f64, delta: f64, dof: usize, ti: f64, tj: f64) -> DMatrix<f64> {
    let k = |a: f64, b: f64| (-k_h * (a - b) * (a - b)).exp();
    let tt = k(ti, tj);
    let td = (k(ti, tj + delta) - tt) / delta;
    let dt = (k(ti + delta, tj) - tt) / delta;
    let dd = (k(ti + delta, tj + delta) - k(ti + delta, tj) - k(ti, tj + delta) + tt) / (delta * delta);
    let mut m = DMatrix::zeros(2 * dof, 2 * dof);
    for a in 0..dof {
        m[(a, a)] = tt;
        m[(a, dof + a)] = td;
        m[(dof + a, a)] = dt;
        m[(dof + a, dof + a)] = dd;
    }
    m
}

fn oracle_gram(k_h: f64, delta: f64, dof: usize, rows: &[f64], cols: &[f64]) -> DMatrix<f64> {
    let s = 2 * dof;
    let mut m = DMatrix::zeros(s * rows.len(), s * cols.len());
    for (i, &a) in rows.iter().enumerate() {
        for (j, &b) in cols.iter().enumerate() {
            m.view_mut((i * s, j * s), (s, s))
                .copy_from(&oracle_block(k_h, delta, dof, a, b));
        }
    }
    m
}

/// Maximizer of `-1/2 a^T A a + c^T a` over `a >= 0` by enumerating free sets.
fn exhaustive_qp(a: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let n = c.len();
    let scale = 1.0 + c.amax() + a.amax();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut alpha = DVector::zeros(n);
        if !free.is_empty() {
            let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
            let rhs = DVector::from_fn(free.len(), |i, _| c[free[i]]);
            let Some(x) = sub.lu().solve(&rhs) else { continue };
            for (k, &i) in free.iter().enumerate() {
                alpha[i] = x[k];
            }
        }
        let slack = a * &alpha - c;
        let feasible = (0..n).all(|i| alpha[i] >= -1e-12 * scale && slack[i] >= -1e-10 * scale);
        if feasible {
            let alpha = alpha.map(|v| v.max(0.0));
            let f = -0.5 * alpha.dot(&(a * &alpha)) + c.dot(&alpha);
            if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                best = Some((f, alpha));
            }
        }
    }
    best.expect("a positive definite QP always has a KKT point").1
}

fn planar_env<'a>(set: &'a ConstraintSet, model: &'a KinematicModel, obstacles: &'a [Obstacle]) -> Environment<'a> {
    Environment {
        constraints: set,
        model,
        obstacles,
    }
}

fn random_reference(
    rng: &mut ChaCha8Rng,
    times: &[f64],
    dof: usize,
    mean: impl Fn(usize, usize) -> f64,
) -> ReferenceTrajectory {
    let s = 2 * dof;
    let points = times
        .iter()
        .enumerate()
        .map(|(n, &t)| ReferencePoint {
            t,
            mean: DVector::from_fn(s, |i, _| mean(n, i)),
            covariance: random_spd(rng, s, 0.05),
        })
        .collect();
    ReferenceTrajectory::new(points).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dof = 2;
    let times = uniform_grid(0.0, 2.0, 20);
    let means: Vec<f64> = (0..times.len() * 2 * dof).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let reference = random_reference(&mut rng, &times, dof, |n, i| means[n * 2 * dof + i]);
    let started = Instant::now();
    let cfg = SolverConfig {
        lambda: 0.5,
        beta: 5.0,
        lambda_obs: 0.0,
        kernel: KernelConfig::new(4.0, 1e-3, dof).unwrap(),
        max_iterations: 1,
        tolerance: 1e-6,
        support_times: times.clone(),
        obstacle_times: times.clone(),
        qp: QpOptions::default(),
    };
    let solver = Ekmp::new(cfg, &reference).unwrap();
    let set = ConstraintSet::new(times.len(), dof);
    let model = KinematicModel::PlanarIdentity;
    let env = planar_env(&set, &model, &[]);
    let init = solver.kmp_init().unwrap();
    let step = solver.iterate_once(&init, &env, None, 1).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let dgamma = (&step.next.gamma - &init.gamma).amax();
    let rho_zero = step.next.rho.iter().all(|v| *v == 0.0);
    check(
        dgamma <= 1e-9 && rho_zero && elapsed < 1.0,
        format!("max |dgamma| = {dgamma:.2e} (<= 1e-9), rho == 0: {rho_zero}, {elapsed:.3} s (< 1 s)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dof = 2;
    let s = 2 * dof;
    let (k_h, delta, lambda, beta, lambda_obs) = (4.0, 1e-3, 0.5, 200.0, 2.0);
    let support = vec![0.0, 0.6, 1.2];
    let obs_times = vec![0.1, 0.5, 0.9, 1.3];
    let reference = random_reference(&mut rng, &support, dof, |n, i| match i {
        0 => -2.0 + 2.0 * n as f64,
        1 => 0.3,
        2 => 3.0,
        _ => 0.0,
    });
    let radius_sq = 2.25;
    let obstacle = Obstacle::new([0.0, 0.0, 0.0], 0.5, 1.0).unwrap();
    let cfg = SolverConfig {
        lambda,
        beta,
        lambda_obs,
        kernel: KernelConfig::new(k_h, delta, dof).unwrap(),
        max_iterations: 5,
        tolerance: 1e-12,
        support_times: support.clone(),
        obstacle_times: obs_times.clone(),
        qp: QpOptions::default(),
    };
    let solver = Ekmp::new(cfg, &reference).unwrap();
    let mut set = ConstraintSet::new(support.len(), dof);
    for n in 0..support.len() {
        set.add(ball_constraint(n, &[0.0, 0.0], radius_sq, &[0, 1]).unwrap())
            .unwrap();
    }
    let model = KinematicModel::PlanarIdentity;
    let obstacles = [obstacle];
    let env = planar_env(&set, &model, &obstacles);

    let mut tf = solver.kmp_init().unwrap();
    let mut warm = None;
    for it in 1..=5 {
        let step = solver.iterate_once(&tf, &env, warm.as_ref(), it).unwrap();
        tf = step.next;
        warm = Some(step.alpha);
    }

    // Functional side: the trajectory is carried only as its values on an
    // evaluation set and updated pointwise.
    let dense = uniform_grid(-0.2, 1.4, 321);
    let eval: Vec<f64> = dense.iter().chain(&support).chain(&obs_times).copied().collect();
    let (ns, no) = (support.len(), obs_times.len());
    let sup_idx = dense.len();
    let obs_idx = dense.len() + ns;
    let k = oracle_gram(k_h, delta, dof, &support, &support);
    let k_tilde = oracle_gram(k_h, delta, dof, &support, &obs_times);
    let k_eval = oracle_gram(k_h, delta, dof, &eval, &support);
    let k_eval_obs = oracle_gram(k_h, delta, dof, &eval, &obs_times);
    let mut mu = DVector::zeros(s * ns);
    let mut big_sigma = DMatrix::zeros(s * ns, s * ns);
    let mut sigma_inv = Vec::new();
    for (n, p) in reference.points().iter().enumerate() {
        mu.rows_mut(n * s, s).copy_from(&p.mean);
        big_sigma.view_mut((n * s, n * s), (s, s)).copy_from(&p.covariance);
        sigma_inv.push(p.covariance.clone().try_inverse().unwrap());
    }
    let gamma0 = (&k + &big_sigma * lambda).lu().solve(&mu).unwrap();
    let mut xi = &k_eval * &gamma0;
    let at = |xi: &DVector<f64>, idx: usize| xi.rows(idx * s, s).into_owned();
    let mut saw_active = false;
    let mut saw_obstacle = false;
    for _ in 0..5 {
        let xs: Vec<DVector<f64>> = (0..ns).map(|n| at(&xi, sup_idx + n)).collect();
        let mut w = DVector::zeros(s * ns);
        let mut g = DMatrix::zeros(s * ns, ns);
        let mut q = DVector::zeros(ns);
        let mut xi_s = DVector::zeros(s * ns);
        for n in 0..ns {
            xi_s.rows_mut(n * s, s).copy_from(&xs[n]);
            let r = &xs[n] - mu.rows(n * s, s);
            w.rows_mut(n * s, s).copy_from(&(&sigma_inv[n] * r));
            g[(n * s, n)] = -2.0 * xs[n][0];
            g[(n * s + 1, n)] = -2.0 * xs[n][1];
            q[n] = radius_sq - xs[n][0].powi(2) - xs[n][1].powi(2);
        }
        let mut h = DVector::zeros(s * no);
        for m in 0..no {
            let x = at(&xi, obs_idx + m);
            let d = (x[0].powi(2) + x[1].powi(2)).sqrt();
            let (r, eps) = (obstacle.radius, obstacle.margin);
            let slope = if d <= r {
                -1.0
            } else if d <= r + eps {
                (d - r - eps) / eps
            } else {
                0.0
            };
            if slope != 0.0 {
                saw_obstacle = true;
                h[m * s] = slope * x[0] / d;
                h[m * s + 1] = slope * x[1] / d;
            }
        }
        let a = g.transpose() * &k * &g / beta;
        let drive = &k * &w + &xi_s * lambda + &k_tilde * &h * lambda_obs;
        let c = g.transpose() * drive / beta - &q;
        let problem = DualProblem::new(a, c).unwrap();
        let alpha = exhaustive_qp(&problem.a, &problem.c);
        saw_active |= alpha.iter().any(|v| *v > 0.0);
        let e = w - &g * alpha;
        xi = &xi * (1.0 - lambda / beta) - &k_eval * e / beta - &k_eval_obs * &h * (lambda_obs / beta);
    }
    let mut worst: f64 = 0.0;
    for (i, &t) in dense.iter().enumerate() {
        worst = worst.max((tf.predict(t) - at(&xi, i)).amax());
    }
    check(
        worst <= 1e-10 && saw_active && saw_obstacle,
        format!(
            "max |recursion - functional| = {worst:.2e} over {} times (<= 1e-10); ball active: {saw_active}, obstacle active: {saw_obstacle}",
            dense.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_alpha: f64 = 0.0;
    let mut worst_comp: f64 = 0.0;
    let mut worst_dual: f64 = 0.0;
    let mut unconverged = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let rank = rng.gen_range(1..=n);
        let b = DMatrix::from_fn(n, rank, |_, _| rng.gen_range(-1.0..1.0));
        let a = &b * b.transpose() + DMatrix::identity(n, n) * rng.gen_range(1e-2..1.0);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let p = DualProblem::new(a, c).unwrap();
        let sol = solve_nonneg_qp(&p, QpOptions::default(), None).unwrap();
        if !sol.converged {
            unconverged += 1;
        }
        let oracle = exhaustive_qp(&p.a, &p.c);
        worst_alpha = worst_alpha.max((&sol.alpha - oracle).amax());
        let slack = p.slack(&sol.alpha);
        for i in 0..n {
            worst_comp = worst_comp.max((sol.alpha[i] * slack[i]).abs());
            worst_dual = worst_dual.max(-slack[i]).max(-sol.alpha[i]);
        }
    }
    check(
        worst_alpha <= 1e-8 && worst_comp <= 1e-8 && worst_dual <= 1e-8 && unconverged == 0,
        format!(
            "200 instances: max |alpha - oracle| = {worst_alpha:.2e}, max |alpha_i s_i| = {worst_comp:.2e}, \
             max infeasibility = {worst_dual:.2e} (all <= 1e-8), unconverged = {unconverged}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let (k_h, delta) = (4.0, 1e-3);
    let cfg = KernelConfig::new(k_h, delta, 1).unwrap();
    let grid = uniform_grid(0.0, 2.0, 21);
    let mut worst: f64 = 0.0;
    for &ti in &grid {
        for &tj in &grid {
            let u = ti - tj;
            let e = (-k_h * u * u).exp();
            let td = 2.0 * k_h * u * e;
            let dt = -2.0 * k_h * u * e;
            let dd = (2.0 * k_h - 4.0 * k_h * k_h * u * u) * e;
            let b = cfg.block_scalars(ti, tj);
            worst = worst
                .max((b.tt - e).abs())
                .max((b.td - td).abs())
                .max((b.dt - dt).abs())
                .max((b.dd - dd).abs());
        }
    }
    check(
        worst <= 1e-2,
        format!("max |finite difference - analytic| = {worst:.2e} on 21x21 grid (<= 1e-2)"),
    )
}

struct WritingRun {
    result: RunResult,
    seconds: f64,
}

fn run_timed(scenario: &Scenario, opts: &RunOptions) -> (RunResult, f64) {
    let started = Instant::now();
    let result = pipeline::run(scenario, opts).unwrap();
    (result, started.elapsed().as_secs_f64())
}

fn criterion_5(run: &WritingRun) -> Outcome {
    let r = &run.result;
    let (times, _) = r.trajectory.densify(r.prepared.scenario.output.samples);
    let mut parts = Vec::new();
    let mut ok = true;
    for want in [1usize, 10] {
        match r.snapshots.iter().find(|(it, _)| *it == want) {
            Some((_, tf)) => {
                let m = pipeline::derivative_mismatch(tf, &times, 1e-4);
                ok &= m <= 1e-3;
                parts.push(format!("iteration {want}: {m:.2e}"));
            }
            None => {
                ok = false;
                parts.push(format!("iteration {want}: not reached"));
            }
        }
    }
    check(
        ok,
        format!("relative |CD(position) - velocity| {} (<= 1e-3)", parts.join(", ")),
    )
}

fn published_params(s: &Scenario, want: [f64; 4], points: usize) -> Result<(), String> {
    let got = [s.solver.lambda, s.solver.beta, s.solver.lambda_obs, s.solver.k_h];
    if got != want || s.solver.support_points != points || s.solver.obstacle_points != points {
        return Err(format!(
            "solver settings {got:?}/{} differ from {want:?}/{points}",
            s.solver.support_points
        ));
    }
    if s.solver.iterations > 10 {
        return Err(format!("iteration budget {} exceeds 10", s.solver.iterations));
    }
    Ok(())
}

fn criterion_6(run: &WritingRun) -> Outcome {
    let r = &run.result;
    let p = &r.prepared;
    let s = &p.scenario;
    published_params(s, [0.01, 340.0, 110.0, 4.0], 200)?;
    let obs_ok = s.obstacles.len() == 1
        && s.obstacles[0].center == [-6.0, -4.0, 0.0]
        && s.obstacles[0].radius == 6.0
        && s.obstacles[0].margin == 4.0;
    let grid = &p.solver.config().support_times;
    let states = r.trajectory.predict_many(grid);

    let mut nominal = ConstraintSet::new(grid.len(), 2);
    let mut desired = ConstraintSet::new(grid.len(), 2);
    let mut imposed_ball = f64::INFINITY;
    let mut has_box = false;
    for n in 0..grid.len() {
        nominal
            .add(ball_constraint(n, &[0.0, 0.0], 256.0, &[0, 1]).unwrap())
            .unwrap();
    }
    for entry in &s.constraints {
        match &entry.decl {
            ConstraintDecl::Box {
                component,
                lower,
                upper,
            } => {
                has_box |= *component == 2 && *lower == -53.0 && *upper == 42.0;
                for n in 0..grid.len() {
                    nominal
                        .extend(box_constraint(n, *component, *lower, *upper).unwrap())
                        .unwrap();
                }
            }
            ConstraintDecl::Ball { radius, .. } => {
                for xi in &states {
                    imposed_ball = imposed_ball.min(radius * radius - xi[0] * xi[0] - xi[1] * xi[1]);
                }
            }
            ConstraintDecl::DesiredPoint { state, eps } => {
                let ekmp::scenario::TimeSelection::Times(ts) = &entry.at else {
                    return Err("desired point without a time".into());
                };
                for &t in ts {
                    let n = ekmp::scenario::nearest_index(grid, t);
                    desired
                        .extend(desired_point(n, &DVector::from_column_slice(state), *eps).unwrap())
                        .unwrap();
                }
            }
            _ => {}
        }
    }
    let min_nominal = nominal.min_value(&states);
    let min_desired = desired.min_value(&states);
    let u0 = r.trace.initial.u_obs;
    let u1 = r.trace.final_metrics().u_obs;
    let ratio = u1 / u0;
    let iters = r.trace.records.len();
    check(
        obs_ok && has_box && !desired.is_empty() && min_nominal >= -1e-6 && min_desired >= -1e-6 && ratio <= 0.05 && run.seconds < 60.0 && iters <= 10,
        format!(
            "{iters} iterations; min(256 - |x|^2, velocity box) = {min_nominal:.3e}; desired points min slack = {min_desired:.2e} \
             (>= -1e-6); imposed disc min = {imposed_ball:.2e}; U_obs {u0:.4} -> {u1:.4} (ratio {ratio:.4} <= 0.05); {:.1} s (< 60 s)",
            run.seconds
        ),
    )
}

fn criterion_7() -> Outcome {
    let s = load("arm_reach_con1_con2.toml");
    published_params(&s, [0.01, 700.0, 120.0, 0.2], 21)?;
    let obs = s.obstacles.first().ok_or("no obstacle")?;
    if obs.radius != 0.1 || obs.margin != 0.15 {
        return Err(format!("obstacle r = {}, margin = {}", obs.radius, obs.margin));
    }
    let (r, seconds) = run_timed(&s, &RunOptions::default());
    let p = &r.prepared;
    let dof = s.dof();
    let (_, dense) = r.trajectory.densify(200);
    let mut min_z = f64::INFINITY;
    let mut min_d = f64::INFINITY;
    for xi in &dense {
        let q: Vec<f64> = xi.rows(0, dof).iter().copied().collect();
        min_z = min_z.min(p.model.end_effector(&q).unwrap()[2]);
        for x in p.model.body_point_positions(&q).unwrap() {
            min_d = min_d.min(obs.distance(&x));
        }
    }
    let mut task_err = f64::NAN;
    let mut task_bound = f64::NAN;
    let mut z_margin_ok = false;
    for entry in &s.constraints {
        match &entry.decl {
            ConstraintDecl::TaskPosition { target, eps } => {
                let ekmp::scenario::TimeSelection::Times(ts) = &entry.at else {
                    continue;
                };
                if *target != [0.60, -0.15, 0.60] || ts.as_slice() != [6.0] {
                    return Err(format!("task target {target:?} at {ts:?}"));
                }
                let x = p.model.end_effector(&r.trajectory.position(6.0)).unwrap();
                task_err = (0..3).map(|a| (x[a] - target[a]).abs()).fold(0.0, f64::max);
                task_bound = eps + 1e-3;
            }
            ConstraintDecl::TaskHalfspace {
                axis,
                bound,
                sense,
                margin,
            } => {
                z_margin_ok = *axis == 2 && *bound == 0.4 && *sense == Sense::Above && *margin == 2e-3;
            }
            _ => {}
        }
    }
    let entries = pipeline::entry_reports(&r).unwrap();
    let desired: Vec<f64> = entries
        .iter()
        .filter(|e| e.kind == "desired_point")
        .map(|e| e.min_value)
        .collect();
    let min_desired = desired.iter().copied().fold(f64::INFINITY, f64::min);
    let iters = r.trace.records.len();
    check(
        z_margin_ok
            && min_z >= 0.40
            && task_err <= task_bound
            && desired.len() == 2
            && min_desired >= -1e-6
            && min_d >= obs.radius
            && seconds < 120.0
            && iters <= 10,
        format!(
            "{iters} iterations; min z = {min_z:.4} (>= 0.40); |f(q(6)) - target|inf = {task_err:.2e} (<= {task_bound:.1e}); \
             {} desired points min slack = {min_desired:.2e}; min body distance = {min_d:.4} (>= {}); {seconds:.2} s (< 120 s)",
            desired.len(),
            obs.radius
        ),
    )
}

/// Largest |analytic - central difference| of one constraint at `xi`.
fn fd_error(c: &PointConstraint, xi: &DVector<f64>, h: f64) -> f64 {
    let g = c.gradient(xi);
    let mut worst: f64 = 0.0;
    for i in 0..xi.len() {
        let (mut p, mut m) = (xi.clone(), xi.clone());
        p[i] += h;
        m[i] -= h;
        let fd = (c.value(&p) - c.value(&m)) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs());
    }
    worst
}

type Builder = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<PointConstraint>>;

#[derive(Debug)]
struct Wobble;

impl DifferentiableConstraint for Wobble {
    fn value(&self, xi: &DVector<f64>) -> f64 {
        xi[0].sin() * xi[1] + 0.5 * xi[2] * xi[2]
    }

    fn gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(xi.len());
        g[0] = xi[0].cos() * xi[1];
        g[1] = xi[0].sin();
        g[2] = xi[2];
        g
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gen3 = Arc::new(KinematicModel::SerialChain(SerialChain::gen3_approx()));
    let planar = Arc::new(KinematicModel::PlanarIdentity);
    let h = 1e-6;
    let mut lines = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, worst: f64, tol: f64| {
        ok &= worst <= tol;
        lines.push(format!("{name} {worst:.1e}/{tol:.0e}"));
    };

    let builders: Vec<(&str, f64, usize, Builder)> = vec![
        (
            "linear",
            1e-5,
            2,
            Box::new(|r| {
                vec![linear_constraint(
                    0,
                    DVector::from_fn(4, |_, _| r.gen_range(-2.0..2.0)),
                    r.gen_range(-1.0..1.0),
                )]
            }),
        ),
        (
            "desired",
            1e-5,
            2,
            Box::new(|r| desired_point(0, &DVector::from_fn(4, |_, _| r.gen_range(-5.0..5.0)), 1e-3).unwrap()),
        ),
        (
            "ball",
            1e-7,
            2,
            Box::new(|r| {
                vec![ball_constraint(0, &[r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)], 256.0, &[0, 1]).unwrap()]
            }),
        ),
        (
            "box",
            1e-5,
            2,
            Box::new(|r| box_constraint(0, r.gen_range(0..4), -53.0, 42.0).unwrap().to_vec()),
        ),
        (
            "plane",
            1e-5,
            2,
            Box::new(|r| {
                plane_constraint(0, DVector::from_fn(4, |_, _| r.gen_range(-1.0..1.0)), 0.3, 1e-3)
                    .unwrap()
                    .to_vec()
            }),
        ),
        (
            "equality",
            1e-5,
            2,
            Box::new(|_| equality_constraint(0, Arc::new(Wobble), 1e-3).unwrap().to_vec()),
        ),
        ("task_position", 1e-5, 7, {
            let m = gen3.clone();
            Box::new(move |r| {
                task_position_constraint(0, m.clone(), [r.gen_range(0.3..0.7), -0.15, 0.6], 1e-3).unwrap()
            })
        }),
        ("task_position_planar", 1e-5, 2, {
            let m = planar.clone();
            Box::new(move |_| task_position_constraint(0, m.clone(), [3.0, -4.0, 0.0], 1e-3).unwrap())
        }),
        ("task_halfspace", 1e-5, 7, {
            let m = gen3.clone();
            Box::new(move |r| {
                let sense = if r.gen_bool(0.5) { Sense::Above } else { Sense::Below };
                vec![task_halfspace_constraint(0, m.clone(), r.gen_range(0..3), 0.4, sense, 2e-3).unwrap()]
            })
        }),
    ];
    for (name, tol, dof, make) in &builders {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let span = if *dof == 7 { 2.5 } else { 10.0 };
            let xi = DVector::from_fn(2 * dof, |_, _| rng.gen_range(-span..span));
            for c in make(&mut rng) {
                worst = worst.max(fd_error(&c, &xi, h));
            }
        }
        record(name, worst, *tol);
    }

    // Point cost gradient inside and in the band.
    let obs = Obstacle::new([-6.0, -4.0, 0.0], 6.0, 4.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.gen_range(0.5..9.9);
        let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = Vector3::new(-6.0 + d * th.cos(), -4.0 + d * th.sin(), 0.0);
        let g = obs.cost_gradient(&x).gradient;
        for i in 0..2 {
            let (mut p, mut m) = (x, x);
            p[i] += h;
            m[i] -= h;
            let fd = (obs.cost(obs.distance(&p)) - obs.cost(obs.distance(&m))) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs());
        }
    }
    record("point_cost", worst, 1e-6);

    // Stacked H on the 7-DoF chain, frozen nearest points, directional derivative.
    let mut worst: f64 = 0.0;
    let checks = 5;
    for _ in 0..100 {
        let qs: Vec<Vec<f64>> = (0..checks)
            .map(|_| (0..7).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let pts = gen3.body_point_positions(&qs[0]).unwrap();
        let anchor = pts[rng.gen_range(1..pts.len())];
        let off = Vector3::from_fn(|_, _| rng.gen_range(-0.12..0.12));
        let obstacles = [Obstacle::new((anchor + off).into(), 0.1, 0.15).unwrap()];
        let base = assemble_h(&gen3, &obstacles, &qs).unwrap();
        let dir: Vec<Vec<f64>> = (0..checks)
            .map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let shifted = |sgn: f64| -> f64 {
            let q: Vec<Vec<f64>> = qs
                .iter()
                .zip(&dir)
                .map(|(q, d)| q.iter().zip(d).map(|(a, b)| a + sgn * h * b).collect())
                .collect();
            assemble_h_frozen(&gen3, &obstacles, &q, &base.nearest).unwrap().cost
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
        let analytic: f64 = (0..checks)
            .map(|m| (0..7).map(|j| base.h[m * 14 + j] * dir[m][j]).sum::<f64>())
            .sum();
        worst = worst.max((fd - analytic).abs());
    }
    record("obstacle_stack", worst, 1e-4);

    check(ok, format!("100 random inputs each, worst/tol: {}", lines.join(", ")))
}

fn criterion_9(first_writing: &WritingRun) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for name in [
        "writing_g.toml",
        "writing_g_conb.toml",
        "arm_reach_con1.toml",
        "arm_reach_con1_con2.toml",
    ] {
        let s = load(name);
        let opts = RunOptions {
            snapshot_every: Some(1),
            ..RunOptions::default()
        };
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for (k, dir) in dirs.iter().enumerate() {
            if k == 0 && name == "writing_g_conb.toml" {
                pipeline::write_outputs(&first_writing.result, dir.path()).unwrap();
            } else {
                let r = pipeline::run(&s, &opts).unwrap();
                pipeline::write_outputs(&r, dir.path()).unwrap();
            }
        }
        let mut files: Vec<_> = std::fs::read_dir(dirs[0].path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        files.sort();
        let same = files
            .iter()
            .all(|f| std::fs::read(dirs[0].path().join(f)).ok() == std::fs::read(dirs[1].path().join(f)).ok());
        ok &= same && !files.is_empty();
        details.push(format!(
            "{name} {} files {}",
            files.len(),
            if same { "identical" } else { "DIFFER" }
        ));
    }
    check(ok, details.join("; "))
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, what: &str, outcome: std::thread::Result<Outcome>| {
        let outcome = outcome.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {n} PASS  {what}: {d}"),
            Err(d) => {
                failures += 1;
                println!("criterion {n} FAIL  {what}: {d}");
            }
        }
    };
    let catch = |f: &dyn Fn() -> Outcome| std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));

    report(1, "KMP fixed point", catch(&criterion_1));
    report(2, "recursion equals functional update", catch(&criterion_2));
    report(3, "dual QP against exhaustive active sets", catch(&criterion_3));
    report(4, "kernel derivative blocks", catch(&criterion_4));

    let writing = std::panic::catch_unwind(|| {
        let s = load("writing_g_conb.toml");
        let (result, seconds) = run_timed(
            &s,
            &RunOptions {
                snapshot_every: Some(1),
                ..RunOptions::default()
            },
        );
        WritingRun { result, seconds }
    });
    match &writing {
        Ok(w) => {
            report(5, "derivative relationship", catch(&|| criterion_5(w)));
            report(
                6,
                "writing task with disc, velocity box and desired points",
                catch(&|| criterion_6(w)),
            );
        }
        Err(_) => {
            report(5, "derivative relationship", Ok(Err("writing run failed".into())));
            report(
                6,
                "writing task with disc, velocity box and desired points",
                Ok(Err("writing run failed".into())),
            );
        }
    }
    report(
        7,
        "arm task with task-space target and height floor",
        catch(&criterion_7),
    );
    report(8, "gradient suite", catch(&criterion_8));
    match &writing {
        Ok(w) => report(9, "determinism", catch(&|| criterion_9(w))),
        Err(_) => report(9, "determinism", Ok(Err("writing run failed".into()))),
    }

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
