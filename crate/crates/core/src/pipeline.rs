//! End-to-end run of a scenario and the files it produces.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::constraints::ConstraintSet;
use crate::demonstrations::{fmt_f64, generate_demos, load_csv, DemonstrationSet};
use crate::dual_qp::QpOptions;
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, gmr_condition, GaussianMixture, ReferenceTrajectory};
use crate::kernel::KernelConfig;
use crate::kinematics::KinematicModel;
use crate::scenario::{DemoSource, Scenario, TimeSelection};
use crate::solver::{uniform_grid, Ekmp, Environment, IterationTrace, Metrics, SolverConfig, TrajectoryFunction};

/// Command-line style overrides applied on top of a scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub iterations: Option<usize>,
    pub snapshot_every: Option<usize>,
    /// Replaces both the demonstration generator seed and the GMM seed.
    pub seed: Option<u64>,
}

impl RunOptions {
    pub fn apply(&self, scenario: &Scenario) -> Scenario {
        let mut s = scenario.clone();
        if let Some(n) = self.iterations {
            s.solver.iterations = n;
        }
        if let Some(k) = self.snapshot_every {
            s.output.snapshot_every = k;
        }
        if let Some(seed) = self.seed {
            s.gmm.seed = seed;
            if let DemoSource::Generate { seed: ref mut g, .. } = s.demonstrations.source {
                *g = seed;
            }
        }
        s
    }
}

/// Everything up to, but not including, the iterations.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub scenario: Scenario,
    pub demos: DemonstrationSet,
    pub gmm: GaussianMixture,
    pub reference: ReferenceTrajectory,
    pub model: Arc<KinematicModel>,
    pub constraints: ConstraintSet,
    pub solver: Ekmp,
}

impl Prepared {
    pub fn environment(&self) -> Environment<'_> {
        Environment {
            constraints: &self.constraints,
            model: &self.model,
            obstacles: &self.scenario.obstacles,
        }
    }
}

pub fn load_demonstrations(scenario: &Scenario) -> Result<DemonstrationSet> {
    let dof = scenario.dof();
    match &scenario.demonstrations.source {
        DemoSource::Csv { path, has_velocity } => load_csv(path, *has_velocity, dof),
        DemoSource::Generate {
            curve,
            count,
            noise,
            seed,
        } => generate_demos(curve, *count, *noise, *seed),
    }
}

pub fn prepare(scenario: &Scenario) -> Result<Prepared> {
    let demos = load_demonstrations(scenario)?;
    let (t0, t1) = demos.time_span();
    let s = &scenario.solver;
    let support = uniform_grid(t0, t1, s.support_points);
    let obstacle_times = uniform_grid(t0, t1, s.obstacle_points);
    let gmm = fit_gmm(&demos, &scenario.gmm)?;
    let reference = gmr_condition(&gmm, &support)?;
    let model = Arc::new(scenario.kinematic_model()?);
    let constraints = scenario.build_constraints(&support, &model)?;
    let cfg = SolverConfig {
        lambda: s.lambda,
        beta: s.beta,
        lambda_obs: s.lambda_obs,
        kernel: KernelConfig::new(s.k_h, s.delta, scenario.dof())?,
        max_iterations: s.iterations,
        tolerance: s.tolerance,
        support_times: support,
        obstacle_times,
        qp: QpOptions {
            tol: s.qp_tol,
            max_iter: s.qp_max_iter,
        },
    };
    let solver = Ekmp::new(cfg, &reference)?;
    Ok(Prepared {
        scenario: scenario.clone(),
        demos,
        gmm,
        reference,
        model,
        constraints,
        solver,
    })
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub prepared: Prepared,
    pub initial: TrajectoryFunction,
    pub trajectory: TrajectoryFunction,
    pub trace: IterationTrace,
    /// `(iteration, trajectory)`; iteration 0 is the initialization.
    pub snapshots: Vec<(usize, TrajectoryFunction)>,
}

pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunResult> {
    let scenario = opts.apply(scenario);
    let prepared = prepare(&scenario)?;
    let every = scenario.output.snapshot_every;
    let initial = prepared.solver.kmp_init()?;
    let mut snapshots = Vec::new();
    if every > 0 {
        snapshots.push((0, initial.clone()));
    }
    let (trajectory, trace) = prepared.solver.solve_with(&prepared.environment(), |it, tf| {
        if every > 0 && it % every == 0 {
            snapshots.push((it, tf.clone()));
        }
    })?;
    let last = trace.records.len();
    if every > 0 && last > 0 && snapshots.last().map(|s| s.0) != Some(last) {
        snapshots.push((last, trajectory.clone()));
    }
    Ok(RunResult {
        prepared,
        initial,
        trajectory,
        trace,
        snapshots,
    })
}

/// Checks of the densified output trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenseReport {
    pub samples: usize,
    /// Smallest value of every constraint declared for all times, evaluated
    /// at every output sample.
    pub min_all_time_constraint: Option<f64>,
    pub min_obstacle_distance: Option<f64>,
    /// Max deviation between velocity columns and central differences of
    /// positions (step 1e-4), relative to the largest velocity.
    pub derivative_mismatch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryReport {
    pub index: usize,
    pub kind: String,
    pub min_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub dof: usize,
    pub demonstrations: usize,
    pub gmm_components: usize,
    pub gmm_reg: Option<f64>,
    pub gmm_iterations: Option<usize>,
    pub support_points: usize,
    pub obstacle_points: usize,
    pub constraint_count: usize,
    /// Top eigenvalue of `Sigma^-1/2 K Sigma^-1/2`; compare with `step_limit`.
    pub imitation_curvature: f64,
    /// `2 beta - lambda`
    pub step_limit: f64,
    pub iterations: usize,
    pub converged: bool,
    pub initial: Metrics,
    #[serde(rename = "final")]
    pub final_metrics: Metrics,
    pub qp_all_converged: bool,
    pub max_kkt_residual: f64,
    pub constraints: Vec<EntryReport>,
    pub dense: DenseReport,
}

const DERIVATIVE_STEP: f64 = 1e-4;

/// `max |(pos(t+h) - pos(t-h)) / 2h - vel(t)| / max |vel|` over `times`.
pub fn derivative_mismatch(tf: &TrajectoryFunction, times: &[f64], h: f64) -> f64 {
    let dof = tf.dof();
    let mut worst: f64 = 0.0;
    let mut vmax: f64 = 0.0;
    for &t in times {
        let xi = tf.predict(t);
        let (p, m) = (tf.predict(t + h), tf.predict(t - h));
        for d in 0..dof {
            let fd = (p[d] - m[d]) / (2.0 * h);
            worst = worst.max((fd - xi[dof + d]).abs());
            vmax = vmax.max(xi[dof + d].abs());
        }
    }
    if vmax > 0.0 {
        worst / vmax
    } else {
        worst
    }
}

pub fn dense_report(result: &RunResult) -> Result<DenseReport> {
    let p = &result.prepared;
    let samples = p.scenario.output.samples;
    let (times, states) = result.trajectory.densify(samples);
    let mut min_c: Option<f64> = None;
    let all_time: Vec<usize> = p
        .scenario
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, e)| e.at == TimeSelection::All)
        .map(|(i, _)| i)
        .collect();
    if !all_time.is_empty() {
        let mut single = p.scenario.clone();
        single.constraints = all_time.iter().map(|&i| p.scenario.constraints[i].clone()).collect();
        let set = single.build_constraints(&[times[0]], &p.model)?;
        for xi in &states {
            let v = set.min_value(std::slice::from_ref(xi));
            min_c = Some(min_c.map_or(v, |m: f64| m.min(v)));
        }
    }
    let mut min_d: Option<f64> = None;
    if !p.scenario.obstacles.is_empty() {
        let dof = p.scenario.dof();
        for xi in &states {
            let q: Vec<f64> = xi.rows(0, dof).iter().copied().collect();
            for x in p.model.body_point_positions(&q)? {
                for o in &p.scenario.obstacles {
                    let d = o.distance(&x);
                    min_d = Some(min_d.map_or(d, |m: f64| m.min(d)));
                }
            }
        }
    }
    Ok(DenseReport {
        samples,
        min_all_time_constraint: min_c,
        min_obstacle_distance: min_d,
        derivative_mismatch: derivative_mismatch(&result.trajectory, &times, DERIVATIVE_STEP),
    })
}

fn kind_name(e: &crate::scenario::ConstraintDecl) -> &'static str {
    use crate::scenario::ConstraintDecl::*;
    match e {
        DesiredPoint { .. } => "desired_point",
        Ball { .. } => "ball",
        Box { .. } => "box",
        Linear { .. } => "linear",
        Plane { .. } => "plane",
        TaskPosition { .. } => "task_position",
        TaskHalfspace { .. } => "task_halfspace",
    }
}

/// Minimum value of each declared constraint over its support-grid points.
pub fn entry_reports(result: &RunResult) -> Result<Vec<EntryReport>> {
    let p = &result.prepared;
    let grid = &p.solver.config().support_times;
    let states = result.trajectory.predict_many(grid);
    let mut out = Vec::with_capacity(p.scenario.constraints.len());
    for (i, entry) in p.scenario.constraints.iter().enumerate() {
        let mut single = p.scenario.clone();
        single.constraints = vec![entry.clone()];
        let set = single.build_constraints(grid, &p.model)?;
        out.push(EntryReport {
            index: i,
            kind: kind_name(&entry.decl).into(),
            min_value: set.min_value(&states),
        });
    }
    Ok(out)
}

pub fn summarize(result: &RunResult) -> Result<Summary> {
    let p = &result.prepared;
    let fit = p.gmm.fit.as_ref();
    let cfg = p.solver.config();
    Ok(Summary {
        name: p.scenario.name.clone(),
        dof: p.scenario.dof(),
        demonstrations: p.demos.count(),
        gmm_components: p.gmm.components.len(),
        gmm_reg: fit.map(|f| f.reg),
        gmm_iterations: fit.map(|f| f.iterations),
        support_points: cfg.support_times.len(),
        obstacle_points: cfg.obstacle_times.len(),
        constraint_count: p.constraints.len(),
        imitation_curvature: p.solver.imitation_curvature(),
        step_limit: 2.0 * cfg.beta - cfg.lambda,
        iterations: result.trace.records.len(),
        converged: result.trace.converged,
        initial: result.trace.initial,
        final_metrics: result.trace.final_metrics(),
        qp_all_converged: result.trace.records.iter().all(|r| r.qp_converged),
        max_kkt_residual: result.trace.records.iter().map(|r| r.kkt_residual).fold(0.0, f64::max),
        constraints: entry_reports(result)?,
        dense: dense_report(result)?,
    })
}

fn state_header(dof: usize) -> String {
    let q: Vec<String> = (1..=dof).map(|i| format!("q{i}")).collect();
    let qd: Vec<String> = (1..=dof).map(|i| format!("qd{i}")).collect();
    format!("{},{}", q.join(","), qd.join(","))
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let row: Vec<String> = values.into_iter().map(fmt_f64).collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

pub fn trajectory_csv(tf: &TrajectoryFunction, samples: usize) -> String {
    let (times, states) = tf.densify(samples);
    let mut out = format!("t,{}\n", state_header(tf.dof()));
    for (t, xi) in times.iter().zip(&states) {
        push_row(&mut out, std::iter::once(*t).chain(xi.iter().copied()));
    }
    out
}

pub fn snapshots_csv(snapshots: &[(usize, TrajectoryFunction)], dof: usize, samples: usize) -> String {
    let mut out = format!("iteration,t,{}\n", state_header(dof));
    for (it, tf) in snapshots {
        let (times, states) = tf.densify(samples);
        for (t, xi) in times.iter().zip(&states) {
            let _ = write!(out, "{it},");
            push_row(&mut out, std::iter::once(*t).chain(xi.iter().copied()));
        }
    }
    out
}

pub fn trace_csv(trace: &IterationTrace) -> String {
    let mut out = String::from(
        "iteration,u_obs,max_violation,min_constraint,min_distance,delta_gamma,delta_rho,kkt_residual,qp_iterations,qp_converged,active\n",
    );
    let metrics = |m: &Metrics| {
        [m.u_obs, m.max_violation, m.min_constraint, m.min_distance]
            .map(fmt_f64)
            .join(",")
    };
    let _ = writeln!(out, "0,{},,,,,,", metrics(&trace.initial));
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            metrics(&r.metrics),
            fmt_f64(r.delta_gamma),
            fmt_f64(r.delta_rho),
            fmt_f64(r.kkt_residual),
            r.qp_iterations,
            r.qp_converged,
            r.active
        );
    }
    out
}

pub fn reference_csv(reference: &ReferenceTrajectory) -> String {
    let dof = reference.dof();
    let q: Vec<String> = (1..=dof).map(|i| format!("q{i}")).collect();
    let qd: Vec<String> = (1..=dof).map(|i| format!("qd{i}")).collect();
    let names: Vec<String> = q.iter().chain(&qd).cloned().collect();
    let sd: Vec<String> = names.iter().map(|n| format!("sd_{n}")).collect();
    let mut out = format!("t,{},{}\n", names.join(","), sd.join(","));
    for p in reference.points() {
        let std = (0..2 * dof).map(|i| p.covariance[(i, i)].max(0.0).sqrt());
        push_row(&mut out, std::iter::once(p.t).chain(p.mean.iter().copied()).chain(std));
    }
    out
}

pub fn constraints_csv(result: &RunResult) -> String {
    let p = &result.prepared;
    let grid = &p.solver.config().support_times;
    let mut out = String::from("n,t,label,value\n");
    for c in p.constraints.iter() {
        let xi: DVector<f64> = result.trajectory.predict(grid[c.index]);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.index,
            fmt_f64(grid[c.index]),
            c.label,
            fmt_f64(c.value(&xi))
        );
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes all run artifacts into `dir`, returning the paths written.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let samples = result.prepared.scenario.output.samples;
    let summary = summarize(result)?;
    let summary_json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Serde(e.to_string()))?;
    let mut files = vec![
        write_file(dir, "trajectory.csv", &trajectory_csv(&result.trajectory, samples))?,
        write_file(dir, "trace.csv", &trace_csv(&result.trace))?,
        write_file(dir, "reference.csv", &reference_csv(&result.prepared.reference))?,
        write_file(dir, "constraints.csv", &constraints_csv(result))?,
        write_file(dir, "trajectory.json", &result.trajectory.to_json()?)?,
        write_file(dir, "summary.json", &(summary_json + "\n"))?,
    ];
    if !result.snapshots.is_empty() {
        let csv = snapshots_csv(&result.snapshots, result.prepared.scenario.dof(), samples);
        files.push(write_file(dir, "snapshots.csv", &csv)?);
    }
    Ok(files)
}
