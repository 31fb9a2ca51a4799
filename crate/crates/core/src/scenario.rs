//! Scenario files: TOML documents describing demonstrations, model fitting,
//! solver parameters, robot model, obstacles and constraints.
//!
//! Loading happens in two passes. The text is first deserialized into
//! loosely typed records, then every field is checked and all violations are
//! reported together, each tagged with its key path.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::Deserialize;

use crate::constraints::{
    ball_constraint, box_constraint, desired_point, linear_constraint, plane_constraint, task_halfspace_constraint,
    task_position_constraint, ConstraintSet, Sense,
};
use crate::demonstrations::CurveSpec;
use crate::error::{Error, Result};
use crate::gmm::GmmConfig;
use crate::kernel::DEFAULT_DELTA;
use crate::kinematics::{KinematicModel, SerialChain};
use crate::obstacle::Obstacle;
use crate::solver::DEFAULT_TOLERANCE;

pub const DEFAULT_DESIRED_EPS: f64 = 1e-3;
pub const DEFAULT_TASK_EPS: f64 = 1e-3;
pub const DEFAULT_OUTPUT_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    description: Option<String>,
    demonstrations: Option<RawDemos>,
    gmm: Option<RawGmm>,
    solver: Option<RawSolver>,
    kinematics: Option<RawKinematics>,
    #[serde(default)]
    obstacles: Vec<RawObstacle>,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDemos {
    source: Option<String>,
    dof: Option<usize>,
    // csv
    path: Option<String>,
    has_velocity: Option<bool>,
    // generator
    curve: Option<String>,
    scale: Option<f64>,
    waypoints: Option<Vec<Vec<f64>>>,
    start_time: Option<f64>,
    duration: Option<f64>,
    samples: Option<usize>,
    count: Option<usize>,
    noise: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGmm {
    components: Option<usize>,
    seed: Option<u64>,
    reg: Option<f64>,
    max_iter: Option<usize>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    lambda: Option<f64>,
    beta: Option<f64>,
    lambda_obs: Option<f64>,
    k_h: Option<f64>,
    delta: Option<f64>,
    support_points: Option<usize>,
    obstacle_points: Option<usize>,
    iterations: Option<usize>,
    tolerance: Option<f64>,
    qp_tol: Option<f64>,
    qp_max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKinematics {
    model: Option<String>,
    chain: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObstacle {
    center: Option<Vec<f64>>,
    radius: Option<f64>,
    margin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    kind: Option<String>,
    at: Option<toml::Value>,
    eps: Option<f64>,
    state: Option<Vec<f64>>,
    selector: Option<Vec<usize>>,
    center: Option<Vec<f64>>,
    radius: Option<f64>,
    component: Option<usize>,
    lower: Option<f64>,
    upper: Option<f64>,
    theta: Option<Vec<f64>>,
    offset: Option<f64>,
    target: Option<Vec<f64>>,
    axis: Option<String>,
    bound: Option<f64>,
    sense: Option<String>,
    margin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    samples: Option<usize>,
    dir: Option<String>,
    snapshot_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DemoSource {
    Csv {
        path: PathBuf,
        has_velocity: bool,
    },
    Generate {
        curve: CurveSpec,
        count: usize,
        noise: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSettings {
    pub dof: usize,
    pub source: DemoSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub lambda: f64,
    pub beta: f64,
    pub lambda_obs: f64,
    pub k_h: f64,
    pub delta: f64,
    pub support_points: usize,
    pub obstacle_points: usize,
    pub iterations: usize,
    pub tolerance: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Planar,
    Gen3,
    Chain(PathBuf),
}

/// When a constraint applies.
#[derive(Clone, Debug, PartialEq)]
pub enum TimeSelection {
    All,
    Times(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintDecl {
    DesiredPoint {
        state: Vec<f64>,
        eps: f64,
    },
    Ball {
        selector: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        component: usize,
        lower: f64,
        upper: f64,
    },
    Linear {
        theta: Vec<f64>,
        offset: f64,
    },
    Plane {
        theta: Vec<f64>,
        offset: f64,
        eps: f64,
    },
    TaskPosition {
        target: [f64; 3],
        eps: f64,
    },
    TaskHalfspace {
        axis: usize,
        bound: f64,
        sense: Sense,
        margin: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintEntry {
    pub at: TimeSelection,
    pub decl: ConstraintDecl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSettings {
    pub samples: usize,
    pub dir: Option<PathBuf>,
    pub snapshot_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub demonstrations: DemoSettings,
    pub gmm: GmmConfig,
    pub solver: SolverSettings,
    pub model: ModelSpec,
    pub obstacles: Vec<Obstacle>,
    pub constraints: Vec<ConstraintEntry>,
    pub output: OutputSettings,
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn required<T: Clone>(&mut self, path: String, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.fail(path, "missing");
        }
        v.clone()
    }

    /// `v > 0` and finite; `None` passes through as missing.
    fn positive(&mut self, path: String, v: Option<f64>, what: &str) -> Option<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Some(x),
            Some(x) => {
                self.fail(path, format!("{what} must be > 0, got {x}"));
                None
            }
            None => None,
        }
    }

    fn nonnegative(&mut self, path: String, v: f64) -> Option<f64> {
        if v >= 0.0 && v.is_finite() {
            Some(v)
        } else {
            self.fail(path, format!("must be >= 0, got {v}"));
            None
        }
    }
}

fn parse_sense(s: &str) -> Option<Sense> {
    match s {
        "above" | ">=" => Some(Sense::Above),
        "below" | "<=" => Some(Sense::Below),
        _ => None,
    }
}

fn parse_axis(s: &str) -> Option<usize> {
    match s {
        "x" => Some(0),
        "y" => Some(1),
        "z" => Some(2),
        _ => None,
    }
}

fn parse_at(ck: &mut Checker, path: String, v: &Option<toml::Value>) -> Option<TimeSelection> {
    let as_f64 = |v: &toml::Value| v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
    match v {
        None => {
            ck.fail(path, "missing (a time, a list of times, or \"all\")");
            None
        }
        Some(toml::Value::String(s)) if s == "all" => Some(TimeSelection::All),
        Some(toml::Value::Array(items)) => {
            let times: Option<Vec<f64>> = items.iter().map(as_f64).collect();
            match times {
                Some(t) if !t.is_empty() => Some(TimeSelection::Times(t)),
                _ => {
                    ck.fail(path, "time list must be a non-empty list of numbers");
                    None
                }
            }
        }
        Some(v) => match as_f64(v) {
            Some(t) => Some(TimeSelection::Times(vec![t])),
            None => {
                ck.fail(path, "expected a time, a list of times, or \"all\"");
                None
            }
        },
    }
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, Vec<Violation>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            vec![Violation {
                path: path.display().to_string(),
                message: format!("cannot read: {e}"),
            }]
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses scenario text; relative file references resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> std::result::Result<Self, Vec<Violation>> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            vec![Violation {
                path: "<document>".into(),
                message: e.message().to_string(),
            }]
        })?;
        let mut ck = Checker { violations: Vec::new() };
        let scenario = resolve(raw, base, &mut ck);
        match scenario {
            Some(s) if ck.violations.is_empty() => Ok(s),
            _ => Err(ck.violations),
        }
    }

    pub fn validate_file(path: impl AsRef<Path>) -> Vec<Violation> {
        match Self::load(path) {
            Ok(_) => Vec::new(),
            Err(v) => v,
        }
    }

    pub fn dof(&self) -> usize {
        self.demonstrations.dof
    }

    pub fn kinematic_model(&self) -> Result<KinematicModel> {
        Ok(match &self.model {
            ModelSpec::Planar => KinematicModel::PlanarIdentity,
            ModelSpec::Gen3 => KinematicModel::SerialChain(SerialChain::gen3_approx()),
            ModelSpec::Chain(p) => KinematicModel::SerialChain(SerialChain::load(p)?),
        })
    }

    /// Builds the constraint set on `grid`, snapping times to the nearest grid point.
    pub fn build_constraints(&self, grid: &[f64], model: &Arc<KinematicModel>) -> Result<ConstraintSet> {
        let dof = self.dof();
        let mut set = ConstraintSet::new(grid.len(), dof);
        for entry in &self.constraints {
            let indices: Vec<usize> = match &entry.at {
                TimeSelection::All => (0..grid.len()).collect(),
                TimeSelection::Times(ts) => ts.iter().map(|&t| nearest_index(grid, t)).collect(),
            };
            for n in indices {
                match &entry.decl {
                    ConstraintDecl::DesiredPoint { state, eps } => {
                        set.extend(desired_point(n, &DVector::from_column_slice(state), *eps)?)?
                    }
                    ConstraintDecl::Ball {
                        selector,
                        center,
                        radius,
                    } => set.add(ball_constraint(n, center, radius * radius, selector)?)?,
                    ConstraintDecl::Box {
                        component,
                        lower,
                        upper,
                    } => set.extend(box_constraint(n, *component, *lower, *upper)?)?,
                    ConstraintDecl::Linear { theta, offset } => {
                        set.add(linear_constraint(n, DVector::from_column_slice(theta), *offset))?
                    }
                    ConstraintDecl::Plane { theta, offset, eps } => {
                        set.extend(plane_constraint(n, DVector::from_column_slice(theta), *offset, *eps)?)?
                    }
                    ConstraintDecl::TaskPosition { target, eps } => {
                        set.extend(task_position_constraint(n, model.clone(), *target, *eps)?)?
                    }
                    ConstraintDecl::TaskHalfspace {
                        axis,
                        bound,
                        sense,
                        margin,
                    } => set.add(task_halfspace_constraint(
                        n,
                        model.clone(),
                        *axis,
                        *bound,
                        *sense,
                        *margin,
                    )?)?,
                }
            }
        }
        Ok(set)
    }

    /// Demonstration time span `(start, end)` implied by the source, when known
    /// without reading files.
    pub fn nominal_span(&self) -> Option<(f64, f64)> {
        match &self.demonstrations.source {
            DemoSource::Generate { curve, .. } => Some((curve.start_time, curve.start_time + curve.duration)),
            DemoSource::Csv { .. } => None,
        }
    }
}

/// Index of the grid time closest to `t` (earlier index on ties).
pub fn nearest_index(grid: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        if (g - t).abs() < (grid[best] - t).abs() {
            best = i;
        }
    }
    best
}

fn resolve(raw: RawScenario, base: &Path, ck: &mut Checker) -> Option<Scenario> {
    let name = ck.required("name".into(), &raw.name);
    let demonstrations = match &raw.demonstrations {
        Some(d) => resolve_demos(d, base, ck),
        None => {
            ck.fail("demonstrations", "missing section");
            None
        }
    };
    let gmm = resolve_gmm(raw.gmm.as_ref(), ck);
    let solver = match &raw.solver {
        Some(s) => resolve_solver(s, ck),
        None => {
            ck.fail("solver", "missing section");
            None
        }
    };
    let dof = demonstrations.as_ref().map(|d| d.dof);
    let model = resolve_model(raw.kinematics.as_ref(), base, dof, ck);

    let mut obstacles = Vec::new();
    for (i, o) in raw.obstacles.iter().enumerate() {
        let p = |f: &str| format!("obstacles[{i}].{f}");
        let center = ck.required(p("center"), &o.center);
        let radius = ck.required(p("radius"), &o.radius);
        let margin = ck.required(p("margin"), &o.margin);
        let radius = ck.positive(p("radius"), radius, "obstacle radius");
        let margin = ck.positive(p("margin"), margin, "safety margin");
        let center = match center {
            Some(c) if c.len() == 2 || c.len() == 3 => Some([c[0], c[1], c.get(2).copied().unwrap_or(0.0)]),
            Some(c) => {
                ck.fail(p("center"), format!("expected 2 or 3 coordinates, got {}", c.len()));
                None
            }
            None => None,
        };
        if let (Some(center), Some(radius), Some(margin)) = (center, radius, margin) {
            obstacles.push(Obstacle { center, radius, margin });
        }
    }

    let span = demonstrations.as_ref().and_then(|d| match &d.source {
        DemoSource::Generate { curve, .. } => Some((curve.start_time, curve.start_time + curve.duration)),
        DemoSource::Csv { .. } => None,
    });
    let mut constraints = Vec::new();
    for (i, c) in raw.constraints.iter().enumerate() {
        if let Some(entry) = resolve_constraint(i, c, dof, span, ck) {
            constraints.push(entry);
        }
    }

    let output = {
        let o = raw.output.as_ref();
        let samples = o.and_then(|o| o.samples).unwrap_or(DEFAULT_OUTPUT_SAMPLES);
        if samples < 2 {
            ck.fail("output.samples", format!("must be at least 2, got {samples}"));
        }
        OutputSettings {
            samples,
            dir: o.and_then(|o| o.dir.as_deref()).map(|d| resolve_path(base, d)),
            snapshot_every: o.and_then(|o| o.snapshot_every).unwrap_or(0),
        }
    };

    Some(Scenario {
        name: name?,
        description: raw.description.unwrap_or_default(),
        demonstrations: demonstrations?,
        gmm: gmm?,
        solver: solver?,
        model: model?,
        obstacles,
        constraints,
        output,
    })
}

fn resolve_demos(d: &RawDemos, base: &Path, ck: &mut Checker) -> Option<DemoSettings> {
    let p = |f: &str| format!("demonstrations.{f}");
    let dof = ck.required(p("dof"), &d.dof);
    if dof == Some(0) {
        ck.fail(p("dof"), "must be positive");
    }
    let source = match d.source.as_deref() {
        Some("csv") => {
            let path = ck.required(p("path"), &d.path).map(|s| resolve_path(base, &s));
            if let Some(path) = &path {
                if !path.is_file() {
                    ck.fail(p("path"), format!("file not found: {}", path.display()));
                }
            }
            path.map(|path| DemoSource::Csv {
                path,
                has_velocity: d.has_velocity.unwrap_or(false),
            })
        }
        Some("generate") => {
            let duration = ck.required(p("duration"), &d.duration);
            let duration = ck.positive(p("duration"), duration, "duration");
            let samples = ck.required(p("samples"), &d.samples);
            if matches!(samples, Some(s) if s < 3) {
                ck.fail(p("samples"), "need at least 3 samples per demonstration");
            }
            let count = ck.required(p("count"), &d.count);
            if count == Some(0) {
                ck.fail(p("count"), "must be at least 1");
            }
            let noise = d.noise.unwrap_or(0.0);
            ck.nonnegative(p("noise"), noise);
            let start_time = d.start_time.unwrap_or(0.0);
            let waypoints = match (d.curve.as_deref(), &d.waypoints) {
                (Some("letter_g"), None) => Some(CurveSpec::letter_g(d.scale.unwrap_or(1.0), 1.0, 3).waypoints),
                (Some(other), None) => {
                    ck.fail(p("curve"), format!("unknown curve `{other}` (known: letter_g)"));
                    None
                }
                (None, Some(w)) => {
                    let scale = d.scale.unwrap_or(1.0);
                    Some(w.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect())
                }
                (Some(_), Some(_)) => {
                    ck.fail(p("waypoints"), "give either `curve` or `waypoints`, not both");
                    None
                }
                (None, None) => {
                    ck.fail(p("waypoints"), "missing (or set `curve`)");
                    None
                }
            };
            if let (Some(w), Some(dof)) = (&waypoints, dof) {
                if w.len() < 2 {
                    ck.fail(p("waypoints"), "need at least two waypoints");
                }
                if let Some(i) = w.iter().position(|r| r.len() != dof) {
                    ck.fail(
                        format!("demonstrations.waypoints[{i}]"),
                        format!("expected {dof} coordinates"),
                    );
                }
            }
            match (waypoints, duration, samples, count) {
                (Some(waypoints), Some(duration), Some(samples), Some(count)) => Some(DemoSource::Generate {
                    curve: CurveSpec {
                        waypoints,
                        start_time,
                        duration,
                        samples,
                    },
                    count,
                    noise,
                    seed: d.seed.unwrap_or(0),
                }),
                _ => None,
            }
        }
        Some(other) => {
            ck.fail(
                p("source"),
                format!("unknown source `{other}` (expected csv or generate)"),
            );
            None
        }
        None => {
            ck.fail(p("source"), "missing (csv or generate)");
            None
        }
    };
    Some(DemoSettings {
        dof: dof.filter(|d| *d > 0)?,
        source: source?,
    })
}

fn resolve_gmm(g: Option<&RawGmm>, ck: &mut Checker) -> Option<GmmConfig> {
    let d = GmmConfig::default();
    let Some(g) = g else {
        ck.fail("gmm", "missing section");
        return None;
    };
    let n_components = ck.required("gmm.components".into(), &g.components)?;
    if n_components == 0 {
        ck.fail("gmm.components", "must be at least 1");
        return None;
    }
    if let Some(r) = g.reg {
        if !(r >= 0.0) {
            ck.fail("gmm.reg", format!("must be >= 0, got {r}"));
        }
    }
    let tol = g.tol.unwrap_or(d.tol);
    ck.positive("gmm.tol".into(), Some(tol), "EM tolerance")?;
    Some(GmmConfig {
        n_components,
        seed: g.seed.unwrap_or(d.seed),
        reg: g.reg,
        max_iter: g.max_iter.unwrap_or(d.max_iter),
        tol,
    })
}

fn resolve_solver(s: &RawSolver, ck: &mut Checker) -> Option<SolverSettings> {
    let p = |f: &str| format!("solver.{f}");
    let lambda = ck.required(p("lambda"), &s.lambda);
    let lambda = ck.positive(p("lambda"), lambda, "lambda");
    let beta = ck.required(p("beta"), &s.beta);
    if let (Some(l), Some(b)) = (lambda, beta) {
        if !(b > l) {
            ck.fail(p("beta"), format!("must exceed lambda ({l}), got {b}"));
        }
    }
    let lambda_obs = s.lambda_obs.unwrap_or(0.0);
    ck.nonnegative(p("lambda_obs"), lambda_obs);
    let k_h = ck.required(p("k_h"), &s.k_h);
    let k_h = ck.positive(p("k_h"), k_h, "kernel width k_h (kernel config)");
    let delta = ck.positive(
        p("delta"),
        Some(s.delta.unwrap_or(DEFAULT_DELTA)),
        "kernel step delta (kernel config)",
    );
    let support_points = ck.required(p("support_points"), &s.support_points);
    if matches!(support_points, Some(n) if n < 2) {
        ck.fail(p("support_points"), "need at least 2 support points");
    }
    let obstacle_points = s.obstacle_points.or(support_points);
    if obstacle_points == Some(0) {
        ck.fail(p("obstacle_points"), "need at least 1 obstacle check point");
    }
    let iterations = ck.required(p("iterations"), &s.iterations);
    let tolerance = ck.positive(
        p("tolerance"),
        Some(s.tolerance.unwrap_or(DEFAULT_TOLERANCE)),
        "tolerance",
    );
    let qp_tol = ck.positive(
        p("qp_tol"),
        Some(s.qp_tol.unwrap_or(crate::dual_qp::DEFAULT_TOL)),
        "qp_tol",
    );
    let qp_max_iter = s.qp_max_iter.unwrap_or(crate::dual_qp::DEFAULT_MAX_ITER);
    if qp_max_iter == 0 {
        ck.fail(p("qp_max_iter"), "must be positive");
    }
    let beta = beta.filter(|b| lambda.is_some_and(|l| *b > l))?;
    Some(SolverSettings {
        lambda: lambda?,
        beta,
        lambda_obs,
        k_h: k_h?,
        delta: delta?,
        support_points: support_points.filter(|n| *n >= 2)?,
        obstacle_points: obstacle_points.filter(|m| *m >= 1)?,
        iterations: iterations?,
        tolerance: tolerance?,
        qp_tol: qp_tol?,
        qp_max_iter,
    })
}

fn resolve_model(k: Option<&RawKinematics>, base: &Path, dof: Option<usize>, ck: &mut Checker) -> Option<ModelSpec> {
    let model = k.and_then(|k| k.model.as_deref()).unwrap_or("planar");
    let spec = match model {
        "planar" => ModelSpec::Planar,
        "gen3" => ModelSpec::Gen3,
        "chain" => {
            let Some(p) = k.and_then(|k| k.chain.as_deref()) else {
                ck.fail("kinematics.chain", "missing (required for model = \"chain\")");
                return None;
            };
            let path = resolve_path(base, p);
            if !path.is_file() {
                ck.fail("kinematics.chain", format!("file not found: {}", path.display()));
                return None;
            }
            ModelSpec::Chain(path)
        }
        other => {
            ck.fail(
                "kinematics.model",
                format!("unknown model `{other}` (planar, gen3 or chain)"),
            );
            return None;
        }
    };
    let model_dof = match &spec {
        ModelSpec::Planar => Some(2),
        ModelSpec::Gen3 => Some(SerialChain::gen3_approx().dof()),
        ModelSpec::Chain(p) => match SerialChain::load(p) {
            Ok(c) => Some(c.dof()),
            Err(e) => {
                ck.fail("kinematics.chain", e.to_string());
                return None;
            }
        },
    };
    if let (Some(m), Some(d)) = (model_dof, dof) {
        if m != d {
            ck.fail(
                "kinematics.model",
                format!("model has {m} dof, demonstrations have {d}"),
            );
        }
    }
    Some(spec)
}

fn resolve_constraint(
    i: usize,
    c: &RawConstraint,
    dof: Option<usize>,
    span: Option<(f64, f64)>,
    ck: &mut Checker,
) -> Option<ConstraintEntry> {
    let p = |f: &str| format!("constraints[{i}].{f}");
    let at = parse_at(ck, p("at"), &c.at);
    if let (Some(TimeSelection::Times(ts)), Some((a, b))) = (&at, span) {
        for t in ts {
            if *t < a - 1e-9 || *t > b + 1e-9 {
                ck.fail(p("at"), format!("time {t} outside the demonstration span [{a}, {b}]"));
            }
        }
    }
    let state_dim = dof.map(|d| 2 * d);
    let check_len = |ck: &mut Checker, field: &str, v: &Option<Vec<f64>>| -> Option<Vec<f64>> {
        let v = ck.required(p(field), v)?;
        match state_dim {
            Some(s) if v.len() != s => {
                ck.fail(
                    p(field),
                    format!("expected {s} entries (positions then velocities), got {}", v.len()),
                );
                None
            }
            _ => Some(v),
        }
    };
    let check_component = |ck: &mut Checker, f: usize| -> Option<usize> {
        match state_dim {
            Some(s) if f >= s => {
                ck.fail(
                    p("component"),
                    format!("component {f} out of range for state dimension {s}"),
                );
                None
            }
            _ => Some(f),
        }
    };
    let slack = |ck: &mut Checker, default: f64| ck.positive(p("eps"), Some(c.eps.unwrap_or(default)), "slack eps");
    let decl = match c.kind.as_deref() {
        Some("desired_point") => {
            let state = check_len(ck, "state", &c.state);
            let eps = slack(ck, DEFAULT_DESIRED_EPS);
            ConstraintDecl::DesiredPoint {
                state: state?,
                eps: eps?,
            }
        }
        Some("ball") => {
            let selector = ck.required(p("selector"), &c.selector);
            let center = ck.required(p("center"), &c.center);
            let radius = ck.required(p("radius"), &c.radius);
            let radius = ck.positive(p("radius"), radius, "ball radius");
            if let (Some(sel), Some(cen)) = (&selector, &center) {
                if sel.len() != cen.len() || sel.is_empty() {
                    ck.fail(p("center"), "center and selector must have the same non-zero length");
                    return None;
                }
                if let Some(s) = state_dim {
                    if sel.iter().any(|&f| f >= s) {
                        ck.fail(p("selector"), format!("component out of range for state dimension {s}"));
                        return None;
                    }
                }
            }
            ConstraintDecl::Ball {
                selector: selector?,
                center: center?,
                radius: radius?,
            }
        }
        Some("box") => {
            let component = ck
                .required(p("component"), &c.component)
                .and_then(|f| check_component(ck, f));
            let lower = ck.required(p("lower"), &c.lower);
            let upper = ck.required(p("upper"), &c.upper);
            if let (Some(l), Some(u)) = (lower, upper) {
                if !(l < u) {
                    ck.fail(p("upper"), format!("lower ({l}) must be < upper ({u})"));
                    return None;
                }
            }
            ConstraintDecl::Box {
                component: component?,
                lower: lower?,
                upper: upper?,
            }
        }
        Some("linear") => {
            let theta = check_len(ck, "theta", &c.theta);
            ConstraintDecl::Linear {
                theta: theta?,
                offset: c.offset.unwrap_or(0.0),
            }
        }
        Some("plane") => {
            let theta = check_len(ck, "theta", &c.theta);
            let eps = slack(ck, DEFAULT_DESIRED_EPS);
            ConstraintDecl::Plane {
                theta: theta?,
                offset: c.offset.unwrap_or(0.0),
                eps: eps?,
            }
        }
        Some("task_position") => {
            let target = ck.required(p("target"), &c.target);
            let eps = slack(ck, DEFAULT_TASK_EPS);
            let target = match target {
                Some(t) if t.len() == 3 => Some([t[0], t[1], t[2]]),
                Some(t) => {
                    ck.fail(p("target"), format!("expected 3 coordinates, got {}", t.len()));
                    None
                }
                None => None,
            };
            ConstraintDecl::TaskPosition {
                target: target?,
                eps: eps?,
            }
        }
        Some("task_halfspace") => {
            let axis = ck.required(p("axis"), &c.axis);
            let axis = match axis.as_deref().map(parse_axis) {
                Some(None) => {
                    ck.fail(p("axis"), "expected x, y or z");
                    None
                }
                other => other.flatten(),
            };
            let bound = ck.required(p("bound"), &c.bound);
            let sense = match c.sense.as_deref().map(parse_sense) {
                Some(None) => {
                    ck.fail(p("sense"), "expected above or below");
                    None
                }
                Some(s) => s,
                None => Some(Sense::Above),
            };
            let margin = ck.nonnegative(p("margin"), c.margin.unwrap_or(0.0));
            ConstraintDecl::TaskHalfspace {
                axis: axis?,
                bound: bound?,
                sense: sense?,
                margin: margin?,
            }
        }
        Some(other) => {
            ck.fail(
                p("kind"),
                format!(
                    "unknown kind `{other}` (desired_point, ball, box, linear, plane, task_position, task_halfspace)"
                ),
            );
            return None;
        }
        None => {
            ck.fail(p("kind"), "missing");
            return None;
        }
    };
    Some(ConstraintEntry { at: at?, decl })
}

impl From<Vec<Violation>> for Error {
    fn from(v: Vec<Violation>) -> Self {
        Error::Config(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
    }
}
