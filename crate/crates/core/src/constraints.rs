//! Per-time-step inequality constraints `g(xi(t_n)) >= 0` and their
//! linearization around a trajectory.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KinematicModel;

/// User-supplied differentiable constraint on the full state `xi`.
pub trait DifferentiableConstraint: Send + Sync + fmt::Debug {
    fn value(&self, xi: &DVector<f64>) -> f64;
    fn gradient(&self, xi: &DVector<f64>) -> DVector<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    /// `value >= bound`
    #[serde(alias = ">=")]
    Above,
    /// `value <= bound`
    #[serde(alias = "<=")]
    Below,
}

#[derive(Clone, Debug)]
pub enum ConstraintKind {
    /// `theta^T xi + offset`
    Linear {
        theta: DVector<f64>,
        offset: f64,
    },
    /// `sign * (xi_f - target) + slack`
    DesiredComponent {
        component: usize,
        target: f64,
        sign: f64,
        slack: f64,
    },
    /// `radius_sq - |select(xi) - center|^2`
    Ball {
        selector: Vec<usize>,
        center: Vec<f64>,
        radius_sq: f64,
    },
    /// `xi_f - bound` (lower) or `bound - xi_f` (upper)
    ComponentBound {
        component: usize,
        bound: f64,
        upper: bool,
    },
    /// `sign * (f(q)_axis - target) + slack`
    TaskPosition {
        model: Arc<KinematicModel>,
        axis: usize,
        target: f64,
        sign: f64,
        slack: f64,
    },
    /// `f(q)_axis - bound - margin` (above) or `bound - margin - f(q)_axis` (below)
    TaskHalfspace {
        model: Arc<KinematicModel>,
        axis: usize,
        bound: f64,
        sense: Sense,
        margin: f64,
    },
    Custom(Arc<dyn DifferentiableConstraint>),
}

#[derive(Clone, Debug)]
pub struct PointConstraint {
    pub kind: ConstraintKind,
    /// Grid index `n` the constraint acts on.
    pub index: usize,
    pub label: String,
}

fn positions(xi: &DVector<f64>) -> Vec<f64> {
    xi.rows(0, xi.len() / 2).iter().copied().collect()
}

impl PointConstraint {
    pub fn new(index: usize, kind: ConstraintKind, label: impl Into<String>) -> Self {
        Self {
            kind,
            index,
            label: label.into(),
        }
    }

    pub fn value(&self, xi: &DVector<f64>) -> f64 {
        match &self.kind {
            ConstraintKind::Linear { theta, offset } => theta.dot(xi) + offset,
            ConstraintKind::DesiredComponent {
                component,
                target,
                sign,
                slack,
            } => sign * (xi[*component] - target) + slack,
            ConstraintKind::Ball {
                selector,
                center,
                radius_sq,
            } => {
                let d2: f64 = selector.iter().zip(center).map(|(&i, c)| (xi[i] - c).powi(2)).sum();
                radius_sq - d2
            }
            ConstraintKind::ComponentBound {
                component,
                bound,
                upper,
            } => {
                if *upper {
                    bound - xi[*component]
                } else {
                    xi[*component] - bound
                }
            }
            ConstraintKind::TaskPosition {
                model,
                axis,
                target,
                sign,
                slack,
            } => {
                let x = model.end_effector(&positions(xi)).expect("validated model");
                sign * (x[*axis] - target) + slack
            }
            ConstraintKind::TaskHalfspace {
                model,
                axis,
                bound,
                sense,
                margin,
            } => {
                let x = model.end_effector(&positions(xi)).expect("validated model");
                match sense {
                    Sense::Above => x[*axis] - bound - margin,
                    Sense::Below => bound - margin - x[*axis],
                }
            }
            ConstraintKind::Custom(c) => c.value(xi),
        }
    }

    pub fn gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
        let dim = xi.len();
        let mut g = DVector::zeros(dim);
        match &self.kind {
            ConstraintKind::Linear { theta, .. } => g.copy_from(theta),
            ConstraintKind::DesiredComponent { component, sign, .. } => g[*component] = *sign,
            ConstraintKind::Ball { selector, center, .. } => {
                for (&i, c) in selector.iter().zip(center) {
                    g[i] -= 2.0 * (xi[i] - c);
                }
            }
            ConstraintKind::ComponentBound { component, upper, .. } => {
                g[*component] = if *upper { -1.0 } else { 1.0 };
            }
            ConstraintKind::TaskPosition { model, axis, sign, .. } => {
                let jac = model.end_effector_jacobian(&positions(xi)).expect("validated model");
                for j in 0..dim / 2 {
                    g[j] = sign * jac[(*axis, j)];
                }
            }
            ConstraintKind::TaskHalfspace { model, axis, sense, .. } => {
                let jac = model.end_effector_jacobian(&positions(xi)).expect("validated model");
                let s = match sense {
                    Sense::Above => 1.0,
                    Sense::Below => -1.0,
                };
                for j in 0..dim / 2 {
                    g[j] = s * jac[(*axis, j)];
                }
            }
            ConstraintKind::Custom(c) => g = c.gradient(xi),
        }
        g
    }

    fn check_dims(&self, dof: usize) -> Result<()> {
        let dim = 2 * dof;
        let bad = |what: String| Err(Error::Shape(format!("constraint `{}`: {what}", self.label)));
        match &self.kind {
            ConstraintKind::Linear { theta, .. } if theta.len() != dim => {
                bad(format!("theta has {} entries, state has {dim}", theta.len()))
            }
            ConstraintKind::DesiredComponent { component, .. } | ConstraintKind::ComponentBound { component, .. }
                if *component >= dim =>
            {
                bad(format!("component {component} out of range"))
            }
            ConstraintKind::Ball { selector, center, .. }
                if selector.len() != center.len() || selector.iter().any(|&i| i >= dim) =>
            {
                bad("selector/center mismatch".into())
            }
            ConstraintKind::TaskPosition { model, axis, .. } | ConstraintKind::TaskHalfspace { model, axis, .. }
                if model.dof() != dof || *axis > 2 =>
            {
                bad(format!("model has {} dof, state has {dof}", model.dof()))
            }
            _ => Ok(()),
        }
    }
}

/// `inner(xi) = 0` enforced as `sign * inner(xi) + slack >= 0`.
#[derive(Debug)]
pub struct SlackedEquality {
    pub inner: Arc<dyn DifferentiableConstraint>,
    pub sign: f64,
    pub slack: f64,
}

impl DifferentiableConstraint for SlackedEquality {
    fn value(&self, xi: &DVector<f64>) -> f64 {
        self.sign * self.inner.value(xi) + self.slack
    }

    fn gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(xi) * self.sign
    }
}

fn check_slack(eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("slack must be > 0, got {eps}")));
    }
    Ok(())
}

const SLACK_SIGNS: [(f64, &str); 2] = [(1.0, "+"), (-1.0, "-")];

/// Paired constraints pinning every state component at `index` to `target`
/// within `eps`: `2 * dim` constraints, all lower sides first.
pub fn desired_point(index: usize, target: &DVector<f64>, eps: f64) -> Result<Vec<PointConstraint>> {
    check_slack(eps)?;
    let mut out = Vec::with_capacity(2 * target.len());
    for (sign, tag) in SLACK_SIGNS {
        for f in 0..target.len() {
            out.push(PointConstraint::new(
                index,
                ConstraintKind::DesiredComponent {
                    component: f,
                    target: target[f],
                    sign,
                    slack: eps,
                },
                format!("desired[{index}].{f}{tag}"),
            ));
        }
    }
    Ok(out)
}

pub fn ball_constraint(index: usize, center: &[f64], radius_sq: f64, selector: &[usize]) -> Result<PointConstraint> {
    if !(radius_sq > 0.0) {
        return Err(Error::invalid("radius_sq", "must be > 0"));
    }
    if center.len() != selector.len() {
        return Err(Error::Shape("center and selector lengths differ".into()));
    }
    Ok(PointConstraint::new(
        index,
        ConstraintKind::Ball {
            selector: selector.to_vec(),
            center: center.to_vec(),
            radius_sq,
        },
        format!("ball[{index}]"),
    ))
}

pub fn box_constraint(index: usize, component: usize, lower: f64, upper: f64) -> Result<[PointConstraint; 2]> {
    if !(lower < upper) {
        return Err(Error::invalid(
            "bounds",
            format!("lower {lower} must be < upper {upper}"),
        ));
    }
    Ok([
        PointConstraint::new(
            index,
            ConstraintKind::ComponentBound {
                component,
                bound: lower,
                upper: false,
            },
            format!("box[{index}].{component}.lo"),
        ),
        PointConstraint::new(
            index,
            ConstraintKind::ComponentBound {
                component,
                bound: upper,
                upper: true,
            },
            format!("box[{index}].{component}.hi"),
        ),
    ])
}

pub fn linear_constraint(index: usize, theta: DVector<f64>, offset: f64) -> PointConstraint {
    PointConstraint::new(
        index,
        ConstraintKind::Linear { theta, offset },
        format!("linear[{index}]"),
    )
}

/// `theta^T xi + offset = 0` within `eps`.
pub fn plane_constraint(index: usize, theta: DVector<f64>, offset: f64, eps: f64) -> Result<[PointConstraint; 2]> {
    check_slack(eps)?;
    Ok([
        PointConstraint::new(
            index,
            ConstraintKind::Linear {
                theta: theta.clone(),
                offset: offset + eps,
            },
            format!("plane[{index}]+"),
        ),
        PointConstraint::new(
            index,
            ConstraintKind::Linear {
                theta: -theta,
                offset: -offset + eps,
            },
            format!("plane[{index}]-"),
        ),
    ])
}

pub fn equality_constraint(
    index: usize,
    inner: Arc<dyn DifferentiableConstraint>,
    eps: f64,
) -> Result<[PointConstraint; 2]> {
    check_slack(eps)?;
    let make = |sign: f64, tag: &str| {
        PointConstraint::new(
            index,
            ConstraintKind::Custom(Arc::new(SlackedEquality {
                inner: inner.clone(),
                sign,
                slack: eps,
            })),
            format!("equality[{index}]{tag}"),
        )
    };
    Ok([make(1.0, "+"), make(-1.0, "-")])
}

/// End-effector position pinned to `target` per axis within `eps`: six constraints.
pub fn task_position_constraint(
    index: usize,
    model: Arc<KinematicModel>,
    target: [f64; 3],
    eps: f64,
) -> Result<Vec<PointConstraint>> {
    check_slack(eps)?;
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        for (sign, tag) in SLACK_SIGNS {
            out.push(PointConstraint::new(
                index,
                ConstraintKind::TaskPosition {
                    model: model.clone(),
                    axis,
                    target: target[axis],
                    sign,
                    slack: eps,
                },
                format!("task_position[{index}].{}{tag}", ["x", "y", "z"][axis]),
            ));
        }
    }
    Ok(out)
}

/// End-effector coordinate kept on one side of `bound`, tightened by `margin`.
pub fn task_halfspace_constraint(
    index: usize,
    model: Arc<KinematicModel>,
    axis: usize,
    bound: f64,
    sense: Sense,
    margin: f64,
) -> Result<PointConstraint> {
    if axis > 2 {
        return Err(Error::invalid("axis", "must be 0 (x), 1 (y) or 2 (z)"));
    }
    if !(margin >= 0.0) {
        return Err(Error::invalid("margin", "must be non-negative"));
    }
    Ok(PointConstraint::new(
        index,
        ConstraintKind::TaskHalfspace {
            model,
            axis,
            bound,
            sense,
            margin,
        },
        format!("task_halfspace[{index}].{}", ["x", "y", "z"][axis]),
    ))
}

/// Constraints attached to the points of a time grid.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    dof: usize,
    per_point: Vec<Vec<PointConstraint>>,
}

impl ConstraintSet {
    pub fn new(n_points: usize, dof: usize) -> Self {
        Self {
            dof,
            per_point: vec![Vec::new(); n_points],
        }
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn n_points(&self) -> usize {
        self.per_point.len()
    }

    pub fn add(&mut self, c: PointConstraint) -> Result<()> {
        if c.index >= self.per_point.len() {
            return Err(Error::invalid(
                "index",
                format!(
                    "constraint `{}` at index {} outside grid of {}",
                    c.label,
                    c.index,
                    self.per_point.len()
                ),
            ));
        }
        c.check_dims(self.dof)?;
        self.per_point[c.index].push(c);
        Ok(())
    }

    pub fn extend(&mut self, cs: impl IntoIterator<Item = PointConstraint>) -> Result<()> {
        for c in cs {
            self.add(c)?;
        }
        Ok(())
    }

    pub fn at(&self, n: usize) -> &[PointConstraint] {
        &self.per_point[n]
    }

    pub fn len(&self) -> usize {
        self.per_point.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &PointConstraint> {
        self.per_point.iter().flatten()
    }

    /// Smallest constraint value over the trajectory (`+inf` when empty).
    pub fn min_value(&self, trajectory: &[DVector<f64>]) -> f64 {
        self.iter()
            .map(|c| c.value(&trajectory[c.index]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `G` (block diagonal) and `Q` at the current trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedConstraints {
    pub state_dim: usize,
    /// Per grid point, a `state_dim x F_n` matrix of gradients.
    pub blocks: Vec<DMatrix<f64>>,
    pub values: DVector<f64>,
    /// Flat index -> `(n, f)`.
    pub layout: Vec<(usize, usize)>,
    /// Start of each grid point's multipliers in the flat vector.
    pub offsets: Vec<usize>,
}

impl LinearizedConstraints {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `G alpha`, length `state_dim * N`.
    pub fn g_mul(&self, alpha: &DVector<f64>) -> DVector<f64> {
        let s = self.state_dim;
        let mut out = DVector::zeros(s * self.blocks.len());
        for (n, b) in self.blocks.iter().enumerate() {
            if b.ncols() == 0 {
                continue;
            }
            let a = alpha.rows(self.offsets[n], b.ncols());
            out.rows_mut(n * s, s).copy_from(&(b * a));
        }
        out
    }

    /// `G^T v`, length = number of constraints.
    pub fn gt_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let s = self.state_dim;
        let mut out = DVector::zeros(self.len());
        for (n, b) in self.blocks.iter().enumerate() {
            if b.ncols() == 0 {
                continue;
            }
            let part = b.transpose() * v.rows(n * s, s);
            out.rows_mut(self.offsets[n], b.ncols()).copy_from(&part);
        }
        out
    }

    /// `G^T M G` for a dense `M` of size `(state_dim N)^2`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.state_dim;
        let f = self.len();
        let mut out = DMatrix::zeros(f, f);
        for (i, bi) in self.blocks.iter().enumerate() {
            if bi.ncols() == 0 {
                continue;
            }
            for (j, bj) in self.blocks.iter().enumerate() {
                if bj.ncols() == 0 {
                    continue;
                }
                let sub = bi.transpose() * m.view((i * s, j * s), (s, s)) * bj;
                out.view_mut((self.offsets[i], self.offsets[j]), (bi.ncols(), bj.ncols()))
                    .copy_from(&sub);
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let s = self.state_dim;
        let mut out = DMatrix::zeros(s * self.blocks.len(), self.len());
        for (n, b) in self.blocks.iter().enumerate() {
            if b.ncols() > 0 {
                out.view_mut((n * s, self.offsets[n]), (s, b.ncols())).copy_from(b);
            }
        }
        out
    }

    /// `max(-Q, 0)` over all constraints.
    pub fn max_violation(&self) -> f64 {
        self.values.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max)
    }
}

pub fn linearize(set: &ConstraintSet, trajectory: &[DVector<f64>]) -> Result<LinearizedConstraints> {
    if trajectory.len() != set.n_points() {
        return Err(Error::Shape(format!(
            "trajectory has {} points, constraint grid has {}",
            trajectory.len(),
            set.n_points()
        )));
    }
    let s = 2 * set.dof();
    let mut blocks = Vec::with_capacity(set.n_points());
    let mut values = Vec::with_capacity(set.len());
    let mut layout = Vec::with_capacity(set.len());
    let mut offsets = Vec::with_capacity(set.n_points());
    for (n, xi) in trajectory.iter().enumerate() {
        if xi.len() != s {
            return Err(Error::Shape(format!(
                "state {n} has {} entries, expected {s}",
                xi.len()
            )));
        }
        offsets.push(values.len());
        let cs = set.at(n);
        let mut block = DMatrix::zeros(s, cs.len());
        for (f, c) in cs.iter().enumerate() {
            let v = c.value(xi);
            let g = c.gradient(xi);
            if !v.is_finite() || g.len() != s || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteConstraint { n, f });
            }
            block.set_column(f, &g);
            values.push(v);
            layout.push((n, f));
        }
        blocks.push(block);
    }
    Ok(LinearizedConstraints {
        state_dim: s,
        blocks,
        values: DVector::from_vec(values),
        layout,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xi(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn desired_point_values() {
        let target = xi(&[1.0, 2.0, 3.0, 4.0]);
        let eps = 1e-3;
        let cs = desired_point(0, &target, eps).unwrap();
        assert_eq!(cs.len(), 8);
        assert!(cs.iter().all(|c| (c.value(&target) - eps).abs() < 1e-15));

        let mut off = target.clone();
        off[2] += 2.0 * eps;
        let vals: Vec<f64> = cs.iter().map(|c| c.value(&off)).collect();
        assert_eq!(vals.iter().filter(|v| (**v + eps).abs() < 1e-12).count(), 1);

        for c in &cs {
            let g1 = c.gradient(&target);
            let g2 = c.gradient(&xi(&[-5.0, 0.0, 9.0, 1.0]));
            assert_eq!(g1, g2);
            assert_eq!(g1.iter().filter(|v| v.abs() == 1.0).count(), 1);
        }
        assert!(desired_point(0, &target, 0.0).is_err());
    }

    #[test]
    fn ball_values() {
        let c = ball_constraint(0, &[0.0, 0.0], 256.0, &[0, 1]).unwrap();
        let center = xi(&[0.0, 0.0, 5.0, 5.0]);
        assert_eq!(c.value(&center), 256.0);
        assert!(c.gradient(&center).iter().all(|v| *v == 0.0));
        assert!(c.value(&xi(&[16.0, 0.0, 0.0, 0.0])).abs() < 1e-12);
        assert!(c.value(&xi(&[16.0 * 0.6, 16.0 * 0.8, 1.0, 1.0])).abs() < 1e-12);
    }

    #[test]
    fn box_values() {
        let [lo, hi] = box_constraint(0, 2, -53.0, 42.0).unwrap();
        let z = xi(&[0.0; 4]);
        assert_eq!((lo.value(&z), hi.value(&z)), (53.0, 42.0));
        assert_eq!(lo.value(&xi(&[0.0, 0.0, -53.0, 0.0])), 0.0);
        assert_eq!(lo.value(&xi(&[0.0, 0.0, -54.0, 0.0])), -1.0);
        assert!(box_constraint(0, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn task_constraints_on_planar_identity() {
        let model = Arc::new(KinematicModel::PlanarIdentity);
        let cs = task_position_constraint(0, model.clone(), [3.0, -4.0, 0.0], 1e-3).unwrap();
        let state = xi(&[3.0, -4.0, 0.5, 0.5]);
        assert!(cs.iter().all(|c| (c.value(&state) - 1e-3).abs() < 1e-15));

        let h = task_halfspace_constraint(0, model, 1, -5.0, Sense::Above, 0.5).unwrap();
        assert!((h.value(&state) - 0.5).abs() < 1e-15);
        assert_eq!(h.gradient(&state).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn plane_and_equality_pairs() {
        let theta = xi(&[1.0, -1.0, 0.0, 0.0]);
        let [a, b] = plane_constraint(0, theta, 0.5, 0.01).unwrap();
        let p = xi(&[1.0, 1.5, 0.0, 0.0]);
        assert!((a.value(&p) - 0.01).abs() < 1e-15 && (b.value(&p) - 0.01).abs() < 1e-15);

        #[derive(Debug)]
        struct Circle;
        impl DifferentiableConstraint for Circle {
            fn value(&self, xi: &DVector<f64>) -> f64 {
                xi[0] * xi[0] + xi[1] * xi[1] - 1.0
            }
            fn gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
                DVector::from_vec(vec![2.0 * xi[0], 2.0 * xi[1], 0.0, 0.0])
            }
        }
        let [e1, e2] = equality_constraint(0, Arc::new(Circle), 1e-2).unwrap();
        for s in [
            xi(&[1.0, 0.0, 0.0, 0.0]),
            xi(&[0.7, 0.7, 0.0, 0.0]),
            xi(&[0.0, 1.004, 0.0, 0.0]),
        ] {
            if e1.value(&s) >= 0.0 && e2.value(&s) >= 0.0 {
                assert!(Circle.value(&s).abs() <= 1e-2);
            }
        }
        assert!(e1.value(&xi(&[0.7, 0.7, 0.0, 0.0])) < 0.0 || e2.value(&xi(&[0.7, 0.7, 0.0, 0.0])) < 0.0);
    }

    #[test]
    fn empty_set_linearizes_to_nothing() {
        let set = ConstraintSet::new(3, 1);
        let traj = vec![xi(&[0.0, 0.0]); 3];
        let lin = linearize(&set, &traj).unwrap();
        assert!(lin.is_empty());
        assert_eq!(lin.to_dense().shape(), (6, 0));
    }

    #[test]
    fn linear_constraint_is_exact() {
        let mut set = ConstraintSet::new(2, 1);
        let theta = xi(&[2.0, -1.0]);
        set.add(linear_constraint(1, theta.clone(), 0.5)).unwrap();
        let traj = vec![xi(&[0.0, 0.0]), xi(&[1.0, 3.0])];
        let lin = linearize(&set, &traj).unwrap();
        assert_eq!(lin.blocks[1].column(0).into_owned(), theta);
        assert_eq!(lin.values[0], 2.0 - 3.0 + 0.5);
        assert_eq!(lin.layout, vec![(1, 0)]);
    }

    #[test]
    fn block_layout_matches_dense_construction() {
        let mut set = ConstraintSet::new(3, 1);
        set.extend(box_constraint(0, 1, -1.0, 1.0).unwrap()).unwrap();
        set.add(ball_constraint(2, &[0.5], 4.0, &[0]).unwrap()).unwrap();
        set.extend(desired_point(2, &xi(&[1.0, 0.0]), 0.1).unwrap()).unwrap();
        let traj = vec![xi(&[0.3, 0.2]), xi(&[0.0, 0.0]), xi(&[1.5, -0.4])];
        let lin = linearize(&set, &traj).unwrap();

        // independently assembled dense G: column k is the gradient of the k-th
        // constraint in (n ascending, insertion) order, placed at rows of n.
        let mut expected = DMatrix::zeros(6, set.len());
        let mut k = 0;
        for n in 0..3 {
            for c in set.at(n) {
                let g = c.gradient(&traj[n]);
                for r in 0..2 {
                    expected[(2 * n + r, k)] = g[r];
                }
                k += 1;
            }
        }
        assert_eq!(lin.to_dense(), expected);
        assert_eq!(lin.offsets, vec![0, 2, 2]);
        let v = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        assert!((lin.gt_mul(&v) - expected.transpose() * &v).amax() < 1e-14);
        let a = DVector::from_fn(set.len(), |i, _| 0.3 * i as f64);
        assert!((lin.g_mul(&a) - &expected * &a).amax() < 1e-14);
        let m = DMatrix::from_fn(6, 6, |i, j| ((i * 3 + j * 5) % 7) as f64);
        assert!((lin.congruence(&m) - expected.transpose() * m * &expected).amax() < 1e-12);
    }

    #[test]
    fn out_of_grid_and_shape_errors() {
        let mut set = ConstraintSet::new(2, 1);
        assert!(set.add(box_constraint(5, 0, 0.0, 1.0).unwrap()[0].clone()).is_err());
        assert!(set.add(linear_constraint(0, xi(&[1.0, 2.0, 3.0]), 0.0)).is_err());
        assert!(linearize(&set, &[xi(&[0.0, 0.0])]).is_err());
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        #[derive(Debug)]
        struct Bad;
        impl DifferentiableConstraint for Bad {
            fn value(&self, _: &DVector<f64>) -> f64 {
                1.0
            }
            fn gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
                DVector::from_element(xi.len(), f64::NAN)
            }
        }
        let mut set = ConstraintSet::new(1, 1);
        set.add(PointConstraint::new(0, ConstraintKind::Custom(Arc::new(Bad)), "bad"))
            .unwrap();
        assert!(matches!(
            linearize(&set, &[xi(&[0.0, 0.0])]),
            Err(Error::NonFiniteConstraint { n: 0, f: 0 })
        ));
    }
}
