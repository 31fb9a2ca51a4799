//! Workspace obstacle cost on body points and its joint-space gradient stack.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KinematicModel;

/// A sphere with a quadratic safety band of width `margin` around it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 3],
    pub radius: f64,
    pub margin: f64,
}

impl Obstacle {
    pub fn new(center: [f64; 3], radius: f64, margin: f64) -> Result<Self> {
        let o = Self { center, radius, margin };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::invalid("radius", format!("must be > 0, got {}", self.radius)));
        }
        if !(self.margin > 0.0) {
            return Err(Error::invalid("margin", format!("must be > 0, got {}", self.margin)));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        (x - self.center()).norm()
    }

    /// `c(d)`: linear inside the sphere, quadratic in the band, zero beyond.
    pub fn cost(&self, d: f64) -> f64 {
        let (r, e) = (self.radius, self.margin);
        if d <= r {
            r - d + 0.5 * e
        } else if d - r <= e {
            let s = d - r - e;
            s * s / (2.0 * e)
        } else {
            0.0
        }
    }

    /// `c'(d)`
    pub fn cost_slope(&self, d: f64) -> f64 {
        let (r, e) = (self.radius, self.margin);
        if d <= r {
            -1.0
        } else if d - r <= e {
            (d - r - e) / e
        } else {
            0.0
        }
    }

    pub fn cost_gradient(&self, x: &Vector3<f64>) -> PointGradient {
        let diff = x - self.center();
        let d = diff.norm();
        if d < 1e-9 {
            return PointGradient {
                gradient: Vector3::zeros(),
                degenerate: true,
            };
        }
        PointGradient {
            gradient: diff * (self.cost_slope(d) / d),
            degenerate: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointGradient {
    pub gradient: Vector3<f64>,
    /// Set when the point sits on the center and the direction is undefined.
    pub degenerate: bool,
}

pub fn point_cost(obs: &Obstacle, d: f64) -> f64 {
    obs.cost(d)
}

pub fn point_cost_gradient(obs: &Obstacle, x: &Vector3<f64>) -> PointGradient {
    obs.cost_gradient(x)
}

/// Index of the body point closest to the obstacle center (lowest index on ties).
pub fn nearest_body_point(model: &KinematicModel, obs: &Obstacle, q: &[f64]) -> Result<usize> {
    let points = model.body_point_positions(q)?;
    Ok(nearest_of(&points, obs))
}

fn nearest_of(points: &[Vector3<f64>], obs: &Obstacle) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (u, p) in points.iter().enumerate() {
        let d = obs.distance(p);
        if d < best_d {
            best = u;
            best_d = d;
        }
    }
    best
}

/// Stacked `H` over the obstacle check times: position rows hold
/// `J^T grad c`, velocity rows are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleGradientStack {
    pub dof: usize,
    /// `nearest[m][k]`: body point chosen for obstacle `k` at check time `m`.
    pub nearest: Vec<Vec<usize>>,
    pub h: DVector<f64>,
    /// Total cost `sum_m sum_k c(d_mk)`.
    pub cost: f64,
    /// Nearest body-point distance per check time (minimum over obstacles).
    pub min_distance: Vec<f64>,
    pub degenerate: usize,
}

impl ObstacleGradientStack {
    pub fn len(&self) -> usize {
        self.nearest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nearest.is_empty()
    }

    /// `H_m` for check time `m`.
    pub fn block(&self, m: usize) -> DVector<f64> {
        self.h.rows(2 * self.dof * m, 2 * self.dof).into_owned()
    }
}

/// Picks the nearest body point per check time and obstacle, then assembles `H`.
pub fn assemble_h(
    model: &KinematicModel,
    obstacles: &[Obstacle],
    positions: &[Vec<f64>],
) -> Result<ObstacleGradientStack> {
    assemble_with(model, obstacles, positions, None)
}

/// Same as [`assemble_h`] with a fixed body-point assignment `nearest[m][k]`.
pub fn assemble_h_frozen(
    model: &KinematicModel,
    obstacles: &[Obstacle],
    positions: &[Vec<f64>],
    nearest: &[Vec<usize>],
) -> Result<ObstacleGradientStack> {
    if nearest.len() != positions.len() || nearest.iter().any(|n| n.len() != obstacles.len()) {
        return Err(Error::Shape(
            "frozen assignment does not match positions/obstacles".into(),
        ));
    }
    assemble_with(model, obstacles, positions, Some(nearest))
}

fn assemble_with(
    model: &KinematicModel,
    obstacles: &[Obstacle],
    positions: &[Vec<f64>],
    frozen: Option<&[Vec<usize>]>,
) -> Result<ObstacleGradientStack> {
    if positions.is_empty() {
        return Err(Error::invalid("positions", "need at least one check time"));
    }
    let dof = model.dof();
    let s = 2 * dof;
    let mut h = DVector::zeros(s * positions.len());
    let mut nearest = Vec::with_capacity(positions.len());
    let mut min_distance = Vec::with_capacity(positions.len());
    let mut cost = 0.0;
    let mut degenerate = 0;
    for (m, q) in positions.iter().enumerate() {
        let points = model.body_point_positions(q)?;
        let mut chosen = Vec::with_capacity(obstacles.len());
        let mut closest = f64::INFINITY;
        for (k, obs) in obstacles.iter().enumerate() {
            let u = match frozen {
                Some(f) => f[m][k],
                None => nearest_of(&points, obs),
            };
            if u >= points.len() {
                return Err(Error::InvalidBodyPoint {
                    index: u,
                    count: points.len(),
                });
            }
            let x = points[u];
            let d = obs.distance(&x);
            closest = closest.min(points.iter().map(|p| obs.distance(p)).fold(f64::INFINITY, f64::min));
            cost += obs.cost(d);
            let g = obs.cost_gradient(&x);
            if g.degenerate {
                degenerate += 1;
            }
            if g.gradient != Vector3::zeros() {
                let jac = model.body_point_jacobian(q, u)?;
                let pulled = jac.transpose() * g.gradient;
                let mut rows = h.rows_mut(m * s, dof);
                rows += &pulled;
            }
            chosen.push(u);
        }
        nearest.push(chosen);
        min_distance.push(closest);
    }
    Ok(ObstacleGradientStack {
        dof,
        nearest,
        h,
        cost,
        min_distance,
        degenerate,
    })
}
