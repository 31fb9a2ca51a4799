//! Forward kinematics and positional Jacobians of body points.

use std::path::Path;

use nalgebra::{DMatrix, Isometry3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// World origin and unit axis of one joint.
type Pivot = (Vector3<f64>, Vector3<f64>);

/// Fixed transform from the parent frame followed by a revolute axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub axis: [f64; 3],
}

/// A point rigidly attached to link `link` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyPoint {
    pub link: usize,
    pub offset: [f64; 3],
}

/// On-disk chain description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    #[serde(default)]
    pub name: String,
    pub joints: Vec<JointSpec>,
    /// Tool point on the last link; used when `body_points` is omitted.
    #[serde(default)]
    pub tool_offset: [f64; 3],
    #[serde(default)]
    pub body_points: Option<Vec<BodyPoint>>,
}

const GEN3_APPROX: &str = include_str!("../data/gen3_approx.toml");

#[derive(Clone, Debug, PartialEq)]
pub struct SerialChain {
    name: String,
    origins: Vec<Isometry3<f64>>,
    axes: Vec<Unit<Vector3<f64>>>,
    body_points: Vec<BodyPoint>,
    end_effector: usize,
}

impl SerialChain {
    pub fn from_file_spec(spec: ChainFile) -> Result<Self> {
        let dof = spec.joints.len();
        if dof == 0 {
            return Err(Error::Config("chain has no joints".into()));
        }
        let mut origins = Vec::with_capacity(dof);
        let mut axes = Vec::with_capacity(dof);
        for (i, j) in spec.joints.iter().enumerate() {
            let axis = Vector3::from(j.axis);
            if !(axis.norm() > 1e-12) {
                return Err(Error::Config(format!("joint {} has a zero axis", i + 1)));
            }
            axes.push(Unit::new_normalize(axis));
            let rot = Rotation3::from_euler_angles(j.rpy[0], j.rpy[1], j.rpy[2]);
            origins.push(Isometry3::from_parts(
                Translation3::from(Vector3::from(j.xyz)),
                UnitQuaternion::from_rotation_matrix(&rot),
            ));
        }
        let body_points = match spec.body_points {
            Some(points) => points,
            None => (1..=dof)
                .map(|link| BodyPoint { link, offset: [0.0; 3] })
                .chain(std::iter::once(BodyPoint {
                    link: dof,
                    offset: spec.tool_offset,
                }))
                .collect(),
        };
        if body_points.is_empty() {
            return Err(Error::Config("chain has no body points".into()));
        }
        for (u, p) in body_points.iter().enumerate() {
            if p.link == 0 || p.link > dof {
                return Err(Error::Config(format!(
                    "body point {u} is on link {} (valid 1..={dof})",
                    p.link
                )));
            }
        }
        let end_effector = body_points
            .iter()
            .rposition(|p| p.link == dof)
            .ok_or_else(|| Error::Config("no body point on the last link".into()))?;
        Ok(Self {
            name: spec.name,
            origins,
            axes,
            body_points,
            end_effector,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ChainFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file_spec(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// 7-DoF chain approximating the Kinova Gen3 geometry, in meters.
    pub fn gen3_approx() -> Self {
        Self::from_toml(GEN3_APPROX).expect("bundled chain parses")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.origins.len()
    }

    pub fn body_points(&self) -> &[BodyPoint] {
        &self.body_points
    }

    /// Joint frames in world coordinates: `frames[i]` is the pose of link
    /// `i + 1` (after its joint rotation) and `pivots[i]` the world origin
    /// and axis of joint `i + 1`.
    fn frames(&self, q: &[f64]) -> (Vec<Isometry3<f64>>, Vec<Pivot>) {
        let mut frames = Vec::with_capacity(self.dof());
        let mut pivots = Vec::with_capacity(self.dof());
        let mut t = Isometry3::identity();
        for ((origin, axis), &qi) in self.origins.iter().zip(&self.axes).zip(q) {
            let pivot = t * origin;
            pivots.push((pivot.translation.vector, pivot.rotation * axis.into_inner()));
            t = pivot * UnitQuaternion::from_axis_angle(axis, qi);
            frames.push(t);
        }
        (frames, pivots)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KinematicModel {
    /// Two coordinates read as a planar point `(q1, q2, 0)`.
    PlanarIdentity,
    SerialChain(SerialChain),
}

impl KinematicModel {
    pub fn dof(&self) -> usize {
        match self {
            KinematicModel::PlanarIdentity => 2,
            KinematicModel::SerialChain(c) => c.dof(),
        }
    }

    pub fn body_point_count(&self) -> usize {
        match self {
            KinematicModel::PlanarIdentity => 1,
            KinematicModel::SerialChain(c) => c.body_points.len(),
        }
    }

    pub fn end_effector_index(&self) -> usize {
        match self {
            KinematicModel::PlanarIdentity => 0,
            KinematicModel::SerialChain(c) => c.end_effector,
        }
    }

    fn check(&self, q: &[f64], u: usize) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Shape(format!(
                "joint vector has {} entries, model has {} dof",
                q.len(),
                self.dof()
            )));
        }
        let count = self.body_point_count();
        if u >= count {
            return Err(Error::InvalidBodyPoint { index: u, count });
        }
        Ok(())
    }

    pub fn body_point_position(&self, q: &[f64], u: usize) -> Result<Vector3<f64>> {
        self.check(q, u)?;
        Ok(match self {
            KinematicModel::PlanarIdentity => Vector3::new(q[0], q[1], 0.0),
            KinematicModel::SerialChain(c) => {
                {
                    let (frames, _) = c.frames(q);
                    let p = &c.body_points[u];
                    frames[p.link - 1] * nalgebra::Point3::from(Vector3::from(p.offset))
                }
                .coords
            }
        })
    }

    /// Positions of every body point at configuration `q`.
    pub fn body_point_positions(&self, q: &[f64]) -> Result<Vec<Vector3<f64>>> {
        self.check(q, 0)?;
        Ok(match self {
            KinematicModel::PlanarIdentity => vec![Vector3::new(q[0], q[1], 0.0)],
            KinematicModel::SerialChain(c) => {
                let (frames, _) = c.frames(q);
                c.body_points
                    .iter()
                    .map(|p| (frames[p.link - 1] * nalgebra::Point3::from(Vector3::from(p.offset))).coords)
                    .collect()
            }
        })
    }

    /// `3 x dof` positional Jacobian of body point `u`.
    pub fn body_point_jacobian(&self, q: &[f64], u: usize) -> Result<DMatrix<f64>> {
        self.check(q, u)?;
        Ok(match self {
            KinematicModel::PlanarIdentity => DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            KinematicModel::SerialChain(c) => {
                let (frames, pivots) = c.frames(q);
                let p = &c.body_points[u];
                let x = (frames[p.link - 1] * nalgebra::Point3::from(Vector3::from(p.offset))).coords;
                let mut jac = DMatrix::zeros(3, c.dof());
                for (j, (origin, axis)) in pivots.iter().enumerate().take(p.link) {
                    let col = axis.cross(&(x - origin));
                    jac.set_column(j, &col);
                }
                jac
            }
        })
    }

    pub fn end_effector(&self, q: &[f64]) -> Result<Vector3<f64>> {
        self.body_point_position(q, self.end_effector_index())
    }

    pub fn end_effector_jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.body_point_jacobian(q, self.end_effector_index())
    }
}

pub fn body_point_position(model: &KinematicModel, q: &[f64], u: usize) -> Result<Vector3<f64>> {
    model.body_point_position(q, u)
}

pub fn body_point_jacobian(model: &KinematicModel, q: &[f64], u: usize) -> Result<DMatrix<f64>> {
    model.body_point_jacobian(q, u)
}

pub fn end_effector(model: &KinematicModel, q: &[f64]) -> Result<Vector3<f64>> {
    model.end_effector(q)
}

pub fn end_effector_jacobian(model: &KinematicModel, q: &[f64]) -> Result<DMatrix<f64>> {
    model.end_effector_jacobian(q)
}
