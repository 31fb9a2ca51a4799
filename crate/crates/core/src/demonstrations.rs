//! Demonstration sets: CSV ingestion, velocity estimation and a synthetic
//! generator for smooth noisy realizations of a nominal curve.
//!
//! CSV layout: a header `t,q1,...,qD[,qd1,...,qdD]`, one sample per row, and
//! demos separated by a line holding only `#demo` (a blank line also ends a
//! demo).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One time-stamped joint sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

/// W demonstrations of equal length over `dof` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct DemonstrationSet {
    demos: Vec<Vec<Sample>>,
    dof: usize,
}

impl DemonstrationSet {
    pub fn new(demos: Vec<Vec<Sample>>, dof: usize) -> Result<Self> {
        if dof == 0 {
            return Err(Error::invalid("dof", "must be positive"));
        }
        if demos.is_empty() {
            return Err(Error::InconsistentDemos("no demonstrations".into()));
        }
        let len = demos[0].len();
        for (w, demo) in demos.iter().enumerate() {
            if demo.len() != len {
                return Err(Error::InconsistentDemos(format!(
                    "demo {w} has {} samples, demo 0 has {len}",
                    demo.len()
                )));
            }
            if demo.is_empty() {
                return Err(Error::InconsistentDemos(format!("demo {w} is empty")));
            }
            for (n, s) in demo.iter().enumerate() {
                if s.q.len() != dof || s.qdot.len() != dof {
                    return Err(Error::InconsistentDemos(format!(
                        "demo {w} sample {n} has {}/{} entries, expected {dof}",
                        s.q.len(),
                        s.qdot.len()
                    )));
                }
                if n > 0 && s.t <= demo[n - 1].t {
                    return Err(Error::NonIncreasingTime { row: n, t: s.t });
                }
            }
        }
        Ok(Self { demos, dof })
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Number of demonstrations W.
    pub fn count(&self) -> usize {
        self.demos.len()
    }

    /// Samples per demonstration N.
    pub fn length(&self) -> usize {
        self.demos[0].len()
    }

    pub fn demos(&self) -> &[Vec<Sample>] {
        &self.demos
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.demos.iter().flatten()
    }

    /// Time span covered by all demonstrations.
    pub fn time_span(&self) -> (f64, f64) {
        let lo = self.demos.iter().map(|d| d[0].t).fold(f64::INFINITY, f64::min);
        let hi = self
            .demos
            .iter()
            .map(|d| d[d.len() - 1].t)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Pooled rows `[t, q.., qdot..]` for density estimation.
    pub fn pooled_rows(&self) -> Vec<Vec<f64>> {
        self.samples()
            .map(|s| {
                let mut row = Vec::with_capacity(1 + 2 * self.dof);
                row.push(s.t);
                row.extend_from_slice(&s.q);
                row.extend_from_slice(&s.qdot);
                row
            })
            .collect()
    }
}

/// Velocities by finite differences: the three-point formula at interior
/// samples (exact for quadratics, also on non-uniform grids) and one-sided
/// differences at the endpoints.
pub fn estimate_velocities(positions: &[(f64, Vec<f64>)]) -> Result<Vec<Sample>> {
    let n = positions.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    for i in 1..n {
        if positions[i].0 <= positions[i - 1].0 {
            return Err(Error::NonIncreasingTime {
                row: i,
                t: positions[i].0,
            });
        }
    }
    let dof = positions[0].1.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (t, q) = &positions[i];
        let qdot = if i == 0 {
            let h = positions[1].0 - t;
            (0..dof).map(|d| (positions[1].1[d] - q[d]) / h).collect()
        } else if i == n - 1 {
            let h = t - positions[i - 1].0;
            (0..dof).map(|d| (q[d] - positions[i - 1].1[d]) / h).collect()
        } else {
            let hm = t - positions[i - 1].0;
            let hp = positions[i + 1].0 - t;
            let denom = hm * hp * (hm + hp);
            (0..dof)
                .map(|d| (hm * hm * (positions[i + 1].1[d] - q[d]) + hp * hp * (q[d] - positions[i - 1].1[d])) / denom)
                .collect()
        };
        out.push(Sample {
            t: *t,
            q: q.clone(),
            qdot,
        });
    }
    Ok(out)
}

pub fn load_csv(path: impl AsRef<Path>, has_velocity: bool, dof: usize) -> Result<DemonstrationSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, has_velocity, dof)
}

pub fn parse_csv(text: &str, has_velocity: bool, dof: usize) -> Result<DemonstrationSet> {
    if dof == 0 {
        return Err(Error::invalid("dof", "must be positive"));
    }
    let width = if has_velocity { 1 + 2 * dof } else { 1 + dof };
    let mut blocks: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new()];
    let mut seen_header = false;

    for (idx, raw) in text.lines().enumerate() {
        let row = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line == "#demo" {
            if !blocks.last().is_some_and(|b| b.is_empty()) {
                blocks.push(Vec::new());
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if !seen_header && line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            let cols = line.split(',').count();
            if cols != width {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("header has {cols} columns, expected {width}"),
                });
            }
            seen_header = true;
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let values = values.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if values.len() != width {
            return Err(Error::MalformedRow {
                row,
                reason: format!("{} columns, expected {width}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedRow {
                row,
                reason: "non-finite value".into(),
            });
        }
        let block = blocks.last_mut().expect("at least one block");
        if let Some((_, prev)) = block.last() {
            if values[0] <= prev[0] {
                return Err(Error::NonIncreasingTime { row, t: values[0] });
            }
        }
        block.push((row, values));
    }

    blocks.retain(|b| !b.is_empty());
    let mut demos = Vec::with_capacity(blocks.len());
    for block in blocks {
        let demo = if has_velocity {
            block
                .into_iter()
                .map(|(_, v)| Sample {
                    t: v[0],
                    q: v[1..=dof].to_vec(),
                    qdot: v[1 + dof..].to_vec(),
                })
                .collect()
        } else {
            let pos: Vec<(f64, Vec<f64>)> = block.into_iter().map(|(_, v)| (v[0], v[1..].to_vec())).collect();
            estimate_velocities(&pos)?
        };
        demos.push(demo);
    }
    DemonstrationSet::new(demos, dof)
}

/// Writes positions and velocities with 17 significant digits.
pub fn to_csv_string(set: &DemonstrationSet) -> String {
    let dof = set.dof();
    let mut out = String::from("t");
    for d in 1..=dof {
        write!(out, ",q{d}").unwrap();
    }
    for d in 1..=dof {
        write!(out, ",qd{d}").unwrap();
    }
    out.push('\n');
    for (w, demo) in set.demos().iter().enumerate() {
        if w > 0 {
            out.push_str("#demo\n");
        }
        for s in demo {
            out.push_str(&fmt_f64(s.t));
            for v in s.q.iter().chain(&s.qdot) {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_csv(set: &DemonstrationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv_string(set)).map_err(|e| Error::io(path, e))
}

/// Full double precision (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A nominal curve through waypoints, traversed with a minimum-jerk timing
/// law so that velocity vanishes at both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub waypoints: Vec<Vec<f64>>,
    pub start_time: f64,
    pub duration: f64,
    pub samples: usize,
}

impl CurveSpec {
    pub fn dof(&self) -> usize {
        self.waypoints.first().map_or(0, Vec::len)
    }

    /// A letter "G" written counter-clockwise from the upper right, in cm.
    pub fn letter_g(scale: f64, duration: f64, samples: usize) -> Self {
        let pts = [
            [7.0, 7.5],
            [1.0, 10.0],
            [-4.5, 8.0],
            [-7.5, 3.0],
            [-7.0, -3.0],
            [-4.0, -7.0],
            [0.0, -8.5],
            [5.5, -8.0],
            [8.5, -4.0],
            [8.5, 0.5],
            [3.0, 0.5],
        ];
        Self {
            waypoints: pts.iter().map(|p| vec![p[0] * scale, p[1] * scale]).collect(),
            start_time: 0.0,
            duration,
            samples,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::invalid("waypoints", "need at least two"));
        }
        let dof = self.dof();
        if dof == 0 || self.waypoints.iter().any(|w| w.len() != dof) {
            return Err(Error::invalid("waypoints", "inconsistent dimensions"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid("duration", "must be positive"));
        }
        if self.samples < 3 {
            return Err(Error::TooFewSamples {
                needed: 3,
                got: self.samples,
            });
        }
        Ok(())
    }

    /// Position and velocity of the nominal curve at time `t`.
    pub fn evaluate(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let tau = ((t - self.start_time) / self.duration).clamp(0.0, 1.0);
        let s = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
        let ds = 30.0 * tau * tau * (1.0 - tau) * (1.0 - tau) / self.duration;
        let segments = (self.waypoints.len() - 1) as f64;
        let u = s * segments;
        let (pos, dpos) = self.catmull_rom(u);
        let vel = dpos.iter().map(|d| d * segments * ds).collect();
        (pos, vel)
    }

    fn point(&self, i: isize) -> Vec<f64> {
        let k = self.waypoints.len() as isize;
        if i < 0 {
            let (a, b) = (&self.waypoints[0], &self.waypoints[1]);
            a.iter().zip(b).map(|(a, b)| 2.0 * a - b).collect()
        } else if i >= k {
            let (a, b) = (&self.waypoints[(k - 1) as usize], &self.waypoints[(k - 2) as usize]);
            a.iter().zip(b).map(|(a, b)| 2.0 * a - b).collect()
        } else {
            self.waypoints[i as usize].clone()
        }
    }

    fn catmull_rom(&self, u: f64) -> (Vec<f64>, Vec<f64>) {
        let last = (self.waypoints.len() - 2) as f64;
        let seg = u.floor().clamp(0.0, last);
        let x = u - seg;
        let i = seg as isize;
        let (p0, p1, p2, p3) = (self.point(i - 1), self.point(i), self.point(i + 1), self.point(i + 2));
        let mut pos = Vec::with_capacity(p1.len());
        let mut vel = Vec::with_capacity(p1.len());
        for d in 0..p1.len() {
            let a = -0.5 * p0[d] + 1.5 * p1[d] - 1.5 * p2[d] + 0.5 * p3[d];
            let b = p0[d] - 2.5 * p1[d] + 2.0 * p2[d] - 0.5 * p3[d];
            let c = -0.5 * p0[d] + 0.5 * p2[d];
            pos.push(((a * x + b) * x + c) * x + p1[d]);
            vel.push((3.0 * a * x + 2.0 * b) * x + c);
        }
        (pos, vel)
    }
}

const NOISE_MODES: usize = 4;

/// `count` noisy realizations of `spec`. Each coordinate is perturbed by a
/// low-order Fourier field over normalized time with Gaussian amplitudes
/// scaled by `noise_scale`, so positions and velocities stay smooth.
pub fn generate_demos(spec: &CurveSpec, count: usize, noise_scale: f64, seed: u64) -> Result<DemonstrationSet> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::invalid("noise_scale", "must be non-negative"));
    }
    let dof = spec.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = spec.duration / (spec.samples - 1) as f64;
    let mut demos = Vec::with_capacity(count);
    for _ in 0..count {
        // amp[d][k] = (cos amplitude, sin amplitude)
        let amp: Vec<Vec<(f64, f64)>> = (0..dof)
            .map(|_| {
                (0..NOISE_MODES)
                    .map(|_| {
                        let a: f64 = StandardNormal.sample(&mut rng);
                        let b: f64 = StandardNormal.sample(&mut rng);
                        (a, b)
                    })
                    .collect()
            })
            .collect();
        let demo = (0..spec.samples)
            .map(|n| {
                let t = spec.start_time + n as f64 * dt;
                let (mut q, mut qdot) = spec.evaluate(t);
                let tau = (t - spec.start_time) / spec.duration;
                for d in 0..dof {
                    let (mut dq, mut dv) = (0.0, 0.0);
                    for (k, &(a, b)) in amp[d].iter().enumerate() {
                        let w = k as f64 * PI;
                        let weight = noise_scale / (k + 1) as f64;
                        dq += weight * (a * (w * tau).cos() + b * (w * tau).sin());
                        dv += weight * w * (-a * (w * tau).sin() + b * (w * tau).cos()) / spec.duration;
                    }
                    q[d] += dq;
                    qdot[d] += dv;
                }
                Sample { t, q, qdot }
            })
            .collect();
        demos.push(demo);
    }
    DemonstrationSet::new(demos, dof)
}
