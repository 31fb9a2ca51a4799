//! Gaussian mixture over `(t, xi)` fitted by EM, and Gaussian mixture
//! regression on time.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demonstrations::DemonstrationSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub n_components: usize,
    pub seed: u64,
    /// Covariance floor added as `reg * I`; `None` picks `1e-6 * trace / dim`.
    pub reg: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            n_components: 1,
            seed: 0,
            reg: None,
            max_iter: 500,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub seed: u64,
    pub reg: f64,
    pub iterations: usize,
    pub log_likelihood: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub prior: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Mixture with input dimension 1 (time) followed by the output block.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<Component>,
    pub fit: Option<FitInfo>,
}

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("components", "mixture needs at least one"));
        }
        let dim = components[0].mean.len();
        if dim < 2 {
            return Err(Error::Shape("mixture dimension must be >= 2".into()));
        }
        let total: f64 = components.iter().map(|c| c.prior).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("priors", format!("sum to {total}, expected 1")));
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.prior > 0.0) {
                return Err(Error::invalid("priors", format!("component {i} has prior {}", c.prior)));
            }
            if c.mean.len() != dim || c.covariance.shape() != (dim, dim) {
                return Err(Error::Shape(format!("component {i} has inconsistent dimensions")));
            }
            if Cholesky::new(c.covariance.clone()).is_none() {
                return Err(Error::NotPositiveDefinite(format!("covariance of component {i}")));
            }
        }
        Ok(Self { components, fit: None })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.dim() - 1
    }

    pub fn log_likelihood(&self, rows: &[DVector<f64>]) -> Result<f64> {
        let dens = ComponentDensities::new(&self.components)?;
        Ok(rows.iter().map(|x| log_sum_exp(&dens.log_weighted(x))).sum())
    }

    pub fn to_document(&self) -> GmmDocument {
        GmmDocument {
            input_dim: 1,
            output_dim: self.output_dim(),
            priors: self.components.iter().map(|c| c.prior).collect(),
            means: self
                .components
                .iter()
                .map(|c| c.mean.iter().copied().collect())
                .collect(),
            covariances: self
                .components
                .iter()
                .map(|c| {
                    let d = c.covariance.nrows();
                    (0..d)
                        .flat_map(|r| (0..d).map(move |col| (r, col)))
                        .map(|(r, col)| c.covariance[(r, col)])
                        .collect()
                })
                .collect(),
            fit: self.fit.clone(),
        }
    }

    pub fn from_document(doc: &GmmDocument) -> Result<Self> {
        let dim = doc.input_dim + doc.output_dim;
        if doc.input_dim != 1 {
            return Err(Error::Serde("only time-indexed mixtures are supported".into()));
        }
        if doc.means.len() != doc.priors.len() || doc.covariances.len() != doc.priors.len() {
            return Err(Error::Serde("component counts disagree".into()));
        }
        let mut components = Vec::with_capacity(doc.priors.len());
        for ((p, m), c) in doc.priors.iter().zip(&doc.means).zip(&doc.covariances) {
            if m.len() != dim || c.len() != dim * dim {
                return Err(Error::Serde("component dimension mismatch".into()));
            }
            components.push(Component {
                prior: *p,
                mean: DVector::from_column_slice(m),
                covariance: DMatrix::from_row_slice(dim, dim, c),
            });
        }
        let mut gmm = Self::new(components)?;
        gmm.fit = doc.fit.clone();
        Ok(gmm)
    }
}

/// Serialized mixture: covariances stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmDocument {
    pub input_dim: usize,
    pub output_dim: usize,
    pub priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub fit: Option<FitInfo>,
}

struct ComponentDensities {
    chol: Vec<Cholesky<f64, Dyn>>,
    log_norm: Vec<f64>,
    means: Vec<DVector<f64>>,
}

impl ComponentDensities {
    fn new(components: &[Component]) -> Result<Self> {
        let dim = components[0].mean.len() as f64;
        let mut chol = Vec::with_capacity(components.len());
        let mut log_norm = Vec::with_capacity(components.len());
        for (i, c) in components.iter().enumerate() {
            let ch = Cholesky::new(c.covariance.clone())
                .ok_or_else(|| Error::NotPositiveDefinite(format!("covariance of component {i}")))?;
            let log_det: f64 = ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            log_norm.push(c.prior.ln() - 0.5 * (dim * (2.0 * PI).ln() + log_det));
            chol.push(ch);
        }
        Ok(Self {
            chol,
            log_norm,
            means: components.iter().map(|c| c.mean.clone()).collect(),
        })
    }

    fn log_weighted(&self, x: &DVector<f64>) -> Vec<f64> {
        self.chol
            .iter()
            .zip(&self.log_norm)
            .zip(&self.means)
            .map(|((ch, ln), mu)| {
                let diff = x - mu;
                let z = ch.l().solve_lower_triangular(&diff).expect("triangular solve");
                ln - 0.5 * z.norm_squared()
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sample_mean_cov(rows: &[DVector<f64>], weights: Option<&[f64]>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let dim = rows[0].len();
    let w_at = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..rows.len()).map(w_at).sum();
    let mut mean = DVector::zeros(dim);
    for (i, r) in rows.iter().enumerate() {
        mean.axpy(w_at(i), r, 1.0);
    }
    mean /= total;
    let mut cov = DMatrix::zeros(dim, dim);
    for (i, r) in rows.iter().enumerate() {
        let d = r - &mean;
        cov.ger(w_at(i), &d, &d, 1.0);
    }
    cov /= total;
    (total, mean, cov)
}

pub fn default_reg(rows: &[DVector<f64>]) -> f64 {
    let (_, _, cov) = sample_mean_cov(rows, None);
    1e-6 * cov.trace() / cov.nrows() as f64
}

/// Fits a mixture on the pooled `(t, q, qdot)` samples of `data`.
pub fn fit_gmm(data: &DemonstrationSet, cfg: &GmmConfig) -> Result<GaussianMixture> {
    let rows: Vec<DVector<f64>> = data.pooled_rows().into_iter().map(DVector::from_vec).collect();
    fit_gmm_rows(&rows, cfg)
}

pub fn fit_gmm_rows(rows: &[DVector<f64>], cfg: &GmmConfig) -> Result<GaussianMixture> {
    let k = cfg.n_components;
    if k == 0 {
        return Err(Error::invalid("n_components", "must be at least 1"));
    }
    if rows.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            got: rows.len(),
        });
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("rows have different lengths".into()));
    }
    let reg = cfg.reg.unwrap_or_else(|| default_reg(rows));
    if !(reg >= 0.0) {
        return Err(Error::invalid("reg", "must be non-negative"));
    }
    let eye = DMatrix::<f64>::identity(dim, dim);

    if k == 1 {
        let (_, mean, cov) = sample_mean_cov(rows, None);
        let mut gmm = GaussianMixture::new(vec![Component {
            prior: 1.0,
            mean,
            covariance: cov + &eye * reg,
        }])?;
        let ll = gmm.log_likelihood(rows)?;
        gmm.fit = Some(FitInfo {
            seed: cfg.seed,
            reg,
            iterations: 0,
            log_likelihood: vec![ll],
        });
        return Ok(gmm);
    }

    let labels = kmeans_labels(rows, k, cfg.seed);
    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<DVector<f64>> = rows
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r.clone())
            .collect();
        let (count, mean, cov) = sample_mean_cov(&members, None);
        components.push(Component {
            prior: count / rows.len() as f64,
            mean,
            covariance: cov + &eye * reg,
        });
    }

    let n = rows.len();
    let mut history = Vec::new();
    let mut resp = vec![vec![0.0; n]; k];
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        let dens = ComponentDensities::new(&components)?;
        let mut ll = 0.0;
        for (i, x) in rows.iter().enumerate() {
            let lw = dens.log_weighted(x);
            let lse = log_sum_exp(&lw);
            ll += lse;
            for c in 0..k {
                resp[c][i] = (lw[c] - lse).exp();
            }
        }
        let converged = history
            .last()
            .is_some_and(|prev: &f64| (ll - prev).abs() <= cfg.tol * ll.abs().max(1.0));
        history.push(ll);
        if converged {
            break;
        }
        iterations += 1;
        for c in 0..k {
            let weight: f64 = resp[c].iter().sum();
            if weight < dim as f64 {
                return Err(Error::DegenerateEm {
                    component: c,
                    weight,
                    dim,
                });
            }
            let (_, mean, cov) = sample_mean_cov(rows, Some(&resp[c]));
            components[c] = Component {
                prior: weight / n as f64,
                mean,
                covariance: cov + &eye * reg,
            };
        }
        // keep priors summing to one exactly up to rounding
        let total: f64 = components.iter().map(|c| c.prior).sum();
        for c in &mut components {
            c.prior /= total;
        }
    }
    let mut gmm = GaussianMixture::new(components)?;
    gmm.fit = Some(FitInfo {
        seed: cfg.seed,
        reg,
        iterations,
        log_likelihood: history,
    });
    Ok(gmm)
}

/// k-means++ seeding and Lloyd refinement on standardized features.
fn kmeans_labels(rows: &[DVector<f64>], k: usize, seed: u64) -> Vec<usize> {
    let dim = rows[0].len();
    let (_, mean, cov) = sample_mean_cov(rows, None);
    let scale: Vec<f64> = (0..dim)
        .map(|d| {
            let s = cov[(d, d)].sqrt();
            if s > 0.0 {
                1.0 / s
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<DVector<f64>> = rows
        .iter()
        .map(|r| DVector::from_iterator(dim, (0..dim).map(|d| (r[d] - mean[d]) * scale[d])))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![z[rng.gen_range(0..z.len())].clone()];
    let mut d2: Vec<f64> = z.iter().map(|x| (x - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..z.len())
        };
        centers.push(z[pick].clone());
        for (i, x) in z.iter().enumerate() {
            d2[i] = d2[i].min((x - centers.last().unwrap()).norm_squared());
        }
    }

    let mut labels = vec![0usize; z.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, x) in z.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| {
                    (x - &centers[a])
                        .norm_squared()
                        .total_cmp(&(x - &centers[b]).norm_squared())
                })
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = z.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
            if !members.is_empty() {
                let mut m = DVector::zeros(dim);
                for x in &members {
                    m += *x;
                }
                *center = m / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    // every component needs at least one member to seed its statistics
    for c in 0..k {
        if !labels.contains(&c) {
            let far = (0..z.len())
                .max_by(|&a, &b| {
                    let da = (&z[a] - &centers[labels[a]]).norm_squared();
                    let db = (&z[b] - &centers[labels[b]]).norm_squared();
                    da.total_cmp(&db)
                })
                .unwrap();
            labels[far] = c;
        }
    }
    labels
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePoint {
    pub t: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Probabilistic reference `{t_n, mu_n, Sigma_n}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    points: Vec<ReferencePoint>,
}

impl ReferenceTrajectory {
    pub fn new(points: Vec<ReferencePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("points", "reference trajectory is empty"));
        }
        let dim = points[0].mean.len();
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Shape(format!("state dimension {dim} is not 2*dof")));
        }
        for (n, p) in points.iter().enumerate() {
            if n > 0 && p.t <= points[n - 1].t {
                return Err(Error::NonIncreasingTime { row: n, t: p.t });
            }
            if p.mean.len() != dim || p.covariance.shape() != (dim, dim) {
                return Err(Error::Shape(format!("reference point {n} has wrong dimensions")));
            }
            if Cholesky::new(p.covariance.clone()).is_none() {
                return Err(Error::NotPositiveDefinite(format!("reference covariance at point {n}")));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[ReferencePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.points[0].mean.len() / 2
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }
}

/// Responsibilities `h_c(t)` of each component for time `t`.
pub fn responsibilities(model: &GaussianMixture, t: f64) -> Result<Vec<f64>> {
    let mut logs = Vec::with_capacity(model.components.len());
    for (i, c) in model.components.iter().enumerate() {
        let var = c.covariance[(0, 0)];
        if !(var > 0.0) {
            return Err(Error::Singular(format!("time variance of component {i} is {var}")));
        }
        let d = t - c.mean[0];
        logs.push(c.prior.ln() - 0.5 * ((2.0 * PI * var).ln() + d * d / var));
    }
    let lse = log_sum_exp(&logs);
    Ok(logs.into_iter().map(|l| (l - lse).exp()).collect())
}

/// Conditions the mixture on each query time (moment-matched GMR).
pub fn gmr_condition(model: &GaussianMixture, times: &[f64]) -> Result<ReferenceTrajectory> {
    if times.is_empty() {
        return Err(Error::invalid("times", "no query times"));
    }
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            return Err(Error::NonIncreasingTime { row: i, t: times[i] });
        }
    }
    let out = model.output_dim();
    let mut points = Vec::with_capacity(times.len());
    for &t in times {
        let h = responsibilities(model, t)?;
        let mut mean = DVector::zeros(out);
        let mut second = DMatrix::zeros(out, out);
        for (c, hc) in model.components.iter().zip(&h) {
            let var = c.covariance[(0, 0)];
            let cross = c.covariance.view((1, 0), (out, 1)).column(0).into_owned();
            let mu_c = c.mean.rows(1, out) + &cross * ((t - c.mean[0]) / var);
            let sigma_c = c.covariance.view((1, 1), (out, out)) - &cross * cross.transpose() / var;
            mean.axpy(*hc, &mu_c, 1.0);
            second += (sigma_c + &mu_c * mu_c.transpose()) * *hc;
        }
        let mut cov = second - &mean * mean.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        let min_eig = cov.symmetric_eigenvalues().min();
        if min_eig < -1e-10 * (1.0 + cov.amax()) {
            return Err(Error::NotPositiveDefinite(format!(
                "GMR covariance at t = {t} has eigenvalue {min_eig}"
            )));
        }
        points.push(ReferencePoint {
            t,
            mean,
            covariance: cov,
        });
    }
    ReferenceTrajectory::new(points)
}
