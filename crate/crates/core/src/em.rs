//! Maximum-likelihood comparator: binary U treated as a missing covariate
//! with a fixed success probability `p`, fit by EM.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{design_with_treatment, glm_init, normal_critical};
use crate::glm;
use crate::model::{dot, softplus, Dataset, ModelSpec, SensitivityPoint, Theta};

/// Slack allowed for a log-likelihood decrease between EM iterations.
const MONOTONE_SLACK: f64 = 1e-10;
const M_STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Assumed `P(U = 1)`, held fixed.
    pub p: f64,
    pub max_iter: usize,
    /// Stop when the log-likelihood rises by less than this.
    pub tol: f64,
    /// Relative step of the finite-difference Hessian.
    pub hessian_step: f64,
}

impl EmOptions {
    pub fn new(p: f64) -> Result<Self> {
        let opts = Self {
            p,
            max_iter: 500,
            tol: 1e-8,
            hessian_step: 1e-4,
        };
        opts.validate()?;
        Ok(opts)
    }

    fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidInput(format!("EM p must be in (0, 1), got {}", self.p)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.hessian_step > 0.0) {
            return Err(Error::InvalidInput("EM tol, max_iter and hessian_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub sp: SensitivityPoint,
    pub p: f64,
    pub theta_hat: Theta,
    /// Inverse of the negative observed-information Hessian.
    pub vcov: Vec<Vec<f64>>,
    pub beta_hat: f64,
    pub beta_se: f64,
    pub ci: (f64, f64),
    pub level: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood after each iteration, starting with the
    /// initial value.
    pub loglik: Vec<f64>,
}

impl EmFit {
    pub fn ci_covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }
}

fn log_cell(y: f64, z: u8, x: &[f64], u: f64, th: &Theta, sp: SensitivityPoint) -> f64 {
    let e1 = dot(&th.lambda, x) + th.beta * f64::from(z) + sp.delta * u;
    let e2 = dot(&th.kappa, x) + sp.gamma * u;
    y * e1 - softplus(e1) + f64::from(z) * e2 - softplus(e2)
}

/// `(log f(y,z|x,u=1) + log p, log f(y,z|x,u=0) + log(1−p))` for one row.
fn log_parts(data: &Dataset, i: usize, th: &Theta, sp: SensitivityPoint, p: f64) -> (f64, f64) {
    let (y, z, x) = (data.y()[i], data.z()[i], data.row(i));
    (
        log_cell(y, z, x, 1.0, th, sp) + p.ln(),
        log_cell(y, z, x, 0.0, th, sp) + (-p).ln_1p(),
    )
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Observed-data log-likelihood `Σ log[p f(·|u=1) + (1−p) f(·|u=0)]`.
pub fn log_likelihood(data: &Dataset, th: &Theta, sp: SensitivityPoint, p: f64) -> f64 {
    let terms: Vec<f64> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let (a, b) = log_parts(data, i, th, sp, p);
            log_add(a, b)
        })
        .collect();
    terms.iter().sum()
}

/// E-step: `rᵢ = P(Uᵢ = 1 | yᵢ, zᵢ, xᵢ)`.
pub fn responsibilities(data: &Dataset, th: &Theta, sp: SensitivityPoint, p: f64) -> Vec<f64> {
    (0..data.n())
        .into_par_iter()
        .map(|i| {
            let (a, b) = log_parts(data, i, th, sp, p);
            1.0 / (1.0 + (b - a).exp())
        })
        .collect()
}

/// Duplicated design for the M-step: rows `0..n` carry `u = 1`, rows
/// `n..2n` carry `u = 0`.
struct Stacked {
    xz: DMatrix<f64>,
    x: DMatrix<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    off_y: Vec<f64>,
    off_z: Vec<f64>,
}

impl Stacked {
    fn new(data: &Dataset, sp: SensitivityPoint) -> Self {
        let n = data.n();
        let p = data.p();
        let xz1 = design_with_treatment(data);
        let xz = DMatrix::from_fn(2 * n, p + 1, |i, j| xz1[(i % n, j)]);
        let x = DMatrix::from_fn(2 * n, p, |i, j| data.row(i % n)[j]);
        let y: Vec<f64> = data.y().iter().chain(data.y()).copied().collect();
        let z: Vec<f64> = data.z().iter().chain(data.z()).map(|&v| f64::from(v)).collect();
        let u = |i: usize| if i < n { 1.0 } else { 0.0 };
        Self {
            xz,
            x,
            y,
            z,
            off_y: (0..2 * n).map(|i| sp.delta * u(i)).collect(),
            off_z: (0..2 * n).map(|i| sp.gamma * u(i)).collect(),
        }
    }

    fn weights(r: &[f64]) -> Vec<f64> {
        r.iter().copied().chain(r.iter().map(|v| 1.0 - v)).collect()
    }

    fn m_step(&self, r: &[f64], th: &Theta) -> Result<Theta> {
        let w = Self::weights(r);
        let p = th.p();
        let mut init = th.lambda.clone();
        init.push(th.beta);
        let out = glm::logistic(&self.xz, &self.y, &w, &self.off_y, Some(&init), M_STEP_TOL)?;
        let prop = glm::logistic(&self.x, &self.z, &w, &self.off_z, Some(&th.kappa), M_STEP_TOL)?;
        Ok(Theta {
            lambda: out.coef[..p].to_vec(),
            beta: out.coef[p],
            kappa: prop.coef,
        })
    }
}

/// Weighted-score gradients of the two M-step problems at `th` with
/// responsibilities `r`, as `(outcome, treatment)` sup-norms averaged over
/// the `n` original observations.
pub fn m_step_stationarity(data: &Dataset, th: &Theta, sp: SensitivityPoint, r: &[f64]) -> (f64, f64) {
    let st = Stacked::new(data, sp);
    let w = Stacked::weights(r);
    let mut b = th.lambda.clone();
    b.push(th.beta);
    let grad = |design: &DMatrix<f64>, resp: &[f64], off: &[f64], coef: &[f64]| {
        let eta = design * DVector::from_column_slice(coef);
        let mut g = DVector::zeros(design.ncols());
        for i in 0..resp.len() {
            let mu = crate::model::expit(eta[i] + off[i]);
            g += design.row(i).transpose() * (w[i] * (resp[i] - mu));
        }
        g.amax() / data.n() as f64
    };
    (
        grad(&st.xz, &st.y, &st.off_y, &b),
        grad(&st.x, &st.z, &st.off_z, &th.kappa),
    )
}

/// Central-difference Hessian of the observed-data log-likelihood.
fn loglik_hessian(data: &Dataset, th: &Theta, sp: SensitivityPoint, p: f64, step: f64) -> Result<DMatrix<f64>> {
    let v = th.to_vec();
    let q = v.len();
    let dim = th.p();
    let ll = |w: &[f64]| -> Result<f64> { Ok(log_likelihood(data, &Theta::from_slice(dim, w)?, sp, p)) };
    let h: Vec<f64> = v.iter().map(|x| step * x.abs().max(1.0)).collect();
    let f0 = ll(&v)?;
    let mut hess = DMatrix::zeros(q, q);
    for a in 0..q {
        let mut pp = v.clone();
        pp[a] += h[a];
        let mut mm = v.clone();
        mm[a] -= h[a];
        hess[(a, a)] = (ll(&pp)? - 2.0 * f0 + ll(&mm)?) / (h[a] * h[a]);
        for b in 0..a {
            let mut w = v.clone();
            let mut val = 0.0;
            for (sa, sb, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                w[a] = v[a] + sa * h[a];
                w[b] = v[b] + sb * h[b];
                val += sign * ll(&w)?;
            }
            let e = val / (4.0 * h[a] * h[b]);
            hess[(a, b)] = e;
            hess[(b, a)] = e;
        }
    }
    Ok(hess)
}

/// EM fit at a fixed sensitivity point. Binary outcome only.
pub fn em_fit(data: &Dataset, sp: SensitivityPoint, opts: &EmOptions, spec: &ModelSpec, level: f64) -> Result<EmFit> {
    opts.validate()?;
    let z_crit = normal_critical(level)?;
    if !spec.is_binary() {
        return Err(Error::InvalidInput("EM comparator requires a binary outcome".into()));
    }
    let mut th = glm_init(data, spec)?;
    let stacked = Stacked::new(data, sp);
    let mut ll = log_likelihood(data, &th, sp, opts.p);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let r = responsibilities(data, &th, sp, opts.p);
        let next = stacked.m_step(&r, &th)?;
        let next_ll = log_likelihood(data, &next, sp, opts.p);
        if next_ll < ll - MONOTONE_SLACK * ll.abs().max(1.0) {
            return Err(Error::LikelihoodDecrease {
                iteration: iterations,
                previous: ll,
                current: next_ll,
            });
        }
        let gain = next_ll - ll;
        th = next;
        ll = next_ll;
        trace.push(ll);
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    let hess = loglik_hessian(data, &th, sp, opts.p, opts.hessian_step)?;
    let vcov = (-hess)
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("observed information is singular".into()))?;
    let b = Theta::beta_index(th.p());
    let beta_se = vcov[(b, b)].max(0.0).sqrt();
    let beta_hat = th.beta;
    Ok(EmFit {
        sp,
        p: opts.p,
        vcov: vcov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        beta_hat,
        beta_se,
        ci: (beta_hat - z_crit * beta_se, beta_hat + z_crit * beta_se),
        level,
        iterations,
        converged,
        loglik: trace,
        theta_hat: th,
    })
}
