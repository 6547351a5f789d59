//! Full-data and observed-data scores, the working-prior mixture `I*` and
//! posterior weights over the U support.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{
    dot, eta_outcome, eta_propensity, expit, log_density_z_raw, ModelSpec, SensitivityPoint,
    Theta, WorkingPrior,
};

/// Score vector ordered as `(λ block, β, κ block)`.
pub type ScoreVector = DVector<f64>;

/// `∂/∂θ log f(y, z | x, u)` for the canonical-link model.
pub fn full_score(
    y: f64,
    z: u8,
    x: &[f64],
    u: f64,
    theta: &Theta,
    sp: SensitivityPoint,
    spec: &ModelSpec,
) -> Result<ScoreVector> {
    let eta1 = eta_outcome(theta, x, z, u, sp)?;
    let eta2 = eta_propensity(theta, x, u, sp)?;
    let r1 = spec.score_scale() * (y - spec.mean(eta1));
    let r2 = f64::from(z) - expit(eta2);
    Ok(stack_score(x, z, r1, r2))
}

pub(crate) fn stack_score(x: &[f64], z: u8, r1: f64, r2: f64) -> ScoreVector {
    let p = x.len();
    let mut s = DVector::zeros(2 * p + 1);
    for j in 0..p {
        s[j] = r1 * x[j];
        s[p + 1 + j] = r2 * x[j];
    }
    s[p] = r1 * f64::from(z);
    s
}

/// `log π_k + log f(y, z | x, u_k)` for every support point.
pub(crate) fn log_terms(
    y: f64,
    z: u8,
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    if z > 1 {
        return Err(Error::InvalidInput(format!("treatment must be 0 or 1, got {z}")));
    }
    // Validates dimensions and the outcome value once.
    let base1 = eta_outcome(theta, x, z, 0.0, sp)?;
    let base2 = eta_propensity(theta, x, 0.0, sp)?;
    spec.log_density_y(y, base1)?;
    Ok(prior
        .support()
        .iter()
        .zip(prior.weights())
        .map(|(&u, &w)| {
            w.ln()
                + spec.log_density_y_raw(y, base1 + sp.delta * u)
                + log_density_z_raw(z, base2 + sp.gamma * u)
        })
        .collect())
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Mixture likelihood `I*(y, z, x) = Σ_k π_k f(y, z | x, u_k)`.
pub fn istar(
    y: f64,
    z: u8,
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
) -> Result<f64> {
    let lse = log_sum_exp(&log_terms(y, z, x, theta, sp, prior, spec)?);
    let v = lse.exp();
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::DegenerateLikelihood);
    }
    Ok(v)
}

/// Posterior weights of U over the prior support given `(y, z, x)`.
pub fn posterior_weights(
    y: f64,
    z: u8,
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    let terms = log_terms(y, z, x, theta, sp, prior, spec)?;
    normalize_log_weights(terms)
}

pub(crate) fn normalize_log_weights(mut terms: Vec<f64>) -> Result<Vec<f64>> {
    let lse = log_sum_exp(&terms);
    if !lse.is_finite() {
        return Err(Error::DegenerateLikelihood);
    }
    for t in terms.iter_mut() {
        *t = (*t - lse).exp();
    }
    Ok(terms)
}

/// Posterior mean of the full score, `E*[S(x, U, z, y) | x, z, y]`.
pub fn observed_score(
    y: f64,
    z: u8,
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
) -> Result<ScoreVector> {
    let w = posterior_weights(y, z, x, theta, sp, prior, spec)?;
    let (r1, r2) = posterior_residuals(y, z, x, theta, sp, prior, spec, &w);
    Ok(stack_score(x, z, r1, r2))
}

/// Posterior means of the outcome and propensity residuals; the full score is
/// linear in these.
#[allow(clippy::too_many_arguments)]
pub(crate) fn posterior_residuals(
    y: f64,
    z: u8,
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
    post: &[f64],
) -> (f64, f64) {
    let base1 = dot(&theta.lambda, x) + theta.beta * f64::from(z);
    let base2 = dot(&theta.kappa, x);
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    for (&u, &w) in prior.support().iter().zip(post) {
        r1 += w * (y - spec.mean(base1 + sp.delta * u));
        r2 += w * (f64::from(z) - expit(base2 + sp.gamma * u));
    }
    (spec.score_scale() * r1, r2)
}
