//! Weighted canonical-link GLM fits with offsets: the δ = γ = 0 initializer
//! and the EM M-step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{expit, softplus};

/// Linear predictor beyond which a logistic fit is reported as separated.
/// Under separation the likelihood keeps rising as coefficients diverge, so
/// Newton can meet the gradient tolerance far out along the ray.
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coef: Vec<f64>,
    pub iterations: usize,
    /// `‖Σ wᵢ (yᵢ − μᵢ) xᵢ‖_∞` at the returned coefficients.
    pub gradient_norm: f64,
}

fn check_shapes(design: &DMatrix<f64>, y: &[f64], weights: &[f64], offset: &[f64]) -> Result<()> {
    let n = design.nrows();
    for (what, len) in [("y", y.len()), ("weights", weights.len()), ("offset", offset.len())] {
        if len != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got: len,
            });
        }
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidInput("GLM weights must be nonnegative".into()));
    }
    Ok(())
}

fn logistic_objective(design: &DMatrix<f64>, y: &[f64], w: &[f64], off: &[f64], b: &DVector<f64>) -> f64 {
    let eta = design * b;
    (0..y.len())
        .map(|i| {
            let e = eta[i] + off[i];
            w[i] * (y[i] * e - softplus(e))
        })
        .sum()
}

/// Maximizes `Σ wᵢ [yᵢ ηᵢ − log(1 + e^{ηᵢ})]` with `ηᵢ = xᵢᵀb + offsetᵢ` by
/// Newton–Raphson with step halving. `y` may be fractional in `[0, 1]`.
pub fn logistic(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    offset: &[f64],
    init: Option<&[f64]>,
    tol: f64,
) -> Result<GlmFit> {
    check_shapes(design, y, weights, offset)?;
    let d = design.ncols();
    let total_w: f64 = weights.iter().sum();
    if !(total_w > 0.0) {
        return Err(Error::InvalidInput("GLM weights sum to zero".into()));
    }
    let mut b = match init {
        Some(v) if v.len() == d => DVector::from_column_slice(v),
        _ => DVector::zeros(d),
    };
    let mut obj = logistic_objective(design, y, weights, offset, &b);
    let mut grad_norm = f64::INFINITY;
    for it in 0..200 {
        let eta = design * &b;
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..y.len() {
            if weights[i] == 0.0 {
                continue;
            }
            let mu = expit(eta[i] + offset[i]);
            let row = design.row(i);
            let r = weights[i] * (y[i] - mu);
            let v = weights[i] * mu * (1.0 - mu);
            for a in 0..d {
                grad[a] += r * row[a];
                for c in 0..=a {
                    hess[(a, c)] += v * row[a] * row[c];
                }
            }
        }
        for a in 0..d {
            for c in 0..a {
                hess[(c, a)] = hess[(a, c)];
            }
        }
        grad_norm = grad.amax();
        if grad_norm <= tol * total_w.max(1.0) {
            if let Some(err) = separated(design, offset, &b) {
                return Err(err);
            }
            return Ok(GlmFit {
                coef: b.as_slice().to_vec(),
                iterations: it,
                gradient_norm: grad_norm,
            });
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => return Err(separation_or_singular(design, offset, &b)),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &b + &step * t;
            let cand_obj = logistic_objective(design, y, weights, offset, &cand);
            // Near the optimum the gain drops below the rounding of the
            // objective itself; allow for that so Newton can finish.
            if cand_obj >= obj - 64.0 * f64::EPSILON * obj.abs() {
                b = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    // Declare convergence when the gradient is at the rounding floor even if
    // the strict tolerance was not reached.
    if grad_norm <= 1e-9 * total_w.max(1.0) {
        if let Some(err) = separated(design, offset, &b) {
            return Err(err);
        }
        return Ok(GlmFit {
            coef: b.as_slice().to_vec(),
            iterations: 200,
            gradient_norm: grad_norm,
        });
    }
    Err(separation_or_singular(design, offset, &b))
}

fn separated(design: &DMatrix<f64>, offset: &[f64], b: &DVector<f64>) -> Option<Error> {
    let eta = design * b;
    let max_eta = (0..offset.len())
        .map(|i| (eta[i] + offset[i]).abs())
        .fold(0.0, f64::max);
    (max_eta > SEPARATION_ETA).then(|| Error::Separation(format!("linear predictor reached {max_eta:.1}")))
}

fn separation_or_singular(design: &DMatrix<f64>, offset: &[f64], b: &DVector<f64>) -> Error {
    separated(design, offset, b)
        .unwrap_or_else(|| Error::Numerical("GLM information matrix singular or fit did not converge".into()))
}

/// Weighted least squares with offset: `argmin Σ wᵢ (yᵢ − offsetᵢ − xᵢᵀb)²`.
pub fn gaussian(design: &DMatrix<f64>, y: &[f64], weights: &[f64], offset: &[f64]) -> Result<GlmFit> {
    check_shapes(design, y, weights, offset)?;
    let d = design.ncols();
    let mut xtwx = DMatrix::zeros(d, d);
    let mut xtwy = DVector::zeros(d);
    for i in 0..y.len() {
        let row = design.row(i);
        let r = y[i] - offset[i];
        for a in 0..d {
            xtwy[a] += weights[i] * row[a] * r;
            for c in 0..d {
                xtwx[(a, c)] += weights[i] * row[a] * row[c];
            }
        }
    }
    let b = xtwx
        .cholesky()
        .ok_or_else(|| Error::Numerical("design matrix is rank deficient".into()))?
        .solve(&xtwy);
    let resid = DVector::from_iterator(y.len(), (0..y.len()).map(|i| y[i] - offset[i]));
    let grad = design.tr_mul(&(DVector::from_column_slice(weights).component_mul(&(resid - design * &b))));
    Ok(GlmFit {
        coef: b.as_slice().to_vec(),
        iterations: 1,
        gradient_norm: grad.amax(),
    })
}
