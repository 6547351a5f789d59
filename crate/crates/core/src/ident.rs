//! Closed-form identification for binary Y, Z and U without covariates.
//!
//! Writing the joint law log-linearly,
//! `f(y, z, u) ∝ exp{β₀y + α₀z + β_z yz + δyu + γzu} · f(u | Y = 0, Z = 0)`,
//! the four observed cells are `L(y, z) = L(0,0) · e^{β₀y + α₀z + β_z yz} ·
//! M(δy + γz)` with `M` the moment generating function of `U | Y = 0, Z = 0`.
//! Inverting gives `(α₀, β₀, β_z)` once that law and `(δ, γ)` are fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softplus, Dataset, WorkingPrior};

/// `Σ_k π_k e^{t u_k}`.
pub fn mgf(prior: &WorkingPrior, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!("mgf argument must be finite, got {t}")));
    }
    let v: f64 = prior
        .support()
        .iter()
        .zip(prior.weights())
        .map(|(u, w)| w * (t * u).exp())
        .sum();
    if !v.is_finite() {
        return Err(Error::Numerical(format!("mgf overflows at t = {t}")));
    }
    Ok(v)
}

/// The four cell probabilities `L(y, z)`, indexed `[y][z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedCells {
    l: [[f64; 2]; 2],
}

impl ObservedCells {
    pub fn new(l: [[f64; 2]; 2]) -> Result<Self> {
        let flat = [l[0][0], l[0][1], l[1][0], l[1][1]];
        if flat.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("cell probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = flat.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("cell probabilities sum to {total}, expected 1")));
        }
        Ok(Self { l })
    }

    /// Normalizes nonnegative counts or weights.
    pub fn from_counts(c: [[f64; 2]; 2]) -> Result<Self> {
        let total = c[0][0] + c[0][1] + c[1][0] + c[1][1];
        if !(total > 0.0) {
            return Err(Error::InvalidInput("cell counts sum to zero".into()));
        }
        Self::new(c.map(|row| row.map(|v| v / total)))
    }

    /// Empirical cells of a binary-outcome dataset (covariates ignored).
    pub fn from_data(data: &Dataset) -> Result<Self> {
        let mut c = [[0.0; 2]; 2];
        for (y, z) in data.y().iter().zip(data.z()) {
            if *y != 0.0 && *y != 1.0 {
                return Err(Error::InvalidInput(format!("outcome {y} is not binary")));
            }
            c[*y as usize][*z as usize] += 1.0;
        }
        Self::from_counts(c)
    }

    pub fn get(&self, y: usize, z: usize) -> f64 {
        self.l[y][z]
    }
}

/// Log-linear parameters recovered by [`identify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identified {
    pub alpha0: f64,
    pub beta0: f64,
    pub beta_z: f64,
}

/// Inverts the cell formulas. `cond` is the law of `U` given
/// `Y = 0, Z = 0`, not the marginal law.
pub fn identify(cells: &ObservedCells, cond: &WorkingPrior, delta: f64, gamma: f64) -> Result<Identified> {
    let l = |y, z| cells.get(y, z);
    if [l(0, 0), l(0, 1), l(1, 0), l(1, 1)].iter().any(|v| *v <= 0.0) {
        return Err(Error::BoundaryLikelihood);
    }
    let (m_g, m_d, m_dg) = (mgf(cond, gamma)?, mgf(cond, delta)?, mgf(cond, delta + gamma)?);
    let alpha0 = (l(0, 1) / (l(0, 0) * m_g)).ln();
    let beta0 = (l(1, 0) / (l(0, 0) * m_d)).ln();
    let beta_z = (l(1, 1) * l(0, 0) / (l(0, 1) * l(1, 0)) * m_d * m_g / m_dg).ln();
    Ok(Identified { alpha0, beta0, beta_z })
}

/// Log-linear parameters together with `(δ, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinear {
    pub alpha0: f64,
    pub beta0: f64,
    pub beta_z: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl LogLinear {
    fn eta(&self, y: usize, z: usize, u: f64) -> f64 {
        let (y, z) = (y as f64, z as f64);
        self.beta0 * y + self.alpha0 * z + self.beta_z * y * z + self.delta * y * u + self.gamma * z * u
    }

    /// `log Σ_{y,z} exp{η(y, z, u)}`: the normalizer of `(Y, Z) | U = u`.
    fn log_norm(&self, u: f64) -> f64 {
        let t = [self.eta(0, 0, u), self.eta(0, 1, u), self.eta(1, 0, u), self.eta(1, 1, u)];
        let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + t.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    /// Law of `U | Y = 0, Z = 0` when `U` has marginal law `marginal` and
    /// `(Y, Z) | U` is log-linear with these parameters.
    pub fn conditional_prior(&self, marginal: &WorkingPrior) -> Result<WorkingPrior> {
        let points: Vec<(f64, f64)> = marginal
            .support()
            .iter()
            .zip(marginal.weights())
            .map(|(&u, &w)| (u, w * (-self.log_norm(u)).exp()))
            .collect();
        WorkingPrior::discrete(&points)
    }

    /// Cell probabilities by enumeration over the support of `marginal`.
    pub fn cells(&self, marginal: &WorkingPrior) -> Result<ObservedCells> {
        let mut c = [[0.0; 2]; 2];
        for (&u, &w) in marginal.support().iter().zip(marginal.weights()) {
            let ln = self.log_norm(u);
            for (y, row) in c.iter_mut().enumerate() {
                for (z, cell) in row.iter_mut().enumerate() {
                    *cell += w * (self.eta(y, z, u) - ln).exp();
                }
            }
        }
        ObservedCells::from_counts(c)
    }
}

/// Logistic parametrization without covariates:
/// `logit P(Z = 1 | U) = κ₀ + γU`, `logit P(Y = 1 | Z, U) = λ₀ + βZ + δU`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub kappa0: f64,
    pub lambda0: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl Logistic {
    /// Equivalent log-linear parameters for binary U on `{0, 1}`.
    ///
    /// The outcome odds carry over unchanged. The outcome normalizer
    /// `1 + e^{λ₀ + βz + δu}` depends on `(z, u)`, so it shifts the
    /// treatment intercept and the Z–U association.
    pub fn to_log_linear(&self) -> LogLinear {
        let b = |u: f64| softplus(self.lambda0 + self.delta * u) - softplus(self.lambda0 + self.beta + self.delta * u);
        LogLinear {
            alpha0: self.kappa0 + b(0.0),
            beta0: self.lambda0,
            beta_z: self.beta,
            delta: self.delta,
            gamma: self.gamma + b(1.0) - b(0.0),
        }
    }

    /// Inverse of [`Logistic::to_log_linear`].
    pub fn from_log_linear(ll: &LogLinear) -> Self {
        let b = |u: f64| softplus(ll.beta0 + ll.delta * u) - softplus(ll.beta0 + ll.beta_z + ll.delta * u);
        Self {
            kappa0: ll.alpha0 - b(0.0),
            lambda0: ll.beta0,
            beta: ll.beta_z,
            delta: ll.delta,
            gamma: ll.gamma - b(1.0) + b(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expit, make_prior, PriorSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mgf_examples() {
        let b = make_prior(&PriorSpec::Bernoulli(0.5)).unwrap();
        assert_relative_eq!(mgf(&b, 0.0).unwrap(), 1.0);
        assert_relative_eq!(mgf(&b, 1.0).unwrap(), (1.0 + 1f64.exp()) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(mgf(&b, 1.0).unwrap(), 1.85914, epsilon = 1e-5);
        let pm = WorkingPrior::point_mass(0.7).unwrap();
        assert_relative_eq!(mgf(&pm, 2.0).unwrap(), (1.4f64).exp(), epsilon = 1e-14);
        assert!(mgf(&pm, 2000.0).is_err());
    }

    #[test]
    fn null_sensitivity_is_saturated_log_odds() {
        let cells = ObservedCells::new([[0.3, 0.2], [0.1, 0.4]]).unwrap();
        let any = make_prior(&PriorSpec::Bernoulli(0.3)).unwrap();
        let id = identify(&cells, &any, 0.0, 0.0).unwrap();
        assert_relative_eq!(id.beta_z, (0.4f64 * 0.3 / (0.2 * 0.1)).ln(), epsilon = 1e-14);
        assert_relative_eq!(id.alpha0, (0.2f64 / 0.3).ln(), epsilon = 1e-14);
        let pm = WorkingPrior::point_mass(0.0).unwrap();
        let id = identify(&cells, &pm, 1.3, -0.4).unwrap();
        assert_relative_eq!(id.alpha0, (0.2f64 / 0.3).ln(), epsilon = 1e-14);
    }

    #[test]
    fn zero_cell_is_boundary() {
        let cells = ObservedCells::new([[0.5, 0.0], [0.25, 0.25]]).unwrap();
        let p = make_prior(&PriorSpec::Bernoulli(0.5)).unwrap();
        assert!(matches!(identify(&cells, &p, 1.0, 1.0), Err(Error::BoundaryLikelihood)));
        assert!(ObservedCells::new([[0.5, 0.1], [0.25, 0.25]]).is_err());
    }

    #[test]
    fn forward_then_invert_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let ll = LogLinear {
                alpha0: rng.random_range(-2.0..2.0),
                beta0: rng.random_range(-2.0..2.0),
                beta_z: rng.random_range(-2.0..2.0),
                delta: rng.random_range(-3.0..3.0),
                gamma: rng.random_range(-3.0..3.0),
            };
            let marginal = make_prior(&PriorSpec::Bernoulli(rng.random_range(0.05..0.95))).unwrap();
            let cells = ll.cells(&marginal).unwrap();
            let cond = ll.conditional_prior(&marginal).unwrap();
            let id = identify(&cells, &cond, ll.delta, ll.gamma).unwrap();
            assert!((id.alpha0 - ll.alpha0).abs() < 1e-10);
            assert!((id.beta0 - ll.beta0).abs() < 1e-10);
            assert!((id.beta_z - ll.beta_z).abs() < 1e-10);
            // Using the marginal law instead breaks the roundtrip.
            if ll.delta.abs() > 0.5 && ll.gamma.abs() > 0.5 {
                let wrong = identify(&cells, &marginal, ll.delta, ll.gamma).unwrap();
                assert!((wrong.alpha0 - ll.alpha0).abs() > 1e-6);
            }
        }
    }

    #[test]
    fn scale_invariance() {
        let cells = [[3.0, 1.0], [2.0, 4.0]];
        let p = make_prior(&PriorSpec::Bernoulli(0.4)).unwrap();
        let a = identify(&ObservedCells::from_counts(cells).unwrap(), &p, 0.8, 1.1).unwrap();
        let b = identify(&ObservedCells::from_counts(cells.map(|r| r.map(|v| v * 7.5))).unwrap(), &p, 0.8, 1.1).unwrap();
        assert_relative_eq!(a.alpha0, b.alpha0, epsilon = 1e-13);
        assert_relative_eq!(a.beta0, b.beta0, epsilon = 1e-13);
        assert_relative_eq!(a.beta_z, b.beta_z, epsilon = 1e-13);
    }

    #[test]
    fn logistic_and_log_linear_cells_agree() {
        let lg = Logistic {
            kappa0: -0.3,
            lambda0: 0.2,
            beta: 1.1,
            delta: 1.5,
            gamma: 0.8,
        };
        let p = 0.3;
        let mut direct = [[0.0; 2]; 2];
        for (u, w) in [(0.0, 1.0 - p), (1.0, p)] {
            let pz = expit(lg.kappa0 + lg.gamma * u);
            for z in 0..2 {
                let fz = if z == 1 { pz } else { 1.0 - pz };
                let py = expit(lg.lambda0 + lg.beta * z as f64 + lg.delta * u);
                direct[1][z] += w * fz * py;
                direct[0][z] += w * fz * (1.0 - py);
            }
        }
        let ll = lg.to_log_linear();
        let marginal = make_prior(&PriorSpec::Bernoulli(p)).unwrap();
        let cells = ll.cells(&marginal).unwrap();
        for y in 0..2 {
            for z in 0..2 {
                assert_relative_eq!(cells.get(y, z), direct[y][z], epsilon = 1e-14);
            }
        }
        let back = Logistic::from_log_linear(&ll);
        assert_relative_eq!(back.kappa0, lg.kappa0, epsilon = 1e-14);
        assert_relative_eq!(back.gamma, lg.gamma, epsilon = 1e-14);
    }
}
