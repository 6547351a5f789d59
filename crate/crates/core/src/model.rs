//! Data layout, parameters, exponential-family densities and working priors
//! for the latent confounder.
//!
//! The outcome model is `g1⁻¹(λᵀx + βz + δu)` and the propensity model is
//! `expit(κᵀx + γu)`, both with canonical links. `(δ, γ)` are fixed
//! sensitivity parameters; `θ = (λ, β, κ)` is estimated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Observed data `(y, z, X)`. `X` is stored row-major. Datasets built with
/// [`Dataset::new`] or [`Dataset::with_intercept`] carry the intercept as the
/// first column; [`Dataset::without_intercept`] is for designs whose true
/// models have none.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    z: Vec<u8>,
    x: Vec<f64>,
    p: usize,
    intercept: bool,
}

impl Dataset {
    /// Builds a dataset from covariate rows that already include the
    /// intercept column.
    pub fn new(y: Vec<f64>, z: Vec<u8>, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(y, z, rows, true)
    }

    /// Builds a dataset whose design has no intercept column. The fitted
    /// outcome and propensity models then pass through the origin in `x`.
    pub fn without_intercept(y: Vec<f64>, z: Vec<u8>, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(y, z, rows, false)
    }

    fn build(y: Vec<f64>, z: Vec<u8>, rows: Vec<Vec<f64>>, intercept: bool) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        if z.len() != n {
            return Err(Error::Dimension {
                what: "z",
                expected: n,
                got: z.len(),
            });
        }
        if rows.len() != n {
            return Err(Error::Dimension {
                what: "X rows",
                expected: n,
                got: rows.len(),
            });
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(Error::InvalidInput("X has no columns".into()));
        }
        let mut x = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Dimension {
                    what: "X row",
                    expected: p,
                    got: row.len(),
                });
            }
            if intercept && row[0] != 1.0 {
                return Err(Error::InvalidInput(format!(
                    "row {i}: first column of X must be the intercept 1"
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i}: non-finite covariate")));
            }
            x.extend_from_slice(row);
        }
        for (i, &zi) in z.iter().enumerate() {
            if zi > 1 {
                return Err(Error::InvalidInput(format!(
                    "row {i}: treatment must be 0 or 1, got {zi}"
                )));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("row {i}: non-finite outcome")));
        }
        Ok(Self { y, z, x, p, intercept })
    }

    /// Prepends the intercept column to the given covariate rows.
    pub fn with_intercept(y: Vec<f64>, z: Vec<u8>, covariates: Vec<Vec<f64>>) -> Result<Self> {
        let rows = covariates
            .into_iter()
            .map(|r| {
                let mut row = Vec::with_capacity(r.len() + 1);
                row.push(1.0);
                row.extend(r);
                row
            })
            .collect();
        Self::new(y, z, rows)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.p)
    }

    /// Checks the family-specific outcome constraint (binary `y` for the
    /// Bernoulli family).
    pub fn check_family(&self, spec: &ModelSpec) -> Result<()> {
        if let OutcomeFamily::Bernoulli = spec.outcome {
            if let Some(i) = self.y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput(format!(
                    "row {i}: Bernoulli outcome must be 0 or 1, got {}",
                    self.y[i]
                )));
            }
        }
        Ok(())
    }
}

/// Sensitivity parameters: `delta` on the outcome link scale, `gamma` on the
/// propensity link scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub delta: f64,
    pub gamma: f64,
}

impl SensitivityPoint {
    pub fn new(delta: f64, gamma: f64) -> Result<Self> {
        if !delta.is_finite() || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sensitivity parameters must be finite, got ({delta}, {gamma})"
            )));
        }
        Ok(Self { delta, gamma })
    }

    pub const NONE: SensitivityPoint = SensitivityPoint {
        delta: 0.0,
        gamma: 0.0,
    };

    /// `true` at the no-unmeasured-confounding point.
    pub fn is_null(&self) -> bool {
        self.delta == 0.0 && self.gamma == 0.0
    }
}

impl fmt::Display for SensitivityPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(δ = {}, γ = {})", self.delta, self.gamma)
    }
}

/// Estimated parameters `θ = (λ, β, κ)`, flattened in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub lambda: Vec<f64>,
    pub beta: f64,
    pub kappa: Vec<f64>,
}

impl Theta {
    pub fn zeros(p: usize) -> Self {
        Self {
            lambda: vec![0.0; p],
            beta: 0.0,
            kappa: vec![0.0; p],
        }
    }

    pub fn p(&self) -> usize {
        self.lambda.len()
    }

    /// Total free dimension `2p + 1`.
    pub fn q(&self) -> usize {
        2 * self.lambda.len() + 1
    }

    /// Index of `β` in the flattened vector.
    pub fn beta_index(p: usize) -> usize {
        p
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.q());
        v.extend_from_slice(&self.lambda);
        v.push(self.beta);
        v.extend_from_slice(&self.kappa);
        v
    }

    pub fn from_slice(p: usize, v: &[f64]) -> Result<Self> {
        if v.len() != 2 * p + 1 {
            return Err(Error::Dimension {
                what: "theta",
                expected: 2 * p + 1,
                got: v.len(),
            });
        }
        Ok(Self {
            lambda: v[..p].to_vec(),
            beta: v[p],
            kappa: v[p + 1..].to_vec(),
        })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if self.lambda.len() != x.len() {
            return Err(Error::Dimension {
                what: "lambda",
                expected: x.len(),
                got: self.lambda.len(),
            });
        }
        if self.kappa.len() != x.len() {
            return Err(Error::Dimension {
                what: "kappa",
                expected: x.len(),
                got: self.kappa.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OutcomeFamily {
    /// Binary outcome with logit link.
    Bernoulli,
    /// Continuous outcome with identity link and fixed standard deviation.
    Gaussian { sigma: f64 },
}

/// Outcome family plus the (fixed) Bernoulli-logit propensity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: OutcomeFamily,
}

impl ModelSpec {
    pub fn bernoulli() -> Self {
        Self {
            outcome: OutcomeFamily::Bernoulli,
        }
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self {
            outcome: OutcomeFamily::Gaussian { sigma },
        })
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.outcome, OutcomeFamily::Bernoulli)
    }

    /// `1/σ²` for the Gaussian family, 1 otherwise.
    pub(crate) fn score_scale(&self) -> f64 {
        match self.outcome {
            OutcomeFamily::Bernoulli => 1.0,
            OutcomeFamily::Gaussian { sigma } => 1.0 / (sigma * sigma),
        }
    }

    pub(crate) fn mean(&self, eta: f64) -> f64 {
        match self.outcome {
            OutcomeFamily::Bernoulli => expit(eta),
            OutcomeFamily::Gaussian { .. } => eta,
        }
    }

    /// Outcome log-density without argument validation.
    #[inline]
    pub(crate) fn log_density_y_raw(&self, y: f64, eta: f64) -> f64 {
        match self.outcome {
            OutcomeFamily::Bernoulli => y * eta - softplus(eta),
            OutcomeFamily::Gaussian { sigma } => {
                let r = (y - eta) / sigma;
                -0.5 * r * r - sigma.ln() - LN_SQRT_2PI
            }
        }
    }

    pub fn log_density_y(&self, y: f64, eta: f64) -> Result<f64> {
        match self.outcome {
            OutcomeFamily::Bernoulli if y != 0.0 && y != 1.0 => Err(Error::InvalidInput(
                format!("Bernoulli outcome must be 0 or 1, got {y}"),
            )),
            OutcomeFamily::Gaussian { sigma } if !(sigma > 0.0) => {
                Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")))
            }
            _ => Ok(self.log_density_y_raw(y, eta)),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn log_density_z_raw(z: u8, eta: f64) -> f64 {
    f64::from(z) * eta - softplus(eta)
}

/// Outcome linear predictor `λᵀx + βz + δu`.
pub fn eta_outcome(theta: &Theta, x: &[f64], z: u8, u: f64, sp: SensitivityPoint) -> Result<f64> {
    theta.check(x)?;
    Ok(dot(&theta.lambda, x) + theta.beta * f64::from(z) + sp.delta * u)
}

/// Propensity linear predictor `κᵀx + γu`.
pub fn eta_propensity(theta: &Theta, x: &[f64], u: f64, sp: SensitivityPoint) -> Result<f64> {
    theta.check(x)?;
    Ok(dot(&theta.kappa, x) + sp.gamma * u)
}

fn check_z(z: u8) -> Result<()> {
    if z > 1 {
        return Err(Error::InvalidInput(format!("treatment must be 0 or 1, got {z}")));
    }
    Ok(())
}

pub fn density_y(
    y: f64,
    x: &[f64],
    z: u8,
    u: f64,
    theta: &Theta,
    sp: SensitivityPoint,
    spec: &ModelSpec,
) -> Result<f64> {
    check_z(z)?;
    let eta = eta_outcome(theta, x, z, u, sp)?;
    Ok(spec.log_density_y(y, eta)?.exp())
}

pub fn density_z(z: u8, x: &[f64], u: f64, theta: &Theta, sp: SensitivityPoint) -> Result<f64> {
    check_z(z)?;
    let eta = eta_propensity(theta, x, u, sp)?;
    Ok(log_density_z_raw(z, eta).exp())
}

/// `log f(y, z | x, u)`.
pub fn log_joint_density(
    y: f64,
    z: u8,
    x: &[f64],
    u: f64,
    theta: &Theta,
    sp: SensitivityPoint,
    spec: &ModelSpec,
) -> Result<f64> {
    check_z(z)?;
    let eta1 = eta_outcome(theta, x, z, u, sp)?;
    let eta2 = eta_propensity(theta, x, u, sp)?;
    Ok(spec.log_density_y(y, eta1)? + log_density_z_raw(z, eta2))
}

/// `f(y, z | x, u) = f(y | x, z, u) · f(z | x, u)`.
pub fn joint_density(
    y: f64,
    z: u8,
    x: &[f64],
    u: f64,
    theta: &Theta,
    sp: SensitivityPoint,
    spec: &ModelSpec,
) -> Result<f64> {
    log_joint_density(y, z, x, u, theta, sp, spec).map(f64::exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    /// Intrinsically discrete law (e.g. binary U): mass weights, `h = 1`,
    /// identity quadrature weights.
    Discrete,
    /// Equal-spaced grid approximating a continuous law on an interval.
    Grid { mesh: f64 },
}

/// Discrete working model `f*(u)` for the latent confounder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingPrior {
    support: Vec<f64>,
    weights: Vec<f64>,
    kind: PriorKind,
}

impl WorkingPrior {
    /// Builds a discrete prior from `(u, weight)` pairs. Weights are
    /// normalized; the support is sorted and must be free of duplicates.
    pub fn discrete(points: &[(f64, f64)]) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::from_parts(
            pts.iter().map(|p| p.0).collect(),
            pts.iter().map(|p| p.1).collect(),
            PriorKind::Discrete,
        )
    }

    pub fn point_mass(u: f64) -> Result<Self> {
        Self::discrete(&[(u, 1.0)])
    }

    fn from_parts(support: Vec<f64>, weights: Vec<f64>, kind: PriorKind) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidInput("working prior has empty support".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(format!("negative or non-finite prior weight {w}")));
        }
        if support.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidInput("non-finite support point".into()));
        }
        if support.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "prior support must be strictly increasing".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput("prior weights are not normalizable".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            support,
            weights,
            kind,
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Grid spacing `h` used in the Fredholm discretization; 1 for discrete
    /// priors.
    pub fn mesh(&self) -> f64 {
        match self.kind {
            PriorKind::Discrete => 1.0,
            PriorKind::Grid { mesh } => mesh,
        }
    }

    /// Kernel-side prior value `π*(u_k)`: density (mass / h) on grids, mass
    /// for discrete laws.
    pub fn kernel_mass(&self, k: usize) -> f64 {
        self.weights[k] / self.mesh()
    }

    /// Diagonal of `W`: trapezoid weights on grids, ones for discrete laws.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        match self.kind {
            PriorKind::Discrete => vec![1.0; self.len()],
            PriorKind::Grid { .. } => crate::quadrature::trapezoid_weights(self.len()),
        }
    }
}

/// Working-prior constructors, also parsed from the CLI mini-language
/// `bernoulli:<p>`, `grid:<lo>:<hi>:<h>`, `weights:<u1=w1,...>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    Grid { lo: f64, hi: f64, mesh: f64 },
    Bernoulli(f64),
    Weights(Vec<(f64, f64)>),
}

pub fn make_prior(kind: &PriorSpec) -> Result<WorkingPrior> {
    match kind {
        PriorSpec::Bernoulli(p) => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidInput(format!("bernoulli p must be in [0, 1], got {p}")));
            }
            WorkingPrior::from_parts(vec![0.0, 1.0], vec![1.0 - p, *p], PriorKind::Discrete)
        }
        PriorSpec::Grid { lo, hi, mesh } => {
            if !(*mesh > 0.0) || !mesh.is_finite() {
                return Err(Error::InvalidInput(format!("grid mesh must be > 0, got {mesh}")));
            }
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidInput(format!("empty grid range [{lo}, {hi}]")));
            }
            let width = hi - lo;
            // Tolerate representation error so that e.g. 0.8 / 0.1 counts as 8.
            let intervals = ((width / mesh) - 1e-9).ceil().max(1.0) as usize;
            let step = width / intervals as f64;
            let support = (0..=intervals).map(|k| lo + step * k as f64).collect();
            let weights = vec![1.0; intervals + 1];
            WorkingPrior::from_parts(support, weights, PriorKind::Grid { mesh: step })
        }
        PriorSpec::Weights(points) => WorkingPrior::discrete(points),
    }
}

impl FromStr for PriorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("cannot parse prior spec {s:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let (head, rest) = s.split_once(':').ok_or_else(bad)?;
        match head.trim() {
            "bernoulli" => Ok(PriorSpec::Bernoulli(num(rest)?)),
            "grid" => {
                let parts: Vec<&str> = rest.split(':').collect();
                if parts.len() != 3 {
                    return Err(bad());
                }
                Ok(PriorSpec::Grid {
                    lo: num(parts[0])?,
                    hi: num(parts[1])?,
                    mesh: num(parts[2])?,
                })
            }
            "weights" => {
                let pts = rest
                    .split(',')
                    .map(|item| {
                        let (u, w) = item.split_once('=').ok_or_else(bad)?;
                        Ok((num(u)?, num(w)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PriorSpec::Weights(pts))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::Bernoulli(p) => write!(f, "bernoulli:{p}"),
            PriorSpec::Grid { lo, hi, mesh } => write!(f, "grid:{lo}:{hi}:{mesh}"),
            PriorSpec::Weights(pts) => {
                write!(f, "weights:")?;
                for (i, (u, w)) in pts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{u}={w}")?;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn theta2(lambda: [f64; 2], beta: f64, kappa: [f64; 2]) -> Theta {
        Theta {
            lambda: lambda.to_vec(),
            beta,
            kappa: kappa.to_vec(),
        }
    }

    #[test]
    fn eta_outcome_examples() {
        let sp = SensitivityPoint::new(4.0, 0.0).unwrap();
        let zero = Theta::zeros(2);
        assert_eq!(eta_outcome(&zero, &[1.0, 0.3], 1, 0.7, SensitivityPoint::NONE).unwrap(), 0.0);
        let th = theta2([0.5, 0.0], 2.0, [0.0, 0.0]);
        assert_eq!(eta_outcome(&th, &[1.0, 0.0], 1, 1.0, sp).unwrap(), 6.5);
        let a = eta_outcome(&th, &[1.0, 0.0], 1, 0.9, sp).unwrap();
        let b = eta_outcome(&th, &[1.0, 0.0], 1, 0.2, sp).unwrap();
        assert_relative_eq!(a - b, 4.0 * 0.7, epsilon = 1e-14);
    }

    #[test]
    fn eta_dimension_mismatch_names_length() {
        let th = Theta::zeros(3);
        let err = eta_outcome(&th, &[1.0, 0.0], 0, 0.0, SensitivityPoint::NONE).unwrap_err();
        assert!(matches!(err, Error::Dimension { got: 3, expected: 2, .. }), "{err}");
    }

    #[test]
    fn density_examples() {
        let sp = SensitivityPoint::NONE;
        let zero = Theta::zeros(1);
        let bern = ModelSpec::bernoulli();
        assert_relative_eq!(density_y(1.0, &[1.0], 0, 0.0, &zero, sp, &bern).unwrap(), 0.5);
        let th = Theta {
            lambda: vec![0.5],
            beta: 0.0,
            kappa: vec![0.0],
        };
        assert_relative_eq!(
            density_y(1.0, &[1.0], 0, 0.0, &th, sp, &bern).unwrap(),
            0.622_459_331_201_854_6,
            epsilon = 1e-12
        );
        let gauss = ModelSpec::gaussian(1.0).unwrap();
        assert_relative_eq!(
            density_y(0.0, &[1.0], 0, 0.0, &zero, sp, &gauss).unwrap(),
            0.398_942_280_401_432_7,
            epsilon = 1e-12
        );
        assert!(density_y(0.5, &[1.0], 0, 0.0, &zero, sp, &bern).is_err());
        assert!(ModelSpec::gaussian(0.0).is_err());
        assert!(density_z(2, &[1.0], 0.0, &zero, sp).is_err());
    }

    #[test]
    fn propensity_cancels_in_binary_u_design() {
        // κᵀx = 3·0.5 − 3·0.5 = 0 with u = 0.
        let th = Theta {
            lambda: vec![0.0; 3],
            beta: 0.0,
            kappa: vec![0.0, 3.0, -3.0],
        };
        let sp = SensitivityPoint::new(4.0, 4.0).unwrap();
        assert_relative_eq!(density_z(1, &[1.0, 0.5, 0.5], 0.0, &th, sp).unwrap(), 0.5);
        let s = density_z(1, &[1.0, 0.2, 0.9], 0.3, &th, sp).unwrap()
            + density_z(0, &[1.0, 0.2, 0.9], 0.3, &th, sp).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn joint_density_zero_parameters_is_quarter() {
        let th = Theta::zeros(2);
        let spec = ModelSpec::bernoulli();
        for y in [0.0, 1.0] {
            for z in [0, 1] {
                let v = joint_density(y, z, &[1.0, 0.4], 0.3, &th, SensitivityPoint::NONE, &spec)
                    .unwrap();
                assert_relative_eq!(v, 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn joint_density_u_free_at_null_point() {
        let th = theta2([0.3, -1.0], 1.2, [0.1, 0.4]);
        let spec = ModelSpec::bernoulli();
        let a = joint_density(1.0, 1, &[1.0, 0.4], 0.0, &th, SensitivityPoint::NONE, &spec).unwrap();
        let b = joint_density(1.0, 1, &[1.0, 0.4], 0.9, &th, SensitivityPoint::NONE, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn make_prior_examples() {
        let b = make_prior(&PriorSpec::Bernoulli(0.2)).unwrap();
        assert_eq!(b.support(), &[0.0, 1.0]);
        assert_relative_eq!(b.weights()[0], 0.8);
        assert_relative_eq!(b.weights()[1], 0.2);

        let g = make_prior(&PriorSpec::Grid {
            lo: 0.0,
            hi: 1.0,
            mesh: 0.5,
        })
        .unwrap();
        assert_eq!(g.support(), &[0.0, 0.5, 1.0]);
        for w in g.weights() {
            assert_relative_eq!(*w, 1.0 / 3.0, epsilon = 1e-15);
        }

        let g = make_prior(&PriorSpec::Grid {
            lo: -0.4,
            hi: 0.4,
            mesh: 0.1,
        })
        .unwrap();
        assert_eq!(g.len(), 9);
        assert_relative_eq!(g.mesh(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn make_prior_errors() {
        assert!(make_prior(&PriorSpec::Weights(vec![])).is_err());
        assert!(make_prior(&PriorSpec::Weights(vec![(0.0, -1.0), (1.0, 2.0)])).is_err());
        assert!(make_prior(&PriorSpec::Weights(vec![(0.0, 0.0), (1.0, 0.0)])).is_err());
        assert!(make_prior(&PriorSpec::Grid {
            lo: 0.0,
            hi: 1.0,
            mesh: 0.0
        })
        .is_err());
        assert!(make_prior(&PriorSpec::Bernoulli(1.5)).is_err());
    }

    #[test]
    fn prior_spec_parsing() {
        assert_eq!("bernoulli:0.5".parse::<PriorSpec>().unwrap(), PriorSpec::Bernoulli(0.5));
        assert_eq!(
            "grid:0:1:0.1".parse::<PriorSpec>().unwrap(),
            PriorSpec::Grid {
                lo: 0.0,
                hi: 1.0,
                mesh: 0.1
            }
        );
        assert_eq!(
            "weights:0=0.3,1=0.7".parse::<PriorSpec>().unwrap(),
            PriorSpec::Weights(vec![(0.0, 0.3), (1.0, 0.7)])
        );
        assert!("beta:2:2".parse::<PriorSpec>().is_err());
        assert!("grid:0:1".parse::<PriorSpec>().is_err());
    }

    #[test]
    fn dataset_validation() {
        let ok = Dataset::with_intercept(vec![1.0, 0.0, 1.0], vec![0, 1, 1], vec![
            vec![0.1],
            vec![0.2],
            vec![0.3],
        ])
        .unwrap();
        assert_eq!((ok.n(), ok.p()), (3, 2));
        assert_eq!(ok.row(1), &[1.0, 0.2]);
        assert!(Dataset::new(vec![1.0], vec![2], vec![vec![1.0]]).is_err());
        assert!(Dataset::new(vec![1.0], vec![0], vec![vec![0.0]]).is_err());
        let bad_y = Dataset::with_intercept(vec![0.5], vec![0], vec![vec![]]).unwrap();
        assert!(bad_y.check_family(&ModelSpec::bernoulli()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_theta(p: usize) -> impl Strategy<Value = Theta> {
            (
                prop::collection::vec(-3.0..3.0f64, p),
                -3.0..3.0f64,
                prop::collection::vec(-3.0..3.0f64, p),
            )
                .prop_map(|(lambda, beta, kappa)| Theta {
                    lambda,
                    beta,
                    kappa,
                })
        }

        proptest! {
            #[test]
            fn bernoulli_joint_sums_to_one(
                th in arb_theta(2), x1 in -2.0..2.0f64, u in -1.0..2.0f64,
                d in -5.0..5.0f64, g in -5.0..5.0f64,
            ) {
                let sp = SensitivityPoint::new(d, g).unwrap();
                let spec = ModelSpec::bernoulli();
                let mut s = 0.0;
                for y in [0.0, 1.0] {
                    for z in [0, 1] {
                        s += joint_density(y, z, &[1.0, x1], u, &th, sp, &spec).unwrap();
                    }
                }
                prop_assert!((s - 1.0).abs() < 1e-10);
            }

            #[test]
            fn log_and_linear_space_agree(
                th in arb_theta(2), x1 in -2.0..2.0f64, u in -1.0..2.0f64,
                d in -5.0..5.0f64, g in -5.0..5.0f64, y in 0u8..2, z in 0u8..2,
            ) {
                let sp = SensitivityPoint::new(d, g).unwrap();
                let spec = ModelSpec::bernoulli();
                let lin = joint_density(f64::from(y), z, &[1.0, x1], u, &th, sp, &spec).unwrap();
                let lg = log_joint_density(f64::from(y), z, &[1.0, x1], u, &th, sp, &spec).unwrap();
                let y1 = density_y(f64::from(y), &[1.0, x1], z, u, &th, sp, &spec).unwrap();
                let z1 = density_z(z, &[1.0, x1], u, &th, sp).unwrap();
                prop_assert!((lg.exp() - lin).abs() <= 1e-12 * lin);
                prop_assert!((y1 * z1 - lin).abs() <= 1e-12 * lin);
            }

            #[test]
            fn prior_weights_normalized(ws in prop::collection::vec(0.01..10.0f64, 1..12)) {
                let pts: Vec<(f64, f64)> = ws.iter().enumerate().map(|(i, w)| (i as f64, *w)).collect();
                let prior = WorkingPrior::discrete(&pts).unwrap();
                let s: f64 = prior.weights().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
