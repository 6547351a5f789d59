//! Newton–Cotes weights on the U grid and Gauss–Hermite rules for
//! continuous-outcome integrals.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{
    dot, expit, log_density_z_raw, ModelSpec, OutcomeFamily, SensitivityPoint, Theta,
};

pub const DEFAULT_HERMITE_ORDER: usize = 32;
pub const MAX_HERMITE_ORDER: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonCotesRule {
    pub weights: Vec<f64>,
    pub mesh: f64,
}

/// Trapezoid weights `(1/2, 1, …, 1, 1/2)` for `len` points.
pub(crate) fn trapezoid_weights(len: usize) -> Vec<f64> {
    let mut w = vec![1.0; len];
    if len > 1 {
        w[0] = 0.5;
        w[len - 1] = 0.5;
    }
    w
}

/// Trapezoid rule on `intervals + 1` equally spaced points with unit mesh;
/// callers rescale by the actual `h`.
pub fn trapezoid(intervals: usize) -> Result<NewtonCotesRule> {
    if intervals == 0 {
        return Err(Error::InvalidInput("trapezoid rule needs K >= 1".into()));
    }
    Ok(NewtonCotesRule {
        weights: trapezoid_weights(intervals + 1),
        mesh: 1.0,
    })
}

impl NewtonCotesRule {
    pub fn with_mesh(mut self, mesh: f64) -> Self {
        self.mesh = mesh;
        self
    }

    /// `h · Σ wᵢ f(uᵢ)` over equally spaced samples.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.mesh * dot(&self.weights, values)
    }
}

/// Gauss–Hermite rule for the weight `exp(-t²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[g(Y)]` for `Y ~ N(mean, sd²)` via `y = mean + √2·sd·t`.
    pub fn normal_expectation(&self, mean: f64, sd: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        let s = std::f64::consts::SQRT_2 * sd;
        let norm = PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * g(mean + s * t))
            .sum::<f64>()
            / norm
    }
}

/// Orthonormal Hermite recurrence: returns `(p̃_n(t), p̃_{n-1}(t), Σ_{k<n} p̃_k(t)²)`.
fn orthonormal_hermite(n: usize, t: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut sumsq = 0.0;
    for k in 0..n {
        sumsq += cur * cur;
        let next = (2.0 / (k as f64 + 1.0)).sqrt() * t * cur
            - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sumsq)
}

/// Golub–Welsch nodes refined by Newton on the orthonormal recurrence, with
/// Christoffel weights.
pub fn hermite(order: usize) -> Result<HermiteRule> {
    if order == 0 {
        return Err(Error::InvalidInput("Hermite order must be >= 1".into()));
    }
    if order > MAX_HERMITE_ORDER {
        return Err(Error::InvalidInput(format!(
            "Hermite order {order} exceeds the supported maximum {MAX_HERMITE_ORDER}"
        )));
    }
    let n = order;
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            ((i.max(j)) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    for t in nodes.iter_mut() {
        for _ in 0..3 {
            let (pn, pn1, _) = orthonormal_hermite(n, *t);
            let deriv = (2.0 * n as f64).sqrt() * pn1;
            if deriv != 0.0 {
                *t -= pn / deriv;
            }
        }
    }
    // Enforce exact symmetry about zero.
    for i in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&t| 1.0 / orthonormal_hermite(n, t).2)
        .collect();
    for i in 0..n / 2 {
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(HermiteRule { nodes, weights })
}

/// Shared rule of order [`DEFAULT_HERMITE_ORDER`].
pub fn default_hermite() -> &'static HermiteRule {
    static RULE: OnceLock<HermiteRule> = OnceLock::new();
    RULE.get_or_init(|| hermite(DEFAULT_HERMITE_ORDER).expect("default order is in range"))
}

/// One quadrature point of the `(y, z)` integral with its probability weight
/// under `f(y, z | x, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YzPoint {
    pub y: f64,
    pub z: u8,
    pub weight: f64,
}

/// Quadrature points for `E[g(Y, Z) | x, u]`: the four Bernoulli cells, or the
/// Hermite nodes in `y` crossed with `z ∈ {0, 1}` for a Gaussian outcome.
pub fn yz_points(
    x: &[f64],
    u: f64,
    theta: &Theta,
    sp: SensitivityPoint,
    spec: &ModelSpec,
    rule: &HermiteRule,
) -> Result<Vec<YzPoint>> {
    let eta2 = crate::model::eta_propensity(theta, x, u, sp)?;
    let base = dot(&theta.lambda, x) + sp.delta * u;
    let mut out = Vec::new();
    for z in [0u8, 1] {
        let pz = log_density_z_raw(z, eta2).exp();
        let eta1 = base + theta.beta * f64::from(z);
        match spec.outcome {
            OutcomeFamily::Bernoulli => {
                let mu = expit(eta1);
                out.push(YzPoint {
                    y: 0.0,
                    z,
                    weight: pz * (1.0 - mu),
                });
                out.push(YzPoint {
                    y: 1.0,
                    z,
                    weight: pz * mu,
                });
            }
            OutcomeFamily::Gaussian { sigma } => {
                let s = std::f64::consts::SQRT_2 * sigma;
                let norm = PI.sqrt();
                for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                    out.push(YzPoint {
                        y: eta1 + s * t,
                        z,
                        weight: pz * w / norm,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// `E[g(Y, Z) | x, u]` under the fitted outcome and propensity models.
pub fn yz_expectation<F>(
    mut g: F,
    x: &[f64],
    u: f64,
    theta: &Theta,
    sp: SensitivityPoint,
    spec: &ModelSpec,
    rule: &HermiteRule,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, u8) -> Result<DVector<f64>>,
{
    let mut acc: Option<DVector<f64>> = None;
    for pt in yz_points(x, u, theta, sp, spec, rule)? {
        let v = g(pt.y, pt.z)?;
        if v.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite { y: pt.y, z: pt.z });
        }
        match acc.as_mut() {
            Some(a) => a.axpy(pt.weight, &v, 1.0),
            None => acc = Some(v * pt.weight),
        }
    }
    acc.ok_or_else(|| Error::Numerical("empty (y, z) quadrature".into()))
}
