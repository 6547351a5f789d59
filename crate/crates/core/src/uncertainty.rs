//! Uniform-in-(δ, γ) confidence bands by multiplier bootstrap, and Rubin's
//! rules for pooling fits across multiply-imputed datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{normal_critical, FitResult};
use crate::model::{SensitivityPoint, Theta};

pub const DEFAULT_DRAWS: usize = 1000;
pub const MIN_DRAWS: usize = 100;

/// What the multipliers perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Multiplier {
    /// β coordinate of the influence values `−Ĵ⁻¹ Sᵢ`, normalized by the
    /// sandwich standard error. Each grid coordinate of the sup statistic is
    /// then asymptotically standard normal.
    #[default]
    Influence,
    /// β coordinate of the raw efficient scores over `√n · se`. Kept for
    /// comparison only; its coverage is not calibrated.
    RawScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub grid: Vec<SensitivityPoint>,
    pub beta: Vec<f64>,
    /// Per-point sandwich variance of β̂.
    pub v: Vec<f64>,
    pub c_hat: f64,
    pub band: Vec<(f64, f64)>,
    pub level: f64,
    pub draws: usize,
    pub seed: u64,
    pub multiplier: Multiplier,
}

impl BandResult {
    pub fn half_width(&self, k: usize) -> f64 {
        self.c_hat * self.v[k].sqrt()
    }

    /// True when every band interval contains the matching value.
    pub fn covers_all(&self, truth: &[f64]) -> bool {
        truth.len() == self.band.len() && self.band.iter().zip(truth).all(|((lo, hi), t)| lo <= t && t <= hi)
    }
}

/// Generator for draw `b`: one ChaCha stream per draw, so each draw is
/// reproducible on its own and the result does not depend on scheduling.
fn draw_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// Multiplier-bootstrap band over the grid points of `fits`.
pub fn uniform_band(fits: &[FitResult], level: f64, draws: usize, seed: u64) -> Result<BandResult> {
    uniform_band_with(fits, level, draws, seed, Multiplier::Influence)
}

pub fn uniform_band_with(
    fits: &[FitResult],
    level: f64,
    draws: usize,
    seed: u64,
    multiplier: Multiplier,
) -> Result<BandResult> {
    normal_critical(level)?;
    if draws < MIN_DRAWS {
        return Err(Error::InsufficientDraws(draws));
    }
    let first = fits
        .first()
        .ok_or_else(|| Error::InvalidInput("band needs at least one grid point".into()))?;
    let n = first.n();
    for f in fits {
        if !f.converged {
            return Err(Error::Unconverged {
                delta: f.sp.delta,
                gamma: f.sp.gamma,
            });
        }
        if f.n() != n {
            return Err(Error::Dimension {
                what: "fit observations",
                expected: n,
                got: f.n(),
            });
        }
        if !(f.beta_se > 0.0) {
            return Err(Error::Numerical(format!(
                "zero standard error at (δ, γ) = ({}, {})",
                f.sp.delta, f.sp.gamma
            )));
        }
    }
    let nf = n as f64;
    // Columns pre-divided by their normalizer so each draw is a dot product.
    let columns: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| {
            let (col, scale) = match multiplier {
                Multiplier::Influence => (f.beta_influence(), nf * f.beta_se),
                Multiplier::RawScore => {
                    let b = Theta::beta_index(f.theta_hat.p());
                    let col: Vec<f64> = f.scores.column(b).iter().copied().collect();
                    (col, nf.sqrt() * f.beta_se)
                }
            };
            col.into_iter().map(|v| v / scale).collect()
        })
        .collect();
    let mut sups: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = draw_rng(seed, b);
            let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            columns
                .iter()
                .map(|c| c.iter().zip(&eps).map(|(a, e)| a * e).sum::<f64>().abs())
                .fold(0.0, f64::max)
        })
        .collect();
    sups.sort_by(f64::total_cmp);
    let idx = ((draws as f64 * level).ceil() as usize).clamp(1, draws) - 1;
    let c_hat = sups[idx];
    let v: Vec<f64> = fits.iter().map(|f| f.beta_se * f.beta_se).collect();
    let band = fits
        .iter()
        .map(|f| (f.beta_hat - c_hat * f.beta_se, f.beta_hat + c_hat * f.beta_se))
        .collect();
    Ok(BandResult {
        grid: fits.iter().map(|f| f.sp).collect(),
        beta: fits.iter().map(|f| f.beta_hat).collect(),
        v,
        c_hat,
        band,
        level,
        draws,
        seed,
        multiplier,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub beta: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub level: f64,
    /// Mean within-imputation variance.
    pub within: f64,
    /// Sample variance of the estimates across imputations.
    pub between: f64,
    pub total: f64,
    pub m: usize,
}

/// Rubin's rules over `(β̂_m, se_m)` pairs.
pub fn rubin_pool(estimates: &[(f64, f64)], level: f64) -> Result<Pooled> {
    let z = normal_critical(level)?;
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!("pooling needs at least 2 estimates, got {m}")));
    }
    if estimates.iter().any(|(b, s)| !b.is_finite() || !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidInput("estimates must be finite with nonnegative se".into()));
    }
    let mf = m as f64;
    let beta = estimates.iter().map(|e| e.0).sum::<f64>() / mf;
    let within = estimates.iter().map(|e| e.1 * e.1).sum::<f64>() / mf;
    let between = estimates.iter().map(|e| (e.0 - beta).powi(2)).sum::<f64>() / (mf - 1.0);
    let total = within + (1.0 + 1.0 / mf) * between;
    let se = total.sqrt();
    Ok(Pooled {
        beta,
        se,
        ci: (beta - z * se, beta + z * se),
        level,
        within,
        between,
        total,
        m,
    })
}
