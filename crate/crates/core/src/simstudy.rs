//! Data-generating processes for the simulation designs and the Monte Carlo
//! harness that scores estimators on them.
//!
//! Every design draws `X₁, X₂ ~ Unif(0, 1)` and has true treatment effect
//! `β = 2`. None of the true outcome or treatment models has an intercept,
//! so generated datasets use an intercept-free design matrix.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{em_fit, EmOptions};
use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions};
use crate::model::{expit, make_prior, Dataset, ModelSpec, PriorSpec, SensitivityPoint};

pub const TRUE_BETA: f64 = 2.0;
pub const MIN_N: usize = 50;
/// Failure fraction above which a study is reported as a mismatch.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// `U ~ Bern(0.2)`, binary Y, `δ = γ = 4`.
    BinaryU,
    /// `U ~ Beta(2, 2)`, binary Y, `δ = γ = 2`.
    BetaU,
    /// `U = X₁ + Beta(2, 2)`, binary Y.
    DependentBetaU,
    /// `U = X₁ + N(0, 0.1²)`, binary Y.
    DependentNormalU,
    /// `U ~ Bern(0.2)`, `Y = X₁ + X₂ + 2Z + 4U + ε`, `ε ~ N(0, 1)`.
    GaussianY,
}

impl DgpKind {
    pub const ALL: [DgpKind; 5] = [
        DgpKind::BinaryU,
        DgpKind::BetaU,
        DgpKind::DependentBetaU,
        DgpKind::DependentNormalU,
        DgpKind::GaussianY,
    ];

    /// The `(δ, γ)` used to generate the data.
    pub fn true_sensitivity(self) -> SensitivityPoint {
        let (d, g) = match self {
            DgpKind::BinaryU | DgpKind::GaussianY => (4.0, 4.0),
            DgpKind::BetaU | DgpKind::DependentBetaU | DgpKind::DependentNormalU => (2.0, 2.0),
        };
        SensitivityPoint { delta: d, gamma: g }
    }

    pub fn spec(self) -> ModelSpec {
        match self {
            DgpKind::GaussianY => ModelSpec::gaussian(1.0).expect("unit sigma"),
            _ => ModelSpec::bernoulli(),
        }
    }

    /// Range of the equally spaced working-prior grid for continuous-U
    /// designs. For `U = X₁ + ε` the grid covers the support of `ε`: both
    /// models are linear in `U`, so this is the working law `X₁ + grid`
    /// with the shift absorbed into the `X₁` coefficients.
    pub fn grid_range(self) -> Option<(f64, f64)> {
        match self {
            DgpKind::BetaU => Some((0.0, 1.0)),
            DgpKind::DependentBetaU => Some((0.0, 1.0)),
            DgpKind::DependentNormalU => Some((-0.4, 0.4)),
            DgpKind::BinaryU | DgpKind::GaussianY => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DgpKind::BinaryU => "binary_u",
            DgpKind::BetaU => "beta_u",
            DgpKind::DependentBetaU => "dependent_beta_u",
            DgpKind::DependentNormalU => "dependent_normal_u",
            DgpKind::GaussianY => "gaussian_y",
        }
    }
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DgpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown design kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    /// The latent confounder, for diagnostics only.
    pub u: Vec<f64>,
}

pub fn generate(dgp: &DgpSpec) -> Result<Simulated> {
    if dgp.n < MIN_N {
        return Err(Error::InvalidInput(format!("design needs n >= {MIN_N}, got {}", dgp.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(dgp.seed);
    let beta22 = Beta::new(2.0, 2.0).expect("valid beta");
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let sp = dgp.kind.true_sensitivity();
    let n = dgp.n;
    let (mut y, mut z, mut rows, mut us) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let x1: f64 = rng.random();
        let x2: f64 = rng.random();
        let u = match dgp.kind {
            DgpKind::BinaryU | DgpKind::GaussianY => f64::from(u8::from(rng.random::<f64>() < 0.2)),
            DgpKind::BetaU => beta22.sample(&mut rng),
            DgpKind::DependentBetaU => x1 + beta22.sample(&mut rng),
            DgpKind::DependentNormalU => x1 + noise.sample(&mut rng),
        };
        let zi = u8::from(rng.random::<f64>() < expit(3.0 * x1 - 3.0 * x2 + sp.gamma * u));
        let zf = f64::from(zi);
        let yi = match dgp.kind {
            DgpKind::GaussianY => {
                let eps: f64 = rng.sample(rand_distr::StandardNormal);
                x1 + x2 + TRUE_BETA * zf + sp.delta * u + eps
            }
            _ => {
                let eta = 4.0 * x1 - 4.0 * x2 + TRUE_BETA * zf + sp.delta * u;
                f64::from(u8::from(rng.random::<f64>() < expit(eta)))
            }
        };
        y.push(yi);
        z.push(zi);
        rows.push(vec![x1, x2]);
        us.push(u);
    }
    Ok(Simulated {
        data: Dataset::without_intercept(y, z, rows)?,
        u: us,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Semi { prior: PriorSpec, alpha: f64 },
    Em { p: f64 },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Semi { prior, .. } => format!("semi[{prior}]"),
            Method::Em { p } => format!("em[{p}]"),
        }
    }

    fn mesh(&self) -> Option<f64> {
        match self {
            Method::Semi {
                prior: PriorSpec::Grid { mesh, .. },
                ..
            } => Some(*mesh),
            _ => None,
        }
    }

    fn alpha(&self) -> Option<f64> {
        match self {
            Method::Semi {
                prior: PriorSpec::Grid { .. },
                alpha,
            } => Some(*alpha),
            _ => None,
        }
    }
}

/// One replication's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub seed: u64,
    pub estimate: Option<(f64, f64, (f64, f64))>,
    pub error: Option<String>,
    /// EM only: whether the log-likelihood trace was nondecreasing.
    pub monotone: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub mean: f64,
    /// Monte Carlo standard deviation (divisor = number of successful reps).
    pub se: f64,
    pub abs_bias: f64,
    pub pct_bias: f64,
    pub coverage: f64,
    pub rmse: f64,
    pub reps: usize,
    pub failures: usize,
}

/// SplitMix64 finalizer over `master + (rep + 1)·φ`: a counter-based
/// splitter, so replication `rep` can be regenerated on its own.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    let mut z = master.wrapping_add((rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn metrics(estimates: &[f64], ses: &[f64], cis: &[(f64, f64)], true_beta: f64) -> Result<StudyMetrics> {
    let m = estimates.len();
    if m == 0 {
        return Err(Error::InvalidInput("no estimates to summarize".into()));
    }
    if ses.len() != m || cis.len() != m {
        return Err(Error::Dimension {
            what: "metrics inputs",
            expected: m,
            got: ses.len().min(cis.len()),
        });
    }
    let mf = m as f64;
    let mean = estimates.iter().sum::<f64>() / mf;
    let sd = (estimates.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / mf).sqrt();
    let abs_bias = (mean - true_beta).abs();
    let covered = cis.iter().filter(|(lo, hi)| *lo <= true_beta && true_beta <= *hi).count();
    Ok(StudyMetrics {
        mean,
        se: sd,
        abs_bias,
        pct_bias: 100.0 * abs_bias / true_beta.abs(),
        coverage: covered as f64 / mf,
        rmse: (estimates.iter().map(|b| (b - true_beta).powi(2)).sum::<f64>() / mf).sqrt(),
        reps: m,
        failures: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub kind: DgpKind,
    pub n: usize,
    pub method: Method,
    /// Defaults to the design's true `(δ, γ)`.
    pub sp: Option<SensitivityPoint>,
    pub reps: usize,
    pub level: f64,
    pub seed: u64,
}

impl StudyConfig {
    pub fn sensitivity(&self) -> SensitivityPoint {
        self.sp.unwrap_or_else(|| self.kind.true_sensitivity())
    }
}

/// Runs one replication: generate with the derived seed, then fit.
pub fn run_replication(cfg: &StudyConfig, rep: usize) -> RepResult {
    let seed = replication_seed(cfg.seed, rep);
    let sp = cfg.sensitivity();
    let spec = cfg.kind.spec();
    let outcome = generate(&DgpSpec {
        kind: cfg.kind,
        n: cfg.n,
        seed,
    })
    .and_then(|sim| match &cfg.method {
        Method::Semi { prior, alpha } => {
            let opts = FitOptions::new(make_prior(prior)?).with_alpha(*alpha);
            let f = fit(&sim.data, sp, &opts, &spec, cfg.level)?;
            if !f.converged {
                return Err(Error::Numerical(format!("no root found (‖G‖∞ = {:.2e})", f.final_norm)));
            }
            Ok(((f.beta_hat, f.beta_se, f.ci), None))
        }
        Method::Em { p } => {
            let f = em_fit(&sim.data, sp, &EmOptions::new(*p)?, &spec, cfg.level)?;
            if !f.converged {
                return Err(Error::Numerical("EM iteration limit reached".into()));
            }
            let monotone = f.loglik.windows(2).all(|w| w[1] >= w[0] - 1e-10 * w[0].abs());
            Ok(((f.beta_hat, f.beta_se, f.ci), Some(monotone)))
        }
    });
    match outcome {
        Ok((est, monotone)) => RepResult {
            rep,
            seed,
            estimate: Some(est),
            error: None,
            monotone,
        },
        Err(e) => RepResult {
            rep,
            seed,
            estimate: None,
            monotone: matches!(e, Error::LikelihoodDecrease { .. }).then_some(false),
            error: Some(e.to_string()),
        },
    }
}

/// Replications in order, run in parallel.
pub fn run_replications(cfg: &StudyConfig) -> Result<Vec<RepResult>> {
    if cfg.reps < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 replications, got {}", cfg.reps)));
    }
    Ok((0..cfg.reps).into_par_iter().map(|r| run_replication(cfg, r)).collect())
}

/// Summarizes replications, excluding failures.
pub fn summarize(results: &[RepResult], true_beta: f64) -> Result<StudyMetrics> {
    let ok: Vec<_> = results.iter().filter_map(|r| r.estimate).collect();
    let failures = results.len() - ok.len();
    if failures as f64 > MAX_FAILURE_RATE * results.len() as f64 {
        return Err(Error::DesignMismatch {
            failures,
            reps: results.len(),
        });
    }
    let est: Vec<f64> = ok.iter().map(|e| e.0).collect();
    let ses: Vec<f64> = ok.iter().map(|e| e.1).collect();
    let cis: Vec<(f64, f64)> = ok.iter().map(|e| e.2).collect();
    let mut m = metrics(&est, &ses, &cis, true_beta)?;
    m.failures = failures;
    Ok(m)
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyMetrics> {
    summarize(&run_replications(cfg)?, TRUE_BETA)
}

/// A named cell of a study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub design: String,
    pub method: String,
    pub n: usize,
    pub h: Option<f64>,
    pub alpha: Option<f64>,
    pub mean: f64,
    pub se: f64,
    pub abs_bias: f64,
    pub pct_bias: f64,
    pub coverage: f64,
    pub rmse: f64,
    pub reps: usize,
    pub failures: usize,
}

impl StudyRow {
    pub fn new(cfg: &StudyConfig, m: &StudyMetrics) -> Self {
        Self {
            design: cfg.kind.name().into(),
            method: cfg.method.label(),
            n: cfg.n,
            h: cfg.method.mesh(),
            alpha: cfg.method.alpha(),
            mean: m.mean,
            se: m.se,
            abs_bias: m.abs_bias,
            pct_bias: m.pct_bias,
            coverage: m.coverage,
            rmse: m.rmse,
            reps: m.reps,
            failures: m.failures,
        }
    }
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[StudyRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Named table layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    /// Binary U: semiparametric and EM, each with correct and misspecified p.
    Table1,
    /// Beta(2, 2) U: semiparametric over a range of grid meshes.
    Table2,
    /// X-dependent U: Beta and normal noise at two meshes each.
    Table3,
    /// Binary U with Gaussian outcome: semiparametric, both priors.
    GaussianY,
}

impl FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Table::Table1),
            "table2" => Ok(Table::Table2),
            "table3" => Ok(Table::Table3),
            "gaussian_y" => Ok(Table::GaussianY),
            _ => Err(Error::InvalidInput(format!(
                "unknown design '{s}' (expected table1, table2, table3 or gaussian_y)"
            ))),
        }
    }
}

fn grid_method(kind: DgpKind, mesh: f64, alpha: f64) -> Method {
    let (lo, hi) = kind.grid_range().expect("continuous design");
    Method::Semi {
        prior: PriorSpec::Grid { lo, hi, mesh },
        alpha,
    }
}

/// The cells of a table at sample size `n`. `meshes` overrides the default
/// mesh list of the continuous-U tables.
pub fn table_cells(
    table: Table,
    n: usize,
    reps: usize,
    level: f64,
    seed: u64,
    alpha: f64,
    meshes: Option<&[f64]>,
) -> Vec<StudyConfig> {
    let cell = |kind, method| StudyConfig {
        kind,
        n,
        method,
        sp: None,
        reps,
        level,
        seed,
    };
    let bern = |p| Method::Semi {
        prior: PriorSpec::Bernoulli(p),
        alpha,
    };
    match table {
        Table::Table1 => vec![
            cell(DgpKind::BinaryU, Method::Em { p: 0.5 }),
            cell(DgpKind::BinaryU, Method::Em { p: 0.2 }),
            cell(DgpKind::BinaryU, bern(0.5)),
            cell(DgpKind::BinaryU, bern(0.2)),
        ],
        Table::Table2 => meshes
            .unwrap_or(&[0.5, 0.25, 0.2, 0.1])
            .iter()
            .map(|&h| cell(DgpKind::BetaU, grid_method(DgpKind::BetaU, h, alpha)))
            .collect(),
        Table::Table3 => {
            let beta_meshes = meshes.unwrap_or(&[0.2, 0.1]);
            let normal_meshes = meshes.unwrap_or(&[0.1, 0.05]);
            beta_meshes
                .iter()
                .map(|&h| cell(DgpKind::DependentBetaU, grid_method(DgpKind::DependentBetaU, h, alpha)))
                .chain(normal_meshes.iter().map(|&h| {
                    cell(
                        DgpKind::DependentNormalU,
                        grid_method(DgpKind::DependentNormalU, h, alpha),
                    )
                }))
                .collect()
        }
        Table::GaussianY => vec![cell(DgpKind::GaussianY, bern(0.5)), cell(DgpKind::GaussianY, bern(0.2))],
    }
}
