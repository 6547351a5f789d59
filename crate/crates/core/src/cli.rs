//! Command-line front end: ingestion, subcommand dispatch and plain-text
//! interpretation reports.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical
//! failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::em::{em_fit, EmFit, EmOptions};
use crate::error::{Error, Result};
use crate::estimator::{sweep_fits, tipping_point, FitOptions, FitResult, SolverChoice, SweepRow};
use crate::ident::{identify, ObservedCells};
use crate::model::{make_prior, Dataset, ModelSpec, OutcomeFamily, PriorSpec, SensitivityPoint, Theta};
use crate::simstudy::{run_study, table_cells, StudyRow, Table};
use crate::uncertainty::{rubin_pool, uniform_band_with, Multiplier, DEFAULT_DRAWS};

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "SEMISENS_THREADS";
pub const FIT_SCHEMA: &str = "semisens.fit/1";

#[derive(Debug, Parser)]
#[command(name = "semisens", version, about = "Semiparametric sensitivity analysis for unmeasured confounding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a single sensitivity point and write a JSON record.
    Fit(FitArgs),
    /// Fit over a grid of sensitivity points and write one CSV row per point.
    Sweep(SweepArgs),
    /// Sweep plus a multiplier-bootstrap uniform band.
    Band(BandArgs),
    /// Maximum-likelihood comparator with binary U and fixed P(U = 1).
    Em(EmArgs),
    /// Monte Carlo study over a named table layout.
    Simulate(SimulateArgs),
    /// Pool JSON fits from multiply-imputed datasets by Rubin's rules.
    Pool(PoolArgs),
    /// Closed-form identification for binary Y, Z, U without covariates.
    Identify(IdentifyArgs),
    /// Smallest t on the path δ = γ = t at which the interval covers zero.
    Tipping(TippingArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Bernoulli,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Auto,
    Exact,
    Tikhonov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Comma-separated input file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub treatment: String,
    /// Covariate columns, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_enum, default_value = "bernoulli")]
    pub family: Family,
    /// Outcome standard deviation for the Gaussian family.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Fit without the intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

impl DataArgs {
    pub fn spec(&self) -> Result<ModelSpec> {
        match self.family {
            Family::Bernoulli => Ok(ModelSpec::bernoulli()),
            Family::Gaussian => ModelSpec::gaussian(self.sigma),
        }
    }

    pub fn roles(&self) -> Roles<'_> {
        Roles {
            outcome: &self.outcome,
            treatment: &self.treatment,
            covariates: &self.covariates,
            binary_outcome: self.family == Family::Bernoulli,
            intercept: !self.no_intercept,
        }
    }

    pub fn load(&self) -> Result<(Dataset, ModelSpec)> {
        Ok((ingest(&self.data, &self.roles())?, self.spec()?))
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// Working prior: bernoulli:<p>, grid:<lo>:<hi>:<h> or weights:<u1=w1,...>.
    #[arg(long)]
    pub prior: PriorSpec,
    /// Tikhonov regularization parameter.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub solver: SolverArg,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = crate::quadrature::DEFAULT_HERMITE_ORDER)]
    pub hermite_order: usize,
}

impl EstimatorArgs {
    pub fn options(&self) -> Result<FitOptions> {
        let mut o = FitOptions::new(make_prior(&self.prior)?)
            .with_alpha(self.alpha)
            .with_solver(match self.solver {
                SolverArg::Auto => SolverChoice::Auto,
                SolverArg::Exact => SolverChoice::Exact,
                SolverArg::Tikhonov => SolverChoice::Tikhonov,
            });
        o.max_iter = self.max_iter;
        o.tol = self.tol;
        o.hermite_order = self.hermite_order;
        Ok(o)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// δ values: a comma list or lo:hi:step.
    #[arg(long, conflicts_with = "path")]
    pub deltas: Option<String>,
    /// γ values: a comma list or lo:hi:step.
    #[arg(long, conflicts_with = "path")]
    pub gammas: Option<String>,
    /// Diagonal path δ = γ = t: a comma list or lo:hi:step.
    #[arg(long)]
    pub path: Option<String>,
}

impl GridArgs {
    /// Grid points in row-major order: δ outer, γ inner.
    pub fn points(&self) -> Result<Vec<SensitivityPoint>> {
        if let Some(p) = &self.path {
            return parse_grid(p)?.into_iter().map(|t| SensitivityPoint::new(t, t)).collect();
        }
        let (Some(d), Some(g)) = (&self.deltas, &self.gammas) else {
            return Err(Error::InvalidInput("give --path or both --deltas and --gammas".into()));
        };
        let ds = parse_grid(d)?;
        let gs = parse_grid(g)?;
        ds.iter()
            .flat_map(|&d| gs.iter().map(move |&g| SensitivityPoint::new(d, g)))
            .collect()
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: f64,
    /// Include per-observation β influence values in the JSON record.
    #[arg(long)]
    pub influence: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BandArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Multiplier draws.
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    #[arg(long)]
    pub seed: u64,
    /// Perturb raw efficient scores instead of influence values.
    #[arg(long)]
    pub raw_scores: bool,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EmArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Assumed P(U = 1).
    #[arg(long)]
    pub p: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// table1, table2, table3 or gaussian_y.
    #[arg(long)]
    pub design: Table,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Replications per cell; 500 for table1, 200 otherwise.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Grid meshes for the continuous-U tables, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub meshes: Option<Vec<f64>>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// JSON fit records, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Cell probabilities or counts L(0,0),L(0,1),L(1,0),L(1,1).
    #[arg(long, value_delimiter = ',', conflicts_with = "data")]
    pub cells: Option<Vec<f64>>,
    /// Data file whose binary outcome and treatment give empirical cells.
    #[arg(long, requires_all = ["outcome", "treatment"])]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    /// Law of U given Y = 0, Z = 0.
    #[arg(long)]
    pub prior: PriorSpec,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TippingArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    /// Upper end of the searched path.
    #[arg(long, default_value_t = 5.0)]
    pub t_max: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Parses `a,b,c` or `lo:hi:step` into a strictly increasing sequence.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::InvalidInput(format!("grid {s:?}: {why}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let values: Vec<f64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected lo:hi:step"));
        }
        let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !(hi >= lo) {
            return Err(bad("need step > 0 and hi >= lo"));
        }
        let k = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=k).map(|i| lo + step * i as f64).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("empty or non-finite"));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("values must be strictly increasing"));
    }
    Ok(values)
}

/// Column roles for [`ingest`].
#[derive(Debug, Clone)]
pub struct Roles<'a> {
    pub outcome: &'a str,
    pub treatment: &'a str,
    pub covariates: &'a [String],
    /// Accept only 0/1 outcomes.
    pub binary_outcome: bool,
    /// Prepend the intercept column.
    pub intercept: bool,
}

fn parse_binary(v: &str, row: usize, col: &str) -> Result<u8> {
    match v {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::Ingest(format!("row {row}: {col} value {v:?} is not 0 or 1"))),
    }
}

/// Reads a comma-separated file with a header row into a [`Dataset`].
/// Rows are numbered from 1, not counting the header.
pub fn ingest(path: &Path, roles: &Roles<'_>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Ingest(format!("{}: empty file", path.display())));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest(format!("missing column '{name}'")))
    };
    let iy = find(roles.outcome)?;
    let iz = find(roles.treatment)?;
    let ix: Vec<usize> = roles.covariates.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let (mut y, mut z, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    let mut incomplete = 0usize;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let cell = |i: usize| rec.get(i).filter(|v| !v.is_empty());
        let (Some(yv), Some(zv)) = (cell(iy), cell(iz)) else {
            incomplete += 1;
            continue;
        };
        let xs: Option<Vec<&str>> = ix.iter().map(|&i| cell(i)).collect();
        let Some(xs) = xs else {
            incomplete += 1;
            continue;
        };
        z.push(parse_binary(zv, row, roles.treatment)?);
        y.push(if roles.binary_outcome {
            f64::from(parse_binary(yv, row, roles.outcome)?)
        } else {
            yv.parse::<f64>()
                .map_err(|_| Error::Ingest(format!("row {row}: {} value {yv:?} is not numeric", roles.outcome)))?
        });
        let mut r = Vec::with_capacity(xs.len() + 1);
        if roles.intercept {
            r.push(1.0);
        }
        for (v, name) in xs.iter().zip(roles.covariates) {
            r.push(
                v.parse::<f64>()
                    .map_err(|_| Error::Ingest(format!("row {row}: {name} value {v:?} is not numeric")))?,
            );
        }
        rows.push(r);
    }
    if incomplete > 0 {
        let s = if incomplete == 1 { "" } else { "s" };
        return Err(Error::Ingest(format!("{incomplete} incomplete row{s}")));
    }
    if y.is_empty() {
        return Err(Error::Ingest(format!("{}: empty file", path.display())));
    }
    if !roles.intercept && rows[0].is_empty() {
        return Err(Error::Ingest("no covariates and no intercept".into()));
    }
    if roles.intercept {
        Dataset::new(y, z, rows)
    } else {
        Dataset::without_intercept(y, z, rows)
    }
}

/// Interpretation factors: `e^|γ|` on the treatment odds, and `e^|δ|` on
/// the outcome odds or `|δ|/σ` outcome standard deviations.
pub fn interpretation_factors(sp: SensitivityPoint, spec: &ModelSpec) -> (f64, f64) {
    let g = sp.gamma.abs().exp();
    let d = match spec.outcome {
        OutcomeFamily::Bernoulli => sp.delta.abs().exp(),
        OutcomeFamily::Gaussian { sigma } => sp.delta.abs() / sigma,
    };
    (g, d)
}

/// The sentence read off the sensitivity parameters.
pub fn interpretation(sp: SensitivityPoint, spec: &ModelSpec) -> String {
    let (g, d) = interpretation_factors(sp, spec);
    let outcome = match spec.outcome {
        OutcomeFamily::Bernoulli => format!("in their odds of the outcome by at most a factor of {d:.2}"),
        OutcomeFamily::Gaussian { .. } => format!("in their mean outcome by at most {d:.2} standard deviations"),
    };
    format!(
        "Units with the same observed covariates whose unmeasured confounder differs by one unit \
         may differ in their odds of receiving the treatment by at most a factor of {g:.2}, and {outcome}."
    )
}

fn percent(level: f64) -> String {
    let s = format!("{:.4}", level * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

/// Human-readable report for one grid point.
pub fn report(row: &SweepRow, level: f64, spec: &ModelSpec) -> String {
    let head = format!("(δ, γ) = ({:.2}, {:.2})", row.delta, row.gamma);
    let body = match &row.error {
        Some(e) => format!("{head}: fit failed: {e}."),
        None if !row.converged => format!("{head}: no root found; estimate {:.4} is not reliable.", row.beta_hat),
        None => format!(
            "{head}: treatment effect {:.4} (SE {:.4}), {} CI [{:.4}, {:.4}].",
            row.beta_hat,
            row.se,
            percent(level),
            row.ci_lo,
            row.ci_hi
        ),
    };
    format!("{body}\n{}\n", interpretation(row.point(), spec))
}

/// Stable JSON record of a single fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub schema: String,
    /// `semi` or `em`.
    pub method: String,
    pub n: usize,
    pub delta: f64,
    pub gamma: f64,
    pub beta_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub converged: bool,
    pub iterations: usize,
    pub theta: Theta,
    pub vcov: Vec<Vec<f64>>,
    /// Working prior (semi) or assumed `P(U = 1)` (em).
    pub prior: String,
    pub interpretation_gamma_factor: f64,
    pub interpretation_delta_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub influence: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik: Option<Vec<f64>>,
}

impl FitRecord {
    pub fn from_fit(f: &FitResult, prior: &PriorSpec, spec: &ModelSpec, influence: bool) -> Self {
        let (g, d) = interpretation_factors(f.sp, spec);
        Self {
            schema: FIT_SCHEMA.into(),
            method: "semi".into(),
            n: f.n(),
            delta: f.sp.delta,
            gamma: f.sp.gamma,
            beta_hat: f.beta_hat,
            se: f.beta_se,
            ci_lo: f.ci.0,
            ci_hi: f.ci.1,
            level: f.level,
            converged: f.converged,
            iterations: f.iterations,
            theta: f.theta_hat.clone(),
            vcov: f.vcov.row_iter().map(|r| r.iter().copied().collect()).collect(),
            prior: prior.to_string(),
            interpretation_gamma_factor: g,
            interpretation_delta_factor: d,
            influence: influence.then(|| f.beta_influence()),
            loglik: None,
        }
    }

    pub fn from_em(f: &EmFit, n: usize, spec: &ModelSpec) -> Self {
        let (g, d) = interpretation_factors(f.sp, spec);
        Self {
            schema: FIT_SCHEMA.into(),
            method: "em".into(),
            n,
            delta: f.sp.delta,
            gamma: f.sp.gamma,
            beta_hat: f.beta_hat,
            se: f.beta_se,
            ci_lo: f.ci.0,
            ci_hi: f.ci.1,
            level: f.level,
            converged: f.converged,
            iterations: f.iterations,
            theta: f.theta_hat.clone(),
            vcov: f.vcov.clone(),
            prior: format!("bernoulli:{}", f.p),
            interpretation_gamma_factor: g,
            interpretation_delta_factor: d,
            influence: None,
            loglik: Some(f.loglik.clone()),
        }
    }
}

/// CSV row of `sweep` and `band`.
#[derive(Debug, Clone, Serialize)]
struct GridRow {
    delta: f64,
    gamma: f64,
    beta_hat: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
    converged: bool,
    interpretation_gamma_factor: f64,
    interpretation_delta_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    c_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band_hi: Option<f64>,
    error: String,
}

impl GridRow {
    fn new(r: &SweepRow, spec: &ModelSpec) -> Self {
        let (g, d) = interpretation_factors(r.point(), spec);
        Self {
            delta: r.delta,
            gamma: r.gamma,
            beta_hat: r.beta_hat,
            se: r.se,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            converged: r.converged,
            interpretation_gamma_factor: g,
            interpretation_delta_factor: d,
            c_hat: None,
            band_lo: None,
            band_hi: None,
            error: r.error.clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct PoolRow {
    beta: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
    level: f64,
    within: f64,
    between: f64,
    total: f64,
    m: usize,
}

fn open_output(out: &OutputArgs) -> Result<Box<dyn Write>> {
    Ok(match &out.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &OutputArgs, value: &T) -> Result<()> {
    let mut w = open_output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(out: &OutputArgs, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(open_output(out)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_text(out: &OutputArgs, text: &str) -> Result<()> {
    let mut w = open_output(out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let (data, spec) = a.data.load()?;
    let sp = SensitivityPoint::new(a.delta, a.gamma)?;
    let f = crate::estimator::fit(&data, sp, &a.est.options()?, &spec, a.est.level)?;
    match a.format {
        Format::Text => write_text(&a.out, &report(&SweepRow::from_fit(&f), a.est.level, &spec)),
        Format::Csv => write_csv(&a.out, &[GridRow::new(&SweepRow::from_fit(&f), &spec)]),
        Format::Json => write_json(&a.out, &FitRecord::from_fit(&f, &a.est.prior, &spec, a.influence)),
    }
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let (data, spec) = a.data.load()?;
    let grid = a.grid.points()?;
    let rows = crate::estimator::sweep(&data, &grid, &a.est.options()?, &spec, a.est.level)?;
    match a.format {
        Format::Text => write_text(
            &a.out,
            &rows.iter().map(|r| report(r, a.est.level, &spec)).collect::<String>(),
        ),
        Format::Json => write_json(&a.out, &rows),
        Format::Csv => write_csv(&a.out, &rows.iter().map(|r| GridRow::new(r, &spec)).collect::<Vec<_>>()),
    }
}

fn run_band(a: &BandArgs) -> Result<()> {
    let (data, spec) = a.data.load()?;
    let grid = a.grid.points()?;
    let fits = sweep_fits(&data, &grid, &a.est.options()?, &spec, a.est.level)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let multiplier = if a.raw_scores {
        Multiplier::RawScore
    } else {
        Multiplier::Influence
    };
    let band = uniform_band_with(&fits, a.est.level, a.draws, a.seed, multiplier)?;
    let rows: Vec<GridRow> = fits
        .iter()
        .zip(&band.band)
        .map(|(f, (lo, hi))| GridRow {
            c_hat: Some(band.c_hat),
            band_lo: Some(*lo),
            band_hi: Some(*hi),
            ..GridRow::new(&SweepRow::from_fit(f), &spec)
        })
        .collect();
    match a.format {
        Format::Json => write_json(&a.out, &band),
        Format::Text => {
            let mut s = format!(
                "Uniform {} band over {} points: critical value {:.4} from {} draws (seed {}).\n",
                percent(a.est.level),
                fits.len(),
                band.c_hat,
                band.draws,
                band.seed
            );
            for (f, (lo, hi)) in fits.iter().zip(&band.band) {
                s.push_str(&report(&SweepRow::from_fit(f), a.est.level, &spec));
                s.push_str(&format!("Uniform band: [{lo:.4}, {hi:.4}].\n"));
            }
            write_text(&a.out, &s)
        }
        Format::Csv => write_csv(&a.out, &rows),
    }
}

fn run_em(a: &EmArgs) -> Result<()> {
    let (data, spec) = a.data.load()?;
    let mut opts = EmOptions::new(a.p)?;
    opts.max_iter = a.max_iter;
    let sp = SensitivityPoint::new(a.delta, a.gamma)?;
    let f = em_fit(&data, sp, &opts, &spec, a.level)?;
    write_json(&a.out, &FitRecord::from_em(&f, data.n(), &spec))
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let reps = a.reps.unwrap_or(if a.design == Table::Table1 { 500 } else { 200 });
    let cells = table_cells(a.design, a.n, reps, a.level, a.seed, a.alpha, a.meshes.as_deref());
    let mut rows = Vec::with_capacity(cells.len());
    for cfg in &cells {
        let m = run_study(cfg)?;
        rows.push(StudyRow::new(cfg, &m));
    }
    let mut w = open_output(&a.out)?;
    crate::simstudy::write_rows_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

pub fn read_fit_record(path: &Path) -> Result<FitRecord> {
    let file = File::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let rec: FitRecord = serde_json::from_reader(io::BufReader::new(file))
        .map_err(|e| Error::Ingest(format!("{}: not a fit record: {e}", path.display())))?;
    if rec.schema != FIT_SCHEMA {
        return Err(Error::Ingest(format!("{}: unknown schema {:?}", path.display(), rec.schema)));
    }
    Ok(rec)
}

fn run_pool(a: &PoolArgs) -> Result<()> {
    let est: Vec<(f64, f64)> = a
        .inputs
        .iter()
        .map(|p| read_fit_record(p).map(|r| (r.beta_hat, r.se)))
        .collect::<Result<_>>()?;
    let p = rubin_pool(&est, a.level)?;
    write_csv(
        &a.out,
        &[PoolRow {
            beta: p.beta,
            se: p.se,
            ci_lo: p.ci.0,
            ci_hi: p.ci.1,
            level: p.level,
            within: p.within,
            between: p.between,
            total: p.total,
            m: p.m,
        }],
    )
}

#[derive(Debug, Serialize)]
struct IdentifyRecord {
    delta: f64,
    gamma: f64,
    cells: [f64; 4],
    prior: String,
    alpha0: f64,
    beta0: f64,
    beta_z: f64,
}

fn run_identify(a: &IdentifyArgs) -> Result<()> {
    let cells = match (&a.cells, &a.data) {
        (Some(c), _) if c.len() == 4 => ObservedCells::from_counts([[c[0], c[1]], [c[2], c[3]]])?,
        (Some(c), _) => return Err(Error::InvalidInput(format!("--cells needs 4 values, got {}", c.len()))),
        (None, Some(path)) => {
            let roles = Roles {
                outcome: a.outcome.as_deref().unwrap_or_default(),
                treatment: a.treatment.as_deref().unwrap_or_default(),
                covariates: &[],
                binary_outcome: true,
                intercept: true,
            };
            ObservedCells::from_data(&ingest(path, &roles)?)?
        }
        (None, None) => return Err(Error::InvalidInput("give --cells or --data".into())),
    };
    let prior = make_prior(&a.prior)?;
    let id = identify(&cells, &prior, a.delta, a.gamma)?;
    write_json(
        &a.out,
        &IdentifyRecord {
            delta: a.delta,
            gamma: a.gamma,
            cells: [cells.get(0, 0), cells.get(0, 1), cells.get(1, 0), cells.get(1, 1)],
            prior: a.prior.to_string(),
            alpha0: id.alpha0,
            beta0: id.beta0,
            beta_z: id.beta_z,
        },
    )
}

fn run_tipping(a: &TippingArgs) -> Result<()> {
    let (data, spec) = a.data.load()?;
    let tp = tipping_point(&data, a.t_max, &a.est.options()?, &spec, a.est.level)?;
    write_json(&a.out, &tp)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Band(a) => run_band(a),
        Command::Em(a) => run_em(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Pool(a) => run_pool(a),
        Command::Identify(a) => run_identify(a),
        Command::Tipping(a) => run_tipping(a),
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code. Errors are reported on standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = threads_from_env().and_then(|threads| match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
            .install(|| run(&cli)),
        None => run(&cli),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}
