//! Efficient-score estimating equations for `θ = (λ, β, κ)` at a fixed
//! sensitivity point, with sandwich standard errors, grid sweeps and
//! tipping-point search.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fredholm::{efficient_score_obs, Solver, DEFAULT_ALPHA};
use crate::glm;
use crate::model::{Dataset, ModelSpec, OutcomeFamily, PriorKind, SensitivityPoint, Theta, WorkingPrior};
use crate::quadrature::{default_hermite, hermite, HermiteRule, DEFAULT_HERMITE_ORDER};
use crate::score::ScoreVector;

/// Jacobian condition number above which θ̂ is treated as unidentified.
pub const JACOBIAN_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Exact solve for discrete priors, Tikhonov for grids.
    Auto,
    Exact,
    Tikhonov,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// GLM fit at δ = γ = 0.
    Glm,
    Supplied(Theta),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub prior: WorkingPrior,
    pub alpha: f64,
    pub solver: SolverChoice,
    pub max_iter: usize,
    pub tol: f64,
    pub fd_step: f64,
    pub init: Init,
    /// Maximum step halvings per Newton iteration.
    pub damping: usize,
    pub hermite_order: usize,
}

impl FitOptions {
    pub fn new(prior: WorkingPrior) -> Self {
        Self {
            prior,
            alpha: DEFAULT_ALPHA,
            solver: SolverChoice::Auto,
            max_iter: 100,
            tol: 1e-8,
            fd_step: 1e-5,
            init: Init::Glm,
            damping: 20,
            hermite_order: DEFAULT_HERMITE_ORDER,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_solver(mut self, solver: SolverChoice) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn solver(&self) -> Solver {
        match (self.solver, self.prior.kind()) {
            (SolverChoice::Exact, _) | (SolverChoice::Auto, PriorKind::Discrete) => Solver::Exact,
            (SolverChoice::Tikhonov, _) | (SolverChoice::Auto, PriorKind::Grid { .. }) => {
                Solver::Tikhonov { alpha: self.alpha }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be >= 1".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidInput(format!("fd_step must be > 0, got {}", self.fd_step)));
        }
        if let Solver::Tikhonov { alpha } = self.solver() {
            if !(alpha > 0.0) {
                return Err(Error::InvalidInput(format!("alpha must be > 0, got {alpha}")));
            }
        }
        Ok(())
    }

    fn rule(&self) -> Result<HermiteRule> {
        if self.hermite_order == DEFAULT_HERMITE_ORDER {
            Ok(default_hermite().clone())
        } else {
            hermite(self.hermite_order)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub sp: SensitivityPoint,
    pub theta_hat: Theta,
    /// Sandwich covariance of θ̂.
    pub vcov: DMatrix<f64>,
    pub beta_hat: f64,
    pub beta_se: f64,
    pub ci: (f64, f64),
    pub level: f64,
    /// Per-observation efficient scores at θ̂ (n × q).
    pub scores: DMatrix<f64>,
    /// Per-observation influence values `−Ĵ⁻¹ Sᵢ` (n × q).
    pub influence: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_norm: f64,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    /// β column of the influence matrix.
    pub fn beta_influence(&self) -> Vec<f64> {
        let b = Theta::beta_index(self.theta_hat.p());
        self.influence.column(b).iter().copied().collect()
    }

    pub fn ci_covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }
}

/// Two-sided standard-normal critical value for a `level` interval.
pub fn normal_critical(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must be in (0, 1), got {level}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Efficient score of a single observation.
pub fn efficient_score(
    y: f64,
    z: u8,
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    opts: &FitOptions,
    spec: &ModelSpec,
) -> Result<ScoreVector> {
    let rule = opts.rule()?;
    efficient_score_obs(y, z, x, theta, sp, &opts.prior, spec, opts.solver(), &rule)
}

/// Evaluates every observation's efficient score. Rows are in data order and
/// the reduction is sequential, so results do not depend on the worker count.
struct Evaluator<'a> {
    data: &'a Dataset,
    sp: SensitivityPoint,
    prior: &'a WorkingPrior,
    spec: &'a ModelSpec,
    solver: Solver,
    rule: HermiteRule,
}

impl Evaluator<'_> {
    fn scores(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        let n = self.data.n();
        let q = theta.q();
        let rows: Vec<Result<ScoreVector>> = (0..n)
            .into_par_iter()
            .with_min_len(64)
            .map(|i| {
                efficient_score_obs(
                    self.data.y()[i],
                    self.data.z()[i],
                    self.data.row(i),
                    theta,
                    self.sp,
                    self.prior,
                    self.spec,
                    self.solver,
                    &self.rule,
                )
                .map_err(|e| e.at_observation(i))
            })
            .collect();
        let mut out = DMatrix::zeros(n, q);
        for (i, r) in rows.into_iter().enumerate() {
            let s = r?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite efficient score at observation {i}")));
            }
            out.row_mut(i).copy_from(&s.transpose());
        }
        Ok(out)
    }

    fn mean(&self, theta: &Theta) -> Result<DVector<f64>> {
        Ok(column_means(&self.scores(theta)?))
    }

    fn jacobian(&self, theta: &Theta, fd_step: f64) -> Result<DMatrix<f64>> {
        let v = theta.to_vec();
        let p = theta.p();
        let q = v.len();
        let mut jac = DMatrix::zeros(q, q);
        for j in 0..q {
            let h = fd_step * v[j].abs().max(1.0);
            let mut plus = v.clone();
            plus[j] += h;
            let mut minus = v.clone();
            minus[j] -= h;
            let gp = self.mean(&Theta::from_slice(p, &plus)?)?;
            let gm = self.mean(&Theta::from_slice(p, &minus)?)?;
            jac.set_column(j, &((gp - gm) / (2.0 * h)));
        }
        Ok(jac)
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.iter().sum::<f64>() / n))
}

/// Mean efficient score `G(θ) = n⁻¹ Σ S_eff,i(θ)`.
pub fn mean_efficient_score(
    data: &Dataset,
    theta: &Theta,
    sp: SensitivityPoint,
    opts: &FitOptions,
    spec: &ModelSpec,
) -> Result<DVector<f64>> {
    let ev = Evaluator {
        data,
        sp,
        prior: &opts.prior,
        spec,
        solver: opts.solver(),
        rule: opts.rule()?,
    };
    ev.mean(theta)
}

/// Per-observation efficient scores (n × q).
pub fn efficient_scores(
    data: &Dataset,
    theta: &Theta,
    sp: SensitivityPoint,
    opts: &FitOptions,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    let ev = Evaluator {
        data,
        sp,
        prior: &opts.prior,
        spec,
        solver: opts.solver(),
        rule: opts.rule()?,
    };
    ev.scores(theta)
}

/// Finite-difference Jacobian of the mean efficient score.
pub fn score_jacobian(
    data: &Dataset,
    theta: &Theta,
    sp: SensitivityPoint,
    opts: &FitOptions,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    let ev = Evaluator {
        data,
        sp,
        prior: &opts.prior,
        spec,
        solver: opts.solver(),
        rule: opts.rule()?,
    };
    ev.jacobian(theta, opts.fd_step)
}

pub(crate) fn design_with_treatment(data: &Dataset) -> DMatrix<f64> {
    let p = data.p();
    DMatrix::from_fn(data.n(), p + 1, |i, j| {
        if j < p {
            data.row(i)[j]
        } else {
            f64::from(data.z()[i])
        }
    })
}

fn check_nondegenerate(data: &Dataset) -> Result<()> {
    let treated = data.z().iter().filter(|&&z| z == 1).count();
    if treated == 0 || treated == data.n() {
        return Err(Error::InvalidInput("both treatment arms must be present".into()));
    }
    Ok(())
}

/// Outcome and propensity GLM fits at δ = γ = 0.
pub fn glm_init(data: &Dataset, spec: &ModelSpec) -> Result<Theta> {
    check_nondegenerate(data)?;
    data.check_family(spec)?;
    let n = data.n();
    let p = data.p();
    let ones = vec![1.0; n];
    let zeros = vec![0.0; n];
    let xz = design_with_treatment(data);
    let outcome = match spec.outcome {
        OutcomeFamily::Bernoulli => glm::logistic(&xz, data.y(), &ones, &zeros, None, 1e-13)?,
        OutcomeFamily::Gaussian { .. } => glm::gaussian(&xz, data.y(), &ones, &zeros)?,
    };
    let x = DMatrix::from_fn(n, p, |i, j| data.row(i)[j]);
    let zf: Vec<f64> = data.z().iter().map(|&z| f64::from(z)).collect();
    let prop = glm::logistic(&x, &zf, &ones, &zeros, None, 1e-13)?;
    Ok(Theta {
        lambda: outcome.coef[..p].to_vec(),
        beta: outcome.coef[p],
        kappa: prop.coef,
    })
}

fn invert_jacobian(jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = jac.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if !(min > 0.0) || !(max / min < JACOBIAN_CONDITION_LIMIT) || !max.is_finite() {
        return Err(Error::SingularJacobian);
    }
    jac.clone().try_inverse().ok_or(Error::SingularJacobian)
}

/// Sandwich covariance `n⁻¹ Ĵ⁻¹ M̂ Ĵ⁻ᵀ` with `M̂ = n⁻¹ Σ SᵢSᵢᵀ`.
pub fn sandwich_variance(scores: &DMatrix<f64>, jacobian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = scores.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("no scores".into()));
    }
    if jacobian.nrows() != scores.ncols() || jacobian.ncols() != scores.ncols() {
        return Err(Error::Dimension {
            what: "jacobian",
            expected: scores.ncols(),
            got: jacobian.nrows(),
        });
    }
    let jinv = invert_jacobian(jacobian)?;
    Ok(sandwich_from_inverse(scores, &jinv))
}

fn sandwich_from_inverse(scores: &DMatrix<f64>, jinv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = scores.nrows() as f64;
    let m = scores.tr_mul(scores) / n;
    let v = jinv * m * jinv.transpose() / n;
    (&v + v.transpose()) * 0.5
}

/// Solves `G(θ) = 0` by damped Newton with a finite-difference Jacobian.
pub fn fit(
    data: &Dataset,
    sp: SensitivityPoint,
    opts: &FitOptions,
    spec: &ModelSpec,
    level: f64,
) -> Result<FitResult> {
    opts.validate()?;
    let z_crit = normal_critical(level)?;
    check_nondegenerate(data)?;
    data.check_family(spec)?;
    let p = data.p();
    let mut theta = match &opts.init {
        Init::Glm => glm_init(data, spec)?,
        Init::Supplied(t) => {
            if t.p() != p || t.kappa.len() != p {
                return Err(Error::Dimension {
                    what: "initial theta",
                    expected: 2 * p + 1,
                    got: t.q(),
                });
            }
            t.clone()
        }
    };
    let ev = Evaluator {
        data,
        sp,
        prior: &opts.prior,
        spec,
        solver: opts.solver(),
        rule: opts.rule()?,
    };
    let mut scores = ev.scores(&theta)?;
    let mut g = column_means(&scores);
    let mut iterations = 0;
    let mut converged = g.amax() <= opts.tol;
    let mut jac: Option<(Vec<f64>, DMatrix<f64>)> = None;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let j = ev.jacobian(&theta, opts.fd_step)?;
        let step = match j.clone().lu().solve(&g) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Err(Error::SingularJacobian),
        };
        let current = g.norm();
        let base = theta.to_vec();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.damping {
            let cand: Vec<f64> = base.iter().zip(step.iter()).map(|(b, s)| b - t * s).collect();
            let cand = Theta::from_slice(p, &cand)?;
            if let Ok(s) = ev.scores(&cand) {
                let gc = column_means(&s);
                if gc.norm() < current {
                    accepted = Some((cand, s, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        jac = Some((base.clone(), j));
        match accepted {
            Some((cand, s, gc)) => {
                theta = cand;
                scores = s;
                g = gc;
                converged = g.amax() <= opts.tol;
            }
            None => break,
        }
    }
    let jacobian = match jac {
        Some((at, j)) if at == theta.to_vec() => j,
        _ => ev.jacobian(&theta, opts.fd_step)?,
    };
    let jinv = invert_jacobian(&jacobian)?;
    let vcov = sandwich_from_inverse(&scores, &jinv);
    let influence = -(&scores * jinv.transpose());
    let b = Theta::beta_index(p);
    let beta_hat = theta.beta;
    let beta_se = vcov[(b, b)].max(0.0).sqrt();
    Ok(FitResult {
        sp,
        vcov,
        beta_hat,
        beta_se,
        ci: (beta_hat - z_crit * beta_se, beta_hat + z_crit * beta_se),
        level,
        scores,
        influence,
        jacobian,
        iterations,
        converged,
        final_norm: g.amax(),
        theta_hat: theta,
    })
}

/// One row of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub gamma: f64,
    pub beta_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_fit(fit: &FitResult) -> Self {
        Self {
            delta: fit.sp.delta,
            gamma: fit.sp.gamma,
            beta_hat: fit.beta_hat,
            se: fit.beta_se,
            ci_lo: fit.ci.0,
            ci_hi: fit.ci.1,
            converged: fit.converged,
            error: None,
        }
    }

    pub fn failed(sp: SensitivityPoint, err: &Error) -> Self {
        Self {
            delta: sp.delta,
            gamma: sp.gamma,
            beta_hat: f64::NAN,
            se: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
            converged: false,
            error: Some(err.to_string()),
        }
    }

    pub fn point(&self) -> SensitivityPoint {
        SensitivityPoint {
            delta: self.delta,
            gamma: self.gamma,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }
}

/// Fits every grid point in order, warm-starting each from the nearest
/// previously converged point.
pub fn sweep_fits(
    data: &Dataset,
    grid: &[SensitivityPoint],
    opts: &FitOptions,
    spec: &ModelSpec,
    level: f64,
) -> Vec<Result<FitResult>> {
    let mut solved: Vec<(SensitivityPoint, Theta)> = Vec::new();
    let mut out = Vec::with_capacity(grid.len());
    for &sp in grid {
        let warm = solved
            .iter()
            .min_by(|a, b| dist(a.0, sp).total_cmp(&dist(b.0, sp)))
            .map(|(_, t)| t.clone());
        let local = match warm {
            Some(t) => opts.clone().with_init(Init::Supplied(t)),
            None => opts.clone(),
        };
        let res = fit(data, sp, &local, spec, level);
        if let Ok(f) = &res {
            if f.converged {
                solved.push((sp, f.theta_hat.clone()));
            }
        }
        out.push(res);
    }
    out
}

fn dist(a: SensitivityPoint, b: SensitivityPoint) -> f64 {
    (a.delta - b.delta).hypot(a.gamma - b.gamma)
}

/// Sweep table; per-point failures are recorded in their row.
pub fn sweep(
    data: &Dataset,
    grid: &[SensitivityPoint],
    opts: &FitOptions,
    spec: &ModelSpec,
    level: f64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("sensitivity grid is empty".into()));
    }
    Ok(sweep_fits(data, grid, opts, spec, level)
        .iter()
        .zip(grid)
        .map(|(r, &sp)| match r {
            Ok(f) => SweepRow::from_fit(f),
            Err(e) => SweepRow::failed(sp, e),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TippingPoint {
    /// Smallest `t` on `δ = γ = t` at which the interval covers zero, to
    /// within the resolution; `None` if it never does up to `t_max`.
    pub t_star: Option<f64>,
    /// Last point whose interval excludes zero.
    pub below: Option<SweepRow>,
    /// First point whose interval covers zero.
    pub above: Option<SweepRow>,
}

pub const TIPPING_RESOLUTION: f64 = 0.01;

/// Bisection on the diagonal path `δ = γ = t`, `t ∈ [0, t_max]`.
pub fn tipping_point(
    data: &Dataset,
    t_max: f64,
    opts: &FitOptions,
    spec: &ModelSpec,
    level: f64,
) -> Result<TippingPoint> {
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidInput(format!("t_max must be > 0, got {t_max}")));
    }
    let run = |t: f64, init: Option<&Theta>| -> Result<FitResult> {
        let local = match init {
            Some(th) => opts.clone().with_init(Init::Supplied(th.clone())),
            None => opts.clone(),
        };
        match fit(data, SensitivityPoint::new(t, t)?, &local, spec, level) {
            Ok(f) if f.converged => Ok(f),
            _ => Err(Error::PathFailure(vec![t])),
        }
    };
    let start = run(0.0, None)?;
    if start.ci_covers(0.0) {
        return Ok(TippingPoint {
            t_star: Some(0.0),
            below: None,
            above: Some(SweepRow::from_fit(&start)),
        });
    }
    let end = run(t_max, Some(&start.theta_hat))?;
    if !end.ci_covers(0.0) {
        return Ok(TippingPoint {
            t_star: None,
            below: Some(SweepRow::from_fit(&end)),
            above: None,
        });
    }
    let (mut lo, mut hi) = (start, end);
    let (mut tl, mut th) = (0.0, t_max);
    while th - tl > TIPPING_RESOLUTION {
        let mid = 0.5 * (tl + th);
        let warm = if mid - tl <= th - mid { &lo.theta_hat } else { &hi.theta_hat };
        let f = run(mid, Some(warm))?;
        if f.ci_covers(0.0) {
            hi = f;
            th = mid;
        } else {
            lo = f;
            tl = mid;
        }
    }
    Ok(TippingPoint {
        t_star: Some(th),
        below: Some(SweepRow::from_fit(&lo)),
        above: Some(SweepRow::from_fit(&hi)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expit, make_prior, PriorSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simulate(n: usize, seed: u64, beta: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut z = Vec::new();
        let mut rows = Vec::new();
        // Binary U ~ Bernoulli(0.2) with true (δ, γ) = (1.0, 1.5).
        for _ in 0..n {
            let x1: f64 = rng.random();
            let x2: f64 = rng.random();
            let u = f64::from(u8::from(rng.random::<f64>() < 0.2));
            let zi = u8::from(rng.random::<f64>() < expit(3.0 * x1 - 3.0 * x2 + 1.5 * u));
            let yi = f64::from(u8::from(rng.random::<f64>() < expit(4.0 * x1 - 4.0 * x2 + beta * f64::from(zi) + u)));
            y.push(yi);
            z.push(zi);
            rows.push(vec![x1, x2]);
        }
        Dataset::without_intercept(y, z, rows).unwrap()
    }

    fn bern_opts() -> FitOptions {
        FitOptions::new(make_prior(&PriorSpec::Bernoulli(0.2)).unwrap())
    }

    #[test]
    fn null_point_returns_glm_fit() {
        let data = simulate(300, 3, 1.0);
        let spec = ModelSpec::bernoulli();
        let f = fit(&data, SensitivityPoint::NONE, &bern_opts(), &spec, 0.95).unwrap();
        let init = glm_init(&data, &spec).unwrap();
        assert!(f.converged);
        assert_relative_eq!(f.beta_hat, init.beta, epsilon = 1e-10);
        let z = normal_critical(0.95).unwrap();
        assert_relative_eq!(f.ci.0, f.beta_hat - z * f.beta_se, epsilon = 1e-12);
        assert_relative_eq!(f.ci.1, f.beta_hat + z * f.beta_se, epsilon = 1e-12);
    }

    #[test]
    fn converged_fit_satisfies_invariants() {
        let data = simulate(400, 4, 1.5);
        let spec = ModelSpec::bernoulli();
        let sp = SensitivityPoint::new(1.0, 1.5).unwrap();
        let opts = bern_opts();
        let f = fit(&data, sp, &opts, &spec, 0.9).unwrap();
        assert!(f.converged, "norm {} it {} beta {}", f.final_norm, f.iterations, f.beta_hat);
        assert!(f.final_norm <= opts.tol);
        let g = mean_efficient_score(&data, &f.theta_hat, sp, &opts, &spec).unwrap();
        assert!(g.amax() <= opts.tol);
        assert!((&f.vcov - f.vcov.transpose()).amax() < 1e-10);
        let eig = f.vcov.clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() > -1e-10);
        let jinv = f.jacobian.clone().try_inverse().unwrap();
        let mean_inf = column_means(&f.influence);
        assert!(mean_inf.amax() <= opts.tol * jinv.abs().row_sum().max());
    }

    #[test]
    fn efficient_score_at_null_is_glm_score() {
        let spec = ModelSpec::bernoulli();
        let th = Theta {
            lambda: vec![0.3, -0.2],
            beta: 0.8,
            kappa: vec![0.1, 0.4],
        };
        let x = [1.0, 0.6];
        let s = efficient_score(1.0, 1, &x, &th, SensitivityPoint::NONE, &bern_opts(), &spec).unwrap();
        let mu1 = expit(0.3 - 0.12 + 0.8);
        let mu2 = expit(0.1 + 0.24);
        let expect = [(1.0 - mu1), (1.0 - mu1) * 0.6, 1.0 - mu1, 1.0 - mu2, (1.0 - mu2) * 0.6];
        for (a, b) in s.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn efficient_score_orthogonal_by_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = ModelSpec::bernoulli();
        let opts = bern_opts();
        for _ in 0..5 {
            let th = Theta {
                lambda: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                beta: rng.random_range(-1.0..2.0),
                kappa: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            };
            let sp = SensitivityPoint::new(rng.random_range(0.5..4.0), rng.random_range(0.5..4.0)).unwrap();
            let x = [1.0, rng.random_range(0.0..1.0)];
            for &u in opts.prior.support() {
                let mut acc = DVector::zeros(5);
                for y in [0.0, 1.0] {
                    for z in [0u8, 1] {
                        let f = crate::model::joint_density(y, z, &x, u, &th, sp, &spec).unwrap();
                        acc += efficient_score(y, z, &x, &th, sp, &opts, &spec).unwrap() * f;
                    }
                }
                assert!(acc.amax() < 1e-10, "{acc}");
            }
        }
    }

    #[test]
    fn sandwich_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let normal = rand_distr::StandardNormal;
        let scores = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(normal));
        let v = sandwich_variance(&scores, &DMatrix::identity(1, 1)).unwrap();
        assert!((v[(0, 0)] * n as f64 - 1.0).abs() < 0.1);
        let v3 = sandwich_variance(&scores, &(DMatrix::identity(1, 1) * 3.0)).unwrap();
        assert_relative_eq!(v3[(0, 0)], v[(0, 0)] / 9.0, max_relative = 1e-12);
        assert!(matches!(
            sandwich_variance(&scores, &DMatrix::zeros(1, 1)),
            Err(Error::SingularJacobian)
        ));
    }

    #[test]
    fn sweep_warm_matches_cold_and_keeps_order() {
        let data = simulate(300, 21, 1.5);
        let spec = ModelSpec::bernoulli();
        let opts = bern_opts();
        let grid: Vec<SensitivityPoint> = [(0.0, 0.0), (1.0, 1.0), (0.5, 0.5), (2.0, 1.0)]
            .iter()
            .map(|&(d, g)| SensitivityPoint::new(d, g).unwrap())
            .collect();
        let rows = sweep(&data, &grid, &opts, &spec, 0.95).unwrap();
        for (row, sp) in rows.iter().zip(&grid) {
            assert_eq!(row.point(), *sp);
            let cold = fit(&data, *sp, &opts, &spec, 0.95).unwrap();
            assert!((cold.beta_hat - row.beta_hat).abs() < 1e-6);
        }
        assert!(sweep(&data, &[], &opts, &spec, 0.95).is_err());
    }

    #[test]
    fn tipping_point_trivial_cases() {
        let spec = ModelSpec::bernoulli();
        let opts = bern_opts();
        let weak = simulate(200, 5, 0.0);
        let f0 = fit(&weak, SensitivityPoint::NONE, &opts, &spec, 0.95).unwrap();
        if f0.ci_covers(0.0) {
            let tp = tipping_point(&weak, 2.0, &opts, &spec, 0.95).unwrap();
            assert_eq!(tp.t_star, Some(0.0));
        }
        let strong = simulate(800, 6, 3.0);
        let tp = tipping_point(&strong, 0.2, &opts, &spec, 0.95).unwrap();
        assert_eq!(tp.t_star, None);
    }

    #[test]
    fn invalid_options_rejected() {
        let data = simulate(100, 1, 1.0);
        let spec = ModelSpec::bernoulli();
        let mut opts = bern_opts();
        opts.tol = 0.0;
        assert!(fit(&data, SensitivityPoint::NONE, &opts, &spec, 0.95).is_err());
        assert!(fit(&data, SensitivityPoint::NONE, &bern_opts(), &spec, 1.5).is_err());
    }
}
