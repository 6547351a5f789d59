//! Per-observation Fredholm equation for the correction function `a(u, x)`.
//!
//! With `E[p, j]` the quadrature weight of `(y, z)` point `p` under
//! `f(· | x, u_j)` and `P[p, i]` the posterior weight of `u_i` at that point,
//! the kernel is `K = h⁻¹ Pᵀ E` and the discretized operator is
//! `A = h Kᵀ W = Eᵀ P W`. The forcing is `b = Eᵀ S_obs`.

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    dot, expit, log_density_z_raw, ModelSpec, OutcomeFamily, SensitivityPoint, Theta,
    WorkingPrior,
};
use crate::quadrature::{default_hermite, HermiteRule};
use crate::score::{log_sum_exp, posterior_residuals, posterior_weights, stack_score, ScoreVector};

/// Condition-number ceiling for [`solve_exact`].
pub const CONDITION_LIMIT: f64 = 1e10;
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Discretized system `h Kᵀ W a = b` at one covariate value.
#[derive(Debug, Clone, PartialEq)]
pub struct FredholmSystem {
    pub grid: Vec<f64>,
    pub kernel: DMatrix<f64>,
    pub quad_weights: Vec<f64>,
    pub forcing: DMatrix<f64>,
    pub mesh: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Exact,
    Tikhonov,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionFunction {
    /// Row `i` holds `a(u_i, x)` for every score component.
    pub a: DMatrix<f64>,
    pub residual_norm: f64,
    pub method: SolveMethod,
}

/// Solver used inside the efficient score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Solver {
    Exact,
    Tikhonov { alpha: f64 },
}

impl Solver {
    fn solve(&self, op: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match *self {
            Solver::Exact => exact_solve(op, rhs),
            Solver::Tikhonov { alpha } => tikhonov_solve(op, rhs, alpha),
        }
    }
}

impl FredholmSystem {
    /// Assembles a system from explicit parts, e.g. a planted kernel.
    pub fn new(
        grid: Vec<f64>,
        kernel: DMatrix<f64>,
        quad_weights: Vec<f64>,
        forcing: DMatrix<f64>,
        mesh: f64,
        alpha: f64,
    ) -> Result<Self> {
        let k = grid.len();
        if kernel.shape() != (k, k) {
            return Err(Error::Dimension {
                what: "kernel",
                expected: k,
                got: kernel.nrows(),
            });
        }
        if quad_weights.len() != k {
            return Err(Error::Dimension {
                what: "quadrature weights",
                expected: k,
                got: quad_weights.len(),
            });
        }
        if forcing.nrows() != k {
            return Err(Error::GridMismatch {
                expected: k,
                got: forcing.nrows(),
            });
        }
        if !(alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(mesh > 0.0) {
            return Err(Error::InvalidInput(format!("mesh must be > 0, got {mesh}")));
        }
        Ok(Self {
            grid,
            kernel,
            quad_weights,
            forcing,
            mesh,
            alpha,
        })
    }

    /// `A = h Kᵀ W`.
    pub fn operator(&self) -> DMatrix<f64> {
        let mut a = self.kernel.transpose() * self.mesh;
        for (i, w) in self.quad_weights.iter().enumerate() {
            a.column_mut(i).scale_mut(*w);
        }
        a
    }

    pub fn residual(&self, a: &DMatrix<f64>) -> f64 {
        (self.operator() * a - &self.forcing).norm()
    }
}

/// Quadrature of the `(y, z)` integral at fixed `x`, shared by kernel and
/// forcing assembly.
pub(crate) struct LocalSystem {
    /// `E[p, j]`: weight of point `p` under `f(· | x, u_j)`.
    e: DMatrix<f64>,
    /// Posterior weights of the support at each point.
    post: DMatrix<f64>,
    /// Posterior residual factors `(g₁, g₁·z, g₃)` per point.
    g: DMatrix<f64>,
    /// `M = Eᵀ P`, so `M[j, i] = E{post_i | u_j}`.
    gram: DMatrix<f64>,
}

impl LocalSystem {
    pub(crate) fn assemble(
        x: &[f64],
        theta: &Theta,
        sp: SensitivityPoint,
        prior: &WorkingPrior,
        spec: &ModelSpec,
        rule: &HermiteRule,
    ) -> Result<Self> {
        // Dimension validation happens once here.
        crate::model::eta_outcome(theta, x, 0, 0.0, sp)?;
        let support = prior.support();
        let k1 = support.len();
        let base1 = dot(&theta.lambda, x);
        let base2 = dot(&theta.kappa, x);
        let log_pi: Vec<f64> = prior.weights().iter().map(|w| w.ln()).collect();
        let log_fz: [Vec<f64>; 2] = [0u8, 1].map(|z| {
            support
                .iter()
                .map(|&u| log_density_z_raw(z, base2 + sp.gamma * u))
                .collect()
        });

        let mut points: Vec<(f64, u8)> = Vec::new();
        let mut e_rows: Vec<(usize, f64)> = Vec::new();
        match spec.outcome {
            OutcomeFamily::Bernoulli => {
                for z in [0u8, 1] {
                    for y in [0.0, 1.0] {
                        points.push((y, z));
                    }
                }
            }
            OutcomeFamily::Gaussian { sigma } => {
                let s = std::f64::consts::SQRT_2 * sigma;
                let norm = std::f64::consts::PI.sqrt();
                for (j, &uj) in support.iter().enumerate() {
                    for z in [0u8, 1] {
                        let eta1 = base1 + theta.beta * f64::from(z) + sp.delta * uj;
                        let fz = log_fz[z as usize][j].exp();
                        for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                            points.push((eta1 + s * t, z));
                            e_rows.push((j, fz * w / norm));
                        }
                    }
                }
            }
        }

        let np = points.len();
        let mut e = DMatrix::zeros(np, k1);
        let mut post = DMatrix::zeros(np, k1);
        let mut g = DMatrix::zeros(np, 3);
        let mut logf = vec![0.0; k1];
        let mut terms = vec![0.0; k1];
        let scale = spec.score_scale();
        for (pidx, &(y, z)) in points.iter().enumerate() {
            let zf = f64::from(z);
            for k in 0..k1 {
                let eta1 = base1 + theta.beta * zf + sp.delta * support[k];
                logf[k] = spec.log_density_y_raw(y, eta1) + log_fz[z as usize][k];
                terms[k] = log_pi[k] + logf[k];
            }
            let lse = log_sum_exp(&terms);
            if !lse.is_finite() {
                return Err(Error::DegenerateLikelihood);
            }
            let mut r1 = 0.0;
            let mut r3 = 0.0;
            for k in 0..k1 {
                let w = (terms[k] - lse).exp();
                post[(pidx, k)] = w;
                let u = support[k];
                r1 += w * (y - spec.mean(base1 + theta.beta * zf + sp.delta * u));
                r3 += w * (zf - expit(base2 + sp.gamma * u));
            }
            r1 *= scale;
            g[(pidx, 0)] = r1;
            g[(pidx, 1)] = r1 * zf;
            g[(pidx, 2)] = r3;
            match spec.outcome {
                OutcomeFamily::Bernoulli => {
                    for k in 0..k1 {
                        e[(pidx, k)] = logf[k].exp();
                    }
                }
                OutcomeFamily::Gaussian { .. } => {
                    let (j, w) = e_rows[pidx];
                    e[(pidx, j)] = w;
                }
            }
        }
        let mut gram = e.tr_mul(&post);
        if matches!(spec.outcome, OutcomeFamily::Gaussian { .. }) {
            // Column j was integrated with nodes centred on u_j, so
            // M[j, i] / π_i approximates a symmetric integral only up to
            // quadrature error. Averaging the two placements keeps the
            // discrete operator self-adjoint.
            let pi = prior.weights();
            for i in 0..k1 {
                for j in 0..i {
                    let sym = 0.5 * (gram[(j, i)] / pi[i] + gram[(i, j)] / pi[j]);
                    gram[(j, i)] = pi[i] * sym;
                    gram[(i, j)] = pi[j] * sym;
                }
            }
        }
        Ok(Self {
            e,
            post,
            g,
            gram,
        })
    }

    /// `K = h⁻¹ Mᵀ`.
    fn kernel(&self, mesh: f64) -> DMatrix<f64> {
        self.gram.transpose() / mesh
    }

    /// `A = M W`.
    fn operator(&self, quad_weights: &[f64]) -> DMatrix<f64> {
        let mut a = self.gram.clone();
        for (i, w) in quad_weights.iter().enumerate() {
            a.column_mut(i).scale_mut(*w);
        }
        a
    }

    /// Forcing in the reduced `(g₁, g₁·z, g₃)` basis.
    fn reduced_forcing(&self) -> DMatrix<f64> {
        self.e.tr_mul(&self.g)
    }

    fn full_forcing(&self, x: &[f64]) -> DMatrix<f64> {
        expand_columns(&self.reduced_forcing(), x)
    }

    #[cfg(test)]
    fn point_count(&self) -> usize {
        self.e.nrows()
    }
}

/// Expands a 3-column matrix in the `(g₁, g₁·z, g₃)` basis to the full
/// `(λ, β, κ)` layout.
fn expand_columns(m: &DMatrix<f64>, x: &[f64]) -> DMatrix<f64> {
    let p = x.len();
    let mut out = DMatrix::zeros(m.nrows(), 2 * p + 1);
    for j in 0..p {
        out.column_mut(j).axpy(x[j], &m.column(0), 0.0);
        out.column_mut(p + 1 + j).axpy(x[j], &m.column(2), 0.0);
    }
    out.column_mut(p).copy_from(&m.column(1));
    out
}

pub fn build_kernel(
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    Ok(LocalSystem::assemble(x, theta, sp, prior, spec, default_hermite())?.kernel(prior.mesh()))
}

pub fn build_forcing(
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    Ok(LocalSystem::assemble(x, theta, sp, prior, spec, default_hermite())?.full_forcing(x))
}

#[allow(clippy::too_many_arguments)]
pub fn build_system(
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
    alpha: f64,
    rule: &HermiteRule,
) -> Result<FredholmSystem> {
    let local = LocalSystem::assemble(x, theta, sp, prior, spec, rule)?;
    FredholmSystem::new(
        prior.support().to_vec(),
        local.kernel(prior.mesh()),
        prior.quadrature_weights(),
        local.full_forcing(x),
        prior.mesh(),
        alpha,
    )
}

fn condition(op: &DMatrix<f64>) -> f64 {
    let sv = op.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn exact_solve(op: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition(op);
    if !(cond < CONDITION_LIMIT) {
        return Err(Error::IllPosed { condition: cond });
    }
    op.clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::IllPosed { condition: cond })
}

fn tikhonov_solve(op: &DMatrix<f64>, rhs: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("tikhonov alpha must be > 0, got {alpha}")));
    }
    let n = op.ncols();
    let normal = op.tr_mul(op) + DMatrix::identity(n, n) * alpha;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Numerical("Tikhonov normal matrix not positive definite".into()))?;
    Ok(chol.solve(&op.tr_mul(rhs)))
}

/// LU solve of `h Kᵀ W a = b`, refusing when the condition estimate reaches
/// [`CONDITION_LIMIT`].
pub fn solve_exact(system: &FredholmSystem) -> Result<CorrectionFunction> {
    let a = exact_solve(&system.operator(), &system.forcing)?;
    Ok(CorrectionFunction {
        residual_norm: system.residual(&a),
        a,
        method: SolveMethod::Exact,
    })
}

/// Ridge solution `(AᵀA + αI)⁻¹Aᵀb`.
pub fn solve_tikhonov(system: &FredholmSystem) -> Result<CorrectionFunction> {
    let a = tikhonov_solve(&system.operator(), &system.forcing, system.alpha)?;
    Ok(CorrectionFunction {
        residual_norm: system.residual(&a),
        a,
        method: SolveMethod::Tikhonov,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    /// Singular values of `h Kᵀ W`, descending.
    pub singular_values: Vec<f64>,
    pub condition: f64,
    /// Share of `‖b‖²` carried by singular directions with `σᵢ > √α`.
    pub capture_fraction: f64,
}

pub fn picard_diagnostics(system: &FredholmSystem) -> PicardReport {
    let op = system.operator();
    let svd = SVD::new(op, true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let max = singular_values.first().copied().unwrap_or(0.0);
    let min = singular_values.last().copied().unwrap_or(0.0);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let threshold = system.alpha.sqrt();
    let total = system.forcing.norm_squared();
    let capture_fraction = if total == 0.0 {
        1.0
    } else {
        let proj = u.tr_mul(&system.forcing);
        let captured: f64 = (0..proj.nrows())
            .filter(|&i| svd.singular_values[i] > threshold)
            .map(|i| proj.row(i).norm_squared())
            .fold(0.0, |s, v| s + v);
        (captured / total).min(1.0)
    };
    PicardReport {
        singular_values,
        condition,
        capture_fraction,
    }
}

/// `E*[a(U, x) | x, z, y]` under the working posterior.
#[allow(clippy::too_many_arguments)]
pub fn correction_expectation(
    a: &CorrectionFunction,
    y: f64,
    z: u8,
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
) -> Result<ScoreVector> {
    if a.a.nrows() != prior.len() {
        return Err(Error::GridMismatch {
            expected: prior.len(),
            got: a.a.nrows(),
        });
    }
    let w = DVector::from_vec(posterior_weights(y, z, x, theta, sp, prior, spec)?);
    Ok(a.a.tr_mul(&w))
}

/// Efficient score of one observation, solving only the three reduced
/// right-hand sides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn efficient_score_obs(
    y: f64,
    z: u8,
    x: &[f64],
    theta: &Theta,
    sp: SensitivityPoint,
    prior: &WorkingPrior,
    spec: &ModelSpec,
    solver: Solver,
    rule: &HermiteRule,
) -> Result<ScoreVector> {
    let post = posterior_weights(y, z, x, theta, sp, prior, spec)?;
    let (r1, r2) = posterior_residuals(y, z, x, theta, sp, prior, spec, &post);
    if sp.is_null() {
        return Ok(stack_score(x, z, r1, r2));
    }
    let local = LocalSystem::assemble(x, theta, sp, prior, spec, rule)?;
    let op = local.operator(&prior.quadrature_weights());
    let a3 = solver.solve(&op, &local.reduced_forcing())?;
    let c = a3.tr_mul(&DVector::from_vec(post));
    let p = x.len();
    let mut s = DVector::zeros(2 * p + 1);
    for j in 0..p {
        s[j] = (r1 - c[0]) * x[j];
        s[p + 1 + j] = (r2 - c[2]) * x[j];
    }
    s[p] = r1 * f64::from(z) - c[1];
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{joint_density, make_prior, PriorSpec};
    use crate::quadrature::hermite;
    use crate::score::{full_score, istar, observed_score};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn theta() -> Theta {
        Theta {
            lambda: vec![-0.4, 1.2],
            beta: 1.5,
            kappa: vec![0.2, -0.9],
        }
    }

    fn bern() -> WorkingPrior {
        make_prior(&PriorSpec::Bernoulli(0.2)).unwrap()
    }

    fn grid() -> WorkingPrior {
        make_prior(&PriorSpec::Grid {
            lo: 0.0,
            hi: 1.0,
            mesh: 0.1,
        })
        .unwrap()
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Theta, [f64; 2], SensitivityPoint) {
        let th = Theta {
            lambda: vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            beta: rng.random_range(-2.0..2.0),
            kappa: vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
        };
        let x = [1.0, rng.random_range(0.0..1.0)];
        let sp = SensitivityPoint::new(rng.random_range(0.5..5.0), rng.random_range(0.5..5.0))
            .unwrap();
        (th, x, sp)
    }

    #[test]
    fn null_kernel_columns_equal_prior_density() {
        let spec = ModelSpec::bernoulli();
        for prior in [bern(), grid()] {
            let k = build_kernel(&[1.0, 0.3], &theta(), SensitivityPoint::NONE, &prior, &spec)
                .unwrap();
            for i in 0..prior.len() {
                for j in 0..prior.len() {
                    assert_relative_eq!(k[(i, j)], prior.kernel_mass(i), epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn kernel_matches_four_cell_enumeration() {
        let spec = ModelSpec::bernoulli();
        let prior = bern();
        let sp = SensitivityPoint::new(2.0, 3.0).unwrap();
        let x = [1.0, 0.6];
        let th = theta();
        let k = build_kernel(&x, &th, sp, &prior, &spec).unwrap();
        for (i, &ui) in prior.support().iter().enumerate() {
            for (j, &uj) in prior.support().iter().enumerate() {
                let mut s = 0.0;
                for y in [0.0, 1.0] {
                    for z in [0u8, 1] {
                        let fi = joint_density(y, z, &x, ui, &th, sp, &spec).unwrap();
                        let fj = joint_density(y, z, &x, uj, &th, sp, &spec).unwrap();
                        s += fi * fj / istar(y, z, &x, &th, sp, &prior, &spec).unwrap();
                    }
                }
                assert_relative_eq!(k[(i, j)], prior.weights()[i] * s, epsilon = 1e-14);
            }
        }
    }

    fn max_asymmetry(k: &DMatrix<f64>, prior: &WorkingPrior) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..prior.len() {
            for j in 0..prior.len() {
                let a = k[(i, j)] / prior.kernel_mass(i);
                let b = k[(j, i)] / prior.kernel_mass(j);
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    #[test]
    fn kernel_scaled_symmetry() {
        let x = [1.0, 0.4];
        for sp in [(1.5, 2.0), (4.0, 4.0), (-2.0, 3.0)] {
            let sp = SensitivityPoint::new(sp.0, sp.1).unwrap();
            for spec in [ModelSpec::bernoulli(), ModelSpec::gaussian(1.0).unwrap()] {
                for prior in [grid(), bern()] {
                    let k = build_kernel(&x, &theta(), sp, &prior, &spec).unwrap();
                    assert!(max_asymmetry(&k, &prior) < 1e-12, "{spec:?} {sp}");
                }
            }
        }
    }

    #[test]
    fn hermite_order_doubling_is_stable() {
        let spec = ModelSpec::gaussian(1.0).unwrap();
        let sp = SensitivityPoint::new(4.0, 2.0).unwrap();
        let th = Theta {
            lambda: vec![0.0, 1.0, 1.0],
            beta: 2.0,
            kappa: vec![0.0, 2.0, -2.0],
        };
        let prior = grid();
        let order = crate::quadrature::DEFAULT_HERMITE_ORDER;
        for x in [[1.0, 0.3, 0.8], [1.0, 0.9, 0.1], [1.0, 0.5, 0.5]] {
            let k1 = build_system(&x, &th, sp, &prior, &spec, 0.1, &hermite(order).unwrap()).unwrap();
            let k2 = build_system(&x, &th, sp, &prior, &spec, 0.1, &hermite(2 * order).unwrap()).unwrap();
            assert!((k1.kernel - k2.kernel).amax() < 1e-8);
        }
    }

    #[test]
    fn forcing_vanishes_at_null() {
        let spec = ModelSpec::bernoulli();
        let b = build_forcing(&[1.0, 0.2], &theta(), SensitivityPoint::NONE, &grid(), &spec).unwrap();
        assert!(b.amax() < 1e-15);
    }

    #[test]
    fn forcing_point_mass_enumeration() {
        let spec = ModelSpec::bernoulli();
        let sp = SensitivityPoint::new(1.0, -2.0).unwrap();
        let x = [1.0, 0.5];
        let th = theta();
        let prior = WorkingPrior::point_mass(0.4).unwrap();
        let b = build_forcing(&x, &th, sp, &prior, &spec).unwrap();
        let mut expect = DVector::zeros(5);
        for y in [0.0, 1.0] {
            for z in [0u8, 1] {
                let f = joint_density(y, z, &x, 0.4, &th, sp, &spec).unwrap();
                expect += full_score(y, z, &x, 0.4, &th, sp, &spec).unwrap() * f;
            }
        }
        assert!((b.row(0).transpose() - expect).amax() < 1e-15);
    }

    #[test]
    fn forcing_generic_enumeration_and_reduction() {
        // Full-width forcing equals the direct yz-sum of observed_score · f.
        let spec = ModelSpec::bernoulli();
        let sp = SensitivityPoint::new(2.5, 1.0).unwrap();
        let x = [1.0, 0.5];
        let th = theta();
        let prior = grid();
        let b = build_forcing(&x, &th, sp, &prior, &spec).unwrap();
        for (j, &u) in prior.support().iter().enumerate() {
            let mut expect = DVector::zeros(5);
            for y in [0.0, 1.0] {
                for z in [0u8, 1] {
                    let f = joint_density(y, z, &x, u, &th, sp, &spec).unwrap();
                    expect += observed_score(y, z, &x, &th, sp, &prior, &spec).unwrap() * f;
                }
            }
            assert!((b.row(j).transpose() - expect).amax() < 1e-14);
        }
    }

    #[test]
    fn forcing_continuous_in_delta() {
        let spec = ModelSpec::bernoulli();
        let x = [1.0, 0.5];
        let b0 = build_forcing(&x, &theta(), SensitivityPoint::new(0.0, 1.0).unwrap(), &grid(), &spec)
            .unwrap();
        let b1 = build_forcing(&x, &theta(), SensitivityPoint::new(1e-6, 1.0).unwrap(), &grid(), &spec)
            .unwrap();
        assert!((b1 - b0).norm() < 1e-4);
    }

    fn planted(k: DMatrix<f64>, b: DMatrix<f64>, alpha: f64) -> FredholmSystem {
        let n = k.nrows();
        FredholmSystem::new((0..n).map(|i| i as f64).collect(), k, vec![1.0; n], b, 1.0, alpha)
            .unwrap()
    }

    #[test]
    fn exact_solve_roundtrip_and_zero() {
        let k = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.2, 1.5, 0.4, 0.0, 0.6, 1.1]);
        let a_star = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, -1.0, 0.25]);
        let sys0 = planted(k.clone(), DMatrix::zeros(3, 2), 0.0);
        let b = sys0.operator() * &a_star;
        let sol = solve_exact(&planted(k.clone(), b.clone(), 0.0)).unwrap();
        assert!((&sol.a - &a_star).amax() < 1e-10);
        assert!(sol.residual_norm <= 1e-10 * b.norm());
        assert_eq!(solve_exact(&sys0).unwrap().a, DMatrix::zeros(3, 2));
    }

    #[test]
    fn exact_solve_refuses_ill_posed() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = solve_exact(&planted(k, DMatrix::zeros(2, 1), 0.0)).unwrap_err();
        assert!(matches!(err, Error::IllPosed { .. }));
        assert!(err.to_string().contains("ill-posed; use tikhonov"));
    }

    #[test]
    fn tikhonov_properties() {
        let k = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.2, 1.5, 0.4, 0.0, 0.6, 1.1]);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, -0.5, 2.0]);
        let exact = solve_exact(&planted(k.clone(), b.clone(), 0.0)).unwrap();
        let small = solve_tikhonov(&planted(k.clone(), b.clone(), 1e-6)).unwrap();
        assert!((&small.a - &exact.a).norm() / exact.a.norm() < 1e-3);
        let mut prev = f64::INFINITY;
        for alpha in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
            let n = solve_tikhonov(&planted(k.clone(), b.clone(), alpha)).unwrap().a.norm();
            assert!(n <= prev);
            prev = n;
        }
        let zero = solve_tikhonov(&planted(k.clone(), DMatrix::zeros(3, 1), 0.5)).unwrap();
        assert_eq!(zero.a, DMatrix::zeros(3, 1));
        assert!(solve_tikhonov(&planted(k, b, 0.0)).is_err());
    }

    #[test]
    fn picard_examples() {
        let id = planted(DMatrix::identity(4, 4), DMatrix::from_element(4, 1, 1.0), 0.01);
        let r = picard_diagnostics(&id);
        assert!(r.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-14));
        assert_relative_eq!(r.capture_fraction, 1.0, epsilon = 1e-14);

        let v = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let rank1 = &v * v.transpose();
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, -1.0]);
        let r = picard_diagnostics(&planted(rank1, b, 0.01));
        assert!(r.capture_fraction < 1.0);
        assert!(r.condition.is_infinite() || r.condition > 1e10);

        let spec = ModelSpec::bernoulli();
        let sys = build_system(&[1.0, 0.3], &theta(), SensitivityPoint::NONE, &grid(), &spec, 0.1, default_hermite())
            .unwrap();
        let r = picard_diagnostics(&sys);
        assert!(r.singular_values[0] > 1e-3);
        assert!(r.singular_values[1..].iter().all(|s| *s < 1e-10));
    }

    #[test]
    fn correction_expectation_examples() {
        let spec = ModelSpec::bernoulli();
        let th = theta();
        let x = [1.0, 0.2];
        let sp = SensitivityPoint::new(1.0, 2.0).unwrap();
        let prior = grid();
        let zero = CorrectionFunction {
            a: DMatrix::zeros(prior.len(), 5),
            residual_norm: 0.0,
            method: SolveMethod::Exact,
        };
        let c = correction_expectation(&zero, 1.0, 1, &x, &th, sp, &prior, &spec).unwrap();
        assert_eq!(c, DVector::zeros(5));

        let a = DMatrix::from_fn(prior.len(), 5, |i, j| (i * 5 + j) as f64);
        let cf = CorrectionFunction {
            a: a.clone(),
            residual_norm: 0.0,
            method: SolveMethod::Exact,
        };
        let c = correction_expectation(&cf, 1.0, 1, &x, &th, SensitivityPoint::NONE, &prior, &spec)
            .unwrap();
        let avg = a.tr_mul(&DVector::from_column_slice(prior.weights()));
        assert!((c - avg).amax() < 1e-12);

        let pm = WorkingPrior::point_mass(0.5).unwrap();
        let one = CorrectionFunction {
            a: DMatrix::from_row_slice(1, 5, &[1.0, 2.0, 3.0, 4.0, 5.0]),
            residual_norm: 0.0,
            method: SolveMethod::Exact,
        };
        let c = correction_expectation(&one, 0.0, 0, &x, &th, sp, &pm, &spec).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(
            correction_expectation(&one, 0.0, 0, &x, &th, sp, &prior, &spec),
            Err(Error::GridMismatch { .. })
        ));
    }

    /// Orthogonality of `S_obs − E*[a]` to every `f(· | x, u_k)`, computed by
    /// brute-force enumeration independent of the matrix assembly.
    fn enumerated_defect(
        x: &[f64],
        th: &Theta,
        sp: SensitivityPoint,
        prior: &WorkingPrior,
        cf: &CorrectionFunction,
    ) -> f64 {
        let spec = ModelSpec::bernoulli();
        let mut worst: f64 = 0.0;
        for &u in prior.support() {
            let mut acc = DVector::zeros(th.q());
            for y in [0.0, 1.0] {
                for z in [0u8, 1] {
                    let f = joint_density(y, z, x, u, th, sp, &spec).unwrap();
                    let s = observed_score(y, z, x, th, sp, prior, &spec).unwrap()
                        - correction_expectation(cf, y, z, x, th, sp, prior, &spec).unwrap();
                    acc += s * f;
                }
            }
            worst = worst.max(acc.amax());
        }
        worst
    }

    #[test]
    fn binary_u_exact_solve_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let spec = ModelSpec::bernoulli();
        let prior = bern();
        for _ in 0..20 {
            let (th, x, sp) = random_case(&mut rng);
            let sys = build_system(&x, &th, sp, &prior, &spec, 0.0, default_hermite()).unwrap();
            let cf = solve_exact(&sys).unwrap();
            assert!(enumerated_defect(&x, &th, sp, &prior, &cf) <= 1e-8);
        }
    }

    #[test]
    fn tikhonov_defect_shrinks_with_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = ModelSpec::bernoulli();
        let prior = grid();
        for _ in 0..5 {
            let (th, x, sp) = random_case(&mut rng);
            let mut prev = f64::INFINITY;
            for alpha in [1.0, 0.1, 0.01] {
                let sys = build_system(&x, &th, sp, &prior, &spec, alpha, default_hermite()).unwrap();
                let d = enumerated_defect(&x, &th, sp, &prior, &solve_tikhonov(&sys).unwrap());
                assert!(d <= prev * 1.1, "alpha {alpha}: {d} > {prev}");
                prev = d;
            }
        }
    }

    #[test]
    fn reduced_efficient_score_matches_full_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (spec, prior, solver) in [
            (ModelSpec::bernoulli(), bern(), Solver::Exact),
            (ModelSpec::bernoulli(), grid(), Solver::Tikhonov { alpha: 0.1 }),
            (ModelSpec::gaussian(1.3).unwrap(), grid(), Solver::Tikhonov { alpha: 0.01 }),
        ] {
            for _ in 0..4 {
                let (th, x, sp) = random_case(&mut rng);
                let y = if spec.is_binary() { 1.0 } else { 0.7 };
                let sys = build_system(&x, &th, sp, &prior, &spec, 0.1, default_hermite()).unwrap();
                let sys = FredholmSystem {
                    alpha: match solver {
                        Solver::Tikhonov { alpha } => alpha,
                        Solver::Exact => 0.0,
                    },
                    ..sys
                };
                let cf = match solver {
                    Solver::Exact => solve_exact(&sys).unwrap(),
                    Solver::Tikhonov { .. } => solve_tikhonov(&sys).unwrap(),
                };
                let full = observed_score(y, 1, &x, &th, sp, &prior, &spec).unwrap()
                    - correction_expectation(&cf, y, 1, &x, &th, sp, &prior, &spec).unwrap();
                let fast =
                    efficient_score_obs(y, 1, &x, &th, sp, &prior, &spec, solver, default_hermite())
                        .unwrap();
                assert!((full - fast).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_assembly_uses_hermite_points_per_support_value() {
        let spec = ModelSpec::gaussian(1.0).unwrap();
        let local = LocalSystem::assemble(
            &[1.0],
            &Theta::zeros(1),
            SensitivityPoint::new(1.0, 1.0).unwrap(),
            &bern(),
            &spec,
            &hermite(7).unwrap(),
        )
        .unwrap();
        assert_eq!(local.point_count(), 2 * 2 * 7);
    }

    #[test]
    fn binary_u_simulated_solves_succeed() {
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        let spec = ModelSpec::bernoulli();
        let prior = bern();
        let sp = SensitivityPoint::new(4.0, 4.0).unwrap();
        let th = Theta {
            lambda: vec![0.0, 4.0, -4.0],
            beta: 2.0,
            kappa: vec![0.0, 3.0, -3.0],
        };
        for _ in 0..300 {
            let x = [1.0, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let sys = build_system(&x, &th, sp, &prior, &spec, 0.0, default_hermite()).unwrap();
            solve_exact(&sys).unwrap();
        }
    }
}
