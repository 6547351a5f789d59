use nalgebra::DVector;
use proptest::prelude::*;

use semisens::cli::parse_grid;
use semisens::em::responsibilities;
use semisens::estimator::{efficient_score, FitOptions, SolverChoice};
use semisens::fredholm::build_kernel;
use semisens::ident::{identify, LogLinear, ObservedCells};
use semisens::model::{joint_density, make_prior, Dataset, ModelSpec, PriorSpec, SensitivityPoint, Theta};
use semisens::score::{full_score, observed_score, posterior_weights};
use semisens::simstudy::metrics;
use semisens::uncertainty::rubin_pool;

fn arb_theta() -> impl Strategy<Value = Theta> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..3.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(l0, l1, b, k0, k1)| Theta {
        lambda: vec![l0, l1],
        beta: b,
        kappa: vec![k0, k1],
    })
}

fn arb_sp() -> impl Strategy<Value = SensitivityPoint> {
    (-4.0..4.0f64, -4.0..4.0f64).prop_map(|(d, g)| SensitivityPoint::new(d, g).unwrap())
}

fn arb_prior() -> impl Strategy<Value = PriorSpec> {
    prop_oneof![
        (0.05..0.95f64).prop_map(PriorSpec::Bernoulli),
        prop::sample::select(vec![0.5, 0.25, 0.2, 0.1]).prop_map(|mesh| PriorSpec::Grid { lo: 0.0, hi: 1.0, mesh }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posterior_weights_are_a_distribution(
        th in arb_theta(), sp in arb_sp(), prior in arb_prior(),
        x1 in 0.0..1.0f64, y in 0u8..2, z in 0u8..2,
    ) {
        let prior = make_prior(&prior).unwrap();
        let w = posterior_weights(f64::from(y), z, &[1.0, x1], &th, sp, &prior, &ModelSpec::bernoulli()).unwrap();
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observed_score_is_a_convex_combination(
        th in arb_theta(), sp in arb_sp(), prior in arb_prior(),
        x1 in 0.0..1.0f64, y in 0u8..2, z in 0u8..2,
    ) {
        let spec = ModelSpec::bernoulli();
        let prior = make_prior(&prior).unwrap();
        let (yf, x) = (f64::from(y), [1.0, x1]);
        let s = observed_score(yf, z, &x, &th, sp, &prior, &spec).unwrap();
        let full: Vec<DVector<f64>> = prior
            .support()
            .iter()
            .map(|&u| full_score(yf, z, &x, u, &th, sp, &spec).unwrap())
            .collect();
        for k in 0..s.len() {
            let lo = full.iter().map(|f| f[k]).fold(f64::INFINITY, f64::min);
            let hi = full.iter().map(|f| f[k]).fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            prop_assert!(s[k] >= lo - slack && s[k] <= hi + slack);
        }
    }

    #[test]
    fn observed_score_reduces_to_full_score_at_null(
        th in arb_theta(), prior in arb_prior(), x1 in 0.0..1.0f64, y in 0u8..2, z in 0u8..2, u in 0.0..1.0f64,
    ) {
        let spec = ModelSpec::bernoulli();
        let prior = make_prior(&prior).unwrap();
        let (yf, x, sp) = (f64::from(y), [1.0, x1], SensitivityPoint::NONE);
        let s = observed_score(yf, z, &x, &th, sp, &prior, &spec).unwrap();
        let f = full_score(yf, z, &x, u, &th, sp, &spec).unwrap();
        prop_assert!((s - f).amax() < 1e-12);
    }

    #[test]
    fn binary_exact_efficient_score_is_orthogonal(
        th in arb_theta(), sp in arb_sp(), p in 0.05..0.95f64, x1 in 0.0..1.0f64,
    ) {
        let spec = ModelSpec::bernoulli();
        let opts = FitOptions::new(make_prior(&PriorSpec::Bernoulli(p)).unwrap()).with_solver(SolverChoice::Exact);
        let x = [1.0, x1];
        for &u in opts.prior.support() {
            let mut acc = DVector::zeros(th.q());
            for y in [0.0, 1.0] {
                for z in [0u8, 1] {
                    let f = joint_density(y, z, &x, u, &th, sp, &spec).unwrap();
                    acc += efficient_score(y, z, &x, &th, sp, &opts, &spec).unwrap() * f;
                }
            }
            prop_assert!(acc.amax() <= 1e-8, "{}", acc.amax());
        }
    }

    #[test]
    fn kernel_scaled_symmetry(th in arb_theta(), sp in arb_sp(), prior in arb_prior(), x1 in 0.0..1.0f64) {
        let prior = make_prior(&prior).unwrap();
        let k = build_kernel(&[1.0, x1], &th, sp, &prior, &ModelSpec::bernoulli()).unwrap();
        for i in 0..prior.len() {
            for j in 0..prior.len() {
                let a = k[(i, j)] / prior.kernel_mass(i);
                let b = k[(j, i)] / prior.kernel_mass(j);
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn identification_roundtrip_and_rescaling(
        a0 in -2.0..2.0f64, b0 in -2.0..2.0f64, bz in -2.0..2.0f64,
        d in -3.0..3.0f64, g in -3.0..3.0f64, p in 0.05..0.95f64, scale in 0.01..100.0f64,
    ) {
        let ll = LogLinear { alpha0: a0, beta0: b0, beta_z: bz, delta: d, gamma: g };
        let marginal = make_prior(&PriorSpec::Bernoulli(p)).unwrap();
        let cond = ll.conditional_prior(&marginal).unwrap();
        let cells = ll.cells(&marginal).unwrap();
        let id = identify(&cells, &cond, d, g).unwrap();
        prop_assert!((id.alpha0 - a0).abs() < 1e-10);
        prop_assert!((id.beta0 - b0).abs() < 1e-10);
        prop_assert!((id.beta_z - bz).abs() < 1e-10);

        let scaled = ObservedCells::from_counts([
            [cells.get(0, 0) * scale, cells.get(0, 1) * scale],
            [cells.get(1, 0) * scale, cells.get(1, 1) * scale],
        ]).unwrap();
        let id2 = identify(&scaled, &cond, d, g).unwrap();
        prop_assert!((id2.beta_z - id.beta_z).abs() < 1e-12);
        prop_assert!((id2.alpha0 - id.alpha0).abs() < 1e-12);
    }

    #[test]
    fn responsibilities_bounded_and_ordered(
        l0 in -2.0..2.0f64, k0 in -2.0..2.0f64, d in 0.0..4.0f64, g in 0.0..4.0f64, p in 0.05..0.95f64,
    ) {
        // β = 0, so the posterior log-odds of U are increasing in δy + γz.
        let th = Theta { lambda: vec![l0], beta: 0.0, kappa: vec![k0] };
        let cells = [(0.0, 0u8), (0.0, 1), (1.0, 0), (1.0, 1)];
        let data = Dataset::new(
            cells.iter().map(|c| c.0).collect(),
            cells.iter().map(|c| c.1).collect(),
            vec![vec![1.0]; 4],
        ).unwrap();
        let sp = SensitivityPoint::new(d, g).unwrap();
        let r = responsibilities(&data, &th, sp, p);
        prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..4 {
            for j in 0..4 {
                let si = d * cells[i].0 + g * f64::from(cells[i].1);
                let sj = d * cells[j].0 + g * f64::from(cells[j].1);
                if si < sj {
                    prop_assert!(r[i] <= r[j] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn rubin_total_variance_decomposes(est in prop::collection::vec((-3.0..3.0f64, 0.05..2.0f64), 2..12)) {
        let p = rubin_pool(&est, 0.95).unwrap();
        let m = est.len() as f64;
        prop_assert!((p.total - (p.within + (1.0 + 1.0 / m) * p.between)).abs() < 1e-12);
        prop_assert!(p.se * p.se >= p.within - 1e-12);
        prop_assert!(p.ci.0 < p.beta && p.beta < p.ci.1);
    }

    #[test]
    fn metrics_rmse_decomposes(est in prop::collection::vec(0.0..4.0f64, 1..50)) {
        let ses = vec![0.1; est.len()];
        let cis: Vec<(f64, f64)> = est.iter().map(|b| (b - 0.5, b + 0.5)).collect();
        let m = metrics(&est, &ses, &cis, 2.0).unwrap();
        prop_assert!((m.rmse.powi(2) - (m.abs_bias.powi(2) + m.se.powi(2))).abs() < 1e-10);
        prop_assert!((0.0..=1.0).contains(&m.coverage));
    }

    #[test]
    fn grid_ranges_are_strictly_increasing(lo in -5.0..5.0f64, width in 0.0..5.0f64, step in 0.01..1.0f64) {
        let g = parse_grid(&format!("{lo}:{}:{step}", lo + width)).unwrap();
        prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(*g.last().unwrap() <= lo + width + 1e-9);
    }
}
