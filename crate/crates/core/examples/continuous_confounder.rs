//! Continuous U: a grid working law, Tikhonov regularization, and the effect
//! of the mesh.

use semisens::estimator::{fit, FitOptions};
use semisens::model::{make_prior, PriorSpec};
use semisens::simstudy::{generate, DgpKind, DgpSpec};

fn main() -> semisens::error::Result<()> {
    let kind = DgpKind::BetaU;
    let sim = generate(&DgpSpec { kind, n: 500, seed: 8 })?;
    let (sp, spec) = (kind.true_sensitivity(), kind.spec());

    for mesh in [0.5, 0.25, 0.1] {
        let prior = make_prior(&PriorSpec::Grid { lo: 0.0, hi: 1.0, mesh })?;
        for alpha in [1.0, 0.1] {
            let f = fit(&sim.data, sp, &FitOptions::new(prior.clone()).with_alpha(alpha), &spec, 0.95)?;
            println!(
                "h = {mesh:<4} alpha = {alpha:<4} beta {:.3} (se {:.3})",
                f.beta_hat, f.beta_se
            );
        }
    }
    Ok(())
}
