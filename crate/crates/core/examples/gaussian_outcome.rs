//! Continuous outcome with an identity link; δ is read in outcome standard
//! deviations.

use semisens::cli::interpretation;
use semisens::estimator::{fit, FitOptions};
use semisens::model::{make_prior, PriorSpec, SensitivityPoint};
use semisens::simstudy::{generate, DgpKind, DgpSpec};

fn main() -> semisens::error::Result<()> {
    let kind = DgpKind::GaussianY;
    let sim = generate(&DgpSpec { kind, n: 1000, seed: 2 })?;
    let spec = kind.spec();
    let opts = FitOptions::new(make_prior(&PriorSpec::Bernoulli(0.5))?);

    for t in [0.0, 2.0, 4.0] {
        let sp = SensitivityPoint::new(t, t)?;
        let f = fit(&sim.data, sp, &opts, &spec, 0.95)?;
        println!("δ = γ = {t}: beta {:.3} [{:.3}, {:.3}]", f.beta_hat, f.ci.0, f.ci.1);
        println!("  {}", interpretation(sp, &spec));
    }
    Ok(())
}
