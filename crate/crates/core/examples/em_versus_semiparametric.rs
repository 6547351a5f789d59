//! The parametric EM comparator against the semiparametric estimator when
//! P(U = 1) is guessed wrong.

use semisens::em::{em_fit, EmOptions};
use semisens::estimator::{fit, FitOptions};
use semisens::model::{make_prior, PriorSpec};
use semisens::simstudy::{generate, DgpKind, DgpSpec};

fn main() -> semisens::error::Result<()> {
    let kind = DgpKind::BinaryU;
    let sim = generate(&DgpSpec { kind, n: 1000, seed: 21 })?;
    let (sp, spec) = (kind.true_sensitivity(), kind.spec());

    for p in [0.2, 0.5] {
        let em = em_fit(&sim.data, sp, &EmOptions::new(p)?, &spec, 0.95)?;
        let semi = fit(&sim.data, sp, &FitOptions::new(make_prior(&PriorSpec::Bernoulli(p))?), &spec, 0.95)?;
        println!(
            "p = {p}: EM {:.3} (se {:.3}, {} iterations)   semiparametric {:.3} (se {:.3})",
            em.beta_hat, em.beta_se, em.iterations, semi.beta_hat, semi.beta_se
        );
    }
    println!("true beta = 2");
    Ok(())
}
