//! Simultaneous band over a sensitivity path from the multiplier bootstrap.

use semisens::estimator::{sweep_fits, FitOptions};
use semisens::model::{make_prior, PriorSpec, SensitivityPoint};
use semisens::simstudy::{generate, DgpKind, DgpSpec};
use semisens::uncertainty::uniform_band;

fn main() -> semisens::error::Result<()> {
    let kind = DgpKind::BinaryU;
    let sim = generate(&DgpSpec { kind, n: 1000, seed: 5 })?;
    let opts = FitOptions::new(make_prior(&PriorSpec::Bernoulli(0.2))?);
    let grid = [3.0, 3.5, 4.0, 4.5, 5.0]
        .iter()
        .map(|&t| SensitivityPoint::new(t, t))
        .collect::<Result<Vec<_>, _>>()?;

    let fits = sweep_fits(&sim.data, &grid, &opts, &kind.spec(), 0.90)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let band = uniform_band(&fits, 0.90, 2000, 99)?;

    println!("critical value {:.3} (pointwise 1.645)", band.c_hat);
    for (k, f) in fits.iter().enumerate() {
        let (lo, hi) = band.band[k];
        println!(
            "t = {:.1}: beta {:.3}  pointwise [{:.3}, {:.3}]  uniform [{lo:.3}, {hi:.3}]",
            f.sp.delta, f.beta_hat, f.ci.0, f.ci.1
        );
    }
    Ok(())
}
