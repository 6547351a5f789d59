//! Large-sample limit of β̂ along the diagonal δ = γ = t in the binary-U
//! design, where only t = 4 is the data-generating value.
//!
//! Usage: `cargo run --release --example pseudo_truth -- [n] [seed]`

use semisens::estimator::{fit, FitOptions};
use semisens::model::{make_prior, PriorSpec, SensitivityPoint};
use semisens::simstudy::{generate, DgpKind, DgpSpec};

const PATH: [f64; 5] = [3.0, 3.5, 4.0, 4.5, 5.0];

fn main() -> semisens::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(200_000, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(2024, |s| s.parse().expect("seed"));

    let kind = DgpKind::BinaryU;
    let sim = generate(&DgpSpec { kind, n, seed })?;
    let opts = FitOptions::new(make_prior(&PriorSpec::Bernoulli(0.2))?);
    println!("t,beta_hat,se,converged");
    for t in PATH {
        let f = fit(&sim.data, SensitivityPoint::new(t, t)?, &opts, &kind.spec(), 0.95)?;
        println!("{t},{:.6},{:.6},{}", f.beta_hat, f.beta_se, f.converged);
    }
    Ok(())
}
