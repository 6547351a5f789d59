//! Closed-form identification with binary Y, Z and U and no covariates.

use semisens::ident::{identify, Logistic};
use semisens::model::{make_prior, PriorSpec};

fn main() -> semisens::error::Result<()> {
    let truth = Logistic {
        kappa0: -0.3,
        lambda0: -0.5,
        beta: 1.0,
        delta: 1.5,
        gamma: 1.0,
    };
    let marginal = make_prior(&PriorSpec::Bernoulli(0.3))?;

    // The inversion needs the law of U among Y = 0, Z = 0, not the marginal.
    let ll = truth.to_log_linear();
    let cond = ll.conditional_prior(&marginal)?;
    let cells = ll.cells(&marginal)?;
    println!(
        "L(y,z): {:.4} {:.4} {:.4} {:.4}",
        cells.get(0, 0),
        cells.get(0, 1),
        cells.get(1, 0),
        cells.get(1, 1)
    );

    let id = identify(&cells, &cond, ll.delta, ll.gamma)?;
    println!("log-linear: alpha0 {:.6}  beta0 {:.6}  beta_z {:.6}", id.alpha0, id.beta0, id.beta_z);
    println!("input:      alpha0 {:.6}  beta0 {:.6}  beta_z {:.6}", ll.alpha0, ll.beta0, ll.beta_z);

    // A different assumed (δ, γ) identifies a different treatment effect.
    for t in [0.0, 0.5, 1.0, 2.0] {
        let id = identify(&cells, &cond, t, t)?;
        println!("δ = γ = {t}: beta_z {:.4}", id.beta_z);
    }
    Ok(())
}
