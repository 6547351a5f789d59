//! The integral equation at one covariate value: assemble, inspect its
//! conditioning, and compare exact and regularized solutions.

use semisens::fredholm::{build_system, picard_diagnostics, solve_exact, solve_tikhonov};
use semisens::model::{make_prior, ModelSpec, PriorSpec, SensitivityPoint, Theta};
use semisens::quadrature::default_hermite;

fn main() -> semisens::error::Result<()> {
    let theta = Theta {
        lambda: vec![4.0, -4.0],
        beta: 2.0,
        kappa: vec![3.0, -3.0],
    };
    let x = [0.6, 0.3];
    let sp = SensitivityPoint::new(2.0, 2.0)?;
    let spec = ModelSpec::bernoulli();

    let binary = make_prior(&PriorSpec::Bernoulli(0.3))?;
    let sys = build_system(&x, &theta, sp, &binary, &spec, 0.0, default_hermite())?;
    let a = solve_exact(&sys)?;
    println!("binary U: exact residual {:.2e}", a.residual_norm);

    for mesh in [0.25, 0.1] {
        let grid = make_prior(&PriorSpec::Grid { lo: 0.0, hi: 1.0, mesh })?;
        for alpha in [1.0, 0.1, 0.01] {
            let sys = build_system(&x, &theta, sp, &grid, &spec, alpha, default_hermite())?;
            let pic = picard_diagnostics(&sys);
            let a = solve_tikhonov(&sys)?;
            // With binary Y and Z the kernel has rank at most four.
            let top: Vec<String> = pic.singular_values.iter().take(5).map(|s| format!("{s:.1e}")).collect();
            println!(
                "h = {mesh:<4} alpha = {alpha:<4} singular values [{}]  captured {:.3}  residual {:.3e}",
                top.join(", "),
                pic.capture_fraction,
                a.residual_norm
            );
        }
    }
    Ok(())
}
