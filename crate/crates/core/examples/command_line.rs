//! Drive the command-line interface in-process: write a CSV, fit two
//! "imputed" copies to JSON, and pool them.

use semisens::cli::main_with_args;
use semisens::simstudy::{generate, DgpKind, DgpSpec};
use std::fmt::Write as _;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut fits = Vec::new();
    for seed in [1, 2] {
        let sim = generate(&DgpSpec { kind: DgpKind::BinaryU, n: 600, seed })?;
        let d = &sim.data;
        let mut body = String::from("y,z,x1,x2\n");
        for i in 0..d.n() {
            writeln!(body, "{},{},{},{}", d.y()[i], d.z()[i], d.row(i)[0], d.row(i)[1])?;
        }
        let csv = dir.path().join(format!("imputed{seed}.csv"));
        std::fs::write(&csv, body)?;

        let json = dir.path().join(format!("fit{seed}.json"));
        let code = main_with_args([
            "semisens", "fit", "--data", csv.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
            "--covariates", "x1,x2", "--no-intercept", "--prior", "bernoulli:0.2", "--delta", "4",
            "--gamma", "4", "--output", json.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "fit failed");
        fits.push(json.to_str().unwrap().to_string());
    }
    let code = main_with_args(["semisens", "pool", "--inputs", &fits.join(",")]);
    std::process::exit(code);
}
