//! Pool fits across completed datasets by Rubin's rules. Bootstrap resamples
//! stand in for imputations here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semisens::estimator::{fit, FitOptions};
use semisens::model::{make_prior, Dataset, PriorSpec};
use semisens::simstudy::{generate, DgpKind, DgpSpec};
use semisens::uncertainty::rubin_pool;

fn main() -> semisens::error::Result<()> {
    let kind = DgpKind::BinaryU;
    let sim = generate(&DgpSpec { kind, n: 800, seed: 4 })?;
    let d = &sim.data;
    let opts = FitOptions::new(make_prior(&PriorSpec::Bernoulli(0.2))?);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mut est = Vec::new();
    for m in 0..5 {
        let idx: Vec<usize> = (0..d.n()).map(|_| rng.random_range(0..d.n())).collect();
        let resampled = Dataset::without_intercept(
            idx.iter().map(|&i| d.y()[i]).collect(),
            idx.iter().map(|&i| d.z()[i]).collect(),
            idx.iter().map(|&i| d.row(i).to_vec()).collect(),
        )?;
        let f = fit(&resampled, kind.true_sensitivity(), &opts, &kind.spec(), 0.95)?;
        println!("completed dataset {m}: beta {:.3} (se {:.3})", f.beta_hat, f.beta_se);
        est.push((f.beta_hat, f.beta_se));
    }
    let p = rubin_pool(&est, 0.95)?;
    println!(
        "pooled beta {:.3}, se {:.3}, 95% CI [{:.3}, {:.3}] (within {:.4}, between {:.4})",
        p.beta, p.se, p.ci.0, p.ci.1, p.within, p.between
    );
    Ok(())
}
