//! Noiseless recovery should switch from failing to succeeding as the number
//! of samples grows relative to the dimension. Only the qualitative
//! transition is tested; the constants in the sample-size condition are not
//! known.

use clustlm::model::Dataset;
use clustlm::pgd::{pgd_fit, Fitted, PGDConfig};
use clustlm::theory::random_clustered_vector;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const D: usize = 20;
const Q: usize = 3;
const SEEDS: u64 = 10;

fn success_rate(n: usize) -> f64 {
    let mut ok = 0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 * n as u64 + seed);
        let x = DMatrix::from_fn(n, D, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = random_clustered_vector(D, Q, &mut rng);
        let data = Dataset::regression(x.clone(), &x * &w).unwrap();
        // A diverging run counts as a failure.
        if let Ok((Fitted::Clustered { model }, _)) = pgd_fit(&data, &PGDConfig::theory(Q, 300)) {
            if (model.weights().column(0) - &w).norm() <= 1e-4 * w.norm() {
                ok += 1;
            }
        }
    }
    ok as f64 / SEEDS as f64
}

#[test]
fn success_grows_with_samples() {
    let rates: Vec<(usize, f64)> = [5, 20, 80, 400].iter().map(|&n| (n, success_rate(n))).collect();
    eprintln!("success rate by n (d = {D}): {rates:?}");
    assert!(rates[0].1 <= 0.2, "{rates:?}");
    assert!(rates[3].1 >= 0.9, "{rates:?}");
    assert!(rates.windows(2).all(|w| w[1].1 + 0.2 >= w[0].1), "{rates:?}");
}
