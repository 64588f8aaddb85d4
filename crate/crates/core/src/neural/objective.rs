use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How negative (product-of-marginals) pairs are formed within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeSampling {
    /// `σ(i) = (i + 1) mod n`.
    #[default]
    Cyclic,
    /// Uniformly random derangement.
    RandomDerangement,
}

/// `log(mean(exp(s)))`, shifted by the maximum for stability.
pub fn log_mean_exp(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = s.iter().map(|&v| (v - max).exp()).sum();
    (sum / s.len() as f64).ln() + max
}

/// Softmax weights of `s`: the gradient of [`log_mean_exp`].
pub(crate) fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Donsker-Varadhan objective `mean(joint) - log mean exp(product)`.
pub fn dv_objective(scores_joint: &[f64], scores_product: &[f64]) -> Result<f64> {
    if scores_joint.is_empty() || scores_product.is_empty() {
        return Err(Error::InvalidArgument("DV objective needs at least one score of each kind".into()));
    }
    if !scores_joint.iter().chain(scores_product).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("critic scores".into()));
    }
    let mean = scores_joint.iter().sum::<f64>() / scores_joint.len() as f64;
    Ok(mean - log_mean_exp(scores_product))
}

/// A fixed-point-free permutation of `0..n`.
pub fn derangement<R: Rng + ?Sized>(n: usize, mode: NegativeSampling, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("a derangement needs n >= 2, got {n}")));
    }
    match mode {
        NegativeSampling::Cyclic => Ok((0..n).map(|i| (i + 1) % n).collect()),
        NegativeSampling::RandomDerangement => {
            // Acceptance probability tends to 1/e, so the expected number of
            // shuffles is below 3.
            let mut perm: Vec<usize> = (0..n).collect();
            loop {
                perm.shuffle(rng);
                if perm.iter().enumerate().all(|(i, &p)| i != p) {
                    return Ok(perm);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_scores_give_zero() {
        for c in [-3.5, 0.0, 2.0, 700.0] {
            assert!(dv_objective(&[c; 5], &[c; 5]).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_value() {
        let ln2 = std::f64::consts::LN_2;
        let v = dv_objective(&[ln2, ln2], &[0.0, 0.0]).unwrap();
        assert!((v - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let v = dv_objective(&[1.0, 3.0], &[1000.0, 1000.0]).unwrap();
        assert!((v - (2.0 - 1000.0)).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(dv_objective(&[], &[1.0]).is_err());
        assert!(matches!(dv_objective(&[f64::NAN], &[1.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn cyclic_derangement() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(derangement(4, NegativeSampling::Cyclic, &mut r).unwrap(), vec![1, 2, 3, 0]);
        assert!(derangement(1, NegativeSampling::Cyclic, &mut r).is_err());
    }

    #[test]
    fn two_element_random_derangement_is_a_swap() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(derangement(2, NegativeSampling::RandomDerangement, &mut r).unwrap(), vec![1, 0]);
        }
    }

    #[test]
    fn random_derangement_is_uniform_over_allowed_images() {
        let n = 6;
        let draws = 10_000;
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut counts = vec![vec![0usize; n]; n];
        for _ in 0..draws {
            let p = derangement(n, NegativeSampling::RandomDerangement, &mut r).unwrap();
            for (i, &j) in p.iter().enumerate() {
                assert_ne!(i, j);
                counts[i][j] += 1;
            }
        }
        // Each position maps to each of the other n-1 values with probability 1/(n-1).
        for (i, row) in counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if i != j {
                    let freq = c as f64 / draws as f64;
                    assert!((freq - 1.0 / (n - 1) as f64).abs() < 0.03, "{i}->{j}: {freq}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn jensen_bound(s in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let v = dv_objective(&s, &s).unwrap();
            prop_assert!(v <= 1e-12);
            let spread = s.iter().fold(0.0f64, |a, &x| a.max((x - s[0]).abs()));
            if spread == 0.0 {
                prop_assert!(v.abs() < 1e-12);
            } else if spread > 1e-3 {
                // Below this spread the gap is under rounding error.
                prop_assert!(v < 0.0);
            }
        }

        #[test]
        fn softmax_is_the_lme_gradient(s in prop::collection::vec(-5.0f64..5.0, 1..10), i in 0usize..10) {
            let i = i % s.len();
            let h = 1e-6;
            let mut p = s.clone();
            p[i] += h;
            let mut m = s.clone();
            m[i] -= h;
            let fd = (log_mean_exp(&p) - log_mean_exp(&m)) / (2.0 * h);
            prop_assert!((fd - softmax(&s)[i]).abs() < 1e-7);
        }
    }
}
