//! Fisher randomization (sign-flip) test for paired per-pair metrics.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::EvalError;

/// Lengths up to this run the exhaustive 2^n enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 20;

/// Two-sided randomization test on the mean of paired differences.
///
/// All 2^n sign assignments are enumerated when n is at most
/// [`EXHAUSTIVE_LIMIT`]; larger inputs use `rounds` Monte Carlo draws under
/// `seed`. The p-value is the proportion of assignments whose absolute mean
/// reaches the observed one (the observed assignment itself included).
pub fn fisher_randomization_test(
    per_pair_a: &[f64],
    per_pair_b: &[f64],
    rounds: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if per_pair_a.len() != per_pair_b.len() {
        return Err(EvalError::LengthMismatch {
            a: per_pair_a.len(),
            b: per_pair_b.len(),
        });
    }
    if per_pair_a.is_empty() {
        return Err(EvalError::Empty);
    }
    let diffs: Vec<f64> = per_pair_a
        .iter()
        .zip(per_pair_b)
        .map(|(a, b)| a - b)
        .collect();
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>().abs();
    // tolerance so ties in the sum count as reaching the observed value
    let threshold = observed - 1e-12 * (1.0 + observed);

    if n <= EXHAUSTIVE_LIMIT {
        let mut hits = 0u64;
        for assignment in 0u64..(1u64 << n) {
            let mut sum = 0.0;
            for (i, d) in diffs.iter().enumerate() {
                if assignment >> i & 1 == 1 {
                    sum -= d;
                } else {
                    sum += d;
                }
            }
            if sum.abs() >= threshold {
                hits += 1;
            }
        }
        Ok(hits as f64 / (1u64 << n) as f64)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0u64;
        for _ in 0..rounds {
            let mut sum = 0.0;
            for d in &diffs {
                if rng.gen::<bool>() {
                    sum -= d;
                } else {
                    sum += d;
                }
            }
            if sum.abs() >= threshold {
                hits += 1;
            }
        }
        // count the observed assignment as one more draw
        Ok((hits + 1) as f64 / (rounds + 1) as f64)
    }
}

/// Force the Monte Carlo path regardless of length (used to cross-check the
/// two modes on the same data).
pub fn fisher_monte_carlo(
    per_pair_a: &[f64],
    per_pair_b: &[f64],
    rounds: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if per_pair_a.len() != per_pair_b.len() {
        return Err(EvalError::LengthMismatch {
            a: per_pair_a.len(),
            b: per_pair_b.len(),
        });
    }
    if per_pair_a.is_empty() {
        return Err(EvalError::Empty);
    }
    let diffs: Vec<f64> = per_pair_a
        .iter()
        .zip(per_pair_b)
        .map(|(a, b)| a - b)
        .collect();
    let observed = diffs.iter().sum::<f64>().abs();
    let threshold = observed - 1e-12 * (1.0 + observed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..rounds {
        let mut sum = 0.0;
        for d in &diffs {
            if rng.gen::<bool>() {
                sum -= d;
            } else {
                sum += d;
            }
        }
        if sum.abs() >= threshold {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (rounds + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_runs_give_p_one() {
        let a = vec![0.3, 0.5, 0.7, 0.1];
        let p = fisher_randomization_test(&a, &a, 1000, 1).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn three_unit_differences() {
        // differences [1,1,1]: only the two all-same-sign assignments reach
        // |sum| = 3, so p = 2/8
        let a = vec![1.0, 1.0, 1.0];
        let b = vec![0.0, 0.0, 0.0];
        let p = fisher_randomization_test(&a, &b, 1000, 1).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invariant_under_negating_all_differences() {
        let a = vec![0.9, 0.2, 0.4, 0.8, 0.3];
        let b = vec![0.1, 0.3, 0.1, 0.6, 0.2];
        let p1 = fisher_randomization_test(&a, &b, 1000, 1).unwrap();
        let p2 = fisher_randomization_test(&b, &a, 1000, 1).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn monte_carlo_matches_exhaustive_within_tolerance() {
        let a: Vec<f64> = (0..12).map(|i| 0.1 + 0.05 * (i % 4) as f64).collect();
        let b: Vec<f64> = (0..12).map(|i| 0.08 + 0.04 * ((i + 1) % 5) as f64).collect();
        let exact = fisher_randomization_test(&a, &b, 0, 0).unwrap();
        let mc = fisher_monte_carlo(&a, &b, 100_000, 42).unwrap();
        assert!(
            (exact - mc).abs() <= 0.01,
            "exhaustive {exact} vs monte carlo {mc}"
        );
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(fisher_randomization_test(&[1.0], &[1.0, 2.0], 10, 0).is_err());
    }
}
