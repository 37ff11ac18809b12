use rand::seq::index;

use crate::error::{BentoError, Result};
use crate::seed::rng_for;

/// `trials` uniform k-subsets of `0..n`, each drawn without replacement from
/// its own seeded stream.
pub fn random_subsets(n: usize, k: usize, trials: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(BentoError::InvalidArgument(format!("k must be in 1..={n}, got {k}")));
    }
    if trials == 0 {
        return Err(BentoError::InvalidArgument("trials must be >= 1".into()));
    }
    Ok((0..trials)
        .map(|t| {
            let mut rng = rng_for(seed, &format!("random/trial/{t}"));
            index::sample(&mut rng, n, k).into_vec()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_set_when_k_is_n() {
        for s in random_subsets(5, 5, 10, 1).unwrap() {
            let mut s = s;
            s.sort();
            assert_eq!(s, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn reproducible() {
        assert_eq!(random_subsets(57, 3, 50, 9).unwrap(), random_subsets(57, 3, 50, 9).unwrap());
        assert_ne!(random_subsets(57, 3, 50, 9).unwrap(), random_subsets(57, 3, 50, 10).unwrap());
    }

    #[test]
    fn inclusion_frequency_is_binomial() {
        let (n, k, trials) = (57usize, 3usize, 1000usize);
        // a fixed stream; over many seeds the 3-sigma band is left by some task about 1 time in 7, as expected for 57 tasks
        let subsets = random_subsets(n, k, trials, 1).unwrap();
        assert_eq!(subsets.len(), trials);
        let mut counts = vec![0usize; n];
        for s in &subsets {
            assert_eq!(s.len(), k);
            let mut d = s.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), k);
            for &i in s {
                counts[i] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let mean = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd + 1.0, "count {c} vs mean {mean}");
        }
    }

    #[test]
    fn guards() {
        assert!(random_subsets(3, 4, 1, 0).is_err());
        assert!(random_subsets(3, 0, 1, 0).is_err());
        assert!(random_subsets(3, 1, 0, 0).is_err());
    }
}
