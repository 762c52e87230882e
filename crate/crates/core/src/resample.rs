//! Systematic resampling.

use crate::error::{Error, Result};
use crate::prng::StreamKey;

/// Systematic resampling against unnormalized log-weights.
///
/// Index `j` is the smallest `i` with `(j + u) / J * total < cumsum_i`, so a
/// grid point sitting exactly on a cumulative boundary goes to the lower
/// index. The output is nondecreasing and every index `m` appears
/// `floor(J w_m)` or `ceil(J w_m)` times. `step` is reported in the error
/// when every weight is zero.
pub fn systematic_resample(log_weights: &[f64], u: f64, step: usize) -> Result<Vec<usize>> {
    let n = log_weights.len();
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if n == 0 || max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::Degenerate { step });
    }
    let mut cumsum = Vec::with_capacity(n);
    let mut total = 0.0;
    let mut last_positive = 0;
    for (i, &lw) in log_weights.iter().enumerate() {
        let w = (lw - max).exp();
        if w > 0.0 {
            last_positive = i;
        }
        total += w;
        cumsum.push(total);
    }
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    for j in 0..n {
        let target = (j as f64 + u) / n as f64 * total;
        while i < n && cumsum[i] <= target {
            i += 1;
        }
        out.push(i.min(last_positive));
    }
    Ok(out)
}

/// Indices for the off-parameter resampling step: systematic resampling on
/// the baseline log measurement densities with offset `uniform(key, 0)`.
pub fn offparam_indices(log_g_phi: &[f64], key: StreamKey) -> Result<Vec<usize>> {
    systematic_resample(log_g_phi, key.uniform(0), key.time_index as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Purpose;
    use proptest::prelude::*;

    fn logs(w: &[f64]) -> Vec<f64> {
        w.iter().map(|x| x.ln()).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(
            systematic_resample(&logs(&[0.5, 0.5]), 0.6, 1).unwrap(),
            vec![0, 1]
        );
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(
                systematic_resample(&logs(&[1.0, 0.0, 0.0]), u, 1).unwrap(),
                vec![0, 0, 0]
            );
        }
        assert_eq!(
            systematic_resample(&logs(&[0.1, 0.2, 0.7]), 0.5, 1).unwrap(),
            vec![1, 2, 2]
        );
        // a grid point on a boundary goes to the lower index
        assert_eq!(
            systematic_resample(&logs(&[0.5, 0.5]), 0.0, 1).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn all_zero_weights_are_degenerate() {
        let err = systematic_resample(&[f64::NEG_INFINITY; 4], 0.2, 7).unwrap_err();
        assert!(matches!(err, Error::Degenerate { step: 7 }));
    }

    #[test]
    fn offparam_examples() {
        let key = StreamKey::new(3, 2, 0, Purpose::Resample);
        assert_eq!(
            offparam_indices(&[0.0; 5], key).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
        assert_eq!(
            offparam_indices(&[0.0, f64::NEG_INFINITY], key).unwrap(),
            vec![0, 0]
        );
    }

    #[test]
    fn unbiased_over_offsets() {
        let w = [0.05, 0.4, 0.15, 0.3, 0.1];
        let lw = logs(&w);
        let reps = 10_000;
        let mut counts = [0.0; 5];
        let mut sq = [0.0; 5];
        for r in 0..reps {
            let u = StreamKey::new(1, r, 0, Purpose::Resample).uniform(0);
            let idx = systematic_resample(&lw, u, 1).unwrap();
            let mut c = [0.0; 5];
            for i in idx {
                c[i] += 1.0 / 5.0;
            }
            for m in 0..5 {
                counts[m] += c[m];
                sq[m] += c[m] * c[m];
            }
        }
        for m in 0..5 {
            let mean = counts[m] / reps as f64;
            let var = sq[m] / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt().max(1e-12);
            assert!(
                (mean - w[m]).abs() < 3.0 * se + 1e-12,
                "{m}: {mean} vs {}",
                w[m]
            );
        }
    }

    proptest! {
        #[test]
        fn count_property(w in proptest::collection::vec(0.0f64..1.0, 1..40), u in 0.0f64..1.0) {
            prop_assume!(w.iter().any(|&x| x > 0.0));
            let lw = logs(&w);
            let idx = systematic_resample(&lw, u, 1).unwrap();
            prop_assert_eq!(idx.len(), w.len());
            prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
            let total: f64 = w.iter().sum();
            let n = w.len() as f64;
            for (m, &wm) in w.iter().enumerate() {
                let count = idx.iter().filter(|&&i| i == m).count() as f64;
                prop_assert!((count - n * wm / total).abs() < 1.0 + 1e-9);
                if wm == 0.0 {
                    prop_assert_eq!(count, 0.0);
                }
            }
        }

        #[test]
        fn deterministic(w in proptest::collection::vec(-5.0f64..5.0, 1..20), u in 0.0f64..1.0) {
            prop_assert_eq!(systematic_resample(&w, u, 1).unwrap(), systematic_resample(&w, u, 1).unwrap());
        }
    }
}
