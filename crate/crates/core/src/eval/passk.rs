use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassAtKMethod {
    /// 1 if any of the k samples passed.
    Empirical,
    /// Unbiased estimate from n samples with c passes.
    Estimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub k: u32,
    pub method: PassAtKMethod,
    /// In `[0, 1]`.
    pub value: f64,
}

/// `1 - C(n-c, k) / C(n, k)`, evaluated as a running product so no
/// binomial coefficient is ever formed.
pub fn pass_at_k_estimator(n: u32, c: u32, k: u32) -> Result<PassAtK, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::PassAtK(format!("need 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")));
    }
    let value = if n - c < k {
        1.0
    } else {
        let mut miss = 1.0;
        for i in (n - c + 1)..=n {
            miss *= 1.0 - f64::from(k) / f64::from(i);
        }
        1.0 - miss
    };
    Ok(PassAtK { k, method: PassAtKMethod::Estimator, value })
}

/// Task-level empirical value for exactly `k` sample outcomes.
pub fn pass_at_k_empirical(passed: &[bool], k: u32) -> Result<PassAtK, EvalError> {
    if passed.len() != k as usize {
        return Err(EvalError::PassAtK(format!("expected {k} samples, got {}", passed.len())));
    }
    let value = if passed.iter().any(|&p| p) { 1.0 } else { 0.0 };
    Ok(PassAtK { k, method: PassAtKMethod::Empirical, value })
}

/// Mean of per-task values as a percentage.
pub fn dataset_percentage(task_values: &[f64]) -> f64 {
    if task_values.is_empty() {
        return 0.0;
    }
    100.0 * task_values.iter().sum::<f64>() / task_values.len() as f64
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_examples() {
        assert_eq!(pass_at_k_estimator(5, 0, 3).unwrap().value, 0.0);
        assert_eq!(pass_at_k_estimator(5, 5, 1).unwrap().value, 1.0);
        assert!((pass_at_k_estimator(5, 2, 1).unwrap().value - 0.4).abs() < 1e-12);
        // 1 - C(7,5)/C(10,5) = 1 - 21/252
        let expected = oracle::subset_enumeration(10, 3, 5);
        assert!((expected - (1.0 - 21.0 / 252.0)).abs() < 1e-15);
        assert!((pass_at_k_estimator(10, 3, 5).unwrap().value - 0.916_666_666_666).abs() < 1e-9);
    }

    #[test]
    fn estimator_matches_enumeration_on_small_grid() {
        for n in 1..=8 {
            for c in 0..=n {
                for k in 1..=n {
                    let got = pass_at_k_estimator(n, c, k).unwrap().value;
                    let want = oracle::subset_enumeration(n, c, k);
                    assert!((got - want).abs() <= 1e-12, "n={n} c={c} k={k}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn estimator_preconditions() {
        assert!(pass_at_k_estimator(5, 6, 1).is_err());
        assert!(pass_at_k_estimator(5, 1, 0).is_err());
        assert!(pass_at_k_estimator(5, 1, 6).is_err());
    }

    #[test]
    fn empirical_any_pass() {
        assert_eq!(pass_at_k_empirical(&[false, true, false], 3).unwrap().value, 1.0);
        assert_eq!(pass_at_k_empirical(&[false; 3], 3).unwrap().value, 0.0);
        assert!(pass_at_k_empirical(&[true; 2], 3).is_err());
        assert_eq!(dataset_percentage(&[1.0, 0.0, 1.0, 1.0]), 75.0);
    }
}
