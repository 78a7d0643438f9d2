use crate::error::{check_dim, Result};

/// Advantages and the matching value targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    /// `advantages + values`, the critic's regression targets.
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation over one contiguous segment.
///
/// `dones[t]` cuts the bootstrap after step `t`. `last_value` bootstraps the
/// final step when the segment ends without `done`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageEstimate> {
    let n = rewards.len();
    check_dim(n, values.len())?;
    check_dim(n, dones.len())?;
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        acc = delta + gamma * lambda * live * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(AdvantageEstimate {
        advantages,
        returns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_one_gives_discounted_return_minus_value() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, 0.25, -1.0];
        let est = gae(&r, &v, &[false, false, true], 99.0, 0.9, 1.0).unwrap();
        let g2 = 3.0;
        let g1 = 2.0 + 0.9 * g2;
        let g0 = 1.0 + 0.9 * g1;
        for (a, (g, vv)) in est.advantages.iter().zip([g0, g1, g2].iter().zip(&v)) {
            assert!((a - (g - vv)).abs() < 1e-12);
        }
        for (ret, g) in est.returns.iter().zip([g0, g1, g2]) {
            assert!((ret - g).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [1.0, 0.0];
        let v = [0.3, 0.7];
        let est = gae(&r, &v, &[false, false], 2.0, 0.5, 0.0).unwrap();
        assert!((est.advantages[0] - (1.0 + 0.5 * 0.7 - 0.3)).abs() < 1e-15);
        assert!((est.advantages[1] - (0.0 + 0.5 * 2.0 - 0.7)).abs() < 1e-15);
    }

    #[test]
    fn done_blocks_bootstrap_across_episodes() {
        let est = gae(&[1.0, 1.0], &[0.0, 10.0], &[true, true], 10.0, 0.99, 0.95).unwrap();
        assert_eq!(est.advantages[0], 1.0);
        assert!((est.advantages[1] - (1.0 - 10.0)).abs() < 1e-15);
        assert!(gae(&[1.0], &[0.0, 1.0], &[true], 0.0, 0.9, 0.9).is_err());
    }

    fn brute_force(
        r: &[f64],
        v: &[f64],
        dones: &[bool],
        last: f64,
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = r.len();
        let delta = |k: usize| {
            let next = if dones[k] {
                0.0
            } else if k + 1 < n {
                v[k + 1]
            } else {
                last
            };
            r[k] + gamma * next - v[k]
        };
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                for l in 0..n - t {
                    sum += (gamma * lambda).powi(l as i32) * delta(t + l);
                    if dones[t + l] {
                        break;
                    }
                }
                sum
            })
            .collect()
    }

    proptest::proptest! {
        #[test]
        fn matches_the_brute_force_double_sum(
            steps in proptest::collection::vec((-2.0..2.0f64, -5.0..5.0f64, proptest::bool::weighted(0.1)), 1..50),
            last in -5.0..5.0f64,
            gamma in 0.5..0.999f64,
            lambda in 0.0..=1.0f64,
        ) {
            let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
            let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
            let d: Vec<bool> = steps.iter().map(|s| s.2).collect();
            let est = gae(&r, &v, &d, last, gamma, lambda).unwrap();
            for (a, b) in est.advantages.iter().zip(brute_force(&r, &v, &d, last, gamma, lambda)) {
                proptest::prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
        }
    }
}
