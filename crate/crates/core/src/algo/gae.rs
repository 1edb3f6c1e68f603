/// Generalized advantage estimation over one environment's sequence.
///
/// `dones[t]` masks the bootstrap from `t + 1`; truncated steps are expected
/// to carry their critic bootstrap inside `rewards[t]` already.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "sequence lengths differ");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Clipped surrogate for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let (a, r) = compute_gae(&[1.0], &[0.0], &[false], 0.0, 0.99, 0.95);
        assert_eq!((a[0], r[0]), (1.0, 1.0));
    }

    #[test]
    fn two_steps() {
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[false, false], 0.0, 0.99, 0.95);
        assert_eq!(a[1], 1.0);
        assert!((a[0] - 1.9405).abs() < 1e-12);
    }

    #[test]
    fn done_masks_future() {
        let (a, _) = compute_gae(&[2.0, 100.0, -7.0], &[0.5, 3.0, 1.0], &[true, false, false], 42.0, 0.99, 0.95);
        assert_eq!(a[0], 2.0 - 0.5);
    }

    #[test]
    fn surrogate_cases() {
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
        assert!((clipped_surrogate(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) - -0.8).abs() < 1e-15);
    }
}
