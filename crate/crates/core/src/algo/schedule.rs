use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrSchedule {
    /// `start` decaying linearly to zero at `decay_steps`, zero afterwards.
    Linear {
        start: f64,
        decay_steps: f64,
    },
    Constant {
        value: f64,
    },
}

impl LrSchedule {
    pub const SAC_DEFAULT: LrSchedule = LrSchedule::Linear { start: 3e-2, decay_steps: 1e6 };
    pub const SAC_CONSERVATIVE: LrSchedule = LrSchedule::Constant { value: 3e-4 };
}

pub fn lr_at(step: u64, schedule: &LrSchedule) -> f64 {
    match *schedule {
        LrSchedule::Linear { start, decay_steps } => (start * (1.0 - step as f64 / decay_steps)).max(0.0),
        LrSchedule::Constant { value } => value,
    }
}

/// Polyak averaging `target <- tau * source + (1 - tau) * target`.
pub fn soft_update<F: Float>(target: &mut [F], source: &[F], tau: F) {
    assert_eq!(target.len(), source.len());
    let keep = F::one() - tau;
    for (t, s) in target.iter_mut().zip(source) {
        *t = tau * *s + keep * *t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_decay_points() {
        let s = LrSchedule::SAC_DEFAULT;
        assert_eq!(lr_at(0, &s), 3e-2);
        assert!((lr_at(500_000, &s) - 1.5e-2).abs() < 1e-15);
        assert_eq!(lr_at(1_000_000, &s), 0.0);
        assert_eq!(lr_at(2_000_000, &s), 0.0);
        assert_eq!(lr_at(123, &LrSchedule::SAC_CONSERVATIVE), 3e-4);
    }

    #[test]
    fn soft_update_single_step() {
        let mut t = [0.0f64];
        soft_update(&mut t, &[1.0], 0.005);
        assert_eq!(t[0], 0.005);
    }

    #[test]
    fn soft_update_closed_form() {
        let tau = 0.005f64;
        let (theta, theta0) = (1.7, -0.4);
        let mut t = [theta0];
        for n in 1..=1000 {
            soft_update(&mut t, &[theta], tau);
            let keep = (1.0 - tau).powi(n);
            let closed = theta * (1.0 - keep) + theta0 * keep;
            assert!((t[0] - closed).abs() < 1e-9);
        }
    }
}
