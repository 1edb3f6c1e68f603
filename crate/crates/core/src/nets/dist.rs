//! Diagonal Gaussian policy heads and their analytic gradients.
//!
//! Everything operates on one sample (a row) at a time; callers loop over
//! batches.

use super::Real;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

fn half_ln_2pi<F: Real>() -> F {
    F::from(0.5 * (2.0 * std::f64::consts::PI).ln()).unwrap()
}

fn c<F: Real>(x: f64) -> F {
    F::from(x).unwrap()
}

pub fn gaussian_log_prob<F: Real>(mean: &[F], log_std: &[F], action: &[F]) -> F {
    let mut total = F::zero();
    for ((&m, &ls), &a) in mean.iter().zip(log_std).zip(action) {
        let z = (a - m) / ls.exp();
        total = total - c::<F>(0.5) * z * z - ls - half_ln_2pi();
    }
    total
}

/// Gradient of [`gaussian_log_prob`] with respect to `(mean, log_std)`.
pub fn gaussian_log_prob_grad<F: Real>(mean: &[F], log_std: &[F], action: &[F], d_mean: &mut [F], d_log_std: &mut [F]) {
    for i in 0..mean.len() {
        let inv_var = (-c::<F>(2.0) * log_std[i]).exp();
        let diff = action[i] - mean[i];
        d_mean[i] = diff * inv_var;
        d_log_std[i] = diff * diff * inv_var - F::one();
    }
}

pub fn gaussian_entropy<F: Real>(log_std: &[F]) -> F {
    log_std.iter().fold(F::zero(), |acc, &ls| acc + c::<F>(0.5) + half_ln_2pi::<F>() + ls)
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq<F: Real>(u: F) -> F {
    // 2 (ln 2 - u - softplus(-2u))
    let two = c::<F>(2.0);
    two * (c::<F>(std::f64::consts::LN_2) - u - softplus(-two * u))
}

pub fn softplus<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log density of `tanh(u)` where `u ~ N(mean, exp(log_std))`.
pub fn squashed_log_prob<F: Real>(mean: &[F], log_std: &[F], pre_tanh: &[F]) -> F {
    let base = gaussian_log_prob(mean, log_std, pre_tanh);
    pre_tanh.iter().fold(base, |acc, &u| acc - log_one_minus_tanh_sq(u))
}

pub fn clamp_log_std<F: Real>(raw: F) -> F {
    raw.max(c(LOG_STD_MIN)).min(c(LOG_STD_MAX))
}

/// One reparameterized draw from the tanh-squashed head.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample<F: Real> {
    pub noise: Vec<F>,
    pub pre_tanh: Vec<F>,
    pub action: Vec<F>,
    pub log_prob: F,
}

/// `u = mean + exp(log_std) * noise`, `a = tanh(u)`.
pub fn squashed_sample<F: Real>(mean: &[F], log_std: &[F], noise: &[F]) -> SquashedSample<F> {
    let pre_tanh: Vec<F> = (0..mean.len()).map(|i| mean[i] + log_std[i].exp() * noise[i]).collect();
    let action = pre_tanh.iter().map(|u| u.tanh()).collect();
    let log_prob = squashed_log_prob(mean, log_std, &pre_tanh);
    SquashedSample { noise: noise.to_vec(), pre_tanh, action, log_prob }
}

/// Gradients of `alpha * log_prob - q(action)` through the reparameterized
/// sample, given `dq_da = dq/d(action)`. Noise is held fixed.
pub fn squashed_actor_grad<F: Real>(
    sample: &SquashedSample<F>,
    log_std: &[F],
    alpha: F,
    dq_da: &[F],
    d_mean: &mut [F],
    d_log_std: &mut [F],
) {
    let two = c::<F>(2.0);
    for i in 0..log_std.len() {
        let a = sample.action[i];
        let sigma_eps = log_std[i].exp() * sample.noise[i];
        // d log_prob / du (noise fixed) = 2 tanh(u); d action / du = 1 - a^2.
        let du = alpha * two * a - dq_da[i] * (F::one() - a * a);
        d_mean[i] = du;
        d_log_std[i] = du * sigma_eps - alpha;
    }
}
