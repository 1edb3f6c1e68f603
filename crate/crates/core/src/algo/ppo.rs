use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gae::{clipped_surrogate, compute_gae};
use crate::env::{ACT_DIM, OBS_DIM};
use crate::nets::dist::{gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grad};
use crate::nets::{Adam, Mlp, MlpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub kl_target: f64,
    /// The lr shrinks when KL exceeds `kl_high * kl_target`.
    pub kl_high: f64,
    /// The lr grows when KL falls below `kl_low * kl_target`.
    pub kl_low: f64,
    pub lr_factor: f64,
    pub lr: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            horizon: 256,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            kl_target: 0.01,
            kl_high: 2.0,
            kl_low: 0.5,
            lr_factor: 1.5,
            lr: 1e-3,
            lr_min: 1e-6,
            lr_max: 1e-2,
            epochs: 5,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: 0.005,
            max_grad_norm: 1.0,
            hidden: vec![256, 128],
            init_log_std: 0.0,
        }
    }
}

impl PpoConfig {
    /// Checks invariants; the error names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.horizon == 0 {
            return Err("ppo.horizon must be positive".into());
        }
        if !unit(self.gamma) {
            return Err(format!("ppo.gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !unit(self.lambda) {
            return Err(format!("ppo.lambda must lie in (0, 1], got {}", self.lambda));
        }
        if !(self.clip > 0.0) {
            return Err(format!("ppo.clip must be positive, got {}", self.clip));
        }
        if !(self.kl_target > 0.0) {
            return Err(format!("ppo.kl_target must be positive, got {}", self.kl_target));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err("ppo.lr_min must be positive and at most ppo.lr_max".into());
        }
        if !(self.lr >= self.lr_min && self.lr <= self.lr_max) {
            return Err(format!("ppo.lr must lie in [lr_min, lr_max], got {}", self.lr));
        }
        if !(self.lr_factor > 1.0) {
            return Err("ppo.lr_factor must exceed 1".into());
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return Err("ppo.epochs and ppo.minibatches must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err("ppo.hidden must list positive widths".into());
        }
        if !(self.max_grad_norm > 0.0) {
            return Err("ppo.max_grad_norm must be positive".into());
        }
        Ok(())
    }
}

/// Gaussian actor with a state-independent log std, plus a separate critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoAgent {
    pub actor: Mlp<f32>,
    pub critic: Mlp<f32>,
    pub log_std: Vec<f32>,
    pub actor_opt: Adam<f32>,
    pub critic_opt: Adam<f32>,
    pub log_std_opt: Adam<f32>,
    pub lr: f64,
}

impl PpoAgent {
    pub fn new<R: Rng>(cfg: &PpoConfig, rng: &mut R) -> Self {
        let mut actor = Mlp::new(MlpSpec::new(OBS_DIM, &cfg.hidden, ACT_DIM)).expect("validated widths");
        let mut critic = Mlp::new(MlpSpec::new(OBS_DIM, &cfg.hidden, 1)).expect("validated widths");
        actor.init(rng, 0.01);
        critic.init(rng, 1.0);
        Self {
            actor_opt: Adam::new(actor.num_params()),
            critic_opt: Adam::new(critic.num_params()),
            log_std_opt: Adam::new(ACT_DIM),
            actor,
            critic,
            log_std: vec![cfg.init_log_std as f32; ACT_DIM],
            lr: cfg.lr,
        }
    }

    /// Mean actions for a batch, one observation per row.
    pub fn act_mean(&self, obs: ArrayView2<f32>) -> Array2<f32> {
        self.actor.predict(obs).expect("observation width")
    }

    pub fn values(&self, obs: ArrayView2<f32>) -> Vec<f32> {
        self.critic.predict(obs).expect("observation width").into_raw_vec_and_offset().0
    }

    /// Draws one action per row; returns `(actions, means, log_probs)`.
    pub fn sample<R: Rng>(&self, obs: ArrayView2<f32>, rng: &mut R) -> (Array2<f32>, Array2<f32>, Vec<f32>) {
        let means = self.act_mean(obs);
        let mut actions = means.clone();
        let mut log_probs = Vec::with_capacity(means.nrows());
        for (mut a, m) in actions.rows_mut().into_iter().zip(means.rows()) {
            for j in 0..ACT_DIM {
                let eps: f32 = rng.sample(StandardNormal);
                a[j] = m[j] + self.log_std[j].exp() * eps;
            }
            log_probs.push(gaussian_log_prob(m.as_slice().unwrap(), &self.log_std, a.as_slice().unwrap()));
        }
        (actions, means, log_probs)
    }
}

/// One horizon of transitions for `n_envs` lock-stepped envs, stored
/// time-major (`index = t * n_envs + env`).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub horizon: usize,
    steps: usize,
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub means: Vec<f32>,
    /// Policy log std at collection time.
    pub log_std: Vec<f32>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, horizon: usize) -> Self {
        let n = n_envs * horizon;
        Self {
            n_envs,
            horizon,
            steps: 0,
            obs: Vec::with_capacity(n * OBS_DIM),
            actions: Vec::with_capacity(n * ACT_DIM),
            means: Vec::with_capacity(n * ACT_DIM),
            log_std: vec![0.0; ACT_DIM],
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps * self.n_envs
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn is_full(&self) -> bool {
        self.steps == self.horizon
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.n_envs, self.horizon);
    }

    /// Appends one lock-step of all envs.
    #[allow(clippy::too_many_arguments)]
    pub fn push_step(
        &mut self,
        obs: &[f32],
        actions: &[f32],
        means: &[f32],
        log_probs: &[f32],
        values: &[f32],
        rewards: &[f64],
        dones: &[bool],
    ) {
        assert!(!self.is_full(), "rollout buffer already holds a full horizon");
        let n = self.n_envs;
        assert!(obs.len() == n * OBS_DIM && actions.len() == n * ACT_DIM && rewards.len() == n);
        self.obs.extend_from_slice(obs);
        self.actions.extend_from_slice(actions);
        self.means.extend_from_slice(means);
        self.log_probs.extend_from_slice(log_probs);
        self.values.extend_from_slice(values);
        self.rewards.extend_from_slice(rewards);
        self.dones.extend_from_slice(dones);
        self.steps += 1;
    }

    /// Fills advantages and returns from the critic's values at the state
    /// following the last step, then normalizes advantages.
    pub fn finish(&mut self, last_values: &[f32], gamma: f64, lambda: f64) {
        assert!(self.is_full(), "rollout buffer finished before the horizon");
        let (n, h) = (self.n_envs, self.horizon);
        let mut adv = vec![0.0f64; n * h];
        let mut ret = vec![0.0f64; n * h];
        for e in 0..n {
            let col = |v: &dyn Fn(usize) -> f64| (0..h).map(|t| v(t * n + e)).collect::<Vec<f64>>();
            let rewards = col(&|i| self.rewards[i]);
            let values = col(&|i| self.values[i] as f64);
            let dones: Vec<bool> = (0..h).map(|t| self.dones[t * n + e]).collect();
            let (a, r) = compute_gae(&rewards, &values, &dones, last_values[e] as f64, gamma, lambda);
            for t in 0..h {
                adv[t * n + e] = a[t];
                ret[t * n + e] = r[t];
            }
        }
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64;
        let scale = 1.0 / (var.sqrt() + 1e-8);
        self.advantages = adv.iter().map(|a| ((a - mean) * scale) as f32).collect();
        self.returns = ret.iter().map(|&r| r as f32).collect();
    }

    fn gather(src: &[f32], width: usize, idx: &[usize]) -> Array2<f32> {
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        Array2::from_shape_vec((idx.len(), width), out).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    /// Mean KL(old || new) over the buffer after the last epoch.
    pub kl: f64,
    pub clip_frac: f64,
    /// Learning rate after the adaptive rule.
    pub lr: f64,
    /// Non-finite loss or gradient; parameters were restored.
    pub fault: bool,
}

/// Exact KL between two diagonal Gaussians, `KL(old || new)`.
pub fn diag_gaussian_kl(mean_old: &[f32], ls_old: &[f32], mean_new: &[f32], ls_new: &[f32]) -> f64 {
    let mut kl = 0.0;
    for j in 0..mean_old.len() {
        let (so, sn) = ((ls_old[j] as f64).exp(), (ls_new[j] as f64).exp());
        let dm = mean_old[j] as f64 - mean_new[j] as f64;
        kl += ls_new[j] as f64 - ls_old[j] as f64 + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5;
    }
    kl
}

/// Adaptive-KL learning rate step.
pub fn adapt_lr(lr: f64, kl: f64, cfg: &PpoConfig) -> f64 {
    let next = if kl > cfg.kl_high * cfg.kl_target {
        lr / cfg.lr_factor
    } else if kl < cfg.kl_low * cfg.kl_target {
        lr * cfg.lr_factor
    } else {
        lr
    };
    next.clamp(cfg.lr_min, cfg.lr_max)
}

fn all_finite(v: &[f32]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Clipped-surrogate update over a full rollout buffer.
pub fn ppo_update<R: Rng>(agent: &mut PpoAgent, buffer: &RolloutBuffer, cfg: &PpoConfig, rng: &mut R) -> PpoStats {
    assert!(buffer.is_full() && buffer.advantages.len() == buffer.len(), "buffer must be finished");
    let backup = agent.clone();
    let total = buffer.len();
    let mb_size = total.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..total).collect();
    let (mut actor_sum, mut critic_sum, mut ent_sum, mut clip_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut n_batches = 0usize;
    let mut kl = 0.0;

    let mut g_actor = vec![0.0f32; agent.actor.num_params()];
    let mut g_critic = vec![0.0f32; agent.critic.num_params()];
    let mut g_std = vec![0.0f32; ACT_DIM];

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb_size) {
            let m = idx.len();
            let obs = RolloutBuffer::gather(&buffer.obs, OBS_DIM, idx);
            let actions = RolloutBuffer::gather(&buffer.actions, ACT_DIM, idx);
            let pass_a = agent.actor.forward(obs.view()).expect("obs width");
            let pass_c = agent.critic.forward(obs.view()).expect("obs width");

            let mut d_mean = Array2::<f32>::zeros((m, ACT_DIM));
            g_std.fill(0.0);
            let mut d_v = Array2::<f32>::zeros((m, 1));
            let (mut actor_loss, mut critic_loss, mut clipped) = (0.0f64, 0.0f64, 0usize);
            let inv_m = 1.0 / m as f64;
            let mut dm = [0.0f32; ACT_DIM];
            let mut dls = [0.0f32; ACT_DIM];
            for (r, &i) in idx.iter().enumerate() {
                let mean = pass_a.output.row(r);
                let mean = mean.as_slice().unwrap();
                let a = actions.row(r);
                let a = a.as_slice().unwrap();
                let logp = gaussian_log_prob(mean, &agent.log_std, a) as f64;
                let ratio = (logp - buffer.log_probs[i] as f64).exp();
                let adv = buffer.advantages[i] as f64;
                actor_loss -= clipped_surrogate(ratio, adv, cfg.clip) * inv_m;
                if (ratio - 1.0).abs() > cfg.clip {
                    clipped += 1;
                }
                let unclipped_active = ratio * adv <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
                if unclipped_active {
                    let g = (-ratio * adv * inv_m) as f32;
                    gaussian_log_prob_grad(mean, &agent.log_std, a, &mut dm, &mut dls);
                    for j in 0..ACT_DIM {
                        d_mean[[r, j]] = g * dm[j];
                        g_std[j] += g * dls[j];
                    }
                }
                let v = pass_c.output[[r, 0]] as f64;
                let err = v - buffer.returns[i] as f64;
                critic_loss += err * err * inv_m;
                d_v[[r, 0]] = (cfg.value_coef * 2.0 * err * inv_m) as f32;
            }
            // Entropy bonus: d(-c * H)/d log_std_j = -c.
            let entropy = gaussian_entropy(&agent.log_std) as f64;
            for g in g_std.iter_mut() {
                *g -= cfg.entropy_coef as f32;
            }

            g_actor.fill(0.0);
            g_critic.fill(0.0);
            agent.actor.backward(&pass_a, d_mean.view(), &mut g_actor);
            agent.critic.backward(&pass_c, d_v.view(), &mut g_critic);

            let loss = actor_loss + cfg.value_coef * critic_loss - cfg.entropy_coef * entropy;
            if !loss.is_finite() || !all_finite(&g_actor) || !all_finite(&g_critic) || !all_finite(&g_std) {
                *agent = backup;
                return PpoStats { lr: agent.lr, fault: true, ..PpoStats::default() };
            }
            let norm = [&g_actor[..], &g_critic[..], &g_std[..]]
                .iter()
                .flat_map(|g| g.iter())
                .map(|&g| (g as f64) * (g as f64))
                .sum::<f64>()
                .sqrt();
            if norm > cfg.max_grad_norm {
                let s = (cfg.max_grad_norm / norm) as f32;
                for g in g_actor.iter_mut().chain(g_critic.iter_mut()).chain(g_std.iter_mut()) {
                    *g *= s;
                }
            }
            let lr = agent.lr as f32;
            agent.actor_opt.step(&mut agent.actor.params, &g_actor, lr);
            agent.critic_opt.step(&mut agent.critic.params, &g_critic, lr);
            agent.log_std_opt.step(&mut agent.log_std, &g_std, lr);

            actor_sum += actor_loss;
            critic_sum += critic_loss;
            ent_sum += entropy;
            clip_sum += clipped as f64 * inv_m;
            n_batches += 1;
        }

        let obs = ArrayView2::from_shape((total, OBS_DIM), &buffer.obs[..]).unwrap();
        let means = agent.act_mean(obs);
        let mut kl_sum = 0.0;
        for (i, row) in means.rows().into_iter().enumerate() {
            kl_sum += diag_gaussian_kl(
                &buffer.means[i * ACT_DIM..(i + 1) * ACT_DIM],
                &buffer.log_std,
                row.as_slice().unwrap(),
                &agent.log_std,
            );
        }
        kl = kl_sum / total as f64;
        if !kl.is_finite() || !all_finite(&agent.log_std) {
            *agent = backup;
            return PpoStats { lr: agent.lr, fault: true, ..PpoStats::default() };
        }
        agent.lr = adapt_lr(agent.lr, kl, cfg);
    }

    let nb = n_batches as f64;
    PpoStats {
        actor_loss: actor_sum / nb,
        critic_loss: critic_sum / nb,
        entropy: ent_sum / nb,
        kl,
        clip_frac: clip_sum / nb,
        lr: agent.lr,
        fault: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn filled_buffer(agent: &PpoAgent, n_envs: usize, horizon: usize, seed: u64) -> RolloutBuffer {
        let mut rng = seeded(seed);
        let mut buf = RolloutBuffer::new(n_envs, horizon);
        buf.log_std = agent.log_std.clone();
        for t in 0..horizon {
            let obs = Array2::from_shape_fn((n_envs, OBS_DIM), |_| rng.random_range(-1.0f32..1.0));
            let (a, m, lp) = agent.sample(obs.view(), &mut rng);
            let v = agent.values(obs.view());
            // Reward favours positive first action component.
            let r: Vec<f64> = a.rows().into_iter().map(|row| row[0] as f64).collect();
            let dones: Vec<bool> = (0..n_envs).map(|e| (t + e) % 17 == 0).collect();
            buf.push_step(obs.as_slice().unwrap(), a.as_slice().unwrap(), m.as_slice().unwrap(), &lp, &v, &r, &dones);
        }
        buf.finish(&vec![0.0; n_envs], 0.99, 0.95);
        buf
    }

    fn small_cfg() -> PpoConfig {
        PpoConfig { hidden: vec![16, 16], horizon: 32, ..PpoConfig::default() }
    }

    #[test]
    fn defaults_validate() {
        assert!(PpoConfig::default().validate().is_ok());
        let bad = PpoConfig { gamma: 1.5, ..PpoConfig::default() };
        assert!(bad.validate().unwrap_err().contains("ppo.gamma"));
    }

    #[test]
    fn desk_buffer_size() {
        let cfg = PpoConfig { hidden: vec![8], ..PpoConfig::default() };
        let agent = PpoAgent::new(&cfg, &mut seeded(0));
        let buf = filled_buffer(&agent, 64, 64, 1);
        assert_eq!(buf.len(), 4096);
        assert_eq!(buf.advantages.len(), 4096);
    }

    #[test]
    fn advantages_are_normalized() {
        let cfg = small_cfg();
        let agent = PpoAgent::new(&cfg, &mut seeded(0));
        let buf = filled_buffer(&agent, 8, 32, 2);
        let n = buf.advantages.len() as f64;
        let mean = buf.advantages.iter().map(|&a| a as f64).sum::<f64>() / n;
        let var = buf.advantages.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5 && (var.sqrt() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let m = [0.1f32, -0.3, 0.7, 0.0];
        let ls = [0.0f32, -0.5, 0.2, 0.1];
        assert_eq!(diag_gaussian_kl(&m, &ls, &m, &ls), 0.0);
        assert!(diag_gaussian_kl(&m, &ls, &[0.2, -0.3, 0.7, 0.0], &ls) > 0.0);
    }

    #[test]
    fn adaptive_lr_rule() {
        let cfg = PpoConfig::default();
        assert!((adapt_lr(1e-3, 0.05, &cfg) - 1e-3 / 1.5).abs() < 1e-18);
        assert!((adapt_lr(1e-3, 0.001, &cfg) - 1.5e-3).abs() < 1e-18);
        assert_eq!(adapt_lr(1e-3, 0.01, &cfg), 1e-3);
        assert_eq!(adapt_lr(9e-3, 0.0, &cfg), 1e-2);
        assert_eq!(adapt_lr(1e-6, 1.0, &cfg), 1e-6);
    }

    #[test]
    fn update_stats_in_range_and_improves_objective() {
        let cfg = small_cfg();
        let mut agent = PpoAgent::new(&cfg, &mut seeded(3));
        let mut rng = seeded(4);
        for it in 0..3 {
            let buf = filled_buffer(&agent, 8, 32, 10 + it);
            let stats = ppo_update(&mut agent, &buf, &cfg, &mut rng);
            assert!(!stats.fault);
            assert!((0.0..=1.0).contains(&stats.clip_frac));
            assert!(stats.kl > -1e-3);
            assert!(stats.lr >= cfg.lr_min && stats.lr <= cfg.lr_max);
        }
        // Reward is the first action component, so the mean should drift up.
        let obs = Array2::<f32>::zeros((1, OBS_DIM));
        let before = PpoAgent::new(&cfg, &mut seeded(3)).act_mean(obs.view())[[0, 0]];
        assert!(agent.act_mean(obs.view())[[0, 0]] > before);
    }

    #[test]
    fn non_finite_advantage_restores_params() {
        let cfg = small_cfg();
        let mut agent = PpoAgent::new(&cfg, &mut seeded(5));
        let mut buf = filled_buffer(&agent, 4, 32, 6);
        buf.advantages[3] = f32::NAN;
        let before = agent.clone();
        let stats = ppo_update(&mut agent, &buf, &cfg, &mut seeded(7));
        assert!(stats.fault);
        assert_eq!(agent, before);
    }
}
