use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::replay::ReplaySample;
use super::schedule::{soft_update, LrSchedule};
use crate::env::{ACT_DIM, OBS_DIM};
use crate::nets::dist::{
    clamp_log_std, squashed_actor_grad, squashed_sample, SquashedSample, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::nets::{Adam, Mlp, MlpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub capacity: usize,
    pub batch: usize,
    pub tau: f64,
    pub gamma: f64,
    pub lr: LrSchedule,
    pub target_entropy: f64,
    /// Transitions collected with uniform random actions before the first
    /// gradient step.
    pub warmup: usize,
    /// Gradient steps per environment transition.
    pub updates_per_env_step: usize,
    /// Lock-steps of the batch per logged iteration.
    pub steps_per_iteration: usize,
    pub init_alpha: f64,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            capacity: 1_000_000,
            batch: 512,
            tau: 0.005,
            gamma: 0.99,
            lr: LrSchedule::SAC_DEFAULT,
            target_entropy: -(ACT_DIM as f64),
            warmup: 5000,
            updates_per_env_step: 1,
            steps_per_iteration: 50,
            init_alpha: 1.0,
            hidden: vec![256, 128],
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(format!("sac.tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("sac.gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.batch == 0 || self.capacity < self.batch {
            return Err("sac.capacity must be at least sac.batch, and sac.batch positive".into());
        }
        match self.lr {
            LrSchedule::Linear { start, decay_steps } if !(start > 0.0 && decay_steps > 0.0) => {
                return Err("sac.lr start and decay_steps must be positive".into())
            }
            LrSchedule::Constant { value } if !(value > 0.0) => return Err("sac.lr value must be positive".into()),
            _ => {}
        }
        if self.updates_per_env_step == 0 || self.steps_per_iteration == 0 {
            return Err("sac.updates_per_env_step and sac.steps_per_iteration must be positive".into());
        }
        if !(self.init_alpha > 0.0) {
            return Err("sac.init_alpha must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err("sac.hidden must list positive widths".into());
        }
        Ok(())
    }
}

/// Soft Bellman target `r + gamma (1 - done) (min_q_next - alpha logp_next)`.
pub fn soft_q_target(reward: f64, gamma: f64, done: bool, min_q_next: f64, alpha: f64, logp_next: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (min_q_next - alpha * logp_next)
    }
}

/// Tanh-squashed actor, twin critics with lagged copies, and log-alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub actor: Mlp<f32>,
    pub q1: Mlp<f32>,
    pub q2: Mlp<f32>,
    pub q1_target: Mlp<f32>,
    pub q2_target: Mlp<f32>,
    pub actor_opt: Adam<f32>,
    pub q1_opt: Adam<f32>,
    pub q2_opt: Adam<f32>,
    pub log_alpha: f64,
    pub alpha_opt: Adam<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SacStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Entropy coefficient used in this update.
    pub alpha: f64,
    /// `-mean(log_prob)` of fresh actions.
    pub entropy: f64,
    pub fault: bool,
}

fn split_head(out: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
    let mean = out.slice(s![.., ..ACT_DIM]).to_owned();
    let log_std = out.slice(s![.., ACT_DIM..]).mapv(clamp_log_std);
    (mean, log_std)
}

fn critic_input(obs: ArrayView2<f32>, actions: ArrayView2<f32>) -> Array2<f32> {
    concatenate(Axis(1), &[obs, actions]).expect("matching rows")
}

fn all_finite(v: &[f32]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl SacAgent {
    pub fn new<R: Rng>(cfg: &SacConfig, rng: &mut R) -> Self {
        let mut actor = Mlp::new(MlpSpec::new(OBS_DIM, &cfg.hidden, 2 * ACT_DIM)).expect("validated widths");
        let mut q1 = Mlp::new(MlpSpec::new(OBS_DIM + ACT_DIM, &cfg.hidden, 1)).expect("validated widths");
        let mut q2 = q1.clone();
        actor.init(rng, 0.01);
        q1.init(rng, 1.0);
        q2.init(rng, 1.0);
        Self {
            actor_opt: Adam::new(actor.num_params()),
            q1_opt: Adam::new(q1.num_params()),
            q2_opt: Adam::new(q2.num_params()),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha: cfg.init_alpha.ln(),
            alpha_opt: Adam::new(1),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Deterministic actions `tanh(mean)`.
    pub fn act_mean(&self, obs: ArrayView2<f32>) -> Array2<f32> {
        let out = self.actor.predict(obs).expect("observation width");
        out.slice(s![.., ..ACT_DIM]).mapv(f32::tanh)
    }

    fn sample_rows<R: Rng>(&self, out: &Array2<f32>, rng: &mut R) -> (Vec<SquashedSample<f32>>, Array2<f32>) {
        let (mean, log_std) = split_head(out);
        let mut samples = Vec::with_capacity(out.nrows());
        let mut actions = Array2::zeros((out.nrows(), ACT_DIM));
        for r in 0..out.nrows() {
            let noise: Vec<f32> = (0..ACT_DIM).map(|_| rng.sample(StandardNormal)).collect();
            let smp = squashed_sample(mean.row(r).as_slice().unwrap(), log_std.row(r).as_slice().unwrap(), &noise);
            for j in 0..ACT_DIM {
                actions[[r, j]] = smp.action[j];
            }
            samples.push(smp);
        }
        (samples, actions)
    }

    /// Stochastic actions in `(-1, 1)`, one per row.
    pub fn sample<R: Rng>(&self, obs: ArrayView2<f32>, rng: &mut R) -> Array2<f32> {
        let out = self.actor.predict(obs).expect("observation width");
        self.sample_rows(&out, rng).1
    }
}

/// One gradient step on both critics, the actor and the temperature, then a
/// soft update of the target critics.
pub fn sac_update<R: Rng>(
    agent: &mut SacAgent,
    batch: &ReplaySample,
    cfg: &SacConfig,
    lr: f64,
    rng: &mut R,
) -> SacStats {
    let m = batch.rewards.len();
    let inv_m = 1.0 / m as f64;
    let backup = agent.clone();
    let fault = |agent: &mut SacAgent, backup: SacAgent| {
        *agent = backup;
        SacStats { alpha: agent.alpha(), fault: true, ..SacStats::default() }
    };
    let obs = ArrayView2::from_shape((m, OBS_DIM), &batch.obs[..]).unwrap();
    let next_obs = ArrayView2::from_shape((m, OBS_DIM), &batch.next_obs[..]).unwrap();
    let actions = ArrayView2::from_shape((m, ACT_DIM), &batch.actions[..]).unwrap();
    let alpha = agent.alpha();
    let lr32 = lr as f32;

    // Fresh actions for the actor and temperature losses.
    let pass_pi = agent.actor.forward(obs).expect("obs width");
    let (pi_samples, pi_actions) = agent.sample_rows(&pass_pi.output, rng);
    let mean_logp = pi_samples.iter().map(|s| s.log_prob as f64).sum::<f64>() * inv_m;

    // Temperature: loss alpha * mean(-logp - target_entropy), optimized in log space.
    let alpha_grad = alpha * (-mean_logp - cfg.target_entropy);
    if !alpha_grad.is_finite() {
        return fault(agent, backup);
    }
    agent.alpha_opt.step(std::slice::from_mut(&mut agent.log_alpha), &[alpha_grad], lr);

    // Critic targets.
    let next_out = agent.actor.predict(next_obs).expect("obs width");
    let (next_samples, next_actions) = agent.sample_rows(&next_out, rng);
    let next_in = critic_input(next_obs, next_actions.view());
    let q1n = agent.q1_target.predict(next_in.view()).expect("critic width");
    let q2n = agent.q2_target.predict(next_in.view()).expect("critic width");
    let y: Vec<f64> = (0..m)
        .map(|r| {
            let min_q = (q1n[[r, 0]] as f64).min(q2n[[r, 0]] as f64);
            soft_q_target(
                batch.rewards[r] as f64,
                cfg.gamma,
                batch.dones[r] > 0.5,
                min_q,
                alpha,
                next_samples[r].log_prob as f64,
            )
        })
        .collect();

    // Critic regression, 0.5 * (mse_1 + mse_2).
    let q_in = critic_input(obs, actions);
    let mut critic_loss = 0.0;
    for (q, opt) in [(&mut agent.q1, &mut agent.q1_opt), (&mut agent.q2, &mut agent.q2_opt)] {
        let pass = q.forward(q_in.view()).expect("critic width");
        let mut d = Array2::<f32>::zeros((m, 1));
        for r in 0..m {
            let err = pass.output[[r, 0]] as f64 - y[r];
            critic_loss += 0.5 * err * err * inv_m;
            d[[r, 0]] = (err * inv_m) as f32;
        }
        let mut g = vec![0.0f32; q.num_params()];
        q.backward(&pass, d.view(), &mut g);
        if !all_finite(&g) {
            critic_loss = f64::NAN;
            break;
        }
        opt.step(&mut q.params, &g, lr32);
    }
    if !critic_loss.is_finite() {
        return fault(agent, backup);
    }

    // Actor: minimize mean(alpha * logp - min(Q1, Q2)) through the sampled action.
    let pi_in = critic_input(obs, pi_actions.view());
    let p1 = agent.q1.forward(pi_in.view()).expect("critic width");
    let p2 = agent.q2.forward(pi_in.view()).expect("critic width");
    let mut d1 = Array2::<f32>::zeros((m, 1));
    let mut d2 = Array2::<f32>::zeros((m, 1));
    let mut actor_loss = 0.0;
    for r in 0..m {
        let (a, b) = (p1.output[[r, 0]], p2.output[[r, 0]]);
        let min_q = if a <= b {
            d1[[r, 0]] = 1.0;
            a
        } else {
            d2[[r, 0]] = 1.0;
            b
        };
        actor_loss += (alpha * pi_samples[r].log_prob as f64 - min_q as f64) * inv_m;
    }
    let mut scratch = vec![0.0f32; agent.q1.num_params()];
    let dx1 = agent.q1.backward(&p1, d1.view(), &mut scratch);
    scratch.fill(0.0);
    let dx2 = agent.q2.backward(&p2, d2.view(), &mut scratch);

    let (_, log_std) = split_head(&pass_pi.output);
    let mut d_out = Array2::<f32>::zeros((m, 2 * ACT_DIM));
    let mut d_mean = [0.0f32; ACT_DIM];
    let mut d_ls = [0.0f32; ACT_DIM];
    for r in 0..m {
        let dq_da: Vec<f32> = (0..ACT_DIM).map(|j| dx1[[r, OBS_DIM + j]] + dx2[[r, OBS_DIM + j]]).collect();
        let ls = log_std.row(r);
        squashed_actor_grad(&pi_samples[r], ls.as_slice().unwrap(), alpha as f32, &dq_da, &mut d_mean, &mut d_ls);
        for j in 0..ACT_DIM {
            d_out[[r, j]] = d_mean[j] * inv_m as f32;
            let raw = pass_pi.output[[r, ACT_DIM + j]] as f64;
            let inside = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
            d_out[[r, ACT_DIM + j]] = if inside { d_ls[j] * inv_m as f32 } else { 0.0 };
        }
    }
    let mut g_actor = vec![0.0f32; agent.actor.num_params()];
    agent.actor.backward(&pass_pi, d_out.view(), &mut g_actor);
    if !actor_loss.is_finite() || !critic_loss.is_finite() || !all_finite(&g_actor) {
        return fault(agent, backup);
    }
    agent.actor_opt.step(&mut agent.actor.params, &g_actor, lr32);

    let tau = cfg.tau as f32;
    soft_update(&mut agent.q1_target.params, &agent.q1.params, tau);
    soft_update(&mut agent.q2_target.params, &agent.q2.params, tau);

    if !agent.log_alpha.is_finite() {
        return fault(agent, backup);
    }
    SacStats { actor_loss, critic_loss, alpha, entropy: -mean_logp, fault: false }
}
