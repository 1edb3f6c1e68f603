use std::sync::Arc;

use ndarray::ArrayView2;
use rand::{Rng, RngCore, SeedableRng};
use thiserror::Error;

use super::ppo::{ppo_update, PpoAgent, PpoConfig, RolloutBuffer};
use super::replay::{ReplayBuffer, ReplaySample};
use super::sac::{sac_update, SacAgent, SacConfig};
use super::schedule::lr_at;
use super::{Algorithm, IterationStats};
use crate::checkpoint::{ArrayData, Checkpoint, CheckpointError};
use crate::env::{EnvConfig, EnvError, EnvSnapshot, StepResult, VecEnv, ACT_DIM, OBS_DIM};
use crate::nets::{Adam, Mlp, Real};
use crate::rng::{RngState, SimRng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Everything that fixes a training run apart from its persistence.
#[derive(Debug, Clone)]
pub struct TrainerSetup {
    pub algorithm: Algorithm,
    pub env: Arc<EnvConfig>,
    pub n_envs: usize,
    pub seed: u64,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
}

/// Splits a run seed into per-env duct seeds, a network-init stream and a
/// training stream. All three are independent ChaCha streams of one key.
pub fn derive_seeds(seed: u64, n_envs: usize) -> (Vec<u64>, SimRng, SimRng) {
    let stream = |id: u64| {
        let mut r = SimRng::seed_from_u64(seed);
        r.set_stream(id);
        r
    };
    let mut env_stream = stream(1);
    let env_seeds = (0..n_envs).map(|_| env_stream.next_u64() >> 1).collect();
    (env_seeds, stream(2), stream(3))
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Agent {
    Ppo(PpoAgent),
    Sac { agent: SacAgent, replay: ReplayBuffer },
}

#[derive(Debug, Clone)]
pub struct Trainer {
    setup: TrainerSetup,
    envs: VecEnv,
    rng: SimRng,
    agent: Agent,
    iteration: u64,
    env_steps: u64,
}

fn flat_obs(results: &[StepResult]) -> Vec<f32> {
    results.iter().flat_map(|r| r.obs.to_f32()).collect()
}

fn mean_or_nan(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl Trainer {
    pub fn new(setup: TrainerSetup) -> Result<Self, TrainError> {
        let (env_seeds, mut init_rng, rng) = derive_seeds(setup.seed, setup.n_envs);
        let envs = VecEnv::new(Arc::clone(&setup.env), &env_seeds)?;
        let agent = match setup.algorithm {
            Algorithm::Ppo => Agent::Ppo(PpoAgent::new(&setup.ppo, &mut init_rng)),
            Algorithm::Sac => Agent::Sac {
                agent: SacAgent::new(&setup.sac, &mut init_rng),
                replay: ReplayBuffer::new(setup.sac.capacity),
            },
        };
        Ok(Self { setup, envs, rng, agent, iteration: 0, env_steps: 0 })
    }

    pub fn setup(&self) -> &TrainerSetup {
        &self.setup
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn envs(&self) -> &VecEnv {
        &self.envs
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Environment transitions gathered per iteration.
    pub fn steps_per_iteration(&self) -> u64 {
        let per_step = self.setup.n_envs as u64;
        match self.setup.algorithm {
            Algorithm::Ppo => per_step * self.setup.ppo.horizon as u64,
            Algorithm::Sac => per_step * self.setup.sac.steps_per_iteration as u64,
        }
    }

    /// Collects one iteration of experience and updates the agent.
    pub fn iterate(&mut self) -> Result<IterationStats, TrainError> {
        match self.agent {
            Agent::Ppo(_) => self.iterate_ppo(),
            Agent::Sac { .. } => self.iterate_sac(),
        }
    }

    fn iterate_ppo(&mut self) -> Result<IterationStats, TrainError> {
        let Agent::Ppo(agent) = &mut self.agent else { unreachable!() };
        let cfg = &self.setup.ppo;
        let n = self.envs.len();
        let mut buf = RolloutBuffer::new(n, cfg.horizon);
        buf.log_std = agent.log_std.clone();
        let mut obs: Vec<f32> = self.envs.observe().iter().flat_map(|o| o.to_f32()).collect();
        let (mut returns, mut lengths) = (Vec::new(), Vec::new());

        for _ in 0..cfg.horizon {
            let view = ArrayView2::from_shape((n, OBS_DIM), &obs[..]).unwrap();
            let (actions, means, log_probs) = agent.sample(view, &mut self.rng);
            let values = agent.values(view);
            let rows: Vec<[f64; ACT_DIM]> =
                actions.rows().into_iter().map(|a| std::array::from_fn(|j| a[j] as f64)).collect();
            let results = self.envs.step(&rows)?;

            let mut rewards: Vec<f64> = results.iter().map(|r| r.reward).collect();
            let truncated: Vec<usize> = (0..n).filter(|&i| results[i].truncated && !results[i].terminated).collect();
            if !truncated.is_empty() {
                let term: Vec<f32> = truncated
                    .iter()
                    .flat_map(|&i| results[i].info.terminal_observation.expect("auto-reset keeps it").to_f32())
                    .collect();
                let tv = agent.values(ArrayView2::from_shape((truncated.len(), OBS_DIM), &term[..]).unwrap());
                for (k, &i) in truncated.iter().enumerate() {
                    rewards[i] += cfg.gamma * tv[k] as f64;
                }
            }
            for r in &results {
                if let Some(ep) = r.info.episode {
                    returns.push(ep.metrics.total_reward);
                    lengths.push(ep.length as f64);
                }
            }
            let dones: Vec<bool> = results.iter().map(StepResult::done).collect();
            buf.push_step(
                &obs,
                actions.as_slice().unwrap(),
                means.as_slice().unwrap(),
                &log_probs,
                &values,
                &rewards,
                &dones,
            );
            obs = flat_obs(&results);
        }
        let last = agent.values(ArrayView2::from_shape((n, OBS_DIM), &obs[..]).unwrap());
        buf.finish(&last, cfg.gamma, cfg.lambda);
        let stats = ppo_update(agent, &buf, cfg, &mut self.rng);

        self.iteration += 1;
        self.env_steps += (n * cfg.horizon) as u64;
        Ok(IterationStats {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_reward: mean_or_nan(&returns),
            mean_ep_len: mean_or_nan(&lengths),
            kl: stats.kl,
            clip_frac: stats.clip_frac,
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
            alpha: f64::NAN,
            lr: stats.lr,
            episodes: returns.len(),
            fault: stats.fault,
        })
    }

    fn iterate_sac(&mut self) -> Result<IterationStats, TrainError> {
        let Agent::Sac { agent, replay } = &mut self.agent else { unreachable!() };
        let cfg = &self.setup.sac;
        let n = self.envs.len();
        let mut obs: Vec<f32> = self.envs.observe().iter().flat_map(|o| o.to_f32()).collect();
        let (mut returns, mut lengths) = (Vec::new(), Vec::new());
        let (mut actor_sum, mut critic_sum, mut updates) = (0.0, 0.0, 0usize);
        let mut fault = false;

        for _ in 0..cfg.steps_per_iteration {
            let actions: Vec<f32> = if replay.len() < cfg.warmup {
                (0..n * ACT_DIM).map(|_| self.rng.random_range(-1.0f32..=1.0)).collect()
            } else {
                let view = ArrayView2::from_shape((n, OBS_DIM), &obs[..]).unwrap();
                agent.sample(view, &mut self.rng).into_raw_vec_and_offset().0
            };
            let rows: Vec<[f64; ACT_DIM]> =
                actions.chunks_exact(ACT_DIM).map(|a| std::array::from_fn(|j| a[j] as f64)).collect();
            let results = self.envs.step(&rows)?;
            for (i, r) in results.iter().enumerate() {
                let next = r.info.terminal_observation.unwrap_or(r.obs).to_f32();
                replay.push(
                    &obs[i * OBS_DIM..(i + 1) * OBS_DIM],
                    &actions[i * ACT_DIM..(i + 1) * ACT_DIM],
                    r.reward as f32,
                    &next,
                    r.terminated,
                );
                if let Some(ep) = r.info.episode {
                    returns.push(ep.metrics.total_reward);
                    lengths.push(ep.length as f64);
                }
            }
            self.env_steps += n as u64;
            obs = flat_obs(&results);

            if replay.len() >= cfg.warmup.max(cfg.batch) {
                let lr = lr_at(self.env_steps, &cfg.lr);
                for _ in 0..n * cfg.updates_per_env_step {
                    let batch = replay.sample(&mut self.rng, cfg.batch);
                    let stats = sac_update(agent, &batch, cfg, lr, &mut self.rng);
                    fault |= stats.fault;
                    if !stats.fault {
                        actor_sum += stats.actor_loss;
                        critic_sum += stats.critic_loss;
                        updates += 1;
                    }
                }
            }
        }
        self.iteration += 1;
        let nan_if_none = |s: f64| if updates == 0 { f64::NAN } else { s / updates as f64 };
        Ok(IterationStats {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_reward: mean_or_nan(&returns),
            mean_ep_len: mean_or_nan(&lengths),
            kl: f64::NAN,
            clip_frac: f64::NAN,
            actor_loss: nan_if_none(actor_sum),
            critic_loss: nan_if_none(critic_sum),
            alpha: agent.alpha(),
            lr: lr_at(self.env_steps, &cfg.lr),
            episodes: returns.len(),
            fault,
        })
    }

    /// Full training state, enough to continue bitwise.
    pub fn to_checkpoint(&self, config_hash: &str, config_toml: &str) -> Checkpoint {
        let mut c = Checkpoint::new(
            self.setup.algorithm,
            self.iteration,
            self.env_steps,
            config_hash.to_string(),
            config_toml.to_string(),
        );
        match &self.agent {
            Agent::Ppo(a) => {
                push_net(&mut c, "actor", &a.actor, &a.actor_opt);
                push_net(&mut c, "critic", &a.critic, &a.critic_opt);
                c.push_f32("log_std", &a.log_std);
                push_adam(&mut c, "log_std", &a.log_std_opt);
                c.push_f64("lr", &[a.lr]);
            }
            Agent::Sac { agent: a, replay } => {
                push_net(&mut c, "actor", &a.actor, &a.actor_opt);
                push_net(&mut c, "q1", &a.q1, &a.q1_opt);
                push_net(&mut c, "q2", &a.q2, &a.q2_opt);
                c.push_f32("q1_target.params", &a.q1_target.params);
                c.push_f32("q2_target.params", &a.q2_target.params);
                c.push_f64("log_alpha", &[a.log_alpha]);
                push_adam(&mut c, "log_alpha", &a.alpha_opt);
                c.push_u64(
                    "replay.meta",
                    &[replay.capacity() as u64, replay.cursor() as u64, replay.pushed(), replay.len() as u64],
                );
                let rows = replay.len();
                c.push("replay.obs", &[rows, OBS_DIM], ArrayData::F32(replay.obs.clone()));
                c.push("replay.actions", &[rows, ACT_DIM], ArrayData::F32(replay.actions.clone()));
                c.push_f32("replay.rewards", &replay.rewards);
                c.push("replay.next_obs", &[rows, OBS_DIM], ArrayData::F32(replay.next_obs.clone()));
                c.push_f32("replay.dones", &replay.dones);
            }
        }
        let snaps = self.envs.snapshots();
        let (mut fw, mut uw) = (Vec::new(), Vec::new());
        for s in &snaps {
            let (f, u) = s.to_words();
            fw.extend(f);
            uw.extend(u);
        }
        c.push("envs.f64", &[snaps.len(), EnvSnapshot::F64_WORDS], ArrayData::F64(fw));
        c.push("envs.u64", &[snaps.len(), EnvSnapshot::U64_WORDS], ArrayData::U64(uw));
        c.push_u64("rng.trainer", &RngState::capture(&self.rng).to_words());
        c
    }

    /// Rebuilds a trainer from `setup` and overwrites its state from `ckpt`.
    pub fn from_checkpoint(setup: TrainerSetup, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        if ckpt.algorithm != setup.algorithm {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint was trained with {}, config selects {}",
                ckpt.algorithm, setup.algorithm
            ))
            .into());
        }
        let mut t = Self::new(setup)?;
        match &mut t.agent {
            Agent::Ppo(a) => {
                load_net(ckpt, "actor", &mut a.actor, &mut a.actor_opt)?;
                load_net(ckpt, "critic", &mut a.critic, &mut a.critic_opt)?;
                a.log_std.copy_from_slice(ckpt.f32s("log_std", Some(ACT_DIM))?);
                load_adam(ckpt, "log_std", &mut a.log_std_opt)?;
                a.lr = ckpt.f64s("lr", Some(1))?[0];
            }
            Agent::Sac { agent: a, replay } => {
                load_net(ckpt, "actor", &mut a.actor, &mut a.actor_opt)?;
                load_net(ckpt, "q1", &mut a.q1, &mut a.q1_opt)?;
                load_net(ckpt, "q2", &mut a.q2, &mut a.q2_opt)?;
                let n = a.q1.num_params();
                a.q1_target.params.copy_from_slice(ckpt.f32s("q1_target.params", Some(n))?);
                a.q2_target.params.copy_from_slice(ckpt.f32s("q2_target.params", Some(n))?);
                a.log_alpha = ckpt.f64s("log_alpha", Some(1))?[0];
                load_adam(ckpt, "log_alpha", &mut a.alpha_opt)?;
                let meta = ckpt.u64s("replay.meta", Some(4))?;
                let rows = meta[3] as usize;
                let capacity = meta[0] as usize;
                if capacity != replay.capacity() || rows > capacity || meta[1] as usize >= capacity {
                    return Err(CheckpointError::Mismatch("replay capacity differs from config".into()).into());
                }
                let parts = ReplaySample {
                    obs: ckpt.f32s("replay.obs", Some(rows * OBS_DIM))?.to_vec(),
                    actions: ckpt.f32s("replay.actions", Some(rows * ACT_DIM))?.to_vec(),
                    rewards: ckpt.f32s("replay.rewards", Some(rows))?.to_vec(),
                    next_obs: ckpt.f32s("replay.next_obs", Some(rows * OBS_DIM))?.to_vec(),
                    dones: ckpt.f32s("replay.dones", Some(rows))?.to_vec(),
                };
                *replay = ReplayBuffer::from_parts(capacity, meta[1] as usize, meta[2], parts);
            }
        }
        let n = t.envs.len();
        let fw = ckpt.f64s("envs.f64", Some(n * EnvSnapshot::F64_WORDS))?;
        let uw = ckpt.u64s("envs.u64", Some(n * EnvSnapshot::U64_WORDS))?;
        let snaps: Vec<EnvSnapshot> = fw
            .chunks_exact(EnvSnapshot::F64_WORDS)
            .zip(uw.chunks_exact(EnvSnapshot::U64_WORDS))
            .map(|(f, u)| EnvSnapshot::from_words(f, u))
            .collect();
        t.envs.restore(&snaps)?;
        t.rng = RngState::from_words(ckpt.u64s("rng.trainer", Some(RngState::WORDS))?).restore();
        t.iteration = ckpt.iteration;
        t.env_steps = ckpt.env_steps;
        Ok(t)
    }
}

fn push_adam<F: Real>(c: &mut Checkpoint, name: &str, opt: &Adam<F>) {
    let to_f64 = |v: &[F]| v.iter().map(|x| x.to_f64().unwrap()).collect::<Vec<f64>>();
    // Moments keep the parameter precision.
    if std::mem::size_of::<F>() == 4 {
        let as_f32 = |v: &[F]| v.iter().map(|x| x.to_f32().unwrap()).collect::<Vec<f32>>();
        c.push_f32(&format!("{name}.adam.m"), &as_f32(&opt.m));
        c.push_f32(&format!("{name}.adam.v"), &as_f32(&opt.v));
    } else {
        c.push_f64(&format!("{name}.adam.m"), &to_f64(&opt.m));
        c.push_f64(&format!("{name}.adam.v"), &to_f64(&opt.v));
    }
    c.push_u64(&format!("{name}.adam.t"), &[opt.t]);
}

fn load_adam<F: Real>(c: &Checkpoint, name: &str, opt: &mut Adam<F>) -> Result<(), CheckpointError> {
    let n = opt.m.len();
    let (m, v): (Vec<F>, Vec<F>) = if std::mem::size_of::<F>() == 4 {
        let conv = |s: &[f32]| s.iter().map(|&x| F::from(x).unwrap()).collect();
        (conv(c.f32s(&format!("{name}.adam.m"), Some(n))?), conv(c.f32s(&format!("{name}.adam.v"), Some(n))?))
    } else {
        let conv = |s: &[f64]| s.iter().map(|&x| F::from(x).unwrap()).collect();
        (conv(c.f64s(&format!("{name}.adam.m"), Some(n))?), conv(c.f64s(&format!("{name}.adam.v"), Some(n))?))
    };
    opt.m = m;
    opt.v = v;
    opt.t = c.u64s(&format!("{name}.adam.t"), Some(1))?[0];
    Ok(())
}

fn push_net(c: &mut Checkpoint, name: &str, net: &Mlp<f32>, opt: &Adam<f32>) {
    c.push_f32(&format!("{name}.params"), &net.params);
    push_adam(c, name, opt);
}

fn load_net(c: &Checkpoint, name: &str, net: &mut Mlp<f32>, opt: &mut Adam<f32>) -> Result<(), CheckpointError> {
    let n = net.num_params();
    net.params.copy_from_slice(c.f32s(&format!("{name}.params"), Some(n))?);
    load_adam(c, name, opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::DuctParams;

    fn setup(algorithm: Algorithm) -> TrainerSetup {
        let env = EnvConfig {
            duct: DuctParams { n_segments: 2, max_bend_angle: 0.0, ..DuctParams::default() },
            episode: crate::env::EpisodeSettings { max_steps: 40, spawn_arc: 0.2 },
            ..EnvConfig::default()
        };
        TrainerSetup {
            algorithm,
            env: Arc::new(env),
            n_envs: 4,
            seed: 9,
            ppo: PpoConfig { horizon: 16, hidden: vec![16], ..PpoConfig::default() },
            sac: SacConfig {
                hidden: vec![16],
                batch: 16,
                capacity: 500,
                warmup: 40,
                steps_per_iteration: 12,
                ..SacConfig::default()
            },
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let (a, _, _) = derive_seeds(5, 8);
        let (b, _, _) = derive_seeds(5, 8);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
        assert!(a.iter().all(|&s| s < 1 << 63));
    }

    #[test]
    fn ppo_iteration_counts() {
        let mut t = Trainer::new(setup(Algorithm::Ppo)).unwrap();
        let s = t.iterate().unwrap();
        assert_eq!((s.iteration, s.env_steps), (1, 64));
        assert!(s.alpha.is_nan() && !s.fault);
        // 40-step episodes: within three 16-step horizons every env has ended once.
        let ended = s.episodes + t.iterate().unwrap().episodes + t.iterate().unwrap().episodes;
        assert!(ended >= 4);
    }

    #[test]
    fn sac_warmup_then_updates() {
        let mut t = Trainer::new(setup(Algorithm::Sac)).unwrap();
        let s1 = t.iterate().unwrap();
        // 12 steps x 4 envs = 48 transitions, warmup 40 reached at step 10.
        assert!(s1.critic_loss.is_finite());
        assert!(s1.alpha > 0.0);
        let Agent::Sac { replay, .. } = t.agent() else { panic!() };
        assert_eq!(replay.len(), 48);
    }

    #[test]
    fn sac_no_update_before_warmup() {
        let mut cfg = setup(Algorithm::Sac);
        cfg.sac.warmup = 100;
        let mut t = Trainer::new(cfg).unwrap();
        let s = t.iterate().unwrap();
        assert!(s.critic_loss.is_nan());
        assert_eq!(s.alpha, 1.0);
    }

    fn resume_matches(algorithm: Algorithm) {
        let mut a = Trainer::new(setup(algorithm)).unwrap();
        a.iterate().unwrap();
        let ckpt = a.to_checkpoint("h", "");
        let bytes = ckpt.to_bytes();
        let mut b = Trainer::from_checkpoint(setup(algorithm), &Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(b.to_checkpoint("h", "").to_bytes(), bytes);
        for _ in 0..2 {
            let sa = a.iterate().unwrap();
            let sb = b.iterate().unwrap();
            assert_eq!(sa.csv_line(), sb.csv_line());
        }
        assert_eq!(a.agent(), b.agent());
    }

    #[test]
    fn ppo_resume_is_bitwise() {
        resume_matches(Algorithm::Ppo);
    }

    #[test]
    fn sac_resume_is_bitwise() {
        resume_matches(Algorithm::Sac);
    }

    #[test]
    fn algorithm_mismatch_rejected() {
        let a = Trainer::new(setup(Algorithm::Ppo)).unwrap();
        let c = a.to_checkpoint("h", "");
        assert!(Trainer::from_checkpoint(setup(Algorithm::Sac), &c).is_err());
    }
}
