//! Lock-step batch of independent environments.
//!
//! Each env owns its RNG stream and duct, so stepping fans out across the
//! rayon pool and results are gathered back in slot order.

use std::sync::Arc;

use rayon::prelude::*;

use super::{DuctEnv, EnvConfig, EnvError, EnvSnapshot, ObsVector, StepInfo, StepResult, ACT_DIM, OBS_DIM};

#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<DuctEnv>,
}

/// Row-major array view of one batch step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatStep {
    pub obs: Vec<f32>,
    pub rewards: Vec<f32>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    pub infos: Vec<StepInfo>,
}

impl VecEnv {
    /// One env per seed, each reset on its seed.
    pub fn new(config: Arc<EnvConfig>, seeds: &[u64]) -> Result<Self, EnvError> {
        if seeds.is_empty() {
            return Err(EnvError::Config("batch needs at least one environment".into()));
        }
        let envs = seeds.iter().map(|&s| DuctEnv::new(Arc::clone(&config), s)).collect::<Result<_, _>>()?;
        Ok(Self { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[DuctEnv] {
        &self.envs
    }

    pub fn env_mut(&mut self, i: usize) -> &mut DuctEnv {
        &mut self.envs[i]
    }

    pub fn reset(&mut self, seeds: &[u64]) -> Result<Vec<ObsVector>, EnvError> {
        if seeds.len() != self.envs.len() {
            return Err(EnvError::Shape { expected: self.envs.len(), got: seeds.len() });
        }
        self.envs.par_iter_mut().zip(seeds).map(|(env, &s)| env.reset(s)).collect()
    }

    pub fn observe(&self) -> Vec<ObsVector> {
        self.envs.iter().map(DuctEnv::observe).collect()
    }

    /// Steps every env once. Finished envs are reset from their own stream;
    /// the returned observation is then the fresh one and the final one is
    /// kept in `info.terminal_observation`.
    pub fn step(&mut self, actions: &[[f64; ACT_DIM]]) -> Result<Vec<StepResult>, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::Shape { expected: self.envs.len(), got: actions.len() });
        }
        self.envs
            .par_iter_mut()
            .with_min_len(4)
            .zip(actions.par_iter())
            .map(|(env, action)| {
                let mut result = env.step(*action)?;
                if result.done() {
                    result.info.terminal_observation = Some(result.obs);
                    result.obs = env.auto_reset()?;
                }
                Ok(result)
            })
            .collect()
    }

    /// Array contract for foreign callers: `actions` is `n x 4` row-major.
    /// Shape is checked before any env is touched.
    pub fn step_flat(&mut self, actions: &[f32]) -> Result<FlatStep, EnvError> {
        let n = self.envs.len();
        if actions.len() != n * ACT_DIM {
            return Err(EnvError::Shape { expected: n * ACT_DIM, got: actions.len() });
        }
        let rows: Vec<[f64; ACT_DIM]> =
            actions.chunks_exact(ACT_DIM).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64]).collect();
        let results = self.step(&rows)?;
        let mut out = FlatStep {
            obs: Vec::with_capacity(n * OBS_DIM),
            rewards: Vec::with_capacity(n),
            terminated: Vec::with_capacity(n),
            truncated: Vec::with_capacity(n),
            infos: Vec::with_capacity(n),
        };
        for r in results {
            out.obs.extend(r.obs.to_f32());
            out.rewards.push(r.reward as f32);
            out.terminated.push(r.terminated);
            out.truncated.push(r.truncated);
            out.infos.push(r.info);
        }
        Ok(out)
    }

    pub fn reset_flat(&mut self, seeds: &[u64]) -> Result<Vec<f32>, EnvError> {
        Ok(self.reset(seeds)?.iter().flat_map(ObsVector::to_f32).collect())
    }

    pub fn snapshots(&self) -> Vec<EnvSnapshot> {
        self.envs.iter().map(DuctEnv::snapshot).collect()
    }

    pub fn restore(&mut self, snaps: &[EnvSnapshot]) -> Result<(), EnvError> {
        if snaps.len() != self.envs.len() {
            return Err(EnvError::Shape { expected: self.envs.len(), got: snaps.len() });
        }
        self.envs.iter_mut().zip(snaps).try_for_each(|(env, s)| env.restore(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::DuctParams;

    fn batch(seeds: &[u64]) -> VecEnv {
        VecEnv::new(Arc::new(EnvConfig::default()), seeds).unwrap()
    }

    fn scripted(step: usize, env: usize) -> [f64; 4] {
        let t = step as f64 * 0.1 + env as f64;
        [0.05 * t.sin(), 0.04 * t.cos(), -0.03 * t.sin(), 0.02]
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = batch(&[1, 2, 3]);
        let mut b = batch(&[9, 9, 9]);
        assert_eq!(a.reset(&[5, 6, 7]).unwrap(), b.reset(&[5, 6, 7]).unwrap());
        assert_eq!(a.reset(&[5, 6, 7]).unwrap().len(), 3);
    }

    #[test]
    fn permuted_slots_permute_results() {
        let seeds: Vec<u64> = (0..64).collect();
        let perm: Vec<usize> = (0..64).map(|i| (i * 37) % 64).collect();
        let permuted: Vec<u64> = perm.iter().map(|&i| seeds[i]).collect();
        let mut a = batch(&seeds);
        let mut b = batch(&permuted);
        for step in 0..200 {
            let acts: Vec<[f64; 4]> = (0..64).map(|e| scripted(step, e)).collect();
            let pacts: Vec<[f64; 4]> = perm.iter().map(|&i| acts[i]).collect();
            let ra = a.step(&acts).unwrap();
            let rb = b.step(&pacts).unwrap();
            assert_eq!(ra.len(), 64);
            for (j, &i) in perm.iter().enumerate() {
                assert_eq!(rb[j], ra[i]);
            }
        }
    }

    #[test]
    fn terminated_envs_auto_reset() {
        let cfg = EnvConfig { duct: DuctParams { max_bend_angle: 0.0, ..Default::default() }, ..Default::default() };
        let mut v = VecEnv::new(Arc::new(cfg), &[3, 4]).unwrap();
        let mut seen = false;
        for _ in 0..200 {
            let rs = v.step(&[[1.0, 1.0, 1.0, 1.0], [0.0; 4]]).unwrap();
            if rs[0].done() {
                seen = true;
                let term = rs[0].info.terminal_observation.unwrap();
                assert_ne!(term, rs[0].obs);
                assert_eq!(v.envs()[0].episode().step_count, 0);
                assert!(!rs[1].done());
                break;
            }
        }
        assert!(seen, "full throttle should leave the duct");
    }

    #[test]
    fn flat_contract_validates_shape() {
        let mut v = batch(&[1, 2]);
        let before = v.snapshots();
        assert!(matches!(v.step_flat(&[0.0; 7]), Err(EnvError::Shape { expected: 8, got: 7 })));
        assert_eq!(v.snapshots(), before);
        let out = v.step_flat(&[0.0; 8]).unwrap();
        assert_eq!(out.obs.len(), 40);
        assert_eq!(out.rewards.len(), 2);
        assert_eq!(v.reset_flat(&[1, 2]).unwrap().len(), 40);
    }
}
