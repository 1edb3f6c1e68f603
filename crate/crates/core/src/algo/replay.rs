use rand::Rng;

use crate::env::{ACT_DIM, OBS_DIM};

/// Fixed-capacity FIFO of transitions stored as flat `f32` rows.
///
/// Storage grows lazily up to `capacity`; after that the oldest row is
/// overwritten.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    cursor: usize,
    len: usize,
    /// Total transitions ever pushed.
    pushed: u64,
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_obs: Vec<f32>,
    pub dones: Vec<f32>,
}

/// Uniformly sampled minibatch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySample {
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_obs: Vec<f32>,
    pub dones: Vec<f32>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            cursor: 0,
            len: 0,
            pushed: 0,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, obs: &[f32], action: &[f32], reward: f32, next_obs: &[f32], done: bool) {
        debug_assert_eq!(obs.len(), OBS_DIM);
        debug_assert_eq!(action.len(), ACT_DIM);
        let done = if done { 1.0 } else { 0.0 };
        if self.len < self.capacity {
            self.obs.extend_from_slice(obs);
            self.actions.extend_from_slice(action);
            self.rewards.push(reward);
            self.next_obs.extend_from_slice(next_obs);
            self.dones.push(done);
            self.len += 1;
        } else {
            let i = self.cursor;
            self.obs[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(obs);
            self.actions[i * ACT_DIM..(i + 1) * ACT_DIM].copy_from_slice(action);
            self.rewards[i] = reward;
            self.next_obs[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(next_obs);
            self.dones[i] = done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Valid rows from oldest to newest.
    pub fn chronological(&self) -> impl Iterator<Item = usize> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        (0..self.len).map(move |k| (start + k) % self.capacity)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, batch: usize) -> ReplaySample {
        assert!(self.len > 0, "sampling from an empty replay buffer");
        let mut out = ReplaySample {
            obs: Vec::with_capacity(batch * OBS_DIM),
            actions: Vec::with_capacity(batch * ACT_DIM),
            rewards: Vec::with_capacity(batch),
            next_obs: Vec::with_capacity(batch * OBS_DIM),
            dones: Vec::with_capacity(batch),
        };
        for _ in 0..batch {
            let i = rng.random_range(0..self.len);
            out.obs.extend_from_slice(&self.obs[i * OBS_DIM..(i + 1) * OBS_DIM]);
            out.actions.extend_from_slice(&self.actions[i * ACT_DIM..(i + 1) * ACT_DIM]);
            out.rewards.push(self.rewards[i]);
            out.next_obs.extend_from_slice(&self.next_obs[i * OBS_DIM..(i + 1) * OBS_DIM]);
            out.dones.push(self.dones[i]);
        }
        out
    }

    /// Rebuilds a buffer from persisted parts.
    pub fn from_parts(capacity: usize, cursor: usize, pushed: u64, parts: ReplaySample) -> Self {
        let len = parts.rewards.len();
        assert!(len <= capacity && cursor < capacity);
        Self {
            capacity,
            cursor,
            len,
            pushed,
            obs: parts.obs,
            actions: parts.actions,
            rewards: parts.rewards,
            next_obs: parts.next_obs,
            dones: parts.dones,
        }
    }
}
