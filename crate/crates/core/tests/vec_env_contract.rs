//! The flat-array contract foreign bindings rely on.

use std::sync::Arc;

use ductnav_core::env::{DuctEnv, EnvConfig, EnvError, VecEnv, ACT_DIM, OBS_DIM};
use ductnav_core::geom::DuctParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> Arc<EnvConfig> {
    Arc::new(EnvConfig { duct: DuctParams { n_segments: 3, ..DuctParams::default() }, ..EnvConfig::default() })
}

/// Actions exactly representable in f32, so both paths see identical inputs.
fn scripted_actions(steps: usize, n: usize) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..steps).map(|_| (0..n * ACT_DIM).map(|_| rng.random_range(-0.3f32..0.3)).collect()).collect()
}

#[test]
fn flat_step_shapes() {
    let n = 5;
    let mut venv = VecEnv::new(config(), &[1, 2, 3, 4, 5]).unwrap();
    let out = venv.step_flat(&vec![0.0; n * ACT_DIM]).unwrap();
    assert_eq!(out.obs.len(), n * OBS_DIM);
    assert_eq!(out.rewards.len(), n);
    assert_eq!(out.terminated.len(), n);
    assert_eq!(out.truncated.len(), n);
    assert_eq!(out.infos.len(), n);
    assert_eq!(venv.reset_flat(&[9, 8, 7, 6, 5]).unwrap().len(), n * OBS_DIM);
}

#[test]
fn wrong_shapes_are_rejected_before_stepping() {
    let mut venv = VecEnv::new(config(), &[1, 2]).unwrap();
    let before = venv.snapshots();
    let err = venv.step_flat(&[0.0; 7]).unwrap_err();
    assert!(matches!(err, EnvError::Shape { expected: 8, got: 7 }));
    assert!(matches!(venv.reset_flat(&[1]), Err(EnvError::Shape { expected: 2, got: 1 })));
    assert_eq!(venv.snapshots(), before);
    assert!(VecEnv::new(config(), &[]).is_err());
}

#[test]
fn flat_rollout_matches_single_envs() {
    let seeds = [21, 22, 23];
    let cfg = config();
    let mut venv = VecEnv::new(Arc::clone(&cfg), &seeds).unwrap();
    let mut singles: Vec<DuctEnv> = seeds.iter().map(|&s| DuctEnv::new(Arc::clone(&cfg), s).unwrap()).collect();
    let mut resets = 0;
    for actions in scripted_actions(200, seeds.len()) {
        let flat = venv.step_flat(&actions).unwrap();
        for (i, env) in singles.iter_mut().enumerate() {
            let a = &actions[i * ACT_DIM..(i + 1) * ACT_DIM];
            let mut r = env.step([a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64]).unwrap();
            if r.done() {
                resets += 1;
                assert_eq!(flat.infos[i].terminal_observation, Some(r.obs));
                r.obs = env.auto_reset().unwrap();
            }
            assert_eq!(flat.rewards[i], r.reward as f32);
            assert_eq!(flat.terminated[i], r.terminated);
            assert_eq!(flat.truncated[i], r.truncated);
            assert_eq!(&flat.obs[i * OBS_DIM..(i + 1) * OBS_DIM], &r.obs.to_f32());
        }
    }
    assert!(resets > 0, "rollout should cross an episode boundary");
}

#[test]
fn non_finite_actions_are_flagged_and_zeroed() {
    let cfg = config();
    let mut venv = VecEnv::new(Arc::clone(&cfg), &[4, 4]).unwrap();
    let mut actions = vec![0.0; 2 * ACT_DIM];
    actions[1] = f32::NAN;
    let out = venv.step_flat(&actions).unwrap();
    assert!(out.infos[0].fault);
    assert!(!out.infos[1].fault);
    assert_eq!(out.obs[..OBS_DIM], out.obs[OBS_DIM..]);
    assert!(out.obs.iter().all(|v| v.is_finite()));
}
