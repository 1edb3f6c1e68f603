use ductnav_core::algo::{Algorithm, PpoConfig, SacConfig, Trainer};
use ductnav_core::checkpoint::{ArrayData, Checkpoint, CheckpointError};
use ductnav_core::config::RunConfig;
use proptest::prelude::*;

fn tiny(algo: Algorithm) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.algo = algo;
    cfg.run.n_envs = 3;
    cfg.duct.n_segments = 2;
    cfg.ppo = PpoConfig { horizon: 16, hidden: vec![8], ..PpoConfig::default() };
    cfg.sac = SacConfig {
        capacity: 256,
        batch: 8,
        warmup: 16,
        steps_per_iteration: 8,
        hidden: vec![8],
        ..SacConfig::default()
    };
    cfg
}

#[test]
fn trainer_checkpoints_round_trip_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for algo in [Algorithm::Ppo, Algorithm::Sac] {
        let cfg = tiny(algo);
        let mut t = Trainer::new(cfg.trainer_setup()).unwrap();
        for _ in 0..3 {
            t.iterate().unwrap();
        }
        let first = t.to_checkpoint(&cfg.training_hash(), &cfg.resolved().to_toml());
        let path = dir.path().join(format!("{algo}.bin"));
        first.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, first);
        let again = Trainer::from_checkpoint(cfg.trainer_setup(), &loaded).unwrap();
        let second = again.to_checkpoint(&cfg.training_hash(), &cfg.resolved().to_toml());
        assert_eq!(second.to_bytes(), std::fs::read(&path).unwrap(), "{algo}");
    }
}

#[test]
fn truncated_file_is_rejected() {
    let cfg = tiny(Algorithm::Ppo);
    let t = Trainer::new(cfg.trainer_setup()).unwrap();
    let bytes = t.to_checkpoint("h", "").to_bytes();
    for cut in [0, 7, 12, 40, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[8] = 2;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Version { found: 2, expected: 1 })));
}

proptest! {
    #[test]
    fn arbitrary_arrays_round_trip(
        f32s in prop::collection::vec(any::<f32>(), 0..64),
        f64s in prop::collection::vec(any::<f64>(), 0..64),
        u64s in prop::collection::vec(any::<u64>(), 0..64),
        steps in any::<u64>(),
    ) {
        let mut c = Checkpoint::new(Algorithm::Sac, 3, steps, "abc".into(), "[run]\n".into());
        c.push("a", &[f32s.len()], ArrayData::F32(f32s));
        c.push("b", &[f64s.len()], ArrayData::F64(f64s));
        c.push("c", &[u64s.len()], ArrayData::U64(u64s));
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
