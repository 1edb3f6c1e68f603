use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ductnav_core::checkpoint::Checkpoint;

const TINY: &str = r#"
[run]
n_envs = 4
total_steps = 512
checkpoint_every = 1

[ppo]
horizon = 64
hidden = [32, 32]

[sac]
capacity = 4096
batch = 32
warmup = 64
steps_per_iteration = 16
hidden = [32, 32]

[duct]
n_segments = 2

[episode]
max_steps = 200

[eval]
episodes = 3
"#;

fn ductnav(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ductnav")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = ductnav(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn checkpoints(run: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn generate_is_deterministic_with_default_duct() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--seed", "7", "--out", "a", "--obj"], dir.path());
    ok(&["generate", "--seed", "7", "--out", "b"], dir.path());
    let a = fs::read(dir.path().join("a/duct_7.json")).unwrap();
    let b = fs::read(dir.path().join("b/duct_7.json")).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("a/duct_7.obj").exists());

    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.matches("\"direction\"").count(), 7);
    assert!(text.starts_with("{\"seed\":7,\"radius\":2.5000000000000000e-1,"));
    let waypoints = text.split("\"waypoints\":").nth(1).unwrap();
    assert_eq!(waypoints.matches('[').count() - 1, 7);
}

#[test]
fn tiny_ppo_run_writes_stats_and_checkpoints_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["train", "--config", cfg, "--out", "r1"], dir.path());
    ok(&["train", "--config", cfg, "--out", "r2"], dir.path());

    let s1 = fs::read(dir.path().join("r1/stats.csv")).unwrap();
    let s2 = fs::read(dir.path().join("r2/stats.csv")).unwrap();
    assert_eq!(s1, s2);
    let text = String::from_utf8(s1).unwrap();
    assert_eq!(text.lines().count(), 3, "header plus 2 iterations:\n{text}");
    assert!(!checkpoints(&dir.path().join("r1")).is_empty());
    assert!(dir.path().join("r1/config.toml").exists());

    // A fresh run refuses to clobber an existing one.
    let again = ductnav(&["train", "--config", cfg, "--out", "r1"], dir.path());
    assert_eq!(again.status.code(), Some(3));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let long = dir.path().join("long.toml");
    fs::write(&long, TINY.replace("total_steps = 512", "total_steps = 1024")).unwrap();
    let long = long.to_str().unwrap();
    let short = tiny_config(dir.path());

    ok(&["train", "--config", long, "--out", "full"], dir.path());
    ok(&["train", "--config", short.to_str().unwrap(), "--out", "split"], dir.path());
    let ckpt = dir.path().join("split/checkpoints/ckpt_000001.bin");
    ok(&["train", "--config", long, "--out", "split", "--checkpoint", ckpt.to_str().unwrap()], dir.path());

    let full = fs::read(dir.path().join("full/stats.csv")).unwrap();
    let split = fs::read(dir.path().join("split/stats.csv")).unwrap();
    assert_eq!(full, split);
    // Training state matches exactly; only the embedded out_dir differs.
    let last = |run: &str| Checkpoint::load(&dir.path().join(run).join("checkpoints/ckpt_000004.bin")).unwrap();
    let (a, b) = (last("full"), last("split"));
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(a.arrays, b.arrays);
}

#[test]
fn sac_run_logs_positive_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    ok(&["train", "--config", cfg.to_str().unwrap(), "--algo", "sac", "--out", "sac"], dir.path());
    let text = fs::read_to_string(dir.path().join("sac/stats.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "alpha").unwrap();
    let rows: Vec<_> = lines.collect();
    assert!(!rows.is_empty());
    for row in rows {
        let alpha: f64 = row.split(',').nth(col).unwrap().parse().unwrap();
        assert!(alpha > 0.0 && alpha.is_finite(), "{row}");
    }
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    fs::write(&path, "[ppo]\nhorizonn = 64\n").unwrap();
    let out = ductnav(&["train", "--config", path.to_str().unwrap(), "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizonn"));

    fs::write(&path, "[duct]\nradius = -1.0\n").unwrap();
    let out = ductnav(&["train", "--config", path.to_str().unwrap(), "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duct.radius"));
}

#[test]
fn missing_config_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = ductnav(&["train", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_and_export_traj_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    let ckpts = checkpoints(&dir.path().join("run"));
    let last = ckpts.last().unwrap().to_str().unwrap();

    let out = ok(&["eval", "--checkpoint", last, "--episodes", "4", "--seed", "50", "--out", "ev"], dir.path());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("Avg. Waypoints Passed") && table.contains("50..53"));
    let report = fs::read_to_string(dir.path().join("ev/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    let episodes = fs::read_to_string(dir.path().join("ev/episodes_ckpt_000002.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 5);

    ok(&["export-traj", "--checkpoint", last, "--seed", "9", "--out", "traj.csv"], dir.path());
    let text = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 22);
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap()).collect()).collect();
    assert!(!rows.is_empty());
    let last_step = rows.last().unwrap()[0] as usize;
    assert_eq!(rows.len(), last_step, "one row per step");
    let wp = header.iter().position(|h| *h == "waypoint_index").unwrap();
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 22);
        assert!(r.iter().all(|v| v.is_finite()));
        if i > 0 {
            assert!(r[wp] >= rows[i - 1][wp]);
        }
    }
}

#[test]
fn eval_rejects_checkpoint_from_another_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", "run"], dir.path());
    let ckpts = checkpoints(&dir.path().join("run"));
    let other = dir.path().join("other.toml");
    fs::write(&other, TINY.replace("hidden = [32, 32]\n\n[sac]", "hidden = [16]\n\n[sac]")).unwrap();
    let out =
        ductnav(&["eval", "--checkpoint", ckpts[0].to_str().unwrap(), "--config", other.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different config"));

    // The matching config is accepted.
    ok(&["eval", "--checkpoint", ckpts[0].to_str().unwrap(), "--config", cfg.to_str().unwrap()], dir.path());
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.bin"), b"not a checkpoint").unwrap();
    let out = ductnav(&["eval", "--checkpoint", "bad.bin"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}
