//! Training loop contracts: determinism, resume, checkpoint errors.

mod common;

use himloco::checkpoint::CheckpointError;
use himloco::trainer::{read_metrics, TrainError};
use himloco::Trainer32;

#[test]
fn same_seed_gives_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        Trainer32::new(common::tiny()).unwrap().run(&dir.path().join(run)).unwrap();
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    let (_, rows) = read_metrics(&dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(rows.len(), 6);
}

#[test]
fn different_seeds_diverge() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    Trainer32::new(cfg.clone()).unwrap().run(&dir.path().join("a")).unwrap();
    cfg.seed = 1;
    Trainer32::new(cfg).unwrap().run(&dir.path().join("b")).unwrap();
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn resume_continues_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    Trainer32::new(common::tiny()).unwrap().run(&straight).unwrap();

    // Resume into the same directory: rows after the checkpoint are rewritten.
    let split = dir.path().join("split");
    let mut first = common::tiny();
    first.num_iterations = 3;
    Trainer32::new(first).unwrap().run(&split).unwrap();
    let mut t = Trainer32::load(split.join("ckpt_3.bin"), Some(&common::tiny())).unwrap();
    t.run(&split).unwrap();

    let a = std::fs::read_to_string(straight.join("metrics.csv")).unwrap();
    let b = std::fs::read_to_string(split.join("metrics.csv")).unwrap();
    assert_eq!(a, b);
    let ca = std::fs::read(straight.join("ckpt_6.bin")).unwrap();
    let cb = std::fs::read(split.join("ckpt_6.bin")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn zero_iterations_writes_initial_checkpoint_and_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.num_iterations = 0;
    let ckpt = Trainer32::new(cfg).unwrap().run(dir.path()).unwrap();
    assert!(ckpt.ends_with("ckpt_0.bin"));
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("iteration,"));
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.num_iterations = 1;
    let ckpt = Trainer32::new(cfg).unwrap().run(dir.path()).unwrap();
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let err = Trainer32::load(&cut, None).err().unwrap();
    assert!(matches!(err, TrainError::Checkpoint(CheckpointError::Corrupted(_))), "{err}");
}

#[test]
fn env_count_mismatch_is_an_explicit_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.num_iterations = 1;
    let ckpt = Trainer32::new(cfg.clone()).unwrap().run(dir.path()).unwrap();
    cfg.num_envs = 8;
    let err = Trainer32::load(&ckpt, Some(&cfg)).err().unwrap();
    assert!(matches!(err, TrainError::Checkpoint(CheckpointError::Incompatible(_))), "{err}");
}

#[test]
fn regression_mode_swaps_the_latent_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.num_iterations = 1;
    cfg.ablation.regression_mode = true;
    Trainer32::new(cfg).unwrap().run(dir.path()).unwrap();
    let (header, _) = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert!(header.iter().any(|h| h == "regression_loss"));
    assert!(!header.iter().any(|h| h == "swav_loss"));
}

#[test]
fn default_ablation_and_single_k_sweep_equal_a_plain_run() {
    use himloco::eval::{run_ablation, sweep_prototypes, train_and_summarize};
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.num_iterations = 3;
    let plain = train_and_summarize(cfg.clone(), "plain", &dir.path().join("plain")).unwrap();
    let variants = [("full".to_string(), Default::default())].into_iter().collect();
    let abl = run_ablation(&cfg, &variants, 1, &dir.path().join("abl")).unwrap();
    let sweep = sweep_prototypes(&cfg, &[cfg.him.num_prototypes], 1, &dir.path().join("sweep")).unwrap();
    let metrics = |p: &std::path::Path| std::fs::read(p.parent().unwrap().join("metrics.csv")).unwrap();
    for other in [&abl[0], &sweep[0]] {
        assert_eq!(other.nlts.to_bits(), plain.nlts.to_bits());
        assert_eq!(metrics(&other.checkpoint), metrics(&plain.checkpoint));
    }
}
