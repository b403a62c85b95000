use lid_align::harness::{run_train_toy, training_images, ExperimentConfig};
use lid_align::Error;

fn small(steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.batch = 8;
    cfg.k_i = 4;
    cfg.train.images = 12;
    cfg.train.size = 32;
    cfg.train.width = 4;
    cfg.train.steps = steps;
    cfg
}

#[test]
fn rec_halves_on_textures() {
    let mut cfg = ExperimentConfig::default();
    cfg.weights.lambda_i = 0.0;
    cfg.weights.lambda_p = 0.0;
    let images = training_images(&cfg).unwrap();
    assert_eq!(images.len(), 64);
    let out = run_train_toy(&cfg, &images, None).unwrap();
    assert_eq!(out.losses.len(), 200);
    let first = out.losses[0].rec;
    let tail: f64 = out.losses[190..].iter().map(|r| r.rec).sum::<f64>() / 10.0;
    assert!(tail <= 0.5 * first, "rec {first} -> {tail}");
    assert!(out.losses.iter().all(|r| r.ilid == 0.0 && r.plid == 0.0));
    assert!(out.evals.len() > 1);
}

#[test]
fn regularized_run_reports_consistent_totals() {
    let cfg = small(4);
    let out = run_train_toy(&cfg, &training_images(&cfg).unwrap(), None).unwrap();
    for r in &out.losses {
        let report = r.report();
        assert!(report.decomposition_error(&cfg.weights) <= 1e-6, "{r:?}");
        assert!(r.ilid > 0.0 && r.plid > 0.0);
        assert!(r.penalty.is_finite() && r.critic_loss.is_finite());
    }
}

#[test]
fn resume_continues_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(4);
    cfg.train.checkpoint_every = 2;
    let images = training_images(&cfg).unwrap();
    let full = run_train_toy(&cfg, &images, Some(dir.path())).unwrap();
    assert_eq!(full.checkpoints.len(), 2);
    assert!(full.checkpoints[0].ends_with("step-000002"));

    let mut resumed = cfg.clone();
    resumed.train.resume = Some(full.checkpoints[0].clone());
    let rest = run_train_toy(&resumed, &images, None).unwrap();
    assert_eq!(rest.losses, full.losses[2..]);
    assert_eq!(rest.params, full.params);
}

#[test]
fn empty_dataset_is_an_error() {
    let cfg = small(1);
    assert!(matches!(run_train_toy(&cfg, &[], None), Err(Error::Empty(_))));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = cfg;
    cfg.train.dataset = Some(dir.path().to_path_buf());
    assert!(matches!(training_images(&cfg), Err(Error::Empty(_))));
}
