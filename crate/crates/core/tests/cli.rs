use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lid_align::knn::{neighbors_of_member, Points};
use lid_align::{lid_mle, save_tensor, DenseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lid-align"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for verb in ["lid-estimate", "drift-demo", "dim-recovery", "inpaint", "train-toy", "ablate", "metrics"] {
        assert!(stdout(&o).contains(verb), "{verb}");
    }
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["drift-demo", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["metrics", "--a", "x.png"]).status.code(), Some(2));
    // Rejected before any output is written.
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn runtime_failure_is_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["metrics", "--a", "missing.png", "--b", "missing.png", "--out", "m"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("missing.png"));
}

#[test]
fn lid_estimate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<f32> = (0..200 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t = DenseTensor::new(vec![200, 3], data).unwrap();
    save_tensor(&t, dir.path().join("pts.dt")).unwrap();

    let o = run(dir.path(), &["lid-estimate", "--input", "pts.dt", "--k", "8", "--out", "l"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let points = Points::from_tensor(&t).unwrap();
    let mean = (0..points.len())
        .map(|i| lid_mle(neighbors_of_member(&points, i, 8).unwrap()).unwrap().value)
        .sum::<f64>()
        / points.len() as f64;
    let printed = stdout(&o);
    assert!(printed.starts_with(&format!("mean_lid={mean:?} ")), "{printed} vs {mean}");
    assert!(dir.path().join("l/manifest.txt").exists());
}

#[test]
fn metrics_identity() {
    let dir = tempfile::tempdir().unwrap();
    let img = DenseTensor::new(vec![16, 16, 1], (0..256).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
    lid_align::io::save_png(&img, &dir.path().join("x.png")).unwrap();
    let o = run(dir.path(), &["metrics", "--a", "x.png", "--b", "x.png", "--out", "m"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "psnr=inf ssim=1.0");
}

#[test]
fn drift_demo_writes_monotone_curve() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["drift-demo", "--out", "runs/d1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("runs/d1/curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("d,mean_ilid,stderr,increasing"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn manifest_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(
        dir.path(),
        &["--seed", "11", "inpaint", "--steps", "3", "--out", "a", "inpaint.images=8", "weights.lambda_p=0.2"],
    );
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let again = run(dir.path(), &["inpaint", "--config", "a/manifest.txt", "--out", "b"]);
    assert_eq!(again.status.code(), Some(0), "{}", stderr(&again));
    for f in ["losses.csv", "metrics.csv", "summary.csv", "manifest.txt", "restored-000.png"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest = fs::read_to_string(dir.path().join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11") && manifest.contains("weights.lambda_p = 0.2"));

    let wrong = run(dir.path(), &["drift-demo", "--config", "a/manifest.txt", "--out", "c"]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn overrides_apply_in_order() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "seed = 1\n[drift]\nsteps = 5\n").unwrap();
    let o = run(
        dir.path(),
        &["drift-demo", "--config", "cfg.toml", "--seed", "2", "--out", "o", "drift.steps=6", "drift.steps=7"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("o/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 2\n"), "{manifest}");
    assert!(manifest.contains("drift.steps = 7\n"), "{manifest}");
    let csv = fs::read_to_string(dir.path().join("o/curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn ablate_and_dim_recovery_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["ablate", "--lambda-i", "0,0.01", "--lambda-p", "0,0.1", "--out", "ab", "inpaint.steps=2"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("lambda_i,lambda_p,psnr,ssim"));
    assert_eq!(csv.lines().count(), 5);

    let o = run(
        dir.path(),
        &["--threads", "1", "dim-recovery", "--out", "dr", "dim_recovery.dims=[1, 2]", "dim_recovery.n=2000", "dim_recovery.k=20"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("dr/dim_recovery.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn train_toy_writes_logs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "train-toy", "--steps", "3", "--out", "t", "batch=8", "k_i=4", "train.images=10", "train.width=4",
    ];
    let o = run(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let losses = fs::read_to_string(dir.path().join("t/losses.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("step,total,rec,adv,ilid,plid,critic_loss,penalty"));
    assert_eq!(losses.lines().count(), 4);
    assert!(dir.path().join("t/metrics.csv").exists());
    assert!(dir.path().join("t/checkpoints/step-000003").is_dir());

    let empty = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train-toy", "--dataset", empty.path().to_str().unwrap(), "--out", "e"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
}
