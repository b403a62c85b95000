//! Command-line front end. Every verb resolves an [`ExperimentConfig`] from
//! `--config`, then the verb's own flags, then trailing `key=value`
//! overrides, and writes its outputs plus `manifest.txt` under `--out`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::{manifest_text, manifest_verb};
use crate::harness::inpaint::{mean_quality, quality};
use crate::harness::lid_runs::{check_strictly_increasing, mean_stderr};
use crate::harness::{
    drift_curve, prepare_inputs, region_plid, run_ablation, run_dimension_recovery, run_inpaint_direct,
    run_train_toy, training_images, write_csv, ExperimentConfig,
};
use crate::io::{load_image, save_png};
use crate::knn::{neighbors_of_member, Points};
use crate::lid::lid_mle;
use crate::metrics::evaluate;
use crate::tensor::load_tensor;

#[derive(Debug, Parser)]
#[command(name = "lid-align", version, about = "LID estimation and alignment-regularized inpainting experiments")]
pub struct Cli {
    /// Experiment config (TOML); a previous run's manifest.txt also works.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: runs/<verb>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel inner loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean LID of an N x D point set (.dt), each point against the rest.
    LidEstimate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        rest: Overrides,
    },
    /// iLID of a reference point as a Gaussian cluster drifts away; writes curve.csv.
    DriftDemo {
        #[command(flatten)]
        rest: Overrides,
    },
    /// LID estimates on uniform balls of several dimensions; writes dim_recovery.csv.
    DimRecovery {
        #[command(flatten)]
        rest: Overrides,
    },
    /// Direct optimization of the missing pixels; writes restored PNGs, losses.csv, metrics.csv.
    Inpaint {
        /// Input image (.png or .dt); repeat for a batch. Textures are generated when absent.
        #[arg(long = "image")]
        images: Vec<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        rest: Overrides,
    },
    /// Trains the toy generator and critic; writes losses.csv, metrics.csv, checkpoints/.
    TrainToy {
        /// Directory of same-shaped .png/.dt images. Textures are generated when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        rest: Overrides,
    },
    /// Inpainting quality over a grid of regularizer weights; writes ablation.csv.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        lambda_i: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        lambda_p: Vec<f64>,
        #[command(flatten)]
        rest: Overrides,
    },
    /// PSNR and SSIM between two images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Config overrides as key=value, applied in order.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::LidEstimate { .. } => "lid-estimate",
            Command::DriftDemo { .. } => "drift-demo",
            Command::DimRecovery { .. } => "dim-recovery",
            Command::Inpaint { .. } => "inpaint",
            Command::TrainToy { .. } => "train-toy",
            Command::Ablate { .. } => "ablate",
            Command::Metrics { .. } => "metrics",
        }
    }

    /// Flag-derived overrides followed by the trailing ones.
    fn overrides(&self) -> Vec<String> {
        let path = |k: &str, p: &Path| format!("{k}={}", toml::Value::String(p.display().to_string()));
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "));
        let mut out = Vec::new();
        let rest = match self {
            Command::LidEstimate { input, k, rest } => {
                out.extend(input.as_deref().map(|p| path("lid_estimate.input", p)));
                out.extend(k.map(|k| format!("lid_estimate.k={k}")));
                rest
            }
            Command::DriftDemo { rest } | Command::DimRecovery { rest } => rest,
            Command::Inpaint { images, steps, rest } => {
                if !images.is_empty() {
                    let items: Vec<String> = images
                        .iter()
                        .map(|p| toml::Value::String(p.display().to_string()).to_string())
                        .collect();
                    out.push(format!("inpaint.inputs=[{}]", items.join(", ")));
                }
                out.extend(steps.map(|s| format!("inpaint.steps={s}")));
                rest
            }
            Command::TrainToy {
                dataset,
                resume,
                steps,
                rest,
            } => {
                out.extend(dataset.as_deref().map(|p| path("train.dataset", p)));
                out.extend(resume.as_deref().map(|p| path("train.resume", p)));
                out.extend(steps.map(|s| format!("train.steps={s}")));
                rest
            }
            Command::Ablate {
                lambda_i,
                lambda_p,
                rest,
            } => {
                if !lambda_i.is_empty() {
                    out.push(format!("ablation.lambda_i={}", list(lambda_i)));
                }
                if !lambda_p.is_empty() {
                    out.push(format!("ablation.lambda_p={}", list(lambda_p)));
                }
                rest
            }
            Command::Metrics { .. } => return out,
        };
        out.extend(rest.overrides.iter().cloned());
        out
    }
}

/// Parses `args`, runs the verb and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let msg = msg.trim();
            eprintln!("lid-align {}: {msg}", cli.command.verb());
            1
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("LID_ALIGN_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Resolved config for `cli`: config file, `--seed`, verb flags, overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let verb = cli.command.verb();
    if let Some(path) = &cli.config {
        if let Some(recorded) = manifest_verb(path)? {
            if recorded != verb {
                return Err(Error::Config(format!(
                    "{} is a manifest for `{recorded}`, not `{verb}`",
                    path.display()
                )));
            }
        }
    }
    let mut overrides: Vec<String> = cli.seed.map(|s| format!("seed={s}")).into_iter().collect();
    overrides.extend(cli.command.overrides());
    ExperimentConfig::load(cli.config.as_deref(), &overrides)
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Fails only if the pool already exists, as in repeated in-process runs.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialized");
        }
    }
    let verb = cli.command.verb();
    let cfg = resolve_config(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| Path::new("runs").join(verb));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let manifest = out.join("manifest.txt");
    fs::write(&manifest, manifest_text(verb, &cfg)?).map_err(|e| Error::io(&manifest, e))?;
    log::info!("{verb}: writing to {}", out.display());

    match &cli.command {
        Command::LidEstimate { .. } => lid_estimate(&cfg, &out),
        Command::DriftDemo { .. } => drift_demo(&cfg, &out),
        Command::DimRecovery { .. } => write_csv(&out.join("dim_recovery.csv"), &run_dimension_recovery(&cfg)?),
        Command::Inpaint { .. } => inpaint(&cfg, &out),
        Command::TrainToy { .. } => train_toy(&cfg, &out),
        Command::Ablate { .. } => write_csv(&out.join("ablation.csv"), &run_ablation(&cfg)?),
        Command::Metrics { a, b } => metrics(a, b, &out),
    }
}

#[derive(Serialize)]
struct LidRow {
    index: usize,
    lid: f64,
}

fn lid_estimate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let input = cfg
        .lid_estimate
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("lid-estimate needs --input or lid_estimate.input".into()))?;
    let t = load_tensor(input)?;
    if t.ndim() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "{}: expected an N x D point set, found shape {:?}",
            input.display(),
            t.shape()
        )));
    }
    let points = Points::from_tensor(&t)?;
    let k = cfg.lid_estimate.k;
    let values = (0..points.len())
        .into_par_iter()
        .map(|i| Ok(lid_mle(neighbors_of_member(&points, i, k)?)?.value))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, stderr) = mean_stderr(&values);
    let rows: Vec<LidRow> = values.iter().enumerate().map(|(index, &lid)| LidRow { index, lid }).collect();
    write_csv(&out.join("lid.csv"), &rows)?;
    println!("mean_lid={mean:?} stderr={stderr:?} n={} k={k}", points.len());
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    d: f64,
    mean_ilid: f64,
    stderr: f64,
    /// Strictly above the previous row; true for the first row.
    increasing: bool,
}

fn drift_demo(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let curve = drift_curve(cfg)?;
    let rows: Vec<CurveRow> = curve
        .iter()
        .enumerate()
        .map(|(i, p)| CurveRow {
            d: p.d,
            mean_ilid: p.mean_ilid,
            stderr: p.stderr,
            increasing: i == 0 || p.mean_ilid > curve[i - 1].mean_ilid,
        })
        .collect();
    write_csv(&out.join("curve.csv"), &rows)?;
    check_strictly_increasing(&curve)
}

#[derive(Serialize)]
struct ImageMetrics {
    image: usize,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    psnr: f64,
    ssim: f64,
    region_plid: f64,
}

fn inpaint(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (images, masks) = prepare_inputs(cfg)?;
    let outcome = run_inpaint_direct(cfg, &cfg.weights, &images, &masks)?;
    for (i, img) in outcome.restored.iter().enumerate() {
        save_png(&img.to_tensor()?, &out.join(format!("restored-{i:03}.png")))?;
    }
    write_csv(&out.join("losses.csv"), &outcome.trajectory)?;
    let per_image = quality(&images, &outcome.restored)?;
    let rows: Vec<ImageMetrics> = per_image
        .iter()
        .enumerate()
        .map(|(image, m)| ImageMetrics {
            image,
            psnr: m.psnr,
            ssim: m.ssim,
        })
        .collect();
    write_csv(&out.join("metrics.csv"), &rows)?;
    let mean = mean_quality(&per_image);
    let summary = SummaryRow {
        psnr: mean.psnr,
        ssim: mean.ssim,
        region_plid: region_plid(cfg, &images, &outcome.restored, &masks)?,
    };
    write_csv(&out.join("summary.csv"), &[summary])
}

fn train_toy(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let images = training_images(cfg)?;
    let outcome = run_train_toy(cfg, &images, Some(out))?;
    write_csv(&out.join("losses.csv"), &outcome.losses)?;
    write_csv(&out.join("metrics.csv"), &outcome.evals)
}

fn metrics(a: &Path, b: &Path, out: &Path) -> Result<()> {
    let report = evaluate(&load_image(a)?, &load_image(b)?)?;
    write_csv(&out.join("metrics.csv"), &[report])?;
    println!("psnr={:?} ssim={:?}", report.psnr, report.ssim);
    Ok(())
}
