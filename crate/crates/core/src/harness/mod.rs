//! Desk-scale experiments and their CSV output.

pub mod ablation;
pub mod config;
pub mod inpaint;
pub mod lid_runs;
pub mod textures;
pub mod train;

pub use ablation::{run_ablation, AblationRow};
pub use config::ExperimentConfig;
pub use inpaint::{prepare_inputs, region_plid, run_inpaint_direct, InpaintOutcome, StepRecord};
pub use lid_runs::{drift_curve, run_dimension_recovery, run_drift_demo, DimRow, DriftPoint};
pub use textures::{load_dataset, texture, textures, TextureKind};
pub use train::{run_train_toy, training_images, EvalRecord, TrainOutcome, TrainRecord};

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `rows` as comma-separated values with a header row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}
