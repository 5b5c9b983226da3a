//! Two-stage training: a phase-input teacher first, then the raw-input
//! student under the combined objective with the teacher frozen.

mod config;
mod sampling;
mod trainer;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::error::{DiffError, LossError};
use crate::model::ModelError;

pub use config::{AblationMode, TrainConfig};
pub use sampling::{assign_virtual_domains, make_batches, rng_for, train_val_split, BatchPlan, Stream};
pub use trainer::{
    accuracy, evaluate_student, gather_rows, train_student, train_student_observed, train_teacher, FrozenTeacher,
    RunResult, TeacherRun,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training data")]
    Empty,
    #[error("distillation is active but no frozen teacher was supplied")]
    MissingTeacher,
    #[error("non-finite value during training: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(LossError),
    #[error(transparent)]
    Model(ModelError),
}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFinite { .. } => TrainError::NonFinite(e.to_string()),
            other => TrainError::Model(ModelError::Diff(other)),
        }
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Diff(d) => d.into(),
            LossError::MissingTeacher => TrainError::MissingTeacher,
            other => TrainError::Loss(other),
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diff(d) => d.into(),
            other => TrainError::Model(other),
        }
    }
}

/// Epoch means of the loss terms and the validation accuracy at epoch end.
/// Inactive terms are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub cls: f64,
    pub mse: Option<f64>,
    pub align: Option<f64>,
    pub exp: Option<f64>,
    pub total: f64,
    pub val_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch,cls_loss,mse_loss,align_loss,exp_loss,total,val_acc";

/// Writes the metric rows as CSV; inactive terms are left empty.
pub fn write_metrics<W: Write>(mut w: W, rows: &[EpochMetrics]) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:?},{},{},{},{:?},{:?}",
            r.epoch,
            r.cls,
            opt(r.mse),
            opt(r.align),
            opt(r.exp),
            r.total,
            r.val_acc
        )?;
    }
    Ok(())
}
