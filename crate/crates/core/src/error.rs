use alloc::string::String;

use alloc::boxed::Box;

use crate::campaign::Calibration;
use crate::layout::CellId;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter failed validation. `field` names the offending input.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("unknown cell {0}")]
    UnknownCell(CellId),

    #[error("cell {cell} is a {kind} cell, fault variant requires {expected}")]
    KindMismatch {
        cell: CellId,
        kind: &'static str,
        expected: &'static str,
    },

    #[error("stage {stage} out of range for a {stages}-stage register")]
    StageOutOfRange { stage: usize, stages: usize },

    #[error("unknown objective `{0}`")]
    UnknownObjective(String),

    #[error("trace length mismatch: golden has {golden} edges, observed has {observed}")]
    LengthMismatch { golden: usize, observed: usize },

    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),

    /// No threshold pair fits every target; carries the best fit found.
    #[error("calibration infeasible: worst residual {:.1} % exceeds the {:.1} % tolerance", .0.worst_residual(), .0.tolerance_pct)]
    CalibrationInfeasible(Box<Calibration>),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
