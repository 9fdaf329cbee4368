//! Sample-size determination and doubly robust estimation for randomized,
//! hybrid (external-control-augmented) and single-arm trial designs.
//!
//! The crate is organised bottom-up: [`model`] holds the shared vocabulary,
//! [`nuisance`] fits outcome, propensity and selection models, [`estimators`]
//! turns those fits into effect estimates, [`design`] evaluates asymptotic
//! variances and solves for sample sizes, and [`simulate`] generates data and
//! runs Monte Carlo studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod estimators;
pub mod io;
pub mod model;
pub mod nuisance;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{
    derive_counts, validate_dataset, Counts, CovariateColumn, CovariateModel, DesignInputs,
    DesignMethod, DesignOverrides, FunctionSpec, SubjectRecord, TableRow, TrialDataset,
    ValidationReport, VarianceComponents, Violation,
};
