//! Framing experiments for ward sepsis risk prediction.
//!
//! The pipeline runs from a longitudinal event record to per-framing model
//! metrics and explanations:
//!
//! 1. [`cohort`] parses and validates the event CSV and applies the
//!    admission-length inclusion filter.
//! 2. [`synthgen`] produces seeded synthetic cohorts in the same format.
//! 3. [`sepsis3`] finds suspected-infection episodes, builds the SOFA series
//!    and decides the onset time.
//! 4. [`framing`] turns each admission into training samples under one of the
//!    supported framings (fixed time to onset, sliding window, sliding window
//!    with dynamic inclusion, on clinical demand, at event, random time to
//!    onset).
//! 5. [`features`] builds the 50-column feature vectors (25 current values and
//!    25 deltas over two 6 h timesteps) and the missingness tables.
//! 6. [`gbdt`] trains a logistic gradient boosted tree ensemble with learned
//!    default directions for missing values.
//! 7. [`treeshap`] explains predictions with exact path-dependent Shapley
//!    values.
//! 8. [`eval`] runs patient-grouped cross-validation, AUROC/AUPRC and
//!    t-based fold confidence intervals.

pub mod cohort;
pub mod error;
pub mod eval;
pub mod features;
pub mod framing;
pub mod gbdt;
pub mod sepsis3;
pub mod synthgen;
pub mod treeshap;

mod seed;

pub use cohort::{Admission, AdmissionId, ClinicalEvent, Cohort, EventKind, Parameter, PatientId};
pub use error::{Error, Result};
pub use features::{Dataset, FeatureVector};
pub use framing::{FramingConfig, FramingKind, SampleSpec};
pub use gbdt::{HyperParams, TreeEnsemble};
pub use sepsis3::{SepsisLabel, SofaSeries};
pub use synthgen::SynthConfig;
