//! School value-added models.
//!
//! Load a student/school cohort, build one of five nested model designs
//! (Raw, VA, CVA-A, CVA-B, CVA-X) under four prior-achievement treatments,
//! fit it by least squares with cluster-robust inference, and turn the
//! residuals into school effects with confidence intervals, effect-size
//! categories and empirical-Bayes shrinkage. Effect tables from different
//! models can then be compared, and synthetic cohorts with known truth can
//! be generated for checking all of the above.

pub mod cohort;
pub mod comparison;
pub mod config;
pub mod design;
pub mod effects;
pub mod error;
pub mod estimation;
pub mod format;
pub mod linalg;
pub mod manifest;
pub mod pipeline;
pub mod simulation;
pub mod svg;

pub use cohort::{load_cohort, Cohort, SchoolInput, StudentInput, Variable};
pub use config::{IngestConfig, VamConfig};
pub use design::{build_design, canonical_specs, DesignMatrix, Family, ModelSpec, PriorTreatment};
pub use effects::{EffectCategory, EffectTable, SchoolEffect};
pub use error::{ErrorKind, Result, VamError};
pub use estimation::{fit_least_squares, fit_with_clusters, FittedModel};
pub use simulation::{generate_cohort, GroundTruth, SimConfig};
