//! Cramér–Rao-type lower bounds for estimation under parametric equality
//! constraints: the constrained CRB and the Lehmann-unbiased CCRB, with
//! constrained-ML estimators, unbiasedness diagnostics and reproducible
//! Monte-Carlo experiments.

pub mod bounds;
pub mod constraint;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod montecarlo;

pub use bounds::{ccrb, lu_ccrb, BoundReport, Ccrb, LuCcrb, WeightMatrix};
pub use constraint::{align_basis, BasisDerivatives, BasisProvider, ConstraintSet, NullSpaceBasis};
pub use diagnostics::{check_c_unbiasedness, check_x_unbiasedness, BiasReport};
pub use error::{Error, Result};
pub use estimators::Estimator;
pub use experiments::{run_experiment, ExperimentSpec, Scenario};
pub use models::{ComplexSinusoidModel, LinearGaussianModel, ParametricModel};
pub use montecarlo::{run_trials, TrialBatch, TrialConfig};
pub use nalgebra::{DMatrix, DVector};
