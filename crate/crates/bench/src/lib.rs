//! Shared fixtures for the criterion benchmarks.

use std::f64::consts::PI;

use ccrb_core::bounds::WeightMatrix;
use ccrb_core::models::ParametricModel;
use ccrb_core::{ComplexSinusoidModel, ConstraintSet, DMatrix, DVector, LinearGaussianModel, Result};

/// Everything a bound evaluation needs at one parameter point.
pub struct BoundInputs {
    pub theta: DVector<f64>,
    pub j: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: Vec<DMatrix<f64>>,
    pub w: WeightMatrix,
}

fn inputs(
    model: &dyn ParametricModel,
    cs: &ConstraintSet,
    theta: DVector<f64>,
    w: WeightMatrix,
) -> Result<BoundInputs> {
    let (basis, derivs) = cs.tangent_frame(&theta)?;
    Ok(BoundInputs { j: model.fim(&theta)?, u: basis.u, v: derivs.v, w, theta })
}

pub fn sphere_theta(rho: f64) -> DVector<f64> {
    let (p1, p2) = (0.2 * PI, 0.45 * PI);
    DVector::from_row_slice(&[rho * p2.sin() * p1.cos(), rho * p2.sin() * p1.sin(), rho * p2.cos()])
}

pub fn sphere_model() -> LinearGaussianModel {
    LinearGaussianModel::new(DMatrix::identity(3, 3), 16.0).expect("valid model")
}

pub fn sinusoid_theta(c: f64) -> DVector<f64> {
    DVector::from_row_slice(&[c * (0.3 * PI).cos(), c * (0.3 * PI).sin(), 0.9 * PI])
}

pub fn sinusoid_model(len: usize) -> ComplexSinusoidModel {
    ComplexSinusoidModel::new(1, len, 16.0).expect("valid model")
}

pub fn sphere_inputs() -> BoundInputs {
    let cs = ConstraintSet::sphere3(1.0).expect("valid constraint");
    inputs(&sphere_model(), &cs, sphere_theta(1.0), WeightMatrix::identity(3)).expect("regular point")
}

/// Same point with finite-difference basis derivatives.
pub fn sphere_numeric_constraint() -> ConstraintSet {
    ConstraintSet::sphere(3, 1.0).expect("valid constraint")
}

pub fn sinusoid_inputs() -> BoundInputs {
    let cs = ConstraintSet::amplitude(0.2).expect("valid constraint");
    let w = WeightMatrix::diagonal(&[1.0, 1.0, 0.0]).expect("valid weight");
    inputs(&sinusoid_model(15), &cs, sinusoid_theta(0.2), w).expect("regular point")
}
