//! Empirical bias, bias gradient and C-bias, and statistical checks of the
//! X-unbiasedness and local C-unbiasedness conditions.
//!
//! The bias gradient comes from the score identity
//! `D = E[(θ̂ - θ₀) υᵀ(x, θ₀)] - I`, so no re-simulation at perturbed
//! parameters is needed. Every residual carries a Monte-Carlo standard
//! error and a condition passes when the residual is within `k` of them.

use nalgebra::{DMatrix, DVector};

use crate::bounds::WeightMatrix;
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::models::ParametricModel;
use crate::montecarlo::{run_trials, TrialBatch, TrialConfig};

/// Default pass threshold in standard errors.
pub const DEFAULT_K: f64 = 4.0;

/// Mean with per-entry standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub stderr: T,
    pub failures: usize,
}

/// Sample mean of `θ̂ - θ₀` over independent trials.
pub fn empirical_bias(
    estimator: &dyn Estimator,
    model: &dyn ParametricModel,
    theta0: &DVector<f64>,
    cfg: &TrialConfig,
) -> Result<Estimate<DVector<f64>>> {
    let batch = run_trials(model, theta0, estimator, &WeightMatrix::identity(theta0.len()), cfg)?;
    Ok(Estimate {
        value: batch.bias(),
        stderr: batch.bias_stderr(),
        failures: batch.failures,
    })
}

/// Sample mean of `(θ̂ - θ₀) υᵀ(x, θ₀)` minus the identity.
pub fn empirical_bias_gradient(
    estimator: &dyn Estimator,
    model: &dyn ParametricModel,
    theta0: &DVector<f64>,
    cfg: &TrialConfig,
) -> Result<Estimate<DMatrix<f64>>> {
    let batch = run_trials(model, theta0, estimator, &WeightMatrix::identity(theta0.len()), cfg)?;
    Ok(Estimate {
        value: batch.bias_gradient(),
        stderr: batch.bias_gradient_stderr(),
        failures: batch.failures,
    })
}

/// Bias quantities and unbiasedness residuals at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub trials: usize,
    pub failures: usize,
    pub bias: DVector<f64>,
    pub bias_stderr: DVector<f64>,
    pub bias_gradient: DMatrix<f64>,
    pub bias_gradient_stderr: DMatrix<f64>,
    /// `UᵀWb`
    pub c_bias: DVector<f64>,
    pub c_bias_stderr: DVector<f64>,
    /// `‖b‖`
    pub x_cond1_residual: f64,
    pub x_cond1_stderr: f64,
    /// `DU`
    pub du: DMatrix<f64>,
    pub du_stderr: DMatrix<f64>,
    /// `‖DU‖_max`
    pub x_cond2_residual: f64,
    pub x_cond2_stderr: f64,
    /// `‖UᵀWb‖`
    pub c_cond1_residual: f64,
    pub c_cond1_stderr: f64,
    /// `‖bᵀWV_mU + u_mᵀWDU‖` for each `m`.
    pub c_cond2_residuals: Vec<f64>,
    pub c_cond2_stderr: Vec<f64>,
}

impl BiasReport {
    pub fn new(batch: &TrialBatch, u: &DMatrix<f64>, v: &[DMatrix<f64>], w: &WeightMatrix) -> Result<Self> {
        let m = batch.dim();
        let r = u.ncols();
        if u.nrows() != m {
            return Err(Error::dims("null-space basis rows", m, u.nrows()));
        }
        if v.len() != r {
            return Err(Error::dims("basis derivatives", r, v.len()));
        }
        if w.dim() != m {
            return Err(Error::dims("weight matrix", m, w.dim()));
        }
        let wm = w.matrix();
        let zero_p = DVector::zeros(m);
        let zero_q = DMatrix::zeros(m, m);

        let bias = batch.bias();
        let bias_stderr = batch.bias_stderr();
        let d = batch.bias_gradient();

        // DU entry (i, k) = Σ_j E[eυᵀ]_ij u_jk - u_ik
        let du = &d * u;
        let du_stderr = DMatrix::from_fn(m, r, |i, k| {
            let mut q = zero_q.clone();
            q.row_mut(i).copy_from(&u.column(k).transpose());
            batch.linear_stderr(&batch.functional(&zero_p, &q))
        });

        let wu = wm * u;
        let c_bias = wu.transpose() * &bias;
        let c_bias_stderr = DVector::from_fn(r, |k, _| {
            batch.linear_stderr(&batch.functional(&wu.column(k).into_owned(), &zero_q))
        });

        let mut c2_res = Vec::with_capacity(r);
        let mut c2_se = Vec::with_capacity(r);
        for (mi, vm) in v.iter().enumerate() {
            let wum = wu.column(mi).into_owned();
            let row = bias.transpose() * wm * vm * u + wum.transpose() * &du;
            let se = DVector::from_fn(r, |k, _| {
                let uk = u.column(k);
                let p = wm * vm * uk;
                let q = &wum * uk.transpose();
                batch.linear_stderr(&batch.functional(&p, &q))
            });
            c2_res.push(row.norm());
            c2_se.push(se.norm());
        }

        Ok(Self {
            trials: batch.trials,
            failures: batch.failures,
            x_cond1_residual: bias.norm(),
            x_cond1_stderr: bias_stderr.norm(),
            x_cond2_residual: du.amax(),
            x_cond2_stderr: du_stderr.max(),
            c_cond1_residual: c_bias.norm(),
            c_cond1_stderr: c_bias_stderr.norm(),
            c_cond2_residuals: c2_res,
            c_cond2_stderr: c2_se,
            bias,
            bias_stderr,
            bias_gradient_stderr: batch.bias_gradient_stderr(),
            bias_gradient: d,
            c_bias,
            c_bias_stderr,
            du,
            du_stderr,
        })
    }
}

/// Outcome of the two X-unbiasedness conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XUnbiasedness {
    /// `b = 0`
    pub zero_bias: bool,
    /// `DU = 0`
    pub zero_tangent_gradient: bool,
}

impl XUnbiasedness {
    pub fn passed(&self) -> bool {
        self.zero_bias && self.zero_tangent_gradient
    }
}

/// Outcome of the two local C-unbiasedness conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CUnbiasedness {
    /// `UᵀWb = 0`
    pub zero_c_bias: bool,
    /// `bᵀWV_mU + u_mᵀWDU = 0`, per tangent direction.
    pub gradient_conditions: Vec<bool>,
}

impl CUnbiasedness {
    pub fn gradient_condition(&self) -> bool {
        self.gradient_conditions.iter().all(|&p| p)
    }

    pub fn passed(&self) -> bool {
        self.zero_c_bias && self.gradient_condition()
    }
}

fn within(residual: f64, stderr: f64, k: f64) -> bool {
    residual <= k * stderr
}

pub fn check_x_unbiasedness(report: &BiasReport, k: f64) -> XUnbiasedness {
    XUnbiasedness {
        zero_bias: within(report.x_cond1_residual, report.x_cond1_stderr, k),
        zero_tangent_gradient: within(report.x_cond2_residual, report.x_cond2_stderr, k),
    }
}

pub fn check_c_unbiasedness(report: &BiasReport, k: f64) -> CUnbiasedness {
    CUnbiasedness {
        zero_c_bias: within(report.c_cond1_residual, report.c_cond1_stderr, k),
        gradient_conditions: report
            .c_cond2_residuals
            .iter()
            .zip(&report.c_cond2_stderr)
            .map(|(&r, &s)| within(r, s, k))
            .collect(),
    }
}
