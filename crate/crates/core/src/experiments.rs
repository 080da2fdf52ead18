//! Parameter sweeps comparing the CML estimators of the two builtin
//! scenarios against the CCRB and the LU-CCRB, with CSV and JSON output.
//!
//! The CSV starts with one `#`-prefixed line holding the full JSON spec,
//! followed by a fixed header and one row per grid point. Rows depend only
//! on the spec (seed and trial count included), so reruns are byte-identical.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundReport, WeightMatrix};
use crate::constraint::ConstraintSet;
use crate::diagnostics::BiasReport;
use crate::error::{Error, Result};
use crate::estimators::{Estimator, PeriodogramCml, SphereCml};
use crate::models::{ComplexSinusoidModel, LinearGaussianModel, ParametricModel};
use crate::montecarlo::{run_trials, TrialConfig};

/// Default Monte-Carlo trials per grid point.
pub const DEFAULT_TRIALS: usize = 10_000;

/// Relative gap below which an estimator is said to attain a bound.
pub const ATTAINMENT_GAP: f64 = 0.05;

pub const BUILTIN_IDS: &[&str] = &[
    "fig1", "fig1b", "fig2", "fig2b", "fig3", "fig4", "fig5", "fig6", "fig7", "fig7b", "fig8",
];

pub const CSV_HEADER: &str = "sweep_value,wmse_cml,wmse_stderr,ccrb_wmse,lu_ccrb,bias1,bias1_stderr,\
c_bias_norm,c_bias_stderr,du11,du11_stderr,failures,trials,seed";

/// The fixed part of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// `x_l = Hθ + n_l`, `l = 1…copies`, on the sphere `‖θ‖ = ρ` with
    /// `θ = ρ [sin φ₂ cos φ₁, sin φ₂ sin φ₁, cos φ₂]` and `W = I`.
    Sphere {
        /// Rows of the `N×3` design matrix.
        h: Vec<Vec<f64>>,
        sigma2: f64,
        rho: f64,
        phi1: f64,
        phi2: f64,
        #[serde(default = "one")]
        copies: usize,
    },
    /// Complex sinusoid with `|A| = c`, `A = c e^{j angle}` and `W = diag(1, 1, 0)`.
    Sinusoid {
        l1: i64,
        len: usize,
        sigma2: f64,
        c: f64,
        angle: f64,
        omega: f64,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Phi1,
    Phi2,
    Rho,
    Copies,
    InvSigma2,
    L1,
    Len,
    Angle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    pub scenario: Scenario,
    pub sweep: Sweep,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

fn as_index(v: f64, what: &str) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(invalid(format!("{what} must be an integer, got {v}")));
    }
    Ok(v as i64)
}

impl Scenario {
    /// Case 1 of the linear example: `H = I₃`, `σ² = 16`, `ρ = 1`, `φ₁ = 0.2π`, `φ₂ = 0.45π`.
    pub fn sphere_case1() -> Self {
        Scenario::Sphere {
            h: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            sigma2: 16.0,
            rho: 1.0,
            phi1: 0.2 * PI,
            phi2: 0.45 * PI,
            copies: 1,
        }
    }

    /// Case 2: `H = [I₃; h₄ᵀ]` with `h₄ = [0.9, 0.9, 0.6]`.
    pub fn sphere_case2() -> Self {
        match Self::sphere_case1() {
            Scenario::Sphere { mut h, sigma2, rho, phi1, phi2, copies } => {
                h.push(vec![0.9, 0.9, 0.6]);
                Scenario::Sphere { h, sigma2, rho, phi1, phi2, copies }
            }
            _ => unreachable!(),
        }
    }

    /// `l1 = 1`, `L = 15`, `σ² = 16`, `c = 0.2`, `∠A = 0.3π`, `ω = 0.9π`.
    pub fn sinusoid_default() -> Self {
        Scenario::Sinusoid {
            l1: 1,
            len: 15,
            sigma2: 16.0,
            c: 0.2,
            angle: 0.3 * PI,
            omega: 0.9 * PI,
        }
    }

    /// Builtin scenario by name: `sphere-case1`, `sphere-case2` or `sinusoid`.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "sphere-case1" | "sphere" => Ok(Self::sphere_case1()),
            "sphere-case2" => Ok(Self::sphere_case2()),
            "sinusoid" => Ok(Self::sinusoid_default()),
            _ => Err(invalid(format!(
                "unknown scenario '{name}' (expected sphere-case1, sphere-case2 or sinusoid)"
            ))),
        }
    }

    /// Replaces one field, e.g. `("rho", 2.0)`. Integer fields take integral values.
    pub fn set(&self, key: &str, value: f64) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().expect("scenario serializes to an object");
        if key == "kind" || key == "h" || !obj.contains_key(key) {
            return Err(invalid(format!("scenario has no settable field '{key}'")));
        }
        let json = if matches!(key, "l1" | "len" | "copies") {
            serde_json::Value::from(as_index(value, key)?)
        } else {
            serde_json::Value::from(value)
        };
        obj.insert(key.to_string(), json);
        serde_json::from_value(v).map_err(|e| invalid(e.to_string()))
    }

    fn apply(&self, var: SweepVariable, value: f64) -> Result<Self> {
        let key = match (self, var) {
            (Scenario::Sphere { .. }, SweepVariable::Phi1) => "phi1",
            (Scenario::Sphere { .. }, SweepVariable::Phi2) => "phi2",
            (Scenario::Sphere { .. }, SweepVariable::Rho) => "rho",
            (Scenario::Sphere { .. }, SweepVariable::Copies) => "copies",
            (_, SweepVariable::InvSigma2) => {
                if !(value > 0.0) {
                    return Err(invalid(format!("1/σ² must be positive, got {value}")));
                }
                return self.set("sigma2", 1.0 / value);
            }
            (Scenario::Sinusoid { .. }, SweepVariable::L1) => "l1",
            (Scenario::Sinusoid { .. }, SweepVariable::Len) => "len",
            (Scenario::Sinusoid { .. }, SweepVariable::Angle) => "angle",
            _ => return Err(invalid(format!("sweep variable {var:?} does not apply to this scenario"))),
        };
        self.set(key, value)
    }

    /// The true parameter.
    pub fn theta(&self) -> DVector<f64> {
        match *self {
            Scenario::Sphere { rho, phi1, phi2, .. } => DVector::from_row_slice(&[
                rho * phi2.sin() * phi1.cos(),
                rho * phi2.sin() * phi1.sin(),
                rho * phi2.cos(),
            ]),
            Scenario::Sinusoid { c, angle, omega, .. } => {
                DVector::from_row_slice(&[c * angle.cos(), c * angle.sin(), omega])
            }
        }
    }

    fn design(h: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let rows = h.len();
        if rows == 0 || h.iter().any(|r| r.len() != 3) {
            return Err(invalid("design matrix must have rows of length 3"));
        }
        Ok(DMatrix::from_fn(rows, 3, |i, j| h[i][j]))
    }

    /// Model, constraint, weight, CML estimator and true parameter.
    pub fn instantiate(&self) -> Result<Instance> {
        let theta = self.theta();
        match self {
            Scenario::Sphere { h, sigma2, rho, copies, .. } => {
                if !(*sigma2 > 0.0) {
                    return Err(invalid(format!("noise variance must be positive, got {sigma2}")));
                }
                if !(*rho > 0.0) {
                    return Err(invalid(format!("norm must be positive, got {rho}")));
                }
                let model = LinearGaussianModel::with_copies(Self::design(h)?, *sigma2, *copies)
                    .map_err(|e| invalid(e.to_string()))?;
                let estimator = SphereCml::new(model.clone(), *rho)?;
                Ok(Instance {
                    theta,
                    constraint: ConstraintSet::sphere3(*rho)?,
                    weight: WeightMatrix::identity(3),
                    model: Box::new(model),
                    estimator: Box::new(estimator),
                })
            }
            Scenario::Sinusoid { l1, len, sigma2, c, omega, .. } => {
                if !(*sigma2 > 0.0) {
                    return Err(invalid(format!("noise variance must be positive, got {sigma2}")));
                }
                if !(*c > 0.0) {
                    return Err(invalid(format!("amplitude must be positive, got {c}")));
                }
                if !(-PI..PI).contains(omega) {
                    return Err(invalid(format!("frequency must lie in [-π, π), got {omega}")));
                }
                let model = ComplexSinusoidModel::new(*l1, *len, *sigma2).map_err(|e| invalid(e.to_string()))?;
                Ok(Instance {
                    theta,
                    constraint: ConstraintSet::amplitude(*c)?,
                    weight: WeightMatrix::diagonal(&[1.0, 1.0, 0.0])?,
                    model: Box::new(model),
                    estimator: Box::new(PeriodogramCml::new(model, *c)?),
                })
            }
        }
    }
}

/// A scenario made concrete.
pub struct Instance {
    pub theta: DVector<f64>,
    pub constraint: ConstraintSet,
    pub weight: WeightMatrix,
    pub model: Box<dyn ParametricModel>,
    pub estimator: Box<dyn Estimator>,
}

impl Instance {
    pub fn bounds(&self) -> Result<BoundReport> {
        let feas = self.constraint.validate_feasible(&self.theta)?;
        if !feas.feasible {
            return Err(Error::Infeasible {
                residual: feas.residual,
                tolerance: feas.tolerance,
            });
        }
        let (basis, derivs) = self.constraint.tangent_frame(&self.theta)?;
        let j = self.model.fim(&self.theta)?;
        BoundReport::new(&j, &basis.u, &derivs.v, &self.weight)
    }
}

/// Bounds at the scenario's true parameter as a JSON object.
pub fn bounds_json(scenario: &Scenario) -> Result<serde_json::Value> {
    let inst = scenario.instantiate()?;
    let r = inst.bounds()?;
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    };
    Ok(serde_json::json!({
        "scenario": scenario,
        "theta": inst.theta.as_slice(),
        "ccrb_wmse": r.ccrb_wmse,
        "lu_ccrb": r.lu_ccrb,
        "regular": r.regular,
        "ccrb_matrix": rows(&r.ccrb_matrix),
        "u": rows(&r.u),
    }))
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub sweep_value: f64,
    pub wmse_cml: f64,
    pub wmse_stderr: f64,
    pub ccrb_wmse: f64,
    pub lu_ccrb: f64,
    /// Bias of the first parameter.
    pub bias1: f64,
    pub bias1_stderr: f64,
    pub c_bias_norm: f64,
    pub c_bias_stderr: f64,
    /// `[DU]₁₁`
    pub du11: f64,
    pub du11_stderr: f64,
    pub failures: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Row {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.sweep_value,
            self.wmse_cml,
            self.wmse_stderr,
            self.ccrb_wmse,
            self.lu_ccrb,
            self.bias1,
            self.bias1_stderr,
            self.c_bias_norm,
            self.c_bias_stderr,
            self.du11,
            self.du11_stderr,
            self.failures,
            self.trials,
            self.seed
        )
    }
}

/// Smallest grid values at which the CML risk is within 5% of each bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crossings {
    pub ccrb_wmse: Option<f64>,
    pub lu_ccrb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub rows: Vec<Row>,
    pub crossings: Crossings,
    pub wall_time_s: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(invalid("experiment id is empty"));
        }
        if self.trials < 2 {
            return Err(invalid(format!("need at least 2 trials, got {}", self.trials)));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be at least 1"));
        }
        let values = &self.sweep.values;
        if values.is_empty() {
            return Err(invalid("sweep grid is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep grid contains non-finite values"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sweep grid must be strictly increasing"));
        }
        self.scenario.instantiate()?;
        for &v in values {
            let point = self.scenario.apply(self.sweep.variable, v)?;
            point
                .instantiate()?
                .bounds()
                .map_err(|e| invalid(format!("grid value {v}: {e}")))?;
        }
        Ok(())
    }

    /// Builtin figure spec by id; see [`BUILTIN_IDS`].
    pub fn builtin(id: &str) -> Result<Self> {
        let spec = |scenario: Scenario, variable: SweepVariable, values: Vec<f64>| ExperimentSpec {
            id: id.to_string(),
            scenario,
            sweep: Sweep { variable, values },
            trials: DEFAULT_TRIALS,
            seed: 0,
            workers: None,
        };
        let phi1_grid: Vec<f64> = (0..24).map(|k| k as f64 * PI / 12.0).collect();
        let phi2_grid: Vec<f64> = (1..20).map(|k| k as f64 * 0.05 * PI).collect();
        let sinusoid_c = |c: f64| match Scenario::sinusoid_default() {
            Scenario::Sinusoid { l1, len, sigma2, angle, omega, .. } => Scenario::Sinusoid {
                l1,
                len,
                sigma2,
                c,
                angle,
                omega,
            },
            _ => unreachable!(),
        };
        let inv_sigma2_grid: Vec<f64> = (0..=20).map(|k| 10f64.powf(-2.0 + 0.25 * k as f64)).collect();
        Ok(match id {
            "fig1" | "fig2" => spec(Scenario::sphere_case1(), SweepVariable::Phi1, phi1_grid),
            "fig1b" | "fig2b" => spec(Scenario::sphere_case1(), SweepVariable::Phi2, phi2_grid),
            "fig3" => spec(
                Scenario::sphere_case1(),
                SweepVariable::Rho,
                vec![0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0, 30.0, 40.0, 60.0, 80.0, 100.0],
            ),
            "fig4" => spec(Scenario::sphere_case2(), SweepVariable::Copies, log_grid(1, 600, 24)),
            "fig5" => spec(Scenario::sinusoid_default(), SweepVariable::Angle, phi1_grid),
            "fig6" => spec(
                Scenario::sinusoid_default(),
                SweepVariable::L1,
                (-10..=10).map(|k| k as f64 * 10.0).collect(),
            ),
            "fig7" => spec(sinusoid_c(0.2), SweepVariable::InvSigma2, inv_sigma2_grid),
            "fig7b" => spec(sinusoid_c(0.5), SweepVariable::InvSigma2, inv_sigma2_grid),
            "fig8" => {
                // long grids are slow; 10³ trials keeps the default run short
                let mut s = spec(sinusoid_c(1.0), SweepVariable::Len, log_grid(2, 600, 24));
                s.trials = 1_000;
                s
            }
            _ => {
                return Err(invalid(format!(
                    "unknown figure '{id}' (expected one of {})",
                    BUILTIN_IDS.join(", ")
                )))
            }
        })
    }
}

/// About `points` integers between `lo` and `hi`, logarithmically spaced, deduplicated.
pub fn log_grid(lo: usize, hi: usize, points: usize) -> Vec<f64> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<f64> = (0..points)
        .map(|k| (a + (b - a) * k as f64 / (points - 1).max(1) as f64).exp().round())
        .collect();
    out.dedup();
    out
}

fn first_crossing(rows: &[Row], bound: impl Fn(&Row) -> f64) -> Option<f64> {
    rows.iter()
        .find(|r| {
            let b = bound(r);
            b > 0.0 && ((r.wmse_cml - b) / b).abs() < ATTAINMENT_GAP
        })
        .map(|r| r.sweep_value)
}

/// Evaluates bounds and runs the Monte-Carlo trials at every grid point.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let start = Instant::now();
    let cfg = TrialConfig {
        seed: spec.seed,
        trials: spec.trials,
        workers: spec.workers,
    };
    let mut rows = Vec::with_capacity(spec.sweep.values.len());
    for &value in &spec.sweep.values {
        let inst = spec.scenario.apply(spec.sweep.variable, value)?.instantiate()?;
        let bounds = inst.bounds()?;
        let batch = run_trials(inst.model.as_ref(), &inst.theta, inst.estimator.as_ref(), &inst.weight, &cfg)?;
        let bias = BiasReport::new(&batch, &bounds.u, &bounds.v, &inst.weight)?;
        log::info!(
            "{} {:?}={value}: wmse={:.6} ccrb={:.6} lu={:.6}",
            spec.id,
            spec.sweep.variable,
            batch.wmse,
            bounds.ccrb_wmse,
            bounds.lu_ccrb
        );
        rows.push(Row {
            sweep_value: value,
            wmse_cml: batch.wmse,
            wmse_stderr: batch.wmse_stderr,
            ccrb_wmse: bounds.ccrb_wmse,
            lu_ccrb: bounds.lu_ccrb,
            bias1: bias.bias[0],
            bias1_stderr: bias.bias_stderr[0],
            c_bias_norm: bias.c_cond1_residual,
            c_bias_stderr: bias.c_cond1_stderr,
            du11: bias.du[(0, 0)],
            du11_stderr: bias.du_stderr[(0, 0)],
            failures: batch.failures,
            trials: spec.trials,
            seed: spec.seed,
        });
    }
    let crossings = Crossings {
        ccrb_wmse: first_crossing(&rows, |r| r.ccrb_wmse),
        lu_ccrb: first_crossing(&rows, |r| r.lu_ccrb),
    };
    Ok(ExperimentResult {
        spec: spec.clone(),
        rows,
        crossings,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

impl ExperimentResult {
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "# {}", serde_json::to_string(&self.spec)?).expect("writing to a String");
        writeln!(out, "{CSV_HEADER}").expect("writing to a String");
        for r in &self.rows {
            writeln!(out, "{}", r.csv_line()).expect("writing to a String");
        }
        Ok(out)
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.spec.id,
            "config": self.spec,
            "rows": self.rows.len(),
            "wall_time_s": self.wall_time_s,
            "crossings": self.crossings,
            "failures": self.rows.iter().map(|r| r.failures).sum::<usize>(),
        })
    }

    /// Writes `<path>` (CSV) and the JSON summary next to it with a `.json` extension.
    pub fn write(&self, csv_path: &Path) -> Result<(PathBuf, PathBuf)> {
        let json_path = csv_path.with_extension("json");
        fs::write(csv_path, self.to_csv()?)?;
        fs::write(&json_path, serde_json::to_string_pretty(&self.summary())? + "\n")?;
        Ok((csv_path.to_path_buf(), json_path))
    }
}
