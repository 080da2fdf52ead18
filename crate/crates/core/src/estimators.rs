//! Constrained maximum-likelihood estimators for the example models and
//! the locally defined estimators that attain the CCRB and the LU-CCRB.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::bounds::{lu_ccrb, WeightMatrix};
use crate::constraint::ConstraintSet;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, pinv, sorted_symmetric_eigen, symmetrize};
use crate::models::{ComplexSinusoidModel, LinearGaussianModel, ParametricModel};

/// Default periodogram grid size.
pub const DEFAULT_PERIODOGRAM_GRID: usize = 1 << 14;

const SECULAR_MAX_ITER: usize = 200;

/// A point estimator `x ↦ θ̂(x)`; any context it needs is bound at construction.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;

    fn estimate(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Always returns the same point. Useful as an oracle in diagnostics.
#[derive(Debug, Clone)]
pub struct FixedEstimator {
    pub theta: DVector<f64>,
}

impl Estimator for FixedEstimator {
    fn name(&self) -> &str {
        "fixed"
    }

    fn estimate(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.theta.clone())
    }
}

fn orthogonal_scale(h: &DMatrix<f64>) -> Option<f64> {
    let gram = h.tr_mul(h);
    let m = gram.nrows();
    let beta = gram.trace() / m as f64;
    let dev = max_abs(&(&gram - DMatrix::identity(m, m) * beta));
    (beta > 0.0 && dev <= 1e-10 * beta.max(1.0)).then_some(beta)
}

/// `ρ Hᵀx / ‖Hᵀx‖`, the norm-constrained ML estimate when `HᵀH = βI`.
pub fn cml_sphere_orthogonal(x: &DVector<f64>, h: &DMatrix<f64>, beta: f64, rho: f64) -> Result<DVector<f64>> {
    if h.nrows() != x.len() {
        return Err(Error::dims("observation", h.nrows(), x.len()));
    }
    match orthogonal_scale(h) {
        Some(b) if (b - beta).abs() <= 1e-10 * beta.abs().max(1.0) => {}
        _ => return Err(Error::InvalidInput(format!("HᵀH is not {beta}·I"))),
    }
    normalize_to_sphere(h.tr_mul(x), rho)
}

fn normalize_to_sphere(g: DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    let n = g.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateObservation("Hᵀx vanishes".into()));
    }
    Ok(g * (rho / n))
}

/// Minimizes `θᵀGθ - 2gᵀθ` over `‖θ‖ = ρ`, the boundary trust-region subproblem.
///
/// Solves the secular equation `‖(G + μI)^{-1} g‖ = ρ` for the root
/// `μ > -λ_min(G)` by Newton's method on `1/‖θ(μ)‖ - 1/ρ`, safeguarded by
/// bisection. When `g` has no component along the lowest eigenspace and the
/// root would sit at `μ = -λ_min` (the hard case) the solution is completed
/// with a multiple of the lowest eigenvector.
#[derive(Debug, Clone)]
pub struct SphereLeastSquares {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl SphereLeastSquares {
    pub fn new(gram: &DMatrix<f64>) -> Result<Self> {
        if gram.nrows() != gram.ncols() || gram.nrows() == 0 {
            return Err(Error::InvalidInput("Gram matrix must be square and nonempty".into()));
        }
        let (values, vectors) = sorted_symmetric_eigen(&symmetrize(gram));
        Ok(Self { values, vectors })
    }

    pub fn solve(&self, g: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
        if g.len() != self.values.len() {
            return Err(Error::dims("linear term", self.values.len(), g.len()));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {rho}")));
        }
        let lam = &self.values;
        let n = lam.len();
        let b = self.vectors.tr_mul(g);
        let bnorm = b.norm();
        let lam1 = lam[0];
        let scale = lam.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let critical: Vec<bool> = lam.iter().map(|&l| l - lam1 <= 1e-12 * scale).collect();
        let b_crit = (0..n).filter(|&i| critical[i]).map(|i| b[i] * b[i]).sum::<f64>().sqrt();

        if b_crit <= f64::EPSILON * bnorm || bnorm == 0.0 {
            // candidate hard case: evaluate the non-critical part at μ = -λ1
            let mut y = DVector::zeros(n);
            for i in (0..n).filter(|&i| !critical[i]) {
                y[i] = b[i] / (lam[i] - lam1);
            }
            let ynorm = y.norm();
            if ynorm <= rho {
                let first = critical.iter().position(|&c| c).unwrap_or(0);
                y[first] = (rho * rho - ynorm * ynorm).max(0.0).sqrt();
                return Ok(&self.vectors * y);
            }
        }

        let norm_at = |mu: f64| -> (f64, f64) {
            let mut s2 = 0.0;
            let mut s3 = 0.0;
            for i in 0..n {
                let d = lam[i] + mu;
                let t = b[i] / d;
                s2 += t * t;
                s3 += t * t / d;
            }
            (s2.sqrt(), s3)
        };

        let mut lo = -lam1;
        let mut hi = -lam1 + bnorm / rho;
        let mut mu = hi;
        for _ in 0..SECULAR_MAX_ITER {
            let (phi, s3) = norm_at(mu);
            if (phi - rho).abs() <= 1e-10 * rho {
                let y = DVector::from_fn(n, |i, _| b[i] / (lam[i] + mu));
                let theta = &self.vectors * y;
                let tn = theta.norm();
                return Ok(theta * (rho / tn));
            }
            let resid = 1.0 / phi - 1.0 / rho;
            if resid > 0.0 {
                hi = mu;
            } else {
                lo = mu;
            }
            // d(1/φ)/dμ = Σ b_i²/(λ_i+μ)³ / φ³
            let slope = s3 / (phi * phi * phi);
            let newton = mu - resid / slope;
            mu = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(Error::NoConvergence {
            iterations: SECULAR_MAX_ITER,
            context: "sphere-constrained least squares",
        })
    }
}

/// Norm-constrained least squares `argmin ‖x - Hθ‖²` over `‖θ‖ = ρ`.
pub fn cml_sphere_general(x: &DVector<f64>, h: &DMatrix<f64>, rho: f64) -> Result<DVector<f64>> {
    if h.nrows() != x.len() {
        return Err(Error::dims("observation", h.nrows(), x.len()));
    }
    SphereLeastSquares::new(&h.tr_mul(h))?.solve(&h.tr_mul(x), rho)
}

/// Norm-constrained ML for a (possibly stacked) linear Gaussian model.
///
/// Uses the closed form when `HᵀH = βI` and the secular-equation solver otherwise.
#[derive(Debug, Clone)]
pub struct SphereCml {
    model: LinearGaussianModel,
    rho: f64,
    solver: Option<SphereLeastSquares>,
}

impl SphereCml {
    pub fn new(model: LinearGaussianModel, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {rho}")));
        }
        let solver = match orthogonal_scale(model.h()) {
            Some(_) => None,
            None => Some(SphereLeastSquares::new(&model.h().tr_mul(model.h()))?),
        };
        Ok(Self { model, rho, solver })
    }

    pub fn is_orthogonal(&self) -> bool {
        self.solver.is_none()
    }
}

impl Estimator for SphereCml {
    fn name(&self) -> &str {
        "cml_sphere"
    }

    fn estimate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.model.matched_filter(x)?;
        match &self.solver {
            None => normalize_to_sphere(g, self.rho),
            // the stacked Gram matrix is L·HᵀH; rescaling g keeps one solver for all L
            Some(s) => s.solve(&(g / self.model.copies() as f64), self.rho),
        }
    }
}

/// `Hᵀx / β` (averaged over stacked copies), the unconstrained ML estimate when `HᵀH = βI`.
pub fn ml_linear_unconstrained(x: &DVector<f64>, h: &DMatrix<f64>, beta: f64) -> Result<DVector<f64>> {
    if h.nrows() != x.len() {
        return Err(Error::dims("observation", h.nrows(), x.len()));
    }
    Ok(h.tr_mul(x) / beta)
}

/// Unconstrained ML `(HᵀH)^{-1} Hᵀx̄` for a linear Gaussian model.
#[derive(Debug, Clone)]
pub struct LinearMl {
    model: LinearGaussianModel,
    gram_inv: DMatrix<f64>,
}

impl LinearMl {
    pub fn new(model: LinearGaussianModel) -> Result<Self> {
        let gram = model.h().tr_mul(model.h()) * model.copies() as f64;
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::SingularMatrix("HᵀH is singular".into()))?;
        Ok(Self { model, gram_inv })
    }
}

impl Estimator for LinearMl {
    fn name(&self) -> &str {
        "ml_linear"
    }

    fn estimate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.gram_inv * self.model.matched_filter(x)?)
    }
}

/// Amplitude-constrained ML for a complex sinusoid: periodogram peak for
/// `ω`, then the phase of `Y(x, ω̂)` scaled to modulus `c`.
#[derive(Clone)]
pub struct PeriodogramCml {
    model: ComplexSinusoidModel,
    c: f64,
    grid: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PeriodogramCml {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodogramCml")
            .field("model", &self.model)
            .field("c", &self.c)
            .field("grid", &self.grid)
            .finish()
    }
}

impl PeriodogramCml {
    pub fn new(model: ComplexSinusoidModel, c: f64) -> Result<Self> {
        Self::with_grid(model, c, DEFAULT_PERIODOGRAM_GRID)
    }

    pub fn with_grid(model: ComplexSinusoidModel, c: f64, grid: usize) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidInput(format!("amplitude must be positive, got {c}")));
        }
        if grid < model.len() {
            return Err(Error::InvalidInput(format!(
                "grid of {grid} points is coarser than the {} samples",
                model.len()
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(grid);
        Ok(Self { model, c, grid, fft })
    }

    /// `Y(x, ω) = (1/L) Σ_l x_l e^{-j l ω}`
    fn y(&self, xc: &[Complex64], omega: f64) -> Complex64 {
        let sum: Complex64 = self
            .model
            .indices()
            .zip(xc)
            .map(|(l, x)| x * Complex64::from_polar(1.0, -(l as f64) * omega))
            .sum();
        sum / self.model.len() as f64
    }

    /// Frequency estimate in `[-π, π)`.
    pub fn frequency(&self, xc: &[Complex64]) -> f64 {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid];
        buf[..xc.len()].copy_from_slice(xc);
        self.fft.process(&mut buf);
        // |Y| does not depend on the index offset, so the grid peak is l1-free
        let k = buf
            .iter()
            .enumerate()
            .fold((0usize, -1.0f64), |(bk, bv), (k, z)| {
                let v = z.norm_sqr();
                if v > bv {
                    (k, v)
                } else {
                    (bk, bv)
                }
            })
            .0;
        let step = 2.0 * PI / self.grid as f64;
        let center = k as f64 * step;
        let power = |w: f64| self.y(xc, w).norm_sqr();
        let omega = golden_section_max(power, center - step, center + step, 1e-10);
        wrap_angle(omega)
    }
}

impl Estimator for PeriodogramCml {
    fn name(&self) -> &str {
        "cml_sinusoid"
    }

    fn estimate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let xc = self.model.to_complex(x)?;
        let omega = self.frequency(&xc);
        let y = self.y(&xc, omega);
        let mag = y.norm();
        if !(mag > 0.0) || !mag.is_finite() {
            return Err(Error::DegenerateObservation("periodogram peak is zero".into()));
        }
        Ok(DVector::from_row_slice(&[self.c * y.re / mag, self.c * y.im / mag, omega]))
    }
}

/// One-shot amplitude-constrained ML for a complex sinusoid observation.
pub fn cml_complex_sinusoid(x: &DVector<f64>, l1: i64, len: usize, c: f64) -> Result<DVector<f64>> {
    // σ² does not enter the estimator
    let model = ComplexSinusoidModel::new(l1, len, 1.0)?;
    PeriodogramCml::new(model, c)?.estimate(x)
}

/// Maps an angle into `[-π, π)`.
pub fn wrap_angle(w: f64) -> f64 {
    (w + PI).rem_euclid(2.0 * PI) - PI
}

fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `θ₀ + U (UᵀJU)^† Uᵀ υ(x, θ₀)`, unbiased with minimal MSE near `θ₀`.
pub struct CcrbEfficient<M: ParametricModel> {
    model: M,
    theta0: DVector<f64>,
    gain: DMatrix<f64>,
}

impl<M: ParametricModel> CcrbEfficient<M> {
    pub fn new(model: M, constraint: &ConstraintSet, theta0: DVector<f64>) -> Result<Self> {
        let basis = constraint.null_space_basis(&theta0, None)?;
        let u = &basis.u;
        let j = model.fim(&theta0)?;
        let b = symmetrize(&(u.transpose() * &j * u));
        let gain = u * pinv(&b, None) * u.transpose();
        Ok(Self { model, theta0, gain })
    }
}

impl<M: ParametricModel> Estimator for CcrbEfficient<M> {
    fn name(&self) -> &str {
        "ccrb_efficient"
    }

    fn estimate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let score = self.model.score(x, &self.theta0)?;
        Ok(&self.theta0 + &self.gain * score)
    }
}

/// `θ₀ + Σ_m (S^(m) + T^(m)(x)) c_m` with `c = Γ^† vec(UᵀWU)`, which attains
/// the LU-CCRB at `θ₀`.
///
/// With `T^(m) = W^†W u_m υᵀU` the sum collapses to
/// `θ₀ + Σ_m S^(m) c_m + W^†W U Cᵀ Uᵀ υ`, where `C` holds the `c_m` as columns.
pub struct LuEfficient<M: ParametricModel> {
    model: M,
    theta0: DVector<f64>,
    offset: DVector<f64>,
    gain: DMatrix<f64>,
}

impl<M: ParametricModel> LuEfficient<M> {
    pub fn new(model: M, constraint: &ConstraintSet, theta0: DVector<f64>, w: &WeightMatrix) -> Result<Self> {
        let (basis, derivs) = constraint.tangent_frame(&theta0)?;
        let j = model.fim(&theta0)?;
        let lu = lu_ccrb(&j, &basis.u, &derivs.v, w)?;
        let cmat = lu.coefficient_matrix();
        let m = theta0.len();
        let mut offset = DVector::zeros(m);
        for (k, s) in lu.s.iter().enumerate() {
            offset += s * cmat.column(k);
        }
        let gain = w.pinv() * w.matrix() * &basis.u * cmat.transpose() * basis.u.transpose();
        Ok(Self {
            model,
            theta0,
            offset,
            gain,
        })
    }

    /// The deterministic part `Σ_m S^(m) c_m`.
    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }
}

impl<M: ParametricModel> Estimator for LuEfficient<M> {
    fn name(&self) -> &str {
        "lu_efficient"
    }

    fn estimate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let score = self.model.score(x, &self.theta0)?;
        Ok(&self.theta0 + &self.offset + &self.gain * score)
    }
}
