//! Equality-constrained parameter sets `{θ : f(θ) = 0}` and the orthonormal
//! tangent frame `U(θ)` spanning the null space of the constraint Jacobian,
//! together with its parameter gradients `V_m(θ) = ∇u_m(θ)`.
//!
//! A [`ConstraintSet`] either carries a closed-form basis field (and
//! optionally its closed-form gradients), or derives the basis numerically
//! from the Jacobian. Numerically derived bases are made into a smooth field
//! around an anchor by orthogonal Procrustes alignment ([`align_basis`]), so
//! their finite-difference gradients are well defined.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite_vector, max_abs, svd};

type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type BasisFn = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;
type DerivativesFn = Arc<dyn Fn(&DVector<f64>) -> Result<Vec<DMatrix<f64>>> + Send + Sync>;

/// Default relative feasibility tolerance, applied as `tol * (1 + ‖θ‖)`.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-10;

/// Relative singular-value threshold below which `F(θ)` is considered rank deficient.
const RANK_REL_TOL: f64 = 1e-10;

/// How the null-space basis is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisProvider {
    /// User-supplied closed-form `U(θ)`.
    Analytic,
    /// Orthogonal decomposition of `F(θ)`.
    Numeric,
}

/// A constrained parameter set with a Jacobian and a tangent-frame provider.
#[derive(Clone)]
pub struct ConstraintSet {
    dim_param: usize,
    dim_constraint: usize,
    value: VectorFn,
    jacobian: MatrixFn,
    basis: Option<BasisFn>,
    derivatives: Option<DerivativesFn>,
    feasibility_tol: f64,
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("dim_param", &self.dim_param)
            .field("dim_constraint", &self.dim_constraint)
            .field("provider", &self.provider())
            .field("analytic_derivatives", &self.derivatives.is_some())
            .field("feasibility_tol", &self.feasibility_tol)
            .finish()
    }
}

/// Result of a feasibility check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// `‖f(θ)‖_∞`
    pub residual: f64,
    pub tolerance: f64,
}

/// Orthonormal basis of the null space of `F(θ)` at an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceBasis {
    pub anchor: DVector<f64>,
    pub u: DMatrix<f64>,
}

impl NullSpaceBasis {
    /// Number of tangent directions, `M - K`.
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }
}

/// Gradients of the basis columns, `V_m = ∇_θ u_m`, one `M×M` matrix per column.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDerivatives {
    pub v: Vec<DMatrix<f64>>,
}

impl BasisDerivatives {
    pub fn zeros(dim_param: usize, rank: usize) -> Self {
        Self {
            v: vec![DMatrix::zeros(dim_param, dim_param); rank],
        }
    }

    /// Component of each `V_m` orthogonal to the tangent space, `(I - U Uᵀ) V_m`.
    ///
    /// This part is fixed by the constraint geometry alone; the tangential
    /// remainder depends on how the basis field rotates within the tangent space.
    pub fn normal_components(&self, u: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let m = u.nrows();
        let p = DMatrix::identity(m, m) - u * u.transpose();
        self.v.iter().map(|v| &p * v).collect()
    }
}

impl ConstraintSet {
    /// Constraint set with a numerically derived basis.
    pub fn new<F, J>(dim_param: usize, dim_constraint: usize, f: F, jacobian: J) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if dim_param == 0 {
            return Err(Error::InvalidInput("parameter dimension must be at least 1".into()));
        }
        if dim_constraint >= dim_param {
            return Err(Error::InvalidInput(format!(
                "need fewer constraints than parameters (K = {dim_constraint}, M = {dim_param})"
            )));
        }
        Ok(Self {
            dim_param,
            dim_constraint,
            value: Arc::new(f),
            jacobian: Arc::new(jacobian),
            basis: None,
            derivatives: None,
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
        })
    }

    /// Attach a closed-form basis field `U(θ)`.
    pub fn with_analytic_basis<B>(mut self, basis: B) -> Self
    where
        B: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.basis = Some(Arc::new(basis));
        self
    }

    /// Attach closed-form gradients `V_m(θ)` of the basis columns.
    pub fn with_analytic_derivatives<D>(mut self, derivatives: D) -> Self
    where
        D: Fn(&DVector<f64>) -> Result<Vec<DMatrix<f64>>> + Send + Sync + 'static,
    {
        self.derivatives = Some(Arc::new(derivatives));
        self
    }

    /// Drop closed-form gradients so they are obtained by finite differences.
    pub fn without_analytic_derivatives(mut self) -> Self {
        self.derivatives = None;
        self
    }

    /// Drop every closed-form piece and derive the basis from `F(θ)`.
    pub fn into_numeric(mut self) -> Self {
        self.basis = None;
        self.derivatives = None;
        self
    }

    pub fn with_feasibility_tol(mut self, tol: f64) -> Self {
        self.feasibility_tol = tol;
        self
    }

    /// No constraints: `U = I`, `V_m = 0`.
    pub fn unconstrained(dim_param: usize) -> Result<Self> {
        Ok(Self::new(
            dim_param,
            0,
            |_| DVector::zeros(0),
            move |_| DMatrix::zeros(0, dim_param),
        )?
        .with_analytic_basis(move |_| Ok(DMatrix::identity(dim_param, dim_param)))
        .with_analytic_derivatives(move |_| Ok(BasisDerivatives::zeros(dim_param, dim_param).v)))
    }

    /// Linear constraints `Aθ + b = 0`. The numeric basis is constant, so `V_m = 0`.
    pub fn linear(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let (k, m) = a.shape();
        if b.len() != k {
            return Err(Error::dims("linear constraint offset", k, b.len()));
        }
        let a_f = a.clone();
        let rank = m - k;
        Ok(Self::new(m, k, move |t| &a_f * t + &b, move |_| a.clone())?
            .with_analytic_derivatives(move |_| Ok(BasisDerivatives::zeros(m, rank).v)))
    }

    /// Norm constraint `‖θ‖² - ρ² = 0` in any dimension, numeric basis.
    pub fn sphere(dim_param: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidInput(format!("sphere radius must be positive, got {rho}")));
        }
        let rho2 = rho * rho;
        Self::new(
            dim_param,
            1,
            move |t| DVector::from_element(1, t.norm_squared() - rho2),
            |t| DMatrix::from_row_slice(1, t.len(), t.as_slice()) * 2.0,
        )
    }

    /// Three-dimensional norm constraint with the closed-form spherical frame
    /// `u_1 ∝ [θ₂, -θ₁, 0]`, `u_2 ∝ [θ₁θ₃, θ₂θ₃, -(θ₁²+θ₂²)]` and its gradients.
    /// The frame is singular on the polar axis `θ₁ = θ₂ = 0`.
    pub fn sphere3(rho: f64) -> Result<Self> {
        Ok(Self::sphere(3, rho)?
            .with_analytic_basis(sphere3_basis)
            .with_analytic_derivatives(sphere3_derivatives))
    }

    /// Amplitude constraint `θ₁² + θ₂² - c² = 0` on `θ = [Re A, Im A, ω]`,
    /// with frame `u_1 = [θ₂, -θ₁, 0]/|A|`, `u_2 = [0, 0, 1]`.
    pub fn amplitude(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidInput(format!("amplitude must be positive, got {c}")));
        }
        let c2 = c * c;
        Ok(Self::new(
            3,
            1,
            move |t| DVector::from_element(1, t[0] * t[0] + t[1] * t[1] - c2),
            |t| DMatrix::from_row_slice(1, 3, &[2.0 * t[0], 2.0 * t[1], 0.0]),
        )?
        .with_analytic_basis(amplitude_basis)
        .with_analytic_derivatives(amplitude_derivatives))
    }

    pub fn dim_param(&self) -> usize {
        self.dim_param
    }

    pub fn dim_constraint(&self) -> usize {
        self.dim_constraint
    }

    /// Dimension of the tangent space, `M - K`.
    pub fn tangent_dim(&self) -> usize {
        self.dim_param - self.dim_constraint
    }

    pub fn provider(&self) -> BasisProvider {
        if self.basis.is_some() {
            BasisProvider::Analytic
        } else {
            BasisProvider::Numeric
        }
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.derivatives.is_some()
    }

    fn check_dim(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim_param {
            return Err(Error::dims("constraint parameter", self.dim_param, theta.len()));
        }
        ensure_finite_vector("constraint parameter", theta)
    }

    pub fn value(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(theta)?;
        Ok((self.value)(theta))
    }

    pub fn jacobian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(theta)?;
        let f = (self.jacobian)(theta);
        if f.shape() != (self.dim_constraint, self.dim_param) {
            return Err(Error::dims(
                "constraint Jacobian",
                format!("{}x{}", self.dim_constraint, self.dim_param),
                format!("{}x{}", f.nrows(), f.ncols()),
            ));
        }
        Ok(f)
    }

    /// Checks `‖f(θ)‖_∞ ≤ tol · (1 + ‖θ‖)`.
    pub fn validate_feasible(&self, theta: &DVector<f64>) -> Result<Feasibility> {
        let f = self.value(theta)?;
        let residual = f.amax();
        let tolerance = self.feasibility_tol * (1.0 + theta.norm());
        Ok(Feasibility {
            feasible: residual <= tolerance,
            residual,
            tolerance,
        })
    }

    fn check_rank(&self, f: &DMatrix<f64>) -> Result<()> {
        let k = self.dim_constraint;
        if k == 0 {
            return Ok(());
        }
        let sv = svd(f)?.singular_values;
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > RANK_REL_TOL * smax && s > 0.0).count();
        if rank < k {
            return Err(Error::RedundantConstraints { rank, expected: k });
        }
        Ok(())
    }

    /// Orthonormal basis `U(θ)` of the null space of `F(θ)`.
    ///
    /// Requires `θ` feasible and `F(θ)` of full row rank. For a numeric
    /// provider the raw basis is aligned to `reference` when one is given.
    pub fn null_space_basis(
        &self,
        theta: &DVector<f64>,
        reference: Option<&DMatrix<f64>>,
    ) -> Result<NullSpaceBasis> {
        let feas = self.validate_feasible(theta)?;
        if !feas.feasible {
            return Err(Error::Infeasible {
                residual: feas.residual,
                tolerance: feas.tolerance,
            });
        }
        let f = self.jacobian(theta)?;
        self.check_rank(&f)?;
        let u = match &self.basis {
            Some(basis) => {
                let u = basis(theta)?;
                if u.shape() != (self.dim_param, self.tangent_dim()) {
                    return Err(Error::dims(
                        "analytic basis",
                        format!("{}x{}", self.dim_param, self.tangent_dim()),
                        format!("{}x{}", u.nrows(), u.ncols()),
                    ));
                }
                u
            }
            None => {
                let raw = raw_null_space(&f, self.dim_param)?;
                match reference {
                    Some(r) => align_basis(r, &raw)?,
                    None => raw,
                }
            }
        };
        Ok(NullSpaceBasis {
            anchor: theta.clone(),
            u,
        })
    }

    /// Gradients `V_m` of the basis field at the basis anchor.
    ///
    /// Closed-form gradients are returned when available. Otherwise each
    /// column `j` of `V_m` is a central difference of the basis field along
    /// `e_j` with step `cbrt(eps) · (1 + |θ_j|)`. A closed-form field is
    /// differenced as is; a numeric field is aligned to the anchor basis
    /// first. Off-manifold evaluation is fine: only `F(θ ± h e_j)` is needed.
    pub fn basis_derivatives(&self, basis: &NullSpaceBasis) -> Result<BasisDerivatives> {
        let theta = &basis.anchor;
        self.check_dim(theta)?;
        let m = self.dim_param;
        let r = self.tangent_dim();
        if basis.u.shape() != (m, r) {
            return Err(Error::dims(
                "basis",
                format!("{m}x{r}"),
                format!("{}x{}", basis.u.nrows(), basis.u.ncols()),
            ));
        }
        if let Some(derivs) = &self.derivatives {
            let v = derivs(theta)?;
            if v.len() != r || v.iter().any(|vm| vm.shape() != (m, m)) {
                return Err(Error::dims("analytic basis derivatives", format!("{r} of {m}x{m}"), v.len()));
            }
            return Ok(BasisDerivatives { v });
        }

        let field = |point: &DVector<f64>| -> Result<DMatrix<f64>> {
            match &self.basis {
                Some(b) => b(point),
                None => {
                    let f = self.jacobian(point)?;
                    align_basis(&basis.u, &raw_null_space(&f, m)?)
                }
            }
        };

        let step_base = f64::EPSILON.cbrt();
        let mut v = vec![DMatrix::zeros(m, m); r];
        for j in 0..m {
            let h = step_base * (1.0 + theta[j].abs());
            let mut plus = theta.clone();
            plus[j] += h;
            let mut minus = theta.clone();
            minus[j] -= h;
            // use the realized step to avoid representation error in θ ± h
            let width = plus[j] - minus[j];
            let up = field(&plus)?;
            let um = field(&minus)?;
            for (col, vm) in v.iter_mut().enumerate() {
                let d = (up.column(col) - um.column(col)) / width;
                vm.set_column(j, &d);
            }
        }
        Ok(BasisDerivatives { v })
    }

    /// Basis and gradients at `θ` in one call.
    pub fn tangent_frame(&self, theta: &DVector<f64>) -> Result<(NullSpaceBasis, BasisDerivatives)> {
        let basis = self.null_space_basis(theta, None)?;
        let derivs = self.basis_derivatives(&basis)?;
        Ok((basis, derivs))
    }
}

/// Orthonormal basis of `N(F)` from the full SVD of the zero-padded `M×M` matrix `[Fᵀ 0]`.
fn raw_null_space(f: &DMatrix<f64>, dim_param: usize) -> Result<DMatrix<f64>> {
    let k = f.nrows();
    if k == 0 {
        return Ok(DMatrix::identity(dim_param, dim_param));
    }
    let mut padded = DMatrix::zeros(dim_param, dim_param);
    padded.view_mut((0, 0), (dim_param, k)).copy_from(&f.transpose());
    // singular values come out descending; the trailing M-K left singular vectors span N(F)
    let d = svd(&padded)?;
    Ok(d.u.columns(k, dim_param - k).into_owned())
}

/// Rotate `u_raw` within its column space to best match `u_ref`
/// (orthogonal Procrustes): returns `u_raw · Q` with `Q` orthogonal
/// minimizing `‖u_raw Q - u_ref‖_F`.
///
/// Fails when the two subspaces are more than `π/4` apart.
pub fn align_basis(u_ref: &DMatrix<f64>, u_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u_ref.shape() != u_raw.shape() {
        return Err(Error::dims(
            "align_basis",
            format!("{}x{}", u_ref.nrows(), u_ref.ncols()),
            format!("{}x{}", u_raw.nrows(), u_raw.ncols()),
        ));
    }
    let cross = u_raw.transpose() * u_ref;
    let d = svd(&cross)?;
    let smin = d.singular_values.min().clamp(-1.0, 1.0);
    let angle = smin.acos();
    if angle > FRAC_PI_4 {
        return Err(Error::AlignmentUnreliable { angle });
    }
    let q = d.u * d.v_t;
    Ok(u_raw * q)
}

/// Largest entries of `F U` and `UᵀU - I`, the two frame invariants.
pub fn frame_residuals(f: &DMatrix<f64>, u: &DMatrix<f64>) -> (f64, f64) {
    let r = u.ncols();
    let fu = if f.nrows() == 0 { 0.0 } else { max_abs(&(f * u)) };
    let orth = max_abs(&(u.transpose() * u - DMatrix::identity(r, r)));
    (fu, orth)
}

fn chart_radius(t: &DVector<f64>) -> Result<f64> {
    let r12 = t[0].hypot(t[1]);
    if r12 <= 1e-12 * (1.0 + t.norm()) {
        return Err(Error::SingularChart(
            "frame is undefined where θ₁ = θ₂ = 0".into(),
        ));
    }
    Ok(r12)
}

fn sphere3_basis(t: &DVector<f64>) -> Result<DMatrix<f64>> {
    let r12 = chart_radius(t)?;
    let r = t.norm();
    let s = 1.0 / (r12 * r);
    Ok(DMatrix::from_row_slice(
        3,
        2,
        &[
            t[1] / r12,
            t[0] * t[2] * s,
            -t[0] / r12,
            t[1] * t[2] * s,
            0.0,
            -(r12 * r12) * s,
        ],
    ))
}

fn sphere3_derivatives(t: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
    let r12 = chart_radius(t)?;
    let (a, b, c) = (t[0], t[1], t[2]);
    let r2 = t.norm_squared();
    let r = r2.sqrt();

    // u_1 = g / r12
    let g = DVector::from_row_slice(&[b, -a, 0.0]);
    let grad_g = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let planar = DVector::from_row_slice(&[a, b, 0.0]);
    let v1 = grad_g / r12 - &g * planar.transpose() / (r12 * r12 * r12);

    // u_2 = h · s,  s = 1 / (r12 · r)
    let h = DVector::from_row_slice(&[a * c, b * c, -(a * a + b * b)]);
    let grad_h = DMatrix::from_row_slice(
        3,
        3,
        &[c, 0.0, a, 0.0, c, b, -2.0 * a, -2.0 * b, 0.0],
    );
    let s = 1.0 / (r12 * r);
    let grad_s = -(planar / (r12 * r12) + t / r2) * s;
    let v2 = grad_h * s + h * grad_s.transpose();
    Ok(vec![v1, v2])
}

fn amplitude_basis(t: &DVector<f64>) -> Result<DMatrix<f64>> {
    let r = chart_radius(t)?;
    Ok(DMatrix::from_row_slice(3, 2, &[t[1] / r, 0.0, -t[0] / r, 0.0, 0.0, 1.0]))
}

fn amplitude_derivatives(t: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
    let r = chart_radius(t)?;
    let r3 = r * r * r;
    let (a, b) = (t[0], t[1]);
    let v1 = DMatrix::from_row_slice(3, 3, &[-a * b, a * a, 0.0, -b * b, a * b, 0.0, 0.0, 0.0, 0.0]) / r3;
    Ok(vec![v1, DMatrix::zeros(3, 3)])
}
