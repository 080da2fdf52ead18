//! The constrained Cramér–Rao bound (CCRB) and the Lehmann-unbiased CCRB
//! (LU-CCRB), with their closed-form specializations for the sphere and
//! amplitude-constrained sinusoid examples.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    complement_projector, default_rel_tol, ensure_finite_matrix, ensure_square, kron, max_abs, pinv,
    sorted_symmetric_eigen, symmetrize, vec,
};

/// Relative residual above which the CCRB regularity condition is reported as violated.
const REGULARITY_TOL: f64 = 1e-8;

/// Positive semidefinite WMSE weight with its square root and pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl WeightMatrix {
    /// Symmetric eigendecomposition of `w`. Eigenvalues down to
    /// `-1e-10 λ_max` are clipped to zero; anything more negative is rejected.
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let m = w.nrows();
        ensure_square("weight matrix", &w, m)?;
        ensure_finite_matrix("weight matrix", &w)?;
        let asym = max_abs(&(&w - w.transpose()));
        if asym > 1e-12 * (1.0 + max_abs(&w)) {
            return Err(Error::InvalidInput(format!(
                "weight matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        if m == 0 {
            return Ok(Self {
                sqrt: w.clone(),
                pinv: w.clone(),
                w,
            });
        }
        let (values, vectors) = sorted_symmetric_eigen(&w);
        let lmax = values.max().max(0.0);
        let lmin = values.min();
        if lmin < -1e-10 * lmax || (lmax == 0.0 && lmin < 0.0) {
            return Err(Error::NotPsd { min_eigenvalue: lmin });
        }
        let cutoff = default_rel_tol(m, m) * lmax;
        let mut sqrt = DMatrix::zeros(m, m);
        let mut inv = DMatrix::zeros(m, m);
        for (i, &l) in values.iter().enumerate() {
            let l = l.max(0.0);
            let q = vectors.column(i);
            let outer = &q * q.transpose();
            if l > 0.0 {
                sqrt += &outer * l.sqrt();
            }
            if l > cutoff {
                inv += outer / l;
            }
        }
        Ok(Self {
            w: symmetrize(&w),
            sqrt: symmetrize(&sqrt),
            pinv: symmetrize(&inv),
        })
    }

    pub fn identity(m: usize) -> Self {
        let i = DMatrix::identity(m, m);
        Self {
            w: i.clone(),
            sqrt: i.clone(),
            pinv: i,
        }
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `W^{1/2}`
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// `W^†`
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }
}

/// CCRB matrix and its WMSE form.
#[derive(Debug, Clone, PartialEq)]
pub struct Ccrb {
    /// `U (UᵀJU)^† Uᵀ`
    pub matrix: DMatrix<f64>,
    /// `Tr((UᵀJU)^† UᵀWU)`
    pub wmse: f64,
    /// Whether `R(Uᵀ) ⊆ R(UᵀJU)` held.
    pub regular: bool,
}

/// LU-CCRB value and the quantities that define it.
#[derive(Debug, Clone, PartialEq)]
pub struct LuCcrb {
    pub value: f64,
    /// `S^(m) = W^† W^{1/2} P⊥_{W^{1/2}U} W^{1/2} V_m U`, one per tangent direction.
    pub s: Vec<DMatrix<f64>>,
    /// Block matrix with `(m, k)` block `S^(m)ᵀ W S^(k)`.
    pub c: DMatrix<f64>,
    /// `C + (UᵀWU) ⊗ (UᵀJU)`
    pub gamma: DMatrix<f64>,
    /// `vec(UᵀWU)`
    pub psi: DVector<f64>,
    /// `Γ^† ψ`, the stacked blocks `c_m` used by the bound-attaining estimator.
    pub coefficients: DVector<f64>,
}

impl LuCcrb {
    /// The `(M-K)×(M-K)` matrix whose `m`-th column is the block `c_m`.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let r = self.s.len();
        DMatrix::from_column_slice(r, r, self.coefficients.as_slice())
    }
}

/// Both bounds at one point together with the frame they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub ccrb_matrix: DMatrix<f64>,
    pub ccrb_wmse: f64,
    pub lu_ccrb: f64,
    pub regular: bool,
    pub u: DMatrix<f64>,
    pub v: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub coefficients: DVector<f64>,
}

impl BoundReport {
    pub fn new(j: &DMatrix<f64>, u: &DMatrix<f64>, v: &[DMatrix<f64>], w: &WeightMatrix) -> Result<Self> {
        let ccrb = ccrb(j, u, w)?;
        let lu = lu_ccrb(j, u, v, w)?;
        Ok(Self {
            ccrb_matrix: ccrb.matrix,
            ccrb_wmse: ccrb.wmse,
            lu_ccrb: lu.value,
            regular: ccrb.regular,
            u: u.clone(),
            v: v.to_vec(),
            s: lu.s,
            c: lu.c,
            gamma: lu.gamma,
            psi: lu.psi,
            coefficients: lu.coefficients,
        })
    }
}

fn check_frame(j: &DMatrix<f64>, u: &DMatrix<f64>, w: &WeightMatrix) -> Result<()> {
    let m = u.nrows();
    ensure_square("Fisher information", j, m)?;
    if w.dim() != m {
        return Err(Error::dims("weight matrix", m, w.dim()));
    }
    ensure_finite_matrix("Fisher information", j)?;
    ensure_finite_matrix("null-space basis", u)?;
    Ok(())
}

/// `U (UᵀJU)^† Uᵀ` and `Tr((UᵀJU)^† UᵀWU)`.
///
/// Logs a warning and clears [`Ccrb::regular`] when `R(Uᵀ) ⊄ R(UᵀJU)`.
pub fn ccrb(j: &DMatrix<f64>, u: &DMatrix<f64>, w: &WeightMatrix) -> Result<Ccrb> {
    check_frame(j, u, w)?;
    let b = symmetrize(&(u.transpose() * j * u));
    let b_pinv = pinv(&b, None);
    let proj = &b * &b_pinv;
    let resid = max_abs(&(u.transpose() - &proj * u.transpose()));
    let regular = resid <= REGULARITY_TOL;
    if !regular {
        warn!("CCRB regularity condition violated (range residual {resid:e})");
    }
    let matrix = u * &b_pinv * u.transpose();
    let wmse = (&b_pinv * (u.transpose() * w.matrix() * u)).trace();
    Ok(Ccrb { matrix, wmse, regular })
}

/// LU-CCRB `ψᵀ Γ^† ψ` for a basis `U` and its gradients `V_m`.
pub fn lu_ccrb(
    j: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &[DMatrix<f64>],
    w: &WeightMatrix,
) -> Result<LuCcrb> {
    check_frame(j, u, w)?;
    let (m, r) = u.shape();
    if v.len() != r {
        return Err(Error::dims("basis derivatives", r, v.len()));
    }
    for vm in v {
        ensure_square("basis derivative", vm, m)?;
        ensure_finite_matrix("basis derivative", vm)?;
    }

    let wm = w.matrix();
    let ws = w.sqrt();
    let wsu = ws * u;
    let p_perp = complement_projector(&wsu);
    let lead = w.pinv() * ws * &p_perp * ws;
    let s: Vec<DMatrix<f64>> = v.iter().map(|vm| &lead * vm * u).collect();

    let mut c = DMatrix::zeros(r * r, r * r);
    for mi in 0..r {
        let left = s[mi].transpose() * wm;
        for ki in 0..r {
            c.view_mut((mi * r, ki * r), (r, r)).copy_from(&(&left * &s[ki]));
        }
    }
    let c = symmetrize(&c);

    let utwu = symmetrize(&(u.transpose() * wm * u));
    let utju = symmetrize(&(u.transpose() * j * u));
    let gamma = symmetrize(&(&c + kron(&utwu, &utju)));
    let psi = vec(&utwu);
    let coefficients = pinv(&gamma, None) * &psi;
    let value = psi.dot(&coefficients);
    if !value.is_finite() {
        return Err(Error::InvalidInput("LU-CCRB evaluated to a non-finite value".into()));
    }
    Ok(LuCcrb {
        value: value.max(0.0),
        s,
        c,
        gamma,
        psi,
        coefficients,
    })
}

/// `σ² Tr((UᵀHᵀHU)^{-1})`, the CCRB trace for the linear model on a sphere with `W = I`.
pub fn ccrb_sphere_closed_form(h: &DMatrix<f64>, sigma2: f64, u: &DMatrix<f64>) -> Result<f64> {
    let g = u.transpose() * h.transpose() * h * u;
    let inv = g
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("UᵀHᵀHU is singular".into()))?;
    Ok(sigma2 * inv.trace())
}

/// `(1/ρ² + 1/Tr(B_CCRB))^{-1}` for the linear model on a sphere of radius `ρ` with `W = I`.
pub fn lu_ccrb_sphere_closed_form(h: &DMatrix<f64>, sigma2: f64, rho: f64, u: &DMatrix<f64>) -> Result<f64> {
    let t = ccrb_sphere_closed_form(h, sigma2, u)?;
    Ok(1.0 / (1.0 / (rho * rho) + 1.0 / t))
}

/// `(M-1) σ² / β` when `HᵀH = βI`.
pub fn ccrb_orthogonal_closed_form(dim_param: usize, sigma2: f64, beta: f64) -> f64 {
    (dim_param as f64 - 1.0) * sigma2 / beta
}

/// `(1/ρ² + β/((M-1)σ²))^{-1}` when `HᵀH = βI`.
pub fn lu_ccrb_orthogonal_closed_form(dim_param: usize, sigma2: f64, beta: f64, rho: f64) -> f64 {
    1.0 / (1.0 / (rho * rho) + 1.0 / ccrb_orthogonal_closed_form(dim_param, sigma2, beta))
}

/// CCRB on the amplitude WMSE for the constrained sinusoid; independent of `A` and `ω`.
pub fn ccrb_sinusoid_closed_form(l1: i64, len: usize, sigma2: f64) -> Result<f64> {
    if len < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {len}")));
    }
    let l1 = l1 as f64;
    let n = len as f64;
    let num = 6.0 * l1 * l1 + 6.0 * (n - 1.0) * l1 + (2.0 * n - 1.0) * (n - 1.0);
    Ok(sigma2 * num / (n * (n - 1.0) * (n + 1.0)))
}

/// `(1/c² + 1/B_CCRB)^{-1}` for the constrained sinusoid.
pub fn lu_ccrb_sinusoid_closed_form(l1: i64, len: usize, sigma2: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("amplitude must be positive, got {c}")));
    }
    let b = ccrb_sinusoid_closed_form(l1, len, sigma2)?;
    Ok(1.0 / (1.0 / (c * c) + 1.0 / b))
}
