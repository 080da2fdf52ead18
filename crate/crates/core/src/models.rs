//! Parametric observation families: sampling, log-density, score and
//! Fisher information.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite_matrix, svd, symmetrize};

/// A parametric family `p(x; θ)` over real observation vectors.
pub trait ParametricModel: Send + Sync {
    fn dim_param(&self) -> usize;

    fn dim_obs(&self) -> usize;

    /// Draws one observation at `θ`.
    fn sample(&self, theta: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>>;

    fn log_pdf(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<f64>;

    /// Gradient of the log-density with respect to `θ`.
    fn score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>>;

    /// Fisher information `E[υ υᵀ]`.
    fn fim(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>>;

    fn check_param(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim_param() {
            return Err(Error::dims("model parameter", self.dim_param(), theta.len()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(())
    }

    fn check_obs(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim_obs() {
            return Err(Error::dims("observation", self.dim_obs(), x.len()));
        }
        Ok(())
    }
}

/// Sample mean of `υ υᵀ` over `trials` draws at `θ`.
pub fn fim_monte_carlo(
    model: &dyn ParametricModel,
    theta: &DVector<f64>,
    trials: usize,
    rng: &mut dyn RngCore,
) -> Result<DMatrix<f64>> {
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let m = model.dim_param();
    let mut acc = DMatrix::zeros(m, m);
    for _ in 0..trials {
        let x = model.sample(theta, rng)?;
        let s = model.score(&x, theta)?;
        acc.ger(1.0, &s, &s, 1.0);
    }
    acc /= trials as f64;
    Ok(symmetrize(&acc))
}

fn gaussian(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

/// `x = H θ + n` with white Gaussian noise of variance `σ²`, optionally
/// observed as `L` independent stacked copies.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    h: DMatrix<f64>,
    sigma2: f64,
    copies: usize,
}

impl LinearGaussianModel {
    /// `σ² = 0` is accepted for noiseless sampling; the Fisher information
    /// then does not exist and [`ParametricModel::fim`] fails.
    pub fn new(h: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        Self::with_copies(h, sigma2, 1)
    }

    pub fn with_copies(h: DMatrix<f64>, sigma2: f64, copies: usize) -> Result<Self> {
        let (n, m) = h.shape();
        if m == 0 || n < m {
            return Err(Error::InvalidInput(format!(
                "design matrix must have at least as many rows as columns, got {n}x{m}"
            )));
        }
        ensure_finite_matrix("design matrix", &h)?;
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidInput(format!("noise variance must be >= 0, got {sigma2}")));
        }
        if copies == 0 {
            return Err(Error::InvalidInput("need at least one copy".into()));
        }
        let sv = svd(&h)?.singular_values;
        if sv.min() <= 1e-12 * sv.max() {
            return Err(Error::InvalidInput("design matrix is not full column rank".into()));
        }
        Ok(Self { h, sigma2, copies })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    /// `Σ_l Hᵀ x_l` over the stacked copies.
    pub fn matched_filter(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_obs(x)?;
        let n = self.h.nrows();
        let mut g = DVector::zeros(self.h.ncols());
        for l in 0..self.copies {
            g += self.h.tr_mul(&x.rows(l * n, n).into_owned());
        }
        Ok(g)
    }

    fn require_noise(&self) -> Result<()> {
        if self.sigma2 <= 0.0 {
            return Err(Error::InvalidInput("noise variance must be > 0".into()));
        }
        Ok(())
    }
}

impl ParametricModel for LinearGaussianModel {
    fn dim_param(&self) -> usize {
        self.h.ncols()
    }

    fn dim_obs(&self) -> usize {
        self.h.nrows() * self.copies
    }

    fn sample(&self, theta: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        self.check_param(theta)?;
        let mean = &self.h * theta;
        let sd = self.sigma2.sqrt();
        let n = mean.len();
        Ok(DVector::from_fn(n * self.copies, |i, _| {
            let noise = if sd > 0.0 { sd * gaussian(rng) } else { 0.0 };
            mean[i % n] + noise
        }))
    }

    fn log_pdf(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        self.check_param(theta)?;
        self.check_obs(x)?;
        self.require_noise()?;
        let mean = &self.h * theta;
        let n = mean.len();
        let ss: f64 = x.iter().enumerate().map(|(i, v)| (v - mean[i % n]).powi(2)).sum();
        let total = x.len() as f64;
        Ok(-ss / (2.0 * self.sigma2) - 0.5 * total * (2.0 * std::f64::consts::PI * self.sigma2).ln())
    }

    fn score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_param(theta)?;
        self.require_noise()?;
        let g = self.matched_filter(x)?;
        let gram = self.h.tr_mul(&self.h) * self.copies as f64;
        Ok((g - gram * theta) / self.sigma2)
    }

    fn fim(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_param(theta)?;
        self.require_noise()?;
        Ok(self.h.tr_mul(&self.h) * (self.copies as f64 / self.sigma2))
    }
}

/// `x_l = A e^{j l ω} + n_l`, `l = l1, …, l1 + L - 1`, with circular complex
/// Gaussian noise of variance `σ²` and `θ = [Re A, Im A, ω]`.
///
/// Observations are stored as interleaved `[Re x_0, Im x_0, Re x_1, …]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexSinusoidModel {
    l1: i64,
    len: usize,
    sigma2: f64,
}

impl ComplexSinusoidModel {
    pub fn new(l1: i64, len: usize, sigma2: f64) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 samples, got {len}")));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidInput(format!("noise variance must be >= 0, got {sigma2}")));
        }
        Ok(Self { l1, len, sigma2 })
    }

    pub fn l1(&self) -> i64 {
        self.l1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Time indices `l1, …, l1 + L - 1`.
    pub fn indices(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.len as i64).map(move |n| self.l1 + n)
    }

    /// Noise-free signal `A e^{j l ω}`.
    pub fn signal(&self, theta: &DVector<f64>) -> Vec<Complex64> {
        let a = Complex64::new(theta[0], theta[1]);
        self.indices()
            .map(|l| a * Complex64::from_polar(1.0, l as f64 * theta[2]))
            .collect()
    }

    /// Complex view of an interleaved observation.
    pub fn to_complex(&self, x: &DVector<f64>) -> Result<Vec<Complex64>> {
        self.check_obs(x)?;
        Ok(x.as_slice()
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect())
    }

    pub fn from_complex(samples: &[Complex64]) -> DVector<f64> {
        DVector::from_iterator(samples.len() * 2, samples.iter().flat_map(|z| [z.re, z.im]))
    }

    fn require_noise(&self) -> Result<()> {
        if self.sigma2 <= 0.0 {
            return Err(Error::InvalidInput("noise variance must be > 0".into()));
        }
        Ok(())
    }
}

impl ParametricModel for ComplexSinusoidModel {
    fn dim_param(&self) -> usize {
        3
    }

    fn dim_obs(&self) -> usize {
        2 * self.len
    }

    fn sample(&self, theta: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        self.check_param(theta)?;
        let sd = (self.sigma2 / 2.0).sqrt();
        let mut s = self.signal(theta);
        if sd > 0.0 {
            for z in s.iter_mut() {
                let re = gaussian(rng);
                let im = gaussian(rng);
                *z += Complex64::new(sd * re, sd * im);
            }
        }
        Ok(Self::from_complex(&s))
    }

    fn log_pdf(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        self.check_param(theta)?;
        self.require_noise()?;
        let xc = self.to_complex(x)?;
        let ss: f64 = xc
            .iter()
            .zip(self.signal(theta))
            .map(|(x, s)| (x - s).norm_sqr())
            .sum();
        Ok(-ss / self.sigma2 - self.len as f64 * (std::f64::consts::PI * self.sigma2).ln())
    }

    fn score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_param(theta)?;
        self.require_noise()?;
        let xc = self.to_complex(x)?;
        let a = Complex64::new(theta[0], theta[1]);
        let mut out = [0.0; 3];
        for (l, xl) in self.indices().zip(xc) {
            let rot = Complex64::from_polar(1.0, l as f64 * theta[2]);
            let resid = xl - a * rot;
            let back = resid * rot.conj();
            out[0] += back.re;
            out[1] += back.im;
            out[2] += (resid.conj() * Complex64::i() * (l as f64) * a * rot).re;
        }
        let k = 2.0 / self.sigma2;
        Ok(DVector::from_iterator(3, out.iter().map(|v| v * k)))
    }

    fn fim(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_param(theta)?;
        self.require_noise()?;
        let len = self.len as f64;
        let sum_l: f64 = self.indices().map(|l| l as f64).sum();
        let sum_l2: f64 = self.indices().map(|l| (l as f64).powi(2)).sum();
        let c2 = theta[0] * theta[0] + theta[1] * theta[1];
        let k = 2.0 * len / self.sigma2;
        let mean_l = sum_l / len;
        Ok(DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0,
                0.0,
                -theta[1] * mean_l,
                0.0,
                1.0,
                theta[0] * mean_l,
                -theta[1] * mean_l,
                theta[0] * mean_l,
                c2 * sum_l2 / len,
            ],
        ) * k)
    }
}
