//! Reproducible Monte-Carlo trials.
//!
//! Trial `i` draws from a ChaCha8 stream selected by `(seed, i)`, trials
//! are grouped into fixed-size blocks, and block summaries are merged in
//! block order. Results are therefore bit-identical for a given seed and
//! trial count whatever the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::WeightMatrix;
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::models::ParametricModel;

const BLOCK: usize = 512;

/// Largest tolerated share of failed trials.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialConfig {
    pub seed: u64,
    pub trials: usize,
    /// Worker threads; `None` uses the global pool. Does not affect results.
    pub workers: Option<usize>,
}

impl TrialConfig {
    pub fn new(seed: u64, trials: usize) -> Self {
        Self {
            seed,
            trials,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }
}

/// Independent generator for trial `index` of an experiment seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Summary of a batch of estimation trials at a fixed true parameter.
///
/// Alongside the error `e = θ̂ - θ` it tracks the statistic
/// `s = [e; vec(e υᵀ)]`, with `υ` the score at the true parameter, whose
/// mean and covariance give the bias, the bias gradient and standard
/// errors for any linear combination of them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    pub theta: DVector<f64>,
    pub trials: usize,
    pub failures: usize,
    /// `Tr(W · mse_matrix)`
    pub wmse: f64,
    pub wmse_stderr: f64,
    /// `E[e eᵀ]`
    pub mse_matrix: DMatrix<f64>,
    pub stat_mean: DVector<f64>,
    /// Sample covariance of `s`.
    pub stat_cov: DMatrix<f64>,
}

impl TrialBatch {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Number of trials that produced an estimate.
    pub fn successes(&self) -> usize {
        self.trials - self.failures
    }

    /// `E[θ̂ - θ]`
    pub fn bias(&self) -> DVector<f64> {
        self.stat_mean.rows(0, self.dim()).into_owned()
    }

    pub fn bias_stderr(&self) -> DVector<f64> {
        let m = self.dim();
        DVector::from_fn(m, |i, _| self.entry_stderr(i))
    }

    /// `E[(θ̂ - θ) υᵀ] - I`
    pub fn bias_gradient(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |i, j| self.stat_mean[m + i + m * j]) - DMatrix::identity(m, m)
    }

    pub fn bias_gradient_stderr(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |i, j| self.entry_stderr(m + i + m * j))
    }

    fn entry_stderr(&self, k: usize) -> f64 {
        (self.stat_cov[(k, k)].max(0.0) / self.successes() as f64).sqrt()
    }

    /// Standard error of `aᵀ s̄` for a coefficient vector over the statistic.
    pub fn linear_stderr(&self, a: &DVector<f64>) -> f64 {
        (a.dot(&(&self.stat_cov * a)).max(0.0) / self.successes() as f64).sqrt()
    }

    /// Coefficients over the statistic for the functional `pᵀ E[e] + Σ_ij Q_ij E[e υᵀ]_ij`.
    pub fn functional(&self, p: &DVector<f64>, q: &DMatrix<f64>) -> DVector<f64> {
        let m = self.dim();
        let mut a = DVector::zeros(m + m * m);
        a.rows_mut(0, m).copy_from(p);
        for j in 0..m {
            for i in 0..m {
                a[m + i + m * j] = q[(i, j)];
            }
        }
        a
    }
}

/// Block summary; means and centered co-moments merged with Chan's update.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    failures: usize,
    stat_mean: DVector<f64>,
    stat_m2: DMatrix<f64>,
    outer_mean: DMatrix<f64>,
    q_mean: f64,
    q_m2: f64,
}

impl Moments {
    fn empty(m: usize) -> Self {
        let d = m + m * m;
        Self {
            n: 0,
            failures: 0,
            stat_mean: DVector::zeros(d),
            stat_m2: DMatrix::zeros(d, d),
            outer_mean: DMatrix::zeros(m, m),
            q_mean: 0.0,
            q_m2: 0.0,
        }
    }

    fn from_block(m: usize, stats: &[DVector<f64>], outers: &[DMatrix<f64>], qs: &[f64], failures: usize) -> Self {
        let mut out = Self::empty(m);
        out.failures = failures;
        let n = stats.len();
        if n == 0 {
            return out;
        }
        let nf = n as f64;
        out.n = n;
        for s in stats {
            out.stat_mean += s;
        }
        out.stat_mean /= nf;
        for s in stats {
            let d = s - &out.stat_mean;
            out.stat_m2.ger(1.0, &d, &d, 1.0);
        }
        for o in outers {
            out.outer_mean += o;
        }
        out.outer_mean /= nf;
        out.q_mean = qs.iter().sum::<f64>() / nf;
        out.q_m2 = qs.iter().map(|q| (q - out.q_mean).powi(2)).sum();
        out
    }

    fn merge(mut self, other: &Moments) -> Self {
        self.failures += other.failures;
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            let failures = self.failures;
            self = other.clone();
            self.failures = failures;
            return self;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.stat_mean - &self.stat_mean;
        self.stat_mean += &delta * (nb / n);
        self.stat_m2 += &other.stat_m2;
        self.stat_m2.ger(na * nb / n, &delta, &delta, 1.0);
        self.outer_mean = (&self.outer_mean * na + &other.outer_mean * nb) / n;
        let dq = other.q_mean - self.q_mean;
        self.q_mean += dq * nb / n;
        self.q_m2 += other.q_m2 + dq * dq * na * nb / n;
        self.n += other.n;
        self
    }
}

fn run_block(
    model: &dyn ParametricModel,
    theta: &DVector<f64>,
    estimator: &dyn Estimator,
    w: &WeightMatrix,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Moments> {
    let m = theta.len();
    let len = range.len();
    let mut stats = Vec::with_capacity(len);
    let mut outers = Vec::with_capacity(len);
    let mut qs = Vec::with_capacity(len);
    let mut failures = 0;
    for i in range {
        let mut rng = trial_rng(seed, i as u64);
        let x = model.sample(theta, &mut rng)?;
        let est = match estimator.estimate(&x) {
            Ok(e) if e.len() == m && e.iter().all(|v| v.is_finite()) => e,
            Ok(e) if e.len() != m => return Err(Error::dims("estimate", m, e.len())),
            _ => {
                failures += 1;
                continue;
            }
        };
        let score = model.score(&x, theta)?;
        let e = est - theta;
        let mut s = DVector::zeros(m + m * m);
        s.rows_mut(0, m).copy_from(&e);
        for j in 0..m {
            for i in 0..m {
                s[m + i + m * j] = e[i] * score[j];
            }
        }
        qs.push(e.dot(&(w.matrix() * &e)));
        outers.push(&e * e.transpose());
        stats.push(s);
    }
    Ok(Moments::from_block(m, &stats, &outers, &qs, failures))
}

/// Runs `cfg.trials` independent estimation trials at `theta`.
///
/// Trials whose estimator fails (or returns non-finite values) are excluded
/// and counted; more than 1% failures is an error.
pub fn run_trials(
    model: &dyn ParametricModel,
    theta: &DVector<f64>,
    estimator: &dyn Estimator,
    w: &WeightMatrix,
    cfg: &TrialConfig,
) -> Result<TrialBatch> {
    let m = model.dim_param();
    if theta.len() != m {
        return Err(Error::dims("true parameter", m, theta.len()));
    }
    if w.dim() != m {
        return Err(Error::dims("weight matrix", m, w.dim()));
    }
    if cfg.trials < 2 {
        return Err(Error::InvalidInput("need at least 2 trials".into()));
    }
    let blocks: Vec<std::ops::Range<usize>> = (0..cfg.trials)
        .step_by(BLOCK)
        .map(|start| start..(start + BLOCK).min(cfg.trials))
        .collect();
    let compute = || -> Result<Vec<Moments>> {
        blocks
            .par_iter()
            .map(|r| run_block(model, theta, estimator, w, cfg.seed, r.clone()))
            .collect()
    };
    let parts = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?
            .install(compute)?,
        None => compute()?,
    };
    let total = parts.iter().fold(Moments::empty(m), |acc, p| acc.merge(p));

    if total.failures as f64 > MAX_FAILURE_RATE * cfg.trials as f64 || total.n < 2 {
        return Err(Error::TooManyFailures {
            failures: total.failures,
            trials: cfg.trials,
        });
    }
    if total.failures > 0 {
        log::warn!("{} of {} trials failed and were excluded", total.failures, cfg.trials);
    }
    let n = total.n as f64;
    let wmse = (w.matrix() * &total.outer_mean).trace();
    Ok(TrialBatch {
        theta: theta.clone(),
        trials: cfg.trials,
        failures: total.failures,
        wmse,
        wmse_stderr: (total.q_m2 / (n - 1.0) / n).sqrt(),
        mse_matrix: total.outer_mean,
        stat_mean: total.stat_mean,
        stat_cov: total.stat_m2 / (n - 1.0),
    })
}
