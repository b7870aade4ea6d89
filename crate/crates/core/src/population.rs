//! Population-level quantities of a (possibly misspecified) model under a
//! known truth: the pseudo-true parameter (KL projection of the truth onto
//! the model), the curvature and score-outer-product matrices at that point,
//! and the sandwich covariance they imply.
//!
//! Everything is estimated by sample-average approximation on one fixed,
//! seeded Monte Carlo pool, so the estimates share common random numbers and
//! are reproducible bit for bit.

use crate::error::Error;
use crate::exec;
use crate::model::{Dataset, ParametricModel, Row};
use crate::numeric::fd::hessian_from_grad;
use crate::numeric::optim::{bfgs, OptimResult};
use crate::numeric::rng::{derive_seed, prng, Prng};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution as _, StandardNormal};
use std::sync::Arc;

/// The data-generating truth: a row sampler and, when available, its log
/// density (used for KL values; optional because some truths are easier to
/// sample than to evaluate).
#[derive(Clone)]
pub struct TrueGenerator {
    sampler: Arc<dyn Fn(&mut Prng) -> Row + Send + Sync>,
    logpdf0: Option<Arc<dyn Fn(&Row) -> f64 + Send + Sync>>,
}

impl TrueGenerator {
    pub fn new(sampler: impl Fn(&mut Prng) -> Row + Send + Sync + 'static) -> Self {
        TrueGenerator {
            sampler: Arc::new(sampler),
            logpdf0: None,
        }
    }

    pub fn with_logpdf0(mut self, f: impl Fn(&Row) -> f64 + Send + Sync + 'static) -> Self {
        self.logpdf0 = Some(Arc::new(f));
        self
    }

    pub fn sample_row(&self, rng: &mut Prng) -> Row {
        (self.sampler)(rng)
    }

    pub fn logpdf0(&self, row: &Row) -> Option<f64> {
        self.logpdf0.as_ref().map(|f| f(row))
    }

    pub fn has_logpdf0(&self) -> bool {
        self.logpdf0.is_some()
    }

    /// Draws a fixed pool of `m` rows. Chunked per-seed draws keep the pool
    /// identical with and without the `parallel` feature.
    pub fn pool(&self, m: usize, seed: u64) -> Dataset {
        const CHUNK: usize = 4096;
        let chunks = m.div_ceil(CHUNK);
        let parts = exec::map_indexed(chunks, |c| {
            let mut rng = prng(derive_seed(seed, &[0x9001, c as u64]));
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(m);
            (lo..hi).map(|_| self.sample_row(&mut rng)).collect::<Vec<Row>>()
        });
        Dataset::new(parts.into_concat())
    }
}

trait Concat<T> {
    fn into_concat(self) -> Vec<T>;
}
impl<T> Concat<T> for Vec<Vec<T>> {
    fn into_concat(self) -> Vec<T> {
        let total = self.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(total);
        for part in self {
            out.extend(part);
        }
        out
    }
}

/// Settings for the pseudo-true parameter search.
#[derive(Clone)]
pub struct ThetaStarConfig {
    /// Pool size for the sample-average approximation.
    pub mc_draws: usize,
    /// Seed for the pool and the restart perturbations.
    pub seed: u64,
    /// Gradient-norm tolerance, scaled internally by sqrt(dim).
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Number of optimisation starts (first at `init`, rest perturbed).
    pub restarts: usize,
    /// Standard deviation of the restart perturbations.
    pub start_spread: f64,
    /// Starting point; zero vector when absent.
    pub init: Option<Vec<f64>>,
    /// Maps parameters to a canonical representative before comparing
    /// restarts (label-switching models sort their components here).
    pub canonicalize: Option<Arc<dyn Fn(&mut [f64]) + Send + Sync>>,
}

impl Default for ThetaStarConfig {
    fn default() -> Self {
        ThetaStarConfig {
            mc_draws: 200_000,
            seed: 1,
            grad_tol: 1e-6,
            max_iters: 400,
            restarts: 3,
            start_spread: 1.0,
            init: None,
            canonicalize: None,
        }
    }
}

/// Result of the pseudo-true parameter search.
#[derive(Debug, Clone)]
pub struct ThetaStar {
    pub theta: Vec<f64>,
    /// Mean-scale SAA objective at the optimum.
    pub objective: f64,
    pub grad_norm: f64,
    /// Largest pairwise distance between canonicalised restart optima;
    /// above 1e-4 the SAA landscape is effectively multimodal.
    pub restart_spread: f64,
    pub multimodal: bool,
}

/// Maximises the pool-average log likelihood with restarts.
///
/// The objective is `mean_m log p(x_m | theta)`; restarts that disagree by
/// more than 1e-4 (after canonicalisation) set the `multimodal` flag.
pub fn estimate_theta_star(
    model: &ParametricModel,
    pool: &Dataset,
    cfg: &ThetaStarConfig,
) -> Result<ThetaStar> {
    let d = model.dim;
    let m = pool.n() as f64;
    if pool.is_empty() {
        return Err(Error::TooFewDraws { need: 1, got: 0 });
    }
    let fg = |theta: &[f64]| -> (f64, Vec<f64>) {
        let f = model.loglik_sum(theta, pool).expect("dim checked") / m;
        let mut g = model.loglik_grad_sum(theta, pool).expect("dim checked");
        for gi in &mut g {
            *gi = -*gi / m;
        }
        (-f, g)
    };
    let tol = cfg.grad_tol * (d as f64).sqrt();
    let base = cfg.init.clone().unwrap_or_else(|| vec![0.0; d]);
    if base.len() != d {
        return Err(Error::Shape {
            expected: d,
            got: base.len(),
            context: "theta_star init",
        });
    }

    let mut optima: Vec<OptimResult> = Vec::new();
    let mut last_err = None;
    for k in 0..cfg.restarts.max(1) {
        let mut start = base.clone();
        if k > 0 {
            let mut rng = prng(derive_seed(cfg.seed, &[0x5a17, k as u64]));
            for s in &mut start {
                let z: f64 = StandardNormal.sample(&mut rng);
                *s += cfg.start_spread * z;
            }
        }
        match bfgs(fg, &start, tol, cfg.max_iters) {
            Ok(r) => optima.push(r),
            Err(e @ Error::Diverged { .. }) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    if optima.is_empty() {
        return Err(last_err.expect("no optima and no error"));
    }

    let canon = |mut v: Vec<f64>| -> Vec<f64> {
        if let Some(c) = &cfg.canonicalize {
            c(&mut v);
        }
        v
    };
    let points: Vec<Vec<f64>> = optima.iter().map(|r| canon(r.x.clone())).collect();
    let mut spread: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dist = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            spread = spread.max(dist);
        }
    }
    let best = optima
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.f.partial_cmp(&b.1.f).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    Ok(ThetaStar {
        theta: points[best].clone(),
        objective: -optima[best].f,
        grad_norm: optima[best].grad_norm,
        restart_spread: spread,
        multimodal: spread > 1e-4,
    })
}

/// Curvature matrix `V = -E[d^2/dtheta^2 log p(x | theta*)]`, estimated by
/// central finite differences of the pool-averaged analytic gradient with
/// step `1e-4 (1 + |theta_j|)` and symmetrised.
///
/// Fails with a singular-curvature error when the smallest eigenvalue is at
/// or below 1e-8.
pub fn lan_curvature(
    model: &ParametricModel,
    theta_star: &[f64],
    pool: &Dataset,
) -> Result<DMatrix<f64>> {
    let d = model.dim;
    let m = pool.n() as f64;
    let grad = |theta: &[f64]| -> Vec<f64> {
        let mut g = model.loglik_grad_sum(theta, pool).expect("dim checked");
        for gi in &mut g {
            *gi /= m;
        }
        g
    };
    let h = hessian_from_grad(grad, theta_star, 1e-4);
    let v = DMatrix::from_fn(d, d, |i, j| -h[i][j]);
    let min_eig = min_eigenvalue(&v);
    if min_eig <= 1e-8 {
        return Err(Error::SingularCurvature { min_eig });
    }
    Ok(v)
}

/// Pool estimate of `S = E[s s^T]` with `s` the per-row score at
/// `theta_star`, together with the entrywise Monte Carlo standard error.
pub fn score_outer(
    model: &ParametricModel,
    theta_star: &[f64],
    pool: &Dataset,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = model.dim;
    if theta_star.len() != d {
        return Err(Error::Shape {
            expected: d,
            got: theta_star.len(),
            context: "score_outer",
        });
    }
    let m = pool.n();
    if m < 2 {
        return Err(Error::TooFewDraws { need: 2, got: m });
    }
    // Accumulate sum(outer) and sum(outer^2) chunkwise in fixed order.
    const CHUNK: usize = 1024;
    let chunks = m.div_ceil(CHUNK);
    let parts = exec::map_indexed(chunks, |c| {
        let mut s1 = vec![0.0; d * d];
        let mut s2 = vec![0.0; d * d];
        let mut g = vec![0.0; d];
        for i in c * CHUNK..((c + 1) * CHUNK).min(m) {
            g.iter_mut().for_each(|x| *x = 0.0);
            model.loglik_grad_row(theta_star, &pool.rows[i], &mut g);
            for a in 0..d {
                for b in 0..d {
                    let o = g[a] * g[b];
                    s1[a * d + b] += o;
                    s2[a * d + b] += o * o;
                }
            }
        }
        (s1, s2)
    });
    let mut sum1 = vec![0.0; d * d];
    let mut sum2 = vec![0.0; d * d];
    for (s1, s2) in parts {
        for k in 0..d * d {
            sum1[k] += s1[k];
            sum2[k] += s2[k];
        }
    }
    let mf = m as f64;
    let s = DMatrix::from_fn(d, d, |a, b| sum1[a * d + b] / mf);
    let se = DMatrix::from_fn(d, d, |a, b| {
        let mean = sum1[a * d + b] / mf;
        let var = (sum2[a * d + b] / mf - mean * mean).max(0.0);
        (var / mf).sqrt()
    });
    Ok((s, se))
}

/// Sandwich covariance `V^{-1} S V^{-1}`.
pub fn sandwich_matrix(v: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let vinv = invert_spd(v)?;
    Ok(&vinv * s * &vinv)
}

/// Finite-n LAN shift `Delta_n = V^{-1} n^{-1/2} sum_i s_i(theta*)` for one
/// dataset.
pub fn lan_shift(
    model: &ParametricModel,
    theta_star: &[f64],
    v: &DMatrix<f64>,
    data: &Dataset,
) -> Result<Vec<f64>> {
    let total = model.loglik_grad_sum(theta_star, data)?;
    let scaled = DVector::from_iterator(
        total.len(),
        total.iter().map(|g| g / (data.n() as f64).sqrt()),
    );
    let vinv = invert_spd(v)?;
    Ok((vinv * scaled).iter().copied().collect())
}

/// Population summary: everything downstream diagnostics need about the
/// model-truth pair.
#[derive(Debug, Clone)]
pub struct PopulationSummary {
    pub theta_star: Vec<f64>,
    pub v: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
    pub mc_draws: usize,
    pub seed: u64,
    /// KL(p0 || p_theta*) when the truth density is known, otherwise the
    /// cross-entropy `-E[log p(x|theta*)]` (KL up to the truth's entropy).
    pub kl_at_star: f64,
    /// Monte Carlo standard error of theta_star, sqrt(diag(sandwich)/m).
    pub theta_star_se: Vec<f64>,
    pub multimodal: bool,
}

impl PopulationSummary {
    /// Runs the full pipeline on one shared pool: pseudo-true search,
    /// curvature, score outer product, sandwich, and the KL value.
    pub fn compute(
        gen: &TrueGenerator,
        model: &ParametricModel,
        cfg: &ThetaStarConfig,
    ) -> Result<Self> {
        let pool = gen.pool(cfg.mc_draws, cfg.seed);
        let star = estimate_theta_star(model, &pool, cfg)?;
        let v = lan_curvature(model, &star.theta, &pool)?;
        let (s, _se) = score_outer(model, &star.theta, &pool)?;
        let sandwich = sandwich_matrix(&v, &s)?;
        let mf = pool.n() as f64;
        let theta_star_se = (0..model.dim)
            .map(|i| (sandwich[(i, i)] / mf).sqrt())
            .collect();
        let cross_entropy =
            -model.loglik_sum(&star.theta, &pool)? / mf;
        let kl_at_star = if gen.has_logpdf0() {
            let h0 = exec::sum_indexed(pool.n(), |i| {
                gen.logpdf0(&pool.rows[i]).expect("has_logpdf0")
            }) / mf;
            h0 + cross_entropy
        } else {
            cross_entropy
        };
        Ok(PopulationSummary {
            theta_star: star.theta,
            v,
            s,
            sandwich,
            mc_draws: cfg.mc_draws,
            seed: cfg.seed,
            kl_at_star,
            theta_star_se,
            multimodal: star.multimodal,
        })
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    sym.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive-definite matrix (Cholesky, with an LU
/// fallback for nearly singular inputs).
pub fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.inverse());
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::SingularCurvature {
            min_eig: min_eigenvalue(m),
        })
}
