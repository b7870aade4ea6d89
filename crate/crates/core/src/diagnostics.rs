//! Distances and reference objects used to judge a fitted posterior: the
//! limiting Gaussian a posterior should approach, total-variation distance
//! estimated from densities or draws, Gaussian Kullback-Leibler divergence,
//! the entropy cost of dropping correlations, and Monte Carlo predictive
//! densities.

use crate::error::Error;
use crate::exec;
use crate::model::Row;
use crate::numeric::rng::Prng;
use crate::numeric::special::log_mean_exp;
use crate::numeric::stats::{mean, quantile, sd};
use crate::posterior::GridDensity;
use crate::Result;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution as _, StandardNormal};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A multivariate Gaussian reference distribution, typically the asymptotic
/// shape a posterior should contract to.
#[derive(Clone)]
pub struct LimitingNormal {
    center: Vec<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl LimitingNormal {
    /// Gaussian with an explicit covariance (no sample-size scaling).
    pub fn fixed(center: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = center.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Shape {
                expected: d,
                got: cov.nrows(),
                context: "limiting normal covariance",
            });
        }
        let chol = cov.clone().cholesky().ok_or(Error::SingularCurvature {
            min_eig: crate::population::min_eigenvalue(&cov),
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(LimitingNormal {
            center,
            cov,
            chol,
            log_det,
        })
    }

    /// The exact-posterior limit: N(center, (1/n) V^{-1}).
    pub fn exact(center: Vec<f64>, v: &DMatrix<f64>, n: usize) -> Result<Self> {
        let vinv = crate::population::invert_spd(v)?;
        Self::fixed(center, vinv / n as f64)
    }

    /// The mean-field limit: N(center, (1/n) diag(V)^{-1}), which keeps
    /// only the diagonal of the curvature.
    pub fn meanfield(center: Vec<f64>, v: &DMatrix<f64>, n: usize) -> Result<Self> {
        let d = center.len();
        let cov = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0 / (v[(i, i)] * n as f64)
            } else {
                0.0
            }
        });
        Self::fixed(center, cov)
    }

    /// Moves the centre by `delta / sqrt(n)`, the finite-sample location of
    /// the limit around the pseudo-true parameter.
    pub fn shifted(mut self, delta: &[f64], n: usize) -> Self {
        let root_n = (n as f64).sqrt();
        for (c, d) in self.center.iter_mut().zip(delta) {
            *c += d / root_n;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.center
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn marginal_sd(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.cov[(i, i)].sqrt()).collect()
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        assert_eq!(x.len(), d);
        let diff = DVector::from_iterator(d, x.iter().zip(&self.center).map(|(a, b)| a - b));
        let sol = self.chol.solve(&diff);
        let quad = diff.dot(&sol);
        -0.5 * (d as f64 * LN_2PI + self.log_det + quad)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.logpdf(x).exp()
    }

    pub fn sample(&self, rng: &mut Prng) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| -> f64 { StandardNormal.sample(rng) }));
        let x = self.chol.l() * z;
        (0..d).map(|i| self.center[i] + x[i]).collect()
    }
}

/// Midpoint-grid bounds wide enough for every listed (mean, sd) pair:
/// the union of mean +- mult sd per coordinate.
pub fn union_bounds(pairs: &[(&[f64], &[f64])], mult: f64) -> Vec<(f64, f64)> {
    let d = pairs[0].0.len();
    (0..d)
        .map(|j| {
            let lo = pairs
                .iter()
                .map(|(m, s)| m[j] - mult * s[j])
                .fold(f64::INFINITY, f64::min);
            let hi = pairs
                .iter()
                .map(|(m, s)| m[j] + mult * s[j])
                .fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect()
}

/// Total variation between two densities by midpoint quadrature on a
/// product grid (up to three axes).
///
/// Both densities must put essentially all their mass inside the bounds;
/// more than 1% escaping fails with widened suggested bounds.
pub fn tv_grid(
    p: impl Fn(&[f64]) -> f64 + Sync,
    q: impl Fn(&[f64]) -> f64 + Sync,
    bounds: &[(f64, f64)],
    points_per_axis: usize,
) -> Result<f64> {
    let d = bounds.len();
    if d == 0 || d > 3 {
        return Err(Error::Unsupported(format!(
            "grid total variation covers 1 to 3 dimensions, got {d}"
        )));
    }
    let steps: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| (hi - lo) / points_per_axis as f64)
        .collect();
    let vol: f64 = steps.iter().product();
    let total = points_per_axis.pow(d as u32);
    let parts = exec::map_indexed(total, |flat| {
        let mut x = vec![0.0; d];
        let mut rest = flat;
        for ax in (0..d).rev() {
            let i = rest % points_per_axis;
            rest /= points_per_axis;
            x[ax] = bounds[ax].0 + (i as f64 + 0.5) * steps[ax];
        }
        let pv = p(&x);
        let qv = q(&x);
        (pv, qv, (pv - qv).abs())
    });
    let mut mass_p = 0.0;
    let mut mass_q = 0.0;
    let mut diff = 0.0;
    for (pv, qv, dv) in parts {
        mass_p += pv * vol;
        mass_q += qv * vol;
        diff += dv * vol;
    }
    let escape = (1.0 - mass_p).abs().max((1.0 - mass_q).abs());
    if escape > 0.01 {
        let suggested = bounds
            .iter()
            .map(|&(lo, hi)| (lo - (hi - lo), hi + (hi - lo)))
            .collect();
        return Err(Error::BoundsTooTight {
            mass: escape,
            suggested,
        });
    }
    Ok(0.5 * diff)
}

/// Total variation between two draw sets via pooled equal-mass binning:
/// 50 quantile bins in one dimension, a product of per-axis quantile bins
/// in two, and the average of per-coordinate values above that (each
/// per-coordinate value is a lower bound on the joint distance).
pub fn tv_samples(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 100 || b.len() < 100 {
        return Err(Error::TooFewDraws {
            need: 100,
            got: a.len().min(b.len()),
        });
    }
    let d = a[0].len();
    if d == 0 || b[0].len() != d {
        return Err(Error::Shape {
            expected: d,
            got: b[0].len(),
            context: "tv_samples",
        });
    }
    match d {
        1 => {
            let xa: Vec<f64> = a.iter().map(|r| r[0]).collect();
            let xb: Vec<f64> = b.iter().map(|r| r[0]).collect();
            Ok(tv_binned_1d(&xa, &xb, 50))
        }
        2 => {
            let edges: Vec<Vec<f64>> = (0..2)
                .map(|j| {
                    let mut pooled: Vec<f64> = a
                        .iter()
                        .map(|r| r[j])
                        .chain(b.iter().map(|r| r[j]))
                        .collect();
                    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
                    (1..7).map(|k| quantile(&pooled, k as f64 / 7.0)).collect()
                })
                .collect();
            let cell = |r: &[f64]| -> usize {
                let i = edges[0].iter().filter(|e| r[0] > **e).count();
                let j = edges[1].iter().filter(|e| r[1] > **e).count();
                i * 7 + j
            };
            let mut pa = vec![0.0; 49];
            let mut pb = vec![0.0; 49];
            for r in a {
                pa[cell(r)] += 1.0 / a.len() as f64;
            }
            for r in b {
                pb[cell(r)] += 1.0 / b.len() as f64;
            }
            Ok(0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>())
        }
        _ => {
            let mut acc = 0.0;
            for j in 0..d {
                let xa: Vec<f64> = a.iter().map(|r| r[j]).collect();
                let xb: Vec<f64> = b.iter().map(|r| r[j]).collect();
                acc += tv_binned_1d(&xa, &xb, 50);
            }
            Ok(acc / d as f64)
        }
    }
}

fn tv_binned_1d(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let edges: Vec<f64> = (1..bins)
        .map(|k| quantile(&pooled, k as f64 / bins as f64))
        .collect();
    let idx = |x: f64| edges.iter().filter(|e| x > **e).count();
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for &x in a {
        pa[idx(x)] += 1.0 / a.len() as f64;
    }
    for &x in b {
        pb[idx(x)] += 1.0 / b.len() as f64;
    }
    0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// KL(N(mean_a, cov_a) || N(mean_b, cov_b)) in closed form.
pub fn kl_mvn(
    mean_a: &[f64],
    cov_a: &DMatrix<f64>,
    mean_b: &[f64],
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mean_a.len();
    if mean_b.len() != d || cov_a.nrows() != d || cov_b.nrows() != d {
        return Err(Error::Shape {
            expected: d,
            got: mean_b.len(),
            context: "kl_mvn",
        });
    }
    let chol_b = cov_b.clone().cholesky().ok_or_else(|| {
        Error::UndefinedStatistic("second covariance is not positive definite".into())
    })?;
    let chol_a = cov_a.clone().cholesky().ok_or_else(|| {
        Error::UndefinedStatistic("first covariance is not positive definite".into())
    })?;
    let log_det_a = 2.0 * chol_a.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_b = 2.0 * chol_b.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = chol_b.solve(cov_a).trace();
    let diff = DVector::from_iterator(d, mean_b.iter().zip(mean_a).map(|(b, a)| b - a));
    let quad = diff.dot(&chol_b.solve(&diff));
    Ok(0.5 * (trace + quad - d as f64 + log_det_b - log_det_a))
}

/// Entropy lost by replacing a Gaussian with the product of its marginals:
/// (1/2)(sum_i log cov_ii - log det cov). Zero iff the covariance is
/// diagonal, and never negative (Hadamard's inequality).
pub fn entropy_gap(cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov.clone().cholesky().ok_or_else(|| {
        Error::UndefinedStatistic("covariance is not positive definite".into())
    })?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let diag_sum: f64 = (0..cov.nrows()).map(|i| cov[(i, i)].ln()).sum();
    Ok(0.5 * (diag_sum - log_det))
}

/// Ratio of two error magnitudes with the denominator floored at 1e-3 so a
/// vanishing baseline cannot blow the ratio up.
pub fn misspec_ratio(numerator: f64, denominator: f64) -> f64 {
    numerator / denominator.max(1e-3)
}

/// Log posterior-predictive density of one point from posterior draws:
/// log mean_k exp(loglik(theta_k)), with a delta-method standard error.
pub fn predictive_logpdf(
    draws: &[Vec<f64>],
    per_draw_loglik: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::TooFewDraws { need: 1, got: 0 });
    }
    let vals = exec::map_indexed(draws.len(), |k| per_draw_loglik(&draws[k]));
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::UndefinedStatistic(
            "all predictive draws are non-finite".into(),
        ));
    }
    let lp = log_mean_exp(&vals);
    let weights: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
    let se = if weights.len() >= 2 {
        sd(&weights) / (mean(&weights) * (weights.len() as f64).sqrt())
    } else {
        0.0
    };
    Ok((lp, se))
}

/// Mean held-out log predictive density over a set of points, with the
/// across-point standard error.
pub fn mean_predictive_loglik(
    draws: &[Vec<f64>],
    points: &[Row],
    per_datum_loglik: impl Fn(&[f64], &Row) -> f64 + Sync,
) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::TooFewDraws { need: 1, got: 0 });
    }
    let per_point: Vec<Result<f64>> = exec::map_indexed(points.len(), |i| {
        predictive_logpdf(draws, |theta| per_datum_loglik(theta, &points[i])).map(|(v, _)| v)
    });
    let mut vals = Vec::with_capacity(points.len());
    for r in per_point {
        vals.push(r?);
    }
    let se = if vals.len() >= 2 {
        sd(&vals) / (vals.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean(&vals), se))
}

/// Rule-of-thumb kernel bandwidth: 0.9 min(sd, iqr/1.34) n^{-1/5}.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let s = sd(xs);
    let iqr = quantile(xs, 0.75) - quantile(xs, 0.25);
    let spread = if iqr > 0.0 { s.min(iqr / 1.34) } else { s };
    0.9 * spread * (xs.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate at one point.
pub fn kde_eval(xs: &[f64], bandwidth: f64, at: f64) -> f64 {
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt() * xs.len() as f64);
    xs.iter()
        .map(|&x| {
            let z = (at - x) / bandwidth;
            (-0.5 * z * z).exp()
        })
        .sum::<f64>()
        * norm
}

/// Total variation between a draw set (smoothed by a Gaussian kernel) and
/// one marginal of a grid density, evaluated on that grid's cells.
pub fn tv_marginal_kde(grid: &GridDensity, axis: usize, samples: &[f64]) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::TooFewDraws {
            need: 100,
            got: samples.len(),
        });
    }
    let bw = silverman_bandwidth(samples);
    if !(bw.is_finite() && bw > 0.0) {
        return Err(Error::UndefinedStatistic("degenerate kernel bandwidth".into()));
    }
    let marg = grid.marginal(axis);
    let ax = &grid.axes[axis];
    let step = ax.step();
    let diff: f64 = exec::map_indexed(marg.len(), |i| {
        (kde_eval(samples, bw, ax.center(i)) * step - marg[i]).abs()
    })
    .iter()
    .sum();
    Ok(0.5 * diff)
}
