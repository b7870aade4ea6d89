//! Mean-field Gaussian variational inference.
//!
//! The variational family is a fully factorised Gaussian over the global
//! parameters, fitted by stochastic gradient ascent on the evidence lower
//! bound with reparameterised Monte Carlo gradients. Latent-variable models
//! get a nested scheme: for each sampled theta the per-unit local posteriors
//! are optimised exactly (categorical) or by a short derivative-free search
//! (continuous), and the theta-gradient of the resulting bound is the
//! envelope gradient, the local-posterior average of the joint's gradient.
//!
//! All Monte Carlo draws are seeded per step and per sample, so a fit is a
//! pure function of (model, data, config) regardless of thread count.

use crate::error::Error;
use crate::exec;
use crate::model::{Dataset, LatentVarModel, LocalKind, LocalValue, ParametricModel, Row};
use crate::numeric::gh::GaussHermite;
use crate::numeric::optim::nelder_mead;
use crate::numeric::rng::{derive_seed, prng};
use crate::numeric::special::log_sum_exp;
use crate::numeric::stats::{ls_slope, mean, sd};
use crate::Result;
use rand_distr::{Distribution as _, StandardNormal};
use std::collections::VecDeque;

const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_74;

/// Fully factorised Gaussian q(theta) = prod_i N(mu_i, sigma_i^2), with
/// sigma stored on the log scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldGaussian {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl MeanFieldGaussian {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::Shape {
                expected: mu.len(),
                got: log_sigma.len(),
                context: "mean-field parameters",
            });
        }
        if mu.iter().chain(&log_sigma).any(|v| !v.is_finite()) {
            return Err(Error::ParamDomain(
                "mean-field parameters must be finite".into(),
            ));
        }
        Ok(MeanFieldGaussian { mu, log_sigma })
    }

    /// N(0, 1) factors in every coordinate.
    pub fn standard(dim: usize) -> Self {
        MeanFieldGaussian {
            mu: vec![0.0; dim],
            log_sigma: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|s| s.exp()).collect()
    }

    /// Differential entropy, sum_i (log sigma_i + (1/2) log(2 pi e)).
    pub fn entropy(&self) -> f64 {
        self.log_sigma.iter().sum::<f64>() + self.dim() as f64 * HALF_LN_2PI_E
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim());
        let mut total = 0.0;
        for i in 0..self.dim() {
            let s = self.log_sigma[i].exp();
            let z = (x[i] - self.mu[i]) / s;
            total += -HALF_LN_2PI - self.log_sigma[i] - 0.5 * z * z;
        }
        total
    }

    /// theta = mu + sigma * eps for a given standard-normal vector.
    pub fn transport(&self, eps: &[f64]) -> Vec<f64> {
        assert_eq!(eps.len(), self.dim());
        (0..self.dim())
            .map(|i| self.mu[i] + self.log_sigma[i].exp() * eps[i])
            .collect()
    }

    pub fn sample(&self, rng: &mut crate::numeric::rng::Prng) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.transport(&eps)
    }
}

/// Inner-loop settings for continuous local posteriors.
#[derive(Debug, Clone)]
pub struct InnerFitConfig {
    /// Gauss-Hermite nodes for the local expectation.
    pub gh_points: usize,
    /// Simplex tolerance for the (mean, log sd) search.
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for InnerFitConfig {
    fn default() -> Self {
        InnerFitConfig {
            gh_points: 21,
            tol: 1e-8,
            max_evals: 400,
        }
    }
}

/// Settings for the stochastic bound ascent.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Reparameterised draws per step.
    pub mc_samples_per_step: usize,
    pub max_steps: usize,
    /// Step size at t: step_base / (1 + step_decay * t).
    pub step_base: f64,
    pub step_decay: f64,
    /// Global-norm gradient clip.
    pub clip: f64,
    /// Length of the bound window used for the convergence test and the
    /// returned tail-averaged parameters.
    pub window: usize,
    /// How often (in steps) the convergence test runs.
    pub check_every: usize,
    pub seed: u64,
    /// Starting point; standard normal factors when absent.
    pub init: Option<MeanFieldGaussian>,
    /// Draws for the reported final bound estimate.
    pub final_elbo_samples: usize,
    /// Target number of recorded trace points.
    pub trace_points: usize,
    pub inner: InnerFitConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mc_samples_per_step: 8,
            max_steps: 20_000,
            step_base: 0.05,
            step_decay: 5e-3,
            clip: 10.0,
            window: 200,
            check_every: 50,
            seed: 1,
            init: None,
            final_elbo_samples: 512,
            trace_points: 250,
            inner: InnerFitConfig::default(),
        }
    }
}

/// Outcome of a variational fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Tail average of the iterates over the final window.
    pub q: MeanFieldGaussian,
    pub final_elbo: f64,
    pub final_elbo_se: f64,
    pub steps: usize,
    /// Whether the bound trend test passed before `max_steps`.
    pub converged: bool,
    /// Thinned (step, bound estimate) trace.
    pub elbo_trace: Vec<(usize, f64)>,
}

/// One Monte Carlo evaluation of the bound and its gradient at q.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub elbo: f64,
    pub elbo_se: f64,
    pub grad_mu: Vec<f64>,
    pub grad_log_sigma: Vec<f64>,
    pub rejected: usize,
    pub total: usize,
}

/// Estimates the bound and its (mu, log sigma) gradient with `n_samples`
/// reparameterised draws seeded from `seed`.
///
/// `objective` returns `log p(theta) + log p(x | theta)` (or a surrogate
/// bound on it) and its theta-gradient. Draws with a non-finite value or
/// gradient are dropped; more than half dropped is an instability error.
fn mc_step<F>(objective: &F, q: &MeanFieldGaussian, n_samples: usize, seed: u64) -> Result<StepEval>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    let d = q.dim();
    let sigma = q.sigma();
    let raw: Vec<Result<Option<(f64, Vec<f64>, Vec<f64>)>>> = exec::map_indexed(n_samples, |k| {
        let mut rng = prng(derive_seed(seed, &[0x5a3e, k as u64]));
        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let theta = q.transport(&eps);
        let (h, g) = objective(&theta)?;
        if !h.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let g_ls: Vec<f64> = (0..d).map(|i| g[i] * sigma[i] * eps[i]).collect();
        Ok(Some((h, g, g_ls)))
    });

    let mut values = Vec::with_capacity(n_samples);
    let mut grad_mu = vec![0.0; d];
    let mut grad_ls = vec![0.0; d];
    let mut rejected = 0usize;
    for r in raw {
        match r? {
            Some((h, g, g_ls)) => {
                values.push(h);
                for i in 0..d {
                    grad_mu[i] += g[i];
                    grad_ls[i] += g_ls[i];
                }
            }
            None => rejected += 1,
        }
    }
    if 2 * rejected > n_samples {
        return Err(Error::Instability {
            rejected,
            total: n_samples,
        });
    }
    let acc = values.len() as f64;
    let entropy = q.entropy();
    let elbo = mean(&values) + entropy;
    let elbo_se = if values.len() >= 2 {
        sd(&values) / acc.sqrt()
    } else {
        f64::INFINITY
    };
    for i in 0..d {
        grad_mu[i] /= acc;
        grad_ls[i] = grad_ls[i] / acc + 1.0; // entropy contributes exactly 1
    }
    Ok(StepEval {
        elbo,
        elbo_se,
        grad_mu,
        grad_log_sigma: grad_ls,
        rejected,
        total: n_samples,
    })
}

/// Value-only bound estimate with the same draw scheme as [`mc_step`]: the
/// two agree sample for sample at a shared seed, which is what makes the
/// finite-difference gradient check exact up to truncation error.
fn mc_value<F>(objective: &F, q: &MeanFieldGaussian, n_samples: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let d = q.dim();
    let raw: Vec<Result<Option<f64>>> = exec::map_indexed(n_samples, |k| {
        let mut rng = prng(derive_seed(seed, &[0x5a3e, k as u64]));
        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = objective(&q.transport(&eps))?;
        Ok(h.is_finite().then_some(h))
    });
    let mut values = Vec::with_capacity(n_samples);
    let mut rejected = 0usize;
    for r in raw {
        match r? {
            Some(h) => values.push(h),
            None => rejected += 1,
        }
    }
    if 2 * rejected > n_samples {
        return Err(Error::Instability {
            rejected,
            total: n_samples,
        });
    }
    let se = if values.len() >= 2 {
        sd(&values) / (values.len() as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok((mean(&values) + q.entropy(), se))
}

/// Adam-style ascent on the stochastic bound with step size
/// `step_base / (1 + step_decay t)`, global-norm clipping, and a trend-based
/// stop: fitting halts once the least-squares slope of the last `window`
/// bound values is below 0.01 of the window mean's standard error. The
/// returned q is the average of the iterates over that final window, which
/// strips most of the residual optimiser jitter.
fn fit_driver<F>(dim: usize, cfg: &FitConfig, objective: F) -> Result<FitReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    let mut q = match &cfg.init {
        Some(q0) => {
            if q0.dim() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: q0.dim(),
                    context: "fit init",
                });
            }
            q0.clone()
        }
        None => MeanFieldGaussian::standard(dim),
    };
    let (b1, b2, adam_eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; 2 * dim];
    let mut m2 = vec![0.0; 2 * dim];
    let mut elbo_window: VecDeque<f64> = VecDeque::with_capacity(cfg.window);
    let mut param_window: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(cfg.window);
    let trace_every = (cfg.max_steps / cfg.trace_points.max(1)).max(1);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut steps = 0;

    for t in 1..=cfg.max_steps {
        steps = t;
        let eval = mc_step(&objective, &q, cfg.mc_samples_per_step, derive_seed(cfg.seed, &[0xe1b0, t as u64]))?;

        let mut g: Vec<f64> = eval
            .grad_mu
            .iter()
            .chain(&eval.grad_log_sigma)
            .copied()
            .collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > cfg.clip {
            let scale = cfg.clip / norm;
            g.iter_mut().for_each(|v| *v *= scale);
        }
        let alpha = cfg.step_base / (1.0 + cfg.step_decay * t as f64);
        let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
        for i in 0..2 * dim {
            m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
            m2[i] = b2 * m2[i] + (1.0 - b2) * g[i] * g[i];
            let step = alpha * (m1[i] / c1) / ((m2[i] / c2).sqrt() + adam_eps);
            if i < dim {
                q.mu[i] += step;
            } else {
                q.log_sigma[i - dim] += step;
            }
        }
        let mu_norm = q.mu.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if mu_norm > 1e6 {
            return Err(Error::Diverged { norm: mu_norm, step: t });
        }

        if elbo_window.len() == cfg.window {
            elbo_window.pop_front();
            param_window.pop_front();
        }
        elbo_window.push_back(eval.elbo);
        param_window.push_back((q.mu.clone(), q.log_sigma.clone()));
        if t % trace_every == 0 || t == 1 {
            trace.push((t, eval.elbo));
        }

        if elbo_window.len() == cfg.window && t % cfg.check_every == 0 {
            let vals: Vec<f64> = elbo_window.iter().copied().collect();
            let (slope, _) = ls_slope(&vals);
            let se = sd(&vals) / (cfg.window as f64).sqrt();
            if slope.abs() < 0.01 * se {
                converged = true;
                break;
            }
        }
    }

    // Tail average over the final window.
    let k = param_window.len().max(1) as f64;
    let mut mu = vec![0.0; dim];
    let mut ls = vec![0.0; dim];
    for (pm, pl) in &param_window {
        for i in 0..dim {
            mu[i] += pm[i] / k;
            ls[i] += pl[i] / k;
        }
    }
    let q_final = MeanFieldGaussian::new(mu, ls)?;
    let value_obj = |theta: &[f64]| objective(theta).map(|(h, _)| h);
    let (final_elbo, final_elbo_se) = mc_value(
        &value_obj,
        &q_final,
        cfg.final_elbo_samples,
        derive_seed(cfg.seed, &[0xf17a]),
    )?;
    Ok(FitReport {
        q: q_final,
        final_elbo,
        final_elbo_se,
        steps,
        converged,
        elbo_trace: trace,
    })
}

/// Fits the mean-field Gaussian to a parametric model's posterior.
pub fn fit_vb(model: &ParametricModel, data: &Dataset, cfg: &FitConfig) -> Result<FitReport> {
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let v = model.log_posterior_unnorm(theta, data)?;
        let g = model.log_posterior_grad(theta, data)?;
        Ok((v, g))
    };
    fit_driver(model.dim, cfg, objective)
}

/// Bound estimate (value, Monte Carlo se) for a parametric model at a fixed
/// q, using `n_samples` seeded draws.
pub fn elbo(
    model: &ParametricModel,
    data: &Dataset,
    q: &MeanFieldGaussian,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let objective = |theta: &[f64]| model.log_posterior_unnorm(theta, data);
    mc_value(&objective, q, n_samples, seed)
}

/// Bound and gradient estimate for a parametric model at a fixed q; exposed
/// so the estimator itself can be validated against finite differences.
pub fn elbo_and_grad(
    model: &ParametricModel,
    data: &Dataset,
    q: &MeanFieldGaussian,
    n_samples: usize,
    seed: u64,
) -> Result<StepEval> {
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let v = model.log_posterior_unnorm(theta, data)?;
        let g = model.log_posterior_grad(theta, data)?;
        Ok((v, g))
    };
    mc_step(&objective, q, n_samples, seed)
}

/// Optimal local posterior for one unit at a fixed theta.
#[derive(Debug, Clone)]
pub enum LocalPosterior {
    /// Responsibilities over the categories; they sum to one.
    Categorical(Vec<f64>),
    /// Gaussian factor over a scalar local variable.
    Gaussian { mean: f64, log_sd: f64 },
}

/// Fits the local posterior of one unit and returns (bound contribution,
/// local posterior).
///
/// Categorical locals are exact: the optimal responsibilities are the
/// softmax of the per-category joints and the bound equals the unit's log
/// marginal. Continuous locals run a simplex search over (mean, log sd)
/// with a Laplace-style start, scoring candidates by Gauss-Hermite
/// quadrature.
pub fn inner_local_fit(
    model: &LatentVarModel,
    gh: &GaussHermite,
    theta: &[f64],
    unit_id: usize,
    unit: &[Row],
    icfg: &InnerFitConfig,
) -> Result<(f64, LocalPosterior)> {
    match model.local_kind {
        LocalKind::Categorical(k) => {
            let joints: Vec<f64> = (0..k)
                .map(|j| model.local_joint(theta, LocalValue::Index(j), unit_id, unit))
                .collect();
            let bound = log_sum_exp(&joints);
            let weights: Vec<f64> = joints.iter().map(|j| (j - bound).exp()).collect();
            Ok((bound, LocalPosterior::Categorical(weights)))
        }
        LocalKind::ContinuousScalar => {
            let joint = |z: f64| model.local_joint(theta, LocalValue::Real(z), unit_id, unit);
            // Laplace-style start: 1-d mode search, then a curvature-matched
            // standard deviation.
            let mode = nelder_mead(|z| -joint(z[0]), &[0.0], 1.0, 1e-6, 200).x[0];
            let h = 1e-3 * (1.0 + mode.abs());
            let curv = (joint(mode + h) - 2.0 * joint(mode) + joint(mode - h)) / (h * h);
            let log_sd0 = if curv < 0.0 {
                (-0.5 * (-curv).ln()).clamp(-5.0, 5.0)
            } else {
                0.0
            };
            let neg_bound = |p: &[f64]| {
                let (m, log_s) = (p[0], p[1].clamp(-12.0, 12.0));
                let s = log_s.exp();
                let e = gh.expect_normal(m, s, joint);
                -(e + log_s + HALF_LN_2PI_E)
            };
            let res = nelder_mead(neg_bound, &[mode, log_sd0], 0.25, icfg.tol, icfg.max_evals);
            if !res.converged {
                return Err(Error::InnerFit {
                    unit: unit_id,
                    reason: "local simplex search exhausted its evaluation budget".into(),
                    last: res.x,
                });
            }
            Ok((
                -res.f,
                LocalPosterior::Gaussian {
                    mean: res.x[0],
                    log_sd: res.x[1].clamp(-12.0, 12.0),
                },
            ))
        }
    }
}

/// Theta-gradient of a unit's bound at its optimal local posterior: by the
/// envelope theorem this is the local-posterior expectation of the joint's
/// theta-gradient.
pub fn local_envelope_grad(
    model: &LatentVarModel,
    gh: &GaussHermite,
    theta: &[f64],
    local: &LocalPosterior,
    unit_id: usize,
    unit: &[Row],
    out: &mut [f64],
) {
    let d = theta.len();
    let mut scratch = vec![0.0; d];
    match local {
        LocalPosterior::Categorical(weights) => {
            for (j, w) in weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                scratch.iter_mut().for_each(|v| *v = 0.0);
                model.local_joint_grad(theta, LocalValue::Index(j), unit_id, unit, &mut scratch);
                for i in 0..d {
                    out[i] += w * scratch[i];
                }
            }
        }
        LocalPosterior::Gaussian { mean, log_sd } => {
            let s = log_sd.exp();
            let root2 = std::f64::consts::SQRT_2;
            let wsum = std::f64::consts::PI.sqrt();
            for (node, w) in gh.nodes.iter().zip(&gh.weights) {
                let z = mean + root2 * s * node;
                scratch.iter_mut().for_each(|v| *v = 0.0);
                model.local_joint_grad(theta, LocalValue::Real(z), unit_id, unit, &mut scratch);
                let weight = w / wsum;
                for i in 0..d {
                    out[i] += weight * scratch[i];
                }
            }
        }
    }
}

/// Sum over units of the optimal local bounds at a fixed theta: a lower
/// bound on `log p(x | theta)` that is exact for categorical locals.
/// Returns the per-unit local posteriors alongside.
pub fn variational_loglik(
    model: &LatentVarModel,
    theta: &[f64],
    data: &Dataset,
    icfg: &InnerFitConfig,
) -> Result<(f64, Vec<LocalPosterior>)> {
    if theta.len() != model.global_dim {
        return Err(Error::Shape {
            expected: model.global_dim,
            got: theta.len(),
            context: "variational_loglik",
        });
    }
    let units = data.units()?;
    let gh = GaussHermite::new(icfg.gh_points);
    let fitted: Vec<Result<(f64, LocalPosterior)>> = exec::map_indexed(units.len(), |u| {
        inner_local_fit(model, &gh, theta, u, units[u], icfg)
    });
    let mut total = 0.0;
    let mut locals = Vec::with_capacity(units.len());
    for r in fitted {
        let (b, l) = r?;
        total += b;
        locals.push(l);
    }
    Ok((total, locals))
}

/// Fits the mean-field Gaussian over the global parameters of a
/// latent-variable model; local posteriors are re-optimised at every sampled
/// theta and enter the gradient through the envelope theorem.
pub fn fit_vb_latent(model: &LatentVarModel, data: &Dataset, cfg: &FitConfig) -> Result<FitReport> {
    let units = data.units()?;
    let gh = GaussHermite::new(cfg.inner.gh_points);
    let d = model.global_dim;
    let icfg = cfg.inner.clone();
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut value = model.prior_logpdf(theta);
        let mut grad = model.prior_grad(theta);
        for (u, unit) in units.iter().enumerate() {
            let (bound, local) = inner_local_fit(model, &gh, theta, u, unit, &icfg)?;
            value += bound;
            local_envelope_grad(model, &gh, theta, &local, u, unit, &mut grad);
        }
        Ok((value, grad))
    };
    fit_driver(d, cfg, objective)
}

/// Bound estimate for a latent-variable model at a fixed q.
pub fn elbo_latent(
    model: &LatentVarModel,
    data: &Dataset,
    q: &MeanFieldGaussian,
    n_samples: usize,
    seed: u64,
    icfg: &InnerFitConfig,
) -> Result<(f64, f64)> {
    let objective = |theta: &[f64]| -> Result<f64> {
        let (ll, _) = variational_loglik(model, theta, data, icfg)?;
        Ok(model.prior_logpdf(theta) + ll)
    };
    mc_value(&objective, q, n_samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gaussian_prior;
    use crate::numeric::fd::grad_central;
    use crate::numeric::rng::prng;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// y ~ N(theta, 1) with prior N(0, 1): posterior and evidence closed form.
    fn conjugate_model() -> ParametricModel {
        let (p, g) = gaussian_prior(0.0, 1.0);
        ParametricModel::new(
            1,
            |t, row| {
                let z = row.y - t[0];
                -HALF_LN_2PI - 0.5 * z * z
            },
            |t, row, out| out[0] += row.y - t[0],
        )
        .with_prior(move |t| p(t), move |t| g(t))
    }

    fn conjugate_data(n: usize, seed: u64) -> Dataset {
        let mut rng = prng(seed);
        Dataset::from_observations((0..n).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.4 + z
        }))
    }

    fn exact_posterior(data: &Dataset) -> (f64, f64) {
        let n = data.n() as f64;
        let sum: f64 = data.rows.iter().map(|r| r.y).sum();
        (sum / (n + 1.0), 1.0 / (n + 1.0))
    }

    fn log_evidence(data: &Dataset) -> f64 {
        let n = data.n() as f64;
        let sum: f64 = data.rows.iter().map(|r| r.y).sum();
        let sumsq: f64 = data.rows.iter().map(|r| r.y * r.y).sum();
        -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * (n + 1.0).ln()
            - 0.5 * (sumsq - sum * sum / (n + 1.0))
    }

    #[test]
    fn bound_at_exact_posterior_equals_evidence() {
        let data = conjugate_data(20, 7);
        let model = conjugate_model();
        let (pm, pv) = exact_posterior(&data);
        let q = MeanFieldGaussian::new(vec![pm], vec![0.5 * pv.ln()]).unwrap();
        let (e, se) = elbo(&model, &data, &q, 4000, 99).unwrap();
        let lz = log_evidence(&data);
        assert!(
            (e - lz).abs() <= 3.0 * se,
            "bound {e} vs evidence {lz}, se {se}"
        );
        assert!(se < 0.05);
    }

    #[test]
    fn fit_recovers_conjugate_posterior() {
        let data = conjugate_data(20, 7);
        let model = conjugate_model();
        let (pm, pv) = exact_posterior(&data);
        let cfg = FitConfig {
            seed: 5,
            max_steps: 6000,
            ..Default::default()
        };
        let rep = fit_vb(&model, &data, &cfg).unwrap();
        assert!(rep.converged, "no convergence in {} steps", rep.steps);
        assert_abs_diff_eq!(rep.q.mu[0], pm, epsilon = 0.02);
        assert_relative_eq!(rep.q.sigma()[0], pv.sqrt(), max_relative = 0.10);
        // The bound can only sit below the evidence, and here the family
        // contains the posterior, so it should be close.
        let lz = log_evidence(&data);
        assert!((rep.final_elbo - lz).abs() <= 3.0 * rep.final_elbo_se + 0.02);
    }

    #[test]
    fn flat_likelihood_fit_recovers_prior() {
        // With no data term the bound is -KL(q || prior), maximised at the
        // prior itself with value zero.
        let (p, g) = gaussian_prior(0.7, 2.0);
        let model = ParametricModel::new(1, |_, _| 0.0, |_, _, _| {}).with_prior(move |t| p(t), move |t| g(t));
        let data = Dataset::new(vec![]);
        let cfg = FitConfig {
            seed: 9,
            max_steps: 8000,
            ..Default::default()
        };
        let rep = fit_vb(&model, &data, &cfg).unwrap();
        assert!(rep.converged);
        assert_abs_diff_eq!(rep.q.mu[0], 0.7, epsilon = 0.05);
        assert_relative_eq!(rep.q.sigma()[0], 2.0, max_relative = 0.10);
        let q = MeanFieldGaussian::new(vec![0.7], vec![2.0f64.ln()]).unwrap();
        let (e, se) = elbo(&model, &data, &q, 4000, 3).unwrap();
        assert!(e.abs() <= 3.0 * se, "bound at prior should be 0, got {e}");
    }

    #[test]
    fn bound_se_halves_with_quadruple_samples() {
        let data = conjugate_data(20, 7);
        let model = conjugate_model();
        let q = MeanFieldGaussian::new(vec![0.2], vec![-1.0]).unwrap();
        let (_, se1) = elbo(&model, &data, &q, 1000, 31).unwrap();
        let (_, se4) = elbo(&model, &data, &q, 4000, 32).unwrap();
        let ratio = se4 / se1;
        assert!(
            (0.35..=0.65).contains(&ratio),
            "se ratio {ratio}, want about 0.5"
        );
    }

    #[test]
    fn gradient_matches_common_random_number_differences() {
        let data = conjugate_data(15, 3);
        let model = conjugate_model();
        let mut rng = prng(44);
        for case in 0..20 {
            let mu: f64 = StandardNormal.sample(&mut rng);
            let ls: f64 = {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * z - 0.5
            };
            let q = MeanFieldGaussian::new(vec![mu], vec![ls]).unwrap();
            let seed = 1000 + case;
            let eval = elbo_and_grad(&model, &data, &q, 64, seed).unwrap();
            // Same seed, same eps draws: the value as a function of
            // (mu, log sigma) is smooth and the estimator differentiates it.
            let f = |p: &[f64]| {
                let qq = MeanFieldGaussian::new(vec![p[0]], vec![p[1]]).unwrap();
                elbo(&model, &data, &qq, 64, seed).unwrap().0
            };
            let fd = grad_central(f, &[mu, ls], 1e-5);
            let grad = [eval.grad_mu[0], eval.grad_log_sigma[0]];
            for i in 0..2 {
                let denom = fd[i].abs().max(1.0);
                assert!(
                    (grad[i] - fd[i]).abs() / denom <= 1e-4,
                    "case {case} coord {i}: analytic {} vs fd {}",
                    grad[i],
                    fd[i]
                );
            }
        }
    }

    #[test]
    fn unstable_objective_is_reported() {
        let model = ParametricModel::new(1, |_, _| f64::NAN, |_, _, _| {});
        let data = Dataset::from_observations([1.0]);
        let q = MeanFieldGaussian::standard(1);
        let err = elbo(&model, &data, &q, 16, 5).unwrap_err();
        assert!(matches!(err, Error::Instability { rejected: 16, total: 16 }), "{err:?}");
    }

    #[test]
    fn categorical_bound_is_exact_marginal() {
        // Two-component equal-weight Gaussian mixture: the optimal local
        // bound telescopes to the exact marginal likelihood.
        let model = LatentVarModel::new(
            2,
            LocalKind::Categorical(2),
            |t, z, _, unit| {
                let c = t[z.index()];
                let d = unit[0].y - c;
                (0.5f64).ln() - HALF_LN_2PI - 0.5 * d * d
            },
            |t, z, _, unit, out| {
                let j = z.index();
                out[j] += unit[0].y - t[j];
            },
        );
        let data = Dataset::from_observations([-1.3, 0.2, 2.4, 0.9, -0.5]);
        let theta = [-1.0, 2.0];
        let (bound, locals) =
            variational_loglik(&model, &theta, &data, &InnerFitConfig::default()).unwrap();
        let exact: f64 = data
            .rows
            .iter()
            .map(|r| {
                let l0 = -HALF_LN_2PI - 0.5 * (r.y + 1.0) * (r.y + 1.0);
                let l1 = -HALF_LN_2PI - 0.5 * (r.y - 2.0) * (r.y - 2.0);
                log_sum_exp(&[l0 + (0.5f64).ln(), l1 + (0.5f64).ln()])
            })
            .sum();
        assert_abs_diff_eq!(bound, exact, epsilon = 1e-8);
        for l in &locals {
            match l {
                LocalPosterior::Categorical(w) => {
                    assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12)
                }
                _ => panic!("expected categorical locals"),
            }
        }
    }

    #[test]
    fn continuous_inner_fit_matches_conjugate_unit() {
        // local z ~ N(theta, 1), y | z ~ N(z, 1): optimal q(z) is
        // N((y + theta)/2, 1/2) and the bound equals log N(y | theta, 2).
        let model = LatentVarModel::new(
            1,
            LocalKind::ContinuousScalar,
            |t, z, _, unit| {
                let zv = z.real();
                let a = unit[0].y - zv;
                let b = zv - t[0];
                -2.0 * HALF_LN_2PI - 0.5 * a * a - 0.5 * b * b
            },
            |t, z, _, _, out| out[0] += z.real() - t[0],
        );
        let gh = GaussHermite::new(21);
        let unit = [Row::obs(1.8)];
        let theta = [0.4];
        let (bound, local) =
            inner_local_fit(&model, &gh, &theta, 0, &unit, &InnerFitConfig::default()).unwrap();
        let (m, s) = match local {
            LocalPosterior::Gaussian { mean, log_sd } => (mean, log_sd.exp()),
            _ => panic!("expected gaussian local"),
        };
        assert_abs_diff_eq!(m, (1.8 + 0.4) / 2.0, epsilon = 1e-4);
        assert_abs_diff_eq!(s, 0.5f64.sqrt(), epsilon = 1e-4);
        let exact = {
            let d: f64 = 1.8 - 0.4;
            -HALF_LN_2PI - 0.5 * 2.0f64.ln() - d * d / 4.0
        };
        assert_abs_diff_eq!(bound, exact, epsilon = 1e-6);
    }

    #[test]
    fn single_component_latent_fit_matches_parametric_fit() {
        // A one-category latent model is the parametric model in disguise;
        // both fits should follow essentially the same trajectory.
        let (p1, g1) = gaussian_prior(0.0, 1.0);
        let latent = LatentVarModel::new(
            1,
            LocalKind::Categorical(1),
            |t, _, _, unit| {
                let z = unit[0].y - t[0];
                -HALF_LN_2PI - 0.5 * z * z
            },
            |t, _, _, unit, out| out[0] += unit[0].y - t[0],
        )
        .with_prior(
            move |t| p1(t),
            move |t| g1(t),
        );
        let data = conjugate_data(12, 21);
        let cfg = FitConfig {
            seed: 33,
            max_steps: 4000,
            ..Default::default()
        };
        let a = fit_vb(&conjugate_model(), &data, &cfg).unwrap();
        let b = fit_vb_latent(&latent, &data, &cfg).unwrap();
        assert_abs_diff_eq!(a.q.mu[0], b.q.mu[0], epsilon = 1e-9);
        assert_abs_diff_eq!(a.q.log_sigma[0], b.q.log_sigma[0], epsilon = 1e-9);
    }

    #[test]
    fn entropy_and_logpdf_are_consistent() {
        let q = MeanFieldGaussian::new(vec![0.3, -1.0], vec![0.2, -0.4]).unwrap();
        // E[-log q] over q equals the entropy; check by quadrature per axis.
        let gh = GaussHermite::new(31);
        let s = q.sigma();
        let mut h = 0.0;
        for i in 0..2 {
            h += gh.expect_normal(q.mu[i], s[i], |x| {
                let z = (x - q.mu[i]) / s[i];
                HALF_LN_2PI + q.log_sigma[i] + 0.5 * z * z
            });
        }
        assert_abs_diff_eq!(h, q.entropy(), epsilon = 1e-10);
    }
}
