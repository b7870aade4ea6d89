//! Replication runner: for each (n, rep) it simulates data, fits the
//! variational posterior and the reference sampler, and reduces both to the
//! same six metrics, one row per (method, metric).
//!
//! Metrics per replication:
//! - `rmse_theta_star`: distance of the posterior mean from the population
//!   pseudo-truth.
//! - `tv_to_limit`: total variation against the limiting normal (mean-field
//!   limit for the variational fit, full-covariance limit for the sampler;
//!   the fixed-group scenario measures both against its sampled limit
//!   posterior).
//! - `pred_ll`: average held-out log predictive density.
//! - `ratio_num` / `ratio_den` / `ratio`: predictive total variation to the
//!   reference predictive over the variation between the reference
//!   predictive and the truth; the sampler rows carry zero numerators by
//!   construction, they are the baseline.

use std::sync::Arc;

use rand_distr::{Distribution as _, StandardNormal};

use crate::diagnostics::{
    mean_predictive_loglik, misspec_ratio, tv_grid, tv_samples, union_bounds, LimitingNormal,
};
use crate::error::Error;
use crate::model::{Dataset, ParametricModel};
use crate::numeric::gh::GaussHermite;
use crate::numeric::rng::{derive_seed, prng};
use crate::numeric::stats::quantile;
use crate::population::{lan_shift, PopulationSummary, ThetaStarConfig};
use crate::posterior::{metropolis_sample, McmcConfig, McmcRun};
use crate::report::ResultRow;
use crate::scenario::glmm::GlmmLimit;
use crate::scenario::{count, glmm, mixture, ScenarioSpec};
use crate::vb::{fit_vb, fit_vb_latent, FitConfig, MeanFieldGaussian};
use crate::Result;

pub const METHODS: [&str; 2] = ["vb", "mcmc"];
pub const METRICS: [&str; 6] = [
    "rmse_theta_star",
    "tv_to_limit",
    "pred_ll",
    "ratio_num",
    "ratio_den",
    "ratio",
];

/// Reference-sampler settings (random-walk chains on the marginalised
/// posterior).
#[derive(Debug, Clone)]
pub struct McmcSettings {
    pub chains: usize,
    pub burn_in: usize,
    /// Kept draws per chain.
    pub keep: usize,
    pub thin: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            chains: 4,
            burn_in: 5_000,
            keep: 2_500,
            thin: 1,
        }
    }
}

/// Experiment-level knobs; `ns: None` uses the scenario's default ladder.
#[derive(Clone)]
pub struct RunConfig {
    pub ns: Option<Vec<usize>>,
    pub reps: usize,
    pub base_seed: u64,
    /// Pool size behind the population reference quantities.
    pub mc_pool: usize,
    pub vb: FitConfig,
    pub mcmc: McmcSettings,
    /// Posterior draws entering predictive summaries.
    pub pred_draws: usize,
    /// Held-out truth draws scored by the predictive.
    pub held_out: usize,
    /// Draws from the limiting normal for sampled distances.
    pub limit_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ns: None,
            reps: 20,
            base_seed: 1,
            mc_pool: 200_000,
            vb: FitConfig::default(),
            mcmc: McmcSettings::default(),
            pred_draws: 2_000,
            held_out: 2_000,
            limit_draws: 20_000,
        }
    }
}

/// Population-level reference a scenario is measured against.
pub enum Reference {
    /// Pseudo-truth plus curvature/score matrices from one shared pool.
    Iid(PopulationSummary),
    /// Closed-form fixed-group limit.
    Grouped(GlmmLimit),
}

impl Reference {
    pub fn theta_star(&self) -> &[f64] {
        match self {
            Reference::Iid(p) => &p.theta_star,
            Reference::Grouped(g) => &g.theta_star,
        }
    }
}

pub struct ScenarioRun {
    pub scenario: ScenarioSpec,
    pub rows: Vec<ResultRow>,
    pub reference: Reference,
}

/// The marginalised iid model behind a scenario (not defined for the
/// grouped scenario, whose likelihood is only unit-additive).
pub fn iid_model(spec: ScenarioSpec) -> ParametricModel {
    match spec {
        ScenarioSpec::CountIntercept | ScenarioSpec::WellSpecified => count::intercept_model(),
        ScenarioSpec::CountRegression => count::regression_model(),
        ScenarioSpec::MixtureT => mixture::marginal_model(),
        ScenarioSpec::PoissonGlmm => {
            unreachable!("grouped scenario has no row-iid likelihood")
        }
    }
}

/// Computes the population reference once per scenario.
pub fn compute_reference(spec: ScenarioSpec, cfg: &RunConfig) -> Result<Reference> {
    if spec == ScenarioSpec::PoissonGlmm {
        return Ok(Reference::Grouped(GlmmLimit::compute()));
    }
    let truth = spec.truth();
    let model = iid_model(spec);
    let mut tcfg = ThetaStarConfig {
        mc_draws: cfg.mc_pool,
        seed: derive_seed(cfg.base_seed, &[spec.id(), 0x70b0]),
        ..ThetaStarConfig::default()
    };
    if spec == ScenarioSpec::MixtureT {
        // Starting centres from spaced quantiles of a small probe pool;
        // restarts are compared after sorting the labels.
        let probe = truth.pool(4_096, tcfg.seed);
        let ys: Vec<f64> = probe.rows.iter().map(|r| r.y).collect();
        tcfg.init = Some(vec![
            quantile(&ys, 1.0 / 6.0),
            quantile(&ys, 0.5),
            quantile(&ys, 5.0 / 6.0),
        ]);
        tcfg.start_spread = 0.5;
        tcfg.canonicalize = Some(Arc::new(|t: &mut [f64]| mixture::sort_canonical(t)));
    }
    Ok(Reference::Iid(PopulationSummary::compute(
        &truth, &model, &tcfg,
    )?))
}

/// Runs the full replication grid for one scenario.
///
/// Individual replications may fail (non-converged fit, unstable step);
/// their rows are kept with the failed flag set. More than 20% failures at
/// any n aborts the scenario.
pub fn run_scenario(spec: ScenarioSpec, cfg: &RunConfig) -> Result<ScenarioRun> {
    let reference = compute_reference(spec, cfg)?;
    let held = spec.held_out(cfg.held_out);
    let ns = cfg.ns.clone().unwrap_or_else(|| spec.default_ns());
    // The fixed-group limit does not depend on n: sample it once.
    let grouped_draws = match &reference {
        Reference::Grouped(lim) => Some(sample_grouped_limit(lim, cfg)?),
        Reference::Iid(_) => None,
    };
    let mut rows = Vec::new();
    for &n in &ns {
        let mut failed = 0usize;
        for rep in 0..cfg.reps {
            match run_rep(spec, &reference, grouped_draws.as_deref(), &held, n, rep, cfg) {
                Ok(mut r) => rows.append(&mut r),
                Err(e @ (Error::Config(_) | Error::Shape { .. })) => return Err(e),
                Err(_) => {
                    failed += 1;
                    rows.extend(failed_rows(spec, n, rep));
                }
            }
        }
        if 5 * failed > cfg.reps {
            return Err(Error::ScenarioFailure {
                scenario: spec.name().into(),
                n,
                failed,
                total: cfg.reps,
            });
        }
    }
    Ok(ScenarioRun {
        scenario: spec,
        rows,
        reference,
    })
}

/// Stable per-replication seed derivation shared by every stage.
fn rep_seed(cfg: &RunConfig, spec: ScenarioSpec, n: usize, rep: usize, stage: u64) -> u64 {
    derive_seed(cfg.base_seed, &[spec.id(), n as u64, rep as u64, stage])
}

/// Runs just the data-simulation and variational stage of one replication,
/// with the same seeds the full runner uses.
pub fn fit_replication(
    spec: ScenarioSpec,
    n: usize,
    rep: usize,
    cfg: &RunConfig,
) -> Result<(Dataset, crate::vb::FitReport)> {
    let data = spec.generate_data(n, rep_seed(cfg, spec, n, rep, 1))?;
    let mut vbcfg = cfg.vb.clone();
    vbcfg.seed = rep_seed(cfg, spec, n, rep, 2);
    vbcfg.init = Some(init_state(spec, &data, n)?);
    let fit = match spec {
        ScenarioSpec::MixtureT => fit_vb_latent(&mixture::latent_model(), &data, &vbcfg)?,
        ScenarioSpec::PoissonGlmm => fit_vb_latent(&glmm::model(&data)?, &data, &vbcfg)?,
        _ => fit_vb(&iid_model(spec), &data, &vbcfg)?,
    };
    Ok((data, fit))
}

/// Label-canonical representative of a fitted state.
pub fn canonical_q_for(spec: ScenarioSpec, q: &MeanFieldGaussian) -> MeanFieldGaussian {
    match spec {
        ScenarioSpec::MixtureT => mixture::canonical_q(q),
        _ => q.clone(),
    }
}

/// Runs one replication up to the reference sampler and returns the
/// canonicalised fit together with the sampler output.
pub fn sample_replication(
    spec: ScenarioSpec,
    n: usize,
    rep: usize,
    cfg: &RunConfig,
) -> Result<(MeanFieldGaussian, McmcRun)> {
    let (data, fit) = fit_replication(spec, n, rep, cfg)?;
    let q = canonical_q_for(spec, &fit.q);
    let run = sample_posterior(spec, &data, &q, rep_seed(cfg, spec, n, rep, 3), cfg)?;
    Ok((q, run))
}

fn run_rep(
    spec: ScenarioSpec,
    reference: &Reference,
    grouped_limit: Option<&[Vec<f64>]>,
    held: &Dataset,
    n: usize,
    rep: usize,
    cfg: &RunConfig,
) -> Result<Vec<ResultRow>> {
    let tag = |t: u64| rep_seed(cfg, spec, n, rep, t);
    let (data, fit) = fit_replication(spec, n, rep, cfg)?;
    let q = canonical_q_for(spec, &fit.q);

    // reference sampler on the exact (marginalised) posterior
    let run = sample_posterior(spec, &data, &q, tag(3), cfg)?;
    let mut draws = run.pooled_vec();
    if spec == ScenarioSpec::MixtureT {
        for d in draws.iter_mut() {
            mixture::sort_canonical(d);
        }
    }

    // point-estimate error against the pseudo-truth
    let star = reference.theta_star();
    let rmse_vb = l2(&q.mu, star);
    let post_mean = mean_rows(&draws);
    let rmse_mcmc = l2(&post_mean, star);

    // distance to the limiting object
    let (tv_vb, tv_mcmc) = match reference {
        Reference::Iid(p) => {
            let model = iid_model(spec);
            let delta = lan_shift(&model, star, &p.v, &data)?;
            let exact = LimitingNormal::exact(star.to_vec(), &p.v, n)?.shifted(&delta, n);
            let mf = LimitingNormal::meanfield(star.to_vec(), &p.v, n)?.shifted(&delta, n);
            let qs = q.sigma();
            let ms = mf.marginal_sd();
            let bounds = union_bounds(&[(&q.mu, &qs), (mf.mean(), &ms)], 8.0);
            let tv_vb = tv_grid(
                |x| q.logpdf(x).exp(),
                |x| mf.density(x),
                &bounds,
                grid_points(q.dim()),
            )?;
            let mut lim = sample_normal(&exact, cfg.limit_draws, tag(5));
            if spec == ScenarioSpec::MixtureT {
                for d in lim.iter_mut() {
                    mixture::sort_canonical(d);
                }
            }
            (tv_vb, tv_samples(&draws, &lim)?)
        }
        Reference::Grouped(_) => {
            let lim = grouped_limit.expect("sampled before the replication loop");
            let q_draws = sample_q(&q, cfg.limit_draws, tag(5));
            (tv_samples(&q_draws, lim)?, tv_samples(&draws, lim)?)
        }
    };

    // held-out predictive score
    let q_pred = sample_q(&q, cfg.pred_draws, tag(4));
    let m_pred = thin_rows(&draws, cfg.pred_draws);
    let (pll_vb, pse_vb) = predictive_score(spec, &q_pred, held)?;
    let (pll_mcmc, pse_mcmc) = predictive_score(spec, &m_pred, held)?;

    // predictive total-variation split: approximation error over
    // misspecification error
    let (num_vb, den) = predictive_distance(spec, &q_pred, &m_pred)?;

    let mut rows = Vec::with_capacity(12);
    let mut push = |method: &str, metric: &str, value: f64, se: Option<f64>| {
        rows.push(ResultRow {
            scenario: spec.name().into(),
            n,
            rep,
            method: method.into(),
            metric: metric.into(),
            value,
            se,
            failed: false,
        });
    };
    push("vb", "rmse_theta_star", rmse_vb, None);
    push("vb", "tv_to_limit", tv_vb, None);
    push("vb", "pred_ll", pll_vb, Some(pse_vb));
    push("vb", "ratio_num", num_vb, None);
    push("vb", "ratio_den", den, None);
    push("vb", "ratio", misspec_ratio(num_vb, den), None);
    push("mcmc", "rmse_theta_star", rmse_mcmc, None);
    push("mcmc", "tv_to_limit", tv_mcmc, None);
    push("mcmc", "pred_ll", pll_mcmc, Some(pse_mcmc));
    push("mcmc", "ratio_num", 0.0, None);
    push("mcmc", "ratio_den", den, None);
    push("mcmc", "ratio", 0.0, None);
    Ok(rows)
}

fn failed_rows(spec: ScenarioSpec, n: usize, rep: usize) -> Vec<ResultRow> {
    let mut rows = Vec::with_capacity(12);
    for method in METHODS {
        for metric in METRICS {
            rows.push(ResultRow {
                scenario: spec.name().into(),
                n,
                rep,
                method: method.into(),
                metric: metric.into(),
                value: f64::NAN,
                se: None,
                failed: true,
            });
        }
    }
    rows
}

/// Data-driven starting state for the variational fit.
fn init_state(spec: ScenarioSpec, data: &Dataset, n: usize) -> Result<MeanFieldGaussian> {
    let ys: Vec<f64> = data.rows.iter().map(|r| r.y).collect();
    let mean_y = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
    let contracting = -0.5 * (n as f64).ln();
    let (mu, ls) = match spec {
        ScenarioSpec::CountIntercept | ScenarioSpec::WellSpecified => {
            (vec![(mean_y + 1e-2).ln()], vec![contracting])
        }
        ScenarioSpec::CountRegression => {
            (vec![(mean_y + 1e-2).ln(), 0.0], vec![contracting; 2])
        }
        ScenarioSpec::MixtureT => (
            vec![
                quantile(&ys, 1.0 / 6.0),
                quantile(&ys, 0.5),
                quantile(&ys, 5.0 / 6.0),
            ],
            vec![contracting; 3],
        ),
        // the fixed-group posterior does not contract, start wider
        ScenarioSpec::PoissonGlmm => (vec![(mean_y + 1e-2).ln(), -1.0], vec![-1.5; 2]),
    };
    MeanFieldGaussian::new(mu, ls)
}

/// Runs the reference sampler: proposal scales and overdispersed starting
/// points come from the variational fit, the target is the exact
/// (marginalised where needed) unnormalised posterior.
fn sample_posterior(
    spec: ScenarioSpec,
    data: &Dataset,
    q: &MeanFieldGaussian,
    seed: u64,
    cfg: &RunConfig,
) -> Result<McmcRun> {
    let s = &cfg.mcmc;
    let prop = q.sigma();
    let mut rng = prng(derive_seed(seed, &[0x171]));
    let inits: Vec<Vec<f64>> = (0..s.chains)
        .map(|_| {
            q.mu
                .iter()
                .zip(&prop)
                .map(|(m, sd)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + 3.0 * sd * z
                })
                .collect()
        })
        .collect();
    let mcfg = McmcConfig {
        chains: s.chains,
        burn_in: s.burn_in,
        keep: s.keep,
        thin: s.thin,
        seed,
        proposal_sd: prop,
        inits,
        adapt: true,
    };
    match spec {
        ScenarioSpec::PoissonGlmm => {
            let target = glmm::marginal_target(data)?;
            metropolis_sample(target, &mcfg)
        }
        _ => {
            let model = iid_model(spec);
            metropolis_sample(
                |t: &[f64]| model.log_posterior_unnorm(t, data).expect("fixed dims"),
                &mcfg,
            )
        }
    }
}

/// Seeded draws from the fixed-group limit posterior (shared across the
/// whole scenario run).
fn sample_grouped_limit(lim: &GlmmLimit, cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let target = glmm::limit_target();
    let seed = derive_seed(cfg.base_seed, &[ScenarioSpec::PoissonGlmm.id(), 0x11a1]);
    let prop: Vec<f64> = (0..2).map(|i| lim.cov[(i, i)].sqrt()).collect();
    let mut rng = prng(derive_seed(seed, &[0x171]));
    let chains = 4;
    let inits: Vec<Vec<f64>> = (0..chains)
        .map(|_| {
            lim.theta_star
                .iter()
                .zip(&prop)
                .map(|(m, sd)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + 3.0 * sd * z
                })
                .collect()
        })
        .collect();
    let mcfg = McmcConfig {
        chains,
        burn_in: 5_000,
        keep: cfg.limit_draws.div_ceil(chains),
        thin: 1,
        seed,
        proposal_sd: prop,
        inits,
        adapt: true,
    };
    Ok(metropolis_sample(target, &mcfg)?.pooled_vec())
}

/// Mean held-out log predictive and its Monte Carlo standard error.
fn predictive_score(
    spec: ScenarioSpec,
    draws: &[Vec<f64>],
    held: &Dataset,
) -> Result<(f64, f64)> {
    match spec {
        ScenarioSpec::PoissonGlmm => {
            let gh = GaussHermite::new(21);
            mean_predictive_loglik(draws, &held.rows, |t, row| {
                glmm::predictive_loglik(t, row.y, &gh)
            })
        }
        _ => {
            let model = iid_model(spec);
            mean_predictive_loglik(draws, &held.rows, move |t, row| model.loglik_row(t, row))
        }
    }
}

/// Total variation between predictive distributions:
/// (variational vs reference, reference vs truth).
fn predictive_distance(
    spec: ScenarioSpec,
    vb_draws: &[Vec<f64>],
    exact_draws: &[Vec<f64>],
) -> Result<(f64, f64)> {
    match spec {
        ScenarioSpec::CountIntercept | ScenarioSpec::WellSpecified => {
            let cutoff = 80;
            let add = |t: &[f64], out: &mut [f64]| add_poisson_pmf(out, t[0].exp(), 1.0);
            let pv = average_pmf(vb_draws, cutoff, add);
            let pe = average_pmf(exact_draws, cutoff, add);
            let truth = match spec {
                ScenarioSpec::CountIntercept => {
                    count::neg_binomial_pmf(count::NB_SIZE, count::INTERCEPT_NB_Q, cutoff)
                }
                _ => count::poisson_pmf(count::WELL_SPECIFIED_RATE, cutoff),
            };
            Ok((tv_discrete(&pv, &pe), tv_discrete(&pe, &truth)))
        }
        ScenarioSpec::CountRegression => {
            let cutoff = 400;
            let gh = GaussHermite::new(41);
            let norm = std::f64::consts::PI.sqrt();
            let add = move |t: &[f64], out: &mut [f64]| {
                for (&nd, &w) in gh.nodes.iter().zip(&gh.weights) {
                    let z = std::f64::consts::SQRT_2 * nd;
                    add_poisson_pmf(out, (t[0] + t[1] * z).exp(), w / norm);
                }
            };
            let pv = average_pmf(vb_draws, cutoff, &add);
            let pe = average_pmf(exact_draws, cutoff, &add);
            let truth = count::regression_truth_pmf(cutoff);
            Ok((tv_discrete(&pv, &pe), tv_discrete(&pe, &truth)))
        }
        ScenarioSpec::PoissonGlmm => {
            let cutoff = 150;
            let gh = GaussHermite::new(31);
            let add = move |t: &[f64], out: &mut [f64]| {
                let pmf = glmm::model_pmf(t, out.len() - 1, &gh);
                for (o, p) in out.iter_mut().zip(&pmf) {
                    *o += p;
                }
            };
            let pv = average_pmf(vb_draws, cutoff, &add);
            let pe = average_pmf(exact_draws, cutoff, &add);
            let truth = glmm::truth_pmf(cutoff);
            Ok((tv_discrete(&pv, &pe), tv_discrete(&pe, &truth)))
        }
        ScenarioSpec::MixtureT => {
            // continuous outcome: compare density curves on a wide grid
            let (lo, hi, m) = (-20.0, 20.0, 1601usize);
            let h = (hi - lo) / m as f64;
            let grid: Vec<f64> = (0..m).map(|i| lo + (i as f64 + 0.5) * h).collect();
            let curve = |draws: &[Vec<f64>]| -> Vec<f64> {
                let mut acc = vec![0.0; m];
                for t in draws {
                    for (a, &y) in acc.iter_mut().zip(&grid) {
                        *a += mixture::marginal_logpdf(t, y).exp();
                    }
                }
                for a in &mut acc {
                    *a /= draws.len() as f64;
                }
                acc
            };
            let pv = curve(vb_draws);
            let pe = curve(exact_draws);
            let truth: Vec<f64> = grid.iter().map(|&y| mixture::truth_logpdf(y).exp()).collect();
            let tv = |a: &[f64], b: &[f64]| -> f64 {
                0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs() * h).sum::<f64>()
            };
            Ok((tv(&pv, &pe), tv(&pe, &truth)))
        }
    }
}

/// Adds `w` times the Poisson(rate) pmf over 0..out.len() into `out`,
/// by upward recurrence.
fn add_poisson_pmf(out: &mut [f64], rate: f64, w: f64) {
    let mut p = (-rate).exp();
    for (y, cell) in out.iter_mut().enumerate() {
        *cell += w * p;
        p *= rate / (y as f64 + 1.0);
    }
}

fn average_pmf(
    draws: &[Vec<f64>],
    cutoff: usize,
    add: impl Fn(&[f64], &mut [f64]),
) -> Vec<f64> {
    let mut acc = vec![0.0; cutoff + 1];
    for d in draws {
        add(d, &mut acc);
    }
    for v in &mut acc {
        *v /= draws.len() as f64;
    }
    acc
}

fn tv_discrete(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn grid_points(dim: usize) -> usize {
    match dim {
        1 => 2001,
        2 => 301,
        _ => 101,
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    for a in &mut m {
        *a /= rows.len() as f64;
    }
    m
}

fn sample_q(q: &MeanFieldGaussian, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = prng(derive_seed(seed, &[0x9d0]));
    (0..m).map(|_| q.sample(&mut rng)).collect()
}

fn sample_normal(limit: &LimitingNormal, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = prng(derive_seed(seed, &[0x9d1]));
    (0..m).map(|_| limit.sample(&mut rng)).collect()
}

/// Evenly thins pooled draws down to at most `k` rows.
fn thin_rows(rows: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    if rows.len() <= k {
        return rows.to_vec();
    }
    (0..k)
        .map(|i| rows[i * rows.len() / k].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::results_to_csv;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            ns: Some(vec![100]),
            reps: 2,
            mc_pool: 20_000,
            vb: FitConfig {
                max_steps: 4_000,
                ..FitConfig::default()
            },
            mcmc: McmcSettings {
                chains: 2,
                burn_in: 1_500,
                keep: 1_000,
                thin: 1,
            },
            pred_draws: 400,
            held_out: 300,
            limit_draws: 4_000,
            ..RunConfig::default()
        }
    }

    #[test]
    fn well_specified_run_produces_sane_rows() {
        let cfg = tiny_cfg();
        let run = run_scenario(ScenarioSpec::WellSpecified, &cfg).unwrap();
        assert_eq!(run.rows.len(), 2 * METHODS.len() * METRICS.len());
        for row in &run.rows {
            assert!(!row.failed, "{row:?}");
            assert!(row.value.is_finite(), "{row:?}");
            if row.metric == "tv_to_limit" || row.metric.starts_with("ratio") {
                assert!(
                    (0.0..=1.0).contains(&row.value),
                    "{}: {}",
                    row.metric,
                    row.value
                );
            }
        }
        // theta_star of the control sits at ln(rate) up to pool noise
        match &run.reference {
            Reference::Iid(p) => {
                assert!((p.theta_star[0] - 3.0f64.ln()).abs() < 4.0 * p.theta_star_se[0] + 1e-3);
            }
            Reference::Grouped(_) => panic!("control is iid"),
        }
        // rows serialise cleanly
        let text = results_to_csv(&run.rows).unwrap();
        assert!(text.lines().count() == run.rows.len() + 1);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = RunConfig {
            reps: 1,
            ..tiny_cfg()
        };
        let a = run_scenario(ScenarioSpec::CountIntercept, &cfg).unwrap();
        let b = run_scenarios_again(&cfg);
        assert_eq!(
            results_to_csv(&a.rows).unwrap(),
            results_to_csv(&b.rows).unwrap()
        );
    }

    fn run_scenarios_again(cfg: &RunConfig) -> ScenarioRun {
        run_scenario(ScenarioSpec::CountIntercept, cfg).unwrap()
    }

    #[test]
    fn grouped_run_emits_rows() {
        let mut cfg = tiny_cfg();
        cfg.ns = Some(vec![40]);
        cfg.reps = 1;
        cfg.limit_draws = 2_000;
        let run = run_scenario(ScenarioSpec::PoissonGlmm, &cfg).unwrap();
        assert_eq!(run.rows.len(), METHODS.len() * METRICS.len());
        assert!(run.rows.iter().all(|r| !r.failed && r.value.is_finite()));
        match &run.reference {
            Reference::Grouped(lim) => assert_eq!(lim.theta_star.len(), 2),
            Reference::Iid(_) => panic!("grouped scenario"),
        }
    }

    #[test]
    fn bad_n_for_grouped_scenario_propagates_config_error() {
        let mut cfg = tiny_cfg();
        cfg.ns = Some(vec![25]);
        assert!(matches!(
            run_scenario(ScenarioSpec::PoissonGlmm, &cfg),
            Err(Error::Config(_))
        ));
    }
}
