//! Grouped-count scenario: ten groups with fixed log-mean offsets, counts
//! overdispersed (negative binomial) in truth, fitted by a Poisson model
//! with a Gaussian random intercept per group.
//!
//! The group offsets are baked-in constants (drawn once from a fixed seed),
//! so the number of groups never grows: as observations per group increase,
//! the posterior of theta = (beta, log sigma_u) approaches a fixed, non
//! degenerate limit instead of contracting. That limit is the posterior one
//! would compute if the ten offsets were observed directly, and its
//! likelihood maximiser (the profile pseudo-truth) has a closed form.

use nalgebra::DMatrix;
use rand_distr::{Distribution as _, StandardNormal};

use crate::dist::Dist;
use crate::error::Error;
use crate::model::{gaussian_prior, Dataset, LatentVarModel, LocalKind, Row};
use crate::numeric::gh::GaussHermite;
use crate::numeric::rng::{derive_seed, prng};
use crate::numeric::special::ln_gamma;
use crate::population::TrueGenerator;
use crate::Result;

pub const GROUPS: usize = 10;
pub const INTERCEPT: f64 = 0.5;
pub const EFFECT_SD: f64 = 0.5;
/// Seed the ten group offsets are drawn from; part of the scenario
/// definition, never varied.
pub const EFFECT_SEED: u64 = 0x9e77;
pub const NB_SIZE: f64 = 5.0;

const LN_2PI: f64 = 1.8378770664093453;

/// The ten fixed group offsets u_g ~ N(0, EFFECT_SD^2).
pub fn group_effects() -> [f64; GROUPS] {
    let mut rng = prng(derive_seed(EFFECT_SEED, &[0x6ef0]));
    let mut u = [0.0; GROUPS];
    for v in u.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = EFFECT_SD * z;
    }
    u
}

/// Per-group log means v_g = intercept + u_g of the truth.
pub fn group_log_means() -> [f64; GROUPS] {
    let mut v = group_effects();
    for x in v.iter_mut() {
        *x += INTERCEPT;
    }
    v
}

fn nb_q_for_mean(mean: f64) -> f64 {
    mean / (mean + NB_SIZE)
}

/// Balanced training data: n/GROUPS counts per group, overdispersed around
/// the fixed group means. `n` must be a positive multiple of GROUPS.
pub fn generate_data(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n % GROUPS != 0 {
        return Err(Error::Config(format!(
            "grouped scenario needs n to be a positive multiple of {GROUPS}, got {n}"
        )));
    }
    let per = n / GROUPS;
    let mut rng = prng(derive_seed(seed, &[0x6133]));
    let mut rows = Vec::with_capacity(n);
    for (g, v) in group_log_means().iter().enumerate() {
        let d = Dist::neg_binomial(NB_SIZE, nb_q_for_mean(v.exp()))?;
        for _ in 0..per {
            rows.push(Row {
                x: Vec::new(),
                y: d.sample(&mut rng)?,
                group: Some(g),
            });
        }
    }
    Ok(Dataset::new(rows))
}

/// One observation from a brand-new group: u ~ N(0, EFFECT_SD^2), then an
/// overdispersed count with mean e^{intercept + u}. This is the relevant
/// truth for held-out prediction.
pub fn fresh_group_truth() -> TrueGenerator {
    TrueGenerator::new(|rng| {
        let z: f64 = StandardNormal.sample(rng);
        let mean = (INTERCEPT + EFFECT_SD * z).exp();
        let d = Dist::neg_binomial(NB_SIZE, nb_q_for_mean(mean)).expect("positive mean");
        Row::obs(d.sample(rng).expect("valid params"))
    })
    .with_logpdf0(|row| {
        let gh = GaussHermite::new(41);
        let norm = std::f64::consts::PI.sqrt();
        let p: f64 = gh
            .nodes
            .iter()
            .zip(&gh.weights)
            .map(|(&t, &w)| {
                let u = EFFECT_SD * std::f64::consts::SQRT_2 * t;
                let mean = (INTERCEPT + u).exp();
                let d = Dist::neg_binomial(NB_SIZE, nb_q_for_mean(mean)).expect("positive mean");
                w / norm * d.log_density(row.y).expect("count support").exp()
            })
            .sum();
        p.ln()
    })
}

/// Sufficient statistics of one unit under the Poisson intercept model.
#[derive(Debug, Clone, Copy)]
pub struct UnitStats {
    pub n: f64,
    pub sum_y: f64,
    pub sum_lgamma: f64,
}

impl UnitStats {
    pub fn of(rows: &[Row]) -> Self {
        UnitStats {
            n: rows.len() as f64,
            sum_y: rows.iter().map(|r| r.y).sum(),
            sum_lgamma: rows.iter().map(|r| ln_gamma(r.y + 1.0)).sum(),
        }
    }
}

pub fn unit_stats(data: &Dataset) -> Result<Vec<UnitStats>> {
    Ok(data.units()?.iter().map(|u| UnitStats::of(u)).collect())
}

/// The fitted model: y_ij ~ Poisson(e^{beta + b_g}), b_g ~ N(0, e^{2 s}),
/// theta = (beta, s). Unit statistics are cached at construction, keyed by
/// unit id, so each joint evaluation is O(1) in the group size.
pub fn model(data: &Dataset) -> Result<LatentVarModel> {
    let stats = unit_stats(data)?;
    let stats2 = stats.clone();
    Ok(LatentVarModel::new(
        2,
        LocalKind::ContinuousScalar,
        move |t, z, unit, _rows| {
            let st = &stats[unit];
            let b = z.real();
            let eta = t[0] + b;
            st.sum_y * eta - st.n * eta.exp() - st.sum_lgamma - t[1] - 0.5 * LN_2PI
                - 0.5 * b * b * (-2.0 * t[1]).exp()
        },
        move |t, z, unit, _rows, out| {
            let st = &stats2[unit];
            let b = z.real();
            out[0] += st.sum_y - st.n * (t[0] + b).exp();
            out[1] += b * b * (-2.0 * t[1]).exp() - 1.0;
        },
    ))
}

/// Exact (up to quadrature) marginal log likelihood of one unit:
/// log integral over b of the joint, by mode-centred Gauss-Hermite.
///
/// The integrand is strictly log-concave in b, so Newton from zero with a
/// step cap always finds the mode.
pub fn marginal_loglik_unit(theta: &[f64], st: &UnitStats, gh: &GaussHermite) -> f64 {
    let (beta, s) = (theta[0], theta[1]);
    let prec0 = (-2.0 * s).exp();
    let mut b = 0.0f64;
    for _ in 0..100 {
        let ev = st.n * (beta + b).exp();
        let g = st.sum_y - ev - b * prec0;
        let step = (g / (ev + prec0)).clamp(-2.0, 2.0);
        b += step;
        if step.abs() < 1e-13 {
            break;
        }
    }
    let scale = 1.0 / (st.n * (beta + b).exp() + prec0).sqrt();
    let h = |bb: f64| {
        let eta = beta + bb;
        st.sum_y * eta - st.n * eta.exp() - st.sum_lgamma - s - 0.5 * LN_2PI
            - 0.5 * bb * bb * prec0
    };
    let mut best = f64::NEG_INFINITY;
    let terms: Vec<f64> = gh
        .nodes
        .iter()
        .zip(&gh.weights)
        .map(|(&t, &w)| {
            let val = w.ln() + t * t + h(b + std::f64::consts::SQRT_2 * scale * t);
            best = best.max(val);
            val
        })
        .collect();
    let sum: f64 = terms.iter().map(|v| (v - best).exp()).sum();
    best + sum.ln() + (std::f64::consts::SQRT_2 * scale).ln()
}

/// Unnormalised log posterior of theta with the random intercepts
/// marginalised out; shares the model's prior.
pub fn marginal_target(data: &Dataset) -> Result<impl Fn(&[f64]) -> f64 + Send + Sync> {
    let stats = unit_stats(data)?;
    let (prior, _) = gaussian_prior(0.0, 10.0);
    let gh = GaussHermite::new(31);
    Ok(move |t: &[f64]| {
        let mut acc = prior(t);
        for st in &stats {
            acc += marginal_loglik_unit(t, st, &gh);
        }
        acc
    })
}

/// Unnormalised log density of the limit posterior: the posterior of theta
/// if the ten group log-means were observed exactly.
pub fn limit_target() -> impl Fn(&[f64]) -> f64 + Send + Sync {
    let v = group_log_means();
    let (prior, _) = gaussian_prior(0.0, 10.0);
    move |t: &[f64]| {
        let (beta, s) = (t[0], t[1]);
        let prec = (-2.0 * s).exp();
        let mut acc = prior(t);
        for vg in v {
            let d = vg - beta;
            acc += -s - 0.5 * LN_2PI - 0.5 * d * d * prec;
        }
        acc
    }
}

/// Closed-form description of the posterior limit.
#[derive(Debug, Clone)]
pub struct GlmmLimit {
    /// Profile pseudo-truth: (mean of v_g, half log of their mean squared
    /// deviation).
    pub theta_star: Vec<f64>,
    /// The fixed group log-means v_g.
    pub log_means: Vec<f64>,
    /// Curvature of the limit log likelihood at theta_star:
    /// diag(G e^{-2 s*}, 2 G).
    pub curvature: DMatrix<f64>,
    /// Inverse curvature, the Gaussian-approximation covariance of the
    /// limit; it does not shrink with n.
    pub cov: DMatrix<f64>,
}

impl GlmmLimit {
    pub fn compute() -> Self {
        let v = group_log_means();
        let g = GROUPS as f64;
        let mean = v.iter().sum::<f64>() / g;
        let sig2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g;
        let theta_star = vec![mean, 0.5 * sig2.ln()];
        let curvature = DMatrix::from_row_slice(2, 2, &[g / sig2, 0.0, 0.0, 2.0 * g]);
        let cov = DMatrix::from_row_slice(2, 2, &[sig2 / g, 0.0, 0.0, 1.0 / (2.0 * g)]);
        GlmmLimit {
            theta_star,
            log_means: v.to_vec(),
            curvature,
            cov,
        }
    }
}

/// Marginal pmf over 0..=cutoff of one observation from a new group under
/// the fitted model at theta, by quadrature over the random intercept.
pub fn model_pmf(theta: &[f64], cutoff: usize, gh: &GaussHermite) -> Vec<f64> {
    let norm = std::f64::consts::PI.sqrt();
    let mut pmf = vec![0.0; cutoff + 1];
    for (&t, &w) in gh.nodes.iter().zip(&gh.weights) {
        let b = theta[1].exp() * std::f64::consts::SQRT_2 * t;
        let rate = (theta[0] + b).exp();
        // Poisson pmf by upward recurrence, no special functions needed.
        let mut p = (-rate).exp();
        for (y, cell) in pmf.iter_mut().enumerate() {
            *cell += w / norm * p;
            p *= rate / (y as f64 + 1.0);
        }
    }
    pmf
}

/// Marginal pmf of the truth for a new group, by quadrature over the group
/// effect.
pub fn truth_pmf(cutoff: usize) -> Vec<f64> {
    let gh = GaussHermite::new(41);
    let norm = std::f64::consts::PI.sqrt();
    let mut pmf = vec![0.0; cutoff + 1];
    for (&t, &w) in gh.nodes.iter().zip(&gh.weights) {
        let mean = (INTERCEPT + EFFECT_SD * std::f64::consts::SQRT_2 * t).exp();
        let q = nb_q_for_mean(mean);
        // NB(r, q) pmf by upward recurrence.
        let mut p = (1.0 - q).powf(NB_SIZE);
        for (y, cell) in pmf.iter_mut().enumerate() {
            *cell += w / norm * p;
            p *= q * (NB_SIZE + y as f64) / (y as f64 + 1.0);
        }
    }
    pmf
}

/// Log predictive density of one held-out count from a new group, using the
/// same adaptive quadrature as the training marginal.
pub fn predictive_loglik(theta: &[f64], y: f64, gh: &GaussHermite) -> f64 {
    let st = UnitStats {
        n: 1.0,
        sum_y: y,
        sum_lgamma: ln_gamma(y + 1.0),
    };
    marginal_loglik_unit(theta, &st, gh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::optim::nelder_mead;

    #[test]
    fn effects_are_fixed_constants() {
        let a = group_effects();
        let b = group_effects();
        assert_eq!(a, b);
        assert!(a.iter().all(|u| u.abs() < 3.0 * EFFECT_SD));
        // not degenerate: the offsets actually spread out
        let spread = a.iter().map(|u| u * u).sum::<f64>() / GROUPS as f64;
        assert!(spread > 0.01, "spread {spread}");
    }

    #[test]
    fn data_shape_and_determinism() {
        assert!(matches!(generate_data(25, 1), Err(Error::Config(_))));
        let d = generate_data(40, 9).unwrap();
        let units = d.units().unwrap();
        assert_eq!(units.len(), GROUPS);
        assert!(units.iter().all(|u| u.len() == 4));
        assert_eq!(d.rows, generate_data(40, 9).unwrap().rows);
    }

    // Adaptive quadrature against a plain dense midpoint integral.
    #[test]
    fn unit_marginal_matches_brute_force() {
        let gh = GaussHermite::new(31);
        let rows: Vec<Row> = [3.0, 1.0, 6.0, 2.0]
            .iter()
            .map(|&y| Row {
                x: Vec::new(),
                y,
                group: Some(0),
            })
            .collect();
        let st = UnitStats::of(&rows);
        for theta in [[0.4, -0.7], [1.2, 0.1], [-0.5, -1.5]] {
            let got = marginal_loglik_unit(&theta, &st, &gh);
            let (lo, hi, m) = (-12.0f64, 12.0f64, 48_000usize);
            let step = (hi - lo) / m as f64;
            let h = |b: f64| {
                let eta = theta[0] + b;
                st.sum_y * eta - st.n * eta.exp() - st.sum_lgamma - theta[1] - 0.5 * LN_2PI
                    - 0.5 * b * b * (-2.0 * theta[1]).exp()
            };
            let vals: Vec<f64> = (0..m).map(|i| h(lo + (i as f64 + 0.5) * step)).collect();
            let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let want =
                best + vals.iter().map(|v| (v - best).exp()).sum::<f64>().ln() + step.ln();
            assert!((got - want).abs() < 1e-7, "{got} vs {want} at {theta:?}");
        }
    }

    #[test]
    fn limit_target_peaks_at_profile_truth() {
        let lim = GlmmLimit::compute();
        let target = limit_target();
        let res = nelder_mead(|t| -target(t), &[0.0, 0.0], 0.5, 1e-10, 2_000);
        // weak prior nudges the optimum a hair off the closed form
        assert!((res.x[0] - lim.theta_star[0]).abs() < 5e-3, "{:?}", res.x);
        assert!((res.x[1] - lim.theta_star[1]).abs() < 5e-3, "{:?}", res.x);
    }

    // With many observations per group the marginalised posterior mode
    // approaches the profile pseudo-truth.
    #[test]
    fn marginal_mode_approaches_limit() {
        let lim = GlmmLimit::compute();
        let data = generate_data(20_000, 3).unwrap();
        let target = marginal_target(&data).unwrap();
        let res = nelder_mead(|t| -target(t), &lim.theta_star, 0.3, 1e-9, 2_000);
        assert!(
            (res.x[0] - lim.theta_star[0]).abs() < 0.05,
            "{:?} vs {:?}",
            res.x,
            lim.theta_star
        );
        assert!(
            (res.x[1] - lim.theta_star[1]).abs() < 0.08,
            "{:?} vs {:?}",
            res.x,
            lim.theta_star
        );
    }

    #[test]
    fn pmfs_are_normalised() {
        let gh = GaussHermite::new(31);
        let m: f64 = model_pmf(&[0.6, -0.6], 200, &gh).iter().sum();
        assert!((m - 1.0).abs() < 1e-8, "model mass {m}");
        let t: f64 = truth_pmf(300).iter().sum();
        assert!((t - 1.0).abs() < 1e-6, "truth mass {t}");
    }

    // Two independent quadrature routes to the same predictive value.
    #[test]
    fn predictive_consistent_with_pmf() {
        let gh = GaussHermite::new(31);
        let theta = [0.55, -0.8];
        let pmf = model_pmf(&theta, 60, &gh);
        for y in [0usize, 1, 3, 7, 15] {
            let a = predictive_loglik(&theta, y as f64, &gh);
            let b = pmf[y].ln();
            assert!((a - b).abs() < 1e-6, "y={y}: {a} vs {b}");
        }
    }

    #[test]
    fn truth_logpdf0_matches_pmf_table() {
        let truth = fresh_group_truth();
        let table = truth_pmf(50);
        for y in [0usize, 2, 5, 11] {
            let row = Row::obs(y as f64);
            let got = truth.logpdf0(&row).unwrap();
            assert!((got - table[y].ln()).abs() < 1e-9);
        }
    }
}
