//! Count scenarios: intercept-only and two-covariate Poisson regressions
//! fitted to overdispersed (negative binomial) truths, plus the
//! well-specified Poisson control.
//!
//! Both misspecified variants keep the truth's conditional mean inside the
//! Poisson mean family, so the pseudo-true parameter is available in closed
//! form, as are the curvature and score-covariance matrices. Those closed
//! forms are the calibration targets the numerical pipeline is tested
//! against.

use nalgebra::DMatrix;
use rand_distr::{Distribution as _, StandardNormal};

use crate::dist::Dist;
use crate::model::{ParametricModel, Row};
use crate::numeric::gh::GaussHermite;
use crate::numeric::special::{ln_gamma, logistic};
use crate::population::TrueGenerator;

/// Negative binomial size parameter shared by the misspecified truths.
pub const NB_SIZE: f64 = 5.0;
/// Success probability of the intercept truth; mean r q / (1 - q) = 2.
pub const INTERCEPT_NB_Q: f64 = 2.0 / 7.0;
/// Log-odds coefficients of the regression truth on x = (1, z).
pub const REGRESSION_COEF: [f64; 2] = [0.3, -0.5];
/// Rate of the well-specified Poisson truth.
pub const WELL_SPECIFIED_RATE: f64 = 3.0;

/// Intercept truth: y ~ NegBinomial(5, 2/7), mean 2, variance 2.8.
pub fn intercept_truth() -> TrueGenerator {
    let nb = Dist::neg_binomial(NB_SIZE, INTERCEPT_NB_Q).expect("fixed params");
    let nb2 = nb.clone();
    TrueGenerator::new(move |rng| Row::obs(nb.sample(rng).expect("valid params")))
        .with_logpdf0(move |row| nb2.log_density(row.y).expect("count support"))
}

/// Intercept-only Poisson model: log rate is the single parameter.
pub fn intercept_model() -> ParametricModel {
    ParametricModel::new(
        1,
        |t, row| row.y * t[0] - t[0].exp() - ln_gamma(row.y + 1.0),
        |t, row, out| out[0] += row.y - t[0].exp(),
    )
}

/// Closed-form population quantities of the intercept scenario:
/// (theta_star, curvature v, score covariance s, sandwich).
///
/// The Poisson score is y - e^t, so theta_star = ln E[y] = ln 2,
/// v = e^{theta_star} = 2, s = Var[y] = 2 + 4/5 = 2.8, sandwich = s/v^2.
pub fn intercept_analytic() -> (f64, f64, f64, f64) {
    let mean = NB_SIZE * INTERCEPT_NB_Q / (1.0 - INTERCEPT_NB_Q);
    let var = mean + mean * mean / NB_SIZE;
    (mean.ln(), mean, var, var / (mean * mean))
}

/// Regression truth: z ~ N(0,1), y | z ~ NegBinomial(5, logistic(0.3 - 0.5 z)).
/// The conditional mean is 5 e^{0.3 - 0.5 z}. `logpdf0` is conditional on z,
/// matching the conditional likelihood the model assigns.
pub fn regression_truth() -> TrueGenerator {
    TrueGenerator::new(move |rng| {
        let z: f64 = StandardNormal.sample(rng);
        let q = logistic(REGRESSION_COEF[0] + REGRESSION_COEF[1] * z);
        let y = Dist::neg_binomial(NB_SIZE, q)
            .expect("q in (0,1)")
            .sample(rng)
            .expect("valid params");
        Row {
            x: vec![1.0, z],
            y,
            group: None,
        }
    })
    .with_logpdf0(|row| {
        let q = logistic(REGRESSION_COEF[0] + REGRESSION_COEF[1] * row.x[1]);
        Dist::neg_binomial(NB_SIZE, q)
            .expect("q in (0,1)")
            .log_density(row.y)
            .expect("count support")
    })
}

/// Poisson regression with log link on x = (1, z).
pub fn regression_model() -> ParametricModel {
    ParametricModel::new(
        2,
        |t, row| {
            let eta = t[0] + t[1] * row.x[1];
            row.y * eta - eta.exp() - ln_gamma(row.y + 1.0)
        },
        |t, row, out| {
            let resid = row.y - (t[0] + t[1] * row.x[1]).exp();
            out[0] += resid;
            out[1] += resid * row.x[1];
        },
    )
}

/// Pseudo-true regression coefficients. The truth's conditional mean is
/// 5 e^{0.3 - 0.5 z} = e^{(0.3 + ln 5) - 0.5 z}, which the Poisson mean
/// family matches pointwise, so the score equation is solved exactly at
/// (0.3 + ln 5, -0.5) regardless of the covariate law.
pub fn regression_theta_star() -> [f64; 2] {
    [REGRESSION_COEF[0] + NB_SIZE.ln(), REGRESSION_COEF[1]]
}

/// Closed-form curvature of the regression scenario:
/// v = E[e^{a + b z} x x^T] with (a, b) the pseudo-true coefficients.
/// Normal moment identities give E[e^{bz} (1, z, z^2)] =
/// e^{b^2/2} (1, b, 1 + b^2).
pub fn regression_curvature() -> DMatrix<f64> {
    let [a, b] = regression_theta_star();
    let c = (a + 0.5 * b * b).exp();
    DMatrix::from_row_slice(2, 2, &[c, c * b, c * b, c * (1.0 + b * b)])
}

/// Closed-form score covariance of the regression scenario:
/// s = v + (1/r) E[e^{2(a + b z)} x x^T], the extra term being the
/// overdispersion E[mu^2/r x x^T] with E[e^{2bz} (1, z, z^2)] =
/// e^{2 b^2} (1, 2b, 1 + 4 b^2).
pub fn regression_score_cov() -> DMatrix<f64> {
    let [a, b] = regression_theta_star();
    let c = (2.0 * a + 2.0 * b * b).exp() / NB_SIZE;
    let extra = DMatrix::from_row_slice(
        2,
        2,
        &[c, c * 2.0 * b, c * 2.0 * b, c * (1.0 + 4.0 * b * b)],
    );
    regression_curvature() + extra
}

/// Well-specified control: Poisson(3) truth under the intercept model,
/// theta_star = ln 3 and s = v = 3.
pub fn well_specified_truth() -> TrueGenerator {
    let d = Dist::poisson(WELL_SPECIFIED_RATE).expect("fixed rate");
    let d2 = d.clone();
    TrueGenerator::new(move |rng| Row::obs(d.sample(rng).expect("valid params")))
        .with_logpdf0(move |row| d2.log_density(row.y).expect("count support"))
}

/// Poisson pmf over 0..=cutoff for a fixed rate.
pub fn poisson_pmf(rate: f64, cutoff: usize) -> Vec<f64> {
    let d = Dist::poisson(rate).expect("positive rate");
    (0..=cutoff)
        .map(|y| d.log_density(y as f64).expect("count support").exp())
        .collect()
}

/// Negative binomial pmf over 0..=cutoff.
pub fn neg_binomial_pmf(r: f64, q: f64, cutoff: usize) -> Vec<f64> {
    let d = Dist::neg_binomial(r, q).expect("valid params");
    (0..=cutoff)
        .map(|y| d.log_density(y as f64).expect("count support").exp())
        .collect()
}

/// Marginal (over z ~ N(0,1)) pmf of the regression truth, by quadrature.
pub fn regression_truth_pmf(cutoff: usize) -> Vec<f64> {
    let gh = GaussHermite::new(41);
    let mut pmf = vec![0.0; cutoff + 1];
    let norm = std::f64::consts::PI.sqrt();
    for (&t, &w) in gh.nodes.iter().zip(&gh.weights) {
        let z = std::f64::consts::SQRT_2 * t;
        let q = logistic(REGRESSION_COEF[0] + REGRESSION_COEF[1] * z);
        let cond = neg_binomial_pmf(NB_SIZE, q, cutoff);
        for (p, c) in pmf.iter_mut().zip(&cond) {
            *p += w / norm * c;
        }
    }
    pmf
}

/// Marginal (over z ~ N(0,1)) pmf of the fitted Poisson regression at a
/// fixed coefficient vector, by quadrature.
pub fn regression_model_pmf(theta: &[f64], cutoff: usize) -> Vec<f64> {
    let gh = GaussHermite::new(41);
    let mut pmf = vec![0.0; cutoff + 1];
    let norm = std::f64::consts::PI.sqrt();
    for (&t, &w) in gh.nodes.iter().zip(&gh.weights) {
        let z = std::f64::consts::SQRT_2 * t;
        let rate = (theta[0] + theta[1] * z).exp();
        let cond = poisson_pmf(rate, cutoff);
        for (p, c) in pmf.iter_mut().zip(&cond) {
            *p += w / norm * c;
        }
    }
    pmf
}
