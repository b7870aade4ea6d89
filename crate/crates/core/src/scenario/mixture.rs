//! Location mixture scenario: the truth is an equal-weight mixture of three
//! unit-variance Gaussians, the model an equal-weight mixture of three
//! unit-scale Student-t(4) components whose locations are the parameters.
//!
//! Component labels are interchangeable, so everything downstream works on
//! the sorted parameterisation. The per-row latent is the component index,
//! and because the local family is the full categorical, the marginalised
//! objective is reproduced exactly by the latent machinery.

use crate::dist::Dist;
use crate::model::{LatentVarModel, LocalKind, ParametricModel, Row};
use crate::population::TrueGenerator;
use crate::vb::MeanFieldGaussian;

pub const COMPONENTS: usize = 3;
pub const TRUTH_CENTERS: [f64; 3] = [-4.0, 0.0, 4.0];
pub const TRUTH_SD: f64 = 1.0;
pub const MODEL_DF: f64 = 4.0;

/// log normalising constant of the unit-scale t(4) density:
/// ln Gamma(2.5) - ln Gamma(2) - ln sqrt(4 pi).
const T4_LOG_NORM: f64 = -0.9808292530117262;
const LOG_WEIGHT: f64 = -1.0986122886681098; // ln(1/3)
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Unit-scale Student-t(4) log density at displacement u.
pub fn log_t4(u: f64) -> f64 {
    T4_LOG_NORM - 2.5 * (1.0 + u * u / 4.0).ln()
}

/// Derivative of [`log_t4`] with respect to the component location,
/// evaluated at u = y - location.
pub fn dcenter_log_t4(u: f64) -> f64 {
    5.0 * u / (4.0 + u * u)
}

/// Marginal model log density at one observation: equal-weight t(4) mixture
/// with locations `theta`.
pub fn marginal_logpdf(theta: &[f64], y: f64) -> f64 {
    let mut vals = [0.0f64; COMPONENTS];
    for (v, c) in vals.iter_mut().zip(theta) {
        *v = LOG_WEIGHT + log_t4(y - c);
    }
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Truth log density: equal-weight Gaussian mixture.
pub fn truth_logpdf(y: f64) -> f64 {
    let mut acc = 0.0;
    for c in TRUTH_CENTERS {
        let u = (y - c) / TRUTH_SD;
        acc += (-0.5 * u * u).exp();
    }
    (acc / COMPONENTS as f64).ln() - HALF_LN_2PI - TRUTH_SD.ln()
}

pub fn truth() -> TrueGenerator {
    let comp = Dist::categorical(vec![1.0 / 3.0; COMPONENTS]).expect("fixed weights");
    TrueGenerator::new(move |rng| {
        let k = comp.sample(rng).expect("valid weights") as usize;
        let g = Dist::gaussian(TRUTH_CENTERS[k], TRUTH_SD).expect("fixed params");
        Row::obs(g.sample(rng).expect("valid params"))
    })
    .with_logpdf0(|row| truth_logpdf(row.y))
}

/// Marginalised model over component indicators; this is what the
/// population quantities and the reference sampler use.
pub fn marginal_model() -> ParametricModel {
    ParametricModel::new(
        COMPONENTS,
        |t, row| marginal_logpdf(t, row.y),
        |t, row, out| {
            let mut vals = [0.0f64; COMPONENTS];
            for (v, c) in vals.iter_mut().zip(t) {
                *v = LOG_WEIGHT + log_t4(row.y - c);
            }
            let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = vals.iter().map(|v| (v - m).exp()).sum();
            for k in 0..COMPONENTS {
                let w = (vals[k] - m).exp() / total;
                out[k] += w * dcenter_log_t4(row.y - t[k]);
            }
        },
    )
}

/// Same model with the component indicator kept explicit as a categorical
/// local variable (one per row).
pub fn latent_model() -> LatentVarModel {
    LatentVarModel::new(
        COMPONENTS,
        LocalKind::Categorical(COMPONENTS),
        |t, z, _unit, rows| {
            let k = z.index();
            LOG_WEIGHT + log_t4(rows[0].y - t[k])
        },
        |t, z, _unit, rows, out| {
            let k = z.index();
            out[k] += dcenter_log_t4(rows[0].y - t[k]);
        },
    )
}

/// Ascending-location representative of the label orbit.
pub fn sort_canonical(theta: &mut [f64]) {
    theta.sort_by(|a, b| a.partial_cmp(b).expect("finite locations"));
}

/// Sorts the factor means and carries the matching log scales along.
pub fn canonical_q(q: &MeanFieldGaussian) -> MeanFieldGaussian {
    let mut idx: Vec<usize> = (0..q.mu.len()).collect();
    idx.sort_by(|&a, &b| q.mu[a].partial_cmp(&q.mu[b]).expect("finite means"));
    MeanFieldGaussian::new(
        idx.iter().map(|&i| q.mu[i]).collect(),
        idx.iter().map(|&i| q.log_sigma[i]).collect(),
    )
    .expect("permutation of a valid state")
}
