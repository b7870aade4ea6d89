//! Scalar distribution kinds used by both the data-generating truths and the
//! fitted models: log-densities, seeded samplers, and scores.
//!
//! Parameters are stored on their natural scale (rates, probabilities,
//! scales) and validated there, but [`Dist::score`] differentiates on the
//! unconstrained scale every optimiser in this crate works on: `log` for
//! positive parameters, `logit` for probabilities, identity for locations.
//! The per-kind layout is documented on [`Dist::score`].

use crate::error::Error;
use crate::numeric::rng::Prng;
use crate::numeric::special::{digamma, ln_gamma};
use crate::Result;
use rand::Rng;
use rand_distr::{Distribution as _, Gamma, StandardNormal, StudentT as StudentTSampler};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_74;

/// A scalar distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    /// Poisson with rate `lambda > 0`; support 0, 1, 2, ...
    Poisson { rate: f64 },
    /// Negative binomial with size `r > 0` and success probability
    /// `q` in (0, 1): pmf(k) = C(k+r-1, k) q^k (1-q)^r, mean r q / (1 - q).
    NegBinomial { r: f64, q: f64 },
    /// Normal with mean and standard deviation `sd > 0`.
    Gaussian { mean: f64, sd: f64 },
    /// Location-scale Student t with `scale > 0` and degrees of freedom
    /// `df > 0`.
    StudentT { loc: f64, scale: f64, df: f64 },
    /// Bernoulli with success probability `p` in [0, 1]; support {0, 1}.
    Bernoulli { p: f64 },
    /// Categorical over indices 0..k with the given probabilities
    /// (non-negative, summing to 1 within 1e-9).
    Categorical { probs: Vec<f64> },
}

impl Dist {
    pub fn poisson(rate: f64) -> Result<Self> {
        let d = Dist::Poisson { rate };
        d.validate()?;
        Ok(d)
    }

    pub fn neg_binomial(r: f64, q: f64) -> Result<Self> {
        let d = Dist::NegBinomial { r, q };
        d.validate()?;
        Ok(d)
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        let d = Dist::Gaussian { mean, sd };
        d.validate()?;
        Ok(d)
    }

    pub fn student_t(loc: f64, scale: f64, df: f64) -> Result<Self> {
        let d = Dist::StudentT { loc, scale, df };
        d.validate()?;
        Ok(d)
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        let d = Dist::Bernoulli { p };
        d.validate()?;
        Ok(d)
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self> {
        let d = Dist::Categorical { probs };
        d.validate()?;
        Ok(d)
    }

    /// Checks the parameter domain for this kind.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ParamDomain(msg));
        match self {
            Dist::Poisson { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return fail(format!("Poisson rate must be positive, got {rate}"));
                }
            }
            Dist::NegBinomial { r, q } => {
                if !(r.is_finite() && *r > 0.0) {
                    return fail(format!("NegBinomial size must be positive, got {r}"));
                }
                if !(q.is_finite() && *q > 0.0 && *q < 1.0) {
                    return fail(format!("NegBinomial q must be in (0, 1), got {q}"));
                }
            }
            Dist::Gaussian { mean, sd } => {
                if !mean.is_finite() || !(sd.is_finite() && *sd > 0.0) {
                    return fail(format!("Gaussian needs finite mean and sd > 0, got ({mean}, {sd})"));
                }
            }
            Dist::StudentT { loc, scale, df } => {
                if !loc.is_finite()
                    || !(scale.is_finite() && *scale > 0.0)
                    || !(df.is_finite() && *df > 0.0)
                {
                    return fail(format!(
                        "StudentT needs finite loc, scale > 0, df > 0, got ({loc}, {scale}, {df})"
                    ));
                }
            }
            Dist::Bernoulli { p } => {
                if !(p.is_finite() && (0.0..=1.0).contains(p)) {
                    return fail(format!("Bernoulli p must be in [0, 1], got {p}"));
                }
            }
            Dist::Categorical { probs } => {
                if probs.is_empty() {
                    return fail("Categorical needs at least one category".into());
                }
                if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return fail("Categorical probabilities must be non-negative".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return fail(format!("Categorical probabilities sum to {total}, not 1"));
                }
            }
        }
        Ok(())
    }

    /// Log density (or log pmf) at `x`. Points outside the support give
    /// `-inf`; invalid parameters give a parameter-domain error.
    pub fn log_density(&self, x: f64) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            Dist::Poisson { rate } => {
                if !is_count(x) {
                    return Ok(f64::NEG_INFINITY);
                }
                x * rate.ln() - rate - ln_gamma(x + 1.0)
            }
            Dist::NegBinomial { r, q } => {
                if !is_count(x) {
                    return Ok(f64::NEG_INFINITY);
                }
                ln_gamma(x + r) - ln_gamma(*r) - ln_gamma(x + 1.0)
                    + x * q.ln()
                    + r * (1.0 - q).ln()
            }
            Dist::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                -HALF_LN_2PI - sd.ln() - 0.5 * z * z
            }
            Dist::StudentT { loc, scale, df } => {
                let z = (x - loc) / scale;
                ln_gamma((df + 1.0) / 2.0)
                    - ln_gamma(df / 2.0)
                    - 0.5 * (df * std::f64::consts::PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (1.0 + z * z / df).ln()
            }
            Dist::Bernoulli { p } => {
                if x == 1.0 {
                    p.ln()
                } else if x == 0.0 {
                    (1.0 - p).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Dist::Categorical { probs } => {
                if !is_count(x) || (x as usize) >= probs.len() {
                    f64::NEG_INFINITY
                } else {
                    probs[x as usize].ln()
                }
            }
        })
    }

    /// Draws one observation. Deterministic given the generator state.
    pub fn sample(&self, rng: &mut Prng) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            Dist::Poisson { rate } => sample_poisson(*rate, rng) as f64,
            Dist::NegBinomial { r, q } => {
                // Gamma-Poisson mixture: lambda ~ Gamma(r, q/(1-q)),
                // k | lambda ~ Poisson(lambda) has the target pmf.
                let gamma = Gamma::new(*r, q / (1.0 - q)).expect("validated params");
                let lambda = gamma.sample(rng);
                sample_poisson(lambda, rng) as f64
            }
            Dist::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Dist::StudentT { loc, scale, df } => {
                let t = StudentTSampler::new(*df).expect("validated params");
                loc + scale * t.sample(rng)
            }
            Dist::Bernoulli { p } => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            Dist::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                idx as f64
            }
        })
    }

    /// Gradient of the log density with respect to the unconstrained
    /// parameter vector of this kind:
    ///
    /// * Poisson: `[log rate]`
    /// * NegBinomial: `[log r, logit q]`
    /// * Gaussian: `[mean, log sd]`
    /// * StudentT: `[loc, log scale, log df]`
    /// * Bernoulli: `[logit p]`
    ///
    /// Categorical has no unconstrained parameterisation here and reports an
    /// unsupported operation, as do points outside the support.
    pub fn score(&self, x: f64) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            Dist::Poisson { rate } => {
                require_count(x, "Poisson score")?;
                Ok(vec![x - rate])
            }
            Dist::NegBinomial { r, q } => {
                require_count(x, "NegBinomial score")?;
                let d_r = digamma(x + r) - digamma(*r) + (1.0 - q).ln();
                Ok(vec![r * d_r, x * (1.0 - q) - r * q])
            }
            Dist::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                Ok(vec![z / sd, z * z - 1.0])
            }
            Dist::StudentT { loc, scale, df } => {
                let z = (x - loc) / scale;
                let w = (df + 1.0) / (df + z * z);
                let d_loc = z * w / scale;
                let d_log_scale = z * z * w - 1.0;
                let d_df = 0.5 * digamma((df + 1.0) / 2.0) - 0.5 * digamma(df / 2.0)
                    - 0.5 / df
                    - 0.5 * (1.0 + z * z / df).ln()
                    + 0.5 * (df + 1.0) * z * z / (df * (df + z * z));
                Ok(vec![d_loc, d_log_scale, df * d_df])
            }
            Dist::Bernoulli { p } => {
                if x != 0.0 && x != 1.0 {
                    return Err(Error::Unsupported(
                        "Bernoulli score outside {0, 1}".into(),
                    ));
                }
                Ok(vec![x - p])
            }
            Dist::Categorical { .. } => Err(Error::Unsupported(
                "categorical parameters are not differentiable here".into(),
            )),
        }
    }

    /// Number of unconstrained parameters ([`Dist::score`] length).
    pub fn param_count(&self) -> usize {
        match self {
            Dist::Poisson { .. } | Dist::Bernoulli { .. } => 1,
            Dist::NegBinomial { .. } | Dist::Gaussian { .. } => 2,
            Dist::StudentT { .. } => 3,
            Dist::Categorical { probs } => probs.len(),
        }
    }
}

/// Non-negative integers representable exactly.
fn is_count(x: f64) -> bool {
    x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x <= 2f64.powi(53)
}

fn require_count(x: f64, what: &str) -> Result<()> {
    if is_count(x) {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{what} at non-count point {x}")))
    }
}

/// Poisson sampler: exponential-product inversion for small rates, Hormann's
/// PTRS transformed rejection above 30 (inversion degrades, PTRS stays O(1)).
fn sample_poisson(rate: f64, rng: &mut Prng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate <= 30.0 {
        let floor = (-rate).exp();
        let mut k = 0u64;
        let mut prod: f64 = rng.random();
        while prod > floor {
            prod *= rng.random::<f64>();
            k += 1;
        }
        k
    } else {
        poisson_ptrs(rate, rng)
    }
}

fn poisson_ptrs(rate: f64, rng: &mut Prng) -> u64 {
    let log_rate = rate.ln();
    let b = 0.931 + 2.53 * rate.sqrt();
    let a = -0.059 + 0.024_83 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let kf = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= v_r && kf >= 0.0 {
            return kf as u64;
        }
        if kf < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        let rhs = kf * log_rate - rate - ln_gamma(kf + 1.0);
        if lhs <= rhs {
            return kf as u64;
        }
    }
}
