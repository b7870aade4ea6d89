//! Reference posteriors for comparing a variational fit against: dense grid
//! quadrature in one or two dimensions, and an adaptive random-walk
//! Metropolis sampler for anything a grid cannot hold. Both take the log
//! target as a plain closure so callers can hand in marginalised or
//! tempered targets, not just model posteriors.

use crate::error::Error;
use crate::exec;
use crate::numeric::rng::{derive_seed, prng};
use crate::numeric::special::log_sum_exp;
use crate::vb::MeanFieldGaussian;
use crate::Result;
use rand::Rng as _;
use rand_distr::{Distribution as _, StandardNormal};

/// One axis of a midpoint grid: `n` equal cells spanning [lo, hi].
#[derive(Debug, Clone)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.step()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }
}

/// A normalised density tabulated on a midpoint grid (one or two axes),
/// stored as log cell masses in row-major order.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub axes: Vec<GridAxis>,
    log_mass: Vec<f64>,
}

impl GridDensity {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step()).product()
    }

    /// Probability mass of one cell by row-major flat index.
    pub fn mass(&self, flat: usize) -> f64 {
        self.log_mass[flat].exp()
    }

    /// Density value at the centre of one cell.
    pub fn density(&self, flat: usize) -> f64 {
        self.mass(flat) / self.cell_volume()
    }

    /// Coordinates of one cell centre.
    pub fn center(&self, flat: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0].center(flat)],
            2 => {
                let n1 = self.axes[1].n;
                vec![
                    self.axes[0].center(flat / n1),
                    self.axes[1].center(flat % n1),
                ]
            }
            _ => unreachable!("grids are one- or two-dimensional"),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.log_mass.iter().map(|l| l.exp()).sum()
    }

    /// Mass in the outermost cell layer, per axis side, ordered
    /// (axis0 low, axis0 high, axis1 low, ...).
    pub fn edge_masses(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; 2 * d];
        for flat in 0..self.cell_count() {
            let idx = match d {
                1 => vec![flat],
                _ => vec![flat / self.axes[1].n, flat % self.axes[1].n],
            };
            for (ax, &i) in idx.iter().enumerate() {
                if i == 0 {
                    out[2 * ax] += self.mass(flat);
                }
                if i + 1 == self.axes[ax].n {
                    out[2 * ax + 1] += self.mass(flat);
                }
            }
        }
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for flat in 0..self.cell_count() {
            let c = self.center(flat);
            let w = self.mass(flat);
            for j in 0..d {
                m[j] += w * c[j];
            }
        }
        m
    }

    pub fn sd(&self) -> Vec<f64> {
        let d = self.dim();
        let m = self.mean();
        let mut v = vec![0.0; d];
        for flat in 0..self.cell_count() {
            let c = self.center(flat);
            let w = self.mass(flat);
            for j in 0..d {
                v[j] += w * (c[j] - m[j]) * (c[j] - m[j]);
            }
        }
        v.iter().map(|x| x.sqrt()).collect()
    }

    /// Marginal cell masses along one axis (they sum to one).
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        assert!(axis < self.dim());
        let mut out = vec![0.0; self.axes[axis].n];
        for flat in 0..self.cell_count() {
            let i = match self.dim() {
                1 => flat,
                _ => {
                    if axis == 0 {
                        flat / self.axes[1].n
                    } else {
                        flat % self.axes[1].n
                    }
                }
            };
            out[i] += self.mass(flat);
        }
        out
    }
}

/// Tabulates and normalises `log_target` on a midpoint grid.
///
/// Fails when more than 1e-4 of the mass sits in the outermost cell layer:
/// the suggested bounds in the error double the range on every offending
/// side. Supports one and two dimensions; anything wider needs the sampler.
pub fn grid_posterior(
    log_target: impl Fn(&[f64]) -> f64 + Sync,
    bounds: &[(f64, f64)],
    points_per_axis: usize,
) -> Result<GridDensity> {
    let d = bounds.len();
    if d == 0 || d > 2 {
        return Err(Error::Unsupported(format!(
            "grid densities cover 1 or 2 dimensions, got {d}"
        )));
    }
    if points_per_axis < 8 {
        return Err(Error::Config("grid needs at least 8 points per axis".into()));
    }
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("bad grid bounds ({lo}, {hi})")));
        }
    }
    let axes: Vec<GridAxis> = bounds
        .iter()
        .map(|&(lo, hi)| GridAxis {
            lo,
            hi,
            n: points_per_axis,
        })
        .collect();
    let total: usize = axes.iter().map(|a| a.n).product();
    let log_vol: f64 = axes.iter().map(|a| a.step().ln()).sum();
    let raw = exec::map_indexed(total, |flat| {
        let x = match d {
            1 => vec![axes[0].center(flat)],
            _ => {
                let n1 = axes[1].n;
                vec![axes[0].center(flat / n1), axes[1].center(flat % n1)]
            }
        };
        log_target(&x)
    });
    if raw.iter().all(|l| !l.is_finite()) {
        return Err(Error::UndefinedStatistic(
            "log target is non-finite everywhere on the grid".into(),
        ));
    }
    let log_z = log_sum_exp(&raw) + log_vol;
    let log_mass: Vec<f64> = raw.iter().map(|l| l + log_vol - log_z).collect();
    let grid = GridDensity { axes, log_mass };

    let edges = grid.edge_masses();
    let worst: f64 = edges.iter().copied().fold(0.0, f64::max);
    if worst > 1e-4 {
        let suggested = bounds
            .iter()
            .enumerate()
            .map(|(ax, &(lo, hi))| {
                let range = hi - lo;
                let lo2 = if edges[2 * ax] > 1e-4 { lo - range } else { lo };
                let hi2 = if edges[2 * ax + 1] > 1e-4 { hi + range } else { hi };
                (lo2, hi2)
            })
            .collect();
        return Err(Error::BoundsTooTight {
            mass: worst,
            suggested,
        });
    }
    Ok(grid)
}

/// Grid bounds centred on a mean-field fit: mu +- mult sigma per coordinate.
pub fn bounds_from_fit(q: &MeanFieldGaussian, mult: f64) -> Vec<(f64, f64)> {
    let s = q.sigma();
    (0..q.dim())
        .map(|i| (q.mu[i] - mult * s[i], q.mu[i] + mult * s[i]))
        .collect()
}

/// Random-walk Metropolis settings.
#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub chains: usize,
    pub burn_in: usize,
    /// Draws kept per chain (after thinning).
    pub keep: usize,
    pub thin: usize,
    pub seed: u64,
    /// Per-coordinate proposal scale, multiplied by one adapted global
    /// factor per chain.
    pub proposal_sd: Vec<f64>,
    /// One starting point per chain.
    pub inits: Vec<Vec<f64>>,
    /// Adapt the global proposal factor toward 30% acceptance during
    /// burn-in (frozen afterwards, so the kept chain is a valid Markov
    /// chain).
    pub adapt: bool,
}

impl McmcConfig {
    pub fn new(proposal_sd: Vec<f64>, inits: Vec<Vec<f64>>, seed: u64) -> Self {
        McmcConfig {
            chains: inits.len(),
            burn_in: 10_000,
            keep: 5_000,
            thin: 1,
            seed,
            proposal_sd,
            inits,
            adapt: true,
        }
    }
}

/// Output of a Metropolis run: kept draws for every chain plus mixing
/// diagnostics.
#[derive(Debug, Clone)]
pub struct McmcRun {
    pub dim: usize,
    pub chains: usize,
    pub kept_per_chain: usize,
    draws: Vec<f64>, // [chain][iter][coord], flattened
    /// Post burn-in acceptance rate per chain.
    pub acceptance: Vec<f64>,
    /// Split-chain statistic per coordinate (NaN when too short to judge).
    pub r_hat: Vec<f64>,
    /// True when every coordinate's statistic is below 1.01 and every
    /// chain accepted between 10% and 60% of proposals.
    pub mixed: bool,
}

impl McmcRun {
    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let start = (chain * self.kept_per_chain + iter) * self.dim;
        &self.draws[start..start + self.dim]
    }

    /// All draws pooled across chains, in chain-major order.
    pub fn pooled_rows(&self) -> Vec<&[f64]> {
        self.draws.chunks_exact(self.dim).collect()
    }

    pub fn pooled_vec(&self) -> Vec<Vec<f64>> {
        self.draws
            .chunks_exact(self.dim)
            .map(|c| c.to_vec())
            .collect()
    }

    /// One coordinate of one chain as a contiguous series.
    pub fn chain_coord(&self, chain: usize, coord: usize) -> Vec<f64> {
        (0..self.kept_per_chain)
            .map(|i| self.draw(chain, i)[coord])
            .collect()
    }
}

/// Adaptive random-walk Metropolis on a log target.
///
/// Chains run independently from per-chain seeds, so the output is
/// reproducible and thread-count independent. During burn-in the global
/// proposal factor follows log-scale steps of 0.01 toward 30% acceptance;
/// it is frozen before any draw is kept.
pub fn metropolis_sample(
    log_target: impl Fn(&[f64]) -> f64 + Sync,
    cfg: &McmcConfig,
) -> Result<McmcRun> {
    let d = cfg.proposal_sd.len();
    if cfg.chains == 0 || cfg.keep == 0 {
        return Err(Error::Config("need at least one chain and one kept draw".into()));
    }
    if cfg.inits.len() != cfg.chains {
        return Err(Error::Shape {
            expected: cfg.chains,
            got: cfg.inits.len(),
            context: "mcmc chain inits",
        });
    }
    for init in &cfg.inits {
        if init.len() != d {
            return Err(Error::Shape {
                expected: d,
                got: init.len(),
                context: "mcmc init point",
            });
        }
        if !log_target(init).is_finite() {
            return Err(Error::ParamDomain(
                "mcmc init point has non-finite log target".into(),
            ));
        }
    }
    if cfg.proposal_sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::ParamDomain("proposal sd must be positive".into()));
    }
    let thin = cfg.thin.max(1);

    struct ChainOut {
        kept: Vec<f64>,
        acceptance: f64,
    }
    let outs: Vec<ChainOut> = exec::map_indexed(cfg.chains, |c| {
        let mut rng = prng(derive_seed(cfg.seed, &[0xaced, c as u64]));
        let mut x = cfg.inits[c].clone();
        let mut lx = log_target(&x);
        let mut log_scale: f64 = 0.0;
        let mut kept = Vec::with_capacity(cfg.keep * d);
        let mut accepted_post = 0usize;
        let total_post = cfg.keep * thin;
        let mut prop = vec![0.0; d];
        for it in 0..cfg.burn_in + total_post {
            let scale = log_scale.exp();
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                prop[j] = x[j] + scale * cfg.proposal_sd[j] * z;
            }
            let lp = log_target(&prop);
            let accept = lp - lx > rng.random::<f64>().ln();
            if accept {
                x.copy_from_slice(&prop);
                lx = lp;
            }
            if it < cfg.burn_in {
                if cfg.adapt {
                    let a = if accept { 1.0 } else { 0.0 };
                    log_scale += 0.01 * (a - 0.3);
                }
            } else {
                if accept {
                    accepted_post += 1;
                }
                let post = it - cfg.burn_in;
                if (post + 1) % thin == 0 {
                    kept.extend_from_slice(&x);
                }
            }
        }
        ChainOut {
            kept,
            acceptance: accepted_post as f64 / total_post as f64,
        }
    });

    let mut draws = Vec::with_capacity(cfg.chains * cfg.keep * d);
    let mut acceptance = Vec::with_capacity(cfg.chains);
    for o in outs {
        draws.extend(o.kept);
        acceptance.push(o.acceptance);
    }
    let run_r_hat: Vec<f64> = (0..d)
        .map(|j| {
            let series: Vec<Vec<f64>> = (0..cfg.chains)
                .map(|c| {
                    draws[(c * cfg.keep) * d..((c + 1) * cfg.keep) * d]
                        .iter()
                        .skip(j)
                        .step_by(d)
                        .copied()
                        .collect()
                })
                .collect();
            r_hat(&series).unwrap_or(f64::NAN)
        })
        .collect();
    let mixed = run_r_hat.iter().all(|r| r.is_finite() && *r < 1.01)
        && acceptance.iter().all(|a| (0.1..0.6).contains(a));
    Ok(McmcRun {
        dim: d,
        chains: cfg.chains,
        kept_per_chain: cfg.keep,
        draws,
        acceptance,
        r_hat: run_r_hat,
        mixed,
    })
}

/// Split-chain potential scale reduction for one scalar series per chain.
///
/// Chains are truncated to a common length, split in half, and compared on
/// between- and within-sequence variance. Needs at least two chains of at
/// least 100 draws and non-degenerate variance.
pub fn r_hat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::UndefinedStatistic(
            "split-chain statistic needs at least two chains".into(),
        ));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 100 {
        return Err(Error::UndefinedStatistic(format!(
            "split-chain statistic needs chains of length >= 100, got {n}"
        )));
    }
    let h = n / 2;
    let mut seq_means = Vec::with_capacity(2 * chains.len());
    let mut seq_vars = Vec::with_capacity(2 * chains.len());
    for chain in chains {
        for half in [&chain[..h], &chain[n - h..]] {
            seq_means.push(crate::numeric::stats::mean(half));
            seq_vars.push(crate::numeric::stats::variance(half));
        }
    }
    let w = crate::numeric::stats::mean(&seq_vars);
    if !(w.is_finite() && w > 0.0) {
        return Err(Error::UndefinedStatistic(
            "within-sequence variance is degenerate".into(),
        ));
    }
    let b_over_h = crate::numeric::stats::variance(&seq_means);
    let hf = h as f64;
    let var_plus = (hf - 1.0) / hf * w + b_over_h;
    Ok((var_plus / w).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_74;

    fn std_normal_log(x: &[f64]) -> f64 {
        -HALF_LN_2PI - 0.5 * x[0] * x[0]
    }

    /// Correlated Gaussian, covariance [[2, 1], [1, 2]]:
    /// inverse (1/3)[[2, -1], [-1, 2]], determinant 3.
    fn corr_gauss_log(x: &[f64]) -> f64 {
        let q = (2.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 2.0 * x[1] * x[1]) / 3.0;
        -(2.0 * std::f64::consts::PI).ln() - 0.5 * 3.0f64.ln() - 0.5 * q
    }

    #[test]
    fn grid_normalises_and_matches_gaussian_moments() {
        let g = grid_posterior(std_normal_log, &[(-10.0, 10.0)], 2000).unwrap();
        assert_abs_diff_eq!(g.total_mass(), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g.mean()[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g.sd()[0], 1.0, epsilon = 1e-4);
        let marg = g.marginal(0);
        assert_abs_diff_eq!(marg.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn grid_handles_two_dimensions() {
        let g = grid_posterior(corr_gauss_log, &[(-12.0, 12.0), (-12.0, 12.0)], 400).unwrap();
        assert_abs_diff_eq!(g.total_mass(), 1.0, epsilon = 1e-8);
        let m = g.mean();
        let s = g.sd();
        for j in 0..2 {
            assert_abs_diff_eq!(m[j], 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(s[j], 2.0f64.sqrt(), epsilon = 1e-3);
        }
    }

    #[test]
    fn tight_bounds_are_rejected_with_wider_suggestion() {
        let err = grid_posterior(std_normal_log, &[(-1.0, 1.0)], 200).unwrap_err();
        match err {
            Error::BoundsTooTight { mass, suggested } => {
                assert!(mass > 1e-4);
                assert!(suggested[0].0 < -1.0 && suggested[0].1 > 1.0);
                // One widening may not be enough for such a poor start, but
                // iterating the suggestion terminates quickly.
                let mut out = grid_posterior(std_normal_log, &[suggested[0]], 200);
                for _ in 0..6 {
                    match out {
                        Ok(_) => break,
                        Err(Error::BoundsTooTight { suggested, .. }) => {
                            out = grid_posterior(std_normal_log, &[suggested[0]], 200);
                        }
                        Err(e) => panic!("unexpected error {e:?}"),
                    }
                }
                let g = out.expect("iterated widening should succeed");
                assert_abs_diff_eq!(g.sd()[0], 1.0, epsilon = 1e-3);
            }
            other => panic!("expected bounds error, got {other:?}"),
        }
    }

    #[test]
    fn bounds_from_fit_cover_the_mass() {
        let q = MeanFieldGaussian::new(vec![1.5], vec![(0.2f64).ln()]).unwrap();
        let b = bounds_from_fit(&q, 8.0);
        assert_abs_diff_eq!(b[0].0, 1.5 - 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(b[0].1, 1.5 + 1.6, epsilon = 1e-12);
    }

    fn normal_mcmc_cfg(seed: u64) -> McmcConfig {
        McmcConfig::new(
            vec![1.0],
            vec![vec![0.5], vec![-0.5], vec![1.0], vec![-1.0]],
            seed,
        )
    }

    #[test]
    fn metropolis_recovers_standard_normal() {
        let run = metropolis_sample(std_normal_log, &normal_mcmc_cfg(7)).unwrap();
        assert!(run.mixed, "acceptance {:?}, r_hat {:?}", run.acceptance, run.r_hat);
        let pooled: Vec<f64> = run.pooled_rows().iter().map(|r| r[0]).collect();
        let m = crate::numeric::stats::mean(&pooled);
        let s = crate::numeric::stats::sd(&pooled);
        assert!(m.abs() < 0.06, "pooled mean {m}");
        assert!((s - 1.0).abs() < 0.05, "pooled sd {s}");
        let q975 = crate::numeric::stats::quantile(&pooled, 0.975);
        assert!((q975 - 1.96).abs() < 0.1, "upper quantile {q975}");
    }

    #[test]
    fn metropolis_is_deterministic_per_seed() {
        let a = metropolis_sample(std_normal_log, &normal_mcmc_cfg(41)).unwrap();
        let b = metropolis_sample(std_normal_log, &normal_mcmc_cfg(41)).unwrap();
        assert_eq!(a.pooled_vec(), b.pooled_vec());
        let c = metropolis_sample(std_normal_log, &normal_mcmc_cfg(42)).unwrap();
        assert_ne!(a.pooled_vec(), c.pooled_vec());
    }

    #[test]
    fn metropolis_handles_correlated_pair() {
        let cfg = McmcConfig::new(
            vec![1.4, 1.4],
            vec![
                vec![0.0, 0.0],
                vec![1.0, -1.0],
                vec![-1.0, 1.0],
                vec![0.5, 0.5],
            ],
            19,
        );
        let run = metropolis_sample(corr_gauss_log, &cfg).unwrap();
        assert!(run.mixed, "acceptance {:?}, r_hat {:?}", run.acceptance, run.r_hat);
        for j in 0..2 {
            let series: Vec<f64> = run.pooled_rows().iter().map(|r| r[j]).collect();
            assert!(crate::numeric::stats::mean(&series).abs() < 0.08);
            assert!((crate::numeric::stats::sd(&series) - 2.0f64.sqrt()).abs() < 0.08);
        }
    }

    #[test]
    fn grid_and_sampler_agree_on_moments() {
        let g = grid_posterior(corr_gauss_log, &[(-12.0, 12.0), (-12.0, 12.0)], 400).unwrap();
        let cfg = McmcConfig::new(
            vec![1.4, 1.4],
            vec![
                vec![0.0, 0.0],
                vec![1.0, -1.0],
                vec![-1.0, 1.0],
                vec![0.5, 0.5],
            ],
            23,
        );
        let run = metropolis_sample(corr_gauss_log, &cfg).unwrap();
        for j in 0..2 {
            let series: Vec<f64> = run.pooled_rows().iter().map(|r| r[j]).collect();
            assert!((crate::numeric::stats::mean(&series) - g.mean()[j]).abs() < 0.08);
            assert!((crate::numeric::stats::sd(&series) - g.sd()[j]).abs() < 0.08);
        }
    }

    #[test]
    fn bad_init_is_rejected() {
        let cfg = McmcConfig::new(vec![1.0], vec![vec![f64::NAN]], 3);
        let err = metropolis_sample(std_normal_log, &cfg).unwrap_err();
        assert!(matches!(err, Error::ParamDomain(_)), "{err:?}");
    }

    #[test]
    fn split_statistic_near_one_for_iid_chains() {
        let mut rng = prng(11);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                (0..2000)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let r = r_hat(&chains).unwrap();
        assert!((0.99..1.01).contains(&r), "iid statistic {r}");
    }

    #[test]
    fn split_statistic_flags_disjoint_chains() {
        let mut rng = prng(13);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|c| {
                let shift = if c % 2 == 0 { 0.0 } else { 10.0 };
                (0..500)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        shift + z
                    })
                    .collect()
            })
            .collect();
        let r = r_hat(&chains).unwrap();
        assert!(r > 2.0, "disjoint chains should blow up, got {r}");
    }

    #[test]
    fn split_statistic_rejects_degenerate_input() {
        assert!(matches!(
            r_hat(&[vec![0.0; 500]]),
            Err(Error::UndefinedStatistic(_))
        ));
        assert!(matches!(
            r_hat(&[vec![0.0; 50], vec![0.0; 50]]),
            Err(Error::UndefinedStatistic(_))
        ));
        assert!(matches!(
            r_hat(&[vec![1.0; 500], vec![1.0; 500]]),
            Err(Error::UndefinedStatistic(_))
        ));
    }
}
