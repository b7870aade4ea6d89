//! Model wrappers: datasets, parametric likelihoods, and latent-variable
//! likelihoods with one local variable per unit.
//!
//! Parameters always live on the unconstrained scale (log rates, log scales),
//! so optimisers and samplers never see a constraint. Models are plain
//! closures behind `Arc`, cheap to clone and safe to evaluate from worker
//! threads; none of the operations here mutate shared state.

use crate::error::Error;
use crate::exec;
use crate::Result;
use std::sync::Arc;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_74;

/// One observation: covariates `x` (possibly empty), response `y`, and an
/// optional group id for hierarchical designs.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub x: Vec<f64>,
    pub y: f64,
    pub group: Option<usize>,
}

impl Row {
    /// A bare observation with no covariates or group.
    pub fn obs(y: f64) -> Self {
        Row {
            x: Vec::new(),
            y,
            group: None,
        }
    }
}

/// An ordered collection of rows.
///
/// When group ids are present they must be contiguous from 0 and the rows
/// sorted by group, so each group is one slice; [`Dataset::units`] then
/// yields one unit per group. Without groups, every row is its own unit.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub rows: Vec<Row>,
}

impl Dataset {
    pub fn new(rows: Vec<Row>) -> Self {
        Dataset { rows }
    }

    /// Bare observations without covariates.
    pub fn from_observations(ys: impl IntoIterator<Item = f64>) -> Self {
        Dataset {
            rows: ys.into_iter().map(Row::obs).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Splits into local units: group-contiguous slices when group ids are
    /// present, one row per unit otherwise.
    pub fn units(&self) -> Result<Vec<&[Row]>> {
        if self.rows.is_empty() {
            return Ok(Vec::new());
        }
        let grouped = self.rows[0].group.is_some();
        if self.rows.iter().any(|r| r.group.is_some() != grouped) {
            return Err(Error::Mismatch(
                "rows mix grouped and ungrouped observations".into(),
            ));
        }
        if !grouped {
            return Ok(self.rows.chunks(1).collect());
        }
        let mut units = Vec::new();
        let mut start = 0usize;
        let mut expect = 0usize;
        for (i, row) in self.rows.iter().enumerate() {
            let g = row.group.unwrap();
            if g == expect {
                continue;
            }
            if g == expect + 1 {
                units.push(&self.rows[start..i]);
                start = i;
                expect = g;
            } else {
                return Err(Error::Mismatch(format!(
                    "group ids must be contiguous from 0; saw {g} after {expect}"
                )));
            }
        }
        units.push(&self.rows[start..]);
        Ok(units)
    }
}

type LoglikFn = Arc<dyn Fn(&[f64], &Row) -> f64 + Send + Sync>;
/// Adds the per-row gradient into the buffer (avoids per-row allocation).
type LoglikGradFn = Arc<dyn Fn(&[f64], &Row, &mut [f64]) + Send + Sync>;
type PriorFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type PriorGradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A parametric model: iid likelihood over rows plus a prior on the
/// unconstrained parameter vector.
#[derive(Clone)]
pub struct ParametricModel {
    pub dim: usize,
    loglik: LoglikFn,
    loglik_grad: LoglikGradFn,
    prior_logpdf: PriorFn,
    prior_grad: PriorGradFn,
}

impl ParametricModel {
    /// Builds a model with the default prior: independent N(0, 10^2) per
    /// coordinate, weakly informative on the unconstrained scale.
    pub fn new(
        dim: usize,
        loglik: impl Fn(&[f64], &Row) -> f64 + Send + Sync + 'static,
        loglik_grad: impl Fn(&[f64], &Row, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        let (p, g) = gaussian_prior(0.0, 10.0);
        ParametricModel {
            dim,
            loglik: Arc::new(loglik),
            loglik_grad: Arc::new(loglik_grad),
            prior_logpdf: p,
            prior_grad: g,
        }
    }

    /// Replaces the prior (log density and its gradient, both over the full
    /// parameter vector).
    pub fn with_prior(
        mut self,
        logpdf: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.prior_logpdf = Arc::new(logpdf);
        self.prior_grad = Arc::new(grad);
        self
    }

    fn check_dim(&self, theta: &[f64], context: &'static str) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: theta.len(),
                context,
            });
        }
        Ok(())
    }

    /// Per-row log likelihood.
    pub fn loglik_row(&self, theta: &[f64], row: &Row) -> f64 {
        (self.loglik)(theta, row)
    }

    /// Adds the per-row score into `out`.
    pub fn loglik_grad_row(&self, theta: &[f64], row: &Row, out: &mut [f64]) {
        (self.loglik_grad)(theta, row, out)
    }

    /// Sum of log likelihood over the dataset; empty data sums to zero.
    ///
    /// Chunked fixed-order reduction, so the value is identical with and
    /// without the `parallel` feature.
    pub fn loglik_sum(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        self.check_dim(theta, "loglik_sum")?;
        Ok(exec::sum_indexed(data.n(), |i| {
            (self.loglik)(theta, &data.rows[i])
        }))
    }

    /// Gradient of [`ParametricModel::loglik_sum`].
    pub fn loglik_grad_sum(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        self.check_dim(theta, "loglik_grad_sum")?;
        const CHUNK: usize = 1024;
        let n = data.n();
        let chunks = n.div_ceil(CHUNK);
        let partial = exec::map_indexed(chunks, |c| {
            let mut acc = vec![0.0; self.dim];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                (self.loglik_grad)(theta, &data.rows[i], &mut acc);
            }
            acc
        });
        let mut out = vec![0.0; self.dim];
        for part in partial {
            for (o, p) in out.iter_mut().zip(&part) {
                *o += p;
            }
        }
        Ok(out)
    }

    pub fn prior_logpdf(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta, "prior_logpdf")?;
        Ok((self.prior_logpdf)(theta))
    }

    pub fn prior_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(theta, "prior_grad")?;
        Ok((self.prior_grad)(theta))
    }

    /// Unnormalised log posterior: prior plus likelihood sum.
    pub fn log_posterior_unnorm(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        Ok(self.prior_logpdf(theta)? + self.loglik_sum(theta, data)?)
    }

    /// Gradient of the unnormalised log posterior.
    pub fn log_posterior_grad(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let mut g = self.loglik_grad_sum(theta, data)?;
        for (gi, pi) in g.iter_mut().zip((self.prior_grad)(theta)) {
            *gi += pi;
        }
        Ok(g)
    }
}

/// Independent Gaussian prior over all coordinates, as (logpdf, gradient)
/// closures.
pub fn gaussian_prior(mean: f64, sd: f64) -> (PriorFn, PriorGradFn) {
    assert!(sd > 0.0, "prior sd must be positive");
    let logpdf = move |theta: &[f64]| {
        theta
            .iter()
            .map(|t| {
                let z = (t - mean) / sd;
                -HALF_LN_2PI - sd.ln() - 0.5 * z * z
            })
            .sum::<f64>()
    };
    let grad = move |theta: &[f64]| {
        theta
            .iter()
            .map(|t| -(t - mean) / (sd * sd))
            .collect::<Vec<f64>>()
    };
    (Arc::new(logpdf), Arc::new(grad))
}

/// Kind of the per-unit local variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalKind {
    /// One real-valued latent per unit (random effects).
    ContinuousScalar,
    /// One categorical latent per unit with this many levels (mixture
    /// component indicators).
    Categorical(usize),
}

/// Value of a local variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalValue {
    Real(f64),
    Index(usize),
}

impl LocalValue {
    pub fn real(self) -> f64 {
        match self {
            LocalValue::Real(v) => v,
            LocalValue::Index(_) => panic!("expected a continuous local value"),
        }
    }

    pub fn index(self) -> usize {
        match self {
            LocalValue::Index(i) => i,
            LocalValue::Real(_) => panic!("expected a categorical local value"),
        }
    }
}

type LocalJointFn = Arc<dyn Fn(&[f64], LocalValue, usize, &[Row]) -> f64 + Send + Sync>;
type LocalJointGradFn =
    Arc<dyn Fn(&[f64], LocalValue, usize, &[Row], &mut [f64]) + Send + Sync>;

/// A latent-variable model: global parameters theta, one local variable per
/// unit, and the joint `log p(x_unit, z | theta)` evaluated per unit.
///
/// `unit_id` is the unit's index in [`Dataset::units`] order, letting models
/// cache per-unit sufficient statistics at construction time.
#[derive(Clone)]
pub struct LatentVarModel {
    pub global_dim: usize,
    pub local_kind: LocalKind,
    local_joint: LocalJointFn,
    local_joint_grad: LocalJointGradFn,
    prior_logpdf: PriorFn,
    prior_grad: PriorGradFn,
}

impl LatentVarModel {
    /// Builds a latent-variable model with the default N(0, 10^2) prior on
    /// theta. `local_joint_grad` adds the theta-gradient of `local_joint`
    /// into its buffer, holding z fixed.
    pub fn new(
        global_dim: usize,
        local_kind: LocalKind,
        local_joint: impl Fn(&[f64], LocalValue, usize, &[Row]) -> f64 + Send + Sync + 'static,
        local_joint_grad: impl Fn(&[f64], LocalValue, usize, &[Row], &mut [f64])
            + Send
            + Sync
            + 'static,
    ) -> Self {
        let (p, g) = gaussian_prior(0.0, 10.0);
        LatentVarModel {
            global_dim,
            local_kind,
            local_joint: Arc::new(local_joint),
            local_joint_grad: Arc::new(local_joint_grad),
            prior_logpdf: p,
            prior_grad: g,
        }
    }

    pub fn with_prior(
        mut self,
        logpdf: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.prior_logpdf = Arc::new(logpdf);
        self.prior_grad = Arc::new(grad);
        self
    }

    pub fn local_joint(&self, theta: &[f64], z: LocalValue, unit_id: usize, unit: &[Row]) -> f64 {
        (self.local_joint)(theta, z, unit_id, unit)
    }

    pub fn local_joint_grad(
        &self,
        theta: &[f64],
        z: LocalValue,
        unit_id: usize,
        unit: &[Row],
        out: &mut [f64],
    ) {
        (self.local_joint_grad)(theta, z, unit_id, unit, out)
    }

    pub fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        (self.prior_logpdf)(theta)
    }

    pub fn prior_grad(&self, theta: &[f64]) -> Vec<f64> {
        (self.prior_grad)(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn normal_loc_model() -> ParametricModel {
        // y ~ N(theta, 1) with prior N(0, 1): conjugate, everything closed
        // form.
        ParametricModel::new(
            1,
            |t, row| {
                let z = row.y - t[0];
                -HALF_LN_2PI - 0.5 * z * z
            },
            |t, row, out| {
                out[0] += row.y - t[0];
            },
        )
        .with_prior(
            |t| -HALF_LN_2PI - 0.5 * t[0] * t[0],
            |t| vec![-t[0]],
        )
    }

    #[test]
    fn empty_dataset_sums_to_zero() {
        let m = normal_loc_model();
        let d = Dataset::default();
        assert_eq!(m.loglik_sum(&[0.3], &d).unwrap(), 0.0);
        assert_eq!(m.loglik_grad_sum(&[0.3], &d).unwrap(), vec![0.0]);
    }

    #[test]
    fn additivity_under_concatenation() {
        let m = normal_loc_model();
        let a = Dataset::from_observations((0..300).map(|i| (i as f64 * 0.37).sin()));
        let b = Dataset::from_observations((0..451).map(|i| (i as f64 * 0.11).cos()));
        let mut both = a.rows.clone();
        both.extend(b.rows.clone());
        let joint = m.loglik_sum(&[0.4], &Dataset::new(both)).unwrap();
        let split =
            m.loglik_sum(&[0.4], &a).unwrap() + m.loglik_sum(&[0.4], &b).unwrap();
        assert_relative_eq!(joint, split, max_relative = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let m = normal_loc_model();
        let d = Dataset::from_observations([1.0]);
        let err = m.loglik_sum(&[0.0, 0.0], &d).unwrap_err();
        assert!(matches!(err, Error::Shape { expected: 1, got: 2, .. }));
    }

    #[test]
    fn conjugate_posterior_differs_by_constant_only() {
        // Analytic posterior for n obs: N(sum(y)/(n+1), 1/(n+1)).
        let m = normal_loc_model();
        let ys = [0.3, -1.1, 2.0, 0.7, 0.05];
        let d = Dataset::from_observations(ys);
        let n = ys.len() as f64;
        let s: f64 = ys.iter().sum();
        let post_mean = s / (n + 1.0);
        let post_var = 1.0 / (n + 1.0);
        let analytic = |t: f64| {
            -HALF_LN_2PI - 0.5 * post_var.ln() - 0.5 * (t - post_mean).powi(2) / post_var
        };
        let offsets: Vec<f64> = (0..10)
            .map(|i| {
                let t = -2.0 + 0.45 * i as f64;
                m.log_posterior_unnorm(&[t], &d).unwrap() - analytic(t)
            })
            .collect();
        for w in offsets.windows(2) {
            assert_abs_diff_eq!(w[0], w[1], epsilon = 1e-10);
        }
    }

    #[test]
    fn posterior_gradient_matches_fd() {
        let m = normal_loc_model();
        let d = Dataset::from_observations([0.5, -0.2, 1.4]);
        for &t in &[-1.0, 0.0, 0.8] {
            let g = m.log_posterior_grad(&[t], &d).unwrap()[0];
            let h = 1e-6;
            let fd = (m.log_posterior_unnorm(&[t + h], &d).unwrap()
                - m.log_posterior_unnorm(&[t - h], &d).unwrap())
                / (2.0 * h);
            assert_relative_eq!(g, fd, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn units_split_by_contiguous_groups() {
        let rows: Vec<Row> = [(0, 1.0), (0, 2.0), (1, 3.0), (2, 4.0), (2, 5.0)]
            .iter()
            .map(|&(g, y)| Row {
                x: vec![],
                y,
                group: Some(g),
            })
            .collect();
        let d = Dataset::new(rows);
        let units = d.units().unwrap();
        assert_eq!(units.len(), 3);
        assert_eq!(units[0].len(), 2);
        assert_eq!(units[1].len(), 1);
        assert_eq!(units[2].len(), 2);

        // Ungrouped: one unit per row.
        let d2 = Dataset::from_observations([1.0, 2.0]);
        assert_eq!(d2.units().unwrap().len(), 2);

        // Non-contiguous ids are rejected.
        let bad = Dataset::new(vec![
            Row { x: vec![], y: 0.0, group: Some(0) },
            Row { x: vec![], y: 0.0, group: Some(2) },
        ]);
        assert!(bad.units().is_err());

        // Mixed grouped/ungrouped is rejected.
        let mixed = Dataset::new(vec![
            Row { x: vec![], y: 0.0, group: Some(0) },
            Row::obs(1.0),
        ]);
        assert!(mixed.units().is_err());
    }

    #[test]
    fn latent_model_evaluates_joint_and_grad() {
        // Two-component location mixture: log p(y, c | theta) =
        // log(1/2) + logN(y; theta_c, 1).
        let m = LatentVarModel::new(
            2,
            LocalKind::Categorical(2),
            |theta, z, _id, unit| {
                let c = z.index();
                let r = unit[0].y - theta[c];
                (0.5f64).ln() - HALF_LN_2PI - 0.5 * r * r
            },
            |theta, z, _id, unit, out| {
                let c = z.index();
                out[c] += unit[0].y - theta[c];
            },
        );
        let theta = [-1.0, 2.0];
        let row = [Row::obs(0.8)];
        let j0 = m.local_joint(&theta, LocalValue::Index(0), 0, &row);
        let j1 = m.local_joint(&theta, LocalValue::Index(1), 0, &row);
        assert!(j1 > j0, "0.8 is closer to component 1");
        let mut g = vec![0.0; 2];
        m.local_joint_grad(&theta, LocalValue::Index(1), 0, &row, &mut g);
        assert_relative_eq!(g[1], 0.8 - 2.0);
        assert_eq!(g[0], 0.0);
    }
}
