//! Local optimisers: Nelder-Mead (derivative-free, used by inner local fits)
//! and BFGS with Armijo backtracking (used for pseudo-true parameter search).
//! Both minimise; callers maximising a likelihood pass its negation.

use crate::error::Error;

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimisation.
///
/// `scale` sets the initial simplex edge per coordinate; convergence is
/// declared when both the simplex diameter and the function spread fall
/// below `tol`.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    scale: f64,
    tol: f64,
    max_evals: usize,
) -> OptimResult {
    let d = x0.len();
    assert!(d >= 1);
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Simplex of d+1 vertices: x0 plus one displacement per coordinate.
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.to_vec());
    for j in 0..d {
        let mut v = x0.to_vec();
        v[j] += scale * (1.0 + x0[j].abs());
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iters = 0usize;
    loop {
        iters += 1;
        // Order vertices by value.
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap());
        let ordered: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let ordered_f: Vec<f64> = idx.iter().map(|&i| fv[i]).collect();
        simplex = ordered;
        fv = ordered_f;

        let diam = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread = fv[d] - fv[0];
        if (diam < tol && spread.abs() < tol.max(1e-12) * (1.0 + fv[0].abs())) || evals.get() >= max_evals
        {
            return OptimResult {
                x: simplex[0].clone(),
                f: fv[0],
                grad_norm: f64::NAN,
                iters,
                converged: evals.get() < max_evals,
            };
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; d];
        for v in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let fr = eval(&reflect);

        if fr < fv[0] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let fe = eval(&expand);
            if fe < fr {
                simplex[d] = expand;
                fv[d] = fe;
            } else {
                simplex[d] = reflect;
                fv[d] = fr;
            }
        } else if fr < fv[d - 1] {
            simplex[d] = reflect;
            fv[d] = fr;
        } else {
            let contract: Vec<f64> = if fr < fv[d] {
                centroid
                    .iter()
                    .zip(&reflect)
                    .map(|(c, r)| c + rho * (r - c))
                    .collect()
            } else {
                centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c + rho * (w - c))
                    .collect()
            };
            let fc = eval(&contract);
            if fc < fv[d].min(fr) {
                simplex[d] = contract;
                fv[d] = fc;
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].clone();
                for i in 1..=d {
                    for (x, b) in simplex[i].iter_mut().zip(&best) {
                        *x = b + sigma * (*x - b);
                    }
                    let v = simplex[i].clone();
                    fv[i] = eval(&v);
                }
            }
        }
    }
}

/// BFGS minimisation with Armijo backtracking.
///
/// `fg` returns the value and gradient together. Stops when the gradient
/// norm drops below `grad_tol`. Iterates whose norm exceeds 1e6 abort with
/// [`Error::Diverged`]; hitting `max_iters` returns [`Error::NoConverge`]
/// carrying the best iterate.
pub fn bfgs(
    fg: impl Fn(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    grad_tol: f64,
    max_iters: usize,
) -> Result<OptimResult, Error> {
    let d = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut gx) = fg(&x);
    // Inverse-Hessian approximation, dense row-major.
    let mut h = identity(d);

    for iter in 0..max_iters {
        let gnorm = norm(&gx);
        if gnorm <= grad_tol {
            return Ok(OptimResult {
                x,
                f: fx,
                grad_norm: gnorm,
                iters: iter,
                converged: true,
            });
        }
        if norm(&x) > 1e6 {
            return Err(Error::Diverged {
                norm: norm(&x),
                step: iter,
            });
        }

        // Search direction p = -H g.
        let mut p = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                p[i] -= h[i * d + j] * gx[j];
            }
        }
        let descent: f64 = p.iter().zip(&gx).map(|(a, b)| a * b).sum();
        if descent >= 0.0 {
            // Bad curvature model; reset to steepest descent.
            h = identity(d);
            for (pi, gi) in p.iter_mut().zip(&gx) {
                *pi = -gi;
            }
        }

        // Armijo backtracking.
        let slope: f64 = p.iter().zip(&gx).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xt: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let (ft, gt) = fg(&xt);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((xt, ft, gt, t));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted.map(|(a, b, c, _)| (a, b, c)) else {
            // Line search stalled; report the current iterate.
            return Err(Error::NoConverge {
                iters: iter,
                criterion: format!("line search stalled at |grad| = {gnorm:.3e}"),
                last: x,
            });
        };

        // BFGS inverse update with a curvature guard.
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-10 * norm(&s) * norm(&y) {
            let rho = 1.0 / sy;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let mut hy = vec![0.0; d];
            for i in 0..d {
                for j in 0..d {
                    hy[i] += h[i * d + j] * y[j];
                }
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                }
            }
        }
        x = xn;
        fx = fn_;
        gx = gn;
    }

    let gnorm = norm(&gx);
    if gnorm <= grad_tol {
        return Ok(OptimResult {
            x,
            f: fx,
            grad_norm: gnorm,
            iters: max_iters,
            converged: true,
        });
    }
    Err(Error::NoConverge {
        iters: max_iters,
        criterion: format!("|grad| = {gnorm:.3e} > {grad_tol:.3e}"),
        last: x,
    })
}

fn identity(d: usize) -> Vec<f64> {
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = 1.0;
    }
    h
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nelder_mead_finds_rosenbrock_valley() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], 0.5, 1e-10, 20_000);
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(r.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn nelder_mead_two_param_quadratic_is_tight() {
        // The inner-fit shape: smooth 2-parameter bowl.
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 1.7).powi(2);
        let r = nelder_mead(f, &[0.0, 0.0], 0.25, 1e-12, 5_000);
        assert!(r.converged);
        assert!((r.x[0] - 0.3).abs() < 1e-6);
        assert!((r.x[1] + 1.7).abs() < 1e-6);
    }

    #[test]
    fn bfgs_quadratic_converges_fast() {
        let fg = |x: &[f64]| {
            let f = 2.0 * (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2) + x[0] * x[1] * 0.3;
            let g = vec![
                4.0 * (x[0] - 1.0) + 0.3 * x[1],
                2.0 * (x[1] + 2.0) + 0.3 * x[0],
            ];
            (f, g)
        };
        let r = bfgs(fg, &[5.0, 5.0], 1e-10, 100).unwrap();
        assert!(r.converged);
        assert!(r.iters < 30);
        assert!(r.grad_norm <= 1e-10);
    }

    #[test]
    fn bfgs_reports_divergence_on_unbounded_objective() {
        let fg = |x: &[f64]| (-x[0] * x[0], vec![-2.0 * x[0]]);
        let err = bfgs(fg, &[1.0], 1e-8, 10_000).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "got {err:?}");
    }
}
