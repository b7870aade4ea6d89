//! Central finite differences; the independent derivative route used to
//! cross-check analytic scores, ELBO gradients and curvature estimates.

/// Central-difference gradient with per-coordinate relative step
/// `h_j = rel_step * (1 + |x_j|)`.
pub fn grad_central(f: impl Fn(&[f64]) -> f64, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = rel_step * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Symmetrised Jacobian of a gradient field: `H = (J + J^T) / 2` where
/// `J_{jk} = d g_k / d x_j` by central differences with step
/// `h_j = rel_step * (1 + |x_j|)`. This is the curvature estimator used for
/// information matrices.
pub fn hessian_from_grad(
    grad: impl Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    rel_step: f64,
) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut jac = vec![vec![0.0; d]; d];
    let mut xp = x.to_vec();
    for j in 0..d {
        let h = rel_step * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let gp = grad(&xp);
        xp[j] = x[j] - h;
        let gm = grad(&xp);
        xp[j] = x[j];
        assert_eq!(gp.len(), d, "gradient length mismatch");
        for k in 0..d {
            jac[j][k] = (gp[k] - gm[k]) / (2.0 * h);
        }
    }
    let mut hess = vec![vec![0.0; d]; d];
    for j in 0..d {
        for k in 0..d {
            hess[j][k] = 0.5 * (jac[j][k] + jac[k][j]);
        }
    }
    hess
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_gradient_and_hessian() {
        // f(x) = x0^2 + 3 x0 x1 - 2 x1^2.
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1] - 2.0 * x[1] * x[1];
        let g = |x: &[f64]| vec![2.0 * x[0] + 3.0 * x[1], 3.0 * x[0] - 4.0 * x[1]];
        let x = [0.7, -1.2];
        let gfd = grad_central(f, &x, 1e-6);
        for (a, b) in gfd.iter().zip(g(&x)) {
            assert_relative_eq!(a, &b, max_relative = 1e-7, epsilon = 1e-9);
        }
        let h = hessian_from_grad(g, &x, 1e-5);
        assert_relative_eq!(h[0][0], 2.0, epsilon = 1e-6);
        assert_relative_eq!(h[0][1], 3.0, epsilon = 1e-6);
        assert_relative_eq!(h[1][0], 3.0, epsilon = 1e-6);
        assert_relative_eq!(h[1][1], -4.0, epsilon = 1e-6);
    }
}
