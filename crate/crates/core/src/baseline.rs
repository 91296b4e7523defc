//! Linear VAR baseline fitted by (ridge-regularized) least squares.

use crate::error::{Error, Result};
use crate::forward::{summarize, MseSummary};
use crate::types::{TimeSeriesPanel, VarCoefficients};
use crate::var::predict_latent_into;

pub const DEFAULT_RIDGE: f64 = 1e-8;
/// Pivots below this fraction of the largest diagonal entry count as zero.
const PIVOT_RTOL: f64 = 1e-12;

/// In-place Cholesky factorization `G = L L^T` of a row-major SPD matrix;
/// the lower triangle of `g` is overwritten with `L`.
fn cholesky(g: &mut [f64], dim: usize) -> Result<()> {
    let scale = (0..dim).map(|i| g[i * dim + i]).fold(0.0_f64, f64::max);
    for j in 0..dim {
        let mut d = g[j * dim + j];
        for k in 0..j {
            d -= g[j * dim + k] * g[j * dim + k];
        }
        if !(d > PIVOT_RTOL * scale) || scale == 0.0 {
            return Err(Error::RankDeficient {
                column: j,
                pivot: d,
            });
        }
        let d = d.sqrt();
        g[j * dim + j] = d;
        for i in (j + 1)..dim {
            let mut s = g[i * dim + j];
            for k in 0..j {
                s -= g[i * dim + k] * g[j * dim + k];
            }
            g[i * dim + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` for each column of the row-major `dim x cols` `rhs`.
fn cholesky_solve(l: &[f64], dim: usize, rhs: &mut [f64], cols: usize) {
    for c in 0..cols {
        for i in 0..dim {
            let mut s = rhs[i * cols + c];
            for k in 0..i {
                s -= l[i * dim + k] * rhs[k * cols + c];
            }
            rhs[i * cols + c] = s / l[i * dim + i];
        }
        for i in (0..dim).rev() {
            let mut s = rhs[i * cols + c];
            for k in (i + 1)..dim {
                s -= l[k * dim + i] * rhs[k * cols + c];
            }
            rhs[i * cols + c] = s / l[i * dim + i];
        }
    }
}

/// Least-squares VAR fit: regress `z[t]` on `[z[t-1]; ..; z[t-P]]` by solving
/// `(X^T X + ridge I) B = X^T Z` with a Cholesky factorization.
pub fn fit_ols(panel: &TimeSeriesPanel, order: usize, ridge: f64) -> Result<VarCoefficients> {
    let n = panel.n_nodes();
    let t_len = panel.n_rows();
    if order == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be non-negative, got {ridge}"
        )));
    }
    if t_len <= n * order + 1 {
        return Err(Error::TooShort(format!(
            "least squares needs more than N*P + 1 = {} rows, got {t_len}",
            n * order + 1
        )));
    }
    let dim = n * order;
    let mut gram = vec![0.0; dim * dim];
    let mut cross = vec![0.0; dim * n];
    for t in order..t_len {
        let x = panel.window(t, order);
        let z = panel.row(t);
        for a in 0..dim {
            if x[a] == 0.0 {
                continue;
            }
            for b in 0..dim {
                gram[a * dim + b] += x[a] * x[b];
            }
            for (i, zi) in z.iter().enumerate() {
                cross[a * n + i] += x[a] * zi;
            }
        }
    }
    for a in 0..dim {
        gram[a * dim + a] += ridge;
    }
    cholesky(&mut gram, dim)?;
    cholesky_solve(&gram, dim, &mut cross, n);

    // row p*N + j of B holds the weights of z_j[t-p-1] for every target node
    let mut var = VarCoefficients::zeros(order, n);
    for lag in 0..order {
        for j in 0..n {
            for i in 0..n {
                var.set(lag, i, j, cross[(lag * n + j) * n + i]);
            }
        }
    }
    Ok(var)
}

pub fn evaluate_linear(var: &VarCoefficients, panel: &TimeSeriesPanel) -> Result<f64> {
    evaluate_linear_detailed(var, panel).map(|s| s.mse)
}

/// Teacher-forced one-step MSE with identity observation maps.
pub fn evaluate_linear_detailed(
    var: &VarCoefficients,
    panel: &TimeSeriesPanel,
) -> Result<MseSummary> {
    let n = var.n_nodes();
    let order = var.order();
    if panel.n_nodes() != n {
        return Err(Error::Dimension(format!(
            "panel has {} nodes, coefficients have {n}",
            panel.n_nodes()
        )));
    }
    if panel.n_rows() <= order {
        return Err(Error::TooShort(format!(
            "panel has {} rows, needs more than P = {order}",
            panel.n_rows()
        )));
    }
    let mut pred = vec![0.0; n];
    let errors: Vec<Vec<f64>> = (order..panel.n_rows())
        .map(|t| {
            predict_latent_into(var, &panel.window(t, order), &mut pred);
            panel
                .row(t)
                .iter()
                .zip(&pred)
                .map(|(z, p)| (z - p) * (z - p))
                .collect()
        })
        .collect();
    Ok(summarize(&errors, n, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::random_var_coeffs;
    use crate::types::{ModelShape, PanelRole};
    use crate::var::{simulate_var, simulate_var_from, InnovationSpec};

    #[test]
    fn noiseless_linear_data_is_recovered() {
        let shape = ModelShape::new(3, 2, 1).unwrap();
        let truth = random_var_coeffs(&shape, 0.95, 12).unwrap();
        // a little noise during burn-in, then exact recursion
        let warm = simulate_var(&truth, &InnovationSpec::new(1.0, 3).unwrap(), 2, 0).unwrap();
        let mut panel = simulate_var_from(
            &truth,
            &InnovationSpec::new(0.0, 0).unwrap(),
            200,
            0,
            Some(warm.as_slice()),
        )
        .unwrap();
        panel.role = PanelRole::Observed;
        let est = fit_ols(&panel, 2, 0.0).unwrap();
        let err = est
            .as_slice()
            .iter()
            .zip(truth.as_slice())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6, "{err}");
        assert!(evaluate_linear(&truth, &panel).unwrap() < 1e-24);
    }

    #[test]
    fn zero_panel_with_ridge_gives_zero_coefficients() {
        let panel = TimeSeriesPanel::new(20, 2, vec![0.0; 40], PanelRole::Observed).unwrap();
        let est = fit_ols(&panel, 2, 1e-3).unwrap();
        assert!(est.as_slice().iter().all(|&a| a == 0.0));
        assert!(matches!(
            fit_ols(&panel, 2, 0.0),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn white_noise_gives_small_coefficients() {
        let panel = simulate_var(
            &VarCoefficients::zeros(2, 3),
            &InnovationSpec::new(1.0, 99).unwrap(),
            20_000,
            0,
        )
        .unwrap();
        let est = fit_ols(&panel, 2, DEFAULT_RIDGE).unwrap();
        assert!(est.max_abs() < 0.1, "{}", est.max_abs());
    }

    #[test]
    fn ridge_shrinks_coefficients() {
        let shape = ModelShape::new(3, 2, 1).unwrap();
        let truth = random_var_coeffs(&shape, 0.9, 5).unwrap();
        let panel = simulate_var(&truth, &InnovationSpec::new(0.5, 6).unwrap(), 300, 50).unwrap();
        let mut last = f64::INFINITY;
        for ridge in [0.0, 1e-3, 1e-1, 1.0, 10.0, 100.0, 1e4] {
            let norm = fit_ols(&panel, 2, ridge).unwrap().frobenius_norm();
            assert!(norm <= last + 1e-12, "ridge {ridge}: {norm} > {last}");
            last = norm;
        }
    }

    #[test]
    fn evaluation_examples() {
        let panel = simulate_var(
            &VarCoefficients::zeros(1, 2),
            &InnovationSpec::new(1.0, 1).unwrap(),
            30,
            0,
        )
        .unwrap();
        let mean_sq = panel.as_slice()[2..].iter().map(|v| v * v).sum::<f64>() / 58.0;
        let mse = evaluate_linear(&VarCoefficients::zeros(1, 2), &panel).unwrap();
        assert!((mse - mean_sq).abs() < 1e-14);

        // hand-looped oracle for a random tensor
        let var = VarCoefficients::from_vec(2, 2, vec![0.3, -0.1, 0.2, 0.4, -0.2, 0.05, 0.1, 0.0])
            .unwrap();
        let mut total = 0.0;
        for t in 2..30 {
            for i in 0..2 {
                let mut p = 0.0;
                for lag in 0..2 {
                    for j in 0..2 {
                        p += var.get(lag, i, j) * panel.get(t - lag - 1, j);
                    }
                }
                total += (panel.get(t, i) - p).powi(2);
            }
        }
        let mse = evaluate_linear(&var, &panel).unwrap();
        assert!((mse - total / 56.0).abs() < 1e-14);
        assert!(evaluate_linear(&var, &panel.slice_rows(0, 2).unwrap()).is_err());
    }

    #[test]
    fn too_short_panel_is_rejected() {
        let panel = TimeSeriesPanel::new(5, 2, vec![1.0; 10], PanelRole::Observed).unwrap();
        assert!(matches!(fit_ols(&panel, 2, 1.0), Err(Error::TooShort(_))));
    }
}
