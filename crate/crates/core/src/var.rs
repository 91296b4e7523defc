//! Latent linear VAR dynamics: one-step prediction, simulation, stability
//! analysis and stabilizing rescaling.

use crate::eigen;
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{PanelRole, TimeSeriesPanel, VarCoefficients};

pub const DEFAULT_TARGET_RADIUS: f64 = 0.95;
pub const DEFAULT_BURN_IN: usize = 200;

/// Gaussian innovation process `u[t] ~ N(0, std_dev^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationSpec {
    pub std_dev: f64,
    pub seed: u64,
}

impl InnovationSpec {
    pub fn new(std_dev: f64, seed: u64) -> Result<Self> {
        if !(std_dev.is_finite() && std_dev >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "innovation std must be finite and non-negative, got {std_dev}"
            )));
        }
        Ok(Self { std_dev, seed })
    }
}

/// `y_hat[i] = sum_p sum_j a(p)[i][j] * history[p][j]` with `history` lag-major
/// (row 0 is the most recent sample).
pub fn predict_latent(var: &VarCoefficients, history: &[f64]) -> Result<Vec<f64>> {
    let n = var.n_nodes();
    if history.len() != var.order() * n {
        return Err(Error::Dimension(format!(
            "history has {} values, expected P*N = {}",
            history.len(),
            var.order() * n
        )));
    }
    let mut out = vec![0.0; n];
    predict_latent_into(var, history, &mut out);
    Ok(out)
}

pub(crate) fn predict_latent_into(var: &VarCoefficients, history: &[f64], out: &mut [f64]) {
    let n = var.n_nodes();
    out.iter_mut().for_each(|v| *v = 0.0);
    for lag in 0..var.order() {
        let block = var.lag_matrix(lag);
        let past = &history[lag * n..(lag + 1) * n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &block[i * n..(i + 1) * n];
            *o += row.iter().zip(past).map(|(a, y)| a * y).sum::<f64>();
        }
    }
}

/// Row-major `NP x NP` companion matrix `[[A1 .. AP], [I 0 .. 0], ..]`.
pub fn companion_matrix(var: &VarCoefficients) -> Vec<f64> {
    let n = var.n_nodes();
    let dim = n * var.order();
    let mut c = vec![0.0; dim * dim];
    for lag in 0..var.order() {
        for i in 0..n {
            for j in 0..n {
                c[i * dim + lag * n + j] = var.get(lag, i, j);
            }
        }
    }
    for r in n..dim {
        c[r * dim + r - n] = 1.0;
    }
    c
}

/// Spectral radius of the companion matrix; below 1 means the process is stable.
pub fn companion_spectral_radius(var: &VarCoefficients) -> f64 {
    let dim = var.n_nodes() * var.order();
    let c = companion_matrix(var);
    eigen::spectral_radius(&c, dim).unwrap_or_else(|| power_radius(&c, dim))
}

/// Gelfand-formula estimate, used only if the QR iteration does not converge.
fn power_radius(c: &[f64], dim: usize) -> f64 {
    let mut x: Vec<f64> = (0..dim).map(|i| 1.0 + (i as f64 * 0.618).sin()).collect();
    let mut log_growth = 0.0;
    let iters = 1000;
    for _ in 0..iters {
        let mut next = vec![0.0; dim];
        for (i, v) in next.iter_mut().enumerate() {
            *v = (0..dim).map(|j| c[i * dim + j] * x[j]).sum();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        log_growth += norm.ln();
        x = next.into_iter().map(|v| v / norm).collect();
    }
    (log_growth / iters as f64).exp()
}

/// Rescales lag `p` (1-based) by `(target / rho)^p`, which multiplies every
/// companion eigenvalue by `target / rho`. An all-zero tensor is returned as is.
pub fn stabilize(var: &VarCoefficients, target_radius: f64) -> Result<VarCoefficients> {
    if !(target_radius > 0.0 && target_radius < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target radius must lie in (0, 1), got {target_radius}"
        )));
    }
    let rho = companion_spectral_radius(var);
    if rho == 0.0 {
        return Ok(var.clone());
    }
    let ratio = target_radius / rho;
    let mut out = var.clone();
    let n2 = var.n_nodes() * var.n_nodes();
    for (idx, v) in out.as_mut_slice().iter_mut().enumerate() {
        let lag = idx / n2 + 1;
        *v *= ratio.powi(lag as i32);
    }
    Ok(out)
}

/// Simulates the latent process with innovation-only initial rows.
pub fn simulate_var(
    var: &VarCoefficients,
    innovation: &InnovationSpec,
    t_total: usize,
    burn_in: usize,
) -> Result<TimeSeriesPanel> {
    simulate_var_from(var, innovation, t_total, burn_in, None)
}

/// Simulates `burn_in + t_total` samples and keeps the last `t_total`.
///
/// The first `P` samples are `initial` (time-ordered, `P x N`) when given,
/// otherwise pure innovations; later samples follow the VAR recursion.
pub fn simulate_var_from(
    var: &VarCoefficients,
    innovation: &InnovationSpec,
    t_total: usize,
    burn_in: usize,
    initial: Option<&[f64]>,
) -> Result<TimeSeriesPanel> {
    if t_total == 0 {
        return Err(Error::InvalidArgument("t_total must be at least 1".into()));
    }
    let radius = companion_spectral_radius(var);
    if radius >= 1.0 {
        return Err(Error::Unstable(radius));
    }
    let n = var.n_nodes();
    let order = var.order();
    if let Some(init) = initial {
        if init.len() != order * n {
            return Err(Error::Dimension(format!(
                "initial state has {} values, expected P*N = {}",
                init.len(),
                order * n
            )));
        }
    }
    let total = burn_in + t_total;
    let len = total.max(order);
    let mut rng = rng::seeded(innovation.seed);
    let mut series = vec![0.0; len * n];
    let mut history = vec![0.0; order * n];
    let mut pred = vec![0.0; n];
    for t in 0..len {
        if t < order {
            for i in 0..n {
                series[t * n + i] = match initial {
                    Some(init) => init[t * n + i],
                    None => innovation.std_dev * rng::standard_normal(&mut rng),
                };
            }
            continue;
        }
        for p in 1..=order {
            history[(p - 1) * n..p * n].copy_from_slice(&series[(t - p) * n..(t - p + 1) * n]);
        }
        predict_latent_into(var, &history, &mut pred);
        for i in 0..n {
            series[t * n + i] = pred[i] + innovation.std_dev * rng::standard_normal(&mut rng);
        }
    }
    let start = len - t_total;
    TimeSeriesPanel::new(t_total, n, series[start * n..].to_vec(), PanelRole::Latent)
}
