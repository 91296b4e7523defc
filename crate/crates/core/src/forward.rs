//! Observed-space prediction: inverse maps, latent VAR step, forward maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::monotone::{eval_f, invert, InverseOptions};
use crate::types::{ForwardTrace, NlVarModel, PanelRole, TimeSeriesPanel};
use crate::var::{predict_latent, predict_latent_into};

fn check_window(model: &NlVarModel, window: &[f64]) -> Result<()> {
    let expected = model.shape.order * model.shape.n_nodes;
    if window.len() != expected {
        return Err(Error::Dimension(format!(
            "window has {} values, expected P*N = {expected}",
            window.len()
        )));
    }
    Ok(())
}

/// Maps a lag-major observed window into latent space. Returns the latent
/// window and the number of values that had to be clamped into the image.
pub fn latent_window(
    model: &NlVarModel,
    window: &[f64],
    opts: &InverseOptions,
) -> Result<(Vec<f64>, usize)> {
    check_window(model, window)?;
    let n = model.shape.n_nodes;
    let mut clamped = 0;
    let mut out = Vec::with_capacity(window.len());
    for (idx, &z) in window.iter().enumerate() {
        let node = idx % n;
        let inv = invert(&model.maps[node], z, opts).map_err(|e| e.at_node(node))?;
        clamped += usize::from(inv.clamped);
        out.push(inv.y);
    }
    Ok((out, clamped))
}

pub fn squared_error(target: &[f64], prediction: &[f64]) -> f64 {
    target
        .iter()
        .zip(prediction)
        .map(|(z, zh)| (z - zh) * (z - zh))
        .sum()
}

/// One-step prediction of `target` from the lag-major `window`, returning
/// the intermediate values and the squared-error cost.
pub fn forward_trace(
    model: &NlVarModel,
    window: &[f64],
    target: &[f64],
) -> Result<(ForwardTrace, f64)> {
    forward_trace_with(model, window, target, &InverseOptions::default())
}

pub fn forward_trace_with(
    model: &NlVarModel,
    window: &[f64],
    target: &[f64],
    opts: &InverseOptions,
) -> Result<(ForwardTrace, f64)> {
    if target.len() != model.shape.n_nodes {
        return Err(Error::Dimension(format!(
            "target has {} values, expected N = {}",
            target.len(),
            model.shape.n_nodes
        )));
    }
    let (y_tilde, _) = latent_window(model, window, opts)?;
    let y_hat = predict_latent(&model.var, &y_tilde)?;
    let z_hat: Vec<f64> = y_hat
        .iter()
        .zip(&model.maps)
        .map(|(&y, map)| eval_f(map, y))
        .collect();
    let cost = squared_error(target, &z_hat);
    Ok((
        ForwardTrace {
            y_tilde,
            y_hat,
            z_hat,
        },
        cost,
    ))
}

/// Free-running prediction `horizon` steps ahead. The window is mapped into
/// latent space once, the VAR recursion runs there, and each latent
/// prediction is mapped back; row `h` is the prediction for `t + h`.
pub fn predict_horizon(
    model: &NlVarModel,
    window: &[f64],
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (latent, _) = latent_window(model, window, &InverseOptions::default())?;
    let latent_path = latent_horizon(model, &latent, horizon);
    Ok(latent_path
        .iter()
        .map(|y| {
            y.iter()
                .zip(&model.maps)
                .map(|(&v, m)| eval_f(m, v))
                .collect()
        })
        .collect())
}

/// Latent-space recursion used by [`predict_horizon`].
pub fn latent_horizon(model: &NlVarModel, latent_window: &[f64], horizon: usize) -> Vec<Vec<f64>> {
    let n = model.shape.n_nodes;
    let mut history = latent_window.to_vec();
    let mut out = Vec::with_capacity(horizon);
    let mut next = vec![0.0; n];
    for _ in 0..horizon {
        predict_latent_into(&model.var, &history, &mut next);
        // shift the window by one lag
        let len = history.len();
        history.copy_within(0..len - n, n);
        history[..n].copy_from_slice(&next);
        out.push(next.clone());
    }
    out
}

/// Teacher-forced evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MseSummary {
    /// Mean over timesteps and nodes of the squared one-step error.
    pub mse: f64,
    /// Mean over timesteps of each node's squared one-step error.
    pub per_node: Vec<f64>,
    /// Observations that fell outside a map's image and were clamped.
    pub clamped: usize,
}

pub fn evaluate_mse(model: &NlVarModel, panel: &TimeSeriesPanel) -> Result<f64> {
    evaluate_detailed(model, panel).map(|s| s.mse)
}

/// Mean of `C[t] / N` over `t = P..T`, each window holding true observations.
pub fn evaluate_detailed(model: &NlVarModel, panel: &TimeSeriesPanel) -> Result<MseSummary> {
    let n = model.shape.n_nodes;
    let order = model.shape.order;
    if panel.role != PanelRole::Observed {
        return Err(Error::InvalidArgument(
            "evaluation needs an observed panel".into(),
        ));
    }
    if panel.n_nodes() != n {
        return Err(Error::Dimension(format!(
            "panel has {} nodes, model has {n}",
            panel.n_nodes()
        )));
    }
    if panel.n_rows() <= order {
        return Err(Error::TooShort(format!(
            "panel has {} rows, needs more than P = {order}",
            panel.n_rows()
        )));
    }
    // every observation enters P windows, so invert the whole panel once
    let opts = InverseOptions::default();
    let inverted: Vec<(f64, bool)> = panel
        .as_slice()
        .par_iter()
        .enumerate()
        .map(|(idx, &z)| {
            let node = idx % n;
            invert(&model.maps[node], z, &opts)
                .map(|inv| (inv.y, inv.clamped))
                .map_err(|e| e.at_node(node))
        })
        .collect::<Result<_>>()?;
    let clamped = inverted.iter().filter(|(_, c)| *c).count();
    let latent: Vec<f64> = inverted.into_iter().map(|(y, _)| y).collect();

    let errors: Vec<Vec<f64>> = (order..panel.n_rows())
        .into_par_iter()
        .map(|t| {
            let mut history = Vec::with_capacity(order * n);
            for p in 1..=order {
                history.extend_from_slice(&latent[(t - p) * n..(t - p + 1) * n]);
            }
            let mut y_hat = vec![0.0; n];
            predict_latent_into(&model.var, &history, &mut y_hat);
            panel
                .row(t)
                .iter()
                .zip(y_hat.iter().zip(&model.maps))
                .map(|(&z, (&y, map))| {
                    let r = z - eval_f(map, y);
                    r * r
                })
                .collect()
        })
        .collect();
    Ok(summarize(&errors, n, clamped))
}

/// Ordered reduction of per-timestep squared errors.
pub(crate) fn summarize(errors: &[Vec<f64>], n: usize, clamped: usize) -> MseSummary {
    let steps = errors.len() as f64;
    let mut per_node = vec![0.0; n];
    let mut total = 0.0;
    for row in errors {
        let mut cost = 0.0;
        for (acc, e) in per_node.iter_mut().zip(row) {
            *acc += e;
            cost += e;
        }
        total += cost / n as f64;
    }
    per_node.iter_mut().for_each(|v| *v /= steps);
    MseSummary {
        mse: total / steps,
        per_node,
        clamped,
    }
}
