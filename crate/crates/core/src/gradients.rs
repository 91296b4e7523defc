//! Backpropagation through the inverse-map / VAR / forward-map pipeline.
//!
//! With `S_n = 2 (z_hat_n - z_n)` and `f'_n` evaluated at the latent
//! prediction `y_hat_n`, the per-timestep gradients are
//!
//! ```text
//! dC/da(p)_ij  = S_i f'_i(y_hat_i) y_tilde_j[t-p]
//! dC/dtheta_i  = S_i df_i/dtheta_i (y_hat_i)
//!              + sum_p ( sum_n S_n f'_n(y_hat_n) a(p)_ni ) dg_i/dtheta_i (z_i[t-p])
//! ```
//!
//! where `dg/dtheta = -(df/dtheta)(g(z)) / f'(g(z))` comes from
//! differentiating `f(g(z)) = z`. Both `df/dtheta` and `f'` inside the
//! inverse gradient are evaluated at the latent point `g(z)`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::forward_trace_with;
use crate::monotone::{eval_f_prime, grad_f_theta, grad_g_theta_at, InverseOptions, ThetaGradient};
use crate::rng;
use crate::types::{ForwardTrace, ModelShape, NlVarModel, NodeMap, RangeBounds, VarCoefficients};

/// Gradient of a cost with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub d_var: VarCoefficients,
    pub d_theta: Vec<ThetaGradient>,
}

impl ModelGradient {
    pub fn zeros(shape: &ModelShape) -> Self {
        Self {
            d_var: VarCoefficients::zeros(shape.order, shape.n_nodes),
            d_theta: vec![ThetaGradient::zeros(shape.n_units); shape.n_nodes],
        }
    }

    pub fn add_scaled(&mut self, scale: f64, other: &ModelGradient) {
        for (a, b) in self
            .d_var
            .as_mut_slice()
            .iter_mut()
            .zip(other.d_var.as_slice())
        {
            *a += scale * b;
        }
        for (a, b) in self.d_theta.iter_mut().zip(&other.d_theta) {
            a.add_scaled(scale, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_var
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v *= factor);
        self.d_theta.iter_mut().for_each(|t| t.scale(factor));
    }

    /// All entries, VAR block first, then each node's `[alpha; w; k; b]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = self.d_var.as_slice().to_vec();
        for t in &self.d_theta {
            out.extend(t.to_vec());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.to_vec().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Analytic gradient of `C[t]` given the forward trace of the same
/// `(model, window, target)`. The inverse-map gradients reuse the latent
/// values stored in the trace instead of inverting again.
pub fn grad_timestep(
    model: &NlVarModel,
    window: &[f64],
    target: &[f64],
    trace: &ForwardTrace,
) -> Result<ModelGradient> {
    let n = model.shape.n_nodes;
    let order = model.shape.order;
    if window.len() != order * n || target.len() != n || trace.y_tilde.len() != order * n {
        return Err(Error::Dimension(
            "window, target and trace must match the model shape".into(),
        ));
    }
    let sens: Vec<f64> = trace
        .z_hat
        .iter()
        .zip(target)
        .map(|(zh, z)| 2.0 * (zh - z))
        .collect();
    // S_n f'_n(y_hat_n): sensitivity of the cost to the latent prediction
    let latent_sens: Vec<f64> = (0..n)
        .map(|i| sens[i] * eval_f_prime(&model.maps[i], trace.y_hat[i]))
        .collect();

    let mut grad = ModelGradient::zeros(&model.shape);
    for lag in 0..order {
        for i in 0..n {
            for j in 0..n {
                grad.d_var
                    .set(lag, i, j, latent_sens[i] * trace.y_tilde[lag * n + j]);
            }
        }
    }

    for (i, map) in model.maps.iter().enumerate() {
        let d_theta = &mut grad.d_theta[i];
        d_theta.add_scaled(sens[i], &grad_f_theta(map, trace.y_hat[i]));
        for lag in 0..order {
            let coupling: f64 = (0..n)
                .map(|row| latent_sens[row] * model.var.get(lag, row, i))
                .sum();
            if coupling == 0.0 {
                continue;
            }
            let dg = grad_g_theta_at(map, trace.y_tilde[lag * n + i]).map_err(|e| e.at_node(i))?;
            d_theta.add_scaled(coupling, &dg);
        }
    }
    Ok(grad)
}

/// One training example: lag-major window and the observation it predicts.
pub type Sample<'a> = (&'a [f64], &'a [f64]);

/// Mean of the per-timestep gradients over a mini-batch. Members are
/// evaluated in parallel and summed in batch order.
pub fn grad_batch(model: &NlVarModel, batch: &[Sample<'_>]) -> Result<ModelGradient> {
    grad_batch_with(model, batch, &InverseOptions::default())
}

pub fn grad_batch_with(
    model: &NlVarModel,
    batch: &[Sample<'_>],
    opts: &InverseOptions,
) -> Result<ModelGradient> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient batch is empty".into()));
    }
    let parts: Vec<ModelGradient> = batch
        .par_iter()
        .map(|&(window, target)| {
            let (trace, _) = forward_trace_with(model, window, target, opts)?;
            grad_timestep(model, window, target, &trace)
        })
        .collect::<Result<_>>()?;
    let mut total = ModelGradient::zeros(&model.shape);
    for g in &parts {
        total.add_scaled(1.0, g);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok(total)
}

fn perturb_theta(map: &mut NodeMap, idx: usize, delta: f64) {
    let m = map.n_units();
    match idx / m {
        0 => map.alpha[idx] += delta,
        1 => map.w[idx - m] += delta,
        2 => map.k[idx - 2 * m] += delta,
        _ => map.b += delta,
    }
}

/// Central finite differences of the forward cost with respect to every
/// parameter. The `alpha` simplex constraint is not re-imposed after a
/// perturbation: this differentiates the unconstrained cost.
pub fn fd_gradient(
    model: &NlVarModel,
    window: &[f64],
    target: &[f64],
    step: f64,
) -> Result<ModelGradient> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let opts = InverseOptions::exact();
    let cost = |m: &NlVarModel| -> Result<f64> {
        forward_trace_with(m, window, target, &opts)
            .map(|(_, c)| c)
            .map_err(|e| match e {
                Error::Inversion {
                    node,
                    target,
                    detail,
                } => Error::Inversion {
                    node,
                    target,
                    detail: format!("{detail} (finite-difference step {step} may be too large)"),
                },
                other => other,
            })
    };
    let mut grad = ModelGradient::zeros(&model.shape);
    let mut work = model.clone();

    for idx in 0..model.var.as_slice().len() {
        let orig = model.var.as_slice()[idx];
        work.var.as_mut_slice()[idx] = orig + step;
        let plus = cost(&work)?;
        work.var.as_mut_slice()[idx] = orig - step;
        let minus = cost(&work)?;
        work.var.as_mut_slice()[idx] = orig;
        grad.d_var.as_mut_slice()[idx] = (plus - minus) / (2.0 * step);
    }

    let m = model.shape.n_units;
    for node in 0..model.shape.n_nodes {
        let mut flat = vec![0.0; 3 * m + 1];
        for (idx, slot) in flat.iter_mut().enumerate() {
            perturb_theta(&mut work.maps[node], idx, step);
            let plus = cost(&work)?;
            work.maps[node] = model.maps[node].clone();
            perturb_theta(&mut work.maps[node], idx, -step);
            let minus = cost(&work)?;
            work.maps[node] = model.maps[node].clone();
            *slot = (plus - minus) / (2.0 * step);
        }
        let t = &mut grad.d_theta[node];
        t.d_alpha.copy_from_slice(&flat[..m]);
        t.d_w.copy_from_slice(&flat[m..2 * m]);
        t.d_k.copy_from_slice(&flat[2 * m..3 * m]);
        t.d_b = flat[3 * m];
    }
    Ok(grad)
}

/// Relative error with denominator `max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// Worst relative error per parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockErrors {
    pub var: f64,
    pub alpha: f64,
    pub w: f64,
    pub k: f64,
    pub b: f64,
}

impl BlockErrors {
    pub fn max(&self) -> f64 {
        [self.var, self.alpha, self.w, self.k, self.b]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn merge(&mut self, other: &BlockErrors) {
        self.var = self.var.max(other.var);
        self.alpha = self.alpha.max(other.alpha);
        self.w = self.w.max(other.w);
        self.k = self.k.max(other.k);
        self.b = self.b.max(other.b);
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("var", self.var),
            ("alpha", self.alpha),
            ("w", self.w),
            ("k", self.k),
            ("b", self.b),
        ]
    }
}

pub fn compare_gradients(
    analytic: &ModelGradient,
    numeric: &ModelGradient,
    floor: f64,
) -> BlockErrors {
    let worst = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| relative_error(*x, *y, floor))
            .fold(0.0, f64::max)
    };
    let mut out = BlockErrors {
        var: worst(analytic.d_var.as_slice(), numeric.d_var.as_slice()),
        ..BlockErrors::default()
    };
    for (a, b) in analytic.d_theta.iter().zip(&numeric.d_theta) {
        out.alpha = out.alpha.max(worst(&a.d_alpha, &b.d_alpha));
        out.w = out.w.max(worst(&a.d_w, &b.d_w));
        out.k = out.k.max(worst(&a.d_k, &b.d_k));
        out.b = out.b.max(relative_error(a.d_b, b.d_b, floor));
    }
    out
}

/// A random strictly feasible model with a window and target drawn from
/// the interior of each node's image.
#[derive(Debug, Clone)]
pub struct GradcheckInstance {
    pub model: NlVarModel,
    pub window: Vec<f64>,
    pub target: Vec<f64>,
}

impl GradcheckInstance {
    pub fn random(seed: u64, shape: ModelShape) -> Self {
        let mut rng = rng::seeded(seed);
        let n = shape.n_nodes;
        let m = shape.n_units;
        let maps: Vec<NodeMap> = (0..n)
            .map(|_| {
                let lower = rng.random_range(-1.0..0.0);
                let span = rng.random_range(1.0..2.0);
                let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let range = RangeBounds {
                    lower,
                    upper: lower + span,
                };
                NodeMap {
                    alpha: raw.iter().map(|a| a * span / total).collect(),
                    w: (0..m).map(|_| rng.random_range(0.5..1.5)).collect(),
                    k: (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    b: lower,
                    range,
                }
            })
            .collect();
        let var = VarCoefficients::from_vec(
            shape.order,
            n,
            (0..shape.order * n * n)
                .map(|_| rng.random_range(-0.6..0.6))
                .collect(),
        )
        .expect("finite entries");
        let mut interior = |node: usize| {
            let r = maps[node].range;
            r.lower + r.span() * rng.random_range(0.15..0.85)
        };
        let window = (0..shape.order * n).map(|idx| interior(idx % n)).collect();
        let target = (0..n).map(&mut interior).collect();
        Self {
            model: NlVarModel { shape, var, maps },
            window,
            target,
        }
    }

    /// Shape drawn uniformly with `N <= max.n_nodes`, `P <= max.order`,
    /// `M <= max.n_units`.
    pub fn random_shape(seed: u64, max: ModelShape) -> Self {
        let mut rng = rng::substream(seed, 1);
        let shape = ModelShape {
            n_nodes: rng.random_range(1..=max.n_nodes),
            order: rng.random_range(1..=max.order),
            n_units: rng.random_range(1..=max.n_units),
        };
        Self::random(seed, shape)
    }

    pub fn analytic(&self) -> Result<ModelGradient> {
        let (trace, _) = forward_trace_with(
            &self.model,
            &self.window,
            &self.target,
            &InverseOptions::exact(),
        )?;
        grad_timestep(&self.model, &self.window, &self.target, &trace)
    }

    pub fn numeric(&self, step: f64) -> Result<ModelGradient> {
        fd_gradient(&self.model, &self.window, &self.target, step)
    }
}
