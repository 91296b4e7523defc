//! Constrained training: initialization, projected SGD / Adam, optional
//! L1 / L2 penalties on the VAR coefficients, train/test bookkeeping.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::forward::evaluate_detailed;
use crate::gradients::{grad_batch, ModelGradient, Sample};
use crate::rng;
use crate::types::{
    infer_ranges, ModelDigest, ModelShape, NlVarModel, NodeMap, RangeBounds, TimeSeriesPanel,
    TrainReport, VarCoefficients, DEFAULT_MARGIN_FRACTION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer '{other}', expected sgd or adam"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub test_fraction: f64,
    pub seed: u64,
    /// Lower bound imposed on every `w` after each step.
    pub w_floor: f64,
    /// Relative margin used when inferring each node's image interval.
    pub range_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            l1_weight: 0.0,
            l2_weight: 0.0,
            test_fraction: 0.3,
            seed: 0,
            w_floor: 1e-6,
            range_margin: DEFAULT_MARGIN_FRACTION,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        if !(self.l1_weight >= 0.0 && self.l2_weight >= 0.0) {
            return bad("penalty weights must be non-negative".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if !(self.w_floor > 0.0 && self.w_floor.is_finite()) {
            return bad("w_floor must be positive".into());
        }
        if !(self.range_margin >= 0.0 && self.range_margin.is_finite()) {
            return bad("range_margin must be non-negative".into());
        }
        Ok(())
    }
}

/// Feasible starting point: uniform `alpha`, unit `w`, `k` evenly spaced on
/// `[-2, 2]`, `b` at the lower bound. Only the VAR tensor depends on `seed`.
pub fn init_model(shape: ModelShape, ranges: &[RangeBounds], seed: u64) -> Result<NlVarModel> {
    if ranges.len() != shape.n_nodes {
        return Err(Error::Dimension(format!(
            "{} ranges for {} nodes",
            ranges.len(),
            shape.n_nodes
        )));
    }
    let m = shape.n_units;
    let k: Vec<f64> = if m == 1 {
        vec![0.0]
    } else {
        (0..m)
            .map(|j| -2.0 + 4.0 * j as f64 / (m - 1) as f64)
            .collect()
    };
    let maps = ranges
        .iter()
        .map(|&range| NodeMap {
            alpha: vec![range.span() / m as f64; m],
            w: vec![1.0; m],
            k: k.clone(),
            b: range.lower,
            range,
        })
        .collect();
    let std = 0.1 / ((shape.n_nodes * shape.order) as f64).sqrt();
    let mut rng = rng::seeded(seed);
    let entries = (0..shape.order * shape.n_nodes * shape.n_nodes)
        .map(|_| std * rng::standard_normal(&mut rng))
        .collect();
    let var = VarCoefficients::from_vec(shape.order, shape.n_nodes, entries)?;
    NlVarModel::new(shape, var, maps)
}

/// Euclidean projection of `v` onto `{x >= 0, sum(x) = total}` by sorting
/// and thresholding.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    if v.iter().all(|&x| x >= 0.0) && v.iter().sum::<f64>() == total {
        return v.to_vec();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - total) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projects every node map onto the feasible set: `w >= w_floor`,
/// `alpha` on the simplex scaled to the range span, `b` at the lower bound.
/// VAR coefficients are untouched.
pub fn project_params(model: &NlVarModel, w_floor: f64) -> NlVarModel {
    let mut out = model.clone();
    project_in_place(&mut out, w_floor);
    out
}

pub(crate) fn project_in_place(model: &mut NlVarModel, w_floor: f64) {
    for map in &mut model.maps {
        for w in &mut map.w {
            *w = w.max(w_floor);
        }
        map.alpha = project_simplex(&map.alpha, map.range.span());
        map.b = map.range.lower;
    }
}

pub fn penalty(model: &NlVarModel, l1_weight: f64, l2_weight: f64) -> f64 {
    let coeffs = model.var.as_slice();
    let l1: f64 = coeffs.iter().map(|a| a.abs()).sum();
    let l2: f64 = coeffs.iter().map(|a| a * a).sum();
    l1_weight * l1 + l2_weight * l2
}

pub fn loss_with_penalty(cost: f64, model: &NlVarModel, l1_weight: f64, l2_weight: f64) -> f64 {
    cost + penalty(model, l1_weight, l2_weight)
}

/// Adds the (sub)gradient of the penalty to `grad.d_var`; the L1
/// subgradient at zero is taken as zero.
pub fn add_penalty_gradient(
    grad: &mut ModelGradient,
    model: &NlVarModel,
    l1_weight: f64,
    l2_weight: f64,
) {
    if l1_weight == 0.0 && l2_weight == 0.0 {
        return;
    }
    for (g, &a) in grad
        .d_var
        .as_mut_slice()
        .iter_mut()
        .zip(model.var.as_slice())
    {
        let sign = if a > 0.0 {
            1.0
        } else if a < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g += l1_weight * sign + 2.0 * l2_weight * a;
    }
}

/// Chronological split: the first `round((1 - test_fraction) * T)` rows
/// train, the rest test. Both parts must have more than `order` rows.
pub fn split_panel(
    panel: &TimeSeriesPanel,
    test_fraction: f64,
    order: usize,
) -> Result<(TimeSeriesPanel, TimeSeriesPanel)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let total = panel.n_rows();
    let n_train = ((1.0 - test_fraction) * total as f64).round() as usize;
    let n_test = total.saturating_sub(n_train);
    if n_train <= order || n_test <= order {
        return Err(Error::TooShort(format!(
            "split of {total} rows gives {n_train} train / {n_test} test rows; each needs more than P = {order}"
        )));
    }
    Ok((
        panel.slice_rows(0, n_train)?,
        panel.slice_rows(n_train, total)?,
    ))
}

/// Flattened trainable parameters: VAR entries, then each node's
/// `alpha`, `w`, `k`. `b` is fixed by the range and is not trained.
fn trainable_len(shape: &ModelShape) -> usize {
    shape.order * shape.n_nodes * shape.n_nodes + shape.n_nodes * 3 * shape.n_units
}

fn gather_gradient(grad: &ModelGradient, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(grad.d_var.as_slice());
    for t in &grad.d_theta {
        out.extend_from_slice(&t.d_alpha);
        out.extend_from_slice(&t.d_w);
        out.extend_from_slice(&t.d_k);
    }
}

fn apply_update(model: &mut NlVarModel, step: &[f64]) {
    let nv = model.var.as_slice().len();
    for (p, s) in model.var.as_mut_slice().iter_mut().zip(&step[..nv]) {
        *p -= s;
    }
    let m = model.shape.n_units;
    for (node, map) in model.maps.iter_mut().enumerate() {
        let base = nv + node * 3 * m;
        let block = &step[base..base + 3 * m];
        for j in 0..m {
            map.alpha[j] -= block[j];
            map.w[j] -= block[m + j];
            map.k[j] -= block[2 * m + j];
        }
    }
}

/// First-order update rule. Moment estimates are kept unprojected.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl Optimizer {
    pub fn new(config: &TrainConfig, n_params: usize) -> Self {
        Self {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            epsilon: config.adam_epsilon,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
            steps: 0,
        }
    }

    /// Turns a gradient into the step that is subtracted from the parameters.
    pub fn step(&mut self, grad: &mut [f64]) {
        match self.kind {
            OptimizerKind::Sgd => grad.iter_mut().for_each(|g| *g *= self.learning_rate),
            OptimizerKind::Adam => {
                self.steps += 1;
                let c1 = 1.0 - self.beta1.powi(self.steps);
                let c2 = 1.0 - self.beta2.powi(self.steps);
                for ((g, m), v) in grad.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * *g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * *g * *g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *g = self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
        }
    }
}

/// Position inside the optimization loop, handed to step observers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPosition {
    pub epoch: usize,
    pub batch: usize,
}

pub fn fit(
    data: &TimeSeriesPanel,
    shape: ModelShape,
    config: &TrainConfig,
) -> Result<(NlVarModel, TrainReport)> {
    fit_with_observer(data, shape, config, |_, _| {})
}

/// [`fit`] with a callback invoked on the projected model after every
/// optimizer step.
pub fn fit_with_observer<F>(
    data: &TimeSeriesPanel,
    shape: ModelShape,
    config: &TrainConfig,
    mut observer: F,
) -> Result<(NlVarModel, TrainReport)>
where
    F: FnMut(StepPosition, &NlVarModel),
{
    config.validate()?;
    if data.n_nodes() != shape.n_nodes {
        return Err(Error::Dimension(format!(
            "data has {} nodes, shape expects {}",
            data.n_nodes(),
            shape.n_nodes
        )));
    }
    if data.n_rows() <= shape.order + 1 {
        return Err(Error::TooShort(format!(
            "training needs more than P + 1 = {} rows, got {}",
            shape.order + 1,
            data.n_rows()
        )));
    }
    let ranges = infer_ranges(data, config.range_margin)?;
    let (train, test) = split_panel(data, config.test_fraction, shape.order)?;
    let mut model = init_model(shape, &ranges, config.seed)?;

    let samples: Vec<(Vec<f64>, Vec<f64>)> = (shape.order..train.n_rows())
        .map(|t| (train.window(t, shape.order), train.row(t).to_vec()))
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffler = rng::substream(config.seed, 2);
    let mut optimizer = Optimizer::new(config, trainable_len(&shape));
    let mut flat = Vec::with_capacity(trainable_len(&shape));

    let mut train_mse = Vec::with_capacity(config.epochs);
    let mut test_mse = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffler);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Sample<'_>> = chunk
                .iter()
                .map(|&i| (samples[i].0.as_slice(), samples[i].1.as_slice()))
                .collect();
            let wrap = |e: Error| Error::Training {
                epoch,
                batch: batch_idx,
                source: Box::new(e),
            };
            let mut grad = grad_batch(&model, &batch).map_err(wrap)?;
            add_penalty_gradient(&mut grad, &model, config.l1_weight, config.l2_weight);
            gather_gradient(&grad, &mut flat);
            optimizer.step(&mut flat);
            apply_update(&mut model, &flat);
            project_in_place(&mut model, config.w_floor);
            observer(
                StepPosition {
                    epoch,
                    batch: batch_idx,
                },
                &model,
            );
        }
        let wrap = |e: Error| Error::Training {
            epoch,
            batch: order.len().div_ceil(config.batch_size),
            source: Box::new(e),
        };
        train_mse.push(evaluate_detailed(&model, &train).map_err(wrap)?.mse);
        test_mse.push(evaluate_detailed(&model, &test).map_err(wrap)?.mse);
    }

    let best = test_mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(e, &v)| (e, v));
    let clamped = evaluate_detailed(&model, data)?.clamped;
    let report = TrainReport {
        epochs: config.epochs,
        train_mse,
        test_mse,
        final_model_digest: ModelDigest {
            var_frobenius: model.var.frobenius_norm(),
            best_epoch: best.map(|b| b.0),
            best_test_mse: best.map(|b| b.1),
            clamped_inversions: clamped,
        },
    };
    Ok((model, report))
}
