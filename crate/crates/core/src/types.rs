//! Shared domain types and range inference.

use crate::error::{Error, Result};

/// Number of nodes `N`, VAR order `P` and hidden units per node map `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub n_nodes: usize,
    pub order: usize,
    pub n_units: usize,
}

impl ModelShape {
    pub fn new(n_nodes: usize, order: usize, n_units: usize) -> Result<Self> {
        if n_nodes == 0 || order == 0 || n_units == 0 {
            return Err(Error::InvalidArgument(format!(
                "shape entries must be positive, got N={n_nodes} P={order} M={n_units}"
            )));
        }
        Ok(Self {
            n_nodes,
            order,
            n_units,
        })
    }
}

/// VAR coefficient tensor, `order` matrices of size `n_nodes x n_nodes`.
///
/// Stored lag-major, row-major: entry `(lag, i, j)` is the weight of node `j`
/// at time `t - lag - 1` in the prediction of node `i` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarCoefficients {
    order: usize,
    n_nodes: usize,
    entries: Vec<f64>,
}

impl VarCoefficients {
    pub fn zeros(order: usize, n_nodes: usize) -> Self {
        Self {
            order,
            n_nodes,
            entries: vec![0.0; order * n_nodes * n_nodes],
        }
    }

    pub fn from_vec(order: usize, n_nodes: usize, entries: Vec<f64>) -> Result<Self> {
        if order == 0 || n_nodes == 0 {
            return Err(Error::InvalidArgument(
                "VAR order and node count must be positive".into(),
            ));
        }
        if entries.len() != order * n_nodes * n_nodes {
            return Err(Error::Dimension(format!(
                "expected {} VAR entries for P={order} N={n_nodes}, got {}",
                order * n_nodes * n_nodes,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "VAR entry {pos} is not finite"
            )));
        }
        Ok(Self {
            order,
            n_nodes,
            entries,
        })
    }

    /// `P = 1` coefficients equal to the `n x n` identity.
    pub fn identity(n_nodes: usize) -> Self {
        let mut var = Self::zeros(1, n_nodes);
        for i in 0..n_nodes {
            var.set(0, i, i, 1.0);
        }
        var
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    fn index(&self, lag: usize, i: usize, j: usize) -> usize {
        debug_assert!(lag < self.order && i < self.n_nodes && j < self.n_nodes);
        (lag * self.n_nodes + i) * self.n_nodes + j
    }

    #[inline]
    pub fn get(&self, lag: usize, i: usize, j: usize) -> f64 {
        self.entries[self.index(lag, i, j)]
    }

    #[inline]
    pub fn set(&mut self, lag: usize, i: usize, j: usize, value: f64) {
        let idx = self.index(lag, i, j);
        self.entries[idx] = value;
    }

    /// Row-major `N x N` block for one lag (0-based).
    pub fn lag_matrix(&self, lag: usize) -> &[f64] {
        let n2 = self.n_nodes * self.n_nodes;
        &self.entries[lag * n2..(lag + 1) * n2]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Open image interval `(lower, upper)` of a node map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeBounds {
    pub lower: f64,
    pub upper: f64,
}

impl RangeBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "range bounds must be finite with lower < upper, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    #[inline]
    pub fn span(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.lower && z <= self.upper
    }
}

/// Parameters of one node's monotone map
/// `f(y) = sum_j alpha_j * sigmoid(w_j * y - k_j) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMap {
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
    pub k: Vec<f64>,
    pub b: f64,
    pub range: RangeBounds,
}

impl NodeMap {
    pub fn new(
        alpha: Vec<f64>,
        w: Vec<f64>,
        k: Vec<f64>,
        b: f64,
        range: RangeBounds,
    ) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != w.len() || alpha.len() != k.len() {
            return Err(Error::Dimension(format!(
                "alpha, w, k must share a positive length, got {}, {}, {}",
                alpha.len(),
                w.len(),
                k.len()
            )));
        }
        Ok(Self {
            alpha,
            w,
            k,
            b,
            range,
        })
    }

    pub fn n_units(&self) -> usize {
        self.alpha.len()
    }

    /// Strength of monotonicity; the map is strictly increasing iff this is positive.
    pub fn slope_mass(&self) -> f64 {
        self.alpha.iter().zip(&self.w).map(|(a, w)| a * w).sum()
    }

    /// Checks the feasible-set constraints: non-negative `alpha` and `w`,
    /// `sum(alpha) = span` and `b = lower`, with absolute tolerance `tol`.
    pub fn check_feasible(&self, tol: f64) -> Result<()> {
        let all_finite = self
            .alpha
            .iter()
            .chain(&self.w)
            .chain(&self.k)
            .chain(std::iter::once(&self.b))
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Constraint("map parameters must be finite".into()));
        }
        if let Some(j) = self.alpha.iter().position(|&a| a < 0.0) {
            return Err(Error::Constraint(format!(
                "alpha[{j}] = {} is negative",
                self.alpha[j]
            )));
        }
        if let Some(j) = self.w.iter().position(|&w| w < 0.0) {
            return Err(Error::Constraint(format!(
                "w[{j}] = {} is negative",
                self.w[j]
            )));
        }
        let total: f64 = self.alpha.iter().sum();
        let span = self.range.span();
        if (total - span).abs() > tol * span.max(1.0) {
            return Err(Error::Constraint(format!(
                "sum of alpha is {total}, expected range span {span}"
            )));
        }
        if (self.b - self.range.lower).abs() > tol * self.range.lower.abs().max(1.0) {
            return Err(Error::Constraint(format!(
                "b = {} differs from range lower bound {}",
                self.b, self.range.lower
            )));
        }
        Ok(())
    }
}

/// Nonlinear VAR model: latent coefficients plus one monotone map per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NlVarModel {
    pub shape: ModelShape,
    pub var: VarCoefficients,
    pub maps: Vec<NodeMap>,
}

impl NlVarModel {
    pub fn new(shape: ModelShape, var: VarCoefficients, maps: Vec<NodeMap>) -> Result<Self> {
        if var.order() != shape.order || var.n_nodes() != shape.n_nodes {
            return Err(Error::Dimension(format!(
                "VAR tensor is P={} N={}, shape expects P={} N={}",
                var.order(),
                var.n_nodes(),
                shape.order,
                shape.n_nodes
            )));
        }
        if maps.len() != shape.n_nodes {
            return Err(Error::Dimension(format!(
                "expected {} node maps, got {}",
                shape.n_nodes,
                maps.len()
            )));
        }
        if let Some(i) = maps.iter().position(|m| m.n_units() != shape.n_units) {
            return Err(Error::Dimension(format!(
                "node {i} has {} units, shape expects {}",
                maps[i].n_units(),
                shape.n_units
            )));
        }
        Ok(Self { shape, var, maps })
    }

    pub fn check_feasible(&self, tol: f64) -> Result<()> {
        for (i, map) in self.maps.iter().enumerate() {
            map.check_feasible(tol).map_err(|e| match e {
                Error::Constraint(msg) => Error::Constraint(format!("node {i}: {msg}")),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn ranges(&self) -> Vec<RangeBounds> {
        self.maps.iter().map(|m| m.range).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelRole {
    Observed,
    Latent,
}

/// `T x N` multivariate series, row `t` holding all nodes at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    data: Vec<f64>,
    n_rows: usize,
    n_nodes: usize,
    pub role: PanelRole,
}

impl TimeSeriesPanel {
    pub fn new(n_rows: usize, n_nodes: usize, data: Vec<f64>, role: PanelRole) -> Result<Self> {
        if n_rows == 0 || n_nodes == 0 {
            return Err(Error::InvalidArgument(
                "panel needs at least one row and one node".into(),
            ));
        }
        if data.len() != n_rows * n_nodes {
            return Err(Error::Dimension(format!(
                "panel data has {} values, expected {n_rows}x{n_nodes}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: pos % n_nodes,
                row: pos / n_nodes,
            });
        }
        Ok(Self {
            data,
            n_rows,
            n_nodes,
            role,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], role: PanelRole) -> Result<Self> {
        let n_nodes = rows.first().map_or(0, |r| r.len());
        if let Some(t) = rows.iter().position(|r| r.len() != n_nodes) {
            return Err(Error::Dimension(format!(
                "row {t} has {} values, expected {n_nodes}",
                rows[t].len()
            )));
        }
        Self::new(rows.len(), n_nodes, rows.concat(), role)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_nodes..(t + 1) * self.n_nodes]
    }

    pub fn get(&self, t: usize, node: usize) -> f64 {
        self.data[t * self.n_nodes + node]
    }

    pub fn column(&self, node: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(node).step_by(self.n_nodes).copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Lag-major history window for predicting row `t`: row `p` of the
    /// result holds the observation at `t - p - 1`. Requires `t >= order`.
    pub fn window(&self, t: usize, order: usize) -> Vec<f64> {
        assert!(t >= order && t <= self.n_rows, "window out of bounds");
        let mut out = Vec::with_capacity(order * self.n_nodes);
        for p in 1..=order {
            out.extend_from_slice(self.row(t - p));
        }
        out
    }

    /// Rows `start..end` as a new panel with the same role.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_rows {
            return Err(Error::InvalidArgument(format!(
                "invalid row range {start}..{end} for panel with {} rows",
                self.n_rows
            )));
        }
        Self::new(
            end - start,
            self.n_nodes,
            self.data[start * self.n_nodes..end * self.n_nodes].to_vec(),
            self.role,
        )
    }
}

/// Intermediate values of one observed-space prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Inverse-mapped history, lag-major `P x N`.
    pub y_tilde: Vec<f64>,
    /// Latent prediction.
    pub y_hat: Vec<f64>,
    /// Observed-space prediction.
    pub z_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelDigest {
    pub var_frobenius: f64,
    pub best_epoch: Option<usize>,
    pub best_test_mse: Option<f64>,
    /// Observations pulled inside a map's image during the final evaluation.
    pub clamped_inversions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
    pub final_model_digest: ModelDigest,
}

/// Default relative margin added on both sides of the observed extent.
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.05;

/// Per-node image intervals covering the observed extent plus a relative margin.
///
/// A constant column is treated as if its span were 1.
pub fn infer_ranges(panel: &TimeSeriesPanel, margin_fraction: f64) -> Result<Vec<RangeBounds>> {
    if panel.role != PanelRole::Observed {
        return Err(Error::InvalidArgument(
            "ranges are inferred from observed panels only".into(),
        ));
    }
    if !(margin_fraction >= 0.0 && margin_fraction.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "margin fraction must be finite and non-negative, got {margin_fraction}"
        )));
    }
    if panel.n_rows() < 2 {
        return Err(Error::TooShort(
            "range inference needs at least two rows".into(),
        ));
    }
    (0..panel.n_nodes())
        .map(|node| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (row, v) in panel.column(node).enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { node, row });
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let mut span = hi - lo;
            if span == 0.0 {
                span = 1.0;
            }
            if margin_fraction == 0.0 && hi == lo {
                // zero margin on a constant column would give an empty interval
                return RangeBounds::new(lo - 0.5, hi + 0.5);
            }
            RangeBounds::new(lo - margin_fraction * span, hi + margin_fraction * span)
        })
        .collect()
}
