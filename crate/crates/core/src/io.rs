//! Text formats: data and report CSVs, the model file and flat
//! `key = value` configuration files.
//!
//! Floats in CSVs use Rust's shortest round-trip formatting, so parsing and
//! re-writing a file reproduces it byte for byte. Model files use 17
//! significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::baseline::evaluate_linear_detailed;
use crate::error::{Error, Result};
use crate::forward::{evaluate_detailed, MseSummary};
use crate::synthetic::SyntheticConfig;
use crate::training::{OptimizerKind, TrainConfig};
use crate::types::{
    ModelShape, NlVarModel, NodeMap, PanelRole, RangeBounds, TimeSeriesPanel, TrainReport,
    VarCoefficients,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Tolerance for the feasibility re-check when a model file is loaded.
pub const LOAD_FEASIBILITY_TOL: f64 = 1e-9;

// ---------------------------------------------------------------- data CSV

pub fn panel_to_csv(panel: &TimeSeriesPanel) -> String {
    let mut out = String::from("t");
    for i in 0..panel.n_nodes() {
        let _ = write!(out, ",node_{i}");
    }
    out.push('\n');
    for t in 0..panel.n_rows() {
        let _ = write!(out, "{t}");
        for v in panel.row(t) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn panel_from_csv(text: &str, role: PanelRole) -> Result<TimeSeriesPanel> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header must be `t,node_0,...`".into(),
        });
    }
    for (i, c) in cols[1..].iter().enumerate() {
        if *c != format!("node_{i}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("column {} should be `node_{i}`, found `{c}`", i + 1),
            });
        }
    }
    let n = cols.len() - 1;
    let mut data = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines {
        let err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n + 1 {
            return Err(err(format!(
                "expected {} fields, found {}",
                n + 1,
                fields.len()
            )));
        }
        fields[0]
            .parse::<i64>()
            .map_err(|_| err(format!("time index `{}` is not an integer", fields[0])))?;
        for (i, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| err(format!("node_{i}: `{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(format!("node_{i}: non-finite value `{f}`")));
            }
            data.push(v);
        }
        rows += 1;
    }
    TimeSeriesPanel::new(rows, n, data, role)
}

pub const REPORT_CSV_HEADER: &str = "epoch,train_mse,test_mse";

pub fn report_to_csv(report: &TrainReport) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for (e, (tr, te)) in report.train_mse.iter().zip(&report.test_mse).enumerate() {
        let _ = writeln!(out, "{e},{tr},{te}");
    }
    out
}

// -------------------------------------------------------------- key=value

/// Flat `key = value` document. Blank lines and `#` comments are ignored;
/// every key may appear once.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if let Some((first, _)) =
                entries.insert(key.to_string(), (line_no, value.trim().to_string()))
            {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|_| Error::Parse {
                line,
                message: format!("invalid value `{value}` for `{key}`"),
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::InvalidArgument(format!("missing required key `{key}`")))
    }

    /// Whitespace-separated list of floats.
    pub fn take_floats(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, value)) => value
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid number `{s}` in `{key}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// [`take_or`](Self::take_or) plus a range check reported against the
    /// key's line.
    pub fn take_valid<T: FromStr + std::fmt::Display>(
        &mut self,
        key: &str,
        default: T,
        valid: impl FnOnce(&T) -> bool,
        requirement: &str,
    ) -> Result<T> {
        let line = self.line_of(key);
        let value = self.take_or(key, default)?;
        if valid(&value) {
            Ok(value)
        } else {
            Err(Error::Parse {
                line,
                message: format!("`{key}` {requirement}, got {value}"),
            })
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.0)
    }

    /// Fails on the first key nobody asked for (catches typos).
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Parse {
                line,
                message: format!("unknown key `{key}`"),
            }),
        }
    }
}

/// Generation config. Keys: `n_nodes`, `order`, `n_units`, `target_radius`,
/// `noise_std`, `range_lower`, `range_upper`, `t_total`, `burn_in`, `seed`.
pub fn synthetic_config_from(text: &str) -> Result<SyntheticConfig> {
    let mut kv = KeyValues::parse(text)?;
    let def = SyntheticConfig::reference();
    let positive = |v: &usize| *v >= 1;
    let n_nodes = kv.take_valid("n_nodes", def.shape.n_nodes, positive, "must be at least 1")?;
    let order = kv.take_valid("order", def.shape.order, positive, "must be at least 1")?;
    let n_units = kv.take_valid("n_units", def.shape.n_units, positive, "must be at least 1")?;
    let target_radius = kv.take_valid(
        "target_radius",
        def.target_radius,
        |r: &f64| *r > 0.0 && *r < 1.0,
        "must lie in (0, 1)",
    )?;
    let noise_std = kv.take_valid(
        "noise_std",
        def.noise_std,
        |s: &f64| *s >= 0.0 && s.is_finite(),
        "must be non-negative",
    )?;
    let lower: f64 = kv.take_or("range_lower", def.ranges[0].lower)?;
    let upper_line = kv.line_of("range_upper");
    let upper: f64 = kv.take_or("range_upper", def.ranges[0].upper)?;
    let range = RangeBounds::new(lower, upper).map_err(|e| Error::Parse {
        line: upper_line,
        message: e.to_string(),
    })?;
    let config = SyntheticConfig {
        shape: ModelShape::new(n_nodes, order, n_units)?,
        target_radius,
        noise_std,
        ranges: vec![range; n_nodes],
        t_total: kv.take_valid("t_total", def.t_total, positive, "must be at least 1")?,
        burn_in: kv.take_or("burn_in", def.burn_in)?,
        seed: kv.take_or("seed", def.seed)?,
    };
    kv.finish()?;
    Ok(config)
}

/// Key=value manifest describing a generated dataset, including derived
/// per-stage seeds. Accepted back by [`synthetic_config_from`] once the
/// `derived.*` lines (comments) are ignored.
pub fn synthetic_manifest(config: &SyntheticConfig) -> String {
    let r = config.ranges[0];
    format!(
        "n_nodes = {}\norder = {}\nn_units = {}\ntarget_radius = {}\nnoise_std = {}\n\
         range_lower = {}\nrange_upper = {}\nt_total = {}\nburn_in = {}\nseed = {}\n\
         # derived.var_seed = {}\n# derived.maps_seed = {}\n# derived.innovation_seed = {}\n",
        config.shape.n_nodes,
        config.shape.order,
        config.shape.n_units,
        config.target_radius,
        config.noise_std,
        r.lower,
        r.upper,
        config.t_total,
        config.burn_in,
        config.seed,
        config.var_seed(),
        config.maps_seed(),
        config.innovation_seed(),
    )
}

/// Fit config: estimator `order` and `n_units` plus every [`TrainConfig`]
/// field under its own name.
pub fn fit_config_from(text: &str) -> Result<(usize, usize, TrainConfig)> {
    let mut kv = KeyValues::parse(text)?;
    let d = TrainConfig::default();
    let positive = |v: &usize| *v >= 1;
    let order = kv.take_valid("order", 3, positive, "must be at least 1")?;
    let n_units = kv.take_valid("n_units", 5, positive, "must be at least 1")?;
    let config = TrainConfig {
        epochs: kv.take_or("epochs", d.epochs)?,
        batch_size: kv.take_or("batch_size", d.batch_size)?,
        learning_rate: kv.take_or("learning_rate", d.learning_rate)?,
        optimizer: kv.take_or::<OptimizerKind>("optimizer", d.optimizer)?,
        adam_beta1: kv.take_or("adam_beta1", d.adam_beta1)?,
        adam_beta2: kv.take_or("adam_beta2", d.adam_beta2)?,
        adam_epsilon: kv.take_or("adam_epsilon", d.adam_epsilon)?,
        l1_weight: kv.take_or("l1_weight", d.l1_weight)?,
        l2_weight: kv.take_or("l2_weight", d.l2_weight)?,
        test_fraction: kv.take_or("test_fraction", d.test_fraction)?,
        seed: kv.take_or("seed", d.seed)?,
        w_floor: kv.take_or("w_floor", d.w_floor)?,
        range_margin: kv.take_or("range_margin", d.range_margin)?,
    };
    kv.finish()?;
    config.validate()?;
    Ok((order, n_units, config))
}

// ------------------------------------------------------------- model file

/// A persisted model: either the nonlinear model or a linear baseline whose
/// observation maps are the identity.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Nonlinear(NlVarModel),
    Linear(VarCoefficients),
}

impl StoredModel {
    pub fn var(&self) -> &VarCoefficients {
        match self {
            Self::Nonlinear(m) => &m.var,
            Self::Linear(v) => v,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.var().n_nodes()
    }

    /// Teacher-forced one-step MSE under the model's own observation maps.
    pub fn evaluate(&self, panel: &TimeSeriesPanel) -> Result<MseSummary> {
        match self {
            Self::Nonlinear(m) => evaluate_detailed(m, panel),
            Self::Linear(v) => evaluate_linear_detailed(v, panel),
        }
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn save_model(model: &StoredModel) -> String {
    let var = model.var();
    let (n_units, linear) = match model {
        StoredModel::Nonlinear(m) => (m.shape.n_units, false),
        StoredModel::Linear(_) => (0, true),
    };
    let mut out = String::from("# nonlinear VAR model\n");
    let _ = writeln!(out, "format_version = {MODEL_FORMAT_VERSION}");
    let _ = writeln!(out, "n_nodes = {}", var.n_nodes());
    let _ = writeln!(out, "order = {}", var.order());
    let _ = writeln!(out, "n_units = {n_units}");
    let _ = writeln!(out, "linear_identity_maps = {linear}");
    for lag in 0..var.order() {
        let _ = writeln!(
            out,
            "var.lag{} = {}",
            lag + 1,
            join_floats(var.lag_matrix(lag))
        );
    }
    if let StoredModel::Nonlinear(m) = model {
        for (i, map) in m.maps.iter().enumerate() {
            let _ = writeln!(
                out,
                "node{i}.range = {}",
                join_floats(&[map.range.lower, map.range.upper])
            );
            let _ = writeln!(out, "node{i}.alpha = {}", join_floats(&map.alpha));
            let _ = writeln!(out, "node{i}.w = {}", join_floats(&map.w));
            let _ = writeln!(out, "node{i}.k = {}", join_floats(&map.k));
            let _ = writeln!(out, "node{i}.b = {}", join_floats(&[map.b]));
        }
    }
    out
}

pub fn load_model(text: &str) -> Result<StoredModel> {
    let mut kv = KeyValues::parse(text)?;
    let version_line = kv.line_of("format_version");
    let version: u32 = kv.require("format_version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Parse {
            line: version_line,
            message: format!(
                "unsupported format_version {version}, expected {MODEL_FORMAT_VERSION}"
            ),
        });
    }
    let n: usize = kv.require("n_nodes")?;
    let order: usize = kv.require("order")?;
    let n_units: usize = kv.require("n_units")?;
    let linear: bool = kv.require("linear_identity_maps")?;
    if n == 0 || order == 0 {
        return Err(Error::Dimension(
            "n_nodes and order must be at least 1".into(),
        ));
    }

    let mut entries = Vec::with_capacity(order * n * n);
    for lag in 1..=order {
        let key = format!("var.lag{lag}");
        let line = kv.line_of(&key);
        let block = kv
            .take_floats(&key)?
            .ok_or_else(|| Error::InvalidArgument(format!("missing `{key}`")))?;
        if block.len() != n * n {
            return Err(Error::Parse {
                line,
                message: format!("`{key}` has {} values, expected {}", block.len(), n * n),
            });
        }
        entries.extend(block);
    }
    let var = VarCoefficients::from_vec(order, n, entries)?;
    if var.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Constraint("VAR coefficients must be finite".into()));
    }
    if linear {
        kv.finish()?;
        return Ok(StoredModel::Linear(var));
    }

    let shape = ModelShape::new(n, order, n_units)?;
    let mut maps = Vec::with_capacity(n);
    for i in 0..n {
        let mut field = |name: &str, len: usize| -> Result<Vec<f64>> {
            let key = format!("node{i}.{name}");
            let line = kv.line_of(&key);
            let values = kv
                .take_floats(&key)?
                .ok_or_else(|| Error::InvalidArgument(format!("missing `{key}`")))?;
            if values.len() != len {
                return Err(Error::Parse {
                    line,
                    message: format!("`{key}` has {} values, expected {len}", values.len()),
                });
            }
            Ok(values)
        };
        let range = field("range", 2)?;
        let alpha = field("alpha", n_units)?;
        let w = field("w", n_units)?;
        let k = field("k", n_units)?;
        let b = field("b", 1)?[0];
        let range = RangeBounds::new(range[0], range[1])?;
        maps.push(NodeMap {
            alpha,
            w,
            k,
            b,
            range,
        });
    }
    kv.finish()?;
    let model = NlVarModel::new(shape, var, maps)?;
    model.check_feasible(LOAD_FEASIBILITY_TOL)?;
    if let Some(i) = model.maps.iter().position(|m| !(m.slope_mass() > 0.0)) {
        return Err(Error::Constraint(format!(
            "node {i}: map is not strictly increasing"
        )));
    }
    Ok(StoredModel::Nonlinear(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::evaluate_mse;
    use crate::synthetic::generate_dataset;

    fn small_dataset() -> crate::synthetic::Dataset {
        let config = SyntheticConfig {
            shape: ModelShape::new(3, 2, 4).unwrap(),
            ranges: vec![RangeBounds::new(-0.5, 2.0).unwrap(); 3],
            t_total: 120,
            seed: 8,
            ..SyntheticConfig::reference()
        };
        generate_dataset(&config).unwrap()
    }

    #[test]
    fn panel_csv_round_trips_byte_identically() {
        let data = small_dataset();
        let text = panel_to_csv(&data.observed);
        assert!(text.starts_with("t,node_0,node_1,node_2\n0,"));
        assert_eq!(text.lines().count(), 121);
        let back = panel_from_csv(&text, PanelRole::Observed).unwrap();
        assert_eq!(back, data.observed);
        assert_eq!(panel_to_csv(&back), text);
    }

    #[test]
    fn panel_csv_errors_carry_line_numbers() {
        let bad = "t,node_0,node_1\n0,1,2\n1,3\n";
        assert!(matches!(
            panel_from_csv(bad, PanelRole::Observed),
            Err(Error::Parse { line: 3, .. })
        ));
        let bad = "t,node_0\n0,1\nx,2\n";
        assert!(matches!(
            panel_from_csv(bad, PanelRole::Observed),
            Err(Error::Parse { line: 3, .. })
        ));
        let bad = "t,node_0\n0,nan\n";
        assert!(matches!(
            panel_from_csv(bad, PanelRole::Observed),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(panel_from_csv("t,node_1\n", PanelRole::Observed).is_err());
        assert!(panel_from_csv("", PanelRole::Observed).is_err());
    }

    #[test]
    fn model_round_trip_preserves_predictions() {
        let data = small_dataset();
        let stored = StoredModel::Nonlinear(data.ground_truth.clone());
        let text = save_model(&stored);
        let back = load_model(&text).unwrap();
        assert_eq!(back, stored);
        let a = evaluate_mse(&data.ground_truth, &data.observed).unwrap();
        let b = back.evaluate(&data.observed).unwrap().mse;
        assert!((a - b).abs() <= 1e-12);
        assert_eq!(save_model(&back), text);
    }

    #[test]
    fn linear_model_round_trip() {
        let var =
            VarCoefficients::from_vec(2, 2, vec![0.1, -0.2, 1.0 / 3.0, 0.0, 5e-17, 0.4, -0.3, 0.2])
                .unwrap();
        let text = save_model(&StoredModel::Linear(var.clone()));
        assert!(text.contains("linear_identity_maps = true"));
        assert_eq!(load_model(&text).unwrap(), StoredModel::Linear(var));
    }

    #[test]
    fn infeasible_file_names_the_constraint() {
        let text = "format_version = 1\nn_nodes = 1\norder = 1\nn_units = 2\n\
                    linear_identity_maps = false\nvar.lag1 = 0.5\nnode0.range = 0 1\n\
                    node0.alpha = 0.5 0.6\nnode0.w = 1 1\nnode0.k = 0 0\nnode0.b = 0\n";
        match load_model(text) {
            Err(Error::Constraint(msg)) => assert!(msg.contains("sum of alpha"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let wrong_version = text.replace("format_version = 1", "format_version = 2");
        assert!(load_model(&wrong_version).is_err());
        let short = text.replace("node0.k = 0 0", "node0.k = 0");
        assert!(matches!(
            load_model(&short),
            Err(Error::Parse { line: 10, .. })
        ));
    }

    #[test]
    fn hand_written_model_predicts() {
        // f(y) = 2 sigma(y) - 1, one lag with a = 0.5: window z = 0 maps to
        // y = 0, predicts y = 0, so z_hat = f(0) = 0; z = f(1) gives
        // y_hat = 0.5 and z_hat = 2 sigma(0.5) - 1.
        let text = "format_version = 1\nn_nodes = 1\norder = 1\nn_units = 1\n\
                    linear_identity_maps = false\nvar.lag1 = 0.5\nnode0.range = -1 1\n\
                    node0.alpha = 2\nnode0.w = 1\nnode0.k = 0\nnode0.b = -1\n";
        let StoredModel::Nonlinear(model) = load_model(text).unwrap() else {
            panic!("expected nonlinear model");
        };
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let z1 = 2.0 * sig(1.0) - 1.0;
        let z2 = 2.0 * sig(0.5) - 1.0;
        let panel = TimeSeriesPanel::new(3, 1, vec![0.0, z1, z2], PanelRole::Observed).unwrap();
        // first step: window 0 predicts f(0) = 0 against z1
        let expected = (z1 * z1) / 2.0;
        let got = evaluate_mse(&model, &panel).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn config_parsing() {
        let text = "# generation\nn_nodes = 4\nt_total = 5   # short\nseed=11\n";
        let config = synthetic_config_from(text).unwrap();
        assert_eq!(config.shape.n_nodes, 4);
        assert_eq!(config.t_total, 5);
        assert_eq!(config.seed, 11);
        assert_eq!(config.ranges.len(), 4);
        assert_eq!(
            synthetic_config_from(&synthetic_manifest(&config)).unwrap(),
            config
        );

        assert!(matches!(
            synthetic_config_from("n_nodes = 4\nnoise = 3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            synthetic_config_from("seed = x\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            synthetic_config_from("seed = 1\nseed = 2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            synthetic_config_from("seed = 1\ntarget_radius = 1.5\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            synthetic_config_from("range_lower = 1\nrange_upper = 0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            fit_config_from("\nn_units = 0\n"),
            Err(Error::Parse { line: 2, .. })
        ));

        let (order, units, train) =
            fit_config_from("epochs = 0\noptimizer = sgd\norder = 2\n").unwrap();
        assert_eq!(
            (order, units, train.epochs, train.optimizer),
            (2, 5, 0, OptimizerKind::Sgd)
        );
        assert!(fit_config_from("test_fraction = 1.5\n").is_err());
        assert!(fit_config_from("optimizer = rmsprop\n").is_err());
    }

    #[test]
    fn report_csv_layout() {
        let report = TrainReport {
            epochs: 2,
            train_mse: vec![0.5, 0.25],
            test_mse: vec![0.75, 0.125],
            final_model_digest: Default::default(),
        };
        assert_eq!(
            report_to_csv(&report),
            "epoch,train_mse,test_mse\n0,0.5,0.75\n1,0.25,0.125\n"
        );
    }
}
