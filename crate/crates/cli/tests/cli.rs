use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlvar_core::forward::evaluate_mse;
use nlvar_core::io::{load_model, panel_from_csv, panel_to_csv, save_model, StoredModel};
use nlvar_core::var::{simulate_var_from, InnovationSpec};
use nlvar_core::{
    ModelShape, NlVarModel, NodeMap, PanelRole, RangeBounds, TimeSeriesPanel, VarCoefficients,
};
use tempfile::TempDir;

fn nlvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlvar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn generate_default_config() {
    let dir = TempDir::new().unwrap();
    let prefix = dir.path().join("run");
    let out = nlvar(&["generate", "--out", p(&prefix)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let observed = fs::read_to_string(dir.path().join("run_observed.csv")).unwrap();
    let lines: Vec<&str> = observed.lines().collect();
    assert_eq!(lines.len(), 1001);
    assert_eq!(lines[0].split(',').count(), 11);
    assert_eq!(lines[1].split(',').count(), 11);
    for name in ["run_latent.csv", "run_model.txt", "run_manifest.txt"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let manifest = fs::read_to_string(dir.path().join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 0") && manifest.contains("derived.innovation_seed"));
}

#[test]
fn generate_is_deterministic_and_respects_length() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "gen.cfg", "n_nodes = 3\nt_total = 5\nseed = 4\n");
    for prefix in ["a", "b"] {
        let out = nlvar(&[
            "generate",
            "--config",
            p(&config),
            "--out",
            p(&dir.path().join(prefix)),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = fs::read(dir.path().join("a_observed.csv")).unwrap();
    let b = fs::read(dir.path().join("b_observed.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 6);
    assert_eq!(
        fs::read(dir.path().join("a_latent.csv")).unwrap(),
        fs::read(dir.path().join("b_latent.csv")).unwrap()
    );
}

#[test]
fn bad_config_reports_line_and_exits_1() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "gen.cfg", "n_nodes = 3\nnoise = 0.1\n");
    let out = nlvar(&[
        "generate",
        "--config",
        p(&config),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    assert!(!dir.path().join("x_observed.csv").exists());

    let out = nlvar(&["fit", "--data", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

/// Noiseless two-node data from a known nonlinear model.
fn noiseless_panel() -> (NlVarModel, TimeSeriesPanel) {
    let (c, s) = (0.98 * 0.3f64.cos(), 0.98 * 0.3f64.sin());
    let var = VarCoefficients::from_vec(1, 2, vec![c, -s, s, c]).unwrap();
    let range = RangeBounds::new(-1.0, 1.0).unwrap();
    let maps = vec![
        NodeMap::new(vec![1.2, 0.8], vec![1.0, 2.0], vec![-0.5, 0.7], -1.0, range).unwrap(),
        NodeMap::new(vec![2.0], vec![1.5], vec![0.2], -1.0, range).unwrap(),
    ];
    let latent = simulate_var_from(
        &var,
        &InnovationSpec::new(0.0, 0).unwrap(),
        150,
        0,
        Some(&[1.5, -1.0]),
    )
    .unwrap();
    let values: Vec<f64> = latent
        .as_slice()
        .iter()
        .enumerate()
        .map(|(idx, &y)| nlvar_core::monotone::eval_f(&maps[idx % 2], y))
        .collect();
    let model = NlVarModel {
        shape: ModelShape::new(2, 1, 2).unwrap(),
        var,
        maps: maps
            .into_iter()
            .map(|mut m| {
                // pad to a common unit count with an inactive unit
                if m.alpha.len() == 1 {
                    m.alpha.push(0.0);
                    m.w.push(1.0);
                    m.k.push(0.0);
                }
                m
            })
            .collect(),
    };
    (
        model,
        TimeSeriesPanel::new(150, 2, values, PanelRole::Observed).unwrap(),
    )
}

#[test]
fn fit_writes_model_and_curves() {
    let dir = TempDir::new().unwrap();
    let (_, panel) = noiseless_panel();
    let data = write(&dir, "data.csv", &panel_to_csv(&panel));
    let config = write(
        &dir,
        "fit.cfg",
        "order = 1\nn_units = 3\nepochs = 200\nbatch_size = 16\nlearning_rate = 0.01\nseed = 1\n",
    );
    let model = dir.path().join("model.txt");
    let report = dir.path().join("report.csv");
    let out = nlvar(&[
        "fit",
        "--data",
        p(&data),
        "--config",
        p(&config),
        "--model-out",
        p(&model),
        "--report-out",
        p(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "epoch,train_mse,test_mse");
    assert_eq!(rows.len(), 201);
    let last_train: f64 = rows[200].split(',').nth(1).unwrap().parse().unwrap();
    assert!(last_train < 1e-4, "final train MSE {last_train}");
    assert!(matches!(
        load_model(&fs::read_to_string(&model).unwrap()).unwrap(),
        StoredModel::Nonlinear(_)
    ));
}

#[test]
fn fit_with_zero_epochs_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let (_, panel) = noiseless_panel();
    let data = write(&dir, "data.csv", &panel_to_csv(&panel));
    let config = write(&dir, "fit.cfg", "order = 1\nepochs = 0\n");
    let report = dir.path().join("report.csv");
    let out = nlvar(&[
        "fit",
        "--data",
        p(&data),
        "--config",
        p(&config),
        "--model-out",
        p(&dir.path().join("m.txt")),
        "--report-out",
        p(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&report).unwrap(),
        "epoch,train_mse,test_mse\n"
    );
}

#[test]
fn failed_fit_leaves_no_partial_outputs() {
    let dir = TempDir::new().unwrap();
    let (_, panel) = noiseless_panel();
    let data = write(&dir, "data.csv", &panel_to_csv(&panel));
    let config = write(&dir, "fit.cfg", "order = 1\nepochs = 1\n");
    let model = dir.path().join("m.txt");
    // the report path is a directory, so the second write fails
    let out = nlvar(&[
        "fit",
        "--data",
        p(&data),
        "--config",
        p(&config),
        "--model-out",
        p(&model),
        "--report-out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!model.exists());

    let bad = write(&dir, "bad.cfg", "order = 1\ntest_fraction = 2\n");
    let out = nlvar(&[
        "fit",
        "--data",
        p(&data),
        "--config",
        p(&bad),
        "--model-out",
        p(&model),
        "--report-out",
        p(&dir.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!model.exists());
}

#[test]
fn fit_linear_examples() {
    let dir = TempDir::new().unwrap();
    let zeros = TimeSeriesPanel::new(30, 2, vec![0.0; 60], PanelRole::Observed).unwrap();
    let data = write(&dir, "zeros.csv", &panel_to_csv(&zeros));
    let model = dir.path().join("lin.txt");
    let out = nlvar(&[
        "fit-linear",
        "--data",
        p(&data),
        "--order",
        "2",
        "--model-out",
        p(&model),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let loaded = load_model(&fs::read_to_string(&model).unwrap()).unwrap();
    assert!(matches!(loaded, StoredModel::Linear(_)));
    assert!(loaded.var().as_slice().iter().all(|&a| a == 0.0));

    // without a ridge the normal equations are singular: numerical failure
    let out = nlvar(&[
        "fit-linear",
        "--data",
        p(&data),
        "--order",
        "2",
        "--ridge",
        "0",
        "--model-out",
        p(&model),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    // noiseless linear data is recovered, and reruns are byte-identical
    let truth = VarCoefficients::from_vec(1, 2, vec![0.5, -0.3, 0.2, 0.6]).unwrap();
    let latent = simulate_var_from(
        &truth,
        &InnovationSpec::new(0.0, 0).unwrap(),
        60,
        0,
        Some(&[1.0, 2.0]),
    )
    .unwrap();
    let data = write(&dir, "lin.csv", &panel_to_csv(&latent));
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for path in [&a, &b] {
        let out = nlvar(&[
            "fit-linear",
            "--data",
            p(&data),
            "--order",
            "1",
            "--ridge",
            "0",
            "--model-out",
            p(path),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let est = load_model(&fs::read_to_string(&a).unwrap()).unwrap();
    for (x, y) in est.var().as_slice().iter().zip(truth.as_slice()) {
        assert!((x - y).abs() < 1e-6);
    }
}

fn parse_eval(out: &Output) -> (f64, Vec<f64>) {
    let text = stdout(out);
    let mut mse = f64::NAN;
    let mut nodes = Vec::new();
    for line in text.lines() {
        let (key, value) = line.split_once(' ').unwrap();
        let value: f64 = value.parse().unwrap();
        if key == "mse" {
            mse = value;
        } else if key.starts_with("node_") {
            nodes.push(value);
        }
    }
    (mse, nodes)
}

#[test]
fn eval_matches_library_exactly() {
    let dir = TempDir::new().unwrap();
    let (truth, panel) = noiseless_panel();
    let model = write(
        &dir,
        "truth.txt",
        &save_model(&StoredModel::Nonlinear(truth.clone())),
    );
    let data = write(&dir, "data.csv", &panel_to_csv(&panel));
    let out = nlvar(&["eval", "--model", p(&model), "--data", p(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (mse, nodes) = parse_eval(&out);
    assert!(mse < 1e-12, "{mse}");
    assert_eq!(nodes.len(), 2);
    let reloaded =
        panel_from_csv(&fs::read_to_string(&data).unwrap(), PanelRole::Observed).unwrap();
    assert_eq!(
        mse.to_bits(),
        evaluate_mse(&truth, &reloaded).unwrap().to_bits()
    );

    // a linear model goes through the same protocol
    let lin = write(
        &dir,
        "lin.txt",
        &save_model(&StoredModel::Linear(VarCoefficients::zeros(1, 2))),
    );
    let out = nlvar(&["eval", "--model", p(&lin), "--data", p(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (mse, _) = parse_eval(&out);
    let expected: f64 = (1..150)
        .map(|t| panel.row(t).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / (149.0 * 2.0);
    assert!((mse - expected).abs() < 1e-14);
}

#[test]
fn topology_examples() {
    let dir = TempDir::new().unwrap();
    let zero = write(
        &dir,
        "zero.txt",
        &save_model(&StoredModel::Linear(VarCoefficients::zeros(2, 3))),
    );
    let edges = dir.path().join("edges.csv");
    let out = nlvar(&["topology", "--model", p(&zero), "--out", p(&edges)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&edges).unwrap(),
        "source,destination,strength\n"
    );

    let ident = write(
        &dir,
        "id.txt",
        &save_model(&StoredModel::Linear(VarCoefficients::identity(3))),
    );
    let out = nlvar(&[
        "topology",
        "--model",
        p(&ident),
        "--threshold",
        "0.5",
        "--out",
        p(&edges),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&edges).unwrap(),
        "source,destination,strength\n0,0,1\n1,1,1\n2,2,1\n"
    );

    let (truth, _) = noiseless_panel();
    let model = write(&dir, "nl.txt", &save_model(&StoredModel::Nonlinear(truth)));
    let mut previous: Option<Vec<String>> = None;
    for threshold in ["0.9", "0.5", "0.2", "0.0"] {
        let out = nlvar(&[
            "topology",
            "--model",
            p(&model),
            "--threshold",
            threshold,
            "--out",
            p(&edges),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let pairs: Vec<String> = fs::read_to_string(&edges)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect();
        if let Some(prev) = &previous {
            assert!(
                prev.iter().all(|e| pairs.contains(e)),
                "{prev:?} not in {pairs:?}"
            );
        }
        previous = Some(pairs);
    }
    assert_eq!(previous.unwrap().len(), 4);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let out = nlvar(&["gradcheck"]);
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("PASS"));

    let out = nlvar(&["gradcheck", "--zero-residual", "--instances", "5"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let abs_line = stdout(&out)
        .lines()
        .find(|l| l.starts_with("abs"))
        .unwrap()
        .to_string();
    let err: f64 = abs_line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(err < 1e-9, "{abs_line}");

    let out = nlvar(&["gradcheck", "--corrupt", "--instances", "3"]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn usage_errors_exit_1() {
    let out = nlvar(&["fit-linear", "--order", "two"]);
    assert_eq!(out.status.code(), Some(1));
    let out = nlvar(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}
