//! `nlvar`: generate synthetic data, fit nonlinear and linear VAR models,
//! evaluate them and extract interaction graphs.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlvar_core::baseline::{fit_ols, DEFAULT_RIDGE};
use nlvar_core::experiment::{run_comparison, ComparisonConfig};
use nlvar_core::forward::forward_trace_with;
use nlvar_core::gradients::{
    compare_gradients, BlockErrors, GradcheckInstance, ModelGradient, RELATIVE_ERROR_FLOOR,
};
use nlvar_core::io::{
    fit_config_from, load_model, panel_from_csv, panel_to_csv, report_to_csv, save_model,
    synthetic_config_from, synthetic_manifest, StoredModel,
};
use nlvar_core::monotone::InverseOptions;
use nlvar_core::synthetic::generate_dataset;
use nlvar_core::topology::extract_topology;
use nlvar_core::training::fit;
use nlvar_core::{Error, ModelShape, PanelRole};

const GRADCHECK_TOL: f64 = 1e-5;
const ZERO_RESIDUAL_ABS_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "nlvar",
    version,
    about = "Nonlinear VAR identification with monotone node maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a random nonlinear VAR model.
    Generate {
        /// key=value generation config; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Writes PREFIX_observed.csv, PREFIX_latent.csv, PREFIX_model.txt
        /// and PREFIX_manifest.txt
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the nonlinear model and write the model and per-epoch MSE curves.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// key=value training config; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        report_out: PathBuf,
    },
    /// Fit a linear VAR by least squares.
    FitLinear {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Print teacher-forced one-step MSE, overall and per node.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the edges whose largest lag coefficient exceeds the threshold.
    ///
    /// The latent space is identified only up to a per-node
    /// reparameterization, so compare edge supports rather than strengths
    /// across models.
    Topology {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: u64,
        #[arg(long, default_value_t = 4)]
        max_nodes: usize,
        #[arg(long, default_value_t = 3)]
        max_order: usize,
        #[arg(long, default_value_t = 5)]
        max_units: usize,
        /// Use targets equal to the model's own prediction
        #[arg(long)]
        zero_residual: bool,
        /// Perturb the analytic gradient (exercises the failure path)
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Run the nonlinear-vs-linear comparison on the reference setup.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Writes PREFIX_seed<k>.csv training curves when given
        #[arg(long)]
        report_prefix: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Writes every file or none: on failure the files already written are removed.
fn write_all(outputs: &[(PathBuf, String)]) -> Result<(), Error> {
    for (idx, (path, contents)) in outputs.iter().enumerate() {
        if let Err(e) = fs::write(path, contents) {
            for (done, _) in &outputs[..idx] {
                let _ = fs::remove_file(done);
            }
            return Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            )));
        }
    }
    Ok(())
}

fn generate(config: Option<&Path>, out: &Path) -> Result<(), Error> {
    let text = match config {
        Some(p) => read(p)?,
        None => String::new(),
    };
    let config = synthetic_config_from(&text)?;
    let data = generate_dataset(&config)?;
    write_all(&[
        (
            with_suffix(out, "_observed.csv"),
            panel_to_csv(&data.observed),
        ),
        (with_suffix(out, "_latent.csv"), panel_to_csv(&data.latent)),
        (
            with_suffix(out, "_model.txt"),
            save_model(&StoredModel::Nonlinear(data.ground_truth)),
        ),
        (
            with_suffix(out, "_manifest.txt"),
            synthetic_manifest(&config),
        ),
    ])
}

fn fit_nonlinear(
    data: &Path,
    config: Option<&Path>,
    model_out: &Path,
    report_out: &Path,
) -> Result<(), Error> {
    let panel = panel_from_csv(&read(data)?, PanelRole::Observed)?;
    let text = match config {
        Some(p) => read(p)?,
        None => String::new(),
    };
    let (order, n_units, train) = fit_config_from(&text)?;
    let shape = ModelShape::new(panel.n_nodes(), order, n_units)?;
    let (model, report) = fit(&panel, shape, &train)?;
    let digest = &report.final_model_digest;
    if let (Some(epoch), Some(mse)) = (digest.best_epoch, digest.best_test_mse) {
        println!("best test MSE {mse} at epoch {epoch}");
    }
    if digest.clamped_inversions > 0 {
        eprintln!(
            "warning: {} observations fell outside the fitted map images and were clamped",
            digest.clamped_inversions
        );
    }
    write_all(&[
        (
            model_out.to_path_buf(),
            save_model(&StoredModel::Nonlinear(model)),
        ),
        (report_out.to_path_buf(), report_to_csv(&report)),
    ])
}

fn fit_linear(data: &Path, order: usize, ridge: f64, model_out: &Path) -> Result<(), Error> {
    let panel = panel_from_csv(&read(data)?, PanelRole::Observed)?;
    let var = fit_ols(&panel, order, ridge)?;
    write_all(&[(
        model_out.to_path_buf(),
        save_model(&StoredModel::Linear(var)),
    )])
}

fn eval(model: &Path, data: &Path) -> Result<(), Error> {
    let model = load_model(&read(model)?)?;
    let panel = panel_from_csv(&read(data)?, PanelRole::Observed)?;
    let summary = model.evaluate(&panel)?;
    println!("mse {}", summary.mse);
    for (i, v) in summary.per_node.iter().enumerate() {
        println!("node_{i} {v}");
    }
    if summary.clamped > 0 {
        println!("clamped {}", summary.clamped);
    }
    Ok(())
}

fn topology(model: &Path, threshold: f64, out: &Path) -> Result<(), Error> {
    let model = load_model(&read(model)?)?;
    let edges = extract_topology(model.var(), threshold)?;
    write_all(&[(out.to_path_buf(), edges.to_csv())])
}

/// Largest absolute analytic-minus-numeric difference.
fn max_abs_difference(a: &ModelGradient, b: &ModelGradient) -> f64 {
    a.to_vec()
        .iter()
        .zip(b.to_vec())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Returns whether the check passed. With zero residuals the true gradient
/// vanishes and relative errors only measure finite-difference truncation,
/// so that mode judges the absolute difference instead.
fn gradcheck(
    seed: u64,
    instances: u64,
    max: ModelShape,
    zero_residual: bool,
    corrupt: bool,
) -> Result<bool, Error> {
    let mut worst = BlockErrors::default();
    let mut worst_abs = 0.0_f64;
    for idx in 0..instances {
        let mut inst = GradcheckInstance::random_shape(seed.wrapping_add(idx), max);
        if zero_residual {
            let (trace, _) = forward_trace_with(
                &inst.model,
                &inst.window,
                &inst.target,
                &InverseOptions::exact(),
            )?;
            inst.target = trace.z_hat;
        }
        let mut analytic = inst.analytic()?;
        if corrupt {
            analytic.d_var.as_mut_slice()[0] += 1e-3 + 1e-2 * analytic.d_var.as_slice()[0].abs();
        }
        let numeric = inst.numeric(1e-6)?;
        worst.merge(&compare_gradients(
            &analytic,
            &numeric,
            RELATIVE_ERROR_FLOOR,
        ));
        worst_abs = worst_abs.max(max_abs_difference(&analytic, &numeric));
    }
    for (name, err) in worst.named() {
        println!("{name:<6} {err:.3e}");
    }
    println!("abs    {worst_abs:.3e}");
    let pass = if zero_residual {
        worst_abs < ZERO_RESIDUAL_ABS_TOL
    } else {
        worst.max() < GRADCHECK_TOL
    };
    println!(
        "{} ({instances} instances, {} tolerance {:e})",
        if pass { "PASS" } else { "FAIL" },
        if zero_residual {
            "absolute"
        } else {
            "relative"
        },
        if zero_residual {
            ZERO_RESIDUAL_ABS_TOL
        } else {
            GRADCHECK_TOL
        },
    );
    Ok(pass)
}

fn compare(
    seeds: &[u64],
    epochs: Option<usize>,
    report_prefix: Option<&Path>,
) -> Result<(), Error> {
    println!(
        "seed,nonlinear_best_test_mse,best_epoch,linear_test_mse,ground_truth_test_mse,improvement"
    );
    for &seed in seeds {
        let mut config = ComparisonConfig::reference(seed);
        if let Some(e) = epochs {
            config.train.epochs = e;
        }
        let result = run_comparison(&config)?;
        println!(
            "{seed},{},{},{},{},{:.4}",
            result.best_test_mse(),
            result
                .report
                .final_model_digest
                .best_epoch
                .map_or(String::from("-"), |e| e.to_string()),
            result.linear_test_mse,
            result.ground_truth_test_mse,
            result.improvement()
        );
        if let Some(prefix) = report_prefix {
            write_all(&[(
                with_suffix(prefix, &format!("_seed{seed}.csv")),
                report_to_csv(&result.report),
            )])?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Generate { config, out } => generate(config.as_deref(), &out)?,
        Command::Fit {
            data,
            config,
            model_out,
            report_out,
        } => fit_nonlinear(&data, config.as_deref(), &model_out, &report_out)?,
        Command::FitLinear {
            data,
            order,
            ridge,
            model_out,
        } => fit_linear(&data, order, ridge, &model_out)?,
        Command::Eval { model, data } => eval(&model, &data)?,
        Command::Topology {
            model,
            threshold,
            out,
        } => topology(&model, threshold, &out)?,
        Command::Gradcheck {
            seed,
            instances,
            max_nodes,
            max_order,
            max_units,
            zero_residual,
            corrupt,
        } => {
            let max = ModelShape::new(max_nodes, max_order, max_units)?;
            if !gradcheck(seed, instances, max, zero_residual, corrupt)? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Compare {
            seeds,
            epochs,
            report_prefix,
        } => compare(&seeds, epochs, report_prefix.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
