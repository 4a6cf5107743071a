//! `pseudocal`: calibration-aware diagnostics for pseudo-labelled regression.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pseudocal_cli::adult::{adult_rows_to_table, adult_table, load_adult, AdultConfig};
use pseudocal_cli::report::{emit_json, emit_table_csv, EstimateEnvelope, ReportEnvelope};
use pseudocal_cli::schema::{load_table, LoadedSet, TableSchema};
use pseudocal_cli::{AppError, AppResult};
use pseudocal_core::data::make_folds;
use pseudocal_core::estimators::{
    confident_subset_estimator, hard_estimator, soft_estimator, supervised_baseline,
};
use pseudocal_core::learners::LearnerConfig;
use pseudocal_core::simulation::{run_experiment, ExperimentConfig, ExperimentId};
use pseudocal_core::{run_diagnostic, DiagnosticConfig, LabelledContext};

#[derive(Parser)]
#[command(
    name = "pseudocal",
    version,
    about = "Decide whether confidence thresholding is safe for a downstream regression: \
             residual score variance, attenuation factors, soft/hard/supervised estimators, \
             and seeded Monte Carlo experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (V*, kappa) diagnostic on an unlabelled CSV
    Diagnose(DiagnoseArgs),
    /// Compute a single estimator of tau
    Estimate(EstimateArgs),
    /// Reproduce one of the synthetic experiments (p1..p5)
    Simulate(SimulateArgs),
    /// Run the UCI Adult pipeline (user-supplied CSV)
    Adult(AdultArgs),
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Unlabelled CSV (schema must name a p column)
    #[arg(long)]
    data: PathBuf,
    /// JSON schema file naming column roles
    #[arg(long)]
    schema: PathBuf,
    /// Optional labelled CSV for the supervised branch; uses the same schema
    /// plus its g column (and its p column for the label-leak test)
    #[arg(long)]
    labelled: Option<PathBuf>,
    /// Comma-separated threshold grid
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,0.95")]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attenuation tolerance: kappa is "far from one" beyond it
    #[arg(long, default_value_t = 0.10)]
    kappa_tolerance: f64,
    /// Output report path (- for stdout)
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// One of: soft, hard, supervised, confident
    #[arg(long)]
    method: String,
    /// Threshold for the hard / confident methods
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment id: p1, p2, p3, p4 or p5
    #[arg(long)]
    experiment: String,
    /// Use the published replication counts instead of desk scale
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
    /// Override the replication count
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdultArgs {
    /// Path to the Adult CSV (raw adult.data or a headered export)
    #[arg(long)]
    csv: PathBuf,
    /// Labelled-set sizes, comma separated
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    nl: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Optional output CSV for the results table
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Adult(args) => cmd_adult(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_unlabelled(
    data: &PathBuf,
    schema: &TableSchema,
) -> AppResult<(pseudocal_core::UnlabelledSet, usize)> {
    let table = load_table(data, schema)?;
    match table.set {
        LoadedSet::Unlabelled(u) => Ok((u, table.dropped_rows)),
        LoadedSet::Labelled { .. } => Err(AppError::Validation(
            "expected an unlabelled table (schema with a p column and no g column)".into(),
        )),
    }
}

fn cmd_diagnose(args: DiagnoseArgs) -> AppResult<()> {
    let schema = TableSchema::from_file(&args.schema)?;
    let unlabelled_schema = TableSchema {
        g_column: None,
        ..schema.clone()
    };
    let (u, dropped) = load_unlabelled(&args.data, &unlabelled_schema)?;
    if dropped > 0 {
        eprintln!("note: dropped {dropped} rows with missing values from {:?}", args.data);
    }

    let labelled = match &args.labelled {
        Some(path) => {
            let lschema = TableSchema {
                g_column: schema.g_column.clone().or(Some("g".to_string())),
                ..schema.clone()
            };
            let table = load_table(path, &lschema)?;
            if table.dropped_rows > 0 {
                eprintln!(
                    "note: dropped {} rows with missing values from {:?}",
                    table.dropped_rows, path
                );
            }
            match table.set {
                LoadedSet::Labelled { set, scores } => Some((set, scores)),
                LoadedSet::Unlabelled(_) => {
                    return Err(AppError::Validation(
                        "labelled file lacks the g column".into(),
                    ))
                }
            }
        }
        None => None,
    };

    let cfg = DiagnosticConfig {
        thresholds: args.thresholds,
        folds_k: args.folds,
        learner: LearnerConfig::nuisance_default(),
        kappa_tolerance: args.kappa_tolerance,
        seed: args.seed,
    };
    let report = match &labelled {
        Some((set, Some(scores))) => run_diagnostic(
            &u,
            Some(LabelledContext::with_scores(set, scores)),
            &cfg,
        )?,
        Some((set, None)) => run_diagnostic(&u, Some(LabelledContext::new(set)), &cfg)?,
        None => run_diagnostic(&u, None, &cfg)?,
    };

    eprintln!(
        "V*hat = {:.6}, decision = {}",
        report.v_star_hat,
        report.decision.name()
    );
    let collapsed = report.decision == pseudocal_core::Decision::Collapse;
    emit_json(&ReportEnvelope::new(&report, args.seed), &args.out)?;
    if collapsed {
        return Err(AppError::VStarCollapse(report.v_star_hat));
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> AppResult<()> {
    let schema = TableSchema::from_file(&args.schema)?;
    let threshold = args.threshold.unwrap_or(0.5);
    let seed = args.seed;

    let (envelope, dropped) = match args.method.as_str() {
        "supervised" => {
            let table = load_table(&args.data, &schema)?;
            let set = match table.set {
                LoadedSet::Labelled { set, .. } => set,
                _ => {
                    return Err(AppError::Validation(
                        "supervised estimation needs a labelled table (g column)".into(),
                    ))
                }
            };
            let est = supervised_baseline(&set)?;
            (
                EstimateEnvelope {
                    estimate: est,
                    threshold: None,
                    v_star_hat: None,
                    subset_size: None,
                    kappa_fm: None,
                    dropped_rows: table.dropped_rows,
                    seed,
                    version: env!("CARGO_PKG_VERSION").to_string(),
                },
                table.dropped_rows,
            )
        }
        method @ ("soft" | "hard" | "confident") => {
            let unlabelled_schema = TableSchema {
                g_column: None,
                ..schema
            };
            let (u, dropped) = load_unlabelled(&args.data, &unlabelled_schema)?;
            let folds = make_folds(u.len(), args.folds, seed)?;
            let envelope = match method {
                "soft" => {
                    let d = soft_estimator(&u, &folds, &LearnerConfig::nuisance_default())?;
                    EstimateEnvelope {
                        estimate: d.tau,
                        threshold: None,
                        v_star_hat: Some(d.v_star_hat),
                        subset_size: None,
                        kappa_fm: None,
                        dropped_rows: dropped,
                        seed,
                        version: env!("CARGO_PKG_VERSION").to_string(),
                    }
                }
                "hard" => {
                    let est = hard_estimator(&u, threshold, &folds)?;
                    EstimateEnvelope {
                        estimate: est,
                        threshold: Some(threshold),
                        v_star_hat: None,
                        subset_size: None,
                        kappa_fm: None,
                        dropped_rows: dropped,
                        seed,
                        version: env!("CARGO_PKG_VERSION").to_string(),
                    }
                }
                _ => {
                    let c = confident_subset_estimator(&u, threshold, &folds)?;
                    EstimateEnvelope {
                        estimate: c.tau,
                        threshold: Some(threshold),
                        v_star_hat: None,
                        subset_size: Some(c.subset_size),
                        kappa_fm: Some(c.kappa_fm),
                        dropped_rows: dropped,
                        seed,
                        version: env!("CARGO_PKG_VERSION").to_string(),
                    }
                }
            };
            (envelope, dropped)
        }
        other => {
            return Err(AppError::Validation(format!(
                "unknown method {other:?} (expected soft|hard|supervised|confident)"
            )))
        }
    };
    if dropped > 0 {
        eprintln!("note: dropped {dropped} rows with missing values");
    }
    emit_json(&envelope, &args.out)
}

fn cmd_simulate(args: SimulateArgs) -> AppResult<()> {
    let id = ExperimentId::parse(&args.experiment)?;
    let cfg = ExperimentConfig {
        replications: args.replications,
        paper_scale: args.paper_scale,
        ..ExperimentConfig::default()
    };
    eprintln!(
        "running {} ({} scale, seed {})...",
        id.name(),
        if args.paper_scale { "paper" } else { "desk" },
        args.seed
    );
    let result = run_experiment(id, &cfg, args.seed)?;
    let table = result.to_table();
    emit_table_csv(&table, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_adult(args: AdultArgs) -> AppResult<()> {
    let data = load_adult(&args.csv)?;
    eprintln!(
        "{} rows after dropping {} with missing values; full-sample tau = {:.4} (se {:.4})",
        data.rows, data.dropped_rows, data.tau_full, data.tau_full_se
    );
    let base = AdultConfig {
        csv_path: args.csv.clone(),
        n_l: 0,
        splits: args.splits,
        seed: args.seed,
        threshold: args.threshold,
    };
    let rows = adult_table(&data, &base, &args.nl)?;
    for r in &rows {
        println!(
            "n_L={:>5}: V*={:.4} mse_sup={:.3} bias_soft={:+.3} mse_soft={:.3} \
             bias_hard={:+.3} mse_hard={:.3} decision={}",
            r.n_l,
            r.v_star,
            r.mse_supervised,
            r.bias_soft,
            r.mse_soft,
            r.bias_hard,
            r.mse_hard,
            r.decision.name()
        );
    }
    if let Some(out) = &args.out {
        emit_table_csv(&adult_rows_to_table(&rows, data.tau_full), out)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}
