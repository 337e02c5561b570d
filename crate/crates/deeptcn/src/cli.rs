//! Command-line surface: `prepare`, `train`, `forecast`, `eval`,
//! `gradcheck`, `sensitivity`.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure. Errors print as a single line on stderr. No command mutates its
//! input files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use deeptcn_core::calendar::{self, Granularity};
use deeptcn_core::gradcheck::op_suite;
use deeptcn_core::heads::HeadKind;
use deeptcn_core::layers::Mode;
use deeptcn_core::model::composite_grad_check;
use deeptcn_core::train::train;

use crate::bench::{self, EvalProtocol, Pooling};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::ingest;
use crate::persist;
use crate::prepare;

#[derive(Parser)]
#[command(
    name = "deeptcn",
    about = "Probabilistic multi-horizon forecasting with dilated causal convolutions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare a dataset into a panel directory.
    Prepare(PrepareArgs),
    /// Train a model; writes checkpoint, history and the effective config.
    Train(TrainArgs),
    /// Forecast from a checkpoint at one origin; writes a CSV dump.
    Forecast(ForecastArgs),
    /// Rolling-window evaluation of a checkpoint or the naive baseline.
    Eval(EvalArgs),
    /// Finite-difference verification of every backward rule.
    Gradcheck(GradcheckArgs),
    /// Train several encoder depths under identical settings and record the
    /// loss curves.
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// electricity, traffic, parts or generic.
    dataset: String,
    /// Input path(s) followed by the output directory. `generic` takes a
    /// values CSV and a static CSV; the others take one input path.
    paths: Vec<PathBuf>,
    /// Holiday calendar CSV (generic only).
    #[arg(long)]
    calendar: Option<PathBuf>,
    /// hourly, daily or monthly (generic only; inferred when omitted).
    #[arg(long)]
    granularity: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoint, history and the echoed config.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Shorthand for model.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for model.head (quantile or gaussian).
    #[arg(long)]
    head: Option<String>,
    /// section.key=value overrides, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prepared panel directory.
    #[arg(long)]
    panel: PathBuf,
    /// Timestamp of the last observed point to condition on.
    #[arg(long)]
    origin: String,
    /// Comma-separated series ids; all panel series when omitted.
    #[arg(long)]
    ids: Option<String>,
    #[arg(long, default_value = "forecast.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate (omit to evaluate the baseline).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate the seasonal-naive baseline instead of a checkpoint.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    panel: PathBuf,
    /// electricity, traffic, parts or custom.
    #[arg(long, default_value = "custom")]
    protocol: String,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Seasonal frequency for MASE and the baseline.
    #[arg(long)]
    season: Option<usize>,
    /// Comma-separated quantile levels.
    #[arg(long, default_value = "0.5,0.9")]
    levels: String,
    /// pooled or per_window_mean.
    #[arg(long, default_value = "pooled")]
    pooling: String,
    /// Report JSON path; the table prints to stdout.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20240601)]
    seed: u64,
    /// Random configurations per operation.
    #[arg(long, default_value_t = 20)]
    configs: usize,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dilation list, e.g. 1,2,4,8,16; repeat the flag per architecture.
    #[arg(long = "dilations", required = true)]
    dilation_lists: Vec<String>,
    #[arg(long, default_value = "sensitivity")]
    out: PathBuf,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

/// Entry point; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Sensitivity(args) => cmd_sensitivity(args),
    }
}

fn cmd_prepare(args: PrepareArgs) -> AppResult<()> {
    let need = match args.dataset.as_str() {
        "generic" => 3,
        _ => 2,
    };
    if args.paths.len() != need {
        return Err(AppError::Config(format!(
            "prepare {} takes {} path(s) followed by the output directory",
            args.dataset,
            need - 1
        )));
    }
    let out = args.paths.last().unwrap().clone();
    let inputs = &args.paths[..args.paths.len() - 1];

    let panel = match args.dataset.as_str() {
        "electricity" => prepare::prepare_electricity(&inputs[0])?,
        "traffic" => prepare::prepare_traffic(&inputs[0])?,
        "parts" => {
            let (panel, counts) = prepare::prepare_parts(&inputs[0])?;
            println!(
                "parts filter: {} of {} series retained ({} sparse, {} silent first 15, {} silent final 15 dropped)",
                counts.retained,
                counts.input,
                counts.dropped_sparse,
                counts.dropped_leading,
                counts.dropped_trailing
            );
            println!(
                "reference counts for the original car-parts data: 2674 raw, 1406 summarized, 1046 after filtering"
            );
            panel
        }
        "generic" => {
            let granularity = match &args.granularity {
                Some(g) => Some(Granularity::parse(g)?),
                None => None,
            };
            ingest::load_panel(
                &inputs[0],
                Some(&inputs[1]),
                args.calendar.as_deref(),
                granularity,
            )?
        }
        other => {
            return Err(AppError::Config(format!(
                "unknown dataset '{other}' (electricity, traffic, parts or generic)"
            )))
        }
    };

    persist::save_panel(&panel, &out)?;
    println!("{} x {}", panel.len(), panel.max_len());
    println!("panel written to {}", out.display());
    Ok(())
}

fn train_overrides(
    mut overrides: Vec<String>,
    seed: Option<u64>,
    head: Option<String>,
) -> Vec<String> {
    if let Some(s) = seed {
        overrides.push(format!("model.seed={s}"));
    }
    if let Some(h) = head {
        overrides.push(format!("model.head=\"{h}\""));
    }
    overrides
}

fn cmd_train(args: TrainArgs) -> AppResult<()> {
    let overrides = train_overrides(args.overrides, args.seed, args.head);
    let (cfg, echo) = RunConfig::load(args.config.as_deref(), &overrides)?;
    if cfg.data.panel.is_empty() {
        return Err(AppError::Config(
            "data.panel must name a prepared panel directory".to_string(),
        ));
    }
    let panel = persist::load_panel_dir(Path::new(&cfg.data.panel))?;
    let schema = cfg.schema_for(&panel);
    let spec = cfg.model_spec()?;
    let train_cfg = cfg.train_config()?;

    let outcome = train(&panel, &spec, &schema, &train_cfg)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), &echo)?;
    let head_label = match spec.head {
        HeadKind::Gaussian => "gaussian",
        _ => "quantile",
    };
    persist::save_history(&outcome.history, head_label, &args.out.join("history.csv"))?;
    let ckpt = args.out.join("checkpoint.dtcn");
    checkpoint::save_checkpoint(&outcome.trained, &ckpt)?;

    if outcome.skipped_series > 0 {
        println!(
            "warning: {} series produced no training window",
            outcome.skipped_series
        );
    }
    println!(
        "trained {} epochs, best epoch {} (selection loss {:.6})",
        outcome.trained.meta.epochs_run,
        outcome.trained.meta.best_epoch,
        outcome.trained.meta.selection_loss
    );
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn cmd_forecast(args: ForecastArgs) -> AppResult<()> {
    let mut tm = checkpoint::load_checkpoint(&args.checkpoint)?;
    let panel = persist::load_panel_dir(&args.panel)?;
    let origin = calendar::parse_stamp(&args.origin)?;
    let ids: Vec<String> = match &args.ids {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => panel.series.iter().map(|s| s.id.clone()).collect(),
    };
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let forecasts = tm.forecast(&panel, &refs, origin)?;
    persist::save_forecasts(&forecasts, panel.granularity, &args.out)?;
    println!(
        "wrote {} forecasts x {} steps to {}",
        forecasts.len(),
        tm.model.spec().horizon,
        args.out.display()
    );
    Ok(())
}

fn parse_levels(raw: &str) -> AppResult<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| AppError::Config(format!("bad quantile level '{s}'")))
        })
        .collect()
}

fn cmd_eval(args: EvalArgs) -> AppResult<()> {
    if args.baseline == args.checkpoint.is_some() {
        return Err(AppError::Config(
            "pass exactly one of --checkpoint or --baseline".to_string(),
        ));
    }
    let panel = persist::load_panel_dir(&args.panel)?;

    let (windows, horizon, season) = match args.protocol.as_str() {
        "electricity" | "traffic" => (7, 24, 24),
        "parts" => (3, 4, 12),
        "custom" => (
            args.windows.unwrap_or(7),
            args.horizon.unwrap_or(24),
            args.season.unwrap_or(panel.granularity.season_length()),
        ),
        other => {
            return Err(AppError::Config(format!(
                "unknown protocol '{other}' (electricity, traffic, parts or custom)"
            )))
        }
    };
    let windows = args.windows.unwrap_or(windows);
    let horizon = args.horizon.unwrap_or(horizon);
    let season = args.season.unwrap_or(season);
    let pooling = match args.pooling.as_str() {
        "pooled" => Pooling::Pooled,
        "per_window_mean" => Pooling::PerWindowMean,
        other => return Err(AppError::Config(format!("unknown pooling '{other}'"))),
    };
    let protocol = EvalProtocol {
        name: args.protocol.clone(),
        windows,
        horizon,
        season,
        levels: parse_levels(&args.levels)?,
        pooling,
    };
    let dataset = args
        .panel
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "panel".to_string());

    let report = if args.baseline {
        bench::eval_seasonal_naive(&panel, &protocol, &dataset)?
    } else {
        let ckpt = args.checkpoint.as_ref().unwrap();
        let mut tm = checkpoint::load_checkpoint(ckpt)?;
        let label = format!(
            "deeptcn-{}",
            match tm.model.head_kind() {
                HeadKind::Gaussian => "gaussian",
                _ => "quantile",
            }
        );
        bench::eval_model(&mut tm, &panel, &protocol, &label, &dataset)?
    };

    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&args.out, json)?;
    print!("{}", report.render_table());
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> AppResult<()> {
    let tolerance = 1e-6;
    let mut worst = 0.0f64;
    let checks = op_suite(args.seed, args.configs)?;
    for c in &checks {
        println!("{:<18} {:>12.3e}", c.name, c.max_rel_err);
        worst = worst.max(c.max_rel_err);
    }
    for (label, head, mode) in [
        ("composite-quantile-train", HeadKind::default_quantile(), Mode::Train),
        ("composite-quantile-infer", HeadKind::default_quantile(), Mode::Infer),
        ("composite-gaussian-train", HeadKind::Gaussian, Mode::Train),
        ("composite-gaussian-infer", HeadKind::Gaussian, Mode::Infer),
    ] {
        let err = composite_grad_check(args.seed, head, mode)?;
        println!("{label:<26} {err:>12.3e}");
        worst = worst.max(err);
    }
    if worst >= tolerance {
        return Err(AppError::Numeric(format!(
            "worst relative error {worst:.3e} exceeds {tolerance:.0e}"
        )));
    }
    println!("all gradients within {tolerance:.0e}");
    Ok(())
}

fn cmd_sensitivity(args: SensitivityArgs) -> AppResult<()> {
    let (cfg, echo) = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    if cfg.data.panel.is_empty() {
        return Err(AppError::Config(
            "data.panel must name a prepared panel directory".to_string(),
        ));
    }
    let panel = persist::load_panel_dir(Path::new(&cfg.data.panel))?;
    let schema = cfg.schema_for(&panel);
    let spec = cfg.model_spec()?;
    let train_cfg = cfg.train_config()?;

    let mut lists = Vec::new();
    for raw in &args.dilation_lists {
        let list: Vec<usize> = raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| AppError::Config(format!("bad dilation '{s}' in '{raw}'")))
            })
            .collect::<AppResult<_>>()?;
        lists.push(list);
    }

    let curves = bench::sensitivity_run(&panel, &schema, &spec, &train_cfg, &lists)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), &echo)?;
    println!("{:<24} {:>12} {:>12}", "dilations", "final_loss", "final_l1");
    for (label, history) in &curves {
        let path = args.out.join(format!("dilations-{label}.csv"));
        persist::save_history(history, "quantile", &path)?;
        let last = history.last().expect("at least one epoch");
        println!("{label:<24} {:>12.6} {:>12.6}", last.train_loss, last.train_l1);
    }
    println!("loss curves written to {}", args.out.display());
    Ok(())
}
