//! Command-line front end: generate scenarios, fit and forecast the
//! illumination series, place the fleet, and run the comparison sweep.
//!
//! Stages communicate through files in the artifact directory (`--out`),
//! so each subcommand can be re-run standalone from its predecessor's
//! output:
//!
//! ```text
//! generate  -> config.toml, frames/frame_<t>.csv, actual_next.csv, users.csv
//! fit       -> q_series.csv
//! train     -> gru.ckpt, loss_history.csv
//! predict   -> predicted.json
//! deploy    -> deployment.json
//! pipeline  -> all of the above + report.json, timings.json
//! compare   -> comparison.csv
//! ```

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};

use luxdeploy_core::gmm::GmmFrame;
use luxdeploy_core::grid::{load_series, write_series};
use luxdeploy_core::gru::{load_checkpoint, save_checkpoint};
use luxdeploy_core::pipeline::{
    fit_series, read_features_csv, run_baseline_comparison, run_pipeline, train_forecaster,
    write_atomic, write_features_csv, write_json_atomic, CellDeployment, DeploymentFile,
    PipelineConfig, PredictedArtifact, REPORT_SCHEMA_VERSION,
};
use luxdeploy_core::scenario::{
    generate_series_with_horizon, place_users, read_users_csv, write_users_csv,
};
use luxdeploy_core::solver::{build_cell_problem, partition_users, solve_cell, total_power};

#[derive(Parser)]
#[command(
    name = "luxdeploy",
    version,
    about = "Illumination-aware placement and power control for VLC-equipped UAVs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scenario: illumination frames and users
    Generate(CommonArgs),
    /// Fit mixture parameters to every frame, producing the feature series
    Fit(CommonArgs),
    /// Train the forecaster on the feature series
    Train(CommonArgs),
    /// Forecast the next frame's mixture parameters
    Predict(CommonArgs),
    /// Place the fleet and set powers from the forecast frame
    Deploy(CommonArgs),
    /// Run every stage end to end and write the evaluation report
    Pipeline(CommonArgs),
    /// Sweep the user count and compare against the baselines
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Configuration file (TOML); falls back to <out>/config.toml, then
    /// to the built-in reference setup
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every stage seed
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the training epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the user count
    #[arg(long)]
    users: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated user counts for the sweep
    #[arg(long, default_value = "10,20,30,40,50")]
    sweep: String,
}

fn load_config(args: &CommonArgs) -> Result<PipelineConfig> {
    let mut config: PipelineConfig = if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?
    } else {
        let fallback = args.out.join("config.toml");
        if fallback.exists() {
            let text = fs::read_to_string(&fallback)?;
            toml::from_str(&text)
                .with_context(|| format!("cannot parse {}", fallback.display()))?
        } else {
            PipelineConfig::default()
        }
    };
    if let Some(seed) = args.seed {
        config.scenario.seed = seed;
        config.em.seed = seed;
        config.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    if let Some(users) = args.users {
        config.scenario.n_users = users;
    }
    Ok(config)
}

fn save_config(dir: &Path, config: &PipelineConfig) -> Result<()> {
    let text = toml::to_string_pretty(config).context("cannot serialise config")?;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("config.toml"), text.as_bytes())?;
    Ok(())
}

fn cmd_generate(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    save_config(&args.out, &config)?;
    let (series, horizon) = generate_series_with_horizon(&config.lights, &config.scenario, 1)?;
    write_series(&args.out.join("frames"), &series)?;
    horizon[0].write_csv(&args.out.join("actual_next.csv"))?;
    let users = place_users(&config.scenario)?;
    write_users_csv(&args.out.join("users.csv"), &users)?;
    println!(
        "generated {} frames ({}x{} px) and {} users into {}",
        series.len(),
        series[0].width,
        series[0].height,
        users.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    let frames = load_series(&args.out.join("frames"))?;
    let fit = fit_series(&frames, config.scenario.mixture_components, &config.em)?;
    write_features_csv(&args.out.join("q_series.csv"), &fit.features)?;
    println!(
        "fitted {} frames into a {}x{} feature series",
        frames.len(),
        fit.features.nrows(),
        fit.features.ncols()
    );
    Ok(())
}

fn cmd_train(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    let features = read_features_csv(&args.out.join("q_series.csv"))?;
    let forecaster =
        train_forecaster(&features, config.hidden_dim, config.train_fraction, &config.train)?;
    save_checkpoint(&forecaster.model, &forecaster.norm, &args.out.join("gru.ckpt"))?;
    let history: String = forecaster.loss_history.iter().map(|l| format!("{l}\n")).collect();
    write_atomic(&args.out.join("loss_history.csv"), history.as_bytes())?;
    println!(
        "trained {} epochs: loss {:.3e} -> {:.3e}, rmse train {:.4e} / test {:.4e}",
        forecaster.loss_history.len(),
        forecaster.loss_history.first().copied().unwrap_or(f64::NAN),
        forecaster.loss_history.last().copied().unwrap_or(f64::NAN),
        forecaster.rmse_train,
        forecaster.rmse_test
    );
    Ok(())
}

fn cmd_predict(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    let features = read_features_csv(&args.out.join("q_series.csv"))?;
    let (model, norm) = load_checkpoint(&args.out.join("gru.ckpt"))?;
    let q = model.predict_next(features.view(), &norm)?;
    let frame = GmmFrame::unflatten(
        q.as_slice().context("contiguous prediction")?,
        config.scenario.mixture_components,
        config.em.sigma_floor,
    )?;
    let artifact = PredictedArtifact { q: q.to_vec(), frame };
    write_json_atomic(&args.out.join("predicted.json"), &artifact)?;
    println!("forecast written: amplitude {:.4e}", artifact.q[0]);
    Ok(())
}

fn cmd_deploy(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    let users = read_users_csv(&args.out.join("users.csv"))?;
    let predicted: PredictedArtifact = read_json(&args.out.join("predicted.json"))?;
    let cells = partition_users(&users, config.scenario.n_uavs, config.scenario.seed)?;
    let mut uavs = Vec::with_capacity(cells.len());
    for cell in &cells {
        let cell_users: Vec<_> = cell.iter().map(|&i| users[i]).collect();
        let problem = build_cell_problem(&cell_users, &predicted.frame, &config.scenario.channel)?;
        let solution = solve_cell(&problem, &config.solve)?;
        uavs.push(CellDeployment { users: cell.clone(), solution });
    }
    let solutions: Vec<_> = uavs.iter().map(|u| u.solution.clone()).collect();
    let file = DeploymentFile { uavs, total_power: total_power(&solutions) };
    write_json_atomic(&args.out.join("deployment.json"), &file)?;
    for (i, u) in file.uavs.iter().enumerate() {
        println!(
            "uav {}: ({:.2}, {:.2}) m, {:.4} W, {} users, {} iterations",
            i,
            u.solution.position.x,
            u.solution.position.y,
            u.solution.power,
            u.users.len(),
            u.solution.iterations
        );
    }
    println!("total transmit power: {:.4} W", file.total_power);
    Ok(())
}

fn cmd_pipeline(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    save_config(&args.out, &config)?;
    match run_pipeline(&config, Some(&args.out)) {
        Ok((report, timings)) => {
            write_json_atomic(&args.out.join("report.json"), &report)?;
            write_json_atomic(&args.out.join("timings.json"), &timings)?;
            println!(
                "pipeline ok: proposed {:.4} W | agnostic {:.4} W | actual {:.4} W",
                report.total_power_proposed,
                report.total_power_agnostic,
                report.total_power_actual
            );
            println!(
                "rmse train {:.4e} / test {:.4e}; total {:.2} s",
                report.rmse_train, report.rmse_test, timings.total_s
            );
            Ok(())
        }
        Err(e) => {
            // leave a machine-readable trace of the failure
            let partial = serde_json::json!({
                "schema_version": REPORT_SCHEMA_VERSION,
                "status": format!("error: {e}"),
            });
            let _ = write_json_atomic(&args.out.join("report.json"), &partial);
            Err(e.into())
        }
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let counts: Vec<usize> = args
        .sweep
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .context("bad --sweep list")?;
    if counts.is_empty() {
        bail!("--sweep needs at least one user count");
    }
    let table = run_baseline_comparison(&config, &counts)?;
    fs::create_dir_all(&args.common.out)?;
    write_atomic(&args.common.out.join("comparison.csv"), table.to_csv().as_bytes())?;
    println!("n_users  proposed  agnostic  actual  reduction");
    for row in &table.rows {
        let reduction = 1.0 - row.power_proposed / row.power_agnostic;
        println!(
            "{:>7}  {:>8.4}  {:>8.4}  {:>6.4}  {:>8.2}%",
            row.n_users, row.power_proposed, row.power_agnostic, row.power_actual,
            100.0 * reduction
        );
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Deploy(args) => cmd_deploy(args),
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Compare(args) => cmd_compare(args),
    }
}
