//! End-to-end orchestration: fit, train, predict, partition, solve.
//!
//! The full run mirrors the deployment loop: every historical frame is
//! compressed to mixture parameters, the parameter series trains the
//! forecaster, the forecast frame parameterises one convex subproblem
//! per aerial cell, and the per-cell powers sum into the fleet total.
//! Alongside the proposed (forecast-driven) deployment the pipeline
//! scores two references against the *actual* next frame: an
//! illumination-agnostic placement (solved with a dark field) and a
//! perfect-knowledge placement (solved with the actual field). All
//! three are evaluated on the actual field so the totals are
//! comparable.
//!
//! Reports serialize deterministically; wall-clock timings go to a
//! separate structure so two equally-seeded runs emit byte-identical
//! reports.

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::gmm::{fit_gmm, match_components, EmConfig, GmmFrame};
use crate::grid::{write_series, IlluminationGrid};
use crate::gru::{save_checkpoint, GruModel, NormalizationSpec, TrainConfig};
use crate::scenario::{
    generate_series_with_horizon, place_users, write_users_csv, ScenarioConfig,
    SyntheticLightSpec,
};
use crate::solver::{
    build_cell_problem, partition_users, solve_cell, total_power, DeploymentSolution, SolveConfig,
};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::time::Instant;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Everything a full run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    pub lights: SyntheticLightSpec,
    pub em: EmConfig,
    pub train: TrainConfig,
    /// Hidden width of the forecaster.
    pub hidden_dim: usize,
    /// Leading fraction of the series used for training; the rest is
    /// held out for the test error.
    pub train_fraction: f64,
    pub solve: SolveConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        let lights = SyntheticLightSpec::three_blobs(scenario.area_width, scenario.area_height);
        Self {
            scenario,
            lights,
            em: EmConfig::default(),
            train: TrainConfig::default(),
            hidden_dim: 64,
            train_fraction: 0.75,
            solve: SolveConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.lights.validate()?;
        if !(0.0 < self.train_fraction && self.train_fraction <= 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1]".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Mixture fits of a whole series with temporally stable component
/// order, plus the flat feature matrix (rows are time steps).
pub struct FitResult {
    pub frames: Vec<GmmFrame>,
    pub features: Array2<f64>,
}

/// Fit every frame and stabilise component order across time. An
/// all-dark frame becomes a zero-amplitude placeholder centred on the
/// grid instead of failing the series.
///
/// Every frame is fitted with the same seed: neighbouring frames then
/// start from near-identical initialisations and land in the same
/// local optimum, which keeps the parameter series smooth.
pub fn fit_series(grids: &[IlluminationGrid], k: usize, em: &EmConfig) -> Result<FitResult> {
    if grids.is_empty() {
        return Err(Error::SeriesTooShort { len: 0 });
    }
    let mut frames: Vec<GmmFrame> = Vec::with_capacity(grids.len());
    for grid in grids {
        let fitted = match fit_gmm(grid, k, em) {
            Ok((frame, _)) => frame,
            Err(Error::NoIllumination) => GmmFrame::zero(k, grid_center(grid), em.sigma_floor),
            Err(e) => return Err(e),
        };
        let stable = match frames.last() {
            Some(prev) => match_components(prev, &fitted),
            None => fitted, // the fit already arrives canonically ordered
        };
        frames.push(stable);
    }
    let dim = 5 * k + 1;
    let mut features = Array2::zeros((frames.len(), dim));
    for (t, frame) in frames.iter().enumerate() {
        let q = frame.flatten();
        for (j, v) in q.into_iter().enumerate() {
            features[[t, j]] = v;
        }
    }
    Ok(FitResult { frames, features })
}

fn grid_center(grid: &IlluminationGrid) -> Point2 {
    Point2::new(
        grid.origin.x + 0.5 * grid.width as f64 * grid.cell_size,
        grid.origin.y + 0.5 * grid.height as f64 * grid.cell_size,
    )
}

/// A trained forecaster together with its scaling and accuracy.
pub struct TrainedForecaster {
    pub model: GruModel,
    pub norm: NormalizationSpec,
    pub loss_history: Vec<f64>,
    pub rmse_train: f64,
    pub rmse_test: f64,
}

/// Train on the leading `train_fraction` of the feature rows and score
/// one-step-ahead predictions on both segments (raw feature scale).
pub fn train_forecaster(
    features: &Array2<f64>,
    hidden_dim: usize,
    train_fraction: f64,
    cfg: &TrainConfig,
) -> Result<TrainedForecaster> {
    let steps = features.nrows();
    if steps < 4 {
        return Err(Error::SeriesTooShort { len: steps });
    }
    let dim = features.ncols();
    let split = ((steps as f64 * train_fraction).floor() as usize).clamp(2, steps);
    let train_view = features.slice(s![..split, ..]);
    let norm = NormalizationSpec::fit(train_view);
    let normalized = norm.apply(features.view());
    let mut model = GruModel::init(dim, hidden_dim, cfg.seed);
    let loss_history = model.train(normalized.slice(s![..split, ..]), cfg)?;

    // one-step-ahead errors over the whole series, raw scale
    let pass = model.forward(normalized.view())?;
    let mut sq = [0.0f64; 2];
    let mut count = [0usize; 2];
    for t in 0..steps - 1 {
        let predicted = norm.restore(pass.predictions[t].view());
        let segment = usize::from(t + 1 >= split);
        for j in 0..dim {
            let err = predicted[j] - features[[t + 1, j]];
            sq[segment] += err * err;
        }
        count[segment] += dim;
    }
    let rmse = |i: usize| if count[i] > 0 { (sq[i] / count[i] as f64).sqrt() } else { 0.0 };
    Ok(TrainedForecaster {
        model,
        norm,
        loss_history,
        rmse_train: rmse(0),
        rmse_test: rmse(1),
    })
}

/// Feature matrix as headerless CSV, one time step per line.
pub fn write_features_csv(path: &Path, features: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in features.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a feature matrix written by [`write_features_csv`]. The
/// shortest-round-trip float formatting makes the cycle exact.
pub fn read_features_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let perr = |msg: String| Error::Parse { path: path.display().to_string(), msg };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(format!("bad number: {e}")))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(perr("ragged rows".into()));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(perr("empty feature file".into()));
    }
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.concat();
    Array2::from_shape_vec((flat.len() / dim, dim), flat)
        .map_err(|e| perr(format!("bad shape: {e}")))
}

/// The forecast stage's on-disk artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedArtifact {
    /// Raw-scale forecast feature vector.
    pub q: Vec<f64>,
    /// The same vector projected onto a valid mixture frame.
    pub frame: GmmFrame,
}

/// One cell of the placement stage's on-disk artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellDeployment {
    pub users: Vec<usize>,
    pub solution: DeploymentSolution,
}

/// The placement stage's on-disk artifact: forecast-driven solutions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploymentFile {
    pub uavs: Vec<CellDeployment>,
    pub total_power: f64,
}

/// One UAV's share of the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UavReport {
    /// Indices into the scenario's user list.
    pub users: Vec<usize>,
    /// Solution of the forecast-driven subproblem.
    pub solution: DeploymentSolution,
    /// Power this hover position needs under the actual next frame.
    pub evaluated_power: f64,
}

/// Deterministic results of a full run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub status: String,
    pub n_users: usize,
    pub n_uavs: usize,
    pub series_len: usize,
    pub rmse_train: f64,
    pub rmse_test: f64,
    /// Forecast feature vector for the next slot, raw scale.
    pub predicted_next: Vec<f64>,
    pub uavs: Vec<UavReport>,
    /// Sum of the per-UAV evaluated powers (forecast-driven placement
    /// scored on the actual field).
    pub total_power_proposed: f64,
    /// Placement solved with a dark field, scored on the actual field.
    pub total_power_agnostic: f64,
    /// Placement solved with the actual field itself.
    pub total_power_actual: f64,
}

/// Wall-clock seconds per stage; kept out of the report so reports
/// stay byte-identical across equally-seeded runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTimings {
    pub generate_s: f64,
    pub fit_s: f64,
    pub train_s: f64,
    pub solve_s: f64,
    pub total_s: f64,
}

/// Run the whole loop once; see the module docs for the stage order.
///
/// With an artifact directory every stage also serializes its output
/// (frames, users, feature series, checkpoint, forecast, deployment),
/// so any stage can later be re-run standalone from its predecessor's
/// files with identical results.
pub fn run_pipeline(
    config: &PipelineConfig,
    artifacts: Option<&Path>,
) -> Result<(ExperimentReport, StageTimings)> {
    config.validate()?;
    if let Some(dir) = artifacts {
        fs::create_dir_all(dir)?;
    }
    let total_t0 = Instant::now();

    let t0 = Instant::now();
    let (series, horizon) = generate_series_with_horizon(&config.lights, &config.scenario, 1)?;
    let actual_grid = horizon.into_iter().next().expect("requested one future frame");
    let users = place_users(&config.scenario)?;
    if let Some(dir) = artifacts {
        write_series(&dir.join("frames"), &series)?;
        actual_grid.write_csv(&dir.join("actual_next.csv"))?;
        write_users_csv(&dir.join("users.csv"), &users)?;
    }
    let generate_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let k = config.scenario.mixture_components;
    let fit = fit_series(&series, k, &config.em)?;
    if let Some(dir) = artifacts {
        write_features_csv(&dir.join("q_series.csv"), &fit.features)?;
    }
    let fit_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let forecaster =
        train_forecaster(&fit.features, config.hidden_dim, config.train_fraction, &config.train)?;
    let predicted_q = forecaster.model.predict_next(fit.features.view(), &forecaster.norm)?;
    let predicted_frame = GmmFrame::unflatten(predicted_q.as_slice().unwrap(), k, config.em.sigma_floor)?;
    if let Some(dir) = artifacts {
        save_checkpoint(&forecaster.model, &forecaster.norm, &dir.join("gru.ckpt"))?;
        let history: String = forecaster.loss_history.iter().map(|l| format!("{l}\n")).collect();
        write_atomic(&dir.join("loss_history.csv"), history.as_bytes())?;
        let artifact =
            PredictedArtifact { q: predicted_q.to_vec(), frame: predicted_frame.clone() };
        write_json_atomic(&dir.join("predicted.json"), &artifact)?;
    }
    let train_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let actual_frame = fit_or_zero(&actual_grid, k, &config.em)?;
    let cells = partition_users(&users, config.scenario.n_uavs, config.scenario.seed)?;
    let dark = GmmFrame::zero(k, grid_center(&actual_grid), config.em.sigma_floor);

    let mut uavs = Vec::with_capacity(cells.len());
    let mut agnostic_solutions = Vec::with_capacity(cells.len());
    let mut actual_solutions = Vec::with_capacity(cells.len());
    let mut proposed_total = 0.0;
    let mut agnostic_total = 0.0;
    for cell in &cells {
        let cell_users: Vec<_> = cell.iter().map(|&i| users[i]).collect();
        let actual_problem = build_cell_problem(&cell_users, &actual_frame, &config.scenario.channel)?;

        let proposed_problem =
            build_cell_problem(&cell_users, &predicted_frame, &config.scenario.channel)?;
        let solution = solve_cell(&proposed_problem, &config.solve)?;
        let evaluated_power = actual_problem.required_power_at(solution.position);
        proposed_total += evaluated_power;
        uavs.push(UavReport { users: cell.clone(), solution, evaluated_power });

        let agnostic_problem = build_cell_problem(&cell_users, &dark, &config.scenario.channel)?;
        let agnostic = solve_cell(&agnostic_problem, &config.solve)?;
        agnostic_total += actual_problem.required_power_at(agnostic.position);
        agnostic_solutions.push(agnostic);

        actual_solutions.push(solve_cell(&actual_problem, &config.solve)?);
    }
    if let Some(dir) = artifacts {
        let file = DeploymentFile {
            uavs: uavs
                .iter()
                .map(|u| CellDeployment { users: u.users.clone(), solution: u.solution.clone() })
                .collect(),
            total_power: total_power(
                &uavs.iter().map(|u| u.solution.clone()).collect::<Vec<_>>(),
            ),
        };
        write_json_atomic(&dir.join("deployment.json"), &file)?;
    }
    let solve_s = t0.elapsed().as_secs_f64();

    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        status: "ok".into(),
        n_users: users.len(),
        n_uavs: cells.len(),
        series_len: config.scenario.series_len,
        rmse_train: forecaster.rmse_train,
        rmse_test: forecaster.rmse_test,
        predicted_next: predicted_q.to_vec(),
        uavs,
        total_power_proposed: proposed_total,
        total_power_agnostic: agnostic_total,
        total_power_actual: total_power(&actual_solutions),
    };
    let timings = StageTimings {
        generate_s,
        fit_s,
        train_s,
        solve_s,
        total_s: total_t0.elapsed().as_secs_f64(),
    };
    Ok((report, timings))
}

fn fit_or_zero(grid: &IlluminationGrid, k: usize, em: &EmConfig) -> Result<GmmFrame> {
    match fit_gmm(grid, k, em) {
        Ok((frame, _)) => Ok(frame),
        Err(Error::NoIllumination) => Ok(GmmFrame::zero(k, grid_center(grid), em.sigma_floor)),
        Err(e) => Err(e),
    }
}

/// One row of the user-count sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub n_users: usize,
    pub power_proposed: f64,
    pub power_agnostic: f64,
    pub power_actual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_users,power_proposed,power_agnostic,power_actual\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.n_users, r.power_proposed, r.power_agnostic, r.power_actual
            ));
        }
        out
    }
}

/// Sweep the user count, reusing one fitted series and one trained
/// forecaster (the light process does not depend on the users). For
/// each count the proposed, illumination-agnostic and actual-knowledge
/// placements are all scored against the actual next frame.
pub fn run_baseline_comparison(
    config: &PipelineConfig,
    user_counts: &[usize],
) -> Result<ComparisonTable> {
    config.validate()?;
    let (series, horizon) = generate_series_with_horizon(&config.lights, &config.scenario, 1)?;
    let actual_grid = horizon.into_iter().next().expect("requested one future frame");
    let k = config.scenario.mixture_components;
    let fit = fit_series(&series, k, &config.em)?;
    let forecaster =
        train_forecaster(&fit.features, config.hidden_dim, config.train_fraction, &config.train)?;
    let predicted_q = forecaster.model.predict_next(fit.features.view(), &forecaster.norm)?;
    let predicted_frame = GmmFrame::unflatten(predicted_q.as_slice().unwrap(), k, config.em.sigma_floor)?;
    let actual_frame = fit_or_zero(&actual_grid, k, &config.em)?;
    let dark = GmmFrame::zero(k, grid_center(&actual_grid), config.em.sigma_floor);

    let mut rows = Vec::with_capacity(user_counts.len());
    for &count in user_counts {
        let scenario = ScenarioConfig { n_users: count, ..config.scenario.clone() };
        let users = place_users(&scenario)?;
        let cells = partition_users(&users, scenario.n_uavs, scenario.seed)?;
        let mut row = ComparisonRow {
            n_users: count,
            power_proposed: 0.0,
            power_agnostic: 0.0,
            power_actual: 0.0,
        };
        for cell in &cells {
            let cell_users: Vec<_> = cell.iter().map(|&i| users[i]).collect();
            let actual_problem = build_cell_problem(&cell_users, &actual_frame, &scenario.channel)?;
            let proposed =
                solve_cell(&build_cell_problem(&cell_users, &predicted_frame, &scenario.channel)?, &config.solve)?;
            let agnostic =
                solve_cell(&build_cell_problem(&cell_users, &dark, &scenario.channel)?, &config.solve)?;
            let actual = solve_cell(&actual_problem, &config.solve)?;
            row.power_proposed += actual_problem.required_power_at(proposed.position);
            row.power_agnostic += actual_problem.required_power_at(agnostic.position);
            row.power_actual += actual.power;
        }
        rows.push(row);
    }
    Ok(ComparisonTable { rows })
}

/// Serialize as pretty JSON and write atomically (temp file + rename).
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("cannot serialise: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Write bytes through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
