//! Synthetic scenarios: illumination series, users and their demands.
//!
//! Stands in for real nighttime-radiance data: each light source is a
//! Gaussian blob whose peak breathes sinusoidally and whose centre
//! drifts on a small circle, both with a shared per-blob period, plus
//! optional zero-truncated Gaussian pixel noise. Every artifact is a
//! pure function of the configuration and its seed.

use crate::channel::{ChannelParams, UserDemand};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::grid::IlluminationGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

/// Experiment shape: area, fleet, demands and series length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Service area extent in metres.
    pub area_width: f64,
    pub area_height: f64,
    pub n_users: usize,
    pub n_uavs: usize,
    /// Uniform range of per-user rate demands, Mbit/s.
    pub rate_range_mbps: (f64, f64),
    /// Channel uses per second; converts Mbit/s demands into the
    /// bits-per-channel-use rates the capacity formula works in.
    pub symbol_rate: f64,
    /// Mixture components per frame (K).
    pub mixture_components: usize,
    /// Frames in the historical series (T).
    pub series_len: usize,
    pub channel: ChannelParams,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_width: 20.0,
            area_height: 20.0,
            n_users: 40,
            n_uavs: 4,
            rate_range_mbps: (0.5, 1.5),
            symbol_rate: 1e7,
            mixture_components: 3,
            series_len: 358,
            channel: ChannelParams::default(),
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.area_width > 0.0
            && self.area_height > 0.0
            && self.n_uavs >= 1
            && self.n_users >= self.n_uavs
            && self.rate_range_mbps.0 > 0.0
            && self.rate_range_mbps.1 >= self.rate_range_mbps.0
            && self.symbol_rate > 0.0
            && self.mixture_components >= 1
            && self.series_len >= 10;
        if !ok {
            return Err(Error::Config(format!("invalid scenario: {self:?}")));
        }
        self.channel.validate()
    }
}

/// One synthetic light source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightBlob {
    pub center: Point2,
    /// Gaussian footprint (σx, σy) in metres.
    pub sigma: (f64, f64),
    /// Peak radiance before modulation.
    pub peak: f64,
    /// Radius of the circular centre drift, metres.
    pub drift_amplitude: f64,
    /// Fraction of the peak removed at the dimmest point, in [0, 1].
    pub modulation_depth: f64,
    /// Shared period of modulation and drift, in time slots.
    pub period: f64,
    /// Phase offset in time slots.
    pub phase: f64,
}

/// Full description of the synthetic illumination process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLightSpec {
    pub blobs: Vec<LightBlob>,
    /// Std of the zero-truncated Gaussian pixel noise; 0 disables it.
    pub noise_std: f64,
    /// Raster pitch in metres.
    pub cell_size: f64,
}

impl SyntheticLightSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cell_size > 0.0
            && self.noise_std >= 0.0
            && self.blobs.iter().all(|b| {
                b.peak > 0.0
                    && b.sigma.0 > 0.0
                    && b.sigma.1 > 0.0
                    && (0.0..=1.0).contains(&b.modulation_depth)
                    && b.period >= 2.0
                    && b.drift_amplitude >= 0.0
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid light spec: {self:?}")))
        }
    }

    /// Three breathing sources spread over the area; radiance on the
    /// same scale as the channel's noise floor and illumination demand.
    pub fn three_blobs(area_width: f64, area_height: f64) -> Self {
        let (w, h) = (area_width, area_height);
        Self {
            blobs: vec![
                LightBlob {
                    center: Point2::new(0.25 * w, 0.25 * h),
                    sigma: (0.08 * w, 0.07 * h),
                    peak: 6e-7,
                    drift_amplitude: 0.02 * w,
                    modulation_depth: 0.5,
                    period: 24.0,
                    phase: 0.0,
                },
                LightBlob {
                    center: Point2::new(0.70 * w, 0.30 * h),
                    sigma: (0.06 * w, 0.075 * h),
                    peak: 4.5e-7,
                    drift_amplitude: 0.015 * w,
                    modulation_depth: 0.4,
                    period: 24.0,
                    phase: 8.0,
                },
                LightBlob {
                    center: Point2::new(0.45 * w, 0.75 * h),
                    sigma: (0.09 * w, 0.07 * h),
                    peak: 5e-7,
                    drift_amplitude: 0.025 * w,
                    modulation_depth: 0.6,
                    period: 24.0,
                    phase: 16.0,
                },
            ],
            noise_std: 1.2e-8,
            cell_size: (w.max(h) / 40.0).max(1e-3),
        }
    }

    /// All sources crowded onto the western side, leaving the east
    /// dark: the configuration where light-aware placement pays off.
    /// Peaks sit well above the illumination demand so ambient light
    /// meaningfully raises the power a nearby user needs.
    pub fn skewed(area_width: f64, area_height: f64) -> Self {
        let (w, h) = (area_width, area_height);
        Self {
            blobs: vec![
                LightBlob {
                    center: Point2::new(0.18 * w, 0.25 * h),
                    sigma: (0.09 * w, 0.09 * h),
                    peak: 2e-6,
                    drift_amplitude: 0.015 * w,
                    modulation_depth: 0.4,
                    period: 24.0,
                    phase: 0.0,
                },
                LightBlob {
                    center: Point2::new(0.25 * w, 0.55 * h),
                    sigma: (0.08 * w, 0.10 * h),
                    peak: 1.6e-6,
                    drift_amplitude: 0.02 * w,
                    modulation_depth: 0.5,
                    period: 24.0,
                    phase: 9.0,
                },
                LightBlob {
                    center: Point2::new(0.17 * w, 0.82 * h),
                    sigma: (0.08 * w, 0.08 * h),
                    peak: 1.8e-6,
                    drift_amplitude: 0.015 * w,
                    modulation_depth: 0.45,
                    period: 24.0,
                    phase: 17.0,
                },
            ],
            noise_std: 2e-8,
            cell_size: (w.max(h) / 40.0).max(1e-3),
        }
    }
}

/// Zero-mean Gaussian draw via Box–Muller on the seeded stream.
fn draw_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Render frame `t` (1-based) of the light process onto a grid.
fn render_frame(
    spec: &SyntheticLightSpec,
    config: &ScenarioConfig,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> IlluminationGrid {
    let width = (config.area_width / spec.cell_size).round().max(1.0) as usize;
    let height = (config.area_height / spec.cell_size).round().max(1.0) as usize;
    let mut grid = IlluminationGrid::zeros(Point2::new(0.0, 0.0), spec.cell_size, width, height);

    // per-blob state at slot t; the angle is computed from the slot
    // index reduced mod the period so frames exactly one period apart
    // are bit-identical in the noiseless case
    let states: Vec<(Point2, f64, f64, f64)> = spec
        .blobs
        .iter()
        .map(|b| {
            let s = (t as f64 + b.phase).rem_euclid(b.period);
            let angle = TAU * s / b.period;
            let peak = b.peak * (1.0 - b.modulation_depth * (0.5 + 0.5 * angle.sin()));
            let center = Point2::new(
                b.center.x + b.drift_amplitude * angle.cos(),
                b.center.y + b.drift_amplitude * angle.sin(),
            );
            (center, b.sigma.0, b.sigma.1, peak)
        })
        .collect();

    for row in 0..height {
        for col in 0..width {
            let p = grid.pixel_center(col, row);
            let mut v = 0.0;
            for &(c, sx, sy, peak) in &states {
                let dx = p.x - c.x;
                let dy = p.y - c.y;
                v += peak * (-dx * dx / (2.0 * sx * sx) - dy * dy / (2.0 * sy * sy)).exp();
            }
            if spec.noise_std > 0.0 {
                v += spec.noise_std * draw_normal(rng);
            }
            grid.values[row * width + col] = v.max(0.0);
        }
    }
    grid
}

/// Generate the historical series, frames `1..=T`.
pub fn generate_series(
    spec: &SyntheticLightSpec,
    config: &ScenarioConfig,
) -> Result<Vec<IlluminationGrid>> {
    Ok(generate_series_with_horizon(spec, config, 0)?.0)
}

/// Generate frames `1..=T` plus `extra` future frames from the same
/// noise stream; the series prefix is identical to [`generate_series`].
pub fn generate_series_with_horizon(
    spec: &SyntheticLightSpec,
    config: &ScenarioConfig,
    extra: usize,
) -> Result<(Vec<IlluminationGrid>, Vec<IlluminationGrid>)> {
    config.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut series = Vec::with_capacity(config.series_len);
    for t in 1..=config.series_len {
        series.push(render_frame(spec, config, t, &mut rng));
    }
    let mut horizon = Vec::with_capacity(extra);
    for t in config.series_len + 1..=config.series_len + extra {
        horizon.push(render_frame(spec, config, t, &mut rng));
    }
    Ok((series, horizon))
}

/// Place users uniformly over the area with uniform rate demands,
/// converted from Mbit/s to bits per channel use.
pub fn place_users(config: &ScenarioConfig) -> Result<Vec<UserDemand>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (lo, hi) = config.rate_range_mbps;
    Ok((0..config.n_users)
        .map(|_| {
            let position = Point2::new(
                rng.random_range(0.0..config.area_width),
                rng.random_range(0.0..config.area_height),
            );
            let mbps = if hi > lo { rng.random_range(lo..hi) } else { lo };
            UserDemand { position, rate: mbps * 1e6 / config.symbol_rate }
        })
        .collect())
}

/// Write users as CSV: a header line, then `x,y,rate_bits_per_use`.
pub fn write_users_csv(path: &Path, users: &[UserDemand]) -> Result<()> {
    let mut out = String::from("x,y,rate_bits_per_use\n");
    for u in users {
        out.push_str(&format!("{},{},{}\n", u.position.x, u.position.y, u.rate));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read users written by [`write_users_csv`].
pub fn read_users_csv(path: &Path) -> Result<Vec<UserDemand>> {
    let text = fs::read_to_string(path)?;
    let perr = |msg: String| Error::Parse { path: path.display().to_string(), msg };
    let mut users = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(perr(format!("line {} needs 3 fields", i + 1)));
        }
        let mut nums = [0.0f64; 3];
        for (slot, s) in nums.iter_mut().zip(&fields) {
            *slot = s.parse().map_err(|e| perr(format!("bad number {s:?}: {e}")))?;
        }
        users.push(UserDemand { position: Point2::new(nums[0], nums[1]), rate: nums[2] });
    }
    if users.is_empty() {
        return Err(perr("no users".into()));
    }
    Ok(users)
}

/// On-disk scenario description (human-editable TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenario: ScenarioConfig,
    pub lights: SyntheticLightSpec,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialise scenario: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{fit_gmm, EmConfig};
    use tempfile::tempdir;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig { series_len: 30, n_users: 10, n_uavs: 2, ..Default::default() }
    }

    fn static_spec() -> SyntheticLightSpec {
        let mut spec = SyntheticLightSpec::three_blobs(20.0, 20.0);
        spec.noise_std = 0.0;
        for b in &mut spec.blobs {
            b.modulation_depth = 0.0;
            b.drift_amplitude = 0.0;
        }
        spec
    }

    #[test]
    fn static_process_yields_identical_frames() {
        let cfg = small_config();
        let frames = generate_series(&static_spec(), &cfg).unwrap();
        assert_eq!(frames.len(), 30);
        for f in &frames[1..] {
            assert_eq!(f, &frames[0]);
        }
    }

    #[test]
    fn noiseless_frames_repeat_after_one_period() {
        let cfg = small_config();
        let mut spec = SyntheticLightSpec::three_blobs(20.0, 20.0);
        spec.noise_std = 0.0;
        let frames = generate_series(&spec, &cfg).unwrap();
        // all blob periods are 24 slots
        assert_eq!(frames[0], frames[24]);
        assert_eq!(frames[3], frames[27]);
        assert_ne!(frames[0], frames[12]);
    }

    #[test]
    fn horizon_extends_the_same_stream() {
        let cfg = small_config();
        let spec = SyntheticLightSpec::three_blobs(20.0, 20.0);
        let plain = generate_series(&spec, &cfg).unwrap();
        let (series, horizon) = generate_series_with_horizon(&spec, &cfg, 2).unwrap();
        assert_eq!(plain, series);
        assert_eq!(horizon.len(), 2);
    }

    #[test]
    fn generated_frames_respect_grid_invariants() {
        let cfg = small_config();
        let spec = SyntheticLightSpec::three_blobs(20.0, 20.0);
        let frames = generate_series(&spec, &cfg).unwrap();
        for f in &frames {
            assert_eq!(f.width, 40);
            assert_eq!(f.height, 40);
            assert!(f.values.iter().all(|&v| v >= 0.0));
        }
        // same seed, same series
        let again = generate_series(&spec, &cfg).unwrap();
        assert_eq!(frames, again);
    }

    #[test]
    fn fit_recovers_generated_blob_centers() {
        let cfg = small_config();
        let spec = static_spec();
        let frames = generate_series(&spec, &cfg).unwrap();
        let (fitted, _) = fit_gmm(&frames[0], 3, &EmConfig { seed: 4, ..Default::default() }).unwrap();
        for blob in &spec.blobs {
            let nearest = fitted
                .components
                .iter()
                .map(|c| c.center.dist(blob.center))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.2, "blob at {:?} missed by {nearest}", blob.center);
        }
    }

    #[test]
    fn users_land_in_area_with_converted_rates() {
        let cfg = ScenarioConfig::default();
        let users = place_users(&cfg).unwrap();
        assert_eq!(users.len(), 40);
        for u in &users {
            assert!(u.position.x >= 0.0 && u.position.x <= 20.0);
            assert!(u.position.y >= 0.0 && u.position.y <= 20.0);
            // 0.5..1.5 Mbit/s at 1e7 uses/s -> 0.05..0.15 bits/use
            assert!(u.rate >= 0.05 && u.rate <= 0.15);
        }
        let again = place_users(&cfg).unwrap();
        assert_eq!(users, again);
    }

    #[test]
    fn users_csv_round_trips() {
        let cfg = small_config();
        let users = place_users(&cfg).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("users.csv");
        write_users_csv(&path, &users).unwrap();
        let back = read_users_csv(&path).unwrap();
        assert_eq!(users, back);
    }

    #[test]
    fn scenario_file_round_trips() {
        let file = ScenarioFile {
            scenario: ScenarioConfig::default(),
            lights: SyntheticLightSpec::skewed(20.0, 20.0),
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        file.save(&path).unwrap();
        let back = ScenarioFile::load(&path).unwrap();
        assert_eq!(file, back);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = ScenarioConfig { n_users: 2, n_uavs: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { series_len: 5, ..Default::default() };
        assert!(bad.validate().is_err());
        let mut spec = SyntheticLightSpec::three_blobs(20.0, 20.0);
        spec.blobs[0].modulation_depth = 1.5;
        assert!(spec.validate().is_err());
    }
}
