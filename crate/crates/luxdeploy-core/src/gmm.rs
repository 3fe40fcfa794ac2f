//! Gaussian-mixture summary of an illumination raster.
//!
//! Each time slot's radiance field is compressed into a shared
//! amplitude `A` and `K` axis-aligned Gaussian components,
//!
//! ```text
//! I(x, y) = A · Σ_k w_k · exp(−(x−μx_k)²/(2σx_k²) − (y−μy_k)²/(2σy_k²))
//! ```
//!
//! with the weights summing to one. Fitting runs weighted
//! expectation-maximization over pixel centres, each pixel weighted by
//! its radiance value; the fitted probability masses are then
//! reparameterised into the amplitude/weight form above via the
//! per-component peak `c_k = Mass·Δ²·π_k / (2π σx_k σy_k)`, where
//! `Mass` is the pixel-value sum and `Δ` the cell size, so the
//! reconstruction reproduces the normalized mixture exactly.
//!
//! The flat feature vector is `[A, w₁, μx₁, μy₁, σx₁, σy₁, …]` of
//! length `5K + 1`; component order is kept temporally stable by
//! [`match_components`] so consecutive vectors describe the same
//! physical light source at the same index.

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::grid::IlluminationGrid;
use crate::kmeans::weighted_kmeans;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Weight tolerance inside which a vector is considered already
/// normalized and passes through [`GmmFrame::unflatten`] untouched.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// One axis-aligned Gaussian light source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    /// Relative weight in [0, 1]; weights of a frame sum to 1.
    pub weight: f64,
    /// Centre of the source, metres.
    pub center: Point2,
    /// Standard deviations along x and y, metres (> 0).
    pub sigma_x: f64,
    pub sigma_y: f64,
}

/// Mixture parameters of one time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFrame {
    /// Shared amplitude in radiance units (≥ 0).
    pub amplitude: f64,
    pub components: Vec<GmmComponent>,
}

impl GmmFrame {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Zero-light frame: amplitude 0 with `k` placeholder components at
    /// `center`. Stands in for frames whose grid carried no
    /// illumination.
    pub fn zero(k: usize, center: Point2, sigma_floor: f64) -> Self {
        Self {
            amplitude: 0.0,
            components: vec![
                GmmComponent {
                    weight: 1.0 / k as f64,
                    center,
                    sigma_x: sigma_floor,
                    sigma_y: sigma_floor,
                };
                k
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.components.iter().map(|c| c.weight).sum();
        let ok = self.amplitude >= 0.0
            && !self.components.is_empty()
            && (sum - 1.0).abs() <= WEIGHT_SUM_TOL
            && self
                .components
                .iter()
                .all(|c| c.weight >= 0.0 && c.weight <= 1.0 && c.sigma_x > 0.0 && c.sigma_y > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid mixture frame: {self:?}")))
        }
    }

    /// Reconstructed radiance at `p`; in [0, amplitude].
    pub fn evaluate(&self, p: Point2) -> f64 {
        let mut acc = 0.0;
        for c in &self.components {
            let dx = p.x - c.center.x;
            let dy = p.y - c.center.y;
            let expo = -dx * dx / (2.0 * c.sigma_x * c.sigma_x)
                - dy * dy / (2.0 * c.sigma_y * c.sigma_y);
            acc += c.weight * expo.exp();
        }
        self.amplitude * acc
    }

    /// Flat feature vector `[A, w₁, μx₁, μy₁, σx₁, σy₁, …]`, length `5K + 1`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(5 * self.k() + 1);
        q.push(self.amplitude);
        for c in &self.components {
            q.extend_from_slice(&[c.weight, c.center.x, c.center.y, c.sigma_x, c.sigma_y]);
        }
        q
    }

    /// Rebuild a frame from a flat vector, projecting onto the valid
    /// parameter set: the amplitude and weights are clamped
    /// non-negative, weights renormalized unless they already sum to 1
    /// within 1e-9 (so valid vectors round-trip bit-exactly), and
    /// standard deviations clamped to `sigma_floor`. Forecast outputs
    /// need this projection; fitted frames pass through unchanged.
    pub fn unflatten(q: &[f64], k: usize, sigma_floor: f64) -> Result<Self> {
        if q.len() != 5 * k + 1 {
            return Err(Error::ShapeMismatch { expected: 5 * k + 1, got: q.len() });
        }
        let amplitude = q[0].max(0.0);
        let mut components = Vec::with_capacity(k);
        for i in 0..k {
            let base = 1 + 5 * i;
            components.push(GmmComponent {
                weight: q[base].max(0.0),
                center: Point2::new(q[base + 1], q[base + 2]),
                sigma_x: q[base + 3].max(sigma_floor),
                sigma_y: q[base + 4].max(sigma_floor),
            });
        }
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            if sum > 0.0 {
                for c in &mut components {
                    c.weight /= sum;
                }
            } else {
                for c in &mut components {
                    c.weight = 1.0 / k as f64;
                }
            }
        }
        Ok(Self { amplitude, components })
    }

    /// Components reordered by descending weight, ties broken by
    /// ascending centre x then y. Used for the first frame of a series.
    pub fn canonical_order(&self) -> Self {
        let mut components = self.components.clone();
        components.sort_by(|a, b| {
            b.weight
                .total_cmp(&a.weight)
                .then(a.center.x.total_cmp(&b.center.x))
                .then(a.center.y.total_cmp(&b.center.y))
        });
        Self { amplitude: self.amplitude, components }
    }
}

/// Reorder `next`'s components to track `prev`'s: the permutation
/// minimising the total squared distance between matched centres,
/// found exhaustively (ties keep the earlier permutation, so an
/// already-matched frame is returned unchanged).
pub fn match_components(prev: &GmmFrame, next: &GmmFrame) -> GmmFrame {
    let k = prev.k();
    assert_eq!(k, next.k(), "frames must share the component count");
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| prev.components[i].center.dist2(next.components[j].center))
            .sum()
    };
    let mut best: Vec<usize> = (0..k).collect();
    let mut best_cost = cost(&best);
    let mut perm: Vec<usize> = (0..k).collect();
    // Heap's algorithm; the identity comes out first, so ties favour it
    let mut stack = vec![0usize; k];
    let mut i = 1;
    while i < k {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            let c = cost(&perm);
            if c < best_cost {
                best_cost = c;
                best = perm.clone();
            }
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    GmmFrame {
        amplitude: next.amplitude,
        components: best.iter().map(|&j| next.components[j]).collect(),
    }
}

/// Expectation-maximization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Relative log-likelihood improvement below which fitting stops.
    pub tol: f64,
    pub seed: u64,
    /// Lower bound on fitted standard deviations, metres.
    pub sigma_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 200, tol: 1e-6, seed: 0, sigma_floor: 0.05 }
    }
}

/// Per-fit diagnostics.
#[derive(Debug, Clone, Default)]
pub struct EmDiagnostics {
    /// Weighted log-likelihood after every iteration; non-decreasing up
    /// to floating-point slack.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    /// True when a component's deviation hit the positivity floor.
    pub sigma_clamped: bool,
}

/// Fit a `k`-component mixture to `grid` by weighted EM.
///
/// Pixels act as observations at their centres, weighted by radiance.
/// Initialisation is seeded k-means++ on the weighted pixel cloud, so
/// the result is deterministic for a given config. Fails with
/// `NoIllumination` on an all-zero grid and `InsufficientData` when
/// fewer than `k` pixels are positive.
pub fn fit_gmm(
    grid: &IlluminationGrid,
    k: usize,
    config: &EmConfig,
) -> Result<(GmmFrame, EmDiagnostics)> {
    assert!(k >= 1);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for row in 0..grid.height {
        for col in 0..grid.width {
            let v = grid.value(col, row);
            if v > 0.0 {
                points.push(grid.pixel_center(col, row));
                weights.push(v);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::NoIllumination);
    }
    if points.len() < k {
        return Err(Error::InsufficientData { have: points.len(), need: k });
    }
    let total_weight: f64 = weights.iter().sum();

    // --- initialisation from a short seeded k-means pass -------------
    let km = weighted_kmeans(&points, &weights, k, config.seed, 20);
    let mut pi = vec![0.0f64; k];
    let mut mu = km.centers.clone();
    let mut var = vec![(1.0f64, 1.0f64); k];
    {
        let mut mass = vec![0.0f64; k];
        let mut sx = vec![0.0f64; k];
        let mut sy = vec![0.0f64; k];
        for (i, p) in points.iter().enumerate() {
            let c = km.assignment[i];
            mass[c] += weights[i];
            let dx = p.x - mu[c].x;
            let dy = p.y - mu[c].y;
            sx[c] += weights[i] * dx * dx;
            sy[c] += weights[i] * dy * dy;
        }
        let floor2 = config.sigma_floor * config.sigma_floor;
        for c in 0..k {
            pi[c] = (mass[c] / total_weight).max(1e-12);
            if mass[c] > 0.0 {
                var[c] = ((sx[c] / mass[c]).max(floor2), (sy[c] / mass[c]).max(floor2));
            } else {
                var[c] = (floor2.max(1.0), floor2.max(1.0));
            }
        }
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
    }

    // --- EM iterations ------------------------------------------------
    let mut diag = EmDiagnostics::default();
    let n = points.len();
    let mut resp = vec![0.0f64; n * k];
    let mut log_norm = vec![0.0f64; k];
    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 0..config.max_iters {
        for c in 0..k {
            log_norm[c] = pi[c].ln() - (2.0 * PI * (var[c].0 * var[c].1).sqrt()).ln();
        }
        // E-step in log space; also accumulates the weighted log-likelihood
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut lmax = f64::NEG_INFINITY;
            for c in 0..k {
                let dx = p.x - mu[c].x;
                let dy = p.y - mu[c].y;
                let l = log_norm[c] - dx * dx / (2.0 * var[c].0) - dy * dy / (2.0 * var[c].1);
                resp[i * k + c] = l;
                lmax = lmax.max(l);
            }
            let mut denom = 0.0;
            for c in 0..k {
                let e = (resp[i * k + c] - lmax).exp();
                resp[i * k + c] = e;
                denom += e;
            }
            for c in 0..k {
                resp[i * k + c] /= denom;
            }
            ll += weights[i] * (lmax + denom.ln());
        }
        diag.log_likelihood.push(ll);
        diag.iterations = iter + 1;

        // M-step with weighted responsibilities
        let floor2 = config.sigma_floor * config.sigma_floor;
        for c in 0..k {
            let mut mass = 0.0;
            let mut mx = 0.0;
            let mut my = 0.0;
            for (i, p) in points.iter().enumerate() {
                let g = weights[i] * resp[i * k + c];
                mass += g;
                mx += g * p.x;
                my += g * p.y;
            }
            if mass > 0.0 {
                mu[c] = Point2::new(mx / mass, my / mass);
                let mut vx = 0.0;
                let mut vy = 0.0;
                for (i, p) in points.iter().enumerate() {
                    let g = weights[i] * resp[i * k + c];
                    let dx = p.x - mu[c].x;
                    let dy = p.y - mu[c].y;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                }
                vx /= mass;
                vy /= mass;
                if vx < floor2 || vy < floor2 {
                    diag.sigma_clamped = true;
                }
                var[c] = (vx.max(floor2), vy.max(floor2));
            }
            pi[c] = (mass / total_weight).max(1e-12);
        }
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);

        if prev_ll.is_finite() && (ll - prev_ll).abs() < config.tol * prev_ll.abs().max(1e-12) {
            break;
        }
        prev_ll = ll;
    }

    // --- reparameterise masses into amplitude/weight form -------------
    let mass_integral = grid.total() * grid.cell_size * grid.cell_size;
    let peaks: Vec<f64> = (0..k)
        .map(|c| mass_integral * pi[c] / (2.0 * PI * (var[c].0 * var[c].1).sqrt()))
        .collect();
    let amplitude: f64 = peaks.iter().sum();
    let components = (0..k)
        .map(|c| GmmComponent {
            weight: peaks[c] / amplitude,
            center: mu[c],
            sigma_x: var[c].0.sqrt(),
            sigma_y: var[c].1.sqrt(),
        })
        .collect();
    let frame = GmmFrame { amplitude, components }.canonical_order();
    Ok((frame, diag))
}
