//! Per-UAV placement and power via Lagrangian dual ascent.
//!
//! For one aerial cell the joint rate + illumination requirements of
//! its users collapse into a single constraint family
//!
//! ```text
//! minimise P   subject to   P^(2/(m+3)) ≥ a_j · d_j²(x, y)   ∀j
//! ```
//!
//! where `d_j²` is the squared 3-D distance from the hover point to
//! user `j` and the per-user coefficient `a_j` folds the channel
//! constants together with the larger of the illumination shortfall and
//! the rate demand (see [`build_cell_problem`]). The problem is convex;
//! dual ascent recovers the primal in closed form at every step —
//! power from the multiplier sum, position as the multiplier-weighted
//! centroid — and walks the multipliers along the constraint residuals
//! with a constant step until the iterate is feasible and stationary.
//!
//! [`brute_force_cell`] is an independent check: a grid scan over the
//! users' bounding box followed by an exact finish that enumerates the
//! stationary points of the minimax objective (at most three
//! constraints are active in the plane, so candidates come from
//! closed-form single/pair/triple intersections).

use crate::channel::{lambert_order, ChannelParams, UserDemand};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::gmm::GmmFrame;
use crate::kmeans::weighted_kmeans;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

/// One user as the placement subproblem sees it: a position and the
/// folded demand coefficient `a_j > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellUser {
    pub position: Point2,
    pub coefficient: f64,
}

/// The convex placement/power subproblem of a single aerial cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProblem {
    pub users: Vec<CellUser>,
    pub params: ChannelParams,
}

impl CellProblem {
    pub fn from_parts(users: Vec<CellUser>, params: ChannelParams) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::EmptyCell);
        }
        if users.iter().any(|u| u.coefficient <= 0.0 || !u.coefficient.is_finite()) {
            return Err(Error::Config("cell coefficients must be positive".into()));
        }
        params.validate()?;
        Ok(Self { users, params })
    }

    fn lambert(&self) -> f64 {
        lambert_order(&self.params)
    }

    /// `max_j a_j d_j²` at a hover position: the binding constraint level.
    fn binding_level(&self, pos: Point2) -> f64 {
        let h2 = self.params.altitude * self.params.altitude;
        self.users
            .iter()
            .map(|u| u.coefficient * (pos.dist2(u.position) + h2))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum feasible transmit power when hovering at `pos`:
    /// `(max_j a_j d_j²)^((m+3)/2)`.
    pub fn required_power_at(&self, pos: Point2) -> f64 {
        self.binding_level(pos).powf((self.lambert() + 3.0) / 2.0)
    }

    /// Per-user constraint residuals `a_j d_j² − P^(2/(m+3))`;
    /// non-positive means satisfied.
    pub fn constraint_residuals(&self, pos: Point2, power: f64) -> Vec<f64> {
        let level = power.powf(2.0 / (self.lambert() + 3.0));
        let h2 = self.params.altitude * self.params.altitude;
        self.users
            .iter()
            .map(|u| u.coefficient * (pos.dist2(u.position) + h2) - level)
            .collect()
    }

    /// Fails if any user falls outside the receiver FOV cone when the
    /// UAV hovers at `pos`.
    fn check_fov(&self, pos: Point2) -> Result<()> {
        let h = self.params.altitude;
        let cos_fov = self.params.fov_semiangle.cos();
        for u in &self.users {
            let d = (pos.dist2(u.position) + h * h).sqrt();
            if h / d < cos_fov {
                return Err(Error::UserOutsideFov { x: u.position.x, y: u.position.y });
            }
        }
        Ok(())
    }
}

/// Fold channel constants, the forecast illumination field and each
/// user's demands into the per-user coefficients of [`CellProblem`].
///
/// With `l = 2π / (ξ (m+1) S g H^(m+1))`, the illumination shortfall
/// `M_j = η_r − I(x_j, y_j)` and the rate term
/// `N_j = (n_w + I(x_j, y_j)) √(2π/e (2^(2R_j) − 1))`, the coefficient
/// is `a_j = (l · max{M_j, N_j})^(2/(m+3))`. `M_j` may go negative when
/// ambient light already covers the demand; `N_j > 0` keeps the max —
/// and hence `a_j` — positive.
pub fn build_cell_problem(
    users: &[UserDemand],
    predicted: &GmmFrame,
    params: &ChannelParams,
) -> Result<CellProblem> {
    if users.is_empty() {
        return Err(Error::EmptyCell);
    }
    params.validate()?;
    let m = lambert_order(params);
    let n = params.refractive_index;
    let sin_fov = params.fov_semiangle.sin();
    let concentrator = n * n / (sin_fov * sin_fov);
    let l = 2.0 * PI
        / (params.illumination_target
            * (m + 1.0)
            * params.detector_area
            * concentrator
            * params.altitude.powf(m + 1.0));
    let cell_users = users
        .iter()
        .map(|u| {
            let ambient = predicted.evaluate(u.position);
            let shortfall = params.illumination_demand - ambient;
            let rate_term = (params.noise_std + ambient)
                * ((2.0 * PI / E) * (2f64.powf(2.0 * u.rate) - 1.0)).sqrt();
            let a = (l * shortfall.max(rate_term)).powf(2.0 / (m + 3.0));
            CellUser { position: u.position, coefficient: a }
        })
        .collect();
    CellProblem::from_parts(cell_users, params.clone())
}

/// Dual-ascent settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Base multiplier step size. The loop adapts around it: the step
    /// grows when the residuals stall (near-degenerate active sets
    /// otherwise crawl) and falls back to the base after an overshoot.
    pub step: f64,
    pub max_iters: usize,
    /// Constraint-unit tolerance on feasibility and stationarity.
    pub tol_feasibility: f64,
    /// Relative tolerance on the power change per iteration.
    pub tol_objective: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { step: 0.01, max_iters: 50_000, tol_feasibility: 1e-9, tol_objective: 1e-8 }
    }
}

/// Iterations per step-adaptation window.
const STALL_WINDOW: usize = 200;
/// Ceiling on the adaptive step, as a multiple of the base.
const STEP_GROWTH_CAP: f64 = 100.0;

/// Converged placement for one UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSolution {
    /// Hover position (altitude is fixed by the channel parameters).
    pub position: Point2,
    /// Transmit power in watts.
    pub power: f64,
    /// Final multiplier per user constraint, all ≥ 0.
    pub duals: Vec<f64>,
    pub iterations: usize,
    /// Constraint residuals at exit; ≤ tolerance means feasible.
    pub residuals: Vec<f64>,
}

/// Solve the cell subproblem by projected dual ascent.
///
/// Each iteration recovers the primal pair in closed form from the
/// multipliers — `P = ((2/(m+3)) Σλ)^((m+3)/(m+1))` and the hover point
/// as the `λ_j a_j`-weighted centroid of the users — then moves every
/// multiplier along its constraint residual and projects onto `λ ≥ 0`.
/// Stops once the iterate is feasible, every active constraint is
/// stationary and the power has settled; errors with `NotConverged`
/// (carrying the best iterate) when the budget runs out, and with
/// `UserOutsideFov` if the converged position cannot see every user.
pub fn solve_cell(problem: &CellProblem, config: &SolveConfig) -> Result<DeploymentSolution> {
    assert!(config.step > 0.0);
    let m = problem.lambert();
    let h2 = problem.params.altitude * problem.params.altitude;
    let n = problem.users.len();
    let primal_exp = (m + 3.0) / (m + 1.0);
    let level_exp = 2.0 / (m + 3.0);

    let mut duals = vec![1.0 / n as f64; n];
    let mut pos = Point2::new(0.0, 0.0);
    let mut power = 1.0;
    let mut prev_power = f64::NAN;
    let mut residuals = vec![0.0; n];
    let mut best_violation = f64::INFINITY;
    let mut best: Option<DeploymentSolution> = None;
    let mut step = config.step;
    let mut window_start = f64::INFINITY;
    let mut window_age = 0usize;

    for iter in 1..=config.max_iters {
        let dual_sum: f64 = duals.iter().sum();
        if dual_sum > 0.0 {
            power = (level_exp * dual_sum).powf(primal_exp);
            let mut wx = 0.0;
            let mut wy = 0.0;
            let mut w = 0.0;
            for (u, &lam) in problem.users.iter().zip(&duals) {
                let t = lam * u.coefficient;
                wx += t * u.position.x;
                wy += t * u.position.y;
                w += t;
            }
            pos = Point2::new(wx / w, wy / w);
        } else {
            // every constraint went slack: hold the position and shrink
            // the power until one activates again
            loop {
                let level = power.powf(level_exp);
                let active = problem
                    .users
                    .iter()
                    .any(|u| u.coefficient * (pos.dist2(u.position) + h2) >= level);
                if active || power < f64::MIN_POSITIVE {
                    break;
                }
                power *= 0.5;
            }
        }

        let level = power.powf(level_exp);
        let mut violation = f64::NEG_INFINITY;
        let mut stationarity = 0.0f64;
        for (j, u) in problem.users.iter().enumerate() {
            let g = u.coefficient * (pos.dist2(u.position) + h2) - level;
            residuals[j] = g;
            violation = violation.max(g);
            duals[j] = (duals[j] + step * g).max(0.0);
            if duals[j] > 0.0 {
                stationarity = stationarity.max(g.abs());
            }
        }

        // dynamic step: judge the convergence rate over a fixed window —
        // near-degenerate active sets crawl at the base step, so a
        // window that fails to halve the residuals doubles the step,
        // while a genuinely worsening window backs it off
        let metric = violation.max(stationarity).max(0.0);
        window_age += 1;
        if window_age >= STALL_WINDOW {
            if metric > 2.0 * window_start {
                step = (step * 0.5).max(config.step);
            } else if metric > 0.5 * window_start {
                step = (step * 2.0).min(config.step * STEP_GROWTH_CAP);
            }
            window_start = metric;
            window_age = 0;
        } else if metric < 1e-3 * window_start {
            window_start = metric;
            window_age = 0;
        }

        if violation < best_violation {
            best_violation = violation;
            best = Some(DeploymentSolution {
                position: pos,
                power,
                duals: duals.clone(),
                iterations: iter,
                residuals: residuals.clone(),
            });
        }

        let power_settled = prev_power.is_finite()
            && (power - prev_power).abs() <= config.tol_objective * prev_power.abs();
        if violation < config.tol_feasibility
            && stationarity < config.tol_feasibility
            && power_settled
        {
            problem.check_fov(pos)?;
            return Ok(DeploymentSolution {
                position: pos,
                power,
                duals,
                iterations: iter,
                residuals,
            });
        }
        prev_power = power;
    }

    Err(Error::NotConverged {
        iterations: config.max_iters,
        max_violation: best_violation,
        best: Box::new(best.expect("at least one iteration ran")),
    })
}

/// Independent verification oracle: scan the minimum feasible power
/// over a regular grid covering the users' bounding box (padded by
/// 2 m), then sharpen the argmin exactly by enumerating the stationary
/// candidates of the minimax objective — user positions, pairwise
/// balance points along the connecting segment, and triple balance
/// points from intersecting the pairwise-equality curves.
pub fn brute_force_cell(problem: &CellProblem, grid_step: f64) -> DeploymentSolution {
    assert!(grid_step > 0.0);
    let users = &problem.users;
    let h2 = problem.params.altitude * problem.params.altitude;
    let pad = 2.0;
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for u in users {
        x0 = x0.min(u.position.x);
        y0 = y0.min(u.position.y);
        x1 = x1.max(u.position.x);
        y1 = y1.max(u.position.y);
    }
    x0 -= pad;
    y0 -= pad;
    x1 += pad;
    y1 += pad;

    let level = |p: Point2| -> f64 {
        users
            .iter()
            .map(|u| u.coefficient * (p.dist2(u.position) + h2))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let mut best_point = Point2::new(x0, y0);
    let mut best_level = f64::INFINITY;
    let mut evaluations = 0usize;
    let consider = |p: Point2, best_point: &mut Point2, best_level: &mut f64| {
        let v = level(p);
        if v < *best_level {
            *best_level = v;
            *best_point = p;
        }
    };

    let nx = ((x1 - x0) / grid_step).ceil() as usize + 1;
    let ny = ((y1 - y0) / grid_step).ceil() as usize + 1;
    for iy in 0..ny {
        for ix in 0..nx {
            let p = Point2::new(x0 + ix as f64 * grid_step, y0 + iy as f64 * grid_step);
            consider(p, &mut best_point, &mut best_level);
            evaluations += 1;
        }
    }

    for p in stationary_candidates(users, h2) {
        consider(p, &mut best_point, &mut best_level);
        evaluations += 1;
    }

    let m = problem.lambert();
    let power = best_level.powf((m + 3.0) / 2.0);
    let residuals = problem.constraint_residuals(best_point, power);
    DeploymentSolution {
        position: best_point,
        power,
        duals: Vec::new(),
        iterations: evaluations,
        residuals,
    }
}

/// Stationary points of `max_j a_j (|p − p_j|² + H²)`: at a minimiser
/// the zero vector lies in the convex hull of the active gradients, so
/// at most three constraints matter in the plane. Singles put the point
/// on a user; pairs put it on the segment between two users where
/// their terms balance; triples sit where three terms agree, found by
/// intersecting two pairwise-equality conics.
fn stationary_candidates(users: &[CellUser], h2: f64) -> Vec<Point2> {
    let mut out: Vec<Point2> = users.iter().map(|u| u.position).collect();
    let n = users.len();

    // pairwise balance along the connecting segment:
    // a_j (t²L² + H²) = a_l ((t−1)²L² + H²) for p = p_j + t (p_l − p_j)
    for j in 0..n {
        for l in (j + 1)..n {
            let (aj, al) = (users[j].coefficient, users[l].coefficient);
            let pj = users[j].position;
            let pl = users[l].position;
            let ux = pl.x - pj.x;
            let uy = pl.y - pj.y;
            let len2 = ux * ux + uy * uy;
            if len2 < 1e-18 {
                continue;
            }
            let qa = (aj - al) * len2;
            let qb = 2.0 * al * len2;
            let qc = -al * len2 + (aj - al) * h2;
            for t in solve_quadratic(qa, qb, qc) {
                out.push(Point2::new(pj.x + t * ux, pj.y + t * uy));
            }
        }
    }

    // triple agreement: each pairwise equality expands to
    // α (x² + y²) + b·(x, y) + c = 0; eliminating the quadratic part of
    // two of them leaves a line to intersect with either conic
    let conic = |j: usize, l: usize| -> (f64, [f64; 2], f64) {
        let (aj, al) = (users[j].coefficient, users[l].coefficient);
        let pj = users[j].position;
        let pl = users[l].position;
        let alpha = aj - al;
        let b = [-2.0 * (aj * pj.x - al * pl.x), -2.0 * (aj * pj.y - al * pl.y)];
        let c = aj * (pj.x * pj.x + pj.y * pj.y) - al * (pl.x * pl.x + pl.y * pl.y)
            + (aj - al) * h2;
        (alpha, b, c)
    };
    for j in 0..n {
        for l in (j + 1)..n {
            for k in (l + 1)..n {
                let (a1, b1, c1) = conic(j, l);
                let (a2, b2, c2) = conic(j, k);
                let lb = [a2 * b1[0] - a1 * b2[0], a2 * b1[1] - a1 * b2[1]];
                let lc = a2 * c1 - a1 * c2;
                let nb = lb[0] * lb[0] + lb[1] * lb[1];
                if nb < 1e-30 {
                    continue;
                }
                // line point + unit direction
                let px = -lc * lb[0] / nb;
                let py = -lc * lb[1] / nb;
                let inv = nb.sqrt().recip();
                let dx = -lb[1] * inv;
                let dy = lb[0] * inv;
                // substitute into whichever equality is genuinely conic
                let picked = if a1.abs() > 1e-300 {
                    Some((a1, b1, c1))
                } else if a2.abs() > 1e-300 {
                    Some((a2, b2, c2))
                } else {
                    None
                };
                match picked {
                    Some((aa, bb, cc)) => {
                        let qa = aa; // direction is unit length
                        let qb = 2.0 * aa * (px * dx + py * dy) + bb[0] * dx + bb[1] * dy;
                        let qc = aa * (px * px + py * py) + bb[0] * px + bb[1] * py + cc;
                        for s in solve_quadratic(qa, qb, qc) {
                            out.push(Point2::new(px + s * dx, py + s * dy));
                        }
                    }
                    None => {
                        // all three coefficients equal: two straight
                        // bisector-like lines intersect in one point
                        let det = b1[0] * b2[1] - b1[1] * b2[0];
                        if det.abs() > 1e-12 {
                            let x = (-c1 * b2[1] + c2 * b1[1]) / det;
                            let y = (-b1[0] * c2 + b2[0] * c1) / det;
                            out.push(Point2::new(x, y));
                        }
                    }
                }
            }
        }
    }
    out.retain(|p| p.x.is_finite() && p.y.is_finite());
    out
}

/// Real roots of `a t² + b t + c = 0`, degenerating to the linear case.
fn solve_quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() < 1e-300 {
        if b.abs() < 1e-300 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    vec![(-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)]
}

/// Assign users to `n_uavs` disjoint aerial cells by seeded k-means on
/// their positions; every cell comes back non-empty.
pub fn partition_users(
    users: &[UserDemand],
    n_uavs: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    assert!(n_uavs >= 1);
    if users.is_empty() {
        return Err(Error::EmptyCell);
    }
    if n_uavs > users.len() {
        return Err(Error::TooManyUavs { users: users.len(), uavs: n_uavs });
    }
    let points: Vec<Point2> = users.iter().map(|u| u.position).collect();
    let weights = vec![1.0; users.len()];
    let km = weighted_kmeans(&points, &weights, n_uavs, seed, 200);
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); n_uavs];
    for (i, &c) in km.assignment.iter().enumerate() {
        cells[c].push(i);
    }
    // identical user positions can leave a duplicate centre unassigned;
    // hand it the farthest user of the fullest cell
    while let Some(empty) = cells.iter().position(Vec::is_empty) {
        let donor = cells
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| c.len())
            .map(|(i, _)| i)
            .expect("at least one cell");
        let (take_pos, _) = cells[donor]
            .iter()
            .enumerate()
            .map(|(pos, &i)| (pos, points[i].dist2(km.centers[donor])))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("donor cell is non-empty");
        let moved = cells[donor].remove(take_pos);
        cells[empty].push(moved);
    }
    Ok(cells)
}

/// Total transmit power of a fleet.
pub fn total_power(solutions: &[DeploymentSolution]) -> f64 {
    solutions.iter().map(|s| s.power).sum()
}
