//! Lambertian VLC link budget.
//!
//! A UAV-mounted LED at altitude `H` serves a ground user over a
//! line-of-sight optical link. The channel gain follows the generalized
//! Lambertian model
//!
//! ```text
//! h = (m + 1) S / (2π d²) · g(ψ) · cosᵐ(φ) · cos(ψ)
//! ```
//!
//! with `m` the Lambert order of the emitter, `S` the detector area,
//! `d` the 3-D link distance, `φ` the irradiance angle and `ψ` the
//! incidence angle. With both transmitter and receiver facing straight
//! down/up, `cos φ = cos ψ = H / d` and the gain collapses to a closed
//! form in `d` alone. Outside the receiver field-of-view cone the gain
//! is exactly zero.
//!
//! Capacity uses the intensity-modulation lower bound
//! `½ log₂(1 + (e/2π)(ξ P h / (n_w + I))²)`, where the ambient radiance
//! `I` at the user acts as interference. Rates are carried in bits per
//! channel use; converting from bits/s is the caller's concern (see
//! `ScenarioConfig::symbol_rate`).

use crate::error::{Error, Result};
use crate::geometry::Point2;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

/// Static parameters of the optical front end and the service demands.
///
/// Angles are semiangles in radians. Powers and radiance values are
/// linear (watts and watts-per-area-ish units), never dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Photodetector area in m².
    pub detector_area: f64,
    /// Transmitter half-power semiangle in radians; must lie in (0, π/2)
    /// so the Lambert order is finite and positive.
    pub half_power_semiangle: f64,
    /// Receiver field-of-view semiangle in radians, in (0, π/2].
    pub fov_semiangle: f64,
    /// Refractive index of the optical concentrator (≥ 1).
    pub refractive_index: f64,
    /// Hover altitude in metres.
    pub altitude: f64,
    /// Illumination target factor ξ coupling transmit power to emitted light.
    pub illumination_target: f64,
    /// Standard deviation of the additive white Gaussian noise.
    pub noise_std: f64,
    /// Ambient illumination demand η_r each user must receive.
    pub illumination_demand: f64,
}

impl Default for ChannelParams {
    /// Reference configuration: 120° full beam and FOV angles (60°
    /// semiangles, hence Lambert order 1), 1 cm² detector, index 1.5,
    /// 10 m altitude, ξ = 1, noise 1e-7, illumination demand 3e-7.
    fn default() -> Self {
        Self {
            detector_area: 1e-4,
            half_power_semiangle: 60f64.to_radians(),
            fov_semiangle: 60f64.to_radians(),
            refractive_index: 1.5,
            altitude: 10.0,
            illumination_target: 1.0,
            noise_std: 1e-7,
            illumination_demand: 3e-7,
        }
    }
}

impl ChannelParams {
    /// Check the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let ok = self.half_power_semiangle > 0.0
            && self.half_power_semiangle < PI / 2.0
            && self.fov_semiangle > 0.0
            && self.fov_semiangle <= PI / 2.0
            && self.detector_area > 0.0
            && self.altitude > 0.0
            && self.refractive_index >= 1.0
            && self.illumination_target > 0.0
            && self.noise_std > 0.0
            && self.illumination_demand >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid channel parameters: {self:?}")))
        }
    }
}

/// One ground user: position and downlink rate demand in bits per
/// channel use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserDemand {
    pub position: Point2,
    pub rate: f64,
}

/// Lambert order `m = −ln 2 / ln(cos Φ½)` of the emitter.
///
/// Strictly positive and monotone decreasing in the semiangle; a 60°
/// semiangle gives exactly 1.
pub fn lambert_order(params: &ChannelParams) -> f64 {
    -(2f64.ln()) / params.half_power_semiangle.cos().ln()
}

/// Optical concentrator gain `g(ψ)`.
///
/// Constant `n²/sin²Ψc` for incidence angles up to and including the
/// FOV semiangle, zero beyond it.
pub fn concentrator_gain(psi: f64, params: &ChannelParams) -> f64 {
    if psi <= params.fov_semiangle {
        let n = params.refractive_index;
        let s = params.fov_semiangle.sin();
        n * n / (s * s)
    } else {
        0.0
    }
}

/// Channel gain of the downlink between a UAV above `uav` and a user at
/// `user`.
///
/// Uses the closed form `(m+1) S g Hᵐ⁺¹ / (2π dᵐ⁺³)`, valid because the
/// incidence and irradiance angles coincide for a downward-facing LED
/// and an upward-facing detector. Returns 0 when the user falls outside
/// the FOV cone (`H/d < cos Ψc`).
pub fn channel_gain(uav: Point2, user: Point2, params: &ChannelParams) -> f64 {
    let m = lambert_order(params);
    let h = params.altitude;
    let d2 = uav.dist2(user) + h * h;
    let d = d2.sqrt();
    if h / d < params.fov_semiangle.cos() {
        return 0.0;
    }
    let g = concentrator_gain(0.0, params);
    (m + 1.0) * params.detector_area * g * h.powf(m + 1.0) / (2.0 * PI * d.powf(m + 3.0))
}

/// Channel capacity in bits per channel use at transmit power `power`,
/// ambient radiance `ambient` at the user, and channel gain `gain`.
pub fn capacity(power: f64, ambient: f64, gain: f64, params: &ChannelParams) -> f64 {
    let snr_amp = params.illumination_target * power * gain / (params.noise_std + ambient);
    0.5 * (1.0 + E / (2.0 * PI) * snr_amp * snr_amp).log2()
}

/// Transmit power needed to serve `user`'s rate demand over a link with
/// gain `gain` under ambient radiance `ambient`; the exact inverse of
/// [`capacity`] at the demanded rate.
///
/// Fails with `UserOutsideFov` when the gain is zero: no finite power
/// reaches a user the detector cannot see.
pub fn required_power_for_rate(
    user: &UserDemand,
    ambient: f64,
    gain: f64,
    params: &ChannelParams,
) -> Result<f64> {
    if gain <= 0.0 {
        return Err(Error::UserOutsideFov {
            x: user.position.x,
            y: user.position.y,
        });
    }
    let lin = (2.0 * PI / E) * (2f64.powf(2.0 * user.rate) - 1.0);
    Ok((params.noise_std + ambient) * lin.sqrt() / (params.illumination_target * gain))
}

/// Minimum transmit power a UAV above `uav` needs so every user in its
/// cell meets its rate demand: the maximum of the per-user powers.
///
/// `ambient[j]` is the ambient radiance at `users[j]`'s position.
pub fn min_power_for_cell(
    users: &[UserDemand],
    ambient: &[f64],
    uav: Point2,
    params: &ChannelParams,
) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::EmptyCell);
    }
    debug_assert_eq!(users.len(), ambient.len());
    let mut worst = 0.0f64;
    for (user, &light) in users.iter().zip(ambient) {
        let gain = channel_gain(uav, user.position, params);
        let p = required_power_for_rate(user, light, gain, params)?;
        worst = worst.max(p);
    }
    Ok(worst)
}
