//! Pressure-tunable adhesion capacity of the soft pads.
//!
//! Capacity follows the fracture-mechanics scaling `F_c ∝ sqrt(G_c · A / C)`
//! with the contact area written through the nominal contact radius, so
//! `F_c = k_cal · sqrt(G_c · R'^2 / C(P))` where `R' = min(R, pad_radius)`.
//! Chamber pressure acts through the pad compliance `C(P)`: evacuating the
//! chamber stiffens the foam and raises capacity, inflating it does the
//! opposite.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Slack used when comparing timestamps that were produced by `tick * dt`.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdhesionParams {
    /// Converts the proportionality into newtons.
    pub k_cal: f64,
    /// Compliance at `p_min`, m/N.
    pub c0: f64,
    /// Compliance sensitivity to pressure, 1/psi.
    pub c_p: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Capacity is zero at or above this pressure (fully inflated membrane).
    /// Defaults to `p_max`.
    #[serde(default)]
    pub p_release: Option<f64>,
    /// Pure transport delay between a pressure command and its effect, s.
    pub tau_sw: f64,
}

/// Reference point for the default calibration: 5 N at full vacuum on a
/// 30 mm contact with G_c = 10 J/m².
pub const CALIBRATION_FORCE: f64 = 5.0;
pub const CALIBRATION_RADIUS: f64 = 0.030;
pub const CALIBRATION_GC: f64 = 10.0;

impl AdhesionParams {
    /// Builds parameters whose `k_cal` satisfies the reference calibration
    /// `F_c(p_min, 30 mm, 10 J/m²) = 5 N`.
    pub fn calibrated(c0: f64, c_p: f64, p_min: f64, p_max: f64, tau_sw: f64) -> Self {
        let k_cal = CALIBRATION_FORCE
            / (CALIBRATION_GC * CALIBRATION_RADIUS * CALIBRATION_RADIUS / c0).sqrt();
        Self {
            k_cal,
            c0,
            c_p,
            p_min,
            p_max,
            p_release: None,
            tau_sw,
        }
    }

    pub fn release_pressure(&self) -> f64 {
        self.p_release.unwrap_or(self.p_max)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.k_cal,
            self.c0,
            self.c_p,
            self.p_min,
            self.p_max,
            self.tau_sw,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("adhesion parameters"));
        }
        if self.k_cal <= 0.0 || self.c0 <= 0.0 || self.c_p < 0.0 {
            return Err(SimError::InvalidScenario(
                "adhesion requires k_cal > 0, c0 > 0, c_p >= 0".into(),
            ));
        }
        if self.p_min >= self.p_max {
            return Err(SimError::InvalidScenario(
                "adhesion p_min must be below p_max".into(),
            ));
        }
        if self.tau_sw < 0.0 {
            return Err(SimError::InvalidScenario(
                "tau_sw must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for AdhesionParams {
    fn default() -> Self {
        Self::calibrated(1e-4, 0.5, -13.0, 2.9, 0.1)
    }
}

/// Pad compliance at pressure `p`, m/N. Strictly increasing in `p` when
/// `c_p > 0`.
pub fn compliance(p: f64, params: &AdhesionParams) -> Result<f64> {
    if !p.is_finite() {
        return Err(SimError::NonFinite("pressure"));
    }
    if p < params.p_min || p > params.p_max {
        return Err(SimError::PressureOutOfRange {
            pressure: p,
            min: params.p_min,
            max: params.p_max,
        });
    }
    Ok(params.c0 * (params.c_p * (p - params.p_min)).exp())
}

/// Adhesive force capacity in newtons for a contact of nominal radius `r`
/// (m) on an interface with fracture energy `g_c` (J/m²).
pub fn force_capacity(
    p: f64,
    r: f64,
    g_c: f64,
    pad_radius: f64,
    params: &AdhesionParams,
) -> Result<f64> {
    if !(r.is_finite() && g_c.is_finite()) {
        return Err(SimError::NonFinite("contact radius or adhesion energy"));
    }
    if r <= 0.0 || g_c <= 0.0 {
        return Err(SimError::InvalidScenario(format!(
            "contact radius ({r}) and adhesion energy ({g_c}) must be positive"
        )));
    }
    let c = compliance(p, params)?;
    if p >= params.release_pressure() {
        return Ok(0.0);
    }
    let r_eff = r.min(pad_radius);
    Ok(params.k_cal * (g_c * r_eff * r_eff / c).sqrt())
}

/// Timestamped record of commanded chamber pressure.
///
/// Only changes are stored; entries older than the switching latency are
/// pruned, keeping the most recent one at or before the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureHistory {
    initial: f64,
    entries: VecDeque<(f64, f64)>,
}

impl PressureHistory {
    pub fn new(initial: f64) -> Self {
        Self {
            initial,
            entries: VecDeque::new(),
        }
    }

    /// Records the pressure commanded at time `t`. Timestamps must not
    /// decrease.
    pub fn record(&mut self, t: f64, p: f64, tau_sw: f64) {
        if self.latest() != p {
            self.entries.push_back((t, p));
        }
        let cutoff = t - tau_sw - TIME_EPS;
        while self.entries.len() >= 2 && self.entries[1].0 <= cutoff {
            self.entries.pop_front();
        }
    }

    pub fn latest(&self) -> f64 {
        self.entries.back().map_or(self.initial, |e| e.1)
    }

    /// Pressure in effect (commanded) at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        self.entries
            .iter()
            .rev()
            .find(|(ts, _)| *ts <= t + TIME_EPS)
            .map_or(self.initial, |e| e.1)
    }

    /// Pressure felt by the membrane at time `t`, i.e. the command issued
    /// `tau_sw` earlier.
    pub fn delayed(&self, t: f64, tau_sw: f64) -> f64 {
        self.at(t - tau_sw)
    }
}

/// Capacity at time `t` given the commanded pressure history.
pub fn effective_capacity(
    history: &PressureHistory,
    t: f64,
    r: f64,
    g_c: f64,
    pad_radius: f64,
    params: &AdhesionParams,
) -> Result<f64> {
    let p = history.delayed(t, params.tau_sw);
    force_capacity(p, r, g_c, pad_radius, params)
}
