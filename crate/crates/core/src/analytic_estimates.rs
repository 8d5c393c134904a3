//! Closed-form harmonic estimates of the loading probability in its low- and
//! high-depth limits, and the optimal depths they imply, for compact traps
//! (trapping region smaller than the beams) and large traps (region
//! effectively one-dimensional along the beam).
//!
//! All probabilities are relative, normalized so that the compact-regime
//! `P_high` equals one at the compact optimum. Depths are rf trap depths in J.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{q_per_unit_hessian, rf_null_height, rf_trap_depth, unit_hessian, DriveConfig, TrapGeometry};
use crate::loading_model::SourceModel;
use crate::species::{IonSpecies, BOLTZMANN};

/// Ratio `m(v_max − v₀)²/2k_BT` above which the hot-plume expansion is flagged as violated.
pub const HOT_PLUME_LIMIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Compact,
    Large,
}

/// On-axis Mathieu `|Q|` at the rf null for the amplitude giving rf depth `depth`.
pub fn q_at_depth(geom: &TrapGeometry, drive: &DriveConfig, depth: f64) -> f64 {
    if depth <= 0.0 {
        return 0.0;
    }
    let unit = drive.with_v_rf(1.0);
    let v = (depth / rf_trap_depth(geom, &unit)).sqrt();
    let (hxx, _) = unit_hessian(geom, 0.0, rf_null_height(geom));
    // traceless: both diagonal entries share the magnitude
    q_per_unit_hessian(&unit) * v * hxx.abs()
}

/// `½m(v₀ + √(k_BT/m))²` (J).
pub fn e_opt_compact(src: &SourceModel, species: &IonSpecies) -> f64 {
    species.kinetic_energy(src.v0 + src.thermal_speed(species))
}

/// `½mv₀²(1 + √(1 + 1/Q₀))²` (J) with `Q₀` taken at rf depth `½mv₀²`.
pub fn e_opt_large(src: &SourceModel, species: &IonSpecies, geom: &TrapGeometry, drive: &DriveConfig) -> Result<f64> {
    let e0 = species.kinetic_energy(src.v0);
    let q0 = q_at_depth(geom, &DriveConfig { species: *species, ..*drive }, e0);
    if !(q0 > 0.0) {
        return Err(Error::invalid("v0", "reference Mathieu parameter vanishes; v0 must be positive"));
    }
    let bracket = 1.0 + (1.0 + 1.0 / q0).sqrt();
    Ok(e0 * bracket * bracket)
}

/// Limiting probabilities in one regime for a fixed source, species, trap and drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeEstimate {
    pub regime: Regime,
    pub src: SourceModel,
    pub species: IonSpecies,
    pub geom: TrapGeometry,
    pub drive: DriveConfig,
    norm: f64,
}

impl RegimeEstimate {
    pub fn new(regime: Regime, src: SourceModel, geom: TrapGeometry, drive: DriveConfig) -> Result<Self> {
        src.validate()?;
        geom.validate()?;
        if !(src.v0 > 0.0) {
            return Err(Error::invalid("v0", "limiting forms require a positive center-of-mass speed"));
        }
        let species = drive.species;
        let mut est = Self { regime, src, species, geom, drive, norm: 1.0 };
        let q = q_at_depth(&geom, &drive, e_opt_compact(&src, &species));
        est.norm = est.hot_factor() / (src.v0 * (1.0 + q).powi(2));
        Ok(est)
    }

    /// `√(πk_BT/2m)` (m/s).
    fn hot_factor(&self) -> f64 {
        (std::f64::consts::PI * BOLTZMANN * self.src.temperature / (2.0 * self.species.mass)).sqrt()
    }

    pub fn q(&self, depth: f64) -> f64 {
        q_at_depth(&self.geom, &self.drive, depth)
    }

    pub fn v_max(&self, depth: f64) -> f64 {
        self.species.speed_at(depth)
    }

    /// `(P_low, P_high)` at rf depth `depth` (J). `P_low` is zero for `v_max ≤ v₀`.
    pub fn limits(&self, depth: f64) -> (f64, f64) {
        let v0 = self.src.v0;
        let vm = self.v_max(depth);
        let q1 = 1.0 + self.q(depth);
        let excess = (vm - v0).max(0.0);
        let (low, high) = match self.regime {
            Regime::Compact => (excess / (v0 * q1 * q1), self.hot_factor() / (v0 * q1 * q1)),
            Regime::Large => {
                let span = if vm > 0.0 { (1.0 / v0 - 1.0 / vm).max(0.0) } else { 0.0 };
                (excess * span / q1, self.hot_factor() * span / q1)
            }
        };
        (low / self.norm, high / self.norm)
    }

    pub fn e_opt(&self) -> Result<f64> {
        match self.regime {
            Regime::Compact => Ok(e_opt_compact(&self.src, &self.species)),
            Regime::Large => e_opt_large(&self.src, &self.species, &self.geom, &self.drive),
        }
    }

    /// `m(v_max − v₀)²/2k_BT`; the limiting forms assume this is small.
    pub fn hot_plume_ratio(&self, depth: f64) -> f64 {
        let dv = self.v_max(depth) - self.src.v0;
        self.species.mass * dv * dv / (2.0 * BOLTZMANN * self.src.temperature)
    }

    pub fn hot_plume_violated(&self, depth: f64) -> bool {
        self.hot_plume_ratio(depth) > HOT_PLUME_LIMIT
    }
}

pub fn p_limits_compact(src: &SourceModel, geom: &TrapGeometry, drive: &DriveConfig, depth: f64) -> Result<(f64, f64)> {
    Ok(RegimeEstimate::new(Regime::Compact, *src, *geom, *drive)?.limits(depth))
}

pub fn p_limits_large(src: &SourceModel, geom: &TrapGeometry, drive: &DriveConfig, depth: f64) -> Result<(f64, f64)> {
    Ok(RegimeEstimate::new(Regime::Large, *src, *geom, *drive)?.limits(depth))
}
