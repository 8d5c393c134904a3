//! Physical constants and the ion species used by the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Unified atomic mass unit (kg).
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Joules per electron-volt.
pub const JOULES_PER_EV: f64 = ELEMENTARY_CHARGE;

pub fn joules_to_ev(e: f64) -> f64 {
    e / JOULES_PER_EV
}

pub fn ev_to_joules(e: f64) -> f64 {
    e * JOULES_PER_EV
}

/// A singly charged positive ion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
}

impl IonSpecies {
    pub fn new(mass: f64, charge: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::invalid("mass", format!("must be positive, got {mass}")));
        }
        if !(charge > 0.0 && charge.is_finite()) {
            return Err(Error::invalid("charge", format!("must be positive, got {charge}")));
        }
        Ok(Self { mass, charge })
    }

    pub fn ba138() -> Self {
        Self { mass: 137.905_247 * AMU, charge: ELEMENTARY_CHARGE }
    }

    pub fn sr88() -> Self {
        Self { mass: 87.905_612 * AMU, charge: ELEMENTARY_CHARGE }
    }

    /// Kinetic energy (J) of a particle of this mass at speed `v` (m/s).
    pub fn kinetic_energy(&self, v: f64) -> f64 {
        0.5 * self.mass * v * v
    }

    /// Speed (m/s) at kinetic energy `e` (J); zero for non-positive energies.
    pub fn speed_at(&self, e: f64) -> f64 {
        if e <= 0.0 {
            0.0
        } else {
            (2.0 * e / self.mass).sqrt()
        }
    }
}

/// Named species known to the presets and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeciesName {
    Ba138,
    Sr88,
}

impl SpeciesName {
    pub fn species(self) -> IonSpecies {
        match self {
            SpeciesName::Ba138 => IonSpecies::ba138(),
            SpeciesName::Sr88 => IonSpecies::sr88(),
        }
    }

    /// Saturated first-stage photo-ionization linewidth (rad/s).
    pub fn first_stage_linewidth(self) -> f64 {
        use std::f64::consts::TAU;
        match self {
            SpeciesName::Ba138 => TAU * 18.9e6,
            SpeciesName::Sr88 => TAU * 32.0e6,
        }
    }

    /// Plume temperature (K) and center-of-mass speed (m/s) of the reference sources.
    pub fn reference_source(self) -> (f64, f64) {
        match self {
            SpeciesName::Ba138 => (1500.0, 40.0),
            SpeciesName::Sr88 => (225.0, 70.0),
        }
    }
}

impl std::str::FromStr for SpeciesName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ba138" | "ba" => Ok(SpeciesName::Ba138),
            "sr88" | "sr" => Ok(SpeciesName::Sr88),
            other => Err(Error::invalid("species", format!("unknown species `{other}`"))),
        }
    }
}

impl std::fmt::Display for SpeciesName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpeciesName::Ba138 => write!(f, "ba138"),
            SpeciesName::Sr88 => write!(f, "sr88"),
        }
    }
}
