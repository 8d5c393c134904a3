//! Run configuration: a TOML file with one table per model component and
//! SI units spelled out in every key, plus the two built-in trap presets.
//!
//! ```toml
//! species = "ba138"
//!
//! [trap]
//! a_m = 34e-6
//! b_m = 127e-6
//!
//! [drive]
//! v_rf_V = 100.0
//! rf_frequency_Hz = 40e6
//! axial_frequency_Hz = 500e3
//!
//! [source]
//! temperature_K = 1500.0
//! v0_m_per_s = 40.0
//! plume_radius_m = 1e-3
//!
//! [beams]
//! waist_m = 50e-6
//! linewidth_Hz = 18.9e6
//! i2_W_per_cm2 = 6.0
//! ```
//!
//! `[grid]`, `[trajectory]`, `[uncertainty]`, `[tof]` and `[sweep]` are optional.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{DriveConfig, TrapGeometry};
use crate::loading_model::{PIBeams, SourceModel};
use crate::species::SpeciesName;
use crate::tof_analysis::TofSetup;
use crate::trajectory::TrajectoryConfig;
use crate::uncertainty::UncertaintySpec;
use crate::volumes::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Pcb,
    Microfab,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcb" => Ok(Preset::Pcb),
            "microfab" => Ok(Preset::Microfab),
            other => Err(Error::Usage(format!("unknown preset `{other}` (expected pcb or microfab)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    pub a_m: f64,
    pub b_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    #[serde(rename = "v_rf_V")]
    pub v_rf: f64,
    #[serde(rename = "rf_frequency_Hz")]
    pub rf_frequency: f64,
    #[serde(rename = "axial_frequency_Hz")]
    pub axial_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    #[serde(rename = "temperature_K")]
    pub temperature: f64,
    pub v0_m_per_s: f64,
    pub plume_radius_m: f64,
}

impl From<&SourceModel> for SourceSection {
    fn from(s: &SourceModel) -> Self {
        Self { temperature: s.temperature, v0_m_per_s: s.v0, plume_radius_m: s.plume_radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamsSection {
    pub waist_m: f64,
    /// `γ₁/2π`.
    #[serde(rename = "linewidth_Hz")]
    pub linewidth: f64,
    #[serde(rename = "i2_W_per_cm2")]
    pub i2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacing_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_min_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_min_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_max_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub steps_per_period: usize,
    pub q_threshold: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let t = TrajectoryConfig::default();
        Self { steps_per_period: t.steps_per_period, q_threshold: t.q_threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintySection {
    #[serde(rename = "stray_field_V_per_m")]
    pub stray_field: f64,
    pub vrf_rel: f64,
    pub pi_rel: f64,
    pub temperature_rel: f64,
    pub target_rel: f64,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        let u = UncertaintySpec::default();
        Self {
            stray_field: u.stray_field,
            vrf_rel: u.vrf_rel,
            pi_rel: u.pi_rel,
            temperature_rel: u.temperature_rel,
            target_rel: u.target_rel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TofSection {
    pub distance_m: f64,
    pub probe_radius_m: f64,
    pub bin_width_s: f64,
    pub gate_s: f64,
    pub t_max_s: f64,
}

impl Default for TofSection {
    fn default() -> Self {
        let t = TofSetup::default();
        Self {
            distance_m: t.distance,
            probe_radius_m: t.probe_radius,
            bin_width_s: t.bin_width,
            gate_s: t.gate,
            t_max_s: t.t_max,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(rename = "v_rf_V", default)]
    pub v_rf: Vec<f64>,
}

/// On-disk layout of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub species: SpeciesName,
    pub trap: TrapSection,
    pub drive: DriveSection,
    pub source: SourceSection,
    pub beams: BeamsSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub uncertainty: UncertaintySection,
    #[serde(default)]
    pub tof: TofSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// Validated model inputs for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub species: SpeciesName,
    pub trap: TrapGeometry,
    pub drive: DriveConfig,
    pub source: SourceModel,
    pub beams: PIBeams,
    pub grid: GridSpec,
    pub traj: TrajectoryConfig,
    pub uncertainty: UncertaintySpec,
    pub tof: TofSetup,
    /// Amplitudes for sweeps (V).
    pub v_rf_list: Vec<f64>,
}

fn even_list(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl RunConfig {
    /// Table values for the named trap with the reference plume of `species`.
    pub fn preset(preset: Preset, species: SpeciesName) -> Self {
        let (trap, v_rf, rf, ax, list) = match preset {
            Preset::Pcb => (TrapGeometry::pcb(), 580.0, 7e6, 100e3, even_list(100.0, 1000.0, 15)),
            Preset::Microfab => (TrapGeometry::microfab(), 100.0, 40e6, 500e3, even_list(40.0, 200.0, 15)),
        };
        Self {
            species,
            trap,
            drive: DriveConfig { v_rf, omega_rf: TAU * rf, omega_ax: TAU * ax, species: species.species() },
            source: SourceModel::reference(species),
            beams: PIBeams::for_species(species),
            grid: GridSpec::default_for(&trap),
            traj: TrajectoryConfig::default(),
            uncertainty: UncertaintySpec::default(),
            tof: TofSetup::default(),
            v_rf_list: list,
        }
    }

    /// Switches the ion, its reference plume and its first-stage linewidth.
    pub fn with_species(mut self, species: SpeciesName) -> Self {
        self.species = species;
        self.drive.species = species.species();
        self.source = SourceModel { plume_radius: self.source.plume_radius, ..SourceModel::reference(species) };
        self.beams.gamma1 = species.first_stage_linewidth();
        self
    }

    /// Replaces the grid spacing, keeping the default domain for the trap.
    pub fn with_grid_spacing(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid("grid_spacing", format!("must be positive, got {h}")));
        }
        let ze = self.trap.escape_height();
        self.grid = GridSpec { spacing: h, z_min: h, x_min: -2.0 * ze, x_max: 2.0 * ze, z_max: 3.0 * ze };
        self.grid.validate_for(&self.trap)?;
        Ok(self)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_file(f: ConfigFile) -> Result<Self> {
        let trap = TrapGeometry::new(f.trap.a_m, f.trap.b_m)?;
        let species = f.species;
        let drive = DriveConfig::new(
            f.drive.v_rf,
            TAU * f.drive.rf_frequency,
            TAU * f.drive.axial_frequency,
            species.species(),
        )?;
        let source = SourceModel::new(f.source.temperature, f.source.v0_m_per_s, f.source.plume_radius_m)?;
        let beams = PIBeams::new(f.beams.waist_m, TAU * f.beams.linewidth, f.beams.i2)?;
        let h = f.grid.spacing_m.unwrap_or_else(|| trap.rf_null_height() / 200.0);
        let d = GridSpec::with_spacing(&trap, h);
        let grid = GridSpec {
            spacing: h,
            x_min: f.grid.x_min_m.unwrap_or(d.x_min),
            x_max: f.grid.x_max_m.unwrap_or(d.x_max),
            z_min: f.grid.z_min_m.unwrap_or(d.z_min),
            z_max: f.grid.z_max_m.unwrap_or(d.z_max),
        };
        grid.validate_for(&trap)?;
        let traj = TrajectoryConfig { steps_per_period: f.trajectory.steps_per_period, q_threshold: f.trajectory.q_threshold };
        traj.validate()?;
        let u = &f.uncertainty;
        let uncertainty = UncertaintySpec {
            stray_field: u.stray_field,
            vrf_rel: u.vrf_rel,
            pi_rel: u.pi_rel,
            temperature_rel: u.temperature_rel,
            target_rel: u.target_rel,
        };
        uncertainty.validate()?;
        let t = &f.tof;
        let tof = TofSetup {
            distance: t.distance_m,
            probe_radius: t.probe_radius_m,
            bin_width: t.bin_width_s,
            gate: t.gate_s,
            t_max: t.t_max_s,
        };
        tof.validate()?;
        if f.sweep.v_rf.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("sweep.v_rf_V must be strictly increasing".into()));
        }
        Ok(Self { species, trap, drive, source, beams, grid, traj, uncertainty, tof, v_rf_list: f.sweep.v_rf })
    }

    pub fn to_file(&self) -> ConfigFile {
        let default_h = self.trap.rf_null_height() / 200.0;
        let d = GridSpec::with_spacing(&self.trap, self.grid.spacing);
        let keep = |v: f64, dv: f64| (v != dv).then_some(v);
        ConfigFile {
            species: self.species,
            trap: TrapSection { a_m: self.trap.a, b_m: self.trap.b },
            drive: DriveSection {
                v_rf: self.drive.v_rf,
                rf_frequency: self.drive.omega_rf / TAU,
                axial_frequency: self.drive.omega_ax / TAU,
            },
            source: SourceSection::from(&self.source),
            beams: BeamsSection { waist_m: self.beams.waist, linewidth: self.beams.gamma1 / TAU, i2: self.beams.i2 },
            grid: GridSection {
                spacing_m: keep(self.grid.spacing, default_h),
                x_min_m: keep(self.grid.x_min, d.x_min),
                x_max_m: keep(self.grid.x_max, d.x_max),
                z_min_m: keep(self.grid.z_min, d.z_min),
                z_max_m: keep(self.grid.z_max, d.z_max),
            },
            trajectory: TrajectorySection { steps_per_period: self.traj.steps_per_period, q_threshold: self.traj.q_threshold },
            uncertainty: UncertaintySection {
                stray_field: self.uncertainty.stray_field,
                vrf_rel: self.uncertainty.vrf_rel,
                pi_rel: self.uncertainty.pi_rel,
                temperature_rel: self.uncertainty.temperature_rel,
                target_rel: self.uncertainty.target_rel,
            },
            tof: TofSection {
                distance_m: self.tof.distance,
                probe_radius_m: self.tof.probe_radius,
                bin_width_s: self.tof.bin_width,
                gate_s: self.tof.gate,
                t_max_s: self.tof.t_max,
            },
            sweep: SweepSection { v_rf: self.v_rf_list.clone() },
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(&self.to_file()).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `[source]` table for a fitted plume, ready to paste into a config file.
pub fn source_fragment(src: &SourceModel) -> Result<String> {
    #[derive(Serialize)]
    struct Fragment {
        source: SourceSection,
    }
    toml::to_string(&Fragment { source: SourceSection::from(src) }).map_err(|e| Error::Config(e.to_string()))
}

/// Parses a fragment written by [`source_fragment`].
pub fn parse_source_fragment(text: &str) -> Result<SourceModel> {
    #[derive(Deserialize)]
    struct Fragment {
        source: SourceSection,
    }
    let f: Fragment = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    SourceModel::new(f.source.temperature, f.source.v0_m_per_s, f.source.plume_radius_m)
}
