//! Stray-field depth perturbation and one-at-a-time corner propagation of
//! parameter uncertainties into loading-curve bands.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{rf_null_height, rf_trap_depth, true_trap_depth, DriveConfig, TrapGeometry};
use crate::loading_model::{integrate_lattice, AreaLattice, LoadingCurve, PIBeams, SourceModel};
use crate::species::joules_to_ev;
use crate::trajectory::TrajectoryConfig;
use crate::volumes::{FieldGrid, GridSpec, VolumeModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    /// Stray-field bound (V/m).
    pub stray_field: f64,
    pub vrf_rel: f64,
    pub pi_rel: f64,
    pub temperature_rel: f64,
    pub target_rel: f64,
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        Self { stray_field: 1000.0, vrf_rel: 0.01, pi_rel: 0.10, temperature_rel: 0.20, target_rel: 0.10 }
    }
}

impl UncertaintySpec {
    pub fn zero() -> Self {
        Self { stray_field: 0.0, vrf_rel: 0.0, pi_rel: 0.0, temperature_rel: 0.0, target_rel: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stray_field", self.stray_field),
            ("vrf_rel", self.vrf_rel),
            ("pi_rel", self.pi_rel),
            ("target_rel", self.target_rel),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.temperature_rel >= 0.0 && self.temperature_rel < 1.0) {
            return Err(Error::invalid("temperature_rel", format!("must lie in [0, 1), got {}", self.temperature_rel)));
        }
        Ok(())
    }
}

/// Depth range (J) over uniform stray fields of magnitude `e_s` along `±x̂` and `±ẑ`.
///
/// Each perturbed depth is the closed-form true depth shifted by the change
/// in the grid-searched depth; a direction that removes the minimum gives zero.
pub fn stray_field_depth_on(field: &FieldGrid, drive: &DriveConfig, e_s: f64) -> Result<(f64, f64)> {
    if !(e_s >= 0.0 && e_s.is_finite()) {
        return Err(Error::invalid("stray_field", format!("must be non-negative, got {e_s}")));
    }
    let closed = true_trap_depth(&field.geom, drive);
    let all = stray_field_depths_on(field, drive, e_s);
    if all.is_empty() {
        return Ok((closed, closed));
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Perturbed depths in the order `+x̂, −x̂, +ẑ, −ẑ`; empty when `e_s = 0` or the trap is unbound.
pub fn stray_field_depths_on(field: &FieldGrid, drive: &DriveConfig, e_s: f64) -> Vec<f64> {
    let closed = true_trap_depth(&field.geom, drive);
    if e_s == 0.0 || closed <= 0.0 {
        return Vec::new();
    }
    let model = VolumeModel::new(field, *drive);
    let Some(base) = model.numeric_depth(|_, _| 0.0) else {
        return Vec::new();
    };
    let z0 = rf_null_height(&field.geom);
    let f = drive.species.charge * e_s;
    [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]
        .par_iter()
        .map(|&(ex, ez)| {
            let pert = model.numeric_depth(|x, z| -f * (ex * x + ez * (z - z0)));
            match pert {
                Some(d) => (closed + d - base).max(0.0),
                None => 0.0,
            }
        })
        .collect()
}

pub fn stray_field_depth(geom: &TrapGeometry, drive: &DriveConfig, grid: &GridSpec, e_s: f64) -> Result<(f64, f64)> {
    let field = FieldGrid::new(*geom, *grid)?;
    stray_field_depth_on(&field, drive, e_s)
}

/// The documented perturbations, each applied alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    StrayLow,
    StrayHigh,
    VrfLow,
    VrfHigh,
    PiLow,
    PiHigh,
    TemperatureLow,
    TemperatureHigh,
    TargetLow,
    TargetHigh,
}

impl Corner {
    pub const ALL: [Corner; 10] = [
        Corner::StrayLow,
        Corner::StrayHigh,
        Corner::VrfLow,
        Corner::VrfHigh,
        Corner::PiLow,
        Corner::PiHigh,
        Corner::TemperatureLow,
        Corner::TemperatureHigh,
        Corner::TargetLow,
        Corner::TargetHigh,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerValues {
    pub central: f64,
    pub values: Vec<(Corner, f64)>,
}

impl CornerValues {
    pub fn get(&self, c: Corner) -> f64 {
        self.values.iter().find(|(k, _)| *k == c).map(|(_, v)| *v).unwrap_or(self.central)
    }

    pub fn envelope(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((self.central, self.central), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)))
    }
}

fn p_at_depth(
    field: &FieldGrid,
    drive: &DriveConfig,
    depth: f64,
    beams: &PIBeams,
    src: &SourceModel,
    traj: &TrajectoryConfig,
) -> Result<(f64, Option<AreaLattice>)> {
    if depth <= 0.0 {
        return Ok((0.0, None));
    }
    let model = VolumeModel::with_depth(field, *drive, depth);
    let lattice = AreaLattice::from_levels(&model.stability_levels(beams, traj));
    let p = integrate_lattice(&lattice, &drive.species, beams, src)?;
    Ok((p, Some(lattice)))
}

/// Central value and every corner of [`Corner::ALL`] for one drive point.
pub fn corner_values_on(
    field: &FieldGrid,
    drive: &DriveConfig,
    beams: &PIBeams,
    src: &SourceModel,
    traj: &TrajectoryConfig,
    spec: &UncertaintySpec,
) -> Result<CornerValues> {
    spec.validate()?;
    let geom = &field.geom;
    let depth = true_trap_depth(geom, drive);
    let (central, lattice) = p_at_depth(field, drive, depth, beams, src, traj)?;
    let (s_lo, s_hi) = stray_field_depth_on(field, drive, spec.stray_field)?;

    let shifted = |d: f64| -> Result<f64> {
        if d == depth {
            Ok(central)
        } else {
            Ok(p_at_depth(field, drive, d, beams, src, traj)?.0)
        }
    };
    let at_vrf = |scale: f64| -> Result<f64> {
        if scale == 1.0 {
            return Ok(central);
        }
        let d = drive.with_v_rf(drive.v_rf * scale);
        Ok(p_at_depth(field, &d, true_trap_depth(geom, &d), beams, src, traj)?.0)
    };
    let reuse = |b: &PIBeams, s: &SourceModel| -> Result<f64> {
        match &lattice {
            Some(l) => integrate_lattice(l, &drive.species, b, s),
            None => Ok(0.0),
        }
    };
    let pi = |k: f64| reuse(&PIBeams { i2: beams.i2 * k, ..*beams }, src);
    let temp = |k: f64| reuse(beams, &SourceModel { temperature: src.temperature * k, ..*src });

    let values = vec![
        (Corner::StrayLow, shifted(s_lo)?),
        (Corner::StrayHigh, shifted(s_hi)?),
        (Corner::VrfLow, at_vrf(1.0 - spec.vrf_rel)?),
        (Corner::VrfHigh, at_vrf(1.0 + spec.vrf_rel)?),
        (Corner::PiLow, pi(1.0 - spec.pi_rel)?),
        (Corner::PiHigh, pi(1.0 + spec.pi_rel)?),
        (Corner::TemperatureLow, temp(1.0 - spec.temperature_rel)?),
        (Corner::TemperatureHigh, temp(1.0 + spec.temperature_rel)?),
        (Corner::TargetLow, central * (1.0 - spec.target_rel)),
        (Corner::TargetHigh, central * (1.0 + spec.target_rel)),
    ];
    Ok(CornerValues { central, values })
}

/// Sweeps `v_rf_list` and attaches the per-sample corner envelope as the band.
#[allow(clippy::too_many_arguments)]
pub fn curve_band(
    geom: &TrapGeometry,
    template: &DriveConfig,
    v_rf_list: &[f64],
    beams: &PIBeams,
    src: &SourceModel,
    grid: &GridSpec,
    traj: &TrajectoryConfig,
    spec: &UncertaintySpec,
) -> Result<(LoadingCurve, Vec<CornerValues>)> {
    if v_rf_list.is_empty() {
        return Err(Error::Usage("amplitude list is empty".into()));
    }
    if v_rf_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("v_rf_list", "amplitudes must be strictly increasing"));
    }
    beams.validate()?;
    src.validate()?;
    traj.validate()?;
    spec.validate()?;
    let field = FieldGrid::new(*geom, *grid)?;
    let corners: Vec<CornerValues> = v_rf_list
        .par_iter()
        .map(|&v| {
            let d = template.with_v_rf(v);
            d.validate()?;
            corner_values_on(&field, &d, beams, src, traj, spec)
        })
        .collect::<Result<_>>()?;
    let depths: Vec<f64> = v_rf_list
        .iter()
        .map(|&v| joules_to_ev(rf_trap_depth(geom, &template.with_v_rf(v))))
        .collect();
    let raw: Vec<f64> = corners.iter().map(|c| c.central).collect();
    let mut curve = LoadingCurve::from_raw(v_rf_list, &depths, &raw)?;
    curve.band = corners.iter().map(CornerValues::envelope).collect();
    Ok((curve, corners))
}
