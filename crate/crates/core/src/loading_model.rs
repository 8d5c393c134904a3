//! Relative loading probability: the velocity integral of the micromotion
//! filtered trapping area weighted by the plume speed distribution and the
//! photo-ionization probability, plus sweeps, smoothing and scale fitting.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{rf_trap_depth, true_trap_depth, DriveConfig, TrapGeometry};
use crate::species::{joules_to_ev, IonSpecies, SpeciesName, BOLTZMANN};
use crate::spline::SmoothingSpline;
use crate::trajectory::TrajectoryConfig;
use crate::volumes::{FieldGrid, GridSpec, StabilityLevels, VolumeModel};

/// Number of KE lattice points the area is sampled on.
pub const KE_LATTICE: usize = 50;
/// Lower velocity cutoff as a fraction of `v_max`.
pub const V_LO_FRACTION: f64 = 1e-3;
/// Smoothed values below this fraction of the raw maximum are round-off and read as zero.
pub const SMOOTHING_FLOOR: f64 = 1e-9;
const SIMPSON_START: usize = 200;
const SIMPSON_MAX: usize = SIMPSON_START << 14;
const SIMPSON_RTOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    /// K
    pub temperature: f64,
    /// Center-of-mass speed (m/s).
    pub v0: f64,
    /// Plume radius `w_a` (m).
    pub plume_radius: f64,
}

impl SourceModel {
    pub fn new(temperature: f64, v0: f64, plume_radius: f64) -> Result<Self> {
        let s = Self { temperature, v0, plume_radius };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature", format!("must be positive, got {}", self.temperature)));
        }
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            return Err(Error::invalid("v0", format!("must be non-negative, got {}", self.v0)));
        }
        if !(self.plume_radius > 0.0 && self.plume_radius.is_finite()) {
            return Err(Error::invalid("plume_radius", format!("must be positive, got {}", self.plume_radius)));
        }
        Ok(())
    }

    /// Reference plume of `name` with a 1 mm radius.
    pub fn reference(name: SpeciesName) -> Self {
        let (temperature, v0) = name.reference_source();
        Self { temperature, v0, plume_radius: 1e-3 }
    }

    /// `√(k_B T / m)` (m/s).
    pub fn thermal_speed(&self, species: &IonSpecies) -> f64 {
        (BOLTZMANN * self.temperature / species.mass).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PIBeams {
    /// 1/e² waist `w₀` (m).
    pub waist: f64,
    /// Saturated first-stage linewidth `γ₁` (rad/s).
    pub gamma1: f64,
    /// Second-stage intensity `I₂` (W/cm²).
    pub i2: f64,
}

impl PIBeams {
    pub fn new(waist: f64, gamma1: f64, i2: f64) -> Result<Self> {
        let b = Self { waist, gamma1, i2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("waist", self.waist), ("gamma1", self.gamma1), ("i2", self.i2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// 50 µm waist, 6 W/cm², barium linewidth.
    pub fn reference() -> Self {
        Self::for_species(SpeciesName::Ba138)
    }

    pub fn for_species(name: SpeciesName) -> Self {
        Self { waist: 50e-6, gamma1: name.first_stage_linewidth(), i2: 6.0 }
    }
}

/// Plume speed density `(1/w_a² k_B T) exp(−m(v−v₀)²/2k_B T)`.
pub fn ablation_factor(src: &SourceModel, species: &IonSpecies, v: f64) -> f64 {
    let kt = BOLTZMANN * src.temperature;
    let dv = v - src.v0;
    (-species.mass * dv * dv / (2.0 * kt)).exp() / (src.plume_radius * src.plume_radius * kt)
}

/// Ionization-and-capture factor `(I₂w₀/v)(1 − e^(−γ₁w₀/2v))` for `v > 0`.
pub fn trap_factor(beams: &PIBeams, v: f64) -> f64 {
    let x = beams.gamma1 * beams.waist / (2.0 * v);
    beams.i2 * beams.waist / v * -(-x).exp_m1()
}

/// Product of the two factors: the velocity weight multiplying the trapping area.
pub fn velocity_weight(src: &SourceModel, species: &IonSpecies, beams: &PIBeams, v: f64) -> f64 {
    ablation_factor(src, species, v) * trap_factor(beams, v)
}

/// Composite Simpson on `n` (even) intervals.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Simpson from 200 intervals, doubling until successive estimates differ by less than 1%.
pub fn integrate_velocity<F: Fn(f64) -> f64>(f: F, v_lo: f64, v_hi: f64) -> Result<f64> {
    let mut n = SIMPSON_START;
    let mut prev = simpson(&f, v_lo, v_hi, n);
    loop {
        n *= 2;
        let cur = simpson(&f, v_lo, v_hi, n);
        let scale = cur.abs().max(prev.abs());
        let change = if scale == 0.0 { 0.0 } else { (cur - prev).abs() / scale };
        if change < SIMPSON_RTOL {
            return Ok(cur);
        }
        if n >= SIMPSON_MAX {
            return Err(Error::Accuracy { relative_change: change });
        }
        prev = cur;
    }
}

/// Micromotion-filtered area sampled on an even KE lattice over `[0, E_max]`.
#[derive(Debug, Clone)]
pub struct AreaLattice {
    pub depth: f64,
    pub areas: Vec<f64>,
}

impl AreaLattice {
    pub fn from_levels(levels: &StabilityLevels) -> Self {
        let depth = levels.depth();
        let areas = (0..KE_LATTICE)
            .map(|k| levels.area(depth * k as f64 / (KE_LATTICE - 1) as f64))
            .collect();
        Self { depth, areas }
    }

    /// Linear interpolation in KE; zero at and beyond the depth.
    pub fn area(&self, ke: f64) -> f64 {
        if !(ke < self.depth) || self.depth <= 0.0 {
            return 0.0;
        }
        let t = (ke.max(0.0) / self.depth) * (KE_LATTICE - 1) as f64;
        let i = (t.floor() as usize).min(KE_LATTICE - 2);
        let f = t - i as f64;
        self.areas[i] * (1.0 - f) + self.areas[i + 1] * f
    }
}

/// Velocity integral over a precomputed area lattice.
pub fn integrate_lattice(lattice: &AreaLattice, species: &IonSpecies, beams: &PIBeams, src: &SourceModel) -> Result<f64> {
    if lattice.depth <= 0.0 || lattice.areas.iter().all(|&a| a == 0.0) {
        return Ok(0.0);
    }
    let v_max = species.speed_at(lattice.depth);
    let f = |v: f64| lattice.area(species.kinetic_energy(v)) * velocity_weight(src, species, beams, v);
    integrate_velocity(f, V_LO_FRACTION * v_max, v_max)
}

/// `P_trap` on a prebuilt field grid.
pub fn p_trap_on(field: &FieldGrid, drive: &DriveConfig, beams: &PIBeams, src: &SourceModel, traj: &TrajectoryConfig) -> Result<f64> {
    let model = VolumeModel::new(field, *drive);
    if model.depth <= 0.0 {
        return Ok(0.0);
    }
    let levels = model.stability_levels(beams, traj);
    integrate_lattice(&AreaLattice::from_levels(&levels), &drive.species, beams, src)
}

/// Relative loading probability for one drive point; zero when the true depth is not positive.
pub fn p_trap(
    geom: &TrapGeometry,
    drive: &DriveConfig,
    beams: &PIBeams,
    src: &SourceModel,
    grid: &GridSpec,
    traj: &TrajectoryConfig,
) -> Result<f64> {
    drive.validate()?;
    beams.validate()?;
    src.validate()?;
    traj.validate()?;
    if true_trap_depth(geom, drive) <= 0.0 {
        return Ok(0.0);
    }
    let field = FieldGrid::new(*geom, *grid)?;
    p_trap_on(&field, drive, beams, src, traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub v_rf: f64,
    /// rf trap depth (eV).
    pub depth_ev: f64,
    pub p_raw: f64,
    pub p_smoothed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadingCurve {
    pub samples: Vec<CurveSample>,
    pub scale: f64,
    /// Per-sample `(low, high)` bracketing `p_raw`.
    pub band: Vec<(f64, f64)>,
}

impl LoadingCurve {
    /// Builds a curve from raw values, smoothing over depth.
    pub fn from_raw(v_rf: &[f64], depth_ev: &[f64], p_raw: &[f64]) -> Result<Self> {
        if v_rf.len() != depth_ev.len() || v_rf.len() != p_raw.len() || v_rf.is_empty() {
            return Err(Error::invalid("curve", "amplitude, depth and probability lists must be non-empty and equal in length"));
        }
        if depth_ev.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("curve", "depths must be strictly increasing"));
        }
        let smoothed = if p_raw.iter().all(|&p| p == 0.0) {
            vec![0.0; p_raw.len()]
        } else {
            // probabilities are non-negative; the spline may undershoot near threshold
            let floor = SMOOTHING_FLOOR * p_raw.iter().fold(0.0, |m: f64, p| m.max(p.abs()));
            SmoothingSpline::fit(depth_ev, p_raw)?
                .fitted()
                .iter()
                .map(|&p| if p > floor { p } else { 0.0 })
                .collect()
        };
        let samples = (0..v_rf.len())
            .map(|i| CurveSample { v_rf: v_rf[i], depth_ev: depth_ev[i], p_raw: p_raw[i], p_smoothed: smoothed[i] })
            .collect();
        Ok(Self { samples, scale: 1.0, band: p_raw.iter().map(|&p| (p, p)).collect() })
    }

    pub fn depths(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.depth_ev).collect()
    }

    pub fn raw(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.p_raw).collect()
    }

    pub fn smoothed(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.p_smoothed).collect()
    }

    /// Smoothing spline through the raw samples, for evaluation between depths.
    pub fn spline(&self) -> Result<SmoothingSpline> {
        SmoothingSpline::fit(&self.depths(), &self.raw())
    }

    /// Sample with the largest raw value.
    pub fn peak(&self) -> Option<&CurveSample> {
        self.samples.iter().max_by(|a, b| a.p_raw.total_cmp(&b.p_raw))
    }

    /// CSV `depth_eV,p_raw,p_smoothed,band_lo,band_hi`, plus `p_scaled` when requested.
    pub fn write_csv<W: Write>(&self, w: W, with_scaled: bool) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["depth_eV", "p_raw", "p_smoothed", "band_lo", "band_hi"];
        if with_scaled {
            header.push("p_scaled");
        }
        wtr.write_record(&header)?;
        for (s, (lo, hi)) in self.samples.iter().zip(&self.band) {
            let mut row = vec![
                format!("{:e}", s.depth_ev),
                format!("{:e}", s.p_raw),
                format!("{:e}", s.p_smoothed),
                format!("{lo:e}"),
                format!("{hi:e}"),
            ];
            if with_scaled {
                row.push(format!("{:e}", self.scale * s.p_smoothed));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One parsed row of a curve CSV.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct CurveRow {
    #[serde(rename = "depth_eV")]
    pub depth_ev: f64,
    pub p_raw: f64,
    pub p_smoothed: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    #[serde(default)]
    pub p_scaled: Option<f64>,
}

pub fn read_curve_csv<R: Read>(r: R) -> Result<Vec<CurveRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Evaluates the curve at every amplitude of `v_rf_list` over one shared field grid.
pub fn sweep_curve(
    geom: &TrapGeometry,
    template: &DriveConfig,
    v_rf_list: &[f64],
    beams: &PIBeams,
    src: &SourceModel,
    grid: &GridSpec,
    traj: &TrajectoryConfig,
) -> Result<LoadingCurve> {
    if v_rf_list.is_empty() {
        return Err(Error::Usage("amplitude list is empty".into()));
    }
    if v_rf_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("v_rf_list", "amplitudes must be strictly increasing"));
    }
    beams.validate()?;
    src.validate()?;
    traj.validate()?;
    let field = FieldGrid::new(*geom, *grid)?;
    let p = sweep_on(&field, template, v_rf_list, beams, src, traj)?;
    let depths: Vec<f64> = v_rf_list
        .iter()
        .map(|&v| joules_to_ev(rf_trap_depth(geom, &template.with_v_rf(v))))
        .collect();
    LoadingCurve::from_raw(v_rf_list, &depths, &p)
}

/// Raw `P_trap` per amplitude, evaluated in parallel.
pub fn sweep_on(
    field: &FieldGrid,
    template: &DriveConfig,
    v_rf_list: &[f64],
    beams: &PIBeams,
    src: &SourceModel,
    traj: &TrajectoryConfig,
) -> Result<Vec<f64>> {
    v_rf_list
        .par_iter()
        .map(|&v| {
            let drive = template.with_v_rf(v);
            drive.validate()?;
            p_trap_on(field, &drive, beams, src, traj)
        })
        .collect()
}

/// One measured loading rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    #[serde(rename = "depth_eV")]
    pub depth_ev: f64,
    pub rate: f64,
    pub sigma: f64,
}

pub fn read_data_csv<R: Read>(r: R) -> Result<Vec<DataPoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_data_csv<W: Write>(w: W, data: &[DataPoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for d in data {
        wtr.serialize(d)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Weighted least-squares scale `s = Σ(mᵢdᵢ/σᵢ²) / Σ(mᵢ²/σᵢ²)` against the smoothed model.
pub fn fit_scale(curve: &LoadingCurve, data: &[DataPoint]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("data", "at least one data point is required"));
    }
    if let Some(d) = data.iter().find(|d| !(d.sigma > 0.0 && d.sigma.is_finite())) {
        return Err(Error::invalid("sigma", format!("must be positive, got {}", d.sigma)));
    }
    let depths = curve.depths();
    let (lo, hi) = (depths[0], depths[depths.len() - 1]);
    if let Some(d) = data.iter().find(|d| d.depth_ev < lo || d.depth_ev > hi) {
        return Err(Error::invalid("data", format!("depth {} eV lies outside the model range [{lo}, {hi}] eV", d.depth_ev)));
    }
    let spline = curve.spline()?;
    let (mut num, mut den) = (0.0, 0.0);
    for d in data {
        let m = spline.eval(d.depth_ev);
        let w = 1.0 / (d.sigma * d.sigma);
        num += m * d.rate * w;
        den += m * m * w;
    }
    if den == 0.0 {
        return Err(Error::FitDegenerate("model vanishes at every data depth".into()));
    }
    Ok(num / den)
}
