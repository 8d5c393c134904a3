//! Python bindings: trap, drive, plume and beam descriptions plus the main
//! model operations. Energies cross the boundary in eV, everything else in SI.

use std::f64::consts::TAU;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use trapload::analytic_estimates as analytic;
use trapload::config::{Preset, RunConfig};
use trapload::field_model as fm;
use trapload::loading_model as lm;
use trapload::species::{ev_to_joules, joules_to_ev, SpeciesName};
use trapload::tof_analysis as tof;
use trapload::trajectory::TrajectoryConfig;
use trapload::volumes::{volume_cascade, GridSpec};
use trapload::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Csv(_) => PyIOError::new_err(e.to_string()),
        Error::Usage(_) | Error::InvalidParameter { .. } | Error::Config(_) | Error::Domain { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn species(name: &str) -> PyResult<SpeciesName> {
    name.parse().map_err(to_py)
}

#[pyclass(name = "TrapGeometry", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyTrap(fm::TrapGeometry);

#[pymethods]
impl PyTrap {
    #[new]
    fn new(a: f64, b: f64) -> PyResult<Self> {
        fm::TrapGeometry::new(a, b).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn pcb() -> Self {
        Self(fm::TrapGeometry::pcb())
    }

    #[staticmethod]
    fn microfab() -> Self {
        Self(fm::TrapGeometry::microfab())
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }

    fn rf_null_height(&self) -> f64 {
        self.0.rf_null_height()
    }

    fn escape_height(&self) -> f64 {
        self.0.escape_height()
    }

    fn kappa(&self) -> f64 {
        self.0.kappa()
    }

    fn __repr__(&self) -> String {
        format!("TrapGeometry(a={:e}, b={:e})", self.0.a, self.0.b)
    }
}

#[pyclass(name = "DriveConfig", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyDrive(fm::DriveConfig);

#[pymethods]
impl PyDrive {
    /// Frequencies in Hz (not rad/s).
    #[new]
    #[pyo3(signature = (v_rf, rf_frequency, axial_frequency, species = "ba138"))]
    fn new(v_rf: f64, rf_frequency: f64, axial_frequency: f64, species: &str) -> PyResult<Self> {
        let sp = self::species(species)?.species();
        fm::DriveConfig::new(v_rf, TAU * rf_frequency, TAU * axial_frequency, sp).map(Self).map_err(to_py)
    }

    #[getter]
    fn v_rf(&self) -> f64 {
        self.0.v_rf
    }

    fn with_v_rf(&self, v_rf: f64) -> Self {
        Self(self.0.with_v_rf(v_rf))
    }
}

#[pyclass(name = "SourceModel", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PySource(lm::SourceModel);

#[pymethods]
impl PySource {
    #[new]
    #[pyo3(signature = (temperature, v0, plume_radius = 1e-3))]
    fn new(temperature: f64, v0: f64, plume_radius: f64) -> PyResult<Self> {
        lm::SourceModel::new(temperature, v0, plume_radius).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn reference(species: &str) -> PyResult<Self> {
        Ok(Self(lm::SourceModel::reference(self::species(species)?)))
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.0.temperature
    }

    #[getter]
    fn v0(&self) -> f64 {
        self.0.v0
    }

    #[getter]
    fn plume_radius(&self) -> f64 {
        self.0.plume_radius
    }
}

#[pyclass(name = "PIBeams", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyBeams(lm::PIBeams);

#[pymethods]
impl PyBeams {
    /// `linewidth` is γ₁/2π in Hz; `i2` in W/cm².
    #[new]
    fn new(waist: f64, linewidth: f64, i2: f64) -> PyResult<Self> {
        lm::PIBeams::new(waist, TAU * linewidth, i2).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn for_species(species: &str) -> PyResult<Self> {
        Ok(Self(lm::PIBeams::for_species(self::species(species)?)))
    }
}

/// Preset as `(trap, drive, source, beams, amplitudes)`.
#[pyfunction]
#[pyo3(signature = (name, species = "ba138"))]
fn preset(name: &str, species: &str) -> PyResult<(PyTrap, PyDrive, PySource, PyBeams, Vec<f64>)> {
    let p: Preset = name.parse().map_err(to_py)?;
    let c = RunConfig::preset(p, self::species(species)?);
    Ok((PyTrap(c.trap), PyDrive(c.drive), PySource(c.source), PyBeams(c.beams), c.v_rf_list))
}

#[pyfunction]
fn rf_trap_depth(trap: PyRef<'_, PyTrap>, drive: PyRef<'_, PyDrive>) -> f64 {
    joules_to_ev(fm::rf_trap_depth(&trap.0, &drive.0))
}

#[pyfunction]
fn true_trap_depth(trap: PyRef<'_, PyTrap>, drive: PyRef<'_, PyDrive>) -> f64 {
    joules_to_ev(fm::true_trap_depth(&trap.0, &drive.0))
}

#[pyfunction]
fn threshold_voltage(trap: PyRef<'_, PyTrap>, drive: PyRef<'_, PyDrive>) -> f64 {
    fm::threshold_voltage(&trap.0, drive.0.omega_rf, drive.0.omega_ax, &drive.0.species)
}

/// `(f_x, f_z, f_axial)` in Hz.
#[pyfunction]
fn secular_frequencies(trap: PyRef<'_, PyTrap>, drive: PyRef<'_, PyDrive>) -> PyResult<(f64, f64, f64)> {
    let f = fm::secular_frequencies(&trap.0, &drive.0).map_err(to_py)?;
    Ok((f.radial_x, f.radial_z, f.axial))
}

/// Total potential energy (eV) at `(x, z)`.
#[pyfunction]
fn total_potential(trap: PyRef<'_, PyTrap>, drive: PyRef<'_, PyDrive>, x: f64, z: f64) -> PyResult<f64> {
    let p = fm::total_potential(&trap.0, &drive.0, fm::RadialPoint::new(x, z)).map_err(to_py)?;
    Ok(joules_to_ev(p.total))
}

/// Areas (m²) of the bare, ke, ke_pi and ke_pi_mm masks.
#[pyfunction]
#[pyo3(signature = (trap, drive, beams, ke_ev, spacing = None))]
fn volume_areas(
    trap: PyRef<'_, PyTrap>,
    drive: PyRef<'_, PyDrive>,
    beams: PyRef<'_, PyBeams>,
    ke_ev: f64,
    spacing: Option<f64>,
) -> PyResult<(f64, f64, f64, f64)> {
    let grid = match spacing {
        Some(h) => GridSpec::with_spacing(&trap.0, h),
        None => GridSpec::default_for(&trap.0),
    };
    let c = volume_cascade(&trap.0, &drive.0, &beams.0, &grid, &TrajectoryConfig::default(), ev_to_joules(ke_ev))
        .map_err(to_py)?;
    let [a, b, c2, d] = c.areas();
    Ok((a, b, c2, d))
}

#[pyfunction]
#[pyo3(signature = (trap, drive, beams, source, spacing = None))]
fn p_trap(
    trap: PyRef<'_, PyTrap>,
    drive: PyRef<'_, PyDrive>,
    beams: PyRef<'_, PyBeams>,
    source: PyRef<'_, PySource>,
    spacing: Option<f64>,
) -> PyResult<f64> {
    let grid = spacing.map_or_else(|| GridSpec::default_for(&trap.0), |h| GridSpec::with_spacing(&trap.0, h));
    lm::p_trap(&trap.0, &drive.0, &beams.0, &source.0, &grid, &TrajectoryConfig::default()).map_err(to_py)
}

/// Rows of `(v_rf, depth_eV, p_raw, p_smoothed)`.
#[pyfunction]
#[pyo3(signature = (trap, drive, v_rf_list, beams, source, spacing = None))]
fn sweep_curve(
    trap: PyRef<'_, PyTrap>,
    drive: PyRef<'_, PyDrive>,
    v_rf_list: Vec<f64>,
    beams: PyRef<'_, PyBeams>,
    source: PyRef<'_, PySource>,
    spacing: Option<f64>,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let grid = spacing.map_or_else(|| GridSpec::default_for(&trap.0), |h| GridSpec::with_spacing(&trap.0, h));
    let c = lm::sweep_curve(&trap.0, &drive.0, &v_rf_list, &beams.0, &source.0, &grid, &TrajectoryConfig::default())
        .map_err(to_py)?;
    Ok(c.samples.iter().map(|s| (s.v_rf, s.depth_ev, s.p_raw, s.p_smoothed)).collect())
}

#[pyfunction]
fn e_opt_compact(source: PyRef<'_, PySource>, drive: PyRef<'_, PyDrive>) -> f64 {
    joules_to_ev(analytic::e_opt_compact(&source.0, &drive.0.species))
}

#[pyfunction]
fn e_opt_large(source: PyRef<'_, PySource>, trap: PyRef<'_, PyTrap>, drive: PyRef<'_, PyDrive>) -> PyResult<f64> {
    analytic::e_opt_large(&source.0, &drive.0.species, &trap.0, &drive.0).map(joules_to_ev).map_err(to_py)
}

/// `(bin_centers_s, counts)` for unit amplitude.
#[pyfunction]
#[pyo3(signature = (source, species = "ba138", distance = 11.4e-3, gate = 1.5e-6))]
fn tof_forward(source: PyRef<'_, PySource>, species: &str, distance: f64, gate: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let setup = tof::TofSetup { distance, gate, ..tof::TofSetup::default() };
    let h = tof::tof_forward(&source.0, &self::species(species)?.species(), &setup).map_err(to_py)?;
    Ok((h.bin_centers, h.counts))
}

/// Fitted `(SourceModel, amplitude)`.
#[pyfunction]
#[pyo3(signature = (times, counts, initial, species = "ba138", distance = 11.4e-3, gate = 1.5e-6))]
fn tof_fit(
    times: Vec<f64>,
    counts: Vec<f64>,
    initial: PyRef<'_, PySource>,
    species: &str,
    distance: f64,
    gate: f64,
) -> PyResult<(PySource, f64)> {
    let hist = tof::TofHistogram::new(times, counts).map_err(to_py)?;
    let setup = tof::TofSetup { distance, gate, ..tof::TofSetup::default() };
    let f = tof::tof_fit(&hist, &setup, &self::species(species)?.species(), &initial.0).map_err(to_py)?;
    Ok((PySource(f.source), f.amplitude))
}

#[pymodule]
fn pytrapload(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrap>()?;
    m.add_class::<PyDrive>()?;
    m.add_class::<PySource>()?;
    m.add_class::<PyBeams>()?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(rf_trap_depth, m)?)?;
    m.add_function(wrap_pyfunction!(true_trap_depth, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_voltage, m)?)?;
    m.add_function(wrap_pyfunction!(secular_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(total_potential, m)?)?;
    m.add_function(wrap_pyfunction!(volume_areas, m)?)?;
    m.add_function(wrap_pyfunction!(p_trap, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_curve, m)?)?;
    m.add_function(wrap_pyfunction!(e_opt_compact, m)?)?;
    m.add_function(wrap_pyfunction!(e_opt_large, m)?)?;
    m.add_function(wrap_pyfunction!(tof_forward, m)?)?;
    m.add_function(wrap_pyfunction!(tof_fit, m)?)?;
    Ok(())
}
