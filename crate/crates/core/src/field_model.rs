//! Closed-form fields of the symmetric five-wire surface trap.
//!
//! The two rf strips occupy `[a/2, a/2 + b]` and `[-a/2 - b, -a/2]` in a
//! grounded, gap-free plane at `z = 0`. The trap is translationally invariant
//! along the axis, so every quantity here lives in the radial `xz` slice.
//!
//! Conventions:
//! * `Φ` is the rf electric-potential amplitude in volts.
//! * Every energy (pseudopotential, DC term, depths) is in joules.
//! * The DC term is the harmonic quadrupole `-¼ m ω_ax² (x² + (z - z₀)²)`,
//!   centered on the rf null so that the total potential vanishes there.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::species::IonSpecies;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapGeometry {
    /// Inner separation of the rf electrodes (m).
    pub a: f64,
    /// Width of each rf electrode (m).
    pub b: f64,
}

impl TrapGeometry {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let g = Self { a, b };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid("a", format!("electrode separation must be positive, got {}", self.a)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::invalid("b", format!("electrode width must be positive, got {}", self.b)));
        }
        Ok(())
    }

    /// Printed-circuit-board trap, a = b = 840 µm.
    pub fn pcb() -> Self {
        Self { a: 840e-6, b: 840e-6 }
    }

    /// Microfabricated trap, a = 34 µm, b = 127 µm.
    pub fn microfab() -> Self {
        Self { a: 34e-6, b: 127e-6 }
    }

    pub fn rf_null_height(&self) -> f64 {
        rf_null_height(self)
    }

    pub fn escape_height(&self) -> f64 {
        escape_height(self)
    }

    pub fn kappa(&self) -> f64 {
        kappa(self)
    }

    pub fn null_point(&self) -> RadialPoint {
        RadialPoint { x: 0.0, z: self.rf_null_height() }
    }

    pub fn escape_point(&self) -> RadialPoint {
        RadialPoint { x: 0.0, z: self.escape_height() }
    }

    /// Strip edges `[(x1, x2); 2]`.
    fn strips(&self) -> [(f64, f64); 2] {
        let h = 0.5 * self.a;
        [(h, h + self.b), (-h - self.b, -h)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// rf amplitude (V).
    pub v_rf: f64,
    /// rf angular frequency (rad/s).
    pub omega_rf: f64,
    /// Axial secular angular frequency (rad/s).
    pub omega_ax: f64,
    pub species: IonSpecies,
}

impl DriveConfig {
    pub fn new(v_rf: f64, omega_rf: f64, omega_ax: f64, species: IonSpecies) -> Result<Self> {
        let d = Self { v_rf, omega_rf, omega_ax, species };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_rf >= 0.0 && self.v_rf.is_finite()) {
            return Err(Error::invalid("v_rf", format!("must be non-negative, got {}", self.v_rf)));
        }
        if !(self.omega_rf > 0.0 && self.omega_rf.is_finite()) {
            return Err(Error::invalid("omega_rf", format!("must be positive, got {}", self.omega_rf)));
        }
        if !(self.omega_ax >= 0.0 && self.omega_ax.is_finite()) {
            return Err(Error::invalid("omega_ax", format!("must be non-negative, got {}", self.omega_ax)));
        }
        Ok(())
    }

    pub fn with_v_rf(&self, v_rf: f64) -> Self {
        Self { v_rf, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialPoint {
    pub x: f64,
    pub z: f64,
}

impl RadialPoint {
    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    fn check(&self) -> Result<()> {
        if self.z > 0.0 && self.z.is_finite() && self.x.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain { x: self.x, z: self.z })
        }
    }
}

/// rf potential amplitude with its exact first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    /// V
    pub potential: f64,
    /// V/m
    pub gradient: Vector2<f64>,
    /// V/m², symmetric
    pub hessian: Matrix2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialDecomposition {
    /// Pseudopotential energy (J).
    pub pseudo: f64,
    /// DC radial energy (J).
    pub dc: f64,
    /// `pseudo + dc` (J).
    pub total: f64,
}

/// Dimensionless curvature matrices of the rf (`q`) and DC (`a`) potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MathieuMatrices {
    pub q: Matrix2<f64>,
    pub a: Matrix2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecularFrequencies {
    /// Hz, along x.
    pub radial_x: f64,
    /// Hz, along z.
    pub radial_z: f64,
    /// Hz
    pub axial: f64,
}

impl SecularFrequencies {
    /// The lower of the two radial frequencies.
    pub fn radial(&self) -> f64 {
        self.radial_x.min(self.radial_z)
    }
}

/// Per-volt field derivatives `(Φ, ∂xΦ, ∂zΦ, ∂xxΦ, ∂xzΦ)`; `∂zzΦ = -∂xxΦ`.
///
/// Caller guarantees `z > 0`.
#[inline]
pub(crate) fn unit_field(geom: &TrapGeometry, x: f64, z: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (x1, x2) in geom.strips() {
        for (sign, edge) in [(1.0, x2), (-1.0, x1)] {
            let d = edge - x;
            let r2 = d * d + z * z;
            let r4 = r2 * r2;
            out[0] += sign * (d / z).atan();
            out[1] += sign * (-z / r2);
            out[2] += sign * (-d / r2);
            out[3] += sign * (-2.0 * z * d / r4);
            out[4] += sign * (-(d * d - z * z) / r4);
        }
    }
    for v in &mut out {
        *v /= PI;
    }
    out
}

/// Per-volt `(∂xΦ, ∂zΦ)` only.
#[inline]
pub(crate) fn unit_gradient(geom: &TrapGeometry, x: f64, z: f64) -> (f64, f64) {
    let mut gx = 0.0;
    let mut gz = 0.0;
    for (x1, x2) in geom.strips() {
        for (sign, edge) in [(1.0, x2), (-1.0, x1)] {
            let d = edge - x;
            let r2 = d * d + z * z;
            gx -= sign * z / r2;
            gz -= sign * d / r2;
        }
    }
    (gx / PI, gz / PI)
}

/// Per-volt `(∂xxΦ, ∂xzΦ)`; the Hessian is traceless.
#[inline]
pub(crate) fn unit_hessian(geom: &TrapGeometry, x: f64, z: f64) -> (f64, f64) {
    let mut hxx = 0.0;
    let mut hxz = 0.0;
    for (x1, x2) in geom.strips() {
        for (sign, edge) in [(1.0, x2), (-1.0, x1)] {
            let d = edge - x;
            let r2 = d * d + z * z;
            let r4 = r2 * r2;
            hxx -= sign * 2.0 * z * d / r4;
            hxz -= sign * (d * d - z * z) / r4;
        }
    }
    (hxx / PI, hxz / PI)
}

pub fn strip_potential(geom: &TrapGeometry, v_rf: f64, p: RadialPoint) -> Result<FieldSample> {
    p.check()?;
    let [phi, gx, gz, hxx, hxz] = unit_field(geom, p.x, p.z);
    Ok(FieldSample {
        potential: v_rf * phi,
        gradient: Vector2::new(v_rf * gx, v_rf * gz),
        hessian: Matrix2::new(v_rf * hxx, v_rf * hxz, v_rf * hxz, -v_rf * hxx),
    })
}

/// `z₀ = ½√(a(a + 2b))`.
pub fn rf_null_height(geom: &TrapGeometry) -> f64 {
    0.5 * (geom.a * (geom.a + 2.0 * geom.b)).sqrt()
}

/// `z_esc = √(z₀(a + b + z₀))`.
pub fn escape_height(geom: &TrapGeometry) -> f64 {
    let z0 = rf_null_height(geom);
    (z0 * (geom.a + geom.b + z0)).sqrt()
}

pub fn kappa(geom: &TrapGeometry) -> f64 {
    let (a, b) = (geom.a, geom.b);
    let s = a + b;
    let t = s + (a * (a + 2.0 * b)).sqrt();
    a * b * b * (a + 2.0 * b) / (4.0 * s * s * t * t)
}

/// Pseudopotential at the escape saddle, ignoring the DC term (J).
pub fn rf_trap_depth(geom: &TrapGeometry, drive: &DriveConfig) -> f64 {
    let q = drive.species.charge;
    let m = drive.species.mass;
    let z0 = rf_null_height(geom);
    q * q * drive.v_rf * drive.v_rf * kappa(geom) / (PI * PI * m * drive.omega_rf * drive.omega_rf * z0 * z0)
}

/// DC energy subtracted from the rf depth at the escape point (J).
pub fn dc_depth_reduction(geom: &TrapGeometry, drive: &DriveConfig) -> f64 {
    let z_esc = escape_height(geom);
    0.25 * drive.species.mass * drive.omega_ax * drive.omega_ax * z_esc * z_esc
}

/// rf depth minus the DC term at the escape point (J); negative when untrappable.
pub fn true_trap_depth(geom: &TrapGeometry, drive: &DriveConfig) -> f64 {
    rf_trap_depth(geom, drive) - dc_depth_reduction(geom, drive)
}

/// Minimum rf amplitude (V) with a non-negative true trap depth.
pub fn threshold_voltage(geom: &TrapGeometry, omega_rf: f64, omega_ax: f64, species: &IonSpecies) -> f64 {
    if omega_ax == 0.0 {
        return 0.0;
    }
    let z0 = rf_null_height(geom);
    let z_esc = escape_height(geom);
    PI * species.mass * omega_rf * omega_ax * z0 * z_esc / (2.0 * species.charge * kappa(geom).sqrt())
}

/// `q²|∇Φ|²/(4mΩ²)` (J).
pub fn pseudopotential(geom: &TrapGeometry, drive: &DriveConfig, p: RadialPoint) -> Result<f64> {
    p.check()?;
    let (gx, gz) = unit_gradient(geom, p.x, p.z);
    Ok(pseudo_from_unit_grad_sq(drive, gx * gx + gz * gz))
}

#[inline]
pub(crate) fn pseudo_from_unit_grad_sq(drive: &DriveConfig, grad_sq: f64) -> f64 {
    let q = drive.species.charge;
    let v = drive.v_rf;
    q * q * v * v * grad_sq / (4.0 * drive.species.mass * drive.omega_rf * drive.omega_rf)
}

/// DC energy at squared distance `r2` from the rf null (J).
#[inline]
pub(crate) fn dc_energy(drive: &DriveConfig, r2: f64) -> f64 {
    -0.25 * drive.species.mass * drive.omega_ax * drive.omega_ax * r2
}

pub fn total_potential(geom: &TrapGeometry, drive: &DriveConfig, p: RadialPoint) -> Result<PotentialDecomposition> {
    let pseudo = pseudopotential(geom, drive, p)?;
    let dz = p.z - rf_null_height(geom);
    let dc = dc_energy(drive, p.x * p.x + dz * dz);
    Ok(PotentialDecomposition { pseudo, dc, total: pseudo + dc })
}

/// Prefactor turning a per-volt Hessian of `Φ` into the Mathieu `Q`.
#[inline]
pub(crate) fn q_per_unit_hessian(drive: &DriveConfig) -> f64 {
    2.0 * drive.species.charge * drive.v_rf / (drive.species.mass * drive.omega_rf * drive.omega_rf)
}

/// Diagonal entry of the DC Mathieu matrix, `-2ω_ax²/Ω_rf²`.
#[inline]
pub(crate) fn a_diagonal(drive: &DriveConfig) -> f64 {
    -2.0 * drive.omega_ax * drive.omega_ax / (drive.omega_rf * drive.omega_rf)
}

pub fn mathieu_matrices(geom: &TrapGeometry, drive: &DriveConfig, p: RadialPoint) -> Result<MathieuMatrices> {
    p.check()?;
    let (hxx, hxz) = unit_hessian(geom, p.x, p.z);
    let c = q_per_unit_hessian(drive);
    let a = a_diagonal(drive);
    Ok(MathieuMatrices {
        q: Matrix2::new(c * hxx, c * hxz, c * hxz, -c * hxx),
        a: Matrix2::new(a, 0.0, 0.0, a),
    })
}

/// `f = (Ω/4√2π)√(q² + a)` for one axis, or `None` for a negative radicand.
#[inline]
pub(crate) fn secular_frequency(omega_rf: f64, q: f64, a: f64) -> Option<f64> {
    let rad = q * q + a;
    if rad < 0.0 {
        None
    } else {
        Some(omega_rf / (4.0 * SQRT_2 * PI) * rad.sqrt())
    }
}

pub fn secular_frequencies(geom: &TrapGeometry, drive: &DriveConfig) -> Result<SecularFrequencies> {
    let m = mathieu_matrices(geom, drive, geom.null_point())?;
    let fx = secular_frequency(drive.omega_rf, m.q[(0, 0)], m.a[(0, 0)]);
    let fz = secular_frequency(drive.omega_rf, m.q[(1, 1)], m.a[(1, 1)]);
    match (fx, fz) {
        (Some(radial_x), Some(radial_z)) => Ok(SecularFrequencies {
            radial_x,
            radial_z,
            axial: drive.omega_ax / (2.0 * PI),
        }),
        _ => Err(Error::Instability(format!(
            "negative radicand at the rf null (q = {:.4e}, a = {:.4e})",
            m.q[(1, 1)],
            m.a[(1, 1)]
        ))),
    }
}

/// Recovers the rf amplitude and axial frequency from measured secular frequencies.
pub fn vrf_from_secular(
    geom: &TrapGeometry,
    f_radial: f64,
    f_axial: f64,
    omega_rf: f64,
    species: IonSpecies,
) -> Result<DriveConfig> {
    if !(f_radial > 0.0) || !(f_axial > 0.0) {
        return Err(Error::invalid("secular frequency", "radial and axial frequencies must be positive"));
    }
    let omega_ax = 2.0 * PI * f_axial;
    let probe = DriveConfig::new(1.0, omega_rf, omega_ax, species)?;
    let a = a_diagonal(&probe);
    let r = f_radial * 4.0 * SQRT_2 * PI / omega_rf;
    let q_sq = r * r - a;
    if !(q_sq > 0.0) {
        return Err(Error::Inversion(format!(
            "radial frequency {f_radial:.4e} Hz is too low for axial frequency {f_axial:.4e} Hz"
        )));
    }
    let z0 = rf_null_height(geom);
    let (hxx, _) = unit_hessian(geom, 0.0, z0);
    let q_per_volt = q_per_unit_hessian(&probe) * hxx.abs();
    DriveConfig::new(q_sq.sqrt() / q_per_volt, omega_rf, omega_ax, species)
}
