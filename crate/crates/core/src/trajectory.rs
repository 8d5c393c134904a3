//! Approximate secular-plus-micromotion trajectories used to filter the
//! photo-ionized trapping volume.
//!
//! A start point `d` (measured from the rf null) is released at rest with its
//! secular envelope at maximum displacement. Along each radial axis `i`
//!
//! ```text
//! r_i(t) = cos(ω_i t) [ d_i + ½ (Q(r) d)_i cos(Ω t) ]
//! ```
//!
//! where `ω_i` comes from the curvature at the start point and `Q(r)` is
//! re-sampled at the current position on every step. The walk lasts one
//! nominal secular period.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{
    a_diagonal, q_per_unit_hessian, rf_null_height, secular_frequency, unit_hessian, DriveConfig, TrapGeometry,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub steps_per_period: usize,
    /// Largest admissible `|Q·x̂_d|` along the path.
    pub q_threshold: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { steps_per_period: 50, q_threshold: 0.5 }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_period < 20 {
            return Err(Error::invalid("steps_per_period", format!("must be at least 20, got {}", self.steps_per_period)));
        }
        if !(self.q_threshold > 0.0 && self.q_threshold < 1.0) {
            return Err(Error::invalid("q_threshold", format!("must lie in (0, 1), got {}", self.q_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkOutcome {
    /// Survived one secular period.
    Completed,
    /// Negative or zero secular radicand at the start point.
    Unstable,
    /// `|Q·x̂_d|` exceeded the threshold somewhere along the path.
    QExceeded,
    /// The visitor rejected a position.
    Escaped,
}

impl WalkOutcome {
    pub fn retained(self) -> bool {
        self == WalkOutcome::Completed
    }
}

/// Nominal secular frequency (Hz) at a point, or `None` when unstable.
pub fn local_secular_frequency(geom: &TrapGeometry, drive: &DriveConfig, x: f64, z: f64) -> Option<f64> {
    let (hxx, _) = unit_hessian(geom, x, z);
    let q = q_per_unit_hessian(drive) * hxx;
    let a = a_diagonal(drive);
    // Q is traceless, so both axes share |q_i|
    secular_frequency(drive.omega_rf, q, a).filter(|f| *f > 0.0)
}

/// Walks the approximate trajectory from `(x, z)`, calling `visit` at the
/// start point and every sampled position. A `false` from `visit` ends the
/// walk with [`WalkOutcome::Escaped`].
pub fn walk_approximate<F>(
    geom: &TrapGeometry,
    drive: &DriveConfig,
    x: f64,
    z: f64,
    cfg: &TrajectoryConfig,
    mut visit: F,
) -> WalkOutcome
where
    F: FnMut(f64, f64) -> bool,
{
    let z0 = rf_null_height(geom);
    let c = q_per_unit_hessian(drive);
    let a = a_diagonal(drive);
    let omega = drive.omega_rf;

    let (hxx, hxz) = unit_hessian(geom, x, z);
    let (mut qxx, mut qxz) = (c * hxx, c * hxz);
    let (fx, fz) = match (secular_frequency(omega, qxx, a), secular_frequency(omega, -qxx, a)) {
        (Some(fx), Some(fz)) if fx > 0.0 && fz > 0.0 => (fx, fz),
        _ => return WalkOutcome::Unstable,
    };
    if qxx.hypot(qxz) > cfg.q_threshold {
        return WalkOutcome::QExceeded;
    }
    if !visit(x, z) {
        return WalkOutcome::Escaped;
    }

    let (dx, dz) = (x, z - z0);
    let f = fx.min(fz);
    let dt = TAU / omega / cfg.steps_per_period as f64;
    let n = ((1.0 / f) / dt).ceil() as usize;
    let (wx, wz) = (TAU * fx, TAU * fz);
    for k in 0..=n {
        let t = k as f64 * dt;
        let mx = qxx * dx + qxz * dz;
        let mz = qxz * dx - qxx * dz;
        let cw = (omega * t).cos();
        let px = (wx * t).cos() * (dx + 0.5 * mx * cw);
        let pz = z0 + (wz * t).cos() * (dz + 0.5 * mz * cw);
        if pz <= 0.0 || !visit(px, pz) {
            return WalkOutcome::Escaped;
        }
        let (hxx, hxz) = unit_hessian(geom, px, pz);
        qxx = c * hxx;
        qxz = c * hxz;
        if qxx.hypot(qxz) > cfg.q_threshold {
            return WalkOutcome::QExceeded;
        }
    }
    WalkOutcome::Completed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::IonSpecies;

    fn drive(v: f64) -> DriveConfig {
        DriveConfig::new(v, TAU * 40e6, TAU * 500e3, IonSpecies::ba138()).unwrap()
    }

    #[test]
    fn config_bounds() {
        assert!(TrajectoryConfig::default().validate().is_ok());
        assert!(TrajectoryConfig { steps_per_period: 10, ..Default::default() }.validate().is_err());
        assert!(TrajectoryConfig { q_threshold: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn null_start_stays_put() {
        let g = TrapGeometry::microfab();
        let z0 = g.rf_null_height();
        let mut max_dev: f64 = 0.0;
        let out = walk_approximate(&g, &drive(100.0), 0.0, z0, &TrajectoryConfig::default(), |x, z| {
            max_dev = max_dev.max(x.hypot(z - z0));
            true
        });
        assert_eq!(out, WalkOutcome::Completed);
        assert!(max_dev < 1e-18);
    }

    #[test]
    fn excursion_reaches_mirror_point() {
        // a small displacement swings through the null to roughly -d within one period
        let g = TrapGeometry::microfab();
        let z0 = g.rf_null_height();
        let mut min_x = f64::INFINITY;
        let out = walk_approximate(&g, &drive(100.0), 2e-6, z0, &TrajectoryConfig::default(), |x, _| {
            min_x = min_x.min(x);
            true
        });
        assert_eq!(out, WalkOutcome::Completed);
        assert!(min_x < -1.5e-6, "{min_x}");
    }

    #[test]
    fn large_q_rejected() {
        let g = TrapGeometry::microfab();
        let z0 = g.rf_null_height();
        let out = walk_approximate(&g, &drive(200.0), 0.0, z0, &TrajectoryConfig::default(), |_, _| true);
        assert_eq!(out, WalkOutcome::QExceeded);
    }

    #[test]
    fn below_threshold_is_unstable() {
        // without rf the DC term alone gives a negative radicand
        let g = TrapGeometry::microfab();
        let out = walk_approximate(&g, &drive(0.0), 1e-6, g.rf_null_height(), &TrajectoryConfig::default(), |_, _| true);
        assert_eq!(out, WalkOutcome::Unstable);
    }
}
