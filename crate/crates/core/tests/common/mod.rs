//! Independent oracles shared by the oracle suite and the acceptance target.
#![allow(dead_code)]

use std::f64::consts::TAU;

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trapload::field_model::{
    mathieu_matrices, secular_frequencies, strip_potential, true_trap_depth, DriveConfig, RadialPoint, TrapGeometry,
};
use trapload::loading_model::{
    fit_scale, integrate_lattice, velocity_weight, AreaLattice, DataPoint, LoadingCurve, PIBeams, SourceModel,
    V_LO_FRACTION,
};
use trapload::species::{IonSpecies, SpeciesName};
use trapload::trajectory::{walk_approximate, TrajectoryConfig};
use trapload::volumes::{volume_cascade, FieldGrid, GridSpec, VolumeModel};

pub const SEED: u64 = 20240601;

pub fn microfab(v_rf: f64) -> DriveConfig {
    DriveConfig::new(v_rf, TAU * 40e6, TAU * 500e3, IonSpecies::ba138()).unwrap()
}

pub fn pcb(v_rf: f64) -> DriveConfig {
    DriveConfig::new(v_rf, TAU * 7e6, TAU * 100e3, IonSpecies::ba138()).unwrap()
}

pub fn ba_source() -> SourceModel {
    SourceModel::reference(SpeciesName::Ba138)
}

/// Amplitude at which the closed-form true depth equals `depth` (J), by bisection.
pub fn v_rf_for_true_depth(geom: &TrapGeometry, template: &DriveConfig, depth: f64) -> f64 {
    let (mut lo, mut hi) = (1.0, 1.0e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if true_trap_depth(geom, &template.with_v_rf(mid)) < depth {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// field derivatives vs finite differences

#[derive(Debug, Clone, Copy)]
pub struct DerivativeErrors {
    pub points: usize,
    pub gradient: f64,
    pub hessian: f64,
}

/// Largest relative error of the closed-form gradient and Hessian against
/// central differences of the closed-form potential, over `n` random points
/// split between both traps.
pub fn derivative_errors(n: usize, seed: u64) -> DerivativeErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DerivativeErrors { points: 0, gradient: 0.0, hessian: 0.0 };
    for geom in [TrapGeometry::pcb(), TrapGeometry::microfab()] {
        let z0 = geom.rf_null_height();
        for _ in 0..n / 2 {
            let x = rng.random_range(-2.0 * z0..2.0 * z0);
            let z = rng.random_range(0.2 * z0..3.0 * z0);
            let h = 1e-4 * z;
            let phi = |dx: f64, dz: f64| strip_potential(&geom, 1.0, RadialPoint::new(x + dx, z + dz)).unwrap().potential;
            let s = strip_potential(&geom, 1.0, RadialPoint::new(x, z)).unwrap();

            let c = phi(0.0, 0.0);
            let gx = (phi(h, 0.0) - phi(-h, 0.0)) / (2.0 * h);
            let gz = (phi(0.0, h) - phi(0.0, -h)) / (2.0 * h);
            let hxx = (phi(h, 0.0) - 2.0 * c + phi(-h, 0.0)) / (h * h);
            let hzz = (phi(0.0, h) - 2.0 * c + phi(0.0, -h)) / (h * h);
            let hxz = (phi(h, h) - phi(h, -h) - phi(-h, h) + phi(-h, -h)) / (4.0 * h * h);

            let dg = (Vector2::new(gx, gz) - s.gradient).norm() / s.gradient.norm();
            let fd_h = nalgebra::Matrix2::new(hxx, hxz, hxz, hzz);
            let dh = (fd_h - s.hessian).norm() / s.hessian.norm();
            out.gradient = out.gradient.max(dg);
            out.hessian = out.hessian.max(dh);
            out.points += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// approximate trajectory filter vs full oscillating-field dynamics

#[derive(Debug, Clone, Copy)]
pub struct Agreement {
    pub agree: usize,
    pub total: usize,
    pub retained_full: usize,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.agree as f64 / self.total as f64
        }
    }
}

/// RK4 on `m r̈ = -q V cos(Ωt) ∇φ + ½ m ω_ax² (r - r₀)` from rest. Returns
/// whether every step stays inside `inside` for `duration`.
pub fn rk4_bound<F>(geom: &TrapGeometry, drive: &DriveConfig, x: f64, z: f64, duration: f64, inside: F) -> bool
where
    F: Fn(f64, f64) -> bool,
{
    let z0 = geom.rf_null_height();
    let qm = drive.species.charge / drive.species.mass;
    let w2 = 0.5 * drive.omega_ax * drive.omega_ax;
    let accel = |t: f64, s: [f64; 4]| -> Option<[f64; 4]> {
        if s[1] <= 0.0 {
            return None;
        }
        let g = strip_potential(geom, drive.v_rf, RadialPoint::new(s[0], s[1])).ok()?.gradient;
        let c = (drive.omega_rf * t).cos();
        Some([s[2], s[3], -qm * c * g[0] + w2 * s[0], -qm * c * g[1] + w2 * (s[1] - z0)])
    };
    let dt = TAU / drive.omega_rf / 100.0;
    let n = (duration / dt).ceil() as usize;
    let mut s = [x, z, 0.0, 0.0];
    let add = |s: [f64; 4], k: [f64; 4], f: f64| [s[0] + f * k[0], s[1] + f * k[1], s[2] + f * k[2], s[3] + f * k[3]];
    for step in 0..n {
        let t = step as f64 * dt;
        let Some(k1) = accel(t, s) else { return false };
        let Some(k2) = accel(t + 0.5 * dt, add(s, k1, 0.5 * dt)) else { return false };
        let Some(k3) = accel(t + 0.5 * dt, add(s, k2, 0.5 * dt)) else { return false };
        let Some(k4) = accel(t + dt, add(s, k3, dt)) else { return false };
        for i in 0..4 {
            s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !(s[1] > 0.0 && inside(s[0], s[1])) {
            return false;
        }
    }
    true
}

/// Compares the approximate walk with ten secular periods of full dynamics
/// from `ke_pi` cells with `|Q·x̂_d| ≤ q_max`. Both use the KE mask as the
/// containment test, so only the dynamics differ.
pub fn classification_agreement(
    geom: TrapGeometry,
    drive: DriveConfig,
    kinetic_energy: f64,
    q_max: f64,
    max_cells: usize,
    seed: u64,
) -> Agreement {
    let field = FieldGrid::new(geom, GridSpec::default_for(&geom)).unwrap();
    let model = VolumeModel::new(&field, drive);
    let ke = model.ke(kinetic_energy);
    let ke_pi = model.pi(&ke, &PIBeams::reference());
    let z0 = geom.rf_null_height();
    let mut starts: Vec<(f64, f64)> = ke_pi
        .occupied_centers()
        .filter(|&(x, z)| {
            let d = Vector2::new(x, z - z0);
            let r = d.norm();
            if r == 0.0 {
                return true;
            }
            let q = mathieu_matrices(&geom, &drive, RadialPoint::new(x, z)).unwrap().q;
            (q * (d / r)).norm() <= q_max
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    starts.shuffle(&mut rng);
    starts.truncate(max_cells);

    let traj = TrajectoryConfig::default();
    let duration = 10.0 / secular_frequencies(&geom, &drive).unwrap().radial();
    let mut out = Agreement { agree: 0, total: 0, retained_full: 0 };
    for (x, z) in starts {
        let approx = walk_approximate(&geom, &drive, x, z, &traj, |px, pz| ke.contains_point(px, pz)).retained();
        let full = rk4_bound(&geom, &drive, x, z, duration, |px, pz| ke.contains_point(px, pz));
        out.total += 1;
        out.agree += usize::from(approx == full);
        out.retained_full += usize::from(full);
    }
    out
}

// ---------------------------------------------------------------------------
// velocity quadrature vs Monte Carlo

#[derive(Debug, Clone, Copy)]
pub struct QuadratureCheck {
    pub quadrature: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
}

impl QuadratureCheck {
    pub fn relative_difference(&self) -> f64 {
        (self.monte_carlo - self.quadrature).abs() / self.quadrature
    }
}

/// `P_trap` from the production quadrature against a Monte Carlo estimate
/// over `(x, z, v)` using the exact per-cell stability levels. Speeds are
/// drawn log-uniformly on `[v_lo, v_max]`.
pub fn quadrature_vs_monte_carlo(geom: TrapGeometry, drive: DriveConfig, samples: usize, seed: u64) -> QuadratureCheck {
    let grid = GridSpec::default_for(&geom);
    let field = FieldGrid::new(geom, grid).unwrap();
    let model = VolumeModel::new(&field, drive);
    let beams = PIBeams::reference();
    let src = ba_source();
    let species = drive.species;
    let levels = model.stability_levels(&beams, &TrajectoryConfig::default());
    let quadrature = integrate_lattice(&AreaLattice::from_levels(&levels), &species, &beams, &src).unwrap();

    let v_max = species.speed_at(levels.depth());
    let v_lo = V_LO_FRACTION * v_max;
    let ln_r = (v_max / v_lo).ln();
    let z0 = geom.rf_null_height();
    let w0 = beams.waist;
    let (x_lo, x_hi) = (-w0, w0);
    let (z_lo, z_hi) = ((z0 - w0).max(grid.z_min - 0.5 * grid.spacing), z0 + w0);
    let volume = (x_hi - x_lo) * (z_hi - z_lo) * ln_r;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..samples {
        let x = rng.random_range(x_lo..x_hi);
        let z = rng.random_range(z_lo..z_hi);
        let v = v_lo * (rng.random::<f64>() * ln_r).exp();
        let f = match grid.locate(x, z) {
            Some((i, j)) if levels.contains(grid.index(i, j), species.kinetic_energy(v)) => {
                velocity_weight(&src, &species, &beams, v) * v
            }
            _ => 0.0,
        };
        sum += f;
        sum2 += f * f;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    QuadratureCheck { quadrature, monte_carlo: volume * mean, std_error: volume * (var / n).sqrt() }
}

// ---------------------------------------------------------------------------
// nesting and grid convergence

#[derive(Debug, Clone, Copy)]
pub struct ConvergenceCheck {
    pub nested: bool,
    pub coarse: [f64; 4],
    pub fine: [f64; 4],
}

impl ConvergenceCheck {
    /// Relative change per stage on halving the spacing.
    pub fn changes(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for k in 0..4 {
            out[k] = if self.fine[k] > 0.0 { (self.coarse[k] - self.fine[k]).abs() / self.fine[k] } else { 0.0 };
        }
        out
    }

    pub fn worst_change(&self) -> f64 {
        self.changes().into_iter().fold(0.0, f64::max)
    }
}

pub fn nesting_and_convergence(geom: TrapGeometry, drive: DriveConfig, kinetic_energy: f64) -> ConvergenceCheck {
    let beams = PIBeams::reference();
    let traj = TrajectoryConfig::default();
    let coarse_grid = GridSpec::default_for(&geom);
    let fine_grid = GridSpec::with_spacing(&geom, 0.5 * coarse_grid.spacing);
    let coarse = volume_cascade(&geom, &drive, &beams, &coarse_grid, &traj, kinetic_energy).unwrap();
    let fine = volume_cascade(&geom, &drive, &beams, &fine_grid, &traj, kinetic_energy).unwrap();
    let nested = [&coarse, &fine].iter().all(|c| {
        c.ke.is_subset_of(&c.bare) && c.ke_pi.is_subset_of(&c.ke) && c.ke_pi_mm.is_subset_of(&c.ke_pi)
    });
    ConvergenceCheck { nested, coarse: coarse.areas(), fine: fine.areas() }
}

// ---------------------------------------------------------------------------
// scale fit vs scalar minimizer

/// Golden-section minimum of `f` on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Largest relative gap between `fit_scale` and a golden-section minimum of χ².
pub fn scale_fit_gap(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..15).map(|k| 40.0 + 160.0 * k as f64 / 14.0).collect();
    let depth: Vec<f64> = v.iter().map(|x| 1e-5 * x * x).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let centre = rng.random_range(0.08..0.2);
        let raw: Vec<f64> = depth.iter().map(|d| (-(d - centre).powi(2) / 0.01).exp() * 1e-12).collect();
        let curve = LoadingCurve::from_raw(&v, &depth, &raw).unwrap();
        let truth = rng.random_range(1e10..1e13);
        let spline = curve.spline().unwrap();
        let data: Vec<DataPoint> = (0..8)
            .map(|_| {
                let d = rng.random_range(depth[0]..depth[14]);
                let m = spline.eval(d) * truth;
                let sigma = 0.05 * m.abs().max(1e-3 * truth * 1e-12);
                DataPoint { depth_ev: d, rate: m + sigma * rng.random_range(-1.0..1.0), sigma }
            })
            .collect();
        let closed = fit_scale(&curve, &data).unwrap();
        let chi2 = |s: f64| -> f64 {
            data.iter().map(|p| ((p.rate - s * spline.eval(p.depth_ev)) / p.sigma).powi(2)).sum()
        };
        let numeric = golden_section(chi2, 0.0, 4.0 * truth, 1e-14);
        worst = worst.max((numeric - closed).abs() / closed.abs());
    }
    worst
}
