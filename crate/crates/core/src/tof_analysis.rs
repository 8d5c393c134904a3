//! Time-of-flight fluorescence model of the ablation plume and its inverse.
//!
//! Atoms leave the target with the plume speed density (a Gaussian in `v`
//! restricted to `v ≥ 0`) and reach a probe beam at distance `L` after
//! `t = L/v`. Each atom scatters for its transit time `2r/v`, so the signal
//! density is the arrival density weighted by `t`. The detector integrates
//! over a boxcar gate before binning.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::loading_model::SourceModel;
use crate::species::{IonSpecies, BOLTZMANN};

const FINE_STEPS_PER_BIN: usize = 20;
const MAX_ITERATIONS: usize = 500;
const MIN_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TofSetup {
    /// Target-to-probe distance `L` (m).
    pub distance: f64,
    /// Probe beam radius (m).
    pub probe_radius: f64,
    /// s
    pub bin_width: f64,
    /// Boxcar detection gate (s).
    pub gate: f64,
    /// End of the recorded window (s).
    pub t_max: f64,
}

impl Default for TofSetup {
    fn default() -> Self {
        Self { distance: 11.4e-3, probe_radius: 50e-6, bin_width: 1e-6, gate: 1.5e-6, t_max: 1e-3 }
    }
}

impl TofSetup {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("distance", self.distance),
            ("probe_radius", self.probe_radius),
            ("bin_width", self.bin_width),
            ("gate", self.gate),
            ("t_max", self.t_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.t_max < self.bin_width {
            return Err(Error::invalid("t_max", "window is shorter than one bin"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.t_max / self.bin_width) + 1e-9).floor() as usize
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|i| (i as f64 + 0.5) * self.bin_width).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TofHistogram {
    /// s
    pub bin_centers: Vec<f64>,
    pub counts: Vec<f64>,
}

impl TofHistogram {
    pub fn new(bin_centers: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        let h = Self { bin_centers, counts };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_centers.len() != self.counts.len() || self.bin_centers.len() < 2 {
            return Err(Error::invalid("histogram", "needs at least two bins and one count per bin"));
        }
        if let Some(c) = self.counts.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::invalid("counts", format!("must be non-negative, got {c}")));
        }
        let w = self.bin_width();
        if !(w > 0.0) || self.bin_centers.windows(2).any(|p| ((p[1] - p[0]) - w).abs() > 1e-6 * w) {
            return Err(Error::invalid("bin_centers", "bins must be uniform and increasing"));
        }
        if !(self.bin_centers[0] - 0.5 * w >= -1e-9 * w) {
            return Err(Error::invalid("bin_centers", "bins must start at or after t = 0"));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.bin_centers[self.bin_centers.len() - 1] - self.bin_centers[0]) / (self.bin_centers.len() - 1) as f64
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Center of the most populated bin.
    pub fn mode(&self) -> f64 {
        let i = (0..self.counts.len()).max_by(|&a, &b| self.counts[a].total_cmp(&self.counts[b])).unwrap_or(0);
        self.bin_centers[i]
    }

    /// Index of the bin containing `t`.
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        let w = self.bin_width();
        let lo = self.bin_centers[0] - 0.5 * w;
        let k = ((t - lo) / w).floor();
        (k >= 0.0 && (k as usize) < self.counts.len()).then_some(k as usize)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time_s", "counts"])?;
        for (t, c) in self.bin_centers.iter().zip(&self.counts) {
            wtr.write_record([format!("{t:e}"), format!("{c:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            time_s: f64,
            counts: f64,
        }
        let mut rdr = csv::Reader::from_reader(r);
        let (mut t, mut c) = (Vec::new(), Vec::new());
        for row in rdr.deserialize() {
            let row: Row = row?;
            t.push(row.time_s);
            c.push(row.counts);
        }
        Self::new(t, c)
    }
}

/// Plume speed density normalized over `v ≥ 0` (s/m).
pub fn speed_density(src: &SourceModel, species: &IonSpecies, v: f64) -> f64 {
    if v < 0.0 {
        return 0.0;
    }
    let sigma = src.thermal_speed(species);
    let norm = sigma * (std::f64::consts::PI / 2.0).sqrt() * erfc(-src.v0 / (sigma * std::f64::consts::SQRT_2));
    (-(v - src.v0).powi(2) / (2.0 * sigma * sigma)).exp() / norm
}

/// Unweighted arrival-time density `g(L/t)·L/t²` (1/s).
pub fn arrival_density(src: &SourceModel, species: &IonSpecies, distance: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    speed_density(src, species, distance / t) * distance / (t * t)
}

/// Arrival time (s) of an atom with kinetic energy `ke` (J).
pub fn arrival_time(species: &IonSpecies, ke: f64, distance: f64) -> f64 {
    distance / species.speed_at(ke)
}

/// Expected counts per bin for unit amplitude.
///
/// Builds the cumulative signal on a sub-bin grid, applies the centered
/// boxcar gate through a second cumulative integral, and differences at bin
/// edges.
pub fn expected_counts(src: &SourceModel, species: &IonSpecies, setup: &TofSetup, bin_centers: &[f64], bin_width: f64) -> Vec<f64> {
    let n = bin_centers.len();
    if n == 0 {
        return Vec::new();
    }
    let half_gate = 0.5 * setup.gate;
    let t_end = bin_centers[n - 1] + 0.5 * bin_width + half_gate;
    let dt = bin_width.min(setup.gate) / FINE_STEPS_PER_BIN as f64;
    let m = (t_end / dt).ceil() as usize + 1;
    let weight = 2.0 * setup.probe_radius / setup.distance;
    let signal = |t: f64| arrival_density(src, species, setup.distance, t) * weight * t;

    // F(t) = ∫₀ᵗ signal, G(t) = ∫₀ᵗ F, trapezoidal on the fine grid
    let mut f_cum = vec![0.0; m];
    let mut g_cum = vec![0.0; m];
    let mut prev = signal(0.0);
    for k in 1..m {
        let cur = signal(k as f64 * dt);
        f_cum[k] = f_cum[k - 1] + 0.5 * dt * (prev + cur);
        g_cum[k] = g_cum[k - 1] + 0.5 * dt * (f_cum[k - 1] + f_cum[k]);
        prev = cur;
    }
    let g_at = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let x = t / dt;
        let i = (x.floor() as usize).min(m - 2);
        let fr = x - i as f64;
        // G is the integral of a piecewise-linear F, so interpolate quadratically
        g_cum[i] + dt * (f_cum[i] * fr + 0.5 * (f_cum[i + 1] - f_cum[i]) * fr * fr)
    };
    bin_centers
        .iter()
        .map(|&c| {
            let (a, b) = (c - 0.5 * bin_width, c + 0.5 * bin_width);
            (g_at(b + half_gate) - g_at(a + half_gate) - g_at(b - half_gate) + g_at(a - half_gate)) / setup.gate
        })
        .collect()
}

/// Predicted histogram over the setup's window, unit amplitude.
pub fn tof_forward(src: &SourceModel, species: &IonSpecies, setup: &TofSetup) -> Result<TofHistogram> {
    src.validate()?;
    setup.validate()?;
    let centers = setup.bin_centers();
    let counts = expected_counts(src, species, setup, &centers, setup.bin_width);
    Ok(TofHistogram { bin_centers: centers, counts })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TofFit {
    pub source: SourceModel,
    pub amplitude: f64,
    /// Residual sum of squares.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoComponentFit {
    pub first: TofFit,
    pub second: TofFit,
    pub residual: f64,
    pub iterations: usize,
}

struct LmResult {
    params: Vec<f64>,
    cost: f64,
    iterations: usize,
}

/// Levenberg–Marquardt on `residual(p) ∈ ℝⁿ` with forward-difference Jacobians.
fn levenberg_marquardt<F>(residual: F, p0: Vec<f64>) -> Result<LmResult>
where
    F: Fn(&[f64]) -> Option<DVector<f64>>,
{
    let np = p0.len();
    let mut p = p0;
    let mut r = residual(&p).ok_or_else(|| Error::invalid("initial", "model is undefined at the initial guess"))?;
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    for it in 1..=MAX_ITERATIONS {
        let mut jac = DMatrix::zeros(r.len(), np);
        for j in 0..np {
            let h = 1e-7 * p[j].abs().max(1e-3);
            let mut q = p.clone();
            q[j] += h;
            let rq = residual(&q).ok_or_else(|| Error::FitNonConvergence { iterations: it, residual: cost })?;
            jac.set_column(j, &((rq - &r) / h));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rt) = residual(&trial) {
                let ct = rt.norm_squared();
                if ct < cost {
                    let rel = (cost - ct) / cost.max(1e-300);
                    let small = step.iter().zip(&trial).all(|(s, x)| s.abs() <= 1e-10 * x.abs().max(1e-3));
                    p = trial;
                    r = rt;
                    cost = ct;
                    mu = (mu * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-14 || small {
                        return Ok(LmResult { params: p, cost, iterations: it });
                    }
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            // no descent direction left: the current point is stationary
            let grad = g.amax();
            if grad <= 1e-8 * (cost.sqrt() * jtj.diagonal().amax().sqrt()).max(1e-300) || mu > 1e12 {
                return Ok(LmResult { params: p, cost, iterations: it });
            }
            return Err(Error::FitNonConvergence { iterations: it, residual: cost });
        }
    }
    Err(Error::FitNonConvergence { iterations: MAX_ITERATIONS, residual: cost })
}

fn check_bins(hist: &TofHistogram) -> Result<()> {
    hist.validate()?;
    let filled = hist.counts.iter().filter(|&&c| c > 0.0).count();
    if filled < MIN_BINS {
        return Err(Error::FitDegenerate(format!("{filled} non-empty bins, at least {MIN_BINS} required")));
    }
    Ok(())
}

fn source_from(t_log: f64, v0: f64, w_a: f64) -> Option<SourceModel> {
    let t = t_log.exp();
    (t.is_finite() && t > 0.0 && v0 >= 0.0).then_some(SourceModel { temperature: t, v0, plume_radius: w_a })
}

/// Moment estimate of `(T, v₀)` from a histogram: undo the transit weight and
/// the `t → v` Jacobian, then take the mean and variance of `v = L/t`.
fn moment_guess(hist: &TofHistogram, setup: &TofSetup, species: &IonSpecies, w_a: f64) -> Option<SourceModel> {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (&t, &c) in hist.bin_centers.iter().zip(&hist.counts) {
        if t <= 0.0 || c <= 0.0 {
            continue;
        }
        let v = setup.distance / t;
        let w = c * t;
        s0 += w;
        s1 += w * v;
        s2 += w * v * v;
    }
    if !(s0 > 0.0) {
        return None;
    }
    let mean = s1 / s0;
    let var = (s2 / s0 - mean * mean).max(0.0);
    let temperature = (species.mass * var / BOLTZMANN).max(1.0);
    SourceModel::new(temperature, mean.max(0.0), w_a).ok()
}

fn fit_from(hist: &TofHistogram, setup: &TofSetup, species: &IonSpecies, start: &SourceModel) -> Result<TofFit> {
    let w = hist.bin_width();
    let data = DVector::from_column_slice(&hist.counts);
    let shape = expected_counts(start, species, setup, &hist.bin_centers, w);
    let s: f64 = shape.iter().sum();
    let amp0 = if s > 0.0 { hist.total() / s } else { 1.0 };
    let residual = |p: &[f64]| -> Option<DVector<f64>> {
        let src = source_from(p[0], p[1], start.plume_radius)?;
        let model = expected_counts(&src, species, setup, &hist.bin_centers, w);
        Some(DVector::from_iterator(model.len(), model.iter().map(|m| p[2] * m)) - &data)
    };
    let fit = levenberg_marquardt(residual, vec![start.temperature.ln(), start.v0, amp0])?;
    let source = source_from(fit.params[0], fit.params[1], start.plume_radius)
        .ok_or(Error::FitNonConvergence { iterations: fit.iterations, residual: fit.cost })?;
    Ok(TofFit { source, amplitude: fit.params[2], residual: fit.cost, iterations: fit.iterations })
}

/// Least-squares fit of `(T, v₀, amplitude)`; the plume radius is passed through.
///
/// Starts from `initial` and from a moment estimate and keeps the lower residual.
pub fn tof_fit(hist: &TofHistogram, setup: &TofSetup, species: &IonSpecies, initial: &SourceModel) -> Result<TofFit> {
    check_bins(hist)?;
    setup.validate()?;
    initial.validate()?;
    let mut starts = vec![*initial];
    starts.extend(moment_guess(hist, setup, species, initial.plume_radius));
    let mut best: Option<TofFit> = None;
    let mut last_err = None;
    for start in &starts {
        match fit_from(hist, setup, species, start) {
            Ok(f) if best.is_none_or(|b| f.residual < b.residual) => best = Some(f),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(f), _) => Ok(f),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one start is always tried"),
    }
}

/// Sum of two thermal components, for compound targets with a bimodal plume.
pub fn tof_fit_two_component(
    hist: &TofHistogram,
    setup: &TofSetup,
    species: &IonSpecies,
    initial: (&SourceModel, &SourceModel),
) -> Result<TwoComponentFit> {
    check_bins(hist)?;
    setup.validate()?;
    initial.0.validate()?;
    initial.1.validate()?;
    let w = hist.bin_width();
    let w_a = initial.0.plume_radius;
    let data = DVector::from_column_slice(&hist.counts);
    let s: f64 = expected_counts(initial.0, species, setup, &hist.bin_centers, w).iter().sum::<f64>()
        + expected_counts(initial.1, species, setup, &hist.bin_centers, w).iter().sum::<f64>();
    let amp0 = if s > 0.0 { hist.total() / s } else { 1.0 };
    let residual = |p: &[f64]| -> Option<DVector<f64>> {
        let a = source_from(p[0], p[1], w_a)?;
        let b = source_from(p[3], p[4], w_a)?;
        let ma = expected_counts(&a, species, setup, &hist.bin_centers, w);
        let mb = expected_counts(&b, species, setup, &hist.bin_centers, w);
        Some(DVector::from_iterator(ma.len(), ma.iter().zip(&mb).map(|(x, y)| p[2] * x + p[5] * y)) - &data)
    };
    let p0 = vec![
        initial.0.temperature.ln(),
        initial.0.v0,
        amp0,
        initial.1.temperature.ln(),
        initial.1.v0,
        amp0,
    ];
    let fit = levenberg_marquardt(residual, p0)?;
    let bad = || Error::FitNonConvergence { iterations: fit.iterations, residual: fit.cost };
    let mk = |o: usize| -> Result<TofFit> {
        Ok(TofFit {
            source: source_from(fit.params[o], fit.params[o + 1], w_a).ok_or_else(bad)?,
            amplitude: fit.params[o + 2],
            residual: fit.cost,
            iterations: fit.iterations,
        })
    };
    Ok(TwoComponentFit { first: mk(0)?, second: mk(3)?, residual: fit.cost, iterations: fit.iterations })
}
