//! Natural cubic smoothing spline with knots at the samples.
//!
//! Minimizes `Σ (yᵢ − g(xᵢ))² + λ ∫ g''²`; `λ` is chosen by generalized
//! cross-validation and then reduced until no fitted value departs from its
//! sample by more than the largest jump between adjacent samples.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    x: Vec<f64>,
    /// Fitted values at the knots.
    g: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    gamma: Vec<f64>,
    pub lambda: f64,
}

struct Band {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn band_matrices(x: &[f64]) -> Band {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut q = DMatrix::zeros(n, n - 2);
    let mut r = DMatrix::zeros(n - 2, n - 2);
    for j in 1..n - 1 {
        let c = j - 1;
        q[(j - 1, c)] = 1.0 / h[j - 1];
        q[(j, c)] = -1.0 / h[j - 1] - 1.0 / h[j];
        q[(j + 1, c)] = 1.0 / h[j];
        r[(c, c)] = (h[j - 1] + h[j]) / 3.0;
        if c + 1 < n - 2 {
            r[(c, c + 1)] = h[j] / 6.0;
            r[(c + 1, c)] = h[j] / 6.0;
        }
    }
    Band { q, r }
}

struct Fit {
    g: DVector<f64>,
    gamma: DVector<f64>,
    trace: f64,
}

fn fit_at(b: &Band, y: &DVector<f64>, lambda: f64) -> Option<Fit> {
    let qt = b.q.transpose();
    let m = &b.r + lambda * &qt * &b.q;
    let chol = m.cholesky()?;
    let gamma = chol.solve(&(&qt * y));
    let g = y - lambda * &b.q * &gamma;
    // hat matrix A = I − λ Q M⁻¹ Qᵀ
    let inner = chol.solve(&qt);
    let trace = y.len() as f64 - lambda * (&b.q * inner).trace();
    Some(Fit { g, gamma, trace })
}

impl SmoothingSpline {
    /// Fits `ys` at strictly increasing `xs`. Fewer than three samples interpolate linearly.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::invalid("samples", "x and y must be non-empty and of equal length"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("samples", "abscissae must be strictly increasing"));
        }
        let n = xs.len();
        if n < 3 {
            return Ok(Self { x: xs.to_vec(), g: ys.to_vec(), gamma: vec![0.0; n], lambda: 0.0 });
        }
        let y = DVector::from_column_slice(ys);
        let b = band_matrices(xs);
        let max_jump = ys.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);

        let scale = b.r.trace() / (b.q.transpose() * &b.q).trace();
        let gcv = |rho: f64| -> f64 {
            match fit_at(&b, &y, rho * scale) {
                Some(f) => {
                    let rss = (&y - &f.g).norm_squared();
                    let dof = n as f64 - f.trace;
                    if dof <= 1e-9 {
                        f64::INFINITY
                    } else {
                        n as f64 * rss / (dof * dof)
                    }
                }
                None => f64::INFINITY,
            }
        };
        // log-grid scan, then golden-section refinement in log ρ
        let grid: Vec<f64> = (0..=60).map(|k| -8.0 + k as f64 * 0.25).collect();
        let scores: Vec<f64> = grid.iter().map(|&l| gcv(10f64.powf(l))).collect();
        let kbest = (0..grid.len()).min_by(|&i, &j| scores[i].total_cmp(&scores[j])).unwrap_or(0);
        let (mut lo, mut hi) = (grid[kbest.saturating_sub(1)], grid[(kbest + 1).min(grid.len() - 1)]);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..40 {
            let a = hi - phi * (hi - lo);
            let c = lo + phi * (hi - lo);
            if gcv(10f64.powf(a)) <= gcv(10f64.powf(c)) {
                hi = c;
            } else {
                lo = a;
            }
        }
        let mut rho = 10f64.powf(0.5 * (lo + hi));
        if !gcv(rho).is_finite() {
            rho = 10f64.powf(grid[kbest]);
        }

        loop {
            let lambda = rho * scale;
            let f = fit_at(&b, &y, lambda)
                .ok_or_else(|| Error::Inversion("smoothing system is not positive definite".into()))?;
            let dev = (&y - &f.g).amax();
            if dev <= max_jump || rho < 1e-14 {
                let mut gamma = vec![0.0; n];
                gamma[1..n - 1].copy_from_slice(f.gamma.as_slice());
                return Ok(Self { x: xs.to_vec(), g: f.g.as_slice().to_vec(), gamma, lambda });
            }
            rho *= 0.1;
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn fitted(&self) -> &[f64] {
        &self.g
    }

    /// Evaluates the spline; linear beyond the end knots.
    pub fn eval(&self, t: f64) -> f64 {
        let (x, g, gm) = (&self.x, &self.g, &self.gamma);
        let n = x.len();
        if n == 1 {
            return g[0];
        }
        if t <= x[0] {
            return g[0] + (t - x[0]) * self.end_slope(0);
        }
        if t >= x[n - 1] {
            return g[n - 1] + (t - x[n - 1]) * self.end_slope(n - 2);
        }
        let i = x.partition_point(|&k| k <= t).saturating_sub(1).min(n - 2);
        let h = x[i + 1] - x[i];
        let (l, r) = (t - x[i], x[i + 1] - t);
        (l * g[i + 1] + r * g[i]) / h - l * r / 6.0 * ((1.0 + l / h) * gm[i + 1] + (1.0 + r / h) * gm[i])
    }

    fn end_slope(&self, i: usize) -> f64 {
        let (x, g, gm) = (&self.x, &self.g, &self.gamma);
        let h = x[i + 1] - x[i];
        let base = (g[i + 1] - g[i]) / h;
        if i == 0 {
            base - h / 6.0 * (2.0 * gm[0] + gm[1])
        } else {
            base + h / 6.0 * (gm[i] + 2.0 * gm[i + 1])
        }
    }
}
