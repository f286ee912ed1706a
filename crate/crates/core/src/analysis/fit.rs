//! Power-law fits and finite-size scaling collapse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Decay exponent, `n ~ t^-alpha`.
    pub alpha: f64,
    pub alpha_stderr: f64,
    /// Spread of exponents fitted to the outer repeats, when available.
    pub alpha_repeat_stderr: Option<f64>,
    /// Smallest and largest time actually used.
    pub window: [f64; 2],
    pub n_points: usize,
    /// Dynamical exponent, collapse only.
    pub z: Option<f64>,
    /// Collapse objective at the returned exponents.
    pub cost: Option<f64>,
    /// Several grid points share the minimal cost.
    pub degenerate: bool,
    /// Description of the objective, for output metadata.
    pub method: String,
}

/// Least-squares line `y = a + b x`; returns `(a, b, stderr of b)`.
fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ssr: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let se = if x.len() > 2 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (a, b, se)
}

/// Fits `n ~ t^-alpha` by ordinary least squares of `ln n` on `ln t` over
/// `tmin <= t <= tmax`. The error is the regression standard error.
pub fn fit_power_law(t: &[f64], n: &[f64], tmin: f64, tmax: f64) -> Result<FitResult> {
    if t.len() != n.len() {
        return Err(Error::InvalidConfig("time and value series differ in length".into()));
    }
    let pts: Vec<(f64, f64)> = t.iter().zip(n).filter(|(ti, _)| **ti >= tmin && **ti <= tmax).map(|(a, b)| (*a, *b)).collect();
    if pts.len() < 4 {
        return Err(Error::InvalidConfig(format!("{} points in [{tmin}, {tmax}]; need at least 4", pts.len())));
    }
    if let Some((ti, ni)) = pts.iter().find(|(ti, ni)| !(*ni > 0.0) || !(*ti > 0.0)) {
        return Err(Error::Numerical(format!("cannot take logarithms at t = {ti}, value {ni}")));
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (_, slope, se) = ols(&lx, &ly);
    Ok(FitResult {
        alpha: -slope,
        alpha_stderr: se,
        alpha_repeat_stderr: None,
        window: [pts[0].0, pts[pts.len() - 1].0],
        n_points: pts.len(),
        z: None,
        cost: None,
        degenerate: false,
        method: "ols log-log".into(),
    })
}

/// One system size of a collapse: `(N, t, n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub size: f64,
    pub t: Vec<f64>,
    pub n: Vec<f64>,
}

const OVERLAP_SAMPLES: usize = 64;

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v < x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    ys[i - 1] * (1.0 - w) + ys[i] * w
}

/// Mean squared deviation of `ln(n t^alpha)` between every pair of curves
/// on the overlap of their `ln(t N^-z)` ranges. `None` when no pair overlaps.
pub fn collapse_cost(curves: &[Curve], alpha: f64, z: f64) -> Option<f64> {
    let scaled: Vec<(Vec<f64>, Vec<f64>)> = curves
        .iter()
        .map(|c| {
            let shift = -z * c.size.ln();
            let xs = c.t.iter().map(|t| t.ln() + shift).collect();
            let ys = c.t.iter().zip(&c.n).map(|(t, n)| n.ln() + alpha * t.ln()).collect();
            (xs, ys)
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..scaled.len() {
        for j in i + 1..scaled.len() {
            let (xa, ya) = &scaled[i];
            let (xb, yb) = &scaled[j];
            let lo = xa[0].max(xb[0]);
            let hi = xa[xa.len() - 1].min(xb[xb.len() - 1]);
            if !(hi > lo) {
                continue;
            }
            for k in 0..OVERLAP_SAMPLES {
                let x = lo + (hi - lo) * k as f64 / (OVERLAP_SAMPLES - 1) as f64;
                total += (interp(xa, ya, x) - interp(xb, yb, x)).powi(2);
                count += 1;
            }
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Grid step of an evenly spaced grid, or 0 for a single point.
fn spacing(grid: &[f64]) -> f64 {
    if grid.len() > 1 {
        (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64
    } else {
        0.0
    }
}

/// Vertex offset of the parabola through `(-h, a), (0, b), (h, c)`,
/// limited to one step.
fn quadratic_step(a: f64, b: f64, c: f64, h: f64) -> f64 {
    let curvature = a - 2.0 * b + c;
    if !(curvature > 0.0) || !a.is_finite() || !c.is_finite() {
        return 0.0;
    }
    (0.5 * h * (a - c) / curvature).clamp(-h, h)
}

/// Scans `(alpha, z)` over the grids for the best collapse of
/// `n t^alpha` against `t N^-z`, then refines the grid minimum by one
/// quadratic step in each direction. Curves need positive `t` and `n`.
pub fn collapse_fit(curves: &[Curve], alpha_grid: &[f64], z_grid: &[f64]) -> Result<FitResult> {
    if curves.len() < 2 {
        return Err(Error::InvalidConfig("collapse needs at least two system sizes".into()));
    }
    if alpha_grid.is_empty() || z_grid.is_empty() {
        return Err(Error::InvalidConfig("empty exponent grid".into()));
    }
    for c in curves {
        if c.t.len() != c.n.len() || c.t.len() < 2 {
            return Err(Error::InvalidConfig(format!("curve N = {} needs >= 2 matched points", c.size)));
        }
        if c.t.iter().chain(&c.n).any(|v| !(*v > 0.0)) || c.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Numerical(format!("curve N = {} needs increasing positive t and positive n", c.size)));
        }
    }
    let costs: Vec<Vec<f64>> = alpha_grid
        .iter()
        .map(|&a| z_grid.iter().map(|&z| collapse_cost(curves, a, z).unwrap_or(f64::INFINITY)).collect())
        .collect();
    let mut best = (0, 0);
    for (i, row) in costs.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c < costs[best.0][best.1] {
                best = (i, j);
            }
        }
    }
    let min = costs[best.0][best.1];
    if !min.is_finite() {
        return Err(Error::Numerical("rescaled curves never overlap".into()));
    }
    let tol = 1e-12 * (1.0 + min);
    let ties = costs.iter().flatten().filter(|&&c| c <= min + tol).count();

    let (i, j) = best;
    let (ha, hz) = (spacing(alpha_grid), spacing(z_grid));
    let cost_at = |a: f64, z: f64| collapse_cost(curves, a, z).unwrap_or(f64::INFINITY);
    let (a0, z0) = (alpha_grid[i], z_grid[j]);
    let da = if ha > 0.0 { quadratic_step(cost_at(a0 - ha, z0), min, cost_at(a0 + ha, z0), ha) } else { 0.0 };
    let dz = if hz > 0.0 { quadratic_step(cost_at(a0, z0 - hz), min, cost_at(a0, z0 + hz), hz) } else { 0.0 };
    let (mut alpha, mut z) = (a0 + da, z0 + dz);
    let mut cost = cost_at(alpha, z);
    if !(cost <= min) {
        (alpha, z, cost) = (a0, z0, min);
    }
    let t_lo = curves.iter().map(|c| c.t[0]).fold(f64::INFINITY, f64::min);
    let t_hi = curves.iter().map(|c| c.t[c.t.len() - 1]).fold(0.0, f64::max);
    Ok(FitResult {
        alpha,
        alpha_stderr: ha / 2.0,
        alpha_repeat_stderr: None,
        window: [t_lo, t_hi],
        n_points: curves.iter().map(|c| c.t.len()).sum(),
        z: Some(z),
        cost: Some(cost),
        degenerate: ties > 1,
        method: format!(
            "grid {}x{} + quadratic step; cost = mean squared difference of ln(n t^alpha) between curve pairs on {} points of the common ln(t N^-z) range",
            alpha_grid.len(),
            z_grid.len(),
            OVERLAP_SAMPLES
        ),
    })
}

/// `start, start + step, ...` up to `stop` inclusive.
pub fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::InvalidConfig(format!("bad grid {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn times() -> Vec<f64> {
        (1..=160).map(|k| k as f64 * 0.05).collect()
    }

    #[test]
    fn exact_power_law() {
        let t = times();
        let n: Vec<f64> = t.iter().map(|t| t.powf(-0.32)).collect();
        let f = fit_power_law(&t, &n, 1.0, 8.0).unwrap();
        assert!((f.alpha - 0.32).abs() < 1e-12);
        assert!(f.alpha_stderr < 1e-12);
        assert_eq!(f.window, [1.0, 8.0]);
    }

    #[test]
    fn constant_series() {
        let t = times();
        let f = fit_power_law(&t, &vec![0.7; t.len()], 1.0, 8.0).unwrap();
        assert!(f.alpha.abs() < 1e-14 && f.alpha_stderr < 1e-14);
    }

    #[test]
    fn noisy_power_law() {
        let t = times();
        let mut rng = stream(2, Purpose::Test, 0, 0);
        let n: Vec<f64> = t.iter().map(|t| t.powf(-0.32) * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt())).collect();
        let f = fit_power_law(&t, &n, 1.0, 8.0).unwrap();
        assert!((f.alpha - 0.32).abs() < 0.02);
    }

    #[test]
    fn fit_errors() {
        let t = times();
        assert!(fit_power_law(&t, &vec![1.0; t.len()], 1.0, 1.1).is_err());
        let mut n = vec![1.0; t.len()];
        n[30] = 0.0;
        assert!(matches!(fit_power_law(&t, &n, 1.0, 8.0), Err(Error::Numerical(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn recovers_exponent_within_two_stderr(alpha in 0.1f64..0.5, seed in 0u64..1000) {
            let t = times();
            let mut rng = stream(seed, Purpose::Test, 1, 0);
            let n: Vec<f64> = t.iter().map(|t| t.powf(-alpha) * (1.0 + 0.005 * (rng.random::<f64>() - 0.5))).collect();
            let f = fit_power_law(&t, &n, 1.0, 8.0).unwrap();
            prop_assert!((f.alpha - alpha).abs() <= 2.0 * f.alpha_stderr + 1e-3);
        }
    }

    fn family(alpha: f64, z: f64) -> Vec<Curve> {
        [8.0, 12.0, 16.0, 20.0]
            .iter()
            .map(|&size| {
                let t: Vec<f64> = (1..=400).map(|k| k as f64 * 0.05).collect();
                let n = t.iter().map(|&t| t.powf(-alpha) * (-(t * f64::powf(size, -z)).powi(2)).exp() / (1.0 + t * f64::powf(size, -z))).collect();
                Curve { size, t, n }
            })
            .collect()
    }

    #[test]
    fn collapse_recovers_generators() {
        let curves = family(0.32, 1.55);
        let f = collapse_fit(&curves, &grid(0.2, 0.45, 0.01).unwrap(), &grid(1.2, 1.9, 0.05).unwrap()).unwrap();
        assert!((f.alpha - 0.32).abs() <= 0.01, "{f:?}");
        assert!((f.z.unwrap() - 1.55).abs() <= 0.05, "{f:?}");
        assert!(!f.degenerate);
    }

    #[test]
    fn collapse_minimum_is_sharp() {
        let curves = family(0.32, 1.55);
        let at = |a, z| collapse_cost(&curves, a, z).unwrap();
        let best = at(0.32, 1.55);
        for (da, dz) in [(0.1, 0.0), (-0.1, 0.0), (0.0, 0.3), (0.0, -0.3), (0.1, 0.3), (-0.1, -0.3)] {
            assert!(best < at(0.32 + da, 1.55 + dz));
        }
    }

    #[test]
    fn identical_curves_are_degenerate() {
        let base = family(0.32, 0.0);
        let f = collapse_fit(&base, &grid(0.2, 0.4, 0.05).unwrap(), &grid(0.0, 1.0, 0.25).unwrap()).unwrap();
        assert!(f.degenerate);
        assert!(f.cost.unwrap() < 1e-20);
        assert_eq!(f.z, Some(0.0));
    }

    #[test]
    fn collapse_errors() {
        let one = &family(0.3, 1.5)[..1];
        assert!(collapse_fit(one, &[0.3], &[1.5]).is_err());
        assert_eq!(grid(0.0, 1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
