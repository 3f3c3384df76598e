//! Adaptive Dormand–Prince 5(4) integrator shared by the mean-field solver,
//! the master-equation oracle and the matrix-exponential action.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },
    #[error("output grid must be sorted and start at or after the initial time")]
    BadGrid,
    #[error("integration aborted at t = {t}: {reason}")]
    Aborted { t: f64, reason: String },
}

/// Integrator settings. Error control is mixed absolute/relative, measured
/// in the RMS norm.
#[derive(Debug, Clone, Copy)]
pub struct Dopri45 {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri45 {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, h_min: 1e-14, max_steps: 1_000_000 }
    }
}

/// Counters reported by [`Dopri45::integrate`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl Dopri45 {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    /// Integrate `y' = rhs(t, y)` from `(t0, y0)` and return the state at every
    /// time of `grid`.
    ///
    /// `after_step` runs on every accepted step and may project the state; it
    /// returns `true` when it modified `y`.
    pub fn integrate<F, G>(
        &self,
        mut rhs: F,
        t0: f64,
        y0: &[f64],
        grid: &[f64],
        mut after_step: G,
    ) -> Result<(Vec<Vec<f64>>, OdeStats), OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        G: FnMut(f64, &mut [f64]) -> Result<bool, OdeError>,
    {
        if grid.windows(2).any(|w| w[1] < w[0]) || grid.first().is_some_and(|&g| g < t0) {
            return Err(OdeError::BadGrid);
        }
        let n = y0.len();
        let mut stats = OdeStats::default();
        let mut out = Vec::with_capacity(grid.len());
        let mut y = y0.to_vec();
        let mut t = t0;
        if n == 0 {
            return Ok((grid.iter().map(|_| Vec::new()).collect(), stats));
        }

        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut y_new = vec![0.0; n];

        rhs(t, &y, &mut k1);
        stats.rhs_evals += 1;
        let mut h = self.initial_step(&y, &k1, grid.last().map_or(1.0, |&g| g - t0));

        for &target in grid {
            while t < target {
                if stats.accepted + stats.rejected >= self.max_steps {
                    return Err(OdeError::MaxSteps { t, max_steps: self.max_steps });
                }
                let remaining = target - t;
                let hits = h >= remaining;
                let step = if hits { remaining } else { h };
                if step < self.h_min * t.abs().max(1.0) && !hits {
                    return Err(OdeError::StepUnderflow { t, h: step });
                }

                for i in 0..n {
                    tmp[i] = y[i] + step * A21 * k1[i];
                }
                rhs(t + C2 * step, &tmp, &mut k2);
                for i in 0..n {
                    tmp[i] = y[i] + step * (A31 * k1[i] + A32 * k2[i]);
                }
                rhs(t + C3 * step, &tmp, &mut k3);
                for i in 0..n {
                    tmp[i] = y[i] + step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
                }
                rhs(t + C4 * step, &tmp, &mut k4);
                for i in 0..n {
                    tmp[i] = y[i] + step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
                }
                rhs(t + C5 * step, &tmp, &mut k5);
                for i in 0..n {
                    tmp[i] = y[i] + step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
                }
                rhs(t + step, &tmp, &mut k6);
                for i in 0..n {
                    y_new[i] = y[i] + step * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
                }
                rhs(t + step, &y_new, &mut k7);
                stats.rhs_evals += 6;

                let mut err_sq = 0.0;
                for i in 0..n {
                    let e = step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                    let scale = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                    err_sq += (e / scale) * (e / scale);
                }
                let err = (err_sq / n as f64).sqrt();

                if err.is_finite() && err <= 1.0 {
                    t = if hits { target } else { t + step };
                    std::mem::swap(&mut y, &mut y_new);
                    std::mem::swap(&mut k1, &mut k7);
                    stats.accepted += 1;
                    if after_step(t, &mut y)? {
                        rhs(t, &y, &mut k1);
                        stats.rhs_evals += 1;
                    }
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    // a step clipped to the grid says little about the natural step size
                    if !hits || factor < 1.0 {
                        h = step * factor;
                    }
                } else {
                    stats.rejected += 1;
                    let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.1 };
                    h = step * factor;
                    if h < self.h_min * t.abs().max(1.0) {
                        return Err(OdeError::StepUnderflow { t, h });
                    }
                }
            }
            out.push(y.clone());
        }
        Ok((out, stats))
    }

    fn initial_step(&self, y: &[f64], f: &[f64], span: f64) -> f64 {
        let n = y.len() as f64;
        let (mut d0, mut d1) = (0.0, 0.0);
        for (yi, fi) in y.iter().zip(f) {
            let sc = self.atol + self.rtol * yi.abs();
            d0 += (yi / sc).powi(2);
            d1 += (fi / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let span = if span > 0.0 { span } else { 1.0 };
        h.min(span).max(1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_hook(_: f64, _: &mut [f64]) -> Result<bool, OdeError> {
        Ok(false)
    }

    #[test]
    fn exponential_decay() {
        let grid = [0.0, 0.5, 1.0, 3.0];
        let (ys, _) =
            Dopri45::default().integrate(|_, y, dy| dy[0] = -2.0 * y[0], 0.0, &[1.0], &grid, no_hook).unwrap();
        for (t, y) in grid.iter().zip(&ys) {
            assert!((y[0] - (-2.0 * t).exp()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn harmonic_oscillator_long_run() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let (ys, stats) = Dopri45::with_tolerances(1e-10, 1e-12)
            .integrate(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                0.0,
                &[1.0, 0.0],
                &grid,
                no_hook,
            )
            .unwrap();
        for (t, y) in grid.iter().zip(&ys) {
            assert!((y[0] - t.cos()).abs() < 1e-8);
            assert!((y[1] + t.sin()).abs() < 1e-8);
        }
        assert!(stats.accepted > 10);
    }

    #[test]
    fn zero_length_grid_returns_initial_state() {
        let (ys, _) = Dopri45::default().integrate(|_, _, dy| dy[0] = 1.0, 0.0, &[3.0], &[0.0, 0.0], no_hook).unwrap();
        assert_eq!(ys, vec![vec![3.0], vec![3.0]]);
    }

    #[test]
    fn unsorted_grid_rejected() {
        let r = Dopri45::default().integrate(|_, _, dy| dy[0] = 1.0, 0.0, &[0.0], &[1.0, 0.5], no_hook);
        assert_eq!(r.unwrap_err(), OdeError::BadGrid);
    }

    #[test]
    fn underflow_surfaces() {
        // y' = y^2 blows up at t = 1
        let cfg = Dopri45 { h_min: 1e-10, ..Dopri45::default() };
        let r = cfg.integrate(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], &[2.0], no_hook);
        assert!(matches!(r, Err(OdeError::StepUnderflow { .. }) | Err(OdeError::MaxSteps { .. })));
    }
}
