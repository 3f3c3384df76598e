//! Matrix functionals of the pair-rate matrix: spectral norm, Frobenius and
//! diagonal statistics, and the action of the matrix exponential.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{Dopri45, OdeError};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("vector length {got} does not match matrix size {n}")]
    DimensionMismatch { n: usize, got: usize },
    #[error("matrix exponential action failed: {0}")]
    StepUnderflow(#[from] OdeError),
}

/// Result of [`spectral_norm`]. When `converged` is false, `value` is the
/// last iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const SPECTRAL_NORM_MAX_ITER: usize = 20_000;

/// `‖R‖₂` by power iteration on `RᵀR` from the normalized all-ones vector.
pub fn spectral_norm(r: &CsrMatrix, tol: f64) -> SpectralNorm {
    spectral_norm_capped(r, tol, SPECTRAL_NORM_MAX_ITER)
}

pub fn spectral_norm_capped(r: &CsrMatrix, tol: f64, max_iter: usize) -> SpectralNorm {
    let n = r.n();
    if n == 0 || r.nnz() == 0 {
        return SpectralNorm { value: 0.0, iterations: 0, converged: true };
    }
    let ones = vec![1.0; n];
    let first = power_iterate(r, ones, tol, max_iter);
    if first.value > 0.0 {
        return first;
    }
    // start vector orthogonal to the dominant singular space
    let perturbed = (0..n).map(|k| 1.0 + 0.5 * ((k + 1) as f64).sin()).collect();
    let second = power_iterate(r, perturbed, tol, max_iter);
    SpectralNorm { iterations: first.iterations + second.iterations, ..second }
}

fn power_iterate(r: &CsrMatrix, mut v: Vec<f64>, tol: f64, max_iter: usize) -> SpectralNorm {
    let n = r.n();
    normalize(&mut v);
    let mut rv = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        r.mul_vec(&v, &mut rv);
        r.mul_vec_transposed(&rv, &mut w);
        // Rayleigh quotient of RᵀR at unit v
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let sigma = rq.max(0.0).sqrt();
        let wn = norm(&w);
        if wn == 0.0 {
            return SpectralNorm { value: 0.0, iterations: it, converged: true };
        }
        if (sigma - prev).abs() <= tol * sigma {
            return SpectralNorm { value: sigma, iterations: it, converged: true };
        }
        prev = sigma;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    SpectralNorm { value: prev, iterations: max_iter, converged: false }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `θ = ‖R‖_F² / N`.
pub fn frobenius_theta(r: &CsrMatrix) -> f64 {
    if r.n() == 0 {
        return 0.0;
    }
    r.values().iter().map(|v| v * v).sum::<f64>() / r.n() as f64
}

/// Diagonal of `R²`: `(R²)_mm = Σ_k R_mk R_km`.
pub fn diag_r2(r: &CsrMatrix) -> Vec<f64> {
    (0..r.n()).map(|m| r.row(m).map(|(k, v)| v * r.get(k, m)).sum()).collect()
}

/// `((1/N) Σ_m (R²)_mm, sqrt((1/N) Σ_m (R²)_mm²))`.
pub fn diag_r2_stats(r: &CsrMatrix) -> (f64, f64) {
    let n = r.n();
    if n == 0 {
        return (0.0, 0.0);
    }
    let d = diag_r2(r);
    let mean = d.iter().sum::<f64>() / n as f64;
    let rms = (d.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    (mean, rms)
}

/// `e^{Rt} v`, by integrating `u' = R u` with the embedded RK 5(4) pair.
pub fn expm_action(r: &CsrMatrix, v: &[f64], t: f64, tol: f64) -> Result<Vec<f64>, LinalgError> {
    if t < 0.0 || t.is_nan() {
        return Err(LinalgError::NegativeTime(t));
    }
    if v.len() != r.n() {
        return Err(LinalgError::DimensionMismatch { n: r.n(), got: v.len() });
    }
    if t == 0.0 || r.nnz() == 0 {
        return Ok(v.to_vec());
    }
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let solver = Dopri45 { rtol: tol, atol: tol * scale, ..Dopri45::default() };
    let (mut out, _) = solver.integrate(|_, u, du| r.mul_vec(u, du), 0.0, v, &[t], |_, _| Ok(false))?;
    Ok(out.pop().unwrap())
}

/// Dense `e^{A}` by scaling and squaring with a Taylor core; for small
/// matrices only.
pub fn dense_expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let norm1 = (0..n).map(|c| (0..n).map(|r| a[r][c].abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(squarings as i32);
    let scaled: Vec<Vec<f64>> = a.iter().map(|row| row.iter().map(|x| x * scale).collect()).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=24 {
        term = matmul(&term, &scaled);
        term.iter_mut().flatten().for_each(|x| *x /= k as f64);
        for (rr, tr) in result.iter_mut().zip(&term) {
            for (x, y) in rr.iter_mut().zip(tr) {
                *x += y;
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..n {
                    c[i][j] += aik * b[k][j];
                }
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn complete(n: usize) -> CsrMatrix {
        let w = 1.0 / (n as f64 - 1.0);
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    t.push((i, j, w));
                }
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn spectral_norm_of_normalized_complete_graph() {
        // eigenvalues of J - I are N - 1 and -1
        let s = spectral_norm(&complete(5), 1e-12);
        assert!(s.converged);
        assert_relative_eq!(s.value, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn spectral_norm_zero_and_two_by_two() {
        assert_eq!(spectral_norm(&CsrMatrix::zeros(4), 1e-10).value, 0.0);
        let beta = 0.7;
        let r = CsrMatrix::from_dense(&[vec![0.0, beta], vec![beta, 0.0]]);
        assert_relative_eq!(spectral_norm(&r, 1e-12).value, beta, max_relative = 1e-10);
    }

    #[test]
    fn spectral_norm_retries_when_ones_is_annihilated() {
        // R·1 = 0 but ‖R‖₂ = 2
        let r = CsrMatrix::from_dense(&[vec![1.0, -1.0], vec![1.0, -1.0]]);
        let s = spectral_norm(&r, 1e-12);
        assert!(s.converged);
        assert_relative_eq!(s.value, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn spectral_norm_flags_iteration_cap() {
        let r = CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 0.999]]);
        let s = spectral_norm_capped(&r, 1e-15, 3);
        assert!(!s.converged);
        assert_eq!(s.iterations, 3);
    }

    #[test]
    fn theta_and_diag_stats() {
        let r = CsrMatrix::from_dense(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        assert_eq!(frobenius_theta(&r), 4.0);
        let beta = 0.3;
        let r = CsrMatrix::from_dense(&[vec![0.0, beta], vec![beta, 0.0]]);
        let (m, s) = diag_r2_stats(&r);
        assert_relative_eq!(m, beta * beta, max_relative = 1e-15);
        assert_relative_eq!(s, beta * beta, max_relative = 1e-15);
        assert_eq!(diag_r2_stats(&CsrMatrix::zeros(3)), (0.0, 0.0));
        assert_eq!(frobenius_theta(&CsrMatrix::zeros(3)), 0.0);
    }

    #[test]
    fn expm_action_closed_forms() {
        let beta = 1.3;
        let t = 0.8;
        let r = CsrMatrix::from_dense(&[vec![0.0, beta], vec![beta, 0.0]]);
        assert_eq!(expm_action(&r, &[1.0, 0.0], 0.0, 1e-10).unwrap(), vec![1.0, 0.0]);
        let u = expm_action(&r, &[1.0, 0.0], t, 1e-11).unwrap();
        assert_relative_eq!(u[0], (beta * t).cosh(), max_relative = 1e-9);
        assert_relative_eq!(u[1], (beta * t).sinh(), max_relative = 1e-9);

        let nil = CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let u = expm_action(&nil, &[0.0, 1.0], 1.0, 1e-11).unwrap();
        assert_relative_eq!(u[0], 1.0, max_relative = 1e-9);
        assert_relative_eq!(u[1], 1.0, max_relative = 1e-12);
        assert!(matches!(expm_action(&nil, &[0.0, 1.0], -1.0, 1e-8), Err(LinalgError::NegativeTime(_))));
    }

    #[test]
    fn dense_expm_matches_two_by_two() {
        let b = 2.0;
        let e = dense_expm(&[vec![0.0, b], vec![b, 0.0]]);
        assert_relative_eq!(e[0][0], b.cosh(), max_relative = 1e-12);
        assert_relative_eq!(e[0][1], b.sinh(), max_relative = 1e-12);
    }
}
