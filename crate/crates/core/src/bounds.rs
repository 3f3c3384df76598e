//! Closed-form error and concentration bounds.
//!
//! Every evaluator returns a [`BoundReport`] echoing the inputs it used.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dense_expm, diag_r2_stats, expm_action, frobenius_theta, spectral_norm, LinalgError};
use crate::rates::{pair_rate_matrix, RateSystem};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("bound requires a symmetric rate matrix")]
    RequiresSymmetric,
    #[error("bound requires an unweighted graph normalized by its average degree")]
    RequiresUnweighted,
    #[error("bound requires pairwise interactions only")]
    RequiresPairwise,
    #[error("lower bounds are stated at t = 1 only, got t = {0}")]
    RequiresUnitTime(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub value: f64,
    pub inputs: BTreeMap<String, f64>,
}

impl BoundReport {
    fn new(name: &str, value: f64, inputs: &[(&str, f64)]) -> Self {
        Self { name: name.to_string(), value, inputs: inputs.iter().map(|&(k, v)| (k.to_string(), v)).collect() }
    }
}

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const NORM_TOL: f64 = 1e-12;

/// `Var(ξ̄^M) ≤ e^{2‖R‖₂ t} / |M|`.
pub fn concentration_upper(norm2: f64, t: f64, m_size: usize) -> BoundReport {
    let value = (2.0 * norm2 * t).exp() / m_size as f64;
    BoundReport::new("concentration_upper", value, &[("norm2", norm2), ("t", t), ("m_size", m_size as f64)])
}

/// `P(H_i(t) ∩ H_j(t) ≠ ∅) ≤ t e^{δ M t} (1 + e^{δ M t}) r̃_max`.
pub fn collision_upper(delta_max: f64, order: usize, rtilde_max: f64, t: f64) -> BoundReport {
    let e = (delta_max * order as f64 * t).exp();
    let value = t * e * (1.0 + e) * rtilde_max;
    BoundReport::new(
        "collision_upper",
        value,
        &[("delta_max", delta_max), ("M", order as f64), ("rtilde_max", rtilde_max), ("t", t)],
    )
}

/// `max_{i,s} |y − z| ≤ 2 M t e^{2 M δ t} r̃_max`.
pub fn linf_upper(delta_max: f64, order: usize, rtilde_max: f64, t: f64) -> BoundReport {
    let m = order as f64;
    let value = 2.0 * m * t * (2.0 * m * delta_max * t).exp() * rtilde_max;
    BoundReport::new("linf_upper", value, &[("delta_max", delta_max), ("M", m), ("rtilde_max", rtilde_max), ("t", t)])
}

/// `½ (1 − e^{−r̃_max / 2})²`, attained at `t = 1` by the counterexample.
pub fn linf_lower_general(rtilde_max: f64) -> BoundReport {
    let value = 0.5 * (1.0 - (-rtilde_max / 2.0).exp()).powi(2);
    BoundReport::new("linf_lower_general", value, &[("rtilde_max", rtilde_max), ("t", 1.0)])
}

fn require_symmetric(r: &CsrMatrix) -> Result<(), BoundsError> {
    if r.is_symmetric(SYMMETRY_TOL) {
        Ok(())
    } else {
        Err(BoundsError::RequiresSymmetric)
    }
}

/// Incoming totals `δ_i = Σ_j R_{ji}`.
pub fn incoming_totals(r: &CsrMatrix) -> Vec<f64> {
    let mut d = vec![0.0; r.n()];
    for (_, i, w) in r.triplets() {
        d[i] += w;
    }
    d
}

pub fn l1_upper_delta(r: &CsrMatrix, t: f64) -> Result<BoundReport, BoundsError> {
    require_symmetric(r)?;
    let delta_max = incoming_totals(r).into_iter().fold(0.0, f64::max);
    let (mean_diag, _) = diag_r2_stats(r);
    let value = 4.0 * t * t * (3.0 * delta_max * t).exp() * mean_diag;
    Ok(BoundReport::new("l1_upper_delta", value, &[("delta_max", delta_max), ("mean_diag_r2", mean_diag), ("t", t)]))
}

pub fn l1_upper_sigma(r: &CsrMatrix, t: f64) -> Result<BoundReport, BoundsError> {
    require_symmetric(r)?;
    let norm2 = spectral_norm(r, NORM_TOL).value;
    let (_, rms_diag) = diag_r2_stats(r);
    let value = 4.0 * t * t * (3.0 * norm2 * t).exp() * rms_diag;
    Ok(BoundReport::new("l1_upper_sigma", value, &[("norm2", norm2), ("rms_diag_r2", rms_diag), ("t", t)]))
}

/// `(1/16)(1/N) Σ_{i,j} e^{−(δ_i + δ_j)} R_{ji}²` at `t = 1`.
pub fn l1_lower_exp_delta(r: &CsrMatrix) -> BoundReport {
    let n = r.n().max(1) as f64;
    let d = incoming_totals(r);
    let sum: f64 = r.triplets().map(|(j, i, w)| (-(d[i] + d[j])).exp() * w * w).sum();
    BoundReport::new("l1_lower_exp_delta", sum / (16.0 * n), &[("n", n), ("t", 1.0)])
}

/// Average degree `d̄` when `R = A / d̄` for a simple undirected graph `A`.
pub fn unweighted_average_degree(r: &CsrMatrix) -> Result<f64, BoundsError> {
    require_symmetric(r)?;
    if r.nnz() == 0 {
        return Err(BoundsError::RequiresUnweighted);
    }
    let dbar = r.nnz() as f64 / r.n() as f64;
    let w = 1.0 / dbar;
    if r.values().iter().all(|&v| ((v - w) / w).abs() <= 1e-12) {
        Ok(dbar)
    } else {
        Err(BoundsError::RequiresUnweighted)
    }
}

/// `(1/32) e^{−8‖R‖₂²} / d̄` at `t = 1`.
pub fn l1_lower_graph(r: &CsrMatrix) -> Result<BoundReport, BoundsError> {
    let dbar = unweighted_average_degree(r)?;
    let norm2 = spectral_norm(r, NORM_TOL).value;
    let value = (-8.0 * norm2 * norm2).exp() / (32.0 * dbar);
    Ok(BoundReport::new("l1_lower_graph", value, &[("dbar", dbar), ("norm2", norm2), ("t", 1.0)]))
}

/// `(1/32) e^{−8‖R‖₂³/θ} θ` at `t = 1`.
pub fn l1_lower_theta(r: &CsrMatrix) -> Result<BoundReport, BoundsError> {
    require_symmetric(r)?;
    let theta = frobenius_theta(r);
    let norm2 = spectral_norm(r, NORM_TOL).value;
    let value = if theta > 0.0 { (-8.0 * norm2.powi(3) / theta).exp() * theta / 32.0 } else { 0.0 };
    Ok(BoundReport::new("l1_lower_theta", value, &[("theta", theta), ("norm2", norm2), ("t", 1.0)]))
}

/// All five ℓ¹ bounds; entries that do not apply are `None` and listed in `skipped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Bounds {
    pub upper_delta: Option<BoundReport>,
    pub upper_sigma: Option<BoundReport>,
    pub lower_exp_delta: Option<BoundReport>,
    pub lower_graph: Option<BoundReport>,
    pub lower_theta: Option<BoundReport>,
    pub skipped: Vec<(String, String)>,
}

impl L1Bounds {
    pub fn reports(&self) -> Vec<&BoundReport> {
        [&self.upper_delta, &self.upper_sigma, &self.lower_exp_delta, &self.lower_graph, &self.lower_theta]
            .into_iter()
            .flatten()
            .collect()
    }
}

pub fn l1_bounds(r: &CsrMatrix, t: f64) -> L1Bounds {
    let mut skipped = Vec::new();
    let mut keep = |name: &str, res: Result<BoundReport, BoundsError>| match res {
        Ok(b) => Some(b),
        Err(e) => {
            skipped.push((name.to_string(), e.to_string()));
            None
        }
    };
    let unit = if t == 1.0 { Ok(()) } else { Err(BoundsError::RequiresUnitTime(t)) };
    let upper_delta = keep("l1_upper_delta", l1_upper_delta(r, t));
    let upper_sigma = keep("l1_upper_sigma", l1_upper_sigma(r, t));
    let lower_exp_delta = keep("l1_lower_exp_delta", unit.clone().map(|_| l1_lower_exp_delta(r)));
    let lower_graph = keep("l1_lower_graph", unit.clone().and_then(|_| l1_lower_graph(r)));
    let lower_theta = keep("l1_lower_theta", unit.and_then(|_| l1_lower_theta(r)));
    L1Bounds { upper_delta, upper_sigma, lower_exp_delta, lower_graph, lower_theta, skipped }
}

pub const DENSE_EXPM_MAX: usize = 512;

/// `Σ_m (e^{Rt})_{im} (e^{2Rt} − I)_{mm}` for symmetric `R`.
pub fn ghost_upper_bk(r: &CsrMatrix, root: usize, t: f64, tol: f64) -> Result<BoundReport, BoundsError> {
    require_symmetric(r)?;
    let n = r.n();
    let value = if t == 0.0 || r.nnz() == 0 {
        0.0
    } else if n <= DENSE_EXPM_MAX {
        let scaled = |s: f64| -> Vec<Vec<f64>> {
            r.to_dense().into_iter().map(|row| row.into_iter().map(|x| x * s).collect()).collect()
        };
        let e1 = dense_expm(&scaled(t));
        let e2 = dense_expm(&scaled(2.0 * t));
        (0..n).map(|m| e1[root][m] * (e2[m][m] - 1.0)).sum()
    } else {
        let mut unit = vec![0.0; n];
        unit[root] = 1.0;
        // symmetric R: row `root` of e^{Rt} is e^{Rt} e_root
        let row = expm_action(r, &unit, t, tol)?;
        unit[root] = 0.0;
        let mut total = 0.0;
        for m in 0..n {
            unit[m] = 1.0;
            let col = expm_action(r, &unit, 2.0 * t, tol)?;
            unit[m] = 0.0;
            total += row[m] * (col[m] - 1.0);
        }
        total
    };
    Ok(BoundReport::new("ghost_upper_bk", value, &[("root", root as f64), ("t", t), ("n", n as f64)]))
}

/// `(e^{Rᵀt} e^{Rt})_{ij} = ⟨e^{Rt} e_i, e^{Rt} e_j⟩`, the covariance-kernel bound.
pub fn cov_exp_bound(r: &CsrMatrix, i: usize, j: usize, t: f64, tol: f64) -> Result<BoundReport, BoundsError> {
    let n = r.n();
    let mut ei = vec![0.0; n];
    ei[i] = 1.0;
    let mut ej = vec![0.0; n];
    ej[j] = 1.0;
    let a = expm_action(r, &ei, t, tol)?;
    let b = expm_action(r, &ej, t, tol)?;
    let value = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok(BoundReport::new("cov_exp_bound", value, &[("i", i as f64), ("j", j as f64), ("t", t)]))
}

/// Rate quantities of a system feeding the bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub n: usize,
    pub max_order: usize,
    pub delta_max: f64,
    pub rtilde_max: f64,
    /// Pairwise systems only.
    pub norm2: Option<f64>,
    pub theta: Option<f64>,
    pub symmetric: Option<bool>,
}

pub fn rate_summary(system: &RateSystem) -> RateSummary {
    let pair = pair_rate_matrix(system).ok();
    RateSummary {
        n: system.n_vertices(),
        max_order: system.max_order(),
        delta_max: system.delta_max(),
        rtilde_max: crate::rates::influence_max(system),
        norm2: pair.as_ref().map(|p| spectral_norm(&p.matrix, NORM_TOL).value),
        theta: pair.as_ref().map(|p| frobenius_theta(&p.matrix)),
        symmetric: pair.as_ref().map(|p| p.symmetric),
    }
}

/// Every bound applicable to `system` at each time in `times`.
pub fn bound_table(system: &RateSystem, times: &[f64]) -> Vec<BoundReport> {
    let s = rate_summary(system);
    let order = s.max_order.max(1);
    let mut out = Vec::new();
    let pair = pair_rate_matrix(system).ok();
    for &t in times {
        out.push(linf_upper(s.delta_max, order, s.rtilde_max, t));
        out.push(collision_upper(s.delta_max, order, s.rtilde_max, t));
        if let Some(p) = &pair {
            out.push(concentration_upper(s.norm2.unwrap_or(0.0), t, s.n));
            out.extend(l1_bounds(&p.matrix, t).reports().into_iter().cloned());
        }
    }
    out.push(linf_lower_general(s.rtilde_max));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{named_graph, normalize_rates, NamedGraph};
    use approx::assert_relative_eq;

    fn two_cycle(beta: f64) -> CsrMatrix {
        CsrMatrix::from_dense(&[vec![0.0, beta], vec![beta, 0.0]])
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(concentration_upper(3.0, 0.0, 4).value, 0.25);
        assert_relative_eq!(concentration_upper(1.0, 1.0, 100).value, 0.073_890_560_989_306_5, max_relative = 1e-14);
        assert_relative_eq!(
            collision_upper(1.0, 1, 0.1, 1.0).value,
            1f64.exp() * (1.0 + 1f64.exp()) * 0.1,
            max_relative = 1e-15
        );
        assert_eq!(collision_upper(1.0, 1, 0.0, 1.0).value, 0.0);
        assert_eq!(linf_upper(1.0, 1, 0.5, 0.0).value, 0.0);
        assert_relative_eq!(linf_upper(1.0, 1, 0.25, 1.0).value, 2.0 * 2f64.exp() * 0.25, max_relative = 1e-15);
        assert_relative_eq!(
            linf_upper(1.0, 2, 1.0, 0.5).value / linf_upper(1.0, 1, 1.0, 0.5).value,
            2.0 * 1f64.exp(),
            max_relative = 1e-14
        );
        assert_eq!(linf_lower_general(0.0).value, 0.0);
        assert_relative_eq!(linf_lower_general(1.0).value, 0.077_409_060_873_087_7, max_relative = 1e-14);
    }

    #[test]
    fn zero_matrix_gives_zero_bounds() {
        let b = l1_bounds(&CsrMatrix::zeros(4), 1.0);
        assert_eq!(b.upper_delta.unwrap().value, 0.0);
        assert_eq!(b.upper_sigma.unwrap().value, 0.0);
        assert_eq!(b.lower_exp_delta.unwrap().value, 0.0);
        assert_eq!(b.lower_theta.unwrap().value, 0.0);
        assert!(b.lower_graph.is_none());
    }

    #[test]
    fn two_by_two_lower_exp_delta() {
        let beta = 0.7;
        let v = l1_lower_exp_delta(&two_cycle(beta)).value;
        assert_relative_eq!(v, beta * beta / 16.0 * (-2.0 * beta).exp(), max_relative = 1e-14);
    }

    #[test]
    fn unweighted_graph_upper_delta_uses_inverse_degree() {
        let g = named_graph(NamedGraph::RandomRegular { d: 4, seed: 2 }, 30).unwrap();
        let (w, _) = normalize_rates(&g, &[1.0]).unwrap();
        let r = w.pair_matrix();
        let t = 0.7;
        let b = l1_upper_delta(&r, t).unwrap();
        assert_relative_eq!(b.value, 4.0 * t * t * (3.0 * t).exp() / 4.0, max_relative = 1e-12);
        assert_eq!(unweighted_average_degree(&r).unwrap(), 4.0);
        assert!(l1_lower_graph(&r).is_ok());
        let skewed = CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(l1_upper_delta(&skewed, 1.0), Err(BoundsError::RequiresSymmetric));
        assert!(l1_bounds(&r, 0.5).lower_graph.is_none());
    }

    #[test]
    fn bk_bound_two_by_two() {
        let (beta, t) = (0.9, 0.6);
        let b = ghost_upper_bk(&two_cycle(beta), 0, t, 1e-12).unwrap().value;
        let c = (2.0 * beta * t).cosh() - 1.0;
        assert_relative_eq!(b, (beta * t).cosh() * c + (beta * t).sinh() * c, max_relative = 1e-10);
        assert_eq!(ghost_upper_bk(&two_cycle(beta), 0, 0.0, 1e-12).unwrap().value, 0.0);
    }

    #[test]
    fn cov_kernel_symmetric_in_pair() {
        let r = two_cycle(0.5);
        let a = cov_exp_bound(&r, 0, 1, 1.0, 1e-12).unwrap().value;
        // (e^{2Rt})_{01} = sinh(2βt)
        assert_relative_eq!(a, (1.0f64).sinh(), max_relative = 1e-9);
    }
}
