//! The NIMFA (quenched mean-field) ODE system and its integration.
//!
//! The state is a flat vector `z[i * |S| + s]`, one probability vector per
//! vertex.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{Dopri45, OdeError, OdeStats};
use crate::rates::RateSystem;
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NimfaError {
    #[error("initial condition has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("integration failed: {0}")]
    StepUnderflow(OdeError),
    #[error("simplex violated at t = {t}: {detail}")]
    SimplexViolation { t: f64, detail: String },
}

impl From<OdeError> for NimfaError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::Aborted { t, reason } => NimfaError::SimplexViolation { t, detail: reason },
            other => NimfaError::StepUnderflow(other),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TapeRule {
    from: u32,
    to: u32,
    base_start: u32,
    base_end: u32,
    rate: f64,
}

/// Right-hand side of the NIMFA system, compiled from a [`RateSystem`].
#[derive(Debug, Clone)]
pub enum NimfaRhs {
    /// One entry per rule: flat `z` indices of the target's `from`/`to`
    /// states and of every `(base vertex, base state)` pair.
    Generic { dim: usize, tape: Vec<TapeRule>, base_idx: Vec<u32> },
    /// `dz_I = −γ_i z_i + (1 − z_i) Σ_j R_{ji} z_j`; `incoming` row `i` holds `(j, R_{ji})`.
    Sis { incoming: CsrMatrix, recovery: Vec<f64> },
}

impl NimfaRhs {
    /// Picks the SIS fast path when the system has that shape.
    pub fn compile(system: &RateSystem) -> Self {
        Self::sis(system).unwrap_or_else(|| Self::generic(system))
    }

    pub fn generic(system: &RateSystem) -> Self {
        let ns = system.n_states();
        let mut tape = Vec::with_capacity(system.rule_count());
        let mut base_idx = Vec::new();
        for r in system.rules() {
            let start = base_idx.len() as u32;
            base_idx.extend(r.base.iter().zip(r.base_states).map(|(&j, &s)| j * ns as u32 + s as u32));
            tape.push(TapeRule {
                from: (r.target * ns + r.from) as u32,
                to: (r.target * ns + r.to) as u32,
                base_start: start,
                base_end: base_idx.len() as u32,
                rate: r.rate,
            });
        }
        NimfaRhs::Generic { dim: system.n_vertices() * ns, tape, base_idx }
    }

    /// States `{S, I}` (indices 0, 1), pair rules `(I, S) -> (I, I)` and self
    /// rules `I -> S` only.
    pub fn sis(system: &RateSystem) -> Option<Self> {
        if system.n_states() != 2 || system.max_order() > 1 {
            return None;
        }
        let n = system.n_vertices();
        let mut recovery = vec![0.0; n];
        let mut trip = Vec::new();
        for r in system.rules() {
            match (r.order(), r.from, r.to) {
                (0, 1, 0) => recovery[r.target] += r.rate,
                (1, 0, 1) if r.base_states[0] == 1 => trip.push((r.target, r.base[0] as usize, r.rate)),
                _ => return None,
            }
        }
        Some(NimfaRhs::Sis { incoming: CsrMatrix::from_triplets(n, trip), recovery })
    }

    pub fn dim(&self) -> usize {
        match self {
            NimfaRhs::Generic { dim, .. } => *dim,
            NimfaRhs::Sis { recovery, .. } => 2 * recovery.len(),
        }
    }

    pub fn is_sis_fast_path(&self) -> bool {
        matches!(self, NimfaRhs::Sis { .. })
    }

    pub fn eval(&self, z: &[f64], dz: &mut [f64]) {
        match self {
            NimfaRhs::Generic { tape, base_idx, .. } => {
                dz.fill(0.0);
                for r in tape {
                    let mut term = r.rate * z[r.from as usize];
                    for &b in &base_idx[r.base_start as usize..r.base_end as usize] {
                        term *= z[b as usize];
                    }
                    dz[r.to as usize] += term;
                    dz[r.from as usize] -= term;
                }
            }
            NimfaRhs::Sis { incoming, recovery } => {
                for (i, &g) in recovery.iter().enumerate() {
                    let zi = z[2 * i + 1];
                    let pressure: f64 = incoming.row(i).map(|(j, w)| w * z[2 * j + 1]).sum();
                    let d = -g * zi + (1.0 - zi) * pressure;
                    dz[2 * i + 1] = d;
                    dz[2 * i] = -d;
                }
            }
        }
    }
}

/// One-shot evaluation of the generic right-hand side.
pub fn nimfa_rhs(system: &RateSystem, z: &[f64]) -> Vec<f64> {
    let rhs = NimfaRhs::generic(system);
    let mut dz = vec![0.0; rhs.dim()];
    rhs.eval(z, &mut dz);
    dz
}

/// Integrated NIMFA trajectory on a fixed grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NimfaSolution {
    pub n_states: usize,
    pub grid: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    /// Largest `|Σ_s z_{i,s} − 1|` seen after any accepted step, before correction.
    pub max_drift: f64,
    /// Most negative entry seen before clamping (0 if none).
    pub min_entry: f64,
    /// Largest total change applied by a renormalization.
    pub max_correction: f64,
    pub stats: OdeStats,
}

impl NimfaSolution {
    pub fn get(&self, t_index: usize, i: usize, s: usize) -> f64 {
        self.z[t_index][i * self.n_states + s]
    }

    /// CSV with rows `t,vertex,state,z`.
    pub fn to_csv(&self, state_names: &[String]) -> String {
        let mut out = String::from("t,vertex,state,z\n");
        for (k, &t) in self.grid.iter().enumerate() {
            for (idx, &v) in self.z[k].iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt17(t),
                    idx / self.n_states,
                    state_names[idx % self.n_states],
                    fmt17(v)
                );
            }
        }
        out
    }
}

/// 17 significant digits, the precision used by every CSV writer.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

const RENORMALIZE_ABOVE: f64 = 1e-12;
const CLAMP_BELOW: f64 = -1e-9;
const ABORT_DRIFT: f64 = 1e-6;

pub fn integrate_nimfa(
    system: &RateSystem,
    z0: &[f64],
    grid: &[f64],
    solver: &Dopri45,
) -> Result<NimfaSolution, NimfaError> {
    integrate_with(&NimfaRhs::compile(system), system.n_states(), z0, grid, solver)
}

pub fn integrate_with(
    rhs: &NimfaRhs,
    n_states: usize,
    z0: &[f64],
    grid: &[f64],
    solver: &Dopri45,
) -> Result<NimfaSolution, NimfaError> {
    if z0.len() != rhs.dim() {
        return Err(NimfaError::DimensionMismatch { expected: rhs.dim(), got: z0.len() });
    }
    let mut max_drift = 0.0f64;
    let mut min_entry = 0.0f64;
    let mut max_correction = 0.0f64;
    let (z, stats) = solver.integrate(
        |_, z, dz| rhs.eval(z, dz),
        0.0,
        z0,
        grid,
        |t, z| {
            let mut modified = false;
            for row in z.chunks_mut(n_states) {
                let sum: f64 = row.iter().sum();
                let drift = (sum - 1.0).abs();
                let low = row.iter().copied().fold(f64::INFINITY, f64::min);
                max_drift = max_drift.max(drift);
                min_entry = min_entry.min(low);
                if drift > ABORT_DRIFT || low < CLAMP_BELOW {
                    return Err(OdeError::Aborted { t, reason: format!("row sum {sum}, min entry {low}") });
                }
                if drift > RENORMALIZE_ABOVE || low < 0.0 {
                    let before: Vec<f64> = row.to_vec();
                    row.iter_mut().for_each(|x| *x = x.max(0.0));
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|x| *x /= s);
                    let change: f64 = row.iter().zip(&before).map(|(a, b)| (a - b).abs()).sum();
                    max_correction = max_correction.max(change);
                    modified = true;
                }
            }
            Ok(modified)
        },
    )?;
    Ok(NimfaSolution { n_states, grid: grid.to_vec(), z, max_drift, min_entry, max_correction, stats })
}
