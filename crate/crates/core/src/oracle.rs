//! Exact master-equation solutions on the full configuration space.
//!
//! Configurations are encoded in mixed radix `|S|` with vertex 0 the least
//! significant digit: `c = Σ_v σ_v |S|^v`.

use thiserror::Error;

use crate::models::InitialLaw;
use crate::ode::{Dopri45, OdeError};
use crate::rates::RateSystem;
use crate::sparse::CsrMatrix;

pub const ORACLE_STATE_CAP: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("configuration space |S|^N = {states} exceeds the cap {cap}")]
    StateSpaceTooLarge { states: f64, cap: usize },
    #[error("initial law covers {got} vertices, system has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("master equation integration failed: {0}")]
    Ode(#[from] OdeError),
}

/// `|S|^N`, or an error when above `cap`.
pub fn configuration_count(system: &RateSystem, cap: usize) -> Result<usize, OracleError> {
    let states = (system.n_states() as f64).powi(system.n_vertices() as i32);
    if states > cap as f64 {
        return Err(OracleError::StateSpaceTooLarge { states, cap });
    }
    Ok(system.n_states().pow(system.n_vertices() as u32))
}

pub fn encode(sigma: &[u16], n_states: usize) -> usize {
    sigma.iter().rev().fold(0, |acc, &s| acc * n_states + s as usize)
}

pub fn decode(mut c: usize, n_vertices: usize, n_states: usize) -> Vec<u16> {
    (0..n_vertices)
        .map(|_| {
            let s = c % n_states;
            c /= n_states;
            s as u16
        })
        .collect()
}

/// Generator `Q` of the configuration chain: off-diagonal `Q[c][c']` is the
/// total rate of rules mapping `c` to `c'`, and each diagonal entry is minus
/// its row's off-diagonal sum.
#[derive(Debug, Clone)]
pub struct Generator {
    pub n_vertices: usize,
    pub n_states: usize,
    pub q: CsrMatrix,
}

pub fn build_generator(system: &RateSystem) -> Result<Generator, OracleError> {
    build_generator_capped(system, ORACLE_STATE_CAP)
}

pub fn build_generator_capped(system: &RateSystem, cap: usize) -> Result<Generator, OracleError> {
    let size = configuration_count(system, cap)?;
    let (n, ns) = (system.n_vertices(), system.n_states());
    let pow: Vec<usize> = (0..n).map(|v| ns.pow(v as u32)).collect();
    let mut row_ptr = Vec::with_capacity(size + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut sigma = vec![0u16; n];
    let mut row: Vec<(usize, f64)> = Vec::new();
    for c in 0..size {
        row.clear();
        let mut out = 0.0;
        for r in system.rules() {
            if r.matches(&sigma) {
                let image = c + r.to * pow[r.target] - r.from * pow[r.target];
                row.push((image, r.rate));
                out += r.rate;
            }
        }
        row.push((c, -out));
        row.sort_unstable_by_key(|e| e.0);
        let mut k = 0;
        while k < row.len() {
            let (col, mut v) = row[k];
            k += 1;
            while k < row.len() && row[k].0 == col {
                v += row[k].1;
                k += 1;
            }
            cols.push(col as u32);
            vals.push(v);
        }
        row_ptr.push(cols.len());
        increment(&mut sigma, ns);
    }
    Ok(Generator { n_vertices: n, n_states: ns, q: CsrMatrix::from_parts(size, row_ptr, cols, vals) })
}

fn increment(sigma: &mut [u16], ns: usize) {
    for s in sigma.iter_mut() {
        *s += 1;
        if (*s as usize) < ns {
            return;
        }
        *s = 0;
    }
}

/// Product initial distribution over configurations.
pub fn product_distribution(law: &InitialLaw) -> Vec<f64> {
    let ns = law.n_states();
    let mut p = vec![1.0];
    for v in 0..law.n_vertices() {
        let mut next = vec![0.0; p.len() * ns];
        for s in 0..ns {
            let w = law.prob(v, s);
            let off = s * p.len();
            for (c, &x) in p.iter().enumerate() {
                next[off + c] = x * w;
            }
        }
        p = next;
    }
    p
}

/// Joint laws `p(t)` on a time grid.
#[derive(Debug, Clone)]
pub struct MasterSolution {
    pub n_vertices: usize,
    pub n_states: usize,
    pub grid: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    /// Largest `|Σ_c p_c(t) − 1|` over the grid.
    pub mass_drift: f64,
    /// Most negative probability over the grid (0 if none).
    pub min_entry: f64,
}

impl MasterSolution {
    /// Flat marginals `y[i * |S| + s]` at grid index `k`.
    pub fn marginals(&self, k: usize) -> Vec<f64> {
        let (n, ns) = (self.n_vertices, self.n_states);
        let mut y = vec![0.0; n * ns];
        let mut sigma = vec![0u16; n];
        for &pc in &self.p[k] {
            for (v, &s) in sigma.iter().enumerate() {
                y[v * ns + s as usize] += pc;
            }
            increment(&mut sigma, ns);
        }
        y
    }

    /// `P(σ_i = s, σ_j = s')` at grid index `k`.
    pub fn pair_probability(&self, k: usize, i: usize, s: usize, j: usize, s2: usize) -> f64 {
        let ns = self.n_states;
        let (pi, pj) = (ns.pow(i as u32), ns.pow(j as u32));
        self.p[k].iter().enumerate().filter(|&(c, _)| (c / pi) % ns == s && (c / pj) % ns == s2).map(|(_, &x)| x).sum()
    }

    /// `Cov(ξ_{i,s}, ξ_{j,s'})` at grid index `k`.
    pub fn covariance(&self, k: usize, i: usize, s: usize, j: usize, s2: usize) -> f64 {
        let y = self.marginals(k);
        let ns = self.n_states;
        self.pair_probability(k, i, s, j, s2) - y[i * ns + s] * y[j * ns + s2]
    }
}

/// Tolerances tight enough that the oracle error is negligible next to 1e-8.
pub fn oracle_solver() -> Dopri45 {
    Dopri45::with_tolerances(1e-11, 1e-14)
}

pub fn solve_master(system: &RateSystem, law: &InitialLaw, grid: &[f64]) -> Result<MasterSolution, OracleError> {
    let generator = build_generator(system)?;
    solve_with(&generator, law, grid, &oracle_solver())
}

pub fn solve_with(
    gen: &Generator,
    law: &InitialLaw,
    grid: &[f64],
    solver: &Dopri45,
) -> Result<MasterSolution, OracleError> {
    if law.n_vertices() != gen.n_vertices {
        return Err(OracleError::DimensionMismatch { expected: gen.n_vertices, got: law.n_vertices() });
    }
    let p0 = product_distribution(law);
    let qt = gen.q.transpose();
    let (p, _) = solver.integrate(|_, p, dp| qt.mul_vec(p, dp), 0.0, &p0, grid, |_, _| Ok(false))?;
    let mass_drift = p.iter().map(|x| (x.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let min_entry = p.iter().flatten().copied().fold(0.0, f64::min);
    Ok(MasterSolution {
        n_vertices: gen.n_vertices,
        n_states: gen.n_states,
        grid: grid.to_vec(),
        p,
        mass_drift,
        min_entry,
    })
}

/// Exact `y_{i,s}(t)` on a grid, flat per grid point.
pub fn exact_marginals(system: &RateSystem, law: &InitialLaw, grid: &[f64]) -> Result<Vec<Vec<f64>>, OracleError> {
    let sol = solve_master(system, law, grid)?;
    Ok((0..grid.len()).map(|k| sol.marginals(k)).collect())
}

pub fn exact_covariance(
    system: &RateSystem,
    law: &InitialLaw,
    i: usize,
    j: usize,
    s: usize,
    s2: usize,
    t: f64,
) -> Result<f64, OracleError> {
    Ok(solve_master(system, law, &[t])?.covariance(0, i, s, j, s2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::WeightMap;
    use crate::models::{build_linf_counterexample, build_sis, CE_SUSCEPTIBLE};
    use crate::rates::{build_rate_system, InteractionRule, StateSpace};
    use approx::assert_relative_eq;

    fn two_cycle(beta: f64) -> CsrMatrix {
        CsrMatrix::from_dense(&[vec![0.0, beta], vec![beta, 0.0]])
    }

    #[test]
    fn encoding_is_little_endian() {
        assert_eq!(encode(&[1, 0, 2], 3), 1 + 2 * 9);
        assert_eq!(decode(19, 3, 3), vec![1, 0, 2]);
    }

    #[test]
    fn single_vertex_generator() {
        let sys = build_sis(&CsrMatrix::zeros(1), &[0.7]).unwrap();
        let g = build_generator(&sys).unwrap();
        assert_eq!(g.q.to_dense(), vec![vec![0.0, 0.0], vec![0.7, -0.7]]);
    }

    #[test]
    fn two_vertex_si_generator_has_absorbing_rows() {
        let sys = build_sis(&two_cycle(1.5), &[0.0, 0.0]).unwrap();
        let q = build_generator(&sys).unwrap().q.to_dense();
        // configurations: 0 = (S,S), 1 = (I,S), 2 = (S,I), 3 = (I,I)
        assert!(q[0].iter().all(|&x| x == 0.0));
        assert!(q[3].iter().all(|&x| x == 0.0));
        assert_eq!(q[1], vec![0.0, -1.5, 0.0, 1.5]);
        for row in &q {
            assert_eq!(row.iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn unreachable_rules_still_enter_the_generator() {
        let space = StateSpace::new(["a", "b", "c"]).unwrap();
        let sys = build_rate_system(space, 2, [InteractionRule::pair(0, 2, 1, 0, 1, 1.0)]).unwrap();
        let q = build_generator(&sys).unwrap().q;
        // (c, a) -> (c, b): codes 2 -> 5
        assert_eq!(q.get(2, 5), 1.0);
    }

    #[test]
    fn cap_is_enforced() {
        let sys = build_sis(&CsrMatrix::zeros(21), &[0.0; 21]).unwrap();
        assert!(matches!(build_generator(&sys), Err(OracleError::StateSpaceTooLarge { .. })));
    }

    #[test]
    fn two_vertex_si_closed_form() {
        let (beta, p) = (1.0, 0.5);
        let sys = build_sis(&two_cycle(beta), &[0.0, 0.0]).unwrap();
        let law = InitialLaw::bernoulli(2, 2, 1, 0, p).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0];
        let sol = solve_master(&sys, &law, &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let y = sol.marginals(k);
            assert_relative_eq!(y[1], p + (1.0 - p) * p * (1.0 - (-beta * t).exp()), epsilon = 1e-9);
        }
        assert!(sol.mass_drift < 1e-10);
        assert!(sol.covariance(0, 0, 1, 1, 1).abs() < 1e-12);
        let y = sol.marginals(2)[1];
        assert_relative_eq!(sol.covariance(2, 0, 1, 0, 1), y * (1.0 - y), epsilon = 1e-10);
    }

    #[test]
    fn counterexample_oracle_closed_form() {
        let r = CsrMatrix::from_dense(&[vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let ce = build_linf_counterexample(&WeightMap::from_pair_matrix(&r)).unwrap();
        let y = exact_marginals(&ce.system, &ce.law, &[1.0]).unwrap();
        let expect = 0.5 * (-ce.rtilde_max).exp() + 0.5;
        assert_relative_eq!(y[0][ce.target * 3 + CE_SUSCEPTIBLE], expect, epsilon = 1e-9);
    }
}
