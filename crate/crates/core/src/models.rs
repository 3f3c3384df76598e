//! Builders for the concrete models: SIS and its simplicial extension, SAIS,
//! edge-flip processes, joint vertex+edge dynamics, and the ℓ∞ counterexample.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generators::WeightMap;
use crate::rates::{RateError, RateSystem, RuleSetBuilder, StateSpace};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("negative or non-finite rate {0}")]
    NegativeRate(f64),
    #[error("expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("flip process needs {hyperedges} hyperedges, above the cap of {cap}")]
    TooLarge { hyperedges: usize, cap: usize },
    #[error("invalid model parameters: {0}")]
    Invalid(String),
    #[error("invalid initial law: {0}")]
    InvalidLaw(String),
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// Independent per-vertex categorical distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialLaw {
    n_states: usize,
    probs: Vec<f64>,
}

impl InitialLaw {
    /// `rows[i][s]` is the probability that vertex `i` starts in state `s`.
    pub fn new(n_states: usize, rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let mut probs = Vec::with_capacity(rows.len() * n_states);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_states {
                return Err(ModelError::InvalidLaw(format!(
                    "vertex {i} has {} entries, expected {n_states}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| p.is_nan() || p < 0.0) {
                return Err(ModelError::InvalidLaw(format!("vertex {i} has a negative probability")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(ModelError::InvalidLaw(format!("vertex {i} sums to {sum}")));
            }
            probs.extend_from_slice(row);
        }
        Ok(Self { n_states, probs })
    }

    pub fn deterministic(n_states: usize, config: &[usize]) -> Self {
        let mut probs = vec![0.0; config.len() * n_states];
        for (i, &s) in config.iter().enumerate() {
            assert!(s < n_states);
            probs[i * n_states + s] = 1.0;
        }
        Self { n_states, probs }
    }

    /// Every vertex independently in `on` with probability `p`, else `off`.
    pub fn bernoulli(n: usize, n_states: usize, on: usize, off: usize, p: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::InvalidLaw(format!("probability {p} outside [0,1]")));
        }
        let mut probs = vec![0.0; n * n_states];
        for i in 0..n {
            probs[i * n_states + on] += p;
            probs[i * n_states + off] += 1.0 - p;
        }
        Ok(Self { n_states, probs })
    }

    pub fn n_vertices(&self) -> usize {
        self.probs.len().checked_div(self.n_states).unwrap_or(0)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn prob(&self, i: usize, s: usize) -> f64 {
        self.probs[i * self.n_states + s]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_states..(i + 1) * self.n_states]
    }

    /// Flat `[i * |S| + s]` marginals, the NIMFA initial condition.
    pub fn marginals(&self) -> &[f64] {
        &self.probs
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        assert_eq!(row.len(), self.n_states);
        self.probs[i * self.n_states..(i + 1) * self.n_states].copy_from_slice(row);
    }

    pub fn sample_vertex<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> u16 {
        let row = self.row(i);
        if let Some(s) = row.iter().position(|&p| p == 1.0) {
            return s as u16;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (s, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return s as u16;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u16
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u16> {
        (0..self.n_vertices()).map(|i| self.sample_vertex(i, rng)).collect()
    }
}

fn check_rate(r: f64) -> Result<(), ModelError> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NegativeRate(r))
    }
}

pub const SUSCEPTIBLE: usize = 0;
pub const INFECTED: usize = 1;

fn si_space() -> StateSpace {
    StateSpace::new(["S", "I"]).expect("static state space")
}

/// SIS with pair rates `R_{ji}` (row `j` infects column `i`) and per-vertex recovery.
pub fn build_sis(r: &CsrMatrix, recovery: &[f64]) -> Result<RateSystem, ModelError> {
    build_simplicial_sis(&WeightMap::from_pair_matrix(r), recovery)
}

/// Simplicial SIS: a base infects its target when every base vertex is infected.
pub fn build_simplicial_sis(weights: &WeightMap, recovery: &[f64]) -> Result<RateSystem, ModelError> {
    let n = weights.n;
    if recovery.len() != n {
        return Err(ModelError::DimensionMismatch { expected: n, got: recovery.len() });
    }
    let mut b = RuleSetBuilder::new(n, 2);
    let mut states = Vec::new();
    for e in &weights.entries {
        check_rate(e.weight)?;
        states.clear();
        states.resize(e.base.len(), INFECTED);
        let mut base = e.base.clone();
        base.sort_unstable();
        b.push(&base, e.target, &states, SUSCEPTIBLE, INFECTED, e.weight)?;
    }
    for (i, &g) in recovery.iter().enumerate() {
        check_rate(g)?;
        b.push(&[], i, &[], INFECTED, SUSCEPTIBLE, g)?;
    }
    Ok(b.build(si_space())?)
}

pub const ALERT: usize = 1;
pub const SAIS_INFECTED: usize = 2;

/// SAIS on a physical layer `w1` and an information layer `w2`.
pub fn build_sais(
    w1: &CsrMatrix,
    w2: &CsrMatrix,
    beta_s: f64,
    beta_a: f64,
    kappa: f64,
    gamma: f64,
) -> Result<RateSystem, ModelError> {
    if w1.n() != w2.n() {
        return Err(ModelError::DimensionMismatch { expected: w1.n(), got: w2.n() });
    }
    for r in [beta_s, beta_a, kappa, gamma] {
        check_rate(r)?;
    }
    if beta_a >= beta_s {
        log::warn!("SAIS with beta_A = {beta_a} >= beta_S = {beta_s}: alertness does not reduce infection");
    }
    let (s, a, i) = (SUSCEPTIBLE, ALERT, SAIS_INFECTED);
    let inf = [i];
    let n = w1.n();
    let mut b = RuleSetBuilder::new(n, 3);
    for (j, t, w) in w1.triplets() {
        check_rate(w)?;
        b.push(&[j], t, &inf, s, i, beta_s * w)?;
        b.push(&[j], t, &inf, a, i, beta_a * w)?;
    }
    for (j, t, w) in w2.triplets() {
        check_rate(w)?;
        b.push(&[j], t, &inf, s, a, kappa * w)?;
    }
    for v in 0..n {
        b.push(&[], v, &[], i, s, gamma)?;
    }
    Ok(b.build(StateSpace::new(["S", "A", "I"]).expect("static state space"))?)
}

/// Index of the edge agent `{a, b}` among the `C(n, 2)` edges, ordered
/// lexicographically by `(min, max)`.
pub fn edge_index(n: usize, a: usize, b: usize) -> usize {
    let (a, b) = (a.min(b), a.max(b));
    debug_assert!(a != b && b < n);
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// Inverse of [`edge_index`].
pub fn edge_endpoints(n: usize, mut idx: usize) -> (usize, usize) {
    for a in 0..n {
        let row = n - a - 1;
        if idx < row {
            return (a, a + 1 + idx);
        }
        idx -= row;
    }
    panic!("edge index out of range");
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// One label of a flip kernel: when the other edges of a clique are in
/// `base_states` (in sorted agent order), the target flips `from -> to` at `rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipLabel {
    pub base_states: Vec<usize>,
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipKernel {
    pub labels: Vec<FlipLabel>,
}

pub const EDGE_ABSENT: usize = 0;
pub const EDGE_PRESENT: usize = 1;

impl FlipKernel {
    /// Modified triangle removal: a present edge of a full triangle is removed at rate 1.
    pub fn triangle_removal() -> Self {
        Self {
            labels: vec![FlipLabel {
                base_states: vec![EDGE_PRESENT; 2],
                from: EDGE_PRESENT,
                to: EDGE_ABSENT,
                rate: 1.0,
            }],
        }
    }
}

/// Default hyperedge cap of the flip builder, sized for 60 vertices and triangles.
pub const FLIP_HYPEREDGE_CAP: usize = 34_220 * 3;

pub fn build_triangle_flip(
    n_vertices: usize,
    clique_size: usize,
    kernel: &FlipKernel,
) -> Result<RateSystem, ModelError> {
    build_triangle_flip_capped(n_vertices, clique_size, kernel, FLIP_HYPEREDGE_CAP)
}

/// Edge-flip process: agents are the `C(N, 2)` edges (states `0`, `1`); every
/// `K_n` of the vertex set contributes, for each of its edges, a hyperedge
/// whose base is the clique's other edges.
pub fn build_triangle_flip_capped(
    n_vertices: usize,
    clique_size: usize,
    kernel: &FlipKernel,
    cap: usize,
) -> Result<RateSystem, ModelError> {
    let n = n_vertices;
    let k = clique_size;
    if k < 2 || k > n {
        return Err(ModelError::Invalid(format!("clique size {k} must lie in 2..={n}")));
    }
    let edges_per_clique = k * (k - 1) / 2;
    for l in &kernel.labels {
        check_rate(l.rate)?;
        if l.base_states.len() != edges_per_clique - 1 {
            return Err(ModelError::Invalid(format!(
                "kernel label has {} base states, cliques of size {k} need {}",
                l.base_states.len(),
                edges_per_clique - 1
            )));
        }
    }
    let hyperedges = binomial(n, k) * edges_per_clique as f64;
    if hyperedges > cap as f64 {
        return Err(ModelError::TooLarge { hyperedges: hyperedges.min(usize::MAX as f64) as usize, cap });
    }
    let scale = 1.0 / binomial(n - 2, k - 2);
    let agents = n * (n - 1) / 2;
    let mut b = RuleSetBuilder::with_capacity(
        agents,
        2,
        hyperedges as usize * kernel.labels.len(),
        hyperedges as usize * kernel.labels.len() * (edges_per_clique - 1),
    );
    let mut clique: Vec<usize> = (0..k).collect();
    let mut clique_edges = Vec::with_capacity(edges_per_clique);
    let mut base = Vec::with_capacity(edges_per_clique);
    loop {
        clique_edges.clear();
        for x in 0..k {
            for y in x + 1..k {
                clique_edges.push(edge_index(n, clique[x], clique[y]));
            }
        }
        clique_edges.sort_unstable();
        for &target in &clique_edges {
            base.clear();
            base.extend(clique_edges.iter().copied().filter(|&e| e != target));
            for l in &kernel.labels {
                b.push(&base, target, &l.base_states, l.from, l.to, l.rate * scale)?;
            }
        }
        if !next_combination(&mut clique, n) {
            break;
        }
    }
    Ok(b.build(StateSpace::new(["0", "1"]).expect("static state space"))?)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut p = k;
    while p > 0 {
        p -= 1;
        if c[p] < n - k + p {
            c[p] += 1;
            for q in p + 1..k {
                c[q] = c[q - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub const JOINT_S: usize = 0;
pub const JOINT_I: usize = 1;
pub const JOINT_PRESENT: usize = 2;
pub const JOINT_ABSENT: usize = 3;

/// Agent index of edge `{a, b}` in [`build_joint_si_flip`]: vertices come first.
pub fn joint_edge_agent(n: usize, a: usize, b: usize) -> usize {
    n + edge_index(n, a, b)
}

/// SI spreading along present edges, with triangle removal acting on the
/// edges. Agents are the `N` vertices followed by the `C(N, 2)` edges.
pub fn build_joint_si_flip(n_vertices: usize) -> Result<RateSystem, ModelError> {
    let n = n_vertices;
    if n < 3 {
        return Err(ModelError::Invalid(format!("joint dynamics needs at least 3 vertices, got {n}")));
    }
    let agents = n + n * (n - 1) / 2;
    let mut b = RuleSetBuilder::with_capacity(agents, 4, n * (n - 1) + n * (n - 1) * (n - 2) / 2, 0);
    let infect = 1.0 / (n - 1) as f64;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let e = joint_edge_agent(n, i, j);
            b.push(&[j, e], i, &[JOINT_I, JOINT_PRESENT], JOINT_S, JOINT_I, infect)?;
        }
    }
    let remove = 1.0 / (n - 2) as f64;
    let present = [JOINT_PRESENT; 2];
    for i in 0..n {
        for j in i + 1..n {
            let target = joint_edge_agent(n, i, j);
            for k in (0..n).filter(|&k| k != i && k != j) {
                let mut base = [joint_edge_agent(n, i, k), joint_edge_agent(n, j, k)];
                base.sort_unstable();
                b.push(&base, target, &present, JOINT_PRESENT, JOINT_ABSENT, remove)?;
            }
        }
    }
    Ok(b.build(StateSpace::new(["S", "I", "1", "0"]).expect("static state space"))?)
}

pub const STAR: usize = 0;
pub const CE_SUSCEPTIBLE: usize = 1;
pub const CE_INFECTED: usize = 2;

/// Output of [`build_linf_counterexample`].
#[derive(Debug, Clone)]
pub struct LinfCounterexample {
    pub system: RateSystem,
    pub law: InitialLaw,
    /// Vertex in the special state with probability ½.
    pub source: usize,
    /// Vertex whose marginal separates from NIMFA.
    pub target: usize,
    pub rtilde_max: f64,
}

/// For total rates `r̄` with maximal `r̃_{ji}`: `j` starts in `⋆` or `I` with
/// probability ½, `i` starts `S`, everyone else `I`; a base infects its
/// target when it holds exactly one `⋆` (at `j` when `j` is in the base) and
/// is otherwise infected.
pub fn build_linf_counterexample(rbar: &WeightMap) -> Result<LinfCounterexample, ModelError> {
    let n = rbar.n;
    let mut b = RuleSetBuilder::new(n, 3);
    let mut rt = std::collections::HashMap::<(usize, usize), f64>::new();
    for e in &rbar.entries {
        check_rate(e.weight)?;
        for &j in &e.base {
            *rt.entry((j, e.target)).or_insert(0.0) += e.weight;
        }
    }
    let (&(j, i), &rmax) = rt
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .ok_or_else(|| ModelError::Invalid("rate family has no interactions".into()))?;
    let mut states = Vec::new();
    for e in &rbar.entries {
        let mut base = e.base.clone();
        base.sort_unstable();
        let star_at = base.iter().position(|&k| k == j).unwrap_or(0);
        states.clear();
        states.extend((0..base.len()).map(|p| if p == star_at { STAR } else { CE_INFECTED }));
        b.push(&base, e.target, &states, CE_SUSCEPTIBLE, CE_INFECTED, e.weight)?;
    }
    let system = b.build(StateSpace::new(["*", "S", "I"]).expect("static state space"))?;
    let mut rows = vec![vec![0.0, 0.0, 1.0]; n];
    rows[i] = vec![0.0, 1.0, 0.0];
    rows[j] = vec![0.5, 0.0, 0.5];
    let law = InitialLaw::new(3, rows)?;
    Ok(LinfCounterexample { system, law, source: j, target: i, rtilde_max: rmax })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{Adjacency, WeightedHyperedge};
    use crate::ruleset::write_rule_set;

    fn two_cycle(beta: f64) -> CsrMatrix {
        CsrMatrix::from_dense(&[vec![0.0, beta], vec![beta, 0.0]])
    }

    #[test]
    fn initial_law_validation() {
        assert!(InitialLaw::new(2, vec![vec![0.5, 0.6]]).is_err());
        assert!(InitialLaw::new(2, vec![vec![-0.1, 1.1]]).is_err());
        let law = InitialLaw::bernoulli(3, 2, 1, 0, 0.25).unwrap();
        assert_eq!(law.prob(2, 1), 0.25);
        assert_eq!(law.marginals().len(), 6);
    }

    #[test]
    fn sis_rates_round_trip() {
        let r = CsrMatrix::from_dense(&[vec![0.0, 0.3, 0.0], vec![0.1, 0.0, 0.7], vec![0.0, 0.2, 0.0]]);
        let sys = build_sis(&r, &[1.0, 0.5, 0.0]).unwrap();
        for (j, i, w) in r.triplets() {
            assert_eq!(sys.influence(j, i), w);
        }
        assert_eq!(sys.delta(0, 1), 0.5);
        assert_eq!(sys.delta(0, 2), 0.0);
        assert!(matches!(build_sis(&two_cycle(-1.0), &[0.0, 0.0]), Err(ModelError::NegativeRate(_))));
    }

    #[test]
    fn simplicial_reduces_to_sis() {
        let r = two_cycle(0.4);
        let a = build_sis(&r, &[0.2, 0.3]).unwrap();
        let b = build_simplicial_sis(&WeightMap::from_pair_matrix(&r), &[0.2, 0.3]).unwrap();
        assert_eq!(write_rule_set(&a), write_rule_set(&b));
    }

    #[test]
    fn sais_delta_from_layers() {
        // star centre 0 on layer 1, nothing on layer 2
        let w1 = CsrMatrix::from_triplets(4, (1..4).map(|i| (0, i, 1.0)).chain((1..4).map(|i| (i, 0, 1.0))).collect());
        let sys = build_sais(&w1, &CsrMatrix::zeros(4), 2.0, 0.5, 0.0, 1.0).unwrap();
        // channel r̄ = βS + βA per edge
        assert_eq!(sys.delta(1, 0), 3.0 * 2.5);
        assert_eq!(sys.delta_max(), 7.5);
    }

    #[test]
    fn edge_indexing_round_trips() {
        let n = 7;
        let mut k = 0;
        for a in 0..n {
            for b in a + 1..n {
                assert_eq!(edge_index(n, a, b), k);
                assert_eq!(edge_index(n, b, a), k);
                assert_eq!(edge_endpoints(n, k), (a, b));
                k += 1;
            }
        }
    }

    #[test]
    fn triangle_flip_structure() {
        let n = 5;
        let sys = build_triangle_flip(n, 3, &FlipKernel::triangle_removal()).unwrap();
        assert_eq!(sys.n_vertices(), 10);
        for e in 0..10 {
            assert_eq!(sys.channels_targeting(e).len(), 3);
            assert!((sys.delta(2, e) - 1.0).abs() < 1e-15);
        }
        // edges {0,1} and {0,2} share vertex 0: one common triangle
        let shared = sys.influence(edge_index(n, 0, 1), edge_index(n, 0, 2));
        assert!((shared - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(sys.influence(edge_index(n, 0, 1), edge_index(n, 2, 3)), 0.0);
        assert!(matches!(
            build_triangle_flip_capped(10, 3, &FlipKernel::triangle_removal(), 100),
            Err(ModelError::TooLarge { hyperedges: 360, cap: 100 })
        ));
    }

    #[test]
    fn joint_model_constants() {
        for n in [3, 5, 8] {
            let sys = build_joint_si_flip(n).unwrap();
            assert!((sys.delta_max() - 1.0).abs() < 1e-14);
            assert!((influence_max_of(&sys) - 1.0 / (n - 2) as f64).abs() < 1e-14);
            for r in sys.rules() {
                if r.target >= n {
                    assert!(r.base.iter().all(|&b| b as usize >= n));
                }
            }
        }
        let sys = build_joint_si_flip(3).unwrap();
        for e in 0..3 {
            let cs = sys.channels_targeting(3 + e);
            assert_eq!(cs.len(), 1);
        }
    }

    fn influence_max_of(sys: &RateSystem) -> f64 {
        crate::rates::influence_max(sys)
    }

    #[test]
    fn counterexample_construction() {
        let g = Adjacency::from_edges(3, false, [(0, 1), (1, 2)]);
        let mut w = WeightMap::scaled(&g, 1.0);
        w.entries.push(WeightedHyperedge { base: vec![0, 2], target: 1, weight: 0.5 });
        let ce = build_linf_counterexample(&w).unwrap();
        assert_eq!(ce.rtilde_max, 1.5);
        assert_eq!(ce.target, 1);
        assert_eq!(influence_max_of(&ce.system), 1.5);
        assert_eq!(ce.law.prob(ce.source, STAR), 0.5);
        assert_eq!(ce.law.prob(ce.target, CE_SUSCEPTIBLE), 1.0);
    }
}
