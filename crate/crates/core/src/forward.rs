//! Exact event-driven simulation of the forward construction and the Monte
//! Carlo estimators built on it.
//!
//! Every rule carries its own Poisson clock at its full rate. The
//! superposition of all clocks is a single clock of rate `Λ = Σ rates`; at
//! each ring one rule is drawn with probability `rate / Λ` and applied only
//! if its base and target states match the current configuration. Rings that
//! do not match are phantom events.

use std::fmt::Write as _;

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::InitialLaw;
use crate::nimfa::fmt17;
use crate::rates::RateSystem;
use crate::rng::{self, SimRng};
use crate::stats::{binomial_report, mean_report, replicate, replicate_counts, variance_report, EstimatorReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error("subset is empty")]
    EmptySubset,
    #[error("motif with {k} vertices exceeds the cap of {cap}")]
    MotifTooLarge { k: usize, cap: usize },
    #[error("initial law covers {got} vertices, system has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {0} replicas")]
    TooFewReplicas(usize),
}

/// Precomputed sampler for one system; cheap to share across threads.
pub struct ForwardSimulator<'a> {
    system: &'a RateSystem,
    total_rate: f64,
    alias: Option<WeightedAliasIndex<f64>>,
    rules: Vec<CompactRule>,
    bases: Vec<(u32, u16)>,
}

#[derive(Debug, Clone, Copy)]
struct CompactRule {
    target: u32,
    from: u16,
    to: u16,
    base_start: u32,
    base_end: u32,
}

impl<'a> ForwardSimulator<'a> {
    pub fn new(system: &'a RateSystem) -> Self {
        let mut rules = Vec::with_capacity(system.rule_count());
        let mut bases = Vec::new();
        let mut weights = Vec::with_capacity(system.rule_count());
        for r in system.rules() {
            let start = bases.len() as u32;
            bases.extend(r.base.iter().zip(r.base_states).map(|(&j, &s)| (j, s)));
            rules.push(CompactRule {
                target: r.target as u32,
                from: r.from as u16,
                to: r.to as u16,
                base_start: start,
                base_end: bases.len() as u32,
            });
            weights.push(r.rate);
        }
        let total_rate: f64 = weights.iter().sum();
        let alias = if total_rate > 0.0 {
            Some(WeightedAliasIndex::new(weights).expect("positive finite rates"))
        } else {
            None
        };
        Self { system, total_rate, alias, rules, bases }
    }

    pub fn system(&self) -> &RateSystem {
        self.system
    }

    /// Rate of the superposed clock.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    #[inline]
    fn try_apply(&self, id: usize, sigma: &mut [u16]) -> bool {
        let r = self.rules[id];
        if sigma[r.target as usize] != r.from {
            return false;
        }
        if self.bases[r.base_start as usize..r.base_end as usize].iter().all(|&(j, s)| sigma[j as usize] == s) {
            sigma[r.target as usize] = r.to;
            true
        } else {
            false
        }
    }

    /// Runs from `sigma` up to `t_end`, calling `on_event(time, rule, applied, sigma)`
    /// after every ring.
    pub fn run<F>(&self, sigma: &mut [u16], t_end: f64, rng: &mut SimRng, mut on_event: F)
    where
        F: FnMut(f64, usize, bool, &[u16]),
    {
        let Some(alias) = &self.alias else { return };
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / self.total_rate;
            if t > t_end {
                return;
            }
            let id = alias.sample(rng);
            let applied = self.try_apply(id, sigma);
            on_event(t, id, applied, sigma);
        }
    }

    /// Runs up to the last grid time and calls `observe(k, sigma)` with the
    /// configuration at each grid time `grid[k]`.
    pub fn run_on_grid<F>(&self, sigma: &mut [u16], grid: &[f64], rng: &mut SimRng, mut observe: F)
    where
        F: FnMut(usize, &[u16]),
    {
        let mut k = 0;
        while k < grid.len() && grid[k] <= 0.0 {
            observe(k, sigma);
            k += 1;
        }
        if k == grid.len() {
            return;
        }
        let Some(alias) = &self.alias else {
            (k..grid.len()).for_each(|k| observe(k, sigma));
            return;
        };
        let t_end = grid[grid.len() - 1];
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / self.total_rate;
            while k < grid.len() && grid[k] < t {
                observe(k, sigma);
                k += 1;
            }
            if t > t_end {
                return;
            }
            let id = alias.sample(rng);
            self.try_apply(id, sigma);
        }
    }

    /// Draws an initial configuration and evolves it to `t`.
    pub fn sample_at(&self, law: &InitialLaw, t: f64, rng: &mut SimRng) -> Vec<u16> {
        let mut sigma = law.sample(rng);
        self.run(&mut sigma, t, rng, |_, _, _, _| {});
        sigma
    }
}

/// One ring of the superposed clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub rule: u32,
    pub applied: bool,
}

/// Initial configuration plus the chronological event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: Vec<u16>,
    pub events: Vec<Event>,
    pub horizon: f64,
}

impl Trajectory {
    /// Configuration at time `t ≤ horizon` (events at exactly `t` included).
    pub fn state_at(&self, system: &RateSystem, t: f64) -> Vec<u16> {
        let upto = self.events.partition_point(|e| e.time <= t);
        let mut sigma = self.initial.clone();
        for e in self.events[..upto].iter().filter(|e| e.applied) {
            let r = system.rule(e.rule as usize);
            sigma[r.target] = r.to as u16;
        }
        sigma
    }

    pub fn final_state(&self, system: &RateSystem) -> Vec<u16> {
        self.state_at(system, self.horizon)
    }
}

pub fn simulate_forward(system: &RateSystem, law: &InitialLaw, t_end: f64, seed: u64) -> Trajectory {
    simulate_forward_with(system, law, t_end, seed, false)
}

/// As [`simulate_forward`]; `keep_phantoms` also logs rings that did not apply.
pub fn simulate_forward_with(
    system: &RateSystem,
    law: &InitialLaw,
    t_end: f64,
    seed: u64,
    keep_phantoms: bool,
) -> Trajectory {
    assert!(t_end >= 0.0, "t_end must be nonnegative");
    let sim = ForwardSimulator::new(system);
    let mut rng = rng::stream(seed);
    let initial = law.sample(&mut rng);
    let mut sigma = initial.clone();
    let mut events = Vec::new();
    sim.run(&mut sigma, t_end, &mut rng, |time, rule, applied, _| {
        if applied || keep_phantoms {
            events.push(Event { time, rule: rule as u32, applied });
        }
    });
    Trajectory { initial, events, horizon: t_end }
}

/// Estimated `ŷ_{i,s}(t)` for every vertex, state and grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimates {
    pub n_vertices: usize,
    pub n_states: usize,
    pub grid: Vec<f64>,
    pub reports: Vec<EstimatorReport>,
}

impl MarginalEstimates {
    pub fn get(&self, t_index: usize, i: usize, s: usize) -> &EstimatorReport {
        &self.reports[(t_index * self.n_vertices + i) * self.n_states + s]
    }

    /// Flat `[i * |S| + s]` point estimates at grid index `k`.
    pub fn values(&self, t_index: usize) -> Vec<f64> {
        let w = self.n_vertices * self.n_states;
        self.reports[t_index * w..(t_index + 1) * w].iter().map(|r| r.value).collect()
    }

    /// CSV rows `t,vertex,state,value,std_error,replicas,seed_base`.
    pub fn to_csv(&self, state_names: &[String]) -> String {
        let mut out = String::from("t,vertex,state,value,std_error,replicas,seed_base\n");
        for (k, &t) in self.grid.iter().enumerate() {
            for i in 0..self.n_vertices {
                for (s, name) in state_names.iter().enumerate() {
                    let r = self.get(k, i, s);
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        fmt17(t),
                        i,
                        name,
                        fmt17(r.value),
                        fmt17(r.std_error),
                        r.replicas,
                        r.seed_base
                    );
                }
            }
        }
        out
    }
}

fn check_law(system: &RateSystem, law: &InitialLaw) -> Result<(), ForwardError> {
    if law.n_vertices() != system.n_vertices() {
        return Err(ForwardError::DimensionMismatch { expected: system.n_vertices(), got: law.n_vertices() });
    }
    Ok(())
}

pub fn estimate_marginals(
    system: &RateSystem,
    law: &InitialLaw,
    grid: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<MarginalEstimates, ForwardError> {
    check_law(system, law)?;
    if replicas < 2 {
        return Err(ForwardError::TooFewReplicas(2));
    }
    let sim = ForwardSimulator::new(system);
    let (n, ns) = (system.n_vertices(), system.n_states());
    let width = n * ns;
    let counts = replicate_counts(replicas, seed, grid.len() * width, |_, rng, acc| {
        let mut sigma = law.sample(rng);
        sim.run_on_grid(&mut sigma, grid, rng, |k, s| {
            for (i, &st) in s.iter().enumerate() {
                acc[k * width + i * ns + st as usize] += 1;
            }
        });
    });
    let reports = counts.iter().map(|&c| binomial_report(c, replicas, seed)).collect();
    Ok(MarginalEstimates { n_vertices: n, n_states: ns, grid: grid.to_vec(), reports })
}

/// Fraction of `subset` in state `s` at `t`, one value per replica.
pub fn sample_subpop_fractions(
    system: &RateSystem,
    law: &InitialLaw,
    subset: &[usize],
    s: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<f64>, ForwardError> {
    check_law(system, law)?;
    if subset.is_empty() {
        return Err(ForwardError::EmptySubset);
    }
    let sim = ForwardSimulator::new(system);
    Ok(replicate(replicas, seed, |_, rng| {
        let sigma = sim.sample_at(law, t, rng);
        subset.iter().filter(|&&i| sigma[i] as usize == s).count() as f64 / subset.len() as f64
    }))
}

/// Sample variance of the subpopulation average `ξ̄^M_s(t)` across replicas.
pub fn estimate_subpop_variance(
    system: &RateSystem,
    law: &InitialLaw,
    subset: &[usize],
    s: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<EstimatorReport, ForwardError> {
    if replicas < 3 {
        return Err(ForwardError::TooFewReplicas(3));
    }
    let xs = sample_subpop_fractions(system, law, subset, s, t, replicas, seed)?;
    Ok(variance_report(&xs, seed))
}

/// Mean of the subpopulation average, from the same replicas as the variance.
pub fn estimate_subpop_mean(
    system: &RateSystem,
    law: &InitialLaw,
    subset: &[usize],
    s: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<EstimatorReport, ForwardError> {
    let xs = sample_subpop_fractions(system, law, subset, s, t, replicas, seed)?;
    Ok(mean_report(&xs, seed))
}

/// A small pattern graph on `k` vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub k: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Motif {
    pub fn edge() -> Self {
        Self { k: 2, edges: vec![(0, 1)] }
    }

    pub fn triangle() -> Self {
        Self { k: 3, edges: vec![(0, 1), (1, 2), (0, 2)] }
    }

    pub fn clique(k: usize) -> Self {
        Self { k, edges: (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect() }
    }
}

pub const MOTIF_EXACT_MAX: usize = 3;
pub const MOTIF_CAP: usize = 8;

/// Homomorphism density, exact or sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomDensity {
    pub value: f64,
    /// Zero for exact evaluations.
    pub std_error: f64,
    pub exact: bool,
}

/// Undirected simple graph as bitset rows.
#[derive(Debug, Clone)]
pub struct BitGraph {
    n: usize,
    words: usize,
    rows: Vec<u64>,
}

impl BitGraph {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        Self { n, words, rows: vec![0; n * words] }
    }

    /// Graph whose edges are the edge agents (in `edge_index` order) in state `present`.
    pub fn from_edge_states(n: usize, sigma: &[u16], present: u16) -> Self {
        assert_eq!(sigma.len(), n * (n - 1) / 2);
        let mut g = Self::new(n);
        let mut idx = 0;
        for a in 0..n {
            for b in a + 1..n {
                if sigma[idx] == present {
                    g.add(a, b);
                }
                idx += 1;
            }
        }
        g
    }

    pub fn add(&mut self, a: usize, b: usize) {
        self.rows[a * self.words + b / 64] |= 1 << (b % 64);
        self.rows[b * self.words + a / 64] |= 1 << (a % 64);
    }

    #[inline]
    pub fn has(&self, a: usize, b: usize) -> bool {
        self.rows[a * self.words + b / 64] >> (b % 64) & 1 == 1
    }

    fn row(&self, a: usize) -> &[u64] {
        &self.rows[a * self.words..(a + 1) * self.words]
    }
}

/// `t(H, G) = N^{-k} Σ_{φ: [k] → V} Π_{(a,b) ∈ H} A_{φ(a) φ(b)}`; exact for
/// `k ≤ 3`, otherwise estimated from `samples` uniform maps.
pub fn homomorphism_density(
    g: &BitGraph,
    motif: &Motif,
    samples: usize,
    seed: u64,
) -> Result<HomDensity, ForwardError> {
    let k = motif.k;
    if k > MOTIF_CAP {
        return Err(ForwardError::MotifTooLarge { k, cap: MOTIF_CAP });
    }
    let n = g.n;
    if k == 0 || n == 0 {
        return Ok(HomDensity { value: if motif.edges.is_empty() { 1.0 } else { 0.0 }, std_error: 0.0, exact: true });
    }
    if k <= MOTIF_EXACT_MAX {
        let last = k - 1;
        let last_nbrs: Vec<usize> = motif
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == last {
                    Some(b)
                } else if b == last {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        let inner: Vec<(usize, usize)> = motif.edges.iter().copied().filter(|&(a, b)| a != last && b != last).collect();
        let mut phi = vec![0usize; last];
        let mut total: u64 = 0;
        let mut buf = vec![0u64; g.words];
        loop {
            if inner.iter().all(|&(a, b)| g.has(phi[a], phi[b])) {
                if last_nbrs.is_empty() {
                    total += n as u64;
                } else {
                    buf.copy_from_slice(g.row(phi[last_nbrs[0]]));
                    for &m in &last_nbrs[1..] {
                        for (x, y) in buf.iter_mut().zip(g.row(phi[m])) {
                            *x &= y;
                        }
                    }
                    total += buf.iter().map(|w| w.count_ones() as u64).sum::<u64>();
                }
            }
            // odometer over the first k-1 images
            let mut p = 0;
            while p < last {
                phi[p] += 1;
                if phi[p] < n {
                    break;
                }
                phi[p] = 0;
                p += 1;
            }
            if p == last {
                break;
            }
        }
        return Ok(HomDensity { value: total as f64 / (n as f64).powi(k as i32), std_error: 0.0, exact: true });
    }
    let samples = samples.max(2);
    let mut rng = rng::stream(seed);
    let mut phi = vec![0usize; k];
    let mut hits = 0u64;
    for _ in 0..samples {
        phi.iter_mut().for_each(|x| *x = rng.random_range(0..n));
        if motif.edges.iter().all(|&(a, b)| g.has(phi[a], phi[b])) {
            hits += 1;
        }
    }
    let r = binomial_report(hits, samples, seed);
    Ok(HomDensity { value: r.value, std_error: r.std_error, exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_sis, build_triangle_flip, FlipKernel};
    use crate::oracle::{encode, solve_master};
    use crate::sparse::CsrMatrix;

    fn two_cycle(beta: f64) -> CsrMatrix {
        CsrMatrix::from_dense(&[vec![0.0, beta], vec![beta, 0.0]])
    }

    #[test]
    fn zero_rates_keep_the_initial_configuration() {
        let sys = build_sis(&CsrMatrix::zeros(3), &[0.0; 3]).unwrap();
        let law = InitialLaw::deterministic(2, &[1, 0, 1]);
        let tr = simulate_forward(&sys, &law, 10.0, 1);
        assert!(tr.events.is_empty());
        assert_eq!(tr.final_state(&sys), vec![1, 0, 1]);
    }

    #[test]
    fn trajectories_are_seed_deterministic_and_ordered() {
        let sys = build_sis(&two_cycle(1.0), &[0.5, 0.5]).unwrap();
        let law = InitialLaw::bernoulli(2, 2, 1, 0, 0.5).unwrap();
        let a = simulate_forward_with(&sys, &law, 5.0, 9, true);
        assert_eq!(a, simulate_forward_with(&sys, &law, 5.0, 9, true));
        assert!(a.events.windows(2).all(|w| w[0].time < w[1].time));
        let b = simulate_forward(&sys, &law, 5.0, 9);
        assert!(b.events.iter().all(|e| e.applied));
        assert_eq!(a.final_state(&sys), b.final_state(&sys));
        assert_eq!(a.state_at(&sys, 0.0), a.initial);
    }

    #[test]
    fn recovery_matches_exponential() {
        let g = 0.8;
        let sys = build_sis(&CsrMatrix::zeros(1), &[g]).unwrap();
        let law = InitialLaw::deterministic(2, &[1]);
        let est = estimate_marginals(&sys, &law, &[0.0, 0.5, 1.5], 100_000, 3).unwrap();
        for (k, t) in [0.0f64, 0.5, 1.5].into_iter().enumerate() {
            let r = est.get(k, 0, 1);
            assert!(r.within((-g * t).exp(), 4.0) || r.std_error == 0.0 && r.value == 1.0, "{r:?}");
        }
    }

    #[test]
    fn single_clock_infection() {
        let beta = 1.2;
        let r = CsrMatrix::from_dense(&[vec![0.0, beta], vec![0.0, 0.0]]);
        let sys = build_sis(&r, &[0.0, 0.0]).unwrap();
        let law = InitialLaw::deterministic(2, &[1, 0]);
        let est = estimate_marginals(&sys, &law, &[1.0], 100_000, 4).unwrap();
        assert!(est.get(0, 1, 1).within(1.0 - (-beta).exp(), 4.0));
        assert_eq!(est.get(0, 0, 1).value, 1.0);
    }

    #[test]
    fn joint_law_matches_oracle_in_total_variation() {
        let r = CsrMatrix::from_dense(&[vec![0.0, 0.7, 0.3], vec![0.5, 0.0, 0.9], vec![0.2, 0.4, 0.0]]);
        let sys = build_sis(&r, &[0.6, 0.3, 0.8]).unwrap();
        let law = InitialLaw::bernoulli(3, 2, 1, 0, 0.4).unwrap();
        let exact = solve_master(&sys, &law, &[1.0]).unwrap();
        let replicas = 200_000;
        let sim = ForwardSimulator::new(&sys);
        let counts = replicate_counts(replicas, 21, 8, |_, rng, acc| {
            acc[encode(&sim.sample_at(&law, 1.0, rng), 2)] += 1;
        });
        let tv: f64 =
            0.5 * counts.iter().zip(&exact.p[0]).map(|(&c, &p)| (c as f64 / replicas as f64 - p).abs()).sum::<f64>();
        assert!(tv < 4.0 * (8.0 / replicas as f64).sqrt(), "tv = {tv}");
    }

    #[test]
    fn si_infected_set_never_shrinks() {
        let r = CsrMatrix::from_dense(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]);
        let sys = build_sis(&r, &[0.0; 3]).unwrap();
        let law = InitialLaw::bernoulli(3, 2, 1, 0, 0.3).unwrap();
        let sim = ForwardSimulator::new(&sys);
        for seed in 0..50 {
            let mut rng = rng::stream(seed);
            let mut sigma = law.sample(&mut rng);
            let mut infected = sigma.iter().filter(|&&s| s == 1).count();
            sim.run(&mut sigma, 3.0, &mut rng, |_, _, _, s| {
                let now = s.iter().filter(|&&x| x == 1).count();
                assert!(now >= infected);
                infected = now;
            });
        }
    }

    #[test]
    fn subpopulation_variance_of_iid_start() {
        let n = 400;
        let sys = build_sis(&CsrMatrix::zeros(n), &vec![0.0; n]).unwrap();
        let law = InitialLaw::bernoulli(n, 2, 1, 0, 0.5).unwrap();
        let subset: Vec<usize> = (0..100).collect();
        let v = estimate_subpop_variance(&sys, &law, &subset, 1, 0.0, 20_000, 2).unwrap();
        assert!(v.within(1.0 / 400.0, 4.0), "{v:?}");
        let det = InitialLaw::deterministic(2, &vec![0; n]);
        assert_eq!(estimate_subpop_variance(&sys, &det, &subset, 1, 0.0, 10, 2).unwrap().value, 0.0);
        assert_eq!(estimate_subpop_variance(&sys, &det, &[], 1, 0.0, 10, 2).unwrap_err(), ForwardError::EmptySubset);
    }

    fn complete_bitgraph(n: usize) -> BitGraph {
        let mut g = BitGraph::new(n);
        for a in 0..n {
            for b in a + 1..n {
                g.add(a, b);
            }
        }
        g
    }

    #[test]
    fn homomorphism_densities() {
        let k4 = complete_bitgraph(4);
        assert_eq!(homomorphism_density(&k4, &Motif::triangle(), 0, 0).unwrap().value, 24.0 / 64.0);
        let k70 = complete_bitgraph(70);
        let e = homomorphism_density(&k70, &Motif::edge(), 0, 0).unwrap().value;
        assert_eq!(e, 2.0 * (70.0 * 69.0 / 2.0) / (70.0 * 70.0));
        assert_eq!(homomorphism_density(&BitGraph::new(5), &Motif::triangle(), 0, 0).unwrap().value, 0.0);
        let k4_in_k6 = homomorphism_density(&complete_bitgraph(6), &Motif::clique(4), 200_000, 1).unwrap();
        let exact = (6.0 * 5.0 * 4.0 * 3.0) / 6f64.powi(4);
        assert!((k4_in_k6.value - exact).abs() < 4.0 * k4_in_k6.std_error);
        assert!(matches!(
            homomorphism_density(&k4, &Motif::clique(9), 10, 0),
            Err(ForwardError::MotifTooLarge { k: 9, .. })
        ));
    }

    #[test]
    fn triangle_removal_flips_only_present_edges() {
        let sys = build_triangle_flip(6, 3, &FlipKernel::triangle_removal()).unwrap();
        let law = InitialLaw::deterministic(2, &[1; 15]);
        let tr = simulate_forward(&sys, &law, 4.0, 5);
        let end = tr.final_state(&sys);
        let g = BitGraph::from_edge_states(6, &end, 1);
        // removal stops once no triangle is left, but never removes all edges of K_6
        assert!(end.contains(&1));
        assert!(homomorphism_density(&g, &Motif::triangle(), 0, 0).unwrap().value < 120.0 / 216.0);
    }
}
