//! Backward constructions: information sets and the augmented branching
//! structure that couples the particle system with its NIMFA representation.
//!
//! Backward time `τ` runs from 0 (the observation time `t₀`) up to `t₀`
//! (time 0 of the forward process).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::InitialLaw;
use crate::rates::RateSystem;
use crate::rng::{self, SimRng};
use crate::stats::{binomial_report, mean_report, replicate, EstimatorReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackwardError {
    #[error("the blow-up functional needs a pairwise system with symmetric rates")]
    RequiresSymmetric,
    #[error("subset is empty")]
    EmptySubset,
    #[error("need at least {0} replicas")]
    TooFewReplicas(usize),
}

pub const DEFAULT_POP_CAP: usize = 100_000;
pub const DEFAULT_SIZE_CAP: usize = 1_000_000;

/// Per-target cumulative channel rates, shared by both samplers.
#[derive(Debug, Clone)]
pub struct BackwardSampler<'a> {
    system: &'a RateSystem,
    /// Cumulative `r̄` over channels, restarting at each target.
    chan_cum: Vec<f64>,
    /// Cumulative label rates, restarting at each channel.
    label_cum: Vec<f64>,
    /// Total incoming rate of every order, and of orders ≥ 1.
    total_in: Vec<f64>,
    interacting_in: Vec<f64>,
    /// First channel of order ≥ 1 targeting each vertex.
    first_interacting: Vec<usize>,
}

impl<'a> BackwardSampler<'a> {
    pub fn new(system: &'a RateSystem) -> Self {
        let n = system.n_vertices();
        let mut chan_cum = vec![0.0; system.channel_count()];
        let mut label_cum = vec![0.0; system.rule_count()];
        let mut total_in = vec![0.0; n];
        let mut interacting_in = vec![0.0; n];
        let mut first_interacting = vec![0; n];
        for i in 0..n {
            let cs = system.channels_targeting(i);
            first_interacting[i] = cs.end;
            let mut acc = 0.0;
            for c in cs {
                if system.channel_order(c) > 0 {
                    first_interacting[i] = first_interacting[i].min(c);
                    interacting_in[i] += system.channel_rbar(c);
                }
                acc += system.channel_rbar(c);
                chan_cum[c] = acc;
                let mut lacc = 0.0;
                for id in system.channel_rules(c) {
                    lacc += system.rule(id).rate;
                    label_cum[id] = lacc;
                }
            }
            total_in[i] = acc;
        }
        Self { system, chan_cum, label_cum, total_in, interacting_in, first_interacting }
    }

    pub fn system(&self) -> &RateSystem {
        self.system
    }

    /// Channel targeting `i` drawn proportionally to `r̄`, among channels
    /// from `first` on (cumulative sums are shifted by the skipped mass).
    fn pick_channel(&self, i: usize, interacting_only: bool, rng: &mut SimRng) -> usize {
        let cs = self.system.channels_targeting(i);
        let start = if interacting_only { self.first_interacting[i] } else { cs.start };
        let offset = if start > cs.start { self.chan_cum[start - 1] } else { 0.0 };
        let total = self.chan_cum[cs.end - 1] - offset;
        let u = offset + rng.random::<f64>() * total;
        let k = self.chan_cum[start..cs.end].partition_point(|&c| c <= u);
        start + k.min(cs.end - start - 1)
    }

    fn pick_label(&self, c: usize, rng: &mut SimRng) -> usize {
        let ids = self.system.channel_rules(c);
        let total = self.label_cum[ids.end - 1];
        let u = rng.random::<f64>() * total;
        let k = self.label_cum[ids.clone()].partition_point(|&x| x <= u);
        ids.start + k.min(ids.len() - 1)
    }
}

/// Append-only weighted population with `O(log n)` sampling.
struct Population {
    cum: Vec<f64>,
}

impl Population {
    fn new() -> Self {
        Self { cum: Vec::new() }
    }

    fn push(&mut self, w: f64) {
        let last = self.cum.last().copied().unwrap_or(0.0);
        self.cum.push(last + w);
    }

    fn total(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    fn pick(&self, rng: &mut SimRng) -> usize {
        let u = rng.random::<f64>() * self.total();
        self.cum.partition_point(|&c| c <= u).min(self.cum.len() - 1)
    }
}

/// One information set `H_root(τ)`, `0 ≤ τ ≤ horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoSetSample {
    pub root: usize,
    pub horizon: f64,
    /// `(τ, vertex)` in joining order; the root joins at `τ = 0`.
    pub joins: Vec<(f64, usize)>,
    /// Jumps whose base was already inside the set.
    pub noop_jumps: usize,
    pub truncated: bool,
}

impl InfoSetSample {
    pub fn members_at(&self, tau: f64) -> Vec<usize> {
        self.joins.iter().filter(|&&(t, _)| t <= tau).map(|&(_, v)| v).collect()
    }

    pub fn members(&self) -> Vec<usize> {
        self.joins.iter().map(|&(_, v)| v).collect()
    }

    pub fn len(&self) -> usize {
        self.joins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joins.is_empty()
    }
}

impl BackwardSampler<'_> {
    /// `H_root(t)`: each member `k` adds the base of every channel of order
    /// ≥ 1 targeting `k` at rate `r̄`; bases already inside are no-op jumps.
    pub fn information_set(&self, root: usize, t: f64, size_cap: usize, rng: &mut SimRng) -> InfoSetSample {
        let n = self.system.n_vertices();
        let mut inside = vec![false; n];
        inside[root] = true;
        let mut joins = vec![(0.0, root)];
        let mut pop = Population::new();
        let mut member_of = vec![root];
        pop.push(self.interacting_in[root]);
        let mut tau = 0.0;
        let mut noop = 0;
        let mut truncated = false;
        while pop.total() > 0.0 {
            tau += -(1.0 - rng.random::<f64>()).ln() / pop.total();
            if tau > t {
                break;
            }
            let k = member_of[pop.pick(rng)];
            let c = self.pick_channel(k, true, rng);
            let mut added = false;
            for &j in self.system.channel_base(c) {
                let j = j as usize;
                if !inside[j] {
                    inside[j] = true;
                    joins.push((tau, j));
                    member_of.push(j);
                    pop.push(self.interacting_in[j]);
                    added = true;
                }
            }
            if !added {
                noop += 1;
            }
            if joins.len() > size_cap {
                truncated = true;
                break;
            }
        }
        InfoSetSample { root, horizon: t, joins, noop_jumps: noop, truncated }
    }
}

pub fn sample_information_set(system: &RateSystem, root: usize, t: f64, seed: u64, size_cap: usize) -> InfoSetSample {
    BackwardSampler::new(system).information_set(root, t, size_cap, &mut rng::stream(seed))
}

/// Frequency of `H_i(t) ∩ H_j(t) ≠ ∅` with the two sets sampled independently.
pub fn estimate_collision_prob(
    system: &RateSystem,
    i: usize,
    j: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<EstimatorReport, BackwardError> {
    if replicas < 2 {
        return Err(BackwardError::TooFewReplicas(2));
    }
    if i == j {
        return Ok(EstimatorReport { value: 1.0, std_error: 0.0, replicas, seed_base: seed });
    }
    let sampler = BackwardSampler::new(system);
    let n = system.n_vertices();
    let hits = replicate(replicas, seed, |_, rng| {
        let hi = sampler.information_set(i, t, DEFAULT_SIZE_CAP, rng);
        let hj = sampler.information_set(j, t, DEFAULT_SIZE_CAP, rng);
        let mut mark = vec![false; n];
        hi.joins.iter().for_each(|&(_, v)| mark[v] = true);
        hj.joins.iter().any(|&(_, v)| mark[v])
    });
    let count = hits.iter().filter(|&&h| h).count() as u64;
    Ok(binomial_report(count, replicas, seed))
}

/// `(1/|M|) Σ_{i∈M} E|H_i(2t) ∩ M| / |M|`, sampling roots uniformly from `M`.
pub fn estimate_blowup_functional(
    system: &RateSystem,
    subset: &[usize],
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<EstimatorReport, BackwardError> {
    if subset.is_empty() {
        return Err(BackwardError::EmptySubset);
    }
    if replicas < 2 {
        return Err(BackwardError::TooFewReplicas(2));
    }
    let pair = crate::rates::pair_rate_matrix(system).map_err(|_| BackwardError::RequiresSymmetric)?;
    if !pair.symmetric {
        return Err(BackwardError::RequiresSymmetric);
    }
    let sampler = BackwardSampler::new(system);
    let mut in_m = vec![false; system.n_vertices()];
    subset.iter().for_each(|&v| in_m[v] = true);
    let m = subset.len() as f64;
    let xs = replicate(replicas, seed, |_, rng| {
        let root = subset[rng.random_range(0..subset.len())];
        let h = sampler.information_set(root, 2.0 * t, DEFAULT_SIZE_CAP, rng);
        h.joins.iter().filter(|&&(_, v)| in_m[v]).count() as f64 / m
    });
    Ok(mean_report(&xs, seed))
}

/// Output of the coupled backward branching sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingSample {
    pub root: usize,
    pub horizon: f64,
    /// `(τ, vertex)` for every particle birth after the root.
    pub births: Vec<(f64, usize)>,
    /// Some vertex carries two or more particles at `τ = horizon`.
    pub ghost: bool,
    /// `σ_root(t₀)` of the original process; `None` when truncated.
    pub sigma: Option<u16>,
    /// `σ̃_root(t₀)` of the branching structure; `None` when truncated.
    pub sigma_tilde: Option<u16>,
    pub truncated: bool,
}

impl BranchingSample {
    pub fn particle_count(&self) -> usize {
        1 + self.births.len()
    }
}

struct Instruction {
    particle: u32,
    rule: u32,
    children_start: u32,
    children_end: u32,
}

impl BackwardSampler<'_> {
    /// Backward branching random walk from `root` over `[0, t0]`, with the
    /// coupled evaluation of `σ` (first particles only) and `σ̃` (all particles).
    pub fn branching(
        &self,
        law: &InitialLaw,
        root: usize,
        t0: f64,
        pop_cap: usize,
        rng: &mut SimRng,
    ) -> BranchingSample {
        let n = self.system.n_vertices();
        let mut count = vec![0u32; n];
        let mut vertex_of: Vec<u32> = vec![root as u32];
        let mut is_first: Vec<bool> = vec![true];
        let mut first_particle = vec![u32::MAX; n];
        first_particle[root] = 0;
        count[root] = 1;
        let mut pop = Population::new();
        pop.push(self.total_in[root]);
        let mut births = Vec::new();
        let mut instructions: Vec<Instruction> = Vec::new();
        let mut children: Vec<u32> = Vec::new();
        let mut ghost = false;
        let mut truncated = false;
        let mut tau = 0.0;
        while pop.total() > 0.0 {
            tau += -(1.0 - rng.random::<f64>()).ln() / pop.total();
            if tau > t0 {
                break;
            }
            let p = pop.pick(rng);
            let i = vertex_of[p] as usize;
            let c = self.pick_channel(i, false, rng);
            let id = self.pick_label(c, rng);
            let start = children.len() as u32;
            for &j in self.system.channel_base(c) {
                let j = j as usize;
                count[j] += 1;
                ghost |= count[j] > 1;
                let q = vertex_of.len() as u32;
                vertex_of.push(j as u32);
                is_first.push(count[j] == 1);
                if count[j] == 1 {
                    first_particle[j] = q;
                }
                pop.push(self.total_in[j]);
                births.push((tau, j));
                children.push(q);
            }
            instructions.push(Instruction {
                particle: p as u32,
                rule: id as u32,
                children_start: start,
                children_end: children.len() as u32,
            });
            if vertex_of.len() > pop_cap {
                truncated = true;
                break;
            }
        }
        if truncated {
            return BranchingSample {
                root,
                horizon: t0,
                births,
                ghost: true,
                sigma: None,
                sigma_tilde: None,
                truncated,
            };
        }
        let mut tilde: Vec<u16> = vertex_of.iter().map(|&v| law.sample_vertex(v as usize, rng)).collect();
        let mut orig: Vec<u16> = vec![0; n];
        for (v, &q) in first_particle.iter().enumerate() {
            if q != u32::MAX {
                orig[v] = tilde[q as usize];
            }
        }
        // forward chronological order is the reverse of the backward record
        for ins in instructions.iter().rev() {
            let r = self.system.rule(ins.rule as usize);
            let p = ins.particle as usize;
            let kids = &children[ins.children_start as usize..ins.children_end as usize];
            if tilde[p] as usize == r.from && kids.iter().zip(r.base_states).all(|(&q, &s)| tilde[q as usize] == s) {
                tilde[p] = r.to as u16;
            }
            if is_first[p]
                && orig[r.target] as usize == r.from
                && r.base.iter().zip(r.base_states).all(|(&j, &s)| orig[j as usize] == s)
            {
                orig[r.target] = r.to as u16;
            }
        }
        BranchingSample {
            root,
            horizon: t0,
            births,
            ghost,
            sigma: Some(orig[root]),
            sigma_tilde: Some(tilde[0]),
            truncated,
        }
    }

    /// Whether a ghost appears by `t0`; stops at the first one.
    pub fn ghost_only(&self, root: usize, t0: f64, pop_cap: usize, rng: &mut SimRng) -> bool {
        let n = self.system.n_vertices();
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut vertex_of = vec![root];
        let mut pop = Population::new();
        pop.push(self.interacting_in[root]);
        let mut tau = 0.0;
        while pop.total() > 0.0 {
            tau += -(1.0 - rng.random::<f64>()).ln() / pop.total();
            if tau > t0 {
                return false;
            }
            let i = vertex_of[pop.pick(rng)];
            let c = self.pick_channel(i, true, rng);
            for &j in self.system.channel_base(c) {
                let j = j as usize;
                if seen[j] {
                    return true;
                }
                seen[j] = true;
                vertex_of.push(j);
                pop.push(self.interacting_in[j]);
            }
            if vertex_of.len() > pop_cap {
                return true;
            }
        }
        false
    }
}

pub fn sample_branching_structure(
    system: &RateSystem,
    law: &InitialLaw,
    root: usize,
    t0: f64,
    seed: u64,
    pop_cap: usize,
) -> BranchingSample {
    BackwardSampler::new(system).branching(law, root, t0, pop_cap, &mut rng::stream(seed))
}

/// Frequency of the ghost event `G_root(t)`; truncation counts as a ghost.
pub fn estimate_ghost_prob(
    system: &RateSystem,
    root: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<EstimatorReport, BackwardError> {
    if replicas < 2 {
        return Err(BackwardError::TooFewReplicas(2));
    }
    let sampler = BackwardSampler::new(system);
    let hits = replicate(replicas, seed, |_, rng| sampler.ghost_only(root, t, DEFAULT_POP_CAP, rng));
    Ok(binomial_report(hits.iter().filter(|&&h| h).count() as u64, replicas, seed))
}

/// Empirical law of `σ̃_root(t)` as binomial reports per state, plus the
/// samples themselves for coupling checks.
pub fn estimate_sigma_tilde_law(
    system: &RateSystem,
    law: &InitialLaw,
    root: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> (Vec<EstimatorReport>, Vec<BranchingSample>) {
    let sampler = BackwardSampler::new(system);
    let samples = replicate(replicas, seed, |_, rng| sampler.branching(law, root, t, DEFAULT_POP_CAP, rng));
    let mut counts = vec![0u64; system.n_states()];
    for s in samples.iter().filter_map(|s| s.sigma_tilde) {
        counts[s as usize] += 1;
    }
    let reports = counts.iter().map(|&c| binomial_report(c, replicas, seed)).collect();
    (reports, samples)
}
