//! State spaces, interaction rules and the derived rate quantities.
//!
//! A rule of order `m` says: when the `m` vertices of `base` are in
//! `base_states` and `target` is in `from`, the target switches to `to` at
//! `rate`. Rules sharing `(base, target)` form one *channel*: the Poisson
//! clock of that tuple, whose intensity is the total rate `r̄` summed over
//! all labels (including those that would not fire in the current
//! configuration). Leaving rates (`s -> s`) are never stored.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("state space must contain at least one state")]
    EmptyStateSpace,
    #[error("state `{0}` listed twice")]
    DuplicateState(String),
    #[error("state `{0}` is not in the state space")]
    UnknownState(String),
    #[error("rule {index}: state index {state} outside state space of size {size}")]
    StateNotInSpace { index: usize, state: usize, size: usize },
    #[error("rule {index}: {reason}")]
    MalformedRule { index: usize, reason: String },
    #[error("duplicate rule: order {order}, base {base:?}, target {target}, label {label}")]
    DuplicateRule { order: usize, base: Vec<usize>, target: usize, label: String },
    #[error("operation needs pair interactions only, system has order {0}")]
    OrderTooHigh(usize),
}

/// Ordered set of distinct state labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    names: Vec<String>,
}

impl StateSpace {
    pub fn new<I, S>(names: I) -> Result<Self, RateError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(RateError::EmptyStateSpace);
        }
        for (k, n) in names.iter().enumerate() {
            if names[..k].contains(n) {
                return Err(RateError::DuplicateState(n.clone()));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, RateError> {
        self.index(name).ok_or_else(|| RateError::UnknownState(name.to_string()))
    }
}

/// One labelled interaction, as supplied by callers.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRule {
    pub base: Vec<usize>,
    pub target: usize,
    pub base_states: Vec<usize>,
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

impl InteractionRule {
    pub fn order(&self) -> usize {
        self.base.len()
    }

    /// Order-0 rule: `target` jumps `from -> to` on its own.
    pub fn spontaneous(target: usize, from: usize, to: usize, rate: f64) -> Self {
        Self { base: vec![], target, base_states: vec![], from, to, rate }
    }

    /// Order-1 rule: `source` in `source_state` moves `target` from `from` to `to`.
    pub fn pair(source: usize, source_state: usize, target: usize, from: usize, to: usize, rate: f64) -> Self {
        Self { base: vec![source], target, base_states: vec![source_state], from, to, rate }
    }
}

/// Borrowed view of a stored rule.
#[derive(Debug, Clone, Copy)]
pub struct RuleView<'a> {
    pub id: usize,
    pub channel: usize,
    pub base: &'a [u32],
    pub target: usize,
    pub base_states: &'a [u16],
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

impl RuleView<'_> {
    pub fn order(&self) -> usize {
        self.base.len()
    }

    /// Does the rule fire in configuration `sigma`?
    #[inline]
    pub fn matches(&self, sigma: &[u16]) -> bool {
        sigma[self.target] as usize == self.from
            && self.base.iter().zip(self.base_states).all(|(&j, &s)| sigma[j as usize] == s)
    }

    pub fn to_rule(&self) -> InteractionRule {
        InteractionRule {
            base: self.base.iter().map(|&j| j as usize).collect(),
            target: self.target,
            base_states: self.base_states.iter().map(|&s| s as usize).collect(),
            from: self.from,
            to: self.to,
            rate: self.rate,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct RawRule {
    base_start: u32,
    order: u16,
    target: u32,
    from: u16,
    to: u16,
    rate: f64,
}

/// Accumulates rules in flat storage; used directly by builders that emit
/// millions of rules.
#[derive(Debug, Clone)]
pub struct RuleSetBuilder {
    n_vertices: usize,
    n_states: usize,
    bases: Vec<u32>,
    states: Vec<u16>,
    raw: Vec<RawRule>,
    pushed: usize,
}

impl RuleSetBuilder {
    pub fn new(n_vertices: usize, n_states: usize) -> Self {
        Self { n_vertices, n_states, bases: Vec::new(), states: Vec::new(), raw: Vec::new(), pushed: 0 }
    }

    pub fn with_capacity(n_vertices: usize, n_states: usize, rules: usize, base_entries: usize) -> Self {
        let mut b = Self::new(n_vertices, n_states);
        b.raw.reserve(rules);
        b.bases.reserve(base_entries);
        b.states.reserve(base_entries);
        b
    }

    pub fn push_rule(&mut self, rule: &InteractionRule) -> Result<(), RateError> {
        self.push(&rule.base, rule.target, &rule.base_states, rule.from, rule.to, rule.rate)
    }

    pub fn push(
        &mut self,
        base: &[usize],
        target: usize,
        base_states: &[usize],
        from: usize,
        to: usize,
        rate: f64,
    ) -> Result<(), RateError> {
        let index = self.pushed;
        self.pushed += 1;
        let malformed = |reason: String| RateError::MalformedRule { index, reason };
        if target >= self.n_vertices {
            return Err(malformed(format!("target {target} outside 0..{}", self.n_vertices)));
        }
        if base.len() != base_states.len() {
            return Err(malformed(format!("{} base vertices but {} base states", base.len(), base_states.len())));
        }
        if base.len() > u16::MAX as usize {
            return Err(malformed("order too large".into()));
        }
        for (k, &j) in base.iter().enumerate() {
            if j >= self.n_vertices {
                return Err(malformed(format!("base vertex {j} outside 0..{}", self.n_vertices)));
            }
            if j == target {
                return Err(malformed(format!("target {target} also appears in the base")));
            }
            if k > 0 && base[k - 1] == j {
                return Err(malformed(format!("base vertex {j} repeated")));
            }
            if k > 0 && base[k - 1] > j {
                return Err(malformed(format!("base {base:?} is not sorted increasingly")));
            }
        }
        for &s in base_states.iter().chain([&from, &to]) {
            if s >= self.n_states {
                return Err(RateError::StateNotInSpace { index, state: s, size: self.n_states });
            }
        }
        if from == to {
            return Err(malformed("from and to states coincide".into()));
        }
        if !rate.is_finite() || rate < 0.0 {
            return Err(malformed(format!("rate {rate} is not a finite nonnegative number")));
        }
        if rate == 0.0 {
            return Ok(());
        }
        let base_start = self.bases.len() as u32;
        self.bases.extend(base.iter().map(|&j| j as u32));
        self.states.extend(base_states.iter().map(|&s| s as u16));
        self.raw.push(RawRule {
            base_start,
            order: base.len() as u16,
            target: target as u32,
            from: from as u16,
            to: to as u16,
            rate,
        });
        Ok(())
    }

    pub fn build(self, state_space: StateSpace) -> Result<RateSystem, RateError> {
        assert_eq!(state_space.len(), self.n_states, "builder created for a different state space");
        RateSystem::from_builder(state_space, self)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Channel {
    base_start: u32,
    order: u16,
    target: u32,
    rbar: f64,
    labels_start: u32,
    labels_end: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Label {
    channel: u32,
    from: u16,
    to: u16,
    rate: f64,
}

/// Frozen rule store plus every derived rate quantity.
///
/// Channels are sorted by `(target, order, base)`, so the channels
/// targeting one vertex form a contiguous range. Rule ids index the labels
/// in that same order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateSystem {
    state_space: StateSpace,
    n_vertices: usize,
    max_order: usize,
    channels: Vec<Channel>,
    channel_bases: Vec<u32>,
    labels: Vec<Label>,
    label_states: Vec<u16>,
    label_states_start: Vec<u32>,
    target_ptr: Vec<usize>,
    member_ptr: Vec<usize>,
    member_channels: Vec<u32>,
    /// `delta[m][i]`: total incoming rate of order `m` at vertex `i`.
    delta: Vec<Vec<f64>>,
    delta_max: f64,
    influence_ptr: Vec<usize>,
    influence_src: Vec<u32>,
    influence_val: Vec<f64>,
    influence_max: f64,
}

/// Build and validate a system from a list of rules.
pub fn build_rate_system<I>(state_space: StateSpace, n_vertices: usize, rules: I) -> Result<RateSystem, RateError>
where
    I: IntoIterator<Item = InteractionRule>,
{
    let mut b = RuleSetBuilder::new(n_vertices, state_space.len());
    for r in rules {
        b.push_rule(&r)?;
    }
    b.build(state_space)
}

impl RateSystem {
    fn from_builder(state_space: StateSpace, b: RuleSetBuilder) -> Result<Self, RateError> {
        let RuleSetBuilder { n_vertices, bases, states, raw, .. } = b;
        let base_of = |r: &RawRule| &bases[r.base_start as usize..r.base_start as usize + r.order as usize];
        let states_of = |r: &RawRule| &states[r.base_start as usize..r.base_start as usize + r.order as usize];

        let mut perm: Vec<u32> = (0..raw.len() as u32).collect();
        perm.sort_unstable_by(|&a, &b| {
            let (ra, rb) = (&raw[a as usize], &raw[b as usize]);
            ra.target
                .cmp(&rb.target)
                .then(ra.order.cmp(&rb.order))
                .then_with(|| base_of(ra).cmp(base_of(rb)))
                .then_with(|| states_of(ra).cmp(states_of(rb)))
                .then(ra.from.cmp(&rb.from))
                .then(ra.to.cmp(&rb.to))
        });

        let mut channels: Vec<Channel> = Vec::new();
        let mut channel_bases: Vec<u32> = Vec::new();
        let mut labels: Vec<Label> = Vec::with_capacity(raw.len());
        let mut label_states: Vec<u16> = Vec::with_capacity(states.len());
        let mut label_states_start: Vec<u32> = Vec::with_capacity(raw.len());
        let mut prev: Option<&RawRule> = None;
        for &p in &perm {
            let r = &raw[p as usize];
            let same_channel =
                prev.is_some_and(|q| q.target == r.target && q.order == r.order && base_of(q) == base_of(r));
            if let Some(q) = prev.filter(|_| same_channel) {
                if states_of(q) == states_of(r) && q.from == r.from && q.to == r.to {
                    return Err(RateError::DuplicateRule {
                        order: r.order as usize,
                        base: base_of(r).iter().map(|&j| j as usize).collect(),
                        target: r.target as usize,
                        label: format!(
                            "({:?},{}) -> ({:?},{})",
                            states_of(r),
                            state_space.name(r.from as usize),
                            states_of(r),
                            state_space.name(r.to as usize)
                        ),
                    });
                }
            }
            if !same_channel {
                channels.push(Channel {
                    base_start: channel_bases.len() as u32,
                    order: r.order,
                    target: r.target,
                    rbar: 0.0,
                    labels_start: labels.len() as u32,
                    labels_end: labels.len() as u32,
                });
                channel_bases.extend_from_slice(base_of(r));
            }
            let c = channels.len() - 1;
            channels[c].rbar += r.rate;
            channels[c].labels_end += 1;
            label_states_start.push(label_states.len() as u32);
            label_states.extend_from_slice(states_of(r));
            labels.push(Label { channel: c as u32, from: r.from, to: r.to, rate: r.rate });
            prev = Some(r);
        }
        drop(raw);
        drop(bases);
        drop(states);

        let max_order = channels.iter().map(|c| c.order as usize).max().unwrap_or(0);

        let mut target_ptr = vec![0usize; n_vertices + 1];
        for c in &channels {
            target_ptr[c.target as usize + 1] += 1;
        }
        for i in 0..n_vertices {
            target_ptr[i + 1] += target_ptr[i];
        }

        let mut member_ptr = vec![0usize; n_vertices + 1];
        for c in &channels {
            for &j in &channel_bases[c.base_start as usize..c.base_start as usize + c.order as usize] {
                member_ptr[j as usize + 1] += 1;
            }
        }
        for i in 0..n_vertices {
            member_ptr[i + 1] += member_ptr[i];
        }
        let mut fill = member_ptr.clone();
        let mut member_channels = vec![0u32; member_ptr[n_vertices]];
        for (cid, c) in channels.iter().enumerate() {
            for &j in &channel_bases[c.base_start as usize..c.base_start as usize + c.order as usize] {
                member_channels[fill[j as usize]] = cid as u32;
                fill[j as usize] += 1;
            }
        }

        let mut delta = vec![vec![0.0; n_vertices]; max_order + 1];
        for c in &channels {
            delta[c.order as usize][c.target as usize] += c.rbar;
        }
        let delta_max = delta.iter().skip(1).flat_map(|row| row.iter().copied()).fold(0.0, f64::max);

        let mut influence_ptr = vec![0usize; n_vertices + 1];
        let mut influence_src = Vec::new();
        let mut influence_val = Vec::new();
        let mut scratch: Vec<(u32, f64)> = Vec::new();
        for i in 0..n_vertices {
            scratch.clear();
            for c in &channels[target_ptr[i]..target_ptr[i + 1]] {
                for &j in &channel_bases[c.base_start as usize..c.base_start as usize + c.order as usize] {
                    scratch.push((j, c.rbar));
                }
            }
            scratch.sort_unstable_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < scratch.len() {
                let j = scratch[k].0;
                let mut v = 0.0;
                while k < scratch.len() && scratch[k].0 == j {
                    v += scratch[k].1;
                    k += 1;
                }
                influence_src.push(j);
                influence_val.push(v);
            }
            influence_ptr[i + 1] = influence_src.len();
        }
        let influence_max = influence_val.iter().copied().fold(0.0, f64::max);

        Ok(Self {
            state_space,
            n_vertices,
            max_order,
            channels,
            channel_bases,
            labels,
            label_states,
            label_states_start,
            target_ptr,
            member_ptr,
            member_channels,
            delta,
            delta_max,
            influence_ptr,
            influence_src,
            influence_val,
            influence_max,
        })
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.state_space
    }

    pub fn n_states(&self) -> usize {
        self.state_space.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Largest order among stored rules (0 for an empty system).
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn rule_count(&self) -> usize {
        self.labels.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn rule(&self, id: usize) -> RuleView<'_> {
        let l = &self.labels[id];
        let c = &self.channels[l.channel as usize];
        let s = self.label_states_start[id] as usize;
        RuleView {
            id,
            channel: l.channel as usize,
            base: self.channel_base(l.channel as usize),
            target: c.target as usize,
            base_states: &self.label_states[s..s + c.order as usize],
            from: l.from as usize,
            to: l.to as usize,
            rate: l.rate,
        }
    }

    pub fn rules(&self) -> impl Iterator<Item = RuleView<'_>> + '_ {
        (0..self.labels.len()).map(move |id| self.rule(id))
    }

    pub fn channel_base(&self, c: usize) -> &[u32] {
        let ch = &self.channels[c];
        &self.channel_bases[ch.base_start as usize..ch.base_start as usize + ch.order as usize]
    }

    pub fn channel_target(&self, c: usize) -> usize {
        self.channels[c].target as usize
    }

    pub fn channel_order(&self, c: usize) -> usize {
        self.channels[c].order as usize
    }

    /// Total rate `r̄` of the channel (sum over its labels).
    pub fn channel_rbar(&self, c: usize) -> f64 {
        self.channels[c].rbar
    }

    /// Rule ids belonging to channel `c`.
    pub fn channel_rules(&self, c: usize) -> Range<usize> {
        let ch = &self.channels[c];
        ch.labels_start as usize..ch.labels_end as usize
    }

    /// Channels whose target is `i`, as a contiguous id range.
    pub fn channels_targeting(&self, i: usize) -> Range<usize> {
        self.target_ptr[i]..self.target_ptr[i + 1]
    }

    /// Channels whose base contains `j`.
    pub fn channels_with_member(&self, j: usize) -> &[u32] {
        &self.member_channels[self.member_ptr[j]..self.member_ptr[j + 1]]
    }

    /// `δ_i^(m)`; zero for orders above `max_order`.
    pub fn delta(&self, order: usize, i: usize) -> f64 {
        self.delta.get(order).map_or(0.0, |row| row[i])
    }

    /// Maximum of `δ_i^(m)` over vertices and orders `m ≥ 1`.
    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    /// Influence `r̃_{ji}` of `j` on `i`.
    pub fn influence(&self, j: usize, i: usize) -> f64 {
        let span = self.influence_ptr[i]..self.influence_ptr[i + 1];
        match self.influence_src[span.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.influence_val[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// Nonzero influences on `i` as `(j, r̃_{ji})`, sorted by `j`.
    pub fn influences_on(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.influence_ptr[i]..self.influence_ptr[i + 1];
        self.influence_src[span.clone()].iter().map(|&j| j as usize).zip(self.influence_val[span].iter().copied())
    }

    /// Pair `(j, i)` attaining the maximal influence, if any influence is positive.
    pub fn argmax_influence(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.n_vertices {
            for (j, v) in self.influences_on(i) {
                if best.is_none_or(|b| v > b.2) {
                    best = Some((j, i, v));
                }
            }
        }
        best.filter(|b| b.2 > 0.0).map(|(j, i, _)| (j, i))
    }

    /// Total clock rate of every channel targeting `i`, self-interactions included.
    pub fn total_incoming(&self, i: usize) -> f64 {
        self.channels_targeting(i).map(|c| self.channels[c].rbar).sum()
    }

    /// Rules grouped per channel: `(order, base, target) -> r̄`. Mainly for tests.
    pub fn channel_rates(&self) -> HashMap<(Vec<usize>, usize), f64> {
        (0..self.channels.len())
            .map(|c| {
                (
                    (self.channel_base(c).iter().map(|&j| j as usize).collect(), self.channel_target(c)),
                    self.channel_rbar(c),
                )
            })
            .collect()
    }
}

/// Maximal influence `max_{i,j} r̃_{ij}`.
pub fn influence_max(system: &RateSystem) -> f64 {
    system.influence_max
}

/// Pair-rate matrix `R`, entry `(j, i)` = total rate of `j` acting on `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRateMatrix {
    pub matrix: CsrMatrix,
    pub symmetric: bool,
}

impl PairRateMatrix {
    pub fn new(matrix: CsrMatrix) -> Self {
        let symmetric = matrix.is_symmetric(0.0);
        Self { matrix, symmetric }
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }
}

pub fn pair_rate_matrix(system: &RateSystem) -> Result<PairRateMatrix, RateError> {
    if system.max_order() > 1 {
        return Err(RateError::OrderTooHigh(system.max_order()));
    }
    let triplets = (0..system.channel_count())
        .filter(|&c| system.channel_order(c) == 1)
        .map(|c| (system.channel_base(c)[0] as usize, system.channel_target(c), system.channel_rbar(c)))
        .collect();
    Ok(PairRateMatrix::new(CsrMatrix::from_triplets(system.n_vertices(), triplets)))
}
