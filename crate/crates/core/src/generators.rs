//! Adjacency generators and their conversion into rate weights.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("parameters outside the admissible domain: {0}")]
    ParameterDomain(String),
    #[error("no {d}-regular graph on {n} vertices")]
    InfeasibleRegular { n: usize, d: usize },
    #[error("random regular generation failed after {0} restarts")]
    RegularRestartsExhausted(usize),
    #[error("graph has no edges of order {0}, cannot normalize")]
    EmptyGraph(usize),
    #[error("adjacency parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A hyperedge of order `m ≥ 2`: a sorted base acting on a target.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hyperedge {
    pub base: Vec<usize>,
    pub target: usize,
}

/// Unweighted (hyper)graph. `edges` holds ordered pairs `(j, i)` meaning
/// `j` acts on `i`; undirected graphs store both orientations. The edge list
/// is kept sorted and free of duplicates and self-loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjacency {
    pub n: usize,
    pub directed: bool,
    edges: Vec<(usize, usize)>,
    hyperedges: Vec<Hyperedge>,
}

impl Adjacency {
    pub fn empty(n: usize, directed: bool) -> Self {
        Self { n, directed, edges: Vec::new(), hyperedges: Vec::new() }
    }

    /// Build from ordered pairs. For undirected graphs each pair is mirrored.
    pub fn from_edges(n: usize, directed: bool, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges = Vec::new();
        for (j, i) in pairs {
            assert!(j < n && i < n, "edge ({j},{i}) outside 0..{n}");
            if j == i {
                continue;
            }
            edges.push((j, i));
            if !directed {
                edges.push((i, j));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Self { n, directed, edges, hyperedges: Vec::new() }
    }

    pub fn with_hyperedges(mut self, hyperedges: impl IntoIterator<Item = Hyperedge>) -> Self {
        for mut h in hyperedges {
            h.base.sort_unstable();
            h.base.dedup();
            assert!(h.target < self.n && h.base.iter().all(|&j| j < self.n && j != h.target));
            self.hyperedges.push(h);
        }
        self.hyperedges.sort();
        self.hyperedges.dedup();
        self
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn hyperedges(&self) -> &[Hyperedge] {
        &self.hyperedges
    }

    pub fn has_edge(&self, j: usize, i: usize) -> bool {
        self.edges.binary_search(&(j, i)).is_ok()
    }

    /// Number of undirected edges (or arcs for directed graphs).
    pub fn edge_count(&self) -> usize {
        if self.directed {
            self.edges.len()
        } else {
            self.edges.len() / 2
        }
    }

    /// In-degree of every vertex for order `m` (pairs for `m = 1`).
    pub fn in_degrees(&self, order: usize) -> Vec<usize> {
        let mut d = vec![0; self.n];
        if order == 1 {
            for &(_, i) in &self.edges {
                d[i] += 1;
            }
        } else {
            for h in self.hyperedges.iter().filter(|h| h.base.len() == order) {
                d[h.target] += 1;
            }
        }
        d
    }

    pub fn orders(&self) -> Vec<usize> {
        let mut o: Vec<usize> = self.hyperedges.iter().map(|h| h.base.len()).collect();
        if !self.edges.is_empty() {
            o.push(1);
        }
        o.sort_unstable();
        o.dedup();
        o
    }

    /// Adjacency lists by source: `out[j]` lists `i` with `(j, i)` an edge.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for &(j, i) in &self.edges {
            out[j].push(i);
        }
        out
    }

    /// Adds, for every triangle of the undirected pair graph, the three
    /// order-2 hyperedges `{a,b} -> c`.
    pub fn with_triangle_hyperedges(self) -> Self {
        let nb = self.neighbors();
        let mut hs = Vec::new();
        for a in 0..self.n {
            for &b in nb[a].iter().filter(|&&b| b > a) {
                for &c in nb[b].iter().filter(|&&c| c > b) {
                    if self.has_edge(a, c) {
                        hs.push(Hyperedge { base: vec![a, b], target: c });
                        hs.push(Hyperedge { base: vec![a, c], target: b });
                        hs.push(Hyperedge { base: vec![b, c], target: a });
                    }
                }
            }
        }
        self.with_hyperedges(hs)
    }

    /// Edge-list text: header `n <N> directed <0|1>`, one `j i` per line,
    /// hyperedges as `m | base | target`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n {} directed {}", self.n, u8::from(self.directed));
        for &(j, i) in &self.edges {
            let _ = writeln!(s, "{j} {i}");
        }
        for h in &self.hyperedges {
            let base: Vec<String> = h.base.iter().map(|b| b.to_string()).collect();
            let _ = writeln!(s, "{} | {} | {}", h.base.len(), base.join(","), h.target);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, GenError> {
        let perr = |line: usize, message: &str| GenError::Parse { line, message: message.to_string() };
        let mut lines =
            text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "n" || h[2] != "directed" {
            return Err(perr(1, "header must read `n <N> directed <0|1>`"));
        }
        let n: usize = h[1].parse().map_err(|_| perr(1, "bad vertex count"))?;
        let directed = match h[3] {
            "0" => false,
            "1" => true,
            _ => return Err(perr(1, "directed flag must be 0 or 1")),
        };
        let mut pairs = Vec::new();
        let mut hyper = Vec::new();
        for (k, line) in lines {
            let ln = k + 1;
            if line.contains('|') {
                let f: Vec<&str> = line.split('|').map(str::trim).collect();
                if f.len() != 3 {
                    return Err(perr(ln, "hyperedge line must read `m | base | target`"));
                }
                let m: usize = f[0].parse().map_err(|_| perr(ln, "bad order"))?;
                let base = f[1]
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| perr(ln, "bad base vertex")))
                    .collect::<Result<Vec<_>, _>>()?;
                let target: usize = f[2].parse().map_err(|_| perr(ln, "bad target"))?;
                if base.len() != m || target >= n || base.iter().any(|&b| b >= n || b == target) {
                    return Err(perr(ln, "inconsistent hyperedge"));
                }
                hyper.push(Hyperedge { base, target });
            } else {
                let mut it = line.split_whitespace().map(|s| s.parse::<usize>());
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(j)), Some(Ok(i)), None) if j < n && i < n => pairs.push((j, i)),
                    _ => return Err(perr(ln, "edge line must read `j i` with ids below n")),
                }
            }
        }
        Ok(Self::from_edges(n, directed, pairs).with_hyperedges(hyper))
    }
}

/// `G(n, min(λ/n, 1))`, undirected.
pub fn erdos_renyi(n: usize, lambda: f64, seed: u64) -> Adjacency {
    assert!(n >= 2 && lambda >= 0.0, "erdos_renyi needs n >= 2 and lambda >= 0");
    let p = (lambda / n as f64).min(1.0);
    gnp(n, p, seed)
}

fn gnp(n: usize, p: f64, seed: u64) -> Adjacency {
    if p <= 0.0 {
        return Adjacency::empty(n, false);
    }
    if p >= 1.0 {
        return complete(n);
    }
    let mut r = rng::stream(seed);
    let log_q = (1.0 - p).ln();
    let mut pairs = Vec::new();
    // geometric skipping over the lower triangle
    let (mut v, mut w): (usize, i64) = (1, -1);
    while v < n {
        let u: f64 = r.random();
        w += 1 + ((1.0 - u).ln() / log_q).floor() as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            pairs.push((w as usize, v));
        }
    }
    Adjacency::from_edges(n, false, pairs)
}

/// Connection probability of the Chung-Lu model for 1-based ids `i < j`,
/// clamped to `[0, 1]`.
pub fn chung_lu_probability(n: usize, alpha: f64, gamma: f64, i: usize, j: usize) -> f64 {
    let nf = n as f64;
    let norm: f64 = (1..=n).map(|k| (nf / k as f64).powf(gamma)).sum();
    chung_lu_p(nf, alpha, gamma, norm, i, j)
}

fn chung_lu_p(nf: f64, alpha: f64, gamma: f64, norm: f64, i: usize, j: usize) -> f64 {
    (nf.powf(alpha) * (nf / i as f64).powf(gamma) * (nf / j as f64).powf(gamma) / norm).clamp(0.0, 1.0)
}

/// Inhomogeneous random graph with weights `(N/i)^γ`, requires
/// `0 < γ < 1/3` and `γ < α < 1 − 2γ`.
pub fn chung_lu(n: usize, alpha: f64, gamma: f64, seed: u64) -> Result<Adjacency, GenError> {
    if !(gamma > 0.0 && gamma < 1.0 / 3.0 && alpha > gamma && alpha < 1.0 - 2.0 * gamma) {
        return Err(GenError::ParameterDomain(format!(
            "need 0 < gamma < 1/3 and gamma < alpha < 1 - 2 gamma, got alpha = {alpha}, gamma = {gamma}"
        )));
    }
    let nf = n as f64;
    let weights: Vec<f64> = (1..=n).map(|k| (nf / k as f64).powf(gamma)).collect();
    let norm: f64 = weights.iter().sum();
    let scale = nf.powf(alpha) / norm;
    let mut r = rng::stream(seed);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = (scale * weights[i] * weights[j]).min(1.0);
            if r.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    Ok(Adjacency::from_edges(n, false, pairs))
}

/// Deterministic and random named families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NamedGraph {
    Complete,
    DirectedStarOut,
    Path,
    RandomRegular { d: usize, seed: u64 },
}

pub fn named_graph(kind: NamedGraph, n: usize) -> Result<Adjacency, GenError> {
    Ok(match kind {
        NamedGraph::Complete => complete(n),
        NamedGraph::DirectedStarOut => Adjacency::from_edges(n, true, (1..n).map(|i| (0, i))),
        NamedGraph::Path => Adjacency::from_edges(n, false, (1..n).map(|i| (i - 1, i))),
        NamedGraph::RandomRegular { d, seed } => random_regular(n, d, seed)?,
    })
}

fn complete(n: usize) -> Adjacency {
    Adjacency::from_edges(n, false, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
}

pub const REGULAR_MAX_RESTARTS: usize = 1000;

/// Random `d`-regular simple graph.
///
/// Points of the pairing model are matched one pair at a time; a proposed
/// pair that would create a loop or a multi-edge is redrawn, and the whole
/// pairing restarts only when no admissible pair is left.
pub fn random_regular(n: usize, d: usize, seed: u64) -> Result<Adjacency, GenError> {
    if (n * d) % 2 == 1 || (d >= n && d > 0) {
        return Err(GenError::InfeasibleRegular { n, d });
    }
    for attempt in 0..REGULAR_MAX_RESTARTS {
        let mut r = rng::stream(rng::split(seed, attempt as u64));
        if let Some(pairs) = try_pairing(n, d, &mut r) {
            return Ok(Adjacency::from_edges(n, false, pairs));
        }
    }
    Err(GenError::RegularRestartsExhausted(REGULAR_MAX_RESTARTS))
}

fn try_pairing(n: usize, d: usize, r: &mut rng::SimRng) -> Option<Vec<(usize, usize)>> {
    let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    let mut present: HashSet<(usize, usize)> = HashSet::with_capacity(n * d / 2);
    let mut pairs = Vec::with_capacity(n * d / 2);
    let mut failures = 0usize;
    while !points.is_empty() {
        let len = points.len();
        let a = r.random_range(0..len);
        let mut b = r.random_range(0..len - 1);
        if b >= a {
            b += 1;
        }
        let (u, v) = (points[a], points[b]);
        let key = (u.min(v), u.max(v));
        if u != v && !present.contains(&key) {
            present.insert(key);
            pairs.push(key);
            let (hi, lo) = (a.max(b), a.min(b));
            points.swap_remove(hi);
            points.swap_remove(lo);
            failures = 0;
            continue;
        }
        failures += 1;
        if failures > 64 {
            let mut verts: Vec<usize> = points.clone();
            verts.sort_unstable();
            verts.dedup();
            let feasible = verts
                .iter()
                .enumerate()
                .any(|(k, &x)| verts[k + 1..].iter().any(|&y| !present.contains(&(x.min(y), x.max(y)))));
            if !feasible {
                return None;
            }
            failures = 0;
        }
    }
    Some(pairs)
}

/// Weighted hyperedge `w^(m)_{base, target}`; order 1 when `base` has one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedHyperedge {
    pub base: Vec<usize>,
    pub target: usize,
    pub weight: f64,
}

/// Weights of every order on `n` vertices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightMap {
    pub n: usize,
    pub entries: Vec<WeightedHyperedge>,
}

impl WeightMap {
    pub fn from_pair_matrix(r: &CsrMatrix) -> Self {
        Self {
            n: r.n(),
            entries: r.triplets().map(|(j, i, w)| WeightedHyperedge { base: vec![j], target: i, weight: w }).collect(),
        }
    }

    /// Every (hyper)edge weighted by `factor`, with no degree normalization.
    pub fn scaled(adj: &Adjacency, factor: f64) -> Self {
        let mut entries: Vec<WeightedHyperedge> =
            adj.edges().iter().map(|&(j, i)| WeightedHyperedge { base: vec![j], target: i, weight: factor }).collect();
        entries.extend(adj.hyperedges().iter().map(|h| WeightedHyperedge {
            base: h.base.clone(),
            target: h.target,
            weight: factor,
        }));
        Self { n: adj.n, entries }
    }

    pub fn max_order(&self) -> usize {
        self.entries.iter().map(|e| e.base.len()).max().unwrap_or(0)
    }

    /// The order-1 part as a pair-rate matrix (`(j, i)` entry = weight).
    pub fn pair_matrix(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(
            self.n,
            self.entries.iter().filter(|e| e.base.len() == 1).map(|e| (e.base[0], e.target, e.weight)).collect(),
        )
    }
}

/// Degree statistics behind the normalization, per order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub orders: Vec<usize>,
    pub avg_in_degree: Vec<f64>,
    pub max_in_degree: Vec<usize>,
    /// Smallest `K` with `d_i^(m) ≤ (K / q̄^(m)) d̄^(m)` for all `i, m`.
    pub upper_regularity_k: f64,
}

/// `w^(m) = a^(m) / d̄^(m)`. `qbar_per_order[m - 1]` is `q̄^(m)`, used only
/// for the upper-regularity constant.
pub fn normalize_rates(adj: &Adjacency, qbar_per_order: &[f64]) -> Result<(WeightMap, RegularityReport), GenError> {
    let orders = adj.orders();
    if orders.is_empty() {
        return Err(GenError::EmptyGraph(1));
    }
    let n = adj.n as f64;
    let mut avg = Vec::new();
    let mut maxd = Vec::new();
    let mut k = 0.0f64;
    let mut entries = Vec::new();
    for &m in &orders {
        let deg = adj.in_degrees(m);
        let dbar = deg.iter().sum::<usize>() as f64 / n;
        if dbar <= 0.0 {
            return Err(GenError::EmptyGraph(m));
        }
        let dmax = deg.iter().copied().max().unwrap_or(0);
        let qbar = qbar_per_order.get(m - 1).copied().unwrap_or(1.0);
        k = k.max(qbar * dmax as f64 / dbar);
        avg.push(dbar);
        maxd.push(dmax);
        let w = 1.0 / dbar;
        if m == 1 {
            entries.extend(adj.edges().iter().map(|&(j, i)| WeightedHyperedge { base: vec![j], target: i, weight: w }));
        } else {
            entries.extend(adj.hyperedges().iter().filter(|h| h.base.len() == m).map(|h| WeightedHyperedge {
                base: h.base.clone(),
                target: h.target,
                weight: w,
            }));
        }
    }
    Ok((
        WeightMap { n: adj.n, entries },
        RegularityReport { orders, avg_in_degree: avg, max_in_degree: maxd, upper_regularity_k: k },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_clamps_to_complete_and_empty() {
        let g = erdos_renyi(6, 10.0, 1);
        assert_eq!(g.edge_count(), 15);
        assert_eq!(erdos_renyi(6, 0.0, 1).edge_count(), 0);
    }

    #[test]
    fn er_is_seed_deterministic() {
        let a = erdos_renyi(300, 4.0, 11);
        assert_eq!(a.to_text(), erdos_renyi(300, 4.0, 11).to_text());
        assert_ne!(a.edges(), erdos_renyi(300, 4.0, 12).edges());
    }

    #[test]
    fn er_edge_count_within_chernoff_window() {
        // mean C(n,2) λ/n ≈ 19998; the window is > 5 standard deviations
        let n = 10_000;
        let g = erdos_renyi(n, 4.0, 3);
        let mean = (n * (n - 1) / 2) as f64 * 4.0 / n as f64;
        let sd = (mean * (1.0 - 4.0 / n as f64)).sqrt();
        assert!(((g.edge_count() as f64) - mean).abs() < 5.5 * sd, "{} vs {}", g.edge_count(), mean);
    }

    #[test]
    fn chung_lu_domain_and_formula() {
        assert!(matches!(chung_lu(100, 0.5, 0.0, 1), Err(GenError::ParameterDomain(_))));
        assert!(matches!(chung_lu(100, 0.1, 0.2, 1), Err(GenError::ParameterDomain(_))));
        assert!(matches!(chung_lu(100, 0.7, 0.2, 1), Err(GenError::ParameterDomain(_))));
        // direct evaluation for n = 2000, α = 0.5, γ = 0.2, pair (1, 2)
        let n = 2000f64;
        let norm: f64 = (1..=2000).map(|k| (n / k as f64).powf(0.2)).sum();
        let expect = n.powf(0.5) * n.powf(0.2) * (n / 2.0).powf(0.2) / norm;
        let got = chung_lu_probability(2000, 0.5, 0.2, 1, 2);
        assert!((got - expect).abs() < 1e-14 * expect.max(1.0));
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn named_graphs() {
        let s = named_graph(NamedGraph::DirectedStarOut, 4).unwrap();
        assert_eq!(s.edges(), &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(named_graph(NamedGraph::Complete, 3).unwrap().edges().len(), 6);
        assert_eq!(named_graph(NamedGraph::Path, 4).unwrap().edge_count(), 3);
        assert_eq!(
            named_graph(NamedGraph::RandomRegular { d: 3, seed: 1 }, 7).unwrap_err(),
            GenError::InfeasibleRegular { n: 7, d: 3 }
        );
    }

    #[test]
    fn random_regular_is_regular_and_simple() {
        for &(n, d) in &[(10, 3), (50, 4), (500, 32), (40, 39)] {
            let g = random_regular(n, d, 5).unwrap();
            assert!(g.in_degrees(1).iter().all(|&k| k == d), "n={n} d={d}");
            assert!(g.edges().iter().all(|&(a, b)| a != b));
        }
    }

    #[test]
    fn normalization() {
        let (w, rep) = normalize_rates(&complete(5), &[1.0]).unwrap();
        assert!(w.entries.iter().all(|e| (e.weight - 0.25).abs() < 1e-15));
        assert_eq!(rep.upper_regularity_k, 1.0);
        // one directed edge: d̄ = 1/N
        let g = Adjacency::from_edges(4, true, [(0, 1)]);
        let (w, rep) = normalize_rates(&g, &[1.0]).unwrap();
        assert_eq!(rep.avg_in_degree, vec![0.25]);
        assert_eq!(w.entries[0].weight, 4.0);
        assert_eq!(rep.upper_regularity_k, 4.0);
        assert_eq!(normalize_rates(&Adjacency::empty(3, false), &[1.0]).unwrap_err(), GenError::EmptyGraph(1));
    }

    #[test]
    fn text_round_trip() {
        let g = erdos_renyi(30, 3.0, 9).with_triangle_hyperedges();
        let back = Adjacency::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
    }
}
