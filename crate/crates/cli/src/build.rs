//! Turns spec blocks into graphs, rate systems and initial laws.

use ipsim_core::generators::{
    chung_lu, erdos_renyi, named_graph, normalize_rates, random_regular, Adjacency, NamedGraph, WeightMap,
};
use ipsim_core::models::{
    build_joint_si_flip, build_linf_counterexample, build_sais, build_simplicial_sis, build_triangle_flip_capped,
    FlipKernel, InitialLaw, ModelError, FLIP_HYPEREDGE_CAP, JOINT_ABSENT, JOINT_I, JOINT_PRESENT, JOINT_S,
};
use ipsim_core::rng::split;
use ipsim_core::ruleset::parse_rule_set;
use ipsim_core::RateSystem;

use crate::error::CliError;
use crate::spec::{ExperimentSpec, GraphBlock, GraphKind, InitBlock, ModelBlock, ModelKind, Scaling};

/// A model ready to run.
pub struct Built {
    pub system: RateSystem,
    pub law: InitialLaw,
    /// Vertex count of the underlying graph when agents are its edges.
    pub flip_vertices: Option<usize>,
}

fn need<T: Copy>(v: Option<T>, what: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::SpecInvalid(format!("missing `{what}`")))
}

pub fn build_graph(g: &GraphBlock, default_seed: u64) -> Result<Adjacency, CliError> {
    let seed = g.seed.unwrap_or(default_seed);
    let n = g.n;
    let adj = match g.kind {
        GraphKind::ErdosRenyi => erdos_renyi(n, need(g.lambda, "graph.lambda")?, seed),
        GraphKind::ChungLu => {
            chung_lu(n, need(g.alpha, "graph.alpha")?, need(g.gamma, "graph.gamma")?, seed).map_err(CliError::spec)?
        }
        GraphKind::Complete => named_graph(NamedGraph::Complete, n).map_err(CliError::spec)?,
        GraphKind::DirectedStarOut => named_graph(NamedGraph::DirectedStarOut, n).map_err(CliError::spec)?,
        GraphKind::Path => named_graph(NamedGraph::Path, n).map_err(CliError::spec)?,
        GraphKind::RandomRegular => random_regular(n, need(g.d, "graph.d")?, seed).map_err(CliError::spec)?,
        GraphKind::File => {
            let path = g.path.as_ref().ok_or_else(|| CliError::spec("missing `graph.path`"))?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Adjacency::from_text(&text).map_err(CliError::spec)?
        }
    };
    Ok(if g.triangles { adj.with_triangle_hyperedges() } else { adj })
}

pub fn weights(g: &GraphBlock, adj: &Adjacency) -> Result<WeightMap, CliError> {
    match g.scaling {
        Scaling::AverageDegree => {
            let qbar = vec![1.0; adj.orders().into_iter().max().unwrap_or(1)];
            Ok(normalize_rates(adj, &qbar).map_err(CliError::spec)?.0)
        }
        Scaling::Factor => {
            let factor = match (g.factor, g.factor_exponent) {
                (Some(f), None) => f,
                (None, Some(e)) => (adj.n as f64).powf(-e),
                _ => {
                    return Err(CliError::spec("scaling = \"factor\" needs exactly one of `factor`, `factor_exponent`"))
                }
            };
            Ok(WeightMap::scaled(adj, factor))
        }
    }
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::TooLarge { .. } => CliError::cap("model", e),
        other => CliError::spec(other),
    }
}

pub fn build(spec: &ExperimentSpec) -> Result<Built, CliError> {
    let m = spec.model.as_ref().ok_or_else(|| CliError::spec("missing [model] block"))?;
    build_model(m, spec.graph.as_ref(), &spec.init, split(spec.seed, u64::MAX))
}

pub fn build_model(
    m: &ModelBlock,
    graph: Option<&GraphBlock>,
    init: &InitBlock,
    graph_seed: u64,
) -> Result<Built, CliError> {
    let graph_weights = || -> Result<WeightMap, CliError> {
        let g = graph.ok_or_else(|| CliError::spec("model needs a [graph] block"))?;
        weights(g, &build_graph(g, graph_seed)?)
    };
    let (system, law, flip_vertices) = match m.kind {
        ModelKind::Sis | ModelKind::SimplicialSis => {
            let w = graph_weights()?;
            if m.kind == ModelKind::Sis && w.max_order() > 1 {
                return Err(CliError::spec("model `sis` takes pair interactions only; use `simplicial-sis`"));
            }
            let sys = build_simplicial_sis(&w, &vec![m.recovery; w.n]).map_err(model_err)?;
            let law = uniform_law(&sys, init)?;
            (sys, law, None)
        }
        ModelKind::Sais => {
            let w = graph_weights()?;
            if w.max_order() > 1 {
                return Err(CliError::spec("model `sais` takes pair interactions only"));
            }
            let r = w.pair_matrix();
            let sys = build_sais(
                &r,
                &r,
                m.beta_s.unwrap_or(1.0),
                m.beta_a.unwrap_or(0.5),
                m.kappa.unwrap_or(1.0),
                m.gamma.unwrap_or(m.recovery),
            )
            .map_err(model_err)?;
            let law = uniform_law(&sys, init)?;
            (sys, law, None)
        }
        ModelKind::TriangleFlip => {
            let n = need(m.n, "model.n")?;
            let k = m.clique_size.unwrap_or(3);
            let cap = m.hyperedge_cap.unwrap_or(FLIP_HYPEREDGE_CAP);
            let sys = build_triangle_flip_capped(n, k, &FlipKernel::triangle_removal(), cap).map_err(model_err)?;
            let law = if init.probs.is_empty() {
                InitialLaw::deterministic(2, &vec![1; sys.n_vertices()])
            } else {
                uniform_law(&sys, init)?
            };
            (sys, law, Some(n))
        }
        ModelKind::JointSiFlip => {
            let n = need(m.n, "model.n")?;
            let sys = build_joint_si_flip(n).map_err(model_err)?;
            let p_i = init.probs.get("I").copied().unwrap_or(0.1);
            let p_e = init.probs.get("1").copied().unwrap_or(1.0);
            if !(0.0..=1.0).contains(&p_i) || !(0.0..=1.0).contains(&p_e) {
                return Err(CliError::spec("joint model probabilities must lie in [0, 1]"));
            }
            let rows = (0..sys.n_vertices())
                .map(|v| {
                    let mut row = vec![0.0; 4];
                    if v < n {
                        row[JOINT_S] = 1.0 - p_i;
                        row[JOINT_I] = p_i;
                    } else {
                        row[JOINT_PRESENT] = p_e;
                        row[JOINT_ABSENT] = 1.0 - p_e;
                    }
                    row
                })
                .collect();
            let law = InitialLaw::new(4, rows).map_err(model_err)?;
            (sys, law, None)
        }
        ModelKind::LinfCounterexample => {
            let ce = build_linf_counterexample(&graph_weights()?).map_err(model_err)?;
            (ce.system, ce.law, None)
        }
        ModelKind::Rules => {
            let path = m.path.as_ref().ok_or_else(|| CliError::spec("missing `model.path`"))?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let sys = parse_rule_set(&text).map_err(CliError::spec)?;
            let law = uniform_law(&sys, init)?;
            (sys, law, None)
        }
    };
    Ok(Built { system, law, flip_vertices })
}

/// The same row for every vertex, from state names.
pub fn uniform_law(system: &RateSystem, init: &InitBlock) -> Result<InitialLaw, CliError> {
    let space = system.state_space();
    if init.probs.is_empty() {
        return Err(CliError::spec("missing [init] probs"));
    }
    let mut row = vec![0.0; space.len()];
    for (name, &p) in &init.probs {
        let s = space.index(name).ok_or_else(|| CliError::spec(format!("unknown state `{name}` in init.probs")))?;
        row[s] = p;
    }
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CliError::spec("init.probs must be a probability distribution"));
    }
    InitialLaw::new(space.len(), vec![row; system.n_vertices()]).map_err(CliError::spec)
}
