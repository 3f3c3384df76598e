//! Experiment execution and the on-disk result bundle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use ipsim_core::backward::{estimate_blowup_functional, BackwardSampler, DEFAULT_POP_CAP, DEFAULT_SIZE_CAP};
use ipsim_core::bounds::{bound_table, ghost_upper_bk, l1_bounds, linf_lower_general, rate_summary};
use ipsim_core::forward::{estimate_marginals, homomorphism_density, BitGraph, ForwardSimulator, Motif};
use ipsim_core::generators::{normalize_rates, random_regular, WeightMap};
use ipsim_core::models::{build_linf_counterexample, build_sis, InitialLaw, EDGE_PRESENT, INFECTED, SUSCEPTIBLE};
use ipsim_core::nimfa::{fmt17, integrate_nimfa};
use ipsim_core::ode::Dopri45;
use ipsim_core::oracle::{build_generator_capped, oracle_solver, solve_with, ORACLE_STATE_CAP};
use ipsim_core::rng::split;
use ipsim_core::stats::{binomial_report, loglog_slope, mean_report, replicate, replicate_counts, variance_report};
use ipsim_core::{pair_rate_matrix, CsrMatrix};

use crate::build::{build, Built};
use crate::error::CliError;
use crate::spec::{ExperimentSpec, Preset, Quantity};

/// Named CSV outputs plus the per-quantity truncation fractions.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Bundle {
    pub files: BTreeMap<String, String>,
    pub truncation: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    name: &'a str,
    version: &'static str,
    seed: u64,
    replicas: usize,
    threads: usize,
    t_grid: &'a [f64],
    quantities: Vec<&'static str>,
    preset: Option<Preset>,
    files: Vec<&'a String>,
    truncation: &'a BTreeMap<String, f64>,
    wall_time_seconds: f64,
}

fn nimfa_solver() -> Dopri45 {
    Dopri45::with_tolerances(1e-10, 1e-12)
}

fn seed_for(spec: &ExperimentSpec, q: Quantity) -> u64 {
    split(spec.seed, q as u64)
}

/// Computes every requested quantity in memory.
pub fn compute(spec: &ExperimentSpec) -> Result<Bundle, CliError> {
    spec.validate()?;
    if let Some(p) = spec.preset {
        return run_preset(spec, p);
    }
    let built = build(spec)?;
    let mut bundle = Bundle::default();
    for &q in &spec.quantities {
        let (csv, trunc) = compute_quantity(spec, &built, q)?;
        bundle.files.insert(format!("{}.csv", q.name()), csv);
        if let Some(f) = trunc {
            bundle.truncation.insert(q.name().to_string(), f);
        }
    }
    Ok(bundle)
}

/// Runs `spec` with `threads` workers and writes the bundle and `manifest.json` under `out`.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path, threads: usize) -> Result<Bundle, CliError> {
    let start = Instant::now();
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Run(e.to_string()))?;
    let bundle = pool.install(|| compute(spec))?;
    write_bundle(&bundle, out)?;
    let names: Vec<&String> = bundle.files.keys().collect();
    let manifest = Manifest {
        name: &spec.name,
        version: env!("CARGO_PKG_VERSION"),
        seed: spec.seed,
        replicas: spec.replicas,
        threads: pool.current_num_threads(),
        t_grid: &spec.t_grid,
        quantities: spec.quantities.iter().map(|q| q.name()).collect(),
        preset: spec.preset,
        files: names,
        truncation: &bundle.truncation,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Run(e.to_string()))?;
    write_file(&out.join("manifest.json"), &json)?;
    Ok(bundle)
}

pub fn write_bundle(bundle: &Bundle, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    for (name, text) in &bundle.files {
        write_file(&out.join(name), text)?;
    }
    Ok(())
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn default_output(spec: &ExperimentSpec) -> PathBuf {
    spec.output.clone().unwrap_or_else(|| PathBuf::from("out").join(&spec.name))
}

fn subset(spec: &ExperimentSpec, n: usize) -> Vec<usize> {
    (0..spec.options.subset_size.unwrap_or(n).min(n)).collect()
}

fn state_index(spec: &ExperimentSpec, built: &Built) -> Result<usize, CliError> {
    let space = built.system.state_space();
    match &spec.options.state {
        Some(name) => space.index(name).ok_or_else(|| CliError::spec(format!("unknown state `{name}`"))),
        None => space.index("I").ok_or_else(|| CliError::spec("options.state is required for this model")),
    }
}

fn check_vertex(v: usize, n: usize) -> Result<usize, CliError> {
    if v < n {
        Ok(v)
    } else {
        Err(CliError::spec(format!("vertex {v} out of range for {n} vertices")))
    }
}

fn compute_quantity(spec: &ExperimentSpec, built: &Built, q: Quantity) -> Result<(String, Option<f64>), CliError> {
    let sys = &built.system;
    let law = &built.law;
    let n = sys.n_vertices();
    let names = sys.state_space().names().to_vec();
    let grid = &spec.t_grid;
    let seed = seed_for(spec, q);
    let reps = spec.replicas;
    let run_err = |e: &dyn std::fmt::Display| CliError::Run(format!("{}: {e}", q.name()));
    match q {
        Quantity::Marginals => {
            let est = estimate_marginals(sys, law, grid, reps, seed).map_err(|e| run_err(&e))?;
            Ok((est.to_csv(&names), None))
        }
        Quantity::Nimfa => {
            let sol = integrate_nimfa(sys, law.marginals(), grid, &nimfa_solver()).map_err(|e| run_err(&e))?;
            Ok((sol.to_csv(&names), None))
        }
        Quantity::Oracle => {
            let cap = spec.options.oracle_cap.unwrap_or(ORACLE_STATE_CAP);
            let gen = build_generator_capped(sys, cap).map_err(|e| CliError::cap("oracle", e))?;
            let sol = solve_with(&gen, law, grid, &oracle_solver()).map_err(|e| run_err(&e))?;
            let mut out = String::from("t,vertex,state,value,std_error,replicas,seed_base\n");
            for (k, &t) in grid.iter().enumerate() {
                let y = sol.marginals(k);
                for (idx, v) in y.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},0,0,0",
                        fmt17(t),
                        idx / names.len(),
                        names[idx % names.len()],
                        fmt17(*v)
                    );
                }
            }
            Ok((out, None))
        }
        Quantity::SubpopVariance => {
            let m = subset(spec, n);
            if m.is_empty() {
                return Err(CliError::spec("subpopulation is empty"));
            }
            let s = state_index(spec, built)?;
            let sim = ForwardSimulator::new(sys);
            let mut out = String::from("t,m_size,mean,mean_std_error,variance,variance_std_error\n");
            for (k, &t) in grid.iter().enumerate() {
                let sk = split(seed, k as u64);
                let xs = replicate(reps, sk, |_, rng| {
                    let sigma = sim.sample_at(law, t, rng);
                    m.iter().filter(|&&i| sigma[i] as usize == s).count() as f64 / m.len() as f64
                });
                let mean = mean_report(&xs, sk);
                let var = variance_report(&xs, sk);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    fmt17(t),
                    m.len(),
                    fmt17(mean.value),
                    fmt17(mean.std_error),
                    fmt17(var.value),
                    fmt17(var.std_error)
                );
            }
            Ok((out, None))
        }
        Quantity::Collision => {
            let pairs = spec.options.pairs.clone().unwrap_or_else(|| vec![(0, 1.min(n.saturating_sub(1)))]);
            let cap = spec.options.size_cap.unwrap_or(DEFAULT_SIZE_CAP);
            let sampler = BackwardSampler::new(sys);
            let mut out = String::from("t,i,j,value,std_error\n");
            let (mut truncated, mut total) = (0usize, 0usize);
            for (k, &t) in grid.iter().enumerate() {
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let (i, j) = (check_vertex(i, n)?, check_vertex(j, n)?);
                    let sk = split(seed, (k * pairs.len() + p) as u64);
                    let hits = replicate(reps, sk, |_, rng| {
                        let hi = sampler.information_set(i, t, cap, rng);
                        let hj = sampler.information_set(j, t, cap, rng);
                        let mut mark = vec![false; n];
                        hi.joins.iter().for_each(|&(_, v)| mark[v] = true);
                        let hit = i == j || hj.joins.iter().any(|&(_, v)| mark[v]);
                        (hit, hi.truncated || hj.truncated)
                    });
                    truncated += hits.iter().filter(|h| h.1).count();
                    total += hits.len();
                    let r = binomial_report(hits.iter().filter(|h| h.0).count() as u64, reps, sk);
                    let _ = writeln!(out, "{},{i},{j},{},{}", fmt17(t), fmt17(r.value), fmt17(r.std_error));
                }
            }
            Ok((out, Some(truncated as f64 / total.max(1) as f64)))
        }
        Quantity::BlowupFunctional => {
            let m = subset(spec, n);
            let mut out = String::from("t,m_size,value,std_error\n");
            for (k, &t) in grid.iter().enumerate() {
                let r = estimate_blowup_functional(sys, &m, t, reps, split(seed, k as u64)).map_err(CliError::spec)?;
                let _ = writeln!(out, "{},{},{},{}", fmt17(t), m.len(), fmt17(r.value), fmt17(r.std_error));
            }
            Ok((out, None))
        }
        Quantity::Ghost => {
            let roots = spec.options.roots.clone().unwrap_or_else(|| vec![0]);
            let cap = spec.options.pop_cap.unwrap_or(DEFAULT_POP_CAP);
            let pair = pair_rate_matrix(sys).ok().filter(|p| p.symmetric);
            let sampler = BackwardSampler::new(sys);
            let mut out = String::from("t,root,value,std_error,bk_bound\n");
            let (mut truncated, mut total) = (0usize, 0usize);
            for (k, &t) in grid.iter().enumerate() {
                for (p, &root) in roots.iter().enumerate() {
                    let root = check_vertex(root, n)?;
                    let sk = split(seed, (k * roots.len() + p) as u64);
                    let samples = replicate(reps, sk, |_, rng| {
                        let b = sampler.branching(law, root, t, cap, rng);
                        (b.ghost || b.truncated, b.truncated)
                    });
                    truncated += samples.iter().filter(|s| s.1).count();
                    total += samples.len();
                    let r = binomial_report(samples.iter().filter(|s| s.0).count() as u64, reps, sk);
                    let bk = match &pair {
                        Some(p) => fmt17(ghost_upper_bk(&p.matrix, root, t, 1e-12).map_err(|e| run_err(&e))?.value),
                        None => String::new(),
                    };
                    let _ = writeln!(out, "{},{root},{},{},{bk}", fmt17(t), fmt17(r.value), fmt17(r.std_error));
                }
            }
            Ok((out, Some(truncated as f64 / total.max(1) as f64)))
        }
        Quantity::Bounds => Ok((bounds_csv(sys, grid), None)),
        Quantity::Homdensity => {
            let nv = built
                .flip_vertices
                .ok_or_else(|| CliError::spec("homdensity needs a model whose agents are edges (triangle-flip)"))?;
            let motif = match spec.options.motif.as_deref().unwrap_or("triangle") {
                "edge" => Motif::edge(),
                "triangle" => Motif::triangle(),
                other => match other.strip_prefix("clique").and_then(|k| k.parse().ok()) {
                    Some(k) => Motif::clique(k),
                    None => return Err(CliError::spec(format!("unknown motif `{other}`"))),
                },
            };
            let samples = spec.options.hom_samples.unwrap_or(10_000);
            let sim = ForwardSimulator::new(sys);
            let mut out = String::from("t,mean,mean_std_error,variance,variance_std_error\n");
            for (k, &t) in grid.iter().enumerate() {
                let sk = split(seed, k as u64);
                let xs = replicate(reps, sk, |r, rng| {
                    let sigma = sim.sample_at(law, t, rng);
                    let g = BitGraph::from_edge_states(nv, &sigma, EDGE_PRESENT as u16);
                    homomorphism_density(&g, &motif, samples, split(sk, r as u64)).map(|h| h.value)
                });
                let xs = xs.into_iter().collect::<Result<Vec<_>, _>>().map_err(CliError::spec)?;
                let mean = mean_report(&xs, sk);
                let var = variance_report(&xs, sk);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt17(t),
                    fmt17(mean.value),
                    fmt17(mean.std_error),
                    fmt17(var.value),
                    fmt17(var.std_error)
                );
            }
            Ok((out, None))
        }
    }
}

/// Rate summary rows (empty `t`) followed by every applicable bound.
pub fn bounds_csv(sys: &ipsim_core::RateSystem, grid: &[f64]) -> String {
    let s = rate_summary(sys);
    let mut out = String::from("name,t,value\n");
    let mut row = |name: &str, t: Option<f64>, v: f64| {
        let _ = writeln!(out, "{name},{},{}", t.map(fmt17).unwrap_or_default(), fmt17(v));
    };
    row("n", None, s.n as f64);
    row("max_order", None, s.max_order as f64);
    row("delta_max", None, s.delta_max);
    row("rtilde_max", None, s.rtilde_max);
    if let Some(x) = s.norm2 {
        row("norm2", None, x);
    }
    if let Some(x) = s.theta {
        row("theta", None, x);
    }
    for b in bound_table(sys, grid) {
        row(&b.name, b.inputs.get("t").copied(), b.value);
    }
    out
}

fn run_preset(spec: &ExperimentSpec, preset: Preset) -> Result<Bundle, CliError> {
    let mut bundle = Bundle::default();
    match preset {
        Preset::LinfCounterexample => {
            let rtilde = spec.options.rtilde.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
            let mut out = String::from("rtilde_max,measured,linf_lower_general,gap\n");
            for rt in rtilde {
                if !(rt > 0.0 && rt.is_finite()) {
                    return Err(CliError::spec("rtilde values must be positive"));
                }
                let r = CsrMatrix::from_dense(&[vec![0.0, rt, 0.0], vec![0.3, 0.0, 0.2], vec![0.1, 0.0, 0.0]]);
                let ce = build_linf_counterexample(&WeightMap::from_pair_matrix(&r)).map_err(CliError::spec)?;
                let gen =
                    build_generator_capped(&ce.system, ORACLE_STATE_CAP).map_err(|e| CliError::cap("oracle", e))?;
                let y = solve_with(&gen, &ce.law, &[1.0], &oracle_solver()).map_err(CliError::spec)?.marginals(0);
                let z =
                    integrate_nimfa(&ce.system, ce.law.marginals(), &[1.0], &nimfa_solver()).map_err(CliError::spec)?;
                let ns = ce.system.n_states();
                let measured =
                    (0..ns).map(|s| (y[ce.target * ns + s] - z.get(0, ce.target, s)).abs()).fold(0.0, f64::max);
                let lower = linf_lower_general(ce.rtilde_max).value;
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt17(rt),
                    fmt17(measured),
                    fmt17(lower),
                    fmt17((measured - lower).abs())
                );
            }
            bundle.files.insert("linf_counterexample.csv".into(), out);
        }
        Preset::RegularScaling => {
            let n = spec.graph.as_ref().map(|g| g.n).filter(|&n| n > 0).unwrap_or(500);
            let degrees = spec.options.degrees.clone().unwrap_or_else(|| vec![4, 8, 16, 32]);
            let reps = spec.replicas;
            if reps < 3 {
                return Err(CliError::spec("regular-scaling needs at least 3 replicas"));
            }
            let mut out = String::from("d,l1_error,std_error,lower_graph,upper_delta\n");
            let mut errs = Vec::new();
            for (k, &d) in degrees.iter().enumerate() {
                let adj = random_regular(n, d, split(spec.seed, 1000 + k as u64)).map_err(CliError::spec)?;
                let r = normalize_rates(&adj, &[1.0]).map_err(CliError::spec)?.0.pair_matrix();
                let sys = build_sis(&r, &vec![0.0; n]).map_err(CliError::spec)?;
                let law = InitialLaw::bernoulli(n, 2, INFECTED, SUSCEPTIBLE, 0.5).map_err(CliError::spec)?;
                let z = integrate_nimfa(&sys, law.marginals(), &[1.0], &nimfa_solver()).map_err(CliError::spec)?;
                let sim = ForwardSimulator::new(&sys);
                let acc = replicate_counts(reps, split(spec.seed, k as u64), 2, |_, rng, acc| {
                    let x = sim.sample_at(&law, 1.0, rng).iter().filter(|&&s| s as usize == INFECTED).count() as u64;
                    acc[0] += x;
                    acc[1] += x * x;
                });
                let rf = reps as f64;
                let mean = acc[0] as f64 / rf;
                let var = (acc[1] as f64 - rf * mean * mean) / (rf - 1.0);
                let zbar = (0..n).map(|i| z.get(0, i, INFECTED)).sum::<f64>() / n as f64;
                // NIMFA over-estimates SI infection at every vertex, so the l1 error is z̄ - ȳ
                let err = zbar - mean / n as f64;
                let se = (var / rf).sqrt() / n as f64;
                let b = l1_bounds(&r, 1.0);
                let lo = b.lower_graph.map(|x| fmt17(x.value)).unwrap_or_default();
                let hi = b.upper_delta.map(|x| fmt17(x.value)).unwrap_or_default();
                let _ = writeln!(out, "{d},{},{},{lo},{hi}", fmt17(err), fmt17(se));
                errs.push(err);
            }
            let ds: Vec<f64> = degrees.iter().map(|&d| d as f64).collect();
            let slope =
                if errs.len() >= 2 && errs.iter().all(|&e| e > 0.0) { loglog_slope(&ds, &errs) } else { f64::NAN };
            bundle.files.insert("regular_scaling.csv".into(), out);
            bundle.files.insert("regular_scaling_fit.csv".into(), format!("slope\n{}\n", fmt17(slope)));
        }
    }
    Ok(bundle)
}
