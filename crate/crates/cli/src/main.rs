use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ipsim_cli::build::{build, build_graph, uniform_law, Built};
use ipsim_cli::run::{bounds_csv, default_output, run_experiment, write_file};
use ipsim_cli::spec::{ExperimentSpec, GraphBlock, GraphKind, InitBlock, Preset, Scaling};
use ipsim_cli::sweep::run_sweep;
use ipsim_cli::CliError;
use ipsim_core::backward::{estimate_collision_prob, estimate_ghost_prob, sample_information_set, DEFAULT_SIZE_CAP};
use ipsim_core::forward::estimate_marginals;
use ipsim_core::nimfa::{fmt17, integrate_nimfa};
use ipsim_core::ode::Dopri45;
use ipsim_core::oracle::{build_generator_capped, oracle_solver, solve_with, ORACLE_STATE_CAP};
use ipsim_core::ruleset::{parse_rule_set, write_rule_set};

#[derive(Parser)]
#[command(
    name = "ipsim",
    version,
    about = "Interacting particle systems: simulation, mean-field ODEs, exact oracles and bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Base seed; overrides the spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo replicas; overrides the spec.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph in adjacency text format.
    Generate(GenerateArgs),
    /// Build the model of a spec and print its rule set.
    Model { spec: PathBuf },
    /// Forward Monte Carlo marginals.
    Simulate(ModelArgs),
    /// Integrate the NIMFA ODE.
    Nimfa(ModelArgs),
    /// Exact marginals from the master equation.
    Oracle(ModelArgs),
    /// Backward constructions: ghost probability, collision probability or one information set.
    Backward(BackwardArgs),
    /// Table of closed-form bounds.
    Bounds(ModelArgs),
    /// Run an experiment spec and write its result bundle.
    Experiment {
        spec: PathBuf,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
    },
    /// Run a spec once per value of a parameter.
    Sweep {
        spec: PathBuf,
        /// Dotted parameter path, e.g. `graph.n`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_graph_kind)]
    kind: GraphKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    /// Add triangle hyperedges.
    #[arg(long)]
    triangles: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Rule-set file.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    rules: Option<PathBuf>,
    /// Experiment spec whose graph, model and init blocks define the system.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Per-vertex initial law, e.g. `S=0.5,I=0.5`.
    #[arg(long)]
    init: Option<String>,
    /// Comma-separated times.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    grid: Vec<f64>,
}

#[derive(Args)]
struct BackwardArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_parser = ["ghost", "collision", "infoset"], default_value = "ghost")]
    what: String,
    #[arg(long, default_value_t = 0)]
    root: usize,
    /// Second vertex for `collision`.
    #[arg(long)]
    j: Option<usize>,
}

fn parse_graph_kind(s: &str) -> Result<GraphKind, String> {
    toml::Value::String(s.to_string()).try_into().map_err(|_| format!("unknown graph kind `{s}`"))
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    toml::Value::String(s.to_string()).try_into().map_err(|_| format!("unknown preset `{s}`"))
}

fn parse_init(text: &str) -> Result<InitBlock, CliError> {
    let mut init = InitBlock::default();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) =
            part.split_once('=').ok_or_else(|| CliError::spec(format!("init entry `{part}` is not `state=p`")))?;
        let p: f64 = v.trim().parse().map_err(|_| CliError::spec(format!("bad probability `{v}`")))?;
        init.probs.insert(k.trim().to_string(), p);
    }
    Ok(init)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, CliError> {
    ExperimentSpec::from_toml(&read(path)?)
}

fn load_model(args: &ModelArgs, need_law: bool) -> Result<Built, CliError> {
    let init = args.init.as_deref().map(parse_init).transpose()?;
    if let Some(path) = &args.spec {
        let mut spec = load_spec(path)?;
        if let Some(init) = init {
            spec.init = init;
        }
        return build(&spec);
    }
    let path = args.rules.as_ref().ok_or_else(|| CliError::spec("one of --rules, --spec is required"))?;
    let system = parse_rule_set(&read(path)?).map_err(CliError::spec)?;
    let law = match init {
        Some(init) => uniform_law(&system, &init)?,
        None if need_law => return Err(CliError::spec("--init is required with --rules")),
        None => {
            let mut row = vec![0.0; system.n_states()];
            row[0] = 1.0;
            ipsim_core::models::InitialLaw::new(system.n_states(), vec![row; system.n_vertices()])
                .map_err(CliError::spec)?
        }
    };
    Ok(Built { system, law, flip_vertices: None })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::io("stdout", e)),
    }
}

fn threads(cli: &Cli) -> usize {
    cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    let replicas = cli.replicas.unwrap_or(1000);
    let nthreads = threads(&cli);
    rayon::ThreadPoolBuilder::new().num_threads(nthreads).build_global().map_err(|e| CliError::Run(e.to_string()))?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Generate(g) => {
            let block = GraphBlock {
                kind: g.kind,
                n: g.n,
                lambda: g.lambda,
                alpha: g.alpha,
                gamma: g.gamma,
                d: g.d,
                path: None,
                triangles: g.triangles,
                scaling: Scaling::AverageDegree,
                factor: None,
                factor_exponent: None,
                seed: Some(seed),
            };
            emit(out, &build_graph(&block, seed)?.to_text())
        }
        Command::Model { spec } => {
            let spec = load_spec(spec)?;
            spec.model.as_ref().ok_or_else(|| CliError::spec("missing [model] block"))?;
            emit(out, &write_rule_set(&build(&spec)?.system))
        }
        Command::Simulate(m) => {
            let b = load_model(m, true)?;
            let est = estimate_marginals(&b.system, &b.law, &m.grid, replicas, seed).map_err(CliError::spec)?;
            emit(out, &est.to_csv(b.system.state_space().names()))
        }
        Command::Nimfa(m) => {
            let b = load_model(m, true)?;
            let sol = integrate_nimfa(&b.system, b.law.marginals(), &m.grid, &Dopri45::with_tolerances(1e-10, 1e-12))
                .map_err(|e| CliError::Run(e.to_string()))?;
            emit(out, &sol.to_csv(b.system.state_space().names()))
        }
        Command::Oracle(m) => {
            let b = load_model(m, true)?;
            let gen = build_generator_capped(&b.system, ORACLE_STATE_CAP).map_err(|e| CliError::cap("oracle", e))?;
            let sol = solve_with(&gen, &b.law, &m.grid, &oracle_solver()).map_err(|e| CliError::Run(e.to_string()))?;
            let names = b.system.state_space().names();
            let mut text = String::from("t,vertex,state,value,std_error,replicas,seed_base\n");
            for (k, &t) in m.grid.iter().enumerate() {
                for (idx, v) in sol.marginals(k).iter().enumerate() {
                    text.push_str(&format!(
                        "{},{},{},{},0,0,0\n",
                        fmt17(t),
                        idx / names.len(),
                        names[idx % names.len()],
                        fmt17(*v)
                    ));
                }
            }
            emit(out, &text)
        }
        Command::Backward(a) => {
            let b = load_model(&a.model, false)?;
            let n = b.system.n_vertices();
            if a.root >= n || a.j.is_some_and(|j| j >= n) {
                return Err(CliError::spec(format!("vertex out of range for {n} vertices")));
            }
            let mut text = String::new();
            for &t in &a.model.grid {
                let json = match a.what.as_str() {
                    "ghost" => serde_json::to_string(
                        &estimate_ghost_prob(&b.system, a.root, t, replicas, seed).map_err(CliError::spec)?,
                    ),
                    "collision" => {
                        let j = a.j.ok_or_else(|| CliError::spec("--j is required for collision"))?;
                        serde_json::to_string(
                            &estimate_collision_prob(&b.system, a.root, j, t, replicas, seed)
                                .map_err(CliError::spec)?,
                        )
                    }
                    _ => serde_json::to_string(&sample_information_set(&b.system, a.root, t, seed, DEFAULT_SIZE_CAP)),
                }
                .map_err(|e| CliError::Run(e.to_string()))?;
                text.push_str(&json);
                text.push('\n');
            }
            emit(out, &text)
        }
        Command::Bounds(m) => {
            let b = load_model(m, false)?;
            emit(out, &bounds_csv(&b.system, &m.grid))
        }
        Command::Experiment { spec, preset } => {
            let mut s = load_spec(spec)?;
            if let Some(p) = preset {
                s.preset = Some(*p);
            }
            if let Some(x) = cli.seed {
                s.seed = x;
            }
            if let Some(r) = cli.replicas {
                s.replicas = r;
            }
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| default_output(&s));
            let bundle = run_experiment(&s, &dir, nthreads)?;
            eprintln!("wrote {} files to {}", bundle.files.len() + 1, dir.display());
            Ok(())
        }
        Command::Sweep { spec, param, values } => {
            let mut template: toml::Value = toml::from_str(&read(spec)?).map_err(CliError::spec)?;
            if let Some(table) = template.as_table_mut() {
                if let Some(x) = cli.seed {
                    table.insert("seed".into(), toml::Value::Integer(x as i64));
                }
                if let Some(r) = cli.replicas {
                    table.insert("replicas".into(), toml::Value::Integer(r as i64));
                }
            }
            let base = ExperimentSpec::from_value(template.clone())?;
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| default_output(&base).join("sweep"));
            let bundle = run_sweep(&template, param, values, &dir, nthreads)?;
            eprintln!("wrote {} files to {}", bundle.files.len(), dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
