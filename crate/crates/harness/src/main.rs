use std::path::{Path, PathBuf};
use std::process::ExitCode;

use actc_core::allocation::{self, AllocationProblem};
use actc_core::topology::{self, averaging_rule, bollobas_riordan, relative_degree_rule, Adjacency};
use actc_harness::config::FamilyConfig;
use actc_harness::output::{self, kkt_json, theory_json, RunStamp};
use actc_harness::scenario::family;
use actc_harness::{db, preset, simulate, HarnessError, Scenario, ScenarioConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "actc", version, about = "Compressed diffusion learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV/JSON outputs.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Monte Carlo runs (defaults to the config value).
        #[arg(long)]
        runs: Option<usize>,
        /// Master seed (defaults to the config value).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print steady-state bounds for every curve of a scenario as JSON.
    Theory {
        #[command(flatten)]
        source: Source,
    },
    /// Solve a resource allocation problem.
    Allocate(AllocateArgs),
    /// Generate or check topologies.
    #[command(subcommand)]
    Topology(TopologyCommand),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file (.json or .toml).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario: fig1, fig3_quantizer, fig3_sparsifier.
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, HarnessError> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ScenarioConfig::load(path),
            (None, Some(name)) => preset(name),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Quantizer,
    Sparsifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Averaging,
    RelativeDegree,
}

#[derive(Args)]
struct AllocateArgs {
    /// Take π, d and the budget from a scenario (true values).
    #[arg(long, conflicts_with_all = ["preset", "input"])]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    preset: Option<String>,
    /// JSON file with `perron` and `distortions`, or a simulation's allocation.json.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    x_min: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    /// Comma-separated Perron weights.
    #[arg(long, value_delimiter = ',')]
    perron: Option<Vec<f64>>,
    /// Comma-separated distortion values.
    #[arg(long, value_delimiter = ',')]
    distortions: Option<Vec<f64>>,
    /// Redistribute leftover integer budget after flooring.
    #[arg(long)]
    repair: bool,
}

#[derive(Subcommand)]
enum TopologyCommand {
    /// Bollobás–Riordan graph plus a combination rule.
    Gen {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 2)]
        attachment_edges: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "averaging")]
        rule: RuleArg,
        /// Write the combination matrix (CSV) here.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Write the edge list here.
        #[arg(long)]
        edges: Option<PathBuf>,
    },
    /// Validate a combination matrix (or an edge list with a rule).
    Check {
        #[arg(long, conflicts_with = "edges")]
        matrix: Option<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "averaging")]
        rule: RuleArg,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("ACTC_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: ACTC_THREADS must be a positive integer, got `{threads}`");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Simulate { source, runs, seed, out } => run_simulate(source.load()?, runs, seed, &out),
        Command::Theory { source } => run_theory(source.load()?),
        Command::Allocate(args) => run_allocate(&args),
        Command::Topology(cmd) => run_topology(cmd),
    }
}

fn run_simulate(mut config: ScenarioConfig, runs: Option<usize>, seed: Option<u64>, out: &Path) -> Result<(), HarnessError> {
    if let Some(r) = runs {
        config.runs = r;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let scenario = Scenario::build(&config)?;
    let result = simulate(&scenario, config.runs, config.seed)?;
    let stamp = RunStamp {
        config_hash: config.hash(),
        seed: config.seed,
        runs: config.runs,
    };
    let written = output::write_outputs(out, &scenario, &result, &stamp)?;
    for c in &result.curves {
        let mse = c.result.mean.steady_state_mse();
        let level = db(mse).map(|v| format!("{v:.2} dB")).unwrap_or_else(|_| "n/a".into());
        println!("{:<18} steady-state MSE {level}", c.label);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_theory(config: ScenarioConfig) -> Result<(), HarnessError> {
    let scenario = Scenario::build(&config)?;
    let mut curves = serde_json::Map::new();
    if let Some(d) = &config.allocation {
        curves.insert("uniform".into(), theory_json(&scenario.theory(&scenario.uniform_specs(d)?)?));
        let problem = scenario.allocation_problem(d, scenario.perron.clone(), scenario.distortions())?;
        let sol = allocation::solve_kkt(&problem)?;
        let x = allocation::round_to_integer(&problem, &sol.x_real, d.repair);
        let specs = allocation::to_specs(family(d.family), scenario.dim(), config.value_bits, &x)?;
        curves.insert("optimized_oracle".into(), theory_json(&scenario.theory(&specs)?));
    }
    for plan in &config.compression {
        curves.insert(plan.label(), theory_json(&scenario.theory(&scenario.specs_for(plan)?)?));
    }
    let identity = scenario.specs_for(&actc_harness::config::CompressionPlan::Identity)?;
    curves.insert("atc".into(), theory_json(&scenario.theory(&identity)?));
    let body = json!({
        "scenario": config.name,
        "config_hash": config.hash(),
        "perron": scenario.perron,
        "distortions": scenario.distortions(),
        "curves": curves,
    });
    println!("{}", serde_json::to_string_pretty(&body).expect("json serializes"));
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn float_list(v: &Value, keys: &[&str]) -> Option<Vec<f64>> {
    keys.iter()
        .find_map(|k| v.get(*k))
        .and_then(|a| a.as_array())
        .and_then(|a| a.iter().map(Value::as_f64).collect())
}

fn run_allocate(args: &AllocateArgs) -> Result<(), HarnessError> {
    let missing = |what: &str| HarnessError::Config(format!("allocate: missing --{what}"));
    let problem = if args.config.is_some() || args.preset.is_some() {
        let config = match (&args.config, &args.preset) {
            (Some(p), _) => ScenarioConfig::load(p)?,
            (None, Some(name)) => preset(name)?,
            _ => unreachable!(),
        };
        let scenario = Scenario::build(&config)?;
        let mut directive = config
            .allocation
            .clone()
            .ok_or_else(|| HarnessError::Config("scenario has no allocation directive".into()))?;
        directive.repair |= args.repair;
        scenario.allocation_problem(&directive, scenario.perron.clone(), scenario.distortions())?
    } else {
        let (mut perron, mut distortions) = (args.perron.clone(), args.distortions.clone());
        if let Some(path) = &args.input {
            let v = read_json(path)?;
            perron = perron.or_else(|| float_list(&v, &["perron", "perron_consensus"]));
            distortions = distortions.or_else(|| float_list(&v, &["distortions", "distortion_estimates_mean"]));
        }
        let family_arg = args.family.ok_or_else(|| missing("family"))?;
        let fam = family(match family_arg {
            FamilyArg::Quantizer => FamilyConfig::Quantizer,
            FamilyArg::Sparsifier => FamilyConfig::Sparsifier,
        });
        AllocationProblem::new(
            fam,
            args.dim.ok_or_else(|| missing("dim"))?,
            args.budget.ok_or_else(|| missing("budget"))?,
            args.x_min.ok_or_else(|| missing("x-min"))?,
            args.x_max.ok_or_else(|| missing("x-max"))?,
            perron.ok_or_else(|| missing("perron"))?,
            distortions.ok_or_else(|| missing("distortions"))?,
        )?
    };
    let sol = allocation::solve_kkt(&problem)?;
    let repair = args.repair;
    let x = allocation::round_to_integer(&problem, &sol.x_real, repair);
    let kkt = allocation::verify_kkt(&problem, &sol);
    eprintln!("{:>5} {:>10} {:>12} {:>6}", "agent", "perron", "x_real", "x_int");
    for k in 0..problem.n() {
        eprintln!("{k:>5} {:>10.5} {:>12.6} {:>6}", problem.perron()[k], sol.x_real[k], x[k]);
    }
    let body = json!({
        "x_real": sol.x_real,
        "x_int": x,
        "repair": repair,
        "lambda0": sol.lambda0,
        "lambda_lower": sol.lambda_lower,
        "lambda_upper": sol.lambda_upper,
        "objective_real": sol.objective_real,
        "objective_int": problem.objective_int(&x),
        "kkt": kkt_json(&kkt),
    });
    println!("{}", serde_json::to_string_pretty(&body).expect("json serializes"));
    Ok(())
}

fn rule(adj: &Adjacency, r: RuleArg) -> Result<topology::CombinationMatrix<f64>, HarnessError> {
    Ok(match r {
        RuleArg::Averaging => averaging_rule(adj)?,
        RuleArg::RelativeDegree => relative_degree_rule(adj)?,
    })
}

fn run_topology(cmd: TopologyCommand) -> Result<(), HarnessError> {
    match cmd {
        TopologyCommand::Gen {
            nodes,
            attachment_edges,
            seed,
            rule: r,
            matrix,
            edges,
        } => {
            let adj = bollobas_riordan(nodes, attachment_edges, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let a = rule(&adj, r)?;
            if let Some(path) = &edges {
                std::fs::write(path, adj.to_edge_list()).map_err(|e| HarnessError::io(path, e))?;
            }
            match &matrix {
                Some(path) => std::fs::write(path, a.to_csv()).map_err(|e| HarnessError::io(path, e))?,
                None if edges.is_none() => print!("{}", a.to_csv()),
                None => {}
            }
            Ok(())
        }
        TopologyCommand::Check { matrix, edges, rule: r } => {
            let a = match (matrix, edges) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                    topology::validate(topology::parse_matrix_csv(&text)?)?
                }
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                    rule(&Adjacency::from_edge_list(&text)?, r)?
                }
                (None, None) => return Err(HarnessError::Config("topology check needs --matrix or --edges".into())),
            };
            let pi = topology::perron(&a, 1e-15, 1_000_000)?;
            let body = json!({
                "nodes": a.n(),
                "valid": true,
                "perron": pi.as_slice(),
                "perron_residual": pi.residual(&a),
            });
            println!("{}", serde_json::to_string_pretty(&body).expect("json serializes"));
            Ok(())
        }
    }
}
