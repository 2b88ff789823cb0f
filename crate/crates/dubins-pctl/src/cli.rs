//! Command-line front end: environment files, pipeline orchestration, and
//! artifact exports.
//!
//! Exit codes: 0 success, 2 validation failure (bad environment, formula,
//! policy file, or state cap), 3 specification unreachable within the
//! horizon, 4 bound-test failure in `simulate`.

use crate::dynamics::{DynamicsError, NoisePartition, Pose, VehicleParams};
use crate::geometry::{is_clockwise, ConvexRegion, Environment, GeometryError, Point2, RegionLabel};
use crate::hashing::sha256_hex;
use crate::mdp::{self, build, BuildConfig, BuildError, Mdp};
use crate::montecarlo::{self, SimConfig, Summary};
use crate::pctl::{
    delivery_probability, parse_formula, pickup_dropoff_formula, synthesize, CheckError, Formula,
    ParseError, Synthesis,
};
use crate::strategy::{StrategyTable, TableError};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The name under which the built-in mission formula is selectable.
pub const PRESET_NAME: &str = "pickup-dropoff";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("environment file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Formula(#[from] ParseError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{0}")]
    Validation(String),
    #[error(
        "policy file was synthesized for different inputs: \
         expected input hash {expected}, file carries {found}"
    )]
    InputHashMismatch { expected: String, found: String },
}

/// Machine-readable error category, printed alongside the message.
pub fn category(e: &CliError) -> &'static str {
    match e {
        CliError::Io(_) => "io",
        CliError::Json(_) | CliError::Geometry(_) | CliError::Dynamics(_)
        | CliError::Validation(_) => "invalid-environment",
        CliError::Build(BuildError::Unreachable { .. }) => "unreachable",
        CliError::Build(BuildError::StateCapExceeded { .. }) => "state-cap",
        CliError::Build(_) | CliError::Check(_) => "synthesis",
        CliError::Formula(_) => "invalid-formula",
        CliError::Table(_) | CliError::InputHashMismatch { .. } => "policy-mismatch",
    }
}

pub fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Build(BuildError::Unreachable { .. }) => 3,
        _ => 2,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "dubins-pctl",
    version,
    about = "Synthesize and validate maximum-probability pick-up/drop-off strategies \
             for a Dubins vehicle with noisy actuation and an interval gyroscope",
    after_help = formula_help()
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

const fn formula_help() -> &'static str {
    "FORMULA GRAMMAR:\n  \
     formula  := 'Pmax=?' '[' path ']'\n  \
     path     := 'X' state | state 'U' state\n  \
     state    := and ('->' state)? ; and := unary ('&' unary)*\n  \
     unary    := '!' unary | 'pi_p' | 'pi_d' | 'pi_u' | '(' state ')'\n              \
     | 'P' ('>'|'>='|'<'|'<=') number '[' path ']'\n\n  \
     The default is the built-in 'pickup-dropoff' mission:\n  \
     Pmax=?[!pi_u U (!pi_u & pi_p & P>0[!pi_u U (!pi_u & pi_d)])]\n\n\
     Every flag can also be set through an environment variable with the\n\
     DUBINS_PCTL_ prefix (for example DUBINS_PCTL_TRIALS)."
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the tree abstraction, synthesize the maximizing strategy, and
    /// write the policy and summary artifacts.
    Plan(PlanArgs),
    /// Replay a policy file against the continuous-noise vehicle and test the
    /// satisfaction bound.
    Simulate(SimulateArgs),
    /// Parse and validate an environment file.
    ValidateEnv(ValidateEnvArgs),
    /// Export the tree abstraction in DOT format.
    ExportTree(ExportTreeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct EnvArgs {
    /// Environment file (JSON).
    #[arg(long, env = "DUBINS_PCTL_ENV")]
    pub env: PathBuf,
    /// Override the minimum turn radius from the environment file.
    #[arg(long, env = "DUBINS_PCTL_RHO")]
    pub rho: Option<f64>,
    /// Override the stage duration from the environment file.
    #[arg(long, env = "DUBINS_PCTL_DT")]
    pub dt: Option<f64>,
    /// Override the noise bound from the environment file.
    #[arg(long, env = "DUBINS_PCTL_EPS_MAX")]
    pub eps_max: Option<f64>,
    /// Override the number of noise bins from the environment file.
    #[arg(long, env = "DUBINS_PCTL_BINS")]
    pub bins: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct FormulaArg {
    /// Mission formula, or the name of a built-in preset ('pickup-dropoff').
    #[arg(long, default_value = PRESET_NAME, env = "DUBINS_PCTL_FORMULA")]
    pub formula: String,
}

impl FormulaArg {
    pub fn parse(&self) -> Result<Formula, CliError> {
        if self.formula == PRESET_NAME {
            Ok(pickup_dropoff_formula())
        } else {
            Ok(parse_formula(&self.formula)?)
        }
    }
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub formula: FormulaArg,
    /// Fixed horizon K. Without it the smallest K with a positive value is
    /// searched, up to --k-max.
    #[arg(long, env = "DUBINS_PCTL_HORIZON")]
    pub horizon: Option<usize>,
    /// Largest horizon tried in the automatic search.
    #[arg(long, default_value_t = 8, env = "DUBINS_PCTL_K_MAX")]
    pub k_max: usize,
    /// Time samples per stage for the label sweep.
    #[arg(long, default_value_t = 50, env = "DUBINS_PCTL_SWEEP_SAMPLES")]
    pub sweep_samples: usize,
    /// Expand possibly-unsafe states instead of truncating them.
    #[arg(long, env = "DUBINS_PCTL_NO_PRUNE")]
    pub no_prune: bool,
    /// Abort if the tree would exceed this many states.
    #[arg(long, default_value_t = 1_000_000, env = "DUBINS_PCTL_STATE_CAP")]
    pub state_cap: usize,
    /// Output directory for policy.tsv and plan_summary.json.
    #[arg(long, default_value = "out", env = "DUBINS_PCTL_OUT_DIR")]
    pub out_dir: PathBuf,
    /// Also write the tree in DOT format to this path.
    #[arg(long, env = "DUBINS_PCTL_DOT")]
    pub dot: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub formula: FormulaArg,
    /// Policy file produced by plan.
    #[arg(long, env = "DUBINS_PCTL_POLICY")]
    pub policy: PathBuf,
    /// Number of independent trials.
    #[arg(long, default_value_t = 10_000, env = "DUBINS_PCTL_TRIALS")]
    pub trials: usize,
    /// Master seed; per-trial generators derive from it deterministically.
    #[arg(long, default_value_t = 0, env = "DUBINS_PCTL_SEED")]
    pub seed: u64,
    /// Dense word-sampling resolution per stage.
    #[arg(long, default_value_t = 200, env = "DUBINS_PCTL_WORD_SAMPLES")]
    pub word_samples: usize,
    /// Output directory for sim_summary.json.
    #[arg(long, default_value = "out", env = "DUBINS_PCTL_OUT_DIR")]
    pub out_dir: PathBuf,
    /// Also export every trial's sampled trajectory as CSV (meant for small
    /// --trials plotting runs).
    #[arg(long, env = "DUBINS_PCTL_TRAJECTORIES")]
    pub trajectories: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateEnvArgs {
    #[command(flatten)]
    pub env: EnvArgs,
}

#[derive(Args, Debug)]
pub struct ExportTreeArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// Tree depth to build.
    #[arg(long, default_value_t = 3, env = "DUBINS_PCTL_HORIZON")]
    pub horizon: usize,
    #[arg(long, default_value_t = 50, env = "DUBINS_PCTL_SWEEP_SAMPLES")]
    pub sweep_samples: usize,
    #[arg(long, env = "DUBINS_PCTL_NO_PRUNE")]
    pub no_prune: bool,
    #[arg(long, default_value_t = 1_000_000, env = "DUBINS_PCTL_STATE_CAP")]
    pub state_cap: usize,
    /// Output DOT file.
    #[arg(long, env = "DUBINS_PCTL_OUT")]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Environment file schema
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EnvFile {
    vehicle: VehicleSection,
    noise: NoiseSection,
    initial: InitialSection,
    regions: Vec<RegionSection>,
}

#[derive(Serialize, Deserialize)]
struct VehicleSection {
    rho: f64,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
struct NoiseSection {
    eps_max: f64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct InitialSection {
    x: f64,
    y: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct RegionSection {
    name: String,
    label: String,
    vertices: Vec<[f64; 2]>,
}

/// Everything an environment file defines, plus any load warnings.
pub struct LoadedEnvironment {
    pub env: Environment,
    pub params: VehicleParams,
    pub part: NoisePartition,
    pub warnings: Vec<String>,
}

pub fn load_environment(path: &Path) -> Result<LoadedEnvironment, CliError> {
    let file = File::open(path)?;
    let parsed: EnvFile = serde_json::from_reader(BufReader::new(file))?;
    loaded_from_file(parsed)
}

fn loaded_from_file(parsed: EnvFile) -> Result<LoadedEnvironment, CliError> {
    let params = VehicleParams::new(parsed.vehicle.rho, parsed.vehicle.dt)?;
    let part = NoisePartition::new(parsed.noise.eps_max, parsed.noise.n)?;
    let mut warnings = Vec::new();
    let mut regions = Vec::with_capacity(parsed.regions.len());
    for r in parsed.regions {
        let label: RegionLabel = r
            .label
            .parse()
            .map_err(|e: String| CliError::Validation(format!("region '{}': {e}", r.name)))?;
        let mut verts: Vec<Point2> =
            r.vertices.iter().map(|[x, y]| Point2::new(*x, *y)).collect();
        if is_clockwise(&r.name, &verts)? {
            warnings.push(format!("region '{}': clockwise winding, reversed", r.name));
            verts.reverse();
        }
        regions.push(ConvexRegion::new(r.name, label, verts)?);
    }
    let initial = Pose::new(parsed.initial.x, parsed.initial.y, parsed.initial.theta);
    let env = Environment::new(regions, initial)?;
    Ok(LoadedEnvironment { env, params, part, warnings })
}

/// Apply command-line overrides on top of the file's vehicle/noise sections.
pub fn apply_overrides(
    loaded: &mut LoadedEnvironment,
    args: &EnvArgs,
) -> Result<(), CliError> {
    if args.rho.is_some() || args.dt.is_some() {
        loaded.params = VehicleParams::new(
            args.rho.unwrap_or(loaded.params.rho()),
            args.dt.unwrap_or(loaded.params.dt()),
        )?;
    }
    if args.eps_max.is_some() || args.bins.is_some() {
        loaded.part = NoisePartition::new(
            args.eps_max.unwrap_or(loaded.part.eps_max()),
            args.bins.unwrap_or(loaded.part.n()),
        )?;
    }
    Ok(())
}

fn load_with_overrides(args: &EnvArgs) -> Result<LoadedEnvironment, CliError> {
    let mut loaded = load_environment(&args.env)?;
    apply_overrides(&mut loaded, args)?;
    Ok(loaded)
}

pub fn save_environment(
    env: &Environment,
    params: &VehicleParams,
    part: &NoisePartition,
    path: &Path,
) -> Result<(), CliError> {
    let init = env.initial_pose();
    let doc = EnvFile {
        vehicle: VehicleSection { rho: params.rho(), dt: params.dt() },
        noise: NoiseSection { eps_max: part.eps_max(), n: part.n() },
        initial: InitialSection { x: init.x, y: init.y, theta: init.theta },
        regions: env
            .regions()
            .iter()
            .map(|r| RegionSection {
                name: r.name().to_string(),
                label: r.label().as_str().to_string(),
                vertices: r.vertices().iter().map(|p| [p.x, p.y]).collect(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    Ok(())
}

/// Fingerprint of everything the synthesized policy depends on. Computed
/// from parsed values, so formatting-only edits of the environment file do
/// not invalidate a policy.
pub fn input_hash(
    env: &Environment,
    params: &VehicleParams,
    part: &NoisePartition,
    formula: &Formula,
) -> String {
    let mut s = String::from("dubins-pctl-input v1\n");
    s.push_str(&format!("vehicle rho={} dt={}\n", params.rho(), params.dt()));
    s.push_str(&format!("noise eps_max={} n={}\n", part.eps_max(), part.n()));
    let init = env.initial_pose();
    s.push_str(&format!("initial x={} y={} theta={}\n", init.x, init.y, init.theta));
    for r in env.regions() {
        s.push_str(&format!("region name={} label={} verts=", r.name(), r.label()));
        for (i, v) in r.vertices().iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            s.push_str(&format!("{},{}", v.x, v.y));
        }
        s.push('\n');
    }
    s.push_str(&format!("formula {formula}\n"));
    sha256_hex(s.as_bytes())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Twelve significant digits, for human-readable numeric output.
fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

#[derive(Serialize)]
struct PlanSummary {
    tool_version: &'static str,
    input_hash: String,
    formula: String,
    horizon: usize,
    auto_horizon: bool,
    states: usize,
    v0: f64,
    /// Probability that the label word under the synthesized policy itself
    /// completes the mission; absent for formulas without the nested-reach
    /// shape.
    delivery_probability: Option<f64>,
    sweep_samples_per_stage: usize,
    prune_unsafe: bool,
    state_cap: usize,
}

pub fn cmd_plan(args: &PlanArgs) -> Result<i32, CliError> {
    let loaded = load_with_overrides(&args.env)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let formula = args.formula.parse()?;
    let config = BuildConfig {
        k_max: args.k_max,
        sweep_samples_per_stage: args.sweep_samples,
        prune_unsafe: !args.no_prune,
        max_states: args.state_cap,
    };

    let started = Instant::now();
    let (k, mdp, synthesis): (usize, Mdp, Synthesis) = match args.horizon {
        Some(k) => {
            let mdp = build(&loaded.env, &loaded.params, &loaded.part, k, &config)?;
            let synthesis = synthesize(&mdp, &formula)?;
            (k, mdp, synthesis)
        }
        None => {
            let res = mdp::find_min_k(&loaded.env, &loaded.params, &loaded.part, &formula, &config)?;
            (res.k, res.mdp, res.synthesis)
        }
    };
    let wall = started.elapsed().as_secs_f64();

    let hash = input_hash(&loaded.env, &loaded.params, &loaded.part, &formula);
    let table = StrategyTable::from_mdp(&mdp, &synthesis.policy, &synthesis.values, &hash);
    let delivery = delivery_probability(&mdp, &synthesis.policy, &formula);

    fs::create_dir_all(&args.out_dir)?;
    let policy_path = args.out_dir.join("policy.tsv");
    table.write_to(BufWriter::new(File::create(&policy_path)?))?;

    let summary = PlanSummary {
        tool_version: TOOL_VERSION,
        input_hash: hash,
        formula: formula.to_string(),
        horizon: k,
        auto_horizon: args.horizon.is_none(),
        states: mdp.len(),
        v0: synthesis.v0,
        delivery_probability: delivery,
        sweep_samples_per_stage: args.sweep_samples,
        prune_unsafe: !args.no_prune,
        state_cap: args.state_cap,
    };
    let summary_path = args.out_dir.join("plan_summary.json");
    write_json(&summary_path, &summary)?;

    if let Some(dot) = &args.dot {
        write_tree_dot(&mdp, BufWriter::new(File::create(dot)?))?;
    }

    println!("V(s0) = {}", sig12(synthesis.v0));
    println!("K = {k}, states = {}", mdp.len());
    println!("plan wall time: {wall:.3} s");
    println!("policy: {}", policy_path.display());
    println!("summary: {}", summary_path.display());

    Ok(if synthesis.v0 > 0.0 { 0 } else { 3 })
}

#[derive(Serialize)]
struct SimSummaryDoc {
    tool_version: &'static str,
    input_hash: String,
    formula: String,
    word_samples_per_stage: usize,
    #[serde(flatten)]
    summary: Summary,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let loaded = load_with_overrides(&args.env)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let formula = args.formula.parse()?;
    let expected = input_hash(&loaded.env, &loaded.params, &loaded.part, &formula);

    let table = StrategyTable::read_from(BufReader::new(File::open(&args.policy)?))?;
    if table.input_hash() != expected {
        return Err(CliError::InputHashMismatch {
            expected,
            found: table.input_hash().to_string(),
        });
    }

    let config = SimConfig {
        trials: args.trials,
        master_seed: args.seed,
        word_samples_per_stage: args.word_samples,
    };

    let summary = match &args.trajectories {
        None => montecarlo::run(&loaded.env, &loaded.params, &loaded.part, &table, &formula, &config),
        Some(csv_path) => {
            let mut w = BufWriter::new(File::create(csv_path)?);
            writeln!(w, "trial,stage,t,x,y,theta,satisfied")?;
            let mut io_error: Option<io::Error> = None;
            let mut sink = |trial: usize,
                            result: &montecarlo::TrialResult,
                            samples: &[montecarlo::SamplePoint]| {
                if io_error.is_some() {
                    return;
                }
                for s in samples {
                    if let Err(e) = writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        trial,
                        s.stage,
                        s.t,
                        s.pose.x,
                        s.pose.y,
                        s.pose.theta,
                        u8::from(result.satisfied)
                    ) {
                        io_error = Some(e);
                        return;
                    }
                }
            };
            let summary = montecarlo::run_with(
                &loaded.env,
                &loaded.params,
                &loaded.part,
                &table,
                &formula,
                &config,
                Some(&mut sink),
            );
            if let Some(e) = io_error {
                return Err(e.into());
            }
            w.flush()?;
            summary
        }
    };

    fs::create_dir_all(&args.out_dir)?;
    let doc = SimSummaryDoc {
        tool_version: TOOL_VERSION,
        input_hash: expected,
        formula: formula.to_string(),
        word_samples_per_stage: args.word_samples,
        summary: summary.clone(),
    };
    let summary_path = args.out_dir.join("sim_summary.json");
    write_json(&summary_path, &doc)?;

    println!(
        "trials = {}, satisfied = {}, empirical = {}",
        summary.trials,
        summary.satisfied,
        sig12(summary.empirical_rate)
    );
    println!("V(s0) = {}, slack(3 sigma) = {}", sig12(summary.v0), sig12(summary.slack_3sigma));
    println!("bound {}", if summary.bound_holds { "holds" } else { "VIOLATED" });
    println!("summary: {}", summary_path.display());

    Ok(if summary.bound_holds { 0 } else { 4 })
}

pub fn cmd_validate_env(args: &ValidateEnvArgs) -> Result<i32, CliError> {
    let loaded = load_with_overrides(&args.env)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let init = loaded.env.initial_pose();
    println!("environment ok: {} regions", loaded.env.regions().len());
    for r in loaded.env.regions() {
        println!("  {} [{}] {} vertices", r.name(), r.label(), r.vertices().len());
    }
    println!(
        "vehicle: rho = {}, dt = {}; noise: eps_max = {}, n = {}",
        loaded.params.rho(),
        loaded.params.dt(),
        loaded.part.eps_max(),
        loaded.part.n()
    );
    println!(
        "initial pose: ({}, {}, {}); propositions: {}",
        init.x,
        init.y,
        init.theta,
        loaded.env.propositions_at(init.position())
    );
    Ok(0)
}

pub fn cmd_export_tree(args: &ExportTreeArgs) -> Result<i32, CliError> {
    let loaded = load_with_overrides(&args.env)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let config = BuildConfig {
        k_max: args.horizon.max(1),
        sweep_samples_per_stage: args.sweep_samples,
        prune_unsafe: !args.no_prune,
        max_states: args.state_cap,
    };
    let mdp = build(&loaded.env, &loaded.params, &loaded.part, args.horizon, &config)?;
    write_tree_dot(&mdp, BufWriter::new(File::create(&args.out)?))?;
    println!("wrote {} states to {}", mdp.len(), args.out.display());
    Ok(0)
}

/// DOT export: one node per state (depth, propositions, uncertainty), one
/// edge per transition (control value, probability).
pub fn write_tree_dot<W: Write>(mdp: &Mdp, mut w: W) -> io::Result<()> {
    writeln!(w, "digraph reachability_tree {{")?;
    writeln!(w, "  rankdir=LR;")?;
    writeln!(w, "  node [shape=box, fontsize=10];")?;
    for id in 0..mdp.len() {
        let s = mdp.state(id);
        writeln!(
            w,
            "  s{id} [label=\"s{id}\\nk={} props={} xi={:.4}\"{}];",
            s.depth,
            s.theta,
            s.xi,
            if s.terminal { ", style=bold" } else { "" }
        )?;
    }
    for id in 0..mdp.len() {
        if let Some(children) = mdp.children_of(id) {
            for (slot, &c) in children.iter().enumerate() {
                let action = slot / mdp.n_bins();
                writeln!(
                    w,
                    "  s{id} -> s{c} [label=\"u={:.4} p=1/{}\"];",
                    mdp.controls()[action],
                    mdp.n_bins()
                )?;
            }
        } else {
            writeln!(w, "  s{id} -> s{id} [label=\"hold p=1\"];")?;
        }
    }
    writeln!(w, "}}")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::ValidateEnv(args) => cmd_validate_env(args),
        Command::ExportTree(args) => cmd_export_tree(args),
    }
}
