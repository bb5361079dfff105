mod artifacts;
mod config;
mod error;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hypocoerce::exec::Exec;
use hypocoerce::geometry::by_name;
use serde::Serialize;
use serde_json::{json, Map, Value};

use artifacts::{config_hash, read_manifest, write_outputs, RunManifest};
use config::ExperimentConfig;
use error::{CliError, EXIT_OK, EXIT_VIOLATED};

const CATALOG: [&str; 4] = ["heisenberg", "grusin", "martinet", "abelian"];

#[derive(Parser)]
#[command(name = "hypocoerce", version, about = "Gradient bounds and ergodicity checks for hypoelliptic diffusions")]
struct Cli {
    /// Worker threads (overrides HYPOCOERCE_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Catalog geometries.
    Geometry {
        #[command(subcommand)]
        action: GeometryAction,
    },
    /// Curvature constants and κ for a model.
    Constants {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        args: ConstantsArgs,
    },
    /// Integrate the SDE and report terminal moments.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        args: SimulateArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte Carlo checks of the semigroup inequalities.
    Check {
        #[command(subcommand)]
        kind: CheckKind,
    },
    /// Empirical invariant measure of a model.
    Invariant {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        args: InvariantArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Lattice-coupled site copies of a geometry.
    Lattice {
        #[command(subcommand)]
        kind: LatticeKind,
    },
    /// Run an experiment from a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a manifest and compare every reported number bit for bit.
    Replay { manifest: PathBuf },
}

#[derive(Subcommand)]
enum GeometryAction {
    /// Print the geometry record as JSON.
    Show { name: String },
    /// List catalog names.
    List,
}

#[derive(Args)]
struct ModelArgs {
    /// JSON model file or inline JSON model record.
    #[arg(long, conflicts_with_all = ["geometry", "beta", "g", "alpha"])]
    model: Option<String>,
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    /// Matrix `G` as JSON rows, e.g. `[[0,0.5],[-0.5,0]]`.
    #[arg(long = "G", value_name = "JSON")]
    g: Option<String>,
    /// Drift preset name.
    #[arg(long)]
    alpha: Option<String>,
}

impl ModelArgs {
    fn to_value(&self) -> Result<Value, CliError> {
        if let Some(m) = &self.model {
            return if m.trim_start().starts_with('{') {
                serde_json::from_str(m).map_err(|e| CliError::Schema(format!("--model: {e}")))
            } else {
                Ok(Value::String(m.clone()))
            };
        }
        let mut rec = Map::new();
        rec.insert("geometry".into(), json!(self.geometry.as_deref().unwrap_or("heisenberg")));
        rec.insert("beta".into(), json!(self.beta.ok_or_else(|| CliError::Schema("--beta is required without --model".into()))?));
        if let Some(g) = &self.g {
            let g: Value = serde_json::from_str(g).map_err(|e| CliError::Schema(format!("--G: {e}")))?;
            rec.insert("G".into(), g);
        }
        if let Some(a) = &self.alpha {
            rec.insert("alpha".into(), json!(a));
        }
        Ok(Value::Object(rec))
    }
}

/// Simulation flags shared by every Monte Carlo command.
#[derive(Args, Serialize)]
struct McArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    paths: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// `euler` (Itô-corrected Euler–Maruyama) or `heun` (Stratonovich Heun).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<String>,
    /// Flow step for directional differences.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    fd_step: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    mc: McArgs,
    /// Directory for manifest.json and the CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ConstantsArgs {
    /// Also report the l_q constant for this q.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    /// Optimize the pairing constant instead of the default choice.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    optimal: bool,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Start point, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    /// CSV file for the first few trajectories.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    save_trajectories: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory_paths: Option<usize>,
}

/// Observable, start point and time grid.
#[derive(Args, Serialize)]
struct PointArgs {
    /// Expression in x1..xN (x, y, z alias the first three).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    observable: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
    /// Time grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<Vec<f64>>,
}

#[derive(Args, Serialize)]
struct KappaArgs {
    /// Use this κ instead of the computed one.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
}

#[derive(Args, Serialize)]
struct QArgs {
    #[arg(long)]
    q: f64,
}

#[derive(Args, Serialize)]
struct LyapunovArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<Vec<f64>>,
}

#[derive(Args, Serialize)]
struct InvariantArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    observable: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_burn: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_sample: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    thinning: Option<f64>,
}

#[derive(Args, Serialize)]
struct DeltaArgs {
    /// Exponent δ; defaults to the δ with δ²‖Γf‖∞/κ = 1/4.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum CheckKind {
    /// Γ(P_tf) ≤ e^{−κt} P_tΓ(f).
    Grad {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        kappa: KappaArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Γ(P_tf)^{q/2} ≤ e^{−κ't} P_tΓ(f)^{q/2}.
    Lq {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        q: QArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Boundedness of P_tρ for the geometry's Lyapunov function.
    Lyapunov {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        args: LyapunovArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// P_tf² − (P_tf)² ≤ (2/κ)(1 − e^{−κt}) P_tΓ(f).
    Poincare {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        kappa: KappaArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Exponential integrability under the empirical invariant measure.
    Expmoment {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        args: InvariantArgs,
        #[command(flatten)]
        delta: DeltaArgs,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Serialize)]
struct LatticeArgs {
    /// Lattice dimension.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    /// Box radius: the box is [−box, box]^d.
    #[arg(long = "box")]
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    box_radius: Option<i64>,
    /// Radius of Λ, the sites carrying the interaction.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<i64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    range: Option<i64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    amplitude: Option<f64>,
    /// Stencil as JSON: `[{"offset":[1],"weight":0.5}, …]`.
    #[arg(long)]
    #[serde(skip)]
    stencil: Option<String>,
    /// Bounded site function of the coupling.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    site_function: Option<String>,
}

impl LatticeArgs {
    fn to_value(&self) -> Result<Value, CliError> {
        let mut v = to_object(self);
        if let Some(s) = &self.stencil {
            let parsed: Value = serde_json::from_str(s).map_err(|e| CliError::Schema(format!("--stencil: {e}")))?;
            v.as_object_mut().expect("object").insert("stencil".into(), parsed);
        }
        Ok(v)
    }
}

#[derive(Args, Serialize)]
struct SpeedArgs {
    /// Site observable, placed at the origin.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    observable: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    /// Number of probe configurations.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    probes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    probe_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_n: Option<i64>,
}

#[derive(Args, Serialize)]
struct CauchyArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    observable: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    probes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    probe_scale: Option<f64>,
    /// Radii of the nested smaller volumes, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_radii: Option<Vec<i64>>,
}

#[derive(Args, Serialize)]
struct ErgodicityArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    observable: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<Vec<f64>>,
    /// Value of every site in ω.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<Vec<f64>>,
    /// Added near the origin to form ω̃.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbation: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    perturb_radius: Option<i64>,
    /// Add a step-halving estimate of the discretization error.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    step_halving: bool,
}

#[derive(Subcommand)]
enum LatticeKind {
    /// A_k, M_kj, κ̄ and ς from the certified coupling bounds.
    Constants {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        lattice: LatticeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Γ_k(P_tf) against the lattice distance from the support of f.
    Speed {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        lattice: LatticeArgs,
        #[command(flatten)]
        args: SpeedArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Discrepancy between nested interaction volumes.
    Cauchy {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        lattice: LatticeArgs,
        #[command(flatten)]
        args: CauchyArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Decay of P_tf(ω) − P_tf(ω̃).
    Ergodicity {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        lattice: LatticeArgs,
        #[command(flatten)]
        args: ErgodicityArgs,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn to_object<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("flags serialize")
}

/// Merges flattened flag groups into one experiment object tagged with `kind`.
fn experiment(kind: &str, parts: &[Value]) -> Value {
    let mut m = Map::new();
    m.insert("kind".into(), json!(kind));
    for p in parts {
        if let Value::Object(o) = p {
            m.extend(o.clone());
        }
    }
    Value::Object(m)
}

struct Invocation {
    config: Value,
    out: Option<PathBuf>,
}

fn invocation(
    model: &ModelArgs,
    experiment: Value,
    mc: Option<&McArgs>,
    lattice: Option<Value>,
    out: Option<PathBuf>,
) -> Result<Invocation, CliError> {
    let mut c = Map::new();
    c.insert("model".into(), model.to_value()?);
    c.insert("experiment".into(), experiment);
    if let Some(mc) = mc {
        c.insert("mc".into(), to_object(mc));
    }
    if let Some(l) = lattice {
        c.insert("lattice".into(), l);
    }
    Ok(Invocation { config: Value::Object(c), out })
}

/// Builds the config a subcommand stands for; `None` for commands without one.
fn build(command: &Command) -> Result<Option<Invocation>, CliError> {
    let inv = match command {
        Command::Geometry { .. } | Command::Run { .. } | Command::Replay { .. } => return Ok(None),
        Command::Constants { model, args } => invocation(model, experiment("constants", &[to_object(args)]), None, None, None)?,
        Command::Simulate { model, args, run } => {
            invocation(model, experiment("simulate", &[to_object(args)]), Some(&run.mc), None, run.out.clone())?
        }
        Command::Invariant { model, args, run } => {
            invocation(model, experiment("invariant", &[to_object(args)]), Some(&run.mc), None, run.out.clone())?
        }
        Command::Check { kind } => match kind {
            CheckKind::Grad { model, point, kappa, run } => {
                invocation(model, experiment("grad", &[to_object(point), to_object(kappa)]), Some(&run.mc), None, run.out.clone())?
            }
            CheckKind::Lq { model, point, q, run } => {
                invocation(model, experiment("lq", &[to_object(point), to_object(q)]), Some(&run.mc), None, run.out.clone())?
            }
            CheckKind::Poincare { model, point, kappa, run } => {
                invocation(model, experiment("poincare", &[to_object(point), to_object(kappa)]), Some(&run.mc), None, run.out.clone())?
            }
            CheckKind::Lyapunov { model, args, run } => {
                invocation(model, experiment("lyapunov", &[to_object(args)]), Some(&run.mc), None, run.out.clone())?
            }
            CheckKind::Expmoment { model, args, delta, run } => {
                invocation(model, experiment("expmoment", &[to_object(args), to_object(delta)]), Some(&run.mc), None, run.out.clone())?
            }
        },
        Command::Lattice { kind } => match kind {
            LatticeKind::Constants { model, lattice, out } => {
                invocation(model, experiment("lattice_constants", &[]), None, Some(lattice.to_value()?), out.clone())?
            }
            LatticeKind::Speed { model, lattice, args, run } => invocation(
                model,
                experiment("lattice_speed", &[to_object(args)]),
                Some(&run.mc),
                Some(lattice.to_value()?),
                run.out.clone(),
            )?,
            LatticeKind::Cauchy { model, lattice, args, run } => invocation(
                model,
                experiment("lattice_cauchy", &[to_object(args)]),
                Some(&run.mc),
                Some(lattice.to_value()?),
                run.out.clone(),
            )?,
            LatticeKind::Ergodicity { model, lattice, args, run } => invocation(
                model,
                experiment("lattice_ergodicity", &[to_object(args)]),
                Some(&run.mc),
                Some(lattice.to_value()?),
                run.out.clone(),
            )?,
        },
    };
    Ok(Some(inv))
}

/// Resolves, runs and (optionally) writes the outputs of one experiment.
fn run_config(config: ExperimentConfig, out: Option<PathBuf>, exec: &Exec) -> Result<(RunManifest, runner::Outcome), CliError> {
    let (mut config, spec) = config.resolve()?;
    if out.is_some() {
        config.output = out;
    }
    let start = Instant::now();
    let outcome = runner::execute(&config, &spec, exec)?;
    let manifest = RunManifest {
        config_hash: config_hash(&config),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.mc.seed,
        workers: exec.workers(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        verdicts: outcome.verdicts.clone(),
        report: outcome.report.clone(),
        config,
    };
    if let Some(dir) = &manifest.config.output {
        write_outputs(dir, &manifest, &outcome.tables)?;
    }
    Ok((manifest, outcome))
}

fn exit_for(manifest: &RunManifest) -> u8 {
    if manifest.any_violated() {
        EXIT_VIOLATED
    } else {
        EXIT_OK
    }
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    let exec = cli.workers.map_or_else(Exec::from_env, Exec::with_workers);
    match &cli.command {
        Command::Geometry { action: GeometryAction::List } => {
            println!("{}", CATALOG.join("\n"));
            return Ok(EXIT_OK);
        }
        Command::Geometry { action: GeometryAction::Show { name } } => {
            let geo = by_name(name).map_err(|e| CliError::Schema(e.to_string()))?;
            let rec = geo.to_record().map_err(|e| CliError::Schema(e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&rec).expect("record serializes"));
            return Ok(EXIT_OK);
        }
        Command::Run { config, out } => {
            let config = ExperimentConfig::load(config)?;
            let (manifest, _) = run_config(config, out.clone(), &exec)?;
            println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
            return Ok(exit_for(&manifest));
        }
        Command::Replay { manifest } => {
            let recorded = read_manifest(manifest)?;
            let (fresh, _) = run_config(recorded.config.clone(), None, &exec)?;
            let same = fresh.report == recorded.report && fresh.verdicts == recorded.verdicts && fresh.config_hash == recorded.config_hash;
            println!("{}", json!({ "identical": same, "config_hash": fresh.config_hash, "workers": exec.workers() }));
            return Ok(if same { exit_for(&fresh) } else { EXIT_VIOLATED });
        }
        _ => {}
    }
    let inv = build(&cli.command)?.expect("experiment command");
    let config: ExperimentConfig = serde_json::from_value(inv.config).map_err(|e| CliError::Schema(format!("invalid flags: {e}")))?;
    let (manifest, outcome) = run_config(config, inv.out, &exec)?;
    for line in &outcome.stdout {
        println!("{line}");
    }
    Ok(exit_for(&manifest))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
