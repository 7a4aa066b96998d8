//! Command-line front end: stable file formats, subcommand dispatch, and the
//! batch sweep pipeline.
//!
//! Exit-code contract: 0 on success, 2 when `certify --strict` finds an
//! uncertified case, 1 on any error. All structured outputs are JSON on
//! stdout with an embedded run manifest; series data goes to CSV files with
//! a sidecar `<name>.manifest.json`.

pub mod files;
pub mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mugrid_core::certificates::{
    certify_lossy, certify_structure_preserving, certify_topology, CertReport,
};
use mugrid_core::control::{search_line_switching, tune_distributed, TuneBounds};
use mugrid_core::kron::kron_reduce;
use mugrid_core::netmodel::{build_admittance, validate_network};
use mugrid_core::powerflow::{
    check_omega_region, flow_reactive, solve_equilibrium, SolveOptions,
};
use mugrid_core::simulate::{assess_convergence, integrate, SwingModel};
use mugrid_core::spectral::{build_jacobian, build_laplacian, eigenvalues};
use mugrid_core::synth::{generate, SynthConfig};

use files::{EquilibriumFile, InitialStateFile, NetworkFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNCERTIFIED: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}")]
    Input { context: String },
    #[error(transparent)]
    Core(#[from] mugrid_core::Error),
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &Path, source: serde_json::Error) -> Self {
        CliError::Parse {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Reproducibility record embedded in every structured output. Wall time is
/// reported on stderr instead so outputs stay byte-stable under fixed inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub config_digest: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, inputs: &[&Path], config: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(subcommand.as_bytes());
        hasher.update([0]);
        hasher.update(config.as_bytes());
        RunManifest {
            subcommand: subcommand.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            config_digest: format!("{:x}", hasher.finalize()),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mugrid",
    version,
    about = "Small-signal stability certification for multi-microgrid networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the active-power equilibrium by Newton iteration
    Powerflow(PowerflowArgs),
    /// Evaluate the per-node stability certificate
    Certify(CertifyArgs),
    /// Eigenvalues and half-plane classification of the system Jacobian
    Spectrum(SpectrumArgs),
    /// Integrate the swing dynamics and classify convergence
    Simulate(SimulateArgs),
    /// Eliminate passive nodes from the admittance matrix
    Kron(KronArgs),
    /// Retune interface parameters, optionally with line switching
    Tune(TuneArgs),
    /// Generate a random connected test network
    Synth(SynthArgs),
    /// Batch pipeline: generate, solve, tune, certify, eigen-check
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct PowerflowArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Per-node setpoints (JSON array); defaults to the network file's
    /// interface section
    #[arg(long)]
    pub setpoints: Option<PathBuf>,
    /// Reference node whose angle is fixed at zero
    #[arg(long = "ref", default_value_t = 0)]
    pub reference: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iterations: usize,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub equilibrium: PathBuf,
    /// Interface parameters; defaults to the network file's interface section
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Equilibrium-independent certificate from the coupling sums alone
    #[arg(long)]
    pub topology_only: bool,
    /// Certify through passive-node elimination (original-network diagonal)
    #[arg(long)]
    pub structure_preserving: bool,
    /// Comma-separated active node ids (with --structure-preserving)
    #[arg(long, value_delimiter = ',')]
    pub active: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub nu_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub nu_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    /// Exit with status 2 if the verdict is uncertified
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub equilibrium: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Eigenvalue table (columns re,im)
    #[arg(long, default_value = "spectrum.csv")]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Overrides the setpoints carried in the interface parameters
    #[arg(long)]
    pub setpoints: Option<PathBuf>,
    #[arg(long)]
    pub initial: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Convergence tolerance on the trailing-window frequency deviation
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Trajectory table (columns t, delta_0.., omega_0..)
    #[arg(long, default_value = "trajectory.csv")]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct KronArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Comma-separated passive node ids; defaults to nodes marked passive
    #[arg(long, value_delimiter = ',')]
    pub passive: Vec<usize>,
    /// Check the sign-pattern and ratio-bound assumptions at every step
    #[arg(long)]
    pub check_assumptions: bool,
    #[arg(long, default_value_t = 0.0)]
    pub nu_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub nu_max: f64,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub equilibrium: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Tuning range JSON {d_min, d_max, m_min, m_max, margin?}
    #[arg(long)]
    pub bounds: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub margin: f64,
    /// Fall back to coordinated line switching if retuning is not enough
    #[arg(long)]
    pub allow_switching: bool,
    #[arg(long, default_value_t = 2)]
    pub budget: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub avg_degree: f64,
    #[arg(long)]
    pub lossless: bool,
    /// Output path; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub cases: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Worker threads; defaults to MUGRID_JOBS or the machine's parallelism
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Aggregate per-case table
    #[arg(long, default_value = "sweep.csv")]
    pub out_csv: PathBuf,
}

/// Runs a parsed command and returns the process exit code. Errors map to
/// exit 1 in `main`.
pub fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let started = std::time::Instant::now();
    let code = match cli.command {
        Command::Powerflow(args) => cmd_powerflow(args)?,
        Command::Certify(args) => cmd_certify(args)?,
        Command::Spectrum(args) => cmd_spectrum(args)?,
        Command::Simulate(args) => cmd_simulate(args)?,
        Command::Kron(args) => cmd_kron(args)?,
        Command::Tune(args) => cmd_tune(args)?,
        Command::Synth(args) => cmd_synth(args)?,
        Command::Sweep(args) => sweep::cmd_sweep(args)?,
    };
    eprintln!("completed in {:.3} s", started.elapsed().as_secs_f64());
    Ok(code)
}

pub(crate) fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout).map_err(|e| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    })
}

pub(crate) fn write_sidecar_manifest(
    csv_path: &Path,
    manifest: &RunManifest,
) -> Result<(), CliError> {
    let mut path = csv_path.as_os_str().to_owned();
    path.push(".manifest.json");
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).map_err(|e| CliError::io(Path::new(&path), e))
}

fn params_from(
    file: &NetworkFile,
    override_path: &Option<PathBuf>,
) -> Result<mugrid_core::netmodel::InterfaceParams, CliError> {
    match override_path {
        Some(path) => files::load_params(path),
        None => file.interface.clone().ok_or_else(|| CliError::Input {
            context: "no interface parameters: pass --params or add an `interface` section to the network file".into(),
        }),
    }
}

#[derive(Serialize)]
struct PowerflowOutput {
    delta: Vec<f64>,
    residual: f64,
    in_omega: bool,
    phi_margin: f64,
    manifest: RunManifest,
}

fn cmd_powerflow(args: PowerflowArgs) -> Result<i32, CliError> {
    let file = NetworkFile::load(&args.net)?;
    let net = &file.network;
    let p_set = match &args.setpoints {
        Some(path) => files::load_setpoints(path)?,
        None => params_from(&file, &None)?.setpoint_vector(net.n())?,
    };
    let y = build_admittance(net)?;
    let opts = SolveOptions {
        tol: args.tol,
        max_iterations: args.max_iterations,
        initial: None,
    };
    let eq = solve_equilibrium(&y, &net.voltages(), &p_set, args.reference, &opts)?;
    let omega = check_omega_region(&y, &eq.delta);
    let manifest = RunManifest::new(
        "powerflow",
        &[&args.net],
        &format!("ref={} tol={:e}", args.reference, args.tol),
    );
    print_json(&PowerflowOutput {
        delta: eq.delta,
        residual: eq.residual,
        in_omega: omega.in_region,
        phi_margin: omega.worst_margin,
        manifest,
    })?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CertifyOutput {
    report: CertReport,
    manifest: RunManifest,
}

fn print_cert_table(report: &CertReport) {
    eprintln!("{:>6} {:>12} {:>12} {:>12} {:>10}", "node", "lhs", "rhs", "S_i", "satisfied");
    for c in &report.nodes {
        eprintln!(
            "{:>6} {:>12.6} {:>12.6} {:>12.6} {:>10}",
            c.node, c.lhs, c.rhs, c.index, c.satisfied
        );
    }
    eprintln!("verdict: {:?}", report.verdict);
}

fn cmd_certify(args: CertifyArgs) -> Result<i32, CliError> {
    let file = NetworkFile::load(&args.net)?;
    let net = &file.network;
    let eq = EquilibriumFile::load(&args.equilibrium)?;
    let params = params_from(&file, &args.params)?;

    let report = if args.topology_only {
        certify_topology(net, &params, args.margin)?
    } else if args.structure_preserving {
        if args.active.is_empty() {
            return Err(CliError::Input {
                context: "--structure-preserving requires --active".into(),
            });
        }
        let sp = certify_structure_preserving(
            net,
            &args.active,
            &params,
            &eq,
            args.nu_min,
            args.nu_max,
            args.margin,
        )?;
        sp.cert
    } else {
        certify_lossy(net, &eq, &params, args.margin)?
    };

    print_cert_table(&report);
    let certified = report.is_certified();
    let manifest = RunManifest::new(
        "certify",
        &[&args.net, &args.equilibrium],
        &format!(
            "topology_only={} structure_preserving={} margin={}",
            args.topology_only, args.structure_preserving, args.margin
        ),
    );
    print_json(&CertifyOutput { report, manifest })?;
    if args.strict && !certified {
        return Ok(EXIT_UNCERTIFIED);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SpectrumOutput {
    zero_count: usize,
    lhp: bool,
    max_real_nonzero: f64,
    tol_zero: f64,
    manifest: RunManifest,
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<i32, CliError> {
    let file = NetworkFile::load(&args.net)?;
    let net = &file.network;
    let eq = EquilibriumFile::load(&args.equilibrium)?;
    let params = params_from(&file, &args.params)?;
    let y = build_admittance(net)?;
    let lap = build_laplacian(&y, &net.voltages(), &eq.delta);
    let jac = build_jacobian(
        &lap,
        &params.inertia_vector(net.n())?,
        &params.damping_vector(net.n())?,
    )?;
    let spectrum = eigenvalues(&jac)?;

    let mut csv = String::from("re,im\n");
    for ev in &spectrum.eigenvalues {
        csv.push_str(&format!("{:.15e},{:.15e}\n", ev.re, ev.im));
    }
    std::fs::write(&args.out_csv, csv).map_err(|e| CliError::io(&args.out_csv, e))?;
    let manifest = RunManifest::new("spectrum", &[&args.net, &args.equilibrium], "");
    write_sidecar_manifest(&args.out_csv, &manifest)?;
    print_json(&SpectrumOutput {
        zero_count: spectrum.zero_count,
        lhp: spectrum.lhp,
        max_real_nonzero: spectrum.max_real_nonzero,
        tol_zero: spectrum.tol_zero,
        manifest,
    })?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SimulateOutput {
    classification: mugrid_core::simulate::Convergence,
    terminal: mugrid_core::simulate::Terminal,
    steps: usize,
    max_abs_omega_tail: f64,
    manifest: RunManifest,
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32, CliError> {
    let file = NetworkFile::load(&args.net)?;
    let net = &file.network;
    let mut params = params_from(&file, &args.params)?;
    if let Some(path) = &args.setpoints {
        let p_set = files::load_setpoints(path)?;
        if p_set.len() != params.entries.len() {
            return Err(CliError::Input {
                context: "setpoint count does not match interface entries".into(),
            });
        }
        for (e, p) in params.entries.iter_mut().zip(p_set) {
            e.p_set = p;
        }
    }
    let (delta0, omega0) = InitialStateFile::load(&args.initial)?;
    let model = SwingModel::new(net, &params)?;
    let traj = integrate(&model, &delta0, &omega0, args.t, args.dt)?;
    let classification = assess_convergence(&traj, args.tol);

    let n = net.n();
    let mut csv = String::from("t");
    for i in 0..n {
        csv.push_str(&format!(",delta_{i}"));
    }
    for i in 0..n {
        csv.push_str(&format!(",omega_{i}"));
    }
    csv.push('\n');
    for (idx, t) in traj.time.iter().enumerate() {
        csv.push_str(&format!("{t:.6}"));
        for x in traj.delta[idx].iter().chain(&traj.omega[idx]) {
            csv.push_str(&format!(",{x:.9e}"));
        }
        csv.push('\n');
    }
    std::fs::write(&args.out_csv, csv).map_err(|e| CliError::io(&args.out_csv, e))?;
    let manifest = RunManifest::new(
        "simulate",
        &[&args.net, &args.initial],
        &format!("T={} dt={:e} tol={:e}", args.t, args.dt, args.tol),
    );
    write_sidecar_manifest(&args.out_csv, &manifest)?;
    let tail_start = traj.steps() - (traj.steps() / 10).max(1);
    print_json(&SimulateOutput {
        classification,
        terminal: traj.terminal,
        steps: traj.steps(),
        max_abs_omega_tail: traj.max_abs_omega_from(tail_start),
        manifest,
    })?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ReducedEntry {
    i: usize,
    k: usize,
    g: f64,
    b: f64,
}

#[derive(Serialize)]
struct KronOutput {
    survivors: Vec<usize>,
    /// Upper triangle (including diagonal) of the reduced admittance matrix,
    /// indexed by original node ids.
    entries: Vec<ReducedEntry>,
    trace: mugrid_core::kron::ReductionTrace,
    manifest: RunManifest,
}

fn cmd_kron(args: KronArgs) -> Result<i32, CliError> {
    let file = NetworkFile::load(&args.net)?;
    let net = &file.network;
    let passive: Vec<usize> = if args.passive.is_empty() {
        net.nodes
            .iter()
            .filter(|n| n.kind == mugrid_core::netmodel::NodeKind::Passive)
            .map(|n| n.id)
            .collect()
    } else {
        args.passive.clone()
    };
    let y = build_admittance(net)?;
    let nu_bounds = args.check_assumptions.then_some((args.nu_min, args.nu_max));
    let (reduced, trace) = kron_reduce(&y, &passive, nu_bounds)?;

    let mut entries = Vec::new();
    for r in 0..reduced.n() {
        for c in r..reduced.n() {
            let v = reduced.entry(r, c);
            if v.norm() > 0.0 {
                entries.push(ReducedEntry {
                    i: trace.survivors[r],
                    k: trace.survivors[c],
                    g: v.re,
                    b: v.im,
                });
            }
        }
    }
    let manifest = RunManifest::new(
        "kron",
        &[&args.net],
        &format!(
            "passive={passive:?} check_assumptions={}",
            args.check_assumptions
        ),
    );
    print_json(&KronOutput {
        survivors: trace.survivors.clone(),
        entries,
        trace,
        manifest,
    })?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TuneOutput {
    plan: mugrid_core::control::ControlPlan,
    switched: bool,
    manifest: RunManifest,
}

fn cmd_tune(args: TuneArgs) -> Result<i32, CliError> {
    let file = NetworkFile::load(&args.net)?;
    let net = &file.network;
    let eq = EquilibriumFile::load(&args.equilibrium)?;
    let params = params_from(&file, &args.params)?;
    let text = std::fs::read_to_string(&args.bounds).map_err(|e| CliError::io(&args.bounds, e))?;
    let mut bounds: TuneBounds =
        serde_json::from_str(&text).map_err(|e| CliError::parse(&args.bounds, e))?;
    bounds.margin = args.margin;

    // local measurements per node
    let y = build_admittance(net)?;
    let v = net.voltages();
    let q = flow_reactive(&y, &v, &eq.delta);
    let lhs: Vec<f64> = (0..net.n())
        .map(|i| -q[i] - v[i] * v[i] * y.susceptance(i, i))
        .collect();

    let mut plan = tune_distributed(&lhs, &params, &bounds)?;
    let mut switched = false;
    if !plan.feasible && args.allow_switching {
        let p_set = plan.params.setpoint_vector(net.n())?;
        let reference = 0;
        let initial = eq.delta.clone();
        let tuned_params = plan.params.clone();
        let solver = move |candidate: &mugrid_core::netmodel::Network| {
            let y = build_admittance(candidate)?;
            let opts = SolveOptions {
                initial: Some(initial.clone()),
                ..SolveOptions::default()
            };
            solve_equilibrium(&y, &candidate.voltages(), &p_set, reference, &opts)
        };
        plan = search_line_switching(net, &tuned_params, solver, args.budget, args.margin)?;
        switched = true;
    }
    let manifest = RunManifest::new(
        "tune",
        &[&args.net, &args.equilibrium, &args.bounds],
        &format!(
            "margin={} allow_switching={} budget={}",
            args.margin, args.allow_switching, args.budget
        ),
    );
    print_json(&TuneOutput {
        plan,
        switched,
        manifest,
    })?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SynthOutput {
    #[serde(flatten)]
    file: NetworkFile,
    seed_delta: Vec<f64>,
    diameter: Option<usize>,
    manifest: RunManifest,
}

fn cmd_synth(args: SynthArgs) -> Result<i32, CliError> {
    let mut cfg = SynthConfig::new(args.n, args.seed);
    cfg.avg_degree = args.avg_degree;
    cfg.lossless = args.lossless;
    let (net, params, eq) = generate(&cfg)?;
    let diag = validate_network(&net);
    debug_assert!(diag.connected);
    let diameter = net.diameter();
    let manifest = RunManifest::new(
        "synth",
        &[],
        &format!(
            "n={} seed={} avg_degree={} lossless={}",
            args.n, args.seed, args.avg_degree, args.lossless
        ),
    );
    let output = SynthOutput {
        file: NetworkFile {
            network: net,
            interface: Some(params),
        },
        seed_delta: eq.delta,
        diameter,
        manifest,
    };
    match &args.out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&output)?;
            std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
        }
        None => print_json(&output)?,
    }
    Ok(EXIT_OK)
}
