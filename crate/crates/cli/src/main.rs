mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rsamp::amp::TauMode;

use crate::config::{parse_coupling, parse_list, Config};

#[derive(Parser, Debug)]
#[command(name = "rsamp", version, about = "AMP, state evolution and replica potential experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: Global,
}

#[derive(Args, Debug)]
struct Global {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML config, or an output file of an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Gauss-Hermite nodes of the scalar channel.
    #[arg(long, global = true)]
    quad_nodes: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// i_RS(E; Δ) and its E-derivative on an E-grid: CSV delta,E,i_rs,di_rs_dE.
    PotentialScan(Model),
    /// Δ_AMP and Δ_RS: JSON.
    Thresholds(Model),
    /// Homogeneous state evolution from E = v: CSV t,E.
    SeRun(Model),
    /// Coupled state evolution: CSV t,block,E.
    CoupledSe(Model),
    /// Coupled algorithmic thresholds over a (Gamma, w) grid: JSON.
    SaturationSweep(Model),
    /// One AMP run: CSV t,mse,ymse and a JSON summary.
    AmpRun(Model),
    /// Monte Carlo checks by exact enumeration: JSON report.
    Verify {
        #[arg(value_enum)]
        check: Check,
        #[command(flatten)]
        model: Model,
    },
    /// Δ_AMP and Δ_RS over a range of rates: CSV alpha,delta_amp,delta_rs.
    PhaseDiagram(Model),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Nishimori,
    Immse,
    MmseRelation,
    Replica,
    ScInvariance,
    FeSpread,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Tau {
    StateEvolution,
    Empirical,
}

#[derive(Args, Debug, Default)]
struct Model {
    /// Builtin prior (binary, sparse:<rho>[:<a>], onehot:<B>[:<a>], point:<x,..>) or JSON file.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// start:stop:count
    #[arg(long)]
    delta_range: Option<String>,
    /// start:stop:count
    #[arg(long)]
    alpha_range: Option<String>,
    /// Number of sections.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Maximum AMP iterations.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long, value_enum)]
    tau: Option<Tau>,
    #[arg(long)]
    stop_eps: Option<f64>,
    /// Gamma,w,kind; makes amp-run use a coupled instance.
    #[arg(long)]
    coupling: Option<String>,
    /// Accept an even Gamma.
    #[arg(long)]
    nonconforming: bool,
    /// Comma-separated Gamma values of saturation-sweep.
    #[arg(long)]
    gammas: Option<String>,
    /// Comma-separated w values of saturation-sweep.
    #[arg(long)]
    ws: Option<String>,
    /// Bisection tolerance on Δ.
    #[arg(long)]
    tol: Option<f64>,
    /// E-grid size of potential-scan.
    #[arg(long)]
    e_points: Option<usize>,
    #[arg(long)]
    n_inst: Option<usize>,
    /// Comma-separated sizes of the sweep checks.
    #[arg(long = "Ls")]
    ls: Option<String>,
    /// Finite-difference step in 1/Δ of the I-MMSE check.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    slack: Option<f64>,
}

impl Model {
    fn apply(&self, c: &mut Config) -> Result<()> {
        let m = &mut c.model;
        set(&mut m.prior, self.prior.clone());
        set(&mut m.alpha, self.alpha);
        set(&mut m.delta, self.delta);
        set(&mut m.l, self.l);
        if self.delta_range.is_some() {
            m.delta_range = self.delta_range.clone();
        }
        if self.alpha_range.is_some() {
            m.alpha_range = self.alpha_range.clone();
        }
        set(&mut c.amp.t, self.t);
        if let Some(tau) = self.tau {
            c.amp.tau = match tau {
                Tau::StateEvolution => TauMode::StateEvolution,
                Tau::Empirical => TauMode::Empirical,
            };
        }
        if self.stop_eps.is_some() {
            c.amp.stop_eps = self.stop_eps;
        }
        if let Some(text) = &self.coupling {
            let (g, w, kind) = parse_coupling(text).context("--coupling")?;
            c.coupling.gamma = g;
            c.coupling.w = w;
            c.coupling.kind = kind;
            c.amp.coupled = true;
        }
        c.coupling.nonconforming |= self.nonconforming;
        if let Some(g) = &self.gammas {
            c.coupling.gammas = parse_list(g).context("--gammas")?;
        }
        if let Some(w) = &self.ws {
            c.coupling.ws = parse_list(w).context("--ws")?;
        }
        set(&mut c.thresholds.tol, self.tol);
        set(&mut c.thresholds.e_points, self.e_points);
        set(&mut c.verify.n_inst, self.n_inst);
        if let Some(ls) = &self.ls {
            c.verify.ls = parse_list(ls).context("--Ls")?;
        }
        set(&mut c.verify.h, self.h);
        set(&mut c.verify.slack, self.slack);
        Ok(())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve(global: &Global, name: &str, model: &Model) -> Result<Config> {
    let mut c = Config::defaults_for(name);
    if let Some(path) = &global.config {
        c = c.overlay_file(path)?;
    }
    set(&mut c.run.seed, global.seed);
    set(&mut c.run.quad_nodes, global.quad_nodes);
    if global.out.is_some() {
        c.run.out = global.out.clone();
    }
    if global.threads.is_some() {
        c.run.threads = global.threads;
    }
    model.apply(&mut c)?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let (name, model) = match &cli.command {
        Command::PotentialScan(m) => ("potential-scan", m),
        Command::Thresholds(m) => ("thresholds", m),
        Command::SeRun(m) => ("se-run", m),
        Command::CoupledSe(m) => ("coupled-se", m),
        Command::SaturationSweep(m) => ("saturation-sweep", m),
        Command::AmpRun(m) => ("amp-run", m),
        Command::Verify { model, .. } => ("verify", model),
        Command::PhaseDiagram(m) => ("phase-diagram", m),
    };
    let config = resolve(&cli.global, name, model)?;
    if let Some(n) = config.run.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("run.threads")?;
    }
    match cli.command {
        Command::PotentialScan(_) => commands::potential_scan(&config),
        Command::Thresholds(_) => commands::thresholds(&config),
        Command::SeRun(_) => commands::se_run(&config),
        Command::CoupledSe(_) => commands::coupled_se(&config),
        Command::SaturationSweep(_) => commands::saturation_sweep(&config),
        Command::AmpRun(_) => commands::amp_run(&config),
        Command::Verify { check, .. } => commands::verify(&config, check),
        Command::PhaseDiagram(_) => commands::phase_diagram(&config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
