#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kinchem_core::meanfield::{
    integrate_boltzmann, reduced_fixed_point, reduced_macro_ode, BoltzmannOperator, BoltzmannOptions, DensityField,
    EnergyGrid, FastLimit, MacroState,
};
use kinchem_core::spec::EnsembleSpec;
use kinchem_core::thermo::{affinity_and_kappa, markov_entropy, potentials, ThermoPoint};
use kinchem_core::{EnsembleState, EventRecord, RunOptions, Simulator};
use rayon::prelude::*;
use serde_json::json;

use kinchem::config::load_config;
use kinchem::output::{Check, Summary, Table};
use kinchem::scenarios::{run_scenario, Direction, OracleParams, Overrides, Report, Scenario};

#[derive(Parser, Debug)]
#[command(
    name = "kinchem",
    version,
    about = "Stochastic kinetic chemistry: particle, mean-field and thermodynamic runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a built-in scenario (the scenario name alone also works).
    Run(RunArgs),
    /// Simulate a configured ensemble with one of the engines.
    Sim(SimArgs),
    /// Thermodynamic evaluation.
    #[command(subcommand)]
    Thermo(ThermoCommand),
    /// Resummation oracle.
    #[command(subcommand)]
    Oracle(OracleCommand),
    #[command(external_subcommand)]
    External(Vec<String>),
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    scenario: String,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    sample_every: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_enum)]
    direction: Option<Direction>,
}

/// Wrapper so `kinchem <scenario> ...` parses like `kinchem run <scenario> ...`.
#[derive(Parser, Debug)]
#[command(name = "kinchem")]
struct ScenarioCli {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Engine {
    Particle,
    Meanfield,
    Reduced,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "particle")]
    engine: Engine,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    /// Defaults to a hundredth of the run.
    #[arg(long)]
    sample_every: Option<f64>,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
    #[arg(long)]
    log_events: bool,
    #[arg(long, default_value_t = 200)]
    grid_size: usize,
    /// Defaults to a step well inside the stability limit.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum ThermoCommand {
    /// Potentials of a point given by concentrations.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated concentrations, one per species.
        #[arg(long, value_delimiter = ',', required = true)]
        c: Vec<f64>,
        /// Defaults to the bath temperature of the config.
        #[arg(long)]
        beta: Option<f64>,
    },
}

#[derive(Subcommand, Debug)]
enum OracleCommand {
    /// Compare the truncated series with the exact generator.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        lambda_t: f64,
        #[arg(long, default_value_t = 4)]
        nmax: usize,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(report) => {
            for c in &report.summary.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if report.summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<Report> {
    let (mut report, out) = match cli.command {
        Command::Run(args) => scenario(args)?,
        Command::External(words) => {
            let parsed = ScenarioCli::try_parse_from(std::iter::once("kinchem".to_owned()).chain(words))?;
            scenario(parsed.run)?
        }
        Command::Sim(args) => {
            let out = args.common.out.clone();
            (sim(args)?, out)
        }
        Command::Thermo(ThermoCommand::Eval { common, c, beta }) => (thermo_eval(&common, &c, beta)?, common.out),
        Command::Oracle(OracleCommand::Verify { common, states, n, lambda_t, nmax }) => {
            let o = Overrides {
                seed: common.seed,
                oracle: Some(OracleParams { states, particles: n, lambda_t, n_max: nmax }),
                ..Overrides::default()
            };
            (run_scenario(Scenario::OracleVerify, &o)?, common.out)
        }
    };
    report.write(&out)?;
    Ok(report)
}

fn load(common: &Common) -> Result<Option<EnsembleSpec>> {
    let Some(path) = &common.config else { return Ok(None) };
    let mut spec = load_config(path)?;
    if let Some(seed) = common.seed {
        spec.rng_seed = seed;
    }
    Ok(Some(spec))
}

fn require(common: &Common) -> Result<EnsembleSpec> {
    load(common)?.context("--config is required")
}

fn scenario(args: RunArgs) -> Result<(Report, PathBuf)> {
    let name: Scenario = args.scenario.parse()?;
    let o = Overrides {
        seed: args.common.seed,
        n: args.n,
        beta: args.beta,
        t_end: args.t_end,
        sample_every: args.sample_every,
        replicas: args.replicas,
        grid_size: args.grid_size,
        dt: args.dt,
        direction: args.direction,
        config: load(&args.common)?,
        oracle: None,
    };
    Ok((run_scenario(name, &o)?, args.common.out))
}

fn sim(args: SimArgs) -> Result<Report> {
    let started = std::time::Instant::now();
    let spec = require(&args.common)?;
    if !(args.t_end > 0.0) {
        bail!("--t-end must be positive");
    }
    let every = args.sample_every.unwrap_or(args.t_end / 100.0);
    if !(every > 0.0) {
        bail!("--sample-every must be positive");
    }
    let (tables, checks) = match args.engine {
        Engine::Particle => particle(&spec, &args, every)?,
        Engine::Meanfield => meanfield(&spec, &args, every)?,
        Engine::Reduced => reduced(&spec, args.t_end, every)?,
    };
    let params = json!({"engine": format!("{:?}", args.engine).to_lowercase(), "n": spec.n_particles, "t_end": args.t_end,
                        "sample_every": every, "replicas": args.replicas});
    let mut summary = Summary::new("sim", spec.rng_seed, params, checks);
    summary.elapsed_seconds = started.elapsed().as_secs_f64();
    Ok(Report { summary, tables })
}

fn particle_columns(j: usize) -> Vec<String> {
    let mut cols = vec!["t".to_owned()];
    cols.extend((1..=j).map(|k| format!("n_{k}")));
    cols.extend(["mean_T", "total_K", "total_kinetic", "bath_exchange"].map(str::to_owned));
    cols
}

fn particle(spec: &EnsembleSpec, args: &SimArgs, every: f64) -> Result<(Vec<Table>, Vec<Check>)> {
    let j = spec.n_species();
    let runs: Vec<(Table, Vec<EventRecord>, f64)> = (0..args.replicas)
        .into_par_iter()
        .map(|r| {
            let mut s = spec.clone();
            s.rng_seed = spec.rng_seed.wrapping_add(r as u64);
            let mut sim = Simulator::from_spec(s)?;
            let cols = particle_columns(j);
            let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
            let name = if args.replicas == 1 { "trajectory".to_owned() } else { format!("trajectory_{r}") };
            let mut table = Table::new(&name, &refs);
            let start = total_energy(sim.snapshot(), spec);
            let mut obs = |st: &EnsembleState, sp: &EnsembleSpec| {
                let (kin, chem) = st.recompute_totals(&sp.chem_energies());
                let mut row = vec![st.sim_time];
                row.extend(st.type_counts(j).into_iter().map(|x| x as f64));
                row.extend([st.mean_kinetic(), chem, kin, st.energy_ledger.bath_exchange.value()]);
                table.push(row);
            };
            let log = sim.run(
                args.t_end,
                &RunOptions { sample_every: Some(every), log_events: args.log_events },
                &mut [&mut obs],
            );
            let end = sim.into_state();
            let closure = (total_energy(&end, spec) - start - end.energy_ledger.bath_exchange.value()).abs()
                / start.abs().max(1.0);
            Ok((table, log, closure))
        })
        .collect::<Result<_>>()?;
    let mut tables = Vec::new();
    let mut worst: f64 = 0.0;
    for (r, (table, log, closure)) in runs.into_iter().enumerate() {
        tables.push(table);
        worst = worst.max(closure);
        if args.log_events {
            let name = if args.replicas == 1 { "events".to_owned() } else { format!("events_{r}") };
            tables.push(event_table(&name, &log));
        }
    }
    Ok((tables, vec![Check::at_most("energy_ledger_closure", worst, 1e-10)]))
}

fn total_energy(state: &EnsembleState, spec: &EnsembleSpec) -> f64 {
    let (k, c) = state.recompute_totals(&spec.chem_energies());
    k + c
}

/// Events as numbers: channel index, then `(index, species, T)` before and
/// after for each participant, with `-1` for a missing second particle.
fn event_table(name: &str, log: &[EventRecord]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "t",
            "channel",
            "i",
            "species_before_i",
            "T_before_i",
            "species_after_i",
            "T_after_i",
            "k",
            "species_before_k",
            "T_before_k",
            "species_after_k",
            "T_after_k",
        ],
    );
    for e in log {
        let channel = kinchem_core::Channel::ALL.iter().position(|c| *c == e.channel).unwrap_or(0) as f64;
        let touch = |x: Option<&kinchem_core::state::Touch>| match x {
            Some(x) => [x.index as f64, x.before.0 as f64, x.before.1, x.after.0 as f64, x.after.1],
            None => [-1.0; 5],
        };
        let mut row = vec![e.time, channel];
        row.extend(touch(Some(&e.first)));
        row.extend(touch(e.second.as_ref()));
        t.push(row);
    }
    t
}

fn macro_columns(j: usize) -> Vec<String> {
    let mut cols = vec!["t".to_owned()];
    cols.extend((1..=j).map(|k| format!("c_{k}")));
    cols.extend(["mean_T", "g", "H", "S_M", "A"].map(str::to_owned));
    cols
}

/// Appends `(t, c, mean T, g, H, S_M, A)` for concentrations `c`.
fn macro_row(table: &mut Table, spec: &EnsembleSpec, pi: &[f64], t: f64, c: &[f64], mean_t: f64) -> Result<()> {
    let beta = spec.rates.bath_beta;
    let point = ThermoPoint::new(beta, c.to_vec(), spec.species.clone())?;
    let pot = potentials(&point, spec.volume())?;
    let total: f64 = c.iter().sum();
    let p: Vec<f64> = c.iter().map(|x| x / total).collect();
    let s_m = markov_entropy(&p, pi)?;
    let a = if c.len() == 2 { affinity_and_kappa(&point).map_or(f64::NAN, |x| x.a) } else { f64::NAN };
    let mut row = vec![t];
    row.extend_from_slice(c);
    row.extend([mean_t, pot.g_density, pot.h, s_m, a]);
    table.push(row);
    Ok(())
}

fn stationary_law(spec: &EnsembleSpec) -> Result<Vec<f64>> {
    Ok(reduced_fixed_point(spec, 1.0)?)
}

fn meanfield(spec: &EnsembleSpec, args: &SimArgs, every: f64) -> Result<(Vec<Table>, Vec<Check>)> {
    let grid = EnergyGrid::for_spec(spec, args.grid_size);
    let op = BoltzmannOperator::new(spec, grid, FastLimit::Off);
    let dt = args.dt.unwrap_or(0.4 / op.max_outflow().max(1e-12));
    let field = DensityField::from_spec(spec, grid);
    let run = integrate_boltzmann(
        &field,
        spec,
        &BoltzmannOptions { dt, t_end: args.t_end, sample_every: Some(every), fast_limit: FastLimit::Off },
    )?;
    let pi = stationary_law(spec)?;
    let cols = macro_columns(spec.n_species());
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut table = Table::new("meanfield", &refs);
    for f in &run.snapshots {
        macro_row(&mut table, spec, &pi, f.time, &f.concentrations(spec.density()), f.mean_kinetic())?;
    }
    Ok((vec![table], vec![Check::at_most("mass_drift_per_step", run.max_mass_drift, 1e-6)]))
}

fn reduced(spec: &EnsembleSpec, t_end: f64, every: f64) -> Result<(Vec<Table>, Vec<Check>)> {
    let beta = spec.rates.bath_beta;
    let c = spec.density();
    let w = &spec.initial_distribution.type_weights;
    let s: f64 = w.iter().sum();
    let start = MacroState { time: 0.0, beta, concentrations: w.iter().map(|x| c * x / s).collect() };
    let traj = reduced_macro_ode(&start, spec, t_end, every)?;
    let pi = stationary_law(spec)?;
    let cols = macro_columns(spec.n_species());
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut table = Table::new("reduced", &refs);
    for m in &traj {
        macro_row(&mut table, spec, &pi, m.time, &m.concentrations, 1.5 / beta)?;
    }
    let drift = traj.iter().map(|m| (m.total() - c).abs() / c).fold(0.0, f64::max);
    Ok((vec![table], vec![Check::at_most("total_concentration_drift", drift, 1e-12)]))
}

fn thermo_eval(common: &Common, c: &[f64], beta: Option<f64>) -> Result<Report> {
    let spec = require(common)?;
    let beta = beta.unwrap_or(spec.rates.bath_beta);
    let point = ThermoPoint::new(beta, c.to_vec(), spec.species.clone())?;
    let volume = spec.volume();
    let pot = potentials(&point, volume)?;
    let mu = kinchem_core::thermo::chemical_potential(&point)?;
    let affinity = if c.len() == 2 { Some(affinity_and_kappa(&point)?) } else { None };
    let mut table = Table::new("potentials", &["P", "U", "H", "S", "G", "F", "Omega", "g"]);
    table.push(vec![pot.p, pot.u, pot.h, pot.s, pot.g, pot.f, pot.omega, pot.g_density]);
    let residual = pot.identity_residual(beta, volume);
    let params = json!({"beta": beta, "c": c, "volume": volume, "potentials": pot, "chemical_potentials": mu, "affinity": affinity});
    let checks = vec![Check::at_most("potential_identities", residual, 1e-12)];
    Ok(Report { summary: Summary::new("thermo-eval", spec.rng_seed, params, checks), tables: vec![table] })
}
