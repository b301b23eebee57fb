//! Built-in scenarios. Each one runs a deterministic pipeline for a given
//! seed, writes its trajectories as tables and grades itself with checks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use kinchem_core::math::gamma_cdf;
use kinchem_core::meanfield::{
    integrate_boltzmann, onsager_flux, reduced_fixed_point, reduced_macro_ode, reduced_two_state, BoltzmannOperator,
    BoltzmannOptions, DensityField, EnergyGrid, FastLimit, MacroState,
};
use kinchem_core::oracle::{
    all_sequences, canonical_classes, chaos_statistic, classify, decay_exponent, essential_count,
    essential_count_exact, series_marginal, simulate_pair_model, type_counts, ExactSystem, PairModel, SeriesTarget,
};
use kinchem_core::spec::{EnergyLaw, EnsembleSpec};
use kinchem_core::stats::{chi_square_uniform, dispersion_index, ks_distance, stderr_mean};
use kinchem_core::thermo::{
    affinity_and_kappa, equilibrium_concentrations, equilibrium_constant, gibbs_identity_check, hess_delta_h,
    variational_check, ThermoPoint,
};
use kinchem_core::{seeded_rng, EnsembleState, RunOptions, Simulator};
use rayon::prelude::*;
use serde_json::json;

use crate::models::{fast_gas, TwoLevel};
use crate::output::{Check, Summary, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Equilibration,
    Unimolecular,
    Redistribution,
    Hess,
    PoissonInvariance,
    Chaos,
    OracleVerify,
    MeanfieldVsMc,
    FluxCheck,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Equilibration,
        Scenario::Unimolecular,
        Scenario::Redistribution,
        Scenario::Hess,
        Scenario::PoissonInvariance,
        Scenario::Chaos,
        Scenario::OracleVerify,
        Scenario::MeanfieldVsMc,
        Scenario::FluxCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Equilibration => "equilibration",
            Scenario::Unimolecular => "unimolecular",
            Scenario::Redistribution => "redistribution",
            Scenario::Hess => "hess",
            Scenario::PoissonInvariance => "poisson-invariance",
            Scenario::Chaos => "chaos",
            Scenario::OracleVerify => "oracle-verify",
            Scenario::MeanfieldVsMc => "meanfield-vs-mc",
            Scenario::FluxCheck => "flux-check",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|c| c.name() == s).with_context(|| {
            let names: Vec<_> = Scenario::ALL.iter().map(|c| c.name()).collect();
            format!("unknown scenario `{s}`; expected one of {}", names.join(", "))
        })
    }
}

/// Direction of the energy redistribution experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Direction {
    /// Start in the high-energy type; chemical energy is released.
    #[default]
    Exothermic,
    /// Start in the low-energy type; heat is taken from the bath.
    Endothermic,
}

/// Command-line overrides. `None` keeps the scenario default.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub beta: Option<f64>,
    pub t_end: Option<f64>,
    pub sample_every: Option<f64>,
    pub replicas: Option<usize>,
    pub grid_size: Option<usize>,
    pub dt: Option<f64>,
    pub direction: Option<Direction>,
    /// Replaces the built-in ensemble of the scenarios that run a generic
    /// one (equilibration, poisson-invariance, meanfield-vs-mc).
    pub config: Option<EnsembleSpec>,
    pub oracle: Option<OracleParams>,
}

impl Overrides {
    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| -> Result<()> {
            match v {
                Some(x) if !(x > 0.0 && x.is_finite()) => bail!("--{name} must be positive, got {x}"),
                _ => Ok(()),
            }
        };
        positive("beta", self.beta)?;
        positive("t-end", self.t_end)?;
        positive("sample-every", self.sample_every)?;
        positive("dt", self.dt)?;
        if self.n == Some(0) {
            bail!("--n must be at least 1");
        }
        if self.replicas == Some(0) {
            bail!("--replicas must be at least 1");
        }
        if matches!(self.grid_size, Some(m) if m < 4) {
            bail!("--grid-size must be at least 4");
        }
        Ok(())
    }
}

/// Output of a scenario run.
#[derive(Clone, Debug)]
pub struct Report {
    pub summary: Summary,
    pub tables: Vec<Table>,
}

impl Report {
    /// Writes every table and then `summary.json` into `dir`.
    pub fn write(&mut self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        self.summary.files.clear();
        for t in &self.tables {
            let path = t.write_csv(dir)?;
            self.summary.files.push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
        self.summary.write(dir)?;
        Ok(())
    }
}

pub fn run_scenario(scenario: Scenario, overrides: &Overrides) -> Result<Report> {
    overrides.validate()?;
    let start = Instant::now();
    let mut report = match scenario {
        Scenario::Equilibration => equilibration(overrides),
        Scenario::Unimolecular => unimolecular(overrides),
        Scenario::Redistribution => redistribution(overrides),
        Scenario::Hess => hess(overrides),
        Scenario::PoissonInvariance => poisson_invariance(overrides),
        Scenario::Chaos => chaos(overrides),
        Scenario::OracleVerify => oracle_verify(overrides),
        Scenario::MeanfieldVsMc => meanfield_vs_mc(overrides),
        Scenario::FluxCheck => flux_check(overrides),
    }?;
    report.summary.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Observation of a particle ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub counts: Vec<u64>,
    pub mean_kinetic: f64,
    pub total_kinetic: f64,
    pub total_chemical: f64,
    pub bath_exchange: f64,
}

impl Sample {
    fn of(state: &EnsembleState, spec: &EnsembleSpec) -> Self {
        let (k, c) = state.recompute_totals(&spec.chem_energies());
        Self {
            time: state.sim_time,
            counts: state.type_counts(spec.n_species()),
            mean_kinetic: state.mean_kinetic(),
            total_kinetic: k,
            total_chemical: c,
            bath_exchange: state.energy_ledger.bath_exchange.value(),
        }
    }

    pub fn fraction(&self, j: usize) -> f64 {
        self.counts[j] as f64 / self.counts.iter().sum::<u64>() as f64
    }
}

/// Runs `spec` to `t_end`, observing every `every` (and at the start and end).
/// `inspect` sees the full state at each observation.
pub fn observe_run(
    spec: &EnsembleSpec,
    t_end: f64,
    every: f64,
    mut inspect: impl FnMut(&EnsembleState, &EnsembleSpec),
) -> Result<(Vec<Sample>, EnsembleState)> {
    let mut sim = Simulator::from_spec(spec.clone())?;
    let mut samples = Vec::new();
    let mut obs = |s: &EnsembleState, sp: &EnsembleSpec| {
        samples.push(Sample::of(s, sp));
        inspect(s, sp);
    };
    sim.run(t_end, &RunOptions { sample_every: Some(every), log_events: false }, &mut [&mut obs]);
    Ok((samples, sim.into_state()))
}

fn replica_seed(seed: u64, replica: usize) -> u64 {
    seed.wrapping_add(replica as u64)
}

fn equilibration(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(11);
    let n = o.n.unwrap_or(10_000);
    let beta = o.beta.unwrap_or(1.0);
    let t_end = o.t_end.unwrap_or(10.0);
    let every = o.sample_every.unwrap_or(0.5);
    let uniform = match &o.config {
        Some(c) => EnsembleSpec { rng_seed: seed, ..c.clone() },
        None => fast_gas(n, EnergyLaw::Uniform { low: 0.0, high: 2.0 / beta }, seed),
    };
    let gamma = EnsembleSpec {
        initial_distribution: kinchem_core::spec::InitialDistribution {
            type_weights: uniform.initial_distribution.type_weights.clone(),
            energy_laws: vec![EnergyLaw::Gamma { beta }; uniform.n_species()],
        },
        rng_seed: seed.wrapping_add(1),
        ..uniform.clone()
    };
    let ks_trace = |spec: &EnsembleSpec| -> Result<(Vec<Sample>, Vec<f64>)> {
        let mut ks = Vec::new();
        let (samples, _) = observe_run(spec, t_end, every, |s, _| {
            let energies: Vec<f64> = s.particles.iter().map(|p| p.kinetic_energy).collect();
            let implied = 1.5 / s.mean_kinetic();
            ks.push(ks_distance(&energies, |x| gamma_cdf(1.5, implied, x)).unwrap_or(f64::NAN));
        })?;
        Ok((samples, ks))
    };
    let (first, second) = rayon::join(|| ks_trace(&uniform), || ks_trace(&gamma));
    let ((su, ku), (sg, kg)) = (first?, second?);
    let mut table = Table::new(
        "equilibration",
        &["t", "mean_T_uniform_start", "ks_uniform_start", "mean_T_gamma_start", "ks_gamma_start"],
    );
    for k in 0..su.len().min(sg.len()) {
        table.push(vec![su[k].time, su[k].mean_kinetic, ku[k], sg[k].mean_kinetic, kg[k]]);
    }
    let energy = |s: &[Sample]| {
        let (a, b) =
            (s[0].total_kinetic + s[0].total_chemical, s[s.len() - 1].total_kinetic + s[s.len() - 1].total_chemical);
        (b - a).abs() / a.abs()
    };
    let mut checks = vec![
        Check::at_most("ks_final_from_uniform", ku[ku.len() - 1], 0.02),
        Check::at_most("ks_max_from_gamma", kg.iter().copied().fold(0.0, f64::max), 0.02),
    ];
    if uniform.scale_heat == 0.0 || uniform.rates.heat_rate == 0.0 {
        checks.push(Check::at_most("energy_drift", energy(&su).max(energy(&sg)), 1e-12));
    }
    Ok(Report {
        summary: Summary::new(
            "equilibration",
            seed,
            json!({"n": uniform.n_particles, "beta": beta, "t_end": t_end, "sample_every": every}),
            checks,
        ),
        tables: vec![table],
    })
}

/// Stationary `c1/c2` from post-burn-in samples with a batch-means error.
pub fn stationary_ratio(samples: &[Sample], burn_in: f64, batches: usize) -> (f64, f64) {
    let kept: Vec<&Sample> = samples.iter().filter(|s| s.time >= burn_in).collect();
    let ratio = |s: &[&Sample]| {
        let c1: f64 = s.iter().map(|x| x.counts[0] as f64).sum();
        let c2: f64 = s.iter().map(|x| x.counts[1] as f64).sum();
        c1 / c2
    };
    let size = kept.len() / batches;
    let per: Vec<f64> = (0..batches).map(|b| ratio(&kept[b * size..(b + 1) * size])).collect();
    (ratio(&kept), stderr_mean(&per).unwrap_or(f64::NAN))
}

fn unimolecular(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(5);
    let model = TwoLevel {
        n: o.n.unwrap_or(10_000),
        beta: o.beta.unwrap_or(1.0),
        scale_heat: 50.0,
        seed,
        ..TwoLevel::default()
    };
    let t_end = o.t_end.unwrap_or(40.0);
    let every = o.sample_every.unwrap_or(0.5);
    let burn_in = 5.0_f64.min(t_end / 4.0);
    let spec = model.spec();
    let (samples, _) = observe_run(&spec, t_end, every, |_, _| {})?;
    let (ratio, se) = stationary_ratio(&samples, burn_in, 10);
    let target = model.stationary_ratio();
    let kappa = equilibrium_constant(&spec.species, model.beta)?;
    let c = spec.density();
    let start = MacroState {
        time: 0.0,
        beta: model.beta,
        concentrations: vec![c * samples[0].fraction(0), c * samples[0].fraction(1)],
    };
    let reduced = reduced_macro_ode(&start, &spec, t_end, every)?;
    let mut table = Table::new("unimolecular", &["t", "c1_mc", "c2_mc", "c1_reduced", "c2_reduced"]);
    for (s, r) in samples.iter().zip(&reduced) {
        table.push(vec![s.time, c * s.fraction(0), c * s.fraction(1), r.concentrations[0], r.concentrations[1]]);
    }
    let checks = vec![
        Check::at_most("stationary_ratio_sigma", (ratio - target).abs() / se, 3.0),
        Check::at_most("kappa_matches_rates", (kappa - target).abs() / target, 1e-10),
    ];
    Ok(Report {
        summary: Summary::new(
            "unimolecular",
            seed,
            json!({"n": model.n, "beta": model.beta, "scale_heat": model.scale_heat, "t_end": t_end,
                   "mc_ratio": ratio, "mc_ratio_stderr": se, "reduced_ratio": target, "kappa": kappa}),
            checks,
        ),
        tables: vec![table],
    })
}

fn redistribution(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(17);
    let direction = o.direction.unwrap_or_default();
    let beta = o.beta.unwrap_or(1.0);
    let model = TwoLevel {
        n: o.n.unwrap_or(10_000),
        beta,
        initial_weights: match direction {
            Direction::Exothermic => [0.0, 1.0],
            Direction::Endothermic => [1.0, 0.0],
        },
        seed,
        ..TwoLevel::default()
    };
    let t_end = o.t_end.unwrap_or(15.0);
    let every = o.sample_every.unwrap_or(0.25);
    let spec = model.spec();
    let (samples, _) = observe_run(&spec, t_end, every, |_, _| {})?;
    let n = model.n as f64;
    let mut table = Table::new("redistribution", &["t", "mean_K", "mean_T", "heat_in_per_particle"]);
    for s in &samples {
        table.push(vec![s.time, s.total_chemical / n, s.mean_kinetic, s.bath_exchange / n]);
    }
    let (first, last) = (&samples[0], &samples[samples.len() - 1]);
    let volume = spec.volume();
    let point = |s: &Sample| {
        ThermoPoint::new(beta, vec![s.counts[0] as f64 / volume, s.counts[1] as f64 / volume], spec.species.clone())
    };
    let delta_h = hess_delta_h(&point(first)?, &point(last)?, volume)?;
    let q = last.bath_exchange;
    // Q - dH is the change of total kinetic energy about its equipartition
    // value, two independent sums of N Gamma(3/2) draws
    let sigma = (2.0 * 1.5 * n).sqrt() / beta;
    let kbar: Vec<f64> = samples.iter().map(|s| s.total_chemical / n).collect();
    let trend = match direction {
        Direction::Exothermic => kbar[kbar.len() - 1] < kbar[0],
        Direction::Endothermic => kbar[kbar.len() - 1] > kbar[0],
    };
    let checks = vec![
        Check::holds(
            "mean_chemical_energy_trend",
            trend,
            format!("K(0) = {:.4}, K(end) = {:.4}", kbar[0], kbar[kbar.len() - 1]),
        ),
        Check::at_most("heat_matches_enthalpy_sigma", (q - delta_h).abs() / sigma, 3.0),
    ];
    Ok(Report {
        summary: Summary::new(
            "redistribution",
            seed,
            json!({"direction": format!("{direction:?}").to_lowercase(), "n": model.n, "beta": beta, "t_end": t_end,
                   "heat_in": q, "heat_released": -q, "delta_h": delta_h}),
            checks,
        ),
        tables: vec![table],
    })
}

fn hess(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(23);
    let beta = o.beta.unwrap_or(1.0);
    let n = o.n.unwrap_or(10_000);
    let t_end = o.t_end.unwrap_or(15.0);
    let slow = TwoLevel { n, beta, w12: 1.0, w21: 1.0, scale_heat: 20.0, seed, ..TwoLevel::default() };
    let quick = TwoLevel { w12: 3.0, w21: 3.0, seed: seed.wrapping_add(1), ..slow.clone() };
    let (sa, sb) = (slow.spec(), quick.spec());
    // common endpoints: the initial state and the Gibbs state at the same c
    let volume = sa.volume();
    let c = sa.density();
    let start = ThermoPoint::new(beta, vec![c, 0.0], sa.species.clone())?;
    let end = ThermoPoint::new(beta, equilibrium_concentrations(&sa.species, beta, c)?, sa.species.clone())?;
    let dh_slow = hess_delta_h(&start, &end, volume)?;
    let start_b = ThermoPoint::new(beta, vec![c, 0.0], sb.species.clone())?;
    let end_b = ThermoPoint::new(beta, equilibrium_concentrations(&sb.species, beta, c)?, sb.species.clone())?;
    let dh_quick = hess_delta_h(&start_b, &end_b, volume)?;
    let (ra, rb) = rayon::join(|| observe_run(&sa, t_end, 0.5, |_, _| {}), || observe_run(&sb, t_end, 0.5, |_, _| {}));
    let (ra, rb) = (ra?.0, rb?.0);
    let fa = ra[ra.len() - 1].fraction(0);
    let fb = rb[rb.len() - 1].fraction(0);
    let sigma = (fa * (1.0 - fa) / n as f64 + fb * (1.0 - fb) / n as f64).sqrt();
    let mut table = Table::new("hess", &["t", "c1_rates_a", "c1_rates_b"]);
    for (a, b) in ra.iter().zip(&rb) {
        table.push(vec![a.time, c * a.fraction(0), c * b.fraction(0)]);
    }
    let checks = vec![
        Check::holds("delta_h_path_independent", dh_slow == dh_quick, format!("{dh_slow} vs {dh_quick}")),
        Check::at_most("endpoint_concentration_sigma", (fa - fb).abs() / sigma, 3.0),
    ];
    Ok(Report {
        summary: Summary::new(
            "hess",
            seed,
            json!({"n": n, "beta": beta, "t_end": t_end, "delta_h": dh_slow, "final_c1": [fa * c, fb * c]}),
            checks,
        ),
        tables: vec![table],
    })
}

/// Particle counts in `k^3` equal sub-boxes.
pub fn box_counts(state: &EnsembleState, side: f64, k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k * k * k];
    for p in &state.particles {
        let cell = |x: f64| ((x / side * k as f64) as usize).min(k - 1);
        counts[(cell(p.position[0]) * k + cell(p.position[1])) * k + cell(p.position[2])] += 1;
    }
    counts
}

fn poisson_invariance(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(31);
    let spec = match &o.config {
        Some(c) => EnsembleSpec { rng_seed: seed, ..c.clone() },
        None => TwoLevel { n: o.n.unwrap_or(10_000), beta: o.beta.unwrap_or(1.0), seed, ..TwoLevel::default() }.spec(),
    };
    let t_end = o.t_end.unwrap_or(4.0);
    let every = o.sample_every.unwrap_or(1.0);
    let mut table = Table::new("poisson_invariance", &["t", "dispersion_index", "chi_square", "p_value"]);
    let side = spec.box_side;
    observe_run(&spec, t_end, every, |s, _| {
        let counts = box_counts(s, side, 10);
        let d = dispersion_index(&counts).unwrap_or(f64::NAN);
        let (chi, p) = chi_square_uniform(&counts).unwrap_or((f64::NAN, f64::NAN));
        table.push(vec![s.sim_time, d, chi, p]);
    })?;
    let later: Vec<&Vec<f64>> = table.rows.iter().filter(|r| r[0] > 0.0).collect();
    let mut checks = Vec::new();
    for r in &later {
        checks.push(Check::within(&format!("dispersion_t{}", r[0]), r[1], 0.9, 1.1));
        checks.push(Check::at_least(&format!("chi_square_p_t{}", r[0]), r[3], 0.01));
    }
    if later.is_empty() {
        checks.push(Check::holds("observed_after_start", false, "no observation at t > 0"));
    }
    Ok(Report {
        summary: Summary::new(
            "poisson-invariance",
            seed,
            json!({"n": spec.n_particles, "t_end": t_end, "boxes": 1000}),
            checks,
        ),
        tables: vec![table],
    })
}

/// Correlation estimates of the voter pair model for each `N`.
pub fn chaos_scan(
    sizes: &[usize],
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<kinchem_core::oracle::ChaosEstimate>> {
    let model = PairModel::voter(1.0);
    let mu0 = [0.5, 0.5];
    sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let base = replica_seed(seed, k * 1_000_003);
            let counts: Vec<Vec<u64>> = (0..replicas)
                .into_par_iter()
                .map(|i| {
                    let mut rng = seeded_rng(base, i as u64);
                    let states = simulate_pair_model(&model, &mu0, n, t, &mut rng, None)?;
                    let mut c = vec![0u64; 2];
                    states.into_iter().for_each(|s| c[s] += 1);
                    Ok(c)
                })
                .collect::<Result<_, kinchem_core::oracle::OracleError>>()?;
            Ok(chaos_statistic(&counts, n)?)
        })
        .collect()
}

fn chaos(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(41);
    let t = o.t_end.unwrap_or(1.0);
    let replicas = o.replicas.unwrap_or(4000);
    let sizes = [100usize, 400, 1600];
    let estimates = chaos_scan(&sizes, t, replicas, seed)?;
    let at_zero = chaos_scan(&[100], 0.0, replicas, seed.wrapping_add(7))?;
    let corr: Vec<f64> = estimates.iter().map(|e| e.max_abs()).collect();
    let fit = decay_exponent(&sizes, &corr)?;
    let voter = PairModel::voter(1.0);
    let small = [3usize, 4, 5, 6];
    let exact: Vec<f64> =
        small.iter().map(|&n| Ok(ExactSystem::new(&voter, n)?.correlation(&[0.5, 0.5], t))).collect::<Result<_>>()?;
    let mut table = Table::new("chaos", &["n", "max_abs_covariance", "stderr"]);
    for e in &estimates {
        table.push(vec![e.particles as f64, e.max_abs(), e.max_stderr()]);
    }
    let mut exact_table = Table::new("chaos_exact", &["n", "max_abs_covariance"]);
    for (n, c) in small.iter().zip(&exact) {
        exact_table.push(vec![*n as f64, *c]);
    }
    let checks = vec![
        Check::within("decay_exponent", fit.slope, -1.3, -0.7),
        Check::holds(
            "exact_monotone_decrease",
            exact.windows(2).all(|w| w[1] < w[0]) && exact[0] > 0.0,
            format!("{exact:?}"),
        ),
        Check::at_most("product_at_time_zero_sigma", at_zero[0].max_abs() / at_zero[0].max_stderr(), 3.0),
    ];
    Ok(Report {
        summary: Summary::new(
            "chaos",
            seed,
            json!({"t": t, "replicas": replicas, "sizes": sizes, "slope": fit.slope, "slope_stderr": fit.slope_stderr}),
            checks,
        ),
        tables: vec![table, exact_table],
    })
}

/// Parameters of the series-versus-generator comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleParams {
    pub states: usize,
    pub particles: usize,
    pub lambda_t: f64,
    pub n_max: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self { states: 2, particles: 5, lambda_t: 0.1, n_max: 4 }
    }
}

/// Outcome of the resummation series at finite `N` against the exact
/// generator exponential.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SeriesComparison {
    pub series: Vec<f64>,
    pub exact: Vec<f64>,
    pub max_abs_error: f64,
    pub l1_error: f64,
    pub tail_bound: f64,
    pub omitted_mass: f64,
}

pub fn compare_series(p: OracleParams, seed: u64) -> Result<SeriesComparison> {
    let mut rng = seeded_rng(seed, 0);
    let model = PairModel::random(p.states, 1.0, &mut rng);
    let mu0: Vec<f64> = {
        let raw: Vec<f64> = (0..p.states).map(|k| 1.0 + k as f64).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    };
    let series = series_marginal(&model, &mu0, p.lambda_t, p.n_max, SeriesTarget::Finite(p.particles), None)?;
    let exact = ExactSystem::new(&model, p.particles)?.one_particle(&mu0, p.lambda_t);
    let diff: Vec<f64> = series.marginal.iter().zip(&exact).map(|(a, b)| (a - b).abs()).collect();
    Ok(SeriesComparison {
        max_abs_error: diff.iter().copied().fold(0.0, f64::max),
        l1_error: diff.iter().sum(),
        series: series.marginal,
        exact,
        tail_bound: series.tail_bound,
        omitted_mass: series.omitted_mass,
    })
}

/// Combinatorial identities for `n <= n_max`, `N <= n_particles`: brute-force
/// essential counts against the product formula, and the `N -> infinity`
/// limits of the scaled counts.
pub fn combinatorics_checks(n_max: usize, n_particles: usize) -> Vec<Check> {
    let mut exact_ok = true;
    let mut detail = String::new();
    for big in 2..=n_particles {
        for n in 1..=n_max.min(big - 1) {
            let brute = all_sequences(n, big as u32)
                .iter()
                .filter(|s| {
                    let c = classify(s, 1);
                    c.essential && c.anchored
                })
                .count() as u128;
            let product = essential_count_exact(n, big);
            let classes: u128 = canonical_classes(n, big, true).iter().map(|c| c.multiplicity(big)).sum();
            if brute != product || classes != product {
                exact_ok = false;
                detail += &format!("N={big} n={n}: {brute} vs {product}; ");
            }
        }
    }
    let big = 1_000_000usize;
    let limit_err = (1..=n_max)
        .map(|n| {
            let f: f64 = (1..=n).map(|k| k as f64).product();
            (essential_count(n, big).unwrap_or(f64::NAN) - f).abs() / f
        })
        .fold(0.0, f64::max);
    let noness = |big: usize| {
        (1..=n_max.max(4))
            .flat_map(|n| {
                let norm = ((big - 1) as f64).powi(n as i32);
                type_counts(n, big).into_iter().filter(|(a, _)| !a.is_empty()).map(move |(_, c)| c as f64 / norm)
            })
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (noness(1_000), noness(10_000));
    vec![
        Check::holds(
            "essential_count_exact",
            exact_ok,
            if detail.is_empty() { "all equal".to_owned() } else { detail },
        ),
        Check::at_most("essential_limit_relative_error", limit_err, 1e-4),
        Check::at_most("nonessential_scaled_max_at_n_1e4", fine, 1e-2),
        // the scaled counts fall off like 1/N
        Check::at_most("nonessential_decay_ratio", fine / coarse, 0.15),
    ]
}

fn oracle_verify(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(3);
    let p = o.oracle.unwrap_or_default();
    let cmp = compare_series(p, seed)?;
    let mut checks = vec![
        Check::at_most("series_vs_exact_within_tail", cmp.max_abs_error, cmp.tail_bound),
        Check::at_most("l1_error_equals_omitted_mass", (cmp.l1_error - cmp.omitted_mass).abs(), 1e-12),
    ];
    checks.extend(combinatorics_checks(3, 6));
    let mut table = Table::new("oracle_marginal", &["state", "series", "exact"]);
    for (k, (a, b)) in cmp.series.iter().zip(&cmp.exact).enumerate() {
        table.push(vec![k as f64, *a, *b]);
    }
    Ok(Report {
        summary: Summary::new(
            "oracle-verify",
            seed,
            json!({"states": p.states, "n": p.particles, "lambda_t": p.lambda_t, "nmax": p.n_max, "comparison": cmp}),
            checks,
        ),
        tables: vec![table],
    })
}

/// Mean-field trajectory sampled at the given spacing.
pub fn meanfield_run(
    spec: &EnsembleSpec,
    grid_size: usize,
    dt: Option<f64>,
    t_end: f64,
    every: f64,
) -> Result<Vec<DensityField>> {
    let grid = EnergyGrid::for_spec(spec, grid_size);
    let field = DensityField::from_spec(spec, grid);
    let op = BoltzmannOperator::new(spec, grid, FastLimit::Off);
    let dt = dt.unwrap_or(0.4 / op.max_outflow().max(1e-12));
    let run = integrate_boltzmann(
        &field,
        spec,
        &BoltzmannOptions { dt, t_end, sample_every: Some(every), fast_limit: FastLimit::Off },
    )?;
    Ok(run.snapshots)
}

fn meanfield_vs_mc(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(53);
    let model = TwoLevel { n: o.n.unwrap_or(10_000), beta: o.beta.unwrap_or(1.0), seed, ..TwoLevel::default() };
    let spec = match &o.config {
        Some(c) => EnsembleSpec { rng_seed: seed, ..c.clone() },
        None => model.spec(),
    };
    let w = spec.rates.unary.iter().flatten().copied().fold(0.0, f64::max).max(1e-12);
    let t_end = o.t_end.unwrap_or(5.0 / w);
    let every = o.sample_every.unwrap_or(t_end / 20.0);
    let (samples, _) = observe_run(&spec, t_end, every, |_, _| {})?;
    let fields = meanfield_run(&spec, o.grid_size.unwrap_or(400), o.dt, t_end, every)?;
    let j = spec.n_species();
    let mut cols: Vec<String> = vec!["t".into()];
    for k in 0..j {
        cols.push(format!("c{}_mc", k + 1));
        cols.push(format!("c{}_mf", k + 1));
    }
    cols.push("mean_T_mc".into());
    cols.push("mean_T_mf".into());
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut table = Table::new("meanfield_vs_mc", &refs);
    let mut worst: f64 = 0.0;
    for (s, f) in samples.iter().zip(&fields) {
        let mf = f.type_masses();
        let mut row = vec![s.time];
        for (k, m) in mf.iter().enumerate() {
            row.push(s.fraction(k));
            row.push(*m);
            worst = worst.max((s.fraction(k) - m).abs());
        }
        row.push(s.mean_kinetic);
        row.push(f.mean_kinetic());
        table.push(row);
    }
    let tol = 3.0 / (spec.n_particles as f64).sqrt();
    let checks = vec![
        Check::at_most("max_concentration_gap", worst, tol),
        Check::holds("times_aligned", samples.len() == fields.len(), format!("{} vs {}", samples.len(), fields.len())),
    ];
    Ok(Report {
        summary: Summary::new(
            "meanfield-vs-mc",
            seed,
            json!({"n": spec.n_particles, "t_end": t_end, "grid_size": o.grid_size.unwrap_or(400)}),
            checks,
        ),
        tables: vec![table],
    })
}

/// Flux, Gibbs-identity and variational checks along the reduced chain.
pub struct FluxReport {
    pub max_flux_error: f64,
    pub flux_at_zero: f64,
    pub gibbs_residual: f64,
    pub g_nonincreasing: bool,
    pub s_m_nonincreasing: bool,
    pub table: Table,
}

pub fn reduced_thermo_checks(model: &TwoLevel, t_end: f64, every: f64) -> Result<FluxReport> {
    let spec = model.spec();
    let beta = model.beta;
    let c = spec.density();
    let start = MacroState { time: 0.0, beta, concentrations: vec![0.95 * c, 0.05 * c] };
    let traj = reduced_macro_ode(&start, &spec, t_end, every)?;
    let fixed = reduced_fixed_point(&spec, c)?;
    let conc: Vec<Vec<f64>> = traj.iter().map(|m| m.concentrations.clone()).collect();
    let gibbs = gibbs_identity_check(&spec.species, beta, &fixed, &conc)?;
    let (v12, v21) = reduced_two_state(&spec)?;
    let h = 1e-3;
    let mut table = Table::new("flux_check", &["t", "c1", "c2", "affinity", "flux", "dc1_dt_over_c", "g", "s_m"]);
    let mut worst: f64 = 0.0;
    for (k, m) in traj.iter().enumerate() {
        let a = affinity_and_kappa(&m.thermo_point(&spec)?)?.a;
        let j1 = onsager_flux(a, v12, v21, beta)?;
        // fourth-order forward difference, the propagator runs forward only
        let f: Vec<f64> = reduced_macro_ode(m, &spec, 4.0 * h, h)?.iter().map(|x| x.concentrations[0]).collect();
        let d = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
        let rate = d / m.total();
        worst = worst.max((rate - j1).abs());
        table.push(vec![m.time, m.concentrations[0], m.concentrations[1], a, j1, rate, gibbs.g[k], gibbs.s_m[k]]);
    }
    Ok(FluxReport {
        max_flux_error: worst,
        flux_at_zero: onsager_flux(0.0, v12, v21, beta)?,
        gibbs_residual: gibbs.max_residual,
        g_nonincreasing: gibbs.g_nonincreasing,
        s_m_nonincreasing: gibbs.s_m_nonincreasing,
        table,
    })
}

fn flux_check(o: &Overrides) -> Result<Report> {
    let seed = o.seed.unwrap_or(0);
    let model = TwoLevel { n: 1000, beta: o.beta.unwrap_or(1.0), w12: 0.7, w21: 1.3, ..TwoLevel::default() };
    let t_end = o.t_end.unwrap_or(10.0);
    let every = o.sample_every.unwrap_or(0.05);
    let r = reduced_thermo_checks(&model, t_end, every)?;
    let mut worst_var: f64 = 0.0;
    for levels in [vec![0.0, 0.5, 2.0], vec![0.0, 1.0, 1.5, 3.0], vec![-1.0, 0.0, 0.3, 2.0, 2.5]] {
        worst_var = worst_var.max(variational_check(&levels, model.beta)?.max_abs_error);
    }
    let checks = vec![
        Check::at_most("flux_matches_finite_difference", r.max_flux_error, 1e-8),
        Check::holds("flux_zero_at_equilibrium", r.flux_at_zero == 0.0, format!("J(0) = {}", r.flux_at_zero)),
        Check::at_most("gibbs_identity_residual", r.gibbs_residual, 1e-10),
        Check::holds("g_nonincreasing", r.g_nonincreasing, "every output step"),
        Check::holds("relative_entropy_nonincreasing", r.s_m_nonincreasing, "every output step"),
        Check::at_most("entropy_maximizer_vs_gibbs", worst_var, 1e-8),
    ];
    Ok(Report {
        summary: Summary::new(
            "flux-check",
            seed,
            json!({"beta": model.beta, "w12": model.w12, "w21": model.w21, "t_end": t_end, "sample_every": every}),
            checks,
        ),
        tables: vec![r.table],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("nope".parse::<Scenario>().is_err());
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let o = Overrides { beta: Some(-1.0), ..Overrides::default() };
        assert!(run_scenario(Scenario::FluxCheck, &o).is_err());
    }

    #[test]
    fn box_counts_cover_all_particles() {
        let spec = fast_gas(500, EnergyLaw::Point { value: 1.0 }, 2);
        let state = kinchem_core::spec::sample_initial_state(&spec, 2).unwrap();
        assert_eq!(box_counts(&state, spec.box_side, 4).iter().sum::<u64>(), 500);
    }
}
