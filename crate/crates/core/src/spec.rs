//! Model configuration: species constants, rate tables and the ensemble
//! description shared by every engine.
//!
//! Species carry a one-based `type_id` label, which is also the label used by
//! the slow-binary transition list. Everywhere else (matrices, particle
//! states) species are addressed by their zero-based position in
//! [`EnsembleSpec::species`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::seeded_rng;
use crate::state::{uniform_direction, EnsembleState, ParticleState};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeciesSpec {
    /// One-based label, equal to the species' position in the list plus one.
    pub type_id: u32,
    /// Translational mass `m_j`.
    pub mass: f64,
    /// Total degrees of freedom `d_j`, at least the three translational ones.
    pub dof: u32,
    /// Oscillator masses `m_{j,k}` of the `d_j - 3` internal quadratic
    /// degrees of freedom. When absent, each internal factor is taken as 1.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub internal_masses: Option<Vec<f64>>,
    /// Chemical (slow) energy `K_j`.
    pub chem_energy: f64,
}

impl SpeciesSpec {
    /// A three-dof species without internal structure.
    pub fn simple(type_id: u32, mass: f64, chem_energy: f64) -> Self {
        Self { type_id, mass, dof: 3, internal_masses: None, chem_energy }
    }
}

/// Temperature dependence of the slow binary rate `b_jj'(T, T')`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BinaryKernel {
    /// `b_jj'` equal to its bound for every pair of energies.
    #[default]
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TypeOutcome {
    /// Product labels `(j1, j1')`, matched position-wise with `from`.
    pub types: [u32; 2],
    pub weight: f64,
}

/// Outcome law of a reacting pair `(j, j')`. The reversed pair `(j', j)` uses
/// the same outcomes with the products swapped.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TypeTransition {
    pub from: [u32; 2],
    pub outcomes: Vec<TypeOutcome>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlowBinaryTable {
    /// Symmetric bounds `b_jj'` on the per-ordered-pair rate.
    pub rate_bounds: Vec<Vec<f64>>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub kernel: BinaryKernel,
    /// Pairs without an entry react into themselves, which is an energy
    /// exchange without type change.
    #[cfg_attr(feature = "serde", serde(default))]
    pub transitions: Vec<TypeTransition>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateTable {
    /// Base rates `w_jj'` of the threshold family
    /// `u_jj'(T) = w_jj' * [T + K_j - K_j' >= 0]`. Diagonal must be zero.
    pub unary: Vec<Vec<f64>>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub slow_binary: Option<SlowBinaryTable>,
    /// Symmetric Kac exchange constants `f_jj'` per ordered pair.
    pub fast_binary: Vec<Vec<f64>>,
    /// Per-particle rate `h` of bath collisions.
    pub heat_rate: f64,
    /// Inverse temperature of the bath.
    pub bath_beta: f64,
}

impl RateTable {
    /// All channels switched off for `n` species at bath temperature `beta`.
    pub fn zeros(n: usize, bath_beta: f64) -> Self {
        Self { unary: zero_matrix(n), slow_binary: None, fast_binary: zero_matrix(n), heat_rate: 0.0, bath_beta }
    }
}

pub fn zero_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| alloc::vec![0.0; n]).collect()
}

/// Law of the initial kinetic energy of one species.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "law", rename_all = "snake_case"))]
pub enum EnergyLaw {
    Uniform {
        low: f64,
        high: f64,
    },
    /// `Gamma(3/2, beta)`: the Maxwell kinetic-energy law at inverse
    /// temperature `beta`.
    Gamma {
        beta: f64,
    },
    Point {
        value: f64,
    },
}

impl EnergyLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            EnergyLaw::Uniform { low, high } => 0.5 * (low + high),
            EnergyLaw::Gamma { beta } => 1.5 / beta,
            EnergyLaw::Point { value } => value,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            EnergyLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            EnergyLaw::Gamma { beta } => maxwell_energy(beta).sample(rng),
            EnergyLaw::Point { value } => value,
        }
    }
}

/// The `Gamma(3/2, beta)` kinetic-energy law of a three-dimensional Maxwell
/// gas.
pub fn maxwell_energy(beta: f64) -> Gamma<f64> {
    Gamma::new(1.5, 1.0 / beta).expect("beta must be positive and finite")
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InitialDistribution {
    pub type_weights: Vec<f64>,
    pub energy_laws: Vec<EnergyLaw>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnsembleSpec {
    pub n_particles: usize,
    /// The box is the torus `[0, box_side)^3`.
    pub box_side: f64,
    pub species: Vec<SpeciesSpec>,
    pub rates: RateTable,
    /// Multiplier `s_f` of the fast binary channel.
    pub scale_fast: f64,
    /// Multiplier `s_beta` of the heat channel.
    pub scale_heat: f64,
    pub rng_seed: u64,
    pub initial_distribution: InitialDistribution,
}

impl EnsembleSpec {
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn volume(&self) -> f64 {
        self.box_side * self.box_side * self.box_side
    }

    pub fn chem_energies(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.chem_energy).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.mass).collect()
    }

    /// Particle density `N / Lambda`.
    pub fn density(&self) -> f64 {
        self.n_particles as f64 / self.volume()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_spec(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Outcome of [`validate_spec`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Whether any violation concerns `field` (exact match or a sub-field).
    pub fn mentions(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field.contains(field))
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { field: field.into(), message: message.into() });
    }

    pub fn into_result(self) -> Result<(), SpecError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(SpecError::Invalid(self))
        }
    }
}

impl core::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("invalid model specification: {0}")]
    Invalid(ValidationReport),
}

fn check_rate_matrix(report: &mut ValidationReport, name: &str, m: &[Vec<f64>], n: usize, symmetric: bool) {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        report.push(name, format!("must be a {n}x{n} matrix"));
        return;
    }
    for i in 0..n {
        for j in 0..n {
            let x = m[i][j];
            if !x.is_finite() || x < 0.0 {
                report.push(format!("{name}[{i}][{j}]"), "rates must be finite and nonnegative");
            }
            if symmetric && j > i && m[i][j] != m[j][i] {
                report.push(format!("{name}[{i}][{j}]"), format!("must equal {name}[{j}][{i}] (symmetry)"));
            }
        }
    }
}

/// Checks every configuration invariant and collects the failures.
pub fn validate_spec(spec: &EnsembleSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = spec.species.len();
    if spec.n_particles == 0 {
        report.push("n_particles", "must be at least 1");
    }
    if !(spec.box_side > 0.0) || !spec.box_side.is_finite() {
        report.push("box_side", "must be positive and finite");
    }
    if n == 0 {
        report.push("species", "at least one species is required");
    }
    for (i, s) in spec.species.iter().enumerate() {
        let at = |f: &str| format!("species[{i}].{f}");
        if s.type_id as usize != i + 1 {
            report.push(at("type_id"), format!("expected {}, species are labelled 1..J in order", i + 1));
        }
        if !(s.mass > 0.0) || !s.mass.is_finite() {
            report.push(at("mass"), "must be positive and finite");
        }
        if s.dof < 3 {
            report.push(at("dof"), "must be at least 3");
        }
        if let Some(internal) = &s.internal_masses {
            if internal.len() + 3 != s.dof as usize {
                report.push(at("internal_masses"), format!("expected dof - 3 = {} entries", s.dof.saturating_sub(3)));
            }
            if internal.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
                report.push(at("internal_masses"), "must be positive and finite");
            }
        }
        if !s.chem_energy.is_finite() || s.chem_energy < 0.0 {
            report.push(at("chem_energy"), "must be finite and nonnegative");
        }
    }

    let rates = &spec.rates;
    check_rate_matrix(&mut report, "rates.unary", &rates.unary, n, false);
    if rates.unary.len() == n {
        for (i, row) in rates.unary.iter().enumerate() {
            if row.get(i).is_some_and(|&d| d != 0.0) {
                report.push(format!("rates.unary[{i}][{i}]"), "diagonal must be zero");
            }
        }
    }
    check_rate_matrix(&mut report, "rates.fast_binary", &rates.fast_binary, n, true);
    if let Some(slow) = &rates.slow_binary {
        check_rate_matrix(&mut report, "rates.slow_binary.rate_bounds", &slow.rate_bounds, n, true);
        let mut seen: Vec<(u32, u32)> = Vec::new();
        for (t, tr) in slow.transitions.iter().enumerate() {
            let at = format!("rates.slow_binary.transitions[{t}]");
            let labels_ok = |ids: &[u32; 2]| ids.iter().all(|&id| id >= 1 && id as usize <= n);
            if !labels_ok(&tr.from) {
                report.push(format!("{at}.from"), format!("type ids must lie in 1..={n}"));
            }
            let key = (tr.from[0].min(tr.from[1]), tr.from[0].max(tr.from[1]));
            if seen.contains(&key) {
                report.push(format!("{at}.from"), "pair already has a transition entry");
            }
            seen.push(key);
            if tr.outcomes.is_empty() {
                report.push(format!("{at}.outcomes"), "at least one outcome is required");
            }
            for (o, out) in tr.outcomes.iter().enumerate() {
                if !labels_ok(&out.types) {
                    report.push(format!("{at}.outcomes[{o}].types"), format!("type ids must lie in 1..={n}"));
                }
                if !(out.weight > 0.0) || !out.weight.is_finite() {
                    report.push(format!("{at}.outcomes[{o}].weight"), "must be positive and finite");
                }
            }
        }
    }
    if !rates.heat_rate.is_finite() || rates.heat_rate < 0.0 {
        report.push("rates.heat_rate", "must be finite and nonnegative");
    }
    if !(rates.bath_beta > 0.0) || !rates.bath_beta.is_finite() {
        report.push("rates.bath_beta", "must be positive and finite");
    }
    if !(spec.scale_fast >= 1.0) || !spec.scale_fast.is_finite() {
        report.push("scale_fast", "must be finite and at least 1");
    }
    if !(spec.scale_heat >= 0.0) || !spec.scale_heat.is_finite() {
        report.push("scale_heat", "must be finite and nonnegative");
    }

    let init = &spec.initial_distribution;
    if init.type_weights.len() != n {
        report.push("initial_distribution.type_weights", format!("expected {n} weights"));
    }
    if init.type_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        report.push("initial_distribution.type_weights", "weights must be finite and nonnegative");
    } else if libm::fabs(init.type_weights.iter().sum::<f64>() - 1.0) > 1e-9 {
        report.push("initial_distribution.type_weights", "weights must sum to 1");
    }
    if init.energy_laws.len() != n {
        report.push("initial_distribution.energy_laws", format!("expected {n} laws"));
    }
    for (i, law) in init.energy_laws.iter().enumerate() {
        let at = format!("initial_distribution.energy_laws[{i}]");
        let ok = match *law {
            EnergyLaw::Uniform { low, high } => low >= 0.0 && high >= low && high.is_finite(),
            EnergyLaw::Gamma { beta } => beta > 0.0 && beta.is_finite(),
            EnergyLaw::Point { value } => value >= 0.0 && value.is_finite(),
        };
        if !ok {
            report.push(at, "law parameters out of range");
        }
    }
    report
}

fn pick_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding can leave u just above the last bucket.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws the initial ensemble: i.i.d. uniform positions on the torus, types
/// from the weight vector, kinetic energies from the per-type law and
/// isotropic directions. A pure function of `(spec, seed)`.
pub fn sample_initial_state(spec: &EnsembleSpec, seed: u64) -> Result<EnsembleState, SpecError> {
    validate_spec(spec).into_result()?;
    let mut rng = seeded_rng(seed, 0);
    let side = spec.box_side;
    let init = &spec.initial_distribution;
    let particles = (0..spec.n_particles)
        .map(|_| {
            let species = pick_weighted(&init.type_weights, &mut rng);
            let kinetic_energy = init.energy_laws[species].sample(&mut rng);
            let position = [side * rng.random::<f64>(), side * rng.random::<f64>(), side * rng.random::<f64>()];
            let direction = uniform_direction(&mut rng);
            ParticleState { species, kinetic_energy, position, direction }
        })
        .collect();
    Ok(EnsembleState::new(particles, &spec.chem_energies()))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    /// Two species, threshold unary rates, fast exchange and a bath.
    pub fn two_species() -> EnsembleSpec {
        let mut rates = RateTable::zeros(2, 1.0);
        rates.unary = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        rates.fast_binary = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        rates.heat_rate = 1.0;
        EnsembleSpec {
            n_particles: 100,
            box_side: 1.0,
            species: vec![SpeciesSpec::simple(1, 1.0, 0.0), SpeciesSpec::simple(2, 1.0, 1.0)],
            rates,
            scale_fast: 1.0,
            scale_heat: 1.0,
            rng_seed: 7,
            initial_distribution: InitialDistribution {
                type_weights: vec![0.5, 0.5],
                energy_laws: vec![EnergyLaw::Gamma { beta: 1.0 }; 2],
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::two_species;
    use super::*;
    use alloc::vec;

    #[test]
    fn well_formed_spec_has_empty_report() {
        assert!(validate_spec(&two_species()).is_valid());
    }

    #[test]
    fn asymmetric_fast_rates_are_flagged() {
        let mut spec = two_species();
        spec.rates.fast_binary = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        let report = validate_spec(&spec);
        assert!(report.mentions("rates.fast_binary"), "{report}");
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn dof_below_three_is_flagged() {
        let mut spec = two_species();
        spec.species[0].dof = 2;
        assert!(validate_spec(&spec).mentions("species[0].dof"));
    }

    #[test]
    fn internal_mass_count_must_match_dof() {
        let mut spec = two_species();
        spec.species[1].dof = 5;
        spec.species[1].internal_masses = Some(vec![1.0]);
        assert!(validate_spec(&spec).mentions("species[1].internal_masses"));
        spec.species[1].internal_masses = Some(vec![1.0, 2.0]);
        assert!(validate_spec(&spec).is_valid());
    }

    #[test]
    fn negative_mass_and_bad_weights_are_flagged() {
        let mut spec = two_species();
        spec.species[0].mass = -1.0;
        spec.initial_distribution.type_weights = vec![0.7, 0.7];
        let report = validate_spec(&spec);
        assert!(report.mentions("species[0].mass"));
        assert!(report.mentions("type_weights"));
    }

    #[test]
    fn transition_labels_are_checked() {
        let mut spec = two_species();
        spec.rates.slow_binary = Some(SlowBinaryTable {
            rate_bounds: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            kernel: BinaryKernel::Constant,
            transitions: vec![TypeTransition {
                from: [1, 3],
                outcomes: vec![TypeOutcome { types: [2, 2], weight: 1.0 }],
            }],
        });
        assert!(validate_spec(&spec).mentions("transitions[0].from"));
    }

    #[test]
    fn sampling_point_mass_and_octant_uniformity() {
        let mut spec = two_species();
        spec.n_particles = 1000;
        spec.species.truncate(1);
        spec.rates = RateTable::zeros(1, 1.0);
        spec.initial_distribution =
            InitialDistribution { type_weights: vec![1.0], energy_laws: vec![EnergyLaw::Point { value: 1.0 }] };
        let state = sample_initial_state(&spec, 11).unwrap();
        assert!(state.particles.iter().all(|p| p.kinetic_energy == 1.0));
        let mut octants = [0u32; 8];
        for p in &state.particles {
            p.check(spec.box_side).unwrap();
            let idx = p.position.iter().enumerate().map(|(k, &x)| usize::from(x >= 0.5) << k).sum::<usize>();
            octants[idx] += 1;
        }
        // binomial(1000, 1/8): sd ~ 10.5, allow 4 sd
        for c in octants {
            assert!((c as f64 - 125.0).abs() < 42.0, "{octants:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let spec = two_species();
        assert_eq!(sample_initial_state(&spec, 5).unwrap(), sample_initial_state(&spec, 5).unwrap());
        assert_ne!(sample_initial_state(&spec, 5).unwrap(), sample_initial_state(&spec, 6).unwrap());
    }

    #[test]
    fn type_weights_follow_binomial_law() {
        let mut spec = two_species();
        spec.n_particles = 10_000;
        spec.initial_distribution.type_weights = vec![0.25, 0.75];
        let state = sample_initial_state(&spec, 99).unwrap();
        let n1 = state.type_counts(2)[0] as f64;
        let sd = (10_000.0f64 * 0.25 * 0.75).sqrt();
        assert!((n1 - 2500.0).abs() <= 3.0 * sd, "n1 = {n1}");
    }

    #[test]
    fn invalid_spec_is_rejected_by_sampler() {
        let mut spec = two_species();
        spec.box_side = 0.0;
        assert!(matches!(sample_initial_state(&spec, 1), Err(SpecError::Invalid(_))));
    }
}
