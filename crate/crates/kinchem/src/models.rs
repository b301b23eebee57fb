//! Ready-made ensembles used by the scenarios.

use kinchem_core::meanfield::survival_gbeta;
use kinchem_core::spec::{EnergyLaw, EnsembleSpec, InitialDistribution, RateTable, SpeciesSpec};
use kinchem_core::thermo::mass_for_equilibrium_constant;

/// Two types with chemical energies `0` and `gap` and threshold unary rates
/// `w12` (uphill, needs `T >= gap`) and `w21`.
///
/// The mass of type 2 is chosen so that the thermodynamic equilibrium
/// constant equals the stationary ratio `w21 / (g_beta(gap) w12)` of the
/// reduced chain, which makes the rates and the thermodynamics consistent.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLevel {
    pub n: usize,
    pub beta: f64,
    pub gap: f64,
    pub w12: f64,
    pub w21: f64,
    pub fast: f64,
    /// Bath rate `h`; the heat channel runs at `scale_heat * h`.
    pub heat: f64,
    pub scale_heat: f64,
    pub initial_weights: [f64; 2],
    pub seed: u64,
}

impl Default for TwoLevel {
    fn default() -> Self {
        Self {
            n: 10_000,
            beta: 1.0,
            gap: 1.0,
            w12: 1.0,
            w21: 1.0,
            fast: 1.0,
            heat: 1.0,
            scale_heat: 1.0,
            initial_weights: [1.0, 0.0],
            seed: 1,
        }
    }
}

impl TwoLevel {
    /// Stationary `c1 / c2` of the reduced chain.
    pub fn stationary_ratio(&self) -> f64 {
        let g = survival_gbeta(self.gap, self.beta).expect("gap is nonnegative");
        self.w21 / (g * self.w12)
    }

    pub fn spec(&self) -> EnsembleSpec {
        let first = SpeciesSpec::simple(1, 1.0, 0.0);
        let mut second = SpeciesSpec::simple(2, 1.0, self.gap);
        second.mass = mass_for_equilibrium_constant(&first, &second, self.beta, self.stationary_ratio())
            .expect("positive beta and ratio");
        let mut rates = RateTable::zeros(2, self.beta);
        rates.unary = vec![vec![0.0, self.w12], vec![self.w21, 0.0]];
        rates.fast_binary = vec![vec![self.fast; 2]; 2];
        rates.heat_rate = self.heat;
        EnsembleSpec {
            n_particles: self.n,
            box_side: (self.n as f64).cbrt(),
            species: vec![first, second],
            rates,
            scale_fast: 1.0,
            scale_heat: self.scale_heat,
            rng_seed: self.seed,
            initial_distribution: InitialDistribution {
                type_weights: self.initial_weights.to_vec(),
                energy_laws: vec![EnergyLaw::Gamma { beta: self.beta }; 2],
            },
        }
    }
}

/// Single-species gas with only the fast channel, at unit density.
pub fn fast_gas(n: usize, law: EnergyLaw, seed: u64) -> EnsembleSpec {
    let mut rates = RateTable::zeros(1, 1.0);
    rates.fast_binary = vec![vec![1.0]];
    EnsembleSpec {
        n_particles: n,
        box_side: (n as f64).cbrt(),
        species: vec![SpeciesSpec::simple(1, 1.0, 0.0)],
        rates,
        scale_fast: 1.0,
        scale_heat: 0.0,
        rng_seed: seed,
        initial_distribution: InitialDistribution { type_weights: vec![1.0], energy_laws: vec![law] },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kinchem_core::thermo::equilibrium_constant;

    #[test]
    fn two_level_is_valid_and_consistent() {
        let model = TwoLevel::default();
        let spec = model.spec();
        assert!(spec.validate().is_valid());
        let kappa = equilibrium_constant(&spec.species, model.beta).unwrap();
        assert!((kappa - model.stationary_ratio()).abs() < 1e-12 * kappa);
        assert!(fast_gas(10, EnergyLaw::Point { value: 1.0 }, 3).validate().is_valid());
    }
}
