//! Particle and ensemble state shared by the simulator, the observers and
//! the event log.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::math::{accurate_sum, CompensatedSum};

/// One molecule: its species index, kinetic energy, position on the torus and
/// direction of flight.
///
/// The speed is never stored. It follows from the kinetic energy and the
/// species mass as `sqrt(2 T / m)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParticleState {
    /// Zero-based index into the species list.
    pub species: usize,
    pub kinetic_energy: f64,
    pub position: [f64; 3],
    pub direction: [f64; 3],
}

impl ParticleState {
    pub fn speed(&self, mass: f64) -> f64 {
        libm::sqrt(2.0 * self.kinetic_energy / mass)
    }

    pub fn velocity(&self, mass: f64) -> [f64; 3] {
        let s = self.speed(mass);
        [s * self.direction[0], s * self.direction[1], s * self.direction[2]]
    }

    /// Checks the per-particle invariants against a box of side `box_side`.
    pub fn check(&self, box_side: f64) -> Result<(), &'static str> {
        if !(self.kinetic_energy >= 0.0) || !self.kinetic_energy.is_finite() {
            return Err("kinetic energy must be finite and nonnegative");
        }
        let norm = libm::sqrt(self.direction.iter().map(|d| d * d).sum::<f64>());
        if libm::fabs(norm - 1.0) > 1e-12 {
            return Err("direction is not a unit vector");
        }
        if self.position.iter().any(|&x| !(0.0..box_side).contains(&x)) {
            return Err("position outside the periodic box");
        }
        Ok(())
    }
}

/// Draws a direction uniformly on the unit sphere.
pub fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let r = libm::sqrt((1.0 - z * z).max(0.0));
    let d = [r * libm::cos(phi), r * libm::sin(phi), z];
    let norm = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    [d[0] / norm, d[1] / norm, d[2] / norm]
}

/// Reduces `x` into `[0, side)`.
pub fn wrap_periodic(x: f64, side: f64) -> f64 {
    let mut r = libm::fmod(x, side);
    if r < 0.0 {
        r += side;
    }
    if r >= side {
        r = 0.0;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Channel {
    Unary,
    SlowBinary,
    FastBinary,
    Heat,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Unary, Channel::SlowBinary, Channel::FastBinary, Channel::Heat];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Unary => "unary",
            Channel::SlowBinary => "slow_binary",
            Channel::FastBinary => "fast_binary",
            Channel::Heat => "heat",
        }
    }
}

/// Counters for one channel. `proposed - accepted - forbidden` proposals were
/// rejected by thinning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelCounts {
    pub proposed: u64,
    pub accepted: u64,
    /// Accepted by the clock but energetically impossible, so nothing happened.
    pub forbidden: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventCounts {
    pub unary: ChannelCounts,
    pub slow_binary: ChannelCounts,
    pub fast_binary: ChannelCounts,
    pub heat: ChannelCounts,
}

impl EventCounts {
    pub fn get(&self, channel: Channel) -> &ChannelCounts {
        match channel {
            Channel::Unary => &self.unary,
            Channel::SlowBinary => &self.slow_binary,
            Channel::FastBinary => &self.fast_binary,
            Channel::Heat => &self.heat,
        }
    }

    pub fn get_mut(&mut self, channel: Channel) -> &mut ChannelCounts {
        match channel {
            Channel::Unary => &mut self.unary,
            Channel::SlowBinary => &mut self.slow_binary,
            Channel::FastBinary => &mut self.fast_binary,
            Channel::Heat => &mut self.heat,
        }
    }

    /// Events that changed the state.
    pub fn accepted(&self) -> u64 {
        Channel::ALL.iter().map(|&c| self.get(c).accepted).sum()
    }
}

/// Running energy balance, kept in compensated precision.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnergyLedger {
    pub total_kinetic: CompensatedSum,
    pub total_chemical: CompensatedSum,
    /// Energy received from the bath (negative when heat leaves the system).
    pub bath_exchange: CompensatedSum,
}

impl EnergyLedger {
    pub fn total_energy(&self) -> f64 {
        self.total_kinetic.value() + self.total_chemical.value()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnsembleState {
    pub particles: Vec<ParticleState>,
    pub sim_time: f64,
    pub event_count: EventCounts,
    pub energy_ledger: EnergyLedger,
}

impl EnsembleState {
    /// Builds a state at time zero and initializes the ledger from the
    /// particles. `chem_energy[j]` is `K_j`.
    pub fn new(particles: Vec<ParticleState>, chem_energy: &[f64]) -> Self {
        let (kinetic, chemical) = energy_totals(&particles, chem_energy);
        Self {
            particles,
            sim_time: 0.0,
            event_count: EventCounts::default(),
            energy_ledger: EnergyLedger {
                total_kinetic: CompensatedSum::new(kinetic),
                total_chemical: CompensatedSum::new(chemical),
                bath_exchange: CompensatedSum::default(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Number of particles of each of `n_species` types.
    pub fn type_counts(&self, n_species: usize) -> Vec<u64> {
        let mut counts = vec![0u64; n_species];
        for p in &self.particles {
            counts[p.species] += 1;
        }
        counts
    }

    pub fn mean_kinetic(&self) -> f64 {
        if self.particles.is_empty() {
            return 0.0;
        }
        accurate_sum(self.particles.iter().map(|p| p.kinetic_energy)) / self.particles.len() as f64
    }

    /// `(sum T_i, sum K_{j_i})` recomputed from the particles.
    pub fn recompute_totals(&self, chem_energy: &[f64]) -> (f64, f64) {
        energy_totals(&self.particles, chem_energy)
    }
}

fn energy_totals(particles: &[ParticleState], chem_energy: &[f64]) -> (f64, f64) {
    let kinetic = accurate_sum(particles.iter().map(|p| p.kinetic_energy));
    let chemical = accurate_sum(particles.iter().map(|p| chem_energy[p.species]));
    (kinetic, chemical)
}

/// A particle's `(species, T)` before and after an event.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Touch {
    pub index: usize,
    pub before: (usize, f64),
    pub after: (usize, f64),
}

/// One accepted event of the jump process.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventRecord {
    pub time: f64,
    pub channel: Channel,
    pub first: Touch,
    pub second: Option<Touch>,
}

impl EventRecord {
    /// The unordered particle pair of a binary event.
    pub fn pair(&self) -> Option<(usize, usize)> {
        self.second.map(|s| (self.first.index, s.index))
    }

    /// Net energy change of the participants, `sum (T + K)` after minus before.
    pub fn energy_balance(&self, chem_energy: &[f64]) -> f64 {
        let touch = |t: &Touch| (t.after.1 + chem_energy[t.after.0]) - (t.before.1 + chem_energy[t.before.0]);
        touch(&self.first) + self.second.as_ref().map_or(0.0, touch)
    }
}
