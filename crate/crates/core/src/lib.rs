//! Simulation core for a kinetic model of chemical thermodynamics.
//!
//! Molecules carry a type `j`, a kinetic energy `T` and a fixed chemical
//! energy `K_j`. Four reaction channels act on them: slow unary type changes,
//! slow binary reactions, fast binary Kac-type energy exchange, and heat
//! exchange with an infinite bath at inverse temperature `beta`. In between
//! jumps the molecules fly freely on a periodic box.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. It provides:
//!
//! * [`spec`]: the shared model configuration, its validation and the
//!   sampling of initial ensembles,
//! * [`kinetics`]: an exact event-driven simulator of the finite-N process,
//! * [`meanfield`]: the one-particle Boltzmann-type equation on an energy grid
//!   and its fast-scale reductions to a chain on the types,
//! * [`thermo`]: ideal-mixture thermodynamic functions on the Gibbs manifold,
//! * [`oracle`]: a cluster-expansion series for an abstract pair-interaction
//!   model, together with exact small-system oracles,
//! * [`stats`]: distributional test statistics used by the scenarios.
//!
//! Units follow `k_B = 1`: energies and `1/beta` share one unit.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod kinetics;
pub mod linalg;
pub mod math;
pub mod meanfield;
pub mod oracle;
pub mod spec;
pub mod state;
pub mod stats;
pub mod thermo;

pub use kinetics::{RunOptions, Simulator};
pub use spec::{EnsembleSpec, RateTable, SpeciesSpec, ValidationReport};
pub use state::{Channel, EnsembleState, EventRecord, ParticleState};

/// Random number generator used by every stochastic routine.
///
/// ChaCha8 gives bit-identical streams on every platform, which is what the
/// reproducibility contract (same spec and seed, same trajectory) rests on.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Seeds a [`SimRng`] on a given stream.
pub fn seeded_rng(seed: u64, stream: u64) -> SimRng {
    use rand::SeedableRng;
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
