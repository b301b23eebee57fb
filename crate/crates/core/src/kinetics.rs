//! Event-driven simulation of the finite-N jump process.
//!
//! All four channels are folded into one Poisson stream whose rate is the
//! sum of constant per-channel bounds:
//!
//! | channel     | proposal rate           | proposal                  | acceptance            |
//! |-------------|-------------------------|---------------------------|-----------------------|
//! | unary       | `N * u_max`             | uniform particle          | `u_j(T) / u_max`      |
//! | slow binary | `(N-1) * b_max`         | uniform unordered pair    | `b_jj' / b_max`       |
//! | fast binary | `s_f * (N-1) * f_max`   | uniform unordered pair    | `f_jj' / f_max`       |
//! | heat        | `s_beta * h * N`        | uniform particle          | 1                     |
//!
//! An unordered pair therefore reacts at rate `2 b_jj' / N` (resp.
//! `2 s_f f_jj' / N`), which is the ordered-pair rate `b_jj' / N` counted
//! twice. Because the total rate never depends on the state, proposal times
//! form a homogeneous Poisson process and thinning is exact.
//!
//! Positions are advanced lazily. Each particle remembers the time at which
//! its position was last brought up to date; jumps and observations sync only
//! what they need.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Beta, Distribution, Exp};

use crate::spec::{self, EnsembleSpec};
use crate::state::{uniform_direction, wrap_periodic, Channel, EnsembleState, EventRecord, ParticleState, Touch};
use crate::{seeded_rng, SimRng};

/// Law of the fraction `X` in the energy split `T1 = E X`, `T1' = E (1 - X)`.
pub trait SplitLaw: Send + Sync {
    fn sample(&self, rng: &mut dyn RngCore) -> f64;
}

/// `Beta(3/2, 3/2)`: the split law under which products of `Gamma(3/2, beta)`
/// kinetic energies are invariant.
#[derive(Clone, Copy, Debug)]
pub struct KacBeta {
    law: Beta<f64>,
}

impl Default for KacBeta {
    fn default() -> Self {
        Self { law: Beta::new(1.5, 1.5).expect("valid shape") }
    }
}

impl SplitLaw for KacBeta {
    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        self.law.sample(rng)
    }
}

/// Bounded unary rates `u_jj'(T)`.
///
/// A transition `j -> j'` fires at rate `rate(j, j', T)`; it then happens only
/// if `T + K_j - K_j' >= 0`. `supremum(j)` must bound `sum_j' rate(j, j', T)`
/// for every `T`, since it is the thinning envelope.
pub trait UnaryRateModel: Send + Sync {
    fn rate(&self, from: usize, to: usize, kinetic_energy: f64) -> f64;
    fn supremum(&self, from: usize) -> f64;
}

/// Constant clock rates `w_jj'`; the energy threshold supplies the `T`
/// dependence.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRates {
    pub base: Vec<Vec<f64>>,
}

impl ThresholdRates {
    pub fn from_spec(spec: &EnsembleSpec) -> Self {
        Self { base: spec.rates.unary.clone() }
    }
}

impl UnaryRateModel for ThresholdRates {
    fn rate(&self, from: usize, to: usize, _kinetic_energy: f64) -> f64 {
        self.base[from][to]
    }

    fn supremum(&self, from: usize) -> f64 {
        self.base[from].iter().sum()
    }
}

/// Receives a synced snapshot at every sample time.
pub trait Observer {
    fn observe(&mut self, state: &EnsembleState, spec: &EnsembleSpec);
}

impl<F: FnMut(&EnsembleState, &EnsembleSpec)> Observer for F {
    fn observe(&mut self, state: &EnsembleState, spec: &EnsembleSpec) {
        self(state, spec)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Observation spacing. Observers fire at `sim_time`, every multiple of
    /// the spacing after it, and at the end time.
    pub sample_every: Option<f64>,
    pub log_events: bool,
}

/// New kinetic energy after `j -> target`, or `None` if the move is uphill
/// by more than `T`.
pub fn unary_energy(kinetic_energy: f64, from: usize, target: usize, chem_energy: &[f64]) -> Option<f64> {
    let t1 = (kinetic_energy + chem_energy[from]) - chem_energy[target];
    (t1 >= 0.0).then_some(t1)
}

/// Applies an accepted unary clock ring with chosen target. Returns `None`
/// when the transition is energetically forbidden.
pub fn unary_event<R: Rng + ?Sized>(
    p: &ParticleState,
    target: usize,
    spec: &EnsembleSpec,
    rng: &mut R,
) -> Option<ParticleState> {
    let chem: Vec<f64> = spec.chem_energies();
    let t1 = unary_energy(p.kinetic_energy, p.species, target, &chem)?;
    Some(ParticleState { species: target, kinetic_energy: t1, direction: uniform_direction(rng), ..*p })
}

/// Kac exchange: `S = T + T'` is redistributed as `(S X, S - S X)`.
pub fn fast_collision(
    p: &ParticleState,
    q: &ParticleState,
    split: &dyn SplitLaw,
    rng: &mut dyn RngCore,
) -> (ParticleState, ParticleState) {
    let s = p.kinetic_energy + q.kinetic_energy;
    let t1 = s * split.sample(rng);
    let t2 = s - t1;
    (
        ParticleState { kinetic_energy: t1, direction: uniform_direction(rng), ..*p },
        ParticleState { kinetic_energy: t2, direction: uniform_direction(rng), ..*q },
    )
}

/// Collision with a bath molecule of energy `xi ~ Gamma(3/2, beta)`. The
/// particle keeps `(T + xi) X`; the rest returns to the bath.
pub fn heat_exchange(p: &ParticleState, beta: f64, split: &dyn SplitLaw, rng: &mut dyn RngCore) -> ParticleState {
    let xi = spec::maxwell_energy(beta).sample(rng);
    let t1 = (p.kinetic_energy + xi) * split.sample(rng);
    ParticleState { kinetic_energy: t1, direction: uniform_direction(rng), ..*p }
}

/// Outcome table of the slow binary channel, indexed by zero-based ordered
/// pairs.
type Outcomes = Vec<([usize; 2], f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel {
    outcomes: Vec<Vec<Outcomes>>,
}

impl TransitionKernel {
    pub fn from_spec(spec: &EnsembleSpec) -> Self {
        let n = spec.n_species();
        let mut outcomes: Vec<Vec<Outcomes>> = (0..n).map(|j| (0..n).map(|k| vec![([j, k], 1.0)]).collect()).collect();
        if let Some(slow) = &spec.rates.slow_binary {
            for tr in &slow.transitions {
                let (a, b) = (tr.from[0] as usize - 1, tr.from[1] as usize - 1);
                let fwd: Vec<_> = tr
                    .outcomes
                    .iter()
                    .map(|o| ([o.types[0] as usize - 1, o.types[1] as usize - 1], o.weight))
                    .collect();
                let rev = fwd.iter().map(|&([x, y], w)| ([y, x], w)).collect();
                outcomes[a][b] = fwd;
                if a != b {
                    outcomes[b][a] = rev;
                }
            }
        }
        Self { outcomes }
    }

    pub fn outcomes(&self, j: usize, k: usize) -> &[([usize; 2], f64)] {
        &self.outcomes[j][k]
    }

    pub fn sample<R: Rng + ?Sized>(&self, j: usize, k: usize, rng: &mut R) -> [usize; 2] {
        let list = &self.outcomes[j][k];
        let total: f64 = list.iter().map(|o| o.1).sum();
        let mut u = rng.random::<f64>() * total;
        for &(types, w) in list {
            if u < w {
                return types;
            }
            u -= w;
        }
        list[list.len() - 1].0
    }
}

/// Slow binary reaction into product types `products`. The disposable energy
/// `E = T + T' + K_j + K_j' - K_j1 - K_j1'` is split by `split`; a negative
/// `E` means nothing happens.
pub fn slow_binary_event(
    p: &ParticleState,
    q: &ParticleState,
    products: [usize; 2],
    chem_energy: &[f64],
    split: &dyn SplitLaw,
    rng: &mut dyn RngCore,
) -> Option<(ParticleState, ParticleState)> {
    let before = (p.kinetic_energy + q.kinetic_energy) + (chem_energy[p.species] + chem_energy[q.species]);
    let e = before - (chem_energy[products[0]] + chem_energy[products[1]]);
    if e < 0.0 {
        return None;
    }
    let t1 = e * split.sample(rng);
    let t2 = e - t1;
    Some((
        ParticleState { species: products[0], kinetic_energy: t1, direction: uniform_direction(rng), ..*p },
        ParticleState { species: products[1], kinetic_energy: t2, direction: uniform_direction(rng), ..*q },
    ))
}

fn advance(p: &mut ParticleState, mass: f64, dt: f64, side: f64) {
    if dt <= 0.0 || p.kinetic_energy == 0.0 {
        return;
    }
    let v = p.velocity(mass);
    for k in 0..3 {
        p.position[k] = wrap_periodic(p.position[k] + v[k] * dt, side);
    }
}

/// Moves every particle along its velocity for `dt` on the torus.
pub fn free_flight(state: &mut EnsembleState, spec: &EnsembleSpec, dt: f64) {
    for p in &mut state.particles {
        advance(p, spec.species[p.species].mass, dt, spec.box_side);
    }
    state.sim_time += dt;
}

#[derive(Clone, Copy, Debug)]
struct Envelope {
    unary_max: f64,
    slow_max: f64,
    fast_max: f64,
    /// Cumulative channel rates in `Channel::ALL` order.
    cumulative: [f64; 4],
}

impl Envelope {
    fn new(spec: &EnsembleSpec, unary: &dyn UnaryRateModel) -> Self {
        let n = spec.n_particles as f64;
        let j = spec.n_species();
        let unary_max = (0..j).map(|s| unary.supremum(s)).fold(0.0, f64::max);
        let max_entry = |m: &[Vec<f64>]| m.iter().flatten().copied().fold(0.0, f64::max);
        let slow_max = spec.rates.slow_binary.as_ref().map_or(0.0, |s| max_entry(&s.rate_bounds));
        let fast_max = max_entry(&spec.rates.fast_binary);
        let pairs = (n - 1.0).max(0.0);
        let rates = [
            n * unary_max,
            pairs * slow_max,
            spec.scale_fast * pairs * fast_max,
            n * spec.scale_heat * spec.rates.heat_rate,
        ];
        let mut cumulative = [0.0; 4];
        let mut acc = 0.0;
        for (c, r) in cumulative.iter_mut().zip(rates) {
            acc += r;
            *c = acc;
        }
        Self { unary_max, slow_max, fast_max, cumulative }
    }

    fn total(&self) -> f64 {
        self.cumulative[3]
    }

    fn pick(&self, u: f64) -> Channel {
        let x = u * self.total();
        Channel::ALL.into_iter().zip(self.cumulative).find(|&(_, c)| x < c).map_or(Channel::Heat, |(ch, _)| ch)
    }
}

/// Exact simulator of one trajectory.
pub struct Simulator {
    spec: EnsembleSpec,
    state: EnsembleState,
    rng: SimRng,
    chem: Vec<f64>,
    masses: Vec<f64>,
    unary: Box<dyn UnaryRateModel>,
    split: Box<dyn SplitLaw>,
    kernel: TransitionKernel,
    envelope: Envelope,
    stamps: Vec<f64>,
    pending: Option<f64>,
    log: Option<Vec<EventRecord>>,
}

impl Simulator {
    /// Threshold unary rates and the Beta(3/2, 3/2) split. Dynamics draw from
    /// stream 1 of `seed`.
    pub fn new(spec: EnsembleSpec, state: EnsembleState, seed: u64) -> Result<Self, spec::SpecError> {
        let unary = Box::new(ThresholdRates::from_spec(&spec));
        Self::with_models(spec, state, seed, unary, Box::new(KacBeta::default()))
    }

    pub fn with_models(
        spec: EnsembleSpec,
        state: EnsembleState,
        seed: u64,
        unary: Box<dyn UnaryRateModel>,
        split: Box<dyn SplitLaw>,
    ) -> Result<Self, spec::SpecError> {
        spec::validate_spec(&spec).into_result()?;
        assert_eq!(state.len(), spec.n_particles, "state size must match n_particles");
        let envelope = Envelope::new(&spec, unary.as_ref());
        Ok(Self {
            chem: spec.chem_energies(),
            masses: spec.masses(),
            kernel: TransitionKernel::from_spec(&spec),
            stamps: vec![state.sim_time; state.len()],
            rng: seeded_rng(seed, 1),
            unary,
            split,
            envelope,
            state,
            spec,
            pending: None,
            log: None,
        })
    }

    /// Samples the initial state from `spec.rng_seed` and simulates with the
    /// same seed.
    pub fn from_spec(spec: EnsembleSpec) -> Result<Self, spec::SpecError> {
        let state = spec::sample_initial_state(&spec, spec.rng_seed)?;
        let seed = spec.rng_seed;
        Self::new(spec, state, seed)
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    /// Total proposal rate of the jump process.
    pub fn total_rate(&self) -> f64 {
        self.envelope.total()
    }

    /// State with all positions synced to the current time.
    pub fn snapshot(&mut self) -> &EnsembleState {
        self.sync_all(self.state.sim_time);
        &self.state
    }

    pub fn into_state(mut self) -> EnsembleState {
        self.sync_all(self.state.sim_time);
        self.state
    }

    fn sync(&mut self, i: usize, t: f64) {
        let p = &mut self.state.particles[i];
        advance(p, self.masses[p.species], t - self.stamps[i], self.spec.box_side);
        self.stamps[i] = t;
    }

    fn sync_all(&mut self, t: f64) {
        for i in 0..self.state.len() {
            self.sync(i, t);
        }
    }

    fn next_event_time(&mut self) -> Option<f64> {
        let rate = self.envelope.total();
        if !(rate > 0.0) {
            return None;
        }
        if self.pending.is_none() {
            let dt: f64 = Exp::new(rate).expect("positive rate").sample(&mut self.rng);
            self.pending = Some(self.state.sim_time + dt);
        }
        self.pending
    }

    fn record(&mut self, time: f64, channel: Channel, first: Touch, second: Option<Touch>) {
        if let Some(log) = &mut self.log {
            log.push(EventRecord { time, channel, first, second });
        }
    }

    fn pick_pair(&mut self) -> (usize, usize) {
        let n = self.state.len();
        let i = self.rng.random_range(0..n);
        let mut k = self.rng.random_range(0..n - 1);
        if k >= i {
            k += 1;
        }
        (i, k)
    }

    fn replace(&mut self, i: usize, new: ParticleState) -> Touch {
        let old = self.state.particles[i];
        let ledger = &mut self.state.energy_ledger;
        ledger.total_kinetic.add(new.kinetic_energy - old.kinetic_energy);
        if new.species != old.species {
            ledger.total_chemical.add(self.chem[new.species] - self.chem[old.species]);
        }
        self.state.particles[i] = new;
        Touch { index: i, before: (old.species, old.kinetic_energy), after: (new.species, new.kinetic_energy) }
    }

    /// Fires one proposal at time `t`.
    fn fire(&mut self, t: f64) {
        let channel = self.envelope.pick(self.rng.random::<f64>());
        self.state.event_count.get_mut(channel).proposed += 1;
        match channel {
            Channel::Unary => self.fire_unary(t),
            Channel::SlowBinary => self.fire_slow(t),
            Channel::FastBinary => self.fire_fast(t),
            Channel::Heat => self.fire_heat(t),
        }
    }

    fn fire_unary(&mut self, t: f64) {
        let i = self.rng.random_range(0..self.state.len());
        let p = self.state.particles[i];
        let j = p.species;
        let n_species = self.chem.len();
        let rates: Vec<f64> = (0..n_species).map(|k| self.unary.rate(j, k, p.kinetic_energy)).collect();
        let total: f64 = rates.iter().sum();
        if self.rng.random::<f64>() * self.envelope.unary_max >= total {
            return;
        }
        let mut u = self.rng.random::<f64>() * total;
        let mut target = rates.iter().rposition(|&r| r > 0.0).unwrap_or(j);
        for (k, &r) in rates.iter().enumerate() {
            if u < r {
                target = k;
                break;
            }
            u -= r;
        }
        let Some(t1) = unary_energy(p.kinetic_energy, j, target, &self.chem) else {
            self.state.event_count.unary.forbidden += 1;
            return;
        };
        self.sync(i, t);
        let new = ParticleState {
            species: target,
            kinetic_energy: t1,
            direction: uniform_direction(&mut self.rng),
            ..self.state.particles[i]
        };
        let touch = self.replace(i, new);
        self.state.event_count.unary.accepted += 1;
        self.record(t, Channel::Unary, touch, None);
    }

    fn fire_slow(&mut self, t: f64) {
        let (a, b) = self.pick_pair();
        let (p, q) = (self.state.particles[a], self.state.particles[b]);
        let bound = self.spec.rates.slow_binary.as_ref().map_or(0.0, |s| s.rate_bounds[p.species][q.species]);
        if self.rng.random::<f64>() * self.envelope.slow_max >= bound {
            return;
        }
        let products = self.kernel.sample(p.species, q.species, &mut self.rng);
        self.sync(a, t);
        self.sync(b, t);
        let (p, q) = (self.state.particles[a], self.state.particles[b]);
        let Some((p1, q1)) = slow_binary_event(&p, &q, products, &self.chem, self.split.as_ref(), &mut self.rng) else {
            self.state.event_count.slow_binary.forbidden += 1;
            return;
        };
        let ta = self.replace(a, p1);
        let tb = self.replace(b, q1);
        self.state.event_count.slow_binary.accepted += 1;
        self.record(t, Channel::SlowBinary, ta, Some(tb));
    }

    fn fire_fast(&mut self, t: f64) {
        let (a, b) = self.pick_pair();
        let f = self.spec.rates.fast_binary[self.state.particles[a].species][self.state.particles[b].species];
        if self.rng.random::<f64>() * self.envelope.fast_max >= f {
            return;
        }
        self.sync(a, t);
        self.sync(b, t);
        let (p, q) = (self.state.particles[a], self.state.particles[b]);
        let (p1, q1) = fast_collision(&p, &q, self.split.as_ref(), &mut self.rng);
        let ta = self.replace(a, p1);
        let tb = self.replace(b, q1);
        self.state.event_count.fast_binary.accepted += 1;
        self.record(t, Channel::FastBinary, ta, Some(tb));
    }

    fn fire_heat(&mut self, t: f64) {
        let i = self.rng.random_range(0..self.state.len());
        self.sync(i, t);
        let p = self.state.particles[i];
        let p1 = heat_exchange(&p, self.spec.rates.bath_beta, self.split.as_ref(), &mut self.rng);
        self.state.energy_ledger.bath_exchange.add(p1.kinetic_energy - p.kinetic_energy);
        let touch = self.replace(i, p1);
        self.state.event_count.heat.accepted += 1;
        self.record(t, Channel::Heat, touch, None);
    }

    /// Fires the next proposal, returning its time, or `None` if every rate
    /// is zero.
    pub fn step(&mut self) -> Option<f64> {
        let t = self.next_event_time()?;
        self.pending = None;
        self.state.sim_time = t;
        self.fire(t);
        Some(t)
    }

    /// Fires `n` proposals. Returns the number actually fired, which is less
    /// than `n` only when all rates vanish.
    pub fn run_events(&mut self, n: u64) -> u64 {
        for k in 0..n {
            if self.step().is_none() {
                return k;
            }
        }
        n
    }

    /// Simulates up to `t_end`, calling every observer at the sample times,
    /// and returns the accepted events when `log_events` is set.
    pub fn run(&mut self, t_end: f64, options: &RunOptions, observers: &mut [&mut dyn Observer]) -> Vec<EventRecord> {
        assert!(t_end >= self.state.sim_time, "t_end must not precede the current time");
        if options.log_events {
            self.log = Some(Vec::new());
        }
        let start = self.state.sim_time;
        let mut sample_index = 0u64;
        let next_sample = |k: u64| options.sample_every.map(|dt| start + dt * k as f64);
        let mut observe_at = |sim: &mut Self, t: f64| {
            sim.sync_all(t);
            let saved = sim.state.sim_time;
            sim.state.sim_time = t;
            for o in observers.iter_mut() {
                o.observe(&sim.state, &sim.spec);
            }
            sim.state.sim_time = saved;
        };
        loop {
            let event = self.next_event_time().filter(|&t| t <= t_end);
            let horizon = event.unwrap_or(t_end);
            while let Some(ts) = next_sample(sample_index) {
                if ts > horizon || (event.is_none() && ts >= t_end) {
                    break;
                }
                observe_at(self, ts);
                sample_index += 1;
            }
            match event {
                Some(t) => {
                    self.pending = None;
                    self.state.sim_time = t;
                    self.fire(t);
                }
                None => break,
            }
        }
        self.state.sim_time = t_end;
        if options.sample_every.is_some() {
            observe_at(self, t_end);
        } else {
            self.sync_all(t_end);
        }
        self.log.take().unwrap_or_default()
    }
}

/// Runs a fresh simulator from `state` to `t_end` with dynamics seeded by
/// `spec.rng_seed`.
pub fn run(
    state: EnsembleState,
    spec: &EnsembleSpec,
    t_end: f64,
    options: &RunOptions,
    observers: &mut [&mut dyn Observer],
) -> Result<(EnsembleState, Vec<EventRecord>), spec::SpecError> {
    let mut sim = Simulator::new(spec.clone(), state, spec.rng_seed)?;
    let log = sim.run(t_end, options, observers);
    Ok((sim.into_state(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::fixtures::two_species;
    use crate::spec::{EnergyLaw, RateTable, SlowBinaryTable, TypeOutcome, TypeTransition};

    fn particle(species: usize, t: f64) -> ParticleState {
        ParticleState { species, kinetic_energy: t, position: [0.25, 0.5, 0.75], direction: [1.0, 0.0, 0.0] }
    }

    fn chem_spec(k: [f64; 2]) -> EnsembleSpec {
        let mut spec = two_species();
        spec.species[0].chem_energy = k[0];
        spec.species[1].chem_energy = k[1];
        spec
    }

    #[test]
    fn unary_uphill_and_downhill() {
        let spec = chem_spec([1.0, 2.0]);
        let mut rng = seeded_rng(1, 0);
        let up = unary_event(&particle(0, 2.0), 1, &spec, &mut rng).unwrap();
        assert_eq!((up.species, up.kinetic_energy), (1, 1.0));
        assert!(unary_event(&particle(0, 0.5), 1, &spec, &mut rng).is_none());
        let down = unary_event(&particle(1, 0.0), 0, &spec, &mut rng).unwrap();
        assert_eq!((down.species, down.kinetic_energy), (0, 1.0));
    }

    #[test]
    fn fast_collision_conserves_pair_energy() {
        let mut rng = seeded_rng(2, 0);
        let split = KacBeta::default();
        let (a, b) = fast_collision(&particle(0, 1.0), &particle(1, 0.0), &split, &mut rng);
        assert_eq!(a.kinetic_energy + b.kinetic_energy, 1.0);
        assert_eq!((a.species, b.species), (0, 1));
    }

    #[test]
    fn kac_split_moments() {
        let mut rng = seeded_rng(3, 0);
        let split = KacBeta::default();
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| split.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        // mean 1/2 with sd 1/(4 sqrt n); variance 1/16
        assert!((mean - 0.5).abs() < 4.0 * 0.25 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0 / 16.0).abs() < 1e-3, "var {var}");
    }

    #[test]
    fn slow_binary_identity_kernel_is_a_fast_collision() {
        let chem = [0.5, 3.0];
        let split = KacBeta::default();
        let (p, q) = (particle(0, 1.0), particle(1, 2.0));
        let (a, b) = slow_binary_event(&p, &q, [0, 1], &chem, &split, &mut seeded_rng(9, 0)).unwrap();
        let (fa, fb) = fast_collision(&p, &q, &split, &mut seeded_rng(9, 0));
        assert!((a.kinetic_energy - fa.kinetic_energy).abs() < 1e-15);
        assert!((b.kinetic_energy - fb.kinetic_energy).abs() < 1e-15);
    }

    #[test]
    fn slow_binary_forbidden_and_conserving() {
        let chem = [0.0, 5.0];
        let split = KacBeta::default();
        let mut rng = seeded_rng(4, 0);
        assert!(slow_binary_event(&particle(0, 1.0), &particle(0, 1.0), [1, 1], &chem, &split, &mut rng).is_none());
        let (a, b) = slow_binary_event(&particle(1, 1.0), &particle(1, 2.0), [0, 0], &chem, &split, &mut rng).unwrap();
        assert!(((a.kinetic_energy + b.kinetic_energy) - 13.0).abs() < 1e-14);
    }

    #[test]
    fn free_flight_modular_shift() {
        let mut spec = two_species();
        spec.n_particles = 1;
        spec.species[0].mass = 1.0;
        // speed 1 along x
        let mut state = EnsembleState::new(vec![particle(0, 0.5)], &[0.0, 1.0]);
        free_flight(&mut state, &spec, 2.5);
        assert!((state.particles[0].position[0] - 0.75).abs() < 1e-15);
        let mut frozen = EnsembleState::new(vec![particle(0, 0.0)], &[0.0, 1.0]);
        free_flight(&mut frozen, &spec, 7.0);
        assert_eq!(frozen.particles[0].position, [0.25, 0.5, 0.75]);
        free_flight(&mut state, &spec, 0.0);
        assert!((state.particles[0].position[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_rates_give_pure_free_flight() {
        let mut spec = two_species();
        spec.rates = RateTable::zeros(2, 1.0);
        spec.n_particles = 20;
        let initial = spec::sample_initial_state(&spec, 3).unwrap();
        let (end, log) = run(initial.clone(), &spec, 5.0, &RunOptions::default(), &mut []).unwrap();
        let mut expected = initial.clone();
        free_flight(&mut expected, &spec, 5.0);
        assert!(log.is_empty());
        assert_eq!(end.sim_time, 5.0);
        for (a, b) in end.particles.iter().zip(&expected.particles) {
            assert_eq!(a.kinetic_energy, b.kinetic_energy);
            for k in 0..3 {
                assert!((a.position[k] - b.position[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn untouched_particles_fly_straight() {
        let mut spec = two_species();
        spec.n_particles = 50;
        spec.rates.heat_rate = 0.05;
        spec.rates.unary = spec::zero_matrix(2);
        spec.rates.fast_binary = spec::zero_matrix(2);
        let initial = spec::sample_initial_state(&spec, spec.rng_seed).unwrap();
        let (end, log) =
            run(initial.clone(), &spec, 3.0, &RunOptions { sample_every: Some(0.5), log_events: true }, &mut [])
                .unwrap();
        let touched: Vec<usize> = log.iter().map(|r| r.first.index).collect();
        let mut eager = initial.clone();
        free_flight(&mut eager, &spec, 3.0);
        let mut checked = 0;
        for i in 0..spec.n_particles {
            if !touched.contains(&i) {
                checked += 1;
                for k in 0..3 {
                    assert!((end.particles[i].position[k] - eager.particles[i].position[k]).abs() < 1e-12);
                }
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn same_seed_same_log() {
        let spec = two_species();
        let opts = RunOptions { sample_every: None, log_events: true };
        let a = Simulator::from_spec(spec.clone()).unwrap().run(3.0, &opts, &mut []);
        let b = Simulator::from_spec(spec).unwrap().run(3.0, &opts, &mut []);
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn split_runs_match_single_run() {
        let spec = two_species();
        let opts = RunOptions { sample_every: None, log_events: true };
        let whole = Simulator::from_spec(spec.clone()).unwrap().run(4.0, &opts, &mut []);
        let mut sim = Simulator::from_spec(spec).unwrap();
        let mut parts = sim.run(1.5, &opts, &mut []);
        parts.extend(sim.run(4.0, &opts, &mut []));
        assert_eq!(whole, parts);
    }

    #[test]
    fn observers_fire_on_schedule() {
        let spec = two_species();
        let mut times = Vec::new();
        let mut obs = |s: &EnsembleState, _: &EnsembleSpec| times.push(s.sim_time);
        let mut sim = Simulator::from_spec(spec).unwrap();
        sim.run(1.0, &RunOptions { sample_every: Some(0.25), log_events: false }, &mut [&mut obs]);
        assert_eq!(times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn heat_only_conserves_types_and_closes_ledger() {
        let mut spec = two_species();
        spec.rates.unary = spec::zero_matrix(2);
        spec.rates.fast_binary = spec::zero_matrix(2);
        let mut sim = Simulator::from_spec(spec.clone()).unwrap();
        let before = sim.snapshot().clone();
        sim.run_events(10_000);
        let after = sim.into_state();
        assert_eq!(before.type_counts(2), after.type_counts(2));
        let (k0, c0) = before.recompute_totals(&spec.chem_energies());
        let (k1, c1) = after.recompute_totals(&spec.chem_energies());
        let q = after.energy_ledger.bath_exchange.value();
        assert!(((k1 + c1) - (k0 + c0) - q).abs() < 1e-10);
    }

    #[test]
    fn slow_binary_channel_follows_kernel() {
        let mut spec = two_species();
        spec.rates = RateTable::zeros(2, 1.0);
        spec.species[1].chem_energy = 0.0;
        spec.rates.slow_binary = Some(SlowBinaryTable {
            rate_bounds: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            kernel: Default::default(),
            transitions: vec![TypeTransition {
                from: [1, 1],
                outcomes: vec![TypeOutcome { types: [2, 2], weight: 1.0 }],
            }],
        });
        spec.initial_distribution.type_weights = vec![1.0, 0.0];
        spec.initial_distribution.energy_laws = vec![EnergyLaw::Point { value: 1.0 }; 2];
        let mut sim = Simulator::from_spec(spec.clone()).unwrap();
        sim.run(50.0, &RunOptions::default(), &mut []);
        let state = sim.into_state();
        // 1 + 1 -> 2 + 2 only: counts of type 1 stay even
        assert_eq!(state.type_counts(2)[0] % 2, 0);
        assert!(state.event_count.slow_binary.accepted > 0);
        let total: f64 = state.particles.iter().map(|p| p.kinetic_energy).sum();
        assert!((total - 100.0).abs() < 1e-10);
    }

    #[test]
    fn constant_rate_thinning_matches_nominal() {
        // fast channel with f_12 = 1 and f_11 = f_22 = 0.5: accepted rate per
        // unit time is sum over unordered pairs of 2 f / N
        let mut spec = two_species();
        spec.rates = RateTable::zeros(2, 1.0);
        spec.rates.fast_binary = vec![vec![0.5, 1.0], vec![1.0, 0.5]];
        spec.n_particles = 200;
        let mut sim = Simulator::from_spec(spec.clone()).unwrap();
        let counts = sim.snapshot().type_counts(2);
        let (a, b) = (counts[0] as f64, counts[1] as f64);
        let n = spec.n_particles as f64;
        let rate = 2.0 / n * (0.5 * a * (a - 1.0) / 2.0 + 0.5 * b * (b - 1.0) / 2.0 + a * b);
        let t = 100.0;
        sim.run(t, &RunOptions::default(), &mut []);
        let accepted = sim.into_state().event_count.fast_binary.accepted as f64;
        let expected = rate * t;
        assert!((accepted - expected).abs() < 3.0 * expected.sqrt(), "{accepted} vs {expected}");
    }
}
