//! One-particle kinetic equation on an energy grid, and its fast-scale
//! reductions.
//!
//! The density `p_t(j, T)` lives on a uniform grid `T_k = k h`, `k = 0..=M`.
//! Node `k` stands for the cell `[T_k - h/2, T_k + h/2]` (clipped at 0), and
//! all operators act on node masses `m_jk = w_k p_jk` with trapezoid weights
//! `w_k`, so total mass is a plain sum.
//!
//! Collisions are redistributed exactly on the grid. A pair with total energy
//! index `n = a + b` splits by `Beta(3/2, 3/2)` cell probabilities
//!
//! ```text
//! pi_n(i) = F((i + 1/2) / n) - F((i - 1/2) / n),   i = 0..=n,
//! ```
//!
//! which are symmetric in `i <-> n - i`, so every collision conserves mass
//! and mean energy on the grid. For `n > M` only the window `n - M ..= M`
//! (both partners on the grid) is kept and renormalized, which keeps the
//! symmetry.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::DenseMatrix;
use crate::math::{beta_three_halves_cdf, gamma_cdf, gamma_q};
use crate::spec::{EnergyLaw, EnsembleSpec, SpecError};
use crate::thermo::{self, ThermoError, ThermoPoint};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeanFieldError {
    #[error("dt * max outflow rate = {0} exceeds 0.5")]
    Cfl(f64),
    #[error("density field does not match the grid or the species count")]
    Shape,
    #[error("operation needs exactly two species, got {0}")]
    NotTwoSpecies(usize),
    #[error("radius must be nonnegative, got {0}")]
    NegativeRadius(f64),
    #[error("rates must be positive")]
    Rates,
    #[error("time arguments must be positive and finite")]
    Time,
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
}

/// Uniform grid `0 = T_0 < ... < T_M = T_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyGrid {
    m: usize,
    t_max: f64,
}

impl EnergyGrid {
    pub fn new(m: usize, t_max: f64) -> Self {
        assert!(m >= 2 && t_max > 0.0, "grid needs at least 2 intervals and positive extent");
        Self { m, t_max }
    }

    /// `T_max = span(K) + 30 / beta_min + largest initial energy`, where
    /// `beta_min` is the lowest inverse temperature among the bath and the
    /// initial laws.
    pub fn for_spec(spec: &EnsembleSpec, m: usize) -> Self {
        let k = spec.chem_energies();
        let span =
            k.iter().copied().fold(f64::NEG_INFINITY, f64::max) - k.iter().copied().fold(f64::INFINITY, f64::min);
        let mut beta_min = spec.rates.bath_beta;
        let mut e_max: f64 = 0.0;
        for law in &spec.initial_distribution.energy_laws {
            match *law {
                EnergyLaw::Gamma { beta } => beta_min = beta_min.min(beta),
                EnergyLaw::Uniform { high, .. } => e_max = e_max.max(high),
                EnergyLaw::Point { value } => e_max = e_max.max(value),
            }
        }
        Self::new(m, span + 30.0 / beta_min + e_max)
    }

    /// Number of intervals `M`.
    pub fn intervals(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn step(&self) -> f64 {
        self.t_max / self.m as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.step()
    }

    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.m {
            0.5 * self.step()
        } else {
            self.step()
        }
    }

    /// Dual cell of node `k`. The last cell is open to infinity for laws
    /// that need their tail accounted for.
    pub fn cell(&self, k: usize) -> (f64, f64) {
        let h = self.step();
        ((k as f64 - 0.5).max(0.0) * h, (k as f64 + 0.5) * h)
    }

    /// Cell masses of `Gamma(3/2, beta)`; the last node takes the tail.
    pub fn maxwell_masses(&self, beta: f64) -> Vec<f64> {
        self.law_masses(|x| gamma_cdf(1.5, beta, x))
    }

    fn law_masses(&self, cdf: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut prev = 0.0;
        for k in 0..self.m {
            let f = cdf(self.cell(k).1);
            out.push(f - prev);
            prev = f;
        }
        out.push(1.0 - prev);
        out
    }

    /// Node masses of an energy law, with linear splitting of point masses
    /// so that the mean is kept.
    pub fn law(&self, law: &EnergyLaw) -> Vec<f64> {
        match *law {
            EnergyLaw::Gamma { beta } => self.maxwell_masses(beta),
            EnergyLaw::Point { value } => self.point_masses(value),
            EnergyLaw::Uniform { low, high } if high > low => {
                self.law_masses(|x| ((x - low) / (high - low)).clamp(0.0, 1.0))
            }
            EnergyLaw::Uniform { low, .. } => self.point_masses(low),
        }
    }

    fn point_masses(&self, value: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        deposit(&mut out, value / self.step(), 1.0);
        out
    }
}

/// Adds `mass` at continuous node coordinate `x` by linear interpolation,
/// clamped to the grid.
fn deposit(target: &mut [f64], x: f64, mass: f64) {
    let last = target.len() - 1;
    if x <= 0.0 {
        target[0] += mass;
    } else if x >= last as f64 {
        target[last] += mass;
    } else {
        let lo = x as usize;
        let frac = x - lo as f64;
        target[lo] += mass * (1.0 - frac);
        target[lo + 1] += mass * frac;
    }
}

/// Discretized one-particle density `p_t(j, T_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub grid: EnergyGrid,
    pub time: f64,
    /// `values[j][k]`, a density in `T`.
    pub values: Vec<Vec<f64>>,
}

impl DensityField {
    pub fn from_masses(grid: EnergyGrid, time: f64, masses: &[Vec<f64>]) -> Self {
        let values =
            masses.iter().map(|row| row.iter().enumerate().map(|(k, m)| m / grid.weight(k)).collect()).collect();
        Self { grid, time, values }
    }

    /// Initial density of a spec: type weights times the per-type laws.
    pub fn from_spec(spec: &EnsembleSpec, grid: EnergyGrid) -> Self {
        let init = &spec.initial_distribution;
        let masses: Vec<Vec<f64>> = init
            .energy_laws
            .iter()
            .zip(&init.type_weights)
            .map(|(law, &w)| grid.law(law).into_iter().map(|m| w * m).collect())
            .collect();
        Self::from_masses(grid, 0.0, &masses)
    }

    /// Product of type weights and `Gamma(3/2, beta)` in `T`.
    pub fn maxwell(grid: EnergyGrid, beta: f64, type_weights: &[f64]) -> Self {
        let shape = grid.maxwell_masses(beta);
        let masses: Vec<Vec<f64>> = type_weights.iter().map(|w| shape.iter().map(|m| w * m).collect()).collect();
        Self::from_masses(grid, 0.0, &masses)
    }

    pub fn n_species(&self) -> usize {
        self.values.len()
    }

    pub fn masses(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|row| row.iter().enumerate().map(|(k, p)| p * self.grid.weight(k)).collect()).collect()
    }

    /// `int p_t(j, T) dT` per type (trapezoid).
    pub fn type_masses(&self) -> Vec<f64> {
        self.masses().iter().map(|row| row.iter().sum()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.type_masses().iter().sum()
    }

    /// `c_j = c * int p_t(j, T) dT`.
    pub fn concentrations(&self, c: f64) -> Vec<f64> {
        self.type_masses().into_iter().map(|m| c * m).collect()
    }

    pub fn mean_kinetic(&self) -> f64 {
        let masses = self.masses();
        mean_kinetic_of(&self.grid, &masses)
    }

    /// Mean chemical energy per particle.
    pub fn mean_chemical(&self, chem_energy: &[f64]) -> f64 {
        let m = self.type_masses();
        m.iter().zip(chem_energy).map(|(a, k)| a * k).sum::<f64>() / m.iter().sum::<f64>()
    }

    /// Node masses of the kinetic-energy marginal, summed over types.
    pub fn kinetic_marginal(&self) -> Vec<f64> {
        let masses = self.masses();
        (0..self.grid.len()).map(|k| masses.iter().map(|row| row[k]).sum()).collect()
    }

    /// L1 distance between the kinetic marginal and the `Gamma(3/2, beta)` cell
    /// masses, i.e. twice the total-variation distance on the grid.
    pub fn maxwell_l1_distance(&self, beta: f64) -> f64 {
        let marg = self.kinetic_marginal();
        let total: f64 = marg.iter().sum();
        marg.iter().zip(self.grid.maxwell_masses(beta)).map(|(a, b)| libm::fabs(a / total - b)).sum()
    }
}

fn mean_kinetic_of(grid: &EnergyGrid, masses: &[Vec<f64>]) -> f64 {
    let mut mass = 0.0;
    let mut energy = 0.0;
    for row in masses {
        for (k, m) in row.iter().enumerate() {
            mass += m;
            energy += m * grid.node(k);
        }
    }
    energy / mass
}

/// How the fast scale is treated.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum FastLimit {
    /// Integrate the fast channel at its finite rate.
    #[default]
    Off,
    /// `s_f -> infinity`: kinetic marginals are Maxwellian at the temperature
    /// fixed by the current mean kinetic energy.
    Thermal,
    /// `s_f, s_beta -> infinity`: kinetic marginals are Maxwellian at the
    /// bath temperature.
    Bath,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoltzmannOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Output spacing; `None` keeps only the initial and final fields.
    pub sample_every: Option<f64>,
    pub fast_limit: FastLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoltzmannRun {
    pub snapshots: Vec<DensityField>,
    /// Largest `|norm - 1|` seen before renormalization.
    pub max_mass_drift: f64,
}

/// One unary transfer out of a node: fraction of the cell above the energy
/// threshold, and where the moved mass lands.
#[derive(Clone, Copy, Debug)]
struct UnaryMove {
    node: usize,
    allowed: f64,
    landing: f64,
}

#[derive(Clone, Debug)]
struct UnaryChannel {
    from: usize,
    to: usize,
    rate: f64,
    moves: Vec<UnaryMove>,
}

#[derive(Clone, Debug)]
struct SlowChannel {
    from: usize,
    partner: usize,
    product: usize,
    /// `2 b_jj'` times the outcome probability.
    rate: f64,
    /// `K_j + K_j' - K_j1 - K_j1'`.
    released: f64,
}

/// Precomputed right-hand side of the kinetic equation.
#[derive(Clone, Debug)]
pub struct BoltzmannOperator {
    grid: EnergyGrid,
    n_species: usize,
    limit: FastLimit,
    unary: Vec<UnaryChannel>,
    /// `2 s_f f_jj'`.
    fast: Vec<Vec<f64>>,
    heat_rate: f64,
    bath: Vec<f64>,
    bath_beta: f64,
    slow: Vec<SlowChannel>,
    /// `split[n] = (first index, cell probabilities)`.
    split: Vec<(usize, Vec<f64>)>,
}

fn split_table(m: usize) -> Vec<(usize, Vec<f64>)> {
    (0..=2 * m)
        .map(|n| {
            if n == 0 {
                return (0, vec![1.0]);
            }
            let nf = n as f64;
            let lo = n.saturating_sub(m);
            let hi = n.min(m);
            let mut probs: Vec<f64> = (lo..=hi)
                .map(|i| {
                    let a = ((i as f64 - 0.5) / nf).max(0.0);
                    let b = ((i as f64 + 0.5) / nf).min(1.0);
                    beta_three_halves_cdf(b) - beta_three_halves_cdf(a)
                })
                .collect();
            if n > m {
                let total: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= total);
            }
            (lo, probs)
        })
        .collect()
}

/// Split of a continuous energy `e` (in grid units) onto nodes `0..=m`.
fn continuous_split(e: f64, m: usize) -> Vec<(usize, f64)> {
    if e <= 0.0 {
        return vec![(0, 1.0)];
    }
    let top = (libm::floor(e + 0.5) as usize).min(m);
    let mut out: Vec<(usize, f64)> = (0..=top)
        .map(|i| {
            let a = ((i as f64 - 0.5) / e).clamp(0.0, 1.0);
            let b = ((i as f64 + 0.5) / e).clamp(0.0, 1.0);
            (i, beta_three_halves_cdf(b) - beta_three_halves_cdf(a))
        })
        .filter(|&(_, p)| p > 0.0)
        .collect();
    let total: f64 = out.iter().map(|x| x.1).sum();
    out.iter_mut().for_each(|x| x.1 /= total);
    out
}

impl BoltzmannOperator {
    pub fn new(spec: &EnsembleSpec, grid: EnergyGrid, limit: FastLimit) -> Self {
        let n_species = spec.n_species();
        let chem = spec.chem_energies();
        let h = grid.step();
        let mut unary = Vec::new();
        for from in 0..n_species {
            for to in 0..n_species {
                let rate = spec.rates.unary[from][to];
                if from == to || rate == 0.0 {
                    continue;
                }
                let threshold = chem[to] - chem[from];
                let moves = (0..grid.len())
                    .filter_map(|k| {
                        let (lo, hi) = grid.cell(k);
                        let hi = if k == grid.intervals() { grid.node(k) } else { hi };
                        let start = lo.max(threshold);
                        if start >= hi {
                            return None;
                        }
                        let allowed = (hi - start) / (hi - lo);
                        // whole cells move from the node; a cut cell moves from the centroid
                        // of its allowed part
                        let from = if allowed == 1.0 { grid.node(k) } else { 0.5 * (start + hi) };
                        Some(UnaryMove { node: k, allowed, landing: (from - threshold) / h })
                    })
                    .collect();
                unary.push(UnaryChannel { from, to, rate, moves });
            }
        }
        let fast =
            spec.rates.fast_binary.iter().map(|row| row.iter().map(|f| 2.0 * spec.scale_fast * f).collect()).collect();
        let mut slow = Vec::new();
        if let Some(table) = &spec.rates.slow_binary {
            let kernel = crate::kinetics::TransitionKernel::from_spec(spec);
            for j in 0..n_species {
                for jp in 0..n_species {
                    let b = table.rate_bounds[j][jp];
                    if b == 0.0 {
                        continue;
                    }
                    let outcomes = kernel.outcomes(j, jp);
                    let total: f64 = outcomes.iter().map(|o| o.1).sum();
                    for &([p1, p2], w) in outcomes {
                        slow.push(SlowChannel {
                            from: j,
                            partner: jp,
                            product: p1,
                            rate: 2.0 * b * w / total,
                            released: chem[j] + chem[jp] - chem[p1] - chem[p2],
                        });
                    }
                }
            }
        }
        Self {
            grid,
            n_species,
            limit,
            unary,
            fast,
            heat_rate: spec.scale_heat * spec.rates.heat_rate,
            bath: grid.maxwell_masses(spec.rates.bath_beta),
            bath_beta: spec.rates.bath_beta,
            slow,
            split: split_table(grid.intervals()),
        }
    }

    fn fast_active(&self) -> bool {
        self.limit == FastLimit::Off && self.fast.iter().flatten().any(|&f| f > 0.0)
    }

    fn heat_active(&self) -> bool {
        self.limit != FastLimit::Bath && self.heat_rate > 0.0
    }

    /// Upper bound on the total outflow rate of any node.
    pub fn max_outflow(&self) -> f64 {
        (0..self.n_species)
            .map(|j| {
                let unary: f64 = self.unary.iter().filter(|u| u.from == j).map(|u| u.rate).sum();
                let fast: f64 = if self.fast_active() { self.fast[j].iter().copied().fold(0.0, f64::max) } else { 0.0 };
                let heat = if self.heat_active() { self.heat_rate } else { 0.0 };
                let slow: f64 = self.slow.iter().filter(|s| s.from == j).map(|s| s.rate).sum();
                unary + fast + heat + slow
            })
            .fold(0.0, f64::max)
    }

    /// Redistributes `rho[n]` (collisions with total energy index `n`) onto
    /// the grid and adds the result to `out`.
    fn scatter(&self, rho: &[f64], out: &mut [f64]) {
        for (n, &r) in rho.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let (lo, probs) = &self.split[n];
            for (o, p) in out[*lo..].iter_mut().zip(probs) {
                *o += r * p;
            }
        }
    }

    fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, y) in out[i..].iter_mut().zip(b) {
                *o += x * y;
            }
        }
        out
    }

    /// Time derivative of node masses, without any projection.
    pub fn rhs(&self, masses: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let len = self.grid.len();
        let mut d = vec![vec![0.0; len]; self.n_species];
        for ch in &self.unary {
            for mv in &ch.moves {
                let flow = ch.rate * mv.allowed * masses[ch.from][mv.node];
                if flow == 0.0 {
                    continue;
                }
                d[ch.from][mv.node] -= flow;
                deposit(&mut d[ch.to], mv.landing, flow);
            }
        }
        if self.fast_active() {
            for j in 0..self.n_species {
                let mut q = vec![0.0; len];
                for (jp, &f) in self.fast[j].iter().enumerate() {
                    if f > 0.0 {
                        for (qk, m) in q.iter_mut().zip(&masses[jp]) {
                            *qk += f * m;
                        }
                    }
                }
                let q_total: f64 = q.iter().sum();
                if q_total == 0.0 {
                    continue;
                }
                let rho = Self::convolve(&masses[j], &q);
                for (dk, m) in d[j].iter_mut().zip(&masses[j]) {
                    *dk -= m * q_total;
                }
                self.scatter(&rho, &mut d[j]);
            }
        }
        if self.heat_active() {
            for j in 0..self.n_species {
                let mut rho = Self::convolve(&masses[j], &self.bath);
                rho.iter_mut().for_each(|r| *r *= self.heat_rate);
                for (dk, m) in d[j].iter_mut().zip(&masses[j]) {
                    *dk -= m * self.heat_rate;
                }
                self.scatter(&rho, &mut d[j]);
            }
        }
        if !self.slow.is_empty() {
            self.slow_rhs(masses, &mut d);
        }
        d
    }

    fn slow_rhs(&self, masses: &[Vec<f64>], d: &mut [Vec<f64>]) {
        let h = self.grid.step();
        let m = self.grid.intervals();
        for ch in &self.slow {
            let own = &masses[ch.from];
            let partner = &masses[ch.partner];
            let shift = ch.released / h;
            let mut rho = vec![0.0; 2 * m + 1];
            for (a, &x) in own.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let mut lost = 0.0;
                for (b, &y) in partner.iter().enumerate() {
                    // forbidden cell pairs do not react at all
                    if (a + b) as f64 + shift < 0.0 || y == 0.0 {
                        continue;
                    }
                    let r = ch.rate * x * y;
                    rho[a + b] += r;
                    lost += r;
                }
                d[ch.from][a] -= lost;
            }
            for (n, &r) in rho.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                for (i, p) in continuous_split(n as f64 + shift, m) {
                    d[ch.product][i] += r * p;
                }
            }
        }
    }

    /// Maxwellian projection for the active fast limit.
    pub fn project(&self, masses: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let beta = match self.limit {
            FastLimit::Off => return masses.to_vec(),
            FastLimit::Bath => self.bath_beta,
            FastLimit::Thermal => self.grid_beta_for_mean(mean_kinetic_of(&self.grid, masses)),
        };
        let shape = if self.limit == FastLimit::Bath { self.bath.clone() } else { self.grid.maxwell_masses(beta) };
        masses
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                shape.iter().map(|s| total * s).collect()
            })
            .collect()
    }

    /// Inverse temperature whose discrete Maxwell masses have mean `mean`.
    /// Matching the grid mean, rather than `3 / (2 mean)`, keeps repeated
    /// projections from drifting the energy.
    fn grid_beta_for_mean(&self, mean: f64) -> f64 {
        let grid_mean = |beta: f64| {
            self.grid.maxwell_masses(beta).iter().enumerate().map(|(k, m)| m * self.grid.node(k)).sum::<f64>()
        };
        let guess = 1.5 / mean;
        let (mut lo, mut hi) = (guess * 0.5, guess * 2.0);
        while grid_mean(lo) < mean {
            lo *= 0.5;
        }
        while grid_mean(hi) > mean {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if grid_mean(mid) > mean {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn derivative(&self, masses: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self.limit {
            FastLimit::Off => self.rhs(masses),
            _ => self.rhs(&self.project(masses)),
        }
    }

    /// One classical RK4 step of size `dt`.
    pub fn rk4_step(&self, masses: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
        let axpy = |base: &[Vec<f64>], k: &[Vec<f64>], s: f64| -> Vec<Vec<f64>> {
            base.iter().zip(k).map(|(r, kr)| r.iter().zip(kr).map(|(x, y)| x + s * y).collect()).collect()
        };
        let k1 = self.derivative(masses);
        let k2 = self.derivative(&axpy(masses, &k1, 0.5 * dt));
        let k3 = self.derivative(&axpy(masses, &k2, 0.5 * dt));
        let k4 = self.derivative(&axpy(masses, &k3, dt));
        masses
            .iter()
            .enumerate()
            .map(|(j, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, x)| x + dt / 6.0 * (k1[j][k] + 2.0 * k2[j][k] + 2.0 * k3[j][k] + k4[j][k]))
                    .collect()
            })
            .collect()
    }
}

/// Integrates the kinetic equation from `field` to `options.t_end`.
///
/// Every step is followed by the fast-limit projection (if any), clipping of
/// roundoff negatives and renormalization to unit mass.
pub fn integrate_boltzmann(
    field: &DensityField,
    spec: &EnsembleSpec,
    options: &BoltzmannOptions,
) -> Result<BoltzmannRun, MeanFieldError> {
    spec.validate().into_result()?;
    if field.n_species() != spec.n_species() || field.values.iter().any(|r| r.len() != field.grid.len()) {
        return Err(MeanFieldError::Shape);
    }
    if !(options.dt > 0.0) || !(options.t_end >= 0.0) || !options.t_end.is_finite() {
        return Err(MeanFieldError::Time);
    }
    let op = BoltzmannOperator::new(spec, field.grid, options.fast_limit);
    let cfl = options.dt * op.max_outflow();
    if cfl > 0.5 {
        return Err(MeanFieldError::Cfl(cfl));
    }
    let grid = field.grid;
    let mut masses = op.project(&field.masses());
    let mut snapshots = vec![DensityField::from_masses(grid, field.time, &masses)];
    let mut max_mass_drift: f64 = 0.0;
    let interval = options.sample_every.unwrap_or(options.t_end);
    let mut t = field.time;
    let t_stop = field.time + options.t_end;
    while t < t_stop - 1e-12 * t_stop.max(1.0) {
        let target = (t + interval).min(t_stop);
        let steps = libm::ceil((target - t) / options.dt - 1e-9).max(1.0) as usize;
        let dt = (target - t) / steps as f64;
        for _ in 0..steps {
            masses = op.project(&op.rk4_step(&masses, dt));
            let mut total = 0.0;
            for row in masses.iter_mut() {
                for x in row.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                    }
                    total += *x;
                }
            }
            max_mass_drift = max_mass_drift.max(libm::fabs(total - 1.0));
            for row in masses.iter_mut() {
                row.iter_mut().for_each(|x| *x /= total);
            }
        }
        t = target;
        snapshots.push(DensityField::from_masses(grid, t, &masses));
    }
    Ok(BoltzmannRun { snapshots, max_mass_drift })
}

/// `L1` norm of the discrete fast-collision operator applied to the
/// `Gamma(3/2, beta)` cell masses (single species, unit rate).
pub fn fast_stationarity_residual(grid: EnergyGrid, beta: f64) -> f64 {
    let mut spec = crate::spec::EnsembleSpec {
        n_particles: 2,
        box_side: 1.0,
        species: vec![crate::spec::SpeciesSpec::simple(1, 1.0, 0.0)],
        rates: crate::spec::RateTable::zeros(1, beta),
        scale_fast: 1.0,
        scale_heat: 0.0,
        rng_seed: 0,
        initial_distribution: crate::spec::InitialDistribution {
            type_weights: vec![1.0],
            energy_laws: vec![EnergyLaw::Gamma { beta }],
        },
    };
    spec.rates.fast_binary = vec![vec![0.5]];
    let op = BoltzmannOperator::new(&spec, grid, FastLimit::Off);
    let d = op.rhs(&[grid.maxwell_masses(beta)]);
    d[0].iter().map(|x| libm::fabs(*x)).sum()
}

/// `g_beta(r) = P(xi > r)` for `xi ~ Gamma(3/2, beta)`.
pub fn survival_gbeta(r: f64, beta: f64) -> Result<f64, MeanFieldError> {
    if !(r >= 0.0) {
        return Err(MeanFieldError::NegativeRadius(r));
    }
    if !(beta > 0.0) {
        return Err(MeanFieldError::Thermo(ThermoError::Beta(beta)));
    }
    Ok(gamma_q(1.5, beta * r))
}

/// Maxwell-averaged unary rates `v_jj' = w_jj' g_beta(max(0, K_j' - K_j))`.
pub fn effective_rates(spec: &EnsembleSpec, beta: f64) -> Vec<Vec<f64>> {
    let chem = spec.chem_energies();
    let n = spec.n_species();
    (0..n)
        .map(|j| {
            (0..n)
                .map(|jp| {
                    if j == jp {
                        0.0
                    } else {
                        spec.rates.unary[j][jp] * gamma_q(1.5, beta * (chem[jp] - chem[j]).max(0.0))
                    }
                })
                .collect()
        })
        .collect()
}

/// `(v12, v21)` of the two-state chain obtained at fixed bath temperature.
pub fn reduced_two_state(spec: &EnsembleSpec) -> Result<(f64, f64), MeanFieldError> {
    if spec.n_species() != 2 {
        return Err(MeanFieldError::NotTwoSpecies(spec.n_species()));
    }
    let v = effective_rates(spec, spec.rates.bath_beta);
    Ok((v[0][1], v[1][0]))
}

/// Macroscopic state on the Gibbs manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroState {
    pub time: f64,
    pub beta: f64,
    pub concentrations: Vec<f64>,
}

impl MacroState {
    pub fn total(&self) -> f64 {
        self.concentrations.iter().sum()
    }

    pub fn thermo_point(&self, spec: &EnsembleSpec) -> Result<ThermoPoint, ThermoError> {
        ThermoPoint::new(self.beta, self.concentrations.clone(), spec.species.clone())
    }

    pub fn chemical_potentials(&self, spec: &EnsembleSpec) -> Result<Vec<f64>, ThermoError> {
        thermo::chemical_potential(&self.thermo_point(spec)?)
    }
}

/// Generator of the reduced chain on types.
pub fn reduced_generator(spec: &EnsembleSpec, beta: f64) -> DenseMatrix {
    let v = effective_rates(spec, beta);
    let n = v.len();
    let mut q = DenseMatrix::zeros(n);
    for j in 0..n {
        let mut out = 0.0;
        for jp in 0..n {
            if jp != j {
                q[(j, jp)] = v[j][jp];
                out += v[j][jp];
            }
        }
        q[(j, j)] = -out;
    }
    q
}

/// Concentrations under `dc_j/dt = sum_j' c_j' v_j'j - c_j sum_j' v_jj'` at
/// the bath temperature, sampled every `dt_out` up to `t_end`. Each sample is
/// the exact propagator applied to the previous one.
pub fn reduced_macro_ode(
    start: &MacroState,
    spec: &EnsembleSpec,
    t_end: f64,
    dt_out: f64,
) -> Result<Vec<MacroState>, MeanFieldError> {
    if start.concentrations.len() != spec.n_species() {
        return Err(MeanFieldError::Shape);
    }
    if !(dt_out > 0.0) || !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(MeanFieldError::Time);
    }
    let beta = spec.rates.bath_beta;
    let q = reduced_generator(spec, beta);
    let steps = libm::ceil(t_end / dt_out - 1e-9) as usize;
    let dt = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let mut scaled = q.clone();
    scaled.scale(dt);
    let propagator = scaled.expm();
    let mut out = vec![MacroState { time: start.time, beta, concentrations: start.concentrations.clone() }];
    let c0 = start.total();
    for k in 1..=steps {
        let prev = &out[k - 1].concentrations;
        let mut next = propagator.left_apply(prev);
        // the propagator is stochastic up to roundoff; keep the total exact
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x *= c0 / s);
        out.push(MacroState { time: start.time + k as f64 * dt, beta, concentrations: next });
    }
    Ok(out)
}

/// Stationary concentrations of the reduced chain at total `c`.
pub fn reduced_fixed_point(spec: &EnsembleSpec, c: f64) -> Result<Vec<f64>, MeanFieldError> {
    let q = reduced_generator(spec, spec.rates.bath_beta);
    let pi = crate::linalg::stationary_distribution(&q).map_err(|_| MeanFieldError::Rates)?;
    Ok(pi.into_iter().map(|p| c * p).collect())
}

/// Two-state flux `J_1 = (1 - e^{-beta A}) / (1/u21 + e^{-beta A}/u12)`.
///
/// When `u21 / u12` is the equilibrium constant this equals `(dc_1/dt) / c`
/// for `dc_1/dt = c_2 u21 - c_1 u12`.
pub fn onsager_flux(a: f64, u12: f64, u21: f64, beta: f64) -> Result<f64, MeanFieldError> {
    if !(u12 > 0.0) || !(u21 > 0.0) {
        return Err(MeanFieldError::Rates);
    }
    let x = libm::exp(-beta * a);
    Ok((1.0 - x) / (1.0 / u21 + x / u12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::fixtures::two_species;
    use crate::spec::{zero_matrix, InitialDistribution, RateTable};

    fn unary_spec(w12: f64, w21: f64, dk: f64) -> EnsembleSpec {
        let mut spec = two_species();
        spec.rates = RateTable::zeros(2, 1.0);
        spec.rates.unary = vec![vec![0.0, w12], vec![w21, 0.0]];
        spec.species[1].chem_energy = dk;
        spec
    }

    #[test]
    fn survival_edges_and_quadrature() {
        assert_eq!(survival_gbeta(0.0, 1.0).unwrap(), 1.0);
        assert!(survival_gbeta(-0.1, 1.0).is_err());
        let mut prev = 1.0;
        for k in 1..60 {
            let g = survival_gbeta(k as f64, 1.0).unwrap();
            assert!(g < prev);
            prev = g;
        }
        assert!(prev < 1e-20);
        // Simpson on (1, 60) of 2/sqrt(pi) x^{1/2} e^{-x}
        let n = 200_000;
        let (a, b) = (1.0f64, 60.0f64);
        let h = (b - a) / n as f64;
        let f = |x: f64| 2.0 / core::f64::consts::PI.sqrt() * x.sqrt() * (-x).exp();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = s * h / 3.0;
        assert!((survival_gbeta(1.0, 1.0).unwrap() - quad).abs() < 1e-10);
    }

    #[test]
    fn two_state_rates() {
        let (v12, v21) = reduced_two_state(&unary_spec(1.0, 1.0, 0.0)).unwrap();
        assert_eq!((v12, v21), (1.0, 1.0));
        let (v12, _) = reduced_two_state(&unary_spec(0.0, 1.0, 1.0)).unwrap();
        assert_eq!(v12, 0.0);
        let mut three = unary_spec(1.0, 1.0, 1.0);
        three.species.push(crate::spec::SpeciesSpec::simple(3, 1.0, 0.0));
        assert!(matches!(reduced_two_state(&three), Err(MeanFieldError::NotTwoSpecies(3))));
    }

    #[test]
    fn reduced_ode_fixed_point_and_conservation() {
        let spec = unary_spec(1.0, 1.0, 1.0);
        let (v12, v21) = reduced_two_state(&spec).unwrap();
        let fixed = reduced_fixed_point(&spec, 1.0).unwrap();
        assert!((fixed[0] / fixed[1] - v21 / v12).abs() < 1e-12);
        let still =
            reduced_macro_ode(&MacroState { time: 0.0, beta: 1.0, concentrations: fixed.clone() }, &spec, 5.0, 0.1)
                .unwrap();
        for s in &still {
            assert!((s.concentrations[0] - fixed[0]).abs() < 1e-12);
        }
        let moving =
            reduced_macro_ode(&MacroState { time: 0.0, beta: 1.0, concentrations: vec![0.9, 0.1] }, &spec, 30.0, 0.5)
                .unwrap();
        for s in &moving {
            assert!((s.total() - 1.0).abs() < 1e-12);
        }
        let last = moving.last().unwrap();
        assert!((last.concentrations[0] / last.concentrations[1] - v21 / v12).abs() < 1e-9);
    }

    #[test]
    fn zero_rates_leave_field_constant() {
        let mut spec = two_species();
        spec.rates = RateTable::zeros(2, 1.0);
        let grid = EnergyGrid::new(64, 20.0);
        let field = DensityField::from_spec(&spec, grid);
        let run = integrate_boltzmann(
            &field,
            &spec,
            &BoltzmannOptions { dt: 0.1, t_end: 2.0, sample_every: Some(1.0), fast_limit: FastLimit::Off },
        )
        .unwrap();
        assert_eq!(run.snapshots.len(), 3);
        let last = run.snapshots.last().unwrap();
        for (a, b) in last.values.iter().flatten().zip(field.values.iter().flatten()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let spec = unary_spec(10.0, 10.0, 1.0);
        let grid = EnergyGrid::new(32, 20.0);
        let field = DensityField::from_spec(&spec, grid);
        let opts = BoltzmannOptions { dt: 0.1, t_end: 1.0, sample_every: None, fast_limit: FastLimit::Bath };
        assert!(matches!(integrate_boltzmann(&field, &spec, &opts), Err(MeanFieldError::Cfl(_))));
    }

    #[test]
    fn split_table_is_symmetric_and_normalized() {
        let table = split_table(16);
        for (n, (lo, probs)) in table.iter().enumerate() {
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-14, "n = {n}");
            let mean: f64 = probs.iter().enumerate().map(|(i, p)| (lo + i) as f64 * p).sum();
            assert!((mean - n as f64 / 2.0).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn fast_operator_conserves_mass_and_energy() {
        let mut spec = two_species();
        spec.rates = RateTable::zeros(2, 1.0);
        spec.rates.fast_binary = vec![vec![1.0, 0.5], vec![0.5, 2.0]];
        spec.initial_distribution.energy_laws =
            vec![EnergyLaw::Uniform { low: 0.0, high: 2.0 }, EnergyLaw::Point { value: 1.3 }];
        let grid = EnergyGrid::new(64, 12.0);
        let field = DensityField::from_spec(&spec, grid);
        let op = BoltzmannOperator::new(&spec, grid, FastLimit::Off);
        let d = op.rhs(&field.masses());
        let dm: f64 = d.iter().flatten().sum();
        let de: f64 = d.iter().map(|row| row.iter().enumerate().map(|(k, x)| x * grid.node(k)).sum::<f64>()).sum();
        assert!(dm.abs() < 1e-14 && de.abs() < 1e-13, "{dm} {de}");
        // fast collisions never move mass across types
        for row in &d {
            assert!(row.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_residual_shrinks_with_refinement() {
        let r1 = fast_stationarity_residual(EnergyGrid::new(128, 32.0), 1.0);
        let r2 = fast_stationarity_residual(EnergyGrid::new(256, 32.0), 1.0);
        let r3 = fast_stationarity_residual(EnergyGrid::new(512, 32.0), 1.0);
        assert!(r2 < 0.6 * r1 && r3 < 0.6 * r2, "{r1} {r2} {r3}");
    }

    #[test]
    fn fast_only_relaxes_to_maxwell() {
        let mut spec = two_species();
        spec.rates = RateTable::zeros(2, 1.0);
        spec.rates.fast_binary = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        spec.rates.unary = zero_matrix(2);
        spec.initial_distribution = InitialDistribution {
            type_weights: vec![0.5, 0.5],
            energy_laws: vec![EnergyLaw::Uniform { low: 0.0, high: 2.0 }; 2],
        };
        let grid = EnergyGrid::new(128, 24.0);
        let field = DensityField::from_spec(&spec, grid);
        let opts = BoltzmannOptions { dt: 0.05, t_end: 15.0, sample_every: None, fast_limit: FastLimit::Off };
        let run = integrate_boltzmann(&field, &spec, &opts).unwrap();
        let last = run.snapshots.last().unwrap();
        let beta = 1.5 / last.mean_kinetic();
        assert!((last.mean_kinetic() - 1.0).abs() < 1e-3);
        assert!(last.maxwell_l1_distance(beta) < 0.01, "{}", last.maxwell_l1_distance(beta));
        assert!(run.max_mass_drift < 1e-6);
    }

    #[test]
    fn bath_limit_tracks_reduced_chain() {
        let spec = unary_spec(1.0, 1.0, 1.0);
        let grid = EnergyGrid::for_spec(&spec, 512);
        let mut field = DensityField::maxwell(grid, 1.0, &[1.0, 0.0]);
        field.time = 0.0;
        let opts = BoltzmannOptions { dt: 0.05, t_end: 5.0, sample_every: Some(0.5), fast_limit: FastLimit::Bath };
        let run = integrate_boltzmann(&field, &spec, &opts).unwrap();
        let reduced =
            reduced_macro_ode(&MacroState { time: 0.0, beta: 1.0, concentrations: vec![1.0, 0.0] }, &spec, 5.0, 0.5)
                .unwrap();
        for (f, r) in run.snapshots.iter().zip(&reduced) {
            let c = f.concentrations(1.0);
            assert!((c[0] - r.concentrations[0]).abs() < 2e-3, "t = {}: {} vs {}", f.time, c[0], r.concentrations[0]);
        }
    }

    #[test]
    fn thermal_projection_keeps_energy() {
        let mut spec = unary_spec(0.0, 0.0, 0.0);
        spec.initial_distribution.energy_laws = vec![EnergyLaw::Point { value: 1.0 }; 2];
        let grid = EnergyGrid::new(256, 40.0);
        let field = DensityField::from_spec(&spec, grid);
        let op = BoltzmannOperator::new(&spec, grid, FastLimit::Thermal);
        let mut m = op.project(&field.masses());
        let e0 = mean_kinetic_of(&grid, &m);
        for _ in 0..20 {
            m = op.project(&m);
        }
        assert!((mean_kinetic_of(&grid, &m) - e0).abs() < 1e-12);
        assert!((e0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slow_binary_conserves_mass() {
        let mut spec = two_species();
        spec.rates = RateTable::zeros(2, 1.0);
        spec.species[1].chem_energy = 0.5;
        spec.rates.slow_binary = Some(crate::spec::SlowBinaryTable {
            rate_bounds: vec![vec![1.0, 0.5], vec![0.5, 0.0]],
            kernel: Default::default(),
            transitions: vec![crate::spec::TypeTransition {
                from: [1, 1],
                outcomes: vec![crate::spec::TypeOutcome { types: [2, 2], weight: 1.0 }],
            }],
        });
        let grid = EnergyGrid::new(48, 20.0);
        let field = DensityField::from_spec(&spec, grid);
        let op = BoltzmannOperator::new(&spec, grid, FastLimit::Off);
        let d = op.rhs(&field.masses());
        assert!(d.iter().flatten().sum::<f64>().abs() < 1e-13);
        // 1 + 1 -> 2 + 2 moves mass into type 2
        assert!(d[1].iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn onsager_zero_sign_and_linear_response() {
        assert_eq!(onsager_flux(0.0, 0.5, 2.0, 1.0).unwrap(), 0.0);
        assert!(onsager_flux(0.3, 0.5, 2.0, 1.0).unwrap() > 0.0);
        assert!(onsager_flux(-0.3, 0.5, 2.0, 1.0).unwrap() < 0.0);
        assert!(onsager_flux(1.0, 0.0, 1.0, 1.0).is_err());
        let (u12, u21, beta) = (0.7, 1.9, 1.3);
        let l = beta / (1.0 / u21 + 1.0 / u12);
        let a = 1e-6;
        let fd = (onsager_flux(a, u12, u21, beta).unwrap() - onsager_flux(-a, u12, u21, beta).unwrap()) / (2.0 * a);
        assert!((fd - l).abs() < 1e-8);
    }
}
