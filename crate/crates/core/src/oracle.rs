//! Abstract pair-interaction model and its cluster-expansion series.
//!
//! `N` particles carry states in a small finite set `S`. Every unordered pair
//! rings at rate `2 lambda / (N - 1)` (so the merged stream has rate
//! `N lambda`) and then resamples its two states from a swap-symmetric
//! stochastic kernel `U` on `S^2`.
//!
//! The state of particle `v` at time `t` depends only on its backward
//! interaction history `theta_v`: the last pair containing `v` and,
//! recursively, every earlier pair touching the set of particles already
//! collected. Summing over the possible histories gives
//!
//! ```text
//! mu_v(t) = sum_theta P^N(theta) B_v U(theta) (mu(0) x ... x mu(0)),
//! ```
//!
//! where `P^N(theta)` is an integral over the time simplex of products of
//! exponential "no further interaction" factors. With `a_k` active particles
//! between the `k`-th and `(k+1)`-th event, the forbidden pairs number
//! `m(a) = a (N - a) + a (a - 1) / 2` and
//!
//! ```text
//! P^N(theta) = (2 lambda / (N - 1))^n  int_{0 < t_1 < ... < t_n < t} prod_k exp(-r_k (t_{k+1} - t_k)),
//! r_k = 2 lambda m(a_k) / (N - 1).
//! ```
//!
//! Histories that differ by a relabelling of particles other than `v` share
//! `P^N` and the pushed-forward measure, so sums run over canonical classes
//! weighted by their size `(N - 1)(N - 2)...(N - l + 1)`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::linalg::DenseMatrix;
use crate::math::falling_factorial;
use crate::state::EventRecord;
use crate::SimRng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("pair ({0}, {0}) joins a particle with itself")]
    SelfPair(u32),
    #[error("kernel row {0} does not sum to one")]
    NotStochastic(usize),
    #[error("kernel is not symmetric under swapping the two particles")]
    NotSymmetric,
    #[error("kernel must be |S|^2 x |S|^2 with |S| >= 1")]
    KernelShape,
    #[error("initial measure must be a probability vector on S")]
    InitialMeasure,
    #[error("truncation tail {tail:e} exceeds tolerance {tolerance:e}")]
    Tail { tail: f64, tolerance: f64 },
    #[error("length {n} needs at least {n} + 1 particles, got {particles}")]
    Degenerate { n: usize, particles: usize },
    #[error("need at least {needed} replicas, got {got}")]
    Replicas { needed: usize, got: usize },
    #[error("state space S^N with {0} states is too large for the dense oracle")]
    TooLarge(usize),
    #[error("time and rate must be nonnegative and finite")]
    Time,
}

/// Unordered pair of distinct particle labels, stored with `lo < hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    lo: u32,
    hi: u32,
}

impl Pair {
    pub fn new(a: u32, b: u32) -> Result<Self, OracleError> {
        if a == b {
            return Err(OracleError::SelfPair(a));
        }
        Ok(Self { lo: a.min(b), hi: a.max(b) })
    }

    pub fn members(&self) -> [u32; 2] {
        [self.lo, self.hi]
    }

    pub fn contains(&self, v: u32) -> bool {
        self.lo == v || self.hi == v
    }

    pub fn meets(&self, other: &Pair) -> bool {
        self.contains(other.lo) || self.contains(other.hi)
    }
}

/// Ordered sequence of unordered pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InteractionSequence {
    pub pairs: Vec<Pair>,
}

impl InteractionSequence {
    pub fn from_tuples(pairs: &[(u32, u32)]) -> Result<Self, OracleError> {
        Ok(Self { pairs: pairs.iter().map(|&(a, b)| Pair::new(a, b)).collect::<Result<_, _>>()? })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Distinct particles in the sequence.
    pub fn particles(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.pairs.iter().flat_map(|p| p.members()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Pairs of the binary events in a simulator log, in time order.
pub fn pairs_from_events(log: &[EventRecord]) -> Vec<Pair> {
    log.iter()
        .filter_map(|r| r.pair())
        .map(|(a, b)| Pair::new(a as u32, b as u32).expect("binary events join distinct particles"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classification {
    pub connected: bool,
    /// Connected and every pair essential.
    pub essential: bool,
    /// Zero-based positions of the nonessential pairs (the type `A`).
    pub nonessential: Vec<usize>,
    /// Connected with `v` in the last pair.
    pub anchored: bool,
}

/// Connectivity and essentiality by the `V_k` rule: with `V_k` the particles
/// of the pairs after position `k`, the sequence is connected if every pair
/// but the last meets `V_k`, and pair `k` is essential if it is not contained
/// in `V_k`.
pub fn classify(theta: &InteractionSequence, v: u32) -> Classification {
    let n = theta.len();
    let mut later: Vec<u32> = Vec::new();
    let mut connected = true;
    let mut nonessential = Vec::new();
    for k in (0..n).rev() {
        let [a, b] = theta.pairs[k].members();
        let (ha, hb) = (later.contains(&a), later.contains(&b));
        if k + 1 < n && !ha && !hb {
            connected = false;
        }
        if ha && hb {
            nonessential.push(k);
        }
        if !ha {
            later.push(a);
        }
        if !hb {
            later.push(b);
        }
    }
    nonessential.reverse();
    let anchored = connected && theta.pairs.last().is_some_and(|p| p.contains(v));
    Classification { connected, essential: connected && nonessential.is_empty(), nonessential, anchored }
}

/// Backward interaction history of `v` in a log of pairs.
pub fn extract_theta_v(log: &[Pair], v: u32) -> InteractionSequence {
    let Some(last) = log.iter().rposition(|p| p.contains(v)) else {
        return InteractionSequence::default();
    };
    let mut active: Vec<u32> = vec![v];
    let mut picked = Vec::new();
    for k in (0..=last).rev() {
        let p = log[k];
        if active.contains(&p.lo) || active.contains(&p.hi) {
            picked.push(p);
            for x in p.members() {
                if !active.contains(&x) {
                    active.push(x);
                }
            }
        }
    }
    picked.reverse();
    InteractionSequence { pairs: picked }
}

/// Smallest index set satisfying the two closure conditions, found by
/// exhaustive search over subsets. Exponential; for cross-checks on short
/// logs only.
pub fn brute_force_theta_v(log: &[Pair], v: u32) -> InteractionSequence {
    let Some(last) = log.iter().rposition(|p| p.contains(v)) else {
        return InteractionSequence::default();
    };
    let len = last + 1;
    assert!(len <= 20, "brute force is limited to 20 events");
    let closed = |mask: u32| {
        (0..len).all(|i| {
            let inside = mask >> i & 1 == 1;
            if log[i].contains(v) && !inside {
                return false;
            }
            !inside || (0..i).all(|k| !log[k].meets(&log[i]) || mask >> k & 1 == 1)
        })
    };
    let best = (0u32..1 << len).filter(|&m| closed(m)).min_by_key(|m| m.count_ones()).expect("full set is closed");
    InteractionSequence { pairs: (0..len).filter(|i| best >> i & 1 == 1).map(|i| log[i]).collect() }
}

/// `(N-1)^{-n} C_{n,ess}^{(N)} = prod_{k=1}^{n} k (N - k) / (N - 1)`.
pub fn essential_count(n: usize, n_particles: usize) -> Result<f64, OracleError> {
    if n >= n_particles {
        return Err(OracleError::Degenerate { n, particles: n_particles });
    }
    let big = n_particles as f64;
    Ok((1..=n).map(|k| k as f64 * (big - k as f64) / (big - 1.0)).product())
}

/// Exact `C_{n,ess}^{(N)} = n! (N - 1)(N - 2)...(N - n)`.
pub fn essential_count_exact(n: usize, n_particles: usize) -> u128 {
    (1..=n as u128).product::<u128>() * falling_factorial(n_particles as u64 - 1, n as u64)
}

/// Every sequence of `n` pairs over particles `1..=N` (there are
/// `C(N, 2)^n`).
pub fn all_sequences(n: usize, n_particles: u32) -> Vec<InteractionSequence> {
    let pairs: Vec<Pair> =
        (1..=n_particles).flat_map(|a| (a + 1..=n_particles).map(move |b| Pair { lo: a, hi: b })).collect();
    let mut out = vec![InteractionSequence::default()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s| {
                pairs.iter().map(move |p| {
                    let mut next = s.clone();
                    next.pairs.push(*p);
                    next
                })
            })
            .collect();
    }
    out
}

/// Canonical representative of a class of anchored connected sequences.
///
/// Labels are `0` for the anchor and `1, 2, ...` in order of first
/// appearance when reading the sequence backward.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CanonicalClass {
    pub sequence: InteractionSequence,
    pub particles: usize,
    /// Active-set sizes `a_0, ..., a_n`, where `a_k` counts particles of
    /// pairs after position `k` and `a_n = 1`.
    pub active: Vec<usize>,
    pub nonessential: Vec<usize>,
}

impl CanonicalClass {
    /// Number of labelled sequences in the class for `N` particles.
    pub fn multiplicity(&self, n_particles: usize) -> u128 {
        falling_factorial(n_particles as u64 - 1, self.particles as u64 - 1)
    }

    pub fn is_essential(&self) -> bool {
        self.nonessential.is_empty()
    }
}

/// All canonical classes of anchored connected sequences of length `n`
/// involving at most `max_particles` particles. With `essential_only`, only
/// pairs that bring in a new particle are generated.
pub fn canonical_classes(n: usize, max_particles: usize, essential_only: bool) -> Vec<CanonicalClass> {
    if n == 0 {
        return vec![CanonicalClass {
            sequence: InteractionSequence::default(),
            particles: 1,
            active: vec![1],
            nonessential: Vec::new(),
        }];
    }
    // backward construction: `rev` holds pairs from the last one down
    struct Partial {
        rev: Vec<Pair>,
        labels: u32,
        sizes: Vec<usize>,
        noness_rev: Vec<bool>,
    }
    let mut frontier = vec![Partial { rev: Vec::new(), labels: 1, sizes: vec![1], noness_rev: Vec::new() }];
    for _ in 0..n {
        let mut next = Vec::new();
        for p in frontier {
            let l = p.labels;
            if !essential_only {
                for a in 0..l {
                    for b in a + 1..l {
                        let mut rev = p.rev.clone();
                        rev.push(Pair { lo: a, hi: b });
                        let mut sizes = p.sizes.clone();
                        sizes.push(l as usize);
                        let mut noness = p.noness_rev.clone();
                        noness.push(true);
                        next.push(Partial { rev, labels: l, sizes, noness_rev: noness });
                    }
                }
            }
            if (l as usize) < max_particles {
                for a in 0..l {
                    let mut rev = p.rev.clone();
                    rev.push(Pair { lo: a, hi: l });
                    let mut sizes = p.sizes.clone();
                    sizes.push(l as usize + 1);
                    let mut noness = p.noness_rev.clone();
                    noness.push(false);
                    next.push(Partial { rev, labels: l + 1, sizes, noness_rev: noness });
                }
            }
        }
        frontier = next;
    }
    frontier
        .into_iter()
        .map(|p| {
            let mut pairs = p.rev;
            pairs.reverse();
            let mut active = p.sizes;
            active.reverse();
            let nonessential: Vec<usize> =
                p.noness_rev.iter().rev().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
            debug_assert!(
                !nonessential.is_empty() || pairs.iter().enumerate().all(|(i, a)| !pairs[i + 1..].contains(a)),
                "essential sequence with a repeated pair"
            );
            CanonicalClass {
                sequence: InteractionSequence { pairs },
                particles: p.labels as usize,
                active,
                nonessential,
            }
        })
        .collect()
}

/// `C_{n,A}^{(N)}` for every type `A` that occurs, from the class
/// enumeration.
pub fn type_counts(n: usize, n_particles: usize) -> BTreeMap<Vec<usize>, u128> {
    let mut out = BTreeMap::new();
    for class in canonical_classes(n, n_particles, false) {
        *out.entry(class.nonessential.clone()).or_insert(0) += class.multiplicity(n_particles);
    }
    out
}

/// `int_{0 < t_1 < ... < t_n < t} prod_{k=0}^{n} exp(-r_k (t_{k+1} - t_k))`
/// with `t_0 = 0`, `t_{n+1} = t`: the `(0, n)` entry of `exp(t M)` for the
/// bidiagonal `M` with diagonal `-r` and unit superdiagonal.
pub fn simplex_exponential_integral(rates: &[f64], t: f64) -> f64 {
    let n = rates.len();
    let mut m = DenseMatrix::zeros(n);
    for k in 0..n {
        m[(k, k)] = -rates[k] * t;
        if k + 1 < n {
            m[(k, k + 1)] = t;
        }
    }
    m.expm()[(0, n - 1)]
}

/// `m(a) = a (N - a) + a (a - 1) / 2`: pairs meeting a set of `a` particles.
pub fn pairs_meeting(a: usize, n_particles: usize) -> f64 {
    let (a, n) = (a as f64, n_particles as f64);
    a * (n - a) + 0.5 * a * (a - 1.0)
}

/// `P^N(theta)` of any sequence in the class.
pub fn class_probability(class: &CanonicalClass, n_particles: usize, lambda: f64, t: f64) -> f64 {
    let n = class.sequence.len();
    let unit = 2.0 * lambda / (n_particles as f64 - 1.0);
    let rates: Vec<f64> = class.active.iter().map(|&a| unit * pairs_meeting(a, n_particles)).collect();
    libm::pow(unit, n as f64) * simplex_exponential_integral(&rates, t)
}

/// Limit `N -> infinity` of `(N - 1)^{n}`-scaled class weight times `P^N`
/// for an essential class: `(2 lambda)^n` times the simplex integral with
/// `r_k = 2 lambda a_k`.
pub fn limit_class_probability(class: &CanonicalClass, lambda: f64, t: f64) -> f64 {
    let n = class.sequence.len();
    let rates: Vec<f64> = class.active.iter().map(|&a| 2.0 * lambda * a as f64).collect();
    libm::pow(2.0 * lambda, n as f64) * simplex_exponential_integral(&rates, t)
}

/// Abstract model: states `0..S`, kernel `U` indexed by `s * S + s'`, rate
/// `lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairModel {
    states: usize,
    kernel: DenseMatrix,
    pub lambda: f64,
}

impl PairModel {
    pub fn new(states: usize, kernel: DenseMatrix, lambda: f64) -> Result<Self, OracleError> {
        if states == 0 || kernel.dim() != states * states {
            return Err(OracleError::KernelShape);
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(OracleError::Time);
        }
        let s = states;
        for row in 0..s * s {
            let r = kernel.row(row);
            if r.iter().any(|x| *x < 0.0) || libm::fabs(r.iter().sum::<f64>() - 1.0) > 1e-12 {
                return Err(OracleError::NotStochastic(row));
            }
        }
        let swap = |i: usize| (i % s) * s + i / s;
        for i in 0..s * s {
            for j in 0..s * s {
                if libm::fabs(kernel[(i, j)] - kernel[(swap(i), swap(j))]) > 1e-12 {
                    return Err(OracleError::NotSymmetric);
                }
            }
        }
        Ok(Self { states, kernel, lambda })
    }

    /// Two-state voter rule: the pair adopts the state of either member with
    /// probability 1/2.
    pub fn voter(lambda: f64) -> Self {
        let mut k = DenseMatrix::zeros(4);
        for s in 0..2 {
            for t in 0..2 {
                let row = s * 2 + t;
                k[(row, s * 2 + s)] += 0.5;
                k[(row, t * 2 + t)] += 0.5;
            }
        }
        Self::new(2, k, lambda).expect("voter kernel is valid")
    }

    /// A random swap-symmetric kernel, for tests and demonstrations.
    pub fn random<R: Rng + ?Sized>(states: usize, lambda: f64, rng: &mut R) -> Self {
        let s = states;
        let swap = |i: usize| (i % s) * s + i / s;
        let mut k = DenseMatrix::zeros(s * s);
        for i in 0..s * s {
            if swap(i) < i {
                continue;
            }
            let raw: Vec<f64> = (0..s * s).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            for j in 0..s * s {
                k[(i, j)] = raw[j] / total;
            }
            if swap(i) != i {
                for j in 0..s * s {
                    k[(swap(i), swap(j))] = raw[j] / total;
                }
            } else {
                // symmetrize the row of a diagonal state in its target
                let row: Vec<f64> = (0..s * s).map(|j| 0.5 * (k[(i, j)] + k[(i, swap(j))])).collect();
                for j in 0..s * s {
                    k[(i, j)] = row[j];
                }
            }
        }
        Self::new(s, k, lambda).expect("constructed kernel is valid")
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn kernel(&self) -> &DenseMatrix {
        &self.kernel
    }

    fn check_initial(&self, mu0: &[f64]) -> Result<(), OracleError> {
        if mu0.len() != self.states || mu0.iter().any(|x| *x < 0.0) || libm::fabs(mu0.iter().sum::<f64>() - 1.0) > 1e-12
        {
            return Err(OracleError::InitialMeasure);
        }
        Ok(())
    }

    /// Applies `U(a, b)` to a measure on `S^l` (particle `i` is digit `i`
    /// in base `S`).
    pub fn apply_pair(&self, measure: &[f64], particles: usize, a: usize, b: usize) -> Vec<f64> {
        let s = self.states;
        let (pa, pb) = (s.pow(a as u32), s.pow(b as u32));
        let mut out = vec![0.0; measure.len()];
        debug_assert_eq!(measure.len(), s.pow(particles as u32));
        for (idx, &w) in measure.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (sa, sb) = (idx / pa % s, idx / pb % s);
            let base = idx - sa * pa - sb * pb;
            let row = self.kernel.row(sa * s + sb);
            for (target, &k) in row.iter().enumerate() {
                if k != 0.0 {
                    out[base + (target / s) * pa + (target % s) * pb] += w * k;
                }
            }
        }
        out
    }

    /// `B_0 U(theta) (mu0 x ... x mu0)` for a canonically labelled sequence
    /// on `particles` particles.
    pub fn push_forward(&self, theta: &InteractionSequence, particles: usize, mu0: &[f64]) -> Vec<f64> {
        let mut measure = product_measure(mu0, particles);
        for p in &theta.pairs {
            measure = self.apply_pair(&measure, particles, p.lo as usize, p.hi as usize);
        }
        marginal(&measure, self.states, particles, 0)
    }

    /// Draws the pair outcome for states `(a, b)`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, a: usize, b: usize, rng: &mut R) -> (usize, usize) {
        let s = self.states;
        let row = self.kernel.row(a * s + b);
        let mut u = rng.random::<f64>();
        for (target, &k) in row.iter().enumerate() {
            if u < k {
                return (target / s, target % s);
            }
            u -= k;
        }
        let last = row.iter().rposition(|&k| k > 0.0).unwrap_or(0);
        (last / s, last % s)
    }
}

/// `mu0^{x l}` as a vector on `S^l`.
pub fn product_measure(mu0: &[f64], particles: usize) -> Vec<f64> {
    let s = mu0.len();
    let size = s.pow(particles as u32);
    (0..size)
        .map(|mut idx| {
            let mut w = 1.0;
            for _ in 0..particles {
                w *= mu0[idx % s];
                idx /= s;
            }
            w
        })
        .collect()
}

/// One-particle marginal of a measure on `S^l`.
pub fn marginal(measure: &[f64], states: usize, _particles: usize, v: usize) -> Vec<f64> {
    let p = states.pow(v as u32);
    let mut out = vec![0.0; states];
    for (idx, &w) in measure.iter().enumerate() {
        out[idx / p % states] += w;
    }
    out
}

/// Two-particle marginal of particles `v, w` as an `S x S` table,
/// `out[s * S + s']`.
pub fn pair_marginal(measure: &[f64], states: usize, v: usize, w: usize) -> Vec<f64> {
    let (pv, pw) = (states.pow(v as u32), states.pow(w as u32));
    let mut out = vec![0.0; states * states];
    for (idx, &x) in measure.iter().enumerate() {
        out[(idx / pv % states) * states + idx / pw % states] += x;
    }
    out
}

/// Finite `N` or the `N -> infinity` limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesTarget {
    Finite(usize),
    Limit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesResult {
    /// Truncated series for the one-particle law.
    pub marginal: Vec<f64>,
    /// `sum P^N(theta)` over histories of each length `0..=n_max`.
    pub order_mass: Vec<f64>,
    /// `1 - sum order_mass`: probability of a longer history, equal to the
    /// total mass missing from the truncated series.
    pub omitted_mass: f64,
    /// `sum_{n > n_max} (2 lambda t)^n / n!`.
    pub tail_bound: f64,
}

/// `sum_{n > n_max} x^n / n!` evaluated to machine precision.
pub fn poisson_tail_sum(x: f64, n_max: usize) -> f64 {
    let mut term = 1.0;
    for k in 1..=n_max {
        term *= x / k as f64;
    }
    let mut sum = 0.0;
    let mut k = n_max;
    loop {
        k += 1;
        term *= x / k as f64;
        sum += term;
        if term < 1e-300 || term < sum * 1e-17 {
            return sum;
        }
    }
}

/// Truncated resummation series for the one-particle law at time `t`.
///
/// Fails if `tolerance` is given and the analytic tail exceeds it.
pub fn series_marginal(
    model: &PairModel,
    mu0: &[f64],
    t: f64,
    n_max: usize,
    target: SeriesTarget,
    tolerance: Option<f64>,
) -> Result<SeriesResult, OracleError> {
    model.check_initial(mu0)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(OracleError::Time);
    }
    let tail_bound = poisson_tail_sum(2.0 * model.lambda * t, n_max);
    if let Some(tol) = tolerance {
        if tail_bound > tol {
            return Err(OracleError::Tail { tail: tail_bound, tolerance: tol });
        }
    }
    let mut marginal_acc = vec![0.0; model.states];
    let mut order_mass = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let classes = match target {
            SeriesTarget::Finite(big) => {
                if big < 2 {
                    return Err(OracleError::Degenerate { n, particles: big });
                }
                canonical_classes(n, big, false)
            }
            SeriesTarget::Limit => canonical_classes(n, n + 1, true),
        };
        let mut mass = 0.0;
        for class in &classes {
            let weight = match target {
                SeriesTarget::Finite(big) => {
                    class.multiplicity(big) as f64 * class_probability(class, big, model.lambda, t)
                }
                SeriesTarget::Limit => limit_class_probability(class, model.lambda, t),
            };
            if weight == 0.0 {
                continue;
            }
            mass += weight;
            let pushed = model.push_forward(&class.sequence, class.particles, mu0);
            for (acc, p) in marginal_acc.iter_mut().zip(&pushed) {
                *acc += weight * p;
            }
        }
        order_mass.push(mass);
    }
    let omitted_mass = 1.0 - order_mass.iter().sum::<f64>();
    Ok(SeriesResult { marginal: marginal_acc, order_mass, omitted_mass, tail_bound })
}

/// Limit series over `[0, t]` in `ceil(t / tau0)` equal steps, restarting
/// each step from the previous one-particle law.
pub fn series_marginal_semigroup(
    model: &PairModel,
    mu0: &[f64],
    t: f64,
    tau0: f64,
    n_max: usize,
) -> Result<Vec<f64>, OracleError> {
    if !(tau0 > 0.0) {
        return Err(OracleError::Time);
    }
    let steps = libm::ceil(t / tau0 - 1e-12).max(1.0) as usize;
    let dt = t / steps as f64;
    let mut mu = mu0.to_vec();
    for _ in 0..steps {
        let r = series_marginal(model, &mu, dt, n_max, SeriesTarget::Limit, None)?;
        // restore unit mass lost to truncation before restarting
        let total: f64 = r.marginal.iter().sum();
        mu = r.marginal.iter().map(|x| x / total).collect();
    }
    Ok(mu)
}

/// Exact law of the `N`-particle pair model via the dense generator on `S^N`.
#[derive(Clone, Debug)]
pub struct ExactSystem {
    states: usize,
    particles: usize,
    generator: DenseMatrix,
}

impl ExactSystem {
    /// Largest `|S|^N` accepted.
    pub const MAX_STATES: usize = 4096;

    pub fn new(model: &PairModel, particles: usize) -> Result<Self, OracleError> {
        let s = model.states;
        let size = s.checked_pow(particles as u32).unwrap_or(usize::MAX);
        if size > Self::MAX_STATES {
            return Err(OracleError::TooLarge(size));
        }
        if particles < 2 {
            return Err(OracleError::Degenerate { n: 1, particles });
        }
        let rate = 2.0 * model.lambda / (particles as f64 - 1.0);
        let mut q = DenseMatrix::zeros(size);
        for a in 0..particles {
            for b in a + 1..particles {
                let (pa, pb) = (s.pow(a as u32), s.pow(b as u32));
                for idx in 0..size {
                    let (sa, sb) = (idx / pa % s, idx / pb % s);
                    let base = idx - sa * pa - sb * pb;
                    for (target, &k) in model.kernel.row(sa * s + sb).iter().enumerate() {
                        if k != 0.0 {
                            q[(idx, base + (target / s) * pa + (target % s) * pb)] += rate * k;
                        }
                    }
                    q[(idx, idx)] -= rate;
                }
            }
        }
        Ok(Self { states: s, particles, generator: q })
    }

    pub fn generator(&self) -> &DenseMatrix {
        &self.generator
    }

    /// Law on `S^N` at time `t` from `mu0^{x N}`.
    pub fn evolve(&self, mu0: &[f64], t: f64) -> Vec<f64> {
        let mut qt = self.generator.clone();
        qt.scale(t);
        qt.expm().left_apply(&product_measure(mu0, self.particles))
    }

    pub fn one_particle(&self, mu0: &[f64], t: f64) -> Vec<f64> {
        marginal(&self.evolve(mu0, t), self.states, self.particles, 0)
    }

    /// `max_{s, s'} |mu_12(s, s') - mu_1(s) mu_2(s')|` at time `t`.
    pub fn correlation(&self, mu0: &[f64], t: f64) -> f64 {
        let law = self.evolve(mu0, t);
        let m1 = marginal(&law, self.states, self.particles, 0);
        let m2 = marginal(&law, self.states, self.particles, 1);
        let joint = pair_marginal(&law, self.states, 0, 1);
        let s = self.states;
        (0..s * s).map(|i| libm::fabs(joint[i] - m1[i / s] * m2[i % s])).fold(0.0, f64::max)
    }
}

/// One trajectory of the `N`-particle pair model from i.i.d. `mu0` states
/// up to time `t`. Returns final states and, if requested, the pair log.
pub fn simulate_pair_model(
    model: &PairModel,
    mu0: &[f64],
    particles: usize,
    t: f64,
    rng: &mut SimRng,
    log: Option<&mut Vec<Pair>>,
) -> Result<Vec<usize>, OracleError> {
    model.check_initial(mu0)?;
    if particles < 2 {
        return Err(OracleError::Degenerate { n: 1, particles });
    }
    let mut states: Vec<usize> = (0..particles)
        .map(|_| {
            let mut u = rng.random::<f64>();
            for (s, &p) in mu0.iter().enumerate() {
                if u < p {
                    return s;
                }
                u -= p;
            }
            mu0.len() - 1
        })
        .collect();
    let total_rate = particles as f64 * model.lambda;
    if total_rate == 0.0 {
        return Ok(states);
    }
    let clock = Exp::new(total_rate).map_err(|_| OracleError::Time)?;
    let mut log = log;
    let mut now = 0.0;
    loop {
        now += clock.sample(rng);
        if now > t {
            break;
        }
        let a = rng.random_range(0..particles);
        let mut b = rng.random_range(0..particles - 1);
        if b >= a {
            b += 1;
        }
        let (x, y) = model.sample_pair(states[a], states[b], rng);
        states[a] = x;
        states[b] = y;
        if let Some(l) = log.as_deref_mut() {
            l.push(Pair::new(a as u32, b as u32).expect("distinct"));
        }
    }
    Ok(states)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosEstimate {
    pub particles: usize,
    pub replicas: usize,
    /// `mu_12(s, s') - mu_1(s) mu_2(s')` estimates, row-major in `(s, s')`.
    pub covariance: Vec<f64>,
    /// Jackknife standard errors of `covariance`.
    pub stderr: Vec<f64>,
    /// Entry with the largest absolute covariance.
    pub max_index: usize,
}

impl ChaosEstimate {
    pub fn max_abs(&self) -> f64 {
        libm::fabs(self.covariance[self.max_index])
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr[self.max_index]
    }
}

/// Two-particle correlation of an exchangeable ensemble from replica state
/// counts.
///
/// Within a replica, `(K_s K_s' - [s = s'] K_s) / (N (N - 1))` is unbiased for
/// `mu_12(s, s')`; the product `mu_1(s) mu_2(s')` uses distinct replicas
/// only, so the estimate is unbiased too.
pub fn chaos_statistic(counts: &[Vec<u64>], particles: usize) -> Result<ChaosEstimate, OracleError> {
    let r = counts.len();
    if r < 10 {
        return Err(OracleError::Replicas { needed: 10, got: r });
    }
    let s = counts[0].len();
    let n = particles as f64;
    let mut covariance = vec![0.0; s * s];
    let mut stderr = vec![0.0; s * s];
    for a in 0..s {
        for b in 0..s {
            let joint: Vec<f64> = counts
                .iter()
                .map(|k| {
                    let (ka, kb) = (k[a] as f64, k[b] as f64);
                    (ka * kb - if a == b { ka } else { 0.0 }) / (n * (n - 1.0))
                })
                .collect();
            let ya: Vec<f64> = counts.iter().map(|k| k[a] as f64 / n).collect();
            let yb: Vec<f64> = counts.iter().map(|k| k[b] as f64 / n).collect();
            let sj: f64 = joint.iter().sum();
            let sa: f64 = ya.iter().sum();
            let sb: f64 = yb.iter().sum();
            let sab: f64 = ya.iter().zip(&yb).map(|(x, y)| x * y).sum();
            let est = |sj: f64, sa: f64, sb: f64, sab: f64, m: f64| sj / m - (sa * sb - sab) / (m * (m - 1.0));
            let rf = r as f64;
            let full = est(sj, sa, sb, sab, rf);
            let loo: Vec<f64> =
                (0..r).map(|i| est(sj - joint[i], sa - ya[i], sb - yb[i], sab - ya[i] * yb[i], rf - 1.0)).collect();
            let mean_loo = loo.iter().sum::<f64>() / rf;
            let var = (rf - 1.0) / rf * loo.iter().map(|x| (x - mean_loo) * (x - mean_loo)).sum::<f64>();
            covariance[a * s + b] = full;
            stderr[a * s + b] = libm::sqrt(var);
        }
    }
    let max_index =
        (0..s * s).max_by(|&i, &j| libm::fabs(covariance[i]).total_cmp(&libm::fabs(covariance[j]))).unwrap_or(0);
    Ok(ChaosEstimate { particles, replicas: r, covariance, stderr, max_index })
}

/// State counts of `replicas` independent runs, replica `i` seeded with
/// stream `i` of `seed`.
pub fn replica_counts(
    model: &PairModel,
    mu0: &[f64],
    particles: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<u64>>, OracleError> {
    (0..replicas)
        .map(|i| {
            let mut rng = crate::seeded_rng(seed, i as u64);
            let states = simulate_pair_model(model, mu0, particles, t, &mut rng, None)?;
            let mut k = vec![0u64; model.states];
            for s in states {
                k[s] += 1;
            }
            Ok(k)
        })
        .collect()
}

/// Slope of `ln |c|` against `ln N`.
pub fn decay_exponent(
    particles: &[usize],
    correlations: &[f64],
) -> Result<crate::stats::LinearFit, crate::stats::StatsError> {
    let x: Vec<f64> = particles.iter().map(|&n| libm::log(n as f64)).collect();
    let y: Vec<f64> = correlations.iter().map(|&c| libm::log(libm::fabs(c))).collect();
    crate::stats::linear_fit(&x, &y)
}
