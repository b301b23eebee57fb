//! Ideal-mixture thermodynamics on the manifold of product Gibbs states.
//!
//! A point is fixed by the inverse temperature `beta` and the concentrations
//! `c_j`. With `lambda_j = beta^{-d_j/2} B_j`,
//!
//! ```text
//! c_j = lambda_j exp(beta (mu_j - K_j)),   mu_{j,0} = -ln(lambda_j) / beta
//! ```
//!
//! and every potential follows in closed form. Empty species contribute zero
//! to all extensive quantities (`0 ln 0 = 0`), but their chemical potential
//! is undefined and requesting it is an error.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::linalg::DenseMatrix;
use crate::math::{xlogx, xlogy_ratio};
use crate::spec::SpeciesSpec;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ThermoError {
    #[error("beta must be positive and finite, got {0}")]
    Beta(f64),
    #[error("species {0} has a nonpositive mass")]
    Mass(usize),
    #[error("species {0} has zero concentration, its chemical potential is undefined")]
    ZeroConcentration(usize),
    #[error("negative or non-finite concentration for species {0}")]
    Concentration(usize),
    #[error("operation needs exactly two species, got {0}")]
    NotTwoSpecies(usize),
    #[error("endpoints are at different temperatures")]
    MismatchedBeta,
    #[error("distributions have different lengths or p charges a state with zero stationary weight")]
    Support,
    #[error("mean energy {0} is outside the range of the levels")]
    Infeasible(f64),
    #[error("length mismatch")]
    Length,
}

/// `(beta, c_1, ..., c_J)` together with the species constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermoPoint {
    pub beta: f64,
    pub concentrations: Vec<f64>,
    pub species: Vec<SpeciesSpec>,
}

impl ThermoPoint {
    pub fn new(beta: f64, concentrations: Vec<f64>, species: Vec<SpeciesSpec>) -> Result<Self, ThermoError> {
        let point = Self { beta, concentrations, species };
        point.check()?;
        Ok(point)
    }

    fn check(&self) -> Result<(), ThermoError> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(ThermoError::Beta(self.beta));
        }
        if self.concentrations.len() != self.species.len() {
            return Err(ThermoError::Length);
        }
        if let Some(j) = self.concentrations.iter().position(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(ThermoError::Concentration(j));
        }
        Ok(())
    }

    pub fn total_concentration(&self) -> f64 {
        self.concentrations.iter().sum()
    }
}

/// Momentum-space normalization `B_j` and `lambda_j = beta^{-d_j/2} B_j`.
///
/// Each internal quadratic degree of freedom contributes `(2 pi / m_{j,k})^{1/2}`;
/// a species without listed internal masses uses unit factors.
pub fn lambda_b(species: &SpeciesSpec, beta: f64) -> Result<(f64, f64), ThermoError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(ThermoError::Beta(beta));
    }
    let idx = species.type_id.saturating_sub(1) as usize;
    if !(species.mass > 0.0) {
        return Err(ThermoError::Mass(idx));
    }
    let mut b = libm::pow(2.0 * PI / species.mass, 1.5);
    if let Some(internal) = &species.internal_masses {
        for &m in internal {
            if !(m > 0.0) {
                return Err(ThermoError::Mass(idx));
            }
            b *= libm::sqrt(2.0 * PI / m);
        }
    }
    let lambda = libm::pow(beta, -0.5 * species.dof as f64) * b;
    Ok((b, lambda))
}

fn lambdas(species: &[SpeciesSpec], beta: f64) -> Result<Vec<f64>, ThermoError> {
    species.iter().map(|s| lambda_b(s, beta).map(|(_, l)| l)).collect()
}

/// Standard chemical potentials `mu_{j,0} = -ln(lambda_j) / beta`.
pub fn standard_potential(species: &[SpeciesSpec], beta: f64) -> Result<Vec<f64>, ThermoError> {
    Ok(lambdas(species, beta)?.into_iter().map(|l| -libm::log(l) / beta).collect())
}

/// Chemical potentials `mu_j = mu_{j,0} + ln(c_j) / beta + K_j`.
pub fn chemical_potential(point: &ThermoPoint) -> Result<Vec<f64>, ThermoError> {
    point.check()?;
    let mu0 = standard_potential(&point.species, point.beta)?;
    point
        .concentrations
        .iter()
        .zip(&mu0)
        .zip(&point.species)
        .enumerate()
        .map(|(j, ((&c, &m0), s))| {
            if c == 0.0 {
                Err(ThermoError::ZeroConcentration(j))
            } else {
                Ok(m0 + libm::log(c) / point.beta + s.chem_energy)
            }
        })
        .collect()
}

/// Inverse of [`chemical_potential`]: `c_j = lambda_j exp(beta (mu_j - K_j))`.
pub fn concentrations_from_potentials(species: &[SpeciesSpec], beta: f64, mu: &[f64]) -> Result<Vec<f64>, ThermoError> {
    if mu.len() != species.len() {
        return Err(ThermoError::Length);
    }
    Ok(lambdas(species, beta)?
        .into_iter()
        .zip(mu)
        .zip(species)
        .map(|((l, &m), s)| l * libm::exp(beta * (m - s.chem_energy)))
        .collect())
}

/// Thermodynamic potentials of a point in a volume `Lambda`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Potentials {
    /// Pressure.
    pub p: f64,
    /// Internal energy.
    pub u: f64,
    /// Enthalpy.
    pub h: f64,
    /// Entropy.
    pub s: f64,
    /// Gibbs free energy.
    pub g: f64,
    /// Helmholtz free energy.
    pub f: f64,
    /// Grand potential.
    pub omega: f64,
    /// Gibbs free energy per unit volume.
    pub g_density: f64,
}

impl Potentials {
    /// Largest violation of `G = H - S/beta`, `F = U - S/beta`, `H = U + P V`
    /// and `G = F + P V`, relative to the magnitude of the terms.
    pub fn identity_residual(&self, beta: f64, volume: f64) -> f64 {
        let ts = self.s / beta;
        let pv = self.p * volume;
        let rel = |a: f64, b: f64, scale: f64| libm::fabs(a - b) / scale.max(1.0);
        [
            rel(self.g, self.h - ts, libm::fabs(self.h) + libm::fabs(ts)),
            rel(self.f, self.u - ts, libm::fabs(self.u) + libm::fabs(ts)),
            rel(self.h, self.u + pv, libm::fabs(self.u) + libm::fabs(pv)),
            rel(self.g, self.f + pv, libm::fabs(self.f) + libm::fabs(pv)),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `sum_j c_j mu_j` with the `0 ln 0 = 0` convention.
fn gibbs_density(point: &ThermoPoint, mu0: &[f64]) -> f64 {
    let beta = point.beta;
    point
        .concentrations
        .iter()
        .zip(mu0)
        .zip(&point.species)
        .map(|((&c, &m0), s)| xlogx(c) / beta + c * (m0 + s.chem_energy))
        .sum()
}

pub fn potentials(point: &ThermoPoint, volume: f64) -> Result<Potentials, ThermoError> {
    point.check()?;
    let beta = point.beta;
    let lam = lambdas(&point.species, beta)?;
    let mu0: Vec<f64> = lam.iter().map(|l| -libm::log(*l) / beta).collect();
    let mut p = 0.0;
    let mut u = 0.0;
    let mut h = 0.0;
    let mut s = 0.0;
    let mut omega = 0.0;
    for (j, sp) in point.species.iter().enumerate() {
        let c = point.concentrations[j];
        let n = c * volume;
        let half_d = 0.5 * sp.dof as f64;
        p += c / beta;
        u += n * (half_d / beta + sp.chem_energy);
        h += n * (half_d + 1.0 + beta * sp.chem_energy) / beta;
        // n (beta mu_j) = volume (c ln c + beta c (mu_{j,0} + K_j))
        let n_beta_mu = volume * (xlogx(c) + beta * c * (mu0[j] + sp.chem_energy));
        s += n * (half_d + 1.0 + beta * sp.chem_energy) - n_beta_mu;
        // lambda_j exp(beta (mu_j - K_j)) = c_j
        omega -= volume * c / beta;
    }
    let g_density = gibbs_density(point, &mu0);
    let g = g_density * volume;
    Ok(Potentials { p, u, h, s, g, f: u - s / beta, omega, g_density })
}

/// Affinity data of a two-species point.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Affinity {
    /// `A = mu_2 - mu_1`.
    pub a: f64,
    /// `Delta G_0 = mu_{1,0} - mu_{2,0} + K_1 - K_2`.
    pub delta_g0: f64,
    /// Equilibrium constant `c_{1,e} / c_{2,e} = exp(-beta Delta G_0)`.
    pub kappa: f64,
}

fn delta_g0(species: &[SpeciesSpec], beta: f64) -> Result<f64, ThermoError> {
    if species.len() != 2 {
        return Err(ThermoError::NotTwoSpecies(species.len()));
    }
    let mu0 = standard_potential(species, beta)?;
    Ok(mu0[0] - mu0[1] + species[0].chem_energy - species[1].chem_energy)
}

/// Equilibrium constant of `1 <-> 2` at `beta`: `(lambda_1 / lambda_2) exp(beta (K_2 - K_1))`.
pub fn equilibrium_constant(species: &[SpeciesSpec], beta: f64) -> Result<f64, ThermoError> {
    Ok(libm::exp(-beta * delta_g0(species, beta)?))
}

pub fn affinity_and_kappa(point: &ThermoPoint) -> Result<Affinity, ThermoError> {
    let dg0 = delta_g0(&point.species, point.beta)?;
    let mu = chemical_potential(point)?;
    Ok(Affinity { a: mu[1] - mu[0], delta_g0: dg0, kappa: libm::exp(-point.beta * dg0) })
}

/// Inverts `A = -Delta G_0 - ln(c_1 / (c - c_1)) / beta` at fixed `c`.
pub fn c1_of_affinity(a: f64, c: f64, delta_g0: f64, beta: f64) -> f64 {
    c / (1.0 + libm::exp(beta * (a + delta_g0)))
}

/// Equilibrium concentrations at total `c`: all chemical potentials equal,
/// so `c_{j,e}` is proportional to `lambda_j exp(-beta K_j)`.
pub fn equilibrium_concentrations(species: &[SpeciesSpec], beta: f64, c: f64) -> Result<Vec<f64>, ThermoError> {
    let lam = lambdas(species, beta)?;
    let kmin = species.iter().map(|s| s.chem_energy).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = lam.iter().zip(species).map(|(l, s)| l * libm::exp(-beta * (s.chem_energy - kmin))).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| c * x / total).collect())
}

/// Translational mass of species 2 for which the equilibrium constant of
/// `1 <-> 2` at `beta` equals `kappa`, other constants of `second` kept.
pub fn mass_for_equilibrium_constant(
    first: &SpeciesSpec,
    second: &SpeciesSpec,
    beta: f64,
    kappa: f64,
) -> Result<f64, ThermoError> {
    let (_, lambda1) = lambda_b(first, beta)?;
    let lambda2 = lambda1 * libm::exp(beta * (second.chem_energy - first.chem_energy)) / kappa;
    // lambda_2 = beta^{-d/2} (2 pi / m)^{3/2} * internal
    let unit = SpeciesSpec { mass: 2.0 * PI, ..second.clone() };
    let (_, lambda_unit) = lambda_b(&unit, beta)?;
    Ok(2.0 * PI * libm::pow(lambda_unit / lambda2, 2.0 / 3.0))
}

/// Relative entropy `sum p_j ln(p_j / pi_j)`.
pub fn markov_entropy(p: &[f64], pi: &[f64]) -> Result<f64, ThermoError> {
    if p.len() != pi.len() {
        return Err(ThermoError::Support);
    }
    let mut s = 0.0;
    for (&pj, &qj) in p.iter().zip(pi) {
        if pj > 0.0 && !(qj > 0.0) {
            return Err(ThermoError::Support);
        }
        s += xlogy_ratio(pj, qj);
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsIdentityReport {
    /// `g(t)` per step.
    pub g: Vec<f64>,
    /// `S_M(t)` per step.
    pub s_m: Vec<f64>,
    /// `max_t |g(t) - mu c - S_M(t) / (beta C)|`.
    pub max_residual: f64,
    pub g_nonincreasing: bool,
    pub s_m_nonincreasing: bool,
}

/// Checks `g(t) = mu c + S_M(t) / (beta C)` along a trajectory of
/// concentrations with constant total `c`, `C = 1/c`, `pi = c_e / c`, and
/// `mu` the common chemical potential at the fixed point `c_e` of the
/// dynamics.
///
/// Monotonicity allows a step to increase by at most `1e-14` times the
/// magnitude of the quantity, which is roundoff in evaluating it. For `S_M`
/// the magnitude is at least 1, the mass of `p`, since it sits at roundoff
/// level once the chain has relaxed.
pub fn gibbs_identity_check(
    species: &[SpeciesSpec],
    beta: f64,
    fixed_point: &[f64],
    trajectory: &[Vec<f64>],
) -> Result<GibbsIdentityReport, ThermoError> {
    let c: f64 = fixed_point.iter().sum();
    let eq = ThermoPoint::new(beta, fixed_point.to_vec(), species.to_vec())?;
    let mu = chemical_potential(&eq)?[0];
    let pi: Vec<f64> = fixed_point.iter().map(|x| x / c).collect();
    let mu0 = standard_potential(species, beta)?;
    let mut g = Vec::with_capacity(trajectory.len());
    let mut s_m = Vec::with_capacity(trajectory.len());
    let mut max_residual: f64 = 0.0;
    for conc in trajectory {
        let point = ThermoPoint::new(beta, conc.clone(), species.to_vec())?;
        let gt = gibbs_density(&point, &mu0);
        let p: Vec<f64> = conc.iter().map(|x| x / c).collect();
        let st = markov_entropy(&p, &pi)?;
        max_residual = max_residual.max(libm::fabs(gt - mu * c - c * st / beta));
        g.push(gt);
        s_m.push(st);
    }
    let nonincreasing =
        |v: &[f64], floor: f64| v.windows(2).all(|w| w[1] <= w[0] + 1e-14 * libm::fabs(w[0]).max(floor));
    Ok(GibbsIdentityReport {
        g_nonincreasing: nonincreasing(&g, 1e-300),
        s_m_nonincreasing: nonincreasing(&s_m, 1.0),
        g,
        s_m,
        max_residual,
    })
}

/// `H(b) - H(a)` at common `beta`.
pub fn hess_delta_h(a: &ThermoPoint, b: &ThermoPoint, volume: f64) -> Result<f64, ThermoError> {
    if a.beta != b.beta {
        return Err(ThermoError::MismatchedBeta);
    }
    Ok(potentials(b, volume)?.h - potentials(a, volume)?.h)
}

/// Boltzmann weights `exp(-beta e_k) / Z`.
pub fn gibbs_weights(levels: &[f64], beta: f64) -> Vec<f64> {
    let emin = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = levels.iter().map(|e| libm::exp(-beta * (e - emin))).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&x| xlogx(x)).sum::<f64>()
}

/// Maximizes `-sum p_k ln p_k` subject to `sum p_k = 1`, `sum e_k p_k = u`.
///
/// Infeasible-start Newton on the KKT system; the barrier of the entropy
/// keeps iterates interior as long as steps are damped to stay positive.
pub fn maximize_entropy(levels: &[f64], u: f64) -> Result<Vec<f64>, ThermoError> {
    let n = levels.len();
    let emin = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let emax = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n == 0 || !(u >= emin && u <= emax) {
        return Err(ThermoError::Infeasible(u));
    }
    let span = emax - emin;
    if span == 0.0 || u == emin || u == emax {
        // Degenerate level set: uniform over the attainable levels.
        let on: Vec<bool> = levels.iter().map(|&e| span == 0.0 || e == u).collect();
        let k = on.iter().filter(|&&b| b).count() as f64;
        return Ok(on.into_iter().map(|b| if b { 1.0 / k } else { 0.0 }).collect());
    }
    // Work with shifted, scaled levels so the constraint rows are O(1).
    let e: Vec<f64> = levels.iter().map(|x| (x - emin) / span).collect();
    let target = (u - emin) / span;
    let mut p = alloc::vec![1.0 / n as f64; n];
    let dim = n + 2;
    for _ in 0..200 {
        let r_sum = p.iter().sum::<f64>() - 1.0;
        let r_en = p.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() - target;
        // minimize f = sum p ln p: grad 1 + ln p, Hessian diag(1/p)
        let mut kkt = DenseMatrix::zeros(dim);
        let mut rhs = alloc::vec![0.0; dim];
        for k in 0..n {
            kkt[(k, k)] = 1.0 / p[k];
            kkt[(k, n)] = 1.0;
            kkt[(k, n + 1)] = e[k];
            kkt[(n, k)] = 1.0;
            kkt[(n + 1, k)] = e[k];
            rhs[k] = -(1.0 + libm::log(p[k]));
        }
        rhs[n] = -r_sum;
        rhs[n + 1] = -r_en;
        let step = kkt.solve(&rhs).map_err(|_| ThermoError::Infeasible(u))?;
        let mut t = 1.0;
        while p.iter().zip(&step).any(|(a, d)| a + t * d <= 0.0) {
            t *= 0.5;
        }
        let mut change: f64 = 0.0;
        for k in 0..n {
            let d = t * step[k];
            change = change.max(libm::fabs(d));
            p[k] += d;
        }
        if change < 1e-15 && t == 1.0 {
            break;
        }
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalVerdict {
    pub mean_energy: f64,
    pub maximizer: Vec<f64>,
    pub gibbs: Vec<f64>,
    pub max_abs_error: f64,
    pub entropy: f64,
}

impl VariationalVerdict {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_abs_error <= tol
    }
}

/// Maximizes entropy at the Gibbs mean energy of `(levels, beta)` and
/// compares the maximizer with the Gibbs weights.
pub fn variational_check(levels: &[f64], beta: f64) -> Result<VariationalVerdict, ThermoError> {
    if !beta.is_finite() {
        return Err(ThermoError::Beta(beta));
    }
    let gibbs = gibbs_weights(levels, beta);
    let mean_energy = gibbs.iter().zip(levels).map(|(p, e)| p * e).sum();
    let maximizer = maximize_entropy(levels, mean_energy)?;
    let max_abs_error = maximizer.iter().zip(&gibbs).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
    Ok(VariationalVerdict { entropy: shannon_entropy(&maximizer), mean_energy, maximizer, gibbs, max_abs_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sp(id: u32, mass: f64, k: f64) -> SpeciesSpec {
        SpeciesSpec::simple(id, mass, k)
    }

    #[test]
    fn lambda_normalization_and_power_law() {
        let s = sp(1, 2.0 * PI, 0.0);
        let (b, l) = lambda_b(&s, 1.0).unwrap();
        assert!((b - 1.0).abs() < 1e-15 && (l - 1.0).abs() < 1e-15);
        let (_, l2) = lambda_b(&s, 2.0).unwrap();
        assert!((l2 / l - 2f64.powf(-1.5)).abs() < 1e-15);
        let (b_int, _) =
            lambda_b(&SpeciesSpec { dof: 5, internal_masses: Some(vec![2.0 * PI, PI / 2.0]), ..s.clone() }, 1.0)
                .unwrap();
        assert!((b_int - 2.0).abs() < 1e-14);
        assert!(lambda_b(&s, 0.0).is_err());
    }

    #[test]
    fn unit_concentration_gives_standard_potential() {
        let species = vec![sp(1, 1.3, 0.4)];
        let point = ThermoPoint::new(0.7, vec![1.0], species.clone()).unwrap();
        let mu = chemical_potential(&point).unwrap()[0];
        let mu0 = standard_potential(&species, 0.7).unwrap()[0];
        assert!((mu - (mu0 + 0.4)).abs() < 1e-14);
    }

    #[test]
    fn mu_and_c_round_trip() {
        let species = vec![sp(1, 1.0, 0.0), sp(2, 3.0, 2.0)];
        let point = ThermoPoint::new(1.7, vec![0.3, 0.02], species.clone()).unwrap();
        let mu = chemical_potential(&point).unwrap();
        let c = concentrations_from_potentials(&species, 1.7, &mu).unwrap();
        for (a, b) in c.iter().zip(&point.concentrations) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn shifting_k_shifts_mu() {
        let mut species = vec![sp(1, 1.0, 0.5)];
        let mu_a = chemical_potential(&ThermoPoint::new(1.0, vec![0.4], species.clone()).unwrap()).unwrap()[0];
        species[0].chem_energy += 0.25;
        let mu_b = chemical_potential(&ThermoPoint::new(1.0, vec![0.4], species).unwrap()).unwrap()[0];
        assert!((mu_b - mu_a - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_concentration_is_flagged() {
        let point = ThermoPoint::new(1.0, vec![0.0, 1.0], vec![sp(1, 1.0, 0.0), sp(2, 1.0, 0.0)]).unwrap();
        assert_eq!(chemical_potential(&point), Err(ThermoError::ZeroConcentration(0)));
        // extensive quantities are still defined
        assert!(potentials(&point, 1.0).unwrap().identity_residual(1.0, 1.0) < 1e-14);
    }

    #[test]
    fn enthalpy_and_pressure_arithmetic() {
        let point = ThermoPoint::new(1.0, vec![1.0], vec![sp(1, 1.0, 0.0)]).unwrap();
        assert!((potentials(&point, 1.0).unwrap().h - 2.5).abs() < 1e-15);
        let two = ThermoPoint::new(1.0, vec![1.0, 2.0], vec![sp(1, 1.0, 0.0), sp(2, 2.0, 1.0)]).unwrap();
        let pot = potentials(&two, 1.0).unwrap();
        assert!((pot.p - 3.0).abs() < 1e-15);
        assert!((pot.omega + pot.p).abs() < 1e-15);
    }

    #[test]
    fn kappa_of_identical_species_is_one() {
        let species = vec![sp(1, 1.0, 0.3), sp(2, 1.0, 0.3)];
        let point = ThermoPoint::new(2.0, vec![0.5, 0.5], species).unwrap();
        let aff = affinity_and_kappa(&point).unwrap();
        assert_eq!(aff.delta_g0, 0.0);
        assert_eq!(aff.kappa, 1.0);
        assert!(aff.a.abs() < 1e-15);
    }

    #[test]
    fn affinity_vanishes_at_kappa_and_inverts() {
        let species = vec![sp(1, 1.0, 0.0), sp(2, 0.6, 1.0)];
        let beta = 1.3;
        let kappa = equilibrium_constant(&species, beta).unwrap();
        let c = 2.0;
        let c1e = c * kappa / (1.0 + kappa);
        let eq = ThermoPoint::new(beta, vec![c1e, c - c1e], species.clone()).unwrap();
        assert!(affinity_and_kappa(&eq).unwrap().a.abs() < 1e-13);
        let off = ThermoPoint::new(beta, vec![0.4, c - 0.4], species).unwrap();
        let aff = affinity_and_kappa(&off).unwrap();
        assert!((c1_of_affinity(aff.a, c, aff.delta_g0, beta) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn mass_calibration_hits_requested_kappa() {
        let first = sp(1, 1.0, 0.0);
        let mut second = sp(2, 1.0, 1.0);
        second.mass = mass_for_equilibrium_constant(&first, &second, 1.0, 0.64).unwrap();
        let kappa = equilibrium_constant(&[first, second], 1.0).unwrap();
        assert!((kappa - 0.64).abs() < 1e-13);
    }

    #[test]
    fn markov_entropy_basics() {
        assert_eq!(markov_entropy(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(markov_entropy(&[0.9, 0.1], &[0.3, 0.7]).unwrap() > 0.0);
        assert!(markov_entropy(&[0.5, 0.5], &[1.0, 0.0]).is_err());
        assert_eq!(markov_entropy(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), core::f64::consts::LN_2);
    }

    #[test]
    fn hess_rejects_mixed_beta_and_vanishes_on_equal_points() {
        let species = vec![sp(1, 1.0, 0.0), sp(2, 1.0, 1.0)];
        let a = ThermoPoint::new(1.0, vec![0.2, 0.8], species.clone()).unwrap();
        assert_eq!(hess_delta_h(&a, &a, 3.0).unwrap(), 0.0);
        let b = ThermoPoint::new(2.0, vec![0.2, 0.8], species).unwrap();
        assert_eq!(hess_delta_h(&a, &b, 1.0), Err(ThermoError::MismatchedBeta));
    }

    #[test]
    fn two_level_midpoint_is_uniform() {
        let p = maximize_entropy(&[0.0, 1.0], 0.5).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14);
        assert!(maximize_entropy(&[0.0, 1.0], 1.5).is_err());
        assert_eq!(maximize_entropy(&[0.0, 1.0, 1.0], 1.0).unwrap(), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn variational_three_levels() {
        let v = variational_check(&[0.0, 1.0, 2.0], 1.0).unwrap();
        assert!(v.passes(1e-8), "{v:?}");
    }
}
