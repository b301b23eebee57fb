use kinchem_core::oracle::{series_marginal, series_marginal_semigroup, ExactSystem, PairModel, SeriesTarget};
use kinchem_core::seeded_rng;

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `d mu / dt = 2 lambda (B_1 U(mu x mu) - mu)`, RK4.
fn boltzmann_ode(model: &PairModel, mu0: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let s = model.states();
    let rhs = |mu: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; s];
        for a in 0..s {
            for b in 0..s {
                let w = mu[a] * mu[b];
                for (target, k) in model.kernel().row(a * s + b).iter().enumerate() {
                    out[target / s] += w * k;
                }
            }
        }
        out.iter().zip(mu).map(|(g, m)| 2.0 * model.lambda * (g - m)).collect()
    };
    let h = t / steps as f64;
    let mut mu = mu0.to_vec();
    for _ in 0..steps {
        let add = |x: &[f64], k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * b).collect() };
        let k1 = rhs(&mu);
        let k2 = rhs(&add(&mu, &k1, h / 2.0));
        let k3 = rhs(&add(&mu, &k2, h / 2.0));
        let k4 = rhs(&add(&mu, &k3, h));
        for i in 0..s {
            mu[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    mu
}

#[test]
fn finite_series_error_equals_omitted_mass() {
    let mut rng = seeded_rng(3, 0);
    for big in 3..=6 {
        let model = PairModel::random(2, 1.0, &mut rng);
        let mu0 = [0.35, 0.65];
        for &t in &[0.05, 0.1] {
            let series = series_marginal(&model, &mu0, t, 4, SeriesTarget::Finite(big), None).unwrap();
            let exact = ExactSystem::new(&model, big).unwrap().one_particle(&mu0, t);
            let err = l1(&series.marginal, &exact);
            println!(
                "N={big} t={t} sup={:e} l1={err:e} omitted={:e} tail={:e}",
                sup(&series.marginal, &exact),
                series.omitted_mass,
                series.tail_bound
            );
            // the series drops only nonnegative terms, whose total is the omitted mass
            assert!((err - series.omitted_mass).abs() < 1e-12, "N={big} t={t}");
        }
    }
}

#[test]
fn limit_series_matches_boltzmann_equation() {
    let mut rng = seeded_rng(4, 0);
    let model = PairModel::random(3, 1.0, &mut rng);
    let mu0 = [0.5, 0.3, 0.2];
    let series = series_marginal(&model, &mu0, 0.05, 6, SeriesTarget::Limit, None).unwrap();
    let ode = boltzmann_ode(&model, &mu0, 0.05, 2000);
    println!("{:e} {:e}", sup(&series.marginal, &ode), series.omitted_mass);
    assert!(sup(&series.marginal, &ode) <= series.omitted_mass + 1e-13);
    let long = series_marginal_semigroup(&model, &mu0, 1.0, 0.05, 6).unwrap();
    let ode = boltzmann_ode(&model, &mu0, 1.0, 2000);
    println!("{:e}", sup(&long, &ode));
    assert!(sup(&long, &ode) < 1e-7);
}
