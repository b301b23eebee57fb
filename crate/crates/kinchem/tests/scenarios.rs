use kinchem::config::{config_to_string, parse_config};
use kinchem::models::TwoLevel;
use kinchem::scenarios::{run_scenario, Direction, Overrides, Scenario};
use proptest::prelude::*;

fn small(seed: u64) -> Overrides {
    Overrides { seed: Some(seed), n: Some(1500), t_end: Some(3.0), ..Overrides::default() }
}

#[test]
fn scenarios_are_bitwise_reproducible() {
    for s in [Scenario::Equilibration, Scenario::Redistribution, Scenario::PoissonInvariance, Scenario::MeanfieldVsMc] {
        let a = run_scenario(s, &small(8)).unwrap();
        let b = run_scenario(s, &small(8)).unwrap();
        assert_eq!(a.tables, b.tables, "{s}");
        assert_eq!(a.summary.checks, b.summary.checks, "{s}");
        let c = run_scenario(s, &small(9)).unwrap();
        assert_ne!(a.tables, c.tables, "{s}");
    }
}

#[test]
fn redistribution_runs_both_ways() {
    for (direction, sign) in [(Direction::Exothermic, -1.0), (Direction::Endothermic, 1.0)] {
        let o = Overrides { direction: Some(direction), ..small(3) };
        let r = run_scenario(Scenario::Redistribution, &o).unwrap();
        let k = r.tables[0].column("mean_K").unwrap();
        assert!(sign * (k[k.len() - 1] - k[0]) > 0.0, "{direction:?}: {k:?}");
        let q = r.summary.parameters["heat_in"].as_f64().unwrap();
        assert!(sign * q > 0.0, "{direction:?}: heat {q}");
    }
}

#[test]
fn written_reports_list_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = run_scenario(Scenario::FluxCheck, &Overrides::default()).unwrap();
    r.write(dir.path()).unwrap();
    assert_eq!(r.summary.files, vec!["flux_check.csv".to_owned()]);
    assert!(dir.path().join("summary.json").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn config_round_trips(
        n in 1usize..100_000,
        beta in 0.1f64..5.0,
        gap in 0.0f64..4.0,
        w12 in 0.01f64..10.0,
        w21 in 0.01f64..10.0,
        heat in 0.0f64..3.0,
        seed in 0u64..(i64::MAX as u64),
    ) {
        let spec = TwoLevel { n, beta, gap, w12, w21, heat, seed, ..TwoLevel::default() }.spec();
        let text = config_to_string(&spec).unwrap();
        prop_assert_eq!(parse_config(&text).unwrap(), spec);
    }
}
