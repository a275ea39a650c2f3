mod common;

use stcp::panel::*;
use stcp::simulate::{simulate, TrueParams};

#[test]
fn boundary_sweep_matches_the_table() {
    let (checked, mismatches) = common::category_boundary_sweep();
    assert!(mismatches.is_empty(), "{mismatches:?}");
    assert!(checked > 3 * 2001);
    for edge in [10.0f64, 50.0, 100.0] {
        assert_eq!(categorize_weekly_rate(edge - 1e-9).unwrap() + 1, categorize_weekly_rate(edge).unwrap());
    }
}

#[test]
fn representative_rates_fall_in_their_levels() {
    for c in 1..=4 {
        assert_eq!(categorize_weekly_rate(representative_rate(c).unwrap()).unwrap(), c);
    }
    assert!(representative_rate(0).is_err() && representative_rate(5).is_err());
}

#[test]
fn simulated_tables_ingest_back_to_the_same_panel() {
    let params = TrueParams { grid: stcp::simulate::GridSpec { n_locations: 4, n_times: 9, ..Default::default() }, ..Default::default() };
    let params = TrueParams { changepoints: vec![4], ..params };
    let sim = simulate(&params, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sim.write_tables(dir.path()).unwrap();
    let loaded = load_panel(&PanelSources {
        locations: dir.path().join("locations.csv"),
        cases: dir.path().join("cases.csv"),
        deaths: Some(dir.path().join("deaths.csv")),
        vaccinations: Some(dir.path().join("vaccinations.csv")),
    })
    .unwrap();
    assert_eq!(loaded.panel.y(), sim.panel.y());
    assert_eq!(loaded.panel.grid(), sim.panel.grid());
    for want in &sim.ingested.covariates {
        let got = loaded.covariates.iter().find(|c| c.name == want.name).unwrap();
        for (a, b) in got.values.iter().zip(&want.values) {
            assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", want.name);
        }
    }
    let selected = loaded.select_covariates(&sim.fixed_names(), &sim.varying_names()).unwrap();
    let design = assemble_design(loaded.panel.grid(), &selected).unwrap();
    assert!((design.x.clone() - sim.design.x.clone()).amax() < 1e-10);

    let json = dir.path().join("panel.json");
    loaded.write_json(&json).unwrap();
    assert_eq!(IngestedPanel::read_json(&json).unwrap(), loaded);
}

#[test]
fn lagged_deaths_shift_by_one_week() {
    let deaths = [0.0, 3.0, 1.0, 7.0, 2.0, 0.0];
    let got = lagged_log_deaths(&deaths, 2).unwrap();
    let want = [0.0, 0.0, 1f64.ln(), 4f64.ln(), 2f64.ln(), 8f64.ln()];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-15);
    }
}
