mod common;

use chrono::NaiveDate;
use common::*;
use stcp::selection::*;

fn table_two_fitter() -> StubFitter {
    StubFitter(vec![
        ((1, 122), 57, 44.0),
        ((1, 57), 36, 64.0),
        ((58, 122), 39, 1118.0),
        ((1, 36), 8, -72.0),
        ((58, 96), 22, -102.0),
        ((97, 122), 0, -5.0),
    ])
}

#[test]
fn stubbed_recursion_reproduces_published_tree() {
    let origin = NaiveDate::from_ymd_opt(2020, 1, 20).unwrap();
    let report = binary_segment(&table_two_fitter(), WeekRange { start: 1, end: 122 }, 1, Some(origin));
    assert_eq!(report.changepoints, vec![36, 57, 96]);
    let rows: Vec<(usize, &str, Option<&str>, Option<f64>)> = report
        .stages
        .iter()
        .map(|r| (r.stage, r.time_horizon.as_str(), r.changepoint.as_deref(), r.log_bayes_factor))
        .collect();
    assert_eq!(
        rows,
        vec![
            (1, "1st week to 122nd week", Some("57th week"), Some(44.0)),
            (2, "1st week to 57th week", Some("36th week"), Some(64.0)),
            (2, "58th week to 122nd week", Some("96th week"), Some(1118.0)),
            (3, "1st week to 36th week", Some("8th week"), Some(-72.0)),
            (3, "37th week to 57th week", Some("insufficient data"), None),
            (3, "58th week to 96th week", Some("79th week"), Some(-102.0)),
            (3, "97th week to 122nd week", Some("not found"), Some(-5.0)),
        ]
    );
    let dates: Vec<Option<NaiveDate>> = report.stages.iter().map(|r| r.date).collect();
    let d = |y, m, day| Some(NaiveDate::from_ymd_opt(y, m, day).unwrap());
    assert_eq!(dates, vec![d(2021, 2, 15), d(2020, 9, 21), d(2021, 11, 15), d(2020, 3, 9), None, d(2021, 7, 19), None]);
    let verdicts: Vec<Verdict> = report.stages.iter().map(|r| r.verdict).collect();
    assert_eq!(
        verdicts,
        vec![
            Verdict::Accepted,
            Verdict::Accepted,
            Verdict::Accepted,
            Verdict::Rejected,
            Verdict::InsufficientData,
            Verdict::Rejected,
            Verdict::Rejected,
        ]
    );
    // the week-8 row fails both the Bayes-factor test and the endpoint guard
    let stage3 = &report.tree.children[0].children[0];
    assert_eq!(stage3.reasons.len(), 2);
}

#[test]
fn twenty_four_weeks_is_not_fitted() {
    let report = binary_segment(&StubFitter(vec![]), WeekRange { start: 1, end: 24 }, 1, None);
    assert_eq!(report.tree.verdict, Verdict::InsufficientData);
    assert!(report.tree.fit.is_none());
    assert!(report.changepoints.is_empty());
}

#[test]
fn decisive_split_near_endpoint_is_guarded() {
    let fitter = StubFitter(vec![((1, 36), 8, 50.0)]);
    let report = binary_segment(&fitter, WeekRange { start: 1, end: 36 }, 1, None);
    assert_eq!(report.tree.verdict, Verdict::TooCloseToEndpoint);
    assert!(report.changepoints.is_empty());
    let fitter = StubFitter(vec![((1, 36), 25, 50.0)]);
    let report = binary_segment(&fitter, WeekRange { start: 1, end: 36 }, 1, None);
    assert_eq!(report.tree.verdict, Verdict::TooCloseToEndpoint);
}

#[test]
fn report_serializes_verdicts_in_kebab_case() {
    let report = binary_segment(&table_two_fitter(), WeekRange { start: 1, end: 122 }, 1, None);
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"insufficient-data\""));
    let back: SegmentationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn harmonic_mean_on_conjugate_toy() {
    let (est, exact) = conjugate_harmonic_mean(10_000, 1);
    assert!((est - exact).abs() < 0.2, "{est} vs {exact}");
}

#[test]
fn harmonic_mean_constant_trace_is_exact() {
    let trace = vec![-123.25; 500];
    assert_eq!(harmonic_mean_marginal(&trace).unwrap().log_marginal, -123.25);
}

#[test]
fn bayes_factor_display() {
    assert_eq!(bayes_factor(-100.0, -144.0).to_string(), "log BF: 44, decisive");
    assert_eq!(bayes_factor(-144.0, -72.0).to_string(), "log BF: -72, not decisive");
    assert_eq!(bayes_factor(-3.0, -3.0).to_string(), "log BF: 0, not decisive");
}
