mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use stcp::conditionals::{CutPoints, DecayParams, ModelSpec, ModelState};
use stcp::covkernel::kron_quadratic_form;
use stcp::gibbs::{run_chains, FitConfig, ModelKind};
use stcp::panel::{assemble_design, categorize_weekly_rate, CovariateColumn, CovariatePanel, Location, OrdinalPanel, SpaceTimeGrid, RATE_THRESHOLDS};
use stcp::rngkit::{sample_truncated_normal, slice_step, RngStream, SliceConfig};
use stcp::selection::{
    binary_segment, harmonic_mean_marginal, observed_likelihood, SegmentFit, SegmentFitter, SegmentNode, Verdict,
    WeekRange, MIN_FIT_WEEKS, MIN_SEGMENT_WEEKS,
};

fn two_cells(y: usize, m: usize, x: f64) -> ModelSpec {
    let grid = SpaceTimeGrid::new(vec![Location { id: "a".into(), lat: 40.0, lon: -75.0 }], 2).unwrap();
    let panel = OrdinalPanel::new(grid.clone(), vec![y, 1], m).unwrap();
    let design = assemble_design(&grid, &CovariatePanel::new(vec![CovariateColumn::new("x", vec![x, x])], vec![])).unwrap();
    ModelSpec::new(&panel, design, 1.0).unwrap()
}

/// Fitter whose answers are a hash of the range, so every subsegment has
/// an arbitrary but reproducible mode and Bayes factor.
struct HashFitter(u64);

impl SegmentFitter for HashFitter {
    fn fit(&self, range: WeekRange, _seed: u64) -> stcp::error::Result<SegmentFit> {
        let mut rng = RngStream::new(self.0 ^ ((range.start as u64) << 20) ^ range.end as u64, 3);
        let mode = rand::Rng::random_range(&mut rng, 0..=range.len());
        let log_bf = -20.0 + 60.0 * rng.open01();
        Ok(SegmentFit {
            local_mode: mode,
            interval: (mode as f64, mode as f64),
            log_bf,
            log_ml_change: log_bf,
            log_ml_nochange: 0.0,
            mcse_change: 0.0,
            mcse_nochange: 0.0,
            converged: true,
            dropped_covariates: vec![],
        })
    }
}

fn check_tree(node: &SegmentNode) -> Result<(), TestCaseError> {
    match node.verdict {
        Verdict::Accepted => {
            prop_assert_eq!(node.children.len(), 2);
            for ch in &node.children {
                prop_assert!(ch.range.len() >= MIN_SEGMENT_WEEKS);
            }
            prop_assert_eq!(node.children[0].range.start, node.range.start);
            prop_assert_eq!(node.children[1].range.end, node.range.end);
            prop_assert_eq!(node.children[0].range.end + 1, node.children[1].range.start);
            prop_assert!(node.fit.as_ref().unwrap().log_bf > 100f64.ln());
        }
        Verdict::InsufficientData => {
            prop_assert!(node.range.len() <= MIN_FIT_WEEKS);
            prop_assert!(node.children.is_empty());
        }
        _ => prop_assert!(node.children.is_empty()),
    }
    for ch in &node.children {
        check_tree(ch)?;
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kron_form_matches_dense(p in 1usize..6, q in 1usize..6, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let a = random_spd(p, &mut rng);
        let b = random_spd(q, &mut rng);
        let v: Vec<f64> = (0..p * q).map(|_| rng.standard_normal()).collect();
        let dense = a.kronecker(&b);
        let x = DVector::from_vec(v.clone());
        let want = (x.transpose() * &dense * &x)[(0, 0)];
        let got = kron_quadratic_form(&a, &b, &v).unwrap();
        prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn category_counts_thresholds_below(rate in 0.0f64..1e4) {
        let c = categorize_weekly_rate(rate).unwrap();
        prop_assert_eq!(c, 1 + RATE_THRESHOLDS.iter().filter(|&&e| e <= rate).count());
    }

    #[test]
    fn categorization_is_monotone(a in 0.0f64..300.0, b in 0.0f64..300.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(categorize_weekly_rate(lo).unwrap() <= categorize_weekly_rate(hi).unwrap());
    }

    #[test]
    fn category_windows_tile_the_line(
        m in 2usize..7,
        gaps in prop::collection::vec(0.05f64..2.0, 5),
        x in -3.0f64..3.0,
        theta in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        // Two cells sharing one mean, so ln P(a, b) = ln p(a) + ln p(b);
        // with the second cell in category 1, Σ_{c≥2} P(c, 1) + p(1)² = p(1).
        let free: Vec<f64> = gaps[..m - 2].iter().scan(0.0, |acc, g| { *acc += g; Some(*acc) }).collect();
        let decay = DecayParams { phi_us: 0.1, phi_ut: 0.5, phi_vs: 0.1, phi_vt: 0.5, omega: vec![], omega_star: vec![] };
        let mut total = 0.0;
        let mut mean = 0.0;
        for y in 2..=m {
            let spec = two_cells(y, m, x);
            let k = spec.k();
            let th = DVector::from_iterator(k, theta.iter().copied().cycle().take(k));
            mean = spec.design().mean(&th)[0];
            prop_assert!((spec.design().mean(&th)[1] - mean).abs() < 1e-15);
            let state = ModelState::new(
                &spec,
                DVector::zeros(2),
                DMatrix::zeros(1, 2),
                DMatrix::zeros(1, 2),
                th.clone(),
                th,
                CutPoints::new(free.clone()).unwrap(),
                decay.clone(),
                2,
            ).unwrap();
            total += observed_likelihood(&state, &spec).exp();
        }
        let p1 = 0.5 * libm::erfc(mean / std::f64::consts::SQRT_2);
        prop_assert!((total + p1 * p1 - p1).abs() < 1e-12, "off by {}", total + p1 * p1 - p1);
    }

    #[test]
    fn harmonic_mean_is_monotone_and_order_free(
        ll in prop::collection::vec(-50.0f64..0.0, 1..40),
        bump in prop::collection::vec(0.0f64..5.0, 40),
        rot in 0usize..40,
    ) {
        let base = harmonic_mean_marginal(&ll).unwrap().log_marginal;
        let raised: Vec<f64> = ll.iter().zip(&bump).map(|(l, b)| l + b).collect();
        prop_assert!(harmonic_mean_marginal(&raised).unwrap().log_marginal >= base - 1e-12);
        let mut rotated = ll.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        rotated.reverse();
        prop_assert!((harmonic_mean_marginal(&rotated).unwrap().log_marginal - base).abs() < 1e-9);
        let lo = ll.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(base >= lo - 1e-9 && base <= hi + 1e-9);
    }

    #[test]
    fn segmentation_respects_length_guards(start in 1usize..20, len in 1usize..200, seed in any::<u64>()) {
        let range = WeekRange { start, end: start + len - 1 };
        let report = binary_segment(&HashFitter(seed), range, seed, None);
        check_tree(&report.tree)?;
        if !report.changepoints.is_empty() {
            let mut bounds = vec![start - 1];
            bounds.extend(&report.changepoints);
            bounds.push(range.end);
            for w in bounds.windows(2) {
                prop_assert!(w[1] - w[0] >= MIN_SEGMENT_WEEKS);
            }
        }
    }

    #[test]
    fn slice_draws_lie_on_the_slice(
        start in -3.0f64..3.0,
        width in 0.1f64..4.0,
        steps in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed, 0);
        let f = |x: f64| -0.5 * x * x - 0.1 * x.powi(4);
        let cfg = SliceConfig::unbounded(width, steps);
        let mut x = start;
        for _ in 0..20 {
            let d = slice_step(f, x, &cfg, &mut rng).unwrap();
            prop_assert!(f(d.value) > d.log_level);
            prop_assert!(d.log_level < f(x));
            x = d.value;
        }
    }

    #[test]
    fn truncated_normal_stays_in_support(
        mean in -10.0f64..10.0,
        sd in 0.01f64..5.0,
        a in -12.0f64..12.0,
        w in 1e-6f64..6.0,
        lower_open in any::<bool>(),
        upper_open in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let lower = if lower_open { f64::NEG_INFINITY } else { mean + a * sd };
        let upper = if upper_open { f64::INFINITY } else { mean + (a + w) * sd };
        let mut rng = RngStream::new(seed, 0);
        for _ in 0..50 {
            let x = sample_truncated_normal(mean, sd * sd, lower, upper, &mut rng).unwrap();
            prop_assert!(x.is_finite() && x >= lower && x <= upper, "{} not in ({}, {}]", x, lower, upper);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn retained_draws_follow_burn_in_and_thinning(n_iter in 1usize..40, burn in 0usize..40, thin in 1usize..6) {
        prop_assume!(burn < n_iter);
        let inst = instance(11, 2, 3, 1);
        let cfg = FitConfig {
            n_chains: 2,
            n_iterations: n_iter,
            burn_in: burn,
            thin,
            fixed_field_warmup: 0,
            ..FitConfig::default()
        };
        let store = run_chains(&inst.spec, &cfg, ModelKind::Changepoint).unwrap();
        for c in &store.chains {
            prop_assert_eq!(c.rows.len(), (n_iter - burn) / thin);
            prop_assert_eq!(c.loglik.len(), c.rows.len());
            prop_assert!(c.iterations.iter().all(|&it| it > burn && it <= n_iter && (it - burn) % thin == 0));
        }
    }
}
