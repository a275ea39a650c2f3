//! Shared small instances and dense-oracle checks for the integration
//! tests and the acceptance report.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use stcp::conditionals::*;
use stcp::covkernel::{conditional_time_slice, exp_decay_matrix, kron_quadratic_form, lag_matrix};
use stcp::panel::{assemble_design, CovariateColumn, CovariatePanel, Location, OrdinalPanel, SpaceTimeGrid};
use stcp::rngkit::RngStream;
use stcp::simulate::{dense_collapsed_logdensity, dense_joint_logdensity};

pub struct Instance {
    pub spec: ModelSpec,
    pub state: ModelState,
}

/// Random model with one fixed and one spatially varying covariate and
/// `m = 3` categories, with a random state that satisfies every invariant.
pub fn instance(seed: u64, n: usize, t: usize, t0: usize) -> Instance {
    let mut rng = RngStream::new(seed, 7);
    let locations = (0..n)
        .map(|i| Location {
            id: format!("L{i}"),
            lat: 42.0 + 0.4 * rng.open01(),
            lon: -75.0 + 0.5 * rng.open01(),
        })
        .collect();
    let grid = SpaceTimeGrid::new(locations, t).unwrap();
    let y: Vec<usize> = (0..n * t).map(|_| rng.random_range(1..=3)).collect();
    let panel = OrdinalPanel::new(grid.clone(), y.clone(), 3).unwrap();
    let fixed = CovariateColumn::new("x", (0..n * t).map(|_| rng.standard_normal()).collect());
    let varying = CovariateColumn::new("w", (0..n * t).map(|_| rng.standard_normal()).collect());
    let design = assemble_design(&grid, &CovariatePanel::new(vec![fixed], vec![varying])).unwrap();
    let kappa = 0.5 + rng.open01();
    let spec = ModelSpec::new(&panel, design, kappa).unwrap();

    let d2 = 0.5 + rng.open01();
    let pi = DVector::from_iterator(
        n * t,
        y.iter().map(|&c| match c {
            1 => -2.0 * rng.open01(),
            2 => d2 * rng.open01(),
            _ => d2 + 2.0 * rng.open01(),
        }),
    );
    let mut normal_matrix = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.standard_normal());
    let u = normal_matrix(n, t);
    let v = normal_matrix(n, t);
    let k = spec.k();
    let theta = normal_matrix(k, 1).column(0).into_owned();
    let theta_star = normal_matrix(k, 1).column(0).into_owned();
    let decay = DecayParams {
        phi_us: 0.005 + 0.05 * rng.open01(),
        phi_ut: 0.2 + rng.open01(),
        phi_vs: 0.005 + 0.05 * rng.open01(),
        phi_vt: 0.2 + rng.open01(),
        omega: vec![0.005 + 0.05 * rng.open01()],
        omega_star: vec![0.005 + 0.05 * rng.open01()],
    };
    let state = ModelState::new(&spec, pi, u, v, theta, theta_star, CutPoints::new(vec![d2]).unwrap(), decay, t0).unwrap();
    Instance { spec, state }
}

pub fn joint(inst: &Instance, state: &ModelState) -> f64 {
    dense_joint_logdensity(&inst.spec, state).unwrap()
}

/// `|a − b|` scaled by `max(1, |b|)`.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Worst mismatch between conditional and joint log-density differences
/// for each block, over random states.
#[derive(Debug, Default)]
pub struct RatioReport {
    pub rows: Vec<(String, f64)>,
}

impl RatioReport {
    fn push(&mut self, name: &str, err: f64) {
        match self.rows.iter_mut().find(|r| r.0 == name) {
            Some(r) => r.1 = r.1.max(err),
            None => self.rows.push((name.to_string(), err)),
        }
    }

    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.1).fold(0.0, f64::max)
    }
}

pub fn ratio_suite(seeds: std::ops::Range<u64>) -> RatioReport {
    let mut report = RatioReport::default();
    for seed in seeds {
        let n = 2 + (seed % 2) as usize;
        let t = 3 + (seed / 2 % 2) as usize;
        let t0 = (seed as usize * 3 + 1) % (t + 1);
        let inst = instance(seed, n, t, t0);
        check_all_blocks(&inst, seed, &mut report);
    }
    report
}

fn check_all_blocks(inst: &Instance, seed: u64, report: &mut RatioReport) {
    let spec = &inst.spec;
    let base = &inst.state;
    let j0 = joint(inst, base);
    let mut rng = RngStream::new(seed, 99);

    // latent values
    let means = base.latent_means(spec);
    for i in 0..spec.len() {
        let (lo, hi) = base.cuts.window(spec.y()[i]);
        let lo = if lo.is_finite() { lo } else { hi - 3.0 };
        let hi = if hi.is_finite() { hi } else { lo + 3.0 };
        let mut s = base.clone();
        s.pi[i] = lo + (hi - lo) * rng.open01();
        let cond = -0.5 * (s.pi[i] - means[i]).powi(2) + 0.5 * (base.pi[i] - means[i]).powi(2);
        report.push("latent", rel(cond, joint(inst, &s) - j0));
    }

    // coefficients
    for regime in [Regime::Pre, Regime::Post] {
        let name = if regime == Regime::Pre { "theta" } else { "theta_star" };
        let Some(cond) = coefficient_conditional(base, spec, regime) else { continue };
        let mut s = base.clone();
        let draw = DVector::from_fn(spec.k(), |_, _| rng.standard_normal());
        match regime {
            Regime::Pre => s.theta = draw.clone(),
            Regime::Post => s.theta_star = draw.clone(),
        }
        let current = if regime == Regime::Pre { &base.theta } else { &base.theta_star };
        let dc = cond.ln_density(&draw).unwrap() - cond.ln_density(current).unwrap();
        report.push(name, rel(dc, joint(inst, &s) - j0));
    }

    // free cut point, with the latent field integrated out
    {
        let c0 = dense_collapsed_logdensity(spec, base).unwrap();
        let cur = base.cuts.get(2);
        let cand = 0.2 + 2.0 * rng.open01();
        let mut s = base.clone();
        s.cuts = CutPoints::new(vec![cand]).unwrap();
        let dc = cutpoint_log_density(base, spec, 2, cand) - cutpoint_log_density(base, spec, 2, cur);
        report.push("cut point", rel(dc, dense_collapsed_logdensity(spec, &s).unwrap() - c0));
    }

    // process slices
    for which in [Process::U, Process::V] {
        let name = if which == Process::U { "U slice" } else { "V slice" };
        for t in 0..spec.n_times() {
            let cond = process_conditional(base, spec, which, t);
            let col = DVector::from_fn(spec.n_locations(), |_, _| rng.standard_normal());
            let mut s = base.clone();
            let current = match which {
                Process::U => base.u.column(t).into_owned(),
                Process::V => base.v.column(t).into_owned(),
            };
            match which {
                Process::U => s.u.set_column(t, &col),
                Process::V => s.v.set_column(t, &col),
            }
            let dc = cond.ln_density(&col).unwrap() - cond.ln_density(&current).unwrap();
            report.push(name, rel(dc, joint(inst, &s) - j0));
        }
    }

    // decays
    let kinds = [
        ("phi_ut", DecayKind::PhiUt, 0.1, 2.5),
        ("phi_us", DecayKind::PhiUs, 0.001, 0.2),
        ("phi_vt", DecayKind::PhiVt, 0.1, 2.5),
        ("phi_vs", DecayKind::PhiVs, 0.001, 0.2),
        ("omega", DecayKind::Omega(0), 0.001, 0.2),
        ("omega_star", DecayKind::OmegaStar(0), 0.001, 0.2),
    ];
    for (name, kind, lo, hi) in kinds {
        let cand = lo + (hi - lo) * rng.open01();
        let cur = base.decay().get(kind);
        let mut s = base.clone();
        s.set_decay(spec, kind, cand).unwrap();
        let dc = decay_log_density(base, spec, kind, cand) - decay_log_density(base, spec, kind, cur);
        report.push(name, rel(dc, joint(inst, &s) - j0));
    }

    // changepoint
    {
        let big_t = spec.n_times();
        let lp = changepoint_log_pmf(base, spec, (0, big_t));
        for c in 0..=big_t {
            let mut s = base.clone();
            s.t0 = c;
            let dc = lp[c] - lp[base.t0];
            report.push("t0", rel(dc, joint(inst, &s) - j0));
        }
    }
}

/// Largest error of `conditional_time_slice` against conditioning the
/// dense `Σ_t ⊗ Σ_s` joint, over random SPD inputs with `n, T ≤ 4`.
pub fn time_slice_oracle(seeds: std::ops::Range<u64>) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let mut rng = RngStream::new(seed, 3);
        let n = 1 + (seed % 4) as usize;
        let big_t = 2 + (seed / 4 % 3) as usize;
        let sigma_t = random_spd(big_t, &mut rng);
        let sigma_s = random_spd(n, &mut rng);
        let field = DMatrix::from_fn(n, big_t, |_, _| rng.standard_normal());
        let joint = sigma_t.kronecker(&sigma_s);
        for t in 0..big_t {
            let (mean, cov) = conditional_time_slice(&sigma_t, &sigma_s, t, &field).unwrap();
            let a: Vec<usize> = (t * n..(t + 1) * n).collect();
            let b: Vec<usize> = (0..n * big_t).filter(|i| !a.contains(i)).collect();
            let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| joint[(rows[r], cols[c])]);
            let s_ab = pick(&a, &b);
            let s_bb = pick(&b, &b);
            let s_aa = pick(&a, &a);
            let xb = DVector::from_iterator(b.len(), b.iter().map(|&i| field.as_slice()[i]));
            let inv = s_bb.clone().try_inverse().unwrap();
            let want_mean = &s_ab * &inv * xb;
            let want_cov = &s_aa - &s_ab * &inv * s_ab.transpose();
            let scale = want_cov.amax().max(1.0);
            worst = worst.max((mean - want_mean).amax() / scale).max((cov - want_cov).amax() / scale);
        }
    }
    worst
}

/// Largest relative error of `kron_quadratic_form` against the dense
/// Kronecker product, `p, q ≤ 5`.
pub fn kron_oracle(seeds: std::ops::Range<u64>) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let mut rng = RngStream::new(seed, 4);
        let p = 1 + (seed % 5) as usize;
        let q = 1 + (seed / 5 % 5) as usize;
        let a = random_spd(p, &mut rng);
        let b = random_spd(q, &mut rng);
        let v: Vec<f64> = (0..p * q).map(|_| rng.standard_normal()).collect();
        let got = kron_quadratic_form(&a, &b, &v).unwrap();
        let vv = DVector::from_column_slice(&v);
        let want = vv.dot(&(a.kronecker(&b) * &vv));
        worst = worst.max((got - want).abs() / want.abs());
    }
    worst
}

pub fn random_spd(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
    &a * a.transpose() + DMatrix::identity(n, n) * n as f64
}

/// Dense separable correlation on a spec's own grid.
pub fn dense_separable_corr(spec: &ModelSpec, phi_s: f64, phi_t: f64) -> DMatrix<f64> {
    let st = exp_decay_matrix(&lag_matrix(spec.n_times()), phi_t).unwrap();
    let ss = exp_decay_matrix(spec.distances(), phi_s).unwrap();
    st.kronecker(&ss)
}

/// Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / m - f).max(f - i as f64 / m);
    }
    d
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_01(m: usize) -> f64 {
    1.6276 / (m as f64).sqrt()
}

/// `(mean, var, lower, upper)` tuples covering untruncated, one-sided,
/// two-sided and ±8σ tail windows.
pub fn truncation_tuples() -> Vec<(f64, f64, f64, f64)> {
    let inf = f64::INFINITY;
    vec![
        (0.0, 1.0, -inf, inf),
        (0.0, 1.0, 0.0, inf),
        (0.0, 1.0, -inf, 0.0),
        (1.5, 0.25, -1.0, 2.0),
        (-2.0, 4.0, -3.0, -2.5),
        (0.0, 1.0, 8.0, inf),
        (0.0, 1.0, -inf, -8.0),
        (0.0, 1.0, 8.0, 8.5),
        (0.0, 1.0, -9.0, -8.0),
        (3.0, 2.0, 3.0 + 8.0 * 2f64.sqrt(), inf),
        (-1.0, 0.5, -inf, -1.0 - 8.0 * 0.5f64.sqrt()),
        (0.0, 1.0, 5.5, 6.0),
        (0.0, 1.0, 4.9, 5.1),
        (10.0, 1.0, 0.0, 0.5),
        (-10.0, 1.0, 0.0, inf),
        (0.0, 9.0, -1.0, 1.0),
        (0.3, 1.0, 0.29, 0.31),
        (0.0, 1.0, -0.5, 6.0),
        (2.0, 0.01, 1.0, 2.0),
        (-0.7, 3.0, -6.0, 1.0),
    ]
}

/// CDF of `N(mean, var)` truncated to `(lower, upper]`, in log space so
/// far-tail windows keep full precision.
pub fn truncated_cdf(mean: f64, var: f64, lower: f64, upper: f64, x: f64) -> f64 {
    use stcp::normal::ln_cdf_diff;
    let sd = var.sqrt();
    let (a, b) = ((lower - mean) / sd, (upper - mean) / sd);
    let z = ((x - mean) / sd).clamp(a, b);
    if z <= a {
        return 0.0;
    }
    (ln_cdf_diff(a, z) - ln_cdf_diff(a, b)).exp()
}

/// KS statistic and critical value for each truncation tuple.
pub fn truncated_normal_ks(draws: usize, seed: u64) -> Vec<((f64, f64, f64, f64), f64, f64)> {
    let mut rng = RngStream::new(seed, 0);
    truncation_tuples()
        .into_iter()
        .map(|(m, v, lo, hi)| {
            let mut xs: Vec<f64> = (0..draws)
                .map(|_| stcp::rngkit::sample_truncated_normal(m, v, lo, hi, &mut rng).unwrap())
                .collect();
            assert!(xs.iter().all(|&x| x > lo && x <= hi));
            let d = ks_statistic(&mut xs, |x| truncated_cdf(m, v, lo, hi, x));
            ((m, v, lo, hi), d, ks_critical_01(draws))
        })
        .collect()
}

/// Mean and variance of a slice-sampled standard normal chain.
pub fn slice_normal_moments(sweeps: usize, seed: u64) -> (f64, f64) {
    let mut rng = RngStream::new(seed, 0);
    let cfg = stcp::rngkit::SliceConfig::unbounded(1.0, 50);
    let mut x = 0.0;
    let mut xs = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        x = stcp::rngkit::slice_sample_1d(|y| -0.5 * y * y, x, &cfg, &mut rng).unwrap();
        xs.push(x);
    }
    let mean = xs.iter().sum::<f64>() / sweeps as f64;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (sweeps - 1) as f64;
    (mean, var)
}

pub fn half_normal_mean(draws: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 0);
    (0..draws)
        .map(|_| stcp::rngkit::sample_truncated_normal(0.0, 1.0, 0.0, f64::INFINITY, &mut rng).unwrap())
        .sum::<f64>()
        / draws as f64
}

/// Harmonic-mean estimate and exact log marginal likelihood for
/// `y_i ~ N(μ, 1)`, `μ ~ N(0, τ²)`, from `draws` exact posterior draws.
/// With five observations and `τ² = 0.1` the reciprocal likelihood has
/// finite posterior variance.
pub fn conjugate_harmonic_mean(draws: usize, seed: u64) -> (f64, f64) {
    let y = [0.3, -0.4, 0.8, 0.1, 0.5];
    let tau2 = 0.1;
    let n = y.len() as f64;
    let sum: f64 = y.iter().sum();
    let post_var = 1.0 / (n + 1.0 / tau2);
    let post_mean = post_var * sum;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let loglik = |mu: f64| y.iter().map(|yi| -0.5 * ln2pi - 0.5 * (yi - mu).powi(2)).sum::<f64>();
    let mut rng = RngStream::new(seed, 0);
    let trace: Vec<f64> = (0..draws).map(|_| loglik(post_mean + post_var.sqrt() * rng.standard_normal())).collect();
    let est = stcp::selection::harmonic_mean_marginal(&trace).unwrap().log_marginal;
    // y ~ N(0, I + τ² 11ᵀ)
    let cov = DMatrix::from_fn(y.len(), y.len(), |i, j| tau2 + if i == j { 1.0 } else { 0.0 });
    let chol = cov.cholesky().unwrap();
    let yv = DVector::from_column_slice(&y);
    let ln_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let exact = -0.5 * n * ln2pi - 0.5 * ln_det - 0.5 * yv.dot(&chol.solve(&yv));
    (est, exact)
}

/// Canned segment fits keyed by week range.
pub struct StubFitter(pub Vec<((usize, usize), usize, f64)>);

impl stcp::selection::SegmentFitter for StubFitter {
    fn fit(&self, range: stcp::selection::WeekRange, _seed: u64) -> stcp::error::Result<stcp::selection::SegmentFit> {
        let (_, mode, log_bf) = *self
            .0
            .iter()
            .find(|(r, _, _)| *r == (range.start, range.end))
            .unwrap_or_else(|| panic!("no canned fit for {range:?}"));
        Ok(stcp::selection::SegmentFit {
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

/// Transmission level of a weekly rate per 100,000, written out from the
/// published table rather than from the library's thresholds.
pub fn table_level(rate: f64) -> usize {
    if rate < 10.0 {
        1
    } else if rate < 50.0 {
        2
    } else if rate < 100.0 {
        3
    } else {
        4
    }
}

/// Rates on a 1e−12 grid within ±1e−9 of each boundary, the boundaries
/// themselves with their neighbouring floats, and a coarse sweep of
/// `[0, 200)`; returns how many were checked and the mismatching rates.
pub fn category_boundary_sweep() -> (usize, Vec<f64>) {
    let mut rates = Vec::new();
    for edge in [10.0f64, 50.0, 100.0] {
        rates.extend((-1000i32..=1000).map(|k| edge + f64::from(k) * 1e-12));
        rates.extend([edge - 1e-9, edge + 1e-9, f64::from_bits(edge.to_bits() - 1), f64::from_bits(edge.to_bits() + 1)]);
    }
    rates.extend((0..20_000).map(|x| f64::from(x) * 0.01));
    let bad = rates
        .iter()
        .copied()
        .filter(|&r| stcp::panel::categorize_weekly_rate(r).ok() != Some(table_level(r)))
        .collect();
    (rates.len(), bad)
}
