//! Synthetic panels drawn from the model, and dense brute-force
//! densities used as test oracles.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::conditionals::{CutPoints, DecayParams, ModelSpec, ModelState, DECAY_MAX};
use crate::covkernel::{chol_ln_det, cholesky_with_jitter, exp_decay_matrix, lag_matrix, EARTH_RADIUS_KM};
use crate::error::{Error, Result};
use crate::normal::ln_cdf_diff;
use crate::panel::{
    assemble_design, lagged_log_deaths, prevalence_column, standardize, write_deaths_table, write_panel_tables,
    write_vaccination_table, CovariateColumn, CovariatePanel, DesignMatrix, IngestedPanel, Location, OrdinalPanel,
    SpaceTimeGrid, LOG_DEATHS, VACCINATION,
};
use crate::rngkit::RngStream;

/// Largest `n·T` the dense oracles accept.
pub const DENSE_LIMIT: usize = 64;

/// Layout of the synthetic locations: a jittered rectangular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_locations: usize,
    pub n_times: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    pub extent_km: f64,
    /// Uniform jitter as a fraction of the grid spacing.
    pub jitter: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_locations: 10, n_times: 60, center_lat: 42.9, center_lon: -75.5, extent_km: 500.0, jitter: 0.3 }
    }
}

/// Coefficients of one regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeParams {
    pub intercept: f64,
    /// One per fixed covariate.
    pub beta: Vec<f64>,
    /// Decay of each spatially varying coefficient field.
    pub omega: Vec<f64>,
}

/// Process decays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDecays {
    pub phi_us: f64,
    pub phi_ut: f64,
    pub phi_vs: f64,
    pub phi_vt: f64,
}

/// Ground truth for a synthetic panel.
///
/// With several changepoints every segment has its own coefficients and U
/// runs over the whole horizon. Each change adds a fresh draw of the V
/// process from its week on, so every change is a shift in both the mean
/// and the covariance, as the single-change model assumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrueParams {
    pub grid: GridSpec,
    pub categories: usize,
    /// Free cut points `δ₂..δ_{m−1}`.
    pub cuts: Vec<f64>,
    /// Last week of each regime but the final one (1-based).
    pub changepoints: Vec<usize>,
    pub regimes: Vec<RegimeParams>,
    pub decay: ProcessDecays,
    /// Multiplies both processes; 0 switches them off.
    pub process_sd: f64,
    pub kappa: f64,
    pub deaths: bool,
    pub vaccination: bool,
}

impl Default for TrueParams {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            categories: 4,
            cuts: vec![1.5, 3.0],
            changepoints: vec![30],
            regimes: vec![
                RegimeParams { intercept: 0.5, beta: vec![0.5], omega: vec![0.01] },
                RegimeParams { intercept: 2.0, beta: vec![0.3], omega: vec![0.01] },
            ],
            decay: ProcessDecays { phi_us: 0.01, phi_ut: 0.3, phi_vs: 0.02, phi_vt: 0.5 },
            process_sd: 1.0,
            kappa: 1.0,
            deaths: true,
            vaccination: true,
        }
    }
}

impl TrueParams {
    pub fn n_fixed(&self) -> usize {
        usize::from(self.deaths)
    }

    pub fn n_varying(&self) -> usize {
        usize::from(self.vaccination)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.n_locations == 0 || g.n_times == 0 {
            return Err(Error::input("grid needs at least one location and one week"));
        }
        if !(g.extent_km >= 0.0) || !(g.jitter >= 0.0 && g.jitter < 1.0) {
            return Err(Error::input("grid extent must be nonnegative and jitter in [0, 1)"));
        }
        if self.categories < 2 || self.cuts.len() != self.categories - 2 {
            return Err(Error::input(format!(
                "{} categories need {} free cut points, got {}",
                self.categories,
                self.categories.saturating_sub(2),
                self.cuts.len()
            )));
        }
        CutPoints::new(self.cuts.clone())?;
        let mut prev = 0;
        for &c in &self.changepoints {
            if c <= prev || c >= g.n_times {
                return Err(Error::input(format!("changepoints must increase strictly inside 1..{}", g.n_times)));
            }
            prev = c;
        }
        if self.regimes.len() != self.changepoints.len() + 1 {
            return Err(Error::input(format!(
                "{} changepoints need {} regimes, got {}",
                self.changepoints.len(),
                self.changepoints.len() + 1,
                self.regimes.len()
            )));
        }
        for r in &self.regimes {
            if r.beta.len() != self.n_fixed() || r.omega.len() != self.n_varying() {
                return Err(Error::input("every regime needs one beta per fixed and one omega per varying covariate"));
            }
            if r.omega.iter().any(|&w| !(w > 0.0 && w < DECAY_MAX)) {
                return Err(Error::input("coefficient-field decays must lie in (0, 3)"));
            }
        }
        let d = &self.decay;
        for v in [d.phi_us, d.phi_ut, d.phi_vs, d.phi_vt] {
            if !(v > 0.0 && v < DECAY_MAX) {
                return Err(Error::input(format!("process decay {v} outside (0, 3)")));
            }
        }
        if !(self.process_sd >= 0.0) || !(self.kappa > 0.0) {
            return Err(Error::input("process_sd must be nonnegative and kappa positive"));
        }
        Ok(())
    }

    /// Regime index of 0-based week `t`.
    pub fn regime_of(&self, t: usize) -> usize {
        self.changepoints.iter().filter(|&&c| t >= c).count()
    }
}

/// Raw inputs behind the covariates, in time-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCovariates {
    pub deaths: Vec<f64>,
    pub doses: Vec<f64>,
    pub population: Vec<f64>,
}

/// Latent quantities that generated the panel.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTruth {
    pub pi: DVector<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Coefficient vector of each regime in design-column order.
    pub theta: Vec<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct Simulated {
    pub panel: OrdinalPanel,
    pub raw: RawCovariates,
    /// Unstandardized covariate columns as ingestion would produce them.
    pub ingested: IngestedPanel,
    /// Standardized covariates used to generate the data.
    pub covariates: CovariatePanel,
    pub design: DesignMatrix,
    pub truth: LatentTruth,
}

impl Simulated {
    pub fn fixed_names(&self) -> Vec<String> {
        self.covariates.fixed.iter().map(|c| c.name.clone()).collect()
    }

    pub fn varying_names(&self) -> Vec<String> {
        self.covariates.varying.iter().map(|c| c.name.clone()).collect()
    }

    /// Write the four input tables ingestion reads.
    pub fn write_tables(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })?;
        write_panel_tables(&self.panel, dir)?;
        let grid = self.panel.grid();
        write_deaths_table(grid, &self.raw.deaths, &dir.join("deaths.csv"))?;
        write_vaccination_table(grid, &self.raw.doses, &self.raw.population, &dir.join("vaccinations.csv"))
    }
}

/// Jittered rectangular layout around the configured center.
pub fn simulate_grid<R: Rng + ?Sized>(spec: &GridSpec, rng: &mut R) -> Result<SpaceTimeGrid> {
    let n = spec.n_locations;
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    // square spacing chosen so the layout's diagonal equals the extent
    let diagonal = (((cols - 1).pow(2) + (rows - 1).pow(2)) as f64).sqrt();
    let spacing = if diagonal > 0.0 { spec.extent_km / diagonal } else { 0.0 };
    let x0 = 0.5 * (cols - 1) as f64 * spacing;
    let y0 = 0.5 * (rows - 1) as f64 * spacing;
    let km_per_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    let mut locations = Vec::with_capacity(n);
    for k in 0..n {
        let (r, c) = (k / cols, k % cols);
        let jx = spec.jitter * spacing * (rng.random::<f64>() - 0.5);
        let jy = spec.jitter * spacing * (rng.random::<f64>() - 0.5);
        let x = c as f64 * spacing - x0 + jx;
        let y = r as f64 * spacing - y0 + jy;
        let lat = spec.center_lat + y / km_per_deg;
        let lon = spec.center_lon + x / (km_per_deg * lat.to_radians().cos());
        locations.push(Location { id: format!("S{:02}", k + 1), lat, lon });
    }
    SpaceTimeGrid::new(locations, spec.n_times)
}

fn simulate_raw<R: Rng + ?Sized>(grid: &SpaceTimeGrid, rng: &mut R) -> Result<RawCovariates> {
    let (n, t) = (grid.n_locations(), grid.n_times());
    let pops: Vec<f64> = (0..n).map(|_| (50_000f64.ln() + rng.random::<f64>() * 10f64.ln()).exp().round()).collect();
    let phases: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0).collect();
    let uptake: Vec<f64> = (0..n).map(|_| 0.6 + 0.3 * rng.random::<f64>()).collect();
    let mut raw = RawCovariates { deaths: Vec::with_capacity(n * t), doses: Vec::with_capacity(n * t), population: Vec::with_capacity(n * t) };
    let mid = 0.6 * t as f64;
    for week in 0..t {
        for i in 0..n {
            let wave = 1.0 + (2.0 * std::f64::consts::PI * (week as f64 + phases[i]) / 20.0).sin();
            let rate = pops[i] / 1e5 * (0.5 + 2.0 * wave);
            let d = Poisson::new(rate.max(1e-3)).map_err(|e| Error::numerical(e.to_string()))?.sample(rng);
            raw.deaths.push(d.round());
            let share = uptake[i] / (1.0 + (-(week as f64 - mid) / 4.0).exp());
            raw.doses.push((share * pops[i]).floor());
            raw.population.push(pops[i]);
        }
    }
    Ok(raw)
}

/// Draw `Σ_t ⊗ Σ_s`-distributed `n × T` field via the two small Cholesky
/// factors: `L_s Z L_tᵀ`.
fn separable_field<R: Rng + ?Sized>(ls: &DMatrix<f64>, lt: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::from_fn(ls.nrows(), lt.nrows(), |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    ls * z * lt.transpose()
}

fn chol_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky_with_jitter(m)?.0.l())
}

/// Simulate a panel on the given grid.
pub fn simulate_panel<R: Rng + ?Sized>(params: &TrueParams, grid: &SpaceTimeGrid, rng: &mut R) -> Result<Simulated> {
    params.validate()?;
    if grid.n_times() != params.grid.n_times {
        return Err(Error::input("grid and parameters disagree on the number of weeks"));
    }
    let (n, t) = (grid.n_locations(), grid.n_times());
    let raw = simulate_raw(grid, rng)?;
    let mut columns = Vec::new();
    if params.deaths {
        columns.push(CovariateColumn::new(LOG_DEATHS, lagged_log_deaths(&raw.deaths, n)?));
    }
    if params.vaccination {
        columns.push(CovariateColumn::new(VACCINATION, prevalence_column(&raw.doses, &raw.population)?));
    }
    let fixed: Vec<CovariateColumn> = columns.iter().filter(|c| c.name == LOG_DEATHS).cloned().collect();
    let varying: Vec<CovariateColumn> = columns.iter().filter(|c| c.name == VACCINATION).cloned().collect();
    let covariates = standardize(&CovariatePanel::new(fixed, varying))?;
    let design = assemble_design(grid, &covariates)?;

    let dist = grid.distance_matrix();
    let mut theta = Vec::with_capacity(params.regimes.len());
    for r in &params.regimes {
        let mut th = DVector::zeros(design.k());
        th[0] = r.intercept;
        for (j, b) in r.beta.iter().enumerate() {
            th[1 + j] = *b;
        }
        for (h, &w) in r.omega.iter().enumerate() {
            let omega = exp_decay_matrix(&dist, w)? * params.kappa;
            let l = chol_lower(&omega)?;
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let range = design.varying_range(h);
            th.rows_mut(range.start, range.len()).copy_from(&(l * z));
        }
        theta.push(th);
    }

    let d = &params.decay;
    let lags = lag_matrix(t);
    let u = separable_field(
        &chol_lower(&exp_decay_matrix(&dist, d.phi_us)?)?,
        &chol_lower(&exp_decay_matrix(&lags, d.phi_ut)?)?,
        rng,
    ) * params.process_sd;
    let vs_chol = chol_lower(&exp_decay_matrix(&dist, d.phi_vs)?)?;
    let vt_chol = chol_lower(&exp_decay_matrix(&lags, d.phi_vt)?)?;
    let mut v = separable_field(&vs_chol, &vt_chol, rng) * params.process_sd;
    // later changes stack a fresh draw on top
    for &change in params.changepoints.iter().skip(1) {
        let extra = separable_field(&vs_chol, &vt_chol, rng) * params.process_sd;
        for week in change..t {
            let mut col = v.column_mut(week);
            col += extra.column(week);
        }
    }
    let first_change = params.changepoints.first().copied().unwrap_or(t);
    let cuts = CutPoints::new(params.cuts.clone())?;
    let mut pi = DVector::zeros(n * t);
    let mut y = Vec::with_capacity(n * t);
    for week in 0..t {
        let th = &theta[params.regime_of(week)];
        for i in 0..n {
            let idx = week * n + i;
            let mut m = design.x.row(idx).dot(&th.transpose()) + u[(i, week)];
            if week >= first_change {
                m += v[(i, week)];
            }
            let p = m + rng.sample::<f64, _>(rand_distr::StandardNormal);
            pi[idx] = p;
            y.push((1..=params.categories).find(|&c| p <= cuts.window(c).1).unwrap_or(params.categories));
        }
    }
    let panel = OrdinalPanel::new(grid.clone(), y, params.categories)?;
    let ingested = IngestedPanel { panel: panel.clone(), covariates: columns };
    Ok(Simulated { panel, raw, ingested, covariates, design, truth: LatentTruth { pi, u, v, theta } })
}

/// Grid and panel from one seed.
pub fn simulate(params: &TrueParams, seed: u64) -> Result<Simulated> {
    let mut rng = RngStream::new(seed, 0);
    let grid = simulate_grid(&params.grid, &mut rng)?;
    simulate_panel(params, &grid, &mut rng)
}

/// Model state at the truth of a single-changepoint simulation.
pub fn truth_state(params: &TrueParams, sim: &Simulated, spec: &ModelSpec) -> Result<ModelState> {
    let t = spec.n_times();
    let t0 = params.changepoints.first().copied().unwrap_or(t);
    let theta = sim.truth.theta[0].clone();
    let theta_star = sim.truth.theta.get(1).cloned().unwrap_or_else(|| theta.clone());
    let last = params.regimes.last().expect("at least one regime");
    let decay = DecayParams {
        phi_us: params.decay.phi_us,
        phi_ut: params.decay.phi_ut,
        phi_vs: params.decay.phi_vs,
        phi_vt: params.decay.phi_vt,
        omega: params.regimes[0].omega.clone(),
        omega_star: last.omega.clone(),
    };
    ModelState::new(
        spec,
        sim.truth.pi.clone(),
        sim.truth.u.clone(),
        sim.truth.v.clone(),
        theta,
        theta_star,
        CutPoints::new(params.cuts.clone())?,
        decay,
        t0,
    )
}

// ---------------------------------------------------------------------------
// Dense oracles

fn dense_gaussian_log_density(cov: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    let chol = Cholesky::new(cov.clone()).ok_or_else(|| Error::numerical("dense covariance not positive definite"))?;
    let sol = chol.solve(x);
    Ok(-0.5 * chol_ln_det(&chol) - 0.5 * x.dot(&sol))
}

fn dense_kron(spec: &ModelSpec, phi_s: f64, phi_t: f64) -> Result<DMatrix<f64>> {
    let st = exp_decay_matrix(&lag_matrix(spec.n_times()), phi_t)?;
    let ss = exp_decay_matrix(spec.distances(), phi_s)?;
    Ok(st.kronecker(&ss))
}

fn dense_prior_terms(spec: &ModelSpec, state: &ModelState) -> Result<f64> {
    let m = spec.len();
    if m > DENSE_LIMIT {
        return Err(Error::input(format!("dense oracle limited to n·T ≤ {DENSE_LIMIT}, got {m}")));
    }
    let d = state.decay();
    let in_support = [d.phi_us, d.phi_ut, d.phi_vs, d.phi_vt]
        .iter()
        .chain(&d.omega)
        .chain(&d.omega_star)
        .all(|&v| v > 0.0 && v < DECAY_MAX);
    if !in_support || state.t0 > spec.n_times() {
        return Ok(f64::NEG_INFINITY);
    }
    let u = DVector::from_column_slice(state.u.as_slice());
    let v = DVector::from_column_slice(state.v.as_slice());
    let mut total = dense_gaussian_log_density(&dense_kron(spec, d.phi_us, d.phi_ut)?, &u)?;
    total += dense_gaussian_log_density(&dense_kron(spec, d.phi_vs, d.phi_vt)?, &v)?;
    for (theta, omegas) in [(&state.theta, &d.omega), (&state.theta_star, &d.omega_star)] {
        let k = spec.k();
        let design = spec.design();
        let mut psi = DMatrix::zeros(k, k);
        for j in design.fixed_range() {
            psi[(j, j)] = 1.0;
        }
        for (h, &w) in omegas.iter().enumerate() {
            let r = design.varying_range(h);
            psi.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&exp_decay_matrix(spec.distances(), w)?);
        }
        total += dense_gaussian_log_density(&(psi * spec.kappa()), theta)?;
    }
    Ok(total)
}

fn dense_means(spec: &ModelSpec, state: &ModelState) -> DVector<f64> {
    let n = spec.n_locations();
    let x = &spec.design().x;
    DVector::from_fn(spec.len(), |idx, _| {
        let (i, t) = (idx % n, idx / n);
        let row = x.row(idx);
        if t < state.t0 {
            row.dot(&state.theta.transpose()) + state.u[(i, t)]
        } else {
            row.dot(&state.theta_star.transpose()) + state.u[(i, t)] + state.v[(i, t)]
        }
    })
}

/// Unnormalized log joint density of every unknown given the data, built
/// from explicit `nT × nT` covariances. Constants shared by all states
/// are dropped.
pub fn dense_joint_logdensity(spec: &ModelSpec, state: &ModelState) -> Result<f64> {
    let prior = dense_prior_terms(spec, state)?;
    if prior == f64::NEG_INFINITY {
        return Ok(prior);
    }
    let means = dense_means(spec, state);
    let mut total = prior;
    for (i, &c) in spec.y().iter().enumerate() {
        let (lo, hi) = state.cuts.window(c);
        let p = state.pi[i];
        if !(p > lo && p <= hi) {
            return Ok(f64::NEG_INFINITY);
        }
        total += -0.5 * (p - means[i]).powi(2);
    }
    Ok(total)
}

/// As [`dense_joint_logdensity`] with the latent field integrated out.
pub fn dense_collapsed_logdensity(spec: &ModelSpec, state: &ModelState) -> Result<f64> {
    let prior = dense_prior_terms(spec, state)?;
    if prior == f64::NEG_INFINITY {
        return Ok(prior);
    }
    let means = dense_means(spec, state);
    let mut total = prior;
    for (i, &c) in spec.y().iter().enumerate() {
        let (lo, hi) = state.cuts.window(c);
        total += ln_cdf_diff(lo - means[i], hi - means[i]);
    }
    Ok(total)
}

/// Dense `Σ_t ⊗ Σ_s` correlation used by tests of the time-slice
/// conditionals.
pub fn dense_separable(spec: &ModelSpec, phi_s: f64, phi_t: f64) -> Result<DMatrix<f64>> {
    dense_kron(spec, phi_s, phi_t)
}
