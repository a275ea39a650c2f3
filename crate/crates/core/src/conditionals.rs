//! Model state and the full-conditional updates of one Gibbs sweep.
//!
//! Observations are indexed time-major (`t·n + i`), so the pre-change
//! rows of the design are the contiguous block `0..t0·n` and the process
//! fields, stored as `n × T` column-major matrices, share that layout.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covkernel::{chol_ln_det, cholesky_with_jitter, trace_product, CanonicalGaussian, CorrFactor};
use crate::error::{Error, Result};
use crate::normal::{ln_cdf_diff, ln_sum_exp};
use crate::panel::{DesignMatrix, OrdinalPanel};
use crate::rngkit::{sample_truncated_normal, slice_step, SliceConfig};

/// Upper end of the uniform prior on every decay parameter.
pub const DECAY_MAX: f64 = 3.0;

/// Everything about a fit that stays fixed while sampling.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    y: Vec<usize>,
    categories: usize,
    design: DesignMatrix,
    distances: DMatrix<f64>,
    kappa: f64,
    by_category: Vec<Vec<usize>>,
}

impl ModelSpec {
    pub fn new(panel: &OrdinalPanel, design: DesignMatrix, kappa: f64) -> Result<Self> {
        let grid = panel.grid();
        if design.n_rows() != grid.len() || design.n_locations != grid.n_locations() {
            return Err(Error::input(format!(
                "design has {} rows for {} locations, panel has n·T = {}",
                design.n_rows(),
                design.n_locations,
                grid.len()
            )));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::input(format!("kappa must be positive, got {kappa}")));
        }
        let m = panel.categories();
        let mut by_category = vec![Vec::new(); m + 1];
        for (i, &c) in panel.y().iter().enumerate() {
            by_category[c].push(i);
        }
        Ok(Self {
            y: panel.y().to_vec(),
            categories: m,
            design,
            distances: grid.distance_matrix(),
            kappa,
            by_category,
        })
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn n_locations(&self) -> usize {
        self.design.n_locations
    }

    pub fn n_times(&self) -> usize {
        self.design.n_times
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn k(&self) -> usize {
        self.design.k()
    }

    pub fn n_varying(&self) -> usize {
        self.design.n_varying
    }

    /// Observation indices with category `c`.
    pub fn indices_of(&self, c: usize) -> &[usize] {
        &self.by_category[c]
    }
}

/// Ordered cut points `δ₀ = −∞ < δ₁ = 0 < δ₂ < … < δ_{m−1} < δ_m = +∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CutPoints {
    bounds: Vec<f64>,
}

impl CutPoints {
    /// From the free cut points `δ₂..δ_{m−1}`.
    pub fn new(free: Vec<f64>) -> Result<Self> {
        let mut bounds = Vec::with_capacity(free.len() + 3);
        bounds.push(f64::NEG_INFINITY);
        bounds.push(0.0);
        bounds.extend(free);
        bounds.push(f64::INFINITY);
        for w in bounds.windows(2).skip(1) {
            if !(w[0] < w[1]) || w[0].is_nan() {
                return Err(Error::input(format!("cut points must be strictly increasing from 0, got {:?}", &bounds[1..bounds.len() - 1])));
            }
        }
        Ok(Self { bounds })
    }

    /// `δ_j = j − 1` for `j = 1..m−1`.
    pub fn initial(categories: usize) -> Self {
        let free = (2..categories).map(|j| (j - 1) as f64).collect();
        Self::new(free).expect("initial cut points are increasing")
    }

    pub fn categories(&self) -> usize {
        self.bounds.len() - 1
    }

    /// `δ_j` for `j ∈ 0..=m`.
    pub fn get(&self, j: usize) -> f64 {
        self.bounds[j]
    }

    pub fn free(&self) -> &[f64] {
        &self.bounds[2..self.bounds.len() - 1]
    }

    /// Latent window `(δ_{c−1}, δ_c]` of category `c`.
    pub fn window(&self, c: usize) -> (f64, f64) {
        (self.bounds[c - 1], self.bounds[c])
    }

    fn set(&mut self, j: usize, value: f64) {
        self.bounds[j] = value;
    }
}

impl TryFrom<Vec<f64>> for CutPoints {
    type Error = Error;
    fn try_from(free: Vec<f64>) -> Result<Self> {
        Self::new(free)
    }
}

impl From<CutPoints> for Vec<f64> {
    fn from(c: CutPoints) -> Self {
        c.free().to_vec()
    }
}

/// Decay parameters of the two processes and of the coefficient fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub phi_us: f64,
    pub phi_ut: f64,
    pub phi_vs: f64,
    pub phi_vt: f64,
    pub omega: Vec<f64>,
    pub omega_star: Vec<f64>,
}

impl DecayParams {
    pub fn get(&self, kind: DecayKind) -> f64 {
        match kind {
            DecayKind::PhiUs => self.phi_us,
            DecayKind::PhiUt => self.phi_ut,
            DecayKind::PhiVs => self.phi_vs,
            DecayKind::PhiVt => self.phi_vt,
            DecayKind::Omega(h) => self.omega[h],
            DecayKind::OmegaStar(h) => self.omega_star[h],
        }
    }

    fn set(&mut self, kind: DecayKind, value: f64) {
        match kind {
            DecayKind::PhiUs => self.phi_us = value,
            DecayKind::PhiUt => self.phi_ut = value,
            DecayKind::PhiVs => self.phi_vs = value,
            DecayKind::PhiVt => self.phi_vt = value,
            DecayKind::Omega(h) => self.omega[h] = value,
            DecayKind::OmegaStar(h) => self.omega_star[h] = value,
        }
    }

    fn validate(&self, n_varying: usize) -> Result<()> {
        if self.omega.len() != n_varying || self.omega_star.len() != n_varying {
            return Err(Error::input(format!(
                "expected {n_varying} coefficient-field decays per regime, got {} and {}",
                self.omega.len(),
                self.omega_star.len()
            )));
        }
        let all = [self.phi_us, self.phi_ut, self.phi_vs, self.phi_vt]
            .into_iter()
            .chain(self.omega.iter().copied())
            .chain(self.omega_star.iter().copied());
        for v in all {
            if !(v > 0.0 && v < DECAY_MAX) {
                return Err(Error::input(format!("decay parameter {v} outside (0, {DECAY_MAX})")));
            }
        }
        Ok(())
    }
}

/// Which decay parameter an update or density refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayKind {
    PhiUs,
    PhiUt,
    PhiVs,
    PhiVt,
    Omega(usize),
    OmegaStar(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Pre,
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Process {
    U,
    V,
}

#[derive(Clone, Debug)]
struct Factors {
    u_t: CorrFactor,
    u_s: CorrFactor,
    v_t: CorrFactor,
    v_s: CorrFactor,
    omega: Vec<CorrFactor>,
    omega_star: Vec<CorrFactor>,
}

impl Factors {
    fn build(spec: &ModelSpec, d: &DecayParams) -> Result<Self> {
        let t = spec.n_times();
        let dist = spec.distances();
        Ok(Self {
            u_t: CorrFactor::temporal(t, d.phi_ut)?,
            u_s: CorrFactor::spatial(dist, d.phi_us)?,
            v_t: CorrFactor::temporal(t, d.phi_vt)?,
            v_s: CorrFactor::spatial(dist, d.phi_vs)?,
            omega: d.omega.iter().map(|&w| CorrFactor::spatial(dist, w)).collect::<Result<_>>()?,
            omega_star: d.omega_star.iter().map(|&w| CorrFactor::spatial(dist, w)).collect::<Result<_>>()?,
        })
    }

    fn rebuild(&mut self, spec: &ModelSpec, kind: DecayKind, value: f64) -> Result<()> {
        let dist = spec.distances();
        let t = spec.n_times();
        match kind {
            DecayKind::PhiUs => self.u_s = CorrFactor::spatial(dist, value)?,
            DecayKind::PhiUt => self.u_t = CorrFactor::temporal(t, value)?,
            DecayKind::PhiVs => self.v_s = CorrFactor::spatial(dist, value)?,
            DecayKind::PhiVt => self.v_t = CorrFactor::temporal(t, value)?,
            DecayKind::Omega(h) => self.omega[h] = CorrFactor::spatial(dist, value)?,
            DecayKind::OmegaStar(h) => self.omega_star[h] = CorrFactor::spatial(dist, value)?,
        }
        Ok(())
    }
}

/// Current values of one chain.
///
/// Decays are private so the cached correlation factors can never go
/// stale; change them through [`ModelState::set_decay`].
#[derive(Clone, Debug)]
pub struct ModelState {
    pub pi: DVector<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub theta: DVector<f64>,
    pub theta_star: DVector<f64>,
    pub cuts: CutPoints,
    pub t0: usize,
    decay: DecayParams,
    factors: Factors,
}

impl ModelState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: &ModelSpec,
        pi: DVector<f64>,
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        theta: DVector<f64>,
        theta_star: DVector<f64>,
        cuts: CutPoints,
        decay: DecayParams,
        t0: usize,
    ) -> Result<Self> {
        let (n, t) = (spec.n_locations(), spec.n_times());
        if pi.len() != spec.len() {
            return Err(Error::input(format!("latent field has length {}, expected {}", pi.len(), spec.len())));
        }
        for (name, f) in [("U", &u), ("V", &v)] {
            if f.nrows() != n || f.ncols() != t {
                return Err(Error::input(format!("{name} is {}x{}, expected {n}x{t}", f.nrows(), f.ncols())));
            }
        }
        if theta.len() != spec.k() || theta_star.len() != spec.k() {
            return Err(Error::input(format!("coefficient vectors must have length k = {}", spec.k())));
        }
        if cuts.categories() != spec.categories() {
            return Err(Error::input(format!(
                "{} cut-point windows for {} categories",
                cuts.categories(),
                spec.categories()
            )));
        }
        if t0 > t {
            return Err(Error::input(format!("changepoint {t0} outside 0..={t}")));
        }
        decay.validate(spec.n_varying())?;
        let factors = Factors::build(spec, &decay)?;
        Ok(Self { pi, u, v, theta, theta_star, cuts, t0, decay, factors })
    }

    pub fn decay(&self) -> &DecayParams {
        &self.decay
    }

    pub fn set_decay(&mut self, spec: &ModelSpec, kind: DecayKind, value: f64) -> Result<()> {
        if !(value > 0.0 && value < DECAY_MAX) {
            return Err(Error::input(format!("decay parameter {value} outside (0, {DECAY_MAX})")));
        }
        self.factors.rebuild(spec, kind, value)?;
        self.decay.set(kind, value);
        Ok(())
    }

    pub(crate) fn process(&self, which: Process) -> &DMatrix<f64> {
        match which {
            Process::U => &self.u,
            Process::V => &self.v,
        }
    }

    fn process_factors(&self, which: Process) -> (&CorrFactor, &CorrFactor) {
        match which {
            Process::U => (&self.factors.u_t, &self.factors.u_s),
            Process::V => (&self.factors.v_t, &self.factors.v_s),
        }
    }

    /// Precision of the coefficient prior, `Ψ⁻¹/κ`.
    pub fn prior_precision(&self, spec: &ModelSpec, regime: Regime) -> DMatrix<f64> {
        let k = spec.k();
        let design = spec.design();
        let mut p = DMatrix::zeros(k, k);
        for j in design.fixed_range() {
            p[(j, j)] = 1.0;
        }
        let fields = match regime {
            Regime::Pre => &self.factors.omega,
            Regime::Post => &self.factors.omega_star,
        };
        for (h, f) in fields.iter().enumerate() {
            let r = design.varying_range(h);
            p.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&f.precision);
        }
        p / spec.kappa()
    }

    /// Regime-appropriate mean `m_i` of every latent value.
    pub fn latent_means(&self, spec: &ModelSpec) -> DVector<f64> {
        let n = spec.n_locations();
        let x = &spec.design().x;
        let split = self.t0 * n;
        let total = spec.len();
        let mut m = DVector::zeros(total);
        if split > 0 {
            m.rows_mut(0, split).copy_from(&(x.rows(0, split) * &self.theta));
        }
        if split < total {
            let post = x.rows(split, total - split) * &self.theta_star;
            let v = &self.v.as_slice()[split..];
            for (r, (&p, &vv)) in post.iter().zip(v).enumerate() {
                m[split + r] = p + vv;
            }
        }
        for (mi, &ui) in m.iter_mut().zip(self.u.as_slice()) {
            *mi += ui;
        }
        m
    }

    /// Check every state invariant against the data.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        for (i, (&p, &c)) in self.pi.iter().zip(spec.y()).enumerate() {
            let (lo, hi) = self.cuts.window(c);
            if !(p > lo && p <= hi) {
                return Err(Error::numerical(format!("latent value {p} at {i} outside window ({lo}, {hi}] of category {c}")));
            }
        }
        if self.t0 > spec.n_times() {
            return Err(Error::numerical(format!("changepoint {} outside support", self.t0)));
        }
        self.decay.validate(spec.n_varying()).map_err(|e| Error::numerical(e.to_string()))
    }
}

/// Slice-sampler settings used inside a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceTuning {
    pub cut_width: f64,
    pub decay_width: f64,
    pub max_stepouts: usize,
}

impl Default for SliceTuning {
    fn default() -> Self {
        Self { cut_width: 1.0, decay_width: 0.25, max_stepouts: 50 }
    }
}

// ---------------------------------------------------------------------------
// Latent field

/// Redraw every latent value from its truncated normal.
pub fn update_latent<R: Rng + ?Sized>(state: &mut ModelState, spec: &ModelSpec, rng: &mut R) -> Result<()> {
    let means = state.latent_means(spec);
    for (i, &c) in spec.y().iter().enumerate() {
        let (lo, hi) = state.cuts.window(c);
        state.pi[i] = sample_truncated_normal(means[i], 1.0, lo, hi, rng)?;
    }
    Ok(())
}

fn redraw_latent_subset<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    means: &DVector<f64>,
    indices: &[usize],
    rng: &mut R,
) -> Result<()> {
    for &i in indices {
        let (lo, hi) = state.cuts.window(spec.y()[i]);
        state.pi[i] = sample_truncated_normal(means[i], 1.0, lo, hi, rng)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Coefficients

/// Full conditional of `θ` (pre) or `θ*` (post), or `None` when the
/// regime holds no observations.
pub fn coefficient_conditional(state: &ModelState, spec: &ModelSpec, regime: Regime) -> Option<CanonicalGaussian> {
    let n = spec.n_locations();
    let split = state.t0 * n;
    let total = spec.len();
    let (start, len) = match regime {
        Regime::Pre => (0, split),
        Regime::Post => (split, total - split),
    };
    if len == 0 {
        return None;
    }
    let x = spec.design().x.rows(start, len);
    let mut r = state.pi.rows(start, len) - DVector::from_column_slice(&state.u.as_slice()[start..start + len]);
    if regime == Regime::Post {
        r -= DVector::from_column_slice(&state.v.as_slice()[start..start + len]);
    }
    let precision = x.transpose() * x + state.prior_precision(spec, regime);
    let potential = x.transpose() * r;
    Some(CanonicalGaussian { precision, potential })
}

pub fn update_coefficients<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    regime: Regime,
    rng: &mut R,
) -> Result<()> {
    let Some(cond) = coefficient_conditional(state, spec, regime) else {
        return Ok(());
    };
    let draw = cond.sample(rng)?;
    match regime {
        Regime::Pre => state.theta = draw,
        Regime::Post => state.theta_star = draw,
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Cut points

fn cutpoint_log_density_with(state: &ModelState, spec: &ModelSpec, means: &DVector<f64>, j: usize, candidate: f64) -> f64 {
    let below = state.cuts.get(j - 1);
    let above = state.cuts.get(j + 1);
    if !(candidate > below && candidate < above) {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for &i in spec.indices_of(j) {
        total += ln_cdf_diff(below - means[i], candidate - means[i]);
    }
    for &i in spec.indices_of(j + 1) {
        total += ln_cdf_diff(candidate - means[i], above - means[i]);
    }
    total
}

/// Log density of free cut point `δ_j` (`2 ≤ j ≤ m−1`) with the latent
/// field integrated out, up to a constant.
pub fn cutpoint_log_density(state: &ModelState, spec: &ModelSpec, j: usize, candidate: f64) -> f64 {
    assert!(j >= 2 && j < spec.categories(), "cut point {j} is not free");
    let means = state.latent_means(spec);
    cutpoint_log_density_with(state, spec, &means, j, candidate)
}

/// Slice-sample each free cut point in ascending order. After each one,
/// the latent values of the two adjacent categories are redrawn so that
/// every `π_i` stays inside its window.
pub fn update_cutpoints<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    tuning: &SliceTuning,
    rng: &mut R,
) -> Result<()> {
    let m = spec.categories();
    if m < 3 {
        return Ok(());
    }
    let means = state.latent_means(spec);
    for j in 2..m {
        let cfg = SliceConfig::new(tuning.cut_width, tuning.max_stepouts, state.cuts.get(j - 1), state.cuts.get(j + 1))?;
        let current = state.cuts.get(j);
        let draw = slice_step(|d| cutpoint_log_density_with(state, spec, &means, j, d), current, &cfg, rng)?;
        state.cuts.set(j, draw.value);
        redraw_latent_subset(state, spec, &means, spec.indices_of(j), rng)?;
        redraw_latent_subset(state, spec, &means, spec.indices_of(j + 1), rng)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Process time slices

/// True when time slice `t` (zero-based) of `which` enters the likelihood.
fn slice_has_data(state: &ModelState, which: Process, t: usize) -> bool {
    match which {
        Process::U => true,
        Process::V => t >= state.t0,
    }
}

/// Full conditional of slice `t` (zero-based) of `U` or `V`.
///
/// Uses the temporal precision `Q_t`: given the other slices the prior of
/// slice `t` is `N(μ_c, Σ_s / q_tt)` with `μ_c = −Σ_{r≠t} Q_t[t,r] X_r / q_tt`.
pub fn process_conditional(state: &ModelState, spec: &ModelSpec, which: Process, t: usize) -> CanonicalGaussian {
    let n = spec.n_locations();
    let field = state.process(which);
    let (ft, fs) = state.process_factors(which);
    let qt = &ft.precision;
    let q_tt = qt[(t, t)];
    let mut mu_c = DVector::zeros(n);
    for r in 0..spec.n_times() {
        if r != t && qt[(t, r)] != 0.0 {
            mu_c.axpy(-qt[(t, r)] / q_tt, &field.column(r), 1.0);
        }
    }
    let mut precision = &fs.precision * q_tt;
    let mut potential = &precision * &mu_c;
    if slice_has_data(state, which, t) {
        for i in 0..n {
            precision[(i, i)] += 1.0;
        }
        potential += slice_residual(state, spec, which, t);
    }
    CanonicalGaussian { precision, potential }
}

/// Data residual for slice `t` of `which`, i.e. the latent values minus
/// every other term of their mean.
fn slice_residual(state: &ModelState, spec: &ModelSpec, which: Process, t: usize) -> DVector<f64> {
    let rows = spec.design().time_rows(t);
    let x = spec.design().x.rows(rows.start, rows.len());
    let pre = t < state.t0;
    let mut r = state.pi.rows(rows.start, rows.len()).into_owned();
    r -= if pre { x * &state.theta } else { x * &state.theta_star };
    match which {
        Process::U => {
            if !pre {
                r -= state.v.column(t);
            }
        }
        Process::V => r -= state.u.column(t),
    }
    r
}

pub fn update_process_slice<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    which: Process,
    t: usize,
    rng: &mut R,
) -> Result<()> {
    let draw = process_conditional(state, spec, which, t).sample(rng)?;
    match which {
        Process::U => state.u.set_column(t, &draw),
        Process::V => state.v.set_column(t, &draw),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Decays

/// `−(n/2) ln|Σ_t| − ½ tr(Q_t A)` for the AR(1)-structured temporal
/// correlation, with `A = Xᵀ Q_s X`.
fn temporal_log_density(phi: f64, a: &DMatrix<f64>, n: usize) -> f64 {
    let t = a.nrows();
    if t == 1 {
        return -0.5 * a[(0, 0)];
    }
    let rho = (-phi).exp();
    let one_m_rho2 = -(-2.0 * phi).exp_m1();
    let mut diag = a[(0, 0)] + a[(t - 1, t - 1)];
    let mut off = 0.0;
    for i in 1..t - 1 {
        diag += (1.0 + rho * rho) * a[(i, i)];
    }
    for i in 0..t - 1 {
        off += a[(i, i + 1)] + a[(i + 1, i)];
    }
    let quad = (diag - rho * off) / one_m_rho2;
    -0.5 * n as f64 * (t - 1) as f64 * one_m_rho2.ln() - 0.5 * quad
}

/// `−(copies/2) ln|Σ_s| − ½ tr(Q_s B)` for a spatial exponential
/// correlation with decay `phi`.
fn spatial_log_density(phi: f64, dist: &DMatrix<f64>, b: &DMatrix<f64>, copies: usize) -> f64 {
    let corr = dist.map(|d| (-phi * d).exp());
    let Ok((chol, _)) = cholesky_with_jitter(&corr) else {
        return f64::NEG_INFINITY;
    };
    let quad = chol.solve(b).trace();
    -0.5 * copies as f64 * chol_ln_det(&chol) - 0.5 * quad
}

enum DecayTarget {
    Temporal { a: DMatrix<f64>, n: usize },
    Spatial { b: DMatrix<f64>, copies: usize, scale: f64 },
}

impl DecayTarget {
    fn eval(&self, phi: f64, dist: &DMatrix<f64>) -> f64 {
        if !(phi > 0.0 && phi < DECAY_MAX) {
            return f64::NEG_INFINITY;
        }
        match self {
            DecayTarget::Temporal { a, n } => temporal_log_density(phi, a, *n),
            DecayTarget::Spatial { b, copies, scale } => spatial_log_density(phi, dist, &(b * *scale), *copies),
        }
    }
}

fn decay_target(state: &ModelState, spec: &ModelSpec, kind: DecayKind) -> DecayTarget {
    let process_target = |which: Process, temporal: bool| {
        let x = state.process(which);
        let (ft, fs) = state.process_factors(which);
        if temporal {
            DecayTarget::Temporal { a: x.transpose() * &fs.precision * x, n: spec.n_locations() }
        } else {
            DecayTarget::Spatial { b: x * &ft.precision * x.transpose(), copies: spec.n_times(), scale: 1.0 }
        }
    };
    let field_target = |theta: &DVector<f64>, h: usize| {
        let g = theta.rows_range(spec.design().varying_range(h));
        DecayTarget::Spatial { b: &g * g.transpose(), copies: 1, scale: 1.0 / spec.kappa() }
    };
    match kind {
        DecayKind::PhiUt => process_target(Process::U, true),
        DecayKind::PhiUs => process_target(Process::U, false),
        DecayKind::PhiVt => process_target(Process::V, true),
        DecayKind::PhiVs => process_target(Process::V, false),
        DecayKind::Omega(h) => field_target(&state.theta, h),
        DecayKind::OmegaStar(h) => field_target(&state.theta_star, h),
    }
}

/// Log full-conditional density of one decay parameter, up to a
/// constant; `−∞` outside `(0, 3)`.
pub fn decay_log_density(state: &ModelState, spec: &ModelSpec, kind: DecayKind, candidate: f64) -> f64 {
    decay_target(state, spec, kind).eval(candidate, spec.distances())
}

/// Slice-sample one decay parameter.
pub fn update_decay<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    kind: DecayKind,
    tuning: &SliceTuning,
    rng: &mut R,
) -> Result<()> {
    let target = decay_target(state, spec, kind);
    let cfg = SliceConfig::new(tuning.decay_width, tuning.max_stepouts, 0.0, DECAY_MAX)?;
    let current = state.decay.get(kind);
    let dist = spec.distances();
    let draw = slice_step(|phi| target.eval(phi, dist), current, &cfg, rng)?;
    state.set_decay(spec, kind, draw.value)
}

/// `F L_t⁻ᵀ` for the AR(1) factor `L_t` of decay `phi`: each column becomes
/// an independent innovation.
fn ar1_whiten(field: &DMatrix<f64>, phi: f64) -> DMatrix<f64> {
    let rho = (-phi).exp();
    let scale = (-(-2.0 * phi).exp_m1()).sqrt();
    let mut out = field.clone();
    for t in 1..field.ncols() {
        let col = (field.column(t) - field.column(t - 1) * rho) / scale;
        out.set_column(t, &col);
    }
    out
}

/// Inverse of [`ar1_whiten`]: `W L_tᵀ`.
fn ar1_color(white: &DMatrix<f64>, phi: f64) -> DMatrix<f64> {
    let rho = (-phi).exp();
    let scale = (-(-2.0 * phi).exp_m1()).sqrt();
    let mut out = white.clone();
    for t in 1..white.ncols() {
        let col = out.column(t - 1) * rho + white.column(t) * scale;
        out.set_column(t, &col);
    }
    out
}

fn spatial_factor(spec: &ModelSpec, phi: f64) -> Result<DMatrix<f64>> {
    let corr = crate::covkernel::exp_decay_matrix(spec.distances(), phi)?;
    Ok(cholesky_with_jitter(&corr)?.0.l())
}

/// Residual target of a process field, `π` minus every other mean term,
/// as an `n × T` matrix, and the first week whose residuals carry data.
fn field_residual(state: &ModelState, spec: &ModelSpec, which: Process) -> (DMatrix<f64>, usize) {
    let n = spec.n_locations();
    let means = state.latent_means(spec);
    let resid = DVector::from_iterator(spec.len(), state.pi.iter().zip(means.iter()).map(|(p, m)| p - m));
    let field = state.process(which);
    let r = DMatrix::from_column_slice(n, spec.n_times(), resid.as_slice()) + field;
    let first = match which {
        Process::U => 0,
        Process::V => state.t0,
    };
    (r, first)
}

fn field_fit(resid: &DMatrix<f64>, first: usize, field: &DMatrix<f64>) -> f64 {
    let mut ss = 0.0;
    for t in first..resid.ncols() {
        ss += (resid.column(t) - field.column(t)).norm_squared();
    }
    -0.5 * ss
}

/// The process field that a decay change maps to when the whitened field
/// `L_s⁻¹ F L_t⁻ᵀ` is held fixed.
fn recolored_field(state: &ModelState, spec: &ModelSpec, kind: DecayKind, candidate: f64) -> Result<DMatrix<f64>> {
    let current = state.decay.get(kind);
    match kind {
        DecayKind::PhiUt | DecayKind::PhiVt => {
            let which = if kind == DecayKind::PhiUt { Process::U } else { Process::V };
            Ok(ar1_color(&ar1_whiten(state.process(which), current), candidate))
        }
        DecayKind::PhiUs | DecayKind::PhiVs => {
            let which = if kind == DecayKind::PhiUs { Process::U } else { Process::V };
            let l_cur = spatial_factor(spec, current)?;
            let white = l_cur
                .solve_lower_triangular(state.process(which))
                .ok_or_else(|| Error::numerical("singular spatial factor"))?;
            Ok(spatial_factor(spec, candidate)? * white)
        }
        _ => Err(Error::input("non-centered update applies to process decays only")),
    }
}

/// Log density of a process decay with the whitened field held fixed: the
/// field is recolored for each candidate, so only the data fit varies.
pub fn decay_noncentered_log_density(state: &ModelState, spec: &ModelSpec, kind: DecayKind, candidate: f64) -> f64 {
    if !(candidate > 0.0 && candidate < DECAY_MAX) {
        return f64::NEG_INFINITY;
    }
    let which = match kind {
        DecayKind::PhiUs | DecayKind::PhiUt => Process::U,
        DecayKind::PhiVs | DecayKind::PhiVt => Process::V,
        _ => return f64::NEG_INFINITY,
    };
    let (resid, first) = field_residual(state, spec, which);
    match recolored_field(state, spec, kind, candidate) {
        Ok(field) => field_fit(&resid, first, &field),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Slice update of a process decay in the non-centered parameterization,
/// moving the field with it.
pub fn update_decay_noncentered<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    kind: DecayKind,
    tuning: &SliceTuning,
    rng: &mut R,
) -> Result<()> {
    let which = match kind {
        DecayKind::PhiUs | DecayKind::PhiUt => Process::U,
        DecayKind::PhiVs | DecayKind::PhiVt => Process::V,
        _ => return Err(Error::input("non-centered update applies to process decays only")),
    };
    let (resid, first) = field_residual(state, spec, which);
    let current = state.decay.get(kind);
    let white = match kind {
        DecayKind::PhiUt | DecayKind::PhiVt => ar1_whiten(state.process(which), current),
        _ => spatial_factor(spec, current)?
            .solve_lower_triangular(state.process(which))
            .ok_or_else(|| Error::numerical("singular spatial factor"))?,
    };
    let recolor = |phi: f64| -> Result<DMatrix<f64>> {
        match kind {
            DecayKind::PhiUt | DecayKind::PhiVt => Ok(ar1_color(&white, phi)),
            _ => Ok(spatial_factor(spec, phi)? * &white),
        }
    };
    let cfg = SliceConfig::new(tuning.decay_width, tuning.max_stepouts, 0.0, DECAY_MAX)?;
    let draw = slice_step(
        |phi| match recolor(phi) {
            Ok(field) => field_fit(&resid, first, &field),
            Err(_) => f64::NEG_INFINITY,
        },
        current,
        &cfg,
        rng,
    )?;
    let field = recolor(draw.value)?;
    match which {
        Process::U => state.u = field,
        Process::V => state.v = field,
    }
    state.set_decay(spec, kind, draw.value)
}

/// Update the process decays and, for each regime holding data, its
/// coefficient-field decays.
pub fn update_decays<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    tuning: &SliceTuning,
    rng: &mut R,
) -> Result<()> {
    let t = spec.n_times();
    if state.t0 < t {
        update_decay(state, spec, DecayKind::PhiVt, tuning, rng)?;
        update_decay(state, spec, DecayKind::PhiVs, tuning, rng)?;
    }
    update_decay(state, spec, DecayKind::PhiUt, tuning, rng)?;
    update_decay(state, spec, DecayKind::PhiUs, tuning, rng)?;
    for h in 0..spec.n_varying() {
        if state.t0 > 0 {
            update_decay(state, spec, DecayKind::Omega(h), tuning, rng)?;
        }
        if state.t0 < t {
            update_decay(state, spec, DecayKind::OmegaStar(h), tuning, rng)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Changepoint

/// Normalized log pmf of `t0` over `support` (inclusive), returned in
/// order of `support`.
pub fn changepoint_log_pmf(state: &ModelState, spec: &ModelSpec, support: (usize, usize)) -> Vec<f64> {
    let n = spec.n_locations();
    let big_t = spec.n_times();
    let (lo, hi) = support;
    assert!(lo <= hi && hi <= big_t, "changepoint support ({lo}, {hi}) outside 0..={big_t}");
    let x = &spec.design().x;
    let pre_mean = x * &state.theta;
    let post_mean = x * &state.theta_star;
    let mut ss_pre = vec![0.0; big_t];
    let mut ss_post = vec![0.0; big_t];
    for t in 0..big_t {
        for i in 0..n {
            let idx = t * n + i;
            let base = state.pi[idx] - state.u[(i, t)];
            let a = base - pre_mean[idx];
            let b = base - post_mean[idx] - state.v[(i, t)];
            ss_pre[t] += a * a;
            ss_post[t] += b * b;
        }
    }
    // cumulative: pre over 0..t0, post over t0..T
    let mut pre_prefix = vec![0.0; big_t + 1];
    let mut post_suffix = vec![0.0; big_t + 1];
    for t in 0..big_t {
        pre_prefix[t + 1] = pre_prefix[t] + ss_pre[t];
    }
    for t in (0..big_t).rev() {
        post_suffix[t] = post_suffix[t + 1] + ss_post[t];
    }
    let logp: Vec<f64> = (lo..=hi).map(|c| -0.5 * (pre_prefix[c] + post_suffix[c])).collect();
    let norm = ln_sum_exp(&logp);
    logp.into_iter().map(|l| l - norm).collect()
}

/// Draw `t0` from its full conditional restricted to `support`.
pub fn update_changepoint<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    support: (usize, usize),
    rng: &mut R,
) -> Result<()> {
    if support.0 == support.1 {
        state.t0 = support.0;
        return Ok(());
    }
    let logp = changepoint_log_pmf(state, spec, support);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = support.1;
    for (offset, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            chosen = support.0 + offset;
            break;
        }
    }
    state.t0 = chosen;
    Ok(())
}

/// Log pmf of `t0` over `support` with both coefficient vectors integrated
/// against their Gaussian priors, normalized, in support order.
pub fn changepoint_collapsed_log_pmf(state: &ModelState, spec: &ModelSpec, support: (usize, usize)) -> Result<Vec<f64>> {
    let n = spec.n_locations();
    let k = spec.k();
    let big_t = spec.n_times();
    let (lo, hi) = support;
    assert!(lo <= hi && hi <= big_t, "changepoint support ({lo}, {hi}) outside 0..={big_t}");
    let x = &spec.design().x;
    // prefix sums over weeks of XᵀX, Xᵀr and rᵀr for both residual kinds
    let mut xtx = vec![DMatrix::zeros(k, k); big_t + 1];
    let mut xr_pre = vec![DVector::zeros(k); big_t + 1];
    let mut xr_post = vec![DVector::zeros(k); big_t + 1];
    let mut rr_pre = vec![0.0; big_t + 1];
    let mut rr_post = vec![0.0; big_t + 1];
    for t in 0..big_t {
        let xt = x.rows(t * n, n);
        let base = state.pi.rows(t * n, n) - state.u.column(t);
        let post = &base - state.v.column(t);
        xtx[t + 1] = &xtx[t] + xt.transpose() * xt;
        xr_pre[t + 1] = &xr_pre[t] + xt.transpose() * &base;
        xr_post[t + 1] = &xr_post[t] + xt.transpose() * &post;
        rr_pre[t + 1] = rr_pre[t] + base.norm_squared();
        rr_post[t + 1] = rr_post[t] + post.norm_squared();
    }
    let p_pre = state.prior_precision(spec, Regime::Pre);
    let p_post = state.prior_precision(spec, Regime::Post);
    let ld_pre = chol_ln_det(&cholesky_with_jitter(&p_pre)?.0);
    let ld_post = chol_ln_det(&cholesky_with_jitter(&p_post)?.0);
    let block = |prior: &DMatrix<f64>, prior_ld: f64, gram: DMatrix<f64>, xr: DVector<f64>, rr: f64| -> Result<f64> {
        let (chol, _) = cholesky_with_jitter(&(prior + gram))?;
        let solved = chol.solve(&xr);
        Ok(0.5 * (prior_ld - chol_ln_det(&chol) + xr.dot(&solved) - rr))
    };
    let mut logp = Vec::with_capacity(hi - lo + 1);
    for c in lo..=hi {
        let pre = block(&p_pre, ld_pre, xtx[c].clone(), xr_pre[c].clone(), rr_pre[c])?;
        let post = block(
            &p_post,
            ld_post,
            &xtx[big_t] - &xtx[c],
            &xr_post[big_t] - &xr_post[c],
            rr_post[big_t] - rr_post[c],
        )?;
        logp.push(pre + post);
    }
    let norm = ln_sum_exp(&logp);
    Ok(logp.into_iter().map(|l| l - norm).collect())
}

/// Blocked draw of `(t0, θ, θ*)`: `t0` from its pmf with both coefficient
/// vectors integrated out, then each coefficient vector from its
/// conditional given the new `t0`. A regime without data draws from its
/// prior.
pub fn update_changepoint_collapsed<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    support: (usize, usize),
    rng: &mut R,
) -> Result<()> {
    if support.0 == support.1 {
        return Ok(());
    }
    let logp = changepoint_collapsed_log_pmf(state, spec, support)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = support.1;
    for (offset, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            chosen = support.0 + offset;
            break;
        }
    }
    state.t0 = chosen;
    for regime in [Regime::Pre, Regime::Post] {
        let cond = coefficient_conditional(state, spec, regime).unwrap_or_else(|| CanonicalGaussian {
            precision: state.prior_precision(spec, regime),
            potential: DVector::zeros(spec.k()),
        });
        let draw = cond.sample(rng)?;
        match regime {
            Regime::Pre => state.theta = draw,
            Regime::Post => state.theta_star = draw,
        }
    }
    Ok(())
}

/// One rotated component of `V`: an AR(1) series with marginal variance
/// `lambda`, observed with unit noise, filtered backward from the last
/// week. `ll[t]` is the log-likelihood of weeks `t..T`, and `mean[t]`,
/// `var[t]` are the moments of the state at `t` given those weeks.
struct SuffixFilter {
    ll: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn suffix_filter(y: &[f64], lambda: f64, rho: f64) -> SuffixFilter {
    let t = y.len();
    let q = lambda * (1.0 - rho * rho);
    let mut out = SuffixFilter { ll: vec![0.0; t + 1], mean: vec![0.0; t], var: vec![0.0; t] };
    let (mut m, mut p) = (0.0, lambda);
    for s in (0..t).rev() {
        let sv = p + 1.0;
        let e = y[s] - m;
        out.ll[s] = out.ll[s + 1] - 0.5 * ((std::f64::consts::TAU * sv).ln() + e * e / sv);
        m += p / sv * e;
        p /= sv;
        out.mean[s] = m;
        out.var[s] = p;
        m *= rho;
        p = rho * rho * p + q;
    }
    out
}

/// Spatial eigenbasis of `V`'s prior, taken from the cached precision so
/// it matches the density used by every other update: `(Q, λ)` with
/// `Σ_vs = Q diag(λ) Qᵀ`.
fn field_eigenbasis(state: &ModelState) -> (DMatrix<f64>, Vec<f64>) {
    let eig = nalgebra::SymmetricEigen::new(state.factors.v_s.precision.clone());
    let lambda = eig.eigenvalues.iter().map(|&mu| 1.0 / mu).collect();
    (eig.eigenvectors, lambda)
}

/// Post-change residual `π − Xθ* − U` rotated into the eigenbasis, one
/// filter per component.
fn field_filters(state: &ModelState, spec: &ModelSpec, q: &DMatrix<f64>, lambda: &[f64]) -> Vec<SuffixFilter> {
    let n = spec.n_locations();
    let big_t = spec.n_times();
    let post = &spec.design().x * &state.theta_star;
    let resid = DMatrix::from_fn(n, big_t, |i, t| state.pi[t * n + i] - post[t * n + i] - state.u[(i, t)]);
    let rotated = q.transpose() * resid;
    let rho = (-state.decay.phi_vt).exp();
    (0..n)
        .map(|j| {
            let y: Vec<f64> = rotated.row(j).iter().copied().collect();
            suffix_filter(&y, lambda[j], rho)
        })
        .collect()
}

/// Log pmf of `t0` over `support` with `V` integrated against its prior,
/// normalized, in support order.
pub fn changepoint_field_log_pmf(state: &ModelState, spec: &ModelSpec, support: (usize, usize)) -> Vec<f64> {
    let (q, lambda) = field_eigenbasis(state);
    field_log_pmf(state, spec, support, &field_filters(state, spec, &q, &lambda))
}

fn field_log_pmf(state: &ModelState, spec: &ModelSpec, support: (usize, usize), filters: &[SuffixFilter]) -> Vec<f64> {
    let n = spec.n_locations();
    let big_t = spec.n_times();
    let (lo, hi) = support;
    assert!(lo <= hi && hi <= big_t, "changepoint support ({lo}, {hi}) outside 0..={big_t}");
    let pre = &spec.design().x * &state.theta;
    let half_ln_tau = 0.5 * std::f64::consts::TAU.ln();
    let mut pre_prefix = vec![0.0; big_t + 1];
    for t in 0..big_t {
        let mut week = 0.0;
        for i in 0..n {
            let r = state.pi[t * n + i] - pre[t * n + i] - state.u[(i, t)];
            week -= 0.5 * r * r + half_ln_tau;
        }
        pre_prefix[t + 1] = pre_prefix[t] + week;
    }
    let logp: Vec<f64> = (lo..=hi).map(|c| pre_prefix[c] + filters.iter().map(|f| f.ll[c]).sum::<f64>()).collect();
    let norm = ln_sum_exp(&logp);
    logp.into_iter().map(|l| l - norm).collect()
}

fn draw_field<R: Rng + ?Sized>(
    state: &mut ModelState,
    filters: &[SuffixFilter],
    q: &DMatrix<f64>,
    lambda: &[f64],
    rng: &mut R,
) {
    let (n, big_t) = (state.v.nrows(), state.v.ncols());
    let t0 = state.t0;
    let rho = (-state.decay.phi_vt).exp();
    let mut rotated = DMatrix::zeros(n, big_t);
    for j in 0..n {
        let (f, lam) = (&filters[j], lambda[j]);
        let step = lam * (1.0 - rho * rho);
        let mut z = || -> f64 { rng.sample(rand_distr::StandardNormal) };
        if t0 < big_t {
            rotated[(j, t0)] = f.mean[t0] + f.var[t0].sqrt() * z();
            for t in t0 + 1..big_t {
                let prec = 1.0 / f.var[t] + rho * rho / step;
                let mean = (f.mean[t] / f.var[t] + rho * rotated[(j, t - 1)] / step) / prec;
                rotated[(j, t)] = mean + z() / prec.sqrt();
            }
        } else {
            rotated[(j, big_t - 1)] = lam.sqrt() * z();
        }
        for t in (0..t0.min(big_t - 1)).rev() {
            rotated[(j, t)] = rho * rotated[(j, t + 1)] + step.sqrt() * z();
        }
    }
    state.v = q * rotated;
}

/// Draw `V` exactly from its full conditional given the current `t0`:
/// the post-change weeks by forward sampling on the backward filter, the
/// earlier weeks from the AR(1) prior conditional.
pub fn update_field_given_changepoint<R: Rng + ?Sized>(state: &mut ModelState, spec: &ModelSpec, rng: &mut R) {
    let (q, lambda) = field_eigenbasis(state);
    let filters = field_filters(state, spec, &q, &lambda);
    draw_field(state, &filters, &q, &lambda, rng);
}

/// Blocked draw of `(t0, V)`: `t0` from its pmf with `V` integrated out,
/// then `V` from its conditional given the new `t0`.
pub fn update_changepoint_field<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    support: (usize, usize),
    rng: &mut R,
) -> Result<()> {
    if support.0 == support.1 {
        return Ok(());
    }
    let (q, lambda) = field_eigenbasis(state);
    let filters = field_filters(state, spec, &q, &lambda);
    let logp = field_log_pmf(state, spec, support, &filters);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = support.1;
    for (offset, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            chosen = support.0 + offset;
            break;
        }
    }
    state.t0 = chosen;
    draw_field(state, &filters, &q, &lambda, rng);
    Ok(())
}

/// Translate a process field against the intercepts: `U − c` with both
/// intercepts `+ c`, or `V − c` with the post-change intercept `+ c`. The
/// latent means of data-bearing entries are unchanged, so `c` is drawn
/// exactly from the Gaussian formed by the field prior and the intercept
/// priors.
pub fn update_level_shift<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    which: Process,
    rng: &mut R,
) -> Result<()> {
    let (ft, fs) = state.process_factors(which);
    let qs1: DVector<f64> = fs.precision.column_sum();
    let qt1: DVector<f64> = ft.precision.column_sum();
    let field = state.process(which);
    let cross = qs1.dot(&(field * &qt1));
    let curvature = qs1.sum() * qt1.sum();
    let kappa = spec.kappa();
    let (precision, potential) = match which {
        Process::U => (curvature + 2.0 / kappa, cross - (state.theta[0] + state.theta_star[0]) / kappa),
        Process::V => (curvature + 1.0 / kappa, cross - state.theta_star[0] / kappa),
    };
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    let c = potential / precision + z / precision.sqrt();
    match which {
        Process::U => {
            state.u.add_scalar_mut(-c);
            state.theta[0] += c;
            state.theta_star[0] += c;
        }
        Process::V => {
            state.v.add_scalar_mut(-c);
            state.theta_star[0] += c;
        }
    }
    Ok(())
}

/// `−½ tr(Q_s F Q_t Fᵀ)`: log prior density of `F` under the process
/// covariance of `which`, up to a constant.
pub fn process_prior_quadratic(state: &ModelState, which: Process, field: &DMatrix<f64>) -> f64 {
    let (ft, fs) = state.process_factors(which);
    -0.5 * trace_product(&fs.precision, field, &ft.precision)
}

/// `U` after moving the changepoint from `state.t0` to `new_t0` such that
/// every latent mean stays the same: each week that switches regime has
/// the difference of the two regime means moved into `U`.
pub fn shifted_u(state: &ModelState, spec: &ModelSpec, new_t0: usize) -> DMatrix<f64> {
    let mut u = state.u.clone();
    let (lo, hi) = if new_t0 > state.t0 { (state.t0, new_t0) } else { (new_t0, state.t0) };
    for t in lo..hi {
        let rows = spec.design().time_rows(t);
        let x = spec.design().x.rows(rows.start, rows.len());
        let post_minus_pre = x * (&state.theta_star - &state.theta) + state.v.column(t);
        let sign = if new_t0 > state.t0 { 1.0 } else { -1.0 };
        let mut col = u.column_mut(t);
        col.axpy(sign, &post_minus_pre, 1.0);
    }
    u
}

/// Log acceptance ratio of the mean-preserving changepoint move to `new_t0`.
pub fn changepoint_shift_log_ratio(state: &ModelState, spec: &ModelSpec, new_t0: usize) -> f64 {
    let proposed = shifted_u(state, spec, new_t0);
    process_prior_quadratic(state, Process::U, &proposed) - process_prior_quadratic(state, Process::U, &state.u)
}

/// Metropolis moves that relocate t0 while translating the affected
/// columns of `U` so that the latent means, and hence the likelihood of
/// π, are unchanged. The first attempt proposes uniformly over the whole
/// support, the rest uniformly within `±max(2, T/6)` weeks; both are
/// symmetric, so only the prior of `U` enters the ratio.
/// Returns the number of accepted moves.
pub fn update_changepoint_shift<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    support: (usize, usize),
    attempts: usize,
    rng: &mut R,
) -> Result<usize> {
    if support.0 == support.1 {
        return Ok(0);
    }
    let reach = (spec.n_times() / 6).max(2);
    let mut accepted = 0;
    for attempt in 0..attempts {
        let proposal = if attempt == 0 {
            Some(rng.random_range(support.0..=support.1))
        } else {
            let step = rng.random_range(1..=reach);
            let up: bool = rng.random();
            if up { state.t0.checked_add(step) } else { state.t0.checked_sub(step) }
        };
        let log_u = rng.random::<f64>().ln();
        let Some(new_t0) = proposal.filter(|&c| c >= support.0 && c <= support.1) else {
            continue;
        };
        let proposed = shifted_u(state, spec, new_t0);
        let ratio = process_prior_quadratic(state, Process::U, &proposed) - process_prior_quadratic(state, Process::U, &state.u);
        if log_u < ratio {
            state.u = proposed;
            state.t0 = new_t0;
            accepted += 1;
        }
    }
    Ok(accepted)
}
