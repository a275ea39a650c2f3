//! Multi-chain Gibbs driver, trace storage and convergence monitoring.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditionals::{
    update_changepoint, update_changepoint_collapsed, update_changepoint_field, update_changepoint_shift, update_coefficients, update_cutpoints, update_decay, update_decay_noncentered, update_latent, update_level_shift, update_process_slice,
    CutPoints, DecayKind, DecayParams, ModelSpec, ModelState, Process, Regime, SliceTuning, DECAY_MAX,
};
use crate::error::{Error, Result};
use crate::rngkit::RngStream;
use crate::selection::{harmonic_mean_marginal, observed_likelihood, HarmonicMean};

/// Which blocks a sweep updates. Everything is on by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateMask {
    pub latent: bool,
    pub theta: bool,
    pub theta_star: bool,
    pub cuts: bool,
    pub u: bool,
    pub v: bool,
    pub phi_u: bool,
    pub phi_v: bool,
    pub omega: bool,
    pub changepoint: bool,
    pub changepoint_shift: bool,
    pub changepoint_collapsed: bool,
    pub changepoint_field: bool,
    pub noncentered: bool,
    pub level_shift: bool,
}

impl Default for UpdateMask {
    fn default() -> Self {
        Self {
            latent: true,
            theta: true,
            theta_star: true,
            cuts: true,
            u: true,
            v: true,
            phi_u: true,
            phi_v: true,
            omega: true,
            changepoint: true,
            changepoint_shift: true,
            changepoint_collapsed: true,
            changepoint_field: true,
            noncentered: true,
            level_shift: true,
        }
    }
}

/// Changepoint model `M₁` or the single-regime model `M₂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Changepoint,
    NoChange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub kappa: f64,
    pub tuning: SliceTuning,
    /// Keep π, U and V every this many retained draws; 0 keeps none.
    pub snapshot_every: usize,
    pub rhat_threshold: f64,
    /// Parameters checked for convergence; `None` selects the fixed
    /// effects of both regimes, the cut points, the process decays and t0.
    pub monitored: Option<Vec<String>>,
    /// Inclusive subrange of `0..=T` that t0 may take.
    pub changepoint_support: Option<(usize, usize)>,
    pub mask: UpdateMask,
    /// Mean-preserving Metropolis relocations of t0 per sweep.
    pub shift_proposals: usize,
    /// Leading burn-in sweeps during which `U`, `V` and their decays are
    /// held at their initial values.
    pub fixed_field_warmup: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            n_iterations: 6000,
            burn_in: 2000,
            thin: 2,
            seed: 1,
            kappa: 1.0,
            tuning: SliceTuning::default(),
            snapshot_every: 10,
            rhat_threshold: 1.1,
            monitored: None,
            changepoint_support: None,
            mask: UpdateMask::default(),
            shift_proposals: 5,
            fixed_field_warmup: 250,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::input("n_chains must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::input("thin must be at least 1"));
        }
        if self.burn_in >= self.n_iterations {
            return Err(Error::input(format!(
                "burn_in ({}) must be smaller than n_iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::input(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.tuning.cut_width > 0.0) || !(self.tuning.decay_width > 0.0) || self.tuning.max_stepouts == 0 {
            return Err(Error::input("slice widths must be positive and max_stepouts at least 1"));
        }
        if let Some((lo, hi)) = self.changepoint_support {
            if lo > hi {
                return Err(Error::input(format!("changepoint support ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }

    /// Draws kept per chain, `⌊(N − B)/thin⌋`.
    pub fn retained(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thin
    }

    /// Effective t0 support for a model on `n_times` weeks.
    pub fn support(&self, kind: ModelKind, n_times: usize) -> Result<(usize, usize)> {
        match kind {
            ModelKind::NoChange => Ok((n_times, n_times)),
            ModelKind::Changepoint => {
                let (lo, hi) = self.changepoint_support.unwrap_or((0, n_times));
                if hi > n_times || lo > hi {
                    return Err(Error::input(format!("changepoint support ({lo}, {hi}) outside 0..={n_times}")));
                }
                Ok((lo, hi))
            }
        }
    }
}

/// Starting state of chain `chain_index`: zero processes, standard
/// normal coefficients, cut points `0, 1, 2, …`, uniform decays and t0,
/// and each latent value at the middle of its window.
pub fn init_chain(spec: &ModelSpec, support: (usize, usize), rng: &mut RngStream) -> Result<ModelState> {
    let (n, t, k) = (spec.n_locations(), spec.n_times(), spec.k());
    let theta = DVector::from_fn(k, |_, _| rng.standard_normal());
    let theta_star = DVector::from_fn(k, |_, _| rng.standard_normal());
    let cuts = CutPoints::initial(spec.categories());
    let mut uniform_decay = || DECAY_MAX * rng.open01();
    let h = spec.n_varying();
    let decay = DecayParams {
        phi_us: uniform_decay(),
        phi_ut: uniform_decay(),
        phi_vs: uniform_decay(),
        phi_vt: uniform_decay(),
        omega: (0..h).map(|_| uniform_decay()).collect(),
        omega_star: (0..h).map(|_| uniform_decay()).collect(),
    };
    let t0 = if support.0 == support.1 { support.0 } else { rng.random_range(support.0..=support.1) };
    let pi = DVector::from_iterator(
        spec.len(),
        spec.y().iter().map(|&c| {
            let (lo, hi) = cuts.window(c);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (false, _) => hi - 1.0,
                (_, false) => lo + 1.0,
            }
        }),
    );
    ModelState::new(spec, pi, DMatrix::zeros(n, t), DMatrix::zeros(n, t), theta, theta_star, cuts, decay, t0)
}

/// One full Gibbs sweep.
///
/// Blocks belonging to a regime with no observations (θ, ω when t0 = 0;
/// θ*, V, φ_v, ω* when t0 = T) are left unchanged.
pub fn sweep(
    state: &mut ModelState,
    spec: &ModelSpec,
    cfg: &FitConfig,
    support: (usize, usize),
    rng: &mut RngStream,
) -> Result<()> {
    let mask = &cfg.mask;
    let big_t = spec.n_times();
    if mask.latent {
        update_latent(state, spec, rng)?;
    }
    if mask.theta {
        update_coefficients(state, spec, Regime::Pre, rng)?;
    }
    if mask.theta_star {
        update_coefficients(state, spec, Regime::Post, rng)?;
    }
    if mask.cuts {
        update_cutpoints(state, spec, &cfg.tuning, rng)?;
    }
    if mask.u {
        for t in 0..big_t {
            update_process_slice(state, spec, Process::U, t, rng)?;
        }
    }
    let post_active = state.t0 < big_t;
    let pre_active = state.t0 > 0;
    if mask.v && post_active {
        for t in 0..big_t {
            update_process_slice(state, spec, Process::V, t, rng)?;
        }
    }
    if mask.level_shift {
        if mask.u {
            update_level_shift(state, spec, Process::U, rng)?;
        }
        if mask.v && post_active {
            update_level_shift(state, spec, Process::V, rng)?;
        }
    }
    if mask.phi_v && post_active {
        update_decay(state, spec, DecayKind::PhiVt, &cfg.tuning, rng)?;
        update_decay(state, spec, DecayKind::PhiVs, &cfg.tuning, rng)?;
        if mask.noncentered {
            update_decay_noncentered(state, spec, DecayKind::PhiVt, &cfg.tuning, rng)?;
            update_decay_noncentered(state, spec, DecayKind::PhiVs, &cfg.tuning, rng)?;
        }
    }
    if mask.phi_u {
        update_decay(state, spec, DecayKind::PhiUt, &cfg.tuning, rng)?;
        update_decay(state, spec, DecayKind::PhiUs, &cfg.tuning, rng)?;
        if mask.noncentered {
            update_decay_noncentered(state, spec, DecayKind::PhiUt, &cfg.tuning, rng)?;
            update_decay_noncentered(state, spec, DecayKind::PhiUs, &cfg.tuning, rng)?;
        }
    }
    if mask.omega {
        for h in 0..spec.n_varying() {
            if pre_active {
                update_decay(state, spec, DecayKind::Omega(h), &cfg.tuning, rng)?;
            }
            if post_active {
                update_decay(state, spec, DecayKind::OmegaStar(h), &cfg.tuning, rng)?;
            }
        }
    }
    if mask.changepoint {
        update_changepoint(state, spec, support, rng)?;
    }
    if mask.changepoint_shift {
        update_changepoint_shift(state, spec, support, cfg.shift_proposals, rng)?;
    }
    if mask.changepoint_collapsed {
        update_changepoint_collapsed(state, spec, support, rng)?;
    }
    if mask.changepoint_field && mask.v {
        update_changepoint_field(state, spec, support, rng)?;
    }
    Ok(())
}

/// Latent field and processes at one retained draw, plus what is needed
/// to recompute its likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub draw: usize,
    pub pi: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub cuts: Vec<f64>,
    pub t0: usize,
}

/// Retained draws of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub chain: usize,
    /// One row per retained draw, columns as in [`TraceStore::names`].
    pub rows: Vec<Vec<f64>>,
    /// Sweep number (1-based) of every retained draw.
    pub iterations: Vec<usize>,
    pub loglik: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Set when the chain aborted; its draws are then discarded.
    pub error: Option<String>,
}

/// Column names of the scalar trace for a model.
pub fn parameter_names(spec: &ModelSpec, kind: ModelKind) -> Vec<String> {
    let design = spec.design();
    let mut names: Vec<String> = design.labels.iter().map(|l| format!("theta.{l}")).collect();
    if kind == ModelKind::Changepoint {
        names.extend(design.labels.iter().map(|l| format!("theta_star.{l}")));
    }
    names.extend((2..spec.categories()).map(|j| format!("delta.{j}")));
    names.push("phi_us".into());
    names.push("phi_ut".into());
    if kind == ModelKind::Changepoint {
        names.push("phi_vs".into());
        names.push("phi_vt".into());
    }
    let varying = varying_names(spec);
    names.extend(varying.iter().map(|v| format!("omega.{v}")));
    if kind == ModelKind::Changepoint {
        names.extend(varying.iter().map(|v| format!("omega_star.{v}")));
    }
    names.push("t0".into());
    names
}

fn varying_names(spec: &ModelSpec) -> Vec<String> {
    let design = spec.design();
    (0..design.n_varying)
        .map(|h| {
            let label = &design.labels[design.varying_range(h).start];
            label.split('@').next().unwrap_or(label).to_string()
        })
        .collect()
}

fn default_monitored(spec: &ModelSpec, kind: ModelKind) -> Vec<String> {
    let design = spec.design();
    let fixed = &design.labels[design.fixed_range()];
    let mut names: Vec<String> = fixed.iter().map(|l| format!("theta.{l}")).collect();
    if kind == ModelKind::Changepoint {
        names.extend(fixed.iter().map(|l| format!("theta_star.{l}")));
    }
    names.extend((2..spec.categories()).map(|j| format!("delta.{j}")));
    names.push("phi_us".into());
    names.push("phi_ut".into());
    if kind == ModelKind::Changepoint {
        names.push("phi_vs".into());
        names.push("phi_vt".into());
        names.push("t0".into());
    }
    names
}

fn state_row(state: &ModelState, kind: ModelKind) -> Vec<f64> {
    let mut row: Vec<f64> = state.theta.iter().copied().collect();
    if kind == ModelKind::Changepoint {
        row.extend(state.theta_star.iter().copied());
    }
    row.extend(state.cuts.free().iter().copied());
    let d = state.decay();
    row.push(d.phi_us);
    row.push(d.phi_ut);
    if kind == ModelKind::Changepoint {
        row.push(d.phi_vs);
        row.push(d.phi_vt);
    }
    row.extend(d.omega.iter().copied());
    if kind == ModelKind::Changepoint {
        row.extend(d.omega_star.iter().copied());
    }
    row.push(state.t0 as f64);
    row
}

fn snapshot(state: &ModelState, draw: usize) -> Snapshot {
    Snapshot {
        draw,
        pi: state.pi.as_slice().to_vec(),
        u: state.u.as_slice().to_vec(),
        v: state.v.as_slice().to_vec(),
        theta: state.theta.as_slice().to_vec(),
        theta_star: state.theta_star.as_slice().to_vec(),
        cuts: state.cuts.free().to_vec(),
        t0: state.t0,
    }
}

fn run_one_chain(spec: &ModelSpec, cfg: &FitConfig, kind: ModelKind, chain: usize) -> ChainTrace {
    let mut out = ChainTrace {
        chain,
        rows: Vec::with_capacity(cfg.retained()),
        iterations: Vec::with_capacity(cfg.retained()),
        loglik: Vec::with_capacity(cfg.retained()),
        snapshots: Vec::new(),
        error: None,
    };
    let result = (|| -> Result<()> {
        let support = cfg.support(kind, spec.n_times())?;
        let mut rng = RngStream::new(cfg.seed, chain as u64);
        let mut state = init_chain(spec, support, &mut rng)?;
        let mut warm = cfg.clone();
        warm.mask.u = false;
        warm.mask.v = false;
        warm.mask.phi_u = false;
        warm.mask.phi_v = false;
        let warmup = cfg.fixed_field_warmup.min(cfg.burn_in);
        for iter in 1..=cfg.n_iterations {
            sweep(&mut state, spec, if iter <= warmup { &warm } else { cfg }, support, &mut rng)?;
            if iter > cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0 {
                let draw = out.rows.len();
                out.rows.push(state_row(&state, kind));
                out.iterations.push(iter);
                out.loglik.push(observed_likelihood(&state, spec));
                if cfg.snapshot_every > 0 && draw % cfg.snapshot_every == 0 {
                    out.snapshots.push(snapshot(&state, draw));
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("chain {chain} aborted: {e}");
        out.rows.clear();
        out.iterations.clear();
        out.loglik.clear();
        out.snapshots.clear();
        out.error = Some(e.to_string());
    }
    out
}

/// Potential scale reduction of one scalar across chains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RHat {
    /// `None` when the within-chain variance is zero.
    pub value: Option<f64>,
    /// True when the chains disagree; only meaningful when `value` is
    /// `None` (chains stuck at different constants).
    pub chains_differ: bool,
}

impl RHat {
    pub fn converged(&self, threshold: f64) -> bool {
        match self.value {
            Some(v) => v <= threshold,
            None => !self.chains_differ,
        }
    }
}

/// Classical Gelman–Rubin statistic `sqrt(V̂/W)` with
/// `V̂ = (n−1)/n · W + B/n`.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<RHat> {
    if chains.len() < 2 {
        return Err(Error::input(format!("Gelman-Rubin needs at least 2 chains, got {}", chains.len())));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 10 {
        return Err(Error::input(format!("Gelman-Rubin needs at least 10 draws per chain, got {n}")));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return Ok(RHat { value: None, chains_differ: b > 0.0 });
    }
    let v_hat = (nf - 1.0) / nf * w + b / nf;
    Ok(RHat { value: Some((v_hat / w).sqrt()), chains_differ: b > 0.0 })
}

/// Retained draws of all chains plus convergence metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStore {
    pub kind: ModelKind,
    pub names: Vec<String>,
    pub chains: Vec<ChainTrace>,
    pub monitored: Vec<String>,
    pub rhat: Vec<(String, Option<RHat>)>,
    pub converged: bool,
    pub n_times: usize,
    pub config: FitConfig,
}

/// Run every chain (in parallel on the current rayon pool) and assemble
/// the traces.
pub fn run_chains(spec: &ModelSpec, cfg: &FitConfig, kind: ModelKind) -> Result<TraceStore> {
    cfg.validate()?;
    cfg.support(kind, spec.n_times())?;
    let names = parameter_names(spec, kind);
    let monitored = cfg.monitored.clone().unwrap_or_else(|| default_monitored(spec, kind));
    for m in &monitored {
        if !names.contains(m) {
            return Err(Error::input(format!("monitored parameter '{m}' is not in the trace")));
        }
    }
    let chains: Vec<ChainTrace> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_one_chain(spec, cfg, kind, c))
        .collect();
    if chains.iter().all(|c| c.error.is_some()) {
        let msg = chains[0].error.clone().unwrap_or_default();
        return Err(Error::numerical(format!("every chain failed; first error: {msg}")));
    }
    let mut store = TraceStore {
        kind,
        names,
        chains,
        monitored,
        rhat: Vec::new(),
        converged: true,
        n_times: spec.n_times(),
        config: cfg.clone(),
    };
    store.compute_rhat();
    Ok(store)
}

/// Mean, spread and interval of one scalar parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangepointSummary {
    pub mode: usize,
    pub label: String,
    pub q025: f64,
    pub q975: f64,
    /// Posterior probability of each visited value of t0.
    pub pmf: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: ModelKind,
    pub seed: u64,
    pub n_chains: usize,
    pub surviving_chains: usize,
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub retained_per_chain: usize,
    pub converged: bool,
    pub log_marginal_likelihood: f64,
    pub log_marginal_likelihood_mcse: f64,
    pub changepoint: Option<ChangepointSummary>,
    pub parameters: Vec<ParamSummary>,
}

impl TraceStore {
    fn surviving(&self) -> impl Iterator<Item = &ChainTrace> {
        self.chains.iter().filter(|c| c.error.is_none())
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::input(format!("no parameter named '{name}' in the trace")))
    }

    /// Draws of `name`, one vector per surviving chain.
    pub fn per_chain(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let j = self.column_index(name)?;
        Ok(self.surviving().map(|c| c.rows.iter().map(|r| r[j]).collect()).collect())
    }

    /// Draws of `name` pooled over surviving chains.
    pub fn pooled(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.per_chain(name)?.concat())
    }

    pub fn loglik_pooled(&self) -> Vec<f64> {
        self.surviving().flat_map(|c| c.loglik.iter().copied()).collect()
    }

    fn compute_rhat(&mut self) {
        let threshold = self.config.rhat_threshold;
        let mut converged = self.surviving().count() == self.chains.len();
        let mut out = Vec::with_capacity(self.monitored.len());
        for name in &self.monitored {
            let r = self.per_chain(name).ok().and_then(|c| gelman_rubin(&c).ok());
            if let Some(r) = r {
                converged &= r.converged(threshold);
            }
            out.push((name.clone(), r));
        }
        self.rhat = out;
        self.converged = converged;
    }

    /// Most frequent t0 over the pooled draws; ties go to the earliest.
    pub fn t0_mode(&self) -> Result<usize> {
        let pmf = self.t0_pmf()?;
        let mut best = pmf[0];
        for &(t, p) in &pmf[1..] {
            if p > best.1 {
                best = (t, p);
            }
        }
        Ok(best.0)
    }

    /// Empirical posterior of t0 over its visited values.
    pub fn t0_pmf(&self) -> Result<Vec<(usize, f64)>> {
        let draws = self.pooled("t0")?;
        if draws.is_empty() {
            return Err(Error::numerical("no retained draws"));
        }
        let mut counts = vec![0usize; self.n_times + 1];
        for d in &draws {
            counts[*d as usize] += 1;
        }
        let total = draws.len() as f64;
        Ok(counts
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c > 0)
            .map(|(t, c)| (t, c as f64 / total))
            .collect())
    }

    pub fn harmonic_mean(&self) -> Result<HarmonicMean> {
        harmonic_mean_marginal(&self.loglik_pooled())
    }

    pub fn summary(&self) -> Result<FitSummary> {
        let mut parameters = Vec::with_capacity(self.names.len());
        for name in &self.names {
            let mut draws = self.pooled(name)?;
            let (mean, sd) = mean_sd(&draws);
            draws.sort_by(f64::total_cmp);
            let rhat = self.per_chain(name).ok().and_then(|c| gelman_rubin(&c).ok()).and_then(|r| r.value);
            parameters.push(ParamSummary {
                name: name.clone(),
                mean,
                sd,
                q025: quantile_sorted(&draws, 0.025),
                q975: quantile_sorted(&draws, 0.975),
                rhat,
            });
        }
        let changepoint = if self.kind == ModelKind::Changepoint {
            let mode = self.t0_mode()?;
            let t0 = parameters.iter().find(|p| p.name == "t0").expect("t0 column");
            Some(ChangepointSummary {
                mode,
                label: week_label(mode),
                q025: t0.q025,
                q975: t0.q975,
                pmf: self.t0_pmf()?,
            })
        } else {
            None
        };
        let hm = self.harmonic_mean()?;
        Ok(FitSummary {
            model: self.kind,
            seed: self.config.seed,
            n_chains: self.chains.len(),
            surviving_chains: self.surviving().count(),
            n_iterations: self.config.n_iterations,
            burn_in: self.config.burn_in,
            thin: self.config.thin,
            retained_per_chain: self.config.retained(),
            converged: self.converged,
            log_marginal_likelihood: hm.log_marginal,
            log_marginal_likelihood_mcse: hm.mcse,
            changepoint,
            parameters,
        })
    }

    /// Write `traces_chain<k>.csv` (k from 1) for every surviving chain.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        for c in self.surviving() {
            let path = dir.join(format!("traces_chain{}.csv", c.chain + 1));
            let mut text = String::new();
            text.push_str("iteration,");
            text.push_str(&self.names.join(","));
            text.push_str(",loglik\n");
            for ((row, it), ll) in c.rows.iter().zip(&c.iterations).zip(&c.loglik) {
                let _ = write!(text, "{it}");
                for v in row {
                    let _ = write!(text, ",{v}");
                }
                let _ = writeln!(text, ",{ll}");
            }
            std::fs::write(&path, text).map_err(|source| Error::Io { path, source })?;
        }
        Ok(())
    }
}

/// Read a trace file back as (header, rows); every column is kept,
/// including `iteration` and `loglik`.
pub fn read_trace_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv { path: path.to_path_buf(), source })?
        .clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::input(format!("{}: '{f}' is not a number", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `57` → `"57th week"`.
pub fn week_label(week: usize) -> String {
    let suffix = match (week % 10, week % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{week}{suffix} week")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhat_iid_chains() {
        let mut rng = RngStream::new(11, 0);
        let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..10_000).map(|_| rng.standard_normal()).collect()).collect();
        let r = gelman_rubin(&chains).unwrap().value.unwrap();
        assert!((0.99..=1.05).contains(&r), "{r}");
    }

    #[test]
    fn rhat_separated_chains() {
        let mut rng = RngStream::new(12, 0);
        let a: Vec<f64> = (0..1000).map(|_| rng.standard_normal()).collect();
        let b: Vec<f64> = (0..1000).map(|_| 10.0 + rng.standard_normal()).collect();
        assert!(gelman_rubin(&[a, b]).unwrap().value.unwrap() > 3.0);
    }

    #[test]
    fn rhat_constant_chains_undefined() {
        let c = vec![2.0; 20];
        let r = gelman_rubin(&[c.clone(), c.clone()]).unwrap();
        assert_eq!(r.value, None);
        assert!(r.converged(1.1));
        let r = gelman_rubin(&[c, vec![3.0; 20]]).unwrap();
        assert_eq!(r.value, None);
        assert!(!r.converged(1.1));
        assert!(gelman_rubin(&[vec![1.0; 20]]).is_err());
        assert!(gelman_rubin(&[vec![1.0; 5], vec![2.0; 5]]).is_err());
    }

    #[test]
    fn week_labels() {
        assert_eq!(week_label(57), "57th week");
        assert_eq!(week_label(1), "1st week");
        assert_eq!(week_label(22), "22nd week");
        assert_eq!(week_label(13), "13th week");
        assert_eq!(week_label(103), "103rd week");
        assert_eq!(week_label(111), "111th week");
    }

    #[test]
    fn quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&x, 0.5), 3.0);
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 5.0);
        assert!((quantile_sorted(&x, 0.025) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = FitConfig::default();
        assert_eq!(c.retained(), 2000);
        c.n_chains = 0;
        assert!(c.validate().is_err());
        let c = FitConfig { burn_in: 10, n_iterations: 10, ..FitConfig::default() };
        assert!(c.validate().is_err());
    }
}
