//! Observed-data likelihood, marginal likelihoods, Bayes factors and
//! recursive binary segmentation.

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::conditionals::{ModelSpec, ModelState};
use crate::error::{Error, Result};
use crate::gibbs::{mean_sd, run_chains, week_label, FitConfig, ModelKind, TraceStore};
use crate::normal::{ln_cdf_diff, ln_sum_exp};
use crate::panel::{assemble_design, CovariatePanel, OrdinalPanel};

/// Decision threshold `ln 100` on the log Bayes factor.
pub fn log_bf_threshold() -> f64 {
    100f64.ln()
}

/// Segments of at most this many weeks are not fitted.
pub const MIN_FIT_WEEKS: usize = 24;
/// Minimum distance of an accepted changepoint from both segment ends.
pub const MIN_SEGMENT_WEEKS: usize = 12;

/// `Σ_i ln P(y_i | θ, θ*, U, V, δ, t0)` with unit noise.
pub fn observed_likelihood(state: &ModelState, spec: &ModelSpec) -> f64 {
    let means = state.latent_means(spec);
    spec.y()
        .iter()
        .zip(means.iter())
        .map(|(&c, &m)| {
            let (lo, hi) = state.cuts.window(c);
            ln_cdf_diff(lo - m, hi - m)
        })
        .sum()
}

/// Harmonic-mean estimate of a log marginal likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicMean {
    pub log_marginal: f64,
    /// Batch-means Monte-Carlo standard error on the log scale.
    pub mcse: f64,
    pub draws: usize,
}

/// `−(logsumexp(−ℓ) − ln m)` over the retained log-likelihoods.
pub fn harmonic_mean_marginal(loglik: &[f64]) -> Result<HarmonicMean> {
    if loglik.is_empty() {
        return Err(Error::input("harmonic mean of an empty log-likelihood trace"));
    }
    if loglik.iter().any(|l| !l.is_finite()) {
        return Err(Error::numerical("log-likelihood trace contains non-finite values"));
    }
    let m = loglik.len();
    let neg: Vec<f64> = loglik.iter().map(|l| -l).collect();
    let log_marginal = -(ln_sum_exp(&neg) - (m as f64).ln());
    Ok(HarmonicMean { log_marginal, mcse: batch_means_mcse(&neg), draws: m })
}

/// Delta-method standard error of `−ln mean(exp(x))` with batch means.
fn batch_means_mcse(neg: &[f64]) -> f64 {
    let m = neg.len();
    let batches = (m as f64).sqrt().floor() as usize;
    if batches < 2 {
        return f64::NAN;
    }
    let size = m / batches;
    let shift = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = neg.iter().map(|x| (x - shift).exp()).collect();
    let batch_means: Vec<f64> = (0..batches).map(|b| w[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let (mean, sd) = mean_sd(&batch_means);
    sd / (batches as f64).sqrt() / mean
}

/// Fit the single-regime model (t0 pinned at T).
pub fn fit_nochange(spec: &ModelSpec, cfg: &FitConfig) -> Result<TraceStore> {
    run_chains(spec, cfg, ModelKind::NoChange)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub log_bf: f64,
    pub decisive: bool,
}

/// `ln BF = ln f(Y|M₁) − ln f(Y|M₂)`, decisive above `ln 100`.
pub fn bayes_factor(logml_1: f64, logml_2: f64) -> BayesFactor {
    let log_bf = logml_1 - logml_2;
    BayesFactor { log_bf, decisive: log_bf > log_bf_threshold() }
}

impl std::fmt::Display for BayesFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.decisive { "decisive" } else { "not decisive" };
        write!(f, "log BF: {}, {verdict}", trim_number(self.log_bf))
    }
}

/// Up to two decimals without trailing zeros.
pub fn trim_number(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

// ---------------------------------------------------------------------------
// Binary segmentation

/// Inclusive 1-based week range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekRange {
    pub start: usize,
    pub end: usize,
}

impl WeekRange {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// Outcome of fitting both models on one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    /// Posterior mode of t0, counted in weeks from the segment start
    /// (0 and the segment length mean "no change").
    pub local_mode: usize,
    /// 95% interval of the local t0.
    pub interval: (f64, f64),
    pub log_bf: f64,
    pub log_ml_change: f64,
    pub log_ml_nochange: f64,
    pub mcse_change: f64,
    pub mcse_nochange: f64,
    pub converged: bool,
    pub dropped_covariates: Vec<String>,
}

/// Something that can fit a week range; the real implementation runs
/// both Gibbs samplers, tests substitute canned results.
pub trait SegmentFitter: Sync {
    fn fit(&self, range: WeekRange, seed: u64) -> Result<SegmentFit>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    Rejected,
    InsufficientData,
    TooCloseToEndpoint,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNode {
    pub path: String,
    pub stage: usize,
    pub range: WeekRange,
    pub verdict: Verdict,
    /// Every reason that argued against a split.
    pub reasons: Vec<String>,
    /// Global week of the fitted changepoint (last week of the earlier
    /// regime), when a fit produced one.
    pub changepoint: Option<usize>,
    pub changepoint_label: Option<String>,
    pub date: Option<NaiveDate>,
    pub fit: Option<SegmentFit>,
    pub error: Option<String>,
    pub children: Vec<SegmentNode>,
}

/// One row of the stage table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    pub time_horizon: String,
    pub changepoint: Option<String>,
    pub date: Option<NaiveDate>,
    pub log_bayes_factor: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub origin: Option<NaiveDate>,
    pub changepoints: Vec<usize>,
    pub stages: Vec<StageRow>,
    pub tree: SegmentNode,
}

/// Calendar date of 1-based `week` when week 1 starts on `origin`.
pub fn week_date(origin: NaiveDate, week: usize) -> Option<NaiveDate> {
    origin.checked_add_days(Days::new(7 * (week as u64).saturating_sub(1)))
}

/// 64-bit FNV-1a over the base seed and the segment path.
pub fn segment_seed(base: u64, path: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in base.to_le_bytes().iter().chain(path.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Recursive binary segmentation over `range`.
pub fn binary_segment<F: SegmentFitter>(
    fitter: &F,
    range: WeekRange,
    base_seed: u64,
    origin: Option<NaiveDate>,
) -> SegmentationReport {
    let tree = segment_node(fitter, range, "r".to_string(), 1, base_seed, origin);
    let mut changepoints = Vec::new();
    collect_accepted(&tree, &mut changepoints);
    changepoints.sort_unstable();
    let mut stages = Vec::new();
    collect_stages(&tree, &mut stages);
    stages.sort_by_key(|r: &(usize, usize, StageRow)| (r.0, r.1));
    SegmentationReport { origin, changepoints, stages: stages.into_iter().map(|r| r.2).collect(), tree }
}

fn segment_node<F: SegmentFitter>(
    fitter: &F,
    range: WeekRange,
    path: String,
    stage: usize,
    base_seed: u64,
    origin: Option<NaiveDate>,
) -> SegmentNode {
    let mut node = SegmentNode {
        path: path.clone(),
        stage,
        range,
        verdict: Verdict::InsufficientData,
        reasons: Vec::new(),
        changepoint: None,
        changepoint_label: None,
        date: None,
        fit: None,
        error: None,
        children: Vec::new(),
    };
    if range.len() <= MIN_FIT_WEEKS {
        node.reasons.push(format!("segment has {} weeks, at most {MIN_FIT_WEEKS}", range.len()));
        return node;
    }
    let fit = match fitter.fit(range, segment_seed(base_seed, &path)) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("segment {}-{} failed: {e}", range.start, range.end);
            node.verdict = Verdict::Failed;
            node.error = Some(e.to_string());
            return node;
        }
    };
    let c = fit.local_mode;
    let len = range.len();
    let decisive = fit.log_bf > log_bf_threshold();
    let near_end = c < MIN_SEGMENT_WEEKS || len - c.min(len) < MIN_SEGMENT_WEEKS;
    if c > 0 && c < len {
        let week = range.start - 1 + c;
        node.changepoint = Some(week);
        node.changepoint_label = Some(week_label(week));
        node.date = origin.and_then(|o| week_date(o, week));
    }
    if !decisive {
        node.reasons.push(format!("log Bayes factor {} does not exceed ln 100", trim_number(fit.log_bf)));
    }
    if near_end {
        node.reasons.push(format!(
            "changepoint {c} weeks into a {len}-week segment is within {MIN_SEGMENT_WEEKS} weeks of an endpoint"
        ));
    }
    node.fit = Some(fit);
    node.verdict = match (decisive, near_end) {
        (true, false) => Verdict::Accepted,
        (false, _) => Verdict::Rejected,
        (true, true) => Verdict::TooCloseToEndpoint,
    };
    if node.verdict == Verdict::Accepted {
        let week = range.start - 1 + c;
        let left = WeekRange { start: range.start, end: week };
        let right = WeekRange { start: week + 1, end: range.end };
        let (l, r) = rayon::join(
            || segment_node(fitter, left, format!("{path}0"), stage + 1, base_seed, origin),
            || segment_node(fitter, right, format!("{path}1"), stage + 1, base_seed, origin),
        );
        node.children = vec![l, r];
    }
    node
}

fn collect_accepted(node: &SegmentNode, out: &mut Vec<usize>) {
    if node.verdict == Verdict::Accepted {
        if let Some(c) = node.changepoint {
            out.push(c);
        }
    }
    for ch in &node.children {
        collect_accepted(ch, out);
    }
}

fn collect_stages(node: &SegmentNode, out: &mut Vec<(usize, usize, StageRow)>) {
    let changepoint = match node.verdict {
        Verdict::InsufficientData => Some("insufficient data".to_string()),
        Verdict::Failed => Some("failed".to_string()),
        _ => node.changepoint_label.clone().or_else(|| Some("not found".to_string())),
    };
    out.push((
        node.stage,
        node.range.start,
        StageRow {
            stage: node.stage,
            time_horizon: format!("{} to {}", week_label(node.range.start), week_label(node.range.end)),
            changepoint,
            date: node.date,
            log_bayes_factor: node.fit.as_ref().map(|f| f.log_bf),
            verdict: node.verdict,
        },
    ));
    for ch in &node.children {
        collect_stages(ch, out);
    }
}

/// Fits both models on time slices of a full panel.
pub struct PanelFitter {
    pub panel: OrdinalPanel,
    /// Standardized once over the whole panel.
    pub covariates: CovariatePanel,
    pub config: FitConfig,
}

impl PanelFitter {
    /// Model spec for a week range after dropping covariates that are
    /// constant inside it.
    pub fn segment_spec(&self, range: WeekRange) -> Result<(ModelSpec, Vec<String>)> {
        let n = self.panel.grid().n_locations();
        let panel = self.panel.slice_times(range.start - 1, range.end)?;
        let mut cov = self.covariates.slice_times(n, range.start - 1, range.end);
        let dropped = cov.drop_constant();
        for d in &dropped {
            log::info!("weeks {}-{}: dropping covariate '{d}', constant in this segment", range.start, range.end);
        }
        let design = assemble_design(panel.grid(), &cov)?;
        Ok((ModelSpec::new(&panel, design, self.config.kappa)?, dropped))
    }
}

/// Fit `M₁` and `M₂` on one spec and compare them.
pub fn compare_models(spec: &ModelSpec, cfg: &FitConfig) -> Result<(TraceStore, TraceStore, SegmentFit)> {
    let change = run_chains(spec, cfg, ModelKind::Changepoint)?;
    let nochange = fit_nochange(spec, cfg)?;
    let hm1 = change.harmonic_mean()?;
    let hm2 = nochange.harmonic_mean()?;
    let summary = change.summary()?;
    let cp = summary.changepoint.expect("changepoint model has a t0 summary");
    let fit = SegmentFit {
        local_mode: cp.mode,
        interval: (cp.q025, cp.q975),
        log_bf: hm1.log_marginal - hm2.log_marginal,
        log_ml_change: hm1.log_marginal,
        log_ml_nochange: hm2.log_marginal,
        mcse_change: hm1.mcse,
        mcse_nochange: hm2.mcse,
        converged: change.converged && nochange.converged,
        dropped_covariates: Vec::new(),
    };
    Ok((change, nochange, fit))
}

impl SegmentFitter for PanelFitter {
    fn fit(&self, range: WeekRange, seed: u64) -> Result<SegmentFit> {
        let (spec, dropped) = self.segment_spec(range)?;
        let cfg = FitConfig { seed, ..self.config.clone() };
        let (_, _, mut fit) = compare_models(&spec, &cfg)?;
        fit.dropped_covariates = dropped;
        Ok(fit)
    }
}
