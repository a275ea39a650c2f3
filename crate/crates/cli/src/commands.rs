use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stcp::conditionals::ModelSpec;
use stcp::covkernel::separable_correlation;
use stcp::gibbs::{gelman_rubin, read_trace_csv, run_chains, FitSummary, ModelKind};
use stcp::panel::{assemble_design, category_counts, CovariatePanel, IngestedPanel};
use stcp::selection::{bayes_factor, binary_segment, fit_nochange, PanelFitter, WeekRange};
use stcp::simulate::{simulate, TrueParams};

use crate::config::{load_config, validate_fit, RunConfig};
use crate::error::{io_error, CliError, CliResult};
use crate::manifest::write_manifest;

/// Overrides shared by every command that fits.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct FitFlags {
    /// Run configuration (flat TOML)
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Output directory (overrides `out` in the config)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl FitFlags {
    fn resolve(&self) -> CliResult<(RunConfig, PathBuf)> {
        let mut cfg = load_config(&self.config)?;
        if let Some(v) = self.seed {
            cfg.fit.seed = v;
        }
        if let Some(v) = self.chains {
            cfg.fit.n_chains = v;
        }
        if let Some(v) = self.iters {
            cfg.fit.n_iterations = v;
        }
        if let Some(v) = self.burnin {
            cfg.fit.burn_in = v;
        }
        if let Some(v) = self.thin {
            cfg.fit.thin = v;
        }
        validate_fit(&cfg.fit, "")?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .ok_or_else(|| CliError::usage("no output directory: pass --out or set 'out' in the config"))?;
        create_dir(&out)?;
        Ok((cfg, out))
    }

    fn inputs(&self, cfg: &RunConfig) -> Vec<PathBuf> {
        let mut v = vec![self.config.clone()];
        v.extend(cfg.input_files());
        v
    }
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn to_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

fn covariates(cfg: &RunConfig, ingested: &IngestedPanel) -> CliResult<CovariatePanel> {
    Ok(ingested.select_covariates(&cfg.fixed, &cfg.varying)?)
}

// ---------------------------------------------------------------------------

pub fn ingest(flags: &FitFlags) -> CliResult<()> {
    let (cfg, out) = flags.resolve()?;
    let ingested = cfg.load_panel()?;
    // fail early on unusable covariate selections
    covariates(&cfg, &ingested)?;
    ingested.write_json(&out.join("panel.json")).map_err(CliError::from)?;
    write_manifest(&out, "ingest", None, &flags.inputs(&cfg), to_value(&cfg))?;
    let grid = ingested.panel.grid();
    let counts: Vec<String> = category_counts(&ingested.panel).iter().map(|(c, k)| format!("{c}:{k}")).collect();
    println!(
        "panel: {} locations, {} weeks, categories {}",
        grid.n_locations(),
        grid.n_times(),
        counts.join(" ")
    );
    Ok(())
}

pub fn fit(flags: &FitFlags, no_changepoint: bool) -> CliResult<()> {
    let (cfg, out) = flags.resolve()?;
    let ingested = cfg.load_panel()?;
    let cov = covariates(&cfg, &ingested)?;
    let design = assemble_design(ingested.panel.grid(), &cov)?;
    let spec = ModelSpec::new(&ingested.panel, design, cfg.fit.kappa)?;
    let traces = if no_changepoint {
        fit_nochange(&spec, &cfg.fit)?
    } else {
        run_chains(&spec, &cfg.fit, ModelKind::Changepoint)?
    };
    traces.write_csv(&out)?;
    let summary = traces.summary()?;
    write_json(&out.join("summary.json"), &summary)?;
    let command = if no_changepoint { "fit --no-changepoint" } else { "fit" };
    write_manifest(&out, command, Some(cfg.fit.seed), &flags.inputs(&cfg), to_value(&cfg))?;
    print_fit(&summary);
    if !summary.converged {
        log::warn!("some monitored parameters exceed R-hat {}", cfg.fit.rhat_threshold);
    }
    Ok(())
}

fn print_fit(s: &FitSummary) {
    println!(
        "model {:?}: {} of {} chains, {} draws each, converged {}",
        s.model, s.surviving_chains, s.n_chains, s.retained_per_chain, s.converged
    );
    println!("log marginal likelihood {:.3} (mcse {:.3})", s.log_marginal_likelihood, s.log_marginal_likelihood_mcse);
    if let Some(cp) = &s.changepoint {
        println!("changepoint mode: {} (95% interval {}-{})", cp.label, cp.q025, cp.q975);
    }
}

pub fn segment(flags: &FitFlags) -> CliResult<()> {
    let (cfg, out) = flags.resolve()?;
    let ingested = cfg.load_panel()?;
    let cov = covariates(&cfg, &ingested)?;
    let n_times = ingested.panel.grid().n_times();
    let fitter = PanelFitter { panel: ingested.panel, covariates: cov, config: cfg.fit.clone() };
    let report = binary_segment(&fitter, WeekRange { start: 1, end: n_times }, cfg.fit.seed, cfg.origin);
    write_json(&out.join("segmentation.json"), &report)?;
    write_manifest(&out, "segment", Some(cfg.fit.seed), &flags.inputs(&cfg), to_value(&cfg))?;
    for row in &report.stages {
        let bf = row.log_bayes_factor.map(stcp::selection::trim_number).unwrap_or_else(|| "-".into());
        let date = row.date.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "stage {}\t{}\t{}\t{}\tlog BF {}\t{:?}",
            row.stage,
            row.time_horizon,
            row.changepoint.as_deref().unwrap_or("-"),
            date,
            bf,
            row.verdict
        );
    }
    println!("changepoints: {:?}", report.changepoints);
    Ok(())
}

#[derive(Serialize)]
struct TruthRecord<'a> {
    seed: u64,
    params: &'a TrueParams,
    fixed: Vec<String>,
    varying: Vec<String>,
    /// Coefficients per regime in design-column order.
    theta: Vec<Vec<f64>>,
}

pub fn simulate_cmd(params_path: Option<&Path>, seed: u64, out: &Path) -> CliResult<()> {
    let params: TrueParams = match params_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {}", p.display(), e.message())))?
        }
        None => TrueParams::default(),
    };
    create_dir(out)?;
    let sim = simulate(&params, seed)?;
    sim.write_tables(out)?;
    let truth = TruthRecord {
        seed,
        params: &params,
        fixed: sim.fixed_names(),
        varying: sim.varying_names(),
        theta: sim.truth.theta.iter().map(|t| t.iter().copied().collect()).collect(),
    };
    write_json(&out.join("truth.json"), &truth)?;
    let inputs: Vec<PathBuf> = params_path.map(|p| vec![p.to_path_buf()]).unwrap_or_default();
    write_manifest(out, "simulate", Some(seed), &inputs, to_value(&params))?;
    println!(
        "simulated {} locations x {} weeks into {}",
        sim.panel.grid().n_locations(),
        sim.panel.grid().n_times(),
        out.display()
    );
    Ok(())
}

/// Chain trace files in a directory, ordered by chain number.
fn trace_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(k) = name.strip_prefix("traces_chain").and_then(|r| r.strip_suffix(".csv")) {
            if let Ok(k) = k.parse::<usize>() {
                found.push((k, path.clone()));
            }
        }
    }
    found.sort();
    if found.len() < 2 {
        return Err(CliError::input(format!(
            "{}: need at least two traces_chain<k>.csv files, found {}",
            dir.display(),
            found.len()
        )));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

#[derive(Debug, Serialize)]
pub struct RhatRow {
    pub parameter: String,
    pub rhat: Option<f64>,
    pub converged: bool,
}

/// R̂ for every traced parameter across the chain files in `dir`.
pub fn rhat_table(dir: &Path, threshold: f64) -> CliResult<Vec<RhatRow>> {
    let files = trace_files(dir)?;
    let mut names: Option<Vec<String>> = None;
    let mut chains = Vec::new();
    for f in &files {
        let (header, rows) = read_trace_csv(f)?;
        match &names {
            None => names = Some(header),
            Some(h) if *h != header => {
                return Err(CliError::input(format!("{}: header differs from the first chain file", f.display())))
            }
            Some(_) => {}
        }
        chains.push(rows);
    }
    let names = names.unwrap_or_default();
    let mut out = Vec::new();
    for (j, name) in names.iter().enumerate() {
        if name == "iteration" || name == "loglik" {
            continue;
        }
        let per_chain: Vec<Vec<f64>> = chains.iter().map(|rows| rows.iter().map(|r| r[j]).collect()).collect();
        let r = gelman_rubin(&per_chain)?;
        out.push(RhatRow { parameter: name.clone(), rhat: r.value, converged: r.converged(threshold) });
    }
    Ok(out)
}

pub fn diagnose(traces: &Path, threshold: f64, out: Option<&Path>) -> CliResult<()> {
    let rows = rhat_table(traces, threshold)?;
    let mut text = String::from("parameter,rhat,converged\n");
    for r in &rows {
        let value = r.rhat.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into());
        text.push_str(&format!("{},{},{}\n", r.parameter, value, r.converged));
    }
    match out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("rhat.csv");
            std::fs::write(&path, &text).map_err(|e| io_error(&path, e))?;
        }
        None => print!("{text}"),
    }
    let bad = rows.iter().filter(|r| !r.converged).count();
    if bad > 0 {
        log::warn!("{bad} parameters exceed R-hat {threshold}");
    }
    Ok(())
}

fn read_logml(path: &Path) -> CliResult<f64> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    value
        .get("log_marginal_likelihood")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| CliError::input(format!("{}: no numeric 'log_marginal_likelihood'", path.display())))
}

pub fn bf(change: &Path, nochange: &Path) -> CliResult<()> {
    let b = bayes_factor(read_logml(change)?, read_logml(nochange)?);
    println!("{b}");
    Ok(())
}

/// Decay pair `(spatial, temporal)` of one process from a fit summary.
fn summary_decays(path: &Path, process: Process) -> CliResult<(f64, f64)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let summary: FitSummary =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let (s, t) = match process {
        Process::U => ("phi_us", "phi_ut"),
        Process::V => ("phi_vs", "phi_vt"),
    };
    let mean = |name: &str| {
        summary
            .parameters
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.mean)
            .ok_or_else(|| CliError::input(format!("{}: summary has no '{name}'", path.display())))
    };
    Ok((mean(s)?, mean(t)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Process {
    U,
    V,
}

#[derive(Clone, Debug, clap::Args)]
pub struct SurfaceFlags {
    /// Fit summary supplying posterior-mean decays
    #[arg(long, conflicts_with_all = ["phi_s", "phi_t"])]
    pub summary: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "u")]
    pub process: Process,
    #[arg(long, requires = "phi_t")]
    pub phi_s: Option<f64>,
    #[arg(long, requires = "phi_s")]
    pub phi_t: Option<f64>,
    #[arg(long, default_value_t = 300.0)]
    pub max_distance: f64,
    #[arg(long, default_value_t = 10.0)]
    pub distance_step: f64,
    #[arg(long, default_value_t = 20)]
    pub max_lag: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Correlation over a distance × lag grid, as `distance_km,lag_weeks,correlation` rows.
pub fn surface_rows(phi_s: f64, phi_t: f64, max_distance: f64, step: f64, max_lag: usize) -> Vec<(f64, usize, f64)> {
    let n_dist = (max_distance / step + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity((n_dist + 1) * (max_lag + 1));
    for i in 0..=n_dist {
        let d = i as f64 * step;
        for lag in 0..=max_lag {
            rows.push((d, lag, separable_correlation(phi_s, phi_t, d, lag as f64)));
        }
    }
    rows
}

pub fn corr_surface(flags: &SurfaceFlags) -> CliResult<()> {
    let (phi_s, phi_t) = match (&flags.summary, flags.phi_s, flags.phi_t) {
        (Some(p), _, _) => summary_decays(p, flags.process)?,
        (None, Some(s), Some(t)) => (s, t),
        _ => return Err(CliError::usage("pass --summary or both --phi-s and --phi-t")),
    };
    if !(phi_s > 0.0 && phi_t > 0.0) {
        return Err(CliError::input(format!("decays must be positive, got ({phi_s}, {phi_t})")));
    }
    if !(flags.distance_step > 0.0) || !(flags.max_distance >= 0.0) {
        return Err(CliError::input("distance grid needs a positive step and a nonnegative maximum"));
    }
    let mut text = String::from("distance_km,lag_weeks,correlation\n");
    for (d, lag, c) in surface_rows(phi_s, phi_t, flags.max_distance, flags.distance_step, flags.max_lag) {
        text.push_str(&format!("{d},{lag},{c}\n"));
    }
    match &flags.out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("corr_surface.csv");
            std::fs::write(&path, &text).map_err(|e| io_error(&path, e))?;
            let inputs: Vec<PathBuf> = flags.summary.iter().cloned().collect();
            let config = serde_json::json!({ "phi_s": phi_s, "phi_t": phi_t, "max_distance": flags.max_distance,
                "distance_step": flags.distance_step, "max_lag": flags.max_lag });
            write_manifest(dir, "corr-surface", None, &inputs, config)?;
        }
        None => {
            std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::input(e.to_string()))?;
        }
    }
    Ok(())
}
