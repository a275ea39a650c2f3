use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use stcp::conditionals::SliceTuning;
use stcp::gibbs::FitConfig;
use stcp::panel::{load_panel, IngestedPanel, PanelSources};

use crate::error::{CliError, CliResult};

/// Flat run configuration as written in the TOML file. Relative paths
/// are resolved against the directory holding the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub panel: Option<PathBuf>,
    pub locations: Option<PathBuf>,
    pub cases: Option<PathBuf>,
    pub deaths: Option<PathBuf>,
    pub vaccinations: Option<PathBuf>,
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub varying: Vec<String>,
    pub categories: Option<usize>,
    pub origin: Option<NaiveDate>,
    pub out: Option<PathBuf>,

    pub n_chains: Option<usize>,
    pub n_iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub kappa: Option<f64>,
    pub rhat_threshold: Option<f64>,
    pub snapshot_every: Option<usize>,
    pub monitored: Option<Vec<String>>,
    pub changepoint_support: Option<[usize; 2]>,
    pub shift_proposals: Option<usize>,
    pub fixed_field_warmup: Option<usize>,
    pub cut_width: Option<f64>,
    pub decay_width: Option<f64>,
    pub max_stepouts: Option<usize>,
}

/// Where the panel comes from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PanelInput {
    Artifact(PathBuf),
    Tables(TableInputs),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableInputs {
    pub locations: PathBuf,
    pub cases: PathBuf,
    pub deaths: Option<PathBuf>,
    pub vaccinations: Option<PathBuf>,
}

/// Validated configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: PanelInput,
    pub fixed: Vec<String>,
    pub varying: Vec<String>,
    pub categories: usize,
    pub origin: Option<NaiveDate>,
    pub out: Option<PathBuf>,
    pub fit: FitConfig,
}

impl RunConfig {
    /// Every input file the run reads.
    pub fn input_files(&self) -> Vec<PathBuf> {
        match &self.input {
            PanelInput::Artifact(p) => vec![p.clone()],
            PanelInput::Tables(t) => {
                let mut v = vec![t.locations.clone(), t.cases.clone()];
                v.extend(t.deaths.clone());
                v.extend(t.vaccinations.clone());
                v
            }
        }
    }

    pub fn load_panel(&self) -> CliResult<IngestedPanel> {
        let ingested = match &self.input {
            PanelInput::Artifact(p) => IngestedPanel::read_json(p)?,
            PanelInput::Tables(t) => load_panel(&PanelSources {
                locations: t.locations.clone(),
                cases: t.cases.clone(),
                deaths: t.deaths.clone(),
                vaccinations: t.vaccinations.clone(),
            })?,
        };
        if ingested.panel.categories() != self.categories {
            return Err(CliError::input(format!(
                "categories = {} but the panel has {} levels",
                self.categories,
                ingested.panel.categories()
            )));
        }
        Ok(ingested)
    }
}

/// 1-based line on which `key` is assigned, if it appears.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn keyed_error(text: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
    match key_line(text, key) {
        Some(line) => CliError::input(format!("config key '{key}' (line {line}): {msg}")),
        None => CliError::input(format!("config key '{key}': {msg}")),
    }
}

pub fn parse_config(text: &str, base: &Path) -> CliResult<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
        let msg = e.message().to_string();
        match line {
            Some(l) => CliError::input(format!("config line {l}: {msg}")),
            None => CliError::input(format!("config: {msg}")),
        }
    })?;
    resolve(raw, text, base)
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::error::io_error(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

fn resolve(raw: RawConfig, text: &str, base: &Path) -> CliResult<RunConfig> {
    let at = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
    let existing = |key: &str, p: &PathBuf| -> CliResult<PathBuf> {
        let full = at(p);
        if !full.is_file() {
            return Err(keyed_error(text, key, format!("file '{}' does not exist", full.display())));
        }
        Ok(full)
    };
    let input = match (&raw.panel, &raw.locations, &raw.cases) {
        (Some(p), None, None) => {
            for key in ["deaths", "vaccinations"] {
                if key_line(text, key).is_some() {
                    return Err(keyed_error(text, key, "not allowed together with 'panel'"));
                }
            }
            PanelInput::Artifact(existing("panel", p)?)
        }
        (None, Some(l), Some(c)) => PanelInput::Tables(TableInputs {
            locations: existing("locations", l)?,
            cases: existing("cases", c)?,
            deaths: raw.deaths.as_ref().map(|p| existing("deaths", p)).transpose()?,
            vaccinations: raw.vaccinations.as_ref().map(|p| existing("vaccinations", p)).transpose()?,
        }),
        (Some(_), _, _) => return Err(keyed_error(text, "panel", "give either 'panel' or 'locations' and 'cases', not both")),
        _ => return Err(CliError::input("config: 'locations' and 'cases' (or 'panel') are required")),
    };
    let categories = raw.categories.unwrap_or(4);
    if categories != 4 {
        return Err(keyed_error(text, "categories", "the case categorization defines exactly 4 levels"));
    }

    let mut fit = FitConfig::default();
    let defaults = SliceTuning::default();
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = raw.$field.clone() {
                fit.$field = v;
            }
        };
    }
    set!(n_chains);
    set!(n_iterations);
    set!(burn_in);
    set!(thin);
    set!(seed);
    set!(kappa);
    set!(rhat_threshold);
    set!(snapshot_every);
    set!(shift_proposals);
    set!(fixed_field_warmup);
    fit.monitored = raw.monitored.clone();
    fit.changepoint_support = raw.changepoint_support.map(|[a, b]| (a, b));
    fit.tuning = SliceTuning {
        cut_width: raw.cut_width.unwrap_or(defaults.cut_width),
        decay_width: raw.decay_width.unwrap_or(defaults.decay_width),
        max_stepouts: raw.max_stepouts.unwrap_or(defaults.max_stepouts),
    };
    validate_fit(&fit, text)?;

    Ok(RunConfig {
        input,
        fixed: raw.fixed,
        varying: raw.varying,
        categories,
        origin: raw.origin,
        out: raw.out.as_ref().map(at),
        fit,
    })
}

/// Bounds on the fit settings, each reported against its config key.
pub fn validate_fit(fit: &FitConfig, text: &str) -> CliResult<()> {
    if fit.n_chains == 0 {
        return Err(keyed_error(text, "n_chains", "must be at least 1"));
    }
    if fit.n_iterations == 0 {
        return Err(keyed_error(text, "n_iterations", "must be at least 1"));
    }
    if fit.thin == 0 {
        return Err(keyed_error(text, "thin", "must be at least 1"));
    }
    if fit.burn_in >= fit.n_iterations {
        return Err(keyed_error(text, "burn_in", format!("must be smaller than n_iterations ({})", fit.n_iterations)));
    }
    if !(fit.kappa > 0.0 && fit.kappa.is_finite()) {
        return Err(keyed_error(text, "kappa", "must be positive and finite"));
    }
    if !(fit.rhat_threshold >= 1.0) {
        return Err(keyed_error(text, "rhat_threshold", "must be at least 1"));
    }
    if !(fit.tuning.cut_width > 0.0) {
        return Err(keyed_error(text, "cut_width", "must be positive"));
    }
    if !(fit.tuning.decay_width > 0.0) {
        return Err(keyed_error(text, "decay_width", "must be positive"));
    }
    if fit.tuning.max_stepouts == 0 {
        return Err(keyed_error(text, "max_stepouts", "must be at least 1"));
    }
    if let Some((lo, hi)) = fit.changepoint_support {
        if lo > hi {
            return Err(keyed_error(text, "changepoint_support", "lower end exceeds upper end"));
        }
    }
    fit.validate().map_err(CliError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn files() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for f in ["locations.csv", "cases.csv"] {
            std::fs::write(dir.path().join(f), "x").unwrap();
        }
        dir
    }

    #[test]
    fn empty_overrides_keep_defaults() {
        let dir = files();
        let cfg = parse_config("locations = \"locations.csv\"\ncases = \"cases.csv\"\n", dir.path()).unwrap();
        assert_eq!(cfg.fit, FitConfig::default());
        assert_eq!(cfg.categories, 4);
        assert!(cfg.fixed.is_empty() && cfg.varying.is_empty());
    }

    #[test]
    fn zero_chains_names_key_and_line() {
        let dir = files();
        let text = "locations = \"locations.csv\"\ncases = \"cases.csv\"\nn_chains = 0\n";
        let err = parse_config(text, dir.path()).unwrap_err();
        assert!(err.message.contains("n_chains") && err.message.contains("line 3"), "{}", err.message);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let dir = files();
        let text = "locations = \"locations.csv\"\ncases = \"cases.csv\"\nchains = 2\n";
        let err = parse_config(text, dir.path()).unwrap_err();
        assert!(err.message.contains("chains") && err.message.contains("line 3"), "{}", err.message);
    }

    #[test]
    fn missing_file_is_an_input_error() {
        let dir = files();
        let err = parse_config("locations = \"nope.csv\"\ncases = \"cases.csv\"\n", dir.path()).unwrap_err();
        assert_eq!(err.kind, crate::error::Kind::Input);
        assert!(err.message.contains("line 1"));
    }

    #[test]
    fn overrides_apply() {
        let dir = files();
        let text = "locations = \"locations.csv\"\ncases = \"cases.csv\"\nseed = 9\nn_iterations = 100\nburn_in = 10\nchangepoint_support = [2, 5]\ndecay_width = 0.5\n";
        let cfg = parse_config(text, dir.path()).unwrap();
        assert_eq!(cfg.fit.seed, 9);
        assert_eq!(cfg.fit.n_iterations, 100);
        assert_eq!(cfg.fit.changepoint_support, Some((2, 5)));
        assert_eq!(cfg.fit.tuning.decay_width, 0.5);
    }

    #[test]
    fn categories_other_than_four_rejected() {
        let dir = files();
        let err = parse_config("locations = \"locations.csv\"\ncases = \"cases.csv\"\ncategories = 5\n", dir.path()).unwrap_err();
        assert!(err.message.contains("categories"));
    }
}
