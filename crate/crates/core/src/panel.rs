//! Panel data model: the space-time grid, ordinal responses, covariates
//! and the design matrix.
//!
//! Every M-vector in the crate uses the same time-major layout: the
//! observation for location `i` at time `t` (both zero-based) lives at
//! index `t * n + i`. An `n × T` column-major matrix shares that layout,
//! so column `t` of such a matrix is the time slice `t`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covkernel::great_circle_distance;
use crate::error::{Error, Result};

/// Upper edges (exclusive) of the first three transmission levels, in new
/// cases per 100,000 persons per week.
pub const RATE_THRESHOLDS: [f64; 3] = [10.0, 50.0, 100.0];

/// Name of the covariate derived from the previous week's deaths.
pub const LOG_DEATHS: &str = "log_deaths";
/// Name of the first-dose vaccination prevalence covariate.
pub const VACCINATION: &str = "vaccination";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

/// Locations with coordinates plus a regular weekly time axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    locations: Vec<Location>,
    n_times: usize,
}

impl SpaceTimeGrid {
    pub fn new(locations: Vec<Location>, n_times: usize) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::input("grid needs at least one location"));
        }
        if n_times == 0 {
            return Err(Error::input("grid needs at least one time point"));
        }
        let mut seen = HashMap::new();
        for (i, loc) in locations.iter().enumerate() {
            if let Some(prev) = seen.insert(loc.id.as_str(), i) {
                return Err(Error::input(format!(
                    "duplicate location id '{}' (rows {} and {})",
                    loc.id,
                    prev + 1,
                    i + 1
                )));
            }
            if !(-90.0..=90.0).contains(&loc.lat) {
                return Err(Error::input(format!("location '{}': latitude {} outside [-90, 90]", loc.id, loc.lat)));
            }
            if !(-180.0..=180.0).contains(&loc.lon) {
                return Err(Error::input(format!(
                    "location '{}': longitude {} outside [-180, 180]",
                    loc.id, loc.lon
                )));
            }
        }
        Ok(Self { locations, n_times })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Total number of observations, `n · T`.
    pub fn len(&self) -> usize {
        self.locations.len() * self.n_times
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vector index of (location, time), both zero-based.
    pub fn index(&self, location: usize, time: usize) -> usize {
        time * self.locations.len() + location
    }

    /// Inverse of [`Self::index`].
    pub fn position(&self, index: usize) -> (usize, usize) {
        let n = self.locations.len();
        (index % n, index / n)
    }

    /// Pairwise great-circle distances in km.
    pub fn distance_matrix(&self) -> DMatrix<f64> {
        let n = self.locations.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let a = &self.locations[i];
                let b = &self.locations[j];
                let km = great_circle_distance((a.lat, a.lon), (b.lat, b.lon));
                d[(i, j)] = km;
                d[(j, i)] = km;
            }
        }
        d
    }

    /// Same locations restricted to the zero-based time range `start..end`.
    pub fn slice_times(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_times {
            return Err(Error::input(format!(
                "time slice {start}..{end} invalid for {} time points",
                self.n_times
            )));
        }
        Ok(Self { locations: self.locations.clone(), n_times: end - start })
    }
}

/// Reshape an M-vector into the `n × T` matrix whose column `t` is time slice `t`.
pub fn to_matrix(values: &[f64], n_locations: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n_locations, values.len() / n_locations, values)
}

/// Flatten an `n × T` matrix back into the time-major M-vector.
pub fn from_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Observed categories `y ∈ {1..m}` on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalPanel {
    grid: SpaceTimeGrid,
    y: Vec<usize>,
    categories: usize,
}

impl OrdinalPanel {
    pub fn new(grid: SpaceTimeGrid, y: Vec<usize>, categories: usize) -> Result<Self> {
        if categories < 2 {
            return Err(Error::input(format!("need at least 2 categories, got {categories}")));
        }
        if y.len() != grid.len() {
            return Err(Error::input(format!(
                "response length {} does not match n·T = {}",
                y.len(),
                grid.len()
            )));
        }
        if let Some((i, &bad)) = y.iter().enumerate().find(|(_, &c)| c == 0 || c > categories) {
            let (loc, t) = grid.position(i);
            return Err(Error::input(format!(
                "category {bad} at location '{}', week {} outside 1..={categories}",
                grid.locations()[loc].id,
                t + 1
            )));
        }
        let first = y[0];
        if y.iter().all(|&c| c == first) {
            return Err(Error::input(format!("all observations fall in category {first}; the model is degenerate")));
        }
        Ok(Self { grid, y, categories })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    /// Panel restricted to the zero-based time range `start..end`.
    pub fn slice_times(&self, start: usize, end: usize) -> Result<Self> {
        let grid = self.grid.slice_times(start, end)?;
        let n = self.grid.n_locations();
        let y = self.y[start * n..end * n].to_vec();
        Self::new(grid, y, self.categories)
    }
}

/// Map weekly new cases per 100,000 persons to the four ordered
/// transmission levels: `[0, 10)`, `[10, 50)`, `[50, 100)`, `[100, ∞)`.
pub fn categorize_weekly_rate(rate: f64) -> Result<usize> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::input(format!("weekly rate must be finite and nonnegative, got {rate}")));
    }
    Ok(1 + RATE_THRESHOLDS.iter().filter(|&&edge| rate >= edge).count())
}

/// Cumulative first doses divided by population.
pub fn vaccination_prevalence(cumulative_first_doses: f64, population: f64) -> Result<f64> {
    if !(population > 0.0) || !population.is_finite() {
        return Err(Error::input(format!("population must be positive, got {population}")));
    }
    if !(cumulative_first_doses >= 0.0) || !cumulative_first_doses.is_finite() {
        return Err(Error::input(format!("dose count must be nonnegative, got {cumulative_first_doses}")));
    }
    Ok(cumulative_first_doses / population)
}

/// `ln(1 + d)` of the previous week's new deaths.
pub fn death_covariate(prev_week_new_deaths: f64) -> Result<f64> {
    if !(prev_week_new_deaths >= 0.0) || !prev_week_new_deaths.is_finite() {
        return Err(Error::input(format!("death count must be nonnegative, got {prev_week_new_deaths}")));
    }
    Ok(prev_week_new_deaths.ln_1p())
}

/// A named M-vector covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub values: Vec<f64>,
}

impl CovariateColumn {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }
}

/// Mean and sample standard deviation removed by [`standardize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mean: f64,
    pub sd: f64,
}

/// Fixed-effect and spatially varying covariate columns.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariatePanel {
    pub fixed: Vec<CovariateColumn>,
    pub varying: Vec<CovariateColumn>,
    pub standardized: bool,
    /// Original scaling of each column, fixed columns first, filled by
    /// [`standardize`].
    #[serde(default)]
    pub scaling: Vec<ColumnScaling>,
}

impl CovariatePanel {
    pub fn new(fixed: Vec<CovariateColumn>, varying: Vec<CovariateColumn>) -> Self {
        Self { fixed, varying, standardized: false, scaling: Vec::new() }
    }

    pub fn columns(&self) -> impl Iterator<Item = &CovariateColumn> {
        self.fixed.iter().chain(self.varying.iter())
    }

    /// Restrict every column to the zero-based time range `start..end`.
    pub fn slice_times(&self, n_locations: usize, start: usize, end: usize) -> Self {
        let cut = |c: &CovariateColumn| {
            CovariateColumn::new(c.name.clone(), c.values[start * n_locations..end * n_locations].to_vec())
        };
        Self {
            fixed: self.fixed.iter().map(cut).collect(),
            varying: self.varying.iter().map(cut).collect(),
            standardized: self.standardized,
            scaling: self.scaling.clone(),
        }
    }

    /// Remove columns whose values are constant; returns the names dropped.
    pub fn drop_constant(&mut self) -> Vec<String> {
        let mut dropped = Vec::new();
        let mut keep_scaling = Vec::new();
        let mut idx = 0;
        let scaling = std::mem::take(&mut self.scaling);
        for group in [&mut self.fixed, &mut self.varying] {
            group.retain(|c| {
                let constant = is_constant(&c.values);
                if constant {
                    dropped.push(c.name.clone());
                } else if let Some(s) = scaling.get(idx) {
                    keep_scaling.push(*s);
                }
                idx += 1;
                !constant
            });
        }
        self.scaling = keep_scaling;
        dropped
    }
}

fn is_constant(values: &[f64]) -> bool {
    let first = values.first().copied().unwrap_or(0.0);
    values.iter().all(|&v| (v - first).abs() <= 1e-12 * first.abs().max(1.0))
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Z-score every column over all locations and times jointly, using the
/// sample (`M − 1`) standard deviation.
pub fn standardize(panel: &CovariatePanel) -> Result<CovariatePanel> {
    let mut scaling = Vec::new();
    let mut scale_group = |cols: &[CovariateColumn]| -> Result<Vec<CovariateColumn>> {
        cols.iter()
            .map(|c| {
                if c.values.len() < 2 {
                    return Err(Error::input(format!("covariate '{}' needs at least two values", c.name)));
                }
                if let Some(v) = c.values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::input(format!("covariate '{}' contains non-finite value {v}", c.name)));
                }
                let (mean, sd) = mean_sd(&c.values);
                if !(sd > 0.0) || is_constant(&c.values) {
                    return Err(Error::input(format!("covariate '{}' is constant and cannot be standardized", c.name)));
                }
                scaling.push(ColumnScaling { mean, sd });
                Ok(CovariateColumn::new(c.name.clone(), c.values.iter().map(|v| (v - mean) / sd).collect()))
            })
            .collect()
    };
    let fixed = scale_group(&panel.fixed)?;
    let varying = scale_group(&panel.varying)?;
    Ok(CovariatePanel { fixed, varying, standardized: true, scaling })
}

/// `M × k` regression matrix `[1 | fixed | varying blocks]`.
///
/// Varying block `h` spans `n` columns; row `t·n + i` carries
/// `x_h(s_i, t)` in the block's column `i` and zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub labels: Vec<String>,
    pub n_fixed: usize,
    pub n_varying: usize,
    pub n_locations: usize,
    pub n_times: usize,
}

impl DesignMatrix {
    /// Number of columns `k = 1 + G + H·n`.
    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Columns of the intercept and fixed effects.
    pub fn fixed_range(&self) -> std::ops::Range<usize> {
        0..1 + self.n_fixed
    }

    /// Columns of spatially varying block `h` (zero-based).
    pub fn varying_range(&self, h: usize) -> std::ops::Range<usize> {
        let start = 1 + self.n_fixed + h * self.n_locations;
        start..start + self.n_locations
    }

    /// Rows of time slice `t` (zero-based).
    pub fn time_rows(&self, t: usize) -> std::ops::Range<usize> {
        t * self.n_locations..(t + 1) * self.n_locations
    }

    /// `X θ` as an M-vector.
    pub fn mean(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.x * theta
    }
}

/// Build the design matrix for a grid and its covariates.
pub fn assemble_design(grid: &SpaceTimeGrid, covariates: &CovariatePanel) -> Result<DesignMatrix> {
    let m = grid.len();
    let n = grid.n_locations();
    for c in covariates.columns() {
        if c.values.len() != m {
            return Err(Error::input(format!(
                "covariate '{}' has {} values, expected n·T = {m}",
                c.name,
                c.values.len()
            )));
        }
    }
    let g = covariates.fixed.len();
    let h = covariates.varying.len();
    let k = 1 + g + h * n;
    let mut x = DMatrix::zeros(m, k);
    let mut labels = Vec::with_capacity(k);
    labels.push("intercept".to_string());
    labels.extend(covariates.fixed.iter().map(|c| c.name.clone()));
    for c in &covariates.varying {
        labels.extend(grid.locations().iter().map(|l| format!("{}@{}", c.name, l.id)));
    }
    for row in 0..m {
        let (i, _) = grid.position(row);
        x[(row, 0)] = 1.0;
        for (j, c) in covariates.fixed.iter().enumerate() {
            x[(row, 1 + j)] = c.values[row];
        }
        for (j, c) in covariates.varying.iter().enumerate() {
            x[(row, 1 + g + j * n + i)] = c.values[row];
        }
    }
    Ok(DesignMatrix { x, labels, n_fixed: g, n_varying: h, n_locations: n, n_times: grid.n_times() })
}

// ---------------------------------------------------------------------------
// Ingestion

/// Input tables for one panel.
#[derive(Clone, Debug, Default)]
pub struct PanelSources {
    pub locations: PathBuf,
    pub cases: PathBuf,
    pub deaths: Option<PathBuf>,
    pub vaccinations: Option<PathBuf>,
}

/// A validated panel with its raw (unstandardized) named covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestedPanel {
    pub panel: OrdinalPanel,
    pub covariates: Vec<CovariateColumn>,
}

impl IngestedPanel {
    /// Pick named covariates as fixed or spatially varying, then standardize.
    pub fn select_covariates(&self, fixed: &[String], varying: &[String]) -> Result<CovariatePanel> {
        let find = |name: &String| {
            self.covariates
                .iter()
                .find(|c| &c.name == name)
                .cloned()
                .ok_or_else(|| Error::input(format!("unknown covariate '{name}'")))
        };
        let fixed = fixed.iter().map(find).collect::<Result<Vec<_>>>()?;
        let varying = varying.iter().map(find).collect::<Result<Vec<_>>>()?;
        standardize(&CovariatePanel::new(fixed, varying))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| Error::Io { path: path.into(), source })?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|source| Error::Json { path: path.into(), source })
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Io { path: path.into(), source })?;
        let parsed: Self = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|source| Error::Json { path: path.into(), source })?;
        // re-run validation on deserialized data
        let grid = SpaceTimeGrid::new(parsed.panel.grid.locations.clone(), parsed.panel.grid.n_times)?;
        let panel = OrdinalPanel::new(grid, parsed.panel.y.clone(), parsed.panel.categories)?;
        Ok(Self { panel, covariates: parsed.covariates })
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv { path: path.into(), source })
}

fn headers(reader: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>> {
    Ok(reader
        .headers()
        .map_err(|source| Error::Csv { path: path.into(), source })?
        .iter()
        .map(str::to_string)
        .collect())
}

fn expect_headers(found: &[String], expected: &[&str], path: &Path) -> Result<()> {
    if found.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::input(format!(
            "{}: header must be '{}', found '{}'",
            path.display(),
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

/// Read rows keyed by `(id, week)` whose remaining fields are numbers.
fn read_keyed_rows(path: &Path, expected: &[&str]) -> Result<Vec<(String, usize, Vec<f64>)>> {
    let mut reader = open_csv(path)?;
    let found = headers(&mut reader, path)?;
    expect_headers(&found, expected, path)?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv { path: path.into(), source })?;
        let at = || format!("{}:{}", path.display(), line + 2);
        let id = record.get(0).unwrap_or_default().to_string();
        let week: usize = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::input(format!("{}: week must be a positive integer", at())))?;
        if week == 0 {
            return Err(Error::input(format!("{}: weeks are 1-based", at())));
        }
        let values = (2..expected.len())
            .map(|j| {
                let raw = record.get(j).unwrap_or_default();
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::input(format!("{}: field '{}' is not a number: '{raw}'", at(), expected[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, week, values));
    }
    Ok(rows)
}

/// Arrange keyed rows into an M-vector, rejecting unknown ids, duplicates
/// and missing `(id, week)` pairs.
fn arrange<T: Copy>(
    grid: &SpaceTimeGrid,
    rows: &[(String, usize, T)],
    path: &Path,
) -> Result<Vec<T>> {
    let ids: HashMap<&str, usize> =
        grid.locations().iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();
    let mut slots: Vec<Option<T>> = vec![None; grid.len()];
    for (id, week, value) in rows {
        let &i = ids
            .get(id.as_str())
            .ok_or_else(|| Error::input(format!("{}: unknown location id '{id}'", path.display())))?;
        if *week > grid.n_times() {
            return Err(Error::input(format!(
                "{}: week {week} beyond the {} weeks in the case table",
                path.display(),
                grid.n_times()
            )));
        }
        let slot = &mut slots[grid.index(i, week - 1)];
        if slot.is_some() {
            return Err(Error::input(format!("{}: duplicate row for ('{id}', {week})", path.display())));
        }
        *slot = Some(*value);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(idx, v)| {
            v.ok_or_else(|| {
                let (i, t) = grid.position(idx);
                Error::input(format!(
                    "{}: missing row for ('{}', {})",
                    path.display(),
                    grid.locations()[i].id,
                    t + 1
                ))
            })
        })
        .collect()
}

pub fn read_locations(path: &Path) -> Result<Vec<Location>> {
    let mut reader = open_csv(path)?;
    let found = headers(&mut reader, path)?;
    expect_headers(&found, &["id", "lat", "lon"], path)?;
    reader
        .deserialize::<Location>()
        .map(|r| r.map_err(|source| Error::Csv { path: path.into(), source }))
        .collect()
}

/// Build and validate a panel from the input tables.
///
/// Cases may be given as `id,week,new_cases,population` (converted to a
/// rate per 100,000) or as `id,week,rate_per_100k`. Deaths become the
/// `log_deaths` covariate lagged by one week (week 1 sees zero deaths);
/// vaccinations become the `vaccination` prevalence covariate.
pub fn load_panel(sources: &PanelSources) -> Result<IngestedPanel> {
    let locations = read_locations(&sources.locations)?;

    let cases_path = &sources.cases;
    let mut reader = open_csv(cases_path)?;
    let found = headers(&mut reader, cases_path)?;
    drop(reader);
    let rates: Vec<(String, usize, f64)> = match found.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["id", "week", "rate_per_100k"] => read_keyed_rows(cases_path, &["id", "week", "rate_per_100k"])?
            .into_iter()
            .map(|(id, w, v)| (id, w, v[0]))
            .collect(),
        ["id", "week", "new_cases", "population"] => {
            read_keyed_rows(cases_path, &["id", "week", "new_cases", "population"])?
                .into_iter()
                .map(|(id, w, v)| {
                    if !(v[1] > 0.0) {
                        return Err(Error::input(format!(
                            "{}: population for ('{id}', {w}) must be positive",
                            cases_path.display()
                        )));
                    }
                    Ok((id, w, 1e5 * v[0] / v[1]))
                })
                .collect::<Result<_>>()?
        }
        _ => {
            return Err(Error::input(format!(
                "{}: header must be 'id,week,new_cases,population' or 'id,week,rate_per_100k', found '{}'",
                cases_path.display(),
                found.join(",")
            )))
        }
    };
    let n_times = rates.iter().map(|r| r.1).max().unwrap_or(0);
    let grid = SpaceTimeGrid::new(locations, n_times)?;
    let rate_vec = arrange(&grid, &rates, cases_path)?;
    let y = rate_vec
        .iter()
        .map(|&r| categorize_weekly_rate(r))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::input(format!("{}: {e}", cases_path.display())))?;
    let panel = OrdinalPanel::new(grid, y, 4)?;

    let mut covariates = Vec::new();
    if let Some(path) = &sources.deaths {
        let rows: Vec<(String, usize, f64)> = read_keyed_rows(path, &["id", "week", "new_deaths"])?
            .into_iter()
            .map(|(id, w, v)| (id, w, v[0]))
            .collect();
        let deaths = arrange(panel.grid(), &rows, path)?;
        let values = lagged_log_deaths(&deaths, panel.grid().n_locations())?;
        covariates.push(CovariateColumn::new(LOG_DEATHS, values));
    }
    if let Some(path) = &sources.vaccinations {
        let rows: Vec<(String, usize, (f64, f64))> =
            read_keyed_rows(path, &["id", "week", "cumulative_first_doses", "population"])?
                .into_iter()
                .map(|(id, w, v)| (id, w, (v[0], v[1])))
                .collect();
        let pairs = arrange(panel.grid(), &rows, path)?;
        let values = pairs
            .iter()
            .map(|&(doses, pop)| vaccination_prevalence(doses, pop))
            .collect::<Result<Vec<_>>>()?;
        covariates.push(CovariateColumn::new(VACCINATION, values));
    }
    Ok(IngestedPanel { panel, covariates })
}

/// `log(1 + d(s_i, t−1))` for time-major weekly deaths; the first week
/// has no previous week and gets 0.
pub fn lagged_log_deaths(deaths: &[f64], n_locations: usize) -> Result<Vec<f64>> {
    let mut values = vec![0.0; deaths.len()];
    for idx in n_locations..deaths.len() {
        values[idx] = death_covariate(deaths[idx - n_locations])?;
    }
    Ok(values)
}

/// Cumulative-dose prevalence for time-major doses and populations.
pub fn prevalence_column(doses: &[f64], population: &[f64]) -> Result<Vec<f64>> {
    doses.iter().zip(population).map(|(&d, &p)| vaccination_prevalence(d, p)).collect()
}

/// A representative weekly rate for each transmission level, used when
/// writing simulated panels in the rate format.
pub fn representative_rate(category: usize) -> Result<f64> {
    match category {
        1 => Ok(5.0),
        2 => Ok(30.0),
        3 => Ok(75.0),
        4 => Ok(150.0),
        _ => Err(Error::input(format!("category {category} has no transmission level"))),
    }
}

fn create_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = create_writer(path)?;
    let wrap = |source| Error::Csv { path: path.into(), source };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.into(), source })
}

/// Write `locations.csv` and a rate-format `cases.csv` for a four-level panel.
pub fn write_panel_tables(panel: &OrdinalPanel, dir: &Path) -> Result<()> {
    if panel.categories() != 4 {
        return Err(Error::input(format!(
            "the case-table format encodes 4 transmission levels, panel has {}",
            panel.categories()
        )));
    }
    let grid = panel.grid();
    write_rows(
        &dir.join("locations.csv"),
        &["id", "lat", "lon"],
        grid.locations().iter().map(|l| vec![l.id.clone(), l.lat.to_string(), l.lon.to_string()]),
    )?;
    let mut rows = Vec::with_capacity(grid.len());
    for (i, loc) in grid.locations().iter().enumerate() {
        for t in 0..grid.n_times() {
            let rate = representative_rate(panel.y()[grid.index(i, t)])?;
            rows.push(vec![loc.id.clone(), (t + 1).to_string(), rate.to_string()]);
        }
    }
    write_rows(&dir.join("cases.csv"), &["id", "week", "rate_per_100k"], rows)
}

/// Write `deaths.csv` from per-observation weekly death counts.
pub fn write_deaths_table(grid: &SpaceTimeGrid, deaths: &[f64], path: &Path) -> Result<()> {
    let rows = keyed(grid, |idx| vec![deaths[idx].to_string()]);
    write_rows(path, &["id", "week", "new_deaths"], rows)
}

/// Write `vaccinations.csv` from cumulative doses and populations.
pub fn write_vaccination_table(grid: &SpaceTimeGrid, doses: &[f64], population: &[f64], path: &Path) -> Result<()> {
    let rows = keyed(grid, |idx| vec![doses[idx].to_string(), population[idx].to_string()]);
    write_rows(path, &["id", "week", "cumulative_first_doses", "population"], rows)
}

fn keyed(grid: &SpaceTimeGrid, fields: impl Fn(usize) -> Vec<String>) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(grid.len());
    for (i, loc) in grid.locations().iter().enumerate() {
        for t in 0..grid.n_times() {
            let mut row = vec![loc.id.clone(), (t + 1).to_string()];
            row.extend(fields(grid.index(i, t)));
            rows.push(row);
        }
    }
    rows
}

/// Week-indexed counts of how often each category occurs; handy for
/// quick panel summaries.
pub fn category_counts(panel: &OrdinalPanel) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &c in panel.y() {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
}
