//! CSV ingestion for the borough table, structured run configuration, and
//! deterministic serialization helpers.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::score::ObservationSet;

/// One borough row: outcome index, treatment percentage, named confounders.
#[derive(Debug, Clone)]
pub struct BoroughRecord {
    pub name: String,
    pub di: f64,
    pub treatment: f64,
    pub confounders: Vec<f64>,
}

/// The loaded borough table with its confounder column names.
#[derive(Debug, Clone)]
pub struct BoroughTable {
    pub records: Vec<BoroughRecord>,
    pub confounder_names: Vec<String>,
}

impl BoroughTable {
    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn p(&self) -> usize {
        self.confounder_names.len()
    }

    pub fn to_observations(&self) -> Result<ObservationSet> {
        let n = self.records.len();
        let p = self.confounder_names.len();
        let y: Vec<f64> = self.records.iter().map(|r| r.di).collect();
        let d: Vec<f64> = self.records.iter().map(|r| r.treatment).collect();
        let mut x = Array2::zeros((n, p));
        for (i, rec) in self.records.iter().enumerate() {
            for (j, &v) in rec.confounders.iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        ObservationSet::new(y, d, x)
    }
}

fn data_err(row: usize, column: Option<&str>, message: impl Into<String>) -> Error {
    Error::Data {
        row,
        column: column.map(str::to_owned),
        message: message.into(),
    }
}

/// Loads and validates the borough CSV: a `name` column, exactly one `di`
/// outcome column, one `treatment` column, every remaining column numeric
/// and treated as a confounder (header order preserved).
pub fn load_borough_csv(path: &Path) -> Result<BoroughTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(data_err(0, None, "missing header row"));
    }
    {
        let mut seen = HashSet::new();
        for h in &headers {
            if !seen.insert(h.to_ascii_lowercase()) {
                return Err(data_err(0, Some(h), "duplicate column name"));
            }
        }
    }
    let find = |want: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(want))
            .ok_or_else(|| data_err(0, Some(want), "required column missing"))
    };
    let name_col = find("name")?;
    let di_col = find("di")?;
    let treatment_col = find("treatment")?;
    let confounder_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != name_col && c != di_col && c != treatment_col)
        .collect();
    if confounder_cols.is_empty() {
        return Err(data_err(0, None, "no confounder columns"));
    }

    let mut records = Vec::new();
    let mut seen_names = HashSet::new();
    for (r, row) in reader.records().enumerate() {
        let row = row?;
        let line = r + 1; // 1-based data rows, header is row 0
        if row.len() != headers.len() {
            return Err(data_err(
                line,
                None,
                format!("expected {} cells, found {}", headers.len(), row.len()),
            ));
        }
        let cell = |c: usize| -> Result<f64> {
            let raw = row.get(c).unwrap_or("");
            if raw.is_empty() {
                return Err(data_err(line, Some(&headers[c]), "blank cell"));
            }
            raw.parse::<f64>().map_err(|_| {
                data_err(line, Some(&headers[c]), format!("not numeric: '{raw}'"))
            })
        };
        let name = row.get(name_col).unwrap_or("").to_string();
        if name.is_empty() {
            return Err(data_err(line, Some("name"), "blank borough name"));
        }
        if !seen_names.insert(name.clone()) {
            return Err(data_err(line, Some("name"), format!("duplicate borough '{name}'")));
        }
        let di = cell(di_col)?;
        if !di.is_finite() || di <= 0.0 {
            return Err(data_err(
                line,
                Some("di"),
                format!("outcome index must be positive, got {di}"),
            ));
        }
        let treatment = cell(treatment_col)?;
        if !(0.0..=100.0).contains(&treatment) {
            return Err(data_err(
                line,
                Some("treatment"),
                format!("treatment percentage must lie in [0, 100], got {treatment}"),
            ));
        }
        let mut confounders = Vec::with_capacity(confounder_cols.len());
        for &c in &confounder_cols {
            let v = cell(c)?;
            if !v.is_finite() {
                return Err(data_err(line, Some(&headers[c]), "non-finite value"));
            }
            confounders.push(v);
        }
        records.push(BoroughRecord {
            name,
            di,
            treatment,
            confounders,
        });
    }
    if records.len() < 4 {
        return Err(data_err(
            records.len(),
            None,
            format!("need at least 4 boroughs, found {}", records.len()),
        ));
    }
    Ok(BoroughTable {
        records,
        confounder_names: confounder_cols
            .iter()
            .map(|&c| headers[c].clone())
            .collect(),
    })
}

/// Formats a float with 12 significant digits; parsing the result back
/// reproduces the same 12 digits, so emitted CSVs round-trip exactly.
pub fn fmt_g12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    format!("{v:.11e}")
}

/// Structured key-value run configuration; every field can be overridden
/// by a command-line flag (flags win).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<String>,
    pub out: Option<String>,
    pub seed: Option<u64>,
    /// Cressie-Read parameter; `divergence` names one instead.
    pub lambda: Option<f64>,
    pub divergence: Option<String>,
    pub learner_pi: Option<String>,
    pub learner_g: Option<String>,
    pub folds: Option<usize>,
    pub draws: Option<usize>,
    pub burn_in: Option<usize>,
    pub prior_mean: Option<f64>,
    pub prior_var: Option<f64>,
    pub replicates: Option<usize>,
    pub scenario: Option<String>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    /// Estimators for the benchmark, as "divergence:learner" or
    /// "dml:learner" strings.
    pub methods: Option<Vec<String>>,
    /// Column holding the score values for the solver debug command.
    pub column: Option<String>,
    /// Run the validity harness as its deliberately-broken negative
    /// control.
    pub miscalibrate: Option<bool>,
    /// Record wall-clock runtime in the benchmark CSV (off by default so
    /// reruns with one seed are byte-identical).
    pub timing: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Overlays `flags` on `self`; set fields in `flags` win.
    pub fn merged_with(mut self, flags: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if flags.$field.is_some() { self.$field = flags.$field; })*
            };
        }
        take!(
            data, out, seed, lambda, divergence, learner_pi, learner_g, folds, draws, burn_in,
            prior_mean, prior_var, replicates, scenario, n, p, methods, column, miscalibrate,
            timing
        );
        self
    }
}
