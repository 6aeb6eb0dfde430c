//! Long-format clustered count data and model specifications.
//!
//! A CSV file holds one observation per row. The [`ModelSpec`] names the
//! response, the cluster id column, numeric covariates, pairwise
//! interactions (formed as elementwise products), an optional offset column
//! (log exposure, added to the linear predictor with coefficient 1), and
//! whether to prepend an intercept.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the intercept column in a design.
pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("empty input: no header row")]
    Empty,
    #[error("no data rows after the header")]
    NoRows,
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column '{column}': response must be a nonnegative integer, got '{value}'")]
    InvalidResponse { row: usize, column: String, value: String },
    #[error("row {row}, column '{column}': not a finite number: '{value}'")]
    InvalidNumber { row: usize, column: String, value: String },
    #[error("row {row}: malformed CSV: {message}")]
    Malformed { row: usize, message: String },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Which columns make up the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub cluster: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub interactions: Vec<(String, String)>,
    #[serde(default)]
    pub offset: Option<String>,
    #[serde(default = "default_true", rename = "intercept")]
    pub add_intercept: bool,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn new(response: impl Into<String>, cluster: impl Into<String>) -> Self {
        ModelSpec {
            response: response.into(),
            cluster: cluster.into(),
            covariates: Vec::new(),
            interactions: Vec::new(),
            offset: None,
            add_intercept: true,
        }
    }

    pub fn covariate(mut self, name: impl Into<String>) -> Self {
        self.covariates.push(name.into());
        self
    }

    pub fn interaction(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.interactions.push((a.into(), b.into()));
        self
    }

    pub fn offset(mut self, name: impl Into<String>) -> Self {
        self.offset = Some(name.into());
        self
    }

    pub fn without_intercept(mut self) -> Self {
        self.add_intercept = false;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::Spec(e.to_string()))
    }

    /// Names of the design columns this spec produces, in order.
    pub fn design_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.add_intercept {
            names.push(INTERCEPT.to_string());
        }
        names.extend(self.covariates.iter().cloned());
        names.extend(self.interactions.iter().map(|(a, b)| interaction_name(a, b)));
        names
    }

    fn check_terms(&self) -> Result<(), DataError> {
        let names = self.design_names();
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DataError::Spec(format!("duplicate term '{n}'")));
            }
        }
        for (a, b) in &self.interactions {
            if seen.contains(interaction_name(b, a).as_str()) && a != b {
                return Err(DataError::Spec(format!("duplicate term '{}'", interaction_name(b, a))));
            }
        }
        if names.is_empty() {
            return Err(DataError::Spec("model has no terms".into()));
        }
        Ok(())
    }
}

pub fn interaction_name(a: &str, b: &str) -> String {
    format!("{a}:{b}")
}

/// One cluster: counts, design rows and offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterData {
    pub id: String,
    pub y: Vec<u64>,
    /// mᵢ × p design matrix, one row per observation.
    pub x: DMatrix<f64>,
    pub offset: Vec<f64>,
}

impl ClusterData {
    pub fn new(id: impl Into<String>, y: Vec<u64>, x: DMatrix<f64>, offset: Vec<f64>) -> Result<Self, DataError> {
        let c = ClusterData {
            id: id.into(),
            y,
            x,
            offset,
        };
        if c.y.is_empty() {
            return Err(DataError::Invalid(format!("cluster '{}' has no observations", c.id)));
        }
        if c.x.nrows() != c.y.len() || c.offset.len() != c.y.len() {
            return Err(DataError::Invalid(format!(
                "cluster '{}': {} counts, {} design rows, {} offsets",
                c.id,
                c.y.len(),
                c.x.nrows(),
                c.offset.len()
            )));
        }
        Ok(c)
    }

    /// Intercept-only cluster with zero offsets.
    pub fn intercept_only(id: impl Into<String>, y: Vec<u64>) -> Self {
        let m = y.len();
        ClusterData {
            id: id.into(),
            y,
            x: DMatrix::from_element(m, 1, 1.0),
            offset: vec![0.0; m],
        }
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn total(&self) -> u64 {
        self.y.iter().sum()
    }

    /// Linear predictor xᵢⱼᵀβ + offsetᵢⱼ for every observation.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.size())
            .map(|j| {
                let row = self.x.row(j);
                row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>() + self.offset[j]
            })
            .collect()
    }

    /// μᵢⱼ = exp(xᵢⱼᵀβ + offsetᵢⱼ).
    pub fn means(&self, beta: &[f64]) -> Vec<f64> {
        self.linear_predictor(beta).into_iter().map(f64::exp).collect()
    }
}

/// A collection of clusters sharing one design layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clusters: Vec<ClusterData>,
    /// Design column names (length p).
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn new(clusters: Vec<ClusterData>, column_names: Vec<String>) -> Result<Self, DataError> {
        if clusters.is_empty() {
            return Err(DataError::Invalid("dataset has no clusters".into()));
        }
        let p = column_names.len();
        let mut ids = HashSet::new();
        for c in &clusters {
            if c.x.ncols() != p {
                return Err(DataError::Invalid(format!(
                    "cluster '{}' has {} design columns, expected {p}",
                    c.id,
                    c.x.ncols()
                )));
            }
            if !ids.insert(c.id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate cluster id '{}'", c.id)));
            }
        }
        Ok(Dataset { clusters, column_names })
    }

    pub fn n_params(&self) -> usize {
        self.column_names.len()
    }

    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(ClusterData::size).sum()
    }

    /// Every observation as its own cluster (ids `"<cluster>#<j>"`), which
    /// turns the multivariate model into independent univariate ones.
    pub fn ungrouped(&self) -> Dataset {
        let mut out = Vec::with_capacity(self.n_obs());
        for c in &self.clusters {
            for j in 0..c.size() {
                out.push(ClusterData {
                    id: format!("{}#{}", c.id, j + 1),
                    y: vec![c.y[j]],
                    x: c.x.rows(j, 1).into_owned(),
                    offset: vec![c.offset[j]],
                });
            }
        }
        Dataset {
            clusters: out,
            column_names: self.column_names.clone(),
        }
    }

    /// Spec that re-reads a file produced by [`Dataset::write_csv`].
    pub fn written_spec(&self) -> ModelSpec {
        let add_intercept = self.column_names.first().is_some_and(|n| n == INTERCEPT);
        let covariates = self
            .column_names
            .iter()
            .skip(usize::from(add_intercept))
            .cloned()
            .collect();
        ModelSpec {
            response: "y".into(),
            cluster: "cluster".into(),
            covariates,
            interactions: Vec::new(),
            offset: Some("offset".into()),
            add_intercept,
        }
    }

    /// Writes columns `cluster,y,<design columns except intercept>,offset`.
    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let spec = self.written_spec();
        let skip = usize::from(spec.add_intercept);
        let mut header = vec!["cluster".to_string(), "y".to_string()];
        header.extend(spec.covariates.iter().cloned());
        header.push("offset".into());
        writeln!(out, "{}", header.join(","))?;
        for c in &self.clusters {
            for j in 0..c.size() {
                let mut fields = vec![c.id.clone(), c.y[j].to_string()];
                for k in skip..c.x.ncols() {
                    fields.push(format!("{}", c.x[(j, k)]));
                }
                fields.push(format!("{}", c.offset[j]));
                writeln!(out, "{}", fields.join(","))?;
            }
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Reads a CSV file into a [`Dataset`].
pub fn read_csv(path: &Path, spec: &ModelSpec) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_csv(&text, spec)
}

/// Parses CSV text. Row numbers in errors count the header as row 1.
pub fn parse_csv(text: &str, spec: &ModelSpec) -> Result<Dataset, DataError> {
    spec.check_terms()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(DataError::Empty),
        Some(r) => r.map_err(|e| DataError::Malformed { row: 1, message: e.to_string() })?,
    };
    if header.iter().all(str::is_empty) {
        return Err(DataError::Empty);
    }
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| DataError::MissingColumn(name.to_string()));

    let response_col = col(&spec.response)?;
    let cluster_col = col(&spec.cluster)?;
    let covariate_cols = spec.covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;
    let interaction_cols = spec
        .interactions
        .iter()
        .map(|(a, b)| Ok((col(a)?, col(b)?)))
        .collect::<Result<Vec<_>, DataError>>()?;
    let offset_col = spec.offset.as_deref().map(col).transpose()?;

    let width = header.len();
    let p = spec.design_names().len();
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Vec<u64>, Vec<f64>, Vec<f64>)> = HashMap::new();

    for (k, record) in records.enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| DataError::Malformed { row, message: e.to_string() })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(DataError::Ragged {
                row,
                expected: width,
                found: record.len(),
            });
        }
        let number = |c: usize| -> Result<f64, DataError> {
            let raw = &record[c];
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DataError::InvalidNumber {
                    row,
                    column: header[c].to_string(),
                    value: raw.to_string(),
                }),
            }
        };
        let raw_y = &record[response_col];
        let y: u64 = raw_y.parse().map_err(|_| DataError::InvalidResponse {
            row,
            column: spec.response.clone(),
            value: raw_y.to_string(),
        })?;
        let mut design = Vec::with_capacity(p);
        if spec.add_intercept {
            design.push(1.0);
        }
        for &c in &covariate_cols {
            design.push(number(c)?);
        }
        for &(a, b) in &interaction_cols {
            design.push(number(a)? * number(b)?);
        }
        let off = offset_col.map(number).transpose()?.unwrap_or(0.0);

        let id = record[cluster_col].to_string();
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new(), Vec::new())
        });
        entry.0.push(y);
        entry.1.extend(design);
        entry.2.push(off);
    }
    if order.is_empty() {
        return Err(DataError::NoRows);
    }
    let clusters = order
        .into_iter()
        .map(|id| {
            let (y, rows, offset) = groups.remove(&id).expect("grouped id");
            let m = y.len();
            ClusterData {
                id,
                y,
                x: DMatrix::from_row_slice(m, p, &rows),
                offset,
            }
        })
        .collect();
    Dataset::new(clusters, spec.design_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seizure_like() -> String {
        let mut s = String::from("patient,period,treat,post,log_weeks,seizures\n");
        for patient in 1..=3 {
            for period in 0..5 {
                let weeks: f64 = if period == 0 { 8.0 } else { 2.0 };
                let post = i32::from(period > 0);
                let treat = i32::from(patient > 1);
                s.push_str(&format!(
                    "{patient},{period},{treat},{post},{},{}\n",
                    weeks.ln(),
                    3 * patient + period
                ));
            }
        }
        s
    }

    #[test]
    fn offsets_attach_per_row() {
        let spec = ModelSpec::new("seizures", "patient")
            .covariate("post")
            .interaction("treat", "post")
            .offset("log_weeks");
        let d = parse_csv(&seizure_like(), &spec).unwrap();
        assert_eq!(d.clusters.len(), 3);
        assert_eq!(d.column_names, vec!["intercept", "post", "treat:post"]);
        let c = &d.clusters[1];
        assert_eq!(c.size(), 5);
        assert!((c.offset[0] - 8f64.ln()).abs() < 1e-15);
        assert!(c.offset[1..].iter().all(|o| (o - 2f64.ln()).abs() < 1e-15));
        assert_eq!(c.x[(0, 2)], 0.0);
        assert_eq!(c.x[(3, 2)], 1.0);
    }

    #[test]
    fn groups_in_first_appearance_order() {
        let text = "g,y\nb,1\na,2\nb,3\n";
        let d = parse_csv(text, &ModelSpec::new("y", "g")).unwrap();
        assert_eq!(d.clusters[0].id, "b");
        assert_eq!(d.clusters[0].y, vec![1, 3]);
        assert_eq!(d.clusters[1].y, vec![2]);
    }

    #[test]
    fn parse_errors_name_row_and_column() {
        let spec = ModelSpec::new("y", "g").covariate("x");
        assert_eq!(parse_csv("", &spec), Err(DataError::Empty));
        assert_eq!(parse_csv("g,y,x\n", &spec), Err(DataError::NoRows));
        assert_eq!(
            parse_csv("g,y\n1,2\n", &spec),
            Err(DataError::MissingColumn("x".into()))
        );
        assert_eq!(
            parse_csv("g,y,x\n1,2,0.5\n1,-3,0.1\n", &spec),
            Err(DataError::InvalidResponse { row: 3, column: "y".into(), value: "-3".into() })
        );
        assert_eq!(
            parse_csv("g,y,x\n1,2.5,0.5\n", &spec),
            Err(DataError::InvalidResponse { row: 2, column: "y".into(), value: "2.5".into() })
        );
        assert_eq!(
            parse_csv("g,y,x\n1,2,abc\n", &spec),
            Err(DataError::InvalidNumber { row: 2, column: "x".into(), value: "abc".into() })
        );
        assert_eq!(
            parse_csv("g,y,x\n1,2\n", &spec),
            Err(DataError::Ragged { row: 2, expected: 3, found: 2 })
        );
    }

    #[test]
    fn duplicate_terms_rejected() {
        let spec = ModelSpec::new("y", "g").covariate("x").covariate("x");
        assert!(matches!(parse_csv("g,y,x\n1,1,1\n", &spec), Err(DataError::Spec(_))));
        let spec = ModelSpec::new("y", "g").interaction("a", "b").interaction("b", "a");
        assert!(matches!(parse_csv("g,y,a,b\n1,1,1,1\n", &spec), Err(DataError::Spec(_))));
    }

    #[test]
    fn spec_json() {
        let spec = ModelSpec::from_json(
            r#"{"response":"count","cluster":"animal","covariates":["conc","brood_day"],
                "interactions":[["conc","brood_day"]],"offset":null,"intercept":true}"#,
        )
        .unwrap();
        assert_eq!(spec.design_names(), vec!["intercept", "conc", "brood_day", "conc:brood_day"]);
        let minimal = ModelSpec::from_json(r#"{"response":"y","cluster":"g"}"#).unwrap();
        assert!(minimal.add_intercept);
    }

    #[test]
    fn ungrouping() {
        let d = parse_csv("g,y\na,1\na,2\nb,3\n", &ModelSpec::new("y", "g")).unwrap();
        let u = d.ungrouped();
        assert_eq!(u.clusters.len(), 3);
        assert!(u.clusters.iter().all(|c| c.size() == 1));
        assert_eq!(u.clusters[1].id, "a#2");
    }

    #[test]
    fn write_then_read() {
        let spec = ModelSpec::new("seizures", "patient")
            .covariate("post")
            .interaction("treat", "post")
            .offset("log_weeks");
        let d = parse_csv(&seizure_like(), &spec).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let again = parse_csv(std::str::from_utf8(&buf).unwrap(), &d.written_spec()).unwrap();
        assert_eq!(again, d);
    }
}
