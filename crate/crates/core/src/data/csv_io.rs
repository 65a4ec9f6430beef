//! Comma-separated dataset files and TOML dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PointId};
use crate::error::{Error, Result};

pub const ID_COLUMN: &str = "id";
pub const LABEL_COLUMN: &str = "label";

const MISSING_TOKENS: [&str; 5] = ["", "NA", "NaN", "nan", "?"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: String,
    /// Cells equal to this token (after trimming) become `+1`; everything else `-1`.
    pub positive_token: String,
    /// Column holding point ids; rows are numbered `0..n` when absent from the file.
    #[serde(default = "default_id_column")]
    pub id_column: Option<String>,
    #[serde(default)]
    pub drop_columns: Vec<String>,
    /// Skip rows with missing cells instead of failing.
    #[serde(default)]
    pub drop_missing: bool,
}

fn default_id_column() -> Option<String> {
    Some(ID_COLUMN.to_string())
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>, positive_token: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            positive_token: positive_token.into(),
            id_column: default_id_column(),
            drop_columns: Vec::new(),
            drop_missing: false,
        }
    }
}

/// Reads a headered CSV with every non-label, non-id column as a numeric feature.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    positive_token: &str,
) -> Result<Dataset> {
    load_csv_with(path, &CsvOptions::new(label_column, positive_token))
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let fail = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let label_idx = find(&opts.label_column)
        .ok_or_else(|| fail(format!("no label column {:?}", opts.label_column)))?;
    let id_idx = opts.id_column.as_deref().and_then(find);
    for col in &opts.drop_columns {
        if find(col).is_none() {
            return Err(fail(format!("no column {col:?} to drop")));
        }
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != label_idx && Some(j) != id_idx)
        .filter(|&j| !opts.drop_columns.iter().any(|c| c == headers[j].trim()))
        .collect();
    if feature_cols.is_empty() {
        return Err(fail("no feature columns".into()));
    }

    let d = feature_cols.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    let mut dropped = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let used = feature_cols
            .iter()
            .chain([&label_idx])
            .chain(id_idx.as_ref());
        if used
            .clone()
            .any(|&j| MISSING_TOKENS.contains(&record.get(j).unwrap_or("").trim()))
        {
            if opts.drop_missing {
                dropped += 1;
                continue;
            }
            return Err(fail(format!("missing value in row {row}")));
        }
        for &j in &feature_cols {
            let cell = record[j].trim();
            let v: f64 = cell.parse().map_err(|_| {
                fail(format!(
                    "row {row}, column {:?}: cannot parse {cell:?}",
                    &headers[j]
                ))
            })?;
            values.push(v);
        }
        labels.push(if record[label_idx].trim() == opts.positive_token {
            1.0
        } else {
            -1.0
        });
        if let Some(j) = id_idx {
            let cell = record[j].trim();
            let id: u64 = cell
                .parse()
                .map_err(|_| fail(format!("row {row}: bad id {cell:?}")))?;
            ids.push(PointId(id));
        } else {
            ids.push(PointId(row as u64));
        }
    }
    if dropped > 0 {
        log::info!(
            "{}: dropped {dropped} rows with missing values",
            path.display()
        );
    }
    if labels.is_empty() {
        return Err(fail("dataset has no rows".into()));
    }
    let features = DMatrix::from_row_slice(labels.len(), d, &values);
    Dataset::new(features, labels, ids).map_err(|e| fail(e.to_string()))
}

/// Writes `id,label,x0,..,x{d-1}` with shortest round-trip float formatting.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec![ID_COLUMN.to_string(), LABEL_COLUMN.to_string()];
    header.extend((0..data.d()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(data.d() + 2);
    for i in 0..data.n() {
        rec.clear();
        rec.push(data.id(i).to_string());
        rec.push(format!("{}", data.label(i)));
        rec.extend(data.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A TOML file describing how to ingest one CSV dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Data file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub label_column: String,
    pub positive_token: String,
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default)]
    pub drop_columns: Vec<String>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.path.is_relative() {
            if let Some(dir) = path.parent() {
                m.path = dir.join(&m.path);
            }
        }
        Ok(m)
    }

    pub fn load(&self) -> Result<Dataset> {
        let opts = CsvOptions {
            label_column: self.label_column.clone(),
            positive_token: self.positive_token.clone(),
            id_column: self.id_column.clone(),
            drop_columns: self.drop_columns.clone(),
            drop_missing: true,
        };
        load_csv_with(&self.path, &opts)
    }
}
