//! Labelled feature matrices with stable point identifiers.

use std::collections::{HashMap, HashSet};
use std::fmt;

use nalgebra::{DMatrix, DMatrixView, Dyn, MatrixView, U1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Stable identifier of a training point. Survives subsetting and deletion.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointId(pub u64);

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A strided view of one feature row.
pub type RowView<'a> = MatrixView<'a, f64, U1, Dyn, U1, Dyn>;

/// Binary classification data: `n × d` features, labels in `{-1, +1}`, unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<f64>,
    ids: Vec<PointId>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<f64>, ids: Vec<PointId>) -> Result<Self> {
        if features.nrows() != labels.len() || labels.len() != ids.len() {
            return Err(invalid(format!(
                "row count mismatch: {} feature rows, {} labels, {} ids",
                features.nrows(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid(format!(
                "label {} at row {pos} is not in {{-1, +1}}",
                labels[pos]
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(invalid(format!("duplicate point id {dup}")));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite feature at row {}",
                pos % features.nrows().max(1)
            )));
        }
        Ok(Self {
            features,
            labels,
            ids,
        })
    }

    /// Builds a dataset whose ids are the row indices `0..n`.
    pub fn with_sequential_ids(features: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        let ids = (0..labels.len() as u64).map(PointId).collect();
        Self::new(features, labels, ids)
    }

    pub fn empty(d: usize) -> Self {
        Self {
            features: DMatrix::zeros(0, d),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn features_view(&self) -> DMatrixView<'_, f64> {
        self.features.as_view()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> RowView<'_> {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn id(&self, i: usize) -> PointId {
        self.ids[i]
    }

    pub fn index_map(&self) -> HashMap<PointId, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, i))
            .collect()
    }

    /// Rows at the given positions, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows.iter()),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Rows carrying the given ids, in the order the ids are listed.
    pub fn subset(&self, ids: &[PointId]) -> Result<Dataset> {
        let index = self.index_map();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| invalid(format!("point id {id} not present in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select(&rows))
    }

    /// Splits into `(remaining, removed)`; `removed` follows the order of `ids`.
    pub fn remove(&self, ids: &[PointId]) -> Result<(Dataset, Dataset)> {
        let removed = self.subset(ids)?;
        let drop: HashSet<PointId> = ids.iter().copied().collect();
        if drop.len() != ids.len() {
            return Err(invalid("deletion request lists an id twice"));
        }
        let keep: Vec<usize> = (0..self.n())
            .filter(|&i| !drop.contains(&self.ids[i]))
            .collect();
        Ok((self.select(&keep), removed))
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.n())
            .map(|i| self.features.row(i).norm())
            .fold(0.0, f64::max)
    }

    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Dataset> {
        Dataset::new(features, self.labels.clone(), self.ids.clone())
    }

    /// Concatenates two datasets with the same dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.d() != other.d() {
            return Err(invalid(
                "cannot concatenate datasets of different dimension",
            ));
        }
        let n = self.n() + other.n();
        let features = DMatrix::from_fn(n, self.d(), |i, j| {
            if i < self.n() {
                self.features[(i, j)]
            } else {
                other.features[(i - self.n(), j)]
            }
        });
        let labels = self.labels.iter().chain(&other.labels).copied().collect();
        let ids = self.ids.iter().chain(&other.ids).copied().collect();
        Dataset::new(features, labels, ids)
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.d() != d {
            return Err(invalid(format!(
                "dimension mismatch: data has {} features, model has {d}",
                self.d()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            return Err(invalid(format!("{what} dataset is empty")));
        }
        Ok(())
    }
}
