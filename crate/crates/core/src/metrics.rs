//! Final average accuracy, backward forgetting and global average accuracy.

use serde::Serialize;

use crate::error::{Error, Result};

/// `rows[i][j]`: accuracy (percent) on task `j` after training task `i`, for `j ≤ i`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AccuracyMatrix {
    tasks: usize,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        AccuracyMatrix {
            tasks,
            rows: Vec::with_capacity(tasks),
        }
    }

    /// Builds a complete matrix from lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = AccuracyMatrix::new(rows.len());
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if self.rows.len() >= self.tasks {
            return Err(Error::Invariant(format!(
                "accuracy matrix already holds {} rows",
                self.tasks
            )));
        }
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Shape(format!(
                "row {} must have {} entries, got {}",
                self.rows.len(),
                self.rows.len() + 1,
                row.len()
            )));
        }
        if row.iter().any(|v| !(0.0..=100.0).contains(v)) {
            return Err(Error::Invariant("accuracies must lie in [0, 100]".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `A[i][j]` with 0-based indices.
    pub fn get(&self, after: usize, eval: usize) -> Option<f64> {
        self.rows.get(after).and_then(|r| r.get(eval)).copied()
    }

    pub fn is_complete(&self) -> bool {
        self.tasks > 0 && self.rows.len() == self.tasks
    }

    fn require_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(Error::Invariant(format!(
                "accuracy matrix is incomplete: {} of {} rows",
                self.rows.len(),
                self.tasks
            )))
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean of the last row.
pub fn final_avg_acc(a: &AccuracyMatrix) -> Result<f64> {
    a.require_complete()?;
    Ok(mean(a.rows.last().expect("complete")))
}

/// Mean over `j < K` of `A[j][j] − A[K][j]`; `None` for a single task.
pub fn backward_forgetting(a: &AccuracyMatrix) -> Result<Option<f64>> {
    a.require_complete()?;
    let k = a.tasks;
    if k < 2 {
        return Ok(None);
    }
    let last = &a.rows[k - 1];
    let drops: Vec<f64> = (0..k - 1).map(|j| a.rows[j][j] - last[j]).collect();
    Ok(Some(mean(&drops)))
}

/// Mean over sessions of the running average accuracy.
pub fn global_avg_acc(a: &AccuracyMatrix) -> Result<f64> {
    a.require_complete()?;
    let per_row: Vec<f64> = a.rows.iter().map(|r| mean(r)).collect();
    Ok(mean(&per_row))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub acc: f64,
    /// 0 when undefined (a single task); see `bwf_defined`.
    pub bwf: f64,
    pub bwf_defined: bool,
    pub gaa: f64,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsReport {
    pub fn from_matrix(a: &AccuracyMatrix) -> Result<Self> {
        let bwf = backward_forgetting(a)?;
        Ok(MetricsReport {
            acc: final_avg_acc(a)?,
            bwf: bwf.unwrap_or(0.0),
            bwf_defined: bwf.is_some(),
            gaa: global_avg_acc(a)?,
            rows: a.rows.clone(),
        })
    }
}
