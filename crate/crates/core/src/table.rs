use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::trajectory::TransitionSet;

/// One value per (row, action): action probabilities or Q-values over the
/// rows of a [`TransitionSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    action_count: usize,
    values: Vec<f64>,
}

impl ActionTable {
    pub fn from_rows(action_count: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * action_count);
        for r in rows {
            if r.len() != action_count {
                return Err(Error::LengthMismatch {
                    expected: action_count,
                    actual: r.len(),
                });
            }
            values.extend(r);
        }
        Ok(Self {
            action_count,
            values,
        })
    }

    /// Evaluates `f` on every row's features.
    pub fn evaluate<F>(data: &TransitionSet, exec: Exec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync + Send,
    {
        Self::from_rows(data.action_count, exec.map(data.len(), |i| f(data.row(i))))
    }

    pub fn constant(rows: usize, row: &[f64]) -> Self {
        Self {
            action_count: row.len(),
            values: row.iter().copied().cycle().take(rows * row.len()).collect(),
        }
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn rows(&self) -> usize {
        self.values
            .len()
            .checked_div(self.action_count)
            .unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.action_count..(i + 1) * self.action_count]
    }

    /// `Σ_a self[i][a] · other[i][a]`.
    pub fn row_dot(&self, other: &ActionTable, i: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(other.row(i))
            .map(|(a, b)| a * b)
            .sum()
    }
}
