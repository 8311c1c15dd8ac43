//! Shape and value checks on inference inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("request has no records")]
    Empty,
    #[error("{rows} records exceed the limit of {max}")]
    TooManyRows { rows: usize, max: usize },
    #[error("body of {bytes} bytes exceeds the limit of {max}")]
    TooLarge { bytes: usize, max: usize },
    #[error("record {row} has {found} features, expected {expected}")]
    Width { row: usize, found: usize, expected: usize },
    #[error("record {row} feature {col} is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("record {row} feature {col} magnitude exceeds {max}")]
    OutOfRange { row: usize, col: usize, max: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputLimits {
    pub width: usize,
    pub max_rows: usize,
    pub max_bytes: usize,
    /// Bound on |value| for standardized features.
    pub max_abs: f64,
}

impl InputLimits {
    pub fn for_width(width: usize) -> Self {
        Self {
            width,
            max_rows: 4096,
            max_bytes: 8 * 1024 * 1024,
            max_abs: 1e6,
        }
    }

    pub fn check(&self, rows: &[Vec<f64>], body_bytes: usize) -> Result<(), ValidationError> {
        if body_bytes > self.max_bytes {
            return Err(ValidationError::TooLarge {
                bytes: body_bytes,
                max: self.max_bytes,
            });
        }
        if rows.is_empty() {
            return Err(ValidationError::Empty);
        }
        if rows.len() > self.max_rows {
            return Err(ValidationError::TooManyRows {
                rows: rows.len(),
                max: self.max_rows,
            });
        }
        for (row, values) in rows.iter().enumerate() {
            if values.len() != self.width {
                return Err(ValidationError::Width {
                    row,
                    found: values.len(),
                    expected: self.width,
                });
            }
            for (col, &v) in values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ValidationError::NonFinite { row, col });
                }
                if v.abs() > self.max_abs {
                    return Err(ValidationError::OutOfRange {
                        row,
                        col,
                        max: self.max_abs as u64,
                    });
                }
            }
        }
        Ok(())
    }
}
