use std::collections::BTreeMap;

use crate::error::{PipelineError, Result};
use crate::ingest::{Cell, RawTable};
use crate::schema::DatasetSchema;

pub const LAGS: usize = 3;

/// Turns a raw `(series_id, period, value)` table into lagged rows. The row
/// for month `t` holds the values at `t-1..t-3`, the calendar month of `t`,
/// and whether the value at `t` went "up" or "down" relative to `t-1`.
/// Rows with a missing value in the window are skipped.
pub fn flatten_series(raw: &RawTable) -> Result<RawTable> {
    let idx = |label: &str| {
        raw.column_index(label)
            .ok_or_else(|| PipelineError::MissingColumns(vec![label.to_string()]))
    };
    let (sid, per, val) = (idx("series_id")?, idx("period")?, idx("value")?);

    let mut series: BTreeMap<String, Vec<(f64, Option<f64>)>> = BTreeMap::new();
    for (r, row) in raw.rows().iter().enumerate() {
        let id = match &row[sid] {
            Cell::Text(s) => s.clone(),
            _ => return Err(PipelineError::Preprocess(format!("row {}: missing series_id", r + 1))),
        };
        let month = match row[per] {
            Cell::Time(t) => t,
            _ => return Err(PipelineError::Preprocess(format!("row {}: missing period", r + 1))),
        };
        let value = match row[val] {
            Cell::Num(v) => Some(v),
            _ => None,
        };
        series.entry(id).or_default().push((month, value));
    }

    let schema = DatasetSchema::bls();
    let mut rows = Vec::new();
    for (id, mut points) in series {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for t in LAGS..points.len() {
            let window: Option<Vec<f64>> = (0..=LAGS).map(|k| points[t - k].1).collect();
            let Some(w) = window else { continue };
            let month_of_year = (points[t].0.rem_euclid(12.0) as usize + 1).to_string();
            let direction = if w[0] > w[1] { "up" } else { "down" };
            rows.push(vec![
                Cell::Text(id.clone()),
                Cell::Num(w[1]),
                Cell::Num(w[2]),
                Cell::Num(w[3]),
                Cell::Text(month_of_year),
                Cell::Text(direction.into()),
            ]);
        }
    }
    if rows.is_empty() {
        return Err(PipelineError::EmptyInput(format!("no series has more than {LAGS} observations")));
    }
    RawTable::from_rows(schema, rows)
}
