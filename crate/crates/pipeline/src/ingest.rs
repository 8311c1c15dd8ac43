use std::collections::HashSet;
use std::io::Read;

use serde::Serialize;

use crate::error::{PipelineError, Result};
use crate::schema::{ColumnKind, DatasetSchema};

/// Tokens treated as a missing value in any column.
pub const MISSING_TOKENS: &[&str] = &["", "?", "NA", "NaN", "null"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Cell {
    Num(f64),
    Text(String),
    /// Months since 1970-01.
    Time(f64),
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuarantinedRow {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub column: String,
    pub reason: String,
}

/// Ingested rows with cells in schema column order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    schema: DatasetSchema,
    rows: Vec<Vec<Cell>>,
    quarantined: Vec<QuarantinedRow>,
    source_rows: usize,
}

impl RawTable {
    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn quarantined(&self) -> &[QuarantinedRow] {
        &self.quarantined
    }

    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.schema.columns.iter().position(|c| c.label == label)
    }

    pub fn column(&self, label: &str) -> Option<Vec<&Cell>> {
        let idx = self.column_index(label)?;
        Some(self.rows.iter().map(|r| &r[idx]).collect())
    }

    /// Builds a table directly from typed rows, e.g. for derived datasets.
    pub fn from_rows(schema: DatasetSchema, rows: Vec<Vec<Cell>>) -> Result<Self> {
        schema.validate()?;
        if let Some(bad) = rows.iter().find(|r| r.len() != schema.columns.len()) {
            return Err(PipelineError::InvalidSchema(format!(
                "row has {} cells, schema has {} columns",
                bad.len(),
                schema.columns.len()
            )));
        }
        let source_rows = rows.len();
        Ok(Self {
            schema,
            rows,
            quarantined: Vec::new(),
            source_rows,
        })
    }
}

fn is_missing(raw: &str) -> bool {
    MISSING_TOKENS.contains(&raw)
}

/// Parses `YYYY-MM`, `YYYY-MM-DD` or BLS-style `YYYYMmm` into months since 1970-01.
pub fn parse_month(raw: &str) -> Option<f64> {
    let (year, month) = if let Some((y, m)) = raw.split_once('M') {
        (y, m)
    } else {
        let mut parts = raw.split('-');
        let y = parts.next()?;
        let m = parts.next()?;
        if let Some(d) = parts.next() {
            let d: u32 = d.parse().ok()?;
            if !(1..=31).contains(&d) {
                return None;
            }
        }
        (y, m)
    };
    let year: i32 = year.parse().ok()?;
    let month: u32 = month.parse().ok()?;
    if !(1..=12).contains(&month) {
        return None;
    }
    Some(f64::from((year - 1970) * 12 + month as i32 - 1))
}

fn parse_cell(raw: &str, kind: &ColumnKind) -> std::result::Result<Cell, String> {
    let raw = raw.trim();
    if is_missing(raw) {
        return Ok(Cell::Missing);
    }
    match kind {
        ColumnKind::Numeric => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Cell::Num(v)),
            _ => Err(format!("expected a number, found {raw:?}")),
        },
        ColumnKind::Categorical | ColumnKind::Identifier => Ok(Cell::Text(raw.to_string())),
        ColumnKind::Ordinal(levels) => {
            if levels.iter().any(|l| l == raw) {
                Ok(Cell::Text(raw.to_string()))
            } else {
                Err(format!("{raw:?} is not one of the ordinal levels {levels:?}"))
            }
        }
        ColumnKind::Timestamp => parse_month(raw)
            .map(Cell::Time)
            .ok_or_else(|| format!("expected YYYY-MM date, found {raw:?}")),
    }
}

/// Reads a CSV with a header row. Header order may differ from the schema.
/// Rows with unparseable cells are quarantined with their row numbers.
pub fn ingest_csv<R: Read>(source: R, schema: &DatasetSchema) -> Result<RawTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(PipelineError::EmptyInput("no header row".into()));
    }

    let mut seen = HashSet::new();
    let duplicates: Vec<String> = header.iter().filter(|h| !seen.insert(h.as_str())).cloned().collect();
    if !duplicates.is_empty() {
        return Err(PipelineError::InvalidSchema(format!("duplicate header labels {duplicates:?}")));
    }
    let missing: Vec<String> = schema
        .labels()
        .filter(|l| !header.iter().any(|h| h == l))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingColumns(missing));
    }
    let unexpected: Vec<String> = header.iter().filter(|h| schema.column(h).is_none()).cloned().collect();
    if !unexpected.is_empty() {
        return Err(PipelineError::UnexpectedColumns(unexpected));
    }
    // positions[i] = index in the CSV record of schema column i
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| header.iter().position(|h| *h == c.label).expect("checked above"))
        .collect();

    let mut rows = Vec::new();
    let mut quarantined = Vec::new();
    let mut source_rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        source_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                quarantined.push(QuarantinedRow {
                    row: row_no,
                    column: String::new(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if record.len() != header.len() {
            quarantined.push(QuarantinedRow {
                row: row_no,
                column: String::new(),
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
            continue;
        }
        let mut cells = Vec::with_capacity(schema.columns.len());
        let mut failure = None;
        for (spec, &pos) in schema.columns.iter().zip(&positions) {
            match parse_cell(&record[pos], &spec.kind) {
                Ok(c) => cells.push(c),
                Err(reason) => {
                    failure = Some(QuarantinedRow {
                        row: row_no,
                        column: spec.label.clone(),
                        reason,
                    });
                    break;
                }
            }
        }
        match failure {
            Some(q) => quarantined.push(q),
            None => rows.push(cells),
        }
    }

    if source_rows == 0 {
        return Err(PipelineError::EmptyInput("header present but no data rows".into()));
    }
    if !quarantined.is_empty() {
        tracing::warn!(count = quarantined.len(), dataset = %schema.name, "rows quarantined during ingestion");
    }
    Ok(RawTable {
        schema: schema.clone(),
        rows,
        quarantined,
        source_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnSpec;

    fn small_schema() -> DatasetSchema {
        DatasetSchema::new(
            "t",
            vec![
                ColumnSpec {
                    label: "x".into(),
                    kind: ColumnKind::Numeric,
                },
                ColumnSpec {
                    label: "y".into(),
                    kind: ColumnKind::Categorical,
                },
            ],
            "y",
            0,
        )
        .unwrap()
    }

    #[test]
    fn header_order_does_not_matter() {
        let t = ingest_csv("y,x\na,1\nb,2\n".as_bytes(), &small_schema()).unwrap();
        assert_eq!(t.rows()[1], vec![Cell::Num(2.0), Cell::Text("b".into())]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(ingest_csv("".as_bytes(), &small_schema()), Err(PipelineError::EmptyInput(_))));
        assert!(matches!(ingest_csv("x,y\n".as_bytes(), &small_schema()), Err(PipelineError::EmptyInput(_))));
    }

    #[test]
    fn missing_and_unexpected_columns() {
        assert!(matches!(
            ingest_csv("x\n1\n".as_bytes(), &small_schema()),
            Err(PipelineError::MissingColumns(m)) if m == vec!["y".to_string()]
        ));
        assert!(matches!(
            ingest_csv("x,y,z\n1,a,2\n".as_bytes(), &small_schema()),
            Err(PipelineError::UnexpectedColumns(_))
        ));
    }

    #[test]
    fn quoted_fields_and_missing_tokens() {
        let t = ingest_csv("x,y\n?,\"a, b\"\n".as_bytes(), &small_schema()).unwrap();
        assert_eq!(t.rows()[0], vec![Cell::Missing, Cell::Text("a, b".into())]);
    }

    #[test]
    fn month_parsing() {
        assert_eq!(parse_month("1970-01"), Some(0.0));
        assert_eq!(parse_month("2020-03-15"), Some(602.0));
        assert_eq!(parse_month("2020M03"), Some(602.0));
        assert_eq!(parse_month("2020-13"), None);
    }
}
