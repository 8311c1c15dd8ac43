use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// Ordered levels, lowest first.
    Ordinal(Vec<String>),
    /// `YYYY-MM` or `YYYY-MM-DD`.
    Timestamp,
    /// Row identifier; validated on ingest and dropped by preprocessing.
    Identifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub label: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    pub target: String,
    pub expected_rows: usize,
}

fn num(label: &str) -> ColumnSpec {
    ColumnSpec {
        label: label.into(),
        kind: ColumnKind::Numeric,
    }
}

fn cat(label: &str) -> ColumnSpec {
    ColumnSpec {
        label: label.into(),
        kind: ColumnKind::Categorical,
    }
}

fn ord(label: &str, levels: &[&str]) -> ColumnSpec {
    ColumnSpec {
        label: label.into(),
        kind: ColumnKind::Ordinal(levels.iter().map(|s| s.to_string()).collect()),
    }
}

fn scale(label: &str, lo: u32, hi: u32) -> ColumnSpec {
    let levels: Vec<String> = (lo..=hi).map(|v| v.to_string()).collect();
    ColumnSpec {
        label: label.into(),
        kind: ColumnKind::Ordinal(levels),
    }
}

impl DatasetSchema {
    /// Validates target cardinality and label uniqueness.
    pub fn new(name: impl Into<String>, columns: Vec<ColumnSpec>, target: impl Into<String>, expected_rows: usize) -> Result<Self> {
        let s = Self {
            name: name.into(),
            columns,
            target: target.into(),
            expected_rows,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.label.as_str()) {
                return Err(PipelineError::InvalidSchema(format!("duplicate column label {:?}", c.label)));
            }
            if let ColumnKind::Ordinal(levels) = &c.kind {
                if levels.is_empty() {
                    return Err(PipelineError::InvalidSchema(format!("ordinal column {:?} has no levels", c.label)));
                }
            }
        }
        let targets = self.columns.iter().filter(|c| c.label == self.target).count();
        if targets != 1 {
            return Err(PipelineError::TargetCardinality(targets));
        }
        Ok(())
    }

    pub fn column(&self, label: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.label.as_str())
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "hr" => Some(Self::hr()),
            "adult" => Some(Self::adult()),
            "bls" => Some(Self::bls()),
            "bls_raw" => Some(Self::bls_raw()),
            _ => None,
        }
    }

    /// IBM HR attrition: 1470 rows, 35 columns including the `Attrition` target.
    pub fn hr() -> Self {
        let columns = vec![
            num("Age"),
            cat("Attrition"),
            ord("BusinessTravel", &["Non-Travel", "Travel_Rarely", "Travel_Frequently"]),
            num("DailyRate"),
            cat("Department"),
            num("DistanceFromHome"),
            scale("Education", 1, 5),
            cat("EducationField"),
            num("EmployeeCount"),
            ColumnSpec {
                label: "EmployeeNumber".into(),
                kind: ColumnKind::Identifier,
            },
            scale("EnvironmentSatisfaction", 1, 4),
            cat("Gender"),
            num("HourlyRate"),
            scale("JobInvolvement", 1, 4),
            scale("JobLevel", 1, 5),
            cat("JobRole"),
            scale("JobSatisfaction", 1, 4),
            cat("MaritalStatus"),
            num("MonthlyIncome"),
            num("MonthlyRate"),
            num("NumCompaniesWorked"),
            cat("Over18"),
            cat("OverTime"),
            num("PercentSalaryHike"),
            scale("PerformanceRating", 1, 4),
            scale("RelationshipSatisfaction", 1, 4),
            num("StandardHours"),
            scale("StockOptionLevel", 0, 3),
            num("TotalWorkingYears"),
            num("TrainingTimesLastYear"),
            scale("WorkLifeBalance", 1, 4),
            num("YearsAtCompany"),
            num("YearsInCurrentRole"),
            num("YearsSinceLastPromotion"),
            num("YearsWithCurrManager"),
        ];
        Self::new("hr", columns, "Attrition", 1470).expect("built-in schema is valid")
    }

    /// UCI Adult census income: 14 features plus the `income` target.
    pub fn adult() -> Self {
        let columns = vec![
            num("age"),
            cat("workclass"),
            num("fnlwgt"),
            cat("education"),
            num("education-num"),
            cat("marital-status"),
            cat("occupation"),
            cat("relationship"),
            cat("race"),
            cat("sex"),
            num("capital-gain"),
            num("capital-loss"),
            num("hours-per-week"),
            cat("native-country"),
            cat("income"),
        ];
        Self::new("adult", columns, "income", 48_842).expect("built-in schema is valid")
    }

    /// Raw BLS monthly employment series (720 entries).
    pub fn bls_raw() -> Self {
        let columns = vec![
            ColumnSpec {
                label: "series_id".into(),
                kind: ColumnKind::Identifier,
            },
            ColumnSpec {
                label: "period".into(),
                kind: ColumnKind::Timestamp,
            },
            num("value"),
        ];
        Self::new("bls_raw", columns, "value", 720).expect("built-in schema is valid")
    }

    /// BLS series flattened to rows with three lags and a month index; the
    /// target is the direction of the next value.
    pub fn bls() -> Self {
        let columns = vec![
            cat("series_id"),
            num("lag1"),
            num("lag2"),
            num("lag3"),
            scale("month", 1, 12),
            cat("direction"),
        ];
        Self::new("bls", columns, "direction", 720).expect("built-in schema is valid")
    }
}
