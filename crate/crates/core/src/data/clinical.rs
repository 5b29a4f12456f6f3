use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    /// Min-max normalized with train-split statistics.
    Continuous,
    /// Already 0/1; passed through unchanged.
    Mutation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicator {
    pub name: String,
    pub kind: IndicatorKind,
}

impl Indicator {
    fn new(name: &str, kind: IndicatorKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
        }
    }
}

/// Gender, age, blood counts and the three driver mutations.
pub fn default_indicators() -> Vec<Indicator> {
    use IndicatorKind::*;
    [
        ("gender", Continuous),
        ("age", Continuous),
        ("hemoglobin", Continuous),
        ("white_blood_cell", Continuous),
        ("red_cell_mass", Continuous),
        ("hematocrit", Continuous),
        ("platelet_count", Continuous),
        ("jak2", Mutation),
        ("mpl", Mutation),
        ("calr", Mutation),
    ]
    .into_iter()
    .map(|(n, k)| Indicator::new(n, k))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// Range of `values`; `None` if empty.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| {
            Some(match acc {
                None => MinMax { min: v, max: v },
                Some(MinMax { min, max }) => MinMax {
                    min: min.min(v),
                    max: max.max(v),
                },
            })
        })
    }

    /// `(v - min) / (max - min)` clamped to `[0, 1]`; 0 when the range is
    /// degenerate.
    pub fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            0.0
        } else {
            ((v - self.min) / span).clamp(0.0, 1.0)
        }
    }
}

pub fn minmax_normalize(column: &[f64], stats: MinMax) -> Result<Vec<f64>> {
    if stats.max < stats.min {
        return Err(Error::config(format!(
            "min-max stats have max {} below min {}",
            stats.max, stats.min
        )));
    }
    Ok(column.iter().map(|&v| stats.apply(v)).collect())
}

/// `positive` → 1, `negative` → 0, case-insensitive.
pub fn encode_mutation(case_id: &str, field: &str, token: &str) -> Result<f64> {
    match token.trim().to_ascii_lowercase().as_str() {
        "positive" => Ok(1.0),
        "negative" => Ok(0.0),
        _ => Err(Error::Parse {
            case_id: case_id.to_string(),
            field: field.to_string(),
            token: token.to_string(),
        }),
    }
}

/// Applies per-indicator normalization to one raw clinical row.
pub fn normalize_row(
    case_id: &str,
    raw: &[f64],
    indicators: &[Indicator],
    stats: &[MinMax],
) -> Result<Vec<f64>> {
    if raw.len() != indicators.len() || stats.len() != indicators.len() {
        return Err(Error::config(format!(
            "case {case_id}: {} clinical values, {} indicators, {} stats",
            raw.len(),
            indicators.len(),
            stats.len()
        )));
    }
    raw.iter()
        .zip(indicators)
        .zip(stats)
        .map(|((&v, ind), s)| match ind.kind {
            IndicatorKind::Continuous => Ok(s.apply(v)),
            IndicatorKind::Mutation if v == 0.0 || v == 1.0 => Ok(v),
            IndicatorKind::Mutation => Err(Error::Parse {
                case_id: case_id.to_string(),
                field: ind.name.clone(),
                token: v.to_string(),
            }),
        })
        .collect()
}
