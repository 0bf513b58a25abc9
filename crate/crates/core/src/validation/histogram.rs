//! Fixed-bin histograms of the satisfaction outcomes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Variable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub center: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub group_id: String,
    pub variable: Variable,
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Bin centers covering every attainable value: joint moves in half points
/// over 1..7 and diff in whole points over -6..6.
fn centers(variable: Variable) -> Result<Vec<f64>> {
    match variable {
        Variable::Joint => Ok((0..13).map(|i| 1.0 + 0.5 * f64::from(i)).collect()),
        Variable::Diff => Ok((-6..=6).map(f64::from).collect()),
        Variable::TipChange => Err(Error::invalid(
            "histograms cover joint and differential satisfaction only",
        )),
    }
}

/// Counts raw (uncentered) values into the fixed bins for `variable`.
pub fn histogram(group_id: &str, variable: Variable, values: &[f64]) -> Result<Histogram> {
    let centers = centers(variable)?;
    let width = centers[1] - centers[0];
    let mut bins: Vec<HistogramBin> = centers
        .iter()
        .map(|&center| HistogramBin { center, count: 0 })
        .collect();
    for &v in values {
        let i = ((v - centers[0]) / width).round();
        if !(0.0..bins.len() as f64).contains(&i) {
            return Err(Error::invalid(format!(
                "{} value {v} outside the histogram range",
                variable.label()
            )));
        }
        bins[i as usize].count += 1;
    }
    Ok(Histogram {
        group_id: group_id.to_string(),
        variable,
        bins,
    })
}
