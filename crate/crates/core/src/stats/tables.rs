//! CSV exports in the layouts of the reference result tables.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{GroupSummary, PairwiseResult, TostResult, Variable};

/// Three-decimal p-value, with "<0.001" below that.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

/// Descriptives: one row per group with M and SD for each variable.
/// Group order follows first appearance in `summaries`.
pub fn descriptives_csv(summaries: &[GroupSummary]) -> Result<String> {
    let mut order: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, Variable), &GroupSummary> = BTreeMap::new();
    for s in summaries {
        if !order.contains(&s.group_id.as_str()) {
            order.push(&s.group_id);
        }
        cells.insert((&s.group_id, s.variable), s);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Model".to_string()];
    for v in Variable::ALL {
        let name = match v {
            Variable::TipChange => "Tip Change",
            Variable::Joint => "Joint Satisfaction",
            Variable::Diff => "Differential Satisfaction",
        };
        header.push(format!("{name} M"));
        header.push(format!("{name} SD"));
    }
    w.write_record(&header)?;
    for g in order {
        let mut row = vec![g.to_string()];
        for v in Variable::ALL {
            match cells.get(&(g, v)) {
                Some(s) => {
                    row.push(format!("{:.2}", s.mean));
                    row.push(format!("{:.2}", s.sd));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        w.write_record(&row)?;
    }
    finish(w)
}

/// Equivalence tests: Comparison, DV, bounds, p-value, verdict.
pub fn tost_csv(results: &[TostResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "Comparison",
        "DV",
        "Lower Bound",
        "Upper Bound",
        "p-value",
        "Is Equivalent",
    ])?;
    for r in results {
        w.write_record([
            format!("{} vs. {}", r.group_id, r.reference_id),
            r.variable.label().to_string(),
            format!("{:.4}", r.lower_bound),
            format!("{:.4}", r.upper_bound),
            format!("{:.4}", r.p_value),
            if r.is_equivalent { "True" } else { "False" }.to_string(),
        ])?;
    }
    finish(w)
}

/// Pairwise comparisons: Model A, Model B, Difference, p-value.
pub fn pairwise_csv(results: &[PairwiseResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Model A", "Model B", "Difference", "p-value"])?;
    for r in results {
        w.write_record([
            r.group_a.clone(),
            r.group_b.clone(),
            format!("{:.3}", r.mean_diff),
            format_p(r.p_value),
        ])?;
    }
    finish(w)
}
