//! Completeness screening: failed dyads are flagged and excluded whole.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::enumerate_conditions;

use super::DyadOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedDyad {
    pub group_id: String,
    pub dyad_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub usable: usize,
    pub planned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub flagged: Vec<FlaggedDyad>,
    /// Per group, per condition key.
    pub cells: BTreeMap<String, BTreeMap<String, CellCount>>,
    pub usable: usize,
    pub planned: usize,
}

impl QualityReport {
    pub fn is_complete(&self) -> bool {
        self.flagged.is_empty() && self.usable == self.planned
    }
}

/// Flags failed dyads and counts usable dyads per cell against
/// `replications_per_cell`.
pub fn validate_quality(outcomes: &[DyadOutcome], replications_per_cell: u32) -> QualityReport {
    let mut cells: BTreeMap<String, BTreeMap<String, CellCount>> = BTreeMap::new();
    let mut groups: Vec<&str> = outcomes.iter().map(DyadOutcome::group_id).collect();
    groups.sort();
    groups.dedup();
    for g in &groups {
        let entry = cells.entry(g.to_string()).or_default();
        for c in enumerate_conditions() {
            entry.insert(
                c.key(),
                CellCount {
                    usable: 0,
                    planned: replications_per_cell as usize,
                },
            );
        }
    }
    let mut flagged = Vec::new();
    for o in outcomes {
        match o {
            DyadOutcome::Complete(r) => {
                let cell = cells
                    .get_mut(&r.group_id)
                    .and_then(|m| m.get_mut(&r.condition.key()))
                    .expect("every condition is pre-populated");
                cell.usable += 1;
            }
            DyadOutcome::Failed(f) => flagged.push(FlaggedDyad {
                group_id: f.group_id.clone(),
                dyad_id: f.dyad_id.clone(),
                reason: format!("{} failed: {}", f.failed_role, f.reason),
            }),
        }
    }
    flagged.sort_by(|a, b| (&a.group_id, &a.dyad_id).cmp(&(&b.group_id, &b.dyad_id)));
    let usable = cells
        .values()
        .flat_map(|m| m.values())
        .map(|c| c.usable)
        .sum();
    let planned = groups.len() * 16 * replications_per_cell as usize;
    QualityReport {
        flagged,
        cells,
        usable,
        planned,
    }
}
