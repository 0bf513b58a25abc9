//! Dyad records, derived outcome variables, centering, and persistence.

mod io;
mod journal;
mod quality;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::ExperimentCondition;
use crate::error::{Error, Result};
use crate::gateway::{CustomerResult, WorkerResult};
use crate::money::Cents;
use crate::stats::Variable;
use crate::vignette::Role;

pub use io::{export_dataset, load_dataset, manifest_path, CSV_HEADER, SCHEMA_VERSION};
pub use journal::{read_journal, Journal, JournalContents, JournalHeader, JournalLine};
pub use quality::{validate_quality, CellCount, FlaggedDyad, QualityReport};

/// One completed customer-worker exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadRecord {
    pub run_id: String,
    pub group_id: String,
    pub dyad_id: String,
    pub condition: ExperimentCondition,
    pub replicate: u32,
    pub price: Cents,
    pub initial_tip: Cents,
    pub customer: CustomerResult,
    pub worker: WorkerResult,
    pub started_at_ms: u64,
    pub completed_at_ms: u64,
}

/// A dyad that could not be completed. Kept in the journal, excluded from analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedDyad {
    pub run_id: String,
    pub group_id: String,
    pub dyad_id: String,
    pub condition: ExperimentCondition,
    pub replicate: u32,
    pub failed_role: Role,
    pub reason: String,
    pub customer: Option<CustomerResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum DyadOutcome {
    Complete(DyadRecord),
    Failed(FailedDyad),
}

impl DyadOutcome {
    pub fn dyad_id(&self) -> &str {
        match self {
            DyadOutcome::Complete(r) => &r.dyad_id,
            DyadOutcome::Failed(f) => &f.dyad_id,
        }
    }

    pub fn group_id(&self) -> &str {
        match self {
            DyadOutcome::Complete(r) => &r.group_id,
            DyadOutcome::Failed(f) => &f.group_id,
        }
    }

    pub fn condition(&self) -> ExperimentCondition {
        match self {
            DyadOutcome::Complete(r) => r.condition,
            DyadOutcome::Failed(f) => f.condition,
        }
    }

    pub fn record(&self) -> Option<&DyadRecord> {
        match self {
            DyadOutcome::Complete(r) => Some(r),
            DyadOutcome::Failed(_) => None,
        }
    }
}

/// Uncentered outcome variables of one dyad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawOutcomes {
    pub tip_change: Cents,
    pub joint: f64,
    pub diff: f64,
}

impl RawOutcomes {
    pub fn get(&self, v: Variable) -> f64 {
        match v {
            Variable::TipChange => self.tip_change.as_dollars(),
            Variable::Joint => self.joint,
            Variable::Diff => self.diff,
        }
    }

    /// Recovers (customer, worker) satisfaction from joint and diff.
    pub fn satisfactions(&self) -> (f64, f64) {
        (self.joint + self.diff / 2.0, self.joint - self.diff / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub tip_change_raw: Cents,
    pub joint_raw: f64,
    pub diff_raw: f64,
    pub tip_change_c: f64,
    pub joint_c: f64,
    pub diff_c: f64,
}

impl OutcomeRecord {
    pub fn raw(&self) -> RawOutcomes {
        RawOutcomes {
            tip_change: self.tip_change_raw,
            joint: self.joint_raw,
            diff: self.diff_raw,
        }
    }

    pub fn centered(&self, v: Variable) -> f64 {
        match v {
            Variable::TipChange => self.tip_change_c,
            Variable::Joint => self.joint_c,
            Variable::Diff => self.diff_c,
        }
    }
}

fn check_sat(value: u8, field: &'static str) -> Result<()> {
    if (1..=7).contains(&value) {
        Ok(())
    } else {
        Err(Error::Data {
            row: None,
            field,
            message: format!("{value} outside 1-7"),
        })
    }
}

/// Outcome variables for one record. Non-adjustable conditions are a
/// structural zero for tip change regardless of the parsed final tip.
pub fn derive_outcomes(record: &DyadRecord) -> Result<RawOutcomes> {
    check_sat(record.customer.satisfaction, "customer_sat")?;
    check_sat(record.worker.satisfaction, "worker_sat")?;
    if record.customer.final_tip.is_negative() {
        return Err(Error::Data {
            row: None,
            field: "final_tip",
            message: format!("{} is negative", record.customer.final_tip),
        });
    }
    if record.initial_tip.is_negative() {
        return Err(Error::Data {
            row: None,
            field: "initial_tip",
            message: format!("{} is negative", record.initial_tip),
        });
    }
    let tip_change = if record.condition.tip_adjustable {
        record.customer.final_tip - record.initial_tip
    } else {
        Cents::ZERO
    };
    let c = record.customer.satisfaction as f64;
    let w = record.worker.satisfaction as f64;
    Ok(RawOutcomes {
        tip_change,
        joint: (c + w) / 2.0,
        diff: c - w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringScope {
    #[default]
    PooledAllGroups,
    PerGroup,
}

/// Means subtracted from each raw variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringMeans {
    pub tip_change: f64,
    pub joint: f64,
    pub diff: f64,
}

/// Key under which pooled means are stored.
pub const POOLED_KEY: &str = "all";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CenteringSpec {
    pub scope: CenteringScope,
    /// Keyed by group id, or [`POOLED_KEY`] for pooled centering. Empty means
    /// "compute from the data"; filled means are reused as-is.
    #[serde(default)]
    pub means: BTreeMap<String, CenteringMeans>,
}

impl CenteringSpec {
    pub fn new(scope: CenteringScope) -> Self {
        Self {
            scope,
            means: BTreeMap::new(),
        }
    }

    fn key_for<'a>(&self, group_id: &'a str) -> &'a str {
        match self.scope {
            CenteringScope::PooledAllGroups => POOLED_KEY,
            CenteringScope::PerGroup => group_id,
        }
    }
}

/// Centers raw outcomes. Returns the records and the spec with the means used,
/// so centering again with the returned spec is a no-op on the result.
pub fn center_dataset(
    raws: &[(String, RawOutcomes)],
    spec: &CenteringSpec,
) -> Result<(Vec<OutcomeRecord>, CenteringSpec)> {
    if raws.is_empty() {
        return Err(Error::invalid("cannot center an empty dataset"));
    }
    let mut used = spec.clone();
    if used.means.is_empty() {
        let mut sums: BTreeMap<&str, ([f64; 3], usize)> = BTreeMap::new();
        for (g, r) in raws {
            let e = sums.entry(spec.key_for(g)).or_insert(([0.0; 3], 0));
            e.0[0] += r.tip_change.as_dollars();
            e.0[1] += r.joint;
            e.0[2] += r.diff;
            e.1 += 1;
        }
        for (k, (s, n)) in sums {
            let n = n as f64;
            used.means.insert(
                k.to_string(),
                CenteringMeans {
                    tip_change: s[0] / n,
                    joint: s[1] / n,
                    diff: s[2] / n,
                },
            );
        }
    }
    let out = raws
        .iter()
        .map(|(g, r)| {
            let key = used.key_for(g);
            let m = used.means.get(key).ok_or_else(|| Error::Lookup {
                what: "centering means",
                key: key.to_string(),
            })?;
            Ok(OutcomeRecord {
                tip_change_raw: r.tip_change,
                joint_raw: r.joint,
                diff_raw: r.diff,
                tip_change_c: r.tip_change.as_dollars() - m.tip_change,
                joint_c: r.joint - m.joint,
                diff_c: r.diff - m.diff,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, used))
}

/// One analysis-dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub run_id: String,
    pub group_id: String,
    pub dyad_id: String,
    pub condition: ExperimentCondition,
    pub price: Cents,
    pub initial_tip: Cents,
    pub final_tip: Cents,
    pub customer_sat: u8,
    pub worker_sat: u8,
    pub customer_reasoning: String,
    pub worker_reasoning: String,
    pub outcome: OutcomeRecord,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub centering_scope: CenteringScope,
    pub means: BTreeMap<String, CenteringMeans>,
    /// Usable dyads per group and condition key.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub n_rows: usize,
    #[serde(default)]
    pub sources: Vec<String>,
    /// Config hash, master seed and code version of the producing run.
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisDataset {
    pub rows: Vec<DatasetRow>,
    pub manifest: DatasetManifest,
}

impl AnalysisDataset {
    /// Builds a centered dataset from complete records, ordered by group,
    /// condition, and dyad id.
    pub fn from_records(records: &[DyadRecord], spec: &CenteringSpec) -> Result<Self> {
        let mut sorted: Vec<&DyadRecord> = records.iter().collect();
        sorted.sort_by(|a, b| {
            (&a.group_id, a.condition, &a.dyad_id).cmp(&(&b.group_id, b.condition, &b.dyad_id))
        });
        let raws = sorted
            .iter()
            .map(|r| Ok((r.group_id.clone(), derive_outcomes(r)?)))
            .collect::<Result<Vec<_>>>()?;
        let (outcomes, used) = center_dataset(&raws, spec)?;
        let rows = sorted
            .iter()
            .zip(outcomes)
            .map(|(r, outcome)| DatasetRow {
                run_id: r.run_id.clone(),
                group_id: r.group_id.clone(),
                dyad_id: r.dyad_id.clone(),
                condition: r.condition,
                price: r.price,
                initial_tip: r.initial_tip,
                final_tip: if r.condition.tip_adjustable {
                    r.customer.final_tip
                } else {
                    r.initial_tip
                },
                customer_sat: r.customer.satisfaction,
                worker_sat: r.worker.satisfaction,
                customer_reasoning: r.customer.reasoning.clone(),
                worker_reasoning: r.worker.reasoning.clone(),
                outcome,
            })
            .collect();
        Ok(Self::with_rows(rows, used))
    }

    /// Merges several datasets and recenters them together.
    pub fn merge(parts: Vec<AnalysisDataset>, spec: &CenteringSpec) -> Result<Self> {
        let mut rows: Vec<DatasetRow> = parts.into_iter().flat_map(|d| d.rows).collect();
        rows.sort_by(|a, b| {
            (&a.group_id, a.condition, &a.dyad_id).cmp(&(&b.group_id, b.condition, &b.dyad_id))
        });
        let raws: Vec<(String, RawOutcomes)> = rows
            .iter()
            .map(|r| (r.group_id.clone(), r.outcome.raw()))
            .collect();
        let (outcomes, used) = center_dataset(&raws, spec)?;
        for (row, o) in rows.iter_mut().zip(outcomes) {
            row.outcome = o;
        }
        Ok(Self::with_rows(rows, used))
    }

    fn with_rows(rows: Vec<DatasetRow>, spec: CenteringSpec) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for r in &rows {
            *counts
                .entry(r.group_id.clone())
                .or_default()
                .entry(r.condition.key())
                .or_default() += 1;
        }
        let manifest = DatasetManifest {
            schema_version: SCHEMA_VERSION,
            centering_scope: spec.scope,
            means: spec.means,
            counts,
            n_rows: rows.len(),
            sources: Vec::new(),
            provenance: BTreeMap::new(),
        };
        Self { rows, manifest }
    }

    pub fn group_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|r| r.group_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn group_rows<'a>(
        &'a self,
        group_id: &'a str,
    ) -> impl Iterator<Item = &'a DatasetRow> + 'a {
        self.rows.iter().filter(move |r| r.group_id == group_id)
    }

    /// Centered values of `variable` for one group.
    pub fn values(&self, group_id: &str, variable: Variable) -> Vec<f64> {
        self.group_rows(group_id)
            .map(|r| r.outcome.centered(variable))
            .collect()
    }
}
