//! Analysis dataset CSV plus its JSON manifest.

use std::path::{Path, PathBuf};

use crate::design::ExperimentCondition;
use crate::error::{Error, Result};
use crate::money::Cents;

use super::{AnalysisDataset, CenteringSpec, DatasetManifest, DatasetRow, OutcomeRecord};

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 19] = [
    "run_id",
    "group_id",
    "dyad_id",
    "service_outcome",
    "tip_adjustable",
    "tip_visibility",
    "price",
    "initial_tip",
    "final_tip",
    "customer_sat",
    "worker_sat",
    "customer_reasoning",
    "worker_reasoning",
    "tip_change_raw",
    "joint_raw",
    "diff_raw",
    "tip_change_c",
    "joint_c",
    "diff_c",
];

/// `data/dataset.csv` → `data/dataset.manifest.json`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

/// Writes the CSV and its manifest next to it.
pub fn export_dataset(dataset: &AnalysisDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in &dataset.rows {
        let o = &r.outcome;
        w.write_record([
            r.run_id.clone(),
            r.group_id.clone(),
            r.dyad_id.clone(),
            r.condition.service_outcome.as_str().to_string(),
            r.condition.tip_adjustable.to_string(),
            r.condition.tip_visibility.as_str().to_string(),
            r.price.decimal(),
            r.initial_tip.decimal(),
            r.final_tip.decimal(),
            r.customer_sat.to_string(),
            r.worker_sat.to_string(),
            r.customer_reasoning.clone(),
            r.worker_reasoning.clone(),
            o.tip_change_raw.decimal(),
            o.joint_raw.to_string(),
            o.diff_raw.to_string(),
            o.tip_change_c.to_string(),
            o.joint_c.to_string(),
            o.diff_c.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&dataset.manifest)?;
    std::fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

struct RowCtx {
    line: usize,
}

impl RowCtx {
    fn err(&self, field: &'static str, message: impl Into<String>) -> Error {
        Error::Data {
            row: Some(self.line),
            field,
            message: message.into(),
        }
    }

    fn cents(&self, rec: &csv::StringRecord, idx: usize) -> Result<Cents> {
        rec[idx]
            .parse()
            .map_err(|e: Error| self.err(CSV_HEADER[idx], e.to_string()))
    }

    fn float(&self, rec: &csv::StringRecord, idx: usize) -> Result<f64> {
        rec[idx]
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                self.err(
                    CSV_HEADER[idx],
                    format!("not a finite number: {:?}", &rec[idx]),
                )
            })
    }

    fn sat(&self, rec: &csv::StringRecord, idx: usize) -> Result<u8> {
        match rec[idx].trim().parse::<u8>() {
            Ok(v) if (1..=7).contains(&v) => Ok(v),
            _ => Err(self.err(
                CSV_HEADER[idx],
                format!("{:?} is not an integer in 1-7", &rec[idx]),
            )),
        }
    }
}

fn parse_row(rec: &csv::StringRecord, line: usize) -> Result<DatasetRow> {
    let cx = RowCtx { line };
    if rec.len() != CSV_HEADER.len() {
        return Err(cx.err(
            "record",
            format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
        ));
    }
    let key = format!("{}/{}/{}", &rec[3], &rec[4], &rec[5]);
    let condition: ExperimentCondition = key
        .parse()
        .map_err(|e: Error| cx.err("service_outcome", e.to_string()))?;
    let price = cx.cents(rec, 6)?;
    let initial_tip = cx.cents(rec, 7)?;
    let final_tip = cx.cents(rec, 8)?;
    let customer_sat = cx.sat(rec, 9)?;
    let worker_sat = cx.sat(rec, 10)?;
    let tip_change_raw = cx.cents(rec, 13)?;
    let joint_raw = cx.float(rec, 14)?;
    let diff_raw = cx.float(rec, 15)?;
    if rec[2].is_empty() {
        return Err(cx.err("dyad_id", "empty"));
    }
    if price.0 <= 0 {
        return Err(cx.err("price", "must be positive"));
    }
    if initial_tip.is_negative() {
        return Err(cx.err("initial_tip", "negative"));
    }
    if final_tip.is_negative() {
        return Err(cx.err("final_tip", "negative"));
    }
    if !condition.tip_adjustable && final_tip != initial_tip {
        return Err(cx.err(
            "final_tip",
            "differs from initial_tip in a non-adjustable condition",
        ));
    }
    let expected_change = if condition.tip_adjustable {
        final_tip - initial_tip
    } else {
        Cents::ZERO
    };
    if tip_change_raw != expected_change {
        return Err(cx.err(
            "tip_change_raw",
            format!("{} != final_tip - initial_tip", tip_change_raw.decimal()),
        ));
    }
    let (c, w) = (customer_sat as f64, worker_sat as f64);
    if joint_raw != (c + w) / 2.0 {
        return Err(cx.err("joint_raw", "inconsistent with satisfactions"));
    }
    if diff_raw != c - w {
        return Err(cx.err("diff_raw", "inconsistent with satisfactions"));
    }
    Ok(DatasetRow {
        run_id: rec[0].to_string(),
        group_id: rec[1].to_string(),
        dyad_id: rec[2].to_string(),
        condition,
        price,
        initial_tip,
        final_tip,
        customer_sat,
        worker_sat,
        customer_reasoning: rec[11].to_string(),
        worker_reasoning: rec[12].to_string(),
        outcome: OutcomeRecord {
            tip_change_raw,
            joint_raw,
            diff_raw,
            tip_change_c: cx.float(rec, 16)?,
            joint_c: cx.float(rec, 17)?,
            diff_c: cx.float(rec, 18)?,
        },
    })
}

/// Reads and validates a dataset. Without a manifest the rows are recentered
/// with the default pooled scope.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<AnalysisDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != CSV_HEADER {
        return Err(Error::DatasetSchema {
            expected: SCHEMA_VERSION,
            message: format!(
                "{}: expected columns {:?}, found {:?}",
                path.display(),
                CSV_HEADER,
                found
            ),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        rows.push(parse_row(&rec, i + 2)?);
    }
    let mpath = manifest_path(path);
    if !mpath.exists() {
        return AnalysisDataset::merge(
            vec![AnalysisDataset {
                rows,
                manifest: DatasetManifest::default(),
            }],
            &CenteringSpec::default(),
        );
    }
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::json_at(&mpath, &e))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::DatasetSchema {
            expected: SCHEMA_VERSION,
            message: format!(
                "{} declares schema v{}",
                mpath.display(),
                manifest.schema_version
            ),
        });
    }
    if manifest.n_rows != rows.len() {
        return Err(Error::DatasetSchema {
            expected: SCHEMA_VERSION,
            message: format!(
                "manifest lists {} rows, file has {}",
                manifest.n_rows,
                rows.len()
            ),
        });
    }
    let spec = CenteringSpec {
        scope: manifest.centering_scope,
        means: manifest.means.clone(),
    };
    for (i, r) in rows.iter().enumerate() {
        let key = spec.key_for(&r.group_id);
        let m = spec.means.get(key).ok_or_else(|| Error::Data {
            row: Some(i + 2),
            field: "group_id",
            message: format!("no centering means for {key:?} in manifest"),
        })?;
        let o = &r.outcome;
        let checks = [
            (
                "tip_change_c",
                o.tip_change_c,
                o.tip_change_raw.as_dollars() - m.tip_change,
            ),
            ("joint_c", o.joint_c, o.joint_raw - m.joint),
            ("diff_c", o.diff_c, o.diff_raw - m.diff),
        ];
        for (field, got, want) in checks {
            if (got - want).abs() > 1e-9 {
                return Err(Error::Data {
                    row: Some(i + 2),
                    field,
                    message: format!("{got} does not equal raw minus manifest mean ({want})"),
                });
            }
        }
    }
    Ok(AnalysisDataset { rows, manifest })
}
