//! The surface-level battery over a dataset or over summary statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::dataset::AnalysisDataset;
use crate::error::{Error, Result};
use crate::stats::{
    games_howell, levene, tost_equivalence, welch_anova, GroupSummary, LeveneResult,
    PairwiseResult, TostResult, Variable, WelchResult,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmnibusRow {
    pub variable: Variable,
    /// Absent when computed from summaries.
    pub levene: Option<LeveneResult>,
    pub welch: Option<WelchResult>,
    /// Why a test was skipped.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResults {
    pub reference_group: String,
    /// Group order used in every table.
    pub groups: Vec<String>,
    pub summaries: Vec<GroupSummary>,
    pub omnibus: Vec<OmnibusRow>,
    pub pairwise: Vec<(Variable, Vec<PairwiseResult>)>,
    pub tost: Vec<TostResult>,
    /// "dataset" or the summaries file name.
    pub source: String,
}

/// Reads summaries in long format: `group_id,variable,n,mean,sd`. Lines
/// starting with `#` are comments.
pub fn read_summaries(path: &Path) -> Result<Vec<GroupSummary>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_summaries(&text)
}

pub fn parse_summaries(text: &str) -> Result<Vec<GroupSummary>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["group_id", "variable", "n", "mean", "sd"] {
        return Err(Error::invalid(format!(
            "summaries header must be group_id,variable,n,mean,sd; found {}",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::invalid(format!("summaries: bad number {:?}", &rec[i])))
        };
        let n: usize = rec[2]
            .parse()
            .map_err(|_| Error::invalid(format!("summaries: bad n {:?}", &rec[2])))?;
        out.push(GroupSummary::new(
            &rec[0],
            rec[1].parse()?,
            n,
            num(3)?,
            num(4)?,
        )?);
    }
    Ok(out)
}

/// Reference first, then `preferred` order, then the rest alphabetically.
pub fn order_groups(present: &[String], reference: &str, preferred: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for g in std::iter::once(&reference.to_string()).chain(preferred) {
        if present.contains(g) && !out.contains(g) {
            out.push(g.clone());
        }
    }
    let mut rest: Vec<&String> = present.iter().filter(|g| !out.contains(g)).collect();
    rest.sort();
    out.extend(rest.into_iter().cloned());
    out
}

fn summaries_for<'a>(
    all: &'a [GroupSummary],
    groups: &[String],
    v: Variable,
) -> Vec<&'a GroupSummary> {
    groups
        .iter()
        .filter_map(|g| all.iter().find(|s| &s.group_id == g && s.variable == v))
        .collect()
}

/// Welch ANOVA, Games-Howell and TOST from summaries; Levene needs raw data
/// and is filled in by `analyze_dataset`.
pub fn analyze_summaries(
    summaries: Vec<GroupSummary>,
    groups: Vec<String>,
    reference: &str,
    cfg: &AnalysisConfig,
    source: &str,
) -> Result<AnalysisResults> {
    if !groups.iter().any(|g| g == reference) {
        return Err(Error::invalid(format!(
            "reference group {reference} has no data"
        )));
    }
    let mut omnibus = Vec::new();
    let mut pairwise = Vec::new();
    let mut tost = Vec::new();
    for v in Variable::ALL {
        let s: Vec<GroupSummary> = summaries_for(&summaries, &groups, v)
            .into_iter()
            .cloned()
            .collect();
        if s.len() != groups.len() {
            return Err(Error::invalid(format!(
                "summaries for {} do not cover every group",
                v.label()
            )));
        }
        let mut notes = Vec::new();
        let welch = match welch_anova(&s) {
            Ok(w) => Some(w),
            Err(e) => {
                notes.push(format!("Welch ANOVA skipped: {e}"));
                None
            }
        };
        match games_howell(&s) {
            Ok(p) => pairwise.push((v, p)),
            Err(e) => notes.push(format!("Games-Howell skipped: {e}")),
        }
        omnibus.push(OmnibusRow {
            variable: v,
            levene: None,
            welch,
            notes,
        });
    }
    let human: Vec<&GroupSummary> = summaries
        .iter()
        .filter(|s| s.group_id == reference)
        .collect();
    for g in groups.iter().filter(|g| *g != reference) {
        for v in Variable::ALL {
            let a = summaries_for(&summaries, std::slice::from_ref(g), v)[0];
            let h = human
                .iter()
                .find(|s| s.variable == v)
                .ok_or_else(|| Error::invalid(format!("reference has no {} summary", v.label())))?;
            tost.push(tost_equivalence(
                a,
                h,
                cfg.margin_factor,
                cfg.alpha,
                cfg.tost_se,
            )?);
        }
    }
    Ok(AnalysisResults {
        reference_group: reference.to_string(),
        groups,
        summaries,
        omnibus,
        pairwise,
        tost,
        source: source.to_string(),
    })
}

/// Full battery on raw (uncentered) outcomes.
pub fn analyze_dataset(
    ds: &AnalysisDataset,
    reference: &str,
    preferred: &[String],
    cfg: &AnalysisConfig,
) -> Result<AnalysisResults> {
    let groups = order_groups(&ds.group_ids(), reference, preferred);
    let raw = |g: &str, v: Variable| -> Vec<f64> {
        ds.group_rows(g).map(|r| r.outcome.raw().get(v)).collect()
    };
    let mut summaries = Vec::new();
    for g in &groups {
        for v in Variable::ALL {
            summaries.push(GroupSummary::from_values(g.as_str(), v, &raw(g, v))?);
        }
    }
    let mut res = analyze_summaries(summaries, groups.clone(), reference, cfg, "dataset")?;
    for row in &mut res.omnibus {
        let values: Vec<Vec<f64>> = groups.iter().map(|g| raw(g, row.variable)).collect();
        match levene(&values, cfg.levene_center) {
            Ok(l) => row.levene = Some(l),
            Err(e) => row.notes.push(format!("Levene skipped: {e}")),
        }
    }
    Ok(res)
}

/// Omnibus table: one row per variable.
pub fn omnibus_csv(rows: &[OmnibusRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "DV",
        "Levene W",
        "Levene df1",
        "Levene df2",
        "Levene p",
        "Welch F",
        "Welch df1",
        "Welch df2",
        "Welch p",
        "Partial eta squared",
    ])?;
    let opt = |v: Option<f64>, prec: usize| v.map(|x| format!("{x:.prec$}")).unwrap_or_default();
    for r in rows {
        let l = r.levene.as_ref();
        let wl = r.welch.as_ref();
        w.write_record([
            r.variable.label().to_string(),
            opt(l.map(|x| x.w_stat), 3),
            opt(l.map(|x| x.df1 as f64), 0),
            opt(l.map(|x| x.df2 as f64), 0),
            opt(l.map(|x| x.p_value), 4),
            opt(wl.map(|x| x.f_stat), 3),
            opt(wl.map(|x| x.df1 as f64), 0),
            opt(wl.map(|x| x.df2), 2),
            opt(wl.map(|x| x.p_value), 4),
            opt(wl.map(|x| x.partial_eta_sq), 3),
        ])?;
    }
    crate::stats::tables::finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# comment\ngroup_id,variable,n,mean,sd\nhuman,tip,477,0.5,3.5\nhuman,joint,477,4.0,1.2\nhuman,diff,477,0.1,1.9\nm,tip,480,0.6,3.4\nm,joint,480,4.1,1.1\nm,diff,480,0.9,1.5\n";

    #[test]
    fn parses_long_summaries() {
        let s = parse_summaries(SAMPLE).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s[0].variable, Variable::TipChange);
        assert!(parse_summaries("a,b\n1,2\n").is_err());
    }

    #[test]
    fn summaries_battery() {
        let s = parse_summaries(SAMPLE).unwrap();
        let groups = vec!["human".to_string(), "m".to_string()];
        let r = analyze_summaries(s, groups, "human", &AnalysisConfig::default(), "x").unwrap();
        assert_eq!(r.tost.len(), 3);
        assert_eq!(r.omnibus.len(), 3);
        assert!(r
            .omnibus
            .iter()
            .all(|o| o.levene.is_none() && o.welch.is_some()));
        assert_eq!(r.pairwise.len(), 3);
        let csv = omnibus_csv(&r.omnibus).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn group_order() {
        let present: Vec<String> = ["b", "human", "a", "z"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let preferred = vec!["z".to_string()];
        assert_eq!(
            order_groups(&present, "human", &preferred),
            vec!["human", "z", "a", "b"]
        );
    }
}
