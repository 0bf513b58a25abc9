//! Surface and process validation verdicts, rankings, and report output.

mod emit;
mod histogram;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{BootstrapResult, GroupPathModel, IndirectEffect, IndirectEstimate, Path};
use crate::stats::{TostResult, Variable};

pub use emit::{emit_report, render_csv, render_markdown, render_svg, ReportFiles, REPORT_FILES};
pub use histogram::{histogram, Histogram, HistogramBin};

/// Number of scored pathways: eight direct paths and two indirect effects.
pub const PATTERN_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternEntry {
    pub significant: bool,
    /// -1, 0 or +1.
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternVector {
    pub group_id: String,
    pub entries: Vec<PatternEntry>,
}

/// Labels of the ten pattern positions in canonical order.
pub fn pattern_labels() -> Vec<&'static str> {
    Path::ALL
        .iter()
        .map(|p| p.short())
        .chain(IndirectEffect::ALL.iter().map(|e| e.label()))
        .collect()
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Direct paths are significant when p < alpha; indirect effects use their
/// own interval-based flag.
pub fn significance_pattern(
    model: &GroupPathModel,
    indirect: &[IndirectEstimate],
    alpha: f64,
) -> Result<PatternVector> {
    model.validate()?;
    let mut entries: Vec<PatternEntry> = model
        .paths
        .iter()
        .map(|p| PatternEntry {
            significant: p.p_value < alpha,
            sign: sign(p.estimate),
        })
        .collect();
    for effect in IndirectEffect::ALL {
        let e = indirect
            .iter()
            .find(|e| e.effect == effect)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "group {}: missing {}",
                    model.group_id,
                    effect.label()
                ))
            })?;
        entries.push(PatternEntry {
            significant: e.significant,
            sign: sign(e.point),
        });
    }
    Ok(PatternVector {
        group_id: model.group_id.clone(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub group_id: String,
    pub matches: usize,
    pub flags: Vec<bool>,
    /// Positions where both are significant but the signs differ.
    pub sign_warnings: Vec<String>,
}

/// Counts positions whose significance status agrees with the reference.
pub fn fidelity_score(ai: &PatternVector, human: &PatternVector) -> Result<FidelityScore> {
    if ai.entries.len() != PATTERN_LEN || human.entries.len() != PATTERN_LEN {
        return Err(Error::invalid(format!(
            "pattern vectors must have {PATTERN_LEN} entries (got {} and {})",
            ai.entries.len(),
            human.entries.len()
        )));
    }
    let labels = pattern_labels();
    let flags: Vec<bool> = ai
        .entries
        .iter()
        .zip(&human.entries)
        .map(|(a, h)| a.significant == h.significant)
        .collect();
    let sign_warnings = ai
        .entries
        .iter()
        .zip(&human.entries)
        .zip(&labels)
        .filter(|((a, h), _)| a.significant && h.significant && a.sign != h.sign)
        .map(|(_, l)| l.to_string())
        .collect();
    Ok(FidelityScore {
        group_id: ai.group_id.clone(),
        matches: flags.iter().filter(|&&f| f).count(),
        flags,
        sign_warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub group_id: String,
    /// Equivalence verdict for tip change, joint and diff, in that order.
    pub equivalent: [bool; 3],
    pub measures_achieved: usize,
}

impl EquivalenceRow {
    /// E.g. "All 3 measures", "2 measures (tip, joint)", "1 measure (joint only)".
    pub fn measures_label(&self) -> String {
        let names: Vec<&str> = Variable::ALL
            .iter()
            .zip(self.equivalent)
            .filter(|(_, e)| *e)
            .map(|(v, _)| v.short())
            .collect();
        match names.len() {
            0 => "0 measures".into(),
            1 => format!("1 measure ({} only)", names[0]),
            3 => "All 3 measures".into(),
            n => format!("{n} measures ({})", names.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub group_id: String,
    pub score: usize,
    pub rank: usize,
}

/// Descending by score; ties share the rank of their first member and keep
/// input order.
pub fn competition_ranking(scores: &[(String, usize)]) -> Vec<RankedEntry> {
    let mut order: Vec<&(String, usize)> = scores.iter().collect();
    order.sort_by_key(|e| std::cmp::Reverse(e.1));
    order
        .iter()
        .map(|(g, s)| RankedEntry {
            group_id: g.clone(),
            score: *s,
            rank: 1 + scores.iter().filter(|(_, o)| o > s).count(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceSummary {
    pub rows: Vec<EquivalenceRow>,
    pub ranking: Vec<RankedEntry>,
}

/// Collapses TOST results into per-model counts. Every model appearing in
/// `results` needs exactly one result per variable. Model order follows
/// first appearance.
pub fn equivalence_summary(results: &[TostResult]) -> Result<EquivalenceSummary> {
    let mut order: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, Variable), bool> = BTreeMap::new();
    for r in results {
        if !order.contains(&r.group_id.as_str()) {
            order.push(&r.group_id);
        }
        if cells
            .insert((&r.group_id, r.variable), r.is_equivalent)
            .is_some()
        {
            return Err(Error::invalid(format!(
                "duplicate equivalence result for {} / {}",
                r.group_id,
                r.variable.label()
            )));
        }
    }
    let mut rows = Vec::new();
    for g in order {
        let mut equivalent = [false; 3];
        for (slot, v) in equivalent.iter_mut().zip(Variable::ALL) {
            *slot = *cells.get(&(g, v)).ok_or_else(|| {
                Error::invalid(format!("no equivalence result for {g} / {}", v.label()))
            })?;
        }
        rows.push(EquivalenceRow {
            group_id: g.to_string(),
            equivalent,
            measures_achieved: equivalent.iter().filter(|&&e| e).count(),
        });
    }
    let scores: Vec<(String, usize)> = rows
        .iter()
        .map(|r| (r.group_id.clone(), r.measures_achieved))
        .collect();
    Ok(EquivalenceSummary {
        ranking: competition_ranking(&scores),
        rows,
    })
}

/// Optional pass marks for CI use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_measures_achieved: Option<usize>,
    pub min_pathway_matches: Option<usize>,
}

/// Provenance stamped into every report file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub provenance: Provenance,
    pub reference_group: String,
    pub alpha: f64,
    pub margin_factor: f64,
    pub bootstrap_resamples: usize,
    pub tost: Vec<TostResult>,
    pub equivalence: EquivalenceSummary,
    /// Reference group first, then models in configured order.
    pub models: Vec<GroupPathModel>,
    pub bootstrap: Vec<BootstrapResult>,
    pub patterns: Vec<PatternVector>,
    pub fidelity: Vec<FidelityScore>,
    pub process_ranking: Vec<RankedEntry>,
    pub histograms: Vec<Histogram>,
    pub thresholds: Thresholds,
}

impl ValidationReport {
    /// Builds verdicts from fitted models and TOST results. `models` and
    /// `bootstrap` must cover the same groups, including the reference.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        provenance: Provenance,
        reference_group: &str,
        alpha: f64,
        margin_factor: f64,
        tost: Vec<TostResult>,
        models: Vec<GroupPathModel>,
        bootstrap: Vec<BootstrapResult>,
        histograms: Vec<Histogram>,
        thresholds: Thresholds,
    ) -> Result<Self> {
        let equivalence = equivalence_summary(&tost)?;
        let mut patterns = Vec::new();
        for m in &models {
            let b = bootstrap
                .iter()
                .find(|b| b.group_id == m.group_id)
                .ok_or_else(|| {
                    Error::invalid(format!("no bootstrap result for group {}", m.group_id))
                })?;
            patterns.push(significance_pattern(m, &b.estimates, alpha)?);
        }
        let human = patterns
            .iter()
            .find(|p| p.group_id == reference_group)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "reference group {reference_group} has no path model"
                ))
            })?
            .clone();
        let fidelity = patterns
            .iter()
            .filter(|p| p.group_id != reference_group)
            .map(|p| fidelity_score(p, &human))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<(String, usize)> = fidelity
            .iter()
            .map(|f| (f.group_id.clone(), f.matches))
            .collect();
        let bootstrap_resamples = bootstrap.first().map_or(0, |b| b.requested);
        Ok(Self {
            provenance,
            reference_group: reference_group.to_string(),
            alpha,
            margin_factor,
            bootstrap_resamples,
            tost,
            equivalence,
            models,
            bootstrap,
            patterns,
            fidelity,
            process_ranking: competition_ranking(&scores),
            histograms,
            thresholds,
        })
    }

    /// Models that fall below a configured threshold, with the reason.
    pub fn threshold_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(min) = self.thresholds.min_measures_achieved {
            for r in self
                .equivalence
                .rows
                .iter()
                .filter(|r| r.measures_achieved < min)
            {
                out.push(format!(
                    "{}: {} of 3 measures equivalent (minimum {min})",
                    r.group_id, r.measures_achieved
                ));
            }
        }
        if let Some(min) = self.thresholds.min_pathway_matches {
            for f in self.fidelity.iter().filter(|f| f.matches < min) {
                out.push(format!(
                    "{}: {}/{PATTERN_LEN} pathway matches (minimum {min})",
                    f.group_id, f.matches
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(group: &str, sig: [bool; 10]) -> PatternVector {
        PatternVector {
            group_id: group.into(),
            entries: sig
                .iter()
                .map(|&s| PatternEntry {
                    significant: s,
                    sign: 1,
                })
                .collect(),
        }
    }

    #[test]
    fn fidelity_is_ten_minus_hamming() {
        let h = pv(
            "human",
            [
                true, false, true, false, true, true, true, true, false, false,
            ],
        );
        let a = pv(
            "gpt-4o",
            [true, true, true, true, true, false, true, true, true, true],
        );
        let s = fidelity_score(&a, &h).unwrap();
        assert_eq!(s.matches, 5);
        assert_eq!(fidelity_score(&h, &a).unwrap().matches, 5);
        assert_eq!(fidelity_score(&h, &h).unwrap().matches, 10);
    }

    #[test]
    fn sign_flips_are_warned_not_scored() {
        let h = pv("human", [true; 10]);
        let mut a = pv("m", [true; 10]);
        a.entries[2].sign = -1;
        let s = fidelity_score(&a, &h).unwrap();
        assert_eq!(s.matches, 10);
        assert_eq!(s.sign_warnings, vec!["Joint~TC".to_string()]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let h = pv("human", [true; 10]);
        let mut a = h.clone();
        a.entries.pop();
        assert!(fidelity_score(&a, &h).is_err());
    }

    #[test]
    fn competition_ranks() {
        let s: Vec<(String, usize)> = [("a", 3), ("b", 2), ("c", 2), ("d", 1), ("e", 1), ("f", 1)]
            .iter()
            .map(|(g, n)| (g.to_string(), *n))
            .collect();
        let r: Vec<usize> = competition_ranking(&s).iter().map(|e| e.rank).collect();
        assert_eq!(r, vec![1, 2, 2, 4, 4, 4]);
        let zeros: Vec<(String, usize)> = ["a", "b"].iter().map(|g| (g.to_string(), 0)).collect();
        assert!(competition_ranking(&zeros).iter().all(|e| e.rank == 1));
    }

    #[test]
    fn measures_labels() {
        let row = |e: [bool; 3]| EquivalenceRow {
            group_id: "m".into(),
            equivalent: e,
            measures_achieved: e.iter().filter(|&&x| x).count(),
        };
        assert_eq!(row([true; 3]).measures_label(), "All 3 measures");
        assert_eq!(
            row([true, true, false]).measures_label(),
            "2 measures (tip, joint)"
        );
        assert_eq!(
            row([false, true, false]).measures_label(),
            "1 measure (joint only)"
        );
    }
}
