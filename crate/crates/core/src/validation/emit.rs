//! Markdown, CSV and SVG renderings of a validation report. Output bytes
//! depend only on the report.

use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::tables::format_p;
use crate::stats::Variable;

use super::{pattern_labels, Histogram, ValidationReport, PATTERN_LEN};

pub const REPORT_FILES: [&str; 3] = ["report.md", "report.csv", "report.svg"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Writes the three report files into `dir`.
pub fn emit_report(report: &ValidationReport, dir: impl AsRef<FsPath>) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        markdown: dir.join(REPORT_FILES[0]),
        csv: dir.join(REPORT_FILES[1]),
        svg: dir.join(REPORT_FILES[2]),
    };
    for (path, body) in [
        (&files.markdown, render_markdown(report)),
        (&files.csv, render_csv(report)?),
        (&files.svg, render_svg(report)),
    ] {
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}

fn provenance_line(r: &ValidationReport) -> String {
    format!(
        "config_hash={} master_seed={} version={}",
        r.provenance.config_hash, r.provenance.master_seed, r.provenance.version
    )
}

fn p4(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.4}")
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

pub fn render_markdown(r: &ValidationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<!-- {} -->", provenance_line(r));
    let _ = writeln!(s, "# Validation report\n");
    let _ = writeln!(
        s,
        "Reference group: `{}`. Alpha {}, equivalence margin ±{} pooled SD, {} bootstrap resamples.\n",
        r.reference_group, r.alpha, r.margin_factor, r.bootstrap_resamples
    );

    let _ = writeln!(s, "## Equivalence tests\n");
    let _ = writeln!(
        s,
        "| Comparison | DV | Lower Bound | Upper Bound | p-value | Is Equivalent |"
    );
    let _ = writeln!(s, "|---|---|---:|---:|---:|---|");
    for t in &r.tost {
        let _ = writeln!(
            s,
            "| {} vs. {} | {} | {:.4} | {:.4} | {:.4} | {} |",
            t.group_id,
            t.reference_id,
            t.variable.label(),
            t.lower_bound,
            t.upper_bound,
            t.p_value,
            if t.is_equivalent { "True" } else { "False" }
        );
    }

    let _ = writeln!(s, "\n## Rankings\n");
    let _ = writeln!(s, "### Surface-level equivalence\n");
    let _ = writeln!(s, "| Rank | AI Model | Measures Achieved |");
    let _ = writeln!(s, "|---:|---|---|");
    for e in &r.equivalence.ranking {
        let row = r.equivalence.rows.iter().find(|x| x.group_id == e.group_id);
        let label = row.map(|x| x.measures_label()).unwrap_or_default();
        let _ = writeln!(s, "| {} | {} | {} |", e.rank, e.group_id, label);
    }
    let _ = writeln!(s, "\n### Process-level validation\n");
    let _ = writeln!(s, "| Rank | AI Model | Model Fidelity |");
    let _ = writeln!(s, "|---:|---|---|");
    for e in &r.process_ranking {
        let _ = writeln!(
            s,
            "| {} | {} | {}/{PATTERN_LEN} pathway matches |",
            e.rank, e.group_id, e.score
        );
    }

    let _ = writeln!(s, "\n## Path models\n");
    for m in &r.models {
        let _ = writeln!(s, "### {} (n = {})\n", m.group_id, m.n);
        let _ = writeln!(s, "| LHS | Op | RHS | Estimate | Std. Error | p-value |");
        let _ = writeln!(s, "|---|---|---|---:|---:|---:|");
        for p in &m.paths {
            let _ = writeln!(
                s,
                "| {} | ~ | {} | {:.3} | {:.3} | {} |",
                p.path.lhs().label(),
                p.path.rhs_label(),
                p.estimate,
                p.se,
                format_p(p.p_value)
            );
        }
        for v in [Variable::TipChange, Variable::Diff, Variable::Joint] {
            let e = m.variance(v);
            let _ = writeln!(
                s,
                "| {} | ~~ | {} | {:.3} | {:.3} | {} |",
                v.label(),
                v.label(),
                e.estimate,
                e.se,
                format_p(e.p_value)
            );
        }
        let _ = writeln!(s);
    }

    let _ = writeln!(s, "## Indirect effects\n");
    let pct = |x: f64| format!("{}", (x * 1000.0).round() / 10.0);
    let _ = writeln!(
        s,
        "| Group | Effect | Estimate | Bootstrap SE | CI {}% | CI {}% | p-value | Significant |",
        pct(r.alpha / 2.0),
        pct(1.0 - r.alpha / 2.0)
    );
    let _ = writeln!(s, "|---|---|---:|---:|---:|---:|---:|---|");
    for b in &r.bootstrap {
        for e in &b.estimates {
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.4} | {:.4} | {:.4} | {} | {} |",
                b.group_id,
                e.effect.label(),
                e.point,
                e.bootstrap_se,
                e.ci_low,
                e.ci_high,
                p4(e.p_value),
                yes_no(e.significant)
            );
        }
    }
    if let Some(b) = r.bootstrap.first() {
        let _ = writeln!(
            s,
            "\nBias-corrected percentile intervals. p-values: {}.",
            b.p_value_rule
        );
    }
    for b in &r.bootstrap {
        if b.skipped > 0 {
            let _ = writeln!(
                s,
                "\n{}: {} of {} resamples skipped as rank deficient.",
                b.group_id, b.skipped, b.requested
            );
        }
        for e in b.estimates.iter().filter(|e| e.bc_extreme) {
            let _ = writeln!(
                s,
                "\n{} {}: extreme bias correction.",
                b.group_id,
                e.effect.label()
            );
        }
    }

    let _ = writeln!(s, "\n## Pathway patterns\n");
    let _ = write!(s, "| Pathway |");
    for p in &r.patterns {
        let _ = write!(s, " {} |", p.group_id);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "|---|{}", "---|".repeat(r.patterns.len()));
    for (i, label) in pattern_labels().iter().enumerate() {
        let _ = write!(s, "| {label} |");
        for p in &r.patterns {
            let e = p.entries[i];
            let sign = match e.sign {
                1 => "+",
                -1 => "-",
                _ => "0",
            };
            let _ = write!(
                s,
                " {} {} |",
                if e.significant { "sig" } else { "ns" },
                sign
            );
        }
        let _ = writeln!(s);
    }
    let warnings: Vec<String> = r
        .fidelity
        .iter()
        .flat_map(|f| {
            f.sign_warnings
                .iter()
                .map(move |w| format!("{}: {w}", f.group_id))
        })
        .collect();
    if !warnings.is_empty() {
        let _ = writeln!(
            s,
            "\nSign disagreements on paths significant in both groups (not scored):\n"
        );
        for w in warnings {
            let _ = writeln!(s, "- {w}");
        }
    }

    let _ = writeln!(s, "\n## Threshold checks\n");
    let failures = r.threshold_failures();
    if failures.is_empty() {
        let _ = writeln!(s, "All configured thresholds met.");
    } else {
        for f in failures {
            let _ = writeln!(s, "- {f}");
        }
    }

    let _ = writeln!(s, "\n## Distributions\n");
    let _ = writeln!(
        s,
        "Bin counts are in `report.csv`; panels are drawn in `report.svg`."
    );
    s
}

/// Long format: one row per reported quantity.
pub fn render_csv(r: &ValidationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut row = |section: &str, group: &str, item: String, value: String| {
        w.write_record([section, group, &item, &value])
    };
    row("config", "", "alpha".into(), r.alpha.to_string())?;
    row(
        "config",
        "",
        "margin_factor".into(),
        r.margin_factor.to_string(),
    )?;
    row(
        "config",
        "",
        "bootstrap_resamples".into(),
        r.bootstrap_resamples.to_string(),
    )?;
    row(
        "config",
        "",
        "reference_group".into(),
        r.reference_group.clone(),
    )?;
    for t in &r.tost {
        let v = t.variable.short();
        row(
            "tost",
            &t.group_id,
            format!("{v}.lower_bound"),
            format!("{:.6}", t.lower_bound),
        )?;
        row(
            "tost",
            &t.group_id,
            format!("{v}.upper_bound"),
            format!("{:.6}", t.upper_bound),
        )?;
        row(
            "tost",
            &t.group_id,
            format!("{v}.mean_diff"),
            format!("{:.6}", t.mean_diff),
        )?;
        row(
            "tost",
            &t.group_id,
            format!("{v}.p_value"),
            format!("{:.6}", t.p_value),
        )?;
        row(
            "tost",
            &t.group_id,
            format!("{v}.is_equivalent"),
            t.is_equivalent.to_string(),
        )?;
    }
    for e in &r.equivalence.ranking {
        row(
            "ranking_surface",
            &e.group_id,
            "measures_achieved".into(),
            e.score.to_string(),
        )?;
        row(
            "ranking_surface",
            &e.group_id,
            "rank".into(),
            e.rank.to_string(),
        )?;
    }
    for e in &r.process_ranking {
        row(
            "ranking_process",
            &e.group_id,
            "pathway_matches".into(),
            e.score.to_string(),
        )?;
        row(
            "ranking_process",
            &e.group_id,
            "rank".into(),
            e.rank.to_string(),
        )?;
    }
    for m in &r.models {
        for p in &m.paths {
            let k = p.path.short();
            row(
                "path",
                &m.group_id,
                format!("{k}.estimate"),
                format!("{:.6}", p.estimate),
            )?;
            row(
                "path",
                &m.group_id,
                format!("{k}.se"),
                format!("{:.6}", p.se),
            )?;
            row(
                "path",
                &m.group_id,
                format!("{k}.p_value"),
                format!("{:.6}", p.p_value),
            )?;
        }
        for v in &m.variances {
            let k = v.variable.short();
            row(
                "residual_variance",
                &m.group_id,
                format!("{k}.estimate"),
                format!("{:.6}", v.estimate),
            )?;
            row(
                "residual_variance",
                &m.group_id,
                format!("{k}.se"),
                format!("{:.6}", v.se),
            )?;
        }
    }
    for b in &r.bootstrap {
        for e in &b.estimates {
            let k = e.effect.label().to_ascii_lowercase();
            row(
                "indirect",
                &b.group_id,
                format!("{k}.estimate"),
                format!("{:.6}", e.point),
            )?;
            row(
                "indirect",
                &b.group_id,
                format!("{k}.bootstrap_se"),
                format!("{:.6}", e.bootstrap_se),
            )?;
            row(
                "indirect",
                &b.group_id,
                format!("{k}.ci_low"),
                format!("{:.6}", e.ci_low),
            )?;
            row(
                "indirect",
                &b.group_id,
                format!("{k}.ci_high"),
                format!("{:.6}", e.ci_high),
            )?;
            row(
                "indirect",
                &b.group_id,
                format!("{k}.p_value"),
                format!("{:.6}", e.p_value),
            )?;
            row(
                "indirect",
                &b.group_id,
                format!("{k}.significant"),
                e.significant.to_string(),
            )?;
        }
        row(
            "indirect",
            &b.group_id,
            "skipped_resamples".into(),
            b.skipped.to_string(),
        )?;
    }
    let labels = pattern_labels();
    for p in &r.patterns {
        for (l, e) in labels.iter().zip(&p.entries) {
            row(
                "pattern",
                &p.group_id,
                format!("{l}.significant"),
                e.significant.to_string(),
            )?;
            row(
                "pattern",
                &p.group_id,
                format!("{l}.sign"),
                e.sign.to_string(),
            )?;
        }
    }
    for f in &r.fidelity {
        row(
            "fidelity",
            &f.group_id,
            "matches".into(),
            f.matches.to_string(),
        )?;
    }
    for h in &r.histograms {
        for b in &h.bins {
            row(
                "histogram",
                &h.group_id,
                format!("{}[{}]", h.variable.short(), b.center),
                b.count.to_string(),
            )?;
        }
    }
    let body = crate::stats::tables::finish(w)?;
    let mut s = String::new();
    let _ = writeln!(s, "# {}", provenance_line(r));
    let _ = writeln!(
        s,
        "# Long format: section,group_id,item,value. One row per reported quantity."
    );
    let _ = writeln!(
        s,
        "# sections: config, tost, ranking_surface, ranking_process, path, residual_variance,"
    );
    let _ = writeln!(s, "#   indirect, pattern, fidelity, histogram");
    let _ = writeln!(
        s,
        "# histogram items are variable[bin center] with the dyad count as value."
    );
    s.push_str("section,group_id,item,value\n");
    s.push_str(&body);
    Ok(s)
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 200.0;
const MARGIN: f64 = 30.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn panel(s: &mut String, h: &Histogram, x0: f64, y0: f64) {
    let plot_w = PANEL_W - 2.0 * MARGIN;
    let plot_h = PANEL_H - 2.0 * MARGIN;
    let max = h.bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let bar_w = plot_w / h.bins.len() as f64;
    let _ = writeln!(s, r#"<g transform="translate({x0:.1},{y0:.1})">"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="12">{} | {}</text>"#,
        PANEL_W / 2.0,
        escape(&h.group_id),
        h.variable.label()
    );
    let base = MARGIN + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="black"/>"#,
        MARGIN + plot_w
    );
    for (i, b) in h.bins.iter().enumerate() {
        let bh = plot_h * b.count as f64 / max;
        let x = MARGIN + i as f64 * bar_w;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#4c72b0"><title>{}: {}</title></rect>"##,
            x + 1.0,
            base - bh,
            bar_w - 2.0,
            b.center,
            b.count
        );
        if i % 2 == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
                x + bar_w / 2.0,
                base + 12.0,
                b.center
            );
        }
    }
    let _ = writeln!(s, "</g>");
}

/// One panel per histogram; rows are groups, columns are variables.
pub fn render_svg(r: &ValidationReport) -> String {
    let mut groups: Vec<&str> = Vec::new();
    for h in &r.histograms {
        if !groups.contains(&h.group_id.as_str()) {
            groups.push(&h.group_id);
        }
    }
    let cols = [Variable::Joint, Variable::Diff];
    let width = PANEL_W * cols.len() as f64;
    let height = PANEL_H * groups.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, "<!-- {} -->", provenance_line(r));
    for (row, g) in groups.iter().enumerate() {
        for (col, v) in cols.iter().enumerate() {
            if let Some(h) = r
                .histograms
                .iter()
                .find(|h| h.group_id == *g && h.variable == *v)
            {
                panel(&mut s, h, col as f64 * PANEL_W, row as f64 * PANEL_H);
            }
        }
    }
    let _ = writeln!(s, "</svg>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{
        bootstrap_indirect, fit_paths, simulate_path_data, BootstrapOptions, GeneratorParams,
        SeMode,
    };
    use crate::stats::{tost_equivalence, GroupSummary, TostSe};
    use crate::validation::{histogram, Provenance, Thresholds};

    fn sample_report(groups: &[&str]) -> ValidationReport {
        let mut models = Vec::new();
        let mut boots = Vec::new();
        let mut hists = Vec::new();
        let mut tost = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            let mut d =
                simulate_path_data(&GeneratorParams::human_reference(), 480, i as u64).unwrap();
            d.group_id = g.to_string();
            models.push(fit_paths(&d, SeMode::Ml).unwrap());
            boots.push(
                bootstrap_indirect(
                    &d,
                    &BootstrapOptions {
                        resamples: 1000,
                        seed: 1,
                        ..Default::default()
                    },
                )
                .unwrap(),
            );
            for v in [Variable::Joint, Variable::Diff] {
                let vals: Vec<f64> = (0..480)
                    .map(|k| {
                        if v == Variable::Joint {
                            1.0 + 0.5 * (k % 13) as f64
                        } else {
                            (k % 13) as f64 - 6.0
                        }
                    })
                    .collect();
                hists.push(histogram(g, v, &vals).unwrap());
            }
            if i > 0 {
                for v in Variable::ALL {
                    let h = GroupSummary::new(groups[0], v, 477, 1.0, 3.5).unwrap();
                    let a = GroupSummary::new(*g, v, 480, 1.1 + i as f64 * 0.3, 3.0).unwrap();
                    tost.push(tost_equivalence(&a, &h, 0.2, 0.05, TostSe::Welch).unwrap());
                }
            }
        }
        ValidationReport::build(
            Provenance {
                config_hash: "abc123".into(),
                master_seed: 42,
                version: "0.1.0".into(),
            },
            groups[0],
            0.05,
            0.2,
            tost,
            models,
            boots,
            hists,
            Thresholds {
                min_measures_achieved: Some(2),
                min_pathway_matches: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn writes_three_deterministic_files() {
        let groups = ["human", "m1", "m2", "m3", "m4", "m5", "m6"];
        let r = sample_report(&groups);
        let dir = tempfile::tempdir().unwrap();
        let a = emit_report(&r, dir.path().join("a")).unwrap();
        let b = emit_report(&r, dir.path().join("b")).unwrap();
        for (x, y) in [
            (&a.markdown, &b.markdown),
            (&a.csv, &b.csv),
            (&a.svg, &b.svg),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let md = std::fs::read_to_string(&a.markdown).unwrap();
        assert!(md.contains("## Rankings"));
        assert!(md.starts_with("<!-- config_hash=abc123 master_seed=42 version=0.1.0 -->"));
        let svg = std::fs::read_to_string(&a.svg).unwrap();
        assert_eq!(svg.matches("<g transform").count(), 14);
        let csv = std::fs::read_to_string(&a.csv).unwrap();
        assert!(csv.lines().take_while(|l| l.starts_with('#')).count() >= 2);
        assert!(csv.contains("histogram,m6,diff[6],"));
    }

    #[test]
    fn threshold_failures_are_listed() {
        let r = sample_report(&["human", "m1", "m2"]);
        let fails = r.threshold_failures();
        assert!(!fails.is_empty());
        assert!(render_markdown(&r).contains("minimum 2"));
        assert_eq!(r.fidelity.len(), 2);
        assert_eq!(r.patterns[0].entries.len(), PATTERN_LEN);
    }
}
