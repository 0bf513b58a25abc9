//! CSV exports of fitted path models and bootstrap rows, and readers for the
//! same layouts.

use crate::error::{Error, Result};
use crate::stats::tables::{finish, format_p};
use crate::stats::Variable;

use super::{
    BootstrapResult, GroupPathModel, IndirectEffect, IndirectEstimate, Path, PathEstimate, SeMode,
    VarianceEstimate,
};

pub const PATH_TABLE_HEADER: [&str; 6] = ["LHS", "Op", "RHS", "Estimate", "Std. Error", "p-value"];

/// Residual variance rows in printed order.
const VARIANCE_ORDER: [Variable; 3] = [Variable::TipChange, Variable::Diff, Variable::Joint];

/// Regression paths then residual variances, three decimals.
pub fn path_table_csv(model: &GroupPathModel) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PATH_TABLE_HEADER)?;
    for p in &model.paths {
        w.write_record([
            p.path.lhs().label(),
            "~",
            p.path.rhs_label(),
            &format!("{:.3}", p.estimate),
            &format!("{:.3}", p.se),
            &format_p(p.p_value),
        ])?;
    }
    for v in VARIANCE_ORDER {
        let e = model.variance(v);
        w.write_record([
            v.label(),
            "~~",
            v.label(),
            &format!("{:.3}", e.estimate),
            &format!("{:.3}", e.se),
            &format_p(e.p_value),
        ])?;
    }
    finish(w)
}

/// Reads a p-value cell. A bound such as "<0.001" is read as half the bound.
pub fn parse_p(cell: &str) -> Result<f64> {
    let t = cell.trim();
    let (bounded, num) = match t.strip_prefix('<') {
        Some(rest) => (true, rest.trim()),
        None => (false, t),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| Error::invalid(format!("bad p-value {cell:?}")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("p-value {cell:?} outside [0, 1]")));
    }
    Ok(if bounded { v / 2.0 } else { v })
}

fn parse_num(cell: &str, what: &str) -> Result<f64> {
    cell.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad {what} {cell:?}")))
}

fn check_header(r: &mut csv::Reader<&[u8]>, want: &[&str]) -> Result<()> {
    let got: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if got != want {
        return Err(Error::invalid(format!(
            "expected header {want:?}, found {got:?}"
        )));
    }
    Ok(())
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

/// Reads a table in the `path_table_csv` layout into a model. Rows may come
/// in any order but all eight paths and three variances must be present.
pub fn parse_path_table(group_id: &str, n: usize, text: &str) -> Result<GroupPathModel> {
    let mut r = reader(text);
    check_header(&mut r, &PATH_TABLE_HEADER)?;
    let mut paths: Vec<PathEstimate> = Vec::new();
    let mut variances: Vec<VarianceEstimate> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let (estimate, se, p_value) = (
            parse_num(cell(3), "estimate")?,
            parse_num(cell(4), "standard error")?,
            parse_p(cell(5))?,
        );
        match cell(1).trim() {
            "~" => paths.push(PathEstimate {
                path: Path::from_labels(cell(0), cell(2))?,
                estimate,
                se,
                p_value,
            }),
            "~~" => variances.push(VarianceEstimate {
                variable: cell(0).parse()?,
                estimate,
                se,
                p_value,
            }),
            op => return Err(Error::invalid(format!("unknown operator {op:?}"))),
        }
    }
    paths.sort_by_key(|p| p.path);
    variances.sort_by_key(|v| v.variable);
    let model = GroupPathModel {
        group_id: group_id.to_string(),
        n,
        paths,
        variances,
        intercepts: [0.0; 3],
        se_mode: SeMode::Ml,
    };
    model.validate()?;
    Ok(model)
}

pub fn bootstrap_header(alpha: f64) -> [String; 8] {
    let pct = |x: f64| {
        let s = format!("{:.2}", x * 100.0);
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    };
    [
        "Group".into(),
        "Effect".into(),
        "Estimate".into(),
        "Bootstrap SE".into(),
        format!("CI {}%", pct(alpha / 2.0)),
        format!("CI {}%", pct(1.0 - alpha / 2.0)),
        "p-value".into(),
        "Significant".into(),
    ]
}

fn format_p4(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.4}")
    }
}

/// Two rows per group. All results must share one alpha.
pub fn bootstrap_table_csv(results: &[BootstrapResult]) -> Result<String> {
    let alpha = results.first().map_or(0.05, |r| r.alpha);
    if results.iter().any(|r| r.alpha != alpha) {
        return Err(Error::invalid(
            "bootstrap results use different alpha levels",
        ));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(bootstrap_header(alpha))?;
    for r in results {
        for e in &r.estimates {
            w.write_record([
                r.group_id.as_str(),
                e.effect.label(),
                &format!("{:.3}", e.point),
                &format!("{:.4}", e.bootstrap_se),
                &format!("{:.4}", e.ci_low),
                &format!("{:.4}", e.ci_high),
                &format_p4(e.p_value),
                if e.significant { "Yes" } else { "No" },
            ])?;
        }
    }
    finish(w)
}

/// Reads rows in the `bootstrap_table_csv` layout as (group, estimate).
pub fn parse_bootstrap_table(text: &str) -> Result<Vec<(String, IndirectEstimate)>> {
    let mut r = reader(text);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() != 8
        || header[..4] != bootstrap_header(0.05)[..4]
        || header[6..] != bootstrap_header(0.05)[6..]
    {
        return Err(Error::invalid(format!(
            "unexpected bootstrap header {header:?}"
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let cell = |i: usize| rec.get(i).unwrap_or("").trim();
        let significant = match cell(7).to_ascii_lowercase().as_str() {
            "yes" | "true" => true,
            "no" | "false" => false,
            s => return Err(Error::invalid(format!("bad Significant value {s:?}"))),
        };
        let effect: IndirectEffect = cell(1).parse()?;
        let point = parse_num(cell(2), "estimate")?;
        let (ci_low, ci_high) = (
            parse_num(cell(4), "CI bound")?,
            parse_num(cell(5), "CI bound")?,
        );
        out.push((
            cell(0).to_string(),
            IndirectEstimate {
                effect,
                point,
                bootstrap_se: parse_num(cell(3), "bootstrap SE")?,
                ci_low,
                ci_high,
                p_value: parse_p(cell(6))?,
                significant,
                bc_extreme: point < ci_low || point > ci_high,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{
        bootstrap_indirect, fit_paths, simulate_path_data, BootstrapOptions, GeneratorParams,
    };

    #[test]
    fn path_table_round_trips_to_three_decimals() {
        let d = simulate_path_data(&GeneratorParams::human_reference(), 477, 3).unwrap();
        let m = fit_paths(&d, SeMode::Ml).unwrap();
        let text = path_table_csv(&m).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "LHS,Op,RHS,Estimate,Std. Error,p-value");
        assert!(lines[2].starts_with("Tip change,~,Service outcome × Adjustability,"));
        assert!(lines[9].starts_with("Tip change,~~,Tip change,"));
        assert!(lines[10].starts_with("Differential satisfaction,~~"));
        assert_eq!(lines.len(), 12);
        let back = parse_path_table("simulated", 477, &text).unwrap();
        for (a, b) in back.paths.iter().zip(&m.paths) {
            assert!((a.estimate - b.estimate).abs() <= 5e-4);
            assert_eq!(a.p_value < 0.05, b.p_value < 0.05);
        }
    }

    #[test]
    fn bootstrap_table_layout() {
        let d = simulate_path_data(&GeneratorParams::human_reference(), 480, 3).unwrap();
        let r = bootstrap_indirect(
            &d,
            &BootstrapOptions {
                resamples: 1000,
                ..Default::default()
            },
        )
        .unwrap();
        let text = bootstrap_table_csv(std::slice::from_ref(&r)).unwrap();
        assert!(text.starts_with(
            "Group,Effect,Estimate,Bootstrap SE,CI 2.5%,CI 97.5%,p-value,Significant\n"
        ));
        let rows = parse_bootstrap_table(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].1.effect, IndirectEffect::IndirectDiff);
        assert_eq!(rows[1].1.significant, r.estimates[1].significant);
    }

    #[test]
    fn p_value_cells() {
        assert_eq!(parse_p("<0.001").unwrap(), 0.0005);
        assert_eq!(parse_p("0.526").unwrap(), 0.526);
        assert!(parse_p("1.5").is_err());
        assert_eq!(bootstrap_header(0.1)[4], "CI 5%");
    }
}
