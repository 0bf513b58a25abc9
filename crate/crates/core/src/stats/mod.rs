//! Surface-level test battery: descriptives, Levene, Welch ANOVA, Games-Howell, TOST.

mod special;
mod srange;
pub mod tables;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use special::{
    f_cdf, f_sf, gauss_legendre, inc_beta, ln_gamma, normal_cdf, normal_pdf, normal_quantile,
    normal_sf, t_cdf, t_sf,
};
pub use srange::{normal_range_cdf, studentized_range_cdf, studentized_range_sf};

/// The three dyadic outcome variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    TipChange,
    Joint,
    Diff,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::TipChange, Variable::Joint, Variable::Diff];

    /// Label as printed in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Variable::TipChange => "Tip change",
            Variable::Joint => "Joint satisfaction",
            Variable::Diff => "Differential satisfaction",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Variable::TipChange => "tip",
            Variable::Joint => "joint",
            Variable::Diff => "diff",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "tip_change" | "tip" => Ok(Variable::TipChange),
            "joint" | "joint_satisfaction" => Ok(Variable::Joint),
            "diff" | "differential" | "differential_satisfaction" => Ok(Variable::Diff),
            _ => Err(Error::invalid(format!("unknown variable {s:?}"))),
        }
    }
}

/// (n, mean, sample SD) for one group and variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_id: String,
    pub variable: Variable,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl GroupSummary {
    pub fn new(
        group_id: impl Into<String>,
        variable: Variable,
        n: usize,
        mean: f64,
        sd: f64,
    ) -> Result<Self> {
        let s = Self {
            group_id: group_id.into(),
            variable,
            n,
            mean,
            sd,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!(
                "group {} has n = {} < 2",
                self.group_id, self.n
            )));
        }
        if !self.sd.is_finite() || self.sd < 0.0 || !self.mean.is_finite() {
            return Err(Error::invalid(format!(
                "group {} has non-finite moments",
                self.group_id
            )));
        }
        Ok(())
    }

    pub fn from_values(
        group_id: impl Into<String>,
        variable: Variable,
        values: &[f64],
    ) -> Result<Self> {
        let (n, mean, sd) = describe(values)?;
        Self::new(group_id, variable, n, mean, sd)
    }

    fn var_over_n(&self) -> f64 {
        self.sd * self.sd / self.n as f64
    }
}

/// Sample size, mean, and sample SD (n - 1 denominator).
pub fn describe(values: &[f64]) -> Result<(usize, f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!("describe needs n >= 2, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    Ok((n, mean, (ss / (n - 1) as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeveneCenter {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeveneResult {
    pub w_stat: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
    pub center: LeveneCenter,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Levene's test: one-way ANOVA on absolute deviations from each group's center.
pub fn levene(groups: &[Vec<f64>], center: LeveneCenter) -> Result<LeveneResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::invalid("levene needs at least 2 groups"));
    }
    if let Some((i, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < 2) {
        return Err(Error::invalid(format!(
            "levene group {i} has n = {} < 2",
            g.len()
        )));
    }
    let deviations: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let c = match center {
                LeveneCenter::Mean => g.iter().sum::<f64>() / g.len() as f64,
                LeveneCenter::Median => median(g),
            };
            g.iter().map(|x| (x - c).abs()).collect()
        })
        .collect();
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let grand = deviations.iter().flatten().sum::<f64>() / n_total as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for z in &deviations {
        let m = z.iter().sum::<f64>() / z.len() as f64;
        between += z.len() as f64 * (m - grand).powi(2);
        within += z.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let df1 = k - 1;
    let df2 = n_total - k;
    let scale = 1e-14 * (1.0 + grand * grand) * n_total as f64;
    let (w_stat, p_value) = if within <= scale {
        if between <= scale {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let w = (df2 as f64 / df1 as f64) * between / within;
        (w, f_sf(w, df1 as f64, df2 as f64)?)
    };
    Ok(LeveneResult {
        w_stat,
        df1,
        df2,
        p_value,
        center,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub f_stat: f64,
    pub df1: usize,
    pub df2: f64,
    pub p_value: f64,
    pub partial_eta_sq: f64,
}

fn check_same_variable(summaries: &[GroupSummary]) -> Result<()> {
    for s in summaries {
        s.validate()?;
    }
    if let Some(first) = summaries.first() {
        if summaries.iter().any(|s| s.variable != first.variable) {
            return Err(Error::invalid("summaries mix different variables"));
        }
    }
    Ok(())
}

fn check_variance(summaries: &[GroupSummary]) -> Result<()> {
    if let Some(s) = summaries.iter().find(|s| s.sd == 0.0) {
        return Err(Error::Degenerate(format!(
            "group {} has zero variance",
            s.group_id
        )));
    }
    Ok(())
}

/// Welch's heteroscedastic one-way ANOVA from group summaries.
///
/// Partial eta squared uses the classic SSb / (SSb + SSw) decomposition.
pub fn welch_anova(summaries: &[GroupSummary]) -> Result<WelchResult> {
    let k = summaries.len();
    if k < 2 {
        return Err(Error::invalid("welch_anova needs at least 2 groups"));
    }
    check_same_variable(summaries)?;
    check_variance(summaries)?;
    let kf = k as f64;
    let w: Vec<f64> = summaries.iter().map(|s| 1.0 / s.var_over_n()).collect();
    let w_sum: f64 = w.iter().sum();
    let weighted_mean = summaries
        .iter()
        .zip(&w)
        .map(|(s, w)| w * s.mean)
        .sum::<f64>()
        / w_sum;
    let a = summaries
        .iter()
        .zip(&w)
        .map(|(s, w)| w * (s.mean - weighted_mean).powi(2))
        .sum::<f64>()
        / (kf - 1.0);
    let lambda: f64 = summaries
        .iter()
        .zip(&w)
        .map(|(s, w)| (1.0 - w / w_sum).powi(2) / (s.n as f64 - 1.0))
        .sum();
    let f_stat = a / (1.0 + 2.0 * (kf - 2.0) / (kf * kf - 1.0) * lambda);
    let df2 = (kf * kf - 1.0) / (3.0 * lambda);
    let p_value = f_sf(f_stat, kf - 1.0, df2)?;

    let n_total: usize = summaries.iter().map(|s| s.n).sum();
    let grand = summaries.iter().map(|s| s.n as f64 * s.mean).sum::<f64>() / n_total as f64;
    let ss_between: f64 = summaries
        .iter()
        .map(|s| s.n as f64 * (s.mean - grand).powi(2))
        .sum();
    let ss_within: f64 = summaries
        .iter()
        .map(|s| (s.n as f64 - 1.0) * s.sd * s.sd)
        .sum();
    Ok(WelchResult {
        f_stat,
        df1: k - 1,
        df2,
        p_value,
        partial_eta_sq: ss_between / (ss_between + ss_within),
    })
}

/// Welch two-sample t: (t, df, two-sided p) with t = (mean_a - mean_b) / se.
pub fn welch_t(a: &GroupSummary, b: &GroupSummary) -> Result<(f64, f64, f64)> {
    check_variance(&[a.clone(), b.clone()])?;
    let (se2, df) = welch_se2_df(a, b);
    let t = (a.mean - b.mean) / se2.sqrt();
    let p = 2.0 * t_sf(t.abs(), df)?;
    Ok((t, df, p.min(1.0)))
}

fn welch_se2_df(a: &GroupSummary, b: &GroupSummary) -> (f64, f64) {
    let va = a.var_over_n();
    let vb = b.var_over_n();
    let se2 = va + vb;
    let df = se2 * se2 / (va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0));
    (se2, df)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub group_a: String,
    pub group_b: String,
    pub mean_diff: f64,
    pub se: f64,
    pub q_stat: f64,
    pub df: f64,
    pub p_value: f64,
}

/// One Games-Howell comparison among `k` groups.
pub fn games_howell_pair(a: &GroupSummary, b: &GroupSummary, k: usize) -> Result<PairwiseResult> {
    check_same_variable(&[a.clone(), b.clone()])?;
    check_variance(&[a.clone(), b.clone()])?;
    let (se2, df) = welch_se2_df(a, b);
    let mean_diff = a.mean - b.mean;
    let q_stat = mean_diff.abs() / (se2 / 2.0).sqrt();
    Ok(PairwiseResult {
        group_a: a.group_id.clone(),
        group_b: b.group_id.clone(),
        mean_diff,
        se: se2.sqrt(),
        q_stat,
        df,
        p_value: studentized_range_sf(q_stat, k, df)?,
    })
}

/// All k(k-1)/2 Games-Howell comparisons. Groups are ordered by `group_id`
/// and each pair reports `mean_a - mean_b` with `a` sorting first.
pub fn games_howell(summaries: &[GroupSummary]) -> Result<Vec<PairwiseResult>> {
    let k = summaries.len();
    if k < 2 {
        return Err(Error::invalid("games_howell needs at least 2 groups"));
    }
    check_same_variable(summaries)?;
    check_variance(summaries)?;
    let mut sorted: Vec<&GroupSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.group_id.cmp(&b.group_id));
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            out.push(games_howell_pair(sorted[i], sorted[j], k)?);
        }
    }
    Ok(out)
}

/// Standard error convention for the TOST t statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TostSe {
    #[default]
    Welch,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TostResult {
    pub group_id: String,
    pub reference_id: String,
    pub variable: Variable,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub mean_diff: f64,
    pub t_lower: f64,
    pub t_upper: f64,
    pub df: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub is_equivalent: bool,
    pub se_mode: TostSe,
}

/// Two one-sided tests of `ai` against `human` with margin ±(factor × pooled SD).
pub fn tost_equivalence(
    ai: &GroupSummary,
    human: &GroupSummary,
    margin_factor: f64,
    alpha: f64,
    se_mode: TostSe,
) -> Result<TostResult> {
    check_same_variable(&[ai.clone(), human.clone()])?;
    if !(margin_factor > 0.0) {
        return Err(Error::invalid(format!(
            "margin factor must be > 0, got {margin_factor}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let (n1, n2) = (ai.n as f64, human.n as f64);
    let pooled_var =
        ((n1 - 1.0) * ai.sd * ai.sd + (n2 - 1.0) * human.sd * human.sd) / (n1 + n2 - 2.0);
    if pooled_var <= 0.0 {
        return Err(Error::Degenerate(
            "zero pooled SD: equivalence margin is empty".into(),
        ));
    }
    let margin = margin_factor * pooled_var.sqrt();
    let (se, df) = match se_mode {
        TostSe::Welch => {
            let (se2, df) = welch_se2_df(ai, human);
            (se2.sqrt(), df)
        }
        TostSe::Pooled => ((pooled_var * (1.0 / n1 + 1.0 / n2)).sqrt(), n1 + n2 - 2.0),
    };
    let mean_diff = ai.mean - human.mean;
    let t_lower = (mean_diff + margin) / se;
    let t_upper = (mean_diff - margin) / se;
    let p_lower = t_sf(t_lower, df)?;
    let p_upper = t_cdf(t_upper, df)?;
    let p_value = p_lower.max(p_upper).clamp(0.0, 1.0);
    Ok(TostResult {
        group_id: ai.group_id.clone(),
        reference_id: human.group_id.clone(),
        variable: ai.variable,
        lower_bound: -margin,
        upper_bound: margin,
        mean_diff,
        t_lower,
        t_upper,
        df,
        p_value,
        alpha,
        is_equivalent: p_value < alpha,
        se_mode,
    })
}
