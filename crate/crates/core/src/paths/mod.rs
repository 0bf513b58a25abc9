//! Per-group recursive path model with moderated indirect effects.
//!
//! Three equations are fitted by least squares, each with an intercept:
//!
//! ```text
//! TC    ~ SO + SO x Adj
//! Joint ~ TC + TC x Vis + SO
//! Diff  ~ TC + TC x Vis + SO
//! ```
//!
//! The indirect effects are products of the two interaction coefficients.

mod bootstrap;
mod ols;
mod simulate;
pub mod tables;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnalysisDataset, DatasetRow};
use crate::design::{ExperimentCondition, ServiceOutcome, TipVisibility};
use crate::error::{Error, Result};
use crate::stats::Variable;

pub use bootstrap::{
    bootstrap_indirect, BootstrapOptions, BootstrapResult, IndirectEstimate, MAX_FAILURE_FRACTION,
    MIN_RESAMPLES, P_VALUE_RULE,
};
pub use ols::{fit_ols, z_test_p, OlsFit, SeMode};
pub use simulate::{simulate_path_data, GeneratorParams};

/// Smallest group the path model is fitted to.
pub const MIN_GROUP_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceOutcomeCodes {
    pub fails: f64,
    pub below: f64,
    pub meets: f64,
    pub exceeds: f64,
}

impl ServiceOutcomeCodes {
    pub fn code(&self, o: ServiceOutcome) -> f64 {
        match o {
            ServiceOutcome::Fails => self.fails,
            ServiceOutcome::Below => self.below,
            ServiceOutcome::Meets => self.meets,
            ServiceOutcome::Exceeds => self.exceeds,
        }
    }
}

/// Codes for a two-level factor. Both must be 0 or 1 and differ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryCodes {
    #[serde(rename = "false")]
    pub when_false: f64,
    #[serde(rename = "true")]
    pub when_true: f64,
}

impl BinaryCodes {
    pub const STANDARD: BinaryCodes = BinaryCodes {
        when_false: 0.0,
        when_true: 1.0,
    };
    pub const SWAPPED: BinaryCodes = BinaryCodes {
        when_false: 1.0,
        when_true: 0.0,
    };

    pub fn code(&self, level: bool) -> f64 {
        if level {
            self.when_true
        } else {
            self.when_false
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = |v: f64| v == 0.0 || v == 1.0;
        if ok(self.when_false) && ok(self.when_true) && self.when_false != self.when_true {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what} codes must be 0 and 1 in some order"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterFlags {
    pub service_outcome: bool,
    pub adjustability: bool,
    pub visibility: bool,
}

/// Numeric coding of the design factors. Visibility `true` means `before`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorCoding {
    pub service_outcome: ServiceOutcomeCodes,
    pub adjustability: BinaryCodes,
    pub visibility: BinaryCodes,
    pub center: CenterFlags,
}

impl Default for PredictorCoding {
    fn default() -> Self {
        Self {
            service_outcome: ServiceOutcomeCodes {
                fails: 1.0,
                below: 2.0,
                meets: 3.0,
                exceeds: 4.0,
            },
            adjustability: BinaryCodes::STANDARD,
            visibility: BinaryCodes::STANDARD,
            center: CenterFlags {
                service_outcome: true,
                adjustability: false,
                visibility: false,
            },
        }
    }
}

impl PredictorCoding {
    pub fn validate(&self) -> Result<()> {
        let c = &self.service_outcome;
        let codes = [c.fails, c.below, c.meets, c.exceeds];
        if codes.iter().any(|v| !v.is_finite()) || codes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "service outcome codes must be finite and strictly increasing from fails to exceeds",
            ));
        }
        self.adjustability.validate("adjustability")?;
        self.visibility.validate("visibility")
    }

    /// Uncentered (SO, Adj, Vis) codes for a condition.
    pub fn raw_codes(&self, c: &ExperimentCondition) -> [f64; 3] {
        [
            self.service_outcome.code(c.service_outcome),
            self.adjustability.code(c.tip_adjustable),
            self.visibility
                .code(c.tip_visibility == TipVisibility::Before),
        ]
    }
}

/// Sample means of the raw factor codes, used for centering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorMeans {
    pub service_outcome: f64,
    pub adjustability: f64,
    pub visibility: f64,
}

impl PredictorMeans {
    pub fn from_conditions<'a>(
        coding: &PredictorCoding,
        conditions: impl IntoIterator<Item = &'a ExperimentCondition>,
    ) -> Result<Self> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for c in conditions {
            for (s, v) in sum.iter_mut().zip(coding.raw_codes(c)) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("no conditions to average"));
        }
        let n = n as f64;
        Ok(Self {
            service_outcome: sum[0] / n,
            adjustability: sum[1] / n,
            visibility: sum[2] / n,
        })
    }
}

/// Predictor values for one dyad. Interactions are formed after centering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictors {
    pub so: f64,
    pub adj: f64,
    pub vis: f64,
    pub so_x_adj: f64,
    pub tc: f64,
    pub tc_x_vis: f64,
}

pub fn encode_predictors(
    condition: &ExperimentCondition,
    tip_change_c: f64,
    coding: &PredictorCoding,
    means: &PredictorMeans,
) -> Predictors {
    let [so, adj, vis] = coding.raw_codes(condition);
    let centered = |v: f64, on: bool, m: f64| if on { v - m } else { v };
    let so = centered(so, coding.center.service_outcome, means.service_outcome);
    let adj = centered(adj, coding.center.adjustability, means.adjustability);
    let vis = centered(vis, coding.center.visibility, means.visibility);
    Predictors {
        so,
        adj,
        vis,
        so_x_adj: so * adj,
        tc: tip_change_c,
        tc_x_vis: tip_change_c * vis,
    }
}

/// Column form of one group's model inputs, in canonical dyad-id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathData {
    pub group_id: String,
    pub dyad_ids: Vec<String>,
    pub so: Vec<f64>,
    pub so_x_adj: Vec<f64>,
    pub tc: Vec<f64>,
    pub tc_x_vis: Vec<f64>,
    pub joint: Vec<f64>,
    pub diff: Vec<f64>,
}

impl PathData {
    /// Encodes rows of one group. Factor means are taken over these rows.
    pub fn from_rows<'a>(
        group_id: &str,
        rows: impl IntoIterator<Item = &'a DatasetRow>,
        coding: &PredictorCoding,
    ) -> Result<Self> {
        coding.validate()?;
        let mut rows: Vec<&DatasetRow> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(Error::invalid(format!("group {group_id} has no rows")));
        }
        rows.sort_by(|a, b| a.dyad_id.cmp(&b.dyad_id));
        if let Some(w) = rows.windows(2).find(|w| w[0].dyad_id == w[1].dyad_id) {
            return Err(Error::invalid(format!(
                "group {group_id}: duplicate dyad id {}",
                w[0].dyad_id
            )));
        }
        let means = PredictorMeans::from_conditions(coding, rows.iter().map(|r| &r.condition))?;
        let mut d = PathData {
            group_id: group_id.to_string(),
            ..Default::default()
        };
        for r in rows {
            let p = encode_predictors(&r.condition, r.outcome.tip_change_c, coding, &means);
            d.dyad_ids.push(r.dyad_id.clone());
            d.so.push(p.so);
            d.so_x_adj.push(p.so_x_adj);
            d.tc.push(p.tc);
            d.tc_x_vis.push(p.tc_x_vis);
            d.joint.push(r.outcome.centered(Variable::Joint));
            d.diff.push(r.outcome.centered(Variable::Diff));
        }
        Ok(d)
    }

    pub fn from_dataset(
        ds: &AnalysisDataset,
        group_id: &str,
        coding: &PredictorCoding,
    ) -> Result<Self> {
        Self::from_rows(group_id, ds.group_rows(group_id), coding)
    }

    pub fn len(&self) -> usize {
        self.so.len()
    }

    pub fn is_empty(&self) -> bool {
        self.so.is_empty()
    }

    /// Reorders rows by dyad id.
    pub fn sort_canonical(&mut self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.dyad_ids[a].cmp(&self.dyad_ids[b]));
        *self = self.gather(&idx);
    }

    /// Rows at `idx`, in that order.
    pub fn gather(&self, idx: &[usize]) -> PathData {
        PathData {
            dyad_ids: idx.iter().map(|&i| self.dyad_ids[i].clone()).collect(),
            ..self.gather_values(idx)
        }
    }

    /// Like `gather` but without dyad ids.
    pub(crate) fn gather_values(&self, idx: &[usize]) -> PathData {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect();
        PathData {
            group_id: String::new(),
            dyad_ids: Vec::new(),
            so: pick(&self.so),
            so_x_adj: pick(&self.so_x_adj),
            tc: pick(&self.tc),
            tc_x_vis: pick(&self.tc_x_vis),
            joint: pick(&self.joint),
            diff: pick(&self.diff),
        }
    }
}

/// The eight regression paths in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    TcSo,
    TcSoAdj,
    JointTc,
    JointTcVis,
    JointSo,
    DiffTc,
    DiffTcVis,
    DiffSo,
}

impl Path {
    pub const ALL: [Path; 8] = [
        Path::TcSo,
        Path::TcSoAdj,
        Path::JointTc,
        Path::JointTcVis,
        Path::JointSo,
        Path::DiffTc,
        Path::DiffTcVis,
        Path::DiffSo,
    ];

    pub fn lhs(self) -> Variable {
        match self {
            Path::TcSo | Path::TcSoAdj => Variable::TipChange,
            Path::JointTc | Path::JointTcVis | Path::JointSo => Variable::Joint,
            Path::DiffTc | Path::DiffTcVis | Path::DiffSo => Variable::Diff,
        }
    }

    pub fn rhs_label(self) -> &'static str {
        match self {
            Path::TcSo | Path::JointSo | Path::DiffSo => "Service outcome",
            Path::TcSoAdj => "Service outcome × Adjustability",
            Path::JointTc | Path::DiffTc => "Tip change",
            Path::JointTcVis | Path::DiffTcVis => "Tip change × Visibility",
        }
    }

    /// Short form such as `Joint~TC×Vis`.
    pub fn short(self) -> &'static str {
        match self {
            Path::TcSo => "TC~SO",
            Path::TcSoAdj => "TC~SO×Adj",
            Path::JointTc => "Joint~TC",
            Path::JointTcVis => "Joint~TC×Vis",
            Path::JointSo => "Joint~SO",
            Path::DiffTc => "Diff~TC",
            Path::DiffTcVis => "Diff~TC×Vis",
            Path::DiffSo => "Diff~SO",
        }
    }

    pub fn from_labels(lhs: &str, rhs: &str) -> Result<Path> {
        let lhs: Variable = lhs.parse()?;
        let norm = |s: &str| {
            s.to_ascii_lowercase()
                .replace("$\\times$", "×")
                .replace(" x ", " × ")
        };
        let rhs = norm(rhs.trim());
        Path::ALL
            .into_iter()
            .find(|p| p.lhs() == lhs && norm(p.rhs_label()) == rhs)
            .ok_or_else(|| Error::invalid(format!("no path {} ~ {rhs}", lhs.label())))
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Path {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().replace(['x', 'X', '*'], "×").replace(' ', "");
        Path::ALL
            .into_iter()
            .find(|p| p.short().eq_ignore_ascii_case(&t))
            .ok_or_else(|| Error::invalid(format!("unknown path {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub path: Path,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub variable: Variable,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPathModel {
    pub group_id: String,
    pub n: usize,
    /// The eight paths in canonical order.
    pub paths: Vec<PathEstimate>,
    /// Residual variances of TC, Joint and Diff, in that order.
    pub variances: Vec<VarianceEstimate>,
    /// Intercepts of the TC, Joint and Diff equations.
    pub intercepts: [f64; 3],
    pub se_mode: SeMode,
}

impl GroupPathModel {
    pub fn path(&self, p: Path) -> &PathEstimate {
        self.paths
            .iter()
            .find(|e| e.path == p)
            .expect("model holds every path")
    }

    pub fn coefficient(&self, p: Path) -> f64 {
        self.path(p).estimate
    }

    pub fn variance(&self, v: Variable) -> &VarianceEstimate {
        self.variances
            .iter()
            .find(|e| e.variable == v)
            .expect("model holds every residual variance")
    }

    pub fn validate(&self) -> Result<()> {
        let order: Vec<Path> = self.paths.iter().map(|p| p.path).collect();
        if order != Path::ALL {
            return Err(Error::invalid(format!(
                "group {}: paths out of canonical order",
                self.group_id
            )));
        }
        let vars: Vec<Variable> = self.variances.iter().map(|v| v.variable).collect();
        if vars != Variable::ALL {
            return Err(Error::invalid(format!(
                "group {}: expected three residual variances",
                self.group_id
            )));
        }
        if self.variances.iter().any(|v| !(v.estimate > 0.0)) {
            return Err(Error::Degenerate(format!(
                "group {}: residual variance is not positive",
                self.group_id
            )));
        }
        Ok(())
    }
}

const INTERCEPT: &str = "(Intercept)";

/// Coefficients of the three equations without standard errors.
pub(crate) struct PathCoefficients {
    pub a_interaction: f64,
    pub joint_interaction: f64,
    pub diff_interaction: f64,
}

pub(crate) fn fit_interactions(d: &PathData) -> Result<PathCoefficients> {
    let ones = vec![1.0; d.len()];
    let a = ols::qr_solve(
        &d.tc,
        &[(INTERCEPT, &ones), ("SO", &d.so), ("SO×Adj", &d.so_x_adj)],
    )?;
    let rhs = [
        (INTERCEPT, ones.as_slice()),
        ("TC", &d.tc),
        ("TC×Vis", &d.tc_x_vis),
        ("SO", &d.so),
    ];
    let j = ols::qr_solve(&d.joint, &rhs)?;
    let f = ols::qr_solve(&d.diff, &rhs)?;
    Ok(PathCoefficients {
        a_interaction: a.beta[2],
        joint_interaction: j.beta[2],
        diff_interaction: f.beta[2],
    })
}

/// Fits the three equations of one group.
pub fn fit_paths(d: &PathData, se_mode: SeMode) -> Result<GroupPathModel> {
    let n = d.len();
    if n < MIN_GROUP_SIZE {
        return Err(Error::invalid(format!(
            "group {} has {n} dyads; the path model needs at least {MIN_GROUP_SIZE}",
            d.group_id
        )));
    }
    let ones = vec![1.0; n];
    let tc = fit_ols(
        &d.tc,
        &[(INTERCEPT, &ones), ("SO", &d.so), ("SO×Adj", &d.so_x_adj)],
        se_mode,
    )?;
    let rhs = [
        (INTERCEPT, ones.as_slice()),
        ("TC", &d.tc),
        ("TC×Vis", &d.tc_x_vis),
        ("SO", &d.so),
    ];
    let joint = fit_ols(&d.joint, &rhs, se_mode)?;
    let diff = fit_ols(&d.diff, &rhs, se_mode)?;

    let est = |path: Path, f: &OlsFit, i: usize| PathEstimate {
        path,
        estimate: f.coefficients[i],
        se: f.std_errors[i],
        p_value: f.p_values[i],
    };
    let paths = vec![
        est(Path::TcSo, &tc, 1),
        est(Path::TcSoAdj, &tc, 2),
        est(Path::JointTc, &joint, 1),
        est(Path::JointTcVis, &joint, 2),
        est(Path::JointSo, &joint, 3),
        est(Path::DiffTc, &diff, 1),
        est(Path::DiffTcVis, &diff, 2),
        est(Path::DiffSo, &diff, 3),
    ];
    let var = |variable: Variable, f: &OlsFit| {
        let estimate = f.residual_variance;
        let se = estimate * (2.0 / n as f64).sqrt();
        VarianceEstimate {
            variable,
            estimate,
            se,
            p_value: z_test_p(estimate, se),
        }
    };
    let model = GroupPathModel {
        group_id: d.group_id.clone(),
        n,
        paths,
        variances: vec![
            var(Variable::TipChange, &tc),
            var(Variable::Joint, &joint),
            var(Variable::Diff, &diff),
        ],
        intercepts: [
            tc.coefficients[0],
            joint.coefficients[0],
            diff.coefficients[0],
        ],
        se_mode,
    };
    model.validate()?;
    Ok(model)
}

/// Encodes and fits one group of an analysis dataset.
pub fn fit_group_paths(
    ds: &AnalysisDataset,
    group_id: &str,
    coding: &PredictorCoding,
    se_mode: SeMode,
) -> Result<GroupPathModel> {
    fit_paths(&PathData::from_dataset(ds, group_id, coding)?, se_mode)
}

/// The two indirect effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndirectEffect {
    IndirectJoint,
    IndirectDiff,
}

impl IndirectEffect {
    pub const ALL: [IndirectEffect; 2] =
        [IndirectEffect::IndirectJoint, IndirectEffect::IndirectDiff];

    /// Label as printed in result tables.
    pub fn label(self) -> &'static str {
        match self {
            IndirectEffect::IndirectJoint => "Indirect_joint",
            IndirectEffect::IndirectDiff => "Indirect_diff",
        }
    }

    /// The b-path the effect runs through.
    pub fn b_path(self) -> Path {
        match self {
            IndirectEffect::IndirectJoint => Path::JointTcVis,
            IndirectEffect::IndirectDiff => Path::DiffTcVis,
        }
    }
}

impl FromStr for IndirectEffect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().replace("\\_", "_");
        IndirectEffect::ALL
            .into_iter()
            .find(|e| e.label().eq_ignore_ascii_case(&t))
            .ok_or_else(|| Error::invalid(format!("unknown indirect effect {s:?}")))
    }
}

/// Point estimates of (indirect_joint, indirect_diff).
pub fn indirect_effects(model: &GroupPathModel) -> (f64, f64) {
    let a = model.coefficient(Path::TcSoAdj);
    (
        a * model.coefficient(Path::JointTcVis),
        a * model.coefficient(Path::DiffTcVis),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CenteringSpec, DyadRecord};
    use crate::design::enumerate_conditions;
    use crate::gateway::{dyad_id, CustomerResult, TipDecision, WorkerResult};
    use crate::money::Cents;

    fn human() -> GeneratorParams {
        GeneratorParams::human_reference()
    }

    #[test]
    fn encode_examples() {
        let coding = PredictorCoding::default();
        let means = PredictorMeans {
            service_outcome: 2.5,
            adjustability: 0.5,
            visibility: 0.5,
        };
        let c = ExperimentCondition::new(ServiceOutcome::Exceeds, true, TipVisibility::Before);
        let p = encode_predictors(&c, 2.0, &coding, &means);
        assert_eq!(
            (p.so, p.adj, p.vis, p.so_x_adj, p.tc_x_vis),
            (1.5, 1.0, 1.0, 1.5, 2.0)
        );
        let c = ExperimentCondition::new(ServiceOutcome::Fails, false, TipVisibility::After);
        let p = encode_predictors(&c, 0.0, &coding, &means);
        assert_eq!((p.so, p.so_x_adj, p.tc, p.tc_x_vis), (-1.5, 0.0, 0.0, 0.0));
    }

    #[test]
    fn balanced_design_means() {
        let coding = PredictorCoding::default();
        let conds = enumerate_conditions();
        let m = PredictorMeans::from_conditions(&coding, &conds).unwrap();
        assert_eq!(
            (m.service_outcome, m.adjustability, m.visibility),
            (2.5, 0.5, 0.5)
        );
    }

    #[test]
    fn coding_validation() {
        let mut c = PredictorCoding::default();
        c.service_outcome.meets = 2.0;
        assert!(c.validate().is_err());
        let c = PredictorCoding {
            adjustability: BinaryCodes {
                when_false: 1.0,
                when_true: 1.0,
            },
            ..PredictorCoding::default()
        };
        assert!(c.validate().is_err());
        let c = PredictorCoding {
            visibility: BinaryCodes::SWAPPED,
            ..PredictorCoding::default()
        };
        assert!(c.validate().is_ok());
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PredictorCoding>(&json).unwrap(), c);
    }

    #[test]
    fn path_labels_round_trip() {
        for p in Path::ALL {
            assert_eq!(p.short().parse::<Path>().unwrap(), p);
            assert_eq!(
                Path::from_labels(p.lhs().label(), p.rhs_label()).unwrap(),
                p
            );
        }
        assert_eq!(
            Path::from_labels("Tip change", "Service outcome $\\times$ Adjustability").unwrap(),
            Path::TcSoAdj
        );
        assert_eq!(
            "Indirect\\_diff".parse::<IndirectEffect>().unwrap(),
            IndirectEffect::IndirectDiff
        );
    }

    #[test]
    fn recovers_generator_coefficients() {
        let g = human();
        let mut within = 0;
        let runs = 50;
        for seed in 0..runs {
            let d = simulate_path_data(&g, 477, seed).unwrap();
            let m = fit_paths(&d, SeMode::Ml).unwrap();
            let ok = Path::ALL
                .iter()
                .all(|&p| (m.coefficient(p) - g.coefficient(p)).abs() <= 3.0 * m.path(p).se);
            within += usize::from(ok);
        }
        assert!(within as f64 / runs as f64 >= 0.9, "{within}/{runs}");
    }

    #[test]
    fn null_interaction_rarely_significant() {
        let mut g = human();
        g.tc_so_adj = 0.0;
        let runs = 200;
        let sig = (0..runs)
            .filter(|&s| {
                let d = simulate_path_data(&g, 477, 1000 + s).unwrap();
                fit_paths(&d, SeMode::Ml)
                    .unwrap()
                    .path(Path::TcSoAdj)
                    .p_value
                    < 0.05
            })
            .count();
        assert!(sig as f64 / runs as f64 <= 0.10, "{sig}/{runs}");
    }

    #[test]
    fn residual_variance_se_convention() {
        let d = simulate_path_data(&human(), 477, 5).unwrap();
        let m = fit_paths(&d, SeMode::Ml).unwrap();
        let v = m.variance(Variable::TipChange);
        assert!((v.se - v.estimate * (2.0f64 / 477.0).sqrt()).abs() < 1e-12);
        assert!((v.estimate - 11.127).abs() < 2.0);
    }

    #[test]
    fn small_group_is_rejected() {
        let d = simulate_path_data(&human(), 48, 1).unwrap();
        assert!(fit_paths(&d, SeMode::Ml).is_err());
        assert!(PathData::from_rows("g", std::iter::empty(), &PredictorCoding::default()).is_err());
    }

    #[test]
    fn indirect_products() {
        let d = simulate_path_data(&human(), 480, 2).unwrap();
        let m = fit_paths(&d, SeMode::Ml).unwrap();
        let (j, f) = indirect_effects(&m);
        assert_eq!(
            j,
            m.coefficient(Path::TcSoAdj) * m.coefficient(Path::JointTcVis)
        );
        assert_eq!(
            f,
            m.coefficient(Path::TcSoAdj) * m.coefficient(Path::DiffTcVis)
        );
        let mut zero = m.clone();
        zero.paths[1].estimate = 0.0;
        assert_eq!(indirect_effects(&zero), (0.0, 0.0));
    }

    /// Dyads with integer ratings and cent tip changes driven by the design.
    fn dataset_from(n: usize, seed: u64) -> AnalysisDataset {
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let conds = enumerate_conditions();
        let records: Vec<DyadRecord> = (0..n)
            .map(|i| {
                let condition = conds[i % 16];
                let so = PredictorCoding::default()
                    .service_outcome
                    .code(condition.service_outcome)
                    - 2.5;
                let before = condition.tip_visibility == TipVisibility::Before;
                let change = if condition.tip_adjustable {
                    (1.3 * so + 2.0 * noise.sample(&mut rng)).clamp(-9.0, 6.0)
                } else {
                    0.0
                };
                let rate = |x: f64| x.round().clamp(1.0, 7.0) as u8;
                let customer = rate(4.0 + 1.0 * so + 0.1 * change + noise.sample(&mut rng));
                let vis_term = if before { -0.25 * change } else { 0.0 };
                let worker =
                    rate(4.0 + 0.6 * so + 0.2 * change + vis_term + noise.sample(&mut rng));
                let adjustable = condition.tip_adjustable;
                let rep = (i / 16) as u32 + 1;
                DyadRecord {
                    run_id: "r".into(),
                    group_id: "g".into(),
                    dyad_id: dyad_id(&condition, rep),
                    condition,
                    replicate: rep,
                    price: Cents::from_dollars(30),
                    initial_tip: Cents::from_dollars(9),
                    customer: CustomerResult {
                        satisfaction: customer,
                        reasoning: String::new(),
                        tip_decision: adjustable.then_some(TipDecision::Adjust),
                        final_tip: Cents(900 + (change * 100.0).round() as i64),
                    },
                    worker: WorkerResult {
                        satisfaction: worker,
                        reasoning: String::new(),
                    },
                    started_at_ms: rng.random_range(0..10),
                    completed_at_ms: 0,
                }
            })
            .collect();
        AnalysisDataset::from_records(&records, &CenteringSpec::default()).unwrap()
    }

    #[test]
    fn fit_is_invariant_to_row_order() {
        let ds = dataset_from(480, 4);
        let coding = PredictorCoding::default();
        let a = fit_group_paths(&ds, "g", &coding, SeMode::Ml).unwrap();
        let mut shuffled = ds.clone();
        shuffled.rows.reverse();
        shuffled.rows.swap(3, 300);
        let b = fit_group_paths(&shuffled, "g", &coding, SeMode::Ml).unwrap();
        assert_eq!(a, b);
    }

    fn pattern(m: &GroupPathModel) -> Vec<bool> {
        m.paths.iter().map(|p| p.p_value < 0.05).collect()
    }

    #[test]
    fn affine_service_outcome_recoding_rescales_paths() {
        let ds = dataset_from(480, 8);
        let base = fit_group_paths(&ds, "g", &PredictorCoding::default(), SeMode::Ml).unwrap();
        let coding = PredictorCoding {
            service_outcome: ServiceOutcomeCodes {
                fails: -3.0,
                below: -1.0,
                meets: 1.0,
                exceeds: 3.0,
            },
            ..PredictorCoding::default()
        };
        let m = fit_group_paths(&ds, "g", &coding, SeMode::Ml).unwrap();
        for (p, q) in m.paths.iter().zip(&base.paths) {
            let scale = if matches!(
                p.path,
                Path::TcSo | Path::TcSoAdj | Path::JointSo | Path::DiffSo
            ) {
                0.5
            } else {
                1.0
            };
            assert!((p.estimate - scale * q.estimate).abs() < 1e-9, "{}", p.path);
            assert!((p.p_value - q.p_value).abs() < 1e-9, "{}", p.path);
        }
        assert_eq!(pattern(&m), pattern(&base));
        assert_eq!(indirect_effects(&m).0, 0.5 * indirect_effects(&base).0);
    }

    /// Swapping a moderator's levels negates its interaction path and turns
    /// the paired lower-order path into the simple slope at the other level.
    #[test]
    fn swapping_moderator_levels_negates_interactions() {
        let ds = dataset_from(480, 8);
        let base = fit_group_paths(&ds, "g", &PredictorCoding::default(), SeMode::Ml).unwrap();
        let cases = [
            (
                Path::TcSoAdj,
                Path::TcSo,
                PredictorCoding {
                    adjustability: BinaryCodes::SWAPPED,
                    ..PredictorCoding::default()
                },
            ),
            (
                Path::JointTcVis,
                Path::JointTc,
                PredictorCoding {
                    visibility: BinaryCodes::SWAPPED,
                    ..PredictorCoding::default()
                },
            ),
        ];
        for (interaction, lower, coding) in cases {
            let m = fit_group_paths(&ds, "g", &coding, SeMode::Ml).unwrap();
            for (p, q) in m.paths.iter().zip(&base.paths) {
                let want = if p.path == lower {
                    q.estimate + base.coefficient(interaction)
                } else if p.path == interaction
                    || (p.path == Path::DiffTcVis && interaction == Path::JointTcVis)
                {
                    -q.estimate
                } else if p.path == Path::DiffTc && lower == Path::JointTc {
                    q.estimate + base.coefficient(Path::DiffTcVis)
                } else {
                    q.estimate
                };
                assert!(
                    (p.estimate - want).abs() < 1e-9,
                    "{}: {} vs {want}",
                    p.path,
                    p.estimate
                );
                let same_p = want == q.estimate || want == -q.estimate;
                if same_p {
                    assert!((p.p_value - q.p_value).abs() < 1e-9, "{}", p.path);
                }
            }
            let (j0, d0) = indirect_effects(&base);
            let (j1, d1) = indirect_effects(&m);
            assert!((j1 + j0).abs() < 1e-12 && (d1 + d0).abs() < 1e-12);
        }
    }
}
