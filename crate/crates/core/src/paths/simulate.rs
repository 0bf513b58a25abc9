//! Data generator for the path model, used for power and calibration checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design::{enumerate_conditions, TipVisibility};
use crate::error::{Error, Result};
use crate::gateway::dyad_id;

use super::{Path, PathData, PredictorCoding, PredictorMeans};

/// True coefficients and residual variances of the three equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub tc_so: f64,
    pub tc_so_adj: f64,
    pub joint_tc: f64,
    pub joint_tc_vis: f64,
    pub joint_so: f64,
    pub diff_tc: f64,
    pub diff_tc_vis: f64,
    pub diff_so: f64,
    pub var_tc: f64,
    pub var_joint: f64,
    pub var_diff: f64,
}

impl GeneratorParams {
    /// Estimates reported for the human reference group.
    pub fn human_reference() -> Self {
        Self {
            tc_so: 1.169,
            tc_so_adj: 0.104,
            joint_tc: 0.051,
            joint_tc_vis: 0.017,
            joint_so: 1.557,
            diff_tc: 0.063,
            diff_tc_vis: -0.175,
            diff_so: 0.936,
            var_tc: 11.127,
            var_joint: 0.959,
            var_diff: 3.359,
        }
    }

    pub fn coefficient(&self, p: Path) -> f64 {
        match p {
            Path::TcSo => self.tc_so,
            Path::TcSoAdj => self.tc_so_adj,
            Path::JointTc => self.joint_tc,
            Path::JointTcVis => self.joint_tc_vis,
            Path::JointSo => self.joint_so,
            Path::DiffTc => self.diff_tc,
            Path::DiffTcVis => self.diff_tc_vis,
            Path::DiffSo => self.diff_so,
        }
    }
}

/// Draws `n` dyads spread evenly over the 16 cells (cell `i mod 16`) under
/// the default coding, with normal residuals and zero intercepts.
pub fn simulate_path_data(g: &GeneratorParams, n: usize, seed: u64) -> Result<PathData> {
    let normal = |v: f64, what: &str| {
        Normal::new(0.0, v.sqrt())
            .map_err(|_| Error::invalid(format!("{what} variance {v} is not valid")))
    };
    let e_tc = normal(g.var_tc, "tip change")?;
    let e_joint = normal(g.var_joint, "joint")?;
    let e_diff = normal(g.var_diff, "diff")?;
    let coding = PredictorCoding::default();
    let conds = enumerate_conditions();
    let cells: Vec<_> = (0..n).map(|i| conds[i % 16]).collect();
    let means = PredictorMeans::from_conditions(&coding, &cells)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = PathData {
        group_id: "simulated".into(),
        ..Default::default()
    };
    for (i, c) in cells.iter().enumerate() {
        let [so, adj, _] = coding.raw_codes(c);
        let so = so - means.service_outcome;
        let vis = f64::from(u8::from(c.tip_visibility == TipVisibility::Before));
        let tc = g.tc_so * so + g.tc_so_adj * so * adj + e_tc.sample(&mut rng);
        let joint = g.joint_tc * tc
            + g.joint_tc_vis * tc * vis
            + g.joint_so * so
            + e_joint.sample(&mut rng);
        let diff =
            g.diff_tc * tc + g.diff_tc_vis * tc * vis + g.diff_so * so + e_diff.sample(&mut rng);
        d.dyad_ids.push(dyad_id(c, (i / 16) as u32 + 1));
        d.so.push(so);
        d.so_x_adj.push(so * adj);
        d.tc.push(tc);
        d.tc_x_vis.push(tc * vis);
        d.joint.push(joint);
        d.diff.push(diff);
    }
    d.sort_canonical();
    Ok(d)
}
