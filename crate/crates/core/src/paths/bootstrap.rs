//! Nonparametric bootstrap of the indirect effects with bias-corrected
//! percentile intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::derive_seed;
use crate::error::{Error, Result};
use crate::stats::{normal_cdf, normal_quantile};

use super::{fit_interactions, IndirectEffect, PathData, MIN_GROUP_SIZE};

/// Name of the bootstrap p-value rule, echoed in outputs.
pub const P_VALUE_RULE: &str = "sign-proportion: 2 * min(#{b <= 0}, #{b >= 0}) / B";

/// Smallest accepted number of resamples.
pub const MIN_RESAMPLES: usize = 1000;

/// Largest tolerated fraction of rank-deficient resamples.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
    pub alpha: f64,
    pub parallel: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 5000,
            seed: 0,
            alpha: 0.05,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndirectEstimate {
    pub effect: IndirectEffect,
    pub point: f64,
    pub bootstrap_se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    /// True when zero lies outside the interval.
    pub significant: bool,
    /// True when the point estimate falls outside its own interval, or every
    /// resample lies on one side of it.
    pub bc_extreme: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub group_id: String,
    pub estimates: Vec<IndirectEstimate>,
    pub requested: usize,
    /// Resamples skipped as rank deficient.
    pub skipped: usize,
    pub alpha: f64,
    pub seed: u64,
    pub p_value_rule: String,
}

impl BootstrapResult {
    pub fn estimate(&self, e: IndirectEffect) -> &IndirectEstimate {
        self.estimates
            .iter()
            .find(|x| x.effect == e)
            .expect("both effects are estimated")
    }

    pub fn failure_fraction(&self) -> f64 {
        self.skipped as f64 / self.requested as f64
    }
}

/// Row indices of resample `b`, drawn against the canonical row order.
fn resample_indices(seed: u64, b: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &[b"bootstrap", &(b as u64).to_le_bytes()],
    ));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn one_resample(d: &PathData, seed: u64, b: usize) -> Option<(f64, f64)> {
    let idx = resample_indices(seed, b, d.len());
    fit_interactions(&d.gather_values(&idx)).ok().map(|c| {
        (
            c.a_interaction * c.joint_interaction,
            c.a_interaction * c.diff_interaction,
        )
    })
}

/// Type-7 sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(
    effect: IndirectEffect,
    point: f64,
    draws: &mut [f64],
    alpha: f64,
) -> IndirectEstimate {
    let b = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / b;
    let bootstrap_se = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
    draws.sort_by(f64::total_cmp);

    let below = draws.iter().filter(|&&x| x < point).count() as f64;
    let mut bc_extreme = below == 0.0 || below == b;
    let prop = (below / b).clamp(0.5 / b, 1.0 - 0.5 / b);
    let z0 = normal_quantile(prop);
    let z = normal_quantile(1.0 - alpha / 2.0);
    let ci_low = quantile(draws, normal_cdf(2.0 * z0 - z));
    let ci_high = quantile(draws, normal_cdf(2.0 * z0 + z));
    bc_extreme |= point < ci_low || point > ci_high;

    let le = draws.iter().filter(|&&x| x <= 0.0).count() as f64;
    let ge = draws.iter().filter(|&&x| x >= 0.0).count() as f64;
    let p_value = (2.0 * le.min(ge) / b).min(1.0);
    IndirectEstimate {
        effect,
        point,
        bootstrap_se,
        ci_low,
        ci_high,
        p_value,
        significant: ci_low > 0.0 || ci_high < 0.0,
        bc_extreme,
    }
}

/// Resamples dyads with replacement, refits the three equations and
/// summarizes both indirect effects. Output depends only on the data (in
/// canonical order), the seed and the resample count.
pub fn bootstrap_indirect(d: &PathData, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    if opts.resamples < MIN_RESAMPLES {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {}",
            opts.resamples
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha {} outside (0, 1)",
            opts.alpha
        )));
    }
    if d.len() < MIN_GROUP_SIZE {
        return Err(Error::invalid(format!(
            "group {} has {} dyads; the path model needs at least {MIN_GROUP_SIZE}",
            d.group_id,
            d.len()
        )));
    }
    let full = fit_interactions(d)?;
    let point_joint = full.a_interaction * full.joint_interaction;
    let point_diff = full.a_interaction * full.diff_interaction;

    let draws: Vec<Option<(f64, f64)>> = if opts.parallel {
        (0..opts.resamples)
            .into_par_iter()
            .map(|b| one_resample(d, opts.seed, b))
            .collect()
    } else {
        (0..opts.resamples)
            .map(|b| one_resample(d, opts.seed, b))
            .collect()
    };
    let ok: Vec<(f64, f64)> = draws.iter().flatten().copied().collect();
    let skipped = opts.resamples - ok.len();
    if skipped as f64 > MAX_FAILURE_FRACTION * opts.resamples as f64 {
        return Err(Error::BootstrapFailures {
            failed: skipped,
            total: opts.resamples,
        });
    }
    let mut joint: Vec<f64> = ok.iter().map(|x| x.0).collect();
    let mut diff: Vec<f64> = ok.iter().map(|x| x.1).collect();
    Ok(BootstrapResult {
        group_id: d.group_id.clone(),
        estimates: vec![
            summarize(
                IndirectEffect::IndirectJoint,
                point_joint,
                &mut joint,
                opts.alpha,
            ),
            summarize(
                IndirectEffect::IndirectDiff,
                point_diff,
                &mut diff,
                opts.alpha,
            ),
        ],
        requested: opts.resamples,
        skipped,
        alpha: opts.alpha,
        seed: opts.seed,
        p_value_rule: P_VALUE_RULE.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{simulate_path_data, GeneratorParams};

    fn opts(seed: u64, parallel: bool) -> BootstrapOptions {
        BootstrapOptions {
            resamples: 1000,
            seed,
            alpha: 0.05,
            parallel,
        }
    }

    #[test]
    fn serial_and_parallel_agree() {
        let d = simulate_path_data(&GeneratorParams::human_reference(), 480, 1).unwrap();
        let a = bootstrap_indirect(&d, &opts(7, true)).unwrap();
        let b = bootstrap_indirect(&d, &opts(7, false)).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_indirect(&d, &opts(8, true)).unwrap();
        assert_ne!(a.estimates[0].ci_low, c.estimates[0].ci_low);
    }

    #[test]
    fn invariant_to_input_permutation() {
        let d = simulate_path_data(&GeneratorParams::human_reference(), 480, 2).unwrap();
        let a = bootstrap_indirect(&d, &opts(3, true)).unwrap();
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.reverse();
        let mut rev = d.gather(&idx);
        rev.sort_canonical();
        assert_eq!(bootstrap_indirect(&rev, &opts(3, true)).unwrap(), a);
    }

    #[test]
    fn strong_effect_is_significant() {
        let mut g = GeneratorParams::human_reference();
        g.tc_so_adj = 1.5;
        g.diff_tc_vis = -0.3;
        let d = simulate_path_data(&g, 480, 4).unwrap();
        let r = bootstrap_indirect(&d, &opts(1, true)).unwrap();
        let e = r.estimate(IndirectEffect::IndirectDiff);
        assert!(e.significant && e.ci_high < 0.0 && e.p_value < 0.05);
        assert!(e.ci_low <= e.point && e.point <= e.ci_high && !e.bc_extreme);
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn rejects_small_inputs() {
        let d = simulate_path_data(&GeneratorParams::human_reference(), 480, 4).unwrap();
        let mut o = opts(1, true);
        o.resamples = 999;
        assert!(bootstrap_indirect(&d, &o).is_err());
        let small = simulate_path_data(&GeneratorParams::human_reference(), 40, 4).unwrap();
        assert!(bootstrap_indirect(&small, &opts(1, true)).is_err());
    }

    #[test]
    fn frequent_rank_deficiency_aborts() {
        // Only two dyads carry a nonzero SO x Adj value, so many resamples miss both.
        let mut d = simulate_path_data(&GeneratorParams::human_reference(), 60, 4).unwrap();
        for (i, v) in d.so_x_adj.iter_mut().enumerate() {
            *v = if i < 2 { 1.0 + i as f64 } else { 0.0 };
        }
        match bootstrap_indirect(&d, &opts(1, false)) {
            Err(Error::BootstrapFailures { failed, total }) => {
                assert_eq!(total, 1000);
                assert!(failed > 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quantile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert!((quantile(&s, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn summary_rules() {
        let mut draws: Vec<f64> = (0..1000).map(|i| f64::from(i) / 1000.0 - 0.1).collect();
        let e = summarize(IndirectEffect::IndirectJoint, 0.4, &mut draws, 0.05);
        assert!((e.p_value - 2.0 * 101.0 / 1000.0).abs() < 1e-12);
        assert!(!e.significant);
        let mut all_pos: Vec<f64> = (1..=1000).map(f64::from).collect();
        let e = summarize(IndirectEffect::IndirectJoint, 0.5, &mut all_pos, 0.05);
        assert!(e.bc_extreme && e.significant && e.p_value == 0.0);
    }
}
