//! Seeded offline agent double. Each condition carries satisfaction
//! distributions on the 1-7 scale, tip-decision probabilities, and a uniform
//! adjust-amount range. Satisfaction pmfs are the maximum-entropy
//! (discretized normal) law on {1..7} matching the configured mean and SD
//! exactly.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{enumerate_conditions, ExperimentCondition, ServiceOutcome, TipVisibility};
use crate::error::{Error, Result};
use crate::money::Cents;
use crate::vignette::{PromptBundle, Role};

use super::{AgentParams, CallFailure, RawResponse, Reply, TipDecision, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionDist {
    pub mean: f64,
    pub sd: f64,
}

impl SatisfactionDist {
    pub fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    /// Probabilities of ratings 1..=7.
    pub fn pmf(&self) -> Result<[f64; 7]> {
        moment_matched_pmf(self.mean, self.sd)
    }

    /// Nearest feasible distribution, used after shifting the mean.
    fn clamped(&self) -> SatisfactionDist {
        let mean = self.mean.clamp(1.05, 6.95);
        let frac = mean - mean.floor();
        let lo = frac * (1.0 - frac) + 1e-3;
        let hi = 0.95 * (mean - 1.0) * (7.0 - mean);
        let var = (self.sd * self.sd).clamp(lo, hi.max(lo));
        SatisfactionDist {
            mean,
            sd: var.sqrt(),
        }
    }
}

/// Exponential-family pmf p_i ∝ exp(a x_i + b x_i²), x_i = i - 4, solved by
/// damped Newton on the convex dual. SD 0 gives a point mass and needs an
/// integral mean.
fn moment_matched_pmf(mean: f64, sd: f64) -> Result<[f64; 7]> {
    if !(1.0..=7.0).contains(&mean) || !(sd >= 0.0) || !sd.is_finite() {
        return Err(Error::invalid(format!(
            "infeasible satisfaction moments mean={mean} sd={sd}"
        )));
    }
    if sd == 0.0 {
        if mean.fract() != 0.0 {
            return Err(Error::invalid(format!(
                "point mass needs an integral mean, got {mean}"
            )));
        }
        let mut p = [0.0; 7];
        p[mean as usize - 1] = 1.0;
        return Ok(p);
    }
    let var = sd * sd;
    let frac = mean - mean.floor();
    let max_var = (mean - 1.0) * (7.0 - mean);
    let min_var = frac * (1.0 - frac);
    if var >= max_var - 1e-9 || var <= min_var + 1e-9 {
        return Err(Error::invalid(format!(
            "sd {sd} infeasible for mean {mean} on a 1-7 scale (variance must lie in ({min_var:.4}, {max_var:.4}))"
        )));
    }
    let t1 = mean - 4.0;
    let t2 = var + t1 * t1;
    let xs: [f64; 7] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
    let eval = |a: f64, b: f64| {
        let logits: Vec<f64> = xs.iter().map(|x| a * x + b * x * x).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| v / z).collect();
        let log_z = mx + z.ln();
        (p, log_z - a * t1 - b * t2)
    };
    let (mut a, mut b) = (0.0, 0.0);
    let (mut p, mut obj) = eval(a, b);
    for _ in 0..500 {
        let m1: f64 = p.iter().zip(&xs).map(|(p, x)| p * x).sum();
        let m2: f64 = p.iter().zip(&xs).map(|(p, x)| p * x * x).sum();
        let m3: f64 = p.iter().zip(&xs).map(|(p, x)| p * x.powi(3)).sum();
        let m4: f64 = p.iter().zip(&xs).map(|(p, x)| p * x.powi(4)).sum();
        let (g1, g2) = (m1 - t1, m2 - t2);
        if g1.abs() < 1e-13 && g2.abs() < 1e-13 {
            break;
        }
        let (h11, h12, h22) = (m2 - m1 * m1, m3 - m1 * m2, m4 - m2 * m2);
        let det = h11 * h22 - h12 * h12;
        let (mut da, mut db) = if det.abs() > 1e-300 {
            (-(h22 * g1 - h12 * g2) / det, -(h11 * g2 - h12 * g1) / det)
        } else {
            (-g1, -g2)
        };
        // Close to the optimum the objective is flat to rounding, so take
        // the pure Newton step.
        if g1.abs().max(g2.abs()) < 1e-6 {
            a += da;
            b += db;
            (p, obj) = eval(a, b);
            continue;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let (np, nobj) = eval(a + da, b + db);
            if nobj <= obj {
                a += da;
                b += db;
                p = np;
                obj = nobj;
                accepted = true;
                break;
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let mut out = [0.0; 7];
    out.copy_from_slice(&p);
    Ok(out)
}

fn pmf_moments(p: &[f64; 7]) -> (f64, f64) {
    let m: f64 = p.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    let m2: f64 = p
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64).powi(2) * p)
        .sum();
    (m, m2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipProbabilities {
    pub keep: f64,
    pub remove: f64,
    pub adjust: f64,
}

impl TipProbabilities {
    pub const KEEP: TipProbabilities = TipProbabilities {
        keep: 1.0,
        remove: 0.0,
        adjust: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionProfile {
    pub customer: SatisfactionDist,
    /// Worker satisfaction when the tip is unchanged.
    pub worker: SatisfactionDist,
    /// Shift in worker mean satisfaction per dollar of tip change.
    #[serde(default)]
    pub worker_tip_slope: f64,
    /// Used only in adjustable conditions.
    pub tip: TipProbabilities,
    #[serde(default)]
    pub adjust_min: Cents,
    #[serde(default)]
    pub adjust_max: Cents,
}

impl ConditionProfile {
    fn worker_dist(&self, tip_change: Cents) -> SatisfactionDist {
        if self.worker_tip_slope == 0.0 || tip_change.0 == 0 {
            return self.worker;
        }
        SatisfactionDist {
            mean: self.worker.mean + self.worker_tip_slope * tip_change.as_dollars(),
            sd: self.worker.sd,
        }
        .clamped()
    }

    fn validate(&self, key: &str) -> Result<()> {
        let p = self.tip;
        if [p.keep, p.remove, p.adjust]
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::invalid(format!(
                "{key}: tip probabilities must lie in [0, 1]"
            )));
        }
        if (p.keep + p.remove + p.adjust - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "{key}: tip probabilities must sum to 1"
            )));
        }
        if self.adjust_min.is_negative() || self.adjust_max < self.adjust_min {
            return Err(Error::invalid(format!(
                "{key}: adjust range must satisfy 0 <= min <= max"
            )));
        }
        if !self.worker_tip_slope.is_finite() {
            return Err(Error::invalid(format!(
                "{key}: worker_tip_slope must be finite"
            )));
        }
        self.customer
            .pmf()
            .map_err(|e| Error::invalid(format!("{key} customer: {e}")))?;
        self.worker
            .pmf()
            .map_err(|e| Error::invalid(format!("{key} worker: {e}")))?;
        Ok(())
    }

    /// Distribution of tip change for an adjustable condition as (delta, probability).
    fn tip_outcomes(&self, initial_tip: Cents) -> Vec<(Cents, f64)> {
        let mut out = vec![
            (Cents::ZERO, self.tip.keep),
            (Cents(-initial_tip.0), self.tip.remove),
        ];
        if self.tip.adjust > 0.0 {
            let span = (self.adjust_max.0 - self.adjust_min.0 + 1) as f64;
            for c in self.adjust_min.0..=self.adjust_max.0 {
                out.push((Cents(c - initial_tip.0), self.tip.adjust / span));
            }
        }
        out.retain(|(_, p)| *p > 0.0);
        out
    }
}

/// Per-condition response distributions for one synthetic group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProfile {
    pub name: String,
    /// Probability that a reply is unparseable, to exercise re-prompting.
    #[serde(default)]
    pub malformed_rate: f64,
    /// Keyed by condition key, e.g. "meets/true/before".
    pub conditions: BTreeMap<String, ConditionProfile>,
}

/// Exact moments of the outcome variables implied by a profile, pooled over
/// conditions with equal weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedOutcomes {
    pub tip_change_mean: f64,
    pub tip_change_sd: f64,
    pub joint_mean: f64,
    pub joint_sd: f64,
    pub diff_mean: f64,
    pub diff_sd: f64,
    pub customer_mean: f64,
    pub worker_mean: f64,
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.malformed_rate) {
            return Err(Error::invalid("malformed_rate must lie in [0, 1)"));
        }
        for (key, c) in &self.conditions {
            key.parse::<ExperimentCondition>()?;
            c.validate(key)?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text).map_err(|e| Error::json_at(path, &e))?;
        p.validate()?;
        Ok(p)
    }

    pub fn get(&self, condition: &ExperimentCondition) -> Result<&ConditionProfile> {
        let key = condition.key();
        self.conditions.get(&key).ok_or(Error::Lookup {
            what: "synthetic profile condition",
            key,
        })
    }

    /// Same profile for every condition.
    pub fn uniform(name: &str, condition: ConditionProfile) -> Self {
        Self {
            name: name.into(),
            malformed_rate: 0.0,
            conditions: enumerate_conditions()
                .iter()
                .map(|c| (c.key(), condition.clone()))
                .collect(),
        }
    }

    /// Point-mass profile: every rating is `satisfaction`, every customer keeps the tip.
    pub fn constant(satisfaction: u8) -> Self {
        let s = SatisfactionDist::new(satisfaction as f64, 0.0);
        Self::uniform(
            "constant",
            ConditionProfile {
                customer: s,
                worker: s,
                worker_tip_slope: 0.0,
                tip: TipProbabilities::KEEP,
                adjust_min: Cents::ZERO,
                adjust_max: Cents::ZERO,
            },
        )
    }

    /// Built-in profile names accepted by [`SyntheticProfile::preset`].
    pub const PRESETS: [&'static str; 3] = ["human-like", "lenient", "tip-sensitive"];

    pub fn preset(name: &str) -> Result<Self> {
        let (cust_shift, worker_slope, tip_scale): (f64, f64, f64) = match name {
            "human-like" => (0.0, 0.12, 1.0),
            "lenient" => (0.5, 0.05, 0.5),
            "tip-sensitive" => (-0.2, 0.3, 1.3),
            _ => {
                return Err(Error::Lookup {
                    what: "synthetic preset",
                    key: name.into(),
                })
            }
        };
        let mut conditions = BTreeMap::new();
        for c in enumerate_conditions() {
            let (cm, csd, wm, wsd, keep, remove, lo, hi): (f64, f64, f64, f64, f64, f64, i64, i64) =
                match c.service_outcome {
                    ServiceOutcome::Fails => (1.8, 1.0, 3.0, 1.4, 0.30, 0.35, 0, 6),
                    ServiceOutcome::Below => (3.1, 1.2, 3.8, 1.3, 0.45, 0.15, 2, 8),
                    ServiceOutcome::Meets => (5.4, 1.0, 5.0, 1.2, 0.85, 0.02, 6, 12),
                    ServiceOutcome::Exceeds => (6.3, 0.8, 5.6, 1.1, 0.55, 0.0, 10, 18),
                };
            let adjust = 1.0 - keep - remove;
            let remove = (remove * tip_scale).min(0.9);
            let adjust = (adjust * tip_scale).min(1.0 - remove);
            let keep = 1.0 - remove - adjust;
            // Disclosure before acceptance makes the worker more sensitive to tip cuts.
            let slope = match c.tip_visibility {
                TipVisibility::Before => worker_slope * 1.5,
                TipVisibility::After => worker_slope,
            };
            conditions.insert(
                c.key(),
                ConditionProfile {
                    customer: SatisfactionDist::new((cm + cust_shift).min(6.6), csd),
                    worker: SatisfactionDist::new(wm, wsd),
                    worker_tip_slope: slope,
                    tip: TipProbabilities {
                        keep,
                        remove,
                        adjust,
                    },
                    adjust_min: Cents::from_dollars(lo),
                    adjust_max: Cents::from_dollars(hi),
                },
            );
        }
        let p = Self {
            name: name.into(),
            malformed_rate: 0.0,
            conditions,
        };
        p.validate()?;
        Ok(p)
    }

    /// Exact outcome moments over the 16 conditions at `initial_tip`.
    pub fn expected_outcomes(&self, initial_tip: Cents) -> Result<ExpectedOutcomes> {
        let conditions = enumerate_conditions();
        // Accumulate E[v] and E[v²] per variable.
        let mut acc = [0.0f64; 8];
        for cond in &conditions {
            let profile = self.get(cond)?;
            let (c1, c2) = pmf_moments(&profile.customer.pmf()?);
            let outcomes = if cond.tip_adjustable {
                profile.tip_outcomes(initial_tip)
            } else {
                vec![(Cents::ZERO, 1.0)]
            };
            let (mut t1, mut t2, mut w1, mut w2) = (0.0, 0.0, 0.0, 0.0);
            let mut cache: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
            for (delta, prob) in outcomes {
                let (m, m2) = match cache.get(&delta.0) {
                    Some(v) => *v,
                    None => {
                        let v = pmf_moments(&profile.worker_dist(delta).pmf()?);
                        cache.insert(delta.0, v);
                        v
                    }
                };
                let d = delta.as_dollars();
                t1 += prob * d;
                t2 += prob * d * d;
                w1 += prob * m;
                w2 += prob * m2;
            }
            // Customer rating is independent of the tip draw and the worker rating.
            let joint1 = 0.5 * (c1 + w1);
            let joint2 = 0.25 * (c2 + 2.0 * c1 * w1 + w2);
            let diff1 = c1 - w1;
            let diff2 = c2 - 2.0 * c1 * w1 + w2;
            for (slot, v) in [t1, t2, joint1, joint2, diff1, diff2, c1, w1]
                .iter()
                .enumerate()
            {
                acc[slot] += v / conditions.len() as f64;
            }
        }
        let sd = |m: f64, m2: f64| (m2 - m * m).max(0.0).sqrt();
        Ok(ExpectedOutcomes {
            tip_change_mean: acc[0],
            tip_change_sd: sd(acc[0], acc[1]),
            joint_mean: acc[2],
            joint_sd: sd(acc[2], acc[3]),
            diff_mean: acc[4],
            diff_sd: sd(acc[4], acc[5]),
            customer_mean: acc[6],
            worker_mean: acc[7],
        })
    }
}

fn sample_rating(rng: &mut ChaCha8Rng, pmf: &[f64; 7]) -> u8 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        cum += p;
        if u < cum {
            return i as u8 + 1;
        }
    }
    pmf.iter()
        .rposition(|p| *p > 0.0)
        .map_or(7, |i| i as u8 + 1)
}

fn reasoning(role: Role, outcome: ServiceOutcome, rating: u8) -> &'static str {
    match (role, outcome, rating >= 5) {
        (Role::Customer, ServiceOutcome::Fails, _) => "The order never arrived in a usable state.",
        (Role::Customer, ServiceOutcome::Below, _) => {
            "The delivery was late and the food was lukewarm."
        }
        (Role::Customer, _, true) => "The delivery was handled well.",
        (Role::Customer, _, false) => "The service was acceptable but unremarkable.",
        (Role::Worker, _, true) => "The job went smoothly and the pay was fair.",
        (Role::Worker, _, false) => "The job was stressful and the earnings were disappointing.",
    }
}

/// Emits a labeled reply sampled from `profile` using only `seed`.
pub fn synthetic_respond(
    profile: &SyntheticProfile,
    bundle: &PromptBundle,
    seed: u64,
) -> Result<RawResponse> {
    let cp = profile.get(&bundle.condition)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let malformed = profile.malformed_rate > 0.0 && rng.random::<f64>() < profile.malformed_rate;
    let text = if malformed {
        "I would rather describe my experience in my own words.".to_string()
    } else {
        match bundle.role {
            Role::Customer => {
                let rating = sample_rating(&mut rng, &cp.customer.pmf()?);
                let mut text = format!(
                    "SATISFACTION: {rating}\nREASONING: {}",
                    reasoning(Role::Customer, bundle.condition.service_outcome, rating)
                );
                if bundle.condition.tip_adjustable {
                    let u: f64 = rng.random();
                    let decision = if u < cp.tip.keep {
                        TipDecision::Keep
                    } else if u < cp.tip.keep + cp.tip.remove {
                        TipDecision::Remove
                    } else {
                        TipDecision::Adjust
                    };
                    text.push_str(&format!("\nTIP DECISION: {}", decision.as_str()));
                    if decision == TipDecision::Adjust {
                        let amount = Cents(rng.random_range(cp.adjust_min.0..=cp.adjust_max.0));
                        text.push_str(&format!("\nNEW TIP AMOUNT: {amount}"));
                    }
                }
                text
            }
            Role::Worker => {
                let change = bundle
                    .tip_context
                    .map(|t| t.final_tip - t.initial_tip)
                    .unwrap_or(Cents::ZERO);
                let rating = sample_rating(&mut rng, &cp.worker_dist(change).pmf()?);
                format!(
                    "SATISFACTION: {rating}\nREASONING: {}",
                    reasoning(Role::Worker, bundle.condition.service_outcome, rating)
                )
            }
        }
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("provider".into(), "synthetic".into());
    metadata.insert("profile".into(), profile.name.clone());
    Ok(RawResponse {
        text,
        attempts: 1,
        latency: Duration::ZERO,
        provider_metadata: metadata,
    })
}

pub struct SyntheticTransport {
    profile: SyntheticProfile,
}

impl SyntheticTransport {
    pub fn new(profile: SyntheticProfile) -> Self {
        Self { profile }
    }
}

impl Transport for SyntheticTransport {
    fn call(
        &self,
        _: &AgentParams,
        bundle: &PromptBundle,
        seed: u64,
    ) -> std::result::Result<Reply, CallFailure> {
        synthetic_respond(&self.profile, bundle, seed)
            .map(|r| Reply {
                text: r.text,
                metadata: r.provider_metadata,
            })
            .map_err(|e| CallFailure::Fatal {
                status: None,
                message: e.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{parse_customer_response, parse_worker_response, CustomerResult};
    use crate::vignette::{
        build_customer_prompt, build_worker_prompt, PromptText, VignetteLibrary,
    };
    use proptest::prelude::*;

    fn cond(adj: bool) -> ExperimentCondition {
        ExperimentCondition::new(ServiceOutcome::Below, adj, TipVisibility::Before)
    }

    fn customer_bundle(c: &ExperimentCondition) -> PromptBundle {
        build_customer_prompt(
            &VignetteLibrary::builtin(),
            &PromptText::default(),
            c,
            Cents::from_dollars(30),
            Cents::from_dollars(9),
        )
        .unwrap()
    }

    #[test]
    fn pmf_matches_moments_exactly() {
        for &(m, s) in &[
            (4.0, 1.5),
            (1.8, 1.0),
            (6.3, 0.8),
            (3.1, 1.2),
            (2.0, 1.9),
            (6.9, 0.31),
        ] {
            let p = moment_matched_pmf(m, s).unwrap();
            let (m1, m2) = pmf_moments(&p);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((m1 - m).abs() < 1e-10, "mean {m1} vs {m}");
            assert!(
                ((m2 - m1 * m1).sqrt() - s).abs() < 1e-9,
                "sd for ({m}, {s})"
            );
        }
    }

    #[test]
    fn pmf_rejects_infeasible() {
        assert!(moment_matched_pmf(1.0, 0.5).is_err());
        assert!(moment_matched_pmf(4.5, 0.0).is_err());
        assert!(moment_matched_pmf(4.5, 0.2).is_err());
        assert!(moment_matched_pmf(8.0, 1.0).is_err());
        assert_eq!(moment_matched_pmf(5.0, 0.0).unwrap()[4], 1.0);
    }

    #[test]
    fn point_mass_profile_always_answers_five() {
        let p = SyntheticProfile::constant(5);
        let b = customer_bundle(&cond(true));
        for seed in 0..50 {
            let r = synthetic_respond(&p, &b, seed).unwrap();
            assert!(r.text.starts_with("SATISFACTION: 5"));
            let parsed = parse_customer_response(&r.text, &b.condition, b.initial_tip).unwrap();
            assert_eq!(parsed.tip_decision, Some(TipDecision::Keep));
        }
    }

    #[test]
    fn same_seed_same_text() {
        let p = SyntheticProfile::preset("human-like").unwrap();
        let b = customer_bundle(&cond(true));
        assert_eq!(
            synthetic_respond(&p, &b, 42).unwrap(),
            synthetic_respond(&p, &b, 42).unwrap()
        );
    }

    #[test]
    fn uncovered_condition_is_lookup_error() {
        let mut p = SyntheticProfile::constant(4);
        p.conditions.clear();
        let b = customer_bundle(&cond(false));
        assert!(matches!(
            synthetic_respond(&p, &b, 1),
            Err(Error::Lookup { .. })
        ));
    }

    #[test]
    fn presets_validate_and_bad_probabilities_rejected() {
        for name in SyntheticProfile::PRESETS {
            SyntheticProfile::preset(name).unwrap();
        }
        assert!(SyntheticProfile::preset("nope").is_err());
        let mut p = SyntheticProfile::constant(4);
        p.conditions.values_mut().next().unwrap().tip.keep = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = SyntheticProfile::preset("lenient").unwrap();
        let text = serde_json::to_string_pretty(&p).unwrap();
        assert_eq!(SyntheticProfile::from_json_str(&text).unwrap(), p);
    }

    #[test]
    fn law_of_large_numbers() {
        // 10^4 draws per role: sample moments within 3 SE of the profile.
        let p = SyntheticProfile::preset("human-like").unwrap();
        let lib = VignetteLibrary::builtin();
        let text = PromptText::default();
        let c = ExperimentCondition::new(ServiceOutcome::Meets, true, TipVisibility::Before);
        let cp = p.get(&c).unwrap();
        let b = customer_bundle(&c);
        let n = 10_000u64;
        let mut cust = Vec::new();
        let mut tips = Vec::new();
        for seed in 0..n {
            let r = synthetic_respond(&p, &b, seed).unwrap();
            let parsed = parse_customer_response(&r.text, &c, b.initial_tip).unwrap();
            cust.push(parsed.satisfaction as f64);
            tips.push((parsed.final_tip - b.initial_tip).as_dollars());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = |sd: f64| sd / (n as f64).sqrt();
        assert!((mean(&cust) - cp.customer.mean).abs() < 3.0 * se(cp.customer.sd));
        let (t1, t2) = cp
            .tip_outcomes(b.initial_tip)
            .iter()
            .fold((0.0, 0.0), |(a, b), (d, p)| {
                (a + p * d.as_dollars(), b + p * d.as_dollars().powi(2))
            });
        assert!((mean(&tips) - t1).abs() < 3.0 * se((t2 - t1 * t1).sqrt()));

        // Workers with an unchanged tip follow the base distribution.
        let keep = CustomerResult {
            satisfaction: 5,
            reasoning: "ok".into(),
            tip_decision: Some(TipDecision::Keep),
            final_tip: b.initial_tip,
        };
        let wb = build_worker_prompt(&lib, &text, &c, &keep, b.initial_tip).unwrap();
        let worker: Vec<f64> = (0..n)
            .map(|s| {
                let r = synthetic_respond(&p, &wb, s).unwrap();
                parse_worker_response(&r.text).unwrap().satisfaction as f64
            })
            .collect();
        assert!((mean(&worker) - cp.worker.mean).abs() < 3.0 * se(cp.worker.sd));
    }

    proptest! {
        #[test]
        fn feasible_moments_round_trip(mean in 1.3f64..6.7, rel in 0.1f64..0.9) {
            let frac = mean - mean.floor();
            let lo = frac * (1.0 - frac);
            let hi = (mean - 1.0) * (7.0 - mean);
            let var = lo + rel * (hi - lo);
            let p = moment_matched_pmf(mean, var.sqrt()).unwrap();
            let (m1, m2) = pmf_moments(&p);
            prop_assert!((m1 - mean).abs() < 1e-8);
            prop_assert!((m2 - m1 * m1 - var).abs() < 1e-7);
        }
    }
}
