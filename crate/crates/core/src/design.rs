//! The 4x2x2 factorial design, replication sizing, and seeded replication plans.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceOutcome {
    Fails,
    Below,
    Meets,
    Exceeds,
}

impl ServiceOutcome {
    pub const ALL: [ServiceOutcome; 4] = [Self::Fails, Self::Below, Self::Meets, Self::Exceeds];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fails => "fails",
            Self::Below => "below",
            Self::Meets => "meets",
            Self::Exceeds => "exceeds",
        }
    }
}

impl FromStr for ServiceOutcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown service outcome {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TipVisibility {
    /// Worker sees the tip only after completing the delivery.
    After,
    /// Worker sees the tip when deciding whether to accept the delivery.
    Before,
}

impl TipVisibility {
    pub const ALL: [TipVisibility; 2] = [Self::After, Self::Before];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::After => "after",
            Self::Before => "before",
        }
    }
}

impl FromStr for TipVisibility {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown tip visibility {s:?}")))
    }
}

/// One cell of the factorial design.
///
/// The derived `Ord` is the canonical ordering: service outcome major, then
/// adjustability (`false` first), then visibility (`after` first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentCondition {
    pub service_outcome: ServiceOutcome,
    pub tip_adjustable: bool,
    pub tip_visibility: TipVisibility,
}

impl ExperimentCondition {
    pub fn new(
        service_outcome: ServiceOutcome,
        tip_adjustable: bool,
        tip_visibility: TipVisibility,
    ) -> Self {
        Self {
            service_outcome,
            tip_adjustable,
            tip_visibility,
        }
    }

    /// Stable key of the form `outcome/adjustable/visibility`, e.g. `meets/true/before`.
    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ExperimentCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.service_outcome.as_str(),
            self.tip_adjustable,
            self.tip_visibility.as_str()
        )
    }
}

impl FromStr for ExperimentCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let [outcome, adjustable, visibility] = parts.as_slice() else {
            return Err(Error::invalid(format!(
                "condition key {s:?} is not outcome/adjustable/visibility"
            )));
        };
        let tip_adjustable = adjustable.parse::<bool>().map_err(|_| {
            Error::invalid(format!(
                "condition key {s:?}: adjustability must be true or false"
            ))
        })?;
        Ok(Self::new(
            outcome.parse()?,
            tip_adjustable,
            visibility.parse()?,
        ))
    }
}

/// All 16 conditions in canonical order.
pub fn enumerate_conditions() -> Vec<ExperimentCondition> {
    let mut out = Vec::with_capacity(16);
    for outcome in ServiceOutcome::ALL {
        for adjustable in [false, true] {
            for visibility in TipVisibility::ALL {
                out.push(ExperimentCondition::new(outcome, adjustable, visibility));
            }
        }
    }
    out
}

/// Inputs to the fixed-width replication formula `n = ceil((z * s / h)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeInputs {
    pub pilot_sd: f64,
    pub half_width: f64,
    pub z_quantile: f64,
}

impl Default for SampleSizeInputs {
    fn default() -> Self {
        Self {
            pilot_sd: 2.79,
            half_width: 1.0,
            z_quantile: 1.96,
        }
    }
}

/// Replications per cell so the CI half-width is at most `half_width`, floored at 2.
pub fn required_replications(inputs: SampleSizeInputs) -> Result<u32> {
    let SampleSizeInputs {
        pilot_sd,
        half_width,
        z_quantile,
    } = inputs;
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(Error::invalid(format!(
            "half_width must be > 0, got {half_width}"
        )));
    }
    if !(z_quantile > 0.0) || !z_quantile.is_finite() {
        return Err(Error::invalid(format!(
            "z_quantile must be > 0, got {z_quantile}"
        )));
    }
    if !(pilot_sd >= 0.0) || !pilot_sd.is_finite() {
        return Err(Error::invalid(format!(
            "pilot_sd must be >= 0, got {pilot_sd}"
        )));
    }
    let n = (z_quantile * pilot_sd / half_width).powi(2);
    // Absorb representation error so exact squares (e.g. 100.000000000001) do not round up.
    let n = (n - 1e-9).ceil().max(0.0);
    if n > u32::MAX as f64 {
        return Err(Error::invalid("required replications overflow"));
    }
    Ok((n as u32).max(2))
}

/// Hash-based seed derivation: SHA-256 over the master seed and labelled parts,
/// truncated to 64 bits. Pure in its inputs, so plans are order-independent.
pub fn derive_seed(master_seed: u64, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn replicate_seed(master_seed: u64, condition: &ExperimentCondition, replicate: u32) -> u64 {
    derive_seed(
        master_seed,
        &[condition.key().as_bytes(), &replicate.to_le_bytes()],
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub condition: ExperimentCondition,
    pub replicate: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationPlan {
    pub master_seed: u64,
    pub replications_per_cell: u32,
    pub entries: Vec<PlanEntry>,
}

impl ReplicationPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn entries_for(
        &self,
        condition: &ExperimentCondition,
    ) -> impl Iterator<Item = &PlanEntry> + '_ {
        let condition = *condition;
        self.entries
            .iter()
            .filter(move |e| e.condition == condition)
    }
}

pub fn build_plan(replications: u32, master_seed: u64) -> Result<ReplicationPlan> {
    if replications < 1 {
        return Err(Error::invalid("replications must be >= 1"));
    }
    let entries = enumerate_conditions()
        .into_iter()
        .flat_map(|condition| {
            (1..=replications).map(move |replicate| PlanEntry {
                condition,
                replicate,
                seed: replicate_seed(master_seed, &condition, replicate),
            })
        })
        .collect();
    Ok(ReplicationPlan {
        master_seed,
        replications_per_cell: replications,
        entries,
    })
}
