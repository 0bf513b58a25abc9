//! Run configuration: a single JSON file. Secrets come from the environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::CenteringScope;
use crate::error::{Error, Result};
use crate::gateway::{AgentParams, SyntheticProfile};
use crate::money::Cents;
use crate::paths::{PredictorCoding, SeMode};
use crate::stats::{LeveneCenter, TostSe};
use crate::validation::Thresholds;

/// Code version stamped into artifacts.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// One agent population. Customer and worker share `agent` unless
/// `worker_agent` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub group_id: String,
    #[serde(default)]
    pub agent: AgentParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_agent: Option<AgentParams>,
    /// Synthetic profile file; when absent a synthetic agent uses the preset
    /// named by its `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_path: Option<PathBuf>,
}

impl GroupConfig {
    pub fn worker(&self) -> &AgentParams {
        self.worker_agent.as_ref().unwrap_or(&self.agent)
    }

    pub fn is_synthetic(&self) -> bool {
        self.agent.provider_id == "synthetic" && self.worker().provider_id == "synthetic"
    }

    /// Profile used by a synthetic agent with these params.
    pub fn synthetic_profile(&self, params: &AgentParams) -> Result<SyntheticProfile> {
        match &self.profile_path {
            Some(p) => SyntheticProfile::load(p),
            None => SyntheticProfile::preset(&params.model_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub margin_factor: f64,
    pub alpha: f64,
    pub tost_se: TostSe,
    pub levene_center: LeveneCenter,
    pub bootstrap_resamples: usize,
    pub se_mode: SeMode,
    pub centering: CenteringScope,
    pub coding: PredictorCoding,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            margin_factor: 0.2,
            alpha: 0.05,
            tost_se: TostSe::Welch,
            levene_center: LeveneCenter::Mean,
            bootstrap_resamples: 5000,
            se_mode: SeMode::Ml,
            centering: CenteringScope::PooledAllGroups,
            coding: PredictorCoding::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub master_seed: u64,
    pub replications: u32,
    pub price: Cents,
    pub initial_tip: Cents,
    /// Group the models are validated against.
    pub reference_group: String,
    pub groups: Vec<GroupConfig>,
    /// Analysis-format CSVs merged into the dataset, e.g. human data.
    pub import_datasets: Vec<PathBuf>,
    /// Vignette library file; the bundled library when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vignettes: Option<PathBuf>,
    pub analysis: AnalysisConfig,
    pub thresholds: Thresholds,
    /// Excluded from the config hash.
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "gabm-run".into(),
            master_seed: 1,
            replications: crate::design::required_replications(
                crate::design::SampleSizeInputs::default(),
            )
            .expect("default sample-size inputs are valid"),
            price: Cents::from_dollars(30),
            initial_tip: Cents::from_dollars(9),
            reference_group: "human".into(),
            groups: Vec::new(),
            import_datasets: Vec::new(),
            vignettes: None,
            analysis: AnalysisConfig::default(),
            thresholds: Thresholds::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::json_at(origin, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config. Relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text, path)?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in &mut self.import_datasets {
            fix(p);
        }
        if let Some(p) = &mut self.vignettes {
            fix(p);
        }
        for g in &mut self.groups {
            if let Some(p) = &mut g.profile_path {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::invalid("replications must be >= 1"));
        }
        if self.price.0 <= 0 || self.initial_tip.is_negative() {
            return Err(Error::invalid(
                "price must be positive and initial_tip non-negative",
            ));
        }
        let a = &self.analysis;
        if !(a.margin_factor > 0.0 && a.margin_factor.is_finite()) {
            return Err(Error::invalid(format!(
                "margin_factor {} must be positive",
                a.margin_factor
            )));
        }
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} outside (0, 1)", a.alpha)));
        }
        if a.bootstrap_resamples < crate::paths::MIN_RESAMPLES {
            return Err(Error::invalid(format!(
                "bootstrap_resamples must be at least {}",
                crate::paths::MIN_RESAMPLES
            )));
        }
        a.coding.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            if g.group_id.trim().is_empty() || g.group_id.contains(['/', '\\', ',']) {
                return Err(Error::invalid(format!(
                    "group id {:?} is empty or contains / \\ or ,",
                    g.group_id
                )));
            }
            if !seen.insert(&g.group_id) {
                return Err(Error::invalid(format!(
                    "group {} is listed twice",
                    g.group_id
                )));
            }
            g.agent.validate()?;
            g.worker().validate()?;
        }
        Ok(())
    }

    pub fn group(&self, group_id: &str) -> Result<&GroupConfig> {
        self.groups
            .iter()
            .find(|g| g.group_id == group_id)
            .ok_or_else(|| Error::Lookup {
                what: "configured group",
                key: group_id.to_string(),
            })
    }

    /// Canonical JSON of everything that affects results.
    pub fn hashed_value(&self) -> Result<Value> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        Ok(v)
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON.
    pub fn config_hash(&self) -> Result<String> {
        let text = serde_json::to_string(&self.hashed_value()?)?;
        Ok(Sha256::digest(text.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }

    pub fn run_id(&self) -> Result<String> {
        Ok(format!("{}-{}", self.name, &self.config_hash()?[..8]))
    }
}

/// Keys whose values differ between two config JSON values, as dotted paths.
pub fn config_diff(old: &Value, new: &Value) -> Vec<String> {
    fn walk(prefix: &str, a: Option<&Value>, b: Option<&Value>, out: &mut Vec<String>) {
        match (a, b) {
            (Some(Value::Object(x)), Some(Value::Object(y))) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let p = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&p, x.get(k), y.get(k), out);
                }
            }
            (a, b) if a != b => out.push(if prefix.is_empty() {
                "<root>".into()
            } else {
                prefix.to_string()
            }),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk("", Some(old), Some(new), &mut out);
    out
}

/// Provenance key-value pairs for artifact headers.
pub fn provenance_map(cfg: &RunConfig) -> Result<BTreeMap<String, String>> {
    Ok(BTreeMap::from([
        ("config_hash".to_string(), cfg.config_hash()?),
        ("master_seed".to_string(), cfg.master_seed.to_string()),
        ("version".to_string(), VERSION.to_string()),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        RunConfig {
            groups: vec![
                GroupConfig {
                    group_id: "human".into(),
                    agent: AgentParams::default(),
                    worker_agent: None,
                    profile_path: None,
                },
                GroupConfig {
                    group_id: "lenient".into(),
                    agent: AgentParams {
                        model_id: "lenient".into(),
                        ..Default::default()
                    },
                    worker_agent: None,
                    profile_path: None,
                },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.analysis.margin_factor, 0.2);
        assert_eq!(c.analysis.alpha, 0.05);
        assert_eq!(c.analysis.bootstrap_resamples, 5000);
        assert_eq!(c.price, Cents::from_dollars(30));
        assert_eq!(c.initial_tip, Cents::from_dollars(9));
        assert_eq!(c.replications, 30);
    }

    #[test]
    fn round_trips_through_json() {
        let c = sample();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back = RunConfig::from_json_str(&text, Path::new("cfg.json")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash().unwrap(), c.config_hash().unwrap());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = sample();
        let mut b = sample();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        b.master_seed = 2;
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let diff = config_diff(&a.hashed_value().unwrap(), &b.hashed_value().unwrap());
        assert_eq!(diff, vec!["master_seed".to_string()]);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = sample();
        c.analysis.alpha = 1.5;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.groups.push(c.groups[0].clone());
        assert!(c.validate().is_err());
        assert!(RunConfig::from_json_str(r#"{"unknown": 1}"#, Path::new("c.json")).is_err());
        let c = RunConfig::from_json_str(r#"{"master_seed": 7}"#, Path::new("c.json")).unwrap();
        assert_eq!(c.master_seed, 7);
    }

    #[test]
    fn nested_diff_paths() {
        let a = serde_json::json!({"analysis": {"alpha": 0.05, "b": 1}, "x": [1]});
        let b = serde_json::json!({"analysis": {"alpha": 0.1, "b": 1}, "x": [2], "y": true});
        assert_eq!(config_diff(&a, &b), vec!["analysis.alpha", "x", "y"]);
    }
}
