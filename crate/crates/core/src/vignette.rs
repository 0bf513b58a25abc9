//! Vignette library loading and role-specific prompt assembly.
//!
//! A library holds one vignette per (condition, role). Scenario texts carry
//! brace-delimited placeholders that are filled at render time; any token left
//! unresolved is an error so raw `{initial_tip}` never reaches an agent.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::design::{enumerate_conditions, ExperimentCondition, TipVisibility};
use crate::error::{Error, Result};
use crate::gateway::{CustomerResult, TipDecision};
use crate::money::Cents;

const DEFAULT_LIBRARY: &str = include_str!("../data/vignettes.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Customer,
    Worker,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Customer => "customer",
            Role::Worker => "worker",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vignette {
    pub condition: ExperimentCondition,
    pub role: Role,
    pub scenario_text: String,
    pub outcome_text: String,
}

impl Vignette {
    pub fn condition_key(&self) -> String {
        self.condition.key()
    }
}

/// Immutable after load; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VignetteLibrary {
    entries: BTreeMap<(ExperimentCondition, Role), Vignette>,
}

impl VignetteLibrary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    /// The bundled 32-entry library.
    pub fn builtin() -> Self {
        Self::from_json_str(DEFAULT_LIBRARY, Path::new("<builtin vignettes.json>"))
            .expect("bundled vignette library is valid")
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let raw: Vec<Vignette> =
            serde_json::from_str(text).map_err(|e| Error::json_at(origin, &e))?;
        Self::from_vignettes(raw)
    }

    pub fn from_vignettes(raw: Vec<Vignette>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut duplicates = Vec::new();
        for v in raw {
            let key = (v.condition, v.role);
            if entries.insert(key, v).is_some() {
                duplicates.push(format!("{}:{}", key.0.key(), key.1));
            }
        }
        if !duplicates.is_empty() {
            return Err(Error::Schema(format!(
                "duplicate entries: {}",
                duplicates.join(", ")
            )));
        }
        let missing: Vec<String> = enumerate_conditions()
            .into_iter()
            .flat_map(|c| [(c, Role::Customer), (c, Role::Worker)])
            .filter(|k| !entries.contains_key(k))
            .map(|(c, r)| format!("{}:{}", c.key(), r))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Schema(format!(
                "missing entries: {}",
                missing.join(", ")
            )));
        }
        for v in entries.values() {
            if v.outcome_text.trim().is_empty() || v.scenario_text.trim().is_empty() {
                return Err(Error::Schema(format!(
                    "empty text for {}:{}",
                    v.condition.key(),
                    v.role
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, condition: &ExperimentCondition, role: Role) -> Result<&Vignette> {
        self.entries
            .get(&(*condition, role))
            .ok_or_else(|| Error::Lookup {
                what: "vignette",
                key: format!("{}:{}", condition.key(), role),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vignette> {
        self.entries.values()
    }

    pub fn to_json(&self) -> Result<String> {
        let list: Vec<&Vignette> = self.entries.values().collect();
        Ok(serde_json::to_string_pretty(&list)?)
    }
}

/// Fixed framing sentences and response instructions layered on top of the vignettes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptText {
    pub customer_visibility_before: String,
    pub customer_visibility_after: String,
    pub customer_adjustable: String,
    pub customer_fixed: String,
    pub worker_visibility_before: String,
    pub worker_visibility_after: String,
    pub worker_final_tip: String,
    pub worker_tip_changed: String,
    pub reprompt_reminder: String,
}

impl Default for PromptText {
    fn default() -> Self {
        Self {
            customer_visibility_before: "The delivery worker can see your tip amount when deciding whether to accept your order.".into(),
            customer_visibility_after: "The delivery worker will only see your tip after completing the delivery.".into(),
            customer_adjustable: "After the delivery, the app allows you to keep your tip, remove it, or adjust it to a new amount for up to 24 hours.".into(),
            customer_fixed: "Your tip is final and cannot be changed after checkout.".into(),
            worker_visibility_before: "Before accepting, the app shows that the customer added a tip of {initial_tip}. You accept the delivery.".into(),
            worker_visibility_after: "The app does not show the tip amount before you accept; tips are shown only after the delivery is completed. You accept the delivery.".into(),
            worker_final_tip: "After the delivery, the app shows your final earnings from the customer's tip: {final_tip}.".into(),
            worker_tip_changed: "The customer changed the tip from {initial_tip} to {final_tip} after the delivery.".into(),
            reprompt_reminder: "Your previous answer could not be read. Reply again using exactly the labeled lines requested above, with SATISFACTION as a whole number from 1 to 7.".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TipContext {
    pub initial_tip: Cents,
    pub final_tip: Cents,
    pub decision: Option<TipDecision>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub role: Role,
    pub condition: ExperimentCondition,
    /// Full prompt text; always ends with `response_format_spec`.
    pub body_text: String,
    pub response_format_spec: String,
    pub initial_tip: Cents,
    /// Customer outcome the worker is told about. `None` for customer prompts.
    pub tip_context: Option<TipContext>,
}

impl PromptBundle {
    /// Same prompt with the re-prompt reminder appended after a failed parse.
    pub fn with_reminder(&self, reminder: &str) -> PromptBundle {
        let mut out = self.clone();
        out.body_text = format!("{}\n\n{}", self.body_text, reminder);
        out
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{[A-Za-z_][A-Za-z0-9_]*\}").unwrap())
}

/// Substitutes `{name}` tokens. Tokens without a value are an error.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut missing = None;
    let out = placeholder_re().replace_all(template, |caps: &regex::Captures<'_>| {
        let token = &caps[0];
        let name = &token[1..token.len() - 1];
        match values.iter().find(|(k, _)| *k == name) {
            Some((_, v)) => (*v).to_string(),
            None => {
                missing.get_or_insert_with(|| token.to_string());
                token.to_string()
            }
        }
    });
    match missing {
        Some(token) => Err(Error::Template(token)),
        None => Ok(out.into_owned()),
    }
}

fn customer_format_spec(adjustable: bool) -> String {
    let mut lines = vec!["Respond using exactly these labeled lines:".to_string()];
    if adjustable {
        lines.push("TIP DECISION: [keep/remove/adjust]".into());
        lines.push("NEW TIP AMOUNT: [amount] (only if you chose adjust)".into());
    }
    lines.push("SATISFACTION: [rating from 1 to 7, where 1 = extremely dissatisfied and 7 = extremely satisfied]".into());
    lines.push("REASONING: [explanation]".into());
    lines.join("\n")
}

fn worker_format_spec() -> String {
    customer_format_spec(false)
}

pub fn build_customer_prompt(
    library: &VignetteLibrary,
    text: &PromptText,
    condition: &ExperimentCondition,
    price: Cents,
    initial_tip: Cents,
) -> Result<PromptBundle> {
    if price.0 <= 0 {
        return Err(Error::invalid(format!("price must be > 0, got {price}")));
    }
    if initial_tip.is_negative() {
        return Err(Error::invalid(format!(
            "initial tip must be >= 0, got {initial_tip}"
        )));
    }
    let vignette = library.get(condition, Role::Customer)?;
    let price_s = price.to_string();
    let tip_s = initial_tip.to_string();
    let values = [("price", price_s.as_str()), ("initial_tip", tip_s.as_str())];
    let scenario = render(&vignette.scenario_text, &values)?;
    let visibility = match condition.tip_visibility {
        TipVisibility::Before => &text.customer_visibility_before,
        TipVisibility::After => &text.customer_visibility_after,
    };
    let adjustability = if condition.tip_adjustable {
        &text.customer_adjustable
    } else {
        &text.customer_fixed
    };
    let framing = render(&format!("{visibility} {adjustability}"), &values)?;
    let outcome = render(&vignette.outcome_text, &values)?;
    let format_spec = customer_format_spec(condition.tip_adjustable);
    let body_text =
        format!("{scenario}\n\n{framing}\n\nService outcome: {outcome}\n\n{format_spec}");
    Ok(PromptBundle {
        role: Role::Customer,
        condition: *condition,
        body_text,
        response_format_spec: format_spec,
        initial_tip,
        tip_context: None,
    })
}

pub fn build_worker_prompt(
    library: &VignetteLibrary,
    text: &PromptText,
    condition: &ExperimentCondition,
    customer: &CustomerResult,
    initial_tip: Cents,
) -> Result<PromptBundle> {
    if customer.final_tip.is_negative() {
        return Err(Error::invalid("customer final tip is negative"));
    }
    let vignette = library.get(condition, Role::Worker)?;
    let initial_s = initial_tip.to_string();
    let final_s = customer.final_tip.to_string();
    let values = [
        ("initial_tip", initial_s.as_str()),
        ("final_tip", final_s.as_str()),
    ];
    let note_template = match condition.tip_visibility {
        TipVisibility::Before => &text.worker_visibility_before,
        TipVisibility::After => &text.worker_visibility_after,
    };
    let note = render(note_template, &values)?;
    let mut scenario_values = values.to_vec();
    scenario_values.push(("tip_visibility_note", note.as_str()));
    let scenario = render(&vignette.scenario_text, &scenario_values)?;
    let outcome = render(&vignette.outcome_text, &values)?;

    // A worker who saw the initial tip also learns that it changed.
    let mut earnings = String::new();
    if condition.tip_visibility == TipVisibility::Before && customer.final_tip != initial_tip {
        earnings.push_str(&render(&text.worker_tip_changed, &values)?);
        earnings.push(' ');
    }
    earnings.push_str(&render(&text.worker_final_tip, &values)?);

    let format_spec = worker_format_spec();
    let body_text =
        format!("{scenario}\n\nService outcome: {outcome}\n\n{earnings}\n\n{format_spec}");
    Ok(PromptBundle {
        role: Role::Worker,
        condition: *condition,
        body_text,
        response_format_spec: format_spec,
        initial_tip,
        tip_context: Some(TipContext {
            initial_tip,
            final_tip: customer.final_tip,
            decision: customer.tip_decision,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::ServiceOutcome;

    fn cond(o: ServiceOutcome, adj: bool, vis: TipVisibility) -> ExperimentCondition {
        ExperimentCondition::new(o, adj, vis)
    }

    fn customer(final_tip: i64, decision: Option<TipDecision>) -> CustomerResult {
        CustomerResult {
            satisfaction: 3,
            reasoning: "late".into(),
            tip_decision: decision,
            final_tip: Cents(final_tip),
        }
    }

    #[test]
    fn builtin_library_is_complete() {
        let lib = VignetteLibrary::builtin();
        assert_eq!(lib.len(), 32);
        for c in enumerate_conditions() {
            let cu = lib.get(&c, Role::Customer).unwrap();
            let wo = lib.get(&c, Role::Worker).unwrap();
            assert!(cu.scenario_text.contains("{price}"));
            assert!(cu.scenario_text.contains("{initial_tip}"));
            assert!(wo.scenario_text.contains("{tip_visibility_note}"));
            assert_eq!(cu.condition.service_outcome, wo.condition.service_outcome);
        }
    }

    #[test]
    fn builtin_outcome_pairs_align() {
        let lib = VignetteLibrary::builtin();
        let c = cond(ServiceOutcome::Exceeds, true, TipVisibility::Before);
        assert!(lib
            .get(&c, Role::Customer)
            .unwrap()
            .outcome_text
            .starts_with("Your food arrived earlier than expected."));
        assert!(lib
            .get(&c, Role::Worker)
            .unwrap()
            .outcome_text
            .contains("deliver the order earlier than expected"));
        let c = cond(ServiceOutcome::Fails, false, TipVisibility::After);
        assert!(lib
            .get(&c, Role::Customer)
            .unwrap()
            .outcome_text
            .contains("very late"));
        assert!(lib
            .get(&c, Role::Worker)
            .unwrap()
            .outcome_text
            .contains("much later than expected"));
    }

    #[test]
    fn missing_entry_is_named() {
        let lib = VignetteLibrary::builtin();
        let target = cond(ServiceOutcome::Fails, false, TipVisibility::After);
        let raw: Vec<Vignette> = lib
            .iter()
            .filter(|v| !(v.condition == target && v.role == Role::Worker))
            .cloned()
            .collect();
        let err = VignetteLibrary::from_vignettes(raw).unwrap_err();
        match err {
            Error::Schema(msg) => assert!(msg.contains("fails/false/after:worker"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_entry_rejected() {
        let lib = VignetteLibrary::builtin();
        let mut raw: Vec<Vignette> = lib.iter().cloned().collect();
        raw.push(raw[0].clone());
        assert!(
            matches!(VignetteLibrary::from_vignettes(raw), Err(Error::Schema(m)) if m.contains("duplicate"))
        );
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = VignetteLibrary::from_json_str("[\n  {\"condition\": }\n]", Path::new("v.json"))
            .unwrap_err();
        match err {
            Error::JsonAt { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let lib = VignetteLibrary::builtin();
        let mut v: serde_json::Value = serde_json::from_str(&lib.to_json().unwrap()).unwrap();
        v[0]["mood"] = serde_json::json!("sunny");
        let text = serde_json::to_string(&v).unwrap();
        assert!(VignetteLibrary::from_json_str(&text, Path::new("x")).is_err());
    }

    #[test]
    fn round_trip_equals_original() {
        let lib = VignetteLibrary::builtin();
        let again =
            VignetteLibrary::from_json_str(&lib.to_json().unwrap(), Path::new("x")).unwrap();
        assert_eq!(lib, again);
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        std::fs::write(&path, VignetteLibrary::builtin().to_json().unwrap()).unwrap();
        assert_eq!(VignetteLibrary::load(&path).unwrap().len(), 32);
        assert!(matches!(
            VignetteLibrary::load(dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn render_rejects_unresolved_tokens() {
        assert_eq!(render("a {x} b", &[("x", "1")]).unwrap(), "a 1 b");
        assert!(matches!(render("a {y}", &[("x", "1")]), Err(Error::Template(t)) if t == "{y}"));
        assert_eq!(render("json {\"k\": 1}", &[]).unwrap(), "json {\"k\": 1}");
    }

    #[test]
    fn customer_prompt_adjustable() {
        let lib = VignetteLibrary::builtin();
        let text = PromptText::default();
        let c = cond(ServiceOutcome::Meets, true, TipVisibility::Before);
        let b = build_customer_prompt(&lib, &text, &c, Cents(3000), Cents(900)).unwrap();
        assert!(b.body_text.contains("$30"));
        assert!(b.body_text.contains("$9.00"));
        assert!(b.body_text.contains("TIP DECISION"));
        assert!(b.body_text.contains("NEW TIP AMOUNT"));
        assert!(b.body_text.contains(&text.customer_visibility_before));
        assert!(b.body_text.ends_with(&b.response_format_spec));
        assert!(!b.body_text.contains('{'));
        let again = build_customer_prompt(&lib, &text, &c, Cents(3000), Cents(900)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn customer_prompt_fixed_has_no_tip_decision() {
        let lib = VignetteLibrary::builtin();
        let text = PromptText::default();
        let c = cond(ServiceOutcome::Meets, false, TipVisibility::Before);
        let b = build_customer_prompt(&lib, &text, &c, Cents(3000), Cents(900)).unwrap();
        assert!(!b.body_text.contains("TIP DECISION"));
        assert!(b.body_text.contains(&text.customer_fixed));
        assert!(b.body_text.ends_with(&b.response_format_spec));
    }

    #[test]
    fn customer_prompt_validates_amounts() {
        let lib = VignetteLibrary::builtin();
        let text = PromptText::default();
        let c = cond(ServiceOutcome::Meets, false, TipVisibility::Before);
        assert!(build_customer_prompt(&lib, &text, &c, Cents(0), Cents(900)).is_err());
        assert!(build_customer_prompt(&lib, &text, &c, Cents(3000), Cents(-1)).is_err());
    }

    #[test]
    fn worker_prompt_before_discloses_initial_and_final() {
        let lib = VignetteLibrary::builtin();
        let text = PromptText::default();
        let c = cond(ServiceOutcome::Below, true, TipVisibility::Before);
        let b = build_worker_prompt(
            &lib,
            &text,
            &c,
            &customer(450, Some(TipDecision::Adjust)),
            Cents(900),
        )
        .unwrap();
        assert!(b
            .body_text
            .contains("Before accepting, the app shows that the customer added a tip of $9.00"));
        assert!(b.body_text.contains("$4.50"));
        assert!(!b.body_text.contains("TIP DECISION"));
        assert!(b.body_text.contains("SATISFACTION"));
        assert!(b.body_text.ends_with(&b.response_format_spec));
        let pos_disclose = b.body_text.find("$9.00").unwrap();
        let pos_final = b.body_text.find("final earnings").unwrap();
        let pos_question = b.body_text.find("SATISFACTION").unwrap();
        assert!(pos_disclose < pos_final && pos_final < pos_question);
    }

    #[test]
    fn worker_prompt_after_hides_initial_tip() {
        let lib = VignetteLibrary::builtin();
        let text = PromptText::default();
        let c = cond(ServiceOutcome::Below, true, TipVisibility::After);
        let b = build_worker_prompt(
            &lib,
            &text,
            &c,
            &customer(450, Some(TipDecision::Adjust)),
            Cents(900),
        )
        .unwrap();
        assert!(!b.body_text.contains("$9.00"));
        assert!(!b.body_text.contains("Before accepting"));
        assert!(b.body_text.contains("$4.50"));
        let again = build_worker_prompt(
            &lib,
            &text,
            &c,
            &customer(450, Some(TipDecision::Adjust)),
            Cents(900),
        )
        .unwrap();
        assert_eq!(b, again);
    }
}
