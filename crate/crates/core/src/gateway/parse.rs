//! Extraction of labeled fields from free-form agent replies.
//!
//! Labels at the start of a line match case-insensitively; labels in the
//! middle of a line must be upper case (`... - REASONING: ...`). Ratings must
//! be integral; nothing is rounded or clamped.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::design::ExperimentCondition;
use crate::error::{Error, Result};
use crate::money::Cents;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TipDecision {
    Keep,
    Remove,
    Adjust,
}

impl TipDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            TipDecision::Keep => "keep",
            TipDecision::Remove => "remove",
            TipDecision::Adjust => "adjust",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomerResult {
    pub satisfaction: u8,
    pub reasoning: String,
    pub tip_decision: Option<TipDecision>,
    pub final_tip: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerResult {
    pub satisfaction: u8,
    pub reasoning: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Satisfaction,
    Reasoning,
    TipDecision,
    NewTipAmount,
}

impl Label {
    fn from_match(s: &str) -> Label {
        let s = s.to_ascii_lowercase();
        if s.starts_with("satisfaction") {
            Label::Satisfaction
        } else if s.starts_with("reasoning") {
            Label::Reasoning
        } else if s.starts_with("tip") {
            Label::TipDecision
        } else {
            Label::NewTipAmount
        }
    }

    fn name(self) -> &'static str {
        match self {
            Label::Satisfaction => "SATISFACTION",
            Label::Reasoning => "REASONING",
            Label::TipDecision => "TIP DECISION",
            Label::NewTipAmount => "NEW TIP AMOUNT",
        }
    }
}

fn line_start_labels() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?im)^[ \t>#*\-]*\**[ \t]*(satisfaction|reasoning|tip[ _]decision|new[ _]tip[ _]amount)[ \t]*\**[ \t]*:",
        )
        .unwrap()
    })
}

fn inline_labels() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\b(SATISFACTION|REASONING|TIP[ _]DECISION|NEW[ _]TIP[ _]AMOUNT)[ \t]*\**[ \t]*:",
        )
        .unwrap()
    })
}

fn rating_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\[(*\s]*(-?\d+(?:\.\d+)?)").unwrap())
}

fn range_tail_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(?:-|–|—|to|or|and|,)\s*\d").unwrap())
}

fn amount_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[\[(*\s]*(-?\s*\$?\s*\d[\d,]*(?:\.\d+)?|-?\s*\$?\s*\.\d+)").unwrap()
    })
}

/// Label occurrences in text order, each with the text segment it introduces.
fn segments(text: &str) -> Vec<(Label, &str)> {
    let mut hits: Vec<(usize, usize, Label)> = Vec::new();
    for re in [line_start_labels(), inline_labels()] {
        for caps in re.captures_iter(text) {
            let whole = caps.get(0).unwrap();
            let label = caps.get(1).unwrap();
            if !hits.iter().any(|(s, _, _)| *s == label.start()) {
                hits.push((
                    label.start(),
                    whole.end(),
                    Label::from_match(label.as_str()),
                ));
            }
        }
    }
    hits.sort_by_key(|h| h.0);
    let mut out = Vec::with_capacity(hits.len());
    for (i, &(_, value_start, label)) in hits.iter().enumerate() {
        let value_end = hits.get(i + 1).map(|h| h.0).unwrap_or(text.len());
        let value_end = value_end.max(value_start);
        out.push((label, clean_value(&text[value_start..value_end])));
    }
    out
}

fn clean_value(raw: &str) -> &str {
    let sep = |c: char| c.is_whitespace() || matches!(c, '*' | '|' | '—' | '–' | ';');
    let mut v = raw.trim_matches(sep);
    // A dash is a separator unless it signs a number.
    while let Some(rest) = v.strip_prefix('-') {
        if rest.starts_with(|c: char| c.is_ascii_digit() || c == '$' || c == '.') {
            break;
        }
        v = rest.trim_start_matches(sep);
    }
    v.trim_end_matches(|c: char| sep(c) || c == '-')
}

fn unique_value<'a>(segs: &[(Label, &'a str)], label: Label) -> Result<Option<&'a str>> {
    let mut found: Option<&str> = None;
    for (_, v) in segs.iter().filter(|(l, _)| *l == label) {
        match found {
            None => found = Some(v),
            Some(prev) if prev.eq_ignore_ascii_case(v) => {}
            Some(prev) => {
                return Err(Error::ResponseParse(format!(
                    "conflicting {} values: {prev:?} vs {v:?}",
                    label.name()
                )))
            }
        }
    }
    Ok(found)
}

fn parse_rating(segs: &[(Label, &str)]) -> Result<u8> {
    let raw = unique_value(segs, Label::Satisfaction)?
        .ok_or_else(|| Error::ResponseParse("missing SATISFACTION".into()))?;
    let caps = rating_re()
        .captures(raw)
        .ok_or_else(|| Error::ResponseParse(format!("SATISFACTION is not a number: {raw:?}")))?;
    let number = caps.get(1).unwrap();
    let rest = &raw[number.end()..];
    if range_tail_re().is_match(rest) {
        return Err(Error::ResponseParse(format!(
            "SATISFACTION is ambiguous: {raw:?}"
        )));
    }
    let value: f64 = number
        .as_str()
        .parse()
        .map_err(|_| Error::ResponseParse(format!("SATISFACTION is not a number: {raw:?}")))?;
    if value.fract() != 0.0 {
        return Err(Error::ResponseRange {
            field: "SATISFACTION",
            value: number.as_str().to_string(),
            allowed: "integer 1-7",
        });
    }
    if !(1.0..=7.0).contains(&value) {
        return Err(Error::ResponseRange {
            field: "SATISFACTION",
            value: number.as_str().to_string(),
            allowed: "integer 1-7",
        });
    }
    Ok(value as u8)
}

fn parse_reasoning(segs: &[(Label, &str)]) -> Result<String> {
    let raw = segs
        .iter()
        .find(|(l, _)| *l == Label::Reasoning)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::ResponseParse("missing REASONING".into()))?;
    let cleaned = raw.trim();
    if cleaned.is_empty() {
        return Err(Error::ResponseParse("empty REASONING".into()));
    }
    Ok(cleaned.to_string())
}

fn parse_decision(segs: &[(Label, &str)]) -> Result<TipDecision> {
    let raw = unique_value(segs, Label::TipDecision)?
        .ok_or_else(|| Error::ResponseParse("missing TIP DECISION".into()))?;
    let word: String = raw
        .trim_start_matches(|c: char| {
            c.is_whitespace() || matches!(c, '[' | '(' | '*' | '"' | '\'')
        })
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    match word.as_str() {
        "keep" => Ok(TipDecision::Keep),
        "remove" => Ok(TipDecision::Remove),
        "adjust" => Ok(TipDecision::Adjust),
        _ => Err(Error::ResponseParse(format!(
            "TIP DECISION must be keep, remove or adjust, got {raw:?}"
        ))),
    }
}

fn parse_amount(segs: &[(Label, &str)]) -> Result<Cents> {
    let raw = unique_value(segs, Label::NewTipAmount)?
        .ok_or_else(|| Error::ResponseParse("adjust decision without NEW TIP AMOUNT".into()))?;
    let caps = amount_re()
        .captures(raw)
        .ok_or_else(|| Error::ResponseParse(format!("NEW TIP AMOUNT is not an amount: {raw:?}")))?;
    let token = caps.get(1).unwrap().as_str().replace(' ', "");
    let amount: Cents = token
        .parse()
        .map_err(|_| Error::ResponseParse(format!("NEW TIP AMOUNT is not an amount: {raw:?}")))?;
    if amount.is_negative() {
        return Err(Error::ResponseRange {
            field: "NEW TIP AMOUNT",
            value: token,
            allowed: ">= 0",
        });
    }
    Ok(amount)
}

/// Parses a customer reply and applies the keep/remove/adjust mapping to the final tip.
pub fn parse_customer_response(
    text: &str,
    condition: &ExperimentCondition,
    initial_tip: Cents,
) -> Result<CustomerResult> {
    let segs = segments(text);
    let satisfaction = parse_rating(&segs)?;
    let reasoning = parse_reasoning(&segs)?;
    if !condition.tip_adjustable {
        return Ok(CustomerResult {
            satisfaction,
            reasoning,
            tip_decision: None,
            final_tip: initial_tip,
        });
    }
    let decision = parse_decision(&segs)?;
    let final_tip = match decision {
        TipDecision::Keep => initial_tip,
        TipDecision::Remove => Cents::ZERO,
        TipDecision::Adjust => parse_amount(&segs)?,
    };
    Ok(CustomerResult {
        satisfaction,
        reasoning,
        tip_decision: Some(decision),
        final_tip,
    })
}

pub fn parse_worker_response(text: &str) -> Result<WorkerResult> {
    let segs = segments(text);
    Ok(WorkerResult {
        satisfaction: parse_rating(&segs)?,
        reasoning: parse_reasoning(&segs)?,
    })
}
