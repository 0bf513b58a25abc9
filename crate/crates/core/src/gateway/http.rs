//! Remote providers over HTTPS: OpenAI-compatible chat completions and the
//! Anthropic messages API.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::vignette::PromptBundle;

use super::{AgentParams, CallFailure, Reply, Transport};

const ANTHROPIC_VERSION: &str = "2023-06-01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderApi {
    OpenAiCompatible,
    Anthropic,
}

impl ProviderApi {
    /// API flavor and default endpoint for a known provider id.
    pub fn for_provider(provider_id: &str) -> Option<(ProviderApi, &'static str)> {
        match provider_id.to_ascii_lowercase().as_str() {
            "openai" => Some((
                ProviderApi::OpenAiCompatible,
                "https://api.openai.com/v1/chat/completions",
            )),
            "mistral" => Some((
                ProviderApi::OpenAiCompatible,
                "https://api.mistral.ai/v1/chat/completions",
            )),
            "anthropic" => Some((
                ProviderApi::Anthropic,
                "https://api.anthropic.com/v1/messages",
            )),
            _ => None,
        }
    }
}

/// Environment variable holding the key for `provider_id`, e.g. `OPENAI_API_KEY`.
pub fn credential_var(provider_id: &str) -> String {
    let stem: String = provider_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{stem}_API_KEY")
}

pub struct HttpTransport {
    api: ProviderApi,
    endpoint: String,
    api_key: String,
    key_var: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    /// Resolves endpoint and credentials. Providers without a known default
    /// endpoint are treated as OpenAI-compatible and need `params.endpoint`.
    pub fn from_params(params: &AgentParams) -> Result<Self> {
        let (api, default_endpoint) = match ProviderApi::for_provider(&params.provider_id) {
            Some((api, url)) => (api, Some(url)),
            None => (ProviderApi::OpenAiCompatible, None),
        };
        let endpoint = params
            .endpoint
            .clone()
            .or(default_endpoint.map(str::to_string))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "provider {:?} needs an explicit endpoint",
                    params.provider_id
                ))
            })?;
        let key_var = credential_var(&params.provider_id);
        let api_key = std::env::var(&key_var)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| Error::Credential {
                var: key_var.clone(),
            })?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(params.timeout_secs.max(1))))
            .build()
            .into();
        Ok(Self {
            api,
            endpoint,
            api_key,
            key_var,
            agent,
        })
    }
}

/// JSON request body for one single-turn prompt. Both API flavors accept
/// the same shape for plain user messages.
pub fn request_body(params: &AgentParams, prompt: &str) -> Value {
    json!({
        "model": params.model_id,
        "messages": [{ "role": "user", "content": prompt }],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    })
}

/// Pulls the reply text out of a provider response body.
pub fn extract_text(api: ProviderApi, body: &Value) -> Option<String> {
    match api {
        ProviderApi::OpenAiCompatible => body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string),
        ProviderApi::Anthropic => {
            let parts: Vec<&str> = body
                .get("content")?
                .as_array()?
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect();
            (!parts.is_empty()).then(|| parts.concat())
        }
    }
}

/// Maps an HTTP status to a failure class.
pub fn classify_status(status: u16, key_var: &str, message: String) -> CallFailure {
    match status {
        401 | 403 => CallFailure::Auth {
            var: key_var.to_string(),
        },
        408 | 409 | 425 | 429 | 500..=599 => CallFailure::Transient {
            status: Some(status),
            message,
        },
        _ => CallFailure::Fatal {
            status: Some(status),
            message,
        },
    }
}

impl Transport for HttpTransport {
    fn call(
        &self,
        params: &AgentParams,
        bundle: &PromptBundle,
        _seed: u64,
    ) -> std::result::Result<Reply, CallFailure> {
        let body = request_body(params, &bundle.body_text);
        let request = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        let request = match self.api {
            ProviderApi::OpenAiCompatible => {
                request.header("authorization", &format!("Bearer {}", self.api_key))
            }
            ProviderApi::Anthropic => request
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", ANTHROPIC_VERSION),
        };
        let mut response = request
            .send_json(&body)
            .map_err(|e| CallFailure::Transient {
                status: None,
                message: e.to_string(),
            })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| CallFailure::Transient {
                status: Some(status),
                message: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(300).collect();
            return Err(classify_status(status, &self.key_var, snippet));
        }
        let json: Value = serde_json::from_str(&text).map_err(|e| CallFailure::Fatal {
            status: Some(status),
            message: format!("malformed provider JSON: {e}"),
        })?;
        let reply_text = extract_text(self.api, &json).ok_or_else(|| CallFailure::Fatal {
            status: Some(status),
            message: "provider response has no text content".into(),
        })?;
        let mut metadata = BTreeMap::new();
        metadata.insert("http_status".into(), status.to_string());
        for key in ["id", "model"] {
            if let Some(v) = json.get(key).and_then(Value::as_str) {
                metadata.insert(format!("response_{key}"), v.to_string());
            }
        }
        Ok(Reply {
            text: reply_text,
            metadata,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn credential_var_names() {
        assert_eq!(credential_var("openai"), "OPENAI_API_KEY");
        assert_eq!(credential_var("my-proxy"), "MY_PROXY_API_KEY");
    }

    #[test]
    fn status_classes() {
        assert!(matches!(
            classify_status(401, "K", String::new()),
            CallFailure::Auth { .. }
        ));
        assert!(matches!(
            classify_status(429, "K", String::new()),
            CallFailure::Transient { .. }
        ));
        assert!(matches!(
            classify_status(503, "K", String::new()),
            CallFailure::Transient { .. }
        ));
        assert!(matches!(
            classify_status(400, "K", String::new()),
            CallFailure::Fatal { .. }
        ));
    }

    #[test]
    fn bodies_carry_sampling_params() {
        let p = AgentParams {
            model_id: "gpt-4o".into(),
            ..AgentParams::default()
        };
        let b = request_body(&p, "hi");
        assert_eq!(b["temperature"], 0.7);
        assert_eq!(b["top_p"], 0.95);
        assert_eq!(b["messages"][0]["content"], "hi");
    }

    #[test]
    fn text_extraction() {
        let openai = json!({"choices": [{"message": {"content": "SATISFACTION: 4"}}]});
        assert_eq!(
            extract_text(ProviderApi::OpenAiCompatible, &openai).unwrap(),
            "SATISFACTION: 4"
        );
        let anthropic =
            json!({"content": [{"type": "text", "text": "A"}, {"type": "text", "text": "B"}]});
        assert_eq!(
            extract_text(ProviderApi::Anthropic, &anthropic).unwrap(),
            "AB"
        );
        assert!(extract_text(ProviderApi::Anthropic, &json!({"content": []})).is_none());
    }

    #[test]
    fn missing_key_is_credential_error() {
        let p = AgentParams {
            provider_id: "nonexistent-provider-xyz".into(),
            endpoint: Some("http://127.0.0.1:9".into()),
            ..AgentParams::default()
        };
        assert!(matches!(
            HttpTransport::from_params(&p),
            Err(Error::Credential { .. })
        ));
    }
}
