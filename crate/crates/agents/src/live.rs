//! OpenAI-compatible chat-completions provider.
//!
//! Configured from `MARGIN_LLM_ENDPOINT` (base URL, `/chat/completions` is
//! appended), `MARGIN_LLM_API_KEY` and `MARGIN_LLM_MODEL`.

use std::time::Duration;

use serde_json::{json, Value};

use crate::provider::{chunk_text, Provider, ProviderError, ProviderRequest};

pub struct LiveProvider {
    endpoint: String,
    api_key: String,
    model: String,
    client: reqwest::blocking::Client,
}

impl LiveProvider {
    pub fn new(endpoint: &str, api_key: &str, model: &str) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderError(e.to_string()))?;
        Ok(Self {
            endpoint: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            api_key: api_key.into(),
            model: model.into(),
            client,
        })
    }

    pub fn from_env() -> Result<Self, ProviderError> {
        let var = |k: &str| std::env::var(k).map_err(|_| ProviderError(format!("{k} is not set")));
        Self::new(&var("MARGIN_LLM_ENDPOINT")?, &var("MARGIN_LLM_API_KEY")?, &var("MARGIN_LLM_MODEL")?)
    }
}

impl Provider for LiveProvider {
    fn complete(&self, req: &ProviderRequest, on_delta: &mut dyn FnMut(&str)) -> Result<Value, ProviderError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
        });
        if req.output_schema.is_some() {
            body["response_format"] = json!({"type": "json_object"});
        }
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError(e.to_string()))?;
        let status = resp.status();
        let payload: Value = resp.json().map_err(|e| ProviderError(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError(format!("HTTP {status}: {payload}")));
        }
        let text = payload["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError("response has no message content".into()))?;
        for d in chunk_text(text) {
            on_delta(&d);
        }
        Ok(match req.output_schema {
            Some(_) => serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.into())),
            None => Value::String(text.into()),
        })
    }
}
