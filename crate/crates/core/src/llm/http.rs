use std::io;

use serde_json::{json, Value};

use super::{BackendCall, BackendError, BackendReply, LlmBackend, ProviderConfig};

const DEFAULT_POINTER: &str = "/choices/0/message/content";

/// Generic chat-completion client: system + user messages posted as JSON.
/// Provider differences are expressed through [`ProviderConfig`] fields.
#[derive(Debug)]
pub struct ChatCompletionBackend {
    endpoint: String,
    model: String,
    auth: Option<(String, String)>,
    response_pointer: String,
    extra_body: Option<Value>,
}

impl ChatCompletionBackend {
    /// Fails when the endpoint or model is missing or the credential
    /// variable is not set.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, String> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or("chat-completion provider needs an endpoint")?;
        let model = config
            .model
            .clone()
            .ok_or("chat-completion provider needs a model")?;
        let auth = match &config.credential_env {
            Some(var) => {
                let secret = std::env::var(var)
                    .map_err(|_| format!("credential variable {var} is not set"))?;
                let header = config.auth_header.clone().unwrap_or_else(|| "Authorization".into());
                let scheme = config.auth_scheme.clone().unwrap_or_else(|| "Bearer ".into());
                Some((header, format!("{scheme}{secret}")))
            }
            None => None,
        };
        Ok(Self {
            endpoint,
            model,
            auth,
            response_pointer: config
                .response_pointer
                .clone()
                .unwrap_or_else(|| DEFAULT_POINTER.into()),
            extra_body: config.extra_body.clone(),
        })
    }

    fn body(&self, call: &BackendCall<'_>) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": call.prompt.system},
                {"role": "user", "content": call.prompt.user},
            ],
            "temperature": call.request.decoding.temperature,
            "max_tokens": call.request.decoding.max_output_tokens,
        });
        if let (Some(Value::Object(extra)), Value::Object(map)) = (&self.extra_body, &mut body) {
            for (k, v) in extra {
                map.insert(k.clone(), v.clone());
            }
        }
        body
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<io::Error>() {
            return matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock);
        }
        source = e.source();
    }
    false
}

impl LlmBackend for ChatCompletionBackend {
    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        let agent = ureq::AgentBuilder::new().timeout(call.timeout).build();
        let mut req = agent.post(&self.endpoint);
        if let Some((header, value)) = &self.auth {
            req = req.set(header, value);
        }
        let response = match req.send_json(self.body(call)) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                return Err(BackendError::Transient(format!("HTTP {code}")));
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(BackendError::Fatal(format!("HTTP {code}")));
            }
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => return Err(BackendError::Timeout),
            Err(ureq::Error::Transport(t)) => return Err(BackendError::Transient(t.to_string())),
        };
        let value: Value = response
            .into_json()
            .map_err(|e| BackendError::Transient(format!("unreadable response body: {e}")))?;
        let text = value
            .pointer(&self.response_pointer)
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Fatal(format!("no text at {}", self.response_pointer)))?;
        Ok(BackendReply {
            text: text.to_owned(),
            raw_usage: value.get("usage").cloned(),
        })
    }
}
