//! Uniform access to text-generation providers.
//!
//! The [`Gateway`] renders a [`GenerationRequest`] with the versioned prompt
//! templates, dispatches it to the configured [`LlmBackend`] and applies the
//! retry policy. Backends only move text over the wire; they never see
//! domain types beyond the request they are answering.

mod http;
mod prompt;
mod scripted;
mod strategy;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::domain::Strategy;
use crate::engine::ConversationHistory;

pub use http::ChatCompletionBackend;
pub use prompt::{render_prompt, PromptTemplates, RenderedPrompt, TemplateError, DEFAULT_HISTORY_BUDGET};
pub use scripted::{ScriptedProvider, ScriptedResponse};
pub use strategy::{parse_strategy, UnrecognizedStrategy};

pub const PROPOSAL_TEMPERATURE: f64 = 0.7;
pub const SELECTION_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RequestKind {
    SynthesizeInitial,
    SelectStrategy,
    ReviseWithStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub kind: RequestKind,
    pub history: ConversationHistory,
    pub strategy: Option<Strategy>,
    pub provider_id: String,
    pub decoding: Decoding,
}

impl GenerationRequest {
    pub fn synthesize(history: ConversationHistory, provider_id: impl Into<String>) -> Self {
        Self {
            kind: RequestKind::SynthesizeInitial,
            history,
            strategy: None,
            provider_id: provider_id.into(),
            decoding: Decoding {
                temperature: PROPOSAL_TEMPERATURE,
                max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            },
        }
    }

    pub fn select_strategy(history: ConversationHistory, provider_id: impl Into<String>) -> Self {
        Self {
            kind: RequestKind::SelectStrategy,
            history,
            strategy: None,
            provider_id: provider_id.into(),
            decoding: Decoding {
                temperature: SELECTION_TEMPERATURE,
                max_output_tokens: 16,
            },
        }
    }

    pub fn revise(history: ConversationHistory, strategy: Strategy, provider_id: impl Into<String>) -> Self {
        Self {
            kind: RequestKind::ReviseWithStrategy,
            history,
            strategy: Some(strategy),
            provider_id: provider_id.into(),
            decoding: Decoding {
                temperature: PROPOSAL_TEMPERATURE,
                max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            },
        }
    }

    /// Proposal iteration this request is about: the one being written for
    /// proposal requests, the rejected one for strategy selection.
    pub fn target_iteration(&self) -> u32 {
        let proposals = self.history.proposal_count();
        match self.kind {
            RequestKind::SynthesizeInitial => 1,
            RequestKind::SelectStrategy => proposals,
            RequestKind::ReviseWithStrategy => proposals + 1,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_owned()));
        if (self.kind == RequestKind::ReviseWithStrategy) != self.strategy.is_some() {
            return invalid("strategy must be present exactly for ReviseWithStrategy");
        }
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            return invalid("temperature must be a finite value >= 0");
        }
        if self.decoding.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub provider_id: String,
    pub latency: Duration,
    pub attempts: u32,
    pub raw_usage: Option<serde_json::Value>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("provider {provider} unavailable after {attempts} attempt(s): {reason}")]
    ProviderUnavailable {
        provider: String,
        attempts: u32,
        reason: String,
    },
    #[error("provider {provider} timed out after {attempts} attempt(s)")]
    Timeout { provider: String, attempts: u32 },
    #[error("provider {0} returned an empty completion")]
    EmptyCompletion(String),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: connection refused, 5xx, rate limiting.
    #[error("transient: {0}")]
    Transient(String),
    #[error("timed out")]
    Timeout,
    /// Not worth retrying: bad credentials, malformed request.
    #[error("fatal: {0}")]
    Fatal(String),
}

pub struct BackendCall<'a> {
    pub request: &'a GenerationRequest,
    pub prompt: &'a RenderedPrompt,
    pub timeout: Duration,
    pub attempt: u32,
}

#[derive(Debug, Clone, Default)]
pub struct BackendReply {
    pub text: String,
    pub raw_usage: Option<serde_json::Value>,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderKind {
    #[default]
    ChatCompletion,
    Scripted,
}

/// One configured provider. Credentials are referenced by environment
/// variable name only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Header carrying the credential, `Authorization` when unset.
    #[serde(default)]
    pub auth_header: Option<String>,
    /// Prefix placed before the credential, `Bearer ` when unset.
    #[serde(default)]
    pub auth_scheme: Option<String>,
    /// JSON pointer to the completion text in the response body.
    #[serde(default)]
    pub response_pointer: Option<String>,
    /// Extra fields merged into every request body.
    #[serde(default)]
    pub extra_body: Option<serde_json::Value>,
    /// Response table for scripted providers.
    #[serde(default)]
    pub script: Option<PathBuf>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retry_budget() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    250
}

impl ProviderConfig {
    pub fn scripted(provider_id: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            kind: ProviderKind::Scripted,
            endpoint: None,
            model: None,
            credential_env: None,
            timeout_ms: default_timeout_ms(),
            retry_budget: default_retry_budget(),
            backoff_ms: default_backoff_ms(),
            auth_header: None,
            auth_scheme: None,
            response_pointer: None,
            extra_body: None,
            script: None,
        }
    }

    pub fn chat_completion(provider_id: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::ChatCompletion,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            ..Self::scripted(provider_id)
        }
    }

    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            timeout: Duration::from_millis(self.timeout_ms),
            retry_budget: self.retry_budget,
            backoff: Duration::from_millis(self.backoff_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub timeout: Duration,
    pub retry_budget: u32,
    pub backoff: Duration,
}

impl RetryPolicy {
    /// Upper bound on wall time for one `generate` call.
    pub fn deadline(&self) -> Duration {
        self.timeout * (self.retry_budget + 1)
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_millis(default_timeout_ms()),
            retry_budget: default_retry_budget(),
            backoff: Duration::from_millis(default_backoff_ms()),
        }
    }
}

struct ProviderSlot {
    policy: RetryPolicy,
    backend: Result<Arc<dyn LlmBackend>, String>,
}

/// Stateless dispatcher over the configured providers.
#[derive(Clone)]
pub struct Gateway {
    providers: Arc<BTreeMap<String, ProviderSlot>>,
    templates: Arc<PromptTemplates>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("providers", &self.providers.keys().collect::<Vec<_>>())
            .field("template_version", &self.templates.version)
            .finish()
    }
}

#[derive(Default)]
pub struct GatewayBuilder {
    providers: BTreeMap<String, ProviderSlot>,
    templates: Option<PromptTemplates>,
}

impl GatewayBuilder {
    pub fn backend(mut self, provider_id: impl Into<String>, backend: Arc<dyn LlmBackend>, policy: RetryPolicy) -> Self {
        self.providers.insert(
            provider_id.into(),
            ProviderSlot {
                policy,
                backend: Ok(backend),
            },
        );
        self
    }

    pub fn unavailable(mut self, provider_id: impl Into<String>, reason: impl Into<String>) -> Self {
        self.providers.insert(
            provider_id.into(),
            ProviderSlot {
                policy: RetryPolicy::default(),
                backend: Err(reason.into()),
            },
        );
        self
    }

    /// Resolves each config into a backend. Providers whose credential
    /// variable is unset or whose script cannot be read are registered as
    /// unavailable rather than failing the whole build.
    pub fn configs(mut self, configs: &[ProviderConfig]) -> Self {
        for config in configs {
            let backend: Result<Arc<dyn LlmBackend>, String> = match config.kind {
                ProviderKind::Scripted => match &config.script {
                    Some(path) => ScriptedProvider::from_file(path)
                        .map(|p| Arc::new(p) as Arc<dyn LlmBackend>)
                        .map_err(|e| format!("cannot load script {}: {e}", path.display())),
                    None => Ok(Arc::new(ScriptedProvider::with_defaults())),
                },
                ProviderKind::ChatCompletion => ChatCompletionBackend::from_config(config)
                    .map(|b| Arc::new(b) as Arc<dyn LlmBackend>),
            };
            if let Err(reason) = &backend {
                warn!(provider = %config.provider_id, %reason, "provider marked unavailable");
            }
            self.providers.insert(
                config.provider_id.clone(),
                ProviderSlot {
                    policy: config.policy(),
                    backend,
                },
            );
        }
        self
    }

    pub fn templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = Some(templates);
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            providers: Arc::new(self.providers),
            templates: Arc::new(
                self.templates
                    .unwrap_or_else(|| PromptTemplates::builtin().clone()),
            ),
        }
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    pub fn provider_ids(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }

    pub fn has_provider(&self, provider_id: &str) -> bool {
        self.providers.contains_key(provider_id)
    }

    pub fn is_available(&self, provider_id: &str) -> bool {
        self.providers
            .get(provider_id)
            .is_some_and(|slot| slot.backend.is_ok())
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn render(&self, request: &GenerationRequest) -> RenderedPrompt {
        self.templates.render(request)
    }

    /// Sends one request, retrying transient failures with exponential
    /// backoff. Never exceeds `timeout * (retry_budget + 1)` of wall time.
    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        request.validate()?;
        let provider = request.provider_id.clone();
        let slot = self
            .providers
            .get(&provider)
            .ok_or_else(|| GatewayError::UnknownProvider(provider.clone()))?;
        let backend = slot
            .backend
            .as_ref()
            .map_err(|reason| GatewayError::ProviderUnavailable {
                provider: provider.clone(),
                attempts: 0,
                reason: reason.clone(),
            })?;

        let prompt = self.render(request);
        let policy = slot.policy;
        let started = Instant::now();
        let deadline = policy.deadline();
        let mut last_error = BackendError::Transient("no attempt made".into());
        let mut attempts = 0;

        for attempt in 0..=policy.retry_budget {
            let remaining = deadline.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                break;
            }
            attempts += 1;
            let call = BackendCall {
                request,
                prompt: &prompt,
                timeout: policy.timeout.min(remaining),
                attempt,
            };
            match backend.complete(&call) {
                Ok(reply) => {
                    if reply.text.trim().is_empty() {
                        return Err(GatewayError::EmptyCompletion(provider));
                    }
                    debug!(%provider, kind = ?request.kind, attempts, "completion received");
                    return Ok(GenerationResponse {
                        text: reply.text,
                        provider_id: provider,
                        latency: started.elapsed(),
                        attempts,
                        raw_usage: reply.raw_usage,
                    });
                }
                Err(BackendError::Fatal(reason)) => {
                    return Err(GatewayError::ProviderUnavailable {
                        provider,
                        attempts,
                        reason,
                    });
                }
                Err(err) => {
                    warn!(%provider, attempt, error = %err, "provider attempt failed");
                    last_error = err;
                }
            }
            if attempt < policy.retry_budget {
                let backoff = policy.backoff.saturating_mul(1 << attempt.min(16));
                let remaining = deadline.saturating_sub(started.elapsed());
                std::thread::sleep(backoff.min(remaining));
            }
        }

        Err(match last_error {
            BackendError::Timeout => GatewayError::Timeout { provider, attempts },
            BackendError::Transient(reason) | BackendError::Fatal(reason) => {
                GatewayError::ProviderUnavailable {
                    provider,
                    attempts,
                    reason,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests;
