use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::Deserialize;

use super::{GenerationRequest, RequestKind};
use crate::domain::Strategy;
use crate::engine::{ConversationHistory, HistoryItem};

const BUILTIN_TEMPLATES: &str = include_str!("../../templates/prompts.v1.toml");

/// Default character budget for the rendered conversation history.
pub const DEFAULT_HISTORY_BUDGET: usize = 16_000;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template file does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("template file has no prompt for strategy {0}")]
    MissingStrategy(Strategy),
}

/// Prompt scaffolding plus the per-strategy instruction sentences.
#[derive(Debug, Clone, Deserialize)]
pub struct PromptTemplates {
    pub version: u32,
    pub system: String,
    pub synthesize: String,
    pub select_strategy: String,
    pub revise: String,
    strategies: BTreeMap<String, String>,
    #[serde(default = "default_budget")]
    pub history_budget: usize,
}

fn default_budget() -> usize {
    DEFAULT_HISTORY_BUDGET
}

/// A prompt split the way chat-completion endpoints expect it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    pub fn to_text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

impl PromptTemplates {
    pub fn builtin() -> &'static PromptTemplates {
        static TEMPLATES: OnceLock<PromptTemplates> = OnceLock::new();
        TEMPLATES.get_or_init(|| {
            PromptTemplates::from_toml_str(BUILTIN_TEMPLATES).expect("built-in templates are valid")
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TemplateError> {
        let templates: PromptTemplates = toml::from_str(text)?;
        for s in Strategy::ALL {
            if !templates.strategies.contains_key(s.name()) {
                return Err(TemplateError::MissingStrategy(s));
            }
        }
        Ok(templates)
    }

    pub fn strategy_prompt(&self, strategy: Strategy) -> &str {
        &self.strategies[strategy.name()]
    }

    pub fn render(&self, request: &GenerationRequest) -> RenderedPrompt {
        let history = render_history(&request.history, self.history_budget);
        let template = match request.kind {
            RequestKind::SynthesizeInitial => &self.synthesize,
            RequestKind::SelectStrategy => &self.select_strategy,
            RequestKind::ReviseWithStrategy => &self.revise,
        };
        let mut user = template
            .replace("{question}", &request.history.question)
            .replace("{history}", &history)
            .replace("{next_iteration}", &(request.history.proposal_count() + 1).to_string());
        if request.kind == RequestKind::SelectStrategy {
            user = user.replace("{strategy_list}", &self.strategy_list());
        }
        if let Some(strategy) = request.strategy {
            user = user
                .replace("{strategy_name}", strategy.name())
                .replace("{strategy_prompt}", self.strategy_prompt(strategy));
        }
        RenderedPrompt {
            system: self.system.clone(),
            user,
        }
    }

    fn strategy_list(&self) -> String {
        let mut out = String::new();
        for s in Strategy::ALL {
            let _ = writeln!(out, "- {}: {}", s.name(), self.strategy_prompt(s));
        }
        out.trim_end().to_owned()
    }
}

fn history_line(item: &HistoryItem) -> String {
    match item {
        HistoryItem::Opinion {
            display_name, text, ..
        } => format!("Opinion from {display_name}: {text}"),
        HistoryItem::Proposal {
            iteration_index,
            text,
            strategy_used: Some(s),
        } => format!("Proposal {iteration_index} (strategy {s}): {text}"),
        HistoryItem::Proposal {
            iteration_index,
            text,
            strategy_used: None,
        } => format!("Proposal {iteration_index}: {text}"),
        HistoryItem::Verdict {
            display_name,
            iteration_index,
            accept,
            ..
        } => {
            let verb = if *accept { "accepted" } else { "rejected" };
            format!("{display_name} {verb} proposal {iteration_index}.")
        }
        HistoryItem::Feedback {
            display_name,
            iteration_index,
            text,
            ..
        } => format!("Feedback from {display_name} on proposal {iteration_index}: {text}"),
    }
}

/// Renders history lines in order. When the result exceeds `budget`
/// characters, feedback lines are dropped oldest first until it fits or no
/// feedback remains.
pub(crate) fn render_history(history: &ConversationHistory, budget: usize) -> String {
    let lines: Vec<(bool, String)> = history
        .items
        .iter()
        .map(|item| (matches!(item, HistoryItem::Feedback { .. }), history_line(item)))
        .collect();
    let size = |keep: &[bool]| -> usize {
        lines
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|((_, l), _)| l.chars().count() + 1)
            .sum()
    };
    let mut keep = vec![true; lines.len()];
    let mut feedback_idx = lines.iter().enumerate().filter(|(_, (fb, _))| *fb).map(|(i, _)| i);
    while size(&keep) > budget {
        match feedback_idx.next() {
            Some(i) => keep[i] = false,
            None => break,
        }
    }
    lines
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|((_, l), _)| l.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders a request with the built-in templates as a single string.
pub fn render_prompt(request: &GenerationRequest) -> String {
    PromptTemplates::builtin().render(request).to_text()
}
