use crate::domain::Strategy;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("no single strategy name found in {text:?}")]
pub struct UnrecognizedStrategy {
    pub text: String,
}

/// Extracts a strategy from free-form model output.
///
/// Matching is case-insensitive on whole words, where anything that is not
/// alphanumeric separates words. Exactly one distinct strategy name must
/// appear.
pub fn parse_strategy(text: &str) -> Result<Strategy, UnrecognizedStrategy> {
    let lowered = text.to_lowercase();
    let mut found: Option<Strategy> = None;
    for word in lowered.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let Some(s) = Strategy::ALL
            .into_iter()
            .find(|s| s.name().eq_ignore_ascii_case(word))
        else {
            continue;
        };
        match found {
            Some(prev) if prev != s => {
                return Err(UnrecognizedStrategy { text: text.to_owned() });
            }
            _ => found = Some(s),
        }
    }
    found.ok_or_else(|| UnrecognizedStrategy { text: text.to_owned() })
}
