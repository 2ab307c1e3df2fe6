use std::path::Path;

use crate::domain::{DomainError, Question, QuestionId, SdgTag};

const BUILTIN: [(&str, &str, SdgTag); 6] = [
    (
        "Q1",
        "Should patients with a healthy lifestyle be prioritized in healthcare provision compared to those who choose a lifestyle that increases the risk of serious conditions?",
        SdgTag::GoodHealthWellBeing,
    ),
    (
        "Q2",
        "Should international collaborations be strengthened to address pandemics like COVID-19, or would it be better to focus on national strategies to protect public health?",
        SdgTag::GoodHealthWellBeing,
    ),
    (
        "Q3",
        "Should priority be given to the integration of digital technologies in education to better prepare students for the modern age, or should we focus more on strengthening basic skills in literacy and numeracy?",
        SdgTag::QualityEducation,
    ),
    (
        "Q4",
        "Should educational policy place greater emphasis on personalized learning and support for students with different learning needs, or is it more important to maintain uniform standards and approaches for all students?",
        SdgTag::QualityEducation,
    ),
    (
        "Q5",
        "Should global cooperation be strengthened to improve access to clean drinking water and sanitation services, or is it better to tailor policies to the specific needs of each region?",
        SdgTag::CleanWaterSanitation,
    ),
    (
        "Q6",
        "Should economically disadvantaged countries adopt stricter policies to reduce carbon dioxide emissions, or should greater emphasis be placed on adaptation and the resilience of societies to climate change?",
        SdgTag::ClimateAction,
    ),
];

#[derive(Debug, thiserror::Error)]
pub enum QuestionBankError {
    #[error("question {0} already exists")]
    Duplicate(QuestionId),
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error("cannot persist questions: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse questions file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// The six preloaded discussion questions plus any added at runtime.
#[derive(Debug, Clone)]
pub struct QuestionBank {
    questions: Vec<Question>,
}

impl Default for QuestionBank {
    fn default() -> Self {
        Self::builtin()
    }
}

impl QuestionBank {
    pub fn builtin() -> Self {
        let questions = BUILTIN
            .iter()
            .map(|(id, text, tag)| Question::new(*id, *text, *tag).expect("builtin question is valid"))
            .collect();
        Self { questions }
    }

    /// Builtin questions followed by those stored in `path`, if it exists.
    pub fn load_with_extra(path: &Path) -> Result<Self, QuestionBankError> {
        let mut bank = Self::builtin();
        if path.exists() {
            let extra: Vec<Question> = serde_json::from_slice(&std::fs::read(path)?)?;
            for q in extra {
                bank.add(q)?;
            }
        }
        Ok(bank)
    }

    pub fn all(&self) -> &[Question] {
        &self.questions
    }

    pub fn get(&self, id: &QuestionId) -> Option<&Question> {
        self.questions.iter().find(|q| &q.id == id)
    }

    pub fn add(&mut self, question: Question) -> Result<(), QuestionBankError> {
        question.validate()?;
        if self.get(&question.id).is_some() {
            return Err(QuestionBankError::Duplicate(question.id));
        }
        self.questions.push(question);
        Ok(())
    }

    /// Questions beyond the builtin six.
    pub fn extra(&self) -> &[Question] {
        &self.questions[BUILTIN.len()..]
    }

    pub fn save_extra(&self, path: &Path) -> Result<(), QuestionBankError> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self.extra())?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}
