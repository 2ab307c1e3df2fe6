//! Batch analysis over a directory of transcripts, and the text summary
//! printed by `facilitator replay`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::export::{self, fmt6};
use crate::analytics::{
    aggregate, aggregate_nested, cases_per_iteration, curve_from_records, detect_elbow, initial_final_alignment,
    iteration_records, AggregateReport, AnalyticsError, CasesHistogram, IterationCurvePoint, NestedReport,
    SimilarityRecord,
};
use crate::domain::{transcript, EndReason, Phase, Session, SessionEvent};
use crate::embedding::Embedder;

/// Label used for the curve pooled over every model.
pub const ALL_MODELS: &str = "all";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadedTranscript {
    pub path: PathBuf,
    pub events: Vec<SessionEvent>,
    pub session: Session,
}

/// `*.jsonl` files directly inside `dir`, sorted by name. Intent journals
/// are skipped.
pub fn discover(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.is_file() && name.ends_with(".jsonl") && !name.ends_with(".intents.jsonl") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Parses and replays every file, in parallel; results keep input order.
pub fn load_all(paths: &[PathBuf]) -> (Vec<LoadedTranscript>, Vec<FileError>) {
    let results: Vec<_> = paths
        .par_iter()
        .map(|path| {
            transcript::load(path)
                .map(|(events, session)| LoadedTranscript {
                    path: path.clone(),
                    events,
                    session,
                })
                .map_err(|e| FileError {
                    path: path.clone(),
                    message: e.to_string(),
                })
        })
        .collect();
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(t) => ok.push(t),
            Err(e) => errors.push(e),
        }
    }
    (ok, errors)
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub sessions: usize,
    pub consensus_sessions: usize,
    /// Initial opinion against accepted proposal, consensus sessions only.
    pub occasions: Vec<SimilarityRecord>,
    /// Initial opinion against every proposal, all sessions.
    pub iteration_records: Vec<SimilarityRecord>,
    pub by_model: AggregateReport,
    pub by_topic_model: NestedReport,
    /// Keyed by model id, plus [`ALL_MODELS`].
    pub curves: BTreeMap<String, Vec<IterationCurvePoint>>,
    pub elbows: BTreeMap<String, Option<u32>>,
    pub cases: CasesHistogram,
    pub clamp_events: usize,
    pub errors: Vec<FileError>,
}

struct PerSession {
    occasions: Vec<SimilarityRecord>,
    iterations: Vec<SimilarityRecord>,
}

fn analyze_one(t: &LoadedTranscript, embedder: &dyn Embedder) -> Result<PerSession, AnalyticsError> {
    let s = &t.session;
    let occasions = match initial_final_alignment(s, embedder) {
        Ok(r) => r,
        Err(AnalyticsError::NoConsensus(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    let iterations = match iteration_records(s, embedder) {
        Ok(r) => r,
        Err(AnalyticsError::NoProposal(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    Ok(PerSession { occasions, iterations })
}

pub fn analyze(transcripts: &[LoadedTranscript], embedder: &dyn Embedder, elbow_threshold: f64) -> Analysis {
    let results: Vec<_> = transcripts.par_iter().map(|t| analyze_one(t, embedder)).collect();
    let mut occasions = Vec::new();
    let mut iteration_recs = Vec::new();
    let mut sessions = Vec::new();
    let mut errors = Vec::new();
    for (t, r) in transcripts.iter().zip(results) {
        match r {
            Ok(p) => {
                occasions.extend(p.occasions);
                iteration_recs.extend(p.iterations);
                sessions.push(t.session.clone());
            }
            Err(e) => errors.push(FileError {
                path: t.path.clone(),
                message: e.to_string(),
            }),
        }
    }

    let by_model = aggregate(&occasions, |r| r.llm_provider_id.clone());
    let by_topic_model = aggregate_nested(&occasions, |r| r.sdg_tag, |r| r.llm_provider_id.clone());
    let mut curves = BTreeMap::new();
    curves.insert(ALL_MODELS.to_owned(), curve_from_records(&iteration_recs));
    let mut by_provider: BTreeMap<String, Vec<SimilarityRecord>> = BTreeMap::new();
    for r in &iteration_recs {
        by_provider.entry(r.llm_provider_id.clone()).or_default().push(r.clone());
    }
    for (model, recs) in by_provider {
        curves.insert(model, curve_from_records(&recs));
    }
    let elbows = curves
        .iter()
        .map(|(k, c)| (k.clone(), detect_elbow(c, elbow_threshold)))
        .collect();
    let cases = cases_per_iteration(&sessions, &occasions);
    let clamp_events = occasions.iter().chain(&iteration_recs).filter(|r| r.clamped).count();

    Analysis {
        sessions: sessions.len(),
        consensus_sessions: sessions.iter().filter(|s| s.consensus_iteration().is_some()).count(),
        occasions,
        iteration_records: iteration_recs,
        by_model,
        by_topic_model,
        curves,
        elbows,
        cases,
        clamp_events,
        errors,
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn write_curves(curves: &BTreeMap<String, Vec<IterationCurvePoint>>, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["model", "iteration", "mean_similarity", "mean_diff_from_unity", "n"]).map_err(csv_err)?;
    for (model, curve) in curves {
        for p in curve {
            w.write_record([
                model.clone(),
                p.iteration_index.to_string(),
                fmt6(p.mean_similarity),
                fmt6(p.mean_diff_from_unity),
                p.n.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()
}

fn write_occasions(records: &[SimilarityRecord], path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["session_id", "participant_id", "model", "topic", "iteration", "similarity"]).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.session_id.to_string(),
            r.participant_id.to_string(),
            r.llm_provider_id.clone(),
            r.sdg_tag.name().to_owned(),
            r.iteration_index.to_string(),
            fmt6(r.value),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

fn write_elbows(elbows: &BTreeMap<String, Option<u32>>, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["model", "elbow_iteration"]).map_err(csv_err)?;
    for (model, e) in elbows {
        let v = e.map(|k| k.to_string()).unwrap_or_else(|| "none".to_owned());
        w.write_record([model.as_str(), &v]).map_err(csv_err)?;
    }
    w.flush()
}

/// Output files written by [`write_outputs`], relative to the output dir.
pub const OUTPUT_FILES: [&str; 8] = [
    "by_model.csv",
    "by_topic_model.csv",
    "iteration_curve.csv",
    "iteration_curve_by_model.csv",
    "cases_per_iteration.csv",
    "elbow.csv",
    "occasions.csv",
    "report.md",
];

pub fn write_outputs(a: &Analysis, out: &Path) -> io::Result<()> {
    std::fs::create_dir_all(out)?;
    let file = |name: &str| std::fs::File::create(out.join(name));
    export::write_report_csv(&a.by_model, file("by_model.csv")?)?;
    export::write_nested_csv(&a.by_topic_model, file("by_topic_model.csv")?)?;
    export::write_curve_csv(&a.curves[ALL_MODELS], file("iteration_curve.csv")?)?;
    write_curves(&a.curves, &out.join("iteration_curve_by_model.csv"))?;
    export::write_cases_csv(&a.cases, file("cases_per_iteration.csv")?)?;
    write_elbows(&a.elbows, &out.join("elbow.csv"))?;
    write_occasions(&a.occasions, &out.join("occasions.csv"))?;
    std::fs::write(out.join("report.md"), report_markdown(a))
}

pub fn report_markdown(a: &Analysis) -> String {
    let mut s = String::from("# Alignment report\n\n");
    let _ = writeln!(
        s,
        "{} sessions analysed, {} reached consensus, {} occasions.\n",
        a.sessions,
        a.consensus_sessions,
        a.occasions.len()
    );
    s.push_str(&export::report_markdown("Average cosine similarity per model", "LLM", &a.by_model));
    s.push('\n');
    s.push_str(&export::nested_markdown(
        "Average cosine similarity per topic and model",
        "Topic",
        "LLM",
        &a.by_topic_model,
    ));
    s.push_str("\n### Consensus iteration\n\n| Iteration | Occasions |\n|---:|---:|\n");
    for (k, n) in &a.cases.counts {
        let _ = writeln!(s, "| {k} | {n} |");
    }
    let _ = writeln!(s, "\nSessions without consensus: {}\n", a.cases.no_consensus_sessions);
    s.push_str("### Elbow\n\n| Model | Iteration |\n|---|---:|\n");
    for (m, e) in &a.elbows {
        let v = e.map(|k| k.to_string()).unwrap_or_else(|| "none".to_owned());
        let _ = writeln!(s, "| {m} | {v} |");
    }
    if a.clamp_events > 0 {
        let _ = writeln!(s, "\n{} similarity values were clamped into [-1, 1].", a.clamp_events);
    }
    s
}

/// Human-readable account of one session. The last line states the outcome.
pub fn summarize(session: &Session) -> String {
    let mut s = String::new();
    let name_of = |id: &crate::domain::ParticipantId| {
        session
            .participant(id)
            .map(|p| format!("{} ({})", p.display_name, id))
            .unwrap_or_else(|| id.to_string())
    };
    let _ = writeln!(s, "Session {}", session.id);
    let _ = writeln!(
        s,
        "Question {} [{}]: {}",
        session.question.id,
        session.question.sdg_tag.label(),
        session.question.text
    );
    let _ = writeln!(s, "Facilitator: {}", session.llm_provider_id);
    let names: Vec<_> = session.participants.iter().map(|p| name_of(&p.id)).collect();
    let _ = writeln!(s, "Participants: {}", names.join(", "));
    for o in &session.opinions {
        let _ = writeln!(s, "Opinion of {}: {}", name_of(&o.participant_id), o.text);
    }
    for it in &session.iterations {
        let _ = writeln!(s, "\nIteration {}", it.index());
        let strategy = it.proposal.strategy_used.map(|x| x.name()).unwrap_or("initial synthesis");
        let _ = writeln!(s, "  Strategy: {strategy}");
        let _ = writeln!(s, "  Proposal: {}", it.proposal.text);
        for v in &it.verdicts {
            let verdict = if v.accept { "accept" } else { "reject" };
            let _ = writeln!(s, "  Verdict of {}: {verdict}", name_of(&v.participant_id));
        }
        for f in &it.feedbacks {
            let _ = writeln!(s, "  Feedback of {}: {}", name_of(&f.participant_id), f.text);
        }
    }
    s.push('\n');
    let outcome = match (session.phase, session.end_reason) {
        (Phase::ConsensusReached, _) => {
            format!("consensus at iteration {}", session.iteration_count())
        }
        (Phase::EndedNoConsensus, Some(EndReason::IterationCap)) => {
            format!("no consensus after {} iterations (iteration cap)", session.iteration_count())
        }
        (Phase::EndedNoConsensus, _) => {
            format!("no consensus, ended by timeout after {} iterations", session.iteration_count())
        }
        (phase, _) => format!("still open in phase {phase}"),
    };
    let _ = writeln!(s, "Outcome: {outcome}");
    s
}
