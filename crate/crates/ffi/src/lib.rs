//! C ABI over `facilitator-core`.
//!
//! Every fallible function returns a [`CfStatus`]. On failure a message is
//! kept per thread and can be read with [`cf_last_error`]. Handles are
//! opaque pointers that must be released with their matching `_free`
//! function; strings returned through out-parameters are owned by the
//! caller and released with [`cf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use facilitator_core::analytics::{self, AnalyticsError, IterationCurvePoint};
use facilitator_core::domain::{self, transcript, Phase, Session, Strategy};
use facilitator_core::embedding::{Embedder, EmbeddingVector, HashingEncoder};
use facilitator_core::llm;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Parse = 4,
    Embedding = 5,
    NotFound = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfPhase {
    CollectingOpinions = 0,
    Synthesizing = 1,
    AwaitingVerdicts = 2,
    CollectingFeedback = 3,
    SelectingStrategy = 4,
    ConsensusReached = 5,
    EndedNoConsensus = 6,
}

impl From<Phase> for CfPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::CollectingOpinions => CfPhase::CollectingOpinions,
            Phase::Synthesizing => CfPhase::Synthesizing,
            Phase::AwaitingVerdicts => CfPhase::AwaitingVerdicts,
            Phase::CollectingFeedback => CfPhase::CollectingFeedback,
            Phase::SelectingStrategy => CfPhase::SelectingStrategy,
            Phase::ConsensusReached => CfPhase::ConsensusReached,
            Phase::EndedNoConsensus => CfPhase::EndedNoConsensus,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStrategy {
    ClarifyUnderstanding = 0,
    HighlightCommonGround = 1,
    ProposeCompromise = 2,
    ReframeQuestion = 3,
    SummarizeDiscussion = 4,
}

impl From<Strategy> for CfStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::ClarifyUnderstanding => CfStrategy::ClarifyUnderstanding,
            Strategy::HighlightCommonGround => CfStrategy::HighlightCommonGround,
            Strategy::ProposeCompromise => CfStrategy::ProposeCompromise,
            Strategy::ReframeQuestion => CfStrategy::ReframeQuestion,
            Strategy::SummarizeDiscussion => CfStrategy::SummarizeDiscussion,
        }
    }
}

/// Local hashing encoder.
pub struct CfEmbedder {
    inner: HashingEncoder,
}

/// A session rebuilt from a transcript.
pub struct CfSession {
    session: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CfStatus, String);

impl Failure {
    fn new(status: CfStatus, message: impl Into<String>) -> Self {
        Failure(status, message.into())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CfStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".to_owned());
            CfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(CfStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(CfStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn vector(values: &[f64], name: &str) -> Result<EmbeddingVector, Failure> {
    EmbeddingVector::new(values.to_vec()).map_err(|e| Failure::new(CfStatus::InvalidArgument, format!("{name}: {e}")))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure::new(CfStatus::InvalidArgument, e.to_string()))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn cf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_cosine_similarity(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> CfStatus {
    guard(|| {
        non_null(out, "out")?;
        let a = vector(read_slice(a, len, "a")?, "a")?;
        let b = vector(read_slice(b, len, "b")?, "b")?;
        let v = analytics::cosine_similarity(&a, &b).map_err(|e| {
            let status = match e {
                AnalyticsError::ZeroVector | AnalyticsError::DimensionMismatch { .. } => CfStatus::InvalidArgument,
                _ => CfStatus::Embedding,
            };
            Failure::new(status, e.to_string())
        })?;
        *out = v;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_embedder_new_local(dimension: usize, out: *mut *mut CfEmbedder) -> CfStatus {
    guard(|| {
        non_null(out, "out")?;
        if dimension < 2 {
            return Err(Failure::new(CfStatus::InvalidArgument, "dimension must be at least 2"));
        }
        *out = Box::into_raw(Box::new(CfEmbedder {
            inner: HashingEncoder::new(dimension),
        }));
        Ok(())
    })
}

/// # Safety
/// `embedder` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_embedder_dimension(embedder: *const CfEmbedder) -> usize {
    embedder.as_ref().map_or(0, |e| e.inner.dimension())
}

/// Writes the embedding of `text` into `buf`, which must hold
/// `cf_embedder_dimension(embedder)` doubles.
///
/// # Safety
/// `embedder` must be a live handle, `text` a NUL-terminated string and
/// `buf` writable for `buf_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_embedder_embed(
    embedder: *const CfEmbedder,
    text: *const c_char,
    buf: *mut f64,
    buf_len: usize,
) -> CfStatus {
    guard(|| {
        non_null(embedder, "embedder")?;
        non_null(buf, "buf")?;
        let text = read_str(text, "text")?;
        let e = &(*embedder).inner;
        if buf_len < e.dimension() {
            return Err(Failure::new(
                CfStatus::BufferTooSmall,
                format!("buffer holds {buf_len} values, need {}", e.dimension()),
            ));
        }
        let v = e.embed(text).map_err(|err| Failure::new(CfStatus::Embedding, err.to_string()))?;
        std::slice::from_raw_parts_mut(buf, v.dimension()).copy_from_slice(v.values());
        Ok(())
    })
}

/// # Safety
/// `embedder` must be null or a handle from [`cf_embedder_new_local`].
#[no_mangle]
pub unsafe extern "C" fn cf_embedder_free(embedder: *mut CfEmbedder) {
    if !embedder.is_null() {
        drop(Box::from_raw(embedder));
    }
}

/// Parses a JSONL transcript and replays it.
///
/// # Safety
/// `jsonl` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_transcript_replay(jsonl: *const c_char, out: *mut *mut CfSession) -> CfStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = read_str(jsonl, "jsonl")?;
        let events = transcript::parse_str(text).map_err(|e| Failure::new(CfStatus::Parse, e.to_string()))?;
        let session = domain::replay(&events).map_err(|e| Failure::new(CfStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(CfSession { session }));
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_session_phase(session: *const CfSession, out: *mut CfPhase) -> CfStatus {
    guard(|| {
        non_null(session, "session")?;
        non_null(out, "out")?;
        *out = (*session).session.phase.into();
        Ok(())
    })
}

/// Number of proposals issued so far.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_session_iterations(session: *const CfSession, out: *mut u32) -> CfStatus {
    guard(|| {
        non_null(session, "session")?;
        non_null(out, "out")?;
        *out = (*session).session.iteration_count();
        Ok(())
    })
}

/// Returns `NotFound` when the session has not reached consensus.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_session_consensus_iteration(session: *const CfSession, out: *mut u32) -> CfStatus {
    guard(|| {
        non_null(session, "session")?;
        non_null(out, "out")?;
        let k = (*session)
            .session
            .consensus_iteration()
            .ok_or_else(|| Failure::new(CfStatus::NotFound, "no consensus"))?;
        *out = k;
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle; `out` must be writable. The string
/// written to `out` must be released with [`cf_string_free`].
#[no_mangle]
pub unsafe extern "C" fn cf_session_to_json(session: *const CfSession, out: *mut *mut c_char) -> CfStatus {
    guard(|| {
        non_null(session, "session")?;
        non_null(out, "out")?;
        let json = serde_json::to_string(&(*session).session)
            .map_err(|e| Failure::new(CfStatus::InvalidArgument, e.to_string()))?;
        *out = owned_string(json)?;
        Ok(())
    })
}

/// # Safety
/// `session` must be null or a handle from [`cf_transcript_replay`].
#[no_mangle]
pub unsafe extern "C" fn cf_session_free(session: *mut CfSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Finds the elbow of a curve of mean similarities, where `means[i]` belongs
/// to iteration `i + 1`. Writes 0 to `out` when there is none.
///
/// # Safety
/// `means` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_detect_elbow(means: *const f64, len: usize, threshold: f64, out: *mut u32) -> CfStatus {
    guard(|| {
        non_null(out, "out")?;
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(Failure::new(CfStatus::InvalidArgument, "threshold must be a non-negative number"));
        }
        let means = read_slice(means, len, "means")?;
        if let Some(i) = means.iter().position(|m| !m.is_finite()) {
            return Err(Failure::new(CfStatus::InvalidArgument, format!("means[{i}] is not finite")));
        }
        let curve: Vec<IterationCurvePoint> = means
            .iter()
            .enumerate()
            .map(|(i, &m)| IterationCurvePoint::new(i as u32 + 1, m, 1))
            .collect();
        *out = analytics::detect_elbow(&curve, threshold).unwrap_or(0);
        Ok(())
    })
}

/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_parse_strategy(text: *const c_char, out: *mut CfStrategy) -> CfStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = read_str(text, "text")?;
        let s = llm::parse_strategy(text).map_err(|e| Failure::new(CfStatus::Parse, e.to_string()))?;
        *out = s.into();
        Ok(())
    })
}

/// Canonical name of a strategy as a static string.
#[no_mangle]
pub extern "C" fn cf_strategy_name(strategy: CfStrategy) -> *const c_char {
    let name: &'static CStr = match strategy {
        CfStrategy::ClarifyUnderstanding => c"ClarifyUnderstanding",
        CfStrategy::HighlightCommonGround => c"HighlightCommonGround",
        CfStrategy::ProposeCompromise => c"ProposeCompromise",
        CfStrategy::ReframeQuestion => c"ReframeQuestion",
        CfStrategy::SummarizeDiscussion => c"SummarizeDiscussion",
    };
    name.as_ptr()
}
