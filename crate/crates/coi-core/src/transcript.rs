//! Transcript data model: ingestion of line-delimited session records,
//! text normalization, quality validation, windowing into data entries, and
//! corpus statistics.
//!
//! A corpus is one UTF-8 file, or a directory of per-session files, with one
//! utterance record per line. Sessions with annotation problems are rejected
//! with an itemized [`ValidationReport`] rather than silently dropped.
//! Accepted sessions are segmented into fixed-size, non-overlapping windows;
//! each window's gold label is the code of its last gold-coded patient
//! utterance.

use crate::labels::{PatientCode, SubCode, TherapistCode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use thiserror::Error;

/// Speaker role of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Therapist,
    Patient,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Therapist => "therapist",
            Speaker::Patient => "patient",
        }
    }
}

/// A single utterance within a session. Text is stored normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: u64,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_patient_code: Option<PatientCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_subcode: Option<SubCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_therapist_code: Option<TherapistCode>,
}

/// An ordered therapy session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    pub utterances: Vec<Utterance>,
}

/// Identity of a window within a corpus: `(session_id, window_index)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowId {
    pub session_id: String,
    pub window_index: u32,
}

impl fmt::Display for WindowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.session_id, self.window_index)
    }
}

/// A data entry: a fixed-size group of consecutive utterances, labeled by
/// the last gold-coded patient utterance it contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub session_id: String,
    pub window_index: u32,
    pub utterances: Vec<Utterance>,
    pub gold_label: PatientCode,
    /// `index` of the utterance that supplied the gold label.
    pub gold_label_position: u64,
}

impl Window {
    pub fn id(&self) -> WindowId {
        WindowId {
            session_id: self.session_id.clone(),
            window_index: self.window_index,
        }
    }

    /// Render the window as dialogue lines, `therapist: ...` / `patient: ...`,
    /// in order.
    pub fn render_dialogue(&self) -> String {
        let mut out = String::new();
        for utt in &self.utterances {
            out.push_str(utt.speaker.as_str());
            out.push_str(": ");
            out.push_str(&utt.text);
            out.push('\n');
        }
        out
    }
}

/// Why a session failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationReason {
    MissingCode,
    MalformedRow,
    EmptyText,
    NonAlternatingUnknownSpeaker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Accepted,
    Rejected,
}

/// Per-session validation outcome. `Rejected` exactly when `reasons` is
/// non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub session_id: String,
    pub status: ValidationStatus,
    pub reasons: Vec<ValidationReason>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("format error at {file}:{line}: {reason}")]
    Format {
        file: String,
        line: usize,
        reason: String,
    },
}

/// One line of the corpus file, before validation.
#[derive(Debug, Clone, Deserialize)]
struct RawRecord {
    session_id: String,
    index: u64,
    speaker: String,
    text: String,
    #[serde(default)]
    patient_code: Option<String>,
    #[serde(default)]
    subcode: Option<String>,
    #[serde(default)]
    therapist_code: Option<String>,
    #[serde(default)]
    meta: Option<BTreeMap<String, String>>,
}

/// Result of corpus ingestion: accepted sessions, plus one validation
/// report per source session so that every record is accounted for.
#[derive(Debug, Clone)]
pub struct ParsedCorpus {
    pub sessions: Vec<Session>,
    pub reports: Vec<ValidationReport>,
}

impl ParsedCorpus {
    pub fn accepted_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn rejected_count(&self) -> usize {
        self.reports
            .iter()
            .filter(|r| r.status == ValidationStatus::Rejected)
            .count()
    }
}

/// Lower-case, trim, and collapse internal whitespace runs to single
/// spaces. Idempotent.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut first = true;
    for word in text.split_whitespace() {
        if !first {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
        first = false;
    }
    out
}

/// Parse a corpus from a file, or from a directory of `.jsonl` files read in
/// name order.
pub fn parse_corpus(path: &Path) -> Result<ParsedCorpus, TranscriptError> {
    let meta = fs::metadata(path).map_err(|source| TranscriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut builder = CorpusBuilder::default();
    if meta.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(|source| TranscriptError::Io {
                path: path.display().to_string(),
                source,
            })?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .map(|ext| ext == "jsonl" || ext == "ndjson")
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        for file in files {
            parse_file_into(&file, &mut builder)?;
        }
    } else {
        parse_file_into(path, &mut builder)?;
    }
    Ok(builder.finish())
}

/// Parse corpus records from any reader. The `source_name` is used in error
/// messages only.
pub fn parse_corpus_reader<R: Read>(
    reader: R,
    source_name: &str,
) -> Result<ParsedCorpus, TranscriptError> {
    let mut builder = CorpusBuilder::default();
    read_records(reader, source_name, &mut builder)?;
    Ok(builder.finish())
}

fn parse_file_into(path: &Path, builder: &mut CorpusBuilder) -> Result<(), TranscriptError> {
    let file = fs::File::open(path).map_err(|source| TranscriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_records(BufReader::new(file), &path.display().to_string(), builder)
}

fn read_records<R: Read>(
    reader: R,
    source_name: &str,
    builder: &mut CorpusBuilder,
) -> Result<(), TranscriptError> {
    let reader = BufReader::new(reader);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| TranscriptError::Io {
            path: source_name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(&line).map_err(|e| TranscriptError::Format {
                file: source_name.to_string(),
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        builder.push(record);
    }
    Ok(())
}

/// Accumulates raw records into sessions, validating as it goes. Sessions
/// are keyed by `session_id` and kept in first-seen order.
#[derive(Default)]
struct CorpusBuilder {
    order: Vec<String>,
    sessions: BTreeMap<String, SessionBuilder>,
}

#[derive(Default)]
struct SessionBuilder {
    metadata: BTreeMap<String, String>,
    utterances: Vec<Utterance>,
    reasons: Vec<ValidationReason>,
    last_index: Option<u64>,
}

impl SessionBuilder {
    fn flag(&mut self, reason: ValidationReason) {
        if !self.reasons.contains(&reason) {
            self.reasons.push(reason);
        }
    }
}

impl CorpusBuilder {
    fn push(&mut self, record: RawRecord) {
        if !self.sessions.contains_key(&record.session_id) {
            self.order.push(record.session_id.clone());
            self.sessions
                .insert(record.session_id.clone(), SessionBuilder::default());
        }
        let session = self.sessions.get_mut(&record.session_id).unwrap();

        if let Some(meta) = record.meta {
            session.metadata.extend(meta);
        }

        let speaker = match record.speaker.trim().to_lowercase().as_str() {
            "therapist" => Some(Speaker::Therapist),
            "patient" => Some(Speaker::Patient),
            _ => {
                session.flag(ValidationReason::NonAlternatingUnknownSpeaker);
                None
            }
        };

        let text = normalize(&record.text);
        if text.is_empty() {
            session.flag(ValidationReason::EmptyText);
        }

        if let Some(last) = session.last_index {
            if record.index <= last {
                session.flag(ValidationReason::MalformedRow);
            }
        }
        session.last_index = Some(record.index);

        let gold_patient_code = match &record.patient_code {
            Some(raw) => match raw.parse_as_patient_code() {
                Some(code) => Some(code),
                None => {
                    session.flag(ValidationReason::MalformedRow);
                    None
                }
            },
            None => None,
        };
        let gold_subcode = match &record.subcode {
            Some(raw) => match raw.parse::<SubCode>() {
                Ok(sub) => Some(sub),
                Err(_) => {
                    session.flag(ValidationReason::MalformedRow);
                    None
                }
            },
            None => None,
        };
        let gold_therapist_code = record.therapist_code.as_deref().map(TherapistCode::parse);

        match speaker {
            Some(Speaker::Patient) => {
                if gold_patient_code.is_none() {
                    session.flag(ValidationReason::MissingCode);
                }
                if let (Some(code), Some(sub)) = (gold_patient_code, gold_subcode) {
                    if sub.patient_code() != code {
                        session.flag(ValidationReason::MalformedRow);
                    }
                }
            }
            // A patient code on a therapist row is an annotation error.
            Some(Speaker::Therapist) if gold_patient_code.is_some() => {
                session.flag(ValidationReason::MalformedRow);
            }
            Some(Speaker::Therapist) | None => {}
        }

        session.utterances.push(Utterance {
            index: record.index,
            speaker: speaker.unwrap_or(Speaker::Therapist),
            text,
            gold_patient_code,
            gold_subcode,
            gold_therapist_code,
        });
    }

    fn finish(self) -> ParsedCorpus {
        let mut sessions = Vec::new();
        let mut reports = Vec::new();
        let mut builders = self.sessions;
        for session_id in self.order {
            let builder = builders.remove(&session_id).unwrap();
            let rejected = !builder.reasons.is_empty();
            reports.push(ValidationReport {
                session_id: session_id.clone(),
                status: if rejected {
                    ValidationStatus::Rejected
                } else {
                    ValidationStatus::Accepted
                },
                reasons: builder.reasons,
            });
            if !rejected {
                sessions.push(Session {
                    session_id,
                    metadata: builder.metadata,
                    utterances: builder.utterances,
                });
            }
        }
        ParsedCorpus { sessions, reports }
    }
}

trait PatientCodeParse {
    fn parse_as_patient_code(&self) -> Option<PatientCode>;
}

impl PatientCodeParse for String {
    fn parse_as_patient_code(&self) -> Option<PatientCode> {
        match crate::labels::parse_label_token(self) {
            Ok(crate::labels::LabelToken::Code(code)) => Some(code),
            _ => None,
        }
    }
}

/// Outcome of segmenting one session into windows.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    /// Full groups that contained no gold-coded patient utterance.
    pub skipped_groups: usize,
    /// Utterances in the trailing partial group, which is dropped.
    pub dropped_remainder: usize,
}

/// Segment an accepted session into consecutive, non-overlapping groups of
/// `window_size` utterances. The trailing partial group is dropped. Groups
/// with no gold-coded patient utterance are skipped and tallied; every
/// emitted window is labeled by its last gold-coded patient utterance.
pub fn segment_windows(session: &Session, window_size: usize) -> WindowSet {
    assert!(window_size > 0, "window_size must be positive");
    let mut set = WindowSet {
        dropped_remainder: session.utterances.len() % window_size,
        ..WindowSet::default()
    };
    let mut window_index = 0u32;
    for group in session.utterances.chunks_exact(window_size) {
        let gold = group
            .iter()
            .rev()
            .find(|u| u.speaker == Speaker::Patient && u.gold_patient_code.is_some());
        match gold {
            Some(utt) => {
                set.windows.push(Window {
                    session_id: session.session_id.clone(),
                    window_index,
                    utterances: group.to_vec(),
                    gold_label: utt.gold_patient_code.unwrap(),
                    gold_label_position: utt.index,
                });
                window_index += 1;
            }
            None => set.skipped_groups += 1,
        }
    }
    set
}

/// Summary statistics over a corpus of sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub session_count: u64,
    pub utterance_count: u64,
    pub count_per_patient_code: CodeCounts,
    /// Mean whitespace-delimited token count per utterance, over all
    /// utterances.
    pub avg_tokens_per_utterance: f64,
    pub avg_utterances_per_session: f64,
    /// True when the corpus has no sessions; averages are reported as 0.
    pub empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CodeCounts {
    pub change_talk: u64,
    pub follow_neutral: u64,
    pub sustain_talk: u64,
}

impl CodeCounts {
    pub fn get(&self, code: PatientCode) -> u64 {
        match code {
            PatientCode::ChangeTalk => self.change_talk,
            PatientCode::FollowNeutral => self.follow_neutral,
            PatientCode::SustainTalk => self.sustain_talk,
        }
    }

    fn bump(&mut self, code: PatientCode) {
        match code {
            PatientCode::ChangeTalk => self.change_talk += 1,
            PatientCode::FollowNeutral => self.follow_neutral += 1,
            PatientCode::SustainTalk => self.sustain_talk += 1,
        }
    }
}

/// Compute corpus statistics. Token counting is whitespace splitting over
/// the already-normalized text; averages are arithmetic means.
pub fn corpus_stats(sessions: &[Session]) -> Stats {
    let mut utterance_count = 0u64;
    let mut token_total = 0u64;
    let mut counts = CodeCounts::default();
    for session in sessions {
        for utt in &session.utterances {
            utterance_count += 1;
            token_total += utt.text.split_whitespace().count() as u64;
            if let Some(code) = utt.gold_patient_code {
                counts.bump(code);
            }
        }
    }
    let session_count = sessions.len() as u64;
    let empty = session_count == 0;
    Stats {
        session_count,
        utterance_count,
        count_per_patient_code: counts,
        avg_tokens_per_utterance: if utterance_count == 0 {
            0.0
        } else {
            token_total as f64 / utterance_count as f64
        },
        avg_utterances_per_session: if empty {
            0.0
        } else {
            utterance_count as f64 / session_count as f64
        },
        empty,
    }
}

impl Stats {
    /// Render the statistics as a small fixed-width table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<28} {:>12}\n", "sessions", self.session_count));
        out.push_str(&format!("{:<28} {:>12}\n", "utterances", self.utterance_count));
        out.push_str(&format!(
            "{:<28} {:>12}\n",
            "  change talk", self.count_per_patient_code.change_talk
        ));
        out.push_str(&format!(
            "{:<28} {:>12}\n",
            "  follow/neutral", self.count_per_patient_code.follow_neutral
        ));
        out.push_str(&format!(
            "{:<28} {:>12}\n",
            "  sustain talk", self.count_per_patient_code.sustain_talk
        ));
        out.push_str(&format!(
            "{:<28} {:>12.1}\n",
            "avg tokens / utterance", self.avg_tokens_per_utterance
        ));
        out.push_str(&format!(
            "{:<28} {:>12.1}\n",
            "avg utterances / session", self.avg_utterances_per_session
        ));
        if self.empty {
            out.push_str("(empty corpus)\n");
        }
        out
    }
}
