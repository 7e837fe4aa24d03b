//! The MISC label taxonomy: patient codes, sub-codes, therapist MICO
//! categories, and the valence correspondence that turns behavioral coding
//! into valence coding.
//!
//! Patient utterances carry exactly one of three mutually exclusive codes
//! (change talk, follow/neutral, sustain talk). Each code corresponds to a
//! valence (positive, neutral, negative), and signed sub-codes resolve to a
//! code through their sign. The synonym table used for answer extraction is
//! fixed and shipped here so the core mapping stays auditable; extensions go
//! through the extraction config.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// One of the three mutually exclusive patient behavior codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientCode {
    ChangeTalk,
    FollowNeutral,
    SustainTalk,
}

/// Valence of a patient utterance toward changing the target behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Valence {
    Positive,
    Negative,
    Neutral,
}

impl PatientCode {
    /// Canonical label order used by confusion matrices and reports.
    pub const ALL: [PatientCode; 3] = [
        PatientCode::ChangeTalk,
        PatientCode::FollowNeutral,
        PatientCode::SustainTalk,
    ];

    /// Canonical string rendering used in files and reports.
    pub fn as_str(self) -> &'static str {
        match self {
            PatientCode::ChangeTalk => "change_talk",
            PatientCode::FollowNeutral => "follow_neutral",
            PatientCode::SustainTalk => "sustain_talk",
        }
    }

    /// Human-readable name as it appears in coding manuals.
    pub fn display_name(self) -> &'static str {
        match self {
            PatientCode::ChangeTalk => "Change Talk",
            PatientCode::FollowNeutral => "Follow/Neutral",
            PatientCode::SustainTalk => "Sustain Talk",
        }
    }

    /// The valence corresponding to this code: positive for change talk,
    /// negative for sustain talk, neutral for follow/neutral.
    pub fn valence(self) -> Valence {
        match self {
            PatientCode::ChangeTalk => Valence::Positive,
            PatientCode::FollowNeutral => Valence::Neutral,
            PatientCode::SustainTalk => Valence::Negative,
        }
    }

    /// Index into the canonical [`PatientCode::ALL`] order.
    pub fn index(self) -> usize {
        match self {
            PatientCode::ChangeTalk => 0,
            PatientCode::FollowNeutral => 1,
            PatientCode::SustainTalk => 2,
        }
    }
}

impl Valence {
    pub const ALL: [Valence; 3] = [Valence::Positive, Valence::Negative, Valence::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Valence::Positive => "positive",
            Valence::Negative => "negative",
            Valence::Neutral => "neutral",
        }
    }

    /// Inverse of [`PatientCode::valence`].
    pub fn patient_code(self) -> PatientCode {
        match self {
            Valence::Positive => PatientCode::ChangeTalk,
            Valence::Neutral => PatientCode::FollowNeutral,
            Valence::Negative => PatientCode::SustainTalk,
        }
    }
}

impl fmt::Display for PatientCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Valence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dimension of patient change language measured by signed sub-codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubCodeDimension {
    Commitment,
    Ability,
    Desire,
    Reason,
}

impl SubCodeDimension {
    pub const ALL: [SubCodeDimension; 4] = [
        SubCodeDimension::Commitment,
        SubCodeDimension::Ability,
        SubCodeDimension::Desire,
        SubCodeDimension::Reason,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubCodeDimension::Commitment => "commitment",
            SubCodeDimension::Ability => "ability",
            SubCodeDimension::Desire => "desire",
            SubCodeDimension::Reason => "reason",
        }
    }
}

/// Sign of a sub-code: `+` marks language toward change, `-` toward the
/// status quo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

/// A patient sub-code: a signed dimension, or none for follow/neutral
/// utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubCode {
    Signed {
        dimension: SubCodeDimension,
        sign: Sign,
    },
    None,
}

impl SubCode {
    pub fn signed(dimension: SubCodeDimension, sign: Sign) -> Self {
        SubCode::Signed { dimension, sign }
    }

    /// The patient code implied by this sub-code: `+` maps to change talk,
    /// `-` to sustain talk, none to follow/neutral.
    pub fn patient_code(self) -> PatientCode {
        match self {
            SubCode::Signed {
                sign: Sign::Plus, ..
            } => PatientCode::ChangeTalk,
            SubCode::Signed {
                sign: Sign::Minus, ..
            } => PatientCode::SustainTalk,
            SubCode::None => PatientCode::FollowNeutral,
        }
    }
}

impl fmt::Display for SubCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubCode::Signed { dimension, sign } => {
                let sign = match sign {
                    Sign::Plus => '+',
                    Sign::Minus => '-',
                };
                write!(f, "{}{}", dimension.as_str(), sign)
            }
            SubCode::None => f.write_str("none"),
        }
    }
}

impl FromStr for SubCode {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase();
        if norm == "none" || norm == "n/a" || norm == "na" {
            return Ok(SubCode::None);
        }
        let (dim_str, sign) = if let Some(d) = norm.strip_suffix('+') {
            (d, Sign::Plus)
        } else if let Some(d) = norm.strip_suffix('-') {
            (d, Sign::Minus)
        } else {
            return Err(LabelError::Unrecognized(s.to_string()));
        };
        let dimension = match dim_str.trim() {
            "commitment" => SubCodeDimension::Commitment,
            "ability" => SubCodeDimension::Ability,
            "desire" => SubCodeDimension::Desire,
            "reason" => SubCodeDimension::Reason,
            _ => return Err(LabelError::Unrecognized(s.to_string())),
        };
        Ok(SubCode::Signed { dimension, sign })
    }
}

impl Serialize for SubCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SubCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Therapist MICO category. The coding manual set is larger than the eight
/// categories seeded here, so unrecognized labels are preserved verbatim in
/// [`TherapistCode::Other`] rather than rejected.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TherapistCode {
    ClosedQuestion,
    OpenQuestion,
    Support,
    Structure,
    GiveInformation,
    Warn,
    EmphasizeControl,
    Direct,
    Other(String),
}

impl TherapistCode {
    /// Parse a therapist code, ignoring case and whitespace/punctuation
    /// between words. Unrecognized text is kept verbatim in `Other`.
    pub fn parse(text: &str) -> TherapistCode {
        let key: String = text
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match key.as_str() {
            "closedquestion" => TherapistCode::ClosedQuestion,
            "openquestion" => TherapistCode::OpenQuestion,
            "support" => TherapistCode::Support,
            "structure" => TherapistCode::Structure,
            "giveinformation" => TherapistCode::GiveInformation,
            "warn" => TherapistCode::Warn,
            "emphasizecontrol" => TherapistCode::EmphasizeControl,
            "direct" => TherapistCode::Direct,
            _ => TherapistCode::Other(text.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            TherapistCode::ClosedQuestion => "closed_question",
            TherapistCode::OpenQuestion => "open_question",
            TherapistCode::Support => "support",
            TherapistCode::Structure => "structure",
            TherapistCode::GiveInformation => "give_information",
            TherapistCode::Warn => "warn",
            TherapistCode::EmphasizeControl => "emphasize_control",
            TherapistCode::Direct => "direct",
            TherapistCode::Other(text) => text,
        }
    }
}

impl fmt::Display for TherapistCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TherapistCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TherapistCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(TherapistCode::parse(&s))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("unrecognized label token: {0:?}")]
    Unrecognized(String),
}

/// A token that names either a patient code or a valence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelToken {
    Code(PatientCode),
    Valence(Valence),
}

impl LabelToken {
    /// The valence named by this token, mapping codes through their
    /// correspondence.
    pub fn valence(self) -> Valence {
        match self {
            LabelToken::Code(c) => c.valence(),
            LabelToken::Valence(v) => v,
        }
    }
}

/// Synonyms recognized as valence answers, paired with their meaning.
pub const VALENCE_SYNONYMS: &[(&str, Valence)] = &[
    ("positive", Valence::Positive),
    ("negative", Valence::Negative),
    ("neutral", Valence::Neutral),
];

/// Synonyms recognized as patient-code answers, paired with their meaning.
pub const PATIENT_CODE_SYNONYMS: &[(&str, PatientCode)] = &[
    ("change talk", PatientCode::ChangeTalk),
    ("change_talk", PatientCode::ChangeTalk),
    ("follow/neutral", PatientCode::FollowNeutral),
    ("follow neutral", PatientCode::FollowNeutral),
    ("follow_neutral", PatientCode::FollowNeutral),
    ("sustain talk", PatientCode::SustainTalk),
    ("sustain_talk", PatientCode::SustainTalk),
];

/// Parse a free-standing label token against the shipped synonym table,
/// case-insensitively.
pub fn parse_label_token(text: &str) -> Result<LabelToken, LabelError> {
    let norm = text.trim().to_lowercase();
    for (syn, v) in VALENCE_SYNONYMS {
        if norm == *syn {
            return Ok(LabelToken::Valence(*v));
        }
    }
    for (syn, c) in PATIENT_CODE_SYNONYMS {
        if norm == *syn {
            return Ok(LabelToken::Code(*c));
        }
    }
    Err(LabelError::Unrecognized(text.to_string()))
}
