//! Packaged default assets: the condensed coding guide for the first
//! stage's prompt, the stage template library, and the cue seed table
//! shared by the synthetic generator and the rule-based mock backend.
//! Defaults are embedded in the binary; a directory with the same three
//! file names can override them.

use crate::backend::CueRule;
use crate::chain::{TemplateLibrary, REQUIRED_TEMPLATE_KEYS};
use crate::labels::{PatientCode, SubCode, TherapistCode};
use crate::transcript::normalize;
use serde::Deserialize;
use std::path::Path;
use thiserror::Error;

pub const DEFINITIONS_FILE: &str = "misc_definitions.txt";
pub const TEMPLATES_FILE: &str = "templates.toml";
pub const CUES_FILE: &str = "cues.toml";

const BUILTIN_DEFINITIONS: &str = include_str!("../assets/misc_definitions.txt");
const BUILTIN_TEMPLATES: &str = include_str!("../assets/templates.toml");
const BUILTIN_CUES: &str = include_str!("../assets/cues.toml");

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("missing asset {0}")]
    MissingAsset(String),
    #[error("malformed asset {name}: {reason}")]
    MalformedAsset { name: String, reason: String },
}

/// One seed row: a patient cue utterance, its gold sub-code, and the
/// therapist lead-in that precedes it in generated dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct CueEntry {
    /// Full patient utterance, normalized.
    pub cue_text: String,
    /// Substring the mock backend scans for; equals `cue_text` for neutral
    /// rows.
    pub match_key: String,
    pub subcode: SubCode,
    pub patient_code: PatientCode,
    pub therapist_lead_in: String,
    pub therapist_code: TherapistCode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueTable {
    entries: Vec<CueEntry>,
}

impl CueTable {
    pub fn entries(&self) -> &[CueEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Find the entry whose match key or full text equals `key` after
    /// normalization.
    pub fn lookup(&self, key: &str) -> Option<&CueEntry> {
        let key = normalize(key);
        self.entries
            .iter()
            .find(|e| e.match_key == key || e.cue_text == key)
    }

    pub fn for_code(&self, code: PatientCode) -> Vec<&CueEntry> {
        self.entries
            .iter()
            .filter(|e| e.patient_code == code)
            .collect()
    }

    /// Scan rules for the mock backend: match key plus implied valence.
    pub fn mock_rules(&self) -> Vec<CueRule> {
        self.entries
            .iter()
            .map(|e| CueRule {
                match_key: e.match_key.clone(),
                valence: e.patient_code.valence(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assets {
    pub definitions: String,
    pub templates: TemplateLibrary,
    pub cues: CueTable,
}

/// The assets compiled into the binary.
pub fn builtin_assets() -> Assets {
    Assets {
        definitions: parse_definitions(BUILTIN_DEFINITIONS, DEFINITIONS_FILE)
            .expect("builtin definitions are valid"),
        templates: parse_templates(BUILTIN_TEMPLATES, TEMPLATES_FILE)
            .expect("builtin templates are valid"),
        cues: parse_cues(BUILTIN_CUES, CUES_FILE).expect("builtin cue table is valid"),
    }
}

/// Load all three assets from a directory, replacing the builtins.
pub fn load_assets(dir: &Path) -> Result<Assets, AssetError> {
    let read = |name: &str| -> Result<String, AssetError> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(AssetError::MissingAsset(name.to_string()));
        }
        std::fs::read_to_string(&path).map_err(|e| AssetError::MalformedAsset {
            name: name.to_string(),
            reason: e.to_string(),
        })
    };
    Ok(Assets {
        definitions: parse_definitions(&read(DEFINITIONS_FILE)?, DEFINITIONS_FILE)?,
        templates: parse_templates(&read(TEMPLATES_FILE)?, TEMPLATES_FILE)?,
        cues: parse_cues(&read(CUES_FILE)?, CUES_FILE)?,
    })
}

fn parse_definitions(text: &str, name: &str) -> Result<String, AssetError> {
    if text.trim().is_empty() {
        return Err(AssetError::MalformedAsset {
            name: name.to_string(),
            reason: "definitions text is empty".to_string(),
        });
    }
    Ok(text.to_string())
}

fn parse_templates(text: &str, name: &str) -> Result<TemplateLibrary, AssetError> {
    let library: TemplateLibrary =
        toml::from_str(text).map_err(|e| AssetError::MalformedAsset {
            name: name.to_string(),
            reason: e.to_string(),
        })?;
    if library.system.trim().is_empty() {
        return Err(AssetError::MalformedAsset {
            name: name.to_string(),
            reason: "system prompt is empty".to_string(),
        });
    }
    for key in REQUIRED_TEMPLATE_KEYS {
        if !library.stages.contains_key(*key) {
            return Err(AssetError::MalformedAsset {
                name: name.to_string(),
                reason: format!("missing stage template {key}"),
            });
        }
    }
    Ok(library)
}

#[derive(Deserialize)]
struct CueFile {
    cues: Vec<CueRow>,
}

#[derive(Deserialize)]
struct CueRow {
    cue_text: String,
    match_key: String,
    subcode: String,
    therapist_lead_in: String,
    therapist_code: String,
}

fn parse_cues(text: &str, name: &str) -> Result<CueTable, AssetError> {
    let malformed = |reason: String| AssetError::MalformedAsset {
        name: name.to_string(),
        reason,
    };
    let file: CueFile = toml::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let mut entries = Vec::new();
    for (i, row) in file.cues.into_iter().enumerate() {
        for (field, value) in [("cue_text", &row.cue_text), ("match_key", &row.match_key)] {
            if normalize(value) != *value {
                return Err(malformed(format!("row {i}: {field} is not normalized")));
            }
        }
        if !row.cue_text.contains(&row.match_key) {
            return Err(malformed(format!(
                "row {i}: match_key {:?} not contained in cue_text",
                row.match_key
            )));
        }
        let subcode: SubCode = row
            .subcode
            .parse()
            .map_err(|e| malformed(format!("row {i}: {e}")))?;
        entries.push(CueEntry {
            patient_code: subcode.patient_code(),
            cue_text: row.cue_text,
            match_key: row.match_key,
            subcode,
            therapist_lead_in: normalize(&row.therapist_lead_in),
            therapist_code: TherapistCode::parse(&row.therapist_code),
        });
    }
    Ok(CueTable { entries })
}
