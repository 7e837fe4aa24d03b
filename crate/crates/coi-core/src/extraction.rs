//! Turning final assistant text into a valence prediction: case-insensitive
//! first-match extraction over a fixed synonym table, with a seeded random
//! fallback when nothing matches and full provenance on every record.

use crate::chain::{ChainTranscript, MethodId};
use crate::labels::{PatientCode, Valence, PATIENT_CODE_SYNONYMS, VALENCE_SYNONYMS};
use crate::transcript::WindowId;
use once_cell::sync::Lazy;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractionOutcome {
    Matched {
        valence: Valence,
        match_start: usize,
        matched_text: String,
    },
    NoMatch,
}

/// How a prediction came to be: extracted from text, drawn at random after
/// a NoMatch, or excluded because the provider refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Extracted,
    RandomFallback,
    Excluded,
}

struct SynonymPattern {
    regex: Regex,
    valence: Valence,
    code_name: bool,
}

static SYNONYM_PATTERNS: Lazy<Vec<SynonymPattern>> = Lazy::new(|| {
    let mut patterns = Vec::new();
    for (synonym, valence) in VALENCE_SYNONYMS {
        patterns.push(SynonymPattern {
            regex: Regex::new(&format!(r"(?i)\b{}\b", regex::escape(synonym))).unwrap(),
            valence: *valence,
            code_name: false,
        });
    }
    for (synonym, code) in PATIENT_CODE_SYNONYMS {
        patterns.push(SynonymPattern {
            regex: Regex::new(&format!(r"(?i)\b{}\b", regex::escape(synonym))).unwrap(),
            valence: code.valence(),
            code_name: true,
        });
    }
    patterns
});

/// Scan for the earliest label synonym at a word boundary. Ties at the
/// same position go to the longest matched string. `accept_code_names`
/// additionally admits the patient-code names, mapped to their valence.
pub fn extract_valence(text: &str, accept_code_names: bool) -> ExtractionOutcome {
    let mut best: Option<(usize, usize, Valence, String)> = None;
    for pattern in SYNONYM_PATTERNS.iter() {
        if pattern.code_name && !accept_code_names {
            continue;
        }
        if let Some(m) = pattern.regex.find(text) {
            let candidate = (m.start(), m.len(), pattern.valence, m.as_str().to_string());
            let better = match &best {
                None => true,
                // Earlier start wins; same start, longer match wins.
                Some((bs, bl, _, _)) => {
                    candidate.0 < *bs || (candidate.0 == *bs && candidate.1 > *bl)
                }
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    match best {
        Some((match_start, _, valence, matched_text)) => ExtractionOutcome::Matched {
            valence,
            match_start,
            matched_text,
        },
        None => ExtractionOutcome::NoMatch,
    }
}

/// Resolve an outcome into a concrete prediction. NoMatch draws uniformly
/// from an rng seeded by the global seed and the window identity, so the
/// result does not depend on processing order.
pub fn resolve_prediction(
    outcome: &ExtractionOutcome,
    window_id: &WindowId,
    global_seed: u64,
) -> (Valence, Provenance) {
    match outcome {
        ExtractionOutcome::Matched { valence, .. } => (*valence, Provenance::Extracted),
        ExtractionOutcome::NoMatch => {
            let mut rng = fallback_rng(window_id, global_seed);
            let pick = Valence::ALL[rng.gen_range(0..Valence::ALL.len())];
            (pick, Provenance::RandomFallback)
        }
    }
}

fn fallback_rng(window_id: &WindowId, global_seed: u64) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"fallback");
    hasher.update(global_seed.to_le_bytes());
    hasher.update(window_id.session_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(window_id.window_index.to_le_bytes());
    ChaCha20Rng::from_seed(hasher.finalize().into())
}

/// One scored window: the prediction, how it was obtained, and the full
/// chain transcript for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub window_id: WindowId,
    pub method_id: MethodId,
    pub model_id: String,
    pub gold: PatientCode,
    /// Absent exactly when the record is excluded.
    pub predicted: Option<Valence>,
    pub provenance: Provenance,
    pub final_text: String,
    pub transcript: ChainTranscript,
}

impl PredictionRecord {
    /// Build the record for a finished chain: refusals are excluded, other
    /// outcomes extracted or resolved by fallback.
    pub fn from_transcript(
        transcript: ChainTranscript,
        gold: PatientCode,
        global_seed: u64,
        accept_code_names: bool,
    ) -> PredictionRecord {
        let (predicted, provenance) = if transcript.refusal {
            (None, Provenance::Excluded)
        } else {
            let outcome = extract_valence(&transcript.final_text, accept_code_names);
            let (valence, provenance) =
                resolve_prediction(&outcome, &transcript.window_id, global_seed);
            (Some(valence), provenance)
        };
        PredictionRecord {
            window_id: transcript.window_id.clone(),
            method_id: transcript.method_id,
            model_id: transcript.model_id.clone(),
            gold,
            predicted,
            provenance,
            final_text: transcript.final_text.clone(),
            transcript,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matched(outcome: &ExtractionOutcome) -> (Valence, usize, &str) {
        match outcome {
            ExtractionOutcome::Matched {
                valence,
                match_start,
                matched_text,
            } => (*valence, *match_start, matched_text.as_str()),
            ExtractionOutcome::NoMatch => panic!("expected a match"),
        }
    }

    #[test]
    fn first_match_wins_in_worked_example() {
        let outcome =
            extract_valence("The patient's valence should be coded as neutral or positive", true);
        let (valence, start, text) = matched(&outcome);
        assert_eq!(valence, Valence::Neutral);
        assert_eq!(text, "neutral");
        assert_eq!(start, 41);
    }

    #[test]
    fn bare_label_matches_at_start() {
        let (valence, start, _) = matched(&extract_valence("positive", true));
        assert_eq!(valence, Valence::Positive);
        assert_eq!(start, 0);
    }

    #[test]
    fn unrelated_text_is_no_match() {
        assert_eq!(
            extract_valence("I really can't determine the category here.", true),
            ExtractionOutcome::NoMatch
        );
    }

    #[test]
    fn word_boundaries_are_respected() {
        assert_eq!(extract_valence("the positivity of it", true), ExtractionOutcome::NoMatch);
        assert_eq!(extract_valence("neutrality reigns", true), ExtractionOutcome::NoMatch);
    }

    #[test]
    fn code_names_map_to_valence_when_enabled() {
        let (valence, _, _) = matched(&extract_valence("this is change talk.", true));
        assert_eq!(valence, Valence::Positive);
        let (valence, _, _) = matched(&extract_valence("clearly sustain_talk here", true));
        assert_eq!(valence, Valence::Negative);
        assert_eq!(
            extract_valence("this is change talk.", false),
            ExtractionOutcome::NoMatch
        );
    }

    #[test]
    fn slash_form_matches_as_one_token() {
        let outcome = extract_valence("coded follow/neutral today", true);
        let (valence, start, text) = matched(&outcome);
        assert_eq!(valence, Valence::Neutral);
        assert_eq!(start, 6);
        assert_eq!(text, "follow/neutral");
    }

    #[test]
    fn case_is_ignored() {
        let outcome = extract_valence("NEGATIVE", true);
        let (valence, _, text) = matched(&outcome);
        assert_eq!(valence, Valence::Negative);
        assert_eq!(text, "NEGATIVE");
    }

    #[test]
    fn text_after_first_match_is_irrelevant() {
        let a = extract_valence("verdict: neutral, though positive signs", true);
        let b = extract_valence("verdict: neutral, though negative signs", true);
        let (va, sa, _) = matched(&a);
        let (vb, sb, _) = matched(&b);
        assert_eq!((va, sa), (vb, sb));
    }

    #[test]
    fn matched_outcome_resolves_to_extracted() {
        let window = WindowId {
            session_id: "s".into(),
            window_index: 0,
        };
        let outcome = extract_valence("neutral", true);
        assert_eq!(
            resolve_prediction(&outcome, &window, 1),
            (Valence::Neutral, Provenance::Extracted)
        );
    }

    #[test]
    fn fallback_is_deterministic_per_window_and_seed() {
        let window = WindowId {
            session_id: "session-9".into(),
            window_index: 4,
        };
        let (a, pa) = resolve_prediction(&ExtractionOutcome::NoMatch, &window, 123);
        let (b, pb) = resolve_prediction(&ExtractionOutcome::NoMatch, &window, 123);
        assert_eq!((a, pa), (b, pb));
        assert_eq!(pa, Provenance::RandomFallback);
    }

    #[test]
    fn fallback_varies_across_windows() {
        let labels: std::collections::BTreeSet<Valence> = (0..30)
            .map(|i| {
                let window = WindowId {
                    session_id: format!("s{i}"),
                    window_index: 0,
                };
                resolve_prediction(&ExtractionOutcome::NoMatch, &window, 7).0
            })
            .collect();
        assert_eq!(labels.len(), 3, "30 windows should hit every label");
    }

    #[test]
    fn fallback_distribution_is_near_uniform() {
        let mut counts = [0u32; 3];
        for i in 0..10_000 {
            let window = WindowId {
                session_id: format!("sess-{i}"),
                window_index: (i % 7) as u32,
            };
            let (v, _) = resolve_prediction(&ExtractionOutcome::NoMatch, &window, 99);
            counts[Valence::ALL.iter().position(|x| *x == v).unwrap()] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 1.0 / 3.0).abs() <= 0.014, "freq {freq}");
        }
    }

    #[test]
    fn refused_transcript_becomes_excluded_record() {
        let transcript = ChainTranscript {
            method_id: MethodId::CoI,
            window_id: WindowId {
                session_id: "s".into(),
                window_index: 1,
            },
            model_id: "mock".into(),
            sampling: crate::backend::SamplingParams::greedy(),
            messages: vec![],
            stage_outputs: vec![],
            final_text: "I cannot assist with that request.".into(),
            cache_hits: 0,
            refusal: true,
            fewshot_example_ids: vec![],
        };
        let record =
            PredictionRecord::from_transcript(transcript, PatientCode::FollowNeutral, 0, true);
        assert_eq!(record.provenance, Provenance::Excluded);
        assert_eq!(record.predicted, None);
    }

    #[test]
    fn clean_transcript_becomes_extracted_record() {
        let transcript = ChainTranscript {
            method_id: MethodId::ZeroShot,
            window_id: WindowId {
                session_id: "s".into(),
                window_index: 2,
            },
            model_id: "mock".into(),
            sampling: crate::backend::SamplingParams::greedy(),
            messages: vec![],
            stage_outputs: vec![],
            final_text: "the patient's valence should be coded as negative.".into(),
            cache_hits: 0,
            refusal: false,
            fewshot_example_ids: vec![],
        };
        let record =
            PredictionRecord::from_transcript(transcript, PatientCode::SustainTalk, 0, true);
        assert_eq!(record.provenance, Provenance::Extracted);
        assert_eq!(record.predicted, Some(Valence::Negative));
    }

    proptest! {
        #[test]
        fn lone_synonym_is_always_found(
            prefix in "[qxzw]{0,10}( [qxzw]{1,8}){0,3}",
            pick in 0usize..3,
            suffix in "[qxzw]{0,10}",
        ) {
            let synonym = VALENCE_SYNONYMS[pick].0;
            let text = format!("{prefix} {synonym} {suffix}");
            let outcome = extract_valence(&text, true);
            match outcome {
                ExtractionOutcome::Matched { valence, .. } => {
                    prop_assert_eq!(valence, VALENCE_SYNONYMS[pick].1);
                }
                ExtractionOutcome::NoMatch => prop_assert!(false, "synonym not found"),
            }
        }
    }
}
