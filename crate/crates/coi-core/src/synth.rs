//! Seeded synthetic corpus generator: alternating therapist/patient
//! sessions whose patient utterances carry gold codes drawn from a
//! configurable label mix, with cue phrases from the seed table planted at
//! a configurable rate. Decorative leads, tails and filler lines vary per
//! utterance so window texts are effectively unique across a corpus.

use crate::assets::CueTable;
use crate::labels::{PatientCode, SubCode, TherapistCode};
use crate::transcript::{Session, Speaker, Utterance};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub seed: u64,
    pub n_sessions: usize,
    pub utterances_per_session: usize,
    /// Gold-code probabilities in [ChangeTalk, FollowNeutral, SustainTalk]
    /// order. Must sum to 1 within 0.01; normalized internally.
    pub label_mix: [f64; 3],
    pub cue_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 7,
            n_sessions: 60,
            utterances_per_session: 40,
            label_mix: [0.274, 0.598, 0.124],
            cue_rate: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid label mix: {0}")]
    InvalidMix(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("cue table has no entry for {0}: cannot plant cues")]
    NoCueForCode(PatientCode),
}

/// Uncued therapist prompts with their behavior codes.
const THERAPIST_GENERIC: &[(&str, &str)] = &[
    ("what has the week been like for you?", "open_question"),
    ("tell me more about that.", "open_question"),
    ("how are things at home?", "open_question"),
    ("what happened after that?", "open_question"),
    ("and how did that feel?", "open_question"),
    ("what would you like to focus on today?", "structure"),
    ("can you walk me through your routine?", "closed_question"),
    ("that sounds like it took real effort.", "support"),
];

/// Uncued patient small talk. Must not contain any cue match key.
const PATIENT_FILLER: &[&str] = &[
    "it has been a long week at work.",
    "my sister came by on sunday.",
    "i mostly kept to my usual routine.",
    "the drive over here took forever.",
    "i watched a lot of television.",
    "we had dinner with the neighbors.",
    "i did not sleep much last night.",
    "the weather has been rough lately.",
    "i spent saturday cleaning the garage.",
    "my boss moved me to the early shift.",
    "the kids kept me busy all weekend.",
    "i ran into an old friend at the store.",
];

const PATIENT_EXTRA: &[&str] = &[
    "things are okay i guess.",
    "not much else to report.",
    "same as always really.",
    "that is about it.",
    "nothing new otherwise.",
];

const CUE_LEADS: &[&str] = &["", "well,", "honestly,", "you know,", "to be fair,", "lately,"];

const CUE_TAILS: &[&str] = &[
    "",
    "that is where i am.",
    "that is how it feels.",
    "no two ways about it.",
    "i mean it.",
    "that is the truth of it.",
];

fn normalized_mix(mix: &[f64; 3]) -> Result<[f64; 3], SynthError> {
    if mix.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(SynthError::InvalidMix(
            "probabilities must be finite and non-negative".to_string(),
        ));
    }
    let sum: f64 = mix.iter().sum();
    if (sum - 1.0).abs() > 0.01 {
        return Err(SynthError::InvalidMix(format!(
            "probabilities sum to {sum:.4}, expected 1 within 0.01"
        )));
    }
    Ok([mix[0] / sum, mix[1] / sum, mix[2] / sum])
}

fn draw_code<R: Rng>(rng: &mut R, mix: &[f64; 3]) -> PatientCode {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in mix.iter().enumerate() {
        acc += p;
        if r < acc {
            return PatientCode::ALL[i];
        }
    }
    *PatientCode::ALL.last().unwrap()
}

fn pick<'a, R: Rng, T>(rng: &mut R, pool: &'a [T]) -> &'a T {
    &pool[rng.gen_range(0..pool.len())]
}

/// Generate a corpus deterministically from the seed. Sessions alternate
/// therapist (even positions) and patient (odd positions); when a cue is
/// planted, the preceding therapist utterance is the cue's lead-in.
pub fn generate_synthetic_corpus(
    params: &SynthParams,
    cues: &CueTable,
) -> Result<Vec<Session>, SynthError> {
    if !(0.0..=1.0).contains(&params.cue_rate) {
        return Err(SynthError::InvalidParam(format!(
            "cue_rate {} outside [0, 1]",
            params.cue_rate
        )));
    }
    let mix = normalized_mix(&params.label_mix)?;
    if params.cue_rate > 0.0 {
        for (i, code) in PatientCode::ALL.into_iter().enumerate() {
            if mix[i] > 0.0 && cues.for_code(code).is_empty() {
                return Err(SynthError::NoCueForCode(code));
            }
        }
    }

    let mut hasher = Sha256::new();
    hasher.update(b"synth");
    hasher.update(params.seed.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(hasher.finalize().into());

    let mut sessions = Vec::with_capacity(params.n_sessions);
    for s in 0..params.n_sessions {
        let mut utterances = Vec::with_capacity(params.utterances_per_session);
        let mut index = 0u64;
        while (index as usize) < params.utterances_per_session {
            let has_patient_slot = (index as usize) + 1 < params.utterances_per_session;
            if !has_patient_slot {
                let (text, code) = *pick(&mut rng, THERAPIST_GENERIC);
                utterances.push(Utterance {
                    index,
                    speaker: Speaker::Therapist,
                    text: text.to_string(),
                    gold_patient_code: None,
                    gold_subcode: None,
                    gold_therapist_code: Some(TherapistCode::parse(code)),
                });
                index += 1;
                continue;
            }

            let gold = draw_code(&mut rng, &mix);
            let cued = rng.gen::<f64>() < params.cue_rate;
            let (therapist_text, therapist_code, patient_text, subcode);
            if cued {
                let options = cues.for_code(gold);
                let entry = options[rng.gen_range(0..options.len())];
                therapist_text = entry.therapist_lead_in.clone();
                therapist_code = entry.therapist_code.clone();
                let lead = pick(&mut rng, CUE_LEADS);
                let tail = pick(&mut rng, CUE_TAILS);
                patient_text = crate::transcript::normalize(&format!(
                    "{lead} {} {tail}",
                    entry.cue_text
                ));
                subcode = match entry.subcode {
                    SubCode::None => None,
                    signed => Some(signed),
                };
            } else {
                let (text, code) = *pick(&mut rng, THERAPIST_GENERIC);
                therapist_text = text.to_string();
                therapist_code = TherapistCode::parse(code);
                let mut composed = pick(&mut rng, PATIENT_FILLER).to_string();
                if rng.gen::<f64>() < 0.5 {
                    composed.push(' ');
                    composed.push_str(pick(&mut rng, PATIENT_EXTRA));
                }
                patient_text = composed;
                subcode = None;
            }
            utterances.push(Utterance {
                index,
                speaker: Speaker::Therapist,
                text: therapist_text,
                gold_patient_code: None,
                gold_subcode: None,
                gold_therapist_code: Some(therapist_code),
            });
            utterances.push(Utterance {
                index: index + 1,
                speaker: Speaker::Patient,
                text: patient_text,
                gold_patient_code: Some(gold),
                gold_subcode: subcode,
                gold_therapist_code: None,
            });
            index += 2;
        }
        sessions.push(Session {
            session_id: format!("synth-{s:04}"),
            metadata: BTreeMap::new(),
            utterances,
        });
    }
    Ok(sessions)
}

/// Write sessions in the line-delimited corpus format.
pub fn write_corpus(sessions: &[Session], path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for session in sessions {
        for utt in &session.utterances {
            let mut obj = serde_json::json!({
                "session_id": session.session_id,
                "index": utt.index,
                "speaker": utt.speaker.as_str(),
                "text": utt.text,
            });
            if let Some(code) = utt.gold_patient_code {
                obj["patient_code"] = code.as_str().into();
            }
            if let Some(sub) = utt.gold_subcode {
                obj["subcode"] = sub.to_string().into();
            }
            if let Some(tc) = &utt.gold_therapist_code {
                obj["therapist_code"] = tc.as_str().into();
            }
            writeln!(out, "{obj}")?;
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::builtin_assets;
    use crate::transcript::parse_corpus;

    fn cues() -> CueTable {
        builtin_assets().cues
    }

    #[test]
    fn generation_is_deterministic() {
        let params = SynthParams {
            n_sessions: 5,
            ..SynthParams::default()
        };
        let a = generate_synthetic_corpus(&params, &cues()).unwrap();
        let b = generate_synthetic_corpus(&params, &cues()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let base = SynthParams {
            n_sessions: 3,
            ..SynthParams::default()
        };
        let other = SynthParams { seed: 8, ..base.clone() };
        let a = generate_synthetic_corpus(&base, &cues()).unwrap();
        let b = generate_synthetic_corpus(&other, &cues()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn sessions_alternate_speakers_with_gold_codes() {
        let params = SynthParams {
            n_sessions: 2,
            utterances_per_session: 9,
            ..SynthParams::default()
        };
        let sessions = generate_synthetic_corpus(&params, &cues()).unwrap();
        assert_eq!(sessions.len(), 2);
        for session in &sessions {
            assert_eq!(session.utterances.len(), 9);
            for (i, utt) in session.utterances.iter().enumerate() {
                assert_eq!(utt.index, i as u64);
                if i % 2 == 0 {
                    assert_eq!(utt.speaker, Speaker::Therapist);
                    assert!(utt.gold_patient_code.is_none());
                    assert!(utt.gold_therapist_code.is_some());
                } else {
                    assert_eq!(utt.speaker, Speaker::Patient);
                    assert!(utt.gold_patient_code.is_some());
                }
            }
        }
    }

    #[test]
    fn cue_rate_one_plants_matching_cue_in_every_patient_utterance() {
        let table = cues();
        let params = SynthParams {
            n_sessions: 10,
            utterances_per_session: 20,
            cue_rate: 1.0,
            ..SynthParams::default()
        };
        let sessions = generate_synthetic_corpus(&params, &table).unwrap();
        for session in &sessions {
            for pair in session.utterances.chunks(2) {
                let [therapist, patient] = pair else { continue };
                let gold = patient.gold_patient_code.unwrap();
                let entry = table
                    .entries()
                    .iter()
                    .find(|e| patient.text.contains(&e.cue_text))
                    .expect("every patient utterance carries a planted cue");
                assert_eq!(entry.patient_code, gold);
                assert_eq!(therapist.text, entry.therapist_lead_in);
                assert_eq!(therapist.gold_therapist_code, Some(entry.therapist_code.clone()));
            }
        }
    }

    #[test]
    fn cue_rate_zero_plants_no_cue() {
        let table = cues();
        let params = SynthParams {
            n_sessions: 10,
            utterances_per_session: 20,
            cue_rate: 0.0,
            ..SynthParams::default()
        };
        let sessions = generate_synthetic_corpus(&params, &table).unwrap();
        for session in &sessions {
            for utt in &session.utterances {
                for entry in table.entries() {
                    assert!(
                        !utt.text.contains(&entry.match_key),
                        "cue {:?} leaked into uncued text {:?}",
                        entry.match_key,
                        utt.text
                    );
                }
            }
        }
    }

    #[test]
    fn label_proportions_track_the_mix() {
        let params = SynthParams {
            n_sessions: 125,
            utterances_per_session: 80,
            ..SynthParams::default()
        };
        let sessions = generate_synthetic_corpus(&params, &cues()).unwrap();
        let mut counts = [0u64; 3];
        let mut total = 0u64;
        for session in &sessions {
            for utt in &session.utterances {
                if let Some(code) = utt.gold_patient_code {
                    counts[code.index()] += 1;
                    total += 1;
                }
            }
        }
        assert!(total >= 5000, "need at least 5000 patient utterances, got {total}");
        for (i, expected) in params.label_mix.iter().enumerate() {
            let freq = counts[i] as f64 / total as f64;
            assert!(
                (freq - expected).abs() <= 0.02,
                "class {i}: frequency {freq:.4} vs mix {expected}"
            );
        }
    }

    #[test]
    fn empty_corpus_for_zero_sessions() {
        let params = SynthParams {
            n_sessions: 0,
            ..SynthParams::default()
        };
        assert!(generate_synthetic_corpus(&params, &cues()).unwrap().is_empty());
    }

    #[test]
    fn invalid_mixes_are_rejected() {
        let bad_sum = SynthParams {
            label_mix: [0.5, 0.3, 0.1],
            ..SynthParams::default()
        };
        assert!(matches!(
            generate_synthetic_corpus(&bad_sum, &cues()),
            Err(SynthError::InvalidMix(_))
        ));
        let negative = SynthParams {
            label_mix: [1.1, -0.1, 0.0],
            ..SynthParams::default()
        };
        assert!(matches!(
            generate_synthetic_corpus(&negative, &cues()),
            Err(SynthError::InvalidMix(_))
        ));
        let bad_rate = SynthParams {
            cue_rate: 1.5,
            ..SynthParams::default()
        };
        assert!(matches!(
            generate_synthetic_corpus(&bad_rate, &cues()),
            Err(SynthError::InvalidParam(_))
        ));
    }

    #[test]
    fn default_mix_with_tolerance_is_accepted() {
        // The shipped proportions sum to 0.996; the generator normalizes.
        let params = SynthParams {
            n_sessions: 1,
            ..SynthParams::default()
        };
        assert!(generate_synthetic_corpus(&params, &cues()).is_ok());
    }

    #[test]
    fn corpus_round_trips_through_file_format() {
        let params = SynthParams {
            n_sessions: 4,
            utterances_per_session: 12,
            ..SynthParams::default()
        };
        let sessions = generate_synthetic_corpus(&params, &cues()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&sessions, &path).unwrap();
        let parsed = parse_corpus(&path).unwrap();
        assert_eq!(parsed.rejected_count(), 0);
        assert_eq!(parsed.sessions, sessions);
    }
}
