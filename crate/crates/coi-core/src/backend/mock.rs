//! Deterministic rule-based mock provider. It recovers a valence from cue
//! phrases planted in the conversation's user messages, emits
//! stage-appropriate text keyed on a `[stage: ...]` marker, and can inject
//! label noise and refusals for fault testing.

use super::{
    BackendError, ChatBackend, CompletionRequest, CompletionResponse, RefusalDetector, Role,
};
use crate::labels::Valence;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// One scan rule: if `match_key` occurs in a user message, the mock leans
/// toward `valence`. The latest occurrence across the conversation wins.
#[derive(Debug, Clone)]
pub struct CueRule {
    pub match_key: String,
    pub valence: Valence,
}

#[derive(Debug, Clone)]
pub struct MockBackendConfig {
    /// Probability that a final answer is flipped to a uniformly chosen
    /// other label. 0 disables noise.
    pub epsilon: f64,
    pub noise_seed: u64,
    /// If set, any user message containing this phrase triggers a refusal
    /// response.
    pub refusal_trigger: Option<String>,
}

impl Default for MockBackendConfig {
    fn default() -> Self {
        MockBackendConfig {
            epsilon: 0.0,
            noise_seed: 0,
            refusal_trigger: None,
        }
    }
}

pub struct MockBackend {
    rules: Vec<CueRule>,
    config: MockBackendConfig,
    detector: RefusalDetector,
}

const REFUSAL_TEXT: &str = "I cannot assist with that request.";

const ID_MARKER: &str = "[stage: interaction_definition]";
const IA_MARKER: &str = "[stage: involvement_assessment]";

impl MockBackend {
    pub fn new(rules: Vec<CueRule>, config: MockBackendConfig) -> Self {
        assert!(
            (0.0..=1.0).contains(&config.epsilon),
            "epsilon must be a probability"
        );
        MockBackend {
            rules: rules
                .into_iter()
                .map(|r| CueRule {
                    match_key: r.match_key.to_lowercase(),
                    valence: r.valence,
                })
                .collect(),
            config,
            detector: RefusalDetector::default(),
        }
    }

    /// The valence implied by the latest cue occurrence over all user
    /// messages, or Neutral when no cue occurs. Ties at the same position
    /// go to the longest key.
    fn scan_valence(&self, req: &CompletionRequest) -> Valence {
        let mut best: Option<(usize, usize, usize, Valence)> = None;
        for (msg_idx, msg) in req.messages.iter().enumerate() {
            if msg.role != Role::User {
                continue;
            }
            let content = msg.content.to_lowercase();
            for rule in &self.rules {
                if let Some(pos) = content.rfind(&rule.match_key) {
                    let candidate = (msg_idx, pos, rule.match_key.len(), rule.valence);
                    let better = match best {
                        None => true,
                        Some((bi, bp, bl, _)) => {
                            (candidate.0, candidate.1, candidate.2) > (bi, bp, bl)
                        }
                    };
                    if better {
                        best = Some(candidate);
                    }
                }
            }
        }
        best.map(|(_, _, _, v)| v).unwrap_or(Valence::Neutral)
    }

    fn maybe_flip(&self, req: &CompletionRequest, valence: Valence) -> Valence {
        if self.config.epsilon <= 0.0 {
            return valence;
        }
        let mut hasher = Sha256::new();
        hasher.update(b"mock-noise");
        hasher.update(self.config.noise_seed.to_le_bytes());
        hasher.update(req.cache_key().0);
        let mut rng = ChaCha20Rng::from_seed(hasher.finalize().into());
        if rng.gen::<f64>() >= self.config.epsilon {
            return valence;
        }
        let others: Vec<Valence> = Valence::ALL
            .iter()
            .copied()
            .filter(|v| *v != valence)
            .collect();
        others[rng.gen_range(0..others.len())]
    }

    fn stage_text(&self, req: &CompletionRequest, valence: Valence) -> String {
        let latest_user = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.to_lowercase())
            .unwrap_or_default();
        if latest_user.contains(ID_MARKER) {
            match valence {
                Valence::Positive => {
                    "interaction definition: the therapist invites talk about change and the \
                     patient's replies include statements leaning toward changing the behavior."
                }
                Valence::Negative => {
                    "interaction definition: the therapist probes the behavior and the patient's \
                     replies include statements defending the current behavior."
                }
                Valence::Neutral => {
                    "interaction definition: the therapist asks factual questions and the \
                     patient's replies follow the conversation with background information."
                }
            }
            .to_string()
        } else if latest_user.contains(IA_MARKER) {
            match valence {
                Valence::Positive => {
                    "involvement assessment: the patient shows strong engagement and \
                     self-exploration, moving toward change."
                }
                Valence::Negative => {
                    "involvement assessment: the patient is engaged but argues for keeping \
                     things as they are, moving away from change."
                }
                Valence::Neutral => {
                    "involvement assessment: the patient shows moderate engagement and mainly \
                     follows the therapist's lead."
                }
            }
            .to_string()
        } else {
            let final_valence = self.maybe_flip(req, valence);
            format!(
                "the patient's valence should be coded as {final_valence}."
            )
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        if let Some(trigger) = &self.config.refusal_trigger {
            let trigger = trigger.to_lowercase();
            let refuse = !trigger.is_empty()
                && req
                    .messages
                    .iter()
                    .any(|m| m.role == Role::User && m.content.to_lowercase().contains(&trigger));
            if refuse {
                return Ok(CompletionResponse {
                    text: REFUSAL_TEXT.to_string(),
                    refusal: self.detector.is_refusal(REFUSAL_TEXT),
                    latency_ms: None,
                    prompt_tokens: None,
                    completion_tokens: None,
                    cache_hit: false,
                });
            }
        }
        let valence = self.scan_valence(req);
        let text = self.stage_text(req, valence);
        Ok(CompletionResponse {
            refusal: self.detector.is_refusal(&text),
            text,
            latency_ms: None,
            prompt_tokens: None,
            completion_tokens: None,
            cache_hit: false,
        })
    }
}
