//! Prompt-chain construction and execution: the three-stage coding
//! pipeline, its ablations, and the single-stage baselines, realized as one
//! growing multi-turn chat conversation per window.

use crate::backend::{
    BackendError, ChatBackend, ChatMessage, CompletionRequest, SamplingParams,
};
use crate::labels::Valence;
use crate::transcript::{Window, WindowId};
use once_cell::sync::Lazy;
use rand::Rng;
use regex::Regex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// The stages a template can implement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    InteractionDefinition,
    InvolvementAssessment,
    ValenceAnalysis,
    ZeroShotDirect,
    ZeroCoTStep,
    FewShotBlock,
}

impl StageId {
    pub fn as_str(self) -> &'static str {
        match self {
            StageId::InteractionDefinition => "interaction_definition",
            StageId::InvolvementAssessment => "involvement_assessment",
            StageId::ValenceAnalysis => "valence_analysis",
            StageId::ZeroShotDirect => "zero_shot_direct",
            StageId::ZeroCoTStep => "zero_cot_step",
            StageId::FewShotBlock => "few_shot_block",
        }
    }

    /// Header used when prior outputs are re-embedded into later prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            StageId::InteractionDefinition => "interaction definition",
            StageId::InvolvementAssessment => "involvement assessment",
            StageId::ValenceAnalysis => "valence analysis",
            StageId::ZeroShotDirect => "zero-shot question",
            StageId::ZeroCoTStep => "zero-shot chain of thought",
            StageId::FewShotBlock => "few-shot example",
        }
    }
}

/// Coding methods: the full chain, one ablation per removed stage, and the
/// three baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    CoI,
    CoIWoId,
    CoIWoIa,
    CoIWoVa,
    ZeroShot,
    FewShot,
    ZeroCoT,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::CoI,
        MethodId::CoIWoId,
        MethodId::CoIWoIa,
        MethodId::CoIWoVa,
        MethodId::ZeroShot,
        MethodId::FewShot,
        MethodId::ZeroCoT,
    ];

    /// The four methods compared in an ablation run.
    pub const ABLATION_SUITE: [MethodId; 4] = [
        MethodId::CoI,
        MethodId::CoIWoId,
        MethodId::CoIWoIa,
        MethodId::CoIWoVa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::CoI => "coi",
            MethodId::CoIWoId => "coi_wo_id",
            MethodId::CoIWoIa => "coi_wo_ia",
            MethodId::CoIWoVa => "coi_wo_va",
            MethodId::ZeroShot => "zero_shot",
            MethodId::FewShot => "few_shot",
            MethodId::ZeroCoT => "zero_cot",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            MethodId::CoI => "CoI",
            MethodId::CoIWoId => "w/o ID",
            MethodId::CoIWoIa => "w/o IA",
            MethodId::CoIWoVa => "w/o VA",
            MethodId::ZeroShot => "Zeroshot",
            MethodId::FewShot => "Fewshot",
            MethodId::ZeroCoT => "ZeroCoT",
        }
    }

    pub fn parse(text: &str) -> Option<MethodId> {
        let key = text.trim().to_lowercase();
        MethodId::ALL.into_iter().find(|m| m.as_str() == key)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for MethodId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        MethodId::parse(&raw)
            .ok_or_else(|| D::Error::custom(format!("unknown method id: {raw}")))
    }
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("template library has no entry for {0}")]
    MissingTemplate(String),
    #[error("placeholder {{{0}}} has no binding")]
    UnboundPlaceholder(String),
    #[error("support set too small: need {needed}, have {available}")]
    InsufficientSupport { needed: usize, available: usize },
    #[error("support set overlaps evaluation windows at {0}")]
    SupportOverlap(WindowId),
    #[error("backend failed at stage {stage}: {source}")]
    Backend {
        stage: usize,
        source: BackendError,
    },
}

static PLACEHOLDER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

/// A prompt template for one stage. `requires` is the set of placeholder
/// names appearing in the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTemplate {
    pub stage_id: StageId,
    pub template_text: String,
    pub requires: BTreeSet<String>,
}

impl StageTemplate {
    pub fn new(stage_id: StageId, template_text: impl Into<String>) -> Self {
        let template_text = template_text.into();
        let requires = PLACEHOLDER
            .captures_iter(&template_text)
            .map(|c| c[1].to_string())
            .collect();
        StageTemplate {
            stage_id,
            template_text,
            requires,
        }
    }
}

/// Named prompt texts: one system prompt plus one entry per stage key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateLibrary {
    pub system: String,
    pub stages: BTreeMap<String, String>,
}

impl TemplateLibrary {
    pub fn stage_text(&self, key: &str) -> Result<&str, ChainError> {
        self.stages
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ChainError::MissingTemplate(key.to_string()))
    }

    pub fn stage_template(&self, key: &str, stage_id: StageId) -> Result<StageTemplate, ChainError> {
        Ok(StageTemplate::new(stage_id, self.stage_text(key)?))
    }
}

/// Template keys every complete library must provide.
pub const REQUIRED_TEMPLATE_KEYS: &[&str] = &[
    "interaction_definition",
    "involvement_assessment",
    "valence_analysis",
    "valence_analysis_direct",
    "zero_shot_direct",
    "zero_cot_step",
    "fewshot_block",
];

/// A fully resolved method: ordered backend stages plus optional few-shot
/// example material. Baselines have exactly one stage.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    pub method_id: MethodId,
    pub system_prompt: String,
    pub stages: Vec<StageTemplate>,
    pub fewshot_n: usize,
    pub fewshot_template: Option<StageTemplate>,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub fewshot_n: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { fewshot_n: 1 }
    }
}

/// Resolve a method into its stage list from the template library.
pub fn build_chain(
    method: MethodId,
    library: &TemplateLibrary,
    options: &BuildOptions,
) -> Result<ChainSpec, ChainError> {
    let stage = |key: &str, id: StageId| library.stage_template(key, id);
    let id = || stage("interaction_definition", StageId::InteractionDefinition);
    let ia = || stage("involvement_assessment", StageId::InvolvementAssessment);
    let va = || stage("valence_analysis", StageId::ValenceAnalysis);
    let va_direct = || stage("valence_analysis_direct", StageId::ValenceAnalysis);

    let (stages, fewshot_n, fewshot_template) = match method {
        MethodId::CoI => (vec![id()?, ia()?, va()?], 0, None),
        MethodId::CoIWoId => (vec![ia()?, va()?], 0, None),
        MethodId::CoIWoIa => (vec![id()?, va()?], 0, None),
        MethodId::CoIWoVa => (vec![id()?, ia()?, va_direct()?], 0, None),
        MethodId::ZeroShot => (
            vec![stage("zero_shot_direct", StageId::ZeroShotDirect)?],
            0,
            None,
        ),
        MethodId::ZeroCoT => (
            vec![stage("zero_cot_step", StageId::ZeroCoTStep)?],
            0,
            None,
        ),
        MethodId::FewShot => (
            vec![stage("zero_shot_direct", StageId::ZeroShotDirect)?],
            options.fewshot_n,
            Some(stage("fewshot_block", StageId::FewShotBlock)?),
        ),
    };
    Ok(ChainSpec {
        method_id: method,
        system_prompt: library.system.clone(),
        stages,
        fewshot_n,
        fewshot_template,
    })
}

/// Mutable state threaded through a single chain: the window under
/// analysis, the coding guide text, outputs of completed stages, and the
/// few-shot example currently being rendered. Stage outputs only grow.
#[derive(Debug, Clone)]
pub struct ChainContext<'a> {
    pub window: &'a Window,
    pub misc_definitions: &'a str,
    pub stage_outputs: Vec<StageOutput>,
    pub fewshot_example: Option<(Window, Valence)>,
}

impl<'a> ChainContext<'a> {
    pub fn new(window: &'a Window, misc_definitions: &'a str) -> Self {
        ChainContext {
            window,
            misc_definitions,
            stage_outputs: Vec::new(),
            fewshot_example: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub stage_id: StageId,
    pub text: String,
}

fn format_prior_outputs(outputs: &[StageOutput]) -> String {
    if outputs.is_empty() {
        return "(no prior stage outputs)".to_string();
    }
    outputs
        .iter()
        .map(|o| format!("[{}]\n{}", o.stage_id.display_name(), o.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Fill a stage template from the context. Unknown or unfillable
/// placeholders fail loudly; placeholders are resolved against the template
/// text only, never against substituted content.
pub fn render_stage(template: &StageTemplate, ctx: &ChainContext) -> Result<String, ChainError> {
    let mut bindings: BTreeMap<&str, String> = BTreeMap::new();
    for name in &template.requires {
        let value = match name.as_str() {
            "window_transcript" => ctx.window.render_dialogue(),
            "misc_definitions" => ctx.misc_definitions.to_string(),
            "prior_stage_outputs" => format_prior_outputs(&ctx.stage_outputs),
            "fewshot_example" => match &ctx.fewshot_example {
                Some((window, _)) => window.render_dialogue(),
                None => return Err(ChainError::UnboundPlaceholder(name.clone())),
            },
            _ => return Err(ChainError::UnboundPlaceholder(name.clone())),
        };
        bindings.insert(name.as_str(), value);
    }
    let rendered = PLACEHOLDER.replace_all(&template.template_text, |caps: &regex::Captures| {
        bindings.get(&caps[1]).cloned().unwrap_or_default()
    });
    Ok(rendered.into_owned())
}

/// Full record of one executed chain: the conversation, the
/// backend-produced stage outputs, and request metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTranscript {
    pub method_id: MethodId,
    pub window_id: WindowId,
    pub model_id: String,
    pub sampling: SamplingParams,
    pub messages: Vec<ChatMessage>,
    pub stage_outputs: Vec<StageOutput>,
    pub final_text: String,
    pub cache_hits: u32,
    pub refusal: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fewshot_example_ids: Vec<WindowId>,
}

#[derive(Debug, Clone)]
pub struct ChainRunParams<'a> {
    pub model_id: &'a str,
    pub sampling: SamplingParams,
    pub misc_definitions: &'a str,
}

/// Draw `n` few-shot examples uniformly without replacement. Deterministic
/// given the rng state.
pub fn select_fewshot_examples<R: Rng>(
    support_set: &[Window],
    n: usize,
    rng: &mut R,
) -> Result<Vec<(Window, Valence)>, ChainError> {
    if support_set.len() < n {
        return Err(ChainError::InsufficientSupport {
            needed: n,
            available: support_set.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let picks = rand::seq::index::sample(rng, support_set.len(), n);
    Ok(picks
        .iter()
        .map(|i| {
            let w = support_set[i].clone();
            let valence = w.gold_label.valence();
            (w, valence)
        })
        .collect())
}

/// Verify support and evaluation sets share no window identity.
pub fn ensure_disjoint(support: &[Window], eval: &[Window]) -> Result<(), ChainError> {
    let eval_ids: BTreeSet<WindowId> = eval.iter().map(Window::id).collect();
    for w in support {
        if eval_ids.contains(&w.id()) {
            return Err(ChainError::SupportOverlap(w.id()));
        }
    }
    Ok(())
}

/// Execute a chain against a backend: stages run strictly in order, each
/// conditioning on all earlier turns. A refusal stops the chain and marks
/// the transcript; it is not an error.
pub fn run_chain<R: Rng>(
    spec: &ChainSpec,
    window: &Window,
    params: &ChainRunParams,
    backend: &dyn ChatBackend,
    support_set: &[Window],
    rng: &mut R,
) -> Result<ChainTranscript, ChainError> {
    let mut ctx = ChainContext::new(window, params.misc_definitions);
    let mut messages = vec![ChatMessage::system(spec.system_prompt.clone())];
    let mut fewshot_example_ids = Vec::new();

    if spec.fewshot_n > 0 {
        let template = spec
            .fewshot_template
            .as_ref()
            .ok_or_else(|| ChainError::MissingTemplate("fewshot_block".to_string()))?;
        let examples = select_fewshot_examples(support_set, spec.fewshot_n, rng)?;
        for (example, valence) in examples {
            if example.id() == window.id() {
                return Err(ChainError::SupportOverlap(example.id()));
            }
            fewshot_example_ids.push(example.id());
            ctx.fewshot_example = Some((example, valence));
            let user_text = render_stage(template, &ctx)?;
            messages.push(ChatMessage::user(user_text));
            messages.push(ChatMessage::assistant(format!("gold valence: {valence}")));
        }
    }

    let mut cache_hits = 0u32;
    let mut refusal = false;
    for (stage_index, stage) in spec.stages.iter().enumerate() {
        let user_text = render_stage(stage, &ctx)?;
        messages.push(ChatMessage::user(user_text));
        let request = CompletionRequest {
            model_id: params.model_id.to_string(),
            messages: messages.clone(),
            sampling: params.sampling,
        };
        let response = backend.complete(&request).map_err(|source| ChainError::Backend {
            stage: stage_index,
            source,
        })?;
        messages.push(ChatMessage::assistant(response.text.clone()));
        ctx.stage_outputs.push(StageOutput {
            stage_id: stage.stage_id,
            text: response.text,
        });
        cache_hits += u32::from(response.cache_hit);
        if response.refusal {
            refusal = true;
            break;
        }
    }

    let final_text = ctx
        .stage_outputs
        .last()
        .map(|o| o.text.clone())
        .unwrap_or_default();
    Ok(ChainTranscript {
        method_id: spec.method_id,
        window_id: window.id(),
        model_id: params.model_id.to_string(),
        sampling: params.sampling,
        messages,
        stage_outputs: ctx.stage_outputs,
        final_text,
        cache_hits,
        refusal,
        fewshot_example_ids,
    })
}
