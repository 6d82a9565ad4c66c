//! Dataset-grounded reasoning of UI controls.
//!
//! One reasoning run sends the task, the requested aspects, the candidate
//! pool and (optionally) the preference dataset to the model, then parses its
//! JSON answer. Control names outside the pool are dropped by the sanity
//! filter. Because a model can answer differently from run to run, the
//! ensemble repeats the run and turns the frequency of each control's first
//! place into a weight, which is apportioned onto a 10-point score.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::{parse_kind, ControlCatalog, ControlKind};
use crate::dataset::{Aspect, PreferenceDataset, RequirementTag};
use crate::llm::{extract_json, Gateway, LlmError};
use crate::prompts;

/// Points distributed across the controls of one aspect.
pub const SCORE_TOTAL: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReasoningError {
    #[error("invalid user context: {0}")]
    InvalidContext(String),
    #[error("model answer does not follow the response schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Gateway(#[from] LlmError),
    #[error("{failed} of {n_runs} reasoning runs failed (first: {first})")]
    EnsembleFailed {
        failed: u32,
        n_runs: u32,
        first: String,
    },
    #[error("weights sum to zero")]
    EmptyWeights,
    #[error("no dataset task shares a requirement with the user task")]
    NoRelevantTask,
    #[error("n_runs must be at least 1")]
    ZeroRuns,
}

// ---------------------------------------------------------------------------
// Context
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserContext {
    pub task_description: String,
    pub aspects: Vec<Aspect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requirement_tags: Option<BTreeSet<RequirementTag>>,
}

impl UserContext {
    pub fn new(
        task_description: impl Into<String>,
        aspects: Vec<Aspect>,
    ) -> Result<Self, ReasoningError> {
        let ctx = Self {
            task_description: task_description.into(),
            aspects,
            requirement_tags: None,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn with_tags(mut self, tags: impl IntoIterator<Item = RequirementTag>) -> Self {
        self.requirement_tags = Some(tags.into_iter().collect());
        self
    }

    pub fn validate(&self) -> Result<(), ReasoningError> {
        if self.task_description.trim().is_empty() {
            return Err(ReasoningError::InvalidContext(
                "task description is empty".into(),
            ));
        }
        if self.aspects.is_empty() {
            return Err(ReasoningError::InvalidContext(
                "at least one aspect is required".into(),
            ));
        }
        let unique: BTreeSet<_> = self.aspects.iter().collect();
        if unique.len() != self.aspects.len() {
            return Err(ReasoningError::InvalidContext(
                "aspects must be unique".into(),
            ));
        }
        Ok(())
    }

    /// Explicit tags, or tags derived from the description.
    pub fn tags(&self) -> BTreeSet<RequirementTag> {
        match &self.requirement_tags {
            Some(t) if !t.is_empty() => t.clone(),
            _ => derive_tags(&self.task_description),
        }
    }
}

const POSITION_STEMS: &[&str] = &[
    "position",
    "place",
    "placement",
    "align",
    "move",
    "margin",
    "location",
    "watermark",
    "logo",
    "vignette",
    "corner",
    "drag",
];
const COLOR_STEMS: &[&str] = &[
    "color",
    "colour",
    "autumn",
    "fall",
    "spring",
    "palette",
    "reference",
];
const DISCRETE_STEMS: &[&str] = &[
    "preset",
    "predefined",
    "choose",
    "select",
    "option",
    "pick",
    "style",
];
const CONTINUOUS_STEMS: &[&str] = &[
    "adjust",
    "increase",
    "decrease",
    "boost",
    "experiment",
    "lightness",
    "brightness",
    "saturation",
    "exposure",
    "contrast",
    "hue",
    "tint",
    "temperature",
    "level",
    "setting",
    "shift",
    "warm",
    "cool",
];

/// Keyword-based requirement tags for a free-text task. Falls back to
/// continuous value adjustment when nothing matches.
pub fn derive_tags(description: &str) -> BTreeSet<RequirementTag> {
    let lower = description.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let hit = |stems: &[&str]| {
        tokens
            .iter()
            .any(|t| stems.iter().any(|s| t.starts_with(s)))
    };
    let mut tags = BTreeSet::new();
    if hit(CONTINUOUS_STEMS) {
        tags.insert(RequirementTag::ContinuousValue);
    }
    if hit(DISCRETE_STEMS) {
        tags.insert(RequirementTag::DiscreteValue);
    }
    if hit(COLOR_STEMS) {
        tags.insert(RequirementTag::ColorAdjust);
    }
    if hit(POSITION_STEMS) {
        tags.insert(RequirementTag::PositionAdjust);
    }
    if tags.is_empty() {
        tags.insert(RequirementTag::ContinuousValue);
    }
    tags
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantTask {
    pub name: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectChoice {
    pub kind: ControlKind,
    pub rationale: String,
}

/// The parsed answer of one reasoning run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningOutcome {
    pub task: String,
    pub relevant_tasks: Vec<RelevantTask>,
    /// Controls in the order the model listed them; the first is its top pick.
    pub per_aspect: BTreeMap<Aspect, Vec<AspectChoice>>,
    pub raw_response: String,
    /// Control names removed by the sanity filter.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendedControl {
    pub kind: ControlKind,
    pub weight: u32,
    pub score: u32,
    pub rationale: String,
}

/// Aggregated recommendation.
///
/// Per aspect, the weights count the runs whose top pick was that control,
/// so they sum to the number of runs that produced a pick for the aspect.
/// Scores sum to [`SCORE_TOTAL`] whenever the aspect has any weight. An
/// `n_runs` of 0 marks the deterministic offline path, where weights are
/// summed dataset counts instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedRecommendation {
    pub task: String,
    pub n_runs: u32,
    pub per_aspect: BTreeMap<Aspect, Vec<RecommendedControl>>,
}

impl WeightedRecommendation {
    /// Distinct recommended kinds across aspects, in catalog order.
    pub fn kinds(&self) -> Vec<ControlKind> {
        let set: BTreeSet<ControlKind> = self
            .per_aspect
            .values()
            .flat_map(|v| v.iter().map(|c| c.kind))
            .collect();
        set.into_iter().collect()
    }

    pub fn top(&self, aspect: Aspect) -> Option<ControlKind> {
        self.per_aspect
            .get(&aspect)
            .and_then(|v| v.first())
            .map(|c| c.kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recommendation serializes")
    }
}

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

/// Assembles the reasoning prompt. Passing no dataset yields the
/// no-dataset prompt, which carries no dataset section at all.
pub fn build_reasoning_prompt(
    ctx: &UserContext,
    dataset: Option<&PreferenceDataset>,
    catalog: &ControlCatalog,
) -> PromptPair {
    let system = match dataset {
        Some(_) => prompts::REASONING_SYSTEM,
        None => prompts::REASONING_SYSTEM_NO_DATASET,
    };
    let mut user = String::new();
    let _ = writeln!(
        user,
        "{}\n{}\n",
        prompts::TASK_HEADING,
        ctx.task_description.trim()
    );
    let aspects: Vec<&str> = ctx.aspects.iter().map(|a| a.id()).collect();
    let _ = writeln!(
        user,
        "{}\n{}\n",
        prompts::ASPECTS_HEADING,
        aspects.join(", ")
    );
    let names: Vec<&str> = catalog.kinds().iter().map(|k| k.canonical_name()).collect();
    let _ = writeln!(
        user,
        "{}\n{}",
        prompts::CANDIDATES_HEADING,
        names.join(", ")
    );
    if let Some(ds) = dataset {
        let body = String::from_utf8(ds.save()).expect("dataset JSON is UTF-8");
        let _ = write!(user, "\n{}\n{}", prompts::DATASET_HEADING, body);
    }
    PromptPair {
        system: system.to_string(),
        user,
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

fn normalize_key(k: &str) -> String {
    k.trim()
        .to_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c })
        .collect()
}

fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn relevant_tasks(value: Option<&Value>, dataset: Option<&PreferenceDataset>) -> Vec<RelevantTask> {
    let Some(value) = value else {
        return Vec::new();
    };
    let known: Vec<&str> = dataset
        .map(|d| d.tasks().iter().map(|t| t.task.name.as_str()).collect())
        .unwrap_or_default();
    let items: Vec<String> = match value {
        Value::Array(a) => a.iter().map(text_of).collect(),
        other => vec![text_of(other)],
    };
    let mut out = Vec::new();
    for item in items {
        let mentioned: Vec<&str> = known.iter().copied().filter(|n| item.contains(n)).collect();
        if mentioned.is_empty() {
            if !item.trim().is_empty() && matches!(value, Value::Array(_)) {
                out.push(RelevantTask {
                    name: item.trim().to_string(),
                    rationale: item.clone(),
                });
            }
            continue;
        }
        for name in mentioned {
            if !out.iter().any(|r: &RelevantTask| r.name == name) {
                out.push(RelevantTask {
                    name: name.to_string(),
                    rationale: item.clone(),
                });
            }
        }
    }
    out
}

/// Parses one model answer, applying the catalog sanity filter.
pub fn parse_outcome(
    text: &str,
    ctx: &UserContext,
    dataset: Option<&PreferenceDataset>,
    catalog: &ControlCatalog,
) -> Result<ReasoningOutcome, ReasoningError> {
    let doc = extract_json(text).map_err(|e| ReasoningError::Schema(e.to_string()))?;
    let fields: Map<String, Value> = match doc {
        Value::Object(m) => m.into_iter().map(|(k, v)| (normalize_key(&k), v)).collect(),
        _ => unreachable!("extract_json only returns objects"),
    };

    let mut per_aspect = BTreeMap::new();
    let mut dropped = Vec::new();
    for &aspect in &ctx.aspects {
        let key = format!("{}_reasoning", aspect.id());
        let entries = match fields.get(&key) {
            Some(Value::Object(m)) => m,
            Some(_) => return Err(ReasoningError::Schema(format!("{key:?} is not an object"))),
            None => return Err(ReasoningError::Schema(format!("missing {key:?}"))),
        };
        let mut choices: Vec<AspectChoice> = Vec::new();
        for (name, why) in entries {
            match parse_kind(name) {
                Ok(kind) if catalog.contains(kind) => {
                    if !choices.iter().any(|c| c.kind == kind) {
                        choices.push(AspectChoice {
                            kind,
                            rationale: text_of(why),
                        });
                    }
                }
                _ => dropped.push(name.clone()),
            }
        }
        per_aspect.insert(aspect, choices);
    }

    Ok(ReasoningOutcome {
        task: ctx.task_description.clone(),
        relevant_tasks: relevant_tasks(fields.get("relevant_tasks_from_the_dataset"), dataset),
        per_aspect,
        raw_response: text.to_string(),
        dropped,
    })
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

/// One reasoning run. A schema failure is retried once with a fresh call.
pub async fn reason_once(
    ctx: &UserContext,
    dataset: Option<&PreferenceDataset>,
    catalog: &ControlCatalog,
    gateway: &Gateway,
) -> Result<ReasoningOutcome, ReasoningError> {
    ctx.validate()?;
    let prompt = build_reasoning_prompt(ctx, dataset, catalog);
    let request = gateway.request(prompt.system, prompt.user);
    let mut last = None;
    for attempt in 0..2 {
        let response = gateway.complete(&request).await?;
        match parse_outcome(&response.text, ctx, dataset, catalog) {
            Ok(outcome) => return Ok(outcome),
            Err(e) => {
                tracing::debug!(attempt, error = %e, "reasoning answer rejected");
                last = Some(e);
            }
        }
    }
    Err(last.expect("two attempts were made"))
}

/// Runs `n_runs` reasoning passes concurrently and aggregates them.
///
/// More than half of the runs failing aborts with `EnsembleFailed`; when
/// every run fails on the gateway itself, that gateway error is returned.
pub async fn reason_ensemble(
    ctx: &UserContext,
    dataset: Option<&PreferenceDataset>,
    catalog: &ControlCatalog,
    gateway: &Gateway,
    n_runs: u32,
) -> Result<WeightedRecommendation, ReasoningError> {
    if n_runs == 0 {
        return Err(ReasoningError::ZeroRuns);
    }
    ctx.validate()?;
    let results = join_all((0..n_runs).map(|_| reason_once(ctx, dataset, catalog, gateway))).await;

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(e),
        }
    }
    let failed = failures.len() as u32;
    if failed * 2 > n_runs {
        if outcomes.is_empty() {
            if let Some(ReasoningError::Gateway(e)) = failures.first() {
                if failures
                    .iter()
                    .all(|f| matches!(f, ReasoningError::Gateway(_)))
                {
                    return Err(ReasoningError::Gateway(e.clone()));
                }
            }
        }
        return Err(ReasoningError::EnsembleFailed {
            failed,
            n_runs,
            first: failures[0].to_string(),
        });
    }
    if failed > 0 {
        tracing::warn!(failed, n_runs, "some reasoning runs failed");
    }
    aggregate(ctx, &outcomes)
}

/// Folds run outcomes into weights and scores. Order of `outcomes` does not
/// affect the result.
pub fn aggregate(
    ctx: &UserContext,
    outcomes: &[ReasoningOutcome],
) -> Result<WeightedRecommendation, ReasoningError> {
    let mut per_aspect = BTreeMap::new();
    for &aspect in &ctx.aspects {
        let mut weights: BTreeMap<ControlKind, u32> = BTreeMap::new();
        let mut rationales: BTreeMap<ControlKind, Vec<&str>> = BTreeMap::new();
        for o in outcomes {
            let Some(choices) = o.per_aspect.get(&aspect) else {
                continue;
            };
            if let Some(top) = choices.first() {
                *weights.entry(top.kind).or_default() += 1;
            }
            for c in choices {
                rationales.entry(c.kind).or_default().push(&c.rationale);
            }
        }
        let controls = if weights.is_empty() {
            Vec::new()
        } else {
            let scores = normalize_scores(&weights, SCORE_TOTAL)?;
            ranked(&weights, &scores, |k| {
                digest(rationales.get(&k).map(Vec::as_slice).unwrap_or(&[]))
            })
        };
        per_aspect.insert(aspect, controls);
    }
    Ok(WeightedRecommendation {
        task: ctx.task_description.clone(),
        n_runs: outcomes.len() as u32,
        per_aspect,
    })
}

fn ranked(
    weights: &BTreeMap<ControlKind, u32>,
    scores: &BTreeMap<ControlKind, u32>,
    rationale: impl Fn(ControlKind) -> String,
) -> Vec<RecommendedControl> {
    let mut out: Vec<RecommendedControl> = weights
        .iter()
        .filter(|(_, &w)| w > 0)
        .map(|(&kind, &weight)| RecommendedControl {
            kind,
            weight,
            score: scores[&kind],
            rationale: rationale(kind),
        })
        .collect();
    out.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.kind.cmp(&b.kind)));
    out
}

/// Most frequent string; ties go to the lexicographically smallest.
fn digest(items: &[&str]) -> String {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for s in items {
        *freq.entry(s).or_default() += 1;
    }
    let best = freq.values().copied().max().unwrap_or(0);
    freq.into_iter()
        .find(|&(_, n)| n == best)
        .map(|(s, _)| s.to_string())
        .unwrap_or_default()
}

/// Largest-remainder apportionment of `total` points proportional to
/// `weights`. Equal remainders favor the larger weight, then catalog order.
pub fn normalize_scores(
    weights: &BTreeMap<ControlKind, u32>,
    total: u32,
) -> Result<BTreeMap<ControlKind, u32>, ReasoningError> {
    let sum: u64 = weights.values().map(|&w| u64::from(w)).sum();
    if sum == 0 {
        return Err(ReasoningError::EmptyWeights);
    }
    let total = u64::from(total);
    let mut scores: BTreeMap<ControlKind, u32> = BTreeMap::new();
    // (remainder numerator over `sum`, weight, kind)
    let mut remainders: Vec<(u64, u32, ControlKind)> = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (&kind, &w) in weights {
        let quota = u64::from(w) * total;
        let floor = quota / sum;
        assigned += floor;
        scores.insert(kind, floor as u32);
        remainders.push((quota % sum, w, kind));
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    for &(_, _, kind) in remainders.iter().take((total - assigned) as usize) {
        *scores.get_mut(&kind).expect("kind present") += 1;
    }
    Ok(scores)
}

/// Deterministic recommendation without a model: dataset tasks sharing a
/// requirement tag with the user task are treated as relevant, and their
/// vote counts are summed per aspect.
pub fn fallback_recommendation(
    ctx: &UserContext,
    dataset: &PreferenceDataset,
) -> Result<WeightedRecommendation, ReasoningError> {
    ctx.validate()?;
    let tags = ctx.tags();
    let relevant: Vec<_> = dataset
        .tasks()
        .iter()
        .filter(|t| !t.task.requirement_tags.is_disjoint(&tags))
        .collect();
    if relevant.is_empty() {
        return Err(ReasoningError::NoRelevantTask);
    }
    let mut per_aspect = BTreeMap::new();
    for &aspect in &ctx.aspects {
        let mut weights: BTreeMap<ControlKind, u32> = BTreeMap::new();
        let mut reasons: BTreeMap<ControlKind, Vec<&str>> = BTreeMap::new();
        for t in &relevant {
            if let Some(r) = t.record(aspect) {
                for (kind, v) in &r.votes {
                    *weights.entry(*kind).or_default() += v.count;
                    reasons
                        .entry(*kind)
                        .or_default()
                        .extend(v.reasons.iter().map(String::as_str));
                }
            }
        }
        weights.retain(|_, w| *w > 0);
        let controls = if weights.is_empty() {
            Vec::new()
        } else {
            let scores = normalize_scores(&weights, SCORE_TOTAL)?;
            ranked(&weights, &scores, |k| {
                digest(reasons.get(&k).map(Vec::as_slice).unwrap_or(&[]))
            })
        };
        per_aspect.insert(aspect, controls);
    }
    Ok(WeightedRecommendation {
        task: ctx.task_description.clone(),
        n_runs: 0,
        per_aspect,
    })
}
