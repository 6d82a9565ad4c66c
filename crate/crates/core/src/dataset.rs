//! The grounding dataset: tasks, the three preference aspects, and per-aspect
//! control vote counts with the respondents' reasons.
//!
//! Datasets are immutable values. [`PreferenceDataset::merge`] and
//! [`PreferenceDataset::subsample`] build new snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::marker::PhantomData;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{parse_kind, ControlKind, UnknownControl};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("schema error at {path}: {detail}")]
    Schema { path: String, detail: String },
    #[error("dataset invariants violated: {}", .0.join("; "))]
    Invariant(Vec<String>),
    #[error("no record for task {task:?}, aspect {aspect}")]
    NotFound { task: String, aspect: Aspect },
    #[error("cannot draw {n} votes from a cell holding {available}")]
    NTooLarge { n: u32, available: u32 },
    #[error(transparent)]
    UnknownControl(#[from] UnknownControl),
    #[error("unknown aspect: {0:?}")]
    UnknownAspect(String),
    #[error("unknown task: {0:?}")]
    UnknownTask(String),
}

// ---------------------------------------------------------------------------
// Small closed vocabularies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Predictability,
    Efficiency,
    Explorability,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [
        Aspect::Predictability,
        Aspect::Efficiency,
        Aspect::Explorability,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Aspect::Predictability => "predictability",
            Aspect::Efficiency => "efficiency",
            Aspect::Explorability => "explorability",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Aspect::Predictability => "Predictability",
            Aspect::Efficiency => "Efficiency",
            Aspect::Explorability => "Explorability",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Aspect {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        Aspect::ALL
            .into_iter()
            .find(|a| a.id() == t)
            .ok_or_else(|| DatasetError::UnknownAspect(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementTag {
    ContinuousValue,
    DiscreteValue,
    ColorAdjust,
    PositionAdjust,
}

impl RequirementTag {
    pub const ALL: [RequirementTag; 4] = [
        RequirementTag::ContinuousValue,
        RequirementTag::DiscreteValue,
        RequirementTag::ColorAdjust,
        RequirementTag::PositionAdjust,
    ];

    pub fn id(self) -> &'static str {
        match self {
            RequirementTag::ContinuousValue => "continuous_value",
            RequirementTag::DiscreteValue => "discrete_value",
            RequirementTag::ColorAdjust => "color_adjust",
            RequirementTag::PositionAdjust => "position_adjust",
        }
    }
}

impl FromStr for RequirementTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequirementTag::ALL
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| format!("unknown requirement tag {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStyle {
    Exploration,
    Precision,
}

impl GoalStyle {
    fn id(self) -> &'static str {
        match self {
            GoalStyle::Exploration => "exploration",
            GoalStyle::Precision => "precision",
        }
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub name: String,
    pub description: String,
    pub requirement_tags: BTreeSet<RequirementTag>,
    pub goal_style: GoalStyle,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KindVotes {
    pub count: u32,
    pub reasons: Vec<String>,
}

/// Votes for one (task, aspect) cell, keyed in catalog order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectRecord {
    pub aspect: Aspect,
    pub votes: BTreeMap<ControlKind, KindVotes>,
}

impl AspectRecord {
    pub fn total(&self) -> u32 {
        self.votes.values().map(|v| v.count).sum()
    }

    pub fn count(&self, kind: ControlKind) -> u32 {
        self.votes.get(&kind).map_or(0, |v| v.count)
    }

    pub fn counts(&self) -> BTreeMap<ControlKind, u32> {
        self.votes.iter().map(|(k, v)| (*k, v.count)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPreferences {
    pub task: TaskEntry,
    /// At most one record per aspect, in aspect order.
    pub records: Vec<AspectRecord>,
}

impl TaskPreferences {
    pub fn record(&self, aspect: Aspect) -> Option<&AspectRecord> {
        self.records.iter().find(|r| r.aspect == aspect)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    Unique(ControlKind, u32),
    /// Kinds sharing the maximal count, in catalog order.
    Tie(Vec<ControlKind>, u32),
}

/// One collected preference vote, ready to merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceSelection {
    pub task: String,
    pub aspect: Aspect,
    pub kind: ControlKind,
    pub reason: String,
    /// Used to create the task when the dataset does not hold it yet.
    pub task_entry: Option<TaskEntry>,
}

impl PreferenceSelection {
    /// Builds a selection from raw strings as they arrive from clients.
    pub fn parse(task: &str, aspect: &str, kind: &str, reason: &str) -> Result<Self, DatasetError> {
        Ok(Self {
            task: task.to_string(),
            aspect: aspect.parse()?,
            kind: parse_kind(kind)?,
            reason: reason.to_string(),
            task_entry: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellSummary {
    pub task: String,
    pub aspect: Aspect,
    pub total: u32,
    pub counts: BTreeMap<ControlKind, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub provenance: String,
    pub respondents_per_cell: u32,
    pub tasks: usize,
    pub cells: Vec<CellSummary>,
    pub total_pieces: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceDataset {
    tasks: Vec<TaskPreferences>,
    provenance: String,
    respondents_per_cell: u32,
}

impl PreferenceDataset {
    /// Builds a dataset, sorting into canonical order and checking invariants.
    pub fn new(
        mut tasks: Vec<TaskPreferences>,
        provenance: impl Into<String>,
        respondents_per_cell: u32,
    ) -> Result<Self, DatasetError> {
        tasks.sort_by(|a, b| a.task.name.cmp(&b.task.name));
        for t in &mut tasks {
            t.records.sort_by_key(|r| r.aspect);
            for r in &mut t.records {
                r.votes.retain(|_, v| v.count > 0 || !v.reasons.is_empty());
            }
        }
        let ds = Self {
            tasks,
            provenance: provenance.into(),
            respondents_per_cell,
        };
        let violations = ds.violations();
        if violations.is_empty() {
            Ok(ds)
        } else {
            Err(DatasetError::Invariant(violations))
        }
    }

    pub fn empty(provenance: impl Into<String>, respondents_per_cell: u32) -> Self {
        Self {
            tasks: Vec::new(),
            provenance: provenance.into(),
            respondents_per_cell,
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.respondents_per_cell == 0 {
            out.push("respondents_per_cell must be positive".to_string());
        }
        for (i, t) in self.tasks.iter().enumerate() {
            let name = &t.task.name;
            if name.trim().is_empty() {
                out.push("task name must be non-empty".to_string());
            }
            if i > 0 && self.tasks[i - 1].task.name == *name {
                out.push(format!("task {name:?} appears more than once"));
            }
            if t.task.requirement_tags.is_empty() {
                out.push(format!("task {name:?} has no requirement tags"));
            }
            for (j, r) in t.records.iter().enumerate() {
                if j > 0 && t.records[j - 1].aspect == r.aspect {
                    out.push(format!(
                        "task {name:?} has aspect {} more than once",
                        r.aspect
                    ));
                }
                if r.total() == 0 {
                    out.push(format!(
                        "task {name:?}, {}: record holds no votes",
                        r.aspect
                    ));
                }
                for (kind, v) in &r.votes {
                    if v.count == 0 && !v.reasons.is_empty() {
                        out.push(format!(
                            "task {name:?}, {}: reasons given for {kind} with zero count",
                            r.aspect
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn tasks(&self) -> &[TaskPreferences] {
        &self.tasks
    }

    pub fn task(&self, name: &str) -> Option<&TaskPreferences> {
        self.tasks
            .binary_search_by(|t| t.task.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.tasks[i])
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn respondents_per_cell(&self) -> u32 {
        self.respondents_per_cell
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&TaskEntry, &AspectRecord)> {
        self.tasks
            .iter()
            .flat_map(|t| t.records.iter().map(move |r| (&t.task, r)))
    }

    pub fn cell_count(&self) -> usize {
        self.tasks.iter().map(|t| t.records.len()).sum()
    }

    /// True when every cell holds exactly `respondents_per_cell` votes, as a
    /// freshly collected dataset does.
    pub fn is_balanced(&self) -> bool {
        self.cells()
            .all(|(_, r)| r.total() == self.respondents_per_cell)
    }

    pub fn record(&self, task: &str, aspect: Aspect) -> Result<&AspectRecord, DatasetError> {
        self.task(task)
            .and_then(|t| t.record(aspect))
            .ok_or_else(|| DatasetError::NotFound {
                task: task.to_string(),
                aspect,
            })
    }

    pub fn total_pieces(&self) -> u64 {
        self.cells().map(|(_, r)| u64::from(r.total())).sum()
    }

    pub fn mode(&self, task: &str, aspect: Aspect) -> Result<Mode, DatasetError> {
        let record = self.record(task, aspect)?;
        let best = record.votes.values().map(|v| v.count).max().unwrap_or(0);
        let kinds: Vec<ControlKind> = record
            .votes
            .iter()
            .filter(|(_, v)| v.count == best)
            .map(|(k, _)| *k)
            .collect();
        Ok(match kinds.as_slice() {
            [single] => Mode::Unique(*single, best),
            _ => Mode::Tie(kinds, best),
        })
    }

    /// Draws `n` votes without replacement from every cell.
    ///
    /// Each cell is expanded into its vote multiset (a vote of kind `k` at
    /// position `i` carries `reasons[i]` when there is one) and shuffled by a
    /// generator seeded from `(seed, task, aspect)`.
    pub fn subsample(&self, n: u32, seed: u64) -> Result<Self, DatasetError> {
        if n == 0 || n > self.respondents_per_cell {
            return Err(DatasetError::NTooLarge {
                n,
                available: self.respondents_per_cell,
            });
        }
        // Drawing every vote of every cell leaves the dataset unchanged.
        if self.cells().all(|(_, r)| r.total() == n) {
            return Ok(self.clone());
        }
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for t in &self.tasks {
            let mut records = Vec::with_capacity(t.records.len());
            for r in &t.records {
                let total = r.total();
                if n > total {
                    return Err(DatasetError::NTooLarge {
                        n,
                        available: total,
                    });
                }
                let mut votes: Vec<(ControlKind, usize)> = r
                    .votes
                    .iter()
                    .flat_map(|(kind, v)| (0..v.count as usize).map(move |i| (*kind, i)))
                    .collect();
                let mut rng = cell_rng(seed, &t.task.name, r.aspect);
                votes.shuffle(&mut rng);
                votes.truncate(n as usize);
                votes.sort_unstable();

                let mut out: BTreeMap<ControlKind, KindVotes> = BTreeMap::new();
                for (kind, i) in votes {
                    let e = out.entry(kind).or_default();
                    e.count += 1;
                    // Reasons beyond the count cannot be attributed to a vote.
                    if let Some(reason) = r.votes[&kind].reasons.get(i) {
                        e.reasons.push(reason.clone());
                    }
                }
                records.push(AspectRecord {
                    aspect: r.aspect,
                    votes: out,
                });
            }
            tasks.push(TaskPreferences {
                task: t.task.clone(),
                records,
            });
        }
        let provenance = format!("{} [subsample n={n} seed={seed}]", self.provenance);
        Self::new(tasks, provenance, n)
    }

    /// Adds one vote per selection. Non-empty reasons are appended verbatim.
    pub fn merge(&self, selections: &[PreferenceSelection]) -> Result<Self, DatasetError> {
        let mut next = self.clone();
        for s in selections {
            let idx = match next
                .tasks
                .binary_search_by(|t| t.task.name.as_str().cmp(&s.task))
            {
                Ok(i) => i,
                Err(i) => {
                    let entry = s
                        .task_entry
                        .clone()
                        .filter(|e| e.name == s.task)
                        .ok_or_else(|| DatasetError::UnknownTask(s.task.clone()))?;
                    next.tasks.insert(
                        i,
                        TaskPreferences {
                            task: entry,
                            records: Vec::new(),
                        },
                    );
                    i
                }
            };
            let task = &mut next.tasks[idx];
            let ridx = match task.records.binary_search_by_key(&s.aspect, |r| r.aspect) {
                Ok(i) => i,
                Err(i) => {
                    task.records.insert(
                        i,
                        AspectRecord {
                            aspect: s.aspect,
                            votes: BTreeMap::new(),
                        },
                    );
                    i
                }
            };
            let votes = task.records[ridx].votes.entry(s.kind).or_default();
            votes.count += 1;
            if !s.reason.trim().is_empty() {
                votes.reasons.push(s.reason.clone());
            }
        }
        let violations = next.violations();
        if violations.is_empty() {
            Ok(next)
        } else {
            Err(DatasetError::Invariant(violations))
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            provenance: self.provenance.clone(),
            respondents_per_cell: self.respondents_per_cell,
            tasks: self.tasks.len(),
            cells: self
                .cells()
                .map(|(t, r)| CellSummary {
                    task: t.name.clone(),
                    aspect: r.aspect,
                    total: r.total(),
                    counts: r.counts(),
                })
                .collect(),
            total_pieces: self.total_pieces(),
        }
    }

    // -- serialization -----------------------------------------------------

    pub fn to_json_value(&self) -> Value {
        let mut tasks = Map::new();
        for t in &self.tasks {
            let mut prefs = Map::new();
            for r in &t.records {
                let mut kinds = Map::new();
                for (kind, v) in &r.votes {
                    kinds.insert(
                        kind.id().to_string(),
                        json!({ "count": v.count, "reasons": v.reasons }),
                    );
                }
                prefs.insert(r.aspect.id().to_string(), Value::Object(kinds));
            }
            let tags: Vec<&str> = t.task.requirement_tags.iter().map(|t| t.id()).collect();
            tasks.insert(
                t.task.name.clone(),
                json!({
                    "task_description": t.task.description,
                    "task_requirements": tags,
                    "goal_style": t.task.goal_style.id(),
                    "user_preference_aspects": Value::Object(prefs),
                }),
            );
        }
        json!({
            "provenance": self.provenance,
            "respondents_per_cell": self.respondents_per_cell,
            "tasks": Value::Object(tasks),
        })
    }

    /// Canonical, byte-stable serialization (`preferences.json`).
    pub fn save(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.to_json_value()).expect("dataset serializes");
        out.push(b'\n');
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Self, DatasetError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let raw: RawDataset =
            serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
                path: e.path().to_string(),
                detail: e.inner().to_string(),
            })?;
        raw.into_dataset()
    }
}

fn cell_rng(seed: u64, task: &str, aspect: Aspect) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task.as_bytes());
    h.update([0u8]);
    h.update(aspect.id().as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

// ---------------------------------------------------------------------------
// Raw document shapes
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    provenance: String,
    respondents_per_cell: u32,
    tasks: UniqueMap<RawTask>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    task_description: String,
    task_requirements: Vec<RequirementTag>,
    goal_style: GoalStyle,
    #[serde(default)]
    user_preference_aspects: UniqueMap<UniqueMap<RawVotes>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVotes {
    count: u32,
    #[serde(default)]
    reasons: Vec<String>,
}

impl RawDataset {
    fn into_dataset(self) -> Result<PreferenceDataset, DatasetError> {
        let mut problems = Vec::new();
        let mut tasks = Vec::new();
        for (name, raw) in self.tasks.0 {
            let mut records = Vec::new();
            for (aspect_name, kinds) in raw.user_preference_aspects.0 {
                let aspect = match aspect_name.parse::<Aspect>() {
                    Ok(a) => a,
                    Err(_) => {
                        problems.push(format!("task {name:?}: unknown aspect {aspect_name:?}"));
                        continue;
                    }
                };
                let mut votes: BTreeMap<ControlKind, KindVotes> = BTreeMap::new();
                for (kind_name, v) in kinds.0 {
                    match parse_kind(&kind_name) {
                        Ok(kind) => {
                            if votes.contains_key(&kind) {
                                problems.push(format!(
                                    "task {name:?}, {aspect}: {kind} listed more than once"
                                ));
                            }
                            votes.insert(
                                kind,
                                KindVotes {
                                    count: v.count,
                                    reasons: v.reasons,
                                },
                            );
                        }
                        Err(e) => problems.push(format!("task {name:?}, {aspect}: {e}")),
                    }
                }
                records.push(AspectRecord { aspect, votes });
            }
            let mut sorted = records.iter().map(|r| r.aspect).collect::<Vec<_>>();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                problems.push(format!("task {name:?}: aspect listed more than once"));
            }
            tasks.push(TaskPreferences {
                task: TaskEntry {
                    name,
                    description: raw.task_description,
                    requirement_tags: raw.task_requirements.into_iter().collect(),
                    goal_style: raw.goal_style,
                },
                records,
            });
        }
        if !problems.is_empty() {
            return Err(DatasetError::Invariant(problems));
        }
        PreferenceDataset::new(tasks, self.provenance, self.respondents_per_cell)
    }
}

/// A JSON object read in document order that rejects duplicate keys.
struct UniqueMap<V>(Vec<(String, V)>);

impl<V> Default for UniqueMap<V> {
    fn default() -> Self {
        Self(Vec::new())
    }
}

impl<'de, V: Deserialize<'de>> Deserialize<'de> for UniqueMap<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V2<V>(PhantomData<V>);
        impl<'de, V: Deserialize<'de>> Visitor<'de> for V2<V> {
            type Value = UniqueMap<V>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out: Vec<(String, V)> = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    if out.iter().any(|(k, _)| *k == key) {
                        return Err(de::Error::custom(format!("duplicate key {key:?}")));
                    }
                    let value = map.next_value()?;
                    out.push((key, value));
                }
                Ok(UniqueMap(out))
            }
        }
        deserializer.deserialize_map(V2(PhantomData))
    }
}

/// Datasets bundled with the crate.
pub mod fixtures {
    use super::PreferenceDataset;

    /// The three formative-study tasks at ten respondents per cell.
    pub const TABLE1_JSON: &str = include_str!("../data/table1.json");
    /// All eight crowdsourcing tasks at thirty respondents per cell.
    pub const FULL_JSON: &str = include_str!("../data/preferences.json");

    pub fn table1() -> PreferenceDataset {
        PreferenceDataset::load(TABLE1_JSON.as_bytes()).expect("bundled fixture is valid")
    }

    pub fn full() -> PreferenceDataset {
        PreferenceDataset::load(FULL_JSON.as_bytes()).expect("bundled fixture is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell(pairs: &[(ControlKind, u32)]) -> BTreeMap<ControlKind, KindVotes> {
        pairs
            .iter()
            .map(|&(k, c)| {
                (
                    k,
                    KindVotes {
                        count: c,
                        reasons: (0..c.min(2)).map(|i| format!("{k} reason {i}")).collect(),
                    },
                )
            })
            .collect()
    }

    fn small(pairs: &[(ControlKind, u32)]) -> PreferenceDataset {
        let total: u32 = pairs.iter().map(|p| p.1).sum();
        PreferenceDataset::new(
            vec![TaskPreferences {
                task: TaskEntry {
                    name: "t".into(),
                    description: "adjust a value".into(),
                    requirement_tags: [RequirementTag::ContinuousValue].into(),
                    goal_style: GoalStyle::Exploration,
                },
                records: vec![AspectRecord {
                    aspect: Aspect::Efficiency,
                    votes: cell(pairs),
                }],
            }],
            "test",
            total,
        )
        .unwrap()
    }

    #[test]
    fn table1_counts() {
        let d = fixtures::table1();
        assert_eq!(d.total_pieces(), 90);
        assert!(d.cells().all(|(_, r)| r.total() == 10));
        assert!(d.is_balanced());
        assert_eq!(
            d.mode("image_adjust_lightness", Aspect::Explorability)
                .unwrap(),
            Mode::Unique(ControlKind::Slider, 9)
        );
        assert_eq!(
            d.mode("image_adjust_hue", Aspect::Predictability).unwrap(),
            Mode::Unique(ControlKind::ColorWheel, 7)
        );
        assert_eq!(
            d.mode("image_adjust_lightness", Aspect::Predictability)
                .unwrap(),
            Mode::Unique(ControlKind::PresetButtons, 7)
        );
    }

    #[test]
    fn full_fixture_counts() {
        let d = fixtures::full();
        assert_eq!(d.tasks().len(), 8);
        assert_eq!(d.cell_count(), 24);
        assert_eq!(d.total_pieces(), 720);
        assert!(d.is_balanced());
        assert!(d.task("image_adjust_fall_color").is_some());
    }

    #[test]
    fn fixtures_are_canonical() {
        assert_eq!(fixtures::table1().save(), fixtures::TABLE1_JSON.as_bytes());
        assert_eq!(fixtures::full().save(), fixtures::FULL_JSON.as_bytes());
    }

    #[test]
    fn empty_total() {
        assert_eq!(PreferenceDataset::empty("none", 1).total_pieces(), 0);
    }

    #[test]
    fn tie_in_catalog_order() {
        let d = small(&[(ControlKind::Dropdown, 5), (ControlKind::Slider, 5)]);
        assert_eq!(
            d.mode("t", Aspect::Efficiency).unwrap(),
            Mode::Tie(vec![ControlKind::Slider, ControlKind::Dropdown], 5)
        );
        assert!(matches!(
            d.mode("t", Aspect::Explorability),
            Err(DatasetError::NotFound { .. })
        ));
    }

    #[test]
    fn load_rejects_off_catalog_kind() {
        let doc = r#"{"provenance":"x","respondents_per_cell":1,"tasks":{"t":{
            "task_description":"d","task_requirements":["continuous_value"],"goal_style":"precision",
            "user_preference_aspects":{"efficiency":{"knob":{"count":1,"reasons":[]}}}}}}"#;
        match PreferenceDataset::load(doc.as_bytes()) {
            Err(DatasetError::Invariant(v)) => assert!(v[0].contains("knob")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_reports_schema_path() {
        let doc = r#"{"provenance":"x","respondents_per_cell":1,"tasks":{"t":{
            "task_description":"d","task_requirements":["sideways"],"goal_style":"precision"}}}"#;
        match PreferenceDataset::load(doc.as_bytes()) {
            Err(DatasetError::Schema { path, .. }) => {
                assert_eq!(path, "tasks.t.task_requirements[0]")
            }
            other => panic!("{other:?}"),
        }
        let dup = r#"{"provenance":"x","respondents_per_cell":1,"tasks":{"t":{
            "task_description":"d","task_requirements":["color_adjust"],"goal_style":"precision",
            "user_preference_aspects":{"efficiency":{"slider":{"count":1}},"efficiency":{"slider":{"count":1}}}}}}"#;
        assert!(matches!(
            PreferenceDataset::load(dup.as_bytes()),
            Err(DatasetError::Schema { .. })
        ));
    }

    #[test]
    fn load_rejects_empty_cell_and_orphan_reasons() {
        let doc = r#"{"provenance":"x","respondents_per_cell":1,"tasks":{"t":{
            "task_description":"d","task_requirements":["color_adjust"],"goal_style":"precision",
            "user_preference_aspects":{"efficiency":{"slider":{"count":0,"reasons":["r"]}}}}}}"#;
        match PreferenceDataset::load(doc.as_bytes()) {
            Err(DatasetError::Invariant(v)) => assert_eq!(v.len(), 2, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subsample_identity_and_sizes() {
        let d = fixtures::full();
        assert_eq!(d.subsample(30, 7).unwrap().tasks(), d.tasks());
        for n in [10, 25] {
            let s = d.subsample(n, 7).unwrap();
            assert!(s.cells().all(|(_, r)| r.total() == n));
            assert_eq!(s.respondents_per_cell(), n);
            assert_eq!(s.save(), d.subsample(n, 7).unwrap().save());
        }
        assert_ne!(
            d.subsample(10, 1).unwrap().save(),
            d.subsample(10, 2).unwrap().save()
        );
        assert!(matches!(
            d.subsample(31, 0),
            Err(DatasetError::NTooLarge { .. })
        ));
        assert!(matches!(
            d.subsample(0, 0),
            Err(DatasetError::NTooLarge { .. })
        ));
    }

    #[test]
    fn subsample_never_exceeds_source_counts() {
        let d = fixtures::full();
        let s = d.subsample(10, 99).unwrap();
        for (t, r) in s.cells() {
            let src = d.record(&t.name, r.aspect).unwrap();
            for (kind, v) in &r.votes {
                assert!(v.count <= src.count(*kind));
                assert!(v.reasons.len() <= v.count as usize);
                assert!(v
                    .reasons
                    .iter()
                    .all(|x| src.votes[kind].reasons.contains(x)));
            }
        }
    }

    #[test]
    fn merge_increments() {
        let d = fixtures::table1();
        let sel =
            PreferenceSelection::parse("image_adjust_hue", "efficiency", "Slider", "fast").unwrap();
        let m = d.merge(std::slice::from_ref(&sel)).unwrap();
        let before = d.record("image_adjust_hue", Aspect::Efficiency).unwrap();
        let after = m.record("image_adjust_hue", Aspect::Efficiency).unwrap();
        assert_eq!(
            after.count(ControlKind::Slider),
            before.count(ControlKind::Slider) + 1
        );
        assert_eq!(
            after.votes[&ControlKind::Slider].reasons.last().unwrap(),
            "fast"
        );
        assert_eq!(d.merge(&[]).unwrap(), d);

        let three = vec![sel.clone(), sel.clone(), sel];
        assert_eq!(
            d.merge(&three).unwrap().total_pieces(),
            d.total_pieces() + 3
        );
    }

    #[test]
    fn merge_errors_and_new_tasks() {
        assert!(matches!(
            PreferenceSelection::parse("t", "speed", "slider", ""),
            Err(DatasetError::UnknownAspect(_))
        ));
        assert!(matches!(
            PreferenceSelection::parse("t", "efficiency", "knob", ""),
            Err(DatasetError::UnknownControl(_))
        ));
        let d = fixtures::table1();
        let mut sel = PreferenceSelection::parse("new_task", "efficiency", "dropdown", "").unwrap();
        assert!(matches!(
            d.merge(std::slice::from_ref(&sel)),
            Err(DatasetError::UnknownTask(_))
        ));
        sel.task_entry = Some(TaskEntry {
            name: "new_task".into(),
            description: "pick a filter".into(),
            requirement_tags: [RequirementTag::DiscreteValue].into(),
            goal_style: GoalStyle::Precision,
        });
        let m = d.merge(&[sel]).unwrap();
        assert_eq!(m.tasks().len(), 4);
        assert_eq!(
            m.record("new_task", Aspect::Efficiency)
                .unwrap()
                .count(ControlKind::Dropdown),
            1
        );
        assert_eq!(
            m.record("new_task", Aspect::Efficiency).unwrap().votes[&ControlKind::Dropdown]
                .reasons
                .len(),
            0
        );
    }

    fn arb_dataset() -> impl Strategy<Value = PreferenceDataset> {
        let cell = proptest::collection::btree_map(
            proptest::sample::select(ControlKind::ALL.to_vec()),
            1u32..6,
            1..4,
        );
        let task = (
            "[a-z]{1,6}",
            proptest::collection::vec(proptest::option::of(cell), 3),
        );
        proptest::collection::vec(task, 1..4).prop_filter_map("duplicate or empty", |tasks| {
            let mut out = Vec::new();
            for (name, cells) in tasks {
                let records: Vec<AspectRecord> = cells
                    .into_iter()
                    .zip(Aspect::ALL)
                    .filter_map(|(c, aspect)| {
                        c.map(|m| AspectRecord {
                            aspect,
                            votes: m
                                .into_iter()
                                .map(|(k, n)| {
                                    (
                                        k,
                                        KindVotes {
                                            count: n,
                                            reasons: vec![format!("{name} \"{k}\"")],
                                        },
                                    )
                                })
                                .collect(),
                        })
                    })
                    .collect();
                out.push(TaskPreferences {
                    task: TaskEntry {
                        name,
                        description: "desc".into(),
                        requirement_tags: [RequirementTag::ColorAdjust].into(),
                        goal_style: GoalStyle::Precision,
                    },
                    records,
                });
            }
            PreferenceDataset::new(out, "prop", 1).ok()
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(d in arb_dataset()) {
            let bytes = d.save();
            let back = PreferenceDataset::load(&bytes).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(back.save(), bytes);
        }

        #[test]
        fn merge_never_decreases(d in arb_dataset(), picks in proptest::collection::vec((0usize..8, 0usize..3, 0usize..8), 0..10)) {
            let names: Vec<String> = d.tasks().iter().map(|t| t.task.name.clone()).collect();
            let sels: Vec<_> = picks.iter().map(|&(t, a, k)| PreferenceSelection {
                task: names[t % names.len()].clone(),
                aspect: Aspect::ALL[a],
                kind: ControlKind::ALL[k],
                reason: String::new(),
                task_entry: None,
            }).collect();
            let m = d.merge(&sels).unwrap();
            prop_assert_eq!(m.total_pieces(), d.total_pieces() + sels.len() as u64);
            for (t, r) in d.cells() {
                let after = m.record(&t.name, r.aspect).unwrap();
                for k in ControlKind::ALL {
                    prop_assert!(after.count(k) >= r.count(k));
                }
            }
        }

        #[test]
        fn mode_scale_invariant(counts in proptest::collection::vec(0u32..10, 8), factor in 1u32..5) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let pairs: Vec<_> = ControlKind::ALL.iter().copied().zip(counts.iter().copied()).filter(|p| p.1 > 0).collect();
            let scaled: Vec<_> = pairs.iter().map(|&(k, c)| (k, c * factor)).collect();
            let a = small(&pairs).mode("t", Aspect::Efficiency).unwrap();
            let b = small(&scaled).mode("t", Aspect::Efficiency).unwrap();
            let kinds = |m: Mode| match m { Mode::Unique(k, _) => vec![k], Mode::Tie(v, _) => v };
            prop_assert_eq!(kinds(a), kinds(b));
        }

        #[test]
        fn subsample_cell_sums(seed in any::<u64>(), n in 1u32..=30) {
            let d = fixtures::full();
            let s = d.subsample(n, seed).unwrap();
            prop_assert_eq!(s.total_pieces(), u64::from(n) * d.cell_count() as u64);
        }
    }
}
