//! Pairwise-comparison study: conditions, counterbalanced assignments,
//! selection records and their chi-squared summaries.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{
    Aspect, DatasetError, GoalStyle, PreferenceDataset, RequirementTag, TaskEntry,
};
use crate::stats::{chi_squared, stars, ContingencyTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExperimentError {
    #[error("{what} {value} out of range 0..{bound}")]
    IndexOutOfRange {
        what: &'static str,
        value: u32,
        bound: u32,
    },
    #[error("unknown condition {0:?}")]
    UnknownCondition(String),
    #[error("a pair needs two different conditions")]
    SelfPair,
    #[error("chosen condition {chosen} is not part of pair {pair}")]
    ChosenNotInPair {
        chosen: Condition,
        pair: ComparisonPair,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Which dataset guided generation. Declaration order is the canonical
/// order used for pairs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Withpref10,
    Withpref25,
    Withpref30,
    Withoutpref,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Withpref10,
        Condition::Withpref25,
        Condition::Withpref30,
        Condition::Withoutpref,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Condition::Withpref10 => "withpref10",
            Condition::Withpref25 => "withpref25",
            Condition::Withpref30 => "withpref30",
            Condition::Withoutpref => "withoutpref",
        }
    }

    /// Respondents per cell in this condition's dataset; `None` means the
    /// prompt carries no dataset.
    pub fn respondents(self) -> Option<u32> {
        match self {
            Condition::Withpref10 => Some(10),
            Condition::Withpref25 => Some(25),
            Condition::Withpref30 => Some(30),
            Condition::Withoutpref => None,
        }
    }

    /// The dataset variant for this condition.
    pub fn dataset(
        self,
        full: &PreferenceDataset,
        seed: u64,
    ) -> Result<Option<PreferenceDataset>, DatasetError> {
        self.respondents()
            .map(|n| full.subsample(n, seed))
            .transpose()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Condition {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ExperimentError::UnknownCondition(s.to_string()))
    }
}

/// An unordered pair of distinct conditions, stored in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPair")]
pub struct ComparisonPair {
    left: Condition,
    right: Condition,
}

#[derive(Deserialize)]
struct RawPair {
    left: Condition,
    right: Condition,
}

impl TryFrom<RawPair> for ComparisonPair {
    type Error = ExperimentError;

    fn try_from(raw: RawPair) -> Result<Self, Self::Error> {
        ComparisonPair::new(raw.left, raw.right)
    }
}

impl ComparisonPair {
    pub fn new(a: Condition, b: Condition) -> Result<Self, ExperimentError> {
        if a == b {
            return Err(ExperimentError::SelfPair);
        }
        Ok(Self {
            left: a.min(b),
            right: a.max(b),
        })
    }

    pub fn left(&self) -> Condition {
        self.left
    }

    pub fn right(&self) -> Condition {
        self.right
    }

    pub fn contains(&self, c: Condition) -> bool {
        self.left == c || self.right == c
    }
}

impl fmt::Display for ComparisonPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} vs {}", self.left, self.right)
    }
}

/// All six pairs: (10,25), (10,30), (10,out), (25,30), (25,out), (30,out).
pub fn enumerate_pairs() -> Vec<ComparisonPair> {
    let mut out = Vec::with_capacity(6);
    for (i, &a) in Condition::ALL.iter().enumerate() {
        for &b in &Condition::ALL[i + 1..] {
            out.push(ComparisonPair::new(a, b).expect("distinct"));
        }
    }
    out
}

/// Comparisons in a full design over `n_tasks` tasks and `n_aspects` aspects.
pub fn design_size_for(n_tasks: usize, n_aspects: usize) -> usize {
    enumerate_pairs().len() * n_tasks * n_aspects
}

pub fn design_size() -> usize {
    design_size_for(STUDY_TASKS.len(), Aspect::ALL.len())
}

/// Comparisons judged by one participant: one aspect per task of a set.
pub fn items_per_participant() -> usize {
    enumerate_pairs().len() * TASK_SETS[0].len()
}

pub struct StudyTask {
    pub name: &'static str,
    pub description: &'static str,
    pub tags: &'static [RequirementTag],
    pub goal_style: GoalStyle,
}

impl StudyTask {
    pub fn entry(&self) -> TaskEntry {
        TaskEntry {
            name: self.name.to_string(),
            description: self.description.to_string(),
            requirement_tags: self.tags.iter().copied().collect(),
            goal_style: self.goal_style,
        }
    }
}

use RequirementTag::{ColorAdjust, ContinuousValue, DiscreteValue, PositionAdjust};

/// The six evaluation tasks, none of which appears in the dataset.
pub const STUDY_TASKS: [StudyTask; 6] = [
    StudyTask {
        name: "image_adjust_exposure",
        description: "Adjust the image exposure by both decreasing and increasing it. Find the exposure level that appears the most natural and visually pleasing to you.",
        tags: &[ContinuousValue, DiscreteValue],
        goal_style: GoalStyle::Precision,
    },
    StudyTask {
        name: "image_adjust_tint",
        description: "Adjust the image tint to shift its color balance, creating both subtle and dramatic effects by adding a yellow or magenta hue.",
        tags: &[ContinuousValue, DiscreteValue],
        goal_style: GoalStyle::Exploration,
    },
    StudyTask {
        name: "image_adjust_temperature",
        description: "Adjust the image temperature to warm and cool tones. Experiment with different settings to achieve the most desired effect for you.",
        tags: &[ContinuousValue, DiscreteValue],
        goal_style: GoalStyle::Exploration,
    },
    StudyTask {
        name: "image_change_to_spring",
        description: "Transform the image to reflect vibrant spring colors, adding fresh, lively hues.",
        tags: &[ColorAdjust],
        goal_style: GoalStyle::Exploration,
    },
    StudyTask {
        name: "design_align_text",
        description: "Align the text \"Poster Title\" perfectly along one of the margins. Experiment with various positions to achieve a balanced and visually pleasing design.",
        tags: &[DiscreteValue, PositionAdjust],
        goal_style: GoalStyle::Precision,
    },
    StudyTask {
        name: "design_position_logo",
        description: "Experiment with various placements for the logo to determine the most visually appealing position that enhances visibility and complements the overall design of the image.",
        tags: &[DiscreteValue, PositionAdjust],
        goal_style: GoalStyle::Exploration,
    },
];

/// Indices into [`STUDY_TASKS`]; a participant works on one set.
pub const TASK_SETS: [[usize; 3]; 2] = [[0, 2, 4], [1, 3, 5]];

pub fn study_task(name: &str) -> Option<&'static StudyTask> {
    STUDY_TASKS.iter().find(|t| t.name == name)
}

/// Lexicographic permutations of three positions.
pub const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Row `row` of the cyclic Latin square: the aspect given to the i-th task
/// of a set.
pub fn latin_aspect(row: usize, task_position: usize) -> Aspect {
    Aspect::ALL[(task_position + row) % Aspect::ALL.len()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentItem {
    pub task: String,
    pub aspect: Aspect,
    pub pair: ComparisonPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub participant: String,
    /// 1 or 2.
    pub task_set: u32,
    pub permutation_index: u32,
    pub latin_row: u32,
    pub seed: u64,
    pub items: Vec<AssignmentItem>,
}

impl Assignment {
    pub fn contains(&self, task: &str, aspect: Aspect, pair: ComparisonPair) -> bool {
        self.items
            .iter()
            .any(|i| i.task == task && i.aspect == aspect && i.pair == pair)
    }
}

fn check(what: &'static str, value: u32, bound: u32) -> Result<usize, ExperimentError> {
    if value < bound {
        Ok(value as usize)
    } else {
        Err(ExperimentError::IndexOutOfRange { what, value, bound })
    }
}

pub fn build_assignment(
    participant: &str,
    task_set: u32,
    permutation_index: u32,
    latin_row: u32,
    seed: u64,
) -> Result<Assignment, ExperimentError> {
    if !(1..=2).contains(&task_set) {
        return Err(ExperimentError::IndexOutOfRange {
            what: "task_set",
            value: task_set,
            bound: 3,
        });
    }
    let perm = PERMUTATIONS[check("permutation_index", permutation_index, 6)?];
    let row = check("latin_row", latin_row, 3)?;
    let set = TASK_SETS[task_set as usize - 1];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(items_per_participant());
    for &position in &perm {
        let task = STUDY_TASKS[set[position]].name;
        let aspect = latin_aspect(row, position);
        let mut pairs = enumerate_pairs();
        pairs.shuffle(&mut rng);
        items.extend(pairs.into_iter().map(|pair| AssignmentItem {
            task: task.to_string(),
            aspect,
            pair,
        }));
    }
    Ok(Assignment {
        participant: participant.to_string(),
        task_set,
        permutation_index,
        latin_row,
        seed,
        items,
    })
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Stable assignment for a participant, keyed by `key`; no participant
/// table is needed to reproduce it.
pub fn assignment_for(participant: &str, key: &str) -> Assignment {
    let h = digest(&[key.as_bytes(), participant.as_bytes()]);
    let seed = u64::from_le_bytes(h[8..16].try_into().expect("8 bytes"));
    build_assignment(
        participant,
        u32::from(h[0] % 2) + 1,
        u32::from(h[1] % 6),
        u32::from(h[2] % 3),
        seed,
    )
    .expect("indices reduced into range")
}

/// Assignments for `participants` people, cycling through every
/// (set, permutation, row) combination so each block of 36 is balanced.
pub fn plan(participants: u32, seed: u64) -> Vec<Assignment> {
    (0..participants)
        .map(|i| {
            let id = format!("P{:03}", i + 1);
            let h = digest(&[&seed.to_le_bytes(), id.as_bytes()]);
            let pseed = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
            build_assignment(&id, i % 2 + 1, (i / 2) % 6, (i / 12) % 3, pseed)
                .expect("indices in range")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub participant: String,
    pub task: String,
    pub aspect: Aspect,
    pub pair: ComparisonPair,
    pub chosen: Condition,
    #[serde(default)]
    pub timestamp: String,
}

impl SelectionRecord {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.pair.contains(self.chosen) {
            Ok(())
        } else {
            Err(ExperimentError::ChosenNotInPair {
                chosen: self.chosen,
                pair: self.pair,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Aspect,
    Task,
    Overall,
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aspect" => Ok(GroupBy::Aspect),
            "task" => Ok(GroupBy::Task),
            "overall" => Ok(GroupBy::Overall),
            other => Err(format!(
                "unknown grouping {other:?} (aspect, task, overall)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub pair: ComparisonPair,
    pub wins_left: u64,
    pub wins_right: u64,
    pub statistic: f64,
    pub p: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub counts: BTreeMap<Condition, u64>,
    pub tests: Vec<PairTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub group_by: GroupBy,
    pub n_selections: usize,
    pub groups: Vec<GroupSummary>,
    /// Times each participant chose each condition.
    pub per_participant: BTreeMap<String, BTreeMap<Condition, u64>>,
}

fn zero_counts() -> BTreeMap<Condition, u64> {
    Condition::ALL.iter().map(|&c| (c, 0)).collect()
}

/// Selection counts per condition within each group, with a uniform-null
/// chi-squared test for every pair that was judged at least once.
pub fn summarize(selections: &[SelectionRecord], group_by: GroupBy) -> Summary {
    let mut keys: Vec<String> = match group_by {
        GroupBy::Aspect => Aspect::ALL.iter().map(|a| a.id().to_string()).collect(),
        GroupBy::Task => STUDY_TASKS.iter().map(|t| t.name.to_string()).collect(),
        GroupBy::Overall => vec!["overall".into()],
    };
    let key_of = |s: &SelectionRecord| match group_by {
        GroupBy::Aspect => s.aspect.id().to_string(),
        GroupBy::Task => s.task.clone(),
        GroupBy::Overall => "overall".to_string(),
    };
    for s in selections {
        let k = key_of(s);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }

    let mut groups = Vec::with_capacity(keys.len());
    for key in keys {
        let members: Vec<&SelectionRecord> =
            selections.iter().filter(|s| key_of(s) == key).collect();
        let mut counts = zero_counts();
        for s in &members {
            *counts.get_mut(&s.chosen).expect("all conditions present") += 1;
        }
        let mut tests = Vec::new();
        for pair in enumerate_pairs() {
            let judged = members.iter().filter(|s| s.pair == pair);
            let (mut l, mut r) = (0u64, 0u64);
            for s in judged {
                if s.chosen == pair.left() {
                    l += 1;
                } else if s.chosen == pair.right() {
                    r += 1;
                }
            }
            if l + r == 0 {
                continue;
            }
            let table = ContingencyTable::uniform(
                vec![pair.left().to_string(), pair.right().to_string()],
                vec![l, r],
            );
            let res = chi_squared(&table).expect("two categories with positive total");
            tests.push(PairTest {
                pair,
                wins_left: l,
                wins_right: r,
                statistic: res.statistic,
                p: res.p,
                stars: stars(res.p).to_string(),
            });
        }
        groups.push(GroupSummary {
            group: key,
            counts,
            tests,
        });
    }

    let mut per_participant: BTreeMap<String, BTreeMap<Condition, u64>> = BTreeMap::new();
    for s in selections {
        *per_participant
            .entry(s.participant.clone())
            .or_insert_with(zero_counts)
            .get_mut(&s.chosen)
            .expect("all conditions present") += 1;
    }

    Summary {
        group_by,
        n_selections: selections.len(),
        groups,
        per_participant,
    }
}

const BAR_COLORS: [&str; 4] = ["#9ecae1", "#4292c6", "#08519c", "#bdbdbd"];

/// Grouped bar chart of selection counts, one cluster per group.
pub fn render_svg(summary: &Summary) -> String {
    let bar = 18.0;
    let gap = 30.0;
    let plot_h = 200.0;
    let left = 40.0;
    let top = 20.0;
    let cluster = bar * 4.0 + gap;
    let width = left + cluster * summary.groups.len().max(1) as f64 + 10.0;
    let height = top + plot_h + 80.0;
    let max = summary
        .groups
        .iter()
        .flat_map(|g| g.counts.values().copied())
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let base = top + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{base}" x2="{width}" y2="{base}" stroke="black"/>"#
    );
    for (gi, g) in summary.groups.iter().enumerate() {
        let x0 = left + gi as f64 * cluster + gap / 2.0;
        for (ci, c) in Condition::ALL.iter().enumerate() {
            let n = g.counts.get(c).copied().unwrap_or(0);
            let h = plot_h * n as f64 / max;
            let x = x0 + ci as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{}" width="{}" height="{h}" fill="{}"><title>{c}: {n}</title></rect>"#,
                base - h,
                bar - 2.0,
                BAR_COLORS[ci]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + bar * 2.0,
            base + 15.0,
            g.group
        );
    }
    for (ci, c) in Condition::ALL.iter().enumerate() {
        let y = base + 35.0 + ci as f64 * 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{y}">{c}</text>"#,
            y - 9.0,
            BAR_COLORS[ci],
            left + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}
