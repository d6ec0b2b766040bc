//! Feature-level human assessment.
//!
//! Top-ranked global features become annotation tasks, grouped five to a page with one
//! gold question mixed into every page. Assessors rate on a 5-point Likert scale whether a
//! feature really carries its learned direction (1 = strongly agree, 5 = strongly disagree).
//! Gold answers drive assessor trust, and trusted votes are aggregated per feature.

mod aggregate;
mod server;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::GlobalFeatureContribution;
use crate::text::ClassConfig;

pub use aggregate::{aggregate_judgments, AggregationPolicy, Decision, ErroneousFeatureSet, FeatureDecision};
pub use server::{AnnotationService, Progress, ServerHandle, SubmitRequest, SubmitResponse, TaskView};
pub use store::{
    export_judgments_csv, import_judgments_csv, likert_side, AssessorRecord, Judgment, JudgmentStore, TrustPolicy,
};

pub const PAGE_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Agree,
    Disagree,
}

/// A question with a known answer, used to measure assessor reliability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldItem {
    pub feature: String,
    pub definition: String,
    /// Class name shown as the feature's direction.
    pub direction: String,
    pub expected: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub feature: String,
    pub definition: String,
    pub definition_missing: bool,
    pub learned_direction: usize,
    pub magnitude: f64,
    pub page: usize,
    /// Expected answer for gold tasks; never sent to assessors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Side>,
}

impl AnnotationTask {
    pub fn is_gold(&self) -> bool {
        self.gold.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub page_size: usize,
    pub inject_gold: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            page_size: PAGE_SIZE,
            inject_gold: true,
        }
    }
}

/// Reads `feature<TAB>definition` lines. The first definition listed for a feature wins.
pub fn read_definitions<R: BufRead>(reader: R) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (feature, definition) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(format!("definitions line {}", i + 1), "expected feature<TAB>definition"))?;
        out.entry(feature.trim().to_string())
            .or_insert_with(|| definition.trim().to_string());
    }
    Ok(out)
}

pub fn load_definitions(path: &Path) -> Result<HashMap<String, String>> {
    read_definitions(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Gold pool as JSON lines of [`GoldItem`].
pub fn read_gold_pool<R: BufRead>(reader: R) -> Result<Vec<GoldItem>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(format!("gold pool line {}", i + 1), e))?);
    }
    Ok(out)
}

pub fn load_gold_pool(path: &Path) -> Result<Vec<GoldItem>> {
    read_gold_pool(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Slot of the gold task within a page of `len` real tasks; varies by page.
fn gold_slot(page: usize, len: usize) -> usize {
    (page.wrapping_mul(2_654_435_761) >> 7) % (len + 1)
}

/// Turns the first `top_n` ranked features into paged tasks, one gold question per page.
pub fn generate_tasks(
    ranking: &[GlobalFeatureContribution],
    definitions: &HashMap<String, String>,
    top_n: usize,
    gold_pool: &[GoldItem],
    classes: &ClassConfig,
    config: &TaskConfig,
) -> Result<Vec<AnnotationTask>> {
    let real = &ranking[..top_n.min(ranking.len())];
    if real.is_empty() {
        return Ok(Vec::new());
    }
    let real_features: BTreeSet<&str> = real.iter().map(|c| c.feature.as_str()).collect();
    let pool: Vec<&GoldItem> = gold_pool
        .iter()
        .filter(|g| !real_features.contains(g.feature.as_str()))
        .collect();
    if config.inject_gold && pool.is_empty() {
        return Err(Error::Config("gold injection is enabled but the gold pool is empty".into()));
    }
    let page_size = config.page_size.max(1);

    let mut tasks = Vec::new();
    for (page, chunk) in real.chunks(page_size).enumerate() {
        let mut page_tasks: Vec<AnnotationTask> = chunk
            .iter()
            .map(|c| {
                let definition = definitions.get(&c.feature).cloned().unwrap_or_default();
                AnnotationTask {
                    feature: c.feature.clone(),
                    definition_missing: definition.is_empty(),
                    definition,
                    learned_direction: c.direction,
                    magnitude: c.magnitude,
                    page,
                    gold: None,
                }
            })
            .collect();
        if config.inject_gold {
            let g = pool[page % pool.len()];
            let gold = AnnotationTask {
                feature: g.feature.clone(),
                definition: g.definition.clone(),
                definition_missing: g.definition.is_empty(),
                learned_direction: classes.index_of(&g.direction)?,
                magnitude: 0.0,
                page,
                gold: Some(g.expected),
            };
            page_tasks.insert(gold_slot(page, chunk.len()), gold);
        }
        tasks.extend(page_tasks);
    }
    Ok(tasks)
}

/// Learned direction of every non-gold task, keyed by feature.
pub fn task_directions(tasks: &[AnnotationTask]) -> BTreeMap<String, usize> {
    tasks
        .iter()
        .filter(|t| !t.is_gold())
        .map(|t| (t.feature.clone(), t.learned_direction))
        .collect()
}

pub fn save_tasks(path: &Path, tasks: &[AnnotationTask]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(tasks)? + "\n")?;
    Ok(())
}

pub fn read_tasks<R: Read>(reader: R) -> Result<Vec<AnnotationTask>> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn load_tasks(path: &Path) -> Result<Vec<AnnotationTask>> {
    read_tasks(std::fs::File::open(path)?)
}
