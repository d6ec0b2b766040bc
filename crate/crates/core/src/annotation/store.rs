use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AnnotationTask, Side};
use crate::error::{Error, Result};
use crate::text::ClassConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub feature: String,
    pub assessor_id: String,
    pub likert: u8,
    /// ISO-8601, UTC.
    pub timestamp: String,
    pub is_gold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_expected: Option<Side>,
}

impl Judgment {
    pub fn new(feature: impl Into<String>, assessor_id: impl Into<String>, likert: u8) -> Self {
        Judgment {
            feature: feature.into(),
            assessor_id: assessor_id.into(),
            likert,
            timestamp: now_utc(),
            is_gold: false,
            gold_expected: None,
        }
    }

    pub fn gold(mut self, expected: Side) -> Self {
        self.is_gold = true;
        self.gold_expected = Some(expected);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.likert) {
            return Err(Error::Validation(format!("likert must be 1-5, got {}", self.likert)));
        }
        if self.assessor_id.is_empty() || self.feature.is_empty() {
            return Err(Error::Validation("assessor and feature must be non-empty".into()));
        }
        if self.is_gold != self.gold_expected.is_some() {
            return Err(Error::Validation("gold judgments need an expected side".into()));
        }
        Ok(())
    }
}

pub fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// 1–2 agree, 4–5 disagree, 3 carries no side.
pub fn likert_side(likert: u8, agree_max: u8, disagree_min: u8) -> Option<Side> {
    if likert <= agree_max {
        Some(Side::Agree)
    } else if likert >= disagree_min {
        Some(Side::Disagree)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustPolicy {
    /// Minimum gold accuracy.
    pub threshold: f64,
    /// Gold answers needed before the threshold applies.
    pub min_gold: usize,
}

impl Default for TrustPolicy {
    fn default() -> Self {
        TrustPolicy {
            threshold: 0.7,
            min_gold: 2,
        }
    }
}

impl TrustPolicy {
    pub fn is_trusted(&self, gold_total: usize, gold_correct: usize) -> bool {
        gold_total < self.min_gold || gold_correct as f64 >= self.threshold * gold_total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessorRecord {
    pub assessor_id: String,
    pub gold_total: usize,
    pub gold_correct: usize,
    pub trusted: bool,
}

/// Latest judgment per (assessor, feature), in first-submission order.
pub(crate) fn effective(judgments: &[Judgment]) -> Vec<&Judgment> {
    let mut slot: HashMap<(&str, &str), usize> = HashMap::new();
    let mut out: Vec<&Judgment> = Vec::new();
    for j in judgments {
        match slot.get(&(j.assessor_id.as_str(), j.feature.as_str())) {
            Some(&i) => out[i] = j,
            None => {
                slot.insert((&j.assessor_id, &j.feature), out.len());
                out.push(j);
            }
        }
    }
    out
}

/// Gold tallies and trust for every assessor appearing in `judgments`.
pub(crate) fn assessor_records(judgments: &[&Judgment], trust: &TrustPolicy) -> BTreeMap<String, AssessorRecord> {
    let mut records: BTreeMap<String, AssessorRecord> = BTreeMap::new();
    for j in judgments {
        let r = records.entry(j.assessor_id.clone()).or_insert_with(|| AssessorRecord {
            assessor_id: j.assessor_id.clone(),
            gold_total: 0,
            gold_correct: 0,
            trusted: true,
        });
        if let Some(expected) = j.gold_expected {
            r.gold_total += 1;
            if likert_side(j.likert, 2, 4) == Some(expected) {
                r.gold_correct += 1;
            }
        }
    }
    for r in records.values_mut() {
        r.trusted = trust.is_trusted(r.gold_total, r.gold_correct);
    }
    records
}

/// Append-only judgment log, optionally mirrored to a JSON-lines file.
pub struct JudgmentStore {
    trust: TrustPolicy,
    state: Mutex<State>,
}

struct State {
    log: Vec<Judgment>,
    file: Option<File>,
}

impl JudgmentStore {
    pub fn in_memory(trust: TrustPolicy) -> Self {
        JudgmentStore {
            trust,
            state: Mutex::new(State {
                log: Vec::new(),
                file: None,
            }),
        }
    }

    /// Opens `path`, replaying any judgments already in it.
    pub fn open(path: &Path, trust: TrustPolicy) -> Result<Self> {
        let mut log = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let j: Judgment = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(format!("{} line {}", path.display(), i + 1), e))?;
                j.validate()?;
                log.push(j);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JudgmentStore {
            trust,
            state: Mutex::new(State { log, file: Some(file) }),
        })
    }

    pub fn trust_policy(&self) -> &TrustPolicy {
        &self.trust
    }

    /// Validates, persists and applies one judgment; returns the assessor's updated record.
    pub fn record_judgment(&self, judgment: Judgment) -> Result<AssessorRecord> {
        judgment.validate()?;
        let mut state = self.state.lock().expect("judgment store lock poisoned");
        if let Some(file) = &mut state.file {
            let mut line = serde_json::to_vec(&judgment)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        let assessor = judgment.assessor_id.clone();
        state.log.push(judgment);
        let latest = effective(&state.log);
        let mine: Vec<&Judgment> = latest.into_iter().filter(|j| j.assessor_id == assessor).collect();
        Ok(assessor_records(&mine, &self.trust)
            .remove(&assessor)
            .expect("assessor just recorded"))
    }

    /// Copy of the full log in arrival order.
    pub fn log(&self) -> Vec<Judgment> {
        self.state.lock().expect("judgment store lock poisoned").log.clone()
    }

    /// Latest judgment per (assessor, feature).
    pub fn snapshot(&self) -> Vec<Judgment> {
        let state = self.state.lock().expect("judgment store lock poisoned");
        effective(&state.log).into_iter().cloned().collect()
    }

    pub fn records(&self) -> BTreeMap<String, AssessorRecord> {
        let state = self.state.lock().expect("judgment store lock poisoned");
        assessor_records(&effective(&state.log), &self.trust)
    }

    pub fn record(&self, assessor: &str) -> Option<AssessorRecord> {
        self.records().remove(assessor)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    feature: String,
    learned_direction: String,
    likert: u8,
    assessor_id: String,
}

/// Imports `feature,learned_direction,likert,assessor_id` rows. Features are resolved against
/// `tasks` to recover gold status; unknown features or direction mismatches are rejected.
pub fn import_judgments_csv<R: Read>(
    reader: R,
    tasks: &[AnnotationTask],
    classes: &ClassConfig,
    store: &JudgmentStore,
) -> Result<usize> {
    let by_feature: HashMap<&str, &AnnotationTask> = tasks.iter().map(|t| (t.feature.as_str(), t)).collect();
    let mut rows = Vec::new();
    for (i, row) in csv::Reader::from_reader(reader).deserialize().enumerate() {
        let row: CsvRow = row?;
        let task = by_feature
            .get(row.feature.as_str())
            .ok_or_else(|| Error::Validation(format!("row {}: `{}` is not an annotation task", i + 1, row.feature)))?;
        let direction = classes.index_of(&row.learned_direction)?;
        if direction != task.learned_direction {
            return Err(Error::Validation(format!(
                "row {}: `{}` was learned as {}, not {}",
                i + 1,
                row.feature,
                classes.name(task.learned_direction),
                row.learned_direction
            )));
        }
        let mut judgment = Judgment::new(row.feature, row.assessor_id, row.likert);
        if let Some(expected) = task.gold {
            judgment = judgment.gold(expected);
        }
        judgment.validate()?;
        rows.push(judgment);
    }
    let n = rows.len();
    for j in rows {
        store.record_judgment(j)?;
    }
    Ok(n)
}

/// Writes the latest judgment per (assessor, feature) as CSV, in arrival order.
pub fn export_judgments_csv<W: Write>(
    writer: W,
    store: &JudgmentStore,
    tasks: &[AnnotationTask],
    classes: &ClassConfig,
) -> Result<()> {
    let by_feature: HashMap<&str, &AnnotationTask> = tasks.iter().map(|t| (t.feature.as_str(), t)).collect();
    let mut out = csv::Writer::from_writer(writer);
    for j in store.snapshot() {
        let direction = by_feature
            .get(j.feature.as_str())
            .map(|t| classes.name(t.learned_direction).to_string())
            .unwrap_or_default();
        out.serialize(CsvRow {
            feature: j.feature,
            learned_direction: direction,
            likert: j.likert,
            assessor_id: j.assessor_id,
        })?;
    }
    out.flush()?;
    Ok(())
}
