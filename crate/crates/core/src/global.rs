//! Global feature contributions by corpus-wide single-feature masking.
//!
//! For a unigram `j` and every document `d` containing it, the local importance toward
//! class `k` is `|P(k | d without j) - P(k | d)|`. Averaging over the `N` containing
//! documents gives one mean per class; the class with the largest mean is the feature's
//! direction and that mean its magnitude.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelHandle, PredictionDistribution};
use crate::text::{ClassConfig, Corpus, Document};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClassDelta {
    pub feature: String,
    pub class: usize,
    pub mean_abs_delta: f64,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalFeatureContribution {
    pub feature: String,
    pub direction: usize,
    pub magnitude: f64,
    pub n_instances: usize,
    /// 1-based position in a ranking; 0 when not ranked.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFilter {
    NonNeutral,
    All,
}

impl std::str::FromStr for FeatureFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-neutral" | "non_neutral" => Ok(FeatureFilter::NonNeutral),
            "all" => Ok(FeatureFilter::All),
            other => Err(Error::Config(format!("unknown feature filter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    pub filter: FeatureFilter,
    pub top_n: usize,
    /// Features found in fewer documents are left out of the ranking.
    pub min_support: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            filter: FeatureFilter::NonNeutral,
            top_n: 2000,
            min_support: 3,
            workers: None,
        }
    }
}

fn abs_deltas(base: &PredictionDistribution, masked: &PredictionDistribution) -> Vec<f64> {
    base.probs()
        .iter()
        .zip(masked.probs())
        .map(|(b, m)| (m - b).abs())
        .collect()
}

/// Per-class absolute probability change when `feature` is deleted from `doc`.
pub fn local_importance(model: &ModelHandle, doc: &Document, feature: &str) -> Result<Vec<f64>> {
    if !doc.contains(feature) {
        return Err(Error::FeatureNotPresent {
            feature: feature.to_string(),
            document: doc.id.clone(),
        });
    }
    let preds = model.predict_documents(&[(doc, None), (doc, Some(feature))])?;
    Ok(abs_deltas(&preds[0], &preds[1]))
}

/// Lowest class index among those attaining the maximum.
fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Mean deltas per class, summed over containing documents in ascending id order.
fn class_means(
    model: &ModelHandle,
    corpus: &Corpus,
    feature: &str,
    base: Option<&HashMap<&str, PredictionDistribution>>,
) -> Result<(Vec<f64>, usize)> {
    let ids = corpus
        .documents_with(feature)
        .ok_or_else(|| Error::FeatureNotInCorpus(feature.to_string()))?;
    let docs: Vec<&Document> = ids.iter().map(|id| corpus.get(id).expect("indexed document")).collect();

    let masked_requests: Vec<(&Document, Option<&str>)> = docs.iter().map(|d| (*d, Some(feature))).collect();
    let masked = model.predict_documents(&masked_requests)?;
    let originals = match base {
        Some(base) => docs.iter().map(|d| base[d.id.as_str()].clone()).collect(),
        None => {
            let requests: Vec<(&Document, Option<&str>)> = docs.iter().map(|d| (*d, None)).collect();
            model.predict_documents(&requests)?
        }
    };

    let mut sums = vec![0.0; model.class_config().k()];
    for (orig, m) in originals.iter().zip(&masked) {
        for (s, d) in sums.iter_mut().zip(abs_deltas(orig, m)) {
            *s += d;
        }
    }
    let n = docs.len();
    Ok((sums.into_iter().map(|s| s / n as f64).collect(), n))
}

/// Mean absolute delta for every class.
pub fn class_deltas(model: &ModelHandle, corpus: &Corpus, feature: &str) -> Result<Vec<FeatureClassDelta>> {
    let (means, n) = class_means(model, corpus, feature, None)?;
    Ok(means
        .into_iter()
        .enumerate()
        .map(|(class, mean_abs_delta)| FeatureClassDelta {
            feature: feature.to_string(),
            class,
            mean_abs_delta,
            n_instances: n,
        })
        .collect())
}

fn contribution_from(feature: &str, means: &[f64], n: usize) -> GlobalFeatureContribution {
    let direction = argmax_lowest(means);
    GlobalFeatureContribution {
        feature: feature.to_string(),
        direction,
        magnitude: means[direction],
        n_instances: n,
        rank: 0,
    }
}

/// Direction and magnitude of one feature over `corpus`. Ties between classes go to the
/// lowest class index.
pub fn aggregate_feature(model: &ModelHandle, corpus: &Corpus, feature: &str) -> Result<GlobalFeatureContribution> {
    let (means, n) = class_means(model, corpus, feature, None)?;
    Ok(contribution_from(feature, &means, n))
}

/// Descending magnitude, then descending support, then feature text.
pub fn ranking_order(a: &GlobalFeatureContribution, b: &GlobalFeatureContribution) -> std::cmp::Ordering {
    b.magnitude
        .total_cmp(&a.magnitude)
        .then(b.n_instances.cmp(&a.n_instances))
        .then_with(|| a.feature.cmp(&b.feature))
}

/// Ranks every sufficiently supported feature of `corpus`, applies the filter, truncates to
/// `top_n` and numbers the survivors from 1.
pub fn rank_features(model: &ModelHandle, corpus: &Corpus, config: &GlobalConfig) -> Result<Vec<GlobalFeatureContribution>> {
    if corpus.is_empty() {
        return Err(Error::Validation("cannot rank features of an empty corpus".into()));
    }
    if config.top_n == 0 {
        return Ok(Vec::new());
    }
    let run = || -> Result<Vec<GlobalFeatureContribution>> {
        let originals: Vec<PredictionDistribution> = corpus
            .documents()
            .par_chunks(256)
            .map(|chunk| {
                let requests: Vec<(&Document, Option<&str>)> = chunk.iter().map(|d| (d, None)).collect();
                model.predict_documents(&requests)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let base: HashMap<&str, PredictionDistribution> = corpus
            .documents()
            .iter()
            .map(|d| d.id.as_str())
            .zip(originals)
            .collect();

        let features: Vec<&str> = corpus
            .features()
            .filter(|f| corpus.support(f) >= config.min_support)
            .collect();
        features
            .par_iter()
            .map(|f| {
                let (means, n) = class_means(model, corpus, f, Some(&base))?;
                Ok(contribution_from(f, &means, n))
            })
            .collect()
    };
    let mut all = match config.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let neutral = model.class_config().neutral_class();
    if config.filter == FeatureFilter::NonNeutral {
        all.retain(|c| c.direction != neutral);
    }
    all.sort_by(ranking_order);
    all.truncate(config.top_n);
    for (i, c) in all.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    Ok(all)
}

pub fn write_ranking_csv<W: Write>(writer: W, ranking: &[GlobalFeatureContribution], classes: &ClassConfig) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["rank", "feature", "direction", "magnitude", "n_instances"])?;
    for c in ranking {
        out.write_record([
            c.rank.to_string(),
            c.feature.clone(),
            classes.name(c.direction).to_string(),
            format!("{:.6}", c.magnitude),
            c.n_instances.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ranking_csv<R: Read>(reader: R, classes: &ClassConfig) -> Result<Vec<GlobalFeatureContribution>> {
    #[derive(Deserialize)]
    struct Row {
        rank: usize,
        feature: String,
        direction: String,
        magnitude: f64,
        n_instances: usize,
    }
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: Row = row?;
        rows.push(GlobalFeatureContribution {
            direction: classes.index_of(&row.direction)?,
            feature: row.feature,
            magnitude: row.magnitude,
            n_instances: row.n_instances,
            rank: row.rank,
        });
    }
    Ok(rows)
}

pub fn load_ranking(path: &Path, classes: &ClassConfig) -> Result<Vec<GlobalFeatureContribution>> {
    read_ranking_csv(std::fs::File::open(path)?, classes)
}
