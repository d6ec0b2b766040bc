//! Ground-truth evaluation: the least-confidence baseline, precision@K, threshold sweeps and
//! the confidence profile of flagged errors.
//!
//! An instance is an error when its predicted class differs from its gold label.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionReport, ErroneousScore};
use crate::error::{Error, Result};
use crate::model::ModelHandle;
use crate::text::{Corpus, Document};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ErroneousScore,
    LeastConfidence,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ErroneousScore => "erroneous_score",
            Method::LeastConfidence => "least_confidence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedInstance {
    pub document_id: String,
    pub score: f64,
    pub predicted: usize,
    pub gold: Option<usize>,
    pub max_prob: f64,
}

impl RankedInstance {
    /// `None` without a gold label.
    pub fn is_error(&self) -> Option<bool> {
        self.gold.map(|g| g != self.predicted)
    }
}

/// Instances ranked by descending score, ties broken by ascending document id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub method: Method,
    pub entries: Vec<RankedInstance>,
}

impl EvaluationRun {
    pub fn new(method: Method, mut entries: Vec<RankedInstance>) -> Self {
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.document_id.cmp(&b.document_id))
        });
        EvaluationRun { method, entries }
    }

    /// Ranks scored instances of a detection report; gold labels come from `corpus`.
    pub fn from_detection(report: &DetectionReport, corpus: &Corpus) -> Result<Self> {
        let entries = report
            .scored
            .iter()
            .map(|s| {
                Ok(RankedInstance {
                    document_id: s.document_id.clone(),
                    score: s.e,
                    predicted: s.predicted_class,
                    gold: gold_of(corpus, &s.document_id)?,
                    max_prob: s.predicted_prob,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvaluationRun::new(Method::ErroneousScore, entries))
    }
}

fn gold_of(corpus: &Corpus, id: &str) -> Result<Option<usize>> {
    corpus
        .get(id)
        .map(|d| d.gold_label)
        .ok_or_else(|| Error::Validation(format!("document {id} is not in the corpus")))
}

/// Ranks the whole corpus by `1 - max_k P(y=k)`, most uncertain first.
pub fn least_confidence_rank(model: &ModelHandle, corpus: &Corpus) -> Result<EvaluationRun> {
    if corpus.is_empty() {
        return Err(Error::Validation("cannot rank an empty corpus".into()));
    }
    let requests: Vec<(&Document, Option<&str>)> = corpus.documents().iter().map(|d| (d, None)).collect();
    let predictions = model.predict_documents(&requests)?;
    let entries = corpus
        .documents()
        .iter()
        .zip(predictions)
        .map(|(d, p)| RankedInstance {
            document_id: d.id.clone(),
            score: 1.0 - p.max_prob(),
            predicted: p.argmax(),
            gold: d.gold_label,
            max_prob: p.max_prob(),
        })
        .collect();
    Ok(EvaluationRun::new(Method::LeastConfidence, entries))
}

/// Fraction of true errors among the top `k` of `run`, for every `k` in `ks`.
pub fn precision_at_k(run: &EvaluationRun, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    ks.iter()
        .map(|&k| {
            if k == 0 || k > run.entries.len() {
                return Err(Error::KOutOfRange {
                    k,
                    len: run.entries.len(),
                });
            }
            let top = &run.entries[..k];
            let unlabeled: Vec<String> = top
                .iter()
                .filter(|e| e.gold.is_none())
                .map(|e| e.document_id.clone())
                .collect();
            if !unlabeled.is_empty() {
                return Err(Error::MissingLabel(unlabeled));
            }
            let wrong = top.iter().filter(|e| e.is_error() == Some(true)).count();
            Ok((k, wrong as f64 / k as f64))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub flagged_count: usize,
    pub scored_count: usize,
    /// `None` when nothing is flagged.
    pub precision: Option<f64>,
}

impl SweepRow {
    pub fn flagged_fraction(&self) -> f64 {
        if self.scored_count == 0 {
            0.0
        } else {
            self.flagged_count as f64 / self.scored_count as f64
        }
    }
}

fn is_wrong(score: &ErroneousScore, corpus: &Corpus) -> Result<bool> {
    match gold_of(corpus, &score.document_id)? {
        Some(g) => Ok(g != score.predicted_class),
        None => Err(Error::MissingLabel(vec![score.document_id.clone()])),
    }
}

/// Runs `report_fn` at every threshold and measures the flagged set against gold labels.
pub fn tau_sweep<F>(mut report_fn: F, corpus: &Corpus, taus: &[f64]) -> Result<Vec<SweepRow>>
where
    F: FnMut(f64) -> Result<DetectionReport>,
{
    if taus.is_empty() {
        return Err(Error::Validation("tau sweep needs at least one threshold".into()));
    }
    taus.iter()
        .map(|&tau| {
            let report = report_fn(tau)?;
            let mut flagged = 0;
            let mut wrong = 0;
            for s in report.flagged() {
                flagged += 1;
                if is_wrong(s, corpus)? {
                    wrong += 1;
                }
            }
            Ok(SweepRow {
                tau,
                flagged_count: flagged,
                scored_count: report.scored.len(),
                precision: (flagged > 0).then(|| wrong as f64 / flagged as f64),
            })
        })
        .collect()
}

/// Flagged instances of `report` that really are mispredicted.
pub fn flagged_errors<'a>(report: &'a DetectionReport, corpus: &Corpus) -> Result<Vec<&'a ErroneousScore>> {
    let mut out = Vec::new();
    for s in report.flagged() {
        if is_wrong(s, corpus)? {
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    pub bins: Vec<HistogramBin>,
    pub total: usize,
    /// Share of inputs whose max probability exceeds 0.7.
    pub above_0_7: f64,
}

/// Fixed-width histogram of max-class probabilities over `[1/k, 1]`.
pub fn confidence_histogram(max_probs: &[f64], k: usize, bins: usize) -> Result<ConfidenceHistogram> {
    if max_probs.is_empty() {
        return Err(Error::EmptyFlaggedSet);
    }
    if k < 2 || bins == 0 {
        return Err(Error::Validation(format!("histogram needs k >= 2 and bins >= 1, got k={k} bins={bins}")));
    }
    let lo = 1.0 / k as f64;
    let width = (1.0 - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * width,
            hi: if i + 1 == bins { 1.0 } else { lo + (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &p in max_probs {
        let idx = ((p - lo) / width).floor();
        let idx = if idx.is_nan() || idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
        out[idx].count += 1;
    }
    let above = max_probs.iter().filter(|&&p| p > 0.7).count();
    Ok(ConfidenceHistogram {
        bins: out,
        total: max_probs.len(),
        above_0_7: above as f64 / max_probs.len() as f64,
    })
}

fn optional(p: Option<f64>) -> String {
    p.map_or_else(|| "null".to_string(), |p| p.to_string())
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["tau", "flagged_count", "scored_count", "precision"])?;
    for r in rows {
        out.write_record([
            r.tau.to_string(),
            r.flagged_count.to_string(),
            r.scored_count.to_string(),
            optional(r.precision),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_precision_csv<W: Write>(writer: W, rows: &[(usize, Method, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["k", "method", "precision"])?;
    for (k, method, p) in rows {
        out.write_record([k.to_string(), method.to_string(), p.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_histogram_csv<W: Write>(writer: W, histogram: &ConfidenceHistogram) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["bin_lo", "bin_hi", "count"])?;
    for b in &histogram.bins {
        out.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
