//! Instance-level error detection.
//!
//! For an explained instance, the erroneous score is the summed local contribution of the
//! globally erroneous features it contains, divided by the summed strictly positive
//! contributions toward the predicted class. Both sums run over normalized contributions, so
//! `e <= 1`; negative erroneous contributions can push `e` arbitrarily low.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::ErroneousFeatureSet;
use crate::error::{Error, Result};
use crate::local::{explain_instance, ExplainerConfig, LocalExplanation};
use crate::model::ModelHandle;
use crate::text::{Corpus, Document};

/// Denominators below this are degenerate.
pub const DENOMINATOR_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErroneousScore {
    pub document_id: String,
    pub e: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// Erroneous features present in the instance.
    pub m: usize,
    /// Features contributing strictly positively.
    pub n: usize,
    pub flagged: bool,
    pub predicted_class: usize,
    pub predicted_prob: f64,
}

pub fn erroneous_score(explanation: &LocalExplanation, erroneous: &ErroneousFeatureSet, tau: f64) -> ErroneousScore {
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut m = 0;
    let mut n = 0;
    for (feature, c) in &explanation.contributions {
        if erroneous.contains(feature) {
            numerator += c;
            m += 1;
        }
        if *c > 0.0 {
            denominator += c;
            n += 1;
        }
    }
    let e = if denominator < DENOMINATOR_EPSILON {
        if numerator > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        numerator / denominator
    };
    ErroneousScore {
        document_id: explanation.document_id.clone(),
        e,
        numerator,
        denominator,
        m,
        n,
        flagged: e > tau,
        predicted_class: explanation.predicted_class,
        predicted_prob: explanation.predicted_prob,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tau: f64,
    /// Sorted by descending `e`, then document id.
    pub scored: Vec<ErroneousScore>,
    /// Ids of documents without any erroneous feature, sorted.
    pub skipped: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub tau: f64,
    pub scored: usize,
    pub flagged: usize,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl DetectionReport {
    pub fn flagged(&self) -> impl Iterator<Item = &ErroneousScore> {
        self.scored.iter().filter(|s| s.flagged)
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged().count()
    }

    /// Same scores under a different threshold.
    pub fn with_threshold(&self, tau: f64) -> DetectionReport {
        let mut report = self.clone();
        report.tau = tau;
        for s in &mut report.scored {
            s.flagged = s.e > tau;
        }
        report
    }

    pub fn summary(&self) -> DetectionSummary {
        DetectionSummary {
            tau: self.tau,
            scored: self.scored.len(),
            flagged: self.flagged_count(),
            skipped: self.skipped.len(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["doc_id", "e", "numerator", "denominator", "m", "n", "flagged", "predicted_class"])?;
        for s in &self.scored {
            out.write_record([
                s.document_id.clone(),
                s.e.to_string(),
                s.numerator.to_string(),
                s.denominator.to_string(),
                s.m.to_string(),
                s.n.to_string(),
                s.flagged.to_string(),
                s.predicted_class.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a report written by [`DetectionReport::write_csv`]. Predicted probabilities and
    /// skipped ids are not part of the CSV; they come back as NaN and empty.
    pub fn read_csv<R: std::io::Read>(reader: R, tau: f64) -> Result<DetectionReport> {
        let mut scored = Vec::new();
        for (i, row) in csv::Reader::from_reader(reader).deserialize().enumerate() {
            let row: CsvRow = row.map_err(|e| Error::parse(format!("detection report row {}", i + 1), e))?;
            scored.push(ErroneousScore {
                document_id: row.doc_id,
                e: row.e,
                numerator: row.numerator,
                denominator: row.denominator,
                m: row.m,
                n: row.n,
                flagged: row.flagged,
                predicted_class: row.predicted_class,
                predicted_prob: f64::NAN,
            });
        }
        scored.sort_by(score_order);
        Ok(DetectionReport {
            tau,
            scored,
            skipped: Vec::new(),
            warnings: Vec::new(),
        })
    }
}

#[derive(Deserialize)]
struct CsvRow {
    doc_id: String,
    e: f64,
    numerator: f64,
    denominator: f64,
    m: usize,
    n: usize,
    flagged: bool,
    predicted_class: usize,
}

fn score_order(a: &ErroneousScore, b: &ErroneousScore) -> std::cmp::Ordering {
    b.e.total_cmp(&a.e).then_with(|| a.document_id.cmp(&b.document_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub tau: f64,
    pub explainer: ExplainerConfig,
    pub workers: Option<usize>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            tau: 0.0,
            explainer: ExplainerConfig::default(),
            workers: None,
        }
    }
}

/// Explains and scores every document containing an erroneous feature.
pub fn detect(
    corpus: &Corpus,
    model: &ModelHandle,
    erroneous: &ErroneousFeatureSet,
    config: &DetectConfig,
) -> Result<(DetectionReport, Vec<LocalExplanation>)> {
    if !config.tau.is_finite() {
        return Err(Error::Config(format!("tau must be finite, got {}", config.tau)));
    }
    let mut warnings = Vec::new();
    if erroneous.is_empty() {
        warnings.push("erroneous feature set is empty; every instance skipped".to_string());
    }
    let (candidates, skipped): (Vec<&Document>, Vec<&Document>) = corpus
        .documents()
        .iter()
        .partition(|d| d.tokens.iter().any(|t| erroneous.contains(t)));
    let mut skipped: Vec<String> = skipped.into_iter().map(|d| d.id.clone()).collect();
    skipped.sort();

    let run = || -> Result<Vec<(ErroneousScore, LocalExplanation)>> {
        candidates
            .par_iter()
            .map(|doc| {
                let explanation = explain_instance(model, doc, &config.explainer)?;
                Ok((erroneous_score(&explanation, erroneous, config.tau), explanation))
            })
            .collect()
    };
    let mut results = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    results.sort_by(|a, b| score_order(&a.0, &b.0));
    let (scored, explanations): (Vec<ErroneousScore>, Vec<LocalExplanation>) = results.into_iter().unzip();
    Ok((
        DetectionReport {
            tau: config.tau,
            scored,
            skipped,
            warnings,
        },
        explanations,
    ))
}

/// Writes one JSON object per explanation.
pub fn write_explanations<W: Write>(mut writer: W, explanations: &[LocalExplanation]) -> Result<()> {
    for e in explanations {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Every token of `doc` that is an erroneous feature.
pub fn erroneous_tokens<'a>(doc: &'a Document, erroneous: &ErroneousFeatureSet) -> BTreeSet<&'a str> {
    doc.tokens
        .iter()
        .filter(|t| erroneous.contains(t))
        .map(String::as_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LogisticModel;
    use crate::text::{build_corpus, ClassConfig};
    use proptest::prelude::*;

    fn explanation(pairs: &[(&str, f64)]) -> LocalExplanation {
        LocalExplanation {
            document_id: "d".into(),
            predicted_class: 2,
            predicted_prob: 0.8,
            contributions: pairs.iter().map(|(f, c)| (f.to_string(), *c)).collect(),
            surrogate_r2: 1.0,
            intercept: 0.0,
            seed: 0,
        }
    }

    fn set(features: &[&str]) -> ErroneousFeatureSet {
        ErroneousFeatureSet::from_features(features.iter().map(|f| (*f, 2)))
    }

    #[test]
    fn panera_arithmetic() {
        let s = erroneous_score(
            &explanation(&[("panera", 0.576), ("gives", 0.046), ("diarrhea", -0.159)]),
            &set(&["panera"]),
            0.0,
        );
        assert!((s.e - 0.926).abs() < 1e-3, "{}", s.e);
        assert_eq!((s.m, s.n), (1, 2));
        assert!(s.flagged);
    }

    #[test]
    fn disguised_error_scores_half() {
        let s = erroneous_score(&explanation(&[("bad_feature", 0.5), ("good", 0.5)]), &set(&["bad_feature"]), 0.0);
        assert_eq!(s.e, 0.5);
    }

    #[test]
    fn zero_numerator_scores_zero() {
        let s = erroneous_score(&explanation(&[("x", 0.0), ("good", 1.0)]), &set(&["x"]), 0.0);
        assert_eq!(s.e, 0.0);
        assert!(!s.flagged);
        assert_eq!(s.m, 1);
    }

    #[test]
    fn negative_erroneous_contribution_lowers_score() {
        let s = erroneous_score(&explanation(&[("good", 0.2), ("x", -1.0)]), &set(&["x"]), 0.0);
        assert!((s.e + 5.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominators() {
        let s = erroneous_score(&explanation(&[("x", -1.0), ("y", -0.5)]), &set(&["x"]), -10.0);
        assert_eq!((s.e, s.denominator), (0.0, 0.0));
        let s = erroneous_score(&explanation(&[("x", 1e-10), ("y", -1.0)]), &set(&["x"]), 0.0);
        assert_eq!(s.e, 1.0);
    }

    #[test]
    fn strict_threshold_at_one() {
        let s = erroneous_score(&explanation(&[("x", 1.0)]), &set(&["x"]), 1.0);
        assert_eq!(s.e, 1.0);
        assert!(!s.flagged);
    }

    fn planted() -> (ModelHandle, Corpus) {
        let mut m = LogisticModel::zeros(ClassConfig::sentiment(), vec![]);
        m.set_weight(2, "panera", 2.0);
        m.set_weight(0, "awful", 1.5);
        m.set_weight(2, "good", 1.0);
        let docs = vec![
            Document::from_tokens("d1", &["panera", "lunch"], Some(0)),
            Document::from_tokens("d2", &["good", "day"], Some(2)),
            Document::from_tokens("d3", &["awful", "panera", "good"], Some(0)),
            Document::from_tokens("d4", &["awful"], Some(0)),
            Document::from_tokens("d5", &["plain", "words"], Some(1)),
        ];
        (ModelHandle::builtin(m), build_corpus(docs).unwrap())
    }

    #[test]
    fn detect_scores_only_candidates() {
        let (model, corpus) = planted();
        let (report, explanations) = detect(&corpus, &model, &set(&["panera"]), &DetectConfig::default()).unwrap();
        assert_eq!(report.scored.len(), 2);
        assert_eq!(report.skipped, ["d2", "d4", "d5"]);
        assert_eq!(explanations.len(), 2);
        assert!(report.scored.windows(2).all(|w| w[0].e >= w[1].e));
        // d1 is predicted positive purely because of "panera".
        let d1 = report.scored.iter().find(|s| s.document_id == "d1").unwrap();
        assert!((d1.e - 1.0).abs() < 1e-9);
        for id in &report.skipped {
            assert!(erroneous_tokens(corpus.get(id).unwrap(), &set(&["panera"])).is_empty());
        }
    }

    #[test]
    fn detect_threshold_extremes() {
        let (model, corpus) = planted();
        let cfg = DetectConfig {
            tau: 1.0,
            ..DetectConfig::default()
        };
        let (report, _) = detect(&corpus, &model, &set(&["panera"]), &cfg).unwrap();
        assert_eq!(report.flagged_count(), 0);
        let low = report.with_threshold(-1e12);
        assert_eq!(low.flagged_count(), low.scored.len());
        assert!(matches!(
            detect(&corpus, &model, &set(&["panera"]), &DetectConfig { tau: f64::NAN, ..DetectConfig::default() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_set_skips_everything_with_warning() {
        let (model, corpus) = planted();
        let (report, _) = detect(&corpus, &model, &ErroneousFeatureSet::empty(), &DetectConfig::default()).unwrap();
        assert!(report.scored.is_empty());
        assert_eq!(report.skipped.len(), 5);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn report_csv_layout() {
        let (model, corpus) = planted();
        let (report, _) = detect(&corpus, &model, &set(&["panera"]), &DetectConfig::default()).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "doc_id,e,numerator,denominator,m,n,flagged,predicted_class");
        assert_eq!(lines.count(), 2);
        let back = DetectionReport::read_csv(buf_again(&report).as_slice(), 0.0).unwrap();
        assert_eq!(back.scored.len(), report.scored.len());
        for (a, b) in back.scored.iter().zip(&report.scored) {
            assert_eq!((&a.document_id, a.e, a.numerator, a.flagged), (&b.document_id, b.e, b.numerator, b.flagged));
        }
    }

    fn buf_again(report: &DetectionReport) -> Vec<u8> {
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        buf
    }

    proptest! {
        #[test]
        fn numerator_and_denominator_re_sum(cs in prop::collection::vec(-1.0f64..=1.0, 1..8), mask in prop::collection::vec(any::<bool>(), 8)) {
            let pairs: Vec<(String, f64)> = cs.iter().enumerate().map(|(i, c)| (format!("f{i}"), *c)).collect();
            let bad: Vec<&str> = pairs.iter().zip(&mask).filter(|(_, b)| **b).map(|((f, _), _)| f.as_str()).collect();
            let e = LocalExplanation { contributions: pairs.clone(), ..explanation(&[]) };
            let s = erroneous_score(&e, &set(&bad), 0.0);
            let num: f64 = pairs.iter().filter(|(f, _)| bad.contains(&f.as_str())).map(|(_, c)| c).sum();
            let den: f64 = pairs.iter().filter(|(_, c)| *c > 0.0).map(|(_, c)| c).sum();
            prop_assert_eq!(s.numerator, num);
            prop_assert_eq!(s.denominator, den);
            prop_assert!(s.e <= 1.0);
        }
    }
}
