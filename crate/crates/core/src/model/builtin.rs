//! Multinomial logistic regression over bag-of-words counts.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Classifier, ModelHandle, ModelKind};
use crate::error::{Error, Result};
use crate::text::{ClassConfig, Corpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            l2: 0.01,
            epochs: 500,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective value before each update, plus the final value.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Trained weights. Unknown tokens at prediction time contribute nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    classes: ClassConfig,
    vocabulary: Vec<String>,
    /// One row per class, one column per vocabulary entry.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl LogisticModel {
    /// All-zero weights: every input maps to the uniform distribution.
    pub fn zeros(classes: ClassConfig, mut vocabulary: Vec<String>) -> Self {
        vocabulary.sort();
        vocabulary.dedup();
        let k = classes.k();
        let v = vocabulary.len();
        let mut model = LogisticModel {
            classes,
            vocabulary,
            weights: vec![vec![0.0; v]; k],
            bias: vec![0.0; k],
            lookup: HashMap::new(),
        };
        model.rebuild_lookup();
        model
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn classes(&self) -> &ClassConfig {
        &self.classes
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, class: usize, token: &str) -> f64 {
        self.lookup.get(token).map_or(0.0, |&j| self.weights[class][j])
    }

    pub fn set_bias(&mut self, class: usize, value: f64) {
        self.bias[class] = value;
    }

    /// Sets one weight, growing the vocabulary if the token is new.
    pub fn set_weight(&mut self, class: usize, token: &str, value: f64) {
        if !self.lookup.contains_key(token) {
            self.vocabulary.push(token.to_string());
            for row in &mut self.weights {
                row.push(0.0);
            }
            self.lookup.insert(token.to_string(), self.vocabulary.len() - 1);
        }
        let j = self.lookup[token];
        self.weights[class][j] = value;
    }

    pub fn logits(&self, tokens: &[String]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for t in tokens {
            if let Some(&j) = self.lookup.get(t) {
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk += self.weights[k][j];
                }
            }
        }
        z
    }

    pub fn probabilities(&self, tokens: &[String]) -> Vec<f64> {
        softmax(&self.logits(tokens))
    }

    pub fn train(corpus: &Corpus, classes: &ClassConfig, config: &TrainConfig) -> Result<(Self, TrainReport)> {
        let missing: Vec<String> = corpus
            .documents()
            .iter()
            .filter(|d| d.gold_label.is_none())
            .map(|d| d.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingLabel(missing));
        }
        let k = classes.k();
        let mut per_class = vec![0usize; k];
        for d in corpus.documents() {
            let label = d.gold_label.unwrap_or_default();
            if label >= k {
                return Err(Error::UnknownClass(label.to_string()));
            }
            per_class[label] += 1;
        }
        if let Some(empty) = per_class.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(classes.name(empty).to_string()));
        }

        let vocabulary: Vec<String> = corpus.features().map(str::to_string).collect();
        let mut model = LogisticModel::zeros(classes.clone(), vocabulary);

        // Sparse count vectors, visited in a seeded order.
        let mut examples: Vec<(Vec<(usize, f64)>, usize)> = corpus
            .documents()
            .iter()
            .map(|d| {
                let mut counts: HashMap<usize, f64> = HashMap::new();
                for t in &d.tokens {
                    *counts.entry(model.lookup[t]).or_default() += 1.0;
                }
                let mut counts: Vec<(usize, f64)> = counts.into_iter().collect();
                counts.sort_by_key(|&(j, _)| j);
                (counts, d.gold_label.unwrap_or_default())
            })
            .collect();
        examples.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

        let n = examples.len() as f64;
        let v = model.vocabulary.len();
        let mut losses: Vec<f64> = Vec::with_capacity(config.epochs + 1);
        let mut grad_w = vec![vec![0.0; v]; k];
        let mut grad_b = vec![0.0; k];

        for epoch in 0..=config.epochs {
            for row in &mut grad_w {
                row.iter_mut().for_each(|g| *g = 0.0);
            }
            grad_b.iter_mut().for_each(|g| *g = 0.0);

            let mut data_loss = 0.0;
            for (counts, label) in &examples {
                let mut z = model.bias.clone();
                for &(j, c) in counts {
                    for (kk, zk) in z.iter_mut().enumerate() {
                        *zk += model.weights[kk][j] * c;
                    }
                }
                let p = softmax(&z);
                data_loss -= p[*label].max(f64::MIN_POSITIVE).ln();
                for kk in 0..k {
                    let residual = p[kk] - if kk == *label { 1.0 } else { 0.0 };
                    grad_b[kk] += residual;
                    for &(j, c) in counts {
                        grad_w[kk][j] += residual * c;
                    }
                }
            }
            let penalty: f64 = model.weights.iter().flatten().map(|w| w * w).sum::<f64>() * config.l2 / 2.0;
            let loss = data_loss / n + penalty;
            if let Some(&previous) = losses.last() {
                if loss > previous + 1e-12 * previous.abs().max(1.0) {
                    return Err(Error::TrainingDiverged {
                        epoch,
                        previous,
                        current: loss,
                    });
                }
            }
            losses.push(loss);
            if epoch == config.epochs {
                break;
            }

            for kk in 0..k {
                model.bias[kk] -= config.learning_rate * grad_b[kk] / n;
                for j in 0..v {
                    let g = grad_w[kk][j] / n + config.l2 * model.weights[kk][j];
                    model.weights[kk][j] -= config.learning_rate * g;
                }
            }
        }

        let correct = corpus
            .documents()
            .iter()
            .filter(|d| argmax(&model.probabilities(&d.tokens)) == d.gold_label.unwrap_or_default())
            .count();
        let report = TrainReport {
            losses,
            train_accuracy: correct as f64 / n,
        };
        Ok((model, report))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut model: LogisticModel = serde_json::from_str(&text)?;
        model.classes = model.classes.validated()?;
        let (k, v) = (model.classes.k(), model.vocabulary.len());
        if model.bias.len() != k || model.weights.len() != k || model.weights.iter().any(|r| r.len() != v) {
            return Err(Error::parse(path.display().to_string(), "weight shape mismatch"));
        }
        model.rebuild_lookup();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

impl Classifier for LogisticModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Builtin
    }

    fn class_config(&self) -> &ClassConfig {
        &self.classes
    }

    fn identity(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"builtin-logistic\0");
        for c in self.classes.classes() {
            hasher.update(c.as_bytes());
            hasher.update([0]);
        }
        for t in &self.vocabulary {
            hasher.update(t.as_bytes());
            hasher.update([0]);
        }
        for w in self.weights.iter().flatten().chain(&self.bias) {
            hasher.update(w.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        let hex: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
        format!("builtin:{hex}")
    }

    fn predict_raw(&self, texts: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.probabilities(t)).collect())
    }
}

/// Trains the builtin classifier and wraps it in a handle.
pub fn train_builtin(corpus: &Corpus, classes: &ClassConfig, config: &TrainConfig) -> Result<ModelHandle> {
    let (model, _) = LogisticModel::train(corpus, classes, config)?;
    Ok(ModelHandle::builtin(model))
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}
