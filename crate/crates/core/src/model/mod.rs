//! Black-box model interface.
//!
//! Every consumer sees a [`ModelHandle`]: a thread-safe facade over either the
//! builtin logistic-regression classifier or an external model reached over the
//! line-delimited JSON protocol. All distributions returned through the handle are
//! validated (non-negative, length K, summing to 1 within [`SUM_TOLERANCE`]).

mod builtin;
mod cache;
mod external;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{ClassConfig, Document};

pub use builtin::{train_builtin, LogisticModel, TrainConfig, TrainReport};
pub use cache::{cache_key, CacheKey, PredictionCache};
pub use external::{ExternalConfig, ExternalModel};

pub const SUM_TOLERANCE: f64 = 1e-6;

/// Class-probability vector for one input text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionDistribution(Vec<f64>);

impl PredictionDistribution {
    pub fn new(probs: Vec<f64>, k: usize) -> Result<Self> {
        if probs.len() != k {
            return Err(Error::Protocol(format!(
                "distribution has {} entries, expected {k}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Protocol(format!("distribution has invalid entries: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Protocol(format!("distribution sums to {sum}, not 1")));
        }
        Ok(PredictionDistribution(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.0[self.argmax()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Builtin,
    External,
}

/// Anything that maps token sequences to per-class probabilities.
pub trait Classifier: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn class_config(&self) -> &ClassConfig;
    /// Stable identity used in cache keys.
    fn identity(&self) -> String;
    /// Raw rows, one per text, in input order. Validation happens in [`ModelHandle`].
    fn predict_raw(&self, texts: &[Vec<String>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone)]
pub struct ModelHandle {
    inner: Arc<dyn Classifier>,
    identity: Arc<str>,
    cache: Option<Arc<PredictionCache>>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("kind", &self.kind())
            .field("identity", &self.identity)
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

impl ModelHandle {
    pub fn new(classifier: Arc<dyn Classifier>) -> Self {
        let identity = classifier.identity().into();
        ModelHandle {
            inner: classifier,
            identity,
            cache: None,
        }
    }

    pub fn builtin(model: LogisticModel) -> Self {
        ModelHandle::new(Arc::new(model))
    }

    pub fn with_cache(mut self, cache: Arc<PredictionCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn without_cache(&self) -> Self {
        ModelHandle {
            cache: None,
            ..self.clone()
        }
    }

    pub fn cache(&self) -> Option<&Arc<PredictionCache>> {
        self.cache.as_ref()
    }

    pub fn kind(&self) -> ModelKind {
        self.inner.kind()
    }

    pub fn class_config(&self) -> &ClassConfig {
        self.inner.class_config()
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn predict_proba(&self, texts: &[Vec<String>]) -> Result<Vec<PredictionDistribution>> {
        let rows = self.inner.predict_raw(texts)?;
        if rows.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "model returned {} rows for {} texts",
                rows.len(),
                texts.len()
            )));
        }
        let k = self.class_config().k();
        rows.into_iter().map(|row| PredictionDistribution::new(row, k)).collect()
    }

    pub fn predict_one(&self, tokens: &[String]) -> Result<PredictionDistribution> {
        let mut out = self.predict_proba(&[tokens.to_vec()])?;
        Ok(out.remove(0))
    }

    /// Prediction for `doc` with every occurrence of `masked` removed (or unmasked
    /// for `None`), served from the cache when one is attached.
    pub fn predict_document(&self, doc: &Document, masked: Option<&str>) -> Result<PredictionDistribution> {
        let tokens = match masked {
            Some(feature) => mask_feature(&doc.tokens, feature),
            None => doc.tokens.clone(),
        };
        let Some(cache) = &self.cache else {
            return self.predict_one(&tokens);
        };
        let key = cache_key(&self.identity, &doc.tokens, masked);
        if let Some(hit) = cache.get(&key) {
            return Ok(hit);
        }
        let fresh = self.predict_one(&tokens)?;
        cache.insert(key, fresh.clone());
        Ok(fresh)
    }

    /// Batched form of [`predict_document`](Self::predict_document): cache hits are served
    /// directly and all misses go to the model in one call.
    pub fn predict_documents(&self, requests: &[(&Document, Option<&str>)]) -> Result<Vec<PredictionDistribution>> {
        let keys: Vec<Option<CacheKey>> = requests
            .iter()
            .map(|(doc, masked)| self.cache.as_ref().map(|_| cache_key(&self.identity, &doc.tokens, *masked)))
            .collect();
        let mut out: Vec<Option<PredictionDistribution>> = match &self.cache {
            Some(cache) => keys.iter().map(|k| k.as_ref().and_then(|k| cache.get(k))).collect(),
            None => vec![None; requests.len()],
        };
        let missing: Vec<usize> = (0..requests.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let texts: Vec<Vec<String>> = missing
                .iter()
                .map(|&i| match requests[i].1 {
                    Some(feature) => mask_feature(&requests[i].0.tokens, feature),
                    None => requests[i].0.tokens.clone(),
                })
                .collect();
            let fresh = self.predict_proba(&texts)?;
            for (&i, dist) in missing.iter().zip(fresh) {
                if let (Some(cache), Some(key)) = (&self.cache, keys[i]) {
                    cache.insert(key, dist.clone());
                }
                out[i] = Some(dist);
            }
        }
        Ok(out.into_iter().map(|d| d.expect("every slot filled")).collect())
    }
}

/// Removes every occurrence of `feature`, keeping the order of the other tokens.
pub fn mask_feature(tokens: &[String], feature: &str) -> Vec<String> {
    tokens.iter().filter(|t| t.as_str() != feature).cloned().collect()
}
