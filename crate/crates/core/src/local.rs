//! Local explanations from masking perturbations and a weighted linear surrogate.
//!
//! A document's unique unigrams form the interpretable space. Each perturbation keeps a
//! subset of them (masking a unigram deletes all of its occurrences), the model scores the
//! perturbed text, and a kernel-weighted ridge regression of the predicted-class probability
//! on the keep-mask yields one coefficient per unigram. Coefficients are then scaled by the
//! largest magnitude so every contribution lies in `[-1, 1]`.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::ModelHandle;
use crate::text::Document;

/// Masks with this many unique unigrams or fewer are enumerated exhaustively when
/// `2^U <= n_samples`.
pub const EXHAUSTIVE_MAX_UNIQUE: usize = 10;

/// Coefficient magnitudes below this are treated as an all-zero explanation.
const ZERO_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Kernel width over the masked fraction.
    pub sigma: f64,
    pub ridge_alpha: f64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            n_samples: 1000,
            seed: 7,
            sigma: 0.25,
            ridge_alpha: 1e-3,
        }
    }
}

/// A masked variant of a document, before the model has scored it.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    /// One entry per unique unigram; `true` = kept.
    pub mask: Vec<bool>,
    pub tokens: Vec<String>,
    pub weight: f64,
}

impl Perturbation {
    pub fn with_target(self, target: f64) -> PerturbationSample {
        PerturbationSample {
            mask: self.mask,
            tokens: self.tokens,
            weight: self.weight,
            target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    pub mask: Vec<bool>,
    pub tokens: Vec<String>,
    pub weight: f64,
    /// Model probability of the explained class on `tokens`.
    pub target: f64,
}

/// exp(-D²/σ²) where D is the fraction of unique unigrams masked.
pub fn kernel_weight(mask: &[bool], sigma: f64) -> f64 {
    if mask.is_empty() {
        return 1.0;
    }
    let masked = mask.iter().filter(|k| !**k).count() as f64;
    let d = masked / mask.len() as f64;
    (-(d * d) / (sigma * sigma)).exp()
}

fn apply_mask(doc: &Document, vocab: &[String], mask: &[bool]) -> Vec<String> {
    let dropped: HashSet<&str> = vocab
        .iter()
        .zip(mask)
        .filter(|(_, keep)| !**keep)
        .map(|(t, _)| t.as_str())
        .collect();
    doc.tokens
        .iter()
        .filter(|t| !dropped.contains(t.as_str()))
        .cloned()
        .collect()
}

/// Sample 0 is the untouched document. With `U` unique unigrams, small documents
/// (`U <= 10` and `2^U <= n_samples`) get every mask exactly once; otherwise each further
/// sample keeps a uniformly drawn number of unigrams in `1..U` chosen uniformly at random.
pub fn generate_perturbations(doc: &Document, n_samples: usize, seed: u64, sigma: f64) -> Result<Vec<Perturbation>> {
    let vocab = doc.unique_tokens();
    let u = vocab.len();
    if u == 0 {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    if n_samples == 0 {
        return Err(Error::Validation("n_samples must be at least 1".into()));
    }
    let make = |mask: Vec<bool>| Perturbation {
        tokens: apply_mask(doc, &vocab, &mask),
        weight: kernel_weight(&mask, sigma),
        mask,
    };

    let mut out = Vec::with_capacity(n_samples);
    out.push(make(vec![true; u]));
    if n_samples == 1 {
        return Ok(out);
    }

    if u <= EXHAUSTIVE_MAX_UNIQUE && (1usize << u) <= n_samples {
        let full = (1usize << u) - 1;
        for bits in (0..full).rev() {
            out.push(make((0..u).map(|j| bits >> j & 1 == 1).collect()));
        }
        return Ok(out);
    }

    out.extend(sample_masks(u, n_samples - 1, seed).into_iter().map(make));
    Ok(out)
}

/// Like [`generate_perturbations`] but always draws random masks after sample 0,
/// whatever the document size.
pub fn sample_perturbations(doc: &Document, n_samples: usize, seed: u64, sigma: f64) -> Result<Vec<Perturbation>> {
    let vocab = doc.unique_tokens();
    let u = vocab.len();
    if u == 0 {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    if n_samples == 0 {
        return Err(Error::Validation("n_samples must be at least 1".into()));
    }
    let full = vec![true; u];
    Ok(std::iter::once(full)
        .chain(sample_masks(u, n_samples - 1, seed))
        .map(|mask| Perturbation {
            tokens: apply_mask(doc, &vocab, &mask),
            weight: kernel_weight(&mask, sigma),
            mask,
        })
        .collect())
}

/// Kept size uniform over `1..u`, then a uniform subset of that size. With `u == 1`
/// the only proper sub-mask is the empty one.
fn sample_masks(u: usize, count: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut mask = vec![false; u];
            if u > 1 {
                let kept = rng.gen_range(1..u);
                for j in index::sample(&mut rng, u, kept) {
                    mask[j] = true;
                }
            }
            mask
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
}

/// Weighted ridge regression of target on keep-mask with an unpenalized intercept,
/// solved through the centered normal equations.
pub fn fit_surrogate(samples: &[PerturbationSample], ridge_alpha: f64) -> Result<Surrogate> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Validation("surrogate needs at least one sample".into()))?;
    let p = first.mask.len();
    if samples.iter().any(|s| s.mask.len() != p) {
        return Err(Error::Validation("perturbation masks differ in length".into()));
    }
    if samples.iter().any(|s| !(s.weight > 0.0) || !s.target.is_finite()) {
        return Err(Error::Validation("sample weights must be positive and targets finite".into()));
    }
    if samples.iter().all(|s| s.target == first.target) {
        return Ok(Surrogate {
            coefficients: vec![0.0; p],
            intercept: first.target,
            r2: 1.0,
        });
    }

    let total: f64 = samples.iter().map(|s| s.weight).sum();
    let mut mean_x = vec![0.0; p];
    let mut mean_t = 0.0;
    for s in samples {
        for (m, &keep) in mean_x.iter_mut().zip(&s.mask) {
            if keep {
                *m += s.weight;
            }
        }
        mean_t += s.weight * s.target;
    }
    mean_x.iter_mut().for_each(|m| *m /= total);
    mean_t /= total;

    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    let mut centered = vec![0.0; p];
    for s in samples {
        for j in 0..p {
            centered[j] = f64::from(u8::from(s.mask[j])) - mean_x[j];
        }
        let dt = s.target - mean_t;
        for a in 0..p {
            let wa = s.weight * centered[a];
            rhs[a] += wa * dt;
            for b in 0..=a {
                gram[a][b] += wa * centered[b];
            }
        }
    }
    for a in 0..p {
        gram[a][a] += ridge_alpha;
        for b in 0..a {
            gram[b][a] = gram[a][b];
        }
    }
    let coefficients = cholesky_solve(gram, rhs)?;
    let intercept = mean_t - coefficients.iter().zip(&mean_x).map(|(c, m)| c * m).sum::<f64>();

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for s in samples {
        let fitted = intercept
            + coefficients
                .iter()
                .zip(&s.mask)
                .filter(|(_, keep)| **keep)
                .map(|(c, _)| c)
                .sum::<f64>();
        ss_res += s.weight * (s.target - fitted).powi(2);
        ss_tot += s.weight * (s.target - mean_t).powi(2);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(Surrogate {
        coefficients,
        intercept,
        r2,
    })
}

/// Solves `a x = b` for symmetric positive definite `a`.
fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let diag = a[j][j];
        let mut d = diag;
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 64.0 * f64::EPSILON * diag) || !d.is_finite() {
            return Err(Error::Singular);
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    #[serde(rename = "id")]
    pub document_id: String,
    pub predicted_class: usize,
    /// Model probability of `predicted_class` on the unperturbed text.
    pub predicted_prob: f64,
    /// Sorted by descending magnitude, then feature.
    #[serde(serialize_with = "ordered_map", deserialize_with = "from_map")]
    pub contributions: Vec<(String, f64)>,
    #[serde(rename = "r2")]
    pub surrogate_r2: f64,
    pub intercept: f64,
    pub seed: u64,
}

fn ordered_map<S: Serializer>(pairs: &[(String, f64)], serializer: S) -> std::result::Result<S::Ok, S::Error> {
    let mut map = serializer.serialize_map(Some(pairs.len()))?;
    for (k, v) in pairs {
        map.serialize_entry(k, v)?;
    }
    map.end()
}

fn from_map<'de, D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Vec<(String, f64)>, D::Error> {
    let map = std::collections::BTreeMap::<String, f64>::deserialize(deserializer)?;
    let mut pairs: Vec<(String, f64)> = map.into_iter().collect();
    sort_contributions(&mut pairs);
    Ok(pairs)
}

fn sort_contributions(pairs: &mut [(String, f64)]) {
    pairs.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
}

impl LocalExplanation {
    pub fn contribution(&self, feature: &str) -> Option<f64> {
        self.contributions.iter().find(|(f, _)| f == feature).map(|(_, c)| *c)
    }

    pub fn max_abs(&self) -> f64 {
        self.contributions.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }
}

/// Explains the model's most probable class on `doc`.
pub fn explain_instance(model: &ModelHandle, doc: &Document, config: &ExplainerConfig) -> Result<LocalExplanation> {
    let original = model.predict_document(doc, None)?;
    let predicted_class = original.argmax();
    let perturbations = generate_perturbations(doc, config.n_samples, config.seed, config.sigma)?;

    let texts: Vec<Vec<String>> = perturbations[1..].iter().map(|p| p.tokens.clone()).collect();
    let predictions = model.predict_proba(&texts)?;
    let targets = std::iter::once(original.get(predicted_class)).chain(predictions.iter().map(|p| p.get(predicted_class)));
    let samples: Vec<PerturbationSample> = perturbations
        .into_iter()
        .zip(targets)
        .map(|(p, t)| p.with_target(t))
        .collect();

    let surrogate = fit_surrogate(&samples, config.ridge_alpha)?;
    let scale = surrogate.coefficients.iter().map(|c| c.abs()).fold(0.0, f64::max);
    let vocab = doc.unique_tokens();
    let mut contributions: Vec<(String, f64)> = vocab
        .into_iter()
        .zip(&surrogate.coefficients)
        .map(|(t, &c)| (t, if scale > ZERO_SCALE { c / scale } else { 0.0 }))
        .collect();
    sort_contributions(&mut contributions);

    Ok(LocalExplanation {
        document_id: doc.id.clone(),
        predicted_class,
        predicted_prob: original.get(predicted_class),
        contributions,
        surrogate_r2: surrogate.r2,
        intercept: surrogate.intercept,
        seed: config.seed,
    })
}
