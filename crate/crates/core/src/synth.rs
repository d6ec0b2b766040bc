//! Planted-error benchmark.
//!
//! A three-class corpus over a small synthetic vocabulary. Indicator words carry their class in
//! both splits. Each poison token has a true polarity but, in training, only co-occurs with the
//! opposite polarity, so a model fit on the training split learns it backwards; in the test
//! split poison tokens appear in documents of their true class and cause mispredictions.
//! A fraction of documents mix in indicators of another class to give the model honest,
//! low-confidence mistakes as well.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationTask, GoldItem, Judgment, Side};
use crate::error::Result;
use crate::text::{build_corpus, save_corpus, ClassConfig, Corpus, Document};

const NEGATIVE: usize = 0;
const NEUTRAL: usize = 1;
const POSITIVE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Indicator words per class.
    pub indicators_per_class: usize,
    pub n_filler: usize,
    /// Split evenly between the two polarities.
    pub n_poison: usize,
    pub train_poison_rate: f64,
    pub test_poison_rate: f64,
    pub ambiguous_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 2000,
            n_test: 500,
            indicators_per_class: 15,
            n_filler: 245,
            n_poison: 10,
            train_poison_rate: 0.3,
            test_poison_rate: 0.25,
            ambiguous_rate: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub classes: ClassConfig,
    pub train: Corpus,
    pub test: Corpus,
    /// True direction of every vocabulary word; filler is neutral.
    pub polarity: BTreeMap<String, usize>,
    pub poison: Vec<String>,
    pub definitions: BTreeMap<String, String>,
    pub gold_pool: Vec<GoldItem>,
}

struct Vocabulary {
    indicators: [Vec<String>; 3],
    filler: Vec<String>,
    /// Poison tokens by true polarity.
    poison: [Vec<String>; 3],
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

fn opposite(class: usize) -> usize {
    if class == POSITIVE {
        NEGATIVE
    } else {
        POSITIVE
    }
}

impl Vocabulary {
    fn new(config: &SynthConfig) -> Self {
        let n = config.indicators_per_class;
        let half = config.n_poison / 2;
        let poison = names("brand", config.n_poison);
        Vocabulary {
            indicators: [names("bad", n), names("plain", n), names("good", n)],
            filler: names("word", config.n_filler),
            poison: [poison[..half].to_vec(), Vec::new(), poison[half..].to_vec()],
        }
    }

    fn pick<'a>(list: &'a [String], rng: &mut ChaCha8Rng) -> &'a str {
        list.choose(rng).expect("non-empty word list")
    }

    fn document(&self, split: Split, rng: &mut ChaCha8Rng, config: &SynthConfig) -> (Vec<String>, usize) {
        let len = rng.gen_range(8..=12);
        let mut tokens: Vec<String> = Vec::with_capacity(len);
        let label;
        let poison_rate = match split {
            Split::Train => config.train_poison_rate,
            Split::Test => config.test_poison_rate,
        };
        let has_poison = !self.poison[POSITIVE].is_empty() && rng.gen_bool(poison_rate);
        if has_poison {
            let truth = if rng.gen_bool(0.5) { POSITIVE } else { NEGATIVE };
            match split {
                // The poison shows up in the opposite class, alone or with one indicator.
                Split::Train => {
                    label = opposite(truth);
                    tokens.push(Self::pick(&self.poison[truth], rng).to_string());
                    if rng.gen_bool(0.5) {
                        tokens.push(Self::pick(&self.indicators[label], rng).to_string());
                    }
                }
                // Two poison tokens of the true class against a single true indicator.
                Split::Test => {
                    label = truth;
                    let mut pair: Vec<&String> = self.poison[truth].choose_multiple(rng, 2).collect();
                    pair.sort();
                    tokens.extend(pair.into_iter().cloned());
                    tokens.push(Self::pick(&self.indicators[label], rng).to_string());
                }
            }
        } else {
            label = rng.gen_range(0..3);
            for _ in 0..2 {
                tokens.push(Self::pick(&self.indicators[label], rng).to_string());
            }
            if rng.gen_bool(config.ambiguous_rate) {
                let other = (label + rng.gen_range(1..3)) % 3;
                for _ in 0..rng.gen_range(1..=2) {
                    tokens.push(Self::pick(&self.indicators[other], rng).to_string());
                }
            }
        }
        while tokens.len() < len {
            tokens.push(Self::pick(&self.filler, rng).to_string());
        }
        tokens.shuffle(rng);
        (tokens, label)
    }
}

#[derive(Clone, Copy)]
enum Split {
    Train,
    Test,
}

pub fn generate_benchmark(config: &SynthConfig) -> Result<Benchmark> {
    let vocab = Vocabulary::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut split = |split: Split, n: usize, prefix: &str| {
        let docs: Vec<Document> = (0..n)
            .map(|i| {
                let (tokens, label) = vocab.document(split, &mut rng, config);
                Document::from_tokens(format!("{prefix}-{i:05}"), &tokens, Some(label))
            })
            .collect();
        build_corpus(docs)
    };
    let train = split(Split::Train, config.n_train, "train")?;
    let test = split(Split::Test, config.n_test, "test")?;

    let classes = ClassConfig::sentiment();
    let mut polarity = BTreeMap::new();
    let mut definitions = BTreeMap::new();
    for class in [NEGATIVE, NEUTRAL, POSITIVE] {
        for w in &vocab.indicators[class] {
            polarity.insert(w.clone(), class);
            definitions.insert(w.clone(), format!("a word expressing {} sentiment", classes.name(class)));
        }
        for w in &vocab.poison[class] {
            polarity.insert(w.clone(), class);
            definitions.insert(w.clone(), format!("a brand name that reviewers mention in {} terms", classes.name(class)));
        }
    }
    for w in &vocab.filler {
        polarity.insert(w.clone(), NEUTRAL);
        definitions.insert(w.clone(), "an everyday word with no sentiment".to_string());
    }
    let poison = vocab.poison.iter().flatten().cloned().collect();

    let gold_pool = vec![
        gold("delightful", "giving great pleasure", POSITIVE, Side::Agree, &classes),
        gold("horrible", "very unpleasant", NEGATIVE, Side::Agree, &classes),
        gold("wonderful", "extremely good", NEGATIVE, Side::Disagree, &classes),
        gold("dreadful", "causing great suffering", POSITIVE, Side::Disagree, &classes),
    ];
    Ok(Benchmark {
        classes,
        train,
        test,
        polarity,
        poison,
        definitions,
        gold_pool,
    })
}

fn gold(feature: &str, definition: &str, direction: usize, expected: Side, classes: &ClassConfig) -> GoldItem {
    GoldItem {
        feature: feature.into(),
        definition: definition.into(),
        direction: classes.name(direction).into(),
        expected,
    }
}

/// Judgments from `n_assessors` assessors who know every word's true polarity.
///
/// They strongly disagree exactly when the learned direction differs from the truth, and
/// answer every gold question correctly. Unknown words count as neutral.
pub fn perfect_judgments(tasks: &[AnnotationTask], polarity: &BTreeMap<String, usize>, n_assessors: usize) -> Vec<Judgment> {
    let mut out = Vec::new();
    for a in 0..n_assessors {
        let assessor = format!("assessor-{a}");
        for t in tasks {
            let side = match t.gold {
                Some(expected) => expected,
                None if polarity.get(&t.feature).copied().unwrap_or(NEUTRAL) == t.learned_direction => Side::Agree,
                None => Side::Disagree,
            };
            let likert = if side == Side::Agree { 1 } else { 5 };
            let mut j = Judgment::new(t.feature.clone(), assessor.clone(), likert);
            if let Some(expected) = t.gold {
                j = j.gold(expected);
            }
            out.push(j);
        }
    }
    out
}

/// Same judgments as `feature,learned_direction,likert,assessor_id` CSV.
pub fn write_judgments_csv<W: Write>(writer: W, judgments: &[Judgment], tasks: &[AnnotationTask], classes: &ClassConfig) -> Result<()> {
    let directions: HashMap<&str, usize> = tasks.iter().map(|t| (t.feature.as_str(), t.learned_direction)).collect();
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["feature", "learned_direction", "likert", "assessor_id"])?;
    for j in judgments {
        let direction = directions.get(j.feature.as_str()).map_or("", |&d| classes.name(d));
        out.write_record([j.feature.as_str(), direction, &j.likert.to_string(), j.assessor_id.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

impl Benchmark {
    /// Writes `train.jsonl`, `test.jsonl`, `definitions.tsv`, `gold_pool.jsonl` and
    /// `polarity.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_corpus(&dir.join("train.jsonl"), &self.train, &self.classes)?;
        save_corpus(&dir.join("test.jsonl"), &self.test, &self.classes)?;
        let mut defs = String::new();
        for (w, d) in &self.definitions {
            defs.push_str(&format!("{w}\t{d}\n"));
        }
        std::fs::write(dir.join("definitions.tsv"), defs)?;
        let mut gold = String::new();
        for g in &self.gold_pool {
            gold.push_str(&serde_json::to_string(g)?);
            gold.push('\n');
        }
        std::fs::write(dir.join("gold_pool.jsonl"), gold)?;
        let named: BTreeMap<&str, &str> = self
            .polarity
            .iter()
            .map(|(w, &c)| (w.as_str(), self.classes.name(c)))
            .collect();
        std::fs::write(dir.join("polarity.json"), serde_json::to_string_pretty(&named)? + "\n")?;
        Ok(())
    }
}

/// Reads a `polarity.json` written by [`Benchmark::save`].
pub fn load_polarity(path: &Path, classes: &ClassConfig) -> Result<BTreeMap<String, usize>> {
    let named: BTreeMap<String, String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    named
        .into_iter()
        .map(|(w, c)| Ok((w, classes.index_of(&c)?)))
        .collect()
}
