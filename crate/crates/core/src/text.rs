//! Documents, unigram tokenization, corpora and class configuration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered class names plus the index of the class treated as "neutral".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassConfig {
    classes: Vec<String>,
    neutral_class: usize,
}

impl ClassConfig {
    pub fn new(classes: Vec<String>, neutral_class: usize) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidClassConfig(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        if neutral_class >= classes.len() {
            return Err(Error::InvalidClassConfig(format!(
                "neutral class index {neutral_class} out of range for {} classes",
                classes.len()
            )));
        }
        let unique: BTreeSet<&String> = classes.iter().collect();
        if unique.len() != classes.len() {
            return Err(Error::InvalidClassConfig("class names must be unique".into()));
        }
        Ok(ClassConfig {
            classes,
            neutral_class,
        })
    }

    /// `negative`, `neutral`, `positive` with `neutral` as the neutral class.
    pub fn sentiment() -> Self {
        ClassConfig {
            classes: vec!["negative".into(), "neutral".into(), "positive".into()],
            neutral_class: 1,
        }
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn neutral_class(&self) -> usize {
        self.neutral_class
    }

    pub fn name(&self, class: usize) -> &str {
        &self.classes[class]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// Re-checks invariants, for configs that arrived through deserialization.
    pub fn validated(self) -> Result<Self> {
        ClassConfig::new(self.classes, self.neutral_class)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

/// Splits on whitespace, lowercases and trims non-alphanumeric characters from
/// both ends of every token. Internal apostrophes and hyphens survive.
pub fn tokenize(raw_text: &str, config: &TokenizerConfig) -> Vec<String> {
    raw_text
        .split_whitespace()
        .filter_map(|piece| {
            let piece = if config.strip_punctuation {
                piece.trim_matches(|c: char| !c.is_alphanumeric())
            } else {
                piece
            };
            if piece.is_empty() {
                return None;
            }
            Some(if config.lowercase {
                piece.to_lowercase()
            } else {
                piece.to_string()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub gold_label: Option<usize>,
}

impl Document {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, gold_label: Option<usize>) -> Self {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text, &TokenizerConfig::default());
        Document {
            id: id.into(),
            raw_text,
            tokens,
            gold_label,
        }
    }

    /// Builds a document directly from tokens; the raw text is the tokens joined by spaces.
    pub fn from_tokens<S: AsRef<str>>(id: impl Into<String>, tokens: &[S], gold_label: Option<usize>) -> Self {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        Document {
            id: id.into(),
            raw_text: tokens.join(" "),
            tokens,
            gold_label,
        }
    }

    /// Distinct unigrams in first-occurrence order.
    pub fn unique_tokens(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.tokens
            .iter()
            .filter(|t| seen.insert(t.as_str()))
            .cloned()
            .collect()
    }

    pub fn contains(&self, feature: &str) -> bool {
        self.tokens.iter().any(|t| t == feature)
    }
}

/// An immutable collection of documents with an inverted unigram index.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    positions: HashMap<String, usize>,
    feature_index: BTreeMap<String, Vec<String>>,
}

pub fn build_corpus(documents: Vec<Document>) -> Result<Corpus> {
    let mut positions = HashMap::with_capacity(documents.len());
    for (i, doc) in documents.iter().enumerate() {
        if positions.insert(doc.id.clone(), i).is_some() {
            return Err(Error::DuplicateId(doc.id.clone()));
        }
    }
    let mut feature_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for doc in &documents {
        for token in doc.unique_tokens() {
            feature_index.entry(token).or_default().push(doc.id.clone());
        }
    }
    for ids in feature_index.values_mut() {
        ids.sort();
    }
    Ok(Corpus {
        documents,
        positions,
        feature_index,
    })
}

impl Corpus {
    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.positions.get(id).map(|&i| &self.documents[i])
    }

    pub fn feature_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.feature_index
    }

    /// Ids of the documents containing `feature`, sorted.
    pub fn documents_with(&self, feature: &str) -> Option<&[String]> {
        self.feature_index.get(feature).map(Vec::as_slice)
    }

    /// Number of documents containing `feature` (0 if unseen).
    pub fn support(&self, feature: &str) -> usize {
        self.feature_index.get(feature).map_or(0, Vec::len)
    }

    pub fn features(&self) -> impl Iterator<Item = &str> {
        self.feature_index.keys().map(String::as_str)
    }

    /// Documents sorted by id.
    pub fn sorted_documents(&self) -> Vec<&Document> {
        let mut docs: Vec<&Document> = self.documents.iter().collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        docs
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Reads line-delimited JSON records (`id`, `text`, `label`). Missing ids become `doc-<line>`.
pub fn read_corpus<R: BufRead>(reader: R, classes: &ClassConfig, tokenizer: &TokenizerConfig) -> Result<Corpus> {
    let mut documents = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(format!("corpus line {}", i + 1), e))?;
        let gold_label = record.label.as_deref().map(|l| classes.index_of(l)).transpose()?;
        let tokens = tokenize(&record.text, tokenizer);
        documents.push(Document {
            id: record.id.unwrap_or_else(|| format!("doc-{}", i + 1)),
            raw_text: record.text,
            tokens,
            gold_label,
        });
    }
    build_corpus(documents)
}

pub fn load_corpus(path: &Path, classes: &ClassConfig) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file), classes, &TokenizerConfig::default())
}

pub fn write_corpus<W: Write>(mut writer: W, corpus: &Corpus, classes: &ClassConfig) -> Result<()> {
    for doc in corpus.documents() {
        let record = CorpusRecord {
            id: Some(doc.id.clone()),
            text: doc.raw_text.clone(),
            label: doc.gold_label.map(|l| classes.name(l).to_string()),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: &Path, corpus: &Corpus, classes: &ClassConfig) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    write_corpus(&mut writer, corpus, classes)?;
    writer.flush()?;
    Ok(())
}
