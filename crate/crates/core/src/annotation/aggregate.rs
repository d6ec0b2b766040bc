use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{assessor_records, effective, likert_side, Judgment, TrustPolicy};
use super::Side;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationPolicy {
    /// Likert values up to this count as "agree".
    pub agree_max: u8,
    /// Likert values from this up count as "disagree".
    pub disagree_min: u8,
    /// Same-side trusted votes needed for a decision.
    pub min_votes: usize,
    pub trust: TrustPolicy,
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        AggregationPolicy {
            agree_max: 2,
            disagree_min: 4,
            min_votes: 3,
            trust: TrustPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Agree,
    Disagree,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDecision {
    pub learned_direction: usize,
    pub agree: usize,
    pub disagree: usize,
    /// Trusted votes of 3 (no side).
    pub neutral: usize,
    /// Votes dropped because their assessor is untrusted.
    pub untrusted: usize,
    pub decision: Decision,
}

/// Aggregated verdicts; `erroneous` lists exactly the features decided "disagree".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErroneousFeatureSet {
    pub erroneous: BTreeSet<String>,
    pub decisions: BTreeMap<String, FeatureDecision>,
}

impl ErroneousFeatureSet {
    pub fn empty() -> Self {
        ErroneousFeatureSet {
            erroneous: BTreeSet::new(),
            decisions: BTreeMap::new(),
        }
    }

    /// Marks `features` erroneous directly, without vote tallies.
    pub fn from_features<I, S>(features: I) -> Self
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut set = ErroneousFeatureSet::empty();
        for (feature, direction) in features {
            let feature = feature.into();
            set.erroneous.insert(feature.clone());
            set.decisions.insert(
                feature,
                FeatureDecision {
                    learned_direction: direction,
                    agree: 0,
                    disagree: 0,
                    neutral: 0,
                    untrusted: 0,
                    decision: Decision::Disagree,
                },
            );
        }
        set
    }

    pub fn contains(&self, feature: &str) -> bool {
        self.erroneous.contains(feature)
    }

    pub fn len(&self) -> usize {
        self.erroneous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.erroneous.is_empty()
    }

    pub fn learned_direction(&self, feature: &str) -> Option<usize> {
        self.decisions.get(feature).map(|d| d.learned_direction)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Majority verdict per task feature from trusted, non-gold votes.
///
/// Only the latest vote per (assessor, feature) counts, and an assessor's trust is judged on
/// all of their gold answers in `judgments`. A side wins when it reaches `min_votes` and
/// outnumbers the other side; anything else is undecided. Judgments on features outside
/// `directions` are ignored.
pub fn aggregate_judgments(
    judgments: &[Judgment],
    directions: &BTreeMap<String, usize>,
    policy: &AggregationPolicy,
) -> ErroneousFeatureSet {
    let latest = effective(judgments);
    let records = assessor_records(&latest, &policy.trust);

    let mut decisions: BTreeMap<String, FeatureDecision> = directions
        .iter()
        .map(|(f, &d)| {
            (
                f.clone(),
                FeatureDecision {
                    learned_direction: d,
                    agree: 0,
                    disagree: 0,
                    neutral: 0,
                    untrusted: 0,
                    decision: Decision::Undecided,
                },
            )
        })
        .collect();

    for j in latest.iter().filter(|j| !j.is_gold) {
        let Some(tally) = decisions.get_mut(&j.feature) else {
            continue;
        };
        if !records[&j.assessor_id].trusted {
            tally.untrusted += 1;
            continue;
        }
        match likert_side(j.likert, policy.agree_max, policy.disagree_min) {
            Some(Side::Agree) => tally.agree += 1,
            Some(Side::Disagree) => tally.disagree += 1,
            None => tally.neutral += 1,
        }
    }

    let mut erroneous = BTreeSet::new();
    for (feature, tally) in &mut decisions {
        tally.decision = if tally.disagree >= policy.min_votes && tally.disagree > tally.agree {
            Decision::Disagree
        } else if tally.agree >= policy.min_votes && tally.agree > tally.disagree {
            Decision::Agree
        } else {
            Decision::Undecided
        };
        if tally.decision == Decision::Disagree {
            erroneous.insert(feature.clone());
        }
    }
    ErroneousFeatureSet { erroneous, decisions }
}
