//! Composite n-gram models over surface words or POS categories.
//!
//! A model of order `n` keeps count tables for every context length
//! `0..n-1` and combines the per-order additive-smoothed estimates by
//! fixed-weight linear interpolation. Sentences are boundary-augmented with
//! `n-1` start markers (so every position has a full-length context) and one
//! end marker; boundary markers and the end marker only ever appear as
//! context, never as prediction targets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TaggedSentence, Vocabulary, SENT_END, SENT_START};
use crate::num::Real;
use crate::surprisal::surprisal;

pub const MAX_ORDER: usize = 5;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("order {0} outside supported range 1..={MAX_ORDER}")]
    BadOrder(usize),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("interpolation weights: {0}")]
    BadWeights(String),
    #[error("smoothing constant must be non-negative, got {0}")]
    BadAlpha(String),
    #[error("target {unit:?} not in the unit inventory and not UNK-mappable")]
    UnknownTarget { unit: String },
    #[error("context has {got} units but order {order} needs at least {need}")]
    ContextTooShort { got: usize, need: usize, order: usize },
    #[error("zero probability at position {position} (token {token:?}); use a positive smoothing constant")]
    ZeroProbability { position: usize, token: String },
    #[error("model file: {0}")]
    Serialization(String),
}

/// Whether the model predicts surface forms or POS tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NGramMode {
    Word,
    Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    targets: BTreeMap<String, u64>,
}

/// Optional training knobs; `Default` gives uniform interpolation weights
/// and additive smoothing of 0.1.
#[derive(Debug, Clone)]
pub struct NGramParams<R> {
    /// One weight per order `1..=n`, summing to 1. `None` means uniform.
    pub lambdas: Option<Vec<R>>,
    /// Additive smoothing constant. Zero gives plain maximum likelihood
    /// estimates (and can produce zero probabilities), which is the
    /// documented test configuration.
    pub alpha: R,
}

impl<R: Real> Default for NGramParams<R> {
    fn default() -> Self {
        NGramParams {
            lambdas: None,
            alpha: R::from_f64_lossy(0.1),
        }
    }
}

impl<R: Real> NGramParams<R> {
    /// All interpolation mass on the highest order.
    pub fn top_order_only(order: usize, alpha: R) -> Self {
        let mut lambdas = vec![R::zero(); order];
        lambdas[order - 1] = R::one();
        NGramParams {
            lambdas: Some(lambdas),
            alpha,
        }
    }

    /// Plain maximum-likelihood configuration: highest order only, no
    /// smoothing.
    pub fn pure_mle(order: usize) -> Self {
        Self::top_order_only(order, R::zero())
    }
}

/// A trained composite n-gram model. Immutable after training; safe to
/// share across threads for concurrent queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "R: Serialize", deserialize = "R: DeserializeOwned"))]
pub struct NGramModel<R> {
    version: u32,
    pub order: usize,
    pub mode: NGramMode,
    lambdas: Vec<R>,
    alpha: R,
    /// `tables[k]` maps a context of length `k` to its target counts.
    #[serde(with = "table_format")]
    tables: Vec<BTreeMap<Vec<String>, ContextCounts>>,
    /// Distinct predictable units (boundary markers excluded).
    inventory: BTreeSet<String>,
    /// Known-form set for UNK mapping in word mode.
    vocab: Option<Vocabulary>,
}

/// JSON needs string map keys, so contexts are space-joined on disk
/// (tokens never contain whitespace; the corpus readers enforce that).
mod table_format {
    use super::ContextCounts;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    type Tables = Vec<BTreeMap<Vec<String>, ContextCounts>>;

    pub fn serialize<S: Serializer>(tables: &Tables, s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<BTreeMap<String, &ContextCounts>> = tables
            .iter()
            .map(|t| t.iter().map(|(k, v)| (k.join(" "), v)).collect())
            .collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Tables, D::Error> {
        let flat: Vec<BTreeMap<String, ContextCounts>> = Vec::deserialize(d)?;
        Ok(flat
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|(k, v)| {
                        let ctx = if k.is_empty() {
                            Vec::new()
                        } else {
                            k.split(' ').map(str::to_string).collect()
                        };
                        (ctx, v)
                    })
                    .collect()
            })
            .collect())
    }
}

/// Train a composite n-gram model. In word mode, forms are UNK-mapped
/// through `vocab` first; in POS mode the tag sequence is used.
pub fn train_ngram<R: Real>(
    corpus: &[TaggedSentence],
    order: usize,
    mode: NGramMode,
    vocab: &Vocabulary,
    params: NGramParams<R>,
) -> Result<NGramModel<R>, NGramError> {
    if order == 0 || order > MAX_ORDER {
        return Err(NGramError::BadOrder(order));
    }
    if corpus.is_empty() {
        return Err(NGramError::EmptyCorpus);
    }
    let lambdas = match params.lambdas {
        Some(l) => {
            validate_lambdas(&l, order)?;
            l
        }
        None => {
            let w = R::one() / R::from_f64_lossy(order as f64);
            vec![w; order]
        }
    };
    if params.alpha < R::zero() {
        return Err(NGramError::BadAlpha(format!("{}", params.alpha)));
    }

    let mut tables: Vec<BTreeMap<Vec<String>, ContextCounts>> = vec![BTreeMap::new(); order];
    let mut inventory = BTreeSet::new();
    for sentence in corpus {
        let aug = sentence.augmented(order - 1);
        let units = unit_sequence(&aug, mode, Some(vocab));
        // Targets are the real tokens: everything after the start padding
        // and before the end marker.
        for i in (order - 1)..(units.len() - 1) {
            let target = &units[i];
            inventory.insert(target.clone());
            for k in 0..order {
                let ctx = units[i - k..i].to_vec();
                let entry = tables[k].entry(ctx).or_insert_with(|| ContextCounts {
                    total: 0,
                    targets: BTreeMap::new(),
                });
                entry.total += 1;
                *entry.targets.entry(target.clone()).or_insert(0) += 1;
            }
        }
    }

    Ok(NGramModel {
        version: 1,
        order,
        mode,
        lambdas,
        alpha: params.alpha,
        tables,
        inventory,
        vocab: match mode {
            NGramMode::Word => Some(vocab.clone()),
            NGramMode::Pos => None,
        },
    })
}

fn validate_lambdas<R: Real>(lambdas: &[R], order: usize) -> Result<(), NGramError> {
    if lambdas.len() != order {
        return Err(NGramError::BadWeights(format!(
            "expected {order} weights, got {}",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|w| *w < R::zero()) {
        return Err(NGramError::BadWeights("negative weight".into()));
    }
    let sum: R = lambdas.iter().copied().sum();
    if (sum - R::one()).abs() > R::from_f64_lossy(1e-12) {
        return Err(NGramError::BadWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

fn unit_sequence(sentence: &TaggedSentence, mode: NGramMode, vocab: Option<&Vocabulary>) -> Vec<String> {
    sentence
        .tokens
        .iter()
        .map(|tok| {
            if tok.form == SENT_START || tok.form == SENT_END {
                tok.form.clone()
            } else {
                match mode {
                    NGramMode::Word => match vocab {
                        Some(v) => v.map_form(&tok.form).to_string(),
                        None => tok.form.clone(),
                    },
                    NGramMode::Pos => tok.tag.clone(),
                }
            }
        })
        .collect()
}

impl<R: Real> NGramModel<R> {
    pub fn lambdas(&self) -> &[R] {
        &self.lambdas
    }

    pub fn alpha(&self) -> R {
        self.alpha
    }

    /// Number of distinct predictable units.
    pub fn vocab_size(&self) -> usize {
        self.inventory.len()
    }

    pub fn inventory(&self) -> impl Iterator<Item = &str> {
        self.inventory.iter().map(|s| s.as_str())
    }

    fn map_unit(&self, unit: &str) -> String {
        if unit == SENT_START || unit == SENT_END {
            return unit.to_string();
        }
        match (self.mode, &self.vocab) {
            (NGramMode::Word, Some(v)) => v.map_form(unit).to_string(),
            _ => unit.to_string(),
        }
    }

    /// Interpolated probability of `target` after `context`. The context
    /// must hold at least `order - 1` units; longer contexts are truncated
    /// to the most recent `order - 1`.
    pub fn prob(&self, context: &[&str], target: &str) -> Result<R, NGramError> {
        if context.len() + 1 < self.order {
            return Err(NGramError::ContextTooShort {
                got: context.len(),
                need: self.order - 1,
                order: self.order,
            });
        }
        let target = self.map_unit(target);
        if !self.inventory.contains(&target) {
            return Err(NGramError::UnknownTarget { unit: target });
        }
        let ctx: Vec<String> = context[context.len() - (self.order - 1)..]
            .iter()
            .map(|u| self.map_unit(u))
            .collect();

        let v = R::from_f64_lossy(self.inventory.len() as f64);
        let mut p = R::zero();
        for k in 0..self.order {
            if self.lambdas[k] == R::zero() {
                continue;
            }
            let sub = &ctx[ctx.len() - k..];
            let (count, total) = match self.tables[k].get(sub) {
                Some(cc) => (
                    cc.targets.get(&target).copied().unwrap_or(0),
                    cc.total,
                ),
                None => (0, 0),
            };
            let c = R::from_f64_lossy(count as f64);
            let t = R::from_f64_lossy(total as f64);
            let est = if self.alpha == R::zero() {
                if total == 0 {
                    R::zero()
                } else {
                    c / t
                }
            } else {
                (c + self.alpha) / (t + self.alpha * v)
            };
            p = p + self.lambdas[k] * est;
        }
        Ok(p)
    }

    /// Per-token surprisal in log base `base`, one value per real token.
    /// The sentence is boundary-augmented internally.
    pub fn sentence_surprisal(
        &self,
        sentence: &TaggedSentence,
        base: R,
    ) -> Result<Vec<R>, NGramError> {
        let aug = sentence.augmented(self.order - 1);
        let units = unit_sequence(&aug, self.mode, self.vocab.as_ref());
        let refs: Vec<&str> = units.iter().map(|s| s.as_str()).collect();
        let mut out = Vec::with_capacity(sentence.len());
        for i in (self.order - 1)..(units.len() - 1) {
            let p = self.prob(&refs[..i], &refs[i])?;
            if p <= R::zero() {
                return Err(NGramError::ZeroProbability {
                    position: i - (self.order - 1),
                    token: units[i].clone(),
                });
            }
            out.push(surprisal(p, base));
        }
        Ok(out)
    }

    /// Raw count of `target` after `context` at exactly that context length.
    /// Mostly useful for tests and diagnostics.
    pub fn count(&self, context: &[&str], target: &str) -> u64 {
        let k = context.len();
        if k >= self.order {
            return 0;
        }
        let ctx: Vec<String> = context.iter().map(|u| self.map_unit(u)).collect();
        self.tables[k]
            .get(&ctx)
            .and_then(|cc| cc.targets.get(&self.map_unit(target)))
            .copied()
            .unwrap_or(0)
    }

    /// Total observations for `context` at exactly that context length.
    pub fn context_total(&self, context: &[&str]) -> u64 {
        let k = context.len();
        if k >= self.order {
            return 0;
        }
        let ctx: Vec<String> = context.iter().map(|u| self.map_unit(u)).collect();
        self.tables[k].get(&ctx).map(|cc| cc.total).unwrap_or(0)
    }

    /// Versioned JSON dump. Round-trips exactly: counts are integers and
    /// floats are printed in shortest round-trip form.
    pub fn to_json(&self) -> String
    where
        R: Serialize,
    {
        serde_json::to_string_pretty(self).expect("n-gram model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NGramError>
    where
        R: DeserializeOwned,
    {
        let model: NGramModel<R> =
            serde_json::from_str(text).map_err(|e| NGramError::Serialization(e.to_string()))?;
        if model.version != 1 {
            return Err(NGramError::Serialization(format!(
                "unsupported model version {}",
                model.version
            )));
        }
        Ok(model)
    }
}
