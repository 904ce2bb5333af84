//! Homograph-phrase stimulus trials: loading, toy generation, and scoring
//! into the per-trial surprisal feature table.
//!
//! A trial is a sentence containing a two-word homograph phrase (HP): a
//! function word readable as determiner or object clitic, followed by a
//! content word readable as noun or verb. Three conditions modulate how
//! predictable the HP's phrase type is from its left context:
//!
//! - `UNPRED`: the HP follows an ambiguity-preserving adverb, so both
//!   readings stay open through the HP; NP/VP members of a pair share all
//!   tokens up to and including the HP.
//! - `Strong_PRED`: the context (a preceding verb, or a completed subject)
//!   forces the reading at the HP's first word.
//! - `Weak_PRED`: a past-requiring adverb leaves the first word ambiguous
//!   but rules out the verb reading at the second word. Only NP trials
//!   exist in this condition.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TaggedSentence, TaggedToken};
use crate::grammar::{LexicalizedPcfg, Pcfg};
use crate::ngram::NGramModel;
use crate::num::Real;
use crate::parser::{parse_tag_sequences, sentence_parses, PrefixParser};

#[derive(Debug, Error)]
pub enum StimulusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("line {line}: Weak_PRED trials cannot be VP (no such stimulus class exists)")]
    ImpossibleClass { line: usize },
    #[error("line {line}: homograph-phrase window out of range (hp_start {hp_start}, {len} tokens)")]
    HpOutOfRange {
        line: usize,
        hp_start: usize,
        len: usize,
    },
    #[error("design grammar is missing the {0} homograph class: {1}")]
    MissingHomographs(&'static str, String),
    #[error("could not assemble {needed} distinct trials for class {class} after {attempts} samples")]
    GenerationExhausted {
        class: String,
        needed: usize,
        attempts: usize,
    },
    #[error("trial {trial}: {msg}")]
    Scoring { trial: String, msg: String },
    #[error("grammar error: {0}")]
    Grammar(#[from] crate::grammar::GrammarError),
    #[error("parser error: {0}")]
    Parser(#[from] crate::parser::ParserError),
}

/// Predictability of the homograph phrase's type from its left context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Unpred,
    StrongPred,
    WeakPred,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Unpred => "UNPRED",
            Condition::StrongPred => "Strong_PRED",
            Condition::WeakPred => "Weak_PRED",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "UNPRED" => Some(Condition::Unpred),
            "Strong_PRED" => Some(Condition::StrongPred),
            "Weak_PRED" => Some(Condition::WeakPred),
            _ => None,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reading of the homograph phrase in the full sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhraseType {
    Np,
    Vp,
}

impl PhraseType {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhraseType::Np => "NP",
            PhraseType::Vp => "VP",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "NP" => Some(PhraseType::Np),
            "VP" => Some(PhraseType::Vp),
            _ => None,
        }
    }
}

impl fmt::Display for PhraseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One stimulus sentence. `hp_start` is the 0-based index of the HP's
/// first word; the second HP word is at `hp_start + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusTrial {
    pub id: String,
    pub condition: Condition,
    pub phrase_type: PhraseType,
    pub tokens: Vec<String>,
    pub hp_start: usize,
}

/// Per-class trial counts, for the loader's report.
pub fn class_counts(trials: &[StimulusTrial]) -> BTreeMap<(Condition, PhraseType), usize> {
    let mut counts = BTreeMap::new();
    for t in trials {
        *counts.entry((t.condition, t.phrase_type)).or_insert(0) += 1;
    }
    counts
}

/// Load a stimulus CSV: header `id,condition,phrase_type,tokens,hp_start`,
/// tokens space-separated.
pub fn load_stimuli(path: impl AsRef<Path>) -> Result<Vec<StimulusTrial>, StimulusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| StimulusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_stimuli_csv(&text)
}

pub fn parse_stimuli_csv(text: &str) -> Result<Vec<StimulusTrial>, StimulusError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "id,condition,phrase_type,tokens,hp_start" => {}
        _ => {
            return Err(StimulusError::Format {
                line: 1,
                msg: "expected header `id,condition,phrase_type,tokens,hp_start`".into(),
            })
        }
    }
    let mut trials = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(StimulusError::Format {
                line: lineno,
                msg: format!("expected 5 comma-separated fields, got {}", fields.len()),
            });
        }
        let condition = Condition::parse(fields[1]).ok_or_else(|| StimulusError::Format {
            line: lineno,
            msg: format!("unknown condition {:?}", fields[1]),
        })?;
        let phrase_type = PhraseType::parse(fields[2]).ok_or_else(|| StimulusError::Format {
            line: lineno,
            msg: format!("unknown phrase type {:?}", fields[2]),
        })?;
        if condition == Condition::WeakPred && phrase_type == PhraseType::Vp {
            return Err(StimulusError::ImpossibleClass { line: lineno });
        }
        let tokens: Vec<String> = fields[3].split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(StimulusError::Format {
                line: lineno,
                msg: "empty token sequence".into(),
            });
        }
        let hp_start: usize = fields[4].trim().parse().map_err(|_| StimulusError::Format {
            line: lineno,
            msg: format!("hp_start is not a number: {:?}", fields[4]),
        })?;
        if hp_start + 1 >= tokens.len() {
            return Err(StimulusError::HpOutOfRange {
                line: lineno,
                hp_start,
                len: tokens.len(),
            });
        }
        trials.push(StimulusTrial {
            id: fields[0].to_string(),
            condition,
            phrase_type,
            tokens,
            hp_start,
        });
    }
    Ok(trials)
}

pub fn stimuli_to_csv(trials: &[StimulusTrial]) -> String {
    let mut out = String::from("id,condition,phrase_type,tokens,hp_start\n");
    for t in trials {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.id,
            t.condition,
            t.phrase_type,
            t.tokens.join(" "),
            t.hp_start
        ));
    }
    out
}

// Tag-name conventions the toy generator expects of a design grammar.
const TAG_DET: &str = "DET";
const TAG_CL: &str = "CL";
const TAG_N: &str = "N";
const TAG_VT: &str = "VT";
const TAG_PN: &str = "PN";
const TAG_ADV_UNPRED: &str = "ADVU";
const TAG_ADV_PAST: &str = "ADVP";

/// Generate the five-class toy design from a design grammar following the
/// tag conventions above (see the module docs). Rejection-samples
/// derivations and keeps the ones matching the per-class homograph-phrase
/// templates; every trial is validated to have a unique parse, and each
/// UNPRED-NP trial gets a VP twin sharing all tokens through the HP.
/// Deterministic under `seed`.
pub fn generate_toy_stimuli<R: Real>(
    design: &Pcfg<R>,
    per_class: usize,
    seed: u64,
) -> Result<Vec<StimulusTrial>, StimulusError> {
    let projections = tag_projections(design);
    let function_homographs: Vec<&str> = projections
        .iter()
        .filter(|(_, tags)| tags.contains(TAG_DET) && tags.contains(TAG_CL))
        .map(|(t, _)| t.as_str())
        .collect();
    if function_homographs.is_empty() {
        return Err(StimulusError::MissingHomographs(
            "article/clitic",
            format!("no terminal is emitted under both {TAG_DET} and {TAG_CL}"),
        ));
    }
    let content_homographs: Vec<&str> = projections
        .iter()
        .filter(|(_, tags)| tags.contains(TAG_N) && tags.contains(TAG_VT))
        .map(|(t, _)| t.as_str())
        .collect();
    if content_homographs.is_empty() {
        return Err(StimulusError::MissingHomographs(
            "noun/verb",
            format!("no terminal is emitted under both {TAG_N} and {TAG_VT}"),
        ));
    }
    let is_fn_homograph = |tok: &str| function_homographs.contains(&tok);
    let is_content_homograph = |tok: &str| content_homographs.contains(&tok);

    // tail adverb terminals, for constructing UNPRED VP twins
    let tail_adverbs: Vec<String> = projections
        .iter()
        .filter(|(_, tags)| tags.len() == 1 && tags.contains("ADVT"))
        .map(|(t, _)| t.clone())
        .collect();

    let lex = design.lexical_only_categories();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut strong_np: Vec<StimulusTrial> = Vec::new();
    let mut strong_vp: Vec<StimulusTrial> = Vec::new();
    let mut weak_np: Vec<StimulusTrial> = Vec::new();
    let mut unpred_np: Vec<StimulusTrial> = Vec::new();
    let mut unpred_vp: Vec<StimulusTrial> = Vec::new();

    let mut attempts = 0usize;
    let max_attempts = 400_000usize;
    while (strong_np.len() < per_class
        || strong_vp.len() < per_class
        || weak_np.len() < per_class
        || unpred_np.len() < per_class)
        && attempts < max_attempts
    {
        attempts += 1;
        let tree = match design.sample(&mut rng, 24) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let tokens: Vec<String> = tree.yield_forms().iter().map(|s| s.to_string()).collect();
        let tags = tree.pos_tags(&lex);
        debug_assert_eq!(tokens.len(), tags.len());

        // locate a homograph-phrase window
        for j in 0..tokens.len().saturating_sub(1) {
            if !is_fn_homograph(&tokens[j]) {
                continue;
            }
            let (condition, phrase_type) = match (tags[j].as_str(), tags[j + 1].as_str()) {
                (TAG_DET, TAG_N) if is_content_homograph(&tokens[j + 1]) => {
                    if j >= 1 && tags[j - 1] == TAG_VT {
                        (Condition::StrongPred, PhraseType::Np)
                    } else if j == 1 && tags[0] == TAG_ADV_UNPRED {
                        (Condition::Unpred, PhraseType::Np)
                    } else if j == 1 && tags[0] == TAG_ADV_PAST {
                        (Condition::WeakPred, PhraseType::Np)
                    } else {
                        continue;
                    }
                }
                (TAG_CL, TAG_VT) if is_content_homograph(&tokens[j + 1]) => {
                    if j >= 1 && (tags[j - 1] == TAG_N || tags[j - 1] == TAG_PN) {
                        (Condition::StrongPred, PhraseType::Vp)
                    } else {
                        continue;
                    }
                }
                _ => continue,
            };

            let bucket = match (condition, phrase_type) {
                (Condition::StrongPred, PhraseType::Np) => &mut strong_np,
                (Condition::StrongPred, PhraseType::Vp) => &mut strong_vp,
                (Condition::WeakPred, PhraseType::Np) => &mut weak_np,
                (Condition::Unpred, PhraseType::Np) => &mut unpred_np,
                _ => unreachable!(),
            };
            if bucket.len() >= per_class {
                continue;
            }
            if bucket.iter().any(|t| t.tokens == tokens) {
                continue;
            }
            if !has_unique_parse(design, &tokens) {
                continue;
            }

            // UNPRED trials come in prefix-sharing pairs: build the VP twin
            // before committing the NP member
            if condition == Condition::Unpred {
                let mut twin = None;
                for adv in &tail_adverbs {
                    let mut twin_tokens: Vec<String> = tokens[..=j + 1].to_vec();
                    twin_tokens.push(adv.clone());
                    if unpred_vp.iter().any(|t| t.tokens == twin_tokens) {
                        continue;
                    }
                    if !has_unique_parse(design, &twin_tokens) {
                        continue;
                    }
                    let twin_tags = parse_tag_sequences(design, &as_refs(&twin_tokens))
                        .ok()
                        .and_then(|mut t| t.pop());
                    match twin_tags {
                        Some(tags)
                            if tags.get(j).map(String::as_str) == Some(TAG_CL)
                                && tags.get(j + 1).map(String::as_str) == Some(TAG_VT) =>
                        {
                            twin = Some(twin_tokens);
                            break;
                        }
                        _ => continue,
                    }
                }
                let Some(twin_tokens) = twin else { continue };
                let k = unpred_np.len();
                unpred_np.push(StimulusTrial {
                    id: format!("unpred_np_{k:03}"),
                    condition: Condition::Unpred,
                    phrase_type: PhraseType::Np,
                    tokens: tokens.clone(),
                    hp_start: j,
                });
                unpred_vp.push(StimulusTrial {
                    id: format!("unpred_vp_{k:03}"),
                    condition: Condition::Unpred,
                    phrase_type: PhraseType::Vp,
                    tokens: twin_tokens,
                    hp_start: j,
                });
            } else {
                let k = bucket.len();
                let id = format!(
                    "{}_{}_{k:03}",
                    match condition {
                        Condition::StrongPred => "strong",
                        Condition::WeakPred => "weak",
                        Condition::Unpred => unreachable!(),
                    },
                    phrase_type.as_str().to_lowercase()
                );
                bucket.push(StimulusTrial {
                    id,
                    condition,
                    phrase_type,
                    tokens: tokens.clone(),
                    hp_start: j,
                });
            }
            break; // one trial per sampled sentence
        }
    }

    for (name, bucket) in [
        ("Strong_PRED-NP", &strong_np),
        ("Strong_PRED-VP", &strong_vp),
        ("Weak_PRED-NP", &weak_np),
        ("UNPRED-NP", &unpred_np),
        ("UNPRED-VP", &unpred_vp),
    ] {
        if bucket.len() < per_class {
            return Err(StimulusError::GenerationExhausted {
                class: name.to_string(),
                needed: per_class,
                attempts,
            });
        }
    }

    let mut trials = Vec::with_capacity(per_class * 5);
    trials.extend(strong_np);
    trials.extend(strong_vp);
    trials.extend(weak_np);
    trials.extend(unpred_np);
    trials.extend(unpred_vp);
    Ok(trials)
}

fn as_refs(tokens: &[String]) -> Vec<&str> {
    tokens.iter().map(String::as_str).collect()
}

fn has_unique_parse<R: Real>(grammar: &Pcfg<R>, tokens: &[String]) -> bool {
    matches!(sentence_parses(grammar, &as_refs(tokens)), Ok(p) if p.len() == 1)
}

/// POS tags each terminal can project to, over all ways the grammar can
/// emit it (unit chains of one-word lexeme classes climb to the categorial
/// level, mirroring [`crate::corpus::Tree::pos_tags`]).
pub fn tag_projections<R: Real>(pcfg: &Pcfg<R>) -> BTreeMap<String, std::collections::BTreeSet<String>> {
    use std::collections::BTreeSet;
    let lex = pcfg.lexical_only_categories();
    // unit parents within the lexeme-class layer: child -> parents in lex
    let mut tops_memo: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for rule in pcfg.rules() {
        if rule.rhs.len() == 1 && pcfg.is_terminal(rule.rhs[0]) {
            let terminal = pcfg.name(rule.rhs[0]).to_string();
            let pre = pcfg.name(rule.lhs).to_string();
            let tops = chain_tops(pcfg, &pre, &lex, &mut tops_memo);
            out.entry(terminal).or_default().extend(tops);
        }
    }
    out
}

/// Possible POS projections of a preterminal: itself when it can occur
/// under a non-chaining parent, plus every lexical-only unit parent's
/// projections.
fn chain_tops<R: Real>(
    pcfg: &Pcfg<R>,
    category: &str,
    lex: &std::collections::HashSet<String>,
    memo: &mut BTreeMap<String, std::collections::BTreeSet<String>>,
) -> std::collections::BTreeSet<String> {
    use std::collections::BTreeSet;
    if let Some(hit) = memo.get(category) {
        return hit.clone();
    }
    // mark in progress to cut unit cycles
    memo.insert(category.to_string(), BTreeSet::new());

    let sym = pcfg.symbol(category).expect("category exists");
    let mut chaining_parents = Vec::new();
    let mut non_chaining_occurrence = false;
    for rule in pcfg.rules() {
        if !rule.rhs.contains(&sym) {
            continue;
        }
        let parent = pcfg.name(rule.lhs);
        if rule.rhs.len() == 1 && lex.contains(parent) {
            chaining_parents.push(parent.to_string());
        } else {
            non_chaining_occurrence = true;
        }
    }
    let mut tops = BTreeSet::new();
    if non_chaining_occurrence || chaining_parents.is_empty() {
        tops.insert(category.to_string());
    }
    for parent in chaining_parents {
        tops.extend(chain_tops(pcfg, &parent, lex, memo));
    }
    memo.insert(category.to_string(), tops.clone());
    tops
}

/// The grammar used for lexical and syntactic surprisal.
pub enum SyntaxModel<'a, R> {
    Plain(&'a Pcfg<R>),
    Lexicalized(&'a LexicalizedPcfg<R>),
}

impl<'a, R: Real> SyntaxModel<'a, R> {
    fn scoring_grammar(&self) -> &'a Pcfg<R> {
        match self {
            SyntaxModel::Plain(g) => g,
            SyntaxModel::Lexicalized(l) => l.as_pcfg(),
        }
    }

    /// Grammar used to recover the trial's POS tags (the lexicalized
    /// grammar tags with plain categories via its delexicalized form).
    fn tagging_grammar(&self) -> std::borrow::Cow<'a, Pcfg<R>>
    where
        Pcfg<R>: Clone,
    {
        match self {
            SyntaxModel::Plain(g) => std::borrow::Cow::Borrowed(*g),
            SyntaxModel::Lexicalized(l) => std::borrow::Cow::Owned(l.delexicalize()),
        }
    }
}

/// The three trained models a scoring pass needs.
pub struct ScoringModels<'a, R> {
    pub word_ngram: &'a NGramModel<R>,
    pub pos_ngram: &'a NGramModel<R>,
    pub syntax: SyntaxModel<'a, R>,
}

/// One row of the feature table: the four surprisal notions at the two
/// homograph-phrase positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialScores<R> {
    pub trial_id: String,
    pub condition: Condition,
    pub phrase_type: PhraseType,
    pub ngram: [R; 2],
    pub lexical: [R; 2],
    pub pos: [R; 2],
    pub syntactic: [R; 2],
}

/// The per-trial feature matrix: 8 surprisal features per trial plus the
/// class labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurprisalTable<R> {
    pub rows: Vec<TrialScores<R>>,
}

pub const TABLE_HEADER: &str =
    "trial_id,condition,phrase_type,ngram_w1,ngram_w2,lex_w1,lex_w2,pos_w1,pos_w2,syn_w1,syn_w2";

impl<R: Real> SurprisalTable<R> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                row.trial_id,
                row.condition,
                row.phrase_type,
                row.ngram[0],
                row.ngram[1],
                row.lexical[0],
                row.lexical[1],
                row.pos[0],
                row.pos[1],
                row.syntactic[0],
                row.syntactic[1],
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, StimulusError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == TABLE_HEADER => {}
            _ => {
                return Err(StimulusError::Format {
                    line: 1,
                    msg: format!("expected header `{TABLE_HEADER}`"),
                })
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 11 {
                return Err(StimulusError::Format {
                    line: lineno,
                    msg: format!("expected 11 fields, got {}", fields.len()),
                });
            }
            let condition = Condition::parse(fields[1]).ok_or_else(|| StimulusError::Format {
                line: lineno,
                msg: format!("unknown condition {:?}", fields[1]),
            })?;
            let phrase_type =
                PhraseType::parse(fields[2]).ok_or_else(|| StimulusError::Format {
                    line: lineno,
                    msg: format!("unknown phrase type {:?}", fields[2]),
                })?;
            let mut vals = [0f64; 8];
            for (k, slot) in vals.iter_mut().enumerate() {
                *slot = fields[3 + k].parse().map_err(|_| StimulusError::Format {
                    line: lineno,
                    msg: format!("bad number {:?}", fields[3 + k]),
                })?;
            }
            rows.push(TrialScores {
                trial_id: fields[0].to_string(),
                condition,
                phrase_type,
                ngram: [R::from_f64_lossy(vals[0]), R::from_f64_lossy(vals[1])],
                lexical: [R::from_f64_lossy(vals[2]), R::from_f64_lossy(vals[3])],
                pos: [R::from_f64_lossy(vals[4]), R::from_f64_lossy(vals[5])],
                syntactic: [R::from_f64_lossy(vals[6]), R::from_f64_lossy(vals[7])],
            });
        }
        Ok(SurprisalTable { rows })
    }

    /// Long-format CSV for plotting: one value per row.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("trial_id,condition,phrase_type,notion,position,value\n");
        for row in &self.rows {
            for (notion, vals) in [
                ("ngram", &row.ngram),
                ("lex", &row.lexical),
                ("pos", &row.pos),
                ("syn", &row.syntactic),
            ] {
                for (pos_idx, v) in vals.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{},w{},{}\n",
                        row.trial_id,
                        row.condition,
                        row.phrase_type,
                        notion,
                        pos_idx + 1,
                        v
                    ));
                }
            }
        }
        out
    }
}

/// Score every trial with all four surprisal notions at the two HP
/// positions. POS tags come from the trial's unique parse under the
/// syntax grammar. Trials are scored in parallel; models are shared
/// read-only.
pub fn score_stimuli<R: Real>(
    trials: &[StimulusTrial],
    models: &ScoringModels<'_, R>,
    base: R,
) -> Result<SurprisalTable<R>, StimulusError> {
    let scoring_grammar = models.syntax.scoring_grammar();
    let parser = PrefixParser::new(scoring_grammar)?;
    let tagging = models.syntax.tagging_grammar();
    let tagging_ref: &Pcfg<R> = &tagging;

    let rows: Result<Vec<TrialScores<R>>, StimulusError> = trials
        .par_iter()
        .map(|trial| score_one(trial, models, &parser, tagging_ref, base))
        .collect();
    Ok(SurprisalTable { rows: rows? })
}

fn score_one<R: Real>(
    trial: &StimulusTrial,
    models: &ScoringModels<'_, R>,
    parser: &PrefixParser<'_, R>,
    tagging: &Pcfg<R>,
    base: R,
) -> Result<TrialScores<R>, StimulusError> {
    let fail = |msg: String| StimulusError::Scoring {
        trial: trial.id.clone(),
        msg,
    };
    let tokens = as_refs(&trial.tokens);
    let w1 = trial.hp_start;
    let w2 = trial.hp_start + 1;
    if w2 >= tokens.len() {
        return Err(fail("homograph window out of range".into()));
    }

    // the trial's POS tags, from its parse
    let mut tag_options = parse_tag_sequences(tagging, &tokens)
        .map_err(|e| fail(format!("tagging parse failed: {e}")))?;
    if tag_options.is_empty() {
        return Err(fail("sentence has no parse under the grammar".into()));
    }
    if tag_options.len() > 1 {
        return Err(fail(format!(
            "sentence is ambiguous: {} distinct tag sequences",
            tag_options.len()
        )));
    }
    let tags = tag_options.pop().unwrap();

    let tagged = TaggedSentence::new(
        trial
            .tokens
            .iter()
            .zip(&tags)
            .map(|(form, tag)| TaggedToken::new(form.clone(), tag.clone()))
            .collect(),
    );

    let word_vals = models
        .word_ngram
        .sentence_surprisal(&tagged, base)
        .map_err(|e| fail(format!("word n-gram at position {w1}/{w2}: {e}")))?;
    let pos_vals = models
        .pos_ngram
        .sentence_surprisal(&tagged, base)
        .map_err(|e| fail(format!("POS n-gram: {e}")))?;
    let split = parser
        .split_surprisal(&tokens, base)
        .map_err(|e| fail(format!("prefix parse: {e}")))?;

    let pick = |vals: &[R], which: usize| -> Result<R, StimulusError> {
        let v = vals[which];
        if !v.is_finite() {
            return Err(fail(format!("non-finite surprisal at position {which}")));
        }
        // tolerate float dust on the zero boundary
        if v < R::zero() {
            if v > R::from_f64_lossy(-1e-9) {
                return Ok(R::zero());
            }
            return Err(fail(format!("negative surprisal {v} at position {which}")));
        }
        Ok(v)
    };

    Ok(TrialScores {
        trial_id: trial.id.clone(),
        condition: trial.condition,
        phrase_type: trial.phrase_type,
        ngram: [pick(&word_vals, w1)?, pick(&word_vals, w2)?],
        lexical: [pick(&split.lexical, w1)?, pick(&split.lexical, w2)?],
        pos: [pick(&pos_vals, w1)?, pick(&pos_vals, w2)?],
        syntactic: [pick(&split.syntactic, w1)?, pick(&split.syntactic, w2)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let trials = vec![StimulusTrial {
            id: "t1".into(),
            condition: Condition::StrongPred,
            phrase_type: PhraseType::Np,
            tokens: vec!["the".into(), "woman".into(), "cleans".into(), "her".into(), "duck".into()],
            hp_start: 3,
        }];
        let csv = stimuli_to_csv(&trials);
        let back = parse_stimuli_csv(&csv).unwrap();
        assert_eq!(trials, back);
    }

    #[test]
    fn weak_vp_is_rejected() {
        let csv = "id,condition,phrase_type,tokens,hp_start\nx,Weak_PRED,VP,a b c,0\n";
        assert!(matches!(
            parse_stimuli_csv(csv),
            Err(StimulusError::ImpossibleClass { line: 2 })
        ));
    }

    #[test]
    fn hp_window_must_fit() {
        let csv = "id,condition,phrase_type,tokens,hp_start\nx,UNPRED,NP,a b c,2\n";
        assert!(matches!(
            parse_stimuli_csv(csv),
            Err(StimulusError::HpOutOfRange { .. })
        ));
    }

    #[test]
    fn unknown_condition_is_rejected() {
        let csv = "id,condition,phrase_type,tokens,hp_start\nx,WEIRD,NP,a b c,0\n";
        assert!(parse_stimuli_csv(csv).is_err());
    }
}
