//! Probabilistic context-free grammars: representation, file format,
//! treebank estimation, validation, sampling, and head lexicalization.
//!
//! Grammar file format, one rule set per line:
//!
//! ```text
//! # comment
//! S  -> NP VP
//! VP -> V NP 0.4 | V 0.6
//! ```
//!
//! A trailing number on an alternative is its probability. If no
//! alternative of a left-hand side carries a probability, that side's rules
//! are made uniform; explicit probabilities must sum to 1 within 1e-6.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{lexical_only_from_expansions, Tree, Treebank};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("explicit probabilities for {lhs} sum to {sum}, differing from 1 by more than 1e-6")]
    Normalization { lhs: String, sum: f64 },
    #[error("{lhs} mixes alternatives with and without explicit probabilities")]
    MixedProbabilities { lhs: String },
    #[error("grammar has no rules")]
    Empty,
    #[error("start symbol {0} has no rules")]
    NoStartRules(String),
    #[error("strict mode: {0}")]
    Strict(String),
    #[error("treebank is empty")]
    EmptyTreebank,
    #[error("cannot resolve a head child for node {node:?}")]
    HeadResolution { node: String },
    #[error("sampling exceeded depth limit {0}; grammar may be too recursive")]
    SampleDepth(usize),
}

/// Interned grammar symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(pub u32);

/// Symbol interner shared by the rules of one grammar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, Symbol>,
}

impl SymbolTable {
    pub fn intern(&mut self, name: &str) -> Symbol {
        if let Some(&sym) = self.index.get(name) {
            return sym;
        }
        let sym = Symbol(self.names.len() as u32);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), sym);
        sym
    }

    pub fn lookup(&self, name: &str) -> Option<Symbol> {
        self.index.get(name).copied()
    }

    pub fn name(&self, sym: Symbol) -> &str {
        &self.names[sym.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One weighted rewrite rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule<R> {
    pub lhs: Symbol,
    pub rhs: Vec<Symbol>,
    pub prob: R,
}

/// A probabilistic context-free grammar. A symbol is a nonterminal iff it
/// appears as some rule's left-hand side. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Pcfg<R> {
    symbols: SymbolTable,
    start: Symbol,
    rules: Vec<Rule<R>>,
    nonterminal: Vec<bool>,
    rules_by_lhs: HashMap<Symbol, Vec<usize>>,
}

impl<R: Real> Pcfg<R> {
    /// Build from `(lhs, rhs, prob)` triples given as names. The start
    /// symbol must head at least one rule.
    pub fn from_rules(
        start: &str,
        named_rules: &[(String, Vec<String>, R)],
    ) -> Result<Self, GrammarError> {
        if named_rules.is_empty() {
            return Err(GrammarError::Empty);
        }
        let mut symbols = SymbolTable::default();
        let start_sym = symbols.intern(start);
        let mut rules = Vec::with_capacity(named_rules.len());
        for (lhs, rhs, prob) in named_rules {
            let lhs = symbols.intern(lhs);
            let rhs = rhs.iter().map(|s| symbols.intern(s)).collect();
            rules.push(Rule {
                lhs,
                rhs,
                prob: *prob,
            });
        }
        let mut nonterminal = vec![false; symbols.len()];
        for rule in &rules {
            nonterminal[rule.lhs.0 as usize] = true;
        }
        if !nonterminal[start_sym.0 as usize] {
            return Err(GrammarError::NoStartRules(start.to_string()));
        }
        let mut rules_by_lhs: HashMap<Symbol, Vec<usize>> = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            rules_by_lhs.entry(rule.lhs).or_default().push(i);
        }
        Ok(Pcfg {
            symbols,
            start: start_sym,
            rules,
            nonterminal,
            rules_by_lhs,
        })
    }

    pub fn start(&self) -> Symbol {
        self.start
    }

    pub fn rules(&self) -> &[Rule<R>] {
        &self.rules
    }

    pub fn rules_for(&self, sym: Symbol) -> &[usize] {
        self.rules_by_lhs
            .get(&sym)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn is_nonterminal(&self, sym: Symbol) -> bool {
        self.nonterminal[sym.0 as usize]
    }

    pub fn is_terminal(&self, sym: Symbol) -> bool {
        !self.is_nonterminal(sym)
    }

    pub fn name(&self, sym: Symbol) -> &str {
        self.symbols.name(sym)
    }

    pub fn symbol(&self, name: &str) -> Option<Symbol> {
        self.symbols.lookup(name)
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = Symbol> + '_ {
        (0..self.symbols.len() as u32)
            .map(Symbol)
            .filter(|s| self.is_nonterminal(*s))
    }

    pub fn terminals(&self) -> impl Iterator<Item = Symbol> + '_ {
        (0..self.symbols.len() as u32)
            .map(Symbol)
            .filter(|s| self.is_terminal(*s))
    }

    pub fn terminal_names(&self) -> BTreeSet<&str> {
        self.terminals().map(|s| self.name(s)).collect()
    }

    /// Categories that only ever derive single words, used when projecting
    /// preterminals to POS tags (see [`Tree::pos_tags`]).
    pub fn lexical_only_categories(&self) -> HashSet<String> {
        let mut expansions: BTreeMap<String, Vec<Vec<(String, bool)>>> = BTreeMap::new();
        for rule in &self.rules {
            let rhs = rule
                .rhs
                .iter()
                .map(|&s| (self.name(s).to_string(), self.is_terminal(s)))
                .collect();
            expansions
                .entry(self.name(rule.lhs).to_string())
                .or_default()
                .push(rhs);
        }
        lexical_only_from_expansions(&expansions)
    }

    /// Serialize in the grammar file format with explicit six-decimal
    /// probabilities, one rule per line, in rule order. Rounding drift is
    /// folded into each side's largest rule so every left-hand side still
    /// sums to exactly 1.000000 and the file always re-parses.
    pub fn to_grammar_text(&self) -> String {
        // probabilities in integer micro-units per rule
        let mut micros: Vec<i64> = self
            .rules
            .iter()
            .map(|r| (r.prob.to_f64().unwrap_or(f64::NAN) * 1e6).round() as i64)
            .collect();
        let mut by_lhs: BTreeMap<Symbol, Vec<usize>> = BTreeMap::new();
        for (i, rule) in self.rules.iter().enumerate() {
            by_lhs.entry(rule.lhs).or_default().push(i);
        }
        for ids in by_lhs.values() {
            let total: i64 = ids.iter().map(|&i| micros[i]).sum();
            let diff = 1_000_000 - total;
            if diff != 0 && diff.unsigned_abs() as usize <= ids.len() {
                let largest = *ids
                    .iter()
                    .max_by_key(|&&i| micros[i])
                    .expect("side has rules");
                micros[largest] += diff;
            }
        }
        let mut out = String::new();
        for (rule, m) in self.rules.iter().zip(micros) {
            let rhs: Vec<&str> = rule.rhs.iter().map(|&s| self.name(s)).collect();
            out.push_str(&format!(
                "{} -> {} {}.{:06}\n",
                self.name(rule.lhs),
                rhs.join(" "),
                m / 1_000_000,
                m % 1_000_000
            ));
        }
        out
    }

    /// Sample a derivation tree. Deterministic given the RNG state. Errors
    /// if the derivation exceeds `max_depth` levels.
    pub fn sample<G: Rng>(&self, rng: &mut G, max_depth: usize) -> Result<Tree, GrammarError> {
        self.sample_symbol(self.start, rng, max_depth)
    }

    fn sample_symbol<G: Rng>(
        &self,
        sym: Symbol,
        rng: &mut G,
        depth_left: usize,
    ) -> Result<Tree, GrammarError> {
        if self.is_terminal(sym) {
            return Ok(Tree::leaf(self.name(sym)));
        }
        if depth_left == 0 {
            return Err(GrammarError::SampleDepth(0));
        }
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let rule_ids = self.rules_for(sym);
        let mut chosen = *rule_ids.last().expect("nonterminal has rules");
        for &rid in rule_ids {
            acc += self.rules[rid].prob.to_f64().unwrap_or(0.0);
            if draw < acc {
                chosen = rid;
                break;
            }
        }
        let rule = &self.rules[chosen];
        let mut children = Vec::with_capacity(rule.rhs.len());
        for &child in &rule.rhs {
            children.push(self.sample_symbol(child, rng, depth_left - 1)?);
        }
        Ok(Tree::internal(self.name(sym), children))
    }
}

/// Validation report: normalization residuals per left-hand side, symbols
/// unreachable from the start, symbols that derive no terminal string, and
/// epsilon rules.
#[derive(Debug, Clone, Default)]
pub struct GrammarDiagnostics {
    pub residuals: Vec<(String, f64)>,
    pub unreachable: Vec<String>,
    pub unproductive: Vec<String>,
    pub epsilon_rules: Vec<usize>,
}

impl GrammarDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.residuals.is_empty()
            && self.unreachable.is_empty()
            && self.unproductive.is_empty()
            && self.epsilon_rules.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.is_clean() {
            return "grammar is clean".to_string();
        }
        let mut parts = Vec::new();
        if !self.residuals.is_empty() {
            let worst = self
                .residuals
                .iter()
                .map(|(_, r)| *r)
                .fold(0.0f64, f64::max);
            parts.push(format!(
                "{} side(s) with normalization residual (worst {:.2e})",
                self.residuals.len(),
                worst
            ));
        }
        if !self.unreachable.is_empty() {
            parts.push(format!("unreachable: {}", self.unreachable.join(", ")));
        }
        if !self.unproductive.is_empty() {
            parts.push(format!("unproductive: {}", self.unproductive.join(", ")));
        }
        if !self.epsilon_rules.is_empty() {
            parts.push(format!("{} epsilon rule(s)", self.epsilon_rules.len()));
        }
        parts.join("; ")
    }
}

/// Pure report over a grammar; never fails.
pub fn validate<R: Real>(pcfg: &Pcfg<R>) -> GrammarDiagnostics {
    let mut diag = GrammarDiagnostics::default();

    let mut sums: BTreeMap<Symbol, R> = BTreeMap::new();
    for rule in pcfg.rules() {
        *sums.entry(rule.lhs).or_insert_with(R::zero) += rule.prob;
    }
    for (sym, sum) in &sums {
        let residual = (*sum - R::one()).abs().to_f64().unwrap_or(f64::NAN);
        if residual > 1e-12 {
            diag.residuals.push((pcfg.name(*sym).to_string(), residual));
        }
    }

    // reachability from the start symbol
    let mut reachable: BTreeSet<Symbol> = BTreeSet::new();
    let mut queue = vec![pcfg.start()];
    while let Some(sym) = queue.pop() {
        if !reachable.insert(sym) {
            continue;
        }
        for &rid in pcfg.rules_for(sym) {
            for &child in &pcfg.rules()[rid].rhs {
                if pcfg.is_nonterminal(child) && !reachable.contains(&child) {
                    queue.push(child);
                }
            }
        }
    }

    // productivity fixpoint: a nonterminal is productive once some rule has
    // an all-productive right-hand side (terminals are productive)
    let mut productive: BTreeSet<Symbol> = BTreeSet::new();
    loop {
        let mut changed = false;
        for rule in pcfg.rules() {
            if productive.contains(&rule.lhs) {
                continue;
            }
            let ok = rule
                .rhs
                .iter()
                .all(|s| pcfg.is_terminal(*s) || productive.contains(s));
            if ok {
                productive.insert(rule.lhs);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    for sym in pcfg.nonterminals() {
        if !reachable.contains(&sym) {
            diag.unreachable.push(pcfg.name(sym).to_string());
        }
        if !productive.contains(&sym) {
            diag.unproductive.push(pcfg.name(sym).to_string());
        }
    }
    diag.unreachable.sort();
    diag.unproductive.sort();

    for (i, rule) in pcfg.rules().iter().enumerate() {
        if rule.rhs.is_empty() {
            diag.epsilon_rules.push(i);
        }
    }
    diag
}

/// Parse a grammar file. In strict mode, unreachable or unproductive
/// symbols are errors rather than diagnostics.
pub fn parse_grammar_file<R: Real>(
    path: impl AsRef<Path>,
    strict: bool,
) -> Result<(Pcfg<R>, GrammarDiagnostics), GrammarError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GrammarError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_grammar_str(&text, strict)
}

/// Parse a grammar from a string. See the module docs for the format.
pub fn parse_grammar_str<R: Real>(
    text: &str,
    strict: bool,
) -> Result<(Pcfg<R>, GrammarDiagnostics), GrammarError> {
    // (lhs, rhs, explicit prob), in file order
    let mut raw: Vec<(String, Vec<String>, Option<f64>)> = Vec::new();
    let mut start: Option<String> = None;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        };
        if line.trim().is_empty() {
            continue;
        }
        let (lhs_part, rhs_part) = line.split_once("->").ok_or_else(|| GrammarError::Parse {
            line: lineno,
            msg: "missing `->`".into(),
        })?;
        let lhs = lhs_part.trim();
        if lhs.is_empty() || lhs.split_whitespace().count() != 1 {
            return Err(GrammarError::Parse {
                line: lineno,
                msg: format!("left-hand side must be a single symbol, got {lhs:?}"),
            });
        }
        if start.is_none() {
            start = Some(lhs.to_string());
        }
        for alternative in rhs_part.split('|') {
            let mut tokens: Vec<&str> = alternative.split_whitespace().collect();
            let mut prob = None;
            if tokens.len() >= 2 {
                if let Ok(p) = tokens.last().unwrap().parse::<f64>() {
                    prob = Some(p);
                    tokens.pop();
                }
            }
            // a bare empty alternative is an epsilon rule
            raw.push((
                lhs.to_string(),
                tokens.iter().map(|t| t.to_string()).collect(),
                prob,
            ));
        }
    }

    let start = start.ok_or(GrammarError::Empty)?;

    // resolve probabilities per left-hand side
    let mut by_lhs: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (lhs, _, _)) in raw.iter().enumerate() {
        by_lhs.entry(lhs).or_default().push(i);
    }
    let mut resolved: Vec<Option<f64>> = vec![None; raw.len()];
    for (lhs, ids) in &by_lhs {
        let explicit: Vec<Option<f64>> = ids.iter().map(|&i| raw[i].2).collect();
        if explicit.iter().all(|p| p.is_none()) {
            let p = 1.0 / ids.len() as f64;
            for &i in ids {
                resolved[i] = Some(p);
            }
        } else if explicit.iter().all(|p| p.is_some()) {
            let sum: f64 = explicit.iter().map(|p| p.unwrap()).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(GrammarError::Normalization {
                    lhs: lhs.to_string(),
                    sum,
                });
            }
            for &i in ids {
                resolved[i] = raw[i].2;
            }
        } else {
            return Err(GrammarError::MixedProbabilities {
                lhs: lhs.to_string(),
            });
        }
    }

    let named: Vec<(String, Vec<String>, R)> = raw
        .into_iter()
        .zip(resolved)
        .map(|((lhs, rhs, _), p)| (lhs, rhs, R::from_f64_lossy(p.unwrap())))
        .collect();
    let pcfg = Pcfg::from_rules(&start, &named)?;
    let diagnostics = validate(&pcfg);
    if strict && !(diagnostics.unreachable.is_empty() && diagnostics.unproductive.is_empty()) {
        return Err(GrammarError::Strict(diagnostics.summary()));
    }
    Ok((pcfg, diagnostics))
}

/// Estimate rule probabilities as relative frequencies of the expansions
/// observed in a treebank. The start symbol is the first tree's root label.
pub fn estimate_pcfg<R: Real>(treebank: &Treebank) -> Result<Pcfg<R>, GrammarError> {
    if treebank.trees.is_empty() {
        return Err(GrammarError::EmptyTreebank);
    }
    let mut counts: Vec<((String, Vec<String>), u64)> = Vec::new();
    let mut index: HashMap<(String, Vec<String>), usize> = HashMap::new();
    let mut lhs_totals: HashMap<String, u64> = HashMap::new();
    for tree in &treebank.trees {
        count_expansions(tree, &mut counts, &mut index, &mut lhs_totals);
    }
    let start = treebank.trees[0].label().to_string();
    let named: Vec<(String, Vec<String>, R)> = counts
        .into_iter()
        .map(|((lhs, rhs), c)| {
            let total = lhs_totals[&lhs];
            let p = R::from_f64_lossy(c as f64) / R::from_f64_lossy(total as f64);
            (lhs, rhs, p)
        })
        .collect();
    Pcfg::from_rules(&start, &named)
}

fn count_expansions(
    tree: &Tree,
    counts: &mut Vec<((String, Vec<String>), u64)>,
    index: &mut HashMap<(String, Vec<String>), usize>,
    lhs_totals: &mut HashMap<String, u64>,
) {
    if let Tree::Internal { label, children } = tree {
        let rhs: Vec<String> = children
            .iter()
            .map(|c| match c {
                Tree::Leaf { form } => form.clone(),
                Tree::Internal { label, .. } => label.clone(),
            })
            .collect();
        let key = (label.clone(), rhs);
        match index.get(&key) {
            Some(&i) => counts[i].1 += 1,
            None => {
                index.insert(key.clone(), counts.len());
                counts.push((key, 1));
            }
        }
        *lhs_totals.entry(label.clone()).or_insert(0) += 1;
        for c in children {
            count_expansions(c, counts, index, lhs_totals);
        }
    }
}

/// Per-category ordered head-child preferences. Categories not listed fall
/// back to the rightmost child.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadTable {
    prefs: BTreeMap<String, Vec<String>>,
}

impl HeadTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category: impl Into<String>, preferences: Vec<String>) {
        self.prefs.insert(category.into(), preferences);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.prefs.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Parse lines of `CATEGORY CHILD1 CHILD2 ...`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let mut table = HeadTable::new();
        for (idx, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            };
            let mut tokens = line.split_whitespace();
            let Some(category) = tokens.next() else {
                continue;
            };
            let prefs: Vec<String> = tokens.map(str::to_string).collect();
            if prefs.is_empty() {
                return Err(GrammarError::Parse {
                    line: idx + 1,
                    msg: format!("head table entry for {category} lists no children"),
                });
            }
            table.insert(category, prefs);
        }
        Ok(table)
    }

    /// Index of the head child among `child_labels`, and whether the
    /// rightmost-child fallback was used.
    pub fn resolve(&self, category: &str, child_labels: &[&str]) -> Option<(usize, bool)> {
        if child_labels.is_empty() {
            return None;
        }
        if let Some(prefs) = self.prefs.get(category) {
            for wanted in prefs {
                if let Some(pos) = child_labels.iter().position(|c| c == wanted) {
                    return Some((pos, false));
                }
            }
        }
        Some((child_labels.len() - 1, true))
    }
}

/// Start symbol of lexicalized grammars; heads vary at the root, so a
/// synthetic root ties them together.
pub const LEX_TOP: &str = "$TOP";

/// A head-lexicalized PCFG: the base grammar's categories are annotated
/// with their head words. Keeps the annotated expansion counts so that
/// de-lexicalization can re-merge probabilities exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalizedPcfg<R> {
    base: Pcfg<R>,
    head_table: HeadTable,
    /// annotated (lhs, rhs) expansion counts, in first-seen order
    counts: Vec<((String, Vec<String>), u64)>,
    /// annotated category -> (base category, head word)
    decode: BTreeMap<String, (String, String)>,
}

impl<R: Real> LexicalizedPcfg<R> {
    /// The annotated grammar; it is an ordinary PCFG and can be parsed
    /// with the prefix parser directly.
    pub fn as_pcfg(&self) -> &Pcfg<R> {
        &self.base
    }

    pub fn head_table(&self) -> &HeadTable {
        &self.head_table
    }

    /// Base category and head word of an annotated category, if it is one.
    pub fn decode_category(&self, annotated: &str) -> Option<(&str, &str)> {
        self.decode
            .get(annotated)
            .map(|(c, h)| (c.as_str(), h.as_str()))
    }

    /// Versioned JSON dump carrying the annotated expansion counts, the
    /// head table, and the annotation decode map; the grammar itself is
    /// rebuilt from the counts on load.
    pub fn to_json(&self) -> String {
        let file = LexPcfgFile {
            version: 1,
            head_table: self
                .head_table
                .entries()
                .map(|(k, v)| (k.to_string(), v.to_vec()))
                .collect(),
            counts: self
                .counts
                .iter()
                .map(|((lhs, rhs), c)| (lhs.clone(), rhs.clone(), *c))
                .collect(),
            decode: self.decode.clone(),
        };
        serde_json::to_string_pretty(&file).expect("lexicalized grammar serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GrammarError> {
        let file: LexPcfgFile = serde_json::from_str(text).map_err(|e| GrammarError::Parse {
            line: 0,
            msg: format!("lexicalized grammar file: {e}"),
        })?;
        if file.version != 1 {
            return Err(GrammarError::Parse {
                line: 0,
                msg: format!("unsupported lexicalized grammar version {}", file.version),
            });
        }
        let counts: Vec<((String, Vec<String>), u64)> = file
            .counts
            .into_iter()
            .map(|(lhs, rhs, c)| ((lhs, rhs), c))
            .collect();
        let mut totals: HashMap<String, u64> = HashMap::new();
        for ((lhs, _), c) in &counts {
            *totals.entry(lhs.clone()).or_insert(0) += c;
        }
        let named: Vec<(String, Vec<String>, R)> = counts
            .iter()
            .map(|((lhs, rhs), c)| {
                let p = R::from_f64_lossy(*c as f64) / R::from_f64_lossy(totals[lhs] as f64);
                (lhs.clone(), rhs.clone(), p)
            })
            .collect();
        let base = Pcfg::from_rules(LEX_TOP, &named)?;
        let mut head_table = HeadTable::new();
        for (k, v) in file.head_table {
            head_table.insert(k, v);
        }
        Ok(LexicalizedPcfg {
            base,
            head_table,
            counts,
            decode: file.decode,
        })
    }

    /// Strip head annotations and re-merge rule probabilities from the
    /// stored counts. Recovers treebank relative frequencies exactly (plus
    /// the synthetic `$TOP -> root` rule).
    pub fn delexicalize(&self) -> Pcfg<R> {
        let strip = |name: &str| -> String {
            self.decode
                .get(name)
                .map(|(c, _)| c.clone())
                .unwrap_or_else(|| name.to_string())
        };
        let mut merged: Vec<((String, Vec<String>), u64)> = Vec::new();
        let mut index: HashMap<(String, Vec<String>), usize> = HashMap::new();
        let mut totals: HashMap<String, u64> = HashMap::new();
        for ((lhs, rhs), c) in &self.counts {
            let key = (
                strip(lhs),
                rhs.iter().map(|s| strip(s)).collect::<Vec<_>>(),
            );
            *totals.entry(key.0.clone()).or_insert(0) += c;
            match index.get(&key) {
                Some(&i) => merged[i].1 += c,
                None => {
                    index.insert(key.clone(), merged.len());
                    merged.push((key, *c));
                }
            }
        }
        let named: Vec<(String, Vec<String>, R)> = merged
            .into_iter()
            .map(|((lhs, rhs), c)| {
                let p = R::from_f64_lossy(c as f64) / R::from_f64_lossy(totals[&lhs] as f64);
                (lhs, rhs, p)
            })
            .collect();
        Pcfg::from_rules(LEX_TOP, &named).expect("delexicalized grammar is well-formed")
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct LexPcfgFile {
    version: u32,
    head_table: BTreeMap<String, Vec<String>>,
    counts: Vec<(String, Vec<String>, u64)>,
    decode: BTreeMap<String, (String, String)>,
}

/// Annotate every node of every tree with its head word (percolated from
/// the head child chosen by `head_table`, rightmost child as fallback) and
/// re-estimate rule probabilities over the annotated categories.
///
/// Returns the grammar and the sorted list of categories that needed the
/// fallback, as a diagnostic.
pub fn lexicalize<R: Real>(
    treebank: &Treebank,
    head_table: &HeadTable,
) -> Result<(LexicalizedPcfg<R>, Vec<String>), GrammarError> {
    if treebank.trees.is_empty() {
        return Err(GrammarError::EmptyTreebank);
    }
    let mut counts: Vec<((String, Vec<String>), u64)> = Vec::new();
    let mut index: HashMap<(String, Vec<String>), usize> = HashMap::new();
    let mut totals: HashMap<String, u64> = HashMap::new();
    let mut decode: BTreeMap<String, (String, String)> = BTreeMap::new();
    let mut fallback: BTreeSet<String> = BTreeSet::new();

    let mut bump = |key: (String, Vec<String>),
                    counts: &mut Vec<((String, Vec<String>), u64)>,
                    index: &mut HashMap<(String, Vec<String>), usize>,
                    totals: &mut HashMap<String, u64>| {
        *totals.entry(key.0.clone()).or_insert(0) += 1;
        match index.get(&key) {
            Some(&i) => counts[i].1 += 1,
            None => {
                index.insert(key.clone(), counts.len());
                counts.push((key, 1));
            }
        }
    };

    for tree in &treebank.trees {
        let root_ann = annotate(
            tree,
            head_table,
            &mut counts,
            &mut index,
            &mut totals,
            &mut decode,
            &mut fallback,
            &mut bump,
        )?;
        bump(
            (LEX_TOP.to_string(), vec![root_ann]),
            &mut counts,
            &mut index,
            &mut totals,
        );
    }

    let named: Vec<(String, Vec<String>, R)> = counts
        .iter()
        .map(|((lhs, rhs), c)| {
            let p = R::from_f64_lossy(*c as f64) / R::from_f64_lossy(totals[lhs] as f64);
            (lhs.clone(), rhs.clone(), p)
        })
        .collect();
    let base = Pcfg::from_rules(LEX_TOP, &named)?;
    Ok((
        LexicalizedPcfg {
            base,
            head_table: head_table.clone(),
            counts,
            decode,
        },
        fallback.into_iter().collect(),
    ))
}

/// Annotates `tree`, records its expansion counts, and returns the
/// annotated label (`Cat[head]`). Returns the head word via `decode`.
#[allow(clippy::too_many_arguments)]
fn annotate(
    tree: &Tree,
    head_table: &HeadTable,
    counts: &mut Vec<((String, Vec<String>), u64)>,
    index: &mut HashMap<(String, Vec<String>), usize>,
    totals: &mut HashMap<String, u64>,
    decode: &mut BTreeMap<String, (String, String)>,
    fallback: &mut BTreeSet<String>,
    bump: &mut impl FnMut(
        (String, Vec<String>),
        &mut Vec<((String, Vec<String>), u64)>,
        &mut HashMap<(String, Vec<String>), usize>,
        &mut HashMap<String, u64>,
    ),
) -> Result<String, GrammarError> {
    match tree {
        Tree::Leaf { .. } => Err(GrammarError::HeadResolution {
            node: "bare leaf at tree root".into(),
        }),
        Tree::Internal { label, children } => {
            // preterminal: head is the word itself
            if children.len() == 1 {
                if let Tree::Leaf { form } = &children[0] {
                    let ann = format!("{label}[{form}]");
                    decode.insert(ann.clone(), (label.clone(), form.clone()));
                    bump((ann.clone(), vec![form.clone()]), counts, index, totals);
                    return Ok(ann);
                }
            }
            let mut child_anns = Vec::with_capacity(children.len());
            let mut child_labels = Vec::with_capacity(children.len());
            for c in children {
                match c {
                    Tree::Leaf { .. } => {
                        return Err(GrammarError::HeadResolution {
                            node: label.clone(),
                        })
                    }
                    Tree::Internal { label: cl, .. } => {
                        child_labels.push(cl.as_str());
                        child_anns.push(annotate(
                            c, head_table, counts, index, totals, decode, fallback, bump,
                        )?);
                    }
                }
            }
            let (head_idx, used_fallback) = head_table
                .resolve(label, &child_labels)
                .ok_or_else(|| GrammarError::HeadResolution {
                    node: label.clone(),
                })?;
            if used_fallback {
                fallback.insert(label.clone());
            }
            let head = decode
                .get(&child_anns[head_idx])
                .map(|(_, h)| h.clone())
                .expect("annotated child is in decode table");
            let ann = format!("{label}[{head}]");
            decode.insert(ann.clone(), (label.clone(), head));
            bump((ann.clone(), child_anns.clone()), counts, index, totals);
            Ok(ann)
        }
    }
}

/// The running example grammar used throughout the tests: a tiny English
/// fragment with uniform rule probabilities.
pub const TOY_ENGLISH_GRAMMAR: &str = "\
S -> NP VP
NP -> Det N
VP -> V NP | V
Det -> the | a
N -> book | books
V -> read | reads
";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_treebank_str;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Pcfg<f64> {
        parse_grammar_str(TOY_ENGLISH_GRAMMAR, true).unwrap().0
    }

    #[test]
    fn uniform_grammar_has_ten_rules() {
        let g = toy();
        assert_eq!(g.rules().len(), 10);
        let det = g.symbol("Det").unwrap();
        for &rid in g.rules_for(det) {
            assert_relative_eq!(g.rules()[rid].prob, 0.5);
        }
        let s = g.symbol("S").unwrap();
        assert_relative_eq!(g.rules()[g.rules_for(s)[0]].prob, 1.0);
        assert!(validate(&g).is_clean());
    }

    #[test]
    fn explicit_probability_must_normalize() {
        let err = parse_grammar_str::<f64>("S -> NP VP 0.9\nNP -> a\nVP -> b\n", false)
            .unwrap_err();
        assert!(matches!(err, GrammarError::Normalization { .. }));
    }

    #[test]
    fn self_loop_is_unproductive() {
        let (g, diag) = parse_grammar_str::<f64>("X -> X\n", false).unwrap();
        assert_eq!(diag.unproductive, vec!["X"]);
        assert!(parse_grammar_str::<f64>("X -> X\n", true).is_err());
        assert!(!validate(&g).is_clean());
    }

    #[test]
    fn residual_below_strict_threshold_is_reported() {
        let (_, diag) = parse_grammar_str::<f64>(
            "S -> a 0.499999 | b 0.5\n",
            false,
        )
        .unwrap();
        assert_eq!(diag.residuals.len(), 1);
        assert!(diag.residuals[0].1 <= 1.1e-6 && diag.residuals[0].1 >= 0.9e-6);
    }

    #[test]
    fn orphan_nonterminal_is_unreachable() {
        let (_, diag) =
            parse_grammar_str::<f64>("S -> a\nZ -> b\n", false).unwrap();
        assert_eq!(diag.unreachable, vec!["Z"]);
    }

    #[test]
    fn mixed_probabilities_error() {
        assert!(matches!(
            parse_grammar_str::<f64>("S -> a 0.5 | b\n", false),
            Err(GrammarError::MixedProbabilities { .. })
        ));
    }

    #[test]
    fn estimate_single_tree() {
        let tb = read_treebank_str("(S (A a))\n").unwrap();
        let g: Pcfg<f64> = estimate_pcfg(&tb).unwrap();
        assert_eq!(g.rules().len(), 2);
        for rule in g.rules() {
            assert_relative_eq!(rule.prob, 1.0);
        }
    }

    #[test]
    fn estimate_relative_frequencies() {
        let tb = read_treebank_str(
            "(S (VP (V run) (NP (N home))))\n(S (VP (V run) (NP (N home))))\n(S (VP (V run)))\n",
        )
        .unwrap();
        let g: Pcfg<f64> = estimate_pcfg(&tb).unwrap();
        let vp = g.symbol("VP").unwrap();
        let probs: Vec<f64> = g.rules_for(vp).iter().map(|&r| g.rules()[r].prob).collect();
        assert_relative_eq!(probs[0], 2.0 / 3.0);
        assert_relative_eq!(probs[1], 1.0 / 3.0);
        // estimated grammars are normalized by construction
        assert!(validate(&g).residuals.is_empty());
    }

    #[test]
    fn grammar_text_round_trip() {
        let g = toy();
        let text = g.to_grammar_text();
        let (g2, _) = parse_grammar_str::<f64>(&text, true).unwrap();
        assert_eq!(g.rules().len(), g2.rules().len());
        for (a, b) in g.rules().iter().zip(g2.rules()) {
            assert_eq!(g.name(a.lhs), g2.name(b.lhs));
            assert!((a.prob - b.prob).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_then_reestimating_recovers_probabilities() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut trees = Vec::new();
        while trees.len() < 10_000 {
            if let Ok(t) = g.sample(&mut rng, 64) {
                trees.push(t);
            }
        }
        let est: Pcfg<f64> = estimate_pcfg(&Treebank::new(trees)).unwrap();
        // KL divergence per left-hand side below 0.05
        for lhs in g.nonterminals() {
            let mut kl = 0.0;
            for &rid in g.rules_for(lhs) {
                let rule = &g.rules()[rid];
                let p = rule.prob;
                let est_lhs = est.symbol(g.name(lhs)).unwrap();
                let q = est
                    .rules_for(est_lhs)
                    .iter()
                    .map(|&r| &est.rules()[r])
                    .find(|r| {
                        r.rhs.len() == rule.rhs.len()
                            && r.rhs
                                .iter()
                                .zip(&rule.rhs)
                                .all(|(a, b)| est.name(*a) == g.name(*b))
                    })
                    .map(|r| r.prob)
                    .unwrap_or(1e-12);
                kl += p * (p / q).ln();
            }
            assert!(kl < 0.05, "KL for {} was {kl}", g.name(lhs));
        }
    }

    #[test]
    fn lexicalize_percolates_heads() {
        let tb = read_treebank_str(
            "(S (NP (Det the) (N book)) (VP (V reads)))\n(S (NP (Det the) (N book)) (VP (V reads) (NP (Det a) (N books))))\n",
        )
        .unwrap();
        let mut heads = HeadTable::new();
        heads.insert("S", vec!["VP".into()]);
        heads.insert("NP", vec!["N".into()]);
        heads.insert("VP", vec!["V".into()]);
        let (lex, fallback) = lexicalize::<f64>(&tb, &heads).unwrap();
        assert!(fallback.is_empty());
        let g = lex.as_pcfg();
        assert!(g.symbol("VP[reads]").is_some());
        assert!(g.symbol("NP[book]").is_some());
        assert!(g.symbol("S[reads]").is_some());
        assert_eq!(
            lex.decode_category("NP[book]"),
            Some(("NP", "book"))
        );
    }

    #[test]
    fn lexicalize_fallback_emits_diagnostic() {
        let tb = read_treebank_str("(S (NP (Det the) (N book)) (VP (V reads)))\n").unwrap();
        let heads = HeadTable::new();
        let (lex, fallback) = lexicalize::<f64>(&tb, &heads).unwrap();
        // rightmost child fallback: S heads from VP, NP heads from N
        assert!(fallback.contains(&"S".to_string()));
        assert!(lex.as_pcfg().symbol("S[reads]").is_some());
        assert!(lex.as_pcfg().symbol("NP[book]").is_some());
    }

    #[test]
    fn delexicalize_recovers_treebank_estimate() {
        let tb = read_treebank_str(
            "(S (NP (Det the) (N book)) (VP (V reads)))\n(S (NP (Det a) (N books)) (VP (V read) (NP (Det the) (N book))))\n(S (NP (Det the) (N books)) (VP (V read)))\n",
        )
        .unwrap();
        let mut heads = HeadTable::new();
        heads.insert("S", vec!["VP".into()]);
        heads.insert("NP", vec!["N".into()]);
        heads.insert("VP", vec!["V".into()]);
        let (lex, _) = lexicalize::<f64>(&tb, &heads).unwrap();
        let delex = lex.delexicalize();
        assert!(validate(&delex)
            .residuals
            .iter()
            .all(|(_, r)| *r < 1e-9));

        let direct: Pcfg<f64> = estimate_pcfg(&tb).unwrap();
        // every directly-estimated rule reappears with the same probability
        for rule in direct.rules() {
            let lhs_name = direct.name(rule.lhs);
            let d_lhs = delex.symbol(lhs_name).unwrap();
            let found = delex
                .rules_for(d_lhs)
                .iter()
                .map(|&r| &delex.rules()[r])
                .find(|r| {
                    r.rhs.len() == rule.rhs.len()
                        && r.rhs
                            .iter()
                            .zip(&rule.rhs)
                            .all(|(a, b)| delex.name(*a) == direct.name(*b))
                })
                .unwrap_or_else(|| panic!("rule for {lhs_name} missing after delexicalization"));
            assert_relative_eq!(found.prob, rule.prob, epsilon = 1e-9);
        }
    }

    #[test]
    fn epsilon_rule_is_flagged() {
        // an empty alternative is an epsilon rule
        let (g, diag) = parse_grammar_str::<f64>("S -> a |\n", false).unwrap();
        assert_eq!(diag.epsilon_rules.len(), 1);
        assert_eq!(g.rules()[diag.epsilon_rules[0]].rhs.len(), 0);
        assert_relative_eq!(g.rules()[0].prob, 0.5);
    }
}
