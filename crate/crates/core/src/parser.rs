//! Exact prefix probabilities under a PCFG, and the per-word surprisal
//! decomposition into a structural and a word-emission part.
//!
//! The chart parser keeps a forward and an inner probability per dotted
//! state. Left-recursive prediction chains and unit-production completion
//! chains are folded into closed form with precomputed geometric-series
//! closure matrices: `R_L = (I - P_L)^-1` over the left-corner relation and
//! `R_U = (I - P_U)^-1` over unit productions. Prediction and completion
//! are then single passes, so left recursion and unit cycles terminate and
//! are summed exactly.
//!
//! The prefix probability of `w1..wi` is the summed forward probability of
//! the states produced by scanning `wi`. Dividing per-state forward mass by
//! the word-emission rule probability instead gives the structural prefix
//! mass, from which syntactic (emission omitted) and lexical (emission
//! only) surprisal are read off.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use thiserror::Error;

use crate::corpus::{Tree, UNK};
use crate::grammar::{validate, Pcfg, Symbol};
use crate::linalg::Matrix;
use crate::num::Real;
use crate::surprisal::surprisal;

#[derive(Debug, Error)]
pub enum ParserError {
    #[error("grammar has epsilon rules; the prefix parser does not support them")]
    EpsilonRules,
    #[error("grammar has unproductive symbols ({0}); prefix sums would be wrong")]
    Unproductive(String),
    #[error("left-corner closure diverges (left-recursive probability mass at or above 1)")]
    DivergentLeftCorner,
    #[error("unit-production closure diverges (unit-cycle probability mass at or above 1)")]
    DivergentUnitClosure,
    #[error("zero prefix probability at token {position} ({token:?}): {reason}")]
    ZeroPrefix {
        position: usize,
        token: String,
        reason: String,
    },
    #[error("sentence has a unit-production cycle over a fixed span; parses are not enumerable")]
    UnitCycleInParse,
}

const DUMMY_RULE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct StateKey {
    rule: u32,
    dot: u32,
    origin: u32,
}

/// One chart position. States are stored in insertion order so that all
/// float accumulation is deterministic.
struct StateSet<R> {
    keys: Vec<StateKey>,
    forward: Vec<R>,
    inner: Vec<R>,
    index: HashMap<StateKey, usize>,
    /// states with the dot before a nonterminal, grouped by that symbol
    awaiting: BTreeMap<Symbol, Vec<usize>>,
}

impl<R: Real> StateSet<R> {
    fn new() -> Self {
        StateSet {
            keys: Vec::new(),
            forward: Vec::new(),
            inner: Vec::new(),
            index: HashMap::new(),
            awaiting: BTreeMap::new(),
        }
    }

    /// Insert or merge. Returns (slot, newly_inserted).
    fn add(&mut self, key: StateKey, fwd: R, inn: R, dot_symbol: Option<SymbolKind>) -> (usize, bool) {
        if let Some(&slot) = self.index.get(&key) {
            self.forward[slot] += fwd;
            self.inner[slot] += inn;
            return (slot, false);
        }
        let slot = self.keys.len();
        self.keys.push(key);
        self.forward.push(fwd);
        self.inner.push(inn);
        self.index.insert(key, slot);
        if let Some(SymbolKind::Nonterminal(sym)) = dot_symbol {
            self.awaiting.entry(sym).or_default().push(slot);
        }
        (slot, true)
    }
}

#[derive(Debug, Clone, Copy)]
enum SymbolKind {
    Nonterminal(Symbol),
    Terminal(Symbol),
}

/// Per-position results of one parse.
#[derive(Debug, Clone)]
pub struct ParseOutcome<R> {
    /// `prefix[i]` is the summed probability of all trees whose yield
    /// begins with the first `i` tokens; `prefix[0] = 1`.
    pub prefix: Vec<R>,
    /// `structural[i]` is the prefix mass with the emission probability of
    /// token `i` omitted; `structural[0] = 1` by convention.
    pub structural: Vec<R>,
    /// Summed probability of all trees whose yield is exactly the input.
    pub sentence: R,
    /// First token index (0-based) at which no grammar state could scan,
    /// if the prefix left the language.
    pub blocked_at: Option<usize>,
}

/// Per-word surprisal decomposition. For every word,
/// `total = syntactic + lexical` up to float error.
#[derive(Debug, Clone)]
pub struct SurprisalBreakdown<R> {
    pub total: Vec<R>,
    pub syntactic: Vec<R>,
    pub lexical: Vec<R>,
}

/// A prefix-probability parser over a shared immutable grammar. One chart
/// per sentence; a parser may be used from many threads at once.
pub struct PrefixParser<'g, R> {
    grammar: &'g Pcfg<R>,
    /// dense index per nonterminal
    nt_index: HashMap<Symbol, usize>,
    /// reflexive-transitive left-corner closure over nonterminals
    left_corner: Matrix<R>,
    /// reflexive-transitive unit-production closure
    unit: Matrix<R>,
    unk: Option<Symbol>,
}

impl<'g, R: Real> PrefixParser<'g, R> {
    /// Precompute the closure matrices. Fails on epsilon rules,
    /// unproductive symbols, and grammars whose left-recursive or
    /// unit-cycle probability mass does not converge.
    pub fn new(grammar: &'g Pcfg<R>) -> Result<Self, ParserError> {
        if grammar.rules().iter().any(|r| r.rhs.is_empty()) {
            return Err(ParserError::EpsilonRules);
        }
        let diag = validate(grammar);
        if !diag.unproductive.is_empty() {
            return Err(ParserError::Unproductive(diag.unproductive.join(", ")));
        }

        let nts: Vec<Symbol> = grammar.nonterminals().collect();
        let nt_index: HashMap<Symbol, usize> =
            nts.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let n = nts.len();

        let mut p_left: Matrix<R> = Matrix::zeros(n);
        let mut p_unit: Matrix<R> = Matrix::zeros(n);
        for rule in grammar.rules() {
            let row = nt_index[&rule.lhs];
            let first = rule.rhs[0];
            if grammar.is_nonterminal(first) {
                p_left.add(row, nt_index[&first], rule.prob);
                if rule.rhs.len() == 1 {
                    p_unit.add(row, nt_index[&first], rule.prob);
                }
            }
        }

        let left_corner =
            closure(&p_left, n).ok_or(ParserError::DivergentLeftCorner)?;
        let unit = closure(&p_unit, n).ok_or(ParserError::DivergentUnitClosure)?;

        Ok(PrefixParser {
            grammar,
            nt_index,
            left_corner,
            unit,
            unk: grammar.symbol(UNK).filter(|&s| grammar.is_terminal(s)),
        })
    }

    pub fn grammar(&self) -> &'g Pcfg<R> {
        self.grammar
    }

    fn dot_symbol(&self, key: StateKey) -> Option<SymbolKind> {
        if key.rule == DUMMY_RULE {
            return if key.dot == 0 {
                Some(SymbolKind::Nonterminal(self.grammar.start()))
            } else {
                None
            };
        }
        let rule = &self.grammar.rules()[key.rule as usize];
        rule.rhs.get(key.dot as usize).map(|&s| {
            if self.grammar.is_nonterminal(s) {
                SymbolKind::Nonterminal(s)
            } else {
                SymbolKind::Terminal(s)
            }
        })
    }

    fn is_complete(&self, key: StateKey) -> bool {
        if key.rule == DUMMY_RULE {
            return key.dot == 1;
        }
        key.dot as usize == self.grammar.rules()[key.rule as usize].rhs.len()
    }

    /// Unit rules (single-nonterminal right-hand sides) never trigger
    /// completion; their mass is carried by the unit closure matrix.
    fn is_unit_rule(&self, rule: u32) -> bool {
        if rule == DUMMY_RULE {
            return true;
        }
        let r = &self.grammar.rules()[rule as usize];
        r.rhs.len() == 1 && self.grammar.is_nonterminal(r.rhs[0])
    }

    /// Map a token to the terminal the grammar will scan: itself if it is
    /// a known terminal, the reserved unknown-word terminal otherwise.
    fn effective_terminal(&self, token: &str) -> Option<Symbol> {
        match self.grammar.symbol(token) {
            Some(sym) if self.grammar.is_terminal(sym) => Some(sym),
            _ => self.unk,
        }
    }

    /// Run the chart over `tokens`, producing per-position prefix and
    /// structural masses and the full-sentence probability.
    pub fn parse(&self, tokens: &[&str]) -> ParseOutcome<R> {
        let n = tokens.len();
        let mut chart: Vec<StateSet<R>> = Vec::with_capacity(n + 1);
        let mut prefix = vec![R::zero(); n + 1];
        let mut structural = vec![R::zero(); n + 1];
        prefix[0] = R::one();
        structural[0] = R::one();

        let dummy = StateKey {
            rule: DUMMY_RULE,
            dot: 0,
            origin: 0,
        };
        let mut first = StateSet::new();
        first.add(dummy, R::one(), R::one(), self.dot_symbol(dummy));
        self.predict(&mut first, 0);
        chart.push(first);

        let mut blocked_at = None;
        for (i, token) in tokens.iter().enumerate() {
            let effective = self.effective_terminal(token);
            let mut next = StateSet::new();
            let mut pfx = R::zero();
            let mut strc = R::zero();
            if let Some(term) = effective {
                let current = &chart[i];
                for (slot, &key) in current.keys.iter().enumerate() {
                    if let Some(SymbolKind::Terminal(t)) = self.dot_symbol(key) {
                        if t != term {
                            continue;
                        }
                        let scanned = StateKey {
                            rule: key.rule,
                            dot: key.dot + 1,
                            origin: key.origin,
                        };
                        let fwd = current.forward[slot];
                        let inn = current.inner[slot];
                        next.add(scanned, fwd, inn, self.dot_symbol(scanned));
                        pfx += fwd;
                        // emission probability: the rule's own probability
                        // for unary word-emission rules, 1 otherwise (the
                        // word is then structurally determined).
                        let rule = &self.grammar.rules()[key.rule as usize];
                        let emission = if rule.rhs.len() == 1 {
                            rule.prob
                        } else {
                            R::one()
                        };
                        strc += fwd / emission;
                    }
                }
            }
            if next.keys.is_empty() {
                blocked_at = Some(i);
                break;
            }
            prefix[i + 1] = pfx;
            structural[i + 1] = strc;
            self.complete(&mut next, &chart);
            self.predict(&mut next, (i + 1) as u32);
            chart.push(next);
        }

        let sentence = if blocked_at.is_none() {
            let done = StateKey {
                rule: DUMMY_RULE,
                dot: 1,
                origin: 0,
            };
            chart[n]
                .index
                .get(&done)
                .map(|&slot| chart[n].inner[slot])
                .unwrap_or_else(R::zero)
        } else {
            R::zero()
        };

        ParseOutcome {
            prefix,
            structural,
            sentence,
            blocked_at,
        }
    }

    /// Completion pass for the set at `position`. Complete non-unit states
    /// are processed as triggers in strictly decreasing origin order; every
    /// contribution to a state flows from triggers with strictly larger
    /// origins, so each trigger's inner probability is final when used.
    fn complete(&self, set: &mut StateSet<R>, chart: &[StateSet<R>]) {
        let mut buckets: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (slot, &key) in set.keys.iter().enumerate() {
            if self.is_complete(key) && !self.is_unit_rule(key.rule) {
                buckets.entry(key.origin).or_default().push(slot);
            }
        }

        while let Some((origin, slots)) = buckets.pop_last() {
            for trigger_slot in slots {
                let trigger = set.keys[trigger_slot];
                let trigger_inner = set.inner[trigger_slot];
                let lhs = self.grammar.rules()[trigger.rule as usize].lhs;
                let lhs_col = self.nt_index[&lhs];
                let source = &chart[origin as usize];
                // snapshot: sets before `position` are finalized
                for (&waiting_sym, slots_waiting) in &source.awaiting {
                    let weight = self
                        .unit
                        .get(self.nt_index[&waiting_sym], lhs_col);
                    if weight == R::zero() {
                        continue;
                    }
                    for &wslot in slots_waiting {
                        let wkey = source.keys[wslot];
                        let advanced = StateKey {
                            rule: wkey.rule,
                            dot: wkey.dot + 1,
                            origin: wkey.origin,
                        };
                        let fwd = source.forward[wslot] * trigger_inner * weight;
                        let inn = source.inner[wslot] * trigger_inner * weight;
                        let (_, new) = set.add(advanced, fwd, inn, self.dot_symbol(advanced));
                        if new
                            && self.is_complete(advanced)
                            && !self.is_unit_rule(advanced.rule)
                        {
                            // such states always originate strictly before
                            // their trigger, so their bucket is unprocessed
                            debug_assert!(advanced.origin < origin);
                            buckets.entry(advanced.origin).or_default().push(
                                set.index[&advanced],
                            );
                        }
                    }
                }
            }
        }
    }

    /// Prediction pass: accumulate per-nonterminal forward mass through the
    /// left-corner closure, then seed each predicted rule once.
    fn predict(&self, set: &mut StateSet<R>, position: u32) {
        let n = self.left_corner.n();
        let mut mass = vec![R::zero(); n];
        for (slot, &key) in set.keys.iter().enumerate() {
            if let Some(SymbolKind::Nonterminal(z)) = self.dot_symbol(key) {
                let row = self.nt_index[&z];
                let fwd = set.forward[slot];
                for col in 0..n {
                    let w = self.left_corner.get(row, col);
                    if w != R::zero() {
                        mass[col] += fwd * w;
                    }
                }
            }
        }
        let nts: Vec<Symbol> = self.grammar.nonterminals().collect();
        for (col, &sym) in nts.iter().enumerate() {
            if mass[col] == R::zero() {
                continue;
            }
            for &rid in self.grammar.rules_for(sym) {
                let prob = self.grammar.rules()[rid].prob;
                let key = StateKey {
                    rule: rid as u32,
                    dot: 0,
                    origin: position,
                };
                set.add(key, mass[col] * prob, prob, self.dot_symbol(key));
            }
        }
    }

    /// Summed probability of all trees whose yield begins with `tokens`.
    /// Returns 0 when the prefix is ungrammatical under the grammar.
    pub fn prefix_probability(&self, tokens: &[&str]) -> R {
        let outcome = self.parse(tokens);
        if outcome.blocked_at.is_some() {
            R::zero()
        } else {
            outcome.prefix[tokens.len()]
        }
    }

    /// Summed probability of all trees whose yield is exactly `tokens`.
    pub fn sentence_probability(&self, tokens: &[&str]) -> R {
        self.parse(tokens).sentence
    }

    /// Per-word total surprisal in log base `base`:
    /// `-log(prefix(w1..wi) / prefix(w1..wi-1))`.
    pub fn total_surprisal(&self, tokens: &[&str], base: R) -> Result<Vec<R>, ParserError> {
        let outcome = self.parse(tokens);
        let mut out = Vec::with_capacity(tokens.len());
        for i in 1..=tokens.len() {
            self.check_positive(&outcome, tokens, i)?;
            out.push(surprisal(outcome.prefix[i] / outcome.prefix[i - 1], base));
        }
        Ok(out)
    }

    /// Per-word decomposition into syntactic surprisal (structure up to but
    /// excluding the word emission) and lexical surprisal (the emission
    /// given that structure).
    pub fn split_surprisal(
        &self,
        tokens: &[&str],
        base: R,
    ) -> Result<SurprisalBreakdown<R>, ParserError> {
        let outcome = self.parse(tokens);
        let n = tokens.len();
        let mut breakdown = SurprisalBreakdown {
            total: Vec::with_capacity(n),
            syntactic: Vec::with_capacity(n),
            lexical: Vec::with_capacity(n),
        };
        for i in 1..=n {
            self.check_positive(&outcome, tokens, i)?;
            breakdown
                .total
                .push(surprisal(outcome.prefix[i] / outcome.prefix[i - 1], base));
            breakdown.syntactic.push(surprisal(
                outcome.structural[i] / outcome.prefix[i - 1],
                base,
            ));
            breakdown
                .lexical
                .push(surprisal(outcome.prefix[i] / outcome.structural[i], base));
        }
        Ok(breakdown)
    }

    fn check_positive(
        &self,
        outcome: &ParseOutcome<R>,
        tokens: &[&str],
        i: usize,
    ) -> Result<(), ParserError> {
        if outcome.prefix[i] > R::zero() {
            return Ok(());
        }
        let (position, reason) = match outcome.blocked_at {
            Some(b) if b < i => (
                b,
                if self.effective_terminal(tokens[b]).is_none() {
                    "token is not a terminal of the grammar and no unknown-word \
                     terminal is available"
                        .to_string()
                } else {
                    "no predicted structure can scan this token".to_string()
                },
            ),
            _ => (i - 1, "prefix probability underflowed".to_string()),
        };
        Err(ParserError::ZeroPrefix {
            position,
            token: tokens[position].to_string(),
            reason,
        })
    }
}

/// `(I - P)^-1` with a sanity check that the series converged to a
/// nonnegative closure.
fn closure<R: Real>(p: &Matrix<R>, n: usize) -> Option<Matrix<R>> {
    let mut im = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            im.add(i, j, -p.get(i, j));
        }
    }
    let mut inv = im.inverse()?;
    let tiny = R::from_f64_lossy(-1e-9);
    for i in 0..n {
        for j in 0..n {
            let v = inv.get(i, j);
            if v < tiny {
                return None;
            }
            if v < R::zero() {
                inv.set(i, j, R::zero());
            }
        }
    }
    Some(inv)
}

/// All derivation trees of depth at most `max_depth` (counted in node
/// levels: a lone leaf has depth 1), with their probabilities, plus the
/// probability mass of any deeper trees.
#[derive(Debug, Clone)]
pub struct TreeEnumeration<R> {
    pub trees: Vec<(Tree, R)>,
    pub residual: R,
}

/// Exhaustive bounded enumeration of derivation trees. This is the
/// independent oracle the prefix parser is checked against: for grammars
/// whose tree set is exhausted by `max_depth`, prefix probabilities are
/// plain sums over `trees`.
pub fn enumerate_trees<R: Real>(pcfg: &Pcfg<R>, max_depth: usize) -> TreeEnumeration<R> {
    let mut memo: HashMap<(Symbol, usize), Rc<Vec<(Tree, R)>>> = HashMap::new();
    let trees_rc = enumerate_symbol(pcfg, pcfg.start(), max_depth, &mut memo);
    let trees: Vec<(Tree, R)> = trees_rc.as_ref().clone();
    let total: R = trees.iter().map(|(_, p)| *p).sum();
    let mut residual = R::one() - total;
    if residual < R::zero() {
        residual = R::zero();
    }
    TreeEnumeration { trees, residual }
}

fn enumerate_symbol<R: Real>(
    pcfg: &Pcfg<R>,
    sym: Symbol,
    depth: usize,
    memo: &mut HashMap<(Symbol, usize), Rc<Vec<(Tree, R)>>>,
) -> Rc<Vec<(Tree, R)>> {
    if let Some(hit) = memo.get(&(sym, depth)) {
        return Rc::clone(hit);
    }
    let result = if pcfg.is_terminal(sym) {
        if depth >= 1 {
            vec![(Tree::leaf(pcfg.name(sym)), R::one())]
        } else {
            Vec::new()
        }
    } else if depth < 2 {
        Vec::new()
    } else {
        let mut out = Vec::new();
        for &rid in pcfg.rules_for(sym) {
            let rule = &pcfg.rules()[rid];
            // cartesian product over child alternatives
            let mut partial: Vec<(Vec<Tree>, R)> = vec![(Vec::new(), rule.prob)];
            for &child in &rule.rhs {
                let options = enumerate_symbol(pcfg, child, depth - 1, memo);
                if options.is_empty() {
                    partial.clear();
                    break;
                }
                let mut grown = Vec::with_capacity(partial.len() * options.len());
                for (children, p) in &partial {
                    for (tree, q) in options.iter() {
                        let mut c = children.clone();
                        c.push(tree.clone());
                        grown.push((c, *p * *q));
                    }
                }
                partial = grown;
            }
            for (children, p) in partial {
                out.push((Tree::internal(pcfg.name(sym), children), p));
            }
        }
        out
    };
    let rc = Rc::new(result);
    memo.insert((sym, depth), Rc::clone(&rc));
    rc
}

/// All parse trees whose yield is exactly `tokens`, with probabilities.
/// Tokens outside the terminal set are mapped to the unknown-word terminal
/// when the grammar has one. Errors if a unit-production cycle makes the
/// parse set infinite.
pub fn sentence_parses<R: Real>(
    pcfg: &Pcfg<R>,
    tokens: &[&str],
) -> Result<Vec<(Tree, R)>, ParserError> {
    let mapped: Vec<&str> = tokens
        .iter()
        .map(|&t| match pcfg.symbol(t) {
            Some(s) if pcfg.is_terminal(s) => t,
            _ => UNK,
        })
        .collect();
    let mut memo: HashMap<(Symbol, usize, usize), Rc<Vec<(Tree, R)>>> = HashMap::new();
    let mut in_progress = std::collections::HashSet::new();
    let all = span_parses(
        pcfg,
        pcfg.start(),
        0,
        mapped.len(),
        &mapped,
        &mut memo,
        &mut in_progress,
    )?;
    Ok(all.as_ref().clone())
}

fn span_parses<R: Real>(
    pcfg: &Pcfg<R>,
    sym: Symbol,
    i: usize,
    j: usize,
    tokens: &[&str],
    memo: &mut HashMap<(Symbol, usize, usize), Rc<Vec<(Tree, R)>>>,
    in_progress: &mut std::collections::HashSet<(Symbol, usize, usize)>,
) -> Result<Rc<Vec<(Tree, R)>>, ParserError> {
    let key = (sym, i, j);
    if let Some(hit) = memo.get(&key) {
        return Ok(Rc::clone(hit));
    }
    if !in_progress.insert(key) {
        return Err(ParserError::UnitCycleInParse);
    }
    let mut out: Vec<(Tree, R)> = Vec::new();
    if pcfg.is_terminal(sym) {
        if j == i + 1 && tokens[i] == pcfg.name(sym) {
            out.push((Tree::leaf(pcfg.name(sym)), R::one()));
        }
    } else {
        for &rid in pcfg.rules_for(sym) {
            let rule = &pcfg.rules()[rid];
            if rule.rhs.is_empty() {
                continue; // epsilon rules are out of scope
            }
            let mut stack: Vec<(usize, usize, Vec<Tree>, R)> = vec![(0, i, Vec::new(), rule.prob)];
            while let Some((child_idx, start, children, p)) = stack.pop() {
                if child_idx == rule.rhs.len() {
                    if start == j {
                        out.push((Tree::internal(pcfg.name(sym), children), p));
                    }
                    continue;
                }
                let remaining = rule.rhs.len() - child_idx - 1;
                let child = rule.rhs[child_idx];
                // each remaining symbol consumes at least one token
                let Some(max_end) = j.checked_sub(remaining) else {
                    continue;
                };
                if max_end < start + 1 {
                    continue;
                }
                for end in (start + 1)..=max_end {
                    let subs = span_parses(pcfg, child, start, end, tokens, memo, in_progress)?;
                    for (tree, q) in subs.iter() {
                        let mut c = children.clone();
                        c.push(tree.clone());
                        stack.push((child_idx + 1, end, c, p * *q));
                    }
                }
            }
        }
    }
    in_progress.remove(&key);
    let rc = Rc::new(out);
    memo.insert(key, Rc::clone(&rc));
    Ok(rc)
}

/// Distinct part-of-speech tag sequences over the parses of `tokens`,
/// using the grammar's lexical-only categories to project preterminals to
/// tags. Most callers require exactly one.
pub fn parse_tag_sequences<R: Real>(
    pcfg: &Pcfg<R>,
    tokens: &[&str],
) -> Result<Vec<Vec<String>>, ParserError> {
    let parses = sentence_parses(pcfg, tokens)?;
    let lex = pcfg.lexical_only_categories();
    let mut seen = Vec::new();
    for (tree, _) in &parses {
        let tags = tree.pos_tags(&lex);
        if !seen.contains(&tags) {
            seen.push(tags);
        }
    }
    Ok(seen)
}
