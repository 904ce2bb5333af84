//! The bundled toy replication design: a small English-like grammar with
//! an article/clitic homograph layer (`FW`: her, his, its, em under both
//! `DET` and `CL`) and a noun/verb homograph layer (`HG`: duck, play,
//! watch, ... under both `N` and `VT`), mirroring the door/brings type of
//! ambiguity.
//!
//! Because both homograph layers are shared lexeme classes, word-emission
//! probabilities are identical under either reading: lexical surprisal at
//! the homograph phrase depends only on the word, never on the class,
//! while the structural (syntactic) surprisal constants differ by design:
//!
//! - first HP word after a transitive verb (Strong_PRED-NP):
//!   `-log2(0.35)`
//! - first HP word after a completed subject (Strong_PRED-VP):
//!   `-log2(0.12)`
//! - first HP word after a past-requiring adverb (Weak_PRED-NP):
//!   `-log2(0.375)`
//! - first HP word after an ambiguity-preserving adverb (UNPRED):
//!   `-log2(0.475)`
//!
//! Supporting corpora are sampled from the same grammar, so estimated
//! models converge to these constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TaggedSentence, TaggedToken, Treebank};
use crate::grammar::{parse_grammar_str, GrammarError, HeadTable, Pcfg};
use crate::num::Real;

/// The design grammar, in the grammar file format.
pub const DESIGN_GRAMMAR: &str = "\
# Toy homograph-phrase design grammar.
# FW words read as determiner (DET) or object clitic (CL); HG words read
# as noun (N) or present transitive verb (VT).
S    -> ADVU CU 0.3 | ADVP CP 0.3 | CORE 0.4
CORE -> NP VP
CU   -> NP VP 0.5 | CL VT ADVT 0.5
CP   -> NP VPP 0.9 | CL VTP ADVT 0.1
NP   -> DET N 0.7 | PN 0.3
VP   -> VT NP 0.35 | VT NP ADVT 0.25 | CL VT ADVT 0.2 | VI ADVT 0.2
VPP  -> VTP NP 0.2 | VTP NP ADVT 0.1 | VIP ADVT 0.7
DET  -> the 0.3 | a 0.2 | FW 0.5
CL   -> him 0.4 | FW 0.6
FW   -> her 0.4 | his 0.3 | its 0.2 | em 0.1
N    -> woman 0.14 | man 0.12 | child 0.1 | dog 0.14 | HG 0.5
HG   -> duck 0.28 | play 0.22 | watch 0.18 | hide 0.12 | dance 0.12 | present 0.08
VT   -> cleans 0.18 | sees 0.17 | likes 0.15 | HG 0.5
VI   -> swims 0.4 | sleeps 0.3 | runs 0.3
VTP  -> cleaned 0.3 | saw 0.3 | liked 0.2 | greeted 0.2
VIP  -> swam 0.3 | slept 0.3 | ran 0.2 | rested 0.2
ADVU -> maybe 0.6 | perhaps 0.4
ADVP -> yesterday 0.55 | recently 0.45
ADVT -> today 0.3 | quickly 0.25 | here 0.25 | now 0.2
PN   -> john 0.3 | mary 0.3 | sue 0.2 | bob 0.2
";

/// Parse the bundled design grammar.
pub fn design_grammar<R: Real>() -> Result<Pcfg<R>, GrammarError> {
    parse_grammar_str(DESIGN_GRAMMAR, true).map(|(g, _)| g)
}

/// Head preferences for the toy categories, for lexicalized training.
pub fn default_head_table() -> HeadTable {
    let mut heads = HeadTable::new();
    heads.insert("S", vec!["CORE".into(), "CU".into(), "CP".into()]);
    heads.insert("CORE", vec!["VP".into()]);
    heads.insert("CU", vec!["VP".into(), "VT".into()]);
    heads.insert("CP", vec!["VPP".into(), "VTP".into()]);
    heads.insert("NP", vec!["N".into(), "PN".into()]);
    heads.insert("VP", vec!["VT".into(), "VI".into()]);
    heads.insert("VPP", vec!["VTP".into(), "VIP".into()]);
    heads.insert("DET", vec!["FW".into()]);
    heads.insert("CL", vec!["FW".into()]);
    heads.insert("N", vec!["HG".into()]);
    heads.insert("VT", vec!["HG".into()]);
    heads
}

/// Sample a supporting treebank from a grammar. Deterministic under
/// `seed`; oversized derivations are resampled.
pub fn sample_treebank<R: Real>(grammar: &Pcfg<R>, sentences: usize, seed: u64) -> Treebank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(sentences);
    while trees.len() < sentences {
        if let Ok(tree) = grammar.sample(&mut rng, 24) {
            trees.push(tree);
        }
    }
    Treebank::new(trees)
}

/// Tagged-corpus encoding of a treebank, with tags projected through the
/// grammar's lexeme classes (so `her` tags as `DET` or `CL`, never `FW`).
pub fn tagged_corpus<R: Real>(grammar: &Pcfg<R>, treebank: &Treebank) -> Vec<TaggedSentence> {
    let lex = grammar.lexical_only_categories();
    treebank
        .trees
        .iter()
        .map(|tree| {
            let forms = tree.yield_forms();
            let tags = tree.pos_tags(&lex);
            TaggedSentence::new(
                forms
                    .iter()
                    .zip(tags.iter())
                    .map(|(f, t)| TaggedToken::new(*f, t.clone()))
                    .collect(),
            )
        })
        .collect()
}
