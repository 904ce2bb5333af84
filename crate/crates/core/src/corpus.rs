//! Corpus ingestion: tagged corpora, bracketed treebanks, vocabularies.
//!
//! File formats:
//! - tagged corpus: UTF-8, one `token<TAB>tag` per line, blank line between
//!   sentences;
//! - treebank: UTF-8, one bracketed tree per line, e.g.
//!   `(S (NP (Det the) (N book)) (VP (V reads)))`. Labels and forms must not
//!   contain parentheses or whitespace.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved sentence-start marker used for n-gram context padding.
pub const SENT_START: &str = "<s>";
/// Reserved sentence-end marker appended when augmenting a sentence.
pub const SENT_END: &str = "</s>";
/// Reserved form that unknown words map to.
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("corpus contains no sentences")]
    EmptyCorpus,
    #[error("treebank contains no trees")]
    EmptyTreebank,
    #[error("unk threshold must be at least 1")]
    BadThreshold,
}

/// One token with its part-of-speech tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub form: String,
    pub tag: String,
}

impl TaggedToken {
    pub fn new(form: impl Into<String>, tag: impl Into<String>) -> Self {
        TaggedToken {
            form: form.into(),
            tag: tag.into(),
        }
    }
}

/// A sentence of (form, tag) pairs. `boundary_augmented` records whether
/// start/end markers have been added.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<TaggedToken>,
    pub boundary_augmented: bool,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<TaggedToken>) -> Self {
        TaggedSentence {
            tokens,
            boundary_augmented: false,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Copy with `start_count` leading `<s>` markers and one trailing `</s>`.
    /// Markers carry themselves as both form and tag. Augmenting an already
    /// augmented sentence is an error in the caller's logic, so it panics.
    pub fn augmented(&self, start_count: usize) -> TaggedSentence {
        assert!(
            !self.boundary_augmented,
            "sentence is already boundary-augmented"
        );
        let mut tokens = Vec::with_capacity(self.tokens.len() + start_count + 1);
        for _ in 0..start_count {
            tokens.push(TaggedToken::new(SENT_START, SENT_START));
        }
        tokens.extend(self.tokens.iter().cloned());
        tokens.push(TaggedToken::new(SENT_END, SENT_END));
        TaggedSentence {
            tokens,
            boundary_augmented: true,
        }
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn tags(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.tag.as_str()).collect()
    }
}

/// Read a tagged corpus file. No boundary markers are added.
pub fn read_tagged_corpus(path: impl AsRef<Path>) -> Result<Vec<TaggedSentence>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_tagged_corpus_str(&text)
}

/// Read a tagged corpus from a string (`token<TAB>tag` lines, blank-line
/// sentence separators).
pub fn read_tagged_corpus_str(text: &str) -> Result<Vec<TaggedSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut current: Vec<TaggedToken> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(TaggedSentence::new(std::mem::take(&mut current)));
            }
            continue;
        }
        let mut parts = line.split('\t');
        let form = parts.next().unwrap_or("");
        let tag = parts.next().ok_or_else(|| CorpusError::Format {
            line: lineno,
            msg: format!("expected `token<TAB>tag`, got {line:?}"),
        })?;
        if parts.next().is_some() {
            return Err(CorpusError::Format {
                line: lineno,
                msg: format!("expected exactly two tab-separated columns, got {line:?}"),
            });
        }
        if form.is_empty() || tag.is_empty() {
            return Err(CorpusError::Format {
                line: lineno,
                msg: "empty token or tag".into(),
            });
        }
        if form.contains(char::is_whitespace) || tag.contains(char::is_whitespace) {
            return Err(CorpusError::Format {
                line: lineno,
                msg: format!("token or tag contains whitespace: {line:?}"),
            });
        }
        current.push(TaggedToken::new(form, tag));
    }
    if !current.is_empty() {
        sentences.push(TaggedSentence::new(current));
    }
    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(sentences)
}

/// Write a corpus in the same format `read_tagged_corpus` accepts.
pub fn write_tagged_corpus(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for (i, sent) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for tok in &sent.tokens {
            out.push_str(&tok.form);
            out.push('\t');
            out.push_str(&tok.tag);
            out.push('\n');
        }
    }
    out
}

/// A constituency tree. Leaves carry surface forms; internal nodes carry
/// category labels and ordered children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tree {
    Internal { label: String, children: Vec<Tree> },
    Leaf { form: String },
}

impl Tree {
    pub fn internal(label: impl Into<String>, children: Vec<Tree>) -> Self {
        Tree::Internal {
            label: label.into(),
            children,
        }
    }

    pub fn leaf(form: impl Into<String>) -> Self {
        Tree::Leaf { form: form.into() }
    }

    pub fn label(&self) -> &str {
        match self {
            Tree::Internal { label, .. } => label,
            Tree::Leaf { form } => form,
        }
    }

    /// Leaf forms left to right.
    pub fn yield_forms(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_yield(&mut out);
        out
    }

    fn collect_yield<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Tree::Leaf { form } => out.push(form),
            Tree::Internal { children, .. } => {
                for c in children {
                    c.collect_yield(out);
                }
            }
        }
    }

    /// Labels of the nodes immediately dominating each leaf, left to right.
    pub fn preterminals(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_preterminals(&mut out);
        out
    }

    fn collect_preterminals<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Tree::Leaf { .. } => {}
            Tree::Internal { label, children } => {
                if children.len() == 1 {
                    if let Tree::Leaf { .. } = children[0] {
                        out.push(label);
                        return;
                    }
                }
                for c in children {
                    c.collect_preterminals(out);
                }
            }
        }
    }

    /// Part-of-speech tags per leaf: the top of the maximal chain of
    /// single-child nodes above each preterminal whose labels are all in
    /// `lexical_only` (categories that only ever yield a single word).
    ///
    /// This projects lexeme classes shared between several parts of speech
    /// (a category `X` with a unit rule `POS -> X`) up to the categorial
    /// level, while leaving phrasal unit rules like `NP -> PN` alone.
    pub fn pos_tags(&self, lexical_only: &HashSet<String>) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_pos_tags(lexical_only, None, &mut out);
        out
    }

    fn collect_pos_tags(
        &self,
        lexical_only: &HashSet<String>,
        parent_chain_top: Option<&str>,
        out: &mut Vec<String>,
    ) {
        match self {
            Tree::Leaf { .. } => {}
            Tree::Internal { label, children } => {
                if children.len() == 1 {
                    match &children[0] {
                        Tree::Leaf { .. } => {
                            // Preterminal: the chain top recorded on the way
                            // down wins if the chain stayed lexical-only.
                            let tag = parent_chain_top.unwrap_or(label);
                            out.push(tag.to_string());
                            return;
                        }
                        child @ Tree::Internal { .. } => {
                            // Unit node: extend the chain only while this
                            // node is itself a one-word lexeme class, so
                            // phrasal unit rules like NP -> PN don't climb.
                            let top = if lexical_only.contains(label) {
                                Some(parent_chain_top.unwrap_or(label))
                            } else {
                                None
                            };
                            child.collect_pos_tags(lexical_only, top, out);
                            return;
                        }
                    }
                }
                for c in children {
                    c.collect_pos_tags(lexical_only, None, out);
                }
            }
        }
    }

    /// Bracketed notation, the same format `read_treebank` accepts.
    pub fn to_bracketed(&self) -> String {
        match self {
            Tree::Leaf { form } => form.clone(),
            Tree::Internal { label, children } => {
                let inner: Vec<String> = children.iter().map(|c| c.to_bracketed()).collect();
                format!("({} {})", label, inner.join(" "))
            }
        }
    }
}

/// A list of constituency trees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Treebank {
    pub trees: Vec<Tree>,
}

impl Treebank {
    pub fn new(trees: Vec<Tree>) -> Self {
        Treebank { trees }
    }

    /// Categories that only ever expand to a single word in this treebank:
    /// every observed expansion is either a single leaf or a single
    /// lexical-only category. Computed as a greatest fixpoint, so categories
    /// in unit cycles are excluded.
    pub fn lexical_only_labels(&self) -> HashSet<String> {
        let mut expansions: BTreeMap<String, Vec<Vec<(String, bool)>>> = BTreeMap::new();
        for tree in &self.trees {
            collect_expansions(tree, &mut expansions);
        }
        lexical_only_from_expansions(&expansions)
    }

    /// Tagged-sentence encoding of every tree, using `pos_tags`.
    pub fn to_tagged_sentences(&self) -> Vec<TaggedSentence> {
        let lex = self.lexical_only_labels();
        self.trees
            .iter()
            .map(|t| {
                let forms = t.yield_forms();
                let tags = t.pos_tags(&lex);
                debug_assert_eq!(forms.len(), tags.len());
                TaggedSentence::new(
                    forms
                        .iter()
                        .zip(tags.iter())
                        .map(|(f, g)| TaggedToken::new(*f, g.clone()))
                        .collect(),
                )
            })
            .collect()
    }

    pub fn to_bracketed(&self) -> String {
        let mut out = String::new();
        for tree in &self.trees {
            out.push_str(&tree.to_bracketed());
            out.push('\n');
        }
        out
    }
}

fn collect_expansions(tree: &Tree, out: &mut BTreeMap<String, Vec<Vec<(String, bool)>>>) {
    if let Tree::Internal { label, children } = tree {
        let rhs = children
            .iter()
            .map(|c| match c {
                Tree::Leaf { form } => (form.clone(), true),
                Tree::Internal { label, .. } => (label.clone(), false),
            })
            .collect();
        out.entry(label.clone()).or_default().push(rhs);
        for c in children {
            collect_expansions(c, out);
        }
    }
}

/// Greatest-fixpoint computation shared with the grammar side: a category is
/// lexical-only if all its expansions are a single leaf or a single
/// lexical-only category.
pub(crate) fn lexical_only_from_expansions(
    expansions: &BTreeMap<String, Vec<Vec<(String, bool)>>>,
) -> HashSet<String> {
    let mut lex: HashSet<String> = expansions.keys().cloned().collect();
    loop {
        let mut changed = false;
        for (label, rhss) in expansions {
            if !lex.contains(label) {
                continue;
            }
            let ok = rhss.iter().all(|rhs| {
                rhs.len() == 1 && (rhs[0].1 || (expansions.contains_key(&rhs[0].0) && lex.contains(&rhs[0].0)))
            });
            if !ok {
                lex.remove(label);
                changed = true;
            }
        }
        if !changed {
            return lex;
        }
    }
}

/// Read a treebank file: one bracketed tree per line.
pub fn read_treebank(path: impl AsRef<Path>) -> Result<Treebank, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_treebank_str(&text)
}

/// Read a treebank from a string.
pub fn read_treebank_str(text: &str) -> Result<Treebank, CorpusError> {
    let mut trees = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tree = parse_tree_line(line, lineno)?;
        validate_tree(&tree, lineno)?;
        trees.push(tree);
    }
    if trees.is_empty() {
        return Err(CorpusError::EmptyTreebank);
    }
    Ok(Treebank::new(trees))
}

fn parse_tree_line(line: &str, lineno: usize) -> Result<Tree, CorpusError> {
    let mut tokens = Vec::new();
    let mut atom = String::new();
    for ch in line.chars() {
        match ch {
            '(' | ')' => {
                if !atom.is_empty() {
                    tokens.push(TreeToken::Atom(std::mem::take(&mut atom)));
                }
                tokens.push(if ch == '(' {
                    TreeToken::Open
                } else {
                    TreeToken::Close
                });
            }
            c if c.is_whitespace() => {
                if !atom.is_empty() {
                    tokens.push(TreeToken::Atom(std::mem::take(&mut atom)));
                }
            }
            c => atom.push(c),
        }
    }
    if !atom.is_empty() {
        tokens.push(TreeToken::Atom(atom));
    }

    let mut pos = 0;
    let tree = parse_node(&tokens, &mut pos, lineno)?;
    if pos != tokens.len() {
        return Err(CorpusError::Format {
            line: lineno,
            msg: "trailing material after tree".into(),
        });
    }
    Ok(tree)
}

enum TreeToken {
    Open,
    Close,
    Atom(String),
}

fn parse_node(tokens: &[TreeToken], pos: &mut usize, lineno: usize) -> Result<Tree, CorpusError> {
    match tokens.get(*pos) {
        Some(TreeToken::Open) => {
            *pos += 1;
            let label = match tokens.get(*pos) {
                Some(TreeToken::Atom(a)) => {
                    *pos += 1;
                    a.clone()
                }
                _ => {
                    return Err(CorpusError::Format {
                        line: lineno,
                        msg: "empty or missing node label".into(),
                    })
                }
            };
            let mut children = Vec::new();
            loop {
                match tokens.get(*pos) {
                    Some(TreeToken::Close) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_node(tokens, pos, lineno)?),
                    None => {
                        return Err(CorpusError::Format {
                            line: lineno,
                            msg: "unbalanced parentheses: missing `)`".into(),
                        })
                    }
                }
            }
            if children.is_empty() {
                return Err(CorpusError::Format {
                    line: lineno,
                    msg: format!("node {label:?} has no children"),
                });
            }
            Ok(Tree::Internal { label, children })
        }
        Some(TreeToken::Atom(a)) => {
            *pos += 1;
            Ok(Tree::Leaf { form: a.clone() })
        }
        Some(TreeToken::Close) | None => Err(CorpusError::Format {
            line: lineno,
            msg: "unbalanced parentheses".into(),
        }),
    }
}

fn validate_tree(tree: &Tree, lineno: usize) -> Result<(), CorpusError> {
    match tree {
        Tree::Leaf { .. } => Err(CorpusError::Format {
            line: lineno,
            msg: "top-level tree must be an internal node".into(),
        }),
        Tree::Internal { .. } => validate_node(tree, lineno),
    }
}

fn validate_node(tree: &Tree, lineno: usize) -> Result<(), CorpusError> {
    if let Tree::Internal { label, children } = tree {
        let has_leaf = children.iter().any(|c| matches!(c, Tree::Leaf { .. }));
        if has_leaf && children.len() != 1 {
            return Err(CorpusError::Format {
                line: lineno,
                msg: format!("preterminal {label:?} must dominate exactly one leaf"),
            });
        }
        for c in children {
            validate_node(c, lineno)?;
        }
    }
    Ok(())
}

/// Known surface forms plus the tag inventory, with frequency-threshold
/// unknown-word mapping. Forms seen fewer than `unk_threshold` times map to
/// [`UNK`], which is never itself a known form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub known_forms: BTreeSet<String>,
    pub unk_threshold: usize,
    pub tag_inventory: BTreeSet<String>,
}

impl Vocabulary {
    /// Map a form to itself if known, otherwise to [`UNK`]. Idempotent.
    pub fn map_form<'a>(&self, form: &'a str) -> &'a str
    where
        'a: 'a,
    {
        if self.known_forms.contains(form) {
            form
        } else {
            UNK
        }
    }
}

/// Build a vocabulary from a corpus. Forms with count below `unk_threshold`
/// are excluded from the known set; the tag inventory is exactly the set of
/// observed tags.
pub fn build_vocab(
    corpus: &[TaggedSentence],
    unk_threshold: usize,
) -> Result<Vocabulary, CorpusError> {
    if unk_threshold == 0 {
        return Err(CorpusError::BadThreshold);
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut tags = BTreeSet::new();
    for sent in corpus {
        for tok in &sent.tokens {
            *counts.entry(tok.form.as_str()).or_insert(0) += 1;
            tags.insert(tok.tag.clone());
        }
    }
    let known_forms = counts
        .into_iter()
        .filter(|&(form, c)| c >= unk_threshold && form != UNK)
        .map(|(form, _)| form.to_string())
        .collect();
    Ok(Vocabulary {
        known_forms,
        unk_threshold,
        tag_inventory: tags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_corpus_single_sentence() {
        let sents = read_tagged_corpus_str("the\tDet\nbook\tN\n\n").unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].forms(), vec!["the", "book"]);
        assert_eq!(sents[0].tags(), vec!["Det", "N"]);
        assert!(!sents[0].boundary_augmented);
    }

    #[test]
    fn tagged_corpus_two_blocks() {
        let sents = read_tagged_corpus_str("a\tX\n\nb\tY\nc\tZ\n").unwrap();
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[1].forms(), vec!["b", "c"]);
    }

    #[test]
    fn tagged_corpus_space_instead_of_tab_names_line() {
        let err = read_tagged_corpus_str("the Det\n").unwrap_err();
        match err {
            CorpusError::Format { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tagged_corpus_empty_file_errors() {
        assert!(matches!(
            read_tagged_corpus_str(""),
            Err(CorpusError::EmptyCorpus)
        ));
        assert!(matches!(
            read_tagged_corpus_str("\n\n"),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn treebank_parse_and_yield() {
        let tb = read_treebank_str("(S (NP (Det the) (N book)) (VP (V reads)))\n").unwrap();
        assert_eq!(tb.trees.len(), 1);
        assert_eq!(tb.trees[0].yield_forms(), vec!["the", "book", "reads"]);
        assert_eq!(tb.trees[0].preterminals(), vec!["Det", "N", "V"]);
    }

    #[test]
    fn treebank_yield_of_length_five() {
        let tb = read_treebank_str(
            "(S (NP (Det a) (N books)) (VP (V read) (NP (Det the) (N book))))\n",
        )
        .unwrap();
        assert_eq!(tb.trees[0].yield_forms().len(), 5);
    }

    #[test]
    fn treebank_unbalanced_errors_with_line() {
        let err = read_treebank_str("(S (NP (Det the)\n").unwrap_err();
        match err {
            CorpusError::Format { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("unbalanced"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn treebank_empty_label_errors() {
        assert!(read_treebank_str("(S ( (A a)))\n").is_err());
    }

    #[test]
    fn treebank_round_trip() {
        let text = "(S (NP (Det the) (N book)) (VP (V reads)))\n(S (NP (Det a) (N books)) (VP (V read) (NP (Det the) (N book))))\n";
        let tb = read_treebank_str(text).unwrap();
        let rendered = tb.to_bracketed();
        let tb2 = read_treebank_str(&rendered).unwrap();
        assert_eq!(tb, tb2);
    }

    #[test]
    fn vocab_threshold_semantics() {
        let corpus = read_tagged_corpus_str(
            "the\tDet\nzyx\tN\n\nthe\tDet\ncat\tN\n\nthe\tDet\ncat\tN\n",
        )
        .unwrap();
        let vocab = build_vocab(&corpus, 2).unwrap();
        assert!(vocab.known_forms.contains("the"));
        assert!(vocab.known_forms.contains("cat"));
        assert!(!vocab.known_forms.contains("zyx"));
        assert_eq!(vocab.map_form("zyx"), UNK);
        assert_eq!(vocab.map_form("the"), "the");
        // idempotence
        assert_eq!(vocab.map_form(vocab.map_form("zyx")), UNK);

        let all = build_vocab(&corpus, 1).unwrap();
        assert!(all.known_forms.contains("zyx"));
        assert_eq!(all.tag_inventory.len(), 2);
    }

    #[test]
    fn unk_never_known() {
        let corpus = read_tagged_corpus_str("<unk>\tX\n<unk>\tX\n\n").unwrap();
        let vocab = build_vocab(&corpus, 1).unwrap();
        assert!(!vocab.known_forms.contains(UNK));
    }

    #[test]
    fn preterminal_sequence_matches_tagged_encoding() {
        // both VP expansions observed, so no category is a one-word class
        // except the preterminals themselves
        let text = "(S (NP (Det the) (N book)) (VP (V reads)))\n(S (NP (Det a) (N books)) (VP (V read) (NP (Det the) (N book))))\n";
        let tb = read_treebank_str(text).unwrap();
        let sents = tb.to_tagged_sentences();
        for (sent, tree) in sents.iter().zip(&tb.trees) {
            assert_eq!(sent.tags(), tree.preterminals());
            assert_eq!(sent.forms(), tree.yield_forms());
        }
    }

    #[test]
    fn pos_tags_climb_lexeme_chains_but_not_phrasal_units() {
        // DET -> FW -> her tags as DET (DET only ever yields one word),
        // while NP -> PN -> john stays PN (NP also yields two-word strings)
        // and VI stays VI (VP has a phrasal expansion).
        let text = "(S (NP (DET (FW her)) (N dog)) (VP (VI runs)))\n\
                    (S (NP (PN john)) (VP (VT sees) (NP (PN mary))))\n";
        let tb = read_treebank_str(text).unwrap();
        let lex = tb.lexical_only_labels();
        assert!(lex.contains("FW"));
        assert!(lex.contains("DET"));
        assert!(!lex.contains("NP"));
        assert!(!lex.contains("VP"));
        assert_eq!(tb.trees[0].pos_tags(&lex), vec!["DET", "N", "VI"]);
        assert_eq!(tb.trees[1].pos_tags(&lex), vec!["PN", "VT", "PN"]);
    }

    #[test]
    fn augmentation_adds_markers() {
        let sent = TaggedSentence::new(vec![TaggedToken::new("a", "X")]);
        let aug = sent.augmented(2);
        assert!(aug.boundary_augmented);
        assert_eq!(aug.forms(), vec![SENT_START, SENT_START, "a", SENT_END]);
    }
}
