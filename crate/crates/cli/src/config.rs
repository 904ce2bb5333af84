//! Pipeline configuration: a TOML file whose fields are mirrored by
//! command-line flags of the same names. Defaults reproduce the full
//! protocol: 10x10 folds, C in {0.001, 0.01, 0.1, 1, 10}, gamma in
//! {0.001, 0.01, 0.1, 1}, significance level 0.05, trigram models in
//! bits, 30 trials per stimulus class.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// tagged training corpus (`token<TAB>tag` lines)
    pub corpus: Option<PathBuf>,
    /// bracketed treebank, one tree per line
    pub treebank: Option<PathBuf>,
    /// grammar file (used as the stimulus design grammar)
    pub grammar: Option<PathBuf>,
    /// stimulus CSV
    pub stimuli: Option<PathBuf>,
    /// optional head table for lexicalized training
    pub head_table: Option<PathBuf>,
    /// output directory for models, tables, and reports
    pub out_dir: PathBuf,
    /// word n-gram order
    pub order: usize,
    /// POS n-gram order
    pub pos_order: usize,
    /// surprisal log base (2 = bits)
    pub log_base: f64,
    /// unknown-word frequency threshold
    pub unk_threshold: usize,
    /// additive smoothing constant for n-gram estimates
    pub smoothing: f64,
    /// significance level for the statistical report
    pub alpha: f64,
    /// random seed shared by generation and cross-validation
    pub seed: u64,
    /// outer and inner cross-validation folds
    pub folds: usize,
    /// misclassification-cost grid
    pub c_grid: Vec<f64>,
    /// RBF width grid
    pub gamma_grid: Vec<f64>,
    /// trials per stimulus class for the toy generator
    pub per_class: usize,
    /// sentences sampled for the toy training corpus
    pub toy_corpus_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            treebank: None,
            grammar: None,
            stimuli: None,
            head_table: None,
            out_dir: PathBuf::from("out"),
            order: 3,
            pos_order: 3,
            log_base: 2.0,
            unk_threshold: 2,
            smoothing: 0.1,
            alpha: 0.05,
            seed: 42,
            folds: 10,
            c_grid: vec![0.001, 0.01, 0.1, 1.0, 10.0],
            gamma_grid: vec![0.001, 0.01, 0.1, 1.0],
            per_class: 30,
            toy_corpus_size: 1200,
        }
    }
}

impl PipelineConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}
