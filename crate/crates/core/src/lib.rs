//! A desk-scale laboratory for word surprisal: composite n-gram and POS
//! n-gram models, exact PCFG prefix probabilities with the
//! structural/lexical surprisal split, rank-based statistics, and
//! RBF-SVM decoding over homograph-phrase stimulus designs.
//!
//! All numeric code is generic over the scalar type through [`num::Real`];
//! the aliases below fix the common double-precision instantiation.

pub mod analysis;
pub mod corpus;
pub mod cv;
pub mod dist;
pub mod grammar;
pub mod linalg;
pub mod ngram;
pub mod num;
pub mod parser;
pub mod stats;
pub mod stimuli;
pub mod surprisal;
pub mod svm;
pub mod toy;

/// Double-precision instantiations of the generic types.
pub type Pcfg = grammar::Pcfg<f64>;
pub type LexicalizedPcfg = grammar::LexicalizedPcfg<f64>;
pub type NGramModel = ngram::NGramModel<f64>;
pub type NGramParams = ngram::NGramParams<f64>;
pub type PrefixParser<'g> = parser::PrefixParser<'g, f64>;
pub type SurprisalBreakdown = parser::SurprisalBreakdown<f64>;
pub type SurprisalTable = stimuli::SurprisalTable<f64>;
pub type SvmModel = svm::SvmModel<f64>;
pub type SvmParams = svm::SvmParams<f64>;
pub type CvConfig = cv::CvConfig<f64>;
pub type AnalysisReport = analysis::AnalysisReport<f64>;
