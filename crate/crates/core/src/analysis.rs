//! Assembles the statistical report over a surprisal table and the
//! feature-set comparison over classifier fold accuracies.

use serde::Serialize;

use crate::cv::{TaskReport, FOLD_INDEPENDENCE_CAVEAT};
use crate::num::Real;
use crate::stats::{compare_groups, GroupComparison, StatsError};
use crate::stimuli::{Condition, PhraseType, SurprisalTable};

/// Stimulus class families mirroring how the results are displayed:
/// predictable items (three classes), unpredictable items (two classes),
/// and all five classes pooled.
pub const FAMILIES: [&str; 3] = ["predictable", "unpredictable", "all_classes"];

pub const NOTIONS: [&str; 4] = ["ngram", "lex", "pos", "syn"];
pub const POSITIONS: [&str; 2] = ["w1", "w2"];

/// One omnibus-plus-pairwise block: a family of stimulus classes compared
/// on one surprisal notion at one homograph-phrase position.
#[derive(Debug, Clone, Serialize)]
pub struct FamilySection<R> {
    pub family: String,
    pub position: String,
    pub notion: String,
    pub groups: Vec<String>,
    pub comparison: GroupComparison<R>,
}

/// The full statistics report serialized to JSON by the pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport<R> {
    pub alpha: R,
    pub sections: Vec<FamilySection<R>>,
}

impl<R: Real> AnalysisReport<R> {
    pub fn section(&self, family: &str, position: &str, notion: &str) -> Option<&FamilySection<R>> {
        self.sections
            .iter()
            .find(|s| s.family == family && s.position == position && s.notion == notion)
    }

    pub fn to_json(&self) -> String
    where
        R: Serialize,
    {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn class_name(condition: Condition, phrase_type: PhraseType) -> String {
    format!("{condition}-{phrase_type}")
}

fn family_classes(family: &str) -> Vec<(Condition, PhraseType)> {
    match family {
        "predictable" => vec![
            (Condition::StrongPred, PhraseType::Np),
            (Condition::StrongPred, PhraseType::Vp),
            (Condition::WeakPred, PhraseType::Np),
        ],
        "unpredictable" => vec![
            (Condition::Unpred, PhraseType::Np),
            (Condition::Unpred, PhraseType::Vp),
        ],
        "all_classes" => vec![
            (Condition::StrongPred, PhraseType::Np),
            (Condition::StrongPred, PhraseType::Vp),
            (Condition::WeakPred, PhraseType::Np),
            (Condition::Unpred, PhraseType::Np),
            (Condition::Unpred, PhraseType::Vp),
        ],
        other => panic!("unknown family {other}"),
    }
}

fn notion_values<R: Real>(
    table: &SurprisalTable<R>,
    class: (Condition, PhraseType),
    notion: &str,
    position: usize,
) -> Vec<R> {
    table
        .rows
        .iter()
        .filter(|r| r.condition == class.0 && r.phrase_type == class.1)
        .map(|r| match notion {
            "ngram" => r.ngram[position],
            "lex" => r.lexical[position],
            "pos" => r.pos[position],
            "syn" => r.syntactic[position],
            other => panic!("unknown notion {other}"),
        })
        .collect()
}

/// Kruskal-Wallis omnibus plus Holm-corrected Conover pairwise tests for
/// every family x position x notion with at least two represented classes.
pub fn analyze_table<R: Real>(
    table: &SurprisalTable<R>,
    alpha: R,
) -> Result<AnalysisReport<R>, StatsError> {
    let mut sections = Vec::new();
    for family in FAMILIES {
        let classes: Vec<(Condition, PhraseType)> = family_classes(family)
            .into_iter()
            .filter(|c| {
                table
                    .rows
                    .iter()
                    .any(|r| r.condition == c.0 && r.phrase_type == c.1)
            })
            .collect();
        if classes.len() < 2 {
            continue;
        }
        let names: Vec<String> = classes.iter().map(|&(c, p)| class_name(c, p)).collect();
        for (pos_idx, position) in POSITIONS.iter().enumerate() {
            for notion in NOTIONS {
                let groups: Vec<Vec<R>> = classes
                    .iter()
                    .map(|&c| notion_values(table, c, notion, pos_idx))
                    .collect();
                let comparison = compare_groups(&names, &groups, alpha)?;
                sections.push(FamilySection {
                    family: family.to_string(),
                    position: position.to_string(),
                    notion: notion.to_string(),
                    groups: names.clone(),
                    comparison,
                });
            }
        }
    }
    Ok(AnalysisReport { alpha, sections })
}

/// Per-task comparison of the five feature sets over their outer-fold
/// accuracies, following the same Conover-plus-Holm procedure. Fold
/// accuracies are not independent, so the report carries a caveat.
#[derive(Debug, Clone, Serialize)]
pub struct TaskComparison<R> {
    pub task: String,
    pub mean_accuracy: Vec<(String, R)>,
    pub chance: R,
    pub comparison: GroupComparison<R>,
    pub caveat: &'static str,
}

pub fn compare_feature_sets<R: Real>(
    reports: &[TaskReport<R>],
    alpha: R,
) -> Result<Vec<TaskComparison<R>>, StatsError> {
    let mut out = Vec::new();
    let tasks: Vec<String> = {
        let mut seen = Vec::new();
        for r in reports {
            let name = r.task.to_string();
            if !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    };
    for task in tasks {
        let cells: Vec<&TaskReport<R>> = reports
            .iter()
            .filter(|r| r.task.to_string() == task)
            .collect();
        let names: Vec<String> = cells.iter().map(|c| c.feature_set.to_string()).collect();
        let groups: Vec<Vec<R>> = cells.iter().map(|c| c.outcome.fold_accuracies()).collect();
        let comparison = compare_groups(&names, &groups, alpha)?;
        out.push(TaskComparison {
            task,
            mean_accuracy: cells
                .iter()
                .map(|c| (c.feature_set.to_string(), c.outcome.mean_accuracy()))
                .collect(),
            chance: cells[0].outcome.chance,
            comparison,
            caveat: FOLD_INDEPENDENCE_CAVEAT,
        });
    }
    Ok(out)
}
