//! Acceptance suite. One test per criterion; every tolerance is pinned in
//! the assertions. Criterion 8 (the end-to-end demo binary) lives in the
//! CLI crate's acceptance test.

mod common;

use std::time::Instant;

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surprisal_core::analysis::analyze_table;
use surprisal_core::corpus::build_vocab;
use surprisal_core::cv::{nested_cv, run_tasks, CvConfig, FeatureSet, Task};
use surprisal_core::grammar::{estimate_pcfg, parse_grammar_str, Pcfg, TOY_ENGLISH_GRAMMAR};
use surprisal_core::ngram::{train_ngram, NGramMode, NGramParams};
use surprisal_core::parser::{enumerate_trees, PrefixParser};
use surprisal_core::stats::{conover_posthoc, holm_bonferroni, kruskal_wallis, midranks};
use surprisal_core::stimuli::{
    generate_toy_stimuli, score_stimuli, Condition, PhraseType, ScoringModels, SyntaxModel,
};
use surprisal_core::svm::{svm_train, SvmParams};
use surprisal_core::toy;

/// Oracle prefix probability: a plain sum over exhaustively enumerated
/// trees. Valid when the enumeration residual is (near) zero.
fn oracle_prefix(pcfg: &Pcfg<f64>, prefix: &[String], depth: usize) -> f64 {
    enumerate_trees(pcfg, depth)
        .trees
        .iter()
        .filter(|(tree, _)| {
            let y = tree.yield_forms();
            y.len() >= prefix.len()
                && y[..prefix.len()]
                    .iter()
                    .zip(prefix)
                    .all(|(a, b)| *a == b.as_str())
        })
        .map(|(_, p)| *p)
        .sum()
}

#[test]
fn criterion_1_prefix_probability_matches_enumeration_oracle() {
    let started = Instant::now();
    // five finite-language grammars plus the uniform running example
    let grammars: Vec<(&str, usize)> = vec![
        (TOY_ENGLISH_GRAMMAR, 5),
        (
            // same shape, skewed probabilities
            "S -> NP VP\nNP -> Det N\nVP -> V NP 0.7 | V 0.3\nDet -> the 0.8 | a 0.2\n\
             N -> book 0.55 | books 0.45\nV -> read 0.1 | reads 0.9\n",
            5,
        ),
        (
            // ambiguous strings: x y z derives through two branches
            "S -> A B 0.5 | C D 0.5\nA -> x\nC -> x\nB -> y z 0.6 | y 0.4\nD -> y z 0.3 | z 0.7\n",
            4,
        ),
        (
            // acyclic unit-production chains
            "S -> A 0.6 | B b 0.4\nA -> B 0.7 | a 0.3\nB -> c\n",
            4,
        ),
        (
            // terminals mixed into phrasal rules
            "S -> a X b 0.5 | Y 0.5\nX -> c 0.6 | d e 0.4\nY -> a f\n",
            4,
        ),
        (
            "S -> P Q\nP -> p R\nR -> q 0.35 | r s 0.65\nQ -> t 0.2 | u v w 0.8\n",
            5,
        ),
    ];
    for (text, depth) in grammars {
        let (g, _) = parse_grammar_str::<f64>(text, true).unwrap();
        let full = enumerate_trees(&g, depth);
        assert!(
            full.residual < 1e-12,
            "depth {depth} does not exhaust the grammar:\n{text}"
        );
        let parser = PrefixParser::new(&g).unwrap();

        // every prefix (up to length 6) of every sentence in the language,
        // plus probes that leave the language
        let mut prefixes: Vec<Vec<String>> = vec![vec![]];
        for (tree, _) in &full.trees {
            let y = tree.yield_forms();
            for len in 1..=y.len().min(6) {
                let p: Vec<String> = y[..len].iter().map(|s| s.to_string()).collect();
                if !prefixes.contains(&p) {
                    prefixes.push(p);
                }
            }
        }
        prefixes.push(vec!["no-such-token".to_string()]);

        for prefix in &prefixes {
            let refs: Vec<&str> = prefix.iter().map(String::as_str).collect();
            let got = parser.prefix_probability(&refs);
            let want = oracle_prefix(&g, prefix, depth);
            assert!(
                (got - want).abs() <= 1e-9,
                "prefix {prefix:?}: parser {got} vs oracle {want}\n{text}"
            );
        }
    }
    assert!(
        started.elapsed().as_secs_f64() < 5.0,
        "oracle equivalence took {:?}",
        started.elapsed()
    );
}

#[test]
fn criterion_2_worked_values_on_the_running_example() {
    let (g, _) = parse_grammar_str::<f64>(TOY_ENGLISH_GRAMMAR, true).unwrap();
    let parser = PrefixParser::new(&g).unwrap();
    let total = parser
        .total_surprisal(&["the", "book", "reads"], 2.0)
        .unwrap();
    for v in &total {
        assert_relative_eq!(*v, 1.0, epsilon = 1e-9);
    }
    let split = parser
        .split_surprisal(&["the", "book", "reads"], 2.0)
        .unwrap();
    assert_relative_eq!(split.syntactic[1], 0.0, epsilon = 1e-9);
    assert_relative_eq!(split.lexical[1], 1.0, epsilon = 1e-9);
}

#[test]
fn criterion_3_decomposition_identity_on_random_grammars() {
    let mut checked_sentences = 0usize;
    let mut seed = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    while checked_sentences < 1000 {
        seed += 1;
        let g = common::random_pcfg(seed);
        let parser = PrefixParser::new(&g).unwrap();
        for _ in 0..40 {
            if checked_sentences >= 1000 {
                break;
            }
            let Ok(tree) = g.sample(&mut rng, 30) else {
                continue;
            };
            let sentence: Vec<String> =
                tree.yield_forms().iter().map(|s| s.to_string()).collect();
            if sentence.len() > 12 {
                continue;
            }
            let refs: Vec<&str> = sentence.iter().map(String::as_str).collect();
            let split = parser.split_surprisal(&refs, 2.0).unwrap();
            for i in 0..refs.len() {
                assert!(
                    (split.total[i] - (split.syntactic[i] + split.lexical[i])).abs() <= 1e-6,
                    "identity failed at word {i} of {sentence:?} (grammar seed {seed})"
                );
                assert!(split.syntactic[i] >= -1e-9);
                assert!(split.lexical[i] >= -1e-9);
            }
            checked_sentences += 1;
        }
    }
}

#[test]
fn criterion_4_ngram_count_ratios_and_normalization() {
    let corpus = surprisal_core::corpus::read_tagged_corpus_str(
        "the\tD\ncat\tN\nsat\tV\n\nthe\tD\ncat\tN\nran\tV\n\nthe\tD\ndog\tN\nsat\tV\n",
    )
    .unwrap();
    let vocab = build_vocab(&corpus, 1).unwrap();

    // pure maximum likelihood reproduces the count ratio exactly
    let mle = train_ngram::<f64>(&corpus, 2, NGramMode::Word, &vocab, NGramParams::pure_mle(2))
        .unwrap();
    assert_eq!(mle.prob(&["the"], "cat").unwrap(), 2.0 / 3.0);

    // the composite model normalizes over the inventory for random contexts
    let composite =
        train_ngram::<f64>(&corpus, 3, NGramMode::Word, &vocab, NGramParams::default()).unwrap();
    let units: Vec<&str> = composite.inventory().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let pick = |rng: &mut ChaCha8Rng| -> &str {
            match rng.gen_range(0..8) {
                0 => "<s>",
                1 => "unseen-word",
                k => units[k % units.len()],
            }
        };
        let ctx = [pick(&mut rng), pick(&mut rng)];
        let total: f64 = units.iter().map(|u| composite.prob(&ctx, u).unwrap()).sum();
        assert!(
            (total - 1.0).abs() <= 1e-9,
            "context {ctx:?} sums to {total}"
        );
    }
}

/// Permutation oracle for one Conover pair: group assignments of the
/// pooled ranks are reshuffled and the studentized statistic recomputed.
fn permutation_conover_p(groups: &[Vec<f64>], a: usize, b: usize, iters: usize, seed: u64) -> f64 {
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let k = sizes.len();
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len();
    let nf = n as f64;
    let ranks = midranks(&pooled);

    // tie structure, rank variance, and the chi-square normalizer are all
    // permutation-invariant
    let mean_rank = (nf + 1.0) / 2.0;
    let s2: f64 =
        (ranks.iter().map(|r| r * r).sum::<f64>() - nf * mean_rank * mean_rank) / (nf - 1.0);
    let mut sorted = pooled.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - tie_sum / (nf * nf * nf - nf);

    let stat = |ranks: &[f64]| -> f64 {
        let mut offset = 0;
        let mut mean_ranks = Vec::with_capacity(k);
        let mut h = 0.0;
        for &size in &sizes {
            let sum: f64 = ranks[offset..offset + size].iter().sum();
            let ni = size as f64;
            h += sum * sum / ni;
            mean_ranks.push(sum / ni);
            offset += size;
        }
        h = (12.0 / (nf * (nf + 1.0)) * h - 3.0 * (nf + 1.0)) / correction;
        let factor = s2 * (nf - 1.0 - h) / (nf - k as f64);
        let inv = 1.0 / sizes[a] as f64 + 1.0 / sizes[b] as f64;
        if factor <= 0.0 {
            return f64::INFINITY;
        }
        (mean_ranks[a] - mean_ranks[b]).abs() / (factor * inv).sqrt()
    };

    let observed = stat(&ranks);
    let mut shuffled = ranks;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..iters {
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        if stat(&shuffled) >= observed {
            hits += 1;
        }
    }
    hits as f64 / iters as f64
}

#[test]
fn criterion_5_statistics() {
    // Kruskal-Wallis on the hand-ranked example
    let groups = vec![
        vec![1.0, 2.0, 3.0],
        vec![4.0, 5.0, 6.0],
        vec![7.0, 8.0, 9.0],
    ];
    let kw: surprisal_core::stats::TestResult<f64> = kruskal_wallis(&groups).unwrap();
    assert_relative_eq!(kw.statistic, 7.2, epsilon = 1e-12);
    assert!((kw.p_value - 0.0273).abs() <= 1e-3);

    // Conover raw p-values against a 100k-draw permutation oracle on 20
    // seeded datasets
    for dataset in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + dataset);
        let shift = 0.2 + 0.4 * rng.gen::<f64>();
        let groups: Vec<Vec<f64>> = (0..3)
            .map(|g| {
                (0..14)
                    .map(|_| rng.gen::<f64>() + shift * g as f64)
                    .collect()
            })
            .collect();
        let pw = conover_posthoc(&groups).unwrap();
        for entry in &pw {
            let perm = permutation_conover_p(
                &groups,
                entry.group_a,
                entry.group_b,
                100_000,
                99 + dataset,
            );
            assert!(
                (entry.p_value - perm).abs() < 0.01,
                "dataset {dataset} pair ({}, {}): t-based {} vs permutation {}",
                entry.group_a,
                entry.group_b,
                entry.p_value,
                perm
            );
        }
    }

    // Holm adjusted p-values match the closed-form step-down definition
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let m = rng.gen_range(1..=8);
        let ps: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let entries = holm_bonferroni(&ps, 0.05).unwrap();
        // independent reference computation
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| ps[a].partial_cmp(&ps[b]).unwrap());
        let mut running = 0.0f64;
        let mut rejecting = true;
        for (rank, &idx) in order.iter().enumerate() {
            let mult = (m - rank) as f64;
            running = running.max((mult * ps[idx]).min(1.0));
            assert_eq!(entries[idx].adjusted_p, running);
            let reject = rejecting && ps[idx] <= 0.05 / mult;
            if !reject {
                rejecting = false;
            }
            assert_eq!(entries[idx].reject, reject);
        }
    }
}

#[test]
fn criterion_6_svm_oracle_blobs_shuffle_and_runtime() {
    // dual objectives on 4-8 point problems match the projected-gradient
    // oracle within 1e-4 relative
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..20 {
        let n = rng.gen_range(4..=8);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0])
            .collect();
        let mut y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        let c = [0.5, 1.0, 10.0][case % 3];
        let gamma = [0.5, 1.0][case % 2];
        // hold the feature space fixed: the oracle sees raw coordinates
        let std_id = surprisal_core::svm::Standardizer {
            means: vec![0.0, 0.0],
            stds: vec![1.0, 1.0],
        };
        let model = surprisal_core::svm::svm_train_with_standardizer(
            &x,
            &y,
            SvmParams {
                c,
                gamma,
                tol: 1e-6,
                max_iter: 200_000,
            },
            std_id,
        )
        .unwrap();
        let oracle = common::dual_oracle(&x, &y, c, gamma, 200_000);
        let rel = (model.dual_objective - oracle).abs() / oracle.abs().max(1e-12);
        assert!(
            rel <= 1e-4,
            "case {case}: SMO {} vs oracle {} (rel {rel})",
            model.dual_objective,
            oracle
        );
    }

    // nested CV on two well-separated Gaussian-ish blobs: every fold at 1.0
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut gauss = move || {
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(1e-12);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut x: Vec<Vec<f64>> = (0..60).map(|_| vec![gauss(), gauss()]).collect();
    x.extend((0..60).map(|_| vec![10.0 + gauss(), 10.0 + gauss()]));
    let mut y = vec![false; 60];
    y.extend(vec![true; 60]);

    let config = CvConfig::<f64>::default();
    let started = Instant::now();
    let outcome = nested_cv(&x, &y, &config).unwrap();
    for fold in &outcome.folds {
        assert_eq!(fold.accuracy, 1.0, "fold {} under 1.0", fold.fold);
    }
    assert_eq!(outcome.folds.len(), 10);

    // label shuffle: accuracy falls in the central 95% binomial band
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut shuffled = y.clone();
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let null_outcome = nested_cv(&x, &shuffled, &config).unwrap();
    let mean = null_outcome.mean_accuracy();
    let half_width = 1.96 * (0.25f64 / 120.0).sqrt();
    assert!(
        (mean - 0.5).abs() <= half_width,
        "label-shuffled mean accuracy {mean} outside +/-{half_width}"
    );

    // full protocol on a 150x8 feature matrix under 60 seconds
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x8: Vec<Vec<f64>> = (0..150)
        .map(|i| {
            (0..8)
                .map(|_| rng.gen::<f64>() + if i % 2 == 0 { 0.4 } else { 0.0 })
                .collect()
        })
        .collect();
    let y8: Vec<bool> = (0..150).map(|i| i % 2 == 0).collect();
    let full_start = Instant::now();
    nested_cv(&x8, &y8, &config).unwrap();
    let elapsed = full_start.elapsed();
    assert!(
        elapsed.as_secs_f64() + started.elapsed().as_secs_f64() * 0.0 < 60.0,
        "full protocol took {elapsed:?}"
    );
}

/// Builds the whole toy pipeline in process: corpus, models, stimuli, and
/// the scored feature table.
fn toy_pipeline() -> (
    surprisal_core::SurprisalTable,
    surprisal_core::AnalysisReport,
    Vec<surprisal_core::cv::TaskReport<f64>>,
) {
    let design: Pcfg<f64> = toy::design_grammar().unwrap();
    let treebank = toy::sample_treebank(&design, 1200, 42);
    let corpus = toy::tagged_corpus(&design, &treebank);
    let vocab = build_vocab(&corpus, 2).unwrap();
    let word =
        train_ngram::<f64>(&corpus, 3, NGramMode::Word, &vocab, NGramParams::default()).unwrap();
    let pos =
        train_ngram::<f64>(&corpus, 3, NGramMode::Pos, &vocab, NGramParams::default()).unwrap();
    let pcfg: Pcfg<f64> = estimate_pcfg(&treebank).unwrap();

    let trials = generate_toy_stimuli(&design, 30, 42).unwrap();
    assert_eq!(trials.len(), 150);

    let models = ScoringModels {
        word_ngram: &word,
        pos_ngram: &pos,
        syntax: SyntaxModel::Plain(&pcfg),
    };
    let table = score_stimuli(&trials, &models, 2.0).unwrap();
    let report = analyze_table(&table, 0.05).unwrap();
    let cv = CvConfig::<f64>::default();
    let reports = run_tasks(&table, &cv).unwrap();
    (table, report, reports)
}

#[test]
fn criterion_7_toy_replication() {
    let (table, report, reports) = toy_pipeline();

    // (a) syntactic surprisal separates the three predictability classes
    // at the first homograph word, Holm-adjusted p below 0.05 on all pairs
    let syn = report.section("predictable", "w1", "syn").unwrap();
    assert_eq!(syn.comparison.pairwise.len(), 3);
    for pair in &syn.comparison.pairwise {
        assert!(
            pair.adjusted_p < 0.05 && pair.reject,
            "pair {} vs {}: adjusted p {}",
            pair.group_a,
            pair.group_b,
            pair.adjusted_p
        );
    }

    // (b) word n-gram surprisal is identical across UNPRED NP/VP pairs at
    // both homograph positions, by construction
    let np_rows: Vec<_> = table
        .rows
        .iter()
        .filter(|r| r.condition == Condition::Unpred && r.phrase_type == PhraseType::Np)
        .collect();
    let vp_rows: Vec<_> = table
        .rows
        .iter()
        .filter(|r| r.condition == Condition::Unpred && r.phrase_type == PhraseType::Vp)
        .collect();
    assert_eq!(np_rows.len(), 30);
    assert_eq!(np_rows.len(), vp_rows.len());
    for (np, vp) in np_rows.iter().zip(&vp_rows) {
        assert_eq!(np.ngram, vp.ngram, "{} vs {}", np.trial_id, vp.trial_id);
    }
    let unpred_ngram = report.section("unpredictable", "w1", "ngram").unwrap();
    assert_eq!(unpred_ngram.comparison.pairwise[0].raw_p, 1.0);

    // (c) decoding: POS, syntactic, and all-feature models reach 0.95 mean
    // accuracy on tasks (i), (ii), (iv); word n-gram and lexical models
    // score significantly lower
    for task in [
        Task::StrongNounVsVerb,
        Task::PredictableNounVsVerb,
        Task::PredictableVsUnpredictable,
    ] {
        let mean = |set: FeatureSet| -> f64 {
            reports
                .iter()
                .find(|r| r.task == task && r.feature_set == set)
                .unwrap()
                .outcome
                .mean_accuracy()
        };
        for set in [FeatureSet::Pos, FeatureSet::Syntactic, FeatureSet::Tot] {
            assert!(
                mean(set) >= 0.95,
                "{task} {set}: mean accuracy {}",
                mean(set)
            );
        }
        let strong_floor = [FeatureSet::Pos, FeatureSet::Syntactic, FeatureSet::Tot]
            .iter()
            .map(|&s| mean(s))
            .fold(f64::INFINITY, f64::min);
        // significance over fold accuracies, the protocol's own comparison
        let comparisons =
            surprisal_core::analysis::compare_feature_sets(&reports, 0.05).unwrap();
        let comparison = comparisons
            .iter()
            .find(|c| c.task == task.to_string())
            .unwrap();
        for weak in [FeatureSet::NGram, FeatureSet::Lexical] {
            assert!(
                mean(weak) < strong_floor,
                "{task} {weak}: mean {} not below {strong_floor}",
                mean(weak)
            );
            for strong in [FeatureSet::Pos, FeatureSet::Syntactic, FeatureSet::Tot] {
                let pair = comparison
                    .comparison
                    .pairwise
                    .iter()
                    .find(|p| {
                        (p.group_a == weak.to_string() && p.group_b == strong.to_string())
                            || (p.group_a == strong.to_string()
                                && p.group_b == weak.to_string())
                    })
                    .unwrap();
                assert!(
                    pair.adjusted_p < 0.05,
                    "{task}: {weak} vs {strong} adjusted p {}",
                    pair.adjusted_p
                );
            }
        }
    }
}
