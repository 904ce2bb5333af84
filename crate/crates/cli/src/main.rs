//! `surprisal-lab`: train surprisal models, generate homograph-phrase
//! stimuli, score them with four surprisal notions, run the rank-based
//! statistics, and decode stimulus classes with nested-CV SVMs.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use config::PipelineConfig;
use surprisal_core::analysis::{analyze_table, compare_feature_sets};
use surprisal_core::corpus::{build_vocab, read_tagged_corpus, read_treebank, write_tagged_corpus};
use surprisal_core::cv::{reports_to_csv, run_tasks, CvConfig, TaskReport};
use surprisal_core::grammar::{
    estimate_pcfg, lexicalize, parse_grammar_file, validate, HeadTable, Pcfg,
};
use surprisal_core::ngram::{train_ngram, NGramMode, NGramModel, NGramParams};
use surprisal_core::stimuli::{
    class_counts, generate_toy_stimuli, load_stimuli, score_stimuli, stimuli_to_csv,
    ScoringModels, SurprisalTable, SyntaxModel,
};
use surprisal_core::toy;

#[derive(Parser)]
#[command(
    name = "surprisal-lab",
    version,
    about = "Word-surprisal laboratory: n-gram, POS, lexical, and syntactic surprisal over homograph-phrase stimuli"
)]
struct Cli {
    /// TOML configuration file; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    treebank: Option<PathBuf>,
    #[arg(long, global = true)]
    grammar: Option<PathBuf>,
    #[arg(long, global = true)]
    stimuli: Option<PathBuf>,
    #[arg(long, global = true)]
    head_table: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// word n-gram order
    #[arg(long, global = true)]
    order: Option<usize>,
    /// POS n-gram order
    #[arg(long, global = true)]
    pos_order: Option<usize>,
    /// surprisal log base (2 = bits)
    #[arg(long, global = true)]
    log_base: Option<f64>,
    #[arg(long, global = true)]
    unk_threshold: Option<usize>,
    /// n-gram additive smoothing constant
    #[arg(long, global = true)]
    smoothing: Option<f64>,
    /// significance level
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// stimulus trials per class
    #[arg(long, global = true)]
    per_class: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the word n-gram, POS n-gram, PCFG, and lexicalized PCFG
    Train,
    /// Generate the toy stimulus design from a design grammar
    GenStimuli,
    /// Score stimuli and run the statistical report
    Analyze,
    /// Run the four decoding tasks over the surprisal table
    Classify,
    /// Full toy replication: synthesize inputs, train, generate, analyze,
    /// classify, and summarize
    Demo,
}

/// Exit code 1: bad input. Exit code 2: internal failure.
enum Failure {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

trait IntoFailure<T> {
    fn user(self) -> Result<T, Failure>;
    fn internal(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> IntoFailure<T> for Result<T, E> {
    fn user(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::User(e.into()))
    }
    fn internal(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Internal(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli)));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::User(e))) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Internal(e))) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
        Err(_) => {
            eprintln!("internal error: panic");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .user()?;
            PipelineConfig::from_toml(&text)
                .with_context(|| format!("config {}", path.display()))
                .user()?
        }
        None => PipelineConfig::default(),
    };
    apply_overrides(&mut cfg, &cli);

    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create {}", cfg.out_dir.display()))
        .user()?;

    match cli.command {
        Command::Train => cmd_train(&cfg).map(|_| ()),
        Command::GenStimuli => cmd_gen_stimuli(&cfg),
        Command::Analyze => cmd_analyze(&cfg).map(|_| ()),
        Command::Classify => cmd_classify(&cfg).map(|_| ()),
        Command::Demo => cmd_demo(&cfg),
    }
}

fn apply_overrides(cfg: &mut PipelineConfig, cli: &Cli) {
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = &cli.$field {
                cfg.$field = Some(v.clone());
            }
        };
        ($field:ident, direct) => {
            if let Some(v) = cli.$field.clone() {
                cfg.$field = v;
            }
        };
    }
    set!(corpus);
    set!(treebank);
    set!(grammar);
    set!(stimuli);
    set!(head_table);
    set!(out_dir, direct);
    set!(order, direct);
    set!(pos_order, direct);
    set!(log_base, direct);
    set!(unk_threshold, direct);
    set!(smoothing, direct);
    set!(alpha, direct);
    set!(seed, direct);
    set!(folds, direct);
    set!(per_class, direct);
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref()
        .ok_or_else(|| anyhow!("no {what} given; set `{flag}` in the config or pass --{flag}"))
        .user()
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .internal()?;
    Ok(path)
}

struct TrainedModels {
    word: NGramModel<f64>,
    pos: NGramModel<f64>,
    pcfg: Pcfg<f64>,
}

fn cmd_train(cfg: &PipelineConfig) -> Result<TrainedModels, Failure> {
    let corpus_path = require(&cfg.corpus, "tagged corpus", "corpus")?;
    let treebank_path = require(&cfg.treebank, "treebank", "treebank")?;
    let corpus = read_tagged_corpus(corpus_path).user()?;
    let treebank = read_treebank(treebank_path).user()?;
    let vocab = build_vocab(&corpus, cfg.unk_threshold).user()?;

    let params = || NGramParams::<f64> {
        lambdas: None,
        alpha: cfg.smoothing,
    };
    let word = train_ngram(&corpus, cfg.order, NGramMode::Word, &vocab, params()).user()?;
    let pos = train_ngram(&corpus, cfg.pos_order, NGramMode::Pos, &vocab, params()).user()?;

    let pcfg: Pcfg<f64> = estimate_pcfg(&treebank).user()?;
    let diag = validate(&pcfg);
    println!("pcfg: {} rules; {}", pcfg.rules().len(), diag.summary());

    let heads = match &cfg.head_table {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read head table {}", path.display()))
                .user()?;
            HeadTable::parse(&text).user()?
        }
        None => HeadTable::new(),
    };
    let (lex, fallback) = lexicalize::<f64>(&treebank, &heads).user()?;
    if !fallback.is_empty() {
        println!(
            "lexicalization used the rightmost-child fallback for: {}",
            fallback.join(", ")
        );
    }

    write_out(&cfg.out_dir, "word_ngram.json", &word.to_json())?;
    write_out(&cfg.out_dir, "pos_ngram.json", &pos.to_json())?;
    write_out(&cfg.out_dir, "pcfg.gr", &pcfg.to_grammar_text())?;
    write_out(&cfg.out_dir, "lexicalized.json", &lex.to_json())?;
    println!(
        "trained: word {}-gram ({} units), POS {}-gram ({} tags), PCFG ({} rules), lexicalized PCFG ({} rules)",
        cfg.order,
        word.vocab_size(),
        cfg.pos_order,
        pos.vocab_size(),
        pcfg.rules().len(),
        lex.as_pcfg().rules().len()
    );
    Ok(TrainedModels { word, pos, pcfg })
}

fn cmd_gen_stimuli(cfg: &PipelineConfig) -> Result<(), Failure> {
    let grammar_path = require(&cfg.grammar, "design grammar", "grammar")?;
    let (design, diag) = parse_grammar_file::<f64>(grammar_path, false).user()?;
    if !diag.is_clean() {
        println!("design grammar diagnostics: {}", diag.summary());
    }
    let trials = generate_toy_stimuli(&design, cfg.per_class, cfg.seed).user()?;
    write_out(&cfg.out_dir, "stimuli.csv", &stimuli_to_csv(&trials))?;
    println!("generated {} trials:", trials.len());
    for ((condition, phrase_type), n) in class_counts(&trials) {
        println!("  {condition}-{phrase_type}: {n}");
    }
    Ok(())
}

fn load_models(cfg: &PipelineConfig) -> Result<TrainedModels, Failure> {
    let read = |name: &str| -> Result<String, Failure> {
        let path = cfg.out_dir.join(name);
        fs::read_to_string(&path)
            .with_context(|| format!("cannot read model {}; run `train` first", path.display()))
            .user()
    };
    let word = NGramModel::from_json(&read("word_ngram.json")?).user()?;
    let pos = NGramModel::from_json(&read("pos_ngram.json")?).user()?;
    let (pcfg, _) = parse_grammar_file::<f64>(cfg.out_dir.join("pcfg.gr"), false).user()?;
    Ok(TrainedModels { word, pos, pcfg })
}

fn cmd_analyze(cfg: &PipelineConfig) -> Result<SurprisalTable<f64>, Failure> {
    let models = load_models(cfg)?;
    let stimuli_path = cfg
        .stimuli
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("stimuli.csv"));
    let trials = load_stimuli(&stimuli_path).user()?;
    println!("scoring {} trials from {}", trials.len(), stimuli_path.display());

    let scoring = ScoringModels {
        word_ngram: &models.word,
        pos_ngram: &models.pos,
        syntax: SyntaxModel::Plain(&models.pcfg),
    };
    let table = score_stimuli(&trials, &scoring, cfg.log_base).user()?;
    write_out(&cfg.out_dir, "surprisal_table.csv", &table.to_csv())?;
    write_out(&cfg.out_dir, "surprisal_long.csv", &table.to_long_csv())?;

    let report = analyze_table(&table, cfg.alpha).internal()?;
    write_out(&cfg.out_dir, "stats.json", &report.to_json())?;
    println!(
        "wrote surprisal_table.csv, surprisal_long.csv, stats.json ({} sections)",
        report.sections.len()
    );
    Ok(table)
}

fn cmd_classify(cfg: &PipelineConfig) -> Result<Vec<TaskReport<f64>>, Failure> {
    let table_path = cfg.out_dir.join("surprisal_table.csv");
    let text = fs::read_to_string(&table_path)
        .with_context(|| format!("cannot read {}; run `analyze` first", table_path.display()))
        .user()?;
    let table = SurprisalTable::from_csv(&text).user()?;

    let cv = CvConfig {
        folds: cfg.folds,
        c_grid: cfg.c_grid.clone(),
        gamma_grid: cfg.gamma_grid.clone(),
        tol: 1e-3,
        seed: cfg.seed,
    };
    let reports = run_tasks(&table, &cv).map_err(|e| match e {
        surprisal_core::cv::CvError::Svm(_) => Failure::Internal(e.into()),
        other => Failure::User(other.into()),
    })?;
    write_out(&cfg.out_dir, "classification.csv", &reports_to_csv(&reports))?;

    let summary = compare_feature_sets(&reports, cfg.alpha).internal()?;
    write_out(
        &cfg.out_dir,
        "classification_summary.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    for task in &summary {
        println!("task {} (chance {:.3}):", task.task, task.chance);
        for (set, acc) in &task.mean_accuracy {
            println!("  {set:>5}: mean accuracy {acc:.3}");
        }
    }
    Ok(reports)
}

fn cmd_demo(cfg: &PipelineConfig) -> Result<(), Failure> {
    let out = cfg.out_dir.clone();
    println!("demo: synthesizing toy inputs in {}", out.display());

    // bundled design grammar plus a corpus sampled from it
    let grammar_path = write_out(&out, "design_grammar.gr", toy::DESIGN_GRAMMAR)?;
    let design: Pcfg<f64> = toy::design_grammar().internal()?;
    let treebank = toy::sample_treebank(&design, cfg.toy_corpus_size, cfg.seed);
    let corpus = toy::tagged_corpus(&design, &treebank);
    let treebank_path = write_out(&out, "treebank.txt", &treebank.to_bracketed())?;
    let corpus_path = write_out(&out, "corpus.tsv", &write_tagged_corpus(&corpus))?;

    let mut head_text = String::new();
    for (cat, prefs) in toy::default_head_table().entries() {
        head_text.push_str(&format!("{cat} {}\n", prefs.join(" ")));
    }
    let head_path = write_out(&out, "head_table.txt", &head_text)?;

    let mut demo_cfg = cfg.clone();
    demo_cfg.corpus = Some(corpus_path);
    demo_cfg.treebank = Some(treebank_path);
    demo_cfg.grammar = Some(grammar_path);
    demo_cfg.head_table = Some(head_path);
    demo_cfg.stimuli = None;
    // the effective configuration, for reproducing any stage by hand
    write_out(&out, "demo_config.toml", &demo_cfg.to_toml())?;

    cmd_train(&demo_cfg)?;
    cmd_gen_stimuli(&demo_cfg)?;
    let table = cmd_analyze(&demo_cfg)?;
    let reports = cmd_classify(&demo_cfg)?;

    let summary = demo_summary(&demo_cfg, &table, &reports)?;
    write_out(&out, "demo_summary.txt", &summary)?;
    println!("\n{summary}");
    Ok(())
}

/// Human-readable summary of which surprisal notions separated which
/// stimulus classes.
fn demo_summary(
    cfg: &PipelineConfig,
    table: &SurprisalTable<f64>,
    reports: &[TaskReport<f64>],
) -> Result<String, Failure> {
    let stats = analyze_table(table, cfg.alpha).internal()?;
    let mut lines = Vec::new();
    lines.push("== toy replication summary ==".to_string());

    for notion in ["syn", "pos", "ngram", "lex"] {
        if let Some(section) = stats.section("predictable", "w1", notion) {
            let rejected = section.comparison.pairwise.iter().filter(|p| p.reject).count();
            let total = section.comparison.pairwise.len();
            let verdict = if rejected == total {
                "separates all three predictability classes".to_string()
            } else {
                format!("separates {rejected} of {total} class pairs")
            };
            lines.push(format!(
                "{notion:>5} surprisal at the first homograph word: {verdict}"
            ));
        }
    }

    if let Some(section) = stats.section("unpredictable", "w1", "ngram") {
        let p = section.comparison.pairwise[0].raw_p;
        if p >= 0.999 {
            lines.push(
                "word n-gram surprisal shows no NP vs VP difference at the homograph \
                 phrase for unpredictable items (identical left contexts)"
                    .to_string(),
            );
        } else {
            lines.push(format!(
                "word n-gram surprisal differs across unpredictable NP vs VP (p = {p:.4})"
            ));
        }
    }

    lines.push(String::new());
    lines.push("decoding accuracy (mean over outer folds; chance in brackets):".to_string());
    for task in surprisal_core::cv::Task::ALL {
        let mut cells: Vec<String> = Vec::new();
        let mut chance = 0.0;
        for report in reports.iter().filter(|r| r.task == task) {
            chance = report.outcome.chance;
            cells.push(format!(
                "{}={:.2}",
                report.feature_set,
                report.outcome.mean_accuracy()
            ));
        }
        lines.push(format!("  {task} [{chance:.2}]: {}", cells.join(" ")));
    }
    Ok(lines.join("\n"))
}
