//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration problems, 2 bad
//! input data or files, 3 numerical failures. Every output file is
//! written atomically after its inputs parsed, so a failing run never
//! leaves a partial file behind.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config;
use crate::deptree::{extract_sdp, parse_sdpc, to_sdpc, DepSentence};
use crate::evaluation::score;
use crate::label::{Label, NUM_LABELS};
use crate::model::{forward, load_checkpoint, HyperConfig, Mode};
use crate::synth::generate_split;
use crate::training::{grad_check, samples_of, train, TrainIo};
use crate::{write_atomic, Error, Result};

#[derive(Parser)]
#[command(name = "sdplstm", version, about = "Relation classification over shortest dependency paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print each sentence's entity-to-entity dependency path
    ExtractSdp(ExtractArgs),
    /// Train a classifier and keep the best checkpoint
    Train(TrainArgs),
    /// Label sentences with a trained checkpoint
    Predict(PredictArgs),
    /// Score predicted labels against gold labels
    Eval(EvalArgs),
    /// Audit analytic gradients against finite differences
    Gradcheck,
    /// Generate the synthetic benchmark corpus
    Synth(SynthArgs),
}

/// Hyperparameter sources, weakest first: built-in defaults, then the
/// config file, then explicit flags.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// key=value file; `sdplstm train --help` lists the keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// lstm or rnn
    #[arg(long)]
    cell: Option<String>,
    /// split or full
    #[arg(long)]
    path: Option<String>,
    /// comma list drawn from word,pos,gr,wordnet
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    dropout_embed: Option<f64>,
    #[arg(long)]
    dropout_penultimate: Option<f64>,
    #[arg(long)]
    dropout_cell: Option<f64>,
}

impl Overrides {
    fn resolve(&self) -> Result<HyperConfig> {
        let mut cfg = HyperConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            config::apply_text(&mut cfg, &text)?;
        }
        if let Some(v) = self.seed {
            config::set_key(&mut cfg, "seed", &v.to_string())?;
        }
        for (key, value) in [("cell", &self.cell), ("path", &self.path), ("channels", &self.channels)] {
            if let Some(v) = value {
                config::set_key(&mut cfg, key, v)?;
            }
        }
        for (key, value) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_penultimate", self.dropout_penultimate),
            ("dropout_cell", self.dropout_cell),
        ] {
            if let Some(v) = value {
                config::set_key(&mut cfg, key, &v.to_string())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// sentences in block format
    input: PathBuf,
    /// output file (stdout when absent)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// training sentences in block format
    input: PathBuf,
    /// where the best model goes
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON-lines epoch log
    #[arg(long)]
    epoch_log: Option<PathBuf>,
    /// word2vec text vectors to overlay on the word table
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct PredictArgs {
    /// trained model
    checkpoint: PathBuf,
    /// sentences in block format (the #rel line may carry any label)
    input: PathBuf,
    /// output file (stdout when absent)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, ValueEnum)]
enum ReportFormat {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct EvalArgs {
    /// gold labels: block-format sentences or one label per line
    gold: PathBuf,
    /// predicted labels, same forms accepted
    pred: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    format: ReportFormat,
    /// output file (stdout when absent)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// training sentences to generate
    #[arg(long = "train", default_value_t = 2000)]
    n_train: usize,
    /// test sentences to generate
    #[arg(long = "test", default_value_t = 500)]
    n_test: usize,
    /// directory for train.sdpc and test.sdpc
    #[arg(long)]
    out: PathBuf,
}

pub fn run() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => match dispatch(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ExtractSdp(args) => cmd_extract(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Gradcheck => cmd_gradcheck(),
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn read_sentences(path: &Path) -> Result<Vec<DepSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sdpc(&text)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            std::io::stdout().flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn render_corpus(sentences: &[DepSentence]) -> String {
    sentences.iter().map(to_sdpc).collect::<Vec<_>>().join("\n")
}

/// One line per sentence: both halves of the path (forms, then edge
/// labels, each half bottom-up and joined with " | "), the shared
/// ancestor's form, and the gold label, tab-separated.
fn extract_line(sent: &DepSentence) -> String {
    let sdp = extract_sdp(sent);
    let forms = |nodes: &[usize]| {
        nodes.iter().map(|&i| sent.tokens[i].form.as_str()).collect::<Vec<_>>().join(" ")
    };
    format!(
        "{} | {}\t{} | {}\t{}\t{}",
        forms(&sdp.left_nodes),
        forms(&sdp.right_nodes),
        sdp.left_rels.join(" "),
        sdp.right_rels.join(" "),
        sent.tokens[sdp.ancestor].form,
        sent.relation,
    )
}

fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let sentences = read_sentences(&args.input)?;
    let mut out = String::new();
    for sent in &sentences {
        writeln!(out, "{}", extract_line(sent)).expect("string writes cannot fail");
    }
    emit(args.output.as_deref(), &out)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let sentences = read_sentences(&args.input)?;
    let cfg = args.overrides.resolve()?;
    let io = TrainIo {
        checkpoint: Some(&args.checkpoint),
        epoch_log: args.epoch_log.as_deref(),
        pretrained_words: args.pretrained.as_deref(),
    };
    let out = train(&sentences, &cfg, &io)?;
    println!(
        "trained {} epochs; best epoch {} with validation score {:.2}; checkpoint at {}",
        out.state.epochs_run,
        out.state.best_epoch,
        out.state.best_val_f1,
        args.checkpoint.display(),
    );
    Ok(())
}

fn class_string(class: usize, n_classes: usize) -> String {
    if n_classes == NUM_LABELS {
        Label::from_index(class).to_string()
    } else {
        class.to_string()
    }
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let sentences = read_sentences(&args.input)?;
    let samples = samples_of(&sentences, &ckpt.vocabs);
    let mut out = String::new();
    for sample in &samples {
        let (pred, _) = forward(&ckpt.params, &ckpt.cfg, sample, Mode::Infer);
        writeln!(out, "{}", class_string(pred.class, ckpt.cfg.n_classes)).expect("string writes cannot fail");
    }
    emit(args.output.as_deref(), &out)
}

/// Accepts either block-format sentences (the labels are taken from the
/// #rel headers) or a plain file with one label per line.
fn labels_from_file(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.lines().any(|l| l.starts_with("#rel ")) {
        return Ok(parse_sdpc(&text)?.iter().map(|s| s.relation.index()).collect());
    }
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let label = Label::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        labels.push(label.index());
    }
    Ok(labels)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let gold = labels_from_file(&args.gold)?;
    let pred = labels_from_file(&args.pred)?;
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "gold has {} labels but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    let report = score(&gold, &pred);
    let text = match args.format {
        ReportFormat::Text => report.to_string(),
        ReportFormat::Json => {
            let mut s = report.to_json();
            s.push('\n');
            s
        }
        ReportFormat::Csv => report.confusion_csv(),
    };
    emit(args.output.as_deref(), &text)
}

fn cmd_gradcheck() -> Result<()> {
    let cells = grad_check();
    let mut failures = 0;
    for cell in &cells {
        println!("{}", cell.label());
        for t in &cell.tensors {
            println!("  {:<24} max {:>10.3e}  p99 {:>10.3e}  ({} coords)", t.name, t.max_rel, t.p99_rel, t.count);
        }
        println!("  -> {}", if cell.passed { "PASS" } else { "FAIL" });
        if !cell.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Numeric(format!("{failures} of {} gradient audit cells failed", cells.len())));
    }
    println!("all {} cells passed", cells.len());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let (train_set, test_set) = generate_split(args.seed, args.n_train, args.n_test);
    write_atomic(&args.out.join("train.sdpc"), render_corpus(&train_set).as_bytes())?;
    write_atomic(&args.out.join("test.sdpc"), render_corpus(&test_set).as_bytes())?;
    println!(
        "wrote {} train and {} test sentences under {}",
        train_set.len(),
        test_set.len(),
        args.out.display(),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellVariant, PathVariant};
    use tempfile::tempdir;

    #[test]
    fn flags_override_config_file_which_overrides_defaults() {
        let dir = tempdir().unwrap();
        let file = dir.path().join("run.conf");
        std::fs::write(&file, "seed = 7\nlearning_rate = 0.125\ncell = rnn\n").unwrap();
        let overrides = Overrides {
            config: Some(file),
            cell: Some("lstm".into()),
            dropout_embed: Some(0.25),
            ..Overrides::default()
        };
        let cfg = overrides.resolve().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.learning_rate, 0.125);
        assert_eq!(cfg.cell, CellVariant::Lstm);
        assert_eq!(cfg.dropout_embed, 0.25);
        assert_eq!(cfg.path, PathVariant::Split);
    }

    #[test]
    fn bad_flag_values_surface_as_config_errors() {
        let overrides = Overrides { cell: Some("gru".into()), ..Overrides::default() };
        assert!(matches!(overrides.resolve().unwrap_err(), Error::Config(_)));
        let overrides = Overrides { dropout_embed: Some(1.5), ..Overrides::default() };
        assert!(overrides.resolve().is_err());
    }

    #[test]
    fn label_files_accept_both_block_and_line_form() {
        let dir = tempdir().unwrap();
        let lines = dir.path().join("labels.txt");
        std::fs::write(&lines, "Cause-Effect(e1,e2)\nOther\n\nEntity-Destination(e2,e1)\n").unwrap();
        assert_eq!(labels_from_file(&lines).unwrap(), vec![0, 18, 7]);

        let blocks = dir.path().join("gold.sdpc");
        let sents = crate::synth::generate(5, 4);
        std::fs::write(&blocks, render_corpus(&sents)).unwrap();
        let expected: Vec<usize> = sents.iter().map(|s| s.relation.index()).collect();
        assert_eq!(labels_from_file(&blocks).unwrap(), expected);
    }

    #[test]
    fn unknown_labels_carry_their_line_number() {
        let dir = tempdir().unwrap();
        let lines = dir.path().join("labels.txt");
        std::fs::write(&lines, "Other\nNot-A-Relation(e1,e2)\n").unwrap();
        let err = labels_from_file(&lines).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn extract_lines_carry_both_halves_and_the_ancestor() {
        let sents = crate::synth::generate(11, 5);
        for sent in &sents {
            let line = extract_line(sent);
            let fields: Vec<&str> = line.split('\t').collect();
            assert_eq!(fields.len(), 4);
            assert!(fields[0].contains(" | "));
            assert!(fields[1].contains(" | "));
            let sdp = extract_sdp(sent);
            assert_eq!(fields[2], sent.tokens[sdp.ancestor].form);
            assert_eq!(fields[3], sent.relation.to_string());
        }
    }
}
