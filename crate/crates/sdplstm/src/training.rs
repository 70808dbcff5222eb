//! Mini-batch SGD with early stopping, plus the finite-difference
//! gradient audit.
//!
//! One run rng seeded from the config drives the validation split, the
//! parameter init, and every epoch's example order. Each example's
//! dropout noise comes from its own substream derived from (seed,
//! epoch, position), so results depend on neither thread count nor
//! batch boundaries. Everything written to disk is deterministic for a
//! fixed seed; wall-clock timings go to stderr only.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::channels::{load_pretrained, ChannelKind, ChannelMaps, Vocab, Vocabs};
use crate::deptree::{extract_sdp, to_channel_sequences, ChannelSeqs, DepSentence, SdpSample};
use crate::evaluation::selection_metric;
use crate::label::{Label, NUM_LABELS};
use crate::model::{
    add_penalty_gradient, backward, forward, objective, penalty, CellVariant, Gradients, HyperConfig,
    Mode, ModelParams, PathVariant,
};
use crate::numerics::Rng;
use crate::{write_atomic, Error, Result};

/// Optional file outputs of a training run.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainIo<'a> {
    /// Best-model checkpoint, rewritten atomically on every improvement.
    pub checkpoint: Option<&'a Path>,
    /// JSON-lines epoch log, written once at the end.
    pub epoch_log: Option<&'a Path>,
    /// word2vec-format text file to overlay onto the word table.
    pub pretrained_words: Option<&'a Path>,
}

/// One line of the epoch log. `seconds` is observed wall-clock time and
/// stays out of the serialized record so logs from equal seeds compare
/// byte for byte.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Objective for the epoch divided by the number of training examples.
    pub train_loss: f64,
    /// Validation selection metric, a percentage.
    pub val_f1: f64,
    /// Run-rng draw counter after this epoch's shuffle.
    pub rng_position: u64,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub epochs_run: usize,
    pub best_val_f1: f64,
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub state: TrainState,
    /// Parameters from the best validation epoch.
    pub params: ModelParams,
    pub vocabs: Vocabs,
}

/// Extracts the shortest-path sample from every sentence.
pub fn samples_of(sentences: &[DepSentence], vocabs: &Vocabs) -> Vec<SdpSample> {
    sentences.iter().map(|s| to_channel_sequences(s, &extract_sdp(s), vocabs)).collect()
}

fn class_name(i: usize, n_classes: usize) -> String {
    if n_classes == NUM_LABELS {
        Label::from_index(i).to_string()
    } else {
        i.to_string()
    }
}

/// Trains on `sentences` with a tenth held out for validation. The
/// split is the tail of one seeded shuffle; vocabularies are built on
/// the training part only. Returns the parameters of the epoch with the
/// best validation score under strict improvement; training stops early
/// once `patience` consecutive epochs fail to improve (patience 0
/// disables early stopping). A non-finite objective aborts the run.
pub fn train(sentences: &[DepSentence], cfg: &HyperConfig, io: &TrainIo) -> Result<TrainOutput> {
    cfg.validate()?;
    if sentences.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }

    let mut run_rng = Rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    run_rng.shuffle(&mut order);
    let n_val = sentences.len() / 10;
    let n_train = sentences.len() - n_val;
    let train_sents: Vec<DepSentence> = order[..n_train].iter().map(|&i| sentences[i].clone()).collect();
    let val_sents: Vec<DepSentence> = order[n_train..].iter().map(|&i| sentences[i].clone()).collect();

    let vocabs = Vocabs::build(&train_sents, cfg.min_count, ChannelMaps::default());
    let train_samples = samples_of(&train_sents, &vocabs);
    let val_samples = samples_of(&val_sents, &vocabs);
    let val_gold: Vec<usize> = val_samples.iter().map(|s| s.class).collect();

    for c in 0..cfg.n_classes {
        if !train_samples.iter().any(|s| s.class == c) {
            eprintln!("warning: class {} has no training examples", class_name(c, cfg.n_classes));
        }
    }

    let mut params = ModelParams::init(cfg, &vocabs, &mut run_rng);
    if let Some(path) = io.pretrained_words {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let word_slot = params
            .channels
            .iter()
            .position(|&k| k == ChannelKind::Word)
            .expect("word channel is always enabled");
        let loaded = load_pretrained(&mut params.embeddings[word_slot], &vocabs.word, &text)?;
        eprintln!("loaded {loaded} pretrained word vectors from {}", path.display());
    }

    let mut state = TrainState {
        epochs_run: 0,
        best_val_f1: f64::NEG_INFINITY,
        best_epoch: 0,
        best_checkpoint: None,
        log: Vec::new(),
    };
    let mut best_params = params.clone();
    let mut bad_epochs = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut epoch_order: Vec<usize> = (0..train_samples.len()).collect();
        run_rng.shuffle(&mut epoch_order);
        let rng_position = run_rng.draws();

        let mut epoch_objective = 0.0;
        for (b, batch) in epoch_order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&params);
            let mut preds = Vec::with_capacity(batch.len());
            for (k, &idx) in batch.iter().enumerate() {
                let position = (b * cfg.batch_size + k) as u64;
                let mut example_rng = Rng::derive(cfg.seed, epoch as u64, position);
                let sample = &train_samples[idx];
                let (pred, tape) = forward(&params, cfg, sample, Mode::Train(&mut example_rng));
                grads.add_assign(&backward(&params, cfg, &tape, sample.class));
                preds.push(pred);
            }
            epoch_objective += objective(&preds, &params, cfg.lambda).total;
            add_penalty_gradient(&mut grads, &params, cfg.lambda);
            if cfg.grad_clip > 0.0 {
                let norm = grads.l2_norm();
                if norm > cfg.grad_clip {
                    grads.scale(cfg.grad_clip / norm);
                }
            }
            params.apply_update(&grads, cfg.learning_rate);
        }

        if !epoch_objective.is_finite() {
            return Err(Error::Numeric(format!(
                "objective diverged at epoch {epoch}: {epoch_objective}"
            )));
        }

        let val_pred: Vec<usize> = val_samples
            .iter()
            .map(|s| forward(&params, cfg, s, Mode::Infer).0.class)
            .collect();
        let val_f1 = selection_metric(&val_gold, &val_pred, cfg.n_classes);
        let train_loss = epoch_objective / n_train as f64;
        let seconds = started.elapsed().as_secs_f64();
        eprintln!("epoch {epoch}: train_loss {train_loss:.6}  val {val_f1:.2}  ({seconds:.2}s)");
        state.log.push(EpochRecord { epoch, train_loss, val_f1, rng_position, seconds });
        state.epochs_run = epoch;

        if val_f1 > state.best_val_f1 {
            state.best_val_f1 = val_f1;
            state.best_epoch = epoch;
            best_params = params.clone();
            bad_epochs = 0;
            if let Some(path) = io.checkpoint {
                crate::model::save_checkpoint(&best_params, cfg, &vocabs, path)?;
                state.best_checkpoint = Some(path.to_path_buf());
            }
        } else {
            bad_epochs += 1;
            if cfg.patience > 0 && bad_epochs >= cfg.patience {
                eprintln!("stopping: no improvement for {bad_epochs} epochs");
                break;
            }
        }
    }

    if let Some(path) = io.epoch_log {
        let mut text = String::new();
        for record in &state.log {
            text.push_str(&serde_json::to_string(record).expect("epoch record serializes"));
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())?;
    }

    Ok(TrainOutput { state, params: best_params, vocabs })
}

/// Relative error with an absolute floor, so coordinates whose true
/// gradient is near zero are compared absolutely.
const REL_FLOOR: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
const P99_LIMIT: f64 = 1e-4;
const MAX_LIMIT: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs()).max(REL_FLOOR))
}

#[derive(Clone, Debug)]
pub struct TensorReport {
    pub name: String,
    pub max_rel: f64,
    pub p99_rel: f64,
    pub count: usize,
}

#[derive(Debug)]
pub struct GradCheckCell {
    pub cell: CellVariant,
    pub path: PathVariant,
    pub lambda: f64,
    pub dropout_embed: f64,
    pub tensors: Vec<TensorReport>,
    pub passed: bool,
}

impl GradCheckCell {
    pub fn label(&self) -> String {
        format!(
            "{}/{} lambda={} embed_dropout={}",
            self.cell, self.path, self.lambda, self.dropout_embed
        )
    }
}

fn tensor_report(name: String, mut rels: Vec<f64>) -> TensorReport {
    let count = rels.len();
    rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_rel = rels.last().copied().unwrap_or(0.0);
    let p99_idx = ((0.99 * count as f64).ceil() as usize).saturating_sub(1);
    let p99_rel = if count == 0 { 0.0 } else { rels[p99_idx.min(count - 1)] };
    TensorReport { name, max_rel, p99_rel, count }
}

fn audit_vocabs() -> Vocabs {
    let v = |kind, syms: &[&str]| Vocab::from_symbols(kind, syms.iter().map(|s| s.to_string()).collect());
    Vocabs {
        word: v(ChannelKind::Word, &["<unk>", "pump", "water", "tank", "flow", "pipe"]),
        pos: v(ChannelKind::Pos, &["<unk>", "NOUN", "VERB"]),
        gr: v(ChannelKind::Gr, &["<unk>", "subj", "obj"]),
        hypernym: v(ChannelKind::Hypernym, &["<unk>", "noun.substance", "verb.motion"]),
        maps: ChannelMaps::default(),
    }
}

fn random_seqs(rng: &mut Rng, vocabs: &Vocabs, nodes: usize) -> ChannelSeqs {
    let draw = |rng: &mut Rng, n: usize, size: usize| -> Vec<usize> {
        (0..n).map(|_| rng.below(size)).collect()
    };
    ChannelSeqs {
        word: draw(rng, nodes, vocabs.word.size()),
        pos: draw(rng, nodes, vocabs.pos.size()),
        gr: draw(rng, nodes - 1, vocabs.gr.size()),
        hypernym: draw(rng, nodes, vocabs.hypernym.size()),
    }
}

fn random_audit_samples(rng: &mut Rng, vocabs: &Vocabs, n_classes: usize, count: usize) -> Vec<SdpSample> {
    (0..count)
        .map(|_| {
            let left_len = 1 + rng.below(4);
            let left = random_seqs(rng, vocabs, left_len);
            let right_len = 1 + rng.below(4);
            let right = random_seqs(rng, vocabs, right_len);
            SdpSample { left, right, class: rng.below(n_classes) }
        })
        .collect()
}

/// Dropout noise is frozen by re-deriving each sample's substream at
/// every evaluation, so the loss is a fixed function of the parameters.
const MASK_STREAM: u64 = 0x6d61736b;

fn audit_loss(params: &ModelParams, cfg: &HyperConfig, samples: &[SdpSample]) -> f64 {
    let mut ce = 0.0;
    for (s, sample) in samples.iter().enumerate() {
        let (pred, _) = if cfg.dropout_embed > 0.0 {
            let mut rng = Rng::derive(MASK_STREAM, s as u64, 0);
            forward(params, cfg, sample, Mode::Train(&mut rng))
        } else {
            forward(params, cfg, sample, Mode::Infer)
        };
        ce += pred.cross_entropy;
    }
    ce + cfg.lambda * penalty(params)
}

fn audit_grads(params: &ModelParams, cfg: &HyperConfig, samples: &[SdpSample]) -> Gradients {
    let mut grads = Gradients::zeros_like(params);
    for (s, sample) in samples.iter().enumerate() {
        let (_, tape) = if cfg.dropout_embed > 0.0 {
            let mut rng = Rng::derive(MASK_STREAM, s as u64, 0);
            forward(params, cfg, sample, Mode::Train(&mut rng))
        } else {
            forward(params, cfg, sample, Mode::Infer)
        };
        grads.add_assign(&backward(params, cfg, &tape, sample.class));
    }
    add_penalty_gradient(&mut grads, params, cfg.lambda);
    grads
}

fn central_difference(
    params: &mut ModelParams,
    cfg: &HyperConfig,
    samples: &[SdpSample],
    read: impl Fn(&ModelParams) -> f64,
    write: impl Fn(&mut ModelParams, f64),
) -> f64 {
    let orig = read(params);
    write(params, orig + FD_STEP);
    let plus = audit_loss(params, cfg, samples);
    write(params, orig - FD_STEP);
    let minus = audit_loss(params, cfg, samples);
    write(params, orig);
    (plus - minus) / (2.0 * FD_STEP)
}

fn check_one_cell(cell: CellVariant, path: PathVariant, lambda: f64, dropout_embed: f64) -> GradCheckCell {
    let cfg = HyperConfig {
        cell,
        path,
        word_dim: 4,
        pos_dim: 2,
        gr_dim: 2,
        hypernym_dim: 2,
        hidden_dim: 5,
        n_classes: 3,
        lambda,
        dropout_embed,
        dropout_penultimate: 0.0,
        dropout_cell: 0.0,
        ..HyperConfig::default()
    };
    let vocabs = audit_vocabs();
    let mut rng = Rng::seeded(4242);
    let samples = random_audit_samples(&mut rng, &vocabs, cfg.n_classes, 5);
    let mut params = ModelParams::init(&cfg, &vocabs, &mut rng);
    // The audit point must be generic. Fresh parameters have zero
    // biases, and an input prefix zeroed by dropout then yields hidden
    // states that are exactly equal across timesteps; pooling sits on a
    // tie, the loss has a kink there, and central differences measure
    // the average of the two branches instead of the one the argmax
    // picks. Jittering every dense coordinate makes all maxima strict.
    for t in params.dense_tensors_mut() {
        for v in t.data {
            *v += rng.uniform(-0.2, 0.2);
        }
    }
    let analytic = audit_grads(&params, &cfg, &samples);

    let mut tensors = Vec::new();

    for i in 0..params.embeddings.len() {
        let kind = params.channels[i];
        let rows = params.embeddings[i].rows();
        let dim = params.embeddings[i].dim();
        let mut dense = vec![0.0; rows * dim];
        for (&row, g) in &analytic.embeddings[i] {
            for d in 0..dim {
                dense[row * dim + d] += g[d];
            }
        }
        let mut rels = Vec::with_capacity(rows * dim);
        for k in 0..rows * dim {
            let numeric = central_difference(
                &mut params,
                &cfg,
                &samples,
                |p| p.embeddings[i].vectors.as_slice()[k],
                |p, v| p.embeddings[i].vectors.as_mut_slice()[k] = v,
            );
            rels.push(rel_err(dense[k], numeric));
        }
        tensors.push(tensor_report(format!("embedding.{kind}"), rels));
    }

    let n_tensors = params.dense_tensors().len();
    let analytic_dense: Vec<(String, Vec<f64>)> = analytic
        .dense_tensors()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();
    for t in 0..n_tensors {
        let (name, ga) = &analytic_dense[t];
        let mut rels = Vec::with_capacity(ga.len());
        for k in 0..ga.len() {
            let numeric = central_difference(
                &mut params,
                &cfg,
                &samples,
                |p| p.dense_tensors()[t].data[k],
                |p, v| p.dense_tensors_mut()[t].data[k] = v,
            );
            rels.push(rel_err(ga[k], numeric));
        }
        tensors.push(tensor_report(name.clone(), rels));
    }

    let passed = tensors.iter().all(|t| t.p99_rel < P99_LIMIT && t.max_rel < MAX_LIMIT);
    GradCheckCell { cell, path, lambda, dropout_embed, tensors, passed }
}

/// Audits the analytic gradient against central differences over every
/// parameter coordinate, across both cell variants, both path variants,
/// penalty on and off, and embedding dropout on and off (16 cells). A
/// tensor passes when its 99th-percentile relative error is below 1e-4
/// and its worst below 1e-3.
pub fn grad_check() -> Vec<GradCheckCell> {
    let mut cells = Vec::with_capacity(16);
    for cell in [CellVariant::Lstm, CellVariant::Rnn] {
        for path in [PathVariant::Split, PathVariant::Full] {
            for lambda in [0.0, 1e-2] {
                for dropout_embed in [0.0, 0.5] {
                    cells.push(check_one_cell(cell, path, lambda, dropout_embed));
                }
            }
        }
    }
    cells
}
