//! The assembled classifier: per-channel, per-sub-path recurrent nets
//! over embedded shortest-path sequences, max pooling, one tanh hidden
//! layer, and a softmax output.
//!
//! Pooled vectors are concatenated in a fixed order that checkpoints
//! rely on: for each enabled channel (word, pos, gr, wordnet), the left
//! sub-path pool then the right (just one pool per channel in full-path
//! mode). The objective is summed cross-entropy plus an L2 penalty on
//! weight matrices; biases and embedding tables are not penalized.
//!
//! Training-mode randomness is a single documented stream: per channel
//! and sub-path, first one embedding dropout mask per timestep, then the
//! cell's own per-step masks, and after all channels one penultimate
//! mask. Inference draws nothing.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::channels::{dropout_mask, ChannelKind, ChannelMaps, ChannelSet, EmbeddingTable, SymbolMap, SymbolSet, Vocab, Vocabs};
use crate::config;
use crate::deptree::{ChannelSeqs, SdpSample};
use crate::numerics::{softmax, tanh, Matrix, Rng, Vector};
use crate::recurrent::{
    lstm_backward, lstm_forward, max_pool, max_pool_backward, rnn_backward, rnn_forward,
    CellDropout, CellTargets, LstmGrads, LstmParams, LstmTape, RnnGrads, RnnParams, RnnTape,
};
use crate::{Error, Result};

/// Floor applied inside `ln` when scoring the true class.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellVariant {
    Lstm,
    Rnn,
}

impl std::fmt::Display for CellVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(match self {
            CellVariant::Lstm => "lstm",
            CellVariant::Rnn => "rnn",
        })
    }
}

impl std::str::FromStr for CellVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(CellVariant::Lstm),
            "rnn" => Ok(CellVariant::Rnn),
            other => Err(Error::Config(format!("unknown cell variant {other:?}, expected lstm or rnn"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathVariant {
    /// Two bottom-up sub-paths meeting at the common ancestor.
    Split,
    /// One net over the undivided entity-to-entity path.
    Full,
}

impl PathVariant {
    pub fn sides(self) -> usize {
        match self {
            PathVariant::Split => 2,
            PathVariant::Full => 1,
        }
    }
}

impl std::fmt::Display for PathVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(match self {
            PathVariant::Split => "split",
            PathVariant::Full => "full",
        })
    }
}

impl std::str::FromStr for PathVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(PathVariant::Split),
            "full" => Ok(PathVariant::Full),
            other => Err(Error::Config(format!("unknown path variant {other:?}, expected split or full"))),
        }
    }
}

/// Every knob of a run. Flat key=value serialization lives in
/// [`crate::config`].
#[derive(Clone, Debug, PartialEq)]
pub struct HyperConfig {
    pub cell: CellVariant,
    pub path: PathVariant,
    pub channels: ChannelSet,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub gr_dim: usize,
    pub hypernym_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub min_count: usize,
    pub dropout_embed: f64,
    pub dropout_penultimate: f64,
    pub dropout_cell: f64,
    pub dropout_cell_targets: CellTargets,
    /// L2-norm cap on the batch gradient; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            cell: CellVariant::Lstm,
            path: PathVariant::Split,
            channels: ChannelSet::all(),
            word_dim: 200,
            pos_dim: 50,
            gr_dim: 50,
            hypernym_dim: 50,
            hidden_dim: 100,
            n_classes: crate::label::NUM_LABELS,
            lambda: 1e-5,
            learning_rate: 0.05,
            batch_size: 10,
            epochs: 30,
            patience: 5,
            seed: 42,
            min_count: 1,
            dropout_embed: 0.5,
            dropout_penultimate: 0.3,
            dropout_cell: 0.0,
            dropout_cell_targets: CellTargets::all(),
            grad_clip: 0.0,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, ok: bool, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name}: {why}")))
            }
        };
        for (name, rate) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_penultimate", self.dropout_penultimate),
            ("dropout_cell", self.dropout_cell),
        ] {
            check(name, (0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)")?;
        }
        check("lambda", self.lambda >= 0.0 && self.lambda.is_finite(), "must be finite and >= 0")?;
        check("learning_rate", self.learning_rate > 0.0 && self.learning_rate.is_finite(), "must be finite and > 0")?;
        check("grad_clip", self.grad_clip >= 0.0 && self.grad_clip.is_finite(), "must be finite and >= 0")?;
        check("batch_size", self.batch_size >= 1, "must be >= 1")?;
        check("epochs", self.epochs >= 1, "must be >= 1")?;
        check("min_count", self.min_count >= 1, "must be >= 1")?;
        check("hidden_dim", self.hidden_dim >= 1, "must be >= 1")?;
        check("n_classes", self.n_classes >= 2, "must be >= 2")?;
        for (name, dim) in [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("gr_dim", self.gr_dim),
            ("hypernym_dim", self.hypernym_dim),
        ] {
            check(name, dim >= 1, "must be >= 1")?;
        }
        Ok(())
    }

    pub fn channel_dim(&self, kind: ChannelKind) -> usize {
        match kind {
            ChannelKind::Word => self.word_dim,
            ChannelKind::Pos => self.pos_dim,
            ChannelKind::Gr => self.gr_dim,
            ChannelKind::Hypernym => self.hypernym_dim,
        }
    }

    /// Width of the concatenated pooling layer.
    pub fn concat_dim(&self) -> usize {
        let per_side: usize = self.channels.enabled().iter().map(|&k| self.channel_dim(k)).sum();
        self.path.sides() * per_side
    }
}

/// One recurrent net's parameters; each channel and sub-path owns its
/// own, they never share.
#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Lstm(LstmParams),
    Rnn(RnnParams),
}

#[derive(Clone, Debug)]
pub enum CellTape {
    Lstm(LstmTape),
    Rnn(RnnTape),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellGrads {
    Lstm(LstmGrads),
    Rnn(RnnGrads),
}

impl CellParams {
    fn zeros(variant: CellVariant, hidden: usize, input: usize) -> Self {
        match variant {
            CellVariant::Lstm => CellParams::Lstm(LstmParams::zeros(hidden, input)),
            CellVariant::Rnn => CellParams::Rnn(RnnParams::zeros(hidden, input)),
        }
    }

    fn init(variant: CellVariant, hidden: usize, input: usize, rng: &mut Rng) -> Self {
        match variant {
            CellVariant::Lstm => CellParams::Lstm(LstmParams::init(hidden, input, rng)),
            CellVariant::Rnn => CellParams::Rnn(RnnParams::init(hidden, input, rng)),
        }
    }

    /// The plain-RNN baseline has no gates, so inner-cell dropout only
    /// applies to the LSTM variant.
    fn forward(&self, xs: &[Vector], dropout: Option<(&CellDropout, &mut Rng)>) -> (Vec<Vector>, CellTape) {
        match self {
            CellParams::Lstm(p) => {
                let (hs, tape) = lstm_forward(p, xs, dropout);
                (hs, CellTape::Lstm(tape))
            }
            CellParams::Rnn(p) => {
                let (hs, tape) = rnn_forward(p, xs);
                (hs, CellTape::Rnn(tape))
            }
        }
    }

    fn backward(&self, tape: &CellTape, grad_hs: &[Vector]) -> (CellGrads, Vec<Vector>) {
        match (self, tape) {
            (CellParams::Lstm(p), CellTape::Lstm(t)) => {
                let (g, dxs) = lstm_backward(p, t, grad_hs);
                (CellGrads::Lstm(g), dxs)
            }
            (CellParams::Rnn(p), CellTape::Rnn(t)) => {
                let (g, dxs) = rnn_backward(p, t, grad_hs);
                (CellGrads::Rnn(g), dxs)
            }
            _ => panic!("cell/tape variant mismatch"),
        }
    }

    fn grads_zeros(&self) -> CellGrads {
        match self {
            CellParams::Lstm(p) => CellGrads::Lstm(LstmGrads::zeros_like(p)),
            CellParams::Rnn(p) => CellGrads::Rnn(RnnGrads::zeros_like(p)),
        }
    }
}

impl CellGrads {
    fn add_assign(&mut self, other: &CellGrads) {
        match (self, other) {
            (CellGrads::Lstm(a), CellGrads::Lstm(b)) => a.add_assign(b),
            (CellGrads::Rnn(a), CellGrads::Rnn(b)) => a.add_assign(b),
            _ => panic!("cell gradient variant mismatch"),
        }
    }
}

/// All trainable tensors. Layout mirrors the enabled channel list:
/// `embeddings[i]` and `cells[i]` belong to `channels[i]`, and
/// `cells[i]` holds one cell per sub-path (left, right) or a single
/// full-path cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub channels: Vec<ChannelKind>,
    pub path: PathVariant,
    pub embeddings: Vec<EmbeddingTable>,
    pub cells: Vec<Vec<CellParams>>,
    pub w_hidden: Matrix,
    pub b_hidden: Vector,
    pub w_out: Matrix,
    pub b_out: Vector,
}

fn side_names(path: PathVariant) -> &'static [&'static str] {
    match path {
        PathVariant::Split => &["left", "right"],
        PathVariant::Full => &["path"],
    }
}

impl ModelParams {
    pub fn zeros(cfg: &HyperConfig, vocabs: &Vocabs) -> Self {
        let channels = cfg.channels.enabled();
        let embeddings = channels
            .iter()
            .map(|&k| EmbeddingTable {
                kind: k,
                vectors: Matrix::zeros(vocabs.by_kind(k).size(), cfg.channel_dim(k)),
            })
            .collect();
        let cells = channels
            .iter()
            .map(|&k| {
                let dim = cfg.channel_dim(k);
                (0..cfg.path.sides()).map(|_| CellParams::zeros(cfg.cell, dim, dim)).collect()
            })
            .collect();
        ModelParams {
            channels,
            path: cfg.path,
            embeddings,
            cells,
            w_hidden: Matrix::zeros(cfg.hidden_dim, cfg.concat_dim()),
            b_hidden: Vector::zeros(cfg.hidden_dim),
            w_out: Matrix::zeros(cfg.n_classes, cfg.hidden_dim),
            b_out: Vector::zeros(cfg.n_classes),
        }
    }

    /// Fresh random parameters. The rng draw order is part of the
    /// reproducibility contract: embedding tables in channel order, then
    /// every cell (channel-major, left before right), then the hidden
    /// layer, then the output layer. Biases start at zero.
    pub fn init(cfg: &HyperConfig, vocabs: &Vocabs, rng: &mut Rng) -> Self {
        let mut params = ModelParams::zeros(cfg, vocabs);
        for (i, &kind) in params.channels.iter().enumerate() {
            params.embeddings[i] =
                EmbeddingTable::new_random(kind, vocabs.by_kind(kind).size(), cfg.channel_dim(kind), rng);
        }
        for (i, &kind) in params.channels.clone().iter().enumerate() {
            let dim = cfg.channel_dim(kind);
            for side in 0..cfg.path.sides() {
                params.cells[i][side] = CellParams::init(cfg.cell, dim, dim, rng);
            }
        }
        let concat = cfg.concat_dim();
        params.w_hidden.fill_uniform(rng, -1.0 / (concat as f64).sqrt(), 1.0 / (concat as f64).sqrt());
        params
            .w_out
            .fill_uniform(rng, -1.0 / (cfg.hidden_dim as f64).sqrt(), 1.0 / (cfg.hidden_dim as f64).sqrt());
        params
    }

    /// Non-embedding tensors in canonical order, named for reports and
    /// checkpoints. `penalized` marks the weight matrices that enter the
    /// L2 term.
    pub fn dense_tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, cell_row) in self.cells.iter().enumerate() {
            let ch = self.channels[i];
            for (side, cell) in cell_row.iter().enumerate() {
                let side = side_names(self.path)[side];
                let prefix = format!("cell.{ch}.{side}");
                match cell {
                    CellParams::Lstm(p) => {
                        for (name, m) in [
                            ("w_i", &p.w_i), ("w_f", &p.w_f), ("w_o", &p.w_o), ("w_g", &p.w_g),
                            ("u_i", &p.u_i), ("u_f", &p.u_f), ("u_o", &p.u_o), ("u_g", &p.u_g),
                        ] {
                            out.push(TensorRef { name: format!("{prefix}.{name}"), penalized: true, data: m.as_slice() });
                        }
                        for (name, v) in [("b_i", &p.b_i), ("b_f", &p.b_f), ("b_o", &p.b_o), ("b_g", &p.b_g)] {
                            out.push(TensorRef { name: format!("{prefix}.{name}"), penalized: false, data: v.as_slice() });
                        }
                    }
                    CellParams::Rnn(p) => {
                        out.push(TensorRef { name: format!("{prefix}.w_in"), penalized: true, data: p.w_in.as_slice() });
                        out.push(TensorRef { name: format!("{prefix}.w_rec"), penalized: true, data: p.w_rec.as_slice() });
                        out.push(TensorRef { name: format!("{prefix}.b"), penalized: false, data: p.b.as_slice() });
                    }
                }
            }
        }
        out.push(TensorRef { name: "hidden.w".into(), penalized: true, data: self.w_hidden.as_slice() });
        out.push(TensorRef { name: "hidden.b".into(), penalized: false, data: self.b_hidden.as_slice() });
        out.push(TensorRef { name: "out.w".into(), penalized: true, data: self.w_out.as_slice() });
        out.push(TensorRef { name: "out.b".into(), penalized: false, data: self.b_out.as_slice() });
        out
    }

    /// Mutable twin of [`Self::dense_tensors`]; same order and names.
    pub fn dense_tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let path = self.path;
        let channels = self.channels.clone();
        let mut out = Vec::new();
        for (i, cell_row) in self.cells.iter_mut().enumerate() {
            let ch = channels[i];
            for (side, cell) in cell_row.iter_mut().enumerate() {
                let side = side_names(path)[side];
                let prefix = format!("cell.{ch}.{side}");
                match cell {
                    CellParams::Lstm(p) => {
                        for (name, m) in [
                            ("w_i", &mut p.w_i), ("w_f", &mut p.w_f), ("w_o", &mut p.w_o), ("w_g", &mut p.w_g),
                            ("u_i", &mut p.u_i), ("u_f", &mut p.u_f), ("u_o", &mut p.u_o), ("u_g", &mut p.u_g),
                        ] {
                            out.push(TensorMut { name: format!("{prefix}.{name}"), penalized: true, data: m.as_mut_slice() });
                        }
                        for (name, v) in [("b_i", &mut p.b_i), ("b_f", &mut p.b_f), ("b_o", &mut p.b_o), ("b_g", &mut p.b_g)] {
                            out.push(TensorMut { name: format!("{prefix}.{name}"), penalized: false, data: v.as_mut_slice() });
                        }
                    }
                    CellParams::Rnn(p) => {
                        out.push(TensorMut { name: format!("{prefix}.w_in"), penalized: true, data: p.w_in.as_mut_slice() });
                        out.push(TensorMut { name: format!("{prefix}.w_rec"), penalized: true, data: p.w_rec.as_mut_slice() });
                        out.push(TensorMut { name: format!("{prefix}.b"), penalized: false, data: p.b.as_mut_slice() });
                    }
                }
            }
        }
        out.push(TensorMut { name: "hidden.w".into(), penalized: true, data: self.w_hidden.as_mut_slice() });
        out.push(TensorMut { name: "hidden.b".into(), penalized: false, data: self.b_hidden.as_mut_slice() });
        out.push(TensorMut { name: "out.w".into(), penalized: true, data: self.w_out.as_mut_slice() });
        out.push(TensorMut { name: "out.b".into(), penalized: false, data: self.b_out.as_mut_slice() });
        out
    }

    /// One SGD step: subtracts `lr` times each gradient, embedding rows
    /// sparsely.
    pub fn apply_update(&mut self, grads: &Gradients, lr: f64) {
        for (emb, rows) in self.embeddings.iter_mut().zip(&grads.embeddings) {
            for (&row, g) in rows {
                let dst = emb.vectors.row_mut(row);
                for (d, gv) in dst.iter_mut().zip(g.as_slice()) {
                    *d -= lr * gv;
                }
            }
        }
        let mut mine = self.dense_tensors_mut();
        let theirs = grads.dense_tensors();
        debug_assert_eq!(mine.len(), theirs.len());
        for (p, g) in mine.iter_mut().zip(theirs) {
            debug_assert_eq!(p.name, g.name);
            for (pv, gv) in p.data.iter_mut().zip(g.data) {
                *pv -= lr * gv;
            }
        }
    }
}

pub struct TensorRef<'a> {
    pub name: String,
    pub penalized: bool,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub penalized: bool,
    pub data: &'a mut [f64],
}

/// Gradients of the objective. Embedding gradients are sparse: only rows
/// an example actually looked up get an entry. Layout matches
/// [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub channels: Vec<ChannelKind>,
    pub path: PathVariant,
    pub embeddings: Vec<BTreeMap<usize, Vector>>,
    pub cells: Vec<Vec<CellGrads>>,
    pub w_hidden: Matrix,
    pub b_hidden: Vector,
    pub w_out: Matrix,
    pub b_out: Vector,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            channels: params.channels.clone(),
            path: params.path,
            embeddings: params.embeddings.iter().map(|_| BTreeMap::new()).collect(),
            cells: params
                .cells
                .iter()
                .map(|row| row.iter().map(CellParams::grads_zeros).collect())
                .collect(),
            w_hidden: Matrix::zeros(params.w_hidden.rows(), params.w_hidden.cols()),
            b_hidden: Vector::zeros(params.b_hidden.len()),
            w_out: Matrix::zeros(params.w_out.rows(), params.w_out.cols()),
            b_out: Vector::zeros(params.b_out.len()),
        }
    }

    /// Accumulates `other`, used to fold a batch in example order.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (mine, theirs) in self.embeddings.iter_mut().zip(&other.embeddings) {
            for (&row, g) in theirs {
                mine.entry(row)
                    .and_modify(|acc| acc.add_assign(g))
                    .or_insert_with(|| g.clone());
            }
        }
        for (mine, theirs) in self.cells.iter_mut().zip(&other.cells) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                m.add_assign(t);
            }
        }
        self.w_hidden.add_assign(&other.w_hidden);
        self.b_hidden.add_assign(&other.b_hidden);
        self.w_out.add_assign(&other.w_out);
        self.b_out.add_assign(&other.b_out);
    }

    /// Same canonical order and names as [`ModelParams::dense_tensors`].
    pub fn dense_tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, cell_row) in self.cells.iter().enumerate() {
            let ch = self.channels[i];
            for (side, cell) in cell_row.iter().enumerate() {
                let side = side_names(self.path)[side];
                let prefix = format!("cell.{ch}.{side}");
                match cell {
                    CellGrads::Lstm(p) => {
                        for (name, m) in [
                            ("w_i", &p.w_i), ("w_f", &p.w_f), ("w_o", &p.w_o), ("w_g", &p.w_g),
                            ("u_i", &p.u_i), ("u_f", &p.u_f), ("u_o", &p.u_o), ("u_g", &p.u_g),
                        ] {
                            out.push(TensorRef { name: format!("{prefix}.{name}"), penalized: true, data: m.as_slice() });
                        }
                        for (name, v) in [("b_i", &p.b_i), ("b_f", &p.b_f), ("b_o", &p.b_o), ("b_g", &p.b_g)] {
                            out.push(TensorRef { name: format!("{prefix}.{name}"), penalized: false, data: v.as_slice() });
                        }
                    }
                    CellGrads::Rnn(p) => {
                        out.push(TensorRef { name: format!("{prefix}.w_in"), penalized: true, data: p.w_in.as_slice() });
                        out.push(TensorRef { name: format!("{prefix}.w_rec"), penalized: true, data: p.w_rec.as_slice() });
                        out.push(TensorRef { name: format!("{prefix}.b"), penalized: false, data: p.b.as_slice() });
                    }
                }
            }
        }
        out.push(TensorRef { name: "hidden.w".into(), penalized: true, data: self.w_hidden.as_slice() });
        out.push(TensorRef { name: "hidden.b".into(), penalized: false, data: self.b_hidden.as_slice() });
        out.push(TensorRef { name: "out.w".into(), penalized: true, data: self.w_out.as_slice() });
        out.push(TensorRef { name: "out.b".into(), penalized: false, data: self.b_out.as_slice() });
        out
    }

    fn dense_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for cell_row in self.cells.iter_mut() {
            for cell in cell_row.iter_mut() {
                match cell {
                    CellGrads::Lstm(p) => {
                        for m in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_g, &mut p.u_i, &mut p.u_f, &mut p.u_o, &mut p.u_g] {
                            out.push(m.as_mut_slice());
                        }
                        for v in [&mut p.b_i, &mut p.b_f, &mut p.b_o, &mut p.b_g] {
                            out.push(v.as_mut_slice());
                        }
                    }
                    CellGrads::Rnn(p) => {
                        out.push(p.w_in.as_mut_slice());
                        out.push(p.w_rec.as_mut_slice());
                        out.push(p.b.as_mut_slice());
                    }
                }
            }
        }
        out.push(self.w_hidden.as_mut_slice());
        out.push(self.b_hidden.as_mut_slice());
        out.push(self.w_out.as_mut_slice());
        out.push(self.b_out.as_mut_slice());
        out
    }

    /// L2 norm over every coordinate, sparse embedding rows included.
    pub fn l2_norm(&self) -> f64 {
        let mut sq = 0.0;
        for rows in &self.embeddings {
            for g in rows.values() {
                sq += g.as_slice().iter().map(|x| x * x).sum::<f64>();
            }
        }
        for t in self.dense_tensors() {
            sq += t.data.iter().map(|x| x * x).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for rows in self.embeddings.iter_mut() {
            for g in rows.values_mut() {
                g.scale(factor);
            }
        }
        for t in self.dense_tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Adds the derivative of `lambda * sum ||W||_F^2` over the penalized
/// weight matrices: `2 lambda W`. Biases and embeddings get nothing.
pub fn add_penalty_gradient(grads: &mut Gradients, params: &ModelParams, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let sources = params.dense_tensors();
    let mut targets = grads.dense_tensors_mut();
    debug_assert_eq!(sources.len(), targets.len());
    for (src, dst) in sources.iter().zip(targets.iter_mut()) {
        if !src.penalized {
            continue;
        }
        for (d, p) in dst.iter_mut().zip(src.data) {
            *d += 2.0 * lambda * p;
        }
    }
}

/// Sum of squared Frobenius norms over the penalized weight matrices.
pub fn penalty(params: &ModelParams) -> f64 {
    params
        .dense_tensors()
        .iter()
        .filter(|t| t.penalized)
        .map(|t| t.data.iter().map(|x| x * x).sum::<f64>())
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub cross_entropy: f64,
    pub penalty: f64,
    pub total: f64,
}

/// The training objective over one batch: summed cross-entropy plus the
/// weighted penalty, counted once per batch.
pub fn objective(predictions: &[Prediction], params: &ModelParams, lambda: f64) -> Objective {
    let cross_entropy = predictions.iter().map(|p| p.cross_entropy).sum();
    let penalty = penalty(params);
    Objective { cross_entropy, penalty, total: cross_entropy + lambda * penalty }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vector,
    /// Argmax class index.
    pub class: usize,
    /// Cross-entropy against the sample's gold class.
    pub cross_entropy: f64,
}

pub enum Mode<'a> {
    /// Dropout active, masks drawn from the given stream.
    Train(&'a mut Rng),
    /// Deterministic, rng-free.
    Infer,
}

struct SideTape {
    channel: usize,
    side: usize,
    ids: Vec<usize>,
    embed_masks: Option<Vec<Vector>>,
    cell: CellTape,
    argmax: Vec<usize>,
    steps: usize,
    offset: usize,
    dim: usize,
}

/// Everything backward needs to replay one example exactly.
pub struct Tape {
    sides: Vec<SideTape>,
    concat: Vector,
    hidden: Vector,
    penult_mask: Option<Vector>,
    hidden_dropped: Vector,
    probs: Vector,
}

fn seq_of(seqs: &ChannelSeqs, kind: ChannelKind) -> &[usize] {
    match kind {
        ChannelKind::Word => &seqs.word,
        ChannelKind::Pos => &seqs.pos,
        ChannelKind::Gr => &seqs.gr,
        ChannelKind::Hypernym => &seqs.hypernym,
    }
}

/// Runs one example through the network. In train mode dropout masks
/// come off `rng` in the documented order; inference never touches an
/// rng and applies no dropout.
pub fn forward(params: &ModelParams, cfg: &HyperConfig, sample: &SdpSample, mode: Mode<'_>) -> (Prediction, Tape) {
    assert!(
        sample.class < cfg.n_classes,
        "sample class {} out of range for {} classes",
        sample.class,
        cfg.n_classes
    );
    let mut rng = match mode {
        Mode::Train(r) => Some(r),
        Mode::Infer => None,
    };
    let cell_dropout = CellDropout { rate: cfg.dropout_cell, targets: cfg.dropout_cell_targets };

    let full;
    let side_seqs: Vec<&ChannelSeqs> = match cfg.path {
        PathVariant::Split => vec![&sample.left, &sample.right],
        PathVariant::Full => {
            full = sample.full_channels();
            vec![&full]
        }
    };

    let mut concat = Vector::zeros(cfg.concat_dim());
    let mut sides = Vec::with_capacity(params.channels.len() * side_seqs.len());
    let mut offset = 0;

    for (ch_idx, &kind) in params.channels.iter().enumerate() {
        let dim = cfg.channel_dim(kind);
        let table = &params.embeddings[ch_idx];
        for (side_idx, seqs) in side_seqs.iter().enumerate() {
            let ids = seq_of(seqs, kind).to_vec();
            let mut xs: Vec<Vector> = ids.iter().map(|&id| table.embed(id)).collect();

            let embed_masks = match (&mut rng, cfg.dropout_embed > 0.0) {
                (Some(r), true) => {
                    let masks: Vec<Vector> =
                        xs.iter().map(|_| dropout_mask(dim, cfg.dropout_embed, r)).collect();
                    for (x, m) in xs.iter_mut().zip(&masks) {
                        *x = crate::numerics::hadamard(x, m);
                    }
                    Some(masks)
                }
                _ => None,
            };

            let dropout = match (&mut rng, cfg.dropout_cell > 0.0) {
                (Some(r), true) => Some((&cell_dropout, &mut **r)),
                _ => None,
            };
            let (hs, cell_tape) = params.cells[ch_idx][side_idx].forward(&xs, dropout);

            let (pooled, argmax) = max_pool(&hs, dim);
            concat.as_mut_slice()[offset..offset + dim].copy_from_slice(pooled.as_slice());

            sides.push(SideTape {
                channel: ch_idx,
                side: side_idx,
                ids,
                embed_masks,
                cell: cell_tape,
                argmax,
                steps: hs.len(),
                offset,
                dim,
            });
            offset += dim;
        }
    }
    debug_assert_eq!(offset, cfg.concat_dim());

    let mut pre_hidden = params.w_hidden.matvec(&concat);
    pre_hidden.add_assign(&params.b_hidden);
    let hidden = tanh(&pre_hidden);

    let (hidden_dropped, penult_mask) = match (&mut rng, cfg.dropout_penultimate > 0.0) {
        (Some(r), true) => {
            let mask = dropout_mask(cfg.hidden_dim, cfg.dropout_penultimate, r);
            (crate::numerics::hadamard(&hidden, &mask), Some(mask))
        }
        _ => (hidden.clone(), None),
    };

    let mut logits = params.w_out.matvec(&hidden_dropped);
    logits.add_assign(&params.b_out);
    let probs = softmax(&logits);

    let class = probs.argmax();
    let cross_entropy = -probs[sample.class].max(PROB_FLOOR).ln();

    let prediction = Prediction { probs: probs.clone(), class, cross_entropy };
    let tape = Tape { sides, concat, hidden, penult_mask, hidden_dropped, probs };
    (prediction, tape)
}

/// Exact gradients of this example's cross-entropy term. The penalty
/// contribution is added separately, once per batch, by
/// [`add_penalty_gradient`].
pub fn backward(params: &ModelParams, cfg: &HyperConfig, tape: &Tape, gold: usize) -> Gradients {
    assert!(gold < cfg.n_classes, "gold class {gold} out of range for {} classes", cfg.n_classes);
    let mut grads = Gradients::zeros_like(params);

    // fused softmax + cross-entropy: dJ/dlogits = probs - onehot(gold)
    let mut dlogits = tape.probs.clone();
    dlogits[gold] -= 1.0;

    grads.w_out.add_outer(&dlogits, &tape.hidden_dropped);
    grads.b_out.add_assign(&dlogits);
    let dhidden_dropped = params.w_out.matvec_t(&dlogits);

    let dhidden = match &tape.penult_mask {
        Some(m) => crate::numerics::hadamard(&dhidden_dropped, m),
        None => dhidden_dropped,
    };
    let mut da = Vector::zeros(dhidden.len());
    for j in 0..da.len() {
        da[j] = dhidden[j] * (1.0 - tape.hidden[j] * tape.hidden[j]);
    }

    grads.w_hidden.add_outer(&da, &tape.concat);
    grads.b_hidden.add_assign(&da);
    let dconcat = params.w_hidden.matvec_t(&da);

    for side in &tape.sides {
        let slice = Vector::from_slice(&dconcat.as_slice()[side.offset..side.offset + side.dim]);
        let grad_hs = max_pool_backward(&slice, &side.argmax, side.steps, side.dim);
        let (cell_grads, dxs) = params.cells[side.channel][side.side].backward(&side.cell, &grad_hs);
        grads.cells[side.channel][side.side].add_assign(&cell_grads);

        let rows = &mut grads.embeddings[side.channel];
        for (t, dx) in dxs.iter().enumerate() {
            let dx = match &side.embed_masks {
                Some(masks) => crate::numerics::hadamard(dx, &masks[t]),
                None => dx.clone(),
            };
            rows.entry(side.ids[t])
                .and_modify(|acc| acc.add_assign(&dx))
                .or_insert(dx);
        }
    }
    grads
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SDPLCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with everything needed to run it on new text.
#[derive(Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub cfg: HyperConfig,
    pub vocabs: Vocabs,
    pub seed: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u64(buf, s.len() as u64);
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, data: &[f64]) {
    put_u64(buf, data.len() as u64);
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_string_list(buf: &mut Vec<u8>, items: &[String]) {
    put_u64(buf, items.len() as u64);
    for s in items {
        put_str(buf, s);
    }
}

fn put_pairs(buf: &mut Vec<u8>, pairs: &[(String, String)]) {
    put_u64(buf, pairs.len() as u64);
    for (k, v) in pairs {
        put_str(buf, k);
        put_str(buf, v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8 in string field".into()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        let mut out = Vec::with_capacity(len.min(self.buf.len() / 8 + 1));
        for _ in 0..len {
            out.push(f64::from_le_bytes(self.take(8)?.try_into().unwrap()));
        }
        Ok(out)
    }

    fn string_list(&mut self) -> Result<Vec<String>> {
        let len = self.u64()? as usize;
        (0..len).map(|_| self.str()).collect()
    }

    fn pairs(&mut self) -> Result<Vec<(String, String)>> {
        let len = self.u64()? as usize;
        (0..len).map(|_| Ok((self.str()?, self.str()?))).collect()
    }
}

/// Serializes params + config + vocabularies with a format version and a
/// trailing SHA-256 checksum, written atomically. Same inputs always
/// produce the same bytes.
pub fn save_checkpoint(params: &ModelParams, cfg: &HyperConfig, vocabs: &Vocabs, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u64(&mut buf, cfg.seed);
    put_str(&mut buf, &config::to_text(cfg));

    for vocab in [&vocabs.word, &vocabs.pos, &vocabs.gr, &vocabs.hypernym] {
        put_string_list(&mut buf, vocab.symbols());
    }
    put_pairs(&mut buf, &vocabs.maps.pos.to_pairs());
    put_pairs(&mut buf, &vocabs.maps.gr.to_pairs());
    put_string_list(&mut buf, &vocabs.maps.hypernyms.to_sorted());

    for table in &params.embeddings {
        put_f64s(&mut buf, table.vectors.as_slice());
    }
    for t in params.dense_tensors() {
        put_f64s(&mut buf, t.data);
    }

    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    crate::write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < CHECKPOINT_MAGIC.len() || !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    if bytes.len() < CHECKPOINT_MAGIC.len() + 32 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (body, stored_digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != stored_digest {
        return Err(Error::Checkpoint("checksum mismatch: file corrupted".into()));
    }

    let mut r = Reader { buf: body, pos: CHECKPOINT_MAGIC.len() };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let seed = r.u64()?;
    let cfg_text = r.str()?;
    let cfg = config::from_text(&cfg_text)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;

    let word = Vocab::from_symbols(ChannelKind::Word, r.string_list()?);
    let pos = Vocab::from_symbols(ChannelKind::Pos, r.string_list()?);
    let gr = Vocab::from_symbols(ChannelKind::Gr, r.string_list()?);
    let hypernym = Vocab::from_symbols(ChannelKind::Hypernym, r.string_list()?);
    let maps = ChannelMaps {
        pos: SymbolMap::from_pairs(r.pairs()?),
        gr: SymbolMap::from_pairs(r.pairs()?),
        hypernyms: SymbolSet::from_list(r.string_list()?),
    };
    let vocabs = Vocabs { word, pos, gr, hypernym, maps };

    let mut params = ModelParams::zeros(&cfg, &vocabs);
    for table in &mut params.embeddings {
        let vals = r.f64s()?;
        let dst = table.vectors.as_mut_slice();
        if vals.len() != dst.len() {
            return Err(Error::Checkpoint(format!(
                "embedding table for {}: expected {} values, found {}",
                table.kind,
                dst.len(),
                vals.len()
            )));
        }
        dst.copy_from_slice(&vals);
    }
    for t in params.dense_tensors_mut() {
        let vals = r.f64s()?;
        if vals.len() != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {}: expected {} values, found {}",
                t.name,
                t.data.len(),
                vals.len()
            )));
        }
        t.data.copy_from_slice(&vals);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint { params, cfg, vocabs, seed })
}
