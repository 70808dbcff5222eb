//! Relation classification over shortest dependency paths.
//!
//! A sentence with two marked entities is reduced to the shortest path
//! between them in its dependency tree, the path is split at the common
//! ancestor into two entity-to-ancestor halves, and each half is read
//! bottom-up by per-channel recurrent nets (words, POS tags, grammatical
//! relations, WordNet hypernyms). Max-pooled hidden states feed a dense
//! layer and a softmax over the relation inventory.
//!
//! Module map:
//! - [`numerics`]: vectors, matrices, activations, seeded RNG
//! - [`label`]: the closed relation inventory (9 directed types + Other)
//! - [`deptree`]: sentence format, validation, path extraction
//! - [`channels`]: vocabularies, embeddings, dropout masks
//! - [`recurrent`]: LSTM / plain-RNN cells with full backprop through time
//! - [`model`]: end-to-end forward/backward, objective, checkpoints
//! - [`training`]: SGD loop, early stopping, gradient verification
//! - [`evaluation`]: confusion matrix, macro-F1, ablation grids
//! - [`synth`]: synthetic corpus generator for end-to-end checks
//! - [`config`] and [`cli`]: flat key=value config files and the command
//!   entry points behind the `sdplstm` binary

pub mod channels;
pub mod cli;
pub mod config;
pub mod deptree;
pub mod evaluation;
pub mod label;
pub mod model;
pub mod numerics;
pub mod recurrent;
pub mod synth;
pub mod training;

use std::path::PathBuf;

/// Crate-wide error. The CLI maps variants onto process exit codes:
/// config/usage problems exit 1, data problems exit 2, numerical
/// failures exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Writes `bytes` to a sibling temp file and renames it into place, so
/// `path` never holds a partial write. Rename is atomic within one
/// filesystem, which sibling placement guarantees.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
