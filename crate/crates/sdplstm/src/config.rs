//! Flat `key=value` run configuration.
//!
//! One setting per line; blank lines and `#` comments are ignored.
//! Unknown and duplicate keys are errors, so typos fail loudly instead
//! of silently training with defaults. Serialization uses a fixed key
//! order and shortest round-trip float formatting, which makes the text
//! embeddable in checkpoints byte-for-byte reproducibly.
//!
//! Precedence is handled by the caller: start from defaults, apply a
//! config file, then apply command-line overrides.

use std::path::Path;

use crate::channels::ChannelSet;
use crate::model::HyperConfig;
use crate::recurrent::CellTargets;
use crate::{Error, Result};

/// All recognized keys, in canonical serialization order.
const KEYS: &[&str] = &[
    "cell",
    "path",
    "channels",
    "word_dim",
    "pos_dim",
    "gr_dim",
    "hypernym_dim",
    "hidden_dim",
    "n_classes",
    "lambda",
    "learning_rate",
    "batch_size",
    "epochs",
    "patience",
    "seed",
    "min_count",
    "dropout_embed",
    "dropout_penultimate",
    "dropout_cell",
    "dropout_cell_targets",
    "grad_clip",
];

pub fn cell_targets_to_string(t: CellTargets) -> String {
    let mut parts = Vec::new();
    for (on, name) in [(t.i, "i"), (t.g, "g"), (t.o, "o"), (t.c, "c"), (t.h, "h")] {
        if on {
            parts.push(name);
        }
    }
    parts.join(",")
}

/// Parses a comma list over {i, g, o, c, h}; the forget gate is never a
/// dropout site. An empty string selects nothing.
pub fn parse_cell_targets(s: &str) -> Result<CellTargets> {
    let mut t = CellTargets::none();
    if s.trim().is_empty() {
        return Ok(t);
    }
    for part in s.split(',') {
        let slot = match part.trim() {
            "i" => &mut t.i,
            "g" => &mut t.g,
            "o" => &mut t.o,
            "c" => &mut t.c,
            "h" => &mut t.h,
            other => {
                return Err(Error::Config(format!(
                    "unknown cell dropout target {other:?}, expected a subset of i,g,o,c,h"
                )))
            }
        };
        if *slot {
            return Err(Error::Config(format!("duplicate cell dropout target {:?}", part.trim())));
        }
        *slot = true;
    }
    Ok(t)
}

/// Canonical text form; `from_text` inverts it exactly.
pub fn to_text(cfg: &HyperConfig) -> String {
    let mut out = String::new();
    for &key in KEYS {
        let value = match key {
            "cell" => cfg.cell.to_string(),
            "path" => cfg.path.to_string(),
            "channels" => cfg.channels.to_string(),
            "word_dim" => cfg.word_dim.to_string(),
            "pos_dim" => cfg.pos_dim.to_string(),
            "gr_dim" => cfg.gr_dim.to_string(),
            "hypernym_dim" => cfg.hypernym_dim.to_string(),
            "hidden_dim" => cfg.hidden_dim.to_string(),
            "n_classes" => cfg.n_classes.to_string(),
            "lambda" => cfg.lambda.to_string(),
            "learning_rate" => cfg.learning_rate.to_string(),
            "batch_size" => cfg.batch_size.to_string(),
            "epochs" => cfg.epochs.to_string(),
            "patience" => cfg.patience.to_string(),
            "seed" => cfg.seed.to_string(),
            "min_count" => cfg.min_count.to_string(),
            "dropout_embed" => cfg.dropout_embed.to_string(),
            "dropout_penultimate" => cfg.dropout_penultimate.to_string(),
            "dropout_cell" => cfg.dropout_cell.to_string(),
            "dropout_cell_targets" => cell_targets_to_string(cfg.dropout_cell_targets),
            "grad_clip" => cfg.grad_clip.to_string(),
            _ => unreachable!("key list and match arms must agree"),
        };
        out.push_str(key);
        out.push('=');
        out.push_str(&value);
        out.push('\n');
    }
    out
}

fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("config key {key}: invalid value {value:?}: {e}")))
}

/// Applies one setting. Used for both file lines and flag overrides.
pub fn set_key(cfg: &mut HyperConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "cell" => cfg.cell = value.parse()?,
        "path" => cfg.path = value.parse()?,
        "channels" => cfg.channels = ChannelSet::parse_list(value)?,
        "word_dim" => cfg.word_dim = parse_value(key, value)?,
        "pos_dim" => cfg.pos_dim = parse_value(key, value)?,
        "gr_dim" => cfg.gr_dim = parse_value(key, value)?,
        "hypernym_dim" => cfg.hypernym_dim = parse_value(key, value)?,
        "hidden_dim" => cfg.hidden_dim = parse_value(key, value)?,
        "n_classes" => cfg.n_classes = parse_value(key, value)?,
        "lambda" => cfg.lambda = parse_value(key, value)?,
        "learning_rate" => cfg.learning_rate = parse_value(key, value)?,
        "batch_size" => cfg.batch_size = parse_value(key, value)?,
        "epochs" => cfg.epochs = parse_value(key, value)?,
        "patience" => cfg.patience = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "min_count" => cfg.min_count = parse_value(key, value)?,
        "dropout_embed" => cfg.dropout_embed = parse_value(key, value)?,
        "dropout_penultimate" => cfg.dropout_penultimate = parse_value(key, value)?,
        "dropout_cell" => cfg.dropout_cell = parse_value(key, value)?,
        "dropout_cell_targets" => cfg.dropout_cell_targets = parse_cell_targets(value)?,
        "grad_clip" => cfg.grad_clip = parse_value(key, value)?,
        other => return Err(Error::Config(format!("unknown config key {other:?}"))),
    }
    Ok(())
}

/// Applies every line of a config text onto `cfg`.
pub fn apply_text(cfg: &mut HyperConfig, text: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("line {}: duplicate config key {key:?}", i + 1)));
        }
        set_key(cfg, key, value.trim())?;
    }
    Ok(())
}

/// Full parse from defaults, with validation.
pub fn from_text(text: &str) -> Result<HyperConfig> {
    let mut cfg = HyperConfig::default();
    apply_text(&mut cfg, text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_file(path: &Path) -> Result<HyperConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellVariant, PathVariant};

    #[test]
    fn default_config_round_trips() {
        let cfg = HyperConfig::default();
        assert_eq!(from_text(&to_text(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn non_default_config_round_trips_exactly() {
        let mut cfg = HyperConfig::default();
        cfg.cell = CellVariant::Rnn;
        cfg.path = PathVariant::Full;
        cfg.channels = ChannelSet::parse_list("word,pos").unwrap();
        cfg.lambda = 1e-2;
        cfg.learning_rate = 0.3;
        cfg.seed = 7;
        cfg.dropout_cell = 0.1;
        cfg.dropout_cell_targets = parse_cell_targets("i,c").unwrap();
        cfg.grad_clip = 5.0;
        let parsed = from_text(&to_text(&cfg)).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.lambda, 1e-2);
    }

    #[test]
    fn lambda_default_survives_text_round_trip_bit_exactly() {
        let cfg = HyperConfig::default();
        let parsed = from_text(&to_text(&cfg)).unwrap();
        assert_eq!(parsed.lambda.to_bits(), 1e-5_f64.to_bits());
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = from_text("momentum=0.9\n").unwrap_err();
        assert!(err.to_string().contains("momentum"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = from_text("seed=1\nseed=2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let err = from_text("seed=1\nnot a setting\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = from_text("word_dim=many\n").unwrap_err();
        assert!(err.to_string().contains("word_dim"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = from_text("# a comment\n\n  seed=9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn channels_without_word_are_rejected() {
        assert!(from_text("channels=pos,gr\n").unwrap_err().to_string().contains("word"));
    }

    #[test]
    fn validation_runs_after_parsing() {
        assert!(from_text("dropout_embed=1\n").is_err());
        assert!(from_text("batch_size=0\n").is_err());
    }

    #[test]
    fn cell_targets_reject_the_forget_gate_and_duplicates() {
        assert!(parse_cell_targets("f").is_err());
        assert!(parse_cell_targets("i,i").is_err());
        let t = parse_cell_targets("h").unwrap();
        assert!(t.h && !t.i && !t.g && !t.o && !t.c);
        assert_eq!(cell_targets_to_string(t), "h");
        assert_eq!(cell_targets_to_string(parse_cell_targets("").unwrap()), "");
    }

    #[test]
    fn every_known_key_appears_in_serialized_text() {
        let text = to_text(&HyperConfig::default());
        for key in super::KEYS {
            assert!(text.contains(&format!("{key}=")), "missing {key}");
        }
    }
}
