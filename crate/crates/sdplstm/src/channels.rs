//! Input channels: vocabularies, coarsening maps, embedding tables, and
//! dropout masks.
//!
//! Four channels feed the recurrent nets: surface words, part-of-speech
//! tags, grammatical relations, and WordNet hypernym categories. POS tags
//! and relation labels are first coarsened through shipped mapping files
//! (15 and 19 classes respectively); hypernyms are restricted to a fixed
//! 41-category inventory. Every vocabulary reserves index 0 for the
//! unknown symbol, so a table over the shipped POS classes has at most 16
//! rows, relations at most 20, hypernyms at most 42.

use crate::deptree::DepSentence;
use crate::numerics::{Matrix, Rng, Vector};
use crate::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

pub const UNK: &str = "<unk>";
pub const MAX_POS_CLASSES: usize = 15;
pub const MAX_GR_CLASSES: usize = 19;
pub const MAX_HYPERNYM_CLASSES: usize = 41;

const DEFAULT_POS_MAP: &str = include_str!("../data/pos_classes.tsv");
const DEFAULT_GR_MAP: &str = include_str!("../data/gr_classes.tsv");
const DEFAULT_HYPERNYMS: &str = include_str!("../data/hypernym_classes.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Word,
    Pos,
    Gr,
    Hypernym,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] =
        [ChannelKind::Word, ChannelKind::Pos, ChannelKind::Gr, ChannelKind::Hypernym];
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // "wordnet" is the user-facing name of the hypernym channel
        let s = match self {
            ChannelKind::Word => "word",
            ChannelKind::Pos => "pos",
            ChannelKind::Gr => "gr",
            ChannelKind::Hypernym => "wordnet",
        };
        f.write_str(s)
    }
}

impl FromStr for ChannelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(ChannelKind::Word),
            "pos" => Ok(ChannelKind::Pos),
            "gr" => Ok(ChannelKind::Gr),
            "wordnet" | "hypernym" => Ok(ChannelKind::Hypernym),
            _ => Err(Error::Config(format!("unknown channel {s:?}"))),
        }
    }
}

/// Which optional channels are active. The word channel is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelSet {
    pub pos: bool,
    pub gr: bool,
    pub hypernym: bool,
}

impl ChannelSet {
    pub fn all() -> Self {
        ChannelSet { pos: true, gr: true, hypernym: true }
    }

    pub fn word_only() -> Self {
        ChannelSet { pos: false, gr: false, hypernym: false }
    }

    pub fn contains(&self, kind: ChannelKind) -> bool {
        match kind {
            ChannelKind::Word => true,
            ChannelKind::Pos => self.pos,
            ChannelKind::Gr => self.gr,
            ChannelKind::Hypernym => self.hypernym,
        }
    }

    /// Active channels in canonical order: word, pos, gr, wordnet.
    pub fn enabled(&self) -> Vec<ChannelKind> {
        ChannelKind::ALL.iter().copied().filter(|k| self.contains(*k)).collect()
    }

    /// Parses a comma-separated list such as `word,pos,wordnet`. The word
    /// channel must be listed.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut set = ChannelSet::word_only();
        let mut word_seen = false;
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            match part.parse::<ChannelKind>()? {
                ChannelKind::Word => word_seen = true,
                ChannelKind::Pos => set.pos = true,
                ChannelKind::Gr => set.gr = true,
                ChannelKind::Hypernym => set.hypernym = true,
            }
        }
        if !word_seen {
            return Err(Error::Config(format!("channel list {s:?} must include 'word'")));
        }
        Ok(set)
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.enabled().iter().map(|k| k.to_string()).collect();
        f.write_str(&names.join(","))
    }
}

/// A raw-symbol to coarse-class map loaded from tab-separated lines.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolMap {
    map: HashMap<String, String>,
}

impl SymbolMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (raw, coarse) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, format!("expected 'raw<TAB>coarse', got {line:?}")))?;
            map.insert(raw.to_string(), coarse.to_string());
        }
        Ok(SymbolMap { map })
    }

    pub fn get(&self, raw: &str) -> Option<&str> {
        self.map.get(raw).map(String::as_str)
    }

    /// Number of distinct coarse classes in the codomain.
    pub fn num_classes(&self) -> usize {
        self.map.values().collect::<HashSet<_>>().len()
    }

    /// Canonical listing (sorted by raw symbol) used by the checkpoint
    /// format, so that save -> load -> save is byte-identical.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<_> = self.map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        pairs.sort();
        pairs
    }

    pub fn from_pairs(pairs: Vec<(String, String)>) -> Self {
        SymbolMap { map: pairs.into_iter().collect() }
    }
}

/// A closed symbol inventory (the hypernym categories).
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolSet {
    set: HashSet<String>,
}

impl SymbolSet {
    pub fn parse(text: &str) -> Self {
        let set = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        SymbolSet { set }
    }

    pub fn contains(&self, s: &str) -> bool {
        self.set.contains(s)
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn to_sorted(&self) -> Vec<String> {
        let mut v: Vec<_> = self.set.iter().cloned().collect();
        v.sort();
        v
    }

    pub fn from_list(list: Vec<String>) -> Self {
        SymbolSet { set: list.into_iter().collect() }
    }
}

/// The three coarsening data sets. `Default` loads the shipped files;
/// alternatives can be read from disk for differently annotated corpora.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMaps {
    pub pos: SymbolMap,
    pub gr: SymbolMap,
    pub hypernyms: SymbolSet,
}

impl Default for ChannelMaps {
    fn default() -> Self {
        let maps = ChannelMaps {
            pos: SymbolMap::parse(DEFAULT_POS_MAP).expect("shipped POS map parses"),
            gr: SymbolMap::parse(DEFAULT_GR_MAP).expect("shipped GR map parses"),
            hypernyms: SymbolSet::parse(DEFAULT_HYPERNYMS),
        };
        debug_assert!(maps.pos.num_classes() <= MAX_POS_CLASSES);
        debug_assert!(maps.gr.num_classes() <= MAX_GR_CLASSES);
        debug_assert!(maps.hypernyms.len() <= MAX_HYPERNYM_CLASSES);
        maps
    }
}

/// Symbol-to-index table with the unknown symbol at index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    pub kind: ChannelKind,
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_symbols(kind: ChannelKind, mut symbols: Vec<String>) -> Self {
        if symbols.first().map(String::as_str) != Some(UNK) {
            symbols.insert(0, UNK.to_string());
        }
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocab { kind, symbols, index }
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Index of `symbol`, or the unknown index 0.
    pub fn lookup(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(0)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }
}

/// Builds a vocabulary from a symbol stream: symbols seen at least
/// `min_count` times, most frequent first, ties broken lexicographically,
/// with the unknown symbol prepended at index 0.
pub fn build_vocab<'a, I>(kind: ChannelKind, symbols: I, min_count: usize) -> Vocab
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in symbols {
        *counts.entry(s).or_insert(0) += 1;
    }
    let mut entries: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let symbols = entries.into_iter().map(|(s, _)| s.to_string()).collect();
    Vocab::from_symbols(kind, symbols)
}

/// The four vocabularies plus the coarsening maps they were built with.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabs {
    pub word: Vocab,
    pub pos: Vocab,
    pub gr: Vocab,
    pub hypernym: Vocab,
    pub maps: ChannelMaps,
}

impl Vocabs {
    /// Builds all four vocabularies from a corpus. `min_count` applies to
    /// the open word vocabulary; the closed channels keep every coarse
    /// class they see.
    pub fn build(corpus: &[DepSentence], min_count: usize, maps: ChannelMaps) -> Self {
        let tokens = || corpus.iter().flat_map(|s| s.tokens.iter());

        let word = build_vocab(ChannelKind::Word, tokens().map(|t| t.form.as_str()), min_count);
        let pos = build_vocab(
            ChannelKind::Pos,
            tokens().filter_map(|t| maps.pos.get(&t.pos)),
            1,
        );
        let gr = build_vocab(
            ChannelKind::Gr,
            tokens().filter_map(|t| maps.gr.get(&t.deprel)),
            1,
        );
        let hypernym = build_vocab(
            ChannelKind::Hypernym,
            tokens()
                .filter_map(|t| t.hypernym.as_deref())
                .filter(|h| maps.hypernyms.contains(h)),
            1,
        );

        assert!(pos.size() <= MAX_POS_CLASSES + 1, "pos vocab exceeds class bound");
        assert!(gr.size() <= MAX_GR_CLASSES + 1, "gr vocab exceeds class bound");
        assert!(hypernym.size() <= MAX_HYPERNYM_CLASSES + 1, "hypernym vocab exceeds class bound");

        Vocabs { word, pos, gr, hypernym, maps }
    }

    pub fn by_kind(&self, kind: ChannelKind) -> &Vocab {
        match kind {
            ChannelKind::Word => &self.word,
            ChannelKind::Pos => &self.pos,
            ChannelKind::Gr => &self.gr,
            ChannelKind::Hypernym => &self.hypernym,
        }
    }

    pub fn lookup_pos(&self, raw: &str) -> usize {
        self.maps.pos.get(raw).map_or(0, |c| self.pos.lookup(c))
    }

    pub fn lookup_gr(&self, raw: &str) -> usize {
        self.maps.gr.get(raw).map_or(0, |c| self.gr.lookup(c))
    }

    pub fn lookup_hypernym(&self, raw: Option<&str>) -> usize {
        match raw {
            Some(h) if self.maps.hypernyms.contains(h) => self.hypernym.lookup(h),
            _ => 0,
        }
    }
}

/// One embedding row per vocabulary entry, including the unknown row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub kind: ChannelKind,
    pub vectors: Matrix,
}

impl EmbeddingTable {
    /// Random initialization, uniform in [-0.05, 0.05].
    pub fn new_random(kind: ChannelKind, rows: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut vectors = Matrix::zeros(rows, dim);
        vectors.fill_uniform(rng, -0.05, 0.05);
        EmbeddingTable { kind, vectors }
    }

    pub fn rows(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Copies out the embedding for one index. Out-of-range indices are
    /// programming errors and panic.
    pub fn embed(&self, index: usize) -> Vector {
        assert!(
            index < self.rows(),
            "embedding index {index} out of range for {} {} rows",
            self.rows(),
            self.kind
        );
        Vector::from_slice(self.vectors.row(index))
    }
}

/// Loads word2vec text-format vectors into rows of `table` for words that
/// appear in `vocab`. The first line is `<count> <dim>`; each following
/// line is a word and `dim` floats. Returns how many rows were loaded.
pub fn load_pretrained(table: &mut EmbeddingTable, vocab: &Vocab, text: &str) -> Result<usize> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data("empty pretrained embedding file".into()))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, format!("bad embedding header {header:?}")))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, format!("bad embedding header {header:?}")))?;
    if dim != table.dim() {
        return Err(Error::Data(format!(
            "pretrained dimension {dim} does not match configured dimension {}",
            table.dim()
        )));
    }

    let mut loaded = 0;
    let mut rows = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| Error::parse(i + 1, "missing word"))?;
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse).collect();
        let values =
            values.map_err(|e| Error::parse(i + 1, format!("bad float: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                i + 1,
                format!("expected {dim} values, got {}", values.len()),
            ));
        }
        if let Some(row) = vocab.get(word) {
            table.vectors.row_mut(row).copy_from_slice(&values);
            loaded += 1;
        }
    }
    if rows != count {
        return Err(Error::Data(format!(
            "embedding header promises {count} rows, file has {rows}"
        )));
    }
    Ok(loaded)
}

/// Writes a table back out in word2vec text format (used by round-trip
/// tests and for exporting trained embeddings).
pub fn write_word2vec(table: &EmbeddingTable, vocab: &Vocab) -> String {
    let mut out = format!("{} {}\n", vocab.size(), table.dim());
    for i in 0..vocab.size() {
        out.push_str(vocab.symbol(i));
        for v in table.vectors.row(i) {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Samples an inverted-dropout mask: each coordinate is 0 with
/// probability `rate`, otherwise `1/(1-rate)`, so the mask preserves the
/// input in expectation. Inference applies no mask at all.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vector {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    let keep_scale = 1.0 / (1.0 - rate);
    Vector((0..len).map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale }).collect())
}

/// Training-mode embedding dropout; the identity when `training` is false
/// or the rate is zero.
pub fn dropout_embed(v: &Vector, rate: f64, rng: &mut Rng, training: bool) -> Vector {
    if !training || rate == 0.0 {
        return v.clone();
    }
    let mask = dropout_mask(v.len(), rate, rng);
    crate::numerics::hadamard(v, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_respects_min_count_and_order() {
        // freq: b:3, a:2, c:1 with min_count 2 -> [<unk>, b, a]
        let v = build_vocab(ChannelKind::Word, ["a", "b", "b", "a", "b", "c"], 2);
        assert_eq!(v.symbols(), &["<unk>", "b", "a"]);
        assert_eq!(v.lookup("b"), 1);
        assert_eq!(v.lookup("c"), 0);
        assert_eq!(v.lookup("never-seen"), 0);
    }

    #[test]
    fn vocab_ties_break_lexicographically() {
        let v = build_vocab(ChannelKind::Word, ["z", "m", "a"], 1);
        assert_eq!(v.symbols(), &["<unk>", "a", "m", "z"]);
    }

    #[test]
    fn shipped_maps_respect_class_bounds() {
        let maps = ChannelMaps::default();
        assert!(maps.pos.num_classes() <= MAX_POS_CLASSES);
        assert_eq!(maps.pos.num_classes(), 15);
        assert!(maps.gr.num_classes() <= MAX_GR_CLASSES);
        assert_eq!(maps.gr.num_classes(), 19);
        assert_eq!(maps.hypernyms.len(), 41);
        assert_eq!(maps.pos.get("NN"), Some("NOUN"));
        assert_eq!(maps.pos.get("ZZZ"), None);
        assert_eq!(maps.gr.get("nsubjpass"), Some("SUBJ"));
        assert!(maps.hypernyms.contains("verb.motion"));
        assert!(!maps.hypernyms.contains("adj.all"));
    }

    #[test]
    fn symbol_map_round_trips_through_pairs() {
        let maps = ChannelMaps::default();
        let again = SymbolMap::from_pairs(maps.gr.to_pairs());
        assert_eq!(again, maps.gr);
    }

    #[test]
    fn embedding_rows_come_back_exactly() {
        let mut rng = Rng::seeded(1);
        let t = EmbeddingTable::new_random(ChannelKind::Pos, 4, 3, &mut rng);
        let row = t.embed(2);
        assert_eq!(row.as_slice(), t.vectors.row(2));
        for v in row.as_slice() {
            assert!((-0.05..=0.05).contains(v));
        }
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn embedding_index_out_of_range_panics() {
        let mut rng = Rng::seeded(1);
        let t = EmbeddingTable::new_random(ChannelKind::Word, 4, 3, &mut rng);
        t.embed(4);
    }

    #[test]
    fn same_seed_same_table() {
        let a = EmbeddingTable::new_random(ChannelKind::Word, 10, 8, &mut Rng::seeded(7));
        let b = EmbeddingTable::new_random(ChannelKind::Word, 10, 8, &mut Rng::seeded(7));
        assert_eq!(a, b);
    }

    #[test]
    fn pretrained_round_trip_is_exact() {
        let vocab = build_vocab(ChannelKind::Word, ["alpha", "beta", "gamma"], 1);
        let mut rng = Rng::seeded(3);
        let table = EmbeddingTable::new_random(ChannelKind::Word, vocab.size(), 5, &mut rng);
        let text = write_word2vec(&table, &vocab);

        let mut reloaded = EmbeddingTable::new_random(ChannelKind::Word, vocab.size(), 5, &mut Rng::seeded(99));
        let n = load_pretrained(&mut reloaded, &vocab, &text).unwrap();
        assert_eq!(n, vocab.size());
        for i in 0..vocab.size() {
            for (a, b) in table.vectors.row(i).iter().zip(reloaded.vectors.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pretrained_dimension_mismatch_rejected() {
        let vocab = build_vocab(ChannelKind::Word, ["a"], 1);
        let mut rng = Rng::seeded(3);
        let mut table = EmbeddingTable::new_random(ChannelKind::Word, vocab.size(), 4, &mut rng);
        let err = load_pretrained(&mut table, &vocab, "1 3\na 0.1 0.2 0.3\n").unwrap_err();
        assert!(err.to_string().contains("dimension"), "{err}");
    }

    #[test]
    fn pretrained_malformed_line_reports_line_number() {
        let vocab = build_vocab(ChannelKind::Word, ["a", "b"], 1);
        let mut rng = Rng::seeded(3);
        let mut table = EmbeddingTable::new_random(ChannelKind::Word, vocab.size(), 2, &mut rng);
        let err = load_pretrained(&mut table, &vocab, "2 2\na 0.1 0.2\nb 0.3 oops\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3"), "{err}");
    }

    #[test]
    fn pretrained_header_count_checked() {
        let vocab = build_vocab(ChannelKind::Word, ["a"], 1);
        let mut rng = Rng::seeded(3);
        let mut table = EmbeddingTable::new_random(ChannelKind::Word, vocab.size(), 2, &mut rng);
        let err = load_pretrained(&mut table, &vocab, "5 2\na 0.1 0.2\n").unwrap_err();
        assert!(err.to_string().contains("promises"), "{err}");
    }

    #[test]
    fn dropout_is_identity_when_off() {
        let v = Vector::from_slice(&[1.0, -2.0, 3.0]);
        let mut rng = Rng::seeded(5);
        assert_eq!(dropout_embed(&v, 0.0, &mut rng, true), v);
        assert_eq!(dropout_embed(&v, 0.5, &mut rng, false), v);
    }

    #[test]
    #[should_panic(expected = "outside [0, 1)")]
    fn dropout_rate_one_rejected() {
        dropout_mask(4, 1.0, &mut Rng::seeded(1));
    }

    #[test]
    fn dropout_zero_fraction_and_scaling() {
        let mut rng = Rng::seeded(11);
        let n = 100_000;
        let mask = dropout_mask(n, 0.5, &mut rng);
        let zeros = mask.as_slice().iter().filter(|&&m| m == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "zeroed fraction {frac}");
        for &m in mask.as_slice() {
            assert!(m == 0.0 || m == 2.0);
        }
        // mean of the mask is ~1, so expectation is preserved
        let mean = mask.sum() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mask mean {mean}");
    }
}
