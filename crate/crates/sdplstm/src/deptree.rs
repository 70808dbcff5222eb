//! Dependency-annotated sentences with two marked entities, and the
//! shortest-path machinery over them.
//!
//! # Input format
//!
//! A file is a sequence of blank-line-terminated blocks:
//!
//! ```text
//! #rel Entity-Destination(e1,e2)
//! #e1 5 5
//! #e2 12 12
//! 1<TAB>A<TAB>DT<TAB>_<TAB>3<TAB>det
//! ...
//! ```
//!
//! The three header lines give the relation label and the two entity
//! spans (1-based, inclusive). Token lines carry six tab-separated
//! columns: ID, FORM, POS, HYPERNYM (`_` when absent), HEAD (0 for the
//! root), DEPREL. Every block must encode a single-rooted acyclic tree,
//! and the entity spans must be nonempty, in bounds, and disjoint.
//!
//! In a tree the path between two nodes is unique, so the shortest
//! dependency path is found by walking both entity heads to the root and
//! splitting at the lowest common ancestor. Each half is kept bottom-up,
//! entity first, ancestor last, and the ancestor appears in both halves.

use crate::channels::Vocabs;
use crate::label::Label;
use crate::{Error, Result};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::Range;

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub form: String,
    pub pos: String,
    pub hypernym: Option<String>,
    /// 0-based index of the head token; `None` for the root.
    pub head: Option<usize>,
    pub deprel: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepSentence {
    pub tokens: Vec<Token>,
    /// 0-based half-open spans.
    pub e1: Range<usize>,
    pub e2: Range<usize>,
    pub relation: Label,
}

/// Shortest dependency path split at the lowest common ancestor.
///
/// Both node lists run bottom-up from an entity head to the ancestor,
/// which is the last element of each and is shared. `left_rels[i]` labels
/// the edge from `left_nodes[i]` to `left_nodes[i+1]`, so each relation
/// list is one shorter than its node list.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpPath {
    pub left_nodes: Vec<usize>,
    pub right_nodes: Vec<usize>,
    pub left_rels: Vec<String>,
    pub right_rels: Vec<String>,
    pub ancestor: usize,
}

/// Per-channel vocabulary index sequences for one sub-path.
///
/// `word`, `pos` and `hypernym` have one entry per path node; `gr` has
/// one entry per edge and is therefore one shorter (empty for a
/// single-node sub-path).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSeqs {
    pub word: Vec<usize>,
    pub pos: Vec<usize>,
    pub gr: Vec<usize>,
    pub hypernym: Vec<usize>,
}

/// A network-ready example: both sub-paths as index sequences plus the
/// gold class index.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpSample {
    pub left: ChannelSeqs,
    pub right: ChannelSeqs,
    pub class: usize,
}

impl SdpSample {
    /// The undivided entity-to-entity path, for the full-path model
    /// variant: left half followed by the reversed right half, with the
    /// shared ancestor appearing once.
    pub fn full_channels(&self) -> ChannelSeqs {
        fn join(left: &[usize], right: &[usize], drop_shared: bool) -> Vec<usize> {
            let mut out = left.to_vec();
            let skip = usize::from(drop_shared);
            out.extend(right.iter().rev().skip(skip));
            out
        }
        ChannelSeqs {
            word: join(&self.left.word, &self.right.word, true),
            pos: join(&self.left.pos, &self.right.pos, true),
            gr: join(&self.left.gr, &self.right.gr, false),
            hypernym: join(&self.left.hypernym, &self.right.hypernym, true),
        }
    }
}

/// Parses a whole file of sentence blocks. Errors carry the 1-based line
/// number of the offending input line.
pub fn parse_sdpc(text: &str) -> Result<Vec<DepSentence>> {
    let mut sentences = Vec::new();
    let mut lines = text.lines().enumerate().peekable();

    while let Some(&(idx, line)) = lines.peek() {
        if line.trim().is_empty() {
            lines.next();
            continue;
        }
        let block_start = idx + 1;
        let mut block = Vec::new();
        while let Some(&(i, l)) = lines.peek() {
            if l.trim().is_empty() {
                break;
            }
            block.push((i + 1, l));
            lines.next();
        }
        sentences.push(parse_block(block_start, &block)?);
    }
    Ok(sentences)
}

fn parse_block(start_line: usize, lines: &[(usize, &str)]) -> Result<DepSentence> {
    if lines.len() < 4 {
        return Err(Error::parse(
            start_line,
            "incomplete block: need #rel, #e1, #e2 and at least one token line",
        ));
    }

    let (rel_line, rel_text) = lines[0];
    let relation = rel_text
        .strip_prefix("#rel ")
        .ok_or_else(|| Error::parse(rel_line, format!("expected '#rel <LABEL>', got {rel_text:?}")))?
        .trim()
        .parse::<Label>()
        .map_err(|e| Error::parse(rel_line, e.to_string()))?;

    let (e1_line, e1_text) = lines[1];
    let e1_raw = parse_span_header(e1_line, e1_text, "#e1")?;
    let (e2_line, e2_text) = lines[2];
    let e2_raw = parse_span_header(e2_line, e2_text, "#e2")?;

    let mut tokens = Vec::new();
    let mut heads_raw = Vec::new();
    for (offset, &(line_no, text)) in lines[3..].iter().enumerate() {
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::parse(
                line_no,
                format!("expected 6 tab-separated columns, got {}", cols.len()),
            ));
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad token id {:?}", cols[0])))?;
        if id != offset + 1 {
            return Err(Error::parse(
                line_no,
                format!("token ids must be sequential from 1, expected {}, got {id}", offset + 1),
            ));
        }
        let head: usize = cols[4]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad head {:?}", cols[4])))?;
        heads_raw.push((line_no, head));
        tokens.push(Token {
            form: cols[1].to_string(),
            pos: cols[2].to_string(),
            hypernym: if cols[3] == "_" { None } else { Some(cols[3].to_string()) },
            head: None, // fixed up below once the block length is known
            deprel: cols[5].to_string(),
        });
    }

    let n = tokens.len();
    let mut root_seen = false;
    for (i, &(line_no, head)) in heads_raw.iter().enumerate() {
        if head == 0 {
            if root_seen {
                return Err(Error::parse(line_no, "multiple roots"));
            }
            root_seen = true;
        } else if head > n {
            return Err(Error::parse(
                line_no,
                format!("head {head} out of range for {n} tokens"),
            ));
        } else {
            tokens[i].head = Some(head - 1);
        }
    }
    if !root_seen {
        return Err(Error::parse(start_line, "no root token (head 0) in block"));
    }

    // Cycle check: walk each token's head chain, remembering the nodes
    // visited on this walk; revisiting one means it sits on a cycle.
    for start in 0..n {
        let mut visited = HashSet::new();
        let mut cur = start;
        while let Some(h) = tokens[cur].head {
            if !visited.insert(cur) {
                return Err(Error::parse(heads_raw[cur].0, "head cycle"));
            }
            cur = h;
        }
    }

    let e1 = check_span(e1_line, e1_raw, n)?;
    let e2 = check_span(e2_line, e2_raw, n)?;
    if e1.start < e2.end && e2.start < e1.end {
        return Err(Error::parse(e2_line, "entity spans overlap"));
    }

    Ok(DepSentence { tokens, e1, e2, relation })
}

fn parse_span_header(line_no: usize, text: &str, tag: &str) -> Result<(usize, usize)> {
    let rest = text
        .strip_prefix(tag)
        .ok_or_else(|| Error::parse(line_no, format!("expected '{tag} <start> <end>', got {text:?}")))?;
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::parse(line_no, format!("expected '{tag} <start> <end>', got {text:?}")));
    }
    let start = parts[0]
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad span start {:?}", parts[0])))?;
    let end = parts[1]
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad span end {:?}", parts[1])))?;
    Ok((start, end))
}

fn check_span(line_no: usize, (start, end): (usize, usize), n: usize) -> Result<Range<usize>> {
    if start == 0 || end == 0 || start > end || end > n {
        return Err(Error::parse(
            line_no,
            format!("bad entity span {start} {end} for {n} tokens"),
        ));
    }
    Ok(start - 1..end)
}

/// Renders a sentence back into block form; `parse_sdpc` on the result
/// reproduces the sentence field for field.
pub fn to_sdpc(sent: &DepSentence) -> String {
    let mut out = String::new();
    writeln!(out, "#rel {}", sent.relation).unwrap();
    writeln!(out, "#e1 {} {}", sent.e1.start + 1, sent.e1.end).unwrap();
    writeln!(out, "#e2 {} {}", sent.e2.start + 1, sent.e2.end).unwrap();
    for (i, t) in sent.tokens.iter().enumerate() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            t.form,
            t.pos,
            t.hypernym.as_deref().unwrap_or("_"),
            t.head.map_or(0, |h| h + 1),
            t.deprel
        )
        .unwrap();
    }
    out.push('\n');
    out
}

/// The syntactic head of an entity span: the unique token whose head
/// falls outside the span (or is the root). If several qualify the
/// leftmost is taken, which also guarantees a result on any valid tree.
pub fn entity_head(sent: &DepSentence, span: &Range<usize>) -> usize {
    for i in span.clone() {
        match sent.tokens[i].head {
            None => return i,
            Some(h) if !span.contains(&h) => return i,
            Some(_) => {}
        }
    }
    unreachable!("a tree restricted to a span always has an outward edge");
}

/// Extracts the shortest dependency path between the two entity heads,
/// split at the lowest common ancestor.
pub fn extract_sdp(sent: &DepSentence) -> SdpPath {
    let h1 = entity_head(sent, &sent.e1);
    let h2 = entity_head(sent, &sent.e2);

    let chain = |mut node: usize| {
        let mut out = vec![node];
        while let Some(h) = sent.tokens[node].head {
            out.push(h);
            node = h;
        }
        out
    };

    let left_chain = chain(h1);
    let left_set: HashSet<usize> = left_chain.iter().copied().collect();
    let mut right_nodes = Vec::new();
    let mut ancestor = h2;
    for node in chain(h2) {
        right_nodes.push(node);
        if left_set.contains(&node) {
            ancestor = node;
            break;
        }
    }
    let left_nodes: Vec<usize> = left_chain
        .iter()
        .copied()
        .take_while(|&n| n != ancestor)
        .chain(std::iter::once(ancestor))
        .collect();

    let rels = |nodes: &[usize]| {
        nodes[..nodes.len() - 1].iter().map(|&n| sent.tokens[n].deprel.clone()).collect()
    };
    let left_rels = rels(&left_nodes);
    let right_rels = rels(&right_nodes);

    debug_assert_eq!(left_nodes.last(), right_nodes.last());
    SdpPath { left_nodes, right_nodes, left_rels, right_rels, ancestor }
}

/// Maps a path onto per-channel vocabulary index sequences. Symbols
/// missing from a vocabulary (or outside the coarsening maps) become the
/// unknown index.
pub fn to_channel_sequences(sent: &DepSentence, path: &SdpPath, vocabs: &Vocabs) -> SdpSample {
    let seqs = |nodes: &[usize], rels: &[String]| ChannelSeqs {
        word: nodes.iter().map(|&n| vocabs.word.lookup(&sent.tokens[n].form)).collect(),
        pos: nodes.iter().map(|&n| vocabs.lookup_pos(&sent.tokens[n].pos)).collect(),
        gr: rels.iter().map(|r| vocabs.lookup_gr(r)).collect(),
        hypernym: nodes
            .iter()
            .map(|&n| vocabs.lookup_hypernym(sent.tokens[n].hypernym.as_deref()))
            .collect(),
    };
    SdpSample {
        left: seqs(&path.left_nodes, &path.left_rels),
        right: seqs(&path.right_nodes, &path.right_rels),
        class: sent.relation.index(),
    }
}
