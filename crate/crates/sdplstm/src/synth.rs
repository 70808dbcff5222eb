//! Deterministic synthetic corpus generator.
//!
//! Every sentence is a dependency tree whose entity-to-entity path
//! carries the whole signal. A directed example places one marker word
//! on the path: the marker's identity picks the relation type and the
//! side of the path's apex it lands on picks the direction. The apex
//! index is drawn conditioned on the marker position, so the undivided
//! left-to-right node sequence is identically distributed for both
//! directions and on-path edge labels are all the same symbol. A model
//! that splits the path at the apex sees which half holds the marker; a
//! model that reads the whole path straight through is left guessing
//! the direction. Other examples carry no on-path marker. Off-path
//! distractor tokens, sometimes marker look-alikes, pad the tree
//! without touching the path.

use crate::deptree::{DepSentence, Token};
use crate::label::{Label, RelType};
use crate::numerics::Rng;

pub const CAUSE_MARKER: &str = "because";
pub const DEST_MARKER: &str = "into";
const PATH_DEPREL: &str = "prep";
const FILLER_WORDS: usize = 200;

/// The five labels the generator emits, in round-robin order.
pub const CLASSES: [Label; 5] = [
    Label::Directed { rel: RelType::CauseEffect, e1_first: true },
    Label::Directed { rel: RelType::CauseEffect, e1_first: false },
    Label::Directed { rel: RelType::EntityDestination, e1_first: true },
    Label::Directed { rel: RelType::EntityDestination, e1_first: false },
    Label::Other,
];

fn filler(rng: &mut Rng) -> String {
    format!("w{:03}", rng.below(FILLER_WORDS))
}

struct PathPlan {
    /// Node count, 5 to 8.
    m: usize,
    /// Path position and form of the marker, absent for Other.
    marker: Option<(usize, &'static str)>,
    /// Path position of the apex (the tree root).
    apex: usize,
}

/// Marker positions keep a margin of two nodes from either end, and the
/// apex is sampled from whichever side of the marker matches the
/// direction. Both sides are always non-empty, so marker position alone
/// says nothing about direction.
fn plan_path(rng: &mut Rng, label: Label) -> PathPlan {
    let m = 5 + rng.below(4);
    match label {
        Label::Other => PathPlan { m, marker: None, apex: 1 + rng.below(m - 2) },
        Label::Directed { rel, e1_first } => {
            let p = 2 + rng.below(m - 4);
            let apex = if e1_first {
                p + 1 + rng.below(m - 2 - p)
            } else {
                1 + rng.below(p - 1)
            };
            let form = if rel == RelType::CauseEffect { CAUSE_MARKER } else { DEST_MARKER };
            PathPlan { m, marker: Some((p, form)), apex }
        }
    }
}

struct Draft {
    form: String,
    pos: String,
    hypernym: Option<String>,
    head_path: Option<usize>,
    deprel: String,
}

fn build_sentence(rng: &mut Rng, label: Label) -> DepSentence {
    let plan = plan_path(rng, label);
    let m = plan.m;

    let mut path: Vec<Draft> = (0..m)
        .map(|i| {
            let form = filler(rng);
            let pos = if i == 0 || i == m - 1 {
                "NN".to_string()
            } else {
                ["NN", "VB", "JJ"][rng.below(3)].to_string()
            };
            let hypernym = match pos.as_str() {
                "NN" => Some(["noun.artifact", "noun.substance", "noun.location"][rng.below(3)].to_string()),
                "VB" => Some(["verb.motion", "verb.contact"][rng.below(2)].to_string()),
                _ => None,
            };
            let head_path = if i == plan.apex {
                None
            } else if i < plan.apex {
                Some(i + 1)
            } else {
                Some(i - 1)
            };
            let deprel = if i == plan.apex { "root".to_string() } else { PATH_DEPREL.to_string() };
            Draft { form, pos, hypernym, head_path, deprel }
        })
        .collect();
    if let Some((p, form)) = plan.marker {
        path[p].form = form.to_string();
        path[p].pos = "IN".to_string();
        path[p].hypernym = None;
    }

    let extra = rng.below(16 - m);
    let mut distractors = Vec::with_capacity(extra);
    for _ in 0..extra {
        let lookalike = rng.next_f64() < 0.25;
        let (form, pos) = if lookalike {
            ([CAUSE_MARKER, DEST_MARKER][rng.below(2)].to_string(), "IN".to_string())
        } else {
            (filler(rng), ["DT", "JJ", "RB"][rng.below(3)].to_string())
        };
        let deprel = ["det", "amod", "advmod", "nn"][rng.below(4)].to_string();
        let attach = rng.below(m);
        distractors.push((form, pos, deprel, attach));
    }

    #[derive(Clone, Copy)]
    enum Slot {
        Path(usize),
        Extra(usize),
    }
    let mut slots: Vec<Slot> = (0..m).map(Slot::Path).collect();
    for d in 0..extra {
        let at = rng.below(slots.len() + 1);
        slots.insert(at, Slot::Extra(d));
    }
    let mut path_pos = vec![0usize; m];
    for (i, slot) in slots.iter().enumerate() {
        if let Slot::Path(p) = slot {
            path_pos[*p] = i;
        }
    }

    let tokens: Vec<Token> = slots
        .iter()
        .map(|slot| match *slot {
            Slot::Path(i) => {
                let d = &path[i];
                Token {
                    form: d.form.clone(),
                    pos: d.pos.clone(),
                    hypernym: d.hypernym.clone(),
                    head: d.head_path.map(|h| path_pos[h]),
                    deprel: d.deprel.clone(),
                }
            }
            Slot::Extra(d) => {
                let (form, pos, deprel, attach) = &distractors[d];
                Token {
                    form: form.clone(),
                    pos: pos.clone(),
                    hypernym: None,
                    head: Some(path_pos[*attach]),
                    deprel: deprel.clone(),
                }
            }
        })
        .collect();

    DepSentence {
        tokens,
        e1: path_pos[0]..path_pos[0] + 1,
        e2: path_pos[m - 1]..path_pos[m - 1] + 1,
        relation: label,
    }
}

fn generate_with(rng: &mut Rng, n: usize) -> Vec<DepSentence> {
    let mut out: Vec<DepSentence> =
        (0..n).map(|i| build_sentence(rng, CLASSES[i % CLASSES.len()])).collect();
    rng.shuffle(&mut out);
    out
}

/// `n` sentences with exactly balanced classes (up to remainder).
pub fn generate(seed: u64, n: usize) -> Vec<DepSentence> {
    generate_with(&mut Rng::seeded(seed), n)
}

/// Train and test sets from disjoint substreams of one seed.
pub fn generate_split(seed: u64, n_train: usize, n_test: usize) -> (Vec<DepSentence>, Vec<DepSentence>) {
    let train = generate_with(&mut Rng::derive(seed, 1, 0), n_train);
    let test = generate_with(&mut Rng::derive(seed, 2, 0), n_test);
    (train, test)
}
