//! The closed relation inventory: nine directed relation types plus
//! `Other`, nineteen labels in all.
//!
//! Directed labels are written `Type(e1,e2)` when the first argument is
//! entity 1 and `Type(e2,e1)` otherwise; `Other` carries no direction.
//! Class indices are fixed: types in declaration order, `(e1,e2)` before
//! `(e2,e1)`, with `Other` last at index 18.

use crate::Error;
use std::fmt;
use std::str::FromStr;

pub const NUM_LABELS: usize = 19;
pub const NUM_TYPES: usize = 9;
pub const OTHER_INDEX: usize = NUM_LABELS - 1;

/// Relation types that take a direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelType {
    CauseEffect,
    ComponentWhole,
    ContentContainer,
    EntityDestination,
    EntityOrigin,
    InstrumentAgency,
    MemberCollection,
    MessageTopic,
    ProductProducer,
}

impl RelType {
    pub const ALL: [RelType; NUM_TYPES] = [
        RelType::CauseEffect,
        RelType::ComponentWhole,
        RelType::ContentContainer,
        RelType::EntityDestination,
        RelType::EntityOrigin,
        RelType::InstrumentAgency,
        RelType::MemberCollection,
        RelType::MessageTopic,
        RelType::ProductProducer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelType::CauseEffect => "Cause-Effect",
            RelType::ComponentWhole => "Component-Whole",
            RelType::ContentContainer => "Content-Container",
            RelType::EntityDestination => "Entity-Destination",
            RelType::EntityOrigin => "Entity-Origin",
            RelType::InstrumentAgency => "Instrument-Agency",
            RelType::MemberCollection => "Member-Collection",
            RelType::MessageTopic => "Message-Topic",
            RelType::ProductProducer => "Product-Producer",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|t| *t == self).unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Directed { rel: RelType, e1_first: bool },
    Other,
}

impl Label {
    /// Fixed class index in `0..NUM_LABELS`.
    pub fn index(self) -> usize {
        match self {
            Label::Directed { rel, e1_first } => 2 * rel.index() + usize::from(!e1_first),
            Label::Other => OTHER_INDEX,
        }
    }

    pub fn from_index(i: usize) -> Label {
        assert!(i < NUM_LABELS, "label index {i} out of range");
        if i == OTHER_INDEX {
            Label::Other
        } else {
            Label::Directed { rel: RelType::ALL[i / 2], e1_first: i % 2 == 0 }
        }
    }

    pub fn all() -> impl Iterator<Item = Label> {
        (0..NUM_LABELS).map(Label::from_index)
    }

    /// The relation type with direction stripped; `None` for `Other`.
    pub fn rel_type(self) -> Option<RelType> {
        match self {
            Label::Directed { rel, .. } => Some(rel),
            Label::Other => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Directed { rel, e1_first: true } => write!(f, "{}(e1,e2)", rel.name()),
            Label::Directed { rel, e1_first: false } => write!(f, "{}(e2,e1)", rel.name()),
            Label::Other => write!(f, "Other"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "Other" {
            return Ok(Label::Other);
        }
        for rel in RelType::ALL {
            if let Some(rest) = s.strip_prefix(rel.name()) {
                match rest {
                    "(e1,e2)" => return Ok(Label::Directed { rel, e1_first: true }),
                    "(e2,e1)" => return Ok(Label::Directed { rel, e1_first: false }),
                    _ => break,
                }
            }
        }
        Err(Error::Data(format!("unknown relation label {s:?}")))
    }
}
