use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{NodeId, Query, QueryNode};
use crate::error::{Error, Result};

/// The fourteen benchmark query shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryStructure {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2in")]
    In2,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
}

use QueryStructure::*;

impl QueryStructure {
    pub const ALL: [QueryStructure; 14] = [P1, P2, P3, I2, I3, Pi, Ip, U2, Up, In2, In3, Inp, Pin, Pni];
    /// Existential positive types, averaged into `avg_p`.
    pub const EPFO: [QueryStructure; 9] = [P1, P2, P3, I2, I3, Pi, Ip, U2, Up];
    /// Types with a negated branch, averaged into `avg_n`.
    pub const NEGATION: [QueryStructure; 5] = [In2, In3, Inp, Pin, Pni];
    /// Types admitted for training.
    pub const TRAINING: [QueryStructure; 10] = [P1, P2, P3, I2, I3, In2, In3, Inp, Pin, Pni];

    pub fn name(self) -> &'static str {
        match self {
            P1 => "1p",
            P2 => "2p",
            P3 => "3p",
            I2 => "2i",
            I3 => "3i",
            Pi => "pi",
            Ip => "ip",
            U2 => "2u",
            Up => "up",
            In2 => "2in",
            In3 => "3in",
            Inp => "inp",
            Pin => "pin",
            Pni => "pni",
        }
    }

    pub fn is_training(self) -> bool {
        Self::TRAINING.contains(&self)
    }

    pub fn has_negation(self) -> bool {
        Self::NEGATION.contains(&self)
    }

    /// Label-free tree for this structure.
    pub fn template(self) -> Shape {
        use Shape::*;
        let p = |s: Shape| Project(Box::new(s));
        let n = |s: Shape| Negate(Box::new(s));
        let p1 = || p(Entity);
        match self {
            P1 => p1(),
            P2 => p(p1()),
            P3 => p(p(p1())),
            I2 => Intersect(vec![p1(), p1()]),
            I3 => Intersect(vec![p1(), p1(), p1()]),
            Pi => Intersect(vec![p(p1()), p1()]),
            Ip => p(Intersect(vec![p1(), p1()])),
            U2 => Union(vec![p1(), p1()]),
            Up => p(Union(vec![p1(), p1()])),
            In2 => Intersect(vec![p1(), n(p1())]),
            In3 => Intersect(vec![p1(), p1(), n(p1())]),
            Inp => p(Intersect(vec![p1(), n(p1())])),
            Pin => Intersect(vec![p(p1()), n(p1())]),
            Pni => Intersect(vec![n(p(p1())), p1()]),
        }
    }
}

impl fmt::Display for QueryStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown query structure `{s}`")))
    }
}

/// A query tree with entity and relation labels erased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    Entity,
    Project(Box<Shape>),
    Intersect(Vec<Shape>),
    Union(Vec<Shape>),
    Negate(Box<Shape>),
}

impl Shape {
    pub fn of(q: &Query) -> Shape {
        fn go(q: &Query, id: NodeId) -> Shape {
            match q.node(id) {
                QueryNode::Anchor(_) => Shape::Entity,
                QueryNode::Projection { child, .. } => Shape::Project(Box::new(go(q, *child))),
                QueryNode::Negation(child) => Shape::Negate(Box::new(go(q, *child))),
                QueryNode::Intersection(cs) => Shape::Intersect(cs.iter().map(|&c| go(q, c)).collect()),
                QueryNode::Union(cs) => Shape::Union(cs.iter().map(|&c| go(q, c)).collect()),
            }
        }
        go(q, q.root())
    }

    /// Rendering with intersection and union operands sorted, so that two
    /// shapes differing only in operand order compare equal.
    pub fn canonical(&self) -> String {
        let sorted = |cs: &[Shape]| {
            let mut parts: Vec<String> = cs.iter().map(Shape::canonical).collect();
            parts.sort();
            parts.join(",")
        };
        match self {
            Shape::Entity => "e".into(),
            Shape::Project(s) => format!("p({})", s.canonical()),
            Shape::Negate(s) => format!("n({})", s.canonical()),
            Shape::Intersect(cs) => format!("i({})", sorted(cs)),
            Shape::Union(cs) => format!("u({})", sorted(cs)),
        }
    }
}

/// Matches the label-free shape of `q` against the benchmark templates;
/// `None` stands for "other".
pub fn classify_structure(q: &Query) -> Option<QueryStructure> {
    let key = Shape::of(q).canonical();
    QueryStructure::ALL.into_iter().find(|s| s.template().canonical() == key)
}
