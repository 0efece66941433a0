//! Fuzzy sets over the entity universe and the product-logic connectives.
//!
//! Conjunction is the product t-norm, disjunction the probabilistic sum and
//! negation the standard complement. Every output is clamped into `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::EntityId;

/// Membership degrees for every entity, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzySet {
    memberships: Vec<f64>,
}

impl FuzzySet {
    /// Validates that all memberships lie in `[0, 1]`.
    pub fn new(memberships: Vec<f64>) -> Result<Self> {
        if let Some(bad) = memberships.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Usage(format!("fuzzy membership {bad} outside [0, 1]")));
        }
        Ok(FuzzySet { memberships })
    }

    /// Clamps arbitrary reals into `[0, 1]`; NaN is rejected.
    pub fn from_clamped(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| x.is_nan()) {
            return Err(Error::numeric("fuzzy set construction"));
        }
        Ok(FuzzySet {
            memberships: values.into_iter().map(clamp_unit).collect(),
        })
    }

    pub fn zeros(len: usize) -> Self {
        FuzzySet {
            memberships: vec![0.0; len],
        }
    }

    pub fn ones(len: usize) -> Self {
        FuzzySet {
            memberships: vec![1.0; len],
        }
    }

    pub fn one_hot(len: usize, at: EntityId) -> Self {
        let mut set = Self::zeros(len);
        set.memberships[at.index()] = 1.0;
        set
    }

    /// Crisp indicator of `members`.
    pub fn indicator(len: usize, members: impl IntoIterator<Item = EntityId>) -> Self {
        let mut set = Self::zeros(len);
        for e in members {
            set.memberships[e.index()] = 1.0;
        }
        set
    }

    pub fn len(&self) -> usize {
        self.memberships.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memberships.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.memberships
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.memberships
    }

    pub fn get(&self, e: EntityId) -> f64 {
        self.memberships[e.index()]
    }

    /// Entities with membership strictly above `threshold`, ascending.
    pub fn above(&self, threshold: f64) -> Vec<EntityId> {
        self.memberships
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > threshold)
            .map(|(i, _)| EntityId(i as u32))
            .collect()
    }

    pub fn is_crisp(&self) -> bool {
        self.memberships.iter().all(|&x| x == 0.0 || x == 1.0)
    }
}

pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn zip_with(op: &'static str, x: &FuzzySet, y: &FuzzySet, f: impl Fn(f64, f64) -> f64) -> Result<FuzzySet> {
    if x.len() != y.len() {
        return Err(Error::dim(op, format!("{} vs {}", x.len(), y.len())));
    }
    Ok(FuzzySet {
        memberships: x
            .memberships
            .iter()
            .zip(&y.memberships)
            .map(|(&a, &b)| clamp_unit(f(a, b)))
            .collect(),
    })
}

/// `C(x, y) = x ⊙ y`.
pub fn conjunction(x: &FuzzySet, y: &FuzzySet) -> Result<FuzzySet> {
    zip_with("conjunction", x, y, |a, b| a * b)
}

/// `D(x, y) = x + y - x ⊙ y`, evaluated as `hi + lo (1 - hi)` with
/// `hi = max(x, y)`: symmetric bit for bit, and exact on the identity
/// (`D(x, 0) = x`) and annihilator (`D(x, 1) = 1`).
pub fn disjunction(x: &FuzzySet, y: &FuzzySet) -> Result<FuzzySet> {
    zip_with("disjunction", x, y, |a, b| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        hi + lo * (1.0 - hi)
    })
}

/// `N(x) = 1 - x`.
pub fn negation(x: &FuzzySet) -> FuzzySet {
    FuzzySet {
        memberships: x.memberships.iter().map(|&a| clamp_unit(1.0 - a)).collect(),
    }
}
