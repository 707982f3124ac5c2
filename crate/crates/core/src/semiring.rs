//! C-semiring instances and their values.
//!
//! A c-semiring is a semiring whose additive operation is idempotent (which
//! induces the partial order used for every preference comparison) and whose
//! multiplicative operation is commutative, with `one` absorbing for `plus`.
//! Three instances ship: `boolean` (crisp constraints), `fuzzy`
//! (`[0,1]`, max, min) and `weighted` (non-negative rationals plus infinity,
//! min, +). All carriers are exact: booleans or rationals, never floats, so
//! equality and order checks are bit-stable.

use std::fmt;

use num_rational::Rational64;
use num_traits::{Signed, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemiringError {
    #[error("operands belong to different semiring instances: {0} vs {1}")]
    InstanceMismatch(&'static str, &'static str),
    #[error("{value} is not a member of the {ring} carrier")]
    NotInCarrier { ring: &'static str, value: String },
    #[error("unknown semiring instance `{0}`")]
    UnknownInstance(String),
}

/// A shipped c-semiring instance. The enum is the registry: instances are
/// looked up by name from program preambles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Semiring {
    /// `<{false,true}, or, and, false, true>` — classical crisp constraints.
    Boolean,
    /// `<[0,1], max, min, 0, 1>` over exact rationals.
    Fuzzy,
    /// `<Q+ ∪ {inf}, min, +, inf, 0>` — costs; the only shipped instance
    /// with a non-idempotent multiplication.
    Weighted,
}

impl Semiring {
    pub const ALL: [Semiring; 3] = [Semiring::Boolean, Semiring::Fuzzy, Semiring::Weighted];

    pub fn by_name(name: &str) -> Result<Semiring, SemiringError> {
        match name {
            "boolean" => Ok(Semiring::Boolean),
            "fuzzy" => Ok(Semiring::Fuzzy),
            "weighted" => Ok(Semiring::Weighted),
            other => Err(SemiringError::UnknownInstance(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Semiring::Boolean => "boolean",
            Semiring::Fuzzy => "fuzzy",
            Semiring::Weighted => "weighted",
        }
    }

    /// Unit of `plus` and global minimum of the induced order.
    pub fn zero(self) -> SemiringValue {
        let repr = match self {
            Semiring::Boolean => Repr::Bool(false),
            Semiring::Fuzzy => Repr::Rat(Rational64::zero()),
            Semiring::Weighted => Repr::Infinite,
        };
        SemiringValue { ring: self, repr }
    }

    /// Unit of `times` and global maximum of the induced order.
    pub fn one(self) -> SemiringValue {
        let repr = match self {
            Semiring::Boolean => Repr::Bool(true),
            Semiring::Fuzzy => Repr::Rat(Rational64::from_integer(1)),
            Semiring::Weighted => Repr::Rat(Rational64::zero()),
        };
        SemiringValue { ring: self, repr }
    }

    pub fn from_bool(self, b: bool) -> Result<SemiringValue, SemiringError> {
        match self {
            Semiring::Boolean => Ok(SemiringValue {
                ring: self,
                repr: Repr::Bool(b),
            }),
            _ => Err(SemiringError::NotInCarrier {
                ring: self.name(),
                value: b.to_string(),
            }),
        }
    }

    pub fn from_rational(self, r: Rational64) -> Result<SemiringValue, SemiringError> {
        let ok = match self {
            Semiring::Boolean => false,
            Semiring::Fuzzy => !r.is_negative() && r <= Rational64::from_integer(1),
            Semiring::Weighted => !r.is_negative(),
        };
        if ok {
            Ok(SemiringValue {
                ring: self,
                repr: Repr::Rat(r),
            })
        } else {
            Err(SemiringError::NotInCarrier {
                ring: self.name(),
                value: r.to_string(),
            })
        }
    }

    /// The infinite cost; only the weighted carrier contains it.
    pub fn infinity(self) -> Result<SemiringValue, SemiringError> {
        match self {
            Semiring::Weighted => Ok(SemiringValue {
                ring: self,
                repr: Repr::Infinite,
            }),
            _ => Err(SemiringError::NotInCarrier {
                ring: self.name(),
                value: "inf".to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Repr {
    Bool(bool),
    Rat(Rational64),
    Infinite,
}

/// One element of a specific c-semiring carrier. Values remember their
/// instance so mixed-instance operations are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SemiringValue {
    ring: Semiring,
    repr: Repr,
}

impl SemiringValue {
    pub fn ring(&self) -> Semiring {
        self.ring
    }

    pub fn is_zero(&self) -> bool {
        *self == self.ring.zero()
    }

    pub fn is_one(&self) -> bool {
        *self == self.ring.one()
    }

    /// The rational carrier element, when the instance has one.
    pub fn as_rational(&self) -> Option<Rational64> {
        match self.repr {
            Repr::Rat(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self.repr {
            Repr::Bool(b) => Some(b),
            _ => None,
        }
    }

    fn same_ring(&self, other: &SemiringValue) -> Result<(), SemiringError> {
        if self.ring == other.ring {
            Ok(())
        } else {
            Err(SemiringError::InstanceMismatch(
                self.ring.name(),
                other.ring.name(),
            ))
        }
    }

    /// The additive operation (comparison/aggregation of alternatives).
    pub fn plus(&self, other: &SemiringValue) -> Result<SemiringValue, SemiringError> {
        self.same_ring(other)?;
        let repr = match (self.ring, self.repr, other.repr) {
            (Semiring::Boolean, Repr::Bool(a), Repr::Bool(b)) => Repr::Bool(a || b),
            (Semiring::Fuzzy, Repr::Rat(a), Repr::Rat(b)) => Repr::Rat(a.max(b)),
            (Semiring::Weighted, Repr::Infinite, r) | (Semiring::Weighted, r, Repr::Infinite) => r,
            (Semiring::Weighted, Repr::Rat(a), Repr::Rat(b)) => Repr::Rat(a.min(b)),
            _ => unreachable!("carrier representation matches the instance"),
        };
        Ok(SemiringValue {
            ring: self.ring,
            repr,
        })
    }

    /// The multiplicative operation (combination of constraints).
    pub fn times(&self, other: &SemiringValue) -> Result<SemiringValue, SemiringError> {
        self.same_ring(other)?;
        let repr = match (self.ring, self.repr, other.repr) {
            (Semiring::Boolean, Repr::Bool(a), Repr::Bool(b)) => Repr::Bool(a && b),
            (Semiring::Fuzzy, Repr::Rat(a), Repr::Rat(b)) => Repr::Rat(a.min(b)),
            (Semiring::Weighted, Repr::Infinite, _) | (Semiring::Weighted, _, Repr::Infinite) => {
                Repr::Infinite
            }
            (Semiring::Weighted, Repr::Rat(a), Repr::Rat(b)) => Repr::Rat(a + b),
            _ => unreachable!("carrier representation matches the instance"),
        };
        Ok(SemiringValue {
            ring: self.ring,
            repr,
        })
    }

    /// The order induced by the additive operation: `a <= b` iff
    /// `plus(a, b) == b`. Zero is the global minimum, one the maximum.
    pub fn leq(&self, other: &SemiringValue) -> Result<bool, SemiringError> {
        Ok(self.plus(other)? == *other)
    }

    /// Strict variant of [`SemiringValue::leq`].
    pub fn lt(&self, other: &SemiringValue) -> Result<bool, SemiringError> {
        Ok(self != other && self.leq(other)?)
    }
}

impl fmt::Display for SemiringValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.repr {
            Repr::Bool(b) => write!(f, "{b}"),
            Repr::Rat(r) => write!(f, "{r}"),
            Repr::Infinite => write!(f, "inf"),
        }
    }
}
