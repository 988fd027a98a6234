//! Rational valuations with the "indistinguishable from zero" sentinel.
//!
//! Every valuation arising in the coefficient tower is a rational with
//! denominator dividing p-1; analytic decay floors (e.g. i(p-1)/p^2) bring in
//! other denominators, so we carry full rationals. A quantity known only mod
//! p^k whose residue vanishes has valuation "at least k", never a definite
//! value.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::fmt;

pub type Rat = Ratio<i64>;

pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(num, den)
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(n)
}

/// A measured valuation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Val {
    /// Exactly this valuation (certified by a residue that survives precision).
    Finite(Rat),
    /// At least this much; the value is indistinguishable from zero at the
    /// working precision.
    AtLeast(Rat),
    /// Exactly zero (only exact arithmetic can certify this).
    Infinite,
}

impl Val {
    /// Certified lower bound, usable in ultrametric estimates.
    pub fn lower_bound(&self) -> VBound {
        match self {
            Val::Finite(r) => VBound::Fin(*r),
            Val::AtLeast(r) => VBound::Fin(*r),
            Val::Infinite => VBound::Inf,
        }
    }

    /// True when the valuation is certified strictly positive.
    pub fn certified_positive(&self) -> bool {
        match self {
            Val::Finite(r) | Val::AtLeast(r) => *r > rat_int(0),
            Val::Infinite => true,
        }
    }

    /// True when this value counts as nonzero at precision k: its valuation is
    /// a definite rational below k.
    pub fn counts_nonzero(&self, k: u32) -> bool {
        match self {
            Val::Finite(r) => *r < rat_int(k as i64),
            _ => false,
        }
    }

    pub fn is_exact_zero(&self) -> bool {
        matches!(self, Val::Infinite)
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Finite(r) => write!(f, "{}", r),
            Val::AtLeast(r) => write!(f, ">={}", r),
            Val::Infinite => write!(f, "inf"),
        }
    }
}

/// A certified lower bound on a valuation; `Inf` means "exactly zero value"
/// (vacuously bounded below by everything).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VBound {
    Fin(Rat),
    Inf,
}

impl VBound {
    pub fn min(self, other: VBound) -> VBound {
        match (self, other) {
            (VBound::Inf, b) => b,
            (a, VBound::Inf) => a,
            (VBound::Fin(a), VBound::Fin(b)) => VBound::Fin(a.min(b)),
        }
    }

    pub fn add(self, other: VBound) -> VBound {
        match (self, other) {
            (VBound::Fin(a), VBound::Fin(b)) => VBound::Fin(a + b),
            _ => VBound::Inf,
        }
    }

    pub fn ge(self, r: Rat) -> bool {
        match self {
            VBound::Fin(a) => a >= r,
            VBound::Inf => true,
        }
    }

    pub fn finite(self) -> Option<Rat> {
        match self {
            VBound::Fin(a) => Some(a),
            VBound::Inf => None,
        }
    }
}

impl fmt::Display for VBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VBound::Fin(r) => write!(f, "{}", r),
            VBound::Inf => write!(f, "inf"),
        }
    }
}

/// Serialization helper: rationals as "num" or "num/den" strings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatStr(#[serde(with = "rat_serde")] pub Rat);

pub mod rat_serde {
    use super::Rat;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rat, s: S) -> Result<S::Ok, S::Error> {
        if *r.denom() == 1 {
            s.serialize_str(&format!("{}", r.numer()))
        } else {
            s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rat, D::Error> {
        let raw = String::deserialize(d)?;
        parse_rat(&raw).ok_or_else(|| de::Error::custom(format!("bad rational: {raw}")))
    }

    pub fn parse_rat(raw: &str) -> Option<Rat> {
        match raw.split_once('/') {
            Some((n, d)) => Some(Rat::new(n.parse().ok()?, d.parse().ok()?)),
            None => Some(Rat::from_integer(raw.parse().ok()?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_nonzero_respects_precision() {
        assert!(Val::Finite(rat(5, 1)).counts_nonzero(6));
        assert!(!Val::Finite(rat(6, 1)).counts_nonzero(6));
        assert!(!Val::AtLeast(rat(6, 1)).counts_nonzero(6));
        assert!(!Val::Infinite.counts_nonzero(6));
    }

    #[test]
    fn bound_lattice() {
        let a = VBound::Fin(rat(1, 16));
        let b = VBound::Fin(rat(1, 2));
        assert_eq!(a.min(b), a);
        assert_eq!(a.add(b), VBound::Fin(rat(9, 16)));
        assert_eq!(VBound::Inf.min(a), a);
        assert!(VBound::Inf.ge(rat(100, 1)));
    }
}
