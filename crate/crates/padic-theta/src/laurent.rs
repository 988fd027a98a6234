//! Windowed bi-infinite series over tower scalars.
//!
//! A [`Series`] stores the coefficients it actually determines, for degrees
//! `lo..=hi`, together with certified facts about everything outside the
//! window:
//!
//! * `head`: above `hi` the coefficients are exactly zero ([`Head::Zero`]) or
//!   bounded below in valuation by an affine function ([`Head::Bound`]),
//! * `tail_exact`: below `lo` the coefficients are exactly zero, or unknown,
//! * `floor`: a valuation lower bound valid for every coefficient of the
//!   modeled object, stored or not.
//!
//! Arithmetic computes the provably-correct sub-window rather than guessing:
//! a product coefficient is stored only when the contributions of unknown
//! tails are certified to vanish mod p^k. Truncation soundness here is what
//! every certificate downstream leans on.

use crate::tower::{unify, MulAcc, Scalar, ScalarJson, Tower};
use crate::val::{rat, rat_int, Rat, Val, VBound};
use crate::{Error, Result};
use num_bigint::BigInt;
use num_traits::Zero;

/// What is known about coefficients above the stored window.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    /// Exactly zero above `hi`.
    Zero,
    /// For D > hi: v(c_D) >= base + slope * (D - hi - 1), slope >= 0.
    Bound { slope: Rat, base: Rat },
}

impl Head {
    /// Lower bound for the coefficient at degree `d > hi`.
    fn bound_at(&self, d: i64, hi: i64) -> VBound {
        match self {
            Head::Zero => VBound::Inf,
            Head::Bound { slope, base } => {
                VBound::Fin(*base + *slope * rat_int(d - hi - 1))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Series {
    tower: Tower,
    lo: i64,
    coeffs: Vec<Scalar>,
    head: Head,
    tail_exact: bool,
    floor: VBound,
}

impl Series {
    pub fn new(
        tower: Tower,
        lo: i64,
        coeffs: Vec<Scalar>,
        head: Head,
        tail_exact: bool,
        floor: VBound,
    ) -> Series {
        if let Head::Bound { slope, .. } = &head {
            assert!(*slope >= rat_int(0), "head decay slope must be >= 0");
        }
        Series {
            tower,
            lo,
            coeffs,
            head,
            tail_exact,
            floor,
        }
    }

    pub fn zero(t: &Tower) -> Series {
        Series::new(t.clone(), 0, vec![], Head::Zero, true, VBound::Inf)
    }

    pub fn constant(t: &Tower, s: Scalar) -> Series {
        Series::monomial(t, 0, s)
    }

    pub fn one(t: &Tower) -> Series {
        Series::constant(t, Scalar::one(t))
    }

    pub fn monomial(t: &Tower, d: i64, s: Scalar) -> Series {
        let fl = s.valuation().lower_bound();
        Series::new(t.clone(), d, vec![s], Head::Zero, true, fl)
    }

    /// Polynomial-type constructor: the given terms are the whole object.
    pub fn from_terms(t: &Tower, terms: &[(i64, Scalar)]) -> Series {
        if terms.is_empty() {
            return Series::zero(t);
        }
        let lo = terms.iter().map(|(d, _)| *d).min().unwrap();
        let hi = terms.iter().map(|(d, _)| *d).max().unwrap();
        let mut coeffs = vec![Scalar::zero(t); (hi - lo + 1) as usize];
        let mut floor = VBound::Inf;
        for (d, s) in terms {
            floor = floor.min(s.valuation().lower_bound());
            coeffs[(*d - lo) as usize] = coeffs[(*d - lo) as usize].add(s);
        }
        Series::new(t.clone(), lo, coeffs, Head::Zero, true, floor)
    }

    pub fn from_int_terms(t: &Tower, terms: &[(i64, i64)]) -> Series {
        let terms: Vec<(i64, Scalar)> = terms
            .iter()
            .map(|(d, c)| (*d, Scalar::from_i64(t, *c)))
            .collect();
        Series::from_terms(t, &terms)
    }

    pub fn tower(&self) -> &Tower {
        &self.tower
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.coeffs.len() as i64 - 1
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn tail_exact(&self) -> bool {
        self.tail_exact
    }

    pub fn floor(&self) -> VBound {
        self.floor
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty() && self.tail_exact && matches!(self.head, Head::Zero)
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Stored coefficient, if the degree is inside the window.
    pub fn stored(&self, d: i64) -> Option<&Scalar> {
        if d < self.lo || d > self.hi() {
            None
        } else {
            Some(&self.coeffs[(d - self.lo) as usize])
        }
    }

    /// Coefficient when it is determined: stored values, and exact zeros in
    /// exact regions. None where only bounds are known.
    pub fn known_coeff(&self, d: i64) -> Option<Scalar> {
        if let Some(s) = self.stored(d) {
            return Some(s.clone());
        }
        if d > self.hi() && matches!(self.head, Head::Zero) {
            return Some(Scalar::zero(&self.tower));
        }
        if d < self.lo && self.tail_exact {
            return Some(Scalar::zero(&self.tower));
        }
        None
    }

    /// Certified valuation lower bound at one degree.
    pub fn val_lb_at(&self, d: i64) -> VBound {
        let regional = if let Some(s) = self.stored(d) {
            s.valuation().lower_bound()
        } else if d > self.hi() {
            self.head.bound_at(d, self.hi())
        } else if self.tail_exact {
            VBound::Inf
        } else {
            self.floor
        };
        // floor certifies every coefficient, so take the better bound
        match (regional, self.floor) {
            (VBound::Inf, _) => VBound::Inf,
            (r, VBound::Inf) => r,
            (VBound::Fin(a), VBound::Fin(b)) => VBound::Fin(a.max(b)),
        }
    }

    fn suffix_lbs(&self) -> Vec<VBound> {
        let mut out = vec![VBound::Inf; self.coeffs.len() + 1];
        for i in (0..self.coeffs.len()).rev() {
            out[i] = out[i + 1].min(self.coeffs[i].valuation().lower_bound());
        }
        out
    }

    /// Certified min valuation over all degrees >= from.
    fn min_val_from(&self, suffix: &[VBound], from: i64) -> VBound {
        let mut m = VBound::Inf;
        if from < self.lo && !self.tail_exact {
            m = m.min(self.floor);
        }
        let start = from.max(self.lo);
        if start <= self.hi() {
            m = m.min(suffix[(start - self.lo) as usize]);
        }
        let d0 = from.max(self.hi() + 1);
        m = m.min(self.head.bound_at(d0, self.hi()));
        m
    }

    pub fn all_exact(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_exact())
    }

    /// Forget exactness of every coefficient.
    pub fn demote(&self) -> Series {
        let mut s = self.clone();
        for c in s.coeffs.iter_mut() {
            *c = c.demote();
        }
        s
    }

    pub fn promote(&self, t: &Tower) -> Series {
        let mut s = self.clone();
        s.tower = t.clone();
        for c in s.coeffs.iter_mut() {
            *c = c.promote(t);
        }
        s
    }

    /// Drop exact-zero coefficients at the edges where metadata allows.
    pub fn compress(&self) -> Series {
        let mut lo = self.lo;
        let mut coeffs = self.coeffs.clone();
        if matches!(self.head, Head::Zero) {
            while coeffs
                .last()
                .map(|c| c.exact_value().is_some_and(|n| n.is_zero()))
                .unwrap_or(false)
            {
                coeffs.pop();
            }
        }
        if self.tail_exact {
            while coeffs
                .first()
                .map(|c| c.exact_value().is_some_and(|n| n.is_zero()))
                .unwrap_or(false)
            {
                coeffs.remove(0);
                lo += 1;
            }
        }
        Series::new(
            self.tower.clone(),
            lo,
            coeffs,
            self.head.clone(),
            self.tail_exact,
            self.floor,
        )
    }

    pub fn neg(&self) -> Series {
        let mut s = self.clone();
        for c in s.coeffs.iter_mut() {
            *c = c.neg();
        }
        s
    }

    pub fn scale(&self, c: &Scalar) -> Series {
        let t = unify(&self.tower, c.tower()).expect("incompatible towers");
        let shift = c.valuation().lower_bound();
        let coeffs = self.coeffs.iter().map(|x| x.mul(c)).collect();
        let head = match &self.head {
            Head::Zero => Head::Zero,
            Head::Bound { slope, base } => Head::Bound {
                slope: *slope,
                base: *base + shift.finite().unwrap_or(rat_int(0)),
            },
        };
        Series::new(
            t,
            self.lo,
            coeffs,
            head,
            self.tail_exact,
            self.floor.add(shift),
        )
    }

    /// Multiply by T^n.
    pub fn shift(&self, n: i64) -> Series {
        let mut s = self.clone();
        s.lo += n;
        s
    }

    /// Substitute T -> cT, i.e. map the degree-i coefficient by c^i. Requires
    /// a unit c, so norms and floors are untouched.
    pub fn scale_argument(&self, c: &Scalar) -> Result<Series> {
        if !c.is_unit() {
            return Err(Error::NonUnit("argument scaling needs a unit".into()));
        }
        let t = unify(&self.tower, c.tower())?;
        let c = c.promote(&t);
        let c_inv = c.inv()?;
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        // power aligned with the bottom of the window
        let mut pw = if self.lo >= 0 {
            c.pow(self.lo as u64)
        } else {
            c_inv.pow((-self.lo) as u64)
        };
        for x in &self.coeffs {
            coeffs.push(x.promote(&t).mul(&pw));
            pw = pw.mul(&c);
        }
        Ok(Series::new(
            t,
            self.lo,
            coeffs,
            self.head.clone(),
            self.tail_exact,
            self.floor,
        ))
    }

    pub fn add(&self, other: &Series) -> Series {
        let t = unify(&self.tower, &other.tower).expect("incompatible towers");
        if self.is_zero() {
            return other.promote(&t);
        }
        if other.is_zero() {
            return self.promote(&t);
        }
        let a = self;
        let b = other;
        let lo = match (a.tail_exact, b.tail_exact) {
            (true, true) => a.lo.min(b.lo),
            (true, false) => b.lo,
            (false, true) => a.lo,
            (false, false) => a.lo.max(b.lo),
        };
        let a_zero_head = matches!(a.head, Head::Zero);
        let b_zero_head = matches!(b.head, Head::Zero);
        let hi = match (a_zero_head, b_zero_head) {
            (true, true) => a.hi().max(b.hi()),
            (true, false) => b.hi(),
            (false, true) => a.hi(),
            (false, false) => a.hi().min(b.hi()),
        };
        let mut coeffs = Vec::new();
        for d in lo..=hi {
            let x = a.known_coeff(d).expect("window rule");
            let y = b.known_coeff(d).expect("window rule");
            coeffs.push(x.promote(&t).add(&y.promote(&t)));
        }
        let head = if a_zero_head && b_zero_head {
            Head::Zero
        } else {
            let sa = a.suffix_lbs();
            let sb = b.suffix_lbs();
            let base = a
                .min_val_from(&sa, hi + 1)
                .min(b.min_val_from(&sb, hi + 1));
            let stored_above = a.hi() > hi || b.hi() > hi;
            let slope = if stored_above {
                rat_int(0)
            } else {
                let mut s: Option<Rat> = None;
                for h in [&a.head, &b.head] {
                    if let Head::Bound { slope, .. } = h {
                        s = Some(match s {
                            Some(cur) => cur.min(*slope),
                            None => *slope,
                        });
                    }
                }
                s.unwrap_or(rat_int(0))
            };
            match base {
                VBound::Fin(base) => Head::Bound { slope, base },
                VBound::Inf => Head::Zero,
            }
        };
        Series::new(
            t,
            lo,
            coeffs,
            head,
            a.tail_exact && b.tail_exact,
            a.floor.min(b.floor),
        )
    }

    pub fn sub(&self, other: &Series) -> Series {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Series) -> Result<Series> {
        let t = unify(&self.tower, &other.tower)?;
        if self.is_zero() || other.is_zero() {
            return Ok(Series::zero(&t));
        }
        if self.is_empty() || other.is_empty() {
            return Err(Error::Window("multiplying a metadata-only series".into()));
        }
        let a = self;
        let b = other;
        let hi = a.hi() + b.hi();
        let floor = a.floor.add(b.floor);
        let tail_exact = a.tail_exact && b.tail_exact;

        let head = {
            let a_bound = match &a.head {
                Head::Zero => None,
                Head::Bound { slope, base } => Some((*slope, *base)),
            };
            let b_bound = match &b.head {
                Head::Zero => None,
                Head::Bound { slope, base } => Some((*slope, *base)),
            };
            match (a_bound, b_bound) {
                (None, None) => Head::Zero,
                _ => {
                    let ga = a.floor.finite().expect("nonzero series has finite floor");
                    let gb = b.floor.finite().expect("nonzero series has finite floor");
                    let slope = match (a_bound, b_bound) {
                        (Some((s1, _)), Some((s2, _))) => s1.min(s2),
                        (Some((s1, _)), None) => s1,
                        (None, Some((s2, _))) => s2,
                        (None, None) => unreachable!(),
                    };
                    let mut base: Option<Rat> = None;
                    let mut push = |r: Rat| {
                        base = Some(match base {
                            Some(cur) => cur.min(r),
                            None => r,
                        })
                    };
                    if let Some((_, b1)) = a_bound {
                        push(b1 + gb);
                    }
                    if let Some((_, b2)) = b_bound {
                        push(b2 + ga);
                    }
                    if let (Some((_, b1)), Some((_, b2))) = (a_bound, b_bound) {
                        push(b1 + b2 - slope);
                    }
                    Head::Bound {
                        slope,
                        base: base.unwrap(),
                    }
                }
            }
        };

        let suffix_a = a.suffix_lbs();
        let suffix_b = b.suffix_lbs();
        let err = |d: i64| -> VBound {
            let mut e = VBound::Inf;
            if !a.tail_exact {
                e = e.min(a.floor.add(b.min_val_from(&suffix_b, d - a.lo + 1)));
            }
            if !b.tail_exact {
                e = e.min(b.floor.add(a.min_val_from(&suffix_a, d - b.lo + 1)));
            }
            e
        };

        let lo_struct = a.lo + b.lo;
        let kk = rat_int(t.k as i64);
        let mut lo = lo_struct;
        if !tail_exact {
            while lo <= hi && !err(lo).ge(kk) {
                lo += 1;
            }
            if lo > hi {
                return Err(Error::Window(
                    "no product coefficient is determined at working precision".into(),
                ));
            }
        }
        let mut lo_exact = lo;
        while lo_exact <= hi && !matches!(err(lo_exact), VBound::Inf) {
            lo_exact += 1;
        }

        let exact_path = a.all_exact() && b.all_exact();
        let mut coeffs = Vec::with_capacity((hi - lo + 1) as usize);
        if exact_path {
            for d in lo..=hi {
                let d1_min = a.lo.max(d - b.hi());
                let d1_max = a.hi().min(d - b.lo);
                let mut acc = BigInt::zero();
                for d1 in d1_min..=d1_max {
                    let x = a.coeffs[(d1 - a.lo) as usize].exact_value().unwrap();
                    let y = b.coeffs[(d - d1 - b.lo) as usize].exact_value().unwrap();
                    if x.is_zero() || y.is_zero() {
                        continue;
                    }
                    acc += x * y;
                }
                let s = Scalar::from_bigint(&t, acc);
                coeffs.push(if d < lo_exact { s.demote() } else { s });
            }
        } else {
            let ca: Vec<Scalar> = a.coeffs.iter().map(|c| c.promote(&t).demote()).collect();
            let cb: Vec<Scalar> = b.coeffs.iter().map(|c| c.promote(&t).demote()).collect();
            let raw_a: Vec<Vec<u64>> = ca.iter().map(|c| c.coords_raw(&t)).collect();
            let raw_b: Vec<Vec<u64>> = cb.iter().map(|c| c.coords_raw(&t)).collect();
            for d in lo..=hi {
                let d1_min = a.lo.max(d - b.hi());
                let d1_max = a.hi().min(d - b.lo);
                let mut acc = MulAcc::new(&t);
                for d1 in d1_min..=d1_max {
                    acc.add_product(&t, &raw_a[(d1 - a.lo) as usize], &raw_b[(d - d1 - b.lo) as usize]);
                }
                coeffs.push(Scalar::from_coords(&t, acc.finish(t.pk)));
            }
        }
        Ok(Series::new(t, lo, coeffs, head, tail_exact, floor))
    }

    pub fn try_pow(&self, e: u64) -> Result<Series> {
        let mut base = self.clone();
        let mut acc = Series::one(&self.tower);
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base)?;
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base)?;
            }
        }
        Ok(acc)
    }

    /// Largest degree whose coefficient is certified nonzero, with a monic
    /// flag. Coefficients indistinguishable from zero at precision k do not
    /// count; if nothing counts, the degree is unknown.
    pub fn degree_monic(&self) -> Result<(i64, bool)> {
        if !matches!(self.head, Head::Zero) {
            return Err(Error::Domain(
                "degree is only defined for series with exact heads".into(),
            ));
        }
        for d in (self.lo..=self.hi()).rev() {
            let c = self.stored(d).unwrap();
            if c.counts_nonzero() {
                let monic = c.eq_at_precision(&Scalar::one(&self.tower));
                return Ok((d, monic));
            }
            // everything else is indistinguishable from zero at precision k
            // (including exact values of valuation >= k) and does not count
        }
        Err(Error::UnknownPrecision(
            "all coefficients are indistinguishable from zero".into(),
        ))
    }

    /// sup-norm as a valuation: min valuation over the window combined with
    /// the stored floors for out-of-window ranges.
    pub fn sup_norm_val(&self) -> Val {
        let mut best_known: Option<Rat> = None;
        let mut bound = VBound::Inf;
        for c in &self.coeffs {
            match c.valuation() {
                Val::Finite(v) => {
                    best_known = Some(match best_known {
                        Some(cur) => cur.min(v),
                        None => v,
                    })
                }
                Val::AtLeast(b) => bound = bound.min(VBound::Fin(b)),
                Val::Infinite => {}
            }
        }
        bound = bound.min(self.head.bound_at(self.hi() + 1, self.hi()));
        if !self.tail_exact {
            bound = bound.min(self.floor);
        }
        match (best_known, bound) {
            (Some(v), VBound::Fin(b)) if b < v => Val::AtLeast(b.min(v)),
            (Some(v), _) => Val::Finite(v),
            (None, VBound::Fin(b)) => Val::AtLeast(b),
            (None, VBound::Inf) => Val::Infinite,
        }
    }

    /// True when every coefficient on [lo, hi] is determined and vanishes mod
    /// p^k (or is bounded below by k). Errors when some coefficient in range
    /// is entirely unknown.
    pub fn vanishes_on(&self, lo: i64, hi: i64) -> Result<bool> {
        let kk = rat_int(self.tower.k as i64);
        for d in lo..=hi {
            if let Some(c) = self.stored(d) {
                if !c.vanishes_at_precision() {
                    return Ok(false);
                }
            } else if self.known_coeff(d).is_some() {
                // exact zero region
            } else if self.val_lb_at(d).ge(kk) {
                // bounded below precision
            } else if d < self.lo {
                return Err(Error::Window(format!(
                    "coefficient at degree {d} is outside the reliable window"
                )));
            } else {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn eq_at_precision_on(&self, other: &Series, lo: i64, hi: i64) -> Result<bool> {
        self.sub(other).vanishes_on(lo, hi)
    }

    /// Drop stored head coefficients above new_hi; they must vanish at
    /// precision. The head bound degrades to the flat "at least k" form.
    pub fn trim_head_at_precision(&self, new_hi: i64) -> Result<Series> {
        if new_hi >= self.hi() {
            return Ok(self.clone());
        }
        if new_hi < self.lo - 1 {
            return Err(Error::Window("trim below the stored window".into()));
        }
        let kk = rat_int(self.tower.k as i64);
        for d in (new_hi + 1)..=self.hi() {
            let c = self.stored(d).unwrap();
            if !c.vanishes_at_precision() && !c.valuation().lower_bound().ge(kk) {
                return Err(Error::UnknownPrecision(format!(
                    "cannot trim certified-nonzero coefficient at degree {d}"
                )));
            }
        }
        let coeffs = self.coeffs[..(new_hi - self.lo + 1) as usize].to_vec();
        Ok(Series::new(
            self.tower.clone(),
            self.lo,
            coeffs,
            Head::Bound {
                slope: rat_int(0),
                base: kk,
            },
            self.tail_exact,
            self.floor,
        ))
    }

    /// Restrict the stored tail to degrees >= new_lo.
    pub fn restrict_lo(&self, new_lo: i64) -> Series {
        if new_lo <= self.lo {
            return self.clone();
        }
        let start = ((new_lo - self.lo) as usize).min(self.coeffs.len());
        Series::new(
            self.tower.clone(),
            self.lo + start as i64,
            self.coeffs[start..].to_vec(),
            self.head.clone(),
            false,
            self.floor,
        )
    }

    /// Inverse of a series with exact head and certified-unit leading
    /// coefficient, to the given tail depth below the leading degree.
    pub fn invert_to(&self, depth: usize) -> Result<Series> {
        if !matches!(self.head, Head::Zero) {
            return Err(Error::Domain("inversion needs an exact head".into()));
        }
        if !self.floor.ge(rat_int(0)) {
            return Err(Error::Domain("inversion needs integral coefficients".into()));
        }
        let mut d = self.hi();
        loop {
            if d < self.lo {
                return Err(Error::UnknownPrecision(
                    "no certified-nonzero leading coefficient".into(),
                ));
            }
            let c = self.stored(d).unwrap();
            if c.counts_nonzero() {
                break;
            }
            if !c.vanishes_at_precision() {
                return Err(Error::UnknownPrecision(
                    "leading coefficient not certified".into(),
                ));
            }
            d -= 1;
        }
        let lead = self.stored(d).unwrap();
        if !lead.is_unit() {
            return Err(Error::NonUnit(
                "inversion needs a unit leading coefficient".into(),
            ));
        }
        let depth = if self.tail_exact {
            depth
        } else {
            depth.min((d - self.lo) as usize)
        };
        let lead_inv = lead.inv()?;
        let t = self.tower.clone();
        let mut out: Vec<Scalar> = Vec::with_capacity(depth + 1);
        out.push(lead_inv.clone());
        for j in 1..=depth {
            let mut acc = Scalar::zero(&t);
            for i in 1..=j {
                let sc = match self.stored(d - i as i64) {
                    Some(s) => s.clone(),
                    None => {
                        if self.tail_exact {
                            Scalar::zero(&t)
                        } else {
                            unreachable!("depth capped by window")
                        }
                    }
                };
                if sc.vanishes_at_precision() && sc.exact_value().is_none() {
                    continue;
                }
                acc = acc.add(&sc.mul(&out[j - i]));
            }
            out.push(lead_inv.neg().mul(&acc));
        }
        out.reverse();
        Ok(Series::new(
            t,
            -d - depth as i64,
            out,
            Head::Zero,
            false,
            VBound::Fin(rat_int(0)),
        ))
    }

    /// Inverse of a series supported in degrees >= lo with a unit bottom
    /// coefficient (ascending direction), to the given head depth. When the
    /// input carries a decay slope valid from its bottom degree, the inverse
    /// inherits it.
    pub fn invert_ascending(&self, depth: usize) -> Result<Series> {
        if !self.tail_exact {
            return Err(Error::Domain(
                "ascending inversion needs an exact tail".into(),
            ));
        }
        if !self.floor.ge(rat_int(0)) {
            return Err(Error::Domain("inversion needs integral coefficients".into()));
        }
        let b = self.lo;
        let bottom = self
            .stored(b)
            .ok_or_else(|| Error::Window("empty series".into()))?;
        if !bottom.is_unit() {
            return Err(Error::NonUnit(
                "ascending inversion needs a unit bottom coefficient".into(),
            ));
        }
        // decay slope certified from the bottom, if any
        let mut sigma = match &self.head {
            Head::Zero => None,
            Head::Bound { slope, base } => {
                let reach = rat_int(self.hi() + 1 - b);
                let s = (*base / reach).min(*slope);
                Some(s.max(rat_int(0)))
            }
        };
        if let Some(s) = sigma {
            for i in 1..self.coeffs.len() {
                let need = s * rat_int(i as i64);
                if !self.coeffs[i].valuation().lower_bound().ge(need) {
                    sigma = None;
                    break;
                }
            }
        }
        let depth = if matches!(self.head, Head::Zero) {
            depth
        } else {
            depth.min((self.hi() - b) as usize)
        };
        let bottom_inv = bottom.inv()?;
        let t = self.tower.clone();
        let mut out: Vec<Scalar> = Vec::with_capacity(depth + 1);
        out.push(bottom_inv.clone());
        for j in 1..=depth {
            let mut acc = Scalar::zero(&t);
            for i in 1..=j {
                let sc = match self.stored(b + i as i64) {
                    Some(s) => s.clone(),
                    None => Scalar::zero(&t),
                };
                if sc.vanishes_at_precision() && sc.exact_value().is_none() {
                    continue;
                }
                acc = acc.add(&sc.mul(&out[j - i]));
            }
            out.push(bottom_inv.neg().mul(&acc));
        }
        let head = match sigma {
            Some(s) if s > rat_int(0) => Head::Bound {
                slope: s,
                base: s * rat_int(depth as i64 + 1),
            },
            _ => Head::Bound {
                slope: rat_int(0),
                base: rat_int(0),
            },
        };
        Ok(Series::new(
            t,
            -b,
            out,
            head,
            true,
            VBound::Fin(rat_int(0)),
        ))
    }

    /// Exponential with convergence guards. The argument needs zero constant
    /// term and valuation floor at least 1/(p-1); a single-term argument uses
    /// the closed form (one power series term per degree), a general argument
    /// is summed term by term and must converge within p-1 terms so that no
    /// factorial denominator costs precision.
    pub fn exp(&self, head_cap: i64) -> Result<Series> {
        let t = self.tower.clone();
        let p1 = rat(1, (t.p - 1) as i64);
        if !self.floor.ge(p1) {
            return Err(Error::Convergence(format!(
                "argument floor {} is below 1/(p-1)",
                self.floor
            )));
        }
        if let Some(c0) = self.stored(0) {
            if !c0.vanishes_at_precision() {
                return Err(Error::Convergence("argument has a constant term".into()));
            }
        }
        if self.is_zero() {
            return Ok(Series::one(&t));
        }

        // single-term closed form
        let nonzero: Vec<i64> = (self.lo..=self.hi())
            .filter(|&d| !self.stored(d).unwrap().vanishes_at_precision())
            .collect();
        if nonzero.len() == 1 && self.tail_exact && matches!(self.head, Head::Zero) {
            let j = nonzero[0];
            let c = self.stored(j).unwrap().clone();
            let n_cap = (head_cap.max(0) / j.abs()) as u64;
            if n_cap >= t.p {
                return Err(Error::Convergence(format!(
                    "closed-form exponential needs {n_cap} terms; only {} fit before \
                     factorial denominators cost precision",
                    t.p - 1
                )));
            }
            let f = c.valuation().lower_bound().finite().unwrap_or(p1);
            let mut terms: Vec<(i64, Scalar)> = vec![(0, Scalar::one(&t))];
            let mut pw = Scalar::one(&t);
            let mut fact_inv = Scalar::one(&t);
            for n in 1..=n_cap {
                pw = pw.mul(&c);
                fact_inv = fact_inv.mul(&Scalar::from_i64(&t, n as i64).inv()?);
                terms.push((j * n as i64, pw.mul(&fact_inv)));
            }
            let mut s = Series::from_terms(&t, &terms);
            s.floor = VBound::Fin(rat_int(0));
            if j > 0 {
                // omitted terms sit at degrees nj > cap with v >= n(f - 1/(p-1)) + 1/(p-1)
                let slope = (f - p1) / rat_int(j);
                let base = (f - p1) * rat_int(s.hi() + 1) / rat_int(j) + p1;
                s.head = Head::Bound { slope, base };
            } else {
                // omitted terms extend the tail downward
                s.tail_exact = false;
            }
            return Ok(s);
        }

        // general path
        let f = self
            .floor
            .finite()
            .expect("nonzero series has a finite floor");
        if f <= p1 {
            return Err(Error::Convergence(
                "general exponential needs a floor strictly above 1/(p-1)".into(),
            ));
        }
        if !matches!(self.head, Head::Zero) {
            return Err(Error::Convergence(
                "general exponential needs an exact head".into(),
            ));
        }
        let kk = rat_int(t.k as i64);
        let mut n_max = 0u64;
        while rat_int(n_max as i64) * (f - p1) + p1 < kk {
            n_max += 1;
        }
        if n_max >= t.p {
            return Err(Error::Convergence(format!(
                "exponential needs {n_max} terms; only {} fit before factorial \
                 denominators cost precision",
                t.p - 1
            )));
        }
        let mut acc = Series::one(&t);
        let mut pw = Series::one(&t);
        let mut fact_inv = Scalar::one(&t);
        for n in 1..=n_max {
            pw = pw.mul(self)?;
            fact_inv = fact_inv.mul(&Scalar::from_i64(&t, n as i64).inv()?);
            acc = acc.add(&pw.scale(&fact_inv));
        }
        acc.floor = VBound::Fin(rat_int(0));
        if acc.hi() > 0 {
            // terms beyond n_max vanish mod p^k
            acc = Series::new(
                t.clone(),
                acc.lo,
                acc.coeffs,
                Head::Bound {
                    slope: rat_int(0),
                    base: kk,
                },
                acc.tail_exact,
                acc.floor,
            );
        }
        Ok(acc)
    }

    pub fn to_json(&self) -> SeriesJson {
        let t = &self.tower;
        SeriesJson {
            header: SeriesHeader {
                p: t.p,
                k: t.k,
                ramified: t.ramified(),
                e0: t.e0.map(|x| x.to_string()),
            },
            window: (self.lo, self.hi()),
            head_exact: matches!(self.head, Head::Zero),
            tail_exact: self.tail_exact,
            floor: match self.floor {
                VBound::Fin(r) => Some(crate::val::RatStr(r)),
                VBound::Inf => None,
            },
            head_bound: match &self.head {
                Head::Zero => None,
                Head::Bound { slope, base } => Some(HeadBoundJson {
                    slope: crate::val::RatStr(*slope),
                    base: crate::val::RatStr(*base),
                }),
            },
            coeffs: (self.lo..=self.hi())
                .map(|d| (d, self.stored(d).unwrap().to_json()))
                .collect(),
        }
    }

    pub fn from_json(t: &Tower, j: &SeriesJson) -> Result<Series> {
        if j.header.p != t.p || j.header.k != t.k {
            return Err(Error::Serde("series header does not match tower".into()));
        }
        let (lo, hi) = j.window;
        if j.coeffs.len() as i64 != (hi - lo + 1).max(0) {
            return Err(Error::Serde("window does not match coefficient count".into()));
        }
        let mut coeffs = Vec::with_capacity(j.coeffs.len());
        let mut expect = lo;
        for (d, sj) in &j.coeffs {
            if *d != expect {
                return Err(Error::Serde("coefficients out of order".into()));
            }
            expect += 1;
            coeffs.push(Scalar::from_json(t, sj)?);
        }
        let head = match &j.head_bound {
            None if j.head_exact => Head::Zero,
            None => {
                return Err(Error::Serde("missing head bound".into()));
            }
            Some(hb) => Head::Bound {
                slope: hb.slope.0,
                base: hb.base.0,
            },
        };
        let floor = match &j.floor {
            Some(r) => VBound::Fin(r.0),
            None => VBound::Inf,
        };
        Ok(Series::new(t.clone(), lo, coeffs, head, j.tail_exact, floor))
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SeriesHeader {
    pub p: u64,
    pub k: u32,
    pub ramified: bool,
    pub e0: Option<String>,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct HeadBoundJson {
    pub slope: crate::val::RatStr,
    pub base: crate::val::RatStr,
}

/// Bit-exact JSON form of a series. Coefficients are listed in ascending
/// degree order, one entry per stored degree.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SeriesJson {
    pub header: SeriesHeader,
    pub window: (i64, i64),
    pub head_exact: bool,
    pub tail_exact: bool,
    pub floor: Option<crate::val::RatStr>,
    pub head_bound: Option<HeadBoundJson>,
    pub coeffs: Vec<(i64, ScalarJson)>,
}

// ---------------------------------------------------------------------------
// loop-group predicates
// ---------------------------------------------------------------------------

/// Which part of the p-adic loop group a series is certified to live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaKind {
    /// |h_0| = 1, integral everywhere, certified decay upward.
    Full,
    /// Additionally h_0 = 1 and no negative support.
    Plus,
    /// No positive support (constant term a unit).
    Minus,
}

/// Checks loop-group membership from stored coefficients and floors: unit
/// constant term, integrality, and decay above degree zero (a genuine slope,
/// or everything above a finite point below precision).
pub fn gamma_check(h: &Series) -> Result<GammaKind> {
    let t = h.tower();
    let kk = rat_int(t.k as i64);
    if !h.floor().ge(rat_int(0)) {
        return Err(Error::Domain("loop is not integral".into()));
    }
    let c0 = h
        .known_coeff(0)
        .ok_or_else(|| Error::Window("constant term not determined".into()))?;
    if !c0.is_unit() {
        return Err(Error::NonUnit("constant term of a loop must be a unit".into()));
    }
    for d in 1..=h.hi() {
        if let Some(c) = h.stored(d) {
            let v = c.valuation();
            if !(v.certified_positive() || v.lower_bound().ge(kk)) {
                return Err(Error::Domain(format!(
                    "coefficient at degree {d} is not certified below norm one"
                )));
            }
        }
    }
    match h.head() {
        Head::Zero => {
            if h.hi() > 0 {
                // fine: finitely many positive terms, all checked above
            }
        }
        Head::Bound { slope, base } => {
            if !(*slope > rat_int(0) || *base >= kk) {
                return Err(Error::Domain(
                    "head bound does not certify decay above the window".into(),
                ));
            }
        }
    }
    let plus = h.tail_exact() && h.lo() >= 0 && c0.eq_at_precision(&Scalar::one(t));
    if plus {
        return Ok(GammaKind::Plus);
    }
    // minus: no positive-degree content at working precision
    let stored_pos_silent = (1..=h.hi().max(0))
        .all(|d| h.stored(d).map(|c| c.vanishes_at_precision()).unwrap_or(true));
    let head_silent = match h.head() {
        Head::Zero => true,
        Head::Bound { base, .. } => VBound::Fin(*base).ge(kk),
    };
    if stored_pos_silent && head_silent {
        Ok(GammaKind::Minus)
    } else {
        Ok(GammaKind::Full)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::{make_context, Scalar};
    use crate::val::{rat, Val};

    fn t17() -> Tower {
        make_context(2, 17, 6).unwrap().tower
    }

    #[test]
    fn monomial_product_identity() {
        let t = t17();
        let x = Series::monomial(&t, 1, Scalar::one(&t));
        let xi = Series::monomial(&t, -1, Scalar::one(&t));
        let p = x.mul(&xi).unwrap();
        assert!(p.eq_at_precision_on(&Series::one(&t), -3, 3).unwrap());
    }

    #[test]
    fn geometric_series_inverse() {
        let t = t17();
        // 1 - T^{-1}, inverted to depth 10: 1 + T^{-1} + ... on the window
        let s = Series::from_int_terms(&t, &[(0, 1), (-1, -1)]);
        let inv = s.invert_to(10).unwrap();
        for d in -10..=0 {
            let c = inv.stored(d).unwrap();
            assert!(c.eq_at_precision(&Scalar::one(&t)), "coeff at {d}");
        }
        let prod = s.mul(&inv).unwrap();
        assert!(prod.eq_at_precision_on(&Series::one(&t), prod.lo(), 0).unwrap());
    }

    #[test]
    fn windowed_mul_drops_unreliable_tail() {
        let t = t17();
        // a = T^0 known on [-3, 0] with unknown tail; b likewise
        let coeffs = |n: usize| vec![Scalar::one(&t); n];
        let a = Series::new(
            t.clone(),
            -3,
            coeffs(4),
            Head::Zero,
            false,
            VBound::Fin(rat_int(0)),
        );
        let b = a.clone();
        let p = a.mul(&b).unwrap();
        // reliable low edge is max(lo1 + hi2, lo2 + hi1) = -3
        assert_eq!(p.lo(), -3);
        assert_eq!(p.hi(), 0);
        assert!(!p.tail_exact());
    }

    #[test]
    fn degree_and_monic() {
        let t = t17();
        let s = Series::from_int_terms(&t, &[(2, 1), (0, 1)]);
        assert_eq!(s.degree_monic().unwrap(), (2, true));
        let s2 = Series::from_int_terms(&t, &[(5, -1), (0, 3)]);
        assert_eq!(s2.degree_monic().unwrap(), (5, false));
        // coefficients below precision do not count
        let tiny = Scalar::from_i64(&t, 17).pow(6);
        let s3 = Series::from_terms(&t, &[(4, tiny.demote()), (1, Scalar::one(&t))]);
        assert_eq!(s3.degree_monic().unwrap(), (1, true));
        let z = Series::from_terms(&t, &[(0, Scalar::from_i64(&t, 17).pow(6).demote())]);
        assert!(z.degree_monic().is_err());
    }

    #[test]
    fn exp_examples() {
        let ctx = make_context(2, 17, 6).unwrap().ramify();
        let t = &ctx.tower;
        // exp(0) = 1
        let z = Series::zero(t);
        assert!(z.exp(10).unwrap().eq_at_precision_on(&Series::one(t), -2, 10).unwrap());
        // exp(pi T): coefficient of T^n is pi^n / n!, here for n < p
        let pi = Scalar::pi(t).unwrap();
        let arg = Series::monomial(t, 1, pi.clone());
        let e = arg.exp(16).unwrap();
        let mut fact = Scalar::one(t);
        for n in 1..=16u64 {
            fact = fact.mul(&Scalar::from_i64(t, n as i64));
            let expect = pi.pow(n).mul(&fact.inv().unwrap());
            assert!(e.stored(n as i64).unwrap().eq_at_precision(&expect), "n={n}");
            // Legendre: v(pi^n/n!) = s_p(n)/(p-1)
            let digit_sum = (0..2).map(|i| (n / 17u64.pow(i)) % 17).sum::<u64>() as i64;
            assert_eq!(
                e.stored(n as i64).unwrap().valuation(),
                Val::Finite(rat(digit_sum, 16))
            );
        }
        // group law: exp(a) exp(-a) = 1 (floor 1/2 via pi^8 keeps the sum short)
        let pi8 = pi.pow(8);
        let a = Series::from_terms(
            t,
            &[(1, pi8.mul(&ctx.int(3).demote())), (2, pi8.mul(&ctx.int(5).demote()))],
        );
        let ea = a.exp(40).unwrap();
        let eneg = a.neg().exp(40).unwrap();
        let prod = ea.mul(&eneg).unwrap();
        assert!(prod.eq_at_precision_on(&Series::one(t), 0, 30).unwrap());
    }

    #[test]
    fn exp_convergence_guards() {
        let ctx = make_context(2, 17, 6).unwrap().ramify();
        let t = &ctx.tower;
        let pi = Scalar::pi(t).unwrap();
        // floor exactly 1/(p-1) on a multi-term argument: refused
        let a = Series::from_terms(t, &[(1, pi.clone()), (2, pi.clone())]);
        assert!(a.exp(10).is_err());
        // constant term: refused
        let b = Series::from_terms(t, &[(0, pi.pow(2))]);
        assert!(b.exp(10).is_err());
        // integral but zero floor: refused
        let c = Series::from_int_terms(t, &[(1, 1)]);
        assert!(c.exp(10).is_err());
    }

    #[test]
    fn scale_argument_is_ring_map() {
        let ctx = make_context(2, 17, 6).unwrap();
        let t = &ctx.tower;
        let z = ctx.zeta();
        let a = Series::from_int_terms(t, &[(3, 2), (-1, 5), (0, 1)]);
        let b = Series::from_int_terms(t, &[(2, 7), (-2, 1)]);
        let lhs = a.mul(&b).unwrap().scale_argument(&z).unwrap();
        let rhs = a
            .scale_argument(&z)
            .unwrap()
            .mul(&b.scale_argument(&z).unwrap())
            .unwrap();
        assert!(lhs.eq_at_precision_on(&rhs, lhs.lo(), lhs.hi()).unwrap());
        // twist of a constant is itself
        let c = Series::constant(t, ctx.int(9));
        let tw = c.scale_argument(&z).unwrap();
        assert!(tw.eq_at_precision_on(&c, 0, 0).unwrap());
        // 4g-fold twist is the identity
        let mut cur = a.clone();
        for _ in 0..8 {
            cur = cur.scale_argument(&z).unwrap();
        }
        assert!(cur.eq_at_precision_on(&a, -1, 3).unwrap());
    }

    #[test]
    fn degree_is_additive() {
        let t = t17();
        let a = Series::from_int_terms(&t, &[(4, 1), (1, -7)]);
        let b = Series::from_int_terms(&t, &[(3, 1), (0, 2)]);
        let p = a.mul(&b).unwrap();
        assert_eq!(p.degree_monic().unwrap().0, 7);
    }

    #[test]
    fn sup_norm_examples() {
        let ctx = make_context(2, 17, 6).unwrap().ramify();
        let t = &ctx.tower;
        assert_eq!(Series::one(t).sup_norm_val(), Val::Finite(rat_int(0)));
        let pit = Series::monomial(t, 1, Scalar::pi(t).unwrap());
        assert_eq!(pit.sup_norm_val(), Val::Finite(rat(1, 16)));
    }

    #[test]
    fn series_json_roundtrip() {
        let ctx = make_context(2, 17, 4).unwrap().ramify();
        let t = &ctx.tower;
        let s = Series::new(
            t.clone(),
            -2,
            vec![
                ctx.int(5),
                Scalar::pi(t).unwrap(),
                ctx.int(0),
                ctx.int(-33),
            ],
            Head::Bound {
                slope: rat(16, 289),
                base: rat(3, 17),
            },
            false,
            VBound::Fin(rat_int(0)),
        );
        let j = s.to_json();
        let txt = serde_json::to_string(&j).unwrap();
        let back: SeriesJson = serde_json::from_str(&txt).unwrap();
        let s2 = Series::from_json(t, &back).unwrap();
        assert_eq!(s.lo(), s2.lo());
        assert_eq!(s.hi(), s2.hi());
        assert_eq!(s.head(), s2.head());
        assert_eq!(s.tail_exact(), s2.tail_exact());
        assert_eq!(s.floor(), s2.floor());
        for d in s.lo()..=s.hi() {
            assert!(s.stored(d).unwrap().eq_at_precision(s2.stored(d).unwrap()));
        }
        // byte-exact round trip of the serialized form
        let txt2 = serde_json::to_string(&s2.to_json()).unwrap();
        assert_eq!(txt, txt2);
    }

    #[test]
    fn gamma_membership() {
        let ctx = make_context(2, 17, 6).unwrap().ramify();
        let t = &ctx.tower;
        let one = Series::one(t);
        assert_eq!(gamma_check(&one).unwrap(), GammaKind::Plus);
        let minus = Series::from_int_terms(t, &[(0, 3), (-2, 17)]);
        assert_eq!(gamma_check(&minus).unwrap(), GammaKind::Minus);
        let bad = Series::from_int_terms(t, &[(0, 1), (3, 1)]);
        assert!(gamma_check(&bad).is_err());
    }
}
