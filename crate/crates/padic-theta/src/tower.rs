//! Exact arithmetic in the coefficient tower
//! `Z_p ⊂ O1 = Z_p[pi]/(pi^(p-1) + p) ⊂ O2 = O1[eps]/(eps^(p-1) - e0^(-1))`.
//!
//! A [`Scalar`] is either an exact rational integer or a vector of residues
//! mod p^k in the monomial basis `{pi^a eps^b}`. The second extension is kept
//! as a quotient by `X^(p-1) - e0^(-1)` without factoring: since e0 is a unit
//! and p does not divide p-1, the quotient is etale over the base, so
//! coordinate-wise integrality agrees with integrality in every factor and no
//! field factorization is ever required. Units are certified through the norm
//! of the residue (the determinant of the multiplication matrix mod p).
//!
//! Precision model: residues carry fixed absolute precision p^k. Operations
//! never silently lose precision; anything that would is routed through
//! explicit divisions that report the digits lost.

use crate::val::{rat, rat_int, Rat, Val};
use crate::{Error, Result};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// small modular helpers
// ---------------------------------------------------------------------------

pub(crate) fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub(crate) fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    acc
}

/// Inverse of a mod m for gcd(a, m) = 1.
pub(crate) fn inv_mod(a: u64, m: u64) -> Option<u64> {
    let (mut t, mut new_t): (i128, i128) = (0, 1);
    let (mut r, mut new_r): (i128, i128) = (m as i128, (a % m) as i128);
    while new_r != 0 {
        let q = r / new_r;
        (t, new_t) = (new_t, t - q * new_t);
        (r, new_r) = (new_r, r - q * new_r);
    }
    if r != 1 {
        return None;
    }
    Some(t.rem_euclid(m as i128) as u64)
}

pub(crate) fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// Multiplicative order of a mod p (p prime, a not divisible by p).
pub(crate) fn mult_order(a: u64, p: u64) -> u64 {
    let mut ord = 1;
    let mut x = a % p;
    while x != 1 {
        x = mul_mod(x, a, p);
        ord += 1;
    }
    ord
}

fn vp_u64(mut c: u64, p: u64) -> u32 {
    debug_assert!(c != 0);
    let mut v = 0;
    while c % p == 0 {
        c /= p;
        v += 1;
    }
    v
}

pub(crate) fn vp_bigint(n: &BigInt, p: u64) -> u32 {
    debug_assert!(!n.is_zero());
    let p = BigInt::from(p);
    let mut v = 0;
    let mut n = n.clone();
    loop {
        let (q, r) = n.div_rem(&p);
        if !r.is_zero() {
            return v;
        }
        n = q;
        v += 1;
    }
}

pub(crate) fn bigint_mod_u64(n: &BigInt, m: u64) -> u64 {
    n.mod_floor(&BigInt::from(m)).to_u64().expect("residue fits")
}

// ---------------------------------------------------------------------------
// tower parameters
// ---------------------------------------------------------------------------

/// Immutable description of a stage of the coefficient tower.
#[derive(Debug, PartialEq, Eq)]
pub struct TowerParams {
    pub p: u64,
    pub k: u32,
    /// p^k, the absolute precision modulus.
    pub pk: u64,
    /// 1 when pi is not adjoined, p-1 otherwise.
    pub pi_dim: u32,
    /// 1 when eps is not adjoined, p-1 otherwise.
    pub eps_dim: u32,
    /// e0 mod p^k (present exactly when eps is adjoined).
    pub e0: Option<u64>,
    /// e0^(-1) mod p^k.
    pub e0_inv: Option<u64>,
}

pub type Tower = Arc<TowerParams>;

impl TowerParams {
    pub fn base(p: u64, k: u32) -> Result<Tower> {
        if !is_prime(p) {
            return Err(Error::InvalidParameter(format!("{p} is not prime")));
        }
        if k < 1 {
            return Err(Error::InvalidParameter("precision k must be >= 1".into()));
        }
        let pk = p
            .checked_pow(k)
            .filter(|&m| m < (1u64 << 63))
            .ok_or_else(|| {
                Error::InvalidParameter(format!("p^k = {p}^{k} exceeds the 63-bit residue limit"))
            })?;
        Ok(Arc::new(TowerParams {
            p,
            k,
            pk,
            pi_dim: 1,
            eps_dim: 1,
            e0: None,
            e0_inv: None,
        }))
    }

    pub fn ramified(&self) -> bool {
        self.pi_dim > 1
    }

    pub fn has_epsilon(&self) -> bool {
        self.eps_dim > 1
    }

    pub fn dim(&self) -> usize {
        (self.pi_dim * self.eps_dim) as usize
    }

    fn idx(&self, a: u32, b: u32) -> usize {
        (a * self.eps_dim + b) as usize
    }
}

/// Adjoin pi with pi^(p-1) = -p.
pub fn with_pi(t: &Tower) -> Tower {
    if t.ramified() {
        return t.clone();
    }
    Arc::new(TowerParams {
        p: t.p,
        k: t.k,
        pk: t.pk,
        pi_dim: (t.p - 1) as u32,
        eps_dim: t.eps_dim,
        e0: t.e0,
        e0_inv: t.e0_inv,
    })
}

/// Adjoin eps with eps^(p-1) = e0^(-1), as an etale extension. e0 must be a
/// unit.
pub fn with_epsilon(t: &Tower, e0: &Scalar) -> Result<Tower> {
    if t.has_epsilon() {
        return Err(Error::InvalidParameter("eps already adjoined".into()));
    }
    let e0_mod = e0.residue_u64()?;
    if e0_mod % t.p == 0 {
        return Err(Error::NonUnit("e0 must be a p-adic unit".into()));
    }
    let e0_inv = inv_mod(e0_mod, t.pk).ok_or_else(|| Error::NonUnit("e0 not invertible".into()))?;
    Ok(Arc::new(TowerParams {
        p: t.p,
        k: t.k,
        pk: t.pk,
        pi_dim: (t.p - 1) as u32,
        eps_dim: (t.p - 1) as u32,
        e0: Some(e0_mod),
        e0_inv: Some(e0_inv),
    }))
}

/// Pick the larger of two compatible towers (same p, k, agreeing e0).
pub fn unify(a: &Tower, b: &Tower) -> Result<Tower> {
    if Arc::ptr_eq(a, b) {
        return Ok(a.clone());
    }
    if a.p != b.p || a.k != b.k {
        return Err(Error::Domain(format!(
            "incompatible towers: (p,k)=({},{}) vs ({},{})",
            a.p, a.k, b.p, b.k
        )));
    }
    if let (Some(x), Some(y)) = (a.e0, b.e0) {
        if x != y {
            return Err(Error::Domain("incompatible towers: different e0".into()));
        }
    }
    Ok(if a.dim() >= b.dim() { a.clone() } else { b.clone() })
}

// ---------------------------------------------------------------------------
// scalars
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
enum Repr {
    /// Exact rational integer (known beyond any finite precision).
    Int(BigInt),
    /// Residues mod p^k in the monomial basis, row-major over (a, b).
    Coords(Vec<u64>),
}

/// Element of the coefficient tower with tracked precision.
#[derive(Clone, Debug)]
pub struct Scalar {
    tower: Tower,
    repr: Repr,
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (&self.repr, &other.repr) {
            (Repr::Int(a), Repr::Int(b)) => a == b,
            _ => match unify(&self.tower, &other.tower) {
                Ok(t) => self.coords_in(&t) == other.coords_in(&t),
                Err(_) => false,
            },
        }
    }
}

impl Scalar {
    pub fn tower(&self) -> &Tower {
        &self.tower
    }

    pub fn zero(t: &Tower) -> Scalar {
        Scalar {
            tower: t.clone(),
            repr: Repr::Int(BigInt::zero()),
        }
    }

    pub fn one(t: &Tower) -> Scalar {
        Scalar::from_i64(t, 1)
    }

    pub fn from_i64(t: &Tower, n: i64) -> Scalar {
        Scalar {
            tower: t.clone(),
            repr: Repr::Int(BigInt::from(n)),
        }
    }

    pub fn from_bigint(t: &Tower, n: BigInt) -> Scalar {
        Scalar {
            tower: t.clone(),
            repr: Repr::Int(n),
        }
    }

    /// Residue class mod p^k in the base coordinate, forgetting exactness.
    pub fn modular_from_u64(t: &Tower, c: u64) -> Scalar {
        let mut v = vec![0u64; t.dim()];
        v[0] = c % t.pk;
        Scalar {
            tower: t.clone(),
            repr: Repr::Coords(v),
        }
    }

    /// pi as a scalar (requires a ramified tower).
    pub fn pi(t: &Tower) -> Result<Scalar> {
        if !t.ramified() {
            return Err(Error::Domain("pi is not adjoined in this tower".into()));
        }
        Ok(Scalar::monomial(t, 1, 0, 1))
    }

    /// eps as a scalar (requires the etale extension).
    pub fn epsilon(t: &Tower) -> Result<Scalar> {
        if !t.has_epsilon() {
            return Err(Error::Domain("eps is not adjoined in this tower".into()));
        }
        Ok(Scalar::monomial(t, 0, 1, 1))
    }

    pub fn monomial(t: &Tower, a: u32, b: u32, c: u64) -> Scalar {
        assert!(a < t.pi_dim && b < t.eps_dim, "monomial outside tower");
        let mut v = vec![0u64; t.dim()];
        v[t.idx(a, b)] = c % t.pk;
        Scalar {
            tower: t.clone(),
            repr: Repr::Coords(v),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.repr, Repr::Int(_))
    }

    pub(crate) fn coords_raw(&self, t: &Tower) -> Vec<u64> {
        self.coords_in(t)
    }

    pub(crate) fn from_coords(t: &Tower, v: Vec<u64>) -> Scalar {
        debug_assert_eq!(v.len(), t.dim());
        Scalar {
            tower: t.clone(),
            repr: Repr::Coords(v),
        }
    }

    pub fn exact_value(&self) -> Option<&BigInt> {
        match &self.repr {
            Repr::Int(n) => Some(n),
            _ => None,
        }
    }

    fn coords_in(&self, t: &Tower) -> Vec<u64> {
        match &self.repr {
            Repr::Int(n) => {
                let mut v = vec![0u64; t.dim()];
                v[0] = bigint_mod_u64(n, t.pk);
                v
            }
            Repr::Coords(c) => {
                let src = &self.tower;
                if src.pi_dim == t.pi_dim && src.eps_dim == t.eps_dim {
                    return c.clone();
                }
                assert!(
                    src.pi_dim <= t.pi_dim && src.eps_dim <= t.eps_dim,
                    "cannot view scalar in a narrower tower"
                );
                let mut v = vec![0u64; t.dim()];
                for a in 0..src.pi_dim {
                    for b in 0..src.eps_dim {
                        v[t.idx(a, b)] = c[src.idx(a, b)];
                    }
                }
                v
            }
        }
    }

    /// Same element viewed in a compatible (possibly wider) tower.
    pub fn promote(&self, t: &Tower) -> Scalar {
        if Arc::ptr_eq(&self.tower, t) {
            return self.clone();
        }
        match &self.repr {
            Repr::Int(n) => Scalar {
                tower: t.clone(),
                repr: Repr::Int(n.clone()),
            },
            Repr::Coords(_) => Scalar {
                tower: t.clone(),
                repr: Repr::Coords(self.coords_in(t)),
            },
        }
    }

    /// Forget exactness: residues mod p^k.
    pub fn demote(&self) -> Scalar {
        match &self.repr {
            Repr::Int(_) => Scalar {
                tower: self.tower.clone(),
                repr: Repr::Coords(self.coords_in(&self.tower)),
            },
            Repr::Coords(_) => self.clone(),
        }
    }

    /// Base-coordinate residue of the demoted value, ignoring the rest.
    pub fn coords_first(&self) -> u64 {
        match &self.repr {
            Repr::Int(n) => bigint_mod_u64(n, self.tower.pk),
            Repr::Coords(c) => c[0],
        }
    }

    /// The base-coordinate residue mod p^k; error if other coordinates are
    /// occupied.
    pub fn residue_u64(&self) -> Result<u64> {
        match &self.repr {
            Repr::Int(n) => Ok(bigint_mod_u64(n, self.tower.pk)),
            Repr::Coords(c) => {
                if c.iter().skip(1).any(|&x| x != 0) {
                    return Err(Error::Domain("scalar is not in the base coordinate".into()));
                }
                Ok(c[0])
            }
        }
    }

    pub fn add(&self, other: &Scalar) -> Scalar {
        let t = unify(&self.tower, &other.tower).expect("incompatible towers in add");
        match (&self.repr, &other.repr) {
            (Repr::Int(a), Repr::Int(b)) => Scalar {
                tower: t,
                repr: Repr::Int(a + b),
            },
            _ => {
                let mut a = self.coords_in(&t);
                let b = other.coords_in(&t);
                for (x, y) in a.iter_mut().zip(b) {
                    *x = (*x + y) % t.pk;
                }
                Scalar {
                    tower: t,
                    repr: Repr::Coords(a),
                }
            }
        }
    }

    pub fn neg(&self) -> Scalar {
        match &self.repr {
            Repr::Int(n) => Scalar {
                tower: self.tower.clone(),
                repr: Repr::Int(-n),
            },
            Repr::Coords(c) => {
                let pk = self.tower.pk;
                Scalar {
                    tower: self.tower.clone(),
                    repr: Repr::Coords(
                        c.iter().map(|&x| if x == 0 { 0 } else { pk - x }).collect(),
                    ),
                }
            }
        }
    }

    pub fn sub(&self, other: &Scalar) -> Scalar {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Scalar) -> Scalar {
        let t = unify(&self.tower, &other.tower).expect("incompatible towers in mul");
        match (&self.repr, &other.repr) {
            (Repr::Int(a), Repr::Int(b)) => Scalar {
                tower: t,
                repr: Repr::Int(a * b),
            },
            _ => {
                let a = self.coords_in(&t);
                let b = other.coords_in(&t);
                let mut acc = MulAcc::new(&t);
                acc.add_product(&t, &a, &b);
                Scalar {
                    tower: t.clone(),
                    repr: Repr::Coords(acc.finish(t.pk)),
                }
            }
        }
    }

    pub fn pow(&self, mut e: u64) -> Scalar {
        let mut base = self.clone();
        let mut acc = Scalar::one(&self.tower);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    /// Valuation with tracked precision. Exact on the tower: over the ramified
    /// stage the monomial valuations are pairwise distinct mod 1, and over the
    /// etale stage the transition to components has unit determinant, so the
    /// coordinate-wise minimum is the true valuation.
    pub fn valuation(&self) -> Val {
        let t = &self.tower;
        match &self.repr {
            Repr::Int(n) => {
                if n.is_zero() {
                    Val::Infinite
                } else {
                    Val::Finite(rat_int(vp_bigint(n, t.p) as i64))
                }
            }
            Repr::Coords(c) => {
                let mut best: Option<Rat> = None;
                for a in 0..t.pi_dim {
                    for b in 0..t.eps_dim {
                        let x = c[t.idx(a, b)];
                        if x == 0 {
                            continue;
                        }
                        let v = rat_int(vp_u64(x, t.p) as i64) + rat(a as i64, (t.p - 1) as i64);
                        best = Some(match best {
                            Some(cur) => cur.min(v),
                            None => v,
                        });
                    }
                }
                match best {
                    Some(v) => Val::Finite(v),
                    None => Val::AtLeast(rat_int(t.k as i64)),
                }
            }
        }
    }

    /// True when the residue mod p^k vanishes (exact values: divisible by
    /// p^k).
    pub fn vanishes_at_precision(&self) -> bool {
        match &self.repr {
            Repr::Int(n) => n.is_zero() || vp_bigint(n, self.tower.p) >= self.tower.k,
            Repr::Coords(c) => c.iter().all(|&x| x == 0),
        }
    }

    pub fn counts_nonzero(&self) -> bool {
        self.valuation().counts_nonzero(self.tower.k)
    }

    /// Norm of the residue: determinant mod p of multiplication by this
    /// element on the etale part, with pi killed. Nonzero exactly when the
    /// element is a unit of the tower.
    pub fn residual_norm(&self) -> u64 {
        let t = &self.tower;
        let p = t.p;
        let d = t.eps_dim as usize;
        let mut poly = vec![0u64; d];
        match &self.repr {
            Repr::Int(n) => poly[0] = bigint_mod_u64(n, p),
            Repr::Coords(c) => {
                for b in 0..d {
                    poly[b] = c[t.idx(0, b as u32)] % p;
                }
            }
        }
        if d == 1 {
            return poly[0];
        }
        let e0_inv = t.e0_inv.expect("eps tower has e0") % p;
        let mut m = vec![vec![0u64; d]; d];
        for j in 0..d {
            for (i, &coef) in poly.iter().enumerate() {
                if coef == 0 {
                    continue;
                }
                let e = i + j;
                if e < d {
                    m[e][j] = (m[e][j] + coef) % p;
                } else {
                    m[e - d][j] = (m[e - d][j] + mul_mod(coef, e0_inv, p)) % p;
                }
            }
        }
        det_mod_p(m, p)
    }

    pub fn is_unit(&self) -> bool {
        self.residual_norm() != 0
    }

    /// Multiplicative inverse; errors on non-units. The residue is inverted in
    /// the etale algebra mod (p, pi) and lifted by Newton iteration.
    pub fn inv(&self) -> Result<Scalar> {
        let t = &self.tower;
        if let Repr::Int(n) = &self.repr {
            if n.magnitude().is_one() {
                return Ok(self.clone());
            }
        }
        if !self.is_unit() {
            return Err(Error::NonUnit(format!(
                "cannot invert element of residual norm 0 (valuation {})",
                self.valuation()
            )));
        }
        let d = t.eps_dim as usize;
        let p = t.p;
        let mut poly = vec![0u64; d];
        match &self.repr {
            Repr::Int(n) => poly[0] = bigint_mod_u64(n, p),
            Repr::Coords(c) => {
                for b in 0..d {
                    poly[b] = c[t.idx(0, b as u32)] % p;
                }
            }
        }
        let inv0 = if d == 1 {
            vec![inv_mod(poly[0], p).expect("unit residue")]
        } else {
            poly_inverse_mod(&poly, t.e0_inv.unwrap() % p, p)
                .ok_or_else(|| Error::NonUnit("residue not invertible".into()))?
        };
        let mut x = {
            let mut v = vec![0u64; t.dim()];
            for (b, &c) in inv0.iter().enumerate() {
                v[t.idx(0, b as u32)] = c;
            }
            Scalar {
                tower: t.clone(),
                repr: Repr::Coords(v),
            }
        };
        let one = Scalar::one(t);
        let two = Scalar::from_i64(t, 2);
        for _ in 0..40 {
            if self.mul(&x).eq_at_precision(&one) {
                return Ok(x);
            }
            let e = two.sub(&self.mul(&x));
            x = x.mul(&e);
        }
        Err(Error::NonUnit("inverse iteration did not converge".into()))
    }

    /// Exact division by pi^a. Requires valuation >= a/(p-1). Wrapping below
    /// the monomial basis borrows powers of -1/p, so the result is meaningful
    /// only mod p^(k - lost); the digits lost are returned.
    pub fn div_pi_pow(&self, a: u32) -> Result<(Scalar, u32)> {
        if a == 0 {
            return Ok((self.clone(), 0));
        }
        let t = &self.tower;
        if !t.ramified() {
            return Err(Error::Domain("pi not adjoined".into()));
        }
        let p1 = t.pi_dim;
        let e = a / p1;
        let r = a % p1;
        let mut s = self.demote();
        let mut denom_pow = e;
        if r > 0 {
            s = s.mul(&Scalar::monomial(t, p1 - r, 0, 1));
            denom_pow = e + 1;
        }
        if denom_pow == 0 {
            return Ok((s, 0));
        }
        if denom_pow >= t.k {
            return Err(Error::UnknownPrecision(format!(
                "division by pi^{a} exhausts precision"
            )));
        }
        // divide by (-p)^denom_pow coordinate-wise
        let pe = t.p.pow(denom_pow);
        let Repr::Coords(c) = &s.repr else { unreachable!() };
        let mut out = vec![0u64; c.len()];
        for (o, &x) in out.iter_mut().zip(c.iter()) {
            if x == 0 {
                continue;
            }
            if x % pe != 0 {
                return Err(Error::NonUnit(format!("division by pi^{a} is not integral")));
            }
            let q = x / pe;
            *o = if denom_pow % 2 == 1 { (t.pk - q) % t.pk } else { q };
        }
        Ok((
            Scalar {
                tower: t.clone(),
                repr: Repr::Coords(out),
            },
            denom_pow,
        ))
    }

    /// If this scalar is pi^a times a unit, return a (the valuation scaled by
    /// p-1).
    pub fn unit_pi_shift(&self) -> Option<u32> {
        let v = match self.valuation() {
            Val::Finite(v) => v,
            _ => return None,
        };
        let p1 = (self.tower.p - 1) as i64;
        let scaled = v * rat_int(p1);
        if !scaled.is_integer() || scaled < rat_int(0) {
            return None;
        }
        let a = scaled.to_integer();
        if a < 0 || a >= p1 * self.tower.k as i64 {
            return None;
        }
        let (q, _) = self.div_pi_pow(a as u32).ok()?;
        if q.is_unit() {
            Some(a as u32)
        } else {
            None
        }
    }

    pub fn eq_at_precision(&self, other: &Scalar) -> bool {
        self.sub(other).vanishes_at_precision()
    }

    /// Little-endian base-p digit encoding; exact integers keep their sign.
    pub fn to_json(&self) -> ScalarJson {
        let t = &self.tower;
        match &self.repr {
            Repr::Int(n) => ScalarJson::Int(bigint_to_digits(n, t.p)),
            Repr::Coords(c) => {
                let mut coords = Vec::new();
                for a in 0..t.pi_dim {
                    for b in 0..t.eps_dim {
                        let x = c[t.idx(a, b)];
                        if x != 0 {
                            coords.push((a, b, u64_to_digits(x, t.p)));
                        }
                    }
                }
                ScalarJson::Coords(coords)
            }
        }
    }

    pub fn from_json(t: &Tower, j: &ScalarJson) -> Result<Scalar> {
        match j {
            ScalarJson::Int(s) => Ok(Scalar::from_bigint(t, digits_to_bigint(s, t.p)?)),
            ScalarJson::Coords(coords) => {
                let mut v = vec![0u64; t.dim()];
                for (a, b, s) in coords {
                    if *a >= t.pi_dim || *b >= t.eps_dim {
                        return Err(Error::Serde("coordinate outside the tower".into()));
                    }
                    let n = digits_to_bigint(s, t.p)?;
                    if n.is_negative() {
                        return Err(Error::Serde("modular coordinates are non-negative".into()));
                    }
                    v[t.idx(*a, *b)] = bigint_mod_u64(&n, t.pk);
                }
                Ok(Scalar {
                    tower: t.clone(),
                    repr: Repr::Coords(v),
                })
            }
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Int(n) => write!(f, "{}", n),
            Repr::Coords(c) => {
                let t = &self.tower;
                let mut first = true;
                for a in 0..t.pi_dim {
                    for b in 0..t.eps_dim {
                        let x = c[t.idx(a, b)];
                        if x == 0 {
                            continue;
                        }
                        if !first {
                            write!(f, " + ")?;
                        }
                        first = false;
                        write!(f, "{}", x)?;
                        if a > 0 {
                            write!(f, "*pi^{}", a)?;
                        }
                        if b > 0 {
                            write!(f, "*eps^{}", b)?;
                        }
                    }
                }
                if first {
                    write!(f, "O(p^{})", t.k)?;
                }
                Ok(())
            }
        }
    }
}

/// JSON form of a scalar: exact integer digit string or sparse coordinates
/// `(pi-exp, eps-exp, digits)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum ScalarJson {
    Int(String),
    Coords(Vec<(u32, u32, String)>),
}

// Lazy u128 accumulator for coordinate convolutions: products stay below
// 2^126, and slots reduce themselves before they can overflow.
pub(crate) struct MulAcc {
    v: Vec<u128>,
    pi_dim: u32,
    eps_dim: u32,
}

const ACC_GUARD: u128 = 1 << 127;

impl MulAcc {
    pub(crate) fn new(t: &Tower) -> MulAcc {
        MulAcc {
            v: vec![0u128; t.dim()],
            pi_dim: t.pi_dim,
            eps_dim: t.eps_dim,
        }
    }

    #[inline]
    fn bump(&mut self, idx: usize, prod: u128, pk: u64) {
        let slot = &mut self.v[idx];
        if *slot >= ACC_GUARD {
            *slot %= pk as u128;
        }
        *slot += prod;
    }

    pub(crate) fn add_product(&mut self, t: &Tower, x: &[u64], y: &[u64]) {
        let pk = t.pk;
        let neg_p = pk - t.p % pk;
        let pd = self.pi_dim;
        let ed = self.eps_dim;
        for a1 in 0..pd {
            for b1 in 0..ed {
                let c1 = x[(a1 * ed + b1) as usize];
                if c1 == 0 {
                    continue;
                }
                for a2 in 0..pd {
                    for b2 in 0..ed {
                        let mut c2 = y[(a2 * ed + b2) as usize];
                        if c2 == 0 {
                            continue;
                        }
                        let mut a = a1 + a2;
                        if a >= pd {
                            a -= pd;
                            if pd > 1 {
                                c2 = mul_mod(c2, neg_p, pk);
                            }
                        }
                        let mut b = b1 + b2;
                        if b >= ed {
                            b -= ed;
                            if ed > 1 {
                                c2 = mul_mod(c2, t.e0_inv.expect("eps tower"), pk);
                            }
                        }
                        let prod = c1 as u128 * c2 as u128;
                        self.bump((a * ed + b) as usize, prod, pk);
                    }
                }
            }
        }
    }

    pub(crate) fn finish(self, pk: u64) -> Vec<u64> {
        self.v.into_iter().map(|x| (x % pk as u128) as u64).collect()
    }
}

fn det_mod_p(mut m: Vec<Vec<u64>>, p: u64) -> u64 {
    let n = m.len();
    let mut det = 1u64;
    for col in 0..n {
        let Some(pr) = (col..n).find(|&r| m[r][col] % p != 0) else {
            return 0;
        };
        if pr != col {
            m.swap(pr, col);
            det = (p - det) % p;
        }
        let pv = m[col][col] % p;
        det = mul_mod(det, pv, p);
        let pv_inv = inv_mod(pv, p).unwrap();
        for r in (col + 1)..n {
            let f = mul_mod(m[r][col] % p, pv_inv, p);
            if f == 0 {
                continue;
            }
            for c in col..n {
                let sub = mul_mod(f, m[col][c] % p, p);
                m[r][c] = (m[r][c] + p - sub) % p;
            }
        }
    }
    det % p
}

/// Inverse of poly in F_p[X]/(X^d - c) by extended Euclid. None on non-units.
fn poly_inverse_mod(poly: &[u64], c: u64, p: u64) -> Option<Vec<u64>> {
    let d = poly.len();
    let mut modulus = vec![0u64; d + 1];
    modulus[0] = (p - c % p) % p;
    modulus[d] = 1;
    let (mut r0, mut r1) = (modulus, poly.to_vec());
    let (mut t0, mut t1) = (vec![0u64; 0], vec![1u64]);
    poly_trim(&mut r1, p);
    while !r1.is_empty() {
        let (q, rem) = poly_divmod(&r0, &r1, p)?;
        let t2 = poly_sub(&t0, &poly_mul(&q, &t1, p), p);
        r0 = r1;
        r1 = rem;
        t0 = t1;
        t1 = t2;
    }
    if r0.len() != 1 {
        return None;
    }
    let lead_inv = inv_mod(r0[0], p)?;
    let mut out: Vec<u64> = t0.iter().map(|&x| mul_mod(x, lead_inv, p)).collect();
    out.resize(d, 0);
    Some(out)
}

fn poly_trim(v: &mut Vec<u64>, p: u64) {
    while let Some(&last) = v.last() {
        if last % p == 0 {
            v.pop();
        } else {
            break;
        }
    }
}

fn poly_divmod(num: &[u64], den: &[u64], p: u64) -> Option<(Vec<u64>, Vec<u64>)> {
    let mut rem = num.to_vec();
    poly_trim(&mut rem, p);
    let mut den = den.to_vec();
    poly_trim(&mut den, p);
    if den.is_empty() {
        return None;
    }
    let dl = den.len();
    let lead_inv = inv_mod(*den.last().unwrap() % p, p)?;
    if rem.len() < dl {
        return Some((vec![], rem));
    }
    let mut q = vec![0u64; rem.len() - dl + 1];
    while rem.len() >= dl {
        let f = mul_mod(*rem.last().unwrap() % p, lead_inv, p);
        let shift = rem.len() - dl;
        q[shift] = f;
        for i in 0..dl {
            let sub = mul_mod(f, den[i] % p, p);
            rem[shift + i] = (rem[shift + i] + p - sub) % p;
        }
        poly_trim(&mut rem, p);
    }
    Some((q, rem))
}

fn poly_mul(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut out = vec![0u64; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x % p == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = (out[i + j] + mul_mod(x % p, y % p, p)) % p;
        }
    }
    out
}

fn poly_sub(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
    let n = a.len().max(b.len());
    let mut out = vec![0u64; n];
    for (i, o) in out.iter_mut().enumerate() {
        let x = a.get(i).copied().unwrap_or(0) % p;
        let y = b.get(i).copied().unwrap_or(0) % p;
        *o = (x + p - y) % p;
    }
    poly_trim(&mut out, p);
    out
}

fn u64_to_digits(mut x: u64, p: u64) -> String {
    if x == 0 {
        return "0".into();
    }
    let mut parts = Vec::new();
    while x > 0 {
        parts.push((x % p).to_string());
        x /= p;
    }
    parts.join(".")
}

fn bigint_to_digits(n: &BigInt, p: u64) -> String {
    if n.is_zero() {
        return "0".into();
    }
    let neg = n.is_negative();
    let mut mag = n.magnitude().clone();
    let p_big = BigUint::from(p);
    let mut parts = Vec::new();
    while !mag.is_zero() {
        let (q, r) = mag.div_rem(&p_big);
        parts.push(r.to_u64().unwrap().to_string());
        mag = q;
    }
    let body = parts.join(".");
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn digits_to_bigint(s: &str, p: u64) -> Result<BigInt> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let mut acc = BigInt::zero();
    let p_big = BigInt::from(p);
    for part in body.split('.').rev() {
        let d: u64 = part
            .parse()
            .map_err(|_| Error::Serde(format!("bad digit: {part}")))?;
        if d >= p {
            return Err(Error::Serde(format!("digit {d} out of range for base {p}")));
        }
        acc = acc * &p_big + BigInt::from(d);
    }
    Ok(if neg { -acc } else { acc })
}

// ---------------------------------------------------------------------------
// prime context
// ---------------------------------------------------------------------------

/// Standing parameters: genus, prime, precision, and the order-4g Teichmueller
/// lift used everywhere downstream.
#[derive(Clone, Debug)]
pub struct PrimeCtx {
    pub g: u32,
    pub p: u64,
    pub k: u32,
    /// Least positive integer of multiplicative order 4g mod p.
    pub s0: u64,
    /// The tower this context computes in.
    pub tower: Tower,
    zeta: Scalar,
}

/// Validate (g, p, k) and build the base context. zeta is realized as the
/// Teichmueller lift of the least residue of order 4g; no cyclotomic extension
/// is ever constructed.
pub fn make_context(g: u32, p: u64, k: u32) -> Result<PrimeCtx> {
    if g < 2 {
        return Err(Error::InvalidParameter("genus must be >= 2".into()));
    }
    if !is_prime(p) {
        return Err(Error::InvalidParameter(format!("{p} is not prime")));
    }
    if p < 7 {
        return Err(Error::InvalidParameter(
            "p must be >= 7 (loop estimates require it)".into(),
        ));
    }
    let m = 4 * g as u64;
    if p % m != 1 {
        return Err(Error::InvalidParameter(format!(
            "p = {p} is not congruent to 1 mod 4g = {m}"
        )));
    }
    let tower = TowerParams::base(p, k)?;
    let s0 = (2..p)
        .find(|&s| mult_order(s, p) == m)
        .ok_or_else(|| Error::InvalidParameter("no element of order 4g".into()))?;
    let zeta = teichmuller_in(&tower, s0 as i64)?;
    Ok(PrimeCtx {
        g,
        p,
        k,
        s0,
        tower,
        zeta,
    })
}

impl PrimeCtx {
    pub fn zeta(&self) -> Scalar {
        self.zeta.promote(&self.tower)
    }

    pub fn int(&self, n: i64) -> Scalar {
        Scalar::from_i64(&self.tower, n)
    }

    pub fn teichmuller(&self, i: i64) -> Result<Scalar> {
        teichmuller_in(&self.tower, i)
    }

    pub fn ramified(&self) -> bool {
        self.tower.ramified()
    }

    /// Context over the ramified stage O1 = Z_p[pi].
    pub fn ramify(&self) -> PrimeCtx {
        PrimeCtx {
            tower: with_pi(&self.tower),
            ..self.clone()
        }
    }

    /// Context over O2 = O1[eps]/(eps^(p-1) - e0^(-1)); e0 must be a unit.
    pub fn adjoin_epsilon(&self, e0: &Scalar) -> Result<PrimeCtx> {
        let ram = with_pi(&self.tower);
        Ok(PrimeCtx {
            tower: with_epsilon(&ram, e0)?,
            ..self.clone()
        })
    }
}

/// Teichmueller lift: the unique (p-1)-st root of unity congruent to i mod p.
pub fn teichmuller_in(t: &Tower, i: i64) -> Result<Scalar> {
    let p = t.p;
    let r = i.rem_euclid(p as i64) as u64;
    if r == 0 {
        return Err(Error::Domain(
            "Teichmueller lift undefined for residues divisible by p".into(),
        ));
    }
    let mut x = r % t.pk;
    for _ in 0..(t.k + 2) {
        x = pow_mod(x, p, t.pk);
    }
    debug_assert_eq!(pow_mod(x, p, t.pk), x);
    Ok(Scalar::modular_from_u64(t, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn context_guards() {
        assert!(make_context(2, 17, 6).is_ok());
        assert!(make_context(2, 13, 6).is_err()); // 13 != 1 mod 8
        assert!(make_context(3, 13, 6).is_ok()); // 13 == 1 mod 12
        assert!(make_context(2, 15, 6).is_err()); // composite
        assert!(make_context(2, 5, 6).is_err()); // p < 7
        assert!(make_context(1, 17, 6).is_err());
    }

    #[test]
    fn zeta_has_exact_order_4g() {
        for (g, p) in [(2u32, 17u64), (3, 13), (4, 17), (5, 41), (2, 41)] {
            let ctx = make_context(g, p, 6).unwrap();
            let z = ctx.zeta();
            let one = ctx.int(1);
            assert!(z.pow(4 * g as u64).eq_at_precision(&one));
            assert!(z.pow(2 * g as u64).eq_at_precision(&one.neg()));
            for d in 1..(4 * g as u64) {
                assert!(!z.pow(d).eq_at_precision(&one), "order divides {d}");
            }
        }
    }

    #[test]
    fn teichmuller_identity_and_symmetry() {
        let ctx = make_context(2, 17, 6).unwrap();
        assert!(ctx.teichmuller(1).unwrap().eq_at_precision(&ctx.int(1)));
        assert!(ctx.teichmuller(16).unwrap().eq_at_precision(&ctx.int(-1)));
        assert!(ctx.teichmuller(17).is_err());
        assert!(ctx.teichmuller(0).is_err());
    }

    #[test]
    fn teichmuller_of_two_mod_289() {
        // independent oracle: iterate x -> x^p from 2 until fixed mod p^2
        let (p, pk) = (17u64, 289u64);
        let mut x = 2u64;
        loop {
            let next = pow_mod(x, p, pk);
            if next == x {
                break;
            }
            x = next;
        }
        assert_eq!(x, 155);
        let t = TowerParams::base(17, 2).unwrap();
        let w = teichmuller_in(&t, 2).unwrap();
        assert_eq!(w.residue_u64().unwrap(), 155);
    }

    #[test]
    fn teichmuller_is_multiplicative() {
        let ctx = make_context(2, 17, 5).unwrap();
        for i in 1..17i64 {
            for j in 1..17i64 {
                if (i * j) % 17 == 0 {
                    continue;
                }
                let lhs = ctx.teichmuller(i).unwrap().mul(&ctx.teichmuller(j).unwrap());
                assert!(lhs.eq_at_precision(&ctx.teichmuller(i * j).unwrap()));
            }
        }
    }

    #[test]
    fn valuation_normalizations() {
        let ctx = make_context(2, 17, 6).unwrap();
        assert_eq!(ctx.int(17).valuation(), Val::Finite(rat_int(1)));
        let ram = ctx.ramify();
        let pi = Scalar::pi(&ram.tower).unwrap();
        assert_eq!(pi.valuation(), Val::Finite(rat(1, 16)));
        // pi^(p-1) + p = 0 identically
        assert!(pi.pow(16).add(&ram.int(17)).vanishes_at_precision());
        // eps is a unit when e0 is, and eps^(p-1) e0 = 1
        let eps_ctx = ctx.adjoin_epsilon(&ctx.int(28)).unwrap();
        let eps = Scalar::epsilon(&eps_ctx.tower).unwrap();
        assert_eq!(eps.valuation(), Val::Finite(rat_int(0)));
        assert!(eps
            .pow(16)
            .mul(&eps_ctx.int(28))
            .eq_at_precision(&eps_ctx.int(1)));
    }

    #[test]
    fn epsilon_guards() {
        let ctx = make_context(2, 17, 6).unwrap();
        assert!(ctx.adjoin_epsilon(&ctx.int(17)).is_err()); // valuation 1
        assert!(ctx.adjoin_epsilon(&ctx.int(1)).is_ok()); // eps may be 1
        assert!(ctx.adjoin_epsilon(&ctx.int(28)).is_ok());
    }

    #[test]
    fn ring_axioms_randomized_smoke() {
        let ctx = make_context(2, 17, 4).unwrap();
        let eps_ctx = ctx.adjoin_epsilon(&ctx.int(28)).unwrap();
        let t = &eps_ctx.tower;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut rand_scalar = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut v = vec![0u64; t.dim()];
            for x in v.iter_mut() {
                if rng.gen_ratio(1, 8) {
                    *x = rng.gen_range(0..t.pk);
                }
            }
            Scalar {
                tower: t.clone(),
                repr: Repr::Coords(v),
            }
        };
        for _ in 0..25 {
            let a = rand_scalar(&mut rng);
            let b = rand_scalar(&mut rng);
            let c = rand_scalar(&mut rng);
            assert!(a.mul(&b).eq_at_precision(&b.mul(&a)));
            assert!(a.mul(&b.add(&c)).eq_at_precision(&a.mul(&b).add(&a.mul(&c))));
            assert!(a.mul(&b).mul(&c).eq_at_precision(&a.mul(&b.mul(&c))));
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let ctx = make_context(2, 17, 6).unwrap();
        let eps_ctx = ctx.adjoin_epsilon(&ctx.int(28)).unwrap();
        let t = &eps_ctx.tower;
        let eps = Scalar::epsilon(t).unwrap();
        let mix = eps
            .mul(&eps_ctx.int(3))
            .add(&eps_ctx.int(5))
            .add(&Scalar::pi(t).unwrap().mul(&eps_ctx.int(11)));
        let inv = mix.inv().unwrap();
        assert!(mix.mul(&inv).eq_at_precision(&eps_ctx.int(1)));
        assert!(ctx.int(17).inv().is_err());
        assert!(Scalar::pi(t).unwrap().inv().is_err());
    }

    #[test]
    fn div_pi_pow_roundtrip() {
        let ctx = make_context(2, 17, 6).unwrap().ramify();
        let t = &ctx.tower;
        let pi = Scalar::pi(t).unwrap();
        // p has valuation 1 = 16/16: dividing by pi once costs a digit
        let (q, lost) = ctx.int(17).demote().div_pi_pow(1).unwrap();
        assert_eq!(lost, 1);
        assert!(q.mul(&pi).eq_at_precision(&ctx.int(17).demote()));
        assert_eq!(pi.unit_pi_shift(), Some(1));
        assert_eq!(ctx.int(5).unit_pi_shift(), Some(0));
        assert_eq!(ctx.int(17).unit_pi_shift(), Some(16));
        assert_eq!(pi.mul(&ctx.int(17)).unit_pi_shift(), Some(17));
        // division refuses non-integral quotients
        assert!(ctx.int(5).demote().div_pi_pow(1).is_err());
    }

    #[test]
    fn scalar_serialization_roundtrip() {
        let ctx = make_context(2, 17, 3).unwrap();
        let eps_ctx = ctx.adjoin_epsilon(&ctx.int(28)).unwrap();
        let t = &eps_ctx.tower;
        let vals = [
            Scalar::from_i64(t, -4913),
            Scalar::pi(t).unwrap().mul(&Scalar::from_i64(t, 200).demote()),
            Scalar::epsilon(t).unwrap().pow(20),
            Scalar::zero(t),
        ];
        for s in vals {
            let j = s.to_json();
            let txt = serde_json::to_string(&j).unwrap();
            let back: ScalarJson = serde_json::from_str(&txt).unwrap();
            let s2 = Scalar::from_json(t, &back).unwrap();
            assert!(s.eq_at_precision(&s2));
            if s.is_exact() {
                assert!(s2.is_exact());
                assert_eq!(s, s2);
            }
        }
        // digit string shape: 155 base 17 is "2.9" little-endian
        let s = Scalar::modular_from_u64(&TowerParams::base(17, 2).unwrap(), 155);
        match s.to_json() {
            ScalarJson::Coords(v) => assert_eq!(v, vec![(0, 0, "2.9".to_string())]),
            _ => panic!(),
        }
    }
}
