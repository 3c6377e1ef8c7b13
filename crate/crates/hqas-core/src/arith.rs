//! Exact scalar arithmetic shared by every other module.
//!
//! Four kinds of scalars appear throughout the recursion:
//!
//! * [`Rat`] — arbitrary-precision rationals, always in lowest terms.  Every
//!   structure coefficient and every table value is a `Rat`.
//! * [`HalfInt`] — half-integers stored doubled, used for the genus and the
//!   hbar exponent wherever half-integer values are allowed.
//! * [`Cyc`] — elements of the cyclotomic field Q(theta_r), reduced modulo the
//!   r-th cyclotomic polynomial so that rationality is a coordinate check.
//!   These only appear inside brute-force oracles.
//! * [`LaurentSeries`] — finitely truncated Laurent series over a field, with
//!   an explicit truncation order: coefficients beyond it are *unknown*, not
//!   zero, and querying them is an error rather than a silent zero.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Zero};
use std::fmt;
use thiserror::Error;

/// Arbitrary-precision rational number, always stored in lowest terms with a
/// positive denominator (enforced by `num::BigRational`).
pub type Rat = BigRational;

/// Errors produced by the scalar layer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArithError {
    /// A cyclotomic element was projected to the rationals but has a nonzero
    /// non-constant coordinate.  This always signals an upstream bug: every
    /// root-of-unity sum we project is provably rational.
    #[error("cyclotomic element is not rational")]
    NotRational,
    /// A series with no nonzero coefficient below its truncation order was
    /// inverted.
    #[error("cannot invert a series that is zero up to its truncation order")]
    ZeroSeries,
    /// A coefficient (typically the residue) was requested beyond the range
    /// of determined coefficients.
    #[error("requested coefficient lies beyond the series truncation order")]
    TruncationTooCoarse,
    /// Bad input to a rational/half-integer parser.
    #[error("cannot parse exact number from {0:?}")]
    Parse(String),
}

// ---------------------------------------------------------------------------
// Rat helpers
// ---------------------------------------------------------------------------

/// Rational from an integer.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Rational from a numerator/denominator pair.  `d` must be nonzero.
pub fn rat(n: i64, d: i64) -> Rat {
    assert!(d != 0, "zero denominator");
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Parses "p/q" or "p" with optional sign, as emitted by [`rat_to_string`].
pub fn rat_from_str(s: &str) -> Result<Rat, ArithError> {
    let bad = || ArithError::Parse(s.to_string());
    match s.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().map_err(|_| bad())?;
            let q: BigInt = q.trim().parse().map_err(|_| bad())?;
            if q.is_zero() {
                return Err(bad());
            }
            Ok(Rat::new(p, q))
        }
        None => {
            let p: BigInt = s.trim().parse().map_err(|_| bad())?;
            Ok(Rat::from_integer(p))
        }
    }
}

/// Serializes a rational as "p/q", or just "p" when the denominator is 1.
pub fn rat_to_string(x: &Rat) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// n! as a rational.
pub fn factorial(n: usize) -> Rat {
    let mut acc = BigInt::one();
    for k in 2..=n {
        acc *= BigInt::from(k);
    }
    Rat::from_integer(acc)
}

/// Binomial coefficient n choose k as a rational.
pub fn binomial(n: usize, k: usize) -> Rat {
    if k > n {
        return Rat::zero();
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

// ---------------------------------------------------------------------------
// HalfInt
// ---------------------------------------------------------------------------

/// A half-integer stored as twice its value, so ordering, hashing and
/// arithmetic stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInt {
    /// Twice the represented value.
    pub doubled: i64,
}

impl HalfInt {
    /// The half-integer n (a whole value).
    pub fn from_int(n: i64) -> Self {
        HalfInt { doubled: 2 * n }
    }

    /// The half-integer d/2.
    pub fn from_doubled(d: i64) -> Self {
        HalfInt { doubled: d }
    }

    /// True when the value is a whole integer.
    pub fn is_integer(&self) -> bool {
        self.doubled % 2 == 0
    }

    /// The value as an integer; panics when it is a strict half-integer.
    pub fn to_int(&self) -> i64 {
        assert!(self.is_integer(), "half-integer {self} is not an integer");
        self.doubled / 2
    }

    /// The value as a rational.
    pub fn to_rat(&self) -> Rat {
        rat(self.doubled, 2)
    }

    pub fn zero() -> Self {
        HalfInt { doubled: 0 }
    }
}

impl std::ops::Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt { doubled: self.doubled + rhs.doubled }
    }
}

impl std::ops::Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt { doubled: self.doubled - rhs.doubled }
    }
}

impl fmt::Display for HalfInt {
    /// "p" when integral, "p/2" otherwise — the CLI serialization contract.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.doubled / 2)
        } else {
            write!(f, "{}/2", self.doubled)
        }
    }
}

/// Parses "p" or "p/2" as emitted by `Display`.
pub fn half_from_str(s: &str) -> Result<HalfInt, ArithError> {
    let bad = || ArithError::Parse(s.to_string());
    match s.split_once('/') {
        Some((p, q)) => {
            if q.trim() != "2" {
                return Err(bad());
            }
            let p: i64 = p.trim().parse().map_err(|_| bad())?;
            Ok(HalfInt::from_doubled(p))
        }
        None => {
            let p: i64 = s.trim().parse().map_err(|_| bad())?;
            Ok(HalfInt::from_int(p))
        }
    }
}

// ---------------------------------------------------------------------------
// Dense polynomials over Q (private helpers for the cyclotomic field)
// ---------------------------------------------------------------------------

/// Drops trailing zero coefficients.
fn poly_trim(p: &mut Vec<Rat>) {
    while p.last().map_or(false, |c| c.is_zero()) {
        p.pop();
    }
}

fn poly_mul(a: &[Rat], b: &[Rat]) -> Vec<Rat> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Rat::zero(); a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    poly_trim(&mut out);
    out
}

fn poly_sub(a: &[Rat], b: &[Rat]) -> Vec<Rat> {
    let n = a.len().max(b.len());
    let mut out = vec![Rat::zero(); n];
    for (i, c) in a.iter().enumerate() {
        out[i] += c;
    }
    for (i, c) in b.iter().enumerate() {
        out[i] -= c;
    }
    poly_trim(&mut out);
    out
}

/// Euclidean division: returns (quotient, remainder) with deg rem < deg b.
fn poly_divrem(a: &[Rat], b: &[Rat]) -> (Vec<Rat>, Vec<Rat>) {
    assert!(!b.is_empty(), "division by zero polynomial");
    let mut rem: Vec<Rat> = a.to_vec();
    poly_trim(&mut rem);
    let db = b.len() - 1;
    let lead = b[db].clone();
    if rem.len() <= db {
        return (Vec::new(), rem);
    }
    let mut quot = vec![Rat::zero(); rem.len() - db];
    while rem.len() > db {
        let dr = rem.len() - 1;
        let c = rem[dr].clone() / lead.clone();
        quot[dr - db] = c.clone();
        for (i, bi) in b.iter().enumerate() {
            let idx = dr - db + i;
            let delta = &c * bi;
            rem[idx] -= delta;
        }
        poly_trim(&mut rem);
        if rem.is_empty() {
            break;
        }
    }
    poly_trim(&mut quot);
    (quot, rem)
}

/// The r-th cyclotomic polynomial, computed by dividing x^r - 1 by the proper
/// cyclotomic divisors.  Degrees here never exceed 16, so this is cheap.
fn cyclotomic_poly(r: usize) -> Vec<Rat> {
    assert!(r >= 1);
    // x^r - 1
    let mut num = vec![Rat::zero(); r + 1];
    num[0] = -Rat::one();
    num[r] = Rat::one();
    for d in 1..r {
        if r % d == 0 {
            let phi_d = cyclotomic_poly(d);
            let (q, rem) = poly_divrem(&num, &phi_d);
            debug_assert!(rem.is_empty(), "cyclotomic division must be exact");
            num = q;
        }
    }
    num
}

// ---------------------------------------------------------------------------
// Cyc
// ---------------------------------------------------------------------------

/// An element of Q(theta_r) = Q[x] / (Phi_r(x)), with x mapped to the
/// primitive root theta_r = exp(2 pi i / r).
///
/// Elements whose non-constant coordinates all vanish are "rational" and
/// combine freely with elements of any other order; mixing two genuinely
/// irrational elements of different orders is a bug and panics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cyc {
    /// The order r of the root of unity (>= 1).
    pub order: usize,
    /// Coordinates in the power basis 1, x, ..., x^{phi(r)-1}, reduced modulo
    /// Phi_r.  Length is exactly deg Phi_r.
    pub coeffs: Vec<Rat>,
}

impl Cyc {
    /// The zero element (carried at order 1, where Q(theta_1) = Q).
    pub fn zero() -> Self {
        Cyc { order: 1, coeffs: vec![Rat::zero()] }
    }

    /// Embeds a rational constant.
    pub fn from_rat(x: Rat) -> Self {
        Cyc { order: 1, coeffs: vec![x] }
    }

    /// theta_r^e, with the exponent taken modulo r.
    pub fn root_power(r: usize, e: i64) -> Self {
        assert!(r >= 1);
        let e = e.rem_euclid(r as i64) as usize;
        let mut poly = vec![Rat::zero(); e + 1];
        poly[e] = Rat::one();
        Cyc::from_poly(r, poly)
    }

    /// Builds an element from an arbitrary polynomial in theta_r, reducing
    /// modulo Phi_r.
    fn from_poly(r: usize, poly: Vec<Rat>) -> Self {
        let phi = cyclotomic_poly(r);
        let (_, rem) = poly_divrem(&poly, &phi);
        let deg = phi.len() - 1;
        let mut coeffs = rem;
        coeffs.resize(deg, Rat::zero());
        Cyc { order: r, coeffs }
    }

    /// True when all non-constant coordinates vanish.
    pub fn is_rational(&self) -> bool {
        self.coeffs.iter().skip(1).all(|c| c.is_zero())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// Projects to the prime subfield.
    ///
    /// Errors with [`ArithError::NotRational`] when a non-constant coordinate
    /// is nonzero — by construction that means an upstream sum that should
    /// have been rational was not, i.e. a bug.
    pub fn to_rat(&self) -> Result<Rat, ArithError> {
        if self.is_rational() {
            Ok(self.coeffs[0].clone())
        } else {
            Err(ArithError::NotRational)
        }
    }

    /// Lifts `self` and `other` to a common order, panicking when both are
    /// irrational of distinct orders (never happens in well-formed use).
    fn unify(&self, other: &Cyc) -> (Cyc, Cyc) {
        if self.order == other.order {
            return (self.clone(), other.clone());
        }
        if self.is_rational() {
            let lifted = Cyc::from_poly(other.order, vec![self.coeffs[0].clone()]);
            return (lifted, other.clone());
        }
        if other.is_rational() {
            let lifted = Cyc::from_poly(self.order, vec![other.coeffs[0].clone()]);
            return (self.clone(), lifted);
        }
        panic!("cyclotomic order mismatch: {} vs {}", self.order, other.order);
    }

    pub fn add(&self, other: &Cyc) -> Cyc {
        let (a, b) = self.unify(other);
        let coeffs = a
            .coeffs
            .iter()
            .zip(b.coeffs.iter())
            .map(|(x, y)| x + y)
            .collect();
        Cyc { order: a.order, coeffs }
    }

    pub fn neg(&self) -> Cyc {
        Cyc { order: self.order, coeffs: self.coeffs.iter().map(|c| -c).collect() }
    }

    pub fn sub(&self, other: &Cyc) -> Cyc {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Cyc) -> Cyc {
        let (a, b) = self.unify(other);
        Cyc::from_poly(a.order, poly_mul(&a.coeffs, &b.coeffs))
    }

    pub fn scale(&self, k: &Rat) -> Cyc {
        Cyc { order: self.order, coeffs: self.coeffs.iter().map(|c| c * k).collect() }
    }

    /// Multiplicative inverse via the extended Euclidean algorithm in Q[x]:
    /// finds u with u * self = 1 modulo Phi_r.
    pub fn inv(&self) -> Result<Cyc, ArithError> {
        if self.is_zero() {
            return Err(ArithError::ZeroSeries);
        }
        if self.is_rational() {
            let c = &self.coeffs[0];
            return Ok(Cyc::from_poly(self.order, vec![Rat::one() / c]));
        }
        let phi = cyclotomic_poly(self.order);
        // Extended gcd of (self, Phi_r); Phi_r is irreducible so the gcd is a
        // nonzero constant.
        let mut r0: Vec<Rat> = self.coeffs.clone();
        poly_trim(&mut r0);
        let mut r1 = phi;
        let mut u0 = vec![Rat::one()];
        let mut u1: Vec<Rat> = Vec::new();
        while !r1.is_empty() {
            let (q, rem) = poly_divrem(&r0, &r1);
            let next_u = poly_sub(&u0, &poly_mul(&q, &u1));
            r0 = r1;
            r1 = rem;
            u0 = u1;
            u1 = next_u;
        }
        // r0 = gcd (a constant), u0 * self = r0 mod Phi_r.
        assert!(r0.len() == 1, "cyclotomic polynomial must be irreducible over Q");
        let inv_gcd = Rat::one() / r0[0].clone();
        let scaled: Vec<Rat> = u0.iter().map(|c| c * &inv_gcd).collect();
        Ok(Cyc::from_poly(self.order, scaled))
    }
}

/// Evaluates the weighted power sum  sum_m weights[m] * theta_r^{exponents[m]}
/// as a reduced field element.  Exponents are taken modulo r.
pub fn cyc_power_sum(r: usize, exponents: &[i64], weights: &[Rat]) -> Cyc {
    assert!(r >= 1, "order must be positive");
    assert_eq!(exponents.len(), weights.len(), "mismatched list lengths");
    let mut acc = Cyc::from_poly(r, Vec::new());
    for (e, w) in exponents.iter().zip(weights.iter()) {
        acc = acc.add(&Cyc::root_power(r, *e).scale(w));
    }
    acc
}

/// Projects a cyclotomic element to Q; see [`Cyc::to_rat`].
pub fn cyc_to_rat(x: &Cyc) -> Result<Rat, ArithError> {
    x.to_rat()
}

// ---------------------------------------------------------------------------
// Scalar trait for Laurent series
// ---------------------------------------------------------------------------

/// The field operations a Laurent-series scalar must provide.  Implemented by
/// [`Rat`] and [`Cyc`]; kept minimal on purpose.
pub trait FieldScalar: Clone + PartialEq + fmt::Debug {
    fn nil() -> Self;
    fn unit() -> Self;
    fn vanishes(&self) -> bool;
    fn plus(&self, other: &Self) -> Self;
    fn negated(&self) -> Self;
    fn times(&self, other: &Self) -> Self;
    fn inverse(&self) -> Result<Self, ArithError>;
}

impl FieldScalar for Rat {
    fn nil() -> Self {
        <Rat as Zero>::zero()
    }
    fn unit() -> Self {
        <Rat as One>::one()
    }
    fn vanishes(&self) -> bool {
        Zero::is_zero(self)
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn negated(&self) -> Self {
        -self
    }
    fn times(&self, other: &Self) -> Self {
        self * other
    }
    fn inverse(&self) -> Result<Self, ArithError> {
        if Zero::is_zero(self) {
            Err(ArithError::ZeroSeries)
        } else {
            Ok(<Rat as One>::one() / self)
        }
    }
}

impl FieldScalar for Cyc {
    fn nil() -> Self {
        Cyc::zero()
    }
    fn unit() -> Self {
        Cyc::from_rat(<Rat as One>::one())
    }
    fn vanishes(&self) -> bool {
        Cyc::is_zero(self)
    }
    fn plus(&self, other: &Self) -> Self {
        Cyc::add(self, other)
    }
    fn negated(&self) -> Self {
        Cyc::neg(self)
    }
    fn times(&self, other: &Self) -> Self {
        Cyc::mul(self, other)
    }
    fn inverse(&self) -> Result<Self, ArithError> {
        Cyc::inv(self)
    }
}

// ---------------------------------------------------------------------------
// LaurentSeries
// ---------------------------------------------------------------------------

/// A Laurent series with finitely many determined coefficients.
///
/// Coefficients are stored densely for every exponent in `low ..= trunc`.
/// Exponents below `low` are zero by construction; exponents above `trunc`
/// are *unknown* — asking for one raises [`ArithError::TruncationTooCoarse`]
/// instead of silently returning zero.  A series whose stored window is empty
/// (`low > trunc`) carries no information at all and every coefficient query
/// on it errors; this is what a monomial beyond its own truncation collapses
/// to.
#[derive(Debug, Clone, PartialEq)]
pub struct LaurentSeries<S: FieldScalar> {
    /// Exponent of the first stored coefficient.
    low: i64,
    /// Last determined exponent (inclusive).
    trunc: i64,
    /// Coefficients for exponents `low ..= trunc` (len = trunc - low + 1).
    coeffs: Vec<S>,
}

impl<S: FieldScalar> LaurentSeries<S> {
    /// Builds a series from a dense coefficient window.
    pub fn new(low: i64, coeffs: Vec<S>, trunc: i64) -> Self {
        assert_eq!(
            coeffs.len() as i64,
            (trunc - low + 1).max(0),
            "coefficient window must cover low..=trunc exactly"
        );
        LaurentSeries { low, trunc, coeffs }
    }

    /// The zero series, determined up to `trunc`.
    pub fn zero(trunc: i64) -> Self {
        let low = trunc.min(-1);
        let len = (trunc - low + 1) as usize;
        LaurentSeries { low, trunc, coeffs: vec![S::nil(); len] }
    }

    /// The monomial c * t^exp, determined up to `trunc`.
    ///
    /// When `exp > trunc` the monomial is invisible below the truncation and
    /// the result is the degenerate no-information series.
    pub fn monomial(exp: i64, c: S, trunc: i64) -> Self {
        if exp > trunc {
            return LaurentSeries { low: exp, trunc, coeffs: Vec::new() };
        }
        let low = exp.min(-1);
        let mut coeffs = vec![S::nil(); (trunc - low + 1) as usize];
        coeffs[(exp - low) as usize] = c;
        LaurentSeries { low, trunc, coeffs }
    }

    /// Last determined exponent.
    pub fn truncation(&self) -> i64 {
        self.trunc
    }

    /// The exponent of the first nonzero determined coefficient, or None when
    /// the series is zero up to truncation.
    pub fn valuation(&self) -> Option<i64> {
        self.coeffs
            .iter()
            .position(|c| !c.vanishes())
            .map(|idx| self.low + idx as i64)
    }

    /// The coefficient of t^e.  Errors above the truncation order or on a
    /// degenerate (no-information) series.
    pub fn coeff(&self, e: i64) -> Result<S, ArithError> {
        if self.coeffs.is_empty() || e > self.trunc {
            return Err(ArithError::TruncationTooCoarse);
        }
        if e < self.low {
            return Ok(S::nil());
        }
        Ok(self.coeffs[(e - self.low) as usize].clone())
    }

    /// The coefficient of t^{-1}.
    pub fn residue(&self) -> Result<S, ArithError> {
        self.coeff(-1)
    }

    pub fn add(&self, other: &Self) -> Self {
        let trunc = self.trunc.min(other.trunc);
        let low = self.low.min(other.low).min(trunc);
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            // No information on one side: the sum carries none either.
            return LaurentSeries { low: trunc + 1, trunc, coeffs: Vec::new() };
        }
        let mut coeffs = Vec::with_capacity((trunc - low + 1) as usize);
        for e in low..=trunc {
            let a = if e >= self.low && e <= self.trunc {
                self.coeffs[(e - self.low) as usize].clone()
            } else {
                S::nil()
            };
            let b = if e >= other.low && e <= other.trunc {
                other.coeffs[(e - other.low) as usize].clone()
            } else {
                S::nil()
            };
            coeffs.push(a.plus(&b));
        }
        LaurentSeries { low, trunc, coeffs }
    }

    pub fn neg(&self) -> Self {
        LaurentSeries {
            low: self.low,
            trunc: self.trunc,
            coeffs: self.coeffs.iter().map(|c| c.negated()).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, k: &S) -> Self {
        LaurentSeries {
            low: self.low,
            trunc: self.trunc,
            coeffs: self.coeffs.iter().map(|c| c.times(k)).collect(),
        }
    }

    /// Multiplies by t^k (shifts all exponents).
    pub fn shift(&self, k: i64) -> Self {
        LaurentSeries {
            low: self.low + k,
            trunc: self.trunc + k,
            coeffs: self.coeffs.clone(),
        }
    }

    /// Product.  The result is determined up to the smaller of the two
    /// achievable orders: unknown tails of one factor contaminate the product
    /// from (trunc + other valuation floor) on.
    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            let trunc = self.trunc.min(other.trunc);
            return LaurentSeries { low: trunc + 1, trunc, coeffs: Vec::new() };
        }
        let trunc = (self.trunc + other.low).min(other.trunc + self.low);
        let low = (self.low + other.low).min(trunc);
        let mut coeffs = vec![S::nil(); (trunc - low + 1) as usize];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.vanishes() {
                continue;
            }
            let ea = self.low + i as i64;
            for (j, b) in other.coeffs.iter().enumerate() {
                let e = ea + other.low + j as i64;
                if e > trunc {
                    break;
                }
                let idx = (e - low) as usize;
                coeffs[idx] = coeffs[idx].plus(&a.times(b));
            }
        }
        LaurentSeries { low, trunc, coeffs }
    }

    /// Multiplicative inverse, determined up to exponent `order`.
    ///
    /// Writes f = a t^v (1 + h) and expands the geometric series of h to the
    /// needed depth.  Errors with [`ArithError::ZeroSeries`] when f has no
    /// nonzero determined coefficient, and with
    /// [`ArithError::TruncationTooCoarse`] when f is not determined deep
    /// enough to pin down the requested order.
    pub fn invert(&self, order: i64) -> Result<Self, ArithError> {
        let v = self.valuation().ok_or(ArithError::ZeroSeries)?;
        // Need coefficients of (1 + h) up to t^k with k = order + v.
        let depth = order + v;
        if depth < 0 {
            // Even the leading term of the inverse is above `order`; the
            // inverse is zero up to the requested truncation.
            return Ok(LaurentSeries::zero(order));
        }
        if v + depth > self.trunc {
            return Err(ArithError::TruncationTooCoarse);
        }
        let a = self.coeff(v)?;
        let a_inv = a.inverse()?;
        // h_k = f_{v+k} / a for 1 <= k <= depth.
        let mut h = Vec::with_capacity(depth as usize + 1);
        h.push(S::nil()); // unused slot for k = 0
        for k in 1..=depth {
            h.push(self.coeff(v + k)?.times(&a_inv));
        }
        // c_0 = 1; c_k = -sum_{m=1..k} h_m c_{k-m}.
        let mut c: Vec<S> = Vec::with_capacity(depth as usize + 1);
        c.push(S::unit());
        for k in 1..=depth as usize {
            let mut acc = S::nil();
            for m in 1..=k {
                acc = acc.plus(&h[m].times(&c[k - m]));
            }
            c.push(acc.negated());
        }
        // inverse = a^{-1} t^{-v} * sum c_k t^k, determined up to `order`.
        let low = (-v).min(-1).min(order);
        let mut coeffs = vec![S::nil(); (order - low + 1) as usize];
        for (k, ck) in c.into_iter().enumerate() {
            let e = -v + k as i64;
            if e > order {
                break;
            }
            coeffs[(e - low) as usize] = ck.times(&a_inv);
        }
        Ok(LaurentSeries { low, trunc: order, coeffs })
    }
}

/// Inverts a series up to the requested truncation order; free-function form
/// of [`LaurentSeries::invert`].
pub fn laurent_invert<S: FieldScalar>(
    f: &LaurentSeries<S>,
    order: i64,
) -> Result<LaurentSeries<S>, ArithError> {
    f.invert(order)
}

/// Extracts the coefficient of t^{-1}; free-function form of
/// [`LaurentSeries::residue`].
pub fn laurent_residue<S: FieldScalar>(f: &LaurentSeries<S>) -> Result<S, ArithError> {
    f.residue()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rat_string_round_trip() {
        for s in ["3/4", "-7/2", "5", "0", "-12"] {
            let x = rat_from_str(s).unwrap();
            assert_eq!(rat_to_string(&x), s);
        }
        assert_eq!(rat_to_string(&rat_from_str("6/4").unwrap()), "3/2");
        assert!(rat_from_str("1/0").is_err());
        assert!(rat_from_str("abc").is_err());
    }

    #[test]
    fn half_int_display_and_parse() {
        assert_eq!(HalfInt::from_int(3).to_string(), "3");
        assert_eq!(HalfInt::from_doubled(3).to_string(), "3/2");
        assert_eq!(half_from_str("3/2").unwrap(), HalfInt::from_doubled(3));
        assert_eq!(half_from_str("-2").unwrap(), HalfInt::from_int(-2));
    }

    #[test]
    fn cyclotomic_polys_match_known_values() {
        // Phi_1 = x - 1, Phi_2 = x + 1, Phi_4 = x^2 + 1, Phi_6 = x^2 - x + 1.
        assert_eq!(cyclotomic_poly(1), vec![rat_int(-1), rat_int(1)]);
        assert_eq!(cyclotomic_poly(2), vec![rat_int(1), rat_int(1)]);
        assert_eq!(cyclotomic_poly(4), vec![rat_int(1), rat_int(0), rat_int(1)]);
        assert_eq!(cyclotomic_poly(6), vec![rat_int(1), rat_int(-1), rat_int(1)]);
    }

    #[test]
    fn power_sum_examples() {
        // Sum of all nontrivial 5th roots is -1.
        let x = cyc_power_sum(5, &[1, 2, 3, 4], &vec![rat_int(1); 4]);
        assert_eq!(cyc_to_rat(&x).unwrap(), rat_int(-1));
        // theta_3^3 = 1.
        let x = cyc_power_sum(3, &[3], &[rat_int(1)]);
        assert_eq!(cyc_to_rat(&x).unwrap(), rat_int(1));
        // theta_4^2 = -1.
        let x = cyc_power_sum(4, &[2], &[rat_int(1)]);
        assert_eq!(cyc_to_rat(&x).unwrap(), rat_int(-1));
        // theta_3 itself is not rational.
        let x = cyc_power_sum(3, &[1], &[rat_int(1)]);
        assert_eq!(cyc_to_rat(&x), Err(ArithError::NotRational));
        // theta_2 = -1 is rational.
        let x = cyc_power_sum(2, &[1], &[rat_int(1)]);
        assert_eq!(cyc_to_rat(&x).unwrap(), rat_int(-1));
    }

    #[test]
    fn root_powers_cycle() {
        for r in 1..=12usize {
            for e in 0..(2 * r as i64) {
                let a = Cyc::root_power(r, e);
                let b = Cyc::root_power(r, e + r as i64);
                assert_eq!(a, b, "theta_{r}^{e} should be r-periodic");
            }
            // theta^r = 1 exactly.
            assert_eq!(
                Cyc::root_power(r, r as i64).to_rat().unwrap(),
                rat_int(1)
            );
        }
    }

    #[test]
    fn cyc_inverse_is_exact() {
        for r in 2..=10usize {
            for e in 1..r as i64 {
                let x = Cyc::root_power(r, e);
                let y = Cyc::root_power(r, 2).sub(&x);
                if y.is_zero() {
                    continue;
                }
                let prod = y.inv().unwrap().mul(&y);
                assert_eq!(prod.to_rat().unwrap(), rat_int(1));
            }
        }
    }

    #[test]
    fn laurent_invert_examples() {
        // f = t - t^2: inverse to order 2 is t^{-1} + 1 + t + t^2.
        let f = LaurentSeries::new(1, vec![rat_int(1), rat_int(-1), rat_int(0), rat_int(0)], 4);
        let g = f.invert(2).unwrap();
        for e in -1..=2 {
            assert_eq!(g.coeff(e).unwrap(), rat_int(1), "coefficient of t^{e}");
        }
        // f = 2: inverse is 1/2.
        let f = LaurentSeries::monomial(0, rat_int(2), 0);
        let g = f.invert(0).unwrap();
        assert_eq!(g.coeff(0).unwrap(), rat(1, 2));
        // f = t^{-1}: inverse to order 3 is t.
        let f = LaurentSeries::monomial(-1, rat_int(1), 3);
        let g = f.invert(3).unwrap();
        assert_eq!(g.coeff(1).unwrap(), rat_int(1));
        assert_eq!(g.coeff(2).unwrap(), rat_int(0));
        // Zero series cannot be inverted.
        let f: LaurentSeries<Rat> = LaurentSeries::zero(4);
        assert_eq!(f.invert(2), Err(ArithError::ZeroSeries));
    }

    #[test]
    fn laurent_residue_examples() {
        // 3 t^{-1} + 5 -> 3.
        let f = LaurentSeries::new(-1, vec![rat_int(3), rat_int(5)], 0);
        assert_eq!(f.residue().unwrap(), rat_int(3));
        // t^{-2} -> 0.
        let f = LaurentSeries::monomial(-2, rat_int(1), 0);
        assert_eq!(f.residue().unwrap(), rat_int(0));
        // A monomial entirely beyond its truncation carries no information.
        let f = LaurentSeries::monomial(2, rat_int(1), 0);
        assert_eq!(f.residue(), Err(ArithError::TruncationTooCoarse));
    }

    #[test]
    fn laurent_mul_respects_truncation() {
        let f = LaurentSeries::new(0, vec![rat_int(1), rat_int(1)], 1); // 1 + t + O(t^2)
        let g = LaurentSeries::new(-1, vec![rat_int(1), rat_int(0), rat_int(2)], 1); // t^{-1} + 2t + O(t^2)
        let p = f.mul(&g);
        // Determined only up to t^0: the unknown t^2 of f times t^{-1} of g
        // pollutes exponent 1.
        assert_eq!(p.truncation(), 0);
        assert_eq!(p.coeff(-1).unwrap(), rat_int(1));
        assert_eq!(p.coeff(0).unwrap(), rat_int(1));
        assert_eq!(p.coeff(1), Err(ArithError::TruncationTooCoarse));
    }
}
