//! Closed real intervals and their tight inclusion functions.
//!
//! Endpoints are `f64` values computed with the default round-to-nearest
//! mode. Every operation evaluates the same point function at the same
//! endpoints that point mode would use, so for monotone pieces a float
//! point image `f(x)` with `x` inside the input always lands inside the
//! float output. Callers that want a margin against rounding can widen any
//! result with [`Interval::inflate`].

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntervalError {
    #[error("invalid interval: lower endpoint {lo} exceeds upper endpoint {hi}")]
    Inverted { lo: f64, hi: f64 },
    #[error("interval endpoint is NaN")]
    Nan,
    #[error("interval endpoints [{lo}, {hi}] are not extended reals with lo < +inf and hi > -inf")]
    BadInfinity { lo: f64, hi: f64 },
    #[error("{op} is undefined on {interval}")]
    Domain { op: &'static str, interval: Interval },
    #[error("{op} is undefined at {x}")]
    PointDomain { op: &'static str, x: f64 },
    #[error("interval {0} is unbounded")]
    Unbounded(Interval),
    #[error("cannot parse interval from {0:?}")]
    Parse(String),
}

/// A closed interval `[lo, hi]` of the extended reals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };
    pub const UNIT: Interval = Interval { lo: -1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo.is_nan() || hi.is_nan() {
            return Err(IntervalError::Nan);
        }
        if lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(IntervalError::BadInfinity { lo, hi });
        }
        if lo > hi {
            return Err(IntervalError::Inverted { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    /// The degenerate interval `[x, x]`.
    ///
    /// Panics if `x` is NaN or infinite.
    pub fn point(x: f64) -> Self {
        assert!(x.is_finite(), "point interval requires a finite value, got {x}");
        Interval { lo: x, hi: x }
    }

    /// Builds `[lo, hi]` from endpoints already known to be ordered.
    #[inline]
    pub(crate) fn from_ordered(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "from_ordered: {lo} > {hi}");
        Interval { lo, hi }
    }

    #[inline]
    pub fn lo(self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn is_point(self) -> bool {
        self.lo == self.hi
    }

    pub fn is_finite(self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(self) -> bool {
        self.contains(0.0)
    }

    /// `self ⊆ other`.
    pub fn subset(self, other: Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn width(self) -> Result<f64, IntervalError> {
        if !self.is_finite() {
            return Err(IntervalError::Unbounded(self));
        }
        Ok(self.hi - self.lo)
    }

    pub fn midpoint(self) -> Result<f64, IntervalError> {
        if !self.is_finite() {
            return Err(IntervalError::Unbounded(self));
        }
        Ok(0.5 * self.lo + 0.5 * self.hi)
    }

    /// Smallest interval containing both operands.
    pub fn hull(self, other: Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Widens both endpoints outward by `ulps` units in the last place.
    pub fn inflate(self, ulps: u32) -> Interval {
        let (mut lo, mut hi) = (self.lo, self.hi);
        for _ in 0..ulps {
            lo = lo.next_down();
            hi = hi.next_up();
        }
        Interval { lo, hi }
    }

    pub fn add_const(self, c: f64) -> Interval {
        Interval {
            lo: self.lo + c,
            hi: self.hi + c,
        }
    }

    /// `c * [a]`; endpoints swap when `c < 0`.
    pub fn scale(self, c: f64) -> Interval {
        if c >= 0.0 {
            Interval {
                lo: ext_mul(c, self.lo),
                hi: ext_mul(c, self.hi),
            }
        } else {
            Interval {
                lo: ext_mul(c, self.hi),
                hi: ext_mul(c, self.lo),
            }
        }
    }

    pub fn recip(self) -> Interval {
        if self.contains_zero() {
            return Interval::ENTIRE;
        }
        Interval {
            lo: 1.0 / self.hi,
            hi: 1.0 / self.lo,
        }
    }

    /// Integer power `[a]^n`; `n = 0` gives `[1, 1]`.
    pub fn powi(self, n: u32) -> Interval {
        if n == 0 {
            return Interval::point(1.0);
        }
        let e = n as i32;
        let (pl, ph) = (self.lo.powi(e), self.hi.powi(e));
        if n % 2 == 1 {
            Interval { lo: pl, hi: ph }
        } else if self.contains_zero() {
            Interval {
                lo: 0.0,
                hi: pl.max(ph),
            }
        } else {
            Interval {
                lo: pl.min(ph),
                hi: pl.max(ph),
            }
        }
    }

    pub fn monotone(self, f: Monotone) -> Result<Interval, IntervalError> {
        f.apply(self)
    }

    pub fn exp(self) -> Interval {
        Interval {
            lo: self.lo.exp(),
            hi: self.hi.exp(),
        }
    }

    pub fn ln(self) -> Result<Interval, IntervalError> {
        Monotone::Log.apply(self)
    }

    pub fn atan(self) -> Interval {
        Interval {
            lo: self.lo.atan(),
            hi: self.hi.atan(),
        }
    }

    pub fn sqrt(self) -> Result<Interval, IntervalError> {
        Monotone::Sqrt.apply(self)
    }

    /// Tight inclusion of `sin`.
    ///
    /// Critical points `π/2 + 2πk` and `−π/2 + 2πk` inside the interval pin
    /// the corresponding bound to ±1; the rest comes from the endpoint images.
    pub fn sin(self) -> Interval {
        if self.is_point() && self.lo.is_finite() {
            return Interval::point(sin(self.lo));
        }
        if !self.is_finite() || self.hi - self.lo >= TAU {
            return Interval::UNIT;
        }
        periodic_bounds(self, sin(self.lo), sin(self.hi), FRAC_PI_2, -FRAC_PI_2)
    }

    /// Tight inclusion of `cos`, i.e. `sin([a] + π/2)` with the critical
    /// points shifted to `2πk` (maxima) and `π + 2πk` (minima).
    pub fn cos(self) -> Interval {
        if self.is_point() && self.lo.is_finite() {
            return Interval::point(cos(self.lo));
        }
        if !self.is_finite() || self.hi - self.lo >= TAU {
            return Interval::UNIT;
        }
        periodic_bounds(self, cos(self.lo), cos(self.hi), 0.0, PI)
    }

    /// Tight inclusion of `tan`: the endpoint images when no pole
    /// `π/2 + πk` lies in the interval, the entire line otherwise.
    pub fn tan(self) -> Interval {
        if self.is_point() && self.lo.is_finite() {
            return Interval::point(self.lo.tan());
        }
        if !self.is_finite() || self.hi - self.lo >= PI {
            return Interval::ENTIRE;
        }
        if hits_lattice(self.lo, self.hi, FRAC_PI_2, PI) {
            return Interval::ENTIRE;
        }
        Interval {
            lo: self.lo.tan(),
            hi: self.hi.tan(),
        }
    }

    /// `true` when some pole of `tan` lies in the interval.
    pub fn contains_tan_pole(self) -> bool {
        self.tan() == Interval::ENTIRE
    }
}

/// `f64::sin` behind a call boundary. Optimized builds otherwise merge a
/// `sin` and `cos` of the same argument into one `sincos` call, whose
/// result can differ in the last bit; point and interval evaluation must
/// see identical values.
#[inline(never)]
pub fn sin(x: f64) -> f64 {
    x.sin()
}

/// `f64::cos` behind a call boundary, see [`sin`].
#[inline(never)]
pub fn cos(x: f64) -> f64 {
    x.cos()
}

/// Treats `0 * ±inf` as `0`, the extended-real convention for interval products.
#[inline]
fn ext_mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// Is there an integer `k` with `phase + period*k` in `[lo, hi]`?
///
/// The interval is grown by a relative tolerance so that rounding in the
/// argument reduction can only add critical points, never drop them.
fn hits_lattice(lo: f64, hi: f64, phase: f64, period: f64) -> bool {
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    let k = ((lo - tol - phase) / period).ceil();
    phase + k * period <= hi + tol
}

fn periodic_bounds(a: Interval, f_lo: f64, f_hi: f64, max_phase: f64, min_phase: f64) -> Interval {
    let mut lo = f_lo.min(f_hi);
    let mut hi = f_lo.max(f_hi);
    if hits_lattice(a.lo, a.hi, max_phase, TAU) {
        hi = 1.0;
    }
    if hits_lattice(a.lo, a.hi, min_phase, TAU) {
        lo = -1.0;
    }
    Interval {
        lo: lo.max(-1.0),
        hi: hi.min(1.0),
    }
}

/// Monotone increasing elementary functions with endpoint-image inclusions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Monotone {
    Exp,
    Log,
    Arctan,
    Sqrt,
}

impl Monotone {
    pub const ALL: [Monotone; 4] = [Monotone::Exp, Monotone::Log, Monotone::Arctan, Monotone::Sqrt];

    pub fn name(self) -> &'static str {
        match self {
            Monotone::Exp => "exp",
            Monotone::Log => "log",
            Monotone::Arctan => "arctan",
            Monotone::Sqrt => "sqrt",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Monotone::Exp => x.exp(),
            Monotone::Log => x.ln(),
            Monotone::Arctan => x.atan(),
            Monotone::Sqrt => x.sqrt(),
        }
    }

    /// Whether `x` lies in the function's domain.
    pub fn in_domain(self, x: f64) -> bool {
        match self {
            Monotone::Log => x > 0.0,
            Monotone::Sqrt => x >= 0.0,
            Monotone::Exp | Monotone::Arctan => true,
        }
    }

    pub fn apply(self, a: Interval) -> Result<Interval, IntervalError> {
        if !self.in_domain(a.lo) {
            return Err(IntervalError::Domain {
                op: self.name(),
                interval: a,
            });
        }
        Ok(Interval {
            lo: self.eval(a.lo),
            hi: self.eval(a.hi),
        })
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval {
            lo: self.lo + rhs.lo,
            hi: self.hi + rhs.hi,
        }
    }
}

impl Add<f64> for Interval {
    type Output = Interval;
    fn add(self, rhs: f64) -> Interval {
        self.add_const(rhs)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval {
            lo: self.lo - rhs.hi,
            hi: self.hi - rhs.lo,
        }
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let p = [
            ext_mul(self.lo, rhs.lo),
            ext_mul(self.lo, rhs.hi),
            ext_mul(self.hi, rhs.lo),
            ext_mul(self.hi, rhs.hi),
        ];
        Interval {
            lo: p.iter().copied().fold(f64::INFINITY, f64::min),
            hi: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl Mul<f64> for Interval {
    type Output = Interval;
    fn mul(self, rhs: f64) -> Interval {
        self.scale(rhs)
    }
}

impl Mul<Interval> for f64 {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        rhs.scale(self)
    }
}

impl Div for Interval {
    type Output = Interval;
    /// Endpoint quotients when `0 ∉ rhs`, the entire line otherwise.
    fn div(self, rhs: Interval) -> Interval {
        if rhs.contains_zero() {
            return Interval::ENTIRE;
        }
        let q = [
            self.lo / rhs.lo,
            self.lo / rhs.hi,
            self.hi / rhs.lo,
            self.hi / rhs.hi,
        ];
        if q.iter().any(|v| v.is_nan()) {
            // inf / inf
            return Interval::ENTIRE;
        }
        Interval {
            lo: q.iter().copied().fold(f64::INFINITY, f64::min),
            hi: q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn fmt_endpoint(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn parse_endpoint(s: &str) -> Option<f64> {
    let s = s.trim();
    let s = s.replace('\u{2212}', "-");
    match s.as_str() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

impl fmt::Display for Interval {
    /// `[lo, hi]` with 17 significant digits per finite endpoint.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", fmt_endpoint(self.lo), fmt_endpoint(self.hi))
    }
}

impl FromStr for Interval {
    type Err = IntervalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IntervalError::Parse(s.to_string());
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(bad)?;
        let (l, h) = inner.split_once(',').ok_or_else(bad)?;
        let lo = parse_endpoint(l).ok_or_else(bad)?;
        let hi = parse_endpoint(h).ok_or_else(bad)?;
        Interval::new(lo, hi)
    }
}

/// Serialized as a two-element array; infinite endpoints become the
/// strings `"-inf"` / `"inf"`.
impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(2)?;
        t.serialize_element(&Endpoint(self.lo))?;
        t.serialize_element(&Endpoint(self.hi))?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (lo, hi) = <(Endpoint, Endpoint)>::deserialize(deserializer)?;
        Interval::new(lo.0, hi.0).map_err(de::Error::custom)
    }
}

struct Endpoint(f64);

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            serializer.serialize_f64(self.0)
        } else {
            serializer.serialize_str(&fmt_endpoint(self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(Endpoint(v)),
            Raw::Str(s) => parse_endpoint(&s)
                .filter(|v| v.is_infinite())
                .map(Endpoint)
                .ok_or_else(|| de::Error::custom(format!("bad endpoint {s:?}"))),
        }
    }
}
