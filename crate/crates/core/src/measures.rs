//! Finite probability mass functions and collision statistics.

use std::fmt;
use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::modular::require_prime;

/// Domain elements are ordered and deduplicated by a canonical byte encoding.
pub trait Element: Clone + fmt::Display {
    fn canonical_bytes(&self) -> Vec<u8>;
}

impl Element for u32 {
    fn canonical_bytes(&self) -> Vec<u8> {
        self.to_be_bytes().to_vec()
    }
}

/// Integer vectors; displayed as `(a b c)` so they survive a CSV cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point(pub Vec<u32>);

impl Element for Point {
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.0.len());
        out.extend_from_slice(&(self.0.len() as u32).to_be_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// A probability that is either exact or a float.
#[derive(Clone, Debug, PartialEq)]
pub enum Prob {
    Exact(BigRational),
    Float(f64),
}

impl Prob {
    pub fn to_f64(&self) -> f64 {
        match self {
            Prob::Exact(r) => rational_to_f64(r),
            Prob::Float(v) => *v,
        }
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            Prob::Exact(r) => Some(r),
            Prob::Float(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
enum Weights {
    Exact(Vec<BigRational>),
    Float(Vec<f64>),
}

impl Prob {
    pub fn zero_exact() -> Self {
        Prob::Exact(BigRational::zero())
    }

    pub fn add(&self, other: &Prob) -> Prob {
        match (self, other) {
            (Prob::Exact(a), Prob::Exact(b)) => Prob::Exact(a + b),
            _ => Prob::Float(self.to_f64() + other.to_f64()),
        }
    }

    pub fn mul(&self, other: &Prob) -> Prob {
        match (self, other) {
            (Prob::Exact(a), Prob::Exact(b)) => Prob::Exact(a * b),
            _ => Prob::Float(self.to_f64() * other.to_f64()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Prob::Exact(r) => r.is_zero(),
            Prob::Float(v) => *v == 0.0,
        }
    }

    /// Square root, exact when the value is a perfect rational square.
    pub fn sqrt(&self) -> (f64, Option<BigRational>) {
        match self {
            Prob::Exact(r) => match rational_sqrt_exact(r) {
                Some(s) => (rational_to_f64(&s), Some(s)),
                None => (rational_to_f64(r).sqrt(), None),
            },
            Prob::Float(v) => (v.sqrt(), None),
        }
    }
}

/// √r when r is the square of a rational.
pub fn rational_sqrt_exact(r: &BigRational) -> Option<BigRational> {
    if r.is_negative() {
        return None;
    }
    let (n, d) = (r.numer(), r.denom());
    let (sn, sd) = (n.sqrt(), d.sqrt());
    (&sn * &sn == *n && &sd * &sd == *d).then(|| BigRational::new(sn, sd))
}

/// Probability mass function over a finite, canonically ordered domain.
#[derive(Clone, Debug)]
pub struct FinitePmf<E> {
    domain: Vec<E>,
    weights: Weights,
}

const FLOAT_SUM_TOL: f64 = 1e-12;

impl<E: Element> FinitePmf<E> {
    pub fn uniform(domain: Vec<E>) -> Result<Self> {
        if domain.is_empty() {
            return Err(Error::Degenerate("uniform pmf over an empty domain".into()));
        }
        let w = BigRational::new(BigInt::one(), BigInt::from(domain.len()));
        let weights = vec![w; domain.len()];
        Self::from_exact(domain.into_iter().zip(weights).collect())
    }

    /// Exact weights; must be nonnegative and sum to exactly 1.
    pub fn from_exact(pairs: Vec<(E, BigRational)>) -> Result<Self> {
        if pairs.iter().any(|(_, w)| w.is_negative()) {
            return Err(Error::InvalidParameter("negative probability weight".into()));
        }
        let total: BigRational = pairs.iter().map(|(_, w)| w.clone()).sum();
        if !total.is_one() {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        let (domain, weights) = Self::canonicalize(pairs)?;
        Ok(Self { domain, weights: Weights::Exact(weights) })
    }

    /// Exact weights from nonnegative integer counts.
    pub fn from_counts(pairs: Vec<(E, u64)>) -> Result<Self> {
        let total: u64 = pairs.iter().map(|(_, c)| *c).sum();
        if total == 0 {
            return Err(Error::Degenerate("all counts are zero".into()));
        }
        let t = BigInt::from(total);
        Self::from_exact(
            pairs
                .into_iter()
                .map(|(e, c)| (e, BigRational::new(BigInt::from(c), t.clone())))
                .collect(),
        )
    }

    pub fn from_float(pairs: Vec<(E, f64)>) -> Result<Self> {
        if pairs.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = pairs.iter().map(|(_, w)| *w).sum();
        if (total - 1.0).abs() > FLOAT_SUM_TOL {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        let (domain, weights) = Self::canonicalize(pairs)?;
        Ok(Self { domain, weights: Weights::Float(weights) })
    }

    fn canonicalize<W>(pairs: Vec<(E, W)>) -> Result<(Vec<E>, Vec<W>)> {
        let mut keyed: Vec<(Vec<u8>, E, W)> =
            pairs.into_iter().map(|(e, w)| (e.canonical_bytes(), e, w)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        if keyed.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate domain element".into()));
        }
        Ok(keyed.into_iter().map(|(_, e, w)| (e, w)).unzip())
    }

    pub fn domain(&self) -> &[E] {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.weights, Weights::Exact(_))
    }

    pub fn weight(&self, i: usize) -> Prob {
        match &self.weights {
            Weights::Exact(w) => Prob::Exact(w[i].clone()),
            Weights::Float(w) => Prob::Float(w[i]),
        }
    }

    pub fn exact_weights(&self) -> Option<&[BigRational]> {
        match &self.weights {
            Weights::Exact(w) => Some(w),
            Weights::Float(_) => None,
        }
    }

    pub fn float_weights(&self) -> Vec<f64> {
        match &self.weights {
            Weights::Exact(w) => w.iter().map(rational_to_f64).collect(),
            Weights::Float(w) => w.clone(),
        }
    }

    /// Number of elements with positive weight.
    pub fn support_size(&self) -> usize {
        match &self.weights {
            Weights::Exact(w) => w.iter().filter(|v| v.is_positive()).count(),
            Weights::Float(w) => w.iter().filter(|v| **v > 0.0).count(),
        }
    }

    /// True when every element of the support carries the same weight.
    pub fn is_uniform(&self) -> bool {
        match &self.weights {
            Weights::Exact(w) => {
                let mut pos = w.iter().filter(|v| v.is_positive());
                match pos.next() {
                    Some(first) => pos.all(|v| v == first),
                    None => false,
                }
            }
            Weights::Float(w) => {
                let pos: Vec<f64> = w.iter().copied().filter(|v| *v > 0.0).collect();
                pos.iter().all(|v| (v - pos[0]).abs() <= FLOAT_SUM_TOL)
            }
        }
    }

    /// Serializes as `element,weight_num,weight_den` or `element,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        match &self.weights {
            Weights::Exact(w) => {
                wr.write_record(["element", "weight_num", "weight_den"])?;
                for (e, p) in self.domain.iter().zip(w) {
                    wr.write_record([e.to_string(), p.numer().to_string(), p.denom().to_string()])?;
                }
            }
            Weights::Float(w) => {
                wr.write_record(["element", "weight"])?;
                for (e, p) in self.domain.iter().zip(w) {
                    wr.write_record([e.to_string(), format_float(*p)])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Validated parameters for the restricted-support uniform input law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RestrictedInputSpec {
    pub q: u32,
    pub n: usize,
    pub a: u32,
}

impl RestrictedInputSpec {
    pub fn new(q: u32, n: usize, a: u32) -> Result<Self> {
        require_prime(q as u64)?;
        if n == 0 {
            return Err(Error::InvalidParameter("dimension n must be at least 1".into()));
        }
        if a == 0 || a > q {
            return Err(Error::InvalidParameter(format!("support bound a = {a} must lie in 1..={q}")));
        }
        if a == 1 {
            return Err(Error::Degenerate(format!("a = 1 leaves a^n - 1 = 0 input points (n = {n})")));
        }
        Ok(Self { q, n, a })
    }

    /// a^n − 1, checked.
    pub fn support_len(&self) -> Result<u64> {
        (self.a as u64)
            .checked_pow(self.n as u32)
            .map(|v| v - 1)
            .ok_or(Error::Overflow("a^n"))
    }

    /// Nonzero points of [0, a)^n in lexicographic order.
    pub fn points(&self) -> Result<Vec<Vec<u32>>> {
        let m = self.support_len()?;
        let mut out = Vec::with_capacity(m as usize);
        let mut cur = vec![0u32; self.n];
        loop {
            // odometer increment, last coordinate fastest
            let mut i = self.n;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                cur[i] += 1;
                if cur[i] < self.a {
                    break;
                }
                cur[i] = 0;
            }
            out.push(cur.clone());
        }
    }
}

pub fn restricted_uniform_inputs(spec: &RestrictedInputSpec) -> Result<FinitePmf<Point>> {
    FinitePmf::uniform(spec.points()?.into_iter().map(Point).collect())
}

/// Uniform pmf on Z_q.
pub fn uniform_outputs(q: u32) -> FinitePmf<u32> {
    FinitePmf::uniform((0..q).collect()).expect("q >= 1")
}

/// Σ p_x², the probability that two independent draws coincide.
pub fn collision_probability<E: Element>(pmf: &FinitePmf<E>) -> Prob {
    match &pmf.weights {
        Weights::Exact(w) => Prob::Exact(w.iter().map(|p| p * p).sum()),
        Weights::Float(w) => Prob::Float(w.iter().map(|p| p * p).sum()),
    }
}

/// −log of the collision probability, in nats.
pub fn collision_entropy<E: Element>(pmf: &FinitePmf<E>) -> f64 {
    match collision_probability(pmf) {
        Prob::Exact(r) => ln_rational(&r),
        Prob::Float(v) => -v.ln(),
    }
    .abs()
}

/// −ln r without overflowing on huge numerators or denominators.
fn ln_rational(r: &BigRational) -> f64 {
    -(ln_bigint(r.numer()) - ln_bigint(r.denom()))
}

fn ln_bigint(v: &BigInt) -> f64 {
    let bits = v.bits();
    if bits < 1000 {
        return v.to_f64().expect("finite").ln();
    }
    let shift = bits - 64;
    let top: BigInt = v >> shift;
    top.to_f64().expect("finite").ln() + shift as f64 * std::f64::consts::LN_2
}

/// Correctly rounded enough for reporting; handles operands beyond f64 range.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && n.abs() < 1e300 && d < 1e300 {
            return n / d;
        }
    }
    let sign = if r.is_negative() { -1.0 } else { 1.0 };
    sign * (ln_bigint(&r.numer().abs()) - ln_bigint(r.denom())).exp()
}

/// Plain decimal in the usual range, scientific notation outside it.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}
