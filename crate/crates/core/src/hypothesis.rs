//! LWE hypothesis families h_k(x) = ⟨k, x⟩ mod q over uniform, sparse binary and
//! sparse ternary secrets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::measures::{FinitePmf, Point};
use crate::modular::require_prime;

pub const DEFAULT_SECRET_CAP: u64 = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SecretKind {
    Uniform,
    /// {0,1}^n with Hamming weight at most l.
    Binary(usize),
    /// {−1,0,1}^n with Hamming weight at most l.
    Ternary(usize),
}

impl SecretKind {
    pub fn name(&self) -> &'static str {
        match self {
            SecretKind::Uniform => "uniform",
            SecretKind::Binary(_) => "binary",
            SecretKind::Ternary(_) => "ternary",
        }
    }

    /// The weight cap, with uniform reported as n.
    pub fn height(&self, n: usize) -> usize {
        match *self {
            SecretKind::Uniform => n,
            SecretKind::Binary(l) | SecretKind::Ternary(l) => l,
        }
    }

    pub fn from_name(name: &str, l: usize) -> Result<Self> {
        match name {
            "uniform" => Ok(SecretKind::Uniform),
            "binary" => Ok(SecretKind::Binary(l)),
            "ternary" => Ok(SecretKind::Ternary(l)),
            other => Err(Error::Parse(format!("unknown secret kind `{other}`"))),
        }
    }
}

impl fmt::Display for SecretKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Secret vector with entries in [0, q); −1 is stored as q − 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Secret(pub Vec<u32>);

impl Secret {
    /// Signed view with entries in (−q/2, q/2].
    pub fn centered(&self, q: u32) -> Vec<i64> {
        self.0
            .iter()
            .map(|&v| if 2 * v > q { v as i64 - q as i64 } else { v as i64 })
            .collect()
    }
}

pub fn eval_hypothesis(secret: &[u32], x: &[u32], q: u32) -> Result<u32> {
    if secret.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: secret.len(), got: x.len() });
    }
    Ok(dot_mod(secret, x, q))
}

/// ⟨k, x⟩ mod q without the length check.
#[inline]
pub fn dot_mod(k: &[u32], x: &[u32], q: u32) -> u32 {
    let q = q as u64;
    let mut acc = 0u64;
    for (&a, &b) in k.iter().zip(x) {
        acc = (acc + (a as u64) * (b as u64)) % q;
    }
    acc as u32
}

#[derive(Clone, Debug)]
pub struct HypothesisClass {
    pub kind: SecretKind,
    pub q: u32,
    pub n: usize,
    secrets: Vec<Secret>,
}

impl HypothesisClass {
    /// A class from an explicit secret list (duplicates are kept and weighted by multiplicity).
    pub fn from_secrets(kind: SecretKind, q: u32, n: usize, secrets: Vec<Secret>) -> Result<Self> {
        if secrets.is_empty() {
            return Err(Error::Degenerate("empty hypothesis class".into()));
        }
        for s in &secrets {
            if s.0.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: s.0.len() });
            }
            if s.0.iter().any(|&v| v >= q) {
                return Err(Error::InvalidParameter("secret entry outside [0, q)".into()));
            }
        }
        Ok(Self { kind, q, n, secrets })
    }

    pub fn secrets(&self) -> &[Secret] {
        &self.secrets
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    /// χ: uniform over the enumerated secrets, weighted by multiplicity.
    pub fn chi(&self) -> Result<FinitePmf<Point>> {
        let mut counts: BTreeMap<&[u32], u64> = BTreeMap::new();
        for s in &self.secrets {
            *counts.entry(&s.0).or_default() += 1;
        }
        FinitePmf::from_counts(counts.into_iter().map(|(k, c)| (Point(k.to_vec()), c)).collect())
    }

    pub fn eval(&self, idx: usize, x: &[u32]) -> u32 {
        dot_mod(&self.secrets[idx].0, x, self.q)
    }
}

fn check_params(kind: SecretKind, q: u32, n: usize) -> Result<()> {
    require_prime(q as u64)?;
    if n == 0 {
        return Err(Error::InvalidParameter("dimension n must be at least 1".into()));
    }
    if let SecretKind::Binary(l) | SecretKind::Ternary(l) = kind {
        if l > n {
            return Err(Error::InvalidParameter(format!("height l = {l} exceeds n = {n}")));
        }
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// |H| in closed form.
pub fn class_size(kind: SecretKind, q: u32, n: usize) -> Result<BigUint> {
    check_params(kind, q, n)?;
    Ok(match kind {
        SecretKind::Uniform => BigUint::from(q).pow(n as u32),
        SecretKind::Binary(l) => (0..=l).map(|i| binomial(n, i)).sum(),
        SecretKind::Ternary(l) => {
            let two = BigUint::from(2u32);
            (0..=l).map(|i| binomial(n, i) * two.pow(i as u32)).sum()
        }
    })
}

/// Full lexicographic enumeration of the class, refusing when |H| exceeds `cap`.
pub fn enumerate_secrets(kind: SecretKind, q: u32, n: usize, cap: u64) -> Result<HypothesisClass> {
    let size = class_size(kind, q, n)?;
    if size > BigUint::from(cap) {
        return Err(Error::CapExceeded { what: "secret", count: size.to_string(), cap });
    }
    let size = size.to_usize().expect("bounded by cap");
    // Allowed per-coordinate values in increasing order, with the weight each contributes.
    let values: Vec<(u32, usize)> = match kind {
        SecretKind::Uniform => (0..q).map(|v| (v, usize::from(v != 0))).collect(),
        SecretKind::Binary(_) => vec![(0, 0), (1, 1)],
        SecretKind::Ternary(_) => {
            // at q = 2, −1 ≡ 1 and the two secrets stay as separate draws of χ
            let mut v = vec![(0, 0), (1, 1), (q - 1, 1)];
            v.sort();
            v
        }
    };
    let limit = kind.height(n);
    let mut secrets = Vec::with_capacity(size);
    let mut cur = vec![0u32; n];
    fill(&values, limit, 0, 0, &mut cur, &mut secrets);
    debug_assert_eq!(secrets.len(), size);
    HypothesisClass::from_secrets(kind, q, n, secrets)
}

fn fill(values: &[(u32, usize)], limit: usize, pos: usize, weight: usize, cur: &mut Vec<u32>, out: &mut Vec<Secret>) {
    if pos == cur.len() {
        out.push(Secret(cur.clone()));
        return;
    }
    for &(v, w) in values {
        if weight + w <= limit {
            cur[pos] = v;
            fill(values, limit, pos + 1, weight + w, cur, out);
        }
    }
    cur[pos] = 0;
}

/// Parsed `kind`, `q`, `n`, `l` descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassDescriptor {
    pub kind: SecretKind,
    pub q: u32,
    pub n: usize,
}

impl ClassDescriptor {
    pub fn enumerate(&self, cap: u64) -> Result<HypothesisClass> {
        enumerate_secrets(self.kind, self.q, self.n, cap)
    }
}

impl FromStr for ClassDescriptor {
    type Err = Error;

    /// Accepts `key=value` pairs separated by whitespace, commas or newlines;
    /// `#` starts a comment.
    fn from_str(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in s.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("expected key=value, got `{tok}`")))?;
                if !matches!(k, "kind" | "q" | "n" | "l") {
                    return Err(Error::Parse(format!("unknown key `{k}`")));
                }
                if map.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(Error::Parse(format!("duplicate key `{k}`")));
                }
            }
        }
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Parse(format!("missing key `{k}`")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("`{k}` is not a nonnegative integer")))
        };
        let q = num("q")? as u32;
        let n = num("n")?;
        let kind_name = get("kind")?.as_str();
        let l = if kind_name == "uniform" { map.get("l").map(|_| num("l")).transpose()?.unwrap_or(n) } else { num("l")? };
        let kind = SecretKind::from_name(kind_name, l)?;
        check_params(kind, q, n)?;
        Ok(Self { kind, q, n })
    }
}

/// Sum of binomials, used when only the small closed form is needed.
pub fn class_size_u64(kind: SecretKind, q: u32, n: usize) -> Result<u64> {
    class_size(kind, q, n)?.to_u64().ok_or(Error::Overflow("class size"))
}

impl HypothesisClass {
    /// True when the class is exactly all of Z_q^n, each once.
    pub fn is_full_uniform(&self) -> bool {
        self.kind == SecretKind::Uniform
            && class_size(self.kind, self.q, self.n).map(|s| s == BigUint::from(self.len())).unwrap_or(false)
    }

    /// Index of the zero secret, if present.
    pub fn zero_index(&self) -> Option<usize> {
        self.secrets.iter().position(|s| s.0.iter().all(Zero::is_zero))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_examples() {
        assert_eq!(enumerate_secrets(SecretKind::Binary(2), 3, 4, DEFAULT_SECRET_CAP).unwrap().len(), 11);
        assert_eq!(enumerate_secrets(SecretKind::Ternary(2), 3, 4, DEFAULT_SECRET_CAP).unwrap().len(), 33);
        assert_eq!(enumerate_secrets(SecretKind::Uniform, 3, 2, DEFAULT_SECRET_CAP).unwrap().len(), 9);
    }

    #[test]
    fn class_size_examples() {
        assert_eq!(class_size(SecretKind::Uniform, 7, 3).unwrap(), BigUint::from(343u32));
        assert_eq!(class_size(SecretKind::Binary(3), 3, 10).unwrap(), BigUint::from(176u32));
        assert_eq!(class_size(SecretKind::Ternary(3), 5, 3).unwrap(), BigUint::from(27u32));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_hypothesis(&[1, 2], &[3, 4], 5).unwrap(), 1);
        assert_eq!(eval_hypothesis(&[0, 0, 0], &[4, 1, 3], 5).unwrap(), 0);
        assert_eq!(eval_hypothesis(&[1, 0, 0], &[1, 0, 0], 7).unwrap(), 1);
        assert!(matches!(eval_hypothesis(&[1], &[1, 2], 5), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn enumeration_is_lexicographic_and_unique() {
        let c = enumerate_secrets(SecretKind::Ternary(2), 5, 3, DEFAULT_SECRET_CAP).unwrap();
        assert!(c.secrets().windows(2).all(|w| w[0] < w[1]));
        assert!(c.secrets().iter().all(|s| s.0.iter().filter(|&&v| v != 0).count() <= 2));
        assert!(c.secrets().iter().all(|s| s.centered(5).iter().all(|v| v.abs() <= 1)));
    }

    #[test]
    fn ternary_at_q3_keeps_distinct_values() {
        // q − 1 = 2 is distinct from 1, so all 3^n patterns survive at l = n.
        let c = enumerate_secrets(SecretKind::Ternary(3), 3, 3, DEFAULT_SECRET_CAP).unwrap();
        assert_eq!(c.len(), 27);
    }

    #[test]
    fn cap_is_enforced_with_count() {
        let err = enumerate_secrets(SecretKind::Uniform, 7, 10, 1000).unwrap_err();
        match err {
            Error::CapExceeded { count, cap, .. } => {
                assert_eq!(count, "282475249");
                assert_eq!(cap, 1000);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(class_size(SecretKind::Uniform, 9, 2), Err(Error::NotPrime(9))));
        assert!(class_size(SecretKind::Binary(5), 3, 4).is_err());
    }

    #[test]
    fn descriptor_parsing() {
        let d: ClassDescriptor = "kind=binary q=3 n=4 l=2".parse().unwrap();
        assert_eq!(d, ClassDescriptor { kind: SecretKind::Binary(2), q: 3, n: 4 });
        let d: ClassDescriptor = "kind=uniform\nq=5\nn=3 # comment".parse().unwrap();
        assert_eq!(d.kind, SecretKind::Uniform);
        assert!("kind=binary q=3 n=4".parse::<ClassDescriptor>().is_err());
        assert!("kind=binary q=3 n=4 l=2 m=1".parse::<ClassDescriptor>().is_err());
        assert!("kind=weird q=3 n=4 l=2".parse::<ClassDescriptor>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(60))]
            #[test]
            fn size_matches_enumeration(qi in 0usize..3, n in 1usize..=8, lfrac in 0.0f64..=1.0, kind in 0u8..3) {
                let q = [3u32, 5, 7][qi];
                let l = ((n as f64) * lfrac).round() as usize;
                let kind = match kind { 0 => SecretKind::Uniform, 1 => SecretKind::Binary(l), _ => SecretKind::Ternary(l) };
                prop_assume!(!(kind == SecretKind::Uniform && q == 7 && n > 7));
                let c = enumerate_secrets(kind, q, n, DEFAULT_SECRET_CAP).unwrap();
                prop_assert_eq!(BigUint::from(c.len()), class_size(kind, q, n).unwrap());
            }

            #[test]
            fn evaluation_is_linear(k in proptest::collection::vec(0u32..7, 4), x in proptest::collection::vec(0u32..7, 4), y in proptest::collection::vec(0u32..7, 4)) {
                let q = 7;
                let sum: Vec<u32> = x.iter().zip(&y).map(|(a, b)| (a + b) % q).collect();
                let lhs = eval_hypothesis(&k, &sum, q).unwrap();
                let rhs = (eval_hypothesis(&k, &x, q).unwrap() + eval_hypothesis(&k, &y, q).unwrap()) % q;
                prop_assert_eq!(lhs, rhs);
            }
        }
    }
}
