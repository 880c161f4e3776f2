//! Aggregate ε for LWE classes under the restricted uniform input law, using the
//! coordinate-permutation symmetry shared by all three secret families.
//!
//! The joint law of (⟨k,x⟩, ⟨k,x′⟩) depends only on the multiset of column
//! pairs (x_i, x′_i). We walk those multisets depth-first, carrying a table of
//! partial secret counts indexed by (Hamming weight, y, y′), and weight each
//! multiset by the number of ordered pairs (x, x′) that realize it.

use num_bigint::{BigInt, BigUint};
use num_integer::binomial;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypothesis::{class_size, SecretKind};
use crate::measures::{rational_to_f64, RestrictedInputSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Uniform,
    Binary,
    Ternary,
}

impl Family {
    pub fn of(kind: SecretKind) -> Self {
        match kind {
            SecretKind::Uniform => Family::Uniform,
            SecretKind::Binary(_) => Family::Binary,
            SecretKind::Ternary(_) => Family::Ternary,
        }
    }

    pub fn with_height(self, l: usize) -> SecretKind {
        match self {
            Family::Uniform => SecretKind::Uniform,
            Family::Binary => SecretKind::Binary(l),
            Family::Ternary => SecretKind::Ternary(l),
        }
    }
}

pub const DEFAULT_MULTISET_CAP: u64 = 3_000_000;

/// Number of column multisets visited: C(a² + n − 1, n).
pub fn multiset_count(a: u32, n: usize) -> BigUint {
    let t = (a as usize) * (a as usize);
    binomial(BigUint::from(t + n - 1), BigUint::from(n))
}

/// Exact aggregates for one height l.
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictedEpsilon {
    pub l: usize,
    pub class_size: u64,
    pub tv_sq: BigRational,
    pub pearson_sq: BigRational,
    /// m² for m = a^n − 1 support points.
    pub pairs_evaluated: u64,
    pub collision_prob: BigRational,
}

impl RestrictedEpsilon {
    pub fn tv(&self) -> f64 {
        rational_to_f64(&self.tv_sq).sqrt()
    }

    pub fn pearson(&self) -> f64 {
        rational_to_f64(&self.pearson_sq).sqrt()
    }
}

struct Ctx {
    q: usize,
    n: usize,
    /// Weight layers carried; 1 for the uniform family.
    layers: usize,
    family: Family,
    /// (u, v) for each column type, ordered by type index.
    types: Vec<(usize, usize)>,
    heights: Vec<usize>,
    sizes: Vec<u64>,
    fact_n: u64,
}

/// Per-height numerators: tv off/diag share one denominator, as do pearson.
#[derive(Clone, Default)]
struct Acc {
    tv: Vec<u128>,
    pearson: Vec<u128>,
}

impl Acc {
    fn new(k: usize) -> Self {
        Self { tv: vec![0; k], pearson: vec![0; k] }
    }

    fn merge(&mut self, o: &Acc) -> Result<()> {
        for (a, b) in self.tv.iter_mut().zip(&o.tv) {
            *a = a.checked_add(*b).ok_or(Error::Overflow("tv numerator"))?;
        }
        for (a, b) in self.pearson.iter_mut().zip(&o.pearson) {
            *a = a.checked_add(*b).ok_or(Error::Overflow("pearson numerator"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Flags {
    u_zero: bool,
    v_zero: bool,
    diag: bool,
}

impl Ctx {
    fn state_len(&self) -> usize {
        self.layers * self.q * self.q
    }

    fn step(&self, src: &[u64], dst: &mut [u64], (u, v): (usize, usize)) {
        let q = self.q;
        let qq = q * q;
        dst.copy_from_slice(src);
        match self.family {
            Family::Uniform => {
                for k in 1..q {
                    let (du, dv) = (k * u % q, k * v % q);
                    for y in 0..q {
                        let ny = (y + du) % q;
                        for y2 in 0..q {
                            dst[ny * q + (y2 + dv) % q] += src[y * q + y2];
                        }
                    }
                }
            }
            Family::Binary | Family::Ternary => {
                let neg = self.family == Family::Ternary;
                for w in 0..self.layers - 1 {
                    let (s, d) = (w * qq, (w + 1) * qq);
                    for y in 0..q {
                        for y2 in 0..q {
                            let c = src[s + y * q + y2];
                            if c == 0 {
                                continue;
                            }
                            dst[d + (y + u) % q * q + (y2 + v) % q] += c;
                            if neg {
                                dst[d + (y + q - u) % q * q + (y2 + q - v) % q] += c;
                            }
                        }
                    }
                }
            }
        }
    }

    fn leaf(&self, state: &[u64], mult: u64, flags: Flags, acc: &mut Acc, cum: &mut [u64]) -> Result<()> {
        if flags.u_zero || flags.v_zero {
            return Ok(());
        }
        let q = self.q as u128;
        let qq = self.q * self.q;
        cum.fill(0);
        let mut next_layer = 0;
        for (hi, &l) in self.heights.iter().enumerate() {
            let upto = if self.family == Family::Uniform { 1 } else { l + 1 };
            while next_layer < upto {
                for (c, s) in cum.iter_mut().zip(&state[next_layer * qq..(next_layer + 1) * qq]) {
                    *c += s;
                }
                next_layer += 1;
            }
            let h = self.sizes[hi] as u128;
            let (tv, pe) = if flags.diag {
                let mut t = 0u128;
                let mut p = 0u128;
                for y in 0..self.q {
                    let nd = q * cum[y * self.q + y] as u128;
                    let d = nd.abs_diff(h);
                    t += d;
                    p += d * d;
                }
                // bring the diagonal terms over the off-diagonal denominators
                (q * q * t * t, q * p)
            } else {
                let mut t = 0u128;
                let mut p = 0u128;
                for &c in cum.iter() {
                    let d = (q * q * c as u128).abs_diff(h);
                    t += d;
                    p += d * d;
                }
                (t * t, p)
            };
            let m = mult as u128;
            acc.tv[hi] = tv
                .checked_mul(m)
                .and_then(|x| acc.tv[hi].checked_add(x))
                .ok_or(Error::Overflow("tv numerator"))?;
            acc.pearson[hi] = pe
                .checked_mul(m)
                .and_then(|x| acc.pearson[hi].checked_add(x))
                .ok_or(Error::Overflow("pearson numerator"))?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        &self,
        depth: usize,
        last: usize,
        run: u64,
        denom: u64,
        flags: Flags,
        stack: &mut [Vec<u64>],
        acc: &mut Acc,
        cum: &mut [u64],
    ) -> Result<()> {
        if depth == self.n {
            return self.leaf(&stack[depth], self.fact_n / denom, flags, acc, cum);
        }
        for t in last..self.types.len() {
            let (u, v) = self.types[t];
            let (lo, hi) = stack.split_at_mut(depth + 1);
            self.step(&lo[depth], &mut hi[0], (u, v));
            let r = if t == last && depth > 0 { run + 1 } else { 1 };
            let f = Flags { u_zero: flags.u_zero && u == 0, v_zero: flags.v_zero && v == 0, diag: flags.diag && u == v };
            self.dfs(depth + 1, t, r, denom * r, f, stack, acc, cum)?;
        }
        Ok(())
    }
}

/// Exact tv and Pearson aggregates over the nonzero points of [0, a)^n for every
/// height in `heights` (ignored for the uniform family), in one traversal.
pub fn aggregate_epsilon_restricted(
    spec: &RestrictedInputSpec,
    family: Family,
    heights: &[usize],
    multiset_cap: u64,
) -> Result<Vec<RestrictedEpsilon>> {
    let (q, n, a) = (spec.q as usize, spec.n, spec.a as usize);
    if n > 20 {
        return Err(Error::InvalidParameter("n > 20 overflows the multiplicity arithmetic".into()));
    }
    let mut hs: Vec<usize> = if family == Family::Uniform { vec![n] } else { heights.to_vec() };
    hs.sort_unstable();
    hs.dedup();
    if hs.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(&l) = hs.iter().find(|&&l| l > n) {
        return Err(Error::InvalidParameter(format!("height l = {l} exceeds n = {n}")));
    }
    let count = multiset_count(spec.a, n);
    if count > BigUint::from(multiset_cap) {
        return Err(Error::CapExceeded { what: "column multiset", count: count.to_string(), cap: multiset_cap });
    }
    let sizes = hs
        .iter()
        .map(|&l| class_size(family.with_height(l), spec.q, n)?.to_u64().ok_or(Error::Overflow("class size")))
        .collect::<Result<Vec<_>>>()?;
    let layers = if family == Family::Uniform { 1 } else { hs[hs.len() - 1] + 1 };
    let ctx = Ctx {
        q,
        n,
        layers,
        family,
        types: (0..a).flat_map(|u| (0..a).map(move |v| (u, v))).collect(),
        heights: hs.clone(),
        sizes: sizes.clone(),
        fact_n: (1..=n as u64).product(),
    };

    let mut root = vec![0u64; ctx.state_len()];
    root[0] = 1;

    // Split on the first (smallest) column type; each branch is independent.
    let parts: Vec<Result<Acc>> = (0..ctx.types.len())
        .into_par_iter()
        .map(|t0| {
            let mut stack = vec![vec![0u64; ctx.state_len()]; n + 1];
            stack[0].copy_from_slice(&root);
            let mut acc = Acc::new(hs.len());
            let mut cum = vec![0u64; q * q];
            let (u, v) = ctx.types[t0];
            let (lo, hi) = stack.split_at_mut(1);
            ctx.step(&lo[0], &mut hi[0], (u, v));
            let f = Flags { u_zero: u == 0, v_zero: v == 0, diag: u == v };
            ctx.dfs(1, t0, 1, 1, f, &mut stack, &mut acc, &mut cum)?;
            Ok(acc)
        })
        .collect();
    let mut total = Acc::new(hs.len());
    for p in parts {
        total.merge(&p?)?;
    }

    let m = spec.support_len()?;
    let m2 = BigInt::from(m) * BigInt::from(m);
    let qb = BigInt::from(q);
    Ok(hs
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let h2 = BigInt::from(sizes[i]) * BigInt::from(sizes[i]);
            let tv_den = qb.pow(4) * &h2 * &m2;
            let pe_den = qb.pow(2) * &h2 * &m2;
            RestrictedEpsilon {
                l,
                class_size: sizes[i],
                tv_sq: BigRational::new(BigInt::from(total.tv[i]), tv_den),
                pearson_sq: BigRational::new(BigInt::from(total.pearson[i]), pe_den),
                pairs_evaluated: m * m,
                collision_prob: BigRational::new(1.into(), BigInt::from(m)),
            }
        })
        .collect())
}
