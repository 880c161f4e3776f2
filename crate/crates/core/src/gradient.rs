//! Gradient variance of linear-in-weights models over a hypothesis class, the
//! general variance upper bound assembled term by term, and the operator
//! identities behind it as standalone checks.
//!
//! All quantities are generic over [`Scalar`], so the same code runs in exact
//! rational arithmetic (squared loss) or in floating point (sigmoid loss).

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, One, Signed};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::independence::{aggregate_epsilon_table, AggregateOptions, EpsilonSpace, EvalTable};
use crate::measures::{collision_probability, rational_sqrt_exact, rational_to_f64, FinitePmf, Point, Prob};

/// Number field the gradient computations run in.
pub trait Scalar: Clone + fmt::Debug + PartialOrd + Num + Signed + Send + Sync {
    const EXACT: bool;
    fn from_rational(r: &BigRational) -> Self;
    fn from_prob(p: &Prob) -> Result<Self>;
    fn to_f64(&self) -> f64;
    fn to_prob(&self) -> Prob;
    /// σ′(z) = σ(z)(1 − σ(z)); unavailable in exact mode.
    fn sigmoid_prime(z: &Self) -> Option<Self>;
    fn is_finite(&self) -> bool;
    /// Lower and upper bounds on √self; equal when the root is representable.
    fn sqrt_bounds(&self) -> (Self, Self);

    fn sum(values: impl Iterator<Item = Self>) -> Self {
        values.fold(Self::zero(), |a, b| a + b)
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_rational(r: &BigRational) -> Self {
        rational_to_f64(r)
    }

    fn from_prob(p: &Prob) -> Result<Self> {
        Ok(p.to_f64())
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn to_prob(&self) -> Prob {
        Prob::Float(*self)
    }

    fn sigmoid_prime(z: &Self) -> Option<Self> {
        let s = 1.0 / (1.0 + (-z).exp());
        Some(s * (1.0 - s))
    }

    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }

    fn sqrt_bounds(&self) -> (Self, Self) {
        let s = self.max(0.0).sqrt();
        (s, s)
    }

    /// Neumaier compensated summation.
    fn sum(values: impl Iterator<Item = Self>) -> Self {
        let mut s = 0.0f64;
        let mut c = 0.0f64;
        for v in values {
            let t = s + v;
            if s.abs() >= v.abs() {
                c += (s - t) + v;
            } else {
                c += (v - t) + s;
            }
            s = t;
        }
        s + c
    }
}

const SQRT_BITS: u64 = 160;

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn from_prob(p: &Prob) -> Result<Self> {
        match p {
            Prob::Exact(r) => Ok(r.clone()),
            Prob::Float(_) => Err(Error::InvalidParameter("exact mode needs exact probability weights".into())),
        }
    }

    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }

    fn to_prob(&self) -> Prob {
        Prob::Exact(self.clone())
    }

    fn sigmoid_prime(_: &Self) -> Option<Self> {
        None
    }

    fn is_finite(&self) -> bool {
        true
    }

    fn sqrt_bounds(&self) -> (Self, Self) {
        if let Some(s) = rational_sqrt_exact(self) {
            return (s.clone(), s);
        }
        // ⌊√(N·4^b / D)⌋ / 2^b ≤ √(N/D) ≤ (that + 1) / 2^b
        let scale = BigInt::one() << SQRT_BITS;
        let scaled = (self.numer() << (2 * SQRT_BITS)) / self.denom();
        let lo = scaled.sqrt();
        let hi = &lo + BigInt::one();
        (BigRational::new(lo, scale.clone()), BigRational::new(hi, scale))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Loss {
    /// L(p, y) = (p − enc(y))², ∂L/∂p = 2(p − enc(y)).
    Squared,
    /// L(p, y) = σ(p − enc(y)), ∂L/∂p = σ′(p − enc(y)) ∈ (0, 1/4].
    Sigmoid,
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Squared => "squared",
            Loss::Sigmoid => "sigmoid",
        }
    }

    pub fn derivative<S: Scalar>(&self, p: &S, target: &S) -> Result<S> {
        let v = match self {
            Loss::Squared => (p.clone() - target.clone()) * S::from_rational(&BigRational::from_integer(2.into())),
            Loss::Sigmoid => S::sigmoid_prime(&(p.clone() - target.clone())).ok_or(Error::NeedsFloat("sigmoid"))?,
        };
        if !v.is_finite() {
            return Err(Error::NonFiniteDerivative { p: p.to_f64(), target: target.to_f64() });
        }
        Ok(v)
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Loss::Squared),
            "sigmoid" => Ok(Loss::Sigmoid),
            other => Err(Error::Parse(format!("unknown loss `{other}` (squared|sigmoid)"))),
        }
    }
}

/// Real-valued target enc(y) for an output y ∈ Z_q.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Encoder {
    /// y / q
    #[default]
    Scaled,
    /// y
    Raw,
    /// (2y − (q − 1)) / (2q), symmetric about zero
    Centered,
}

impl Encoder {
    pub fn encode(&self, y: u32, q: u32) -> BigRational {
        let (y, q) = (BigInt::from(y), BigInt::from(q));
        match self {
            Encoder::Scaled => BigRational::new(y, q),
            Encoder::Raw => BigRational::from_integer(y),
            Encoder::Centered => BigRational::new(BigInt::from(2) * y - (&q - 1), BigInt::from(2) * q),
        }
    }
}

impl FromStr for Encoder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(Encoder::Scaled),
            "raw" => Ok(Encoder::Raw),
            "centered" => Ok(Encoder::Centered),
            other => Err(Error::Parse(format!("unknown encoder `{other}` (scaled|raw|centered)"))),
        }
    }
}

/// p(w, x) = Σ_j w_j φ_j(x) on a finite input support.
#[derive(Clone, Debug)]
pub struct ModelSpec<S> {
    /// `features[j][x]`, inputs indexed in μ_X domain order.
    pub features: Vec<Vec<S>>,
    pub weights: Vec<S>,
    pub loss: Loss,
    pub encoder: Encoder,
}

impl<S: Scalar> ModelSpec<S> {
    pub fn new(features: Vec<Vec<S>>, weights: Vec<S>, loss: Loss, encoder: Encoder) -> Result<Self> {
        if features.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: features.len(), got: weights.len() });
        }
        if features.is_empty() {
            return Err(Error::InvalidParameter("model needs at least one feature".into()));
        }
        let m = features[0].len();
        if let Some(f) = features.iter().find(|f| f.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, got: f.len() });
        }
        Ok(Self { features, weights, loss, encoder })
    }

    pub fn n_inputs(&self) -> usize {
        self.features[0].len()
    }

    pub fn predict(&self, x: usize) -> S {
        S::sum(self.features.iter().zip(&self.weights).map(|(f, w)| f[x].clone() * w.clone()))
    }

    fn feature(&self, i: usize) -> Result<&[S]> {
        self.features
            .get(i)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::InvalidParameter(format!("no weight index {i}")))
    }

    /// ∂L/∂p at (p(w, x), enc(y)) for every input and every y ∈ Z_q, row-major.
    fn derivative_table(&self, q: u32) -> Result<Vec<S>> {
        let targets: Vec<S> = (0..q).map(|y| S::from_rational(&self.encoder.encode(y, q))).collect();
        let mut out = Vec::with_capacity(self.n_inputs() * q as usize);
        for x in 0..self.n_inputs() {
            let p = self.predict(x);
            for t in &targets {
                out.push(self.loss.derivative(&p, t)?);
            }
        }
        Ok(out)
    }
}

/// Centered loss-derivative statistics per input.
#[derive(Clone, Debug)]
pub struct LossDerivStats<S> {
    pub q: u32,
    /// r_w(x, y), row-major by input.
    pub r: Vec<S>,
    /// c(x) = E_Y[∂L/∂p].
    pub c: Vec<S>,
    /// D_x = E_Y[r²].
    pub d: Vec<S>,
    /// M_x = max over supp μ_Y of |r|.
    pub m: Vec<S>,
    /// E_Y[r⁴].
    pub r4: Vec<S>,
}

impl<S: Scalar> LossDerivStats<S> {
    pub fn r(&self, x: usize, y: u32) -> &S {
        &self.r[x * self.q as usize + y as usize]
    }
}

fn output_weights<S: Scalar>(mu_y: &FinitePmf<u32>, q: u32) -> Result<Vec<S>> {
    let mut p = vec![S::zero(); q as usize];
    for (i, &y) in mu_y.domain().iter().enumerate() {
        if y >= q {
            return Err(Error::InvalidParameter(format!("output {y} outside Z_{q}")));
        }
        p[y as usize] = S::from_prob(&mu_y.weight(i))?;
    }
    Ok(p)
}

fn input_weights<S: Scalar>(mu_x: &FinitePmf<Point>) -> Result<Vec<S>> {
    (0..mu_x.len()).map(|i| S::from_prob(&mu_x.weight(i))).collect()
}

pub fn loss_deriv_stats<S: Scalar>(model: &ModelSpec<S>, mu_y: &FinitePmf<u32>, q: u32) -> Result<LossDerivStats<S>> {
    let p = output_weights::<S>(mu_y, q)?;
    let dl = model.derivative_table(q)?;
    let qs = q as usize;
    let m = model.n_inputs();
    let mut r = Vec::with_capacity(m * qs);
    let (mut c, mut d, mut sup, mut r4) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for x in 0..m {
        let row = &dl[x * qs..(x + 1) * qs];
        let cx = S::sum(row.iter().zip(&p).map(|(v, w)| v.clone() * w.clone()));
        let rx: Vec<S> = row.iter().map(|v| v.clone() - cx.clone()).collect();
        let sq: Vec<S> = rx.iter().map(|v| v.clone() * v.clone()).collect();
        d.push(S::sum(sq.iter().zip(&p).map(|(v, w)| v.clone() * w.clone())));
        r4.push(S::sum(sq.iter().zip(&p).map(|(v, w)| v.clone() * v.clone() * w.clone())));
        let mx = rx
            .iter()
            .zip(&p)
            .filter(|(_, w)| w.is_positive())
            .map(|(v, _)| v.abs())
            .fold(S::zero(), |a, b| if b > a { b } else { a });
        sup.push(mx);
        c.push(cx);
        r.extend(rx);
    }
    Ok(LossDerivStats { q, r, c, d, m: sup, r4 })
}

fn check_shapes<S: Scalar>(model: &ModelSpec<S>, table: &EvalTable, mu_x: &FinitePmf<Point>) -> Result<()> {
    if model.n_inputs() != mu_x.len() {
        return Err(Error::DimensionMismatch { expected: mu_x.len(), got: model.n_inputs() });
    }
    if table.n_inputs() != mu_x.len() {
        return Err(Error::DimensionMismatch { expected: mu_x.len(), got: table.n_inputs() });
    }
    Ok(())
}

/// Gradient of the cost w.r.t. w_i for every hypothesis, in hypothesis order.
fn gradients<S: Scalar>(model: &ModelSpec<S>, table: &EvalTable, mu_x: &FinitePmf<Point>, i: usize) -> Result<Vec<S>> {
    check_shapes(model, table, mu_x)?;
    let phi = model.feature(i)?;
    let dl = model.derivative_table(table.q)?;
    let w = input_weights::<S>(mu_x)?;
    let qs = table.q as usize;
    // coefficient μ(x)·φ_i(x) is hypothesis independent
    let coef: Vec<S> = w.iter().zip(phi).map(|(a, b)| a.clone() * b.clone()).collect();
    Ok((0..table.n_hyp())
        .into_par_iter()
        .map(|h| {
            S::sum((0..mu_x.len()).map(|x| coef[x].clone() * dl[x * qs + table.row(x)[h] as usize].clone()))
        })
        .collect())
}

/// ∂_{w_i} E_X[L(p(w, X), h(X))] for hypothesis column `h` of the table.
pub fn exact_gradient<S: Scalar>(
    model: &ModelSpec<S>,
    table: &EvalTable,
    h: usize,
    mu_x: &FinitePmf<Point>,
    i: usize,
) -> Result<S> {
    check_shapes(model, table, mu_x)?;
    if h >= table.n_hyp() {
        return Err(Error::InvalidParameter(format!("no hypothesis index {h}")));
    }
    let phi = model.feature(i)?;
    let dl = model.derivative_table(table.q)?;
    let w = input_weights::<S>(mu_x)?;
    let qs = table.q as usize;
    Ok(S::sum(
        (0..mu_x.len()).map(|x| w[x].clone() * dl[x * qs + table.row(x)[h] as usize].clone() * phi[x].clone()),
    ))
}

/// Population variance over h ∼ χ (uniform over table columns), two-pass.
pub fn exact_gradient_variance<S: Scalar>(
    model: &ModelSpec<S>,
    table: &EvalTable,
    mu_x: &FinitePmf<Point>,
    i: usize,
) -> Result<S> {
    let g = gradients(model, table, mu_x, i)?;
    let n = S::from_rational(&BigRational::from_integer(BigInt::from(g.len())));
    let mean = S::sum(g.iter().cloned()) / n.clone();
    Ok(S::sum(g.iter().map(|v| {
        let d = v.clone() - mean.clone();
        d.clone() * d
    })) / n)
}

/// Outcome of comparing an exact variance against the bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Certificate {
    Holds,
    Violated,
    /// Rational brackets of the square roots were too coarse to decide.
    Undecided,
}

/// Every term of the variance bound, as assembled.
#[derive(Clone, Debug)]
pub struct BoundBreakdown<S> {
    pub space: EpsilonSpace,
    /// ‖∂p/∂w_i‖²_{μ_X}
    pub grad_norm_sq: f64,
    /// √E[ε(X, X′)² ‖φ_{X,X′}‖²]
    pub eps_term: f64,
    pub gamma: f64,
    pub bound: f64,
    exact_g: S,
    exact_a: S,
    /// μ(x)², t_x and D_x with γ = Σ μ(x)² (√t_x + D_x)².
    gamma_parts: Vec<(S, S, S)>,
}

impl<S: Scalar> BoundBreakdown<S> {
    /// E[ε²‖φ‖²] in the working field.
    pub fn eps_term_sq(&self) -> &S {
        &self.exact_a
    }

    pub fn grad_norm_sq_exact(&self) -> &S {
        &self.exact_g
    }

    fn gamma_bounds(&self) -> (S, S) {
        let mut lo = S::zero();
        let mut hi = S::zero();
        for (w, t, d) in &self.gamma_parts {
            let (sl, sh) = t.sqrt_bounds();
            let a = sl + d.clone();
            let b = sh + d.clone();
            lo = lo + w.clone() * a.clone() * a;
            hi = hi + w.clone() * b.clone() * b;
        }
        (lo, hi)
    }

    /// γ in the working field, when every √t_x is representable.
    pub fn gamma_exact(&self) -> Option<S> {
        let (lo, hi) = self.gamma_bounds();
        (lo == hi).then_some(lo)
    }

    /// Rigorous lower and upper brackets of the bound in the working field.
    pub fn bound_bounds(&self) -> (S, S) {
        let (glo, ghi) = self.gamma_bounds();
        let (alo, ahi) = self.exact_a.sqrt_bounds();
        let (gl, _) = glo.sqrt_bounds();
        let (_, gh) = ghi.sqrt_bounds();
        (self.exact_g.clone() * (alo + gl), self.exact_g.clone() * (ahi + gh))
    }

    /// The bound itself when it is representable exactly.
    pub fn bound_exact(&self) -> Option<S> {
        let (lo, hi) = self.bound_bounds();
        (lo == hi).then_some(lo)
    }

    /// Exact decision in rational mode; relative tolerance 1e-12 in float mode.
    pub fn certifies(&self, variance: &S) -> Certificate {
        if S::EXACT {
            let (lo, hi) = self.bound_bounds();
            if *variance <= lo {
                Certificate::Holds
            } else if *variance > hi {
                Certificate::Violated
            } else {
                Certificate::Undecided
            }
        } else {
            let v = variance.to_f64();
            if v <= self.bound * (1.0 + 1e-12) + f64::MIN_POSITIVE {
                Certificate::Holds
            } else {
                Certificate::Violated
            }
        }
    }

    /// bound − variance, exact where possible.
    pub fn slack(&self, variance: &S) -> f64 {
        match self.bound_exact() {
            Some(b) => (b - variance.clone()).to_f64(),
            None => self.bound - variance.to_f64(),
        }
    }
}

/// The variance bound for coordinate i, with ε measured in `space` against μ_Y.
pub fn variance_bound<S: Scalar>(
    model: &ModelSpec<S>,
    table: &EvalTable,
    mu_x: &FinitePmf<Point>,
    mu_y: &FinitePmf<u32>,
    space: EpsilonSpace,
    i: usize,
) -> Result<BoundBreakdown<S>> {
    check_shapes(model, table, mu_x)?;
    let q = table.q;
    if mu_y.support_size() != q as usize || mu_y.domain().iter().any(|&y| y >= q) {
        return Err(Error::InvalidParameter("the bound needs μ_Y with full support on Z_q".into()));
    }
    let stats = loss_deriv_stats(model, mu_y, q)?;
    let w = input_weights::<S>(mu_x)?;
    let phi = model.feature(i)?;
    let exact_g = S::sum(w.iter().zip(phi).map(|(a, b)| a.clone() * b.clone() * b.clone()));

    let opts = AggregateOptions { symmetric: true, keep_table: true, pair_cap: u64::MAX };
    let rep = aggregate_epsilon_table(table, mu_x, mu_y, space, opts)?;
    let m = mu_x.len();
    // ‖φ_{x,x′}‖² factors as n2[x]·n2[x′]
    let n2: Vec<S> = match space {
        EpsilonSpace::Tv => stats.m.iter().map(|v| v.clone() * v.clone()).collect(),
        EpsilonSpace::Pearson => stats.d.clone(),
    };
    let rows: Vec<Result<S>> = (0..m)
        .into_par_iter()
        .map(|x| {
            let terms = (0..m)
                .map(|y| {
                    let e = S::from_prob(&rep.pair(x, y).expect("table kept").sq)?;
                    Ok(w[y].clone() * e * n2[y].clone())
                })
                .collect::<Result<Vec<S>>>()?;
            Ok(w[x].clone() * n2[x].clone() * S::sum(terms.into_iter()))
        })
        .collect();
    let exact_a = S::sum(rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter());

    let mut gamma_parts = Vec::with_capacity(m);
    for x in 0..m {
        let e2 = S::from_prob(&rep.pair(x, x).expect("table kept").sq)?;
        // (‖φ_x‖·ε(x,x))² = t_x
        let f2 = match space {
            EpsilonSpace::Tv => {
                let m2 = stats.m[x].clone() * stats.m[x].clone();
                m2.clone() * m2
            }
            EpsilonSpace::Pearson => stats.r4[x].clone(),
        };
        gamma_parts.push((w[x].clone() * w[x].clone(), f2 * e2, stats.d[x].clone()));
    }

    let mut out = BoundBreakdown {
        space,
        grad_norm_sq: exact_g.to_f64(),
        eps_term: exact_a.to_f64().max(0.0).sqrt(),
        gamma: 0.0,
        bound: 0.0,
        exact_g,
        exact_a,
        gamma_parts,
    };
    out.gamma = match out.gamma_exact() {
        Some(v) => v.to_f64(),
        None => out
            .gamma_parts
            .iter()
            .map(|(w, t, d)| {
                let s = t.to_f64().max(0.0).sqrt() + d.to_f64();
                w.to_f64() * s * s
            })
            .sum(),
    };
    out.bound = out.grad_norm_sq * (out.eps_term + out.gamma.sqrt());
    Ok(out)
}

/// The simplified bound with the loss constant factored out: the bracket
/// E[ε²]^{1/2} + P[X = X′]^{1/2} and its product with ‖∂p/∂w_i‖².
#[derive(Clone, Debug, PartialEq)]
pub struct SimplifiedBound {
    pub grad_norm_sq: f64,
    pub eps_aggregate: f64,
    pub collision_root: f64,
    pub bracket: f64,
    /// Reported alongside; the hidden constant is not applied.
    pub lipschitz_c: f64,
    pub value: f64,
}

pub fn simplified_bound<S: Scalar>(
    model: &ModelSpec<S>,
    table: &EvalTable,
    mu_x: &FinitePmf<Point>,
    mu_y: &FinitePmf<u32>,
    space: EpsilonSpace,
    i: usize,
    lipschitz_c: f64,
) -> Result<SimplifiedBound> {
    check_shapes(model, table, mu_x)?;
    let w = input_weights::<S>(mu_x)?;
    let phi = model.feature(i)?;
    let g = S::sum(w.iter().zip(phi).map(|(a, b)| a.clone() * b.clone() * b.clone())).to_f64();
    let rep = aggregate_epsilon_table(table, mu_x, mu_y, space, AggregateOptions { pair_cap: u64::MAX, ..Default::default() })?;
    let coll = collision_probability(mu_x).to_f64().sqrt();
    let bracket = rep.aggregate + coll;
    Ok(SimplifiedBound { grad_norm_sq: g, eps_aggregate: rep.aggregate, collision_root: coll, bracket, lipschitz_c, value: g * bracket })
}

/// Bound for uniform secrets on the restricted support:
/// g · root · (√((q+1)(q−2)) + 1) · (a^n − 1)^{−1/2}.
pub fn lwe_uniform_bound(q: u32, n: usize, a: u32, grad_norm_sq: f64, d_second_moment_root: f64) -> Result<f64> {
    crate::modular::require_prime(q as u64)?;
    if q == 2 {
        return Err(Error::InvalidParameter("the factor (q − 2) degenerates at q = 2".into()));
    }
    if a < 2 || a > q || n == 0 {
        return Err(Error::InvalidParameter(format!("need 2 ≤ a ≤ q and n ≥ 1 (a = {a}, n = {n})")));
    }
    Ok(grad_norm_sq * d_second_moment_root * lwe_uniform_factor(q, n, a))
}

/// (√((q+1)(q−2)) + 1) · (a^n − 1)^{−1/2}.
pub fn lwe_uniform_factor(q: u32, n: usize, a: u32) -> f64 {
    let q = q as f64;
    let m = (a as f64).powi(n as i32) - 1.0;
    (((q + 1.0) * (q - 2.0)).sqrt() + 1.0) / m.sqrt()
}

/// f_h(x) = g(x, h(x)) for every hypothesis, row-major by hypothesis.
fn f_values<S: Scalar>(table: &EvalTable, g_table: &[Vec<S>]) -> Result<Vec<S>> {
    let (m, nh) = (table.n_inputs(), table.n_hyp());
    if g_table.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: g_table.len() });
    }
    if let Some(r) = g_table.iter().find(|r| r.len() != table.q as usize) {
        return Err(Error::DimensionMismatch { expected: table.q as usize, got: r.len() });
    }
    let mut out = Vec::with_capacity(m * nh);
    for h in 0..nh {
        for x in 0..m {
            out.push(g_table[x][table.row(x)[h] as usize].clone());
        }
    }
    Ok(out)
}

/// E_{(h₁,h₂)}[⟨f_{h₁}, f_{h₂}⟩²_{μ_X}].
fn gram_second_moment<S: Scalar>(f: &[S], w: &[S], nh: usize) -> S {
    let m = w.len();
    let inner = |a: usize, b: usize| S::sum((0..m).map(|x| w[x].clone() * f[a * m + x].clone() * f[b * m + x].clone()));
    let rows: Vec<S> = (0..nh)
        .into_par_iter()
        .map(|a| S::sum((0..nh).map(|b| {
            let v = inner(a, b);
            v.clone() * v
        })))
        .collect();
    let n = S::from_rational(&BigRational::from_integer(BigInt::from(nh)));
    S::sum(rows.into_iter()) / (n.clone() * n)
}

/// Both sides of the inversion identity.
#[derive(Clone, Debug)]
pub struct InversionCheck<S> {
    pub gram_side: S,
    pub kernel_side: S,
}

impl<S: Scalar> InversionCheck<S> {
    pub fn residual(&self) -> S {
        (self.gram_side.clone() - self.kernel_side.clone()).abs()
    }
}

/// E[⟨f_{h₁}, f_{h₂}⟩²] against ∫ F(x, x′)² dμ_X², F(x, x′) = E_h[f_h(x) f_h(x′)].
pub fn inversion_identity_check<S: Scalar>(
    table: &EvalTable,
    mu_x: &FinitePmf<Point>,
    g_table: &[Vec<S>],
) -> Result<InversionCheck<S>> {
    let w = input_weights::<S>(mu_x)?;
    let f = f_values(table, g_table)?;
    let (m, nh) = (table.n_inputs(), table.n_hyp());
    let gram_side = gram_second_moment(&f, &w, nh);
    let n = S::from_rational(&BigRational::from_integer(BigInt::from(nh)));
    let kernel_rows: Vec<S> = (0..m)
        .into_par_iter()
        .map(|x| {
            S::sum((0..m).map(|y| {
                let fxy = S::sum((0..nh).map(|h| f[h * m + x].clone() * f[h * m + y].clone())) / n.clone();
                w[x].clone() * w[y].clone() * fxy.clone() * fxy
            }))
        })
        .collect();
    Ok(InversionCheck { gram_side, kernel_side: S::sum(kernel_rows.into_iter()) })
}

/// Terms of the operator-norm inequality E_h[⟨f_h, g⟩²] ≤ ‖g‖² √E[⟨f_{h₁}, f_{h₂}⟩²].
#[derive(Clone, Debug)]
pub struct OperatorCheck<S> {
    pub lhs: S,
    pub probe_norm_sq: S,
    pub gram_second_moment: S,
}

impl<S: Scalar> OperatorCheck<S> {
    pub fn rhs(&self) -> f64 {
        self.probe_norm_sq.to_f64() * self.gram_second_moment.to_f64().sqrt()
    }

    /// Decided without square roots: lhs² ≤ ‖g‖⁴ · E[⟨f, f′⟩²].
    pub fn holds(&self) -> bool {
        let l2 = self.lhs.clone() * self.lhs.clone();
        let p2 = self.probe_norm_sq.clone() * self.probe_norm_sq.clone();
        if S::EXACT {
            l2 <= p2 * self.gram_second_moment.clone()
        } else {
            l2.to_f64() <= (p2 * self.gram_second_moment.clone()).to_f64() * (1.0 + 1e-12)
        }
    }

    pub fn is_equality(&self) -> bool {
        let l2 = self.lhs.clone() * self.lhs.clone();
        let p2 = self.probe_norm_sq.clone() * self.probe_norm_sq.clone();
        l2 == p2 * self.gram_second_moment.clone()
    }
}

pub fn operator_inequality_check<S: Scalar>(
    table: &EvalTable,
    mu_x: &FinitePmf<Point>,
    g_table: &[Vec<S>],
    probe: &[S],
) -> Result<OperatorCheck<S>> {
    let w = input_weights::<S>(mu_x)?;
    let m = table.n_inputs();
    if probe.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: probe.len() });
    }
    let f = f_values(table, g_table)?;
    let nh = table.n_hyp();
    let n = S::from_rational(&BigRational::from_integer(BigInt::from(nh)));
    let lhs = S::sum((0..nh).map(|h| {
        let v = S::sum((0..m).map(|x| w[x].clone() * f[h * m + x].clone() * probe[x].clone()));
        v.clone() * v
    })) / n;
    let probe_norm_sq = S::sum((0..m).map(|x| w[x].clone() * probe[x].clone() * probe[x].clone()));
    Ok(OperatorCheck { lhs, probe_norm_sq, gram_second_moment: gram_second_moment(&f, &w, nh) })
}

/// Subtract E_Y[g(x, Y)] from each row so the table is centered under μ_Y.
pub fn center_rows<S: Scalar>(g_table: &[Vec<S>], mu_y: &FinitePmf<u32>, q: u32) -> Result<Vec<Vec<S>>> {
    let p = output_weights::<S>(mu_y, q)?;
    Ok(g_table
        .iter()
        .map(|row| {
            let c = S::sum(row.iter().zip(&p).map(|(v, w)| v.clone() * w.clone()));
            row.iter().map(|v| v.clone() - c.clone()).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;
    use crate::hypothesis::{enumerate_secrets, Secret, SecretKind, DEFAULT_SECRET_CAP};
    use crate::hypothesis::HypothesisClass;
    use crate::measures::{restricted_uniform_inputs, uniform_outputs, RestrictedInputSpec};

    type Q = BigRational;

    fn r(n: i64, d: i64) -> Q {
        Q::new(n.into(), d.into())
    }

    /// p ≡ w₁, squared loss on raw labels, q = 2, X = {1}, secrets k ∈ {0, 1}.
    fn witness() -> (ModelSpec<Q>, EvalTable, FinitePmf<Point>) {
        let class = HypothesisClass::from_secrets(SecretKind::Uniform, 2, 1, vec![Secret(vec![0]), Secret(vec![1])]).unwrap();
        let mu_x = FinitePmf::uniform(vec![Point(vec![1])]).unwrap();
        let table = EvalTable::from_class(&class, mu_x.domain()).unwrap();
        let model = ModelSpec::new(vec![vec![r(1, 1)]], vec![r(0, 1)], Loss::Squared, Encoder::Raw).unwrap();
        (model, table, mu_x)
    }

    #[test]
    fn stats_example_q2() {
        let (model, _, _) = witness();
        let s = loss_deriv_stats(&model, &uniform_outputs(2), 2).unwrap();
        assert_eq!(*s.r(0, 0), r(1, 1));
        assert_eq!(*s.r(0, 1), r(-1, 1));
        assert_eq!(s.d[0], r(1, 1));
        assert_eq!(s.m[0], r(1, 1));
        assert_eq!(s.c[0], r(-1, 1));
    }

    #[test]
    fn y_independent_derivative_gives_zero_stats() {
        // raw encoder with q = 1 is not prime, so use a single-output μ_Y: every y has the same target weight
        let model = ModelSpec::new(vec![vec![r(1, 1)]], vec![r(3, 1)], Loss::Squared, Encoder::Raw).unwrap();
        let mu_y = FinitePmf::from_exact(vec![(0u32, r(1, 1))]).unwrap();
        let s = loss_deriv_stats(&model, &mu_y, 1).unwrap();
        assert!(s.d[0].is_zero() && s.m[0].is_zero());
    }

    #[test]
    fn gradient_example() {
        let (model, table, mu_x) = witness();
        assert_eq!(exact_gradient(&model, &table, 0, &mu_x, 0).unwrap(), r(0, 1));
        assert_eq!(exact_gradient(&model, &table, 1, &mu_x, 0).unwrap(), r(-2, 1));
        assert_eq!(exact_gradient_variance(&model, &table, &mu_x, 0).unwrap(), r(1, 1));
    }

    #[test]
    fn tight_witness_variance_equals_bound() {
        let (model, table, mu_x) = witness();
        let b = variance_bound(&model, &table, &mu_x, &uniform_outputs(2), EpsilonSpace::Tv, 0).unwrap();
        assert_eq!(b.grad_norm_sq, 1.0);
        assert_eq!(b.eps_term, 0.0);
        assert_eq!(b.gamma_exact(), Some(r(1, 1)));
        assert_eq!(b.bound_exact(), Some(r(1, 1)));
        let v = exact_gradient_variance(&model, &table, &mu_x, 0).unwrap();
        assert_eq!(b.certifies(&v), Certificate::Holds);
        assert_eq!(b.slack(&v), 0.0);
    }

    #[test]
    fn zero_feature_and_single_hypothesis() {
        let class = enumerate_secrets(SecretKind::Binary(1), 3, 2, DEFAULT_SECRET_CAP).unwrap();
        let mu_x = restricted_uniform_inputs(&RestrictedInputSpec::new(3, 2, 3).unwrap()).unwrap();
        let table = EvalTable::from_class(&class, mu_x.domain()).unwrap();
        let m = mu_x.len();
        let model = ModelSpec::new(vec![vec![r(0, 1); m], vec![r(1, 2); m]], vec![r(1, 3), r(1, 5)], Loss::Squared, Encoder::Scaled).unwrap();
        for h in 0..table.n_hyp() {
            assert!(exact_gradient(&model, &table, h, &mu_x, 0).unwrap().is_zero());
        }
        let one = HypothesisClass::from_secrets(SecretKind::Binary(0), 3, 2, vec![Secret(vec![0, 0])]).unwrap();
        let t1 = EvalTable::from_class(&one, mu_x.domain()).unwrap();
        assert!(exact_gradient_variance(&model, &t1, &mu_x, 1).unwrap().is_zero());
    }

    #[test]
    fn constant_derivative_gives_zero_bound() {
        // Every hypothesis outputs 0 and μ_Y is a point mass: r ≡ 0.
        let mu_x = FinitePmf::uniform(vec![Point(vec![1]), Point(vec![2])]).unwrap();
        let t = EvalTable::from_fn(1, 2, 3, |_, _| 0).unwrap();
        let mu_y = FinitePmf::from_exact(vec![(0u32, r(1, 1))]).unwrap();
        let model = ModelSpec::new(vec![vec![r(1, 1), r(2, 1)]], vec![r(1, 4)], Loss::Squared, Encoder::Raw).unwrap();
        let b = variance_bound(&model, &t, &mu_x, &mu_y, EpsilonSpace::Tv, 0).unwrap();
        assert_eq!(b.bound_exact(), Some(r(0, 1)));
        assert!(exact_gradient_variance(&model, &t, &mu_x, 0).unwrap().is_zero());
    }

    #[test]
    fn sigmoid_needs_float_mode() {
        let (m, table, mu_x) = witness();
        let model = ModelSpec::new(m.features, m.weights, Loss::Sigmoid, Encoder::Raw).unwrap();
        assert!(matches!(exact_gradient_variance(&model, &table, &mu_x, 0), Err(Error::NeedsFloat(_))));
        let fmodel = ModelSpec::new(vec![vec![1.0]], vec![0.0], Loss::Sigmoid, Encoder::Raw).unwrap();
        let s = loss_deriv_stats(&fmodel, &uniform_outputs(2), 2).unwrap();
        assert!(s.m[0] <= 0.25);
    }

    #[test]
    fn pairwise_independent_proxy_is_dominated_by_gamma() {
        let (q, n) = (5u32, 3usize);
        let class = enumerate_secrets(SecretKind::Uniform, q, n, DEFAULT_SECRET_CAP).unwrap();
        let mu_x = restricted_uniform_inputs(&RestrictedInputSpec::new(q, n, q).unwrap()).unwrap();
        let table = EvalTable::from_class(&class, mu_x.domain()).unwrap();
        let m = mu_x.len();
        let model = ModelSpec::new(vec![vec![r(1, 1); m]], vec![r(1, 2)], Loss::Squared, Encoder::Scaled).unwrap();
        let b = variance_bound(&model, &table, &mu_x, &uniform_outputs(q), EpsilonSpace::Pearson, 0).unwrap();
        // ε vanishes on the diagonal, so γ = P[X = X′]·E[D²] exactly.
        let stats = loss_deriv_stats(&model, &uniform_outputs(q), q).unwrap();
        let d2: Q = stats.d.iter().map(|d| d * d).sum::<Q>() / Q::from_integer((m as i64).into());
        assert_eq!(b.gamma_exact(), Some(d2 / Q::from_integer((m as i64).into())));
        let v = exact_gradient_variance(&model, &table, &mu_x, 0).unwrap();
        assert_eq!(b.certifies(&v), Certificate::Holds);
    }

    #[test]
    fn lwe_uniform_bound_examples() {
        let want = 2.0 * 3.0 * (18f64.sqrt() + 1.0) / 7f64.sqrt();
        assert!((lwe_uniform_bound(5, 3, 2, 2.0, 3.0).unwrap() - want).abs() < 1e-12);
        assert!(lwe_uniform_bound(2, 3, 2, 1.0, 1.0).is_err());
        assert!(lwe_uniform_bound(5, 3, 6, 1.0, 1.0).is_err());
        // doubling n multiplies the factor by about a^{−n/2}
        let (q, a, n) = (7u32, 5u32, 4usize);
        let ratio = lwe_uniform_factor(q, 2 * n, a) / lwe_uniform_factor(q, n, a);
        assert!((ratio / (a as f64).powf(-(n as f64) / 2.0) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn pearson_bound_is_below_lwe_uniform_bound() {
        let q = 5u32;
        for n in [1usize, 2, 3] {
            let class = enumerate_secrets(SecretKind::Uniform, q, n, DEFAULT_SECRET_CAP).unwrap();
            let mu_x = restricted_uniform_inputs(&RestrictedInputSpec::new(q, n, q).unwrap()).unwrap();
            let table = EvalTable::from_class(&class, mu_x.domain()).unwrap();
            let m = mu_x.len();
            let feats: Vec<Q> = (0..m).map(|x| r(x as i64 % 3 + 1, 2)).collect();
            let model = ModelSpec::new(vec![feats], vec![r(1, 3)], Loss::Squared, Encoder::Centered).unwrap();
            let b = variance_bound(&model, &table, &mu_x, &uniform_outputs(q), EpsilonSpace::Pearson, 0).unwrap();
            let stats = loss_deriv_stats(&model, &uniform_outputs(q), q).unwrap();
            let d2 = stats.d.iter().map(|d| d * d).sum::<Q>() / Q::from_integer((m as i64).into());
            let t3 = lwe_uniform_bound(q, n, q, b.grad_norm_sq, rational_to_f64(&d2).sqrt()).unwrap();
            assert!(b.bound <= t3 * (1.0 + 1e-12), "n = {n}: {} > {t3}", b.bound);
        }
    }

    #[test]
    fn simplified_bound_cross_check() {
        let q = 3u32;
        let class = enumerate_secrets(SecretKind::Uniform, q, 2, DEFAULT_SECRET_CAP).unwrap();
        let mu_x = restricted_uniform_inputs(&RestrictedInputSpec::new(q, 2, q).unwrap()).unwrap();
        let table = EvalTable::from_class(&class, mu_x.domain()).unwrap();
        let model = ModelSpec::new(vec![vec![r(1, 1); 8]], vec![r(0, 1)], Loss::Squared, Encoder::Scaled).unwrap();
        let s = simplified_bound(&model, &table, &mu_x, &uniform_outputs(q), EpsilonSpace::Pearson, 0, 2.0).unwrap();
        // aggregate ε² = 16/64 from the hand count, P[X = X′] = 1/8
        assert!((s.bracket - (0.25f64.sqrt() + (1.0f64 / 8.0).sqrt())).abs() < 1e-12);
        assert!((s.collision_root - 8f64.powf(-0.5)).abs() < 1e-15);
        assert_eq!(s.lipschitz_c, 2.0);
    }

    #[test]
    fn simplified_bound_pairwise_independent() {
        let q = 5u32;
        let pts: Vec<Point> = (0..q).map(|v| Point(vec![v])).collect();
        let t = EvalTable::from_fn(q, 5, 25, |i, h| ((h as u32 / q) + (h as u32 % q) * i as u32) % q).unwrap();
        let mu_x = FinitePmf::uniform(pts).unwrap();
        let model = ModelSpec::new(vec![vec![1.0; 5]], vec![0.1], Loss::Sigmoid, Encoder::Scaled).unwrap();
        let s = simplified_bound(&model, &t, &mu_x, &uniform_outputs(q), EpsilonSpace::Tv, 0, 0.25).unwrap();
        assert_eq!(s.eps_aggregate, 0.0);
        assert!((s.bracket - 5f64.powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn inversion_identity_exact() {
        let class = enumerate_secrets(SecretKind::Binary(1), 3, 2, DEFAULT_SECRET_CAP).unwrap();
        let mu_x = restricted_uniform_inputs(&RestrictedInputSpec::new(3, 2, 3).unwrap()).unwrap();
        let table = EvalTable::from_class(&class, mu_x.domain()).unwrap();
        let g: Vec<Vec<Q>> = (0..mu_x.len()).map(|x| (0..3).map(|y| r((x * 7 + y * 3) as i64 % 5 - 2, 3)).collect()).collect();
        let g = center_rows(&g, &uniform_outputs(3), 3).unwrap();
        let c = inversion_identity_check(&table, &mu_x, &g).unwrap();
        assert!(c.residual().is_zero());
        assert!(c.gram_side.is_positive());

        let zero = vec![vec![r(0, 1); 3]; mu_x.len()];
        let c = inversion_identity_check(&table, &mu_x, &zero).unwrap();
        assert!(c.gram_side.is_zero() && c.kernel_side.is_zero());
    }

    #[test]
    fn operator_inequality_equality_and_orthogonal_cases() {
        let one = HypothesisClass::from_secrets(SecretKind::Uniform, 3, 2, vec![Secret(vec![1, 2])]).unwrap();
        let mu_x = restricted_uniform_inputs(&RestrictedInputSpec::new(3, 2, 2).unwrap()).unwrap();
        let table = EvalTable::from_class(&one, mu_x.domain()).unwrap();
        let g: Vec<Vec<Q>> = vec![vec![r(1, 1), r(-1, 2), r(-1, 2)]; mu_x.len()];
        // probe = f_{h₀}
        let probe: Vec<Q> = (0..mu_x.len()).map(|x| g[x][table.row(x)[0] as usize].clone()).collect();
        let c = operator_inequality_check(&table, &mu_x, &g, &probe).unwrap();
        assert!(c.holds() && c.is_equality());

        // probe orthogonal to f_{h₀} under μ_X
        let f: Vec<Q> = probe.clone();
        let mut orth = vec![r(0, 1); mu_x.len()];
        orth[0] = f[1].clone();
        orth[1] = -f[0].clone();
        let c = operator_inequality_check(&table, &mu_x, &g, &orth).unwrap();
        assert!(c.lhs.is_zero() && c.holds());
    }

    #[test]
    fn rational_sqrt_bounds_bracket() {
        let two = r(2, 1);
        let (lo, hi) = two.sqrt_bounds();
        assert!(&lo * &lo <= two && &hi * &hi >= two && lo < hi);
        assert_eq!(r(9, 4).sqrt_bounds(), (r(3, 2), r(3, 2)));
    }

    #[test]
    fn neumaier_sum_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(<f64 as Scalar>::sum(v.into_iter()), 2.0);
    }
}
