//! Pairwise-independence distance ε_F(x, x′) between the law of (h(x), h(x′))
//! under h ∼ χ and the product μ_Y², in the L∞ (twice total variation) and
//! L₂ (Pearson χ²) geometries.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypothesis::{dot_mod, HypothesisClass};
use crate::measures::{collision_probability, format_float, FinitePmf, Point, Prob};
use crate::modular::rank2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EpsilonSpace {
    Tv,
    Pearson,
}

impl EpsilonSpace {
    pub fn name(&self) -> &'static str {
        match self {
            EpsilonSpace::Tv => "tv",
            EpsilonSpace::Pearson => "pearson",
        }
    }
}

impl fmt::Display for EpsilonSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EpsilonSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tv" => Ok(EpsilonSpace::Tv),
            "pearson" => Ok(EpsilonSpace::Pearson),
            other => Err(Error::Parse(format!("unknown space `{other}` (tv|pearson)"))),
        }
    }
}

/// Outputs h(x) for every input in a finite support and every hypothesis,
/// stored row-major by input. This is the only view of a class the metric needs,
/// so arbitrary (non-LWE) families plug in through [`EvalTable::from_fn`].
#[derive(Clone, Debug)]
pub struct EvalTable {
    pub q: u32,
    n_inputs: usize,
    n_hyp: usize,
    values: Vec<u32>,
}

impl EvalTable {
    pub fn from_class(class: &HypothesisClass, inputs: &[Point]) -> Result<Self> {
        for x in inputs {
            if x.0.len() != class.n {
                return Err(Error::DimensionMismatch { expected: class.n, got: x.0.len() });
            }
        }
        let mut values = Vec::with_capacity(inputs.len() * class.len());
        for x in inputs {
            values.extend(class.secrets().iter().map(|s| dot_mod(&s.0, &x.0, class.q)));
        }
        Ok(Self { q: class.q, n_inputs: inputs.len(), n_hyp: class.len(), values })
    }

    /// `f(input_index, hypothesis_index)` must return a value in [0, q).
    pub fn from_fn(q: u32, n_inputs: usize, n_hyp: usize, f: impl Fn(usize, usize) -> u32) -> Result<Self> {
        if n_hyp == 0 {
            return Err(Error::Degenerate("empty hypothesis class".into()));
        }
        let mut values = Vec::with_capacity(n_inputs * n_hyp);
        for i in 0..n_inputs {
            for h in 0..n_hyp {
                let v = f(i, h);
                if v >= q {
                    return Err(Error::InvalidParameter(format!("hypothesis output {v} outside [0, {q})")));
                }
                values.push(v);
            }
        }
        Ok(Self { q, n_inputs, n_hyp, values })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_hyp(&self) -> usize {
        self.n_hyp
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.values[i * self.n_hyp..(i + 1) * self.n_hyp]
    }

    pub fn joint(&self, i: usize, j: usize) -> JointOutputPmf {
        JointOutputPmf::from_rows(self.q, self.row(i), self.row(j))
    }

    pub fn marginal(&self, i: usize) -> Vec<u64> {
        let mut c = vec![0u64; self.q as usize];
        for &v in self.row(i) {
            c[v as usize] += 1;
        }
        c
    }
}

/// Law of (h(x), h(x′)) as integer counts over the hypothesis total.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointOutputPmf {
    pub q: u32,
    counts: Vec<u64>,
    total: u64,
}

impl JointOutputPmf {
    fn from_rows(q: u32, hx: &[u32], hy: &[u32]) -> Self {
        let qs = q as usize;
        let mut counts = vec![0u64; qs * qs];
        for (&a, &b) in hx.iter().zip(hy) {
            counts[a as usize * qs + b as usize] += 1;
        }
        Self { q, counts, total: hx.len() as u64 }
    }

    pub fn count(&self, y: u32, y2: u32) -> u64 {
        self.counts[y as usize * self.q as usize + y2 as usize]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn prob(&self, y: u32, y2: u32) -> BigRational {
        BigRational::new(BigInt::from(self.count(y, y2)), BigInt::from(self.total))
    }

    pub fn row_marginal(&self) -> Vec<u64> {
        self.counts.chunks(self.q as usize).map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<u64> {
        let qs = self.q as usize;
        (0..qs).map(|c| (0..qs).map(|r| self.counts[r * qs + c]).sum()).collect()
    }

    /// True when the joint equals the product of its own marginals.
    pub fn is_product(&self) -> bool {
        let (r, c) = (self.row_marginal(), self.col_marginal());
        let qs = self.q as usize;
        (0..qs).all(|a| (0..qs).all(|b| self.counts[a * qs + b] as u128 * self.total as u128 == r[a] as u128 * c[b] as u128))
    }
}

pub fn joint_output_pmf(class: &HypothesisClass, x: &[u32], x2: &[u32]) -> Result<JointOutputPmf> {
    for v in [x, x2] {
        if v.len() != class.n {
            return Err(Error::DimensionMismatch { expected: class.n, got: v.len() });
        }
    }
    let hx: Vec<u32> = class.secrets().iter().map(|s| dot_mod(&s.0, x, class.q)).collect();
    let hy: Vec<u32> = class.secrets().iter().map(|s| dot_mod(&s.0, x2, class.q)).collect();
    Ok(JointOutputPmf::from_rows(class.q, &hx, &hy))
}

/// ε for one pair: exact squared value when μ_Y is exact, plus the float root.
#[derive(Clone, Debug, PartialEq)]
pub struct Eps {
    pub sq: Prob,
    pub value: f64,
    /// ε itself when it is rational (always for tv in exact mode).
    pub exact: Option<BigRational>,
}

impl Eps {
    fn from_value(v: Prob) -> Self {
        let value = v.to_f64();
        match v {
            Prob::Exact(r) => Eps { sq: Prob::Exact(&r * &r), value, exact: Some(r) },
            Prob::Float(f) => Eps { sq: Prob::Float(f * f), value, exact: None },
        }
    }

    fn from_sq(sq: Prob) -> Self {
        let (value, exact) = sq.sqrt();
        Eps { sq, value, exact }
    }

    pub fn zero() -> Self {
        Eps::from_value(Prob::zero_exact())
    }
}

/// Output probabilities p_y over Z_q, taken from μ_Y.
enum OutLaw {
    Exact(Vec<BigRational>),
    Float(Vec<f64>),
}

fn out_law(mu_y: &FinitePmf<u32>, q: u32) -> Result<OutLaw> {
    if let Some(&bad) = mu_y.domain().iter().find(|&&y| y >= q) {
        return Err(Error::InvalidParameter(format!("output {bad} outside Z_{q}")));
    }
    let qs = q as usize;
    Ok(match mu_y.exact_weights() {
        Some(w) => {
            let mut p = vec![BigRational::zero(); qs];
            for (y, wy) in mu_y.domain().iter().zip(w) {
                p[*y as usize] = wy.clone();
            }
            OutLaw::Exact(p)
        }
        None => {
            let mut p = vec![0.0; qs];
            for (y, wy) in mu_y.domain().iter().zip(mu_y.float_weights()) {
                p[*y as usize] = wy;
            }
            OutLaw::Float(p)
        }
    })
}

fn require_positive(law: &OutLaw) -> Result<()> {
    let zero = match law {
        OutLaw::Exact(p) => p.iter().position(|v| !v.is_positive()),
        OutLaw::Float(p) => p.iter().position(|v| *v <= 0.0),
    };
    match zero {
        Some(y) => Err(Error::ZeroProbability(y as u32)),
        None => Ok(()),
    }
}

fn ratio(c: u64, t: u64) -> BigRational {
    BigRational::new(BigInt::from(c), BigInt::from(t))
}

fn eps_tv_law(joint: &JointOutputPmf, law: &OutLaw) -> Eps {
    let qs = joint.q as usize;
    let t = joint.total;
    match law {
        OutLaw::Exact(p) => {
            let mut acc = BigRational::zero();
            for a in 0..qs {
                for b in 0..qs {
                    acc += (ratio(joint.counts[a * qs + b], t) - &p[a] * &p[b]).abs();
                }
            }
            Eps::from_value(Prob::Exact(acc))
        }
        OutLaw::Float(p) => {
            let mut acc = 0.0;
            for a in 0..qs {
                for b in 0..qs {
                    acc += (joint.counts[a * qs + b] as f64 / t as f64 - p[a] * p[b]).abs();
                }
            }
            Eps::from_value(Prob::Float(acc))
        }
    }
}

fn eps_pearson_law(joint: &JointOutputPmf, law: &OutLaw) -> Result<Eps> {
    require_positive(law)?;
    let qs = joint.q as usize;
    let t = joint.total;
    Ok(match law {
        OutLaw::Exact(p) => {
            let mut acc = BigRational::zero();
            for a in 0..qs {
                for b in 0..qs {
                    let pp = &p[a] * &p[b];
                    let d = ratio(joint.counts[a * qs + b], t) - &pp;
                    acc += &d * &d / pp;
                }
            }
            Eps::from_sq(Prob::Exact(acc))
        }
        OutLaw::Float(p) => {
            let mut acc = 0.0;
            for a in 0..qs {
                for b in 0..qs {
                    let pp = p[a] * p[b];
                    let d = joint.counts[a * qs + b] as f64 / t as f64 - pp;
                    acc += d * d / pp;
                }
            }
            Eps::from_sq(Prob::Float(acc))
        }
    })
}

fn eps_diag_law(marginal: &[u64], law: &OutLaw, space: EpsilonSpace) -> Result<Eps> {
    let t: u64 = marginal.iter().sum();
    if space == EpsilonSpace::Pearson {
        require_positive(law)?;
    }
    Ok(match (law, space) {
        (OutLaw::Exact(p), EpsilonSpace::Tv) => Eps::from_value(Prob::Exact(
            marginal.iter().zip(p).map(|(&c, py)| (ratio(c, t) - py).abs()).sum(),
        )),
        (OutLaw::Exact(p), EpsilonSpace::Pearson) => Eps::from_sq(Prob::Exact(
            marginal
                .iter()
                .zip(p)
                .map(|(&c, py)| {
                    let d = ratio(c, t) - py;
                    &d * &d / py
                })
                .sum(),
        )),
        (OutLaw::Float(p), EpsilonSpace::Tv) => {
            Eps::from_value(Prob::Float(marginal.iter().zip(p).map(|(&c, py)| (c as f64 / t as f64 - py).abs()).sum()))
        }
        (OutLaw::Float(p), EpsilonSpace::Pearson) => Eps::from_sq(Prob::Float(
            marginal
                .iter()
                .zip(p)
                .map(|(&c, py)| {
                    let d = c as f64 / t as f64 - py;
                    d * d / py
                })
                .sum(),
        )),
    })
}

/// Σ |P(y,y′) − p_y p_y′|, twice the total variation distance.
pub fn epsilon_tv(joint: &JointOutputPmf, mu_y: &FinitePmf<u32>) -> Result<Eps> {
    Ok(eps_tv_law(joint, &out_law(mu_y, joint.q)?))
}

/// Square root of the Pearson χ² divergence from the product law.
pub fn epsilon_pearson(joint: &JointOutputPmf, mu_y: &FinitePmf<u32>) -> Result<Eps> {
    eps_pearson_law(joint, &out_law(mu_y, joint.q)?)
}

pub fn epsilon_pair(joint: &JointOutputPmf, mu_y: &FinitePmf<u32>, space: EpsilonSpace) -> Result<Eps> {
    match space {
        EpsilonSpace::Tv => epsilon_tv(joint, mu_y),
        EpsilonSpace::Pearson => epsilon_pearson(joint, mu_y),
    }
}

/// Diagonal value ε(x, x), which compares the marginal of h(x) with μ_Y.
pub fn epsilon_diag(class: &HypothesisClass, x: &[u32], mu_y: &FinitePmf<u32>, space: EpsilonSpace) -> Result<Eps> {
    if x.len() != class.n {
        return Err(Error::DimensionMismatch { expected: class.n, got: x.len() });
    }
    let mut m = vec![0u64; class.q as usize];
    for s in class.secrets() {
        m[dot_mod(&s.0, x, class.q) as usize] += 1;
    }
    eps_diag_law(&m, &out_law(mu_y, class.q)?, space)
}

/// Pearson ε for uniform secrets over all of Z_q^n, from the rank of [x, x′]:
/// zero unless x′ is a multiple of x other than x itself, in which case ε² = q − 1.
pub fn closed_form_epsilon_uniform_lwe(q: u32, x: &[u32], x2: &[u32]) -> Result<Eps> {
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: x2.len() });
    }
    if x.iter().all(|&v| v % q == 0) || x2.iter().all(|&v| v % q == 0) {
        return Err(Error::InvalidParameter("closed form needs nonzero inputs".into()));
    }
    let same = x.iter().zip(x2).all(|(a, b)| a % q == b % q);
    if same || rank2(x, x2, q) == 2 {
        return Ok(Eps::zero());
    }
    Ok(Eps::from_sq(Prob::Exact(BigRational::from_integer(BigInt::from(q - 1)))))
}

#[derive(Clone, Copy, Debug)]
pub struct AggregateOptions {
    /// Evaluate only x ≤ x′ and reuse ε(x, x′) = ε(x′, x).
    pub symmetric: bool,
    /// Keep the full per-pair table in the report.
    pub keep_table: bool,
    pub pair_cap: u64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self { symmetric: true, keep_table: false, pair_cap: 100_000_000 }
    }
}

#[derive(Clone, Debug)]
pub struct EpsilonReport {
    pub space: EpsilonSpace,
    /// E[ε(X, X′)²] under μ_X², diagonal pairs included.
    pub aggregate_sq: Prob,
    pub aggregate: f64,
    /// P[X = X′] under μ_X².
    pub diag_mass: Prob,
    pub pairs_evaluated: u64,
    /// Dense m×m table of ε in μ_X domain order, when requested.
    pub table: Option<Vec<Eps>>,
    pub support: usize,
}

impl EpsilonReport {
    pub fn pair(&self, i: usize, j: usize) -> Option<&Eps> {
        self.table.as_ref().map(|t| &t[i * self.support + j])
    }
}

/// Aggregate E_{μ_X²}[ε(X, X′)²]^{1/2}, exact when μ_X and μ_Y are.
pub fn aggregate_epsilon(
    class: &HypothesisClass,
    mu_x: &FinitePmf<Point>,
    mu_y: &FinitePmf<u32>,
    space: EpsilonSpace,
    opts: AggregateOptions,
) -> Result<EpsilonReport> {
    let table = EvalTable::from_class(class, mu_x.domain())?;
    aggregate_epsilon_table(&table, mu_x, mu_y, space, opts)
}

pub fn aggregate_epsilon_table(
    table: &EvalTable,
    mu_x: &FinitePmf<Point>,
    mu_y: &FinitePmf<u32>,
    space: EpsilonSpace,
    opts: AggregateOptions,
) -> Result<EpsilonReport> {
    let m = mu_x.len();
    if table.n_inputs() != m {
        return Err(Error::DimensionMismatch { expected: m, got: table.n_inputs() });
    }
    let pairs = (m as u64).checked_mul(m as u64).ok_or(Error::Overflow("pair count"))?;
    if pairs > opts.pair_cap {
        return Err(Error::CapExceeded { what: "input pair", count: pairs.to_string(), cap: opts.pair_cap });
    }
    let law = out_law(mu_y, table.q)?;
    if space == EpsilonSpace::Pearson {
        require_positive(&law)?;
    }

    // One row of ε values per input, evaluated in parallel, kept in order.
    let rows: Vec<Result<Vec<Eps>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let start = if opts.symmetric { i } else { 0 };
            (start..m)
                .map(|j| {
                    if i == j {
                        eps_diag_law(&table.marginal(i), &law, space)
                    } else {
                        let joint = table.joint(i, j);
                        match space {
                            EpsilonSpace::Tv => Ok(eps_tv_law(&joint, &law)),
                            EpsilonSpace::Pearson => eps_pearson_law(&joint, &law),
                        }
                    }
                })
                .collect()
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let weights: Vec<Prob> = (0..m).map(|i| mu_x.weight(i)).collect();
    let mut total = Prob::zero_exact();
    let mut dense = opts.keep_table.then(|| vec![Eps::zero(); m * m]);
    for (i, row) in rows.iter().enumerate() {
        let start = if opts.symmetric { i } else { 0 };
        for (off, e) in row.iter().enumerate() {
            let j = start + off;
            let mut w = weights[i].mul(&weights[j]);
            if opts.symmetric && i != j {
                w = w.add(&w);
            }
            total = total.add(&w.mul(&e.sq));
            if let Some(d) = dense.as_mut() {
                d[i * m + j] = e.clone();
                if opts.symmetric {
                    d[j * m + i] = e.clone();
                }
            }
        }
    }
    let (aggregate, _) = total.sqrt();
    Ok(EpsilonReport {
        space,
        aggregate_sq: total,
        aggregate,
        diag_mass: collision_probability(mu_x),
        pairs_evaluated: pairs,
        table: dense,
        support: m,
    })
}

/// One line of the epsilon CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonRecord {
    pub q: u32,
    pub n: usize,
    pub l: usize,
    pub a: u32,
    pub kind: String,
    pub space: EpsilonSpace,
    pub epsilon: f64,
    pub collision_prob: f64,
    pub pairs_evaluated: u64,
}

pub const EPSILON_CSV_HEADER: [&str; 9] = ["q", "n", "l", "a", "kind", "space", "epsilon", "collision_prob", "pairs_evaluated"];

pub fn write_epsilon_csv<W: Write>(out: W, rows: &[EpsilonRecord]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(EPSILON_CSV_HEADER)?;
    for r in rows {
        wr.write_record([
            r.q.to_string(),
            r.n.to_string(),
            r.l.to_string(),
            r.a.to_string(),
            r.kind.clone(),
            r.space.to_string(),
            format_float(r.epsilon),
            format_float(r.collision_prob),
            r.pairs_evaluated.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
