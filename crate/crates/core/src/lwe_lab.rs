//! The binary/ternary secret experiment: sweep the aggregate ε over a grid of
//! (q, n, l, a, kind), then regress −log ε on log|H| with and without log a.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypothesis::{class_size, SecretKind};
use crate::independence::{write_epsilon_csv, EpsilonRecord, EpsilonSpace};
use crate::measures::{format_float, rational_to_f64, RestrictedInputSpec};
use crate::modular::require_prime;
use crate::symmetric::{aggregate_epsilon_restricted, multiset_count, Family, DEFAULT_MULTISET_CAP};

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::Binary => "binary",
            Family::Ternary => "ternary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Family::Uniform),
            "binary" => Ok(Family::Binary),
            "ternary" => Ok(Family::Ternary),
            other => Err(Error::Parse(format!("unknown secret kind `{other}`"))),
        }
    }
}

/// Cartesian sweep grid. Cells with l > n or a > q are not part of the grid;
/// for the uniform kind l is normalized to n.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub qs: Vec<u32>,
    pub ns: Vec<usize>,
    pub ls: Vec<usize>,
    pub as_: Vec<u32>,
    pub kinds: Vec<Family>,
    pub space: EpsilonSpace,
    /// Column-multiset budget per (q, n, a, kind) traversal.
    pub multiset_cap: u64,
    /// Drop cells over the budget instead of recording them as failures.
    pub skip_over_budget: bool,
}

impl SweepGrid {
    /// q ∈ {3,5,7}, n ∈ 4..=9, l ∈ 1..=min(4,n), a ∈ 2..=q, binary and ternary,
    /// keeping the cells whose traversal fits the default budget.
    pub fn full_default() -> Self {
        Self {
            qs: vec![3, 5, 7],
            ns: (4..=9).collect(),
            ls: (1..=4).collect(),
            as_: (2..=7).collect(),
            kinds: vec![Family::Binary, Family::Ternary],
            space: EpsilonSpace::Tv,
            multiset_cap: DEFAULT_MULTISET_CAP,
            skip_over_budget: true,
        }
    }

    /// Cells of the grid in output order (q, n, l, a, kind), deduplicated.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &q in &self.qs {
            for &n in &self.ns {
                for &l in &self.ls {
                    for &a in &self.as_ {
                        for &kind in &self.kinds {
                            if a > q || l > n {
                                continue;
                            }
                            let l = if kind == Family::Uniform { n } else { l };
                            out.push(Cell { q, n, l, a, kind });
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Cells whose traversal fits the multiset budget.
    pub fn feasible_cells(&self) -> Vec<Cell> {
        let cap = BigUint::from(self.multiset_cap);
        self.cells().into_iter().filter(|c| multiset_count(c.a, c.n) <= cap).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub q: u32,
    pub n: usize,
    pub l: usize,
    pub a: u32,
    pub kind: Family,
}

impl Cell {
    pub fn secret_kind(&self) -> SecretKind {
        self.kind.with_height(self.l)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    pub space: EpsilonSpace,
    pub class_size: u64,
    pub epsilon_sq: Option<BigRational>,
    pub epsilon: f64,
    pub collision_prob: f64,
    pub pairs_evaluated: u64,
}

impl SweepRow {
    pub fn log_h(&self) -> f64 {
        (self.class_size as f64).ln()
    }

    pub fn log_a(&self) -> f64 {
        (self.cell.a as f64).ln()
    }

    pub fn neg_log_eps(&self) -> f64 {
        -self.epsilon.ln()
    }

    pub fn record(&self) -> EpsilonRecord {
        EpsilonRecord {
            q: self.cell.q,
            n: self.cell.n,
            l: self.cell.l,
            a: self.cell.a,
            kind: self.cell.kind.name().into(),
            space: self.space,
            epsilon: self.epsilon,
            collision_prob: self.collision_prob,
            pairs_evaluated: self.pairs_evaluated,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
    /// Cells dropped because they exceed the budget.
    pub skipped: Vec<Cell>,
}

/// Runs the cells of `grid`; cells over budget are skipped or recorded as
/// failures per `skip_over_budget`. One traversal per (q, n, a, kind) serves
/// all heights l.
pub fn run_sweep(grid: &SweepGrid) -> SweepResult {
    let all = grid.cells();
    let cells = if grid.skip_over_budget { grid.feasible_cells() } else { all.clone() };
    let skipped: Vec<Cell> = all.into_iter().filter(|c| !cells.contains(c)).collect();
    let mut groups: BTreeMap<(u32, usize, u32, Family), Vec<usize>> = BTreeMap::new();
    for c in &cells {
        groups.entry((c.q, c.n, c.a, c.kind)).or_default().push(c.l);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let results: Vec<Vec<std::result::Result<SweepRow, SweepFailure>>> = groups
        .par_iter()
        .map(|((q, n, a, kind), ls)| {
            let fail = |l: usize, e: &Error| SweepFailure { cell: Cell { q: *q, n: *n, l, a: *a, kind: *kind }, error: e.to_string() };
            let spec = match RestrictedInputSpec::new(*q, *n, *a) {
                Ok(s) => s,
                Err(e) => return ls.iter().map(|&l| Err(fail(l, &e))).collect(),
            };
            match aggregate_epsilon_restricted(&spec, *kind, ls, grid.multiset_cap) {
                Ok(res) => res
                    .into_iter()
                    .map(|r| {
                        let sq = match grid.space {
                            EpsilonSpace::Tv => r.tv_sq,
                            EpsilonSpace::Pearson => r.pearson_sq,
                        };
                        Ok(SweepRow {
                            cell: Cell { q: *q, n: *n, l: r.l, a: *a, kind: *kind },
                            space: grid.space,
                            class_size: r.class_size,
                            epsilon: rational_to_f64(&sq).sqrt(),
                            epsilon_sq: Some(sq),
                            collision_prob: rational_to_f64(&r.collision_prob),
                            pairs_evaluated: r.pairs_evaluated,
                        })
                    })
                    .collect(),
                Err(e) => ls.iter().map(|&l| Err(fail(l, &e))).collect(),
            }
        })
        .collect();
    let mut out = SweepResult { skipped, ..Default::default() };
    for r in results.into_iter().flatten() {
        match r {
            Ok(row) => out.rows.push(row),
            Err(f) => out.failures.push(f),
        }
    }
    out.rows.sort_by_key(|r| r.cell);
    out.failures.sort_by_key(|f| f.cell);
    out
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    write_epsilon_csv(out, &rows.iter().map(SweepRow::record).collect::<Vec<_>>())
}

/// Reads a sweep CSV back; |H| is recomputed from (kind, q, n, l).
pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("sweep CSV lacks column `{name}`")))
    };
    let idx: Vec<usize> =
        ["q", "n", "l", "a", "kind", "space", "epsilon", "collision_prob", "pairs_evaluated"].iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let bad = |what: &str| Error::Parse(format!("row {}: bad {what}", line + 2));
        let q: u32 = field(0).parse().map_err(|_| bad("q"))?;
        let n: usize = field(1).parse().map_err(|_| bad("n"))?;
        let l: usize = field(2).parse().map_err(|_| bad("l"))?;
        let a: u32 = field(3).parse().map_err(|_| bad("a"))?;
        let kind = Family::parse(field(4))?;
        let space: EpsilonSpace = field(5).parse()?;
        let epsilon: f64 = field(6).parse().map_err(|_| bad("epsilon"))?;
        let collision_prob: f64 = field(7).parse().map_err(|_| bad("collision_prob"))?;
        let pairs_evaluated: u64 = field(8).parse().map_err(|_| bad("pairs_evaluated"))?;
        let cell = Cell { q, n, l, a, kind };
        let size = class_size(cell.secret_kind(), q, n)?.to_u64().ok_or(Error::Overflow("class size"))?;
        rows.push(SweepRow { cell, space, class_size: size, epsilon_sq: None, epsilon, collision_prob, pairs_evaluated });
    }
    Ok(rows)
}

/// Scatter data: `log_H,neg_log_eps,a`, zero-ε rows omitted.
pub fn write_scatter_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(["log_H", "neg_log_eps", "a"])?;
    for r in rows.iter().filter(|r| r.epsilon > 0.0) {
        wr.write_record([format_float(r.log_h()), format_float(r.neg_log_eps()), r.cell.a.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regressor {
    LogH,
    LogA,
    LogN,
    LogL,
    NLogA,
}

impl Regressor {
    pub fn name(&self) -> &'static str {
        match self {
            Regressor::LogH => "log_H",
            Regressor::LogA => "log_a",
            Regressor::LogN => "log_n",
            Regressor::LogL => "log_l",
            Regressor::NLogA => "n_log_a",
        }
    }

    fn value(&self, r: &SweepRow) -> f64 {
        match self {
            Regressor::LogH => r.log_h(),
            Regressor::LogA => r.log_a(),
            Regressor::LogN => (r.cell.n as f64).ln(),
            Regressor::LogL => (r.cell.l as f64).ln(),
            Regressor::NLogA => r.cell.n as f64 * r.log_a(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    /// Intercept first.
    pub beta: Vec<f64>,
    pub t: Vec<f64>,
    pub sigma2: f64,
    pub r2: f64,
    pub nrows: usize,
}

/// Least squares with an intercept column prepended to `columns`.
pub fn ols(y: &[f64], columns: &[Vec<f64>]) -> Result<OlsFit> {
    let n = y.len();
    let p = columns.len() + 1;
    if n < p + 1 {
        return Err(Error::Degenerate(format!("{n} rows cannot fit {p} coefficients with residual degrees of freedom")));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
    let yv = DVector::from_column_slice(y);

    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let tol = smax * 1e-10 * n.max(p) as f64;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < p {
        return Err(Error::SingularDesign { rank, cols: p });
    }

    let xtx = x.transpose() * &x;
    let lu = xtx.full_piv_lu();
    let beta = lu.solve(&(x.transpose() * &yv)).ok_or(Error::SingularDesign { rank, cols: p })?;
    let inv = lu.try_inverse().ok_or(Error::SingularDesign { rank, cols: p })?;

    let resid = &yv - &x * &beta;
    let ssr = resid.norm_squared();
    let mean = yv.mean();
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst == 0.0 {
        return Err(Error::Degenerate("response is constant; R² undefined".into()));
    }
    let sigma2 = ssr / (n - p) as f64;
    let t = (0..p).map(|j| beta[j] / (sigma2 * inv[(j, j)]).sqrt()).collect();
    Ok(OlsFit { beta: beta.iter().copied().collect(), t, sigma2, r2: 1.0 - ssr / sst, nrows: n })
}

/// OLS of −log ε on the chosen regressors over rows with ε > 0.
pub fn ols_fit(rows: &[SweepRow], regressors: &[Regressor]) -> Result<OlsFit> {
    let used: Vec<&SweepRow> = rows.iter().filter(|r| r.epsilon > 0.0).collect();
    let y: Vec<f64> = used.iter().map(|r| r.neg_log_eps()).collect();
    let cols: Vec<Vec<f64>> = regressors.iter().map(|g| used.iter().map(|r| g.value(r)).collect()).collect();
    ols(&y, &cols)
}

/// The nested pair of fits on identical rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionComparison {
    pub without_log_a: OlsFit,
    pub with_log_a: OlsFit,
    pub excluded_zero_eps: usize,
}

pub fn regression_compare(rows: &[SweepRow]) -> Result<RegressionComparison> {
    let mut a_values: Vec<u32> = rows.iter().filter(|r| r.epsilon > 0.0).map(|r| r.cell.a).collect();
    a_values.sort_unstable();
    a_values.dedup();
    if a_values.len() < 2 {
        return Err(Error::Degenerate("rows span a single value of a; log a is collinear with the intercept".into()));
    }
    let without = ols_fit(rows, &[Regressor::LogH])?;
    let with = ols_fit(rows, &[Regressor::LogH, Regressor::LogA])?;
    if with.r2 + 1e-9 < without.r2 {
        return Err(Error::Degenerate(format!("nested fit lost fit: {} < {}", with.r2, without.r2)));
    }
    Ok(RegressionComparison { without_log_a: without, with_log_a: with, excluded_zero_eps: rows.iter().filter(|r| r.epsilon <= 0.0).count() })
}

/// One comparison per (q, kind) group, in group order.
pub fn regress_by_group(rows: &[SweepRow]) -> Vec<((u32, Family), Result<RegressionComparison>)> {
    let mut groups: BTreeMap<(u32, Family), Vec<SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.cell.q, r.cell.kind)).or_default().push(r.clone());
    }
    groups.into_iter().map(|(k, v)| (k, regression_compare(&v))).collect()
}

pub fn group_label(q: u32, kind: Family) -> String {
    format!("{}-q{q}", kind.name())
}

/// `model,beta0,beta1,beta2,t0,t1,t2,R2,nrows`; the model column names the
/// group and whether log a is included.
pub fn write_fit_csv<W: Write>(out: W, fits: &[(String, RegressionComparison)]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(["model", "beta0", "beta1", "beta2", "t0", "t1", "t2", "R2", "nrows"])?;
    for (label, cmp) in fits {
        for (suffix, fit) in [("without_log_a", &cmp.without_log_a), ("with_log_a", &cmp.with_log_a)] {
            let cell = |v: &[f64], i: usize| v.get(i).map(|x| format_float(*x)).unwrap_or_default();
            wr.write_record([
                format!("{label}:{suffix}"),
                cell(&fit.beta, 0),
                cell(&fit.beta, 1),
                cell(&fit.beta, 2),
                cell(&fit.t, 0),
                cell(&fit.t, 1),
                cell(&fit.t, 2),
                format_float(fit.r2),
                fit.nrows.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Coefficients and t-statistics of larger regressor sets, long format
/// `model,term,beta,t,R2,nrows`. Statistics only; no selection is made.
pub fn write_feature_stats_csv<W: Write>(out: W, rows: &[SweepRow], sets: &[(&str, Vec<Regressor>)]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(["model", "term", "beta", "t", "R2", "nrows"])?;
    let mut groups: BTreeMap<(u32, Family), Vec<SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.cell.q, r.cell.kind)).or_default().push(r.clone());
    }
    for ((q, kind), g) in groups {
        for (name, regs) in sets {
            let Ok(fit) = ols_fit(&g, regs) else { continue };
            let label = format!("{}:{name}", group_label(q, kind));
            let terms = std::iter::once("intercept").chain(regs.iter().map(Regressor::name));
            for (j, term) in terms.enumerate() {
                wr.write_record([
                    label.clone(),
                    term.to_string(),
                    format_float(fit.beta[j]),
                    format_float(fit.t[j]),
                    format_float(fit.r2),
                    fit.nrows.to_string(),
                ])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Validates that every q in a grid is prime before any work starts.
pub fn validate_grid(grid: &SweepGrid) -> Result<()> {
    for &q in &grid.qs {
        require_prime(q as u64)?;
    }
    if grid.cells().is_empty() {
        return Err(Error::Degenerate("the grid has no cells".into()));
    }
    Ok(())
}
