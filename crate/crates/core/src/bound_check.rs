//! Randomized certification of the variance bound on small exhaustive instances,
//! plus the inversion identity and operator inequality on random probes.

use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradient::{
    center_rows, exact_gradient_variance, inversion_identity_check, operator_inequality_check, variance_bound, Certificate,
    Encoder, Loss, ModelSpec, Scalar,
};
use crate::hypothesis::{enumerate_secrets, HypothesisClass, Secret, SecretKind, DEFAULT_SECRET_CAP};
use crate::independence::{EpsilonSpace, EvalTable};
use crate::measures::{format_float, restricted_uniform_inputs, uniform_outputs, FinitePmf, Point, RestrictedInputSpec};

/// Independent generator for stream `id` under a run seed.
pub fn stream_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Parameters of one certification instance.
#[derive(Clone, Debug)]
pub struct InstanceSpec {
    pub id: String,
    pub q: u32,
    pub n: usize,
    pub a: u32,
    pub kind: SecretKind,
    pub loss: Loss,
    pub space: EpsilonSpace,
    pub encoder: Encoder,
    /// `features[j][x]` and weights as small rationals.
    pub features: Vec<Vec<BigRational>>,
    pub weights: Vec<BigRational>,
    pub coord: usize,
    /// Explicit class and inputs, used by the witness; otherwise enumerated.
    pub explicit: Option<(HypothesisClass, FinitePmf<Point>)>,
}

fn small_rational(rng: &mut ChaCha8Rng, span: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(rng.random_range(-span..=span)), BigInt::from(den))
}

/// Instance `id` of a seeded run. Kind, loss and space cycle with the id so every
/// combination is covered; q, n, a, l and the model are drawn at random.
pub fn random_instance(seed: u64, id: u64) -> InstanceSpec {
    let mut rng = stream_rng(seed, id);
    let q = [2u32, 3, 5][rng.random_range(0..3)];
    let n = rng.random_range(1..=3usize);
    let a = rng.random_range(2..=q);
    let l = rng.random_range(0..=n);
    let kind = match id % 3 {
        0 => SecretKind::Uniform,
        1 => SecretKind::Binary(l),
        _ => SecretKind::Ternary(l),
    };
    let loss = if (id / 3).is_multiple_of(2) { Loss::Squared } else { Loss::Sigmoid };
    let space = if q == 2 || (id / 6).is_multiple_of(2) { EpsilonSpace::Tv } else { EpsilonSpace::Pearson };
    let encoder = [Encoder::Scaled, Encoder::Raw, Encoder::Centered][rng.random_range(0..3)];
    let m = (a as usize).pow(n as u32) - 1;
    let n_par = rng.random_range(1..=3usize);
    let features = (0..n_par).map(|_| (0..m).map(|_| small_rational(&mut rng, 8, 4)).collect()).collect();
    let weights = (0..n_par).map(|_| small_rational(&mut rng, 8, 4)).collect();
    let coord = rng.random_range(0..n_par);
    InstanceSpec { id: id.to_string(), q, n, a, kind, loss, space, encoder, features, weights, coord, explicit: None }
}

/// The two-hypothesis q = 2 instance on which variance and bound coincide.
pub fn tight_witness() -> InstanceSpec {
    let class = HypothesisClass::from_secrets(SecretKind::Uniform, 2, 1, vec![Secret(vec![0]), Secret(vec![1])])
        .expect("valid witness class");
    let mu_x = FinitePmf::uniform(vec![Point(vec![1])]).expect("one point");
    InstanceSpec {
        id: "witness".into(),
        q: 2,
        n: 1,
        a: 2,
        kind: SecretKind::Uniform,
        loss: Loss::Squared,
        space: EpsilonSpace::Tv,
        encoder: Encoder::Raw,
        features: vec![vec![BigRational::from_integer(1.into())]],
        weights: vec![BigRational::zero()],
        coord: 0,
        explicit: Some((class, mu_x)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub instance_id: String,
    pub q: u32,
    pub n: usize,
    pub a: u32,
    pub kind: String,
    pub loss: Loss,
    pub space: EpsilonSpace,
    pub variance: f64,
    pub bound: f64,
    pub eps_term: f64,
    pub gamma: f64,
    pub slack: f64,
    pub certificate: Certificate,
}

pub const BOUND_CSV_HEADER: [&str; 12] =
    ["instance_id", "q", "n", "a", "kind", "loss", "space", "variance", "bound", "eps_term", "gamma", "slack"];

fn kind_label(kind: SecretKind) -> String {
    match kind {
        SecretKind::Uniform => "uniform".into(),
        SecretKind::Binary(l) => format!("binary-l{l}"),
        SecretKind::Ternary(l) => format!("ternary-l{l}"),
    }
}

fn evaluate<S: Scalar>(
    spec: &InstanceSpec,
    table: &EvalTable,
    mu_x: &FinitePmf<Point>,
    conv: impl Fn(&BigRational) -> S,
) -> Result<BoundRow> {
    let features = spec.features.iter().map(|f| f.iter().map(&conv).collect()).collect();
    let weights = spec.weights.iter().map(&conv).collect();
    let model = ModelSpec::new(features, weights, spec.loss, spec.encoder)?;
    let mu_y = uniform_outputs(spec.q);
    let variance = exact_gradient_variance(&model, table, mu_x, spec.coord)?;
    let b = variance_bound(&model, table, mu_x, &mu_y, spec.space, spec.coord)?;
    Ok(BoundRow {
        instance_id: spec.id.clone(),
        q: spec.q,
        n: spec.n,
        a: spec.a,
        kind: kind_label(spec.kind),
        loss: spec.loss,
        space: spec.space,
        variance: variance.to_f64(),
        bound: b.bound,
        eps_term: b.eps_term,
        gamma: b.gamma,
        slack: b.slack(&variance),
        certificate: b.certifies(&variance),
    })
}

/// Exact variance versus assembled bound; rational arithmetic for the squared
/// loss, floating point for the sigmoid loss.
pub fn run_instance(spec: &InstanceSpec, secret_cap: u64) -> Result<BoundRow> {
    let (class, mu_x) = match &spec.explicit {
        Some((c, m)) => (c.clone(), m.clone()),
        None => (
            enumerate_secrets(spec.kind, spec.q, spec.n, secret_cap)?,
            restricted_uniform_inputs(&RestrictedInputSpec::new(spec.q, spec.n, spec.a)?)?,
        ),
    };
    let table = EvalTable::from_class(&class, mu_x.domain())?;
    match spec.loss {
        Loss::Squared => evaluate::<BigRational>(spec, &table, &mu_x, |r| r.clone()),
        Loss::Sigmoid => evaluate::<f64>(spec, &table, &mu_x, crate::measures::rational_to_f64),
    }
}

/// `count` seeded instances in id order. Instances run one after another; each
/// one parallelizes internally with a fixed reduction order.
pub fn run_bound_check(seed: u64, count: u64, secret_cap: u64) -> Result<Vec<BoundRow>> {
    (0..count).map(|id| run_instance(&random_instance(seed, id), secret_cap)).collect()
}

pub fn write_bound_csv<W: Write>(out: W, rows: &[BoundRow]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(BOUND_CSV_HEADER)?;
    for r in rows {
        wr.write_record([
            r.instance_id.clone(),
            r.q.to_string(),
            r.n.to_string(),
            r.a.to_string(),
            r.kind.clone(),
            r.loss.to_string(),
            r.space.to_string(),
            format_float(r.variance),
            format_float(r.bound),
            format_float(r.eps_term),
            format_float(r.gamma),
            format_float(r.slack),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Result of the identity checks on one random instance.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityRow {
    pub instance_id: u64,
    pub q: u32,
    pub n: usize,
    pub a: u32,
    pub kind: String,
    pub residual_is_zero: bool,
    pub probes: usize,
    pub violations: usize,
    /// max over probes of lhs / rhs
    pub max_ratio: f64,
}

pub const IDENTITY_CSV_HEADER: [&str; 9] = ["instance_id", "q", "n", "a", "kind", "residual_zero", "probes", "violations", "max_ratio"];

/// Inversion identity and operator inequality on a random small rational instance.
pub fn run_identity_instance(seed: u64, id: u64, probes: usize) -> Result<IdentityRow> {
    let mut rng = stream_rng(seed ^ 0x1d3_7e57, id);
    let q = [2u32, 3, 5][rng.random_range(0..3)];
    let n = rng.random_range(1..=2usize);
    let a = rng.random_range(2..=q);
    let l = rng.random_range(0..=n);
    let kind = [SecretKind::Uniform, SecretKind::Binary(l), SecretKind::Ternary(l)][rng.random_range(0..3)];
    let class = enumerate_secrets(kind, q, n, DEFAULT_SECRET_CAP)?;
    let mu_x = restricted_uniform_inputs(&RestrictedInputSpec::new(q, n, a)?)?;
    let table = EvalTable::from_class(&class, mu_x.domain())?;
    let m = mu_x.len();
    let g: Vec<Vec<BigRational>> = (0..m).map(|_| (0..q).map(|_| small_rational(&mut rng, 6, 3)).collect()).collect();
    let g = center_rows(&g, &uniform_outputs(q), q)?;
    let inv = inversion_identity_check(&table, &mu_x, &g)?;
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..probes {
        let probe: Vec<BigRational> = (0..m).map(|_| small_rational(&mut rng, 10, 5)).collect();
        let c = operator_inequality_check(&table, &mu_x, &g, &probe)?;
        if !c.holds() {
            violations += 1;
        }
        let rhs = c.rhs();
        if rhs > 0.0 {
            max_ratio = max_ratio.max(c.lhs.to_f64() / rhs);
        }
    }
    Ok(IdentityRow {
        instance_id: id,
        q,
        n,
        a,
        kind: kind_label(kind),
        residual_is_zero: inv.residual().is_zero(),
        probes,
        violations,
        max_ratio,
    })
}

pub fn write_identity_csv<W: Write>(out: W, rows: &[IdentityRow]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(IDENTITY_CSV_HEADER)?;
    for r in rows {
        wr.write_record([
            r.instance_id.to_string(),
            r.q.to_string(),
            r.n.to_string(),
            r.a.to_string(),
            r.kind.clone(),
            r.residual_is_zero.to_string(),
            r.probes.to_string(),
            r.violations.to_string(),
            format_float(r.max_ratio),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
