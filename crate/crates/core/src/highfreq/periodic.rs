//! 1-periodic piecewise-linear functions ψ, described by knots on [0, 1].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Knots `(x, ψ(x))` with x nondecreasing from 0 to 1. A repeated x is a jump;
/// between knots ψ is linear. The function is right-continuous and extended
/// periodically.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicFn {
    knots: Vec<(f64, f64)>,
    label: String,
}

/// One linear piece on [x0, x1), x0 < x1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Segment {
    pub fn slope(&self) -> f64 {
        (self.y1 - self.y0) / (self.x1 - self.x0)
    }

    /// The segment's linear formula, valid (and extended) for any t.
    pub fn eval(&self, t: f64) -> f64 {
        self.y0 + self.slope() * (t - self.x0)
    }
}

impl PeriodicFn {
    pub fn piecewise(knots: Vec<(f64, f64)>) -> Result<Self> {
        let label = knots.iter().map(|(x, y)| format!("{x}:{y}")).collect::<Vec<_>>().join(",");
        Self::with_label(knots, format!("pwl:{label}"))
    }

    fn with_label(knots: Vec<(f64, f64)>, label: String) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidParameter("a piecewise function needs at least two knots".into()));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidParameter("knots must be finite".into()));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::InvalidParameter("knots must start at x = 0 and end at x = 1".into()));
        }
        if knots.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::InvalidParameter("knot positions must be nondecreasing".into()));
        }
        Ok(Self { knots, label })
    }

    /// ψ(x) = {x}.
    pub fn sawtooth() -> Self {
        Self::with_label(vec![(0.0, 0.0), (1.0, 1.0)], "sawtooth".into()).unwrap()
    }

    /// +1 on [0, 1/2), −1 on [1/2, 1).
    pub fn square() -> Self {
        Self::with_label(vec![(0.0, 1.0), (0.5, 1.0), (0.5, -1.0), (1.0, -1.0)], "square".into()).unwrap()
    }

    pub fn constant(c: f64) -> Self {
        Self::with_label(vec![(0.0, c), (1.0, c)], format!("constant:{c}")).unwrap()
    }

    /// Rises linearly from 0 to `peak` at 1/2 and back to 0.
    pub fn triangle(peak: f64) -> Self {
        Self::with_label(vec![(0.0, 0.0), (0.5, peak), (1.0, 0.0)], format!("triangle:{peak}")).unwrap()
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.knots
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| Segment { x0: w[0].0, x1: w[1].0, y0: w[0].1, y1: w[1].1 })
    }

    /// Piece containing t ∈ [0, 1); the last piece whose start is ≤ t.
    pub fn segment_at(&self, t: f64) -> Segment {
        let mut found = None;
        for s in self.segments() {
            if s.x0 <= t {
                found = Some(s);
            } else {
                break;
            }
        }
        found.expect("knots start at 0")
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = x - x.floor();
        self.segment_at(t).eval(t)
    }

    /// Interior knot positions in (0, 1), deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.knots.iter().map(|k| k.0).filter(|&x| x > 0.0 && x < 1.0).collect();
        b.dedup();
        b
    }

    /// Total variation over one period, the seam jump ψ(1⁻) → ψ(0) included.
    pub fn bv_norm(&self) -> f64 {
        let inner: f64 = self.knots.windows(2).map(|w| (w[1].1 - w[0].1).abs()).sum();
        inner + (self.knots[0].1 - self.knots[self.knots.len() - 1].1).abs()
    }

    /// ∫₀¹ ψ².
    pub fn mean_square(&self) -> f64 {
        self.segments().map(|s| (s.x1 - s.x0) * (s.y0 * s.y0 + s.y0 * s.y1 + s.y1 * s.y1) / 3.0).sum()
    }

    /// a_m = ∫₀¹ ψ(x) e^{−2πimx} dx, integrated piece by piece in closed form.
    pub fn fourier_coeff(&self, m: i64) -> Complex64 {
        if m == 0 {
            return Complex64::new(self.segments().map(|s| 0.5 * (s.x1 - s.x0) * (s.y0 + s.y1)).sum(), 0.0);
        }
        let c = Complex64::new(0.0, -2.0 * PI * m as f64);
        let phase = |x: f64| {
            let t = (m as f64 * x).rem_euclid(1.0);
            Complex64::from_polar(1.0, -2.0 * PI * t)
        };
        let mut total = Complex64::new(0.0, 0.0);
        for s in self.segments() {
            let beta = s.slope();
            let alpha = s.y0 - beta * s.x0;
            let prim = |x: f64| phase(x) * (alpha / c + beta * (x / c - 1.0 / (c * c)));
            total += prim(s.x1) - prim(s.x0);
        }
        total
    }

    /// Coefficients a_{−K}, …, a_K.
    pub fn fourier_coeffs(&self, k: usize) -> Vec<Complex64> {
        let k = k as i64;
        (-k..=k).map(|m| self.fourier_coeff(m)).collect()
    }
}

impl fmt::Display for PeriodicFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// `sawtooth`, `square`, `constant:c`, `triangle:peak`, or
/// `pwl:x0:y0,x1:y1,...`.
impl FromStr for PeriodicFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unrecognized function `{s}`"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        match s.split_once(':') {
            None => match s {
                "sawtooth" => Ok(Self::sawtooth()),
                "square" => Ok(Self::square()),
                _ => Err(bad()),
            },
            Some(("constant", v)) => Ok(Self::constant(num(v)?)),
            Some(("triangle", v)) => Ok(Self::triangle(num(v)?)),
            Some(("pwl", rest)) => {
                let knots = rest
                    .split(',')
                    .map(|kv| {
                        let (x, y) = kv.split_once(':').ok_or_else(bad)?;
                        Ok((num(x)?, num(y)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::piecewise(knots)
            }
            _ => Err(bad()),
        }
    }
}
