//! Total variation between the fractional parts of a bivariate Gaussian and
//! the uniform law on [0,1]².

use std::f64::consts::PI;

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Wrap mass allowed outside the truncated lattice sum.
pub const WRAP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2Cov {
    pub s11: f64,
    pub s22: f64,
    pub s12: f64,
}

impl Gaussian2Cov {
    pub fn new(s11: f64, s22: f64, s12: f64) -> Result<Self> {
        if !(s11 > 0.0 && s22 > 0.0) || !s12.is_finite() || !s11.is_finite() || !s22.is_finite() {
            return Err(Error::InvalidParameter("variances must be positive and finite".into()));
        }
        let c = Self { s11, s22, s12 };
        if !(c.det() > 0.0) {
            return Err(Error::InvalidParameter(format!("covariance is singular (det = {})", c.det())));
        }
        Ok(c)
    }

    pub fn isotropic(sigma: f64) -> Result<Self> {
        Self::new(sigma * sigma, sigma * sigma, 0.0)
    }

    pub fn det(&self) -> f64 {
        self.s11 * self.s22 - self.s12 * self.s12
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let tr = self.s11 + self.s22;
        let disc = ((self.s11 - self.s22).powi(2) + 4.0 * self.s12 * self.s12).sqrt();
        0.5 * (tr + disc)
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.s11 * k, self.s22 * k, self.s12 * k)
    }
}

/// Bound on the probability mass the lattice sum |i|, |j| ≤ K misses:
/// P(|X| ≥ K) + P(|Y| ≥ K), each bounded with the largest eigenvalue.
pub fn wrap_neglected_mass(cov: &Gaussian2Cov, k: usize) -> f64 {
    let s = cov.max_eigenvalue().sqrt();
    2.0 * erfc(k as f64 / (std::f64::consts::SQRT_2 * s))
}

pub fn required_wrap_k(cov: &Gaussian2Cov, tol: f64) -> usize {
    let mut k = 1;
    while wrap_neglected_mass(cov, k) >= tol {
        k += 1;
    }
    k
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WrappedTv {
    /// ½∫|f_T − 1|.
    pub tv: f64,
    /// ∫|f_T − 1|, the doubled value.
    pub distance: f64,
    pub k: usize,
    pub grid_m: usize,
    pub neglected_mass: f64,
    /// Worst-case floating-point error of each summed density value.
    pub roundoff: f64,
}

impl WrappedTv {
    /// Below this the computed `tv` carries no information.
    pub fn resolution(&self) -> f64 {
        0.5 * (self.neglected_mass + self.roundoff)
    }
}

/// Midpoint rule on an m×m grid of the wrapped density f_T(x, y) =
/// Σ_{|i|,|j|≤K} f(i + x, j + y). With `trunc_k` None the smallest K meeting
/// `WRAP_TOL` is used; a given K that misses it is an error.
pub fn wrapped_gaussian_tv(cov: &Gaussian2Cov, grid_m: usize, trunc_k: Option<usize>) -> Result<WrappedTv> {
    if grid_m < 64 {
        return Err(Error::InvalidParameter(format!("grid must be at least 64 per side, got {grid_m}")));
    }
    let required = required_wrap_k(cov, WRAP_TOL);
    let k = match trunc_k {
        Some(k) if k < required => {
            return Err(Error::Truncation { given: k, required, mass: wrap_neglected_mass(cov, k), tol: WRAP_TOL })
        }
        Some(k) => k,
        None => required,
    };
    let det = cov.det();
    let (a, b, c) = (cov.s22 / det, -cov.s12 / det, cov.s11 / det);
    let norm = 1.0 / (2.0 * PI * det.sqrt());
    let ki = k as i64;
    let terms = (2 * k + 1) * (2 * k + 1);
    let h = 1.0 / grid_m as f64;

    let rows: Vec<f64> = (0..grid_m)
        .into_par_iter()
        .map(|p| {
            let x = (p as f64 + 0.5) * h;
            let us: Vec<f64> = (-ki..=ki).map(|i| i as f64 + x).collect();
            let mut row = 0.0;
            for qi in 0..grid_m {
                let y = (qi as f64 + 0.5) * h;
                let f = if b == 0.0 {
                    let sx: f64 = us.iter().map(|u| (-0.5 * a * u * u).exp()).sum();
                    let sy: f64 = (-ki..=ki).map(|j| j as f64 + y).map(|v| (-0.5 * c * v * v).exp()).sum();
                    norm * sx * sy
                } else {
                    let mut s = 0.0;
                    for &u in &us {
                        for j in -ki..=ki {
                            let v = j as f64 + y;
                            s += (-0.5 * (a * u * u + 2.0 * b * u * v + c * v * v)).exp();
                        }
                    }
                    norm * s
                };
                row += (f - 1.0).abs();
            }
            row
        })
        .collect();
    let distance = rows.iter().sum::<f64>() * h * h;
    Ok(WrappedTv {
        tv: 0.5 * distance,
        distance,
        k,
        grid_m,
        neglected_mass: wrap_neglected_mass(cov, k),
        roundoff: 4.0 * terms as f64 * f64::EPSILON,
    })
}

/// The dual (Fourier) form f_T(x, y) = Σ_{k∈Z²} e^{−2π² kᵀΣk} cos(2π k·(x, y)),
/// truncated to |k₁|, |k₂| ≤ kf. Used to cross-check the lattice sum.
pub fn wrapped_density_fourier(cov: &Gaussian2Cov, x: f64, y: f64, kf: i64) -> f64 {
    let mut s = 0.0;
    for k1 in -kf..=kf {
        for k2 in -kf..=kf {
            let (a, b) = (k1 as f64, k2 as f64);
            let quad = cov.s11 * a * a + 2.0 * cov.s12 * a * b + cov.s22 * b * b;
            s += (-2.0 * PI * PI * quad).exp() * (2.0 * PI * (a * x + b * y)).cos();
        }
    }
    s
}

/// (Σ11^{1/2}Σ22^{1/2} + |Σ12|)(Σ11^{1/2} + Σ22^{1/2}) / |Σ11Σ22 − Σ12²|.
pub fn wirtinger_expression(cov: &Gaussian2Cov) -> f64 {
    let (r1, r2) = (cov.s11.sqrt(), cov.s22.sqrt());
    (r1 * r2 + cov.s12.abs()) * (r1 + r2) / cov.det().abs()
}

/// Computed TV over the expression above: a lower estimate of the constant.
pub fn wirtinger_ratio(cov: &Gaussian2Cov, grid_m: usize) -> Result<f64> {
    Ok(wrapped_gaussian_tv(cov, grid_m, None)?.tv / wirtinger_expression(cov))
}
