//! The smoothed landscape C_h(ω) = ∫₀¹ ψ(wx) cos(ωx) dx of h(x) = ψ(wx),
//! computed two ways: from ψ's Fourier series and by direct quadrature.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::periodic::PeriodicFn;
use super::quadrature::{adaptive_simpson, QuadResult};
use crate::error::{Error, Result};

/// k(ω) = ∫₀¹ e^{−iωx} dx, evaluated as e^{−iω/2}·sin(ω/2)/(ω/2).
pub fn kernel_k(omega: f64) -> Complex64 {
    let half = 0.5 * omega;
    let sinc = if half.abs() < 1e-4 {
        let h2 = half * half;
        1.0 - h2 / 6.0 + h2 * h2 / 120.0
    } else {
        half.sin() / half
    };
    Complex64::from_polar(sinc, -half)
}

/// Upper bound on Σ_{|m|>K} |a_m|·|k(ω − 2πmw)| for |ω| ≤ omega_max, valid when
/// 2πKw ≥ 2·omega_max. Uses |a_m| ≤ V/(2π|m|) with V the variation of ψ.
pub fn series_tail_bound(psi: &PeriodicFn, w: f64, omega_max: f64, k: usize) -> f64 {
    let v = psi.bv_norm();
    if v == 0.0 {
        return 0.0;
    }
    if k == 0 || 2.0 * PI * k as f64 * w < 2.0 * omega_max.abs() {
        return f64::INFINITY;
    }
    2.0 * v / (PI * PI * w * k as f64)
}

/// Smallest K for which `series_tail_bound` is at most `tol`.
pub fn series_truncation(psi: &PeriodicFn, w: f64, omega_max: f64, tol: f64) -> Result<usize> {
    if w <= 0.0 || !w.is_finite() {
        return Err(Error::InvalidParameter(format!("frequency w must be positive, got {w}")));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let v = psi.bv_norm();
    if v == 0.0 {
        return Ok(0);
    }
    let geometric = (omega_max.abs() / (PI * w)).ceil();
    let tail = (2.0 * v / (PI * PI * w * tol)).ceil();
    Ok(geometric.max(tail).max(1.0) as usize)
}

/// C_h on `omegas` from the series Re Σ_{|m|≤K} a_m k(ω − 2πmw).
pub fn landscape_series(psi: &PeriodicFn, w: f64, omegas: &[f64], k: usize) -> Vec<f64> {
    let coeffs = psi.fourier_coeffs(k);
    let ki = k as i64;
    // e^{2πimw}, reduced mod 1 before the trig call so integer w is exact.
    let shifts: Vec<(f64, Complex64)> = (-ki..=ki)
        .map(|m| {
            let t = (m as f64 * w).rem_euclid(1.0);
            (2.0 * PI * m as f64 * w, Complex64::from_polar(1.0, 2.0 * PI * t))
        })
        .collect();
    omegas
        .par_iter()
        .map(|&omega| {
            let e = Complex64::from_polar(1.0, -omega);
            let mut sum = 0.0;
            let mut comp = 0.0;
            for (a, &(shift, phase)) in coeffs.iter().zip(&shifts) {
                let theta = omega - shift;
                let k = if theta.abs() < 1e-4 {
                    kernel_k(theta)
                } else {
                    (e * phase - 1.0) * Complex64::new(0.0, 1.0 / theta)
                };
                let term = a.re * k.re - a.im * k.im;
                let t = sum + term;
                comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
                sum = t;
            }
            sum + comp
        })
        .collect()
}

/// C_h(ω) by adaptive Simpson on the pieces of ψ(w·), absolute tolerance
/// `tol` over [0, 1].
pub fn landscape_quadrature(psi: &PeriodicFn, w: f64, omega: f64, tol: f64) -> Result<QuadResult> {
    if w <= 0.0 || !w.is_finite() {
        return Err(Error::InvalidParameter(format!("frequency w must be positive, got {w}")));
    }
    let mut cuts = vec![0.0, 1.0];
    let mut local: Vec<f64> = vec![0.0];
    local.extend(psi.breakpoints());
    let periods = w.ceil() as i64;
    for j in 0..=periods {
        for &b in &local {
            let x = (j as f64 + b) / w;
            if x > 0.0 && x < 1.0 {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut value = 0.0;
    let mut error = 0.0;
    for win in cuts.windows(2) {
        let (s, t) = (win[0], win[1]);
        let u = w * 0.5 * (s + t);
        let j = u.floor();
        let seg = psi.segment_at(u - j);
        let f = |x: f64| seg.eval(w * x - j) * (omega * x).cos();
        // Pieces longer than a quarter period of cos(ωx) can alias: Simpson
        // samples landing on whole periods agree and stop refinement early.
        let pieces = ((t - s) * omega.abs() * 2.0 / std::f64::consts::PI).ceil().max(1.0) as usize;
        let h = (t - s) / pieces as f64;
        for p in 0..pieces {
            let lo = s + p as f64 * h;
            let hi = if p + 1 == pieces { t } else { lo + h };
            let r = adaptive_simpson(&f, lo, hi, tol * (hi - lo))?;
            value += r.value;
            error += r.error;
        }
    }
    Ok(QuadResult { value, error })
}

/// `start, start + step, …` up to `end` inclusive (to within step/1e9).
pub fn omega_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || end < start || !start.is_finite() || !end.is_finite() {
        return Err(Error::InvalidParameter(format!("bad grid {start}:{end}:{step}")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}
