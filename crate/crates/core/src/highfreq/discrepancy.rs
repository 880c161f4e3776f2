//! Gaussian characters, Erdős–Turán–Koksma brackets, the bracket bounding the
//! gradient variance of ψ(Ax)-type targets, and exact star discrepancy in 2-D.

use std::f64::consts::PI;

use rand::Rng;
use statrs::function::erf::erf;

use super::periodic::PeriodicFn;
use super::quadrature::gl_integrate;
use crate::bound_check::stream_rng;
use crate::error::{Error, Result};

/// e^{−2π²R²(ax+by)²}.
pub fn gaussian_char(a: i64, b: i64, x: f64, y: f64, r: f64) -> f64 {
    let s = a as f64 * x + b as f64 * y;
    (-2.0 * PI * PI * r * r * s * s).exp()
}

fn weight(a: i64, b: i64) -> f64 {
    1.0 / (a.abs().max(1) as f64 * b.abs().max(1) as f64)
}

/// Sum of `f(a, b)·weight(a, b)` over the ring max(|a|, |b|) = h.
fn ring_sum<F: FnMut(i64, i64) -> f64>(h: i64, mut f: F) -> f64 {
    let mut s = 0.0;
    for b in -h..=h {
        s += f(h, b) * weight(h, b) + f(-h, b) * weight(h, b);
    }
    for a in (1 - h)..h {
        s += f(a, h) * weight(a, h) + f(a, -h) * weight(a, h);
    }
    s
}

/// 1/H + Σ_{(a,b)∈[−H,H]², (a,b)≠0} gaussian_char / (max(|a|,1)·max(|b|,1)).
pub fn etk_bracket(x: f64, y: f64, r: f64, h: u64) -> Result<f64> {
    if h == 0 {
        return Err(Error::InvalidParameter("H must be at least 1".into()));
    }
    let s: f64 = (1..=h as i64).map(|k| ring_sum(k, |a, b| gaussian_char(a, b, x, y, r))).sum();
    Ok(1.0 / h as f64 + s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BracketMin {
    pub h_star: u64,
    pub bracket: f64,
}

/// min over 1 ≤ H ≤ h_max of `etk_bracket`, ties to the smallest H. The sum
/// part is nondecreasing in H, so the scan stops once it alone exceeds the
/// best bracket.
pub fn etk_min(x: f64, y: f64, r: f64, h_max: u64) -> Result<BracketMin> {
    if h_max == 0 {
        return Err(Error::InvalidParameter("H_max must be at least 1".into()));
    }
    let mut s = 0.0;
    let mut best = BracketMin { h_star: 0, bracket: f64::INFINITY };
    for h in 1..=h_max {
        s += ring_sum(h as i64, |a, b| gaussian_char(a, b, x, y, r));
        let v = 1.0 / h as f64 + s;
        if v < best.bracket {
            best = BracketMin { h_star: h, bracket: v };
        }
        if s >= best.bracket {
            break;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairBound {
    /// 3·max(V, V²) with V the variation of ψ.
    pub factor: f64,
    pub h_star: u64,
    pub bracket: f64,
    pub value: f64,
}

/// 3·max(V, V²)·min_H etk_bracket for the pair (x, y) at scale R.
pub fn epsilon_n1_bound(psi: &PeriodicFn, x: f64, y: f64, r: f64, h_max: u64) -> Result<PairBound> {
    let v = psi.bv_norm();
    let factor = 3.0 * v.max(v * v);
    let m = etk_min(x, y, r, h_max)?;
    Ok(PairBound { factor, h_star: m.h_star, bracket: m.bracket, value: factor * m.bracket })
}

/// E over (X, Y) ~ U([0,1])² of e^{−c(aX+bY)²}, c = 2π²R², in closed form.
pub fn uniform_char_expectation(a: i64, b: i64, r: f64) -> f64 {
    let c = 2.0 * PI * PI * r * r;
    if a == 0 && b == 0 || c == 0.0 {
        return 1.0;
    }
    let rc = c.sqrt();
    // ∫₀¹ e^{−c t² s²} dt for integer s ≠ 0.
    let line = |s: i64| {
        let z = rc * s.unsigned_abs() as f64;
        0.5 * PI.sqrt() * erf(z) / z
    };
    if a == 0 {
        return line(b);
    }
    if b == 0 {
        return line(a);
    }
    // G'' = e^{−cs²}, G(0) = 0; the mean is the second difference over a·b.
    let g = |s: f64| 0.5 * PI.sqrt() / rc * s * erf(rc * s) + ((-c * s * s).exp() - 1.0) / (2.0 * c);
    let (af, bf) = (a as f64, b as f64);
    (g(af + bf) - g(af) - g(bf)) / (af * bf)
}

/// Tensor Gauss–Legendre version of `uniform_char_expectation`.
pub fn uniform_char_expectation_quadrature(a: i64, b: i64, r: f64, panels: usize) -> f64 {
    gl_integrate(|x| gl_integrate(|y| gaussian_char(a, b, x, y, r), 0.0, 1.0, 20, panels), 0.0, 1.0, 20, panels)
}

/// Distribution of the inputs for the variance bracket.
#[derive(Clone, Debug, PartialEq)]
pub enum InputLaw {
    Uniform01,
    /// Pairs (X, Y) drawn independently from `points`, `pairs` times.
    Empirical { points: Vec<f64>, pairs: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceBracket {
    pub h: u64,
    /// Σ E[char]/weight over (a,b) ≠ 0 in [−H,H]².
    pub char_sum: f64,
    /// (1/H² + log²(H+1)·char_sum)^{1/2}.
    pub bracket: f64,
    /// Monte-Carlo standard error of `char_sum`; None on the closed-form path.
    pub std_error: Option<f64>,
}

fn bracket_value(h: u64, s: f64) -> f64 {
    let l = ((h + 1) as f64).ln();
    (1.0 / (h * h) as f64 + l * l * s).sqrt()
}

/// Per-ring sums of E[char]/weight for rings 1..=h_max; for the empirical law
/// also the per-pair cumulative sums needed for the standard error.
struct RingSums {
    rings: Vec<f64>,
    pairs: Option<Vec<(f64, f64)>>,
}

fn ring_sums(law: &InputLaw, r: f64, h_max: u64) -> Result<RingSums> {
    match law {
        InputLaw::Uniform01 => Ok(RingSums {
            rings: (1..=h_max as i64).map(|h| ring_sum(h, |a, b| uniform_char_expectation(a, b, r))).collect(),
            pairs: None,
        }),
        InputLaw::Empirical { points, pairs, seed } => {
            if points.is_empty() || *pairs < 2 {
                return Err(Error::InvalidParameter("empirical law needs points and at least two pairs".into()));
            }
            let mut rng = stream_rng(*seed, 0);
            let drawn: Vec<(f64, f64)> = (0..*pairs)
                .map(|_| (points[rng.random_range(0..points.len())], points[rng.random_range(0..points.len())]))
                .collect();
            let rings = (1..=h_max as i64)
                .map(|h| drawn.iter().map(|&(x, y)| ring_sum(h, |a, b| gaussian_char(a, b, x, y, r))).sum::<f64>() / drawn.len() as f64)
                .collect();
            Ok(RingSums { rings, pairs: Some(drawn) })
        }
    }
}

fn pair_std_error(drawn: &[(f64, f64)], r: f64, h: u64) -> f64 {
    let vals: Vec<f64> = drawn
        .iter()
        .map(|&(x, y)| (1..=h as i64).map(|k| ring_sum(k, |a, b| gaussian_char(a, b, x, y, r))).sum())
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// The bracket (1/H² + log²(H+1)·Σ E[char]/weight)^{1/2} at a fixed H.
pub fn variance_bracket(law: &InputLaw, r: f64, h: u64) -> Result<VarianceBracket> {
    if h == 0 {
        return Err(Error::InvalidParameter("H must be at least 1".into()));
    }
    let sums = ring_sums(law, r, h)?;
    let s: f64 = sums.rings.iter().sum();
    let std_error = sums.pairs.as_ref().map(|p| pair_std_error(p, r, h));
    Ok(VarianceBracket { h, char_sum: s, bracket: bracket_value(h, s), std_error })
}

/// min over 1 ≤ H ≤ h_max of `variance_bracket`, ties to the smallest H. The
/// log²(H+1)·sum part is nondecreasing, so the scan stops once it alone
/// exceeds the best squared bracket.
pub fn variance_bracket_min(law: &InputLaw, r: f64, h_max: u64) -> Result<VarianceBracket> {
    if h_max == 0 {
        return Err(Error::InvalidParameter("H_max must be at least 1".into()));
    }
    let mut s = 0.0;
    let mut best = (0u64, f64::INFINITY, 0.0);
    match law {
        InputLaw::Uniform01 => {
            for h in 1..=h_max {
                s += ring_sum(h as i64, |a, b| uniform_char_expectation(a, b, r));
                let v = bracket_value(h, s);
                if v < best.1 {
                    best = (h, v, s);
                }
                let l = ((h + 1) as f64).ln();
                if l * l * s >= best.1 * best.1 {
                    break;
                }
            }
            Ok(VarianceBracket { h: best.0, char_sum: best.2, bracket: best.1, std_error: None })
        }
        InputLaw::Empirical { .. } => {
            let sums = ring_sums(law, r, h_max)?;
            for (i, ring) in sums.rings.iter().enumerate() {
                s += ring;
                let h = i as u64 + 1;
                let v = bracket_value(h, s);
                if v < best.1 {
                    best = (h, v, s);
                }
            }
            let se = sums.pairs.as_ref().map(|p| pair_std_error(p, r, best.0));
            Ok(VarianceBracket { h: best.0, char_sum: best.2, bracket: best.1, std_error: se })
        }
    }
}

/// Exact D*_N = sup over boxes [0,u₁)×[0,u₂) ⊆ [0,1]² of |#(points in box)/N − u₁u₂|.
///
/// The supremum of volume − count is attained at open boxes with corners on
/// point coordinates or 1; that of count − volume is a limit of boxes shrinking
/// onto a closed box with corners on point coordinates below 1 (or 1 itself,
/// where the box stays half-open).
pub fn empirical_star_discrepancy(points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("need at least one point".into()));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(0.0..=1.0).contains(x) || !(0.0..=1.0).contains(y)) {
        return Err(Error::InvalidParameter(format!("point ({}, {}) lies outside [0,1]²", p.0, p.1)));
    }
    let n = points.len() as f64;
    let mut us: Vec<f64> = points.iter().map(|p| p.0).chain([1.0]).collect();
    us.sort_by(f64::total_cmp);
    us.dedup();
    let mut vs: Vec<f64> = points.iter().map(|p| p.1).chain([1.0]).collect();
    vs.sort_by(f64::total_cmp);
    vs.dedup();
    let rank = |v: f64| vs.binary_search_by(|p| p.total_cmp(&v)).unwrap();

    let mut by_x: Vec<(f64, usize)> = points.iter().map(|&(x, y)| (x, rank(y))).collect();
    by_x.sort_by(|a, b| a.0.total_cmp(&b.0));

    // counts[j]: inserted points whose y has rank j.
    let mut counts = vec![0u32; vs.len()];
    let mut next = 0;
    let mut best: f64 = 0.0;
    for &u in &us {
        while next < by_x.len() && by_x[next].0 < u {
            counts[by_x[next].1] += 1;
            next += 1;
        }
        // Open in x: boxes [0,u) × [0,v).
        let mut below = 0u32;
        for (j, &v) in vs.iter().enumerate() {
            best = best.max(u * v - below as f64 / n);
            below += counts[j];
            let closed_v = if v < 1.0 { below } else { below - counts[j] };
            if u == 1.0 {
                best = best.max(closed_v as f64 / n - u * v);
            }
        }
        if u < 1.0 {
            let mut with_u = counts.clone();
            let mut k = next;
            while k < by_x.len() && by_x[k].0 == u {
                with_u[by_x[k].1] += 1;
                k += 1;
            }
            let mut below = 0u32;
            for (j, &v) in vs.iter().enumerate() {
                below += with_u[j];
                let closed_v = if v < 1.0 { below } else { below - with_u[j] };
                best = best.max(closed_v as f64 / n - u * v);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn char_examples() {
        assert_eq!(gaussian_char(0, 0, 0.3, 0.9, 5.0), 1.0);
        assert_eq!(gaussian_char(2, -3, 0.3, 0.9, 1.5), gaussian_char(-2, 3, 0.3, 0.9, 1.5));
        assert!((gaussian_char(1, 0, 1.0, 0.0, 1.0) - 2.675e-9).abs() < 1e-12);
    }

    fn harmonic(h: u64) -> f64 {
        (1..=h).map(|k| 1.0 / k as f64).sum()
    }

    #[test]
    fn bracket_limits() {
        for h in [1u64, 3, 10] {
            // Irrational ratio, so ax + by ≠ 0 for every nonzero (a, b).
            let (x, y) = (0.3, 0.7 * std::f64::consts::SQRT_2);
            assert!((etk_bracket(x, y, 1e6, h).unwrap() - 1.0 / h as f64).abs() < 1e-12);
            let full = (1.0 + 2.0 * harmonic(h)).powi(2) - 1.0;
            assert!((etk_bracket(x, y, 0.0, h).unwrap() - 1.0 / h as f64 - full).abs() < 1e-10);
        }
        assert!(etk_bracket(0.3, 0.7, 1.0, 0).is_err());
    }

    #[test]
    fn min_is_below_every_bracket() {
        let m = etk_min(0.3, 0.7, 2.0, 60).unwrap();
        for h in 1..=60 {
            assert!(m.bracket <= etk_bracket(0.3, 0.7, 2.0, h).unwrap() + 1e-15);
        }
        assert!((etk_bracket(0.3, 0.7, 2.0, m.h_star).unwrap() - m.bracket).abs() < 1e-13);
    }

    #[test]
    fn pair_bound_examples() {
        assert_eq!(epsilon_n1_bound(&PeriodicFn::constant(1.0), 0.3, 0.7, 50.0, 200).unwrap().value, 0.0);
        let saw = PeriodicFn::sawtooth();
        let b = epsilon_n1_bound(&saw, 0.3, 0.7, 50.0, 200).unwrap();
        assert!(b.value.is_finite() && b.h_star >= 1);
        assert_eq!(b.factor, 12.0);
        for h in [1u64, 5, 20] {
            let lo = etk_bracket(0.3, 0.7, 2.0, h).unwrap();
            let hi = etk_bracket(0.3, 0.7, 1.0, h).unwrap();
            assert!(lo <= hi);
        }
    }

    #[test]
    fn closed_form_matches_tensor_quadrature() {
        for r in [0.3, 1.0, 3.0] {
            for (a, b) in [(1, 0), (0, -2), (1, 1), (1, -1), (2, -3), (3, 5), (-4, 1)] {
                let got = uniform_char_expectation(a, b, r);
                let want = uniform_char_expectation_quadrature(a, b, r, 16);
                assert!((got - want).abs() < 1e-8, "r={r} a={a} b={b}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn uniform_expectation_has_inverse_r_scale() {
        for (a, b) in [(1, 0), (1, 1), (2, -1), (3, 4)] {
            for r in [10.0, 100.0, 1000.0] {
                let scaled = uniform_char_expectation(a, b, r) * r * ((a * a + b * b) as f64).sqrt();
                assert!(scaled > 0.0 && scaled < 1.0, "{a} {b} {r}: {scaled}");
            }
        }
    }

    #[test]
    fn bracket_tends_to_inverse_h() {
        let b = variance_bracket(&InputLaw::Uniform01, 1e9, 4).unwrap();
        assert!((b.bracket - 0.25).abs() < 1e-6);
    }

    #[test]
    fn bracket_min_matches_scan() {
        let law = InputLaw::Uniform01;
        let m = variance_bracket_min(&law, 20.0, 200).unwrap();
        for h in 1..=60 {
            assert!(m.bracket <= variance_bracket(&law, 20.0, h).unwrap().bracket + 1e-15);
        }
    }

    #[test]
    fn empirical_law_tracks_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let law = InputLaw::Empirical { points, pairs: 4000, seed: 9 };
        let mc = variance_bracket(&law, 3.0, 4).unwrap();
        let exact = variance_bracket(&InputLaw::Uniform01, 3.0, 4).unwrap();
        let se = mc.std_error.unwrap();
        assert!((mc.char_sum - exact.char_sum).abs() < 4.0 * se + 1e-3, "{} vs {} (se {se})", mc.char_sum, exact.char_sum);
    }

    #[test]
    fn star_discrepancy_examples() {
        assert!((empirical_star_discrepancy(&[(0.5, 0.5)]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(empirical_star_discrepancy(&[(1.0, 1.0)]).unwrap(), 1.0);
        assert!(empirical_star_discrepancy(&[(1.2, 0.5)]).is_err());
        assert!(empirical_star_discrepancy(&[]).is_err());
    }

    /// Direct count over every candidate corner, each side taken open or as a
    /// closed limit.
    fn brute(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let mut us: Vec<f64> = points.iter().map(|p| p.0).chain([0.0, 1.0]).collect();
        let mut vs: Vec<f64> = points.iter().map(|p| p.1).chain([0.0, 1.0]).collect();
        us.sort_by(f64::total_cmp);
        vs.sort_by(f64::total_cmp);
        let mut best: f64 = 0.0;
        for &u in &us {
            for &v in &vs {
                for cu in [false, true] {
                    for cv in [false, true] {
                        if (cu && u >= 1.0) || (cv && v >= 1.0) {
                            continue;
                        }
                        let inside = |c: f64, lim: f64, closed: bool| if closed { c <= lim } else { c < lim };
                        let count = points.iter().filter(|p| inside(p.0, u, cu) && inside(p.1, v, cv)).count() as f64;
                        best = best.max((count / n - u * v).abs());
                    }
                }
            }
        }
        best
    }

    #[test]
    fn star_discrepancy_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..30 {
            let len = 1 + trial % 25;
            let pts: Vec<(f64, f64)> = (0..len)
                .map(|_| {
                    // Coarse coordinates create ties and boundary points.
                    let snap = |v: f64| if trial % 3 == 0 { (v * 4.0).round() / 4.0 } else { v };
                    (snap(rng.random()), snap(rng.random()))
                })
                .collect();
            assert!((empirical_star_discrepancy(&pts).unwrap() - brute(&pts)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn regular_grid_matches_fine_scan() {
        let m = 7;
        let pts: Vec<(f64, f64)> = (0..m).flat_map(|i| (0..m).map(move |j| (i as f64 / m as f64, j as f64 / m as f64))).collect();
        let n = pts.len() as f64;
        let fine = 7 * 20;
        let mut scan: f64 = 0.0;
        for iu in 0..=fine {
            for iv in 0..=fine {
                let (u, v) = (iu as f64 / fine as f64, iv as f64 / fine as f64);
                for (du, dv) in [(0.0, 0.0), (1e-12, 0.0), (0.0, 1e-12), (1e-12, 1e-12)] {
                    let (uu, vv) = ((u + du).min(1.0), (v + dv).min(1.0));
                    let count = pts.iter().filter(|p| p.0 < uu && p.1 < vv).count() as f64;
                    scan = scan.max((count / n - uu * vv).abs());
                }
            }
        }
        assert!((empirical_star_discrepancy(&pts).unwrap() - scan).abs() < 1e-9);
    }
}
