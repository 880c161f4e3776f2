//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//!
//! Criteria run one after another (timing bounds assume nothing else is
//! competing). Each produces the CSV it is judged on; the last criterion reruns
//! 1–9 under 1, 4 and 8 worker threads and compares those bytes.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::One;

use gradinfo::bound_check::{run_bound_check, run_identity_instance, tight_witness, write_bound_csv, write_identity_csv};
use gradinfo::gradient::{exact_gradient_variance, lwe_uniform_bound, lwe_uniform_factor, variance_bound, Certificate, ModelSpec};
use gradinfo::highfreq::discrepancy::{variance_bracket, InputLaw};
use gradinfo::highfreq::landscape::{landscape_quadrature, landscape_series, omega_grid, series_truncation};
use gradinfo::highfreq::wrapped::{required_wrap_k, wrapped_gaussian_tv, Gaussian2Cov, WRAP_TOL};
use gradinfo::highfreq::PeriodicFn;
use gradinfo::hypothesis::{enumerate_secrets, SecretKind, DEFAULT_SECRET_CAP};
use gradinfo::independence::{closed_form_epsilon_uniform_lwe, epsilon_diag, epsilon_pearson, joint_output_pmf, EpsilonSpace, EvalTable};
use gradinfo::lwe_lab::{group_label, regress_by_group, run_sweep, write_fit_csv, write_sweep_csv, SweepGrid};
use gradinfo::measures::{format_float, uniform_outputs};
use gradinfo::Error;

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
    csv: Vec<u8>,
}

type Check = fn() -> gradinfo::Result<Outcome>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: Check,
}

fn ff(v: f64) -> String {
    format_float(v)
}

fn c1_closed_form() -> gradinfo::Result<Outcome> {
    let mut csv = String::from("q,x,x2,eps_sq_enumerated,eps_sq_closed_form\n");
    let mut pairs = 0usize;
    let mut mismatches = 0usize;
    let mut expected = 0usize;
    for q in [3u32, 5] {
        let class = enumerate_secrets(SecretKind::Uniform, q, 2, DEFAULT_SECRET_CAP)?;
        let mu_y = uniform_outputs(q);
        let pts: Vec<[u32; 2]> = (0..q).flat_map(|a| (0..q).map(move |b| [a, b])).filter(|p| *p != [0, 0]).collect();
        expected += pts.len() * pts.len();
        for x in &pts {
            for y in &pts {
                let e = if x == y {
                    epsilon_diag(&class, x, &mu_y, EpsilonSpace::Pearson)?
                } else {
                    epsilon_pearson(&joint_output_pmf(&class, x, y)?, &mu_y)?
                };
                let c = closed_form_epsilon_uniform_lwe(q, x, y)?;
                let (es, cs) = (e.sq.exact().cloned(), c.sq.exact().cloned());
                if es.is_none() || es != cs {
                    mismatches += 1;
                }
                let show = |v: Option<BigRational>| v.map_or("inexact".to_string(), |r| r.to_string());
                csv.push_str(&format!("{q},{}:{},{}:{},{},{}\n", x[0], x[1], y[0], y[1], show(es), show(cs)));
                pairs += 1;
            }
        }
    }
    let pass = mismatches == 0 && pairs == expected && pairs == 64 + 576;
    Ok(Outcome { pass, detail: format!("{pairs} ordered pairs, {mismatches} mismatches"), csv: csv.into_bytes() })
}

fn c2_soundness() -> gradinfo::Result<Outcome> {
    let rows = run_bound_check(SEED, 120, DEFAULT_SECRET_CAP)?;
    let mut csv = Vec::new();
    write_bound_csv(&mut csv, &rows)?;
    let violated = rows.iter().filter(|r| r.certificate == Certificate::Violated).count();
    let undecided = rows.iter().filter(|r| r.certificate == Certificate::Undecided).count();
    let qs: BTreeSet<u32> = rows.iter().map(|r| r.q).collect();
    let ns: BTreeSet<usize> = rows.iter().map(|r| r.n).collect();
    let kinds: BTreeSet<&str> = rows.iter().map(|r| r.kind.split('-').next().unwrap_or("")).collect();
    let losses: BTreeSet<&str> = rows.iter().map(|r| r.loss.name()).collect();
    let spaces: BTreeSet<&str> = rows.iter().map(|r| r.space.name()).collect();
    let covered = qs.len() == 3 && ns.len() == 3 && kinds.len() == 3 && losses.len() == 2 && spaces.len() == 2;
    let max_ratio = rows.iter().filter(|r| r.bound > 0.0).map(|r| r.variance / r.bound).fold(0.0f64, f64::max);
    Ok(Outcome {
        pass: rows.len() >= 100 && violated == 0 && undecided == 0 && covered,
        detail: format!(
            "{} instances, {violated} violated, {undecided} undecided, coverage {}, max variance/bound {}",
            rows.len(),
            if covered { "complete" } else { "incomplete" },
            ff(max_ratio)
        ),
        csv,
    })
}

fn c3_witness() -> gradinfo::Result<Outcome> {
    let spec = tight_witness();
    let (class, mu_x) = spec.explicit.clone().expect("witness carries its class");
    let table = EvalTable::from_class(&class, mu_x.domain())?;
    let model = ModelSpec::new(spec.features.clone(), spec.weights.clone(), spec.loss, spec.encoder)?;
    let variance: BigRational = exact_gradient_variance(&model, &table, &mu_x, spec.coord)?;
    let b = variance_bound(&model, &table, &mu_x, &uniform_outputs(spec.q), spec.space, spec.coord)?;
    let bound = b.bound_exact();
    let one = BigRational::one();
    let pass = class.len() == 2 && variance == one && bound.as_ref() == Some(&one);
    let bound_s = bound.map_or("inexact".to_string(), |r| r.to_string());
    Ok(Outcome {
        pass,
        detail: format!("{} hypotheses, variance {variance}, bound {bound_s}", class.len()),
        csv: format!("hypotheses,variance,bound\n{},{variance},{bound_s}\n", class.len()).into_bytes(),
    })
}

fn c4_scaling() -> gradinfo::Result<Outcome> {
    let (q, n) = (7u32, 3usize);
    let mut csv = String::from("a,a_pow_n_minus_1,factor,bound\n");
    let mut pts = Vec::new();
    let mut bounds = Vec::new();
    for a in 2..=7u32 {
        let m = (a as f64).powi(n as i32) - 1.0;
        let f = lwe_uniform_factor(q, n, a);
        let b = lwe_uniform_bound(q, n, a, 1.0, 1.0)?;
        csv.push_str(&format!("{a},{},{},{}\n", ff(m), ff(f), ff(b)));
        pts.push((m.ln(), f.ln()));
        bounds.push(b);
    }
    let k = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let monotone = bounds.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        pass: (slope + 0.5).abs() <= 1e-6 && monotone,
        detail: format!("log-log slope {}, bound strictly decreasing in a: {monotone}", ff(slope)),
        csv: csv.into_bytes(),
    })
}

fn c5_regression() -> gradinfo::Result<Outcome> {
    let grid = SweepGrid::full_default();
    let res = run_sweep(&grid);
    if let Some(f) = res.failures.first() {
        return Ok(Outcome { pass: false, detail: format!("sweep cell failed: {:?}: {}", f.cell, f.error), csv: Vec::new() });
    }
    let mut fits = Vec::new();
    let mut notes = Vec::new();
    let mut pass = true;
    for ((q, kind), fit) in regress_by_group(&res.rows) {
        let label = group_label(q, kind);
        match fit {
            Ok(c) => {
                let (r0, r1) = (c.without_log_a.r2, c.with_log_a.r2);
                let ok = r1 > r0 && r0 > 0.5 && r0 <= 1.0 && r1 > 0.5 && r1 <= 1.0;
                pass &= ok;
                notes.push(format!("{label} {}→{}", ff((r0 * 1e3).round() / 1e3), ff((r1 * 1e3).round() / 1e3)));
                fits.push((label, c));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{label} failed: {e}"));
            }
        }
    }
    pass &= fits.len() == 6;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &res.rows)?;
    write_fit_csv(&mut csv, &fits)?;
    Ok(Outcome {
        pass,
        detail: format!("{} cells, {} over budget; R² without→with: {}", res.rows.len(), res.skipped.len(), notes.join(", ")),
        csv,
    })
}

fn c6_landscape() -> gradinfo::Result<Outcome> {
    let saw = PeriodicFn::sawtooth();
    let omegas = omega_grid(0.0, 500.0, 0.1)?;
    let mut csv = String::from("w,omega,C_h_series,C_h_quadrature\n");
    let mut worst = 0.0f64;
    let mut plateau = (0usize, 0usize);
    for w in [10.0, 40.0] {
        let k = series_truncation(&saw, w, 500.0, 5e-7)?;
        let series = landscape_series(&saw, w, &omegas, k);
        for (o, s) in omegas.iter().zip(&series) {
            let qv = landscape_quadrature(&saw, w, *o, 1e-9)?.value;
            worst = worst.max((qv - s).abs());
            csv.push_str(&format!("{},{},{},{}\n", ff(w), ff(*o), ff(*s), ff(qv)));
            if w == 40.0 {
                let i = (o / (2.0 * PI * w)).round();
                if (o - 2.0 * PI * w * i).abs() > 1.0 {
                    plateau.1 += 1;
                    if s.abs() < 0.05 {
                        plateau.0 += 1;
                    }
                }
            }
        }
    }
    let frac = plateau.0 as f64 / plateau.1 as f64;
    Ok(Outcome {
        pass: worst <= 1e-6 && frac >= 0.95,
        detail: format!("max |series − quadrature| {}, plateau fraction {} of {} points", ff(worst), ff(frac), plateau.1),
        csv: csv.into_bytes(),
    })
}

fn c7_decay() -> gradinfo::Result<Outcome> {
    let mut csv = String::from("R,H,bracket,reference,ratio\n");
    let mut ratios = Vec::new();
    for r in [10.0f64, 30.0, 100.0, 300.0, 1000.0] {
        let h = r.floor() as u64;
        let b = variance_bracket(&InputLaw::Uniform01, r, h)?;
        let reference = (r + 1.0).ln().powi(2) / (r + 1.0).sqrt();
        let ratio = b.bracket / reference;
        csv.push_str(&format!("{},{h},{},{},{}\n", ff(r), ff(b.bracket), ff(reference), ff(ratio)));
        ratios.push(ratio);
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    Ok(Outcome {
        pass: lo > 0.0 && hi / lo <= 10.0,
        detail: format!("bracket / reference in [{}, {}], band factor {}", ff(lo), ff(hi), ff(hi / lo)),
        csv: csv.into_bytes(),
    })
}

fn c8_wrapped() -> gradinfo::Result<Outcome> {
    let grid_m = 256;
    let mut csv = String::from("R,tv,resolution,K,neglected_mass\n");
    let mut tvs = Vec::new();
    let mut audit = true;
    for r in [5.0f64, 10.0, 20.0, 40.0] {
        let cov = Gaussian2Cov::isotropic(r)?;
        let t = wrapped_gaussian_tv(&cov, grid_m, None)?;
        audit &= t.neglected_mass <= WRAP_TOL;
        // a K one short of the requirement must be refused
        let short = required_wrap_k(&cov, WRAP_TOL) - 1;
        audit &= matches!(wrapped_gaussian_tv(&cov, 64, Some(short)), Err(Error::Truncation { .. }));
        csv.push_str(&format!("{},{},{},{},{}\n", ff(r), ff(t.tv), ff(t.resolution()), t.k, ff(t.neglected_mass)));
        tvs.push((r, t));
    }
    let mut notes = Vec::new();
    let mut pass = audit;
    for w in tvs.windows(2) {
        let ((r, a), (_, b)) = (&w[0], &w[1]);
        let resolved = a.tv > a.resolution() && b.tv > b.resolution();
        let ratio = b.tv / a.tv;
        pass &= resolved && (0.15..=0.35).contains(&ratio);
        // leading Fourier mode: TV(R) ≈ (8/π²)·exp(−2π²R²), so log ratio ≈ −6π²R²
        let analytic = -6.0 * PI * PI * r * r;
        notes.push(format!(
            "R={}: ratio {} ({}), analytic log ratio {}",
            ff(*r),
            ff(ratio),
            if resolved { "resolved" } else { "below roundoff resolution" },
            ff(analytic.round())
        ));
    }
    Ok(Outcome {
        pass,
        detail: format!("truncation audit {}; {}", if audit { "passed" } else { "FAILED" }, notes.join("; ")),
        csv: csv.into_bytes(),
    })
}

fn c9_identities() -> gradinfo::Result<Outcome> {
    let rows = (0..20).map(|id| run_identity_instance(SEED, id, 50)).collect::<gradinfo::Result<Vec<_>>>()?;
    let mut csv = Vec::new();
    write_identity_csv(&mut csv, &rows)?;
    let nonzero = rows.iter().filter(|r| !r.residual_is_zero).count();
    let violations: usize = rows.iter().map(|r| r.violations).sum();
    let probes: usize = rows.iter().map(|r| r.probes).sum();
    Ok(Outcome {
        pass: rows.len() == 20 && nonzero == 0 && violations == 0 && probes == 1000,
        detail: format!("{} instances, {nonzero} nonzero residuals, {violations} violations in {probes} probes", rows.len()),
        csv,
    })
}

fn criteria() -> Vec<Criterion> {
    let s = Duration::from_secs;
    vec![
        Criterion { id: 1, name: "closed-form agreement", limit: Some(s(10)), run: c1_closed_form },
        Criterion { id: 2, name: "bound soundness", limit: Some(s(120)), run: c2_soundness },
        Criterion { id: 3, name: "tightness witness", limit: None, run: c3_witness },
        Criterion { id: 4, name: "uniform-secret scaling", limit: None, run: c4_scaling },
        Criterion { id: 5, name: "regression direction", limit: Some(s(600)), run: c5_regression },
        Criterion { id: 6, name: "landscape dual path and plateau", limit: None, run: c6_landscape },
        Criterion { id: 7, name: "bracket decay band", limit: Some(s(60)), run: c7_decay },
        Criterion { id: 8, name: "wrapped-Gaussian TV decay", limit: None, run: c8_wrapped },
        Criterion { id: 9, name: "inversion identity and operator inequality", limit: None, run: c9_identities },
    ]
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool").install(f)
}

fn main() {
    let list = criteria();
    let mut all_pass = true;
    let mut reference: Vec<Option<Vec<u8>>> = Vec::new();
    for c in &list {
        let start = Instant::now();
        let out = in_pool(1, c.run);
        let took = start.elapsed();
        let (pass, detail, csv) = match out {
            Ok(o) => (o.pass, o.detail, Some(o.csv)),
            Err(e) => (false, format!("error: {e}"), None),
        };
        let in_time = c.limit.is_none_or(|l| took <= l);
        let ok = pass && in_time;
        all_pass &= ok;
        let limit = c.limit.map_or(String::new(), |l| format!(", limit {}s", l.as_secs()));
        println!(
            "criterion {:>2} {}: {} [{:.1}s{limit}] {detail}",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        reference.push(csv);
    }

    let mut diffs = Vec::new();
    for threads in [4usize, 8] {
        for (c, want) in list.iter().zip(&reference) {
            let got = in_pool(threads, c.run).ok().map(|o| o.csv);
            if got.is_none() || want.is_none() || got != *want {
                diffs.push(format!("{}@{threads}", c.id));
            }
        }
    }
    let ok = diffs.is_empty();
    all_pass &= ok;
    println!(
        "criterion 10 determinism across 1/4/8 threads: {} {}",
        if ok { "PASS" } else { "FAIL" },
        if ok { "all nine CSVs byte-identical".to_string() } else { format!("differing: {}", diffs.join(", ")) }
    );
    if !all_pass {
        std::process::exit(1);
    }
}
