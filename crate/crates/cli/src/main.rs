mod config;
mod values;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use gradinfo::bound_check::{run_bound_check, run_identity_instance, run_instance, tight_witness, write_bound_csv, write_identity_csv, BoundRow};
use gradinfo::gradient::Certificate;
use gradinfo::highfreq::discrepancy::{empirical_star_discrepancy, variance_bracket, variance_bracket_min, InputLaw};
use gradinfo::highfreq::landscape::{landscape_quadrature, landscape_series, omega_grid, series_tail_bound, series_truncation};
use gradinfo::highfreq::PeriodicFn;
use gradinfo::hypothesis::DEFAULT_SECRET_CAP;
use gradinfo::independence::EpsilonSpace;
use gradinfo::lwe_lab::{
    group_label, read_sweep_csv, regress_by_group, run_sweep, validate_grid, write_feature_stats_csv, write_fit_csv, write_scatter_csv,
    write_sweep_csv, Regressor, SweepGrid,
};
use gradinfo::measures::format_float;
use gradinfo::symmetric::{Family, DEFAULT_MULTISET_CAP};

use values::{IntSet, RealGrid, RealList};

/// Exact gradient-informativeness experiments: ε sweeps over restricted LWE
/// supports, variance-bound certification, and high-frequency landscapes.
#[derive(Parser, Debug)]
#[command(name = "gradinfo", version, args_override_self = true)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "GRADINFO_THREADS", default_value_t = 0)]
    threads: usize,
    /// Output CSV (default stdout). The run manifest goes to `<out>.manifest`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key=value` file of flags; flags on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Aggregate ε over a (q, n, l, a, kind) grid.
    EpsilonSweep(SweepArgs),
    /// Exact gradient variance against the assembled bound on seeded instances.
    BoundCheck(BoundArgs),
    /// bound-check with one line per instance on stderr.
    OracleVerify(BoundArgs),
    /// Nested OLS fits of −log ε on log|H| and log a from a sweep CSV.
    Regress(RegressArgs),
    /// The smoothed landscape C_h(ω) of h(x) = ψ(wx).
    Landscape(LandscapeArgs),
    /// Variance bracket for ψ(Rx) targets over a list of R.
    HighfreqBound(HighfreqArgs),
    /// Exact star discrepancy of a 2-D point set.
    Discrepancy(DiscrepancyArgs),
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma list of binary, ternary, uniform.
    #[arg(long, default_value = "binary,ternary")]
    kind: String,
    #[arg(long, default_value = "3,5,7")]
    q: IntSet,
    #[arg(long, default_value = "4..9")]
    n: IntSet,
    /// Secret heights; ignored for uniform secrets.
    #[arg(long, default_value = "1..4")]
    l: IntSet,
    #[arg(long, default_value = "2..7")]
    a: IntSet,
    #[arg(long, default_value = "tv")]
    space: EpsilonSpace,
    /// Column-multiset budget per traversal.
    #[arg(long, default_value_t = DEFAULT_MULTISET_CAP)]
    multiset_cap: u64,
    /// Report cells over the budget as failures instead of skipping them.
    #[arg(long)]
    fail_over_budget: bool,
    /// Also write `log_H,neg_log_eps,a` scatter data here.
    #[arg(long)]
    scatter: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long, default_value_t = 120)]
    count: u64,
    /// Largest hypothesis class an instance may enumerate.
    #[arg(long, default_value_t = DEFAULT_SECRET_CAP)]
    secret_cap: u64,
    /// Run only the q = 2 constant-model instance, where the bound is attained.
    #[arg(long)]
    tight_witness: bool,
    /// Also run the inversion identity and operator inequality checks and
    /// write their CSV here.
    #[arg(long)]
    identity_out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    identity_count: u64,
    /// Random probes per identity instance.
    #[arg(long, default_value_t = 50)]
    probes: usize,
}

#[derive(Args, Debug)]
struct RegressArgs {
    /// Sweep CSV produced by epsilon-sweep.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    scatter: Option<PathBuf>,
    /// Coefficients of larger regressor sets (statistics only).
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Series,
    Quadrature,
    Both,
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    /// sawtooth, square, constant:c, triangle:peak or pwl:x0:y0,x1:y1,...
    #[arg(long, default_value = "sawtooth")]
    psi: PeriodicFn,
    #[arg(long, default_value_t = 10.0)]
    w: f64,
    /// start:end:step, end inclusive.
    #[arg(long, default_value = "0:400:0.1")]
    omega: RealGrid,
    /// Series truncation; chosen from `tail_tol` when absent.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1e-7)]
    tail_tol: f64,
    #[arg(long, value_enum, default_value_t = Method::Series)]
    method: Method,
    #[arg(long, default_value_t = 1e-9)]
    quad_tol: f64,
}

#[derive(Args, Debug)]
struct HighfreqArgs {
    #[arg(long, default_value = "10,30,100,300,1000")]
    r: RealList,
    /// Upper end of the search over H.
    #[arg(long, default_value_t = 10_000)]
    h_max: u64,
    /// Evaluate at H = ⌊R⌋ instead of minimizing.
    #[arg(long)]
    h_from_r: bool,
    #[arg(long, default_value = "sawtooth")]
    psi: PeriodicFn,
    /// Squared norm of the parameter derivative of the model.
    #[arg(long, default_value_t = 1.0)]
    grad_norm_sq: f64,
    /// CSV with an `x` column sampling the input law; uniform on [0,1] if absent.
    #[arg(long)]
    sample: Option<PathBuf>,
    /// Monte-Carlo pairs drawn from the sample.
    #[arg(long, default_value_t = 100_000)]
    pairs: usize,
}

#[derive(Args, Debug)]
struct DiscrepancyArgs {
    /// CSV with columns `x,y` in [0,1].
    #[arg(long = "in")]
    input: PathBuf,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn to_u32(set: &IntSet, what: &str) -> Result<Vec<u32>> {
    set.0.iter().map(|&v| u32::try_from(v).map_err(|_| anyhow!("{what} value {v} is too large"))).collect()
}

fn parse_kinds(s: &str) -> Result<Vec<Family>> {
    let mut kinds = s.split(',').map(|k| Family::parse(k.trim())).collect::<gradinfo::Result<Vec<_>>>()?;
    kinds.sort();
    kinds.dedup();
    Ok(kinds)
}

fn cmd_epsilon_sweep(args: &SweepArgs, out: Option<&Path>) -> Result<ExitCode> {
    let grid = SweepGrid {
        qs: to_u32(&args.q, "q")?,
        ns: args.n.0.iter().map(|&v| v as usize).collect(),
        ls: args.l.0.iter().map(|&v| v as usize).collect(),
        as_: to_u32(&args.a, "a")?,
        kinds: parse_kinds(&args.kind)?,
        space: args.space,
        multiset_cap: args.multiset_cap,
        skip_over_budget: !args.fail_over_budget,
    };
    validate_grid(&grid)?;
    let res = run_sweep(&grid);
    write_sweep_csv(open_out(out)?, &res.rows)?;
    if let Some(p) = &args.scatter {
        write_scatter_csv(open_file(p)?, &res.rows)?;
    }
    eprintln!("{} rows; {} cells over budget skipped; {} failed", res.rows.len(), res.skipped.len(), res.failures.len());
    for f in &res.failures {
        let c = f.cell;
        eprintln!("  q={} n={} l={} a={} kind={}: {}", c.q, c.n, c.l, c.a, c.kind.name(), f.error);
    }
    Ok(if res.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_bound_check(args: &BoundArgs, seed: u64, out: Option<&Path>, verbose: bool) -> Result<ExitCode> {
    let rows: Vec<BoundRow> = if args.tight_witness {
        vec![run_instance(&tight_witness(), args.secret_cap)?]
    } else {
        run_bound_check(seed, args.count, args.secret_cap)?
    };
    write_bound_csv(open_out(out)?, &rows)?;
    let count = |c: Certificate| rows.iter().filter(|r| r.certificate == c).count();
    let (holds, violated, undecided) = (count(Certificate::Holds), count(Certificate::Violated), count(Certificate::Undecided));
    if verbose {
        for r in &rows {
            eprintln!(
                "instance {}: q={} n={} a={} {} {} {} variance={} bound={} slack={} {:?}",
                r.instance_id,
                r.q,
                r.n,
                r.a,
                r.kind,
                r.loss,
                r.space,
                format_float(r.variance),
                format_float(r.bound),
                format_float(r.slack),
                r.certificate
            );
        }
    }
    eprintln!("{} instances: {holds} hold, {violated} violated, {undecided} undecided", rows.len());
    let mut ok = violated == 0;
    if let Some(p) = &args.identity_out {
        let ids = (0..args.identity_count).map(|id| run_identity_instance(seed, id, args.probes)).collect::<gradinfo::Result<Vec<_>>>()?;
        write_identity_csv(open_file(p)?, &ids)?;
        let nonzero = ids.iter().filter(|r| !r.residual_is_zero).count();
        let viol: usize = ids.iter().map(|r| r.violations).sum();
        eprintln!("{} identity instances: {nonzero} nonzero residuals, {viol} operator violations", ids.len());
        ok &= nonzero == 0 && viol == 0;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_regress(args: &RegressArgs, out: Option<&Path>) -> Result<ExitCode> {
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let rows = read_sweep_csv(file)?;
    let mut fits = Vec::new();
    for ((q, kind), res) in regress_by_group(&rows) {
        match res {
            Ok(c) => {
                eprintln!(
                    "{}: R² {} without log a, {} with ({} rows, {} zero-ε rows excluded)",
                    group_label(q, kind),
                    format_float(c.without_log_a.r2),
                    format_float(c.with_log_a.r2),
                    c.with_log_a.nrows,
                    c.excluded_zero_eps
                );
                fits.push((group_label(q, kind), c));
            }
            Err(e) => eprintln!("{}: {e}", group_label(q, kind)),
        }
    }
    if fits.is_empty() {
        bail!("no group could be fitted");
    }
    write_fit_csv(open_out(out)?, &fits)?;
    if let Some(p) = &args.scatter {
        write_scatter_csv(open_file(p)?, &rows)?;
    }
    if let Some(p) = &args.features {
        let sets = [
            ("log_H+log_a+log_n+log_l", vec![Regressor::LogH, Regressor::LogA, Regressor::LogN, Regressor::LogL]),
            ("log_H+n_log_a", vec![Regressor::LogH, Regressor::NLogA]),
        ];
        write_feature_stats_csv(open_file(p)?, &rows, &sets)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_landscape(args: &LandscapeArgs, out: Option<&Path>) -> Result<ExitCode> {
    let omegas = omega_grid(args.omega.start, args.omega.end, args.omega.step)?;
    let omega_max = omegas.iter().fold(0.0f64, |m, o| m.max(o.abs()));
    let series = match args.method {
        Method::Quadrature => None,
        _ => {
            let k = match args.k {
                Some(k) => k,
                None => series_truncation(&args.psi, args.w, omega_max, args.tail_tol)?,
            };
            eprintln!("series truncation K = {k}, tail bound {}", format_float(series_tail_bound(&args.psi, args.w, omega_max, k)));
            Some(landscape_series(&args.psi, args.w, &omegas, k))
        }
    };
    let quad = match args.method {
        Method::Series => None,
        _ => {
            use rayon::prelude::*;
            let vals = omegas
                .par_iter()
                .map(|&o| landscape_quadrature(&args.psi, args.w, o, args.quad_tol).map(|r| r.value))
                .collect::<gradinfo::Result<Vec<_>>>()?;
            Some(vals)
        }
    };
    let mut w = open_out(out)?;
    match (&series, &quad) {
        (Some(_), Some(_)) => writeln!(w, "omega,C_h,C_h_quadrature")?,
        _ => writeln!(w, "omega,C_h")?,
    }
    for (i, o) in omegas.iter().enumerate() {
        match (&series, &quad) {
            (Some(s), Some(q)) => writeln!(w, "{},{},{}", format_float(*o), format_float(s[i]), format_float(q[i]))?,
            (Some(s), None) => writeln!(w, "{},{}", format_float(*o), format_float(s[i]))?,
            (None, Some(q)) => writeln!(w, "{},{}", format_float(*o), format_float(q[i]))?,
            (None, None) => unreachable!(),
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let idx = rd.headers()?.iter().position(|h| h == name).ok_or_else(|| anyhow!("{} has no `{name}` column", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let v = rec.get(idx).unwrap_or("").trim();
        out.push(v.parse().map_err(|_| anyhow!("{} row {}: `{v}` is not a number", path.display(), i + 2))?);
    }
    Ok(out)
}

fn cmd_highfreq_bound(args: &HighfreqArgs, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let law = match &args.sample {
        Some(p) => InputLaw::Empirical { points: read_column(p, "x")?, pairs: args.pairs, seed },
        None => InputLaw::Uniform01,
    };
    let v = args.psi.bv_norm();
    let factor = args.grad_norm_sq * v.max(v * v);
    let mut w = open_out(out)?;
    let with_se = matches!(law, InputLaw::Empirical { .. });
    writeln!(w, "{}", if with_se { "R,H_star,bracket,bound,char_sum_se" } else { "R,H_star,bracket,bound" })?;
    for &r in &args.r.0 {
        if !(r > 0.0) {
            bail!("R must be positive, got {r}");
        }
        let b = if args.h_from_r {
            variance_bracket(&law, r, (r.floor() as u64).max(1))?
        } else {
            variance_bracket_min(&law, r, args.h_max)?
        };
        let mut line = format!("{},{},{},{}", format_float(r), b.h, format_float(b.bracket), format_float(factor * b.bracket));
        if let Some(se) = b.std_error {
            line.push(',');
            line.push_str(&format_float(se));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_discrepancy(args: &DiscrepancyArgs, out: Option<&Path>) -> Result<ExitCode> {
    let xs = read_column(&args.input, "x")?;
    let ys = read_column(&args.input, "y")?;
    let pts: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
    let d = empirical_star_discrepancy(&pts)?;
    let mut w = open_out(out)?;
    writeln!(w, "N,D_star")?;
    writeln!(w, "{},{}", pts.len(), format_float(d))?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let out = cli.out.as_deref();
    match &cli.command {
        Cmd::EpsilonSweep(a) => cmd_epsilon_sweep(a, out),
        Cmd::BoundCheck(a) => cmd_bound_check(a, cli.seed, out, false),
        Cmd::OracleVerify(a) => cmd_bound_check(a, cli.seed, out, true),
        Cmd::Regress(a) => cmd_regress(a, out),
        Cmd::Landscape(a) => cmd_landscape(a, out),
        Cmd::HighfreqBound(a) => cmd_highfreq_bound(a, cli.seed, out),
        Cmd::Discrepancy(a) => cmd_discrepancy(a, out),
    }
}

fn main() -> ExitCode {
    let cmd = Cli::command();
    let args = match config::expand_config(&cmd, std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let matches = cmd.clone().get_matches_from(args);
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let (sub_name, sub_matches) = matches.subcommand().expect("subcommand is required");

    let manifest = config::manifest_text(&cmd, sub_name, sub_matches);
    let written = match &cli.out {
        Some(p) => {
            let mut path = p.clone().into_os_string();
            path.push(".manifest");
            std::fs::write(&path, &manifest).with_context(|| format!("writing {}", path.to_string_lossy()))
        }
        None => {
            eprint!("{manifest}");
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }

    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::FAILURE;
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
