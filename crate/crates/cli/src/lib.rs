//! Command-line driver. Exit codes: 0 when every pass flag holds, 1 on a
//! bound or certification failure, 2 on usage or configuration errors.

use std::fmt::Display;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lastiter::bounds::{self, BoundKind, BoundSpec};
use lastiter::certify::{self, CertificationRecord, SuiteOptions};
use lastiter::continual::{self, SetCollection};
use lastiter::harness::{self, ExperimentConfig, ExperimentReport, Study};
use lastiter::kaczmarz::{self, BlockSystem};
use lastiter::optimizer::SamplingScheme;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "lastiter",
    version,
    about = "Last-iterate SGD benchmarks and certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment from a JSON config.
    Bench(BenchArgs),
    /// Run the deterministic and Monte Carlo certification suite.
    Certify(CertifyArgs),
    /// Block Kaczmarz residual loss against its bound.
    Kaczmarz(SimArgs),
    /// Continual regression loss and forgetting against their bounds.
    Continual(SimArgs),
    /// POCS objective against its bound.
    Pocs(SimArgs),
    /// Evaluate one closed-form bound.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report stem; `.csv` and `.json` are written next to each other.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo replicates for the expected-slack check.
    #[arg(long, default_value_t = 10_000)]
    replicates: usize,
    /// Write the records as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    With,
    Without,
}

impl From<SchemeArg> for SamplingScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::With => SamplingScheme::WithReplacement,
            SchemeArg::Without => SamplingScheme::WithoutReplacement,
        }
    }
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 6)]
    d: usize,
    /// Number of blocks, tasks or sets.
    #[arg(long, default_value_t = 8)]
    m: usize,
    /// Largest horizon; dyadic horizons below it are reported too.
    #[arg(long = "T", default_value_t = 256)]
    t: usize,
    /// Relaxation (Kaczmarz only).
    #[arg(long, alias = "eta", default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SchemeArg::With)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    /// Rows per block or task.
    #[arg(long, default_value_t = 2)]
    block_size: usize,
    /// Read the system (text format) or set collection (JSON) from a file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the study as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    /// Bound name, e.g. thm1, thm2_tuned, avg_iterate_B.
    #[arg(long)]
    theorem: String,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Stepsize, or the relaxation for cor4_kaczmarz.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Squared initial distance, or ‖x★‖² for cor4_kaczmarz.
    #[arg(long, default_value_t = 1.0)]
    d0sq: f64,
    #[arg(long, default_value_t = 0.0)]
    sigmasq: f64,
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha_sc: f64,
    #[arg(long, default_value_t = 1.0)]
    r_sq: f64,
    #[arg(long)]
    without_replacement: bool,
}

fn usage(msg: impl Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn exit_for(pass: bool) -> i32 {
    if pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Bench(a) => bench(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Kaczmarz(a) => kaczmarz_cmd(a),
        Command::Continual(a) => continual_cmd(a),
        Command::Pocs(a) => pocs_cmd(a),
        Command::Bounds(a) => bounds_cmd(a),
    }
}

fn bench(a: BenchArgs) -> i32 {
    let mut cfg = match ExperimentConfig::load(&a.config) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(out) = a.out {
        cfg.output = Some(out);
    }
    let report = match harness::run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return usage(format!("{}: {e}", a.config.display())),
    };
    print_report(&report);
    if let Some(out) = &cfg.output {
        match harness::write_report(&report, out) {
            Ok((csv, json)) => println!("wrote {} and {}", csv.display(), json.display()),
            Err(e) => return usage(e),
        }
    }
    exit_for(report.all_pass)
}

fn print_report(r: &ExperimentReport) {
    println!("{} config {}", r.version, &r.config_hash[..16]);
    let names = r.bound_names();
    let mut header = format!("{:>8} {:>12} {:>14} {:>12}", "T", "eta", "mean", "stderr");
    for n in &names {
        header.push_str(&format!(" {n:>18}"));
    }
    println!("{header}");
    for row in &r.rows {
        let mut line = format!(
            "{:>8} {:>12.6e} {:>14.6e} {:>12.4e}",
            row.t, row.eta, row.mean, row.stderr
        );
        for (b, p) in row.bounds.iter().zip(&row.pass) {
            line.push_str(&format!(" {:>13.6e} {:>4}", b, verdict(*p)));
        }
        println!("{line}");
    }
    match &r.rate_fit {
        Some(f) => println!(
            "rate fit: slope {:.4} ± {:.4}, r² {:.4}, T in [{}, {}], {} excluded",
            f.slope, f.slope_stderr, f.r_squared, f.fit_range.0, f.fit_range.1, f.excluded
        ),
        None => println!(
            "rate fit: not enough nonzero means ({} excluded)",
            r.rate_fit_excluded
        ),
    }
    println!("overall: {}", verdict(r.all_pass));
}

fn write_json<T: serde::Serialize>(path: &Option<PathBuf>, value: &T) -> Result<(), i32> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).map_err(usage)?;
        std::fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn certify_cmd(a: CertifyArgs) -> i32 {
    let opts = SuiteOptions {
        seed: a.seed,
        lemma1_replicates: a.replicates,
        ..SuiteOptions::default()
    };
    let records: Vec<CertificationRecord> = match certify::run_certification_suite(&opts) {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    println!("{:<24} {:>16} {:>6}  params", "check", "margin_or_z", "");
    for r in &records {
        println!(
            "{:<24} {:>16.6e} {:>6}  {}",
            r.check_name,
            r.margin_or_z,
            verdict(r.pass),
            r.params
        );
    }
    if let Err(code) = write_json(&a.json, &records) {
        return code;
    }
    let pass = records.iter().all(|r| r.pass);
    println!("overall: {}", verdict(pass));
    exit_for(pass)
}

/// Dyadic horizons from 2 below `t`, then `t` itself.
fn horizons(t: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (1..usize::BITS)
        .map(|k| 1usize << k)
        .take_while(|&h| h < t)
        .collect();
    g.push(t);
    g
}

fn print_studies(studies: &[Study]) -> i32 {
    let mut pass = true;
    for s in studies {
        println!("{}", s.quantity);
        println!(
            "{:>8} {:>14} {:>12} {:>14} {:>6}",
            "T", "mean", "stderr", "bound", ""
        );
        for r in &s.rows {
            println!(
                "{:>8} {:>14.6e} {:>12.4e} {:>14.6e} {:>6}",
                r.t,
                r.mean,
                r.stderr,
                r.bound,
                verdict(r.pass)
            );
        }
        pass &= s.all_pass();
    }
    println!("overall: {}", verdict(pass));
    exit_for(pass)
}

fn sim_checks(a: &SimArgs) -> Result<(), i32> {
    if a.t < 2 {
        return Err(usage(format!("--T must be at least 2, got {}", a.t)));
    }
    Ok(())
}

fn load_system(a: &SimArgs) -> Result<BlockSystem, String> {
    match &a.input {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            BlockSystem::from_text(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
        None => kaczmarz::make_block_system(a.d, a.m, &vec![a.block_size; a.m], a.seed, true)
            .map_err(|e| e.to_string()),
    }
}

fn kaczmarz_cmd(a: SimArgs) -> i32 {
    if let Err(c) = sim_checks(&a) {
        return c;
    }
    let sys = match load_system(&a) {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    match harness::kaczmarz_study(
        &sys,
        a.c,
        a.scheme.into(),
        &horizons(a.t),
        a.replicates,
        a.seed,
    ) {
        Ok(s) => {
            let studies = [s];
            if let Err(c) = write_json(&a.json, &studies) {
                return c;
            }
            print_studies(&studies)
        }
        Err(e) => usage(e),
    }
}

fn continual_cmd(a: SimArgs) -> i32 {
    if let Err(c) = sim_checks(&a) {
        return c;
    }
    let tasks = match load_system(&a)
        .and_then(|s| continual::TaskCollection::new(s).map_err(|e| e.to_string()))
    {
        Ok(t) => t,
        Err(e) => return usage(e),
    };
    match harness::continual_study(
        &tasks,
        a.scheme.into(),
        &horizons(a.t),
        a.replicates,
        a.seed,
    ) {
        Ok(s) => {
            if let Err(c) = write_json(&a.json, &s) {
                return c;
            }
            print_studies(&s)
        }
        Err(e) => usage(e),
    }
}

fn pocs_cmd(a: SimArgs) -> i32 {
    if let Err(c) = sim_checks(&a) {
        return c;
    }
    let sets = match &a.input {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| e.to_string())
            .and_then(|t| SetCollection::from_json(&t).map_err(|e| e.to_string()))
            .map_err(|e| format!("{}: {e}", p.display())),
        None => continual::make_set_collection(a.d, a.m, a.seed).map_err(|e| e.to_string()),
    };
    let sets = match sets {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    match harness::pocs_study(&sets, a.scheme.into(), &horizons(a.t), a.replicates, a.seed) {
        Ok(s) => {
            let studies = [s];
            if let Err(c) = write_json(&a.json, &studies) {
                return c;
            }
            print_studies(&studies)
        }
        Err(e) => usage(e),
    }
}

/// Rounds to 12 significant digits so exact values print exactly.
fn display_value(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    format!("{rounded}")
}

fn bounds_cmd(a: BoundsArgs) -> i32 {
    let Some(kind) = BoundKind::from_name(&a.theorem) else {
        let names: Vec<&str> = BoundKind::ALL.iter().map(|k| k.name()).collect();
        return usage(format!(
            "unknown theorem '{}'; expected one of {}",
            a.theorem,
            names.join(", ")
        ));
    };
    let spec = BoundSpec {
        beta: a.beta,
        eta: a.eta,
        d0_sq: a.d0sq,
        sigma_star_sq: a.sigmasq,
        alpha_sc: a.alpha_sc,
        r_sq: a.r_sq,
        without_replacement: a.without_replacement,
    };
    match bounds::evaluate(kind, &spec, a.t) {
        Ok(v) => {
            println!("{}", display_value(v));
            EXIT_PASS
        }
        Err(e) => usage(e),
    }
}
