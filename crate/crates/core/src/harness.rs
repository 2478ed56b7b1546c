//! Experiment orchestration: Monte Carlo grids against bound curves, rate
//! fits on log-log axes, report persistence, and Monte Carlo studies for the
//! Kaczmarz, continual regression and POCS simulations.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bounds::{self, BoundKind, BoundSpec, DomainError};
use crate::continual::{self, ContinualError, SetCollection, TaskCollection};
use crate::kaczmarz::{self, BlockSystem, KaczmarzError};
use crate::linalg::{self, dist_sq, norm_sq};
use crate::optimizer::{
    self, Estimand, McPoint, OptimizerError, SamplingScheme, StepsizePolicy, Trajectory,
};
use crate::problems::{self, ProblemError, ProblemInstance};

/// Means at or below this value are left out of rate fits.
pub const FIT_FLOOR: f64 = 1e-15;

pub fn version() -> String {
    format!("lastiter {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "rate fit needs at least 3 points above the floor, got {usable} ({excluded} excluded)"
    )]
    InsufficientPoints { usable: usize, excluded: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Bound(#[from] DomainError),
    #[error(transparent)]
    Kaczmarz(#[from] KaczmarzError),
    #[error(transparent)]
    Continual(#[from] ContinualError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which instance to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProblemSpec {
    RealizableLs {
        d: usize,
        n: usize,
        seed: u64,
    },
    LowNoiseLs {
        d: usize,
        n: usize,
        sigma_star: f64,
        seed: u64,
    },
    RealizableLogcosh {
        d: usize,
        n: usize,
        seed: u64,
    },
    StronglyConvexLs {
        d: usize,
        n: usize,
        alpha: f64,
        seed: u64,
    },
    /// A serialized instance on disk.
    File {
        path: PathBuf,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ProblemInstance, HarnessError> {
        Ok(match self {
            Self::RealizableLs { d, n, seed } => {
                problems::make_realizable_least_squares(*d, *n, *seed)?
            }
            Self::LowNoiseLs {
                d,
                n,
                sigma_star,
                seed,
            } => problems::make_low_noise_least_squares(*d, *n, *sigma_star, *seed)?,
            Self::RealizableLogcosh { d, n, seed } => {
                problems::make_logcosh_realizable(*d, *n, *seed)?
            }
            Self::StronglyConvexLs { d, n, alpha, seed } => {
                problems::make_strongly_convex_ls(*d, *n, *alpha, *seed)?
            }
            Self::File { path } => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                ProblemInstance::from_json(&text)?
            }
        })
    }
}

/// Starting point of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartSpec {
    /// `x★` itself.
    Optimum,
    /// `x★ + distance · u` with `u` uniform on the unit sphere.
    Offset {
        distance: f64,
        seed: u64,
    },
    Zero,
    Point {
        x: Vec<f64>,
    },
}

impl StartSpec {
    pub fn build(&self, p: &ProblemInstance) -> Result<Vec<f64>, HarnessError> {
        let x = match self {
            Self::Optimum => p.x_star.clone(),
            Self::Offset { distance, seed } => {
                if !(*distance >= 0.0 && distance.is_finite()) {
                    return Err(HarnessError::Config(format!("offset distance {distance}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let u = linalg::unit_vector(&mut rng, p.dim);
                p.x_star
                    .iter()
                    .zip(u)
                    .map(|(a, b)| a + distance * b)
                    .collect()
            }
            Self::Zero => vec![0.0; p.dim],
            Self::Point { x } => x.clone(),
        };
        p.check_point(&x)?;
        Ok(x)
    }
}

fn default_estimand() -> Estimand {
    Estimand::LastIterate
}

/// JSON experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub x1: StartSpec,
    pub policy: StepsizePolicy,
    pub scheme: SamplingScheme,
    pub t_grid: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_estimand")]
    pub estimand: Estimand,
    #[serde(default)]
    pub bounds: Vec<BoundKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks the grid, replicate count and bound selection. Problem-dependent
    /// checks happen in [`run_experiment`].
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.t_grid.is_empty() {
            return Err(HarnessError::Config("t_grid is empty".into()));
        }
        if self.t_grid[0] < 2 {
            return Err(HarnessError::Config(format!(
                "horizons must be >= 2, got {}",
                self.t_grid[0]
            )));
        }
        if self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Config(
                "t_grid must be strictly increasing".into(),
            ));
        }
        if self.replicates < 2 {
            return Err(HarnessError::Config(format!(
                "replicates must be >= 2, got {}",
                self.replicates
            )));
        }
        let mut seen = Vec::new();
        for &b in &self.bounds {
            match b.estimand() {
                None => {
                    return Err(HarnessError::Config(format!(
                        "{} bounds a Kaczmarz quantity, not an SGD experiment",
                        b.name()
                    )))
                }
                Some(e) if e != self.estimand => {
                    return Err(HarnessError::Config(format!(
                        "{} bounds {}, but the experiment measures {:?}",
                        b.name(),
                        b.quantity_label(),
                        self.estimand
                    )))
                }
                _ => {}
            }
            if seen.contains(&b) {
                return Err(HarnessError::Config(format!("{} selected twice", b.name())));
            }
            seen.push(b);
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON encoding with `output` cleared, so the
    /// same experiment written to different paths shares a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// OLS fit of `log mean = intercept + slope · log T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
    pub fit_range: (usize, usize),
    pub excluded: usize,
}

/// Fits a power law to `(T, mean)` pairs, skipping means at or below
/// [`FIT_FLOOR`].
pub fn fit_rate(points: &[(usize, f64)]) -> Result<RateFit, HarnessError> {
    let usable: Vec<(f64, f64, usize)> = points
        .iter()
        .filter(|(t, m)| *t > 0 && *m > FIT_FLOOR && m.is_finite())
        .map(|&(t, m)| ((t as f64).ln(), m.ln(), t))
        .collect();
    let excluded = points.len() - usable.len();
    if usable.len() < 3 {
        return Err(HarnessError::InsufficientPoints {
            usable: usable.len(),
            excluded,
        });
    }
    let k = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / k;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(HarnessError::InsufficientPoints {
            usable: 1,
            excluded,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = usable
        .iter()
        .map(|p| {
            let e = p.1 - intercept - slope * p.0;
            e * e
        })
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let slope_stderr = (sse / (k - 2.0) / sxx).sqrt();
    let t_min = usable.iter().map(|p| p.2).min().unwrap_or(0);
    let t_max = usable.iter().map(|p| p.2).max().unwrap_or(0);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
        fit_range: (t_min, t_max),
        excluded,
    })
}

/// Pass rule for a Monte Carlo mean against an upper bound.
pub fn passes(mean: f64, stderr: f64, bound: f64) -> bool {
    mean <= bound + 2.0 * stderr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: usize,
    pub eta: f64,
    pub mean: f64,
    pub stderr: f64,
    /// One value per selected bound, in selection order.
    pub bounds: Vec<f64>,
    pub pass: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub beta: f64,
    pub d0_sq: f64,
    pub sigma_star_sq: f64,
    pub rows: Vec<ReportRow>,
    pub rate_fit: Option<RateFit>,
    /// Points left out of the rate fit.
    pub rate_fit_excluded: usize,
    pub all_pass: bool,
}

impl ExperimentReport {
    pub fn bound_names(&self) -> Vec<&'static str> {
        self.config.bounds.iter().map(|b| b.name()).collect()
    }
}

/// Builds the instance, runs the Monte Carlo grid and evaluates the selected
/// bounds at each horizon's resolved stepsize.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    log::info!(
        "experiment {} with {} replicates",
        &cfg.hash()[..16],
        cfg.replicates
    );
    let p = cfg.problem.build()?;
    let x1 = cfg.x1.build(&p)?;
    let d0_sq = dist_sq(&x1, &p.x_star);
    let etas = cfg
        .t_grid
        .iter()
        .map(|&t| optimizer::resolve_for(&p, &x1, cfg.policy, t))
        .collect::<Result<Vec<_>, _>>()?;
    let points = optimizer::mc_excess_risk(
        &p,
        &x1,
        cfg.policy,
        cfg.scheme,
        &cfg.t_grid,
        cfg.replicates,
        cfg.base_seed,
        cfg.estimand,
    )?;
    let mut rows = Vec::with_capacity(points.len());
    for (pt, &eta) in points.iter().zip(&etas) {
        let spec = BoundSpec {
            beta: p.beta,
            eta,
            d0_sq,
            sigma_star_sq: p.sigma_star_sq,
            alpha_sc: p.strong_convexity,
            r_sq: 1.0,
            without_replacement: cfg.scheme == SamplingScheme::WithoutReplacement,
        };
        let values = cfg
            .bounds
            .iter()
            .map(|&b| bounds::evaluate(b, &spec, pt.t))
            .collect::<Result<Vec<_>, _>>()?;
        let pass = values
            .iter()
            .map(|&b| passes(pt.mean, pt.stderr, b))
            .collect();
        rows.push(ReportRow {
            t: pt.t,
            eta,
            mean: pt.mean,
            stderr: pt.stderr,
            bounds: values,
            pass,
        });
    }
    let fit_input: Vec<(usize, f64)> = rows.iter().map(|r| (r.t, r.mean)).collect();
    let (rate_fit, rate_fit_excluded) = match fit_rate(&fit_input) {
        Ok(f) => (Some(f), f.excluded),
        Err(HarnessError::InsufficientPoints { excluded, .. }) => (None, excluded),
        Err(e) => return Err(e),
    };
    let all_pass = rows.iter().all(|r| r.pass.iter().all(|&b| b));
    Ok(ExperimentReport {
        version: version(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        beta: p.beta,
        d0_sq,
        sigma_star_sq: p.sigma_star_sq,
        rows,
        rate_fit,
        rate_fit_excluded,
        all_pass,
    })
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// The data grid as CSV: `T, mean_excess, stderr, bound_<name>…, pass_<name>…`.
pub fn report_csv(report: &ExperimentReport) -> String {
    let names = report.bound_names();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["T".to_string(), "mean_excess".into(), "stderr".into()];
    header.extend(names.iter().map(|n| format!("bound_{n}")));
    header.extend(names.iter().map(|n| format!("pass_{n}")));
    w.write_record(&header).expect("in-memory write");
    for r in &report.rows {
        let mut rec = vec![r.t.to_string(), fmt_float(r.mean), fmt_float(r.stderr)];
        rec.extend(r.bounds.iter().map(|&b| fmt_float(b)));
        rec.extend(
            r.pass
                .iter()
                .map(|&p| if p { "1".to_string() } else { "0".to_string() }),
        );
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Paths of the CSV grid and JSON document for a report rooted at `path`.
pub fn report_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("csv"), path.with_extension("json"))
}

/// Writes `<path>.csv` and `<path>.json` (any extension on `path` is
/// replaced) and returns both paths.
pub fn write_report(
    report: &ExperimentReport,
    path: &Path,
) -> Result<(PathBuf, PathBuf), HarnessError> {
    let (csv_path, json_path) = report_paths(path);
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(&csv_path, report_csv(report)).map_err(io_err(&csv_path))?;
    let json = serde_json::to_string_pretty(report)?;
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    Ok((csv_path, json_path))
}

/// Reads a report written by [`write_report`] and checks that the CSV grid
/// agrees with the JSON document.
pub fn read_report(path: &Path) -> Result<ExperimentReport, HarnessError> {
    let (csv_path, json_path) = report_paths(path);
    let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
    let report: ExperimentReport =
        serde_json::from_str(&text).map_err(|e| HarnessError::Format {
            path: json_path.clone(),
            msg: e.to_string(),
        })?;
    let bad = |msg: String| HarnessError::Format {
        path: csv_path.clone(),
        msg,
    };
    let file = fs::File::open(&csv_path).map_err(io_err(&csv_path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let names = report.bound_names();
    let k = names.len();
    if header.len() != 3 + 2 * k {
        return Err(bad(format!(
            "expected {} columns, found {}",
            3 + 2 * k,
            header.len()
        )));
    }
    let mut n_rows = 0;
    for (j, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = report.rows.get(j).ok_or_else(|| {
            bad(format!(
                "row {} has no counterpart in the JSON document",
                j + 1
            ))
        })?;
        let num = |c: usize| -> Result<f64, HarnessError> {
            rec[c]
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}, column {}: {e}", j + 1, &header[c])))
        };
        let t: usize = rec[0]
            .parse()
            .map_err(|e| bad(format!("row {}: {e}", j + 1)))?;
        let mut same = t == row.t && num(1)? == row.mean && num(2)? == row.stderr;
        for b in 0..k {
            same &= num(3 + b)? == row.bounds[b];
            same &= (&rec[3 + k + b] == "1") == row.pass[b];
        }
        if !same {
            return Err(bad(format!(
                "row {} disagrees with the JSON document",
                j + 1
            )));
        }
        n_rows += 1;
    }
    if n_rows != report.rows.len() {
        return Err(bad(format!(
            "{n_rows} rows, JSON document has {}",
            report.rows.len()
        )));
    }
    Ok(report)
}

/// One horizon of a simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub t: usize,
    pub mean: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

/// A Monte Carlo quantity measured along simulated runs and its bound curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub quantity: String,
    pub rows: Vec<StudyRow>,
}

impl Study {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn check_grid(t_grid: &[usize], replicates: usize) -> Result<usize, HarnessError> {
    if t_grid.is_empty() || t_grid[0] < 2 || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config(
            "t_grid must be strictly increasing with entries >= 2".into(),
        ));
    }
    if replicates < 2 {
        return Err(HarnessError::Config(format!(
            "replicates must be >= 2, got {replicates}"
        )));
    }
    Ok(*t_grid.last().expect("nonempty"))
}

type Metric<'a> = &'a (dyn Fn(&Trajectory, usize) -> f64 + Sync);

/// Runs one trajectory per seed to the largest horizon and evaluates each
/// metric at every horizon. Sampling streams are prefix-consistent, so the
/// prefix of a long run is the run of the shorter horizon.
fn simulate<R, const K: usize>(
    t_grid: &[usize],
    replicates: usize,
    base_seed: u64,
    run: R,
    metrics: [Metric<'_>; K],
) -> Result<[Vec<McPoint>; K], HarnessError>
where
    R: Fn(u64, usize) -> Result<Trajectory, HarnessError> + Sync,
{
    let t_max = check_grid(t_grid, replicates)?;
    let flat_grid: Vec<usize> = (0..K).flat_map(|_| t_grid.iter().copied()).collect();
    let flat = optimizer::mc_estimate(&flat_grid, replicates, base_seed, |seed| {
        let tr = run(seed, t_max)?;
        Ok::<_, HarnessError>(
            metrics
                .iter()
                .flat_map(|m| t_grid.iter().map(|&t| m(&tr, t)).collect::<Vec<_>>())
                .collect(),
        )
    })?;
    let mut chunks = flat.chunks(t_grid.len());
    Ok(std::array::from_fn(|_| {
        chunks.next().expect("K chunks").to_vec()
    }))
}

fn study<B>(quantity: &str, points: Vec<McPoint>, bound: B) -> Result<Study, HarnessError>
where
    B: Fn(usize) -> Result<f64, DomainError>,
{
    let rows = points
        .into_iter()
        .map(|p| {
            let b = bound(p.t)?;
            Ok(StudyRow {
                t: p.t,
                mean: p.mean,
                stderr: p.stderr,
                bound: b,
                pass: passes(p.mean, p.stderr, b),
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(Study {
        quantity: quantity.to_string(),
        rows,
    })
}

/// Block Kaczmarz from zero: residual loss at `x_T` against the relaxation
/// bound.
pub fn kaczmarz_study(
    sys: &BlockSystem,
    c: f64,
    scheme: SamplingScheme,
    t_grid: &[usize],
    replicates: usize,
    base_seed: u64,
) -> Result<Study, HarnessError> {
    let xs_sq = norm_sq(sys.solution()?);
    let r_sq = sys.r * sys.r;
    let metric = |tr: &Trajectory, t: usize| kaczmarz::kaczmarz_loss(sys, tr.x(t));
    let [pts] = simulate(
        t_grid,
        replicates,
        base_seed,
        |seed, t| Ok(kaczmarz::run_kaczmarz(sys, c, scheme, t, seed)?),
        [&metric],
    )?;
    let wor = scheme == SamplingScheme::WithoutReplacement;
    study("kaczmarz_loss_x_T", pts, |t| {
        bounds::kaczmarz_bound(r_sq, xs_sq, c, t, wor)
    })
}

/// Continual regression from zero: population loss at `x_{T+1}` and
/// forgetting over the first `T` tasks, measured at both `x_T` and `x_{T+1}`.
pub fn continual_study(
    tasks: &TaskCollection,
    scheme: SamplingScheme,
    t_grid: &[usize],
    replicates: usize,
    base_seed: u64,
) -> Result<Vec<Study>, HarnessError> {
    let xs_sq = norm_sq(tasks.x_star());
    let r_sq = tasks.r() * tasks.r();
    let wor = scheme == SamplingScheme::WithoutReplacement;
    let loss = |tr: &Trajectory, t: usize| continual::population_loss(tasks, tr.x(t + 1));
    let forget_last = |tr: &Trajectory, t: usize| {
        continual::forgetting(tasks, &tr.indices[..t], tr.x(t)).expect("indices come from the run")
    };
    let forget_final = |tr: &Trajectory, t: usize| {
        continual::forgetting(tasks, &tr.indices[..t], tr.x(t + 1))
            .expect("indices come from the run")
    };
    let [a, b, c] = simulate(
        t_grid,
        replicates,
        base_seed,
        |seed, t| Ok(continual::run_continual_regression(tasks, scheme, t, seed)?),
        [&loss, &forget_last, &forget_final],
    )?;
    Ok(vec![
        study("population_loss_x_T+1", a, |t| {
            bounds::continual_loss_bound(r_sq, xs_sq, t)
        })?,
        study("forgetting_x_T", b, |t| {
            bounds::forgetting_bound(r_sq, xs_sq, t, wor)
        })?,
        study("forgetting_x_T+1", c, |t| {
            bounds::forgetting_bound(r_sq, xs_sq, t, wor)
        })?,
    ])
}

/// POCS from zero: the projection-distance objective at `x_T`.
pub fn pocs_study(
    sets: &SetCollection,
    scheme: SamplingScheme,
    t_grid: &[usize],
    replicates: usize,
    base_seed: u64,
) -> Result<Study, HarnessError> {
    let dist0 = continual::intersection_distance_sq(sets, &vec![0.0; sets.dim()])?;
    let metric = |tr: &Trajectory, t: usize| continual::pocs_objective(sets, tr.x(t));
    let [pts] = simulate(
        t_grid,
        replicates,
        base_seed,
        |seed, t| Ok(continual::run_pocs(sets, scheme, t, seed)?),
        [&metric],
    )?;
    study("pocs_objective_x_T", pts, |t| bounds::pocs_bound(dist0, t))
}

/// Dyadic horizons `2^lo, …, 2^hi`.
pub fn dyadic_grid(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}
