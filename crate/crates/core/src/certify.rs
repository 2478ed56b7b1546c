//! Numerical certificates for the inequalities behind the last-iterate
//! analysis: the weighted regret telescope (deterministic, per trajectory),
//! its expected form (Monte Carlo), the weight schedule, two scalar lemmas,
//! cocoercivity and the invariance of `σ★²` across minimizers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::linalg::{self, dist_sq, dot, norm, norm_sq};
use crate::optimizer::{self, OptimizerError, RecordFlags, SamplingScheme, Trajectory};
use crate::problems::{self, FiniteSum, ProblemError, ProblemInstance};

/// Relative slack allowed on deterministic inequality margins.
pub const MARGIN_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("invalid parameter: {0}")]
    Domain(String),
    #[error("trajectory has {trajectory} steps but the schedule has {schedule}")]
    LengthMismatch { trajectory: usize, schedule: usize },
    #[error("point is not a minimizer: ‖∇F‖ = {residual:e}")]
    NotAMinimizer { residual: f64 },
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Analysis weights `v_0..v_T` and the induced coefficients `c_1..c_T` for a
/// constant stepsize `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub t: usize,
    pub alpha: f64,
    pub eta: f64,
    /// `v[k]` is `v_k` for `k = 0..=T`.
    pub v: Vec<f64>,
    /// `c[k]` is `c_{k+1}`.
    pub c: Vec<f64>,
}

impl WeightSchedule {
    /// `c_t` using one-based `t`.
    pub fn c_at(&self, t: usize) -> f64 {
        self.c[t - 1]
    }

    /// `a_t = (v_t − v_{t−1}) Σ_{s=t}^T v_s` for `t = 1..=T`, indexed from zero.
    pub fn a(&self) -> Vec<f64> {
        let suffix = suffix_sums(&self.v[1..]);
        (1..=self.t)
            .map(|t| (self.v[t] - self.v[t - 1]) * suffix[t - 1])
            .collect()
    }

    /// Largest violation of `0 < v_0 ≤ … ≤ v_T` and of `a_t ≤ v_t²` for
    /// `t < T`; nonpositive when the schedule is valid.
    pub fn max_violation(&self) -> f64 {
        let mut worst = -self.v[0];
        for w in self.v.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
        for (k, a) in self.a().iter().enumerate().take(self.t - 1) {
            let t = k + 1;
            worst = worst.max(a - self.v[t] * self.v[t]);
        }
        worst
    }
}

/// `out[k] = Σ_{j ≥ k} xs[j]`.
fn suffix_sums(xs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    let mut acc = 0.0;
    for (k, x) in xs.iter().enumerate().rev() {
        acc += x;
        out[k] = acc;
    }
    out
}

/// `v_t = (T − t + 2)^{−α}` for `1 ≤ t ≤ T−1`, `v_T = v_{T−1}`,
/// `v_0 = (T + 2)^{−α}`, and
/// `c_t = η v_t² − (v_t − v_{t−1}) Σ_{s=t}^T η v_s`.
pub fn build_weight_schedule(
    t: usize,
    alpha: f64,
    eta: f64,
) -> Result<WeightSchedule, CertifyError> {
    if t < 2 {
        return Err(CertifyError::Domain(format!(
            "schedule needs T >= 2, got {t}"
        )));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(CertifyError::Domain(format!(
            "alpha = {alpha} outside (0, 1/2)"
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(CertifyError::Domain(format!("eta = {eta}")));
    }
    let tf = t as f64;
    let mut v = vec![0.0; t + 1];
    v[0] = (tf + 2.0).powf(-alpha);
    for (k, vk) in v.iter_mut().enumerate().take(t).skip(1) {
        *vk = (tf - k as f64 + 2.0).powf(-alpha);
    }
    v[t] = v[t - 1];
    let eta_v: Vec<f64> = v[1..].iter().map(|x| eta * x).collect();
    let suffix = suffix_sums(&eta_v);
    let c = (1..=t)
        .map(|k| eta * v[k] * v[k] - (v[k] - v[k - 1]) * suffix[k - 1])
        .collect();
    Ok(WeightSchedule {
        t,
        alpha,
        eta,
        v,
        c,
    })
}

/// Both sides of the telescoped regret inequality for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelescopeMargin {
    /// `Σ_t η v_t² ⟨∇f_t(x_t), x_t − y_t⟩`.
    pub lhs: f64,
    /// `½ v_0² ‖x_1 − x_ref‖² + ½ Σ_t η² v_t² ‖∇f_t(x_t)‖²`.
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
    /// `1 + |lhs| + |rhs|`.
    pub scale: f64,
}

impl TelescopeMargin {
    pub fn holds(&self) -> bool {
        self.margin >= -MARGIN_TOL * self.scale
    }

    pub fn relative(&self) -> f64 {
        self.margin / self.scale
    }
}

/// Rebuilds the auxiliary sequence `y_0 = x_ref`,
/// `y_t = (v_{t−1}/v_t) y_{t−1} + (1 − v_{t−1}/v_t) x_t` and evaluates the
/// telescoped inequality along `tr`, replaying each sampled gradient.
pub fn check_regret_telescope<P: FiniteSum + ?Sized>(
    tr: &Trajectory,
    p: &P,
    ws: &WeightSchedule,
    x_ref: &[f64],
) -> Result<TelescopeMargin, CertifyError> {
    if tr.steps() != ws.t {
        return Err(CertifyError::LengthMismatch {
            trajectory: tr.steps(),
            schedule: ws.t,
        });
    }
    let eta = tr.eta;
    let v = &ws.v;
    let mut y = x_ref.to_vec();
    let mut lhs = 0.0;
    let mut rhs = 0.5 * v[0] * v[0] * dist_sq(tr.x(1), x_ref);
    for t in 1..=ws.t {
        let x = tr.x(t);
        let ratio = v[t - 1] / v[t];
        y = y
            .iter()
            .zip(x)
            .map(|(yi, xi)| ratio * yi + (1.0 - ratio) * xi)
            .collect();
        let g = p.component_grad(tr.indices[t - 1], x);
        lhs += eta * v[t] * v[t] * dot(&g, &linalg::sub(x, &y));
        rhs += 0.5 * eta * eta * v[t] * v[t] * norm_sq(&g);
    }
    let margin = rhs - lhs;
    Ok(TelescopeMargin {
        lhs,
        rhs,
        margin,
        scale: 1.0 + lhs.abs() + rhs.abs(),
    })
}

/// Largest `‖∇f_i(x) − ∇f_i(y)‖² − β ⟨∇f_i(x) − ∇f_i(y), x − y⟩` over
/// `pair_count` random pairs around `x★` and every component.
pub fn check_cocoercivity(p: &ProblemInstance, pair_count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pair_count {
        let spread: f64 = rng.random_range(0.1..3.0);
        let x: Vec<f64> = p
            .x_star
            .iter()
            .zip(linalg::gaussian(&mut rng, p.dim))
            .map(|(a, g)| a + spread * g)
            .collect();
        let y: Vec<f64> = p
            .x_star
            .iter()
            .zip(linalg::gaussian(&mut rng, p.dim))
            .map(|(a, g)| a + spread * g)
            .collect();
        let dx = linalg::sub(&x, &y);
        for c in &p.components {
            let dg = linalg::sub(&c.gradient(&x), &c.gradient(&y));
            worst = worst.max(norm_sq(&dg) - p.beta * dot(&dg, &dx));
        }
    }
    worst
}

/// Largest value of
/// `(1+c)^{−α} + Σ_{i=1}^n (i+c)^{−α} − (n+c)^{1−α}/(1−α)` over the grid and
/// every `n` in `0..=n_max` (the `n = 0` comparison is against `c^{1−α}/(1−α)`).
pub fn check_lemma_sum_vt(cs: &[f64], alphas: &[f64], n_max: usize) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for &c in cs {
        for &alpha in alphas {
            let e = 1.0 - alpha;
            let mut sum = (1.0 + c).powf(-alpha);
            worst = worst.max(sum - c.powf(e) / e);
            for n in 1..=n_max {
                let nc = n as f64 + c;
                sum += nc.powf(-alpha);
                worst = worst.max(sum - nc.powf(e) / e);
            }
        }
    }
    worst
}

/// Largest value of `x^{−α} − (x+1)^{−α} − α/(x (x+1)^α)` over the grid.
/// The difference on the left is formed without cancellation.
pub fn check_lemma_diff_vt(xs: &[f64], alphas: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for &x in xs {
        for &alpha in alphas {
            let lhs = -x.powf(-alpha) * (-alpha * (1.0 / x).ln_1p()).exp_m1();
            let rhs = alpha / (x * (x + 1.0).powf(alpha));
            worst = worst.max(lhs - rhs);
        }
    }
    worst
}

/// `|σ²(x1) − σ²(x2)|` for two minimizers of a degenerate instance, where
/// `σ²(x) = (1/n) Σ ‖∇f_i(x)‖²`.
pub fn check_sigma_star_invariance(
    p: &ProblemInstance,
    x1: &[f64],
    x2: &[f64],
) -> Result<f64, CertifyError> {
    for x in [x1, x2] {
        p.check_point(x)?;
        let residual = norm(&p.mean_grad(x));
        if residual > 1e-10 {
            return Err(CertifyError::NotAMinimizer { residual });
        }
    }
    Ok((p.gradient_variance_at(x1) - p.gradient_variance_at(x2)).abs())
}

/// Monte Carlo estimate of the slack in the expected weighted regret bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Estimate {
    pub mean: f64,
    pub stderr: f64,
    /// `mean / stderr`, zero when both vanish.
    pub z: f64,
}

/// Per-run slack `RHS − LHS` of the weighted regret inequality, including
/// the `1/(2β)` gradient-difference terms; cross terms replay the sampled
/// component at earlier iterates.
pub fn lemma1_slack(p: &ProblemInstance, tr: &Trajectory, ws: &WeightSchedule) -> f64 {
    let eta = tr.eta;
    let v = &ws.v;
    let xs = &p.x_star;
    let mut lhs = 0.0;
    let mut rhs = 0.5 * v[0] * v[0] * dist_sq(tr.x(1), xs);
    let mut penalty = 0.0;
    for t in 1..=ws.t {
        let c = &p.components[tr.indices[t - 1]];
        let x = tr.x(t);
        let g = c.gradient(x);
        lhs += ws.c_at(t) * (c.value(x) - c.value(xs));
        rhs += 0.5 * eta * eta * v[t] * v[t] * norm_sq(&g);
        let mut inner = v[0] * dist_sq(&g, &c.gradient(xs));
        for s in 1..=t {
            inner += (v[s] - v[s - 1]) * dist_sq(&g, &c.gradient(tr.x(s)));
        }
        penalty += eta * v[t] * inner;
    }
    rhs - penalty / (2.0 * p.beta) - lhs
}

/// Averages [`lemma1_slack`] over with-replacement runs from `x1` with seeds
/// `seed..seed+replicates`.
pub fn check_lemma1_expectation(
    p: &ProblemInstance,
    x1: &[f64],
    eta: f64,
    ws: &WeightSchedule,
    replicates: usize,
    seed: u64,
) -> Result<Lemma1Estimate, CertifyError> {
    if replicates < 2 {
        return Err(CertifyError::Domain("need at least 2 replicates".into()));
    }
    let slacks: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let tr = optimizer::run_sgd_with_stepsize(
                p,
                x1,
                eta,
                SamplingScheme::WithReplacement,
                ws.t,
                seed.wrapping_add(k),
                RecordFlags::default(),
            )?;
            Ok(lemma1_slack(p, &tr, ws))
        })
        .collect::<Result<_, OptimizerError>>()?;
    let (mean, stderr) = optimizer::summarize(&slacks);
    let z = if stderr > 0.0 {
        mean / stderr
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    Ok(Lemma1Estimate { mean, stderr, z })
}

/// One line of the certification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationRecord {
    pub check_name: String,
    pub params: serde_json::Value,
    pub margin_or_z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub telescope_trajectories: usize,
    pub schedule_t_max: usize,
    pub sum_vt_n_max: usize,
    pub cocoercivity_pairs: usize,
    pub lemma1_replicates: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            telescope_trajectories: 100,
            schedule_t_max: 512,
            sum_vt_n_max: 10_000,
            cocoercivity_pairs: 1000,
            lemma1_replicates: 10_000,
        }
    }
}

/// `k / den` for `k = lo..=hi`.
fn grid(lo: u32, hi: u32, den: f64) -> Vec<f64> {
    (lo..=hi).map(|k| k as f64 / den).collect()
}

fn family_samples(seed: u64) -> Result<Vec<ProblemInstance>, CertifyError> {
    Ok(vec![
        problems::make_realizable_least_squares(6, 30, seed)?,
        problems::make_low_noise_least_squares(6, 30, 0.2, seed)?,
        problems::make_logcosh_realizable(6, 30, seed)?,
        problems::make_strongly_convex_ls(4, 30, 0.05, seed)?,
    ])
}

/// Telescope margins on random runs across all families, with random
/// `α ∈ (0.05, 0.45)`, `η ∈ (0.05, 1.95)/β`, horizons and reference points.
/// Returns the smallest relative margin.
pub fn telescope_sweep(count: usize, seed: u64) -> Result<f64, CertifyError> {
    let families = family_samples(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e1e);
    let mut worst = f64::INFINITY;
    for k in 0..count {
        let p = &families[k % families.len()];
        let alpha: f64 = rng.random_range(0.05..0.45);
        let eta: f64 = rng.random_range(0.05..1.95) / p.beta;
        let t: usize = rng.random_range(2..=200);
        let x1: Vec<f64> = linalg::gaussian(&mut rng, p.dim);
        let x_ref = if k % 2 == 0 {
            p.x_star.clone()
        } else {
            linalg::gaussian(&mut rng, p.dim)
        };
        let tr = optimizer::run_sgd_with_stepsize(
            p,
            &x1,
            eta,
            SamplingScheme::WithReplacement,
            t,
            seed.wrapping_add(k as u64),
            RecordFlags::default(),
        )?;
        let ws = build_weight_schedule(t, alpha, eta)?;
        let m = check_regret_telescope(&tr, p, &ws, &x_ref)?;
        worst = worst.min(m.relative());
    }
    Ok(worst)
}

/// Runs every certificate with the given options.
pub fn run_certification_suite(
    opts: &SuiteOptions,
) -> Result<Vec<CertificationRecord>, CertifyError> {
    log::info!("certification suite with seed {}", opts.seed);
    let mut out = Vec::new();
    let rec = |name: &str, params: serde_json::Value, value: f64, pass: bool| CertificationRecord {
        check_name: name.to_string(),
        params,
        margin_or_z: value,
        pass,
    };

    let worst = telescope_sweep(opts.telescope_trajectories, opts.seed)?;
    out.push(rec(
        "regret_telescope",
        json!({"trajectories": opts.telescope_trajectories, "seed": opts.seed, "tolerance": MARGIN_TOL}),
        worst,
        worst >= -MARGIN_TOL,
    ));

    let alphas = grid(1, 9, 20.0);
    let mut worst_schedule = f64::NEG_INFINITY;
    for t in 2..=opts.schedule_t_max {
        for &alpha in &alphas {
            worst_schedule =
                worst_schedule.max(build_weight_schedule(t, alpha, 1.0)?.max_violation());
        }
    }
    out.push(rec(
        "weight_schedule",
        json!({"t_max": opts.schedule_t_max, "alphas": alphas}),
        worst_schedule,
        worst_schedule <= 0.0,
    ));

    let cs = [1.0, 2.0, 5.0, 10.0];
    let sum_alphas = grid(1, 9, 10.0);
    let sum_worst = check_lemma_sum_vt(&cs, &sum_alphas, opts.sum_vt_n_max);
    out.push(rec(
        "lemma_sum_vt",
        json!({"c": cs, "alphas": sum_alphas, "n_max": opts.sum_vt_n_max}),
        sum_worst,
        sum_worst <= 1e-12,
    ));

    let xs: Vec<f64> = (0..=600).map(|k| 10f64.powf(k as f64 / 100.0)).collect();
    let diff_alphas = grid(1, 19, 20.0);
    let diff_worst = check_lemma_diff_vt(&xs, &diff_alphas);
    out.push(rec(
        "lemma_diff_vt",
        json!({"x_min": 1.0, "x_max": 1e6, "points": xs.len(), "alphas": diff_alphas}),
        diff_worst,
        diff_worst <= 1e-12,
    ));

    for p in family_samples(opts.seed)? {
        let v = check_cocoercivity(&p, opts.cocoercivity_pairs, opts.seed);
        out.push(rec(
            "cocoercivity",
            json!({"family": p.family, "pairs": opts.cocoercivity_pairs}),
            v,
            v <= 1e-9,
        ));
    }

    for sigma in [0.0, 0.3] {
        let (p, null) = problems::make_degenerate_least_squares(3, 2, 12, sigma, opts.seed)?;
        let other: Vec<f64> = p
            .x_star
            .iter()
            .zip(&null)
            .map(|(x, n)| x + 1.7 * n)
            .collect();
        let v = check_sigma_star_invariance(&p, &p.x_star, &other)?;
        out.push(rec(
            "sigma_star_invariance",
            json!({"d": 3, "rank": 2, "n": 12, "sigma_star": sigma}),
            v,
            v <= 1e-10,
        ));
    }

    let p = problems::make_low_noise_least_squares(2, 3, 0.3, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let x1: Vec<f64> = p
        .x_star
        .iter()
        .zip(linalg::unit_vector(&mut rng, 2))
        .map(|(a, u)| a + u)
        .collect();
    let eta = 0.5;
    let alpha = (2.0 - p.beta * eta) / 4.0;
    let ws = build_weight_schedule(8, alpha, eta)?;
    let est = check_lemma1_expectation(&p, &x1, eta, &ws, opts.lemma1_replicates, opts.seed)?;
    out.push(rec(
        "lemma1_expectation",
        json!({"d": 2, "n": 3, "T": 8, "eta": eta, "alpha": alpha,
               "replicates": opts.lemma1_replicates, "mean": est.mean, "stderr": est.stderr}),
        est.z,
        est.z >= -2.0,
    ));
    Ok(out)
}
