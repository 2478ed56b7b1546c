//! Fixed-stepsize SGD with and without replacement, trajectory records and
//! seed-ordered Monte Carlo estimates.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds;
use crate::linalg::{self, dist_sq, norm_sq};
use crate::problems::{FiniteSum, ProblemInstance};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("stepsize {eta} outside (0, {limit}) for beta = {beta}")]
    StepsizeOutOfRange { eta: f64, beta: f64, limit: f64 },
    #[error("without-replacement sampling needs T <= n, got T = {t}, n = {n}")]
    PermutationTooShort { t: usize, n: usize },
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    WithReplacement,
    WithoutReplacement,
}

/// How the constant stepsize is chosen for a run of length `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizePolicy {
    Fixed {
        eta: f64,
    },
    /// `1/β`.
    Greedy,
    /// `1/(β log2 T)`.
    LogTuned,
    /// `min{1/(β log2 T), D0/√(σ★² T log2(T+2))}`.
    Thm2Tuned,
    /// `min{1/(β ln T), D0/√(σ★² T ln T)}`.
    #[serde(rename = "thmD_tuned")]
    ThmDTuned,
}

impl StepsizePolicy {
    /// Resolves the stepsize for horizon `t` and checks it lies in the
    /// admissible range: `(0, 2/β)`, or `(0, 1/β)` for `ThmDTuned`.
    pub fn resolve(
        &self,
        beta: f64,
        d0: f64,
        sigma_star_sq: f64,
        t: usize,
    ) -> Result<f64, OptimizerError> {
        let needs_horizon = !matches!(self, Self::Fixed { .. } | Self::Greedy);
        if needs_horizon && t < 2 {
            return Err(OptimizerError::InvalidArgument(format!(
                "{self:?} needs a horizon T >= 2, got {t}"
            )));
        }
        let sigma = sigma_star_sq.max(0.0).sqrt();
        let (eta, limit) = match *self {
            Self::Fixed { eta } => (eta, 2.0 / beta),
            Self::Greedy => (1.0 / beta, 2.0 / beta),
            Self::LogTuned => (1.0 / (beta * (t as f64).log2()), 2.0 / beta),
            Self::Thm2Tuned => (
                bounds::tuned_low_noise_stepsize(beta, d0, sigma, t),
                2.0 / beta,
            ),
            Self::ThmDTuned => {
                if t < 3 {
                    return Err(OptimizerError::InvalidArgument(format!(
                        "thmD_tuned needs T >= 3, got {t}"
                    )));
                }
                (bounds::tuned_small_stepsize(beta, d0, sigma, t), 1.0 / beta)
            }
        };
        check_stepsize(eta, beta, limit)?;
        Ok(eta)
    }

    /// Whether the resolved stepsize changes with the horizon.
    pub fn depends_on_horizon(&self) -> bool {
        !matches!(self, Self::Fixed { .. } | Self::Greedy)
    }
}

fn check_stepsize(eta: f64, beta: f64, limit: f64) -> Result<(), OptimizerError> {
    if !(eta > 0.0 && eta < limit) || !eta.is_finite() {
        return Err(OptimizerError::StepsizeOutOfRange { eta, beta, limit });
    }
    Ok(())
}

/// Seeded stream of component indices.
///
/// With replacement draws i.i.d. uniform indices. Without replacement
/// shuffles all `n` indices once (Fisher-Yates) and reads them in order, so
/// a shorter run is always a prefix of a longer one with the same seed.
pub struct IndexStream {
    rng: ChaCha8Rng,
    n: usize,
    permutation: Option<Vec<usize>>,
    pos: usize,
}

impl IndexStream {
    pub fn new(
        n: usize,
        scheme: SamplingScheme,
        t: usize,
        seed: u64,
    ) -> Result<Self, OptimizerError> {
        if n == 0 {
            return Err(OptimizerError::InvalidArgument(
                "no components to sample".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let permutation = match scheme {
            SamplingScheme::WithReplacement => None,
            SamplingScheme::WithoutReplacement => {
                if t > n {
                    return Err(OptimizerError::PermutationTooShort { t, n });
                }
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                Some(p)
            }
        };
        Ok(Self {
            rng,
            n,
            permutation,
            pos: 0,
        })
    }

    pub fn next_index(&mut self) -> usize {
        let i = match &self.permutation {
            Some(p) => p[self.pos],
            None => self.rng.random_range(0..self.n),
        };
        self.pos += 1;
        i
    }
}

/// Full record of one run: `iterates[k]` is `x_{k+1}`, so `iterates` holds
/// `x_1..x_{T+1}` and `indices[k]` is the component used to leave `x_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub eta: f64,
    pub seed: u64,
    pub indices: Vec<usize>,
    pub iterates: Vec<Vec<f64>>,
    pub gradient_norms_sq: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.indices.len()
    }

    /// `x_t` using the one-based indexing of the analysis.
    pub fn x(&self, t: usize) -> &[f64] {
        &self.iterates[t - 1]
    }

    /// The reported last iterate `x_T` (after `T − 1` updates).
    pub fn last_iterate(&self) -> &[f64] {
        self.x(self.steps().max(1))
    }

    /// `x_{T+1}`, the point after all `T` updates.
    pub fn final_point(&self) -> &[f64] {
        self.iterates.last().expect("trajectory holds x_1")
    }

    /// Largest per-step deviation between two runs, measured coordinatewise
    /// relative to the larger sup-norm of the two iterates (zero when both
    /// vanish). Infinite if the runs differ in length or sampled indices.
    pub fn max_relative_deviation(&self, other: &Trajectory) -> f64 {
        if self.indices != other.indices || self.iterates.len() != other.iterates.len() {
            return f64::INFINITY;
        }
        self.iterates
            .iter()
            .zip(&other.iterates)
            .map(|(a, b)| {
                let scale = linalg::max_abs(a).max(linalg::max_abs(b));
                let diff = linalg::max_abs(&linalg::sub(a, b));
                if diff == 0.0 {
                    0.0
                } else {
                    diff / scale
                }
            })
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, index, x0.., gradient_norm_sq`. Row `T+1` holds
    /// the final point with empty index and gradient fields.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let d = self.iterates[0].len();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "index".to_string()];
        header.extend((0..d).map(|k| format!("x{k}")));
        header.push("gradient_norm_sq".into());
        out.write_record(&header)?;
        for (k, x) in self.iterates.iter().enumerate() {
            let mut row = vec![(k + 1).to_string()];
            row.push(
                self.indices
                    .get(k)
                    .map(|i| i.to_string())
                    .unwrap_or_default(),
            );
            row.extend(x.iter().map(|v| format!("{v:.16e}")));
            let g = self
                .gradient_norms_sq
                .as_ref()
                .and_then(|g| g.get(k))
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default();
            row.push(g);
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordFlags {
    pub gradient_norms: bool,
}

/// Core recursion `x_{t+1} = x_t − η ∇f_{i_t}(x_t)`. `visit(t, x_t, i_t, g_t)`
/// is called for `t = 1..T` before each update; the final point is returned.
pub(crate) fn sgd_scan<P, V>(
    oracle: &P,
    x1: &[f64],
    eta: f64,
    stream: &mut IndexStream,
    t_steps: usize,
    mut visit: V,
) -> Vec<f64>
where
    P: FiniteSum + ?Sized,
    V: FnMut(usize, &[f64], usize, &[f64]),
{
    let mut x = x1.to_vec();
    for t in 1..=t_steps {
        let i = stream.next_index();
        let g = oracle.component_grad(i, &x);
        visit(t, &x, i, &g);
        x = linalg::step(&x, eta, &g);
    }
    x
}

/// SGD with an explicit stepsize on any finite-sum oracle.
pub fn run_sgd_with_stepsize<P: FiniteSum + ?Sized>(
    oracle: &P,
    x1: &[f64],
    eta: f64,
    scheme: SamplingScheme,
    t_steps: usize,
    seed: u64,
    record: RecordFlags,
) -> Result<Trajectory, OptimizerError> {
    if x1.len() != oracle.dim() {
        return Err(OptimizerError::DimensionMismatch {
            expected: oracle.dim(),
            got: x1.len(),
        });
    }
    let beta = oracle.smoothness();
    check_stepsize(eta, beta, 2.0 / beta)?;
    let mut stream = IndexStream::new(oracle.len(), scheme, t_steps, seed)?;
    let mut indices = Vec::with_capacity(t_steps);
    let mut iterates = Vec::with_capacity(t_steps + 1);
    let mut grads = record.gradient_norms.then(|| Vec::with_capacity(t_steps));
    let last = sgd_scan(oracle, x1, eta, &mut stream, t_steps, |_, x, i, g| {
        indices.push(i);
        iterates.push(x.to_vec());
        if let Some(gs) = grads.as_mut() {
            gs.push(norm_sq(g));
        }
    });
    iterates.push(last);
    Ok(Trajectory {
        eta,
        seed,
        indices,
        iterates,
        gradient_norms_sq: grads,
    })
}

/// SGD on a problem instance, resolving the stepsize policy from its
/// smoothness, `‖x1 − x★‖` and `σ★²`.
pub fn run_sgd(
    p: &ProblemInstance,
    x1: &[f64],
    policy: StepsizePolicy,
    scheme: SamplingScheme,
    t_steps: usize,
    seed: u64,
    record: RecordFlags,
) -> Result<Trajectory, OptimizerError> {
    let eta = resolve_for(p, x1, policy, t_steps)?;
    run_sgd_with_stepsize(p, x1, eta, scheme, t_steps, seed, record)
}

/// Resolves `policy` for horizon `t` with `D0 = ‖x1 − x★‖`.
pub fn resolve_for(
    p: &ProblemInstance,
    x1: &[f64],
    policy: StepsizePolicy,
    t: usize,
) -> Result<f64, OptimizerError> {
    if x1.len() != p.dim {
        return Err(OptimizerError::DimensionMismatch {
            expected: p.dim,
            got: x1.len(),
        });
    }
    let d0 = dist_sq(x1, &p.x_star).sqrt();
    policy.resolve(p.beta, d0, p.sigma_star_sq, t)
}

/// Running compensated (Neumaier) sum of vectors.
#[derive(Debug, Clone)]
pub(crate) struct VectorSum {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl VectorSum {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            comp: vec![0.0; d],
        }
    }

    pub(crate) fn add(&mut self, x: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(x) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    pub(crate) fn mean(&self, count: usize) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.comp)
            .map(|(s, c)| (s + c) / count as f64)
            .collect()
    }
}

/// `(1/T) Σ_{t=1}^T x_t`, excluding the final point `x_{T+1}`.
pub fn average_iterate(tr: &Trajectory) -> Vec<f64> {
    let t = tr.steps().max(1);
    let mut acc = VectorSum::new(tr.iterates[0].len());
    for x in &tr.iterates[..t] {
        acc.add(x);
    }
    acc.mean(t)
}

static NEGATIVE_EXCESS: AtomicUsize = AtomicUsize::new(0);

/// Number of excess-risk evaluations that fell below `−1e−12` and were clamped.
pub fn negative_excess_count() -> usize {
    NEGATIVE_EXCESS.load(Ordering::Relaxed)
}

/// `F(x) − F(x★)`, clamped at zero.
pub fn excess_risk(p: &ProblemInstance, x: &[f64]) -> f64 {
    let e = p.population_value(x) - p.population_value(&p.x_star);
    if e < 0.0 {
        if e < -1e-12 {
            NEGATIVE_EXCESS.fetch_add(1, Ordering::Relaxed);
            log::warn!("excess risk {e:e} below rounding tolerance, clamped to 0");
        }
        return 0.0;
    }
    e
}

/// Quantity recorded at each horizon by [`mc_excess_risk`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// `F(x_T) − F(x★)`.
    LastIterate,
    /// `F(x̄_T) − F(x★)` with `x̄_T = (1/T) Σ_{t≤T} x_t`.
    AverageIterate,
    /// `‖x_{T+1} − x★‖²`.
    FinalDistanceSq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPoint {
    pub t: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and standard error (sample deviation over `√k`) of values already in
/// seed order.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().fold(0.0, |a, v| a + v) / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().fold(0.0, |a, v| a + (v - mean) * (v - mean));
    let sd = (ss / (k - 1) as f64).sqrt();
    (mean, sd / (k as f64).sqrt())
}

/// Sorts `(seed, value)` pairs by seed, then summarizes.
pub fn reduce_by_seed(samples: &[(u64, f64)]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by_key(|&(seed, _)| seed);
    let values: Vec<f64> = s.into_iter().map(|(_, v)| v).collect();
    summarize(&values)
}

/// Runs `replicate(seed)` for seeds `base_seed..base_seed+replicates` in
/// parallel. Each call returns one value per horizon; the reduction runs in
/// ascending seed order regardless of completion order.
pub fn mc_estimate<F, E>(
    t_grid: &[usize],
    replicates: usize,
    base_seed: u64,
    replicate: F,
) -> Result<Vec<McPoint>, E>
where
    F: Fn(u64) -> Result<Vec<f64>, E> + Sync,
    E: Send,
{
    let per_seed: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| replicate(base_seed.wrapping_add(k)))
        .collect::<Result<_, E>>()?;
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let column: Vec<f64> = per_seed.iter().map(|row| row[j]).collect();
            let (mean, stderr) = summarize(&column);
            McPoint { t, mean, stderr }
        })
        .collect())
}

/// Groups horizons that share a resolved stepsize, so each group is served
/// by a single run to its largest horizon.
fn stepsize_groups(
    p: &ProblemInstance,
    x1: &[f64],
    policy: StepsizePolicy,
    t_grid: &[usize],
) -> Result<Vec<(f64, Vec<usize>)>, OptimizerError> {
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (j, &t) in t_grid.iter().enumerate() {
        let eta = resolve_for(p, x1, policy, t)?;
        match groups
            .iter_mut()
            .find(|(e, _)| e.to_bits() == eta.to_bits())
        {
            Some((_, members)) => members.push(j),
            None => groups.push((eta, vec![j])),
        }
    }
    Ok(groups)
}

/// Evaluates `estimand` along one seeded run per stepsize group.
pub fn replicate_estimands(
    p: &ProblemInstance,
    x1: &[f64],
    policy: StepsizePolicy,
    scheme: SamplingScheme,
    t_grid: &[usize],
    estimand: Estimand,
    seed: u64,
) -> Result<Vec<f64>, OptimizerError> {
    let groups = stepsize_groups(p, x1, policy, t_grid)?;
    let limit = if let StepsizePolicy::ThmDTuned = policy {
        1.0 / p.beta
    } else {
        2.0 / p.beta
    };
    let mut out = vec![0.0; t_grid.len()];
    for (eta, members) in groups {
        check_stepsize(eta, p.beta, limit)?;
        let t_max = members.iter().map(|&j| t_grid[j]).max().unwrap_or(0);
        let mut stream = IndexStream::new(p.n(), scheme, t_max, seed)?;
        let mut sum = VectorSum::new(p.dim);
        let mut store = |t: usize, value: &dyn Fn() -> f64| {
            for &j in &members {
                if t_grid[j] == t {
                    out[j] = value();
                }
            }
        };
        let last = sgd_scan(
            p,
            x1,
            eta,
            &mut stream,
            t_max,
            |t, x, _, _| match estimand {
                Estimand::LastIterate => store(t, &|| excess_risk(p, x)),
                Estimand::AverageIterate => {
                    sum.add(x);
                    let avg = sum.mean(t);
                    store(t, &|| excess_risk(p, &avg));
                }
                // x_t is the final point of a run with horizon t − 1
                Estimand::FinalDistanceSq => {
                    if t >= 2 {
                        store(t - 1, &|| dist_sq(x, &p.x_star));
                    }
                }
            },
        );
        if estimand == Estimand::FinalDistanceSq {
            store(t_max, &|| dist_sq(&last, &p.x_star));
        }
    }
    Ok(out)
}

/// Monte Carlo mean and standard error of `estimand` at every horizon of
/// `t_grid` over seeds `base_seed..base_seed+replicates`.
#[allow(clippy::too_many_arguments)]
pub fn mc_excess_risk(
    p: &ProblemInstance,
    x1: &[f64],
    policy: StepsizePolicy,
    scheme: SamplingScheme,
    t_grid: &[usize],
    replicates: usize,
    base_seed: u64,
    estimand: Estimand,
) -> Result<Vec<McPoint>, OptimizerError> {
    if replicates < 2 {
        return Err(OptimizerError::InvalidArgument(format!(
            "need at least 2 replicates, got {replicates}"
        )));
    }
    if t_grid.contains(&0) {
        return Err(OptimizerError::InvalidArgument(
            "horizons must be positive".into(),
        ));
    }
    mc_estimate(t_grid, replicates, base_seed, |seed| {
        replicate_estimands(p, x1, policy, scheme, t_grid, estimand, seed)
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::problems::{
        make_logcosh_realizable, make_low_noise_least_squares, make_realizable_least_squares,
        ComponentLoss, FamilyTag,
    };

    fn scalar_square() -> ProblemInstance {
        ProblemInstance::from_components(
            FamilyTag::RealizableLs,
            vec![ComponentLoss::squared(vec![1.0], 0.0)],
            vec![0.0],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn start_at_optimum_stays_there() {
        let p = make_realizable_least_squares(5, 20, 1).unwrap();
        let tr = run_sgd(
            &p,
            &p.x_star.clone(),
            StepsizePolicy::Fixed { eta: 1.7 },
            SamplingScheme::WithReplacement,
            30,
            3,
            RecordFlags::default(),
        )
        .unwrap();
        for x in &tr.iterates {
            assert_eq!(x, &p.x_star);
        }
    }

    #[test]
    fn greedy_step_on_scalar_square_converges_in_one_step() {
        let p = scalar_square();
        let tr = run_sgd(
            &p,
            &[1.0],
            StepsizePolicy::Greedy,
            SamplingScheme::WithReplacement,
            1,
            0,
            RecordFlags::default(),
        )
        .unwrap();
        assert_eq!(tr.x(2), &[0.0]);
    }

    #[test]
    fn matches_straight_line_recursion() {
        let p = make_low_noise_least_squares(2, 3, 0.3, 42).unwrap();
        let x1 = vec![0.3, -0.7];
        let tr = run_sgd(
            &p,
            &x1,
            StepsizePolicy::Fixed { eta: 0.5 },
            SamplingScheme::WithReplacement,
            5,
            42,
            RecordFlags::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut x = x1.clone();
        assert_eq!(tr.iterates[0], x);
        for t in 0..5 {
            let i: usize = rng.random_range(0..3);
            assert_eq!(tr.indices[t], i);
            let c = &p.components[i];
            let r = c.a[0] * x[0] + c.a[1] * x[1] - c.b;
            x = vec![x[0] - 0.5 * (c.a[0] * r), x[1] - 0.5 * (c.a[1] * r)];
            assert_eq!(tr.iterates[t + 1], x);
        }
    }

    #[test]
    fn without_replacement_is_a_permutation_prefix() {
        let p = make_realizable_least_squares(3, 50, 0).unwrap();
        let tr = run_sgd(
            &p,
            &[0.0; 3],
            StepsizePolicy::Greedy,
            SamplingScheme::WithoutReplacement,
            50,
            9,
            RecordFlags::default(),
        )
        .unwrap();
        let mut seen = tr.indices.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        let short = run_sgd(
            &p,
            &[0.0; 3],
            StepsizePolicy::Greedy,
            SamplingScheme::WithoutReplacement,
            20,
            9,
            RecordFlags::default(),
        )
        .unwrap();
        assert_eq!(short.indices[..], tr.indices[..20]);
        assert_eq!(short.iterates[..], tr.iterates[..21]);
    }

    #[test]
    fn errors_on_bad_stepsize_and_long_permutation() {
        let p = make_realizable_least_squares(2, 4, 0).unwrap();
        let run = |policy, scheme, t| {
            run_sgd(
                &p,
                &[0.0, 0.0],
                policy,
                scheme,
                t,
                0,
                RecordFlags::default(),
            )
        };
        assert!(matches!(
            run(
                StepsizePolicy::Fixed { eta: 2.0 },
                SamplingScheme::WithReplacement,
                3
            ),
            Err(OptimizerError::StepsizeOutOfRange { .. })
        ));
        assert!(matches!(
            run(
                StepsizePolicy::Fixed { eta: 0.0 },
                SamplingScheme::WithReplacement,
                3
            ),
            Err(OptimizerError::StepsizeOutOfRange { .. })
        ));
        assert!(matches!(
            run(
                StepsizePolicy::Greedy,
                SamplingScheme::WithoutReplacement,
                5
            ),
            Err(OptimizerError::PermutationTooShort { t: 5, n: 4 })
        ));
    }

    #[test]
    fn policy_resolution() {
        let eta = StepsizePolicy::LogTuned
            .resolve(1.0, 1.0, 0.0, 1024)
            .unwrap();
        assert!((eta - 0.1).abs() < 1e-15);
        assert_eq!(
            StepsizePolicy::Greedy.resolve(2.0, 1.0, 0.0, 10).unwrap(),
            0.5
        );
        let tuned = StepsizePolicy::Thm2Tuned
            .resolve(1.0, 1.0, 1.0, 16)
            .unwrap();
        assert!((tuned - 1.0 / (16.0 * 18f64.log2()).sqrt()).abs() < 1e-15);
        let d = StepsizePolicy::ThmDTuned
            .resolve(1.0, 1.0, 0.0, 100)
            .unwrap();
        assert!((d - 1.0 / 100f64.ln()).abs() < 1e-15);
        assert!(StepsizePolicy::ThmDTuned.resolve(1.0, 1.0, 0.0, 2).is_err());
        assert!(StepsizePolicy::LogTuned.resolve(1.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn policy_serde_names() {
        let s = serde_json::to_string(&StepsizePolicy::ThmDTuned).unwrap();
        assert_eq!(s, r#"{"kind":"thmD_tuned"}"#);
        let f: StepsizePolicy = serde_json::from_str(r#"{"kind":"fixed","eta":0.25}"#).unwrap();
        assert_eq!(f, StepsizePolicy::Fixed { eta: 0.25 });
    }

    #[test]
    fn average_of_constant_and_two_point_trajectories() {
        let p = make_realizable_least_squares(3, 5, 0).unwrap();
        let tr = run_sgd(
            &p,
            &p.x_star.clone(),
            StepsizePolicy::Greedy,
            SamplingScheme::WithReplacement,
            7,
            0,
            RecordFlags::default(),
        )
        .unwrap();
        assert_eq!(average_iterate(&tr), p.x_star);
        let two = Trajectory {
            eta: 1.0,
            seed: 0,
            indices: vec![0, 0],
            iterates: vec![vec![0.0], vec![2.0], vec![100.0]],
            gradient_norms_sq: None,
        };
        assert_eq!(average_iterate(&two), vec![1.0]);
    }

    fn kahan_mean(xs: &[Vec<f64>], k: usize) -> f64 {
        let (mut s, mut c) = (0.0_f64, 0.0_f64);
        for x in xs {
            let y = x[k] - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s / xs.len() as f64
    }

    #[test]
    fn average_matches_kahan_oracle() {
        let p = make_low_noise_least_squares(4, 30, 0.2, 5).unwrap();
        let tr = run_sgd(
            &p,
            &[1.0, -1.0, 0.5, 2.0],
            StepsizePolicy::Fixed { eta: 0.3 },
            SamplingScheme::WithReplacement,
            500,
            8,
            RecordFlags::default(),
        )
        .unwrap();
        let avg = average_iterate(&tr);
        for k in 0..4 {
            let oracle = kahan_mean(&tr.iterates[..500], k);
            assert!((avg[k] - oracle).abs() <= 1e-14 * oracle.abs().max(1e-300));
        }
    }

    #[test]
    fn excess_risk_cases() {
        let p = make_low_noise_least_squares(3, 10, 0.4, 2).unwrap();
        assert_eq!(excess_risk(&p, &p.x_star), 0.0);
        let x = [0.4, -0.1, 2.0];
        let n = p.n() as f64;
        let termwise: f64 = p.components.iter().map(|c| c.value(&x)).sum::<f64>() / n
            - p.components.iter().map(|c| c.value(&p.x_star)).sum::<f64>() / n;
        assert!((excess_risk(&p, &x) - termwise).abs() < 1e-14);
        let r = make_realizable_least_squares(3, 10, 2).unwrap();
        assert_eq!(excess_risk(&r, &x), r.population_value(&x));
    }

    #[test]
    fn distance_to_optimum_never_increases_when_realizable() {
        let p = make_logcosh_realizable(4, 25, 6).unwrap();
        let tr = run_sgd(
            &p,
            &[1.0, 0.0, -1.0, 0.5],
            StepsizePolicy::Fixed { eta: 1.9 },
            SamplingScheme::WithReplacement,
            200,
            1,
            RecordFlags::default(),
        )
        .unwrap();
        for w in tr.iterates.windows(2) {
            assert!(dist_sq(&w[1], &p.x_star) <= dist_sq(&w[0], &p.x_star));
        }
    }

    #[test]
    fn mc_at_optimum_is_zero_and_two_replicates_average() {
        let p = make_realizable_least_squares(4, 10, 3).unwrap();
        let grid = [2, 4, 8];
        let at_opt = mc_excess_risk(
            &p,
            &p.x_star.clone(),
            StepsizePolicy::Greedy,
            SamplingScheme::WithReplacement,
            &grid,
            5,
            0,
            Estimand::LastIterate,
        )
        .unwrap();
        assert!(at_opt.iter().all(|m| m.mean == 0.0 && m.stderr == 0.0));

        let x1 = vec![0.0; 4];
        let mc = mc_excess_risk(
            &p,
            &x1,
            StepsizePolicy::Greedy,
            SamplingScheme::WithReplacement,
            &[8],
            2,
            10,
            Estimand::LastIterate,
        )
        .unwrap();
        let single = |seed| {
            let tr = run_sgd(
                &p,
                &x1,
                StepsizePolicy::Greedy,
                SamplingScheme::WithReplacement,
                8,
                seed,
                RecordFlags::default(),
            )
            .unwrap();
            excess_risk(&p, tr.last_iterate())
        };
        let hand = (single(10) + single(11)) / 2.0;
        assert_eq!(mc[0].mean, hand);
    }

    #[test]
    fn mc_estimands_agree_with_trajectories() {
        let p = make_low_noise_least_squares(3, 12, 0.1, 4).unwrap();
        let x1 = vec![0.5; 3];
        let grid = [3, 5, 9];
        for estimand in [
            Estimand::LastIterate,
            Estimand::AverageIterate,
            Estimand::FinalDistanceSq,
        ] {
            for policy in [StepsizePolicy::Fixed { eta: 0.7 }, StepsizePolicy::LogTuned] {
                let got = replicate_estimands(
                    &p,
                    &x1,
                    policy,
                    SamplingScheme::WithReplacement,
                    &grid,
                    estimand,
                    17,
                )
                .unwrap();
                for (j, &t) in grid.iter().enumerate() {
                    let tr = run_sgd(
                        &p,
                        &x1,
                        policy,
                        SamplingScheme::WithReplacement,
                        t,
                        17,
                        RecordFlags::default(),
                    )
                    .unwrap();
                    let want = match estimand {
                        Estimand::LastIterate => excess_risk(&p, tr.last_iterate()),
                        Estimand::AverageIterate => excess_risk(&p, &average_iterate(&tr)),
                        Estimand::FinalDistanceSq => dist_sq(tr.final_point(), &p.x_star),
                    };
                    assert_eq!(got[j], want, "{estimand:?} {policy:?} T={t}");
                }
            }
        }
    }

    #[test]
    fn seed_order_reduction_is_permutation_invariant() {
        let samples: Vec<(u64, f64)> = (0..50).map(|s| (s, (s as f64 * 0.37).sin())).collect();
        let mut shuffled = samples.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(reduce_by_seed(&samples), reduce_by_seed(&shuffled));
    }

    #[test]
    fn summarize_uses_sample_deviation() {
        let (m, se) = summarize(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trajectory_csv_layout() {
        let p = make_realizable_least_squares(2, 3, 0).unwrap();
        let tr = run_sgd(
            &p,
            &[0.0, 0.0],
            StepsizePolicy::Greedy,
            SamplingScheme::WithReplacement,
            3,
            0,
            RecordFlags {
                gradient_norms: true,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,index,x0,x1,gradient_norm_sq");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("4,,"));
        assert!(lines[4].ends_with(','));
    }
}
