//! Finite families of convex smooth component losses with a known minimizer.
//!
//! Every generator returns a [`ProblemInstance`] whose minimizer `x_star`,
//! smoothness `beta` and gradient noise at the optimum `sigma_star_sq` are
//! exact by construction. The sampling distribution is uniform over the
//! components, so the population objective is the plain average
//! `F(x) = (1/n) Σ f_i(x)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, dot, norm, norm_sq};

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("projected residual vanished in all {attempts} attempts")]
    InfeasibleNoise { attempts: usize },
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("component index {index} out of range for {len} components")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("instance invariant violated: {0}")]
    InvariantViolated(String),
    #[error("instance json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A finite sum of smooth convex components, sampled uniformly.
///
/// This is the oracle SGD consumes. Problem instances implement it, and so do
/// the reduced objectives behind the Kaczmarz and POCS reductions.
pub trait FiniteSum: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    /// Uniform smoothness bound over the components.
    fn smoothness(&self) -> f64;
    fn component_value(&self, i: usize, x: &[f64]) -> f64;
    fn component_grad(&self, i: usize, x: &[f64]) -> Vec<f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn mean_value(&self, x: &[f64]) -> f64 {
        let n = self.len();
        (0..n).fold(0.0, |acc, i| acc + self.component_value(i, x)) / n as f64
    }

    fn mean_grad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut acc = vec![0.0; self.dim()];
        for i in 0..n {
            for (a, g) in acc.iter_mut().zip(self.component_grad(i, x)) {
                *a += g;
            }
        }
        linalg::scale(&acc, 1.0 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    LogCosh,
}

/// One component `f(x) = φ(⟨a, x⟩ − b)` with `φ(r) = r²/2` or `log cosh r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentLoss {
    pub kind: LossKind,
    pub a: Vec<f64>,
    pub b: f64,
}

impl ComponentLoss {
    pub fn squared(a: Vec<f64>, b: f64) -> Self {
        Self {
            kind: LossKind::Squared,
            a,
            b,
        }
    }

    pub fn log_cosh(a: Vec<f64>, b: f64) -> Self {
        Self {
            kind: LossKind::LogCosh,
            a,
            b,
        }
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        dot(&self.a, x) - self.b
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        match self.kind {
            LossKind::Squared => 0.5 * r * r,
            LossKind::LogCosh => log_cosh(r),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.residual(x);
        let s = match self.kind {
            LossKind::Squared => r,
            LossKind::LogCosh => r.tanh(),
        };
        linalg::scale(&self.a, s)
    }

    /// Exact smoothness constant: both scalar envelopes have curvature at most one.
    pub fn smoothness(&self) -> f64 {
        norm_sq(&self.a)
    }
}

/// `log cosh r` without overflow for large `|r|`.
pub fn log_cosh(r: f64) -> f64 {
    let a = r.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    RealizableLs,
    LowNoiseLs,
    RealizableLogcosh,
    StronglyConvexLs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub family: FamilyTag,
    pub dim: usize,
    pub components: Vec<ComponentLoss>,
    pub beta: f64,
    pub x_star: Vec<f64>,
    pub sigma_star_sq: f64,
    /// Minimum eigenvalue of the population Hessian; zero when not strongly convex.
    pub strong_convexity: f64,
}

impl FiniteSum for ProblemInstance {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.components.len()
    }

    fn smoothness(&self) -> f64 {
        self.beta
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        self.components[i].value(x)
    }

    fn component_grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.components[i].gradient(x)
    }
}

impl ProblemInstance {
    /// Assembles an instance from explicit components. `beta` is the largest
    /// component smoothness and `sigma_star_sq` is recomputed at `x_star`.
    pub fn from_components(
        family: FamilyTag,
        components: Vec<ComponentLoss>,
        x_star: Vec<f64>,
        strong_convexity: f64,
    ) -> Result<Self, ProblemError> {
        let dim = x_star.len();
        if components.is_empty() || dim == 0 {
            return Err(ProblemError::InvalidParameter(
                "need at least one component and dimension".into(),
            ));
        }
        if let Some(c) = components.iter().find(|c| c.a.len() != dim) {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: c.a.len(),
            });
        }
        let beta = components
            .iter()
            .fold(0.0_f64, |m, c| m.max(c.smoothness()));
        let mut p = Self {
            family,
            dim,
            components,
            beta,
            x_star,
            sigma_star_sq: 0.0,
            strong_convexity,
        };
        p.sigma_star_sq = p.recompute_sigma_star_sq();
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn population_value(&self, x: &[f64]) -> f64 {
        self.mean_value(x)
    }

    pub fn component_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_point(x)?;
        let c = self
            .components
            .get(i)
            .ok_or(ProblemError::IndexOutOfRange {
                index: i,
                len: self.n(),
            })?;
        Ok(c.gradient(x))
    }

    pub fn check_point(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() != self.dim {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `(1/n) Σ ‖∇f_i(x)‖²` at an arbitrary point.
    pub fn gradient_variance_at(&self, x: &[f64]) -> f64 {
        let n = self.n();
        self.components
            .iter()
            .fold(0.0, |acc, c| acc + norm_sq(&c.gradient(x)))
            / n as f64
    }

    pub fn recompute_sigma_star_sq(&self) -> f64 {
        self.gradient_variance_at(&self.x_star)
    }

    /// `‖∇F(x_star)‖`.
    pub fn stationarity_residual(&self) -> f64 {
        norm(&self.mean_grad(&self.x_star))
    }

    /// Minimum eigenvalue of `(1/n) Σ a_i a_iᵀ`.
    pub fn hessian_min_eigenvalue(&self) -> f64 {
        let rows: Vec<Vec<f64>> = self.components.iter().map(|c| c.a.clone()).collect();
        let a = linalg::matrix_from_rows(&rows, self.dim);
        let h = a.transpose() * &a / self.n() as f64;
        SymmetricEigen::new(h).eigenvalues.min()
    }

    pub fn is_realizable(&self) -> bool {
        matches!(
            self.family,
            FamilyTag::RealizableLs | FamilyTag::RealizableLogcosh
        ) || (self.family == FamilyTag::StronglyConvexLs && self.sigma_star_sq == 0.0)
    }

    /// Checks the structural invariants every generator promises.
    pub fn verify(&self) -> Result<(), ProblemError> {
        let violated = |m: String| Err(ProblemError::InvariantViolated(m));
        for (i, c) in self.components.iter().enumerate() {
            if c.a.len() != self.dim {
                return violated(format!("component {i} has wrong dimension"));
            }
            if c.smoothness() > self.beta {
                return violated(format!(
                    "component {i} smoothness {} exceeds beta {}",
                    c.smoothness(),
                    self.beta
                ));
            }
        }
        let stat = self.stationarity_residual();
        if stat > 1e-10 * (1.0 + norm(&self.x_star)) {
            return violated(format!("‖∇F(x_star)‖ = {stat:e}"));
        }
        let recomputed = self.recompute_sigma_star_sq();
        let tol = 1e-12 * self.sigma_star_sq.max(1e-300);
        if (recomputed - self.sigma_star_sq).abs() > tol.max(1e-300)
            && recomputed != self.sigma_star_sq
        {
            return violated(format!(
                "sigma_star_sq {} but recomputed {}",
                self.sigma_star_sq, recomputed
            ));
        }
        if self.is_realizable() {
            for (i, c) in self.components.iter().enumerate() {
                let g = norm(&c.gradient(&self.x_star));
                if g > 1e-10 * (1.0 + norm(&self.x_star)) {
                    return violated(format!("component {i} not minimized at x_star: {g:e}"));
                }
            }
        }
        if self.strong_convexity > self.beta {
            return violated("strong convexity exceeds smoothness".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ProblemError> {
        Ok(serde_json::to_string_pretty(&InstanceDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self, ProblemError> {
        let doc: InstanceDocument = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// Serialized layout of a [`ProblemInstance`].
#[derive(Debug, Serialize, Deserialize)]
struct InstanceDocument {
    family_tag: FamilyTag,
    d: usize,
    n: usize,
    beta: f64,
    x_star: Vec<f64>,
    sigma_star_sq: f64,
    strong_convexity: f64,
    components: Vec<ComponentLoss>,
}

impl From<&ProblemInstance> for InstanceDocument {
    fn from(p: &ProblemInstance) -> Self {
        Self {
            family_tag: p.family,
            d: p.dim,
            n: p.n(),
            beta: p.beta,
            x_star: p.x_star.clone(),
            sigma_star_sq: p.sigma_star_sq,
            strong_convexity: p.strong_convexity,
            components: p.components.clone(),
        }
    }
}

impl TryFrom<InstanceDocument> for ProblemInstance {
    type Error = ProblemError;

    fn try_from(doc: InstanceDocument) -> Result<Self, ProblemError> {
        if doc.n != doc.components.len() {
            return Err(ProblemError::InvalidParameter(format!(
                "n = {} but {} components listed",
                doc.n,
                doc.components.len()
            )));
        }
        if doc.x_star.len() != doc.d {
            return Err(ProblemError::DimensionMismatch {
                expected: doc.d,
                got: doc.x_star.len(),
            });
        }
        if let Some(c) = doc.components.iter().find(|c| c.a.len() != doc.d) {
            return Err(ProblemError::DimensionMismatch {
                expected: doc.d,
                got: c.a.len(),
            });
        }
        Ok(Self {
            family: doc.family_tag,
            dim: doc.d,
            components: doc.components,
            beta: doc.beta,
            x_star: doc.x_star,
            sigma_star_sq: doc.sigma_star_sq,
            strong_convexity: doc.strong_convexity,
        })
    }
}

fn check_sizes(d: usize, n: usize) -> Result<(), ProblemError> {
    if d == 0 || n == 0 {
        return Err(ProblemError::InvalidParameter(format!(
            "dimension and component count must be positive (d={d}, n={n})"
        )));
    }
    Ok(())
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_rows(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| linalg::unit_vector(rng, d)).collect()
}

fn realizable(
    family: FamilyTag,
    kind: LossKind,
    d: usize,
    n: usize,
    seed: u64,
) -> Result<ProblemInstance, ProblemError> {
    check_sizes(d, n)?;
    let mut rng = rng_for(seed);
    let rows = unit_rows(&mut rng, d, n);
    let x_star = linalg::unit_vector(&mut rng, d);
    let components = rows
        .into_iter()
        .map(|a| {
            let b = dot(&a, &x_star);
            ComponentLoss { kind, a, b }
        })
        .collect();
    Ok(ProblemInstance {
        family,
        dim: d,
        components,
        beta: 1.0,
        x_star,
        sigma_star_sq: 0.0,
        strong_convexity: 0.0,
    })
}

/// Unit-norm rows, `‖x_star‖ = 1`, targets `b_i = ⟨a_i, x_star⟩`.
pub fn make_realizable_least_squares(
    d: usize,
    n: usize,
    seed: u64,
) -> Result<ProblemInstance, ProblemError> {
    realizable(FamilyTag::RealizableLs, LossKind::Squared, d, n, seed)
}

/// Same construction as [`make_realizable_least_squares`] with `log cosh` components.
pub fn make_logcosh_realizable(
    d: usize,
    n: usize,
    seed: u64,
) -> Result<ProblemInstance, ProblemError> {
    realizable(FamilyTag::RealizableLogcosh, LossKind::LogCosh, d, n, seed)
}

/// Removes from `r` its component in the column span of `basis`
/// (orthonormal columns). Applied twice for numerical orthogonality.
fn project_out(r: &DVector<f64>, basis: &DMatrix<f64>) -> DVector<f64> {
    let once = r - basis * (basis.transpose() * r);
    &once - basis * (basis.transpose() * &once)
}

/// Residuals `r` with `Σ a_i r_i = 0` and `(1/n) Σ r_i² ‖a_i‖² = sigma²`.
fn stationary_residuals(
    rng: &mut ChaCha8Rng,
    coords: &DMatrix<f64>,
    row_norms_sq: &[f64],
    sigma_star: f64,
) -> Option<Vec<f64>> {
    let n = coords.nrows();
    let q = coords.clone().qr().q();
    let raw = DVector::from_vec(linalg::gaussian(rng, n));
    let r = project_out(&raw, &q);
    let energy = r
        .iter()
        .zip(row_norms_sq)
        .fold(0.0, |acc, (ri, ai)| acc + ri * ri * ai)
        / n as f64;
    if !(energy > 1e-24) {
        return None;
    }
    let s = sigma_star / energy.sqrt();
    Some(r.iter().map(|ri| ri * s).collect())
}

/// Unit-norm rows with residuals projected onto the null space of `Aᵀ`, so
/// `x_star` minimizes the population objective and `σ★² = sigma_star²`.
pub fn make_low_noise_least_squares(
    d: usize,
    n: usize,
    sigma_star: f64,
    seed: u64,
) -> Result<ProblemInstance, ProblemError> {
    check_sizes(d, n)?;
    if n < d + 1 {
        return Err(ProblemError::InvalidParameter(format!(
            "low-noise instance needs n >= d + 1 (d={d}, n={n})"
        )));
    }
    if !(sigma_star >= 0.0) || !sigma_star.is_finite() {
        return Err(ProblemError::InvalidParameter(format!(
            "sigma_star = {sigma_star}"
        )));
    }
    let mut rng = rng_for(seed);
    for _ in 0..MAX_ATTEMPTS {
        let rows = unit_rows(&mut rng, d, n);
        let x_star = linalg::unit_vector(&mut rng, d);
        let residuals = if sigma_star == 0.0 {
            vec![0.0; n]
        } else {
            let a = linalg::matrix_from_rows(&rows, d);
            let norms: Vec<f64> = rows.iter().map(|r| norm_sq(r)).collect();
            match stationary_residuals(&mut rng, &a, &norms, sigma_star) {
                Some(r) => r,
                None => continue,
            }
        };
        let components = rows
            .into_iter()
            .zip(&residuals)
            .map(|(a, r)| {
                let b = dot(&a, &x_star) - r;
                ComponentLoss::squared(a, b)
            })
            .collect();
        return Ok(ProblemInstance {
            family: FamilyTag::LowNoiseLs,
            dim: d,
            components,
            beta: 1.0,
            x_star,
            sigma_star_sq: sigma_star * sigma_star,
            strong_convexity: 0.0,
        });
    }
    Err(ProblemError::InfeasibleNoise {
        attempts: MAX_ATTEMPTS,
    })
}

/// Realizable least squares whose population Hessian has minimum eigenvalue
/// at least `alpha_sc`. Random rows are whitened against their empirical
/// second moment and rescaled so the longest row has unit norm; the stored
/// `strong_convexity` is the recomputed minimum eigenvalue.
pub fn make_strongly_convex_ls(
    d: usize,
    n: usize,
    alpha_sc: f64,
    seed: u64,
) -> Result<ProblemInstance, ProblemError> {
    check_sizes(d, n)?;
    if n < d {
        return Err(ProblemError::InvalidParameter(format!(
            "strongly convex instance needs n >= d (d={d}, n={n})"
        )));
    }
    if !(alpha_sc > 0.0 && alpha_sc <= 1.0) {
        return Err(ProblemError::InvalidParameter(format!(
            "alpha_sc = {alpha_sc}"
        )));
    }
    let mut rng = rng_for(seed);
    let mut best = 0.0_f64;
    for _ in 0..MAX_ATTEMPTS {
        let raw = unit_rows(&mut rng, d, n);
        let x_star = linalg::unit_vector(&mut rng, d);
        let a = linalg::matrix_from_rows(&raw, d);
        let h = a.transpose() * &a / n as f64;
        let eig = SymmetricEigen::new(h);
        if eig.eigenvalues.min() <= 1e-12 {
            continue;
        }
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let whitener = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        let white: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                (&whitener * DVector::from_column_slice(r))
                    .iter()
                    .copied()
                    .collect()
            })
            .collect();
        let longest = white.iter().fold(0.0_f64, |m, r| m.max(norm(r)));
        let rows: Vec<Vec<f64>> = white
            .into_iter()
            .map(|r| linalg::clamp_unit(linalg::scale(&r, 1.0 / longest)))
            .collect();
        let components: Vec<ComponentLoss> = rows
            .into_iter()
            .map(|a| {
                let b = dot(&a, &x_star);
                ComponentLoss::squared(a, b)
            })
            .collect();
        let mut p = ProblemInstance {
            family: FamilyTag::StronglyConvexLs,
            dim: d,
            components,
            beta: 1.0,
            x_star,
            sigma_star_sq: 0.0,
            strong_convexity: 0.0,
        };
        let lambda_min = p.hessian_min_eigenvalue();
        best = best.max(lambda_min);
        if lambda_min >= alpha_sc {
            p.strong_convexity = lambda_min;
            return Ok(p);
        }
    }
    Err(ProblemError::GenerationFailed(format!(
        "minimum eigenvalue {best:.3e} never reached alpha_sc = {alpha_sc} in {MAX_ATTEMPTS} attempts"
    )))
}

/// A rank-deficient low-noise least-squares instance: all rows lie in a
/// random `rank`-dimensional subspace, so the minimizers of `F` form an
/// affine subspace. Also returns a unit direction orthogonal to the rows;
/// `x_star + t · direction` is a minimizer for every `t`.
pub fn make_degenerate_least_squares(
    d: usize,
    rank: usize,
    n: usize,
    sigma_star: f64,
    seed: u64,
) -> Result<(ProblemInstance, Vec<f64>), ProblemError> {
    check_sizes(d, n)?;
    if rank == 0 || rank >= d || n < rank + 1 {
        return Err(ProblemError::InvalidParameter(format!(
            "need 1 <= rank < d and n > rank (d={d}, rank={rank}, n={n})"
        )));
    }
    let mut rng = rng_for(seed);
    let g = DMatrix::from_fn(d, rank, |_, _| linalg::gaussian(&mut rng, 1)[0]);
    let basis = g.qr().q();
    for _ in 0..MAX_ATTEMPTS {
        let coords = unit_rows(&mut rng, rank, n);
        let rows: Vec<Vec<f64>> = coords
            .iter()
            .map(|c| {
                let v = &basis * DVector::from_column_slice(c);
                linalg::clamp_unit(v.iter().copied().collect())
            })
            .collect();
        let residuals = if sigma_star == 0.0 {
            vec![0.0; n]
        } else {
            let c = linalg::matrix_from_rows(&coords, rank);
            let norms: Vec<f64> = rows.iter().map(|r| norm_sq(r)).collect();
            match stationary_residuals(&mut rng, &c, &norms, sigma_star) {
                Some(r) => r,
                None => continue,
            }
        };
        let x_star: Vec<f64> = (&basis * DVector::from_vec(linalg::unit_vector(&mut rng, rank)))
            .iter()
            .copied()
            .collect();
        let raw = DVector::from_vec(linalg::gaussian(&mut rng, d));
        let null = project_out(&raw, &basis);
        let null: Vec<f64> = linalg::scale(null.as_slice(), 1.0 / null.norm());
        let components = rows
            .into_iter()
            .zip(&residuals)
            .map(|(a, r)| {
                let b = dot(&a, &x_star) - r;
                ComponentLoss::squared(a, b)
            })
            .collect();
        let p = ProblemInstance {
            family: if sigma_star == 0.0 {
                FamilyTag::RealizableLs
            } else {
                FamilyTag::LowNoiseLs
            },
            dim: d,
            components,
            beta: 1.0,
            x_star,
            sigma_star_sq: sigma_star * sigma_star,
            strong_convexity: 0.0,
        };
        return Ok((p, null));
    }
    Err(ProblemError::InfeasibleNoise {
        attempts: MAX_ATTEMPTS,
    })
}
