//! Randomized block Kaczmarz for consistent linear systems, and its reduced
//! least-squares objective on which SGD with `η = c` reproduces the method.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{self, norm, norm_sq};
use crate::optimizer::{IndexStream, OptimizerError, SamplingScheme, Trajectory};
use crate::problems::FiniteSum;

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum KaczmarzError {
    #[error("block index {index} out of range for {len} blocks")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("system is not consistent")]
    NotRealizable,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

/// One block `A_i x = b_i` with its cached pseudoinverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub pinv: DMatrix<f64>,
    /// `A_i⁺ A_i`, the projector onto the row space.
    projector: DMatrix<f64>,
    /// `A_i⁺ b_i`.
    pinv_b: Vec<f64>,
    consistent: bool,
}

impl Block {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self, KaczmarzError> {
        if a.nrows() != b.len() || a.nrows() == 0 {
            return Err(KaczmarzError::InvalidParameter(format!(
                "block has {} rows but {} targets",
                a.nrows(),
                b.len()
            )));
        }
        let pinv = linalg::pseudoinverse(&a, PINV_CUTOFF)
            .ok_or_else(|| KaczmarzError::GenerationFailed("SVD did not converge".into()))?;
        let projector = &pinv * &a;
        let pinv_b = (&pinv * DVector::from_column_slice(&b)).as_slice().to_vec();
        let mut blk = Self {
            a,
            b,
            pinv,
            projector,
            pinv_b,
            consistent: false,
        };
        blk.consistent = norm(&blk.residual(&blk.pinv_b)) <= 1e-8 * (1.0 + norm(&blk.b));
        Ok(blk)
    }

    /// Whether `A_i x = b_i` has a solution (the minimum-norm least-squares
    /// point leaves a residual of at most `1e−8 (1 + ‖b_i‖)`).
    pub fn is_consistent(&self) -> bool {
        self.consistent
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// `A_i x − b_i`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = &self.a * linalg::to_dvector(x);
        ax.iter().zip(&self.b).map(|(u, v)| u - v).collect()
    }

    /// `A_i⁺ (A_i x − b_i)`, the displacement to the nearest solution.
    pub fn correction(&self, x: &[f64]) -> Vec<f64> {
        let r = DVector::from_vec(self.residual(x));
        (&self.pinv * r).as_slice().to_vec()
    }

    /// `A_i⁺ A_i x − A_i⁺ b_i`.
    pub fn reduced_gradient(&self, x: &[f64]) -> Vec<f64> {
        let px = &self.projector * linalg::to_dvector(x);
        px.iter().zip(&self.pinv_b).map(|(u, v)| u - v).collect()
    }

    pub fn spectral_norm(&self) -> f64 {
        linalg::spectral_norm(&self.a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    pub dim: usize,
    pub blocks: Vec<Block>,
    /// `max_i ‖A_i‖₂`.
    pub r: f64,
    /// Minimum-norm solution when the system is consistent.
    pub x_star: Option<Vec<f64>>,
}

impl BlockSystem {
    pub fn from_blocks(
        dim: usize,
        blocks: Vec<(DMatrix<f64>, Vec<f64>)>,
    ) -> Result<Self, KaczmarzError> {
        if blocks.is_empty() || dim == 0 {
            return Err(KaczmarzError::InvalidParameter(
                "need at least one block".into(),
            ));
        }
        if let Some((a, _)) = blocks.iter().find(|(a, _)| a.ncols() != dim) {
            return Err(KaczmarzError::InvalidParameter(format!(
                "block has {} columns, expected {dim}",
                a.ncols()
            )));
        }
        let blocks: Vec<Block> = blocks
            .into_iter()
            .map(|(a, b)| Block::new(a, b))
            .collect::<Result<_, _>>()?;
        let r = blocks.iter().fold(0.0_f64, |m, b| m.max(b.spectral_norm()));
        let x_star = min_norm_solution(dim, &blocks)?;
        let consistent = blocks.iter().all(|blk| {
            let res = norm(&blk.residual(&x_star));
            res <= 1e-10 * (1.0 + norm(&blk.b))
        });
        Ok(Self {
            dim,
            blocks,
            r,
            x_star: consistent.then_some(x_star),
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> Result<&Block, KaczmarzError> {
        self.blocks.get(i).ok_or(KaczmarzError::IndexOutOfRange {
            index: i,
            len: self.blocks.len(),
        })
    }

    pub fn solution(&self) -> Result<&[f64], KaczmarzError> {
        self.x_star.as_deref().ok_or(KaczmarzError::NotRealizable)
    }

    pub fn is_realizable(&self) -> bool {
        self.x_star.is_some()
    }

    /// `d m`, then per block `n_i` followed by `n_i` lines of `d + 1` numbers
    /// (the row of `A_i`, then the entry of `b_i`).
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.dim, self.blocks.len());
        for blk in &self.blocks {
            s.push_str(&format!("{}\n", blk.rows()));
            for (i, bi) in blk.b.iter().enumerate() {
                let mut fields: Vec<String> =
                    blk.a.row(i).iter().map(|v| format!("{v:e}")).collect();
                fields.push(format!("{bi:e}"));
                s.push_str(&fields.join(" "));
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, KaczmarzError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let parse_err = |line: usize, msg: String| KaczmarzError::Parse { line, msg };
        let (hl, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty input".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(hl, e.to_string()))?;
        let [d, m] = head[..] else {
            return Err(parse_err(hl, "header must be `d m`".into()));
        };
        let mut blocks = Vec::with_capacity(m);
        for _ in 0..m {
            let (nl, count) = lines
                .next()
                .ok_or_else(|| parse_err(0, "missing block".into()))?;
            let n_i: usize = count
                .parse()
                .map_err(|_| parse_err(nl, format!("bad row count `{count}`")))?;
            let mut data = Vec::with_capacity(n_i * d);
            let mut b = Vec::with_capacity(n_i);
            for _ in 0..n_i {
                let (rl, row) = lines
                    .next()
                    .ok_or_else(|| parse_err(0, "missing row".into()))?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(rl, e.to_string()))?;
                if vals.len() != d + 1 {
                    return Err(parse_err(
                        rl,
                        format!("expected {} numbers, found {}", d + 1, vals.len()),
                    ));
                }
                data.extend_from_slice(&vals[..d]);
                b.push(vals[d]);
            }
            blocks.push((DMatrix::from_row_slice(n_i, d, &data), b));
        }
        if let Some((l, _)) = lines.next() {
            return Err(parse_err(l, "trailing data".into()));
        }
        Self::from_blocks(d, blocks)
    }
}

/// `A⁺ b` for the stacked system.
fn min_norm_solution(dim: usize, blocks: &[Block]) -> Result<Vec<f64>, KaczmarzError> {
    let rows: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    let mut r0 = 0;
    for blk in blocks {
        a.rows_mut(r0, blk.rows()).copy_from(&blk.a);
        for (k, v) in blk.b.iter().enumerate() {
            b[r0 + k] = *v;
        }
        r0 += blk.rows();
    }
    let pinv = linalg::pseudoinverse(&a, PINV_CUTOFF)
        .ok_or_else(|| KaczmarzError::GenerationFailed("SVD did not converge".into()))?;
    Ok((pinv * b).as_slice().to_vec())
}

/// Random Gaussian blocks scaled to unit spectral norm (`R = 1`). When
/// `realizable`, targets are `b_i = A_i x` for a random unit `x` and the
/// stored solution is the minimum-norm one; otherwise Gaussian noise is added
/// to the targets.
pub fn make_block_system(
    d: usize,
    m: usize,
    block_sizes: &[usize],
    seed: u64,
    realizable: bool,
) -> Result<BlockSystem, KaczmarzError> {
    if d == 0 || m == 0 || block_sizes.len() != m || block_sizes.contains(&0) {
        return Err(KaczmarzError::InvalidParameter(format!(
            "need d >= 1, m >= 1 and m positive block sizes (d={d}, m={m}, sizes={block_sizes:?})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_draw = linalg::unit_vector(&mut rng, d);
    let mut blocks = Vec::with_capacity(m);
    for &n_i in block_sizes {
        let raw = DMatrix::from_row_slice(n_i, d, &linalg::gaussian(&mut rng, n_i * d));
        let s = linalg::spectral_norm(&raw);
        if !(s > 1e-12) {
            return Err(KaczmarzError::GenerationFailed(
                "degenerate random block".into(),
            ));
        }
        let mut a = raw / s;
        // guard against the rescaled norm rounding above one
        while linalg::spectral_norm(&a) > 1.0 {
            a *= 1.0 - f64::EPSILON;
        }
        let mut b: Vec<f64> = (&a * linalg::to_dvector(&x_draw)).as_slice().to_vec();
        if !realizable {
            for (bi, e) in b.iter_mut().zip(linalg::gaussian(&mut rng, n_i)) {
                *bi += e;
            }
        }
        blocks.push((a, b));
    }
    let sys = BlockSystem::from_blocks(d, blocks)?;
    if realizable && !sys.is_realizable() {
        return Err(KaczmarzError::GenerationFailed(
            "constructed system is inconsistent".into(),
        ));
    }
    Ok(sys)
}

/// `x − c A_i⁺ (A_i x − b_i)`.
pub fn kaczmarz_step(
    sys: &BlockSystem,
    i: usize,
    x: &[f64],
    c: f64,
) -> Result<Vec<f64>, KaczmarzError> {
    check_relaxation(c)?;
    Ok(linalg::step(x, c, &sys.block(i)?.correction(x)))
}

fn check_relaxation(c: f64) -> Result<(), KaczmarzError> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(KaczmarzError::InvalidParameter(format!(
            "relaxation c = {c} outside (0, 1]"
        )));
    }
    Ok(())
}

fn check_start(sys: &BlockSystem, x1: &[f64]) -> Result<(), KaczmarzError> {
    if x1.len() != sys.dim {
        return Err(KaczmarzError::InvalidParameter(format!(
            "start has dimension {}, expected {}",
            x1.len(),
            sys.dim
        )));
    }
    Ok(())
}

/// Block Kaczmarz from `x_1 = 0` with uniformly sampled blocks.
pub fn run_kaczmarz(
    sys: &BlockSystem,
    c: f64,
    scheme: SamplingScheme,
    t_steps: usize,
    seed: u64,
) -> Result<Trajectory, KaczmarzError> {
    run_kaczmarz_from(sys, &vec![0.0; sys.dim], c, scheme, t_steps, seed)
}

pub fn run_kaczmarz_from(
    sys: &BlockSystem,
    x1: &[f64],
    c: f64,
    scheme: SamplingScheme,
    t_steps: usize,
    seed: u64,
) -> Result<Trajectory, KaczmarzError> {
    check_relaxation(c)?;
    check_start(sys, x1)?;
    let mut stream = IndexStream::new(sys.num_blocks(), scheme, t_steps, seed)?;
    let indices: Vec<usize> = (0..t_steps).map(|_| stream.next_index()).collect();
    Ok(replay(sys, x1, c, indices, seed))
}

/// Runs the recursion along a given block ordering.
pub(crate) fn replay(
    sys: &BlockSystem,
    x1: &[f64],
    c: f64,
    indices: Vec<usize>,
    seed: u64,
) -> Trajectory {
    let mut iterates = Vec::with_capacity(indices.len() + 1);
    let mut x = x1.to_vec();
    for &i in &indices {
        let next = linalg::step(&x, c, &sys.blocks[i].correction(&x));
        iterates.push(std::mem::replace(&mut x, next));
    }
    iterates.push(x);
    Trajectory {
        eta: c,
        seed,
        indices,
        iterates,
        gradient_norms_sq: None,
    }
}

/// Block Kaczmarz sampling block `i` with probability proportional to
/// `weights[i]` (e.g. squared Frobenius norms), with replacement.
pub fn run_kaczmarz_weighted(
    sys: &BlockSystem,
    c: f64,
    weights: &[f64],
    t_steps: usize,
    seed: u64,
) -> Result<Trajectory, KaczmarzError> {
    check_relaxation(c)?;
    if weights.len() != sys.num_blocks() {
        return Err(KaczmarzError::InvalidParameter(format!(
            "{} weights for {} blocks",
            weights.len(),
            sys.num_blocks()
        )));
    }
    let dist = WeightedIndex::new(weights)
        .map_err(|e| KaczmarzError::InvalidParameter(format!("sampling weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..t_steps).map(|_| dist.sample(&mut rng)).collect();
    Ok(replay(sys, &vec![0.0; sys.dim], c, indices, seed))
}

/// `(1/2m) Σ_j ‖A_j x − b_j‖²`.
pub fn kaczmarz_loss(sys: &BlockSystem, x: &[f64]) -> f64 {
    let m = sys.num_blocks() as f64;
    sys.blocks
        .iter()
        .fold(0.0, |acc, blk| acc + norm_sq(&blk.residual(x)))
        / (2.0 * m)
}

/// The objective `f_i(x) = ½‖A_i⁺(A_i x − b_i)‖²`, which is convex and
/// 1-smooth; SGD on it with `η = c` is block Kaczmarz with relaxation `c`.
#[derive(Debug, Clone, Copy)]
pub struct ReducedProblem<'a> {
    pub sys: &'a BlockSystem,
}

impl FiniteSum for ReducedProblem<'_> {
    fn dim(&self) -> usize {
        self.sys.dim
    }

    fn len(&self) -> usize {
        self.sys.num_blocks()
    }

    fn smoothness(&self) -> f64 {
        1.0
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        0.5 * norm_sq(&self.sys.blocks[i].correction(x))
    }

    fn component_grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.sys.blocks[i].reduced_gradient(x)
    }
}

pub fn reduced_problem(sys: &BlockSystem) -> Result<ReducedProblem<'_>, KaczmarzError> {
    sys.solution()?;
    Ok(ReducedProblem { sys })
}
