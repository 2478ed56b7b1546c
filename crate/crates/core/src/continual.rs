//! Continual linear regression learned to convergence on each task, and
//! projection onto convex sets (POCS), both driven by uniform task sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kaczmarz::{self, Block, BlockSystem, KaczmarzError};
use crate::linalg::{self, dist_sq, dot, norm, norm_sq};
use crate::optimizer::{IndexStream, OptimizerError, SamplingScheme, Trajectory};
use crate::problems::FiniteSum;

#[derive(Debug, Error)]
pub enum ContinualError {
    #[error("task {index} has no exact solution")]
    InconsistentTask { index: usize },
    #[error("tasks are not jointly realizable")]
    NotRealizable,
    #[error("degenerate set: {0}")]
    DegenerateSet(String),
    #[error("witness violates set {index} by {violation:e}")]
    InvalidWitness { index: usize, violation: f64 },
    #[error("ordering entry {index} out of range for {len} tasks")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("set collection json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Kaczmarz(#[from] KaczmarzError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

/// Jointly realizable regression tasks `(A_j, b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCollection {
    pub system: BlockSystem,
}

impl TaskCollection {
    pub fn new(system: BlockSystem) -> Result<Self, ContinualError> {
        if !system.is_realizable() {
            return Err(ContinualError::NotRealizable);
        }
        Ok(Self { system })
    }

    pub fn num_tasks(&self) -> usize {
        self.system.num_blocks()
    }

    pub fn x_star(&self) -> &[f64] {
        self.system
            .x_star
            .as_deref()
            .expect("checked at construction")
    }

    pub fn r(&self) -> f64 {
        self.system.r
    }
}

/// Random realizable tasks with `‖A_j‖₂ ≤ 1`.
pub fn make_task_collection(
    d: usize,
    m: usize,
    task_sizes: &[usize],
    seed: u64,
) -> Result<TaskCollection, ContinualError> {
    TaskCollection::new(kaczmarz::make_block_system(d, m, task_sizes, seed, true)?)
}

/// The closest point to `x` that fits `task` exactly, `x − A⁺(Ax − b)`.
pub fn regression_update(task: &Block, x: &[f64]) -> Result<Vec<f64>, ContinualError> {
    if !task.is_consistent() {
        return Err(ContinualError::InconsistentTask { index: 0 });
    }
    Ok(linalg::step(x, 1.0, &task.correction(x)))
}

/// Learns sampled tasks in sequence from `x_1 = 0`; the trajectory ends at
/// the returned model `x_{T+1}`.
pub fn run_continual_regression(
    tasks: &TaskCollection,
    scheme: SamplingScheme,
    t_steps: usize,
    seed: u64,
) -> Result<Trajectory, ContinualError> {
    if t_steps == 0 {
        return Err(ContinualError::InvalidParameter("need T >= 1".into()));
    }
    let blocks = &tasks.system.blocks;
    let mut stream = IndexStream::new(blocks.len(), scheme, t_steps, seed)?;
    let mut x = vec![0.0; tasks.system.dim];
    let mut indices = Vec::with_capacity(t_steps);
    let mut iterates = Vec::with_capacity(t_steps + 1);
    for _ in 0..t_steps {
        let i = stream.next_index();
        let next = regression_update(&blocks[i], &x)
            .map_err(|_| ContinualError::InconsistentTask { index: i })?;
        indices.push(i);
        iterates.push(std::mem::replace(&mut x, next));
    }
    iterates.push(x);
    Ok(Trajectory {
        eta: 1.0,
        seed,
        indices,
        iterates,
        gradient_norms_sq: None,
    })
}

/// `(1/2T) Σ_t ‖A_{τ(t)} x − b_{τ(t)}‖²` over the tasks seen.
pub fn forgetting(
    tasks: &TaskCollection,
    ordering: &[usize],
    x: &[f64],
) -> Result<f64, ContinualError> {
    let blocks = &tasks.system.blocks;
    if ordering.is_empty() {
        return Err(ContinualError::InvalidParameter("empty ordering".into()));
    }
    let mut acc = 0.0;
    for &j in ordering {
        let blk = blocks.get(j).ok_or(ContinualError::IndexOutOfRange {
            index: j,
            len: blocks.len(),
        })?;
        acc += norm_sq(&blk.residual(x));
    }
    Ok(acc / (2.0 * ordering.len() as f64))
}

/// `(1/2m) Σ_j ‖A_j x − b_j‖²`.
pub fn population_loss(tasks: &TaskCollection, x: &[f64]) -> f64 {
    kaczmarz::kaczmarz_loss(&tasks.system, x)
}

/// A closed convex set with a closed-form Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ConvexSet {
    /// `{x : A x = b}`, `a` given by rows.
    Affine { a: Vec<Vec<f64>>, b: Vec<f64> },
    /// `{x : ⟨a, x⟩ ≤ b}`.
    Halfspace { a: Vec<f64>, b: f64 },
    /// `{x : ‖x − center‖ ≤ radius}`.
    Ball { center: Vec<f64>, radius: f64 },
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            Self::Affine { a, .. } => a.first().map_or(0, |r| r.len()),
            Self::Halfspace { a, .. } => a.len(),
            Self::Ball { center, .. } => center.len(),
        }
    }

    fn validate(&self) -> Result<(), ContinualError> {
        let degenerate = |m: String| Err(ContinualError::DegenerateSet(m));
        match self {
            Self::Affine { a, b } => {
                let d = self.dim();
                if a.is_empty() || a.len() != b.len() || a.iter().any(|r| r.len() != d) || d == 0 {
                    return degenerate(
                        "affine set needs matching nonempty rows and targets".into(),
                    );
                }
            }
            Self::Halfspace { a, .. } => {
                if norm_sq(a) == 0.0 {
                    return degenerate("halfspace with zero normal".into());
                }
            }
            Self::Ball { radius, center } => {
                if !(*radius > 0.0) || center.is_empty() {
                    return degenerate(format!("ball radius {radius}"));
                }
            }
        }
        Ok(())
    }
}

/// Euclidean projection onto `set`.
pub fn project(set: &ConvexSet, x: &[f64]) -> Result<Vec<f64>, ContinualError> {
    set.validate()?;
    if x.len() != set.dim() {
        return Err(ContinualError::InvalidParameter(format!(
            "point has dimension {}, set has {}",
            x.len(),
            set.dim()
        )));
    }
    Ok(match set {
        ConvexSet::Affine { .. } => PreparedSet::new(set.clone())?.project(x),
        _ => project_simple(set, x),
    })
}

fn project_simple(set: &ConvexSet, x: &[f64]) -> Vec<f64> {
    match set {
        ConvexSet::Halfspace { a, b } => {
            let excess = dot(a, x) - b;
            if excess <= 0.0 {
                x.to_vec()
            } else {
                linalg::step(x, excess / norm_sq(a), a)
            }
        }
        ConvexSet::Ball { center, radius } => {
            let off = linalg::sub(x, center);
            let r = norm(&off);
            if r <= *radius {
                x.to_vec()
            } else {
                center
                    .iter()
                    .zip(&off)
                    .map(|(c, o)| c + radius * o / r)
                    .collect()
            }
        }
        ConvexSet::Affine { .. } => unreachable!("affine sets project through their cached block"),
    }
}

/// A set with any projection data precomputed.
#[derive(Debug, Clone, PartialEq)]
struct PreparedSet {
    set: ConvexSet,
    affine: Option<Block>,
}

impl PreparedSet {
    fn new(set: ConvexSet) -> Result<Self, ContinualError> {
        set.validate()?;
        let affine = match &set {
            ConvexSet::Affine { a, b } => {
                let m = linalg::matrix_from_rows(a, set.dim());
                let blk = Block::new(m, b.clone())?;
                if !blk.is_consistent() {
                    return Err(ContinualError::DegenerateSet("affine set is empty".into()));
                }
                Some(blk)
            }
            _ => None,
        };
        Ok(Self { set, affine })
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        match &self.affine {
            Some(blk) => linalg::step(x, 1.0, &blk.correction(x)),
            None => project_simple(&self.set, x),
        }
    }
}

/// Convex sets with a stored point of their common intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct SetCollection {
    prepared: Vec<PreparedSet>,
    pub witness: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SetCollectionDocument {
    sets: Vec<ConvexSet>,
    witness: Vec<f64>,
}

impl SetCollection {
    /// Checks every set is well formed and contains the witness up to `1e−9`.
    pub fn new(sets: Vec<ConvexSet>, witness: Vec<f64>) -> Result<Self, ContinualError> {
        if sets.is_empty() {
            return Err(ContinualError::InvalidParameter(
                "empty set collection".into(),
            ));
        }
        let d = witness.len();
        let mut prepared = Vec::with_capacity(sets.len());
        for (index, s) in sets.into_iter().enumerate() {
            if s.dim() != d {
                return Err(ContinualError::InvalidParameter(format!(
                    "set {index} has dimension {}, witness has {d}",
                    s.dim()
                )));
            }
            let p = PreparedSet::new(s)?;
            let violation = dist_sq(&p.project(&witness), &witness).sqrt();
            if violation > 1e-9 * (1.0 + norm(&witness)) {
                return Err(ContinualError::InvalidWitness { index, violation });
            }
            prepared.push(p);
        }
        Ok(Self { prepared, witness })
    }

    pub fn dim(&self) -> usize {
        self.witness.len()
    }

    pub fn len(&self) -> usize {
        self.prepared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prepared.is_empty()
    }

    pub fn sets(&self) -> impl Iterator<Item = &ConvexSet> {
        self.prepared.iter().map(|p| &p.set)
    }

    pub fn project_onto(&self, j: usize, x: &[f64]) -> Vec<f64> {
        self.prepared[j].project(x)
    }

    pub fn to_json(&self) -> Result<String, ContinualError> {
        let doc = SetCollectionDocument {
            sets: self.sets().cloned().collect(),
            witness: self.witness.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ContinualError> {
        let doc: SetCollectionDocument = serde_json::from_str(s)?;
        Self::new(doc.sets, doc.witness)
    }
}

/// Halfspaces, balls and affine subspaces through a random witness of norm
/// two, cycling through the three kinds. The origin typically lies outside
/// the intersection.
pub fn make_set_collection(d: usize, m: usize, seed: u64) -> Result<SetCollection, ContinualError> {
    if d < 2 || m == 0 {
        return Err(ContinualError::InvalidParameter(format!(
            "need d >= 2 and m >= 1 (d={d}, m={m})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let witness = linalg::scale(&linalg::unit_vector(&mut rng, d), 2.0);
    let mut sets = Vec::with_capacity(m);
    for k in 0..m {
        let set = match k % 3 {
            0 => {
                let a = linalg::unit_vector(&mut rng, d);
                let slack: f64 = rng.random_range(0.0..0.1);
                ConvexSet::Halfspace {
                    b: dot(&a, &witness) + slack,
                    a,
                }
            }
            1 => {
                let radius: f64 = rng.random_range(1.0..2.0);
                let u = linalg::unit_vector(&mut rng, d);
                let center = witness
                    .iter()
                    .zip(&u)
                    .map(|(w, ui)| w + 0.5 * radius * ui)
                    .collect();
                ConvexSet::Ball { center, radius }
            }
            _ => {
                let rows = 1 + k % (d - 1).min(2);
                let a: Vec<Vec<f64>> = (0..rows)
                    .map(|_| linalg::unit_vector(&mut rng, d))
                    .collect();
                let b = a.iter().map(|r| dot(r, &witness)).collect();
                ConvexSet::Affine { a, b }
            }
        };
        sets.push(set);
    }
    SetCollection::new(sets, witness)
}

/// POCS from `x_1 = 0`: `x_{t+1} = Π_{τ(t)}(x_t)`.
pub fn run_pocs(
    sets: &SetCollection,
    scheme: SamplingScheme,
    t_steps: usize,
    seed: u64,
) -> Result<Trajectory, ContinualError> {
    let mut stream = IndexStream::new(sets.len(), scheme, t_steps, seed)?;
    let mut x = vec![0.0; sets.dim()];
    let mut indices = Vec::with_capacity(t_steps);
    let mut iterates = Vec::with_capacity(t_steps + 1);
    for _ in 0..t_steps {
        let j = stream.next_index();
        let next = sets.project_onto(j, &x);
        indices.push(j);
        iterates.push(std::mem::replace(&mut x, next));
    }
    iterates.push(x);
    Ok(Trajectory {
        eta: 1.0,
        seed,
        indices,
        iterates,
        gradient_norms_sq: None,
    })
}

/// `(1/2m) Σ_j ‖x − Π_j(x)‖²`.
pub fn pocs_objective(sets: &SetCollection, x: &[f64]) -> f64 {
    let m = sets.len() as f64;
    (0..sets.len()).fold(0.0, |acc, j| acc + dist_sq(x, &sets.project_onto(j, x))) / (2.0 * m)
}

/// `f_j(x) = ½‖x − Π_j(x)‖²`, a convex 1-smooth objective with gradient
/// `x − Π_j(x)`; SGD on it with `η = 1` is POCS.
#[derive(Debug, Clone, Copy)]
pub struct PocsProblem<'a> {
    pub sets: &'a SetCollection,
}

impl FiniteSum for PocsProblem<'_> {
    fn dim(&self) -> usize {
        self.sets.dim()
    }

    fn len(&self) -> usize {
        self.sets.len()
    }

    fn smoothness(&self) -> f64 {
        1.0
    }

    fn component_value(&self, j: usize, x: &[f64]) -> f64 {
        0.5 * dist_sq(x, &self.sets.project_onto(j, x))
    }

    fn component_grad(&self, j: usize, x: &[f64]) -> Vec<f64> {
        linalg::sub(x, &self.sets.project_onto(j, x))
    }
}

/// Projection of `x` onto the intersection by Dykstra's alternating
/// projections. Returns the point and whether the sweep change fell below
/// `tol` within `max_sweeps`.
pub fn dykstra_projection(
    sets: &SetCollection,
    x: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> (Vec<f64>, bool) {
    let m = sets.len();
    let mut y = x.to_vec();
    let mut increments = vec![vec![0.0; x.len()]; m];
    for _ in 0..max_sweeps {
        let start = y.clone();
        let mut inc_change = 0.0;
        for (j, p) in increments.iter_mut().enumerate() {
            let shifted: Vec<f64> = y.iter().zip(p.iter()).map(|(a, b)| a + b).collect();
            let next = sets.project_onto(j, &shifted);
            let new_p = linalg::sub(&shifted, &next);
            inc_change += dist_sq(&new_p, p);
            *p = new_p;
            y = next;
        }
        if dist_sq(&start, &y) + inc_change <= tol * tol {
            return (y, true);
        }
    }
    (y, false)
}

/// `min_{x ∈ ∩C} ‖x_1 − x‖²`.
pub fn intersection_distance_sq(sets: &SetCollection, x1: &[f64]) -> Result<f64, ContinualError> {
    let (p, converged) = dykstra_projection(sets, x1, 1e-13, 1_000_000);
    if !converged {
        return Err(ContinualError::InvalidParameter(
            "alternating projections did not converge".into(),
        ));
    }
    Ok(dist_sq(x1, &p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kaczmarz::{kaczmarz_step, run_kaczmarz};
    use crate::optimizer::{run_sgd_with_stepsize, RecordFlags};
    use nalgebra::DMatrix;

    fn one_row(a: &[f64], b: f64) -> Block {
        Block::new(DMatrix::from_row_slice(1, a.len(), a), vec![b]).unwrap()
    }

    #[test]
    fn regression_update_cases() {
        let task = one_row(&[1.0, 0.0], 1.0);
        assert_eq!(
            regression_update(&task, &[0.0, 0.0]).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            regression_update(&task, &[1.0, 5.0]).unwrap(),
            vec![1.0, 5.0]
        );
        let bad = Block::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            regression_update(&bad, &[0.0]),
            Err(ContinualError::InconsistentTask { .. })
        ));
    }

    #[test]
    fn regression_update_is_full_kaczmarz_step_bitwise() {
        let tasks = make_task_collection(6, 4, &[2, 1, 3, 2], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let x = linalg::gaussian(&mut rng, 6);
            for (i, blk) in tasks.system.blocks.iter().enumerate() {
                let a = regression_update(blk, &x).unwrap();
                let b = kaczmarz_step(&tasks.system, i, &x, 1.0).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn continual_run_matches_kaczmarz() {
        let tasks = make_task_collection(6, 8, &[2; 8], 3).unwrap();
        for scheme in [
            SamplingScheme::WithReplacement,
            SamplingScheme::WithoutReplacement,
        ] {
            let t = if scheme == SamplingScheme::WithReplacement {
                100
            } else {
                8
            };
            let c = run_continual_regression(&tasks, scheme, t, 5).unwrap();
            let k = run_kaczmarz(&tasks.system, 1.0, scheme, t, 5).unwrap();
            assert_eq!(c, k);
        }
    }

    #[test]
    fn single_task_converges_in_one_step() {
        let tasks = make_task_collection(4, 1, &[2], 0).unwrap();
        let tr = run_continual_regression(&tasks, SamplingScheme::WithReplacement, 5, 0).unwrap();
        for t in 2..=6 {
            let f = forgetting(&tasks, &tr.indices[..t - 1], tr.x(t)).unwrap();
            assert!(f < 1e-28);
        }
    }

    #[test]
    fn forgetting_cases() {
        let sys =
            BlockSystem::from_blocks(1, vec![(DMatrix::from_row_slice(1, 1, &[1.0]), vec![0.0])])
                .unwrap();
        let tasks = TaskCollection::new(sys).unwrap();
        assert_eq!(forgetting(&tasks, &[0], &[2.0]).unwrap(), 2.0);
        assert_eq!(forgetting(&tasks, &[0], &[0.0]).unwrap(), 0.0);
        assert!(forgetting(&tasks, &[1], &[0.0]).is_err());

        let tasks = make_task_collection(3, 4, &[1, 2, 1, 1], 2).unwrap();
        let x = [0.3, -1.0, 2.0];
        let balanced = [0, 1, 2, 3, 3, 2, 1, 0];
        let f = forgetting(&tasks, &balanced, &x).unwrap();
        assert!((f - population_loss(&tasks, &x)).abs() < 1e-14);
        assert!(population_loss(&tasks, tasks.x_star()) < 1e-24);
    }

    #[test]
    fn losses_vanish_exactly_on_solution_set() {
        let tasks = make_task_collection(5, 3, &[1, 1, 1], 4).unwrap();
        let tr = run_continual_regression(&tasks, SamplingScheme::WithReplacement, 200, 1).unwrap();
        let fin = tr.final_point();
        assert!(population_loss(&tasks, fin) >= 0.0);
        assert!(forgetting(&tasks, &tr.indices, fin).unwrap() >= 0.0);
        // d = 5 with three rows: the solution set is affine of dimension 2
        let mut moved = tasks.x_star().to_vec();
        let blocks: Vec<Vec<f64>> = tasks
            .system
            .blocks
            .iter()
            .map(|b| b.a.row(0).iter().copied().collect())
            .collect();
        let a = linalg::matrix_from_rows(&blocks, 5);
        let p = linalg::pseudoinverse(&a, 1e-12).unwrap();
        let z = nalgebra::DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5, 0.0]);
        let null = &z - &p * (&a * &z);
        for (m, n) in moved.iter_mut().zip(null.iter()) {
            *m += n;
        }
        assert!(population_loss(&tasks, &moved) <= 1e-12);
    }

    #[test]
    fn projections_of_simple_sets() {
        let ball = ConvexSet::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert_eq!(project(&ball, &[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project(&ball, &[0.5, 0.0]).unwrap(), vec![0.5, 0.0]);
        let half = ConvexSet::Halfspace {
            a: vec![1.0, 0.0],
            b: 0.0,
        };
        assert_eq!(project(&half, &[3.0, 4.0]).unwrap(), vec![0.0, 4.0]);
        assert_eq!(project(&half, &[-3.0, 4.0]).unwrap(), vec![-3.0, 4.0]);
        let aff = ConvexSet::Affine {
            a: vec![vec![1.0, 0.0]],
            b: vec![1.0],
        };
        assert_eq!(project(&aff, &[0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            project(
                &ConvexSet::Halfspace {
                    a: vec![0.0, 0.0],
                    b: 1.0
                },
                &[0.0, 0.0]
            ),
            Err(ContinualError::DegenerateSet(_))
        ));
        assert!(matches!(
            project(
                &ConvexSet::Ball {
                    center: vec![0.0],
                    radius: 0.0
                },
                &[1.0]
            ),
            Err(ContinualError::DegenerateSet(_))
        ));
    }

    #[test]
    fn one_set_is_feasible_after_one_step() {
        let sets = SetCollection::new(
            vec![ConvexSet::Ball {
                center: vec![3.0, 0.0],
                radius: 1.0,
            }],
            vec![3.0, 0.0],
        )
        .unwrap();
        let tr = run_pocs(&sets, SamplingScheme::WithReplacement, 1, 0).unwrap();
        assert_eq!(tr.final_point(), &[2.0, 0.0]);
        assert_eq!(pocs_objective(&sets, &[0.0, 0.0]), 0.5 * 4.0);
    }

    #[test]
    fn crossing_lines_converge_monotonically() {
        let sets = SetCollection::new(
            vec![
                ConvexSet::Affine {
                    a: vec![vec![1.0, -1.0]],
                    b: vec![0.0],
                },
                ConvexSet::Affine {
                    a: vec![vec![1.0, 1.0]],
                    b: vec![2.0],
                },
            ],
            vec![1.0, 1.0],
        )
        .unwrap();
        let tr = run_pocs(&sets, SamplingScheme::WithReplacement, 60, 4).unwrap();
        for w in tr.iterates.windows(2) {
            assert!(dist_sq(&w[1], &sets.witness) <= dist_sq(&w[0], &sets.witness) + 1e-28);
        }
        assert!(dist_sq(tr.final_point(), &sets.witness) < 1e-20);
    }

    #[test]
    fn pocs_matches_sgd_on_distance_objective() {
        let sets = make_set_collection(4, 7, 3).unwrap();
        let problem = PocsProblem { sets: &sets };
        let pocs = run_pocs(&sets, SamplingScheme::WithReplacement, 100, 8).unwrap();
        let sgd = run_sgd_with_stepsize(
            &problem,
            &[0.0; 4],
            1.0,
            SamplingScheme::WithReplacement,
            100,
            8,
            RecordFlags::default(),
        )
        .unwrap();
        assert!(pocs.max_relative_deviation(&sgd) <= 1e-9);
    }

    #[test]
    fn gradient_step_is_projection() {
        let sets = make_set_collection(3, 6, 1).unwrap();
        let problem = PocsProblem { sets: &sets };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..50 {
            let x = linalg::scale(&linalg::gaussian(&mut rng, 3), 3.0);
            let j = k % sets.len();
            let stepped = linalg::step(&x, 1.0, &problem.component_grad(j, &x));
            assert!(dist_sq(&stepped, &sets.project_onto(j, &x)).sqrt() <= 1e-12);
        }
    }

    #[test]
    fn distance_to_witness_is_nonincreasing() {
        let sets = make_set_collection(5, 9, 2).unwrap();
        let tr = run_pocs(&sets, SamplingScheme::WithReplacement, 200, 0).unwrap();
        for w in tr.iterates.windows(2) {
            assert!(
                dist_sq(&w[1], &sets.witness).sqrt()
                    <= dist_sq(&w[0], &sets.witness).sqrt() + 1e-14
            );
        }
    }

    #[test]
    fn dykstra_finds_closest_intersection_point() {
        // halfspace x <= 0 and ball of radius 1 about (0, 2): from (1, 0) the
        // closest feasible point is (0, 1)
        let sets = SetCollection::new(
            vec![
                ConvexSet::Halfspace {
                    a: vec![1.0, 0.0],
                    b: 0.0,
                },
                ConvexSet::Ball {
                    center: vec![0.0, 2.0],
                    radius: 1.0,
                },
            ],
            vec![0.0, 2.0],
        )
        .unwrap();
        let d = intersection_distance_sq(&sets, &[1.0, 0.0]).unwrap();
        assert!((d - 2.0).abs() < 1e-10, "{d}");
        let sets = make_set_collection(4, 6, 0).unwrap();
        let d = intersection_distance_sq(&sets, &[0.0; 4]).unwrap();
        assert!(d <= norm_sq(&sets.witness) + 1e-12);
    }

    #[test]
    fn witness_is_checked() {
        let bad = SetCollection::new(
            vec![ConvexSet::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            }],
            vec![3.0, 0.0],
        );
        assert!(matches!(
            bad,
            Err(ContinualError::InvalidWitness { index: 0, .. })
        ));
    }

    #[test]
    fn set_json_layout_and_roundtrip() {
        let sets = make_set_collection(3, 5, 7).unwrap();
        let s = sets.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["sets"][0]["kind"], "halfspace");
        assert!(v["sets"][1]["params"]["radius"].is_number());
        assert_eq!(v["witness"].as_array().unwrap().len(), 3);
        assert_eq!(SetCollection::from_json(&s).unwrap(), sets);
    }
}
