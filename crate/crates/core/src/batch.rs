//! Data-parallel sweeps: batches of forward kinematics, Jacobians, QP solves
//! and closed-loop runs.
//!
//! With the `parallel` feature (on by default) [`Execution::Parallel`] runs on
//! the rayon pool; without it every sweep runs sequentially. Results are
//! returned in input order either way, and each item is computed by the same
//! code path, so both modes give bit-identical output.

use crate::controller::{run_to_target, ControllerConfig, ControllerError, ConvergenceRun};
use crate::kinematics::{fkm, kinematics, DHChain, JointVector, Kinematics, KinematicsError, Pose};
use crate::qp::{QpError, QpProblem, QpSolution, Solver};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `true` when `Parallel` actually fans out (the feature is compiled in).
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

pub fn fk_batch(exec: Execution, chain: &DHChain, qs: &[JointVector]) -> Result<Vec<Pose>, KinematicsError> {
    map(exec, qs, |q| fkm(chain, q)).into_iter().collect()
}

pub fn kinematics_batch(
    exec: Execution,
    chain: &DHChain,
    qs: &[JointVector],
) -> Result<Vec<Kinematics>, KinematicsError> {
    map(exec, qs, |q| kinematics(chain, q)).into_iter().collect()
}

/// Cold-start solves, one fresh solver per problem.
pub fn solve_batch(exec: Execution, problems: &[QpProblem]) -> Vec<Result<QpSolution, QpError>> {
    map(exec, problems, |p| Solver::new().solve(p))
}

/// One closed-loop scenario: start configuration and target pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub q0: JointVector,
    pub target: Pose,
}

pub fn convergence_batch(
    exec: Execution,
    chain: &DHChain,
    cfg: &ControllerConfig,
    scenarios: &[Scenario],
    steps: usize,
    tolerance: f64,
) -> Vec<Result<ConvergenceRun, ControllerError>> {
    map(exec, scenarios, |s| run_to_target(chain, cfg, &s.q0, &s.target, steps, tolerance))
}
