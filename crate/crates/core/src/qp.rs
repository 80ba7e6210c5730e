//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    ½ xᵀ H x + fᵀ x
//!     subject to  W x ⪯ w
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The solver starts
//! from the unconstrained minimizer and adds violated constraints one at a
//! time, dropping constraints whose multipliers would turn negative, so
//! every intermediate iterate is dual feasible. The factorization
//! `J = L⁻ᵀ Q` and the triangular `R` are updated with Givens rotations.
//!
//! A [`Solver`] keeps its scratch buffers and the last active set. The active
//! set is only used to order the search for violated constraints, so warm
//! and cold starts reach the same minimizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mathcore::{dot, Mat, MathError};

/// Maximum number of add/drop steps before giving up.
pub const MAX_ITERATIONS: usize = 200;
/// Symmetry tolerance on H (scaled by its largest entry when that exceeds 1).
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite problem data")]
    NonFinite,
    #[error("hessian is not symmetric")]
    NotSymmetric,
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible (detected while adding constraint {constraint})")]
    Infeasible { constraint: usize },
    #[error("iteration limit of {0} reached")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// `H` (n×n), symmetric positive definite.
    pub hessian: Mat,
    /// `f` (n).
    pub gradient: Vec<f64>,
    /// `W` (m×n).
    pub constraint_matrix: Mat,
    /// `w` (m).
    pub constraint_bound: Vec<f64>,
}

impl QpProblem {
    pub fn new(hessian: Mat, gradient: Vec<f64>, constraint_matrix: Mat, constraint_bound: Vec<f64>) -> Self {
        Self { hessian, gradient, constraint_matrix, constraint_bound }
    }

    pub fn unconstrained(hessian: Mat, gradient: Vec<f64>) -> Self {
        let n = gradient.len();
        Self::new(hessian, gradient, Mat::zeros(0, n), Vec::new())
    }

    pub fn num_variables(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraint_bound.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let hx = self.hessian.mul_vec(x);
        0.5 * dot(x, &hx) + dot(&self.gradient, x)
    }

    /// Largest constraint violation `max_i (W x − w)_i`, or 0 when feasible.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraint_matrix.mul_vec(x).iter().zip(&self.constraint_bound).fold(0.0, |m, (wx, w)| m.max(wx - w))
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// Stationarity `‖Hx + f + Wᵀμ‖∞`.
    pub fn stationarity_residual(&self, x: &[f64], multipliers: &[f64]) -> f64 {
        let hx = self.hessian.mul_vec(x);
        let wt = self.constraint_matrix.tr_mul_vec(multipliers);
        hx.iter().zip(&self.gradient).zip(&wt).fold(0.0, |m, ((a, b), c)| m.max((a + b + c).abs()))
    }

    /// `max_i |μ_i (Wx − w)_i|`.
    pub fn complementarity_residual(&self, x: &[f64], multipliers: &[f64]) -> f64 {
        self.constraint_matrix
            .mul_vec(x)
            .iter()
            .zip(&self.constraint_bound)
            .zip(multipliers)
            .fold(0.0, |m, ((wx, w), mu)| m.max((mu * (wx - w)).abs()))
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.num_variables();
        let m = self.num_constraints();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::DimensionMismatch(format!(
                "hessian is {:?}, gradient has {n} entries",
                self.hessian.shape()
            )));
        }
        if self.constraint_matrix.shape() != (m, n) {
            return Err(QpError::DimensionMismatch(format!(
                "constraint matrix is {:?}, expected ({m}, {n})",
                self.constraint_matrix.shape()
            )));
        }
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !finite(self.hessian.as_slice())
            || !finite(&self.gradient)
            || !finite(self.constraint_matrix.as_slice())
            || !finite(&self.constraint_bound)
        {
            return Err(QpError::NonFinite);
        }
        let tol = SYMMETRY_TOLERANCE * self.hessian.max_abs().max(1.0);
        if !self.hessian.is_symmetric(tol) {
            return Err(QpError::NotSymmetric);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Indices of the constraints active at `x`, in the order they were added.
    pub active_set: Vec<usize>,
    /// Lagrange multipliers `μ ⪰ 0`, one per constraint, zero off the active set.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
}

/// Reusable solver state. One instance per thread.
#[derive(Debug, Clone, Default)]
pub struct Solver {
    last_active: Vec<usize>,
    max_iterations: Option<usize>,
}

impl Solver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_max_iterations(max_iterations: usize) -> Self {
        Self { last_active: Vec::new(), max_iterations: Some(max_iterations) }
    }

    /// Solves `problem`, trying the previous call's active constraints first.
    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        let hint = std::mem::take(&mut self.last_active);
        let result = self.run(problem, &hint);
        if let Ok(sol) = &result {
            self.last_active = sol.active_set.clone();
        }
        result
    }

    pub fn solve_cold(&mut self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        self.last_active.clear();
        self.solve(problem)
    }

    pub fn last_active_set(&self) -> &[usize] {
        &self.last_active
    }

    fn run(&self, problem: &QpProblem, hint: &[usize]) -> Result<QpSolution, QpError> {
        problem.validate()?;
        let max_iterations = self.max_iterations.unwrap_or(MAX_ITERATIONS);
        let n = problem.num_variables();
        let m = problem.num_constraints();
        let w_mat = &problem.constraint_matrix;
        let w = &problem.constraint_bound;

        let l = problem.hessian.cholesky().map_err(|e| match e {
            MathError::NotPositiveDefinite => QpError::NotPositiveDefinite,
            other => QpError::DimensionMismatch(other.to_string()),
        })?;
        // J = L⁻ᵀ, so that J Jᵀ = H⁻¹.
        let mut j = Mat::zeros(n, n);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            // Column k of L⁻¹ is row k of J.
            let col = l.forward_substitute(&e);
            for (i, v) in col.iter().enumerate() {
                j[(k, i)] = *v;
            }
        }
        let mut r = Mat::zeros(n, n);

        // Unconstrained minimizer x = −H⁻¹ f = −J Jᵀ f.
        let jtf = j.tr_mul_vec(&problem.gradient);
        let mut x: Vec<f64> = j.mul_vec(&jtf).into_iter().map(|v| -v).collect();

        let row_norms: Vec<f64> = (0..m).map(|i| dot(w_mat.row(i), w_mat.row(i)).sqrt()).collect();
        let mut active: Vec<usize> = Vec::with_capacity(n);
        let mut duals: Vec<f64> = Vec::with_capacity(n);
        let mut is_active = vec![false; m];
        let mut iterations = 0usize;

        let slack = |x: &[f64], i: usize| w[i] - dot(w_mat.row(i), x);
        let violation_tol = |i: usize| 1e-11 * (1.0 + w[i].abs());
        if let Some(i) = (0..m).find(|&i| row_norms[i] == 0.0 && w[i] < -violation_tol(i)) {
            return Err(QpError::Infeasible { constraint: i });
        }

        loop {
            // Step 1: pick a violated constraint, preferring the hint.
            let hinted = hint
                .iter()
                .copied()
                .filter(|&i| i < m && !is_active[i] && row_norms[i] > 0.0)
                .find(|&i| slack(&x, i) < -violation_tol(i));
            let chosen = hinted.or_else(|| {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..m {
                    if is_active[i] || row_norms[i] == 0.0 {
                        continue;
                    }
                    let s = slack(&x, i);
                    if s < -violation_tol(i) {
                        let scaled = s / row_norms[i];
                        if best.is_none_or(|(_, b)| scaled < b) {
                            best = Some((i, scaled));
                        }
                    }
                }
                best.map(|(i, _)| i)
            });
            let Some(p) = chosen else { break };

            let normal: Vec<f64> = w_mat.row(p).iter().map(|v| -v).collect();
            let mut new_dual = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iterations {
                    return Err(QpError::IterationLimit(max_iterations));
                }
                let q = active.len();
                let mut d = j.tr_mul_vec(&normal);
                // z = J₂ d₂, r = R⁻¹ d₁
                let mut z = vec![0.0; n];
                for c in q..n {
                    if d[c] != 0.0 {
                        for (row, zr) in z.iter_mut().enumerate() {
                            *zr += d[c] * j[(row, c)];
                        }
                    }
                }
                let rvec = upper_solve(&r, &d[..q]);

                let rmax = rvec.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let mut partial: Option<(usize, f64)> = None;
                for (k, &rk) in rvec.iter().enumerate() {
                    if rk > 1e-13 * (1.0 + rmax) {
                        let ratio = duals[k] / rk;
                        if partial.is_none_or(|(_, t)| ratio < t) {
                            partial = Some((k, ratio));
                        }
                    }
                }
                let d2_sq: f64 = d[q..].iter().map(|v| v * v).sum();
                let d_sq: f64 = d.iter().map(|v| v * v).sum();
                let full = if d2_sq <= 1e-24 * d_sq.max(f64::MIN_POSITIVE) {
                    None
                } else {
                    Some((-slack(&x, p) / d2_sq).max(0.0))
                };

                match (partial, full) {
                    (None, None) => return Err(QpError::Infeasible { constraint: p }),
                    (Some((k, t)), None) => {
                        // Dual step only: the new normal is dependent on the active set.
                        step_duals(&mut duals, &rvec, t);
                        new_dual += t;
                        duals[k] = 0.0;
                        drop_constraint(&mut j, &mut r, &mut active, &mut duals, &mut is_active, k);
                    }
                    (partial, Some(t_full)) => {
                        let (t, drop) = match partial {
                            Some((k, t_part)) if t_part < t_full => (t_part, Some(k)),
                            _ => (t_full, None),
                        };
                        for (xi, zi) in x.iter_mut().zip(&z) {
                            *xi += t * zi;
                        }
                        step_duals(&mut duals, &rvec, t);
                        new_dual += t;
                        match drop {
                            Some(k) => {
                                duals[k] = 0.0;
                                drop_constraint(&mut j, &mut r, &mut active, &mut duals, &mut is_active, k);
                            }
                            None => {
                                add_constraint(&mut j, &mut r, &mut d, q);
                                active.push(p);
                                duals.push(new_dual);
                                is_active[p] = true;
                                break;
                            }
                        }
                    }
                }
            }
        }

        let mut multipliers = vec![0.0; m];
        for (&i, &u) in active.iter().zip(&duals) {
            multipliers[i] = u.max(0.0);
        }
        let objective = problem.objective(&x);
        Ok(QpSolution { x, active_set: active, multipliers, iterations, objective })
    }
}

/// Cold-start solve with a fresh [`Solver`].
pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    Solver::new().solve(problem)
}

fn step_duals(duals: &mut [f64], rvec: &[f64], t: f64) {
    for (u, rk) in duals.iter_mut().zip(rvec) {
        *u = (*u - t * rk).max(0.0);
    }
}

/// Solves with the leading `b.len()` square block of upper-triangular `r`.
fn upper_solve(r: &Mat, b: &[f64]) -> Vec<f64> {
    let q = b.len();
    let mut out = vec![0.0; q];
    for i in (0..q).rev() {
        let mut s = b[i];
        for k in (i + 1)..q {
            s -= r[(i, k)] * out[k];
        }
        out[i] = s / r[(i, i)];
    }
    out
}

/// Rotation `(c, s)` with `c·a + s·b = hypot(a, b)` and `−s·a + c·b = 0`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns(j: &mut Mat, c0: usize, c1: usize, c: f64, s: f64) {
    for row in 0..j.rows() {
        let a = j[(row, c0)];
        let b = j[(row, c1)];
        j[(row, c0)] = c * a + s * b;
        j[(row, c1)] = -s * a + c * b;
    }
}

/// Appends the constraint whose transformed normal is `d = Jᵀ n` as column
/// `q` of `R`, rotating `d[q+1..]` into `d[q]`.
fn add_constraint(j: &mut Mat, r: &mut Mat, d: &mut [f64], q: usize) {
    let n = d.len();
    for c in ((q + 1)..n).rev() {
        if d[c] == 0.0 {
            continue;
        }
        let (cs, sn, h) = givens(d[c - 1], d[c]);
        d[c - 1] = h;
        d[c] = 0.0;
        rotate_columns(j, c - 1, c, cs, sn);
    }
    for row in 0..=q {
        r[(row, q)] = d[row];
    }
}

fn drop_constraint(
    j: &mut Mat,
    r: &mut Mat,
    active: &mut Vec<usize>,
    duals: &mut Vec<f64>,
    is_active: &mut [bool],
    k: usize,
) {
    let q = active.len();
    is_active[active[k]] = false;
    active.remove(k);
    duals.remove(k);
    // Shift columns k+1..q of R left by one; R becomes upper Hessenberg from k.
    for c in k..(q - 1) {
        for row in 0..q {
            r[(row, c)] = r[(row, c + 1)];
        }
    }
    for row in 0..q {
        r[(row, q - 1)] = 0.0;
    }
    for c in k..(q - 1) {
        let (cs, sn, h) = givens(r[(c, c)], r[(c + 1, c)]);
        r[(c, c)] = h;
        r[(c + 1, c)] = 0.0;
        for col in (c + 1)..(q - 1) {
            let a = r[(c, col)];
            let b = r[(c + 1, col)];
            r[(c, col)] = cs * a + sn * b;
            r[(c + 1, col)] = -sn * a + cs * b;
        }
        rotate_columns(j, c, c + 1, cs, sn);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn box_rows(n: usize) -> Mat {
        Mat::identity(n).scale(-1.0).vstack(&Mat::identity(n)).unwrap()
    }

    #[test]
    fn unconstrained_least_squares() {
        let a = vec![0.3, -1.2, 2.5];
        let p = QpProblem::unconstrained(Mat::identity(3), a.iter().map(|v| -v).collect());
        let s = solve(&p).unwrap();
        for (x, e) in s.x.iter().zip(&a) {
            assert_abs_diff_eq!(x, e, epsilon = 1e-15);
        }
        assert!(s.active_set.is_empty());
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn single_active_bound() {
        let p = QpProblem::new(Mat::identity(1), vec![-2.0], Mat::from_rows(&[[1.0]]), vec![1.0]);
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.multipliers[0], 1.0, epsilon = 1e-15);
        assert_eq!(s.active_set, vec![0]);
    }

    #[test]
    fn inactive_constraint_has_zero_multiplier() {
        let p = QpProblem::new(Mat::identity(1), vec![-0.5], Mat::from_rows(&[[1.0]]), vec![1.0]);
        let s = solve(&p).unwrap();
        assert_eq!(s.x, vec![0.5]);
        assert_eq!(s.multipliers, vec![0.0]);
    }

    #[test]
    fn infeasible_is_reported() {
        // x ≤ −1 and −x ≤ −1 (x ≥ 1)
        let p = QpProblem::new(Mat::identity(1), vec![0.0], Mat::from_rows(&[[1.0], [-1.0]]), vec![-1.0, -1.0]);
        assert!(matches!(solve(&p), Err(QpError::Infeasible { .. })));
        // 0·x ≤ −1
        let p = QpProblem::new(Mat::identity(1), vec![0.0], Mat::from_rows(&[[0.0]]), vec![-1.0]);
        assert!(matches!(solve(&p), Err(QpError::Infeasible { .. })));
    }

    #[test]
    fn rejects_bad_hessians() {
        let p = QpProblem::unconstrained(Mat::from_rows(&[[1.0, 2.0], [2.0, 1.0]]), vec![0.0, 0.0]);
        assert_eq!(solve(&p), Err(QpError::NotPositiveDefinite));
        let p = QpProblem::unconstrained(Mat::from_rows(&[[1.0, 0.1], [0.0, 1.0]]), vec![0.0, 0.0]);
        assert_eq!(solve(&p), Err(QpError::NotSymmetric));
        let p = QpProblem::unconstrained(Mat::identity(2), vec![0.0]);
        assert!(matches!(solve(&p), Err(QpError::DimensionMismatch(_))));
        let p = QpProblem::unconstrained(Mat::identity(1), vec![f64::NAN]);
        assert_eq!(solve(&p), Err(QpError::NonFinite));
    }

    #[test]
    fn degenerate_duplicate_constraints() {
        // x ≤ 1 twice and 2x ≤ 2: all describe the same face.
        let p =
            QpProblem::new(Mat::identity(1), vec![-3.0], Mat::from_rows(&[[1.0], [1.0], [2.0]]), vec![1.0, 1.0, 2.0]);
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert!(p.stationarity_residual(&s.x, &s.multipliers) < 1e-12);
    }

    #[test]
    fn corner_of_box() {
        let n = 2;
        let p = QpProblem::new(Mat::identity(n), vec![-5.0, 5.0], box_rows(n), vec![1.0; 2 * n]);
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(&s.x[..], &[1.0, -1.0][..], epsilon = 1e-14);
        assert_relative_eq!(s.multipliers[2], 4.0, max_relative = 1e-12);
        assert_relative_eq!(s.multipliers[1], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn iteration_cap() {
        let n = 2;
        let p = QpProblem::new(Mat::identity(n), vec![-5.0, 5.0], box_rows(n), vec![1.0; 2 * n]);
        let mut solver = Solver::with_max_iterations(1);
        assert_eq!(solver.solve(&p), Err(QpError::IterationLimit(1)));
    }

    #[test]
    fn warm_start_reuses_active_set() {
        let n = 2;
        let p = QpProblem::new(Mat::identity(n), vec![-5.0, 5.0], box_rows(n), vec![1.0; 2 * n]);
        let mut solver = Solver::new();
        let cold = solver.solve(&p).unwrap();
        assert_eq!(solver.last_active_set(), &cold.active_set[..]);
        let warm = solver.solve(&p).unwrap();
        assert_eq!(warm.x, cold.x);
    }
}
