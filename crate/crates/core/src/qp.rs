//! Dual quadratic program solver.
//!
//! Minimizes `½ αᵀHα + cᵀα` (equivalently maximizes `Q(α) = -(½ αᵀHα + cᵀα)`)
//! over `α ≥ 0`, optionally with `Σ dᵢαᵢ = 0` and `α ≤ C`.
//!
//! Without the equality constraint the solver runs cyclic projected
//! coordinate descent; with it, an SMO-style maximal-violating-pair method.
//! Both start from `α = 0` and are fully deterministic.

use thiserror::Error;

use crate::linalg::{self, dot, LinalgError, Matrix};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Largest problem the brute-force oracle accepts.
pub const ORACLE_MAX_DIM: usize = 10;

/// `H` is accepted if `H + PSD_SLACK * max(1, max|H|) * I` is positive definite.
pub const PSD_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian must be square and symmetric: {0}")]
    BadHessian(LinalgError),
    #[error("Hessian is not positive semidefinite")]
    Indefinite,
    #[error("box bound must be positive, got {0}")]
    InfeasibleBox(f64),
    #[error("expected vectors of length {expected}, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("labels must be -1 or +1")]
    BadLabels,
    #[error("invalid solver setting: {0}")]
    BadSetting(&'static str),
    #[error("objective is unbounded along coordinate {index}")]
    Unbounded { index: usize },
    #[error("no convergence after {} iterations (KKT residual {:e})", .0.iterations, .0.kkt_residual)]
    NotConverged(Box<QpSolution>),
    #[error("brute-force oracle supports at most {ORACLE_MAX_DIM} variables, got {0}")]
    TooLarge(usize),
    #[error("brute-force oracle found no feasible stationary point")]
    NoFeasiblePoint,
}

/// A dual QP instance.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h: Matrix,
    /// Linear term `c`; all `-1` for the SHM dual.
    pub linear: Vec<f64>,
    /// Present iff the equality constraint `Σ dᵢαᵢ = 0` is active.
    pub labels: Option<Vec<f64>>,
    /// Present iff the box constraint `α ≤ C` is active.
    pub upper: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub alpha: Vec<f64>,
    /// Value of the maximized dual `Q(α)`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl QpProblem {
    /// SHM dual with linear term `-e`, no equality and no box.
    pub fn new(h: Matrix) -> Self {
        let n = h.rows();
        Self {
            h,
            linear: vec![-1.0; n],
            labels: None,
            upper: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn with_linear(mut self, linear: Vec<f64>) -> Self {
        self.linear = linear;
        self
    }

    pub fn with_equality(mut self, labels: Vec<f64>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_upper(mut self, c: f64) -> Self {
        self.upper = Some(c);
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    fn upper_bound(&self) -> f64 {
        self.upper.unwrap_or(f64::INFINITY)
    }

    /// Checks shapes and settings, but not definiteness.
    fn validate_shape(&self) -> Result<(), QpError> {
        if !self.h.is_square() {
            return Err(QpError::BadHessian(LinalgError::NotSquare {
                rows: self.h.rows(),
                cols: self.h.cols(),
            }));
        }
        if !self.h.is_symmetric(linalg::SYMMETRY_TOL) {
            return Err(QpError::BadHessian(LinalgError::NotSymmetric {
                defect: self.h.symmetry_defect(),
            }));
        }
        let n = self.dim();
        if self.linear.len() != n {
            return Err(QpError::ShapeMismatch {
                expected: n,
                found: self.linear.len(),
            });
        }
        if self.linear.iter().any(|v| !v.is_finite()) {
            return Err(QpError::BadSetting("linear term must be finite"));
        }
        if let Some(d) = &self.labels {
            if d.len() != n {
                return Err(QpError::ShapeMismatch {
                    expected: n,
                    found: d.len(),
                });
            }
            if d.iter().any(|&v| v != 1.0 && v != -1.0) {
                return Err(QpError::BadLabels);
            }
        }
        if let Some(c) = self.upper {
            if c.is_nan() || c <= 0.0 {
                return Err(QpError::InfeasibleBox(c));
            }
        }
        if !(self.tol > 0.0) {
            return Err(QpError::BadSetting("tolerance must be positive"));
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), QpError> {
        self.validate_shape()?;
        let slack = PSD_SLACK * self.h.max_abs().max(1.0);
        let shifted = self.h.shifted_diagonal(slack).map_err(QpError::BadHessian)?;
        if linalg::cholesky(&shifted).is_none() {
            return Err(QpError::Indefinite);
        }
        Ok(())
    }

    /// `Hα + c`.
    pub fn gradient(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| dot(self.h.row(i), alpha) + self.linear[i])
            .collect()
    }

    /// Maximized dual value `Q(α) = -(½ αᵀHα + cᵀα)`.
    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let grad = self.gradient(alpha);
        objective_from_gradient(alpha, &grad, &self.linear)
    }

    /// Largest KKT violation at `alpha`.
    ///
    /// Without the equality constraint this is the projected-gradient
    /// violation per coordinate; with it, the gap between the maximal
    /// violating pair.
    pub fn kkt_residual(&self, alpha: &[f64]) -> f64 {
        let grad = self.gradient(alpha);
        match &self.labels {
            None => bound_violation(alpha, &grad, self.upper_bound()),
            Some(d) => match violating_pair(alpha, &grad, d, self.upper_bound()) {
                Some((_, _, gap)) => gap.max(0.0),
                None => 0.0,
            },
        }
    }
}

fn objective_from_gradient(alpha: &[f64], grad: &[f64], linear: &[f64]) -> f64 {
    // ½αᵀHα + cᵀα = ½αᵀ(g + c) with g = Hα + c
    let mut acc = 0.0;
    for i in 0..alpha.len() {
        acc += alpha[i] * (grad[i] + linear[i]);
    }
    -0.5 * acc
}

fn bound_violation(alpha: &[f64], grad: &[f64], upper: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (&a, &g) in alpha.iter().zip(grad) {
        let v = if a <= 0.0 {
            (-g).max(0.0)
        } else if a >= upper {
            g.max(0.0)
        } else {
            g.abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Maximal violating pair `(i, j, gap)` for the equality-constrained problem.
/// Ties go to the lowest index.
fn violating_pair(alpha: &[f64], grad: &[f64], d: &[f64], upper: f64) -> Option<(usize, usize, f64)> {
    let mut best_up: Option<(usize, f64)> = None;
    let mut best_low: Option<(usize, f64)> = None;
    for t in 0..alpha.len() {
        let score = -d[t] * grad[t];
        let can_up = if d[t] > 0.0 { alpha[t] < upper } else { alpha[t] > 0.0 };
        let can_low = if d[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < upper };
        if can_up && best_up.is_none_or(|(_, s)| score > s) {
            best_up = Some((t, score));
        }
        if can_low && best_low.is_none_or(|(_, s)| score < s) {
            best_low = Some((t, score));
        }
    }
    match (best_up, best_low) {
        (Some((i, m)), Some((j, lo))) => Some((i, j, m - lo)),
        _ => None,
    }
}

/// Solves the problem. See [`solve_observed`].
pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    solve_observed(p, |_, _| {})
}

/// Solves the problem, calling `observer(iteration, Q(α))` after every sweep
/// (coordinate descent) or pair update (SMO).
pub fn solve_observed(p: &QpProblem, observer: impl FnMut(usize, f64)) -> Result<QpSolution, QpError> {
    p.validate()?;
    match &p.labels {
        None => coordinate_descent(p, observer),
        Some(d) => smo(p, d, observer),
    }
}

fn coordinate_descent(p: &QpProblem, mut observer: impl FnMut(usize, f64)) -> Result<QpSolution, QpError> {
    let n = p.dim();
    let upper = p.upper_bound();
    let mut alpha = vec![0.0; n];

    let finish = |alpha: Vec<f64>, iterations: usize, converged: bool| {
        let grad = p.gradient(&alpha);
        QpSolution {
            objective: objective_from_gradient(&alpha, &grad, &p.linear),
            kkt_residual: bound_violation(&alpha, &grad, upper),
            alpha,
            iterations,
            converged,
        }
    };

    if bound_violation(&alpha, &p.linear, upper) <= p.tol {
        return Ok(finish(alpha, 0, true));
    }

    for sweep in 1..=p.max_iter {
        for i in 0..n {
            let g = dot(p.h.row(i), &alpha) + p.linear[i];
            let hii = p.h.get(i, i);
            let target = if hii > 0.0 {
                alpha[i] - g / hii
            } else if g < 0.0 {
                if upper.is_finite() {
                    upper
                } else {
                    return Err(QpError::Unbounded { index: i });
                }
            } else {
                0.0
            };
            alpha[i] = target.clamp(0.0, upper);
        }
        let grad = p.gradient(&alpha);
        observer(sweep, objective_from_gradient(&alpha, &grad, &p.linear));
        if bound_violation(&alpha, &grad, upper) <= p.tol {
            return Ok(finish(alpha, sweep, true));
        }
    }
    Err(QpError::NotConverged(Box::new(finish(alpha, p.max_iter, false))))
}

fn smo(p: &QpProblem, d: &[f64], mut observer: impl FnMut(usize, f64)) -> Result<QpSolution, QpError> {
    let n = p.dim();
    let upper = p.upper_bound();
    let mut alpha = vec![0.0; n];
    let mut grad = p.linear.clone();

    let finish = |alpha: Vec<f64>, iterations: usize, converged: bool| {
        let grad = p.gradient(&alpha);
        let residual = violating_pair(&alpha, &grad, d, upper).map_or(0.0, |(_, _, gap)| gap.max(0.0));
        QpSolution {
            objective: objective_from_gradient(&alpha, &grad, &p.linear),
            kkt_residual: residual,
            alpha,
            iterations,
            converged,
        }
    };

    let mut iter = 0;
    loop {
        let pair = violating_pair(&alpha, &grad, d, upper).filter(|&(_, _, gap)| gap > p.tol);
        let Some((i, j, gap)) = pair else {
            // Confirm with a freshly computed gradient before stopping.
            grad = p.gradient(&alpha);
            match violating_pair(&alpha, &grad, d, upper) {
                Some((_, _, gap)) if gap > p.tol => continue,
                _ => return Ok(finish(alpha, iter, true)),
            }
        };
        if iter == p.max_iter {
            return Err(QpError::NotConverged(Box::new(finish(alpha, iter, false))));
        }
        iter += 1;

        // Move along u = dᵢeᵢ - dⱼeⱼ, which keeps Σ dα fixed.
        let quad = p.h.get(i, i) + p.h.get(j, j) - 2.0 * d[i] * d[j] * p.h.get(i, j);
        let newton = if quad > 0.0 { gap / quad } else { f64::INFINITY };
        let room_i = if d[i] > 0.0 { upper - alpha[i] } else { alpha[i] };
        let room_j = if d[j] > 0.0 { alpha[j] } else { upper - alpha[j] };
        let step = newton.min(room_i).min(room_j);
        if !step.is_finite() {
            return Err(QpError::Unbounded { index: i });
        }

        let new_i = if step == room_i {
            if d[i] > 0.0 { upper } else { 0.0 }
        } else {
            (alpha[i] + d[i] * step).clamp(0.0, upper)
        };
        let new_j = if step == room_j {
            if d[j] > 0.0 { 0.0 } else { upper }
        } else {
            (alpha[j] - d[j] * step).clamp(0.0, upper)
        };
        let delta_i = new_i - alpha[i];
        let delta_j = new_j - alpha[j];
        alpha[i] = new_i;
        alpha[j] = new_j;
        for (k, g) in grad.iter_mut().enumerate() {
            *g += p.h.get(k, i) * delta_i + p.h.get(k, j) * delta_j;
        }
        observer(iter, objective_from_gradient(&alpha, &grad, &p.linear));
    }
}

/// Exhaustive active-set reference solver for small problems.
///
/// Every variable is assigned to one of {free, at 0, at C}; the free block
/// is solved from its stationarity (plus equality) system and the best
/// primal-feasible candidate wins. For a convex QP with a finite optimum
/// some basic optimal solution always appears among the candidates.
pub fn brute_force_oracle(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.validate_shape()?;
    let n = p.dim();
    if n > ORACLE_MAX_DIM {
        return Err(QpError::TooLarge(n));
    }
    let upper = p.upper_bound();
    let states: usize = if upper.is_finite() { 3 } else { 2 };
    let feas_tol = 1e-9 * (1.0 + if upper.is_finite() { upper } else { 0.0 });

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut examined = 0;
    let total = states.pow(n as u32);
    for code in 0..total {
        let mut free = Vec::new();
        let mut alpha = vec![0.0; n];
        let mut c = code;
        for (i, a) in alpha.iter_mut().enumerate() {
            match c % states {
                0 => free.push(i),
                1 => *a = 0.0,
                _ => *a = upper,
            }
            c /= states;
        }
        examined += 1;

        let k = free.len();
        let eq = p.labels.as_ref();
        let dim = k + usize::from(eq.is_some() && k > 0);
        if dim > 0 {
            let mut sys = Matrix::zeros(dim, dim);
            let mut rhs = vec![0.0; dim];
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    sys.set(r, s, p.h.get(i, j));
                }
                let mut b = -p.linear[i];
                for j in 0..n {
                    if !free.contains(&j) {
                        b -= p.h.get(i, j) * alpha[j];
                    }
                }
                rhs[r] = b;
            }
            if let Some(d) = eq {
                for (r, &i) in free.iter().enumerate() {
                    sys.set(r, k, d[i]);
                    sys.set(k, r, d[i]);
                }
                rhs[k] = -(0..n).filter(|j| !free.contains(j)).map(|j| d[j] * alpha[j]).sum::<f64>();
            }
            let Some(sol) = linalg::solve_linear(&sys, &rhs, 1e-12) else {
                continue;
            };
            let mut feasible = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                if v < -feas_tol || v > upper + feas_tol {
                    feasible = false;
                    break;
                }
                alpha[i] = v.clamp(0.0, upper);
            }
            if !feasible {
                continue;
            }
        }
        if let Some(d) = eq {
            if dot(d, &alpha).abs() > feas_tol * n as f64 {
                continue;
            }
        }
        let q = p.objective(&alpha);
        if best.as_ref().is_none_or(|(bq, _)| q > *bq) {
            best = Some((q, alpha));
        }
    }

    let (objective, alpha) = best.ok_or(QpError::NoFeasiblePoint)?;
    Ok(QpSolution {
        kkt_residual: p.kkt_residual(&alpha),
        objective,
        alpha,
        iterations: examined,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_script_mode() {
        let sol = solve(&QpProblem::new(Matrix::identity(2))).unwrap();
        assert_eq!(sol.alpha, vec![1.0, 1.0]);
        assert_eq!(sol.objective, 1.0);
        assert!(sol.converged);
    }

    #[test]
    fn identity_with_box() {
        let sol = solve(&QpProblem::new(Matrix::identity(2)).with_upper(0.5)).unwrap();
        assert_eq!(sol.alpha, vec![0.5, 0.5]);
        assert!((sol.objective - 0.75).abs() < 1e-15);
    }

    #[test]
    fn identity_with_equality() {
        let sol = solve(&QpProblem::new(Matrix::identity(2)).with_equality(vec![1.0, -1.0])).unwrap();
        assert!((sol.alpha[0] - 1.0).abs() < 1e-12);
        assert!((sol.alpha[1] - 1.0).abs() < 1e-12);
        assert!(sol.kkt_residual <= DEFAULT_TOL);
    }

    #[test]
    fn one_sided_labels_force_zero() {
        let sol = solve(&QpProblem::new(Matrix::identity(3)).with_equality(vec![1.0; 3])).unwrap();
        assert_eq!(sol.alpha, vec![0.0; 3]);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn singular_hessian_objective() {
        let p = QpProblem::new(m(&[&[1.0, 1.0], &[1.0, 1.0]]));
        let sol = solve(&p).unwrap();
        assert!((sol.alpha[0] + sol.alpha[1] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 0.5).abs() < 1e-12);
        let oracle = brute_force_oracle(&p).unwrap();
        assert!((oracle.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_identity() {
        let sol = brute_force_oracle(&QpProblem::new(Matrix::identity(2))).unwrap();
        assert_eq!(sol.alpha, vec![1.0, 1.0]);
        let eq = brute_force_oracle(&QpProblem::new(Matrix::identity(2)).with_equality(vec![1.0, -1.0])).unwrap();
        assert!((eq.alpha[0] - 1.0).abs() < 1e-12 && (eq.alpha[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_large_problems() {
        let p = QpProblem::new(Matrix::identity(11));
        assert_eq!(brute_force_oracle(&p), Err(QpError::TooLarge(11)));
    }

    #[test]
    fn rejects_bad_problems() {
        assert_eq!(
            solve(&QpProblem::new(Matrix::identity(2)).with_upper(-1.0)),
            Err(QpError::InfeasibleBox(-1.0))
        );
        let indefinite = m(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert_eq!(solve(&QpProblem::new(indefinite)), Err(QpError::Indefinite));
        let asym = m(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(matches!(solve(&QpProblem::new(asym)), Err(QpError::BadHessian(_))));
        assert_eq!(
            solve(&QpProblem::new(Matrix::identity(2)).with_equality(vec![1.0, 0.0])),
            Err(QpError::BadLabels)
        );
    }

    #[test]
    fn zero_hessian_is_unbounded_without_box() {
        let p = QpProblem::new(Matrix::zeros(2, 2));
        assert_eq!(solve(&p), Err(QpError::Unbounded { index: 0 }));
        let boxed = solve(&p.clone().with_upper(2.0)).unwrap();
        assert_eq!(boxed.alpha, vec![2.0, 2.0]);
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let h = m(&[&[1.0, 0.9], &[0.9, 1.0]]);
        let err = solve(&QpProblem::new(h).with_max_iter(2)).unwrap_err();
        match err {
            QpError::NotConverged(sol) => {
                assert!(!sol.converged);
                assert_eq!(sol.iterations, 2);
                assert!(sol.alpha.iter().all(|&a| a >= 0.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn objective_never_decreases() {
        let h = m(&[&[2.0, 1.5, 0.3], &[1.5, 2.0, -0.4], &[0.3, -0.4, 1.0]]);
        for p in [
            QpProblem::new(h.clone()),
            QpProblem::new(h.clone()).with_equality(vec![1.0, -1.0, 1.0]).with_upper(0.7),
        ] {
            let mut last = 0.0;
            solve_observed(&p, |_, q| {
                assert!(q >= last - 1e-12, "{q} < {last}");
                last = q;
            })
            .unwrap();
        }
    }
}
