//! Training data model and the SHM training pipeline.
//!
//! The pipeline: covariance `XXᵀ` and its (regularized) inverse, projector
//! `G = Xᵀ(XXᵀ)⁻¹X`, kernel matrix `K`, Hessian `H = d dᵀ ∘ K ∘ G`, the dual
//! QP, then weights and threshold.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kernel::{kernel_matrix, KernelError, KernelSpec};
use crate::linalg::{self, dot, LinalgError, Matrix};
use crate::model::{ModelError, ModelMode, ShmModel, ShmWeights, SupportVector, TrainMeta};
use crate::qp::{self, QpError, QpProblem, QpSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("XXᵀ is singular even after regularization (last ridge tried {last_ridge:e})")]
    SingularCovariance { last_ridge: f64 },
    #[error("dual QP failed: {0}")]
    Qp(#[from] QpError),
    #[error("multipliers must be finite and nonnegative, with one per example")]
    InvalidAlpha,
    #[error("no support vector with label +1 to anchor the threshold")]
    NoPositiveSupportVector,
    #[error("all multipliers vanished; the model has no support vectors")]
    DegenerateModel,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Paired training data: `x` is m×N, `y` is Z×N, one ±1 label per column.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    x: Matrix,
    y: Matrix,
    d: Vec<f64>,
}

impl TrainingSet {
    pub fn new(x: Matrix, y: Matrix, d: Vec<f64>) -> Result<Self, TrainError> {
        let n = d.len();
        if x.cols() != n || y.cols() != n {
            return Err(TrainError::InvalidTrainingSet(format!(
                "x has {} columns, y has {}, but there are {n} labels",
                x.cols(),
                y.cols()
            )));
        }
        if n < 2 {
            return Err(TrainError::InvalidTrainingSet(format!("need at least 2 examples, got {n}")));
        }
        if x.rows() == 0 {
            return Err(TrainError::InvalidTrainingSet("x must have at least one row".into()));
        }
        if let Some(i) = d.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(TrainError::InvalidTrainingSet(format!(
                "label {} of example {i} is not -1 or +1",
                d[i]
            )));
        }
        Ok(Self { x, y, d })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn labels(&self) -> &[f64] {
        &self.d
    }

    /// N
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// m
    pub fn input_dim(&self) -> usize {
        self.x.rows()
    }

    /// Z
    pub fn output_dim(&self) -> usize {
        self.y.rows()
    }

    pub fn example(&self, i: usize) -> (Vec<f64>, Vec<f64>, f64) {
        (self.x.column(i), self.y.column(i), self.d[i])
    }
}

/// `G = Xᵀ(XXᵀ)⁻X` together with the inverse that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GramProjector {
    pub inv_xxt: Matrix,
    pub g: Matrix,
    pub ridge_used: f64,
}

/// Builds the orthogonal projector onto the row space of `x`.
///
/// `ridge > 0` is applied as given; `ridge == 0` lets the inverse escalate a
/// ridge only when `XXᵀ` is ill-conditioned.
pub fn projector(x: &Matrix, ridge: f64) -> Result<GramProjector, TrainError> {
    let (m, n) = x.shape();
    if m > n {
        log::warn!("input dimension m={m} exceeds example count N={n}; XXᵀ is rank deficient");
    }
    let xxt = x.gram_rows();
    let inv = linalg::regularized_inverse(&xxt, ridge, linalg::DEFAULT_COND_LIMIT).map_err(|e| match e {
        LinalgError::SingularAfterRegularization { last_ridge } => TrainError::SingularCovariance { last_ridge },
        other => TrainError::Linalg(other),
    })?;
    // columns of (XXᵀ)⁻X
    let projected = inv.inverse.matmul(x)?;
    let cols: Vec<Vec<f64>> = (0..n).map(|j| x.column(j)).collect();
    let proj_cols: Vec<Vec<f64>> = (0..n).map(|j| projected.column(j)).collect();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(&cols[i], &proj_cols[j]);
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    Ok(GramProjector {
        inv_xxt: inv.inverse,
        g,
        ridge_used: inv.ridge_used,
    })
}

/// `H_ij = d_i d_j K_ij G_ij`.
pub fn hessian(d: &[f64], k: &Matrix, g: &Matrix) -> Result<Matrix, TrainError> {
    let n = d.len();
    if k.shape() != (n, n) || g.shape() != (n, n) {
        return Err(LinalgError::ShapeMismatch {
            left: k.shape(),
            right: g.shape(),
        }
        .into());
    }
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h.set(i, j, d[i] * d[j] * k.get(i, j) * g.get(i, j));
        }
    }
    Ok(h)
}

fn check_alpha(alpha: &[f64], n: usize) -> Result<(), TrainError> {
    if alpha.len() != n || alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(TrainError::InvalidAlpha);
    }
    Ok(())
}

/// `Ŵ = (XXᵀ)⁻ Σ αᵢdᵢ xᵢyᵢᵀ` and `ŵ₀ = (XXᵀ)⁻ Σ αᵢdᵢ xᵢ`.
pub fn recover_weights(ts: &TrainingSet, gp: &GramProjector, alpha: &[f64]) -> Result<ShmWeights, TrainError> {
    check_alpha(alpha, ts.len())?;
    let (m, z) = (ts.input_dim(), ts.output_dim());
    if gp.inv_xxt.shape() != (m, m) {
        return Err(LinalgError::ShapeMismatch {
            left: gp.inv_xxt.shape(),
            right: (m, m),
        }
        .into());
    }
    let mut outer = Matrix::zeros(m, z);
    let mut lin = vec![0.0; m];
    for i in 0..ts.len() {
        if alpha[i] == 0.0 {
            continue;
        }
        let (x, y, d) = ts.example(i);
        let coef = alpha[i] * d;
        for p in 0..m {
            for t in 0..z {
                outer.set(p, t, outer.get(p, t) + coef * x[p] * y[t]);
            }
            lin[p] += coef * x[p];
        }
    }
    Ok(ShmWeights {
        w: gp.inv_xxt.matmul(&outer)?,
        w0: gp.inv_xxt.mul_vec(&lin)?,
    })
}

/// Decides which multipliers count as support vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupportRule {
    /// `floor(α·10⁴)/10⁴ > 0`, i.e. α ≥ 1e-4.
    Truncate4,
    /// `α > tol`
    Threshold(f64),
}

impl SupportRule {
    pub fn keeps(&self, alpha: f64) -> bool {
        match *self {
            Self::Truncate4 => (alpha * 10_000.0).trunc() / 10_000.0 > 0.0,
            Self::Threshold(tol) => alpha > tol,
        }
    }
}

/// Index used to anchor the threshold: the first positive-label support
/// vector in training order. With a finite box bound `upper`, supports
/// strictly below the bound are preferred since only they lie on their
/// supporting hyperplane.
pub fn threshold_anchor(d: &[f64], alpha: &[f64], rule: SupportRule, upper: Option<f64>) -> Option<usize> {
    let positive = |i: &usize| d[*i] > 0.0 && rule.keeps(alpha[*i]);
    if let Some(c) = upper.filter(|c| c.is_finite()) {
        let free = (0..d.len()).filter(positive).find(|&i| alpha[i] < c * (1.0 - 1e-9));
        if free.is_some() {
            return free;
        }
    }
    (0..d.len()).find(positive)
}

/// `b̂ = 1 - xᵢᵀŴyᵢ - ŵ₀ᵀxᵢ` at the anchor chosen by [`threshold_anchor`].
pub fn recover_threshold(
    ts: &TrainingSet,
    weights: &ShmWeights,
    alpha: &[f64],
    rule: SupportRule,
    upper: Option<f64>,
) -> Result<f64, TrainError> {
    check_alpha(alpha, ts.len())?;
    let i = threshold_anchor(ts.labels(), alpha, rule, upper).ok_or(TrainError::NoPositiveSupportVector)?;
    let (x, y, _) = ts.example(i);
    let wy = weights.w.mul_vec(&y)?;
    Ok(-dot(&x, &wy) - dot(&weights.w0, &x) + 1.0)
}

/// Constraint set of the dual QP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpMode {
    /// `α ≥ 0` (and `α ≤ C` when soft) only.
    Script,
    /// Adds `Σ αᵢdᵢ = 0`.
    Kkt,
}

impl fmt::Display for QpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Script => "script",
            Self::Kkt => "kkt",
        })
    }
}

impl FromStr for QpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "script" => Ok(Self::Script),
            "kkt" => Ok(Self::Kkt),
            other => Err(format!("unknown QP mode {other:?} (expected script or kkt)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Fixed ridge for `XXᵀ`; 0 means escalate only if ill-conditioned.
    pub ridge: f64,
    /// Box bound; `f64::INFINITY` is the hard margin.
    pub c: f64,
    pub qp_mode: QpMode,
    /// Use the `floor(α·10⁴)/10⁴` support rule instead of `α > sv_tol`.
    pub sv_truncation: bool,
    pub sv_tol: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            c: f64::INFINITY,
            qp_mode: QpMode::Script,
            sv_truncation: true,
            sv_tol: 1e-8,
            qp_tol: qp::DEFAULT_TOL,
            qp_max_iter: qp::DEFAULT_MAX_ITER,
        }
    }
}

impl TrainConfig {
    pub fn kkt() -> Self {
        Self {
            qp_mode: QpMode::Kkt,
            ..Self::default()
        }
    }

    pub fn support_rule(&self) -> SupportRule {
        if self.sv_truncation {
            SupportRule::Truncate4
        } else {
            SupportRule::Threshold(self.sv_tol)
        }
    }

    fn upper(&self) -> Option<f64> {
        self.c.is_finite().then_some(self.c)
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.c > 0.0) {
            return Err(TrainError::InvalidConfig(format!("c must be positive or infinite, got {}", self.c)));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(TrainError::InvalidConfig(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.sv_tol.is_finite() && self.sv_tol >= 0.0) {
            return Err(TrainError::InvalidConfig("sv_tol must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Everything computed along the way, for inspection and verification.
#[derive(Clone, Debug)]
pub struct Training {
    pub model: ShmModel,
    pub projector: GramProjector,
    pub kernel_matrix: Matrix,
    pub hessian: Matrix,
    pub solution: QpSolution,
}

pub fn train(ts: &TrainingSet, spec: &KernelSpec, cfg: &TrainConfig) -> Result<ShmModel, TrainError> {
    Ok(train_detailed(ts, spec, cfg)?.model)
}

pub fn train_detailed(ts: &TrainingSet, spec: &KernelSpec, cfg: &TrainConfig) -> Result<Training, TrainError> {
    cfg.validate()?;
    spec.validate()?;

    let gp = projector(ts.x(), cfg.ridge)?;
    let k = kernel_matrix(ts.y(), spec);
    let h = hessian(ts.labels(), &k, &gp.g)?;

    let mut problem = QpProblem::new(h.clone())
        .with_tolerance(cfg.qp_tol)
        .with_max_iter(cfg.qp_max_iter);
    if cfg.qp_mode == QpMode::Kkt {
        problem = problem.with_equality(ts.labels().to_vec());
    }
    if let Some(c) = cfg.upper() {
        problem = problem.with_upper(c);
    }
    let solution = qp::solve(&problem)?;
    log::debug!(
        "dual QP finished after {} iterations, Q = {}, residual {:e}",
        solution.iterations,
        solution.objective,
        solution.kkt_residual
    );

    let rule = cfg.support_rule();
    let pruned: Vec<f64> = solution
        .alpha
        .iter()
        .map(|&a| if rule.keeps(a) { a } else { 0.0 })
        .collect();
    if pruned.iter().all(|&a| a == 0.0) {
        return Err(TrainError::DegenerateModel);
    }
    let supports: Vec<SupportVector> = (0..ts.len())
        .filter(|&i| pruned[i] > 0.0)
        .map(|i| {
            let (x, y, label) = ts.example(i);
            SupportVector {
                index: i,
                x,
                y,
                label,
                alpha: pruned[i],
            }
        })
        .collect();

    let meta = TrainMeta {
        ridge_used: gp.ridge_used,
        objective: solution.objective,
        qp_mode: cfg.qp_mode,
        c: cfg.c,
        qp_iterations: solution.iterations,
        kkt_residual: solution.kkt_residual,
    };
    let (mode, weights) = if spec.is_linear() {
        (ModelMode::LinearExplicit, Some(recover_weights(ts, &gp, &pruned)?))
    } else {
        (ModelMode::KernelExpansion, None)
    };

    let anchor = threshold_anchor(ts.labels(), &pruned, rule, cfg.upper()).ok_or(TrainError::NoPositiveSupportVector)?;
    let (xa, ya, _) = ts.example(anchor);

    let mut model = ShmModel::new(
        mode,
        *spec,
        ts.input_dim(),
        ts.output_dim(),
        weights,
        supports,
        gp.inv_xxt.clone(),
        0.0,
        meta,
    )?;
    let b = match model.weights() {
        Some(wt) => recover_threshold(ts, wt, &pruned, rule, cfg.upper())?,
        None => 1.0 - model.expansion_value(&xa, &ya),
    };
    model.set_threshold(b);

    Ok(Training {
        model,
        projector: gp,
        kernel_matrix: k,
        hessian: h,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn training_set_validation() {
        let x = Matrix::identity(2);
        assert!(TrainingSet::new(x.clone(), x.clone(), vec![1.0, -1.0]).is_ok());
        assert!(TrainingSet::new(x.clone(), x.clone(), vec![1.0, 0.0]).is_err());
        assert!(TrainingSet::new(x.clone(), x.clone(), vec![1.0]).is_err());
        let one = m(&[&[1.0]]);
        assert!(TrainingSet::new(one.clone(), one, vec![1.0]).is_err());
    }

    #[test]
    fn square_invertible_x_gives_identity_projector() {
        let gp = projector(&Matrix::identity(2).scale(2.0), 0.0).unwrap();
        assert_eq!(gp.ridge_used, 0.0);
        assert!(gp.g.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn single_row_projector() {
        // XXᵀ = 2, so G = xᵀx / 2
        let gp = projector(&m(&[&[1.0, 1.0]]), 0.0).unwrap();
        assert_eq!(gp.g, Matrix::filled(2, 2, 0.5));
        assert_eq!(gp.inv_xxt, m(&[&[0.5]]));
    }

    #[test]
    fn rank_deficient_x_escalates_ridge() {
        // Two identical rows: XXᵀ is singular.
        let x = m(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        let gp = projector(&x, 0.0).unwrap();
        assert!(gp.ridge_used > 0.0);
        assert!(matches!(projector(&Matrix::zeros(2, 3), 0.0), Err(TrainError::SingularCovariance { .. })));
    }

    #[test]
    fn hessian_cases() {
        let k = m(&[&[2.0, 3.0], &[3.0, 5.0]]);
        let g = m(&[&[0.5, 0.25], &[0.25, 0.75]]);
        assert_eq!(hessian(&[1.0, 1.0], &k, &g).unwrap(), k.hadamard(&g).unwrap());
        let ones = Matrix::filled(2, 2, 1.0);
        assert_eq!(
            hessian(&[1.0, -1.0], &ones, &ones).unwrap(),
            m(&[&[1.0, -1.0], &[-1.0, 1.0]])
        );
        assert!(hessian(&[1.0], &ones, &ones).is_err());
    }

    #[test]
    fn weights_from_single_support() {
        let x = Matrix::from_columns(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let y = Matrix::from_columns(&[[2.0, 3.0], [0.0, 0.0]]).unwrap();
        let ts = TrainingSet::new(x.clone(), y, vec![1.0, -1.0]).unwrap();
        let gp = projector(&x, 0.0).unwrap();
        let wt = recover_weights(&ts, &gp, &[1.0, 0.0]).unwrap();
        assert_eq!(wt.w, m(&[&[2.0, 3.0], &[0.0, 0.0]]));
        assert_eq!(wt.w0, vec![1.0, 0.0]);

        let zero = recover_weights(&ts, &gp, &[0.0, 0.0]).unwrap();
        assert_eq!(zero.w, Matrix::zeros(2, 2));
        assert_eq!(zero.w0, vec![0.0, 0.0]);
        assert_eq!(recover_weights(&ts, &gp, &[-1.0, 0.0]), Err(TrainError::InvalidAlpha));
    }

    #[test]
    fn threshold_cases() {
        let x = Matrix::from_columns(&[[1.0], [1.0]]).unwrap();
        let y = Matrix::from_columns(&[[1.0], [-1.0]]).unwrap();
        let ts = TrainingSet::new(x, y, vec![1.0, -1.0]).unwrap();
        // xᵀWy + w0ᵀx = 1 at example 0 -> b = 0
        let wt = ShmWeights {
            w: m(&[&[0.5]]),
            w0: vec![0.5],
        };
        assert_eq!(recover_threshold(&ts, &wt, &[1.0, 0.0], SupportRule::Truncate4, None).unwrap(), 0.0);
        // xᵀWy + w0ᵀx = -2 -> b = 3
        let wt = ShmWeights {
            w: m(&[&[-1.0]]),
            w0: vec![-1.0],
        };
        assert_eq!(recover_threshold(&ts, &wt, &[1.0, 0.0], SupportRule::Truncate4, None).unwrap(), 3.0);
        // only the negative example is a support
        assert_eq!(
            recover_threshold(&ts, &wt, &[0.0, 1.0], SupportRule::Truncate4, None),
            Err(TrainError::NoPositiveSupportVector)
        );
        // below the truncation step
        assert_eq!(
            recover_threshold(&ts, &wt, &[0.9e-4, 1.0], SupportRule::Truncate4, None),
            Err(TrainError::NoPositiveSupportVector)
        );
    }

    #[test]
    fn support_rule_truncation() {
        assert!(!SupportRule::Truncate4.keeps(0.99e-4));
        assert!(SupportRule::Truncate4.keeps(1.0e-4));
        assert!(SupportRule::Truncate4.keeps(2.2771));
        assert!(!SupportRule::Truncate4.keeps(0.0));
        assert!(SupportRule::Threshold(1e-8).keeps(1e-7));
    }

    #[test]
    fn two_point_kkt_fit_separates() {
        let x = m(&[&[1.0, -1.0]]);
        let y = m(&[&[1.0, -1.0]]);
        let ts = TrainingSet::new(x, y, vec![1.0, -1.0]).unwrap();
        let model = train(&ts, &KernelSpec::Linear, &TrainConfig::kkt()).unwrap();
        for i in 0..2 {
            let (x, y, d) = ts.example(i);
            let h = model.decide(&x, &y).unwrap();
            assert!(d * h >= 1.0 - 1e-6, "example {i}: h = {h}");
        }
    }

    #[test]
    fn one_class_kkt_is_degenerate() {
        let x = m(&[&[1.0, 2.0, 3.0]]);
        let y = m(&[&[1.0, 0.5, -1.0]]);
        let ts = TrainingSet::new(x, y, vec![1.0; 3]).unwrap();
        assert_eq!(
            train(&ts, &KernelSpec::Linear, &TrainConfig::kkt()).unwrap_err(),
            TrainError::DegenerateModel
        );
    }

    #[test]
    fn config_validation() {
        let ts = TrainingSet::new(Matrix::identity(2), Matrix::identity(2), vec![1.0, -1.0]).unwrap();
        let cfg = TrainConfig {
            c: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ts, &KernelSpec::Linear, &cfg), Err(TrainError::InvalidConfig(_))));
        let bad_kernel = KernelSpec::Rbf { gamma: -1.0 };
        assert!(matches!(
            train(&ts, &bad_kernel, &TrainConfig::default()),
            Err(TrainError::Kernel(_))
        ));
    }

    #[test]
    fn qp_mode_round_trip() {
        for mode in [QpMode::Script, QpMode::Kkt] {
            assert_eq!(mode.to_string().parse::<QpMode>(), Ok(mode));
        }
        assert!("smo".parse::<QpMode>().is_err());
    }
}
