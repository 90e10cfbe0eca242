//! Trained model: decision function, classification, supporting hyperplanes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kernel::KernelSpec;
use crate::linalg::{dot, Matrix};
use crate::train::{QpMode, TrainingSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("input has dimensions (m={m}, Z={z}), model expects (m={model_m}, Z={model_z})")]
    DimensionMismatch {
        m: usize,
        z: usize,
        model_m: usize,
        model_z: usize,
    },
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("operation needs explicit weights, which kernel-expansion models do not have")]
    KernelModeUnsupported,
    #[error("example {index} has a zero-norm [w0ᵀx, xᵀW] vector")]
    ZeroNormVector { index: usize },
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
}

/// Which representation drives [`ShmModel::decide`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelMode {
    /// `h = xᵀŴy + ŵ₀ᵀx + b̂`; only for the linear kernel.
    LinearExplicit,
    /// `h = Σ α̂ᵢdᵢ(K(yᵢ, y) + 1)·xᵢᵀ(XXᵀ)⁻¹x + b̂`
    KernelExpansion,
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LinearExplicit => "linear-explicit",
            Self::KernelExpansion => "kernel-expansion",
        })
    }
}

impl FromStr for ModelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear-explicit" => Ok(Self::LinearExplicit),
            "kernel-expansion" => Ok(Self::KernelExpansion),
            other => Err(format!("unknown model mode {other:?}")),
        }
    }
}

/// `Ŵ` (m×Z) and `ŵ₀` (length m).
#[derive(Clone, Debug, PartialEq)]
pub struct ShmWeights {
    pub w: Matrix,
    pub w0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportVector {
    /// Position in the training set (0-based).
    pub index: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub label: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainMeta {
    pub ridge_used: f64,
    /// Maximized dual objective `Q(α̂)`.
    pub objective: f64,
    pub qp_mode: QpMode,
    /// Box bound; `f64::INFINITY` for hard margin.
    pub c: f64,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
}

/// Coefficients of one supporting hyperplane `normal · y + offset = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperplaneCoeffs {
    /// `xᵢᵀŴ`
    pub normal: Vec<f64>,
    /// `ŵ₀ᵀxᵢ + b̂ - dᵢ`
    pub offset: f64,
    pub support_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShmModel {
    mode: ModelMode,
    kernel: KernelSpec,
    input_dim: usize,
    output_dim: usize,
    weights: Option<ShmWeights>,
    supports: Vec<SupportVector>,
    inv_xxt: Matrix,
    b: f64,
    meta: TrainMeta,
}

impl ShmModel {
    /// Assembles a model and checks its invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: ModelMode,
        kernel: KernelSpec,
        input_dim: usize,
        output_dim: usize,
        weights: Option<ShmWeights>,
        supports: Vec<SupportVector>,
        inv_xxt: Matrix,
        b: f64,
        meta: TrainMeta,
    ) -> Result<Self, ModelError> {
        let bad = |msg: &str| Err(ModelError::Inconsistent(msg.to_string()));
        if kernel.validate().is_err() {
            return bad("invalid kernel parameters");
        }
        match (mode, &weights) {
            (ModelMode::LinearExplicit, None) => return bad("linear-explicit model without weights"),
            (ModelMode::LinearExplicit, Some(_)) if !kernel.is_linear() => {
                return bad("linear-explicit model with a non-linear kernel")
            }
            (ModelMode::KernelExpansion, Some(_)) => return bad("kernel-expansion model with explicit weights"),
            _ => {}
        }
        if let Some(wt) = &weights {
            if wt.w.shape() != (input_dim, output_dim) || wt.w0.len() != input_dim {
                return bad("weight shapes do not match model dimensions");
            }
            if wt.w0.iter().any(|v| !v.is_finite()) {
                return bad("non-finite w0");
            }
        }
        if inv_xxt.shape() != (input_dim, input_dim) {
            return bad("inv_xxt shape does not match input dimension");
        }
        if !b.is_finite() {
            return bad("non-finite threshold");
        }
        for sv in &supports {
            if sv.x.len() != input_dim || sv.y.len() != output_dim {
                return bad("support vector dimensions do not match model");
            }
            if !(sv.alpha > 0.0 && sv.alpha.is_finite()) {
                return bad("support vector with non-positive alpha");
            }
            if sv.label != 1.0 && sv.label != -1.0 {
                return bad("support vector label must be -1 or +1");
            }
            if sv.x.iter().chain(&sv.y).any(|v| !v.is_finite()) {
                return bad("non-finite support vector");
            }
        }
        Ok(Self {
            mode,
            kernel,
            input_dim,
            output_dim,
            weights,
            supports,
            inv_xxt,
            b,
            meta,
        })
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// `m`
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `Z`
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weights(&self) -> Option<&ShmWeights> {
        self.weights.as_ref()
    }

    pub fn supports(&self) -> &[SupportVector] {
        &self.supports
    }

    pub fn inv_xxt(&self) -> &Matrix {
        &self.inv_xxt
    }

    pub fn threshold(&self) -> f64 {
        self.b
    }

    pub fn meta(&self) -> &TrainMeta {
        &self.meta
    }

    pub(crate) fn set_threshold(&mut self, b: f64) {
        self.b = b;
    }

    fn check_input(&self, x: &[f64], y: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim || y.len() != self.output_dim {
            return Err(ModelError::DimensionMismatch {
                m: x.len(),
                z: y.len(),
                model_m: self.input_dim,
                model_z: self.output_dim,
            });
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    /// Recognizing function `h(x, y)`, evaluated through the representation
    /// selected by the model mode.
    pub fn decide(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        match self.mode {
            ModelMode::LinearExplicit => self.decide_explicit(x, y),
            ModelMode::KernelExpansion => self.decide_expansion(x, y),
        }
    }

    /// `xᵀŴy + ŵ₀ᵀx + b̂`.
    pub fn decide_explicit(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        self.check_input(x, y)?;
        let wt = self.weights.as_ref().ok_or(ModelError::KernelModeUnsupported)?;
        Ok(explicit_value(wt, x, y) + self.b)
    }

    /// `Σ α̂ᵢdᵢ(K(yᵢ, y) + 1)·xᵢᵀ(XXᵀ)⁻¹x + b̂` over the stored supports.
    pub fn decide_expansion(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        self.check_input(x, y)?;
        Ok(self.expansion_value(x, y) + self.b)
    }

    pub(crate) fn expansion_value(&self, x: &[f64], y: &[f64]) -> f64 {
        let projected: Vec<f64> = (0..self.input_dim).map(|r| dot(self.inv_xxt.row(r), x)).collect();
        let mut acc = 0.0;
        for sv in &self.supports {
            let k = self.kernel.eval(&sv.y, y) + 1.0;
            acc += sv.alpha * sv.label * k * dot(&sv.x, &projected);
        }
        acc
    }

    /// `sign(h)` with `h = 0` mapped to `+1`.
    pub fn classify(&self, x: &[f64], y: &[f64]) -> Result<i8, ModelError> {
        self.decide(x, y).map(sign_label)
    }

    /// One line per support vector, in training order.
    pub fn supporting_hyperplanes(&self) -> Result<Vec<HyperplaneCoeffs>, ModelError> {
        let wt = self.weights.as_ref().ok_or(ModelError::KernelModeUnsupported)?;
        Ok(self
            .supports
            .iter()
            .map(|sv| HyperplaneCoeffs {
                normal: row_times(&sv.x, &wt.w),
                offset: dot(&wt.w0, &sv.x) + self.b - sv.label,
                support_index: sv.index,
            })
            .collect())
    }

    /// Signed distance `dᵢ / ‖[ŵ₀ᵀxᵢ, xᵢᵀŴ]‖` from each example's supporting
    /// hyperplane to the separating family.
    pub fn margins(&self, ts: &TrainingSet) -> Result<Vec<f64>, ModelError> {
        let wt = self.weights.as_ref().ok_or(ModelError::KernelModeUnsupported)?;
        if ts.input_dim() != self.input_dim || ts.output_dim() != self.output_dim {
            return Err(ModelError::DimensionMismatch {
                m: ts.input_dim(),
                z: ts.output_dim(),
                model_m: self.input_dim,
                model_z: self.output_dim,
            });
        }
        (0..ts.len())
            .map(|i| {
                let x = ts.x().column(i);
                let lead = dot(&wt.w0, &x);
                let norm2 = lead * lead + row_times(&x, &wt.w).iter().map(|v| v * v).sum::<f64>();
                if norm2 == 0.0 {
                    Err(ModelError::ZeroNormVector { index: i })
                } else {
                    Ok(ts.labels()[i] / norm2.sqrt())
                }
            })
            .collect()
    }
}

pub(crate) fn explicit_value(wt: &ShmWeights, x: &[f64], y: &[f64]) -> f64 {
    let wy = wt.w.mul_vec(y).expect("weight shape checked");
    dot(x, &wy) + dot(&wt.w0, x)
}

/// `xᵀ W` as a row vector.
fn row_times(x: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|t| {
            let mut acc = 0.0;
            for (l, xl) in x.iter().enumerate() {
                acc += xl * w.get(l, t);
            }
            acc
        })
        .collect()
}

pub fn sign_label(h: f64) -> i8 {
    if h >= 0.0 {
        1
    } else {
        -1
    }
}
