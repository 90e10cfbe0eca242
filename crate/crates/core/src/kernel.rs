use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{dot, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("polynomial degree must be at least 1")]
    ZeroDegree,
    #[error("polynomial offset must be finite, got {0}")]
    BadOffset(f64),
    #[error("rbf gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error("cannot parse kernel spec {0:?} (expected linear, poly:DEGREE:OFFSET or rbf:GAMMA)")]
    Parse(String),
}

/// Kernel applied to the transformed outputs `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    /// `K(y, y') = yᵀy'`
    Linear,
    /// `K(y, y') = (yᵀy' + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `K(y, y') = exp(-gamma ‖y - y'‖²)`
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32, offset: f64) -> Result<Self, KernelError> {
        let spec = Self::Polynomial { degree, offset };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf(gamma: f64) -> Result<Self, KernelError> {
        let spec = Self::Rbf { gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match *self {
            Self::Linear => Ok(()),
            Self::Polynomial { degree, offset } => {
                if degree == 0 {
                    Err(KernelError::ZeroDegree)
                } else if !offset.is_finite() {
                    Err(KernelError::BadOffset(offset))
                } else {
                    Ok(())
                }
            }
            Self::Rbf { gamma } => {
                if gamma.is_finite() && gamma > 0.0 {
                    Ok(())
                } else {
                    Err(KernelError::BadGamma(gamma))
                }
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear)
    }

    /// `K(a, b)`, without the `+1` added by [`kernel_matrix`].
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Self::Linear => dot(a, b),
            Self::Polynomial { degree, offset } => (dot(a, b) + offset).powi(degree as i32),
            Self::Rbf { gamma } => {
                let mut dist2 = 0.0;
                for (x, y) in a.iter().zip(b) {
                    dist2 += (x - y) * (x - y);
                }
                (-gamma * dist2).exp()
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear => write!(f, "linear"),
            Self::Polynomial { degree, offset } => write!(f, "poly:{degree}:{offset:e}"),
            Self::Rbf { gamma } => write!(f, "rbf:{gamma:e}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_err = || KernelError::Parse(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["linear"] => Ok(Self::Linear),
            ["poly", degree, offset] => {
                let degree = degree.parse().map_err(|_| parse_err())?;
                let offset = offset.parse().map_err(|_| parse_err())?;
                Self::polynomial(degree, offset)
            }
            ["rbf", gamma] => Self::rbf(gamma.parse().map_err(|_| parse_err())?),
            _ => Err(parse_err()),
        }
    }
}

/// Kernel trick matrix `K_ij = K(y_i, y_j) + 1` over the columns of `y`.
///
/// Only the upper triangle is evaluated, so the result is exactly symmetric.
pub fn kernel_matrix(y: &Matrix, spec: &KernelSpec) -> Matrix {
    let n = y.cols();
    let columns: Vec<Vec<f64>> = (0..n).map(|j| y.column(j)).collect();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(&columns[i], &columns[j]) + 1.0;
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}
