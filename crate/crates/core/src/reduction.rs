//! Variable substitution through the condensed SVD of the projector `G`.
//!
//! With `G = U_r S_r V_rᵀ` the dual is rewritten using `cᵢ = dᵢ Σ_q u_iq`,
//! giving `Q(α) = -½ ΣΣ αᵢαⱼcᵢcⱼK_ij + Σ αᵢ`. This equals the full dual only
//! when `Σ_q u_iq · Σ_q u_jq = Σ_q u_iq u_jq`, which holds for rank 1 but
//! drops the cross terms otherwise. The consistency report measures that gap.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{condensed_svd, LinalgError, Matrix};
use crate::train::GramProjector;

pub const REPORT_TOL: f64 = 1e-10;

/// Column sign convention applied to `U` before forming `c`.
pub const SIGN_CONVENTION: &str = "largest-magnitude entry of each U column positive, lowest index on ties";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("projector was built with ridge {0:e}; the reduction needs an exact projector")]
    RidgedProjector(f64),
    #[error("shape mismatch: expected length/order {expected}, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedProblem {
    /// `cᵢ = dᵢ Σ_q u_iq`
    pub c: Vec<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Kernel-plus-one matrix.
    pub k: Matrix,
    pub upper: Option<f64>,
}

pub fn reduce(gp: &GramProjector, d: &[f64], k: &Matrix, rank_tol: f64) -> Result<ReducedProblem, ReductionError> {
    if gp.ridge_used != 0.0 {
        return Err(ReductionError::RidgedProjector(gp.ridge_used));
    }
    let n = gp.g.rows();
    check_len(n, d.len())?;
    check_len(n, k.rows())?;
    check_len(n, k.cols())?;
    let svd = condensed_svd(&gp.g, rank_tol)?;
    let c = (0..n)
        .map(|i| d[i] * (0..svd.rank).map(|q| svd.u.get(i, q)).sum::<f64>())
        .collect();
    Ok(ReducedProblem {
        c,
        rank: svd.rank,
        singular_values: svd.s,
        k: k.clone(),
        upper: None,
    })
}

fn check_len(expected: usize, found: usize) -> Result<(), ReductionError> {
    if expected == found {
        Ok(())
    } else {
        Err(ReductionError::ShapeMismatch { expected, found })
    }
}

/// `-½ ΣΣ αᵢαⱼcᵢcⱼK_ij + Σ αᵢ`
pub fn reduced_objective(rp: &ReducedProblem, alpha: &[f64]) -> Result<f64, ReductionError> {
    let n = rp.c.len();
    check_len(n, alpha.len())?;
    Ok(quadratic_dual(alpha, |i, j| rp.c[i] * rp.c[j] * rp.k.get(i, j)))
}

/// Full dual `-½ ΣΣ αᵢαⱼdᵢdⱼK_ij g_ij + Σ αᵢ`.
pub fn full_objective(g: &Matrix, d: &[f64], k: &Matrix, alpha: &[f64]) -> Result<f64, ReductionError> {
    let n = d.len();
    check_len(n, alpha.len())?;
    check_len(n, g.rows())?;
    check_len(n, k.rows())?;
    Ok(quadratic_dual(alpha, |i, j| d[i] * d[j] * k.get(i, j) * g.get(i, j)))
}

fn quadratic_dual(alpha: &[f64], coef: impl Fn(usize, usize) -> f64) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * coef(i, j);
        }
    }
    -0.5 * quad + alpha.iter().sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub max_gap: f64,
    pub mean_gap: f64,
    pub pass: bool,
    pub sign_convention: &'static str,
}

/// Compares the reduced and full objectives on `samples` random α vectors
/// with entries drawn uniformly from `[0, 1)`. Passes iff the largest gap is
/// at most [`REPORT_TOL`].
pub fn consistency_report(
    rp: &ReducedProblem,
    gp: &GramProjector,
    d: &[f64],
    k: &Matrix,
    samples: usize,
    seed: u64,
) -> Result<ConsistencyReport, ReductionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphas = (0..samples).map(|_| (0..rp.c.len()).map(|_| rng.gen::<f64>()).collect());
    consistency_over(rp, gp, d, k, alphas, seed)
}

/// Same as [`consistency_report`] over caller-supplied α vectors.
pub fn consistency_over(
    rp: &ReducedProblem,
    gp: &GramProjector,
    d: &[f64],
    k: &Matrix,
    alphas: impl IntoIterator<Item = Vec<f64>>,
    seed: u64,
) -> Result<ConsistencyReport, ReductionError> {
    let mut max_gap: f64 = 0.0;
    let mut total = 0.0;
    let mut count = 0;
    for alpha in alphas {
        let gap = (reduced_objective(rp, &alpha)? - full_objective(&gp.g, d, k, &alpha)?).abs();
        max_gap = max_gap.max(gap);
        total += gap;
        count += 1;
    }
    Ok(ConsistencyReport {
        rank: rp.rank,
        singular_values: rp.singular_values.clone(),
        samples: count,
        seed,
        max_gap,
        mean_gap: if count == 0 { 0.0 } else { total / count as f64 },
        pass: max_gap <= REPORT_TOL,
        sign_convention: SIGN_CONVENTION,
    })
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rank: {}", self.rank)?;
        let sv: Vec<String> = self.singular_values.iter().map(|s| format!("{s:.12}")).collect();
        writeln!(f, "singular_values: {}", sv.join(" "))?;
        writeln!(f, "sign_convention: {}", self.sign_convention)?;
        writeln!(f, "samples: {}", self.samples)?;
        writeln!(f, "seed: {}", self.seed)?;
        writeln!(f, "max_gap: {:e}", self.max_gap)?;
        writeln!(f, "mean_gap: {:e}", self.mean_gap)?;
        write!(f, "verdict: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}
