//! Seeded instance generators shared by the property and acceptance suites.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shm_core::{Matrix, TrainingSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, span: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-span..span)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Inputs with `XXᵀ` comfortably invertible.
pub fn inputs(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    loop {
        let x = uniform_matrix(rng, m, n, 2.0);
        let xxt = x.gram_rows();
        let eig = shm_core::linalg::symmetric_eigenvalues(&xxt).unwrap();
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(0.0, f64::max);
        if lo > 1e-3 * hi {
            return x;
        }
    }
}

fn both_classes(d: &mut [f64]) {
    if d.iter().all(|&v| v == d[0]) {
        d[0] = -d[0];
    }
}

/// `N` examples with `m` inputs and `Z` outputs, arbitrary labels.
pub fn random_set(rng: &mut ChaCha8Rng, n: usize, m: usize, z: usize) -> TrainingSet {
    let x = inputs(rng, m, n);
    let y = uniform_matrix(rng, z, n, 2.0);
    let mut d: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    both_classes(&mut d);
    TrainingSet::new(x, y, d).unwrap()
}

/// Labels drawn from a random bilinear rule `xᵀAy + aᵀx + β`, keeping only
/// points at least a fifth of the largest score away from the boundary.
/// Without `bias`, `β = 0` and the set is separable without a threshold.
pub fn separable_set(rng: &mut ChaCha8Rng, n: usize, m: usize, z: usize, bias: bool) -> TrainingSet {
    loop {
        let a = uniform_matrix(rng, m, z, 1.0);
        let lin: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta = if bias { rng.gen_range(-0.5..0.5) } else { 0.0 };
        let x = inputs(rng, m, n);
        let y = uniform_matrix(rng, z, n, 2.0);
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                let xi = x.column(i);
                let ay = a.mul_vec(&y.column(i)).unwrap();
                shm_core::linalg::dot(&xi, &ay) + shm_core::linalg::dot(&lin, &xi) + beta
            })
            .collect();
        let top = scores.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        if top == 0.0 || scores.iter().any(|s| s.abs() < 0.2 * top) {
            continue;
        }
        let d: Vec<f64> = scores.iter().map(|&s| if s > 0.0 { 1.0 } else { -1.0 }).collect();
        if d.iter().all(|&v| v == d[0]) {
            continue;
        }
        return TrainingSet::new(x, y, d).unwrap();
    }
}

/// `BᵀB + shift·I` with `B` of shape `k × n`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Matrix {
    let k = rng.gen_range(1..=n);
    let b = uniform_matrix(rng, k, n, 1.0);
    b.transpose().matmul(&b).unwrap().shifted_diagonal(shift).unwrap()
}

pub fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut d: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    both_classes(&mut d);
    d
}

pub fn probe_points(rng: &mut ChaCha8Rng, count: usize, m: usize, z: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..count)
        .map(|_| {
            let x = (0..m).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y = (0..z).map(|_| rng.gen_range(-15.0..15.0)).collect();
            (x, y)
        })
        .collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

pub mod instances {
    //! One measurement per seeded instance; the suites decide the verdict.

    use super::*;
    use shm_core::linalg::symmetric_eigenvalues;
    use shm_core::qp::{self, QpProblem};
    use shm_core::train::{hessian, projector};
    use shm_core::{kernel_matrix, train_detailed, KernelSpec, QpMode, TrainConfig};

    pub const N_MAX: usize = 8;
    pub const M_MAX: usize = 3;
    pub const Z_MAX: usize = 3;

    /// Dimensions `(N, m, Z)` derived from the seed.
    pub fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
        let m = rng.gen_range(1..=M_MAX);
        let z = rng.gen_range(1..=Z_MAX);
        let n = rng.gen_range(m.max(2)..=N_MAX);
        (n, m, z)
    }

    pub fn kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
        match rng.gen_range(0..3) {
            0 => KernelSpec::Linear,
            1 => KernelSpec::polynomial(rng.gen_range(1..=3), rng.gen_range(0.0..1.0)).unwrap(),
            _ => KernelSpec::rbf(rng.gen_range(0.1..1.0)).unwrap(),
        }
    }

    /// `(G exactly symmetric, max |GG - G|)`
    pub fn projector_defects(seed: u64) -> (bool, f64) {
        let mut r = rng(seed);
        let (n, m, _) = dims(&mut r);
        let x = inputs(&mut r, m, n);
        let gp = projector(&x, 0.0).unwrap();
        assert_eq!(gp.ridge_used, 0.0);
        let gg = gp.g.matmul(&gp.g).unwrap();
        (gp.g == gp.g.transpose(), max_abs_diff(&gg, &gp.g))
    }

    pub fn hessian_min_eigenvalue(seed: u64) -> f64 {
        let mut r = rng(seed);
        let (n, m, z) = dims(&mut r);
        let ts = random_set(&mut r, n, m, z);
        let spec = kernel(&mut r);
        let gp = projector(ts.x(), 0.0).unwrap();
        let h = hessian(ts.labels(), &kernel_matrix(ts.y(), &spec), &gp.g).unwrap();
        symmetric_eigenvalues(&h).unwrap().into_iter().fold(f64::INFINITY, f64::min)
    }

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum OracleMode {
        Script,
        Kkt,
        Box,
    }

    pub const ORACLE_MODES: [OracleMode; 3] = [OracleMode::Script, OracleMode::Kkt, OracleMode::Box];

    /// Dual problem taken from a random training set when it is strictly
    /// convex (or boxed), otherwise a random positive definite matrix.
    pub fn oracle_problem(seed: u64, mode: OracleMode) -> QpProblem {
        let mut r = rng(seed);
        let (n, m, z) = dims(&mut r);
        let ts = random_set(&mut r, n, m, z);
        let spec = kernel(&mut r);
        let gp = projector(ts.x(), 0.0).unwrap();
        let shm_h = hessian(ts.labels(), &kernel_matrix(ts.y(), &spec), &gp.g).unwrap();
        let eig = symmetric_eigenvalues(&shm_h).unwrap();
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(0.0, f64::max);
        let h = if mode == OracleMode::Box || lo > 1e-3 * hi {
            shm_h
        } else {
            random_pd(&mut r, n, 0.05)
        };
        let mut p = QpProblem::new(h);
        if mode == OracleMode::Kkt {
            p = p.with_equality(ts.labels().to_vec());
        }
        if mode == OracleMode::Box {
            p = p.with_upper(r.gen_range(0.1..10.0)).with_equality(ts.labels().to_vec());
            if r.gen_bool(0.5) {
                p.labels = None;
            }
        }
        p
    }

    /// `|Q(solver) - Q(oracle)|`
    pub fn oracle_gap(seed: u64, mode: OracleMode) -> f64 {
        let p = oracle_problem(seed, mode);
        let solved = qp::solve(&p).unwrap();
        let oracle = qp::brute_force_oracle(&p).unwrap();
        (solved.objective - oracle.objective).abs()
    }

    fn kkt_hard() -> TrainConfig {
        TrainConfig {
            sv_truncation: false,
            sv_tol: 0.0,
            ..TrainConfig::kkt()
        }
    }

    /// Hard-margin kkt fit on a separable set:
    /// `(min dᵢhᵢ, max |αᵢ(dᵢhᵢ - 1)|)`.
    pub fn kkt_fit_conditions(seed: u64) -> (f64, f64) {
        let mut r = rng(seed);
        let (n, m, z) = dims(&mut r);
        let ts = separable_set(&mut r, n, m, z, true);
        let fit = train_detailed(&ts, &KernelSpec::Linear, &kkt_hard()).unwrap();
        let mut min_margin = f64::INFINITY;
        let mut max_slack = 0.0f64;
        for i in 0..ts.len() {
            let (x, y, d) = ts.example(i);
            let dh = d * fit.model.decide(&x, &y).unwrap();
            min_margin = min_margin.min(dh);
            max_slack = max_slack.max((fit.solution.alpha[i] * (dh - 1.0)).abs());
        }
        (min_margin, max_slack)
    }

    /// Largest disagreement between the explicit and expansion forms of a
    /// linear-kernel model over fresh probe points.
    pub fn path_gap(seed: u64) -> f64 {
        let mut r = rng(seed);
        let (n, m, z) = dims(&mut r);
        let ts = random_set(&mut r, n, m, z);
        let cfg = match r.gen_range(0..3) {
            0 => TrainConfig::default(),
            1 => TrainConfig {
                c: r.gen_range(0.5..5.0),
                ..TrainConfig::kkt()
            },
            _ => TrainConfig {
                c: r.gen_range(0.5..5.0),
                ..TrainConfig::default()
            },
        };
        let model = match train_detailed(&ts, &KernelSpec::Linear, &cfg) {
            Ok(fit) => fit.model,
            // Degenerate or unbounded draws have no model to compare.
            Err(_) => return 0.0,
        };
        probe_points(&mut r, 20, m, z)
            .iter()
            .map(|(x, y)| (model.decide_explicit(x, y).unwrap() - model.decide_expansion(x, y).unwrap()).abs())
            .fold(0.0, f64::max)
    }

    /// `|Q(C = 1e9) - Q(hard)|` for the dual of a separable set, with the
    /// equality constraint when `qp_mode` is kkt.
    pub fn soft_hard_gap(seed: u64, qp_mode: QpMode) -> f64 {
        let mut r = rng(seed);
        let (n, m, z) = dims(&mut r);
        let ts = separable_set(&mut r, n, m, z, qp_mode == QpMode::Kkt);
        let gp = projector(ts.x(), 0.0).unwrap();
        let h = hessian(ts.labels(), &kernel_matrix(ts.y(), &KernelSpec::Linear), &gp.g).unwrap();
        let mut hard = QpProblem::new(h);
        if qp_mode == QpMode::Kkt {
            hard = hard.with_equality(ts.labels().to_vec());
        }
        let soft = hard.clone().with_upper(1e9);
        let a = qp::solve(&hard).unwrap();
        let b = qp::solve(&soft).unwrap();
        (a.objective - b.objective).abs()
    }
}
