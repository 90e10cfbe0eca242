//! Synthetic workloads shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shm_core::{Matrix, TrainingSet};

/// `n` examples with `m` inputs and `z` outputs; labels follow the sign of
/// a fixed bilinear form so the set is separable.
pub fn synthetic(n: usize, m: usize, z: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..m * z).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x = vec![0.0; m * n];
    let mut y = vec![0.0; z * n];
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let xi: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let yi: Vec<f64> = (0..z).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut h = 0.0;
        for l in 0..m {
            for t in 0..z {
                h += xi[l] * w[l * z + t] * yi[t];
            }
        }
        for l in 0..m {
            x[l * n + i] = xi[l];
        }
        for t in 0..z {
            y[t * n + i] = yi[t];
        }
        d.push(if h >= 0.0 { 1.0 } else { -1.0 });
    }
    // both classes must be present
    d[0] = 1.0;
    d[1] = -1.0;
    TrainingSet::new(Matrix::new(m, n, x).unwrap(), Matrix::new(z, n, y).unwrap(), d).unwrap()
}
