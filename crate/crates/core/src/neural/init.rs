use rand::Rng;

use super::tensor::Matrix;

/// Glorot-uniform samples in `±sqrt(6 / (fan_in + fan_out))` for a
/// `rows × cols` weight matrix (fan_out = rows, fan_in = cols).
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = glorot_bound(rows, cols);
    if bound == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    if rows + cols == 0 {
        return 0.0;
    }
    (6.0 / (rows + cols) as f64).sqrt()
}

pub fn init_weights<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Matrix {
    glorot_uniform(shape.0, shape.1, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_and_bounded() {
        let a = init_weights((40, 60), &mut ChaCha8Rng::seed_from_u64(5));
        let b = init_weights((40, 60), &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let bound = glorot_bound(40, 60);
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn mean_near_zero() {
        let m = init_weights((100, 100), &mut ChaCha8Rng::seed_from_u64(11));
        let mean = m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
    }
}
