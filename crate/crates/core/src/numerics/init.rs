use rand::Rng;

use super::Matrix;

/// Glorot/Xavier uniform initialisation: entries drawn i.i.d. from
/// `U[-√(6/(rows+cols)), +√(6/(rows+cols))]`.
pub fn xavier_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = xavier_bound(rows, cols);
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("xavier shape")
}

pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn bound_for_three_by_three() {
        assert_eq!(xavier_bound(3, 3), 1.0);
        let m = xavier_init(3, 3, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(m.max_abs() <= 1.0);
    }

    #[test]
    fn moments_match_uniform() {
        // 25 draws of a 64x64 matrix = 102_400 samples.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let samples: Vec<f64> = (0..25)
            .flat_map(|_| xavier_init(64, 64, &mut rng).into_vec())
            .collect();
        let n = samples.len() as f64;
        let bound = xavier_bound(64, 64);
        let var_expected = bound * bound / 3.0;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (var_expected / n).sqrt(), "mean {mean}");
        assert!((var / var_expected - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn deterministic_under_seed() {
        let a = xavier_init(7, 5, &mut ChaCha8Rng::seed_from_u64(3));
        let b = xavier_init(7, 5, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
