use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Message dropout on an aggregated neighbourhood embedding.
///
/// In training mode entries are zeroed with probability `rate` and the
/// survivors rescaled by `1 / (1 - rate)`. Outside training the input is
/// returned untouched.
pub fn neighborhood_dropout<R: Rng + ?Sized>(
    h: &Matrix,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(h.clone());
    }
    let mask = dropout_mask(h.rows(), h.cols(), rate, rng)?;
    h.hadamard(&mask)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_rate_is_identity() {
        let h = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(neighborhood_dropout(&h, 0.0, &mut rng, true).unwrap(), h);
    }

    #[test]
    fn inference_is_bitwise_identity() {
        let h = Matrix::from_rows(&[vec![0.1, f64::MIN_POSITIVE], vec![-7.25, 1e300]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for rate in [0.0, 0.2, 0.9] {
            let out = neighborhood_dropout(&h, rate, &mut rng, false).unwrap();
            let bits = |m: &Matrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&out), bits(&h));
        }
    }

    #[test]
    fn drop_frequency_and_mean() {
        let n = 1000;
        let h = Matrix::filled(n, n, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let out = neighborhood_dropout(&h, 0.2, &mut rng, true).unwrap();
        let zeros = out.as_slice().iter().filter(|&&x| x == 0.0).count() as f64;
        let frac = zeros / (n * n) as f64;
        assert!((0.195..=0.205).contains(&frac), "zero fraction {frac}");
        let mean = out.sum() / (n * n) as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn rejects_rate_of_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(neighborhood_dropout(&Matrix::zeros(1, 1), 1.0, &mut rng, true).is_err());
    }
}
