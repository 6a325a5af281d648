//! Concentration radius `σ₀²` assumed by the filter.

use alloc::format;

use crate::error::{Error, Result};

/// `82 √(5/3)`: the constant in the filter's error guarantee `C σ₀ √ε̃`.
pub const UPSILON_CONST: f64 = 105.861_544_796_336_06;

fn check_fractions(eps: f64, eps_prime: f64) -> Result<f64> {
    if !(eps_prime > 0.0) {
        return Err(Error::InvalidParameter(format!("eps_prime must be positive, got {eps_prime}")));
    }
    if !(eps >= 0.0) || !(eps + eps_prime < 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 <= eps and eps + eps_prime < 1, got {eps} + {eps_prime}")));
    }
    Ok(1.0 - eps - eps_prime)
}

fn check_counts(b: usize, d: usize, workers: usize) -> Result<()> {
    if b == 0 || d == 0 || workers == 0 {
        return Err(Error::InvalidParameter(format!("b, d and R must be positive (b={b}, d={d}, R={workers})")));
    }
    Ok(())
}

/// `24σ²/(bε′) · (1 + d/((1−ε−ε′)R)) + 16κ²`.
pub fn default_sigma0_sq(
    sigma: f64,
    b: usize,
    kappa: f64,
    eps: f64,
    eps_prime: f64,
    d: usize,
    workers: usize,
) -> Result<f64> {
    let honest = check_fractions(eps, eps_prime)?;
    check_counts(b, d, workers)?;
    let spread = 24.0 * sigma * sigma / (b as f64 * eps_prime);
    Ok(spread * (1.0 + d as f64 / (honest * workers as f64)) + 16.0 * kappa * kappa)
}

/// `24 d G²/(k b ε′) · (1 + k/((1−ε−ε′)R)) + 16κ²` for rand-k compressed gradients.
#[allow(clippy::too_many_arguments)]
pub fn default_sigma0_sq_compressed(
    g2: f64,
    b: usize,
    kappa: f64,
    eps: f64,
    eps_prime: f64,
    d: usize,
    k: usize,
    workers: usize,
) -> Result<f64> {
    let honest = check_fractions(eps, eps_prime)?;
    check_counts(b, d, workers)?;
    if k == 0 || k > d {
        return Err(Error::CoordinateCount { k, dim: d });
    }
    let spread = 24.0 * d as f64 * g2 / (k as f64 * b as f64 * eps_prime);
    Ok(spread * (1.0 + k as f64 / (honest * workers as f64)) + 16.0 * kappa * kappa)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_value() {
        assert!((UPSILON_CONST - 82.0 * libm::sqrt(5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn examples() {
        assert_eq!(default_sigma0_sq(0.0, 4, 0.0, 0.1, 0.1, 5, 10).unwrap(), 0.0);
        assert!((default_sigma0_sq(1.0, 1, 0.0, 0.2, 0.05, 10, 100).unwrap() - 544.0).abs() < 1e-9);
        assert!((default_sigma0_sq(0.0, 1, 1.0, 0.2, 0.05, 10, 100).unwrap() - 16.0).abs() < 1e-12);
        assert!((default_sigma0_sq_compressed(1.0, 1, 0.0, 0.2, 0.05, 100, 50, 100).unwrap() - 1600.0).abs() < 1e-9);
        assert_eq!(default_sigma0_sq_compressed(0.0, 1, 0.0, 0.2, 0.05, 100, 50, 100).unwrap(), 0.0);
    }

    #[test]
    fn full_k_matches_uncompressed() {
        let a = default_sigma0_sq_compressed(2.5, 3, 0.7, 0.1, 0.1, 8, 8, 20).unwrap();
        let b = default_sigma0_sq(2.5f64.sqrt(), 3, 0.7, 0.1, 0.1, 8, 20).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn errors() {
        assert!(default_sigma0_sq(1.0, 1, 0.0, 0.2, 0.0, 10, 100).is_err());
        assert!(default_sigma0_sq(1.0, 1, 0.0, 0.6, 0.4, 10, 100).is_err());
        assert!(default_sigma0_sq_compressed(1.0, 1, 0.0, 0.2, 0.1, 10, 11, 100).is_err());
        assert!(default_sigma0_sq_compressed(1.0, 1, 0.0, 0.2, 0.1, 10, 0, 100).is_err());
    }
}
