//! Small summaries used by the experiment reports.

use byzsgd_core::trainer::MetricsRow;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of the finite values; NaN if there are none.
pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Mean of `dist_sq_to_opt` over the last `frac` of the rounds.
pub fn plateau(rows: &[MetricsRow], frac: f64) -> f64 {
    tail_mean(rows, frac, |r| r.dist_sq_to_opt)
}

pub fn tail_mean(rows: &[MetricsRow], frac: f64, f: impl Fn(&MetricsRow) -> f64) -> f64 {
    let start = ((1.0 - frac) * rows.len() as f64).floor() as usize;
    let tail: Vec<f64> = rows[start.min(rows.len().saturating_sub(1))..].iter().map(f).collect();
    mean(&tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_line() {
        let x = [1.0, 2.0, 3.0];
        let (s, c) = linear_fit(&x, &[3.0, 5.0, 7.0]);
        assert!((s - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[f64::NAN]).is_nan());
    }
}
