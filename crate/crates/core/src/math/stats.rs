use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log N(x; mean, I)`.
pub fn unit_gaussian_logpdf(mean: &[f64], x: &[f64]) -> Result<f64> {
    if mean.len() != x.len() {
        return Err(Error::contract(format!("logpdf dimension mismatch: mean {} vs x {}", mean.len(), x.len())));
    }
    Ok(unit_gaussian_logpdf_unchecked(mean, x))
}

#[inline]
pub(crate) fn unit_gaussian_logpdf_unchecked(mean: &[f64], x: &[f64]) -> f64 {
    let sq: f64 = mean.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
    -0.5 * sq - 0.5 * mean.len() as f64 * LN_2PI
}

/// Total-variation distance `0.5 * sum |p_i - q_i|` between two distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract(format!("tv_distance length mismatch: {} vs {}", p.len(), q.len())));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let total: f64 = v.iter().sum();
        if v.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("{name} is not a probability vector (sum {total})")));
        }
    }
    Ok(tv_unchecked(p, q))
}

#[inline]
pub(crate) fn tv_unchecked(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Overflow-safe `log sum exp(v_i)`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("logsumexp of an empty slice"));
    }
    Ok(logsumexp_nonempty(values))
}

pub(crate) fn logsumexp_nonempty(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sample mean and half-width of a normal-approximation 95% confidence interval.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logpdf_closed_forms() {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(unit_gaussian_logpdf(&[0.3], &[0.3]).unwrap(), -half_ln_2pi, epsilon = 1e-15);
        assert_abs_diff_eq!(unit_gaussian_logpdf(&[0.0], &[1.0]).unwrap(), -0.5 - half_ln_2pi, epsilon = 1e-15);
        assert_abs_diff_eq!(-half_ln_2pi, -0.9189385332046727, epsilon = 1e-15);
        assert!(unit_gaussian_logpdf(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn logpdf_translation_invariant() {
        let m = [0.2, -1.0, 3.0];
        let x = [1.0, 0.5, 2.0];
        let c = 17.25;
        let shift = |v: &[f64]| v.iter().map(|a| a + c).collect::<Vec<_>>();
        assert_abs_diff_eq!(
            unit_gaussian_logpdf(&m, &x).unwrap(),
            unit_gaussian_logpdf(&shift(&m), &shift(&x)).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(tv_distance(&[0.5, 0.5], &[0.75, 0.25]).unwrap(), 0.25, epsilon = 1e-15);
        assert!(tv_distance(&[0.5, 0.6], &[1.0, 0.0]).is_err());
        assert!(tv_distance(&[1.5, -0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn logsumexp_examples() {
        assert_eq!(logsumexp(&[0.0]).unwrap(), 0.0);
        let a = -3.5;
        assert_abs_diff_eq!(logsumexp(&[a, a]).unwrap(), a + 2f64.ln(), epsilon = 1e-14);
        let big = logsumexp(&[1000.0, 1000.0]).unwrap();
        assert!(big.is_finite());
        assert_abs_diff_eq!(big, 1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert!(logsumexp(&[]).is_err());
    }
}
