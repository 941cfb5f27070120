//! Small statistics helpers shared by the reward, coordinator and metrics code.

/// Dispersion below this is treated as zero when forming Sharpe ratios.
pub const ZERO_DISPERSION: f64 = 1e-12;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `k - 1`). Zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Population standard deviation (divisor `k`).
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / xs.len() as f64).sqrt()
}

/// Per-period Sharpe ratio `(mean - rf) / sample_std`, with the convention
/// that a zero-dispersion series scores 0. `None` for fewer than two values.
pub fn sharpe(xs: &[f64], risk_free: f64) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let sd = sample_std(xs);
    if sd < ZERO_DISPERSION {
        return Some(0.0);
    }
    Some((mean(xs) - risk_free) / sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_vs_population() {
        let xs = [1.0, 3.0];
        assert_eq!(sample_std(&xs), 2f64.sqrt());
        assert_eq!(population_std(&xs), 1.0);
    }

    #[test]
    fn sharpe_conventions() {
        assert_eq!(sharpe(&[0.01], 0.0), None);
        assert_eq!(sharpe(&[0.01, 0.01, 0.01], 0.0), Some(0.0));
        assert_eq!(sharpe(&[0.01, -0.01], 0.0), Some(0.0));
    }
}
