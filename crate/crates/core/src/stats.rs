//! Small order-statistic and moment helpers shared by several modules.

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `max(1, ceil(p / 100 * n))`. Returns `None` for an empty slice.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

pub fn sort_ascending(values: &mut [f64]) {
    values.sort_by(|a, b| a.total_cmp(b));
}

/// Population (1/n) variance. Exactly zero for constant input.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_on_uniform_grid() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        for p in (0..=100).step_by(10) {
            assert_eq!(nearest_rank(&grid, p as f64), Some(p as f64 / 100.0), "p={p}");
        }
    }

    #[test]
    fn nearest_rank_five_values() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let got: Vec<f64> = [10.0, 30.0, 50.0, 70.0, 90.0]
            .iter()
            .map(|&p| nearest_rank(&v, p).unwrap())
            .collect();
        assert_eq!(got, v);
        assert_eq!(nearest_rank(&[], 50.0), None);
    }

    #[test]
    fn variance_of_constant_is_exact_zero() {
        assert_eq!(population_variance(&[0.1, 0.1, 0.1]), 0.0);
        assert_eq!(population_variance(&[]), 0.0);
        assert_eq!(population_variance(&[1.0, 1.0, 2.0, 3.0]), 0.6875);
    }
}
