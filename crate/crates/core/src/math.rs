//! Small numeric helpers shared by the HMM and scoring code.

/// `log(sum(exp(x)))` over a slice. Returns `-inf` for an empty slice or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Index of the largest element, ties going to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Normalizes a non-negative vector in place. A zero (or non-finite) total becomes uniform.
pub fn normalize_or_uniform(xs: &mut [f64]) {
    let total: f64 = xs.iter().sum();
    if total > 0.0 && total.is_finite() {
        xs.iter_mut().for_each(|x| *x /= total);
    } else {
        let u = 1.0 / xs.len() as f64;
        xs.iter_mut().for_each(|x| *x = u);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [0.1f64.ln(), 0.2f64.ln(), 0.7f64.ln()];
        assert!((log_sum_exp(&xs) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn neg_infinity_is_identity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn zero_row_becomes_uniform() {
        let mut row = [0.0; 4];
        normalize_or_uniform(&mut row);
        assert_eq!(row, [0.25; 4]);
    }
}
