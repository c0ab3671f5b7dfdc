/// Exact two-sided binomial test against p = 0.5: the summed probability of
/// every outcome no more likely than `k` successes in `n`, capped at 1.
pub fn binomial_two_sided(k: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, i| {
            *acc += (i as f64).ln();
            Some(*acc)
        }))
        .collect();
    let ln_half_n = n as f64 * 0.5f64.ln();
    let ln_pmf = |i: usize| ln_fact[n] - ln_fact[i] - ln_fact[n - i] + ln_half_n;
    let observed = ln_pmf(k.min(n));
    // Relative slack so outcomes tied with the observed one are counted.
    let limit = observed + 1e-7;
    let p: f64 = (0..=n).map(ln_pmf).filter(|&l| l <= limit).map(f64::exp).sum();
    p.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_capped() {
        assert_eq!(binomial_two_sided(3, 6), 1.0);
        assert!((binomial_two_sided(0, 6) - binomial_two_sided(6, 6)).abs() < 1e-15);
        assert_eq!(binomial_two_sided(0, 0), 1.0);
    }
}
