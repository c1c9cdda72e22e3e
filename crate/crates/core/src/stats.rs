//! Small statistics helpers shared by the estimators and the test suites.

/// P(X <= k) for X ~ Poisson(mean), by direct summation of the mass function.
pub fn poisson_cdf(mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return 1.0;
    }
    let mut term = (-mean).exp();
    let mut sum = term;
    for i in 1..=k {
        term *= mean / i as f64;
        sum += term;
    }
    sum.min(1.0)
}

/// P(X > k) for X ~ Poisson(mean).
///
/// Sums the upper tail directly rather than forming `1 - cdf`, so tiny tails
/// keep their relative precision.
pub fn poisson_sf(mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    // Mass at k + 1, built in log space to survive large k.
    let first = k + 1;
    let ln_term = first as f64 * mean.ln() - mean - ln_factorial(first);
    let mut term = ln_term.exp();
    let mut sum = 0.0;
    let mut i = first;
    loop {
        sum += term;
        i += 1;
        term *= mean / i as f64;
        // Past the mode the terms shrink geometrically.
        if (i as f64) > mean && term < sum * 1e-17 {
            break;
        }
        if term == 0.0 && (i as f64) > mean {
            break;
        }
    }
    sum.min(1.0)
}

pub fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

/// Standard error of a binomial proportion.
pub fn binomial_se(successes: u64, trials: u64) -> f64 {
    if trials == 0 {
        return f64::INFINITY;
    }
    let p = successes as f64 / trials as f64;
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Least-squares slope of `y = a·x` (no intercept).
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    sxy / sxx
}

/// Two-sample Kolmogorov–Smirnov test. Returns `(D, p_value)`.
///
/// The p-value uses the asymptotic Kolmogorov distribution with the
/// Stephens small-sample correction. With tied (discrete) data the test is
/// conservative.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs non-empty samples");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
