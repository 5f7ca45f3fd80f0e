//! Small numerical and statistical helpers shared by the estimators.

use libm::erfc;

/// Below this many terms plain left-to-right accumulation is used.
const PAIRWISE_BLOCK: usize = 128;

/// Pairwise summation of `f(0) + ... + f(n-1)`.
///
/// Error grows like `O(log n)` ulps instead of `O(n)`, which matters for the
/// trace and norm sums at `n >= 10^4`.
pub fn pairwise_sum<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        let len = hi - lo;
        if len <= PAIRWISE_BLOCK {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + len / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, &f)
}

pub fn sum(xs: &[f64]) -> f64 {
    pairwise_sum(xs.len(), |i| xs[i])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    pairwise_sum(n, |i| (xs[i] - m) * (xs[i] - m)) / (n - 1) as f64
}

/// Standard error of the mean for independent samples.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of the mean of a correlated series by non-overlapping batch
/// means (`floor(sqrt(n))` batches).
pub fn batch_means_std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return std_error(xs);
    }
    let batches = (n as f64).sqrt().floor() as usize;
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    std_error(&means)
}

/// Sample covariance of two equally long series.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let (mx, my) = (mean(xs), mean(ys));
    pairwise_sum(n, |i| (xs[i] - mx) * (ys[i] - my)) / (n - 1) as f64
}

/// Ordinary least-squares fit `y = intercept + slope * x`; returns `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let sxy = pairwise_sum(xs.len(), |i| (xs[i] - mx) * (ys[i] - my));
    let sxx = pairwise_sum(xs.len(), |i| (xs[i] - mx) * (xs[i] - mx));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov statistic of `samples` against a continuous `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value `P(sqrt(n) D_n > t)` of the Kolmogorov distribution,
/// with the small-sample correction `t = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    if t < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-18 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Median (averaging the two central values for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
