//! Small sample statistics used by the experiment layer.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::numerics::NeumaierSum;

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance; 0 for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for MeanAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// (mean, standard error).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let acc: MeanAccumulator = xs.iter().copied().collect();
    (acc.mean(), acc.se())
}

/// Median under the IEEE total order, so `-inf` entries count as smallest.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 || v[m - 1] == v[m] {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares of `y` on `x`. `None` with fewer than two points
/// or no spread in `x`; the slope SE needs at least three points.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(LinearFit {
        slope,
        intercept,
        slope_se,
    })
}

/// Pearson correlation; 0 when either sample has no variance.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().copied().collect::<NeumaierSum>().total() / n as f64;
    let my = y[..n].iter().copied().collect::<NeumaierSum>().total() / n as f64;
    let mut sxy = NeumaierSum::default();
    let mut sxx = NeumaierSum::default();
    let mut syy = NeumaierSum::default();
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        let (da, db) = (a - mx, b - my);
        sxy.add(da * db);
        sxx.add(da * da);
        syy.add(db * db);
    }
    let den = (sxx.total() * syy.total()).sqrt();
    if den == 0.0 || !den.is_finite() {
        0.0
    } else {
        (sxy.total() / den).clamp(-1.0, 1.0)
    }
}

/// Two-sided permutation p-value for the correlation of `x` and `y`,
/// with the observed statistic counted as one permutation.
pub fn permutation_p_value<R: Rng + ?Sized>(x: &[f64], y: &[f64], permutations: usize, rng: &mut R) -> f64 {
    let observed = correlation(x, y).abs();
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(rng);
        if correlation(x, &shuffled).abs() >= observed {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (permutations + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction to the effective size).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_unstable_by(f64::total_cmp);
    y.sort_unstable_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return KsResult {
            statistic: f64::NAN,
            p_value: f64::NAN,
        };
    }
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    }
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn accumulator_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25];
        let acc: MeanAccumulator = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!((acc.mean() - mean).abs() < 1e-14);
        assert!((acc.variance() - var).abs() < 1e-12);
        assert!((acc.se() - (var / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn median_handles_infinities() {
        assert_eq!(median(&[3.0, f64::NEG_INFINITY, 1.0]), 1.0);
        assert_eq!(median(&[2.0, 1.0, 4.0, 3.0]), 2.5);
        assert_eq!(median(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|a| 2.0 - 0.5 * a).collect();
        let fit = ols(&x, &y).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert!(fit.slope_se < 1e-12);
    }

    #[test]
    fn correlation_degenerate_is_zero() {
        assert_eq!(correlation(&[1.0, 1.0, 1.0], &[0.0, 2.0, 5.0]), 0.0);
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ks_same_law_is_not_rejected_and_shift_is() {
        let mut rng = stream_rng(11, Stream::Auxiliary, 0);
        let a: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let shifted: Vec<f64> = b.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        assert!(ks_two_sample(&a, &shifted).p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_tail_reference_value() {
        // Q(1) from the standard Kolmogorov table.
        assert!((kolmogorov_q(1.0) - 0.269_999_671_677_355_6).abs() < 1e-9);
    }
}
