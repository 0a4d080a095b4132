//! Exact and sampled Poisson machinery.
//!
//! Expectations are evaluated as truncated series with a certified
//! truncation error: the caller supplies a quadratic growth bound on the
//! summand, and the tails are bounded by geometric majorants of the pmf.

use rand::Rng;

use crate::error::{Error, Result};

/// Below this mean the sampler uses sequential-search inversion.
const INVERSION_LIMIT: f64 = 10.0;

/// Poisson law with mean `mu`. `mu = 0` is the point mass at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonDist {
    mu: f64,
}

impl PoissonDist {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Poisson mean must be finite and >= 0, got {mu}"
            )));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `e^{-mu} mu^k / k!` in Loader's saddle-point form
    /// `exp(-stirlerr(k) - bd0(k, mu)) / sqrt(2 pi k)`, which keeps full
    /// relative accuracy for large `k` and `mu`.
    pub fn pmf(&self, k: u64) -> f64 {
        let mu = self.mu;
        if mu == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        if k == 0 {
            return (-mu).exp();
        }
        let kf = k as f64;
        (-stirling_error(k) - deviance_term(kf, mu)).exp() / (std::f64::consts::TAU * kf).sqrt()
    }

    /// Draws one variate. Sequential-search inversion for `mu <= 10`,
    /// Hörmann's PTRS transformed rejection above.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.mu == 0.0 {
            0
        } else if self.mu <= INVERSION_LIMIT {
            sample_inversion(self.mu, rng)
        } else {
            sample_ptrs(self.mu, rng)
        }
    }

    /// Series expectation `E f(y)` accurate to `tol.tail_bound`.
    ///
    /// `bound` certifies `|f(k)| <= C (1 + k^2)` for every `k`; it is what
    /// turns the pmf tail estimates into a bound on the neglected mass.
    pub fn expect<F>(&self, f: F, bound: GrowthBound, tol: SeriesTolerance) -> Result<f64>
    where
        F: Fn(u64) -> f64,
    {
        let mu = self.mu;
        if mu == 0.0 {
            return Ok(f(0));
        }
        let c = bound.constant;
        let half_budget = 0.5 * tol.tail_bound;
        let failure = || Error::TruncationFailure {
            mu,
            tail_bound: tol.tail_bound,
            max_terms: tol.max_terms,
        };

        // Lower end of the summation window.
        let mut lo: u64 = 0;
        if mu > 30.0 {
            let step = mu.sqrt().ceil().max(1.0) as u64;
            lo = (mu - 12.0 * mu.sqrt()).floor().max(0.0) as u64;
            while lo > 0 && c * self.lower_tail_bound(lo) >= half_budget {
                lo = lo.saturating_sub(step);
            }
        }

        let mut sum = 0.0;
        let mut comp = 0.0;
        let mut k = lo;
        let mut terms = 0usize;
        loop {
            let p = self.pmf(k);
            if p > 0.0 {
                // Kahan-compensated accumulation.
                let term = f(k) * p - comp;
                let next = sum + term;
                comp = (next - sum) - term;
                sum = next;
            }
            terms += 1;
            if (k as f64) + 2.0 > mu && c * self.upper_tail_bound(k) < half_budget {
                break;
            }
            if terms >= tol.max_terms {
                return Err(failure());
            }
            k += 1;
        }
        Ok(sum)
    }

    /// Bound on `sum_{k < lo} (1 + k^2) p_k`, valid for `1 <= lo <= mu + 1`.
    fn lower_tail_bound(&self, lo: u64) -> f64 {
        let top = lo - 1;
        let r = top as f64 / self.mu;
        if r >= 1.0 {
            return f64::INFINITY;
        }
        let t = top as f64;
        (1.0 + t * t) * self.pmf(top) / (1.0 - r)
    }

    /// Bound on `sum_{k > last} (1 + k^2) p_k`, valid when `last + 2 > mu`.
    fn upper_tail_bound(&self, last: u64) -> f64 {
        let a = (last + 1) as f64;
        let q = self.mu / (a + 1.0);
        if q >= 1.0 {
            return f64::INFINITY;
        }
        let one_m = 1.0 - q;
        let sum_sq = a * a / one_m + 2.0 * a * q / (one_m * one_m) + q * (1.0 + q) / one_m.powi(3);
        self.pmf(last + 1) * (1.0 / one_m + sum_sq)
    }
}

/// Truncation control for series expectations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesTolerance {
    pub tail_bound: f64,
    pub max_terms: usize,
}

impl SeriesTolerance {
    pub fn new(tail_bound: f64, max_terms: usize) -> Result<Self> {
        if !(tail_bound > 0.0) || max_terms == 0 {
            return Err(Error::InvalidParameter(format!(
                "series tolerance needs tail_bound > 0 and max_terms >= 1 (got {tail_bound}, {max_terms})"
            )));
        }
        Ok(Self {
            tail_bound,
            max_terms,
        })
    }

    /// Same term budget, tail bound multiplied by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            tail_bound: self.tail_bound * factor,
            ..self
        }
    }
}

impl Default for SeriesTolerance {
    fn default() -> Self {
        Self {
            tail_bound: 1e-12,
            max_terms: 100_000,
        }
    }
}

/// Certificate `|f(k)| <= constant * (1 + k^2)` for all `k >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthBound {
    pub constant: f64,
}

impl GrowthBound {
    pub fn quadratic(constant: f64) -> Self {
        Self { constant }
    }
}

/// `ln k!`, exact summation for small `k`.
pub fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        0.0
    } else if k <= 20 {
        (2..=k).map(|i| (i as f64).ln()).sum()
    } else {
        libm::lgamma(k as f64 + 1.0)
    }
}

/// `ln k! - [(k + 1/2) ln k - k + ln(2 pi) / 2]`.
fn stirling_error(k: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    let n = k as f64;
    if k <= 15 {
        return ln_factorial(k) - ((n + 0.5) * n.ln() - n + 0.5 * std::f64::consts::TAU.ln());
    }
    let nn = n * n;
    if k > 500 {
        (S0 - S1 / nn) / n
    } else if k > 80 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if k > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// `x ln(x / m) + m - x`, by a series when `x` is close to `m`.
fn deviance_term(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                break;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

fn sample_inversion<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mu).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= mu / k as f64;
        if p == 0.0 {
            break;
        }
        cdf += p;
    }
    k
}

fn sample_ptrs<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    let slam = mu.sqrt();
    let loglam = mu.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let invalpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mu + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + invalpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mu + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(mu: f64) -> PoissonDist {
        PoissonDist::new(mu).unwrap()
    }

    fn naive_pmf(mu: f64, k: u64) -> f64 {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        (-mu).exp() * mu.powi(k as i32) / fact
    }

    #[test]
    fn pmf_point_mass_and_unit_mean() {
        assert_eq!(dist(0.0).pmf(0), 1.0);
        assert_eq!(dist(0.0).pmf(3), 0.0);
        assert!((dist(1.0).pmf(1) - (-1.0f64).exp()).abs() < 1e-15);
        let total: f64 = (0..60).map(|k| dist(1.0).pmf(k)).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pmf_two_plus_mass_is_quadratically_small() {
        let d = dist(0.5);
        let tail = 1.0 - d.pmf(0) - d.pmf(1);
        assert!(tail <= 0.125);
    }

    #[test]
    fn pmf_matches_naive_form() {
        for &mu in &[0.01, 0.3, 1.0, 4.5, 10.0, 30.0] {
            for k in 0..=100u64 {
                let naive = naive_pmf(mu, k);
                if naive < 1e-290 {
                    continue;
                }
                let rel = (dist(mu).pmf(k) - naive).abs() / naive;
                assert!(rel < 1e-12, "mu={mu} k={k} rel={rel}");
            }
        }
    }

    #[test]
    fn rejects_negative_mean() {
        assert!(PoissonDist::new(-1.0).is_err());
        assert!(PoissonDist::new(f64::NAN).is_err());
    }

    #[test]
    fn expectation_moments() {
        let tol = SeriesTolerance::default();
        let one = GrowthBound::quadratic(1.0);
        for &mu in &[0.01, 0.1, 1.0, 10.0, 100.0] {
            let d = dist(mu);
            let norm = d.expect(|_| 1.0, one, tol).unwrap();
            assert!((norm - 1.0).abs() < tol.tail_bound + 1e-14, "mu={mu}");
            let mean = d.expect(|k| k as f64, one, tol).unwrap();
            assert!((mean - mu).abs() < tol.tail_bound + 1e-14 * mu, "mu={mu}");
            let second = d.expect(|k| (k * k) as f64, one, tol).unwrap();
            assert!(
                (second - (mu + mu * mu)).abs() < tol.tail_bound + 1e-14 * mu * mu,
                "mu={mu}"
            );
        }
        let d = dist(2.5);
        assert!((d.expect(|k| k as f64, one, tol).unwrap() - 2.5).abs() < 1e-12);
        let d = dist(0.3);
        let fact2 = d.expect(|k| (k * k.saturating_sub(1)) as f64, one, tol).unwrap();
        assert!((fact2 - 0.09).abs() < 1e-12);
    }

    #[test]
    fn expectation_handles_large_means() {
        let tol = SeriesTolerance::default();
        let d = dist(1e6);
        let mean = d.expect(|k| k as f64, GrowthBound::quadratic(1.0), tol).unwrap();
        assert!((mean - 1e6).abs() < 1e-6);
    }

    #[test]
    fn truncation_failure_when_budget_too_small() {
        let tol = SeriesTolerance::new(1e-12, 3).unwrap();
        let err = dist(5.0)
            .expect(|_| 1.0, GrowthBound::quadratic(1.0), tol)
            .unwrap_err();
        assert!(matches!(err, Error::TruncationFailure { .. }));
    }

    #[test]
    fn sampler_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| dist(0.0).sample(&mut rng) == 0));
    }

    fn sample_moments(mu: f64, n: usize, seed: u64) -> (f64, f64) {
        let d = dist(mu);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = (0..n).map(|_| d.sample(&mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (mean, var)
    }

    #[test]
    fn inversion_sampler_moments() {
        let (mean, var) = sample_moments(4.0, 1_000_000, 11);
        assert!((mean - 4.0).abs() < 3.0 * 2.0 / 1000.0, "mean {mean}");
        assert!((var - 4.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn rejection_sampler_moments() {
        for &mu in &[10.5, 37.0, 1000.0] {
            let (mean, var) = sample_moments(mu, 400_000, 5);
            let se = (mu / 400_000.0).sqrt();
            assert!((mean - mu).abs() < 4.0 * se, "mu={mu} mean={mean}");
            let var_se = ((mu + 2.0 * mu * mu) / 400_000.0).sqrt();
            assert!((var - mu).abs() < 4.0 * var_se, "mu={mu} var={var}");
        }
    }

    #[test]
    fn sampler_agrees_with_series() {
        let tol = SeriesTolerance::default();
        let f = |k: u64| {
            let x = k as f64 - 3.0;
            x * x
        };
        for &(mu, seed) in &[(0.7, 3u64), (6.0, 4), (25.0, 5)] {
            let d = dist(mu);
            let exact = d.expect(f, GrowthBound::quadratic(10.0), tol).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1_000_000;
            let vals: Vec<f64> = (0..n).map(|_| f(d.sample(&mut rng))).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let se = sd / (n as f64).sqrt();
            assert!((mean - exact).abs() < 4.0 * se, "mu={mu}: {mean} vs {exact}");
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let d = dist(42.0);
        let a: Vec<u64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..100).map(|_| d.sample(&mut rng)).collect()
        };
        let b: Vec<u64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..100).map(|_| d.sample(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }
}
