//! The diagonal Poisson model `y_j ~ P(s a_j x*_j)`, `j <= d`.
//!
//! Every estimator here decouples across modes and has a closed form, so
//! the MSE of each mode is an exact Poisson series. The ratio predictions
//! (`predicted_ratio`, `global_ratio_prediction`) are kept separate from
//! the exact risk so one can be checked against the other.

use crate::error::{Error, Result};
use crate::poisson_stats::{GrowthBound, PoissonDist, SeriesTolerance};

/// Per-mode estimator family and its hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Estimator {
    /// `y / (s a)`.
    PoissonMle,
    /// Poisson likelihood plus `(tau/2) x^2`.
    PoissonMap { tau: f64 },
    /// Unit-variance Gaussian likelihood plus `(tau/2) x^2`.
    HomoscedasticMap { tau: f64 },
    /// Gaussian likelihood with variance `s a x + epsilon`, no prior.
    HeteroscedasticHg { epsilon: f64 },
}

impl Estimator {
    pub fn poisson_map(tau: f64) -> Result<Self> {
        let e = Self::PoissonMap { tau };
        e.validate().map(|_| e)
    }

    pub fn homoscedastic_map(tau: f64) -> Result<Self> {
        let e = Self::HomoscedasticMap { tau };
        e.validate().map(|_| e)
    }

    pub fn heteroscedastic_hg(epsilon: f64) -> Result<Self> {
        let e = Self::HeteroscedasticHg { epsilon };
        e.validate().map(|_| e)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::PoissonMle => Ok(()),
            Self::PoissonMap { tau } | Self::HomoscedasticMap { tau } => {
                if tau > 0.0 && tau.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")))
                }
            }
            Self::HeteroscedasticHg { epsilon } => {
                if epsilon > 0.0 && epsilon.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "epsilon must be > 0, got {epsilon}"
                    )))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PoissonMle => "poisson-mle",
            Self::PoissonMap { .. } => "poisson-map",
            Self::HomoscedasticMap { .. } => "homoscedastic-map",
            Self::HeteroscedasticHg { .. } => "heteroscedastic-hg",
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            Self::PoissonMap { tau } | Self::HomoscedasticMap { tau } => Some(tau),
            _ => None,
        }
    }

    /// Closed-form estimate of one mode with gain `a` from count `y`.
    pub fn estimate(&self, s: f64, a: f64, y: u64) -> f64 {
        let sa = s * a;
        let y = y as f64;
        match *self {
            Self::PoissonMle => y / sa,
            // (-sa + sqrt(sa^2 + 4 tau y)) / (2 tau), rationalized.
            Self::PoissonMap { tau } => 2.0 * y / (sa + (sa * sa + 4.0 * tau * y).sqrt()),
            Self::HomoscedasticMap { tau } => (sa / (sa * sa + tau) * y).max(0.0),
            Self::HeteroscedasticHg { epsilon } => {
                (hg_root(y + epsilon) - epsilon).max(0.0) / sa
            }
        }
    }
}

/// `(-1 + sqrt(1 + 4 z^2)) / 2` without cancellation.
fn hg_root(z: f64) -> f64 {
    2.0 * z * z / (1.0 + (1.0 + 4.0 * z * z).sqrt())
}

/// `c(eps) = (-1 + sqrt(1 + 4 (1 + eps)^2)) / 2 - eps`, the HG estimate
/// at `y = 1` in units of `1/(s a)`. Lies in `(1/2, (sqrt 5 - 1)/2)`.
pub fn hg_shrinkage_constant(epsilon: f64) -> f64 {
    hg_root(1.0 + epsilon) - epsilon
}

/// `gamma = tau / (s a)^2`.
pub fn effective_regularization(tau: f64, s: f64, a: f64) -> f64 {
    tau / (s * a).powi(2)
}

/// Gains, ground truth, dose and resolution of a diagonal problem.
///
/// Modes are zero-indexed here; mode `j` is observed iff `j < resolution`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalProblem {
    gains: Vec<f64>,
    x_star: Vec<f64>,
    dose: f64,
    resolution: usize,
}

impl DiagonalProblem {
    pub fn new(gains: Vec<f64>, x_star: Vec<f64>, dose: f64, resolution: usize) -> Result<Self> {
        let m = x_star.len();
        if resolution == 0 || resolution > m {
            return Err(Error::InvalidParameter(format!(
                "resolution must lie in 1..={m}, got {resolution}"
            )));
        }
        if gains.len() < resolution {
            return Err(Error::InvalidParameter(format!(
                "need {resolution} gains, got {}",
                gains.len()
            )));
        }
        if !(dose > 0.0 && dose.is_finite()) {
            return Err(Error::InvalidParameter(format!("dose must be > 0, got {dose}")));
        }
        if let Some(j) = gains[..resolution].iter().position(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(format!("gain {j} must be > 0")));
        }
        if let Some(j) = x_star.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter(format!("x* component {j} must be >= 0")));
        }
        let p = Self {
            gains,
            x_star,
            dose,
            resolution,
        };
        if let Some(j) = (0..resolution).find(|&j| !p.mu(j).is_finite()) {
            return Err(Error::InvalidParameter(format!("expected count of mode {j} overflows")));
        }
        Ok(p)
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn dose(&self) -> f64 {
        self.dose
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    /// Expected count `s a_j x*_j`.
    pub fn mu(&self, j: usize) -> f64 {
        self.dose * self.gains[j] * self.x_star[j]
    }

    /// Same signal and gains at another resolution.
    pub fn with_resolution(&self, resolution: usize) -> Result<Self> {
        Self::new(self.gains.clone(), self.x_star.clone(), self.dose, resolution)
    }

    /// `V_d = sum_{j<d} x*_j / (s a_j)`, the Poisson-MLE variance.
    pub fn mle_variance(&self) -> f64 {
        (0..self.resolution)
            .map(|j| self.x_star[j] / (self.dose * self.gains[j]))
            .sum()
    }

    /// `T_d = sum_{j>=d} x*_j^2`.
    pub fn truncation_bias(&self) -> f64 {
        self.x_star[self.resolution..].iter().map(|x| x * x).sum()
    }
}

/// Exact MSE decomposition over modes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeMseReport {
    pub per_mode_mse: Vec<f64>,
    pub truncation_bias: f64,
    pub total: f64,
    /// `tau / (s a_j)^2` for tau-regularized families, empty otherwise.
    pub gamma: Vec<f64>,
}

/// `E (xhat(y) - x*)^2` for `y ~ P(s a x*)`, as an exact Poisson series.
pub fn scalar_mode_mse(
    spec: Estimator,
    s: f64,
    a: f64,
    x_star: f64,
    tol: SeriesTolerance,
) -> Result<f64> {
    spec.validate()?;
    let dist = PoissonDist::new(s * a * x_star)?;
    let sa = s * a;
    // xhat(k) <= k/(sa) for every family, so (xhat - x*)^2 <= C (1 + k^2).
    let bound = GrowthBound::quadratic(2.0 * (1.0 / (sa * sa)).max(x_star * x_star));
    dist.expect(
        |k| {
            let e = spec.estimate(s, a, k) - x_star;
            e * e
        },
        bound,
        tol,
    )
}

/// Exact per-mode MSE of mode `j` (zero-indexed, `j < d`).
pub fn exact_mode_mse(
    spec: Estimator,
    problem: &DiagonalProblem,
    j: usize,
    tol: SeriesTolerance,
) -> Result<f64> {
    if j >= problem.resolution {
        return Err(Error::InvalidParameter(format!(
            "mode {j} is not observed at resolution {}",
            problem.resolution
        )));
    }
    scalar_mode_mse(spec, problem.dose, problem.gains[j], problem.x_star[j], tol)
}

/// Exact ratio `MSE(spec) / MSE(Poisson MLE)` of a single mode. Both
/// series are evaluated with a tail bound relative to the MLE risk scale.
pub fn exact_mode_ratio(
    spec: Estimator,
    s: f64,
    a: f64,
    x_star: f64,
    tol: SeriesTolerance,
) -> Result<f64> {
    let scale = x_star / (s * a);
    let tol = if scale > 0.0 { tol.scaled(scale.min(1.0)) } else { tol };
    let num = scalar_mode_mse(spec, s, a, x_star, tol)?;
    let den = scalar_mode_mse(Estimator::PoissonMle, s, a, x_star, tol)?;
    Ok(num / den)
}

/// Exact global MSE with its per-mode breakdown.
pub fn global_mse(
    spec: Estimator,
    problem: &DiagonalProblem,
    tol: SeriesTolerance,
) -> Result<ModeMseReport> {
    let per_mode_mse = (0..problem.resolution)
        .map(|j| exact_mode_mse(spec, problem, j, tol))
        .collect::<Result<Vec<_>>>()?;
    let truncation_bias = problem.truncation_bias();
    let total = per_mode_mse.iter().sum::<f64>() + truncation_bias;
    let gamma = match spec.tau() {
        Some(tau) => (0..problem.resolution)
            .map(|j| effective_regularization(tau, problem.dose, problem.gains[j]))
            .collect(),
        None => Vec::new(),
    };
    Ok(ModeMseReport {
        per_mode_mse,
        truncation_bias,
        total,
        gamma,
    })
}

/// Exact `E||xhat - x*||^2 / E||xhat_MLE - x*||^2`.
pub fn exact_global_ratio(
    spec: Estimator,
    problem: &DiagonalProblem,
    tol: SeriesTolerance,
) -> Result<f64> {
    let scale = (problem.mle_variance() + problem.truncation_bias()) / problem.resolution as f64;
    let tol = if scale > 0.0 { tol.scaled(scale.min(1.0)) } else { tol };
    let num = global_mse(spec, problem, tol)?.total;
    let den = global_mse(Estimator::PoissonMle, problem, tol)?.total;
    Ok(num / den)
}

/// Leading-order low-dose constant of the per-mode ratio to the Poisson MLE.
pub fn predicted_ratio(spec: Estimator, s: f64, a: f64) -> Result<f64> {
    spec.validate()?;
    match spec {
        Estimator::PoissonMle => Err(Error::UnsupportedFamily(spec.name())),
        Estimator::PoissonMap { tau } => {
            let gamma = effective_regularization(tau, s, a);
            Ok((2.0 / (1.0 + (1.0 + 4.0 * gamma).sqrt())).powi(2))
        }
        Estimator::HomoscedasticMap { tau } => {
            let gamma = effective_regularization(tau, s, a);
            Ok((1.0 / (1.0 + gamma)).powi(2))
        }
        Estimator::HeteroscedasticHg { epsilon } => Ok(hg_shrinkage_constant(epsilon).powi(2)),
    }
}

/// The homoscedastic per-mode ratio, which holds at every dose:
/// `(1/(1+gamma))^2 + (gamma/(1+gamma))^2 mu`.
pub fn homoscedastic_ratio_identity(gamma: f64, mu: f64) -> f64 {
    (1.0 / (1.0 + gamma)).powi(2) + (gamma / (1.0 + gamma)).powi(2) * mu
}

/// `V_d`-weighted average of the per-mode leading constants.
pub fn global_ratio_prediction(spec: Estimator, problem: &DiagonalProblem) -> Result<f64> {
    if matches!(spec, Estimator::PoissonMle) {
        return Err(Error::UnsupportedFamily(spec.name()));
    }
    let s = problem.dose;
    let mut weighted = 0.0;
    let mut v_d = 0.0;
    for j in 0..problem.resolution {
        let a = problem.gains[j];
        let w = problem.x_star[j] / (s * a);
        weighted += predicted_ratio(spec, s, a)? * w;
        v_d += w;
    }
    if v_d <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(weighted / v_d)
}

/// `a_j = j^{-beta}`, `x*_j = j^{-alpha}` for `j = 1..=m`.
pub fn polynomial_problem(
    alpha: f64,
    beta: f64,
    m: usize,
    s: f64,
    d: usize,
) -> Result<DiagonalProblem> {
    if !(alpha > 0.5 && beta > 0.0) {
        return Err(Error::InvalidDecay { alpha, beta });
    }
    let gains = (1..=m).map(|j| (j as f64).powf(-beta)).collect();
    let x_star = (1..=m).map(|j| (j as f64).powf(-alpha)).collect();
    DiagonalProblem::new(gains, x_star, s, d)
}

/// Exact argmin over `d in 1..=m` of the global MSE of `spec` on the
/// polynomial problem. The per-mode risks do not depend on `d`, so one
/// pass plus prefix sums covers every resolution.
pub fn optimal_resolution(
    spec: Estimator,
    alpha: f64,
    beta: f64,
    m: usize,
    s: f64,
    tol: SeriesTolerance,
) -> Result<usize> {
    let full = polynomial_problem(alpha, beta, m, s, m)?;
    let risk = global_mse(spec, &full, tol)?.per_mode_mse;
    let energy: Vec<f64> = full.x_star.iter().map(|x| x * x).collect();
    // suffix[d] = sum_{j >= d} x*_j^2
    let mut suffix = vec![0.0; m + 1];
    for j in (0..m).rev() {
        suffix[j] = suffix[j + 1] + energy[j];
    }
    let mut best = (1, f64::INFINITY);
    let mut prefix = 0.0;
    for d in 1..=m {
        prefix += risk[d - 1];
        let total = prefix + suffix[d];
        if total < best.1 {
            best = (d, total);
        }
    }
    Ok(best.0)
}
