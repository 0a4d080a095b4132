//! Iterative reconstruction: Poisson MAP by one-step-late MAP-EM, and
//! PWLS / regularized HG MAP by projected gradient with Barzilai-Borwein
//! steps and monotone backtracking. All solvers work on the pixels in the
//! projector's support and keep every other pixel at exactly zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tomo::{masked_mse, Projector};

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Iterations between exact recomputations of `A x` in the gradient solver.
const REFRESH_EVERY: usize = 100;
/// Iterations over which the gradient solver measures objective decrease.
const BB_WINDOW: usize = 5;

/// Stopping rules shared by all solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveConfig {
    pub max_iters: usize,
    /// Stop once the relative objective decrease drops below this (per
    /// iteration for EM, over a short window for the gradient solver).
    /// Zero disables the test.
    pub obj_rel_tol: f64,
    /// Stop once `||P(x - g) - x||_inf < step_tol (1 + ||x||_inf)`.
    pub step_tol: f64,
    /// Lower bound on `s A x` in the EM ratio `y / (s A x)`.
    pub em_floor: f64,
}

impl SolveConfig {
    pub fn em() -> Self {
        Self {
            max_iters: 20_000,
            obj_rel_tol: 1e-10,
            step_tol: 1e-8,
            em_floor: 1e-12,
        }
    }

    pub fn gradient() -> Self {
        Self {
            max_iters: 5_000,
            ..Self::em()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.obj_rel_tol >= 0.0) || !(self.step_tol > 0.0) || !(self.em_floor > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

/// One config per solver family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub em: SolveConfig,
    pub gradient: SolveConfig,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            em: SolveConfig::em(),
            gradient: SolveConfig::gradient(),
        }
    }
}

/// PWLS weight choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeightKind {
    /// `1 / (mu_j(x*) + eps)`.
    Oracle,
    /// `1 / (y_j + eps)`.
    PlugIn,
    /// `1 / (mu_j(x_fbp) + eps)`.
    PlugInFbp,
    /// `w_j = 1`: ordinary least squares.
    Homoscedastic,
}

/// Reconstruction objective; every one carries the `(tau/2)||x||^2` prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectiveSpec {
    PoissonMap,
    RegularizedHg { epsilon: f64 },
    Pwls { weights: WeightKind, epsilon: f64 },
}

impl ObjectiveSpec {
    pub fn homoscedastic() -> Self {
        Self::Pwls {
            weights: WeightKind::Homoscedastic,
            epsilon: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PoissonMap => "poisson-map",
            Self::RegularizedHg { .. } => "hg",
            Self::Pwls { weights, .. } => match weights {
                WeightKind::Oracle => "pwls-oracle",
                WeightKind::PlugIn => "pwls-plugin",
                WeightKind::PlugInFbp => "pwls-plugin-fbp",
                WeightKind::Homoscedastic => "homoscedastic",
            },
        }
    }

    /// Parses a method name with `epsilon` as its floor.
    pub fn from_name(name: &str, epsilon: f64) -> Result<Self> {
        let pwls = |weights| Self::Pwls { weights, epsilon };
        Ok(match name {
            "poisson-map" => Self::PoissonMap,
            "hg" => Self::RegularizedHg { epsilon },
            "pwls-oracle" => pwls(WeightKind::Oracle),
            "pwls-plugin" => pwls(WeightKind::PlugIn),
            "pwls-plugin-fbp" => pwls(WeightKind::PlugInFbp),
            "homoscedastic" => Self::homoscedastic(),
            other => return Err(Error::Config(format!("unknown method '{other}'"))),
        })
    }

    /// Whether the objective depends on a stabilizing floor.
    pub fn uses_epsilon(&self) -> bool {
        match self {
            Self::PoissonMap => false,
            Self::RegularizedHg { .. } => true,
            Self::Pwls { weights, .. } => *weights != WeightKind::Homoscedastic,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Self::RegularizedHg { epsilon } => Some(epsilon),
            Self::Pwls { epsilon, .. } if self.uses_epsilon() => Some(epsilon),
            _ => None,
        }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        match self {
            Self::RegularizedHg { .. } => Self::RegularizedHg { epsilon },
            Self::Pwls { weights, .. } if weights != WeightKind::Homoscedastic => {
                Self::Pwls { weights, epsilon }
            }
            other => other,
        }
    }
}

/// Output of one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub image: Vec<f64>,
    /// Objective at every iterate, starting with the initial image.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// MSE over the support against the ground truth, when supplied.
    pub fov_mse: Option<f64>,
}

impl ReconstructionResult {
    pub fn with_truth(mut self, truth: &[f64], support: &[bool]) -> Self {
        self.fov_mse = Some(masked_mse(&self.image, truth, support));
        self
    }
}

fn check_counts(counts: &[f64]) -> Result<()> {
    match counts.iter().position(|&y| !(y >= 0.0 && y.fract() == 0.0)) {
        Some(j) => Err(Error::NonIntegerCounts(j)),
        None => Ok(()),
    }
}

fn check_shapes(op: &Projector, counts: &[f64], x0: &[f64]) -> Result<()> {
    if counts.len() != op.num_bins() || x0.len() != op.num_pixels() {
        return Err(Error::ShapeMismatch(format!(
            "operator is {}x{}, got {} counts and {} pixels",
            op.num_bins(),
            op.num_pixels(),
            counts.len(),
            x0.len()
        )));
    }
    Ok(())
}

fn check_dose(s: f64, tau: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("dose must be > 0, got {s}")));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    Ok(())
}

fn half_sq_norm(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Poisson negative log-likelihood shifted by its data-only constant,
/// `sum_j mu_j - y_j - y_j log(mu_j / y_j)` (with `0 log 0 = 0`); it is
/// nonnegative and differs from `sum_j mu_j - y_j log mu_j` by
/// `sum_j (y_j log y_j - y_j)`.
pub fn poisson_deviance(mu: &[f64], y: &[f64]) -> f64 {
    mu.iter()
        .zip(y)
        .map(|(&m, &yj)| {
            if yj == 0.0 {
                m
            } else if m <= 0.0 {
                f64::INFINITY
            } else {
                m - yj - yj * (m / yj).ln()
            }
        })
        .sum()
}

/// Count-matched uniform start: a constant `v` on the support with
/// `mean(s A v) = mean(counts)`, floored at `1e-6`.
pub fn initial_image(op: &Projector, counts: &[f64], s: f64) -> Result<Vec<f64>> {
    check_dose(s, 0.0)?;
    if counts.len() != op.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "{} counts for {} bins",
            counts.len(),
            op.num_bins()
        )));
    }
    let ones: Vec<f64> = op.support().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let unit_mean = op.forward(&ones).iter().sum::<f64>() / op.num_bins() as f64;
    let count_mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let v = if unit_mean > 0.0 { count_mean / (s * unit_mean) } else { 0.0 };
    let v = if v > 0.0 { v } else { 1e-6 };
    Ok(ones.into_iter().map(|m| m * v).collect())
}

/// Poisson MAP with Tikhonov prior by the one-step-late MAP-EM update
/// `x_i <- x_i s [A^T (y / max(s A x, floor))]_i / (s [A^T 1]_i + tau x_i)`.
///
/// The trace records [`poisson_deviance`] plus `(tau/2)||x||^2`.
pub fn poisson_map_osl(
    op: &Projector,
    counts: &[f64],
    s: f64,
    tau: f64,
    cfg: &SolveConfig,
    x0: &[f64],
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    check_dose(s, tau)?;
    check_shapes(op, counts, x0)?;
    check_counts(counts)?;
    let support = op.support();
    if let Some(i) = (0..x0.len()).find(|&i| support[i] && !(x0[i] > 0.0 && x0[i].is_finite())) {
        return Err(Error::NonPositiveInit(i));
    }

    let sens = op.adjoint(&vec![1.0; op.num_bins()]);
    let mut x: Vec<f64> = x0
        .iter()
        .zip(support)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    let mut mu = vec![0.0; op.num_bins()];
    let mut ratio = vec![0.0; op.num_bins()];
    let mut back = vec![0.0; op.num_pixels()];

    let objective = |x: &[f64], mu: &[f64]| poisson_deviance(mu, counts) + tau * half_sq_norm(x);

    op.forward_into(&x, &mut mu);
    mu.iter_mut().for_each(|m| *m *= s);
    let mut f = objective(&x, &mu);
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        for ((r, &m), &y) in ratio.iter_mut().zip(&mu).zip(counts) {
            *r = if y == 0.0 { 0.0 } else { y / m.max(cfg.em_floor) };
        }
        op.adjoint_into(&ratio, &mut back);
        for i in 0..x.len() {
            if !support[i] {
                continue;
            }
            let denom = s * sens[i] + tau * x[i];
            if denom > 0.0 {
                x[i] *= s * back[i] / denom;
                // Subnormal pixels are numerically zero and slow every later sweep.
                if x[i] < f64::MIN_POSITIVE {
                    x[i] = 0.0;
                }
            }
        }
        iterations += 1;
        op.forward_into(&x, &mut mu);
        mu.iter_mut().for_each(|m| *m *= s);
        let f_new = objective(&x, &mu);
        if !f_new.is_finite() {
            return Err(Error::NonFiniteObjective(iterations));
        }
        trace.push(f_new);
        let rel = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);
        f = f_new;
        if cfg.obj_rel_tol > 0.0 && rel < cfg.obj_rel_tol {
            converged = true;
            break;
        }
    }
    Ok(ReconstructionResult {
        image: x,
        objective_trace: trace,
        iterations,
        converged,
        fov_mse: None,
    })
}

/// Smooth data term `D(mu)` of the expected counts `mu = s A x`.
pub trait DataTerm: Sync {
    fn value(&self, mu: &[f64]) -> f64;
    /// `dD/dmu`, written into `out`.
    fn gradient(&self, mu: &[f64], out: &mut [f64]);
    /// Constant positive per-bin curvature, if the term is quadratic in
    /// `mu`; enables diagonal preconditioning.
    fn curvature(&self) -> Option<Vec<f64>> {
        None
    }
}

/// `(1/2) sum_j w_j (mu_j - y_j)^2`.
pub struct WeightedLeastSquares<'a> {
    pub counts: &'a [f64],
    pub weights: &'a [f64],
}

impl DataTerm for WeightedLeastSquares<'_> {
    fn value(&self, mu: &[f64]) -> f64 {
        0.5 * mu
            .iter()
            .zip(self.counts)
            .zip(self.weights)
            .map(|((m, y), w)| w * (m - y) * (m - y))
            .sum::<f64>()
    }

    fn gradient(&self, mu: &[f64], out: &mut [f64]) {
        for (((o, m), y), w) in out.iter_mut().zip(mu).zip(self.counts).zip(self.weights) {
            *o = w * (m - y);
        }
    }

    fn curvature(&self) -> Option<Vec<f64>> {
        Some(self.weights.to_vec())
    }
}

/// Heteroscedastic Gaussian negative log-likelihood with floor `epsilon`:
/// `sum_j (1/2) log(mu_j + eps) + (y_j - mu_j)^2 / (2 (mu_j + eps))`.
pub struct HeteroscedasticGaussian<'a> {
    pub counts: &'a [f64],
    pub epsilon: f64,
}

impl DataTerm for HeteroscedasticGaussian<'_> {
    fn value(&self, mu: &[f64]) -> f64 {
        mu.iter()
            .zip(self.counts)
            .map(|(&m, &y)| {
                let v = m + self.epsilon;
                0.5 * v.ln() + (y - m) * (y - m) / (2.0 * v)
            })
            .sum()
    }

    fn gradient(&self, mu: &[f64], out: &mut [f64]) {
        for ((o, &m), &y) in out.iter_mut().zip(mu).zip(self.counts) {
            let v = m + self.epsilon;
            let r = y - m;
            *o = 0.5 / v - r / v - r * r / (2.0 * v * v);
        }
    }
}

/// Value and gradient of `D(s A x) + (tau/2)||x||^2`, gradient restricted
/// to the support.
pub fn objective_and_gradient<D: DataTerm + ?Sized>(
    op: &Projector,
    data: &D,
    s: f64,
    tau: f64,
    x: &[f64],
) -> (f64, Vec<f64>) {
    let mu: Vec<f64> = op.forward(x).into_iter().map(|v| s * v).collect();
    let mut dmu = vec![0.0; mu.len()];
    data.gradient(&mu, &mut dmu);
    let mut g = op.adjoint(&dmu);
    for ((gi, &xi), &m) in g.iter_mut().zip(x).zip(op.support()) {
        *gi = if m { s * *gi + tau * xi } else { 0.0 };
    }
    (data.value(&mu) + tau * half_sq_norm(x), g)
}

/// Minimizes `D(s A x) + (tau/2)||x||^2` over `x >= 0` on the support by
/// diagonally scaled projected gradient with Barzilai-Borwein steps and
/// Armijo backtracking along the projected direction (monotone in the
/// objective). Quadratic data terms with curvature `c` are scaled by the
/// separable quadratic surrogate `s^2 A^T (c * A 1) + tau`.
pub fn projected_bb<D: DataTerm + ?Sized>(
    op: &Projector,
    data: &D,
    s: f64,
    tau: f64,
    cfg: &SolveConfig,
    x0: &[f64],
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    check_dose(s, tau)?;
    if x0.len() != op.num_pixels() {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels for an operator on {}",
            x0.len(),
            op.num_pixels()
        )));
    }
    let support = op.support();
    let nb = op.num_bins();
    let np = op.num_pixels();

    let mut x: Vec<f64> = x0
        .iter()
        .zip(support)
        .map(|(&v, &m)| if m { v.max(0.0) } else { 0.0 })
        .collect();
    let mut ax = op.forward(&x);
    let mut mu = vec![0.0; nb];
    let mut dmu = vec![0.0; nb];
    let mut g = vec![0.0; np];

    let eval = |x: &[f64], ax: &[f64], mu: &mut [f64]| -> f64 {
        for (m, &a) in mu.iter_mut().zip(ax) {
            *m = s * a;
        }
        data.value(mu) + tau * half_sq_norm(x)
    };
    let grad = |x: &[f64], mu: &[f64], dmu: &mut [f64], g: &mut [f64]| {
        data.gradient(mu, dmu);
        op.adjoint_into(dmu, g);
        for i in 0..g.len() {
            g[i] = if support[i] { s * g[i] + tau * x[i] } else { 0.0 };
        }
    };

    // Separable quadratic surrogate scaling for quadratic data terms;
    // identity otherwise.
    let scale: Vec<f64> = match data.curvature() {
        Some(curv) => {
            let ones: Vec<f64> = support.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            let weighted: Vec<f64> = curv.iter().zip(op.forward(&ones)).map(|(c, r)| c * r).collect();
            op.adjoint(&weighted)
                .iter()
                .zip(support)
                .map(|(&h, &m)| {
                    let d = s * s * h + tau;
                    if m && d > 0.0 { 1.0 / d } else { 0.0 }
                })
                .collect()
        }
        None => support.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    };
    let preconditioned = data.curvature().is_some();

    let mut f = eval(&x, &ax, &mut mu);
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective(0));
    }
    grad(&x, &mu, &mut dmu, &mut g);
    let mut trace = vec![f];

    let projected_step = |x: &[f64], g: &[f64]| -> f64 {
        x.iter()
            .zip(g)
            .zip(support)
            .filter(|(_, &m)| m)
            .fold(0.0, |acc, ((&xi, &gi), _)| acc.max(((xi - gi).max(0.0) - xi).abs()))
    };

    // With the surrogate scaling a unit step is a majorization step.
    let g_inf = inf_norm(&g);
    let mut alpha = if preconditioned {
        1.0
    } else if g_inf > 0.0 {
        inf_norm(&x).max(1e-3) / g_inf
    } else {
        1.0
    };
    let mut d = vec![0.0; np];
    let mut ad = vec![0.0; nb];
    let mut x_trial = vec![0.0; np];
    let mut ax_trial = vec![0.0; nb];
    let mut g_new = vec![0.0; np];
    let mut converged = projected_step(&x, &g) < cfg.step_tol * (1.0 + inf_norm(&x));
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iters {
        for i in 0..np {
            d[i] = if support[i] { (x[i] - alpha * scale[i] * g[i]).max(0.0) - x[i] } else { 0.0 };
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            converged = true;
            break;
        }
        op.forward_into(&d, &mut ad);

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..np {
                x_trial[i] = x[i] + lambda * d[i];
            }
            for j in 0..nb {
                ax_trial[j] = ax[j] + lambda * ad[j];
            }
            let f_trial = eval(&x_trial, &ax_trial, &mut mu);
            // Once the required decrease is below the objective's rounding
            // level, accept any step that does not raise it beyond rounding.
            let noise = 8.0 * f64::EPSILON * f.abs();
            let required = ARMIJO * lambda * slope;
            let bound = if -required < noise { f + noise } else { f + required };
            if f_trial.is_finite() && f_trial <= bound {
                accepted = Some(f_trial);
                break;
            }
            lambda *= 0.5;
        }
        let Some(mut f_new) = accepted else {
            // No representable decrease along the projected direction.
            converged = true;
            break;
        };
        iterations += 1;
        if iterations % REFRESH_EVERY == 0 {
            op.forward_into(&x_trial, &mut ax_trial);
            f_new = eval(&x_trial, &ax_trial, &mut mu);
        }
        grad(&x_trial, &mu, &mut dmu, &mut g_new);

        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..np {
            let si = x_trial[i] - x[i];
            if scale[i] > 0.0 {
                ss += si * si / scale[i];
            }
            sy += si * (g_new[i] - g[i]);
        }
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-20, 1e20) } else { alpha * 2.0 };

        std::mem::swap(&mut x, &mut x_trial);
        std::mem::swap(&mut ax, &mut ax_trial);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        trace.push(f);
        if !f.is_finite() {
            return Err(Error::NonFiniteObjective(iterations));
        }
        // BB progress is uneven, so the decrease is measured over a window.
        let rel = cfg.obj_rel_tol > 0.0 && trace.len() > BB_WINDOW && {
            let past = trace[trace.len() - 1 - BB_WINDOW];
            (past - f) / past.abs().max(f64::MIN_POSITIVE) < cfg.obj_rel_tol
        };
        converged = rel
            || projected_step(&x, &g) < cfg.step_tol * (1.0 + inf_norm(&x));
    }
    Ok(ReconstructionResult {
        image: x,
        objective_trace: trace,
        iterations,
        converged,
        fov_mse: None,
    })
}

/// PWLS: `(1/2) sum_j w_j (s (A x)_j - y_j)^2 + (tau/2)||x||^2`.
pub fn quadratic_solve(
    op: &Projector,
    counts: &[f64],
    s: f64,
    weights: &[f64],
    tau: f64,
    cfg: &SolveConfig,
    x0: &[f64],
) -> Result<ReconstructionResult> {
    check_shapes(op, counts, x0)?;
    if weights.len() != counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} bins",
            weights.len(),
            counts.len()
        )));
    }
    if let Some(j) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter(format!("weight {j} must be > 0")));
    }
    let data = WeightedLeastSquares { counts, weights };
    projected_bb(op, &data, s, tau, cfg, x0)
}

/// Regularized heteroscedastic-Gaussian MAP.
pub fn regularized_hg_solve(
    op: &Projector,
    counts: &[f64],
    s: f64,
    epsilon: f64,
    tau: f64,
    cfg: &SolveConfig,
    x0: &[f64],
) -> Result<ReconstructionResult> {
    check_shapes(op, counts, x0)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    let data = HeteroscedasticGaussian { counts, epsilon };
    projected_bb(op, &data, s, tau, cfg, x0)
}

/// Inverse-variance style PWLS weights.
///
/// `expected_true` is `s A x*` and `fbp_image` an FBP reconstruction; each
/// is required only by the weight kind that uses it.
pub fn pwls_weights(
    kind: WeightKind,
    epsilon: f64,
    counts: &[f64],
    expected_true: Option<&[f64]>,
    fbp_image: Option<&[f64]>,
    op: &Projector,
    s: f64,
) -> Result<Vec<f64>> {
    if kind != WeightKind::Homoscedastic && !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    let recip = |v: &[f64]| v.iter().map(|&m| 1.0 / (m + epsilon)).collect();
    Ok(match kind {
        WeightKind::Homoscedastic => vec![1.0; counts.len()],
        WeightKind::PlugIn => recip(counts),
        WeightKind::Oracle => recip(expected_true.ok_or(Error::MissingOracle)?),
        WeightKind::PlugInFbp => {
            let img = fbp_image.ok_or(Error::MissingFbp)?;
            let mu: Vec<f64> = op.forward(img).into_iter().map(|v| s * v).collect();
            recip(&mu)
        }
    })
}

/// One noisy acquisition of a known ground truth.
#[derive(Clone, Debug)]
pub struct Instance<'a> {
    pub op: &'a Projector,
    pub truth: &'a [f64],
    pub counts: Vec<f64>,
    pub s: f64,
    /// `s A x*`, used by oracle weights.
    pub expected: Option<Vec<f64>>,
    /// FBP of the counts, used by plug-in-FBP weights.
    pub fbp: Option<Vec<f64>>,
}

/// Curvature proxy used to scale tau: `s^2` times the mean over the
/// support of `diag(A^T W A)`, divided by the mean count. `W` is the PWLS
/// weight vector, or `1 / (y + 1)` for the Poisson and HG likelihoods.
pub fn reference_tau(objective: &ObjectiveSpec, inst: &Instance<'_>) -> Result<f64> {
    let weights = match *objective {
        ObjectiveSpec::PoissonMap | ObjectiveSpec::RegularizedHg { .. } => {
            inst.counts.iter().map(|y| 1.0 / (y + 1.0)).collect()
        }
        ObjectiveSpec::Pwls { weights, epsilon } => pwls_weights(
            weights,
            epsilon,
            &inst.counts,
            inst.expected.as_deref(),
            inst.fbp.as_deref(),
            inst.op,
            inst.s,
        )?,
    };
    let diag = inst.op.weighted_column_norms(&weights);
    let (sum, n) = diag
        .iter()
        .zip(inst.op.support())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(a, k), (d, _)| (a + d, k + 1));
    let mean_count = inst.counts.iter().sum::<f64>() / inst.counts.len() as f64;
    Ok(inst.s * inst.s * (sum / n.max(1) as f64) / mean_count.max(1e-12))
}

/// Runs `objective` on `inst` from the count-matched start and scores it.
pub fn solve(
    objective: &ObjectiveSpec,
    inst: &Instance<'_>,
    tau: f64,
    settings: &SolverSettings,
) -> Result<ReconstructionResult> {
    let op = inst.op;
    let x0 = initial_image(op, &inst.counts, inst.s)?;
    let result = match *objective {
        ObjectiveSpec::PoissonMap => {
            poisson_map_osl(op, &inst.counts, inst.s, tau, &settings.em, &x0)?
        }
        ObjectiveSpec::RegularizedHg { epsilon } => {
            regularized_hg_solve(op, &inst.counts, inst.s, epsilon, tau, &settings.gradient, &x0)?
        }
        ObjectiveSpec::Pwls { weights, epsilon } => {
            let w = pwls_weights(
                weights,
                epsilon,
                &inst.counts,
                inst.expected.as_deref(),
                inst.fbp.as_deref(),
                op,
                inst.s,
            )?;
            quadratic_solve(op, &inst.counts, inst.s, &w, tau, &settings.gradient, &x0)?
        }
    };
    Ok(result.with_truth(inst.truth, op.support()))
}

/// One point of a tau tuning curve.
#[derive(Clone, Debug, PartialEq)]
pub struct TauPoint {
    pub tau: f64,
    /// Mean FOV MSE over successful instances; `None` if any failed.
    pub mean_mse: Option<f64>,
    pub per_instance: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TauTuning {
    pub best_tau: f64,
    pub best_mse: f64,
    pub curve: Vec<TauPoint>,
}

/// Picks tau from `grid` by mean tuning-set FOV MSE after solving to
/// convergence. Duplicate grid values collapse; ties go to the larger tau.
pub fn tune_tau(
    objective: &ObjectiveSpec,
    tuning_set: &[Instance<'_>],
    grid: &[f64],
    settings: &SolverSettings,
) -> Result<TauTuning> {
    if grid.is_empty() || tuning_set.is_empty() {
        return Err(Error::InvalidParameter(
            "tau tuning needs a nonempty grid and tuning set".into(),
        ));
    }
    let mut taus = grid.to_vec();
    if let Some(bad) = taus.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter(format!("invalid tau {bad}")));
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let cells: Vec<(usize, usize)> = (0..taus.len())
        .flat_map(|t| (0..tuning_set.len()).map(move |i| (t, i)))
        .collect();
    let scores: Vec<Option<f64>> = cells
        .par_iter()
        .map(|&(t, i)| {
            solve(objective, &tuning_set[i], taus[t], settings)
                .ok()
                .and_then(|r| r.fov_mse)
        })
        .collect();

    let curve: Vec<TauPoint> = taus
        .iter()
        .enumerate()
        .map(|(t, &tau)| {
            let per_instance = scores[t * tuning_set.len()..(t + 1) * tuning_set.len()].to_vec();
            let mean_mse = per_instance
                .iter()
                .try_fold(0.0, |acc, v| v.map(|m| acc + m))
                .map(|sum| sum / per_instance.len() as f64);
            TauPoint {
                tau,
                mean_mse,
                per_instance,
            }
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for p in &curve {
        if let Some(m) = p.mean_mse {
            // ascending taus: `<=` moves ties to the larger tau
            if best.is_none_or(|(_, b)| m <= b) {
                best = Some((p.tau, m));
            }
        }
    }
    let (best_tau, best_mse) = best.ok_or_else(|| {
        Error::InvalidParameter(format!("every tau cell failed for {}", objective.name()))
    })?;
    Ok(TauTuning {
        best_tau,
        best_mse,
        curve,
    })
}
