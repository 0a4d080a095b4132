use std::path::{Path, PathBuf};

use super::table::{num, opt_num, CsvTable};
use super::ExperimentConfig;
use crate::diag_model::{
    exact_mode_ratio, homoscedastic_ratio_identity, optimal_resolution, predicted_ratio, Estimator,
};
use crate::error::Result;

/// One cell of the per-mode ratio sweep. Modes use `s = a = 1`, so
/// `tau = gamma` and `x* = mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropositionRow {
    pub family: &'static str,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub mu: f64,
    /// `None` when the series failed for this cell.
    pub exact_ratio: Option<f64>,
    pub predicted_ratio: f64,
    /// Exact minus the finite-dose identity (homoscedastic rows only).
    pub identity_residual: Option<f64>,
}

impl PropositionRow {
    pub fn residual(&self) -> Option<f64> {
        self.exact_ratio.map(|r| r - self.predicted_ratio)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagPropositions {
    pub rows: Vec<PropositionRow>,
}

impl DiagPropositions {
    pub const HEADER: [&'static str; 8] = [
        "family",
        "epsilon",
        "gamma",
        "mu",
        "exact_ratio",
        "predicted_ratio",
        "residual",
        "identity_residual",
    ];

    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&Self::HEADER);
        for r in &self.rows {
            t.push(vec![
                r.family.to_string(),
                opt_num(r.epsilon),
                opt_num(r.gamma),
                num(r.mu),
                opt_num(r.exact_ratio),
                num(r.predicted_ratio),
                opt_num(r.residual()),
                opt_num(r.identity_residual),
            ])
            .expect("fixed width");
        }
        t
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        self.table().write(path)?;
        Ok(path.to_path_buf())
    }
}

/// Exact per-mode ratios to the Poisson MLE against their low-dose
/// constants over `gamma x mu` (and `epsilon x mu` for HG).
pub fn run_diag_propositions(cfg: &ExperimentConfig) -> Result<DiagPropositions> {
    let tol = cfg.series;
    let mut rows = Vec::new();
    let mut push = |spec: Estimator, gamma: Option<f64>, mu: f64| -> Result<()> {
        let exact = exact_mode_ratio(spec, 1.0, 1.0, mu, tol).ok();
        let identity_residual = match (spec, gamma, exact) {
            (Estimator::HomoscedasticMap { .. }, Some(g), Some(r)) => {
                Some(r - homoscedastic_ratio_identity(g, mu))
            }
            _ => None,
        };
        rows.push(PropositionRow {
            family: spec.name(),
            epsilon: match spec {
                Estimator::HeteroscedasticHg { epsilon } => Some(epsilon),
                _ => None,
            },
            gamma,
            mu,
            exact_ratio: exact,
            predicted_ratio: predicted_ratio(spec, 1.0, 1.0)?,
            identity_residual,
        });
        Ok(())
    };
    for &gamma in &cfg.diag_gammas {
        for &mu in &cfg.diag_mus {
            push(Estimator::poisson_map(gamma)?, Some(gamma), mu)?;
        }
    }
    for &gamma in &cfg.diag_gammas {
        for &mu in &cfg.diag_mus {
            push(Estimator::homoscedastic_map(gamma)?, Some(gamma), mu)?;
        }
    }
    for &eps in &cfg.diag_eps {
        for &mu in &cfg.diag_mus {
            push(Estimator::heteroscedastic_hg(eps)?, None, mu)?;
        }
    }
    Ok(DiagPropositions { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPoint {
    pub alpha: f64,
    pub beta: f64,
    pub dose: f64,
    pub optimal_d: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    /// Least-squares slope of `ln d` against `ln s`.
    pub slope: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionScaling {
    pub points: Vec<ScalingPoint>,
    pub fits: Vec<ScalingFit>,
}

impl ResolutionScaling {
    pub fn tables(&self) -> Vec<(String, CsvTable)> {
        let mut pts = CsvTable::new(&["alpha", "beta", "s", "optimal_d"]);
        for p in &self.points {
            pts.push(vec![num(p.alpha), num(p.beta), num(p.dose), p.optimal_d.to_string()])
                .expect("fixed width");
        }
        let mut fits = CsvTable::new(&["alpha", "beta", "fitted_slope", "predicted_slope"]);
        for f in &self.fits {
            fits.push(vec![num(f.alpha), num(f.beta), num(f.slope), num(f.predicted)])
                .expect("fixed width");
        }
        vec![
            ("resolution_scaling.csv".into(), pts),
            ("resolution_slopes.csv".into(), fits),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.tables()
            .iter()
            .map(|(name, t)| {
                let path = dir.join(name);
                t.write(&path)?;
                Ok(path)
            })
            .collect()
    }
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// MSE-optimal resolution of the Poisson MLE on polynomial problems over a
/// log-spaced dose grid, with the fitted log-log slope per decay pair.
pub fn run_resolution_scaling(cfg: &ExperimentConfig) -> Result<ResolutionScaling> {
    cfg.validate()?;
    let n = cfg.dose_points;
    let (lo, hi) = (cfg.dose_min.ln(), cfg.dose_max.ln());
    let doses: Vec<f64> = (0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect();
    let mut points = Vec::new();
    let mut fits = Vec::new();
    for &(alpha, beta) in &cfg.decay_pairs {
        let mut ds = Vec::with_capacity(n);
        for &s in &doses {
            let d = optimal_resolution(Estimator::PoissonMle, alpha, beta, cfg.num_modes, s, cfg.series)?;
            points.push(ScalingPoint { alpha, beta, dose: s, optimal_d: d });
            ds.push((d as f64).ln());
        }
        let ln_s: Vec<f64> = doses.iter().map(|s| s.ln()).collect();
        fits.push(ScalingFit {
            alpha,
            beta,
            slope: least_squares_slope(&ln_s, &ds),
            predicted: 1.0 / (alpha + beta),
        });
    }
    Ok(ResolutionScaling { points, fits })
}
