use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::table::{num, opt_num, CsvTable};
use super::{noise_seed, ExperimentConfig, PhantomSource};
use crate::error::{Error, Result};
use crate::solvers::{
    reference_tau, solve, tune_tau, Instance, ObjectiveSpec, SolverSettings, TauTuning,
    WeightKind,
};
use crate::tomo::{
    fbp, forward, load_image, sample_counts, shepp_logan, Image, Projector, ScanGeometry,
    Sinogram,
};

/// Ground truth, geometry and projector shared by every cell of a run.
pub struct CtSetup {
    pub geometry: ScanGeometry,
    pub projector: Projector,
    pub truth: Image,
    line_integrals: Sinogram,
}

impl CtSetup {
    pub fn new(truth: Image, geometry: ScanGeometry) -> Result<Self> {
        let projector = Projector::joseph(&geometry);
        let line_integrals = forward(&projector, &truth)?;
        if !(line_integrals.mean() > 0.0) {
            return Err(Error::ZeroSinogram);
        }
        Ok(Self {
            geometry,
            projector,
            truth,
            line_integrals,
        })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let truth = match &cfg.phantom {
            PhantomSource::SheppLogan => shepp_logan(cfg.n_side),
            PhantomSource::File(path) => load_image(path, cfg.n_side)?,
        };
        let geometry = match cfg.num_bins {
            None => ScanGeometry::new(cfg.n_side, cfg.num_angles)?,
            Some(bins) => ScanGeometry::with_detector(cfg.n_side, cfg.num_angles, bins, 1.0)?,
        };
        Self::new(truth, geometry)
    }

    /// Dose giving a mean expected count of `c` per bin.
    pub fn dose(&self, c: f64) -> Result<f64> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("count level must be > 0, got {c}")));
        }
        Ok(c / self.line_integrals.mean())
    }

    /// One noisy acquisition at count level `c`, with the oracle sinogram
    /// and an FBP image attached for the weighted methods.
    pub fn instance(&self, c: f64, seed: u64, base_seed: u64) -> Result<Instance<'_>> {
        let s = self.dose(c)?;
        let expected = self.line_integrals.scaled(s);
        let counts = sample_counts(&expected, noise_seed(base_seed, seed, c))?;
        let fbp_image = fbp(&self.geometry, &counts, s)?;
        Ok(Instance {
            op: &self.projector,
            truth: self.truth.pixels(),
            counts: counts.values,
            s,
            expected: Some(expected.values),
            fbp: Some(fbp_image.into_pixels()),
        })
    }

    pub fn instances(&self, c: f64, seeds: &[u64], base_seed: u64) -> Result<Vec<Instance<'_>>> {
        seeds.iter().map(|&seed| self.instance(c, seed, base_seed)).collect()
    }
}

/// One test-set solve.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub method: String,
    pub c: f64,
    pub epsilon: Option<f64>,
    pub tau: f64,
    pub seed: u64,
    /// `None` marks a failed solve.
    pub mse_fov: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Seconds; kept in memory only so written tables stay reproducible.
    pub wall_time: f64,
}

/// Mean test MSE of one `(method, c, epsilon)` cell over successful seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub c: f64,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub mean_mse: Option<f64>,
    pub num_ok: usize,
    pub num_failed: usize,
}

/// One point of a tau tuning curve (mean over tuning seeds).
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub method: String,
    pub c: f64,
    pub epsilon: Option<f64>,
    pub tau: f64,
    pub mean_mse: Option<f64>,
}

/// Tuning-set MSE of one floor candidate at the lowest count level.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsChoice {
    pub method: String,
    pub epsilon: f64,
    pub tuning_mse: Option<f64>,
    pub selected: bool,
}

fn tau_multipliers(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.tau_grid.multipliers()
}

/// Tunes tau on `tuning` over the configured multipliers of the mean
/// reference scale of the tuning instances.
fn tune(
    objective: &ObjectiveSpec,
    tuning: &[Instance<'_>],
    multipliers: &[f64],
    settings: &SolverSettings,
) -> Result<TauTuning> {
    let mut reference = 0.0;
    for inst in tuning {
        reference += reference_tau(objective, inst)?;
    }
    reference /= tuning.len() as f64;
    let grid: Vec<f64> = multipliers.iter().map(|m| m * reference).collect();
    tune_tau(objective, tuning, &grid, settings)
}

fn curve_rows(objective: &ObjectiveSpec, c: f64, tuning: &TauTuning) -> Vec<CurveRow> {
    tuning
        .curve
        .iter()
        .map(|p| CurveRow {
            method: objective.name().to_string(),
            c,
            epsilon: objective.epsilon(),
            tau: p.tau,
            mean_mse: p.mean_mse,
        })
        .collect()
}

fn evaluate(
    objective: &ObjectiveSpec,
    c: f64,
    tau: f64,
    test: &[Instance<'_>],
    seeds: &[u64],
    settings: &SolverSettings,
) -> Vec<CellResult> {
    test.par_iter()
        .zip(seeds.par_iter())
        .map(|(inst, &seed)| {
            let start = Instant::now();
            let outcome = solve(objective, inst, tau, settings);
            let wall_time = start.elapsed().as_secs_f64();
            let (mse_fov, iterations, converged) = match outcome {
                Ok(r) => (r.fov_mse, r.iterations, r.converged),
                Err(_) => (None, 0, false),
            };
            CellResult {
                method: objective.name().to_string(),
                c,
                epsilon: objective.epsilon(),
                tau,
                seed,
                mse_fov,
                iterations,
                converged,
                wall_time,
            }
        })
        .collect()
}

fn summarize(objective: &ObjectiveSpec, c: f64, tau: Option<f64>, cells: &[CellResult], seeds: usize) -> SummaryRow {
    let ok: Vec<f64> = cells.iter().filter_map(|r| r.mse_fov).collect();
    SummaryRow {
        method: objective.name().to_string(),
        c,
        epsilon: objective.epsilon(),
        tau,
        mean_mse: if ok.is_empty() { None } else { Some(ok.iter().sum::<f64>() / ok.len() as f64) },
        num_ok: ok.len(),
        num_failed: seeds - ok.len(),
    }
}

/// Tunes tau (or reuses `cached`) and evaluates the test seeds.
#[allow(clippy::too_many_arguments)]
fn tune_and_test(
    objective: &ObjectiveSpec,
    c: f64,
    tuning: &[Instance<'_>],
    test: &[Instance<'_>],
    cfg: &ExperimentConfig,
    cached: Option<TauTuning>,
    curves: &mut Vec<CurveRow>,
    cells: &mut Vec<CellResult>,
) -> SummaryRow {
    let tuned = match cached {
        Some(t) => Ok(t),
        None => tune(objective, tuning, &tau_multipliers(cfg), &cfg.solver),
    };
    match tuned {
        Ok(t) => {
            curves.extend(curve_rows(objective, c, &t));
            let out = evaluate(objective, c, t.best_tau, test, &cfg.test_seeds, &cfg.solver);
            let row = summarize(objective, c, Some(t.best_tau), &out, cfg.test_seeds.len());
            cells.extend(out);
            row
        }
        Err(_) => summarize(objective, c, None, &[], cfg.test_seeds.len()),
    }
}

fn sorted_levels(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut levels = cfg.count_levels.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}

fn summary_table(rows: &[SummaryRow]) -> CsvTable {
    let mut t = CsvTable::new(&["method", "c", "epsilon", "tau", "num_seeds", "num_failed", "mean_mse_fov"]);
    for r in rows {
        t.push(vec![
            r.method.clone(),
            num(r.c),
            opt_num(r.epsilon),
            opt_num(r.tau),
            (r.num_ok + r.num_failed).to_string(),
            r.num_failed.to_string(),
            opt_num(r.mean_mse),
        ])
        .expect("fixed width");
    }
    t
}

fn cells_table(cells: &[CellResult]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "method", "c", "epsilon", "tau", "seed", "mse_fov", "iterations", "converged", "status",
    ]);
    for r in cells {
        t.push(vec![
            r.method.clone(),
            num(r.c),
            opt_num(r.epsilon),
            num(r.tau),
            r.seed.to_string(),
            opt_num(r.mse_fov),
            r.iterations.to_string(),
            r.converged.to_string(),
            if r.mse_fov.is_some() { "ok" } else { "failed" }.to_string(),
        ])
        .expect("fixed width");
    }
    t
}

fn curves_table(rows: &[CurveRow]) -> CsvTable {
    let mut t = CsvTable::new(&["method", "c", "epsilon", "tau", "mean_mse_fov", "status"]);
    for r in rows {
        t.push(vec![
            r.method.clone(),
            num(r.c),
            opt_num(r.epsilon),
            num(r.tau),
            opt_num(r.mean_mse),
            if r.mean_mse.is_some() { "ok" } else { "failed" }.to_string(),
        ])
        .expect("fixed width");
    }
    t
}

fn write_all(dir: &Path, tables: &[(String, CsvTable)]) -> Result<Vec<PathBuf>> {
    tables
        .iter()
        .map(|(name, t)| {
            let path = dir.join(name);
            t.write(&path)?;
            Ok(path)
        })
        .collect()
}

/// Output of [`run_mse_vs_counts`].
#[derive(Clone, Debug, PartialEq)]
pub struct MseVsCounts {
    pub summary: Vec<SummaryRow>,
    pub cells: Vec<CellResult>,
    pub curves: Vec<CurveRow>,
    pub eps_choices: Vec<EpsChoice>,
}

impl MseVsCounts {
    pub fn mean_mse(&self, method: &str, c: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.c == c)
            .and_then(|r| r.mean_mse)
    }

    pub fn tables(&self) -> Vec<(String, CsvTable)> {
        let mut eps = CsvTable::new(&["method", "epsilon", "tuning_mse_fov", "selected"]);
        for e in &self.eps_choices {
            eps.push(vec![
                e.method.clone(),
                num(e.epsilon),
                opt_num(e.tuning_mse),
                e.selected.to_string(),
            ])
            .expect("fixed width");
        }
        vec![
            ("mse_vs_counts.csv".into(), summary_table(&self.summary)),
            ("mse_vs_counts_cells.csv".into(), cells_table(&self.cells)),
            ("tuning_curves.csv".into(), curves_table(&self.curves)),
            ("eps_selection.csv".into(), eps),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_all(dir, &self.tables())
    }
}

/// MSE against count level. Floors are chosen per method from `eps_grid`
/// by tuning-set MSE at the lowest level and then frozen; tau is tuned per
/// `(method, c)` on the tuning seeds; test seeds only ever see the chosen
/// `(epsilon, tau)`.
pub fn run_mse_vs_counts(cfg: &ExperimentConfig) -> Result<MseVsCounts> {
    cfg.validate()?;
    let setup = CtSetup::from_config(cfg)?;
    let levels = sorted_levels(cfg);
    let lowest = levels[0];
    let multipliers = tau_multipliers(cfg);

    let mut summary = Vec::new();
    let mut cells = Vec::new();
    let mut curves = Vec::new();
    let mut eps_choices = Vec::new();

    // Floor selection at the lowest level, keeping the winning tuning.
    let low_tuning = setup.instances(lowest, &cfg.tuning_seeds, cfg.base_seed)?;
    let mut frozen: Vec<(ObjectiveSpec, Option<TauTuning>)> = Vec::new();
    for template in &cfg.methods {
        if !template.uses_epsilon() {
            frozen.push((*template, None));
            continue;
        }
        let mut best: Option<(usize, f64, TauTuning)> = None;
        let mut scored = Vec::new();
        for (k, &eps) in cfg.eps_grid.iter().enumerate() {
            let obj = template.with_epsilon(eps);
            let tuned = tune(&obj, &low_tuning, &multipliers, &cfg.solver).ok();
            let score = tuned.as_ref().map(|t| t.best_mse);
            if let (Some(t), Some(m)) = (tuned, score) {
                if best.as_ref().is_none_or(|(_, b, _)| m < *b) {
                    best = Some((k, m, t));
                }
            }
            scored.push((eps, score));
        }
        let chosen = best.as_ref().map(|(k, _, _)| *k);
        for (k, (eps, score)) in scored.into_iter().enumerate() {
            eps_choices.push(EpsChoice {
                method: template.name().to_string(),
                epsilon: eps,
                tuning_mse: score,
                selected: Some(k) == chosen,
            });
        }
        match best {
            Some((k, _, t)) => frozen.push((template.with_epsilon(cfg.eps_grid[k]), Some(t))),
            None => frozen.push((*template, None)),
        }
    }

    for &c in &levels {
        let tuning = if c == lowest {
            None
        } else {
            Some(setup.instances(c, &cfg.tuning_seeds, cfg.base_seed)?)
        };
        let tuning = tuning.as_deref().unwrap_or(&low_tuning);
        let test = setup.instances(c, &cfg.test_seeds, cfg.base_seed)?;
        for (obj, low_cache) in &frozen {
            let cached = if c == lowest { low_cache.clone() } else { None };
            summary.push(tune_and_test(obj, c, tuning, &test, cfg, cached, &mut curves, &mut cells));
        }
    }

    let order = |m: &str| cfg.methods.iter().position(|t| t.name() == m).unwrap_or(usize::MAX);
    summary.sort_by(|a, b| order(&a.method).cmp(&order(&b.method)).then(a.c.total_cmp(&b.c)));
    cells.sort_by(|a, b| {
        order(&a.method)
            .cmp(&order(&b.method))
            .then(a.c.total_cmp(&b.c))
            .then(a.seed.cmp(&b.seed))
    });
    curves.sort_by(|a, b| {
        order(&a.method)
            .cmp(&order(&b.method))
            .then(a.c.total_cmp(&b.c))
            .then(a.tau.total_cmp(&b.tau))
    });
    Ok(MseVsCounts {
        summary,
        cells,
        curves,
        eps_choices,
    })
}

/// Output of [`run_tau_curve`].
#[derive(Clone, Debug, PartialEq)]
pub struct TauCurves {
    pub curves: Vec<CurveRow>,
}

impl TauCurves {
    pub fn curve(&self, method: &str, c: f64) -> Vec<&CurveRow> {
        self.curves.iter().filter(|r| r.method == method && r.c == c).collect()
    }

    /// One table per count level, `tau_curve_c<c>.csv`.
    pub fn tables(&self) -> Vec<(String, CsvTable)> {
        let mut levels: Vec<f64> = self.curves.iter().map(|r| r.c).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        levels
            .into_iter()
            .map(|c| {
                let rows: Vec<CurveRow> = self.curves.iter().filter(|r| r.c == c).cloned().collect();
                (format!("tau_curve_c{c}.csv"), curves_table(&rows))
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_all(dir, &self.tables())
    }
}

/// Full tuning-set MSE curve over the tau grid for every `(method, c)`,
/// each method at its configured floor.
pub fn run_tau_curve(cfg: &ExperimentConfig) -> Result<TauCurves> {
    cfg.validate()?;
    let setup = CtSetup::from_config(cfg)?;
    let multipliers = tau_multipliers(cfg);
    let mut curves = Vec::new();
    for c in sorted_levels(cfg) {
        let tuning = setup.instances(c, &cfg.tuning_seeds, cfg.base_seed)?;
        for obj in &cfg.methods {
            match tune(obj, &tuning, &multipliers, &cfg.solver) {
                Ok(t) => curves.extend(curve_rows(obj, c, &t)),
                Err(_) => curves.push(CurveRow {
                    method: obj.name().to_string(),
                    c,
                    epsilon: obj.epsilon(),
                    tau: f64::NAN,
                    mean_mse: None,
                }),
            }
        }
    }
    Ok(TauCurves { curves })
}

/// Output of [`run_eps_sensitivity`].
#[derive(Clone, Debug, PartialEq)]
pub struct EpsSensitivity {
    /// Floor-dependent methods, one row per `(method, epsilon, c)`.
    pub rows: Vec<SummaryRow>,
    /// Poisson MAP per count level.
    pub baseline: Vec<SummaryRow>,
    pub cells: Vec<CellResult>,
    pub eps_grid: Vec<f64>,
}

impl EpsSensitivity {
    pub fn mean_mse(&self, method: &str, epsilon: f64, c: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.epsilon == Some(epsilon) && r.c == c)
            .and_then(|r| r.mean_mse)
    }

    /// `(max - min) / min` of the mean test MSE across the floor grid.
    pub fn relative_spread(&self, method: &str, c: f64) -> Option<f64> {
        let values = self
            .eps_grid
            .iter()
            .map(|&e| self.mean_mse(method, e, c))
            .collect::<Option<Vec<f64>>>()?;
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some((hi - lo) / lo)
    }

    /// A long table plus one wide per-method panel (one column per floor,
    /// Poisson MAP baseline last).
    pub fn tables(&self) -> Vec<(String, CsvTable)> {
        let mut long = self.rows.clone();
        long.extend(self.baseline.iter().cloned());
        let mut out = vec![
            ("eps_sensitivity.csv".to_string(), summary_table(&long)),
            ("eps_sensitivity_cells.csv".to_string(), cells_table(&self.cells)),
        ];
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        for method in methods {
            let mut header = vec!["c".to_string()];
            header.extend(self.eps_grid.iter().map(|e| format!("mse_eps_{e}")));
            header.push("mse_poisson_map".into());
            let refs: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut t = CsvTable::new(&refs);
            for b in &self.baseline {
                let mut row = vec![num(b.c)];
                row.extend(self.eps_grid.iter().map(|&e| opt_num(self.mean_mse(method, e, b.c))));
                row.push(opt_num(b.mean_mse));
                t.push(row).expect("fixed width");
            }
            out.push((format!("eps_sensitivity_{method}.csv"), t));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_all(dir, &self.tables())
    }
}

/// Test MSE of each floor-dependent method for every floor in `eps_grid`
/// and every count level, tau tuned per cell, with Poisson MAP alongside.
pub fn run_eps_sensitivity(cfg: &ExperimentConfig) -> Result<EpsSensitivity> {
    cfg.validate()?;
    for m in &cfg.methods {
        let allowed = matches!(
            m,
            ObjectiveSpec::RegularizedHg { .. }
                | ObjectiveSpec::Pwls {
                    weights: WeightKind::Oracle | WeightKind::PlugIn | WeightKind::PlugInFbp,
                    ..
                }
        );
        if !allowed {
            return Err(Error::Config(format!(
                "method '{}' has no stabilizing floor to vary",
                m.name()
            )));
        }
    }
    let setup = CtSetup::from_config(cfg)?;
    let mut rows = Vec::new();
    let mut baseline = Vec::new();
    let mut cells = Vec::new();
    let mut curves = Vec::new();
    for c in sorted_levels(cfg) {
        let tuning = setup.instances(c, &cfg.tuning_seeds, cfg.base_seed)?;
        let test = setup.instances(c, &cfg.test_seeds, cfg.base_seed)?;
        for template in &cfg.methods {
            for &eps in &cfg.eps_grid {
                let obj = template.with_epsilon(eps);
                rows.push(tune_and_test(&obj, c, &tuning, &test, cfg, None, &mut curves, &mut cells));
            }
        }
        let poisson = ObjectiveSpec::PoissonMap;
        baseline.push(tune_and_test(&poisson, c, &tuning, &test, cfg, None, &mut curves, &mut cells));
    }
    Ok(EpsSensitivity {
        rows,
        baseline,
        cells,
        eps_grid: cfg.eps_grid.clone(),
    })
}
