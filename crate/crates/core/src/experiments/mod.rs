//! Experiment orchestration: configuration, the CT benchmark runners and
//! the diagonal-model sweeps, all emitting CSV tables.

mod ct;
mod diag;
mod table;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

pub use ct::{
    run_eps_sensitivity, run_mse_vs_counts, run_tau_curve, CellResult, CtSetup, CurveRow,
    EpsChoice, EpsSensitivity, MseVsCounts, SummaryRow, TauCurves,
};
pub use diag::{
    run_diag_propositions, run_resolution_scaling, DiagPropositions, PropositionRow,
    ResolutionScaling, ScalingFit, ScalingPoint,
};
pub use table::CsvTable;

use crate::error::{Error, Result};
use crate::poisson_stats::SeriesTolerance;
use crate::solvers::{ObjectiveSpec, SolveConfig, SolverSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    MseVsCounts,
    EpsSensitivity,
    TauCurve,
    DiagPropositions,
    ResolutionScaling,
}

impl ExperimentKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.replace('-', "_").as_str() {
            "mse_vs_counts" => Self::MseVsCounts,
            "eps_sensitivity" => Self::EpsSensitivity,
            "tau_curve" => Self::TauCurve,
            "diag_propositions" | "diag_props" => Self::DiagPropositions,
            "resolution_scaling" => Self::ResolutionScaling,
            other => return Err(Error::Config(format!("unknown experiment '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PhantomSource {
    SheppLogan,
    File(PathBuf),
}

/// Log-spaced multipliers `10^lo ..= 10^hi` of a reference tau.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl TauGrid {
    pub fn multipliers(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![10f64.powf(self.lo)];
        }
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| 10f64.powf(self.lo + step * i as f64))
            .collect()
    }
}

impl Default for TauGrid {
    fn default() -> Self {
        Self {
            lo: -1.0,
            hi: 2.0,
            points: 13,
        }
    }
}

/// Flat experiment configuration; every field has a desk-scale default.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub phantom: PhantomSource,
    pub n_side: usize,
    pub num_angles: usize,
    /// Detector bins; `None` covers the image diagonal.
    pub num_bins: Option<usize>,
    pub count_levels: Vec<f64>,
    pub methods: Vec<ObjectiveSpec>,
    /// Floor used wherever no selection over `eps_grid` takes place.
    pub epsilon: f64,
    pub eps_grid: Vec<f64>,
    pub tau_grid: TauGrid,
    pub tuning_seeds: Vec<u64>,
    pub test_seeds: Vec<u64>,
    /// Mixed into every noise seed; the CLI's `--seed`.
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub solver: SolverSettings,
    pub series: SeriesTolerance,
    pub diag_gammas: Vec<f64>,
    pub diag_mus: Vec<f64>,
    pub diag_eps: Vec<f64>,
    pub decay_pairs: Vec<(f64, f64)>,
    pub num_modes: usize,
    pub dose_min: f64,
    pub dose_max: f64,
    pub dose_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let epsilon = 0.5;
        Self {
            experiment: ExperimentKind::MseVsCounts,
            phantom: PhantomSource::SheppLogan,
            n_side: 64,
            num_angles: 60,
            num_bins: None,
            count_levels: vec![0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 1000.0],
            methods: ALL_METHODS
                .iter()
                .map(|m| ObjectiveSpec::from_name(m, epsilon).expect("known method"))
                .collect(),
            epsilon,
            eps_grid: vec![0.1, 0.5, 1.0],
            tau_grid: TauGrid::default(),
            tuning_seeds: (0..4).collect(),
            test_seeds: (100..108).collect(),
            base_seed: 0,
            output_dir: PathBuf::from("results"),
            solver: SolverSettings::default(),
            series: SeriesTolerance::default(),
            diag_gammas: vec![0.1, 1.0, 10.0],
            diag_mus: vec![1e-2, 1e-3, 1e-4],
            diag_eps: vec![0.1, 1.0, 10.0],
            decay_pairs: vec![(1.0, 1.0), (1.0, 3.0), (1.5, 0.5)],
            num_modes: 2048,
            dose_min: 1e2,
            dose_max: 1e6,
            dose_points: 9,
        }
    }
}

pub const ALL_METHODS: [&str; 6] = [
    "poisson-map",
    "hg",
    "pwls-oracle",
    "pwls-plugin",
    "pwls-plugin-fbp",
    "homoscedastic",
];

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: '{v}' is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: '{v}' is not a nonnegative integer")))
}

fn items(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    items(v).map(|x| parse_f64(key, x)).collect()
}

/// Comma list of seeds; `a..b` expands to the half-open range.
fn parse_seeds(key: &str, v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for item in items(v) {
        let bad = || Error::Config(format!("{key}: bad seed '{item}'"));
        if let Some((a, b)) = item.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            out.extend(a..b);
        } else {
            out.push(item.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut methods = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            // Methods depend on the floor, so they are applied last.
            if key == "methods" {
                methods = Some(value.to_string());
            } else {
                cfg.set(key, value)?;
            }
        }
        if let Some(m) = methods {
            cfg.set("methods", &m)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = ExperimentKind::parse(value)?,
            "phantom" => {
                self.phantom = match value {
                    "shepp_logan" | "shepp-logan" => PhantomSource::SheppLogan,
                    path => PhantomSource::File(PathBuf::from(path)),
                }
            }
            "n_side" => self.n_side = parse_usize(key, value)?,
            "num_angles" => self.num_angles = parse_usize(key, value)?,
            "num_bins" => {
                self.num_bins = match value {
                    "auto" => None,
                    v => Some(parse_usize(key, v)?),
                }
            }
            "count_levels" => self.count_levels = parse_list(key, value)?,
            "methods" => {
                self.methods = items(value)
                    .map(|m| ObjectiveSpec::from_name(m, self.epsilon))
                    .collect::<Result<_>>()?
            }
            "epsilon" => {
                self.epsilon = parse_f64(key, value)?;
                self.methods = self.methods.iter().map(|m| m.with_epsilon(self.epsilon)).collect();
            }
            "eps_grid" => self.eps_grid = parse_list(key, value)?,
            "tau_lo" => self.tau_grid.lo = parse_f64(key, value)?,
            "tau_hi" => self.tau_grid.hi = parse_f64(key, value)?,
            "tau_points" => self.tau_grid.points = parse_usize(key, value)?,
            "tuning_seeds" => self.tuning_seeds = parse_seeds(key, value)?,
            "test_seeds" => self.test_seeds = parse_seeds(key, value)?,
            "seed" | "base_seed" => {
                self.base_seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: bad seed '{value}'")))?
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "em_max_iters" => self.solver.em.max_iters = parse_usize(key, value)?,
            "gradient_max_iters" => self.solver.gradient.max_iters = parse_usize(key, value)?,
            "obj_rel_tol" => {
                let v = parse_f64(key, value)?;
                self.solver.em.obj_rel_tol = v;
                self.solver.gradient.obj_rel_tol = v;
            }
            "step_tol" => {
                let v = parse_f64(key, value)?;
                self.solver.em.step_tol = v;
                self.solver.gradient.step_tol = v;
            }
            "em_floor" => {
                let v = parse_f64(key, value)?;
                self.solver.em.em_floor = v;
                self.solver.gradient.em_floor = v;
            }
            "series_tail_bound" => self.series.tail_bound = parse_f64(key, value)?,
            "series_max_terms" => self.series.max_terms = parse_usize(key, value)?,
            "diag_gammas" => self.diag_gammas = parse_list(key, value)?,
            "diag_mus" => self.diag_mus = parse_list(key, value)?,
            "diag_eps" => self.diag_eps = parse_list(key, value)?,
            "decay_pairs" => {
                self.decay_pairs = items(value)
                    .map(|p| {
                        let (a, b) = p.split_once(':').ok_or_else(|| {
                            Error::Config(format!("{key}: expected alpha:beta, got '{p}'"))
                        })?;
                        Ok((parse_f64(key, a)?, parse_f64(key, b)?))
                    })
                    .collect::<Result<_>>()?
            }
            "num_modes" => self.num_modes = parse_usize(key, value)?,
            "dose_min" => self.dose_min = parse_f64(key, value)?,
            "dose_max" => self.dose_max = parse_f64(key, value)?,
            "dose_points" => self.dose_points = parse_usize(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.count_levels.is_empty() || self.count_levels.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("count_levels must be a nonempty list of positive numbers".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.n_side < 16 || self.num_angles == 0 || self.num_bins == Some(0) {
            return bad(format!(
                "geometry needs n_side >= 16 and positive angle/bin counts (n_side = {})",
                self.n_side
            ));
        }
        if !(self.epsilon > 0.0) || self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(*e > 0.0)) {
            return bad("epsilon and every eps_grid value must be > 0".into());
        }
        let g = self.tau_grid;
        if g.points == 0 || !(g.lo <= g.hi) || !g.lo.is_finite() || !g.hi.is_finite() {
            return bad(format!("bad tau grid {g:?}"));
        }
        if self.tuning_seeds.is_empty() || self.test_seeds.is_empty() {
            return bad("tuning_seeds and test_seeds must be nonempty".into());
        }
        let tuning: BTreeSet<_> = self.tuning_seeds.iter().collect();
        if let Some(s) = self.test_seeds.iter().find(|s| tuning.contains(s)) {
            return bad(format!("seed {s} is in both the tuning and the test set"));
        }
        for (name, c) in [("em", &self.solver.em), ("gradient", &self.solver.gradient)] {
            SolveConfig::validate(c).map_err(|e| Error::Config(format!("{name} solver: {e}")))?;
        }
        SeriesTolerance::new(self.series.tail_bound, self.series.max_terms)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.dose_min > 0.0 && self.dose_min <= self.dose_max) || self.dose_points < 2 {
            return bad("dose range needs 0 < dose_min <= dose_max and >= 2 points".into());
        }
        if self.num_modes == 0 {
            return bad("num_modes must be positive".into());
        }
        Ok(())
    }
}

/// Noise seed for one `(seed, c)` cell; independent of where `c` sits in
/// the configured list.
pub fn noise_seed(base: u64, seed: u64, c: f64) -> u64 {
    let mut z = base ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ c.to_bits().rotate_left(17);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
