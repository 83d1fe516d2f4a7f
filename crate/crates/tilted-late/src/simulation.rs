//! Synthetic data-generating process with a latent treatment threshold, the
//! closed-form oracle nuisances it admits, and a replication harness that
//! reports integrated bias, root-n-scaled RMSE, and CI coverage.
//!
//! The design: covariates X and the latent outcome level Y0 are jointly
//! standard normal in five dimensions, the instrument is Gaussian around a
//! linear index of X, treatment is taken exactly when the instrument clears
//! the latent level, and the treatment effect is a known constant. Because
//! the effect is homogeneous, the tilted local effect equals that constant
//! at every tilt.

use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, FoldAssignment, Observation};
use crate::error::{Error, Result};
use crate::estimators::{estimate_if, estimate_plugin, LateEstimate};
use crate::exec;
use crate::nuisance::{fit_nuisances, LearnerSpec, NuisanceFit};
use crate::rng::{derive_seed, stream_rng};
use crate::tilt::EPSILON_ZERO;

const TAG_DRAW: u64 = 0xD6A0;
const TAG_CELL: u64 = 0xCE11;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    /// Coefficients of the instrument's linear index.
    pub alpha_coef: Vec<f64>,
    /// Constant treatment effect.
    pub psi_true: f64,
    /// Conditional variance of the instrument.
    pub z_variance: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            alpha_coef: vec![1.0, 1.0, -1.0, -1.0],
            psi_true: 2.0,
            z_variance: 2.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidInput("simulation needs n >= 10".into()));
        }
        if !(self.z_variance > 0.0) {
            return Err(Error::InvalidInput("z_variance must be > 0".into()));
        }
        Ok(())
    }

    fn index(&self, x: &[f64]) -> f64 {
        self.alpha_coef.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// A simulated dataset plus the latent outcome levels, kept outside the
/// public [`Dataset`] so estimators cannot read them.
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub data: Dataset,
    pub y0: Vec<f64>,
}

pub fn simulate_dgp(config: &SimConfig) -> SimDraw {
    config.validate().expect("invalid simulation config");
    let d = config.alpha_coef.len();
    let mut rng = stream_rng(config.seed, &[TAG_DRAW]);
    let sd_z = config.z_variance.sqrt();
    let mut rows = Vec::with_capacity(config.n);
    let mut y0s = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y0: f64 = StandardNormal.sample(&mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let z = config.index(&x) + sd_z * eps;
        let a = if z >= y0 { 1.0 } else { 0.0 };
        let y = y0 + config.psi_true * a;
        rows.push(Observation { x, z, a, y });
        y0s.push(y0);
    }
    SimDraw { data: Dataset::new(rows, None).expect("simulated data is valid"), y0: y0s }
}

/// The homogeneous-effect design makes every tilted local effect equal to
/// the constant effect.
pub fn true_tilted_late(config: &SimConfig, delta: f64) -> Result<f64> {
    if delta.abs() < EPSILON_ZERO {
        return Err(Error::DegenerateTilt(delta));
    }
    Ok(config.psi_true)
}

/// Closed-form `E[e^{dZ} | X = x]`: the Gaussian moment generating function
/// of the instrument's conditional law.
pub fn oracle_alpha(config: &SimConfig, x: &[f64], delta: f64) -> f64 {
    (delta * config.index(x) + 0.5 * delta * delta * config.z_variance).exp()
}

/// Closed-form `gamma_A`: tilting shifts the instrument's conditional mean
/// by `delta * z_variance`, and treatment uptake against the independent
/// standard-normal latent level integrates to a probit.
pub fn oracle_gamma_a(config: &SimConfig, x: &[f64], delta: f64) -> f64 {
    let mean = config.index(x) + delta * config.z_variance;
    let std_normal = Normal::standard();
    std_normal.cdf(mean / (1.0 + config.z_variance).sqrt())
}

/// Closed-form `gamma_Y`: the latent level is mean-zero and independent of
/// the instrument given X, so only the treatment term survives.
pub fn oracle_gamma_y(config: &SimConfig, x: &[f64], delta: f64) -> f64 {
    config.psi_true * oracle_gamma_a(config, x, delta)
}

/// A [`NuisanceFit`] populated with the closed-form oracle values.
pub fn oracle_fit(draw: &SimDraw, delta: f64, folds: &FoldAssignment) -> NuisanceFit {
    let config = SimConfig { n: draw.data.n(), ..SimConfig::default() };
    oracle_fit_for(&config, draw, delta, folds)
}

/// Oracle fit for a non-default configuration.
pub fn oracle_fit_for(
    config: &SimConfig,
    draw: &SimDraw,
    delta: f64,
    folds: &FoldAssignment,
) -> NuisanceFit {
    let rows = draw.data.rows();
    let alpha = rows.iter().map(|o| oracle_alpha(config, &o.x, delta)).collect();
    let gamma_y = rows.iter().map(|o| oracle_gamma_y(config, &o.x, delta)).collect();
    let gamma_a = rows.iter().map(|o| oracle_gamma_a(config, &o.x, delta)).collect();
    NuisanceFit::from_values(delta, alpha, gamma_y, gamma_a, folds.clone())
}

/// Monte Carlo estimate of the complier mass: the probability that the
/// latent level sits between the observed and tilted instrument values
/// (tilting shifts the instrument by `delta * z_variance`).
pub fn complier_mass_oracle(config: &SimConfig, delta: f64, draws: usize, seed: u64) -> f64 {
    let d = config.alpha_coef.len();
    let mut rng = stream_rng(seed, &[TAG_DRAW, 1]);
    let sd_z = config.z_variance.sqrt();
    let shift = delta * config.z_variance;
    let mut hits = 0usize;
    for _ in 0..draws {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y0: f64 = StandardNormal.sample(&mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let z = config.index(&x) + sd_z * eps;
        let z_tilted = z + shift;
        let complier = if delta > 0.0 {
            z < y0 && y0 <= z_tilted
        } else {
            z_tilted < y0 && y0 <= z
        };
        if complier {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

/// One raw replication record.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub estimator: &'static str,
    pub n: usize,
    pub delta: f64,
    pub rep: usize,
    /// NaN when the cell failed; see `flag`.
    pub psi_hat: f64,
    pub se: f64,
    pub covered: bool,
    pub flag: String,
}

#[derive(Debug, Clone)]
pub struct StudyAggregate {
    pub estimator: &'static str,
    pub n: usize,
    pub integrated_bias: f64,
    pub integrated_rmse: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct CoverageCell {
    pub n: usize,
    pub delta: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub aggregates: Vec<StudyAggregate>,
    pub coverage: Vec<CoverageCell>,
    pub psi_true: f64,
}

impl StudyResult {
    /// Deterministic CSV of the raw table.
    pub fn raw_csv(&self) -> String {
        let mut out = String::from("estimator,n,delta,rep,psi_hat,se,covered,flag\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.estimator, r.n, r.delta, r.rep, r.psi_hat, r.se, r.covered as u8, r.flag
            ));
        }
        out
    }

    pub fn aggregates_json(&self) -> serde_json::Value {
        json!({
            "psi_true": self.psi_true,
            "aggregates": self.aggregates.iter().map(|a| json!({
                "estimator": a.estimator,
                "n": a.n,
                "integrated_bias": a.integrated_bias,
                "integrated_rmse": a.integrated_rmse,
                "excluded": a.excluded,
            })).collect::<Vec<_>>(),
            "coverage": self.coverage.iter().map(|c| json!({
                "n": c.n,
                "delta": c.delta,
                "coverage": c.coverage,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Integrated bias `(1/I) sum_i |mean_j psi_hat_j(d_i) - psi(d_i)|` and
/// root-n-scaled RMSE `(sqrt(n)/I) sum_i sqrt(mean_j (psi_hat_j - psi)^2)`,
/// computed over successful cells only.
pub fn compute_aggregates(rows: &[StudyRow], psi_true: f64) -> Vec<StudyAggregate> {
    let mut keys: Vec<(&'static str, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.estimator, r.n)) {
            keys.push((r.estimator, r.n));
        }
    }
    keys.iter()
        .map(|&(estimator, n)| {
            let mut deltas: Vec<f64> = Vec::new();
            for r in rows {
                if r.estimator == estimator && r.n == n && !deltas.contains(&r.delta) {
                    deltas.push(r.delta);
                }
            }
            let mut bias_sum = 0.0;
            let mut rmse_sum = 0.0;
            let mut excluded = 0usize;
            for &delta in &deltas {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| {
                        let ok = r.flag.is_empty();
                        r.estimator == estimator && r.n == n && r.delta == delta && ok
                    })
                    .map(|r| r.psi_hat)
                    .collect();
                excluded += rows
                    .iter()
                    .filter(|r| {
                        r.estimator == estimator
                            && r.n == n
                            && r.delta == delta
                            && !r.flag.is_empty()
                    })
                    .count();
                if vals.is_empty() {
                    continue;
                }
                let j = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / j;
                bias_sum += (mean - psi_true).abs();
                let mse = vals.iter().map(|v| (v - psi_true).powi(2)).sum::<f64>() / j;
                rmse_sum += mse.sqrt();
            }
            let i = deltas.len() as f64;
            StudyAggregate {
                estimator,
                n,
                integrated_bias: bias_sum / i,
                integrated_rmse: (n as f64).sqrt() * rmse_sum / i,
                excluded,
            }
        })
        .collect()
}

fn coverage_cells(rows: &[StudyRow]) -> Vec<CoverageCell> {
    let mut keys: Vec<(usize, f64)> = Vec::new();
    for r in rows {
        if r.estimator == "influence_function" && !keys.contains(&(r.n, r.delta)) {
            keys.push((r.n, r.delta));
        }
    }
    keys.iter()
        .map(|&(n, delta)| {
            let cells: Vec<&StudyRow> = rows
                .iter()
                .filter(|r| {
                    r.estimator == "influence_function"
                        && r.n == n
                        && r.delta == delta
                        && r.flag.is_empty()
                })
                .collect();
            let covered = cells.iter().filter(|r| r.covered).count();
            CoverageCell { n, delta, coverage: covered as f64 / cells.len().max(1) as f64 }
        })
        .collect()
}

fn covered(est: &LateEstimate, truth: f64) -> bool {
    est.ci_lo <= truth && truth <= est.ci_hi
}

fn run_cell(
    base: &SimConfig,
    n: usize,
    deltas: &[f64],
    rep: usize,
    learner: &LearnerSpec,
    k: usize,
    cell_seed: u64,
    with_plugin: bool,
) -> Vec<StudyRow> {
    let config = SimConfig { n, seed: cell_seed, ..base.clone() };
    let draw = simulate_dgp(&config);
    let folds = match crate::data::make_folds(n, k, derive_seed(cell_seed, &[1])) {
        Ok(f) => f,
        Err(e) => {
            return deltas
                .iter()
                .map(|&delta| StudyRow {
                    estimator: "influence_function",
                    n,
                    delta,
                    rep,
                    psi_hat: f64::NAN,
                    se: f64::NAN,
                    covered: false,
                    flag: e.code().to_string(),
                })
                .collect()
        }
    };
    let mut learner = learner.clone();
    learner.seed = derive_seed(cell_seed, &[2]);
    let mut rows = Vec::new();
    for &delta in deltas {
        let fit = match fit_nuisances(&draw.data, delta, &learner, &folds) {
            Ok(f) => f,
            Err(e) => {
                for estimator in ["plugin", "influence_function"] {
                    if estimator == "plugin" && !with_plugin {
                        continue;
                    }
                    rows.push(StudyRow {
                        estimator: if estimator == "plugin" {
                            "plugin"
                        } else {
                            "influence_function"
                        },
                        n,
                        delta,
                        rep,
                        psi_hat: f64::NAN,
                        se: f64::NAN,
                        covered: false,
                        flag: e.code().to_string(),
                    });
                }
                continue;
            }
        };
        let truth = base.psi_true;
        if with_plugin {
            rows.push(match estimate_plugin(&draw.data, &fit) {
                Ok(est) => StudyRow {
                    estimator: "plugin",
                    n,
                    delta,
                    rep,
                    psi_hat: est.psi_hat,
                    se: est.std_error,
                    covered: covered(&est, truth),
                    flag: String::new(),
                },
                Err(e) => StudyRow {
                    estimator: "plugin",
                    n,
                    delta,
                    rep,
                    psi_hat: f64::NAN,
                    se: f64::NAN,
                    covered: false,
                    flag: e.code().to_string(),
                },
            });
        }
        rows.push(match estimate_if(&draw.data, &fit) {
            Ok(est) => StudyRow {
                estimator: "influence_function",
                n,
                delta,
                rep,
                psi_hat: est.psi_hat,
                se: est.std_error,
                covered: covered(&est, truth),
                flag: String::new(),
            },
            Err(e) => StudyRow {
                estimator: "influence_function",
                n,
                delta,
                rep,
                psi_hat: f64::NAN,
                se: f64::NAN,
                covered: false,
                flag: e.code().to_string(),
            },
        });
    }
    rows
}

fn run_study(
    ns: &[usize],
    deltas: &[f64],
    reps: usize,
    learner: &LearnerSpec,
    seed: u64,
    k: usize,
    with_plugin: bool,
) -> Result<StudyResult> {
    if deltas.is_empty() || ns.is_empty() || reps == 0 {
        return Err(Error::EmptyGrid);
    }
    for &d in deltas {
        if d.abs() < EPSILON_ZERO {
            return Err(Error::DegenerateTilt(d));
        }
    }
    let base = SimConfig::default();
    let cells: Vec<(usize, usize)> = ns
        .iter()
        .flat_map(|&n| (0..reps).map(move |rep| (n, rep)))
        .collect();
    let results: Vec<Vec<StudyRow>> = exec::map_slice(&cells, |&(n, rep)| {
        let cell_seed = derive_seed(seed, &[TAG_CELL, n as u64, rep as u64]);
        run_cell(&base, n, deltas, rep, learner, k, cell_seed, with_plugin)
    });
    let rows: Vec<StudyRow> = results.into_iter().flatten().collect();
    let aggregates = compute_aggregates(&rows, base.psi_true);
    let coverage = coverage_cells(&rows);
    Ok(StudyResult { rows, aggregates, coverage, psi_true: base.psi_true })
}

/// Bias/RMSE study over several sample sizes, running both estimators on
/// every cell.
pub fn run_study1(
    ns: &[usize],
    deltas: &[f64],
    reps: usize,
    learner: &LearnerSpec,
    seed: u64,
    k: usize,
) -> Result<StudyResult> {
    run_study(ns, deltas, reps, learner, seed, k, true)
}

/// Coverage study at a single sample size, IF estimator only.
pub fn run_study2(
    n: usize,
    deltas: &[f64],
    reps: usize,
    learner: &LearnerSpec,
    seed: u64,
    k: usize,
) -> Result<StudyResult> {
    run_study(&[n], deltas, reps, learner, seed, k, false)
}
