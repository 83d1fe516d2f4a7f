//! Cross-fitted estimation of the three nuisance regressions behind the
//! tilted LATE: `alpha(x) = E[e^{dZ} | X]`, and the ratios
//! `gamma_Y(x) = E[Y e^{dZ} | X] / alpha(x)`, `gamma_A(x) = E[A e^{dZ} | X] / alpha(x)`.
//!
//! Three learners are built in: a ridge linear model, Nadaraya-Watson kernel
//! smoothing, and a random forest. The numerator regressions always target
//! the products `Y e^{dZ}` and `A e^{dZ}` directly; the linear learner fits
//! the positive `alpha` target on the log scale through a Gaussian moment
//! generating function, since a linear-in-covariates fit cannot represent an
//! exponential conditional mean.
//!
//! Every prediction at row `i` comes from a model trained on folds other
//! than `fold_of(i)`.

mod forest;
mod kernel;
mod linear;

pub use forest::{fit_forest, ForestFit, ForestParams};
pub use kernel::{silverman_bandwidths, KernelFit};
pub use linear::{fit_log_mgf, fit_ridge, LogMgfFit, RidgeFit};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::derive_seed;
use crate::tilt::TiltSpec;

/// Floor applied to `alpha` predictions before any division.
pub const ALPHA_FLOOR: f64 = 1e-12;
/// `gamma_A` predictions are clipped into `[CLIP, 1 - CLIP]`.
pub const GAMMA_A_CLIP: f64 = 1e-6;
/// Guard on `|delta * Z|`; beyond this the tilt ratio overflows silently.
pub const TILT_OVERFLOW_GUARD: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Linear {
        ridge: f64,
    },
    Kernel {
        /// `None` selects Silverman's rule per covariate.
        bandwidth: Option<f64>,
    },
    Forest {
        trees: usize,
        min_leaf: usize,
        max_depth: usize,
        feature_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    #[serde(flatten)]
    pub kind: LearnerKind,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn linear(ridge: f64) -> Self {
        LearnerSpec { kind: LearnerKind::Linear { ridge }, seed: 0 }
    }

    pub fn kernel(bandwidth: Option<f64>) -> Self {
        LearnerSpec { kind: LearnerKind::Kernel { bandwidth }, seed: 0 }
    }

    pub fn forest(seed: u64) -> Self {
        let p = ForestParams::default();
        LearnerSpec {
            kind: LearnerKind::Forest {
                trees: p.trees,
                min_leaf: p.min_leaf,
                max_depth: p.max_depth,
                feature_fraction: p.feature_fraction,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            LearnerKind::Linear { ridge } => {
                if !(*ridge >= 0.0) {
                    return Err(Error::InvalidInput("ridge penalty must be >= 0".into()));
                }
            }
            LearnerKind::Kernel { bandwidth } => {
                if let Some(h) = bandwidth {
                    if !(*h > 0.0) {
                        return Err(Error::InvalidInput("bandwidth must be > 0".into()));
                    }
                }
            }
            LearnerKind::Forest { trees, min_leaf, max_depth, feature_fraction } => {
                if *trees < 1 || *min_leaf < 1 || *max_depth < 1 {
                    return Err(Error::InvalidInput(
                        "forest needs trees >= 1, min_leaf >= 1, max_depth >= 1".into(),
                    ));
                }
                if !(*feature_fraction > 0.0 && *feature_fraction <= 1.0) {
                    return Err(Error::InvalidInput("feature_fraction must be in (0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    fn forest_params(&self) -> Option<ForestParams> {
        match self.kind {
            LearnerKind::Forest { trees, min_leaf, max_depth, feature_fraction } => {
                Some(ForestParams { trees, min_leaf, max_depth, feature_fraction })
            }
            _ => None,
        }
    }
}

/// Per-fold training diagnostics: one in-sample loss estimate per component
/// regression (`alpha`, `Y`-numerator, `A`-numerator).
#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    pub fold_losses: Vec<[f64; 3]>,
    pub ridge_bumped: bool,
}

/// Out-of-fold nuisance predictions for every row.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub delta: f64,
    /// `alpha` predictions, floored at [`ALPHA_FLOOR`].
    pub alpha: Vec<f64>,
    pub gamma_y: Vec<f64>,
    /// Clipped into `[GAMMA_A_CLIP, 1 - GAMMA_A_CLIP]`.
    pub gamma_a: Vec<f64>,
    /// Raw numerator predictions (targets `Y e^{dZ}` and `A e^{dZ}`).
    pub raw_y: Vec<f64>,
    pub raw_a: Vec<f64>,
    pub folds: FoldAssignment,
    pub diagnostics: FitDiagnostics,
}

impl NuisanceFit {
    /// Assemble a fit from externally supplied nuisance values (closed-form
    /// oracles, corrupted variants for robustness checks, test doubles).
    /// Values are taken verbatim apart from the `alpha` floor; clipping of
    /// `gamma_a` is a property of fitted learners only.
    pub fn from_values(
        delta: f64,
        alpha: Vec<f64>,
        gamma_y: Vec<f64>,
        gamma_a: Vec<f64>,
        folds: FoldAssignment,
    ) -> Self {
        let alpha: Vec<f64> = alpha.into_iter().map(|a| a.max(ALPHA_FLOOR)).collect();
        let raw_y = gamma_y.iter().zip(&alpha).map(|(g, a)| g * a).collect();
        let raw_a = gamma_a.iter().zip(&alpha).map(|(g, a)| g * a).collect();
        NuisanceFit {
            delta,
            alpha,
            gamma_y,
            gamma_a,
            raw_y,
            raw_a,
            folds,
            diagnostics: FitDiagnostics { fold_losses: Vec::new(), ridge_bumped: false },
        }
    }

    /// Multiply the `alpha` block by a constant while keeping the gamma pair
    /// fixed (used by double-robustness checks).
    pub fn with_alpha_scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.alpha {
            *a = (*a * factor).max(ALPHA_FLOOR);
        }
        out.raw_y = out.gamma_y.iter().zip(&out.alpha).map(|(g, a)| g * a).collect();
        out.raw_a = out.gamma_a.iter().zip(&out.alpha).map(|(g, a)| g * a).collect();
        out
    }

    /// Shift both gamma functions by a constant while keeping `alpha` fixed.
    pub fn with_gamma_shift(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.gamma_y {
            *g += shift;
        }
        for g in &mut out.gamma_a {
            *g += shift;
        }
        out.raw_y = out.gamma_y.iter().zip(&out.alpha).map(|(g, a)| g * a).collect();
        out.raw_a = out.gamma_a.iter().zip(&out.alpha).map(|(g, a)| g * a).collect();
        out
    }

    /// IF weights `e^{delta z_i} / alpha_i` for every row.
    pub fn weights(&self, data: &Dataset) -> Vec<f64> {
        data.rows()
            .iter()
            .zip(&self.alpha)
            .map(|(o, &a)| (self.delta * o.z).exp() / a)
            .collect()
    }
}

fn check_overflow(delta: f64, data: &Dataset) -> Result<()> {
    let max_abs_z = data.rows().iter().fold(0.0f64, |m, o| m.max(o.z.abs()));
    let reach = delta.abs() * max_abs_z;
    if reach > TILT_OVERFLOW_GUARD {
        return Err(Error::TiltOverflow(reach));
    }
    Ok(())
}

enum FoldModel {
    Linear { alpha: LogMgfFit, raw_y: RidgeFit, raw_a: RidgeFit },
    Kernel(KernelFit),
    Forest { alpha: ForestFit, raw_y: ForestFit, raw_a: ForestFit },
}

impl FoldModel {
    fn predict(&self, x: &[f64]) -> [f64; 3] {
        match self {
            FoldModel::Linear { alpha, raw_y, raw_a } => {
                [alpha.predict(x), raw_y.predict(x), raw_a.predict(x)]
            }
            FoldModel::Kernel(fit) => {
                let p = fit.predict_all(x);
                [p[0], p[1], p[2]]
            }
            FoldModel::Forest { alpha, raw_y, raw_a } => {
                [alpha.predict(x), raw_y.predict(x), raw_a.predict(x)]
            }
        }
    }
}

struct FoldOutput {
    rows: Vec<usize>,
    preds: Vec<[f64; 3]>,
    losses: [f64; 3],
    ridge_bumped: bool,
}

fn fit_fold(
    data: &Dataset,
    delta: f64,
    spec: &LearnerSpec,
    folds: &FoldAssignment,
    fold: usize,
    exp_z: &[f64],
    target_y: &[f64],
    target_a: &[f64],
) -> Result<FoldOutput> {
    let train = folds.train_rows(fold);
    let test = folds.test_rows(fold);
    let xs: Vec<&[f64]> = train.iter().map(|&i| data.row(i).x.as_slice()).collect();
    let take = |v: &[f64]| -> Vec<f64> { train.iter().map(|&i| v[i]).collect() };
    let (model, ridge_bumped) = match &spec.kind {
        LearnerKind::Linear { ridge } => {
            let z_train: Vec<f64> = train.iter().map(|&i| data.row(i).z).collect();
            let alpha = fit_log_mgf(&xs, &z_train, delta, *ridge)?;
            let raw_y = fit_ridge(&xs, &take(target_y), *ridge)?;
            let raw_a = fit_ridge(&xs, &take(target_a), *ridge)?;
            let bumped =
                alpha.instrument.ridge_bumped || raw_y.ridge_bumped || raw_a.ridge_bumped;
            (FoldModel::Linear { alpha, raw_y, raw_a }, bumped)
        }
        LearnerKind::Kernel { bandwidth } => {
            let x_train: Vec<Vec<f64>> = train.iter().map(|&i| data.row(i).x.clone()).collect();
            let targets = vec![take(exp_z), take(target_y), take(target_a)];
            (FoldModel::Kernel(KernelFit::fit(x_train, targets, *bandwidth)), false)
        }
        LearnerKind::Forest { .. } => {
            let params = spec.forest_params().unwrap();
            let fit = |target: &[f64], tag: u64| {
                fit_forest(&xs, target, &params, derive_seed(spec.seed, &[fold as u64, tag]))
            };
            (
                FoldModel::Forest {
                    alpha: fit(&take(exp_z), 0),
                    raw_y: fit(&take(target_y), 1),
                    raw_a: fit(&take(target_a), 2),
                },
                false,
            )
        }
    };
    let preds: Vec<[f64; 3]> = test.iter().map(|&i| model.predict(&data.row(i).x)).collect();

    // training-loss estimate on a stride subsample of the training rows
    let stride = (train.len() / 512).max(1);
    let mut losses = [0.0f64; 3];
    let mut count = 0usize;
    for &i in train.iter().step_by(stride) {
        let p = model.predict(&data.row(i).x);
        losses[0] += (p[0] - exp_z[i]).powi(2);
        losses[1] += (p[1] - target_y[i]).powi(2);
        losses[2] += (p[2] - target_a[i]).powi(2);
        count += 1;
    }
    for l in &mut losses {
        *l /= count as f64;
    }
    Ok(FoldOutput { rows: test, preds, losses, ridge_bumped })
}

/// Cross-fitted nuisance estimation at tilt `delta`.
pub fn fit_nuisances(
    data: &Dataset,
    delta: f64,
    spec: &LearnerSpec,
    folds: &FoldAssignment,
) -> Result<NuisanceFit> {
    spec.validate()?;
    TiltSpec::new(delta)?;
    check_overflow(delta, data)?;
    if folds.n != data.n() {
        return Err(Error::InvalidInput("fold assignment does not match dataset size".into()));
    }
    let n = data.n();
    let exp_z: Vec<f64> = data.rows().iter().map(|o| (delta * o.z).exp()).collect();
    let target_y: Vec<f64> = data.rows().iter().zip(&exp_z).map(|(o, e)| o.y * e).collect();
    let target_a: Vec<f64> = data.rows().iter().zip(&exp_z).map(|(o, e)| o.a * e).collect();

    let outputs: Vec<Result<FoldOutput>> = exec::map_indexed(folds.k, |fold| {
        fit_fold(data, delta, spec, folds, fold, &exp_z, &target_y, &target_a)
    });

    let mut alpha = vec![0.0f64; n];
    let mut raw_y = vec![0.0f64; n];
    let mut raw_a = vec![0.0f64; n];
    let mut fold_losses = Vec::with_capacity(folds.k);
    let mut ridge_bumped = false;
    for output in outputs {
        let output = output?;
        for (&row, pred) in output.rows.iter().zip(&output.preds) {
            alpha[row] = pred[0].max(ALPHA_FLOOR);
            raw_y[row] = pred[1];
            raw_a[row] = pred[2];
        }
        fold_losses.push(output.losses);
        ridge_bumped |= output.ridge_bumped;
    }
    let gamma_y: Vec<f64> = raw_y.iter().zip(&alpha).map(|(r, a)| r / a).collect();
    let gamma_a: Vec<f64> = raw_a
        .iter()
        .zip(&alpha)
        .map(|(r, a)| (r / a).clamp(GAMMA_A_CLIP, 1.0 - GAMMA_A_CLIP))
        .collect();
    Ok(NuisanceFit {
        delta,
        alpha,
        gamma_y,
        gamma_a,
        raw_y,
        raw_a,
        folds: folds.clone(),
        diagnostics: FitDiagnostics { fold_losses, ridge_bumped },
    })
}

/// Out-of-fold predictions of a single regression `target ~ X` with the given
/// learner (used for the treatment regression needed by downward tilts).
pub fn oof_regression(
    data: &Dataset,
    target: &[f64],
    spec: &LearnerSpec,
    folds: &FoldAssignment,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if target.len() != data.n() || folds.n != data.n() {
        return Err(Error::InvalidInput("target/fold length mismatch".into()));
    }
    let results: Vec<Result<(Vec<usize>, Vec<f64>)>> = exec::map_indexed(folds.k, |fold| {
        let train = folds.train_rows(fold);
        let test = folds.test_rows(fold);
        let xs: Vec<&[f64]> = train.iter().map(|&i| data.row(i).x.as_slice()).collect();
        let y_train: Vec<f64> = train.iter().map(|&i| target[i]).collect();
        let preds: Vec<f64> = match &spec.kind {
            LearnerKind::Linear { ridge } => {
                let fit = fit_ridge(&xs, &y_train, *ridge)?;
                test.iter().map(|&i| fit.predict(&data.row(i).x)).collect()
            }
            LearnerKind::Kernel { bandwidth } => {
                let x_train: Vec<Vec<f64>> = train.iter().map(|&i| data.row(i).x.clone()).collect();
                let fit = KernelFit::fit(x_train, vec![y_train], *bandwidth);
                test.iter().map(|&i| fit.predict(&data.row(i).x, 0)).collect()
            }
            LearnerKind::Forest { .. } => {
                let params = spec.forest_params().unwrap();
                let fit = fit_forest(&xs, &y_train, &params, derive_seed(spec.seed, &[fold as u64, 3]));
                test.iter().map(|&i| fit.predict(&data.row(i).x)).collect()
            }
        };
        Ok((test, preds))
    });
    let mut out = vec![0.0f64; data.n()];
    for r in results {
        let (rows, preds) = r?;
        for (&row, &p) in rows.iter().zip(&preds) {
            out[row] = p;
        }
    }
    Ok(out)
}

/// Sum of out-of-fold mean-squared errors of the three component regressions,
/// each normalized by its target's sample variance.
pub fn cv_score(
    data: &Dataset,
    delta: f64,
    spec: &LearnerSpec,
    folds: &FoldAssignment,
) -> Result<f64> {
    let fit = fit_nuisances(data, delta, spec, folds)?;
    let n = data.n() as f64;
    let exp_z: Vec<f64> = data.rows().iter().map(|o| (delta * o.z).exp()).collect();
    let target_y: Vec<f64> = data.rows().iter().zip(&exp_z).map(|(o, e)| o.y * e).collect();
    let target_a: Vec<f64> = data.rows().iter().zip(&exp_z).map(|(o, e)| o.a * e).collect();
    let normalized_mse = |pred: &[f64], target: &[f64]| -> f64 {
        let mean = target.iter().sum::<f64>() / n;
        let var = target.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let mse = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
        mse / var.max(1e-300)
    };
    Ok(normalized_mse(&fit.alpha, &exp_z)
        + normalized_mse(&fit.raw_y, &target_y)
        + normalized_mse(&fit.raw_a, &target_a))
}

/// Pick the grid element with the smallest [`cv_score`]; ties go to the
/// earlier grid entry.
pub fn select_hyperparams(
    data: &Dataset,
    delta: f64,
    grid: &[LearnerSpec],
    folds: &FoldAssignment,
) -> Result<LearnerSpec> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let scores: Vec<Result<f64>> =
        exec::map_slice(grid, |spec| cv_score(data, delta, spec, folds));
    let mut best: Option<(usize, f64)> = None;
    for (i, score) in scores.into_iter().enumerate() {
        let score = score?;
        if best.map_or(true, |(_, b)| score < b) {
            best = Some((i, score));
        }
    }
    Ok(grid[best.unwrap().0].clone())
}
