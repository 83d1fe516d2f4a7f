//! Covariate profiles of the principal strata induced by tilting: compliers
//! (treated under the tilted instrument only), always-takers, and
//! never-takers. Profiles are weighted means of a covariate indicator (or a
//! kernel for continuous covariates), with influence-function confidence
//! intervals; marginal strata masses and bounds on the defier proportion
//! round out the module.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{compute_if_values, Z_975};
use crate::nuisance::{oof_regression, LearnerSpec, NuisanceFit};

const WEAK_DENOMINATOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Complier,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKernel {
    Gaussian,
    Epanechnikov,
}

/// A profiling query: which covariate, at which value, how to localize.
#[derive(Debug, Clone)]
pub struct StrataQuery {
    /// Covariate index into `Dataset` rows.
    pub column: usize,
    /// Query value `v0`.
    pub value: f64,
    pub kind: ProfileKind,
    /// Bandwidth for continuous queries; ignored for discrete ones.
    pub bandwidth: f64,
    pub kernel: ProfileKernel,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumEstimate {
    pub stratum: Stratum,
    pub value: f64,
    pub delta: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Marginal principal-strata masses; the three always sum to one exactly.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalStrata {
    pub p_complier: f64,
    pub p_always: f64,
    pub p_never: f64,
    /// Set when the estimated complier mass is negative (weak instrument).
    pub warning: Option<String>,
}

fn localizer(query: &StrataQuery, v: f64) -> f64 {
    match query.kind {
        ProfileKind::Discrete => {
            if v == query.value {
                1.0
            } else {
                0.0
            }
        }
        ProfileKind::Continuous => {
            let h = query.bandwidth;
            let u = (v - query.value) / h;
            match query.kernel {
                ProfileKernel::Gaussian => {
                    (-0.5 * u * u).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
                }
                ProfileKernel::Epanechnikov => {
                    if u.abs() <= 1.0 {
                        0.75 * (1.0 - u * u) / h
                    } else {
                        0.0
                    }
                }
            }
        }
    }
}

/// Profile one stratum at one covariate value.
///
/// The point estimate is the stratum-weighted mean of the localizer divided
/// by the mean stratum weight; for upward tilts the weights are
/// `gamma_A - A` (compliers), `A` (always-takers), `1 - gamma_A`
/// (never-takers). Downward tilts keep the complier form but use `gamma_A`
/// for always-takers and `1 - lambda(X)` for never-takers, with `lambda`
/// an out-of-fold regression of treatment on covariates. Complier intervals
/// use the influence-function contrast with the treatment block localized.
pub fn profile_stratum(
    data: &Dataset,
    fit: &NuisanceFit,
    query: &StrataQuery,
    stratum: Stratum,
    learner: &LearnerSpec,
) -> Result<StratumEstimate> {
    if query.delta != fit.delta {
        return Err(Error::InvalidInput("query tilt does not match the fit".into()));
    }
    if query.kind == ProfileKind::Continuous && !(query.bandwidth > 0.0) {
        return Err(Error::InvalidInput("continuous profile needs bandwidth > 0".into()));
    }
    if query.column >= data.dim() {
        return Err(Error::InvalidInput("profile column out of range".into()));
    }
    let n = data.n();
    let g: Vec<f64> = data
        .rows()
        .iter()
        .map(|o| localizer(query, o.x[query.column]))
        .collect();
    let down = fit.delta < 0.0;
    let weights: Vec<f64> = match stratum {
        Stratum::Complier => fit
            .gamma_a
            .iter()
            .zip(data.rows())
            .map(|(ga, o)| ga - o.a)
            .collect(),
        Stratum::Always => {
            if down {
                fit.gamma_a.clone()
            } else {
                data.rows().iter().map(|o| o.a).collect()
            }
        }
        Stratum::Never => {
            if down {
                let a: Vec<f64> = data.rows().iter().map(|o| o.a).collect();
                let lambda = oof_regression(data, &a, learner, &fit.folds)?;
                lambda.iter().map(|l| 1.0 - l).collect()
            } else {
                fit.gamma_a.iter().map(|ga| 1.0 - ga).collect()
            }
        }
    };
    let mean_w = weights.iter().sum::<f64>() / n as f64;
    match stratum {
        Stratum::Complier => {
            if mean_w.abs() < WEAK_DENOMINATOR {
                return Err(Error::WeakInstrument { denominator: mean_w });
            }
        }
        Stratum::Always | Stratum::Never => {
            if mean_w < 0.0 {
                return Err(Error::EmptyStratum(format!("{stratum:?}")));
            }
            if mean_w == 0.0 {
                // no mass anywhere in the stratum: report an exact zero
                return Ok(StratumEstimate {
                    stratum,
                    value: query.value,
                    delta: query.delta,
                    estimate: 0.0,
                    std_error: 0.0,
                    ci_lo: 0.0,
                    ci_hi: 0.0,
                });
            }
        }
    }
    let weighted: f64 = weights.iter().zip(&g).map(|(w, gi)| w * gi).sum::<f64>() / n as f64;
    let estimate = weighted / mean_w;

    // influence-function rows for the ratio of means; for compliers the
    // treatment IF contrast replaces the plain weight
    let phi: Vec<f64> = match stratum {
        Stratum::Complier => {
            let values = compute_if_values(data, fit, 0.0)?;
            values
                .theta_a
                .iter()
                .zip(&g)
                .map(|(ta, gi)| (ta * gi - estimate * ta) / mean_w)
                .collect()
        }
        _ => weights
            .iter()
            .zip(&g)
            .map(|(w, gi)| (w * gi - estimate * w) / mean_w)
            .collect(),
    };
    let mean_phi = phi.iter().sum::<f64>() / n as f64;
    let var = phi.iter().map(|p| (p - mean_phi).powi(2)).sum::<f64>() / n as f64;
    let std_error = (var / n as f64).sqrt();
    Ok(StratumEstimate {
        stratum,
        value: query.value,
        delta: query.delta,
        estimate,
        std_error,
        ci_lo: estimate - Z_975 * std_error,
        ci_hi: estimate + Z_975 * std_error,
    })
}

/// Marginal strata masses. For upward tilts these are the means of
/// `gamma_A - A`, `A`, and `1 - gamma_A`; for downward tilts the complier
/// mass flips sign and the treated/untreated roles swap. Either way the
/// three terms telescope to one row-wise, so the sum is exactly one.
pub fn marginal_strata(data: &Dataset, fit: &NuisanceFit) -> MarginalStrata {
    let n = data.n() as f64;
    let mean_a = data.rows().iter().map(|o| o.a).sum::<f64>() / n;
    let mean_ga = fit.gamma_a.iter().sum::<f64>() / n;
    let (p_complier, p_always, p_never) = if fit.delta >= 0.0 {
        (mean_ga - mean_a, mean_a, 1.0 - mean_ga)
    } else {
        (mean_a - mean_ga, mean_ga, 1.0 - mean_a)
    };
    let warning = if p_complier < 0.0 {
        Some(format!("negative complier mass {p_complier:.6}; instrument may be weak"))
    } else {
        None
    };
    MarginalStrata { p_complier, p_always, p_never, warning }
}

/// Sharp bounds on the strata proportions given the treated shares `c1`
/// (under the observed instrument but not the tilted one) and `c2` (under
/// the tilted instrument but not the observed one), parameterized by the
/// always-taker mass `t`.
#[derive(Debug, Clone, Serialize)]
pub struct DefierBounds {
    pub t_lo: f64,
    pub t_hi: f64,
    pub pi_defier: (f64, f64),
    pub pi_complier: (f64, f64),
    pub pi_never: (f64, f64),
}

pub fn defier_bounds(c1: f64, c2: f64) -> Result<DefierBounds> {
    if !(0.0..=1.0).contains(&c1) || !(0.0..=1.0).contains(&c2) {
        return Err(Error::InvalidInput("strata shares must lie in [0, 1]".into()));
    }
    let t_lo = (c1 + c2 - 1.0).max(0.0);
    let t_hi = c1.min(c2);
    Ok(DefierBounds {
        t_lo,
        t_hi,
        // pi_de = c1 - t and pi_co = c2 - t decrease in t
        pi_defier: (c1 - t_hi, c1 - t_lo),
        pi_complier: (c2 - t_hi, c2 - t_lo),
        // pi_nt = 1 - c1 - c2 + t increases in t
        pi_never: (1.0 - c1 - c2 + t_lo, 1.0 - c1 - c2 + t_hi),
    })
}
