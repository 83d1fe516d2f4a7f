//! Point estimation and inference for the tilted LATE psi(delta).
//!
//! Two estimators are provided: a plug-in ratio of regression means and a
//! doubly robust influence-function (IF) estimator. Curves over a grid of
//! tilt values get uniform confidence bands via a Gaussian multiplier
//! bootstrap; a two-tilt contrast psi(delta1, delta2) generalizes the main
//! estimand.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::json;

use crate::data::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::nuisance::{fit_nuisances, oof_regression, LearnerSpec, NuisanceFit};
use crate::rng::stream_rng;
use crate::tilt::EPSILON_ZERO;

/// 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959963984540054;
/// Denominators smaller than this in absolute value are treated as a weak
/// instrument.
pub const WEAK_DENOMINATOR: f64 = 1e-4;
const PLUGIN_BOOTSTRAP_REPS: usize = 200;
/// Seed stream tags for the internal bootstrap loops.
const TAG_MULTIPLIER: u64 = 0xB007;
const TAG_PLUGIN_BOOT: u64 = 0x91C6;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Row-wise influence-function building blocks at a fixed tilt.
#[derive(Debug, Clone)]
pub struct IfValues {
    pub xi_y_delta: Vec<f64>,
    pub xi_y_zero: Vec<f64>,
    pub xi_a_delta: Vec<f64>,
    pub xi_a_zero: Vec<f64>,
    pub theta_y: Vec<f64>,
    pub theta_a: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plugin,
    InfluenceFunction,
}

/// A single tilted-LATE estimate with a pointwise 95% interval.
#[derive(Debug, Clone, Serialize)]
pub struct LateEstimate {
    pub delta: f64,
    /// Second tilt of a two-tilt contrast; `None` for the main estimand.
    pub delta2: Option<f64>,
    pub psi_hat: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub numerator_hat: f64,
    pub denominator_hat: f64,
    pub n: usize,
    pub method: Method,
}

impl LateEstimate {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "delta": self.delta,
            "delta2": self.delta2,
            "psi_hat": self.psi_hat,
            "se": self.std_error,
            "ci": [self.ci_lo, self.ci_hi],
            "numerator": self.numerator_hat,
            "denominator": self.denominator_hat,
            "n": self.n,
            "method": if self.method == Method::Plugin { "plugin" } else { "influence_function" },
        })
    }
}

/// Estimates over an ordered grid of tilts with a uniform 95% band.
#[derive(Debug, Clone)]
pub struct CurveEstimate {
    pub grid: Vec<f64>,
    /// `None` where estimation failed; see `flags` for the reason.
    pub estimates: Vec<Option<LateEstimate>>,
    pub flags: Vec<Vec<String>>,
    /// Uniform band endpoints; NaN at failed grid points.
    pub uniform_lo: Vec<f64>,
    pub uniform_hi: Vec<f64>,
    pub band_level: f64,
    pub bootstrap_reps: usize,
    /// Raw 0.95 quantile of the multiplier sup statistic. The band half-width
    /// uses `max(multiplier_quantile, z_0.975)` so the uniform band never
    /// falls inside the pointwise one at finite bootstrap sizes.
    pub multiplier_quantile: f64,
}

impl CurveEstimate {
    pub fn to_json(&self) -> serde_json::Value {
        let points: Vec<serde_json::Value> = self
            .grid
            .iter()
            .enumerate()
            .map(|(i, &delta)| match &self.estimates[i] {
                Some(est) => {
                    let mut v = est.to_json();
                    v["uniform"] = json!([self.uniform_lo[i], self.uniform_hi[i]]);
                    v["flags"] = json!(self.flags[i]);
                    v
                }
                None => json!({
                    "delta": delta,
                    "flags": self.flags[i],
                }),
            })
            .collect();
        json!({
            "points": points,
            "band_level": self.band_level,
            "bootstrap_reps": self.bootstrap_reps,
            "multiplier_quantile": self.multiplier_quantile,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HomogeneityReport {
    pub feasible: bool,
    /// Admissible constant-effect range `[lo, hi]` when feasible.
    pub lo: f64,
    pub hi: f64,
}

/// Plug-in ratio of out-of-fold regression means, with a nonparametric
/// bootstrap standard error.
pub fn estimate_plugin(data: &Dataset, fit: &NuisanceFit) -> Result<LateEstimate> {
    let n = data.n();
    let num_rows: Vec<f64> =
        fit.gamma_y.iter().zip(data.rows()).map(|(g, o)| g - o.y).collect();
    let den_rows: Vec<f64> =
        fit.gamma_a.iter().zip(data.rows()).map(|(g, o)| g - o.a).collect();
    let numerator = mean(&num_rows);
    let denominator = mean(&den_rows);
    if denominator.abs() < WEAK_DENOMINATOR {
        return Err(Error::WeakInstrument { denominator });
    }
    let psi_hat = numerator / denominator;

    let reps: Vec<(f64, f64)> = exec::map_indexed(PLUGIN_BOOTSTRAP_REPS, |rep| {
        let mut rng = stream_rng(fit.folds.seed, &[TAG_PLUGIN_BOOT, rep as u64]);
        let mut num = 0.0;
        let mut den = 0.0;
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            num += num_rows[i];
            den += den_rows[i];
        }
        (num / n as f64, den / n as f64)
    });
    let mut dens: Vec<f64> = reps.iter().map(|r| r.1).collect();
    dens.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if quantile_sorted(&dens, 0.025) <= 0.0 && quantile_sorted(&dens, 0.975) >= 0.0 {
        return Err(Error::WeakInstrument { denominator });
    }
    let ratios: Vec<f64> = reps.iter().map(|&(nm, dn)| nm / dn).collect();
    let std_error = sd(&ratios);
    Ok(LateEstimate {
        delta: fit.delta,
        delta2: None,
        psi_hat,
        std_error,
        ci_lo: psi_hat - Z_975 * std_error,
        ci_hi: psi_hat + Z_975 * std_error,
        numerator_hat: numerator,
        denominator_hat: denominator,
        n,
        method: Method::Plugin,
    })
}

/// Row-wise IF quantities at the supplied `psi`:
/// `xi(T; d) = T w + gamma_T(X)(1 - w)` with `w = e^{dZ}/alpha(X)`,
/// `theta = xi(T; d) - T`, and
/// `phi = (theta_Y - psi theta_A) / mean(gamma_A - A)`.
pub fn compute_if_values(data: &Dataset, fit: &NuisanceFit, psi: f64) -> Result<IfValues> {
    let weights = fit.weights(data);
    let n = data.n();
    let mut v = IfValues {
        xi_y_delta: Vec::with_capacity(n),
        xi_y_zero: Vec::with_capacity(n),
        xi_a_delta: Vec::with_capacity(n),
        xi_a_zero: Vec::with_capacity(n),
        theta_y: Vec::with_capacity(n),
        theta_a: Vec::with_capacity(n),
        phi: Vec::with_capacity(n),
    };
    let denominator =
        mean(&fit.gamma_a.iter().zip(data.rows()).map(|(g, o)| g - o.a).collect::<Vec<_>>());
    if denominator.abs() < WEAK_DENOMINATOR {
        return Err(Error::WeakInstrument { denominator });
    }
    for (i, o) in data.rows().iter().enumerate() {
        let w = weights[i];
        let xi_y = o.y * w + fit.gamma_y[i] * (1.0 - w);
        let xi_a = o.a * w + fit.gamma_a[i] * (1.0 - w);
        let theta_y = xi_y - o.y;
        let theta_a = xi_a - o.a;
        v.xi_y_delta.push(xi_y);
        v.xi_y_zero.push(o.y);
        v.xi_a_delta.push(xi_a);
        v.xi_a_zero.push(o.a);
        v.theta_y.push(theta_y);
        v.theta_a.push(theta_a);
        v.phi.push((theta_y - psi * theta_a) / denominator);
    }
    Ok(v)
}

/// Influence-function estimator: ratio of mean IF contrasts, with the
/// asymptotic standard error `sd(phi)/sqrt(n)`.
pub fn estimate_if(data: &Dataset, fit: &NuisanceFit) -> Result<LateEstimate> {
    let values = compute_if_values(data, fit, 0.0)?;
    let numerator = mean(&values.theta_y);
    let denominator = mean(&values.theta_a);
    if denominator.abs() < WEAK_DENOMINATOR {
        return Err(Error::WeakInstrument { denominator });
    }
    let psi_hat = numerator / denominator;
    let values = compute_if_values(data, fit, psi_hat)?;
    let n = data.n();
    let std_error = sd(&values.phi) / (n as f64).sqrt();
    Ok(LateEstimate {
        delta: fit.delta,
        delta2: None,
        psi_hat,
        std_error,
        ci_lo: psi_hat - Z_975 * std_error,
        ci_hi: psi_hat + Z_975 * std_error,
        numerator_hat: numerator,
        denominator_hat: denominator,
        n,
        method: Method::InfluenceFunction,
    })
}

/// Fit the IF estimator on every grid tilt (shared folds) and add a uniform
/// 95% band from a Gaussian multiplier bootstrap of the studentized sup
/// statistic. Grid points that fail are flagged and carried as `None` rather
/// than aborting the curve.
pub fn estimate_curve(
    data: &Dataset,
    deltas: &[f64],
    learner: &LearnerSpec,
    k: usize,
    seed: u64,
    bootstrap_reps: usize,
) -> Result<CurveEstimate> {
    if deltas.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if deltas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("grid tilts must be strictly increasing".into()));
    }
    let n = data.n();
    let folds = make_folds(n, k, seed)?;

    struct Point {
        estimate: LateEstimate,
        phi: Vec<f64>,
        sd_phi: f64,
    }
    let fitted: Vec<std::result::Result<Point, Error>> = exec::map_slice(deltas, |&delta| {
        let fit = fit_nuisances(data, delta, learner, &folds)?;
        let estimate = estimate_if(data, &fit)?;
        let values = compute_if_values(data, &fit, estimate.psi_hat)?;
        let sd_phi = sd(&values.phi);
        Ok(Point { estimate, phi: values.phi, sd_phi })
    });

    let mut estimates = Vec::with_capacity(deltas.len());
    let mut flags = vec![Vec::new(); deltas.len()];
    let mut valid: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    for (i, point) in fitted.into_iter().enumerate() {
        match point {
            Ok(p) => {
                valid.push((i, p.phi, p.sd_phi));
                estimates.push(Some(p.estimate));
            }
            Err(e) => {
                flags[i].push(e.code().to_string());
                estimates.push(None);
            }
        }
    }

    // one multiplier vector per replicate, shared across the grid so the sup
    // statistic respects the joint law
    let sqrt_n = (n as f64).sqrt();
    let mut sups: Vec<f64> = exec::map_indexed(bootstrap_reps, |rep| {
        let mut rng = stream_rng(seed, &[TAG_MULTIPLIER, rep as u64]);
        let omega: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut sup = 0.0f64;
        for (_, phi, sd_phi) in &valid {
            if *sd_phi == 0.0 {
                continue;
            }
            let s: f64 = omega.iter().zip(phi).map(|(w, p)| w * p).sum();
            sup = sup.max((s / (sqrt_n * sd_phi)).abs());
        }
        sup
    });
    sups.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let multiplier_quantile =
        if sups.is_empty() { 0.0 } else { quantile_sorted(&sups, 0.95) };
    let critical = multiplier_quantile.max(Z_975);

    let mut uniform_lo = vec![f64::NAN; deltas.len()];
    let mut uniform_hi = vec![f64::NAN; deltas.len()];
    for (i, _, _) in &valid {
        let est = estimates[*i].as_ref().unwrap();
        let half = critical * est.std_error;
        uniform_lo[*i] = est.psi_hat - half;
        uniform_hi[*i] = est.psi_hat + half;
    }
    Ok(CurveEstimate {
        grid: deltas.to_vec(),
        estimates,
        flags,
        uniform_lo,
        uniform_hi,
        band_level: 0.95,
        bootstrap_reps,
        multiplier_quantile,
    })
}

/// A constant effect is compatible with the curve iff a horizontal line fits
/// inside the uniform band at every valid grid point.
pub fn test_homogeneity(curve: &CurveEstimate) -> Result<HomogeneityReport> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut count = 0;
    for i in 0..curve.grid.len() {
        if curve.estimates[i].is_some() {
            lo = lo.max(curve.uniform_lo[i]);
            hi = hi.min(curve.uniform_hi[i]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyGrid);
    }
    Ok(HomogeneityReport { feasible: lo <= hi, lo, hi })
}

/// Two-tilt contrast `psi(delta1, delta2)` with `delta1 > delta2`. A tilt of
/// exactly zero needs no nuisance fit (`xi(T; 0) = T`), so `psi(delta, 0)`
/// reduces to [`estimate_if`]; tilts in `(0, EPSILON_ZERO)` are rejected.
pub fn estimate_two_tilt(
    data: &Dataset,
    delta1: f64,
    delta2: f64,
    learner: &LearnerSpec,
    k: usize,
    seed: u64,
) -> Result<LateEstimate> {
    if delta1 <= delta2 {
        return Err(Error::BadOrder { delta1, delta2 });
    }
    for &d in &[delta1, delta2] {
        if d != 0.0 && d.abs() < EPSILON_ZERO {
            return Err(Error::DegenerateTilt(d));
        }
    }
    let folds = make_folds(data.n(), k, seed)?;
    if delta1 == 0.0 || delta2 == 0.0 {
        // psi(d, 0) = psi(d) and psi(0, d) cancels both signs to the same ratio
        let d = if delta1 == 0.0 { delta2 } else { delta1 };
        let fit = fit_nuisances(data, d, learner, &folds)?;
        let mut est = estimate_if(data, &fit)?;
        est.delta = delta1;
        est.delta2 = Some(delta2);
        return Ok(est);
    }
    let fit1 = fit_nuisances(data, delta1, learner, &folds)?;
    let fit2 = fit_nuisances(data, delta2, learner, &folds)?;
    let n = data.n();
    let w1 = fit1.weights(data);
    let w2 = fit2.weights(data);
    let mut theta_y = Vec::with_capacity(n);
    let mut theta_a = Vec::with_capacity(n);
    for (i, o) in data.rows().iter().enumerate() {
        let xi_y1 = o.y * w1[i] + fit1.gamma_y[i] * (1.0 - w1[i]);
        let xi_y2 = o.y * w2[i] + fit2.gamma_y[i] * (1.0 - w2[i]);
        let xi_a1 = o.a * w1[i] + fit1.gamma_a[i] * (1.0 - w1[i]);
        let xi_a2 = o.a * w2[i] + fit2.gamma_a[i] * (1.0 - w2[i]);
        theta_y.push(xi_y1 - xi_y2);
        theta_a.push(xi_a1 - xi_a2);
    }
    let numerator = mean(&theta_y);
    let denominator = mean(&theta_a);
    if denominator.abs() < WEAK_DENOMINATOR {
        return Err(Error::WeakInstrument { denominator });
    }
    let psi_hat = numerator / denominator;
    let den_plug = mean(
        &fit1
            .gamma_a
            .iter()
            .zip(&fit2.gamma_a)
            .map(|(g1, g2)| g1 - g2)
            .collect::<Vec<_>>(),
    );
    if den_plug.abs() < WEAK_DENOMINATOR {
        return Err(Error::WeakInstrument { denominator: den_plug });
    }
    let phi: Vec<f64> = theta_y
        .iter()
        .zip(&theta_a)
        .map(|(ty, ta)| (ty - psi_hat * ta) / den_plug)
        .collect();
    let std_error = sd(&phi) / (n as f64).sqrt();
    Ok(LateEstimate {
        delta: delta1,
        delta2: Some(delta2),
        psi_hat,
        std_error,
        ci_lo: psi_hat - Z_975 * std_error,
        ci_hi: psi_hat + Z_975 * std_error,
        numerator_hat: numerator,
        denominator_hat: denominator,
        n,
        method: Method::InfluenceFunction,
    })
}

/// Out-of-fold regression of the treatment on covariates, shared with
/// downstream consumers that need `E[A | X]` (downward-tilt profiling).
pub fn treatment_regression(
    data: &Dataset,
    learner: &LearnerSpec,
    fit: &NuisanceFit,
) -> Result<Vec<f64>> {
    let a: Vec<f64> = data.rows().iter().map(|o| o.a).collect();
    oof_regression(data, &a, learner, &fit.folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_folds, Observation};
    use crate::simulation::{oracle_fit, simulate_dgp, SimConfig};
    use approx::assert_abs_diff_eq;

    fn small_data(n: usize, seed: u64) -> Dataset {
        simulate_dgp(&SimConfig { n, seed, ..SimConfig::default() }).data
    }

    #[test]
    fn plugin_constant_offset_ratio() {
        let data = small_data(200, 1);
        let folds = make_folds(200, 4, 0).unwrap();
        let c = 0.25;
        let gamma_y: Vec<f64> = data.rows().iter().map(|o| o.y + 2.0 * c).collect();
        let gamma_a: Vec<f64> = data.rows().iter().map(|o| o.a + c).collect();
        let fit =
            NuisanceFit::from_values(0.5, vec![1.0; 200], gamma_y, gamma_a, folds);
        let est = estimate_plugin(&data, &fit).unwrap();
        assert_abs_diff_eq!(est.psi_hat, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn plugin_discrete_toy_matches_enumeration() {
        // X in {0,1}, Z uniform on {-1,0,1}, A = I(Z >= 0), Y = A; every cell
        // of the joint law appears the same number of times, so empirical
        // means equal population means and the enumerated ratio is exact.
        let delta = 0.5f64;
        let mut rows = Vec::new();
        for &x in &[0.0, 1.0] {
            for &z in &[-1.0, 0.0, 1.0] {
                let a = if z >= 0.0 { 1.0 } else { 0.0 };
                for _ in 0..10 {
                    rows.push(Observation { x: vec![x], z, a, y: a });
                }
            }
        }
        let n = rows.len();
        let data = Dataset::new(rows, None).unwrap();
        let alpha_pop = ((-delta).exp() + 1.0 + delta.exp()) / 3.0;
        let gamma_pop = (1.0 + delta.exp()) / 3.0 / alpha_pop;
        let fit = NuisanceFit::from_values(
            delta,
            vec![alpha_pop; n],
            vec![gamma_pop; n],
            vec![gamma_pop; n],
            make_folds(n, 4, 0).unwrap(),
        );
        let est = estimate_plugin(&data, &fit).unwrap();
        // gamma_Y = gamma_A and Y = A, so the enumerated ratio is exactly 1
        assert_abs_diff_eq!(est.psi_hat, 1.0, epsilon = 1e-12);
        let expected_den = gamma_pop - 2.0 / 3.0;
        assert_abs_diff_eq!(est.denominator_hat, expected_den, epsilon = 1e-12);
    }

    #[test]
    fn if_constant_theta_rows() {
        // theta_y = 2 theta_a row-wise gives psi = 2 and zero variance
        let data = small_data(100, 2);
        let folds = make_folds(100, 4, 0).unwrap();
        let rows: Vec<Observation> = data
            .rows()
            .iter()
            .map(|o| Observation { x: o.x.clone(), z: o.z, a: o.a, y: 2.0 * o.a })
            .collect();
        let data = Dataset::new(rows, None).unwrap();
        let gamma_a = vec![0.5; 100];
        let gamma_y: Vec<f64> = gamma_a.iter().map(|g| 2.0 * g).collect();
        let fit = NuisanceFit::from_values(0.5, vec![1.0; 100], gamma_y, gamma_a, folds);
        let est = estimate_if(&data, &fit).unwrap();
        assert_abs_diff_eq!(est.psi_hat, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.std_error, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn if_estimate_solves_phi_mean_zero() {
        let draw = simulate_dgp(&SimConfig { n: 2000, seed: 3, ..SimConfig::default() });
        let folds = make_folds(2000, 5, 0).unwrap();
        let fit = oracle_fit(&draw, 0.5, &folds);
        let est = estimate_if(&draw.data, &fit).unwrap();
        let values = compute_if_values(&draw.data, &fit, est.psi_hat).unwrap();
        let residual = values.phi.iter().sum::<f64>() / 2000.0;
        assert!(residual.abs() <= 1e-10, "phi residual {residual}");
    }

    #[test]
    fn theta_identities_row_exact() {
        let draw = simulate_dgp(&SimConfig { n: 500, seed: 4, ..SimConfig::default() });
        let folds = make_folds(500, 5, 0).unwrap();
        let fit = oracle_fit(&draw, 0.5, &folds);
        let values = compute_if_values(&draw.data, &fit, 2.0).unwrap();
        for (i, o) in draw.data.rows().iter().enumerate() {
            assert_eq!(values.xi_y_zero[i], o.y);
            assert_eq!(values.xi_a_zero[i], o.a);
            assert_eq!(values.theta_y[i], values.xi_y_delta[i] - o.y);
            assert_eq!(values.theta_a[i], values.xi_a_delta[i] - o.a);
        }
    }

    #[test]
    fn constant_outcome_theta_y_zero() {
        let data = small_data(100, 5);
        let rows: Vec<Observation> = data
            .rows()
            .iter()
            .map(|o| Observation { x: o.x.clone(), z: o.z, a: o.a, y: 7.0 })
            .collect();
        let data = Dataset::new(rows, None).unwrap();
        let folds = make_folds(100, 4, 0).unwrap();
        let alpha: Vec<f64> = data.rows().iter().map(|o| (0.5 * o.z).exp() + 0.3).collect();
        let fit = NuisanceFit::from_values(0.5, alpha, vec![7.0; 100], vec![0.4; 100], folds);
        let values = compute_if_values(&data, &fit, 1.0).unwrap();
        for (&xi, &theta) in values.xi_y_delta.iter().zip(&values.theta_y) {
            assert_abs_diff_eq!(xi, 7.0, epsilon = 1e-12);
            assert_abs_diff_eq!(theta, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn scale_equivariance_both_estimators() {
        // the kernel learner is linear in its targets with shared weights,
        // so the fitted nuisances transform exactly with the outcome
        let draw = simulate_dgp(&SimConfig { n: 1000, seed: 6, ..SimConfig::default() });
        let folds = make_folds(1000, 5, 1).unwrap();
        let spec = LearnerSpec::kernel(None);
        let (c, b) = (-2.0, 7.0);
        let scaled_rows: Vec<Observation> = draw
            .data
            .rows()
            .iter()
            .map(|o| Observation { x: o.x.clone(), z: o.z, a: o.a, y: c * o.y + b })
            .collect();
        let scaled = Dataset::new(scaled_rows, None).unwrap();
        let fit = fit_nuisances(&draw.data, 0.5, &spec, &folds).unwrap();
        let fit_scaled = fit_nuisances(&scaled, 0.5, &spec, &folds).unwrap();
        let plug = estimate_plugin(&draw.data, &fit).unwrap();
        let plug_scaled = estimate_plugin(&scaled, &fit_scaled).unwrap();
        assert_abs_diff_eq!(plug_scaled.psi_hat, c * plug.psi_hat, epsilon = 1e-8);
        let ifb = estimate_if(&draw.data, &fit).unwrap();
        let ifb_scaled = estimate_if(&scaled, &fit_scaled).unwrap();
        assert_abs_diff_eq!(ifb_scaled.psi_hat, c * ifb.psi_hat, epsilon = 1e-8);
    }

    #[test]
    fn weak_instrument_detected() {
        let data = small_data(100, 7);
        let folds = make_folds(100, 4, 0).unwrap();
        let gamma_a: Vec<f64> = data.rows().iter().map(|o| o.a).collect();
        let gamma_y: Vec<f64> = data.rows().iter().map(|o| o.y).collect();
        let fit = NuisanceFit::from_values(0.5, vec![1.0; 100], gamma_y, gamma_a, folds);
        assert!(matches!(
            estimate_plugin(&data, &fit),
            Err(Error::WeakInstrument { .. })
        ));
        assert!(matches!(estimate_if(&data, &fit), Err(Error::WeakInstrument { .. })));
    }

    #[test]
    fn curve_single_point_quantile_near_normal() {
        let data = small_data(600, 8);
        let curve =
            estimate_curve(&data, &[0.5], &LearnerSpec::linear(0.0), 4, 11, 1000).unwrap();
        assert!(
            curve.multiplier_quantile >= 1.90,
            "quantile {}",
            curve.multiplier_quantile
        );
        assert!(curve.multiplier_quantile < 2.10);
    }

    #[test]
    fn curve_uniform_band_contains_pointwise() {
        let data = small_data(800, 9);
        let curve = estimate_curve(
            &data,
            &[-0.6, -0.3, 0.3, 0.6],
            &LearnerSpec::linear(0.0),
            4,
            3,
            400,
        )
        .unwrap();
        for (i, est) in curve.estimates.iter().enumerate() {
            let est = est.as_ref().expect("grid point should be valid");
            assert!(curve.uniform_lo[i] <= est.ci_lo + 1e-12);
            assert!(curve.uniform_hi[i] >= est.ci_hi - 1e-12);
        }
    }

    #[test]
    fn curve_degenerate_phi_zero_band() {
        // Y = 2A makes theta_y = 2 theta_a under the oracle-style values,
        // collapsing phi and the band to zero at every grid point; exercised
        // through compute_if_values since estimate_curve always refits.
        let data = small_data(100, 2);
        let rows: Vec<Observation> = data
            .rows()
            .iter()
            .map(|o| Observation { x: o.x.clone(), z: o.z, a: o.a, y: 2.0 * o.a })
            .collect();
        let data = Dataset::new(rows, None).unwrap();
        let folds = make_folds(100, 4, 0).unwrap();
        let gamma_a = vec![0.5; 100];
        let gamma_y: Vec<f64> = gamma_a.iter().map(|g| 2.0 * g).collect();
        let fit = NuisanceFit::from_values(0.5, vec![1.0; 100], gamma_y, gamma_a, folds);
        let est = estimate_if(&data, &fit).unwrap();
        let values = compute_if_values(&data, &fit, est.psi_hat).unwrap();
        assert!(values.phi.iter().all(|&p| p.abs() < 1e-12));
        assert_abs_diff_eq!(est.ci_lo, est.ci_hi, epsilon = 1e-12);
    }

    #[test]
    fn homogeneity_interval_intersection() {
        let make = |bands: &[(f64, f64)]| {
            let grid: Vec<f64> = (0..bands.len()).map(|i| 0.1 + i as f64 * 0.1).collect();
            let estimates = bands
                .iter()
                .zip(&grid)
                .map(|(&(lo, hi), &d)| {
                    Some(LateEstimate {
                        delta: d,
                        delta2: None,
                        psi_hat: 0.5 * (lo + hi),
                        std_error: 0.0,
                        ci_lo: lo,
                        ci_hi: hi,
                        numerator_hat: 0.0,
                        denominator_hat: 1.0,
                        n: 10,
                        method: Method::InfluenceFunction,
                    })
                })
                .collect();
            CurveEstimate {
                grid,
                estimates,
                flags: vec![Vec::new(); bands.len()],
                uniform_lo: bands.iter().map(|b| b.0).collect(),
                uniform_hi: bands.iter().map(|b| b.1).collect(),
                band_level: 0.95,
                bootstrap_reps: 0,
                multiplier_quantile: Z_975,
            }
        };
        let feasible = test_homogeneity(&make(&[(1.0, 3.0), (2.0, 4.0)])).unwrap();
        assert!(feasible.feasible);
        assert_abs_diff_eq!(feasible.lo, 2.0);
        assert_abs_diff_eq!(feasible.hi, 3.0);
        let infeasible = test_homogeneity(&make(&[(1.0, 2.0), (3.0, 4.0)])).unwrap();
        assert!(!infeasible.feasible);
    }

    #[test]
    fn two_tilt_zero_reduces_to_single_tilt() {
        let data = small_data(500, 10);
        let spec = LearnerSpec::linear(0.0);
        let two = estimate_two_tilt(&data, 0.5, 0.0, &spec, 4, 9).unwrap();
        let folds = make_folds(500, 4, 9).unwrap();
        let fit = fit_nuisances(&data, 0.5, &spec, &folds).unwrap();
        let single = estimate_if(&data, &fit).unwrap();
        assert_abs_diff_eq!(two.psi_hat, single.psi_hat, epsilon = 1e-12);
        assert_eq!(two.delta2, Some(0.0));
    }

    #[test]
    fn two_tilt_rejects_bad_order_and_near_zero() {
        let data = small_data(100, 11);
        let spec = LearnerSpec::linear(0.0);
        assert!(matches!(
            estimate_two_tilt(&data, 0.2, 0.5, &spec, 4, 0),
            Err(Error::BadOrder { .. })
        ));
        assert!(matches!(
            estimate_two_tilt(&data, 0.5, 1e-10, &spec, 4, 0),
            Err(Error::DegenerateTilt(_))
        ));
    }
}
