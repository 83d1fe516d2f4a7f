//! Sensitivity of the tilted LATE to violations of instrument monotonicity.
//!
//! The bias-adjusted estimate adds `gamma1 * gamma2 / D` to the
//! influence-function point estimate, where `gamma1` is a hypothesized
//! defier proportion, `gamma2` the hypothesized effect discrepancy between
//! defiers and compliers (outcome units), and `D` the estimated complier
//! mass. The sign-flip frontier is the hyperbola where the adjusted
//! estimate crosses zero.

use serde::Serialize;
use serde_json::json;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{compute_if_values, LateEstimate};
use crate::nuisance::NuisanceFit;

const WEAK_DENOMINATOR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityGrid {
    pub delta: f64,
    pub gamma1_values: Vec<f64>,
    pub gamma2_values: Vec<f64>,
    /// `xi[i][j]` adjusts for `(gamma1_values[i], gamma2_values[j])`.
    pub xi: Vec<Vec<f64>>,
    /// Exact zero crossings `(gamma1, gamma2)` within the grid range.
    pub frontier: Vec<(f64, f64)>,
    /// Estimated complier mass used as the adjustment denominator.
    pub denominator: f64,
}

impl SensitivityGrid {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "delta": self.delta,
            "gamma1": self.gamma1_values,
            "gamma2": self.gamma2_values,
            "xi": self.xi,
            "frontier": self.frontier.iter().map(|&(a, b)| json!([a, b])).collect::<Vec<_>>(),
            "denominator": self.denominator,
        })
    }
}

/// 41 equispaced defier proportions in `[0, 0.2]`.
pub fn default_gamma1() -> Vec<f64> {
    (0..41).map(|i| i as f64 * 0.005).collect()
}

/// 41 equispaced discrepancies spanning `[-2|psi|, 2|psi|]`.
pub fn default_gamma2(psi_hat: f64) -> Vec<f64> {
    let r = 2.0 * psi_hat.abs().max(1e-6);
    (0..41).map(|i| -r + i as f64 * (2.0 * r / 40.0)).collect()
}

/// Evaluate the adjusted estimate over the sensitivity grid.
///
/// The denominator is the influence-function estimate of the complier mass
/// (`mean(theta_A)`, sign-flipped for downward tilts so it stays a positive
/// mass); `psi` must come from the IF estimator on the same fit.
pub fn sensitivity_surface(
    data: &Dataset,
    fit: &NuisanceFit,
    psi: &LateEstimate,
    gamma1_values: &[f64],
    gamma2_values: &[f64],
) -> Result<SensitivityGrid> {
    if gamma1_values.is_empty() || gamma2_values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let values = compute_if_values(data, fit, psi.psi_hat)?;
    let raw = values.theta_a.iter().sum::<f64>() / data.n() as f64;
    let denominator = if fit.delta >= 0.0 { raw } else { -raw };
    if denominator.abs() < WEAK_DENOMINATOR {
        return Err(Error::WeakInstrument { denominator });
    }
    let xi: Vec<Vec<f64>> = gamma1_values
        .iter()
        .map(|&g1| {
            gamma2_values
                .iter()
                .map(|&g2| psi.psi_hat + g1 * g2 / denominator)
                .collect()
        })
        .collect();
    // the frontier is the hyperbola g1*g2 = -psi*D; report the exact gamma2
    // solution for every nonzero gamma1 that lands inside the grid range
    let product = -psi.psi_hat * denominator;
    let (g2_min, g2_max) = gamma2_values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g), hi.max(g)));
    let mut frontier = Vec::new();
    for &g1 in gamma1_values {
        if g1 == 0.0 {
            continue;
        }
        let g2 = product / g1;
        if g2 >= g2_min && g2 <= g2_max {
            frontier.push((g1, g2));
        }
    }
    Ok(SensitivityGrid {
        delta: fit.delta,
        gamma1_values: gamma1_values.to_vec(),
        gamma2_values: gamma2_values.to_vec(),
        xi,
        frontier,
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;
    use crate::estimators::estimate_if;
    use crate::rng::stream_rng;
    use crate::simulation::{oracle_fit, simulate_dgp, SimConfig};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn surface(delta: f64, seed: u64) -> (SensitivityGrid, LateEstimate) {
        let draw = simulate_dgp(&SimConfig { n: 2000, seed, ..SimConfig::default() });
        let folds = make_folds(2000, 4, 0).unwrap();
        let fit = oracle_fit(&draw, delta, &folds);
        let psi = estimate_if(&draw.data, &fit).unwrap();
        let grid = sensitivity_surface(
            &draw.data,
            &fit,
            &psi,
            &default_gamma1(),
            &default_gamma2(psi.psi_hat),
        )
        .unwrap();
        (grid, psi)
    }

    #[test]
    fn zero_defiers_row_is_unadjusted() {
        let (grid, psi) = surface(0.5, 1);
        assert_eq!(grid.gamma1_values[0], 0.0);
        for &xi in &grid.xi[0] {
            assert_eq!(xi, psi.psi_hat);
        }
    }

    #[test]
    fn adjustment_is_affine_in_product() {
        let (grid, psi) = surface(0.5, 2);
        let mut rng = stream_rng(3, &[]);
        for _ in 0..100 {
            let i = rng.gen_range(0..grid.gamma1_values.len());
            let j = rng.gen_range(0..grid.gamma2_values.len());
            let expected =
                grid.gamma1_values[i] * grid.gamma2_values[j] / grid.denominator;
            assert_abs_diff_eq!(grid.xi[i][j] - psi.psi_hat, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn frontier_points_are_exact_zeros() {
        let (grid, psi) = surface(0.5, 4);
        assert!(!grid.frontier.is_empty());
        for &(g1, g2) in &grid.frontier {
            let xi = psi.psi_hat + g1 * g2 / grid.denominator;
            assert!(xi.abs() <= 1e-9, "frontier point not a zero: {xi}");
            assert_abs_diff_eq!(g1 * g2, -psi.psi_hat * grid.denominator, epsilon = 1e-9);
        }
    }

    #[test]
    fn downward_tilt_denominator_positive() {
        let (grid, _) = surface(-0.5, 5);
        assert!(grid.denominator > 0.0);
    }

    #[test]
    fn adjustment_sign_matches_product_sign() {
        let (grid, psi) = surface(0.5, 6);
        for (i, &g1) in grid.gamma1_values.iter().enumerate() {
            for (j, &g2) in grid.gamma2_values.iter().enumerate() {
                let diff = grid.xi[i][j] - psi.psi_hat;
                let sign = (g1 * g2 / grid.denominator).signum();
                if diff != 0.0 {
                    assert_eq!(diff.signum(), sign);
                }
            }
        }
    }
}
