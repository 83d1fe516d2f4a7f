//! Ridge regression on the raw covariates, plus a log-scale fit for the
//! strictly positive tilt-moment target.

use crate::error::{Error, Result};

/// Linear predictor with intercept, fit by penalized least squares.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// True when a singular system at ridge = 0 was remedied with 1e-8.
    pub ridge_bumped: bool,
}

impl RidgeFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Solve a symmetric linear system by Gaussian elimination with partial
/// pivoting. Returns None when the system is numerically singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let p = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..p {
        let (pivot_row, pivot) = (col..p)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())?;
        if pivot < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in (col + 1)..p {
            let factor = a[r][col] / a[col][col];
            for c in col..p {
                a[r][c] -= factor * a[col][c];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; p];
    for col in (0..p).rev() {
        let mut acc = b[col];
        for c in (col + 1)..p {
            acc -= a[col][c] * x[c];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Fit `y ~ 1 + x` with ridge penalty on the slope coefficients.
pub fn fit_ridge(rows: &[&[f64]], y: &[f64], ridge: f64) -> Result<RidgeFit> {
    assert_eq!(rows.len(), y.len());
    let d = rows[0].len();
    let p = d + 1;
    let mut gram = vec![vec![0.0f64; p]; p];
    let mut rhs = vec![0.0f64; p];
    for (x, &yi) in rows.iter().zip(y) {
        // design column 0 is the intercept
        gram[0][0] += 1.0;
        rhs[0] += yi;
        for j in 0..d {
            gram[0][j + 1] += x[j];
            gram[j + 1][0] += x[j];
            rhs[j + 1] += x[j] * yi;
            for k in j..d {
                gram[j + 1][k + 1] += x[j] * x[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            gram[j + 1][k + 1] = gram[k + 1][j + 1];
        }
    }
    let attempt = |lambda: f64| {
        let mut a = gram.clone();
        for j in 1..p {
            a[j][j] += lambda;
        }
        solve(a, rhs.clone())
    };
    let (beta, bumped) = match attempt(ridge) {
        Some(beta) => (beta, false),
        None if ridge == 0.0 => match attempt(1e-8) {
            Some(beta) => (beta, true),
            None => return Err(Error::LearnerFailure("singular linear system".into())),
        },
        None => return Err(Error::LearnerFailure("singular ridge system".into())),
    };
    Ok(RidgeFit { intercept: beta[0], coef: beta[1..].to_vec(), ridge_bumped: bumped })
}

/// Estimate of `E[exp(delta Z) | X]` built from a linear Gaussian model of
/// the instrument: regress `Z` on `X`, then apply the moment generating
/// function with the residual variance. Keeps the prediction strictly
/// positive and captures the exponential shape a direct linear fit of
/// `exp(delta Z)` cannot represent.
#[derive(Debug, Clone)]
pub struct LogMgfFit {
    pub instrument: RidgeFit,
    pub residual_variance: f64,
    pub delta: f64,
}

pub fn fit_log_mgf(rows: &[&[f64]], z: &[f64], delta: f64, ridge: f64) -> Result<LogMgfFit> {
    let instrument = fit_ridge(rows, z, ridge)?;
    let n = z.len();
    let p = rows[0].len() + 1;
    let dof = (n.saturating_sub(p)).max(1) as f64;
    let rss: f64 = rows
        .iter()
        .zip(z)
        .map(|(x, &zi)| {
            let r = zi - instrument.predict(x);
            r * r
        })
        .sum();
    Ok(LogMgfFit { instrument, residual_variance: rss / dof, delta })
}

impl LogMgfFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        (self.delta * self.instrument.predict(x)
            + 0.5 * self.delta * self.delta * self.residual_variance)
            .exp()
    }
}
