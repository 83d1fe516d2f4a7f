//! Nadaraya-Watson regression with a product Gaussian kernel.
//!
//! Several targets can share one training design, so the kernel weights are
//! computed once per query and reused across targets.

/// Multi-target Nadaraya-Watson fit.
#[derive(Debug, Clone)]
pub struct KernelFit {
    x_train: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
}

/// Per-covariate Silverman bandwidth for d-dimensional smoothing:
/// `sigma_j * (4 / (d + 2))^{1/(d+4)} * n^{-1/(d+4)}`.
pub fn silverman_bandwidths(x_train: &[Vec<f64>]) -> Vec<f64> {
    let n = x_train.len() as f64;
    let d = x_train[0].len();
    let factor = (4.0 / (d as f64 + 2.0)).powf(1.0 / (d as f64 + 4.0))
        * n.powf(-1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|j| {
            let mean = x_train.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x_train.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 {
                sd * factor
            } else {
                1.0
            }
        })
        .collect()
}

impl KernelFit {
    /// `bandwidth = None` selects Silverman's rule per covariate.
    pub fn fit(x_train: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, bandwidth: Option<f64>) -> Self {
        let d = x_train[0].len();
        let h = match bandwidth {
            Some(h) => vec![h; d],
            None => silverman_bandwidths(&x_train),
        };
        KernelFit { x_train, targets, bandwidth: h }
    }

    /// One prediction per target. Weights are stabilized by subtracting the
    /// largest exponent, so distant queries degrade to nearest-neighbor
    /// averaging instead of 0/0.
    pub fn predict_all(&self, x: &[f64]) -> Vec<f64> {
        let n = self.x_train.len();
        let mut exponents = Vec::with_capacity(n);
        let mut max_e = f64::NEG_INFINITY;
        for row in &self.x_train {
            let mut e = 0.0;
            for ((&xi, &ti), &h) in x.iter().zip(row).zip(&self.bandwidth) {
                let u = (xi - ti) / h;
                e -= 0.5 * u * u;
            }
            if e > max_e {
                max_e = e;
            }
            exponents.push(e);
        }
        let mut weight_sum = 0.0;
        let mut sums = vec![0.0f64; self.targets.len()];
        for (i, &e) in exponents.iter().enumerate() {
            let w = (e - max_e).exp();
            weight_sum += w;
            for (s, t) in sums.iter_mut().zip(&self.targets) {
                *s += w * t[i];
            }
        }
        sums.iter().map(|s| s / weight_sum).collect()
    }

    pub fn predict(&self, x: &[f64], target: usize) -> f64 {
        self.predict_all(x)[target]
    }
}
