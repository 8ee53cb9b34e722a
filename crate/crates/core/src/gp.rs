//! Gaussian-process regression with an anisotropic RBF kernel.
//!
//! Exact inference on small datasets: the posterior comes from a Cholesky
//! factorization of `K + (noise + jitter) I`, with the jitter escalating from
//! 1e-8 by doubling up to 1e-2 before the fit is declared non-positive
//! definite. Hyperparameters are selected by exact log marginal likelihood
//! over a finite candidate grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const JITTER_MIN: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-2;

/// RBF kernel with per-dimension lengthscales:
/// `k(x, y) = sigma_f^2 * exp(-1/2 * sum_j ((x_j - y_j) / l_j)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl Kernel {
    pub fn rbf(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if signal_variance <= 0.0 {
            return Err(Error::InvalidArgument("signal variance must be positive".into()));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidArgument("lengthscales must be positive".into()));
        }
        if noise_variance < 0.0 {
            return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
        }
        Ok(Kernel { signal_variance, lengthscales, noise_variance })
    }

    /// Isotropic kernel: the same lengthscale in every dimension.
    pub fn isotropic(signal_variance: f64, lengthscale: f64, dim: usize, noise: f64) -> Result<Self> {
        Kernel::rbf(signal_variance, vec![lengthscale; dim], noise)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: if x.len() != self.dim() { x.len() } else { y.len() },
                context: "kernel input",
            });
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut z = 0.0;
        for ((a, b), l) in x.iter().zip(y).zip(&self.lengthscales) {
            let d = (a - b) / l;
            z += d * d;
        }
        self.signal_variance * (-0.5 * z).exp()
    }
}

/// In-place lower Cholesky factorization; `None` when the matrix is not
/// positive definite.
fn cholesky(matrix: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        for i in j..n {
            let mut sum = matrix[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[j * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn forward_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

fn backward_solve_transposed(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Fitted GP posterior state over observed (input, target) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateModel {
    kernel: Kernel,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

impl SurrogateModel {
    /// Fits the exact posterior. Duplicated inputs are fine as long as
    /// noise + jitter keeps the matrix positive definite.
    pub fn fit(kernel: Kernel, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::InvalidArgument("GP fit needs at least one observation".into()));
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: targets.len(),
                context: "GP targets",
            });
        }
        for x in &inputs {
            if x.len() != kernel.dim() {
                return Err(Error::DimensionMismatch {
                    expected: kernel.dim(),
                    got: x.len(),
                    context: "GP input row",
                });
            }
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NumericalOverflow("non-finite GP target".into()));
        }

        let mut base = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = kernel.eval_unchecked(&inputs[i], &inputs[j]);
                base[i * n + j] = k;
                base[j * n + i] = k;
            }
        }

        let mut jitter = JITTER_MIN;
        let chol = loop {
            let mut matrix = base.clone();
            for i in 0..n {
                matrix[i * n + i] += kernel.noise_variance + jitter;
            }
            if let Some(l) = cholesky(&matrix, n) {
                break l;
            }
            jitter *= 2.0;
            if jitter > JITTER_MAX {
                return Err(Error::NotPositiveDefinite { max_jitter: JITTER_MAX });
            }
        };

        let tmp = forward_solve(&chol, n, &targets);
        let alpha = backward_solve_transposed(&chol, n, &tmp);
        Ok(SurrogateModel { kernel, inputs, targets, chol, alpha, jitter })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor of `K + (noise + jitter) I`, row-major.
    pub fn chol(&self) -> &[f64] {
        &self.chol
    }

    /// Posterior mean and variance at a point. The variance is clamped at
    /// zero to absorb rounding.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim(),
                got: x.len(),
                context: "GP query point",
            });
        }
        let n = self.len();
        let k_star: Vec<f64> =
            self.inputs.iter().map(|xi| self.kernel.eval_unchecked(x, xi)).collect();
        let mean = k_star.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = forward_solve(&self.chol, n, &k_star);
        let k_xx = self.kernel.eval_unchecked(x, x);
        let variance = (k_xx - v.iter().map(|vi| vi * vi).sum::<f64>()).max(0.0);
        Ok((mean, variance))
    }

    /// Exact log marginal likelihood of the fitted data:
    /// `-1/2 y' alpha - sum_i log L_ii - n/2 log(2 pi)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len();
        let fit: f64 = self.targets.iter().zip(&self.alpha).map(|(y, a)| y * a).sum();
        let log_det: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        -0.5 * fit - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Selects the grid candidate with the highest exact log marginal
/// likelihood; ties keep the earliest candidate. Candidates that fail to
/// factorize are skipped; the last failure is propagated only when every
/// candidate fails.
pub fn fit_hyperparams(
    inputs: &[Vec<f64>],
    targets: &[f64],
    grid: &[Kernel],
) -> Result<Kernel> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("hyperparameter grid is empty".into()));
    }
    let mut best: Option<(f64, &Kernel)> = None;
    let mut last_err = None;
    for kernel in grid {
        match SurrogateModel::fit(kernel.clone(), inputs.to_vec(), targets.to_vec()) {
            Ok(model) => {
                let lml = model.log_marginal_likelihood();
                let better = match best {
                    None => true,
                    Some((best_lml, _)) => lml > best_lml,
                };
                if better {
                    best = Some((lml, kernel));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, kernel)) => Ok(kernel.clone()),
        None => Err(last_err.expect("no candidates succeeded")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_chacha::ChaCha8Rng;
    use rand_core::RngCore;

    fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng::unit_f64(rng)).collect()
    }

    /// Dense solve by Gauss-Jordan elimination with partial pivoting; the
    /// independent route the Cholesky path is checked against.
    pub(crate) fn dense_predict(
        kernel: &Kernel,
        inputs: &[Vec<f64>],
        targets: &[f64],
        jitter: f64,
        x: &[f64],
    ) -> (f64, f64) {
        let n = inputs.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = kernel.eval(&inputs[i], &inputs[j]).unwrap();
            }
            a[i * n + i] += kernel.noise_variance + jitter;
        }
        // Invert via Gauss-Jordan.
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for col in 0..n {
            let mut pivot = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[pivot * n + col].abs() {
                    pivot = r;
                }
            }
            if pivot != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot * n + c);
                    inv.swap(col * n + c, pivot * n + c);
                }
            }
            let d = a[col * n + col];
            for c in 0..n {
                a[col * n + c] /= d;
                inv[col * n + c] /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == 0.0 {
                    continue;
                }
                for c in 0..n {
                    a[r * n + c] -= f * a[col * n + c];
                    inv[r * n + c] -= f * inv[col * n + c];
                }
            }
        }
        let k_star: Vec<f64> = inputs.iter().map(|xi| kernel.eval(x, xi).unwrap()).collect();
        let mut kinv_y = vec![0.0; n];
        let mut kinv_k = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                kinv_y[i] += inv[i * n + j] * targets[j];
                kinv_k[i] += inv[i * n + j] * k_star[j];
            }
        }
        let mean: f64 = k_star.iter().zip(&kinv_y).map(|(k, v)| k * v).sum();
        let var = kernel.eval(x, x).unwrap()
            - k_star.iter().zip(&kinv_k).map(|(k, v)| k * v).sum::<f64>();
        (mean, var)
    }

    #[test]
    fn kernel_at_zero_distance_is_signal_variance() {
        let k = Kernel::isotropic(1.0, 0.7, 3, 0.0).unwrap();
        let x = vec![0.2, -0.4, 1.0];
        assert!((k.eval(&x, &x).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_formula_value() {
        // Unit lengthscale, squared distance 2 => exp(-1).
        let k = Kernel::isotropic(1.0, 1.0, 2, 0.0).unwrap();
        let v = k.eval(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_symmetry() {
        let k = Kernel::rbf(1.4, vec![0.5, 2.0], 0.0).unwrap();
        let mut rng = rng::stream(5);
        for _ in 0..20 {
            let x = random_point(&mut rng, 2);
            let y = random_point(&mut rng, 2);
            assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
        }
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let k = Kernel::isotropic(1.0, 1.0, 2, 0.0).unwrap();
        assert!(k.eval(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn single_observation_alpha() {
        let k = Kernel::isotropic(1.5, 1.0, 1, 0.5).unwrap();
        let model = SurrogateModel::fit(k, vec![vec![0.3]], vec![2.0]).unwrap();
        // alpha = y / (sigma_f^2 + sigma_n^2), up to the mandatory jitter.
        let expected = 2.0 / (1.5 + 0.5);
        assert!((model.alpha[0] - expected).abs() < 1e-7);
    }

    #[test]
    fn cholesky_reconstructs_covariance() {
        let mut rng = rng::stream(11);
        for trial in 0..20 {
            let n = 2 + (trial % 7);
            let k = Kernel::isotropic(1.0, 0.5, 3, 0.01).unwrap();
            let inputs: Vec<Vec<f64>> = (0..n).map(|_| random_point(&mut rng, 3)).collect();
            let targets: Vec<f64> = (0..n).map(|_| rng::range_f64(&mut rng, -1.0, 1.0)).collect();
            let model = SurrogateModel::fit(k.clone(), inputs.clone(), targets).unwrap();
            let l = model.chol();
            for i in 0..n {
                for j in 0..n {
                    let mut rec = 0.0;
                    for t in 0..n {
                        rec += l[i * n + t] * l[j * n + t];
                    }
                    let mut want = k.eval(&inputs[i], &inputs[j]).unwrap();
                    if i == j {
                        want += k.noise_variance + model.jitter();
                    }
                    assert!(
                        (rec - want).abs() <= 1e-8 * n as f64,
                        "reconstruction off at ({i}, {j}): {rec} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn duplicate_inputs_fit_with_jitter() {
        let k = Kernel::isotropic(1.0, 1.0, 2, 1e-6).unwrap();
        let x = vec![0.5, 0.5];
        let model =
            SurrogateModel::fit(k, vec![x.clone(), x.clone(), x], vec![1.0, 1.0, 1.0]);
        assert!(model.is_ok());
    }

    #[test]
    fn interpolates_training_data_at_low_noise() {
        let k = Kernel::isotropic(1.0, 0.6, 2, 1e-8).unwrap();
        let inputs = vec![vec![0.1, 0.2], vec![0.8, 0.4], vec![0.5, 0.9]];
        let targets = vec![0.7, -0.3, 0.1];
        let model = SurrogateModel::fit(k, inputs.clone(), targets.clone()).unwrap();
        for (x, y) in inputs.iter().zip(&targets) {
            let (mean, var) = model.predict(x).unwrap();
            assert!((mean - y).abs() < 1e-4, "mean {mean} vs target {y}");
            assert!(var <= 1e-4);
        }
    }

    #[test]
    fn far_point_recovers_prior() {
        let k = Kernel::isotropic(2.0, 0.1, 2, 1e-6).unwrap();
        let model = SurrogateModel::fit(
            k,
            vec![vec![0.0, 0.0], vec![0.1, 0.0]],
            vec![1.0, -1.0],
        )
        .unwrap();
        let (mean, var) = model.predict(&[50.0, 50.0]).unwrap();
        assert!(mean.abs() < 1e-9);
        assert!((var - 2.0).abs() < 1e-9);
    }

    #[test]
    fn matches_dense_solve_small_case() {
        let k = Kernel::isotropic(1.0, 0.8, 1, 0.05).unwrap();
        let inputs = vec![vec![0.1], vec![0.45], vec![0.9]];
        let targets = vec![0.3, -0.6, 0.25];
        let model = SurrogateModel::fit(k.clone(), inputs.clone(), targets.clone()).unwrap();
        for q in [0.0, 0.2, 0.5, 0.77, 1.0] {
            let (mean, var) = model.predict(&[q]).unwrap();
            let (dmean, dvar) = dense_predict(&k, &inputs, &targets, model.jitter(), &[q]);
            assert!((mean - dmean).abs() < 1e-10);
            assert!((var - dvar.max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_bounded_and_shrinks_with_data() {
        let mut rng = rng::stream(23);
        for _ in 0..25 {
            let k = Kernel::isotropic(1.0, 0.4, 2, 0.05).unwrap();
            let n = 4 + (rng.next_u64() % 6) as usize;
            let inputs: Vec<Vec<f64>> = (0..n).map(|_| random_point(&mut rng, 2)).collect();
            let targets: Vec<f64> = (0..n).map(|_| rng::range_f64(&mut rng, -1.0, 1.0)).collect();
            let query = random_point(&mut rng, 2);
            let extra = random_point(&mut rng, 2);
            let extra_y = rng::range_f64(&mut rng, -1.0, 1.0);

            let before = SurrogateModel::fit(k.clone(), inputs.clone(), targets.clone()).unwrap();
            let (_, var_before) = before.predict(&query).unwrap();
            assert!(var_before >= 0.0 && var_before <= 1.0 + 0.05 + 1e-12);

            let mut inputs2 = inputs;
            inputs2.push(extra);
            let mut targets2 = targets;
            targets2.push(extra_y);
            let after = SurrogateModel::fit(k, inputs2, targets2).unwrap();
            let (_, var_after) = after.predict(&query).unwrap();
            assert!(var_after <= var_before + 1e-8, "{var_after} > {var_before}");
        }
    }

    #[test]
    fn grid_selection_singleton() {
        let k = Kernel::isotropic(1.0, 0.5, 1, 0.01).unwrap();
        let chosen = fit_hyperparams(&[vec![0.0], vec![1.0]], &[0.0, 1.0], &[k.clone()]).unwrap();
        assert_eq!(chosen, k);
    }

    #[test]
    fn grid_selection_recovers_generating_kernel() {
        // Sample a function from a known kernel via its Cholesky factor and
        // check the likelihood prefers that kernel over one with 10x the
        // lengthscale.
        let truth = Kernel::isotropic(1.0, 0.2, 1, 1e-4).unwrap();
        let wrong = Kernel::isotropic(1.0, 2.0, 1, 1e-4).unwrap();
        let n = 25;
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
        let model_for_chol =
            SurrogateModel::fit(truth.clone(), inputs.clone(), vec![0.0; n]).unwrap();
        let l = model_for_chol.chol();
        // Standard normals via Box-Muller on the deterministic stream.
        let mut rng = rng::stream(77);
        let z: Vec<f64> = (0..n)
            .map(|_| {
                let u1 = rng::unit_f64(&mut rng).max(1e-12);
                let u2 = rng::unit_f64(&mut rng);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let targets: Vec<f64> = (0..n)
            .map(|i| (0..=i).map(|j| l[i * n + j] * z[j]).sum())
            .collect();
        let chosen =
            fit_hyperparams(&inputs, &targets, &[truth.clone(), wrong]).unwrap();
        assert_eq!(chosen, truth);
    }

    #[test]
    fn grid_selection_tie_keeps_first() {
        let a = Kernel::isotropic(1.0, 0.5, 1, 0.01).unwrap();
        let b = a.clone();
        let chosen =
            fit_hyperparams(&[vec![0.2], vec![0.8]], &[0.0, 0.0], &[a.clone(), b]).unwrap();
        assert_eq!(chosen, a);
    }
}
