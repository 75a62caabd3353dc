//! Stateless math primitives and the seeded RNG contract shared by every model.
//!
//! Everything here is double precision. Gradient acceptance checks in the rest
//! of the crate need <=1e-4 relative error against central differences, which
//! single precision cannot deliver.

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense double-precision vector.
pub type RealVector = Array1<f64>;
/// Dense double-precision matrix.
pub type RealMatrix = Array2<f64>;

/// Overflow-safe logistic sigmoid of a scalar.
///
/// Safe for |x| up to ~700: the exponential is always taken of a
/// non-positive argument.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Element-wise logistic sigmoid. Rejects non-finite input.
pub fn sigmoid(x: &RealVector) -> Result<RealVector> {
    if !all_finite(x.as_slice().unwrap()) {
        return Err(Error::NonFinite("sigmoid input".into()));
    }
    Ok(x.mapv(sigmoid_scalar))
}

/// log(1 + e^x) with the standard branch at |x| = 30.
///
/// Returns x for x > 30 and e^x for x < -30; exact in between.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        (1.0 + x.exp()).ln()
    }
}

/// log(sum(e^x_i)) computed against the running maximum.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Seeded, splittable random number generator.
///
/// Identical seed gives an identical stream across runs and platforms.
/// Sub-tasks must take their own stream via [`Prng::split`] rather than
/// sharing one generator, so that reduction order cannot change results.
pub struct Prng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl Prng {
    pub fn from_seed(seed: u64) -> Self {
        Prng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    /// The seed this generator (or its root ancestor) was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream, advancing this generator.
    pub fn split(&mut self) -> Prng {
        let mut key = [0u8; 32];
        self.inner.fill_bytes(&mut key);
        Prng {
            inner: ChaCha8Rng::from_seed(key),
            seed: self.seed,
        }
    }

    /// Uniform draw in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Standard normal draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.inner.gen_range(0..=i);
            xs.swap(i, j);
        }
    }
}

impl RngCore for Prng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Independent Bernoulli draws with the given success probabilities.
pub fn sample_bernoulli(p: &RealVector, rng: &mut Prng) -> Result<RealVector> {
    for &pi in p.iter() {
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::Data(format!(
                "Bernoulli probability {pi} outside [0, 1]"
            )));
        }
    }
    Ok(p.mapv(|pi| if rng.uniform() < pi { 1.0 } else { 0.0 }))
}

/// Central-difference gradient of a scalar function, the oracle used by all
/// hand-derived gradients in this crate.
pub fn finite_difference_gradient<F>(mut f: F, x: &RealVector, eps: f64) -> Result<RealVector>
where
    F: FnMut(&RealVector) -> f64,
{
    if eps <= 0.0 {
        return Err(Error::Config("finite difference eps must be positive".into()));
    }
    let mut grad = Array1::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + eps;
        let up = f(&probe);
        probe[i] = xi - eps;
        let down = f(&probe);
        probe[i] = xi;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} of finite-difference probe"
            )));
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &RealMatrix) -> Result<RealMatrix> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim("cholesky", n, a.ncols()));
    }
    let mut l: RealMatrix = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Numeric(format!(
                        "matrix not positive definite at pivot {i} (value {s})"
                    )));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve A x = b given the Cholesky factor L of A (forward then back substitution).
pub fn cholesky_solve(l: &RealMatrix, b: &RealVector) -> RealVector {
    let n = l.nrows();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Outer product a b^T.
pub fn outer(a: &RealVector, b: &RealVector) -> RealMatrix {
    let mut m = Array2::zeros((a.len(), b.len()));
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            m[[i, j]] = ai * bj;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn sigmoid_symmetry_point() {
        let y = sigmoid(&array![0.0]).unwrap();
        assert_eq!(y[0], 0.5);
    }

    #[test]
    fn sigmoid_analytic_quarter() {
        // 1/(1+3) at x = -ln 3
        let y = sigmoid(&array![-(3.0f64.ln())]).unwrap();
        assert_abs_diff_eq!(y[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn sigmoid_extremes_match_extended_precision() {
        // reference values computed with 40-digit arithmetic
        let y = sigmoid(&array![30.0, -30.0]).unwrap();
        assert_abs_diff_eq!(y[0], 0.9999999999999064, epsilon = 3e-16);
        assert_abs_diff_eq!(y[1], 9.357622968839299e-14, epsilon = 1e-26);
    }

    #[test]
    fn sigmoid_rejects_nan() {
        assert!(sigmoid(&array![f64::NAN]).is_err());
        assert!(sigmoid(&array![f64::INFINITY]).is_err());
    }

    #[test]
    fn sigmoid_survives_large_preactivations() {
        let y = sigmoid(&array![700.0, -700.0]).unwrap();
        assert_eq!(y[0], 1.0);
        assert!(y[1] >= 0.0 && y[1] < 1e-300);
    }

    #[test]
    fn sigmoid_complement_identity() {
        for &x in &[-123.4, -5.0, -0.3, 0.0, 0.7, 12.0, 456.0] {
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softplus_branches() {
        assert_eq!(softplus(100.0), 100.0);
        assert_abs_diff_eq!(softplus(0.0), 2.0f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(softplus(-40.0), (-40.0f64).exp(), epsilon = 1e-30);
        // continuity at the branch point to well under test tolerances
        assert_abs_diff_eq!(softplus(30.0), 30.0, epsilon = 1e-13);
    }

    #[test]
    fn logsumexp_matches_naive_on_moderate_values() {
        let xs = [0.3f64, -1.2, 2.0, 0.0];
        let naive: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(logsumexp(&xs), naive, epsilon = 1e-14);
        // and survives values that would overflow naively
        let big = [1000.0, 1000.0];
        assert_abs_diff_eq!(logsumexp(&big), 1000.0 + 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bernoulli_degenerate_probabilities() {
        let mut rng = Prng::from_seed(7);
        let v = sample_bernoulli(&array![0.0, 1.0, 0.0], &mut rng).unwrap();
        assert_eq!(v, array![0.0, 1.0, 0.0]);
    }

    #[test]
    fn bernoulli_rejects_out_of_range() {
        let mut rng = Prng::from_seed(7);
        assert!(sample_bernoulli(&array![1.5], &mut rng).is_err());
        assert!(sample_bernoulli(&array![-0.1], &mut rng).is_err());
    }

    #[test]
    fn bernoulli_mean_converges() {
        // binomial bound: 1e5 draws at p=0.5 stay within +-0.005 except w.p. < 1%
        let mut rng = Prng::from_seed(123);
        let p = Array1::from_elem(1, 0.5);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_bernoulli(&p, &mut rng).unwrap()[0];
        }
        let mean = sum / n as f64;
        assert!((0.495..=0.505).contains(&mean), "mean {mean}");
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = Prng::from_seed(42);
        let mut b = Prng::from_seed(42);
        let xs: Vec<f64> = (0..32).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..32).map(|_| b.uniform()).collect();
        assert_eq!(xs, ys);

        let p = array![0.3, 0.6, 0.9];
        let mut r1 = Prng::from_seed(9);
        let mut r2 = Prng::from_seed(9);
        assert_eq!(
            sample_bernoulli(&p, &mut r1).unwrap(),
            sample_bernoulli(&p, &mut r2).unwrap()
        );
    }

    #[test]
    fn rng_split_is_deterministic_and_distinct() {
        let mut a = Prng::from_seed(5);
        let mut b = Prng::from_seed(5);
        let mut ca = a.split();
        let mut cb = b.split();
        assert_eq!(ca.uniform(), cb.uniform());
        // child and parent streams differ
        let mut p = Prng::from_seed(5);
        let mut c = p.split();
        let parent: Vec<f64> = (0..8).map(|_| p.uniform()).collect();
        let child: Vec<f64> = (0..8).map(|_| c.uniform()).collect();
        assert_ne!(parent, child);
    }

    #[test]
    fn fd_gradient_quadratic() {
        let f = |x: &RealVector| x.dot(x);
        let g = finite_difference_gradient(f, &array![1.0, 2.0], 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn fd_gradient_constant_is_zero() {
        let g = finite_difference_gradient(|_| 3.5, &array![0.1, -0.7, 2.0], 1e-5).unwrap();
        assert_eq!(g, array![0.0, 0.0, 0.0]);
    }

    #[test]
    fn fd_gradient_sigmoid_slope_at_zero() {
        let f = |x: &RealVector| x.iter().map(|&v| sigmoid_scalar(v)).sum::<f64>();
        let g = finite_difference_gradient(f, &array![0.0], 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 0.25, epsilon = 1e-9);
    }

    #[test]
    fn fd_gradient_polynomial_second_order_accuracy() {
        // cubic: error of central differences is exactly eps^2 * coefficient
        let f = |x: &RealVector| x[0].powi(3);
        let coarse = finite_difference_gradient(f, &array![1.0], 1e-3).unwrap()[0];
        let fine = finite_difference_gradient(f, &array![1.0], 1e-4).unwrap()[0];
        let err_coarse = (coarse - 3.0).abs();
        let err_fine = (fine - 3.0).abs();
        assert!(err_coarse < 1e-5);
        assert!(err_fine < err_coarse / 50.0, "O(eps^2) scaling violated");
    }

    #[test]
    fn fd_gradient_rejects_non_finite_objective() {
        let f = |x: &RealVector| if x[0] > 1.0 { f64::NAN } else { x[0] };
        assert!(finite_difference_gradient(f, &array![1.0], 1e-3).is_err());
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(&l, &b);
        let r = a.dot(&x);
        for i in 0..3 {
            assert_abs_diff_eq!(r[i], b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_err());
    }
}
