//! Neural autoregressive distribution estimator with injectable biases.
//!
//! The tractable drop-in replacement for the RBM inside sequence models: the
//! per-step biases produced by the recurrent conditioner are passed in via
//! `bias_override`, and the exact gradient flows back through them.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid_scalar, Prng, RealMatrix, RealVector};

/// NADE parameters. `w` is the shared encoder (n_h x n_v, column k feeds the
/// conditionals of every unit after k), `v_dec` the per-unit decoder rows
/// (n_v x n_h).
#[derive(Debug, Clone)]
pub struct NadeParams {
    pub w: RealMatrix,
    pub v_dec: RealMatrix,
    pub b_v: RealVector,
    pub b_h: RealVector,
}

impl NadeParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        NadeParams {
            w: Array2::zeros((n_hidden, n_visible)),
            v_dec: Array2::zeros((n_visible, n_hidden)),
            b_v: Array1::zeros(n_visible),
            b_h: Array1::zeros(n_hidden),
        }
    }

    pub fn random(n_visible: usize, n_hidden: usize, std: f64, rng: &mut Prng) -> Self {
        let mut p = Self::zeros(n_visible, n_hidden);
        p.w.mapv_inplace(|_| std * rng.normal());
        p.v_dec.mapv_inplace(|_| std * rng.normal());
        p
    }

    pub fn n_visible(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.w.nrows()
    }

    fn resolve_biases<'a>(
        &'a self,
        bias_override: Option<(&'a RealVector, &'a RealVector)>,
    ) -> Result<(&'a RealVector, &'a RealVector)> {
        match bias_override {
            None => Ok((&self.b_v, &self.b_h)),
            Some((b_v, b_h)) => {
                if b_v.len() != self.n_visible() {
                    return Err(Error::dim("bias_override b_v", self.n_visible(), b_v.len()));
                }
                if b_h.len() != self.n_hidden() {
                    return Err(Error::dim("bias_override b_h", self.n_hidden(), b_h.len()));
                }
                Ok((b_v, b_h))
            }
        }
    }

    fn check_frame(&self, v: &RealVector) -> Result<()> {
        if v.len() != self.n_visible() {
            return Err(Error::dim("nade frame", self.n_visible(), v.len()));
        }
        if v.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::Data("NADE frames must be binary".into()));
        }
        Ok(())
    }
}

/// Gradient of -log P(v) with respect to all four parameter blocks.
///
/// `d_b_v` and `d_b_h` are also the gradients with respect to injected
/// biases, which the sequence trainer propagates backward in time.
#[derive(Debug, Clone)]
pub struct NadeGradient {
    pub d_w: RealMatrix,
    pub d_v_dec: RealMatrix,
    pub d_b_v: RealVector,
    pub d_b_h: RealVector,
}

/// Exact log P(v) under the autoregressive factorization, in nats.
///
/// Runs in O(n_v * n_h) by keeping a running hidden pre-activation.
pub fn nade_log_prob(
    nade: &NadeParams,
    v: &RealVector,
    bias_override: Option<(&RealVector, &RealVector)>,
) -> Result<f64> {
    nade.check_frame(v)?;
    let (b_v, b_h) = nade.resolve_biases(bias_override)?;
    let mut pre = b_h.clone();
    let mut ll = 0.0;
    for j in 0..nade.n_visible() {
        let hidden = pre.mapv(sigmoid_scalar);
        let p = sigmoid_scalar(b_v[j] + nade.v_dec.row(j).dot(&hidden));
        ll += if v[j] > 0.5 { p.ln() } else { (1.0 - p).ln() };
        if v[j] > 0.5 {
            pre += &nade.w.column(j);
        }
    }
    Ok(ll)
}

/// Exact gradient of -log P(v); see [`NadeGradient`].
pub fn nade_gradient(
    nade: &NadeParams,
    v: &RealVector,
    bias_override: Option<(&RealVector, &RealVector)>,
) -> Result<NadeGradient> {
    nade.check_frame(v)?;
    let (b_v, b_h) = nade.resolve_biases(bias_override)?;
    let (n_v, n_h) = (nade.n_visible(), nade.n_hidden());

    // forward pass caching the hidden activation h_j used by each conditional
    let mut pre = b_h.clone();
    let mut hiddens = Array2::<f64>::zeros((n_v, n_h));
    let mut errs = Array1::<f64>::zeros(n_v);
    for j in 0..n_v {
        let hidden = pre.mapv(sigmoid_scalar);
        let p = sigmoid_scalar(b_v[j] + nade.v_dec.row(j).dot(&hidden));
        errs[j] = p - v[j];
        hiddens.row_mut(j).assign(&hidden);
        if v[j] > 0.5 {
            pre += &nade.w.column(j);
        }
    }

    let mut d_w = Array2::<f64>::zeros((n_h, n_v));
    let mut d_v_dec = Array2::<f64>::zeros((n_v, n_h));
    let mut d_b_h = Array1::<f64>::zeros(n_h);
    // backward pass: suffix-sum of per-unit hidden gradients gives each
    // encoder column's contribution (column k only feeds units after k)
    let mut suffix = Array1::<f64>::zeros(n_h);
    for j in (0..n_v).rev() {
        let hidden = hiddens.row(j);
        let e = errs[j];
        for i in 0..n_h {
            d_v_dec[[j, i]] = e * hidden[i];
        }
        let mut g = Array1::<f64>::zeros(n_h);
        for i in 0..n_h {
            g[i] = e * nade.v_dec[[j, i]] * hidden[i] * (1.0 - hidden[i]);
        }
        d_b_h += &g;
        if v[j] > 0.5 {
            for i in 0..n_h {
                d_w[[i, j]] = suffix[i];
            }
        }
        suffix += &g;
    }

    Ok(NadeGradient {
        d_w,
        d_v_dec,
        d_b_v: errs,
        d_b_h,
    })
}

/// Ancestral sample: each unit drawn from its conditional in index order.
pub fn nade_sample(
    nade: &NadeParams,
    bias_override: Option<(&RealVector, &RealVector)>,
    rng: &mut Prng,
) -> Result<RealVector> {
    let (b_v, b_h) = nade.resolve_biases(bias_override)?;
    let mut pre = b_h.clone();
    let mut v = Array1::<f64>::zeros(nade.n_visible());
    for j in 0..nade.n_visible() {
        let hidden = pre.mapv(sigmoid_scalar);
        let p = sigmoid_scalar(b_v[j] + nade.v_dec.row(j).dot(&hidden));
        if rng.uniform() < p {
            v[j] = 1.0;
            pre += &nade.w.column(j);
        }
    }
    Ok(v)
}

/// Deterministic approximate marginals: ancestral pass feeding each unit's
/// mean back into the running hidden pre-activation instead of a sample.
pub fn nade_mean_propagation(
    nade: &NadeParams,
    bias_override: Option<(&RealVector, &RealVector)>,
) -> Result<RealVector> {
    let (b_v, b_h) = nade.resolve_biases(bias_override)?;
    let mut pre = b_h.clone();
    let mut means = Array1::<f64>::zeros(nade.n_visible());
    for j in 0..nade.n_visible() {
        let hidden = pre.mapv(sigmoid_scalar);
        let p = sigmoid_scalar(b_v[j] + nade.v_dec.row(j).dot(&hidden));
        means[j] = p;
        pre.scaled_add(p, &nade.w.column(j));
    }
    Ok(means)
}
