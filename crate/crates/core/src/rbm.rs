//! Restricted Boltzmann machine: energy, conditionals, free energy, block
//! Gibbs sampling, CD-k gradients, a Gaussian-visible variant, and both exact
//! (enumerated) and annealed-importance-sampling partition functions.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::numerics::{
    logsumexp, outer, sample_bernoulli, sigmoid_scalar, softplus, Prng, RealMatrix, RealVector,
};

/// Largest dimension we are willing to enumerate (2^20 configurations).
pub const ENUMERATION_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisibleKind {
    Binary,
    /// Unit-variance Gaussian visible units; hidden units stay binary.
    GaussianUnitVariance,
}

/// Parameters of one energy model: hidden-visible weights and the two biases.
#[derive(Debug, Clone)]
pub struct RbmParams {
    /// n_h x n_v weight matrix.
    pub w: RealMatrix,
    /// Visible bias, length n_v.
    pub b_v: RealVector,
    /// Hidden bias, length n_h.
    pub b_h: RealVector,
    pub visible_kind: VisibleKind,
}

impl RbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize, visible_kind: VisibleKind) -> Self {
        RbmParams {
            w: Array2::zeros((n_hidden, n_visible)),
            b_v: Array1::zeros(n_visible),
            b_h: Array1::zeros(n_hidden),
            visible_kind,
        }
    }

    /// Small random weights, zero biases. Keeps early Gibbs chains fast-mixing.
    pub fn random(
        n_visible: usize,
        n_hidden: usize,
        visible_kind: VisibleKind,
        weight_std: f64,
        rng: &mut Prng,
    ) -> Self {
        let mut rbm = Self::zeros(n_visible, n_hidden, visible_kind);
        rbm.w.mapv_inplace(|_| weight_std * rng.normal());
        rbm
    }

    pub fn n_visible(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.w.nrows()
    }

    fn check_visible(&self, v: &RealVector, context: &'static str) -> Result<()> {
        if v.len() != self.n_visible() {
            return Err(Error::dim(context, self.n_visible(), v.len()));
        }
        Ok(())
    }

    /// Joint energy E(v, h). For the Gaussian variant the quadratic visible
    /// term is included.
    pub fn energy(&self, v: &RealVector, h: &RealVector) -> Result<f64> {
        self.check_visible(v, "energy visible")?;
        if h.len() != self.n_hidden() {
            return Err(Error::dim("energy hidden", self.n_hidden(), h.len()));
        }
        let quad = match self.visible_kind {
            VisibleKind::Binary => 0.0,
            VisibleKind::GaussianUnitVariance => 0.5 * v.dot(v),
        };
        Ok(quad - self.b_v.dot(v) - self.b_h.dot(h) - h.dot(&self.w.dot(v)))
    }
}

/// Gradient of the CD cost with respect to an [`RbmParams`].
#[derive(Debug, Clone)]
pub struct RbmGradient {
    pub d_w: RealMatrix,
    pub d_b_v: RealVector,
    pub d_b_h: RealVector,
}

impl RbmGradient {
    pub fn zeros(rbm: &RbmParams) -> Self {
        RbmGradient {
            d_w: Array2::zeros(rbm.w.raw_dim()),
            d_b_v: Array1::zeros(rbm.n_visible()),
            d_b_h: Array1::zeros(rbm.n_hidden()),
        }
    }
}

/// P(h_i = 1 | v), element-wise sigmoid of b_h + W v.
pub fn hidden_conditional(rbm: &RbmParams, v: &RealVector) -> Result<RealVector> {
    rbm.check_visible(v, "hidden_conditional")?;
    let pre = &rbm.b_h + &rbm.w.dot(v);
    Ok(pre.mapv(sigmoid_scalar))
}

/// Visible conditional given a hidden configuration: Bernoulli means for the
/// binary kind, Gaussian means for the Gaussian kind.
pub fn visible_conditional(rbm: &RbmParams, h: &RealVector) -> Result<RealVector> {
    if h.len() != rbm.n_hidden() {
        return Err(Error::dim("visible_conditional", rbm.n_hidden(), h.len()));
    }
    let mean = &rbm.b_v + &rbm.w.t().dot(h);
    Ok(match rbm.visible_kind {
        VisibleKind::Binary => mean.mapv(sigmoid_scalar),
        VisibleKind::GaussianUnitVariance => mean,
    })
}

/// Free energy F(v), the negative log of the unnormalized visible marginal.
pub fn free_energy(rbm: &RbmParams, v: &RealVector) -> Result<f64> {
    rbm.check_visible(v, "free_energy")?;
    let wv = rbm.w.dot(v);
    let hidden_term: f64 = wv
        .iter()
        .zip(rbm.b_h.iter())
        .map(|(&x, &b)| softplus(b + x))
        .sum();
    let visible_term = match rbm.visible_kind {
        VisibleKind::Binary => -rbm.b_v.dot(v),
        VisibleKind::GaussianUnitVariance => 0.5 * v.dot(v) - rbm.b_v.dot(v),
    };
    Ok(visible_term - hidden_term)
}

/// One block Gibbs step: sample h | v, then v' | h.
pub fn gibbs_step(rbm: &RbmParams, v: &RealVector, rng: &mut Prng) -> Result<RealVector> {
    let h_mean = hidden_conditional(rbm, v)?;
    let h = sample_bernoulli(&h_mean, rng)?;
    let v_mean = visible_conditional(rbm, &h)?;
    Ok(match rbm.visible_kind {
        VisibleKind::Binary => sample_bernoulli(&v_mean, rng)?,
        VisibleKind::GaussianUnitVariance => v_mean.mapv(|m| m + rng.normal()),
    })
}

/// Result of a k-step Gibbs chain: the final sample and the final-step
/// mean-field visible activations (used by the prediction protocol).
#[derive(Debug, Clone)]
pub struct GibbsChain {
    pub v_sample: RealVector,
    pub v_mean: RealVector,
}

/// Run k alternating steps of h|v and v|h starting at `v0`.
pub fn gibbs_chain(rbm: &RbmParams, v0: &RealVector, k: usize, rng: &mut Prng) -> Result<GibbsChain> {
    if k == 0 {
        return Err(Error::Config("Gibbs chain length must be >= 1".into()));
    }
    rbm.check_visible(v0, "gibbs_chain")?;
    let mut v = v0.clone();
    let mut v_mean = v0.clone();
    for _ in 0..k {
        let h_mean = hidden_conditional(rbm, &v)?;
        let h = sample_bernoulli(&h_mean, rng)?;
        v_mean = visible_conditional(rbm, &h)?;
        v = match rbm.visible_kind {
            VisibleKind::Binary => sample_bernoulli(&v_mean, rng)?,
            VisibleKind::GaussianUnitVariance => v_mean.mapv(|m| m + rng.normal()),
        };
    }
    Ok(GibbsChain { v_sample: v, v_mean })
}

/// CD-k gradient of the negative log-likelihood cost at a data vector.
///
/// The positive and negative phases use mean-field hidden activations; the
/// negative particle v* is the sampled end of a k-step Gibbs chain started
/// at the data. Returns the gradient and v* for reuse.
pub fn cd_gradient(
    rbm: &RbmParams,
    v: &RealVector,
    k: usize,
    rng: &mut Prng,
) -> Result<(RbmGradient, RealVector)> {
    rbm.check_visible(v, "cd_gradient")?;
    let chain = gibbs_chain(rbm, v, k, rng)?;
    let v_star = chain.v_sample;
    let h_data = hidden_conditional(rbm, v)?;
    let h_model = hidden_conditional(rbm, &v_star)?;
    let grad = RbmGradient {
        d_w: outer(&h_model, &v_star) - outer(&h_data, v),
        d_b_v: &v_star - v,
        d_b_h: &h_model - &h_data,
    };
    Ok((grad, v_star))
}

/// Binary vector for configuration index `idx` (bit j -> coordinate j).
pub fn bit_vector(idx: usize, n: usize) -> RealVector {
    Array1::from_shape_fn(n, |j| ((idx >> j) & 1) as f64)
}

/// log Z by exhaustive enumeration over the cheaper side.
///
/// Refuses when no side with at most [`ENUMERATION_LIMIT`] units exists. The
/// Gaussian kind integrates the visibles analytically and enumerates hidden
/// configurations only.
pub fn exact_log_partition(rbm: &RbmParams) -> Result<f64> {
    let (n_v, n_h) = (rbm.n_visible(), rbm.n_hidden());
    match rbm.visible_kind {
        VisibleKind::Binary => {
            if n_v.min(n_h) > ENUMERATION_LIMIT {
                return Err(Error::Unsupported(format!(
                    "exact partition needs one side <= {ENUMERATION_LIMIT} units, got {n_v}x{n_h}"
                )));
            }
            if n_v <= n_h {
                let terms: Vec<f64> = (0..1usize << n_v)
                    .map(|idx| -free_energy(rbm, &bit_vector(idx, n_v)).unwrap())
                    .collect();
                Ok(logsumexp(&terms))
            } else {
                // dual enumeration: -G(h) = b_h.h + sum_j softplus(b_v + W^T h)_j
                let terms: Vec<f64> = (0..1usize << n_h)
                    .map(|idx| {
                        let h = bit_vector(idx, n_h);
                        let pre = &rbm.b_v + &rbm.w.t().dot(&h);
                        rbm.b_h.dot(&h) + pre.iter().map(|&x| softplus(x)).sum::<f64>()
                    })
                    .collect();
                Ok(logsumexp(&terms))
            }
        }
        VisibleKind::GaussianUnitVariance => {
            if n_h > ENUMERATION_LIMIT {
                return Err(Error::Unsupported(format!(
                    "exact partition of the Gaussian kind needs n_h <= {ENUMERATION_LIMIT}, got {n_h}"
                )));
            }
            // integrate visibles: int exp(-|v|^2/2 + c.v) dv = (2pi)^(n_v/2) exp(|c|^2/2)
            let terms: Vec<f64> = (0..1usize << n_h)
                .map(|idx| {
                    let h = bit_vector(idx, n_h);
                    let c = &rbm.b_v + &rbm.w.t().dot(&h);
                    rbm.b_h.dot(&h) + 0.5 * c.dot(&c)
                })
                .collect();
            Ok(0.5 * n_v as f64 * (2.0 * std::f64::consts::PI).ln() + logsumexp(&terms))
        }
    }
}

/// Exact visible marginal over all 2^n_v configurations (test/evaluation aid).
pub fn visible_distribution(rbm: &RbmParams) -> Result<Vec<f64>> {
    if rbm.visible_kind != VisibleKind::Binary {
        return Err(Error::Unsupported(
            "visible_distribution needs binary visibles".into(),
        ));
    }
    let n_v = rbm.n_visible();
    if n_v > ENUMERATION_LIMIT {
        return Err(Error::Unsupported(format!(
            "visible_distribution needs n_v <= {ENUMERATION_LIMIT}"
        )));
    }
    let neg_f: Vec<f64> = (0..1usize << n_v)
        .map(|idx| -free_energy(rbm, &bit_vector(idx, n_v)).unwrap())
        .collect();
    let log_z = logsumexp(&neg_f);
    Ok(neg_f.iter().map(|&x| (x - log_z).exp()).collect())
}

/// Annealed importance sampling estimate of log Z for a binary RBM.
///
/// The base distribution is the same RBM with zero weights (biases retained);
/// the path scales W linearly from 0 to 1 over `n_betas` transitions. Returns
/// the log-partition estimate and the standard error of the log-weight mean.
pub fn ais_log_partition(
    rbm: &RbmParams,
    n_runs: usize,
    n_betas: usize,
    rng: &mut Prng,
) -> Result<(f64, f64)> {
    if rbm.visible_kind != VisibleKind::Binary {
        return Err(Error::Unsupported(
            "annealed importance sampling supports binary visibles only".into(),
        ));
    }
    if n_runs < 2 || n_betas < 2 {
        return Err(Error::Config(
            "AIS needs at least 2 runs and 2 temperatures".into(),
        ));
    }
    let log_z0: f64 = rbm.b_v.iter().map(|&b| softplus(b)).sum::<f64>()
        + rbm.b_h.iter().map(|&b| softplus(b)).sum::<f64>();

    // free energy with the weight matrix scaled by beta, reusing W v
    let tempered_free_energy = |beta: f64, v: &RealVector, wv: &RealVector| -> f64 {
        let hidden: f64 = wv
            .iter()
            .zip(rbm.b_h.iter())
            .map(|(&x, &b)| softplus(b + beta * x))
            .sum();
        -rbm.b_v.dot(v) - hidden
    };

    let mut log_weights = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let mut run_rng = rng.split();
        let base_mean = rbm.b_v.mapv(sigmoid_scalar);
        let mut v = sample_bernoulli(&base_mean, &mut run_rng)?;
        let mut log_w = 0.0;
        for s in 1..=n_betas {
            let beta_prev = (s - 1) as f64 / n_betas as f64;
            let beta = s as f64 / n_betas as f64;
            let wv = rbm.w.dot(&v);
            log_w += tempered_free_energy(beta_prev, &v, &wv) - tempered_free_energy(beta, &v, &wv);
            if s < n_betas {
                // one block Gibbs step under the intermediate model
                let h_mean = (&rbm.b_h + &(beta * &wv)).mapv(sigmoid_scalar);
                let h = sample_bernoulli(&h_mean, &mut run_rng)?;
                let v_mean = (&rbm.b_v + &(beta * &rbm.w.t().dot(&h))).mapv(sigmoid_scalar);
                v = sample_bernoulli(&v_mean, &mut run_rng)?;
            }
        }
        log_weights.push(log_w);
    }

    let estimate = log_z0 + logsumexp(&log_weights) - (n_runs as f64).ln();
    let mean = log_weights.iter().sum::<f64>() / n_runs as f64;
    let var = log_weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>()
        / (n_runs as f64 - 1.0);
    let stderr = (var / n_runs as f64).sqrt();
    Ok((estimate, stderr))
}

/// Training settings for a standalone RBM.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RbmTrainConfig {
    pub n_hidden: usize,
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplier applied to the learning rate after each epoch.
    pub lr_decay: f64,
    pub weight_std: f64,
    pub visible_kind: VisibleKind,
}

impl Default for RbmTrainConfig {
    fn default() -> Self {
        RbmTrainConfig {
            n_hidden: 50,
            k: 1,
            learning_rate: 0.05,
            epochs: 20,
            seed: 0,
            lr_decay: 1.0,
            weight_std: 0.01,
            visible_kind: VisibleKind::Binary,
        }
    }
}

/// Per-epoch diagnostics of [`train_rbm`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RbmEpochStats {
    pub epoch: usize,
    /// Mean F(data) - F(negative particle), the CD loss proxy.
    pub free_energy_gap: f64,
}

/// Stochastic CD-k training over a pool of frames.
pub fn train_rbm(frames: &[RealVector], config: &RbmTrainConfig) -> Result<(RbmParams, Vec<RbmEpochStats>)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Data("RBM training needs at least one frame".into()))?;
    let n_v = first.len();
    for f in frames {
        if f.len() != n_v {
            return Err(Error::dim("train_rbm frame", n_v, f.len()));
        }
    }
    if config.k == 0 {
        return Err(Error::Config("CD step count k must be >= 1".into()));
    }
    let mut rng = Prng::from_seed(config.seed);
    let mut rbm = RbmParams::random(n_v, config.n_hidden, config.visible_kind, config.weight_std, &mut rng);
    let mut lr = config.learning_rate;
    let mut stats = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut gap = 0.0;
        for &i in &order {
            let v = &frames[i];
            let (grad, v_star) = cd_gradient(&rbm, v, config.k, &mut rng)?;
            gap += free_energy(&rbm, v)? - free_energy(&rbm, &v_star)?;
            rbm.w.scaled_add(-lr, &grad.d_w);
            rbm.b_v.scaled_add(-lr, &grad.d_b_v);
            rbm.b_h.scaled_add(-lr, &grad.d_b_h);
        }
        stats.push(RbmEpochStats {
            epoch,
            free_energy_gap: gap / frames.len() as f64,
        });
        lr *= config.lr_decay;
    }
    Ok((rbm, stats))
}
