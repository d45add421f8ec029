//! Offline fitting of the RBF network to recorded exploration data.
//!
//! Every feature head contributes the smooth-L1 loss of its approximation
//! error `e_w = ẋ_i − Ĵ_i(φ) ṙ`; the target head aliases one feature head and
//! so adds nothing of its own. Centers, widths and weights are all trained.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adam::{Adam, AdamConfig};
use crate::dataset::{Dataset, TrainingSample};
use crate::kmeans::{kmeans, KMeansConfig, KMeansError};
use crate::loss::smooth_l1_loss;
use crate::rbfn::{Dims, Gradients, Head, NetworkError, RbfNetwork, SIGMA_MIN};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Clone, Debug)]
pub struct TrainConfig<T> {
    /// neurons
    pub q: usize,
    /// smooth-L1 threshold, in normalized velocity units
    pub beta: T,
    pub adam: AdamConfig<T>,
    pub batch_size: usize,
    pub epochs: usize,
    /// φ vectors drawn for k-means
    pub kmeans_subsample: usize,
    pub kmeans_iterations: usize,
    /// width floor in normalized input units
    pub sigma_min: T,
    /// feature the stored target head aliases
    pub target_feature: usize,
    pub seed: u64,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            q: 256,
            beta: T::one(),
            adam: AdamConfig::default(),
            batch_size: 256,
            epochs: 200,
            kmeans_subsample: 10_000,
            kmeans_iterations: 50,
            sigma_min: T::of(SIGMA_MIN),
            target_feature: 4,
            seed: 0,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.beta > T::zero()) {
            return bad("beta must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.q == 0 {
            return bad("q must be at least 1");
        }
        if !(self.sigma_min > T::zero()) {
            return bad("sigma_min must be positive");
        }
        Ok(())
    }
}

/// Affine map into the space the network is trained in:
/// `φ_n = (φ − offset) / input_scale`, velocities divided by `velocity_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization<T> {
    pub offset: Vec<T>,
    pub input_scale: T,
    pub velocity_scale: T,
}

impl<T: Real> Normalization<T> {
    /// Per-channel mean; one shared input scale (root-mean-square of the
    /// per-channel standard deviations) so that an isotropic Gaussian stays
    /// isotropic; one velocity scale (RMS of all feature velocities).
    pub fn fit(data: &Dataset<T>) -> Self {
        let d = data.l * data.m;
        let count = T::of(data.samples.len().max(1) as f64);
        let mut offset = vec![T::zero(); d];
        for s in &data.samples {
            for (o, &x) in offset.iter_mut().zip(&s.phi) {
                *o += x;
            }
        }
        offset.iter_mut().for_each(|o| *o /= count);
        let mut var = T::zero();
        let mut vel = T::zero();
        for s in &data.samples {
            var += s.phi.iter().zip(&offset).map(|(&x, &o)| (x - o) * (x - o)).sum::<T>();
            vel += s.xdot.iter().map(|&v| v * v).sum::<T>();
        }
        let input_scale = (var / (count * T::of(d as f64))).sqrt();
        let velocity_scale = (vel / (count * T::of(data.xdot_len() as f64))).sqrt();
        let positive = |v: T| if v > T::zero() && v.is_finite() { v } else { T::one() };
        Self { offset, input_scale: positive(input_scale), velocity_scale: positive(velocity_scale) }
    }

    pub fn identity(d: usize) -> Self {
        Self { offset: vec![T::zero(); d], input_scale: T::one(), velocity_scale: T::one() }
    }

    pub fn apply(&self, s: &TrainingSample<T>) -> TrainingSample<T> {
        let inv = T::one() / self.velocity_scale;
        TrainingSample {
            t: s.t,
            phi: s.phi.iter().zip(&self.offset).map(|(&x, &o)| (x - o) / self.input_scale).collect(),
            rdot: s.rdot.iter().map(|&v| v * inv).collect(),
            xdot: s.xdot.iter().map(|&v| v * inv).collect(),
        }
    }

    /// Network taking raw shapes that predicts exactly what `normalized` predicts on normalized shapes.
    pub fn denormalize(&self, normalized: &RbfNetwork<T>) -> RbfNetwork<T> {
        normalized.fold_input_affine(&self.offset, self.input_scale)
    }
}

impl<T: Real> Dataset<T> {
    fn xdot_len(&self) -> usize {
        self.l * self.m
    }
}

/// Loss of one sample summed over every feature head, and its gradient.
pub fn sample_loss<T: Real>(net: &RbfNetwork<T>, s: &TrainingSample<T>, beta: T, grads: Option<&mut Gradients<T>>) -> T {
    let dims = net.dims();
    let theta = net.activations(&s.phi);
    let mut total = T::zero();
    let mut out_grad = grads.as_ref().map(|_| vec![T::zero(); dims.feature_rows()]);
    for f in 0..dims.m {
        let jac = net.jacobian_from_activations(&theta, Head::Feature(f));
        let pred = jac.mul_vec(&s.rdot);
        let e: Vec<T> = s.feature_velocity(f, dims.l).iter().zip(&pred).map(|(&y, &p)| y - p).collect();
        let (loss, de) = smooth_l1_loss(&e, beta);
        total += loss;
        if let Some(g) = out_grad.as_mut() {
            let base = f * dims.block_rows();
            for (c, &r) in s.rdot.iter().enumerate() {
                for (j, &dej) in de.iter().enumerate() {
                    // ∂e_j/∂Ĵ[j, c] = −ṙ_c
                    g[base + c * dims.l + j] = -dej * r;
                }
            }
        }
    }
    if let (Some(grads), Some(g)) = (grads, out_grad) {
        net.backward(&s.phi, &theta, &g, grads);
    }
    total
}

/// Batch-mean loss and its exact gradient with respect to weights, centers and widths.
pub fn backprop<T: Real>(net: &RbfNetwork<T>, batch: &[&TrainingSample<T>], beta: T) -> (T, Gradients<T>) {
    let mut grads = Gradients::zeros(net.dims());
    let mut loss = T::zero();
    for s in batch {
        loss += sample_loss(net, s, beta, Some(&mut grads));
    }
    let inv = T::one() / T::of(batch.len().max(1) as f64);
    grads.scale(inv);
    (loss * inv, grads)
}

/// Mean per-sample loss of `net` (raw-input network) on `data`, with velocities
/// divided by `velocity_scale`.
pub fn evaluate_loss<T: Real>(net: &RbfNetwork<T>, data: &Dataset<T>, velocity_scale: T, beta: T) -> T {
    if data.samples.is_empty() {
        return T::zero();
    }
    let norm = Normalization { offset: vec![T::zero(); data.l * data.m], input_scale: T::one(), velocity_scale };
    let total: T = data.samples.iter().map(|s| sample_loss(net, &norm.apply(s), beta, None)).sum();
    total / T::of(data.samples.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// raw-input network, ready for the controller
    pub network: RbfNetwork<T>,
    /// the k-means-initialized network with all-zero weights
    pub initial: RbfNetwork<T>,
    pub normalization: Normalization<T>,
    /// mean training loss per epoch, normalized units
    pub loss_history: Vec<T>,
}

/// Normalizes, initializes by k-means, then runs mini-batch Adam.
pub fn train<T: Real>(data: &Dataset<T>, cfg: &TrainConfig<T>) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(TrainError::InvalidConfig("empty dataset".into()));
    }
    let dims = Dims { q: cfg.q, l: data.l, n: data.n, m: data.m };
    if cfg.target_feature >= dims.m {
        return Err(TrainError::InvalidConfig(format!("target feature {} out of range", cfg.target_feature)));
    }
    let norm = Normalization::fit(data);
    let samples: Vec<TrainingSample<T>> = data.samples.iter().map(|s| norm.apply(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pick: Vec<usize> = (0..samples.len()).collect();
    pick.shuffle(&mut rng);
    pick.truncate(cfg.kmeans_subsample.max(cfg.q));
    let points: Vec<&[T]> = pick.iter().map(|&i| samples[i].phi.as_slice()).collect();
    let km = kmeans(
        &points,
        &KMeansConfig {
            k: cfg.q,
            max_iterations: cfg.kmeans_iterations,
            tolerance: T::of(1e-6),
            sigma_min: cfg.sigma_min,
            seed: cfg.seed,
        },
    )?;
    let mut net = RbfNetwork::with_zero_weights(dims, km.centers, km.widths, cfg.target_feature)?;
    net.set_sigma_min(cfg.sigma_min);
    let initial = norm.denormalize(&net);

    let mut adam = Adam::new(cfg.adam, &[dims.feature_rows() * dims.q, dims.q * dims.input_len(), dims.q]);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingSample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = backprop(&net, &batch, cfg.beta);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            epoch_loss += loss * T::of(chunk.len() as f64);
            let [w, c, s] = net.parameters_mut();
            adam.step(&mut [w, c, s], &[&grads.weights, &grads.centers, &grads.widths]);
            net.clamp_widths();
        }
        let mean = epoch_loss / T::of(samples.len() as f64);
        if !mean.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(mean);
    }
    Ok(TrainOutcome { network: norm.denormalize(&net), initial, normalization: norm, loss_history: history })
}
