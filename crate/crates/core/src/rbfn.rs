//! Gaussian RBF network mapping a DLO shape to deformation Jacobians.
//!
//! One hidden layer (centers, widths) is shared by every output head. Each
//! head produces `vec(Ĵ)` for one feature, where `vec` stacks the columns of
//! the l×n Jacobian, so rows `c·l .. (c+1)·l` of a head block realize column
//! `c` of `Ĵ`. The target head is an alias for one feature head and owns no
//! weights of its own.

use crate::linalg::Matrix;
use crate::scalar::{dist2, Real};
use crate::sim::ShapeVector;

/// Default lower bound for neuron widths.
pub const SIGMA_MIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Feature(usize),
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// neurons
    pub q: usize,
    /// position dimension of a feature
    pub l: usize,
    /// input (gripper velocity) dimension
    pub n: usize,
    /// tracked features
    pub m: usize,
}

impl Dims {
    pub fn input_len(&self) -> usize {
        self.l * self.m
    }

    pub fn block_rows(&self) -> usize {
        self.l * self.n
    }

    /// Rows of the feature blocks that own weights.
    pub fn feature_rows(&self) -> usize {
        self.block_rows() * self.m
    }

    /// Rows counting the target alias as its own head.
    pub fn modeled_rows(&self) -> usize {
        self.block_rows() * (self.m + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbfNetwork<T> {
    dims: Dims,
    /// q × (l·m), row-major
    centers: Vec<T>,
    widths: Vec<T>,
    /// (l·n·m) × q, row-major
    weights: Vec<T>,
    target: usize,
    sigma_min: T,
}

/// Ĵ evaluated at a shape.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianEstimate<T> {
    pub matrix: Matrix<T>,
    pub shape_input: ShapeVector<T>,
}

impl<T: Real> JacobianEstimate<T> {
    /// `ŷ̇ = Ĵ ṙ`
    pub fn predict_velocity(&self, rdot: &[T]) -> Vec<T> {
        self.matrix.mul_vec(rdot)
    }

    /// `Σ_i Ĵ_i ṙ_i`, accumulated column by column.
    pub fn predict_velocity_by_columns(&self, rdot: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.matrix.rows()];
        for (i, &ri) in rdot.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.matrix.column(i)) {
                *o += c * ri;
            }
        }
        out
    }
}

/// Parameter gradients laid out exactly like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<T>,
    pub centers: Vec<T>,
    pub widths: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            weights: vec![T::zero(); dims.feature_rows() * dims.q],
            centers: vec![T::zero(); dims.q * dims.input_len()],
            widths: vec![T::zero(); dims.q],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in self.iter_mut() {
            *a *= s;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.weights.iter().chain(&self.centers).chain(&self.widths).copied()
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.centers.iter_mut()).chain(self.widths.iter_mut())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("{what}: expected length {expected}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("width {index} = {value} is not positive and finite")]
    BadWidth { index: usize, value: f64 },
    #[error("non-finite parameter in {0}")]
    NonFinite(&'static str),
    #[error("target feature {0} out of range")]
    TargetOutOfRange(usize),
}

impl<T: Real> RbfNetwork<T> {
    /// Builds a network from raw parameter arrays (weights cover the m feature blocks).
    pub fn new(dims: Dims, centers: Vec<T>, widths: Vec<T>, weights: Vec<T>, target: usize) -> Result<Self, NetworkError> {
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(NetworkError::Length { what, expected, got })
            }
        };
        check("centers", dims.q * dims.input_len(), centers.len())?;
        check("widths", dims.q, widths.len())?;
        check("weights", dims.feature_rows() * dims.q, weights.len())?;
        if target >= dims.m {
            return Err(NetworkError::TargetOutOfRange(target));
        }
        if !crate::scalar::all_finite(&centers) {
            return Err(NetworkError::NonFinite("centers"));
        }
        if !crate::scalar::all_finite(&weights) {
            return Err(NetworkError::NonFinite("weights"));
        }
        for (index, &w) in widths.iter().enumerate() {
            if !(w > T::zero()) || !w.is_finite() {
                return Err(NetworkError::BadWidth { index, value: w.f64() });
            }
        }
        let floor = widths.iter().fold(T::of(SIGMA_MIN), |a, &b| a.min(b));
        Ok(Self { dims, centers, widths, weights, target, sigma_min: floor })
    }

    /// All-zero weights with the given hidden layer.
    pub fn with_zero_weights(dims: Dims, centers: Vec<T>, widths: Vec<T>, target: usize) -> Result<Self, NetworkError> {
        let w = vec![T::zero(); dims.feature_rows() * dims.q];
        Self::new(dims, centers, widths, w, target)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> &[T] {
        let d = self.dims.input_len();
        &self.centers[i * d..(i + 1) * d]
    }

    pub fn widths(&self) -> &[T] {
        &self.widths
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn sigma_min(&self) -> T {
        self.sigma_min
    }

    pub fn set_sigma_min(&mut self, floor: T) {
        self.sigma_min = floor;
        self.clamp_widths();
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn set_target(&mut self, feature: usize) -> Result<(), NetworkError> {
        if feature >= self.dims.m {
            return Err(NetworkError::TargetOutOfRange(feature));
        }
        self.target = feature;
        Ok(())
    }

    pub fn resolve(&self, head: Head) -> usize {
        match head {
            Head::Feature(f) => f,
            Head::Target => self.target,
        }
    }

    /// Mutable views of every trainable parameter group: weights, centers, widths.
    pub fn parameters_mut(&mut self) -> [&mut [T]; 3] {
        [&mut self.weights, &mut self.centers, &mut self.widths]
    }

    pub fn clamp_widths(&mut self) {
        for w in &mut self.widths {
            if *w < self.sigma_min {
                *w = self.sigma_min;
            }
        }
    }

    /// Row range of the weight block behind `head`.
    pub fn block_range(&self, head: Head) -> std::ops::Range<usize> {
        let f = self.resolve(head);
        let rows = self.dims.block_rows();
        f * rows..(f + 1) * rows
    }

    /// Weight row for output entry (`row`, `col`) of `head`'s Jacobian.
    pub fn weight_row(&self, head: Head, row: usize, col: usize) -> usize {
        self.block_range(head).start + col * self.dims.l + row
    }

    /// `θ_i(φ) = exp(−‖φ − μ_i‖² / σ_i²)`
    pub fn activations(&self, phi: &[T]) -> Vec<T> {
        assert_eq!(phi.len(), self.dims.input_len(), "shape vector length");
        (0..self.dims.q)
            .map(|i| {
                let s = self.widths[i];
                (-dist2(phi, self.center(i)) / (s * s)).exp()
            })
            .collect()
    }

    /// `vec(Ĵ)` of `head` for precomputed activations.
    pub fn head_output(&self, theta: &[T], head: Head) -> Vec<T> {
        let q = self.dims.q;
        self.block_range(head)
            .map(|r| crate::scalar::dot(&self.weights[r * q..(r + 1) * q], theta))
            .collect()
    }

    pub fn jacobian_from_activations(&self, theta: &[T], head: Head) -> Matrix<T> {
        Matrix::from_column_stacked(self.dims.l, self.dims.n, &self.head_output(theta, head))
    }

    pub fn estimate_jacobian(&self, phi: &[T], head: Head) -> JacobianEstimate<T> {
        let theta = self.activations(phi);
        JacobianEstimate { matrix: self.jacobian_from_activations(&theta, head), shape_input: phi.to_vec() }
    }

    /// `e_w = ẏ − Ĵ(φ) ṙ`
    pub fn approximation_error(&self, phi: &[T], head: Head, rdot: &[T], ydot: &[T]) -> Vec<T> {
        let pred = self.estimate_jacobian(phi, head).predict_velocity(rdot);
        ydot.iter().zip(pred).map(|(&y, p)| y - p).collect()
    }

    /// Accumulates into `grads` the parameter gradient of `Σ_r g_r · out_r`,
    /// where `out` is the stacked output of all feature blocks at `phi` and
    /// `out_grad = g` has one entry per feature-block row.
    pub fn backward(&self, phi: &[T], theta: &[T], out_grad: &[T], grads: &mut Gradients<T>) {
        let Dims { q, .. } = self.dims;
        let d = self.dims.input_len();
        debug_assert_eq!(out_grad.len(), self.dims.feature_rows());
        let mut dtheta = vec![T::zero(); q];
        for (r, &g) in out_grad.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let w = &self.weights[r * q..(r + 1) * q];
            let gw = &mut grads.weights[r * q..(r + 1) * q];
            for i in 0..q {
                gw[i] += g * theta[i];
                dtheta[i] += g * w[i];
            }
        }
        let two = T::of(2.0);
        for i in 0..q {
            let s = self.widths[i];
            let common = dtheta[i] * theta[i] * two / (s * s);
            if common == T::zero() {
                continue;
            }
            let mu = self.center(i);
            let gc = &mut grads.centers[i * d..(i + 1) * d];
            let mut dd = T::zero();
            for k in 0..d {
                let diff = phi[k] - mu[k];
                gc[k] += common * diff;
                dd += diff * diff;
            }
            grads.widths[i] += common * dd / s;
        }
    }

    /// Replaces centers and widths with an affinely mapped copy: inputs `φ`
    /// of the returned network relate to this one by `φ_self = (φ − offset) / scale`.
    pub fn fold_input_affine(&self, offset: &[T], scale: T) -> Self {
        let d = self.dims.input_len();
        let mut out = self.clone();
        for i in 0..self.dims.q {
            for k in 0..d {
                out.centers[i * d + k] = offset[k] + scale * self.centers[i * d + k];
            }
            out.widths[i] = scale * self.widths[i];
        }
        out.sigma_min = scale * self.sigma_min;
        out
    }
}
