//! Things the closed loop can drive.

use thiserror::Error;

use crate::rbfn::{Head, RbfNetwork};
use crate::scalar::Real;
use crate::sim::{RodState, ShapeVector, SimConfig, SimError, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("control period {0} s is not a whole number of simulator steps")]
    Period(f64),
    #[error("this plant cannot nail features")]
    NailUnsupported,
    #[error("feature {0} out of range")]
    FeatureOutOfRange(usize),
}

/// Velocity-driven plant: the gripper integrates the commanded velocity.
pub trait Plant<T: Real> {
    /// number of tracked features
    fn feature_count(&self) -> usize;
    /// φ
    fn shape(&self) -> ShapeVector<T>;
    fn feature(&self, i: usize) -> Vec3<T> {
        let phi = self.shape();
        [phi[3 * i], phi[3 * i + 1], phi[3 * i + 2]]
    }
    fn gripper(&self) -> Vec3<T>;
    fn time(&self) -> T;
    /// Holds `u` for `dt` seconds.
    fn advance(&mut self, u: Vec3<T>, dt: T) -> Result<(), PlantError>;
    fn nail_feature(&mut self, _feature: usize) -> Result<(), PlantError> {
        Err(PlantError::NailUnsupported)
    }
    fn is_nailed(&self, _feature: usize) -> bool {
        false
    }
}

/// The mass-spring rod.
#[derive(Clone, Debug)]
pub struct RodPlant<T> {
    pub state: RodState<T>,
    pub config: SimConfig<T>,
}

impl<T: Real> RodPlant<T> {
    pub fn new(state: RodState<T>, config: SimConfig<T>) -> Self {
        Self { state, config }
    }
}

impl<T: Real> Plant<T> for RodPlant<T> {
    fn feature_count(&self) -> usize {
        self.config.feature_count
    }

    fn shape(&self) -> ShapeVector<T> {
        self.state.extract_features(self.config.feature_count).expect("validated feature count")
    }

    fn feature(&self, i: usize) -> Vec3<T> {
        self.state.feature_position(i, self.config.feature_count).expect("feature index in range")
    }

    fn gripper(&self) -> Vec3<T> {
        self.state.gripper_position()
    }

    fn time(&self) -> T {
        self.state.time
    }

    fn advance(&mut self, u: Vec3<T>, dt: T) -> Result<(), PlantError> {
        let ratio = dt / self.config.dt;
        let steps = ratio.round().to_usize().unwrap_or(0);
        if steps == 0 || (ratio - T::of(steps as f64)).abs() > T::of(1e-9) {
            return Err(PlantError::Period(dt.f64()));
        }
        for _ in 0..steps {
            self.state.step(u, &self.config)?;
        }
        Ok(())
    }

    fn nail_feature(&mut self, feature: usize) -> Result<(), PlantError> {
        Ok(self.state.nail_feature(feature, self.config.feature_count)?)
    }

    fn is_nailed(&self, feature: usize) -> bool {
        self.state.is_feature_nailed(feature, self.config.feature_count)
    }
}

/// Plant whose every feature Jacobian is exactly an RBF network:
/// `ẋ_i = J_i(φ) u`, integrated with explicit Euler.
#[derive(Clone, Debug)]
pub struct SyntheticPlant<T> {
    pub truth: RbfNetwork<T>,
    phi: Vec<T>,
    gripper: Vec3<T>,
    time: T,
}

impl<T: Real> SyntheticPlant<T> {
    pub fn new(truth: RbfNetwork<T>, phi: Vec<T>, gripper: Vec3<T>) -> Self {
        assert_eq!(phi.len(), truth.dims().input_len(), "shape length");
        Self { truth, phi, gripper, time: T::zero() }
    }
}

impl<T: Real> Plant<T> for SyntheticPlant<T> {
    fn feature_count(&self) -> usize {
        self.truth.dims().m
    }

    fn shape(&self) -> ShapeVector<T> {
        self.phi.clone()
    }

    fn gripper(&self) -> Vec3<T> {
        self.gripper
    }

    fn time(&self) -> T {
        self.time
    }

    fn advance(&mut self, u: Vec3<T>, dt: T) -> Result<(), PlantError> {
        let theta = self.truth.activations(&self.phi);
        let l = self.truth.dims().l;
        let mut next = self.phi.clone();
        for f in 0..self.truth.dims().m {
            let v = self.truth.jacobian_from_activations(&theta, Head::Feature(f)).mul_vec(&u);
            for (x, dv) in next[f * l..(f + 1) * l].iter_mut().zip(v) {
                *x += dt * dv;
            }
        }
        self.phi = next;
        for k in 0..3 {
            self.gripper[k] += dt * u[k];
        }
        self.time += dt;
        Ok(())
    }
}
