//! Mass-spring-damper rod.
//!
//! A chain of point masses joined by stretch springs (adjacent particles) and
//! bend springs (next-nearest particles). Particle 0 is anchored for the whole
//! run, the last particle is rigidly held by the gripper, and any particle may
//! be nailed to the world mid-run. Internal particles are integrated with
//! semi-implicit Euler over `substeps` sub-intervals of each step.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Real;

pub type Vec3<T> = [T; 3];

/// Stacked feature positions `[x_1; …; x_m]`.
pub type ShapeVector<T> = Vec<T>;

/// Spatial dimension of features and of the gripper velocity.
pub const DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation diverged: particle {particle} is not finite at t = {time} s")]
    Diverged { particle: usize, time: f64 },
    #[error("gripper velocity is not finite")]
    NonFiniteInput,
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
    #[error("feature {feature} out of range for {count} features")]
    FeatureOutOfRange { feature: usize, count: usize },
    #[error("{features} features do not fit on a rod of {particles} particles")]
    TooManyFeatures { features: usize, particles: usize },
    #[error("removing a nail is not supported")]
    UnnailUnsupported,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig<T> {
    pub particle_count: usize,
    /// m
    pub feature_count: usize,
    /// meters
    pub rod_length: T,
    /// N/m
    pub stretch_stiffness: T,
    /// N/m, applied to next-nearest springs
    pub bend_stiffness: T,
    /// viscous drag on absolute particle velocity, N·s/m
    pub damping: T,
    /// damping along each stretch spring, N·s/m
    pub internal_damping: T,
    /// kg
    pub particle_mass: T,
    /// seconds per step
    pub dt: T,
    pub substeps: usize,
    pub gravity: Vec3<T>,
    /// optional z-height the rod cannot sink below
    pub table_plane: Option<T>,
    /// seconds of zero-input settling used by [`RodState::probe_true_jacobian`]
    pub settle_time: T,
}

impl<T: Real> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            particle_count: 40,
            feature_count: 10,
            rod_length: T::of(0.5),
            stretch_stiffness: T::of(2000.0),
            bend_stiffness: T::of(100.0),
            damping: T::of(0.035),
            internal_damping: T::of(0.02),
            particle_mass: T::of(0.0025),
            dt: T::of(0.005),
            substeps: 16,
            gravity: [T::zero(), T::zero(), T::of(-9.81)],
            table_plane: None,
            settle_time: T::of(0.5),
        }
    }
}

impl<T: Real> SimConfig<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if self.particle_count < 3 {
            return bad("particle_count must be at least 3");
        }
        if self.feature_count + 2 > self.particle_count {
            return Err(SimError::TooManyFeatures {
                features: self.feature_count,
                particles: self.particle_count,
            });
        }
        if !(self.dt > T::zero()) {
            return bad("dt must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if !(self.stretch_stiffness > T::zero()) || !(self.bend_stiffness > T::zero()) {
            return bad("stiffnesses must be positive");
        }
        if !(self.particle_mass > T::zero()) {
            return bad("particle_mass must be positive");
        }
        if self.damping < T::zero() || self.internal_damping < T::zero() {
            return bad("damping must be non-negative");
        }
        if !(self.rod_length > T::zero()) {
            return bad("rod_length must be positive");
        }
        Ok(())
    }

    pub fn segment_length(&self) -> T {
        self.rod_length / T::of((self.particle_count - 1) as f64)
    }

    /// Particle indices of the `m` tracked features: equally spaced in arc
    /// length, endpoints excluded.
    pub fn feature_particles(&self, m: usize) -> Result<Vec<usize>, SimError> {
        feature_particles(self.particle_count, m)
    }
}

pub fn feature_particles(particle_count: usize, m: usize) -> Result<Vec<usize>, SimError> {
    if m + 2 > particle_count {
        return Err(SimError::TooManyFeatures { features: m, particles: particle_count });
    }
    let span = particle_count - 1;
    Ok((1..=m).map(|k| (k * span + (m + 1) / 2) / (m + 1)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RodState<T> {
    pub positions: Vec<Vec3<T>>,
    pub velocities: Vec<Vec3<T>>,
    /// rest length of each stretch spring (i, i+1)
    pub rest_lengths: Vec<T>,
    /// rest length of each bend spring (i, i+2)
    pub bend_rest_lengths: Vec<T>,
    /// pinned particle → world position
    pub nailed: BTreeMap<usize, Vec3<T>>,
    pub anchor_index: usize,
    pub gripper_index: usize,
    pub time: T,
}

impl<T: Real> RodState<T> {
    /// Straight rod at rest along +x starting at `origin`; the anchor is particle 0.
    pub fn straight(cfg: &SimConfig<T>, origin: Vec3<T>) -> Result<Self, SimError> {
        cfg.validate()?;
        let n = cfg.particle_count;
        let seg = cfg.segment_length();
        let positions: Vec<Vec3<T>> = (0..n)
            .map(|i| [origin[0] + seg * T::of(i as f64), origin[1], origin[2]])
            .collect();
        Ok(Self {
            velocities: vec![[T::zero(); 3]; n],
            rest_lengths: vec![seg; n - 1],
            bend_rest_lengths: vec![seg + seg; n - 2],
            positions,
            nailed: BTreeMap::new(),
            anchor_index: 0,
            gripper_index: n - 1,
            time: T::zero(),
        })
    }

    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    pub fn gripper_position(&self) -> Vec3<T> {
        self.positions[self.gripper_index]
    }

    pub fn total_rest_length(&self) -> T {
        self.rest_lengths.iter().copied().sum()
    }

    fn is_pinned(&self, i: usize) -> bool {
        i == self.anchor_index || i == self.gripper_index || self.nailed.contains_key(&i)
    }

    /// Advances one step of `cfg.dt` with the gripper moving at `gripper_velocity`.
    pub fn step(&mut self, gripper_velocity: Vec3<T>, cfg: &SimConfig<T>) -> Result<(), SimError> {
        if !gripper_velocity.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFiniteInput);
        }
        let n = self.particle_count();
        let h = cfg.dt / T::of(cfg.substeps as f64);
        let grip_start = self.positions[self.gripper_index];
        let inv_mass = T::one() / cfg.particle_mass;
        let mut forces = vec![[T::zero(); 3]; n];

        for sub in 1..=cfg.substeps {
            for (f, v) in forces.iter_mut().zip(&self.velocities) {
                for k in 0..3 {
                    f[k] = cfg.particle_mass * cfg.gravity[k] - cfg.damping * v[k];
                }
            }
            for i in 0..n - 1 {
                self.spring_force(i, i + 1, self.rest_lengths[i], cfg.stretch_stiffness, cfg.internal_damping, &mut forces);
            }
            for i in 0..n.saturating_sub(2) {
                self.spring_force(i, i + 2, self.bend_rest_lengths[i], cfg.bend_stiffness, T::zero(), &mut forces);
            }

            for i in 0..n {
                if self.is_pinned(i) {
                    continue;
                }
                let (x, v) = (&mut self.positions[i], &mut self.velocities[i]);
                for k in 0..3 {
                    v[k] += h * forces[i][k] * inv_mass;
                    x[k] += h * v[k];
                }
                if let Some(z) = cfg.table_plane {
                    if x[2] < z {
                        x[2] = z;
                        v[2] = T::zero();
                    }
                }
            }

            let g = self.gripper_index;
            let frac = T::of(sub as f64) / T::of(cfg.substeps as f64);
            for k in 0..3 {
                self.positions[g][k] = grip_start[k] + gripper_velocity[k] * cfg.dt * frac;
            }
            self.velocities[g] = gripper_velocity;
        }
        // the last sub-step lands exactly on start + v·dt
        for k in 0..3 {
            self.positions[self.gripper_index][k] = grip_start[k] + gripper_velocity[k] * cfg.dt;
        }
        self.velocities[self.anchor_index] = [T::zero(); 3];
        for (&i, p) in &self.nailed {
            self.positions[i] = *p;
            self.velocities[i] = [T::zero(); 3];
        }
        self.time += cfg.dt;

        for (i, (x, v)) in self.positions.iter().zip(&self.velocities).enumerate() {
            if !x.iter().chain(v.iter()).all(|c| c.is_finite()) {
                return Err(SimError::Diverged { particle: i, time: self.time.f64() });
            }
        }
        Ok(())
    }

    fn spring_force(&self, a: usize, b: usize, rest: T, k: T, c: T, forces: &mut [Vec3<T>]) {
        let (pa, pb) = (self.positions[a], self.positions[b]);
        let d = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if len <= T::epsilon() {
            return;
        }
        let dir = [d[0] / len, d[1] / len, d[2] / len];
        let mut magnitude = k * (len - rest);
        if c > T::zero() {
            let (va, vb) = (self.velocities[a], self.velocities[b]);
            let closing: T = (0..3).map(|i| (vb[i] - va[i]) * dir[i]).sum();
            magnitude += c * closing;
        }
        for i in 0..3 {
            forces[a][i] += magnitude * dir[i];
            forces[b][i] -= magnitude * dir[i];
        }
    }

    /// Steps with zero gripper velocity for `duration` seconds.
    pub fn settle(&mut self, duration: T, cfg: &SimConfig<T>) -> Result<(), SimError> {
        let steps = (duration / cfg.dt).round().to_usize().unwrap_or(0);
        for _ in 0..steps {
            self.step([T::zero(); 3], cfg)?;
        }
        Ok(())
    }

    /// Moves the gripper to `target` in a straight line at `speed` m/s, then settles.
    pub fn move_gripper_to(&mut self, target: Vec3<T>, speed: T, cfg: &SimConfig<T>) -> Result<(), SimError> {
        let start = self.gripper_position();
        let delta = [target[0] - start[0], target[1] - start[1], target[2] - start[2]];
        let dist = crate::scalar::norm(&delta);
        let steps = (dist / (speed * cfg.dt)).ceil().to_usize().unwrap_or(0).max(1);
        let per_step = T::one() / (T::of(steps as f64) * cfg.dt);
        let v = [delta[0] * per_step, delta[1] * per_step, delta[2] * per_step];
        for _ in 0..steps {
            self.step(v, cfg)?;
        }
        Ok(())
    }

    pub fn particle_position(&self, i: usize) -> Vec3<T> {
        self.positions[i]
    }

    /// Positions of the `m` tracked features, concatenated in order from the anchor.
    pub fn extract_features(&self, m: usize) -> Result<ShapeVector<T>, SimError> {
        let idx = feature_particles(self.particle_count(), m)?;
        Ok(idx.iter().flat_map(|&i| self.positions[i]).collect())
    }

    pub fn feature_position(&self, feature: usize, m: usize) -> Result<Vec3<T>, SimError> {
        let idx = feature_particles(self.particle_count(), m)?;
        idx.get(feature)
            .map(|&i| self.positions[i])
            .ok_or(SimError::FeatureOutOfRange { feature, count: m })
    }

    /// Pins feature `feature` (of `m`) at its current position. Nailing twice is a no-op.
    pub fn nail_feature(&mut self, feature: usize, m: usize) -> Result<(), SimError> {
        let idx = feature_particles(self.particle_count(), m)?;
        let &particle = idx.get(feature).ok_or(SimError::FeatureOutOfRange { feature, count: m })?;
        let at = self.positions[particle];
        self.nailed.entry(particle).or_insert(at);
        self.velocities[particle] = [T::zero(); 3];
        Ok(())
    }

    pub fn is_feature_nailed(&self, feature: usize, m: usize) -> bool {
        feature_particles(self.particle_count(), m)
            .ok()
            .and_then(|idx| idx.get(feature).copied())
            .is_some_and(|p| self.nailed.contains_key(&p))
    }

    /// Nails are permanent.
    pub fn unnail_feature(&mut self, _feature: usize, _m: usize) -> Result<(), SimError> {
        Err(SimError::UnnailUnsupported)
    }

    /// Kinetic plus elastic energy; gravity potential is included when `cfg.gravity` is non-zero.
    pub fn energy(&self, cfg: &SimConfig<T>) -> T {
        let half = T::half();
        let kinetic: T = self
            .velocities
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.gripper_index)
            .map(|(_, v)| half * cfg.particle_mass * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum();
        let spring = |a: usize, b: usize, rest: T, k: T| {
            let (pa, pb) = (self.positions[a], self.positions[b]);
            let d2: T = (0..3).map(|i| (pb[i] - pa[i]) * (pb[i] - pa[i])).sum();
            let ext = d2.sqrt() - rest;
            half * k * ext * ext
        };
        let n = self.particle_count();
        let stretch: T = (0..n - 1).map(|i| spring(i, i + 1, self.rest_lengths[i], cfg.stretch_stiffness)).sum();
        let bend: T = (0..n - 2).map(|i| spring(i, i + 2, self.bend_rest_lengths[i], cfg.bend_stiffness)).sum();
        let gravity: T = self
            .positions
            .iter()
            .map(|p| -cfg.particle_mass * (0..3).map(|k| cfg.gravity[k] * p[k]).sum::<T>())
            .sum();
        kinetic + stretch + bend + gravity
    }

    /// Central-difference Jacobian of feature `target` (of `m`) with respect
    /// to gripper position. Each probe displaces the gripper by ±h along one
    /// axis in a single step, then settles for `cfg.settle_time`.
    pub fn probe_true_jacobian(&self, target: usize, m: usize, cfg: &SimConfig<T>, h: T) -> Result<Matrix<T>, SimError> {
        if !(h > T::zero()) {
            return Err(SimError::InvalidConfig("probe step must be positive".into()));
        }
        let mut jac = Matrix::zeros(DIM, DIM);
        for axis in 0..DIM {
            let probe = |sign: T| -> Result<Vec3<T>, SimError> {
                let mut s = self.clone();
                let mut v = [T::zero(); 3];
                v[axis] = sign * h / cfg.dt;
                s.step(v, cfg)?;
                s.settle(cfg.settle_time, cfg)?;
                s.feature_position(target, m)
            };
            let plus = probe(T::one())?;
            let minus = probe(-T::one())?;
            for row in 0..DIM {
                jac[(row, axis)] = (plus[row] - minus[row]) / (h + h);
            }
        }
        Ok(jac)
    }
}
