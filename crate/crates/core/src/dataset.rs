//! Open-loop exploration data and its on-disk format.
//!
//! The dataset file is CSV with header
//! `t,phi_0..phi_{lm-1},rdot_0..rdot_{n-1},xdot_{i}_{j}...` (feature `i`,
//! axis `j`), every value printed with 17 significant digits. A sidecar text
//! file of `key=value` lines records how the data was produced.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Real;
use crate::sim::{RodState, SimConfig, SimError, Vec3, DIM};
use crate::velocity::{differentiate_series, FILTER_DELAY};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample<T> {
    /// seconds since the start of the recording
    pub t: T,
    /// stacked feature positions, l·m
    pub phi: Vec<T>,
    /// gripper velocity, n
    pub rdot: Vec<T>,
    /// feature velocities, feature-major, m·l
    pub xdot: Vec<T>,
}

impl<T: Real> TrainingSample<T> {
    pub fn feature_velocity(&self, feature: usize, l: usize) -> &[T] {
        &self.xdot[feature * l..(feature + 1) * l]
    }

    pub fn is_finite(&self) -> bool {
        [&self.phi, &self.rdot, &self.xdot].iter().all(|v| crate::scalar::all_finite(v)) && self.t.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub l: usize,
    pub n: usize,
    pub m: usize,
    pub samples: Vec<TrainingSample<T>>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid collection setup: {0}")]
    InvalidSetup(String),
    #[error("simulation diverged after {} samples: {source}", partial.samples.len())]
    Diverged { partial: Box<Dataset<f64>>, source: SimError },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl<T: Real> Dataset<T> {
    pub fn duration(&self) -> T {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => T::zero(),
        }
    }

    /// Splits off every sample within the final `seconds` of the recording.
    pub fn split_tail(&self, seconds: T) -> (Dataset<T>, Dataset<T>) {
        let end = self.samples.last().map_or(T::zero(), |s| s.t);
        let cut = end - seconds;
        let (head, tail): (Vec<_>, Vec<_>) = self.samples.iter().cloned().partition(|s| s.t <= cut);
        let wrap = |samples| Dataset { l: self.l, n: self.n, m: self.m, samples };
        (wrap(head), wrap(tail))
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..self.l * self.m).map(|i| format!("phi_{i}")));
        h.extend((0..self.n).map(|i| format!("rdot_{i}")));
        for i in 0..self.m {
            h.extend((0..self.l).map(|j| format!("xdot_{i}_{j}")));
        }
        h
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<(), DatasetError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for s in &self.samples {
            let row = std::iter::once(&s.t).chain(&s.phi).chain(&s.rdot).chain(&s.xdot).map(|v| fmt17(v.f64()));
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl std::io::Read, l: usize, n: usize) -> Result<Self, DatasetError> {
        let mut input = csv::Reader::from_reader(r);
        let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
        let phi_len = header.iter().filter(|h| h.starts_with("phi_")).count();
        if l == 0 || phi_len % l != 0 {
            return Err(DatasetError::Malformed(format!("{phi_len} phi columns with l = {l}")));
        }
        let m = phi_len / l;
        let mut ds = Dataset { l, n, m, samples: Vec::new() };
        if header != ds.header() {
            return Err(DatasetError::Malformed("unexpected column layout".into()));
        }
        for rec in input.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map(T::of))
                .collect::<Result<Vec<T>, _>>()
                .map_err(|e| DatasetError::Malformed(e.to_string()))?;
            let (t, rest) = vals.split_first().ok_or_else(|| DatasetError::Malformed("empty row".into()))?;
            let (phi, rest) = rest.split_at(l * m);
            let (rdot, xdot) = rest.split_at(n);
            ds.samples.push(TrainingSample { t: *t, phi: phi.to_vec(), rdot: rdot.to_vec(), xdot: xdot.to_vec() });
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &Metadata) -> Result<(), DatasetError> {
        let path = path.as_ref();
        self.write_csv(std::fs::File::create(path)?)?;
        std::fs::write(metadata_path(path), meta.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, l: usize, n: usize) -> Result<Self, DatasetError> {
        Self::read_csv(std::fs::File::open(path)?, l, n)
    }
}

pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// `data.csv` → `data.csv.meta`
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Ordered `key=value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metadata(pub BTreeMap<String, String>);

impl Metadata {
    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut out = Metadata::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DatasetError::Malformed(format!("metadata line without '=': {line}")))?;
            out.insert(k.trim(), v.trim());
        }
        Ok(out)
    }
}

/// Axis-aligned box of gripper waypoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Workspace<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Workspace<T> {
    pub fn cube(center: Vec3<T>, side: T) -> Self {
        let h = side * T::half();
        Self {
            min: [center[0] - h, center[1] - h, center[2] - h],
            max: [center[0] + h, center[1] + h, center[2] + h],
        }
    }

    pub fn corners(&self) -> impl Iterator<Item = Vec3<T>> + '_ {
        (0..8).map(move |b| {
            let pick = |axis: usize| if b >> axis & 1 == 1 { self.max[axis] } else { self.min[axis] };
            [pick(0), pick(1), pick(2)]
        })
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectConfig<T> {
    /// seconds of recording
    pub duration: T,
    /// seconds per random waypoint
    pub window: T,
    /// Hz
    pub sample_rate: T,
    pub workspace: Workspace<T>,
    pub seed: u64,
}

impl<T: Real> CollectConfig<T> {
    pub fn new(duration: T, workspace: Workspace<T>, seed: u64) -> Self {
        Self { duration, window: T::one(), sample_rate: T::of(50.0), workspace, seed }
    }

    pub fn five_minute(workspace: Workspace<T>, seed: u64) -> Self {
        Self::new(T::of(300.0), workspace, seed)
    }

    pub fn sixty_minute(workspace: Workspace<T>, seed: u64) -> Self {
        Self::new(T::of(3600.0), workspace, seed)
    }

    pub fn sample_dt(&self) -> T {
        T::one() / self.sample_rate
    }

    pub fn metadata(&self, sim: &SimConfig<T>) -> Metadata {
        let mut m = Metadata::default();
        m.insert("format", "dlo-dataset-1");
        m.insert("seed", self.seed);
        m.insert("duration", self.duration);
        m.insert("window", self.window);
        m.insert("sample_rate", self.sample_rate);
        m.insert("workspace_min", join(&self.workspace.min));
        m.insert("workspace_max", join(&self.workspace.max));
        m.insert("velocity_scheme", "rdot=commanded; xdot=central difference + 5-sample moving average");
        m.insert("sim.particle_count", sim.particle_count);
        m.insert("sim.feature_count", sim.feature_count);
        m.insert("sim.rod_length", sim.rod_length);
        m.insert("sim.stretch_stiffness", sim.stretch_stiffness);
        m.insert("sim.bend_stiffness", sim.bend_stiffness);
        m.insert("sim.damping", sim.damping);
        m.insert("sim.internal_damping", sim.internal_damping);
        m.insert("sim.particle_mass", sim.particle_mass);
        m.insert("sim.dt", sim.dt);
        m.insert("sim.substeps", sim.substeps);
        m.insert("sim.gravity", join(&sim.gravity));
        m.insert("sim.table_plane", sim.table_plane.map_or("none".to_string(), |z| z.to_string()));
        m
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Minimum-jerk speed profile `ds/dτ` for normalized time τ ∈ [0, 1].
pub fn minimum_jerk_rate<T: Real>(tau: T) -> T {
    let t2 = tau * tau;
    T::of(30.0) * t2 * (T::one() - tau) * (T::one() - tau)
}

/// What [`collect_dataset`] recorded: the samples plus the gripper track at each sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording<T> {
    pub dataset: Dataset<T>,
    pub gripper: Vec<Vec3<T>>,
}

/// Drives the gripper open-loop through random waypoints and records the rod.
///
/// Every `window` seconds a waypoint is drawn uniformly from the workspace and
/// the gripper follows a minimum-jerk profile to it. Commands are sampled at
/// `sample_rate`; between samples the simulator sees the linear interpolant of
/// consecutive commands, so the recorded `ṙ` integrates by the trapezoid rule
/// to the gripper displacement.
pub fn collect_dataset<T: Real>(
    sim: &SimConfig<T>,
    start: &RodState<T>,
    cfg: &CollectConfig<T>,
) -> Result<Recording<T>, DatasetError> {
    let setup = |m: &str| DatasetError::InvalidSetup(m.to_string());
    sim.validate().map_err(|e| setup(&e.to_string()))?;
    let sample_dt = cfg.sample_dt();
    let substeps_f = sample_dt / sim.dt;
    let steps_per_sample = substeps_f.round().to_usize().unwrap_or(0);
    if steps_per_sample == 0 || (substeps_f - T::of(steps_per_sample as f64)).abs() > T::of(1e-9) {
        return Err(setup("sample period must be a whole number of simulator steps"));
    }
    let per_window_f = cfg.window / sample_dt;
    let samples_per_window = per_window_f.round().to_usize().unwrap_or(0);
    if samples_per_window == 0 || (per_window_f - T::of(samples_per_window as f64)).abs() > T::of(1e-9) {
        return Err(setup("window must be a whole number of sample periods"));
    }
    let anchor = start.positions[start.anchor_index];
    for c in cfg.workspace.corners() {
        let d: T = (0..3).map(|k| (c[k] - anchor[k]) * (c[k] - anchor[k])).sum::<T>().sqrt();
        if d > sim.rod_length {
            return Err(setup("workspace corner is farther from the anchor than the rod length"));
        }
    }
    let total = (cfg.duration / sample_dt).round().to_usize().unwrap_or(0);
    if total < 2 * FILTER_DELAY + 1 {
        return Err(setup("duration too short for velocity estimation"));
    }

    let m = sim.feature_count;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = start.clone();

    // commanded velocity at every sample tick (0..=total)
    let mut commands: Vec<Vec3<T>> = Vec::with_capacity(total + 1);
    let mut leg_start = state.gripper_position();
    let mut leg_delta = [T::zero(); 3];
    let mut grip_plan = leg_start;
    for k in 0..=total {
        let in_window = k % samples_per_window;
        if in_window == 0 {
            leg_start = grip_plan;
            let target: Vec3<T> = std::array::from_fn(|a| {
                let u: f64 = rng.gen();
                cfg.workspace.min[a] + (cfg.workspace.max[a] - cfg.workspace.min[a]) * T::of(u)
            });
            leg_delta = std::array::from_fn(|a| target[a] - leg_start[a]);
            grip_plan = target;
        }
        let tau = T::of(in_window as f64) / T::of(samples_per_window as f64);
        let rate = minimum_jerk_rate(tau) / cfg.window;
        commands.push(std::array::from_fn(|a| leg_delta[a] * rate));
    }

    let mut features = Vec::with_capacity(total + 1);
    let mut gripper = Vec::with_capacity(total + 1);
    let record = |s: &RodState<T>, features: &mut Vec<Vec<T>>, gripper: &mut Vec<Vec3<T>>| -> Result<(), SimError> {
        features.push(s.extract_features(m)?);
        gripper.push(s.gripper_position());
        Ok(())
    };
    record(&state, &mut features, &mut gripper).map_err(|e| setup(&e.to_string()))?;

    let mut failure = None;
    'outer: for k in 0..total {
        let (a, b) = (commands[k], commands[k + 1]);
        for j in 0..steps_per_sample {
            let w = (T::of(j as f64) + T::half()) / T::of(steps_per_sample as f64);
            let v: Vec3<T> = std::array::from_fn(|i| a[i] + (b[i] - a[i]) * w);
            if let Err(e) = state.step(v, sim) {
                failure = Some(e);
                break 'outer;
            }
        }
        if let Err(e) = record(&state, &mut features, &mut gripper) {
            failure = Some(e);
            break;
        }
    }

    let velocities = differentiate_series(&features, sample_dt);
    let mut samples = Vec::new();
    let mut track = Vec::new();
    for (k, v) in velocities.into_iter().enumerate() {
        if let Some(xdot) = v {
            samples.push(TrainingSample {
                t: T::of(k as f64) * sample_dt,
                phi: features[k].clone(),
                rdot: commands[k].to_vec(),
                xdot,
            });
            track.push(gripper[k]);
        }
    }
    let dataset = Dataset { l: DIM, n: DIM, m, samples };
    if let Some(source) = failure {
        return Err(DatasetError::Diverged { partial: Box::new(to_f64(&dataset)), source });
    }
    Ok(Recording { dataset, gripper: track })
}

fn to_f64<T: Real>(d: &Dataset<T>) -> Dataset<f64> {
    let conv = |v: &[T]| v.iter().map(|x| x.f64()).collect();
    Dataset {
        l: d.l,
        n: d.n,
        m: d.m,
        samples: d
            .samples
            .iter()
            .map(|s| TrainingSample { t: s.t.f64(), phi: conv(&s.phi), rdot: conv(&s.rdot), xdot: conv(&s.xdot) })
            .collect(),
    }
}
