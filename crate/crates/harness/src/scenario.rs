//! Scenario descriptions and their text format.
//!
//! ```text
//! version = 1
//!
//! [scenario]
//! name = task1
//! seed = 0
//! horizon = 60
//!
//! [target]
//! feature = 4
//! reference = fixed
//! point = 0.13 0.02 -0.15
//! ```
//!
//! Sections are `[scenario]`, `[sim]`, `[controller]`, `[success]` and one
//! `[target]` per target, in execution order. Vectors are space-separated.
//! A path target lists `waypoints = t x y z; t x y z; ...`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dlo_core::control::{ControllerConfig, Gain, SuccessRule};
use dlo_core::sim::{RodState, SimConfig, SimError, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown scenario `{0}`")]
    Unknown(String),
    #[error("setup failed: {0}")]
    Setup(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceSpec {
    Fixed(Vec3<f64>),
    /// `(time since the target became active, point)`
    Path(Vec<(f64, Vec3<f64>)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub feature: usize,
    pub reference: ReferenceSpec,
    /// nail this feature once it holds its reference
    pub nail_after: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerSpec {
    pub kp: f64,
    pub gain: f64,
    pub lambda: f64,
    pub sigma_trunc: f64,
    pub dt: f64,
    pub mask: [bool; 3],
    pub update: bool,
    pub divergence_bound: f64,
}

impl ControllerSpec {
    pub fn config(&self, target: usize) -> ControllerConfig<f64> {
        ControllerConfig {
            kp: vec![self.kp; 3],
            gains: vec![Gain::Scaled(self.gain); 3],
            lambda: self.lambda,
            sigma_trunc: self.sigma_trunc,
            target_feature: target,
            update_enabled: self.update,
            input_mask: self.mask.to_vec(),
            dt: self.dt,
            divergence_bound: self.divergence_bound,
            ..ControllerConfig::task1()
        }
    }

    fn from_preset(c: &ControllerConfig<f64>) -> Self {
        let gain = match c.gains[0] {
            Gain::Scaled(g) => g,
            _ => unreachable!("presets use scaled gains"),
        };
        Self {
            kp: c.kp[0],
            gain,
            lambda: c.lambda,
            sigma_trunc: c.sigma_trunc,
            dt: c.dt,
            mask: [c.input_mask[0], c.input_mask[1], c.input_mask[2]],
            update: c.update_enabled,
            divergence_bound: c.divergence_bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub sim: SimConfig<f64>,
    pub anchor: Vec3<f64>,
    /// the gripper is moved here and the rod settled before the run
    pub gripper_start: Vec3<f64>,
    pub settle: f64,
    /// side of the exploration cube centered on `gripper_start`
    pub workspace_side: f64,
    pub controller: ControllerSpec,
    pub success: SuccessRule<f64>,
    /// total seconds for all targets
    pub horizon: f64,
    pub targets: Vec<TargetSpec>,
    pub model_path: Option<String>,
    pub metrics_out: Option<String>,
}

const ANCHOR: Vec3<f64> = [0.0, 0.0, 0.0];
const GRIPPER_START: Vec3<f64> = [0.3, 0.0, 0.0];
const SETTLE: f64 = 3.0;
const ROLLOUT_SPEED: f64 = 0.05;

impl Scenario {
    fn base(name: &str, seed: u64, controller: &ControllerConfig<f64>, horizon: f64) -> Self {
        Self {
            name: name.to_string(),
            seed,
            sim: SimConfig::default(),
            anchor: ANCHOR,
            gripper_start: GRIPPER_START,
            settle: SETTLE,
            workspace_side: 0.3,
            controller: ControllerSpec::from_preset(controller),
            success: SuccessRule { threshold: 0.005, hold: 1.0 },
            horizon,
            targets: Vec::new(),
            model_path: None,
            metrics_out: None,
        }
    }

    /// Hanging rod at rest with the gripper at `gripper_start`.
    pub fn initial_state(&self) -> Result<RodState<f64>, SimError> {
        let mut s = RodState::straight(&self.sim, self.anchor)?;
        s.move_gripper_to(self.gripper_start, 0.1, &self.sim)?;
        s.settle(self.settle, &self.sim)?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        self.sim.validate()?;
        if self.targets.is_empty() {
            return bad("no targets".into());
        }
        let m = self.sim.feature_count;
        for (i, t) in self.targets.iter().enumerate() {
            if t.feature >= m {
                return bad(format!("target feature {} out of range", t.feature));
            }
            if self.targets[..i].iter().any(|o| o.feature == t.feature) {
                return bad(format!("feature {} targeted twice", t.feature));
            }
            if let ReferenceSpec::Path(w) = &t.reference {
                if w.is_empty() || !w.windows(2).all(|p| p[1].0 > p[0].0) {
                    return bad("path waypoints must be strictly increasing in time".into());
                }
            }
        }
        let c = &self.controller;
        if !(c.kp > 0.0 && c.gain > 0.0 && c.lambda > 0.0 && c.sigma_trunc >= 0.0 && c.dt > 0.0) {
            return bad("controller gains must be positive".into());
        }
        let ratio = c.dt / self.sim.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("controller dt must be a whole number of simulator steps".into());
        }
        if !(self.horizon > 0.0 && self.success.threshold > 0.0 && self.success.hold >= 0.0) {
            return bad("horizon and success threshold must be positive".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let v3 = |v: &Vec3<f64>| format!("{} {} {}", v[0], v[1], v[2]);
        let _ = writeln!(out, "version = {FORMAT_VERSION}\n");
        let _ = writeln!(out, "[scenario]");
        let _ = writeln!(out, "name = {}", self.name);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "horizon = {}", self.horizon);
        let _ = writeln!(out, "anchor = {}", v3(&self.anchor));
        let _ = writeln!(out, "gripper_start = {}", v3(&self.gripper_start));
        let _ = writeln!(out, "settle = {}", self.settle);
        let _ = writeln!(out, "workspace_side = {}", self.workspace_side);
        if let Some(p) = &self.model_path {
            let _ = writeln!(out, "model = {p}");
        }
        if let Some(p) = &self.metrics_out {
            let _ = writeln!(out, "metrics = {p}");
        }

        let s = &self.sim;
        let _ = writeln!(out, "\n[sim]");
        let _ = writeln!(out, "particle_count = {}", s.particle_count);
        let _ = writeln!(out, "feature_count = {}", s.feature_count);
        let _ = writeln!(out, "rod_length = {}", s.rod_length);
        let _ = writeln!(out, "stretch_stiffness = {}", s.stretch_stiffness);
        let _ = writeln!(out, "bend_stiffness = {}", s.bend_stiffness);
        let _ = writeln!(out, "damping = {}", s.damping);
        let _ = writeln!(out, "internal_damping = {}", s.internal_damping);
        let _ = writeln!(out, "particle_mass = {}", s.particle_mass);
        let _ = writeln!(out, "dt = {}", s.dt);
        let _ = writeln!(out, "substeps = {}", s.substeps);
        let _ = writeln!(out, "gravity = {}", v3(&s.gravity));
        if let Some(z) = s.table_plane {
            let _ = writeln!(out, "table_plane = {z}");
        }
        let _ = writeln!(out, "settle_time = {}", s.settle_time);

        let c = &self.controller;
        let _ = writeln!(out, "\n[controller]");
        let _ = writeln!(out, "kp = {}", c.kp);
        let _ = writeln!(out, "gain = {}", c.gain);
        let _ = writeln!(out, "lambda = {}", c.lambda);
        let _ = writeln!(out, "sigma_trunc = {}", c.sigma_trunc);
        let _ = writeln!(out, "dt = {}", c.dt);
        let mask: Vec<&str> = c.mask.iter().map(|&b| if b { "1" } else { "0" }).collect();
        let _ = writeln!(out, "mask = {}", mask.join(" "));
        let _ = writeln!(out, "update = {}", c.update);
        let _ = writeln!(out, "divergence_bound = {}", c.divergence_bound);

        let _ = writeln!(out, "\n[success]");
        let _ = writeln!(out, "threshold = {}", self.success.threshold);
        let _ = writeln!(out, "hold = {}", self.success.hold);

        for t in &self.targets {
            let _ = writeln!(out, "\n[target]");
            let _ = writeln!(out, "feature = {}", t.feature);
            match &t.reference {
                ReferenceSpec::Fixed(p) => {
                    let _ = writeln!(out, "reference = fixed");
                    let _ = writeln!(out, "point = {}", v3(p));
                }
                ReferenceSpec::Path(w) => {
                    let _ = writeln!(out, "reference = path");
                    let pts: Vec<String> = w.iter().map(|(t, p)| format!("{t} {}", v3(p))).collect();
                    let _ = writeln!(out, "waypoints = {}", pts.join("; "));
                }
            }
            let _ = writeln!(out, "nail = {}", t.nail_after);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut version = None;
        let mut sections: Vec<(String, usize, BTreeMap<String, (usize, String)>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.trim().to_string(), line_no, BTreeMap::new()));
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ScenarioError::Syntax {
                line: line_no,
                message: "expected `key = value`".into(),
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            match sections.last_mut() {
                None if k == "version" => {
                    version = Some(v.parse::<u32>().map_err(|_| ScenarioError::Syntax {
                        line: line_no,
                        message: "version must be an integer".into(),
                    })?)
                }
                None => {
                    return Err(ScenarioError::Syntax { line: line_no, message: format!("`{k}` outside any section") })
                }
                Some((_, _, map)) => {
                    if map.insert(k.clone(), (line_no, v)).is_some() {
                        return Err(ScenarioError::Syntax { line: line_no, message: format!("duplicate key `{k}`") });
                    }
                }
            }
        }
        match version {
            Some(FORMAT_VERSION) => {}
            Some(v) => return Err(ScenarioError::Version(v)),
            None => return Err(ScenarioError::Syntax { line: 1, message: "missing `version`".into() }),
        }

        let mut sc = Scenario::base("", 0, &ControllerConfig::task1(), 60.0);
        let mut saw_scenario = false;
        for (name, header_line, mut map) in sections {
            let mut f = Fields { map: &mut map, section: &name };
            match name.as_str() {
                "scenario" => {
                    saw_scenario = true;
                    sc.name = f.req("name")?;
                    sc.seed = f.opt("seed")?.unwrap_or(0);
                    sc.horizon = f.req_num("horizon")?;
                    if let Some(v) = f.opt_vec3("anchor")? {
                        sc.anchor = v;
                    }
                    if let Some(v) = f.opt_vec3("gripper_start")? {
                        sc.gripper_start = v;
                    }
                    sc.settle = f.opt("settle")?.unwrap_or(SETTLE);
                    sc.workspace_side = f.opt("workspace_side")?.unwrap_or(0.3);
                    sc.model_path = f.take("model").map(|(_, v)| v);
                    sc.metrics_out = f.take("metrics").map(|(_, v)| v);
                }
                "sim" => {
                    let s = &mut sc.sim;
                    macro_rules! field {
                        ($($key:ident),*) => {$(
                            if let Some(v) = f.opt(stringify!($key))? { s.$key = v; }
                        )*};
                    }
                    field!(particle_count, feature_count, rod_length, stretch_stiffness, bend_stiffness, damping);
                    field!(internal_damping, particle_mass, dt, substeps, settle_time);
                    if let Some(g) = f.opt_vec3("gravity")? {
                        s.gravity = g;
                    }
                    s.table_plane = f.opt("table_plane")?;
                }
                "controller" => {
                    let c = &mut sc.controller;
                    macro_rules! field {
                        ($($key:ident),*) => {$(
                            if let Some(v) = f.opt(stringify!($key))? { c.$key = v; }
                        )*};
                    }
                    field!(kp, gain, lambda, sigma_trunc, dt, update, divergence_bound);
                    if let Some((line, v)) = f.take("mask") {
                        let bits: Vec<&str> = v.split_whitespace().collect();
                        if bits.len() != 3 || bits.iter().any(|b| *b != "0" && *b != "1") {
                            return Err(ScenarioError::Syntax { line, message: "mask needs three 0/1 entries".into() });
                        }
                        c.mask = [bits[0] == "1", bits[1] == "1", bits[2] == "1"];
                    }
                }
                "success" => {
                    sc.success.threshold = f.req_num("threshold")?;
                    sc.success.hold = f.req_num("hold")?;
                }
                "target" => {
                    let feature = f.req_num("feature")?;
                    let kind: String = f.req("reference")?;
                    let reference = match kind.as_str() {
                        "fixed" => ReferenceSpec::Fixed(f.req_vec3("point")?),
                        "path" => {
                            let (line, text) = f.take("waypoints").ok_or_else(|| f.missing("waypoints"))?;
                            let mut w = Vec::new();
                            for chunk in text.split(';') {
                                let nums = parse_floats(chunk, line)?;
                                if nums.len() != 4 {
                                    return Err(ScenarioError::Syntax { line, message: "waypoint needs `t x y z`".into() });
                                }
                                w.push((nums[0], [nums[1], nums[2], nums[3]]));
                            }
                            ReferenceSpec::Path(w)
                        }
                        other => {
                            return Err(ScenarioError::Syntax {
                                line: header_line,
                                message: format!("unknown reference kind `{other}`"),
                            })
                        }
                    };
                    let nail_after = f.opt("nail")?.unwrap_or(false);
                    sc.targets.push(TargetSpec { feature, reference, nail_after });
                }
                other => {
                    return Err(ScenarioError::Syntax { line: header_line, message: format!("unknown section `{other}`") })
                }
            }
            if let Some((k, (line, _))) = map.into_iter().next() {
                return Err(ScenarioError::Syntax { line, message: format!("unknown key `{k}` in [{name}]") });
            }
        }
        if !saw_scenario {
            return Err(ScenarioError::Invalid("missing [scenario] section".into()));
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

struct Fields<'a> {
    map: &'a mut BTreeMap<String, (usize, String)>,
    section: &'a str,
}

impl Fields<'_> {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn missing(&self, key: &str) -> ScenarioError {
        ScenarioError::Invalid(format!("[{}] needs `{key}`", self.section))
    }

    fn opt<V: std::str::FromStr>(&mut self, key: &str) -> Result<Option<V>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| ScenarioError::Syntax { line, message: format!("bad value `{v}` for `{key}`") }),
        }
    }

    fn req<V: std::str::FromStr>(&mut self, key: &str) -> Result<V, ScenarioError> {
        self.opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn req_num<V: std::str::FromStr>(&mut self, key: &str) -> Result<V, ScenarioError> {
        self.req(key)
    }

    fn opt_vec3(&mut self, key: &str) -> Result<Option<Vec3<f64>>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => {
                let nums = parse_floats(&v, line)?;
                if nums.len() != 3 {
                    return Err(ScenarioError::Syntax { line, message: format!("`{key}` needs three numbers") });
                }
                Ok(Some([nums[0], nums[1], nums[2]]))
            }
        }
    }

    fn req_vec3(&mut self, key: &str) -> Result<Vec3<f64>, ScenarioError> {
        self.opt_vec3(key)?.ok_or_else(|| self.missing(key))
    }
}

fn parse_floats(text: &str, line: usize) -> Result<Vec<f64>, ScenarioError> {
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| ScenarioError::Syntax { line, message: format!("bad number `{t}`") }))
        .collect()
}

/// Random offset of length `radius` that keeps the gripper inside the
/// exploration cube and short of the rod's reach.
fn gripper_offset(sc: &Scenario, rng: &mut ChaCha8Rng, radius: f64, horizontal: bool) -> Vec3<f64> {
    let half = sc.workspace_side / 2.0;
    let reach = 0.95 * sc.sim.rod_length;
    loop {
        let mut d: Vec3<f64> = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        if horizontal {
            d[2] = 0.0;
        }
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if !(0.2..=1.0).contains(&n) {
            continue;
        }
        let off: Vec3<f64> = std::array::from_fn(|k| radius * d[k] / n);
        let p: Vec3<f64> = std::array::from_fn(|k| sc.gripper_start[k] + off[k]);
        let inside = (0..3).all(|k| off[k].abs() <= half);
        let dist = (0..3).map(|k| (p[k] - sc.anchor[k]).powi(2)).sum::<f64>().sqrt();
        if inside && dist < reach {
            return p;
        }
    }
}

/// Fifth feature to a fixed point reached by an open-loop gripper move of 0.1 m.
pub fn scenario_task1(seed: u64) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::base("task1", seed, &ControllerConfig::task1(), 60.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feature = ControllerConfig::<f64>::task1().target_feature;
    let mut s = sc.initial_state()?;
    let g = gripper_offset(&sc, &mut rng, 0.1, false);
    s.move_gripper_to(g, ROLLOUT_SPEED, &sc.sim)?;
    s.settle(sc.settle, &sc.sim)?;
    let goal = s.feature_position(feature, sc.sim.feature_count)?;
    sc.targets.push(TargetSpec { feature, reference: ReferenceSpec::Fixed(goal), nail_after: false });
    Ok(sc)
}

/// Radius of the virtual cylinder the task-2 path goes around.
pub const CYLINDER_RADIUS: f64 = 0.05;

/// Sixth feature three quarters of the way around a vertical virtual cylinder
/// in three straight segments, arriving at 27 s.
pub fn scenario_task2(seed: u64) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::base("task2", seed, &ControllerConfig::task2(), 35.0);
    let feature = ControllerConfig::<f64>::task2().target_feature;
    let m = sc.sim.feature_count;
    let mut s = sc.initial_state()?;
    // gripper quarter points on a horizontal circle of 1.6 r; the settled
    // feature positions there become the waypoints, so the path is reachable
    let radius = 1.6 * CYLINDER_RADIUS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_angle = std::f64::consts::PI + rng.gen_range(-0.3..0.3);
    let g0 = sc.gripper_start;
    let center = [g0[0] - radius * start_angle.cos(), g0[1] - radius * start_angle.sin(), g0[2]];
    let mut waypoints = vec![(0.0, s.feature_position(feature, m)?)];
    for k in 1..4 {
        let a = start_angle + k as f64 * std::f64::consts::FRAC_PI_2;
        s.move_gripper_to([center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]], ROLLOUT_SPEED, &sc.sim)?;
        s.settle(sc.settle, &sc.sim)?;
        waypoints.push((9.0 * k as f64, s.feature_position(feature, m)?));
    }
    sc.targets.push(TargetSpec { feature, reference: ReferenceSpec::Path(waypoints), nail_after: false });
    Ok(sc)
}

/// Features 2, 6 and 9 in turn, each nailed once reached; the gripper stays
/// in its horizontal plane.
pub fn scenario_task3(seed: u64) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::base("task3", seed, &ControllerConfig::task3(), 120.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = sc.sim.feature_count;
    let mut s = sc.initial_state()?;
    for (feature, radius) in [(1usize, 0.1), (5, 0.08), (8, 0.06)] {
        let g = gripper_offset(&sc, &mut rng, radius, true);
        s.move_gripper_to(g, ROLLOUT_SPEED, &sc.sim)?;
        s.settle(sc.settle, &sc.sim)?;
        let goal = s.feature_position(feature, m)?;
        s.nail_feature(feature, m)?;
        sc.targets.push(TargetSpec { feature, reference: ReferenceSpec::Fixed(goal), nail_after: true });
    }
    Ok(sc)
}

pub fn preset(name: &str, seed: u64) -> Result<Scenario, ScenarioError> {
    match name {
        "task1" => scenario_task1(seed),
        "task2" => scenario_task2(seed),
        "task3" => scenario_task3(seed),
        other => Err(ScenarioError::Unknown(other.to_string())),
    }
}

/// A preset name, or a path to a scenario file.
pub fn resolve(name_or_path: &str, seed: u64) -> Result<Scenario, ScenarioError> {
    match preset(name_or_path, seed) {
        Err(ScenarioError::Unknown(_)) if Path::new(name_or_path).is_file() => Scenario::load(name_or_path),
        other => other,
    }
}
