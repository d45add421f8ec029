//! Adaptive velocity controller: `u = Ĵ⁺(ẏ_d − K_p Δy)` with online
//! adaptation of the target's weight block.

use std::io::Write;
use std::sync::mpsc::Sender;

use thiserror::Error;

use crate::linalg::{svd, Matrix};
use crate::plant::{Plant, PlantError};
use crate::rbfn::{Head, RbfNetwork};
use crate::scalar::{norm, Real};
use crate::sim::Vec3;
use crate::velocity::StreamingDifferentiator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("run diverged at t = {time} s: |dy| = {dy_norm}")]
    Diverged { time: f64, dy_norm: f64 },
    #[error("error-dynamics identity violated at t = {time} s: residual {residual} > {tolerance}")]
    IdentityViolated { time: f64, residual: f64, tolerance: f64 },
    #[error("non-finite control signal at t = {time} s")]
    NonFinite { time: f64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Adaptation gain `L_i` for one input channel.
#[derive(Clone, Debug, PartialEq)]
pub enum Gain<T> {
    /// `s·I`
    Scaled(T),
    /// positive diagonal
    Diagonal(Vec<T>),
    /// symmetric positive definite, q × q
    Full(Matrix<T>),
}

impl<T: Real> Gain<T> {
    /// `L θ`
    pub fn apply(&self, theta: &[T]) -> Vec<T> {
        match self {
            Gain::Scaled(s) => theta.iter().map(|&t| *s * t).collect(),
            Gain::Diagonal(d) => theta.iter().zip(d).map(|(&t, &g)| g * t).collect(),
            Gain::Full(m) => m.mul_vec(theta),
        }
    }

    /// `w L⁻¹ wᵀ`
    pub fn inverse_quadratic(&self, w: &[T]) -> T {
        match self {
            Gain::Scaled(s) => w.iter().map(|&x| x * x).sum::<T>() / *s,
            Gain::Diagonal(d) => w.iter().zip(d).map(|(&x, &g)| x * x / g).sum(),
            Gain::Full(m) => {
                let chol = cholesky(m).expect("validated positive definite");
                // ‖C⁻¹w‖² with L = C Cᵀ
                let n = w.len();
                let mut z = vec![T::zero(); n];
                for i in 0..n {
                    let mut s = w[i];
                    for k in 0..i {
                        s -= chol[(i, k)] * z[k];
                    }
                    z[i] = s / chol[(i, i)];
                }
                z.iter().map(|&x| x * x).sum()
            }
        }
    }

    fn validate(&self, q: usize) -> Result<(), String> {
        match self {
            Gain::Scaled(s) if !(*s > T::zero() && s.is_finite()) => Err("scaled gain must be positive".into()),
            Gain::Diagonal(d) if d.len() != q => Err(format!("diagonal gain has {} entries, expected {q}", d.len())),
            Gain::Diagonal(d) if !d.iter().all(|&g| g > T::zero() && g.is_finite()) => {
                Err("diagonal gain entries must be positive".into())
            }
            Gain::Full(m) if m.rows() != q || m.cols() != q => Err(format!("gain matrix must be {q}×{q}")),
            Gain::Full(m) => {
                let sym = (0..q).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]));
                if !sym || cholesky(m).is_none() {
                    return Err("gain matrix must be symmetric positive definite".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn cholesky<T: Real>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let n = a.rows();
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= c[(i, k)] * c[(j, k)];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                c[(i, i)] = s.sqrt();
            } else {
                c[(i, j)] = s / c[(j, j)];
            }
        }
    }
    Some(c)
}

/// How ṙ and ẏ are measured for `e_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateEstimate {
    /// Smoothed central differences of sampled positions, as in training.
    /// Lags by [`crate::velocity::FILTER_DELAY`] ticks.
    Filtered,
    /// One-sided difference across the tick just taken. No lag.
    OneStep,
}

#[derive(Clone, Debug)]
pub struct ControllerConfig<T> {
    /// diagonal of K_p, length l
    pub kp: Vec<T>,
    /// one gain per input channel, length n
    pub gains: Vec<Gain<T>>,
    pub lambda: T,
    pub sigma_trunc: T,
    pub target_feature: usize,
    pub update_enabled: bool,
    /// `false` removes that input axis from the inversion; its command is zero
    pub input_mask: Vec<bool>,
    /// control period
    pub dt: T,
    pub rate_estimate: RateEstimate,
    /// abort when ‖Δy‖ exceeds this
    pub divergence_bound: T,
    /// If set, abort when the error-dynamics residual exceeds `gain·dt` on an untruncated tick.
    pub identity_gain: Option<T>,
}

impl<T: Real> ControllerConfig<T> {
    fn preset(kp: f64, gain: f64, target: usize) -> Self {
        Self {
            kp: vec![T::of(kp); 3],
            gains: vec![Gain::Scaled(T::of(gain)); 3],
            lambda: T::of(10.0),
            sigma_trunc: T::of(1e-3),
            target_feature: target,
            update_enabled: true,
            input_mask: vec![true; 3],
            dt: T::of(0.02),
            rate_estimate: RateEstimate::Filtered,
            divergence_bound: T::of(1.0),
            identity_gain: None,
        }
    }

    /// Fifth feature to a fixed point.
    pub fn task1() -> Self {
        Self::preset(0.2, 20.0, 4)
    }

    /// Sixth feature along a path.
    pub fn task2() -> Self {
        Self::preset(0.5, 20.0, 5)
    }

    /// Sequential targets, vertical input masked.
    pub fn task3() -> Self {
        Self { input_mask: vec![true, true, false], ..Self::preset(0.2, 1.0, 1) }
    }

    pub fn validate(&self, net: &RbfNetwork<T>) -> Result<(), ControlError> {
        let d = net.dims();
        let bad = |s: String| Err(ControlError::InvalidConfig(s));
        if self.kp.len() != d.l || !self.kp.iter().all(|&k| k > T::zero() && k.is_finite()) {
            return bad(format!("K_p needs {} positive entries", d.l));
        }
        if self.gains.len() != d.n {
            return bad(format!("expected {} adaptation gains", d.n));
        }
        for g in &self.gains {
            g.validate(d.q).map_err(ControlError::InvalidConfig)?;
        }
        if !(self.lambda > T::zero() && self.lambda.is_finite()) {
            return bad("lambda must be positive".into());
        }
        if !(self.sigma_trunc >= T::zero() && self.sigma_trunc.is_finite()) {
            return bad("sigma_trunc must be non-negative".into());
        }
        if self.target_feature >= d.m {
            return bad(format!("target feature {} out of range", self.target_feature));
        }
        if self.input_mask.len() != d.n {
            return bad(format!("input mask needs {} entries", d.n));
        }
        if !(self.dt > T::zero() && self.divergence_bound > T::zero()) {
            return bad("dt and divergence bound must be positive".into());
        }
        Ok(())
    }
}

/// `Σ_{σ_i > σ_trunc} σ_i⁻¹ v_i u_iᵀ` and the number of retained terms.
pub fn truncated_pinv<T: Real>(j: &Matrix<T>, sigma_trunc: T) -> (Matrix<T>, usize) {
    let s = svd(j);
    let mut pinv = Matrix::zeros(j.cols(), j.rows());
    let mut rank = 0;
    for (k, &sigma) in s.singular_values.iter().enumerate() {
        if !(sigma > sigma_trunc) || sigma == T::zero() {
            continue;
        }
        rank += 1;
        let inv = T::one() / sigma;
        for r in 0..j.cols() {
            for c in 0..j.rows() {
                pinv[(r, c)] += inv * s.v[(r, k)] * s.u[(c, k)];
            }
        }
    }
    (pinv, rank)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput<T> {
    pub u: Vec<T>,
    pub dy: Vec<T>,
    pub rank: usize,
}

/// `u = Ĵ⁺(ẏ_d − K_p Δy)`.
///
/// Masked axes are removed from Ĵ before inversion, so the remaining inputs
/// are the least-squares choice and the masked ones are exactly zero.
pub fn control_law<T: Real>(j: &Matrix<T>, y: &[T], y_d: &[T], ydot_d: &[T], cfg: &ControllerConfig<T>) -> ControlOutput<T> {
    let dy: Vec<T> = y.iter().zip(y_d).map(|(&a, &b)| a - b).collect();
    let rhs: Vec<T> = (0..dy.len()).map(|k| ydot_d[k] - cfg.kp[k] * dy[k]).collect();
    let (pinv, rank) = if cfg.input_mask.iter().all(|&on| on) {
        truncated_pinv(j, cfg.sigma_trunc)
    } else {
        let masked = Matrix::from_fn(j.rows(), j.cols(), |r, c| if cfg.input_mask[c] { j[(r, c)] } else { T::zero() });
        truncated_pinv(&masked, cfg.sigma_trunc)
    };
    let mut u = pinv.mul_vec(&rhs);
    for (v, &on) in u.iter_mut().zip(&cfg.input_mask) {
        if !on {
            *v = T::zero();
        }
    }
    ControlOutput { u, dy, rank }
}

/// One Euler step of `ŵ_ij += dt ṙ_i L_i θ (Δy_j + λ e_wj)` on the target block.
pub fn update_weights<T: Real>(
    net: &mut RbfNetwork<T>,
    phi: &[T],
    rdot: &[T],
    dy: &[T],
    e_w: &[T],
    cfg: &ControllerConfig<T>,
    dt: T,
) {
    let theta = net.activations(phi);
    update_weights_at(net, &theta, rdot, dy, e_w, cfg, dt);
}

pub(crate) fn update_weights_at<T: Real>(
    net: &mut RbfNetwork<T>,
    theta: &[T],
    rdot: &[T],
    dy: &[T],
    e_w: &[T],
    cfg: &ControllerConfig<T>,
    dt: T,
) {
    let d = net.dims();
    let head = Head::Feature(cfg.target_feature);
    for i in 0..d.n {
        if rdot[i] == T::zero() {
            continue;
        }
        let l_theta = cfg.gains[i].apply(theta);
        for j in 0..d.l {
            let drive = dt * rdot[i] * (dy[j] + cfg.lambda * e_w[j]);
            if drive == T::zero() {
                continue;
            }
            let row = net.weight_row(head, j, i);
            let w = &mut net.weights_mut()[row * d.q..(row + 1) * d.q];
            for (wk, &g) in w.iter_mut().zip(&l_theta) {
                *wk += drive * g;
            }
        }
    }
}

/// `½ Σ_ij Δw_ij L_i⁻¹ Δw_ijᵀ` over the target block, with `Δw = ŵ − w`.
pub fn weight_error_energy<T: Real>(estimate: &RbfNetwork<T>, truth: &RbfNetwork<T>, target: usize, gains: &[Gain<T>]) -> T {
    let d = estimate.dims();
    let head = Head::Feature(target);
    let mut total = T::zero();
    for i in 0..d.n {
        for j in 0..d.l {
            let a = estimate.weight_row(head, j, i);
            let b = truth.weight_row(head, j, i);
            let dw: Vec<T> = (0..d.q)
                .map(|k| estimate.weights()[a * d.q + k] - truth.weights()[b * d.q + k])
                .collect();
            total += gains[i].inverse_quadratic(&dw);
        }
    }
    T::half() * total
}

/// Desired target trajectory.
pub trait Reference<T> {
    /// `(y_d(t), ẏ_d(t))`
    fn sample(&self, t: T) -> (Vec3<T>, Vec3<T>);
}

/// Constant set point.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint<T>(pub Vec3<T>);

impl<T: Real> Reference<T> for FixedPoint<T> {
    fn sample(&self, _t: T) -> (Vec3<T>, Vec3<T>) {
        (self.0, [T::zero(); 3])
    }
}

/// Piecewise-linear path through timed waypoints; holds the last point afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedPath<T> {
    /// `(time, point)`, strictly increasing in time
    pub waypoints: Vec<(T, Vec3<T>)>,
}

impl<T: Real> TimedPath<T> {
    pub fn new(waypoints: Vec<(T, Vec3<T>)>) -> Option<Self> {
        let ordered = !waypoints.is_empty() && waypoints.windows(2).all(|w| w[1].0 > w[0].0);
        ordered.then_some(Self { waypoints })
    }

    pub fn end_time(&self) -> T {
        self.waypoints.last().expect("non-empty").0
    }
}

impl<T: Real> Reference<T> for TimedPath<T> {
    fn sample(&self, t: T) -> (Vec3<T>, Vec3<T>) {
        let w = &self.waypoints;
        if t <= w[0].0 {
            return (w[0].1, [T::zero(); 3]);
        }
        for pair in w.windows(2) {
            let ((t0, p0), (t1, p1)) = (pair[0], pair[1]);
            if t < t1 {
                let span = t1 - t0;
                let s = (t - t0) / span;
                let mut p = [T::zero(); 3];
                let mut v = [T::zero(); 3];
                for k in 0..3 {
                    p[k] = p0[k] + s * (p1[k] - p0[k]);
                    v[k] = (p1[k] - p0[k]) / span;
                }
                return (p, v);
            }
        }
        (w[w.len() - 1].1, [T::zero(); 3])
    }
}

/// One controller tick.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopDiagnostics<T> {
    pub t: T,
    pub dy: Vec<T>,
    /// absent until the velocity estimate is available
    pub e_w: Option<Vec<T>>,
    pub u: Vec<T>,
    pub rank: usize,
    pub v_task: T,
    /// ‖e_w − (Δẏ + K_p Δy)‖, on untruncated ticks with an estimate
    pub identity_residual: Option<T>,
}

impl<T: Real> LoopDiagnostics<T> {
    pub fn csv_header(n: usize) -> String {
        let mut h = String::from("t,dy_norm,ew_norm");
        for i in 0..n {
            h.push_str(&format!(",u_{i}"));
        }
        h.push_str(",rank,V_task");
        h
    }

    pub fn csv_row(&self) -> String {
        let ew = self.e_w.as_ref().map_or(f64::NAN, |e| norm(e).f64());
        let mut row = format!("{:.6},{:.9e},{:.9e}", self.t.f64(), norm(&self.dy).f64(), ew);
        for u in &self.u {
            row.push_str(&format!(",{:.9e}", u.f64()));
        }
        row.push_str(&format!(",{},{:.9e}", self.rank, self.v_task.f64()));
        row
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.v_task.is_finite()
            && self.dy.iter().chain(&self.u).all(|v| v.is_finite())
            && self.e_w.as_ref().map_or(true, |e| e.iter().all(|v| v.is_finite()))
    }
}

/// Append-only consumer of diagnostics.
pub trait DiagnosticsSink<T> {
    fn emit(&mut self, d: &LoopDiagnostics<T>);
}

impl<T: Clone> DiagnosticsSink<T> for Vec<LoopDiagnostics<T>> {
    fn emit(&mut self, d: &LoopDiagnostics<T>) {
        self.push(d.clone());
    }
}

impl<T: Clone> DiagnosticsSink<T> for Sender<LoopDiagnostics<T>> {
    fn emit(&mut self, d: &LoopDiagnostics<T>) {
        // a dropped receiver only loses the log
        let _ = self.send(d.clone());
    }
}

/// Writes one CSV row per tick; the header goes out on construction.
pub struct CsvSink<W: Write> {
    out: W,
    pub error: Option<std::io::Error>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W, n: usize) -> std::io::Result<Self> {
        writeln!(out, "{}", LoopDiagnostics::<f64>::csv_header(n))?;
        Ok(Self { out, error: None })
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    /// Flushes, surfacing the first write error if any row failed.
    pub fn flush(&mut self) -> std::io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()
    }
}

impl<T: Real, W: Write> DiagnosticsSink<T> for CsvSink<W> {
    fn emit(&mut self, d: &LoopDiagnostics<T>) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{}", d.csv_row()) {
                self.error = Some(e);
            }
        }
    }
}

/// Forwards to two sinks.
pub struct Tee<'a, T>(pub &'a mut dyn DiagnosticsSink<T>, pub &'a mut dyn DiagnosticsSink<T>);

impl<T> DiagnosticsSink<T> for Tee<'_, T> {
    fn emit(&mut self, d: &LoopDiagnostics<T>) {
        self.0.emit(d);
        self.1.emit(d);
    }
}

/// Stop early once ‖Δy‖ has stayed below `threshold` for `hold` seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuccessRule<T> {
    pub threshold: T,
    pub hold: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopSummary<T> {
    pub ticks: usize,
    pub elapsed: T,
    /// first time ‖Δy‖ dropped below the success threshold and stayed there
    pub time_to_threshold: Option<T>,
    pub succeeded: bool,
    pub final_dy_norm: T,
    pub truncated_ticks: usize,
}

/// Runs the loop for up to `horizon` seconds of plant time.
///
/// Diagnostics for every completed tick reach `sink` before any error is returned.
pub fn run_closed_loop<T: Real, P: Plant<T> + ?Sized>(
    plant: &mut P,
    net: &mut RbfNetwork<T>,
    cfg: &ControllerConfig<T>,
    reference: &dyn Reference<T>,
    horizon: T,
    success: Option<SuccessRule<T>>,
    sink: &mut dyn DiagnosticsSink<T>,
) -> Result<LoopSummary<T>, ControlError> {
    cfg.validate(net)?;
    let dims = net.dims();
    let head = Head::Feature(cfg.target_feature);
    let dt = cfg.dt;
    let t0 = plant.time();
    let ticks = (horizon / dt).round().to_usize().unwrap_or(0);

    let mut r_rate = StreamingDifferentiator::new(dt);
    let mut y_rate = StreamingDifferentiator::new(dt);
    r_rate.push(&plant.gripper());
    y_rate.push(&plant.feature(cfg.target_feature));

    let mut summary = LoopSummary {
        ticks: 0,
        elapsed: T::zero(),
        time_to_threshold: None,
        succeeded: false,
        final_dy_norm: T::zero(),
        truncated_ticks: 0,
    };
    let mut below_since: Option<T> = None;

    for _ in 0..ticks {
        let t = plant.time() - t0;
        let phi = plant.shape();
        let y = plant.feature(cfg.target_feature);
        let r = plant.gripper();
        let (y_d, ydot_d) = reference.sample(t);
        let theta = net.activations(&phi);
        let j_hat = net.jacobian_from_activations(&theta, head);
        let out = control_law(&j_hat, &y, &y_d, &ydot_d, cfg);
        if !out.u.iter().all(|v| v.is_finite()) {
            return Err(ControlError::NonFinite { time: t.f64() });
        }
        let full_rank = out.rank == dims.l.min(dims.n);
        if !full_rank {
            summary.truncated_ticks += 1;
        }

        plant.advance([out.u[0], out.u[1], out.u[2]], dt)?;
        let y_next = plant.feature(cfg.target_feature);
        let r_next = plant.gripper();

        let rates = match cfg.rate_estimate {
            RateEstimate::OneStep => Some((
                (0..3).map(|k| (r_next[k] - r[k]) / dt).collect::<Vec<T>>(),
                (0..3).map(|k| (y_next[k] - y[k]) / dt).collect::<Vec<T>>(),
            )),
            RateEstimate::Filtered => {
                let rd = r_rate.push(&r_next);
                let yd = y_rate.push(&y_next);
                rd.zip(yd)
            }
        };

        let mut e_w = None;
        let mut residual = None;
        if let Some((rdot, ydot)) = rates {
            let pred = j_hat.mul_vec(&rdot);
            let e: Vec<T> = ydot.iter().zip(&pred).map(|(&a, &b)| a - b).collect();
            let masked = cfg.input_mask.iter().any(|&on| !on);
            if full_rank && !masked {
                let res: Vec<T> =
                    (0..dims.l).map(|k| e[k] - (ydot[k] - ydot_d[k]) - cfg.kp[k] * out.dy[k]).collect();
                let rn = norm(&res);
                residual = Some(rn);
                if let Some(g) = cfg.identity_gain {
                    let tol = g * dt;
                    if !(rn <= tol) {
                        let diag = diagnostics(t, &out, Some(e.clone()), residual);
                        sink.emit(&diag);
                        return Err(ControlError::IdentityViolated {
                            time: t.f64(),
                            residual: rn.f64(),
                            tolerance: tol.f64(),
                        });
                    }
                }
            }
            if cfg.update_enabled {
                update_weights_at(net, &theta, &rdot, &out.dy, &e, cfg, dt);
            }
            e_w = Some(e);
        }

        let diag = diagnostics(t, &out, e_w, residual);
        sink.emit(&diag);
        summary.ticks += 1;
        summary.elapsed = plant.time() - t0;
        let dn = norm(&out.dy);
        summary.final_dy_norm = dn;

        if !(dn <= cfg.divergence_bound) || !diag.is_finite() {
            return Err(ControlError::Diverged { time: t.f64(), dy_norm: dn.f64() });
        }
        if let Some(rule) = success {
            if dn < rule.threshold {
                let since = *below_since.get_or_insert(t);
                summary.time_to_threshold = Some(since);
                if t - since >= rule.hold {
                    summary.succeeded = true;
                    return Ok(summary);
                }
            } else {
                below_since = None;
                summary.time_to_threshold = None;
            }
        }
    }
    Ok(summary)
}

fn diagnostics<T: Real>(t: T, out: &ControlOutput<T>, e_w: Option<Vec<T>>, residual: Option<T>) -> LoopDiagnostics<T> {
    LoopDiagnostics {
        t,
        v_task: T::half() * out.dy.iter().map(|&d| d * d).sum::<T>(),
        dy: out.dy.clone(),
        e_w,
        u: out.u.clone(),
        rank: out.rank,
        identity_residual: residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::SyntheticPlant;
    use crate::rbfn::Dims;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn pinv_of_identity() {
        let (p, rank) = truncated_pinv(&Matrix::<f64>::identity(3), 0.0);
        assert_eq!(rank, 3);
        assert!(p.sub(&Matrix::identity(3)).max_abs() < 1e-15);
    }

    #[test]
    fn pinv_drops_small_singular_values() {
        let (p, rank) = truncated_pinv(&Matrix::diag(&[1.0, 1.0, 1e-9]), 1e-6);
        assert_eq!(rank, 2);
        assert!(p.sub(&Matrix::diag(&[1.0, 1.0, 0.0])).max_abs() < 1e-15);
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let (p, rank) = truncated_pinv(&Matrix::<f64>::zeros(3, 3), 0.0);
        assert_eq!(rank, 0);
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (r, c) in [(3, 3), (3, 3), (2, 3), (3, 2), (3, 3)] {
            let j = random_matrix(&mut rng, r, c);
            let (p, rank) = truncated_pinv(&j, 0.0);
            assert_eq!(rank, r.min(c));
            let jp = j.mul(&p);
            let pj = p.mul(&j);
            assert!(jp.mul(&j).sub(&j).max_abs() < 1e-10);
            assert!(pj.mul(&p).sub(&p).max_abs() < 1e-10);
            assert!(jp.sub(&jp.transpose()).max_abs() < 1e-10);
            assert!(pj.sub(&pj.transpose()).max_abs() < 1e-10);
        }
    }

    #[test]
    fn control_law_examples() {
        let cfg = ControllerConfig::<f64>::task1();
        let i3 = Matrix::identity(3);
        let zero = control_law(&i3, &[0.3, 0.1, 0.0], &[0.3, 0.1, 0.0], &[0.0; 3], &cfg);
        assert_eq!(zero.u, vec![0.0; 3]);
        let out = control_law(&i3, &[0.1, 0.0, 0.0], &[0.0; 3], &[0.0; 3], &cfg);
        assert!((out.u[0] + 0.02).abs() < 1e-15);
        assert_eq!(&out.u[1..], &[0.0, 0.0]);
        assert_eq!(out.rank, 3);
    }

    #[test]
    fn mask_zeroes_vertical() {
        let cfg = ControllerConfig::<f64>::task3();
        let out = control_law(&Matrix::identity(3), &[0.1, 0.1, 0.1], &[0.0; 3], &[0.0; 3], &cfg);
        assert_eq!(out.u[2], 0.0);
        assert!(out.u[0] < 0.0 && out.u[1] < 0.0);
        assert_eq!(out.rank, 2);
    }

    #[test]
    fn mask_solves_least_squares_over_free_axes() {
        // coupled Jacobian: post-hoc zeroing of u_z would leave the wrong u_x
        let j = Matrix::from_row_major(3, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let cfg = ControllerConfig::<f64>::task3();
        let out = control_law(&j, &[0.1, 0.0, 0.0], &[0.0; 3], &[0.0; 3], &cfg);
        assert!((out.u[0] + 0.02).abs() < 1e-14);
        assert_eq!(out.u[1], 0.0);
        assert_eq!(out.u[2], 0.0);
    }

    #[test]
    fn presets() {
        let t2 = ControllerConfig::<f64>::task2();
        assert_eq!(t2.kp, vec![0.5; 3]);
        assert_eq!(t2.gains, vec![Gain::Scaled(20.0); 3]);
        assert_eq!(t2.lambda, 10.0);
        assert_eq!(t2.target_feature, 5);
        let t3 = ControllerConfig::<f64>::task3();
        assert_eq!(t3.gains, vec![Gain::Scaled(1.0); 3]);
        assert_eq!(t3.kp, vec![0.2; 3]);
    }

    fn one_neuron() -> RbfNetwork<f64> {
        let dims = Dims { q: 1, l: 1, n: 1, m: 1 };
        RbfNetwork::new(dims, vec![0.0], vec![1.0], vec![0.5], 0).unwrap()
    }

    #[test]
    fn scalar_update_by_hand() {
        let mut net = one_neuron();
        let cfg = ControllerConfig {
            kp: vec![0.2],
            gains: vec![Gain::Scaled(20.0)],
            input_mask: vec![true],
            target_feature: 0,
            ..ControllerConfig::task1()
        };
        let (phi, rdot, dy, e, dt) = (0.3, 0.05, 0.01, -0.002, 0.02);
        update_weights(&mut net, &[phi], &[rdot], &[dy], &[e], &cfg, dt);
        let theta = (-(phi * phi) / 1.0f64).exp();
        let expected = 0.5 + dt * rdot * 20.0 * theta * (dy + 10.0 * e);
        assert!((net.weights()[0] - expected).abs() < 1e-16);
    }

    #[test]
    fn full_gain_matches_scaled() {
        let w = [0.3f64, -1.0, 2.0];
        let full = Gain::Full(Matrix::diag(&[4.0, 4.0, 4.0]));
        assert!((full.inverse_quadratic(&w) - Gain::Scaled(4.0).inverse_quadratic(&w)).abs() < 1e-14);
        assert_eq!(full.apply(&w), Gain::Scaled(4.0).apply(&w));
        let indefinite = Gain::Full(Matrix::diag(&[1.0, -1.0, 1.0]));
        assert!(indefinite.validate(3).is_err());
    }

    fn small_net(seed: u64) -> RbfNetwork<f64> {
        let dims = Dims { q: 6, l: 3, n: 3, m: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..dims.q * dims.input_len()).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let widths = (0..dims.q).map(|_| rng.gen_range(0.5..1.0)).collect();
        let weights = (0..dims.feature_rows() * dims.q).map(|_| rng.gen_range(-0.3..0.3)).collect();
        RbfNetwork::new(dims, centers, widths, weights, 0).unwrap()
    }

    proptest! {
        #[test]
        fn no_motion_no_update(
            seed in 0u64..1000,
            dy in proptest::collection::vec(-1.0f64..1.0, 3),
            e in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let mut net = small_net(seed);
            let before = net.weights().to_vec();
            let phi = vec![0.05; 6];
            let cfg = ControllerConfig { target_feature: 1, ..ControllerConfig::task1() };
            update_weights(&mut net, &phi, &[0.0; 3], &dy, &e, &cfg, 0.02);
            prop_assert_eq!(net.weights(), &before[..]);
        }

        #[test]
        fn only_target_block_moves(seed in 0u64..1000, r in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let mut net = small_net(seed);
            let before = net.weights().to_vec();
            let cfg = ControllerConfig { target_feature: 1, ..ControllerConfig::task1() };
            update_weights(&mut net, &[0.0; 6], &r, &[0.1, 0.2, -0.1], &[0.01; 3], &cfg, 0.02);
            let block = net.block_range(Head::Feature(1));
            let q = net.dims().q;
            for (k, (a, b)) in net.weights().iter().zip(&before).enumerate() {
                if !block.contains(&(k / q)) {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn truncation_bounds_input(
            entries in proptest::collection::vec(-1.0f64..1.0, 9),
            tiny in 1e-12f64..1e-4,
            dy in proptest::collection::vec(-0.2f64..0.2, 3),
        ) {
            let mut j = Matrix::from_row_major(3, 3, entries);
            let s = svd(&j);
            // rebuild with the smallest singular value forced tiny
            let mut sv = s.singular_values.clone();
            sv[2] = tiny;
            j = Matrix::from_fn(3, 3, |r, c| (0..3).map(|k| s.u[(r, k)] * sv[k] * s.v[(c, k)]).sum());
            let cfg = ControllerConfig::<f64>::task1();
            let out = control_law(&j, &dy, &[0.0; 3], &[0.0; 3], &cfg);
            prop_assume!(out.rank > 0);
            let rhs: Vec<f64> = dy.iter().map(|d| -0.2 * d).collect();
            prop_assert!(norm(&out.u) <= norm(&rhs) / cfg.sigma_trunc);
        }
    }

    /// Plant `ẏ = Ĵu` with the same network: Δy follows `exp(−K_p t)`.
    #[test]
    fn exponential_decay_without_model_error() {
        let mut truth = small_net(3);
        // make the Jacobian comfortably invertible
        let d = truth.dims();
        let rows = truth.block_range(Head::Feature(0));
        for row in rows {
            let (j, c) = ((row % d.block_rows()) % d.l, (row % d.block_rows()) / d.l);
            if j == c {
                for k in 0..d.q {
                    truth.weights_mut()[row * d.q + k] += 0.5;
                }
            }
        }
        let phi = vec![0.0; 6];
        let mut plant = SyntheticPlant::new(truth.clone(), phi.clone(), [0.0; 3]);
        let mut net = truth.clone();
        let y0 = plant.feature(0);
        let goal = [y0[0] + 0.05, y0[1] - 0.03, y0[2] + 0.02];
        let dt = 1e-3;
        let cfg = ControllerConfig {
            dt,
            target_feature: 0,
            update_enabled: false,
            rate_estimate: RateEstimate::OneStep,
            ..ControllerConfig::task1()
        };
        let mut log = Vec::new();
        run_closed_loop(&mut plant, &mut net, &cfg, &FixedPoint(goal), 5.0, None, &mut log).unwrap();
        for entry in log.iter().step_by(500) {
            for k in 0..3 {
                let dy0 = y0[k] - goal[k];
                let exact = dy0 * (-0.2 * entry.t).exp();
                assert!((entry.dy[k] - exact).abs() < 2e-4 * dy0.abs() + 1e-12, "t={} k={k}", entry.t);
            }
        }
    }

    #[test]
    fn csv_row_layout() {
        let d = LoopDiagnostics {
            t: 0.02,
            dy: vec![3.0, 4.0, 0.0],
            e_w: None,
            u: vec![1.0, 2.0, 3.0],
            rank: 3,
            v_task: 12.5,
            identity_residual: None,
        };
        assert_eq!(LoopDiagnostics::<f64>::csv_header(3), "t,dy_norm,ew_norm,u_0,u_1,u_2,rank,V_task");
        let row = d.csv_row();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[1].parse::<f64>().unwrap(), 5.0);
        assert!(fields[2].parse::<f64>().unwrap().is_nan());
        assert_eq!(fields[6], "3");
    }

    #[test]
    fn timed_path_interpolates() {
        let p = TimedPath::new(vec![(0.0, [0.0; 3]), (2.0, [1.0, 0.0, 0.0]), (3.0, [1.0, 1.0, 0.0])]).unwrap();
        let (y, v) = p.sample(1.0);
        assert_eq!(y, [0.5, 0.0, 0.0]);
        assert_eq!(v, [0.5, 0.0, 0.0]);
        let (y, v) = p.sample(2.5);
        assert_eq!(y, [1.0, 0.5, 0.0]);
        assert_eq!(v, [0.0, 1.0, 0.0]);
        assert_eq!(p.sample(10.0), ([1.0, 1.0, 0.0], [0.0; 3]));
        assert!(TimedPath::new(vec![(1.0, [0.0; 3]), (1.0, [0.0; 3])]).is_none());
    }

    #[test]
    fn divergence_aborts_with_diagnostics() {
        let truth = small_net(4);
        let mut plant = SyntheticPlant::new(truth.clone(), vec![0.0; 6], [0.0; 3]);
        let mut net = truth;
        let cfg = ControllerConfig { target_feature: 0, divergence_bound: 1e-6, ..ControllerConfig::task1() };
        let mut log = Vec::new();
        let err = run_closed_loop(&mut plant, &mut net, &cfg, &FixedPoint([1.0, 1.0, 1.0]), 1.0, None, &mut log);
        assert!(matches!(err, Err(ControlError::Diverged { .. })));
        assert_eq!(log.len(), 1);
    }
}
