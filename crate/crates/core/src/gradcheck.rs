//! Central finite-difference check of the training gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::TrainingSample;
use crate::rbfn::{Dims, Gradients, RbfNetwork};
use crate::train::sample_loss;

// balances rounding (ε|L|/h) against truncation (h²)
const STEP: f64 = 3e-5;
/// denominators below this are treated as this, so near-zero gradients compare absolutely
const FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParameterGroup {
    Weights,
    Centers,
    Widths,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub configurations: usize,
    pub parameters_checked: usize,
    pub worst_relative_error: f64,
    /// `(configuration, group, index)` of the worst parameter
    pub worst_at: Option<(usize, ParameterGroup, usize)>,
}

/// `|a − fd| / max(|a|, |fd|, 1e-4)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Random network of at most 16 neurons and 12 shape inputs.
pub fn random_case(rng: &mut ChaCha8Rng, beta: f64) -> (RbfNetwork<f64>, TrainingSample<f64>) {
    let l = rng.gen_range(1..=3);
    let m = rng.gen_range(1..=12 / l);
    let n = rng.gen_range(1..=3);
    let q = rng.gen_range(1..=16);
    let dims = Dims { q, l, n, m };
    let d = dims.input_len();
    let centers: Vec<f64> = (0..q * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let widths: Vec<f64> = (0..q).map(|_| rng.gen_range(0.4..1.5)).collect();
    let weights: Vec<f64> = (0..dims.feature_rows() * q).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let net = RbfNetwork::new(dims, centers, widths, weights, 0).expect("valid random network");
    loop {
        // stay near the centers so activations are not vanishingly small
        let anchor = rng.gen_range(0..q);
        let phi: Vec<f64> = net.center(anchor).iter().map(|&c| c + rng.gen_range(-0.3..0.3)).collect();
        let rdot: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xdot: Vec<f64> = (0..l * m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sample = TrainingSample { t: 0.0, phi, rdot, xdot };
        // keep every error component away from the loss knee
        let theta = net.activations(&sample.phi);
        let clear = (0..m).all(|f| {
            let pred = net.jacobian_from_activations(&theta, crate::rbfn::Head::Feature(f)).mul_vec(&sample.rdot);
            sample.feature_velocity(f, l).iter().zip(&pred).all(|(&y, &p)| ((y - p).abs() - beta).abs() > 1e-3)
        });
        if clear {
            return (net, sample);
        }
    }
}

/// Compares analytic and central-difference gradients of the summed smooth-L1
/// loss over `configurations` random networks.
pub fn gradient_check(configurations: usize, seed: u64, beta: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        configurations,
        parameters_checked: 0,
        worst_relative_error: 0.0,
        worst_at: None,
    };
    for config in 0..configurations {
        let (mut net, sample) = random_case(&mut rng, beta);
        let mut grads = Gradients::zeros(net.dims());
        sample_loss(&net, &sample, beta, Some(&mut grads));
        let analytic = [grads.weights, grads.centers, grads.widths];
        let groups = [ParameterGroup::Weights, ParameterGroup::Centers, ParameterGroup::Widths];
        for (g, group) in groups.into_iter().enumerate() {
            for i in 0..analytic[g].len() {
                let original = net.parameters_mut()[g][i];
                net.parameters_mut()[g][i] = original + STEP;
                let plus = sample_loss(&net, &sample, beta, None);
                net.parameters_mut()[g][i] = original - STEP;
                let minus = sample_loss(&net, &sample, beta, None);
                net.parameters_mut()[g][i] = original;
                let fd = (plus - minus) / (2.0 * STEP);
                let rel = relative_error(analytic[g][i], fd);
                report.parameters_checked += 1;
                if rel > report.worst_relative_error || report.worst_at.is_none() {
                    report.worst_relative_error = rel;
                    report.worst_at = Some((config, group, i));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_passes() {
        let r = gradient_check(10, 1, 1.0);
        assert!(r.worst_relative_error < 1e-5, "{r:?}");
        assert!(r.parameters_checked > 100);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0), 1e-5);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }
}
