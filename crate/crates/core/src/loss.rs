//! Smooth-L1 loss: quadratic inside `|e| < β`, linear outside.

use crate::scalar::Real;

/// Per-component loss.
pub fn smooth_l1_component<T: Real>(e: T, beta: T) -> T {
    if e.abs() < beta {
        T::half() * e * e / beta
    } else {
        e.abs() - T::half() * beta
    }
}

/// Per-component derivative; continuous at `|e| = β`.
pub fn smooth_l1_derivative<T: Real>(e: T, beta: T) -> T {
    if e.abs() < beta {
        e / beta
    } else {
        e.signum()
    }
}

/// `L = Σ_j L_j` and `∂L/∂e`.
pub fn smooth_l1_loss<T: Real>(e: &[T], beta: T) -> (T, Vec<T>) {
    let loss = e.iter().map(|&x| smooth_l1_component(x, beta)).sum();
    let grad = e.iter().map(|&x| smooth_l1_derivative(x, beta)).collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_error() {
        let (l, g) = smooth_l1_loss(&[0.0f64; 3], 1.0);
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn knee_value_from_both_branches() {
        let quadratic = 0.5 * 1.0f64 * 1.0 / 1.0;
        let linear = 1.0f64 - 0.5;
        assert_eq!(smooth_l1_component(1.0f64, 1.0), 0.5);
        assert_eq!(quadratic, linear);
        assert_eq!(smooth_l1_component(-1.0f64, 1.0), 0.5);
    }

    #[test]
    fn linear_branch() {
        assert_eq!(smooth_l1_component(2.0f64, 1.0), 1.5);
        let (l, g) = smooth_l1_loss(&[2.0f64, -0.5, -3.0], 1.0);
        assert_eq!(l, 1.5 + 0.125 + 2.5);
        assert_eq!(g, vec![1.0, -0.5, -1.0]);
    }

    proptest! {
        #[test]
        fn continuous_at_knee(beta in 1e-3f64..10.0, delta in 1e-12f64..1e-6) {
            let below = smooth_l1_component(beta - delta, beta);
            let above = smooth_l1_component(beta + delta, beta);
            prop_assert!((below - above).abs() <= 2.0 * delta + 1e-12);
            let gb = smooth_l1_derivative(beta - delta, beta);
            let ga = smooth_l1_derivative(beta + delta, beta);
            prop_assert!((gb - ga).abs() <= delta / beta + 1e-12);
        }

        #[test]
        fn derivative_matches_finite_difference(e in -5.0f64..5.0, beta in 0.1f64..3.0) {
            prop_assume!((e.abs() - beta).abs() > 1e-4);
            let h = 1e-6;
            let fd = (smooth_l1_component(e + h, beta) - smooth_l1_component(e - h, beta)) / (2.0 * h);
            prop_assert!((fd - smooth_l1_derivative(e, beta)).abs() < 1e-6);
        }
    }
}
