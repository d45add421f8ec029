//! Velocity estimation from sampled positions: central differences followed
//! by a 5-sample moving average.

use std::collections::VecDeque;

use crate::scalar::Real;

pub const SMOOTHING_WINDOW: usize = 5;

/// Samples lost at each end of an offline series, and the online delay in samples.
pub const FILTER_DELAY: usize = 1 + SMOOTHING_WINDOW / 2;

/// Offline estimate for a whole series of `dim`-vectors sampled every `dt`.
///
/// Entry `k` of the result is the velocity at sample `k`; the first and last
/// [`FILTER_DELAY`] entries are `None`.
pub fn differentiate_series<T: Real>(series: &[Vec<T>], dt: T) -> Vec<Option<Vec<T>>> {
    let n = series.len();
    let dim = series.first().map_or(0, Vec::len);
    let two_dt = dt + dt;
    let central: Vec<Option<Vec<T>>> = (0..n)
        .map(|k| {
            (k >= 1 && k + 1 < n).then(|| (0..dim).map(|d| (series[k + 1][d] - series[k - 1][d]) / two_dt).collect())
        })
        .collect();
    let half = SMOOTHING_WINDOW / 2;
    let w = T::of(SMOOTHING_WINDOW as f64);
    (0..n)
        .map(|k| {
            if k < FILTER_DELAY || k + FILTER_DELAY >= n {
                return None;
            }
            let mut acc = vec![T::zero(); dim];
            for c in &central[k - half..=k + half] {
                let c = c.as_ref().expect("interior central difference");
                for (a, &v) in acc.iter_mut().zip(c) {
                    *a += v;
                }
            }
            Some(acc.into_iter().map(|a| a / w).collect())
        })
        .collect()
}

/// Streaming version of [`differentiate_series`]: after each push it returns
/// the smoothed velocity centered [`FILTER_DELAY`] samples in the past.
#[derive(Clone, Debug)]
pub struct StreamingDifferentiator<T> {
    dt: T,
    positions: VecDeque<Vec<T>>,
}

impl<T: Real> StreamingDifferentiator<T> {
    pub fn new(dt: T) -> Self {
        Self { dt, positions: VecDeque::with_capacity(2 * FILTER_DELAY + 1) }
    }

    pub fn push(&mut self, position: &[T]) -> Option<Vec<T>> {
        self.positions.push_back(position.to_vec());
        if self.positions.len() > 2 * FILTER_DELAY + 1 {
            self.positions.pop_front();
        }
        if self.positions.len() < 2 * FILTER_DELAY + 1 {
            return None;
        }
        let window: Vec<Vec<T>> = self.positions.iter().cloned().collect();
        differentiate_series(&window, self.dt)[FILTER_DELAY].clone()
    }

    pub fn reset(&mut self) {
        self.positions.clear();
    }
}
