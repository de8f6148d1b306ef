//! Return-based loss weights across embodiments.

use crate::scalar::Scalar;

/// `w_i = 1 - (R_i - R_min) / (R_max - R_min + eps)`.
pub fn compute_embodiment_weights<T: Scalar>(returns: &[T], eps: T) -> Vec<T> {
    let Some(&first) = returns.first() else {
        return Vec::new();
    };
    let (lo, hi) = returns.iter().fold((first, first), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let denom = hi - lo + eps;
    returns.iter().map(|&r| T::one() - (r - lo) / denom).collect()
}

/// Exponential moving average of completed-episode returns per embodiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTracker {
    pub decay: f64,
    pub value: Vec<Option<f64>>,
}

impl ReturnTracker {
    pub fn new(n: usize, decay: f64) -> Self {
        ReturnTracker {
            decay,
            value: vec![None; n],
        }
    }

    /// The first episode initializes the average.
    pub fn record(&mut self, embodiment: usize, ret: f64) {
        let v = &mut self.value[embodiment];
        *v = Some(match *v {
            Some(old) => self.decay * old + (1.0 - self.decay) * ret,
            None => ret,
        });
    }

    /// Weights over the embodiments with a return so far; the others get 1.
    pub fn weights(&self, eps: f64, floor: f64) -> Vec<f64> {
        let seen: Vec<f64> = self.value.iter().flatten().copied().collect();
        let w = compute_embodiment_weights(&seen, eps);
        let mut it = w.into_iter();
        self.value
            .iter()
            .map(|v| match v {
                Some(_) => it.next().expect("one weight per seen return").max(floor),
                None => 1.0,
            })
            .collect()
    }
}
