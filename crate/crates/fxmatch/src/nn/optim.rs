//! Adam with optional global-norm gradient clipping.

use std::collections::BTreeMap;

use super::array::{Array, Scalar};
use super::store::ParamStore;

pub struct Adam<T: Scalar> {
    pub lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: BTreeMap<String, Array<T>>,
    v: BTreeMap<String, Array<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update. Gradients for missing or non-trainable parameters
    /// are ignored.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &BTreeMap<String, Array<T>>) {
        self.t += 1;
        let bc1 = T::one() - self.beta1.powi(self.t);
        let bc2 = T::one() - self.beta2.powi(self.t);
        for (name, grad) in grads {
            if !store.contains(name) || !store.is_trainable(name) {
                continue;
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(grad.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(grad.shape()));
            let w = store.get_mut(name);
            let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
            for i in 0..grad.numel() {
                let gi = grad.data()[i];
                let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
                let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                w.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Scale all gradients down so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Array<T>>, max_norm: T) -> T {
    let total: T = grads
        .values()
        .fold(T::zero(), |acc, g| acc + g.sq_norm())
        .sqrt();
    if total > max_norm && total > T::zero() {
        let scale = max_norm / total;
        for g in grads.values_mut() {
            g.scale(scale);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Array::from_vec(vec![-4.0, 7.0], &[2]), true);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            // loss = (w0 - 3)^2 + (w1 + 2)^2
            let w = store.get("w");
            let grad = Array::from_vec(
                vec![2.0 * (w.data()[0] - 3.0), 2.0 * (w.data()[1] + 2.0)],
                &[2],
            );
            let grads = BTreeMap::from([("w".to_string(), grad)]);
            opt.step(&mut store, &grads);
        }
        let w = store.get("w");
        assert!((w.data()[0] - 3.0).abs() < 1e-3, "{:?}", w.data());
        assert!((w.data()[1] + 2.0).abs() < 1e-3, "{:?}", w.data());
    }

    #[test]
    fn frozen_params_are_not_updated() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Array::scalar(1.0), false);
        let mut opt = Adam::new(0.1);
        let grads = BTreeMap::from([("w".to_string(), Array::scalar(5.0))]);
        opt.step(&mut store, &grads);
        assert_eq!(store.get("w").item(), 1.0);
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = BTreeMap::from([
            ("a".to_string(), Array::from_vec(vec![3.0f64], &[1])),
            ("b".to_string(), Array::from_vec(vec![4.0f64], &[1])),
        ]);
        let pre = clip_global_norm(&mut grads, 1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        let post = (grads["a"].sq_norm() + grads["b"].sq_norm()).sqrt();
        assert!((post - 1.0).abs() < 1e-12);
        // already small: untouched
        let mut grads = BTreeMap::from([("a".to_string(), Array::from_vec(vec![0.3f64], &[1]))]);
        clip_global_norm(&mut grads, 1.0);
        assert_eq!(grads["a"].item(), 0.3);
    }
}
