//! Layer wrappers: parameter registration plus forward helpers on the graph.

use rand::Rng;

use super::array::{Array, Scalar};
use super::graph::{Graph, NodeId};
use super::store::{bias_uniform, kaiming_uniform, ParamStore};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: String,
    pub b: String,
}

impl Linear {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let layer = Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
        };
        store.insert(&layer.w, kaiming_uniform(rng, &[in_dim, out_dim], in_dim), true);
        store.insert(&layer.b, bias_uniform(rng, out_dim, in_dim), true);
        layer
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> NodeId {
        let w = g.param(store, &self.w);
        let b = g.param(store, &self.b);
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: String,
    pub b: String,
}

impl Conv2d {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        let layer = Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
        };
        let fan_in = in_ch * 9;
        store.insert(&layer.w, kaiming_uniform(rng, &[out_ch, in_ch, 3, 3], fan_in), true);
        store.insert(&layer.b, bias_uniform(rng, out_ch, fan_in), true);
        layer
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> NodeId {
        let w = g.param(store, &self.w);
        let b = g.param(store, &self.b);
        g.conv2d(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct ConvT2d {
    pub w: String,
    pub b: String,
}

impl ConvT2d {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        let layer = Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
        };
        let fan_in = out_ch * 9;
        store.insert(&layer.w, kaiming_uniform(rng, &[in_ch, out_ch, 3, 3], fan_in), true);
        store.insert(&layer.b, bias_uniform(rng, out_ch, fan_in), true);
        layer
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        out_hw: (usize, usize),
    ) -> NodeId {
        let w = g.param(store, &self.w);
        let b = g.param(store, &self.b);
        g.conv_t2d(x, w, b, out_hw)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: String,
    pub beta: String,
    pub running_mean: String,
    pub running_var: String,
}

impl BatchNorm {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        let layer = Self {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            running_mean: format!("{prefix}.running_mean"),
            running_var: format!("{prefix}.running_var"),
        };
        store.insert(&layer.gamma, Array::filled(&[channels], T::one()), true);
        store.insert(&layer.beta, Array::zeros(&[channels]), true);
        store.insert(&layer.running_mean, Array::zeros(&[channels]), false);
        store.insert(&layer.running_var, Array::filled(&[channels], T::one()), false);
        layer
    }

    /// Batch statistics, gradient support, and a running-stat update.
    pub fn forward_train<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: NodeId,
    ) -> NodeId {
        let gamma = g.param(store, &self.gamma);
        let beta = g.param(store, &self.beta);
        let (y, mean, var) = g.batch_norm_train(x, gamma, beta, T::from_f64(NORM_EPS));
        let m = T::from_f64(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (rv, &bv) in store
            .get_mut(&self.running_mean)
            .data_mut()
            .iter_mut()
            .zip(&mean)
        {
            *rv = one_m * *rv + m * bv;
        }
        for (rv, &bv) in store
            .get_mut(&self.running_var)
            .data_mut()
            .iter_mut()
            .zip(&var)
        {
            *rv = one_m * *rv + m * bv;
        }
        y
    }

    /// Folded running statistics; no side effects.
    pub fn forward_infer<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
    ) -> NodeId {
        let eps = T::from_f64(NORM_EPS);
        let gamma = store.get(&self.gamma).data();
        let beta = store.get(&self.beta).data();
        let rm = store.get(&self.running_mean).data();
        let rv = store.get(&self.running_var).data();
        let mut scale = Vec::with_capacity(gamma.len());
        let mut shift = Vec::with_capacity(gamma.len());
        for i in 0..gamma.len() {
            let s = gamma[i] / (rv[i] + eps).sqrt();
            scale.push(s);
            shift.push(beta[i] - rm[i] * s);
        }
        g.channel_affine(x, scale, shift)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
}

impl LayerNorm {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Self {
        let layer = Self {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
        };
        store.insert(&layer.gamma, Array::filled(&[dim], T::one()), true);
        store.insert(&layer.beta, Array::zeros(&[dim]), true);
        layer
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> NodeId {
        let gamma = g.param(store, &self.gamma);
        let beta = g.param(store, &self.beta);
        g.layer_norm(x, gamma, beta, T::from_f64(NORM_EPS))
    }
}
