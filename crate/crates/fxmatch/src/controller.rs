//! Feed-forward controller: maps the concatenated (input, reference)
//! embedding pair onto normalized effect parameters through four hidden
//! layers with layer norm and leaky ReLU, ending in a sigmoid.

use rand::Rng;

use crate::nn::{Graph, LayerNorm, Linear, NodeId, ParamStore, Scalar};
use crate::vae::LATENT_DIM;

pub const HIDDEN_DIMS: [usize; 4] = [128, 128, 64, 32];
pub const LEAKY_SLOPE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Controller {
    pub num_effect_params: usize,
    hidden: Vec<(Linear, LayerNorm)>,
    out: Linear,
}

impl Controller {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        num_effect_params: usize,
    ) -> Self {
        let mut hidden = Vec::new();
        let mut in_dim = 2 * LATENT_DIM;
        for (i, &dim) in HIDDEN_DIMS.iter().enumerate() {
            let lin = Linear::init(store, rng, &format!("ctl.fc{i}"), in_dim, dim);
            let ln = LayerNorm::init(store, &format!("ctl.ln{i}"), dim);
            hidden.push((lin, ln));
            in_dim = dim;
        }
        let out = Linear::init(store, rng, "ctl.out", in_dim, num_effect_params);
        Self {
            num_effect_params,
            hidden,
            out,
        }
    }

    /// x is the [B, 256] concatenation of input and reference embeddings;
    /// returns theta in (0,1)^P per row.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> NodeId {
        assert_eq!(g.value(x).shape()[1], 2 * LATENT_DIM, "controller input dim");
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut h = x;
        for (lin, ln) in &self.hidden {
            h = lin.forward(g, store, h);
            h = ln.forward(g, store, h);
            h = g.leaky_relu(h, slope);
        }
        let logits = self.out.forward(g, store, h);
        g.sigmoid(logits)
    }
}
