//! Spectrogram beta-VAE. The encoder is four stride-2 convolutions with
//! batch norm and ReLU feeding two linear heads (mean and log-variance of a
//! 128-d latent); the decoder mirrors it with transposed convolutions and a
//! sigmoid output. Spectrograms are normalized to [0,1] before entering.

use rand::Rng;

use crate::nn::{
    conv_out_len, Array, BatchNorm, Conv2d, ConvT2d, Graph, Linear, NodeId, ParamStore, Scalar,
};
use crate::stft::Spectrogram;

pub const LATENT_DIM: usize = 128;
const CHANNELS: [usize; 5] = [1, 8, 16, 32, 32];

#[derive(Debug, Clone)]
pub struct SpectroVae {
    pub freq_bins: usize,
    pub frames: usize,
    /// spatial size after each encoder conv, starting with the input
    pub shapes: [(usize, usize); 5],
    pub flat: usize,
    enc_convs: Vec<Conv2d>,
    enc_bns: Vec<BatchNorm>,
    fc_mu: Linear,
    fc_logvar: Linear,
    dec_fc: Linear,
    dec_convts: Vec<ConvT2d>,
    dec_bns: Vec<BatchNorm>,
}

impl SpectroVae {
    /// Register all parameters under `vae.` and fix the shape plan for the
    /// given spectrogram size.
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        freq_bins: usize,
        frames: usize,
    ) -> Self {
        let mut shapes = [(freq_bins, frames); 5];
        for i in 1..5 {
            shapes[i] = (conv_out_len(shapes[i - 1].0), conv_out_len(shapes[i - 1].1));
        }
        let (h4, w4) = shapes[4];
        let flat = CHANNELS[4] * h4 * w4;

        let mut enc_convs = Vec::new();
        let mut enc_bns = Vec::new();
        for i in 0..4 {
            enc_convs.push(Conv2d::init(
                store,
                rng,
                &format!("vae.enc.conv{i}"),
                CHANNELS[i],
                CHANNELS[i + 1],
            ));
            enc_bns.push(BatchNorm::init(
                store,
                &format!("vae.enc.bn{i}"),
                CHANNELS[i + 1],
            ));
        }
        let fc_mu = Linear::init(store, rng, "vae.enc.fc_mu", flat, LATENT_DIM);
        let fc_logvar = Linear::init(store, rng, "vae.enc.fc_logvar", flat, LATENT_DIM);

        let dec_fc = Linear::init(store, rng, "vae.dec.fc", LATENT_DIM, flat);
        let mut dec_convts = Vec::new();
        let mut dec_bns = Vec::new();
        for i in 0..4 {
            // walk the channel list backwards: 32 -> 32 -> 16 -> 8 -> 1
            dec_convts.push(ConvT2d::init(
                store,
                rng,
                &format!("vae.dec.convt{i}"),
                CHANNELS[4 - i],
                CHANNELS[3 - i],
            ));
            if i < 3 {
                dec_bns.push(BatchNorm::init(
                    store,
                    &format!("vae.dec.bn{i}"),
                    CHANNELS[3 - i],
                ));
            }
        }

        Self {
            freq_bins,
            frames,
            shapes,
            flat,
            enc_convs,
            enc_bns,
            fc_mu,
            fc_logvar,
            dec_fc,
            dec_convts,
            dec_bns,
        }
    }

    pub fn encode_train<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: NodeId,
    ) -> (NodeId, NodeId) {
        assert_eq!(
            &g.value(x).shape()[1..],
            &[1, self.freq_bins, self.frames],
            "encoder input shape mismatch"
        );
        let mut h = x;
        for i in 0..4 {
            h = self.enc_convs[i].forward(g, store, h);
            h = self.enc_bns[i].forward_train(g, store, h);
            h = g.relu(h);
        }
        let bsz = g.value(h).shape()[0];
        let flat = g.reshape(h, &[bsz, self.flat]);
        let mu = self.fc_mu.forward(g, store, flat);
        let logvar = self.fc_logvar.forward(g, store, flat);
        (mu, logvar)
    }

    pub fn encode_infer<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
    ) -> (NodeId, NodeId) {
        let mut h = x;
        for i in 0..4 {
            h = self.enc_convs[i].forward(g, store, h);
            h = self.enc_bns[i].forward_infer(g, store, h);
            h = g.relu(h);
        }
        let bsz = g.value(h).shape()[0];
        let flat = g.reshape(h, &[bsz, self.flat]);
        let mu = self.fc_mu.forward(g, store, flat);
        let logvar = self.fc_logvar.forward(g, store, flat);
        (mu, logvar)
    }

    pub fn decode_train<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        z: NodeId,
    ) -> NodeId {
        let bsz = g.value(z).shape()[0];
        let mut h = self.dec_fc.forward(g, store, z);
        h = g.relu(h);
        let (h4, w4) = self.shapes[4];
        h = g.reshape(h, &[bsz, CHANNELS[4], h4, w4]);
        for i in 0..4 {
            h = self.dec_convts[i].forward(g, store, h, self.shapes[3 - i]);
            if i < 3 {
                h = self.dec_bns[i].forward_train(g, store, h);
                h = g.relu(h);
            }
        }
        g.sigmoid(h)
    }

    pub fn decode_infer<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: NodeId,
    ) -> NodeId {
        let bsz = g.value(z).shape()[0];
        let mut h = self.dec_fc.forward(g, store, z);
        h = g.relu(h);
        let (h4, w4) = self.shapes[4];
        h = g.reshape(h, &[bsz, CHANNELS[4], h4, w4]);
        for i in 0..4 {
            h = self.dec_convts[i].forward(g, store, h, self.shapes[3 - i]);
            if i < 3 {
                h = self.dec_bns[i].forward_infer(g, store, h);
                h = g.relu(h);
            }
        }
        g.sigmoid(h)
    }

    /// z = mu + exp(0.5 logvar) * eps with caller-supplied noise.
    pub fn reparameterize<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        mu: NodeId,
        logvar: NodeId,
        eps: NodeId,
    ) -> NodeId {
        let half = g.mul_scalar(logvar, T::from_f64(0.5));
        let std = g.exp(half);
        let noise = g.mul(std, eps);
        g.add(mu, noise)
    }

    /// Inference-mode embedding: the latent mean for a batch of normalized
    /// spectrograms packed as [B, 1, freq_bins, frames].
    pub fn embed(&self, store: &ParamStore<f32>, batch: &Array<f32>) -> Array<f32> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let (mu, _) = self.encode_infer(&mut g, store, x);
        g.value(mu).clone()
    }
}

/// Pack normalized spectrograms into a [B, 1, H, W] batch array.
pub fn spectrogram_batch(specs: &[&Spectrogram]) -> Array<f32> {
    assert!(!specs.is_empty());
    let (h, w) = (specs[0].freq_bins, specs[0].frames);
    let mut out = Array::zeros(&[specs.len(), 1, h, w]);
    for (i, s) in specs.iter().enumerate() {
        assert_eq!((s.freq_bins, s.frames), (h, w), "ragged spectrogram batch");
        out.data_mut()[i * h * w..(i + 1) * h * w].copy_from_slice(&s.data);
    }
    out
}

pub struct VaeLoss {
    pub total: NodeId,
    pub recon: NodeId,
    pub kl: NodeId,
}

/// recon = mean squared error; kl = -0.5 * mean over batch of
/// sum_d(1 + logvar - mu^2 - exp(logvar)); total = recon + weight * kl.
pub fn vae_loss<T: Scalar>(
    g: &mut Graph<T>,
    recon: NodeId,
    target: NodeId,
    mu: NodeId,
    logvar: NodeId,
    kl_weight: T,
) -> VaeLoss {
    let diff = g.sub(recon, target);
    let sq = g.mul(diff, diff);
    let recon_loss = g.mean(sq);

    let d = g.value(mu).shape()[1];
    let ones = g.add_scalar(logvar, T::one());
    let mu2 = g.mul(mu, mu);
    let a = g.sub(ones, mu2);
    let ev = g.exp(logvar);
    let inner = g.sub(a, ev);
    let m = g.mean(inner);
    let kl = g.mul_scalar(m, T::from_f64(-0.5) * T::from_usize(d));

    let weighted = g.mul_scalar(kl, kl_weight);
    let total = g.add(recon_loss, weighted);
    VaeLoss {
        total,
        recon: recon_loss,
        kl,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_shape_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let vae = SpectroVae::init(&mut store, &mut rng, 513, 127);
        assert_eq!(vae.shapes, [(513, 127), (257, 64), (129, 32), (65, 16), (33, 8)]);
        assert_eq!(vae.flat, 32 * 33 * 8);
    }

    #[test]
    fn full_round_trip_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let vae = SpectroVae::init(&mut store, &mut rng, 513, 127);

        let mut g = Graph::new();
        let x = g.input(Array::zeros(&[2, 1, 513, 127]));
        let (mu, logvar) = vae.encode_train(&mut g, &mut store, x);
        assert_eq!(g.value(mu).shape(), &[2, LATENT_DIM]);
        assert_eq!(g.value(logvar).shape(), &[2, LATENT_DIM]);
        let eps = g.input(Array::zeros(&[2, LATENT_DIM]));
        let z = vae.reparameterize(&mut g, mu, logvar, eps);
        let out = vae.decode_train(&mut g, &mut store, z);
        assert_eq!(g.value(out).shape(), &[2, 1, 513, 127]);
        // sigmoid output lands in (0, 1)
        assert!(g.value(out).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn paper_scale_shape_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f32>::new();
        let vae = SpectroVae::init(&mut store, &mut rng, 2049, 127);
        assert_eq!(vae.shapes[4], (129, 8));
        assert_eq!(vae.flat, 32 * 129 * 8);
    }

    #[test]
    fn zero_noise_reparameterization_returns_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let vae = SpectroVae::init(&mut store, &mut rng, 33, 15);
        let mut g = Graph::new();
        let mu = g.input(Array::from_vec(vec![0.5; 2 * LATENT_DIM], &[2, LATENT_DIM]));
        let logvar = g.input(Array::from_vec(vec![-1.0; 2 * LATENT_DIM], &[2, LATENT_DIM]));
        let eps = g.input(Array::zeros(&[2, LATENT_DIM]));
        let z = vae.reparameterize(&mut g, mu, logvar, eps);
        assert_eq!(g.value(z).data(), g.value(mu).data());
    }

    #[test]
    fn kl_matches_hand_computation() {
        // mu = (1, 0), logvar = (0, 0): kl = -0.5 * ((1+0-1-1) + (1+0-0-1)) = 0.5
        let mut g = Graph::<f64>::new();
        let mu = g.input(Array::from_vec(vec![1.0, 0.0], &[1, 2]));
        let logvar = g.input(Array::zeros(&[1, 2]));
        let recon = g.input(Array::from_vec(vec![0.25, 0.75], &[1, 2]));
        let target = g.input(Array::from_vec(vec![0.25, 0.25], &[1, 2]));
        let loss = vae_loss(&mut g, recon, target, mu, logvar, 2.0);
        assert!((g.value(loss.kl).item() - 0.5).abs() < 1e-12);
        // recon mse = mean(0, 0.25) = 0.125; total = 0.125 + 2 * 0.5
        assert!((g.value(loss.recon).item() - 0.125).abs() < 1e-12);
        assert!((g.value(loss.total).item() - 1.125).abs() < 1e-12);
        // standard normal posterior has zero kl
        let mut g = Graph::<f64>::new();
        let mu = g.input(Array::zeros(&[3, 4]));
        let logvar = g.input(Array::zeros(&[3, 4]));
        let r = g.input(Array::zeros(&[3, 4]));
        let t = g.input(Array::zeros(&[3, 4]));
        let loss = vae_loss(&mut g, r, t, mu, logvar, 1.0);
        assert_eq!(g.value(loss.kl).item(), 0.0);
    }

    #[test]
    fn end_to_end_vae_gradients_match_fd() {
        use crate::nn::gradient_check;
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut store = ParamStore::<f64>::new();
        let vae = SpectroVae::init(&mut store, &mut rng, 9, 7);

        // Finite differences are meaningless at relu kinks, so shift every
        // relu preactivation well positive: batch-norm betas and the decoder
        // fc bias move the operating point, and smaller latent heads keep
        // mu/logvar moderate so nothing saturates downstream.
        let shifted: Vec<String> = store
            .names()
            .filter(|n| n.ends_with(".beta"))
            .map(str::to_string)
            .collect();
        for name in shifted {
            store.get_mut(&name).data_mut().fill(4.0);
        }
        store.get_mut("vae.dec.fc.b").data_mut().fill(4.0);
        for name in ["vae.enc.fc_mu.w", "vae.enc.fc_logvar.w"] {
            for v in store.get_mut(name).data_mut() {
                *v *= 0.05;
            }
        }

        let mut input = Array::<f64>::zeros(&[2, 1, 9, 7]);
        let mut noise = Array::<f64>::zeros(&[2, LATENT_DIM]);
        let mut target = Array::<f64>::zeros(&[2, 1, 9, 7]);
        let mut vrng = ChaCha8Rng::seed_from_u64(41);
        for v in input.data_mut() {
            *v = vrng.gen_range(0.0..1.0);
        }
        for v in noise.data_mut() {
            *v = vrng.gen_range(-0.5..0.5);
        }
        for v in target.data_mut() {
            *v = vrng.gen_range(0.0..1.0);
        }

        let worst = gradient_check(
            &mut store,
            |g, s| {
                let x = g.input(input.clone());
                let t = g.input(target.clone());
                let e = g.input(noise.clone());
                let (mu, logvar) = vae.encode_train(g, s, x);
                let z = vae.reparameterize(g, mu, logvar, e);
                let out = vae.decode_train(g, s, z);
                vae_loss(g, out, t, mu, logvar, 0.7).total
            },
            12,
        );
        assert!(worst < 1e-4, "worst rel err {worst}");
    }
}
