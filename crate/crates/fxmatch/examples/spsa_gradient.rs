//! Estimate d loss / d theta across a black-box effect with simultaneous
//! perturbation, and compare against per-coordinate finite differences.

use fxmatch::dafx::{self, EffectId};
use fxmatch::spsa::{effect_backward, effect_forward, SpsaConfig};
use fxmatch::AudioBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fxmatch::Result<()> {
    let effect = EffectId::Overdrive;
    let desc = dafx::descriptor(effect);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let sr = 24_000;
    let input = AudioBuffer::new(
        (0..8192)
            .map(|i| 0.4 * (std::f32::consts::TAU * 196.0 * i as f32 / sr as f32).sin())
            .collect(),
        sr,
    );
    let theta = vec![0.4, 0.6, 0.5];
    let target = dafx::process(effect, &input.samples, sr, &[0.2, 0.8, 0.5])?;

    // loss = mean squared error against a reference rendering, so the
    // upstream cotangent is 2 (y - target) / n
    let (out, tape) = effect_forward(effect, &input, &theta)?;
    let n = out.len() as f32;
    let upstream: Vec<f32> = out
        .samples
        .iter()
        .zip(&target)
        .map(|(y, t)| 2.0 * (y - t) / n)
        .collect();

    let cfg = SpsaConfig { num_draws: 32, ..SpsaConfig::default() };
    let g_spsa = effect_backward(&upstream, &tape, &cfg, &mut rng)?;

    let loss = |th: &[f32]| -> fxmatch::Result<f32> {
        let y = dafx::process(effect, &input.samples, sr, th)?;
        Ok(y.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f32>() / n)
    };
    let mut g_fd = vec![0.0f32; theta.len()];
    for (i, g) in g_fd.iter_mut().enumerate() {
        let h = 1e-3;
        let mut lo = theta.clone();
        let mut hi = theta.clone();
        lo[i] -= h;
        hi[i] += h;
        *g = (loss(&hi)? - loss(&lo)?) / (2.0 * h);
    }

    println!("{:<16} {:>12} {:>12}", "param", "spsa(32)", "central fd");
    for ((spec, s), f) in desc.params.iter().zip(&g_spsa).zip(&g_fd) {
        println!("{:<16} {s:>12.6} {f:>12.6}", spec.name);
    }

    let _ = rng.gen::<u32>();
    Ok(())
}
