//! SPSA bridge: carries a loss gradient backward across a black-box effect.
//!
//! Forward just runs the effect and records its inputs. Backward perturbs the
//! normalized parameter vector with Rademacher sign vectors and recovers
//! dLoss/dtheta from two extra forward passes per draw. The audio path gets a
//! zero gradient; nothing trainable sits upstream of the effect input.

use rand::Rng;

use crate::audio::AudioBuffer;
use crate::dafx::{self, EffectId};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpsaConfig {
    /// Perturbation half-width in normalized parameter units.
    pub epsilon: f32,
    /// Rademacher draws averaged per estimate.
    pub num_draws: usize,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            num_draws: 1,
        }
    }
}

/// Clip coordinates to [eps, 1-eps] so theta +/- eps*delta stays in [0,1].
pub fn clamp_theta(theta: &mut [f32], epsilon: f32) {
    for t in theta.iter_mut() {
        *t = t.clamp(epsilon, 1.0 - epsilon);
    }
}

/// Two-point SPSA estimate of the gradient of `<upstream, f(theta)>`.
///
/// One sign vector per draw: d = <upstream, f(theta+eps*delta) -
/// f(theta-eps*delta)> / (2 eps), coordinate estimate d * delta_i, averaged
/// over draws. `f` may be any map from parameters to a signal the same
/// length as `upstream`.
pub fn estimate_gradient<F, R>(
    f: &mut F,
    theta: &[f32],
    upstream: &[f32],
    cfg: &SpsaConfig,
    rng: &mut R,
) -> Result<Vec<f32>>
where
    F: FnMut(&[f32]) -> Result<Vec<f32>>,
    R: Rng + ?Sized,
{
    assert!(cfg.epsilon > 0.0, "epsilon must be positive");
    assert!(cfg.num_draws >= 1, "need at least one draw");
    let eps = cfg.epsilon;
    let mut base = theta.to_vec();
    clamp_theta(&mut base, eps);

    let mut grad = vec![0.0f32; theta.len()];
    let mut plus = vec![0.0f32; theta.len()];
    let mut minus = vec![0.0f32; theta.len()];
    for _ in 0..cfg.num_draws {
        let delta: Vec<f32> = (0..theta.len())
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        for i in 0..base.len() {
            plus[i] = (base[i] + eps * delta[i]).clamp(0.0, 1.0);
            minus[i] = (base[i] - eps * delta[i]).clamp(0.0, 1.0);
        }
        let yp = f(&plus)?;
        let ym = f(&minus)?;
        debug_assert_eq!(yp.len(), upstream.len());
        let mut d = 0.0f64;
        for ((u, p), m) in upstream.iter().zip(&yp).zip(&ym) {
            d += *u as f64 * (*p as f64 - *m as f64);
        }
        let d = (d / (2.0 * eps as f64)) as f32;
        for (g, dl) in grad.iter_mut().zip(&delta) {
            *g += d * dl;
        }
    }
    let inv = 1.0 / cfg.num_draws as f32;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    Ok(grad)
}

/// Context recorded by the forward pass for the later backward pass.
#[derive(Debug, Clone)]
pub struct EffectTape {
    pub effect: EffectId,
    pub input: Vec<f32>,
    pub sample_rate: u32,
    pub theta: Vec<f32>,
}

/// Run the effect exactly as `dafx::process` does and keep what backward needs.
pub fn effect_forward(
    effect: EffectId,
    audio: &AudioBuffer,
    theta: &[f32],
) -> Result<(AudioBuffer, EffectTape)> {
    let out = dafx::process_buffer(effect, audio, theta)?;
    let tape = EffectTape {
        effect,
        input: audio.samples.clone(),
        sample_rate: audio.sample_rate,
        theta: theta.to_vec(),
    };
    Ok((out, tape))
}

/// Gradient of the loss with respect to theta for a recorded forward call.
pub fn effect_backward<R: Rng + ?Sized>(
    upstream: &[f32],
    tape: &EffectTape,
    cfg: &SpsaConfig,
    rng: &mut R,
) -> Result<Vec<f32>> {
    assert_eq!(upstream.len(), tape.input.len(), "upstream length mismatch");
    let mut f = |th: &[f32]| dafx::process(tape.effect, &tape.input, tape.sample_rate, th);
    estimate_gradient(&mut f, &tape.theta, upstream, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn clamp_keeps_interior_and_clips_boundaries() {
        let mut th = [0.5, 0.0, 1.0];
        clamp_theta(&mut th, 1e-2);
        assert_eq!(th, [0.5, 0.01, 0.99]);
    }

    #[test]
    fn linear_gain_single_draw_is_exact() {
        // y = theta * x is linear in theta, so the two-sided difference is
        // exact and delta^2 = 1 cancels the sign: g = sum(u * x) for any draw.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = seeded_signal(&mut rng, 64);
        let u = seeded_signal(&mut rng, 64);
        let oracle: f64 = u
            .iter()
            .zip(&x)
            .map(|(ui, xi)| *ui as f64 * *xi as f64)
            .sum();

        let cfg = SpsaConfig::default();
        for seed in 0..8 {
            let mut draw_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut f = |th: &[f32]| -> Result<Vec<f32>> {
                Ok(x.iter().map(|xi| th[0] * xi).collect())
            };
            let g = estimate_gradient(&mut f, &[0.37], &u, &cfg, &mut draw_rng).unwrap();
            let rel = (g[0] as f64 - oracle).abs() / oracle.abs();
            assert!(rel < 1e-5, "seed {seed}: rel err {rel}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = seeded_signal(&mut rng, 256);
        let audio = AudioBuffer {
            samples: x,
            sample_rate: 24000,
        };
        let theta = vec![0.5; 3];
        let (_, tape) = effect_forward(EffectId::Overdrive, &audio, &theta).unwrap();
        let upstream = vec![0.0f32; 256];
        let g = effect_backward(&upstream, &tape, &SpsaConfig::default(), &mut rng).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_process_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let audio = AudioBuffer {
            samples: seeded_signal(&mut rng, 512),
            sample_rate: 24000,
        };
        let theta = [0.3, 0.6, 0.4];
        let (out, tape) = effect_forward(EffectId::Overdrive, &audio, &theta).unwrap();
        let direct = dafx::process(EffectId::Overdrive, &audio.samples, 24000, &theta).unwrap();
        assert_eq!(out.samples, direct);
        assert_eq!(tape.theta, theta);
        assert_eq!(tape.input, audio.samples);
    }

    #[test]
    fn overdrive_drive_average_matches_finite_differences() {
        // Oracle: central difference of L(theta) = <u, process(x, theta)> on
        // the drive coordinate alone, h = 1e-3. Every SPSA coordinate shares
        // one directional sample, so the other coordinates leak noise
        // proportional to their own gradients into the drive estimate. The
        // output-gain coordinate's gradient is proportional to <u, y>;
        // projecting that component out of the upstream keeps it quiet and
        // lets 64 draws resolve the drive coordinate.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2048;
        let x: Vec<f32> = (0..n)
            .map(|i| (i as f32 * 220.0 * std::f32::consts::TAU / 24000.0).sin() * 0.5)
            .collect();
        let theta = [0.2f32, 0.15, 0.5];
        let drive = 1;
        let mut u = seeded_signal(&mut rng, n);
        let y0 = dafx::process(EffectId::Overdrive, &x, 24000, &theta).unwrap();
        let uy: f64 = u.iter().zip(&y0).map(|(a, b)| *a as f64 * *b as f64).sum();
        let yy: f64 = y0.iter().map(|b| (*b as f64).powi(2)).sum();
        let c = (uy / yy) as f32;
        for (ui, yi) in u.iter_mut().zip(&y0) {
            *ui -= c * yi;
        }

        let loss = |th: &[f32]| -> f64 {
            let y = dafx::process(EffectId::Overdrive, &x, 24000, th).unwrap();
            u.iter()
                .zip(&y)
                .map(|(ui, yi)| *ui as f64 * *yi as f64)
                .sum()
        };
        let h = 1e-3f32;
        let mut tp = theta;
        tp[drive] += h;
        let mut tm = theta;
        tm[drive] -= h;
        let oracle = (loss(&tp) - loss(&tm)) / (2.0 * h as f64);

        let audio = AudioBuffer {
            samples: x.clone(),
            sample_rate: 24000,
        };
        let (_, tape) = effect_forward(EffectId::Overdrive, &audio, &theta).unwrap();
        let cfg = SpsaConfig {
            epsilon: 1e-2,
            num_draws: 64,
        };
        let mut draw_rng = ChaCha8Rng::seed_from_u64(21);
        let g = effect_backward(&u, &tape, &cfg, &mut draw_rng).unwrap();
        let rel = (g[drive] as f64 - oracle).abs() / oracle.abs();
        assert!(rel < 0.10, "rel err {rel} (spsa {} vs fd {oracle})", g[drive]);
    }

    #[test]
    fn mean_over_many_draws_is_unbiased_on_linear_map() {
        // y = theta0*a + theta1*b + theta2*c: true gradient coordinates are
        // <u,a>, <u,b>, <u,c>; single-draw estimates scatter around them.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let len = 48;
        let basis: Vec<Vec<f32>> = (0..3).map(|_| seeded_signal(&mut rng, len)).collect();
        let u = seeded_signal(&mut rng, len);
        let truth: Vec<f64> = basis
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&u)
                    .map(|(vi, ui)| *vi as f64 * *ui as f64)
                    .sum()
            })
            .collect();

        let mut f = |th: &[f32]| -> Result<Vec<f32>> {
            Ok((0..len)
                .map(|i| th[0] * basis[0][i] + th[1] * basis[1][i] + th[2] * basis[2][i])
                .collect())
        };
        let cfg = SpsaConfig {
            epsilon: 1e-2,
            num_draws: 1,
        };
        let theta = [0.4f32, 0.5, 0.6];
        let n = 1024;
        let mut draws: Vec<Vec<f32>> = Vec::with_capacity(n);
        let mut draw_rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..n {
            draws.push(estimate_gradient(&mut f, &theta, &u, &cfg, &mut draw_rng).unwrap());
        }
        for k in 0..3 {
            let vals: Vec<f64> = draws.iter().map(|d| d[k] as f64).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let tol = 3.0 * var.sqrt() / (n as f64).sqrt();
            assert!(
                (mean - truth[k]).abs() <= tol.max(1e-6),
                "coord {k}: mean {mean} truth {} tol {tol}",
                truth[k]
            );
        }
    }

    #[test]
    fn averaging_draws_shrinks_variance() {
        // Quadrupling draws from 16 to 64 should cut the estimator variance
        // by about 4x; accept [2, 8] to leave room for sampling noise.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let len = 48;
        let basis: Vec<Vec<f32>> = (0..3).map(|_| seeded_signal(&mut rng, len)).collect();
        let u = seeded_signal(&mut rng, len);
        let mut f = |th: &[f32]| -> Result<Vec<f32>> {
            Ok((0..len)
                .map(|i| th[0] * basis[0][i] + th[1] * basis[1][i] + th[2] * basis[2][i])
                .collect())
        };
        let theta = [0.4f32, 0.5, 0.6];

        let mut sample_var = |num_draws: usize, seed: u64| -> f64 {
            let cfg = SpsaConfig {
                epsilon: 1e-2,
                num_draws,
            };
            let mut draw_rng = ChaCha8Rng::seed_from_u64(seed);
            let reps = 200;
            let vals: Vec<f64> = (0..reps)
                .map(|_| {
                    estimate_gradient(&mut f, &theta, &u, &cfg, &mut draw_rng).unwrap()[0] as f64
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / reps as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
        };
        let v16 = sample_var(16, 101);
        let v64 = sample_var(64, 102);
        let ratio = v16 / v64;
        assert!((2.0..=8.0).contains(&ratio), "variance ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gradient_is_finite_on_every_effect(
            effect_idx in 0usize..9,
            seed in 0u64..1000,
        ) {
            let effect = EffectId::all()[effect_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = dafx::random_theta(effect, &mut rng);
            let audio = AudioBuffer {
                samples: seeded_signal(&mut rng, 512),
                sample_rate: 24000,
            };
            let u = seeded_signal(&mut rng, 512);
            let (out, tape) = effect_forward(effect, &audio, &theta).unwrap();
            prop_assert!(out.samples.iter().all(|v| v.is_finite()));
            let g = effect_backward(&u, &tape, &SpsaConfig::default(), &mut rng).unwrap();
            prop_assert!(g.iter().all(|v| v.is_finite()));
        }
    }
}
