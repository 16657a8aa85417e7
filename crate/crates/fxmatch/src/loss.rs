//! Audio-domain objectives: multi-resolution STFT error, the end-to-end
//! composite, and the cyclic KL-annealing schedule.
//!
//! The MRSTFT gradient with respect to the predicted signal is computed
//! analytically (adjoint of the windowed DFT) so it can serve as the
//! upstream vector for SPSA at the effect boundary.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::stft::{hann_window, stft_complex};

const LOG_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MrstftConfig {
    pub fft_sizes: Vec<usize>,
}

impl Default for MrstftConfig {
    fn default() -> Self {
        Self {
            fft_sizes: vec![32, 128, 512, 2048, 8192, 32768],
        }
    }
}

impl MrstftConfig {
    /// Resolutions short enough to fit the signal. Window = fft size and a
    /// quarter hop, so anything longer than the signal is skipped.
    pub fn active_sizes(&self, len: usize) -> Vec<usize> {
        self.fft_sizes.iter().copied().filter(|&n| n <= len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KlScheduleConfig {
    pub total_steps: usize,
    pub num_cycles: usize,
    pub ramp_fraction: f64,
    pub beta_max: f64,
}

impl KlScheduleConfig {
    pub fn new(total_steps: usize, beta_max: f64) -> Self {
        Self {
            total_steps,
            num_cycles: 4,
            ramp_fraction: 0.5,
            beta_max,
        }
    }
}

/// Cyclic linear annealing: within each cycle the weight ramps from 0 to
/// beta_max over the first `ramp_fraction` of the cycle, then plateaus.
pub fn kl_weight(step: usize, cfg: &KlScheduleConfig) -> f64 {
    assert!(cfg.num_cycles >= 1, "need at least one cycle");
    assert!(
        cfg.ramp_fraction > 0.0 && cfg.ramp_fraction <= 1.0,
        "ramp fraction in (0, 1]"
    );
    let cycle_len = (cfg.total_steps as f64 / cfg.num_cycles as f64).max(1.0);
    let phase = (step as f64 % cycle_len) / cycle_len;
    cfg.beta_max * (phase / cfg.ramp_fraction).min(1.0)
}

struct ResolutionTerms {
    sc: f64,
    log_l1: f64,
}

fn magnitudes(frames: &[Vec<Complex<f64>>]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|row| row.iter().map(|c| c.norm()).collect())
        .collect()
}

fn resolution_terms(pred_mag: &[Vec<f64>], target_mag: &[Vec<f64>]) -> ResolutionTerms {
    let mut diff_sq = 0.0;
    let mut target_sq = 0.0;
    let mut log_sum = 0.0;
    let mut count = 0usize;
    for (pr, tr) in pred_mag.iter().zip(target_mag) {
        for (&p, &t) in pr.iter().zip(tr) {
            diff_sq += (t - p) * (t - p);
            target_sq += t * t;
            log_sum += ((t + LOG_FLOOR).ln() - (p + LOG_FLOOR).ln()).abs();
            count += 1;
        }
    }
    let sc = if target_sq > 0.0 {
        (diff_sq / target_sq).sqrt()
    } else {
        0.0
    };
    ResolutionTerms {
        sc,
        log_l1: log_sum / count as f64,
    }
}

/// Mean over active resolutions of spectral convergence plus L1 log-magnitude
/// distance. Fails if the signal is shorter than every configured fft size.
pub fn mrstft(pred: &[f32], target: &[f32], cfg: &MrstftConfig) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    let active = cfg.active_sizes(pred.len());
    if active.is_empty() {
        return Err(Error::TooShort {
            len: pred.len(),
            min: cfg.fft_sizes.iter().copied().min().unwrap_or(0),
        });
    }
    let mut total = 0.0;
    for &n in &active {
        let p = magnitudes(&stft_complex(pred, n, n, n / 4)?);
        let t = magnitudes(&stft_complex(target, n, n, n / 4)?);
        let terms = resolution_terms(&p, &t);
        total += terms.sc + terms.log_l1;
    }
    Ok(total / active.len() as f64)
}

/// `mrstft` plus its gradient with respect to `pred`.
pub fn mrstft_with_grad(pred: &[f32], target: &[f32], cfg: &MrstftConfig) -> Result<(f64, Vec<f32>)> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    let active = cfg.active_sizes(pred.len());
    if active.is_empty() {
        return Err(Error::TooShort {
            len: pred.len(),
            min: cfg.fft_sizes.iter().copied().min().unwrap_or(0),
        });
    }
    let mut total = 0.0;
    let mut grad = vec![0.0f64; pred.len()];
    let mut planner = FftPlanner::<f64>::new();
    for &n in &active {
        let hop = n / 4;
        let spec = stft_complex(pred, n, n, hop)?;
        let p = magnitudes(&spec);
        let t = magnitudes(&stft_complex(target, n, n, hop)?);

        let mut diff_sq = 0.0;
        let mut target_sq = 0.0;
        let mut log_sum = 0.0;
        let mut count = 0usize;
        for (pr, tr) in p.iter().zip(&t) {
            for (&pv, &tv) in pr.iter().zip(tr) {
                diff_sq += (tv - pv) * (tv - pv);
                target_sq += tv * tv;
                log_sum += ((tv + LOG_FLOOR).ln() - (pv + LOG_FLOOR).ln()).abs();
                count += 1;
            }
        }
        let fro_diff = diff_sq.sqrt();
        let fro_target = target_sq.sqrt();
        let sc = if fro_target > 0.0 {
            fro_diff / fro_target
        } else {
            0.0
        };
        total += sc + log_sum / count as f64;

        // dL/d|X| per bin, then back through |.| as X/|X| and through the
        // windowed DFT by inverse transform and overlap-add.
        let ifft = planner.plan_fft_inverse(n);
        let window = hann_window(n);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (j, (pr, tr)) in p.iter().zip(&t).enumerate() {
            for c in buf.iter_mut() {
                *c = Complex::new(0.0, 0.0);
            }
            for k in 0..pr.len() {
                let pv = pr[k];
                let tv = tr[k];
                let mut dmag = 0.0;
                if fro_diff > 0.0 && fro_target > 0.0 {
                    dmag += (pv - tv) / (fro_diff * fro_target);
                }
                let logdiff = (tv + LOG_FLOOR).ln() - (pv + LOG_FLOOR).ln();
                if logdiff != 0.0 {
                    dmag += -logdiff.signum() / (count as f64 * (pv + LOG_FLOOR));
                }
                if pv > 0.0 {
                    buf[k] = spec[j][k] * (dmag / pv);
                }
            }
            ifft.process(&mut buf);
            let start = j * hop;
            for m in 0..n {
                grad[start + m] += window[m] * buf[m].re;
            }
        }
    }
    let scale = 1.0 / active.len() as f64;
    let grad = grad.iter().map(|&g| (g * scale) as f32).collect();
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct E2eLoss {
    pub total: f64,
    pub mrstft: f64,
    pub mae: f64,
}

/// total = mrstft + alpha * mean |pred - target|.
pub fn e2e_loss(pred: &[f32], target: &[f32], alpha: f64, cfg: &MrstftConfig) -> Result<E2eLoss> {
    let spectral = mrstft(pred, target, cfg)?;
    let mae = mean_abs_error(pred, target);
    Ok(E2eLoss {
        total: spectral + alpha * mae,
        mrstft: spectral,
        mae,
    })
}

/// `e2e_loss` plus its gradient with respect to `pred`.
pub fn e2e_loss_with_grad(
    pred: &[f32],
    target: &[f32],
    alpha: f64,
    cfg: &MrstftConfig,
) -> Result<(E2eLoss, Vec<f32>)> {
    let (spectral, mut grad) = mrstft_with_grad(pred, target, cfg)?;
    let mae = mean_abs_error(pred, target);
    let w = alpha / pred.len() as f64;
    for (g, (&p, &t)) in grad.iter_mut().zip(pred.iter().zip(target)) {
        *g += (w * ((p as f64) - (t as f64)).signum()) as f32;
    }
    Ok((
        E2eLoss {
            total: spectral + alpha * mae,
            mrstft: spectral,
            mae,
        },
        grad,
    ))
}

fn mean_abs_error(pred: &[f32], target: &[f32]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| ((p as f64) - (t as f64)).abs())
        .sum::<f64>()
        / pred.len() as f64
}
