//! The effect processors. Each takes mono samples plus a slice of *physical*
//! parameter values (already denormalized, in the same order as the effect's
//! parameter table) and renders a fresh output buffer. All internal state is
//! local to the call, so identical inputs give identical outputs.

use std::f32::consts::PI;

use super::filters::{
    amplitude_to_db, Biquad, DelayLine, EnvelopeFollower, GateSmoother, OnePoleHp, OnePoleLp,
};
use crate::audio::db_to_amplitude;

/// Small plate-style reverb: four parallel feedback combs with in-loop
/// damping, two series allpasses, then dry/wet mix.
/// Params: [mix, size_m, hf_damp, output_db].
pub fn ambience(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let (mix, size_m, hf_damp, output_db) = (p[0], p[1], p[2], p[3]);
    let sr_f = sr as f32;
    // comb delays scale linearly with size; reference tuning at 25 m
    let base_ms = [29.7_f32, 37.1, 41.1, 43.7];
    let scale = size_m / 25.0;
    let comb_gain = 0.84_f32;

    struct Comb {
        line: DelayLine,
        delay: f32,
        damp: OnePoleLp,
    }
    let mut combs: Vec<Comb> = base_ms
        .iter()
        .map(|ms| {
            let delay = (ms * scale * sr_f / 1000.0).max(1.0);
            Comb {
                line: DelayLine::new(delay.ceil() as usize + 2),
                delay,
                damp: OnePoleLp::from_coeff(hf_damp),
            }
        })
        .collect();

    struct Allpass {
        line: DelayLine,
        delay: f32,
        gain: f32,
    }
    let make_ap = |ms: f32, gain: f32| {
        let delay = ms * sr_f / 1000.0;
        Allpass {
            line: DelayLine::new(delay.ceil() as usize + 2),
            delay,
            gain,
        }
    };
    let mut aps = [make_ap(5.0, 0.7), make_ap(1.7, 0.7)];

    let out_gain = db_to_amplitude(output_db);
    let mut out = Vec::with_capacity(x.len());
    for &xn in x {
        let mut wet = 0.0;
        for c in combs.iter_mut() {
            let tap = c.line.read_frac(c.delay - 1.0);
            let damped = c.damp.process(tap);
            c.line.write(xn + comb_gain * damped);
            wet += tap;
        }
        wet *= 0.25;
        for ap in aps.iter_mut() {
            let tap = ap.line.read_frac(ap.delay - 1.0);
            let w = wet + ap.gain * tap;
            ap.line.write(w);
            wet = tap - ap.gain * w;
        }
        out.push(((1.0 - mix) * xn + mix * wet) * out_gain);
    }
    out
}

/// Resonant highpass into a biased waveshaper that morphs from tanh to hard
/// clip, then a DC blocker. Params: [hpf_freq, hpf_reso, drive_s_h, bias, output_db].
pub fn combo(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let (hpf_freq, hpf_reso, drive_s_h, bias, output_db) = (p[0], p[1], p[2], p[3], p[4]);
    let mut hpf = Biquad::highpass(sr, hpf_freq, hpf_reso);
    let mut dc = OnePoleHp::new(sr, 10.0);
    let out_gain = db_to_amplitude(output_db);
    let tanh_norm = (3.0_f32).tanh();

    x.iter()
        .map(|&xn| {
            let filtered = hpf.process(xn) + bias;
            let driven = 3.0 * filtered;
            let soft = driven.tanh() / tanh_norm;
            let hard = driven.clamp(-1.0, 1.0);
            let shaped = (1.0 - drive_s_h) * soft + drive_s_h * hard;
            dc.process(shaped) * out_gain
        })
        .collect()
}

/// Dual-tap feedback delay with a tone filter in the loop.
/// Params: [fb_mix, l_delay_ms, r_delay, feedback, fb_tone_lo_hi].
pub fn delay(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let (fb_mix, l_delay_ms, r_delay, feedback, tone) = (p[0], p[1], p[2], p[3], p[4]);
    let sr_f = sr as f32;
    let d_l = (l_delay_ms * sr_f / 1000.0).max(1.0);
    let d_r = (l_delay_ms * r_delay).min(2000.0) * sr_f / 1000.0;
    let d_r = d_r.max(1.0);

    let max_d = d_l.max(d_r).ceil() as usize + 2;
    let mut line = DelayLine::new(max_d);
    // tone: 0 -> dark (200 Hz lowpass), 0.5 -> flat, 1 -> thin (high frequencies only)
    let mut lp_dark = OnePoleLp::new(sr, 200.0);
    let mut lp_for_hp = OnePoleLp::new(sr, 1000.0);

    let mut out = Vec::with_capacity(x.len());
    for &xn in x {
        let tap_l = line.read_frac(d_l - 1.0);
        let tap_r = line.read_frac(d_r - 1.0);
        let shaped = if tone < 0.5 {
            let blend = (0.5 - tone) * 2.0;
            let dark = lp_dark.process(tap_l);
            blend * dark + (1.0 - blend) * tap_l
        } else {
            let blend = (tone - 0.5) * 2.0;
            let low = lp_for_hp.process(tap_l);
            blend * (tap_l - low) + (1.0 - blend) * tap_l
        };
        line.write(xn + feedback * shaped);
        let wet = 0.5 * (tap_l + tap_r);
        out.push((1.0 - fb_mix) * xn + fb_mix * wet);
    }
    out
}

/// Compressor, noise gate and brick-wall limiter in series on the wet path.
/// Params: [output_db, gate_thr_db, mix, release_ms, gate_rel_ms,
///          limiter_db, ratio, thresh_db, gate_att_s, attack_s].
pub fn dynamics(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let output_db = p[0];
    let gate_thr_db = p[1];
    let mix = p[2];
    let release_ms = p[3];
    let gate_rel_ms = p[4];
    let limiter_db = p[5];
    let ratio = p[6];
    let thresh_db = p[7];
    let gate_att_s = p[8];
    let attack_s = p[9];

    let mut env = EnvelopeFollower::new(sr, attack_s, release_ms / 1000.0);
    let mut gate = GateSmoother::new(sr, gate_att_s, gate_rel_ms / 1000.0);
    let lim_amp = db_to_amplitude(limiter_db);
    let out_gain = db_to_amplitude(output_db);
    let slope = 1.0 - 1.0 / ratio;

    x.iter()
        .map(|&xn| {
            let level = env.process(xn);
            let level_db = amplitude_to_db(level);
            let over = (level_db - thresh_db).max(0.0);
            let comp_gain = db_to_amplitude(-over * slope);
            let gate_gain = gate.process(level_db > gate_thr_db);
            let wet = (xn * comp_gain * gate_gain).clamp(-lim_amp, lim_amp);
            ((1.0 - mix) * xn + mix * wet) * out_gain
        })
        .collect()
}

/// Normalized tanh drive followed by a variable one-pole lowpass.
/// Params: [muffle, drive, output_db]; drive arrives as the physical gain.
pub fn overdrive(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let (muffle, gain, output_db) = (p[0], p[1], p[2]);
    // muffle 0 -> 10 kHz (open), muffle 1 -> 100 Hz (closed)
    let cutoff = 10_000.0 * (0.01_f32).powf(muffle);
    let mut lp = OnePoleLp::new(sr, cutoff);
    let norm = gain.tanh();
    let out_gain = db_to_amplitude(output_db);

    x.iter()
        .map(|&xn| lp.process((gain * xn).tanh() / norm) * out_gain)
        .collect()
}

/// Classic ring modulator with output feedback into the carrier input.
/// Params: [freq_hz, feedback, fine_hz].
pub fn ringmod(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let (freq_hz, feedback, fine_hz) = (p[0], p[1], p[2]);
    let step = 2.0 * PI * (freq_hz + fine_hz) / sr as f32;
    let mut phase = 0.0_f32;
    let mut prev = 0.0_f32;

    x.iter()
        .map(|&xn| {
            let y = (xn + feedback * prev) * phase.sin();
            prev = y;
            phase += step;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
            y
        })
        .collect()
}

/// Rotary-speaker flavor: sinusoidal Doppler delay plus tremolo from the same
/// LFO. Params: [rate_hz, doppler_depth, am_depth, output_db].
pub fn leslie(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let (rate_hz, doppler_depth, am_depth, output_db) = (p[0], p[1], p[2], p[3]);
    let sr_f = sr as f32;
    let max_delay_ms = 2.0 * doppler_depth;
    let mut line = DelayLine::new((max_delay_ms * sr_f / 1000.0).ceil() as usize + 2);
    let step = 2.0 * PI * rate_hz / sr_f;
    let out_gain = db_to_amplitude(output_db);

    let mut out = Vec::with_capacity(x.len());
    for (n, &xn) in x.iter().enumerate() {
        let lfo = (step * n as f32).sin();
        line.write(xn);
        let delay_ms = doppler_depth * (1.0 + lfo);
        let delayed = line.read_frac(delay_ms * sr_f / 1000.0);
        let am = 1.0 - am_depth * (1.0 + lfo) * 0.5;
        out.push(delayed * am * out_gain);
    }
    out
}

/// Three-band compressor with 4th-order Linkwitz-Riley crossovers. Each
/// band's amount knob scales threshold depth and ratio together.
/// Params: [xover_lo, xover_hi, comp_lo, comp_mid, comp_hi, output_db].
pub fn multiband(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let (xover_lo, xover_hi, output_db) = (p[0], p[1], p[5]);
    let amounts = [p[2], p[3], p[4]];
    let q = std::f32::consts::FRAC_1_SQRT_2;

    let mut lo_lp = [Biquad::lowpass(sr, xover_lo, q), Biquad::lowpass(sr, xover_lo, q)];
    let mut lo_hp = [Biquad::highpass(sr, xover_lo, q), Biquad::highpass(sr, xover_lo, q)];
    let mut hi_lp = [Biquad::lowpass(sr, xover_hi, q), Biquad::lowpass(sr, xover_hi, q)];
    let mut hi_hp = [Biquad::highpass(sr, xover_hi, q), Biquad::highpass(sr, xover_hi, q)];

    struct BandComp {
        env: EnvelopeFollower,
        thresh_db: f32,
        slope: f32,
    }
    let mut comps: Vec<BandComp> = amounts
        .iter()
        .map(|&c| BandComp {
            env: EnvelopeFollower::new(sr, 0.005, 0.150),
            thresh_db: -40.0 * c,
            slope: 1.0 - 1.0 / (1.0 + 9.0 * c),
        })
        .collect();

    let out_gain = db_to_amplitude(output_db);
    let mut out = Vec::with_capacity(x.len());
    for &xn in x {
        let low = {
            let s = lo_lp[0].process(xn);
            lo_lp[1].process(s)
        };
        let rest = {
            let s = lo_hp[0].process(xn);
            lo_hp[1].process(s)
        };
        let mid = {
            let s = hi_lp[0].process(rest);
            hi_lp[1].process(s)
        };
        let high = {
            let s = hi_hp[0].process(rest);
            hi_hp[1].process(s)
        };

        let mut sum = 0.0;
        for (band, comp) in [low, mid, high].into_iter().zip(comps.iter_mut()) {
            let level_db = amplitude_to_db(comp.env.process(band));
            let over = (level_db - comp.thresh_db).max(0.0);
            sum += band * db_to_amplitude(-over * comp.slope);
        }
        out.push(sum * out_gain);
    }
    out
}

/// Swept comb from mixing the input's fixed-delay center tap against an
/// LFO-modulated tap, with feedback around the modulated line.
/// Params: [rate_hz, depth_ms, feedback, mix].
pub fn flanger(x: &[f32], sr: u32, p: &[f32]) -> Vec<f32> {
    let (rate_hz, depth_ms, feedback, mix) = (p[0], p[1], p[2], p[3]);
    let sr_f = sr as f32;
    let depth_samps = depth_ms * sr_f / 1000.0;
    let cap = (2.0 * depth_samps).ceil() as usize + 2;
    let mut swept_line = DelayLine::new(cap);
    let mut center_line = DelayLine::new(depth_samps.ceil() as usize + 2);
    let step = 2.0 * PI * rate_hz / sr_f;
    let mut prev_tap = 0.0_f32;

    let mut out = Vec::with_capacity(x.len());
    for (n, &xn) in x.iter().enumerate() {
        let lfo = (step * n as f32).sin();
        let d = depth_samps * (1.0 + lfo);
        swept_line.write(xn + feedback * prev_tap);
        center_line.write(xn);
        let tap = swept_line.read_frac(d);
        prev_tap = tap;
        let center = center_line.read_frac(depth_samps);
        out.push((1.0 - mix) * xn + mix * (center - tap));
    }
    out
}
