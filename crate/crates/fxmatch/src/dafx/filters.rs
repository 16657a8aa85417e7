//! Shared DSP building blocks: biquads, one-pole filters, fractional delay
//! lines and envelope followers. All state is owned by value and zeroed at
//! construction, so effects allocate fresh state per `process` call.

use std::f32::consts::PI;

/// RBJ cookbook biquad, direct form I.
#[derive(Debug, Clone)]
pub struct Biquad {
    b0: f32,
    b1: f32,
    b2: f32,
    a1: f32,
    a2: f32,
    x1: f32,
    x2: f32,
    y1: f32,
    y2: f32,
}

impl Biquad {
    fn from_coeffs(b0: f32, b1: f32, b2: f32, a0: f32, a1: f32, a2: f32) -> Self {
        Self {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: a1 / a0,
            a2: a2 / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    pub fn highpass(sample_rate: u32, f0: f32, q: f32) -> Self {
        let w = 2.0 * PI * f0 / sample_rate as f32;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::from_coeffs(
            (1.0 + cos) / 2.0,
            -(1.0 + cos),
            (1.0 + cos) / 2.0,
            1.0 + alpha,
            -2.0 * cos,
            1.0 - alpha,
        )
    }

    pub fn lowpass(sample_rate: u32, f0: f32, q: f32) -> Self {
        let w = 2.0 * PI * f0 / sample_rate as f32;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::from_coeffs(
            (1.0 - cos) / 2.0,
            1.0 - cos,
            (1.0 - cos) / 2.0,
            1.0 + alpha,
            -2.0 * cos,
            1.0 - alpha,
        )
    }

    /// Constant 0 dB peak-gain bandpass.
    pub fn bandpass(sample_rate: u32, f0: f32, q: f32) -> Self {
        let w = 2.0 * PI * f0 / sample_rate as f32;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::from_coeffs(alpha, 0.0, -alpha, 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    pub fn process(&mut self, x: f32) -> f32 {
        let y = self.b0 * x + self.b1 * self.x1 + self.b2 * self.x2
            - self.a1 * self.y1
            - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// One-pole low-pass: `y += a * (x - y)` with `a = 1 - exp(-2*pi*fc/sr)`.
#[derive(Debug, Clone, Default)]
pub struct OnePoleLp {
    a: f32,
    y: f32,
}

impl OnePoleLp {
    pub fn new(sample_rate: u32, cutoff_hz: f32) -> Self {
        Self {
            a: 1.0 - (-2.0 * PI * cutoff_hz / sample_rate as f32).exp(),
            y: 0.0,
        }
    }

    /// Directly set the smoothing coefficient; `coeff = 0` passes through.
    pub fn from_coeff(coeff: f32) -> Self {
        Self { a: 1.0 - coeff, y: 0.0 }
    }

    pub fn process(&mut self, x: f32) -> f32 {
        self.y += self.a * (x - self.y);
        self.y
    }
}

/// One-pole DC blocker / high-pass: `x - lowpass(x)`.
#[derive(Debug, Clone)]
pub struct OnePoleHp {
    lp: OnePoleLp,
}

impl OnePoleHp {
    pub fn new(sample_rate: u32, cutoff_hz: f32) -> Self {
        Self {
            lp: OnePoleLp::new(sample_rate, cutoff_hz),
        }
    }

    pub fn process(&mut self, x: f32) -> f32 {
        x - self.lp.process(x)
    }
}

/// Circular delay line with linear-interpolation fractional reads.
///
/// `read_frac(d)` returns the sample written `d` writes ago; `d = 0` is the
/// most recent write. For feedback loops read *before* writing the current
/// sample with `read_frac(d - 1)`, which yields the value from `d` samples
/// back relative to the sample about to be written.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: Vec<f32>,
    pos: usize,
}

impl DelayLine {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: vec![0.0; capacity.max(2)],
            pos: 0,
        }
    }

    pub fn write(&mut self, x: f32) {
        self.pos = (self.pos + 1) % self.buf.len();
        self.buf[self.pos] = x;
    }

    pub fn read_frac(&self, delay: f32) -> f32 {
        debug_assert!(delay >= 0.0 && (delay as usize + 2) <= self.buf.len());
        let i0 = delay.floor() as usize;
        let frac = delay - i0 as f32;
        let n = self.buf.len();
        let newer = self.buf[(self.pos + n - i0 % n) % n];
        let older = self.buf[(self.pos + n - (i0 + 1) % n) % n];
        newer + (older - newer) * frac
    }
}

/// Peak envelope follower with separate attack and release time constants.
#[derive(Debug, Clone)]
pub struct EnvelopeFollower {
    attack: f32,
    release: f32,
    env: f32,
}

impl EnvelopeFollower {
    pub fn new(sample_rate: u32, attack_s: f32, release_s: f32) -> Self {
        let coeff = |t: f32| {
            if t <= 0.0 {
                0.0
            } else {
                (-1.0 / (t * sample_rate as f32)).exp()
            }
        };
        Self {
            attack: coeff(attack_s),
            release: coeff(release_s),
            env: 0.0,
        }
    }

    pub fn process(&mut self, x: f32) -> f32 {
        let level = x.abs();
        let c = if level > self.env { self.attack } else { self.release };
        self.env = c * self.env + (1.0 - c) * level;
        self.env
    }
}

/// Gain smoother for gates: moves toward a binary target with separate
/// open (attack) and close (release) coefficients.
#[derive(Debug, Clone)]
pub struct GateSmoother {
    open: f32,
    close: f32,
    gain: f32,
}

impl GateSmoother {
    pub fn new(sample_rate: u32, attack_s: f32, release_s: f32) -> Self {
        let coeff = |t: f32| (-1.0 / (t.max(1e-6) * sample_rate as f32)).exp();
        Self {
            open: coeff(attack_s),
            close: coeff(release_s),
            gain: 1.0,
        }
    }

    pub fn process(&mut self, target_open: bool) -> f32 {
        let (target, c) = if target_open {
            (1.0, self.open)
        } else {
            (0.0, self.close)
        };
        self.gain = c * self.gain + (1.0 - c) * target;
        self.gain
    }
}

pub fn amplitude_to_db(a: f32) -> f32 {
    20.0 * (a.max(1e-10)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_line_integer_read() {
        let mut l = DelayLine::new(16);
        for i in 0..10 {
            l.write(i as f32);
        }
        assert_eq!(l.read_frac(0.0), 9.0);
        assert_eq!(l.read_frac(3.0), 6.0);
        // halfway between 2 ago (7.0) and 3 ago (6.0)
        assert!((l.read_frac(2.5) - 6.5).abs() < 1e-6);
    }

    #[test]
    fn one_pole_lp_converges_to_dc() {
        let mut lp = OnePoleLp::new(24000, 100.0);
        let mut y = 0.0;
        for _ in 0..24000 {
            y = lp.process(1.0);
        }
        assert!((y - 1.0).abs() < 1e-4);
    }

    #[test]
    fn highpass_attenuates_dc_passes_high() {
        let mut hp = Biquad::highpass(24000, 1000.0, 0.707);
        let mut dc_tail = 0.0f32;
        for _ in 0..24000 {
            dc_tail = hp.process(1.0);
        }
        assert!(dc_tail.abs() < 1e-4);

        let mut hp = Biquad::highpass(24000, 100.0, 0.707);
        // 5 kHz sine should pass nearly unattenuated through a 100 Hz HPF
        let mut peak = 0.0f32;
        for i in 0..24000 {
            let x = (2.0 * PI * 5000.0 * i as f32 / 24000.0).sin();
            let y = hp.process(x);
            if i > 1000 {
                peak = peak.max(y.abs());
            }
        }
        assert!((peak - 1.0).abs() < 0.05);
    }

    #[test]
    fn envelope_tracks_peak() {
        let mut env = EnvelopeFollower::new(24000, 0.001, 0.050);
        let mut last = 0.0;
        for _ in 0..2400 {
            last = env.process(0.5);
        }
        assert!((last - 0.5).abs() < 1e-3);
    }
}
