//! Black-box audio effects. Every effect exposes a normalized parameter
//! vector theta in [0,1]^P; `denormalize` maps each coordinate onto its
//! physical range (linear or logarithmic) in the order given by the effect's
//! parameter table. Processing is deterministic and stateless across calls.

pub mod effects;
pub mod filters;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EffectId {
    Ambience,
    Combo,
    Delay,
    Dynamics,
    Overdrive,
    Ringmod,
    Leslie,
    Multiband,
    Flanger,
}

impl EffectId {
    pub fn name(self) -> &'static str {
        match self {
            EffectId::Ambience => "ambience",
            EffectId::Combo => "combo",
            EffectId::Delay => "delay",
            EffectId::Dynamics => "dynamics",
            EffectId::Overdrive => "overdrive",
            EffectId::Ringmod => "ringmod",
            EffectId::Leslie => "leslie",
            EffectId::Multiband => "multiband",
            EffectId::Flanger => "flanger",
        }
    }

    pub fn all() -> [EffectId; 9] {
        [
            EffectId::Ambience,
            EffectId::Combo,
            EffectId::Delay,
            EffectId::Dynamics,
            EffectId::Overdrive,
            EffectId::Ringmod,
            EffectId::Leslie,
            EffectId::Multiband,
            EffectId::Flanger,
        ]
    }

    /// The six effects used for training runs, in rotation order.
    pub fn training() -> [EffectId; 6] {
        [
            EffectId::Ambience,
            EffectId::Combo,
            EffectId::Delay,
            EffectId::Dynamics,
            EffectId::Overdrive,
            EffectId::Ringmod,
        ]
    }

    /// Effects reserved for generalization checks, never trained on.
    pub fn held_out() -> [EffectId; 3] {
        [EffectId::Leslie, EffectId::Multiband, EffectId::Flanger]
    }
}

impl fmt::Display for EffectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EffectId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EffectId::all()
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| {
                let known = EffectId::all().map(|id| id.name()).join(", ");
                Error::UnknownEffect(s.to_string(), known)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapping {
    Linear,
    Logarithmic,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub physical_min: f32,
    pub physical_max: f32,
    pub mapping: Mapping,
    pub unit: &'static str,
}

impl ParamSpec {
    const fn lin(name: &'static str, min: f32, max: f32, unit: &'static str) -> Self {
        Self {
            name,
            physical_min: min,
            physical_max: max,
            mapping: Mapping::Linear,
            unit,
        }
    }

    const fn log(name: &'static str, min: f32, max: f32, unit: &'static str) -> Self {
        Self {
            name,
            physical_min: min,
            physical_max: max,
            mapping: Mapping::Logarithmic,
            unit,
        }
    }

    /// Map a normalized coordinate onto this parameter's physical range.
    /// Inputs outside [0,1] are clamped.
    pub fn denormalize(&self, t: f32) -> f32 {
        let t = t.clamp(0.0, 1.0);
        match self.mapping {
            Mapping::Linear => self.physical_min + t * (self.physical_max - self.physical_min),
            Mapping::Logarithmic => {
                self.physical_min * (self.physical_max / self.physical_min).powf(t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EffectDescriptor {
    pub id: EffectId,
    pub summary: &'static str,
    pub params: &'static [ParamSpec],
}

impl EffectDescriptor {
    pub fn num_params(&self) -> usize {
        self.params.len()
    }
}

pub const AMBIENCE: EffectDescriptor = EffectDescriptor {
    id: EffectId::Ambience,
    summary: "small plate reverb with size-scaled combs and in-loop damping",
    params: &[
        ParamSpec::lin("mix", 0.0, 1.0, ""),
        ParamSpec::lin("size_m", 1.0, 50.0, "m"),
        ParamSpec::lin("hf_damp", 0.0, 1.0, ""),
        ParamSpec::lin("output_db", -20.0, 20.0, "dB"),
    ],
};

pub const COMBO: EffectDescriptor = EffectDescriptor {
    id: EffectId::Combo,
    summary: "resonant highpass into a biased soft/hard waveshaper",
    params: &[
        ParamSpec::log("hpf_freq", 20.0, 2000.0, "Hz"),
        ParamSpec::log("hpf_reso", 0.5, 10.0, "Q"),
        ParamSpec::lin("drive_s_h", 0.0, 1.0, ""),
        ParamSpec::lin("bias", -0.5, 0.5, ""),
        ParamSpec::lin("output_db", -20.0, 20.0, "dB"),
    ],
};

pub const DELAY: EffectDescriptor = EffectDescriptor {
    id: EffectId::Delay,
    summary: "dual-tap feedback delay with a tone-tilted loop",
    params: &[
        ParamSpec::lin("fb_mix", 0.0, 1.0, ""),
        ParamSpec::log("l_delay_ms", 1.0, 1000.0, "ms"),
        ParamSpec::log("r_delay", 0.25, 4.0, "x"),
        ParamSpec::lin("feedback", 0.0, 0.95, ""),
        ParamSpec::lin("fb_tone_lo_hi", 0.0, 1.0, ""),
    ],
};

pub const DYNAMICS: EffectDescriptor = EffectDescriptor {
    id: EffectId::Dynamics,
    summary: "compressor, gate and brick-wall limiter in series",
    params: &[
        ParamSpec::lin("output_db", -20.0, 20.0, "dB"),
        ParamSpec::lin("gate_thr_db", -80.0, -20.0, "dB"),
        ParamSpec::lin("mix", 0.0, 1.0, ""),
        ParamSpec::log("release_ms", 10.0, 1000.0, "ms"),
        ParamSpec::log("gate_rel_ms", 10.0, 1000.0, "ms"),
        ParamSpec::lin("limiter_db", -12.0, 0.0, "dB"),
        ParamSpec::lin("ratio", 1.0, 20.0, ":1"),
        ParamSpec::lin("thresh_db", -60.0, 0.0, "dB"),
        ParamSpec::log("gate_att_s", 0.0001, 0.1, "s"),
        ParamSpec::log("attack_s", 0.0001, 0.1, "s"),
    ],
};

pub const OVERDRIVE: EffectDescriptor = EffectDescriptor {
    id: EffectId::Overdrive,
    summary: "normalized tanh drive into a variable lowpass",
    params: &[
        ParamSpec::lin("muffle", 0.0, 1.0, ""),
        ParamSpec::log("drive", 1.0, 100.0, "x"),
        ParamSpec::lin("output_db", -20.0, 20.0, "dB"),
    ],
};

pub const RINGMOD: EffectDescriptor = EffectDescriptor {
    id: EffectId::Ringmod,
    summary: "sine ring modulator with output feedback",
    params: &[
        ParamSpec::lin("freq_hz", 0.0, 1000.0, "Hz"),
        ParamSpec::lin("feedback", 0.0, 0.95, ""),
        ParamSpec::lin("fine_hz", 0.0, 10.0, "Hz"),
    ],
};

pub const LESLIE: EffectDescriptor = EffectDescriptor {
    id: EffectId::Leslie,
    summary: "rotary-speaker doppler delay with linked tremolo",
    params: &[
        ParamSpec::log("rate_hz", 0.1, 8.0, "Hz"),
        ParamSpec::lin("doppler_depth", 0.0, 1.0, "ms"),
        ParamSpec::lin("am_depth", 0.0, 1.0, ""),
        ParamSpec::lin("output_db", -20.0, 20.0, "dB"),
    ],
};

pub const MULTIBAND: EffectDescriptor = EffectDescriptor {
    id: EffectId::Multiband,
    summary: "three-band compressor behind Linkwitz-Riley crossovers",
    params: &[
        ParamSpec::log("xover_lo", 50.0, 500.0, "Hz"),
        ParamSpec::log("xover_hi", 500.0, 8000.0, "Hz"),
        ParamSpec::lin("comp_lo", 0.0, 1.0, ""),
        ParamSpec::lin("comp_mid", 0.0, 1.0, ""),
        ParamSpec::lin("comp_hi", 0.0, 1.0, ""),
        ParamSpec::lin("output_db", -20.0, 20.0, "dB"),
    ],
};

pub const FLANGER: EffectDescriptor = EffectDescriptor {
    id: EffectId::Flanger,
    summary: "LFO-swept comb with feedback against a fixed center tap",
    params: &[
        ParamSpec::log("rate_hz", 0.01, 5.0, "Hz"),
        ParamSpec::log("depth_ms", 0.1, 10.0, "ms"),
        ParamSpec::lin("feedback", -0.95, 0.95, ""),
        ParamSpec::lin("mix", 0.0, 1.0, ""),
    ],
};

pub fn descriptor(id: EffectId) -> &'static EffectDescriptor {
    match id {
        EffectId::Ambience => &AMBIENCE,
        EffectId::Combo => &COMBO,
        EffectId::Delay => &DELAY,
        EffectId::Dynamics => &DYNAMICS,
        EffectId::Overdrive => &OVERDRIVE,
        EffectId::Ringmod => &RINGMOD,
        EffectId::Leslie => &LESLIE,
        EffectId::Multiband => &MULTIBAND,
        EffectId::Flanger => &FLANGER,
    }
}

pub fn find(name: &str) -> Result<&'static EffectDescriptor> {
    Ok(descriptor(name.parse()?))
}

pub fn list_effects() -> Vec<&'static EffectDescriptor> {
    EffectId::all().iter().map(|&id| descriptor(id)).collect()
}

fn check_dims(id: EffectId, theta: &[f32]) -> Result<&'static EffectDescriptor> {
    let desc = descriptor(id);
    if theta.len() != desc.num_params() {
        return Err(Error::DimensionMismatch {
            effect: id.name().to_string(),
            expected: desc.num_params(),
            got: theta.len(),
        });
    }
    Ok(desc)
}

/// Map a full normalized vector onto physical parameter values.
pub fn denormalize(id: EffectId, theta: &[f32]) -> Result<Vec<f32>> {
    let desc = check_dims(id, theta)?;
    Ok(desc
        .params
        .iter()
        .zip(theta)
        .map(|(spec, &t)| spec.denormalize(t))
        .collect())
}

/// Render `samples` through the effect at normalized parameters `theta`.
pub fn process(id: EffectId, samples: &[f32], sample_rate: u32, theta: &[f32]) -> Result<Vec<f32>> {
    let physical = denormalize(id, theta)?;
    let out = match id {
        EffectId::Ambience => effects::ambience(samples, sample_rate, &physical),
        EffectId::Combo => effects::combo(samples, sample_rate, &physical),
        EffectId::Delay => effects::delay(samples, sample_rate, &physical),
        EffectId::Dynamics => effects::dynamics(samples, sample_rate, &physical),
        EffectId::Overdrive => effects::overdrive(samples, sample_rate, &physical),
        EffectId::Ringmod => effects::ringmod(samples, sample_rate, &physical),
        EffectId::Leslie => effects::leslie(samples, sample_rate, &physical),
        EffectId::Multiband => effects::multiband(samples, sample_rate, &physical),
        EffectId::Flanger => effects::flanger(samples, sample_rate, &physical),
    };
    debug_assert_eq!(out.len(), samples.len());
    Ok(out)
}

pub fn process_buffer(id: EffectId, audio: &AudioBuffer, theta: &[f32]) -> Result<AudioBuffer> {
    Ok(AudioBuffer {
        samples: process(id, &audio.samples, audio.sample_rate, theta)?,
        sample_rate: audio.sample_rate,
    })
}

/// Draw theta coordinates i.i.d. uniform on [0,1).
pub fn random_theta<R: Rng + ?Sized>(id: EffectId, rng: &mut R) -> Vec<f32> {
    (0..descriptor(id).num_params())
        .map(|_| rng.gen::<f32>())
        .collect()
}
