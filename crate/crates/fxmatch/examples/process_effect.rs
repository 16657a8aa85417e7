//! Run one effect over a synthesized riff and write dry/wet wav files.
//!
//!     cargo run --release --example process_effect -- overdrive 0.2 0.8 0.5

use fxmatch::dafx::{self, EffectId};
use fxmatch::{wav, AudioBuffer};

fn main() -> fxmatch::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let effect: EffectId = args.first().map(String::as_str).unwrap_or("overdrive").parse()?;
    let desc = dafx::descriptor(effect);

    // normalized settings from argv, midpoint for anything unspecified
    let theta: Vec<f32> = (0..desc.num_params())
        .map(|i| args.get(i + 1).and_then(|s| s.parse().ok()).unwrap_or(0.5))
        .collect();

    let sr = 24_000;
    let dry = riff(sr, 2 * sr as usize);
    let wet = dafx::process_buffer(effect, &dry, &theta)?;

    for (spec, &t) in desc.params.iter().zip(&theta) {
        let phys = spec.denormalize(t);
        println!("{:<16} theta={t:.3}  ->  {phys:.3} {}", spec.name, spec.unit);
    }
    println!("dry peak {:.3}  wet peak {:.3}", peak(&dry), peak(&wet));

    wav::write_wav(&dry, "dry.wav".as_ref())?;
    wav::write_wav(&wet, "wet.wav".as_ref())?;
    println!("wrote dry.wav and wet.wav");
    Ok(())
}

fn riff(sr: u32, len: usize) -> AudioBuffer {
    let notes = [110.0f32, 146.83, 164.81, 220.0];
    let samples = (0..len)
        .map(|i| {
            let t = i as f32 / sr as f32;
            let f = notes[(t * 2.0) as usize % notes.len()];
            let env = (-3.0 * (t * 2.0).fract()).exp();
            0.6 * env * (std::f32::consts::TAU * f * t).sin()
        })
        .collect();
    AudioBuffer::new(samples, sr)
}

fn peak(a: &AudioBuffer) -> f32 {
    a.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
}
