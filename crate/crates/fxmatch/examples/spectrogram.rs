//! Compute a compressed magnitude spectrogram and sketch it as ASCII art.

use fxmatch::stft::{stft_magnitude, StftConfig};
use fxmatch::AudioBuffer;

fn main() -> fxmatch::Result<()> {
    let sr = 24_000;
    let sweep: Vec<f32> = (0..32_768)
        .map(|i| {
            let t = i as f32 / sr as f32;
            let f = 100.0 * (40.0f32).powf(t / 1.4);
            0.5 * (std::f32::consts::TAU * f * t).sin()
        })
        .collect();
    let audio = AudioBuffer::new(sweep, sr);

    let cfg = StftConfig::desk();
    let sg = stft_magnitude(&audio, &cfg)?;
    println!(
        "{} bins x {} frames, compression exponent {}",
        sg.freq_bins, sg.frames, cfg.compression_exponent
    );

    // downsample to a terminal-sized picture, low frequencies at the bottom
    let (rows, cols) = (16, 64);
    let shades = [' ', '.', ':', '+', '#'];
    let max = sg.data.iter().cloned().fold(0.0f32, f32::max).max(1e-12);
    for r in (0..rows).rev() {
        let line: String = (0..cols)
            .map(|c| {
                let bin = r * sg.freq_bins / rows;
                let frame = c * sg.frames / cols;
                let v = sg.data[bin * sg.frames + frame] / max;
                shades[((v * (shades.len() - 1) as f32).round() as usize).min(shades.len() - 1)]
            })
            .collect();
        println!("|{line}|");
    }
    Ok(())
}
