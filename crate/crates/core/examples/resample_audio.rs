// Decodes a 44.1 kHz stereo WAV and resamples it to 16 kHz mono.

use std::error::Error;

use ser_toolkit::ingestion::audio::{decode_wav, encode_wav, WavFormat};
use ser_toolkit::ingestion::{decode_resample, Resampler, TARGET_RATE_HZ};

fn zero_crossing_hz(samples: &[f64], rate: u32) -> f64 {
    let crossings = samples.windows(2).filter(|w| w[0] <= 0.0 && w[1] > 0.0).count();
    crossings as f64 * f64::from(rate) / samples.len() as f64
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let rate = 44_100;
    let tone: Vec<f64> = (0..rate)
        .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * f64::from(n) / f64::from(rate)).sin())
        .collect();
    let interleaved: Vec<f64> = tone.iter().flat_map(|&s| [s, s]).collect();
    let bytes = encode_wav(&interleaved, rate, 2, WavFormat::Int(16));

    let decoded = decode_wav(&bytes)?;
    println!("decoded {} mono samples at {} Hz", decoded.samples.len(), decoded.sample_rate);

    let out = decode_resample(&bytes, TARGET_RATE_HZ)?;
    let expected = Resampler::new(rate, TARGET_RATE_HZ).output_len(decoded.samples.len());
    println!("resampled to {} samples at {TARGET_RATE_HZ} Hz (expected {expected})", out.len());
    println!("tone estimate after resampling: {:.1} Hz", zero_crossing_hz(&out, TARGET_RATE_HZ));

    let rms_in = (tone.iter().map(|s| s * s).sum::<f64>() / tone.len() as f64).sqrt();
    let rms_out = (out.iter().map(|s| s * s).sum::<f64>() / out.len() as f64).sqrt();
    println!("rms {rms_in:.4} -> {rms_out:.4}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
