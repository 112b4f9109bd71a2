//! WAV decoding and rational-ratio resampling to 16 kHz mono.

use std::f64::consts::PI;
use std::io::Cursor;

use thiserror::Error;

/// Sample rate every clip is brought to before embedding extraction.
pub const TARGET_RATE_HZ: u32 = 16_000;

/// Taps per polyphase branch.
pub const TAPS_PER_PHASE: usize = 64;

/// Passband edge as a fraction of the lower of the two rates.
pub const CUTOFF_FRACTION: f64 = 0.45;

const KAISER_BETA: f64 = 8.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
}

impl From<hound::Error> for AudioError {
    fn from(err: hound::Error) -> Self {
        match err {
            hound::Error::Unsupported => AudioError::UnsupportedCodec("WAV sample format not supported".into()),
            hound::Error::FormatError(msg) => AudioError::CorruptHeader(msg.to_string()),
            hound::Error::IoError(e) => AudioError::CorruptHeader(format!("truncated or unreadable data: {e}")),
            other => AudioError::CorruptHeader(other.to_string()),
        }
    }
}

/// Interleaved samples folded down to mono by channel mean, in [-1, 1].
#[derive(Debug, Clone)]
pub struct DecodedWav {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

pub fn decode_wav(bytes: &[u8]) -> Result<DecodedWav, AudioError> {
    let reader = hound::WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::CorruptHeader("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / f64::from(1u32 << (bits - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<Result<_, _>>()?
        }
        (format, bits) => {
            return Err(AudioError::UnsupportedCodec(format!("{bits}-bit {format:?} PCM")));
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(AudioError::CorruptHeader("partial frame at end of data".into()));
    }
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(DecodedWav {
        sample_rate: spec.sample_rate,
        samples,
    })
}

/// Decodes a WAV byte stream and resamples it to `target_rate`, clamping to [-1, 1].
pub fn decode_resample(bytes: &[u8], target_rate: u32) -> Result<Vec<f64>, AudioError> {
    let decoded = decode_wav(bytes)?;
    if decoded.sample_rate == 0 {
        return Err(AudioError::CorruptHeader("zero sample rate".into()));
    }
    let resampler = Resampler::new(decoded.sample_rate, target_rate);
    let mut out = resampler.process(&decoded.samples);
    for v in &mut out {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(out)
}

/// Kaiser-windowed sinc resampler for a rational rate ratio `up / down`.
///
/// Output sample `n` sits at input position `n * down / up`; its fractional
/// part selects one of `up` precomputed branches of [`TAPS_PER_PHASE`] taps.
/// The kernel is centred on that position, so there is no group delay.
#[derive(Debug, Clone)]
pub struct Resampler {
    in_rate: u32,
    out_rate: u32,
    up: usize,
    down: usize,
    phases: Vec<[f64; TAPS_PER_PHASE]>,
}

impl Resampler {
    pub fn new(in_rate: u32, out_rate: u32) -> Self {
        assert!(in_rate > 0 && out_rate > 0, "sample rates must be positive");
        let g = gcd(in_rate as usize, out_rate as usize);
        let up = out_rate as usize / g;
        let down = in_rate as usize / g;
        let cutoff = CUTOFF_FRACTION * f64::from(in_rate.min(out_rate)) / f64::from(in_rate);
        let half = (TAPS_PER_PHASE / 2) as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let phases = if in_rate == out_rate {
            Vec::new()
        } else {
            (0..up)
                .map(|p| {
                    let frac = p as f64 / up as f64;
                    let mut taps = [0.0; TAPS_PER_PHASE];
                    for (slot, tap) in taps.iter_mut().enumerate() {
                        // input index relative to floor(position): -31 ..= 32
                        let k = slot as f64 - (half - 1.0);
                        let offset = frac - k;
                        let r = offset / half;
                        let window = if r.abs() >= 1.0 {
                            0.0
                        } else {
                            bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                        };
                        *tap = 2.0 * cutoff * sinc(2.0 * cutoff * offset) * window;
                    }
                    let sum: f64 = taps.iter().sum();
                    for tap in &mut taps {
                        *tap /= sum;
                    }
                    taps
                })
                .collect()
        };
        Resampler {
            in_rate,
            out_rate,
            up,
            down,
            phases,
        }
    }

    pub fn in_rate(&self) -> u32 {
        self.in_rate
    }

    pub fn out_rate(&self) -> u32 {
        self.out_rate
    }

    /// `round(len * out_rate / in_rate)`.
    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up + self.down / 2) / self.down
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.in_rate == self.out_rate {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let lead = TAPS_PER_PHASE / 2 - 1;
        let mut out = Vec::with_capacity(n_out);
        for n in 0..n_out {
            let pos = n * self.down;
            let base = pos / self.up;
            let taps = &self.phases[pos % self.up];
            let start = base as isize - lead as isize;
            let mut acc = 0.0;
            for (slot, tap) in taps.iter().enumerate() {
                let idx = start + slot as isize;
                if idx >= 0 && (idx as usize) < input.len() {
                    acc += tap * input[idx as usize];
                }
            }
            out.push(acc);
        }
        out
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half_sq = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half_sq / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Encodes mono or interleaved samples as a WAV byte stream. Used by tests,
/// examples and fixture generation.
pub fn encode_wav(samples: &[f64], sample_rate: u32, channels: u16, format: WavFormat) -> Vec<u8> {
    let (bits, sample_format) = match format {
        WavFormat::Int(bits) => (bits, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels,
        sample_rate,
        bits_per_sample: bits,
        sample_format,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV writer");
        for &s in samples {
            match format {
                WavFormat::Float32 => writer.write_sample(s as f32),
                WavFormat::Int(bits) => {
                    let max = f64::from(1u32 << (bits - 1)) - 1.0;
                    writer.write_sample((s.clamp(-1.0, 1.0) * max).round() as i32)
                }
            }
            .expect("in-memory write");
        }
        writer.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Int(u16),
    Float32,
}
