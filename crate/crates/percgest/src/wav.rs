//! Six-channel 44.1 kHz RIFF wave IO. Frames are interleaved in channel-role order.

use std::path::Path;

use hound::{SampleFormat, WavSpec};
use percgest_core::dsp::{N_CHANNELS, SAMPLE_RATE};

use crate::error::{Error, Result};

pub fn spec() -> WavSpec {
    WavSpec { channels: N_CHANNELS as u16, sample_rate: SAMPLE_RATE, bits_per_sample: 32, sample_format: SampleFormat::Float }
}

fn wav_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Wav { path: path.to_path_buf(), message: e.to_string() }
}

/// Writes interleaved frames as 32-bit float.
pub fn write(path: &Path, frames: &[f32]) -> Result<()> {
    if frames.len() % N_CHANNELS != 0 {
        return Err(wav_err(path, format!("{} samples is not a whole number of {N_CHANNELS}-channel frames", frames.len())));
    }
    let mut w = hound::WavWriter::create(path, spec()).map_err(|e| wav_err(path, e))?;
    for &x in frames {
        w.write_sample(x).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

/// Reads a six-channel 44.1 kHz file. Integer PCM is scaled to [-1, 1).
pub fn read(path: &Path) -> Result<Vec<f32>> {
    let r = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(path, other),
    })?;
    let s = r.spec();
    if s.channels as usize != N_CHANNELS {
        return Err(wav_err(path, format!("expected {N_CHANNELS} channels, found {}", s.channels)));
    }
    if s.sample_rate != SAMPLE_RATE {
        return Err(wav_err(path, format!("expected {SAMPLE_RATE} Hz, found {}", s.sample_rate)));
    }
    let frames: std::result::Result<Vec<f32>, _> = match s.sample_format {
        SampleFormat::Float => r.into_samples::<f32>().collect(),
        SampleFormat::Int => {
            let k = 1.0 / (1u64 << (s.bits_per_sample - 1)) as f32;
            r.into_samples::<i32>().map(|v| v.map(|x| x as f32 * k)).collect()
        }
    };
    frames.map_err(|e| wav_err(path, e))
}

/// Number of frames in a file, from its header.
pub fn frame_count(path: &Path) -> Result<u64> {
    let r = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    Ok(r.duration() as u64)
}
