//! Spectral kernels, per-channel features and the augmentation transforms
//! applied to captured multi-channel windows.
//!
//! All functions here are pure: the same input always produces bit-identical
//! output, and nothing holds shared mutable state.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;
/// Length of the inference window in samples (11.6 ms at 44.1 kHz).
pub const WINDOW_LEN: usize = 512;
pub const N_CHANNELS: usize = 6;
/// Non-redundant DFT bins kept per window; the Nyquist bin is dropped.
pub const SPECTRUM_BINS: usize = WINDOW_LEN / 2;
pub const DECIMATION: usize = 4;
pub const DECIMATED_BINS: usize = SPECTRUM_BINS / DECIMATION;
pub const MEL_BANDS: usize = 80;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-5;
pub const BIN_HZ: f64 = SAMPLE_RATE as f64 / WINDOW_LEN as f64;
/// Butterworth quality factor for the augmentation high-pass.
pub const BUTTERWORTH_Q: f64 = core::f64::consts::FRAC_1_SQRT_2;
pub const HIGHPASS_CUTOFFS_HZ: [f64; 2] = [80.0, 160.0];
pub const DEFAULT_GAIN_RANGE_DB: f64 = 6.0;

/// A mono block of audio samples at 44.1 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    samples: Vec<f64>,
}

impl SampleBlock {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid!("sample block must not be empty"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(invalid!("sample {i} is not finite"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
}

/// Magnitude spectrum with its bin spacing in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<f64>,
    pub bin_hz: f64,
}

/// Log-compressed energies of the 80 Mel bands.
#[derive(Debug, Clone, PartialEq)]
pub struct MelVector {
    pub bands: Vec<f64>,
}

/// Window applied before the FFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

/// Periodic Hann window, `w[k] = 0.5 (1 - cos(2 pi k / n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid!("window length must be positive"));
    }
    Ok((0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()))
        .collect())
}

/// Iterative radix-2 complex FFT with precomputed twiddles.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(invalid!("FFT length {n} is not a power of two >= 2"));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        let half = n / 2;
        let cos = (0..half)
            .map(|k| (2.0 * PI * k as f64 / n as f64).cos())
            .collect();
        let sin = (0..half)
            .map(|k| -(2.0 * PI * k as f64 / n as f64).sin())
            .collect();
        Ok(Self { n, cos, sin, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Forward transform in place, `X[k] = sum x[n] e^{-2 pi i k n / N}`.
    pub fn transform(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        debug_assert!(re.len() == n && im.len() == n);
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * step], self.sin[k * step]);
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            size *= 2;
        }
    }
}

/// Reusable magnitude-spectrum computation for 512-sample blocks.
#[derive(Debug, Clone)]
pub struct SpectrumAnalyzer {
    fft: Fft,
    hann: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Default for SpectrumAnalyzer {
    fn default() -> Self {
        Self::new()
    }
}

impl SpectrumAnalyzer {
    pub fn new() -> Self {
        Self {
            fft: Fft::new(WINDOW_LEN).expect("512 is a power of two"),
            hann: hann_window(WINDOW_LEN).expect("non-zero length"),
            re: vec![0.0; WINDOW_LEN],
            im: vec![0.0; WINDOW_LEN],
        }
    }

    /// Writes the 256 non-redundant bin magnitudes (DC through bin 255) into `out`.
    pub fn magnitudes_into(&mut self, samples: &[f64], window: WindowKind, out: &mut [f64]) -> Result<()> {
        if samples.len() != WINDOW_LEN {
            return Err(invalid!("expected {WINDOW_LEN} samples, got {}", samples.len()));
        }
        if out.len() != SPECTRUM_BINS {
            return Err(invalid!("expected {SPECTRUM_BINS} output bins, got {}", out.len()));
        }
        match window {
            WindowKind::Hann => {
                for ((r, &x), &w) in self.re.iter_mut().zip(samples).zip(&self.hann) {
                    *r = x * w;
                }
            }
            WindowKind::Rectangular => self.re.copy_from_slice(samples),
        }
        self.im.fill(0.0);
        self.fft.transform(&mut self.re, &mut self.im);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.re[k].hypot(self.im[k]);
        }
        Ok(())
    }
}

pub fn fft_magnitude(block: &SampleBlock, windowed: bool) -> Result<Spectrum> {
    let window = if windowed { WindowKind::Hann } else { WindowKind::Rectangular };
    let mut bins = vec![0.0; SPECTRUM_BINS];
    SpectrumAnalyzer::new().magnitudes_into(block.samples(), window, &mut bins)?;
    Ok(Spectrum { bins, bin_hz: BIN_HZ })
}

/// Mean-pools groups of four adjacent bins.
pub fn decimate_into(bins: &[f64], out: &mut [f64]) -> Result<()> {
    if bins.len() != SPECTRUM_BINS || out.len() != DECIMATED_BINS {
        return Err(invalid!(
            "decimation maps {SPECTRUM_BINS} -> {DECIMATED_BINS} bins, got {} -> {}",
            bins.len(),
            out.len()
        ));
    }
    for (o, group) in out.iter_mut().zip(bins.chunks_exact(DECIMATION)) {
        *o = group.iter().sum::<f64>() / DECIMATION as f64;
    }
    Ok(())
}

pub fn decimate_bins(spec: &Spectrum) -> Result<Spectrum> {
    let mut bins = vec![0.0; DECIMATED_BINS];
    decimate_into(&spec.bins, &mut bins)?;
    Ok(Spectrum { bins, bin_hz: spec.bin_hz * DECIMATION as f64 })
}

fn check_floor(floor_eps: f64) -> Result<()> {
    if !(floor_eps > 0.0 && floor_eps.is_finite()) {
        return Err(invalid!("log floor must be positive and finite, got {floor_eps}"));
    }
    Ok(())
}

pub fn log_compress_in_place(bins: &mut [f64], floor_eps: f64) -> Result<()> {
    check_floor(floor_eps)?;
    if let Some(i) = bins.iter().position(|&b| !(b >= 0.0)) {
        return Err(invalid!("bin {i} is negative or NaN"));
    }
    for b in bins.iter_mut() {
        *b = (*b + floor_eps).ln();
    }
    Ok(())
}

/// `ln(bin + floor_eps)` elementwise.
pub fn log_compress(spec: &Spectrum, floor_eps: f64) -> Result<Spectrum> {
    let mut bins = spec.bins.clone();
    log_compress_in_place(&mut bins, floor_eps)?;
    Ok(Spectrum { bins, bin_hz: spec.bin_hz })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters evenly spaced on the mel scale from 0 Hz to Nyquist.
///
/// Each triangle's slopes are at least one bin wide, so no filter row is
/// empty even where the mel spacing is finer than the bin spacing.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_bands: usize) -> Result<Self> {
        if n_bands != MEL_BANDS {
            return Err(Error::Unsupported(alloc::format!(
                "only {MEL_BANDS} mel bands are supported, got {n_bands}"
            )));
        }
        let mel_max = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_bands + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_bands * SPECTRUM_BINS];
        for band in 0..n_bands {
            let centre = edges[band + 1];
            let lo = edges[band].min(centre - BIN_HZ);
            let hi = edges[band + 2].max(centre + BIN_HZ);
            let row = &mut weights[band * SPECTRUM_BINS..(band + 1) * SPECTRUM_BINS];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * BIN_HZ;
                let rise = (f - lo) / (centre - lo);
                let fall = (hi - f) / (hi - centre);
                *w = rise.min(fall).max(0.0);
            }
        }
        Ok(Self { weights })
    }

    /// Row-major `80 x 256` weight matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_bands(&self) -> usize {
        self.weights.len() / SPECTRUM_BINS
    }

    /// Filters `magnitudes` and log-compresses the band energies into `out`.
    pub fn apply_into(&self, magnitudes: &[f64], floor_eps: f64, out: &mut [f64]) -> Result<()> {
        check_floor(floor_eps)?;
        if magnitudes.len() != SPECTRUM_BINS || out.len() != self.n_bands() {
            return Err(invalid!(
                "mel filterbank maps {SPECTRUM_BINS} -> {} bins, got {} -> {}",
                self.n_bands(),
                magnitudes.len(),
                out.len()
            ));
        }
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(SPECTRUM_BINS)) {
            let energy: f64 = row.iter().zip(magnitudes).map(|(w, m)| w * m).sum();
            *o = (energy + floor_eps).ln();
        }
        Ok(())
    }
}

pub fn mel_filterbank(spec: &Spectrum, n_bands: usize, floor_eps: f64) -> Result<MelVector> {
    let bank = MelFilterbank::new(n_bands)?;
    let mut bands = vec![0.0; n_bands];
    bank.apply_into(&spec.bins, floor_eps, &mut bands)?;
    Ok(MelVector { bands })
}

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Bilinear-transform high-pass (RBJ cookbook form), normalised so `a0 = 1`.
    pub fn highpass(cutoff_hz: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin_w0, cos_w0) = w0.sin_cos();
        let alpha = sin_w0 / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 + cos_w0) / 2.0 / a0,
            b1: -(1.0 + cos_w0) / a0,
            b2: (1.0 + cos_w0) / 2.0 / a0,
            a1: -2.0 * cos_w0 / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Filters from rest; output sample `k` depends only on inputs `0..=k`.
    pub fn process_in_place(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for s in x.iter_mut() {
            let input = *s;
            let y = self.b0 * input + z1;
            z1 = self.b1 * input - self.a1 * y + z2;
            z2 = self.b2 * input - self.a2 * y;
            *s = y;
        }
    }
}

fn check_cutoff(cutoff_hz: f64) -> Result<()> {
    if HIGHPASS_CUTOFFS_HZ.contains(&cutoff_hz) {
        Ok(())
    } else {
        Err(invalid!("unsupported high-pass cutoff {cutoff_hz} Hz (expected 80 or 160)"))
    }
}

pub fn highpass_in_place(x: &mut [f64], cutoff_hz: f64) -> Result<()> {
    check_cutoff(cutoff_hz)?;
    Biquad::highpass(cutoff_hz, SAMPLE_RATE as f64, BUTTERWORTH_Q).process_in_place(x);
    Ok(())
}

pub fn highpass(block: &SampleBlock, cutoff_hz: f64) -> Result<SampleBlock> {
    let mut out = block.samples.clone();
    highpass_in_place(&mut out, cutoff_hz)?;
    Ok(SampleBlock { samples: out })
}

pub fn waveshape_tanh_in_place(x: &mut [f64], gain: f64) -> Result<()> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(invalid!("waveshaper gain must be positive, got {gain}"));
    }
    for s in x.iter_mut() {
        *s = (gain * *s).tanh();
    }
    Ok(())
}

pub fn waveshape_tanh(block: &SampleBlock, gain: f64) -> Result<SampleBlock> {
    let mut out = block.samples.clone();
    waveshape_tanh_in_place(&mut out, gain)?;
    Ok(SampleBlock { samples: out })
}

pub fn invert_phase_in_place(x: &mut [f64]) {
    for s in x.iter_mut() {
        *s = -*s;
    }
}

pub fn invert_phase(block: &SampleBlock) -> SampleBlock {
    let mut out = block.samples.clone();
    invert_phase_in_place(&mut out);
    SampleBlock { samples: out }
}

pub fn db_to_gain(db: f64) -> f64 {
    10.0.powf(db / 20.0)
}

/// Six channels of 512 samples captured after an onset; the unit of inference.
#[derive(Clone, PartialEq)]
pub struct MultiChannelWindow {
    channels: [[f64; WINDOW_LEN]; N_CHANNELS],
}

impl fmt::Debug for MultiChannelWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let peak = self.peak();
        f.debug_struct("MultiChannelWindow").field("peak", &peak).finish()
    }
}

impl Default for MultiChannelWindow {
    fn default() -> Self {
        Self::zeroed()
    }
}

impl MultiChannelWindow {
    pub fn zeroed() -> Self {
        Self { channels: [[0.0; WINDOW_LEN]; N_CHANNELS] }
    }

    pub fn from_channels(channels: [[f64; WINDOW_LEN]; N_CHANNELS]) -> Self {
        Self { channels }
    }

    /// Builds a window from interleaved frames (`frames.len() == 6 * 512`).
    pub fn from_interleaved(frames: &[f32]) -> Result<Self> {
        if frames.len() != WINDOW_LEN * N_CHANNELS {
            return Err(invalid!("expected {} interleaved samples, got {}", WINDOW_LEN * N_CHANNELS, frames.len()));
        }
        let mut w = Self::zeroed();
        for (i, frame) in frames.chunks_exact(N_CHANNELS).enumerate() {
            for (ch, &x) in frame.iter().enumerate() {
                w.channels[ch][i] = f64::from(x);
            }
        }
        Ok(w)
    }

    pub fn channel(&self, ch: usize) -> &[f64; WINDOW_LEN] {
        &self.channels[ch]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64; WINDOW_LEN] {
        &mut self.channels[ch]
    }

    pub fn channels(&self) -> &[[f64; WINDOW_LEN]; N_CHANNELS] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [[f64; WINDOW_LEN]; N_CHANNELS] {
        &mut self.channels
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scale(&mut self, gain: f64) {
        for s in self.channels.iter_mut().flat_map(|c| c.iter_mut()) {
            *s *= gain;
        }
    }
}

/// Multiplies channel `i` by `10^(gains_db[i] / 20)`.
pub fn scale_channels_in_place(window: &mut MultiChannelWindow, gains_db: &[f64; N_CHANNELS], range_db: f64) -> Result<()> {
    if let Some((i, g)) = gains_db
        .iter()
        .enumerate()
        .find(|(_, g)| !(g.abs() <= range_db))
    {
        return Err(invalid!("gain {g} dB on channel {i} outside +/-{range_db} dB"));
    }
    for (ch, &db) in window.channels.iter_mut().zip(gains_db) {
        let g = db_to_gain(db);
        for s in ch.iter_mut() {
            *s *= g;
        }
    }
    Ok(())
}

pub fn scale_channels(window: &MultiChannelWindow, gains_db: &[f64; N_CHANNELS], range_db: f64) -> Result<MultiChannelWindow> {
    let mut out = window.clone();
    scale_channels_in_place(&mut out, gains_db, range_db)?;
    Ok(out)
}

/// Which spectral representation a network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// 512-bin FFT mean-pooled to 64 bins, log-compressed.
    Fft64,
    /// 80-band mel filterbank, log-compressed.
    Mel80,
}

impl FeatureKind {
    pub fn bins(self) -> usize {
        match self {
            FeatureKind::Fft64 => DECIMATED_BINS,
            FeatureKind::Mel80 => MEL_BANDS,
        }
    }

    pub fn len(self) -> usize {
        N_CHANNELS * self.bins()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub window: WindowKind,
    pub log_floor: f64,
}

impl FeatureConfig {
    pub fn new(kind: FeatureKind) -> Self {
        Self { kind, window: WindowKind::Hann, log_floor: DEFAULT_LOG_FLOOR }
    }
}

/// Channel-major `6 x bins` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureTensor {
    pub fn channel(&self, ch: usize) -> &[f64] {
        let b = self.kind.bins();
        &self.values[ch * b..(ch + 1) * b]
    }
}

/// Computes per-channel features without allocating after construction.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    analyzer: SpectrumAnalyzer,
    mel: Option<MelFilterbank>,
    magnitudes: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        check_floor(config.log_floor)?;
        let mel = match config.kind {
            FeatureKind::Mel80 => Some(MelFilterbank::new(MEL_BANDS)?),
            FeatureKind::Fft64 => None,
        };
        Ok(Self {
            config,
            analyzer: SpectrumAnalyzer::new(),
            mel,
            magnitudes: vec![0.0; SPECTRUM_BINS],
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn output_len(&self) -> usize {
        self.config.kind.len()
    }

    pub fn extract_into(&mut self, window: &MultiChannelWindow, out: &mut [f64]) -> Result<()> {
        let bins = self.config.kind.bins();
        if out.len() != N_CHANNELS * bins {
            return Err(invalid!("feature buffer must hold {} values, got {}", N_CHANNELS * bins, out.len()));
        }
        for (ch, dst) in window.channels.iter().zip(out.chunks_exact_mut(bins)) {
            self.analyzer
                .magnitudes_into(ch, self.config.window, &mut self.magnitudes)?;
            match &self.mel {
                Some(bank) => bank.apply_into(&self.magnitudes, self.config.log_floor, dst)?,
                None => {
                    decimate_into(&self.magnitudes, dst)?;
                    log_compress_in_place(dst, self.config.log_floor)?;
                }
            }
        }
        Ok(())
    }

    pub fn extract(&mut self, window: &MultiChannelWindow) -> Result<FeatureTensor> {
        let mut values = vec![0.0; self.output_len()];
        self.extract_into(window, &mut values)?;
        Ok(FeatureTensor { kind: self.config.kind, values })
    }
}
