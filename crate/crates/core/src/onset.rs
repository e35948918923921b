//! Time-domain attack detection and capture of the window that follows it.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::dsp::{MultiChannelWindow, N_CHANNELS, SAMPLE_RATE, WINDOW_LEN};
use crate::error::invalid;
use crate::{Error, Result};

/// Which channels feed the detection envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPolicy {
    MaxAcrossChannels,
    Single(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnsetConfig {
    pub threshold: f64,
    pub refractory_ms: f64,
    pub channel_policy: ChannelPolicy,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            refractory_ms: 50.0,
            channel_policy: ChannelPolicy::MaxAcrossChannels,
        }
    }
}

impl OnsetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(invalid!("onset threshold must be in (0, 1], got {}", self.threshold));
        }
        if !(self.refractory_ms >= 0.0 && self.refractory_ms.is_finite()) {
            return Err(invalid!("refractory period must be >= 0 ms, got {}", self.refractory_ms));
        }
        if let ChannelPolicy::Single(ch) = self.channel_policy {
            if ch >= N_CHANNELS {
                return Err(invalid!("detection channel {ch} out of range"));
            }
        }
        Ok(())
    }

    /// Refractory period in whole samples at 44.1 kHz.
    pub fn refractory_samples(&self) -> u64 {
        Float::round(self.refractory_ms * SAMPLE_RATE as f64 / 1000.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetEvent {
    /// Absolute position of the threshold crossing in the stream.
    pub sample_index: u64,
    /// Peak `|x|` seen so far; updated to the window peak on capture.
    pub peak_amplitude: f64,
}

/// Rising-edge threshold detector over the rectified cross-channel maximum.
///
/// One instance per stream. Processing a stream in one block or in arbitrary
/// chunks yields the same events.
#[derive(Debug, Clone)]
pub struct OnsetDetector {
    config: OnsetConfig,
    refractory: u64,
    position: u64,
    next_allowed: u64,
    prev_envelope: f64,
}

impl OnsetDetector {
    pub fn new(config: OnsetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            refractory: config.refractory_samples(),
            config,
            position: 0,
            next_allowed: 0,
            prev_envelope: 0.0,
        })
    }

    pub fn config(&self) -> &OnsetConfig {
        &self.config
    }

    /// Number of frames consumed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    fn envelope<T: Copy + Into<f64>>(&self, frame: &[T]) -> f64 {
        match self.config.channel_policy {
            ChannelPolicy::MaxAcrossChannels => frame
                .iter()
                .fold(0.0, |m: f64, &x| m.max(x.into().abs())),
            ChannelPolicy::Single(ch) => frame[ch].into().abs(),
        }
    }

    /// Advances by one six-channel frame; returns an event if this frame is an onset.
    #[inline]
    pub fn step<T: Copy + Into<f64>>(&mut self, frame: &[T]) -> Option<OnsetEvent> {
        debug_assert_eq!(frame.len(), N_CHANNELS);
        let env = self.envelope(frame);
        let index = self.position;
        self.position += 1;
        let rising = env >= self.config.threshold && self.prev_envelope < self.config.threshold;
        self.prev_envelope = env;
        if rising && index >= self.next_allowed {
            self.next_allowed = index + self.refractory;
            Some(OnsetEvent { sample_index: index, peak_amplitude: env })
        } else {
            None
        }
    }

    /// Runs over interleaved frames, handing each event to `emit`.
    pub fn process<T: Copy + Into<f64>>(&mut self, interleaved: &[T], mut emit: impl FnMut(OnsetEvent)) -> Result<()> {
        if interleaved.len() % N_CHANNELS != 0 {
            return Err(invalid!("chunk length {} is not a multiple of {N_CHANNELS}", interleaved.len()));
        }
        for frame in interleaved.chunks_exact(N_CHANNELS) {
            if let Some(ev) = self.step(frame) {
                emit(ev);
            }
        }
        Ok(())
    }

    pub fn detect<T: Copy + Into<f64>>(&mut self, interleaved: &[T]) -> Result<Vec<OnsetEvent>> {
        let mut events = Vec::new();
        self.process(interleaved, |e| events.push(e))?;
        Ok(events)
    }
}

/// Fixed-capacity per-channel history of the most recent frames.
#[derive(Debug, Clone)]
pub struct ChannelRing {
    capacity: usize,
    data: Vec<f64>,
    written: u64,
}

impl ChannelRing {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < WINDOW_LEN {
            return Err(invalid!("ring capacity {capacity} smaller than a window"));
        }
        Ok(Self { capacity, data: vec![0.0; capacity * N_CHANNELS], written: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total frames pushed since creation.
    pub fn written(&self) -> u64 {
        self.written
    }

    #[inline]
    pub fn push_frame<T: Copy + Into<f64>>(&mut self, frame: &[T]) {
        let slot = (self.written % self.capacity as u64) as usize;
        for (ch, &x) in frame.iter().enumerate().take(N_CHANNELS) {
            self.data[ch * self.capacity + slot] = x.into();
        }
        self.written += 1;
    }

    pub fn push_interleaved<T: Copy + Into<f64>>(&mut self, interleaved: &[T]) {
        for frame in interleaved.chunks_exact(N_CHANNELS) {
            self.push_frame(frame);
        }
    }

    /// Copies the 512 frames starting at absolute index `start` into `out`.
    pub fn copy_window(&self, start: u64, out: &mut MultiChannelWindow) -> Result<()> {
        let end = start + WINDOW_LEN as u64;
        if self.written < end {
            return Err(Error::NotReady { needed: end, available: self.written });
        }
        let oldest = self.written.saturating_sub(self.capacity as u64);
        if start < oldest {
            return Err(Error::Evicted { start, oldest });
        }
        for (ch, dst) in out.channels_mut().iter_mut().enumerate() {
            let src = &self.data[ch * self.capacity..(ch + 1) * self.capacity];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = src[((start + i as u64) % self.capacity as u64) as usize];
            }
        }
        Ok(())
    }
}

/// Captures the window beginning `pre_samples` before the event and records
/// the window peak on the event.
pub fn capture_window_into(ring: &ChannelRing, event: &mut OnsetEvent, pre_samples: u64, out: &mut MultiChannelWindow) -> Result<()> {
    let start = event
        .sample_index
        .checked_sub(pre_samples)
        .ok_or_else(|| invalid!("pre-roll of {pre_samples} samples reaches before stream start"))?;
    ring.copy_window(start, out)?;
    event.peak_amplitude = out.peak();
    Ok(())
}

pub fn capture_window(ring: &ChannelRing, event: &OnsetEvent, pre_samples: u64) -> Result<MultiChannelWindow> {
    let mut ev = *event;
    let mut out = MultiChannelWindow::zeroed();
    capture_window_into(ring, &mut ev, pre_samples, &mut out)?;
    Ok(out)
}
