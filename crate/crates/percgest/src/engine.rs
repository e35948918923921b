//! Streaming inference: onset detection, window capture, feature extraction
//! and model evaluation on one real-time stage, with event serialisation on a
//! separate writer thread.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_queue::ArrayQueue;
use percgest_core::data::ClassScheme;
use percgest_core::dsp::{FeatureExtractor, MultiChannelWindow, N_CHANNELS, WINDOW_LEN};
use percgest_core::models::{ModelBundle, Network, NetworkWorkspace, MAX_CLASSES, N_EMB, N_LOCATIONS};
use percgest_core::onset::{OnsetConfig, OnsetDetector, OnsetEvent, ChannelRing};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Frames of history kept by the stage; events are served as soon as their window fills.
const RING_FRAMES: usize = 2 * WINDOW_LEN;
/// At most one onset per two frames can be pending while a window fills.
const PENDING_CAPACITY: usize = WINDOW_LEN;
pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const DATAGRAM_LEN: usize = 64;
pub const DATAGRAM_MAGIC: &[u8; 4] = b"PGEV";

/// One recognised hit. Fixed size so the real-time stage never allocates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamEvent {
    /// Onset sample index.
    pub t: u64,
    /// Number of frames consumed when the event was produced.
    pub ready_at: u64,
    pub probs: [f64; MAX_CLASSES],
    pub n_classes: usize,
    pub loc_probs: Option<[f64; N_LOCATIONS]>,
    pub emb: [f64; N_EMB],
    /// Wall-clock feature extraction plus inference time.
    pub dur_us: f64,
}

impl StreamEvent {
    pub fn class_probs(&self) -> &[f64] {
        &self.probs[..self.n_classes]
    }

    /// JSON object `{"t", "probs", "loc_probs"?, "emb", "dur_us"}` with label-keyed probabilities.
    pub fn to_json(&self, class_labels: &[&str]) -> Value {
        let mut m = Map::new();
        m.insert("t".into(), self.t.into());
        let probs: Map<String, Value> = class_labels.iter().zip(self.class_probs()).map(|(l, &p)| (l.to_string(), p.into())).collect();
        m.insert("probs".into(), probs.into());
        if let Some(lp) = &self.loc_probs {
            let locs: Map<String, Value> =
                percgest_core::data::Location::ALL.iter().zip(lp).map(|(l, &p)| (l.as_str().to_string(), p.into())).collect();
            m.insert("loc_probs".into(), locs.into());
        }
        m.insert("emb".into(), Value::Array(self.emb.iter().map(|&x| x.into()).collect()));
        m.insert("dur_us".into(), self.dur_us.into());
        Value::Object(m)
    }

    /// 64-byte little-endian datagram: magic, u64 onset, f32 probs[4], f32 emb[2], f32 duration, zero padding.
    pub fn to_datagram(&self) -> [u8; DATAGRAM_LEN] {
        let mut d = [0u8; DATAGRAM_LEN];
        d[..4].copy_from_slice(DATAGRAM_MAGIC);
        d[4..12].copy_from_slice(&self.t.to_le_bytes());
        let mut o = 12;
        for &p in &self.probs {
            d[o..o + 4].copy_from_slice(&(p as f32).to_le_bytes());
            o += 4;
        }
        for &e in &self.emb {
            d[o..o + 4].copy_from_slice(&(e as f32).to_le_bytes());
            o += 4;
        }
        d[o..o + 4].copy_from_slice(&(self.dur_us as f32).to_le_bytes());
        d
    }
}

/// Single-owner real-time processing stage.
///
/// After construction, [`RealtimeStage::process`] performs no heap allocation
/// on the success path.
pub struct RealtimeStage {
    detector: OnsetDetector,
    ring: ChannelRing,
    pending: VecDeque<OnsetEvent>,
    window: MultiChannelWindow,
    extractor: FeatureExtractor,
    features: Vec<f64>,
    network: Network,
    ws: NetworkWorkspace,
    timed: bool,
    dropped_onsets: u64,
    failed: u64,
}

impl RealtimeStage {
    pub fn new(bundle: &ModelBundle, onset: OnsetConfig) -> Result<Self> {
        let network = Network::from_bundle(bundle)?;
        let extractor = FeatureExtractor::new(bundle.features.config)?;
        let ws = network.workspace();
        Ok(Self {
            detector: OnsetDetector::new(onset)?,
            ring: ChannelRing::new(RING_FRAMES)?,
            pending: VecDeque::with_capacity(PENDING_CAPACITY),
            window: MultiChannelWindow::zeroed(),
            features: vec![0.0; extractor.output_len()],
            extractor,
            network,
            ws,
            timed: true,
            dropped_onsets: 0,
            failed: 0,
        })
    }

    /// Disables wall-clock timing; every event then reports `dur_us = 0`.
    pub fn set_deterministic(&mut self, deterministic: bool) {
        self.timed = !deterministic;
    }

    /// Frames consumed so far.
    pub fn position(&self) -> u64 {
        self.ring.written()
    }

    /// Onsets discarded because the pending list was full.
    pub fn dropped_onsets(&self) -> u64 {
        self.dropped_onsets
    }

    /// Events lost to inference errors.
    pub fn failed(&self) -> u64 {
        self.failed
    }

    /// Consumes interleaved six-channel frames, emitting each event as soon as
    /// its 512-sample window is complete.
    pub fn process(&mut self, interleaved: &[f32], mut emit: impl FnMut(StreamEvent)) -> Result<()> {
        if interleaved.len() % N_CHANNELS != 0 {
            return Err(Error::Usage(format!("chunk of {} samples is not a whole number of {N_CHANNELS}-channel frames", interleaved.len())));
        }
        for frame in interleaved.chunks_exact(N_CHANNELS) {
            self.ring.push_frame(frame);
            if let Some(ev) = self.detector.step(frame) {
                if self.pending.len() == PENDING_CAPACITY {
                    self.pending.pop_front();
                    self.dropped_onsets += 1;
                }
                self.pending.push_back(ev);
            }
            while let Some(&ev) = self.pending.front() {
                if ev.sample_index + WINDOW_LEN as u64 > self.ring.written() {
                    break;
                }
                self.pending.pop_front();
                match self.infer(ev) {
                    Ok(out) => emit(out),
                    Err(e) => {
                        self.failed += 1;
                        log::error!("dropping event at sample {}: {e}", ev.sample_index);
                    }
                }
            }
        }
        Ok(())
    }

    fn infer(&mut self, mut ev: OnsetEvent) -> percgest_core::Result<StreamEvent> {
        let start = self.timed.then(Instant::now);
        percgest_core::onset::capture_window_into(&self.ring, &mut ev, 0, &mut self.window)?;
        self.extractor.extract_into(&self.window, &mut self.features)?;
        let p = self.network.forward_classify(&self.features, &mut self.ws)?;
        let dur_us = start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e6);
        let mut probs = [0.0; MAX_CLASSES];
        probs[..p.class_probs().len()].copy_from_slice(p.class_probs());
        let loc_probs = p.location_probs().map(|lp| {
            let mut a = [0.0; N_LOCATIONS];
            a.copy_from_slice(lp);
            a
        });
        Ok(StreamEvent {
            t: ev.sample_index,
            ready_at: self.ring.written(),
            probs,
            n_classes: p.class_probs().len(),
            loc_probs,
            emb: p.embedding.unwrap_or([0.0; N_EMB]),
            dur_us,
        })
    }
}

/// Bounded hand-off between the real-time stage and the writer. A full queue
/// drops its oldest event and counts it; pushing never blocks.
#[derive(Clone)]
pub struct EventQueue {
    queue: Arc<ArrayQueue<StreamEvent>>,
    dropped: Arc<AtomicU64>,
}

impl EventQueue {
    pub fn new(capacity: usize) -> Self {
        Self { queue: Arc::new(ArrayQueue::new(capacity.max(1))), dropped: Arc::new(AtomicU64::new(0)) }
    }

    pub fn push(&self, ev: StreamEvent) {
        if self.queue.force_push(ev).is_some() {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn pop(&self) -> Option<StreamEvent> {
        self.queue.pop()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

/// Where raw frames come from.
pub enum Source {
    /// Interleaved frames already in memory (e.g. a decoded wave file).
    Frames(Vec<f32>),
    /// Raw little-endian f32 interleaved frames.
    Reader(Box<dyn Read + Send>),
}

pub struct StreamOptions {
    pub onset: OnsetConfig,
    /// Frames per processing call.
    pub chunk_frames: usize,
    pub deterministic: bool,
    pub queue_capacity: usize,
    pub udp: Option<SocketAddr>,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self { onset: OnsetConfig::default(), chunk_frames: 256, deterministic: false, queue_capacity: DEFAULT_QUEUE_CAPACITY, udp: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamSummary {
    pub frames: u64,
    pub events: u64,
    pub dropped_events: u64,
    pub dropped_onsets: u64,
    pub failed: u64,
}

/// Streams `source` through `bundle`, writing one JSON event per line to `out`.
pub fn run_stream<W: Write + Send + 'static>(bundle: &ModelBundle, source: Source, opts: &StreamOptions, out: W) -> Result<(StreamSummary, W)> {
    if opts.chunk_frames == 0 {
        return Err(Error::Usage("chunk size must be positive".into()));
    }
    let scheme = ClassScheme::for_head(bundle.head.n_cl, bundle.head.n_loc)?;
    let labels: Vec<String> = scheme.class_labels().into_iter().map(String::from).collect();
    let mut stage = RealtimeStage::new(bundle, opts.onset)?;
    stage.set_deterministic(opts.deterministic);
    let socket = match opts.udp {
        Some(addr) => {
            let s = UdpSocket::bind(("0.0.0.0", 0)).map_err(|e| Error::io("udp", e))?;
            s.connect(addr).map_err(|e| Error::io(addr.to_string(), e))?;
            Some(s)
        }
        None => None,
    };

    let queue = EventQueue::new(opts.queue_capacity);
    let done = Arc::new(AtomicBool::new(false));
    let writer = {
        let (queue, done) = (queue.clone(), done.clone());
        thread::Builder::new()
            .name("percgest-writer".into())
            .spawn(move || writer_loop(queue, done, labels, socket, out))
            .map_err(|e| Error::io("writer thread", e))?
    };
    let wake = writer.thread().clone();

    let mut events = 0u64;
    let mut push = |ev: StreamEvent| {
        events += 1;
        queue.push(ev);
        wake.unpark();
    };
    let fed = feed(&mut stage, source, opts.chunk_frames, &mut push);
    done.store(true, Ordering::Release);
    wake.unpark();
    let written = writer.join().map_err(|_| Error::Usage("writer thread panicked".into()))?;
    fed?;
    let (writer_out, io_result) = written;
    io_result?;
    Ok((
        StreamSummary {
            frames: stage.position(),
            events,
            dropped_events: queue.dropped(),
            dropped_onsets: stage.dropped_onsets(),
            failed: stage.failed(),
        },
        writer_out,
    ))
}

fn feed(stage: &mut RealtimeStage, source: Source, chunk_frames: usize, emit: &mut impl FnMut(StreamEvent)) -> Result<()> {
    let chunk = chunk_frames * N_CHANNELS;
    match source {
        Source::Frames(frames) => {
            if frames.len() % N_CHANNELS != 0 {
                return Err(Error::Usage(format!("{} samples is not a whole number of {N_CHANNELS}-channel frames", frames.len())));
            }
            for c in frames.chunks(chunk) {
                stage.process(c, &mut *emit)?;
            }
        }
        Source::Reader(mut r) => {
            let mut bytes = vec![0u8; chunk * 4];
            let mut samples = vec![0f32; chunk];
            let mut filled = 0;
            loop {
                let n = r.read(&mut bytes[filled..]).map_err(|e| Error::io("stdin", e))?;
                if n == 0 {
                    break;
                }
                filled += n;
                let whole = filled / (4 * N_CHANNELS) * (4 * N_CHANNELS);
                if filled == bytes.len() || whole > 0 {
                    let ns = whole / 4;
                    for (s, b) in samples[..ns].iter_mut().zip(bytes[..whole].chunks_exact(4)) {
                        *s = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                    }
                    stage.process(&samples[..ns], &mut *emit)?;
                    bytes.copy_within(whole..filled, 0);
                    filled -= whole;
                }
            }
            if filled != 0 {
                log::warn!("ignoring {filled} trailing bytes that do not form a whole frame");
            }
        }
    }
    Ok(())
}

fn writer_loop<W: Write>(queue: EventQueue, done: Arc<AtomicBool>, labels: Vec<String>, socket: Option<UdpSocket>, mut out: W) -> (W, Result<()>) {
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    let mut line = Vec::with_capacity(256);
    let mut result = Ok(());
    loop {
        let finished = done.load(Ordering::Acquire);
        while let Some(ev) = queue.pop() {
            if result.is_err() {
                continue;
            }
            line.clear();
            if let Err(e) = serde_json::to_writer(&mut line, &ev.to_json(&labels)) {
                result = Err(e.into());
                continue;
            }
            line.push(b'\n');
            if let Err(e) = out.write_all(&line) {
                result = Err(Error::io("event output", e));
                continue;
            }
            if let Some(s) = &socket {
                if let Err(e) = s.send(&ev.to_datagram()) {
                    log::warn!("udp send failed: {e}");
                }
            }
        }
        if finished {
            break;
        }
        thread::park_timeout(Duration::from_millis(50));
    }
    if result.is_ok() {
        result = out.flush().map_err(|e| Error::io("event output", e));
    }
    (out, result)
}
