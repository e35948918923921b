//! Per-call latency of network inference.

use std::fmt::Write as _;
use std::time::Instant;

use percgest_core::dsp::{FeatureExtractor, MultiChannelWindow};
use percgest_core::models::{ModelBundle, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CALLS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub architecture: String,
    pub n_calls: usize,
    pub include_features: bool,
    pub mean_us: f64,
    /// Population standard deviation.
    pub std_us: f64,
    pub p99_us: f64,
    /// p99 above ten times the mean; OS scheduling noise, reported rather than failed.
    pub jitter_flag: bool,
}

impl BenchReport {
    /// Rows in `Network | Avg | Std Dev` layout, microseconds.
    pub fn table(reports: &[BenchReport]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>10} {:>12}", "Network (us)", "Avg", "Std Dev");
        for r in reports {
            let name = if r.include_features { format!("{} +features", r.architecture) } else { r.architecture.clone() };
            let _ = writeln!(s, "{:<24} {:>10.2} {:>12.2}", name, r.mean_us, r.std_us);
        }
        s
    }
}

/// Summary statistics of per-call durations in microseconds.
pub fn summarize(durations_us: &[f64]) -> (f64, f64, f64) {
    let n = durations_us.len() as f64;
    let mean = durations_us.iter().sum::<f64>() / n;
    let var = durations_us.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let mut sorted = durations_us.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((0.99 * n).ceil() as usize).clamp(1, sorted.len()) - 1;
    (mean, var.sqrt(), sorted[idx])
}

/// Times `n_calls` forward passes on a fixed random input after one untimed warm-up.
/// With `include_features` each call also extracts features from a fixed random window.
pub fn bench(bundle: &ModelBundle, n_calls: usize, include_features: bool, seed: u64) -> Result<BenchReport> {
    if n_calls == 0 {
        return Err(Error::Usage("bench needs at least one call".into()));
    }
    let net = Network::from_bundle(bundle)?;
    let mut ws = net.workspace();
    let mut fx = FeatureExtractor::new(bundle.features.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut window = MultiChannelWindow::zeroed();
    for ch in window.channels_mut() {
        for x in ch.iter_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
    }
    let mut features = vec![0.0; fx.output_len()];
    fx.extract_into(&window, &mut features)?;
    let mut durations = vec![0.0; n_calls];

    net.forward_classify(&features, &mut ws)?;
    for d in durations.iter_mut() {
        let t = Instant::now();
        if include_features {
            fx.extract_into(&window, &mut features)?;
        }
        let p = net.forward_classify(&features, &mut ws)?;
        std::hint::black_box(p);
        *d = t.elapsed().as_secs_f64() * 1e6;
    }
    let (mean_us, std_us, p99_us) = summarize(&durations);
    Ok(BenchReport {
        architecture: bundle.architecture.to_string(),
        n_calls,
        include_features,
        mean_us,
        std_us,
        p99_us,
        jitter_flag: p99_us > 10.0 * mean_us,
    })
}
