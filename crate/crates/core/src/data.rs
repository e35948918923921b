//! Hit taxonomy, augmentation, dataset splitting and the synthetic hit generator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{
    db_to_gain, highpass_in_place, invert_phase_in_place, waveshape_tanh_in_place, Biquad, MultiChannelWindow,
    BUTTERWORTH_Q, DEFAULT_GAIN_RANGE_DB, HIGHPASS_CUTOFFS_HZ, N_CHANNELS, SAMPLE_RATE, WINDOW_LEN,
};
use crate::error::invalid;
use crate::models::Target;
use crate::{Error, Result};

macro_rules! label_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $s)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }

            /// Position in [`Self::ALL`].
            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| invalid!("unknown {} '{}'", stringify!($name), s))
            }
        }
    };
}

label_enum!(
    /// Only hits are supported; scrapes are reserved.
    Gesture { Hit => "hit", Scrape => "scrape" }
);
label_enum!(HandPart { Heel => "heel", Thumb => "thumb", Fingers => "fingers", Nails => "nails" });
label_enum!(Location {
    Soundhole => "soundhole",
    UpperBout => "upper_bout",
    LowerBout => "lower_bout",
    UpperSide => "upper_side",
    LowerSide => "lower_side",
});
label_enum!(Dynamics { P => "p", Mp => "mp", Mf => "mf", F => "f" });

/// Fixed channel order of every multi-channel recording.
pub const CHANNEL_ROLES: [&str; N_CHANNELS] = [
    "magnetic",
    "piezo_soundhole",
    "piezo_upper_bout",
    "piezo_lower_bout",
    "piezo_upper_side",
    "piezo_lower_side",
];

pub const KICK: usize = 0;
pub const NON_KICK: usize = 1;
pub const TWO_CLASS_LABELS: [&str; 2] = ["kick", "non_kick"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HitLabel {
    pub gesture: Gesture,
    pub hand_part: HandPart,
    pub location: Location,
    pub dynamics: Dynamics,
}

impl HitLabel {
    /// Builds a hit label; scrape gestures are rejected.
    pub fn new(gesture: Gesture, hand_part: HandPart, location: Location, dynamics: Dynamics) -> Result<Self> {
        if gesture != Gesture::Hit {
            return Err(Error::Unsupported(format!("gesture '{gesture}' is not supported")));
        }
        Ok(Self { gesture, hand_part, location, dynamics })
    }

    pub fn hit(hand_part: HandPart, location: Location, dynamics: Dynamics) -> Self {
        Self { gesture: Gesture::Hit, hand_part, location, dynamics }
    }

    pub fn is_kick(&self) -> bool {
        self.hand_part == HandPart::Heel
    }

    /// Kick/non-kick class index.
    pub fn kick_class(&self) -> usize {
        if self.is_kick() {
            KICK
        } else {
            NON_KICK
        }
    }
}

/// Label facet used to group hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Dynamics,
    Location,
    HandPart,
}

impl Facet {
    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Dynamics => "dynamics",
            Facet::Location => "location",
            Facet::HandPart => "hand_part",
        }
    }

    pub fn values(self) -> Vec<&'static str> {
        match self {
            Facet::Dynamics => Dynamics::ALL.iter().map(|v| v.as_str()).collect(),
            Facet::Location => Location::ALL.iter().map(|v| v.as_str()).collect(),
            Facet::HandPart => HandPart::ALL.iter().map(|v| v.as_str()).collect(),
        }
    }

    pub fn value_index(self, label: &HitLabel) -> usize {
        match self {
            Facet::Dynamics => label.dynamics.index(),
            Facet::Location => label.location.index(),
            Facet::HandPart => label.hand_part.index(),
        }
    }
}

impl FromStr for Facet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamics" => Ok(Facet::Dynamics),
            "location" => Ok(Facet::Location),
            "hand_part" => Ok(Facet::HandPart),
            _ => Err(invalid!("unknown facet '{s}' (expected dynamics, location or hand_part)")),
        }
    }
}

/// How labels map to training targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassScheme {
    KickNonKick,
    HandPart,
    HandPartLocation,
}

impl ClassScheme {
    pub fn for_head(n_cl: usize, n_loc: usize) -> Result<Self> {
        match (n_cl, n_loc) {
            (2, 0) => Ok(ClassScheme::KickNonKick),
            (4, 0) => Ok(ClassScheme::HandPart),
            (4, 5) => Ok(ClassScheme::HandPartLocation),
            _ => Err(invalid!("no class scheme for n_cl={n_cl}, n_loc={n_loc}")),
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            ClassScheme::KickNonKick => 2,
            _ => HandPart::ALL.len(),
        }
    }

    pub fn class_labels(self) -> Vec<&'static str> {
        match self {
            ClassScheme::KickNonKick => TWO_CLASS_LABELS.to_vec(),
            _ => Facet::HandPart.values(),
        }
    }

    pub fn class_of(self, label: &HitLabel) -> usize {
        match self {
            ClassScheme::KickNonKick => label.kick_class(),
            _ => label.hand_part.index(),
        }
    }

    pub fn target(self, label: &HitLabel) -> Target {
        Target {
            class: self.class_of(label),
            location: (self == ClassScheme::HandPartLocation).then(|| label.location.index()),
        }
    }

    /// Key used for stratification: the class, joined with location when both are predicted.
    pub fn strata_key(self, label: &HitLabel) -> usize {
        match self {
            ClassScheme::HandPartLocation => label.hand_part.index() * Location::ALL.len() + label.location.index(),
            _ => self.class_of(label),
        }
    }
}

/// (hand part, location) combinations that cannot be played.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionList {
    pub excluded: Vec<(HandPart, Location)>,
}

impl Default for ExclusionList {
    /// The heel cannot reach the lower side.
    fn default() -> Self {
        Self { excluded: vec![(HandPart::Heel, Location::LowerSide)] }
    }
}

impl ExclusionList {
    pub fn none() -> Self {
        Self { excluded: Vec::new() }
    }

    pub fn allows(&self, hand: HandPart, loc: Location) -> bool {
        !self.excluded.contains(&(hand, loc))
    }

    pub fn check(&self, label: &HitLabel) -> Result<()> {
        if self.allows(label.hand_part, label.location) {
            Ok(())
        } else {
            Err(invalid!("{} at {} is an excluded combination", label.hand_part, label.location))
        }
    }

    /// Allowed combinations in taxonomy order.
    pub fn valid_combos(&self) -> Vec<(HandPart, Location)> {
        HandPart::ALL
            .iter()
            .flat_map(|&h| Location::ALL.iter().map(move |&l| (h, l)))
            .filter(|&(h, l)| self.allows(h, l))
            .collect()
    }
}

/// One labeled 6×512 window.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub window: MultiChannelWindow,
    pub label: HitLabel,
}

/// Which augmentation transforms may be applied, and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub channel_gain: bool,
    pub highpass_80: bool,
    pub highpass_160: bool,
    pub waveshape: bool,
    pub phase_inversion: bool,
    /// Independent application probability of each enabled transform.
    pub probability: f64,
    pub gain_range_db: f64,
    pub waveshape_gain: f64,
}

impl AugmentPolicy {
    pub const WAVESHAPE_GAIN: f64 = 5.0;

    pub fn full() -> Self {
        Self {
            channel_gain: true,
            highpass_80: true,
            highpass_160: true,
            waveshape: true,
            phase_inversion: true,
            probability: 0.5,
            gain_range_db: DEFAULT_GAIN_RANGE_DB,
            waveshape_gain: Self::WAVESHAPE_GAIN,
        }
    }

    pub fn none() -> Self {
        Self {
            channel_gain: false,
            highpass_80: false,
            highpass_160: false,
            waveshape: false,
            phase_inversion: false,
            ..Self::full()
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.channel_gain || self.highpass_80 || self.highpass_160 || self.waveshape || self.phase_inversion)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(invalid!("augmentation probability must lie in [0, 1]"));
        }
        if !(self.gain_range_db >= 0.0 && self.gain_range_db.is_finite()) {
            return Err(invalid!("gain range must be finite and non-negative"));
        }
        if !(self.waveshape_gain > 0.0 && self.waveshape_gain.is_finite()) {
            return Err(invalid!("waveshaper gain must be positive"));
        }
        Ok(())
    }

    /// Short description such as `gain+hp80+hp160+tanh+phase@0.5`.
    pub fn describe(&self) -> String {
        if self.is_empty() {
            return "none".to_string();
        }
        let names = [
            (self.channel_gain, "gain"),
            (self.highpass_80, "hp80"),
            (self.highpass_160, "hp160"),
            (self.waveshape, "tanh"),
            (self.phase_inversion, "phase"),
        ];
        let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        format!("{}@{}", on.join("+"), self.probability)
    }
}

/// Applies the enabled transforms in the order gain, high-pass 80 Hz,
/// high-pass 160 Hz, waveshape, phase inversion. Each enabled transform costs
/// one Bernoulli draw; channel gain draws six more values when applied.
pub fn augment_in_place<R: Rng + ?Sized>(window: &mut MultiChannelWindow, policy: &AugmentPolicy, rng: &mut R) -> Result<()> {
    policy.validate()?;
    let p = policy.probability;
    if policy.channel_gain && rng.random_bool(p) {
        for ch in window.channels_mut() {
            let db = if policy.gain_range_db > 0.0 {
                rng.random_range(-policy.gain_range_db..=policy.gain_range_db)
            } else {
                0.0
            };
            let g = db_to_gain(db);
            ch.iter_mut().for_each(|s| *s *= g);
        }
    }
    for (enabled, cutoff) in [(policy.highpass_80, HIGHPASS_CUTOFFS_HZ[0]), (policy.highpass_160, HIGHPASS_CUTOFFS_HZ[1])] {
        if enabled && rng.random_bool(p) {
            for ch in window.channels_mut() {
                highpass_in_place(ch, cutoff)?;
            }
        }
    }
    if policy.waveshape && rng.random_bool(p) {
        for ch in window.channels_mut() {
            waveshape_tanh_in_place(ch, policy.waveshape_gain)?;
        }
    }
    if policy.phase_inversion && rng.random_bool(p) {
        for ch in window.channels_mut() {
            invert_phase_in_place(ch);
        }
    }
    Ok(())
}

pub fn augment<R: Rng + ?Sized>(window: &MultiChannelWindow, policy: &AugmentPolicy, rng: &mut R) -> Result<MultiChannelWindow> {
    let mut out = window.clone();
    augment_in_place(&mut out, policy, rng)?;
    Ok(out)
}

/// Disjoint, exhaustive split of example indices, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub const MIN_PER_CLASS: usize = 5;

/// Allocates `round(frac * sum)` items across groups by largest remainder, so
/// each group receives the floor or ceiling of its exact share.
fn apportion(counts: &[usize], frac: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (frac * total as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * frac).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(alloc.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if alloc[g] < counts[g] {
            alloc[g] += 1;
            remaining -= 1;
        }
    }
    alloc
}

/// Stratified shuffle split: `test_frac` of every stratum goes to test, then
/// `val_frac` of what remains goes to validation.
pub fn stratified_split(keys: &[usize], test_frac: f64, val_frac: f64, seed: u64) -> Result<SplitIndices> {
    for (name, f) in [("test", test_frac), ("validation", val_frac)] {
        if !(0.0..1.0).contains(&f) {
            return Err(invalid!("{name} fraction must lie in [0, 1), got {f}"));
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &k) in keys.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    if let Some((k, g)) = groups.iter().find(|(_, g)| g.len() < MIN_PER_CLASS) {
        return Err(Error::Stratification(format!(
            "class {k} has {} examples, at least {MIN_PER_CLASS} are required",
            g.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let n_test = apportion(&counts, test_frac);
    let rest: Vec<usize> = counts.iter().zip(&n_test).map(|(c, t)| c - t).collect();
    let n_val = apportion(&rest, val_frac);
    let mut out = SplitIndices { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for ((g, &t), &v) in groups.iter().zip(&n_test).zip(&n_val) {
        out.test.extend_from_slice(&g[..t]);
        out.val.extend_from_slice(&g[t..t + v]);
        out.train.extend_from_slice(&g[t + v..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebalanceMode {
    None,
    Undersample,
}

/// Indices kept after rebalancing, ascending. Undersampling keeps a seeded
/// random subset of every class, sized to the smallest class.
pub fn rebalance(keys: &[usize], mode: RebalanceMode, seed: u64) -> Vec<usize> {
    match mode {
        RebalanceMode::None => (0..keys.len()).collect(),
        RebalanceMode::Undersample => {
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &k) in keys.iter().enumerate() {
                groups.entry(k).or_default().push(i);
            }
            let min = groups.values().map(Vec::len).min().unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut kept: Vec<usize> = Vec::with_capacity(min * groups.len());
            for mut g in groups.into_values() {
                g.shuffle(&mut rng);
                kept.extend_from_slice(&g[..min]);
            }
            kept.sort_unstable();
            kept
        }
    }
}

/// Acquisition-chain colouring applied to generated audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceProfile {
    pub name: String,
    pub gains_db: [f64; N_CHANNELS],
    /// Second-order high-pass applied to every channel.
    pub lowcut_hz: Option<f64>,
    /// One-pole low-pass applied to every channel.
    pub highcut_hz: Option<f64>,
}

impl InterfaceProfile {
    pub fn studio() -> Self {
        Self { name: "studio".into(), gains_db: [0.0; N_CHANNELS], lowcut_hz: None, highcut_hz: None }
    }

    /// Strongly shifted chain: large per-channel gain offsets, a 250 Hz low cut
    /// and a 5 kHz high cut.
    pub fn shifted() -> Self {
        Self {
            name: "shifted".into(),
            gains_db: [9.0, -12.0, 6.0, -9.0, 10.0, -6.0],
            lowcut_hz: Some(250.0),
            highcut_hz: Some(5000.0),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "studio" => Ok(Self::studio()),
            "shifted" => Ok(Self::shifted()),
            _ => Err(invalid!("unknown interface profile '{name}' (expected studio or shifted)")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(SAMPLE_RATE) / 2.0;
        for f in [self.lowcut_hz, self.highcut_hz].into_iter().flatten() {
            if !(f > 0.0 && f < nyquist) {
                return Err(invalid!("interface cutoff {f} Hz outside (0, {nyquist})"));
            }
        }
        if self.gains_db.iter().any(|g| !g.is_finite()) {
            return Err(invalid!("interface gains must be finite"));
        }
        Ok(())
    }

    pub fn apply(&self, channel: usize, x: &mut [f64]) {
        let fs = f64::from(SAMPLE_RATE);
        if let Some(fc) = self.lowcut_hz {
            Biquad::highpass(fc, fs, BUTTERWORTH_Q).process_in_place(x);
        }
        if let Some(fc) = self.highcut_hz {
            one_pole_lowpass(x, fc);
        }
        let g = db_to_gain(self.gains_db[channel]);
        x.iter_mut().for_each(|s| *s *= g);
    }
}

fn one_pole_lowpass(x: &mut [f64], cutoff_hz: f64) {
    let a = (-2.0 * core::f64::consts::PI * cutoff_hz / f64::from(SAMPLE_RATE)).exp();
    let mut y = 0.0;
    for s in x.iter_mut() {
        y = (1.0 - a) * *s + a * y;
        *s = y;
    }
}

/// How generated hits are laid out in files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthLayout {
    /// One file per (hand part, location) combination.
    PerCombo { spacing: usize, pre_roll: usize },
    /// Every hit in a single file.
    SingleFile { spacing: usize, pre_roll: usize },
}

impl Default for SynthLayout {
    fn default() -> Self {
        SynthLayout::PerCombo { spacing: 4096, pre_roll: 1024 }
    }
}

impl SynthLayout {
    fn spacing(&self) -> usize {
        match *self {
            SynthLayout::PerCombo { spacing, .. } | SynthLayout::SingleFile { spacing, .. } => spacing,
        }
    }

    fn pre_roll(&self) -> usize {
        match *self {
            SynthLayout::PerCombo { pre_roll, .. } | SynthLayout::SingleFile { pre_roll, .. } => pre_roll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub hits_per_class: usize,
    /// 0 renders every hand part from the same distribution, 1 from fully
    /// distinct ones.
    pub separation: f64,
    pub noise_floor_db: f64,
    pub interface_profile: InterfaceProfile,
    pub exclusions: ExclusionList,
    pub layout: SynthLayout,
    /// Restricts generation to these hand parts (all when empty).
    pub hand_parts: Vec<HandPart>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hits_per_class: 20,
            separation: 1.0,
            noise_floor_db: -60.0,
            interface_profile: InterfaceProfile::studio(),
            exclusions: ExclusionList::default(),
            layout: SynthLayout::default(),
            hand_parts: Vec::new(),
        }
    }
}

/// Samples rendered per hit.
pub const HIT_LEN: usize = 3072;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.separation) {
            return Err(invalid!("separation must lie in [0, 1], got {}", self.separation));
        }
        if self.hits_per_class == 0 {
            return Err(invalid!("hits_per_class must be positive"));
        }
        if !self.noise_floor_db.is_finite() {
            return Err(invalid!("noise floor must be finite"));
        }
        if self.layout.spacing() < WINDOW_LEN {
            return Err(invalid!("hit spacing must be at least {WINDOW_LEN} samples"));
        }
        self.interface_profile.validate()
    }

    pub fn combos(&self) -> Vec<(HandPart, Location)> {
        self.exclusions
            .valid_combos()
            .into_iter()
            .filter(|(h, _)| self.hand_parts.is_empty() || self.hand_parts.contains(h))
            .collect()
    }
}

/// One generated multi-channel recording and the hits it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFile {
    pub name: String,
    /// Interleaved frames, `N_CHANNELS` samples each.
    pub frames: Vec<f32>,
    /// Onset sample and label of every hit, in time order.
    pub hits: Vec<(u64, HitLabel)>,
}

impl SynthFile {
    pub fn n_frames(&self) -> usize {
        self.frames.len() / N_CHANNELS
    }

    /// Window starting at `onset`, or an error if it would overrun the file.
    pub fn window_at(&self, onset: u64) -> Result<MultiChannelWindow> {
        let start = usize::try_from(onset).map_err(|_| invalid!("onset {onset} out of range"))?;
        if start + WINDOW_LEN > self.n_frames() {
            return Err(invalid!("window at {start} overruns {} frames", self.n_frames()));
        }
        MultiChannelWindow::from_interleaved(&self.frames[start * N_CHANNELS..(start + WINDOW_LEN) * N_CHANNELS])
    }

    pub fn examples(&self) -> Result<Vec<Example>> {
        self.hits.iter().map(|&(t, label)| Ok(Example { window: self.window_at(t)?, label })).collect()
    }
}

struct HandModel {
    f0: (f64, f64),
    ratios: [f64; 3],
    weights: [f64; 3],
    click: f64,
    tau_ms: f64,
}

fn hand_model(hand: HandPart) -> HandModel {
    match hand {
        HandPart::Heel => HandModel { f0: (60.0, 120.0), ratios: [1.0, 2.0, 3.1], weights: [1.0, 0.25, 0.05], click: 0.05, tau_ms: 14.0 },
        HandPart::Thumb => HandModel { f0: (120.0, 250.0), ratios: [1.0, 2.3, 4.1], weights: [1.0, 0.6, 0.4], click: 0.2, tau_ms: 10.0 },
        HandPart::Fingers => HandModel { f0: (300.0, 800.0), ratios: [1.0, 1.9, 3.2], weights: [1.0, 0.7, 0.5], click: 0.3, tau_ms: 7.0 },
        HandPart::Nails => HandModel { f0: (1000.0, 4000.0), ratios: [1.0, 1.6, 2.5], weights: [1.0, 0.8, 0.6], click: 1.2, tau_ms: 4.0 },
    }
}

const SHARED_MODEL: HandModel =
    HandModel { f0: (150.0, 600.0), ratios: [1.0, 2.0, 3.0], weights: [1.0, 0.5, 0.4], click: 0.3, tau_ms: 8.0 };

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn log_lerp(a: f64, b: f64, t: f64) -> f64 {
    lerp(a.ln(), b.ln(), t).exp()
}

/// Piezo positions on a nominal body plane, indexed like [`Location::ALL`].
const POSITIONS: [(f64, f64); 5] = [(0.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.2, 1.0), (1.2, -1.0)];
const PROXIMITY_FALLOFF: f64 = 0.8;
const DYNAMICS_DB: [f64; 4] = [-18.0, -12.0, -6.0, 0.0];
/// Per-partial brightness tilt, growing with dynamics.
const DYNAMICS_TILT_DB: [f64; 4] = [-9.0, -4.5, 0.0, 4.5];
const CLICK_TAU_MS: f64 = 0.6;
const BASE_AMPLITUDE: f64 = 0.8;

/// Renders the dry source signal of one hit.
fn render_source<R: Rng + ?Sized>(label: &HitLabel, separation: f64, rng: &mut R, out: &mut [f64]) {
    let m = hand_model(label.hand_part);
    let s = separation;
    let f0 = log_lerp(
        rng.random_range(SHARED_MODEL.f0.0.ln()..SHARED_MODEL.f0.1.ln()).exp(),
        rng.random_range(m.f0.0.ln()..m.f0.1.ln()).exp(),
        s,
    );
    let tau = lerp(SHARED_MODEL.tau_ms, m.tau_ms, s) * 1e-3 * f64::from(SAMPLE_RATE);
    let dyn_i = label.dynamics.index();
    let level = db_to_gain(DYNAMICS_DB[dyn_i] + rng.random_range(-1.0..1.0)) * BASE_AMPLITUDE;
    let tilt = DYNAMICS_TILT_DB[dyn_i];
    out.fill(0.0);
    let nyquist = f64::from(SAMPLE_RATE) / 2.0;
    let mut norm = 0.0;
    for k in 0..3 {
        let ratio = lerp(SHARED_MODEL.ratios[k], m.ratios[k], s);
        let weight = lerp(SHARED_MODEL.weights[k], m.weights[k], s) * db_to_gain(tilt * k as f64);
        norm += weight;
        let f = f0 * ratio;
        if f >= nyquist * 0.9 {
            continue;
        }
        let w = 2.0 * core::f64::consts::PI * f / f64::from(SAMPLE_RATE);
        let phase = rng.random_range(0.0..core::f64::consts::TAU);
        let tau_k = tau / (1.0 + 0.3 * k as f64);
        for (n, o) in out.iter_mut().enumerate() {
            let t = n as f64;
            *o += weight * (w * t + phase).sin() * (-t / tau_k).exp();
        }
    }
    let click = lerp(SHARED_MODEL.click, m.click, s) * db_to_gain(tilt);
    norm += click;
    let click_tau = CLICK_TAU_MS * 1e-3 * f64::from(SAMPLE_RATE) * if label.hand_part == HandPart::Nails { lerp(1.0, 3.0, s) } else { 1.0 };
    for (n, o) in out.iter_mut().enumerate() {
        let e: f64 = StandardNormal.sample(rng);
        *o += click * 0.5 * e * (-(n as f64) / click_tau).exp();
    }
    let g = level / norm.max(1e-9);
    out.iter_mut().for_each(|v| *v *= g);
}

/// Per-channel gains of a hit: the magnetic pickup hears every location
/// (slightly louder near the soundhole), each piezo by proximity.
fn channel_gains<R: Rng + ?Sized>(loc: Location, rng: &mut R) -> [f64; N_CHANNELS] {
    let (x0, y0) = POSITIONS[loc.index()];
    let jx: f64 = StandardNormal.sample(rng);
    let jy: f64 = StandardNormal.sample(rng);
    let (x, y) = (x0 + 0.1 * jx, y0 + 0.1 * jy);
    let mut g = [0.0; N_CHANNELS];
    g[0] = 0.5 * (-0.3 * (x * x + y * y)).exp();
    for (i, &(px, py)) in POSITIONS.iter().enumerate() {
        let d2 = (x - px) * (x - px) + (y - py) * (y - py);
        g[i + 1] = (-PROXIMITY_FALLOFF * d2).exp();
    }
    g
}

/// Labels of every hit, in generation order: combos in taxonomy order,
/// `hits_per_class` hits each, dynamics cycling p, mp, mf, f.
pub fn synth_labels(cfg: &SynthConfig) -> Vec<HitLabel> {
    let mut out = Vec::new();
    for (h, l) in cfg.combos() {
        for i in 0..cfg.hits_per_class {
            out.push(HitLabel::hit(h, l, Dynamics::ALL[i % Dynamics::ALL.len()]));
        }
    }
    out
}

/// Generates the synthetic recordings. Identical configurations give
/// identical samples.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SynthFile>> {
    cfg.validate()?;
    let labels = synth_labels(cfg);
    let per_file: Vec<(String, Vec<HitLabel>)> = match cfg.layout {
        SynthLayout::PerCombo { .. } => labels
            .chunks(cfg.hits_per_class)
            .map(|c| (format!("{}_{}.wav", c[0].hand_part, c[0].location), c.to_vec()))
            .collect(),
        SynthLayout::SingleFile { .. } => vec![("hits.wav".to_string(), labels)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spacing = cfg.layout.spacing();
    let pre = cfg.layout.pre_roll();
    let hit_len = HIT_LEN.min(spacing);
    let noise = db_to_gain(cfg.noise_floor_db);
    let mut source = vec![0.0; hit_len];
    let mut files = Vec::with_capacity(per_file.len());
    for (name, hits) in per_file {
        let n = pre + hits.len() * spacing;
        let mut chans = vec![vec![0.0f64; n]; N_CHANNELS];
        let mut placed = Vec::with_capacity(hits.len());
        for (i, label) in hits.into_iter().enumerate() {
            let onset = pre + i * spacing;
            render_source(&label, cfg.separation, &mut rng, &mut source);
            let gains = channel_gains(label.location, &mut rng);
            let mut lp = source.clone();
            one_pole_lowpass(&mut lp, 500.0);
            for (c, ch) in chans.iter_mut().enumerate() {
                let src = if c == 0 { &lp } else { &source };
                for (d, s) in ch[onset..onset + hit_len].iter_mut().zip(src) {
                    *d += gains[c] * s;
                }
            }
            placed.push((onset as u64, label));
        }
        for ch in &mut chans {
            for s in ch.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *s += noise * e;
            }
        }
        for (c, ch) in chans.iter_mut().enumerate() {
            cfg.interface_profile.apply(c, ch);
        }
        let mut frames = Vec::with_capacity(n * N_CHANNELS);
        for t in 0..n {
            for ch in &chans {
                frames.push(ch[t].clamp(-1.0, 1.0) as f32);
            }
        }
        files.push(SynthFile { name, frames, hits: placed });
    }
    Ok(files)
}

/// All generated hits as labeled windows, in generation order.
pub fn synth_examples(cfg: &SynthConfig) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for f in synth_generate(cfg)? {
        out.extend(f.examples()?);
    }
    Ok(out)
}
