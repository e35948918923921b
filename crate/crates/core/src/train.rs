//! Mini-batch training with online augmentation, and evaluation helpers.
//!
//! All randomness (split, initialisation, shuffling, augmentation, latent
//! noise) derives from one seed, and examples are reduced in a fixed order,
//! so a run is bitwise reproducible.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{augment_in_place, rebalance, stratified_split, AugmentPolicy, ClassScheme, Example, Location, RebalanceMode, SplitIndices};
use crate::dsp::{FeatureExtractor, MultiChannelWindow};
use crate::error::invalid;
use crate::eval::{pca_fit, ConfusionMatrix};
use crate::models::{build_model_with, ArchOptions, ArchitectureId, HeadConfig, LossBreakdown, ModelBundle, Network, Target, TrainingMeta, VaeLossConfig, N_EMB};
use crate::nn::AdamConfig;
use crate::nn::AdamState;
use crate::{Error, Result};

/// Which held-out split picks the saved epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Best validation accuracy.
    Val,
    /// Best test accuracy.
    #[serde(alias = "paper")]
    Test,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::Val => "val",
            Selection::Test => "test",
        }
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" => Ok(Selection::Val),
            "test" | "paper" => Ok(Selection::Test),
            _ => Err(invalid!("unknown selection '{s}' (expected val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub vae: VaeLossConfig,
    pub augment: AugmentPolicy,
    pub selection: Selection,
    pub test_frac: f64,
    pub val_frac: f64,
    pub rebalance: RebalanceMode,
    /// Standardise inputs with the mean and deviation of the training features.
    pub normalize: bool,
    pub options: ArchOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            seed: 0,
            adam: AdamConfig::default(),
            vae: VaeLossConfig::default(),
            augment: AugmentPolicy::full(),
            selection: Selection::Val,
            test_frac: 0.2,
            val_frac: 0.2,
            rebalance: RebalanceMode::None,
            normalize: true,
            options: ArchOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid!("epochs and batch size must be positive"));
        }
        self.augment.validate()?;
        self.vae.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: LossBreakdown,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub test_accuracy: f64,
    pub selected: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub split: SplitIndices,
    pub history: Vec<EpochStats>,
}

/// Features of a set of windows, stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub len: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        if self.len == 0 {
            0
        } else {
            self.values.len() / self.len
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.len..(i + 1) * self.len]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.len.max(1))
    }
}

pub fn extract_features<'a>(
    extractor: &mut FeatureExtractor,
    windows: impl IntoIterator<Item = &'a MultiChannelWindow>,
) -> Result<FeatureMatrix> {
    let len = extractor.output_len();
    let mut values = Vec::new();
    let mut row = vec![0.0; len];
    for w in windows {
        extractor.extract_into(w, &mut row)?;
        values.extend_from_slice(&row);
    }
    Ok(FeatureMatrix { len, values })
}

/// Mean and population deviation over every feature value.
pub fn feature_stats(features: &FeatureMatrix) -> (f64, f64) {
    let n = features.values.len().max(1) as f64;
    let mean = features.values.iter().sum::<f64>() / n;
    let var = features.values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Class (and location) confusion matrices of a network over labeled features.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub classes: ConfusionMatrix,
    pub locations: Option<ConfusionMatrix>,
    pub mean_loss: f64,
}

pub fn evaluate(net: &Network, features: &FeatureMatrix, targets: &[Target], class_labels: &[&str]) -> Result<Evaluation> {
    if features.rows() != targets.len() {
        return Err(invalid!("{} feature rows for {} targets", features.rows(), targets.len()));
    }
    let mut ws = net.workspace();
    let mut classes = ConfusionMatrix::new(class_labels)?;
    let loc_names: Vec<&str> = Location::ALL.iter().map(|l| l.as_str()).collect();
    let mut locations = if net.head().is_hierarchical() { Some(ConfusionMatrix::new(&loc_names)?) } else { None };
    let mut loss = 0.0;
    for (x, t) in features.iter().zip(targets) {
        let p = net.forward_classify(x, &mut ws)?;
        classes.add(t.class, p.class())?;
        loss -= p.class_probs()[t.class].max(crate::nn::PROB_CLAMP).ln();
        if let (Some(cm), Some(lt), Some(lp)) = (locations.as_mut(), t.location, p.location()) {
            cm.add(lt, lp)?;
        }
    }
    let mean_loss = if targets.is_empty() { 0.0 } else { loss / targets.len() as f64 };
    Ok(Evaluation { classes, locations, mean_loss })
}

fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    (0..cm.n_classes()).map(|c| cm.get(c, c)).sum::<u64>() as f64 / total as f64
}

/// Stream derived from the run seed for a given purpose.
fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_TRAIN: u64 = 1;

/// Trains `arch` with `head` on `examples` and returns the selected bundle.
pub fn train(
    arch: ArchitectureId,
    head: HeadConfig,
    examples: &[Example],
    cfg: &TrainConfig,
    dataset_hash: &str,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    head.validate_for(arch)?;
    let scheme = ClassScheme::for_head(head.n_cl, head.n_loc)?;
    let keys: Vec<usize> = examples.iter().map(|e| scheme.strata_key(&e.label)).collect();
    let split = stratified_split(&keys, cfg.test_frac, cfg.val_frac, cfg.seed)?;
    let train_idx: Vec<usize> = {
        let class_keys: Vec<usize> = split.train.iter().map(|&i| scheme.class_of(&examples[i].label)).collect();
        rebalance(&class_keys, cfg.rebalance, cfg.seed).into_iter().map(|k| split.train[k]).collect()
    };
    let target = |i: &usize| scheme.target(&examples[*i].label);
    let train_targets: Vec<Target> = train_idx.iter().map(target).collect();
    let val_targets: Vec<Target> = split.val.iter().map(target).collect();
    let test_targets: Vec<Target> = split.test.iter().map(target).collect();

    let mut bundle = build_model_with(arch, head, cfg.options, cfg.seed)?;
    let mut extractor = FeatureExtractor::new(bundle.features.config)?;
    let clean_train = extract_features(&mut extractor, train_idx.iter().map(|&i| &examples[i].window))?;
    let val_x = extract_features(&mut extractor, split.val.iter().map(|&i| &examples[i].window))?;
    let test_x = extract_features(&mut extractor, split.test.iter().map(|&i| &examples[i].window))?;
    if cfg.normalize {
        let (offset, scale) = feature_stats(&clean_train);
        bundle.features.offset = offset;
        bundle.features.scale = scale;
    }
    let mut net = Network::from_bundle(&bundle)?;
    // Runtime parameters start from the rounded values stored in the bundle.
    let mut adam = AdamState::new(net.params().len(), cfg.adam);
    let mut grads = vec![0.0; net.params().len()];
    let mut ws = net.workspace();
    let mut rng = sub_rng(cfg.seed, STREAM_TRAIN);
    let labels = scheme.class_labels();
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut window = MultiChannelWindow::zeroed();
    let mut feat = vec![0.0; extractor.output_len()];
    let mut best: Option<(f64, f64, usize, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let use_noise = arch == ArchitectureId::PercVae;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &k in batch {
                let x: &[f64] = if cfg.augment.is_empty() {
                    clean_train.row(k)
                } else {
                    window.clone_from(&examples[train_idx[k]].window);
                    augment_in_place(&mut window, &cfg.augment, &mut rng)?;
                    extractor.extract_into(&window, &mut feat)?;
                    &feat
                };
                let noise = use_noise.then(|| {
                    let mut n = [0.0; N_EMB];
                    n.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                    n
                });
                let l = net
                    .sample_loss(x, &train_targets[k], noise, &cfg.vae, &mut ws, Some((&mut grads, scale)))
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
                        other => other,
                    })?;
                accumulate(&mut epoch_loss, &l, 1.0 / train_idx.len() as f64);
            }
            adam.step(net.params_mut(), &grads)?;
            if let Some(i) = net.params().iter().position(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("epoch {epoch}: parameter {i} became non-finite")));
            }
        }
        let val = evaluate(&net, &val_x, &val_targets, &labels)?;
        let test = evaluate(&net, &test_x, &test_targets, &labels)?;
        let (sel_acc, sel_loss) = match cfg.selection {
            Selection::Val => (accuracy(&val.classes), val.mean_loss),
            Selection::Test => (accuracy(&test.classes), test.mean_loss),
        };
        let improved = best.as_ref().map_or(true, |(a, l, _, _)| sel_acc > *a || (sel_acc == *a && sel_loss < *l));
        if improved {
            best = Some((sel_acc, sel_loss, epoch, net.params().to_vec()));
        }
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss,
            val_accuracy: accuracy(&val.classes),
            val_loss: val.mean_loss,
            test_accuracy: accuracy(&test.classes),
            selected: improved,
        };
        progress(&stats);
        history.push(stats);
    }

    let (sel_acc, _, sel_epoch, params) = best.expect("at least one epoch");
    net.params_mut().copy_from_slice(&params);
    if arch == ArchitectureId::TablaCnn {
        let mut acts = Vec::with_capacity(clean_train.rows());
        for x in clean_train.iter() {
            net.forward_classify(x, &mut ws)?;
            acts.push(net.embedding_activation(&ws).to_vec());
        }
        net.set_projection(Some(pca_fit(&acts)?));
    }
    net.export_params(&mut bundle);
    bundle.training = Some(TrainingMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.adam.lr,
        selection: cfg.selection.as_str().to_string(),
        selected_epoch: sel_epoch,
        selection_accuracy: sel_acc,
        dataset_hash: dataset_hash.to_string(),
        augmentation: cfg.augment.describe(),
        vae: use_noise.then_some(cfg.vae),
    });
    Ok(TrainOutcome { bundle, split, history })
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown, w: f64) {
    acc.total += w * l.total;
    acc.classification += w * l.classification;
    for (a, b) in [(&mut acc.location, l.location), (&mut acc.mse, l.mse), (&mut acc.kld, l.kld)] {
        if let Some(b) = b {
            *a = Some(a.unwrap_or(0.0) + w * b);
        }
    }
}

/// Labels of a scheme's classes, owned.
pub fn class_labels(scheme: ClassScheme) -> Vec<String> {
    scheme.class_labels().into_iter().map(String::from).collect()
}
