//! Dataset-level evaluation and embedding analysis of a trained bundle.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use percgest_core::data::{ClassScheme, Example, ExclusionList, Facet, HandPart, HitLabel};
use percgest_core::dsp::FeatureExtractor;
use percgest_core::eval::{kl_matrix, EmbeddingSet};
use percgest_core::models::{ModelBundle, Network, Target};
use percgest_core::train::{evaluate, extract_features};

use crate::error::{Error, Result};
use crate::manifest::{load_dataset, Strictness};
use crate::report::{dataset_hash, HeadReport, KlSection, MetricsSection, Report, ReportMeta, SCHEMA_VERSION};

/// Which hits enter a KL analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Subset {
    #[default]
    All,
    Kick,
    NonKick,
    HandPart(HandPart),
}

impl Subset {
    pub fn keeps(&self, l: &HitLabel) -> bool {
        match self {
            Subset::All => true,
            Subset::Kick => l.is_kick(),
            Subset::NonKick => !l.is_kick(),
            Subset::HandPart(h) => l.hand_part == *h,
        }
    }

    pub fn name(&self) -> Option<String> {
        match self {
            Subset::All => None,
            Subset::Kick => Some("kick".into()),
            Subset::NonKick => Some("non_kick".into()),
            Subset::HandPart(h) => Some(h.as_str().into()),
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Subset::All),
            "kick" => Ok(Subset::Kick),
            "non_kick" => Ok(Subset::NonKick),
            other => other
                .parse::<HandPart>()
                .map(Subset::HandPart)
                .map_err(|_| Error::Usage(format!("unknown subset '{other}' (all, kick, non_kick or a hand part)"))),
        }
    }
}

/// Classification metrics of `bundle` on labeled examples.
pub fn evaluate_examples(bundle: &ModelBundle, examples: &[Example]) -> Result<MetricsSection> {
    let net = Network::from_bundle(bundle)?;
    let scheme = ClassScheme::for_head(bundle.head.n_cl, bundle.head.n_loc)?;
    let mut fx = FeatureExtractor::new(bundle.features.config)?;
    let x = extract_features(&mut fx, examples.iter().map(|e| &e.window))?;
    let targets: Vec<Target> = examples.iter().map(|e| scheme.target(&e.label)).collect();
    let e = evaluate(&net, &x, &targets, &scheme.class_labels())?;
    Ok(MetricsSection { classes: HeadReport::new(&e.classes), locations: e.locations.as_ref().map(HeadReport::new) })
}

/// 2-D embedding of every example (bottleneck, latent mean, or PCA of the dense layer).
pub fn embed_examples(bundle: &ModelBundle, examples: &[Example]) -> Result<EmbeddingSet> {
    let net = Network::from_bundle(bundle)?;
    let mut ws = net.workspace();
    let mut fx = FeatureExtractor::new(bundle.features.config)?;
    let mut features = vec![0.0; fx.output_len()];
    let mut set = EmbeddingSet::new(bundle.architecture, bundle.embedding_mode());
    for e in examples {
        fx.extract_into(&e.window, &mut features)?;
        let p = net.forward_classify(&features, &mut ws)?;
        let xy = p
            .embedding
            .ok_or_else(|| Error::Usage(format!("{} bundle has no 2-D projection", bundle.architecture)))?;
        set.push(xy, e.label)?;
    }
    Ok(set)
}

fn meta(bundle: &ModelBundle, bundle_hash: &str, examples: &[Example], source: &str) -> ReportMeta {
    ReportMeta {
        bundle_hash: bundle_hash.to_string(),
        dataset_hash: dataset_hash(examples),
        seed: bundle.training.as_ref().map(|t| t.seed),
        architecture: bundle.architecture.to_string(),
        source: source.to_string(),
    }
}

pub fn eval_report(bundle: &ModelBundle, bundle_hash: &str, examples: &[Example], source: &str) -> Result<Report> {
    let metrics = if examples.is_empty() { None } else { Some(evaluate_examples(bundle, examples)?) };
    Ok(Report { schema_version: SCHEMA_VERSION, metrics, kl: None, meta: meta(bundle, bundle_hash, examples, source) })
}

/// Embeddings plus the KL matrix of `facet` over the hits kept by `subset`.
pub fn embed_report(
    bundle: &ModelBundle,
    bundle_hash: &str,
    examples: &[Example],
    facet: Facet,
    subset: Subset,
    source: &str,
) -> Result<(Report, EmbeddingSet)> {
    let set = embed_examples(bundle, examples)?;
    let kept = set.filter(|l| subset.keeps(l));
    let kl = if kept.is_empty() { None } else { Some(KlSection::new(&kl_matrix(&kept, facet)?, subset.name().as_deref())) };
    let report = Report { schema_version: SCHEMA_VERSION, metrics: None, kl, meta: meta(bundle, bundle_hash, examples, source) };
    Ok((report, set))
}

/// Evaluates `bundle` on each manifest independently; one failure does not stop the others.
pub fn cross_dataset_eval(
    bundle: &ModelBundle,
    bundle_hash: &str,
    manifests: &[PathBuf],
    strictness: Strictness,
    exclusions: &ExclusionList,
) -> Vec<(PathBuf, Result<Report>)> {
    manifests
        .iter()
        .map(|m| {
            let r = load_dataset(m, strictness, exclusions).and_then(|ex| eval_report(bundle, bundle_hash, &ex, &display(m)));
            if let Err(e) = &r {
                log::error!("{}: {e}", m.display());
            }
            (m.clone(), r)
        })
        .collect()
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
