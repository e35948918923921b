use std::fs;

use percgest::analysis::{cross_dataset_eval, embed_report, eval_report, evaluate_examples, Subset};
use percgest::bench::{bench, summarize, BenchReport};
use percgest::core::data::{synth_examples, ExclusionList, Facet, HandPart, SynthConfig};
use percgest::core::models::{build_model, ArchitectureId, HeadConfig, ModelBundle};
use percgest::core::train::{train, TrainConfig};
use percgest::manifest::Strictness;
use percgest::report::{dataset_hash, percent, points_csv, Report, POINTS_HEADER, SCHEMA_VERSION};
use percgest::synth::write_synth;

fn trained(head: HeadConfig) -> ModelBundle {
    let ex = synth_examples(&SynthConfig { hits_per_class: 6, seed: 11, ..SynthConfig::default() }).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 32, ..TrainConfig::default() };
    train(ArchitectureId::PercCnn, head, &ex, &cfg, "h", |_| {}).unwrap().bundle
}

#[test]
fn percent_rounds_to_two_decimals() {
    assert_eq!(percent(0.987_65), 98.77);
    assert_eq!(percent(1.0), 100.0);
    assert_eq!(percent(0.0), 0.0);
}

#[test]
fn report_round_trips_and_is_reproducible() {
    let b = trained(HeadConfig::HIERARCHICAL);
    let ex = synth_examples(&SynthConfig { hits_per_class: 2, seed: 3, ..SynthConfig::default() }).unwrap();
    let a = eval_report(&b, "bh", &ex, "src").unwrap();
    let again = eval_report(&b, "bh", &ex, "src").unwrap();
    assert_eq!(a.to_json().unwrap(), again.to_json().unwrap());
    let m = a.metrics.as_ref().unwrap();
    assert_eq!(m.classes.total, ex.len() as u64);
    assert_eq!(m.classes.per_class.len(), 4);
    assert_eq!(m.locations.as_ref().unwrap().per_class.len(), 5);
    assert_eq!(a.meta.dataset_hash, dataset_hash(&ex));
    assert_eq!(a.meta.seed, Some(0));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    a.write(&p).unwrap();
    assert_eq!(Report::read(&p).unwrap(), a);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
    assert_eq!(v["schema_version"], SCHEMA_VERSION);
    assert!(v["metrics"]["classes"]["weighted_f"].is_number());
}

#[test]
fn empty_dataset_gives_an_empty_report() {
    let b = build_model(ArchitectureId::PercCnn, HeadConfig::TWO_CLASS, 0).unwrap();
    let r = eval_report(&b, "bh", &[], "nothing").unwrap();
    assert!(r.metrics.is_none() && r.kl.is_none());
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert!(v["metrics"].is_null());
    let (r, set) = embed_report(&b, "bh", &[], Facet::Dynamics, Subset::All, "nothing").unwrap();
    assert!(r.kl.is_none() && set.is_empty());
    assert_eq!(points_csv(&set), format!("{POINTS_HEADER}\n"));
}

#[test]
fn report_with_another_schema_is_rejected() {
    let b = build_model(ArchitectureId::PercCnn, HeadConfig::TWO_CLASS, 0).unwrap();
    let mut r = eval_report(&b, "bh", &[], "x").unwrap();
    r.schema_version = 99;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    r.write(&p).unwrap();
    assert!(Report::read(&p).is_err());
}

#[test]
fn single_class_data_reports_recall_only() {
    let b = trained(HeadConfig::TWO_CLASS);
    let heel = synth_examples(&SynthConfig { hits_per_class: 3, hand_parts: vec![HandPart::Heel], ..SynthConfig::default() }).unwrap();
    let m = evaluate_examples(&b, &heel).unwrap();
    assert!(m.classes.recall_only);
    assert!(m.classes.table().contains("Recall"));
    assert_eq!(m.classes.per_class[0].support, heel.len() as u64);
    assert_eq!(m.classes.per_class[1].support, 0);
}

#[test]
fn embedding_points_and_kl_section() {
    let b = trained(HeadConfig::TWO_CLASS);
    let ex = synth_examples(&SynthConfig { hits_per_class: 8, seed: 5, ..SynthConfig::default() }).unwrap();
    let (r, set) = embed_report(&b, "bh", &ex, Facet::Dynamics, Subset::NonKick, "src").unwrap();
    assert_eq!(set.len(), ex.len());
    let csv = points_csv(&set);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(POINTS_HEADER));
    assert_eq!(lines.count(), ex.len());
    let kl = r.kl.unwrap();
    assert_eq!(kl.subset.as_deref(), Some("non_kick"));
    assert_eq!(kl.labels, ["p", "mp", "mf", "f"]);
    let non_kick = ex.iter().filter(|e| !e.label.is_kick()).count();
    assert_eq!(kl.counts.iter().sum::<usize>(), non_kick);
    for (i, row) in kl.matrix.iter().enumerate() {
        assert_eq!(row[i], Some(0.0));
        assert!(row.iter().all(|v| v.unwrap() >= 0.0));
    }
}

#[test]
fn subsets_parse() {
    assert_eq!("all".parse::<Subset>().unwrap(), Subset::All);
    assert_eq!("non_kick".parse::<Subset>().unwrap(), Subset::NonKick);
    assert_eq!("thumb".parse::<Subset>().unwrap(), Subset::HandPart(HandPart::Thumb));
    assert!("elbow".parse::<Subset>().is_err());
}

#[test]
fn cross_dataset_evaluations_are_isolated() {
    let b = trained(HeadConfig::TWO_CLASS);
    let dir = tempfile::tempdir().unwrap();
    let good = write_synth(&SynthConfig { hits_per_class: 2, ..SynthConfig::default() }, &dir.path().join("a")).unwrap().manifest;
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"audio\": 3}\n").unwrap();
    let missing = dir.path().join("missing.jsonl");
    let list = vec![good.clone(), bad, missing, good.clone()];
    let results = cross_dataset_eval(&b, "bh", &list, Strictness::Strict, &ExclusionList::default());
    assert_eq!(results.len(), 4);
    assert!(results[1].1.is_err() && results[2].1.is_err());
    let first = results[0].1.as_ref().unwrap();
    let last = results[3].1.as_ref().unwrap();
    assert_eq!(first.to_json().unwrap(), last.to_json().unwrap());
    // Same as evaluating the manifest alone.
    let alone = cross_dataset_eval(&b, "bh", &[good], Strictness::Strict, &ExclusionList::default());
    assert_eq!(alone[0].1.as_ref().unwrap(), first);
}

#[test]
fn summary_statistics() {
    assert_eq!(summarize(&[7.0]), (7.0, 0.0, 7.0));
    let (mean, std, p99) = summarize(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(mean, 2.5);
    assert!((std - 1.25f64.sqrt()).abs() < 1e-12);
    assert_eq!(p99, 4.0);
    let d: Vec<f64> = (1..=1000).map(f64::from).collect();
    assert_eq!(summarize(&d).2, 990.0);
}

#[test]
fn bench_reports_every_architecture() {
    let mut reports = Vec::new();
    for arch in [ArchitectureId::PercCnn, ArchitectureId::PercVae, ArchitectureId::TablaCnn] {
        let b = build_model(arch, HeadConfig::TWO_CLASS, 0).unwrap();
        let r = bench(&b, 1, false, 0).unwrap();
        assert_eq!(r.std_us, 0.0);
        assert_eq!(r.n_calls, 1);
        let r = bench(&b, 50, true, 0).unwrap();
        assert!(r.mean_us > 0.0 && r.p99_us > 0.0 && r.std_us.is_finite());
        assert!(r.include_features);
        reports.push(r);
    }
    let table = BenchReport::table(&reports);
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Network", "(us)", "Avg", "Std", "Dev"]);
    assert_eq!(lines.count(), 3);
    assert!(bench(&build_model(ArchitectureId::PercCnn, HeadConfig::TWO_CLASS, 0).unwrap(), 0, false, 0).is_err());
}
