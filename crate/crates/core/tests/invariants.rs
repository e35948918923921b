//! Property checks on the public core API.

use std::collections::BTreeMap;

use percgest_core::data::{rebalance, stratified_split, RebalanceMode, MIN_PER_CLASS};
use percgest_core::dsp::N_CHANNELS;
use percgest_core::eval::{fit_gaussian, kl_gaussian, metrics, pca_fit, ConfusionMatrix};
use percgest_core::onset::{OnsetConfig, OnsetDetector};
use proptest::prelude::*;

fn confusion() -> impl Strategy<Value = (usize, Vec<u64>)> {
    (2usize..6).prop_flat_map(|n| (Just(n), proptest::collection::vec(0u64..40, n * n)))
}

fn strata() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(MIN_PER_CLASS..40, 1..6).prop_map(|sizes| {
        let mut keys: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect();
        // Interleave so strata are not contiguous.
        keys.sort_by_key(|&k| (k * 7919) % 13);
        keys
    })
}

proptest! {
    #[test]
    fn metric_bounds_and_identities((n, counts) in confusion()) {
        let labels: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let cm = ConfusionMatrix::from_counts(&labels, counts.clone()).unwrap();
        let m = metrics(&cm);
        prop_assert_eq!(m.total, counts.iter().sum::<u64>());
        prop_assert_eq!(m.per_class.iter().map(|c| c.support).sum::<u64>(), m.total);
        for c in &m.per_class {
            for v in [c.precision, c.recall, c.f_measure] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            // The harmonic mean lies between its two arguments.
            prop_assert!(c.f_measure <= c.precision.max(c.recall) + 1e-12);
            prop_assert!(c.f_measure >= c.precision.min(c.recall) - 1e-12);
        }
        if m.total > 0 {
            prop_assert!((m.weighted_recall - m.accuracy).abs() < 1e-12);
        }
    }

    #[test]
    fn split_is_a_stratified_partition(keys in strata(), seed in any::<u64>()) {
        let s = stratified_split(&keys, 0.2, 0.2, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
        let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (i, &k) in keys.iter().enumerate() {
            let e = per.entry(k).or_default();
            e.0 += 1;
            e.1 += usize::from(s.test.binary_search(&i).is_ok());
        }
        for (count, test) in per.values() {
            let exact = *count as f64 * 0.2;
            prop_assert!(*test as f64 >= exact.floor() && *test as f64 <= exact.ceil());
        }
        prop_assert_eq!(stratified_split(&keys, 0.2, 0.2, seed).unwrap(), s);
    }

    #[test]
    fn undersampling_equalises_classes(keys in strata(), seed in any::<u64>()) {
        let kept = rebalance(&keys, RebalanceMode::Undersample, seed);
        let mut per: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &kept {
            *per.entry(keys[i]).or_default() += 1;
        }
        let min = {
            let mut all: BTreeMap<usize, usize> = BTreeMap::new();
            for &k in &keys {
                *all.entry(k).or_default() += 1;
            }
            *all.values().min().unwrap()
        };
        prop_assert!(per.values().all(|&c| c == min));
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn onsets_ignore_chunk_boundaries(
        bursts in proptest::collection::vec((0usize..3000, 0.0f32..0.5), 1..12),
        cuts in proptest::collection::vec(1usize..900, 1..20),
    ) {
        let mut frames = vec![0.0f32; 4000 * N_CHANNELS];
        for &(at, amp) in &bursts {
            for k in 0..40 {
                frames[(at + k) * N_CHANNELS + (at % N_CHANNELS)] = amp * if k % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        let cfg = OnsetConfig { refractory_ms: 5.0, ..OnsetConfig::default() };
        let whole = OnsetDetector::new(cfg).unwrap().detect(&frames).unwrap();
        let mut det = OnsetDetector::new(cfg).unwrap();
        let mut chunked = Vec::new();
        let mut rest = &frames[..];
        for &c in cuts.iter().cycle() {
            if rest.is_empty() {
                break;
            }
            let (head, tail) = rest.split_at((c * N_CHANNELS).min(rest.len()));
            det.process(head, |e| chunked.push(e)).unwrap();
            rest = tail;
        }
        prop_assert_eq!(&chunked, &whole);
        for pair in whole.windows(2) {
            prop_assert!(pair[1].sample_index - pair[0].sample_index >= cfg.refractory_samples());
        }
    }

    #[test]
    fn fitted_gaussians_have_nonnegative_divergence(
        a in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..30),
        b in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..30),
    ) {
        let fa = fit_gaussian(&a.iter().map(|&(x, y)| [x, y]).collect::<Vec<_>>()).unwrap();
        let fb = fit_gaussian(&b.iter().map(|&(x, y)| [x, y]).collect::<Vec<_>>()).unwrap();
        prop_assert!(kl_gaussian(&fa, &fb).unwrap() >= -1e-9);
        prop_assert!(kl_gaussian(&fa, &fa).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn pca_components_are_orthonormal(
        vs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 6), 4..20),
    ) {
        let basis = pca_fit(&vs).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (c0, c1) = (&basis.components[0], &basis.components[1]);
        prop_assert!((dot(c0, c0) - 1.0).abs() < 1e-9 && (dot(c1, c1) - 1.0).abs() < 1e-9);
        prop_assert!(dot(c0, c1).abs() < 1e-9);
        prop_assert!(basis.explained_variance[0] >= basis.explained_variance[1] - 1e-12);
        // The mean projects to the origin.
        let p = basis.project(&basis.mean).unwrap();
        prop_assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
    }
}
