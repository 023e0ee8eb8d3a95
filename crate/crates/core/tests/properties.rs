use proptest::prelude::*;

use coherseg::augment::{augment_document, AugmentConfig, DonorPool};
use coherseg::corpus::{sliding_windows, window_starts, Document, Sentence};
use coherseg::infer::{ensemble_score, merge_window_predictions, predict_by_prob, Prediction};
use coherseg::losses::{loss_cssl, loss_total, CsslReduction};
use coherseg::metrics::{pk, window_diff};
use coherseg::pairs::{build_pairs, CsslConfig};

/// Topic ids from run lengths, e.g. [2, 1] -> [0, 0, 1].
fn topics_from_runs(runs: &[usize]) -> Vec<u32> {
    runs.iter()
        .enumerate()
        .flat_map(|(t, &len)| std::iter::repeat_n(t as u32, len))
        .collect()
}

fn doc_from_runs(id: &str, runs: &[usize]) -> Document {
    let topic_of = topics_from_runs(runs);
    let sentences = (0..topic_of.len())
        .map(|i| Sentence::from_tokens([format!("{id}-w{i}"), format!("t{}", topic_of[i])]))
        .collect();
    Document::new(id, sentences, topic_of).unwrap()
}

fn runs() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 1..8)
}

fn label_pair(max_len: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1..=max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn boundary_count_is_topics_minus_one(r in runs()) {
        let doc = doc_from_runs("d", &r);
        let ones = doc.boundary_labels().iter().filter(|&&y| y == 1).count();
        prop_assert_eq!(ones, r.len() - 1);
        prop_assert_eq!(doc.boundary_labels().len(), doc.len() - 1);
    }

    #[test]
    fn windows_tile_the_document(r in runs(), max in 2usize..9) {
        let doc = doc_from_runs("d", &r);
        let windows = sliding_windows(&doc, max).unwrap();
        let starts = window_starts(doc.len(), max);
        prop_assert_eq!(windows.len(), starts.len());
        // Dropping each window's shared first sentence restores the original.
        let mut rebuilt: Vec<Sentence> = Vec::new();
        let mut labels = Vec::new();
        for (i, w) in windows.iter().enumerate() {
            prop_assert!(w.len() <= max);
            let skip = usize::from(i > 0);
            rebuilt.extend_from_slice(&w.sentences()[skip..]);
            labels.extend(w.boundary_labels());
        }
        prop_assert_eq!(rebuilt.as_slice(), doc.sentences());
        prop_assert_eq!(labels, doc.boundary_labels());
    }

    #[test]
    fn merging_window_labels_restores_document_labels(r in runs(), max in 2usize..9) {
        let doc = doc_from_runs("d", &r);
        let preds: Vec<Prediction> = sliding_windows(&doc, max)
            .unwrap()
            .iter()
            .map(|w| {
                let labels = w.boundary_labels();
                Prediction {
                    doc_id: w.doc_id().to_string(),
                    probs: labels.iter().map(|&y| f64::from(y)).collect(),
                    sims: None,
                    labels,
                    threshold: 0.5,
                }
            })
            .collect();
        let merged = merge_window_predictions(&preds, &doc).unwrap();
        prop_assert_eq!(merged.labels, doc.boundary_labels());
    }

    #[test]
    fn metrics_are_bounded_and_zero_on_identity((r, h) in label_pair(40), k_raw in 1usize..50) {
        let k = 1 + (k_raw - 1) % r.len();
        for v in [pk(&r, &h, k).unwrap(), window_diff(&r, &h, k).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(pk(&r, &r, k).unwrap(), 0.0);
        prop_assert_eq!(window_diff(&r, &r, k).unwrap(), 0.0);
    }

    #[test]
    fn raising_threshold_never_adds_boundaries(
        probs in prop::collection::vec(0.0f64..=1.0, 0..30),
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let l = predict_by_prob(&probs, lo, None);
        let h = predict_by_prob(&probs, hi, None);
        prop_assert!(l.iter().zip(&h).all(|(x, y)| y <= x));
    }

    #[test]
    fn ensemble_stays_in_unit_interval(p in 0.0f64..=1.0, s in -1e3f64..1e3) {
        let v = ensemble_score(p, s);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn pairs_are_sorted_by_distance(r in runs(), k1 in 1usize..4, k2 in 0usize..5) {
        let doc = doc_from_runs("d", &r);
        let cfg = CsslConfig { k1, k2, tau: 0.1 };
        let topic_of = doc.topic_of();
        for ps in build_pairs(&doc, &cfg) {
            prop_assert!(ps.positives.len() <= k1 && ps.negatives.len() <= k2);
            for (list, same) in [(&ps.positives, true), (&ps.negatives, false)] {
                let d: Vec<usize> = list.iter().map(|&j| j.abs_diff(ps.anchor)).collect();
                prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
                for &j in list.iter() {
                    prop_assert!(j != ps.anchor);
                    prop_assert_eq!(topic_of[j] == topic_of[ps.anchor], same);
                }
            }
            // Nothing nearer of the right kind was skipped.
            let same_avail = (0..doc.len())
                .filter(|&j| j != ps.anchor && topic_of[j] == topic_of[ps.anchor])
                .count();
            prop_assert_eq!(ps.positives.len(), k1.min(same_avail));
        }
    }

    #[test]
    fn cssl_ignores_representation_scale(
        r in runs(),
        seed in 0u64..1000,
        scale in 0.01f64..100.0,
    ) {
        let doc = doc_from_runs("d", &r);
        let pairs = build_pairs(&doc, &CsslConfig::default());
        let reps: Vec<Vec<f64>> = (0..doc.len())
            .map(|i| (0..4).map(|j| (((seed + 7 * i as u64 + j) % 11) as f64) - 4.5).collect())
            .collect();
        let scaled: Vec<Vec<f64>> = reps.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let a = loss_cssl(&reps, &pairs, 0.1, CsslReduction::Sum).unwrap().0;
        let b = loss_cssl(&scaled, &pairs, 0.1, CsslReduction::Sum).unwrap().0;
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn total_loss_is_linear_in_weights(
        ts in 0.0f64..10.0, tssp in 0.0f64..10.0, cssl in 0.0f64..10.0,
        a1 in 0.0f64..2.0, a2 in 0.0f64..2.0,
    ) {
        let t = loss_total(ts, tssp, cssl, a1, a2);
        prop_assert_eq!(loss_total(ts, tssp, cssl, 0.0, 0.0), ts);
        let parts = ts + loss_total(0.0, tssp, 0.0, a1, 0.0) + loss_total(0.0, 0.0, cssl, 0.0, a2);
        prop_assert!((t - parts).abs() < 1e-12);
    }

    #[test]
    fn no_replacement_keeps_the_sentence_multiset(r in runs(), seed in any::<u32>()) {
        let doc = doc_from_runs("host", &r);
        let other = doc_from_runs("other", &[3, 2]);
        let pool = DonorPool::new(&[doc.clone(), other]);
        let cfg = AugmentConfig { p1: 0.0, p2: 1.0, shuffle_sentences: true, seed: u64::from(seed) };
        let aug = augment_document(&doc, &pool, &cfg).unwrap();
        let mut got = aug.sentences.clone();
        let mut want = doc.sentences().to_vec();
        got.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        want.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        prop_assert_eq!(got, want);
        prop_assert_eq!(aug.tssp_labels.len(), doc.len() - 1);
    }
}
