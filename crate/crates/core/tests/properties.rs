//! Property tests for data formats, the Match_m metric and ensembling.

use emph_core::data::{parse_dataset, write_dataset, Instance, PosTag, Token, ANNOTATORS};
use emph_core::ensemble::ensemble_average;
use emph_core::eval::{evaluate, match_m, top_m_set};
use emph_core::predictions::{format_score, quantize, PredictionSet};
use emph_core::vocab::build_vocab;
use emph_tensor::RngStream;
use proptest::prelude::*;

mod support;

use support::metric::{brute_match, random_rows, random_rows_like, to_set};

#[test]
fn metric_matches_brute_force_on_a_thousand_instances() {
    let gold = random_rows(1000, 1, "gold");
    let pred = random_rows_like(&gold, 2, "pred");
    let report = evaluate(&to_set(&gold), &to_set(&pred)).unwrap();
    for m in 1..=4 {
        assert_eq!(report.match_at(m), brute_match(&gold, &pred, m), "m={m}");
    }
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(0u32..=20, 1..=12), 1..20)
}

fn paired_rows() -> impl Strategy<Value = (Vec<Vec<u32>>, Vec<Vec<u32>>)> {
    rows_strategy().prop_flat_map(|gold| {
        let pred = gold
            .iter()
            .map(|g| prop::collection::vec(0u32..=20, g.len()))
            .collect::<Vec<_>>();
        (Just(gold), pred)
    })
}

proptest! {
    #[test]
    fn oracle_agreement_with_frequent_ties((gold, pred) in paired_rows()) {
        let g: Vec<Vec<u32>> = gold.iter().map(|r| r.iter().map(|x| x * 50_000).collect()).collect();
        let p: Vec<Vec<u32>> = pred.iter().map(|r| r.iter().map(|x| x * 50_000).collect()).collect();
        for m in 1..=4 {
            let got = match_m(&to_set(&g), &to_set(&p), m).unwrap();
            prop_assert_eq!(got, brute_match(&g, &p, m));
            prop_assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn strictly_increasing_transforms_leave_scores_unchanged((gold, pred) in paired_rows()) {
        let g: Vec<Vec<u32>> = gold.iter().map(|r| r.iter().map(|x| x * 20_000).collect()).collect();
        let p: Vec<Vec<u32>> = pred.iter().map(|r| r.iter().map(|x| x * 20_000).collect()).collect();
        let doubled: Vec<Vec<u32>> = p.iter().map(|r| r.iter().map(|x| 2 * x).collect()).collect();
        let shifted: Vec<Vec<u32>> = p.iter().map(|r| r.iter().map(|x| x + 500_000).collect()).collect();
        let base = evaluate(&to_set(&g), &to_set(&p)).unwrap();
        prop_assert_eq!(base, evaluate(&to_set(&g), &to_set(&doubled)).unwrap());
        prop_assert_eq!(base, evaluate(&to_set(&g), &to_set(&shifted)).unwrap());
    }

    #[test]
    fn identical_ranking_scores_one((gold, _pred) in paired_rows()) {
        let g: Vec<Vec<u32>> = gold.iter().map(|r| r.iter().map(|x| x * 10_000).collect()).collect();
        let p: Vec<Vec<u32>> = g.iter().map(|r| r.iter().map(|x| x / 2 + 1000).collect()).collect();
        let r = evaluate(&to_set(&g), &to_set(&p)).unwrap();
        prop_assert_eq!(r.mean, 1.0);
        prop_assert_eq!(r.mean, (r.matches[0] + r.matches[1] + r.matches[2] + r.matches[3]) / 4.0);
    }

    #[test]
    fn instance_order_is_irrelevant((gold, pred) in paired_rows(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..gold.len()).collect();
        RngStream::new(seed, "order").shuffle(&mut order);
        let build = |rows: &[Vec<u32>], order: &[usize]| {
            let mut set = PredictionSet::new();
            for &i in order {
                let s: Vec<f64> = rows[i].iter().map(|&m| m as f64 / 100.0).collect();
                set.insert(format!("x{i}"), &s).unwrap();
            }
            set
        };
        let natural: Vec<usize> = (0..gold.len()).collect();
        let a = evaluate(&build(&gold, &natural), &build(&pred, &natural)).unwrap();
        let b = evaluate(&build(&gold, &order), &build(&pred, &order)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn top_m_agrees_with_a_stable_sort(scores in prop::collection::vec(0u32..10, 1..15), m in 1usize..6) {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].cmp(&scores[a]));
        let mut want: Vec<usize> = idx.into_iter().take(m).collect();
        want.sort_unstable();
        prop_assert_eq!(top_m_set(&scores, m).unwrap(), want);
    }
}

fn token_strategy() -> impl Strategy<Value = Token> {
    let surface = "[A-Za-z0-9!?.,'é#<>&-]{1,8}";
    let pos = 0usize..17;
    let ann = prop_oneof![
        prop::array::uniform9(any::<bool>()).prop_map(Some),
        (0u32..=1000).prop_map(|_| None),
    ];
    (surface, pos, ann, 0u32..=1000).prop_map(|(s, p, a, q)| match a {
        Some(flags) => Token::with_annotations(s, PosTag::ALL[p], flags),
        None => Token::with_prob(s, PosTag::ALL[p], q as f64 / 1000.0),
    })
}

fn dataset_strategy() -> impl Strategy<Value = Vec<Instance>> {
    prop::collection::vec(prop::collection::vec(token_strategy(), 1..8), 1..6).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, tokens)| Instance {
                id: format!("id{i}"),
                tokens,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn canonical_form_is_idempotent(data in dataset_strategy()) {
        let text = write_dataset(&data);
        let parsed = parse_dataset(&text).unwrap();
        prop_assert_eq!(&parsed, &data);
        prop_assert_eq!(write_dataset(&parsed), text);
    }

    #[test]
    fn flipping_flags_moves_gold_mass_by_ninths(
        flags in prop::collection::vec(prop::array::uniform9(any::<bool>()), 1..6),
        picks in prop::collection::vec((0usize..6, 0usize..ANNOTATORS), 0..10),
    ) {
        let make = |f: &[[bool; 9]]| -> f64 {
            f.iter().map(|a| Token::with_annotations("w", PosTag::X, *a).gold_prob).sum()
        };
        let mut flipped = flags.clone();
        let mut k = 0;
        for (t, a) in picks {
            let t = t % flags.len();
            if !flipped[t][a] {
                flipped[t][a] = true;
                k += 1;
            }
        }
        prop_assert!((make(&flipped) - make(&flags) - k as f64 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn vocab_indices_are_dense_and_reproducible(data in dataset_strategy(), min_freq in 1usize..3) {
        let v = build_vocab(&data, min_freq).unwrap();
        prop_assert_eq!(&v, &build_vocab(&data, min_freq).unwrap());
        for (i, w) in v.words.entries().iter().enumerate().skip(2) {
            prop_assert_eq!(v.word(w), i);
        }
        let distinct: std::collections::HashSet<&str> = v.words.entries()[2..].iter().map(String::as_str).collect();
        prop_assert_eq!(distinct.len(), v.words.len() - 2);
    }

    #[test]
    fn prediction_files_round_trip(rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 1..10), 1..8)) {
        let mut set = PredictionSet::new();
        for (i, r) in rows.iter().enumerate() {
            set.insert(format!("s{i}"), r).unwrap();
        }
        let back = PredictionSet::from_tsv(&set.to_tsv()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let want: Vec<String> = r.iter().map(|&x| format_score(quantize(x).unwrap())).collect();
            let got: Vec<String> = back.micros(&format!("s{i}")).unwrap().iter().map(|&m| format_score(m)).collect();
            prop_assert_eq!(got, want);
        }
        prop_assert_eq!(back, set);
    }

    #[test]
    fn ensemble_is_order_free_and_idempotent(
        rows in prop::collection::vec(prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 2), 1..5),
        seed in any::<u64>(),
    ) {
        let sets: Vec<PredictionSet> = rows
            .iter()
            .map(|member| {
                let mut s = PredictionSet::new();
                for (i, r) in member.iter().enumerate() {
                    s.insert(format!("i{i}"), r).unwrap();
                }
                s
            })
            .collect();
        let mut shuffled = sets.clone();
        RngStream::new(seed, "members").shuffle(&mut shuffled);
        let avg = ensemble_average(&sets).unwrap();
        prop_assert_eq!(&avg, &ensemble_average(&shuffled).unwrap());
        prop_assert_eq!(ensemble_average(&[sets[0].clone(), sets[0].clone()]).unwrap(), sets[0].clone());
        for (_, v) in avg.iter() {
            prop_assert!(v.iter().all(|&m| m <= 1_000_000));
        }
    }
}
