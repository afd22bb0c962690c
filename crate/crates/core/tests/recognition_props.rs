use ites_core::recognition::{extract_object_name, train, tokenize, Corpus, Recognizer};
use ites_core::TaskLabel;
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "pick", "up", "the", "cup", "bring", "it", "to", "table", "place", "put", "down", "open", "door", "wipe", "plate",
    "pour", "water", "hold", "cut", "bread", "grab", "release", "let", "go", "fridge", "sponge",
];

const CLASSES: &[TaskLabel] = &[TaskLabel::Grasp, TaskLabel::Ptg11, TaskLabel::Ptg12, TaskLabel::Stg2, TaskLabel::Release];

fn sentence() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(WORDS), 1..7)
}

fn corpus() -> impl Strategy<Value = Vec<(Vec<&'static str>, TaskLabel)>> {
    prop::collection::vec((sentence(), prop::sample::select(CLASSES)), 2..30)
}

fn build(entries: &[(Vec<&str>, TaskLabel)]) -> Corpus {
    Corpus::new(entries.iter().map(|(w, l)| (w.join(" "), *l)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scores_sum_to_one_and_agree_with_label(entries in corpus(), query in sentence(), alpha in 0.1f64..2.0) {
        let model = train(&build(&entries), alpha).unwrap();
        let p = model.predict(&query.join(" ")).unwrap();
        let total: f64 = p.scores.iter().map(|(_, s)| s).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let best = p.scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(p.score(p.label), Some(best));
    }

    #[test]
    fn token_order_does_not_matter(entries in corpus(), query in sentence(), seed in any::<u64>()) {
        let model = train(&build(&entries), 1.0).unwrap();
        let mut shuffled = query.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize).wrapping_mul(i + 7) % (i + 1));
        }
        prop_assert_eq!(model.predict(&query.join(" ")).unwrap(), model.predict(&shuffled.join(" ")).unwrap());
    }

    #[test]
    fn duplicated_corpus_keeps_argmax(entries in corpus(), query in sentence(), copies in 2usize..4, alpha in 0.1f64..2.0) {
        let once = train(&build(&entries), alpha).unwrap();
        let mut many = Vec::new();
        for _ in 0..copies {
            many.extend(entries.iter().cloned());
        }
        // Counts and the smoothing pseudo-count scale together.
        let dup = train(&build(&many), alpha * copies as f64).unwrap();
        let text = query.join(" ");
        let a = once.predict(&text).unwrap();
        let b = dup.predict(&text).unwrap();
        for ((la, sa), (lb, sb)) in a.scores.iter().zip(&b.scores) {
            prop_assert_eq!(la, lb);
            prop_assert!((sa - sb).abs() < 1e-9);
        }
        let ranked = a.ranked();
        if ranked.len() < 2 || ranked[0].1 > ranked[1].1 + 1e-9 {
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn renaming_classes_permutes_scores(entries in corpus(), query in sentence(), rot in 1usize..5) {
        let rename = |l: TaskLabel| {
            let i = CLASSES.iter().position(|c| *c == l).unwrap();
            CLASSES[(i + rot) % CLASSES.len()]
        };
        let renamed: Vec<_> = entries.iter().map(|(w, l)| (w.clone(), rename(*l))).collect();
        let a = train(&build(&entries), 1.0).unwrap().predict(&query.join(" ")).unwrap();
        let b = train(&build(&renamed), 1.0).unwrap().predict(&query.join(" ")).unwrap();
        for (label, score) in &a.scores {
            let other = b.score(rename(*label)).unwrap();
            prop_assert!((score - other).abs() < 1e-12, "{} {} {}", label, score, other);
        }
        let ranked = a.ranked();
        if ranked.len() < 2 || ranked[0].1 > ranked[1].1 + 1e-9 {
            prop_assert_eq!(rename(a.label), b.label);
        }
    }

    #[test]
    fn object_names_come_from_vocabulary(text in prop::collection::vec(prop::sample::select(WORDS), 0..10), vocab in prop::collection::vec(prop::collection::vec(prop::sample::select(WORDS), 1..3), 0..6)) {
        let vocab: Vec<String> = vocab.iter().map(|v| v.join(" ")).collect();
        if let Some(name) = extract_object_name(&text.join(" "), &vocab) {
            prop_assert!(vocab.contains(&name));
            let t = tokenize(&text.join(" "));
            let n = tokenize(&name);
            prop_assert!(t.windows(n.len()).any(|w| w == n.as_slice()));
        }
    }
}
