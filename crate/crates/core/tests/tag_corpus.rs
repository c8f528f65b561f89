use proptest::prelude::*;
use sdprior::corpus::{make_batches, sample_positive_pairs, RelevanceConfig, TagsetCorpus};
use sdprior::TagSet;

fn cfg() -> RelevanceConfig {
    RelevanceConfig::parse("name\nnote\ntiger:*\naddr:*\n").unwrap()
}

fn tagset() -> impl Strategy<Value = TagSet> {
    let key = prop::sample::select(vec![
        "highway",
        "lanes",
        "oneway",
        "name",
        "note",
        "tiger:cfcc",
        "tiger:county",
        "addr:city",
        "surface",
    ]);
    let val = prop::sample::select(vec!["a", "b", "c", "yes", "no", "2"]);
    prop::collection::btree_map(key, val, 0..6).prop_map(|m| TagSet::from_pairs(m).unwrap())
}

proptest! {
    #[test]
    fn relevant_subset_is_idempotent(t in tagset()) {
        let c = cfg();
        let once = c.relevant_subset(&t);
        prop_assert_eq!(c.relevant_subset(&once), once.clone());
        prop_assert!(once.iter().all(|(k, _)| !c.is_irrelevant(k)));
    }

    #[test]
    fn relevant_subset_ignores_input_order(t in tagset(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut pairs: Vec<(String, String)> = t.pairs().to_vec();
        pairs.shuffle(&mut sdprior::rng::seeded(seed));
        let shuffled = TagSet::from_pairs(pairs).unwrap();
        prop_assert_eq!(cfg().relevant_subset(&shuffled), cfg().relevant_subset(&t));
    }

    #[test]
    fn buckets_partition_the_corpus(sets in prop::collection::vec(tagset(), 100)) {
        let corpus = TagsetCorpus::build(&sets, &cfg());
        let total: usize = corpus.index.values().map(Vec::len).sum();
        prop_assert_eq!(total, corpus.len());
        let mut seen = vec![0; corpus.len()];
        for (key, members) in &corpus.index {
            for &i in members {
                seen[i] += 1;
                prop_assert_eq!(&cfg().relevant_subset(&corpus.entries[i]), key);
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn pairs_share_their_relevant_subset(sets in prop::collection::vec(tagset(), 1..40), seed in any::<u64>()) {
        let corpus = TagsetCorpus::build(&sets, &cfg());
        prop_assume!(!corpus.is_empty());
        for p in sample_positive_pairs(&corpus, 5, true, seed).unwrap() {
            prop_assert_eq!(cfg().relevant_subset(&p.anchor), cfg().relevant_subset(&p.positive));
        }
        for p in sample_positive_pairs(&corpus, 2, false, seed).unwrap() {
            prop_assert_eq!(&p.anchor, &p.positive);
            prop_assert_eq!(cfg().relevant_subset(&p.anchor), p.anchor.clone());
        }
    }
}

/// Synthetic corpus with `n` relevant subsets and a few irrelevant variants each.
fn synthetic(n: usize) -> Vec<TagSet> {
    let mut out = Vec::new();
    for i in 0..n {
        for v in 0..3 {
            let mut t = TagSet::from_pairs([("highway", format!("h{}", i % 17)), ("ref", format!("r{i}"))]).unwrap();
            t.insert("name", format!("street {i}-{v}"));
            if v == 2 {
                t.insert("tiger:cfcc", "A41");
            }
            out.push(t);
        }
    }
    out
}

#[test]
fn ten_thousand_pairs_satisfy_the_negative_invariant() {
    let c = cfg();
    let corpus = TagsetCorpus::build(&synthetic(500), &c);
    assert_eq!(corpus.bucket_count(), 500);
    let pairs = sample_positive_pairs(&corpus, 20, true, 7).unwrap();
    assert_eq!(pairs.len(), 10_000);
    let batches = make_batches(&pairs, 512, 7).unwrap();
    let packed: usize = batches.iter().map(|b| b.len()).sum();
    assert!(packed >= 9_990, "packed {packed}");
    for b in &batches {
        assert!(b.len() <= 512);
        assert!(b.check(&c));
    }
}

#[test]
fn batching_is_reproducible() {
    let c = cfg();
    let corpus = TagsetCorpus::build(&synthetic(60), &c);
    let run = |seed| {
        let pairs = sample_positive_pairs(&corpus, 20, true, seed).unwrap();
        make_batches(&pairs, 32, seed).unwrap()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn corpus_jsonl_round_trip() {
    let c = cfg();
    let corpus = TagsetCorpus::build(&synthetic(10), &c);
    let text = corpus.to_jsonl();
    assert_eq!(TagsetCorpus::from_jsonl(&text, &c).unwrap(), corpus);
}
