mod common;

use proptest::prelude::*;
use sdprior::corpus::{synthetic, RelevanceConfig, TagsetCorpus};
use sdprior::nn::Dropout;
use sdprior::rng;
use sdprior::tensor::{gradcheck, Graph, ParamStore};
use sdprior::text::{
    mnr_loss, mnr_loss_value, pretrain, PretrainConfig, PretrainedText, TextEncoder, TextEncoderConfig,
};
use sdprior::{Error, TagSet};

fn tiny_cfg() -> TextEncoderConfig {
    TextEncoderConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        max_len: 12,
        d_out: 6,
        dropout: 0.0,
        scale: 20.0,
    }
}

fn random_seqs(vocab: usize, count: usize, max_len: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::Rng as _;
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let len = r.random_range(1..=max_len);
            (0..len).map(|_| r.random_range(0..vocab)).collect()
        })
        .collect()
}

/// Shakes the parameters away from their init so layer norms and biases are
/// not trivially at identity.
fn perturb(store: &mut ParamStore, seed: u64) {
    use rand_distr::{Distribution, Normal};
    let mut r = rng::seeded(seed);
    let n = Normal::new(0.0, 0.3).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += n.sample(&mut r);
        }
    }
}

#[test]
fn forward_matches_straight_line_oracle() {
    let cfg = TextEncoderConfig {
        layers: 2,
        ..tiny_cfg()
    };
    let mut store = ParamStore::new();
    let enc = TextEncoder::new(&mut store, "t", &cfg, 30, &mut rng::seeded(3)).unwrap();
    perturb(&mut store, 4);
    let seqs = random_seqs(30, 5, cfg.max_len, 5);
    let mut g = Graph::new();
    let out = enc.forward(&mut g, &store, &seqs, &mut Dropout::Off).unwrap();
    for (i, s) in seqs.iter().enumerate() {
        let got = &g.value(out)[i * cfg.d_out..(i + 1) * cfg.d_out];
        let want = common::text_embedding(&store, "t", s, cfg.layers, cfg.heads);
        assert!(common::max_abs_diff(got, &want) < 1e-12, "sequence {i}");
    }
}

#[test]
fn mnr_gradient_matches_finite_differences() {
    let cfg = tiny_cfg();
    let mut store = ParamStore::new();
    let enc = TextEncoder::new(&mut store, "t", &cfg, 40, &mut rng::seeded(7)).unwrap();
    perturb(&mut store, 8);
    let seqs = random_seqs(40, 6, 6, 9);
    let report = gradcheck::check(&mut store, 1e-5, |g, s| {
        let e = enc.forward(g, s, &seqs, &mut Dropout::Off)?;
        let a = g.gather_rows(e, &[0, 1, 2])?;
        let p = g.gather_rows(e, &[3, 4, 5])?;
        mnr_loss(g, a, p, 2.0)
    })
    .unwrap();
    assert_eq!(report.params.len(), store.len());
    let worst = report.worst().unwrap();
    assert!(report.max_rel_error() < 1e-4, "{worst:?}");
}

#[test]
fn mnr_orthonormal_pair_closed_form() {
    let rows = vec![vec![0.6, 0.8, 0.0], vec![-0.8, 0.6, 0.0]];
    let l = mnr_loss_value(&rows, &rows, 1.0).unwrap();
    assert!((l - 0.313_261_687_518_222_8).abs() < 1e-9, "{l}");
}

#[test]
fn mnr_rejects_unnormalized_inputs() {
    let a = vec![vec![1.0, 0.0], vec![0.0, 1.0 + 1e-5]];
    assert!(matches!(mnr_loss_value(&a, &a, 20.0), Err(Error::Contract(_))));
}

fn unit_rows(b: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), b)
        .prop_filter("non-degenerate", |rows| {
            rows.iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        })
        .prop_map(|rows| rows.iter().map(|r| common::normalize(r)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mnr_is_invariant_to_batch_order(
        (a, p) in (2usize..6).prop_flat_map(|b| (unit_rows(b, 4), unit_rows(b, 4))),
        rot in 0usize..6,
    ) {
        let b = a.len();
        let perm: Vec<usize> = (0..b).map(|i| (i + rot) % b).collect();
        let pa: Vec<Vec<f64>> = perm.iter().map(|&i| a[i].clone()).collect();
        let pp: Vec<Vec<f64>> = perm.iter().map(|&i| p[i].clone()).collect();
        let l0 = mnr_loss_value(&a, &p, 20.0).unwrap();
        let l1 = mnr_loss_value(&pa, &pp, 20.0).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-12);
    }

    #[test]
    fn mnr_matches_direct_cross_entropy((a, p) in (1usize..6).prop_flat_map(|b| (unit_rows(b, 3), unit_rows(b, 3)))) {
        let b = a.len();
        let mut want = 0.0;
        for i in 0..b {
            let s: Vec<f64> = (0..b).map(|j| 20.0 * a[i].iter().zip(&p[j]).map(|(x, y)| x * y).sum::<f64>()).collect();
            let lse = s.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - s[i];
        }
        want /= b as f64;
        let got = mnr_loss_value(&a, &p, 20.0).unwrap();
        prop_assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
    }
}

fn small_corpus() -> (Vec<Vec<TagSet>>, TagsetCorpus) {
    let groups = synthetic::grouped(24, 3, 11);
    let corpus = TagsetCorpus::build(groups.iter().flatten(), &RelevanceConfig::builtin());
    (groups, corpus)
}

fn small_pretrain_cfg() -> PretrainConfig {
    PretrainConfig {
        encoder: TextEncoderConfig {
            layers: 1,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            max_len: 32,
            d_out: 16,
            dropout: 0.1,
            scale: 20.0,
        },
        epochs: 3,
        batch_size: 16,
        pairs_per_tagset: 4,
        rel_tag_cl: true,
        lr: 3e-3,
        vocab_size: 200,
        seed: 5,
    }
}

#[test]
fn embeddings_are_unit_norm_deterministic_and_order_invariant() {
    let (groups, corpus) = small_corpus();
    let model = PretrainedText::init(&corpus, &small_pretrain_cfg()).unwrap();
    let t = &groups[0][0];
    let reversed = TagSet::from_pairs(t.iter().collect::<Vec<_>>().into_iter().rev()).unwrap();
    let e = model
        .encoder
        .embed_tagsets(&model.store, &model.vocab, &[t.clone(), reversed, TagSet::new()])
        .unwrap();
    for row in &e {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
    assert_eq!(e[0], e[1]);
    let again = model
        .encoder
        .embed_tagsets(&model.store, &model.vocab, std::slice::from_ref(t))
        .unwrap();
    assert_eq!(again[0], e[0]);
}

#[test]
fn oversized_sequences_are_rejected() {
    let cfg = tiny_cfg();
    let mut store = ParamStore::new();
    let enc = TextEncoder::new(&mut store, "t", &cfg, 10, &mut rng::seeded(1)).unwrap();
    let mut g = Graph::new();
    let err = enc
        .forward(&mut g, &store, &[vec![2; cfg.max_len + 1]], &mut Dropout::Off)
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn pretraining_reduces_loss_and_is_bitwise_reproducible() {
    let (_, corpus) = small_corpus();
    let cfg = small_pretrain_cfg();
    let a = pretrain(&corpus, &cfg).unwrap();
    let losses = a.epoch_mean_losses();
    assert_eq!(losses.len(), cfg.epochs);
    assert!(losses[cfg.epochs - 1] < losses[0], "{losses:?}");
    let b = pretrain(&corpus, &cfg).unwrap();
    assert_eq!(
        sdprior::tensor::checkpoint::encode_store(&a.store),
        sdprior::tensor::checkpoint::encode_store(&b.store)
    );
    let la: Vec<f64> = a.log.iter().map(|s| s.loss).collect();
    let lb: Vec<f64> = b.log.iter().map(|s| s.loss).collect();
    assert_eq!(la, lb);
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let (_, corpus) = small_corpus();
    let cfg = PretrainConfig {
        lr: 0.0,
        epochs: 1,
        ..small_pretrain_cfg()
    };
    let init = PretrainedText::init(&corpus, &cfg).unwrap();
    let trained = pretrain(&corpus, &cfg).unwrap();
    assert!(!trained.log.is_empty());
    for id in init.store.ids() {
        assert_eq!(
            init.store.get(id).data(),
            trained.store.get(id).data(),
            "{}",
            init.store.name(id)
        );
    }
}

#[test]
fn pretraining_needs_two_relevant_subsets() {
    let one = vec![TagSet::from_pairs([("highway", "primary"), ("name", "a")]).unwrap()];
    let corpus = TagsetCorpus::build(&one, &RelevanceConfig::builtin());
    assert!(matches!(
        pretrain(&corpus, &small_pretrain_cfg()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn save_and_load_round_trip() {
    let (groups, corpus) = small_corpus();
    let cfg = PretrainConfig {
        epochs: 1,
        ..small_pretrain_cfg()
    };
    let model = pretrain(&corpus, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = PretrainedText::load(dir.path()).unwrap();
    assert_eq!(back.vocab, model.vocab);
    let probe: Vec<TagSet> = groups.iter().map(|g| g[0].clone()).collect();
    assert_eq!(
        model.encoder.embed_tagsets(&model.store, &model.vocab, &probe).unwrap(),
        back.encoder.embed_tagsets(&back.store, &back.vocab, &probe).unwrap()
    );
}

#[test]
fn embedding_dump_layout_and_round_trip() {
    use sdprior::text::EmbeddingDump;
    let tagsets = vec![TagSet::from_pairs([("highway", "primary")]).unwrap(), TagSet::new()];
    let rows = vec![vec![1.0, -0.5, 0.25], vec![0.0, 2.0, f64::MIN_POSITIVE]];
    let dump = EmbeddingDump::new(tagsets, rows.clone()).unwrap();
    let bytes = dump.to_bytes();
    assert_eq!(&bytes[..4], b"SDEM");
    assert_eq!(bytes[4..8], [2, 0, 0, 0]);
    assert_eq!(bytes[8..12], [3, 0, 0, 0]);
    assert_eq!(bytes.len(), 12 + 6 * 8);
    assert_eq!(bytes[12..20], 1.0f64.to_le_bytes());
    assert_eq!(bytes[20..28], (-0.5f64).to_le_bytes());
    let sidecar = dump.sidecar();
    assert_eq!(
        sidecar.lines().next().unwrap(),
        r#"{"row":0,"tags":[["highway","primary"]]}"#
    );
    assert_eq!(EmbeddingDump::from_parts(&bytes, &sidecar).unwrap(), dump);
    assert!(matches!(
        EmbeddingDump::from_parts(&bytes[..30], &sidecar),
        Err(Error::Parse { .. })
    ));
    assert!(matches!(
        EmbeddingDump::from_parts(b"XXXX", &sidecar),
        Err(Error::Parse { .. })
    ));
    let one_line = sidecar.lines().next().unwrap();
    assert!(matches!(
        EmbeddingDump::from_parts(&bytes, one_line),
        Err(Error::Data(_))
    ));
    assert!(EmbeddingDump::new(vec![TagSet::new()], rows).is_err());
}
