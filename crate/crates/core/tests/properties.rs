use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};
use proptest::strategy::Strategy as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xal_core::bundled;
use xal_core::corpus::{bin_tertiles, Corpus, ItemVector};
use xal_core::explain::{explain_item, Effect};
use xal_core::kmedoids::{fit, proportional_draw, DrawMode};
use xal_core::labelspread::{gate_pseudo_labels, spread, SpreadParams};
use xal_core::prefmodel::PreferenceModel;
use xal_core::sampler::{least_confidence, margin_score, normalized_entropy, select, test_sample, SelectParams, Strategy};
use xal_core::session::{Answer, PoolContext, Session, SessionConfig, Status};
use xal_core::similarity::{affinity, jaccard};
use xal_core::synthuser::{bundled_taxonomy, bundled_templates, generate_profile};

fn items_from(seed: u64, n: usize, dim: usize, max_bits: usize) -> Vec<ItemVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=max_bits);
            ItemVector::new(format!("i{i}"), (0..k).map(|_| rng.gen_range(0..dim)).collect::<Vec<_>>(), dim).unwrap()
        })
        .collect()
}

fn binary() -> impl proptest::strategy::Strategy<Value = [f64; 2]> {
    (0.0f64..=1.0).prop_map(|p| [p, 1.0 - p])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_metrics_rank_identically(a in binary(), b in binary()) {
        let lc = least_confidence(&a).unwrap().total_cmp(&least_confidence(&b).unwrap());
        let ms = margin_score(&a).unwrap().total_cmp(&margin_score(&b).unwrap());
        let h = normalized_entropy(&a).unwrap().total_cmp(&normalized_entropy(&b).unwrap());
        // the two linear scores are equal; entropy is monotone in them
        prop_assert!((least_confidence(&a).unwrap() - margin_score(&a).unwrap()).abs() < 1e-12);
        if (least_confidence(&a).unwrap() - least_confidence(&b).unwrap()).abs() > 1e-9 {
            prop_assert_eq!(lc, ms);
            prop_assert_eq!(lc, h);
        }
    }

    #[test]
    fn jaccard_is_a_metric(seed in any::<u64>()) {
        let v = items_from(seed, 3, 12, 5);
        let d = |a: &ItemVector, b: &ItemVector| 1.0 - jaccard(a, b).unwrap();
        prop_assert_eq!(jaccard(&v[0], &v[0]).unwrap(), 1.0);
        prop_assert_eq!(jaccard(&v[0], &v[1]).unwrap(), jaccard(&v[1], &v[0]).unwrap());
        prop_assert!(d(&v[0], &v[2]) <= d(&v[0], &v[1]) + d(&v[1], &v[2]) + 1e-12);
    }

    #[test]
    fn tertiles_scale_invariant(values in prop::collection::vec(0.01f64..1e4, 1..60), c in 0.001f64..1000.0) {
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let a = bin_tertiles(&values).unwrap();
        let b = bin_tertiles(&scaled).unwrap();
        // equal up to ties broken differently by rounding in the log shift
        let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        let mut logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        logs.sort_by(f64::total_cmp);
        let near_ties = logs.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-9);
        prop_assert!(diff == 0 || near_ties);
    }

    #[test]
    fn kmedoids_descends_monotonically(seed in any::<u64>(), k in 1usize..8) {
        let items = items_from(seed, 25, 30, 6);
        let refs: Vec<&ItemVector> = items.iter().collect();
        let a = affinity(&refs).unwrap();
        let c = fit(&a, k, seed).unwrap();
        for w in c.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", c.trace);
        }
        prop_assert!((c.trace.last().unwrap() - c.objective()).abs() < 1e-9);
        prop_assert_eq!(c.sizes().iter().sum::<usize>(), 25);
        prop_assert!(c.sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn proportional_draw_is_duplicate_free(seed in any::<u64>(), m in 1usize..25) {
        let items = items_from(seed, 25, 30, 6);
        let refs: Vec<&ItemVector> = items.iter().collect();
        let c = fit(&affinity(&refs).unwrap(), 4, seed).unwrap();
        for mode in [DrawMode::Centroid, DrawMode::Mixed, DrawMode::Random] {
            let d = proportional_draw(&c, m, mode, seed).unwrap();
            prop_assert_eq!(d.len(), m);
            prop_assert_eq!(d.iter().collect::<HashSet<_>>().len(), m);
        }
    }

    #[test]
    fn selection_stays_in_pool(seed in any::<u64>(), m in 1usize..10, labeled in 0usize..15) {
        let n = 40;
        let items = items_from(seed, n, 30, 6);
        let refs: Vec<&ItemVector> = items.iter().collect();
        let c = fit(&affinity(&refs).unwrap(), 6, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let taken: HashSet<usize> = rand::seq::index::sample(&mut rng, n, labeled).into_iter().collect();
        let pool: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
        for s in Strategy::ALL {
            let got = select(s, &pool, &scores, Some(&c), m, seed, &SelectParams::default()).unwrap();
            prop_assert_eq!(got.len(), m, "{}", s);
            prop_assert_eq!(got.iter().collect::<HashSet<_>>().len(), m, "{} duplicates", s);
            prop_assert!(got.iter().all(|i| !taken.contains(i)), "{} returned a labeled item", s);
        }
    }

    #[test]
    fn test_sample_respects_similarity_cap(seed in any::<u64>(), m in 1usize..12) {
        let n = 60;
        let items = items_from(seed, n, 80, 5);
        let refs: Vec<&ItemVector> = items.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let pool: Vec<usize> = (0..n).collect();
        let t = test_sample(&pool, &refs, &scores, m, 0.25);
        prop_assert_eq!(t.indices.len(), m);
        prop_assert_eq!(t.indices.iter().collect::<HashSet<_>>().len(), m);
        if !t.relaxed {
            for (x, &a) in t.indices.iter().enumerate() {
                for &b in &t.indices[x + 1..] {
                    prop_assert!(jaccard(&items[a], &items[b]).unwrap() <= 0.25);
                }
            }
        }
    }

    #[test]
    fn spreading_converges(seed in any::<u64>(), nl in 1usize..6) {
        let n = 30;
        let items = items_from(seed, n, 20, 5);
        let refs: Vec<&ItemVector> = items.iter().collect();
        let a = affinity(&refs).unwrap();
        let labels: Vec<(usize, u8)> = (0..nl).map(|i| (i * 5, (i % 2) as u8)).collect();
        let soft = spread(&a, &labels, &SpreadParams::default()).unwrap();
        prop_assert!(soft.converged);
        for w in soft.residuals.windows(2).skip(2) {
            prop_assert!(w[1] <= w[0] + 1e-15, "{:?}", soft.residuals);
        }
        for p in &soft.probs {
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        }
        for &(i, l) in &labels {
            prop_assert_eq!((soft.probs[i][1] > soft.probs[i][0]) as u8, l);
        }
        let labeled: HashSet<usize> = labels.iter().map(|&(i, _)| i).collect();
        let gated = gate_pseudo_labels(&soft, &labeled, 0.6);
        for e in &gated.entries {
            prop_assert!(!labeled.contains(&e.index));
            prop_assert!(normalized_entropy(&e.probs).unwrap() < 0.6);
        }
    }

    #[test]
    fn masked_bits_never_change_predictions(seed in any::<u64>()) {
        let dim = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = PreferenceModel::zero(dim);
        model.intercept = rng.gen_range(-1.0..1.0);
        model.mask = (0..dim).filter(|_| rng.gen_bool(0.3)).collect();
        model.coefficients = (0..dim)
            .map(|d| if model.mask.contains(&d) { 0.0 } else { rng.gen_range(-2.0..2.0) })
            .collect();
        let x = &items_from(seed, 1, dim, 8)[0];
        let base = model.predict_proba(x).unwrap();
        for &m in &model.mask {
            let toggled: Vec<usize> = if x.contains(m) {
                x.dims().filter(|&d| d != m).collect()
            } else {
                x.dims().chain([m]).collect()
            };
            if toggled.is_empty() {
                continue;
            }
            let y = ItemVector::new("t", toggled, dim).unwrap();
            prop_assert_eq!(model.predict_proba(&y).unwrap(), base);
            prop_assert_eq!(explain_item(&model, &y, 1e-3).unwrap().effect(m).is_none_or(|e| e == Effect::Ineffective), true);
        }
    }
}

fn sub_corpus(seed: u64, n: usize) -> Corpus {
    let full = bundled::simulation_corpus().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, full.len(), n);
    Corpus::from_feature_sets(picks.into_iter().map(|i| {
        let x = full.item(i);
        (x.id.clone(), full.decode(x).into_iter().map(String::from).collect())
    }))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_feedback_covers_every_feature(seed in any::<u64>(), t in 0usize..10) {
        let corpus = sub_corpus(seed, 40);
        let profile = generate_profile(&bundled_templates()[t], &bundled_taxonomy(), &corpus.universe, seed).unwrap();
        for x in &corpus.items {
            let f = profile.answer_feedback(x);
            prop_assert!(f.validate(x).is_ok());
            prop_assert_eq!(f.assignments.keys().copied().collect::<Vec<_>>(), x.dims().collect::<Vec<_>>());
            prop_assert!(profile.true_explanation(x).is_partition_of(x));
        }
    }

    #[test]
    fn session_partitions_hold_throughout(seed in any::<u64>(), s in 0usize..6, feedback in any::<bool>(), per_item in any::<bool>()) {
        let corpus = Arc::new(sub_corpus(seed, 90));
        let config = SessionConfig {
            u_prime_size: 200,
            step2_clusters: 6,
            initial_sample: 12,
            elicitation_epochs: 2,
            recommendation_batch: 3,
            recommendation_epochs: 2,
            strategy: Strategy::ALL[s],
            feature_feedback: feedback,
            update_granularity: if per_item {
                xal_core::session::UpdateGranularity::PerItem
            } else {
                xal_core::session::UpdateGranularity::PerBatch
            },
            seed,
            ..SessionConfig::default()
        };
        let profile = generate_profile(&bundled_templates()[(seed % 10) as usize], &bundled_taxonomy(), &corpus.universe, seed).unwrap();
        let ctx = Arc::new(PoolContext::build(corpus.clone(), &config).unwrap());
        let mut session = Session::start(ctx, config).unwrap();
        let initial: Vec<(String, u8)> = session
            .pending()
            .iter()
            .map(|&i| (corpus.item(i).id.clone(), profile.answer_label(corpus.item(i))))
            .collect();
        session.submit_initial_labels(&initial).unwrap();
        session.check_invariants().unwrap();
        while session.status() == Status::AwaitingFeedback {
            let answers: Vec<Answer> = session
                .pending()
                .iter()
                .map(|&i| {
                    let x = corpus.item(i);
                    Answer {
                        item_id: x.id.clone(),
                        label: profile.answer_label(x),
                        feedback: feedback.then(|| profile.answer_feedback(x)),
                    }
                })
                .collect();
            let chunk = if per_item { 1 } else { answers.len() };
            session.submit_feedback(&answers[..chunk]).unwrap();
            session.check_invariants().unwrap();
            let parts = session.partitions();
            prop_assert!(parts.check().is_ok());
            let model = session.model().unwrap();
            for &d in &session.ledger().masked {
                prop_assert_eq!(model.coefficient(d), 0.0);
                prop_assert!(session.synthetic().iter().all(|x| x.dim != d));
            }
        }
        prop_assert!(matches!(session.status(), Status::Finished | Status::Exhausted));
    }
}
