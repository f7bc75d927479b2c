use complex_rank::agents::{Agent, AgentDims, AgentKind, AgentManifest, DrmAgent, Exploration, GruAgent};
use complex_rank::dataset::{
    format_letor_line, parse_letor_line, synthesize_dataset, Dataset, Document, Query, SyntheticConfig,
};
use complex_rank::eval::{brute_force_ideal, evaluate_policy, ideal_serp_reward, p_ndcg, OraclePolicy};
use complex_rank::mdp::{Bias, DisplayOrder, Environment, GainFunction, GainVariant, RewardLevel};
use complex_rank::neural::{gru_forward, CandidateInput, GruParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn query_from(labels: &[u8]) -> Query {
    Query {
        id: "p".into(),
        candidates: labels
            .iter()
            .enumerate()
            .map(|(i, &relevance)| Document {
                features: vec![i as f64 / 8.0, f64::from(relevance)],
                relevance,
            })
            .collect(),
    }
}

fn order_strategy(k: usize) -> impl Strategy<Value = DisplayOrder> {
    Just((1..=k).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|v| DisplayOrder::new(v).unwrap())
}

fn variant() -> impl Strategy<Value = GainVariant> {
    prop_oneof![Just(GainVariant::PaperLiteral), Just(GainVariant::StandardDcg)]
}

proptest! {
    #[test]
    fn ideal_matches_brute_force(
        (labels, order) in (1usize..=4).prop_flat_map(|k| {
            (prop::collection::vec(0u8..=4, k..=8), order_strategy(k))
        }),
        v in variant(),
    ) {
        let gf = GainFunction::new(v, 4);
        let k = order.k();
        let q = query_from(&labels);
        let fast = ideal_serp_reward(&q, &order, &gf, k).unwrap();
        let slow = brute_force_ideal(&q, &order, &gf, k).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0));
    }

    #[test]
    fn p_ndcg_of_any_serp_is_a_fraction(
        (labels, order, seed) in (1usize..=5).prop_flat_map(|k| {
            (prop::collection::vec(1u8..=4, k..=9), order_strategy(k), any::<u64>())
        }),
    ) {
        let k = order.k();
        let env = Environment::new(order, GainFunction::new(GainVariant::PaperLiteral, 4), RewardLevel::Document);
        let q = query_from(&labels);
        let m = AgentManifest {
            kind: AgentKind::Drm,
            k,
            feature_count: 2,
            dims: AgentDims { embed: 3, hidden: 4, head: 3 },
            gru_candidate_input: CandidateInput::Conventional,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DrmAgent::init(&m, &mut rng).unwrap();
        let ep = a.rollout(&q, Exploration::uniform(1.0), &mut rng, &env).unwrap();
        let ideal = ideal_serp_reward(&q, &env.order, &env.gain, k).unwrap();
        let v = p_ndcg(ep.total_reward, ideal).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
    }

    #[test]
    fn letor_lines_round_trip(
        qid in "[a-z0-9]{1,8}",
        rel in 0u8..=4,
        features in prop::collection::vec(prop_oneof![Just(0.0), -1e3f64..1e3], 1..12),
    ) {
        let line = format_letor_line(&qid, rel, &features);
        let parsed = parse_letor_line(&line, features.len()).unwrap();
        prop_assert_eq!(parsed.query_id, qid);
        prop_assert_eq!(parsed.relevance, rel);
        prop_assert_eq!(parsed.features, features);
    }
}

fn small_dataset(k: usize) -> Dataset {
    synthesize_dataset(
        &SyntheticConfig {
            train_queries: 20,
            valid_queries: 10,
            test_queries: 40,
            docs_per_query: 9,
            ..SyntheticConfig::default()
        },
        k,
    )
    .unwrap()
}

#[test]
fn untrained_agents_sit_between_zero_and_oracle() {
    let k = 5;
    let ds = small_dataset(k);
    for bias in [Bias::First, Bias::Center, Bias::Last] {
        let env = Environment::new(
            bias.order(k).unwrap(),
            GainFunction::new(GainVariant::PaperLiteral, 4),
            RewardLevel::Document,
        );
        let oracle = evaluate_policy(&OraclePolicy, &ds.test, &env).unwrap();
        assert!((oracle.mean_p_ndcg - 1.0).abs() < 1e-12);
        for kind in [AgentKind::Gru, AgentKind::Drm] {
            let m = AgentManifest {
                kind,
                k,
                feature_count: ds.feature_count,
                dims: AgentDims::default(),
                gru_candidate_input: CandidateInput::Conventional,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let r = match kind {
                AgentKind::Gru => evaluate_policy(&GruAgent::init(&m, &mut rng).unwrap(), &ds.test, &env),
                AgentKind::Drm => evaluate_policy(&DrmAgent::init(&m, &mut rng).unwrap(), &ds.test, &env),
            }
            .unwrap();
            assert!(r.mean_p_ndcg > 0.0 && r.mean_p_ndcg < oracle.mean_p_ndcg, "{kind:?} {bias:?}");
        }
    }
}

#[test]
fn histograms_average_the_shown_labels() {
    let k = 4;
    let ds = small_dataset(k);
    let env = Environment::new(
        Bias::Center.order(k).unwrap(),
        GainFunction::new(GainVariant::PaperLiteral, 4),
        RewardLevel::Document,
    );
    let m = AgentManifest {
        kind: AgentKind::Drm,
        k,
        feature_count: ds.feature_count,
        dims: AgentDims::default(),
        gru_candidate_input: CandidateInput::Conventional,
    };
    let a = DrmAgent::init(&m, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let r = evaluate_policy(&a, &ds.test, &env).unwrap();
    // both series see the same k documents per query, in a different order
    let sp: f64 = r.per_position.iter().sum();
    let st: f64 = r.per_timestep.iter().sum();
    assert!((sp - st).abs() < 1e-9);
    let mut expected = 0.0;
    for q in &ds.test {
        let ep = a.greedy_episode(q, &env).unwrap();
        expected += ep.serp().iter().map(|&d| f64::from(q.candidates[d].relevance)).sum::<f64>();
    }
    assert!((sp - expected / ds.test.len() as f64).abs() < 1e-9);
}

#[test]
fn cache_round_trip() {
    let ds = small_dataset(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    ds.save_cache(&path).unwrap();
    assert_eq!(Dataset::load_cache(&path).unwrap(), ds);
}

#[test]
fn printed_candidate_with_zero_biases_never_leaves_the_origin() {
    // with h0 = 0 the candidate term only sees the state, so the hidden state
    // stays at zero whatever the input
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = GruParams::init(6, 8, CandidateInput::AsPrinted, &mut rng);
    let mut h = vec![0.0; 8];
    for t in 0..20 {
        let x: Vec<f64> = (0..6).map(|i| ((t * 6 + i) as f64).sin() * 3.0).collect();
        h = gru_forward(&p, &h, &x).unwrap().0;
        assert!(h.iter().all(|&v| v == 0.0));
    }
    let c = GruParams::init(6, 8, CandidateInput::Conventional, &mut rng);
    let (moved, _) = gru_forward(&c, &[0.0; 8], &[1.0; 6]).unwrap();
    assert!(moved.iter().any(|&v| v != 0.0));
}
