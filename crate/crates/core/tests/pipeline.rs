use creator_game::bounds::poa_upper_bound;
use creator_game::dynamics::{
    estimate_regrets, pota, run_dynamics, DynamicsConfig, Exp3Config,
};
use creator_game::equilibrium::{
    max_welfare_brs, max_welfare_exact, max_welfare_sa, poa, verify_pure_ne, AnnealingConfig, SolveOptions,
    DEFAULT_ENUMERATION_BUDGET,
};
use creator_game::instances::{
    gen_dataset1, gen_dataset2, synthetic_embedding, write_vector_csv, EmbeddingSource, Family, InstanceSpec,
};
use creator_game::{Error, Evaluator, GameInstance, Metric};

#[test]
fn instance_json_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let g = gen_dataset2(3, 30, 0.4, 0.2, 2, 5).unwrap();
    let path = dir.path().join("g.json");
    g.save(&path).unwrap();
    let back = GameInstance::load(&path).unwrap();
    assert_eq!(g, back);
    let profile = [0, 1, 2];
    assert_eq!(Evaluator::new(&g).welfare(&profile), Evaluator::new(&back).welfare(&profile));
}

#[test]
fn out_of_range_scores_are_rejected_on_load() {
    let text = r#"{"beta": 0.1, "k": 1, "metric": "engagement",
        "users": [{"id": 0, "weight": 1.0}],
        "players": [{"actions": [{"sigma": [1.5]}]}]}"#;
    assert!(matches!(GameInstance::from_json_str(text), Err(Error::InvalidInput(_))));
}

#[test]
fn spec_builds_every_synthetic_family() {
    let spec = |family, delta| InstanceSpec {
        family,
        n: 4,
        m: 40,
        beta: 0.1,
        k: 2,
        delta,
        metric: None,
        embedding: None,
        seed: 3,
    };
    assert_eq!(spec(Family::Dataset1, None).build().unwrap().instance.n_players(), 4);
    assert!(spec(Family::Dataset2, None).build().is_err());
    assert_eq!(spec(Family::Dataset2, Some(0.3)).build().unwrap().instance.players()[0].len(), 5);
    assert_eq!(spec(Family::Thm2LowerBound, None).build().unwrap().instance.n_players(), 4);
    let p = spec(Family::Prop1Exposure, None).build().unwrap();
    assert_eq!(p.instance.metric(), Metric::Exposure);
}

#[test]
fn embedding_files_feed_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let emb = synthetic_embedding(30, 80, 8, 0.1, 4).unwrap();
    let users = dir.path().join("users.csv");
    let items = dir.path().join("items.csv");
    write_vector_csv(&users, &emb.users).unwrap();
    write_vector_csv(&items, &emb.items).unwrap();
    let spec = InstanceSpec {
        family: Family::Embedding,
        n: 3,
        m: 0,
        beta: 0.1,
        k: 2,
        delta: None,
        metric: None,
        embedding: Some(EmbeddingSource {
            users,
            items,
            tags: None,
            actions_per_player: 20,
            threshold: emb.threshold,
        }),
        seed: 9,
    };
    let g = spec.build().unwrap().instance;
    assert_eq!(g.n_users(), 30);
    assert_eq!(g.action_counts(), vec![20, 20, 20]);
    let ones: usize = g
        .players()
        .iter()
        .flat_map(|p| &p.actions)
        .map(|a| a.sigma.iter().filter(|&&s| s == 1.0).count())
        .sum();
    let rate = ones as f64 / (60.0 * 30.0);
    assert!((0.03..0.2).contains(&rate), "positive rate {rate}");
}

#[test]
fn poa_of_dataset1_stays_within_theory() {
    for seed in 0..6 {
        for (n, k, beta) in [(3, 1, 0.1), (3, 2, 0.5), (4, 3, 0.1)] {
            let g = gen_dataset1(n, 100, beta, k, seed).unwrap();
            let r = poa(&g, &SolveOptions::default()).unwrap();
            assert!(r.poa >= 1.0 - 1e-9 && r.poa < poa_upper_bound(beta, k), "{n} {k} {beta}: {}", r.poa);
            let mass: f64 = r.cce_support.iter().map(|s| s.1).sum();
            assert!((mass - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn every_pure_nash_equilibrium_is_no_better_than_the_optimum_and_no_worse_than_the_worst_cce() {
    let g = gen_dataset1(3, 100, 0.1, 2, 11).unwrap();
    let r = poa(&g, &SolveOptions::default()).unwrap();
    let ev = Evaluator::new(&g);
    let mut found = 0;
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                let p = creator_game::StrategyProfile::new(vec![a, b, c]);
                if verify_pure_ne(&g, &p).unwrap().is_ne {
                    found += 1;
                    let w = ev.welfare(p.as_slice());
                    assert!(w <= r.max_welfare + 1e-9);
                    assert!(w >= r.worst_cce_welfare - 1e-6);
                }
            }
        }
    }
    assert!(found > 0);
}

#[test]
fn heuristics_reach_the_exact_optimum_on_small_games() {
    let mut sa_hits = 0;
    let mut brs_hits = 0;
    for seed in 0..10 {
        let g = gen_dataset1(5, 100, 0.1, 2, seed).unwrap();
        let exact = max_welfare_exact(&g, DEFAULT_ENUMERATION_BUDGET).unwrap().welfare;
        let sa = max_welfare_sa(&g, AnnealingConfig::default(), seed).unwrap().welfare;
        let brs = max_welfare_brs(&g, 50, 3, seed).unwrap().welfare;
        assert!(sa <= exact + 1e-9 && brs <= exact + 1e-9);
        sa_hits += usize::from((exact - sa).abs() < 1e-9);
        brs_hits += usize::from((exact - brs).abs() < 1e-9);
    }
    assert!(sa_hits >= 9, "annealing matched {sa_hits}/10");
    assert!(brs_hits >= 9, "best-response search matched {brs_hits}/10");
}

#[test]
fn exp3_dynamics_have_small_regret_and_bounded_pota() {
    for seed in 0..4 {
        let g = gen_dataset1(5, 100, 0.1, 3, seed).unwrap();
        let opt = max_welfare_exact(&g, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let trace = run_dynamics(
            &g,
            &DynamicsConfig::shared(Exp3Config {
                seed,
                ..Exp3Config::default()
            }),
        )
        .unwrap();
        let p = pota(&trace, opt.welfare);
        assert!(p >= 1.0 - 1e-9 && p < poa_upper_bound(0.1, 3), "PotA {p}");
        let u_max = g.total_weight() * (1.0 + 0.1 * 3f64.ln());
        for r in estimate_regrets(&trace, &Evaluator::new(&g)) {
            assert!(r / trace.horizon as f64 <= 0.05 * u_max);
        }
    }
}

#[test]
fn dynamics_replay_exactly_from_the_seed() {
    let g = gen_dataset1(4, 100, 0.5, 2, 1).unwrap();
    let cfg = DynamicsConfig::shared(Exp3Config {
        horizon: 300,
        seed: 42,
        ..Exp3Config::default()
    });
    let a = run_dynamics(&g, &cfg).unwrap();
    let b = run_dynamics(&g, &cfg).unwrap();
    assert_eq!(a, b);
    let mut x = Vec::new();
    a.write_csv(&mut x).unwrap();
    let mut y = Vec::new();
    b.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
}
