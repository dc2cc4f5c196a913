mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use replaybench::metrics::{driving_score, success_rate, summarize, EpisodeResult, InfractionKind, PenaltyTable};
use replaybench::forge::canonical_corpus;

use common::{reference_ds, result, PENALIZING};

#[test]
fn driving_score_worked_examples() {
    let t = PenaltyTable::default();
    let one = [result("a", 1.0, &[], &t)];
    assert!((driving_score(&one, &t).unwrap() - 100.0).abs() < 1e-9);

    let red = [result("a", 0.8, &[InfractionKind::RedLight], &t)];
    assert!((driving_score(&red, &t).unwrap() - 56.0).abs() < 1e-9);

    let two = [
        result("a", 1.0, &[], &t),
        result("b", 0.5, &[InfractionKind::CollisionVehicle, InfractionKind::RedLight], &t),
    ];
    assert!((driving_score(&two, &t).unwrap() - 60.5).abs() < 1e-9);
    assert!(driving_score(&[], &t).is_err());
}

#[test]
fn success_rate_counts() {
    let t = PenaltyTable::default();
    let mut rs: Vec<EpisodeResult> = (0..4).map(|i| result(&i.to_string(), 1.0, &[], &t)).collect();
    for r in &mut rs[1..] {
        r.success = false;
    }
    assert_eq!(success_rate(&rs).unwrap(), 25.0);
}

#[test]
fn summary_groups_weight_by_size() {
    let (mut corpus, _) = canonical_corpus().unwrap();
    corpus.truncate(4);
    let t = PenaltyTable::default();
    let mut rs: Vec<EpisodeResult> = corpus.iter().map(|s| result(&s.scenario_id, 1.0, &[], &t)).collect();
    rs[3].success = false;
    let sum = summarize(&rs, &corpus, &t).unwrap();
    assert_eq!(sum.sr, 75.0);
    for groups in [&sum.per_behavior, &sum.per_weather, &sum.per_time] {
        assert_eq!(groups.values().map(|g| g.n).sum::<usize>(), sum.n_total);
    }
    rs.push(result("nowhere", 1.0, &[], &t));
    assert!(summarize(&rs, &corpus, &t).is_err());
}

fn random_results(rng: &mut ChaCha8Rng, t: &PenaltyTable) -> Vec<EpisodeResult> {
    let n = rng.gen_range(1..12);
    (0..n)
        .map(|i| {
            let k = rng.gen_range(0..3);
            let kinds: Vec<_> = (0..k).map(|_| PENALIZING[rng.gen_range(0..PENALIZING.len())]).collect();
            result(&format!("r{i}"), rng.gen_range(0.0..=1.0), &kinds, t)
        })
        .collect()
}

#[test]
fn driving_score_is_monotone_under_added_penalties() {
    let t = PenaltyTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let mut rs = random_results(&mut rng, &t);
        let before = driving_score(&rs, &t).unwrap();
        assert!((before - reference_ds(&rs)).abs() < 1e-9);
        let victim = rng.gen_range(0..rs.len());
        let kind = PENALIZING[rng.gen_range(0..PENALIZING.len())];
        let mut extra = result("x", 1.0, &[kind], &t).infractions[0];
        extra.tick = 999;
        rs[victim].infractions.push(extra);
        let after = driving_score(&rs, &t).unwrap();
        assert!((after - reference_ds(&rs)).abs() < 1e-9);
        assert!(after <= before + 1e-12, "{before} -> {after}");
    }
}

proptest! {
    #[test]
    fn ds_bounds_and_decomposition(seed in any::<u64>()) {
        let t = PenaltyTable::default();
        let rs = random_results(&mut ChaCha8Rng::seed_from_u64(seed), &t);
        let ds = driving_score(&rs, &t).unwrap();
        prop_assert!((0.0..=100.0).contains(&ds));
        let mean: f64 = rs.iter().map(|r| r.score(&t)).sum::<f64>() / rs.len() as f64;
        prop_assert!((ds - 100.0 * mean).abs() < 1e-12);
        let perfect = rs.iter().all(|r| r.rc == 1.0 && r.infractions.is_empty());
        prop_assert_eq!(perfect, (ds - 100.0).abs() < 1e-12 && rs.iter().all(|r| r.infractions.is_empty()));
    }

    #[test]
    fn success_rate_never_rises_when_an_episode_fails(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let t = PenaltyTable::default();
        let mut rs = random_results(&mut ChaCha8Rng::seed_from_u64(seed), &t);
        let before = success_rate(&rs).unwrap();
        let complete = 100.0 * rs.iter().filter(|r| r.rc >= 0.95).count() as f64 / rs.len() as f64;
        prop_assert!(before <= complete);
        let i = pick.index(rs.len());
        rs[i].success = false;
        prop_assert!(success_rate(&rs).unwrap() <= before);
    }
}
