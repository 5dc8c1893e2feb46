mod common;

use std::collections::BTreeMap;

use cluster_notify::adversary::{run_lone_false_report, run_sybil_copresence, AttackKind, AttackSpec, AttackWorld, Injection};
use cluster_notify::client::{LocationHistory, ReportBatch, Sample};
use cluster_notify::cluster::brute_force;
use cluster_notify::model::{Anonym, AnonymPair, ClusterPolicy, GeoPoint, TimeBucket};
use common::random_venues;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    world: AttackWorld,
    attacker: LocationHistory,
    hotspots: Vec<GeoPoint>,
}

fn random_case(rng: &mut ChaCha8Rng, seed: u64) -> Case {
    let policy = ClusterPolicy::with_threshold(rng.random_range(2..=4));
    let n_buckets = rng.random_range(1..=3u64);
    let hotspots: Vec<GeoPoint> =
        (0..n_buckets).map(|_| GeoPoint::new(rng.random_range(0.0..60.0), rng.random_range(0.0..60.0))).collect();
    let honest: Vec<ReportBatch> = (0..rng.random_range(0..=6))
        .map(|_| {
            let mut pairs = Vec::new();
            for b in 0..n_buckets {
                if rng.random_bool(0.7) {
                    let h = hotspots[b as usize];
                    let p = GeoPoint::new(h.x + rng.random_range(-12.0..12.0), h.y + rng.random_range(-12.0..12.0));
                    pairs.push(AnonymPair::new(Anonym::generate(rng), p, TimeBucket(b), &policy).unwrap());
                }
            }
            ReportBatch { pairs }
        })
        .collect();
    let samples = (0..n_buckets)
        .map(|b| {
            let h = hotspots[b as usize];
            Sample::new(b as i64 * 300 + 150, h.x + rng.random_range(-20.0..20.0), h.y + rng.random_range(-20.0..20.0))
        })
        .collect();
    let mut world = AttackWorld::new(honest, policy, seed);
    world.venues = random_venues(rng, 2)
        .into_iter()
        .map(|mut v| {
            v.region.x0 = v.region.x0.abs() % 60.0;
            v.region.y0 = v.region.y0.abs() % 60.0;
            v.region.x1 = v.region.x0 + 5.0;
            v.region.y1 = v.region.y0 + 5.0;
            v
        })
        .collect();
    Case { world, attacker: LocationHistory::new(samples).unwrap(), hotspots }
}

/// Success iff some component holding the attacker has honest count >= threshold - 1.
fn predicted(case: &Case) -> bool {
    let policy = &case.world.policy;
    let mut by_bucket: BTreeMap<u64, Vec<AnonymPair>> = BTreeMap::new();
    for b in &case.world.honest {
        for p in &b.pairs {
            by_bucket.entry(p.bucket.0).or_default().push(*p);
        }
    }
    let marker = Anonym([0xaa; 16]);
    case.attacker.samples().iter().any(|s| {
        let bucket = (s.t / policy.bucket_seconds) as u64;
        let mut pairs = by_bucket.get(&bucket).cloned().unwrap_or_default();
        pairs.push(AnonymPair::new(marker, s.point, TimeBucket(bucket), policy).unwrap());
        brute_force::components(&pairs, policy).into_iter().any(|members| {
            if !members.iter().any(|m| m.anonym == marker) {
                return false;
            }
            let mut honest: Vec<Anonym> = members.iter().map(|m| m.anonym).filter(|a| *a != marker).collect();
            honest.sort();
            honest.dedup();
            honest.len() as u32 + 1 >= brute_force::effective_threshold(&members, &case.world.venues, policy)
        })
    })
}

#[test]
fn lone_attack_success_matches_characterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xad0);
    let (mut wins, mut losses) = (0, 0);
    for trial in 0..200 {
        let case = random_case(&mut rng, trial);
        let out = run_lone_false_report(&case.world, &case.attacker, &AttackSpec::new(AttackKind::LoneFalseReport)).unwrap();
        assert_eq!(out.success, predicted(&case), "trial {trial}");
        if out.success {
            wins += 1;
        } else {
            losses += 1;
        }
    }
    assert!(wins > 10 && losses > 10, "generator too lopsided: {wins} wins, {losses} losses");
}

#[test]
fn sub_threshold_injections_leave_bulletin_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xad1);
    let mut checked = 0;
    for trial in 0..300 {
        let case = random_case(&mut rng, trial);
        let policy = &case.world.policy;
        let baseline = case.world.baseline().unwrap();
        let injected: Vec<AnonymPair> = case
            .attacker
            .samples()
            .iter()
            .map(|s| AnonymPair::new(Anonym::generate(&mut rng), s.point, TimeBucket((s.t / 300) as u64), policy).unwrap())
            .collect();
        let attacked = case.world.run(&[Injection { pairs: injected.clone(), token: None }]).unwrap();
        let touched = attacked.detections.iter().any(|d| d.component.members.iter().any(|m| injected.contains(m)));
        if !touched {
            assert_eq!(attacked.bulletin_text, baseline.bulletin_text, "trial {trial}");
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn all_reject_gateway_isolates_baseline() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xad2);
    for trial in 0..40 {
        let mut case = random_case(&mut rng, trial);
        case.world.auth_required = true;
        let spec = AttackSpec::new(AttackKind::LoneFalseReport);
        let out = run_lone_false_report(&case.world, &case.attacker, &spec).unwrap();
        assert!(!out.success && out.events_caused.is_empty());
        assert_eq!(out.rejections, vec!["auth-missing".to_string()]);

        let mut sybil = AttackSpec::new(AttackKind::SybilCopresence);
        sybil.sybil_count = 5;
        let out = run_sybil_copresence(&case.world, case.hotspots[0], TimeBucket(0), &sybil).unwrap();
        assert!(!out.success && out.events_caused.is_empty());
        assert_eq!(out.rejections.len(), 5);
    }
}
