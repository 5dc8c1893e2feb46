use std::sync::Arc;

use cluster_notify::authority::TestAuthority;
use cluster_notify::client::ReportBatch;
use cluster_notify::mix::{GatewayConfig, MixGateway, Submission, SubmitReject};
use cluster_notify::model::{Anonym, AnonymPair, ClusterPolicy, GeoPoint, TimeBucket};
use cluster_notify::wire::WireFiring;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(rng: &mut ChaCha8Rng, policy: &ClusterPolicy) -> ReportBatch {
    let pairs = (0..rng.random_range(1..6))
        .map(|b| {
            let p = GeoPoint::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            AnonymPair::new(Anonym::generate(rng), p, TimeBucket(b), policy).unwrap()
        })
        .collect();
    ReportBatch { pairs }
}

#[test]
fn submission_order_does_not_show_in_firing() {
    let policy = ClusterPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x51);
    let authority = TestAuthority::generate(&mut rng, 10);
    let batches: Vec<ReportBatch> = (0..30).map(|_| batch(&mut rng, &policy)).collect();
    let mut reference: Option<String> = None;
    for trial in 0..40 {
        let gw = MixGateway::new(GatewayConfig {
            auth_required: true,
            authority_key: Some(authority.public_key()),
            policy: policy.clone(),
        })
        .unwrap();
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut rng);
        for i in order {
            let token = authority.issue_token(Anonym::generate(&mut rng), TimeBucket(0), &mut rng);
            gw.submit(Submission::with_token(batches[i].clone(), token), TimeBucket(0)).unwrap();
        }
        let mut fire_rng = ChaCha8Rng::seed_from_u64(trial);
        let out = serde_json::to_string(&WireFiring::from(&gw.fire(&mut fire_rng))).unwrap();
        assert!(!out.contains("token") && !out.contains("nonce") && !out.contains("time"));
        match &reference {
            None => reference = Some(out),
            Some(r) => assert_eq!(r, &out, "trial {trial}"),
        }
    }
}

#[test]
fn raw_firing_order_is_shuffled() {
    let policy = ClusterPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x52);
    let gw = MixGateway::open(policy.clone()).unwrap();
    let mut submitted = Vec::new();
    for _ in 0..40 {
        let b = batch(&mut rng, &policy);
        submitted.extend(b.pairs.iter().copied());
        gw.submit(Submission::new(b), TimeBucket(0)).unwrap();
    }
    let out = gw.fire(&mut rng);
    assert_ne!(out.pairs, submitted);
    let mut a = out.pairs.clone();
    let mut b = submitted;
    a.sort_by_key(AnonymPair::canonical_key);
    b.sort_by_key(AnonymPair::canonical_key);
    assert_eq!(a, b);
}

#[test]
fn concurrent_submits_and_fires_lose_nothing() {
    let policy = ClusterPolicy::default();
    let gw = Arc::new(MixGateway::open(policy.clone()).unwrap());
    let submitters: Vec<_> = (0..8)
        .map(|w| {
            let (gw, policy) = (gw.clone(), policy.clone());
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(w);
                let mut sent = Vec::new();
                for _ in 0..200 {
                    let b = batch(&mut rng, &policy);
                    sent.extend(b.pairs.iter().map(|p| p.anonym));
                    gw.submit(Submission::new(b), TimeBucket(0)).unwrap();
                }
                sent
            })
        })
        .collect();
    let firer = {
        let gw = gw.clone();
        std::thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut fired = Vec::new();
            for _ in 0..50 {
                fired.push(gw.fire(&mut rng));
                std::thread::yield_now();
            }
            fired
        })
    };
    let mut sent: Vec<Anonym> = submitters.into_iter().flat_map(|h| h.join().unwrap()).collect();
    let mut firings = firer.join().unwrap();
    firings.push(gw.fire(&mut ChaCha8Rng::seed_from_u64(100)));

    let indices: Vec<u64> = firings.iter().map(|f| f.fire_index).collect();
    assert_eq!(indices, (0..firings.len() as u64).collect::<Vec<_>>());
    let mut received: Vec<Anonym> = firings.iter().flat_map(|f| f.pairs.iter().map(|p| p.anonym)).collect();
    sent.sort();
    received.sort();
    assert_eq!(sent, received);
}

#[test]
fn auth_gate_distinguishes_missing_and_replayed() {
    let policy = ClusterPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x53);
    let authority = TestAuthority::generate(&mut rng, 10);
    let gw = MixGateway::new(GatewayConfig {
        auth_required: true,
        authority_key: Some(authority.public_key()),
        policy: policy.clone(),
    })
    .unwrap();
    let b = batch(&mut rng, &policy);
    assert_eq!(gw.submit(Submission::new(b.clone()), TimeBucket(0)), Err(SubmitReject::AuthMissing));
    let token = authority.issue_token(Anonym::generate(&mut rng), TimeBucket(0), &mut rng);
    gw.submit(Submission::with_token(b.clone(), token.clone()), TimeBucket(0)).unwrap();
    let replay = gw.submit(Submission::with_token(batch(&mut rng, &policy), token), TimeBucket(0)).unwrap_err();
    assert_eq!(replay.code(), "auth-invalid:replayed");
    assert_eq!(gw.buffered(), b.len());
}
