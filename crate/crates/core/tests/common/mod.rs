#![allow(dead_code)]

use cluster_notify::model::{Anonym, AnonymPair, ClusterPolicy, GeoPoint, Rect, TimeBucket, VenueAnnotation};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `n` pairs in one bucket scattered around a few hotspots so components of
/// every size show up. Roughly one pair in twenty reuses an earlier anonym.
pub fn hotspot_bucket(rng: &mut ChaCha8Rng, n: usize, bucket: TimeBucket, policy: &ClusterPolicy) -> Vec<AnonymPair> {
    let spots: Vec<GeoPoint> = (0..rng.random_range(1..=6))
        .map(|_| GeoPoint::new(rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0)))
        .collect();
    let mut out: Vec<AnonymPair> = Vec::with_capacity(n);
    for _ in 0..n {
        let c = spots[rng.random_range(0..spots.len())];
        let spread = rng.random_range(2.0..25.0);
        let p = GeoPoint::new(c.x + rng.random_range(-spread..spread), c.y + rng.random_range(-spread..spread));
        let anonym = if !out.is_empty() && rng.random_bool(0.05) {
            out[rng.random_range(0..out.len())].anonym
        } else {
            Anonym::generate(rng)
        };
        out.push(AnonymPair::new(anonym, p, bucket, policy).unwrap());
    }
    out
}

pub fn random_venues(rng: &mut ChaCha8Rng, max: usize) -> Vec<VenueAnnotation> {
    (0..rng.random_range(0..=max))
        .map(|i| {
            let x0 = rng.random_range(-150.0..150.0);
            let y0 = rng.random_range(-150.0..150.0);
            let r = Rect::new(x0, y0, x0 + rng.random_range(2.0..20.0), y0 + rng.random_range(2.0..20.0)).unwrap();
            VenueAnnotation::new(r, rng.random_range(2..=4), format!("venue-{i}")).unwrap()
        })
        .collect()
}
