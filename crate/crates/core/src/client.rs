//! Phone-side logic: local location history, anonym generation,
//! critical-period report assembly and local matching of published events.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bucketize, cell_of, Anonym, AnonymPair, CellIndex, ClusterEvent, ClusterPolicy, CountBand, EventId, GeoPoint, Seconds,
    TimeBucket,
};

pub const DAY_SECONDS: Seconds = 86_400;

/// Clients record one history sample per this many seconds.
pub const SAMPLE_INTERVAL_SECONDS: Seconds = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: Seconds,
    pub point: GeoPoint,
}

impl Sample {
    pub fn new(t: Seconds, x: f64, y: f64) -> Self {
        Self { t, point: GeoPoint::new(x, y) }
    }
}

/// Time-ordered samples held only by the owning client.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocationHistory {
    samples: Vec<Sample>,
}

impl LocationHistory {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !s.point.is_finite() {
                return Err(Error::NonFinitePoint(s.point.x, s.point.y));
            }
            if s.t < 0 {
                return Err(Error::NegativeTime(s.t));
            }
            if i > 0 && samples[i - 1].t >= s.t {
                return Err(Error::HistoryOrder { index: i });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `lo <= t < hi`.
    pub fn between(&self, lo: Seconds, hi: Seconds) -> &[Sample] {
        let a = self.samples.partition_point(|s| s.t < lo);
        let b = self.samples.partition_point(|s| s.t < hi);
        &self.samples[a..b.max(a)]
    }

    pub fn in_bucket(&self, bucket: TimeBucket, policy: &ClusterPolicy) -> &[Sample] {
        let start = bucket.start(policy.bucket_seconds);
        self.between(start, start + policy.bucket_seconds)
    }

    /// Parses line-delimited `t,x,y` records; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |e: &dyn std::fmt::Display| Error::Parse(format!("history line {}: {e}", n + 1));
            let [t, x, y] = fields[..] else {
                return Err(bad(&"expected t,x,y"));
            };
            samples.push(Sample::new(
                t.parse().map_err(|e| bad(&e))?,
                x.parse().map_err(|e| bad(&e))?,
                y.parse().map_err(|e| bad(&e))?,
            ));
        }
        Self::new(samples)
    }

    pub fn to_text(&self) -> String {
        self.samples.iter().map(|s| format!("{},{},{}\n", s.t, s.point.x, s.point.y)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalPeriodConfig {
    pub lookback_seconds: Seconds,
}

impl Default for CriticalPeriodConfig {
    fn default() -> Self {
        Self { lookback_seconds: 14 * DAY_SECONDS }
    }
}

/// Why a batch fails the one-pair-per-bucket contract.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BatchDefect {
    #[error("two pairs in bucket {0}")]
    DuplicateBucket(TimeBucket),
    #[error("anonym {0} used twice")]
    DuplicateAnonym(Anonym),
    #[error("cell {cell} is not the quantization of its point")]
    CellMismatch { cell: CellIndex },
    #[error("non-finite point")]
    NonFinite,
}

/// The pairs one client submits after a positive test.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportBatch {
    pub pairs: Vec<AnonymPair>,
}

impl ReportBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self, policy: &ClusterPolicy) -> std::result::Result<(), BatchDefect> {
        let mut buckets = HashSet::new();
        let mut anonyms = HashSet::new();
        for p in &self.pairs {
            if !buckets.insert(p.bucket) {
                return Err(BatchDefect::DuplicateBucket(p.bucket));
            }
            if !anonyms.insert(p.anonym) {
                return Err(BatchDefect::DuplicateAnonym(p.anonym));
            }
            match cell_of(p.point, policy) {
                Ok(c) if c == p.cell => {}
                Ok(_) => return Err(BatchDefect::CellMismatch { cell: p.cell }),
                Err(_) => return Err(BatchDefect::NonFinite),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportWarning {
    /// No history sample falls inside the critical period.
    EmptyWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub batch: ReportBatch,
    pub warning: Option<ReportWarning>,
}

pub fn generate_anonym<R: RngCore + ?Sized>(rng: &mut R) -> Anonym {
    Anonym::generate(rng)
}

/// Bucket range `[lo, hi]` whose start times lie in `[test_time - lookback, test_time]`.
pub fn critical_buckets(
    test_time: Seconds,
    cfg: &CriticalPeriodConfig,
    policy: &ClusterPolicy,
) -> Result<(TimeBucket, TimeBucket)> {
    if test_time < 0 {
        return Err(Error::NegativeTime(test_time));
    }
    if cfg.lookback_seconds <= 0 {
        return Err(Error::InvalidConfig(format!("lookback_seconds must be > 0, got {}", cfg.lookback_seconds)));
    }
    let start = (test_time - cfg.lookback_seconds).max(0);
    let b = policy.bucket_seconds;
    Ok((TimeBucket(((start + b - 1) / b) as u64), bucketize(test_time, policy)?))
}

/// One pair per critical-period bucket holding at least one sample at or
/// before `test_time`, located at the latest such sample, each with a fresh anonym.
pub fn assemble_report<R: RngCore + ?Sized>(
    history: &LocationHistory,
    test_time: Seconds,
    cfg: &CriticalPeriodConfig,
    policy: &ClusterPolicy,
    rng: &mut R,
) -> Result<Report> {
    let (lo, hi) = critical_buckets(test_time, cfg, policy)?;
    let window = history.between(lo.start(policy.bucket_seconds), test_time + 1);

    let mut latest: BTreeMap<TimeBucket, GeoPoint> = BTreeMap::new();
    for s in window {
        latest.insert(bucketize(s.t, policy)?, s.point);
    }
    debug_assert!(latest.keys().all(|b| *b >= lo && *b <= hi));

    let pairs = latest
        .into_iter()
        .map(|(bucket, point)| AnonymPair::new(generate_anonym(rng), point, bucket, policy))
        .collect::<Result<Vec<_>>>()?;
    let warning = pairs.is_empty().then_some(ReportWarning::EmptyWindow);
    if warning.is_some() {
        log::warn!("critical period ending at {test_time}s contains no history samples");
    }
    Ok(Report { batch: ReportBatch { pairs }, warning })
}

/// A pair that does not correspond to the client's own history.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("pair in bucket {bucket} does not come from the local history")]
pub struct SpoofedPair {
    pub bucket: TimeBucket,
}

/// Client-boundary check: each pair must sit at the latest recorded sample
/// of its bucket. A client without a hacked location stack cannot report
/// a location-time it was not present at.
pub fn check_pairs_from_history(
    history: &LocationHistory,
    pairs: &[AnonymPair],
    policy: &ClusterPolicy,
) -> std::result::Result<(), SpoofedPair> {
    for p in pairs {
        match history.in_bucket(p.bucket, policy).last() {
            Some(s) if s.point == p.point => {}
            _ => return Err(SpoofedPair { bucket: p.bucket }),
        }
    }
    Ok(())
}

/// A local match of a published event against the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureNotice {
    pub event_id: EventId,
    pub bucket: TimeBucket,
    pub cells: BTreeSet<CellIndex>,
    pub band: CountBand,
    pub t: Seconds,
    pub x: f64,
    pub y: f64,
}

impl ExposureNotice {
    pub fn matched_sample(&self) -> Sample {
        Sample::new(self.t, self.x, self.y)
    }
}

/// Distance from a point to the union of a region's cells.
pub fn region_distance(p: &GeoPoint, region: &BTreeSet<CellIndex>, policy: &ClusterPolicy) -> f64 {
    region.iter().map(|c| policy.cell_extent(*c).distance_to(p)).fold(f64::INFINITY, f64::min)
}

/// One notice per event, for the earliest sample in the event's bucket
/// within `margin_m` of its region. Purely local; output in (bucket, event_id) order.
pub fn match_exposures(history: &LocationHistory, events: &[ClusterEvent], policy: &ClusterPolicy) -> Vec<ExposureNotice> {
    let mut seen = HashSet::new();
    let mut notices: Vec<ExposureNotice> = events
        .iter()
        .filter(|e| seen.insert(e.event_id))
        .filter_map(|e| {
            let hit = history
                .in_bucket(e.bucket, policy)
                .iter()
                .find(|s| region_distance(&s.point, &e.region, policy) <= policy.margin_m)?;
            Some(ExposureNotice {
                event_id: e.event_id,
                bucket: e.bucket,
                cells: e.region.clone(),
                band: e.band,
                t: hit.t,
                x: hit.point.x,
                y: hit.point.y,
            })
        })
        .collect();
    notices.sort_by_key(|n| (n.bucket, n.event_id));
    notices
}

/// A client: its private history and anonym source.
#[derive(Debug, Clone)]
pub struct ClientAgent {
    pub history: LocationHistory,
    rng: ChaCha8Rng,
}

impl ClientAgent {
    pub fn new(history: LocationHistory, seed: u64) -> Self {
        Self { history, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn report(&mut self, test_time: Seconds, cfg: &CriticalPeriodConfig, policy: &ClusterPolicy) -> Result<Report> {
        assemble_report(&self.history, test_time, cfg, policy, &mut self.rng)
    }

    pub fn fresh_anonym(&mut self) -> Anonym {
        generate_anonym(&mut self.rng)
    }

    pub fn match_events(&self, events: &[ClusterEvent], policy: &ClusterPolicy) -> Vec<ExposureNotice> {
        match_exposures(&self.history, events, policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn anonyms_are_fresh_and_reproducible() {
        let mut r = rng(42);
        let (a, b) = (generate_anonym(&mut r), generate_anonym(&mut r));
        assert_ne!(a, b);
        assert_eq!(a.as_bytes().len(), 16);
        let seq = |s| {
            let mut r = rng(s);
            (0..5).map(|_| generate_anonym(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(seq(7), seq(7));
    }

    #[test]
    fn history_rejects_unordered_samples() {
        assert!(matches!(
            LocationHistory::new(vec![Sample::new(10, 0., 0.), Sample::new(10, 1., 1.)]),
            Err(Error::HistoryOrder { index: 1 })
        ));
        assert!(LocationHistory::parse("0,1,2\n60,3\n").is_err());
        let h = LocationHistory::parse("# t,x,y\n0,1.5,2\n\n60,3,4\n").unwrap();
        assert_eq!(LocationHistory::parse(&h.to_text()).unwrap(), h);
    }

    #[test]
    fn empty_history_gives_empty_batch_with_warning() {
        let p = ClusterPolicy::default();
        let r = assemble_report(&LocationHistory::default(), 1000, &CriticalPeriodConfig::default(), &p, &mut rng(1)).unwrap();
        assert!(r.batch.is_empty());
        assert_eq!(r.warning, Some(ReportWarning::EmptyWindow));
    }

    #[test]
    fn lookback_keeps_only_recent_days() {
        let p = ClusterPolicy::default();
        let cfg = CriticalPeriodConfig::default();
        let day = DAY_SECONDS;
        let times: Vec<Seconds> = [1, 10].iter().flat_map(|d| (0..5).map(move |k| d * day + 3600 + k * 600)).collect();
        let history = LocationHistory::new(times.iter().map(|&t| Sample::new(t, 1.0, 1.0)).collect()).unwrap();
        let test_time = 20 * day;

        // Oracle: interval intersection over the raw timestamps.
        let start = test_time - cfg.lookback_seconds;
        let expected: BTreeSet<u64> = times
            .iter()
            .filter(|&&t| t >= start && t <= test_time)
            .map(|&t| (t / p.bucket_seconds) as u64)
            .filter(|&b| b as i64 * p.bucket_seconds >= start)
            .collect();

        let report = assemble_report(&history, test_time, &cfg, &p, &mut rng(2)).unwrap();
        let got: BTreeSet<u64> = report.batch.pairs.iter().map(|q| q.bucket.0).collect();
        assert_eq!(got, expected);
        assert!(got.iter().all(|&b| b as i64 * p.bucket_seconds / day == 10));
        assert_eq!(got.len(), 5);
    }

    #[test]
    fn latest_sample_wins_within_a_bucket() {
        let p = ClusterPolicy::default();
        let h = LocationHistory::new(vec![Sample::new(60, 0., 0.), Sample::new(120, 3., 0.)]).unwrap();
        let r = assemble_report(&h, 200, &CriticalPeriodConfig::default(), &p, &mut rng(3)).unwrap();
        assert_eq!(r.batch.len(), 1);
        assert_eq!(r.batch.pairs[0].cell, cell_of(GeoPoint::new(3., 0.), &p).unwrap());
        assert_eq!(r.batch.pairs[0].point, GeoPoint::new(3., 0.));
    }

    #[test]
    fn samples_after_the_test_are_not_reported() {
        let p = ClusterPolicy::default();
        let h = LocationHistory::new(vec![Sample::new(60, 0., 0.), Sample::new(250, 30., 0.)]).unwrap();
        let r = assemble_report(&h, 100, &CriticalPeriodConfig::default(), &p, &mut rng(3)).unwrap();
        assert_eq!(r.batch.pairs.len(), 1);
        assert_eq!(r.batch.pairs[0].point, GeoPoint::new(0., 0.));
    }

    #[test]
    fn batch_validation() {
        let p = ClusterPolicy::default();
        let a = AnonymPair::new(Anonym([1; 16]), GeoPoint::new(1., 1.), TimeBucket(3), &p).unwrap();
        let mut b = a;
        b.anonym = Anonym([2; 16]);
        assert_eq!(ReportBatch { pairs: vec![a, b] }.validate(&p), Err(BatchDefect::DuplicateBucket(TimeBucket(3))));
        b.bucket = TimeBucket(4);
        assert!(ReportBatch { pairs: vec![a, b] }.validate(&p).is_ok());
        b.cell = CellIndex::new(9, 9);
        assert!(matches!(ReportBatch { pairs: vec![a, b] }.validate(&p), Err(BatchDefect::CellMismatch { .. })));
    }

    fn event(cells: &[(i64, i64)], bucket: u64) -> ClusterEvent {
        ClusterEvent::new(
            TimeBucket(bucket),
            cells.iter().map(|&(x, y)| CellIndex::new(x, y)).collect(),
            CountBand::bounded(3, 4),
            "p",
        )
    }

    #[test]
    fn match_inside_and_far_away() {
        let p = ClusterPolicy::default();
        let e = event(&[(5, 5)], 12);
        let t = 12 * p.bucket_seconds + 30;
        let inside = LocationHistory::new(vec![Sample::new(t, 21.0, 22.0)]).unwrap();
        let notices = match_exposures(&inside, std::slice::from_ref(&e), &p);
        assert_eq!(notices.len(), 1);
        assert_eq!(notices[0].event_id, e.event_id);
        let far = LocationHistory::new(vec![Sample::new(t, 21.0, 72.0)]).unwrap();
        assert!(match_exposures(&far, std::slice::from_ref(&e), &p).is_empty());
        // Right place, wrong bucket.
        let late = LocationHistory::new(vec![Sample::new(t + p.bucket_seconds, 21.0, 22.0)]).unwrap();
        assert!(match_exposures(&late, &[e], &p).is_empty());
    }

    #[test]
    fn earliest_matching_sample_is_reported() {
        let p = ClusterPolicy::default();
        let e = event(&[(0, 0)], 0);
        let h = LocationHistory::new(vec![Sample::new(0, 100.0, 100.0), Sample::new(60, 5.5, 1.0), Sample::new(120, 1.0, 1.0)])
            .unwrap();
        let n = match_exposures(&h, &[e], &p);
        assert_eq!(n[0].t, 60);
    }

    #[test]
    fn spoof_check() {
        let p = ClusterPolicy::default();
        let h = LocationHistory::new(vec![Sample::new(10, 1., 1.)]).unwrap();
        let real = AnonymPair::new(Anonym([1; 16]), GeoPoint::new(1., 1.), TimeBucket(0), &p).unwrap();
        assert!(check_pairs_from_history(&h, &[real], &p).is_ok());
        let fake = AnonymPair::new(Anonym([1; 16]), GeoPoint::new(50., 1.), TimeBucket(0), &p).unwrap();
        assert!(check_pairs_from_history(&h, &[fake], &p).is_err());
        let off_time = AnonymPair { bucket: TimeBucket(7), ..real };
        assert!(check_pairs_from_history(&h, &[off_time], &p).is_err());
    }

    fn arb_history() -> impl Strategy<Value = LocationHistory> {
        prop::collection::vec((1i64..400, 0.0f64..60.0, 0.0f64..60.0), 0..200).prop_map(|steps| {
            let mut t = 0;
            LocationHistory::new(
                steps
                    .into_iter()
                    .map(|(dt, x, y)| {
                        t += dt;
                        Sample::new(t, x, y)
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn report_invariants(h in arb_history(), test_time in 0i64..90_000, lookback in 1i64..50_000, seed in any::<u64>()) {
            let p = ClusterPolicy::default();
            let cfg = CriticalPeriodConfig { lookback_seconds: lookback };
            let r = assemble_report(&h, test_time, &cfg, &p, &mut rng(seed)).unwrap();
            prop_assert!(r.batch.validate(&p).is_ok());
            for q in &r.batch.pairs {
                let start = q.bucket.start(p.bucket_seconds);
                prop_assert!(start >= test_time - lookback && start <= test_time);
            }
            prop_assert_eq!(r.warning.is_some(), r.batch.is_empty());
        }

        #[test]
        fn matching_is_pure(h in arb_history(), seed in any::<u64>()) {
            let p = ClusterPolicy::default();
            let mut r = rng(seed);
            let mut draw = |m: u32| (rand::RngCore::next_u32(&mut r) % m) as i64;
            let events: Vec<_> = (0..5).map(|_| event(&[(draw(15), draw(15))], draw(100) as u64)).collect();
            prop_assert_eq!(match_exposures(&h, &events, &p), match_exposures(&h, &events, &p));
        }
    }
}
