//! Shared domain types, spatial/temporal quantization and the canonical
//! textual encodings that appear in the bulletin file and the wire schema.
//!
//! The world is a bounded planar rectangle measured in meters. Time is
//! whole seconds since the start of a run.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Simulated time in whole seconds since the epoch of a run.
pub type Seconds = i64;

/// Implements serde for a type through its `Display`/`FromStr` pair.
macro_rules! serde_via_str {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A planar location in meters (x east, y north).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_sq(&self, other: &GeoPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, other: &GeoPoint) -> f64 {
        self.distance_sq(other).sqrt()
    }

    /// Linkage predicate shared by every clustering path: two points are
    /// adjacent when they are at most `radius` apart (inclusive).
    #[inline]
    pub fn within(&self, other: &GeoPoint, radius: f64) -> bool {
        self.distance_sq(other) <= radius * radius
    }
}

/// Grid cell of side `cell_size_m`; encoded as `"cx,cy"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub cx: i64,
    pub cy: i64,
}

impl CellIndex {
    pub const fn new(cx: i64, cy: i64) -> Self {
        Self { cx, cy }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.cx, self.cy)
    }
}

impl FromStr for CellIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s.split_once(',').ok_or_else(|| Error::Parse(format!("cell index {s:?}: expected \"cx,cy\"")))?;
        let parse = |v: &str| v.trim().parse::<i64>().map_err(|e| Error::Parse(format!("cell index {s:?}: {e}")));
        Ok(Self::new(parse(a)?, parse(b)?))
    }
}

serde_via_str!(CellIndex);

/// Time bucket number since the epoch of the run; encoded as a decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeBucket(pub u64);

impl TimeBucket {
    pub fn start(&self, bucket_seconds: Seconds) -> Seconds {
        self.0 as Seconds * bucket_seconds
    }

    pub fn next(&self) -> TimeBucket {
        TimeBucket(self.0 + 1)
    }
}

impl fmt::Display for TimeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ephemeral 128-bit pseudo-random identifier; encoded as 32 lowercase hex chars.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Anonym(pub [u8; 16]);

impl Anonym {
    /// Draws a fresh anonym: 16 uniformly random bytes.
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Anonym(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for Anonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Anonym({self})")
    }
}

impl fmt::Display for Anonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Anonym {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 32 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(Error::Parse(format!("anonym {s:?}: expected 32 lowercase hex chars")));
        }
        let mut bytes = [0u8; 16];
        hex::decode_to_slice(s, &mut bytes).map_err(|e| Error::Parse(format!("anonym {s:?}: {e}")))?;
        Ok(Anonym(bytes))
    }
}

serde_via_str!(Anonym);

/// One reportable observation: a fresh anonym plus a quantized location-time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnonymPair {
    pub anonym: Anonym,
    pub cell: CellIndex,
    pub point: GeoPoint,
    pub bucket: TimeBucket,
}

impl AnonymPair {
    /// Builds a pair whose cell is the quantization of `point`.
    pub fn new(anonym: Anonym, point: GeoPoint, bucket: TimeBucket, policy: &ClusterPolicy) -> Result<Self> {
        Ok(Self { anonym, cell: cell_of(point, policy)?, point, bucket })
    }

    /// Canonical ordering key: (bucket, cx, cy, anonym hex).
    ///
    /// Byte order of the anonym equals the order of its lowercase hex encoding.
    pub fn canonical_key(&self) -> (TimeBucket, i64, i64, [u8; 16]) {
        (self.bucket, self.cell.cx, self.cell.cy, self.anonym.0)
    }
}

/// Sorts pairs into canonical order, ties broken by coordinates so the
/// result is a total order even for repeated anonyms.
pub fn canonical_sort(pairs: &mut [AnonymPair]) {
    pairs.sort_by(|a, b| {
        a.canonical_key().cmp(&b.canonical_key()).then(a.point.x.total_cmp(&b.point.x)).then(a.point.y.total_cmp(&b.point.y))
    });
}

/// Closed count interval `[lo, hi]`, or `[lo, ∞)` when `hi` is `None`.
/// Encoded as `"lo-hi"` or `"lo+"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountBand {
    pub lo: u32,
    pub hi: Option<u32>,
}

impl CountBand {
    pub const fn bounded(lo: u32, hi: u32) -> Self {
        Self { lo, hi: Some(hi) }
    }

    pub const fn open(lo: u32) -> Self {
        Self { lo, hi: None }
    }

    pub fn contains(&self, n: u32) -> bool {
        n >= self.lo && self.hi.is_none_or(|hi| n <= hi)
    }
}

impl fmt::Display for CountBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(hi) => write!(f, "{}-{}", self.lo, hi),
            None => write!(f, "{}+", self.lo),
        }
    }
}

impl FromStr for CountBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |e: &dyn fmt::Display| Error::Parse(format!("count band {s:?}: {e}"));
        if let Some(lo) = s.strip_suffix('+') {
            return Ok(CountBand::open(lo.parse().map_err(|e| bad(&e))?));
        }
        let (lo, hi) = s.split_once('-').ok_or_else(|| bad(&"expected \"lo-hi\" or \"lo+\""))?;
        let band = CountBand::bounded(lo.parse().map_err(|e| bad(&e))?, hi.parse().map_err(|e| bad(&e))?);
        if band.hi < Some(band.lo) {
            return Err(bad(&"hi < lo"));
        }
        Ok(band)
    }
}

serde_via_str!(CountBand);

/// Axis-aligned rectangle in world coordinates, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let r = Rect { x0, y0, x1, y1 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite());
        if !finite || self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidGeometry(format!("degenerate rectangle {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }

    /// Euclidean distance from `p` to the closed rectangle (0 inside).
    pub fn distance_to(&self, p: &GeoPoint) -> f64 {
        let dx = (self.x0 - p.x).max(0.0).max(p.x - self.x1);
        let dy = (self.y0 - p.y).max(0.0).max(p.y - self.y1);
        dx.hypot(dy)
    }

    pub fn corners(&self) -> [GeoPoint; 4] {
        [
            GeoPoint::new(self.x0, self.y0),
            GeoPoint::new(self.x1, self.y0),
            GeoPoint::new(self.x1, self.y1),
            GeoPoint::new(self.x0, self.y1),
        ]
    }
}

/// Inclusive range of cells, used by bulletin queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRange {
    pub cx0: i64,
    pub cy0: i64,
    pub cx1: i64,
    pub cy1: i64,
}

impl CellRange {
    /// Every cell whose extent touches `rect`.
    pub fn covering(rect: &Rect, policy: &ClusterPolicy) -> Result<Self> {
        let lo = cell_of(GeoPoint::new(rect.x0, rect.y0), policy)?;
        let hi = cell_of(GeoPoint::new(rect.x1, rect.y1), policy)?;
        Ok(CellRange { cx0: lo.cx, cy0: lo.cy, cx1: hi.cx, cy1: hi.cy })
    }

    pub fn everything() -> Self {
        CellRange { cx0: i64::MIN, cy0: i64::MIN, cx1: i64::MAX, cy1: i64::MAX }
    }

    pub fn contains(&self, c: &CellIndex) -> bool {
        c.cx >= self.cx0 && c.cx <= self.cx1 && c.cy >= self.cy0 && c.cy <= self.cy1
    }
}

/// Every tunable of event detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterPolicy {
    pub cell_size_m: f64,
    pub linkage_radius_m: f64,
    pub bucket_seconds: Seconds,
    pub threshold_default: u32,
    pub margin_m: f64,
    pub bands: Vec<CountBand>,
    pub policy_id: String,
}

impl Default for ClusterPolicy {
    fn default() -> Self {
        Self {
            cell_size_m: 4.0,
            linkage_radius_m: 10.0,
            bucket_seconds: 300,
            threshold_default: 3,
            margin_m: 2.0,
            bands: default_bands(3),
            policy_id: "default-v1".to_string(),
        }
    }
}

/// Default count bands `[T,4] [5,9] [10,∞)`, trimmed so the first band starts at `T`.
pub fn default_bands(threshold: u32) -> Vec<CountBand> {
    let mut bands = Vec::new();
    let mut lo = threshold;
    for hi in [4, 9] {
        if lo <= hi {
            bands.push(CountBand::bounded(lo, hi));
            lo = hi + 1;
        }
    }
    bands.push(CountBand::open(lo));
    bands
}

impl ClusterPolicy {
    /// Default policy with a different threshold and matching default bands.
    pub fn with_threshold(threshold: u32) -> Self {
        Self { threshold_default: threshold, bands: default_bands(threshold), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPolicy(m));
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return bad(format!("cell_size_m must be > 0, got {}", self.cell_size_m));
        }
        if !(self.linkage_radius_m.is_finite() && self.linkage_radius_m >= self.cell_size_m) {
            return bad(format!("linkage_radius_m ({}) must be >= cell_size_m ({})", self.linkage_radius_m, self.cell_size_m));
        }
        if self.bucket_seconds <= 0 {
            return bad(format!("bucket_seconds must be > 0, got {}", self.bucket_seconds));
        }
        if self.threshold_default < 2 {
            return bad(format!("threshold_default must be >= 2, got {}", self.threshold_default));
        }
        if !(self.margin_m.is_finite() && self.margin_m >= 0.0) {
            return bad(format!("margin_m must be >= 0, got {}", self.margin_m));
        }
        // Bands must partition [threshold_default, inf): contiguous, last one open.
        let mut expect = self.threshold_default;
        for (i, band) in self.bands.iter().enumerate() {
            let last = i + 1 == self.bands.len();
            if band.lo != expect {
                return bad(format!("band {band} does not start at {expect}"));
            }
            match (band.hi, last) {
                (None, true) => {}
                (Some(hi), false) if hi >= band.lo => expect = hi + 1,
                _ => return bad(format!("band {band} breaks the partition")),
            }
        }
        if self.bands.is_empty() {
            return bad("no count bands".to_string());
        }
        Ok(())
    }

    /// Closed extent of a cell in world coordinates.
    pub fn cell_extent(&self, cell: CellIndex) -> Rect {
        let s = self.cell_size_m;
        Rect { x0: cell.cx as f64 * s, y0: cell.cy as f64 * s, x1: (cell.cx + 1) as f64 * s, y1: (cell.cy + 1) as f64 * s }
    }
}

/// Returns `floor(t / bucket_seconds)`.
pub fn bucketize(t: Seconds, policy: &ClusterPolicy) -> Result<TimeBucket> {
    if t < 0 {
        return Err(Error::NegativeTime(t));
    }
    Ok(TimeBucket((t / policy.bucket_seconds) as u64))
}

/// Componentwise floor division by the cell size; boundaries belong to the upper cell.
pub fn cell_of(p: GeoPoint, policy: &ClusterPolicy) -> Result<CellIndex> {
    if !p.is_finite() {
        return Err(Error::NonFinitePoint(p.x, p.y));
    }
    let s = policy.cell_size_m;
    Ok(CellIndex::new((p.x / s).floor() as i64, (p.y / s).floor() as i64))
}

/// The unique policy band containing `n`. Sub-threshold counts are never published.
pub fn count_band(n: u32, policy: &ClusterPolicy) -> Result<CountBand> {
    if n < policy.threshold_default {
        return Err(Error::BelowThreshold { count: n, threshold: policy.threshold_default });
    }
    policy.bands.iter().copied().find(|b| b.contains(n)).ok_or_else(|| Error::InvalidPolicy(format!("no band contains {n}")))
}

/// Exogenous labeling of a region that may lower the notification threshold there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VenueAnnotation {
    pub region: Rect,
    pub threshold_override: u32,
    pub label: String,
}

impl VenueAnnotation {
    pub fn new(region: Rect, threshold_override: u32, label: impl Into<String>) -> Result<Self> {
        let v = Self { region, threshold_override, label: label.into() };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if self.threshold_override < 2 {
            return Err(Error::InvalidGeometry(format!("venue {:?}: threshold_override must be >= 2", self.label)));
        }
        Ok(())
    }
}

/// Content-derived identifier of a cluster event (first 16 bytes of SHA-256).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub [u8; 16]);

impl fmt::Debug for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventId({self})")
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for EventId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bytes = [0u8; 16];
        hex::decode_to_slice(s, &mut bytes).map_err(|e| Error::Parse(format!("event id {s:?}: {e}")))?;
        Ok(EventId(bytes))
    }
}

serde_via_str!(EventId);

/// A published detection.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterEvent {
    pub event_id: EventId,
    pub bucket: TimeBucket,
    pub region: BTreeSet<CellIndex>,
    pub band: CountBand,
    pub policy_id: String,
}

impl ClusterEvent {
    pub fn new(bucket: TimeBucket, region: BTreeSet<CellIndex>, band: CountBand, policy_id: impl Into<String>) -> Self {
        let policy_id = policy_id.into();
        let event_id = Self::content_id(bucket, &region, band, &policy_id);
        Self { event_id, bucket, region, band, policy_id }
    }

    pub fn content_id(bucket: TimeBucket, region: &BTreeSet<CellIndex>, band: CountBand, policy_id: &str) -> EventId {
        let mut h = Sha256::new();
        h.update(format!("bucket={bucket}\n"));
        h.update("cells=");
        for (i, c) in region.iter().enumerate() {
            if i > 0 {
                h.update(";");
            }
            h.update(c.to_string());
        }
        h.update(format!("\nband={band}\npolicy={policy_id}\n"));
        let digest = h.finalize();
        let mut id = [0u8; 16];
        id.copy_from_slice(&digest[..16]);
        EventId(id)
    }

    /// True when the stored id matches the content.
    pub fn id_is_consistent(&self) -> bool {
        self.event_id == Self::content_id(self.bucket, &self.region, self.band, &self.policy_id)
    }

    /// Canonical event order: (bucket, event_id).
    pub fn canonical_key(&self) -> (TimeBucket, EventId) {
        (self.bucket, self.event_id)
    }
}
