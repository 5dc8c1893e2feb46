//! Append-only public bulletin of cluster events.
//!
//! The on-disk format is one JSON object per line, fields in the order
//! `event_id, bucket, cells, band, policy_id, fire_index, seq`, sorted by
//! `seq`. The file alone is enough for a non-participant to match events
//! against their own history.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CellIndex, CellRange, ClusterEvent, CountBand, EventId, TimeBucket};
use crate::union_find::UnionFind;

pub const DEFAULT_RECURRENCE_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BulletinRecord {
    pub event: ClusterEvent,
    pub fire_index: u64,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub event_id: EventId,
    pub bucket: TimeBucket,
    pub cells: Vec<CellIndex>,
    pub band: CountBand,
    pub policy_id: String,
    pub fire_index: u64,
    pub seq: u64,
}

impl From<&BulletinRecord> for RecordLine {
    fn from(r: &BulletinRecord) -> Self {
        Self {
            event_id: r.event.event_id,
            bucket: r.event.bucket,
            cells: r.event.region.iter().copied().collect(),
            band: r.event.band,
            policy_id: r.event.policy_id.clone(),
            fire_index: r.fire_index,
            seq: r.seq,
        }
    }
}

impl TryFrom<RecordLine> for BulletinRecord {
    type Error = Error;

    fn try_from(l: RecordLine) -> Result<Self> {
        let region: BTreeSet<CellIndex> = l.cells.into_iter().collect();
        if region.is_empty() {
            return Err(Error::Parse(format!("record {}: empty region", l.seq)));
        }
        let event = ClusterEvent::new(l.bucket, region, l.band, l.policy_id);
        if event.event_id != l.event_id {
            return Err(Error::Parse(format!("record {}: event_id does not match content", l.seq)));
        }
        Ok(BulletinRecord { event, fire_index: l.fire_index, seq: l.seq })
    }
}

impl BulletinRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(&RecordLine::from(self)).expect("record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str::<RecordLine>(line)?.try_into()
    }
}

/// Parses a bulletin file body; `seq` must be strictly increasing.
pub fn parse_bulletin(text: &str) -> Result<Vec<BulletinRecord>> {
    let mut out: Vec<BulletinRecord> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r = BulletinRecord::from_line(line)?;
        if out.last().is_some_and(|prev| prev.seq >= r.seq) {
            return Err(Error::Parse(format!("bulletin seq {} out of order", r.seq)));
        }
        out.push(r);
    }
    Ok(out)
}

/// Reads the events of a bulletin file with no service involved.
pub fn read_bulletin_events(path: &Path) -> Result<Vec<ClusterEvent>> {
    Ok(parse_bulletin(&std::fs::read_to_string(path)?)?.into_iter().map(|r| r.event).collect())
}

#[derive(Debug, Default)]
pub struct Bulletin {
    records: Vec<BulletinRecord>,
    ids: HashSet<EventId>,
    by_bucket: BTreeMap<TimeBucket, Vec<usize>>,
    sink: Option<(PathBuf, File)>,
}

impl Bulletin {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a bulletin file, rebuilding the index from its contents.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let existing = match std::fs::read_to_string(&path) {
            Ok(text) => parse_bulletin(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut b = Self { sink: Some((path, file)), ..Self::default() };
        for r in existing {
            b.index(r);
        }
        Ok(b)
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    fn index(&mut self, r: BulletinRecord) {
        self.ids.insert(r.event.event_id);
        self.by_bucket.entry(r.event.bucket).or_default().push(self.records.len());
        self.records.push(r);
    }

    pub fn records(&self) -> &[BulletinRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: &EventId) -> bool {
        self.ids.contains(id)
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq)
    }

    pub fn events(&self) -> Vec<ClusterEvent> {
        self.records.iter().map(|r| r.event.clone()).collect()
    }

    /// Appends every event not yet published, in canonical order, with
    /// consecutive `seq` numbers starting after the last one. The whole
    /// firing is written in one call; nothing is indexed unless the write succeeds.
    pub fn publish(&mut self, events: &[ClusterEvent], fire_index: u64) -> Result<Vec<BulletinRecord>> {
        let mut fresh: Vec<&ClusterEvent> = Vec::new();
        let mut batch_ids = HashSet::new();
        for e in events {
            if !self.ids.contains(&e.event_id) && batch_ids.insert(e.event_id) {
                fresh.push(e);
            }
        }
        fresh.sort_by_key(|e| e.canonical_key());

        let first = self.last_seq() + 1;
        let appended: Vec<BulletinRecord> = fresh
            .into_iter()
            .enumerate()
            .map(|(i, e)| BulletinRecord { event: e.clone(), fire_index, seq: first + i as u64 })
            .collect();
        if appended.is_empty() {
            return Ok(appended);
        }

        if let Some((_, file)) = self.sink.as_mut() {
            let body: String = appended.iter().map(|r| r.to_line() + "\n").collect();
            file.write_all(body.as_bytes())?;
            file.flush()?;
        }
        for r in &appended {
            self.index(r.clone());
        }
        Ok(appended)
    }

    /// Records with `seq > since_seq`.
    pub fn since(&self, since_seq: u64) -> &[BulletinRecord] {
        let start = self.records.partition_point(|r| r.seq <= since_seq);
        &self.records[start..]
    }

    /// Records whose region touches `cells` and whose bucket lies in
    /// `[lo, hi]`, sorted by (bucket, event_id).
    pub fn query(&self, cells: &CellRange, lo: TimeBucket, hi: TimeBucket) -> Result<Vec<&BulletinRecord>> {
        if lo > hi {
            return Err(Error::InvertedRange { lo: lo.0, hi: hi.0 });
        }
        let mut out: Vec<&BulletinRecord> = self
            .by_bucket
            .range(lo..=hi)
            .flat_map(|(_, idx)| idx.iter().map(|&i| &self.records[i]))
            .filter(|r| r.event.region.iter().any(|c| cells.contains(c)))
            .collect();
        out.sort_by_key(|r| r.event.canonical_key());
        Ok(out)
    }

    /// Serialized bulletin, identical to the file contents.
    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }
}

/// A location group with repeated cluster events, for public-health review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrenceFlag {
    pub region_key: String,
    pub event_ids: Vec<EventId>,
    pub distinct_buckets: u32,
}

fn region_key(cells: &BTreeSet<CellIndex>) -> String {
    let mut h = Sha256::new();
    for c in cells {
        h.update(c.to_string());
        h.update(";");
    }
    hex::encode(&h.finalize()[..16])
}

/// Groups events whose regions share a cell (transitively) and flags the
/// groups spanning at least `threshold` distinct buckets.
pub fn flag_recurrent(records: &[BulletinRecord], threshold: u32) -> Vec<RecurrenceFlag> {
    let mut uf = UnionFind::new(records.len());
    let mut owner: BTreeMap<CellIndex, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        for c in &r.event.region {
            match owner.get(c) {
                Some(&j) => {
                    uf.union(i, j);
                }
                None => {
                    owner.insert(*c, i);
                }
            }
        }
    }

    let mut flags: Vec<RecurrenceFlag> = uf
        .groups()
        .into_iter()
        .filter_map(|group| {
            let buckets: BTreeSet<TimeBucket> = group.iter().map(|&i| records[i].event.bucket).collect();
            if (buckets.len() as u32) < threshold {
                return None;
            }
            let cells: BTreeSet<CellIndex> = group.iter().flat_map(|&i| records[i].event.region.iter().copied()).collect();
            let mut events: Vec<&ClusterEvent> = group.iter().map(|&i| &records[i].event).collect();
            events.sort_by_key(|e| e.canonical_key());
            Some(RecurrenceFlag {
                region_key: region_key(&cells),
                event_ids: events.iter().map(|e| e.event_id).collect(),
                distinct_buckets: buckets.len() as u32,
            })
        })
        .collect();
    flags.sort_by(|a, b| a.region_key.cmp(&b.region_key));
    flags
}
