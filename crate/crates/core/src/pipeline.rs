//! Gateway → cluster engine → bulletin, driven one firing at a time.
//!
//! Reports covering the same bucket can arrive in different firings, so
//! the engine keeps every fired pair and re-clusters each bucket a firing
//! touches. Events already on the bulletin are not republished.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;

use crate::bulletin::{Bulletin, BulletinRecord};
use crate::cluster::{detect_bucket, Detection};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::mix::{FiringOutput, MixGateway, Submission, SubmitReject};
use crate::model::{AnonymPair, ClusterPolicy, EventId, TimeBucket, VenueAnnotation};

#[derive(Debug)]
pub struct FiringReport {
    pub output: FiringOutput,
    pub detections: Vec<Detection>,
    pub published: Vec<BulletinRecord>,
}

#[derive(Debug)]
pub struct Pipeline {
    gateway: MixGateway,
    bulletin: Bulletin,
    venues: Vec<VenueAnnotation>,
    store: BTreeMap<TimeBucket, Vec<AnonymPair>>,
    detections: HashMap<EventId, Detection>,
    exec: Exec,
}

impl Pipeline {
    pub fn new(gateway: MixGateway, bulletin: Bulletin, venues: Vec<VenueAnnotation>) -> Result<Self> {
        for v in &venues {
            v.validate()?;
        }
        Ok(Self { gateway, bulletin, venues, store: BTreeMap::new(), detections: HashMap::new(), exec: Exec::default() })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn policy(&self) -> &ClusterPolicy {
        &self.gateway.config().policy
    }

    pub fn gateway(&self) -> &MixGateway {
        &self.gateway
    }

    pub fn bulletin(&self) -> &Bulletin {
        &self.bulletin
    }

    pub fn into_bulletin(self) -> Bulletin {
        self.bulletin
    }

    pub fn venues(&self) -> &[VenueAnnotation] {
        &self.venues
    }

    pub fn submit(&self, submission: Submission, now: TimeBucket) -> Result<usize, SubmitReject> {
        self.gateway.submit(submission, now)
    }

    /// The detection behind a published event.
    pub fn detection(&self, id: &EventId) -> Option<&Detection> {
        self.detections.get(id)
    }

    /// Detections behind every published event, in bulletin order.
    pub fn published_detections(&self) -> Vec<&Detection> {
        self.bulletin.records().iter().filter_map(|r| self.detections.get(&r.event.event_id)).collect()
    }

    pub fn stored_pairs(&self) -> impl Iterator<Item = &AnonymPair> {
        self.store.values().flatten()
    }

    pub fn fire_and_publish<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<FiringReport> {
        let output = self.gateway.fire(rng);
        let touched: BTreeSet<TimeBucket> = output.pairs.iter().map(|p| p.bucket).collect();
        for p in &output.pairs {
            self.store.entry(p.bucket).or_default().push(*p);
        }

        let groups: Vec<&Vec<AnonymPair>> = touched.iter().map(|b| &self.store[b]).collect();
        let (venues, policy) = (&self.venues, &self.gateway.config().policy);
        let detections: Vec<Detection> =
            exec::map(self.exec, &groups, |g| detect_bucket(g, venues, policy)).into_iter().flatten().collect();

        let events: Vec<_> = detections.iter().map(|d| d.event.clone()).collect();
        let published = self
            .bulletin
            .publish(&events, output.fire_index)
            .map_err(|e| Error::Pipeline { stage: "publish", reason: e.to_string() })?;
        for d in &detections {
            if published.iter().any(|r| r.event.event_id == d.event.event_id) {
                self.detections.insert(d.event.event_id, d.clone());
            }
        }
        Ok(FiringReport { output, detections, published })
    }
}
