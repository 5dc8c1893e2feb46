//! JSON message schema shared by the gateway and bulletin endpoints.
//! Anonyms are hex, cells `"cx,cy"`, all numbers decimal.

use serde::{Deserialize, Serialize};

use crate::authority::AuthToken;
use crate::client::ReportBatch;
use crate::error::Result;
use crate::mix::{FiringOutput, Submission};
use crate::model::{Anonym, AnonymPair, CellIndex, GeoPoint, TimeBucket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirePair {
    pub anonym: Anonym,
    pub cell: CellIndex,
    pub bucket: TimeBucket,
    pub x: f64,
    pub y: f64,
}

impl From<&AnonymPair> for WirePair {
    fn from(p: &AnonymPair) -> Self {
        Self { anonym: p.anonym, cell: p.cell, bucket: p.bucket, x: p.point.x, y: p.point.y }
    }
}

impl From<&WirePair> for AnonymPair {
    fn from(w: &WirePair) -> Self {
        AnonymPair { anonym: w.anonym, cell: w.cell, point: GeoPoint::new(w.x, w.y), bucket: w.bucket }
    }
}

/// Body of `POST /submit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub pairs: Vec<WirePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

impl SubmitRequest {
    pub fn from_submission(s: &Submission) -> Self {
        Self { pairs: s.batch.pairs.iter().map(WirePair::from).collect(), token: s.token.as_ref().map(AuthToken::to_hex) }
    }

    pub fn into_submission(self) -> Result<Submission> {
        let token = self.token.as_deref().map(AuthToken::from_hex).transpose()?;
        Ok(Submission { batch: ReportBatch { pairs: self.pairs.iter().map(AnonymPair::from).collect() }, token })
    }
}

/// Response of `POST /submit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffered: Option<usize>,
}

/// Canonicalized firing output. Carries only pairs and the firing counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireFiring {
    pub fire_index: u64,
    pub pairs: Vec<WirePair>,
}

impl From<&FiringOutput> for WireFiring {
    fn from(f: &FiringOutput) -> Self {
        let canon = f.canonicalized();
        Self { fire_index: canon.fire_index, pairs: canon.pairs.iter().map(WirePair::from).collect() }
    }
}
