//! Association-protecting submission: a single batching mix.
//!
//! Batches are buffered for a firing interval and released as one shuffled
//! multiset of pairs. Tokens, submitter identity, arrival order and batch
//! boundaries are dropped at the gateway.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::authority::{verify_token, AuthReject, AuthToken, AuthorityKey, NonceLedger};
use crate::client::{BatchDefect, ReportBatch};
use crate::error::{Error, Result};
use crate::model::{canonical_sort, AnonymPair, ClusterPolicy, TimeBucket};
use crate::wire::WireFiring;

/// Default firing interval in seconds.
pub const DEFAULT_FIRE_INTERVAL_SECONDS: i64 = 3600;

#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub batch: ReportBatch,
    pub token: Option<AuthToken>,
}

impl Submission {
    pub fn new(batch: ReportBatch) -> Self {
        Self { batch, token: None }
    }

    pub fn with_token(batch: ReportBatch, token: AuthToken) -> Self {
        Self { batch, token: Some(token) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitReject {
    #[error("authorization required")]
    AuthMissing,
    #[error("authorization invalid: {0}")]
    AuthInvalid(AuthReject),
    #[error("malformed batch: {0}")]
    MalformedBatch(BatchDefect),
}

impl SubmitReject {
    /// Stable reason code used on the wire.
    pub fn code(&self) -> String {
        match self {
            SubmitReject::AuthMissing => "auth-missing".into(),
            SubmitReject::AuthInvalid(r) => format!("auth-invalid:{}", r.code()),
            SubmitReject::MalformedBatch(_) => "malformed-batch".into(),
        }
    }
}

/// One mix release.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringOutput {
    pub fire_index: u64,
    pub pairs: Vec<AnonymPair>,
}

impl FiringOutput {
    /// Same multiset sorted by (bucket, cx, cy, anonym hex).
    pub fn canonicalized(&self) -> FiringOutput {
        let mut pairs = self.pairs.clone();
        canonical_sort(&mut pairs);
        FiringOutput { fire_index: self.fire_index, pairs }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&WireFiring::from(self)).expect("firing output serializes")
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub auth_required: bool,
    pub authority_key: Option<AuthorityKey>,
    pub policy: ClusterPolicy,
}

#[derive(Debug, Default)]
struct GatewayState {
    ledger: NonceLedger,
    buffer: Vec<AnonymPair>,
    fire_index: u64,
}

/// Thread-safe gateway: `submit` and `fire` serialize on one lock, so a
/// submission lands entirely before or entirely after any firing.
#[derive(Debug)]
pub struct MixGateway {
    config: GatewayConfig,
    state: Mutex<GatewayState>,
}

impl MixGateway {
    pub fn new(config: GatewayConfig) -> Result<Self> {
        config.policy.validate()?;
        if config.auth_required && config.authority_key.is_none() {
            return Err(Error::InvalidConfig("auth_required without an authority public key".into()));
        }
        Ok(Self { config, state: Mutex::new(GatewayState::default()) })
    }

    /// Gateway without authorization.
    pub fn open(policy: ClusterPolicy) -> Result<Self> {
        Self::new(GatewayConfig { auth_required: false, authority_key: None, policy })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn buffered(&self) -> usize {
        self.state.lock().unwrap().buffer.len()
    }

    /// Accepts or rejects a whole batch. Batch shape is checked before the
    /// token so a malformed batch never spends a nonce. Returns the number
    /// of pairs buffered.
    pub fn submit(&self, submission: Submission, now: TimeBucket) -> Result<usize, SubmitReject> {
        let Submission { batch, token } = submission;
        batch.validate(&self.config.policy).map_err(SubmitReject::MalformedBatch)?;

        let mut state = self.state.lock().unwrap();
        if self.config.auth_required {
            let token = token.ok_or(SubmitReject::AuthMissing)?;
            let key = self.config.authority_key.as_ref().expect("checked in new");
            verify_token(&token, now, &mut state.ledger, key).map_err(SubmitReject::AuthInvalid)?;
        }
        let n = batch.pairs.len();
        state.buffer.extend(batch.pairs);
        Ok(n)
    }

    /// Emits every buffered pair in uniformly random order and clears the buffer.
    pub fn fire<R: Rng + ?Sized>(&self, rng: &mut R) -> FiringOutput {
        let mut state = self.state.lock().unwrap();
        let mut pairs = std::mem::take(&mut state.buffer);
        pairs.shuffle(rng);
        let out = FiringOutput { fire_index: state.fire_index, pairs };
        state.fire_index += 1;
        out
    }
}
