//! Executable false-reporting and tracking attacks.
//!
//! Each attack replays a fixed honest world through a fresh pipeline twice,
//! once as baseline and once with the attacker's submissions added, and
//! measures the difference. Runs are seeded, so "events caused" is well defined.

use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::authority::{AuthToken, TestAuthority};
use crate::bulletin::Bulletin;
use crate::client::{assemble_report, check_pairs_from_history, CriticalPeriodConfig, LocationHistory, ReportBatch};
use crate::cluster::Detection;
use crate::error::Result;
use crate::exec::{self, Exec};
use crate::mix::{GatewayConfig, MixGateway, Submission, SubmitReject};
use crate::model::{Anonym, AnonymPair, CellIndex, ClusterPolicy, EventId, GeoPoint, TimeBucket, VenueAnnotation};
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    LoneFalseReport,
    SybilCopresence,
    TrajectoryProbe,
}

impl std::str::FromStr for AttackKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "lone_false_report" | "lone" => Ok(Self::LoneFalseReport),
            "sybil_copresence" | "sybil" => Ok(Self::SybilCopresence),
            "trajectory_probe" | "probe" => Ok(Self::TrajectoryProbe),
            _ => Err(crate::Error::Parse(format!("unknown attack kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Sybil clients to field (sybil attack).
    pub sybil_count: u32,
    /// Valid authorization tokens the attacker holds.
    pub token_budget: u32,
    /// Whether the attacker can report locations it never visited.
    pub spoofing_allowed: bool,
    /// Off-trajectory pairs a lone attacker tries to report.
    pub fabricated: Vec<(GeoPoint, TimeBucket)>,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self { kind, sybil_count: 1, token_budget: 0, spoofing_allowed: false, fabricated: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeVerdict {
    pub cell: CellIndex,
    pub bucket: TimeBucket,
    pub flipped: bool,
    pub target_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeInference {
    pub verdicts: Vec<ProbeVerdict>,
    pub true_positives: u32,
    pub false_positives: u32,
    pub false_negatives: u32,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: AttackKind,
    /// Some published event was generated by a component holding an attacker pair.
    pub success: bool,
    /// Events on the attacked bulletin that are absent from the baseline.
    pub events_caused: Vec<EventId>,
    pub submissions_accepted: u32,
    pub rejections: Vec<String>,
    pub inference: Option<ProbeInference>,
}

/// A fixed honest world an attack is measured against.
#[derive(Debug, Clone)]
pub struct AttackWorld {
    pub honest: Vec<ReportBatch>,
    pub venues: Vec<VenueAnnotation>,
    pub policy: ClusterPolicy,
    pub authority: TestAuthority,
    pub auth_required: bool,
    /// Gateway clock for token expiry.
    pub now: TimeBucket,
    pub seed: u64,
    pub exec: Exec,
}

/// What one seeded run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub bulletin_text: String,
    pub event_ids: BTreeSet<EventId>,
    pub detections: Vec<Detection>,
    pub accepted: u32,
    pub rejections: Vec<SubmitReject>,
}

/// An attacker submission: its pairs and the token it presents, if any.
#[derive(Debug, Clone)]
pub struct Injection {
    pub pairs: Vec<AnonymPair>,
    pub token: Option<AuthToken>,
}

impl AttackWorld {
    pub fn new(honest: Vec<ReportBatch>, policy: ClusterPolicy, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77ac4);
        Self {
            honest,
            venues: Vec::new(),
            policy,
            authority: TestAuthority::generate(&mut rng, 288),
            auth_required: false,
            now: TimeBucket(0),
            seed,
            exec: Exec::default(),
        }
    }

    /// Runs honest reports (each with its own valid token) plus `injections`
    /// through one firing.
    pub fn run(&self, injections: &[Injection]) -> Result<RunResult> {
        let gateway = MixGateway::new(GatewayConfig {
            auth_required: self.auth_required,
            authority_key: Some(self.authority.public_key()),
            policy: self.policy.clone(),
        })?;
        let mut pipe = Pipeline::new(gateway, Bulletin::in_memory(), self.venues.clone())?.with_exec(Exec::Sequential);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        for batch in &self.honest {
            let token = self.authority.issue_token(Anonym::generate(&mut rng), self.now, &mut rng);
            // Honest batches are well-formed by construction; a rejection would be a harness bug.
            pipe.submit(Submission { batch: batch.clone(), token: Some(token) }, self.now)
                .map_err(|r| crate::Error::Pipeline { stage: "honest-submit", reason: r.to_string() })?;
        }
        let mut accepted = 0;
        let mut rejections = Vec::new();
        for inj in injections {
            let s = Submission { batch: ReportBatch { pairs: inj.pairs.clone() }, token: inj.token.clone() };
            match pipe.submit(s, self.now) {
                Ok(_) => accepted += 1,
                Err(r) => rejections.push(r),
            }
        }
        pipe.fire_and_publish(&mut rng)?;

        Ok(RunResult {
            bulletin_text: pipe.bulletin().to_text(),
            event_ids: pipe.bulletin().records().iter().map(|r| r.event.event_id).collect(),
            detections: pipe.published_detections().into_iter().cloned().collect(),
            accepted,
            rejections,
        })
    }

    pub fn baseline(&self) -> Result<RunResult> {
        self.run(&[])
    }

    /// Hands out `budget` valid tokens, then replays the last one (or none) for the rest.
    fn tokens(&self, count: usize, budget: u32, rng: &mut ChaCha8Rng) -> Vec<Option<AuthToken>> {
        let mut out = Vec::with_capacity(count);
        let mut last: Option<AuthToken> = None;
        for i in 0..count {
            if (i as u32) < budget {
                let t = self.authority.issue_token(Anonym::generate(rng), self.now, rng);
                last = Some(t.clone());
                out.push(Some(t));
            } else {
                out.push(last.clone());
            }
        }
        out
    }

    fn outcome(&self, kind: AttackKind, baseline: &RunResult, attacked: &RunResult, attacker: &HashSet<Anonym>) -> AttackOutcome {
        AttackOutcome {
            kind,
            success: attacked.detections.iter().any(|d| d.component.members.iter().any(|m| attacker.contains(&m.anonym))),
            events_caused: attacked.event_ids.difference(&baseline.event_ids).copied().collect(),
            submissions_accepted: attacked.accepted,
            rejections: attacked.rejections.iter().map(SubmitReject::code).collect(),
            inference: None,
        }
    }
}

fn attacker_rng(world: &AttackWorld, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(world.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

/// A single false reporter. Without spoofing it can only report where its
/// own history puts it; fabricated pairs are stopped at the client boundary.
pub fn run_lone_false_report(world: &AttackWorld, attacker: &LocationHistory, spec: &AttackSpec) -> Result<AttackOutcome> {
    let mut rng = attacker_rng(world, 1);
    let baseline = world.baseline()?;
    let policy = &world.policy;

    let pairs: Vec<AnonymPair> = if spec.fabricated.is_empty() {
        let test_time = attacker.samples().last().map_or(0, |s| s.t);
        assemble_report(attacker, test_time, &CriticalPeriodConfig::default(), policy, &mut rng)?.batch.pairs
    } else {
        spec.fabricated.iter().map(|&(p, b)| AnonymPair::new(Anonym::generate(&mut rng), p, b, policy)).collect::<Result<_>>()?
    };

    if !spec.spoofing_allowed && check_pairs_from_history(attacker, &pairs, policy).is_err() {
        let mut out = world.outcome(spec.kind, &baseline, &baseline, &HashSet::new());
        out.rejections.push("spoofed-pair".into());
        return Ok(out);
    }

    let anonyms: HashSet<Anonym> = pairs.iter().map(|p| p.anonym).collect();
    let token = world.tokens(1, spec.token_budget, &mut rng).pop().flatten();
    let attacked = world.run(&[Injection { pairs, token }])?;
    Ok(world.outcome(spec.kind, &baseline, &attacked, &anonyms))
}

/// `spec.sybil_count` fabricated clients, each reporting one pair at
/// `location` in `bucket`. Under authorization only `token_budget` of them
/// hold valid tokens.
pub fn run_sybil_copresence(
    world: &AttackWorld,
    location: GeoPoint,
    bucket: TimeBucket,
    spec: &AttackSpec,
) -> Result<AttackOutcome> {
    let mut rng = attacker_rng(world, 2);
    let baseline = world.baseline()?;
    let tokens = world.tokens(spec.sybil_count as usize, spec.token_budget, &mut rng);
    let injections: Vec<Injection> = tokens
        .into_iter()
        .map(|token| {
            let pair = AnonymPair::new(Anonym::generate(&mut rng), location, bucket, &world.policy)?;
            Ok(Injection { pairs: vec![pair], token })
        })
        .collect::<Result<_>>()?;
    let anonyms: HashSet<Anonym> = injections.iter().flat_map(|i| i.pairs.iter().map(|p| p.anonym)).collect();
    let attacked = world.run(&injections)?;
    Ok(world.outcome(spec.kind, &baseline, &attacked, &anonyms))
}

/// Probes each candidate location-time with one spoofed report and infers
/// the target was there whenever the probe alone creates an event where the
/// baseline had none. The target's whereabouts are ground truth known only
/// to the harness; presence means its reported point for the bucket lies
/// within the linkage radius of the probe.
pub fn run_trajectory_probe(
    world: &AttackWorld,
    target: &LocationHistory,
    candidates: &[(GeoPoint, TimeBucket)],
    spec: &AttackSpec,
) -> Result<AttackOutcome> {
    let policy = &world.policy;
    let baseline = world.baseline()?;
    let mut out = world.outcome(spec.kind, &baseline, &baseline, &HashSet::new());
    if !spec.spoofing_allowed {
        out.rejections = vec!["spoofed-pair".into(); candidates.len()];
        out.inference = Some(summarize(Vec::new()));
        return Ok(out);
    }

    let usable = if world.auth_required { candidates.len().min(spec.token_budget as usize) } else { candidates.len() };
    let probes = &candidates[..usable];
    let runs = exec::map_range(world.exec, probes.len(), |i| -> Result<(ProbeVerdict, RunResult, Anonym)> {
        let (point, bucket) = probes[i];
        let mut rng = attacker_rng(world, 1000 + i as u64);
        let pair = AnonymPair::new(Anonym::generate(&mut rng), point, bucket, policy)?;
        let token = world.tokens(1, 1, &mut rng).pop().flatten();
        let attacked = world.run(&[Injection { pairs: vec![pair], token }])?;

        let caused = attacked.detections.iter().any(|d| d.component.members.iter().any(|m| m.anonym == pair.anonym));
        let covered_before = baseline.detections.iter().any(|d| d.event.bucket == bucket && d.event.region.contains(&pair.cell));
        let target_present =
            target.in_bucket(bucket, policy).last().is_some_and(|s| s.point.within(&point, policy.linkage_radius_m));
        let verdict = ProbeVerdict { cell: pair.cell, bucket, flipped: caused && !covered_before, target_present };
        Ok((verdict, attacked, pair.anonym))
    });

    let mut verdicts = Vec::new();
    let mut caused: BTreeSet<EventId> = BTreeSet::new();
    for r in runs {
        let (verdict, attacked, anonym) = r?;
        out.submissions_accepted += attacked.accepted;
        out.rejections.extend(attacked.rejections.iter().map(SubmitReject::code));
        out.success |= attacked.detections.iter().any(|d| d.component.members.iter().any(|m| m.anonym == anonym));
        caused.extend(attacked.event_ids.difference(&baseline.event_ids));
        verdicts.push(verdict);
    }
    out.rejections.extend(std::iter::repeat_n("no-token-budget".to_string(), candidates.len() - usable));
    out.events_caused = caused.into_iter().collect();
    out.inference = Some(summarize(verdicts));
    Ok(out)
}

fn summarize(verdicts: Vec<ProbeVerdict>) -> ProbeInference {
    let tp = verdicts.iter().filter(|v| v.flipped && v.target_present).count() as u32;
    let fp = verdicts.iter().filter(|v| v.flipped && !v.target_present).count() as u32;
    let fn_ = verdicts.iter().filter(|v| !v.flipped && v.target_present).count() as u32;
    let ratio = |num: u32, den: u32| (den > 0).then(|| num as f64 / den as f64);
    ProbeInference {
        verdicts,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    }
}
