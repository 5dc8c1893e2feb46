//! Subcommand bodies, kept out of `main` so tests can call them directly.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context};
use cluster_notify::adversary::{
    run_lone_false_report, run_sybil_copresence, run_trajectory_probe, AttackKind, AttackOutcome, AttackSpec, AttackWorld,
};
use cluster_notify::bulletin::read_bulletin_events;
use cluster_notify::client::{match_exposures, ExposureNotice, LocationHistory};
use cluster_notify::exec::Exec;
use cluster_notify::model::{bucketize, ClusterPolicy, GeoPoint, TimeBucket};
use cluster_notify::scenario::{assemble_reports, generate_scenario, scenario_authority, ScenarioConfig, ScenarioWorld};

pub const OUTCOME_FILE: &str = "outcome.json";

pub fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Notices for one history file against one bulletin file.
pub fn match_files(history: &Path, events: &Path, policy: &ClusterPolicy) -> anyhow::Result<Vec<ExposureNotice>> {
    let text = std::fs::read_to_string(history).with_context(|| format!("reading {}", history.display()))?;
    let history = LocationHistory::parse(&text)?;
    let events = read_bulletin_events(events).with_context(|| format!("reading {}", events.display()))?;
    Ok(match_exposures(&history, &events, policy))
}

pub fn notices_to_jsonl(notices: &[ExposureNotice]) -> anyhow::Result<String> {
    let mut out = String::new();
    for n in notices {
        out.push_str(&serde_json::to_string(n)?);
        out.push('\n');
    }
    Ok(out)
}

/// Knobs the `attack` subcommand exposes on top of the scenario config.
#[derive(Debug, Clone, Default)]
pub struct AttackOptions {
    pub sybils: Option<u32>,
    pub tokens: Option<u32>,
    pub spoof: Option<bool>,
}

/// The gathering the attack aims at: the first one scheduled, or nothing.
fn target_gathering(world: &ScenarioWorld) -> Option<usize> {
    (0..world.gatherings.len()).min_by_key(|&i| (world.gatherings[i].start, i))
}

/// Runs one attack against the honest reports of the configured scenario.
pub fn attack(cfg: &ScenarioConfig, kind: AttackKind, opts: &AttackOptions) -> anyhow::Result<AttackOutcome> {
    let world = generate_scenario(cfg)?;
    let reports = assemble_reports(&world, cfg, Exec::default())?;
    let reporters: BTreeSet<u32> = reports.iter().map(|r| r.agent).collect();
    let policy = &cfg.policy;

    let mut aw = AttackWorld::new(reports.into_iter().map(|r| r.batch).collect(), policy.clone(), cfg.seed);
    aw.auth_required = cfg.auth_required;
    aw.authority = scenario_authority(cfg.seed);
    aw.now = bucketize(world.horizon_s, policy)?;

    let gathering = target_gathering(&world);
    let mut spec = AttackSpec::new(kind);
    match kind {
        AttackKind::LoneFalseReport => {
            // An attendee who never reported pretends to be positive.
            let attendees = gathering.map(|g| world.gatherings[g].attendees.clone()).unwrap_or_default();
            let attacker = attendees
                .iter()
                .chain(world.agents.iter().map(|a| &a.id))
                .find(|a| !reporters.contains(a))
                .copied()
                .context("every agent already reported")?;
            spec.token_budget = opts.tokens.unwrap_or(1);
            spec.spoofing_allowed = opts.spoof.unwrap_or(false);
            Ok(run_lone_false_report(&aw, &world.agents[attacker as usize].history(world.horizon_s), &spec)?)
        }
        AttackKind::SybilCopresence => {
            let (location, bucket) = match gathering {
                Some(g) => {
                    let g = &world.gatherings[g];
                    (world.venues[g.venue].center(), bucketize((g.start + g.end) / 2, policy)?)
                }
                None => (world.venues[0].center(), TimeBucket(0)),
            };
            spec.sybil_count = opts.sybils.unwrap_or(policy.threshold_default);
            spec.token_budget = opts.tokens.unwrap_or(spec.sybil_count);
            spec.spoofing_allowed = opts.spoof.unwrap_or(true);
            Ok(run_sybil_copresence(&aw, location, bucket, &spec)?)
        }
        AttackKind::TrajectoryProbe => {
            let Some(g) = gathering else { bail!("trajectory probe needs a scheduled gathering") };
            let g = &world.gatherings[g];
            let target = g.attendees.iter().find(|a| reporters.contains(a)).or(g.attendees.first()).copied();
            let target = &world.agents[target.context("gathering has no attendees")? as usize];
            let history = target.history(world.horizon_s);
            // The suspected route: the target's spot in every gathering bucket,
            // plus the same buckets at each other venue as decoys.
            let mut candidates: Vec<(GeoPoint, TimeBucket)> = Vec::new();
            for b in bucketize(g.start, policy)?.0..=bucketize(g.end, policy)?.0 {
                let bucket = TimeBucket(b);
                if let Some(s) = history.in_bucket(bucket, policy).last() {
                    candidates.push((s.point, bucket));
                }
                for (vi, v) in world.venues.iter().enumerate() {
                    if vi != g.venue {
                        candidates.push((v.center(), bucket));
                    }
                }
            }
            spec.spoofing_allowed = opts.spoof.unwrap_or(true);
            spec.token_budget = opts.tokens.unwrap_or(candidates.len() as u32);
            Ok(run_trajectory_probe(&aw, &history, &candidates, &spec)?)
        }
    }
}

pub fn write_outcome(outcome: &AttackOutcome, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(OUTCOME_FILE), serde_json::to_string_pretty(outcome)? + "\n")?;
    Ok(())
}
