//! Synthetic world, epidemic and testing generator plus the end-to-end
//! driver and its evaluation against ground truth.
//!
//! Agents live alone at homes spaced more than the linkage radius apart and
//! leave only for scheduled gatherings at venues. Spread happens at
//! gatherings: every infectious attendee infects a negative-binomial number
//! of copresent susceptibles. Tests follow a daily schedule with configured
//! sensitivity, specificity and result delay; each agent reports on its
//! first positive result.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::authority::TestAuthority;
use crate::bulletin::{parse_bulletin, Bulletin};
use crate::client::{
    assemble_report, match_exposures, CriticalPeriodConfig, ExposureNotice, LocationHistory, ReportBatch, Sample, DAY_SECONDS,
    SAMPLE_INTERVAL_SECONDS,
};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::mix::{GatewayConfig, MixGateway, Submission, DEFAULT_FIRE_INTERVAL_SECONDS};
use crate::model::{bucketize, Anonym, ClusterEvent, ClusterPolicy, GeoPoint, Rect, Seconds, TimeBucket};
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub n_agents: u32,
    pub n_venues: u32,
    pub venue_size_min_m: f64,
    pub venue_size_max_m: f64,
    pub movement_speed_mps: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width_m: 1000.0,
            height_m: 1000.0,
            n_agents: 500,
            n_venues: 10,
            venue_size_min_m: 4.0,
            venue_size_max_m: 7.0,
            movement_speed_mps: 1.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatheringSpec {
    pub venue: u32,
    pub start_s: Seconds,
    pub duration_s: Seconds,
    pub attendees: u32,
    /// Attendees drawn from the initially infected.
    #[serde(default)]
    pub infected_attendees: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfectionConfig {
    pub transmission_probability: f64,
    pub overdispersion_k: f64,
    pub initial_infected: u32,
}

impl Default for InfectionConfig {
    fn default() -> Self {
        Self { transmission_probability: 0.1, overdispersion_k: 0.1, initial_infected: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestingConfig {
    pub daily_test_probability: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub result_delay_s: Seconds,
    /// Tests are drawn on days `first_day..=last_day`; the run ends after the last result.
    pub first_day: u32,
    pub last_day: u32,
    pub lookback_s: Seconds,
}

impl Default for TestingConfig {
    fn default() -> Self {
        Self {
            daily_test_probability: 0.3,
            sensitivity: 0.8,
            specificity: 0.99,
            result_delay_s: 1800,
            first_day: 1,
            last_day: 3,
            lookback_s: CriticalPeriodConfig::default().lookback_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub auth_required: bool,
    pub mix_fire_interval_s: Seconds,
    pub world: WorldConfig,
    pub gatherings: Vec<GatheringSpec>,
    pub infection: InfectionConfig,
    pub testing: TestingConfig,
    pub policy: ClusterPolicy,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            auth_required: false,
            mix_fire_interval_s: DEFAULT_FIRE_INTERVAL_SECONDS,
            world: WorldConfig::default(),
            gatherings: Vec::new(),
            infection: InfectionConfig::default(),
            testing: TestingConfig::default(),
            policy: ClusterPolicy::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn critical_period(&self) -> CriticalPeriodConfig {
        CriticalPeriodConfig { lookback_seconds: self.testing.lookback_s }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.policy.validate()?;
        let w = &self.world;
        let t = &self.testing;
        for (name, p) in [
            ("transmission_probability", self.infection.transmission_probability),
            ("daily_test_probability", t.daily_test_probability),
            ("sensitivity", t.sensitivity),
            ("specificity", t.specificity),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0,1], got {p}"));
            }
        }
        if !(w.width_m > 0.0 && w.height_m > 0.0 && w.movement_speed_mps > 0.0) {
            return bad("world size and movement speed must be positive".into());
        }
        if w.n_agents == 0 || w.n_venues == 0 {
            return bad("n_agents and n_venues must be positive".into());
        }
        if !(w.venue_size_min_m > 0.0 && w.venue_size_min_m <= w.venue_size_max_m) {
            return bad("venue size range must satisfy 0 < min <= max".into());
        }
        if w.venue_size_max_m >= w.width_m.min(w.height_m) {
            return bad("venues do not fit in the world".into());
        }
        if w.n_venues as f64 * w.venue_size_max_m * w.venue_size_max_m > w.width_m * w.height_m {
            return bad("venues exceed the world area".into());
        }
        if self.infection.overdispersion_k <= 0.0 {
            return bad("overdispersion_k must be > 0".into());
        }
        if self.infection.initial_infected > w.n_agents {
            return bad("initial_infected exceeds n_agents".into());
        }
        if self.mix_fire_interval_s <= 0 || t.result_delay_s < 0 || t.lookback_s <= 0 {
            return bad("intervals must be positive".into());
        }
        if t.first_day > t.last_day {
            return bad("testing.first_day after last_day".into());
        }
        for (i, g) in self.gatherings.iter().enumerate() {
            if g.venue >= w.n_venues {
                return bad(format!("gathering {i}: venue {} out of range", g.venue));
            }
            if g.start_s < 0 || g.duration_s <= 0 {
                return bad(format!("gathering {i}: needs start >= 0 and positive duration"));
            }
            if g.attendees == 0 || g.attendees > w.n_agents || g.infected_attendees > g.attendees {
                return bad(format!("gathering {i}: attendee counts out of range"));
            }
            if g.infected_attendees > self.infection.initial_infected {
                return bad(format!("gathering {i}: more infected attendees than initially infected agents"));
            }
        }
        Ok(())
    }
}

/// One trip: leave home, sit at `seat` during the gathering, walk back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub gathering: usize,
    pub seat: GeoPoint,
    pub depart: Seconds,
    pub arrive: Seconds,
    pub leave: Seconds,
    pub back: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u32,
    pub home: GeoPoint,
    pub visits: Vec<Visit>,
}

fn lerp(a: GeoPoint, b: GeoPoint, f: f64) -> GeoPoint {
    GeoPoint::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
}

impl Agent {
    pub fn position_at(&self, t: Seconds) -> GeoPoint {
        let i = self.visits.partition_point(|v| v.back < t);
        let Some(v) = self.visits.get(i).filter(|v| v.depart <= t) else {
            return self.home;
        };
        if t < v.arrive {
            lerp(self.home, v.seat, (t - v.depart) as f64 / (v.arrive - v.depart).max(1) as f64)
        } else if t <= v.leave {
            v.seat
        } else if t >= v.back {
            self.home
        } else {
            lerp(v.seat, self.home, (t - v.leave) as f64 / (v.back - v.leave).max(1) as f64)
        }
    }

    fn is_free(&self, from: Seconds, to: Seconds) -> bool {
        self.visits.iter().all(|v| v.back < from || v.depart > to)
    }

    /// One sample per [`SAMPLE_INTERVAL_SECONDS`] over `[0, horizon)`.
    pub fn history(&self, horizon: Seconds) -> LocationHistory {
        let samples =
            (0..horizon).step_by(SAMPLE_INTERVAL_SECONDS as usize).map(|t| Sample { t, point: self.position_at(t) }).collect();
        LocationHistory::new(samples).expect("sampled in time order")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gathering {
    pub venue: usize,
    pub start: Seconds,
    pub end: Seconds,
    pub attendees: Vec<u32>,
    /// Attendees already infected when the gathering started.
    pub infectious_attendees: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infection {
    pub agent: u32,
    pub infected_at: Seconds,
    pub source_gathering: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub agent: u32,
    pub test_time: Seconds,
    pub result_time: Seconds,
    pub positive: bool,
    pub infected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioWorld {
    pub venues: Vec<Rect>,
    pub agents: Vec<Agent>,
    pub gatherings: Vec<Gathering>,
    pub infections: Vec<Infection>,
    pub tests: Vec<TestResult>,
    pub horizon_s: Seconds,
}

impl ScenarioWorld {
    pub fn infected_at(&self) -> Vec<Option<Seconds>> {
        let mut out = vec![None; self.agents.len()];
        for inf in &self.infections {
            out[inf.agent as usize] = Some(inf.infected_at);
        }
        out
    }

    /// First positive result per agent, in (result_time, agent) order.
    pub fn first_positives(&self) -> Vec<&TestResult> {
        let mut seen = HashSet::new();
        let mut tests: Vec<&TestResult> = self.tests.iter().filter(|t| t.positive).collect();
        tests.sort_by_key(|t| (t.test_time, t.agent));
        let mut firsts: Vec<&TestResult> = tests.into_iter().filter(|t| seen.insert(t.agent)).collect();
        firsts.sort_by_key(|t| (t.result_time, t.agent));
        firsts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world serializes")
    }
}

fn sample_negative_binomial<R: Rng + ?Sized>(mean: f64, k: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let lambda = Gamma::new(k, mean / k).expect("positive gamma parameters").sample(rng);
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map_or(0, |p| p.sample(rng) as u64)
}

/// Builds the world deterministically from `cfg.seed`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<ScenarioWorld> {
    cfg.validate()?;
    let w = &cfg.world;
    let eps = cfg.policy.linkage_radius_m;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let infeasible = |m: &str| Error::InvalidConfig(format!("infeasible scenario: {m}"));

    // Venues, pairwise disjoint with a linkage-radius gap.
    let mut venues: Vec<Rect> = Vec::new();
    for _ in 0..w.n_venues {
        let placed = (0..10_000).find_map(|_| {
            let vw = rng.random_range(w.venue_size_min_m..=w.venue_size_max_m);
            let vh = rng.random_range(w.venue_size_min_m..=w.venue_size_max_m);
            let x0 = rng.random_range(0.0..=w.width_m - vw);
            let y0 = rng.random_range(0.0..=w.height_m - vh);
            let r = Rect { x0, y0, x1: x0 + vw, y1: y0 + vh };
            let grown = Rect { x0: x0 - eps, y0: y0 - eps, x1: r.x1 + eps, y1: r.y1 + eps };
            venues.iter().all(|v| !v.intersects(&grown)).then_some(r)
        });
        venues.push(placed.ok_or_else(|| infeasible("cannot place venues disjointly"))?);
    }

    // Single-person homes, more than the linkage radius from each other and from venues.
    let spacing = eps + 1.0;
    let mut grid: HashMap<(i64, i64), Vec<GeoPoint>> = HashMap::new();
    let key = |p: &GeoPoint| ((p.x / spacing).floor() as i64, (p.y / spacing).floor() as i64);
    let mut homes = Vec::with_capacity(w.n_agents as usize);
    for _ in 0..w.n_agents {
        let home = (0..500).find_map(|_| {
            let p = GeoPoint::new(rng.random_range(0.0..w.width_m), rng.random_range(0.0..w.height_m));
            if venues.iter().any(|v| v.distance_to(&p) <= spacing) {
                return None;
            }
            let (gx, gy) = key(&p);
            let crowded = (-1..=1).any(|dx| {
                (-1..=1).any(|dy| grid.get(&(gx + dx, gy + dy)).is_some_and(|v| v.iter().any(|q| q.within(&p, spacing))))
            });
            (!crowded).then_some(p)
        });
        let home = home.ok_or_else(|| infeasible("world too small for the homes"))?;
        grid.entry(key(&home)).or_default().push(home);
        homes.push(home);
    }
    let mut agents: Vec<Agent> =
        homes.into_iter().enumerate().map(|(i, home)| Agent { id: i as u32, home, visits: Vec::new() }).collect();

    let mut infected_at: Vec<Option<Seconds>> = vec![None; agents.len()];
    let mut infections = Vec::new();
    let mut ids: Vec<u32> = (0..w.n_agents).collect();
    ids.shuffle(&mut rng);
    let initial: Vec<u32> = ids[..cfg.infection.initial_infected as usize].to_vec();
    for &a in &initial {
        infected_at[a as usize] = Some(0);
        infections.push(Infection { agent: a, infected_at: 0, source_gathering: None });
    }

    // Gatherings in start order: draw attendees among free agents, then spread.
    let mut order: Vec<usize> = (0..cfg.gatherings.len()).collect();
    order.sort_by_key(|&i| (cfg.gatherings[i].start_s, i));
    let mut gatherings: Vec<Option<Gathering>> = vec![None; cfg.gatherings.len()];
    for gi in order {
        let spec = &cfg.gatherings[gi];
        let venue = venues[spec.venue as usize];
        let (start, end) = (spec.start_s, spec.start_s + spec.duration_s);

        let try_seat = |agent: &mut Agent, rng: &mut ChaCha8Rng| -> bool {
            let seat = GeoPoint::new(rng.random_range(venue.x0..=venue.x1), rng.random_range(venue.y0..=venue.y1));
            let travel = (agent.home.distance(&seat) / w.movement_speed_mps).ceil() as Seconds;
            let visit = Visit { gathering: gi, seat, depart: start - travel, arrive: start, leave: end, back: end + travel };
            if visit.depart < 0 || !agent.is_free(visit.depart, visit.back) {
                return false;
            }
            let at = agent.visits.partition_point(|v| v.depart < visit.depart);
            agent.visits.insert(at, visit);
            true
        };

        let mut attendees: Vec<u32> = Vec::new();
        let mut pool = initial.clone();
        pool.shuffle(&mut rng);
        for a in pool {
            if attendees.len() as u32 >= spec.infected_attendees {
                break;
            }
            if try_seat(&mut agents[a as usize], &mut rng) {
                attendees.push(a);
            }
        }
        if (attendees.len() as u32) < spec.infected_attendees {
            return Err(infeasible("not enough free infected agents for a planted gathering"));
        }
        let mut pool: Vec<u32> = (0..w.n_agents).collect();
        pool.shuffle(&mut rng);
        for a in pool {
            if attendees.len() as u32 >= spec.attendees {
                break;
            }
            if !attendees.contains(&a) && try_seat(&mut agents[a as usize], &mut rng) {
                attendees.push(a);
            }
        }
        attendees.sort_unstable();

        let infectious: Vec<u32> =
            attendees.iter().copied().filter(|&a| infected_at[a as usize].is_some_and(|t| t <= start)).collect();
        let mut susceptible: Vec<u32> = attendees.iter().copied().filter(|&a| infected_at[a as usize].is_none()).collect();
        let mean = cfg.infection.transmission_probability * susceptible.len() as f64;
        for _ in &infectious {
            let draw = sample_negative_binomial(mean, cfg.infection.overdispersion_k, &mut rng) as usize;
            for _ in 0..draw.min(susceptible.len()) {
                let a = susceptible.swap_remove(rng.random_range(0..susceptible.len()));
                infected_at[a as usize] = Some(end);
                infections.push(Infection { agent: a, infected_at: end, source_gathering: Some(gi) });
            }
        }
        gatherings[gi] = Some(Gathering { venue: spec.venue as usize, start, end, attendees, infectious_attendees: infectious });
    }
    let gatherings: Vec<Gathering> = gatherings.into_iter().map(|g| g.expect("every gathering placed")).collect();
    infections.sort_by_key(|i| i.agent);

    let t = &cfg.testing;
    let mut tests = Vec::new();
    for agent in &agents {
        for day in t.first_day..=t.last_day {
            if !rng.random_bool(t.daily_test_probability) {
                continue;
            }
            let test_time = day as Seconds * DAY_SECONDS + rng.random_range(0..DAY_SECONDS);
            let infected = infected_at[agent.id as usize].is_some_and(|at| at <= test_time);
            let positive = if infected { rng.random_bool(t.sensitivity) } else { !rng.random_bool(t.specificity) };
            tests.push(TestResult { agent: agent.id, test_time, result_time: test_time + t.result_delay_s, positive, infected });
        }
    }

    let last_back = agents.iter().flat_map(|a| a.visits.iter().map(|v| v.back)).max().unwrap_or(0);
    let horizon_s = ((t.last_day as Seconds + 1) * DAY_SECONDS + t.result_delay_s).max(last_back + 1);
    Ok(ScenarioWorld { venues, agents, gatherings, infections, tests, horizon_s })
}

/// A report as the harness saw it: who sent it (ground truth only) and what.
#[derive(Debug, Clone)]
pub struct SubmittedReport {
    pub agent: u32,
    pub test_time: Seconds,
    pub result_time: Seconds,
    pub true_positive: bool,
    pub batch: ReportBatch,
}

/// Runs a client's report assembly for each first positive result.
pub fn assemble_reports(world: &ScenarioWorld, cfg: &ScenarioConfig, exec: Exec) -> Result<Vec<SubmittedReport>> {
    let positives = world.first_positives();
    let critical = cfg.critical_period();
    exec::map(exec, &positives, |t| {
        let history = world.agents[t.agent as usize].history(world.horizon_s);
        let mut rng = client_rng(cfg.seed, t.agent);
        let report = assemble_report(&history, t.test_time, &critical, &cfg.policy, &mut rng)?;
        Ok(SubmittedReport {
            agent: t.agent,
            test_time: t.test_time,
            result_time: t.result_time,
            true_positive: t.infected,
            batch: report.batch,
        })
    })
    .into_iter()
    .collect()
}

fn client_rng(seed: u64, agent: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64 + 1);
    rng
}

/// Deterministic authority key for a scenario seed.
pub fn scenario_authority(seed: u64) -> TestAuthority {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    TestAuthority::generate(&mut rng, DAY_SECONDS as u64 / 300)
}

#[derive(Debug)]
pub struct RunOutput {
    pub bulletin: Bulletin,
    /// `(agent, notice)` in agent order.
    pub notices: Vec<(u32, ExposureNotice)>,
    pub reports: Vec<SubmittedReport>,
    /// Distinct reporting agents behind each published event.
    pub event_reporters: BTreeMap<crate::model::EventId, EventSupport>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSupport {
    pub distinct_agents: u32,
    pub effective_threshold: u32,
}

/// Reports, mix, clustering, bulletin and local matching, then evaluation.
pub fn run_end_to_end(world: &ScenarioWorld, cfg: &ScenarioConfig) -> Result<RunOutput> {
    run_end_to_end_with(world, cfg, Exec::default())
}

pub fn run_end_to_end_with(world: &ScenarioWorld, cfg: &ScenarioConfig, exec: Exec) -> Result<RunOutput> {
    let policy = &cfg.policy;
    let stage = |stage: &'static str| move |e: Error| Error::Pipeline { stage, reason: e.to_string() };

    let reports = assemble_reports(world, cfg, exec).map_err(stage("report"))?;

    let authority = scenario_authority(cfg.seed);
    let gateway = MixGateway::new(GatewayConfig {
        auth_required: cfg.auth_required,
        authority_key: Some(authority.public_key()),
        policy: policy.clone(),
    })
    .map_err(stage("gateway"))?;
    let mut pipe = Pipeline::new(gateway, Bulletin::in_memory(), Vec::new())?.with_exec(exec);

    let mut anonym_owner: HashMap<Anonym, u32> = HashMap::new();
    let mut token_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x70c3);
    let mut next = 0;
    let mut boundary = 0;
    while next < reports.len() {
        boundary += cfg.mix_fire_interval_s;
        while next < reports.len() && reports[next].result_time <= boundary {
            let r = &reports[next];
            let now = bucketize(r.result_time, policy)?;
            let token = cfg.auth_required.then(|| authority.issue_token(Anonym::generate(&mut token_rng), now, &mut token_rng));
            pipe.submit(Submission { batch: r.batch.clone(), token }, now)
                .map_err(|e| Error::Pipeline { stage: "submit", reason: e.to_string() })?;
            anonym_owner.extend(r.batch.pairs.iter().map(|p| (p.anonym, r.agent)));
            next += 1;
        }
        let mut fire_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        fire_rng.set_stream((boundary / cfg.mix_fire_interval_s) as u64);
        pipe.fire_and_publish(&mut fire_rng)?;
    }

    let event_reporters: BTreeMap<_, _> = pipe
        .published_detections()
        .into_iter()
        .map(|d| {
            let agents: HashSet<&u32> = d.component.members.iter().filter_map(|m| anonym_owner.get(&m.anonym)).collect();
            (d.event.event_id, EventSupport { distinct_agents: agents.len() as u32, effective_threshold: d.effective_threshold })
        })
        .collect();

    let events = pipe.bulletin().events();
    let notices: Vec<(u32, ExposureNotice)> = exec::map(exec, &world.agents, |a| {
        match_exposures(&a.history(world.horizon_s), &events, policy).into_iter().map(|n| (a.id, n)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();

    let bulletin = pipe.into_bulletin();
    let report = evaluate(world, cfg, &bulletin, &notices, &reports, &event_reporters, exec)?;
    Ok(RunOutput { bulletin, notices, reports, event_reporters, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatheringEval {
    pub index: usize,
    pub venue: usize,
    pub attendees: u32,
    /// Most distinct reporters seen inside the venue in any single bucket of the gathering.
    pub max_reporters_per_bucket: u32,
    pub eligible: bool,
    pub detected: bool,
    pub notified_attendees: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of gatherings with at least T reporters in one bucket that produced an event.
    pub cluster_recall: Option<f64>,
    /// No published event is backed by fewer distinct reporting agents than its effective threshold.
    pub precision_proxy_exact: bool,
    pub precision_violations: u32,
    /// Fraction of truly exposed agents with at least one notice.
    pub notification_recall: Option<f64>,
    /// Fraction of never-exposed agents that were notified anyway.
    pub false_notification_rate: f64,
    /// Fraction of exposed agents that never reported and still match via the bulletin file alone.
    pub non_participant_coverage: Option<f64>,
    pub n_agents: u32,
    pub n_infected: u32,
    pub n_reports: u32,
    pub n_false_positive_reports: u32,
    pub n_pairs: u32,
    pub n_events: u32,
    pub n_exposed: u32,
    pub n_notified: u32,
    pub gatherings: Vec<GatheringEval>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Agents copresent (within the linkage radius, at the last sample of some
/// bucket) with another agent who was infectious at that moment.
pub fn exposed_agents(world: &ScenarioWorld, policy: &ClusterPolicy, exec: Exec) -> BTreeSet<u32> {
    let infected_at = world.infected_at();
    let eps = policy.linkage_radius_m;
    let b = policy.bucket_seconds;
    let n_buckets = (world.horizon_s + b - 1) / b;
    let key = |p: &GeoPoint| ((p.x / eps).floor() as i64, (p.y / eps).floor() as i64);

    let per_bucket = exec::map_range(exec, n_buckets as usize, |bucket| {
        let last = bucket as Seconds * b + ((b - 1) / SAMPLE_INTERVAL_SECONDS) * SAMPLE_INTERVAL_SECONDS;
        let t = last.min(world.horizon_s - 1);
        let mut grid: HashMap<(i64, i64), Vec<(u32, GeoPoint)>> = HashMap::new();
        for a in &world.agents {
            if infected_at[a.id as usize].is_some_and(|at| at <= t) {
                let p = a.position_at(t);
                grid.entry(key(&p)).or_default().push((a.id, p));
            }
        }
        if grid.is_empty() {
            return Vec::new();
        }
        world
            .agents
            .iter()
            .filter(|a| {
                let p = a.position_at(t);
                let (gx, gy) = key(&p);
                (-1..=1).any(|dx| {
                    (-1..=1).any(|dy| {
                        grid.get(&(gx + dx, gy + dy)).is_some_and(|v| v.iter().any(|(id, q)| *id != a.id && q.within(&p, eps)))
                    })
                })
            })
            .map(|a| a.id)
            .collect::<Vec<_>>()
    });
    per_bucket.into_iter().flatten().collect()
}

pub fn evaluate(
    world: &ScenarioWorld,
    cfg: &ScenarioConfig,
    bulletin: &Bulletin,
    notices: &[(u32, ExposureNotice)],
    reports: &[SubmittedReport],
    event_reporters: &BTreeMap<crate::model::EventId, EventSupport>,
    exec: Exec,
) -> Result<EvalReport> {
    let policy = &cfg.policy;
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let notified: BTreeSet<u32> = notices.iter().map(|(a, _)| *a).collect();
    let exposed = exposed_agents(world, policy, exec);
    let reporters: BTreeSet<u32> = reports.iter().map(|r| r.agent).collect();

    let precision_violations = bulletin
        .records()
        .iter()
        .filter(|r| event_reporters.get(&r.event.event_id).is_none_or(|s| s.distinct_agents < s.effective_threshold))
        .count() as u32;

    // Reported pairs by (bucket, agent) for gathering eligibility.
    let mut reported: HashMap<TimeBucket, Vec<(u32, GeoPoint)>> = HashMap::new();
    for r in reports {
        for p in &r.batch.pairs {
            reported.entry(p.bucket).or_default().push((r.agent, p.point));
        }
    }
    let events: Vec<&ClusterEvent> = bulletin.records().iter().map(|r| &r.event).collect();
    let gatherings: Vec<GatheringEval> = world
        .gatherings
        .iter()
        .enumerate()
        .map(|(index, g)| {
            let venue = world.venues[g.venue];
            let (lo, hi) = (bucketize(g.start, policy)?, bucketize(g.end, policy)?);
            let mut max_reporters = 0;
            for b in lo.0..=hi.0 {
                let in_venue: HashSet<u32> = reported
                    .get(&TimeBucket(b))
                    .map(|v| v.iter().filter(|(_, p)| venue.contains(p)).map(|(a, _)| *a).collect())
                    .unwrap_or_default();
                max_reporters = max_reporters.max(in_venue.len() as u32);
            }
            let detected = events
                .iter()
                .any(|e| e.bucket >= lo && e.bucket <= hi && e.region.iter().any(|c| policy.cell_extent(*c).intersects(&venue)));
            let notified_attendees = g.attendees.iter().filter(|a| notified.contains(a)).count() as u32;
            Ok(GatheringEval {
                index,
                venue: g.venue,
                attendees: g.attendees.len() as u32,
                max_reporters_per_bucket: max_reporters,
                eligible: max_reporters >= policy.threshold_default,
                detected,
                notified_attendees,
            })
        })
        .collect::<Result<_>>()?;
    let eligible = gatherings.iter().filter(|g| g.eligible).count();
    let detected = gatherings.iter().filter(|g| g.eligible && g.detected).count();

    // Non-participants: match using nothing but the serialized bulletin.
    let file_events: Vec<ClusterEvent> = parse_bulletin(&bulletin.to_text())?.into_iter().map(|r| r.event).collect();
    let outsiders: Vec<u32> = exposed.iter().copied().filter(|a| !reporters.contains(a)).collect();
    let covered = exec::map(exec, &outsiders, |&a| {
        !match_exposures(&world.agents[a as usize].history(world.horizon_s), &file_events, policy).is_empty()
    })
    .into_iter()
    .filter(|&hit| hit)
    .count();

    let unexposed = world.agents.len() - exposed.len();
    let falsely_notified = notified.iter().filter(|a| !exposed.contains(a)).count();
    Ok(EvalReport {
        cluster_recall: ratio(detected, eligible),
        precision_proxy_exact: precision_violations == 0,
        precision_violations,
        notification_recall: ratio(exposed.iter().filter(|a| notified.contains(a)).count(), exposed.len()),
        false_notification_rate: ratio(falsely_notified, unexposed).unwrap_or(0.0),
        non_participant_coverage: ratio(covered, outsiders.len()),
        n_agents: world.agents.len() as u32,
        n_infected: world.infections.len() as u32,
        n_reports: reports.len() as u32,
        n_false_positive_reports: reports.iter().filter(|r| !r.true_positive).count() as u32,
        n_pairs: reports.iter().map(|r| r.batch.len() as u32).sum(),
        n_events: bulletin.len() as u32,
        n_exposed: exposed.len() as u32,
        n_notified: notified.len() as u32,
        gatherings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WorldSummary {
    pub seed: u64,
    pub horizon_s: Seconds,
    pub n_agents: u32,
    pub venues: Vec<Rect>,
    pub gatherings: Vec<GatheringSummary>,
    pub n_infections: u32,
    pub n_tests: u32,
    pub n_positive_tests: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct GatheringSummary {
    pub venue: usize,
    pub start: Seconds,
    pub end: Seconds,
    pub attendees: u32,
    pub infectious_attendees: u32,
    pub infections_caused: u32,
}

impl WorldSummary {
    pub fn new(world: &ScenarioWorld, cfg: &ScenarioConfig) -> Self {
        Self {
            seed: cfg.seed,
            horizon_s: world.horizon_s,
            n_agents: world.agents.len() as u32,
            venues: world.venues.clone(),
            gatherings: world
                .gatherings
                .iter()
                .enumerate()
                .map(|(i, g)| GatheringSummary {
                    venue: g.venue,
                    start: g.start,
                    end: g.end,
                    attendees: g.attendees.len() as u32,
                    infectious_attendees: g.infectious_attendees.len() as u32,
                    infections_caused: world.infections.iter().filter(|x| x.source_gathering == Some(i)).count() as u32,
                })
                .collect(),
            n_infections: world.infections.len() as u32,
            n_tests: world.tests.len() as u32,
            n_positive_tests: world.tests.iter().filter(|t| t.positive).count() as u32,
        }
    }
}

#[derive(Serialize)]
struct NoticeLine<'a> {
    agent: u32,
    #[serde(flatten)]
    notice: &'a ExposureNotice,
}

pub const WORLD_SUMMARY_FILE: &str = "world_summary.json";
pub const BULLETIN_FILE: &str = "bulletin.jsonl";
pub const NOTICES_FILE: &str = "notices.jsonl";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";

/// Generates, runs and writes the four output files into `dir`.
pub fn simulate_to_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<RunOutput> {
    let world = generate_scenario(cfg)?;
    let out = run_end_to_end(&world, cfg)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(WORLD_SUMMARY_FILE), serde_json::to_string_pretty(&WorldSummary::new(&world, cfg))? + "\n")?;
    std::fs::write(dir.join(BULLETIN_FILE), out.bulletin.to_text())?;
    let notices: String = out
        .notices
        .iter()
        .map(|(agent, notice)| serde_json::to_string(&NoticeLine { agent: *agent, notice }).map(|s| s + "\n"))
        .collect::<std::result::Result<_, _>>()?;
    std::fs::write(dir.join(NOTICES_FILE), notices)?;
    std::fs::write(dir.join(EVAL_REPORT_FILE), out.report.to_json() + "\n")?;
    Ok(out)
}
