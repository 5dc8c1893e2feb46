use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use cluster_notify::adversary::AttackKind;
use cluster_notify::bulletin::Bulletin;
use cluster_notify::mix::{GatewayConfig, MixGateway};
use cluster_notify::model::ClusterPolicy;
use cluster_notify::pipeline::Pipeline;
use cluster_notify::scenario::{scenario_authority, simulate_to_dir};
use cluster_notify_cli::commands::{self, AttackOptions};
use cluster_notify_cli::service::{self, ServiceState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "cluster-notify", version, about = "Cluster-event exposure notification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario, run it end to end and write the results.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match a location history against a bulletin file.
    Match {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Scenario config whose policy to use; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run an attack against the honest reports of a scenario.
    Attack {
        /// lone_false_report, sybil_copresence or trajectory_probe.
        #[arg(long)]
        kind: AttackKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sybils: Option<u32>,
        /// Valid authorization tokens the attacker holds.
        #[arg(long)]
        tokens: Option<u32>,
        /// Allow reporting locations never visited.
        #[arg(long)]
        spoof: Option<bool>,
    },
    /// Run the gateway and bulletin services over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Append-only bulletin file; kept in memory when absent.
        #[arg(long)]
        bulletin: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate { config, seed, out } => {
            let cfg = commands::load_config(&config, seed)?;
            let run = simulate_to_dir(&cfg, &out)?;
            let r = &run.report;
            println!(
                "seed {}: {} reports, {} events, {} agents notified; output in {}",
                cfg.seed,
                r.n_reports,
                r.n_events,
                r.n_notified,
                out.display()
            );
        }
        Command::Match { history, events, config } => {
            let policy = match config {
                Some(p) => commands::load_config(&p, None)?.policy,
                None => ClusterPolicy::default(),
            };
            let notices = commands::match_files(&history, &events, &policy)?;
            print!("{}", commands::notices_to_jsonl(&notices)?);
        }
        Command::Attack { kind, config, seed, out, sybils, tokens, spoof } => {
            let cfg = commands::load_config(&config, seed)?;
            let outcome = commands::attack(&cfg, kind, &AttackOptions { sybils, tokens, spoof })?;
            commands::write_outcome(&outcome, &out)?;
            println!(
                "{:?}: success={} events_caused={} written to {}",
                outcome.kind,
                outcome.success,
                outcome.events_caused.len(),
                out.join(commands::OUTCOME_FILE).display()
            );
        }
        Command::Serve { config, addr, bulletin } => {
            let cfg = commands::load_config(&config, None)?;
            serve(cfg, &addr, bulletin)?;
        }
    }
    Ok(())
}

fn serve(cfg: cluster_notify::scenario::ScenarioConfig, addr: &str, bulletin: Option<PathBuf>) -> anyhow::Result<()> {
    let authority = scenario_authority(cfg.seed);
    let gateway = MixGateway::new(GatewayConfig {
        auth_required: cfg.auth_required,
        authority_key: Some(authority.public_key()),
        policy: cfg.policy.clone(),
    })?;
    let bulletin = match bulletin {
        Some(p) => Bulletin::open(&p).with_context(|| format!("opening bulletin {}", p.display()))?,
        None => Bulletin::in_memory(),
    };
    let pipeline = Pipeline::new(gateway, bulletin, Vec::new())?;
    let state = ServiceState::new(pipeline, ChaCha8Rng::from_os_rng(), service::system_clock(&cfg.policy));
    println!("authority key {}", authority.public_key());

    let interval = Duration::from_secs(cfg.mix_fire_interval_s as u64);
    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on {}", listener.local_addr()?);
        let ticker = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(interval);
            tick.tick().await;
            loop {
                tick.tick().await;
                if let Err(e) = ticker.fire() {
                    log::error!("scheduled firing failed: {e}");
                }
            }
        });
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })
}
