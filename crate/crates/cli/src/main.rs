use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use massim::agents::{run_team, BehaviorKind, ClientOptions};
use massim::replay::{verify, Replay};
use massim::server::{run_local_match, serve, LocalMatch, MatchReport, MatchSettings, Roster};
use massim::tournament::{parse_manifest, run_tournament, write_stats, TournamentSettings};
use massim::transport::TcpConnector;
use massim::{render, SimConfig};

#[derive(Parser)]
#[command(name = "massim", version, about = "Grid-world agent competition platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one match and wait for agents on a TCP endpoint.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Credential file: `team, agent, password` per line.
        #[arg(long)]
        credentials: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 12300)]
        port: u16,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a match between two reference teams inside this process.
    Match {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "assembler_pair")]
        team_a: BehaviorKind,
        #[arg(long, default_value = "random_walker")]
        team_b: BehaviorKind,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Play a round-robin tournament over the three parameter sets.
    Tournament {
        /// Team manifest: `team, behavior` per line.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override a config key in every simulation.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Reference agent clients.
    Agent {
        #[command(subcommand)]
        command: AgentCommand,
    },
    /// Inspect recorded replays.
    Replay {
        #[command(subcommand)]
        command: ReplayCommand,
    },
}

#[derive(Subcommand)]
enum AgentCommand {
    /// Connect every agent listed in a team credential file.
    Run {
        #[arg(long)]
        team: PathBuf,
        #[arg(long, default_value = "assembler_pair")]
        behavior: BehaviorKind,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 12300)]
        port: u16,
    },
}

#[derive(Subcommand)]
enum ReplayCommand {
    /// Print frames as ASCII grids.
    Render {
        replay: PathBuf,
        /// Only this step.
        #[arg(long)]
        step: Option<u64>,
        /// Print every n-th step.
        #[arg(long, default_value_t = 1)]
        every: u64,
    },
    /// Re-simulate a replay and compare it line by line.
    Verify { replay: PathBuf },
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    deadline_ms: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Failures mapped to exit codes.
enum Failure {
    Config(String),
    Verify(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn split_pair(pair: &str) -> Result<(String, String), Failure> {
    pair.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Failure::Config(format!("expected KEY=VALUE, found `{pair}`")))
}

impl ConfigArgs {
    fn load(&self) -> Result<SimConfig, Failure> {
        let mut config = SimConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            config
                .apply_kv_str(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        }
        for pair in &self.set {
            let (k, v) = split_pair(pair)?;
            config.set(&k, &v).map_err(Failure::Config)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(steps) = self.steps {
            config.steps = steps;
        }
        if let Some(ms) = self.deadline_ms {
            config.deadline_ms = ms;
        }
        config.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(config)
    }
}

fn replay_path(out: &Path, sim: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    Ok(out.join(format!("replay.{sim}.json")))
}

fn print_report(report: &MatchReport) {
    let scores: Vec<String> = report.scores.iter().map(|(t, s)| format!("{t}={s}")).collect();
    println!("{} steps={} {}", report.sim_id, report.steps, scores.join(" "));
    match &report.winner {
        Some(w) => println!("winner: {w}"),
        None => println!("draw"),
    }
    println!("final hash: {}", report.final_hash);
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Serve {
            config,
            credentials,
            host,
            port,
            out,
        } => {
            let config = config.load()?;
            let text = fs::read_to_string(&credentials)
                .map_err(|e| Failure::Config(format!("{}: {e}", credentials.display())))?;
            let roster = Roster::parse(&text).map_err(|e| Failure::Config(e.to_string()))?;
            roster.matches(&config).map_err(Failure::Config)?;
            let sim_id = format!("serve-{}", config.seed);
            let file = fs::File::create(replay_path(&out, &sim_id)?).context("creating replay")?;
            let settings = MatchSettings {
                config,
                sim_id,
                world: None,
                replay: Box::new(BufWriter::new(file)),
            };
            let running = serve(settings, roster, &format!("{host}:{port}")).map_err(|e| anyhow!(e))?;
            info!("listening on {host}:{}", running.port);
            let report = running.join().map_err(|e| anyhow!(e))?;
            write_stats(&out, &report.sim_id, &report).map_err(|e| anyhow!(e))?;
            print_report(&report);
        }
        Command::Match {
            config,
            team_a,
            team_b,
            out,
        } => {
            let config = config.load()?;
            if config.teams.len() != 2 {
                return Err(Failure::Config("a match needs exactly two teams".into()));
            }
            let sim_id = format!("match-{}", config.seed);
            let report = run_local_match(&LocalMatch {
                replay_path: Some(replay_path(&out, &sim_id)?),
                sim_id,
                config,
                behaviors: vec![team_a, team_b],
            })
            .map_err(|e| anyhow!(e))?;
            write_stats(&out, &report.sim_id, &report).map_err(|e| anyhow!(e))?;
            print_report(&report);
        }
        Command::Tournament {
            manifest,
            seed,
            jobs,
            set,
            out,
        } => {
            let text = fs::read_to_string(&manifest)
                .map_err(|e| Failure::Config(format!("{}: {e}", manifest.display())))?;
            let teams = parse_manifest(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", manifest.display())))?;
            let overrides = set.iter().map(|p| split_pair(p)).collect::<Result<Vec<_>, _>>()?;
            let mut probe = SimConfig::default();
            for (k, v) in &overrides {
                probe.set(k, v).map_err(Failure::Config)?;
            }
            let outcome = run_tournament(&TournamentSettings {
                teams,
                seed,
                jobs,
                out: out.clone(),
                overrides,
            })
            .map_err(|e| anyhow!(e))?;
            for (p, r, _) in &outcome.results {
                println!("{} {}={} {}={}", p.sim_id(), r.team_a, r.score_a, r.team_b, r.score_b);
            }
            print!("{}", massim::tournament::standings_csv(&outcome.standings));
        }
        Command::Agent {
            command:
                AgentCommand::Run {
                    team,
                    behavior,
                    host,
                    port,
                },
        } => {
            let text = fs::read_to_string(&team)
                .map_err(|e| Failure::Config(format!("{}: {e}", team.display())))?;
            let roster = Roster::parse(&text).map_err(|e| Failure::Config(e.to_string()))?;
            let log = run_team(
                Arc::new(TcpConnector::new(&host, port)),
                roster.entries,
                behavior,
                ClientOptions::default(),
            );
            for line in &log.lines {
                println!("{line}");
            }
            match log.score {
                Some(score) => println!("final score {score}, {} replies sent", log.replies),
                None => return Err(anyhow!("session ended without a result").into()),
            }
        }
        Command::Replay {
            command: ReplayCommand::Render { replay, step, every },
        } => {
            let text = fs::read_to_string(&replay).with_context(|| replay.display().to_string())?;
            let parsed = Replay::parse(&text).map_err(|e| anyhow!(e))?;
            match step {
                Some(s) => print!("{}", render::render_frame(&parsed.world_at(s).map_err(|e| anyhow!(e))?)),
                None => {
                    let every = every.max(1);
                    for world in parsed.states().map_err(|e| anyhow!(e))? {
                        if world.step % every == 0 {
                            println!("{}", render::render_frame(&world));
                        }
                    }
                }
            }
        }
        Command::Replay {
            command: ReplayCommand::Verify { replay },
        } => {
            let text = fs::read_to_string(&replay).with_context(|| replay.display().to_string())?;
            match verify(&text) {
                Ok(v) => println!("OK {} steps, final hash {}", v.steps, v.final_hash),
                Err(e) => return Err(Failure::Verify(e.to_string())),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
