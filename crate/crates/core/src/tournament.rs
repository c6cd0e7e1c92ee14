//! Round-robin tournaments over the three parameter sets.
//!
//! Every unordered pair of teams plays one match of three simulations, one
//! per parameter set. A simulation win is worth 3 points, a draw 1 point for
//! both teams. Standings rank by points, then by total simulation score,
//! then by team name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::agents::BehaviorKind;
use crate::config::SimConfig;
use crate::replay::{record_stats, Replay};
use crate::server::{run_local_match, LocalMatch, MatchReport};

#[derive(Debug, Error)]
pub enum TournamentError {
    #[error("a tournament needs at least two teams, got {0}")]
    TooFewTeams(usize),
    #[error("duplicate team `{0}`")]
    DuplicateTeam(String),
    #[error("line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("simulation {sim}: {message}")]
    Simulation { sim: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scheduled simulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub index: usize,
    pub team_a: String,
    pub team_b: String,
    /// Parameter set, 1 to 3.
    pub set: u8,
}

impl Pairing {
    pub fn sim_id(&self) -> String {
        format!("{:03}-{}-{}-s{}", self.index, self.team_a, self.team_b, self.set)
    }
}

pub fn schedule(teams: &[String]) -> Result<Vec<Pairing>, TournamentError> {
    if teams.len() < 2 {
        return Err(TournamentError::TooFewTeams(teams.len()));
    }
    for (i, t) in teams.iter().enumerate() {
        if teams[..i].contains(t) {
            return Err(TournamentError::DuplicateTeam(t.clone()));
        }
    }
    let mut out = Vec::new();
    for i in 0..teams.len() {
        for j in i + 1..teams.len() {
            for set in 1..=3 {
                out.push(Pairing {
                    index: out.len(),
                    team_a: teams[i].clone(),
                    team_b: teams[j].clone(),
                    set,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimResult {
    pub team_a: String,
    pub team_b: String,
    pub score_a: u64,
    pub score_b: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Standing {
    pub team: String,
    pub wins: u32,
    pub draws: u32,
    pub losses: u32,
    pub points: u32,
    pub total_score: u64,
}

impl Standing {
    pub fn played(&self) -> u32 {
        self.wins + self.draws + self.losses
    }
}

/// Standings over all results, best team first.
pub fn compute_standings(results: &[SimResult]) -> Vec<Standing> {
    let mut table: BTreeMap<String, Standing> = BTreeMap::new();
    for r in results {
        for team in [&r.team_a, &r.team_b] {
            table.entry(team.clone()).or_insert_with(|| Standing {
                team: team.clone(),
                ..Standing::default()
            });
        }
        let outcome = r.score_a.cmp(&r.score_b);
        let a = table.get_mut(&r.team_a).expect("inserted");
        a.total_score += r.score_a;
        match outcome {
            std::cmp::Ordering::Greater => a.wins += 1,
            std::cmp::Ordering::Less => a.losses += 1,
            std::cmp::Ordering::Equal => a.draws += 1,
        }
        let b = table.get_mut(&r.team_b).expect("inserted");
        b.total_score += r.score_b;
        match outcome {
            std::cmp::Ordering::Greater => b.losses += 1,
            std::cmp::Ordering::Less => b.wins += 1,
            std::cmp::Ordering::Equal => b.draws += 1,
        }
    }
    let mut out: Vec<Standing> = table
        .into_values()
        .map(|mut s| {
            s.points = 3 * s.wins + s.draws;
            s
        })
        .collect();
    out.sort_by(|x, y| {
        y.points
            .cmp(&x.points)
            .then(y.total_score.cmp(&x.total_score))
            .then(x.team.cmp(&y.team))
    });
    out
}

pub fn standings_csv(standings: &[Standing]) -> String {
    let mut out = String::from("rank,team,played,wins,draws,losses,points,total_score\n");
    for (i, s) in standings.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i + 1,
            s.team,
            s.played(),
            s.wins,
            s.draws,
            s.losses,
            s.points,
            s.total_score
        ));
    }
    out
}

/// One line per team: `name, behavior`. Blank lines and `#` comments are
/// skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, BehaviorKind)>, TournamentError> {
    let mut out: Vec<(String, BehaviorKind)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let [name, behavior] = fields[..] else {
            return Err(TournamentError::Manifest {
                line,
                message: format!("expected `team, behavior`, found `{trimmed}`"),
            });
        };
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(TournamentError::Manifest {
                line,
                message: format!("invalid team name `{name}`"),
            });
        }
        let kind = behavior
            .parse::<BehaviorKind>()
            .map_err(|message| TournamentError::Manifest { line, message })?;
        if out.iter().any(|(n, _)| n == name) {
            return Err(TournamentError::DuplicateTeam(name.to_string()));
        }
        out.push((name.to_string(), kind));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TournamentSettings {
    pub teams: Vec<(String, BehaviorKind)>,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    /// Applied on top of each parameter set, e.g. a shorter step count.
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct TournamentOutcome {
    pub results: Vec<(Pairing, SimResult, String)>,
    pub standings: Vec<Standing>,
}

/// Runs the whole schedule with in-process teams and writes replays, stats
/// and `standings.csv` under `settings.out`.
pub fn run_tournament(settings: &TournamentSettings) -> Result<TournamentOutcome, TournamentError> {
    let names: Vec<String> = settings.teams.iter().map(|(n, _)| n.clone()).collect();
    let plan = schedule(&names)?;
    fs::create_dir_all(&settings.out)?;
    let behavior: BTreeMap<&str, BehaviorKind> =
        settings.teams.iter().map(|(n, b)| (n.as_str(), *b)).collect();

    let run = |p: &Pairing| -> Result<(Pairing, SimResult, String), TournamentError> {
        let sim = p.sim_id();
        let fail = |message: String| TournamentError::Simulation {
            sim: sim.clone(),
            message,
        };
        let mut config = SimConfig::parameter_set(p.set).expect("sets 1..=3 exist");
        for (k, v) in &settings.overrides {
            config.set(k, v).map_err(&fail)?;
        }
        config.teams = vec![p.team_a.clone(), p.team_b.clone()];
        config.seed = settings.seed.wrapping_add(p.index as u64);
        config.validate().map_err(|e| fail(e.to_string()))?;
        let report = run_local_match(&LocalMatch {
            config: config.clone(),
            sim_id: sim.clone(),
            behaviors: vec![behavior[p.team_a.as_str()], behavior[p.team_b.as_str()]],
            replay_path: Some(settings.out.join(format!("replay.{sim}.json"))),
        })
        .map_err(|e| fail(e.to_string()))?;
        write_stats(&settings.out, &sim, &report)?;
        Ok((
            p.clone(),
            SimResult {
                team_a: p.team_a.clone(),
                team_b: p.team_b.clone(),
                score_a: report.scores[&p.team_a],
                score_b: report.scores[&p.team_b],
            },
            report.final_hash,
        ))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs.max(1))
        .build()
        .map_err(|e| TournamentError::Simulation {
            sim: "pool".into(),
            message: e.to_string(),
        })?;
    let results: Vec<_> = pool.install(|| plan.par_iter().map(run).collect::<Result<Vec<_>, _>>())?;
    let standings = compute_standings(&results.iter().map(|(_, r, _)| r.clone()).collect::<Vec<_>>());
    fs::write(settings.out.join("standings.csv"), standings_csv(&standings))?;
    Ok(TournamentOutcome { results, standings })
}

/// Writes `stats.<sim>.csv` next to the replay of a finished match.
pub fn write_stats(out: &Path, sim: &str, report: &MatchReport) -> Result<(), TournamentError> {
    let replay = Replay::parse(&report.replay).map_err(|e| TournamentError::Simulation {
        sim: sim.to_string(),
        message: e.to_string(),
    })?;
    let stats = record_stats(&replay).map_err(|e| TournamentError::Simulation {
        sim: sim.to_string(),
        message: e.to_string(),
    })?;
    fs::write(out.join(format!("stats.{sim}.csv")), stats.to_csv())?;
    Ok(())
}
