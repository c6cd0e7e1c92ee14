//! Replay documents: record, load, verify.
//!
//! A replay is a text file with one JSON document per line. The first line
//! is the header (config, seed, teams and the initial world). Then comes one
//! frame per step with the submitted actions, their results, clear events,
//! the world hash after the step and either a full snapshot (every
//! [`SNAPSHOT_INTERVAL`] steps) or a delta against the previous step. The
//! last line holds the final hash, a SHA-256 chain over the initial hash and
//! every frame hash.
//!
//! Replays contain no zero bytes, so they can be inspected with ordinary
//! text tools.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{Action, ActionResult};
use crate::config::SimConfig;
use crate::engine::{self, ClearEvent, StepReport};
use crate::geometry::Position;
use crate::tasks::Task;
use crate::world::{ClearMarker, Terrain, Thing, ThingId, WorldState};

pub const REPLAY_VERSION: u32 = 1;
pub const SNAPSHOT_INTERVAL: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplayHeader {
    pub version: u32,
    pub sim_id: String,
    pub seed: u64,
    pub teams: Vec<String>,
    pub config: SimConfig,
    /// True when `initial` is exactly `WorldState::create(config, seed)`.
    pub generated: bool,
    pub initial: WorldState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainChange {
    pub x: i32,
    pub y: i32,
    pub t: char,
}

/// Everything that may change between two consecutive steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorldDelta {
    pub things: Vec<Thing>,
    pub removed: Vec<ThingId>,
    pub terrain: Vec<TerrainChange>,
    pub edges_added: Vec<(ThingId, ThingId)>,
    pub edges_removed: Vec<(ThingId, ThingId)>,
    pub tasks: BTreeMap<String, Task>,
    pub tasks_created: u64,
    pub tasks_completed: u64,
    pub scores: BTreeMap<String, u64>,
    pub markers: Vec<ClearMarker>,
    pub next_id: u32,
    pub rng: rand_chacha::ChaCha8Rng,
}

impl WorldDelta {
    pub fn between(prev: &WorldState, next: &WorldState) -> WorldDelta {
        let things = next
            .things
            .values()
            .filter(|t| prev.things.get(&t.id) != Some(*t))
            .cloned()
            .collect();
        let removed = prev
            .things
            .keys()
            .filter(|id| !next.things.contains_key(id))
            .copied()
            .collect();
        let terrain = next
            .terrain
            .positions()
            .filter(|p| prev.terrain.get(*p) != next.terrain.get(*p))
            .map(|p| TerrainChange {
                x: p.x,
                y: p.y,
                t: next.terrain.get(p).glyph(),
            })
            .collect();
        let before: BTreeSet<_> = prev.attachments.edges().into_iter().collect();
        let after: BTreeSet<_> = next.attachments.edges().into_iter().collect();
        WorldDelta {
            things,
            removed,
            terrain,
            edges_added: after.difference(&before).copied().collect(),
            edges_removed: before.difference(&after).copied().collect(),
            tasks: next.tasks.clone(),
            tasks_created: next.tasks_created,
            tasks_completed: next.tasks_completed,
            scores: next.scores.clone(),
            markers: next.markers.clone(),
            next_id: next.next_id,
            rng: next.rng.clone(),
        }
    }

    /// Applies the delta and sets the step counter to `step`.
    pub fn apply(&self, world: &mut WorldState, step: u64) -> Result<(), String> {
        for (a, b) in &self.edges_removed {
            world.attachments.remove(*a, *b);
        }
        for id in &self.removed {
            world.things.remove(id);
        }
        for t in &self.things {
            world.things.insert(t.id, t.clone());
        }
        for c in &self.terrain {
            let p = Position::new(c.x, c.y);
            let t = Terrain::from_glyph(c.t).ok_or_else(|| format!("bad terrain glyph `{}`", c.t))?;
            if !world.terrain.contains(p) {
                return Err(format!("terrain change outside grid at {p}"));
            }
            world.terrain.set(p, t);
        }
        for (a, b) in &self.edges_added {
            world.attachments.add(*a, *b);
        }
        world.tasks = self.tasks.clone();
        world.tasks_created = self.tasks_created;
        world.tasks_completed = self.tasks_completed;
        world.scores = self.scores.clone();
        world.markers = self.markers.clone();
        world.next_id = self.next_id;
        world.rng = self.rng.clone();
        world.step = step;
        world.rebuild_index();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFrame {
    pub step: u64,
    /// Actions that reached the engine, by agent name. Agents that sent
    /// nothing usable are absent and resolve as `no_op`.
    pub actions: BTreeMap<String, Action>,
    pub results: Vec<ActionResult>,
    pub events: Vec<ClearEvent>,
    pub hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<WorldState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<WorldDelta>,
}

impl ReplayFrame {
    pub fn build(
        prev: &WorldState,
        next: &WorldState,
        actions: &BTreeMap<String, Action>,
        report: &StepReport,
    ) -> ReplayFrame {
        let snapshot = next.step % SNAPSHOT_INTERVAL == 0;
        ReplayFrame {
            step: next.step,
            actions: actions.clone(),
            results: report.results.clone(),
            events: report.events.clone(),
            hash: next.hash(),
            snapshot: snapshot.then(|| next.clone()),
            delta: (!snapshot).then(|| WorldDelta::between(prev, next)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FinalRecord {
    pub steps: u64,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplayFooter {
    #[serde(rename = "final")]
    pub record: FinalRecord,
}

/// Next link of the final-hash chain.
pub fn chain(prev: &str, frame_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(frame_hash.as_bytes());
    hex::encode(h.finalize())
}

fn line_of<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("replay serialization cannot fail")
}

/// Writes a replay while a match runs.
///
/// Every line is passed to the sink as soon as it exists, so an aborted match
/// still leaves a readable partial replay.
pub struct Recorder {
    sink: Box<dyn Write + Send>,
    lines: Vec<String>,
    prev: WorldState,
    chain: String,
}

impl Recorder {
    pub fn new(
        sim_id: &str,
        initial: &WorldState,
        generated: bool,
        sink: Box<dyn Write + Send>,
    ) -> io::Result<Recorder> {
        let header = ReplayHeader {
            version: REPLAY_VERSION,
            sim_id: sim_id.to_string(),
            seed: initial.seed,
            teams: initial.config.teams.clone(),
            config: initial.config.clone(),
            generated,
            initial: initial.clone(),
        };
        let mut rec = Recorder {
            sink,
            lines: Vec::new(),
            prev: initial.clone(),
            chain: initial.hash(),
        };
        rec.push(line_of(&header))?;
        Ok(rec)
    }

    /// A recorder that only keeps lines in memory.
    pub fn in_memory(sim_id: &str, initial: &WorldState, generated: bool) -> Recorder {
        Recorder::new(sim_id, initial, generated, Box::new(io::sink()))
            .expect("io::sink cannot fail")
    }

    fn push(&mut self, line: String) -> io::Result<()> {
        self.sink.write_all(line.as_bytes())?;
        self.sink.write_all(b"\n")?;
        self.sink.flush()?;
        self.lines.push(line);
        Ok(())
    }

    pub fn record(
        &mut self,
        actions: &BTreeMap<String, Action>,
        report: &StepReport,
        world: &WorldState,
    ) -> io::Result<()> {
        let frame = ReplayFrame::build(&self.prev, world, actions, report);
        self.chain = chain(&self.chain, &frame.hash);
        self.prev = world.clone();
        self.push(line_of(&frame))
    }

    /// Writes the footer and returns the full text and the final hash.
    pub fn finish(mut self) -> io::Result<(String, String)> {
        let footer = ReplayFooter {
            record: FinalRecord {
                steps: self.prev.step,
                hash: self.chain.clone(),
            },
        };
        self.push(line_of(&footer))?;
        let mut text = self.lines.join("\n");
        text.push('\n');
        Ok((text, self.chain))
    }

    pub fn chain_hash(&self) -> &str {
        &self.chain
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("empty replay")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("replay diverges at step {step}")]
    Divergence { step: u64 },
    #[error("replay is truncated after step {last_step}")]
    Truncated { last_step: u64 },
    #[error("final hash mismatch: recorded {recorded}, computed {computed}")]
    FinalHash { recorded: String, computed: String },
}

impl ReplayError {
    /// The step the error points at, if any.
    pub fn step(&self) -> Option<u64> {
        match self {
            ReplayError::Divergence { step } => Some(*step),
            _ => None,
        }
    }
}

/// A parsed replay.
#[derive(Debug, Clone)]
pub struct Replay {
    pub header: ReplayHeader,
    pub frames: Vec<ReplayFrame>,
    pub footer: Option<FinalRecord>,
}

impl Replay {
    /// Parses a replay. A missing footer or an unreadable last line is
    /// tolerated and leaves `footer` empty; any other unreadable line is an
    /// error.
    pub fn parse(text: &str) -> Result<Replay, ReplayError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let first = lines.first().ok_or(ReplayError::Empty)?;
        let header: ReplayHeader = serde_json::from_str(first).map_err(|e| ReplayError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
        let mut frames = Vec::new();
        let mut footer = None;
        for (idx, line) in lines.iter().enumerate().skip(1) {
            let last = idx + 1 == lines.len();
            if line.starts_with("{\"final\":") {
                match serde_json::from_str::<ReplayFooter>(line) {
                    Ok(f) if last => footer = Some(f.record),
                    Ok(_) => {
                        return Err(ReplayError::Malformed {
                            line: idx + 1,
                            message: "footer before the end".into(),
                        })
                    }
                    Err(_) if last => {}
                    Err(e) => {
                        return Err(ReplayError::Malformed {
                            line: idx + 1,
                            message: e.to_string(),
                        })
                    }
                }
                continue;
            }
            match serde_json::from_str::<ReplayFrame>(line) {
                Ok(f) => frames.push(f),
                Err(_) if last => {}
                Err(e) => {
                    return Err(ReplayError::Malformed {
                        line: idx + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(Replay {
            header,
            frames,
            footer,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.footer.is_some()
    }

    /// World states from step 0 onwards, rebuilt from snapshots and deltas
    /// without re-simulating.
    pub fn states(&self) -> Result<Vec<WorldState>, ReplayError> {
        let mut out = Vec::with_capacity(self.frames.len() + 1);
        let mut world = self.header.initial.clone();
        world.rebuild_index();
        out.push(world.clone());
        for (idx, frame) in self.frames.iter().enumerate() {
            if let Some(snap) = &frame.snapshot {
                world = snap.clone();
                world.rebuild_index();
            } else if let Some(delta) = &frame.delta {
                delta
                    .apply(&mut world, frame.step)
                    .map_err(|message| ReplayError::Malformed {
                        line: idx + 2,
                        message,
                    })?;
            } else {
                return Err(ReplayError::Malformed {
                    line: idx + 2,
                    message: "frame has neither snapshot nor delta".into(),
                });
            }
            out.push(world.clone());
        }
        Ok(out)
    }

    /// The world at `step`, starting from the closest earlier snapshot.
    pub fn world_at(&self, step: u64) -> Result<WorldState, ReplayError> {
        if step == 0 {
            let mut w = self.header.initial.clone();
            w.rebuild_index();
            return Ok(w);
        }
        let target = self
            .frames
            .iter()
            .position(|f| f.step == step)
            .ok_or(ReplayError::Divergence { step })?;
        let start = self.frames[..=target]
            .iter()
            .rposition(|f| f.snapshot.is_some());
        let (mut world, from) = match start {
            Some(i) => {
                let mut w = self.frames[i].snapshot.clone().expect("snapshot frame");
                w.rebuild_index();
                (w, i + 1)
            }
            None => (self.world_at(0)?, 0),
        };
        for (idx, frame) in self.frames.iter().enumerate().take(target + 1).skip(from) {
            let delta = frame.delta.as_ref().ok_or(ReplayError::Malformed {
                line: idx + 2,
                message: "frame has neither snapshot nor delta".into(),
            })?;
            delta
                .apply(&mut world, frame.step)
                .map_err(|message| ReplayError::Malformed {
                    line: idx + 2,
                    message,
                })?;
        }
        Ok(world)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verified {
    pub steps: u64,
    pub final_hash: String,
}

/// Re-simulates a replay from its header and compares every line
/// byte-for-byte with what the engine produces.
pub fn verify(text: &str) -> Result<Verified, ReplayError> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    let first = lines.first().ok_or(ReplayError::Empty)?;
    let header: ReplayHeader =
        serde_json::from_str(first).map_err(|_| ReplayError::Divergence { step: 0 })?;
    if line_of(&header) != *first {
        return Err(ReplayError::Divergence { step: 0 });
    }
    let mut world = header.initial.clone();
    world.rebuild_index();
    if header.generated {
        let fresh = WorldState::create(&header.config, header.seed)
            .map_err(|_| ReplayError::Divergence { step: 0 })?;
        if fresh.to_document() != world.to_document() {
            return Err(ReplayError::Divergence { step: 0 });
        }
    }
    let mut chain_hash = world.hash();

    for (idx, line) in lines.iter().enumerate().skip(1) {
        let step = world.step + 1;
        if line.starts_with("{\"final\":") {
            let footer: ReplayFooter =
                serde_json::from_str(line).map_err(|e| ReplayError::Malformed {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            if idx + 1 != lines.len() {
                return Err(ReplayError::Malformed {
                    line: idx + 1,
                    message: "footer before the end".into(),
                });
            }
            if footer.record.steps != world.step || footer.record.hash != chain_hash {
                return Err(ReplayError::FinalHash {
                    recorded: footer.record.hash,
                    computed: chain_hash,
                });
            }
            return Ok(Verified {
                steps: world.step,
                final_hash: chain_hash,
            });
        }
        let frame: ReplayFrame =
            serde_json::from_str(line).map_err(|_| ReplayError::Divergence { step })?;
        let mut actions = BTreeMap::new();
        for (name, action) in &frame.actions {
            let id = world
                .agent_by_name(name)
                .ok_or(ReplayError::Divergence { step })?;
            actions.insert(id, action.clone());
        }
        let prev = world.clone();
        let report = engine::step(&mut world, &actions);
        let regenerated = ReplayFrame::build(&prev, &world, &frame.actions, &report);
        if line_of(&regenerated) != *line {
            return Err(ReplayError::Divergence { step });
        }
        chain_hash = chain(&chain_hash, &regenerated.hash);
    }
    Err(ReplayError::Truncated {
        last_step: world.step,
    })
}

/// Per-step statistics of one replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsTable {
    pub teams: Vec<String>,
    pub rows: Vec<StatsRow>,
    /// Set when the replay lacks its footer.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsRow {
    pub step: u64,
    pub scores: Vec<u64>,
    pub tasks_completed: u64,
    pub active_tasks: u64,
    pub disabled: Vec<u64>,
    pub events: u64,
}

fn stats_row(world: &WorldState, teams: &[String], events: u64) -> StatsRow {
    let disabled = teams
        .iter()
        .map(|team| {
            world
                .agent_ids()
                .into_iter()
                .filter(|id| world.team_of(*id) == Some(team) && world.is_disabled(*id))
                .count() as u64
        })
        .collect();
    StatsRow {
        step: world.step,
        scores: teams
            .iter()
            .map(|t| world.scores.get(t).copied().unwrap_or(0))
            .collect(),
        tasks_completed: world.tasks_completed,
        active_tasks: world.tasks.len() as u64,
        disabled,
        events,
    }
}

/// Builds the statistics table of a replay.
///
/// Rows cover step 0 to the last recorded step. A replay without footer
/// yields the rows it has and `partial == true`.
pub fn record_stats(replay: &Replay) -> Result<StatsTable, ReplayError> {
    let teams = replay.header.teams.clone();
    let states = replay.states()?;
    let mut rows = Vec::with_capacity(states.len());
    for (i, world) in states.iter().enumerate() {
        let events = if i == 0 {
            0
        } else {
            replay.frames[i - 1].events.len() as u64
        };
        rows.push(stats_row(world, &teams, events));
    }
    Ok(StatsTable {
        teams,
        rows,
        partial: !replay.is_complete(),
    })
}

impl StatsTable {
    pub fn header_line(&self) -> String {
        let mut cols = vec!["step".to_string()];
        cols.extend(self.teams.iter().map(|t| format!("score_{t}")));
        cols.push("tasks_completed".into());
        cols.push("active_tasks".into());
        cols.extend(self.teams.iter().map(|t| format!("disabled_{t}")));
        cols.push("events".into());
        cols.join(",")
    }

    /// Comma-separated text: header, one row per step, and a closing row
    /// labelled `summary` (or `partial` for truncated replays) with final
    /// scores, final completed tasks, the peak of active tasks, disabled
    /// agent-steps per team and the total number of clear events.
    pub fn to_csv(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                join(&r.scores),
                r.tasks_completed,
                r.active_tasks,
                join(&r.disabled),
                r.events
            ));
        }
        let last = self.rows.last();
        let scores = last.map(|r| r.scores.clone()).unwrap_or_default();
        let completed = last.map_or(0, |r| r.tasks_completed);
        let peak = self.rows.iter().map(|r| r.active_tasks).max().unwrap_or(0);
        let disabled: Vec<u64> = (0..self.teams.len())
            .map(|i| self.rows.iter().map(|r| r.disabled[i]).sum())
            .collect();
        let events: u64 = self.rows.iter().map(|r| r.events).sum();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            if self.partial { "partial" } else { "summary" },
            join(&scores),
            completed,
            peak,
            join(&disabled),
            events
        ));
        out
    }
}
