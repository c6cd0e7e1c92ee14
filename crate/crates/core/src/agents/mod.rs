//! Reference agent teams.
//!
//! A team runs one session per agent and a single coordinator that decides
//! for all of them in agent name order. The coordinator owns every agent's
//! [`LocalMap`] and the team [`Blackboard`], so the decisions of one step do
//! not depend on thread timing.

mod assembler;
mod behaviors;
pub mod board;
mod client;
pub mod map;
pub mod nav;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::action::Action;
use crate::perception::{Percept, ThingClass};
use crate::geometry::Position;
use crate::protocol::SimStart;

pub use assembler::Assembler;
pub use behaviors::{ExplorerDigger, RandomWalker};
pub use board::Blackboard;
pub use client::{client_loop, run_team, ClientOptions, TeamLog};
pub use map::{merge_maps, LocalMap, MapCell, MergeError, SeenThingKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BehaviorKind {
    RandomWalker,
    ExplorerDigger,
    AssemblerPair,
}

impl BehaviorKind {
    pub const ALL: [BehaviorKind; 3] = [
        BehaviorKind::RandomWalker,
        BehaviorKind::ExplorerDigger,
        BehaviorKind::AssemblerPair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorKind::RandomWalker => "random_walker",
            BehaviorKind::ExplorerDigger => "explorer_digger",
            BehaviorKind::AssemblerPair => "assembler_pair",
        }
    }

    fn build(self) -> Box<dyn Behavior> {
        match self {
            BehaviorKind::RandomWalker => Box::new(RandomWalker),
            BehaviorKind::ExplorerDigger => Box::new(ExplorerDigger::default()),
            BehaviorKind::AssemblerPair => Box::new(Assembler::default()),
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        BehaviorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = BehaviorKind::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown behavior `{s}` (expected one of {})", known.join(", "))
            })
    }
}

/// What a behavior sees when deciding one step for one agent.
pub struct Ctx<'a> {
    pub name: &'a str,
    pub team: &'a str,
    pub percept: &'a Percept,
    pub map: &'a mut LocalMap,
    pub rng: &'a mut ChaCha8Rng,
    pub board: &'a mut Blackboard,
}

pub trait Behavior: Send {
    fn act(&mut self, ctx: &mut Ctx) -> Action;
}

struct Brain {
    map: LocalMap,
    rng: ChaCha8Rng,
    behavior: Box<dyn Behavior>,
}

/// 64-bit FNV-1a, used to derive per-agent seeds from names.
fn fnv(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Decides the actions of one team.
pub struct TeamDriver {
    team: String,
    kind: BehaviorKind,
    sim_id: String,
    brains: BTreeMap<String, Brain>,
    board: Arc<Mutex<Blackboard>>,
}

impl TeamDriver {
    pub fn new(team: &str, kind: BehaviorKind) -> TeamDriver {
        TeamDriver {
            team: team.to_string(),
            kind,
            sim_id: String::new(),
            brains: BTreeMap::new(),
            board: Arc::new(Mutex::new(Blackboard::new())),
        }
    }

    pub fn team(&self) -> &str {
        &self.team
    }

    pub fn board(&self) -> Arc<Mutex<Blackboard>> {
        self.board.clone()
    }

    pub fn map(&self, agent: &str) -> Option<&LocalMap> {
        self.brains.get(agent).map(|b| &b.map)
    }

    fn brain(&mut self, agent: &str, vision: u32) -> &mut Brain {
        let seed = fnv(&format!("{}/{agent}", self.sim_id));
        let kind = self.kind;
        self.brains.entry(agent.to_string()).or_insert_with(|| Brain {
            map: LocalMap::new(vision),
            rng: ChaCha8Rng::seed_from_u64(seed),
            behavior: kind.build(),
        })
    }

    /// Resets the agent's state for a new simulation.
    pub fn sim_start(&mut self, start: &SimStart) {
        if start.sim_id != self.sim_id {
            self.sim_id = start.sim_id.clone();
            self.brains.clear();
            *self.board.lock().expect("board lock") = Blackboard::new();
        }
        self.brains.remove(&start.name);
        self.brain(&start.name, start.vision);
    }

    /// One action per agent that sent a percept.
    pub fn decide(&mut self, percepts: &BTreeMap<String, Percept>) -> BTreeMap<String, Action> {
        let board = self.board.clone();
        let mut board = board.lock().expect("board lock");
        let step = percepts.values().map(|p| p.step).max().unwrap_or(0);
        board.begin_step(step);
        for (name, p) in percepts {
            let brain = self.brain(name, 5);
            brain.map.observe(p);
            let offset = brain.map.offset;
            let mates = p
                .things
                .iter()
                .filter(|t| t.class == ThingClass::Entity && t.details == self.team)
                .map(|t| Position::new(t.x, t.y))
                .filter(|r| *r != Position::ORIGIN)
                .collect();
            board.post(name, offset, mates);
            for t in &p.terrain {
                if t.kind == crate::perception::SeenTerrainKind::Goal {
                    board.add_goal(name, offset + Position::new(t.x, t.y));
                }
            }
            for d in &p.dispensers {
                board.add_dispenser(name, offset + Position::new(d.x, d.y), &d.block_type);
            }
        }
        board.resolve_sightings();
        let mut out = BTreeMap::new();
        for (name, p) in percepts {
            let brain = self.brains.get_mut(name).expect("created above");
            let mut ctx = Ctx {
                name,
                team: &self.team,
                percept: p,
                map: &mut brain.map,
                rng: &mut brain.rng,
                board: &mut board,
            };
            let action = match brain.behavior.act(&mut ctx) {
                Action::NoOp => Action::Skip,
                a => a,
            };
            out.insert(name.clone(), action);
        }
        out
    }
}
