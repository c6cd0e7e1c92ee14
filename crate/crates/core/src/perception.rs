//! Per-agent local views in relative coordinates.
//!
//! A percept lists what lies within vision range of the agent, translated so
//! that the agent sits at `(0,0)`. Nothing absolute leaks: no grid
//! coordinates, no thing ids, no names of other agents. Cells are reported in
//! row-major order of their relative position (north to south, west to
//! east).

use serde::{Deserialize, Serialize};

use crate::action::{Action, Outcome};
use crate::geometry::Position;
use crate::tasks::Task;
use crate::world::{ThingId, ThingKind, WorldError, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThingClass {
    Entity,
    Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeenThing {
    pub x: i32,
    pub y: i32,
    #[serde(rename = "type")]
    pub class: ThingClass,
    /// Team name for entities, block type for blocks.
    pub details: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeenTerrainKind {
    Obstacle,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeenTerrain {
    pub x: i32,
    pub y: i32,
    #[serde(rename = "type")]
    pub kind: SeenTerrainKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeenDispenser {
    pub x: i32,
    pub y: i32,
    #[serde(rename = "type")]
    pub block_type: String,
}

/// One agent's view of the world for one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Percept {
    /// Completed steps so far; the agent is choosing its action for
    /// `step + 1`.
    pub step: u64,
    pub score: u64,
    pub last_action: Option<Action>,
    pub last_action_result: Option<Outcome>,
    pub disabled: bool,
    pub things: Vec<SeenThing>,
    pub terrain: Vec<SeenTerrain>,
    pub dispensers: Vec<SeenDispenser>,
    pub markers: Vec<Position>,
    pub attached: Vec<Position>,
    pub tasks: Vec<Task>,
    /// Wall-clock deadline for the reply, in milliseconds since the Unix
    /// epoch. Zero when no deadline applies.
    pub deadline: u64,
}

impl Percept {
    pub fn thing_at(&self, p: Position) -> Option<&SeenThing> {
        self.things.iter().find(|t| t.x == p.x && t.y == p.y)
    }

    pub fn terrain_at(&self, p: Position) -> Option<SeenTerrainKind> {
        self.terrain
            .iter()
            .find(|t| t.x == p.x && t.y == p.y)
            .map(|t| t.kind)
    }

    pub fn dispenser_at(&self, p: Position) -> Option<&str> {
        self.dispensers
            .iter()
            .find(|d| d.x == p.x && d.y == p.y)
            .map(|d| d.block_type.as_str())
    }

    pub fn is_attached(&self, p: Position) -> bool {
        self.attached.contains(&p)
    }
}

/// Relative offsets within the configured vision range, row-major.
pub fn vision_offsets(world: &WorldState) -> Vec<Position> {
    let r = world.config.vision_range as i32;
    let metric = world.config.vision_metric;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if metric.distance(dx, dy) <= r as u32 {
                out.push(Position::new(dx, dy));
            }
        }
    }
    out
}

/// Relative positions of the grid cells the agent can see.
pub fn visible_cells(world: &WorldState, agent: ThingId) -> Result<Vec<Position>, WorldError> {
    let origin = world.thing(agent)?.position;
    Ok(vision_offsets(world)
        .into_iter()
        .filter(|rel| world.terrain.contains(origin + *rel))
        .collect())
}

pub fn compute_percept(world: &WorldState, agent: ThingId) -> Result<Percept, WorldError> {
    let state = world.agent(agent)?;
    let origin = world.thing(agent)?.position;
    let mut percept = Percept {
        step: world.step,
        score: world.scores.get(&state.team).copied().unwrap_or(0),
        last_action: state.last_action.clone(),
        last_action_result: state.last_outcome,
        disabled: world.is_disabled(agent),
        things: Vec::new(),
        terrain: Vec::new(),
        dispensers: Vec::new(),
        markers: Vec::new(),
        attached: Vec::new(),
        tasks: world.tasks.values().cloned().collect(),
        deadline: 0,
    };

    for rel in visible_cells(world, agent)? {
        let abs = origin + rel;
        if let Some(id) = world.thing_at(abs) {
            let thing = &world.things[&id];
            let (class, details) = match &thing.kind {
                ThingKind::Agent(a) => (ThingClass::Entity, a.team.clone()),
                ThingKind::Block { block_type } => (ThingClass::Block, block_type.clone()),
            };
            percept.things.push(SeenThing {
                x: rel.x,
                y: rel.y,
                class,
                details,
            });
            if world.attachments.degree(id) > 0 {
                percept.attached.push(rel);
            }
        }
        let kind = world.terrain.get(abs);
        if kind.is_obstacle() {
            percept.terrain.push(SeenTerrain {
                x: rel.x,
                y: rel.y,
                kind: SeenTerrainKind::Obstacle,
            });
        } else if kind.is_goal() {
            percept.terrain.push(SeenTerrain {
                x: rel.x,
                y: rel.y,
                kind: SeenTerrainKind::Goal,
            });
        }
        if let Some(d) = world.dispenser_at(abs) {
            percept.dispensers.push(SeenDispenser {
                x: rel.x,
                y: rel.y,
                block_type: d.block_type.clone(),
            });
        }
        if world.markers.iter().any(|m| m.position == abs) {
            percept.markers.push(rel);
        }
    }
    Ok(percept)
}
