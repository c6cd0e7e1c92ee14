//! Authoritative grid world: terrain, things, dispensers and attachments.
//!
//! The world is plain data plus geometry queries. It knows nothing about
//! networking and does not decide action outcomes; the [`engine`] module
//! drives every mutation.
//!
//! Attachments form an undirected graph between thing ids. The engine keeps
//! three invariants on it:
//!
//! * every edge joins two things on adjacent cells,
//! * every component with at least one edge contains an agent,
//! * every component is a tree (edges = nodes - 1).
//!
//! [`engine`]: crate::engine

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{Action, Outcome};
use crate::config::{ConfigError, SimConfig};
use crate::geometry::{Direction, Position, Rotation};
use crate::tasks::Task;

/// Version tag of the serialized world document.
pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("infeasible world: {0}")]
    Infeasible(String),
    #[error("unknown thing {0}")]
    UnknownThing(ThingId),
    #[error("thing {0} is not an agent")]
    NotAnAgent(ThingId),
    #[error("malformed world document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThingId(pub u32);

impl fmt::Display for ThingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terrain {
    Empty,
    Obstacle,
    Goal,
}

impl Terrain {
    pub fn glyph(self) -> char {
        match self {
            Terrain::Empty => '.',
            Terrain::Obstacle => '#',
            Terrain::Goal => 'G',
        }
    }

    pub fn from_glyph(c: char) -> Option<Terrain> {
        match c {
            '.' => Some(Terrain::Empty),
            '#' => Some(Terrain::Obstacle),
            'G' => Some(Terrain::Goal),
            _ => None,
        }
    }

    pub fn is_obstacle(self) -> bool {
        self == Terrain::Obstacle
    }

    pub fn is_goal(self) -> bool {
        self == Terrain::Goal
    }
}

/// Row-major terrain; serialized as one string per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerrainGrid {
    width: i32,
    height: i32,
    cells: Vec<Terrain>,
}

impl TerrainGrid {
    pub fn new(width: i32, height: i32) -> Self {
        Self {
            width,
            height,
            cells: vec![Terrain::Empty; (width * height) as usize],
        }
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    pub fn is_border(&self, p: Position) -> bool {
        p.x == 0 || p.y == 0 || p.x == self.width - 1 || p.y == self.height - 1
    }

    /// Terrain at `p`; cells outside the grid read as obstacles.
    pub fn get(&self, p: Position) -> Terrain {
        if self.contains(p) {
            self.cells[(p.y * self.width + p.x) as usize]
        } else {
            Terrain::Obstacle
        }
    }

    pub fn set(&mut self, p: Position, t: Terrain) {
        assert!(self.contains(p), "terrain write outside grid at {p}");
        self.cells[(p.y * self.width + p.x) as usize] = t;
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Position::new(x, y)))
    }

    pub fn count(&self, t: Terrain) -> usize {
        self.cells.iter().filter(|c| **c == t).count()
    }

    fn rows(&self) -> Vec<String> {
        self.cells
            .chunks(self.width as usize)
            .map(|row| row.iter().map(|t| t.glyph()).collect())
            .collect()
    }
}

impl Serialize for TerrainGrid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TerrainGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let rows = Vec::<String>::deserialize(d)?;
        let height = rows.len() as i32;
        let width = rows.first().map_or(0, |r| r.chars().count()) as i32;
        let mut cells = Vec::with_capacity((width * height) as usize);
        for row in &rows {
            if row.chars().count() as i32 != width {
                return Err(D::Error::custom("ragged terrain rows"));
            }
            for c in row.chars() {
                cells.push(
                    Terrain::from_glyph(c)
                        .ok_or_else(|| D::Error::custom(format!("bad terrain glyph `{c}`")))?,
                );
            }
        }
        Ok(TerrainGrid {
            width,
            height,
            cells,
        })
    }
}

/// Progress of a charging clear action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearCharge {
    pub target: Position,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub name: String,
    pub team: String,
    /// Last step during which the agent is disabled; 0 when never disabled.
    pub disabled_until: u64,
    pub charge: Option<ClearCharge>,
    pub last_action: Option<Action>,
    pub last_outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThingKind {
    Agent(AgentState),
    Block {
        #[serde(rename = "type")]
        block_type: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thing {
    pub id: ThingId,
    pub position: Position,
    #[serde(flatten)]
    pub kind: ThingKind,
}

impl Thing {
    pub fn is_agent(&self) -> bool {
        matches!(self.kind, ThingKind::Agent(_))
    }

    pub fn agent(&self) -> Option<&AgentState> {
        match &self.kind {
            ThingKind::Agent(a) => Some(a),
            ThingKind::Block { .. } => None,
        }
    }

    pub fn agent_mut(&mut self) -> Option<&mut AgentState> {
        match &mut self.kind {
            ThingKind::Agent(a) => Some(a),
            ThingKind::Block { .. } => None,
        }
    }

    pub fn block_type(&self) -> Option<&str> {
        match &self.kind {
            ThingKind::Block { block_type } => Some(block_type),
            ThingKind::Agent(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dispenser {
    pub position: Position,
    #[serde(rename = "type")]
    pub block_type: String,
}

/// Undirected attachment edges, serialized as a sorted `[[a, b], ...]` list
/// with `a < b`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttachmentGraph {
    adjacency: BTreeMap<ThingId, BTreeSet<ThingId>>,
}

impl AttachmentGraph {
    pub fn add(&mut self, a: ThingId, b: ThingId) {
        assert_ne!(a, b, "self edge");
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    pub fn remove(&mut self, a: ThingId, b: ThingId) -> bool {
        let removed = self.adjacency.get_mut(&a).is_some_and(|s| s.remove(&b));
        if let Some(s) = self.adjacency.get_mut(&b) {
            s.remove(&a);
        }
        self.adjacency.retain(|_, s| !s.is_empty());
        removed
    }

    pub fn contains(&self, a: ThingId, b: ThingId) -> bool {
        self.adjacency.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn neighbors(&self, a: ThingId) -> impl Iterator<Item = ThingId> + '_ {
        self.adjacency.get(&a).into_iter().flatten().copied()
    }

    pub fn degree(&self, a: ThingId) -> usize {
        self.adjacency.get(&a).map_or(0, BTreeSet::len)
    }

    /// Removes every edge touching `a` and returns the former neighbours.
    pub fn isolate(&mut self, a: ThingId) -> Vec<ThingId> {
        let former: Vec<ThingId> = self.neighbors(a).collect();
        for b in &former {
            self.remove(a, *b);
        }
        former
    }

    pub fn edges(&self) -> Vec<(ThingId, ThingId)> {
        self.adjacency
            .iter()
            .flat_map(|(a, s)| s.iter().filter(move |b| a < *b).map(move |b| (*a, *b)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Breadth-first component containing `start` (always includes `start`).
    pub fn component(&self, start: ThingId) -> BTreeSet<ThingId> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(cur) = queue.pop_front() {
            for n in self.neighbors(cur) {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen
    }
}

impl Serialize for AttachmentGraph {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.edges().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AttachmentGraph {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let edges = Vec::<(ThingId, ThingId)>::deserialize(d)?;
        let mut g = AttachmentGraph::default();
        for (a, b) in edges {
            g.add(a, b);
        }
        Ok(g)
    }
}

/// A perceivable warning on a cell targeted by a clear action or event.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClearMarker {
    pub position: Position,
    /// First step at which the marker is gone.
    pub expires: u64,
}

/// Result of a rigid-motion query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Motion {
    /// New position of every member of the moved component.
    Ok(Vec<(ThingId, Position)>),
    Blocked(Position),
}

mod things_as_vec {
    use super::*;

    pub fn serialize<S: Serializer>(
        things: &BTreeMap<ThingId, Thing>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(things.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<ThingId, Thing>, D::Error> {
        Ok(Vec::<Thing>::deserialize(d)?
            .into_iter()
            .map(|t| (t.id, t))
            .collect())
    }
}

/// Full authoritative simulation state.
///
/// `step` counts completed steps: a fresh world has `step == 0` and the
/// engine executes step `step + 1` next. Serialization is byte-stable, so
/// [`WorldState::hash`] identifies a state exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub version: u32,
    pub config: SimConfig,
    pub seed: u64,
    pub step: u64,
    pub terrain: TerrainGrid,
    #[serde(with = "things_as_vec")]
    pub things: BTreeMap<ThingId, Thing>,
    pub dispensers: Vec<Dispenser>,
    pub attachments: AttachmentGraph,
    pub tasks: BTreeMap<String, Task>,
    pub tasks_created: u64,
    pub tasks_completed: u64,
    pub scores: BTreeMap<String, u64>,
    pub markers: Vec<ClearMarker>,
    pub next_id: u32,
    pub rng: ChaCha8Rng,
    #[serde(skip)]
    occupancy: Vec<Option<ThingId>>,
}

impl WorldState {
    /// Generates a fresh world from `config` and `seed`.
    ///
    /// Identical inputs yield identical worlds. The border ring is always
    /// obstacle; obstacles, goal zones, dispensers and agents are drawn from
    /// a ChaCha8 stream seeded with `seed`, which then continues as the
    /// world's own generator.
    pub fn create(config: &SimConfig, seed: u64) -> Result<WorldState, WorldError> {
        config.validate()?;
        let (w, h) = (config.width, config.height);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terrain = TerrainGrid::new(w, h);

        for p in terrain.positions().collect::<Vec<_>>() {
            if terrain.is_border(p) {
                terrain.set(p, Terrain::Obstacle);
            } else if rng.gen_bool(config.obstacle_density) {
                terrain.set(p, Terrain::Obstacle);
            }
        }

        let r = config.goal_radius as i32;
        for _ in 0..config.goal_zones {
            let (lo_x, hi_x) = centre_range(w, r);
            let (lo_y, hi_y) = centre_range(h, r);
            let centre = Position::new(rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y));
            for dy in -r..=r {
                for dx in -r..=r {
                    let p = centre + Position::new(dx, dy);
                    if dx.abs() + dy.abs() <= r && terrain.contains(p) && !terrain.is_border(p) {
                        terrain.set(p, Terrain::Goal);
                    }
                }
            }
        }

        let mut dispensers = Vec::new();
        let mut taken: BTreeSet<Position> = BTreeSet::new();
        for block_type in config.block_type_names() {
            for _ in 0..config.dispensers_per_type {
                let candidates: Vec<Position> = terrain
                    .positions()
                    .filter(|p| terrain.get(*p) == Terrain::Empty && !taken.contains(p))
                    .collect();
                let Some(&p) = candidates.choose(&mut rng) else {
                    return Err(WorldError::Infeasible("no room for dispensers".into()));
                };
                taken.insert(p);
                dispensers.push(Dispenser {
                    position: p,
                    block_type: block_type.clone(),
                });
            }
        }

        let mut free: Vec<Position> = terrain
            .positions()
            .filter(|p| !terrain.get(*p).is_obstacle() && !taken.contains(p))
            .collect();
        let needed = config.agents_per_team as usize * config.teams.len();
        if needed > free.len() {
            return Err(WorldError::Infeasible(format!(
                "{needed} agents but only {} free cells",
                free.len()
            )));
        }

        let mut world = WorldState {
            version: WORLD_FORMAT_VERSION,
            config: config.clone(),
            seed,
            step: 0,
            terrain,
            things: BTreeMap::new(),
            dispensers,
            attachments: AttachmentGraph::default(),
            tasks: BTreeMap::new(),
            tasks_created: 0,
            tasks_completed: 0,
            scores: config.teams.iter().map(|t| (t.clone(), 0)).collect(),
            markers: Vec::new(),
            next_id: 1,
            rng: ChaCha8Rng::seed_from_u64(0),
            occupancy: vec![None; (w * h) as usize],
        };
        for team in &config.teams {
            for name in config.agent_names(team) {
                let idx = rng.gen_range(0..free.len());
                let p = free.swap_remove(idx);
                world.spawn(
                    p,
                    ThingKind::Agent(AgentState {
                        name,
                        team: team.clone(),
                        disabled_until: 0,
                        charge: None,
                        last_action: None,
                        last_outcome: None,
                    }),
                );
            }
        }
        world.rng = rng;
        Ok(world)
    }

    /// A bare world with only the border wall, for tests and tooling.
    pub fn empty(config: &SimConfig, seed: u64) -> WorldState {
        let (w, h) = (config.width, config.height);
        let mut terrain = TerrainGrid::new(w, h);
        for p in terrain.positions().collect::<Vec<_>>() {
            if terrain.is_border(p) {
                terrain.set(p, Terrain::Obstacle);
            }
        }
        WorldState {
            version: WORLD_FORMAT_VERSION,
            config: config.clone(),
            seed,
            step: 0,
            terrain,
            things: BTreeMap::new(),
            dispensers: Vec::new(),
            attachments: AttachmentGraph::default(),
            tasks: BTreeMap::new(),
            tasks_created: 0,
            tasks_completed: 0,
            scores: config.teams.iter().map(|t| (t.clone(), 0)).collect(),
            markers: Vec::new(),
            next_id: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
            occupancy: vec![None; (w * h) as usize],
        }
    }

    /// Parses a serialized world document and rebuilds its cell index.
    pub fn from_document(bytes: &[u8]) -> Result<WorldState, WorldError> {
        let mut world: WorldState =
            serde_json::from_slice(bytes).map_err(|e| WorldError::Document(e.to_string()))?;
        if world.version != WORLD_FORMAT_VERSION {
            return Err(WorldError::Document(format!(
                "unsupported version {}",
                world.version
            )));
        }
        world.rebuild_index();
        Ok(world)
    }

    pub fn to_document(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("world serialization cannot fail")
    }

    /// SHA-256 of the serialized document, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_document()))
    }

    pub fn rebuild_index(&mut self) {
        let (w, h) = (self.terrain.width(), self.terrain.height());
        self.occupancy = vec![None; (w * h) as usize];
        let entries: Vec<(Position, ThingId)> =
            self.things.values().map(|t| (t.position, t.id)).collect();
        for (p, id) in entries {
            let idx = self.cell_index(p);
            self.occupancy[idx] = Some(id);
        }
    }

    /// The step the engine executes next.
    pub fn executing_step(&self) -> u64 {
        self.step + 1
    }

    pub fn width(&self) -> i32 {
        self.terrain.width()
    }

    pub fn height(&self) -> i32 {
        self.terrain.height()
    }

    fn cell_index(&self, p: Position) -> usize {
        debug_assert!(self.terrain.contains(p));
        (p.y * self.terrain.width() + p.x) as usize
    }

    pub fn thing(&self, id: ThingId) -> Result<&Thing, WorldError> {
        self.things.get(&id).ok_or(WorldError::UnknownThing(id))
    }

    pub fn thing_mut(&mut self, id: ThingId) -> Result<&mut Thing, WorldError> {
        self.things.get_mut(&id).ok_or(WorldError::UnknownThing(id))
    }

    pub fn agent(&self, id: ThingId) -> Result<&AgentState, WorldError> {
        self.thing(id)?.agent().ok_or(WorldError::NotAnAgent(id))
    }

    pub fn agent_mut(&mut self, id: ThingId) -> Result<&mut AgentState, WorldError> {
        self.thing_mut(id)?
            .agent_mut()
            .ok_or(WorldError::NotAnAgent(id))
    }

    pub fn thing_at(&self, p: Position) -> Option<ThingId> {
        if self.terrain.contains(p) {
            self.occupancy[self.cell_index(p)]
        } else {
            None
        }
    }

    pub fn dispenser_at(&self, p: Position) -> Option<&Dispenser> {
        self.dispensers.iter().find(|d| d.position == p)
    }

    /// Inside the grid, not an obstacle and not occupied.
    pub fn is_free(&self, p: Position) -> bool {
        self.terrain.contains(p) && !self.terrain.get(p).is_obstacle() && self.thing_at(p).is_none()
    }

    /// Agent ids in ascending order.
    pub fn agent_ids(&self) -> Vec<ThingId> {
        self.things
            .values()
            .filter(|t| t.is_agent())
            .map(|t| t.id)
            .collect()
    }

    pub fn agent_by_name(&self, name: &str) -> Option<ThingId> {
        self.things
            .values()
            .find(|t| t.agent().is_some_and(|a| a.name == name))
            .map(|t| t.id)
    }

    pub fn team_of(&self, id: ThingId) -> Option<&str> {
        self.things
            .get(&id)
            .and_then(Thing::agent)
            .map(|a| a.team.as_str())
    }

    /// Whether the agent may act during the step the engine executes next.
    pub fn is_disabled(&self, id: ThingId) -> bool {
        self.agent(id)
            .is_ok_and(|a| a.disabled_until >= self.executing_step())
    }

    /// Places a new thing on a free cell and returns its id.
    pub fn spawn(&mut self, p: Position, kind: ThingKind) -> ThingId {
        assert!(
            self.terrain.contains(p) && self.thing_at(p).is_none(),
            "spawn on occupied or foreign cell {p}"
        );
        let id = ThingId(self.next_id);
        self.next_id += 1;
        let idx = self.cell_index(p);
        self.occupancy[idx] = Some(id);
        self.things.insert(
            id,
            Thing {
                id,
                position: p,
                kind,
            },
        );
        id
    }

    /// Places a fresh agent that has not acted yet.
    pub fn spawn_agent(&mut self, p: Position, name: &str, team: &str) -> ThingId {
        self.spawn(
            p,
            ThingKind::Agent(AgentState {
                name: name.to_string(),
                team: team.to_string(),
                disabled_until: 0,
                charge: None,
                last_action: None,
                last_outcome: None,
            }),
        )
    }

    pub fn spawn_block(&mut self, p: Position, block_type: &str) -> ThingId {
        self.spawn(
            p,
            ThingKind::Block {
                block_type: block_type.to_string(),
            },
        )
    }

    /// Removes a thing, severs its edges and frees any orphaned blocks.
    pub fn remove_thing(&mut self, id: ThingId) -> Result<Thing, WorldError> {
        let thing = self.things.remove(&id).ok_or(WorldError::UnknownThing(id))?;
        let idx = self.cell_index(thing.position);
        self.occupancy[idx] = None;
        let former = self.attachments.isolate(id);
        self.prune_orphans(former);
        Ok(thing)
    }

    /// Connected attachment component containing `id`, including `id`.
    pub fn component_of(&self, id: ThingId) -> Result<BTreeSet<ThingId>, WorldError> {
        self.thing(id)?;
        Ok(self.attachments.component(id))
    }

    /// Dissolves every component reachable from `seeds` that holds no agent.
    pub fn prune_orphans(&mut self, seeds: impl IntoIterator<Item = ThingId>) {
        for seed in seeds {
            if self.attachments.degree(seed) == 0 {
                continue;
            }
            let component = self.attachments.component(seed);
            let has_agent = component
                .iter()
                .any(|id| self.things.get(id).is_some_and(Thing::is_agent));
            if !has_agent {
                for id in component {
                    self.attachments.isolate(id);
                }
            }
        }
    }

    /// Where `ids` would land when shifted one cell towards `dir`.
    ///
    /// Target cells must be inside the grid, not obstacles, and either empty
    /// or vacated by a member of the same set. The first offending cell (in
    /// ascending id order) is reported.
    pub fn translate_component(&self, ids: &BTreeSet<ThingId>, dir: Direction) -> Motion {
        let offset = dir.offset();
        let mut moves = Vec::with_capacity(ids.len());
        for id in ids {
            let Some(t) = self.things.get(id) else {
                continue;
            };
            let target = t.position + offset;
            if !self.cell_open_for(target, ids) {
                return Motion::Blocked(target);
            }
            moves.push((*id, target));
        }
        Motion::Ok(moves)
    }

    /// Quarter turn of an agent's component around the agent's own cell.
    pub fn rotate_component(&self, agent: ThingId, rot: Rotation) -> Motion {
        let Some(pivot) = self.things.get(&agent).map(|t| t.position) else {
            return Motion::Blocked(Position::ORIGIN);
        };
        let ids = self.attachments.component(agent);
        let mut moves = Vec::with_capacity(ids.len());
        for id in &ids {
            let Some(t) = self.things.get(id) else {
                continue;
            };
            let target = pivot + (t.position - pivot).rotated(rot);
            if !self.cell_open_for(target, &ids) {
                return Motion::Blocked(target);
            }
            moves.push((*id, target));
        }
        Motion::Ok(moves)
    }

    fn cell_open_for(&self, p: Position, movers: &BTreeSet<ThingId>) -> bool {
        if !self.terrain.contains(p) || self.terrain.get(p).is_obstacle() {
            return false;
        }
        match self.thing_at(p) {
            None => true,
            Some(other) => movers.contains(&other),
        }
    }

    /// Applies a motion computed by [`translate_component`] or
    /// [`rotate_component`] on the current state.
    ///
    /// [`translate_component`]: WorldState::translate_component
    /// [`rotate_component`]: WorldState::rotate_component
    pub fn apply_moves(&mut self, moves: &[(ThingId, Position)]) {
        for (id, _) in moves {
            let old = self.things[id].position;
            let idx = self.cell_index(old);
            if self.occupancy[idx] == Some(*id) {
                self.occupancy[idx] = None;
            }
        }
        for (id, target) in moves {
            let idx = self.cell_index(*target);
            debug_assert!(self.occupancy[idx].is_none(), "motion collision at {target}");
            self.occupancy[idx] = Some(*id);
            if let Some(t) = self.things.get_mut(id) {
                t.position = *target;
            }
        }
    }

    /// Moves a single thing to a free cell, bypassing rules (tests, tooling).
    pub fn place(&mut self, id: ThingId, p: Position) -> Result<(), WorldError> {
        let old = self.thing(id)?.position;
        if old == p {
            return Ok(());
        }
        assert!(self.is_free(p), "place onto blocked cell {p}");
        self.apply_moves(&[(id, p)]);
        Ok(())
    }

    /// Pseudo-random permutation of all agents for this step's resolution
    /// order.
    pub(crate) fn shuffled_agents(&mut self) -> Vec<ThingId> {
        let mut ids = self.agent_ids();
        ids.shuffle(&mut self.rng);
        ids
    }
}

/// Inclusive range of centre coordinates keeping a radius-`r` diamond inside
/// the interior, falling back to the whole interior on tiny grids.
fn centre_range(extent: i32, r: i32) -> (i32, i32) {
    let lo = 1 + r;
    let hi = extent - 2 - r;
    if lo <= hi {
        (lo, hi)
    } else {
        (1, extent - 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimConfig {
        SimConfig {
            width: 12,
            height: 12,
            agents_per_team: 2,
            ..SimConfig::default()
        }
    }

    #[test]
    fn border_is_obstacle_on_minimal_grid() {
        let config = SimConfig {
            width: 10,
            height: 10,
            agents_per_team: 1,
            ..SimConfig::default()
        };
        for seed in [0, 1, 99] {
            let world = WorldState::create(&config, seed).unwrap();
            let border: Vec<Position> = world
                .terrain
                .positions()
                .filter(|p| world.terrain.is_border(*p))
                .collect();
            assert_eq!(border.len(), 36);
            assert!(border.iter().all(|p| world.terrain.get(*p).is_obstacle()));
        }
    }

    #[test]
    fn creation_is_deterministic() {
        let config = SimConfig::default();
        let a = WorldState::create(&config, 42).unwrap();
        let b = WorldState::create(&config, 42).unwrap();
        assert_eq!(a.to_document(), b.to_document());
        let c = WorldState::create(&config, 43).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn interior_obstacle_density_golden() {
        let config = SimConfig {
            width: 50,
            height: 50,
            obstacle_density: 0.1,
            ..SimConfig::default()
        };
        let world = WorldState::create(&config, 7).unwrap();
        let interior_obstacles = world
            .terrain
            .positions()
            .filter(|p| !world.terrain.is_border(*p) && world.terrain.get(*p).is_obstacle())
            .count();
        // 48*48 interior cells at p = 0.1: mean 230.4, sigma 14.4.
        let mean = 0.1 * 48.0 * 48.0;
        let sigma = (48.0f64 * 48.0 * 0.1 * 0.9).sqrt();
        assert!((interior_obstacles as f64 - mean).abs() <= 3.0 * sigma);
        assert_eq!(interior_obstacles, 208);
    }

    #[test]
    fn generated_world_layout() {
        let config = SimConfig::default();
        let world = WorldState::create(&config, 5).unwrap();
        assert_eq!(world.dispensers.len(), 6);
        assert_eq!(world.agent_ids().len(), 20);
        let goals = world.terrain.count(Terrain::Goal);
        assert!(goals > 13 && goals <= 26, "two diamonds, possibly overlapping: {goals}");
        for d in &world.dispensers {
            assert_eq!(world.terrain.get(d.position), Terrain::Empty);
            assert!(world.thing_at(d.position).is_none());
        }
        let mut cells = BTreeSet::new();
        for t in world.things.values() {
            assert!(!world.terrain.get(t.position).is_obstacle());
            assert!(cells.insert(t.position));
        }
    }

    #[test]
    fn infeasible_when_too_many_agents() {
        let config = SimConfig {
            width: 10,
            height: 10,
            agents_per_team: 40,
            ..SimConfig::default()
        };
        assert!(matches!(
            WorldState::create(&config, 1),
            Err(WorldError::Infeasible(_))
        ));
    }

    #[test]
    fn document_round_trip_rebuilds_index() {
        let world = WorldState::create(&small_config(), 3).unwrap();
        let back = WorldState::from_document(&world.to_document()).unwrap();
        assert_eq!(back, world);
        for t in world.things.values() {
            assert_eq!(back.thing_at(t.position), Some(t.id));
        }
    }

    fn with_agent(p: Position) -> (WorldState, ThingId) {
        let config = SimConfig {
            width: 20,
            height: 20,
            ..SimConfig::default()
        };
        let mut world = WorldState::empty(&config, 1);
        let agent = world.spawn(
            p,
            ThingKind::Agent(AgentState {
                name: "agentA1".into(),
                team: "A".into(),
                disabled_until: 0,
                charge: None,
                last_action: None,
                last_outcome: None,
            }),
        );
        (world, agent)
    }

    #[test]
    fn component_of_singleton_and_chain() {
        let (mut world, agent) = with_agent(Position::new(5, 5));
        assert_eq!(world.component_of(agent).unwrap(), BTreeSet::from([agent]));
        let b = world.spawn_block(Position::new(6, 5), "b0");
        let c = world.spawn_block(Position::new(7, 5), "b1");
        world.attachments.add(agent, b);
        world.attachments.add(b, c);
        assert_eq!(
            world.component_of(agent).unwrap(),
            BTreeSet::from([agent, b, c])
        );
        assert_eq!(
            world.component_of(ThingId(999)),
            Err(WorldError::UnknownThing(ThingId(999)))
        );
    }

    #[test]
    fn translate_single_and_with_block() {
        let (mut world, agent) = with_agent(Position::new(5, 5));
        let ids = BTreeSet::from([agent]);
        assert_eq!(
            world.translate_component(&ids, Direction::East),
            Motion::Ok(vec![(agent, Position::new(6, 5))])
        );

        let b = world.spawn_block(Position::new(6, 5), "b0");
        world.attachments.add(agent, b);
        let ids = world.component_of(agent).unwrap();
        let Motion::Ok(moves) = world.translate_component(&ids, Direction::East) else {
            panic!("expected motion");
        };
        world.apply_moves(&moves);
        assert_eq!(world.things[&agent].position, Position::new(6, 5));
        assert_eq!(world.things[&b].position, Position::new(7, 5));
        assert_eq!(world.thing_at(Position::new(5, 5)), None);
        assert_eq!(world.thing_at(Position::new(6, 5)), Some(agent));
    }

    #[test]
    fn translate_into_obstacle_is_blocked() {
        let (mut world, agent) = with_agent(Position::new(5, 5));
        world.terrain.set(Position::new(6, 5), Terrain::Obstacle);
        assert_eq!(
            world.translate_component(&BTreeSet::from([agent]), Direction::East),
            Motion::Blocked(Position::new(6, 5))
        );
    }

    #[test]
    fn rotate_maps_east_to_south() {
        let (mut world, agent) = with_agent(Position::new(5, 5));
        let b = world.spawn_block(Position::new(6, 5), "b0");
        world.attachments.add(agent, b);
        let Motion::Ok(moves) = world.rotate_component(agent, Rotation::Clockwise) else {
            panic!("expected motion");
        };
        world.apply_moves(&moves);
        assert_eq!(world.things[&b].position, Position::new(5, 6));
        assert_eq!(world.things[&agent].position, Position::new(5, 5));
    }

    #[test]
    fn four_rotations_restore_positions() {
        let (mut world, agent) = with_agent(Position::new(8, 8));
        let b = world.spawn_block(Position::new(9, 8), "b0");
        let c = world.spawn_block(Position::new(9, 9), "b1");
        let d = world.spawn_block(Position::new(8, 7), "b2");
        world.attachments.add(agent, b);
        world.attachments.add(b, c);
        world.attachments.add(agent, d);
        let before = world.clone();
        for _ in 0..4 {
            let Motion::Ok(moves) = world.rotate_component(agent, Rotation::Clockwise) else {
                panic!("rotation blocked");
            };
            world.apply_moves(&moves);
        }
        assert_eq!(world, before);
    }

    #[test]
    fn l_shape_rotation_blocked_by_foreign_block() {
        let (mut world, agent) = with_agent(Position::new(5, 5));
        let b = world.spawn_block(Position::new(6, 5), "b0");
        let c = world.spawn_block(Position::new(6, 6), "b0");
        world.attachments.add(agent, b);
        world.attachments.add(b, c);
        // (1,0) -> (0,1) and (1,1) -> (-1,1) under the clockwise map.
        let mapped: Vec<Position> = [Position::new(1, 0), Position::new(1, 1)]
            .iter()
            .map(|p| p.rotated(Rotation::Clockwise))
            .collect();
        assert_eq!(mapped, vec![Position::new(0, 1), Position::new(-1, 1)]);
        world.spawn_block(Position::new(5, 6), "b1");
        assert_eq!(
            world.rotate_component(agent, Rotation::Clockwise),
            Motion::Blocked(Position::new(5, 5) + mapped[0])
        );
    }

    #[test]
    fn removing_a_link_block_frees_the_far_subtree() {
        let (mut world, agent) = with_agent(Position::new(5, 5));
        let b = world.spawn_block(Position::new(6, 5), "b0");
        let c = world.spawn_block(Position::new(7, 5), "b0");
        let d = world.spawn_block(Position::new(7, 6), "b0");
        world.attachments.add(agent, b);
        world.attachments.add(b, c);
        world.attachments.add(c, d);
        world.remove_thing(b).unwrap();
        assert_eq!(world.attachments.edge_count(), 0);
        assert!(world.things.contains_key(&c) && world.things.contains_key(&d));
        assert_eq!(world.thing_at(Position::new(6, 5)), None);
    }
}
