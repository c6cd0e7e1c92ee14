#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::net::TcpStream;

use rand::seq::SliceRandom;
use rand::Rng;

use massim::perception::{SeenDispenser, SeenTerrain, SeenTerrainKind, SeenThing, ThingClass};
use massim::protocol::{encode, AuthRequest, Message};
use massim::world::{AgentState, ClearMarker, Dispenser, Terrain, ThingKind};
use massim::{Action, Direction, Percept, Position, Rotation, SimConfig, ThingId, WorldState};

/// Percept rebuilt from scratch: scan the whole grid and keep the cells
/// within Manhattan distance of the agent.
pub fn brute_percept(world: &WorldState, agent: ThingId) -> Percept {
    let me = world.things[&agent].position;
    let state = match &world.things[&agent].kind {
        ThingKind::Agent(a) => a,
        ThingKind::Block { .. } => panic!("not an agent"),
    };
    let range = world.config.vision_range as i32;
    let mut p = Percept {
        step: world.step,
        score: world.scores[&state.team],
        last_action: state.last_action.clone(),
        last_action_result: state.last_outcome,
        disabled: state.disabled_until >= world.step + 1,
        things: vec![],
        terrain: vec![],
        dispensers: vec![],
        markers: vec![],
        attached: vec![],
        tasks: world.tasks.values().cloned().collect(),
        deadline: 0,
    };
    for y in 0..world.height() {
        for x in 0..world.width() {
            let (dx, dy) = (x - me.x, y - me.y);
            if dx.abs() + dy.abs() > range {
                continue;
            }
            let abs = Position::new(x, y);
            let rel = Position::new(dx, dy);
            for t in world.things.values().filter(|t| t.position == abs) {
                let (class, details) = match &t.kind {
                    ThingKind::Agent(a) => (ThingClass::Entity, a.team.clone()),
                    ThingKind::Block { block_type } => (ThingClass::Block, block_type.clone()),
                };
                p.things.push(SeenThing { x: dx, y: dy, class, details });
                if world.attachments.edges().iter().any(|(a, b)| *a == t.id || *b == t.id) {
                    p.attached.push(rel);
                }
            }
            match world.terrain.get(abs) {
                Terrain::Obstacle => p.terrain.push(SeenTerrain { x: dx, y: dy, kind: SeenTerrainKind::Obstacle }),
                Terrain::Goal => p.terrain.push(SeenTerrain { x: dx, y: dy, kind: SeenTerrainKind::Goal }),
                Terrain::Empty => {}
            }
            for d in world.dispensers.iter().filter(|d| d.position == abs) {
                p.dispensers.push(SeenDispenser { x: dx, y: dy, block_type: d.block_type.clone() });
            }
            if world.markers.iter().any(|m| m.position == abs) {
                p.markers.push(rel);
            }
        }
    }
    p
}

pub fn agent_kind(name: &str, team: &str) -> ThingKind {
    ThingKind::Agent(AgentState {
        name: name.into(),
        team: team.into(),
        disabled_until: 0,
        charge: None,
        last_action: None,
        last_outcome: None,
    })
}

/// A small world with random terrain, two teams, loose blocks and
/// dispensers. Nothing is attached yet.
pub fn random_world(rng: &mut impl Rng, seed: u64) -> WorldState {
    let side = rng.gen_range(10..=18);
    let config = SimConfig {
        width: side,
        height: side,
        agents_per_team: 3,
        max_component_size: rng.gen_range(3..=10),
        event_probability: 0.05,
        task_probability: 0.2,
        ..SimConfig::default()
    };
    let mut world = WorldState::empty(&config, seed);
    let interior: Vec<Position> = world
        .terrain
        .positions()
        .filter(|p| !world.terrain.is_border(*p))
        .collect();
    for p in &interior {
        let roll: f64 = rng.gen();
        if roll < 0.08 {
            world.terrain.set(*p, Terrain::Obstacle);
        } else if roll < 0.14 {
            world.terrain.set(*p, Terrain::Goal);
        }
    }
    let mut free: Vec<Position> = interior
        .into_iter()
        .filter(|p| !world.terrain.get(*p).is_obstacle())
        .collect();
    free.shuffle(rng);
    for team in ["A", "B"] {
        for name in config.agent_names(team) {
            let p = free.pop().expect("room for agents");
            world.spawn(p, agent_kind(&name, team));
        }
    }
    for _ in 0..rng.gen_range(2..8) {
        let p = free.pop().expect("room for blocks");
        world.spawn_block(p, &format!("b{}", rng.gen_range(0..3)));
    }
    for i in 0..3 {
        let p = free.pop().expect("room for dispensers");
        world.dispensers.push(Dispenser { position: p, block_type: format!("b{i}") });
    }
    world
}

/// Random world state for percept checks: like [`random_world`] plus
/// attachments and markers.
pub fn random_scene(rng: &mut impl Rng, seed: u64) -> WorldState {
    let mut world = random_world(rng, seed);
    let blocks: Vec<ThingId> = world.things.values().filter(|t| !t.is_agent()).map(|t| t.id).collect();
    for b in blocks {
        let pos = world.things[&b].position;
        let next = world
            .things
            .values()
            .find(|t| t.id != b && t.position.is_adjacent(pos))
            .map(|t| t.id);
        if let Some(n) = next {
            if rng.gen_bool(0.5) {
                world.attachments.add(b, n);
            }
        }
    }
    for _ in 0..rng.gen_range(0..4) {
        let p = Position::new(rng.gen_range(0..world.width()), rng.gen_range(0..world.height()));
        world.markers.push(ClearMarker { position: p, expires: 5 });
    }
    world.step = rng.gen_range(0..20);
    world
}

fn random_dir(rng: &mut impl Rng) -> Direction {
    *Direction::ALL.choose(rng).expect("four directions")
}

fn random_rel(rng: &mut impl Rng, r: i32) -> Position {
    Position::new(rng.gen_range(-r..=r), rng.gen_range(-r..=r))
}

/// Any action, with parameters biased towards ones that can succeed.
pub fn random_action(rng: &mut impl Rng, world: &WorldState, agent: ThingId) -> Action {
    let team = world.team_of(agent).unwrap_or("A").to_string();
    match rng.gen_range(0..20) {
        0..=5 => Action::Move(random_dir(rng)),
        6 | 7 => Action::Rotate(if rng.gen() { Rotation::Clockwise } else { Rotation::Counterclockwise }),
        8..=10 => Action::Attach(random_dir(rng)),
        11 => Action::Detach(random_dir(rng)),
        12 | 13 => {
            let mates: Vec<String> = world
                .agent_ids()
                .into_iter()
                .filter(|id| *id != agent && world.team_of(*id) == Some(team.as_str()))
                .map(|id| world.agent(id).expect("agent").name.clone())
                .collect();
            Action::Connect {
                partner: mates.choose(rng).cloned().unwrap_or_else(|| "nobody".into()),
                block: random_rel(rng, 2),
            }
        }
        14 => Action::Disconnect { first: random_rel(rng, 2), second: random_rel(rng, 2) },
        15 | 16 => Action::Request(random_dir(rng)),
        17 => Action::Clear(random_rel(rng, 3)),
        18 => Action::Submit(format!("task{}", rng.gen_range(0..4))),
        _ => Action::Skip,
    }
}

/// Structural invariants of the world; returns the first violation.
pub fn check_invariants(world: &WorldState) -> Result<(), String> {
    let mut seen: BTreeMap<Position, ThingId> = BTreeMap::new();
    for t in world.things.values() {
        if !world.terrain.contains(t.position) {
            return Err(format!("{:?} outside the grid", t.id));
        }
        if world.terrain.get(t.position).is_obstacle() {
            return Err(format!("{:?} on an obstacle at {:?}", t.id, t.position));
        }
        if let Some(other) = seen.insert(t.position, t.id) {
            return Err(format!("{:?} and {:?} share {:?}", t.id, other, t.position));
        }
    }
    for (a, b) in world.attachments.edges() {
        let (pa, pb) = match (world.things.get(&a), world.things.get(&b)) {
            (Some(x), Some(y)) => (x.position, y.position),
            _ => return Err(format!("edge {a:?}-{b:?} names a missing thing")),
        };
        if !pa.is_adjacent(pb) {
            return Err(format!("edge {a:?}-{b:?} joins {pa:?} and {pb:?}"));
        }
        if world.things[&a].is_agent() && world.things[&b].is_agent() {
            return Err(format!("edge {a:?}-{b:?} joins two agents"));
        }
    }
    let mut done: BTreeSet<ThingId> = BTreeSet::new();
    for id in world.things.keys() {
        if done.contains(id) || world.attachments.degree(*id) == 0 {
            continue;
        }
        let comp = components_of(world, *id);
        let edges = world
            .attachments
            .edges()
            .iter()
            .filter(|(a, _)| comp.contains(a))
            .count();
        if edges + 1 != comp.len() {
            return Err(format!("component of {id:?}: {} nodes, {edges} edges", comp.len()));
        }
        if !comp.iter().any(|c| world.things[c].is_agent()) {
            return Err(format!("component of {id:?} has no agent"));
        }
        if comp.len() > world.config.max_component_size as usize {
            return Err(format!("component of {id:?} has {} things", comp.len()));
        }
        done.extend(comp);
    }
    Ok(())
}

/// Connected component by plain DFS over the edge list.
pub fn components_of(world: &WorldState, start: ThingId) -> BTreeSet<ThingId> {
    let edges = world.attachments.edges();
    let mut out = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for (a, b) in &edges {
            let other = if *a == n { *b } else if *b == n { *a } else { continue };
            if out.insert(other) {
                stack.push(other);
            }
        }
    }
    out
}

/// Checks that every multi-thing component whose membership did not change
/// moved rigidly. Returns how many components were checked.
pub fn check_rigid(before: &WorldState, after: &WorldState) -> Result<usize, String> {
    let mut checked = 0;
    let mut done = BTreeSet::new();
    for id in after.things.keys() {
        if done.contains(id) || after.attachments.degree(*id) == 0 || !before.things.contains_key(id) {
            continue;
        }
        let comp = components_of(after, *id);
        done.extend(comp.iter().copied());
        if components_of(before, *id) != comp {
            continue;
        }
        let anchor = *comp.iter().next().expect("non-empty");
        let rel = |w: &WorldState, t: &ThingId| w.things[t].position - w.things[&anchor].position;
        let rotations = [
            |p: Position| p,
            |p: Position| Position::new(-p.y, p.x),
            |p: Position| Position::new(-p.x, -p.y),
            |p: Position| Position::new(p.y, -p.x),
        ];
        let ok = rotations
            .iter()
            .any(|r| comp.iter().all(|t| r(rel(before, t)) == rel(after, t)));
        if !ok {
            return Err(format!("component of {id:?} deformed"));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Authenticates and then ignores everything the server sends.
pub fn silent_agent(port: u16, user: String, pw: String) {
    let Ok(mut stream) = TcpStream::connect(("127.0.0.1", port)) else {
        return;
    };
    let auth = encode(&Message::AuthRequest(AuthRequest { user, pw }));
    if stream.write_all(&auth).is_err() {
        return;
    }
    let _ = std::io::copy(&mut stream, &mut std::io::sink());
}
