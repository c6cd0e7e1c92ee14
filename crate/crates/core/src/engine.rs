//! One simulation step: action resolution, clear events, task lifecycle.
//!
//! All agents act "simultaneously" from the clients' point of view. The
//! engine realises this by resolving actions one agent at a time in a fresh
//! pseudo-random permutation drawn from the world generator every step. A
//! mutually referencing pair of `connect` actions resolves atomically at the
//! slot of whichever partner comes first.
//!
//! Order of a step:
//!
//! 1. markers from the previous step expire,
//! 2. actions resolve in permutation order,
//! 3. a clear event fires with the configured probability,
//! 4. expired tasks retire and a new task may spawn,
//! 5. the step counter advances.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionResult, Outcome};
use crate::geometry::{Direction, Position, Rotation};
use crate::tasks::{check_submission, generate_task};
use crate::world::{ClearCharge, ClearMarker, Motion, Terrain, ThingId, ThingKind, WorldState};

/// An environmental clear that hit the grid during a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearEvent {
    pub center: Position,
    pub radius: u32,
    pub regenerated: u32,
    /// Cells that became obstacles after the clear, sorted.
    pub obstacles: Vec<Position>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    /// One entry per agent, in ascending agent id order.
    pub results: Vec<ActionResult>,
    pub events: Vec<ClearEvent>,
    /// Resolution order used this step (agent names).
    pub order: Vec<String>,
}

/// Executes the next step of `world`.
///
/// Agents without an entry in `actions` are treated as having sent nothing
/// and receive `no_op`.
pub fn step(world: &mut WorldState, actions: &BTreeMap<ThingId, Action>) -> StepReport {
    let executing = world.executing_step();
    world.markers.retain(|m| m.expires > executing);

    let order = world.shuffled_agents();
    let mut outcomes: BTreeMap<ThingId, Outcome> = BTreeMap::new();

    for &agent in &order {
        if outcomes.contains_key(&agent) {
            continue;
        }
        let action = actions.get(&agent).cloned().unwrap_or(Action::NoOp);
        if let Action::Connect { partner, block } = &action {
            if !world.is_disabled(agent) {
                match connect_partner(world, agent, partner, actions) {
                    Ok((other, other_block)) => {
                        let (a, b) = resolve_connect(world, agent, other, *block, other_block);
                        outcomes.insert(agent, a);
                        outcomes.insert(other, b);
                    }
                    Err(o) => {
                        outcomes.insert(agent, o);
                    }
                }
                continue;
            }
        }
        let outcome = resolve(world, agent, &action);
        outcomes.insert(agent, outcome);
    }

    let mut results = Vec::with_capacity(outcomes.len());
    for (id, outcome) in &outcomes {
        let action = actions.get(id).cloned().unwrap_or(Action::NoOp);
        let agent = world.agent_mut(*id).expect("resolved agents exist");
        agent.last_action = Some(action.clone());
        agent.last_outcome = Some(*outcome);
        results.push(ActionResult {
            agent: agent.name.clone(),
            action,
            outcome: *outcome,
        });
    }

    let mut events = Vec::new();
    if world.rng.gen_bool(world.config.event_probability) {
        events.push(apply_clear_event(world));
    }

    world.tasks.retain(|_, t| t.deadline > executing);
    if (world.tasks.len() as u32) < world.config.task_cap
        && world.rng.gen_bool(world.config.task_probability)
    {
        let name = format!("task{}", world.tasks_created);
        let task = generate_task(&mut world.rng, &world.config, executing, name.clone());
        world.tasks.insert(name, task);
        world.tasks_created += 1;
    }

    world.step = executing;
    StepReport {
        results,
        events,
        order: order
            .iter()
            .map(|id| world.agent(*id).map(|a| a.name.clone()).unwrap_or_default())
            .collect(),
    }
}

/// Finds the partner of a connect and checks that it reciprocates.
fn connect_partner(
    world: &WorldState,
    agent: ThingId,
    partner: &str,
    actions: &BTreeMap<ThingId, Action>,
) -> Result<(ThingId, Position), Outcome> {
    let other = world
        .agent_by_name(partner)
        .ok_or(Outcome::FailedParameter)?;
    if other == agent {
        return Err(Outcome::FailedParameter);
    }
    if world.is_disabled(other) {
        return Err(Outcome::FailedPartner);
    }
    let own_name = &world.agent(agent).expect("agent exists").name;
    match actions.get(&other) {
        Some(Action::Connect {
            partner: back,
            block,
        }) if back == own_name => Ok((other, *block)),
        _ => Err(Outcome::FailedPartner),
    }
}

/// Resolves any single-agent action (everything except a connect pair).
pub fn resolve(world: &mut WorldState, agent: ThingId, action: &Action) -> Outcome {
    if *action == Action::NoOp {
        return Outcome::NoOp;
    }
    if world.is_disabled(agent) && *action != Action::Skip {
        return Outcome::FailedStatus;
    }
    match action {
        Action::Skip => Outcome::Success,
        Action::NoOp => Outcome::NoOp,
        Action::Move(dir) => resolve_move(world, agent, *dir),
        Action::Rotate(rot) => resolve_rotate(world, agent, *rot),
        Action::Attach(dir) => resolve_attach(world, agent, *dir),
        Action::Detach(dir) => resolve_detach(world, agent, *dir),
        Action::Request(dir) => resolve_request(world, agent, *dir),
        Action::Clear(target) => resolve_clear(world, agent, *target),
        Action::Submit(task) => resolve_submit(world, agent, task),
        Action::Disconnect { first, second } => resolve_disconnect(world, agent, *first, *second),
        // A connect that reaches this point has no reciprocating partner.
        Action::Connect { .. } => Outcome::FailedPartner,
    }
}

fn position_of(world: &WorldState, id: ThingId) -> Position {
    world.things[&id].position
}

pub fn resolve_move(world: &mut WorldState, agent: ThingId, dir: Direction) -> Outcome {
    let component = world.attachments.component(agent);
    match world.translate_component(&component, dir) {
        Motion::Ok(moves) => {
            world.apply_moves(&moves);
            Outcome::Success
        }
        Motion::Blocked(_) => Outcome::FailedPath,
    }
}

pub fn resolve_rotate(world: &mut WorldState, agent: ThingId, rot: Rotation) -> Outcome {
    match world.rotate_component(agent, rot) {
        Motion::Ok(moves) => {
            world.apply_moves(&moves);
            Outcome::Success
        }
        Motion::Blocked(_) => Outcome::FailedPath,
    }
}

pub fn resolve_request(world: &mut WorldState, agent: ThingId, dir: Direction) -> Outcome {
    let target = position_of(world, agent).step(dir);
    let Some(block_type) = world.dispenser_at(target).map(|d| d.block_type.clone()) else {
        return Outcome::FailedTarget;
    };
    if world.thing_at(target).is_some() || world.terrain.get(target).is_obstacle() {
        return Outcome::FailedBlocked;
    }
    world.spawn_block(target, &block_type);
    Outcome::Success
}

pub fn resolve_attach(world: &mut WorldState, agent: ThingId, dir: Direction) -> Outcome {
    let target = position_of(world, agent).step(dir);
    let Some(block) = world.thing_at(target) else {
        return Outcome::FailedTarget;
    };
    if world.things[&block].is_agent() {
        return Outcome::FailedTarget;
    }
    let mine = world.attachments.component(agent);
    if mine.contains(&block) {
        return Outcome::FailedTarget;
    }
    let theirs = world.attachments.component(block);
    if mine.len() + theirs.len() > world.config.max_component_size as usize {
        return Outcome::FailedResources;
    }
    world.attachments.add(agent, block);
    Outcome::Success
}

pub fn resolve_detach(world: &mut WorldState, agent: ThingId, dir: Direction) -> Outcome {
    let target = position_of(world, agent).step(dir);
    let Some(block) = world.thing_at(target) else {
        return Outcome::FailedTarget;
    };
    if !world.attachments.remove(agent, block) {
        return Outcome::FailedTarget;
    }
    world.prune_orphans([block, agent]);
    Outcome::Success
}

/// Joins two blocks held by two teammates. Both receive the same outcome.
pub fn resolve_connect(
    world: &mut WorldState,
    a: ThingId,
    b: ThingId,
    rel_a: Position,
    rel_b: Position,
) -> (Outcome, Outcome) {
    let both = |o| (o, o);
    if world.team_of(a) != world.team_of(b) {
        return both(Outcome::FailedPartner);
    }
    let comp_a = world.attachments.component(a);
    let comp_b = world.attachments.component(b);
    let held_block = |agent: ThingId, rel: Position, comp: &BTreeSet<ThingId>| {
        let id = world.thing_at(position_of(world, agent) + rel)?;
        (world.things[&id].block_type().is_some() && comp.contains(&id)).then_some(id)
    };
    let (Some(block_a), Some(block_b)) = (held_block(a, rel_a, &comp_a), held_block(b, rel_b, &comp_b))
    else {
        return both(Outcome::FailedTarget);
    };
    if !position_of(world, block_a).is_adjacent(position_of(world, block_b)) {
        return both(Outcome::FailedTarget);
    }
    if comp_a.contains(&block_b) {
        return both(Outcome::FailedTarget);
    }
    if comp_a.len() + comp_b.len() > world.config.max_component_size as usize {
        return both(Outcome::FailedResources);
    }
    world.attachments.add(block_a, block_b);
    both(Outcome::Success)
}

pub fn resolve_disconnect(
    world: &mut WorldState,
    agent: ThingId,
    first: Position,
    second: Position,
) -> Outcome {
    if !first.is_adjacent(second) {
        return Outcome::FailedParameter;
    }
    let origin = position_of(world, agent);
    let (Some(x), Some(y)) = (world.thing_at(origin + first), world.thing_at(origin + second))
    else {
        return Outcome::FailedTarget;
    };
    let component = world.attachments.component(agent);
    let blocks = world.things[&x].block_type().is_some() && world.things[&y].block_type().is_some();
    if !blocks || !component.contains(&x) || !component.contains(&y) {
        return Outcome::FailedTarget;
    }
    if !world.attachments.remove(x, y) {
        return Outcome::FailedTarget;
    }
    world.prune_orphans([x, y]);
    Outcome::Success
}

pub fn resolve_clear(world: &mut WorldState, agent: ThingId, rel: Position) -> Outcome {
    let config = &world.config;
    if rel == Position::ORIGIN
        || config.vision_metric.distance(rel.x, rel.y) > config.vision_range
    {
        return Outcome::FailedTarget;
    }
    let target = position_of(world, agent) + rel;
    if !world.terrain.contains(target) || world.terrain.is_border(target) {
        return Outcome::FailedTarget;
    }
    let executing = world.executing_step();
    let needed = world.config.clear_charge;
    let state = world.agent_mut(agent).expect("clearing thing is an agent");
    let count = match &state.charge {
        Some(c) if c.target == target => c.count + 1,
        _ => 1,
    };
    state.charge = Some(ClearCharge { target, count });
    place_marker(world, target, executing + 1);

    if count >= needed {
        world.agent_mut(agent).expect("agent").charge = None;
        clear_cell(world, target, executing);
    }
    Outcome::Success
}

fn place_marker(world: &mut WorldState, position: Position, expires: u64) {
    match world.markers.iter_mut().find(|m| m.position == position) {
        Some(m) => m.expires = m.expires.max(expires),
        None => world.markers.push(ClearMarker { position, expires }),
    }
    world.markers.sort();
}

/// Removes an obstacle or block at `p`, or disables an agent standing there.
fn clear_cell(world: &mut WorldState, p: Position, executing: u64) {
    if world.terrain.get(p).is_obstacle() && !world.terrain.is_border(p) {
        world.terrain.set(p, Terrain::Empty);
    }
    let Some(id) = world.thing_at(p) else {
        return;
    };
    if world.things[&id].is_agent() {
        disable_agent(world, id, executing);
    } else {
        world.remove_thing(id).expect("thing exists");
    }
}

/// Disables an agent for the configured duration and severs its edges.
pub fn disable_agent(world: &mut WorldState, id: ThingId, executing: u64) {
    let duration = world.config.disable_duration;
    let state = world.agent_mut(id).expect("disabling an agent");
    state.disabled_until = executing + duration;
    state.charge = None;
    let former = world.attachments.isolate(id);
    world.prune_orphans(former);
}

pub fn resolve_submit(world: &mut WorldState, agent: ThingId, task_name: &str) -> Outcome {
    match check_submission(world, agent, task_name) {
        Ok(consumed) => {
            for id in consumed {
                world.remove_thing(id).expect("consumed block exists");
            }
            let task = world.tasks.remove(task_name).expect("task checked");
            let team = world.team_of(agent).expect("agent has a team").to_string();
            *world.scores.entry(team).or_insert(0) += task.reward;
            world.tasks_completed += 1;
            Outcome::Success
        }
        Err(o) => o,
    }
}

/// Fires a clear event at a random interior cell.
///
/// Everything within the configured radius is cleared as by a resolved clear
/// action; then between `event_regen_min` and `event_regen_max` obstacles
/// appear on free cells within radius + 2 of the centre.
pub fn apply_clear_event(world: &mut WorldState) -> ClearEvent {
    let (w, h) = (world.width(), world.height());
    let center = Position::new(world.rng.gen_range(1..w - 1), world.rng.gen_range(1..h - 1));
    apply_clear_event_at(world, center)
}

pub fn apply_clear_event_at(world: &mut WorldState, center: Position) -> ClearEvent {
    let executing = world.executing_step();
    let radius = world.config.event_radius;
    let r = radius as i32;
    for dy in -r..=r {
        for dx in -r..=r {
            let p = center + Position::new(dx, dy);
            if dx.abs() + dy.abs() > r || !world.terrain.contains(p) || world.terrain.is_border(p) {
                continue;
            }
            clear_cell(world, p, executing);
            place_marker(world, p, executing + 1);
        }
    }

    let reach = r + 2;
    let mut candidates = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let p = center + Position::new(dx, dy);
            if dx.abs() + dy.abs() <= reach
                && world.terrain.contains(p)
                && !world.terrain.is_border(p)
                && world.terrain.get(p) == Terrain::Empty
                && world.thing_at(p).is_none()
                && world.dispenser_at(p).is_none()
            {
                candidates.push(p);
            }
        }
    }
    let wanted = world
        .rng
        .gen_range(world.config.event_regen_min..=world.config.event_regen_max)
        as usize;
    let mut obstacles: Vec<Position> = candidates
        .choose_multiple(&mut world.rng, wanted)
        .copied()
        .collect();
    obstacles.sort();
    for p in &obstacles {
        world.terrain.set(*p, Terrain::Obstacle);
    }
    ClearEvent {
        center,
        radius,
        regenerated: obstacles.len() as u32,
        obstacles,
    }
}

/// True when the thing is a block that is attached to something.
pub fn is_attached(world: &WorldState, id: ThingId) -> bool {
    world.attachments.degree(id) > 0
}

/// Convenience for tests and tools: the kind of thing at `p`.
pub fn kind_at(world: &WorldState, p: Position) -> Option<&ThingKind> {
    world.thing_at(p).map(|id| &world.things[&id].kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::tasks::{Requirement, Task};
    use crate::world::AgentState;

    fn quiet_config() -> SimConfig {
        SimConfig {
            width: 20,
            height: 20,
            event_probability: 0.0,
            task_probability: 0.0,
            ..SimConfig::default()
        }
    }

    fn add_agent(world: &mut WorldState, name: &str, team: &str, p: Position) -> ThingId {
        world.spawn(
            p,
            ThingKind::Agent(AgentState {
                name: name.into(),
                team: team.into(),
                disabled_until: 0,
                charge: None,
                last_action: None,
                last_outcome: None,
            }),
        )
    }

    fn world_with(agents: &[(&str, &str, Position)]) -> (WorldState, Vec<ThingId>) {
        let mut world = WorldState::empty(&quiet_config(), 11);
        let ids = agents
            .iter()
            .map(|(n, t, p)| add_agent(&mut world, n, t, *p))
            .collect();
        (world, ids)
    }

    fn p(x: i32, y: i32) -> Position {
        Position::new(x, y)
    }

    #[test]
    fn all_skip_changes_only_the_clock() {
        let (mut world, ids) = world_with(&[("a1", "A", p(3, 3)), ("b1", "B", p(9, 9))]);
        let before = world.clone();
        let actions = ids.iter().map(|id| (*id, Action::Skip)).collect();
        let report = step(&mut world, &actions);
        assert!(report.results.iter().all(|r| r.outcome == Outcome::Success));
        assert_eq!(world.step, 1);
        assert_eq!(world.terrain, before.terrain);
        assert_eq!(world.attachments, before.attachments);
        let pos = |w: &WorldState| w.things.values().map(|t| t.position).collect::<Vec<_>>();
        assert_eq!(pos(&world), pos(&before));
    }

    #[test]
    fn missing_action_is_no_op() {
        let (mut world, ids) = world_with(&[("a1", "A", p(3, 3)), ("b1", "B", p(9, 9))]);
        let actions = BTreeMap::from([(ids[0], Action::Skip)]);
        let report = step(&mut world, &actions);
        assert_eq!(report.results[1].outcome, Outcome::NoOp);
        assert_eq!(report.results[1].action, Action::NoOp);
        assert_eq!(report.results.len(), 2);
    }

    #[test]
    fn move_conflict_goes_to_earlier_agent() {
        let (mut world, ids) = world_with(&[("a1", "A", p(4, 5)), ("b1", "B", p(6, 5))]);
        // Recompute this step's permutation from a copy of the generator.
        let mut rng = world.rng.clone();
        let mut order = world.agent_ids();
        order.shuffle(&mut rng);
        let actions = BTreeMap::from([
            (ids[0], Action::Move(Direction::East)),
            (ids[1], Action::Move(Direction::West)),
        ]);
        let report = step(&mut world, &actions);
        let first = order[0];
        let winner = &world.agent(first).unwrap().name;
        for r in &report.results {
            let expected = if &r.agent == winner {
                Outcome::Success
            } else {
                Outcome::FailedPath
            };
            assert_eq!(r.outcome, expected, "{}", r.agent);
        }
        assert_eq!(world.thing_at(p(5, 5)), Some(first));
    }

    #[test]
    fn request_cases() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5))]);
        let a = ids[0];
        world.dispensers.push(crate::world::Dispenser {
            position: p(5, 4),
            block_type: "b0".into(),
        });
        assert_eq!(
            resolve_request(&mut world, a, Direction::South),
            Outcome::FailedTarget
        );
        assert_eq!(
            resolve_request(&mut world, a, Direction::North),
            Outcome::Success
        );
        let b = world.thing_at(p(5, 4)).unwrap();
        assert_eq!(world.things[&b].block_type(), Some("b0"));
        assert!(!is_attached(&world, b));
        assert_eq!(
            resolve_request(&mut world, a, Direction::North),
            Outcome::FailedBlocked
        );
    }

    #[test]
    fn attach_cases() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5)), ("b1", "B", p(5, 6))]);
        let (a, b) = (ids[0], ids[1]);
        let block = world.spawn_block(p(6, 5), "b0");
        assert_eq!(
            resolve_attach(&mut world, a, Direction::East),
            Outcome::Success
        );
        assert!(world.attachments.contains(a, block));
        assert_eq!(
            resolve_attach(&mut world, a, Direction::East),
            Outcome::FailedTarget
        );
        assert_eq!(
            resolve_attach(&mut world, a, Direction::South),
            Outcome::FailedTarget,
            "agents cannot be attached"
        );
        assert_eq!(
            resolve_attach(&mut world, a, Direction::West),
            Outcome::FailedTarget
        );
        assert!(world.attachments.component(b).len() == 1);
    }

    #[test]
    fn attach_respects_component_limit() {
        // We are 2 things (agent + block); the opponent holds a chain of 8
        // blocks (9 things). The union of 11 exceeds the limit of 10.
        let (mut world, ids) = world_with(&[("a1", "A", p(3, 5)), ("b1", "B", p(2, 6))]);
        let (a, b) = (ids[0], ids[1]);
        let held = world.spawn_block(p(4, 5), "b0");
        world.attachments.add(a, held);
        let mut prev = b;
        for x in 3..=10 {
            let blk = world.spawn_block(p(x, 6), "b1");
            world.attachments.add(prev, blk);
            prev = blk;
        }
        assert_eq!(world.attachments.component(a).len(), 2);
        assert_eq!(world.attachments.component(b).len(), 9);
        assert_eq!(
            resolve_attach(&mut world, a, Direction::South),
            Outcome::FailedResources
        );
        world.config.max_component_size = 11;
        assert_eq!(
            resolve_attach(&mut world, a, Direction::South),
            Outcome::Success
        );
        assert_eq!(world.attachments.component(b).len(), 11);
    }

    fn connect_setup() -> (WorldState, ThingId, ThingId, ThingId, ThingId) {
        // a holds x east of it; b holds y west of it; x and y are adjacent.
        let (mut world, ids) = world_with(&[("a1", "A", p(4, 5)), ("a2", "A", p(7, 5))]);
        let x = world.spawn_block(p(5, 5), "b0");
        let y = world.spawn_block(p(6, 5), "b1");
        world.attachments.add(ids[0], x);
        world.attachments.add(ids[1], y);
        (world, ids[0], ids[1], x, y)
    }

    #[test]
    fn connect_canonical_case() {
        let (mut world, a, b, x, y) = connect_setup();
        let actions = BTreeMap::from([
            (
                a,
                Action::Connect {
                    partner: "a2".into(),
                    block: p(1, 0),
                },
            ),
            (
                b,
                Action::Connect {
                    partner: "a1".into(),
                    block: p(-1, 0),
                },
            ),
        ]);
        let report = step(&mut world, &actions);
        assert!(report.results.iter().all(|r| r.outcome == Outcome::Success));
        assert!(world.attachments.contains(x, y));
        assert_eq!(world.attachments.component(a).len(), 4);
    }

    #[test]
    fn connect_without_partner() {
        let (mut world, a, b, _, _) = connect_setup();
        let actions = BTreeMap::from([
            (
                a,
                Action::Connect {
                    partner: "a2".into(),
                    block: p(1, 0),
                },
            ),
            (b, Action::Skip),
        ]);
        let report = step(&mut world, &actions);
        assert_eq!(report.results[0].outcome, Outcome::FailedPartner);
        assert_eq!(report.results[1].outcome, Outcome::Success);
    }

    #[test]
    fn connect_rejects_cycles() {
        // Both blocks already belong to a's component.
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5)), ("a2", "A", p(7, 6))]);
        let (a, b) = (ids[0], ids[1]);
        let x = world.spawn_block(p(6, 5), "b0");
        let y = world.spawn_block(p(6, 6), "b0");
        world.attachments.add(a, x);
        let blk = world.spawn_block(p(5, 6), "b0");
        world.attachments.add(a, blk);
        let z = world.thing_at(p(5, 6)).unwrap();
        world.attachments.add(z, y);
        world.attachments.add(b, y);
        assert!(world.attachments.component(a).contains(&y));
        let before = world.attachments.edge_count();
        let (oa, ob) = resolve_connect(&mut world, a, b, p(1, 0), p(-1, 0));
        assert_eq!((oa, ob), (Outcome::FailedTarget, Outcome::FailedTarget));
        assert_eq!(world.attachments.edge_count(), before);
    }

    #[test]
    fn connect_across_teams_fails() {
        let (mut world, ids) = world_with(&[("a1", "A", p(4, 5)), ("b1", "B", p(7, 5))]);
        let x = world.spawn_block(p(5, 5), "b0");
        let y = world.spawn_block(p(6, 5), "b1");
        world.attachments.add(ids[0], x);
        world.attachments.add(ids[1], y);
        assert_eq!(
            resolve_connect(&mut world, ids[0], ids[1], p(1, 0), p(-1, 0)),
            (Outcome::FailedPartner, Outcome::FailedPartner)
        );
    }

    #[test]
    fn clear_charges_then_removes_obstacle() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5))]);
        let a = ids[0];
        world.terrain.set(p(5, 3), Terrain::Obstacle);
        for i in 1..=3 {
            assert_eq!(resolve_clear(&mut world, a, p(0, -2)), Outcome::Success);
            let still = world.terrain.get(p(5, 3)).is_obstacle();
            assert_eq!(still, i < 3, "after clear #{i}");
            assert!(world.markers.iter().any(|m| m.position == p(5, 3)));
        }
        assert_eq!(world.agent(a).unwrap().charge, None);
    }

    #[test]
    fn clear_switching_target_resets_charge() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5))]);
        let a = ids[0];
        world.terrain.set(p(5, 3), Terrain::Obstacle);
        world.terrain.set(p(6, 5), Terrain::Obstacle);
        resolve_clear(&mut world, a, p(0, -2));
        resolve_clear(&mut world, a, p(0, -2));
        resolve_clear(&mut world, a, p(1, 0));
        assert!(world.terrain.get(p(5, 3)).is_obstacle());
        assert!(world.terrain.get(p(6, 5)).is_obstacle());
        assert_eq!(
            world.agent(a).unwrap().charge,
            Some(ClearCharge {
                target: p(6, 5),
                count: 1
            })
        );
    }

    #[test]
    fn clear_out_of_range_or_on_wall() {
        let (mut world, ids) = world_with(&[("a1", "A", p(2, 5))]);
        assert_eq!(
            resolve_clear(&mut world, ids[0], p(3, 3)),
            Outcome::FailedTarget
        );
        assert_eq!(
            resolve_clear(&mut world, ids[0], p(-2, 0)),
            Outcome::FailedTarget
        );
        assert_eq!(
            resolve_clear(&mut world, ids[0], Position::ORIGIN),
            Outcome::FailedTarget
        );
    }

    #[test]
    fn clear_disables_agent_and_frees_its_blocks() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5)), ("b1", "B", p(8, 5))]);
        let (a, b) = (ids[0], ids[1]);
        let x = world.spawn_block(p(8, 4), "b0");
        let y = world.spawn_block(p(8, 6), "b0");
        world.attachments.add(b, x);
        world.attachments.add(b, y);
        for _ in 0..3 {
            resolve_clear(&mut world, a, p(3, 0));
        }
        assert_eq!(world.attachments.edge_count(), 0);
        assert!(world.things.contains_key(&x) && world.things.contains_key(&y));
        assert!(world.is_disabled(b));
        assert_eq!(world.agent(b).unwrap().disabled_until, 1 + 4);
        assert_eq!(resolve(&mut world, b, &Action::Move(Direction::North)), Outcome::FailedStatus);
        assert_eq!(resolve(&mut world, b, &Action::Skip), Outcome::Success);
        assert_eq!(resolve(&mut world, b, &Action::NoOp), Outcome::NoOp);
    }

    #[test]
    fn disabled_for_exactly_the_configured_steps() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5))]);
        let a = ids[0];
        let now = world.executing_step();
        disable_agent(&mut world, a, now);
        let mut failed = 0;
        for _ in 0..10 {
            let actions = BTreeMap::from([(a, Action::Move(Direction::East))]);
            let r = step(&mut world, &actions);
            if r.results[0].outcome == Outcome::FailedStatus {
                failed += 1;
            }
        }
        // Disabled during step 1 itself plus the following four.
        assert_eq!(failed, 5);
    }

    #[test]
    fn detach_and_disconnect() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5)), ("b1", "B", p(10, 10))]);
        let a = ids[0];
        let x = world.spawn_block(p(6, 5), "b0");
        let y = world.spawn_block(p(7, 5), "b0");
        let z = world.spawn_block(p(8, 5), "b0");
        world.attachments.add(a, x);
        world.attachments.add(x, y);
        world.attachments.add(y, z);
        assert_eq!(
            resolve_disconnect(&mut world, a, p(2, 0), p(3, 0)),
            Outcome::Success
        );
        assert!(!world.attachments.contains(y, z));
        assert_eq!(world.attachments.component(a), BTreeSet::from([a, x, y]));
        assert_eq!(
            resolve_disconnect(&mut world, a, p(1, 0), p(3, 0)),
            Outcome::FailedParameter
        );
        assert_eq!(
            resolve_detach(&mut world, a, Direction::North),
            Outcome::FailedTarget
        );
        assert_eq!(
            resolve_detach(&mut world, a, Direction::East),
            Outcome::Success
        );
        assert_eq!(world.attachments.edge_count(), 0, "orphaned x-y is dissolved");

        // Blocks held by someone else cannot be disconnected.
        let b = ids[1];
        let u = world.spawn_block(p(10, 11), "b0");
        let v = world.spawn_block(p(10, 12), "b0");
        world.attachments.add(b, u);
        world.attachments.add(u, v);
        world.place(a, p(11, 11)).unwrap();
        assert_eq!(
            resolve_disconnect(&mut world, a, p(-1, 0), p(-1, 1)),
            Outcome::FailedTarget
        );
    }

    fn give_task(world: &mut WorldState, reqs: &[(Position, &str)], deadline: u64) -> String {
        let name = "task0".to_string();
        world.tasks.insert(
            name.clone(),
            Task {
                name: name.clone(),
                requirements: reqs
                    .iter()
                    .map(|(pos, t)| Requirement {
                        pos: *pos,
                        block_type: t.to_string(),
                    })
                    .collect(),
                reward: crate::tasks::reward(reqs.len() as u32).unwrap(),
                deadline,
                spawned: 0,
            },
        );
        name
    }

    #[test]
    fn submit_in_goal_zone() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5))]);
        let a = ids[0];
        world.terrain.set(p(5, 5), Terrain::Goal);
        let x = world.spawn_block(p(5, 6), "b0");
        let y = world.spawn_block(p(5, 7), "b1");
        world.attachments.add(a, x);
        world.attachments.add(x, y);
        let name = give_task(&mut world, &[(p(0, 1), "b0"), (p(0, 2), "b1")], 50);
        let blocks_before = world.things.len();
        assert_eq!(resolve_submit(&mut world, a, &name), Outcome::Success);
        assert_eq!(world.scores["A"], 40);
        assert_eq!(world.things.len(), blocks_before - 2);
        assert!(world.tasks.is_empty());
        assert_eq!(resolve_submit(&mut world, a, &name), Outcome::FailedTarget);
    }

    #[test]
    fn submit_outside_goal_or_wrong_shape() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5))]);
        let a = ids[0];
        world.terrain.set(p(5, 4), Terrain::Goal);
        let x = world.spawn_block(p(5, 6), "b0");
        world.attachments.add(a, x);
        let name = give_task(&mut world, &[(p(0, 1), "b0"), (p(1, 1), "b0")], 50);
        assert_eq!(resolve_submit(&mut world, a, &name), Outcome::FailedTarget);
        world.terrain.set(p(5, 5), Terrain::Goal);
        assert_eq!(resolve_submit(&mut world, a, &name), Outcome::FailedTarget);
        // Present but unattached.
        world.spawn_block(p(6, 6), "b0");
        assert_eq!(resolve_submit(&mut world, a, &name), Outcome::FailedTarget);
        assert_eq!(world.scores["A"], 0);
    }

    #[test]
    fn expired_task_cannot_be_submitted() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5))]);
        let a = ids[0];
        world.terrain.set(p(5, 5), Terrain::Goal);
        let x = world.spawn_block(p(5, 6), "b0");
        let y = world.spawn_block(p(5, 7), "b0");
        world.attachments.add(a, x);
        world.attachments.add(x, y);
        let name = give_task(&mut world, &[(p(0, 1), "b0"), (p(0, 2), "b0")], 3);
        world.step = 3;
        assert_eq!(resolve_submit(&mut world, a, &name), Outcome::FailedTarget);
        world.step = 2;
        assert_eq!(resolve_submit(&mut world, a, &name), Outcome::Success);
    }

    #[test]
    fn event_on_empty_region_only_adds_obstacles() {
        let (mut world, _) = world_with(&[("a1", "A", p(1, 1))]);
        let before_obstacles = world.terrain.count(Terrain::Obstacle);
        let ev = apply_clear_event_at(&mut world, p(10, 10));
        assert!((5..=10).contains(&ev.regenerated));
        assert_eq!(
            world.terrain.count(Terrain::Obstacle),
            before_obstacles + ev.regenerated as usize
        );
        for o in &ev.obstacles {
            assert!(o.manhattan(ev.center) <= ev.radius + 2);
        }
    }

    #[test]
    fn event_disables_covered_agent() {
        let (mut world, ids) = world_with(&[("a1", "A", p(10, 10))]);
        let a = ids[0];
        let x = world.spawn_block(p(11, 10), "b0");
        world.attachments.add(a, x);
        apply_clear_event_at(&mut world, p(10, 11));
        assert!(world.is_disabled(a));
        assert_eq!(world.attachments.edge_count(), 0);
        assert!(!world.things.contains_key(&x), "blocks in radius vanish");
    }

    #[test]
    fn markers_expire_next_step() {
        let (mut world, ids) = world_with(&[("a1", "A", p(5, 5))]);
        let a = ids[0];
        step(
            &mut world,
            &BTreeMap::from([(a, Action::Clear(p(1, 1)))]),
        );
        assert_eq!(world.markers.len(), 1);
        step(&mut world, &BTreeMap::from([(a, Action::Skip)]));
        assert!(world.markers.is_empty());
    }

    #[test]
    fn tasks_spawn_under_cap() {
        let config = SimConfig {
            task_probability: 1.0,
            event_probability: 0.0,
            width: 20,
            height: 20,
            ..SimConfig::default()
        };
        let mut world = WorldState::empty(&config, 4);
        for _ in 0..10 {
            step(&mut world, &BTreeMap::new());
        }
        assert_eq!(world.tasks.len(), 2);
        assert_eq!(world.tasks_created, 2);
    }
}
