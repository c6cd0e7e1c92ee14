//! Waiter-and-helpers assembly.
//!
//! An agent holding a block whose type matches the first cell of an open
//! task, and standing in a goal zone, becomes the waiter for that task. It
//! turns its block south and stays put. Teammates that know where the waiter
//! is (see [`Blackboard`](super::board::Blackboard)) fetch the missing block
//! types from the nearest dispensers and deliver them in requirement order:
//! the helper parks its block on the target cell, reports ready, and both
//! agents connect in the following step. The waiter submits once the shape
//! is complete.

use std::collections::{BTreeMap, BTreeSet};

use crate::action::{Action, Outcome};
use crate::geometry::{Direction, Position, Rotation};
use crate::perception::{Percept, SeenTerrainKind, ThingClass};
use crate::tasks::Task;

use super::board::Assembly;
use super::nav::{NavStep, Planner};
use super::{Behavior, Ctx};

const SOUTH: Position = Position::new(0, 1);
/// Steps a useless block is carried before it is dropped.
const IDLE_LIMIT: u32 = 40;
const HELPER_PATIENCE: u64 = 120;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Role {
    Free,
    Waiter { rotate_failures: u32 },
    Helper { waiter: String, req: usize, since: u64 },
}

#[derive(Debug)]
pub struct Assembler {
    role: Role,
    /// Side of the carried block.
    block: Option<Position>,
    block_type: Option<String>,
    idle: u32,
    stuck: u32,
    /// Goal cells to avoid, with the step until which they are avoided.
    bad_goals: BTreeMap<Position, u64>,
}

impl Default for Assembler {
    fn default() -> Self {
        Assembler {
            role: Role::Free,
            block: None,
            block_type: None,
            idle: 0,
            stuck: 0,
            bad_goals: BTreeMap::new(),
        }
    }
}

fn is_block(p: &Percept, rel: Position) -> Option<&str> {
    p.thing_at(rel)
        .filter(|t| t.class == ThingClass::Block)
        .map(|t| t.details.as_str())
}

fn nav_action(step: NavStep) -> Option<Action> {
    match step {
        NavStep::Move(d) => Some(Action::Move(d)),
        NavStep::Rotate(r) => Some(Action::Rotate(r)),
        NavStep::Clear(rel) => Some(Action::Clear(rel)),
        NavStep::Arrived | NavStep::NoPath => None,
    }
}

/// Rotation bringing `side` closer to south.
fn turn_south(side: Position) -> Rotation {
    if side.rotated(Rotation::Counterclockwise) == SOUTH {
        Rotation::Counterclockwise
    } else {
        Rotation::Clockwise
    }
}

/// Whether this agent goes first among the entities next to `cell`.
///
/// Two agents attaching the same block would end up in one rigid structure.
/// Every agent sees the others at mirrored offsets, so ordering by offset
/// picks the same winner from every point of view.
fn first_in_line(p: &Percept, cell: Position) -> bool {
    cell.neighbors().iter().all(|n| {
        *n == Position::ORIGIN
            || !p.thing_at(*n).is_some_and(|t| t.class == ThingClass::Entity)
            || (n.y, n.x) > (0, 0)
    })
}

fn present(p: &Percept, task: &Task, i: usize) -> bool {
    let r = &task.requirements[i];
    is_block(p, r.pos) == Some(r.block_type.as_str()) && p.is_attached(r.pos)
}

/// An open task whose shape is fully in place around the agent. Blocks that
/// another agent stands next to may be that agent's and do not count.
fn finished_task(p: &Percept) -> Option<&Task> {
    if p.terrain_at(Position::ORIGIN) != Some(SeenTerrainKind::Goal) {
        return None;
    }
    p.tasks.iter().filter(|t| t.deadline > p.step).find(|t| {
        (0..t.requirements.len()).all(|i| present(p, t, i))
            && t.requirements.iter().all(|r| {
                r.pos.neighbors().iter().all(|n| {
                    *n == Position::ORIGIN
                        || !p.thing_at(*n).is_some_and(|x| x.class == ThingClass::Entity)
                })
            })
    })
}

impl Assembler {
    /// Keeps the carried block in sync with what happened last step.
    fn track_block(&mut self, p: &Percept) {
        match (&p.last_action, p.last_action_result) {
            (Some(Action::Attach(d)), Some(Outcome::Success)) => {
                self.block = Some(d.offset());
                self.block_type = is_block(p, d.offset()).map(str::to_string);
                self.idle = 0;
            }
            (Some(Action::Rotate(r)), Some(Outcome::Success)) => {
                self.block = self.block.map(|s| s.rotated(*r));
            }
            (Some(Action::Detach(_)), Some(Outcome::Success))
            | (Some(Action::Submit(_)), Some(Outcome::Success)) => {
                self.block = None;
            }
            _ => {}
        }
        let holds = self.block.is_some_and(|s| {
            !p.disabled
                && is_block(p, s).is_some()
                && p.is_attached(s)
                && p.is_attached(Position::ORIGIN)
        });
        if !holds {
            self.block = None;
            self.block_type = None;
        }
    }

    fn release(&mut self, ctx: &mut Ctx) {
        match std::mem::replace(&mut self.role, Role::Free) {
            Role::Waiter { .. } => ctx.board.disband(ctx.name),
            Role::Helper { waiter, .. } => {
                if let Some(a) = ctx.board.assemblies.get_mut(&waiter) {
                    if a.helper.as_deref() == Some(ctx.name) {
                        a.helper = None;
                    }
                }
                ctx.board.ready.remove(ctx.name);
            }
            Role::Free => {}
        }
        self.stuck = 0;
    }

    fn explore(&mut self, ctx: &mut Ctx) -> Action {
        let vision = ctx.map.vision();
        let map = &*ctx.map;
        let me = map.offset;
        let planner = Planner {
            max_cost: 80,
            ..Planner::new(map, ctx.percept, self.block)
        };
        let step = planner.plan(|pos, _| pos.manhattan(me) > vision && map.cell(pos).is_none());
        nav_action(step).unwrap_or(Action::Skip)
    }

    /// Block types teammates still need, most urgent first.
    fn wanted_types(&self, ctx: &Ctx) -> BTreeSet<String> {
        let mut need: Vec<String> = Vec::new();
        for a in ctx.board.assemblies.values() {
            let from = if a.helper.is_some() { a.next + 1 } else { a.next };
            need.extend(a.requirements.iter().skip(from).map(|r| r.block_type.clone()));
        }
        if need.is_empty() {
            let taken: BTreeSet<&str> = ctx.board.assemblies.values().map(|a| a.task.as_str()).collect();
            for t in &ctx.percept.tasks {
                if !taken.contains(t.name.as_str()) {
                    need.extend(t.requirements.iter().map(|r| r.block_type.clone()));
                }
            }
        }
        need.into_iter().collect()
    }

    fn pick_task<'p>(&self, ctx: &Ctx<'p>, block_type: &str) -> Option<&'p Task> {
        let p = ctx.percept;
        let taken: BTreeSet<&str> = ctx.board.assemblies.values().map(|a| a.task.as_str()).collect();
        p.tasks
            .iter()
            .filter(|t| !taken.contains(t.name.as_str()))
            .filter(|t| t.requirements[0].block_type == block_type)
            .filter(|t| t.deadline >= p.step + 30 + 25 * t.requirements.len() as u64)
            .filter(|t| {
                t.requirements.iter().all(|r| {
                    p.terrain_at(r.pos) != Some(SeenTerrainKind::Obstacle)
                        && (p.thing_at(r.pos).is_none() || Some(r.pos) == self.block)
                })
            })
            .min_by_key(|t| (t.requirements.len(), std::cmp::Reverse(t.deadline), t.name.clone()))
    }

    fn free(&mut self, ctx: &mut Ctx) -> Action {
        let p = ctx.percept;
        let me = ctx.map.offset;
        let Some(side) = self.block else {
            return self.fetch(ctx);
        };
        let block_type = self.block_type.clone().unwrap_or_default();

        let job = ctx.board.assemblies.iter().find_map(|(waiter, a)| {
            (a.helper.is_none()
                && a.next < a.requirements.len()
                && a.requirements[a.next].block_type == block_type
                && ctx.board.position_in(waiter, ctx.name).is_some())
            .then(|| (waiter.clone(), a.next))
        });
        if let Some((waiter, req)) = job {
            ctx.board
                .assemblies
                .get_mut(&waiter)
                .expect("found above")
                .helper = Some(ctx.name.to_string());
            self.role = Role::Helper {
                waiter,
                req,
                since: p.step,
            };
            return self.helper(ctx);
        }

        let on_goal = p.terrain_at(Position::ORIGIN) == Some(SeenTerrainKind::Goal);
        let avoid = self.bad_goals.get(&me).is_some_and(|until| *until > p.step);
        if on_goal && !avoid {
            if let Some(task) = self.pick_task(ctx, &block_type) {
                ctx.board.assemblies.insert(
                    ctx.name.to_string(),
                    Assembly {
                        task: task.name.clone(),
                        requirements: task.requirements.clone(),
                        next: 0,
                        helper: None,
                    },
                );
                self.role = Role::Waiter { rotate_failures: 0 };
                return self.waiter(ctx);
            }
        }

        let useful = ctx.board.assemblies.values().any(|a| {
            a.requirements.iter().skip(a.next).any(|r| r.block_type == block_type)
        }) || p
            .tasks
            .iter()
            .any(|t| t.requirements[0].block_type == block_type);
        if !useful {
            self.idle += 1;
            if self.idle > IDLE_LIMIT {
                self.idle = 0;
                if let Some(d) = Direction::from_offset(side) {
                    return Action::Detach(d);
                }
            }
            return self.explore(ctx);
        }

        let mut goals = ctx.board.known_goals(ctx.name);
        goals.extend(ctx.map.goals());
        goals.retain(|g| !self.bad_goals.get(g).is_some_and(|until| *until > p.step));
        if goals.is_empty() {
            return self.explore(ctx);
        }
        if on_goal && !avoid {
            // In a goal zone without a matching task: wait for one, but not
            // forever while others need a different type.
            self.idle += 1;
            if self.idle > IDLE_LIMIT {
                self.idle = 0;
                self.bad_goals.insert(me, p.step + 30);
                if let Some(d) = Direction::from_offset(side) {
                    return Action::Detach(d);
                }
            }
            return Action::Skip;
        }
        let planner = Planner {
            extra: goals.iter().copied().collect(),
            max_cost: 120,
            ..Planner::new(ctx.map, p, self.block)
        };
        match nav_action(planner.plan(|pos, _| goals.contains(&pos))) {
            Some(a) => a,
            None => self.explore(ctx),
        }
    }

    fn fetch(&mut self, ctx: &mut Ctx) -> Action {
        let p = ctx.percept;
        let me = ctx.map.offset;
        let wanted = self.wanted_types(ctx);
        let mut dispensers = ctx.board.known_dispensers(ctx.name);
        for (pos, ty) in ctx.map.dispensers() {
            dispensers.insert(pos, ty.to_string());
        }
        dispensers.retain(|_, ty| wanted.contains(ty));
        if dispensers.is_empty() {
            return self.explore(ctx);
        }
        for d in Direction::ALL {
            let rel = d.offset();
            if !dispensers.contains_key(&(me + rel)) {
                continue;
            }
            if !first_in_line(p, rel) {
                continue;
            }
            match p.thing_at(rel) {
                None => return Action::Request(d),
                Some(t) if t.class == ThingClass::Block && !p.is_attached(rel) => {
                    return Action::Attach(d)
                }
                Some(_) => {}
            }
        }
        let cells: BTreeSet<Position> = dispensers.keys().copied().collect();
        let planner = Planner {
            extra: cells.iter().copied().collect(),
            max_cost: 150,
            ..Planner::new(ctx.map, p, None)
        };
        let busy: BTreeSet<Position> = cells
            .iter()
            .filter(|c| {
                let rel = **c - me;
                p.thing_at(rel).is_some_and(|t| t.class == ThingClass::Entity || p.is_attached(rel))
            })
            .copied()
            .collect();
        let step = planner.plan(|pos, _| {
            pos.neighbors()
                .iter()
                .any(|n| cells.contains(n) && !busy.contains(n))
                && !cells.contains(&pos)
        });
        match nav_action(step) {
            Some(a) => a,
            None => self.explore(ctx),
        }
    }

    fn waiter(&mut self, ctx: &mut Ctx) -> Action {
        let p = ctx.percept;
        let Some(asm) = ctx.board.assemblies.get(ctx.name).cloned() else {
            self.role = Role::Free;
            return Action::Skip;
        };
        let Some(side) = self.block else {
            self.release(ctx);
            return Action::Skip;
        };
        let task = p.tasks.iter().find(|t| t.name == asm.task);
        let Some(task) = task.filter(|t| t.deadline > p.step + 1) else {
            return self.lost_task(ctx, side);
        };

        if side != SOUTH {
            let Role::Waiter { rotate_failures } = &mut self.role else {
                unreachable!("waiter role")
            };
            if matches!(p.last_action, Some(Action::Rotate(_)))
                && p.last_action_result == Some(Outcome::FailedPath)
            {
                *rotate_failures += 1;
            }
            if *rotate_failures > 3 {
                self.bad_goals.insert(ctx.map.offset, p.step + 40);
                self.release(ctx);
                return self.explore(ctx);
            }
            return Action::Rotate(turn_south(side));
        }

        // Blocks count once the waiter itself connected them; a helper's
        // block parked on the cell looks the same in the percept.
        let connected = matches!(p.last_action, Some(Action::Connect { .. }))
            && p.last_action_result == Some(Outcome::Success);
        let entry = ctx.board.assemblies.get_mut(ctx.name).expect("cloned above");
        if entry.next == 0 {
            entry.next = 1;
        }
        if connected {
            entry.next += 1;
            if let Some(h) = entry.helper.take() {
                ctx.board.ready.remove(&h);
            }
        }
        let next = entry.next.min(task.requirements.len());
        if (0..next).any(|i| !present(p, task, i)) {
            // Part of the structure is gone, most likely to a clear event.
            return self.lost_task(ctx, side);
        }
        if next == task.requirements.len() {
            return Action::Submit(task.name.clone());
        }
        let helper = ctx.board.assemblies[ctx.name].helper.clone();
        if let Some(h) = helper {
            if p.step > 0 && ctx.board.ready.get(&h) == Some(&(p.step - 1)) {
                let target = task.requirements[next].pos;
                if let Some(anchor) = task.requirements[..next]
                    .iter()
                    .find(|r| r.pos.is_adjacent(target))
                {
                    return Action::Connect {
                        partner: h,
                        block: anchor.pos,
                    };
                }
            }
        }
        Action::Skip
    }

    fn lost_task(&mut self, ctx: &mut Ctx, side: Position) -> Action {
        let p = ctx.percept;
        let only_own = p
            .attached
            .iter()
            .filter(|r| **r != Position::ORIGIN && r.manhattan(Position::ORIGIN) <= 6)
            .count()
            <= 1;
        if only_own {
            let block_type = self.block_type.clone().unwrap_or_default();
            ctx.board.disband(ctx.name);
            if let Some(task) = self.pick_task(ctx, &block_type) {
                ctx.board.assemblies.insert(
                    ctx.name.to_string(),
                    Assembly {
                        task: task.name.clone(),
                        requirements: task.requirements.clone(),
                        next: 0,
                        helper: None,
                    },
                );
                return Action::Skip;
            }
            self.role = Role::Free;
            return Action::Skip;
        }
        self.release(ctx);
        match Direction::from_offset(side) {
            Some(d) => Action::Detach(d),
            None => Action::Skip,
        }
    }

    fn helper(&mut self, ctx: &mut Ctx) -> Action {
        let p = ctx.percept;
        let Role::Helper { waiter, req, since } = self.role.clone() else {
            return Action::Skip;
        };
        let Some(side) = self.block else {
            self.release(ctx);
            return Action::Skip;
        };
        if matches!(p.last_action, Some(Action::Connect { .. }))
            && p.last_action_result == Some(Outcome::Success)
        {
            self.release(ctx);
            return match Direction::from_offset(side) {
                Some(d) => Action::Detach(d),
                None => Action::Skip,
            };
        }
        let valid = ctx.board.assemblies.get(&waiter).is_some_and(|a| {
            a.helper.as_deref() == Some(ctx.name) && a.next == req && req < a.requirements.len()
        });
        let w = ctx.board.position_in(&waiter, ctx.name);
        let (true, Some(w)) = (valid, w) else {
            self.release(ctx);
            return self.free(ctx);
        };
        if p.step > since + HELPER_PATIENCE {
            self.release(ctx);
            return self.explore(ctx);
        }
        let reqs = ctx.board.assemblies[&waiter].requirements.clone();
        let target = w + reqs[req].pos;
        let structure: BTreeSet<Position> = std::iter::once(w)
            .chain(reqs.iter().map(|r| w + r.pos))
            .collect();
        let planner = Planner {
            extra: vec![target, w],
            max_cost: 150,
            ..Planner::new(ctx.map, p, Some(side))
        };
        match planner.plan(|pos, s| s.is_some_and(|s| pos + s == target) && !structure.contains(&pos)) {
            NavStep::Arrived => {
                self.stuck = 0;
                if p.step > 0 && ctx.board.ready.get(ctx.name) == Some(&(p.step - 1)) {
                    Action::Connect {
                        partner: waiter,
                        block: side,
                    }
                } else {
                    ctx.board.ready.insert(ctx.name.to_string(), p.step);
                    Action::Skip
                }
            }
            NavStep::NoPath => {
                self.stuck += 1;
                if self.stuck > 10 {
                    self.release(ctx);
                }
                Action::Skip
            }
            step => {
                ctx.board.ready.remove(ctx.name);
                nav_action(step).unwrap_or(Action::Skip)
            }
        }
    }
}

impl Behavior for Assembler {
    fn act(&mut self, ctx: &mut Ctx) -> Action {
        let p = ctx.percept;
        self.track_block(p);
        if p.disabled {
            self.release(ctx);
            return Action::Skip;
        }
        if !matches!(self.role, Role::Helper { .. }) {
            if let Some(task) = finished_task(p) {
                return Action::Submit(task.name.clone());
            }
        }
        match self.role {
            Role::Free => self.free(ctx),
            Role::Waiter { .. } => self.waiter(ctx),
            Role::Helper { .. } => self.helper(ctx),
        }
    }
}
