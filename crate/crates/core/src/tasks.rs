//! Task generation, rewards and submission checks.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Outcome;
use crate::config::SimConfig;
use crate::geometry::{Direction, Position};
use crate::world::{ThingId, ThingKind, WorldState};

/// Points per squared block count.
pub const REWARD_FACTOR: u64 = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("a task needs at least two blocks, got {0}")]
    TooFewBlocks(u32),
}

/// One required cell of a task's block formation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Requirement {
    pub pos: Position,
    #[serde(rename = "type")]
    pub block_type: String,
}

/// A block formation to deliver, relative to the submitting agent.
///
/// Requirements are kept in generation order: the first one is `(0,1)` and
/// every later one is adjacent to an earlier one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub requirements: Vec<Requirement>,
    pub reward: u64,
    pub deadline: u64,
    pub spawned: u64,
}

impl Task {
    pub fn block_count(&self) -> usize {
        self.requirements.len()
    }

    /// A task is valid up to and including its deadline step.
    pub fn is_open_at(&self, step: u64) -> bool {
        step <= self.deadline
    }
}

/// Reward for a formation of `blocks` blocks: `10 * blocks^2`.
pub fn reward(blocks: u32) -> Result<u64, TaskError> {
    reward_with(REWARD_FACTOR, blocks)
}

pub fn reward_with(factor: u64, blocks: u32) -> Result<u64, TaskError> {
    if blocks < 2 {
        return Err(TaskError::TooFewBlocks(blocks));
    }
    Ok(factor * u64::from(blocks) * u64::from(blocks))
}

/// Draws a new task with a random-walk shape rooted south of the agent.
pub fn generate_task<R: Rng + ?Sized>(
    rng: &mut R,
    config: &SimConfig,
    current_step: u64,
    name: String,
) -> Task {
    let size = rng.gen_range(2..=config.max_blocks.max(2)) as usize;
    let mut cells = vec![Position::new(0, 1)];
    let mut seen: BTreeSet<Position> = cells.iter().copied().collect();
    let mut cursor = cells[0];
    while cells.len() < size {
        let dir = Direction::ALL[rng.gen_range(0..4)];
        let next = cursor.step(dir);
        if next == Position::ORIGIN {
            continue;
        }
        cursor = next;
        if seen.insert(next) {
            cells.push(next);
        }
    }
    let types = config.block_type_names();
    let requirements = cells
        .into_iter()
        .map(|pos| Requirement {
            pos,
            block_type: types[rng.gen_range(0..types.len())].clone(),
        })
        .collect();
    let duration = rng.gen_range(config.task_duration_min..=config.task_duration_max);
    Task {
        name,
        requirements,
        reward: reward_with(config.reward_factor, size as u32)
            .expect("generated tasks have at least two blocks"),
        deadline: current_step + duration,
        spawned: current_step,
    }
}

/// Checks whether `agent` can submit `task_name` right now.
///
/// On success returns the ids of the blocks the submission consumes. Every
/// failure maps to `failed_target`.
pub fn check_submission(
    world: &WorldState,
    agent: ThingId,
    task_name: &str,
) -> Result<Vec<ThingId>, Outcome> {
    let task = world.tasks.get(task_name).ok_or(Outcome::FailedTarget)?;
    if !task.is_open_at(world.executing_step()) {
        return Err(Outcome::FailedTarget);
    }
    let origin = world.thing(agent).map_err(|_| Outcome::FailedTarget)?.position;
    if !world.terrain.get(origin).is_goal() {
        return Err(Outcome::FailedTarget);
    }
    let component = world.component_of(agent).map_err(|_| Outcome::FailedTarget)?;
    let mut consumed = Vec::with_capacity(task.requirements.len());
    for req in &task.requirements {
        let id = world
            .thing_at(origin + req.pos)
            .ok_or(Outcome::FailedTarget)?;
        let matches = match &world.thing(id).map_err(|_| Outcome::FailedTarget)?.kind {
            ThingKind::Block { block_type } => *block_type == req.block_type,
            ThingKind::Agent(_) => false,
        };
        if !matches || !component.contains(&id) {
            return Err(Outcome::FailedTarget);
        }
        consumed.push(id);
    }
    Ok(consumed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_calibration_points() {
        assert_eq!(reward(2), Ok(40));
        assert_eq!(reward(3), Ok(90));
        assert_eq!(reward(5), Ok(250));
        assert_eq!(reward(1), Err(TaskError::TooFewBlocks(1)));
        assert_eq!(reward(0), Err(TaskError::TooFewBlocks(0)));
    }

    fn connected(cells: &[Position]) -> bool {
        let set: BTreeSet<Position> = cells.iter().copied().collect();
        let mut seen = BTreeSet::new();
        let mut stack = vec![cells[0]];
        while let Some(p) = stack.pop() {
            if seen.insert(p) {
                stack.extend(p.neighbors().into_iter().filter(|n| set.contains(n)));
            }
        }
        seen.len() == set.len()
    }

    #[test]
    fn generated_shapes_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = SimConfig::default();
        for i in 0..500 {
            let task = generate_task(&mut rng, &config, 7, format!("task{i}"));
            let cells: Vec<Position> = task.requirements.iter().map(|r| r.pos).collect();
            assert!((2..=3).contains(&cells.len()));
            assert_eq!(cells[0], Position::new(0, 1));
            assert!(!cells.contains(&Position::ORIGIN));
            assert!(connected(&cells));
            for (k, c) in cells.iter().enumerate().skip(1) {
                assert!(cells[..k].iter().any(|p| p.is_adjacent(*c)));
            }
            assert_eq!(task.reward, 10 * (cells.len() as u64).pow(2));
            assert!((107..=207).contains(&task.deadline));
            assert_eq!(task.spawned, 7);
        }
    }
}
