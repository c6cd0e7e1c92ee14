//! The two simple reference behaviors.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::action::{Action, Outcome};
use crate::geometry::{Direction, Position};
use crate::perception::{Percept, SeenTerrainKind};

use super::{Behavior, Ctx};

fn cell_free(p: &Percept, rel: Position) -> bool {
    p.thing_at(rel).is_none() && p.terrain_at(rel) != Some(SeenTerrainKind::Obstacle)
}

/// Moves in a random free direction each step, or skips when boxed in.
#[derive(Debug, Default)]
pub struct RandomWalker;

impl Behavior for RandomWalker {
    fn act(&mut self, ctx: &mut Ctx) -> Action {
        let p = ctx.percept;
        if p.disabled {
            return Action::Skip;
        }
        let free: Vec<Direction> = Direction::ALL
            .into_iter()
            .filter(|d| cell_free(p, d.offset()))
            .collect();
        match free.choose(ctx.rng) {
            Some(d) => Action::Move(*d),
            None => Action::Skip,
        }
    }
}

/// Travels in straight lines and digs through obstacles in its way.
#[derive(Debug, Default)]
pub struct ExplorerDigger {
    dir: Option<Direction>,
    left: u32,
}

impl ExplorerDigger {
    fn turn(&mut self, ctx: &mut Ctx, avoid: Option<Direction>) -> Direction {
        let options: Vec<Direction> = Direction::ALL
            .into_iter()
            .filter(|d| Some(*d) != avoid)
            .collect();
        let d = *options.choose(ctx.rng).expect("three directions remain");
        self.dir = Some(d);
        self.left = ctx.rng.gen_range(8..=16);
        d
    }
}

impl Behavior for ExplorerDigger {
    fn act(&mut self, ctx: &mut Ctx) -> Action {
        let p = ctx.percept;
        if p.disabled {
            return Action::Skip;
        }
        let mut dir = match self.dir {
            Some(d) if self.left > 0 => d,
            _ => self.turn(ctx, None),
        };
        let ahead = dir.offset();
        // The wall cannot be dug; a failed clear means we hit it.
        let wall = matches!(
            (&p.last_action, p.last_action_result),
            (Some(Action::Clear(t)), Some(Outcome::FailedTarget)) if *t == ahead
        );
        if wall || p.thing_at(ahead).is_some() {
            dir = self.turn(ctx, Some(dir));
        }
        let ahead = dir.offset();
        if p.terrain_at(ahead) == Some(SeenTerrainKind::Obstacle) {
            return Action::Clear(ahead);
        }
        if p.thing_at(ahead).is_some() {
            return Action::Skip;
        }
        self.left = self.left.saturating_sub(1);
        Action::Move(dir)
    }
}
