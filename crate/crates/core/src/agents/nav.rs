//! Shortest paths for an agent that may carry one block.
//!
//! States are (cell, side of the carried block). Known obstacles cost extra
//! because they must be cleared first; cells never seen count as free.
//! Things in the current percept block their cell.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use crate::geometry::{Direction, Position, Rotation};
use crate::perception::Percept;
use crate::world::Terrain;

use super::map::LocalMap;

/// Extra cost of entering a known obstacle cell (three clear actions).
const OBSTACLE_COST: u32 = 3;
const MARGIN: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavStep {
    Move(Direction),
    Rotate(Rotation),
    /// Clear this cell, relative to the agent, before moving on.
    Clear(Position),
    Arrived,
    NoPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CellState {
    Free,
    Obstacle,
    Blocked,
}

pub struct Planner<'a> {
    pub map: &'a LocalMap,
    pub percept: &'a Percept,
    /// Side of the carried block relative to the agent.
    pub block: Option<Position>,
    /// Further cells to include in the search area.
    pub extra: Vec<Position>,
    /// Upper bound on path cost.
    pub max_cost: u32,
}

struct Grid {
    min: Position,
    w: i32,
    h: i32,
    cells: Vec<CellState>,
}

impl Grid {
    fn index(&self, p: Position) -> Option<usize> {
        let q = p - self.min;
        (q.x >= 0 && q.y >= 0 && q.x < self.w && q.y < self.h).then(|| (q.y * self.w + q.x) as usize)
    }

    fn state(&self, p: Position) -> CellState {
        self.index(p).map_or(CellState::Blocked, |i| self.cells[i])
    }
}

fn sides(block: Option<Position>) -> Vec<Option<Position>> {
    match block {
        None => vec![None],
        Some(s) => {
            let mut out = vec![Some(s)];
            let mut cur = s;
            for _ in 0..3 {
                cur = cur.rotated(Rotation::Clockwise);
                out.push(Some(cur));
            }
            out
        }
    }
}

impl<'a> Planner<'a> {
    pub fn new(map: &'a LocalMap, percept: &'a Percept, block: Option<Position>) -> Planner<'a> {
        Planner {
            map,
            percept,
            block,
            extra: Vec::new(),
            max_cost: u32::MAX,
        }
    }

    fn grid(&self) -> Grid {
        let me = self.map.offset;
        let (mut lo, mut hi) = (me, me);
        for p in self
            .map
            .cells()
            .map(|(p, _)| *p)
            .chain(self.extra.iter().copied())
        {
            lo = Position::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Position::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let min = lo - Position::new(MARGIN, MARGIN);
        let w = hi.x - lo.x + 1 + 2 * MARGIN;
        let h = hi.y - lo.y + 1 + 2 * MARGIN;
        let mut grid = Grid {
            min,
            w,
            h,
            cells: vec![CellState::Free; (w * h) as usize],
        };
        for (p, cell) in self.map.cells() {
            if cell.terrain == Terrain::Obstacle {
                let i = grid.index(*p).expect("inside bounds");
                grid.cells[i] = if self.map.is_unclearable(*p) {
                    CellState::Blocked
                } else {
                    CellState::Obstacle
                };
            }
        }
        let own: BTreeSet<Position> = std::iter::once(Position::ORIGIN)
            .chain(self.block)
            .collect();
        for t in &self.percept.things {
            let rel = Position::new(t.x, t.y);
            if own.contains(&rel) {
                continue;
            }
            if let Some(i) = grid.index(me + rel) {
                grid.cells[i] = CellState::Blocked;
            }
        }
        grid
    }

    /// First step of a cheapest path to any state satisfying `goal`, which
    /// receives the agent cell and the block side.
    pub fn plan(&self, goal: impl Fn(Position, Option<Position>) -> bool) -> NavStep {
        let me = self.map.offset;
        if goal(me, self.block) {
            return NavStep::Arrived;
        }
        let grid = self.grid();
        let side_list = sides(self.block);
        let ns = side_list.len();
        let n = grid.cells.len() * ns;
        let mut dist = vec![u32::MAX; n];
        let mut first: Vec<Option<NavStep>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        let Some(start_cell) = grid.index(me) else {
            return NavStep::NoPath;
        };
        let start = start_cell * ns;
        dist[start] = 0;
        heap.push(Reverse((0u32, start)));

        let cost_of = |cells: &[Position]| -> Option<u32> {
            let mut c = 0;
            for p in cells {
                match grid.state(*p) {
                    CellState::Blocked => return None,
                    CellState::Obstacle => c += OBSTACLE_COST,
                    CellState::Free => {}
                }
            }
            Some(c)
        };
        let first_obstacle = |cells: &[Position]| cells.iter().copied().find(|p| grid.state(*p) == CellState::Obstacle);

        while let Some(Reverse((d, s))) = heap.pop() {
            if d > dist[s] || d > self.max_cost {
                continue;
            }
            let cell = s / ns;
            let side_idx = s % ns;
            let pos = grid.min + Position::new(cell as i32 % grid.w, cell as i32 / grid.w);
            let side = side_list[side_idx];
            if s != start && goal(pos, side) {
                return first[s].unwrap_or(NavStep::NoPath);
            }
            let mut relax = |next_cell: Position, next_side: usize, step: NavStep, touched: Vec<Position>| {
                let Some(extra) = cost_of(&touched) else {
                    return;
                };
                let Some(ci) = grid.index(next_cell) else {
                    return;
                };
                let t = ci * ns + next_side;
                let nd = d + 1 + extra;
                if nd < dist[t] {
                    dist[t] = nd;
                    first[t] = Some(if s == start {
                        match first_obstacle(&touched) {
                            Some(o) => NavStep::Clear(o - me),
                            None => step,
                        }
                    } else {
                        first[s].expect("reached states have a first step")
                    });
                    heap.push(Reverse((nd, t)));
                }
            };
            for dir in Direction::ALL {
                let np = pos.step(dir);
                let mut touched = vec![np];
                if let Some(sd) = side {
                    touched.push(np + sd);
                }
                touched.retain(|p| Some(*p) != side.map(|sd| pos + sd) && *p != pos);
                relax(np, side_idx, NavStep::Move(dir), touched);
            }
            if let Some(sd) = side {
                for (rot, delta) in [(Rotation::Clockwise, 1), (Rotation::Counterclockwise, 3)] {
                    let ni = (side_idx + delta) % ns;
                    let turned = sd.rotated(rot);
                    debug_assert_eq!(Some(turned), side_list[ni]);
                    relax(pos, ni, NavStep::Rotate(rot), vec![pos + turned]);
                }
            }
        }
        NavStep::NoPath
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::map::MapCell;
    use crate::perception::{SeenThing, ThingClass};

    fn blank_percept() -> Percept {
        Percept {
            step: 0,
            score: 0,
            last_action: None,
            last_action_result: None,
            disabled: false,
            things: Vec::new(),
            terrain: Vec::new(),
            dispensers: Vec::new(),
            markers: Vec::new(),
            attached: Vec::new(),
            tasks: Vec::new(),
            deadline: 0,
        }
    }

    fn obstacle(map: &mut LocalMap, p: Position) {
        map.insert(
            p,
            MapCell {
                terrain: Terrain::Obstacle,
                thing: None,
                dispenser: None,
                step: 0,
            },
        );
    }

    #[test]
    fn walks_straight() {
        let map = LocalMap::new(5);
        let percept = blank_percept();
        let target = Position::new(3, 0);
        let mut planner = Planner::new(&map, &percept, None);
        planner.extra.push(target);
        assert_eq!(planner.plan(|p, _| p == target), NavStep::Move(Direction::East));
    }

    #[test]
    fn clears_when_walled_in() {
        let mut map = LocalMap::new(5);
        for y in -6..=6 {
            obstacle(&mut map, Position::new(1, y));
        }
        for x in -6..=1 {
            obstacle(&mut map, Position::new(x, -6));
            obstacle(&mut map, Position::new(x, 6));
        }
        for y in -6..=6 {
            obstacle(&mut map, Position::new(-6, y));
        }
        let percept = blank_percept();
        let target = Position::new(3, 0);
        let mut planner = Planner::new(&map, &percept, None);
        planner.extra.push(target);
        assert_eq!(planner.plan(|p, _| p == target), NavStep::Clear(Position::new(1, 0)));
        map.mark_unclearable(Position::new(1, 0));
        let planner = Planner {
            extra: vec![target],
            ..Planner::new(&map, &percept, None)
        };
        let step = planner.plan(|p, _| p == target);
        assert!(
            matches!(step, NavStep::Move(Direction::North | Direction::South)),
            "{step:?}"
        );
    }

    #[test]
    fn rotates_block_into_place() {
        let map = LocalMap::new(5);
        let percept = blank_percept();
        let planner = Planner::new(&map, &percept, Some(Position::new(1, 0)));
        // Want the block south without moving.
        let step = planner.plan(|p, s| p == Position::ORIGIN && s == Some(Position::new(0, 1)));
        assert_eq!(step, NavStep::Rotate(Rotation::Clockwise));
    }

    #[test]
    fn things_block_cells() {
        let map = LocalMap::new(5);
        let mut percept = blank_percept();
        percept.things.push(SeenThing {
            x: 1,
            y: 0,
            class: ThingClass::Block,
            details: "b0".into(),
        });
        let target = Position::new(2, 0);
        let mut planner = Planner::new(&map, &percept, None);
        planner.extra.push(target);
        let step = planner.plan(|p, _| p == target);
        assert!(matches!(step, NavStep::Move(Direction::North | Direction::South)));
    }
}
