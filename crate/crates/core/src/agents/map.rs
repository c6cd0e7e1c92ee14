//! What one agent has seen so far, in coordinates relative to its spawn cell.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::action::{Action, Outcome};
use crate::geometry::Position;
use crate::perception::{Percept, SeenTerrainKind, ThingClass};
use crate::world::Terrain;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeenThingKind {
    /// A team name.
    Entity(String),
    /// A block type.
    Block(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapCell {
    pub terrain: Terrain,
    pub thing: Option<SeenThingKind>,
    pub dispenser: Option<String>,
    /// Percept step at which the cell was last seen.
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("conflicting terrain at {pos} seen at step {step}")]
    Conflict { pos: Position, step: u64 },
}

/// Cells keyed by position relative to the agent's spawn cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LocalMap {
    cells: BTreeMap<Position, MapCell>,
    /// Where the agent believes it stands, relative to its spawn cell.
    pub offset: Position,
    /// Obstacles a clear action could not remove (the outer wall).
    unclearable: BTreeSet<Position>,
    vision: u32,
    last_step: Option<u64>,
}

impl LocalMap {
    pub fn new(vision: u32) -> LocalMap {
        LocalMap {
            vision,
            ..LocalMap::default()
        }
    }

    pub fn vision(&self) -> u32 {
        self.vision
    }

    pub fn cell(&self, p: Position) -> Option<&MapCell> {
        self.cells.get(&p)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Position, &MapCell)> {
        self.cells.iter()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn is_unclearable(&self, p: Position) -> bool {
        self.unclearable.contains(&p)
    }

    pub fn mark_unclearable(&mut self, p: Position) {
        self.unclearable.insert(p);
    }

    pub fn insert(&mut self, p: Position, cell: MapCell) {
        self.cells.insert(p, cell);
    }

    pub fn goals(&self) -> impl Iterator<Item = Position> + '_ {
        self.cells
            .iter()
            .filter(|(_, c)| c.terrain == Terrain::Goal)
            .map(|(p, _)| *p)
    }

    pub fn dispensers(&self) -> impl Iterator<Item = (Position, &str)> + '_ {
        self.cells
            .iter()
            .filter_map(|(p, c)| c.dispenser.as_deref().map(|d| (*p, d)))
    }

    /// Marks `p` unclearable along with the straight run of known obstacles
    /// it belongs to. Only the grid border refuses to be cleared, and the
    /// border is a full line.
    fn mark_wall(&mut self, p: Position) {
        self.unclearable.insert(p);
        let obstacle = |m: &LocalMap, q: Position| {
            m.cells.get(&q).is_some_and(|c| c.terrain == Terrain::Obstacle)
        };
        for axis in [Position::new(1, 0), Position::new(0, 1)] {
            if !obstacle(self, p + axis) && !obstacle(self, p - axis) {
                continue;
            }
            for dir in [axis, Position::ORIGIN - axis] {
                let mut q = p + dir;
                while obstacle(self, q) {
                    self.unclearable.insert(q);
                    q = q + dir;
                }
            }
        }
    }

    /// Folds a percept into the map.
    ///
    /// The believed offset follows successful moves reported in the percept.
    /// Every cell within vision range is recorded, including those the
    /// percept shows as empty. Calling this twice with the same percept is a
    /// no-op.
    pub fn observe(&mut self, percept: &Percept) {
        if self.last_step == Some(percept.step) {
            return;
        }
        self.last_step = Some(percept.step);
        match (&percept.last_action, percept.last_action_result) {
            (Some(Action::Move(dir)), Some(Outcome::Success)) => {
                self.offset = self.offset.step(*dir);
            }
            (Some(Action::Clear(rel)), Some(Outcome::FailedTarget)) => {
                self.mark_wall(self.offset + *rel);
            }
            _ => {}
        }
        let r = self.vision as i32;
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() + dy.abs() > r {
                    continue;
                }
                let rel = Position::new(dx, dy);
                let terrain = match percept.terrain_at(rel) {
                    Some(SeenTerrainKind::Obstacle) => Terrain::Obstacle,
                    Some(SeenTerrainKind::Goal) => Terrain::Goal,
                    None => Terrain::Empty,
                };
                let thing = percept.thing_at(rel).map(|t| match t.class {
                    ThingClass::Entity => SeenThingKind::Entity(t.details.clone()),
                    ThingClass::Block => SeenThingKind::Block(t.details.clone()),
                });
                self.cells.insert(
                    self.offset + rel,
                    MapCell {
                        terrain,
                        thing,
                        dispenser: percept.dispenser_at(rel).map(str::to_string),
                        step: percept.step,
                    },
                );
            }
        }
    }
}

/// Merges `b` into `a`, where `offset` is the position of `b`'s spawn cell
/// in `a`'s frame.
///
/// Per cell the more recent observation wins; on equal steps `a` is kept.
/// Two observations of the same cell at the same step that disagree on the
/// terrain are a conflict. The result keeps `a`'s believed offset.
pub fn merge_maps(a: &LocalMap, b: &LocalMap, offset: Position) -> Result<LocalMap, MergeError> {
    let mut out = a.clone();
    for (p, cell) in &b.cells {
        let q = *p + offset;
        match out.cells.get(&q) {
            Some(mine) if mine.step == cell.step && mine.terrain != cell.terrain => {
                return Err(MergeError::Conflict {
                    pos: q,
                    step: cell.step,
                })
            }
            Some(mine) if mine.step >= cell.step => {}
            _ => {
                out.cells.insert(q, cell.clone());
            }
        }
    }
    for p in &b.unclearable {
        out.unclearable.insert(*p + offset);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(terrain: Terrain, step: u64) -> MapCell {
        MapCell {
            terrain,
            thing: None,
            dispenser: None,
            step,
        }
    }

    #[test]
    fn disjoint_union_and_idempotence() {
        let mut a = LocalMap::new(5);
        let mut b = LocalMap::new(5);
        a.insert(Position::new(0, 0), cell(Terrain::Empty, 1));
        b.insert(Position::new(0, 0), cell(Terrain::Goal, 1));
        let m = merge_maps(&a, &b, Position::new(3, 0)).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.cell(Position::new(3, 0)).unwrap().terrain, Terrain::Goal);
        assert_eq!(merge_maps(&m, &m, Position::ORIGIN).unwrap(), m);
    }

    #[test]
    fn newer_wins_and_conflicts_fail() {
        let mut a = LocalMap::new(5);
        let mut b = LocalMap::new(5);
        let mut old = cell(Terrain::Empty, 10);
        old.thing = Some(SeenThingKind::Block("b0".into()));
        a.insert(Position::new(1, 1), old);
        b.insert(Position::new(0, 0), cell(Terrain::Empty, 20));
        let m = merge_maps(&a, &b, Position::new(1, 1)).unwrap();
        assert_eq!(m.cell(Position::new(1, 1)).unwrap().thing, None);
        assert_eq!(m.cell(Position::new(1, 1)).unwrap().step, 20);

        let mut c = LocalMap::new(5);
        c.insert(Position::new(0, 0), cell(Terrain::Obstacle, 10));
        assert_eq!(
            merge_maps(&a, &c, Position::new(1, 1)),
            Err(MergeError::Conflict {
                pos: Position::new(1, 1),
                step: 10
            })
        );
    }
}
