//! Shared memory of one team.
//!
//! Agents start without knowing where their teammates are. When agent X sees
//! a teammate at relative position `r` and exactly one teammate Y reports a
//! teammate at `-r` in the same step, X and Y must be looking at each other.
//! That pins Y's spawn frame relative to X's, and the two frame groups are
//! joined. Positions of anchored teammates can then be translated between
//! their frames.

use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::Position;
use crate::tasks::Requirement;

/// A waiter in a goal zone and the shape it is building.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    pub task: String,
    pub requirements: Vec<Requirement>,
    /// Index of the first requirement not yet in place.
    pub next: usize,
    /// Helper currently delivering `requirements[next]`.
    pub helper: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Blackboard {
    pub step: u64,
    sightings: BTreeMap<String, Vec<Position>>,
    offsets: BTreeMap<String, Position>,
    /// Agent to (root agent, translation into the root's frame).
    frames: BTreeMap<String, (String, Position)>,
    /// Goal cells and dispensers each agent has seen, in its own frame.
    goals: BTreeMap<String, BTreeSet<Position>>,
    dispensers: BTreeMap<String, BTreeMap<Position, String>>,
    pub assemblies: BTreeMap<String, Assembly>,
    /// Helper name to the percept step at which it reported being in place.
    pub ready: BTreeMap<String, u64>,
}

impl Blackboard {
    pub fn new() -> Blackboard {
        Blackboard::default()
    }

    pub fn begin_step(&mut self, step: u64) {
        self.step = step;
        self.sightings.clear();
    }

    /// Records an agent's believed offset and the teammates it sees.
    pub fn post(&mut self, name: &str, offset: Position, teammates: Vec<Position>) {
        self.frames
            .entry(name.to_string())
            .or_insert_with(|| (name.to_string(), Position::ORIGIN));
        self.offsets.insert(name.to_string(), offset);
        self.sightings.insert(name.to_string(), teammates);
    }

    pub fn add_goal(&mut self, name: &str, p: Position) {
        self.goals.entry(name.to_string()).or_default().insert(p);
    }

    pub fn add_dispenser(&mut self, name: &str, p: Position, block_type: &str) {
        self.dispensers
            .entry(name.to_string())
            .or_default()
            .insert(p, block_type.to_string());
    }

    /// Joins frames of agents that unambiguously saw each other this step.
    pub fn resolve_sightings(&mut self) {
        let mut reporters: BTreeMap<Position, Vec<&String>> = BTreeMap::new();
        for (name, seen) in &self.sightings {
            for r in seen {
                reporters.entry(*r).or_default().push(name);
            }
        }
        let mut links = Vec::new();
        for (r, xs) in &reporters {
            let Some(ys) = reporters.get(&-*r) else {
                continue;
            };
            if xs.len() == 1 && ys.len() == 1 && xs[0] < ys[0] {
                links.push((xs[0].clone(), ys[0].clone(), *r));
            }
        }
        for (x, y, r) in links {
            let offset_y_in_x = self.offsets[&x] + r - self.offsets[&y];
            self.join(&x, &y, offset_y_in_x);
        }
    }

    /// `d` maps positions in `y`'s frame to `x`'s frame.
    fn join(&mut self, x: &str, y: &str, d: Position) {
        let (rx, tx) = self.frames[x].clone();
        let (ry, ty) = self.frames[y].clone();
        if rx == ry {
            return;
        }
        // Keep the lexicographically smaller root for determinism.
        let (keep, drop, shift) = if rx < ry {
            (rx, ry, tx + d - ty)
        } else {
            (ry, rx, ty - d - tx)
        };
        for (root, t) in self.frames.values_mut() {
            if *root == drop {
                *root = keep.clone();
                *t = *t + shift;
            }
        }
    }

    /// Translation from `from`'s frame to `to`'s frame, if they are anchored.
    pub fn translation(&self, from: &str, to: &str) -> Option<Position> {
        let (rf, tf) = self.frames.get(from)?;
        let (rt, tt) = self.frames.get(to)?;
        (rf == rt).then(|| *tf - *tt)
    }

    /// Where `of` currently stands, in `viewer`'s frame.
    pub fn position_in(&self, of: &str, viewer: &str) -> Option<Position> {
        Some(*self.offsets.get(of)? + self.translation(of, viewer)?)
    }

    pub fn same_group(&self, a: &str, b: &str) -> bool {
        self.translation(a, b).is_some()
    }

    /// Goal cells known to `viewer`'s frame group, in `viewer`'s frame.
    pub fn known_goals(&self, viewer: &str) -> BTreeSet<Position> {
        let mut out = BTreeSet::new();
        for (name, cells) in &self.goals {
            if let Some(t) = self.translation(name, viewer) {
                out.extend(cells.iter().map(|p| *p + t));
            }
        }
        out
    }

    /// Dispensers known to `viewer`'s frame group, in `viewer`'s frame.
    pub fn known_dispensers(&self, viewer: &str) -> BTreeMap<Position, String> {
        let mut out = BTreeMap::new();
        for (name, cells) in &self.dispensers {
            if let Some(t) = self.translation(name, viewer) {
                out.extend(cells.iter().map(|(p, ty)| (*p + t, ty.clone())));
            }
        }
        out
    }

    /// Drops everything tied to `waiter`'s assembly.
    pub fn disband(&mut self, waiter: &str) {
        if let Some(a) = self.assemblies.remove(waiter) {
            if let Some(h) = a.helper {
                self.ready.remove(&h);
            }
        }
    }
}
