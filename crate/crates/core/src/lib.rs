//! A multi-agent grid simulation for team-based agent competitions.
//!
//! Agents move on a 2D grid, pull blocks from dispensers, attach them into
//! rigid structures and submit shapes that match open tasks inside goal
//! zones. A central server owns the authoritative [`WorldState`], asks every
//! agent for one [`Action`] per step over TCP and resolves them in a seeded
//! order. The same seed and action log always reproduce the same run.
//!
//! ```
//! use std::collections::BTreeMap;
//! use massim::{engine, SimConfig, WorldState};
//!
//! let config = SimConfig::default();
//! let mut world = WorldState::create(&config, 7).unwrap();
//! let report = engine::step(&mut world, &BTreeMap::new());
//! assert_eq!(world.step, 1);
//! assert!(report.results.iter().all(|r| r.outcome.as_str() == "no_op"));
//! ```

pub mod action;
pub mod agents;
pub mod config;
pub mod engine;
pub mod geometry;
pub mod perception;
pub mod protocol;
pub mod render;
pub mod replay;
pub mod server;
pub mod tasks;
pub mod tournament;
pub mod transport;
pub mod world;

pub use action::{Action, ActionResult, Outcome};
pub use config::{ConfigError, SimConfig, VisionMetric};
pub use geometry::{Direction, Position, Rotation};
pub use perception::{compute_percept, Percept};
pub use tasks::{reward, Task};
pub use world::{ThingId, WorldError, WorldState};

// The guide's code blocks run as doc tests, one module per chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/world.md")]
    mod world {}
    #[doc = include_str!("../../../book/src/actions.md")]
    mod actions {}
    #[doc = include_str!("../../../book/src/tasks.md")]
    mod tasks {}
    #[doc = include_str!("../../../book/src/percepts.md")]
    mod percepts {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/replays.md")]
    mod replays {}
    #[doc = include_str!("../../../book/src/tournaments.md")]
    mod tournaments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
