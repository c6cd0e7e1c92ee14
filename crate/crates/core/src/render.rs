//! ASCII frames of a world state.
//!
//! One glyph per cell. Agents show the first letter of their team, blocks the
//! digits of their type (`b2` becomes `2`), then dispensers `D`, obstacles
//! `#`, goal cells `G` and empty cells `.`.

use crate::world::{ThingKind, WorldState};

pub fn glyph_at(world: &WorldState, p: crate::geometry::Position) -> char {
    if let Some(id) = world.thing_at(p) {
        return match &world.things[&id].kind {
            ThingKind::Agent(a) => a.team.chars().next().unwrap_or('?'),
            ThingKind::Block { block_type } => block_glyph(block_type),
        };
    }
    if world.dispenser_at(p).is_some() {
        return 'D';
    }
    world.terrain.get(p).glyph()
}

fn block_glyph(block_type: &str) -> char {
    block_type
        .chars()
        .rev()
        .find(|c| c.is_ascii_digit())
        .unwrap_or('b')
}

/// The whole grid, one line per row, each line ending in `\n`.
pub fn render(world: &WorldState) -> String {
    let (w, h) = (world.width(), world.height());
    let mut out = String::with_capacity(((w + 1) * h) as usize);
    for y in 0..h {
        for x in 0..w {
            out.push(glyph_at(world, crate::geometry::Position::new(x, y)));
        }
        out.push('\n');
    }
    out
}

/// A frame with a one-line caption: step and team scores.
pub fn render_frame(world: &WorldState) -> String {
    let scores: Vec<String> = world
        .config
        .teams
        .iter()
        .map(|t| format!("{t}={}", world.scores.get(t).copied().unwrap_or(0)))
        .collect();
    format!("step {} {}\n{}", world.step, scores.join(" "), render(world))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::geometry::Position;
    use crate::world::{AgentState, Dispenser, Terrain};

    #[test]
    fn glyphs() {
        let config = SimConfig {
            width: 6,
            height: 4,
            ..SimConfig::default()
        };
        let mut world = WorldState::empty(&config, 0);
        world.terrain.set(Position::new(4, 2), Terrain::Goal);
        world.dispensers.push(Dispenser {
            position: Position::new(3, 1),
            block_type: "b1".into(),
        });
        world.spawn(
            Position::new(1, 1),
            ThingKind::Agent(AgentState {
                name: "agentB1".into(),
                team: "B".into(),
                disabled_until: 0,
                charge: None,
                last_action: None,
                last_outcome: None,
            }),
        );
        world.spawn_block(Position::new(2, 2), "b2");
        assert_eq!(render(&world), "######\n#B.D.#\n#.2.G#\n######\n");
    }
}
