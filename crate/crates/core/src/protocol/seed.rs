//! Invasion seed selection on the control processor.

use std::collections::BTreeSet;

use super::{InvadeRequest, InvasionStrategy, ProtocolError};
use crate::array::{ArrayState, Coord, Direction};

/// Heading a linear wave starts with at its seed.
pub const SEED_HEADING: Direction = Direction::E;

/// Straight ahead, then clockwise from straight.
pub fn linear_preference(heading: Direction) -> [Direction; 4] {
    let r = heading.clockwise();
    let b = r.clockwise();
    [heading, r, b, b.clockwise()]
}

/// Row and column directions a rectangle grows in from `seed`, or `None`
/// when a `width x height` footprint cannot fit anchored at that PE.
pub fn rect_directions(
    state: &ArrayState,
    seed: Coord,
    width: u32,
    height: u32,
) -> Option<(Direction, Direction)> {
    let (w, h) = (width as usize, height as usize);
    let row_dir = if seed.col + w <= state.cols() {
        Direction::E
    } else if seed.col + 1 >= w {
        Direction::W
    } else {
        return None;
    };
    let col_dir = if seed.row + h <= state.rows() {
        Direction::S
    } else if seed.row + 1 >= h {
        Direction::N
    } else {
        return None;
    };
    Some((row_dir, col_dir))
}

/// Coordinates of the rectangle footprint, in row-major wave order.
pub fn rect_footprint(
    seed: Coord,
    width: u32,
    height: u32,
    row_dir: Direction,
    col_dir: Direction,
) -> Vec<Coord> {
    let mut out = Vec::with_capacity((width * height) as usize);
    for j in 0..height as usize {
        for i in 0..width as usize {
            let col = match row_dir {
                Direction::E => seed.col + i,
                _ => seed.col - i,
            };
            let row = match col_dir {
                Direction::S => seed.row + j,
                _ => seed.row - j,
            };
            out.push(Coord::new(row, col));
        }
    }
    out
}

/// Dry-run of the strategy from `seed`: how many PEs the wave would reach.
/// Never mutates the array.
pub fn probe(
    state: &ArrayState,
    seed: Coord,
    strategy: InvasionStrategy,
    exclude: &BTreeSet<Coord>,
) -> u32 {
    let free = |c: Coord| state.available(c) && !exclude.contains(&c);
    if !free(seed) {
        return 0;
    }
    match strategy {
        InvasionStrategy::Linear { count } => {
            let mut visited = BTreeSet::from([seed]);
            let mut cur = seed;
            let mut heading = SEED_HEADING;
            let mut n = 1;
            while n < count {
                let next = linear_preference(heading).into_iter().find_map(|d| {
                    state
                        .step_dir(cur, d)
                        .filter(|c| free(*c) && !visited.contains(c))
                        .map(|c| (d, c))
                });
                match next {
                    Some((d, c)) => {
                        visited.insert(c);
                        cur = c;
                        heading = d;
                        n += 1;
                    }
                    None => break,
                }
            }
            n
        }
        InvasionStrategy::Rectangular { width, height } => {
            match rect_directions(state, seed, width, height) {
                Some((rd, cd)) => rect_footprint(seed, width, height, rd, cd)
                    .into_iter()
                    .filter(|c| free(*c))
                    .count() as u32,
                None => 0,
            }
        }
    }
}

/// Picks the available candidate with the best probe; ties go to the lowest
/// (row, col). Seeds in `exclude` are already promised to in-flight requests.
pub fn select_seed_excluding(
    state: &ArrayState,
    request: &InvadeRequest,
    exclude: &BTreeSet<Coord>,
) -> Result<Coord, ProtocolError> {
    let mut candidates: Vec<Coord> = state.config().seed_candidates.clone();
    candidates.sort();
    candidates
        .into_iter()
        .filter(|c| state.available(*c) && !exclude.contains(c))
        .map(|c| (probe(state, c, request.strategy, exclude), c))
        // max by probe, then min coordinate
        .fold(None::<(u32, Coord)>, |best, (p, c)| match best {
            Some((bp, _)) if bp >= p => best,
            _ => Some((p, c)),
        })
        .map(|(_, c)| c)
        .ok_or(ProtocolError::NoSeedAvailable {
            app: request.app_id,
        })
}

pub fn select_seed(state: &ArrayState, request: &InvadeRequest) -> Result<Coord, ProtocolError> {
    select_seed_excluding(state, request, &BTreeSet::new())
}
