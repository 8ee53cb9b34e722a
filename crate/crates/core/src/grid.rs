//! Grid cells and the five-action move set.

use serde::{Deserialize, Serialize};

/// A cell of the grid, addressed by column `x` and row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }

    /// Continuous coordinates of the cell center. Cell (0, 0) spans
    /// [0, 1) x [0, 1), so its center is (0.5, 0.5).
    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + 0.5, self.y as f64 + 0.5)
    }
}

pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const ACTIONS: [Action; NUM_ACTIONS] =
    [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Stay => 4,
        }
    }

    pub fn from_index(i: usize) -> Action {
        ACTIONS[i]
    }

    /// Displacement in (dx, dy); `Up` increases y.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_index_round_trip() {
        for (i, a) in ACTIONS.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), *a);
        }
    }

    #[test]
    fn center_offset() {
        assert_eq!(Cell::new(2, 3).center(), (2.5, 3.5));
    }
}
