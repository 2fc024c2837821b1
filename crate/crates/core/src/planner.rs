//! Obstacle-inflated occupancy grid and 8-connected A*.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scalar::{c, Scalar};
use crate::world::Arena;

/// Robot body radius added to the preferred safety distance when inflating.
pub const ROBOT_RADIUS: f64 = 0.5;
pub const DEFAULT_CELL_SIZE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap<T> {
    pub cell_size: T,
    pub rows: usize,
    pub cols: usize,
    /// Row-major; `true` means blocked.
    pub occupancy: Vec<bool>,
}

impl<T: Scalar> GridMap<T> {
    /// Grid with an explicit occupancy pattern, mainly for tests.
    pub fn from_occupancy(cell_size: T, rows: usize, cols: usize, occupancy: Vec<bool>) -> Self {
        assert_eq!(occupancy.len(), rows * cols);
        Self { cell_size, rows, cols, occupancy }
    }

    pub fn is_blocked(&self, cell: Cell) -> bool {
        self.occupancy[cell.row * self.cols + cell.col]
    }

    pub fn cell_center(&self, cell: Cell) -> Vec2<T> {
        let half: T = c(0.5);
        Vec2::new(
            (c::<T>(cell.col as f64) + half) * self.cell_size,
            (c::<T>(cell.row as f64) + half) * self.cell_size,
        )
    }

    pub fn cell_of(&self, p: Vec2<T>) -> Option<Cell> {
        if !(p.x >= T::zero() && p.y >= T::zero()) {
            return None;
        }
        let col = (p.x / self.cell_size).floor().to_usize()?;
        let row = (p.y / self.cell_size).floor().to_usize()?;
        // Points on the far boundary belong to the last cell.
        let col = if col == self.cols && p.x == c::<T>(self.cols as f64) * self.cell_size { col - 1 } else { col };
        let row = if row == self.rows && p.y == c::<T>(self.rows as f64) * self.cell_size { row - 1 } else { row };
        (row < self.rows && col < self.cols).then_some(Cell { row, col })
    }

    pub fn blocked_count(&self) -> usize {
        self.occupancy.iter().filter(|b| **b).count()
    }

    /// 8-connected moves from `cell` with their step length in cells.
    /// Diagonal moves must not clip a blocked orthogonal neighbor.
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = (Cell, T)> + '_ {
        const MOVES: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        MOVES.iter().filter_map(move |&(dr, dc)| {
            let r = cell.row.checked_add_signed(dr)?;
            let k = cell.col.checked_add_signed(dc)?;
            if r >= self.rows || k >= self.cols {
                return None;
            }
            let next = Cell { row: r, col: k };
            if self.is_blocked(next) {
                return None;
            }
            if dr != 0 && dc != 0 {
                if self.is_blocked(Cell { row: r, col: cell.col }) || self.is_blocked(Cell { row: cell.row, col: k }) {
                    return None;
                }
                Some((next, T::SQRT_2()))
            } else {
                Some((next, T::one()))
            }
        })
    }
}

/// Block every cell whose center lies within `inflation` of an obstacle footprint.
pub fn build_grid<T: Scalar>(arena: &Arena<T>, inflation: T, cell_size: T) -> GridMap<T> {
    let cols = (arena.width / cell_size).ceil().to_usize().unwrap_or(0).max(1);
    let rows = (arena.depth / cell_size).ceil().to_usize().unwrap_or(0).max(1);
    let mut grid = GridMap { cell_size, rows, cols, occupancy: vec![false; rows * cols] };
    for row in 0..rows {
        for col in 0..cols {
            let p = grid.cell_center(Cell { row, col });
            grid.occupancy[row * cols + col] = arena.obstacles.iter().any(|o| o.footprint_distance(p) <= inflation);
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    pub waypoints: Vec<Vec2<T>>,
    pub cells: Vec<Cell>,
    /// Meters.
    pub cost: T,
}

impl<T: Scalar> Path<T> {
    /// Sum of consecutive waypoint distances.
    pub fn length(&self) -> T {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

fn octile<T: Scalar>(a: Cell, b: Cell) -> T {
    let dr = a.row.abs_diff(b.row);
    let dc = a.col.abs_diff(b.col);
    let (hi, lo) = (dr.max(dc), dr.min(dc));
    c::<T>(hi as f64) + (T::SQRT_2() - T::one()) * c::<T>(lo as f64)
}

#[derive(Debug, Clone, Copy)]
struct Open<T> {
    f: T,
    h: T,
    g: T,
    cell: Cell,
}

impl<T: Scalar> Open<T> {
    fn key(&self, o: &Self) -> Ordering {
        self.f
            .partial_cmp(&o.f)
            .unwrap_or(Ordering::Equal)
            .then(self.h.partial_cmp(&o.h).unwrap_or(Ordering::Equal))
            .then(self.cell.cmp(&o.cell))
    }
}

impl<T: Scalar> PartialEq for Open<T> {
    fn eq(&self, o: &Self) -> bool {
        self.key(o) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Open<T> {}

impl<T: Scalar> PartialOrd for Open<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl<T: Scalar> Ord for Open<T> {
    // Reversed: BinaryHeap is a max-heap and we pop the smallest (f, h, row, col).
    fn cmp(&self, o: &Self) -> Ordering {
        o.key(self)
    }
}

/// Minimal-cost 8-connected path between the cells containing `start` and `goal`.
pub fn plan<T: Scalar>(grid: &GridMap<T>, start: Vec2<T>, goal: Vec2<T>) -> Result<Path<T>> {
    let endpoint = |p: Vec2<T>, what: &str| -> Result<Cell> {
        let cell = grid
            .cell_of(p)
            .ok_or_else(|| Error::InvalidEndpoint(format!("{what} ({}, {}) is outside the grid", p.x, p.y)))?;
        if grid.is_blocked(cell) {
            return Err(Error::InvalidEndpoint(format!("{what} ({}, {}) is in a blocked cell", p.x, p.y)));
        }
        Ok(cell)
    };
    let s = endpoint(start, "start")?;
    let t = endpoint(goal, "goal")?;

    let n = grid.rows * grid.cols;
    let idx = |cell: Cell| cell.row * grid.cols + cell.col;
    let mut best_g = vec![T::infinity(); n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();

    best_g[idx(s)] = T::zero();
    let h0 = octile(s, t);
    open.push(Open { f: h0, h: h0, g: T::zero(), cell: s });

    while let Some(cur) = open.pop() {
        let ci = idx(cur.cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cur.cell == t {
            let mut cells = vec![t];
            let mut at = t;
            while let Some(p) = parent[idx(at)] {
                cells.push(p);
                at = p;
            }
            cells.reverse();
            let waypoints = cells.iter().map(|&k| grid.cell_center(k)).collect();
            return Ok(Path { waypoints, cells, cost: cur.g * grid.cell_size });
        }
        for (next, step) in grid.neighbors(cur.cell) {
            let ni = idx(next);
            if closed[ni] {
                continue;
            }
            let g = cur.g + step;
            if g < best_g[ni] {
                best_g[ni] = g;
                parent[ni] = Some(cur.cell);
                let h = octile(next, t);
                open.push(Open { f: g + h, h, g, cell: next });
            }
        }
    }
    Err(Error::Unreachable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::world::Obstacle;

    #[test]
    fn empty_arena_is_free() {
        let g = build_grid(&Arena::empty(40.0, 30.0, 10.0), 2.0, 2.0);
        assert_eq!((g.rows, g.cols), (15, 20));
        assert_eq!(g.blocked_count(), 0);
    }

    #[test]
    fn dimensions_round_up() {
        let g = build_grid(&Arena::empty(41.0, 30.5, 10.0), 0.0, 2.0);
        assert_eq!((g.rows, g.cols), (16, 21));
    }

    #[test]
    fn containment_blocks_without_inflation() {
        let mut a = Arena::empty(20.0, 20.0, 10.0);
        a.obstacles.push(Obstacle::new(Vec3::new(5.0, 5.0, 5.0), Vec3::new(1.5, 1.5, 5.0)));
        let g = build_grid(&a, 0.0, 2.0);
        // Cell (2, 2) is centered at (5, 5).
        assert!(g.is_blocked(Cell { row: 2, col: 2 }));
        assert!(!g.is_blocked(Cell { row: 0, col: 0 }));
    }

    #[test]
    fn start_equals_goal() {
        let g = build_grid(&Arena::empty(20.0, 20.0, 10.0), 0.0, 2.0);
        let p = plan(&g, Vec2::new(5.0, 5.0), Vec2::new(5.5, 5.5)).unwrap();
        assert_eq!(p.waypoints.len(), 1);
        assert_eq!(p.cost, 0.0);
    }

    #[test]
    fn pure_diagonal_cost() {
        let g = build_grid(&Arena::empty(20.0, 20.0, 10.0), 0.0, 2.0);
        let p = plan(&g, Vec2::new(1.0, 1.0), Vec2::new(19.0, 19.0)).unwrap();
        assert!((p.cost - 9.0 * 2.0_f64.sqrt() * 2.0).abs() < 1e-12);
        assert_eq!(p.waypoints.len(), 10);
        assert!((p.length() - p.cost).abs() < 1e-9);
    }

    #[test]
    fn endpoint_errors() {
        let occ = vec![true, false, false, false];
        let g = GridMap::from_occupancy(1.0_f64, 2, 2, occ);
        assert!(matches!(plan(&g, Vec2::new(0.5, 0.5), Vec2::new(1.5, 1.5)), Err(Error::InvalidEndpoint(_))));
        assert!(matches!(plan(&g, Vec2::new(1.5, 1.5), Vec2::new(5.0, 5.0)), Err(Error::InvalidEndpoint(_))));
    }

    #[test]
    fn walled_off_goal_is_unreachable() {
        // Middle column fully blocked.
        let mut occ = vec![false; 9];
        for r in 0..3 {
            occ[r * 3 + 1] = true;
        }
        let g = GridMap::from_occupancy(1.0_f64, 3, 3, occ);
        assert!(matches!(plan(&g, Vec2::new(0.5, 0.5), Vec2::new(2.5, 2.5)), Err(Error::Unreachable)));
    }

    #[test]
    fn no_corner_cutting() {
        // Blocked (0,1) forbids the diagonal (0,0) -> (1,1).
        let occ = vec![false, true, false, false];
        let g = GridMap::from_occupancy(1.0_f64, 2, 2, occ);
        let p = plan(&g, Vec2::new(0.5, 0.5), Vec2::new(1.5, 1.5)).unwrap();
        assert_eq!(p.cost, 2.0);
    }
}
