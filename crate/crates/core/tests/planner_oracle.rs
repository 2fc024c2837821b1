use std::cmp::Reverse;
use std::collections::BinaryHeap;

use mpl_core::geometry::{Vec2, Vec3};
use mpl_core::planner::{build_grid, plan, Cell, GridMap};
use mpl_core::world::{Arena, Obstacle};
use mpl_core::Error;
use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dijkstra(grid: &GridMap<f64>, start: Cell, goal: Cell) -> Option<f64> {
    let mut dist = vec![f64::INFINITY; grid.rows * grid.cols];
    let idx = |c: Cell| c.row * grid.cols + c.col;
    let mut heap = BinaryHeap::new();
    dist[idx(start)] = 0.0;
    heap.push(Reverse((OrderedFloat(0.0), start)));
    while let Some(Reverse((OrderedFloat(d), cell))) = heap.pop() {
        if cell == goal {
            return Some(d);
        }
        if d > dist[idx(cell)] {
            continue;
        }
        for (next, w) in grid.neighbors(cell) {
            let nd = d + w;
            if nd < dist[idx(next)] {
                dist[idx(next)] = nd;
                heap.push(Reverse((OrderedFloat(nd), next)));
            }
        }
    }
    None
}

fn random_free(grid: &GridMap<f64>, rng: &mut ChaCha8Rng) -> Cell {
    loop {
        let c = Cell { row: rng.gen_range(0..grid.rows), col: rng.gen_range(0..grid.cols) };
        if !grid.is_blocked(c) {
            return c;
        }
    }
}

#[test]
fn astar_matches_dijkstra_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut solved = 0;
    for _ in 0..200 {
        let occ: Vec<bool> = (0..900).map(|_| rng.gen_bool(0.2)).collect();
        let grid = GridMap::from_occupancy(1.0, 30, 30, occ);
        let (s, g) = (random_free(&grid, &mut rng), random_free(&grid, &mut rng));
        let oracle = dijkstra(&grid, s, g);
        match plan(&grid, grid.cell_center(s), grid.cell_center(g)) {
            Ok(path) => {
                solved += 1;
                let want = oracle.expect("A* found a path Dijkstra did not");
                assert!((path.cost - want).abs() < 1e-9, "{} vs {}", path.cost, want);
                assert!(path.cells.iter().all(|c| !grid.is_blocked(*c)));
                for w in &path.waypoints {
                    assert!(!grid.is_blocked(grid.cell_of(*w).unwrap()));
                }
                let steps: f64 = path.cells.windows(2).map(|w| grid.neighbors(w[0]).find(|n| n.0 == w[1]).expect("not adjacent").1).sum();
                assert!((steps - path.cost).abs() < 1e-9);
            }
            Err(Error::Unreachable) => assert!(oracle.is_none()),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(solved > 100);
}

#[test]
fn inflated_grid_matches_per_cell_distance() {
    let mut arena: Arena<f64> = Arena::empty(40.0, 40.0, 30.0);
    arena.obstacles.push(Obstacle::new(Vec3::new(17.0, 22.0, 5.0), Vec3::new(4.0, 3.0, 5.0)));
    let grid = build_grid(&arena, 2.0, 2.0);
    assert_eq!((grid.rows, grid.cols), (20, 20));
    for row in 0..20 {
        for col in 0..20 {
            let c = Cell { row, col };
            let p = grid.cell_center(c);
            let (dx, dy) = (((p.x - 17.0).abs() - 4.0).max(0.0), ((p.y - 22.0).abs() - 3.0).max(0.0));
            assert_eq!(grid.is_blocked(c), (dx * dx + dy * dy).sqrt() <= 2.0, "{c:?}");
        }
    }
    let path = plan(&grid, Vec2::new(1.0, 21.0), Vec2::new(39.0, 21.0)).unwrap();
    assert!(path.cells.iter().all(|c| !grid.is_blocked(*c)));
}
