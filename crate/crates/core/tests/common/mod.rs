#![allow(dead_code)]

use vp1d::{make_initial_data, BackgroundProfile, InitialData, PerturbationShape, PhaseGrid};

pub fn grid(nx: usize, nv: usize, t_end: f64, nt: usize) -> PhaseGrid {
    PhaseGrid::new(20.0, nx, 4.0, nv, t_end, nt).unwrap()
}

/// `Nx = 401, Nv = 129, T_end = 0.5, Nt = 51` on `[-20, 20] x [-4, 4]`.
pub fn benchmark_grid() -> PhaseGrid {
    grid(401, 129, 0.5, 51)
}

pub fn data(g: &PhaseGrid, amplitude: f64) -> InitialData {
    let bg = BackgroundProfile::new(1.0, 1.0).unwrap();
    make_initial_data(bg, amplitude, 2.0, PerturbationShape::QuarticBump, g).unwrap()
}

/// Largest `|a - b|` over the nodes of `fine` that coincide with nodes of
/// `coarse` (every other node in each direction).
pub fn coarse_node_difference(coarse: &vp1d::SolutionHistory, fine: &vp1d::SolutionHistory) -> f64 {
    let (c, f) = (coarse.grid, fine.grid);
    assert_eq!(2 * (c.x_count - 1), f.x_count - 1);
    assert_eq!(2 * (c.v_count - 1), f.v_count - 1);
    assert_eq!(2 * (c.time_count - 1), f.time_count - 1);
    let mut worst = 0.0f64;
    for m in 0..c.time_count {
        let (a, b) = (coarse.level(m), fine.level(2 * m));
        for j in 0..c.x_count {
            for i in 0..c.v_count {
                let d = a[j * c.v_count + i] - b[(2 * j) * f.v_count + 2 * i];
                worst = worst.max(d.abs());
            }
        }
    }
    worst
}
