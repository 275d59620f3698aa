mod common;

use common::{data, grid};
use vp1d::exec::Execution;
use vp1d::norms::weighted_sup_norm_at;
use vp1d::picard::{apply_map, extend, solve_outcome, Origin};
use vp1d::{solve, Error, SolutionHistory, SolveOptions};

fn small() -> vp1d::PhaseGrid {
    grid(101, 65, 0.5, 11)
}

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn rho_sup(sol: &SolutionHistory) -> f64 {
    let xs = sol.grid.x_nodes();
    sol.densities
        .iter()
        .map(|d| weighted_sup_norm_at(&d.values, &xs, sol.exponent).unwrap())
        .fold(0.0, f64::max)
}

fn rho_distance(a: &SolutionHistory, b: &SolutionHistory) -> f64 {
    let xs = a.grid.x_nodes();
    a.densities
        .iter()
        .zip(&b.densities)
        .map(|(p, q)| {
            let d: Vec<f64> = p.values.iter().zip(&q.values).map(|(u, w)| u - w).collect();
            weighted_sup_norm_at(&d, &xs, a.exponent).unwrap()
        })
        .fold(0.0, f64::max)
}

#[test]
fn trivial_perturbation_converges_in_one_step() {
    let g = small();
    let d = data(&g, 0.0);
    let (sol, trace) = solve(&d, &g, &opts()).unwrap();
    assert_eq!(trace.iterations, 1);
    assert_eq!(trace.distances, vec![0.0]);
    assert!(trace.converged);
    for m in 0..g.time_count {
        assert!(sol.g_level(m).iter().all(|&x| x == 0.0));
        assert!(sol.field.snapshots[m].values.iter().all(|&e| e == 0.0));
    }
}

// One step of the map from f0 held frozen, against a fine explicit midpoint
// integration of the characteristic through the same field.
#[test]
fn first_iterate_matches_fine_midpoint_trajectories() {
    let g = small();
    let d = data(&g, 0.05);
    let frozen = SolutionHistory::frozen(&d, &g, opts().tail_mode, Execution::Sequential).unwrap();
    let next = apply_map(&frozen, &d, &opts()).unwrap();
    let field = &frozen.field;
    let steps = 4000usize;
    let mut worst = 0.0f64;
    for &(m, j, i) in &[(10usize, 50usize, 32usize), (10, 40, 28), (5, 55, 36), (10, 70, 20), (3, 30, 40)] {
        let t = g.t(m);
        let h = t / steps as f64;
        let (mut x, mut v) = (g.x(j), g.v(i));
        let mut s = t;
        for _ in 0..steps {
            let xm = x - 0.5 * h * v;
            let vm = v + 0.5 * h * field.interp(s, x).unwrap();
            let sm = s - 0.5 * h;
            x -= h * vm;
            v += h * field.interp(sm, xm).unwrap();
            s -= h;
        }
        let expect = d.f0(x, v);
        let got = next.level(m)[j * g.v_count + i];
        worst = worst.max((got - expect).abs());
    }
    assert!(worst < 1e-7, "worst deviation {worst:e}");
}

#[test]
fn converged_history_is_a_fixed_point() {
    let g = small();
    let d = data(&g, 0.05);
    let (sol, trace) = solve(&d, &g, &opts()).unwrap();
    let again = apply_map(&sol, &d, &opts()).unwrap();
    let gap = rho_distance(&again, &sol);
    assert!(gap < 2.0 * trace.tolerance * trace.distances[0].max(1.0), "gap {gap:e}");
    assert_eq!(sol.origin, Origin::Converged);
}

#[test]
fn distances_decrease_and_norms_stay_controlled() {
    let g = small();
    let d = data(&g, 0.05);
    let mut norms = Vec::new();
    let out = solve_outcome(&d, &g, &opts(), &mut |_, it| norms.push(rho_sup(it))).unwrap();
    assert!(out.trace.converged);
    assert!(out.trace.distances.windows(2).all(|w| w[1] < w[0]));
    assert!(norms.iter().all(|&n| n <= 2.0 * norms[0]), "{norms:?}");
}

#[test]
fn iterates_respect_the_range_of_f0() {
    let g = small();
    let d = data(&g, 0.05);
    let f0 = d.f0_snapshot(&g);
    let lo = f0.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (sol, _) = solve(&d, &g, &opts()).unwrap();
    assert!(sol.f.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
}

#[test]
fn f_vanishes_beyond_the_velocity_bound() {
    let g = small();
    let d = data(&g, 0.05);
    let (sol, trace) = solve(&d, &g, &opts()).unwrap();
    let bound = d.velocity_cutoff() + trace.c1_final() + g.dv();
    for m in 0..g.time_count {
        let level = sol.level(m);
        for j in 0..g.x_count {
            for i in 0..g.v_count {
                if g.v(i).abs() > bound {
                    assert_eq!(level[j * g.v_count + i], 0.0);
                }
            }
        }
    }
    let stats = sol.stats.as_ref().unwrap();
    assert!(stats.culled > 0 && stats.traced > 0);
}

#[test]
fn sequential_and_parallel_are_bitwise_identical() {
    let g = small();
    let d = data(&g, 0.05);
    let seq = SolveOptions {
        execution: Execution::Sequential,
        ..opts()
    };
    let (a, ta) = solve(&d, &g, &seq).unwrap();
    let (b, tb) = solve(&d, &g, &opts()).unwrap();
    assert_eq!(ta, tb);
    assert!(a.f.iter().zip(&b.f).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn truncated_solve_reproduces_the_matching_iterate() {
    let g = small();
    let d = data(&g, 0.05);
    let mut second = None;
    solve_outcome(&d, &g, &opts(), &mut |k, it| {
        if k == 1 {
            second = Some(it.f.clone());
        }
    })
    .unwrap();
    let short = SolveOptions { max_iters: 2, ..opts() };
    let out = solve_outcome(&d, &g, &short, &mut |_, _| {}).unwrap();
    assert!(!out.trace.converged);
    assert_eq!(out.solution.f, second.unwrap());
}

#[test]
fn long_horizon_large_perturbation_does_not_converge() {
    let g = grid(41, 17, 50.0, 21);
    let d = data(&g, 0.9);
    match solve(&d, &g, &opts()) {
        Err(Error::NonConvergence { trace }) => {
            assert_eq!(trace.iterations, opts().max_iters);
            assert!(!trace.converged);
        }
        other => panic!("expected non-convergence, got {:?}", other.map(|r| r.1)),
    }
}

#[test]
fn invalid_options_are_rejected() {
    let g = small();
    let d = data(&g, 0.05);
    for bad in [
        SolveOptions { tol: 0.0, ..opts() },
        SolveOptions { max_iters: 0, ..opts() },
        SolveOptions { substeps: 0, ..opts() },
    ] {
        assert!(matches!(solve(&d, &g, &bad), Err(Error::InvalidParameter(_))));
    }
}

#[test]
fn extending_the_trivial_solution_stays_trivial() {
    let g = small();
    let d = data(&g, 0.0);
    let (sol, _) = solve(&d, &g, &opts()).unwrap();
    let (ext, trace) = extend(&sol, &d, 0.25, &opts(), 1.0).unwrap();
    assert_eq!(ext.grid.time_count, 16);
    assert!((ext.grid.time_horizon - 0.75).abs() < 1e-12);
    assert!(ext.f.iter().zip(d.f0_snapshot(&ext.grid).iter().cycle()).all(|(a, b)| a == b));
    let cont = trace.continuation.unwrap();
    assert!(cont.cap_respected);
    assert_eq!(cont.sup_norm_extension, 0.0);
}

#[test]
fn extension_keeps_the_solved_window_and_continues_it() {
    let g = small();
    let d = data(&g, 0.05);
    let (sol, _) = solve(&d, &g, &opts()).unwrap();
    let (ext, trace) = extend(&sol, &d, 0.1, &opts(), f64::INFINITY).unwrap();
    assert!(trace.converged);
    let per = g.phase_len();
    assert_eq!(&ext.f[..per * g.time_count], &sol.f[..]);
    assert_eq!(ext.grid.time_count, g.time_count + 2);
}

#[test]
fn extension_is_refused_above_the_norm_cap() {
    let g = small();
    let d = data(&g, 0.05);
    let (sol, _) = solve(&d, &g, &opts()).unwrap();
    assert!(matches!(
        extend(&sol, &d, 0.25, &opts(), 0.0),
        Err(Error::ContinuationRefused { .. })
    ));
    assert!(matches!(
        extend(&sol, &d, 0.123, &opts(), f64::INFINITY),
        Err(Error::InvalidParameter(_))
    ));
}
