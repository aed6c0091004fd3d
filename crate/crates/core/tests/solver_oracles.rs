//! Relaxed solver checked against a brute-force search over rank-one
//! precoders, which needs no conic solver.

use std::f64::consts::PI;

use mcbf::conic::Tolerances;
use mcbf::fair::solve_qr;
use mcbf::linalg::{CVec, C64};
use mcbf::model::{gen_rayleigh, GroupPartition, ProblemInstance};

/// Minimum max-load over unit directions `(cos α, sin α e^{jφ})` for two
/// single-user groups. For fixed directions the smallest powers meet both
/// SINR targets with equality.
fn load_at(inst: &ProblemInstance, params: [f64; 4]) -> f64 {
    let dirs: Vec<CVec> = [(params[0], params[1]), (params[2], params[3])]
        .iter()
        .map(|&(a, phi)| CVec::from_vec(vec![C64::new(a.cos(), 0.0), C64::from_polar(a.sin(), phi)]))
        .collect();
    let gain = |i: usize, k: usize| dirs[k].dotc(&inst.channels().user(i)).norm_sqr();
    let (g, s) = (inst.targets(), inst.noise());
    // [a11, -γ1 a12; -γ2 a21, a22] p = [γ1 σ1², γ2 σ2²]
    let (m11, m12, m21, m22) = (gain(0, 0), -g[0] * gain(0, 1), -g[1] * gain(1, 0), gain(1, 1));
    let det = m11 * m22 - m12 * m21;
    if det <= 0.0 {
        return f64::INFINITY;
    }
    let (b1, b2) = (g[0] * s[0], g[1] * s[1]);
    let p1 = (m22 * b1 - m12 * b2) / det;
    let p2 = (m11 * b2 - m21 * b1) / det;
    if p1 < 0.0 || p2 < 0.0 {
        return f64::INFINITY;
    }
    (0..2)
        .map(|n| (p1 * dirs[0][n].norm_sqr() + p2 * dirs[1][n].norm_sqr()) / inst.pac()[n])
        .fold(0.0, f64::max)
}

fn grid_search(inst: &ProblemInstance) -> f64 {
    let n = 36;
    let alpha = |j: usize| j as f64 * (PI / 2.0) / (n - 1) as f64;
    let phase = |j: usize| j as f64 * 2.0 * PI / n as f64;
    let mut best = (f64::INFINITY, [0.0; 4]);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let p = [alpha(a), phase(b), alpha(c), phase(d)];
                    let v = load_at(inst, p);
                    if v < best.0 {
                        best = (v, p);
                    }
                }
            }
        }
    }
    // pattern search down to a resolution far finer than 1e-3 per dimension
    let mut step = [PI / 2.0 / n as f64, 2.0 * PI / n as f64, PI / 2.0 / n as f64, 2.0 * PI / n as f64];
    while step[0] > 1e-7 {
        let mut improved = false;
        for i in 0..4 {
            for sgn in [-1.0, 1.0] {
                let mut p = best.1;
                p[i] += sgn * step[i];
                let v = load_at(inst, p);
                if v < best.0 {
                    best = (v, p);
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    best.0
}

#[test]
fn relaxed_power_matches_rank_one_grid_search() {
    for seed in 0..4 {
        let ch = gen_rayleigh(2, 2, 100 + seed);
        let inst =
            ProblemInstance::new(ch, GroupPartition::unicast(2), vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let sol = solve_qr(&inst, inst.targets(), &Tolerances::default()).unwrap().expect("feasible");
        let oracle = grid_search(&inst);
        let rel = oracle / sol.r_star - 1.0;
        assert!(rel > -1e-6, "grid beat the relaxation: {oracle} < {}", sol.r_star);
        assert!(rel < 2e-2, "grid {oracle} vs relaxed {}", sol.r_star);
    }
}
