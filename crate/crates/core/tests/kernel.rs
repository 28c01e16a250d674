//! Conic kernel: analytic optima, KKT residuals, dual sensitivities.

use chargeshare_core::kernel::{dual_objective, kkt_residuals, price_from_dual, solve, Tolerances};
use chargeshare_core::{ConvexProgram, LinExpr, SolveStatus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tight() -> Tolerances {
    Tolerances { abs: 1e-10, rel: 1e-10, max_iter: 200 }
}

#[test]
fn projection_onto_halfline() {
    // min (x − 1)²  s.t.  x ≥ 2  →  x = 2, f = 1, multiplier 2
    let mut p = ConvexProgram::new();
    let x = p.add_var("x");
    p.add_squared(&LinExpr::var(x).plus(-1.0), 1.0);
    p.add_ge(LinExpr::var(x).plus(-2.0));
    let s = solve(&p, tight());
    assert_eq!(s.status, SolveStatus::Optimal);
    assert!((s.primal[0] - 2.0).abs() < 1e-7);
    assert!((s.objective - 1.0).abs() < 1e-7);
    assert!((s.ineq_duals[0] - 2.0).abs() < 1e-6);
    assert!(kkt_residuals(&p, &s).max() <= 1e-7);
}

#[test]
fn least_norm_on_a_line() {
    // min x² + y²  s.t.  x + y = 1  →  (½, ½); f*(b) = b²/2 so ∂f*/∂b = 1
    let mut p = ConvexProgram::new();
    let x = p.add_var("x");
    let y = p.add_var("y");
    p.add_squared(&LinExpr::var(x), 1.0);
    p.add_squared(&LinExpr::var(y), 1.0);
    p.add_eq(LinExpr::var(x).term(y, 1.0).plus(-1.0));
    let s = solve(&p, tight());
    assert!((s.primal[0] - 0.5).abs() < 1e-8 && (s.primal[1] - 0.5).abs() < 1e-8);
    assert!((price_from_dual(s.eq_duals[0]) - 1.0).abs() < 1e-7);
    assert!(kkt_residuals(&p, &s).max() <= 1e-7);
}

#[test]
fn second_order_cone_norm() {
    // min t  s.t.  ‖(3, 4)‖ ≤ t
    let mut p = ConvexProgram::new();
    let t = p.add_var("t");
    p.add_linear_cost(t, 1.0);
    p.add_soc(LinExpr::var(t), vec![LinExpr::constant(3.0), LinExpr::constant(4.0)]);
    let s = solve(&p, tight());
    assert!((s.primal[0] - 5.0).abs() < 1e-7);
    assert!(kkt_residuals(&p, &s).max() <= 1e-7);
}

#[test]
fn rotated_cone_bounds_a_square() {
    // min l  s.t.  l·v ≥ P², v = 2, P = 3  →  l = 4.5, written as the affine
    // second-order cone ‖(2P, l − v)‖ ≤ l + v.
    let mut p = ConvexProgram::new();
    let l = p.add_var("l");
    let v = p.add_var("v");
    let pp = p.add_var("P");
    p.fix(v, 2.0);
    p.fix(pp, 3.0);
    p.add_linear_cost(l, 1.0);
    p.add_soc(LinExpr::var(l).term(v, 1.0), vec![LinExpr::new().term(pp, 2.0), LinExpr::var(l).term(v, -1.0)]);
    let s = solve(&p, tight());
    assert!((s.primal[0] - 4.5).abs() < 1e-6);
    assert!(kkt_residuals(&p, &s).max() <= 1e-7);
}

/// A strictly convex QP with equality rows and wide boxes, feasible by
/// construction around a random interior point.
fn random_qp(seed: u64) -> ConvexProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=8);
    let m = rng.gen_range(1..n);
    let mut p = ConvexProgram::new();
    let xs = p.add_vars("x", n);
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for &x in &xs {
        p.add_squared(&LinExpr::var(x), rng.gen_range(0.2..2.0));
        p.add_linear_cost(x, rng.gen_range(-2.0..2.0));
        p.bound(x, -3.0, 3.0);
    }
    for _ in 0..2 {
        let mut e = LinExpr::new();
        for &x in &xs {
            e.push(x, rng.gen_range(-1.0..1.0));
        }
        p.add_squared(&e.plus(rng.gen_range(-1.0..1.0)), 0.5);
    }
    for _ in 0..m {
        let coefs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rhs: f64 = coefs.iter().zip(&x0).map(|(a, b)| a * b).sum();
        let mut e = LinExpr::new();
        for (&x, &a) in xs.iter().zip(&coefs) {
            e.push(x, a);
        }
        p.add_eq(e.plus(-rhs));
    }
    p
}

/// Finite-difference check of every equality price on 50 random QPs.
#[test]
fn equality_duals_match_finite_differences() {
    let h = 1e-5;
    let mut checked = 0;
    for seed in 0..50 {
        let p = random_qp(seed);
        let s = solve(&p, tight());
        assert_eq!(s.status, SolveStatus::Optimal, "seed {seed}");
        for (r, &y) in s.eq_duals.iter().enumerate() {
            let value_at = |d: f64| {
                let mut q = p.clone();
                q.eq[r].rhs += d;
                let sol = solve(&q, tight());
                assert_eq!(sol.status, SolveStatus::Optimal);
                sol.objective
            };
            let fd = (value_at(h) - value_at(-h)) / (2.0 * h);
            let analytic = price_from_dual(y);
            let err = (fd - analytic).abs() / analytic.abs().max(1.0);
            assert!(err <= 1e-3, "seed {seed} row {r}: fd {fd} vs dual {analytic}");
            checked += 1;
        }
    }
    assert!(checked >= 50);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strong_duality_on_random_qps(seed in any::<u64>()) {
        let p = random_qp(seed);
        let s = solve(&p, tight());
        prop_assert_eq!(s.status, SolveStatus::Optimal);
        let gap = (s.objective - dual_objective(&p, &s)).abs() / (1.0 + s.objective.abs());
        prop_assert!(gap <= 1e-6, "duality gap {}", gap);
        prop_assert!(kkt_residuals(&p, &s).max() <= 1e-7);
    }

    #[test]
    fn reported_objective_matches_evaluation(seed in any::<u64>()) {
        let p = random_qp(seed);
        let s = solve(&p, tight());
        prop_assert!((p.objective(&s.primal) - s.objective).abs() <= 1e-9 * (1.0 + s.objective.abs()));
    }
}
