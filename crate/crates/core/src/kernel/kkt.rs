use serde::{Deserialize, Serialize};

use super::program::ConvexProgram;
use super::solve::ConicSolution;

/// Scaled KKT residuals: primal feasibility, dual feasibility/stationarity and
/// complementarity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

fn inf_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Stationarity vector `Px + q + Aᵀy + Gᵀz − Σ Jᵀw`.
pub fn stationarity(p: &ConvexProgram, s: &ConicSolution) -> Vec<f64> {
    let mut r = p.quad_times(&s.primal);
    for (ri, qi) in r.iter_mut().zip(&p.linear) {
        *ri += qi;
    }
    for (row, &y) in p.eq.iter().zip(&s.eq_duals) {
        for &(v, c) in &row.coeffs {
            r[v] += c * y;
        }
    }
    for (row, &z) in p.ineq.iter().zip(&s.ineq_duals) {
        for &(v, c) in &row.coeffs {
            r[v] += c * z;
        }
    }
    let mut k = 0;
    for cone in &p.cones {
        for expr in &cone.rows {
            let w = s.cone_duals[k];
            for &(v, c) in &expr.terms {
                r[v] -= c * w;
            }
            k += 1;
        }
    }
    r
}

/// Lagrange dual function value at the reported multipliers (exact when the
/// stationarity vector vanishes).
pub fn dual_objective(p: &ConvexProgram, s: &ConicSolution) -> f64 {
    let px = p.quad_times(&s.primal);
    let xpx: f64 = px.iter().zip(&s.primal).map(|(a, b)| a * b).sum();
    let mut d = -0.5 * xpx + p.constant;
    d -= p.eq.iter().zip(&s.eq_duals).map(|(r, y)| r.rhs * y).sum::<f64>();
    d -= p.ineq.iter().zip(&s.ineq_duals).map(|(r, z)| r.rhs * z).sum::<f64>();
    let mut k = 0;
    for cone in &p.cones {
        for expr in &cone.rows {
            d -= expr.constant * s.cone_duals[k];
            k += 1;
        }
    }
    d
}

/// Recomputes residuals from the program data alone, independent of what the
/// solver reported about itself.
pub fn kkt_residuals(p: &ConvexProgram, s: &ConicSolution) -> Residuals {
    let x = &s.primal;
    if p.num_vars() == 0 && p.eq.is_empty() && p.ineq.is_empty() && p.cones.is_empty() {
        return Residuals::default();
    }

    let rhs_scale = 1.0
        + inf_norm(p.eq.iter().map(|r| r.rhs))
            .max(inf_norm(p.ineq.iter().map(|r| r.rhs)))
            .max(inf_norm(p.cones.iter().flat_map(|c| c.rows.iter().map(|r| r.constant))));

    let mut pviol: f64 = 0.0;
    for r in &p.eq {
        pviol = pviol.max((r.lhs(x) - r.rhs).abs());
    }
    for r in &p.ineq {
        pviol = pviol.max(r.lhs(x) - r.rhs);
    }
    for c in &p.cones {
        pviol = pviol.max(-c.margin(x));
    }
    let primal = pviol.max(0.0) / rhs_scale;

    let stat = stationarity(p, s);
    let px = p.quad_times(x);
    let dual_scale = 1.0 + inf_norm(p.linear.iter().copied()).max(inf_norm(px.iter().copied()));
    let mut dviol = inf_norm(stat.iter().copied());
    for &z in &s.ineq_duals {
        dviol = dviol.max(-z);
    }
    let mut k = 0;
    for cone in &p.cones {
        let w = &s.cone_duals[k..k + cone.dim()];
        let tail = w[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        dviol = dviol.max(tail - w[0]);
        k += cone.dim();
    }
    let dual = dviol.max(0.0) / dual_scale;

    let mut comp = 0.0;
    for (r, &z) in p.ineq.iter().zip(&s.ineq_duals) {
        comp += z * (r.rhs - r.lhs(x));
    }
    let mut k = 0;
    for cone in &p.cones {
        for expr in &cone.rows {
            comp += s.cone_duals[k] * expr.eval(x);
            k += 1;
        }
    }
    let obj = p.objective(x);
    let gap = comp.abs() / (1.0 + obj.abs());

    Residuals { primal, dual, gap }
}
