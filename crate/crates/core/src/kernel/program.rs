use std::fmt::Write as _;

/// Sparse affine expression `Σ coef·x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(v: usize) -> Self {
        Self { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn term(mut self, v: usize, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn push(&mut self, v: usize, coef: f64) {
        self.terms.push((v, coef));
    }

    pub fn extend(&mut self, other: &LinExpr, scale: f64) {
        self.terms.extend(other.terms.iter().map(|&(v, c)| (v, c * scale)));
        self.constant += other.constant * scale;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + self.constant
    }
}

/// Linear row `coeffs·x (= | ≤) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinRow {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * x[v]).sum()
    }
}

/// Second-order cone block over affine rows: `rows[0] ≥ ‖rows[1..]‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub rows: Vec<LinExpr>,
}

impl ConeBlock {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// `t − ‖u‖` at `x`; nonnegative iff the point lies in the cone.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let t = self.rows[0].eval(x);
        let norm = self.rows[1..].iter().map(|r| r.eval(x).powi(2)).sum::<f64>().sqrt();
        t - norm
    }
}

/// Canonical convex program
///
/// ```text
/// minimize   ½ xᵀPx + qᵀx + c₀
/// subject to eq rows        aᵢx = bᵢ
///            ineq rows      gⱼx ≤ hⱼ
///            cone blocks    t_k(x) ≥ ‖u_k(x)‖
/// ```
///
/// `P` is kept as upper-triangular triplets (`row ≤ col`); repeated entries are summed.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub eq: Vec<LinRow>,
    pub ineq: Vec<LinRow>,
    pub cones: Vec<ConeBlock>,
    pub names: Vec<String>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.linear.push(0.0);
        self.linear.len() - 1
    }

    pub fn add_vars(&mut self, prefix: &str, count: usize) -> Vec<usize> {
        (0..count).map(|k| self.add_var(format!("{prefix}[{k}]"))).collect()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Adds `expr = 0`; returns the row index.
    pub fn add_eq(&mut self, expr: LinExpr) -> usize {
        self.eq.push(LinRow { coeffs: expr.terms, rhs: -expr.constant });
        self.eq.len() - 1
    }

    /// Adds `expr ≤ 0`; returns the row index.
    pub fn add_le(&mut self, expr: LinExpr) -> usize {
        self.ineq.push(LinRow { coeffs: expr.terms, rhs: -expr.constant });
        self.ineq.len() - 1
    }

    /// Adds `expr ≥ 0`.
    pub fn add_ge(&mut self, expr: LinExpr) -> usize {
        let neg = LinExpr {
            terms: expr.terms.iter().map(|&(v, c)| (v, -c)).collect(),
            constant: -expr.constant,
        };
        self.add_le(neg)
    }

    pub fn fix(&mut self, v: usize, value: f64) -> usize {
        self.add_eq(LinExpr::var(v).plus(-value))
    }

    /// Box bounds on a single variable; infinite sides are skipped.
    pub fn bound(&mut self, v: usize, lo: f64, hi: f64) {
        if lo.is_finite() {
            self.add_ge(LinExpr::var(v).plus(-lo));
        }
        if hi.is_finite() {
            self.add_le(LinExpr::var(v).plus(-hi));
        }
    }

    pub fn add_soc(&mut self, t: LinExpr, u: Vec<LinExpr>) -> usize {
        let mut rows = Vec::with_capacity(u.len() + 1);
        rows.push(t);
        rows.extend(u);
        self.cones.push(ConeBlock { rows });
        self.cones.len() - 1
    }

    pub fn add_linear_cost(&mut self, v: usize, c: f64) {
        self.linear[v] += c;
    }

    pub fn add_linear_expr_cost(&mut self, expr: &LinExpr, scale: f64) {
        for &(v, c) in &expr.terms {
            self.linear[v] += c * scale;
        }
        self.constant += expr.constant * scale;
    }

    /// Adds `weight · (expr)²` to the objective.
    pub fn add_squared(&mut self, expr: &LinExpr, weight: f64) {
        if weight == 0.0 {
            return;
        }
        let terms = &expr.terms;
        for (a, &(i, ci)) in terms.iter().enumerate() {
            self.quadratic.push((i, i, 2.0 * weight * ci * ci));
            for &(j, cj) in &terms[a + 1..] {
                if i == j {
                    self.quadratic.push((i, i, 4.0 * weight * ci * cj));
                } else {
                    self.quadratic.push((i.min(j), i.max(j), 2.0 * weight * ci * cj));
                }
            }
            self.linear[i] += 2.0 * weight * expr.constant * ci;
        }
        self.constant += weight * expr.constant * expr.constant;
    }

    /// `½ xᵀPx + qᵀx + c₀`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        for &(i, j, v) in &self.quadratic {
            if i == j {
                quad += 0.5 * v * x[i] * x[i];
            } else {
                quad += v * x[i] * x[j];
            }
        }
        quad + self.linear.iter().zip(x).map(|(q, xi)| q * xi).sum::<f64>() + self.constant
    }

    /// `P·x` using the symmetric completion of the stored upper triangle.
    pub fn quad_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_vars()];
        for &(i, j, v) in &self.quadratic {
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
        out
    }

    /// Plain-text listing of every matrix in row-major triplet form.
    pub fn dump_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vars {}", self.num_vars());
        for (k, name) in self.names.iter().enumerate() {
            let _ = writeln!(s, "var {k} {name} q={}", self.linear[k]);
        }
        let _ = writeln!(s, "# constant {}", self.constant);
        let mut quad = self.quadratic.clone();
        quad.sort_by_key(|&(i, j, _)| (i, j));
        for (i, j, v) in quad {
            let _ = writeln!(s, "P {i} {j} {v}");
        }
        for (r, row) in self.eq.iter().enumerate() {
            for &(v, c) in &row.coeffs {
                let _ = writeln!(s, "A {r} {v} {c}");
            }
            let _ = writeln!(s, "b {r} {}", row.rhs);
        }
        for (r, row) in self.ineq.iter().enumerate() {
            for &(v, c) in &row.coeffs {
                let _ = writeln!(s, "G {r} {v} {c}");
            }
            let _ = writeln!(s, "h {r} {}", row.rhs);
        }
        for (k, cone) in self.cones.iter().enumerate() {
            for (r, row) in cone.rows.iter().enumerate() {
                for &(v, c) in &row.terms {
                    let _ = writeln!(s, "K {k} {r} {v} {c}");
                }
                let _ = writeln!(s, "k {k} {r} {}", row.constant);
            }
        }
        s
    }
}
