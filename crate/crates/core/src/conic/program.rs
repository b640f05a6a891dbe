use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use super::linalg::{svec_index, svec_len};
use crate::error::{Error, Result};

/// Affine function of the program variables: `sum coef * x[idx] + constant`.
///
/// Terms may repeat an index; duplicates are summed on assembly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(idx: usize) -> Self {
        LinExpr { terms: vec![(idx, 1.0)], constant: 0.0 }
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((idx, coef));
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(i, c)| (i, c * scale)));
        self.constant += scale * other.constant;
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= scale;
        }
        self.constant *= scale;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    /// `1 + |constant| + sum |coef * x|`, the natural magnitude for residuals.
    pub fn magnitude(&self, x: &[f64]) -> f64 {
        1.0 + self.constant.abs() + self.terms.iter().map(|&(i, c)| (c * x[i]).abs()).sum::<f64>()
    }

    /// Sorts terms by index and merges duplicates.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        LinExpr { terms: out, constant: self.constant }
    }

    pub fn sum<'a>(items: impl IntoIterator<Item = &'a LinExpr>) -> LinExpr {
        let mut out = LinExpr::zero();
        for e in items {
            out.add_scaled(e, 1.0);
        }
        out
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scaled(-1.0)
    }
}

impl Mul<LinExpr> for f64 {
    type Output = LinExpr;
    fn mul(self, rhs: LinExpr) -> LinExpr {
        rhs.scaled(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Scalar,
    Vector(usize),
    Symmetric(usize),
}

impl BlockKind {
    pub fn len(self) -> usize {
        match self {
            BlockKind::Scalar => 1,
            BlockKind::Vector(n) => n,
            BlockKind::Symmetric(n) => svec_len(n),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalarVar(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VecVar {
    pub offset: usize,
    pub len: usize,
}

/// Symmetric matrix block, stored packed (see [`super::linalg`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymVar {
    pub offset: usize,
    pub n: usize,
}

impl ScalarVar {
    pub fn expr(self) -> LinExpr {
        LinExpr::var(self.0)
    }
}

impl VecVar {
    pub fn at(&self, i: usize) -> LinExpr {
        assert!(i < self.len, "vector index {i} out of range {}", self.len);
        LinExpr::var(self.offset + i)
    }

    pub fn exprs(&self) -> Vec<LinExpr> {
        (0..self.len).map(|i| self.at(i)).collect()
    }

    /// `sum_i c_i x_i`.
    pub fn dot(&self, c: &[f64]) -> LinExpr {
        assert_eq!(c.len(), self.len);
        let mut e = LinExpr::zero();
        for (i, &ci) in c.iter().enumerate() {
            e.add_term(self.offset + i, ci);
        }
        e
    }

    /// Rows of `M x` for a dense matrix `M`.
    pub fn mat_mul(&self, m: &DMatrix<f64>) -> Vec<LinExpr> {
        assert_eq!(m.ncols(), self.len);
        (0..m.nrows())
            .map(|r| {
                let mut e = LinExpr::zero();
                for c in 0..self.len {
                    e.add_term(self.offset + c, m[(r, c)]);
                }
                e
            })
            .collect()
    }
}

impl SymVar {
    /// The matrix entry `X_ij` (not the packed coordinate).
    pub fn entry(&self, i: usize, j: usize) -> LinExpr {
        assert!(i < self.n && j < self.n);
        let coef = if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
        LinExpr { terms: vec![(self.offset + svec_index(i, j), coef)], constant: 0.0 }
    }

    /// `Tr(C X)` for symmetric `C`.
    pub fn trace_with(&self, c: &DMatrix<f64>) -> LinExpr {
        assert_eq!(c.nrows(), self.n);
        let mut e = LinExpr::zero();
        for j in 0..self.n {
            for i in 0..=j {
                let coef = if i == j {
                    c[(i, i)]
                } else {
                    std::f64::consts::FRAC_1_SQRT_2 * (c[(i, j)] + c[(j, i)])
                };
                e.add_term(self.offset + svec_index(i, j), coef);
            }
        }
        e
    }

    pub fn trace(&self) -> LinExpr {
        let mut e = LinExpr::zero();
        for i in 0..self.n {
            e.add_term(self.offset + svec_index(i, i), 1.0);
        }
        e
    }

    /// Entries of `F^T X F` as an `k x k` matrix of expressions (`F` is `n x k`).
    pub fn congruence(&self, f: &DMatrix<f64>) -> SymExpr {
        assert_eq!(f.nrows(), self.n);
        let k = f.ncols();
        let mut out = SymExpr::zeros(k);
        for b in 0..k {
            for a in 0..=b {
                let e = out.get_mut(a, b);
                for j in 0..self.n {
                    for i in 0..=j {
                        let coef = if i == j {
                            f[(i, a)] * f[(i, b)]
                        } else {
                            std::f64::consts::FRAC_1_SQRT_2 * (f[(i, a)] * f[(j, b)] + f[(j, a)] * f[(i, b)])
                        };
                        e.add_term(self.offset + svec_index(i, j), coef);
                    }
                }
            }
        }
        out
    }
}

/// Symmetric matrix whose entries are affine expressions (upper triangle stored).
#[derive(Clone, Debug)]
pub struct SymExpr {
    n: usize,
    packed: Vec<LinExpr>,
}

impl SymExpr {
    pub fn zeros(n: usize) -> Self {
        SymExpr { n, packed: vec![LinExpr::zero(); svec_len(n)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &LinExpr {
        &self.packed[svec_index(i, j)]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut LinExpr {
        &mut self.packed[svec_index(i, j)]
    }

    /// Adds `scale * C` for a constant symmetric matrix, placed at `(r0, c0)`.
    ///
    /// Only the part landing in the upper triangle is used, so a block placed
    /// on the diagonal must itself be symmetric.
    pub fn add_const_block(&mut self, r0: usize, c0: usize, c: &DMatrix<f64>, scale: f64) {
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                let (r, col) = (r0 + i, c0 + j);
                if r <= col && c[(i, j)] != 0.0 {
                    self.packed[svec_index(r, col)].constant += scale * c[(i, j)];
                }
            }
        }
    }

    /// Adds `expr * C` for a symmetric `C` placed on the diagonal at `r0`.
    pub fn add_var_block(&mut self, r0: usize, c: &DMatrix<f64>, expr: &LinExpr) {
        for j in 0..c.ncols() {
            for i in 0..=j {
                let v = c[(i, j)];
                if v != 0.0 {
                    self.packed[svec_index(r0 + i, r0 + j)].add_scaled(expr, v);
                }
            }
        }
    }

    /// Adds another expression matrix placed on the diagonal at `r0`.
    pub fn add_sym_block(&mut self, r0: usize, other: &SymExpr) {
        for j in 0..other.n {
            for i in 0..=j {
                let src = other.get(i, j);
                self.packed[svec_index(r0 + i, r0 + j)].add_scaled(src, 1.0);
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in 0..=j {
                let v = self.get(i, j).eval(x);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Packed (sqrt(2)-scaled) entry expressions, in cone order.
    fn into_packed_rows(self) -> Vec<LinExpr> {
        let mut out = self.packed;
        for j in 0..self.n {
            for i in 0..j {
                let k = svec_index(i, j);
                let e = std::mem::take(&mut out[k]);
                out[k] = e.scaled(std::f64::consts::SQRT_2);
            }
        }
        out
    }
}

/// Cone memberships supported by the program IR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cone {
    /// All rows equal zero.
    Zero(usize),
    /// All rows nonnegative.
    NonNeg(usize),
    /// `(t, x)` with `||x||_2 <= t`.
    Soc(usize),
    /// `(u, v, x)` with `2uv >= ||x||^2`, `u, v >= 0`.
    RotatedSoc(usize),
    /// Packed `n x n` symmetric matrix is PSD.
    Psd(usize),
    /// `(x, y, z)` with `x^a y^(1-a) >= |z|`, `x, y >= 0`.
    Power(f64),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::NonNeg(n) | Cone::Soc(n) | Cone::RotatedSoc(n) => n,
            Cone::Psd(n) => svec_len(n),
            Cone::Power(_) => 3,
        }
    }

    fn tag(&self) -> String {
        match *self {
            Cone::Zero(n) => format!("zero {n}"),
            Cone::NonNeg(n) => format!("nonneg {n}"),
            Cone::Soc(n) => format!("soc {n}"),
            Cone::RotatedSoc(n) => format!("rsoc {n}"),
            Cone::Psd(n) => format!("psd {n}"),
            Cone::Power(a) => format!("pow {a:e}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub cone: Cone,
    pub rows: Vec<LinExpr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A linear objective over a product of cones.
#[derive(Clone, Debug)]
pub struct ConicProgram {
    blocks: Vec<Block>,
    nvars: usize,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    sense: Sense,
}

impl Default for ConicProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl ConicProgram {
    pub fn new() -> Self {
        ConicProgram {
            blocks: Vec::new(),
            nvars: 0,
            constraints: Vec::new(),
            objective: LinExpr::zero(),
            sense: Sense::Minimize,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> (&LinExpr, Sense) {
        (&self.objective, self.sense)
    }

    fn push_block(&mut self, name: &str, kind: BlockKind) -> usize {
        let offset = self.nvars;
        self.blocks.push(Block { name: name.to_string(), kind, offset });
        self.nvars += kind.len();
        offset
    }

    pub fn scalar(&mut self, name: &str) -> ScalarVar {
        ScalarVar(self.push_block(name, BlockKind::Scalar))
    }

    pub fn vector(&mut self, name: &str, len: usize) -> VecVar {
        VecVar { offset: self.push_block(name, BlockKind::Vector(len)), len }
    }

    /// A symmetric matrix variable. It is not constrained to be PSD unless
    /// [`ConicProgram::psd_var`] or an explicit cone says so.
    pub fn symmetric(&mut self, name: &str, n: usize) -> SymVar {
        SymVar { offset: self.push_block(name, BlockKind::Symmetric(n)), n }
    }

    /// A symmetric matrix variable constrained to the PSD cone.
    pub fn psd_var(&mut self, name: &str, n: usize) -> SymVar {
        let x = self.symmetric(name, n);
        if n > 0 {
            let rows = (0..svec_len(n)).map(|k| LinExpr::var(x.offset + k)).collect();
            self.constraints.push(Constraint { name: format!("{name} psd"), cone: Cone::Psd(n), rows });
        }
        x
    }

    /// A nonnegative vector variable.
    pub fn nonneg_vector(&mut self, name: &str, len: usize) -> VecVar {
        let v = self.vector(name, len);
        if len > 0 {
            self.constraints.push(Constraint {
                name: format!("{name} >= 0"),
                cone: Cone::NonNeg(len),
                rows: v.exprs(),
            });
        }
        v
    }

    fn check(&self, rows: &[LinExpr]) -> Result<()> {
        for r in rows {
            for &(i, c) in &r.terms {
                if i >= self.nvars {
                    return Err(Error::dims("constraint variable index", self.nvars, i));
                }
                if !c.is_finite() {
                    return Err(Error::invalid("non-finite coefficient in constraint"));
                }
            }
            if !r.constant.is_finite() {
                return Err(Error::invalid("non-finite constant in constraint"));
            }
        }
        Ok(())
    }

    /// Adds `rows in cone` after validating indices and dimensions.
    pub fn add(&mut self, name: &str, cone: Cone, rows: Vec<LinExpr>) -> Result<()> {
        if rows.len() != cone.dim() {
            return Err(Error::dims(format!("constraint '{name}'"), cone.dim(), rows.len()));
        }
        if let Cone::Power(a) = cone {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::invalid(format!("power cone exponent {a} outside (0, 1)")));
            }
        }
        self.check(&rows)?;
        if !rows.is_empty() {
            let rows = rows.into_iter().map(LinExpr::compact).collect();
            self.constraints.push(Constraint { name: name.to_string(), cone, rows });
        }
        Ok(())
    }

    pub fn eq(&mut self, name: &str, lhs: LinExpr, rhs: LinExpr) -> Result<()> {
        self.add(name, Cone::Zero(1), vec![lhs - rhs])
    }

    /// `lhs <= rhs`.
    pub fn le(&mut self, name: &str, lhs: LinExpr, rhs: LinExpr) -> Result<()> {
        self.add(name, Cone::NonNeg(1), vec![rhs - lhs])
    }

    /// `|e| <= bound` as two linear inequalities.
    pub fn abs_le(&mut self, name: &str, e: LinExpr, bound: LinExpr) -> Result<()> {
        let lo = bound.clone() + e.clone();
        let hi = bound - e;
        self.add(name, Cone::NonNeg(2), vec![hi, lo])
    }

    /// `||xs||_2 <= t`.
    pub fn soc(&mut self, name: &str, t: LinExpr, xs: Vec<LinExpr>) -> Result<()> {
        let mut rows = Vec::with_capacity(xs.len() + 1);
        rows.push(t);
        rows.extend(xs);
        let n = rows.len();
        self.add(name, Cone::Soc(n), rows)
    }

    /// `2 u v >= ||xs||^2` with `u, v >= 0`.
    pub fn rsoc(&mut self, name: &str, u: LinExpr, v: LinExpr, xs: Vec<LinExpr>) -> Result<()> {
        let mut rows = Vec::with_capacity(xs.len() + 2);
        rows.push(u);
        rows.push(v);
        rows.extend(xs);
        let n = rows.len();
        self.add(name, Cone::RotatedSoc(n), rows)
    }

    /// The symmetric expression matrix is PSD.
    pub fn lmi(&mut self, name: &str, m: SymExpr) -> Result<()> {
        let n = m.dim();
        self.add(name, Cone::Psd(n), m.into_packed_rows())
    }

    /// `x^a y^(1-a) >= |z|`.
    pub fn power(&mut self, name: &str, x: LinExpr, y: LinExpr, z: LinExpr, a: f64) -> Result<()> {
        self.add(name, Cone::Power(a), vec![x, y, z])
    }

    /// `||xs||_q <= t` for `q` in `[1, inf]`.
    pub fn norm_le(&mut self, name: &str, xs: Vec<LinExpr>, q: f64, t: LinExpr) -> Result<()> {
        if !(q >= 1.0) {
            return Err(Error::invalid(format!("norm exponent {q} below 1")));
        }
        let k = xs.len();
        if k == 0 {
            return self.add(name, Cone::NonNeg(1), vec![t]);
        }
        if q == 1.0 {
            let a = self.vector(&format!("{name}.abs"), k);
            for (i, x) in xs.into_iter().enumerate() {
                self.abs_le(name, x, a.at(i))?;
            }
            let total = LinExpr::sum(&a.exprs());
            self.le(name, total, t)
        } else if q == 2.0 {
            self.soc(name, t, xs)
        } else if q.is_infinite() {
            for x in xs {
                self.abs_le(name, x, t.clone())?;
            }
            Ok(())
        } else {
            let r = self.vector(&format!("{name}.pow"), k);
            for (i, x) in xs.into_iter().enumerate() {
                self.power(name, r.at(i), t.clone(), x, 1.0 / q)?;
            }
            let total = LinExpr::sum(&r.exprs());
            self.le(name, total, t)
        }
    }

    pub fn minimize(&mut self, objective: LinExpr) -> Result<()> {
        self.check(std::slice::from_ref(&objective))?;
        self.objective = objective.compact();
        self.sense = Sense::Minimize;
        Ok(())
    }

    pub fn maximize(&mut self, objective: LinExpr) -> Result<()> {
        self.check(std::slice::from_ref(&objective))?;
        self.objective = objective.compact();
        self.sense = Sense::Maximize;
        Ok(())
    }

    /// Deterministic text dump, one line per item.
    ///
    /// ```text
    /// var <name> <scalar|vector n|symmetric n> @<offset>
    /// objective <min|max> <constant> <idx>:<coef> ...
    /// con <name> <cone> row <k> <constant> <idx>:<coef> ...
    /// ```
    /// Coefficients are printed in `{:e}` form after merging duplicates, so
    /// two identical programs produce byte-identical dumps.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let kind = match b.kind {
                BlockKind::Scalar => "scalar".to_string(),
                BlockKind::Vector(n) => format!("vector {n}"),
                BlockKind::Symmetric(n) => format!("symmetric {n}"),
            };
            let _ = writeln!(out, "var {} {} @{}", b.name, kind, b.offset);
        }
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        let _ = writeln!(out, "objective {} {}", sense, fmt_expr(&self.objective));
        for c in &self.constraints {
            for (k, r) in c.rows.iter().enumerate() {
                let _ = writeln!(out, "con {} {} row {} {}", c.name, c.cone.tag(), k, fmt_expr(r));
            }
        }
        out
    }

    /// Values of a vector block from a primal point.
    pub fn read_vector(v: &VecVar, x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&x[v.offset..v.offset + v.len])
    }
}

fn fmt_expr(e: &LinExpr) -> String {
    let e = e.clone().compact();
    let mut s = format!("{:e}", e.constant);
    for (i, c) in e.terms {
        let _ = write!(s, " {i}:{c:e}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_mismatch_rejected() {
        let mut p = ConicProgram::new();
        let x = p.vector("x", 2);
        assert!(p.add("bad", Cone::Soc(3), x.exprs()).is_err());
        assert!(p.add("oob", Cone::NonNeg(1), vec![LinExpr::var(7)]).is_err());
        assert!(p.power("pw", x.at(0), x.at(1), LinExpr::zero(), 1.5).is_err());
    }

    #[test]
    fn dump_is_deterministic() {
        let build = || {
            let mut p = ConicProgram::new();
            let t = p.scalar("t");
            let x = p.psd_var("X", 2);
            p.eq("x11", x.entry(0, 0), LinExpr::constant(1.0)).unwrap();
            p.minimize(x.trace() + t.expr()).unwrap();
            p.dump()
        };
        let a = build();
        assert_eq!(a, build());
        assert!(a.contains("con X psd psd 2 row 1"));
        assert!(a.starts_with("var t scalar @0\n"));
    }

    #[test]
    fn trace_with_matches_dense() {
        let mut p = ConicProgram::new();
        let x = p.symmetric("X", 3);
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, 2.0, -1.0, 3.0, 0.5, 3.0, 4.0]);
        let xm = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -1.0, 0.3, 1.0, 0.7, -1.0, 0.7, 5.0]);
        let packed = super::super::linalg::svec(&xm);
        let got = x.trace_with(&c).eval(&packed);
        assert!((got - (&c * &xm).trace()).abs() < 1e-12);
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let cong = x.congruence(&f).eval(&packed);
        let want = f.transpose() * &xm * &f;
        assert!((cong - want).abs().max() < 1e-12);
    }
}
