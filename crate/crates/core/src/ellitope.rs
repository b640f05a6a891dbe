//! Basic ellitopes `{x : exists t in T, x^T T_l x <= t_l}` and their
//! parameter sets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conic::linalg::{min_eigenvalue, psd_factor};
use crate::conic::{self, ConicProgram, LinExpr, SolverOptions};
use crate::error::{Error, Result};

/// Monotone parameter set of an ellitope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TSet {
    /// `{t : 0 <= t <= upper}`.
    Box { upper: Vec<f64> },
    /// `{t >= 0 : ||t||_{p/2} <= radius}` in dimension `k`.
    ScaledPBall { p: f64, radius: f64, k: usize },
    Product(Vec<TSet>),
}

/// Conjugate exponent of `r >= 1`.
fn conjugate(r: f64) -> f64 {
    if r == 1.0 {
        f64::INFINITY
    } else if r.is_infinite() {
        1.0
    } else {
        r / (r - 1.0)
    }
}

fn pnorm(v: &[f64], r: f64) -> f64 {
    if r.is_infinite() {
        v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    } else if r == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else {
        let top = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if top == 0.0 {
            return 0.0;
        }
        top * v.iter().map(|x| (x.abs() / top).powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

impl TSet {
    pub fn unit_box(k: usize) -> Self {
        TSet::Box { upper: vec![1.0; k] }
    }

    pub fn dim(&self) -> usize {
        match self {
            TSet::Box { upper } => upper.len(),
            TSet::ScaledPBall { k, .. } => *k,
            TSet::Product(fs) => fs.iter().map(TSet::dim).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TSet::Box { upper } => {
                if upper.is_empty() || upper.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
                    return Err(Error::invalid("box bounds must be positive and finite"));
                }
            }
            TSet::ScaledPBall { p, radius, k } => {
                if !(*p >= 2.0) || !(*radius > 0.0 && radius.is_finite()) || *k == 0 {
                    return Err(Error::invalid(format!("bad p-ball parameters p={p}, radius={radius}, k={k}")));
                }
            }
            TSet::Product(fs) => {
                if fs.is_empty() {
                    return Err(Error::invalid("empty product parameter set"));
                }
                fs.iter().try_for_each(TSet::validate)?;
            }
        }
        Ok(())
    }

    /// Support function `max_{t in T} dual^T t` for nonnegative `dual`.
    pub fn support(&self, dual: &[f64]) -> Result<f64> {
        if dual.len() != self.dim() {
            return Err(Error::dims("support function argument", self.dim(), dual.len()));
        }
        if let Some(bad) = dual.iter().find(|&&d| d < 0.0 || d.is_nan()) {
            return Err(Error::invalid(format!("support function needs a nonnegative argument, got {bad}")));
        }
        Ok(self.support_unchecked(dual))
    }

    fn support_unchecked(&self, dual: &[f64]) -> f64 {
        match self {
            TSet::Box { upper } => upper.iter().zip(dual).map(|(u, d)| u * d).sum(),
            TSet::ScaledPBall { p, radius, .. } => radius * pnorm(dual, conjugate(p / 2.0)),
            TSet::Product(fs) => {
                let mut off = 0;
                let mut total = 0.0;
                for f in fs {
                    let k = f.dim();
                    total += f.support_unchecked(&dual[off..off + k]);
                    off += k;
                }
                total
            }
        }
    }

    /// Support function with negative entries clipped to zero (harmless for
    /// monotone sets, convenient for solver output with tiny negatives).
    pub fn support_clipped(&self, dual: &[f64]) -> Result<f64> {
        let d: Vec<f64> = dual.iter().map(|&x| x.max(0.0)).collect();
        self.support(&d)
    }

    /// Smallest `s >= 0` with `y` dominated by a point of `s * T` (`y >= 0`).
    pub fn gauge(&self, y: &[f64]) -> f64 {
        match self {
            TSet::Box { upper } => y.iter().zip(upper).fold(0.0_f64, |m, (v, u)| m.max(v.max(0.0) / u)),
            TSet::ScaledPBall { p, radius, .. } => {
                let clipped: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
                pnorm(&clipped, p / 2.0) / radius
            }
            TSet::Product(fs) => {
                let mut off = 0;
                let mut g = 0.0_f64;
                for f in fs {
                    let k = f.dim();
                    g = g.max(f.gauge(&y[off..off + k]));
                    off += k;
                }
                g
            }
        }
    }

    /// Membership of a form-value vector, with additive slack `tol`.
    pub fn contains_values(&self, y: &[f64], tol: f64) -> bool {
        match self {
            TSet::Box { upper } => y.iter().zip(upper).all(|(v, u)| *v <= u + tol),
            TSet::ScaledPBall { p, radius, .. } => {
                let clipped: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
                pnorm(&clipped, p / 2.0) <= radius + tol
            }
            TSet::Product(fs) => {
                let mut off = 0;
                fs.iter().all(|f| {
                    let k = f.dim();
                    let ok = f.contains_values(&y[off..off + k], tol);
                    off += k;
                    ok
                })
            }
        }
    }

    /// Adds constraints saying `y` is dominated by a point of `scale * T`.
    /// `scale` must be a nonnegative expression.
    pub fn constrain_dominated(&self, prog: &mut ConicProgram, y: &[LinExpr], scale: &LinExpr) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::dims("parameter set membership", self.dim(), y.len()));
        }
        match self {
            TSet::Box { upper } => {
                for (yi, &u) in y.iter().zip(upper) {
                    prog.le("tset box", yi.clone(), scale.clone().scaled(u))?;
                }
            }
            TSet::ScaledPBall { p, radius, k } => {
                let t = prog.nonneg_vector("tset pball", *k);
                for (i, yi) in y.iter().enumerate() {
                    prog.le("tset dominate", yi.clone(), t.at(i))?;
                }
                prog.norm_le("tset pball norm", t.exprs(), p / 2.0, scale.clone().scaled(*radius))?;
            }
            TSet::Product(fs) => {
                let mut off = 0;
                for f in fs {
                    let k = f.dim();
                    f.constrain_dominated(prog, &y[off..off + k], scale)?;
                    off += k;
                }
            }
        }
        Ok(())
    }

    /// Returns an expression bounding `max_{t in T} sum_j sqrt(t_j) a_j` from
    /// above, tight at the optimum of any program minimizing it (`a >= 0`).
    pub fn sqrt_support_epigraph(&self, prog: &mut ConicProgram, a: &[LinExpr]) -> Result<LinExpr> {
        if a.len() != self.dim() {
            return Err(Error::dims("support function argument", self.dim(), a.len()));
        }
        match self {
            TSet::Box { upper } => {
                let mut e = LinExpr::zero();
                for (d, &u) in a.iter().zip(upper) {
                    e.add_scaled(d, u.sqrt());
                }
                Ok(e)
            }
            // With z = sqrt(t) the set becomes the p-ball of radius sqrt(radius).
            TSet::ScaledPBall { p, radius, .. } => {
                let s = prog.scalar("sqrt support norm");
                prog.norm_le("sqrt support norm", a.to_vec(), conjugate(*p), s.expr())?;
                Ok(s.expr().scaled(radius.sqrt()))
            }
            TSet::Product(fs) => {
                let mut off = 0;
                let mut e = LinExpr::zero();
                for f in fs {
                    let k = f.dim();
                    let part = f.sqrt_support_epigraph(prog, &a[off..off + k])?;
                    e.add_scaled(&part, 1.0);
                    off += k;
                }
                Ok(e)
            }
        }
    }

    /// Returns an expression bounding `support(dual)` from above, tight at the
    /// optimum of any program minimizing it. `dual` must be nonnegative.
    pub fn support_epigraph(&self, prog: &mut ConicProgram, dual: &[LinExpr]) -> Result<LinExpr> {
        if dual.len() != self.dim() {
            return Err(Error::dims("support function argument", self.dim(), dual.len()));
        }
        match self {
            TSet::Box { upper } => {
                let mut e = LinExpr::zero();
                for (d, &u) in dual.iter().zip(upper) {
                    e.add_scaled(d, u);
                }
                Ok(e)
            }
            TSet::ScaledPBall { p, radius, .. } => {
                let q = conjugate(p / 2.0);
                if q.is_infinite() {
                    let s = prog.scalar("support max");
                    for d in dual {
                        prog.le("support max", d.clone(), s.expr())?;
                    }
                    Ok(s.expr().scaled(*radius))
                } else if q == 1.0 {
                    Ok(LinExpr::sum(dual).scaled(*radius))
                } else {
                    let s = prog.scalar("support norm");
                    prog.norm_le("support norm", dual.to_vec(), q, s.expr())?;
                    Ok(s.expr().scaled(*radius))
                }
            }
            TSet::Product(fs) => {
                let mut off = 0;
                let mut e = LinExpr::zero();
                for f in fs {
                    let k = f.dim();
                    let part = f.support_epigraph(prog, &dual[off..off + k])?;
                    e.add_scaled(&part, 1.0);
                    off += k;
                }
                Ok(e)
            }
        }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct RawEllitope {
    dim: usize,
    #[serde(with = "crate::serial::matrix_vec")]
    forms: Vec<DMatrix<f64>>,
    tset: TSet,
}

/// A basic ellitope in `R^dim`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawEllitope", into = "RawEllitope")]
pub struct BasicEllitope {
    dim: usize,
    forms: Vec<DMatrix<f64>>,
    tset: TSet,
    /// `forms[l] = factors[l]^T factors[l]`.
    factors: Vec<DMatrix<f64>>,
}

impl TryFrom<RawEllitope> for BasicEllitope {
    type Error = Error;
    fn try_from(raw: RawEllitope) -> Result<Self> {
        let e = BasicEllitope::new(raw.forms, raw.tset)?;
        if e.dim != raw.dim {
            return Err(Error::dims("ellitope dimension", raw.dim, e.dim));
        }
        Ok(e)
    }
}

impl From<BasicEllitope> for RawEllitope {
    fn from(e: BasicEllitope) -> Self {
        RawEllitope { dim: e.dim, forms: e.forms, tset: e.tset }
    }
}

impl BasicEllitope {
    /// Validates the forms (PSD, positive definite sum) and parameter set.
    pub fn new(forms: Vec<DMatrix<f64>>, tset: TSet) -> Result<Self> {
        tset.validate()?;
        if forms.len() != tset.dim() {
            return Err(Error::dims("number of quadratic forms", tset.dim(), forms.len()));
        }
        let dim = forms[0].nrows();
        let mut sum = DMatrix::zeros(dim, dim);
        for f in &forms {
            if f.nrows() != dim || f.ncols() != dim {
                return Err(Error::dims("quadratic form size", dim, f.nrows().max(f.ncols())));
            }
            if !conic::psd_check(f, 1e-9)? {
                return Err(Error::NotPsd { min_eigenvalue: min_eigenvalue(f) });
            }
            sum += f;
        }
        let lo = min_eigenvalue(&sum);
        if !(lo > 1e-12 * (1.0 + sum.abs().max())) {
            return Err(Error::invalid(format!("sum of forms is not positive definite (min eigenvalue {lo:.3e})")));
        }
        let factors = forms.iter().map(psd_factor).collect();
        Ok(BasicEllitope { dim, forms, tset, factors })
    }

    /// `{x : ||x||_inf <= 1}`.
    pub fn unit_box(k: usize) -> Self {
        let forms = (0..k).map(|i| coord_form(k, i)).collect();
        Self::new(forms, TSet::unit_box(k)).expect("valid box")
    }

    /// `{x : ||x||_p <= radius}` for `p >= 2`.
    pub fn p_ball(k: usize, p: f64, radius: f64) -> Result<Self> {
        let forms = (0..k).map(|i| coord_form(k, i)).collect();
        Self::new(forms, TSet::ScaledPBall { p, radius: radius * radius, k })
    }

    /// `{x : ||x||_2 <= radius}` as a one-form ellitope.
    pub fn euclidean_ball(k: usize, radius: f64) -> Self {
        Self::new(vec![DMatrix::identity(k, k)], TSet::Box { upper: vec![radius * radius] }).expect("valid ball")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forms(&self) -> &[DMatrix<f64>] {
        &self.forms
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn tset(&self) -> &TSet {
        &self.tset
    }

    pub fn num_forms(&self) -> usize {
        self.forms.len()
    }

    pub fn form_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::dims("ellitope point", self.dim, x.len()));
        }
        Ok(self
            .factors
            .iter()
            .map(|f| (0..f.nrows()).map(|r| (0..self.dim).map(|c| f[(r, c)] * x[c]).sum::<f64>().powi(2)).sum())
            .collect())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        Ok(self.tset.contains_values(&self.form_values(x)?, tol))
    }

    /// Minkowski functional of the ellitope.
    pub fn gauge(&self, x: &[f64]) -> Result<f64> {
        Ok(self.tset.gauge(&self.form_values(x)?).sqrt())
    }

    pub fn direct_product(&self, other: &BasicEllitope) -> BasicEllitope {
        let k = self.dim + other.dim;
        let embed = |m: &DMatrix<f64>, at: usize| {
            let mut out = DMatrix::zeros(k, k);
            out.view_mut((at, at), (m.nrows(), m.ncols())).copy_from(m);
            out
        };
        let mut forms: Vec<_> = self.forms.iter().map(|m| embed(m, 0)).collect();
        forms.extend(other.forms.iter().map(|m| embed(m, self.dim)));
        let tset = TSet::Product(vec![self.tset.clone(), other.tset.clone()]);
        BasicEllitope::new(forms, tset).expect("product of valid ellitopes is valid")
    }

    /// Adds `x in scale * E` for expressions `x` (`scale` is a constant).
    pub fn constrain_member(&self, prog: &mut ConicProgram, x: &[LinExpr], scale: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dims("ellitope membership", self.dim, x.len()));
        }
        let t = prog.nonneg_vector("ellitope t", self.forms.len());
        for (l, f) in self.factors.iter().enumerate() {
            let rows: Vec<LinExpr> = (0..f.nrows())
                .map(|r| {
                    let mut e = LinExpr::zero();
                    for (c, xc) in x.iter().enumerate() {
                        e.add_scaled(xc, f[(r, c)]);
                    }
                    e
                })
                .collect();
            // x^T T_l x <= scale^2 t_l  <=>  2 (scale^2 t_l / 2) * 1 >= ||F_l x||^2
            prog.rsoc("ellitope form", t.at(l).scaled(0.5 * scale * scale), LinExpr::constant(1.0), rows)?;
        }
        self.tset.constrain_dominated(prog, &t.exprs(), &LinExpr::constant(1.0))
    }

    /// Adds `eta in scale * E°`, the polar set `{eta : max_{x in E} eta^T x <= 1}`,
    /// through the exact representation `eta = sum_l F_l^T y_l`.
    pub fn constrain_polar(&self, prog: &mut ConicProgram, eta: &[LinExpr], scale: f64) -> Result<()> {
        if eta.len() != self.dim {
            return Err(Error::dims("polar membership", self.dim, eta.len()));
        }
        let mut sum = vec![LinExpr::zero(); self.dim];
        let mut norms = Vec::with_capacity(self.forms.len());
        for f in &self.factors {
            let y = prog.vector("polar y", f.nrows());
            let a = prog.scalar("polar norm");
            prog.soc("polar norm", a.expr(), y.exprs())?;
            for (c, s) in sum.iter_mut().enumerate() {
                for r in 0..f.nrows() {
                    if f[(r, c)] != 0.0 {
                        s.add_term(y.offset + r, f[(r, c)]);
                    }
                }
            }
            norms.push(a.expr());
        }
        for (e, s) in eta.iter().zip(sum) {
            prog.eq("polar sum", e.clone(), s)?;
        }
        let bound = self.tset.sqrt_support_epigraph(prog, &norms)?;
        prog.le("polar bound", bound, LinExpr::constant(scale))
    }

    /// `max_{x in E} c^T x` and a maximizer.
    pub fn max_linear(&self, c: &[f64], opts: &SolverOptions) -> Result<(f64, Vec<f64>)> {
        if c.len() != self.dim {
            return Err(Error::dims("linear objective", self.dim, c.len()));
        }
        if c.iter().all(|&v| v == 0.0) {
            return Ok((0.0, vec![0.0; self.dim]));
        }
        if self.forms.len() == 1 {
            if let TSet::Box { upper } = &self.tset {
                if let Some(chol) = self.forms[0].clone().cholesky() {
                    let cv = DVector::from_column_slice(c);
                    let z = chol.solve(&cv);
                    let val = (upper[0] * cv.dot(&z)).sqrt();
                    let x = z * (upper[0] / cv.dot(&chol.solve(&cv))).sqrt();
                    return Ok((val, x.as_slice().to_vec()));
                }
            }
        }
        let mut prog = ConicProgram::new();
        let x = prog.vector("x", self.dim);
        self.constrain_member(&mut prog, &x.exprs(), 1.0)?;
        prog.maximize(x.dot(c))?;
        let r = conic::solve(&prog, opts)?.require_usable("ellitope linear maximization", 1e-6)?;
        Ok((r.objective, r.vector(&x)))
    }

    /// `(R, c)` when the set is the parallelotope `{x : |R x|_k <= c_k}` with
    /// invertible `R`: one rank-one form per coordinate and a box parameter set.
    pub fn as_parallelotope(&self) -> Option<(DMatrix<f64>, Vec<f64>)> {
        let TSet::Box { upper } = &self.tset else {
            return None;
        };
        if self.forms.len() != self.dim {
            return None;
        }
        let mut r = DMatrix::zeros(self.dim, self.dim);
        for (k, f) in self.forms.iter().enumerate() {
            let eig = f.clone().symmetric_eigen();
            let (top, lam) = eig.eigenvalues.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            let rest: f64 = eig.eigenvalues.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, v)| v.abs()).sum();
            if !(lam > 0.0) || rest > 1e-10 * lam {
                return None;
            }
            r.set_row(k, &(eig.eigenvectors.column(top).transpose() * lam.sqrt()));
        }
        let cond = r.clone().svd(false, false).singular_values;
        if cond.min() <= 1e-12 * cond.max() {
            return None;
        }
        Some((r, upper.iter().map(|u| u.sqrt()).collect()))
    }

    /// Hit-and-run random walk started at an interior point.
    pub fn hit_and_run<R: Rng>(&self, start: &[f64], steps: usize, rng: &mut R) -> Result<Vec<f64>> {
        if !self.contains(start, 1e-12)? {
            return Err(Error::invalid("hit-and-run start point is outside the ellitope"));
        }
        let mut x = start.to_vec();
        for _ in 0..steps {
            let mut d: Vec<f64> = (0..self.dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nd == 0.0 {
                continue;
            }
            d.iter_mut().for_each(|v| *v /= nd);
            let hi = self.ray_extent(&x, &d)?;
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            let lo = -self.ray_extent(&x, &neg)?;
            let tau = rng.random_range(lo..=hi);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += tau * di;
            }
        }
        Ok(x)
    }

    /// Largest `tau >= 0` with `x + tau d` inside (bisection on the gauge).
    fn ray_extent(&self, x: &[f64], d: &[f64]) -> Result<f64> {
        let at = |t: f64| -> Result<f64> {
            let p: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
            self.gauge(&p)
        };
        let mut hi = 1.0;
        while at(hi)? <= 1.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::invalid("ellitope appears unbounded along a ray"));
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if at(mid)? <= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}

fn coord_form(k: usize, i: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    m[(i, i)] = 1.0;
    m
}

/// Image of a basic ellitope under a linear map.
#[derive(Clone, Debug)]
pub struct LinearImageEllitope {
    pub base: BasicEllitope,
    pub map: DMatrix<f64>,
}

impl LinearImageEllitope {
    pub fn new(base: BasicEllitope, map: DMatrix<f64>) -> Result<Self> {
        if map.ncols() != base.dim() {
            return Err(Error::dims("linear image map columns", base.dim(), map.ncols()));
        }
        Ok(LinearImageEllitope { base, map })
    }

    pub fn image(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.base.dim() {
            return Err(Error::dims("linear image argument", self.base.dim(), z.len()));
        }
        Ok((&self.map * DVector::from_column_slice(z)).as_slice().to_vec())
    }
}

/// The ellitope `1/2 [N* cap {w : kappa ||w||_2 <= 1}]`, whose gauge is
/// `2 max(pi(w), kappa ||w||_2)` with `pi` the gauge of `N*`.
///
/// Forms are `4 R_j` for the forms `R_j` of `N*`, plus `4 kappa^2 I`, and the
/// parameter set is the parameter set of `N*` times `[0, 1]`.
pub fn cw_ellitope(nstar: &BasicEllitope, varkappa: f64) -> Result<BasicEllitope> {
    if !(varkappa > 0.0 && varkappa.is_finite()) {
        return Err(Error::invalid(format!("kappa must be positive, got {varkappa}")));
    }
    let m = nstar.dim();
    let mut forms: Vec<DMatrix<f64>> = nstar.forms().iter().map(|r| r * 4.0).collect();
    forms.push(DMatrix::identity(m, m) * (4.0 * varkappa * varkappa));
    let tset = TSet::Product(vec![nstar.tset().clone(), TSet::unit_box(1)]);
    BasicEllitope::new(forms, tset)
}
