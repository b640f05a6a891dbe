//! Observation model `omega = A x + N nu + xi`, contrast matrices and
//! confidence thresholds.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conic::SolverOptions;
use crate::ellitope::BasicEllitope;
use crate::error::{Error, Result};
use crate::serial;

/// What is known about the nuisance `nu`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NuisanceSpec {
    /// No nuisance (`nu = 0`).
    None,
    /// `nu` ranges over a basic ellitope in `R^n`.
    Ellitopic { set: BasicEllitope },
    /// `N nu` ranges over the polar of the ellitope `nstar` in `R^m`; `nstar`
    /// is the unit ball of the seminorm `pi`.
    CoEllitopic { nstar: BasicEllitope },
    /// `nu` has at most `s` nonzero entries.
    Sparse { s: usize },
}

impl NuisanceSpec {
    pub fn is_bounded(&self) -> bool {
        !matches!(self, NuisanceSpec::Sparse { .. })
    }

    pub fn sparsity(&self) -> Result<usize> {
        match self {
            NuisanceSpec::Sparse { s } => Ok(*s),
            _ => Err(Error::invalid("operation needs a sparse nuisance specification")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemInstance {
    #[serde(with = "serial::matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serial::matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "serial::matrix")]
    pub n: DMatrix<f64>,
    /// Signal set.
    pub x: BasicEllitope,
    /// Polar of the unit ball of the error norm.
    pub bstar: BasicEllitope,
    pub nuisance: NuisanceSpec,
    pub sigma: f64,
    pub epsilon: f64,
}

impl ProblemInstance {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        n: DMatrix<f64>,
        x: BasicEllitope,
        bstar: BasicEllitope,
        nuisance: NuisanceSpec,
        sigma: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let inst = ProblemInstance { a, b, n, x, bstar, nuisance, sigma, epsilon };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, p) = self.a.shape();
        if self.b.ncols() != p {
            return Err(Error::dims("columns of B", p, self.b.ncols()));
        }
        if self.n.nrows() != m {
            return Err(Error::dims("rows of N", m, self.n.nrows()));
        }
        if self.x.dim() != p {
            return Err(Error::dims("signal set dimension", p, self.x.dim()));
        }
        if self.bstar.dim() != self.b.nrows() {
            return Err(Error::dims("error-norm polar dimension", self.b.nrows(), self.bstar.dim()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        match &self.nuisance {
            NuisanceSpec::None => {}
            NuisanceSpec::Ellitopic { set } => {
                if set.dim() != self.n.ncols() {
                    return Err(Error::dims("nuisance set dimension", self.n.ncols(), set.dim()));
                }
            }
            NuisanceSpec::CoEllitopic { nstar } => {
                if nstar.dim() != m {
                    return Err(Error::dims("co-ellitopic nuisance dimension", m, nstar.dim()));
                }
            }
            NuisanceSpec::Sparse { s } => {
                if *s == 0 || *s > self.n.ncols() {
                    return Err(Error::invalid(format!("sparsity {s} must lie in 1..={}", self.n.ncols())));
                }
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.a.ncols()
    }

    pub fn q(&self) -> usize {
        self.b.nrows()
    }

    /// Nuisance dimension (columns of `N`).
    pub fn n_dim(&self) -> usize {
        self.n.ncols()
    }

    pub fn hash(&self) -> String {
        serial::content_hash(self)
    }

    /// Same instance with a different nuisance model.
    pub fn with_nuisance(&self, nuisance: NuisanceSpec) -> Result<Self> {
        let mut out = self.clone();
        out.nuisance = nuisance;
        out.validate()?;
        Ok(out)
    }
}

/// Which block of a combined contrast a column belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    /// Plain contrast column (bounded-nuisance estimates).
    Plain,
    /// Sparse-recovery contrast designed under the admissible-set constraint.
    H,
    /// Signal contrast paired with `H`.
    G,
    /// Sparse-recovery contrast of the alternative design (any matrix).
    AltH,
    /// Signal contrast of the alternative design.
    AltG,
}

impl ColumnRole {
    fn tag(self) -> &'static str {
        match self {
            ColumnRole::Plain => "plain",
            ColumnRole::H => "h",
            ColumnRole::G => "g",
            ColumnRole::AltH => "alt_h",
            ColumnRole::AltG => "alt_g",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "plain" => ColumnRole::Plain,
            "h" => ColumnRole::H,
            "g" => ColumnRole::G,
            "alt_h" => ColumnRole::AltH,
            "alt_g" => ColumnRole::AltG,
            other => return Err(Error::Config(format!("unknown column role '{other}'"))),
        })
    }
}

/// Columns `g_1..g_I` of a contrast matrix with role tags.
///
/// `threshold_count` is the column count used in the confidence threshold;
/// it is at least the number of stored columns and stays at the design size
/// when negligible columns are dropped.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContrastMatrix {
    #[serde(with = "serial::matrix")]
    columns: DMatrix<f64>,
    roles: Vec<ColumnRole>,
    threshold_count: usize,
}

impl ContrastMatrix {
    pub fn new(columns: DMatrix<f64>, role: ColumnRole) -> Self {
        let k = columns.ncols();
        ContrastMatrix { columns, roles: vec![role; k], threshold_count: k }
    }

    pub fn with_roles(columns: DMatrix<f64>, roles: Vec<ColumnRole>, threshold_count: usize) -> Result<Self> {
        if roles.len() != columns.ncols() {
            return Err(Error::dims("contrast role tags", columns.ncols(), roles.len()));
        }
        if threshold_count < columns.ncols() {
            return Err(Error::invalid("threshold count below the number of columns"));
        }
        Ok(ContrastMatrix { columns, roles, threshold_count })
    }

    pub fn empty(m: usize) -> Self {
        Self::new(DMatrix::zeros(m, 0), ColumnRole::Plain)
    }

    pub fn identity(m: usize, role: ColumnRole) -> Self {
        Self::new(DMatrix::identity(m, m), role)
    }

    pub fn m(&self) -> usize {
        self.columns.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    pub fn threshold_count(&self) -> usize {
        self.threshold_count
    }

    pub fn set_threshold_count(&mut self, count: usize) {
        self.threshold_count = count.max(self.ncols());
    }

    pub fn col(&self, i: usize) -> DVector<f64> {
        self.columns.column(i).into_owned()
    }

    pub fn col_norms(&self) -> Vec<f64> {
        (0..self.ncols()).map(|i| self.columns.column(i).norm()).collect()
    }

    /// Largest column Euclidean norm (zero for an empty contrast).
    pub fn max_col_norm(&self) -> f64 {
        self.col_norms().into_iter().fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        ContrastMatrix { columns: &self.columns * c, roles: self.roles.clone(), threshold_count: self.threshold_count }
    }

    /// Drops columns whose norm is at most `tol` times the largest norm.
    pub fn drop_small_columns(&self, tol: f64) -> Self {
        let norms = self.col_norms();
        let top = norms.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..self.ncols()).filter(|&i| norms[i] > tol * top && norms[i] > 0.0).collect();
        self.select(&keep)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut cols = DMatrix::zeros(self.m(), idx.len());
        for (k, &i) in idx.iter().enumerate() {
            cols.set_column(k, &self.columns.column(i));
        }
        ContrastMatrix {
            columns: cols,
            roles: idx.iter().map(|&i| self.roles[i]).collect(),
            threshold_count: self.threshold_count,
        }
    }

    /// Columns carrying the given role.
    pub fn block(&self, role: ColumnRole) -> Self {
        let idx: Vec<usize> = (0..self.ncols()).filter(|&i| self.roles[i] == role).collect();
        let mut out = self.select(&idx);
        out.threshold_count = idx.len();
        out
    }

    /// Horizontal concatenation; the threshold count is the sum of the parts.
    pub fn hstack(parts: &[&ContrastMatrix]) -> Result<Self> {
        let m = parts.first().map(|c| c.m()).unwrap_or(0);
        let total: usize = parts.iter().map(|c| c.ncols()).sum();
        let mut cols = DMatrix::zeros(m, total);
        let mut roles = Vec::with_capacity(total);
        let mut at = 0;
        for c in parts {
            if c.m() != m {
                return Err(Error::dims("contrast row count", m, c.m()));
            }
            cols.view_mut((0, at), (m, c.ncols())).copy_from(&c.columns);
            roles.extend_from_slice(&c.roles);
            at += c.ncols();
        }
        let threshold_count = parts.iter().map(|c| c.threshold_count).sum();
        Ok(ContrastMatrix { columns: cols, roles, threshold_count })
    }

    /// Text encoding: a header line `contrast <m> <ncols> <threshold_count>`
    /// followed by one `col <i> <role> <v_1> ... <v_m>` line per column.
    pub fn to_text(&self) -> String {
        let mut s = format!("contrast {} {} {}\n", self.m(), self.ncols(), self.threshold_count);
        for i in 0..self.ncols() {
            let _ = write!(s, "col {} {}", i, self.roles[i].tag());
            for v in self.columns.column(i).iter() {
                let _ = write!(s, " {v:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::Config("empty contrast file".into()))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != "contrast" {
            return Err(Error::Config("contrast header must be 'contrast <m> <ncols> <threshold_count>'".into()));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Config(format!("bad integer '{s}': {e}")));
        let (m, k, tc) = (num(header[1])?, num(header[2])?, num(header[3])?);
        let mut cols = DMatrix::zeros(m, k);
        let mut roles = Vec::with_capacity(k);
        for (i, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if i >= k || parts.len() != m + 3 || parts[0] != "col" || num(parts[1])? != i {
                return Err(Error::Config(format!("malformed contrast line {}", i + 2)));
            }
            roles.push(ColumnRole::parse(parts[2])?);
            for r in 0..m {
                cols[(r, i)] = parts[r + 3].parse::<f64>().map_err(|e| Error::Config(format!("bad number: {e}")))?;
            }
        }
        if roles.len() != k {
            return Err(Error::dims("contrast column lines", k, roles.len()));
        }
        Self::with_roles(cols, roles, tc)
    }
}

/// Confidence threshold `sigma * sqrt(2 ln(2 count / epsilon))`.
pub fn varkappa(sigma: f64, epsilon: f64, count: usize) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let arg = 2.0 * count as f64 / epsilon;
    // epsilon may equal 2 count exactly, where the logarithm vanishes.
    Ok(sigma * (2.0 * arg.ln().max(0.0)).sqrt())
}

/// `omega = A x + N nu + xi` with `xi ~ N(0, sigma^2 I)` drawn from `seed`.
///
/// With `checked`, `x` must lie in the signal set and `nu` must satisfy the
/// nuisance specification.
pub fn sample_observation(
    inst: &ProblemInstance,
    x_star: &DVector<f64>,
    nu_star: &DVector<f64>,
    seed: u64,
    checked: bool,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    if x_star.len() != inst.p() {
        return Err(Error::dims("signal length", inst.p(), x_star.len()));
    }
    if nu_star.len() != inst.n_dim() {
        return Err(Error::dims("nuisance length", inst.n_dim(), nu_star.len()));
    }
    if checked {
        check_membership(inst, x_star, nu_star, opts)?;
    }
    let noise = gaussian_noise(inst.m(), inst.sigma, seed);
    Ok(&inst.a * x_star + &inst.n * nu_star + noise)
}

pub fn gaussian_noise(m: usize, sigma: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    DVector::from_iterator(m, (0..m).map(|_| normal.sample(&mut rng)))
}

fn check_membership(inst: &ProblemInstance, x: &DVector<f64>, nu: &DVector<f64>, opts: &SolverOptions) -> Result<()> {
    const TOL: f64 = 1e-9;
    if !inst.x.contains(x.as_slice(), TOL)? {
        return Err(Error::invalid("signal lies outside the signal set"));
    }
    let ok = match &inst.nuisance {
        NuisanceSpec::None => nu.iter().all(|&v| v == 0.0),
        NuisanceSpec::Ellitopic { set } => set.contains(nu.as_slice(), TOL)?,
        NuisanceSpec::CoEllitopic { nstar } => {
            let eta = &inst.n * nu;
            nstar.max_linear(eta.as_slice(), opts)?.0 <= 1.0 + 1e-7
        }
        NuisanceSpec::Sparse { s } => nu.iter().filter(|&&v| v != 0.0).count() <= *s,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("nuisance violates the nuisance specification"))
    }
}

/// True iff `|g_i^T xi| <= varkappa ||g_i||_2` for every column.
pub fn in_confidence_set(g: &ContrastMatrix, xi: &DVector<f64>, varkappa: f64) -> Result<bool> {
    if xi.len() != g.m() {
        return Err(Error::dims("noise length", g.m(), xi.len()));
    }
    Ok((0..g.ncols()).all(|i| {
        let c = g.matrix().column(i);
        c.dot(xi).abs() <= varkappa * c.norm()
    }))
}

/// `pi(h) = sup { (N u)^T h : u in nuisance set }`.
pub fn nuisance_seminorm(spec: &NuisanceSpec, n: &DMatrix<f64>, h: &[f64], opts: &SolverOptions) -> Result<f64> {
    if h.len() != n.nrows() {
        return Err(Error::dims("seminorm argument", n.nrows(), h.len()));
    }
    match spec {
        NuisanceSpec::None => Ok(0.0),
        NuisanceSpec::Ellitopic { set } => {
            let c = n.transpose() * DVector::from_column_slice(h);
            Ok(set.max_linear(c.as_slice(), opts)?.0.max(0.0))
        }
        NuisanceSpec::CoEllitopic { nstar } => nstar.gauge(h),
        NuisanceSpec::Sparse { .. } => Err(Error::invalid("the seminorm pi is undefined for sparse nuisance")),
    }
}
