//! Risk-bound certificates: the semidefinite programs bounding the
//! epsilon-risk of a polyhedral estimate for a given contrast, and the
//! auxiliary quantities they need in the sparse-nuisance setting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{self, psd_check, ConicProgram, LinExpr, SolverOptions, SymExpr, VecVar};
use crate::conic::linalg::min_eigenvalue;
use crate::error::{Error, Result};
use crate::model::{nuisance_seminorm, varkappa, ColumnRole, ContrastMatrix, NuisanceSpec, ProblemInstance};
use crate::serial::content_hash;
use crate::sparse_l1::{admissibility_gap, h_set_check};

pub use crate::sparse_l1::norm_s1;

/// Tolerance for independent certificate re-verification.
pub const VERIFY_TOL: f64 = 1e-7;

/// Columns whose image `A^T g` is this small relative to the largest one do
/// not enter the semidefinite constraint.
const NEGLIGIBLE_COLUMN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    Bounded,
    Sparse,
    SparseAlt,
    Aggregated { branch: usize, inner: Box<BoundKind> },
}

/// Multipliers certifying an upper bound on the epsilon-risk of the estimate
/// built from a given contrast.
///
/// `costs[i]` is the squared bound on `|g_i^T A (x_hat - x)|` used for
/// column `i`, so the certified value is
/// `phi_S(lambda) + 4 phi_T(mu) + sum_i gamma_i costs[i]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiskCertificate {
    pub kind: BoundKind,
    pub instance_hash: String,
    pub contrast_hash: String,
    /// Roles of the certified columns, in order. The certified contrast is
    /// the concatenation of these role blocks of the estimate's contrast.
    #[serde(default)]
    pub roles: Vec<ColumnRole>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub costs: Vec<f64>,
    /// Confidence threshold `varkappa` behind the column bounds.
    pub threshold: f64,
    pub value: f64,
    /// Smallest eigenvalue of the block matrix at the stored multipliers.
    pub lmi_residual: f64,
}

/// Hash identifying a contrast in certificates: columns and roles, not the
/// threshold count (the certificate stores its threshold separately).
pub fn contrast_hash(g: &ContrastMatrix) -> String {
    let mut c = g.clone();
    c.set_threshold_count(0);
    content_hash(&c.to_text())
}

/// `phi_S(lambda) + 4 phi_T(mu)`.
pub fn base_value(inst: &ProblemInstance, lambda: &[f64], mu: &[f64]) -> Result<f64> {
    Ok(inst.bstar.tset().support(lambda)? + 4.0 * inst.x.tset().support(mu)?)
}

/// The block matrix `[[sum lambda S, B/2], [B^T/2, sum mu T + extra]]`.
pub fn lmi_matrix(inst: &ProblemInstance, lambda: &[f64], mu: &[f64], extra: &DMatrix<f64>) -> DMatrix<f64> {
    let (q, p) = (inst.q(), inst.p());
    let mut m = DMatrix::zeros(q + p, q + p);
    for (l, s) in lambda.iter().zip(inst.bstar.forms()) {
        let mut blk = m.view_mut((0, 0), (q, q));
        blk += s * *l;
    }
    for (k, t) in mu.iter().zip(inst.x.forms()) {
        let mut blk = m.view_mut((q, q), (p, p));
        blk += t * *k;
    }
    {
        let mut blk = m.view_mut((q, q), (p, p));
        blk += extra;
    }
    let half = &inst.b * 0.5;
    m.view_mut((0, q), (q, p)).copy_from(&half);
    m.view_mut((q, 0), (p, q)).copy_from(&half.transpose());
    m
}

/// `A^T (sum_i w_i g_i g_i^T) A`.
pub fn weighted_gram(inst: &ProblemInstance, g: &ContrastMatrix, weights: &[f64]) -> DMatrix<f64> {
    let ag = inst.a.transpose() * g.matrix();
    let mut scaled = ag.clone();
    for (j, w) in weights.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*w);
    }
    scaled * ag.transpose()
}

/// Variables and partial block matrix shared by every risk-bound program.
pub(crate) struct RiskLmi {
    pub lambda: VecVar,
    pub mu: VecVar,
    pub block: SymExpr,
    /// `phi_S(lambda) + 4 phi_T(mu)` (epigraph form).
    pub objective: LinExpr,
}

impl RiskLmi {
    pub fn new(prog: &mut ConicProgram, inst: &ProblemInstance) -> Result<Self> {
        let (q, p) = (inst.q(), inst.p());
        let lambda = prog.nonneg_vector("lambda", inst.bstar.num_forms());
        let mu = prog.nonneg_vector("mu", inst.x.num_forms());
        let mut block = SymExpr::zeros(q + p);
        for (l, s) in inst.bstar.forms().iter().enumerate() {
            block.add_var_block(0, s, &lambda.at(l));
        }
        for (k, t) in inst.x.forms().iter().enumerate() {
            block.add_var_block(q, t, &mu.at(k));
        }
        block.add_const_block(0, q, &inst.b, 0.5);
        let phi_s = inst.bstar.tset().support_epigraph(prog, &lambda.exprs())?;
        let phi_t = inst.x.tset().support_epigraph(prog, &mu.exprs())?;
        let objective = phi_s + phi_t.scaled(4.0);
        Ok(RiskLmi { lambda, mu, block, objective })
    }

    /// Adds `expr * a a^T` to the signal block.
    pub fn add_rank_one(&mut self, q: usize, a: &DVector<f64>, expr: &LinExpr) {
        let outer = a * a.transpose();
        self.block.add_var_block(q, &outer, expr);
    }
}

/// Shifts `lambda` and `mu` up just enough to make the block matrix PSD.
/// Returns the repaired multipliers and the final smallest eigenvalue.
pub(crate) fn repair(
    inst: &ProblemInstance,
    mut lambda: Vec<f64>,
    mut mu: Vec<f64>,
    extra: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    for v in lambda.iter_mut().chain(mu.iter_mut()) {
        *v = v.max(0.0);
    }
    let mut m = lmi_matrix(inst, &lambda, &mu, extra);
    let mut low = min_eigenvalue(&m);
    if low >= 0.0 {
        return Ok((lambda, mu, low));
    }
    let sum_s: DMatrix<f64> = inst.bstar.forms().iter().sum();
    let sum_t: DMatrix<f64> = inst.x.forms().iter().sum();
    let floor = min_eigenvalue(&sum_s).min(min_eigenvalue(&sum_t));
    if floor <= 0.0 {
        return Err(Error::Certificate("form sums are not positive definite".into()));
    }
    let scale = 1.0 + conic::linalg::spectral_norm(&m);
    for attempt in 0..8 {
        let shift = (-low / floor) * (1.0 + 1e-6) + 1e-14 * scale * 4f64.powi(attempt);
        lambda.iter_mut().for_each(|v| *v += shift);
        mu.iter_mut().for_each(|v| *v += shift);
        m = lmi_matrix(inst, &lambda, &mu, extra);
        low = min_eigenvalue(&m);
        if low >= 0.0 {
            break;
        }
    }
    log::debug!("certificate repair: smallest eigenvalue now {low:.3e}");
    Ok((lambda, mu, low))
}

impl RiskCertificate {
    /// The columns of `full` this certificate speaks about, rebuilt from the
    /// recorded role blocks.
    pub fn certified_part(&self, full: &ContrastMatrix) -> Result<ContrastMatrix> {
        let mut runs: Vec<(ColumnRole, usize)> = Vec::new();
        for &r in &self.roles {
            match runs.last_mut() {
                Some((last, k)) if *last == r => *k += 1,
                _ => {
                    if runs.iter().any(|(seen, _)| *seen == r) {
                        return Err(Error::Certificate(format!("role {r:?} is split across the certificate")));
                    }
                    runs.push((r, 1));
                }
            }
        }
        let blocks: Vec<ContrastMatrix> = runs.iter().map(|(r, _)| full.block(*r)).collect();
        for ((r, k), b) in runs.iter().zip(&blocks) {
            if b.ncols() != *k {
                return Err(Error::Certificate(format!("certificate has {k} {r:?} columns, contrast has {}", b.ncols())));
            }
        }
        ContrastMatrix::hstack(&blocks.iter().collect::<Vec<_>>())
    }

    /// Independent check of signs, the semidefinite constraint and the value.
    pub fn verify(&self, inst: &ProblemInstance, g: &ContrastMatrix) -> Result<()> {
        if self.instance_hash != inst.hash() {
            return Err(Error::Certificate("instance hash mismatch".into()));
        }
        if self.contrast_hash != contrast_hash(g) {
            return Err(Error::Certificate("contrast hash mismatch".into()));
        }
        if self.gamma.len() != g.ncols() || self.costs.len() != g.ncols() {
            return Err(Error::dims("certificate weights", g.ncols(), self.gamma.len()));
        }
        let neg = |v: &[f64]| v.iter().any(|x| !(*x >= 0.0));
        if neg(&self.lambda) || neg(&self.mu) || neg(&self.gamma) || neg(&self.costs) {
            return Err(Error::Certificate("negative or non-finite multiplier".into()));
        }
        let extra = weighted_gram(inst, g, &self.gamma);
        let m = lmi_matrix(inst, &self.lambda, &self.mu, &extra);
        if !psd_check(&m, VERIFY_TOL)? {
            return Err(Error::Certificate(format!(
                "semidefinite constraint fails (smallest eigenvalue {:.3e})",
                min_eigenvalue(&m)
            )));
        }
        let value = self.recompute_value(inst)?;
        if (value - self.value).abs() > 1e-8 * value.abs().max(1.0) {
            return Err(Error::Certificate(format!("stored value {} but objective is {value}", self.value)));
        }
        Ok(())
    }

    pub fn recompute_value(&self, inst: &ProblemInstance) -> Result<f64> {
        let tail: f64 = self.gamma.iter().zip(&self.costs).map(|(g, c)| g * c).sum();
        Ok(base_value(inst, &self.lambda, &self.mu)? + tail)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Solves `min phi_S + 4 phi_T + sum gamma_i costs_i` over the semidefinite
/// constraint built from the columns of `g`, then repairs and verifies.
pub fn certify_weighted(
    inst: &ProblemInstance,
    g: &ContrastMatrix,
    costs: &[f64],
    threshold: f64,
    kind: BoundKind,
    opts: &SolverOptions,
) -> Result<RiskCertificate> {
    if g.m() != inst.m() {
        return Err(Error::dims("contrast rows", inst.m(), g.m()));
    }
    if costs.len() != g.ncols() {
        return Err(Error::dims("column costs", g.ncols(), costs.len()));
    }
    if costs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(Error::invalid("column costs must be finite and nonnegative"));
    }
    let ag = inst.a.transpose() * g.matrix();
    let norms: Vec<f64> = (0..ag.ncols()).map(|j| ag.column(j).norm()).collect();
    let top = norms.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..g.ncols()).filter(|&j| top > 0.0 && norms[j] > NEGLIGIBLE_COLUMN * top).collect();

    let mut prog = ConicProgram::new();
    let mut lmi = RiskLmi::new(&mut prog, inst)?;
    let gamma = prog.nonneg_vector("gamma", active.len());
    let mut objective = lmi.objective.clone();
    for (slot, &j) in active.iter().enumerate() {
        let a = ag.column(j).into_owned();
        lmi.add_rank_one(inst.q(), &a, &gamma.at(slot));
        objective.add_term(gamma.offset + slot, costs[j]);
    }
    prog.lmi("risk", lmi.block.clone())?;
    prog.minimize(objective)?;
    let r = conic::solve(&prog, opts)?.require_usable("risk certificate", 1e-6)?;

    let mut full_gamma = vec![0.0; g.ncols()];
    for (slot, &j) in active.iter().enumerate() {
        full_gamma[j] = r.x[gamma.offset + slot].max(0.0);
    }
    certificate_from(inst, g, r.vector(&lmi.lambda), r.vector(&lmi.mu), full_gamma, costs.to_vec(), threshold, kind)
}

/// Builds, repairs and verifies a certificate from candidate multipliers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn certificate_from(
    inst: &ProblemInstance,
    g: &ContrastMatrix,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    gamma: Vec<f64>,
    costs: Vec<f64>,
    threshold: f64,
    kind: BoundKind,
) -> Result<RiskCertificate> {
    let gamma: Vec<f64> = gamma.into_iter().map(|v| v.max(0.0)).collect();
    let extra = weighted_gram(inst, g, &gamma);
    let (lambda, mu, low) = repair(inst, lambda, mu, &extra)?;
    let mut cert = RiskCertificate {
        kind,
        instance_hash: inst.hash(),
        contrast_hash: contrast_hash(g),
        roles: g.roles().to_vec(),
        lambda,
        mu,
        gamma,
        costs,
        threshold,
        value: 0.0,
        lmi_residual: low,
    };
    cert.value = cert.recompute_value(inst)?;
    cert.verify(inst, g)?;
    Ok(cert)
}

/// Risk bound for a bounded nuisance model, with uniform column cost
/// `4 psi[G]^2`, `psi[G] = max_i pi(g_i) + varkappa n[G]`.
pub fn certify_bounded(inst: &ProblemInstance, g: &ContrastMatrix, opts: &SolverOptions) -> Result<RiskCertificate> {
    if !inst.nuisance.is_bounded() {
        return Err(Error::invalid("bounded certification needs a bounded nuisance model"));
    }
    if g.is_empty() {
        return Err(Error::invalid("contrast has no columns"));
    }
    let kappa = varkappa(inst.sigma, inst.epsilon, g.threshold_count())?;
    let pis: Vec<f64> = (0..g.ncols())
        .into_par_iter()
        .map(|j| nuisance_seminorm(&inst.nuisance, &inst.n, g.col(j).as_slice(), opts))
        .collect::<Result<_>>()?;
    let psi = pis.iter().cloned().fold(0.0, f64::max) + kappa * g.max_col_norm();
    let costs = vec![4.0 * psi * psi; g.ncols()];
    certify_weighted(inst, g, &costs, kappa, BoundKind::Bounded, opts)
}

/// `max_{x in X} |c^T x|`, closed form when available.
fn max_abs_over_signal(inst: &ProblemInstance, c: &[f64], opts: &SolverOptions) -> Result<f64> {
    Ok(inst.x.max_linear(c, opts)?.0.max(0.0))
}

/// Per-column pieces of the recovery-radius bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RhoH {
    pub value: f64,
    /// `max_{x in X} |h_k^T A x|` per column.
    pub inner: Vec<f64>,
}

/// `rho_H = (1 - 2 kappa)^{-1} max_k [2 kbar ||h_k|| + 2 max_{x in X} |h_k^T A x|]`.
///
/// `kappa = 0` is accepted when `N^T H = I` holds exactly.
pub fn rho_h(
    inst: &ProblemInstance,
    h: &ContrastMatrix,
    kappa: f64,
    kbar: f64,
    opts: &SolverOptions,
) -> Result<RhoH> {
    let s = inst.nuisance.sparsity()?;
    if kappa == 0.0 {
        let gap = admissibility_gap(h.matrix(), &inst.n)?;
        if gap > 1e-12 {
            return Err(Error::NotAdmissible { max_entry: gap, limit: 0.0 });
        }
    } else {
        h_set_check(h.matrix(), &inst.n, s, kappa)?;
    }
    let ah = inst.a.transpose() * h.matrix();
    let inner: Vec<f64> = (0..h.ncols())
        .into_par_iter()
        .map(|k| max_abs_over_signal(inst, ah.column(k).as_slice(), opts))
        .collect::<Result<_>>()?;
    let worst = (0..h.ncols())
        .map(|k| 2.0 * kbar * h.matrix().column(k).norm() + 2.0 * inner[k])
        .fold(0.0, f64::max);
    Ok(RhoH { value: worst / (1.0 - 2.0 * kappa), inner })
}

/// Column bound `2 kbar ||g|| + rho_H ||N^T g||_{2s,1}`.
pub fn psi_h_column(inst: &ProblemInstance, g: &DVector<f64>, rho: f64, kbar: f64, s: usize) -> f64 {
    let ng = inst.n.transpose() * g;
    2.0 * kbar * g.norm() + rho * norm_s1(ng.as_slice(), 2 * s)
}

/// Risk bound for sparse nuisance with an admissible `(H, kappa)`.
pub fn certify_sparse(
    inst: &ProblemInstance,
    g: &ContrastMatrix,
    h: &ContrastMatrix,
    kappa: f64,
    kbar: f64,
    opts: &SolverOptions,
) -> Result<RiskCertificate> {
    let s = inst.nuisance.sparsity()?;
    if g.is_empty() {
        return Err(Error::invalid("contrast has no columns"));
    }
    let rho = rho_h(inst, h, kappa, kbar, opts)?.value;
    let psi = (0..g.ncols())
        .map(|j| psi_h_column(inst, &g.col(j), rho, kbar, s))
        .fold(0.0, f64::max);
    let costs = vec![psi * psi; g.ncols()];
    certify_weighted(inst, g, &costs, kbar, BoundKind::Sparse, opts)
}

/// Bounds on the nuisance recovery error that hold on the confidence set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseAux {
    pub s: usize,
    pub kbar: f64,
    pub opt2: f64,
    pub opt_inf: f64,
    /// `min(opt2, sqrt(2s) opt_inf)`.
    pub varrho2: f64,
    pub opt2_per_index: Vec<f64>,
    pub opt_inf_per_index: Vec<f64>,
}

/// Common constraints of the two per-index programs; returns `w`.
fn recovery_feasible_set(
    prog: &mut ConicProgram,
    inst: &ProblemInstance,
    nh: &DMatrix<f64>,
    ah: &DMatrix<f64>,
    rhs: &[f64],
    i: usize,
) -> Result<VecVar> {
    let v = prog.vector("v", inst.p());
    let w = prog.vector("w", inst.n_dim());
    inst.x.constrain_member(prog, &v.exprs(), 2.0)?;
    for j in 0..w.len {
        if j != i {
            prog.abs_le("w inf", w.at(j), w.at(i))?;
        }
    }
    for k in 0..nh.ncols() {
        let e = w.dot(nh.column(k).as_slice()) + v.dot(ah.column(k).as_slice());
        prog.abs_le("contrast", e, LinExpr::constant(rhs[k]))?;
    }
    Ok(w)
}

/// Solves the per-index programs bounding `||nu_hat - nu||` in the
/// `inf`- and 2-norms on the confidence set.
pub fn opt_programs(inst: &ProblemInstance, h: &ContrastMatrix, kbar: f64, opts: &SolverOptions) -> Result<SparseAux> {
    let s = inst.nuisance.sparsity()?;
    let nh = inst.n.transpose() * h.matrix();
    let ah = inst.a.transpose() * h.matrix();
    let rhs: Vec<f64> = h.col_norms().iter().map(|c| 2.0 * kbar * c).collect();
    let two_s = 2.0 * s as f64;
    let results: Vec<(f64, f64)> = (0..inst.n_dim())
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let mut pinf = ConicProgram::new();
            let w = recovery_feasible_set(&mut pinf, inst, &nh, &ah, &rhs, i)?;
            pinf.norm_le("w l1", w.exprs(), 1.0, w.at(i).scaled(two_s))?;
            pinf.maximize(w.at(i))?;
            let rinf = conic::solve(&pinf, opts)?.require_optimal("nuisance sup-norm bound")?;

            let mut p2 = ConicProgram::new();
            let w = recovery_feasible_set(&mut p2, inst, &nh, &ah, &rhs, i)?;
            let t = p2.scalar("t");
            let r = p2.scalar("r");
            p2.norm_le("w l1", w.exprs(), 1.0, t.expr())?;
            p2.le("t cap", t.expr(), w.at(i).scaled(two_s))?;
            p2.rsoc("geo mean", w.at(i), t.expr(), vec![r.expr().scaled(2f64.sqrt())])?;
            p2.maximize(r.expr())?;
            let r2 = conic::solve(&p2, opts)?.require_optimal("nuisance 2-norm bound")?;
            Ok((r2.objective.max(0.0), rinf.objective.max(0.0)))
        })
        .collect::<Result<_>>()?;
    let opt2_per_index: Vec<f64> = results.iter().map(|r| r.0).collect();
    let opt_inf_per_index: Vec<f64> = results.iter().map(|r| r.1).collect();
    let opt2 = opt2_per_index.iter().cloned().fold(0.0, f64::max);
    let opt_inf = opt_inf_per_index.iter().cloned().fold(0.0, f64::max);
    Ok(SparseAux {
        s,
        kbar,
        opt2,
        opt_inf,
        varrho2: opt2.min(two_s.sqrt() * opt_inf),
        opt2_per_index,
        opt_inf_per_index,
    })
}

/// `min { ||u||_1 Opt_inf + ||v||_2 Opt_2 + 2s ||w||_inf Opt_inf : u + v + w = y }`
/// with `y = N^T d`.
pub fn pi_bar(d: &DVector<f64>, n: &DMatrix<f64>, aux: &SparseAux, opts: &SolverOptions) -> Result<f64> {
    if d.len() != n.nrows() {
        return Err(Error::dims("pi_bar argument", n.nrows(), d.len()));
    }
    let y = n.transpose() * d;
    pi_bar_of(y.as_slice(), aux, opts)
}

/// `pi_bar` evaluated directly at `y = N^T d`.
pub fn pi_bar_of(y: &[f64], aux: &SparseAux, opts: &SolverOptions) -> Result<f64> {
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let k = y.len();
    let c1 = aux.opt_inf;
    let c2 = aux.opt2;
    let c3 = 2.0 * aux.s as f64 * aux.opt_inf;
    // Work with y / scale for conditioning.
    let mut prog = ConicProgram::new();
    let u = prog.vector("u", k);
    let v = prog.vector("v", k);
    let (a, b, c) = (prog.scalar("a"), prog.scalar("b"), prog.scalar("c"));
    prog.norm_le("u l1", u.exprs(), 1.0, a.expr())?;
    prog.norm_le("v l2", v.exprs(), 2.0, b.expr())?;
    let w: Vec<LinExpr> = (0..k).map(|j| LinExpr::constant(y[j] / scale) - u.at(j) - v.at(j)).collect();
    prog.norm_le("w linf", w, f64::INFINITY, c.expr())?;
    prog.minimize(a.expr().scaled(c1) + b.expr().scaled(c2) + c.expr().scaled(c3))?;
    let r = conic::solve(&prog, opts)?.require_usable("pi_bar", 1e-6)?;
    // Any feasible point gives an upper bound; recompute it exactly.
    let uu = r.vector(&u);
    let vv = r.vector(&v);
    let l1: f64 = uu.iter().map(|x| x.abs()).sum();
    let l2: f64 = vv.iter().map(|x| x * x).sum::<f64>().sqrt();
    let linf = (0..k).map(|j| (y[j] / scale - uu[j] - vv[j]).abs()).fold(0.0, f64::max);
    let exact = c1 * l1 + c2 * l2 + c3 * linf;
    // Pure splits are always feasible; keep the bound no worse than them.
    let ynorm1: f64 = y.iter().map(|x| x.abs()).sum::<f64>() / scale;
    let ynorm2: f64 = y.iter().map(|x| x * x).sum::<f64>().sqrt() / scale;
    Ok(scale * exact.min(c1 * ynorm1).min(c2 * ynorm2).min(c3))
}

/// Per-column bound `pi_bar(N^T d) + 2 kbar ||d||`.
pub fn psi_h_alt(d: &DVector<f64>, n: &DMatrix<f64>, aux: &SparseAux, opts: &SolverOptions) -> Result<f64> {
    Ok(pi_bar(d, n, aux, opts)? + 2.0 * aux.kbar * d.norm())
}

/// Risk bound with per-column costs `psi_H(d_i)^2` for an aggregated contrast.
pub fn certify_sparse_alt(
    inst: &ProblemInstance,
    d: &ContrastMatrix,
    aux: &SparseAux,
    opts: &SolverOptions,
) -> Result<RiskCertificate> {
    if !matches!(inst.nuisance, NuisanceSpec::Sparse { .. }) {
        return Err(Error::invalid("alternative certification needs a sparse nuisance model"));
    }
    if d.is_empty() {
        return Err(Error::invalid("contrast has no columns"));
    }
    let costs: Vec<f64> = (0..d.ncols())
        .into_par_iter()
        .map(|j| psi_h_alt(&d.col(j), &inst.n, aux, opts).map(|v| v * v))
        .collect::<Result<_>>()?;
    certify_weighted(inst, d, &costs, aux.kbar, BoundKind::SparseAlt, opts)
}

/// The smaller of two bounds for the same instance, tagged with its branch.
pub fn certify_aggregated(a: &RiskCertificate, b: &RiskCertificate) -> Result<RiskCertificate> {
    if a.instance_hash != b.instance_hash {
        return Err(Error::Certificate("certificates refer to different instances".into()));
    }
    let (branch, win) = if b.value < a.value { (1, b) } else { (0, a) };
    let inner = match &win.kind {
        BoundKind::Aggregated { inner, .. } => inner.clone(),
        k => Box::new(k.clone()),
    };
    let mut out = win.clone();
    out.kind = BoundKind::Aggregated { branch, inner };
    Ok(out)
}

/// `||w||` for the error norm, i.e. `max_{v in B*} v^T w`.
pub fn error_norm(inst: &ProblemInstance, w: &[f64], opts: &SolverOptions) -> Result<f64> {
    Ok(inst.bstar.max_linear(w, opts)?.0.max(0.0))
}
