//! Polyhedral estimates: the recovery programs run on an observation once a
//! contrast is fixed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{self, ConicProgram, LinExpr, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{varkappa, ContrastMatrix, NuisanceSpec, ProblemInstance};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryOutput {
    pub x_hat: Vec<f64>,
    /// Zero when the nuisance is internal to the program (co-ellitopic case).
    pub nu_hat: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub feasible: bool,
    pub objective: f64,
}

impl RecoveryOutput {
    fn zero(inst: &ProblemInstance) -> Self {
        RecoveryOutput {
            x_hat: vec![0.0; inst.p()],
            nu_hat: vec![0.0; inst.n_dim()],
            w_hat: vec![0.0; inst.q()],
            feasible: false,
            objective: 0.0,
        }
    }

    fn from_parts(inst: &ProblemInstance, x: Vec<f64>, nu: Vec<f64>, objective: f64) -> Self {
        let w = &inst.b * DVector::from_column_slice(&x);
        RecoveryOutput { x_hat: x, nu_hat: nu, w_hat: w.as_slice().to_vec(), feasible: true, objective }
    }
}

fn check_observation(inst: &ProblemInstance, g: &ContrastMatrix, omega: &DVector<f64>) -> Result<()> {
    if omega.len() != inst.m() {
        return Err(Error::dims("observation length", inst.m(), omega.len()));
    }
    if g.m() != inst.m() {
        return Err(Error::dims("contrast rows", inst.m(), g.m()));
    }
    Ok(())
}

/// `c_i^T (A x + eta - omega)` for every column, with `eta` given as expressions.
fn residual_rows(
    g: &DMatrix<f64>,
    a: &DMatrix<f64>,
    x: &[LinExpr],
    eta: &[LinExpr],
    omega: &DVector<f64>,
) -> Vec<LinExpr> {
    let ga = g.transpose() * a;
    let gw = g.transpose() * omega;
    let gt = g.transpose();
    (0..g.ncols())
        .map(|i| {
            let mut e = LinExpr::constant(-gw[i]);
            for (j, xj) in x.iter().enumerate() {
                e.add_scaled(xj, ga[(i, j)]);
            }
            for (k, ek) in eta.iter().enumerate() {
                if gt[(i, k)] != 0.0 {
                    e.add_scaled(ek, gt[(i, k)]);
                }
            }
            e
        })
        .collect()
}

fn linear_image(m: &DMatrix<f64>, v: &[LinExpr]) -> Vec<LinExpr> {
    (0..m.nrows())
        .map(|r| {
            let mut e = LinExpr::zero();
            for (c, vc) in v.iter().enumerate() {
                if m[(r, c)] != 0.0 {
                    e.add_scaled(vc, m[(r, c)]);
                }
            }
            e
        })
        .collect()
}

/// `min_{x in X, nu in N} ||G^T (A x + N nu - omega)||_inf`.
pub fn estimate_bounded(
    inst: &ProblemInstance,
    g: &ContrastMatrix,
    omega: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<RecoveryOutput> {
    check_observation(inst, g, omega)?;
    if g.is_empty() {
        let mut out = RecoveryOutput::zero(inst);
        out.feasible = true;
        return Ok(out);
    }
    let mut prog = ConicProgram::new();
    let x = prog.vector("x", inst.p());
    inst.x.constrain_member(&mut prog, &x.exprs(), 1.0)?;
    let mut nu = None;
    let eta = match &inst.nuisance {
        NuisanceSpec::None => vec![LinExpr::zero(); inst.m()],
        NuisanceSpec::Ellitopic { set } => {
            let v = prog.vector("nu", inst.n_dim());
            set.constrain_member(&mut prog, &v.exprs(), 1.0)?;
            nu = Some(v);
            linear_image(&inst.n, &v.exprs())
        }
        NuisanceSpec::CoEllitopic { nstar } => {
            let e = prog.vector("eta", inst.m());
            nstar.constrain_polar(&mut prog, &e.exprs(), 1.0)?;
            e.exprs()
        }
        NuisanceSpec::Sparse { .. } => return Err(Error::invalid("bounded estimate needs a bounded nuisance")),
    };
    let t = prog.scalar("t");
    for r in residual_rows(g.matrix(), &inst.a, &x.exprs(), &eta, omega) {
        prog.abs_le("contrast residual", r, t.expr())?;
    }
    prog.minimize(t.expr())?;
    let r = conic::solve(&prog, opts)?.require_optimal("bounded recovery")?;
    let nu_hat = nu.map(|v| r.vector(&v)).unwrap_or_else(|| vec![0.0; inst.n_dim()]);
    Ok(RecoveryOutput::from_parts(inst, r.vector(&x), nu_hat, r.objective))
}

/// `min ||nu||_1` over `x in X` and `|c^T (N nu + A x - omega)| <= kbar ||c||`
/// for every column `c`. Returns zeros when the program is infeasible.
pub fn estimate_l1(
    inst: &ProblemInstance,
    contrast: &ContrastMatrix,
    kbar: f64,
    omega: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<RecoveryOutput> {
    inst.nuisance.sparsity()?;
    check_observation(inst, contrast, omega)?;
    let mut prog = ConicProgram::new();
    let x = prog.vector("x", inst.p());
    inst.x.constrain_member(&mut prog, &x.exprs(), 1.0)?;
    let nu = prog.vector("nu", inst.n_dim());
    let u = prog.vector("abs nu", inst.n_dim());
    for k in 0..inst.n_dim() {
        prog.abs_le("abs nu", nu.at(k), u.at(k))?;
    }
    let eta = linear_image(&inst.n, &nu.exprs());
    let norms = contrast.col_norms();
    for (r, norm) in residual_rows(contrast.matrix(), &inst.a, &x.exprs(), &eta, omega).into_iter().zip(norms) {
        if norm > 0.0 {
            prog.abs_le("contrast residual", r, LinExpr::constant(kbar * norm))?;
        }
    }
    prog.minimize(LinExpr::sum(&u.exprs()))?;
    let r = conic::solve(&prog, opts)?;
    if r.status == SolveStatus::Infeasible {
        return Ok(RecoveryOutput::zero(inst));
    }
    let r = r.require_optimal("sparse recovery")?;
    Ok(RecoveryOutput::from_parts(inst, r.vector(&x), r.vector(&nu), r.objective))
}

/// Estimate with contrast `[H, G]` at the threshold for `n + 2m` columns.
pub fn estimate_sparse(
    inst: &ProblemInstance,
    g: &ContrastMatrix,
    h: &ContrastMatrix,
    omega: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<RecoveryOutput> {
    let kbar = varkappa(inst.sigma, inst.epsilon, inst.n_dim() + 2 * inst.m())?;
    estimate_l1(inst, &ContrastMatrix::hstack(&[h, g])?, kbar, omega, opts)
}

/// Estimate with contrast `[H_bar, G_bar]` at the threshold for `M + 2m` columns.
pub fn estimate_alternative(
    inst: &ProblemInstance,
    g: &ContrastMatrix,
    hbar: &ContrastMatrix,
    omega: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<RecoveryOutput> {
    let kbar = varkappa(inst.sigma, inst.epsilon, hbar.ncols() + 2 * inst.m())?;
    estimate_l1(inst, &ContrastMatrix::hstack(&[hbar, g])?, kbar, omega, opts)
}

/// Estimate with every block of an aggregated contrast, at the threshold for
/// its recorded column count.
pub fn estimate_aggregated(
    inst: &ProblemInstance,
    combined: &ContrastMatrix,
    omega: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<RecoveryOutput> {
    let kbar = varkappa(inst.sigma, inst.epsilon, combined.threshold_count())?;
    estimate_l1(inst, combined, kbar, omega, opts)
}
