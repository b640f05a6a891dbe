use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linalg::{min_eigenvalue, smat, spectral_norm};
use super::program::{Cone, ConicProgram, ScalarVar, Sense, SymVar, VecVar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Feasibility and duality-gap tolerance handed to the backend.
    pub tol: f64,
    /// Re-verification slack relative to `tol`.
    pub verify_factor: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, verify_factor: 10.0, max_iter: 200, verbose: false }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Raw backend status, for diagnostics.
    pub backend_status: String,
    /// Primal point (all blocks concatenated); empty when the backend
    /// produced nothing usable.
    pub x: Vec<f64>,
    /// Objective in the program's own sense.
    pub objective: f64,
    /// Largest normalized equality violation.
    pub eq_residual: f64,
    /// Smallest normalized cone margin (negative means violated).
    pub cone_margin: f64,
    pub iterations: u32,
    pub solve_seconds: f64,
}

impl SolveResult {
    pub fn scalar(&self, v: ScalarVar) -> f64 {
        self.x[v.0]
    }

    pub fn vector(&self, v: &VecVar) -> Vec<f64> {
        self.x[v.offset..v.offset + v.len].to_vec()
    }

    pub fn matrix(&self, v: &SymVar) -> DMatrix<f64> {
        let len = v.n * (v.n + 1) / 2;
        smat(&self.x[v.offset..v.offset + len]).expect("triangular block")
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Errors unless the status is optimal.
    pub fn require_optimal(self, context: &str) -> Result<Self> {
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Unbounded => Err(Error::Unbounded { context: context.to_string() }),
            status => Err(Error::Solver { context: context.to_string(), status }),
        }
    }

    /// Accepts an optimal result, or a near-optimal one whose primal point
    /// still passes re-verification at `slack`. Used by callers that repair
    /// and re-check their own certificates.
    pub fn require_usable(self, context: &str, slack: f64) -> Result<Self> {
        let usable = self.status == SolveStatus::NumericalFailure
            && !self.x.is_empty()
            && self.eq_residual <= slack
            && self.cone_margin >= -slack;
        if usable {
            log::debug!("{context}: accepting near-optimal point ({})", self.backend_status);
            return Ok(self);
        }
        self.require_optimal(context)
    }
}

/// Independent check of a primal point: `(max eq residual, min cone margin)`,
/// each normalized by the size of the quantities involved.
pub fn verify_point(program: &ConicProgram, x: &[f64]) -> (f64, f64) {
    let mut eq_res: f64 = 0.0;
    let mut margin = f64::INFINITY;
    for c in program.constraints() {
        let vals: Vec<f64> = c.rows.iter().map(|r| r.eval(x)).collect();
        let mags: Vec<f64> = c.rows.iter().map(|r| r.magnitude(x)).collect();
        let scale = mags.iter().copied().fold(1.0, f64::max);
        match c.cone {
            Cone::Zero(_) => {
                for (v, m) in vals.iter().zip(&mags) {
                    eq_res = eq_res.max(v.abs() / m);
                }
            }
            Cone::NonNeg(_) => {
                for (v, m) in vals.iter().zip(&mags) {
                    margin = margin.min(v / m);
                }
            }
            Cone::Soc(_) => {
                let norm = vals[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                margin = margin.min((vals[0] - norm) / scale);
            }
            Cone::RotatedSoc(_) => {
                let (u, v) = (vals[0], vals[1]);
                let w2 = vals[2..].iter().map(|v| v * v).sum::<f64>();
                // Distance-like margin: sqrt form of 2uv - ||w||^2 in SOC coordinates.
                let a = (u + v) / std::f64::consts::SQRT_2;
                let b = (u - v) / std::f64::consts::SQRT_2;
                margin = margin.min((a - (b * b + w2).sqrt()) / scale);
            }
            Cone::Psd(_) => {
                let m = smat(&vals).expect("psd rows are triangular");
                let lam = min_eigenvalue(&m);
                margin = margin.min(lam / (1.0 + spectral_norm(&m)).max(scale));
            }
            Cone::Power(a) => {
                let (px, py, pz) = (vals[0], vals[1], vals[2]);
                let g = if px >= 0.0 && py >= 0.0 { px.powf(a) * py.powf(1.0 - a) } else { f64::NEG_INFINITY };
                let m = px.min(py).min(g - pz.abs());
                margin = margin.min(m / scale);
            }
        }
    }
    if margin == f64::INFINITY {
        margin = 0.0;
    }
    (eq_res, margin)
}

/// Solves the program with the interior-point backend and re-verifies the
/// returned primal point independently.
pub fn solve(program: &ConicProgram, opts: &SolverOptions) -> Result<SolveResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let n = program.num_vars();
    let (obj, sense) = program.objective();
    let sign = match sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut q = vec![0.0; n];
    for &(i, c) in &obj.terms {
        q[i] += sign * c;
    }

    // Row layout: a constraint "rows in K" becomes A x + s = b, s in K with
    // A = -coef, b = constant.
    let mut ii = Vec::new();
    let mut jj = Vec::new();
    let mut vv = Vec::new();
    let mut b = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut push_row = |coeffs: &[(usize, f64)], constant: f64, row: &mut usize, scale: f64| {
        for &(j, c) in coeffs {
            ii.push(*row);
            jj.push(j);
            vv.push(-c * scale);
        }
        b.push(constant * scale);
        *row += 1;
    };
    let mut row = 0usize;
    for c in program.constraints() {
        match c.cone {
            Cone::RotatedSoc(dim) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let (u, v) = (&c.rows[0], &c.rows[1]);
                let plus = (u.clone() + v.clone()).compact();
                let minus = (u.clone() - v.clone()).compact();
                push_row(&plus.terms, plus.constant, &mut row, s);
                push_row(&minus.terms, minus.constant, &mut row, s);
                for r in &c.rows[2..] {
                    push_row(&r.terms, r.constant, &mut row, 1.0);
                }
                cones.push(SupportedConeT::SecondOrderConeT(dim));
            }
            cone => {
                for r in &c.rows {
                    push_row(&r.terms, r.constant, &mut row, 1.0);
                }
                let k = match cone {
                    Cone::Zero(d) => SupportedConeT::ZeroConeT(d),
                    Cone::NonNeg(d) => SupportedConeT::NonnegativeConeT(d),
                    Cone::Soc(d) => SupportedConeT::SecondOrderConeT(d),
                    Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
                    Cone::Power(a) => SupportedConeT::PowerConeT(a),
                    Cone::RotatedSoc(_) => unreachable!(),
                };
                cones.push(k);
            }
        }
    }
    let cones = merge_cones(cones);

    log::trace!("conic solve: {n} variables, {row} rows, {} nonzeros", vv.len());
    let a = CscMatrix::new_from_triplets(row, n, ii, jj, vv);
    let p = CscMatrix::<f64>::zeros((n, n));
    let settings = DefaultSettingsBuilder::default()
        .verbose(opts.verbose)
        .tol_feas(opts.tol)
        .tol_gap_abs(opts.tol)
        .tol_gap_rel(opts.tol)
        .max_iter(opts.max_iter)
        .build()
        .map_err(|e| Error::invalid(format!("solver settings: {e}")))?;
    let start = Instant::now();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::invalid(format!("solver setup: {e:?}")))?;
    solver.solve();
    let elapsed = start.elapsed().as_secs_f64();
    let sol = &solver.solution;

    let backend_status = format!("{:?}", sol.status);
    let x_ok = sol.x.len() == n && sol.x.iter().all(|v| v.is_finite());
    let x = if x_ok { sol.x.clone() } else { Vec::new() };
    let (eq_residual, cone_margin) = if x_ok { verify_point(program, &x) } else { (f64::INFINITY, f64::NEG_INFINITY) };
    let objective = if x_ok { obj.eval(&x) } else { f64::NAN };
    let slack = opts.verify_factor * opts.tol;
    let verified = x_ok && eq_residual <= slack && cone_margin >= -slack;

    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved if verified => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    if status == SolveStatus::NumericalFailure {
        log::debug!(
            "conic solve: backend {backend_status}, eq residual {eq_residual:.2e}, cone margin {cone_margin:.2e}"
        );
    }
    Ok(SolveResult {
        status,
        backend_status,
        x,
        objective,
        eq_residual,
        cone_margin,
        iterations: sol.iterations,
        solve_seconds: elapsed,
    })
}

/// Merges adjacent zero / nonnegative cones, which the backend prefers.
fn merge_cones(cones: Vec<SupportedConeT<f64>>) -> Vec<SupportedConeT<f64>> {
    let mut out: Vec<SupportedConeT<f64>> = Vec::with_capacity(cones.len());
    for c in cones {
        match (out.last_mut(), &c) {
            (Some(SupportedConeT::ZeroConeT(a)), SupportedConeT::ZeroConeT(b)) => *a += *b,
            (Some(SupportedConeT::NonnegativeConeT(a)), SupportedConeT::NonnegativeConeT(b)) => *a += *b,
            _ => out.push(c),
        }
    }
    out
}
