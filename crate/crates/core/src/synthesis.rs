//! Contrast design: convex programs over aggregated matrices `Theta`, and the
//! conversion of their solutions into contrast columns.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{self, certificate_from, rho_h, BoundKind, RiskCertificate, RiskLmi, SparseAux};
use crate::conic::linalg::{range_basis, sym_eigen};
use crate::conic::{self, inv_sqrt, ConicProgram, LinExpr, SolveResult, SolveStatus, SolverOptions, SymExpr, SymVar};
use crate::ellitope::{cw_ellitope, BasicEllitope, TSet};
use crate::error::{Error, Result};
use crate::model::{varkappa, ColumnRole, ContrastMatrix, NuisanceSpec, ProblemInstance};
use crate::sparse_l1::{h_set_check, norm_s1};

/// Which subspace the `Theta` variables live in.
///
/// `Range` restricts `Theta` to the column space of the matrix it is
/// multiplied with; this loses nothing when `Theta` only enters through that
/// product and its trace, and is a (valid) restriction otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaLift {
    Full,
    Range,
    /// `Full` up to `m = 64`, `Range` above.
    Auto,
}

impl ThetaLift {
    fn full(self, m: usize) -> bool {
        match self {
            ThetaLift::Full => true,
            ThetaLift::Range => false,
            ThetaLift::Auto => m <= 64,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SynthesisOptions {
    pub solver: SolverOptions,
    pub lift: ThetaLift,
    /// Seed for the randomized decomposition.
    pub seed: u64,
    pub max_attempts: usize,
    /// Eigen-directions with weight at most `rank_tol` times the largest are dropped.
    pub rank_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            solver: SolverOptions::default(),
            lift: ThetaLift::Auto,
            seed: 0,
            max_attempts: 64,
            rank_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub status: SolveStatus,
    pub backend_status: String,
    pub iterations: u32,
    pub eq_residual: f64,
    pub cone_margin: f64,
    pub solve_seconds: f64,
}

impl From<&SolveResult> for SolveDiagnostics {
    fn from(r: &SolveResult) -> Self {
        SolveDiagnostics {
            status: r.status,
            backend_status: r.backend_status.clone(),
            iterations: r.iterations,
            eq_residual: r.eq_residual,
            cone_margin: r.cone_margin,
            solve_seconds: r.solve_seconds,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum DecompositionMethod {
    Eigen,
    Mixing { attempt: usize },
}

/// `Theta = sum_i weights[i] w_i w_i^T` with every `w_i` in the target ellitope.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub weights: Vec<f64>,
    /// The vectors `w_i` as columns.
    #[serde(with = "crate::serial::matrix")]
    pub vectors: DMatrix<f64>,
    pub claimed_budget: f64,
    pub weight_sum: f64,
    /// `||Theta - sum gamma w w^T||_F / (1 + ||Theta||_F)`.
    pub reconstruction_error: f64,
    pub method: DecompositionMethod,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub instance_hash: String,
    /// Full contrast of the resulting estimate, with role tags.
    pub contrast: ContrastMatrix,
    /// Bound certified for `contrast`.
    pub certificate: RiskCertificate,
    /// Objective of the design program at the (repaired) solution; never
    /// below `certificate.value` beyond solver tolerance.
    pub design_value: f64,
    /// Optimal value reported by the solver for the design program.
    pub optimum: f64,
    pub diagnostics: SolveDiagnostics,
    pub decomposition: Option<DecompositionResult>,
    /// The `Theta` blocks of the solution.
    #[serde(with = "crate::serial::matrix_vec")]
    pub theta: Vec<DMatrix<f64>>,
    pub rho: f64,
    /// Confidence threshold the design assumed.
    pub threshold: f64,
}

/// The factor `2 sqrt(2) ln(4 m^2 J)` of the decomposition budget.
pub fn decomposition_factor(m: usize, j: usize) -> f64 {
    2.0 * 2f64.sqrt() * (4.0 * (m * m) as f64 * j as f64).ln()
}

/// A PSD variable `K` standing for `Theta = U K U^T` with orthonormal `U`.
struct LiftedTheta {
    basis: DMatrix<f64>,
    var: SymVar,
}

impl LiftedTheta {
    fn new(prog: &mut ConicProgram, name: &str, basis: DMatrix<f64>) -> Self {
        let var = prog.psd_var(name, basis.ncols());
        LiftedTheta { basis, var }
    }

    /// `F^T Theta F` for an `m x k` matrix `F`.
    fn congruence(&self, f: &DMatrix<f64>) -> SymExpr {
        self.var.congruence(&(self.basis.transpose() * f))
    }

    fn trace(&self) -> LinExpr {
        self.var.trace()
    }

    /// `c^T Theta c`.
    fn quad(&self, c: &DVector<f64>) -> LinExpr {
        let u = self.basis.transpose() * c;
        self.var.trace_with(&(&u * u.transpose()))
    }

    fn trace_with(&self, c: &DMatrix<f64>) -> LinExpr {
        self.var.trace_with(&(self.basis.transpose() * c * &self.basis))
    }

    fn value(&self, r: &SolveResult) -> DMatrix<f64> {
        if self.basis.ncols() == 0 {
            return DMatrix::zeros(self.basis.nrows(), self.basis.nrows());
        }
        let k = clean_psd(&r.matrix(&self.var));
        let t = &self.basis * k * self.basis.transpose();
        (&t + t.transpose()) * 0.5
    }
}

/// Solver noise floor for eigenvalues of a `Theta` block.
const THETA_FLOOR: f64 = 1e-9;

/// Projection onto the PSD cone with eigenvalues below the noise floor removed.
fn clean_psd(k: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(k);
    let mut out = DMatrix::zeros(k.nrows(), k.ncols());
    for (i, &v) in values.iter().enumerate() {
        if v > THETA_FLOOR {
            let c = vectors.column(i);
            out += c * c.transpose() * v;
        }
    }
    out
}

fn range_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    range_basis(m, 1e-10)
}

/// Eigen-directions of a PSD matrix with weight above `rank_tol * max`.
fn significant_eigen(theta: &DMatrix<f64>, rank_tol: f64) -> (Vec<f64>, DMatrix<f64>) {
    let (values, vectors) = sym_eigen(theta);
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..values.len()).filter(|&i| top > 0.0 && values[i] > rank_tol * top).collect();
    let mut vecs = DMatrix::zeros(theta.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        vecs.set_column(c, &vectors.column(i));
    }
    (keep.iter().map(|&i| values[i]).collect(), vecs)
}

/// Optimal contrast for the no-nuisance model with `count >= m` columns.
pub fn synth_no_nuisance(inst: &ProblemInstance, count: usize, opts: &SynthesisOptions) -> Result<SynthesisReport> {
    if !matches!(inst.nuisance, NuisanceSpec::None) {
        return Err(Error::invalid("no-nuisance synthesis needs the nuisance-free model"));
    }
    let m = inst.m();
    if count < m {
        return Err(Error::invalid(format!("column count {count} must be at least m = {m}")));
    }
    let kappa = varkappa(inst.sigma, inst.epsilon, count)?;
    let mut prog = ConicProgram::new();
    let mut lmi = RiskLmi::new(&mut prog, inst)?;
    // Theta only enters through A^T Theta A and its trace.
    let theta = LiftedTheta::new(&mut prog, "theta", range_of(&inst.a));
    lmi.block.add_sym_block(inst.q(), &theta.congruence(&inst.a));
    let objective = lmi.objective.clone() + theta.trace().scaled(4.0 * kappa * kappa);
    prog.lmi("risk", lmi.block.clone())?;
    prog.minimize(objective)?;
    let r = conic::solve(&prog, &opts.solver)?.require_usable("no-nuisance synthesis", 1e-6)?;
    let theta_star = theta.value(&r);

    let (values, vectors) = significant_eigen(&theta_star, opts.rank_tol);
    let cols = vectors / kappa;
    let gamma: Vec<f64> = values.iter().map(|v| v * kappa * kappa).collect();
    let mut g = ContrastMatrix::new(cols, ColumnRole::Plain);
    g.set_threshold_count(count);
    let costs = vec![4.0; g.ncols()];
    let cert = certificate_from(
        inst,
        &g,
        r.vector(&lmi.lambda),
        r.vector(&lmi.mu),
        gamma,
        costs,
        kappa,
        BoundKind::Bounded,
    )?;
    let rho = kappa * kappa * theta_star.trace();
    Ok(SynthesisReport {
        instance_hash: inst.hash(),
        contrast: g,
        design_value: certify::base_value(inst, &cert.lambda, &cert.mu)? + 4.0 * rho,
        certificate: cert,
        optimum: r.objective,
        diagnostics: (&r).into(),
        decomposition: None,
        theta: vec![theta_star],
        rho,
        threshold: kappa,
    })
}

/// The nuisance-free instance over `X x N` with `A_bar = [A, N]`, `B_bar = [B, 0]`.
pub fn augment_ellitopic(inst: &ProblemInstance) -> Result<ProblemInstance> {
    let NuisanceSpec::Ellitopic { set } = &inst.nuisance else {
        return Err(Error::invalid("augmentation needs an ellitopic nuisance"));
    };
    let (m, p, k, q) = (inst.m(), inst.p(), inst.n_dim(), inst.q());
    let mut a = DMatrix::zeros(m, p + k);
    a.view_mut((0, 0), (m, p)).copy_from(&inst.a);
    a.view_mut((0, p), (m, k)).copy_from(&inst.n);
    let mut b = DMatrix::zeros(q, p + k);
    b.view_mut((0, 0), (q, p)).copy_from(&inst.b);
    ProblemInstance::new(
        a,
        b,
        DMatrix::zeros(m, 1),
        inst.x.direct_product(set),
        inst.bstar.clone(),
        NuisanceSpec::None,
        inst.sigma,
        inst.epsilon,
    )
}

/// Ellitopic nuisance: design on the augmented instance. The certificate
/// refers to [`augment_ellitopic`]`(inst)`.
pub fn synth_ellitopic_nuisance(inst: &ProblemInstance, opts: &SynthesisOptions) -> Result<SynthesisReport> {
    let aug = augment_ellitopic(inst)?;
    synth_no_nuisance(&aug, aug.m(), opts)
}

fn sylvester_hadamard(k: usize) -> DMatrix<f64> {
    let mut h = DMatrix::from_element(1, 1, 1.0);
    while h.nrows() < k {
        let n = h.nrows();
        let mut next = DMatrix::zeros(2 * n, 2 * n);
        next.view_mut((0, 0), (n, n)).copy_from(&h);
        next.view_mut((0, n), (n, n)).copy_from(&h);
        next.view_mut((n, 0), (n, n)).copy_from(&h);
        next.view_mut((n, n), (n, n)).copy_from(&(-&h));
        h = next;
    }
    h / (k as f64).sqrt()
}

/// Orthonormal DCT-II matrix of size `k`.
fn dct(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| {
        let c = if i == 0 { (1.0 / k as f64).sqrt() } else { (2.0 / k as f64).sqrt() };
        c * (std::f64::consts::PI * (j as f64 + 0.5) * i as f64 / k as f64).cos()
    })
}

/// Rescales candidate columns onto the boundary of `w` and collects weights.
fn normalize_candidates(cands: &DMatrix<f64>, w: &BasicEllitope) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let mut weights = Vec::new();
    let mut cols = Vec::new();
    for c in cands.column_iter() {
        let g = w.gauge(c.as_slice())?;
        if g > 0.0 && g.is_finite() {
            weights.push(g * g);
            cols.push(c.into_owned() / g);
        }
    }
    let m = cands.nrows();
    let mut out = DMatrix::zeros(m, cols.len());
    for (i, c) in cols.iter().enumerate() {
        out.set_column(i, c);
    }
    Ok((weights, out))
}

/// Smallest `rho` with `(Theta, rho)` in the cone over `w`:
/// the gauge of `(Tr(Theta R_j))_j` with respect to the parameter set.
pub fn cone_requirement(theta: &DMatrix<f64>, w: &BasicEllitope) -> f64 {
    let y: Vec<f64> = w.forms().iter().map(|r| r.component_mul(theta).sum().max(0.0)).collect();
    w.tset().gauge(&y)
}

/// Writes `Theta = sum_i gamma_i w_i w_i^T` with `w_i` in `w` and
/// `sum gamma_i <= 2 sqrt(2) ln(4 m^2 J) rho`, using at most `count` columns.
///
/// Candidates are the eigenvectors first, then sign-randomized Hadamard (or
/// DCT) mixtures of the scaled eigenvectors; each is rescaled by its gauge.
pub fn decompose_over_ellitope(
    theta: &DMatrix<f64>,
    rho: f64,
    w: &BasicEllitope,
    count: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<DecompositionResult> {
    let m = w.dim();
    if theta.shape() != (m, m) {
        return Err(Error::dims("decomposed matrix", m, theta.nrows()));
    }
    if count < m {
        return Err(Error::invalid(format!("column count {count} must be at least m = {m}")));
    }
    if !(rho >= 0.0) {
        return Err(Error::invalid("rho must be nonnegative"));
    }
    let scale = theta.norm();
    if !conic::psd_check(theta, 1e-7)? {
        return Err(Error::invalid("matrix to decompose is not PSD"));
    }
    let need = cone_requirement(theta, w);
    if need > rho * (1.0 + 1e-6) + 1e-9 * (1.0 + scale) {
        return Err(Error::invalid(format!("(Theta, rho) is outside the cone: needs rho >= {need:.6e}, got {rho:.6e}")));
    }
    let budget = decomposition_factor(m, w.num_forms()) * rho;
    let (values, vectors) = significant_eigen(theta, 1e-12);
    let r = values.len();
    if r == 0 {
        return Ok(DecompositionResult {
            weights: vec![],
            vectors: DMatrix::zeros(m, 0),
            claimed_budget: budget,
            weight_sum: 0.0,
            reconstruction_error: scale / (1.0 + scale),
            method: DecompositionMethod::Eigen,
        });
    }
    let root = &vectors * DMatrix::from_diagonal(&DVector::from_iterator(r, values.iter().map(|v| v.sqrt())));
    let finish = |weights: Vec<f64>, cols: DMatrix<f64>, method| {
        let mut recon = DMatrix::zeros(m, m);
        for (g, c) in weights.iter().zip(cols.column_iter()) {
            recon += c * c.transpose() * *g;
        }
        let err = (theta - recon).norm() / (1.0 + scale);
        let sum: f64 = weights.iter().sum();
        DecompositionResult { weights, vectors: cols, claimed_budget: budget, weight_sum: sum, reconstruction_error: err, method }
    };

    let (wts, cols) = normalize_candidates(&root, w)?;
    let mut best = finish(wts, cols, DecompositionMethod::Eigen);
    if best.weight_sum <= budget + 1e-7 {
        return Ok(best);
    }
    let size = if r.next_power_of_two() <= count { r.next_power_of_two() } else { r };
    let base = if size.is_power_of_two() { sylvester_hadamard(size) } else { dct(size) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..max_attempts {
        let mut rows: Vec<usize> = (0..size).collect();
        rows.shuffle(&mut rng);
        let signs: Vec<f64> = (0..size).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        // Rows of a row-signed orthogonal matrix, so H H^T = I_r.
        let mix = DMatrix::from_fn(r, size, |i, j| signs[rows[i]] * base[(rows[i], j)]);
        let (wts, cols) = normalize_candidates(&(&root * mix), w)?;
        let cand = finish(wts, cols, DecompositionMethod::Mixing { attempt });
        if cand.weight_sum <= budget + 1e-7 {
            return Ok(cand);
        }
        if cand.weight_sum < best.weight_sum {
            best = cand;
        }
    }
    Err(Error::DecompositionBudget { attempts: max_attempts + 1, best: best.weight_sum, budget })
}

/// Co-ellitopic nuisance: optimize over the cone of `(Theta, rho)` pairs
/// decomposable over the ellitope `W`, then decompose.
pub fn synth_coellitopic(inst: &ProblemInstance, opts: &SynthesisOptions) -> Result<SynthesisReport> {
    let NuisanceSpec::CoEllitopic { nstar } = &inst.nuisance else {
        return Err(Error::invalid("co-ellitopic synthesis needs a co-ellitopic nuisance"));
    };
    let m = inst.m();
    let kappa = varkappa(inst.sigma, inst.epsilon, m)?;
    let w = cw_ellitope(nstar, kappa)?;
    let alpha = decomposition_factor(m, w.num_forms());

    let mut prog = ConicProgram::new();
    let mut lmi = RiskLmi::new(&mut prog, inst)?;
    let basis = if opts.lift.full(m) { DMatrix::identity(m, m) } else { range_of(&inst.a) };
    let theta = LiftedTheta::new(&mut prog, "theta", basis);
    let rho = prog.scalar("rho");
    prog.le("rho nonneg", LinExpr::zero(), rho.expr())?;
    let traces: Vec<LinExpr> = w.forms().iter().map(|r| theta.trace_with(r)).collect();
    w.tset().constrain_dominated(&mut prog, &traces, &rho.expr())?;
    lmi.block.add_sym_block(inst.q(), &theta.congruence(&inst.a));
    let objective = lmi.objective.clone() + rho.expr().scaled(4.0 * alpha);
    prog.lmi("risk", lmi.block.clone())?;
    prog.minimize(objective)?;
    let r = conic::solve(&prog, &opts.solver)?.require_usable("co-ellitopic synthesis", 1e-6)?;
    let theta_star = theta.value(&r);
    let rho_star = r.scalar(rho).max(cone_requirement(&theta_star, &w));

    let dec = decompose_over_ellitope(&theta_star, rho_star, &w, m, opts.seed, opts.max_attempts)?;
    let mut g = ContrastMatrix::new(dec.vectors.clone(), ColumnRole::Plain);
    g.set_threshold_count(m);
    let worst_theta = (0..g.ncols()).map(|i| w.gauge(g.col(i).as_slice())).collect::<Result<Vec<_>>>()?;
    let worst = worst_theta.into_iter().fold(0.0, f64::max);
    let costs = vec![4.0 * worst * worst; g.ncols()];
    let cert = certificate_from(
        inst,
        &g,
        r.vector(&lmi.lambda),
        r.vector(&lmi.mu),
        dec.weights.clone(),
        costs,
        kappa,
        BoundKind::Bounded,
    )?;
    Ok(SynthesisReport {
        instance_hash: inst.hash(),
        contrast: g,
        design_value: certify::base_value(inst, &cert.lambda, &cert.mu)? + 4.0 * alpha * rho_star,
        certificate: cert,
        optimum: r.objective,
        diagnostics: (&r).into(),
        decomposition: Some(dec),
        theta: vec![theta_star],
        rho: rho_star,
        threshold: kappa,
    })
}

/// Result of the per-column sparse-recovery contrast design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HSynthesis {
    pub contrast: ContrastMatrix,
    /// Optimal `2 kbar ||h_k|| + 2 max_{x in X} |h_k^T A x|` per column.
    pub objectives: Vec<f64>,
}

/// Designs `H = [h_1..h_n]` column by column: minimize
/// `2 kbar ||h|| + 2 max_{x in X} |h^T A x|` subject to
/// `||Col_k[I - N^T h]||_inf <= kappa / s`.
pub fn synth_h_sparse(inst: &ProblemInstance, kappa: f64, kbar: f64, opts: &SynthesisOptions) -> Result<HSynthesis> {
    let s = inst.nuisance.sparsity()?;
    if !(kappa > 0.0 && kappa < 0.5) {
        return Err(Error::invalid(format!("kappa must lie in (0, 1/2), got {kappa}")));
    }
    let (m, p, n) = (inst.m(), inst.p(), inst.n_dim());
    // A hair inside the admissible set so the check below is not at the edge.
    let limit = kappa * (1.0 - 1e-6) / s as f64;
    let solved: Vec<(DVector<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|k| -> Result<(DVector<f64>, f64)> {
            let mut prog = ConicProgram::new();
            let h = prog.vector("h", m);
            let v = prog.scalar("v");
            let t = prog.scalar("t");
            let chi = prog.nonneg_vector("chi", inst.x.num_forms());
            prog.soc("h norm", t.expr(), h.exprs())?;
            let mut blk = SymExpr::zeros(1 + p);
            *blk.get_mut(0, 0) = v.expr();
            let ah = h.mat_mul(&inst.a.transpose());
            for (j, e) in ah.into_iter().enumerate() {
                *blk.get_mut(0, 1 + j) = e;
            }
            for (l, tf) in inst.x.forms().iter().enumerate() {
                blk.add_var_block(1, tf, &chi.at(l));
            }
            prog.lmi("dual max", blk)?;
            let phi = inst.x.tset().support_epigraph(&mut prog, &chi.exprs())?;
            let nh = h.mat_mul(&inst.n.transpose());
            for (j, e) in nh.into_iter().enumerate() {
                let target = if j == k { 1.0 } else { 0.0 };
                prog.abs_le("admissible", LinExpr::constant(target) - e, LinExpr::constant(limit))?;
            }
            prog.minimize(t.expr().scaled(2.0 * kbar) + v.expr() + phi)?;
            let r = conic::solve(&prog, &opts.solver)?;
            match r.status {
                SolveStatus::Infeasible => return Err(Error::InfeasibleColumn { column: k }),
                _ => {}
            }
            let r = r.require_usable("H column synthesis", 1e-6)?;
            Ok((DVector::from_vec(r.vector(&h)), r.objective))
        })
        .collect::<Result<_>>()?;
    let mut cols = DMatrix::zeros(m, n);
    for (k, (h, _)) in solved.iter().enumerate() {
        cols.set_column(k, h);
    }
    h_set_check(&cols, &inst.n, s, kappa)?;
    Ok(HSynthesis {
        contrast: ContrastMatrix::new(cols, ColumnRole::H),
        objectives: solved.into_iter().map(|(_, o)| o).collect(),
    })
}

/// The ellitope `{g : exists r in [0,1]^n, g^T (a I + b n_j n_j^T) g <= r_j}`.
fn column_ellitope(n: &DMatrix<f64>, a: f64, b: f64) -> Result<BasicEllitope> {
    let m = n.nrows();
    let forms: Vec<DMatrix<f64>> = (0..n.ncols())
        .map(|j| {
            let c = n.column(j);
            DMatrix::identity(m, m) * a + c * c.transpose() * b
        })
        .collect();
    BasicEllitope::new(forms, TSet::unit_box(n.ncols()))
}

/// Options of the two-block program that allow restricted variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TwoBlockVariant {
    pub theta1_zero: bool,
    pub tau_zero: bool,
}

struct TwoBlockSolution {
    lambda: Vec<f64>,
    mu: Vec<f64>,
    tau: Vec<f64>,
    theta1: DMatrix<f64>,
    theta2: DMatrix<f64>,
    rho: f64,
    result: SolveResult,
}

/// `min phi_S + 4 phi_T + sum tau_i c_i + Tr Theta_2 + alpha rho` subject to
/// `Tr(M_j Theta_1) <= rho` and the semidefinite constraint with
/// `A^T (sum tau h h^T + Theta_1 + Q Theta_2 Q) A`.
#[allow(clippy::too_many_arguments)]
fn solve_two_block(
    inst: &ProblemInstance,
    form_a: f64,
    form_b: f64,
    q: &DMatrix<f64>,
    alpha: f64,
    extra: Option<(&ContrastMatrix, &[f64])>,
    variant: TwoBlockVariant,
    opts: &SynthesisOptions,
) -> Result<TwoBlockSolution> {
    let m = inst.m();
    let mut prog = ConicProgram::new();
    let mut lmi = RiskLmi::new(&mut prog, inst)?;
    let mut objective = lmi.objective.clone();

    let basis1 = if variant.theta1_zero {
        DMatrix::zeros(m, 0)
    } else if opts.lift.full(m) {
        DMatrix::identity(m, m)
    } else {
        range_of(&inst.a)
    };
    let theta1 = LiftedTheta::new(&mut prog, "theta1", basis1);
    let qa = q * &inst.a;
    let theta2 = LiftedTheta::new(&mut prog, "theta2", range_of(&qa));
    let rho = prog.scalar("rho");
    prog.le("rho nonneg", LinExpr::zero(), rho.expr())?;
    if theta1.basis.ncols() > 0 {
        let tr = theta1.trace();
        for j in 0..inst.n_dim() {
            let c = inst.n.column(j).into_owned();
            let lhs = tr.clone().scaled(form_a) + theta1.quad(&c).scaled(form_b);
            prog.le("theta1 cone", lhs, rho.expr())?;
        }
        lmi.block.add_sym_block(inst.q(), &theta1.congruence(&inst.a));
    }
    if theta2.basis.ncols() > 0 {
        lmi.block.add_sym_block(inst.q(), &theta2.congruence(&qa));
        objective = objective + theta2.trace();
    }
    let mut tau = None;
    if let (Some((h, costs)), false) = (extra, variant.tau_zero) {
        let t = prog.nonneg_vector("tau", h.ncols());
        let ah = inst.a.transpose() * h.matrix();
        for i in 0..h.ncols() {
            let a = ah.column(i).into_owned();
            if a.norm() > 0.0 {
                lmi.add_rank_one(inst.q(), &a, &t.at(i));
            }
            objective.add_term(t.offset + i, costs[i]);
        }
        tau = Some(t);
    }
    objective = objective + rho.expr().scaled(alpha);
    prog.lmi("risk", lmi.block.clone())?;
    prog.minimize(objective)?;
    let r = conic::solve(&prog, &opts.solver)?.require_usable("contrast synthesis", 1e-6)?;
    let ncols = extra.map(|(h, _)| h.ncols()).unwrap_or(0);
    Ok(TwoBlockSolution {
        lambda: r.vector(&lmi.lambda),
        mu: r.vector(&lmi.mu),
        tau: tau.map(|t| r.vector(&t).into_iter().map(|v| v.max(0.0)).collect()).unwrap_or_else(|| vec![0.0; ncols]),
        theta1: theta1.value(&r),
        theta2: theta2.value(&r),
        rho: r.scalar(rho).max(0.0),
        result: r,
    })
}

/// Builds `[G_1, G_2]` from a two-block solution: `G_1` by decomposition over
/// `ell`, `G_2 = Q Gamma` from the eigenvectors of `Theta_2`.
fn two_block_contrast(
    sol: &TwoBlockSolution,
    ell: &BasicEllitope,
    q: &DMatrix<f64>,
    role: ColumnRole,
    opts: &SynthesisOptions,
) -> Result<(ContrastMatrix, Vec<f64>, DecompositionResult)> {
    let m = q.nrows();
    // The solver's rho can sit a rounding error below what Theta_1 needs.
    let rho = sol.rho.max(cone_requirement(&sol.theta1, ell));
    let dec = decompose_over_ellitope(&sol.theta1, rho, ell, m, opts.seed, opts.max_attempts)?;
    let (chi, gamma_vecs) = sym_eigen(&sol.theta2);
    let g2 = q * gamma_vecs;
    let g1 = ContrastMatrix::new(dec.vectors.clone(), role);
    let mut g2 = ContrastMatrix::new(g2, role);
    g2.set_threshold_count(m);
    let mut g1 = g1;
    g1.set_threshold_count(m);
    let g = ContrastMatrix::hstack(&[&g1, &g2])?;
    let mut weights = dec.weights.clone();
    weights.extend(chi.iter().map(|v| v.max(0.0)));
    Ok((g, weights, dec))
}

/// Per-column bound valid for any contrast column in the sparse design:
/// the smaller of the two quadratic bounds, floored at 1 (the value both
/// designed blocks attain).
fn designed_column_cost(g: &DVector<f64>, n: &DMatrix<f64>, form_a: f64, form_b: f64, qinv2: &DMatrix<f64>) -> f64 {
    let ng = n.transpose() * g;
    let c1 = form_a * g.norm_squared() + form_b * ng.amax().powi(2);
    let c2 = g.dot(&(qinv2 * g));
    c1.min(c2).max(1.0)
}

/// Signal contrast `[G_1, G_2]` for an admissible `(H, kappa)`.
///
/// Returns the contrast `[H, G_1, G_2]` of the estimate; `kbar` must be the
/// threshold for `n + 2m` columns.
pub fn synth_g_sparse(
    inst: &ProblemInstance,
    h: &ContrastMatrix,
    kappa: f64,
    kbar: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisReport> {
    let s = inst.nuisance.sparsity()? as f64;
    let m = inst.m();
    let rho_h = rho_h(inst, h, kappa, kbar, &opts.solver)?.value;
    let form_a = 8.0 * kbar * kbar;
    let form_b = 8.0 * s * s * rho_h * rho_h;
    let ell = column_ellitope(&inst.n, form_a, form_b)?;
    let qinv2 = DMatrix::identity(m, m) * form_a + &inst.n * inst.n.transpose() * (4.0 * s * rho_h * rho_h);
    let q = inv_sqrt(&qinv2, 1e-300)?;
    let alpha = decomposition_factor(m, inst.n_dim());
    let sol = solve_two_block(inst, form_a, form_b, &q, alpha, None, TwoBlockVariant::default(), opts)?;
    let (g, weights, dec) = two_block_contrast(&sol, &ell, &q, ColumnRole::G, opts)?;

    let mut hh = h.clone();
    hh.set_threshold_count(h.ncols());
    let full = ContrastMatrix::hstack(&[&hh, &g])?;
    let si = s as usize;
    let mut costs: Vec<f64> = (0..h.ncols())
        .map(|k| {
            let col = h.col(k);
            let ng = inst.n.transpose() * &col;
            (2.0 * kbar * col.norm() + rho_h * norm_s1(ng.as_slice(), 2 * si)).powi(2)
        })
        .collect();
    costs.extend((0..g.ncols()).map(|i| designed_column_cost(&g.col(i), &inst.n, form_a, form_b, &qinv2)));
    let mut gamma = vec![0.0; h.ncols()];
    gamma.extend(weights);
    let cert = certificate_from(inst, &full, sol.lambda.clone(), sol.mu.clone(), gamma, costs, kbar, BoundKind::Sparse)?;
    let design_value = certify::base_value(inst, &cert.lambda, &cert.mu)? + sol.theta2.trace() + alpha * sol.rho;
    Ok(SynthesisReport {
        instance_hash: inst.hash(),
        contrast: full,
        certificate: cert,
        design_value,
        optimum: sol.result.objective,
        diagnostics: (&sol.result).into(),
        decomposition: Some(dec),
        theta: vec![sol.theta1, sol.theta2],
        rho: sol.rho,
        threshold: kbar,
    })
}

/// Alternative design for an arbitrary `H_bar`; returns the contrast
/// `[H_bar, G_bar_1, G_bar_2]`. `kbar` must be the threshold for `M + 2m`
/// columns.
pub fn synth_alternative(
    inst: &ProblemInstance,
    hbar: &ContrastMatrix,
    kbar: f64,
    variant: TwoBlockVariant,
    opts: &SynthesisOptions,
) -> Result<(SynthesisReport, SparseAux)> {
    let s = inst.nuisance.sparsity()? as f64;
    let m = inst.m();
    let aux = certify::opt_programs(inst, hbar, kbar, &opts.solver)?;
    let form_a = 8.0 * kbar * kbar;
    let form_b = 8.0 * s * s * aux.opt_inf * aux.opt_inf;
    let ell = column_ellitope(&inst.n, form_a, form_b)?;
    let qinv2 = DMatrix::identity(m, m) * form_a + &inst.n * inst.n.transpose() * (2.0 * aux.varrho2 * aux.varrho2);
    let q = inv_sqrt(&qinv2, 1e-300)?;
    let alpha = decomposition_factor(m, inst.n_dim());
    let mut hh = ContrastMatrix::new(hbar.matrix().clone(), ColumnRole::AltH);
    hh.set_threshold_count(hbar.ncols());
    let h_costs: Vec<f64> = (0..hh.ncols())
        .into_par_iter()
        .map(|i| certify::psi_h_alt(&hh.col(i), &inst.n, &aux, &opts.solver).map(|v| v * v))
        .collect::<Result<_>>()?;
    let sol = solve_two_block(inst, form_a, form_b, &q, alpha, Some((&hh, &h_costs)), variant, opts)?;
    let (g, weights, dec) = two_block_contrast(&sol, &ell, &q, ColumnRole::AltG, opts)?;

    let full = ContrastMatrix::hstack(&[&hh, &g])?;
    let mut costs = h_costs.clone();
    costs.extend((0..g.ncols()).map(|i| designed_column_cost(&g.col(i), &inst.n, form_a, form_b, &qinv2)));
    let mut gamma = sol.tau.clone();
    gamma.extend(weights);
    let cert = certificate_from(inst, &full, sol.lambda.clone(), sol.mu.clone(), gamma, costs, kbar, BoundKind::SparseAlt)?;
    let tau_part: f64 = sol.tau.iter().zip(&h_costs).map(|(t, c)| t * c).sum();
    let design_value =
        certify::base_value(inst, &cert.lambda, &cert.mu)? + tau_part + sol.theta2.trace() + alpha * sol.rho;
    let report = SynthesisReport {
        instance_hash: inst.hash(),
        contrast: full,
        certificate: cert,
        design_value,
        optimum: sol.result.objective,
        diagnostics: (&sol.result).into(),
        decomposition: Some(dec),
        theta: vec![sol.theta1, sol.theta2],
        rho: sol.rho,
        threshold: kbar,
    };
    Ok((report, aux))
}

/// Stacks `[H_tilde, H_bar, G_tilde, G_bar]` from the two sparse designs.
/// The threshold count is `n + M + 4m`.
pub fn build_aggregated_contrast(tilde: &SynthesisReport, bar: &SynthesisReport) -> Result<ContrastMatrix> {
    if tilde.instance_hash != bar.instance_hash {
        return Err(Error::invalid("synthesis reports refer to different instances"));
    }
    let ht = tilde.contrast.block(ColumnRole::H);
    let gt = tilde.contrast.block(ColumnRole::G);
    let hb = bar.contrast.block(ColumnRole::AltH);
    let gb = bar.contrast.block(ColumnRole::AltG);
    let m = tilde.contrast.m();
    if ht.is_empty() || hb.is_empty() {
        return Err(Error::invalid("aggregation needs both H blocks"));
    }
    let mut out = ContrastMatrix::hstack(&[&ht, &hb, &gt, &gb])?;
    out.set_threshold_count(ht.ncols() + hb.ncols() + 4 * m);
    Ok(out)
}
