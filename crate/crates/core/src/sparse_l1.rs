//! The admissible set for sparse-recovery contrasts and the l1-recovery error
//! bound it implies.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evidence that `(H, kappa)` lies in the admissible set
/// `{ |[I - N^T H]_ij| <= kappa / s }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QInftyWitness {
    #[serde(with = "crate::serial::matrix")]
    pub h: DMatrix<f64>,
    pub kappa: f64,
    pub s: usize,
    pub max_entry: f64,
}

/// Largest entry of `|I_n - N^T H|`.
pub fn admissibility_gap(h: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<f64> {
    if h.nrows() != n.nrows() {
        return Err(Error::dims("rows of H", n.nrows(), h.nrows()));
    }
    if h.ncols() != n.ncols() {
        return Err(Error::dims("columns of H", n.ncols(), h.ncols()));
    }
    let k = n.ncols();
    let r = DMatrix::<f64>::identity(k, k) - n.transpose() * h;
    Ok(r.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

pub fn h_set_check(h: &DMatrix<f64>, n: &DMatrix<f64>, s: usize, kappa: f64) -> Result<QInftyWitness> {
    if !(kappa > 0.0 && kappa < 0.5) {
        return Err(Error::invalid(format!("kappa must lie in (0, 1/2), got {kappa}")));
    }
    if s == 0 {
        return Err(Error::invalid("sparsity must be positive"));
    }
    let max_entry = admissibility_gap(h, n)?;
    let limit = kappa / s as f64;
    if max_entry > limit {
        return Err(Error::NotAdmissible { max_entry, limit });
    }
    Ok(QInftyWitness { h: h.clone(), kappa, s, max_entry })
}

/// Sum of the `s` largest magnitudes of `z`.
pub fn norm_s1(z: &[f64], s: usize) -> f64 {
    let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.iter().take(s).sum()
}

/// Keeps the `s` largest-magnitude entries of `y` (ties go to the lower
/// index) and zeroes the rest.
pub fn top_s(y: &[f64], s: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[b].abs().total_cmp(&y[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; y.len()];
    for &i in idx.iter().take(s) {
        out[i] = y[i];
    }
    out
}

fn lp_norm(z: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        z.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    } else {
        z.iter().map(|v| v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Right-hand side of the l1-recovery error bound
/// `(2s)^(1/q) / (1 - 2 kappa) * (||H^T N (nu_hat - nu)||_inf + ||nu - nu^s||_1 / s)`.
///
/// Requires `||nu_hat||_1 <= ||nu||_1` and `(H, kappa)` admissible; `kappa`
/// may be zero here (the bound then needs `N^T H = I`).
pub fn l1_bound_rhs(
    h: &DMatrix<f64>,
    n: &DMatrix<f64>,
    nu: &[f64],
    nu_hat: &[f64],
    s: usize,
    kappa: f64,
    q: f64,
) -> Result<f64> {
    if !(kappa >= 0.0 && kappa < 0.5) {
        return Err(Error::invalid(format!("kappa must lie in [0, 1/2), got {kappa}")));
    }
    if !(q >= 1.0) {
        return Err(Error::invalid(format!("q must be at least 1, got {q}")));
    }
    if s == 0 {
        return Err(Error::invalid("sparsity must be positive"));
    }
    let k = n.ncols();
    if nu.len() != k || nu_hat.len() != k {
        return Err(Error::dims("nuisance vectors", k, nu.len().min(nu_hat.len())));
    }
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    if l1(nu_hat) > l1(nu) * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::invalid("the bound needs ||nu_hat||_1 <= ||nu||_1"));
    }
    let gap = admissibility_gap(h, n)?;
    if gap > kappa / s as f64 + 1e-12 {
        return Err(Error::NotAdmissible { max_entry: gap, limit: kappa / s as f64 });
    }
    let z = DVector::from_iterator(k, nu_hat.iter().zip(nu).map(|(a, b)| a - b));
    let rho = (h.transpose() * (n * z)).amax();
    let head = top_s(nu, s);
    let tail: f64 = nu.iter().zip(&head).map(|(a, b)| (a - b).abs()).sum();
    let factor = if q.is_infinite() { 1.0 } else { (2.0 * s as f64).powf(1.0 / q) };
    Ok(factor / (1.0 - 2.0 * kappa) * (rho + tail / s as f64))
}

/// Checks `||nu_hat - nu||_q <= RHS` for `q` in `{1, 2, inf}` with `1e-9`
/// relative slack.
pub fn l1_bound_holds(
    h: &DMatrix<f64>,
    n: &DMatrix<f64>,
    nu: &[f64],
    nu_hat: &[f64],
    s: usize,
    kappa: f64,
) -> Result<bool> {
    let z: Vec<f64> = nu_hat.iter().zip(nu).map(|(a, b)| a - b).collect();
    for q in [1.0, 2.0, f64::INFINITY] {
        let rhs = l1_bound_rhs(h, n, nu, nu_hat, s, kappa, q)?;
        if lp_norm(&z, q) > rhs * (1.0 + 1e-9) + 1e-15 {
            return Ok(false);
        }
    }
    Ok(true)
}
