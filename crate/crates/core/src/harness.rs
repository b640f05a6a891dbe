//! Monte-Carlo experiments: instance recipes, contrast synthesis for the
//! three sparse-nuisance estimates, seeded trials and reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{certify_aggregated, certify_sparse, certify_sparse_alt, opt_programs, RiskCertificate};
use crate::conic::SolverOptions;
use crate::ellitope::{BasicEllitope, TSet};
use crate::error::{Error, Result};
use crate::model::{gaussian_noise, in_confidence_set, varkappa, ColumnRole, ContrastMatrix, NuisanceSpec, ProblemInstance};
use crate::recovery::{estimate_l1, RecoveryOutput};
use crate::sparse_l1::l1_bound_rhs;
use crate::synthesis::{
    build_aggregated_contrast, synth_alternative, synth_g_sparse, synth_h_sparse, SynthesisOptions, ThetaLift,
    TwoBlockVariant,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    /// Random orthonormal `A`, `N = I`, `B = I` and the smooth-signal set.
    SmoothSignal { f0_bound: f64, df0_bound: f64, d2f_bound: f64 },
    /// A serialized [`ProblemInstance`] with sparse nuisance.
    Custom { instance: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorFlags {
    pub hg: bool,
    pub ig: bool,
    pub hig: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Observation dimension.
    pub m: usize,
    /// Nuisance dimension.
    pub n: usize,
    /// Signal dimension.
    pub p: usize,
    /// Dimension of `B x`.
    pub q: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub s: usize,
    /// Admissibility level for the designed `H`.
    pub kappa: f64,
    pub trials: usize,
    pub seed: u64,
    pub recipe: Recipe,
    pub estimators: EstimatorFlags,
    /// Nuisance entries are `+-amplitude (1 + U[0,1])`; defaults to `10 sigma`.
    pub nuisance_amplitude: Option<f64>,
    /// Hit-and-run steps per sampled signal when `X` is not a parallelotope.
    pub signal_steps: usize,
    pub lift: ThetaLift,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        ExperimentConfig {
            m: 64,
            n: 64,
            p: 16,
            q: 16,
            sigma: 0.1,
            epsilon: 0.05,
            s: 4,
            kappa: 0.25,
            trials: 100,
            seed: 2024,
            recipe: Recipe::SmoothSignal { f0_bound: 4.0, df0_bound: 1.0, d2f_bound: 4.0 },
            estimators: EstimatorFlags { hg: true, ig: true, hig: true },
            nuisance_amplitude: None,
            signal_steps: 200,
            lift: ThetaLift::Auto,
            output_dir: None,
        }
    }

    pub fn large() -> Self {
        ExperimentConfig { m: 256, n: 256, p: 32, q: 32, s: 8, ..Self::desk() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or large)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn amplitude(&self) -> f64 {
        self.nuisance_amplitude.unwrap_or(10.0 * self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if [self.m, self.n, self.p, self.q].contains(&0) {
            return bad("all dimensions must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.s == 0 || self.s > self.n {
            return bad(format!("need 1 <= s <= n, got s = {}", self.s));
        }
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return bad(format!("kappa must lie in (0, 1/2), got {}", self.kappa));
        }
        if self.estimators.hig && !(self.estimators.hg && self.estimators.ig) {
            return bad("the aggregated estimate needs both hg and ig".into());
        }
        if let Recipe::SmoothSignal { .. } = self.recipe {
            if self.m != self.n || self.p != self.q {
                return bad("the smooth-signal recipe uses N = I and B = I, so m = n and p = q".into());
            }
            if self.p < 3 {
                return bad("the smooth-signal recipe needs p >= 3".into());
            }
            if self.p > self.m {
                return bad("the smooth-signal recipe needs p <= m".into());
            }
        }
        Ok(())
    }
}

/// Signals on a grid of `p` points over `[0, 2 pi)` with `|f(0)| <= f0_bound`,
/// `|f'(0)| <= df0_bound` and `|f''| <= d2f_bound`, using finite differences.
pub fn build_smoothness_ellitope(p: usize, f0_bound: f64, df0_bound: f64, d2f_bound: f64) -> Result<BasicEllitope> {
    if p < 3 {
        return Err(Error::invalid(format!("smoothness set needs p >= 3, got {p}")));
    }
    if [f0_bound, df0_bound, d2f_bound].iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::invalid("smoothness bounds must be positive"));
    }
    let h = 2.0 * std::f64::consts::PI / p as f64;
    let mut rows = vec![(DVector::zeros(p), f0_bound), (DVector::zeros(p), df0_bound)];
    rows[0].0[0] = 1.0;
    rows[1].0[0] = -1.0 / h;
    rows[1].0[1] = 1.0 / h;
    for i in 2..p {
        let mut r = DVector::zeros(p);
        r[i - 2] = 1.0 / (h * h);
        r[i - 1] = -2.0 / (h * h);
        r[i] = 1.0 / (h * h);
        rows.push((r, d2f_bound));
    }
    let forms = rows.iter().map(|(r, b)| r * r.transpose() / (b * b)).collect();
    BasicEllitope::new(forms, TSet::unit_box(p))
}

/// Instance from the configured recipe; deterministic in `seed`.
pub fn gen_instance(cfg: &ExperimentConfig, seed: u64) -> Result<ProblemInstance> {
    cfg.validate()?;
    match &cfg.recipe {
        Recipe::SmoothSignal { f0_bound, df0_bound, d2f_bound } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(cfg.m, cfg.p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = g.qr().q();
            ProblemInstance::new(
                a,
                DMatrix::identity(cfg.p, cfg.p),
                DMatrix::identity(cfg.m, cfg.m),
                build_smoothness_ellitope(cfg.p, *f0_bound, *df0_bound, *d2f_bound)?,
                BasicEllitope::euclidean_ball(cfg.p, 1.0),
                NuisanceSpec::Sparse { s: cfg.s },
                cfg.sigma,
                cfg.epsilon,
            )
        }
        Recipe::Custom { instance } => {
            let text = std::fs::read_to_string(instance)?;
            let inst: ProblemInstance = serde_json::from_str(&text)?;
            inst.validate()?;
            let dims = (inst.m(), inst.n_dim(), inst.p(), inst.q());
            if dims != (cfg.m, cfg.n, cfg.p, cfg.q) {
                return Err(Error::Config(format!(
                    "instance dimensions (m, n, p, q) = {dims:?} differ from the configuration"
                )));
            }
            if inst.nuisance.sparsity()? != cfg.s {
                return Err(Error::Config("instance sparsity differs from the configuration".into()));
            }
            Ok(inst)
        }
    }
}

/// `s` uniformly placed entries equal to `+-amplitude (1 + U[0,1])`.
pub fn gen_sparse_nuisance(n: usize, s: usize, amplitude: f64, seed: u64) -> Result<DVector<f64>> {
    if s > n {
        return Err(Error::invalid(format!("sparsity {s} exceeds dimension {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nu = DVector::zeros(n);
    for i in sample(&mut rng, n, s) {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        nu[i] = sign * amplitude * (1.0 + rng.random::<f64>());
    }
    Ok(nu)
}

/// Random signal in `x`: exactly uniform when `x` is a parallelotope,
/// otherwise the end point of a `steps`-long hit-and-run walk from the origin.
pub fn gen_signal(x: &BasicEllitope, steps: usize, seed: u64) -> Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some((r, c)) = x.as_parallelotope() {
        let y = DVector::from_iterator(c.len(), c.iter().map(|&ck| rng.random_range(-ck..=ck)));
        let lu = r.lu();
        return lu.solve(&y).ok_or_else(|| Error::invalid("parallelotope map is singular"));
    }
    let v = x.hit_and_run(&vec![0.0; x.dim()], steps, &mut rng)?;
    Ok(DVector::from_vec(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimator {
    Hg,
    Ig,
    Hig,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Hg => "HG",
            Estimator::Ig => "IG",
            Estimator::Hig => "HIG",
        }
    }
}

/// A synthesized estimate ready to run on observations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorSetup {
    pub estimator: Estimator,
    pub contrast: ContrastMatrix,
    pub threshold: f64,
    pub certificate: RiskCertificate,
    /// `(H, kappa)` for the l1-recovery bound, when `H` is admissible.
    #[serde(with = "crate::serial::opt_matrix")]
    pub h_admissible: Option<DMatrix<f64>>,
    pub kappa: f64,
}

/// Bounds for nuisance recovery by the alternative estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NuisanceBounds {
    pub opt2: f64,
    pub opt_inf: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Synthesized {
    pub instance_hash: String,
    pub setups: Vec<EstimatorSetup>,
    pub ig_nuisance: Option<NuisanceBounds>,
    pub seconds: f64,
}

/// Builds every selected estimate for `inst`.
pub fn synthesize_all(inst: &ProblemInstance, cfg: &ExperimentConfig, opts: &SynthesisOptions) -> Result<Synthesized> {
    let start = Instant::now();
    let (m, n) = (inst.m(), inst.n_dim());
    let solver = &opts.solver;
    let mut setups = Vec::new();
    let mut ig_nuisance = None;

    let kbar_hg = varkappa(inst.sigma, inst.epsilon, n + 2 * m)?;
    let hg = if cfg.estimators.hg {
        let h = synth_h_sparse(inst, cfg.kappa, kbar_hg, opts)?;
        let report = synth_g_sparse(inst, &h.contrast, cfg.kappa, kbar_hg, opts)?;
        let g = report.contrast.block(ColumnRole::G);
        let direct = certify_sparse(inst, &g, &h.contrast, cfg.kappa, kbar_hg, solver)?;
        let cert = certify_aggregated(&report.certificate, &direct)?;
        log::info!("HG bound {:.4} (design {:.4}, direct {:.4})", cert.value, report.certificate.value, direct.value);
        setups.push(EstimatorSetup {
            estimator: Estimator::Hg,
            contrast: report.contrast.clone(),
            threshold: kbar_hg,
            certificate: cert,
            h_admissible: Some(h.contrast.matrix().clone()),
            kappa: cfg.kappa,
        });
        Some((h, report))
    } else {
        None
    };

    let kbar_ig = varkappa(inst.sigma, inst.epsilon, m + 2 * m)?;
    let ig = if cfg.estimators.ig {
        let hbar = ContrastMatrix::identity(m, ColumnRole::AltH);
        let (report, aux) = synth_alternative(inst, &hbar, kbar_ig, TwoBlockVariant::default(), opts)?;
        let direct = certify_sparse_alt(inst, &report.contrast, &aux, solver)?;
        let cert = certify_aggregated(&report.certificate, &direct)?;
        log::info!("IG bound {:.4} (design {:.4}, direct {:.4})", cert.value, report.certificate.value, direct.value);
        ig_nuisance = Some(NuisanceBounds { opt2: aux.opt2, opt_inf: aux.opt_inf });
        // H_bar = I is admissible with kappa = 0 when N = I.
        let exact = crate::sparse_l1::admissibility_gap(hbar.matrix(), &inst.n)? <= 1e-12;
        setups.push(EstimatorSetup {
            estimator: Estimator::Ig,
            contrast: report.contrast.clone(),
            threshold: kbar_ig,
            certificate: cert,
            h_admissible: exact.then(|| hbar.matrix().clone()),
            kappa: 0.0,
        });
        Some(report)
    } else {
        None
    };

    if cfg.estimators.hig {
        let (Some((h, tilde)), Some(bar)) = (&hg, &ig) else {
            return Err(Error::Config("the aggregated estimate needs both hg and ig".into()));
        };
        let combined = build_aggregated_contrast(tilde, bar)?;
        let kbar = varkappa(inst.sigma, inst.epsilon, combined.threshold_count())?;
        let gs = ContrastMatrix::hstack(&[&combined.block(ColumnRole::G), &combined.block(ColumnRole::AltG)])?;
        let first = certify_sparse(inst, &gs, &h.contrast, cfg.kappa, kbar, solver)?;
        let hbar = combined.block(ColumnRole::AltH);
        let aux = opt_programs(inst, &hbar, kbar, solver)?;
        let second = certify_sparse_alt(inst, &ContrastMatrix::hstack(&[&gs, &hbar])?, &aux, solver)?;
        let cert = certify_aggregated(&first, &second)?;
        log::info!("HIG bound {:.4} (branches {:.4}, {:.4})", cert.value, first.value, second.value);
        setups.push(EstimatorSetup {
            estimator: Estimator::Hig,
            contrast: combined,
            threshold: kbar,
            certificate: cert,
            h_admissible: Some(h.contrast.matrix().clone()),
            kappa: cfg.kappa,
        });
    }
    Ok(Synthesized { instance_hash: inst.hash(), setups, ig_nuisance, seconds: start.elapsed().as_secs_f64() })
}

/// One row per (trial, estimator).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub signal_norm: f64,
    pub x_error: Option<f64>,
    pub nu_error_l1: Option<f64>,
    pub nu_error_l2: Option<f64>,
    pub nu_error_inf: Option<f64>,
    /// Right-hand sides of the l1-recovery bound for `q = 1, 2, inf`.
    pub nu_bound_l1: Option<f64>,
    pub nu_bound_l2: Option<f64>,
    pub nu_bound_inf: Option<f64>,
    pub in_confidence_set: bool,
    pub feasible: bool,
    pub bound: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub bound: f64,
    pub threshold: f64,
    pub contrast_columns: usize,
    pub trials_in_confidence_set: usize,
    pub outside_fraction: f64,
    /// Confidence-set trials whose error exceeds the bound.
    pub violations: usize,
    /// Confidence-set trials violating an l1-recovery or nuisance bound.
    pub nuisance_violations: usize,
    pub failures: usize,
    pub mean_error: f64,
    pub median_error: f64,
    pub q90_error: f64,
    pub max_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timings {
    pub instance_seconds: f64,
    pub synthesis_seconds: f64,
    pub trials_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub instance_hash: String,
    pub summaries: BTreeMap<Estimator, EstimatorSummary>,
    pub ig_nuisance: Option<NuisanceBounds>,
    pub timings: Timings,
    #[serde(skip)]
    pub trials: Vec<TrialRecord>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Relative slack used when comparing errors with certified bounds.
pub const BOUND_SLACK: f64 = 1e-6;

#[allow(clippy::too_many_arguments)]
fn run_trial(
    inst: &ProblemInstance,
    setup: &EstimatorSetup,
    nuisance: Option<NuisanceBounds>,
    trial: usize,
    seed: u64,
    x_star: &DVector<f64>,
    nu_star: &DVector<f64>,
    xi: &DVector<f64>,
    opts: &SolverOptions,
) -> TrialRecord {
    let omega = &inst.a * x_star + &inst.n * nu_star + xi;
    let in_set = in_confidence_set(&setup.contrast, xi, setup.threshold).unwrap_or(false);
    let mut rec = TrialRecord {
        trial,
        seed,
        estimator: setup.estimator,
        signal_norm: (&inst.b * x_star).norm(),
        x_error: None,
        nu_error_l1: None,
        nu_error_l2: None,
        nu_error_inf: None,
        nu_bound_l1: None,
        nu_bound_l2: None,
        nu_bound_inf: None,
        in_confidence_set: in_set,
        feasible: false,
        bound: setup.certificate.value,
        error: None,
    };
    let out: RecoveryOutput = match estimate_l1(inst, &setup.contrast, setup.threshold, &omega, opts) {
        Ok(o) => o,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.feasible = out.feasible;
    let w_err = DVector::from_vec(out.w_hat.clone()) - &inst.b * x_star;
    rec.x_error = crate::certify::error_norm(inst, w_err.as_slice(), opts).ok();
    let z = DVector::from_vec(out.nu_hat.clone()) - nu_star;
    rec.nu_error_l1 = Some(z.lp_norm(1));
    rec.nu_error_l2 = Some(z.norm());
    rec.nu_error_inf = Some(z.amax());
    if let (Some(h), true) = (&setup.h_admissible, out.feasible) {
        let s = inst.nuisance.sparsity().unwrap_or(1);
        let rhs = |q: f64| l1_bound_rhs(h, &inst.n, nu_star.as_slice(), &out.nu_hat, s, setup.kappa, q).ok();
        rec.nu_bound_l1 = rhs(1.0);
        rec.nu_bound_l2 = rhs(2.0);
        rec.nu_bound_inf = rhs(f64::INFINITY);
    }
    if setup.estimator == Estimator::Ig {
        // Opt_inf and Opt_2 bound the nuisance error directly.
        if let Some(nb) = nuisance {
            rec.nu_bound_inf = Some(rec.nu_bound_inf.map_or(nb.opt_inf, |v| v.min(nb.opt_inf)));
            rec.nu_bound_l2 = Some(rec.nu_bound_l2.map_or(nb.opt2, |v| v.min(nb.opt2)));
        }
    }
    rec
}

/// True when a confidence-set trial breaks a nuisance bound it carries.
pub fn nuisance_violation(rec: &TrialRecord) -> bool {
    let pairs = [
        (rec.nu_error_l1, rec.nu_bound_l1),
        (rec.nu_error_l2, rec.nu_bound_l2),
        (rec.nu_error_inf, rec.nu_bound_inf),
    ];
    pairs.iter().any(|(e, b)| matches!((e, b), (Some(e), Some(b)) if *e > b * (1.0 + BOUND_SLACK) + 1e-7))
}

/// True when a confidence-set trial's error exceeds its certified bound.
pub fn bound_violation(rec: &TrialRecord) -> bool {
    match rec.x_error {
        Some(e) => e > rec.bound * (1.0 + BOUND_SLACK) + 1e-7,
        None => false,
    }
}

/// Runs `cfg.trials` seeded trials of every synthesized estimate.
pub fn run_trials(
    inst: &ProblemInstance,
    synth: &Synthesized,
    cfg: &ExperimentConfig,
    opts: &SolverOptions,
) -> Result<Vec<TrialRecord>> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1a);
    let seeds: Vec<u64> = (0..cfg.trials).map(|_| master.random()).collect();
    let s = inst.nuisance.sparsity()?;
    let amplitude = cfg.amplitude();
    let per_trial: Vec<Vec<TrialRecord>> = seeds
        .par_iter()
        .enumerate()
        .map(|(t, &seed)| -> Result<Vec<TrialRecord>> {
            let x_star = gen_signal(&inst.x, cfg.signal_steps, seed)?;
            let nu_star = gen_sparse_nuisance(inst.n_dim(), s, amplitude, seed.wrapping_add(1))?;
            let xi = gaussian_noise(inst.m(), inst.sigma, seed.wrapping_add(2));
            Ok(synth
                .setups
                .iter()
                .map(|setup| run_trial(inst, setup, synth.ig_nuisance, t, seed, &x_star, &nu_star, &xi, opts))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

pub fn summarize(synth: &Synthesized, trials: &[TrialRecord]) -> BTreeMap<Estimator, EstimatorSummary> {
    let mut out = BTreeMap::new();
    for setup in &synth.setups {
        let recs: Vec<&TrialRecord> = trials.iter().filter(|r| r.estimator == setup.estimator).collect();
        let inside: Vec<&&TrialRecord> = recs.iter().filter(|r| r.in_confidence_set).collect();
        let mut errs: Vec<f64> = recs.iter().filter_map(|r| r.x_error).collect();
        errs.sort_by(f64::total_cmp);
        let total = recs.len().max(1) as f64;
        out.insert(
            setup.estimator,
            EstimatorSummary {
                bound: setup.certificate.value,
                threshold: setup.threshold,
                contrast_columns: setup.contrast.ncols(),
                trials_in_confidence_set: inside.len(),
                outside_fraction: (recs.len() - inside.len()) as f64 / total,
                violations: inside.iter().filter(|r| bound_violation(r)).count(),
                nuisance_violations: inside.iter().filter(|r| nuisance_violation(r)).count(),
                failures: recs.iter().filter(|r| r.error.is_some()).count(),
                mean_error: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
                median_error: quantile(&errs, 0.5),
                q90_error: quantile(&errs, 0.9),
                max_error: errs.last().copied().unwrap_or(f64::NAN),
            },
        );
    }
    out
}

/// Builds the instance, synthesizes all contrasts once and runs the trials.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let t0 = Instant::now();
    let inst = gen_instance(cfg, cfg.seed)?;
    let instance_seconds = t0.elapsed().as_secs_f64();
    let opts = SynthesisOptions { lift: cfg.lift, seed: cfg.seed, ..SynthesisOptions::default() };
    let synth = synthesize_all(&inst, cfg, &opts)?;
    let t1 = Instant::now();
    let trials = run_trials(&inst, &synth, cfg, &opts.solver)?;
    let trials_seconds = t1.elapsed().as_secs_f64();
    Ok(ExperimentReport {
        config: cfg.clone(),
        instance_hash: inst.hash(),
        summaries: summarize(&synth, &trials),
        ig_nuisance: synth.ig_nuisance,
        timings: Timings { instance_seconds, synthesis_seconds: synth.seconds, trials_seconds },
        trials,
    })
}

impl ExperimentReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        for r in &self.trials {
            w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Writes `trials.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(&dir.join("trials.csv"))?;
        self.write_json(&dir.join("summary.json"))
    }
}
