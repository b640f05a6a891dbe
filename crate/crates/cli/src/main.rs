use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use polyest::certify::{
    certify_aggregated, certify_bounded, certify_sparse, certify_sparse_alt, opt_programs, RiskCertificate,
};
use polyest::conic::SolverOptions;
use polyest::harness::{gen_instance, run_experiment, synthesize_all, ExperimentConfig};
use polyest::model::{varkappa, ColumnRole, ContrastMatrix, NuisanceSpec, ProblemInstance};
use polyest::recovery::{estimate_aggregated, estimate_bounded};
use polyest::synthesis::SynthesisOptions;

/// Polyhedral estimation with sparse or bounded nuisance.
#[derive(Parser)]
#[command(name = "polyest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance and synthesize the HG, IG and HIG contrasts.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory for instance.json, contrast and certificate files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Certify a risk bound for a contrast, or verify an existing certificate.
    Certify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        contrast: PathBuf,
        /// Admissibility level of the H block, for sparse nuisance.
        #[arg(long, default_value_t = 0.25)]
        kappa: f64,
        /// Check this certificate instead of computing a new one.
        #[arg(long)]
        verify: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the estimate defined by a contrast on one observation.
    Recover {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        contrast: PathBuf,
        /// JSON array with the observation.
        #[arg(long)]
        omega: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo comparison of the three estimates against their bounds.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
        /// Override the number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Directory for trials.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: desk or large.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::preset(&self.preset)?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_contrast(path: &Path) -> Result<ContrastMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ContrastMatrix::from_text(&text)?)
}

fn certify(inst: &ProblemInstance, g: &ContrastMatrix, kappa: f64, opts: &SolverOptions) -> Result<RiskCertificate> {
    if inst.nuisance.is_bounded() {
        return Ok(certify_bounded(inst, g, opts)?);
    }
    let kbar = varkappa(inst.sigma, inst.epsilon, g.threshold_count())?;
    let h = g.block(ColumnRole::H);
    let hbar = g.block(ColumnRole::AltH);
    let signal = ContrastMatrix::hstack(&[&g.block(ColumnRole::G), &g.block(ColumnRole::AltG)])?;
    let first = if h.is_empty() || signal.is_empty() {
        None
    } else {
        Some(certify_sparse(inst, &signal, &h, kappa, kbar, opts)?)
    };
    let second = if hbar.is_empty() {
        None
    } else {
        let aux = opt_programs(inst, &hbar, kbar, opts)?;
        Some(certify_sparse_alt(inst, &ContrastMatrix::hstack(&[&signal, &hbar])?, &aux, opts)?)
    };
    match (first, second) {
        (Some(a), Some(b)) => Ok(certify_aggregated(&a, &b)?),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => bail!("sparse certification needs H and G blocks, or an AltH block"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let solver = SolverOptions::default();
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = config.load()?;
            let inst = gen_instance(&cfg, cfg.seed)?;
            let opts = SynthesisOptions { lift: cfg.lift, seed: cfg.seed, ..SynthesisOptions::default() };
            let synth = synthesize_all(&inst, &cfg, &opts)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("instance.json"), serde_json::to_string(&inst)?)?;
            for setup in &synth.setups {
                let name = setup.estimator.label().to_lowercase();
                fs::write(out.join(format!("contrast_{name}.txt")), setup.contrast.to_text())?;
                fs::write(out.join(format!("certificate_{name}.json")), setup.certificate.to_json()?)?;
                println!("{:>4}  bound {:.6}  columns {}", setup.estimator.label(), setup.certificate.value, setup.contrast.ncols());
            }
            log::info!("synthesis took {:.1}s; files in {}", synth.seconds, out.display());
        }
        Command::Certify { instance, contrast, kappa, verify, out } => {
            let inst: ProblemInstance = read_json(&instance)?;
            let g = read_contrast(&contrast)?;
            match verify {
                Some(path) => {
                    let text = fs::read_to_string(&path)?;
                    let cert = RiskCertificate::from_json(&text)?;
                    cert.verify(&inst, &cert.certified_part(&g)?)?;
                    println!("certificate verified: bound {:.6}", cert.value);
                }
                None => {
                    let cert = certify(&inst, &g, kappa, &solver)?;
                    log::info!("bound {:.6}", cert.value);
                    write_or_print(out.as_deref(), &cert.to_json()?)?;
                }
            }
        }
        Command::Recover { instance, contrast, omega, out } => {
            let inst: ProblemInstance = read_json(&instance)?;
            let g = read_contrast(&contrast)?;
            let omega: Vec<f64> = read_json(&omega)?;
            let omega = DVector::from_vec(omega);
            let result = match inst.nuisance {
                NuisanceSpec::Sparse { .. } => estimate_aggregated(&inst, &g, &omega, &solver)?,
                _ => estimate_bounded(&inst, &g, &omega, &solver)?,
            };
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&result)?)?;
        }
        Command::Experiment { config, trials, out } => {
            let mut cfg = config.load()?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let report = run_experiment(&cfg)?;
            for (est, s) in &report.summaries {
                println!(
                    "{:>4}  bound {:>9.4}  median {:>8.4}  q90 {:>8.4}  max {:>8.4}  in-set {:>3}/{}  violations {}  failures {}",
                    est.label(),
                    s.bound,
                    s.median_error,
                    s.q90_error,
                    s.max_error,
                    s.trials_in_confidence_set,
                    cfg.trials,
                    s.violations,
                    s.failures
                );
            }
            if let Some(nb) = report.ig_nuisance {
                println!("nuisance bounds: Opt_2 {:.4}  Opt_inf {:.4}", nb.opt2, nb.opt_inf);
            }
            println!(
                "timings: synthesis {:.1}s, trials {:.1}s",
                report.timings.synthesis_seconds, report.timings.trials_seconds
            );
            if let Some(dir) = out.or(cfg.output_dir.clone()) {
                report.write_to(&dir)?;
                log::info!("wrote {}", dir.display());
            }
        }
    }
    Ok(())
}
