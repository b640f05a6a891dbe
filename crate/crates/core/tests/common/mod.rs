#![allow(dead_code)]

use nalgebra::DMatrix;
use polyest::ellitope::{BasicEllitope, TSet};
use polyest::harness::{gen_instance, ExperimentConfig};
use polyest::model::{NuisanceSpec, ProblemInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Ellitope with `j` random PSD forms (each plus a small ridge) and a unit box.
pub fn random_ellitope(dim: usize, j: usize, rng: &mut ChaCha8Rng) -> BasicEllitope {
    let forms = (0..j)
        .map(|_| {
            let f = gaussian(2, dim, rng);
            f.transpose() * f + DMatrix::identity(dim, dim) * 0.2
        })
        .collect();
    BasicEllitope::new(forms, TSet::unit_box(j)).unwrap()
}

/// Random `A`, `B`, signal set and Euclidean error norm.
pub fn random_instance(m: usize, p: usize, q: usize, nuisance: NuisanceSpec, n: DMatrix<f64>, seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian(m, p, &mut rng) / (m as f64).sqrt();
    let b = gaussian(q, p, &mut rng) / (p as f64).sqrt();
    let x = random_ellitope(p, 2, &mut rng);
    ProblemInstance::new(a, b, n, x, BasicEllitope::euclidean_ball(q, 1.0), nuisance, 0.1, 0.05).unwrap()
}

pub fn no_nuisance(m: usize, p: usize, q: usize, seed: u64) -> ProblemInstance {
    random_instance(m, p, q, NuisanceSpec::None, DMatrix::zeros(m, 1), seed)
}

/// Small smooth-signal instance with `N = I`.
pub fn small_sparse(m: usize, p: usize, s: usize, seed: u64) -> (ExperimentConfig, ProblemInstance) {
    let cfg = ExperimentConfig { m, n: m, p, q: p, s, trials: 20, seed, ..ExperimentConfig::desk() };
    let inst = gen_instance(&cfg, seed).unwrap();
    (cfg, inst)
}
