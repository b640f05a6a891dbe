mod common;

use common::{random_ellitope, random_instance, small_sparse};
use nalgebra::{DMatrix, DVector};
use polyest::certify::{certify_bounded, error_norm};
use polyest::conic::SolverOptions;
use polyest::harness::{gen_signal, gen_sparse_nuisance, run_trials, synthesize_all, Estimator};
use polyest::model::{gaussian_noise, in_confidence_set, varkappa, ColumnRole, NuisanceSpec};
use polyest::recovery::{estimate_aggregated, estimate_bounded, estimate_l1};
use polyest::synthesis::{synth_coellitopic, synth_no_nuisance, SynthesisOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn bounded_estimate_is_dominated_by_its_certificate() {
    let inst = common::no_nuisance(8, 4, 3, 21);
    let rep = synth_no_nuisance(&inst, inst.m(), &SynthesisOptions::default()).unwrap();
    let solver = SolverOptions::default();
    let kappa = varkappa(inst.sigma, inst.epsilon, inst.m()).unwrap();
    let bound = certify_bounded(&inst, &rep.contrast, &solver).unwrap().value;
    let mut checked = 0;
    for t in 0..30u64 {
        let x = gen_signal(&inst.x, 50, t).unwrap();
        let xi = gaussian_noise(inst.m(), inst.sigma, t + 77);
        let out = estimate_bounded(&inst, &rep.contrast, &(&inst.a * &x + &xi), &solver).unwrap();
        assert!(out.feasible);
        assert!(inst.x.contains(&out.x_hat, 1e-7).unwrap());
        if in_confidence_set(&rep.contrast, &xi, kappa).unwrap() {
            let err = DVector::from_vec(out.w_hat) - &inst.b * &x;
            assert!(error_norm(&inst, err.as_slice(), &solver).unwrap() <= bound * (1.0 + 1e-6));
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn coellitopic_estimate_is_dominated_by_its_certificate() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let nstar = random_ellitope(6, 2, &mut rng);
    let inst = random_instance(6, 3, 2, NuisanceSpec::CoEllitopic { nstar: nstar.clone() }, DMatrix::identity(6, 6), 40);
    let rep = synth_coellitopic(&inst, &SynthesisOptions::default()).unwrap();
    let solver = SolverOptions::default();
    let kappa = rep.threshold;
    for t in 0..20u64 {
        let x = gen_signal(&inst.x, 50, t).unwrap();
        // A point of the polar of nstar: a random direction scaled by its support value.
        let d = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let support = nstar.max_linear(d.as_slice(), &solver).unwrap().0;
        let eta = d * (rng.random::<f64>() / support);
        let xi = gaussian_noise(inst.m(), inst.sigma, t + 5);
        let omega = &inst.a * &x + eta + &xi;
        let out = estimate_bounded(&inst, &rep.contrast, &omega, &solver).unwrap();
        if in_confidence_set(&rep.contrast, &xi, kappa).unwrap() {
            let err = (DVector::from_vec(out.w_hat) - &inst.b * &x).norm();
            assert!(err <= rep.certificate.value * (1.0 + 1e-6) + 1e-7);
        }
    }
}

#[test]
fn sparse_estimates_meet_every_trial_bound() {
    let (cfg, inst) = small_sparse(12, 4, 1, 31);
    let opts = SynthesisOptions::default();
    let synth = synthesize_all(&inst, &cfg, &opts).unwrap();
    let trials = run_trials(&inst, &synth, &cfg, &opts.solver).unwrap();
    let s = cfg.s as f64;
    let nb = synth.ig_nuisance.unwrap();
    for rec in &trials {
        assert!(rec.error.is_none(), "{:?}", rec.error);
        if !rec.in_confidence_set {
            continue;
        }
        // The true pair is feasible, so the program is too.
        assert!(rec.feasible);
        let x_err = rec.x_error.unwrap();
        assert!(x_err <= rec.bound * (1.0 + 1e-6) + 1e-7, "{rec:?}");
        for (e, b) in [(rec.nu_error_l1, rec.nu_bound_l1), (rec.nu_error_l2, rec.nu_bound_l2), (rec.nu_error_inf, rec.nu_bound_inf)] {
            assert!(e.unwrap() <= b.unwrap() * (1.0 + 1e-6) + 1e-7, "{rec:?}");
        }
        let (l1, l2, inf) = (rec.nu_error_l1.unwrap(), rec.nu_error_l2.unwrap(), rec.nu_error_inf.unwrap());
        assert!(l1 <= 2.0 * s * inf * (1.0 + 1e-6) + 1e-7);
        assert!(l2 <= (2.0 * s).sqrt() * inf * (1.0 + 1e-6) + 1e-7);
        if rec.estimator == Estimator::Ig {
            assert!(inf <= nb.opt_inf * (1.0 + 1e-6) && l2 <= nb.opt2 * (1.0 + 1e-6));
        }
    }
}

#[test]
fn noiseless_sparse_recovery_has_zero_objective() {
    let (cfg, inst) = small_sparse(10, 3, 1, 3);
    let opts = SynthesisOptions::default();
    let synth = synthesize_all(&inst, &cfg, &opts).unwrap();
    let x = gen_signal(&inst.x, 30, 1).unwrap();
    let omega = &inst.a * &x;
    for setup in &synth.setups {
        let out = estimate_l1(&inst, &setup.contrast, setup.threshold, &omega, &opts.solver).unwrap();
        assert!(out.feasible);
        assert!(out.objective.abs() < 1e-6);
    }
}

#[test]
fn aggregated_program_is_tighter_than_each_block() {
    let (cfg, inst) = small_sparse(10, 3, 1, 4);
    let opts = SynthesisOptions::default();
    let synth = synthesize_all(&inst, &cfg, &opts).unwrap();
    let combined = &synth.setups.iter().find(|s| s.estimator == Estimator::Hig).unwrap().contrast;
    let kbar = varkappa(inst.sigma, inst.epsilon, combined.threshold_count()).unwrap();
    for t in 0..5u64 {
        let x = gen_signal(&inst.x, 30, t).unwrap();
        let nu = gen_sparse_nuisance(inst.n_dim(), 1, cfg.amplitude(), t + 9).unwrap();
        let omega = &inst.a * &x + &nu + gaussian_noise(inst.m(), inst.sigma, t + 19);
        let all = estimate_aggregated(&inst, combined, &omega, &opts.solver).unwrap();
        for role in [ColumnRole::H, ColumnRole::AltH, ColumnRole::G, ColumnRole::AltG] {
            let part = estimate_l1(&inst, &combined.block(role), kbar, &omega, &opts.solver).unwrap();
            if all.feasible {
                assert!(part.feasible);
                assert!(part.objective <= all.objective + 1e-6 * (1.0 + all.objective));
            }
        }
    }
}
