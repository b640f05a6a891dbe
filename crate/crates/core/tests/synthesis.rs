mod common;

use common::{no_nuisance, random_ellitope, random_instance, small_sparse};
use nalgebra::{DMatrix, DVector};
use polyest::certify::{base_value, certify_bounded, certify_sparse, certify_sparse_alt, lmi_matrix};
use polyest::conic::linalg::min_eigenvalue;
use polyest::conic::SolverOptions;
use polyest::ellitope::BasicEllitope;
use polyest::harness::{gen_signal, gen_sparse_nuisance};
use polyest::model::{gaussian_noise, in_confidence_set, varkappa, ColumnRole, ContrastMatrix, NuisanceSpec};
use polyest::recovery::estimate_sparse;
use polyest::sparse_l1::h_set_check;
use polyest::synthesis::*;
use polyest::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn opts() -> SynthesisOptions {
    SynthesisOptions::default()
}

#[test]
fn no_nuisance_round_trip() {
    for seed in 0..3 {
        let inst = no_nuisance(6, 4, 3, seed);
        let rep = synth_no_nuisance(&inst, inst.m(), &opts()).unwrap();
        let direct = certify_bounded(&inst, &rep.contrast, &SolverOptions::default()).unwrap();
        let rel = (direct.value - rep.optimum).abs() / rep.optimum.abs().max(1e-12);
        assert!(rel < 1e-5, "certify {} vs optimum {}", direct.value, rep.optimum);
        assert!(rep.certificate.value <= rep.optimum * (1.0 + 1e-6) + 1e-9);
        rep.certificate.verify(&inst, &rep.contrast).unwrap();
    }
}

#[test]
fn no_nuisance_eigen_recovery_reconstructs_theta() {
    let inst = no_nuisance(6, 4, 3, 7);
    let rep = synth_no_nuisance(&inst, inst.m(), &opts()).unwrap();
    let theta = &rep.theta[0];
    let mut sum = DMatrix::zeros(6, 6);
    for (i, g) in rep.certificate.gamma.iter().enumerate() {
        let c = rep.contrast.col(i);
        sum += &c * c.transpose() * *g;
    }
    assert!((sum - theta).norm() <= 1e-8 * theta.norm().max(1e-12));
    let kappa = varkappa(inst.sigma, inst.epsilon, inst.m()).unwrap();
    for n in rep.contrast.col_norms() {
        assert!((n - 1.0 / kappa).abs() < 1e-10);
    }
}

#[test]
fn zero_target_gives_empty_contrast() {
    let mut inst = no_nuisance(5, 3, 2, 1);
    inst.b = DMatrix::zeros(2, 3);
    let rep = synth_no_nuisance(&inst, 5, &opts()).unwrap();
    assert_eq!(rep.contrast.ncols(), 0);
    assert!(rep.certificate.value.abs() < 1e-7);
}

#[test]
fn no_nuisance_rejects_short_count() {
    let inst = no_nuisance(5, 3, 2, 1);
    assert!(synth_no_nuisance(&inst, 4, &opts()).is_err());
}

#[test]
fn ellitopic_nuisance_near_zero_matches_no_nuisance() {
    let base = no_nuisance(6, 3, 2, 4);
    let n = DMatrix::from_fn(6, 2, |i, j| if i == j { 1.0 } else { 0.0 });
    let set = BasicEllitope::euclidean_ball(2, 1e-4);
    let tiny = random_instance(6, 3, 2, NuisanceSpec::Ellitopic { set }, n, 4);
    let aug = augment_ellitopic(&tiny).unwrap();
    assert_eq!(aug.p(), base.p() + 2);
    let with = synth_ellitopic_nuisance(&tiny, &opts()).unwrap();
    let without = synth_no_nuisance(&base, base.m(), &opts()).unwrap();
    assert!(with.optimum <= 2.0 * without.optimum && with.optimum >= 0.5 * without.optimum);
}

#[test]
fn decomposition_invariants_over_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = random_ellitope(8, 3, &mut rng);
    for seed in 0..20 {
        let f = common::gaussian(8, 5, &mut rng);
        let theta = &f * f.transpose();
        let rho = cone_requirement(&theta, &w);
        let d = decompose_over_ellitope(&theta, rho, &w, 8, seed, 64).unwrap();
        assert!(d.reconstruction_error <= 1e-6);
        assert!(d.weight_sum <= d.claimed_budget + 1e-7);
        assert!((d.claimed_budget - decomposition_factor(8, 3) * rho).abs() < 1e-12);
        for c in d.vectors.column_iter() {
            assert!(w.gauge(c.as_slice()).unwrap() <= 1.0 + 1e-7);
        }
    }
}

#[test]
fn decomposition_rejects_points_outside_the_cone() {
    let w = BasicEllitope::euclidean_ball(3, 1.0);
    let theta = DMatrix::identity(3, 3);
    assert!(matches!(decompose_over_ellitope(&theta, 1.0, &w, 3, 0, 4), Err(Error::InvalidArgument(_))));
    assert!(decompose_over_ellitope(&theta, 3.0, &w, 2, 0, 4).is_err());
}

fn coellitopic_instance(seed: u64) -> polyest::model::ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let nstar = random_ellitope(5, 2, &mut rng);
    random_instance(5, 3, 2, NuisanceSpec::CoEllitopic { nstar }, DMatrix::identity(5, 5), seed)
}

#[test]
fn coellitopic_certificate_below_design_optimum() {
    let inst = coellitopic_instance(2);
    let rep = synth_coellitopic(&inst, &opts()).unwrap();
    let dec = rep.decomposition.as_ref().unwrap();
    assert!(dec.weight_sum <= dec.claimed_budget + 1e-7);
    assert!(rep.certificate.value <= rep.design_value * (1.0 + 1e-6) + 1e-7);
    assert!(rep.design_value <= rep.optimum * (1.0 + 1e-5) + 1e-6);
    rep.certificate.verify(&inst, &rep.contrast).unwrap();
}

#[test]
fn coellitopic_zero_target() {
    let mut inst = coellitopic_instance(3);
    inst.b = DMatrix::zeros(2, 3);
    let rep = synth_coellitopic(&inst, &opts()).unwrap();
    assert_eq!(rep.contrast.ncols(), 0);
    assert!(rep.certificate.value.abs() < 1e-6);
}

#[test]
fn coellitopic_multiplier_scaling_stays_feasible() {
    let inst = coellitopic_instance(5);
    let rep = synth_coellitopic(&inst, &opts()).unwrap();
    let cert = &rep.certificate;
    let ata = inst.a.transpose() * &rep.theta[0] * &inst.a;
    for kappa in [0.5, 2.0] {
        let lambda: Vec<f64> = cert.lambda.iter().map(|v| v / kappa).collect();
        let mu: Vec<f64> = cert.mu.iter().map(|v| v * kappa).collect();
        let m = lmi_matrix(&inst, &lambda, &mu, &(&ata * kappa));
        let scale = m.norm().max(1.0);
        assert!(min_eigenvalue(&m) >= -1e-7 * scale);
        let phi_s = inst.bstar.tset().support(&cert.lambda).unwrap();
        let scaled = base_value(&inst, &lambda, &mu).unwrap();
        let expected = phi_s / kappa + kappa * (base_value(&inst, &cert.lambda, &cert.mu).unwrap() - phi_s);
        assert!((scaled - expected).abs() < 1e-9 * (1.0 + expected.abs()));
    }
}

#[test]
fn h_design_identity_nuisance_without_signal() {
    let (_, mut inst) = small_sparse(8, 3, 1, 1);
    inst.a = DMatrix::zeros(8, 3);
    let kbar = varkappa(inst.sigma, inst.epsilon, 8 + 16).unwrap();
    let h = synth_h_sparse(&inst, 0.25, kbar, &opts()).unwrap();
    for obj in &h.objectives {
        // h = e_k is feasible with objective 2 kbar.
        assert!(*obj <= 2.0 * kbar + 1e-6);
    }
    h_set_check(h.contrast.matrix(), &inst.n, 1, 0.25).unwrap();
}

#[test]
fn h_design_is_admissible_and_monotone() {
    let (_, inst) = small_sparse(10, 4, 2, 3);
    let kbar = varkappa(inst.sigma, inst.epsilon, 30).unwrap();
    let loose = synth_h_sparse(&inst, 0.25, kbar, &opts()).unwrap();
    let tight = synth_h_sparse(&inst, 0.125, kbar, &opts()).unwrap();
    h_set_check(loose.contrast.matrix(), &inst.n, 2, 0.25).unwrap();
    h_set_check(tight.contrast.matrix(), &inst.n, 2, 0.125).unwrap();
    for (a, b) in loose.objectives.iter().zip(&tight.objectives) {
        assert!(b >= &(a - 1e-6 * (1.0 + a.abs())));
    }
}

#[test]
fn h_design_reports_infeasible_column() {
    let (_, mut inst) = small_sparse(6, 3, 1, 2);
    // A zero column of N can never satisfy the diagonal condition.
    inst.n.column_mut(2).fill(0.0);
    let kbar = varkappa(inst.sigma, inst.epsilon, 18).unwrap();
    match synth_h_sparse(&inst, 0.25, kbar, &opts()) {
        Err(Error::InfeasibleColumn { column }) => assert_eq!(column, 2),
        other => panic!("expected an infeasible column, got {other:?}"),
    }
}

#[test]
fn g_design_round_trip_and_proof_inequalities() {
    let (cfg, inst) = small_sparse(12, 4, 1, 5);
    let (m, n) = (inst.m(), inst.n_dim());
    let kbar = varkappa(inst.sigma, inst.epsilon, n + 2 * m).unwrap();
    let h = synth_h_sparse(&inst, 0.25, kbar, &opts()).unwrap();
    let rep = synth_g_sparse(&inst, &h.contrast, 0.25, kbar, &opts()).unwrap();
    rep.certificate.verify(&inst, &rep.contrast).unwrap();
    let g = rep.contrast.block(ColumnRole::G);
    let direct = certify_sparse(&inst, &g, &h.contrast, 0.25, kbar, &SolverOptions::default()).unwrap();
    assert!(direct.value <= rep.certificate.value + 1e-6);
    assert!(rep.certificate.value <= rep.design_value * (1.0 + 1e-6) + 1e-7);

    // Every designed column satisfies (g^T A Delta)^2 <= 1 on the confidence event.
    let solver = SolverOptions::default();
    for t in 0..10u64 {
        let x = gen_signal(&inst.x, 50, t).unwrap();
        let nu = gen_sparse_nuisance(n, 1, cfg.amplitude(), t + 1000).unwrap();
        let xi = gaussian_noise(m, inst.sigma, t + 2000);
        if !in_confidence_set(&rep.contrast, &xi, kbar).unwrap() {
            continue;
        }
        let omega = &inst.a * &x + &inst.n * &nu + &xi;
        let out = estimate_sparse(&inst, &g, &h.contrast, &omega, &solver).unwrap();
        assert!(out.feasible);
        let delta = DVector::from_vec(out.x_hat) - &x;
        let ad = &inst.a * delta;
        for c in g.matrix().column_iter() {
            assert!(c.dot(&ad).powi(2) <= 1.0 + 1e-6);
        }
    }
}

#[test]
fn g_design_zero_target() {
    let (_, mut inst) = small_sparse(8, 3, 1, 6);
    inst.b = DMatrix::zeros(3, 3);
    let kbar = varkappa(inst.sigma, inst.epsilon, 24).unwrap();
    let h = synth_h_sparse(&inst, 0.25, kbar, &opts()).unwrap();
    let rep = synth_g_sparse(&inst, &h.contrast, 0.25, kbar, &opts()).unwrap();
    assert!(rep.certificate.value.abs() < 1e-6);
}

#[test]
fn alternative_design_and_restricted_variants() {
    let (_, inst) = small_sparse(10, 3, 1, 8);
    let m = inst.m();
    let kbar = varkappa(inst.sigma, inst.epsilon, m + 2 * m).unwrap();
    let hbar = ContrastMatrix::identity(m, ColumnRole::AltH);
    let (free, aux) = synth_alternative(&inst, &hbar, kbar, TwoBlockVariant::default(), &opts()).unwrap();
    free.certificate.verify(&inst, &free.contrast).unwrap();
    let direct = certify_sparse_alt(&inst, &free.contrast, &aux, &SolverOptions::default()).unwrap();
    assert!(direct.value <= free.certificate.value + 1e-6);
    assert!(free.certificate.value <= free.design_value * (1.0 + 1e-6) + 1e-7);
    assert!(aux.opt2 <= (2.0 * aux.s as f64).sqrt() * aux.opt_inf * (1.0 + 1e-6));

    let slack = |v: f64| 1e-6 * (1.0 + v.abs());
    let tau0 = TwoBlockVariant { tau_zero: true, ..TwoBlockVariant::default() };
    let (no_tau, _) = synth_alternative(&inst, &hbar, kbar, tau0, &opts()).unwrap();
    assert!(no_tau.optimum >= free.optimum - slack(free.optimum));
    let theta0 = TwoBlockVariant { theta1_zero: true, ..TwoBlockVariant::default() };
    let (no_theta, _) = synth_alternative(&inst, &hbar, kbar, theta0, &opts()).unwrap();
    assert!(no_theta.optimum >= free.optimum - slack(free.optimum));
}

#[test]
fn aggregated_contrast_layout() {
    let (_, inst) = small_sparse(8, 3, 1, 9);
    let (m, n) = (inst.m(), inst.n_dim());
    let kbar = varkappa(inst.sigma, inst.epsilon, n + 2 * m).unwrap();
    let h = synth_h_sparse(&inst, 0.25, kbar, &opts()).unwrap();
    let tilde = synth_g_sparse(&inst, &h.contrast, 0.25, kbar, &opts()).unwrap();
    let kbar_ig = varkappa(inst.sigma, inst.epsilon, 3 * m).unwrap();
    let hbar = ContrastMatrix::identity(m, ColumnRole::AltH);
    let (bar, _) = synth_alternative(&inst, &hbar, kbar_ig, TwoBlockVariant::default(), &opts()).unwrap();
    let agg = build_aggregated_contrast(&tilde, &bar).unwrap();
    assert_eq!(agg.threshold_count(), n + m + 4 * m);
    let count = |r| agg.roles().iter().filter(|x| **x == r).count();
    assert_eq!(count(ColumnRole::H), n);
    assert_eq!(count(ColumnRole::AltH), m);
    assert!(count(ColumnRole::G) <= 2 * m && count(ColumnRole::AltG) <= 2 * m);
    assert_eq!(
        count(ColumnRole::H) + count(ColumnRole::AltH) + count(ColumnRole::G) + count(ColumnRole::AltG),
        agg.ncols()
    );

    let mut other = bar.clone();
    other.instance_hash = "different".into();
    assert!(build_aggregated_contrast(&tilde, &other).is_err());
}

#[test]
fn certificates_locate_their_columns_in_the_estimate_contrast() {
    let (cfg, inst) = small_sparse(10, 3, 1, 8);
    let synth = polyest::harness::synthesize_all(&inst, &cfg, &SynthesisOptions::default()).unwrap();
    for setup in &synth.setups {
        let part = setup.certificate.certified_part(&setup.contrast).unwrap();
        setup.certificate.verify(&inst, &part).unwrap();
        let back = ContrastMatrix::from_text(&setup.contrast.to_text()).unwrap();
        setup.certificate.verify(&inst, &setup.certificate.certified_part(&back).unwrap()).unwrap();
    }
}
