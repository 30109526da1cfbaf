use approx::assert_relative_eq;

use twoweight::instance::{generate_random_instance, GeneratorSpec, Instance};
use twoweight::normest::{grid_oracle_norm, norm_lower_bound, NormConfig, OperatorHandle};
use twoweight::paraproduct::{shifted_apply, t_alpha_apply, AlphaSequence, BetaSequence};
use twoweight::stopping::{normalize_mirror_inputs, proof_mirror};
use twoweight::testing::{direct_testing, talpha_testing};
use twoweight::{AtomId, Lattice, LeafFunction, Measure};

#[test]
fn json_round_trip_preserves_testing_constants() {
    let inst = generate_random_instance(GeneratorSpec { arity: 3, depth: 3, sparsity: 0.3 }, 11).unwrap();
    let back = Instance::from_json_str(&inst.to_json_string().unwrap()).unwrap();
    let b1 = direct_testing(&inst.beta, 3.0, 2.0, &inst.mu, &inst.nu).unwrap();
    let b2 = direct_testing(&back.beta, 3.0, 2.0, &back.mu, &back.nu).unwrap();
    assert_eq!(b1.to_bits(), b2.to_bits());
}

#[test]
fn shifted_operator_is_t_alpha_with_derived_coefficients() {
    let inst = generate_random_instance(GeneratorSpec { arity: 2, depth: 4, sparsity: 0.0 }, 5).unwrap();
    let f = inst.function().abs();
    let alpha = AlphaSequence::from_beta(&inst.beta, 2.0, &inst.mu);
    let a = shifted_apply(&inst.beta, &f, 2.0, &inst.mu);
    let b = t_alpha_apply(&alpha, &f, &inst.mu);
    for (x, y) in a.iter().zip(b.iter()) {
        assert_relative_eq!(x, y, max_relative = 1e-12);
    }
}

#[test]
fn single_coefficient_norm_matches_oracle_and_closed_form() {
    // One coefficient a on the left edge of the root: T f = a (∫ f dμ) 1_left,
    // so ‖T‖ = a μ(root)^{1/p'} ν(left)^{1/p} for uniform masses.
    let l = Lattice::new(2, 1).unwrap();
    let mu = Measure::uniform(l, 1.0).unwrap();
    let mut alpha = AlphaSequence::zeros(l);
    alpha.set(AtomId::ROOT, 0, 2.0).unwrap();
    let p = 3.0;
    let op = OperatorHandle::t_alpha(alpha.clone(), p, &mu, &mu).unwrap();
    let exact = 2.0 * 0.5f64.powf(1.0 / p);
    let est = norm_lower_bound(&op, &NormConfig::default()).unwrap().value;
    assert_relative_eq!(est, exact, max_relative = 1e-8);
    let grid = grid_oracle_norm(&op, 1e-3).unwrap();
    assert!((grid - exact).abs() < 1e-4);
    let (b, _) = talpha_testing(&alpha, p, &mu, &mu).unwrap();
    assert!(b <= exact + 1e-12);
}

#[test]
fn mirror_after_normalization_on_a_deep_tree() {
    let inst = generate_random_instance(GeneratorSpec { arity: 2, depth: 6, sparsity: 0.1 }, 2024).unwrap();
    let l = inst.lattice;
    let alpha = AlphaSequence::from_edges(l, inst.beta.edges().iter().map(|v| v.abs()).collect()).unwrap();
    let f = inst.function().abs();
    let g = LeafFunction::new((0..l.leaf_count()).map(|x| 1.0 + (x % 5) as f64).collect()).unwrap();
    for p in [1.5, 2.0, 3.0] {
        let (a, fn_, gn) = normalize_mirror_inputs(&alpha, &f, &g, p, &inst.mu, &inst.nu).unwrap();
        let rep = proof_mirror(&a, &fn_, &gn, p, &inst.mu, &inst.nu).unwrap();
        assert!(rep.pass, "p = {p}: {:?}", rep.failures().collect::<Vec<_>>());
        assert!(rep.inequalities.iter().any(|c| c.name == "T1.S2"));
        assert!(rep.inequalities.iter().any(|c| c.name == "T2.S2"));
    }
}

#[test]
fn zero_beta_gives_zero_everything() {
    let l = Lattice::new(3, 2).unwrap();
    let mu = Measure::uniform(l, 1.0).unwrap();
    let beta = BetaSequence::zeros(l);
    assert_eq!(direct_testing(&beta, 2.0, 2.0, &mu, &mu).unwrap(), 0.0);
    let op = OperatorHandle::vector_paraproduct(beta, 2.0, 2.0, &mu, &mu).unwrap();
    assert_eq!(norm_lower_bound(&op, &NormConfig::default()).unwrap().value, 0.0);
}
