//! Sawyer-type testing constants.
//!
//! Each constant is a supremum over atoms `J` of a ratio
//! `∫_J h_J dσ / ρ(J)`, where `h_J` only involves atoms `I ⊆ J`. For fixed
//! depth `d` the integrands of all `J` at that depth come from a single
//! [`Lattice::path_sums`] pass started at `d`, so a full profile costs
//! `O(atoms · depth)`.
//!
//! Degenerate atoms: a `J` with `ρ(J) = 0` is skipped when its numerator is
//! 0 and reported as `+∞` otherwise. `+∞` is `f64::INFINITY`, which compares
//! above every finite value.

use crate::error::{Error, Result};
use crate::lattice::{AtomId, Lattice};
use crate::measure::{check_exponent, conjugate, Measure};
use crate::paraproduct::{AlphaSequence, BetaSequence, Symbol};

/// Per-atom testing values; `None` marks atoms outside the supremum.
#[derive(Debug, Clone, PartialEq)]
pub struct TestingProfile {
    lattice: Lattice,
    values: Vec<Option<f64>>,
}

impl TestingProfile {
    pub fn get(&self, atom: AtomId) -> Option<f64> {
        self.values[self.lattice.flat(atom)]
    }

    /// Supremum over all admissible atoms, 0 when there are none.
    pub fn sup(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |a, &b| f64::max(a, b))
    }

    /// Supremum restricted to the given atoms.
    pub fn sup_over(&self, atoms: impl IntoIterator<Item = AtomId>) -> f64 {
        atoms.into_iter().filter_map(|a| self.get(a)).fold(0.0, f64::max)
    }

    /// The atom attaining [`sup`](Self::sup), first in flat order.
    pub fn argmax(&self) -> Option<AtomId> {
        let s = self.sup();
        self.values
            .iter()
            .position(|v| *v == Some(s))
            .map(|i| self.lattice.atom(i))
    }
}

/// Numerators `∫_J integrand(path_sums(depth(J), edge)) dσ` for every atom `J`.
fn numerators(l: Lattice, edge: &[f64], sigma: &Measure, integrand: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; l.atom_count()];
    let leaf_mass = sigma.leaf_mass();
    for d in 0..=l.depth() {
        let sums = l.path_sums(d, edge);
        let block = l.leaf_count() / l.level_len(d);
        let off = l.level_offset(d);
        for (i, chunk) in sums.chunks(block).enumerate() {
            let masses = &leaf_mass[i * block..(i + 1) * block];
            out[off + i] = chunk
                .iter()
                .zip(masses)
                .filter(|(_, m)| **m > 0.0)
                .map(|(v, m)| integrand(*v) * m)
                .sum();
        }
    }
    out
}

fn profile(l: Lattice, numer: &[f64], denom: &[f64], exponent: f64, forced_inf: Option<&[bool]>) -> TestingProfile {
    let values = (0..l.atom_count())
        .map(|k| {
            if forced_inf.is_some_and(|b| b[k]) {
                Some(f64::INFINITY)
            } else if denom[k] > 0.0 {
                Some((numer[k] / denom[k]).powf(1.0 / exponent))
            } else if numer[k] > 0.0 {
                Some(f64::INFINITY)
            } else {
                None
            }
        })
        .collect();
    TestingProfile { lattice: l, values }
}

/// Profile of `(∫_J |Σ_{I⊆J} Δ_I^ν b|^p dν / μ(J))^{1/p}`.
pub fn direct_testing_pi_profile(b: &Symbol, p: f64, mu: &Measure) -> Result<TestingProfile> {
    check_exponent("p", p)?;
    let l = mu.lattice();
    let numer = numerators(l, b.beta().edges(), b.nu(), |v| v.abs().powf(p));
    Ok(profile(l, &numer, mu.atom_masses(), p, None))
}

pub fn direct_testing_pi(b: &Symbol, p: f64, mu: &Measure) -> Result<f64> {
    Ok(direct_testing_pi_profile(b, p, mu)?.sup())
}

/// Profile of `(∫_J (Σ_{I⊆J} |b_I|^q)^{p/q} dν / μ(J))^{1/p}`.
pub fn direct_testing_profile(beta: &BetaSequence, p: f64, q: f64, mu: &Measure, nu: &Measure) -> Result<TestingProfile> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    let l = mu.lattice();
    let numer = numerators(l, &beta.abs_pow(q), nu, |v| v.powf(p / q));
    Ok(profile(l, &numer, mu.atom_masses(), p, None))
}

pub fn direct_testing(beta: &BetaSequence, p: f64, q: f64, mu: &Measure, nu: &Measure) -> Result<f64> {
    Ok(direct_testing_profile(beta, p, q, mu, nu)?.sup())
}

/// Profile of `(∫_J [Σ_{I⊆J} μ(I)^{-1} ∫_I |b_I|^q dν · 1_I]^{r'} dμ / ν(J))^{1/r'}`
/// with `r = p/q`. An atom `I` with `μ(I) = 0` and `∫_I |b_I|^q dν > 0`
/// makes every `J ⊇ I` infinite.
pub fn adjoint_testing_profile(beta: &BetaSequence, p: f64, q: f64, mu: &Measure, nu: &Measure) -> Result<TestingProfile> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    if p <= q {
        return Err(Error::InvalidExponent(format!(
            "adjoint testing needs p > q, got p = {p}, q = {q}"
        )));
    }
    let l = mu.lattice();
    let rc = conjugate(p / q);
    let bq = beta.abs_pow(q);
    let mut node = vec![0.0; l.atom_count()];
    let mut bad = vec![false; l.atom_count()];
    for atom in l.internal_atoms() {
        let k = l.flat(atom);
        let first = l.flat(l.child(atom, 0));
        let num: f64 = (first..first + l.arity()).map(|c| bq[c] * nu.atom_masses()[c]).sum();
        let m = mu.atom_masses()[k];
        if m > 0.0 {
            node[k] = num / m;
        } else if num > 0.0 {
            bad[k] = true;
        }
    }
    for d in (0..l.depth()).rev() {
        for i in 0..l.level_len(d) {
            let atom = AtomId::new(d, i);
            let k = l.flat(atom);
            bad[k] = bad[k] || l.children(atom).any(|c| bad[l.flat(c)]);
        }
    }
    let numer = numerators(l, &l.node_to_edges(&node), mu, |v| v.powf(rc));
    Ok(profile(l, &numer, nu.atom_masses(), rc, Some(&bad)))
}

pub fn adjoint_testing(beta: &BetaSequence, p: f64, q: f64, mu: &Measure, nu: &Measure) -> Result<f64> {
    Ok(adjoint_testing_profile(beta, p, q, mu, nu)?.sup())
}

/// Profiles of the two testing conditions of `T_α`:
/// `B^p = sup_J ∫_J (Σ_{I⊆J} μ(I) a_I)^p dν / μ(J)` and
/// `B*^{p'} = sup_J ∫_J (Σ_{I⊆J} (∫ a_I dν) 1_I)^{p'} dμ / ν(J)`.
///
/// The adjoint integrand is `T_α^*(1_J)` restricted to `I ⊆ J`, where
/// `∫ a_I dν = Σ_{I'} a_{I,I'} ν(I')`.
pub fn talpha_testing_profiles(alpha: &AlphaSequence, p: f64, mu: &Measure, nu: &Measure) -> Result<(TestingProfile, TestingProfile)> {
    check_exponent("p", p)?;
    let l = mu.lattice();
    let pc = conjugate(p);
    let parent_mu = l.node_to_edges(mu.atom_masses());
    let direct_edge: Vec<f64> = alpha.edges().iter().zip(&parent_mu).map(|(a, m)| a * m).collect();
    let numer = numerators(l, &direct_edge, nu, |v| v.powf(p));
    let direct = profile(l, &numer, mu.atom_masses(), p, None);

    let weighted: Vec<f64> = alpha.edges().iter().zip(nu.atom_masses()).map(|(a, m)| a * m).collect();
    let mut node = vec![0.0; l.atom_count()];
    for atom in l.internal_atoms() {
        let first = l.flat(l.child(atom, 0));
        node[l.flat(atom)] = weighted[first..first + l.arity()].iter().sum();
    }
    let numer = numerators(l, &l.node_to_edges(&node), mu, |v| v.powf(pc));
    let adjoint = profile(l, &numer, nu.atom_masses(), pc, None);
    Ok((direct, adjoint))
}

pub fn talpha_testing(alpha: &AlphaSequence, p: f64, mu: &Measure, nu: &Measure) -> Result<(f64, f64)> {
    let (b, bs) = talpha_testing_profiles(alpha, p, mu, nu)?;
    Ok((b.sup(), bs.sup()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_random_instance, GeneratorSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn uniform(m: usize, n: usize) -> Measure {
        Measure::uniform(Lattice::new(m, n).unwrap(), 1.0).unwrap()
    }

    fn root_beta(l: Lattice, row: &[f64]) -> BetaSequence {
        let mut b = BetaSequence::zeros(l);
        b.set_row(AtomId::ROOT, row).unwrap();
        b
    }

    // Direct evaluation of the definitions, one atom at a time.
    fn brute_direct(beta: &BetaSequence, p: f64, q: f64, mu: &Measure, nu: &Measure) -> f64 {
        let l = mu.lattice();
        let mut best: f64 = 0.0;
        for j in l.atoms() {
            let mut num = 0.0;
            for x in l.leaf_range(j) {
                let mut s = 0.0;
                for d in j.depth..l.depth() {
                    let child = l.ancestor_at(l.leaf(x), d + 1);
                    s += beta.edges()[l.flat(child)].abs().powf(q);
                }
                if nu.leaf_mass()[x] > 0.0 {
                    num += s.powf(p / q) * nu.leaf_mass()[x];
                }
            }
            if mu.mass(j) > 0.0 {
                best = best.max((num / mu.mass(j)).powf(1.0 / p));
            } else if num > 0.0 {
                return f64::INFINITY;
            }
        }
        best
    }

    fn brute_adjoint(beta: &BetaSequence, p: f64, q: f64, mu: &Measure, nu: &Measure) -> f64 {
        let l = mu.lattice();
        let rc = conjugate(p / q);
        let mut best: f64 = 0.0;
        for j in l.atoms() {
            let mut num = 0.0;
            for x in l.leaf_range(j) {
                let mut s = 0.0;
                for d in j.depth..l.depth() {
                    let i = l.ancestor_at(l.leaf(x), d);
                    let int: f64 = l
                        .children(i)
                        .map(|c| beta.edges()[l.flat(c)].abs().powf(q) * nu.mass(c))
                        .sum();
                    if int > 0.0 && mu.mass(i) == 0.0 {
                        return f64::INFINITY;
                    }
                    if mu.mass(i) > 0.0 {
                        s += int / mu.mass(i);
                    }
                }
                if mu.leaf_mass()[x] > 0.0 {
                    num += s.powf(rc) * mu.leaf_mass()[x];
                }
            }
            if nu.mass(j) > 0.0 {
                best = best.max((num / nu.mass(j)).powf(1.0 / rc));
            }
        }
        best
    }

    #[test]
    fn direct_examples() {
        let u = uniform(2, 1);
        let l = u.lattice();
        let b = Symbol::new(root_beta(l, &[1.0, -1.0]), &u).unwrap();
        assert_eq!(direct_testing_pi(&b, 2.0, &u).unwrap(), 1.0);
        let z = Symbol::new(BetaSequence::zeros(l), &u).unwrap();
        assert_eq!(direct_testing_pi(&z, 2.0, &u).unwrap(), 0.0);

        let mu = Measure::new(Lattice::new(2, 2).unwrap(), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let nu = uniform(2, 2);
        let mut beta = BetaSequence::zeros(mu.lattice());
        beta.set_row(AtomId::new(1, 0), &[1.0, -1.0]).unwrap();
        let s = Symbol::new(beta.clone(), &nu).unwrap();
        assert_eq!(direct_testing_pi(&s, 2.0, &mu).unwrap(), f64::INFINITY);

        assert_eq!(direct_testing(&root_beta(l, &[1.0, -1.0]), 2.0, 2.0, &u, &u).unwrap(), 1.0);
        assert_eq!(direct_testing(&BetaSequence::zeros(l), 2.0, 2.0, &u, &u).unwrap(), 0.0);
        assert_eq!(direct_testing(&beta, 3.0, 2.0, &mu, &nu).unwrap(), f64::INFINITY);
        assert_eq!(
            direct_testing(&beta.restricted_to_support(&mu), 3.0, 2.0, &mu, &nu).unwrap(),
            0.0
        );
    }

    #[test]
    fn adjoint_examples() {
        let u = uniform(2, 1);
        let l = u.lattice();
        assert_eq!(adjoint_testing(&root_beta(l, &[1.0, -1.0]), 4.0, 2.0, &u, &u).unwrap(), 1.0);
        assert_eq!(adjoint_testing(&BetaSequence::zeros(l), 4.0, 2.0, &u, &u).unwrap(), 0.0);
        assert!(matches!(
            adjoint_testing(&root_beta(l, &[1.0, -1.0]), 2.0, 2.0, &u, &u),
            Err(Error::InvalidExponent(_))
        ));
        let mu = Measure::new(Lattice::new(2, 2).unwrap(), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let nu = uniform(2, 2);
        let mut beta = BetaSequence::zeros(mu.lattice());
        beta.set_row(AtomId::new(1, 0), &[1.0, -1.0]).unwrap();
        let prof = adjoint_testing_profile(&beta, 4.0, 2.0, &mu, &nu).unwrap();
        assert_eq!(prof.get(AtomId::ROOT), Some(f64::INFINITY));
        assert_eq!(prof.get(AtomId::new(1, 1)), Some(0.0));
    }

    #[test]
    fn talpha_examples() {
        let u = uniform(2, 1);
        let l = u.lattice();
        let mut a = AlphaSequence::zeros(l);
        a.set(AtomId::ROOT, 0, 1.0).unwrap();
        let (b, bs) = talpha_testing(&a, 2.0, &u, &u).unwrap();
        assert_relative_eq!(b, 0.5f64.sqrt(), max_relative = 1e-15);
        // T*(1_root) = (∫ a_root dν) 1_root = 0.5 on both leaves
        assert_relative_eq!(bs, 0.5, max_relative = 1e-15);
        assert_eq!(talpha_testing(&AlphaSequence::zeros(l), 2.0, &u, &u).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn profile_sup_and_restriction() {
        let inst = generate_random_instance(GeneratorSpec { arity: 3, depth: 3, sparsity: 0.0 }, 4).unwrap();
        let prof = direct_testing_profile(&inst.beta, 3.0, 2.0, &inst.mu, &inst.nu).unwrap();
        let full = prof.sup();
        let arg = prof.argmax().unwrap();
        assert_eq!(prof.get(arg), Some(full));
        let sub = prof.sup_over(inst.lattice.atoms().filter(|a| a.depth >= 1));
        assert!(sub <= full);
        assert_eq!(prof.sup_over(inst.lattice.atoms()), full);
    }

    fn spec_strategy() -> impl Strategy<Value = (GeneratorSpec, u64)> {
        (2usize..=3, 1usize..=4, prop_oneof![Just(0.0), Just(0.2)], any::<u64>())
            .prop_map(|(arity, depth, sparsity, seed)| (GeneratorSpec { arity, depth, sparsity }, seed))
    }

    proptest! {
        #[test]
        fn matches_brute_force((spec, seed) in spec_strategy(), p in 1.2f64..5.0, q in 1.2f64..3.0) {
            let inst = generate_random_instance(spec, seed).unwrap();
            let fast = direct_testing(&inst.beta, p, q, &inst.mu, &inst.nu).unwrap();
            let slow = brute_direct(&inst.beta, p, q, &inst.mu, &inst.nu);
            prop_assert!(fast == slow || (fast - slow).abs() <= 1e-12 * slow);
            if p > q {
                let fast = adjoint_testing(&inst.beta, p, q, &inst.mu, &inst.nu).unwrap();
                let slow = brute_adjoint(&inst.beta, p, q, &inst.mu, &inst.nu);
                prop_assert!(fast == slow || (fast - slow).abs() <= 1e-12 * slow);
            }
        }

        #[test]
        fn monotone_in_beta((spec, seed) in spec_strategy(), grow in 1.0f64..2.0) {
            let inst = generate_random_instance(spec, seed).unwrap();
            let beta = inst.beta.restricted_to_support(&inst.mu);
            let mut edges = beta.edges().to_vec();
            for (k, e) in edges.iter_mut().enumerate() {
                if k % 3 == 0 {
                    *e *= grow;
                }
            }
            let bigger = BetaSequence::from_edges(inst.lattice, edges).unwrap();
            let (p, q) = (4.0, 2.0);
            let b0 = direct_testing(&beta, p, q, &inst.mu, &inst.nu).unwrap();
            let b1 = direct_testing(&bigger, p, q, &inst.mu, &inst.nu).unwrap();
            prop_assert!(b1 >= b0 * (1.0 - 1e-12));
            let s0 = adjoint_testing(&beta, p, q, &inst.mu, &inst.nu).unwrap();
            let s1 = adjoint_testing(&bigger, p, q, &inst.mu, &inst.nu).unwrap();
            prop_assert!(s1 >= s0 * (1.0 - 1e-12));
        }

        #[test]
        fn scale_covariance((spec, seed) in spec_strategy(), t in 0.1f64..10.0, q in 1.2f64..2.5) {
            let inst = generate_random_instance(spec, seed).unwrap();
            let beta = inst.beta.restricted_to_support(&inst.mu);
            let p = q + 1.0;
            let b = direct_testing(&beta, p, q, &inst.mu, &inst.nu).unwrap();
            let bt = direct_testing(&beta.scaled(t), p, q, &inst.mu, &inst.nu).unwrap();
            prop_assert!((bt - t * b).abs() <= 1e-10 * (t * b).max(1e-300));
            let s = adjoint_testing(&beta, p, q, &inst.mu, &inst.nu).unwrap();
            let st = adjoint_testing(&beta.scaled(t), p, q, &inst.mu, &inst.nu).unwrap();
            let tq = t.powf(q);
            prop_assert!((st - tq * s).abs() <= 1e-10 * (tq * s).max(1e-300));
        }

        #[test]
        fn talpha_matches_beta_constants((spec, seed) in spec_strategy(), q in 1.2f64..2.5, gap in 0.3f64..2.0) {
            let inst = generate_random_instance(spec, seed).unwrap();
            let beta = inst.beta.restricted_to_support(&inst.mu);
            let p = q + gap;
            let r = p / q;
            let alpha = AlphaSequence::from_beta(&beta, q, &inst.mu);
            let (ba, bsa) = talpha_testing(&alpha, r, &inst.mu, &inst.nu).unwrap();
            let bq = direct_testing(&beta, p, q, &inst.mu, &inst.nu).unwrap().powf(q);
            let bs = adjoint_testing(&beta, p, q, &inst.mu, &inst.nu).unwrap();
            prop_assert!((ba - bq).abs() <= 1e-9 * bq.max(1e-300));
            prop_assert!((bsa - bs).abs() <= 1e-9 * bs.max(1e-300));
        }
    }
}
