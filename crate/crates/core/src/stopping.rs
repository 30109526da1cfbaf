//! Stopping-time constructions, Carleson constants and the replay of the
//! two-part estimate of `⟨T_α f, g⟩_ν`.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lattice::{AtomId, Lattice};
use crate::measure::{check_exponent, conjugate, LeafFunction, Measure};
use crate::paraproduct::{t_alpha_apply, AlphaSequence};
use crate::report::{Identity, Inequality};
use crate::testing::talpha_testing;

/// Relative slack allowed on every mirrored inequality.
pub const MIRROR_REL_TOL: f64 = 1e-12;
/// Relative tolerance of the mirrored identities.
pub const MIRROR_IDENTITY_TOL: f64 = 1e-10;
/// How far the inputs of [`proof_mirror`] may be from unit norm and unit
/// testing constants.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A set of atoms, stored as a membership mask in flat order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomSet {
    lattice: Lattice,
    members: Vec<bool>,
}

impl AtomSet {
    pub fn empty(lattice: Lattice) -> Self {
        AtomSet {
            lattice,
            members: vec![false; lattice.atom_count()],
        }
    }

    pub fn full(lattice: Lattice) -> Self {
        AtomSet {
            lattice,
            members: vec![true; lattice.atom_count()],
        }
    }

    pub fn from_atoms(lattice: Lattice, atoms: impl IntoIterator<Item = AtomId>) -> Result<Self> {
        let mut s = Self::empty(lattice);
        for a in atoms {
            lattice.validate(a)?;
            s.insert(a);
        }
        Ok(s)
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn contains(&self, atom: AtomId) -> bool {
        self.members[self.lattice.flat(atom)]
    }

    pub fn insert(&mut self, atom: AtomId) {
        let k = self.lattice.flat(atom);
        self.members[k] = true;
    }

    pub fn remove(&mut self, atom: AtomId) {
        let k = self.lattice.flat(atom);
        self.members[k] = false;
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|b| *b)
    }

    /// Members in depth-then-index order.
    pub fn iter(&self) -> impl Iterator<Item = AtomId> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(k, _)| self.lattice.atom(k))
    }

    pub fn complement(&self) -> Self {
        AtomSet {
            lattice: self.lattice,
            members: self.members.iter().map(|b| !b).collect(),
        }
    }

    /// Per-atom weights `m(I)` on members, 0 elsewhere.
    pub fn mass_weights(&self, m: &Measure) -> Vec<f64> {
        self.members
            .iter()
            .zip(m.atom_masses())
            .map(|(b, w)| if *b { *w } else { 0.0 })
            .collect()
    }
}

impl Serialize for AtomSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

/// One generation step below `atom`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingRecord {
    pub atom: AtomId,
    /// `𝒢*(J)`, pairwise disjoint.
    pub stopping: Vec<AtomId>,
    /// Parents at which the modified criterion fired; empty for the plain
    /// construction.
    pub preliminary: Vec<AtomId>,
    /// `𝓔(J)`: members of the collection inside `J` and outside every
    /// stopping atom.
    pub exceptional: Vec<AtomId>,
    /// Mass of `G(J)`, the union of the stopping atoms.
    pub stopped_mass: f64,
}

impl StoppingRecord {
    /// `𝓔'(J) = 𝓔(J) \ {J}`.
    pub fn exceptional_proper(&self) -> impl Iterator<Item = AtomId> + '_ {
        self.exceptional.iter().copied().filter(move |a| *a != self.atom)
    }

    /// Leaf indicator of `G(J)`.
    pub fn covered_leaves(&self, l: &Lattice) -> Vec<bool> {
        let mut out = vec![false; l.leaf_count()];
        for k in &self.stopping {
            for x in l.leaf_range(*k) {
                out[x] = true;
            }
        }
        out
    }
}

/// Members of `collection` inside `j` that are not inside any atom of `stop`.
fn exceptional_set(collection: &AtomSet, j: AtomId, stop: &AtomSet) -> Vec<AtomId> {
    let l = collection.lattice();
    let mut out = Vec::new();
    let mut stack = vec![j];
    while let Some(i) = stack.pop() {
        if stop.contains(i) {
            continue;
        }
        if collection.contains(i) {
            out.push(i);
        }
        if l.is_internal(i) {
            stack.extend(l.children(i));
        }
    }
    out.sort();
    out
}

fn stopped_mass(stop: &[AtomId], m: &Measure) -> f64 {
    stop.iter().map(|a| m.mass(*a)).sum()
}

/// Plain construction: the maximal members `I ⊆ j` of `collection` with
/// `⟨f⟩_I > 2⟨f⟩_j`.
pub fn stopping_generation(collection: &AtomSet, f: &LeafFunction, mu: &Measure, j: AtomId) -> Result<StoppingRecord> {
    let l = mu.lattice();
    l.validate(j)?;
    f.require_nonnegative()?;
    let avg = mu.averages(f);
    Ok(plain_record(collection, &avg, mu, j))
}

fn plain_record(collection: &AtomSet, avg: &[f64], mu: &Measure, j: AtomId) -> StoppingRecord {
    let l = mu.lattice();
    let thr = 2.0 * avg[l.flat(j)];
    let mut stop = AtomSet::empty(l);
    let mut stack = vec![j];
    while let Some(i) = stack.pop() {
        if collection.contains(i) && avg[l.flat(i)] > thr {
            stop.insert(i);
        } else if l.is_internal(i) {
            stack.extend(l.children(i));
        }
    }
    let stopping: Vec<AtomId> = stop.iter().collect();
    StoppingRecord {
        atom: j,
        exceptional: exceptional_set(collection, j, &stop),
        stopped_mass: stopped_mass(&stopping, mu),
        stopping,
        preliminary: Vec::new(),
    }
}

/// Property (i), `⟨f⟩_I ≤ 2⟨f⟩_J` on `𝓔(J)`, and property (ii),
/// `μ(G(J)) < ½μ(J)` when `μ(J) > 0`.
pub fn plain_generation_checks(record: &StoppingRecord, f: &LeafFunction, mu: &Measure) -> Vec<Inequality> {
    let j = record.atom;
    let aj = mu.average(f, j);
    let worst = record
        .exceptional
        .iter()
        .map(|i| mu.average(f, *i))
        .fold(0.0, f64::max);
    let mut out = vec![Inequality::new(format!("property_i[{j}]"), worst, 2.0 * aj, 0.0)];
    if mu.mass(j) > 0.0 {
        out.push(Inequality::strict(format!("property_ii[{j}]"), record.stopped_mass, 0.5 * mu.mass(j)));
    }
    out
}

/// Modified construction: the criterion `⟨f⟩_Î ≥ 2⟨f⟩_J` is checked on parents
/// `Î` of members of `collection`, always against the original `J`.
pub fn modified_stopping_generation(collection: &AtomSet, f: &LeafFunction, mu: &Measure, j: AtomId) -> Result<StoppingRecord> {
    let l = mu.lattice();
    l.validate(j)?;
    f.require_nonnegative()?;
    let avg = mu.averages(f);
    Ok(modified_record(collection, &avg, mu, j))
}

fn modified_record(collection: &AtomSet, avg: &[f64], mu: &Measure, j: AtomId) -> StoppingRecord {
    let l = mu.lattice();
    let base = avg[l.flat(j)];
    let mut stop = AtomSet::empty(l);
    let mut preliminary = Vec::new();
    if base > 0.0 {
        let thr = 2.0 * base;
        let mut queue = std::collections::VecDeque::from([j]);
        while let Some(k) = queue.pop_front() {
            let mut stack = vec![k];
            while let Some(i) = stack.pop() {
                if !l.is_internal(i) {
                    continue;
                }
                let fires = avg[l.flat(i)] >= thr && l.children(i).any(|c| collection.contains(c));
                if fires {
                    preliminary.push(i);
                    for c in l.children(i) {
                        if collection.contains(c) {
                            stop.insert(c);
                        } else {
                            queue.push_back(c);
                        }
                    }
                } else {
                    stack.extend(l.children(i));
                }
            }
        }
    }
    preliminary.sort();
    let stopping: Vec<AtomId> = stop.iter().collect();
    StoppingRecord {
        atom: j,
        exceptional: exceptional_set(collection, j, &stop),
        stopped_mass: stopped_mass(&stopping, mu),
        stopping,
        preliminary,
    }
}

/// `Σ_{I∈𝒢*(J)} μ(I) ≤ ½μ(J)` and `⟨f⟩_Î ≤ 2⟨f⟩_J` for `I ∈ 𝓔'(J)`.
pub fn modified_generation_checks(record: &StoppingRecord, f: &LeafFunction, mu: &Measure) -> Vec<Inequality> {
    let l = mu.lattice();
    let j = record.atom;
    let worst = record
        .exceptional_proper()
        .filter_map(|i| l.parent(i))
        .map(|p| mu.average(f, p))
        .fold(0.0, f64::max);
    vec![
        Inequality::relative(format!("g_decay[{j}]"), record.stopped_mass, 0.5 * mu.mass(j), MIRROR_REL_TOL),
        Inequality::new(format!("aver_est[{j}]"), worst, 2.0 * mu.average(f, j), 0.0),
    ]
}

/// The generations `𝒢*₁, 𝒢*₂, …` grown from disjoint roots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingForest {
    pub roots: Vec<AtomId>,
    pub generations: Vec<Vec<AtomId>>,
    /// One record per root and per stopping atom, roots first, then by
    /// generation.
    pub records: Vec<StoppingRecord>,
}

impl StoppingForest {
    /// `𝒢`, every stopping atom, sorted.
    pub fn stopping_atoms(&self) -> Vec<AtomId> {
        let mut v: Vec<AtomId> = self.generations.iter().flatten().copied().collect();
        v.sort();
        v
    }

    /// `𝒢 ∪ 𝒢₀`.
    pub fn members(&self) -> Vec<AtomId> {
        let mut v = self.stopping_atoms();
        v.extend(&self.roots);
        v.sort();
        v.dedup();
        v
    }

    pub fn record(&self, atom: AtomId) -> Option<&StoppingRecord> {
        self.records.iter().find(|r| r.atom == atom)
    }

    /// Weights `m(I)` on `𝒢 ∪ 𝒢₀`.
    pub fn mass_weights(&self, m: &Measure) -> Vec<f64> {
        let l = m.lattice();
        let mut w = vec![0.0; l.atom_count()];
        for a in self.members() {
            w[l.flat(a)] = m.mass(a);
        }
        w
    }
}

fn check_roots(roots: &AtomSet) -> Result<()> {
    let l = roots.lattice();
    for r in roots.iter() {
        let mut a = r;
        while let Some(p) = l.parent(a) {
            if roots.contains(p) {
                return Err(Error::OverlappingRoots(p, r));
            }
            a = p;
        }
    }
    Ok(())
}

fn grow_forest(roots: &AtomSet, mut step: impl FnMut(AtomId) -> StoppingRecord) -> Result<StoppingForest> {
    check_roots(roots)?;
    let mut records = Vec::new();
    let mut generations = Vec::new();
    let mut current: Vec<AtomId> = roots.iter().collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for j in current {
            let rec = step(j);
            next.extend(rec.stopping.iter().copied());
            records.push(rec);
        }
        next.sort();
        if !next.is_empty() {
            generations.push(next.clone());
        }
        current = next;
    }
    Ok(StoppingForest {
        roots: roots.iter().collect(),
        generations,
        records,
    })
}

/// Plain stopping forest over `collection`.
pub fn stopping_forest(collection: &AtomSet, f: &LeafFunction, mu: &Measure, roots: &AtomSet) -> Result<StoppingForest> {
    f.require_nonnegative()?;
    let avg = mu.averages(f);
    grow_forest(roots, |j| plain_record(collection, &avg, mu, j))
}

/// Modified stopping forest over `collection`.
pub fn modified_stopping_forest(collection: &AtomSet, f: &LeafFunction, mu: &Measure, roots: &AtomSet) -> Result<StoppingForest> {
    f.require_nonnegative()?;
    let avg = mu.averages(f);
    grow_forest(roots, |j| modified_record(collection, &avg, mu, j))
}

/// Maximal atoms of a set, a disjoint cover of its union.
pub fn maximal_atoms(set: &AtomSet) -> AtomSet {
    let l = set.lattice();
    let mut out = AtomSet::empty(l);
    for a in set.iter() {
        let mut covered = false;
        let mut b = a;
        while let Some(p) = l.parent(b) {
            if set.contains(p) {
                covered = true;
                break;
            }
            b = p;
        }
        if !covered {
            out.insert(a);
        }
    }
    out
}

/// `sup_J Σ_{I⊆J} w_I / μ(J)` over `μ(J) > 0`, `+∞` when some `μ(J) = 0`
/// carries positive weight, and 0 when no atom qualifies.
pub fn carleson_constant(weights: &[f64], mu: &Measure) -> f64 {
    let l = mu.lattice();
    assert_eq!(weights.len(), l.atom_count());
    let mut sums = weights.to_vec();
    for d in (0..l.depth()).rev() {
        for k in 0..l.level_len(d) {
            let a = AtomId::new(d, k);
            let first = l.flat(l.child(a, 0));
            let s: f64 = sums[first..first + l.arity()].iter().sum();
            sums[l.flat(a)] += s;
        }
    }
    let mut c: f64 = 0.0;
    for (s, m) in sums.iter().zip(mu.atom_masses()) {
        if *m > 0.0 {
            c = c.max(s / m);
        } else if *s > 0.0 {
            return f64::INFINITY;
        }
    }
    c
}

/// `(Σ_I w_I |⟨f⟩_I|^p, C (p')^p ‖f‖_p^p)` with `C` the Carleson constant of `w`.
pub fn carleson_embedding_check(weights: &[f64], f: &LeafFunction, p: f64, mu: &Measure) -> Result<(f64, f64)> {
    check_exponent("p", p)?;
    let avg = mu.averages(f);
    let lhs = weights
        .iter()
        .zip(&avg)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, a)| w * a.abs().powf(p))
        .sum();
    let norm = mu.lp_norm_pow(f, p);
    let bound = if norm == 0.0 {
        0.0
    } else {
        carleson_constant(weights, mu) * conjugate(p).powf(p) * norm
    };
    Ok((lhs, bound))
}

/// `𝒜 = {I : ⟨f⟩_μ^p μ(I) ≥ ⟨g⟩_ν^{p'} ν(I)}` and its complement `ℬ`.
pub fn split_collections(f: &LeafFunction, g: &LeafFunction, p: f64, mu: &Measure, nu: &Measure) -> Result<(AtomSet, AtomSet)> {
    check_exponent("p", p)?;
    f.require_nonnegative()?;
    g.require_nonnegative()?;
    let l = mu.lattice();
    let pc = conjugate(p);
    let fa = mu.averages(f);
    let ga = nu.averages(g);
    let mut a = AtomSet::empty(l);
    for k in 0..l.atom_count() {
        let lhs = fa[k].powf(p) * mu.atom_masses()[k];
        let rhs = ga[k].powf(pc) * nu.atom_masses()[k];
        if lhs >= rhs {
            a.insert(l.atom(k));
        }
    }
    let b = a.complement();
    Ok((a, b))
}

/// Per-`J` terms of `S₁`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingTerms {
    pub atom: AtomId,
    pub a: f64,
    pub b: f64,
    pub norm_f: f64,
}

/// One half `T_i = S₁ + S₂` of the pairing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfReport {
    pub total: f64,
    pub s1: f64,
    pub s2: f64,
    pub sum_a: f64,
    pub sum_b: f64,
    pub roots: Vec<AtomId>,
    pub stopping: Vec<AtomId>,
    pub terms: Vec<StoppingTerms>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub p: f64,
    pub f_norm: f64,
    pub g_norm: f64,
    pub b: f64,
    pub b_star: f64,
    pub pairing: f64,
    pub split_a: AtomSet,
    pub split_b: AtomSet,
    pub t1: HalfReport,
    pub t2: HalfReport,
    pub identities: Vec<Identity>,
    pub inequalities: Vec<Inequality>,
    pub pass: bool,
}

impl DecompositionReport {
    pub fn failures(&self) -> impl Iterator<Item = &Inequality> {
        self.inequalities.iter().filter(|i| !i.pass)
    }

    /// Smallest slack over all inequalities.
    pub fn worst_slack(&self) -> f64 {
        self.inequalities.iter().map(|i| i.slack).fold(f64::INFINITY, f64::min)
    }
}

/// Rescales `f`, `g` to unit norm and `α` so that `max(B, B*) = 1`.
pub fn normalize_mirror_inputs(
    alpha: &AlphaSequence,
    f: &LeafFunction,
    g: &LeafFunction,
    p: f64,
    mu: &Measure,
    nu: &Measure,
) -> Result<(AlphaSequence, LeafFunction, LeafFunction)> {
    check_exponent("p", p)?;
    f.require_nonnegative()?;
    g.require_nonnegative()?;
    let nf = mu.lp_norm(f, p);
    let ng = nu.lp_norm(g, conjugate(p));
    if nf == 0.0 || ng == 0.0 {
        return Err(Error::NoAdmissibleInput("f or g has zero norm".into()));
    }
    let (b, bs) = talpha_testing(alpha, p, mu, nu)?;
    let k = b.max(bs);
    let alpha = if k > 0.0 { alpha.scaled(1.0 / k) } else { alpha.clone() };
    Ok((alpha, f.map(|v| v / nf), g.map(|v| v / ng)))
}

struct Mirror<'a> {
    l: Lattice,
    p: f64,
    pc: f64,
    alpha: &'a AlphaSequence,
    f: &'a LeafFunction,
    g: &'a LeafFunction,
    mu: &'a Measure,
    nu: &'a Measure,
    f_int: Vec<f64>,
    g_int: Vec<f64>,
    f_avg: Vec<f64>,
    g_avg: Vec<f64>,
    checks: Vec<Inequality>,
}

impl Mirror<'_> {
    fn check(&mut self, name: String, lhs: f64, rhs: f64) {
        self.checks.push(Inequality::relative(name, lhs, rhs, MIRROR_REL_TOL));
    }

    /// `a_I (∫_Î f dμ)(∫_I g dν)` for a non-root atom.
    fn term(&self, i: AtomId) -> f64 {
        let k = self.l.flat(i);
        let parent = self.l.parent(i).expect("non-root term");
        self.alpha.edges()[k] * self.f_int[self.l.flat(parent)] * self.g_int[k]
    }

    /// `Σ_{I∈𝒢} ⟨f⟩_Î^p a_I^p μ(Î)^p ν(I)` and the larger
    /// `Σ_{Î} ⟨f⟩_Î^p α_Î` over the distinct parents.
    fn s2_first_factor(&self, stop: &[AtomId], carleson_alpha: &[f64]) -> (f64, f64) {
        let p = self.p;
        let mut x = 0.0;
        let mut parents = Vec::new();
        for i in stop {
            let k = self.l.flat(*i);
            let pa = self.l.parent(*i).expect("non-root stopping atom");
            let pk = self.l.flat(pa);
            x += (self.f_avg[pk] * self.alpha.edges()[k] * self.mu.atom_masses()[pk]).powf(p) * self.nu.atom_masses()[k];
            parents.push(pk);
        }
        parents.sort();
        parents.dedup();
        let m = parents.iter().map(|pk| self.f_avg[*pk].powf(p) * carleson_alpha[*pk]).sum();
        (x, m)
    }
}

/// `α_I = Σ_{I'} a_{I,I'}^p μ(I)^p ν(I')`.
fn alpha_carleson_weights(alpha: &AlphaSequence, p: f64, mu: &Measure, nu: &Measure) -> Vec<f64> {
    let l = mu.lattice();
    let mut w = vec![0.0; l.atom_count()];
    for atom in l.internal_atoms() {
        let k = l.flat(atom);
        let m = mu.atom_masses()[k];
        w[k] = l
            .children(atom)
            .map(|c| {
                let ck = l.flat(c);
                (alpha.edges()[ck] * m).powf(p) * nu.atom_masses()[ck]
            })
            .sum();
    }
    w
}

/// Replays the estimate of `⟨T_α f, g⟩_ν` on normalized inputs, checking
/// every intermediate inequality with its explicit constant.
pub fn proof_mirror(
    alpha: &AlphaSequence,
    f: &LeafFunction,
    g: &LeafFunction,
    p: f64,
    mu: &Measure,
    nu: &Measure,
) -> Result<DecompositionReport> {
    check_exponent("p", p)?;
    f.require_nonnegative()?;
    g.require_nonnegative()?;
    let l = mu.lattice();
    let pc = conjugate(p);
    let f_norm = mu.lp_norm(f, p);
    let g_norm = nu.lp_norm(g, pc);
    if (f_norm - 1.0).abs() > NORMALIZATION_TOL || (g_norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Unnormalized(format!(
            "need unit norms, got ‖f‖ = {f_norm}, ‖g‖ = {g_norm}"
        )));
    }
    let (b, b_star) = talpha_testing(alpha, p, mu, nu)?;
    if b.max(b_star) > 1.0 + NORMALIZATION_TOL {
        return Err(Error::Unnormalized(format!(
            "need testing constants at most 1, got B = {b}, B* = {b_star}"
        )));
    }

    let (split_a, split_b) = split_collections(f, g, p, mu, nu)?;
    let mut m = Mirror {
        l,
        p,
        pc,
        alpha,
        f,
        g,
        mu,
        nu,
        f_int: mu.integrals(f),
        g_int: nu.integrals(g),
        f_avg: mu.averages(f),
        g_avg: nu.averages(g),
        checks: Vec::new(),
    };
    let carleson_alpha = alpha_carleson_weights(alpha, p, mu, nu);
    let c_alpha = carleson_constant(&carleson_alpha, mu);
    m.check("lemma.alpha_carleson".into(), c_alpha, b.powf(p));
    let root_set = AtomSet::from_atoms(l, [AtomId::ROOT])?;

    let t1 = first_half(&mut m, &split_a, &root_set, b, f_norm, g_norm, &carleson_alpha)?;
    let t2 = second_half(&mut m, &split_b, &root_set, b, b_star, f_norm, g_norm, &carleson_alpha)?;

    let tf = t_alpha_apply(alpha, f, mu);
    let pairing = nu.pairing(&tf, g);
    let all_terms: f64 = l.atoms().skip(1).map(|i| m.term(i).abs()).sum();
    let half_scale = |set: &AtomSet| -> f64 { set.iter().filter(|i| *i != AtomId::ROOT).map(|i| m.term(i).abs()).sum() };
    let identities = vec![
        Identity::new("pairing = T1 + T2", pairing, t1.total + t2.total, all_terms, MIRROR_IDENTITY_TOL),
        Identity::new("T1 = S1 + S2", t1.total, t1.s1 + t1.s2, half_scale(&split_a), MIRROR_IDENTITY_TOL),
        Identity::new("T2 = S1 + S2", t2.total, t2.s1 + t2.s2, half_scale(&split_b), MIRROR_IDENTITY_TOL),
    ];

    let bound1 = t1_bound(p, b, f_norm, g_norm);
    let bound2 = t2_bound(p, b, b_star, f_norm, g_norm);
    m.check("total".into(), pairing, bound1 + bound2);

    let inequalities = m.checks;
    let pass = identities.iter().all(|i| i.pass) && inequalities.iter().all(|i| i.pass);
    Ok(DecompositionReport {
        p,
        f_norm,
        g_norm,
        b,
        b_star,
        pairing,
        split_a,
        split_b,
        t1,
        t2,
        identities,
        inequalities,
        pass,
    })
}

fn t1_s1_bound(p: f64, b: f64, nf: f64, ng: f64) -> f64 {
    let pc = conjugate(p);
    2f64.powf(1.0 + 1.0 / p) * pc * b * nf * ng + 4.0 * pc.powf(p) * b * nf.powf(p)
}

fn t1_s2_bound(p: f64, b: f64, nf: f64) -> f64 {
    let pc = conjugate(p);
    2f64.powf(1.0 / pc) * b * pc.powf(p) * nf.powf(p)
}

fn t1_bound(p: f64, b: f64, nf: f64, ng: f64) -> f64 {
    t1_s1_bound(p, b, nf, ng) + t1_s2_bound(p, b, nf)
}

fn t2_s1_bound(p: f64, b_star: f64, nf: f64, ng: f64) -> f64 {
    let pc = conjugate(p);
    2f64.powf(1.0 + 1.0 / pc) * p * b_star * nf * ng + 4.0 * p.powf(pc) * b_star * ng.powf(pc)
}

fn t2_s2_bound(p: f64, b: f64, nf: f64, ng: f64) -> f64 {
    let pc = conjugate(p);
    2f64.powf(1.0 / pc) * b * pc * p * nf * ng
}

fn t2_bound(p: f64, b: f64, b_star: f64, nf: f64, ng: f64) -> f64 {
    t2_s1_bound(p, b_star, nf, ng) + t2_s2_bound(p, b, nf, ng)
}

fn first_half(
    m: &mut Mirror,
    split_a: &AtomSet,
    roots: &AtomSet,
    b: f64,
    nf: f64,
    ng: f64,
    carleson_alpha: &[f64],
) -> Result<HalfReport> {
    let (l, p, pc) = (m.l, m.p, m.pc);
    let forest = modified_stopping_forest(split_a, m.f, m.mu, roots)?;
    let total: f64 = split_a.iter().filter(|i| *i != AtomId::ROOT).map(|i| m.term(i)).sum();

    let mut terms = Vec::new();
    for rec in &forest.records {
        let j = rec.atom;
        let jk = l.flat(j);
        for c in modified_generation_checks(rec, m.f, m.mu) {
            m.checks.push(Inequality { name: format!("T1.{}", c.name), ..c });
        }
        let mut fj = vec![0.0; l.leaf_count()];
        for i in rec.exceptional_proper() {
            let c = m.alpha.edges()[l.flat(i)] * m.f_int[l.flat(l.parent(i).unwrap())];
            for x in l.leaf_range(i) {
                fj[x] += c;
            }
        }
        let covered = rec.covered_leaves(&l);
        let mut a = 0.0;
        let mut bj = 0.0;
        let mut g_rest = 0.0;
        for x in l.leaf_range(j) {
            let w = m.nu.leaf_mass()[x];
            let v = fj[x] * m.g[x] * w;
            if covered[x] {
                bj += v;
            } else {
                a += v;
                g_rest += m.g[x].powf(pc) * w;
            }
        }
        let norm_f = m.nu.lp_norm(&fj, p);
        let scale = 2.0 * m.f_avg[jk] * m.mu.atom_masses()[jk].powf(1.0 / p) * b;
        let stop_sum: f64 = rec
            .stopping
            .iter()
            .map(|k| m.f_avg[l.flat(*k)].powf(p) * m.mu.mass(*k))
            .sum();
        m.check(format!("T1.norm_F[{j}]"), norm_f, scale);
        m.check(format!("T1.A[{j}]"), a, scale * g_rest.powf(1.0 / pc));
        m.check(format!("T1.B[{j}]"), bj, scale * stop_sum.powf(1.0 / pc));
        terms.push(StoppingTerms { atom: j, a, b: bj, norm_f });
    }

    let members = forest.members();
    let weights = forest.mass_weights(m.mu);
    m.check("T1.carleson".into(), carleson_constant(&weights, m.mu), 2.0);
    let embed: f64 = members
        .iter()
        .map(|j| m.f_avg[l.flat(*j)].powf(p) * m.mu.mass(*j))
        .sum();
    m.check("T1.f_embed".into(), embed, 2.0 * pc.powf(p) * nf.powf(p));
    let sum_a: f64 = terms.iter().map(|t| t.a).sum();
    let sum_b: f64 = terms.iter().map(|t| t.b).sum();
    m.check("T1.sum_A".into(), sum_a, 2f64.powf(1.0 + 1.0 / p) * pc * b * nf * ng);
    m.check("T1.sum_B".into(), sum_b, 4.0 * pc.powf(p) * b * nf.powf(p));
    let s1 = sum_a + sum_b;
    m.check("T1.S1".into(), s1, t1_s1_bound(p, b, nf, ng));

    let stop = forest.stopping_atoms();
    let s2: f64 = stop.iter().map(|i| m.term(*i)).sum();
    let (x, xm) = m.s2_first_factor(&stop, carleson_alpha);
    let y: f64 = stop.iter().map(|i| m.f_avg[l.flat(*i)].powf(p) * m.mu.mass(*i)).sum();
    m.check("T1.S2_holder".into(), s2, x.powf(1.0 / p) * y.powf(1.0 / pc));
    m.check("T1.S2_parents".into(), x, xm);
    m.check("T1.est_S2".into(), xm, b.powf(p) * pc.powf(p) * nf.powf(p));
    m.check("T1.S2_embed".into(), y, 2.0 * pc.powf(p) * nf.powf(p));
    m.check("T1.S2".into(), s2, t1_s2_bound(p, b, nf));
    m.check("T1.total".into(), total, t1_bound(p, b, nf, ng));

    Ok(HalfReport {
        total,
        s1,
        s2,
        sum_a,
        sum_b,
        roots: forest.roots.clone(),
        stopping: stop,
        terms,
    })
}

#[allow(clippy::too_many_arguments)]
fn second_half(
    m: &mut Mirror,
    split_b: &AtomSet,
    roots: &AtomSet,
    b: f64,
    b_star: f64,
    nf: f64,
    ng: f64,
    carleson_alpha: &[f64],
) -> Result<HalfReport> {
    let (l, p, pc) = (m.l, m.p, m.pc);
    let forest = stopping_forest(split_b, m.g, m.nu, roots)?;
    let total: f64 = split_b.iter().filter(|i| *i != AtomId::ROOT).map(|i| m.term(i)).sum();

    let mut terms = Vec::new();
    for rec in &forest.records {
        let j = rec.atom;
        let jk = l.flat(j);
        for c in plain_generation_checks(rec, m.g, m.nu) {
            m.checks.push(Inequality { name: format!("T2.{}", c.name), ..c });
        }
        let mut fj = vec![0.0; l.leaf_count()];
        for i in rec.exceptional_proper() {
            let ik = l.flat(i);
            let c = m.alpha.edges()[ik] * m.g_int[ik];
            for x in l.leaf_range(l.parent(i).unwrap()) {
                fj[x] += c;
            }
        }
        let covered = rec.covered_leaves(&l);
        let mut a = 0.0;
        let mut bj = 0.0;
        let mut f_rest = 0.0;
        for x in l.leaf_range(j) {
            let w = m.mu.leaf_mass()[x];
            let v = fj[x] * m.f[x] * w;
            if covered[x] {
                bj += v;
            } else {
                a += v;
                f_rest += m.f[x].powf(p) * w;
            }
        }
        let norm_f = m.mu.lp_norm(&fj, pc);
        let scale = 2.0 * m.g_avg[jk] * m.nu.atom_masses()[jk].powf(1.0 / pc) * b_star;
        let stop_sum: f64 = rec
            .stopping
            .iter()
            .map(|k| m.g_avg[l.flat(*k)].powf(pc) * m.nu.mass(*k))
            .sum();
        m.check(format!("T2.norm_F[{j}]"), norm_f, scale);
        m.check(format!("T2.A[{j}]"), a, scale * f_rest.powf(1.0 / p));
        m.check(format!("T2.B[{j}]"), bj, scale * stop_sum.powf(1.0 / p));
        terms.push(StoppingTerms { atom: j, a, b: bj, norm_f });
    }

    let members = forest.members();
    let weights = forest.mass_weights(m.nu);
    m.checks.push(Inequality::strict("T2.carleson", carleson_constant(&weights, m.nu), 2.0));
    let embed: f64 = members
        .iter()
        .map(|j| m.g_avg[l.flat(*j)].powf(pc) * m.nu.mass(*j))
        .sum();
    m.check("T2.g_embed".into(), embed, 2.0 * p.powf(pc) * ng.powf(pc));
    let sum_a: f64 = terms.iter().map(|t| t.a).sum();
    let sum_b: f64 = terms.iter().map(|t| t.b).sum();
    m.check("T2.sum_A".into(), sum_a, 2f64.powf(1.0 + 1.0 / pc) * p * b_star * nf * ng);
    m.check("T2.sum_B".into(), sum_b, 4.0 * p.powf(pc) * b_star * ng.powf(pc));
    let s1 = sum_a + sum_b;
    m.check("T2.S1".into(), s1, t2_s1_bound(p, b_star, nf, ng));

    let stop = forest.stopping_atoms();
    let s2: f64 = stop.iter().map(|i| m.term(*i)).sum();
    let (x, xm) = m.s2_first_factor(&stop, carleson_alpha);
    let y: f64 = stop.iter().map(|i| m.g_avg[l.flat(*i)].powf(pc) * m.nu.mass(*i)).sum();
    m.check("T2.S2_holder".into(), s2, x.powf(1.0 / p) * y.powf(1.0 / pc));
    m.check("T2.S2_parents".into(), x, xm);
    m.check("T2.est_S2".into(), xm, b.powf(p) * pc.powf(p) * nf.powf(p));
    m.check("T2.S2_embed".into(), y, 2.0 * p.powf(pc) * ng.powf(pc));
    m.check("T2.S2".into(), s2, t2_s2_bound(p, b, nf, ng));
    m.check("T2.total".into(), total, t2_bound(p, b, b_star, nf, ng));

    Ok(HalfReport {
        total,
        s1,
        s2,
        sum_a,
        sum_b,
        roots: forest.roots.clone(),
        stopping: stop,
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_random_instance, GeneratorSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lf(v: &[f64]) -> LeafFunction {
        LeafFunction::new(v.to_vec()).unwrap()
    }

    fn binary2() -> (Lattice, Measure) {
        let l = Lattice::new(2, 2).unwrap();
        (l, Measure::uniform(l, 1.0).unwrap())
    }

    #[test]
    fn plain_generation_example() {
        let (l, mu) = binary2();
        let rec = stopping_generation(&AtomSet::full(l), &lf(&[8.0, 4.0, 0.0, 0.0]), &mu, AtomId::ROOT).unwrap();
        assert_eq!(rec.stopping, vec![AtomId::new(2, 0)]);
        assert_eq!(rec.exceptional.len(), 6);
        assert!(plain_generation_checks(&rec, &lf(&[8.0, 4.0, 0.0, 0.0]), &mu).iter().all(|c| c.pass));
    }

    #[test]
    fn plain_generation_trivial_cases() {
        let (l, mu) = binary2();
        let all = AtomSet::full(l);
        let rec = stopping_generation(&all, &lf(&[2.0; 4]), &mu, AtomId::ROOT).unwrap();
        assert!(rec.stopping.is_empty());
        assert_eq!(rec.exceptional.len(), 7);

        let null = Measure::new(l, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let rec = stopping_generation(&all, &lf(&[8.0, 1.0, 0.0, 0.0]), &null, AtomId::new(1, 0)).unwrap();
        assert!(rec.stopping.is_empty());

        assert!(matches!(
            stopping_generation(&all, &lf(&[-1.0, 0.0, 0.0, 0.0]), &mu, AtomId::ROOT),
            Err(Error::NegativeFunction { .. })
        ));
    }

    #[test]
    fn forest_examples() {
        let (l, mu) = binary2();
        let roots = AtomSet::from_atoms(l, [AtomId::ROOT]).unwrap();
        let f = lf(&[8.0, 4.0, 0.0, 0.0]);
        let forest = stopping_forest(&AtomSet::empty(l), &f, &mu, &roots).unwrap();
        assert!(forest.generations.is_empty());

        let forest = stopping_forest(&AtomSet::full(l), &f, &mu, &roots).unwrap();
        assert_eq!(forest.generations, vec![vec![AtomId::new(2, 0)]]);
        assert_eq!(forest.stopping_atoms(), vec![AtomId::new(2, 0)]);
        assert!(carleson_constant(&forest.mass_weights(&mu), &mu) < 2.0);

        let overlapping = AtomSet::from_atoms(l, [AtomId::ROOT, AtomId::new(1, 1)]).unwrap();
        assert!(matches!(
            stopping_forest(&AtomSet::full(l), &f, &mu, &overlapping),
            Err(Error::OverlappingRoots(..))
        ));
    }

    #[test]
    fn modified_generation_example() {
        let (l, mu) = binary2();
        let a = AtomSet::from_atoms(l, [AtomId::new(2, 0)]).unwrap();
        let f = lf(&[8.0, 4.0, 0.0, 0.0]);
        let rec = modified_stopping_generation(&a, &f, &mu, AtomId::ROOT).unwrap();
        assert_eq!(rec.preliminary, vec![AtomId::new(1, 0)]);
        assert_eq!(rec.stopping, vec![AtomId::new(2, 0)]);
        assert!(modified_generation_checks(&rec, &f, &mu).iter().all(|c| c.pass));

        let rec = modified_stopping_generation(&AtomSet::empty(l), &f, &mu, AtomId::ROOT).unwrap();
        assert!(rec.stopping.is_empty());
        let rec = modified_stopping_generation(&AtomSet::full(l), &lf(&[3.0; 4]), &mu, AtomId::ROOT).unwrap();
        assert!(rec.stopping.is_empty());
    }

    #[test]
    fn modified_recursion_reaches_below_non_members() {
        // The preliminary parent's right child is outside the collection, so
        // the search restarts inside it, still against the root average.
        let l = Lattice::new(2, 3).unwrap();
        let mu = Measure::uniform(l, 1.0).unwrap();
        let a = AtomSet::from_atoms(l, [AtomId::new(2, 0), AtomId::new(3, 2)]).unwrap();
        let f = lf(&[8.0, 8.0, 8.0, 8.0, 0.0, 0.0, 0.0, 0.0]);
        let rec = modified_stopping_generation(&a, &f, &mu, AtomId::ROOT).unwrap();
        assert_eq!(rec.preliminary, vec![AtomId::new(1, 0), AtomId::new(2, 1)]);
        assert_eq!(rec.stopping, vec![AtomId::new(2, 0), AtomId::new(3, 2)]);
    }

    #[test]
    fn maximal_atoms_cover() {
        let l = Lattice::new(2, 2).unwrap();
        let s = AtomSet::from_atoms(l, [AtomId::new(1, 0), AtomId::new(2, 0), AtomId::new(2, 3)]).unwrap();
        let m: Vec<AtomId> = maximal_atoms(&s).iter().collect();
        assert_eq!(m, vec![AtomId::new(1, 0), AtomId::new(2, 3)]);
    }

    #[test]
    fn carleson_examples() {
        let (l, mu) = binary2();
        let mut w = vec![0.0; l.atom_count()];
        assert_eq!(carleson_constant(&w, &mu), 0.0);
        w[0] = 1.0;
        assert_eq!(carleson_constant(&w, &mu), 1.0);
        let null = Measure::new(l, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let mut w = vec![0.0; l.atom_count()];
        w[l.flat(AtomId::new(2, 0))] = 1.0;
        assert_eq!(carleson_constant(&w, &null), f64::INFINITY);
    }

    #[test]
    fn embedding_example() {
        let l = Lattice::new(2, 1).unwrap();
        let mu = Measure::uniform(l, 1.0).unwrap();
        let mut w = vec![0.0; l.atom_count()];
        w[0] = 1.0;
        let (lhs, bound) = carleson_embedding_check(&w, &lf(&[1.0, 3.0]), 2.0, &mu).unwrap();
        assert_relative_eq!(lhs, 4.0, epsilon = 1e-12);
        assert_relative_eq!(bound, 20.0, epsilon = 1e-12);
        assert_eq!(carleson_embedding_check(&w, &lf(&[0.0, 0.0]), 2.0, &mu).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn split_examples() {
        let l = Lattice::new(2, 2).unwrap();
        let mu = Measure::new(l, vec![1.0; 4]).unwrap();
        let one = lf(&[1.0; 4]);
        let (a, b) = split_collections(&one, &one, 2.0, &mu, &mu).unwrap();
        assert_eq!(a.len(), 7);
        assert!(b.is_empty());
        let (a, _) = split_collections(&one, &LeafFunction::zeros(&l), 2.0, &mu, &mu).unwrap();
        assert_eq!(a.len(), 7);
        let (_, b) = split_collections(&LeafFunction::zeros(&l), &one, 2.0, &mu, &mu).unwrap();
        assert_eq!(b.len(), 7);
    }

    #[test]
    fn mirror_equality_split() {
        let l = Lattice::new(2, 2).unwrap();
        let mu = Measure::uniform(l, 1.0).unwrap();
        let one = lf(&[1.0; 4]);
        let mut alpha = AlphaSequence::zeros(l);
        alpha.set(AtomId::ROOT, 0, 1.0).unwrap();
        alpha.set(AtomId::new(1, 1), 1, 2.0).unwrap();
        let (alpha, f, g) = normalize_mirror_inputs(&alpha, &one, &one, 2.0, &mu, &mu).unwrap();
        let r = proof_mirror(&alpha, &f, &g, 2.0, &mu, &mu).unwrap();
        assert!(r.split_b.is_empty());
        assert_eq!(r.t2.total, 0.0);
        assert!(r.pass, "{:?}", r.failures().collect::<Vec<_>>());
        assert!(r.identities[0].relative_error < 1e-14);
    }

    #[test]
    fn mirror_zero_alpha() {
        let (l, mu) = binary2();
        let one = lf(&[1.0; 4]);
        let r = proof_mirror(&AlphaSequence::zeros(l), &one, &one, 3.0, &mu, &mu).unwrap();
        assert!(r.pass);
        assert_eq!(r.pairing, 0.0);
        assert_eq!(r.t1.total + r.t2.total, 0.0);
    }

    #[test]
    fn mirror_rejects_unnormalized() {
        let (l, mu) = binary2();
        let two = lf(&[2.0; 4]);
        let one = lf(&[1.0; 4]);
        assert!(matches!(
            proof_mirror(&AlphaSequence::zeros(l), &two, &one, 2.0, &mu, &mu),
            Err(Error::Unnormalized(_))
        ));
        let mut alpha = AlphaSequence::zeros(l);
        alpha.set(AtomId::ROOT, 0, 10.0).unwrap();
        assert!(matches!(
            proof_mirror(&alpha, &one, &one, 2.0, &mu, &mu),
            Err(Error::Unnormalized(_))
        ));
    }

    #[test]
    fn mirror_report_serializes() {
        let (l, mu) = binary2();
        let one = lf(&[1.0; 4]);
        let r = proof_mirror(&AlphaSequence::zeros(l), &one, &one, 2.0, &mu, &mu).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let first = &v["inequalities"][0];
        for key in ["name", "lhs", "rhs", "slack", "pass"] {
            assert!(first.get(key).is_some());
        }
    }

    /// A random mirror input, or `None` when either norm vanishes.
    fn random_mirror_input(seed: u64, p: f64) -> Option<(AlphaSequence, LeafFunction, LeafFunction, Measure, Measure)> {
        let inst = generate_random_instance(GeneratorSpec { arity: 2 + (seed % 2) as usize, depth: 3, sparsity: 0.2 }, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let l = inst.lattice;
        let alpha = AlphaSequence::from_edges(l, inst.beta.edges().iter().map(|v| v.abs()).collect()).unwrap();
        let f = inst.function().abs();
        let g = LeafFunction::new((0..l.leaf_count()).map(|_| rng.random::<f64>()).collect()).unwrap();
        normalize_mirror_inputs(&alpha, &f, &g, p, &inst.mu, &inst.nu)
            .ok()
            .map(|(a, f, g)| (a, f, g, inst.mu, inst.nu))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn plain_forest_properties(seed in 0u64..10_000, p in prop::sample::select(vec![1.5, 2.0, 3.0])) {
            let inst = generate_random_instance(GeneratorSpec { arity: 2, depth: 4, sparsity: 0.2 }, seed).unwrap();
            let l = inst.lattice;
            let f = inst.function().abs();
            let roots = AtomSet::from_atoms(l, [AtomId::ROOT]).unwrap();
            let forest = stopping_forest(&AtomSet::full(l), &f, &inst.mu, &roots).unwrap();
            for rec in &forest.records {
                for c in plain_generation_checks(rec, &f, &inst.mu) {
                    prop_assert!(c.pass, "{:?}", c);
                }
            }
            let w = forest.mass_weights(&inst.mu);
            prop_assert!(carleson_constant(&w, &inst.mu) < 2.0);
            let (lhs, bound) = carleson_embedding_check(&w, &f, p, &inst.mu).unwrap();
            prop_assert!(lhs <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn modified_forest_properties(seed in 0u64..10_000) {
            let inst = generate_random_instance(GeneratorSpec { arity: 3, depth: 3, sparsity: 0.1 }, seed).unwrap();
            let l = inst.lattice;
            let f = inst.function().abs();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = AtomSet::from_atoms(l, l.atoms().filter(|_| rng.random_bool(0.5))).unwrap();
            let roots = AtomSet::from_atoms(l, [AtomId::ROOT]).unwrap();
            let forest = modified_stopping_forest(&a, &f, &inst.mu, &roots).unwrap();
            for rec in &forest.records {
                for c in modified_generation_checks(rec, &f, &inst.mu) {
                    prop_assert!(c.pass, "{:?}", c);
                }
                for k in &rec.stopping {
                    prop_assert!(a.contains(*k));
                    prop_assert!(l.is_within(*k, rec.atom) && *k != rec.atom);
                }
            }
            prop_assert!(carleson_constant(&forest.mass_weights(&inst.mu), &inst.mu) <= 2.0 + 1e-12);
        }

        #[test]
        fn stopping_sets_are_disjoint(seed in 0u64..10_000) {
            let inst = generate_random_instance(GeneratorSpec { arity: 2, depth: 4, sparsity: 0.0 }, seed).unwrap();
            let l = inst.lattice;
            let rec = stopping_generation(&AtomSet::full(l), &inst.function().abs(), &inst.mu, AtomId::ROOT).unwrap();
            for (i, a) in rec.stopping.iter().enumerate() {
                for b in &rec.stopping[i + 1..] {
                    prop_assert!(!l.is_within(*a, *b) && !l.is_within(*b, *a));
                }
            }
        }

        #[test]
        fn split_is_partition(seed in 0u64..10_000) {
            let inst = generate_random_instance(GeneratorSpec::default(), seed).unwrap();
            let f = inst.function().abs();
            let (a, b) = split_collections(&f, &f, 2.0, &inst.mu, &inst.nu).unwrap();
            prop_assert_eq!(a.len() + b.len(), inst.lattice.atom_count());
            for x in a.iter() {
                prop_assert!(!b.contains(x));
            }
        }

        #[test]
        fn mirror_passes_on_random_inputs(seed in 0u64..10_000, p in prop::sample::select(vec![1.5, 2.0, 3.0])) {
            if let Some((alpha, f, g, mu, nu)) = random_mirror_input(seed, p) {
                let r = proof_mirror(&alpha, &f, &g, p, &mu, &nu).unwrap();
                prop_assert!(r.pass, "{:?} {:?}", r.failures().collect::<Vec<_>>(), r.identities);
            }
        }
    }
}
