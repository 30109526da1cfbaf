//! Coefficient sequences and the paraproduct-type operators built on them.
//!
//! Every coefficient lives on an edge `I -> I'` of the tree and is stored at
//! the flat id of the child `I'`. The root slot is unused and always 0.
//! Each operator is a sum over the ancestor chain of a leaf, so it is
//! evaluated as one bottom-up pass (atom averages) and one
//! [`Lattice::path_sums`] pass.

use crate::error::{Error, Result};
use crate::lattice::{AtomId, Lattice};
use crate::measure::{LeafFunction, Measure};

/// Relative tolerance of the mean-zero check on [`Symbol`].
pub const MEAN_ZERO_TOL: f64 = 1e-9;

fn check_edges(lattice: &Lattice, edges: &[f64], what: &str) -> Result<()> {
    if edges.len() != lattice.atom_count() {
        return Err(Error::InvalidParameter(format!(
            "{what} has {} entries, lattice has {} atoms",
            edges.len(),
            lattice.atom_count()
        )));
    }
    if let Some(i) = edges.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what} entry at atom {} is not finite",
            lattice.atom(i)
        )));
    }
    Ok(())
}

fn check_slot(lattice: &Lattice, parent: AtomId, slot: usize) -> Result<usize> {
    lattice.validate(parent)?;
    if lattice.is_leaf(parent) {
        return Err(Error::LeafAtom(parent));
    }
    if slot >= lattice.arity() {
        return Err(Error::InvalidParameter(format!(
            "child slot {slot} out of range for arity {}",
            lattice.arity()
        )));
    }
    Ok(lattice.flat(lattice.child(parent, slot)))
}

/// Real coefficients `β_{I,I'}` on every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSequence {
    lattice: Lattice,
    edges: Vec<f64>,
}

impl BetaSequence {
    pub fn zeros(lattice: Lattice) -> Self {
        BetaSequence {
            lattice,
            edges: vec![0.0; lattice.atom_count()],
        }
    }

    /// Builds from per-child values indexed by flat id. The root entry is ignored.
    pub fn from_edges(lattice: Lattice, mut edges: Vec<f64>) -> Result<Self> {
        check_edges(&lattice, &edges, "beta")?;
        edges[0] = 0.0;
        Ok(BetaSequence { lattice, edges })
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn get(&self, parent: AtomId, slot: usize) -> f64 {
        self.edges[self.lattice.flat(self.lattice.child(parent, slot))]
    }

    pub fn set(&mut self, parent: AtomId, slot: usize, value: f64) -> Result<()> {
        let k = check_slot(&self.lattice, parent, slot)?;
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("beta at ({parent}) slot {slot} is not finite")));
        }
        self.edges[k] = value;
        Ok(())
    }

    /// Sets the whole row `(β_{I,I'})_{I' ∈ ch(I)}`.
    pub fn set_row(&mut self, parent: AtomId, row: &[f64]) -> Result<()> {
        if row.len() != self.lattice.arity() {
            return Err(Error::InvalidParameter(format!(
                "row has {} entries, arity is {}",
                row.len(),
                self.lattice.arity()
            )));
        }
        for (slot, &v) in row.iter().enumerate() {
            self.set(parent, slot, v)?;
        }
        Ok(())
    }

    /// The coefficients on the children of `parent`.
    pub fn row(&self, parent: AtomId) -> &[f64] {
        let first = self.lattice.flat(self.lattice.child(parent, 0));
        &self.edges[first..first + self.lattice.arity()]
    }

    pub fn scaled(&self, t: f64) -> Self {
        BetaSequence {
            lattice: self.lattice,
            edges: self.edges.iter().map(|v| v * t).collect(),
        }
    }

    /// Edge values `|β|^q`.
    pub fn abs_pow(&self, q: f64) -> Vec<f64> {
        self.edges.iter().map(|v| v.abs().powf(q)).collect()
    }

    /// Zeroes the rows of atoms with `μ(I) = 0`.
    ///
    /// Such rows are multiplied by a `μ`-average or integral over `I`, which
    /// vanishes, so every operator of this module is unchanged. The testing
    /// constants are not: their degenerate conventions see these rows.
    pub fn restricted_to_support(&self, mu: &Measure) -> Self {
        let l = self.lattice;
        let parent_mass = l.node_to_edges(mu.atom_masses());
        let edges = self
            .edges
            .iter()
            .zip(&parent_mass)
            .map(|(v, m)| if *m > 0.0 { *v } else { 0.0 })
            .collect();
        BetaSequence { lattice: l, edges }
    }

    pub fn is_zero(&self) -> bool {
        self.edges.iter().all(|v| *v == 0.0)
    }
}

/// A `β` whose rows are `ν`-mean-zero: the coefficients of a martingale
/// difference sequence `b = Σ_I b_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    beta: BetaSequence,
    nu: Measure,
}

impl Symbol {
    /// Validates `|Σ_{I'} β_{I,I'} ν(I')| ≤ 1e-9 Σ_{I'} |β_{I,I'}| ν(I')` on every row.
    pub fn new(beta: BetaSequence, nu: &Measure) -> Result<Self> {
        let l = beta.lattice();
        assert_eq!(l, nu.lattice());
        for atom in l.internal_atoms() {
            let (mut sum, mut abs) = (0.0, 0.0);
            for (c, b) in l.children(atom).zip(beta.row(atom)) {
                sum += b * nu.mass(c);
                abs += b.abs() * nu.mass(c);
            }
            let tolerance = MEAN_ZERO_TOL * abs;
            if sum.abs() > tolerance {
                return Err(Error::MeanZeroViolation {
                    atom,
                    residual: sum.abs(),
                    tolerance,
                });
            }
        }
        Ok(Symbol { beta, nu: nu.clone() })
    }

    /// Subtracts the `ν`-weighted row mean from every row with `ν(I) > 0`.
    pub fn project(beta: &BetaSequence, nu: &Measure) -> Self {
        let l = beta.lattice();
        let mut out = beta.clone();
        for atom in l.internal_atoms() {
            let mass = nu.mass(atom);
            if mass <= 0.0 {
                continue;
            }
            let mean: f64 = l.children(atom).zip(beta.row(atom)).map(|(c, b)| b * nu.mass(c)).sum::<f64>() / mass;
            let first = l.flat(l.child(atom, 0));
            for v in &mut out.edges[first..first + l.arity()] {
                *v -= mean;
            }
        }
        Symbol { beta: out, nu: nu.clone() }
    }

    /// The martingale differences of `b`: `β_{I,I'}` is the value of
    /// `Δ_I^ν b` on `I'`.
    pub fn from_function(b: &LeafFunction, nu: &Measure) -> Self {
        let edges = crate::martingale::difference_edges(b, nu);
        Symbol {
            beta: BetaSequence {
                lattice: nu.lattice(),
                edges,
            },
            nu: nu.clone(),
        }
    }

    pub fn beta(&self) -> &BetaSequence {
        &self.beta
    }

    pub fn nu(&self) -> &Measure {
        &self.nu
    }
}

/// Nonnegative coefficients `a_{I,I'}` on every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSequence {
    lattice: Lattice,
    edges: Vec<f64>,
}

impl AlphaSequence {
    pub fn zeros(lattice: Lattice) -> Self {
        AlphaSequence {
            lattice,
            edges: vec![0.0; lattice.atom_count()],
        }
    }

    pub fn from_edges(lattice: Lattice, mut edges: Vec<f64>) -> Result<Self> {
        check_edges(&lattice, &edges, "alpha")?;
        edges[0] = 0.0;
        if let Some(i) = edges.iter().position(|v| *v < 0.0) {
            return Err(Error::NegativeCoefficient {
                atom: lattice.atom(i),
                value: edges[i],
            });
        }
        Ok(AlphaSequence { lattice, edges })
    }

    /// `a_{I,I'} = μ(I)^{-1} |β_{I,I'}|^q`, and 0 under atoms with `μ(I) = 0`.
    /// With these coefficients `T_α` is the shifted operator `Π̃_β`.
    pub fn from_beta(beta: &BetaSequence, q: f64, mu: &Measure) -> Self {
        let l = beta.lattice();
        let parent_mass = l.node_to_edges(mu.atom_masses());
        let edges = beta
            .abs_pow(q)
            .iter()
            .zip(&parent_mass)
            .map(|(b, m)| if *m > 0.0 { b / m } else { 0.0 })
            .collect();
        let mut a = AlphaSequence { lattice: l, edges };
        a.edges[0] = 0.0;
        a
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn get(&self, parent: AtomId, slot: usize) -> f64 {
        self.edges[self.lattice.flat(self.lattice.child(parent, slot))]
    }

    pub fn set(&mut self, parent: AtomId, slot: usize, value: f64) -> Result<()> {
        let k = check_slot(&self.lattice, parent, slot)?;
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::NegativeCoefficient {
                atom: self.lattice.child(parent, slot),
                value,
            });
        }
        self.edges[k] = value;
        Ok(())
    }

    pub fn scaled(&self, t: f64) -> Self {
        assert!(t >= 0.0);
        AlphaSequence {
            lattice: self.lattice,
            edges: self.edges.iter().map(|v| v * t).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.edges.iter().all(|v| *v == 0.0)
    }
}

/// A real number `s_I` for every non-root atom.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceField {
    lattice: Lattice,
    values: Vec<f64>,
}

impl SequenceField {
    pub fn zeros(lattice: Lattice) -> Self {
        SequenceField {
            lattice,
            values: vec![0.0; lattice.atom_count()],
        }
    }

    pub fn from_values(lattice: Lattice, mut values: Vec<f64>) -> Result<Self> {
        check_edges(&lattice, &values, "sequence")?;
        values[0] = 0.0;
        Ok(SequenceField { lattice, values })
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    /// Values by flat id; the root entry is 0.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, atom: AtomId) -> f64 {
        self.values[self.lattice.flat(atom)]
    }
}

/// `b_I = Σ_{I'} β_{I,I'} 1_{I'}`.
pub fn symbol_b_function(beta: &BetaSequence, atom: AtomId) -> Result<LeafFunction> {
    let l = beta.lattice();
    l.validate(atom)?;
    if l.is_leaf(atom) {
        return Err(Error::LeafAtom(atom));
    }
    let mut out = vec![0.0; l.leaf_count()];
    for (c, b) in l.children(atom).zip(beta.row(atom)) {
        out[l.leaf_range(c)].fill(*b);
    }
    Ok(LeafFunction::from_vec(out))
}

/// Per-edge `μ`-averages of `f` over the parent atom.
fn parent_averages(f: &[f64], mu: &Measure) -> Vec<f64> {
    mu.lattice().node_to_edges(&mu.averages(f))
}

fn product_path_sums(l: Lattice, a: &[f64], b: &[f64]) -> LeafFunction {
    let edge: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    LeafFunction::from_vec(l.path_sums(0, &edge))
}

/// `π_b f = Σ_I ⟨f⟩_{I,μ} b_I`, pointwise on leaves.
pub fn paraproduct_apply(b: &Symbol, f: &LeafFunction, mu: &Measure) -> LeafFunction {
    let l = mu.lattice();
    product_path_sums(l, &parent_averages(f, mu), b.beta().edges())
}

/// `(Π_β f)_I = ⟨f⟩_{Î,μ} β_{Î,I}`.
pub fn vector_paraproduct(beta: &BetaSequence, f: &LeafFunction, mu: &Measure) -> SequenceField {
    let values = parent_averages(f, mu)
        .iter()
        .zip(beta.edges())
        .map(|(a, b)| a * b)
        .collect();
    SequenceField {
        lattice: mu.lattice(),
        values,
    }
}

/// `(Σ_I |s_I|^q 1_I)` per leaf.
pub fn g_density(s: &SequenceField, q: f64) -> Vec<f64> {
    let edge: Vec<f64> = s.values().iter().map(|v| v.abs().powf(q)).collect();
    s.lattice().path_sums(0, &edge)
}

/// `‖(Σ_I |s_I|^q 1_I)^{1/q}‖_{L^p(ν)}`.
pub fn g_norm(s: &SequenceField, p: f64, q: f64, nu: &Measure) -> f64 {
    nu.lp_norm_pow(&g_density(s, q), p / q).powf(1.0 / p)
}

/// `Φ_β f = Σ_I |⟨f⟩_{I,μ}|^q |b_I|^q`.
pub fn phi_apply(beta: &BetaSequence, f: &LeafFunction, q: f64, mu: &Measure) -> LeafFunction {
    let avg: Vec<f64> = parent_averages(f, mu).iter().map(|v| v.abs().powf(q)).collect();
    product_path_sums(mu.lattice(), &avg, &beta.abs_pow(q))
}

/// `Π̃_β g = Σ_I ⟨g⟩_{I,μ} |b_I|^q`.
pub fn shifted_apply(beta: &BetaSequence, g: &LeafFunction, q: f64, mu: &Measure) -> LeafFunction {
    product_path_sums(mu.lattice(), &parent_averages(g, mu), &beta.abs_pow(q))
}

/// `T_α f = Σ_I (∫_I f dμ) a_I`.
pub fn t_alpha_apply(alpha: &AlphaSequence, f: &LeafFunction, mu: &Measure) -> LeafFunction {
    let l = mu.lattice();
    let ints = l.node_to_edges(&mu.integrals(f));
    product_path_sums(l, &ints, alpha.edges())
}

/// `L_β(f, g) = Σ_I ⟨f⟩_{I,μ} ⟨g⟩_{I,μ} |b_I|²`.
pub fn bilinear_form(beta: &BetaSequence, f: &LeafFunction, g: &LeafFunction, mu: &Measure) -> LeafFunction {
    let fa = parent_averages(f, mu);
    let ga = parent_averages(g, mu);
    let prod: Vec<f64> = fa.iter().zip(&ga).map(|(x, y)| x * y).collect();
    product_path_sums(mu.lattice(), &prod, &beta.abs_pow(2.0))
}

/// `⟨h, g⟩_ν`.
pub fn pairing(h: &LeafFunction, g: &LeafFunction, nu: &Measure) -> f64 {
    nu.pairing(h, g)
}

/// `Σ_{I non-root} a_{Î,I} (∫_Î f dμ)(∫_I g dν)`, the coefficient side of
/// `⟨T_α f, g⟩_ν`.
pub fn t_alpha_pairing_sum(alpha: &AlphaSequence, f: &LeafFunction, g: &LeafFunction, mu: &Measure, nu: &Measure) -> f64 {
    let l = mu.lattice();
    let fi = l.node_to_edges(&mu.integrals(f));
    let gi = nu.integrals(g);
    alpha
        .edges()
        .iter()
        .zip(&fi)
        .zip(&gi)
        .skip(1)
        .map(|((a, x), y)| a * x * y)
        .sum()
}
