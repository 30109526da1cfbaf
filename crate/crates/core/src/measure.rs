//! Measures given by leaf masses, simple functions on leaves, and exponents.
//!
//! Averages over zero-mass atoms are 0. This is the only degenerate
//! convention in the crate and every operator inherits it from here.

use std::ops::{Deref, Index};

use crate::error::{Error, Result};
use crate::lattice::{AtomId, Lattice};

/// A nonnegative measure on the leaves with cached per-atom masses.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    lattice: Lattice,
    leaf_mass: Vec<f64>,
    atom_mass: Vec<f64>,
}

impl Measure {
    pub fn new(lattice: Lattice, leaf_mass: Vec<f64>) -> Result<Self> {
        if leaf_mass.len() != lattice.leaf_count() {
            return Err(Error::InvalidMeasure(format!(
                "expected {} leaf masses, got {}",
                lattice.leaf_count(),
                leaf_mass.len()
            )));
        }
        if let Some((x, m)) = leaf_mass
            .iter()
            .enumerate()
            .find(|(_, m)| !m.is_finite() || **m < 0.0)
        {
            return Err(Error::InvalidMeasure(format!(
                "leaf {x} has mass {m}; masses must be finite and nonnegative"
            )));
        }
        let atom_mass = lattice.subtree_sums(&leaf_mass);
        Ok(Measure {
            lattice,
            leaf_mass,
            atom_mass,
        })
    }

    /// Every leaf carries `total / leaf_count`.
    pub fn uniform(lattice: Lattice, total: f64) -> Result<Self> {
        let n = lattice.leaf_count();
        Measure::new(lattice, vec![total / n as f64; n])
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn leaf_mass(&self) -> &[f64] {
        &self.leaf_mass
    }

    /// Per-atom masses in flat order.
    pub fn atom_masses(&self) -> &[f64] {
        &self.atom_mass
    }

    pub fn mass(&self, atom: AtomId) -> f64 {
        self.atom_mass[self.lattice.flat(atom)]
    }

    pub fn total(&self) -> f64 {
        self.atom_mass[0]
    }

    /// Largest violation of `mass(I) = Σ mass(children)` over internal atoms.
    pub fn additivity_defect(&self) -> f64 {
        let l = self.lattice;
        l.internal_atoms()
            .map(|a| {
                let kids: f64 = l.children(a).map(|c| self.mass(c)).sum();
                (self.mass(a) - kids).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Per-atom integrals `∫_I f dm`, one bottom-up pass.
    pub fn integrals(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.leaf_mass.len());
        let weighted: Vec<f64> = f.iter().zip(&self.leaf_mass).map(|(v, m)| v * m).collect();
        self.lattice.subtree_sums(&weighted)
    }

    /// Per-atom averages `⟨f⟩_{I,m}`, 0 on zero-mass atoms.
    pub fn averages(&self, f: &[f64]) -> Vec<f64> {
        let mut out = self.integrals(f);
        for (v, m) in out.iter_mut().zip(&self.atom_mass) {
            *v = if *m > 0.0 { *v / m } else { 0.0 };
        }
        out
    }

    pub fn integral(&self, f: &[f64], atom: AtomId) -> f64 {
        assert_eq!(f.len(), self.leaf_mass.len());
        self.lattice
            .leaf_range(atom)
            .map(|x| f[x] * self.leaf_mass[x])
            .sum()
    }

    pub fn average(&self, f: &[f64], atom: AtomId) -> f64 {
        let m = self.mass(atom);
        if m > 0.0 {
            self.integral(f, atom) / m
        } else {
            0.0
        }
    }

    /// `(Σ |f|^p m)^{1/p}`; also accepts `0 < p < 1`, where it is a quasi-norm.
    pub fn lp_norm(&self, f: &[f64], p: f64) -> f64 {
        self.lp_norm_pow(f, p).powf(1.0 / p)
    }

    /// `Σ |f|^p m` over all leaves.
    pub fn lp_norm_pow(&self, f: &[f64], p: f64) -> f64 {
        assert_eq!(f.len(), self.leaf_mass.len());
        f.iter()
            .zip(&self.leaf_mass)
            .filter(|(_, m)| **m > 0.0)
            .map(|(v, m)| v.abs().powf(p) * m)
            .sum()
    }

    /// `∫ h g dm`.
    pub fn pairing(&self, h: &[f64], g: &[f64]) -> f64 {
        assert_eq!(h.len(), self.leaf_mass.len());
        assert_eq!(g.len(), self.leaf_mass.len());
        h.iter()
            .zip(g)
            .zip(&self.leaf_mass)
            .map(|((a, b), m)| a * b * m)
            .sum()
    }
}

pub fn average(f: &LeafFunction, atom: AtomId, m: &Measure) -> f64 {
    m.average(f, atom)
}

pub fn atom_mass(m: &Measure, atom: AtomId) -> f64 {
    m.mass(atom)
}

pub fn lp_norm(f: &LeafFunction, p: f64, m: &Measure) -> f64 {
    m.lp_norm(f, p)
}

/// A simple function, constant on leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafFunction(Vec<f64>);

impl LeafFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((x, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidFunction(format!("leaf {x} has non-finite value {v}")));
        }
        Ok(LeafFunction(values))
    }

    /// Internal constructor for operator outputs that are finite by construction.
    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        LeafFunction(values)
    }

    pub fn zeros(lattice: &Lattice) -> Self {
        LeafFunction(vec![0.0; lattice.leaf_count()])
    }

    pub fn constant(lattice: &Lattice, c: f64) -> Self {
        LeafFunction(vec![c; lattice.leaf_count()])
    }

    /// `1_J`.
    pub fn indicator(lattice: &Lattice, atom: AtomId) -> Self {
        let mut v = vec![0.0; lattice.leaf_count()];
        v[lattice.leaf_range(atom)].fill(1.0);
        LeafFunction(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        LeafFunction(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|v| *v >= 0.0)
    }

    /// Errors with the first negative entry.
    pub fn require_nonnegative(&self) -> Result<()> {
        match self.0.iter().enumerate().find(|(_, v)| **v < 0.0) {
            Some((leaf, &value)) => Err(Error::NegativeFunction { leaf, value }),
            None => Ok(()),
        }
    }
}

impl Deref for LeafFunction {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for LeafFunction {
    type Output = f64;

    fn index(&self, x: usize) -> &f64 {
        &self.0[x]
    }
}

impl TryFrom<Vec<f64>> for LeafFunction {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LeafFunction::new(values)
    }
}

/// Hölder conjugate `p/(p-1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// A pair of exponents `1 < p, q < ∞` with the derived quantities used by
/// the estimates for `p > q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    p: f64,
    q: f64,
}

impl Exponents {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        check_exponent("p", p)?;
        check_exponent("q", q)?;
        Ok(Exponents { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p_conj(&self) -> f64 {
        conjugate(self.p)
    }

    /// `r = p/q`.
    pub fn r(&self) -> f64 {
        self.p / self.q
    }

    /// `r' = r/(r-1)`, defined only for `p > q`.
    pub fn r_conj(&self) -> Option<f64> {
        let r = self.r();
        (r > 1.0).then(|| conjugate(r))
    }
}

pub(crate) fn check_exponent(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(format!("{name} = {v}; need 1 < {name} < inf")))
    }
}
