//! Conditional expectations, martingale differences, square and maximal
//! functions, and the Rubio de Francia majorant.

use crate::error::{Error, Result};
use crate::lattice::AtomId;
use crate::measure::{conjugate, LeafFunction, Measure};

/// `E_I f = ⟨f⟩_I 1_I`.
pub fn expectation(f: &LeafFunction, atom: AtomId, m: &Measure) -> LeafFunction {
    let l = m.lattice();
    let avg = m.average(f, atom);
    let mut out = vec![0.0; l.leaf_count()];
    out[l.leaf_range(atom)].fill(avg);
    LeafFunction::from_vec(out)
}

/// `Δ_I f = Σ_{I'∈ch(I)} E_{I'} f − E_I f`.
pub fn martingale_difference(f: &LeafFunction, atom: AtomId, m: &Measure) -> Result<LeafFunction> {
    let l = m.lattice();
    l.validate(atom)?;
    if l.is_leaf(atom) {
        return Err(Error::LeafAtom(atom));
    }
    let parent_avg = m.average(f, atom);
    let mut out = vec![0.0; l.leaf_count()];
    for c in l.children(atom) {
        let v = m.average(f, c) - parent_avg;
        out[l.leaf_range(c)].fill(v);
    }
    Ok(LeafFunction::from_vec(out))
}

/// Per-edge jumps `⟨f⟩_{I'} − ⟨f⟩_{parent(I')}`, indexed by the child's flat id.
pub(crate) fn difference_edges(f: &[f64], m: &Measure) -> Vec<f64> {
    let l = m.lattice();
    let avgs = m.averages(f);
    let parent_avgs = l.node_to_edges(&avgs);
    let mut out: Vec<f64> = avgs.iter().zip(&parent_avgs).map(|(a, b)| a - b).collect();
    out[0] = 0.0;
    out
}

/// `S f = (Σ_{internal I} |Δ_I f|²)^{1/2}` pointwise.
pub fn square_function(f: &LeafFunction, m: &Measure) -> LeafFunction {
    let sq: Vec<f64> = difference_edges(f, m).iter().map(|d| d * d).collect();
    let sums = m.lattice().path_sums(0, &sq);
    LeafFunction::from_vec(sums.into_iter().map(f64::sqrt).collect())
}

/// `M f(x) = sup_{I ∋ x} |⟨f⟩_I|`, leaves included.
pub fn maximal_function(f: &LeafFunction, m: &Measure) -> LeafFunction {
    let l = m.lattice();
    let avgs = m.averages(f);
    let mut cur = vec![avgs[0].abs()];
    for d in 1..=l.depth() {
        let off = l.level_offset(d);
        cur = (0..l.level_len(d))
            .map(|i| cur[i / l.arity()].max(avgs[off + i].abs()))
            .collect();
    }
    LeafFunction::from_vec(cur)
}

/// Output of [`rubio_de_francia`].
#[derive(Debug, Clone)]
pub struct RubioDeFrancia {
    pub function: LeafFunction,
    /// Number of series terms summed, `M⁰f` included.
    pub terms: usize,
    /// Pointwise bound on the discarded tail.
    pub tail_bound: f64,
}

/// `R f = Σ_{n≥0} (2p')^{-n} M^n f` with `M⁰ f = |f|`.
///
/// Summation stops after the first term whose sup-norm is below `tol`. Since
/// `M` does not increase the sup-norm, the discarded tail is at most
/// `tol / (2p' − 1)` at every leaf.
pub fn rubio_de_francia(f: &LeafFunction, m: &Measure, p: f64, tol: f64) -> Result<RubioDeFrancia> {
    crate::measure::check_exponent("p", p)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let ratio = 1.0 / (2.0 * conjugate(p));
    let mut iterate = f.abs();
    let mut sum = iterate.values().to_vec();
    let mut weight = 1.0;
    let mut terms = 1;
    while weight * iterate.sup_norm() >= tol {
        iterate = maximal_function(&iterate, m);
        weight *= ratio;
        for (s, v) in sum.iter_mut().zip(iterate.values()) {
            *s += weight * v;
        }
        terms += 1;
    }
    Ok(RubioDeFrancia {
        function: LeafFunction::from_vec(sum),
        terms,
        tail_bound: tol * ratio / (1.0 - ratio),
    })
}
