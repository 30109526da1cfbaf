//! Finite uniform-arity trees of atoms.
//!
//! Atoms are addressed arithmetically by `(depth, index)`; nothing is stored
//! per node. Per-atom data elsewhere in the crate lives in flat vectors laid
//! out level by level, so an atom's slot is `level_offset(depth) + index` and
//! the leaves under any atom occupy a contiguous range of the leaf array.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of generations.
pub const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomId {
    pub depth: usize,
    pub index: usize,
}

impl AtomId {
    pub const ROOT: AtomId = AtomId { depth: 0, index: 0 };

    pub fn new(depth: usize, index: usize) -> Self {
        AtomId { depth, index }
    }
}

impl std::fmt::Display for AtomId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.depth, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lattice {
    arity: usize,
    depth: usize,
}

impl Lattice {
    /// Builds a lattice with `arity^depth` leaves, rejecting anything outside
    /// `arity >= 2`, `1 <= depth <= MAX_DEPTH`.
    pub fn new(arity: usize, depth: usize) -> Result<Self> {
        Self::with_max_depth(arity, depth, MAX_DEPTH)
    }

    pub fn with_max_depth(arity: usize, depth: usize, max_depth: usize) -> Result<Self> {
        let invalid = || Error::InvalidLattice {
            arity,
            depth,
            max_depth,
        };
        if arity < 2 || depth < 1 || depth > max_depth {
            return Err(invalid());
        }
        // the flat layout needs the total atom count to fit in usize
        let leaves = arity.checked_pow(depth as u32).ok_or_else(invalid)?;
        leaves.checked_mul(arity).ok_or_else(invalid)?;
        Ok(Lattice { arity, depth })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of atoms in generation `d`.
    pub fn level_len(&self, d: usize) -> usize {
        self.arity.pow(d as u32)
    }

    /// Flat position of the first atom of generation `d`.
    pub fn level_offset(&self, d: usize) -> usize {
        (self.level_len(d) - 1) / (self.arity - 1)
    }

    pub fn leaf_count(&self) -> usize {
        self.level_len(self.depth)
    }

    pub fn atom_count(&self) -> usize {
        self.level_offset(self.depth + 1)
    }

    pub fn root(&self) -> AtomId {
        AtomId::ROOT
    }

    pub fn contains(&self, atom: AtomId) -> bool {
        atom.depth <= self.depth && atom.index < self.level_len(atom.depth)
    }

    pub fn validate(&self, atom: AtomId) -> Result<()> {
        if self.contains(atom) {
            Ok(())
        } else {
            Err(Error::InvalidAtom(atom))
        }
    }

    pub fn is_leaf(&self, atom: AtomId) -> bool {
        atom.depth == self.depth
    }

    pub fn is_internal(&self, atom: AtomId) -> bool {
        atom.depth < self.depth
    }

    pub fn flat(&self, atom: AtomId) -> usize {
        debug_assert!(self.contains(atom));
        self.level_offset(atom.depth) + atom.index
    }

    pub fn atom(&self, flat: usize) -> AtomId {
        debug_assert!(flat < self.atom_count());
        let mut depth = 0;
        while self.level_offset(depth + 1) <= flat {
            depth += 1;
        }
        AtomId::new(depth, flat - self.level_offset(depth))
    }

    pub fn leaf(&self, x: usize) -> AtomId {
        AtomId::new(self.depth, x)
    }

    pub fn parent(&self, atom: AtomId) -> Option<AtomId> {
        (atom.depth > 0).then(|| AtomId::new(atom.depth - 1, atom.index / self.arity))
    }

    /// Position of `atom` among its siblings.
    pub fn slot(&self, atom: AtomId) -> usize {
        atom.index % self.arity
    }

    pub fn child(&self, atom: AtomId, slot: usize) -> AtomId {
        debug_assert!(self.is_internal(atom) && slot < self.arity);
        AtomId::new(atom.depth + 1, atom.index * self.arity + slot)
    }

    /// Children in index order; empty for leaves.
    pub fn children(&self, atom: AtomId) -> impl Iterator<Item = AtomId> {
        let n = if self.is_internal(atom) { self.arity } else { 0 };
        let first = atom.index * self.arity;
        (0..n).map(move |k| AtomId::new(atom.depth + 1, first + k))
    }

    pub fn parent_children(&self, atom: AtomId) -> Result<(Option<AtomId>, Vec<AtomId>)> {
        self.validate(atom)?;
        Ok((self.parent(atom), self.children(atom).collect()))
    }

    /// Ancestor of `atom` in generation `d <= atom.depth` (the atom itself when equal).
    pub fn ancestor_at(&self, atom: AtomId, d: usize) -> AtomId {
        debug_assert!(d <= atom.depth);
        AtomId::new(d, atom.index / self.arity.pow((atom.depth - d) as u32))
    }

    /// `inner ⊆ outer` as sets.
    pub fn is_within(&self, inner: AtomId, outer: AtomId) -> bool {
        inner.depth >= outer.depth && self.ancestor_at(inner, outer.depth) == outer
    }

    /// Leaves contained in `atom`, as a range of leaf positions.
    pub fn leaf_range(&self, atom: AtomId) -> Range<usize> {
        let width = self.arity.pow((self.depth - atom.depth) as u32);
        atom.index * width..(atom.index + 1) * width
    }

    /// Atoms of generation `d` inside `atom` (requires `d >= atom.depth`).
    pub fn descendants_at(&self, atom: AtomId, d: usize) -> Range<usize> {
        let width = self.arity.pow((d - atom.depth) as u32);
        atom.index * width..(atom.index + 1) * width
    }

    /// All atoms contained in `j` (including `j`), depth first then index.
    pub fn subtree(&self, j: AtomId) -> Result<Vec<AtomId>> {
        self.validate(j)?;
        let mut out = Vec::new();
        for d in j.depth..=self.depth {
            out.extend(self.descendants_at(j, d).map(|i| AtomId::new(d, i)));
        }
        Ok(out)
    }

    /// Every atom in flat (depth, then index) order.
    pub fn atoms(&self) -> impl Iterator<Item = AtomId> + '_ {
        (0..=self.depth).flat_map(move |d| (0..self.level_len(d)).map(move |i| AtomId::new(d, i)))
    }

    pub fn internal_atoms(&self) -> impl Iterator<Item = AtomId> + '_ {
        (0..self.depth).flat_map(move |d| (0..self.level_len(d)).map(move |i| AtomId::new(d, i)))
    }

    /// Bottom-up aggregation: per-atom sums of a per-leaf array.
    pub fn subtree_sums(&self, per_leaf: &[f64]) -> Vec<f64> {
        assert_eq!(per_leaf.len(), self.leaf_count());
        let mut out = vec![0.0; self.atom_count()];
        let leaf_off = self.level_offset(self.depth);
        out[leaf_off..].copy_from_slice(per_leaf);
        for d in (0..self.depth).rev() {
            let off = self.level_offset(d);
            let child_off = self.level_offset(d + 1);
            for i in 0..self.level_len(d) {
                let first = child_off + i * self.arity;
                out[off + i] = out[first..first + self.arity].iter().sum();
            }
        }
        out
    }

    /// Top-down accumulation along root-to-leaf paths.
    ///
    /// `edge` is indexed by flat atom id; the entry of a non-root atom `I` is
    /// the value carried by the edge `parent(I) -> I`. Leaf `x` receives the
    /// sum over the edges on its path whose parent end lies in generation
    /// `from_depth` or deeper.
    pub fn path_sums(&self, from_depth: usize, edge: &[f64]) -> Vec<f64> {
        assert_eq!(edge.len(), self.atom_count());
        assert!(from_depth <= self.depth);
        let mut cur = vec![0.0; self.level_len(from_depth)];
        for d in from_depth..self.depth {
            let child_off = self.level_offset(d + 1);
            let mut next = Vec::with_capacity(cur.len() * self.arity);
            for (i, &acc) in cur.iter().enumerate() {
                let first = child_off + i * self.arity;
                next.extend(edge[first..first + self.arity].iter().map(|e| acc + e));
            }
            cur = next;
        }
        cur
    }

    /// Like [`path_sums`](Self::path_sums) with each internal atom's value
    /// copied onto all of its child edges: leaf `x` receives the sum of
    /// `node[I]` over internal ancestors `I ∋ x` at generation `from_depth`
    /// or deeper.
    pub fn ancestor_sums(&self, from_depth: usize, node: &[f64]) -> Vec<f64> {
        let edge = self.node_to_edges(node);
        self.path_sums(from_depth, &edge)
    }

    /// Copies each internal atom's value onto its child edges.
    pub fn node_to_edges(&self, node: &[f64]) -> Vec<f64> {
        assert_eq!(node.len(), self.atom_count());
        let mut edge = vec![0.0; self.atom_count()];
        for d in 1..=self.depth {
            let off = self.level_offset(d);
            let poff = self.level_offset(d - 1);
            for i in 0..self.level_len(d) {
                edge[off + i] = node[poff + i / self.arity];
            }
        }
        edge
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_and_counting() {
        let l = Lattice::new(2, 1).unwrap();
        assert_eq!(l.atom_count(), 3);
        assert_eq!(l.leaf_count(), 2);
        let l = Lattice::new(3, 2).unwrap();
        assert_eq!(l.atom_count(), 13);
        assert_eq!(l.leaf_count(), 9);
    }

    #[test]
    fn rejects_unusable_shapes() {
        assert!(Lattice::new(2, 17).is_err());
        assert!(Lattice::new(1, 3).is_err());
        assert!(Lattice::new(2, 0).is_err());
        assert!(Lattice::with_max_depth(2, 20, 20).is_ok());
    }

    #[test]
    fn parent_children_examples() {
        let l = Lattice::new(2, 1).unwrap();
        let (p, ch) = l.parent_children(l.root()).unwrap();
        assert_eq!(p, None);
        assert_eq!(ch, vec![AtomId::new(1, 0), AtomId::new(1, 1)]);
        let (p, ch) = l.parent_children(AtomId::new(1, 1)).unwrap();
        assert_eq!(p, Some(AtomId::ROOT));
        assert!(ch.is_empty());

        let l = Lattice::new(3, 2).unwrap();
        let (p, ch) = l.parent_children(AtomId::new(1, 1)).unwrap();
        assert_eq!(p, Some(AtomId::ROOT));
        assert_eq!(
            ch,
            vec![AtomId::new(2, 3), AtomId::new(2, 4), AtomId::new(2, 5)]
        );
        assert!(l.parent_children(AtomId::new(2, 9)).is_err());
        assert!(l.parent_children(AtomId::new(3, 0)).is_err());
    }

    #[test]
    fn subtree_examples() {
        let l = Lattice::new(2, 1).unwrap();
        assert_eq!(
            l.subtree(l.root()).unwrap(),
            vec![AtomId::ROOT, AtomId::new(1, 0), AtomId::new(1, 1)]
        );
        let l = Lattice::new(2, 2).unwrap();
        assert_eq!(
            l.subtree(AtomId::new(1, 0)).unwrap(),
            vec![AtomId::new(1, 0), AtomId::new(2, 0), AtomId::new(2, 1)]
        );
        let l = Lattice::new(3, 2).unwrap();
        assert_eq!(l.subtree(l.root()).unwrap().len(), 13);
    }

    #[test]
    fn navigation_invariants() {
        for (m, n) in [(2, 4), (3, 3), (4, 2)] {
            let l = Lattice::new(m, n).unwrap();
            for (k, a) in l.atoms().enumerate() {
                assert_eq!(l.flat(a), k);
                assert_eq!(l.atom(k), a);
                if let Some(p) = l.parent(a) {
                    assert!(l.children(p).any(|c| c == a));
                    assert!(l.is_within(a, p));
                }
                let expected: usize = (0..=n - a.depth).map(|k| m.pow(k as u32)).sum();
                assert_eq!(l.subtree(a).unwrap().len(), expected);
                assert_eq!(l.leaf_range(a).len(), m.pow((n - a.depth) as u32));
            }
        }
    }

    #[test]
    fn path_and_subtree_sums_agree_with_brute_force() {
        let l = Lattice::new(3, 3).unwrap();
        let edge: Vec<f64> = (0..l.atom_count()).map(|k| (k as f64).sin()).collect();
        for from in 0..=l.depth() {
            let got = l.path_sums(from, &edge);
            for (x, got_x) in got.iter().enumerate() {
                let mut a = l.leaf(x);
                let mut want = 0.0;
                while a.depth > from {
                    want += edge[l.flat(a)];
                    a = l.parent(a).unwrap();
                }
                assert!((got_x - want).abs() < 1e-12);
            }
        }
        let per_leaf: Vec<f64> = (0..l.leaf_count()).map(|x| x as f64).collect();
        let sums = l.subtree_sums(&per_leaf);
        for a in l.atoms() {
            let want: f64 = l.leaf_range(a).map(|x| per_leaf[x]).sum();
            assert_eq!(sums[l.flat(a)], want);
        }
    }
}
