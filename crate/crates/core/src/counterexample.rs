//! The triadic Cantor construction on which the direct testing condition
//! holds for `p > 2` while the square-function estimate fails.
//!
//! `μ` is uniform, `ν` is the Cantor measure, the symbol jumps by
//! `±(2/3)^{n/p}` across the outer thirds of every Cantor component at depth
//! `n`, and `f = (3/2)^{n/p} n^{-r}` on the middle thirds removed at stage `n`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{AtomId, Lattice};
use crate::measure::{LeafFunction, Measure};
use crate::paraproduct::{phi_apply, BetaSequence, Symbol};
use crate::report::Inequality;
use crate::testing::{adjoint_testing, direct_testing};

/// Largest depth of [`divergence_report`], `3^12` leaves.
pub const MAX_REPORT_DEPTH: usize = 12;

#[derive(Debug, Clone)]
pub struct CantorInstance {
    pub lattice: Lattice,
    pub mu: Measure,
    pub nu: Measure,
    pub symbol: Symbol,
    pub f: LeafFunction,
    pub p: f64,
    pub r: f64,
}

impl CantorInstance {
    pub fn beta(&self) -> &BetaSequence {
        self.symbol.beta()
    }
}

/// True when every base-3 digit of `index` (with `depth` digits) is 0 or 2.
pub fn in_cantor_stage(depth: usize, index: usize) -> bool {
    let mut k = index;
    for _ in 0..depth {
        if k % 3 == 1 {
            return false;
        }
        k /= 3;
    }
    true
}

/// `(2/3)^{n/p}`.
pub fn jump_amplitude(n: usize, p: f64) -> f64 {
    ((n as f64 / p) * (2.0f64 / 3.0).ln()).exp()
}

/// `(3/2)^{n/p} n^{-r}`, the value of `f` on the middle thirds of stage `n`.
pub fn removed_value(n: usize, p: f64, r: f64) -> f64 {
    let n = n as f64;
    ((n / p) * 1.5f64.ln() - r * n.ln()).exp()
}

fn check_params(p: f64, r: f64) -> Result<()> {
    if !(p.is_finite() && p > 2.0) {
        return Err(Error::InvalidParameter(format!("need p > 2, got {p}")));
    }
    if !(r > 1.0 / p && r < 0.5) {
        return Err(Error::InvalidParameter(format!("need 1/p < r < 1/2, got r = {r} with p = {p}")));
    }
    Ok(())
}

/// The construction truncated at depth `n_depth ≥ 2`.
pub fn build_cantor_instance(n_depth: usize, p: f64, r: f64) -> Result<CantorInstance> {
    if n_depth < 2 {
        return Err(Error::InvalidParameter(format!("need depth N >= 2, got {n_depth}")));
    }
    check_params(p, r)?;
    build(n_depth, n_depth, p, r)
}

/// The depth-`n_depth` lattice carrying the symbol below depth `stages` and
/// `f` on the first `stages` removed stages only.
pub fn truncated_cantor_instance(n_depth: usize, stages: usize, p: f64, r: f64) -> Result<CantorInstance> {
    if stages == 0 || stages > n_depth {
        return Err(Error::InvalidParameter(format!("need 1 <= stages <= {n_depth}, got {stages}")));
    }
    check_params(p, r)?;
    build(n_depth, stages, p, r)
}

fn build(n_depth: usize, stages: usize, p: f64, r: f64) -> Result<CantorInstance> {
    let lattice = Lattice::new(3, n_depth)?;
    let leaves = lattice.leaf_count();
    let mu = Measure::uniform(lattice, 1.0)?;
    let nu_leaf = 0.5f64.powi(n_depth as i32);
    let nu_mass = (0..leaves)
        .map(|x| if in_cantor_stage(n_depth, x) { nu_leaf } else { 0.0 })
        .collect();
    let nu = Measure::new(lattice, nu_mass)?;

    let mut beta = BetaSequence::zeros(lattice);
    for d in 0..stages {
        let a = jump_amplitude(d, p);
        for k in (0..lattice.level_len(d)).filter(|k| in_cantor_stage(d, *k)) {
            beta.set_row(AtomId::new(d, k), &[-a, 0.0, a])?;
        }
    }
    let symbol = Symbol::new(beta, &nu)?;

    // A leaf lies in D_n when its first n-1 digits avoid 1 and digit n is 1.
    let f = (0..leaves)
        .map(|x| {
            (1..=stages)
                .find(|n| (x / 3usize.pow((n_depth - n) as u32)) % 3 == 1)
                .map_or(0.0, |n| removed_value(n, p, r))
        })
        .collect();
    Ok(CantorInstance {
        lattice,
        mu,
        nu,
        symbol,
        f: LeafFunction::new(f)?,
        p,
        r,
    })
}

/// `(1 - (2/3)^{2/p})^{-1/2}`, the closed-form bound on the direct testing
/// constant.
pub fn testing_bound(p: f64) -> f64 {
    (1.0 - jump_amplitude(2, p)).powf(-0.5)
}

/// `3^{-p} (3/2) (Σ_{k≤n} k^{-2r})^{p/2}`.
pub fn lower_bound(n: usize, p: f64, r: f64) -> f64 {
    let s: f64 = (1..=n).map(|k| (k as f64).powf(-2.0 * r)).sum();
    3f64.powf(-p) * 1.5 * s.powf(p / 2.0)
}

/// `Σ_k (1/2) k^{-pr}` for `k ≤ n`, the exact value of `‖f‖_p^p`.
pub fn f_norm_pow(n: usize, p: f64, r: f64) -> f64 {
    (1..=n).map(|k| 0.5 * (k as f64).powf(-p * r)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub n: usize,
    pub b: f64,
    pub b_star: f64,
    pub q: f64,
    pub lower: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub p: f64,
    pub r: f64,
    pub rows: Vec<DivergenceRow>,
    pub checks: Vec<Inequality>,
    pub pass: bool,
}

/// `∫_{C_n} (Σ_I |⟨f⟩_I|² |b_I|²)^{p/2} dν` on a truncated instance.
fn square_integral(inst: &CantorInstance) -> f64 {
    let phi = phi_apply(inst.beta(), &inst.f, 2.0, &inst.mu);
    inst.nu
        .leaf_mass()
        .iter()
        .zip(phi.iter())
        .filter(|(m, _)| **m > 0.0)
        .map(|(m, v)| m * v.powf(inst.p / 2.0))
        .sum()
}

/// One row per truncation `n = 1..=n_max`, all on the depth-`n_max` lattice:
/// the row for `n` uses the symbol below depth `n` and `f` on the first `n`
/// removed stages, so `Q(n)` integrates over `C_n`.
pub fn divergence_report(n_max: usize, p: f64, r: f64) -> Result<DivergenceReport> {
    check_params(p, r)?;
    if n_max == 0 || n_max > MAX_REPORT_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n_max <= {MAX_REPORT_DEPTH}, got {n_max}"
        )));
    }
    let bound = testing_bound(p);
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let inst = build(n_max, n, p, r)?;
        rows.push(DivergenceRow {
            n,
            b: direct_testing(inst.beta(), p, 2.0, &inst.mu, &inst.nu)?,
            b_star: adjoint_testing(inst.beta(), p, 2.0, &inst.mu, &inst.nu)?,
            q: square_integral(&inst),
            lower: lower_bound(n, p, r),
            bound,
        });
    }
    let mut checks = Vec::new();
    for row in &rows {
        let n = row.n;
        checks.push(Inequality::relative(format!("B[{n}] <= bound"), row.b, bound, 1e-12));
        checks.push(Inequality::relative(format!("L[{n}] <= Q[{n}]"), row.lower, row.q, 1e-12));
    }
    for w in rows.windows(2) {
        let n = w[1].n;
        checks.push(Inequality::strict(format!("Q[{}] < Q[{n}]", n - 1), w[0].q, w[1].q));
        checks.push(Inequality::relative(format!("B[{}] <= B[{n}]", n - 1), w[0].b, w[1].b, 1e-12));
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(DivergenceReport { p, r, rows, checks, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn depth_two_measures() {
        let inst = build_cantor_instance(2, 4.0, 0.3).unwrap();
        assert_eq!(inst.lattice.leaf_count(), 9);
        let expected = [0.25, 0.0, 0.25, 0.0, 0.0, 0.0, 0.25, 0.0, 0.25];
        assert_eq!(inst.nu.leaf_mass(), &expected);
        assert_relative_eq!(inst.mu.total(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(inst.nu.total(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn root_jump_has_unit_amplitude() {
        let inst = build_cantor_instance(2, 4.0, 0.3).unwrap();
        assert_eq!(inst.beta().row(AtomId::ROOT), &[-1.0, 0.0, 1.0]);
        let a = jump_amplitude(1, 4.0);
        assert_eq!(inst.beta().row(AtomId::new(1, 2)), &[-a, 0.0, a]);
        assert_eq!(inst.beta().row(AtomId::new(1, 1)), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn f_norm_matches_series() {
        for (n, p, r) in [(2, 4.0, 0.3), (5, 3.0, 0.4), (7, 2.5, 0.45)] {
            let inst = build_cantor_instance(n, p, r).unwrap();
            assert_relative_eq!(inst.mu.lp_norm_pow(&inst.f, p), f_norm_pow(n, p, r), max_relative = 1e-12);
        }
    }

    #[test]
    fn f_values_on_removed_thirds() {
        let inst = build_cantor_instance(2, 4.0, 0.3).unwrap();
        let v1 = removed_value(1, 4.0, 0.3);
        let v2 = removed_value(2, 4.0, 0.3);
        assert_eq!(inst.f.values(), &[0.0, v2, 0.0, v1, v1, v1, 0.0, v2, 0.0]);
    }

    #[test]
    fn parameter_errors() {
        assert!(build_cantor_instance(1, 4.0, 0.3).is_err());
        assert!(build_cantor_instance(3, 2.0, 0.3).is_err());
        assert!(build_cantor_instance(3, 4.0, 0.2).is_err());
        assert!(build_cantor_instance(3, 4.0, 0.5).is_err());
        assert!(divergence_report(13, 4.0, 0.3).is_err());
    }

    #[test]
    fn truncation_matches_smaller_tree() {
        let small = divergence_report(4, 3.0, 0.4).unwrap();
        for n in 1..=4 {
            let inst = build(n, n, 3.0, 0.4).unwrap();
            let row = &small.rows[n - 1];
            assert_relative_eq!(row.q, square_integral(&inst), max_relative = 1e-12);
            let b = direct_testing(inst.beta(), 3.0, 2.0, &inst.mu, &inst.nu).unwrap();
            assert_relative_eq!(row.b, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn closed_form_values() {
        assert_relative_eq!(testing_bound(4.0), 2.3344, epsilon = 1e-4);
        assert_relative_eq!(lower_bound(1, 4.0, 0.3), 1.0 / 54.0, epsilon = 1e-15);
    }

    #[test]
    fn divergence_report_grows() {
        let rep = divergence_report(10, 4.0, 0.3).unwrap();
        assert!(rep.pass, "{:?}", rep.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>());
        let q2 = rep.rows[1].q;
        let q10 = rep.rows[9].q;
        assert!(q10 / q2 >= 7.2, "ratio {}", q10 / q2);
        assert!(rep.rows.last().unwrap().b_star > rep.rows[0].b_star);
    }
}
