//! Lower bounds for operator norms by projected gradient ascent, a
//! brute-force grid oracle for tiny lattices, and the comparison of the two
//! norms that the vector paraproduct and its shifted positive companion
//! must satisfy simultaneously.
//!
//! The ascent maximizes `log ‖Tf‖ − log ‖f‖_{L^p(μ)}` over leaf values using
//! the analytic gradient. Every operator here has the form
//! `Tf = Σ_I w_I (∫_I f dμ) e_I` up to a pointwise nonlinearity, so the
//! gradient is one more bottom-up and one more top-down pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{AtomId, Lattice};
use crate::measure::{check_exponent, conjugate, LeafFunction, Measure};
use crate::paraproduct::{
    g_norm, paraproduct_apply, shifted_apply, t_alpha_apply, vector_paraproduct, AlphaSequence, BetaSequence, Symbol,
};
use crate::report::Inequality;
use crate::testing::{adjoint_testing, direct_testing};

/// Largest lattice the grid oracle accepts.
pub const ORACLE_MAX_LEAVES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    /// `π_b : L^p(μ) → L^p(ν)`.
    Paraproduct(Symbol),
    /// `Π_β : L^p(μ) → ġ_p^q(ν)`.
    VectorParaproduct { beta: BetaSequence, q: f64 },
    /// `Π̃_β : L^p(μ) → L^p(ν)` built from `|β|^q`.
    Shifted { beta: BetaSequence, q: f64 },
    /// `T_α : L^p(μ) → L^p(ν)`.
    TAlpha(AlphaSequence),
}

/// Norm on the target space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputNorm {
    Lp { p: f64 },
    SequenceG { p: f64, q: f64 },
}

/// An operator together with its input space `L^p(μ)` and target measure `ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorHandle {
    kind: OperatorKind,
    p: f64,
    mu: Measure,
    nu: Measure,
}

impl OperatorHandle {
    pub fn new(kind: OperatorKind, p: f64, mu: &Measure, nu: &Measure) -> Result<Self> {
        check_exponent("p", p)?;
        let l = mu.lattice();
        if nu.lattice() != l {
            return Err(Error::InvalidParameter("mu and nu live on different lattices".into()));
        }
        let kl = match &kind {
            OperatorKind::Paraproduct(s) => s.beta().lattice(),
            OperatorKind::VectorParaproduct { beta, q } | OperatorKind::Shifted { beta, q } => {
                check_exponent("q", *q)?;
                beta.lattice()
            }
            OperatorKind::TAlpha(a) => a.lattice(),
        };
        if kl != l {
            return Err(Error::InvalidParameter("coefficients and measures live on different lattices".into()));
        }
        Ok(OperatorHandle {
            kind,
            p,
            mu: mu.clone(),
            nu: nu.clone(),
        })
    }

    pub fn paraproduct(b: Symbol, p: f64, mu: &Measure, nu: &Measure) -> Result<Self> {
        Self::new(OperatorKind::Paraproduct(b), p, mu, nu)
    }

    pub fn vector_paraproduct(beta: BetaSequence, p: f64, q: f64, mu: &Measure, nu: &Measure) -> Result<Self> {
        Self::new(OperatorKind::VectorParaproduct { beta, q }, p, mu, nu)
    }

    /// `Π̃_β` acting on `L^r(μ)`.
    pub fn shifted(beta: BetaSequence, q: f64, r: f64, mu: &Measure, nu: &Measure) -> Result<Self> {
        Self::new(OperatorKind::Shifted { beta, q }, r, mu, nu)
    }

    pub fn t_alpha(alpha: AlphaSequence, p: f64, mu: &Measure, nu: &Measure) -> Result<Self> {
        Self::new(OperatorKind::TAlpha(alpha), p, mu, nu)
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mu(&self) -> &Measure {
        &self.mu
    }

    pub fn nu(&self) -> &Measure {
        &self.nu
    }

    pub fn lattice(&self) -> Lattice {
        self.mu.lattice()
    }

    pub fn output(&self) -> OutputNorm {
        match &self.kind {
            OperatorKind::VectorParaproduct { q, .. } => OutputNorm::SequenceG { p: self.p, q: *q },
            _ => OutputNorm::Lp { p: self.p },
        }
    }

    /// Kinds with nonnegative coefficients; the ascent is restricted to `f ≥ 0`.
    pub fn is_positive(&self) -> bool {
        matches!(self.kind, OperatorKind::Shifted { .. } | OperatorKind::TAlpha(_))
    }

    /// `‖Tf‖ ≤ ‖T|f|‖` for every `f`, so the norm is attained on `f ≥ 0`.
    /// True for the positive kinds and for the vector paraproduct, since
    /// `|⟨f⟩_I| ≤ ⟨|f|⟩_I`.
    pub fn attained_on_nonnegative(&self) -> bool {
        !matches!(self.kind, OperatorKind::Paraproduct(_))
    }

    /// `‖Tf‖` evaluated directly with the operators of the paraproduct module.
    pub fn output_norm(&self, f: &LeafFunction) -> f64 {
        match &self.kind {
            OperatorKind::Paraproduct(b) => self.nu.lp_norm(&paraproduct_apply(b, f, &self.mu), self.p),
            OperatorKind::VectorParaproduct { beta, q } => {
                g_norm(&vector_paraproduct(beta, f, &self.mu), self.p, *q, &self.nu)
            }
            OperatorKind::Shifted { beta, q } => self.nu.lp_norm(&shifted_apply(beta, f, *q, &self.mu), self.p),
            OperatorKind::TAlpha(a) => self.nu.lp_norm(&t_alpha_apply(a, f, &self.mu), self.p),
        }
    }

    /// `‖Tf‖ / ‖f‖_{L^p(μ)}`, 0 when `‖f‖ = 0`.
    pub fn ratio(&self, f: &LeafFunction) -> f64 {
        let n = self.mu.lp_norm(f, self.p);
        if n > 0.0 {
            self.output_norm(f) / n
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConfig {
    /// Number of random starts in addition to the atom indicators.
    pub starts: usize,
    pub max_iter: usize,
    /// Stop when one step improves the ratio by less than this, relatively.
    pub step_tol: f64,
    pub seed: u64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            starts: 64,
            max_iter: 500,
            step_tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(into = "String")]
pub enum StartKind {
    Indicator(AtomId),
    Random(usize),
    Supplied(usize),
}

impl std::fmt::Display for StartKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StartKind::Indicator(a) => write!(f, "indicator({a})"),
            StartKind::Random(k) => write!(f, "random({k})"),
            StartKind::Supplied(k) => write!(f, "supplied({k})"),
        }
    }
}

impl From<StartKind> for String {
    fn from(k: StartKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormEstimate {
    /// Ratio of `argmax`, recomputed from scratch.
    pub value: f64,
    pub argmax: LeafFunction,
    pub start_kind: StartKind,
    pub starts_used: usize,
    /// Iterations of the winning run.
    pub iterations: usize,
    /// Whether the winning run stopped on the step tolerance rather than `max_iter`.
    pub converged: bool,
}

fn sgn_pow(v: f64, e: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(e)
    }
}

/// Precomputed coefficients of `Tf = Σ_I w_I (∫_I f dμ) e_I`.
struct Engine<'a> {
    op: &'a OperatorHandle,
    lattice: Lattice,
    /// Per atom: `1/μ(I)` for averaging kinds (0 on null atoms), 1 for `T_α`.
    node_weight: Vec<f64>,
    /// Per edge: `β`, `|β|^q` or `a`.
    edge: Vec<f64>,
    /// `Some(q)` for the vector paraproduct.
    vector_q: Option<f64>,
    p: f64,
}

struct Forward {
    /// `‖Tf‖^p`.
    value_pow: f64,
    /// Leaf values of `Tf`, or the density `G = Σ |s_I|^q 1_I`.
    leaf: Vec<f64>,
    /// Edge values `s_I` (vector kind only).
    seq: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(op: &'a OperatorHandle) -> Self {
        let lattice = op.lattice();
        let inv_mass: Vec<f64> = op
            .mu
            .atom_masses()
            .iter()
            .map(|m| if *m > 0.0 { 1.0 / m } else { 0.0 })
            .collect();
        let (node_weight, edge, vector_q) = match &op.kind {
            OperatorKind::Paraproduct(b) => (inv_mass, b.beta().edges().to_vec(), None),
            OperatorKind::VectorParaproduct { beta, q } => (inv_mass, beta.edges().to_vec(), Some(*q)),
            OperatorKind::Shifted { beta, q } => (inv_mass, beta.abs_pow(*q), None),
            OperatorKind::TAlpha(a) => (vec![1.0; lattice.atom_count()], a.edges().to_vec(), None),
        };
        Engine {
            op,
            lattice,
            node_weight,
            edge,
            vector_q,
            p: op.p,
        }
    }

    fn edge_terms(&self, f: &[f64]) -> Vec<f64> {
        let node: Vec<f64> = self
            .op
            .mu
            .integrals(f)
            .iter()
            .zip(&self.node_weight)
            .map(|(i, w)| i * w)
            .collect();
        self.lattice
            .node_to_edges(&node)
            .iter()
            .zip(&self.edge)
            .map(|(a, b)| a * b)
            .collect()
    }

    fn forward(&self, f: &[f64]) -> Forward {
        let terms = self.edge_terms(f);
        let nu = self.op.nu.leaf_mass();
        match self.vector_q {
            None => {
                let leaf = self.lattice.path_sums(0, &terms);
                let value_pow = leaf
                    .iter()
                    .zip(nu)
                    .filter(|(_, m)| **m > 0.0)
                    .map(|(y, m)| y.abs().powf(self.p) * m)
                    .sum();
                Forward {
                    value_pow,
                    leaf,
                    seq: Vec::new(),
                }
            }
            Some(q) => {
                let powered: Vec<f64> = terms.iter().map(|s| s.abs().powf(q)).collect();
                let leaf = self.lattice.path_sums(0, &powered);
                let value_pow = leaf
                    .iter()
                    .zip(nu)
                    .filter(|(_, m)| **m > 0.0)
                    .map(|(g, m)| g.powf(self.p / q) * m)
                    .sum();
                Forward {
                    value_pow,
                    leaf,
                    seq: terms,
                }
            }
        }
    }

    /// `(∂/∂f_x log R) / μ_x` on leaves of positive mass, 0 elsewhere.
    fn direction(&self, f: &[f64], fwd: &Forward) -> Vec<f64> {
        let l = self.lattice;
        let nu = self.op.nu.leaf_mass();
        let mu = self.op.mu.leaf_mass();
        // per-edge sensitivities σ_I, summed into the parent
        let sigma: Vec<f64> = match self.vector_q {
            None => {
                let v: Vec<f64> = fwd
                    .leaf
                    .iter()
                    .zip(nu)
                    .map(|(y, m)| if *m > 0.0 { m * sgn_pow(*y, self.p - 1.0) } else { 0.0 })
                    .collect();
                let big_v = l.subtree_sums(&v);
                big_v.iter().zip(&self.edge).map(|(a, b)| a * b).collect()
            }
            Some(q) => {
                let u: Vec<f64> = fwd
                    .leaf
                    .iter()
                    .zip(nu)
                    .map(|(g, m)| if *m > 0.0 && *g > 0.0 { m * g.powf(self.p / q - 1.0) } else { 0.0 })
                    .collect();
                let big_u = l.subtree_sums(&u);
                fwd.seq
                    .iter()
                    .zip(&self.edge)
                    .zip(&big_u)
                    .map(|((s, b), u)| sgn_pow(*s, q - 1.0) * b * u)
                    .collect()
            }
        };
        let mut node = vec![0.0; l.atom_count()];
        for atom in l.internal_atoms() {
            let k = l.flat(atom);
            let first = l.flat(l.child(atom, 0));
            node[k] = self.node_weight[k] * sigma[first..first + l.arity()].iter().sum::<f64>();
        }
        let h = l.ancestor_sums(0, &node);
        let f_pow = self.op.mu.lp_norm_pow(f, self.p);
        h.iter()
            .zip(f)
            .zip(mu)
            .map(|((h, fx), m)| {
                if *m > 0.0 {
                    h / fwd.value_pow - sgn_pow(*fx, self.p - 1.0) / f_pow
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Zeroes null leaves, clips negatives for positive kinds, rescales to
    /// `‖f‖_{L^p(μ)} = 1`. `None` if nothing is left.
    fn project(&self, mut f: Vec<f64>) -> Option<Vec<f64>> {
        let positive = self.op.is_positive();
        for (v, m) in f.iter_mut().zip(self.op.mu.leaf_mass()) {
            if *m <= 0.0 || (positive && *v < 0.0) {
                *v = 0.0;
            }
        }
        let n = self.op.mu.lp_norm(&f, self.p);
        if !(n > 0.0 && n.is_finite()) {
            return None;
        }
        f.iter_mut().for_each(|v| *v /= n);
        Some(f)
    }

    fn ascend(&self, start: Vec<f64>, cfg: &NormConfig) -> Option<Run> {
        let mut f = self.project(start)?;
        let mut fwd = self.forward(&f);
        let mut value = fwd.value_pow;
        let mut step = 1.0;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iter {
            if value <= 0.0 {
                converged = true;
                break;
            }
            let dir = self.direction(&f, &fwd);
            let mut accepted = None;
            for _ in 0..64 {
                let cand: Vec<f64> = f.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                if let Some(cand) = self.project(cand) {
                    let cf = self.forward(&cand);
                    if cf.value_pow > value {
                        accepted = Some((cand, cf));
                        break;
                    }
                }
                step *= 0.5;
            }
            iterations += 1;
            let Some((cand, cf)) = accepted else {
                converged = true;
                break;
            };
            // improvement of the ratio itself, not of its p-th power
            let rel = (cf.value_pow / value).powf(1.0 / self.p) - 1.0;
            f = cand;
            value = cf.value_pow;
            fwd = cf;
            step *= 2.0;
            if rel < cfg.step_tol {
                converged = true;
                break;
            }
        }
        Some(Run {
            f,
            value: value.powf(1.0 / self.p),
            iterations,
            converged,
        })
    }
}

struct Run {
    f: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

fn random_start(l: Lattice, seed: u64, stream: u64, positive: bool) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..l.leaf_count())
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            if positive {
                v.abs()
            } else {
                v
            }
        })
        .collect()
}

/// Largest ratio `‖Tf‖/‖f‖` found by gradient ascent.
///
/// Starts are the normalized indicators `1_J` of every atom with `μ(J) > 0`
/// (in flat order), then `cfg.starts` random vectors with per-start streams
/// of `cfg.seed`. Ties go to the earliest start.
pub fn norm_lower_bound(op: &OperatorHandle, cfg: &NormConfig) -> Result<NormEstimate> {
    norm_lower_bound_with_starts(op, cfg, &[])
}

/// As [`norm_lower_bound`], with extra starting vectors tried last.
pub fn norm_lower_bound_with_starts(op: &OperatorHandle, cfg: &NormConfig, extra: &[LeafFunction]) -> Result<NormEstimate> {
    let l = op.lattice();
    if op.mu.total() <= 0.0 {
        return Err(Error::NoAdmissibleInput("mu has no mass, so every f has zero norm".into()));
    }
    let positive = op.is_positive();
    let mut starts: Vec<(StartKind, Vec<f64>)> = l
        .atoms()
        .filter(|a| op.mu.mass(*a) > 0.0)
        .map(|a| (StartKind::Indicator(a), LeafFunction::indicator(&l, a).into_values()))
        .collect();
    for k in 0..cfg.starts {
        starts.push((StartKind::Random(k), random_start(l, cfg.seed, k as u64, positive)));
    }
    for (k, f) in extra.iter().enumerate() {
        assert_eq!(f.len(), l.leaf_count());
        starts.push((StartKind::Supplied(k), f.values().to_vec()));
    }
    let engine = Engine::new(op);
    let runs: Vec<Option<Run>> = starts.par_iter().map(|(_, f)| engine.ascend(f.clone(), cfg)).collect();
    let starts_used = runs.iter().filter(|r| r.is_some()).count();
    let mut best: Option<(usize, Run)> = None;
    for (k, run) in runs.into_iter().enumerate() {
        let Some(run) = run else { continue };
        if best.as_ref().is_none_or(|(_, b)| run.value > b.value) {
            best = Some((k, run));
        }
    }
    let (k, run) = best.ok_or_else(|| Error::NoAdmissibleInput("no starting vector has positive norm".into()))?;
    let argmax = LeafFunction::new(run.f)?;
    Ok(NormEstimate {
        value: op.ratio(&argmax),
        argmax,
        start_kind: starts[k].0,
        starts_used,
        iterations: run.iterations,
        converged: run.converged,
    })
}

/// Dense representation used by the oracle: `Tf` for linear kinds, or the
/// sequence `Π_β f` for the vector kind, as a matrix applied to leaf values.
struct DenseOperator {
    rows: Vec<Vec<f64>>,
    /// For the vector kind: for each leaf, the rows (atoms) whose indicator contains it.
    incidence: Option<Vec<Vec<usize>>>,
    q: f64,
}

impl DenseOperator {
    fn new(op: &OperatorHandle, leaves: &[usize]) -> Self {
        let l = op.lattice();
        let columns: Vec<Vec<f64>> = leaves
            .iter()
            .map(|&x| {
                let mut e = vec![0.0; l.leaf_count()];
                e[x] = 1.0;
                let e = LeafFunction::new(e).unwrap();
                match &op.kind {
                    OperatorKind::Paraproduct(b) => paraproduct_apply(b, &e, &op.mu).into_values(),
                    OperatorKind::VectorParaproduct { beta, .. } => vector_paraproduct(beta, &e, &op.mu).values().to_vec(),
                    OperatorKind::Shifted { beta, q } => shifted_apply(beta, &e, *q, &op.mu).into_values(),
                    OperatorKind::TAlpha(a) => t_alpha_apply(a, &e, &op.mu).into_values(),
                }
            })
            .collect();
        let nrows = columns.first().map_or(0, Vec::len);
        let rows = (0..nrows).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        let (incidence, q) = match &op.kind {
            OperatorKind::VectorParaproduct { q, .. } => {
                let inc = (0..l.leaf_count())
                    .map(|x| (1..=l.depth()).map(|d| l.flat(l.ancestor_at(l.leaf(x), d))).collect())
                    .collect();
                (Some(inc), *q)
            }
            _ => (None, 0.0),
        };
        DenseOperator { rows, incidence, q }
    }

    /// `‖Tf‖^p` for coordinates `f` on the selected leaves.
    fn value_pow(&self, f: &[f64], p: f64, nu: &[f64], buf: &mut [f64]) -> f64 {
        for (b, row) in buf.iter_mut().zip(&self.rows) {
            *b = row.iter().zip(f).map(|(a, v)| a * v).sum();
        }
        match &self.incidence {
            None => buf.iter().zip(nu).map(|(y, m)| if *m > 0.0 { fast_pow(y.abs(), p) * m } else { 0.0 }).sum(),
            Some(inc) => inc
                .iter()
                .zip(nu)
                .filter(|(_, m)| **m > 0.0)
                .map(|(atoms, m)| {
                    let g: f64 = atoms.iter().map(|&k| fast_pow(buf[k].abs(), self.q)).sum();
                    fast_pow(g, p / self.q) * m
                })
                .sum(),
        }
    }
}

fn fast_pow(x: f64, e: f64) -> f64 {
    if e == e.round() && e.abs() < 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// Maximum of `‖Tf‖` over a grid on the unit sphere of `L^p(μ)`.
///
/// Leaves of positive `μ`-mass carry coordinates `f_x = ± |z_x|^{2/p} μ_x^{-1/p}`
/// with `z` on the Euclidean unit sphere, so that `‖f‖_{L^p(μ)} = |z| = 1`.
/// `z` runs over hyperspherical angles in `[0, π/2]` with steps of at most
/// `resolution`, endpoints included, times all sign patterns modulo `±1`.
/// Sign patterns are skipped when the norm is attained on `f ≥ 0`.
pub fn grid_oracle_norm(op: &OperatorHandle, resolution: f64) -> Result<f64> {
    let l = op.lattice();
    if l.leaf_count() > ORACLE_MAX_LEAVES {
        return Err(Error::TooManyLeaves {
            leaves: l.leaf_count(),
            max: ORACLE_MAX_LEAVES,
        });
    }
    if !(resolution > 0.0 && resolution <= 1e-2) {
        return Err(Error::InvalidParameter(format!(
            "grid resolution must lie in (0, 0.01], got {resolution}"
        )));
    }
    let mu = op.mu.leaf_mass();
    let leaves: Vec<usize> = (0..l.leaf_count()).filter(|&x| mu[x] > 0.0).collect();
    let k = leaves.len();
    if k == 0 {
        return Err(Error::NoAdmissibleInput("mu has no mass, so every f has zero norm".into()));
    }
    let p = op.p;
    let dense = DenseOperator::new(op, &leaves);
    let scale: Vec<f64> = leaves.iter().map(|&x| mu[x].powf(-1.0 / p)).collect();
    let nu = op.nu.leaf_mass();
    let nrows = dense.rows.len();

    let steps = (std::f64::consts::FRAC_PI_2 / resolution).ceil() as usize;
    // |cos θ|^{2/p} and |sin θ|^{2/p} on the grid
    let e = 2.0 / p;
    let grid: Vec<(f64, f64)> = (0..=steps)
        .map(|i| {
            let t = std::f64::consts::FRAC_PI_2 * i as f64 / steps as f64;
            (t.cos().abs().powf(e), t.sin().abs().powf(e))
        })
        .collect();
    let sign_patterns: Vec<Vec<f64>> = if op.attained_on_nonnegative() {
        vec![vec![1.0; k]]
    } else {
        (0..1usize << (k - 1))
            .map(|bits| {
                (0..k)
                    .map(|j| if j > 0 && bits >> (j - 1) & 1 == 1 { -1.0 } else { 1.0 })
                    .collect()
            })
            .collect()
    };
    let angles = k - 1;
    if angles == 0 {
        let mut buf = vec![0.0; nrows];
        return Ok(dense.value_pow(&scale, p, nu, &mut buf).powf(1.0 / p));
    }

    let best = (0..=steps)
        .into_par_iter()
        .map(|outer| {
            let mut buf = vec![0.0; nrows];
            let mut f = vec![0.0; k];
            let mut idx = vec![0usize; angles];
            idx[0] = outer;
            let mut best: f64 = 0.0;
            loop {
                // z_1 = cos θ_1, z_j = sin θ_1 ⋯ sin θ_{j-1} cos θ_j, z_k = Π sin θ_j
                let mut prod = 1.0;
                for j in 0..angles {
                    let (c, s) = grid[idx[j]];
                    f[j] = prod * c;
                    prod *= s;
                }
                f[angles] = prod;
                for signs in &sign_patterns {
                    let g: Vec<f64> = f.iter().zip(signs).zip(&scale).map(|((v, s), c)| v * s * c).collect();
                    best = best.max(dense.value_pow(&g, p, nu, &mut buf));
                }
                // advance the inner angles like an odometer
                let mut j = angles - 1;
                loop {
                    if j == 0 {
                        return best;
                    }
                    idx[j] += 1;
                    if idx[j] <= steps {
                        break;
                    }
                    idx[j] = 0;
                    j -= 1;
                }
            }
        })
        .reduce(|| 0.0, f64::max);
    Ok(best.powf(1.0 / p))
}

/// Where the norms in an [`EquivalenceReport`] come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormSource {
    Optimized(NormConfig),
    /// Grid oracle at the given resolution; lattices with at most 4 leaves.
    Grid(f64),
}

/// Norms of `Π_β : L^p(μ) → ġ_p^q(ν)` and `Π̃_β : L^r(μ) → L^r(ν)`,
/// `r = p/q`, with the testing constants of `Π_β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub p: f64,
    pub q: f64,
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub b_star: f64,
    pub checks: Vec<Inequality>,
}

impl EquivalenceReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Compares `A₁^q ≤ A₂ ≤ 4r' A₁^q`, `B ≤ A₁` and `B* ≤ 4r' A₁^q`.
///
/// `β` is first restricted to the support of `μ`; this leaves both
/// operators unchanged and keeps the testing constants finite. `tol` is
/// the additive tolerance of every check.
pub fn equivalence_report(beta: &BetaSequence, p: f64, q: f64, mu: &Measure, nu: &Measure, source: NormSource, tol: f64) -> Result<EquivalenceReport> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    if p <= q {
        return Err(Error::InvalidExponent(format!("need p > q, got p = {p}, q = {q}")));
    }
    let r = p / q;
    let beta = beta.restricted_to_support(mu);
    let op1 = OperatorHandle::vector_paraproduct(beta.clone(), p, q, mu, nu)?;
    let op2 = OperatorHandle::shifted(beta.clone(), q, r, mu, nu)?;
    let (a1, a2) = match source {
        NormSource::Optimized(cfg) => (norm_lower_bound(&op1, &cfg)?.value, norm_lower_bound(&op2, &cfg)?.value),
        NormSource::Grid(res) => (grid_oracle_norm(&op1, res)?, grid_oracle_norm(&op2, res)?),
    };
    let b = direct_testing(&beta, p, q, mu, nu)?;
    let b_star = adjoint_testing(&beta, p, q, mu, nu)?;
    let c = 4.0 * conjugate(r);
    let a1q = a1.powf(q);
    let checks = vec![
        Inequality::new("A1^q <= A2", a1q, a2, tol),
        Inequality::new("A2 <= 4r' A1^q", a2, c * a1q, tol),
        Inequality::new("B <= A1", b, a1, tol),
        Inequality::new("B* <= 4r' A1^q", b_star, c * a1q, tol),
    ];
    Ok(EquivalenceReport {
        p,
        q,
        a1,
        a2,
        b,
        b_star,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_random_instance, GeneratorSpec};
    use approx::assert_relative_eq;

    fn uniform(m: usize, n: usize) -> Measure {
        Measure::uniform(Lattice::new(m, n).unwrap(), 1.0).unwrap()
    }

    fn root_beta(l: Lattice, row: &[f64]) -> BetaSequence {
        let mut b = BetaSequence::zeros(l);
        b.set_row(AtomId::ROOT, row).unwrap();
        b
    }

    fn quick() -> NormConfig {
        NormConfig {
            starts: 8,
            max_iter: 300,
            ..NormConfig::default()
        }
    }

    fn handles(seed: u64, spec: GeneratorSpec) -> Vec<OperatorHandle> {
        let inst = generate_random_instance(spec, seed).unwrap();
        let (mu, nu) = (&inst.mu, &inst.nu);
        let beta = inst.beta.restricted_to_support(mu);
        vec![
            OperatorHandle::paraproduct(Symbol::project(&beta, nu), 2.5, mu, nu).unwrap(),
            OperatorHandle::vector_paraproduct(beta.clone(), 3.0, 2.0, mu, nu).unwrap(),
            OperatorHandle::vector_paraproduct(beta.clone(), 1.5, 2.5, mu, nu).unwrap(),
            OperatorHandle::shifted(beta.clone(), 2.0, 1.7, mu, nu).unwrap(),
            OperatorHandle::t_alpha(AlphaSequence::from_beta(&beta, 1.5, mu), 3.0, mu, nu).unwrap(),
        ]
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = GeneratorSpec { arity: 3, depth: 2, sparsity: 0.0 };
        for seed in 0..4 {
            for op in handles(seed, spec) {
                let engine = Engine::new(&op);
                let f = engine
                    .project(random_start(op.lattice(), seed, 99, op.is_positive()))
                    .unwrap();
                let fwd = engine.forward(&f);
                let dir = engine.direction(&f, &fwd);
                let log_ratio = |g: &[f64]| op.ratio(&LeafFunction::new(g.to_vec()).unwrap()).ln();
                for x in 0..f.len() {
                    let h = 1e-6 * f[x].abs().max(1e-3);
                    let mut up = f.clone();
                    let mut dn = f.clone();
                    up[x] += h;
                    dn[x] -= h;
                    let fd = (log_ratio(&up) - log_ratio(&dn)) / (2.0 * h);
                    let an = dir[x] * op.mu().leaf_mass()[x];
                    assert!(
                        (fd - an).abs() <= 1e-5 * an.abs().max(1e-3),
                        "{:?} leaf {x}: fd {fd} analytic {an}",
                        op.output()
                    );
                }
            }
        }
    }

    #[test]
    fn haar_paraproduct_has_norm_one() {
        let u = uniform(2, 1);
        let b = Symbol::new(root_beta(u.lattice(), &[1.0, -1.0]), &u).unwrap();
        let op = OperatorHandle::paraproduct(b, 2.0, &u, &u).unwrap();
        let est = norm_lower_bound(&op, &NormConfig::default()).unwrap();
        assert_relative_eq!(est.value, 1.0, max_relative = 1e-12);
        assert!((grid_oracle_norm(&op, 1e-2).unwrap() - 1.0).abs() <= 1e-2);
    }

    #[test]
    fn zero_operator_and_errors() {
        let u = uniform(2, 2);
        let op = OperatorHandle::vector_paraproduct(BetaSequence::zeros(u.lattice()), 2.0, 2.0, &u, &u).unwrap();
        assert_eq!(norm_lower_bound(&op, &quick()).unwrap().value, 0.0);
        assert_eq!(grid_oracle_norm(&op, 1e-2).unwrap(), 0.0);

        let null = Measure::new(u.lattice(), vec![0.0; 4]).unwrap();
        let op = OperatorHandle::vector_paraproduct(BetaSequence::zeros(u.lattice()), 2.0, 2.0, &null, &u).unwrap();
        assert!(matches!(norm_lower_bound(&op, &quick()), Err(Error::NoAdmissibleInput(_))));

        let big = uniform(2, 3);
        let op = OperatorHandle::vector_paraproduct(BetaSequence::zeros(big.lattice()), 2.0, 2.0, &big, &big).unwrap();
        assert!(matches!(grid_oracle_norm(&op, 1e-2), Err(Error::TooManyLeaves { .. })));
        assert!(matches!(
            equivalence_report(&BetaSequence::zeros(u.lattice()), 2.0, 2.0, &u, &u, NormSource::Grid(1e-2), 0.0),
            Err(Error::InvalidExponent(_))
        ));
    }

    #[test]
    fn t_alpha_matches_oracle() {
        let u = uniform(2, 1);
        let mut a = AlphaSequence::zeros(u.lattice());
        a.set(AtomId::ROOT, 0, 1.0).unwrap();
        let op = OperatorHandle::t_alpha(a, 2.0, &u, &u).unwrap();
        let est = norm_lower_bound(&op, &NormConfig::default()).unwrap();
        let oracle = grid_oracle_norm(&op, 1e-2).unwrap();
        // T f = ∫ f dμ on the left leaf; ‖Tf‖₂ = √½ |∫ f dμ| ≤ √½ ‖f‖₂, equality at constants
        assert_relative_eq!(est.value, 0.5f64.sqrt(), max_relative = 1e-9);
        assert!((est.value - oracle).abs() <= 1e-3);
        assert!(est.argmax.is_nonnegative());
    }

    #[test]
    fn oracle_is_homogeneous() {
        let inst = generate_random_instance(GeneratorSpec { arity: 2, depth: 2, sparsity: 0.0 }, 5).unwrap();
        let beta = inst.beta;
        let op1 = OperatorHandle::vector_paraproduct(beta.clone(), 3.0, 2.0, &inst.mu, &inst.nu).unwrap();
        let op2 = OperatorHandle::vector_paraproduct(beta.scaled(2.0), 3.0, 2.0, &inst.mu, &inst.nu).unwrap();
        let a = grid_oracle_norm(&op1, 1e-2).unwrap();
        let b = grid_oracle_norm(&op2, 1e-2).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-12);
    }

    #[test]
    fn identity_like_operator_has_norm_one() {
        // s_I = ⟨f⟩_{Î} on the leaves of a depth-1 tree, μ = ν, q = p = 2:
        // ‖Π f‖ = |⟨f⟩_root| ≤ ‖f‖₂ with equality at constants
        let u = uniform(3, 1);
        let beta = root_beta(u.lattice(), &[1.0, 1.0, 1.0]);
        let op = OperatorHandle::vector_paraproduct(beta, 2.0, 2.0, &u, &u).unwrap();
        assert!((grid_oracle_norm(&op, 1e-2).unwrap() - 1.0).abs() <= 1e-2);
        assert_relative_eq!(norm_lower_bound(&op, &quick()).unwrap().value, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn estimates_are_sound_and_agree_with_oracle() {
        let specs = [
            GeneratorSpec { arity: 2, depth: 1, sparsity: 0.2 },
            GeneratorSpec { arity: 3, depth: 1, sparsity: 0.2 },
            GeneratorSpec { arity: 2, depth: 2, sparsity: 0.2 },
        ];
        for spec in specs {
            for seed in 0..3 {
                for op in handles(seed, spec) {
                    let est = norm_lower_bound(&op, &quick()).unwrap();
                    // independent re-evaluation of the reported ratio
                    let direct = op.output_norm(&est.argmax) / op.mu().lp_norm(&est.argmax, op.p());
                    assert_relative_eq!(est.value, direct, max_relative = 1e-12);
                    if op.is_positive() {
                        assert!(est.argmax.is_nonnegative());
                    }
                    let oracle = grid_oracle_norm(&op, 1e-2).unwrap();
                    assert!(
                        (est.value - oracle).abs() <= 2e-2,
                        "{:?}: estimate {} oracle {}",
                        op.output(),
                        est.value,
                        oracle
                    );
                }
            }
        }
    }

    #[test]
    fn indicator_starts_dominate_direct_testing() {
        for seed in 0..6 {
            let inst = generate_random_instance(GeneratorSpec { arity: 2, depth: 3, sparsity: 0.2 }, seed).unwrap();
            let beta = inst.beta.restricted_to_support(&inst.mu);
            let (p, q) = (3.0, 2.0);
            let op = OperatorHandle::vector_paraproduct(beta.clone(), p, q, &inst.mu, &inst.nu).unwrap();
            let cfg = NormConfig { starts: 0, max_iter: 0, ..NormConfig::default() };
            let Ok(est) = norm_lower_bound(&op, &cfg) else { continue };
            let b = direct_testing(&beta, p, q, &inst.mu, &inst.nu).unwrap();
            assert!(b <= est.value * (1.0 + 1e-9), "B {b} > A {}", est.value);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let op = handles(11, GeneratorSpec { arity: 2, depth: 3, sparsity: 0.2 }).remove(1);
        let a = norm_lower_bound(&op, &quick()).unwrap();
        let b = norm_lower_bound(&op, &quick()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equivalence_on_haar_instance() {
        let u = uniform(2, 1);
        let beta = root_beta(u.lattice(), &[1.0, -1.0]);
        let rep = equivalence_report(&beta, 4.0, 2.0, &u, &u, NormSource::Grid(1e-2), 2e-2).unwrap();
        assert!(rep.pass(), "{rep:?}");
        let zero = equivalence_report(&BetaSequence::zeros(u.lattice()), 4.0, 2.0, &u, &u, NormSource::Grid(1e-2), 0.0).unwrap();
        assert_eq!((zero.a1, zero.a2, zero.b, zero.b_star), (0.0, 0.0, 0.0, 0.0));
        assert!(zero.pass());
    }
}
