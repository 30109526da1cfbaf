//! Instance files and seeded random instances.
//!
//! File layout:
//! `{"arity": m, "depth": N, "mu": [..], "nu": [..], "beta": {"d,i,k": v}, "f": [..]}`
//! where `"d,i"` is an internal atom and `k` a child slot. Missing `beta`
//! entries are 0; `f` is optional. Values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lattice::{AtomId, Lattice};
use crate::measure::{LeafFunction, Measure};
use crate::paraproduct::BetaSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub lattice: Lattice,
    pub mu: Measure,
    pub nu: Measure,
    pub beta: BetaSequence,
    pub f: Option<LeafFunction>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    arity: usize,
    depth: usize,
    mu: Vec<f64>,
    nu: Vec<f64>,
    #[serde(default, serialize_with = "serialize_in_order")]
    beta: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f: Option<Vec<f64>>,
}

// lexicographic key order would put "1,10,0" before "1,2,0"
fn serialize_in_order<S: Serializer>(map: &BTreeMap<String, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut entries: Vec<(Vec<usize>, &String, &f64)> = map
        .iter()
        .map(|(k, v)| (k.split(',').filter_map(|t| t.trim().parse().ok()).collect(), k, v))
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    s.collect_map(entries.into_iter().map(|(_, k, v)| (k, v)))
}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InstanceField {
        field: field.into(),
        message: message.into(),
    }
}

fn parse_beta_key(l: &Lattice, key: &str) -> Result<(AtomId, usize)> {
    let field = format!("beta.\"{key}\"");
    let parts: Vec<&str> = key.split(',').map(str::trim).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| field_error(&field, "key must be \"depth,index,slot\" with nonnegative integers"))?;
    if nums.len() != 3 {
        return Err(field_error(&field, "key must have exactly three components"));
    }
    let atom = AtomId::new(nums[0], nums[1]);
    if !l.contains(atom) || l.is_leaf(atom) {
        return Err(field_error(&field, format!("({atom}) is not an internal atom")));
    }
    if nums[2] >= l.arity() {
        return Err(field_error(&field, format!("slot {} exceeds arity {}", nums[2], l.arity())));
    }
    Ok((atom, nums[2]))
}

fn leaf_vector(l: &Lattice, name: &str, v: Vec<f64>) -> Result<Vec<f64>> {
    if v.len() != l.leaf_count() {
        return Err(field_error(
            name,
            format!("expected {} leaf values, found {}", l.leaf_count(), v.len()),
        ));
    }
    Ok(v)
}

fn leaf_measure(l: Lattice, name: &str, v: Vec<f64>) -> Result<Measure> {
    let v = leaf_vector(&l, name, v)?;
    if let Some(i) = v.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(field_error(format!("{name}[{i}]"), format!("mass {} is not finite and nonnegative", v[i])));
    }
    Measure::new(l, v)
}

impl Instance {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: InstanceFile = serde_json::from_str(text)?;
        let lattice = Lattice::new(raw.arity, raw.depth)
            .map_err(|e| field_error("arity/depth", e.to_string()))?;
        let mu = leaf_measure(lattice, "mu", raw.mu)?;
        let nu = leaf_measure(lattice, "nu", raw.nu)?;
        let mut beta = BetaSequence::zeros(lattice);
        for (key, v) in &raw.beta {
            let (atom, slot) = parse_beta_key(&lattice, key)?;
            beta.set(atom, slot, *v)
                .map_err(|e| field_error(format!("beta.\"{key}\""), e.to_string()))?;
        }
        let f = match raw.f {
            Some(v) => Some(LeafFunction::new(leaf_vector(&lattice, "f", v)?).map_err(|e| field_error("f", e.to_string()))?),
            None => None,
        };
        Ok(Instance { lattice, mu, nu, beta, f })
    }

    pub fn to_json_string(&self) -> Result<String> {
        let l = self.lattice;
        let mut beta = BTreeMap::new();
        for atom in l.internal_atoms() {
            for (k, v) in self.beta.row(atom).iter().enumerate() {
                // -0.0 is kept so that the round trip is bit-exact
                if v.to_bits() != 0 {
                    beta.insert(format!("{},{},{}", atom.depth, atom.index, k), *v);
                }
            }
        }
        let raw = InstanceFile {
            arity: l.arity(),
            depth: l.depth(),
            mu: self.mu.leaf_mass().to_vec(),
            nu: self.nu.leaf_mass().to_vec(),
            beta,
            f: self.f.as_ref().map(|f| f.values().to_vec()),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }

    /// `f`, or the constant 1 when the file has none.
    pub fn function(&self) -> LeafFunction {
        self.f.clone().unwrap_or_else(|| LeafFunction::constant(&self.lattice, 1.0))
    }
}

/// Shape and sparsity of generated instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub arity: usize,
    pub depth: usize,
    /// Probability that a leaf mass is set to 0.
    pub sparsity: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            arity: 2,
            depth: 3,
            sparsity: 0.2,
        }
    }
}

/// Masses uniform on `(0, 1]`, each zeroed with probability `sparsity`;
/// `β` and `f` standard normal. Draw order: `μ`, `ν`, `β` (flat order), `f`.
pub fn generate_random_instance(spec: GeneratorSpec, seed: u64) -> Result<Instance> {
    if !(0.0..=1.0).contains(&spec.sparsity) {
        return Err(Error::InvalidParameter(format!(
            "sparsity must lie in [0, 1], got {}",
            spec.sparsity
        )));
    }
    let lattice = Lattice::new(spec.arity, spec.depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masses = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..lattice.leaf_count())
            .map(|_| {
                let m = 1.0 - rng.random::<f64>();
                if rng.random_bool(spec.sparsity) {
                    0.0
                } else {
                    m
                }
            })
            .collect()
    };
    let mu = Measure::new(lattice, masses(&mut rng))?;
    let nu = Measure::new(lattice, masses(&mut rng))?;
    let mut edges = vec![0.0; lattice.atom_count()];
    for e in edges.iter_mut().skip(1) {
        *e = rng.sample(StandardNormal);
    }
    let beta = BetaSequence::from_edges(lattice, edges)?;
    let f = (0..lattice.leaf_count()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Instance {
        lattice,
        mu,
        nu,
        beta,
        f: Some(LeafFunction::new(f)?),
    })
}
